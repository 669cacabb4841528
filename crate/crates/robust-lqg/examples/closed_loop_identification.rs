//! Closed-loop identification of the dual-Youla parameter: one experiment on
//! the unstable preset, the Hankel-size rule, least squares, Ho-Kalman, and the
//! uncertainty radius on the refreshed factors.
//!
//! ```bash
//! cargo run --release --example closed_loop_identification -- 8192
//! ```

use robust_lqg::factorization::{default_dcf, dual_youla_parameter};
use robust_lqg::presets::preset;
use robust_lqg::sysid::{
    choose_order, hankel_error, hankel_error_bound, model_from_r, ols_hankel, realize, run_experiment,
    uncertainty_radius, IdConfig,
};

fn main() -> robust_lqg::Result<()> {
    let horizon = std::env::args().nth(1).map_or(4096, |s| s.parse().expect("horizon"));
    let p = preset("scalar-unstable")?;
    let dcf = default_dcf(&p.nominal)?;
    let truth = dual_youla_parameter(&dcf, &p.plant)?;
    let cfg = IdConfig { horizon, noise_scale: 0.5, c_const: 0.0174, ..Default::default() };

    let data = run_experiment(&p.plant, &dcf, horizon, cfg.noise_scale, 3)?;
    let choice = choose_order(&data, &dcf, &cfg)?;
    let (input, output) = data.regression_pair(&dcf, cfg.regressor)?;
    let h = ols_hankel(&input, &output, choice.d_hat, horizon)?;
    let bound = hankel_error_bound(&cfg, choice.d_hat, 1, 1);
    let real = realize(&h, bound, &cfg)?;
    println!("T = {horizon}, Hankel size {}, realized order {}", choice.d_hat, real.order);
    println!("leading singular values: {:?}", &real.singular_values[..4]);
    println!("Hankel error {:.4} against the bound {bound:.4}", hankel_error(&h, &truth));

    let poles = |s: &robust_lqg::StateSpace| -> robust_lqg::Result<Vec<String>> {
        Ok(s.poles()?.iter().map(|z| format!("{:.3}", z.re)).collect())
    };
    println!("true R poles {:?}, estimate {:?}", poles(&truth)?, poles(&real.system)?);

    let gamma = uncertainty_radius(&dcf, bound)?;
    let model = model_from_r(&dcf, &real)?;
    let g = model.plant()?;
    println!("radius on the refreshed factors: {gamma:.4}");
    println!("identified plant pole {:?} (true 1.5)", poles(&g)?);
    Ok(())
}
