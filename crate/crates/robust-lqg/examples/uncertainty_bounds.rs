//! A Youla controller on plants inside a coprime-factor ball: the LQG cost
//! computed through the factors and directly, against the upper bound.

use robust_lqg::factorization::{default_dcf, youla_controller, YoulaParam};
use robust_lqg::linalg::Mat;
use robust_lqg::lti::FirSeries;
use robust_lqg::norms::{h2_norm, hinf_norm, DEFAULT_TOL};
use robust_lqg::presets::preset;
use robust_lqg::uncertainty::{
    cost_upper_bound, factor_map, is_gamma_robust, lqg_cost, lqg_cost_direct, nominal_norm, perturbed_plant,
    sample_perturbation, UncertainModel,
};

fn main() -> robust_lqg::Result<()> {
    let model = preset("scalar-unstable")?.nominal;
    let dcf = default_dcf(&model)?;
    let q = YoulaParam::Fir(FirSeries::new(vec![Mat::from_element(1, 1, -0.1), Mat::from_element(1, 1, 0.05)])?);
    let map = factor_map(&dcf, &q)?;
    let (fnorm, fh2) = (hinf_norm(&map, DEFAULT_TOL)?.value, h2_norm(&map)?.value);
    let gamma = 0.5 / fnorm;
    let check = is_gamma_robust(&dcf, &q, gamma)?;
    println!("γ = {gamma:.4}, ‖[Ỹ_Q; X̃_Q]‖∞ = {fnorm:.4}, robust: {}", check.robust);

    let bound = cost_upper_bound(gamma, fnorm, fh2, nominal_norm(&dcf)?);
    let um = UncertainModel { nominal: dcf.clone(), gamma };
    let k = youla_controller(&dcf, &q)?.controller;
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let delta = sample_perturbation(1, 1, gamma, 2, seed)?;
        let factored = lqg_cost(&um, &delta, &q)?;
        let direct = lqg_cost_direct(&perturbed_plant(&um, &delta)?, &k)?;
        assert!((factored - direct).abs() <= 1e-6 * direct);
        worst = worst.max(direct);
    }
    println!("worst sampled cost {worst:.4} under the bound {bound:.4}");
    Ok(())
}
