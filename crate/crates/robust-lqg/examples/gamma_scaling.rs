//! How the relative-gap bound of the robust controller grows with the
//! uncertainty radius, and how much of it survives as γ → 0.

use robust_lqg::evaluation::gamma_sweep;
use robust_lqg::factorization::{lqr_gain, normalized_left_dcf};
use robust_lqg::presets::preset;
use robust_lqg::sdp::InteriorPoint;
use robust_lqg::synthesis::SynthesisConfig;

fn main() -> robust_lqg::Result<()> {
    let g = preset("scalar-unstable")?.plant;
    let dcf = normalized_left_dcf(&g, &lqr_gain(&g)?)?;
    let cfg = SynthesisConfig { fir_len: 8, delta_grid: 6, refine_iters: 8, trunc_tol: 1e-3, ..Default::default() };
    let gammas: Vec<f64> = (0..6).map(|k| 0.01 * 10f64.powf(k as f64 / 5.0)).collect();
    let sw = gamma_sweep(&dcf, &gammas, &cfg, &InteriorPoint::default())?;
    println!("{:>8} {:>9} {:>10} {:>10}", "gamma", "delta*", "bound", "excess");
    for p in &sw.points {
        println!("{:>8.4} {:>9.4} {:>10.4} {:>10.4}", p.gamma, p.delta_star, p.bound, p.excess);
    }
    println!("log-log slope of the bound: {:.3?}", sw.bound_slope);
    println!("log-log slope of the excess over the γ → 0 limit: {:.3?}", sw.excess_slope);
    Ok(())
}
