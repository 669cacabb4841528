//! Robust LQG synthesis on the normalized factors of the unstable preset model
//! over a few uncertainty radii, with the robustness certificate and samples
//! from the uncertainty ball.

use robust_lqg::evaluation::optimal_lqg;
use robust_lqg::factorization::{is_internally_stabilizing, lqr_gain, normalized_left_dcf, YoulaParam};
use robust_lqg::presets::preset;
use robust_lqg::sdp::InteriorPoint;
use robust_lqg::synthesis::{solve_outer, suboptimality_bound, SynthesisConfig};
use robust_lqg::uncertainty::{is_gamma_robust, lqg_cost_direct, perturbed_plant, sample_perturbation, UncertainModel};

fn main() -> robust_lqg::Result<()> {
    let g = preset("scalar-unstable")?.nominal;
    let dcf = normalized_left_dcf(&g, &lqr_gain(&g)?)?;
    let opt = optimal_lqg(&g)?.cost;
    println!("optimal LQG cost of the model: {opt:.5}");
    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "gamma", "delta*", "cost", "gap", "bound");
    for gamma in [0.01, 0.05, 0.1, 0.2] {
        let cfg = SynthesisConfig { gamma, fir_len: 10, delta_grid: 8, refine_iters: 8, trunc_tol: 1e-4, ..Default::default() };
        let res = solve_outer(&dcf, &cfg, &InteriorPoint::default())?;
        let cost = lqg_cost_direct(&g, &res.controller)?;
        let bound = suboptimality_bound(&res, gamma, res.nominal_norm)?;
        println!(
            "{gamma:>6} {:>9.4} {cost:>9.5} {:>9.2e} {bound:>9.3}",
            res.delta_star,
            (cost * cost - opt * opt) / (opt * opt)
        );

        assert!(is_gamma_robust(&dcf, &YoulaParam::Fir(res.q_star.clone()), gamma)?.robust);
        let ball = UncertainModel { nominal: dcf.clone(), gamma };
        for seed in 0..20 {
            let plant = perturbed_plant(&ball, &sample_perturbation(1, 1, gamma, 2, seed)?)?;
            assert!(is_internally_stabilizing(&plant, &res.controller)?);
        }
    }
    Ok(())
}
