//! Identification, robust synthesis and evaluation on the true plant, for each
//! preset, with the calibrated error-bound constant.

use robust_lqg::evaluation::{calibrate_c, run_endtoend};
use robust_lqg::factorization::{default_dcf, dual_youla_parameter};
use robust_lqg::presets::{preset, PRESET_NAMES};
use robust_lqg::sdp::InteriorPoint;
use robust_lqg::synthesis::SynthesisConfig;
use robust_lqg::sysid::IdConfig;

fn main() -> robust_lqg::Result<()> {
    let synth = SynthesisConfig { fir_len: 8, delta_grid: 6, refine_iters: 8, trunc_tol: 1e-3, ..Default::default() };
    for name in PRESET_NAMES {
        let p = preset(name)?;
        let dcf = default_dcf(&p.nominal)?;
        let truth = dual_youla_parameter(&dcf, &p.plant)?;
        let pilot = IdConfig { horizon: 2048, noise_scale: 0.5, ..Default::default() };
        let seeds: Vec<u64> = (100..110).collect();
        let c = calibrate_c(&p.plant, &dcf, &truth, &pilot, &seeds, 0.9)?;
        let id = IdConfig { horizon: 8192, c_const: c, ..pilot };
        let run = run_endtoend(&p.plant, &dcf, &id, &synth, 1, Some(&truth), &InteriorPoint::default())?;
        let r = &run.record;
        println!("{name}: c = {c:.4}, status {:?}", r.status);
        println!(
            "  gamma {:.4} -> {:.4} on normalized factors, delta* {:?}",
            r.gamma_est.unwrap_or(f64::NAN),
            r.gamma_synth.unwrap_or(f64::NAN),
            r.delta_star
        );
        println!(
            "  cost {:.5} vs optimal {:.5}: gap {:.3e}, bound {:.3e}",
            r.cost_learned.unwrap_or(f64::NAN),
            r.cost_opt,
            r.relative_gap.unwrap_or(f64::NAN),
            r.bound.unwrap_or(f64::NAN)
        );
        if let Some(m) = &r.message {
            println!("  {m}");
        }
    }
    Ok(())
}
