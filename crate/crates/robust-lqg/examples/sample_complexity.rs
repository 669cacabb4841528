//! Horizon sweep on the unstable preset: median radius, Hankel error and
//! relative gap per horizon and their log-log slopes. Seeds and horizons are
//! kept small here; the acceptance suite runs the full sweep.
//!
//! ```bash
//! cargo run --release --example sample_complexity -- 6
//! ```

use std::time::Instant;

use robust_lqg::evaluation::sweep;
use robust_lqg::factorization::{default_dcf, dual_youla_parameter};
use robust_lqg::presets::preset;
use robust_lqg::sdp::InteriorPoint;
use robust_lqg::synthesis::SynthesisConfig;
use robust_lqg::sysid::IdConfig;

fn main() -> robust_lqg::Result<()> {
    let n_seeds: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed count"));
    let p = preset("scalar-unstable")?;
    let dcf = default_dcf(&p.nominal)?;
    let truth = dual_youla_parameter(&dcf, &p.plant)?;
    let id = IdConfig { noise_scale: 0.5, c_const: 0.0174, ..Default::default() };
    let synth = SynthesisConfig { fir_len: 8, delta_grid: 6, refine_iters: 8, trunc_tol: 1e-3, ..Default::default() };
    let horizons: Vec<usize> = (10..=14).map(|k| 1 << k).collect();
    let seeds: Vec<u64> = (0..n_seeds).collect();

    let start = Instant::now();
    let rep = sweep(&p.plant, &dcf, &horizons, &seeds, &id, &synth, Some(&truth), &InteriorPoint::default())?;
    println!("{:>6} {:>4} {:>10} {:>10} {:>10}", "T", "ok", "gamma", "hankel", "gap");
    for s in &rep.summaries {
        let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.4e}"));
        println!("{:>6} {:>4} {:>10} {:>10} {:>10}", s.horizon, s.ok, f(s.median_gamma), f(s.median_hankel_error), f(s.median_gap));
    }
    println!(
        "slopes: gamma {:.3?}, hankel {:.3?}, gap {:.3?} ({} runs in {:.0} s)",
        rep.gamma_slope,
        rep.hankel_slope,
        rep.gap_slope,
        rep.records.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
