//! The trace-parameterized bounded-real LMI for FIR filters: the smallest
//! feasible bound is the H∞ norm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use robust_lqg::linalg::Mat;
use robust_lqg::lti::FirSeries;
use robust_lqg::norms::hinf_norm_fir;
use robust_lqg::sdp::InteriorPoint;
use robust_lqg::synthesis::{lmi_bisect, lmi_feasible, lmi_min_bound};

fn main() -> robust_lqg::Result<()> {
    let backend = InteriorPoint::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let coeffs = (0..8)
        .map(|_| Mat::from_fn(2, 2, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    let f = FirSeries::new(coeffs)?;

    let grid = hinf_norm_fir(&f, 1e-10).value;
    let direct = lmi_min_bound(&f, &backend)?;
    let bisected = lmi_bisect(&f, 1e-6, &backend)?;
    println!("frequency-domain H∞: {grid:.8}");
    println!("LMI with the bound as a variable: {direct:.8}");
    println!("LMI bisection: {bisected:.8}");
    for scale in [0.99, 1.01] {
        println!("feasible at {scale} x norm: {}", lmi_feasible(&f, scale * grid, &backend)?);
    }
    Ok(())
}
