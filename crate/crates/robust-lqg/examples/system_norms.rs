//! H2 and H∞ norms of a discrete-time system, checked against the impulse
//! response and a dense frequency sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_lqg::linalg::sigma_max_c;
use robust_lqg::lti::random_stable;
use robust_lqg::norms::{h2_norm, hinf_norm, DEFAULT_TOL};

fn main() -> robust_lqg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_stable(&mut rng, 4, 2, 3, 0.9);

    let h2 = h2_norm(&g)?.value;
    let markov = g.markov_params(400);
    println!("H2 from the Gramian: {h2:.10}");
    println!("H2 from 400 Markov parameters: {:.10}", markov.h2_norm());

    let hinf = hinf_norm(&g, DEFAULT_TOL)?;
    let sweep = (0..20_000)
        .map(|k| std::f64::consts::PI * k as f64 / 19_999.0)
        .map(|w| g.freq_response(w).map(|r| sigma_max_c(&r)))
        .collect::<robust_lqg::Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    println!("H∞ by bisection: [{:.10}, {:.10}]", hinf.lower(), hinf.upper());
    println!("H∞ peak over 20000 frequencies: {sweep:.10}");
    Ok(())
}
