//! Doubly coprime factorization of an unstable plant, the Bezout residual, and
//! the two parameterizations built on it: controllers from a Youla parameter and
//! plants from a dual-Youla parameter.
//!
//! ```bash
//! cargo run --release --example coprime_factors
//! ```

use robust_lqg::factorization::{
    default_dcf, dual_youla_parameter, dual_youla_plant, is_internally_stabilizing, verify_bezout, youla_controller,
    YoulaParam,
};
use robust_lqg::lti::FirSeries;
use robust_lqg::presets::preset;

fn main() -> robust_lqg::Result<()> {
    let p = preset("mimo-3x2")?;
    let dcf = default_dcf(&p.nominal)?;
    println!("Bezout residual: {:.2e}", verify_bezout(&dcf)?);

    let k = dcf.central_controller()?;
    println!("central controller stabilizes the model: {}", is_internally_stabilizing(&p.nominal, &k)?);
    println!("... and the true plant: {}", is_internally_stabilizing(&p.plant, &k)?);

    // any stable Q gives a stabilizing controller
    let q = FirSeries::new(vec![
        robust_lqg::linalg::Mat::from_row_slice(2, 2, &[0.2, -0.1, 0.0, 0.3]),
        robust_lqg::linalg::Mat::from_row_slice(2, 2, &[0.1, 0.0, 0.05, -0.2]),
    ])?;
    let kq = youla_controller(&dcf, &YoulaParam::Fir(q))?;
    println!("Youla controller with a 2-tap Q stabilizes: {}", is_internally_stabilizing(&p.nominal, &kq.controller)?);

    // the true plant is the model's dual-Youla image of a stable R
    let r = dual_youla_parameter(&dcf, &p.plant)?;
    let rebuilt = dual_youla_plant(&dcf, &r)?.plant;
    let grid = robust_lqg::lti::frequency_grid(64);
    println!("R has {} states, spectral radius {:.3}", r.nx(), r.spectral_radius()?);
    println!("rebuilt plant vs true plant on the grid: {:.2e}", rebuilt.grid_distance(&p.plant, &grid)?);
    Ok(())
}
