//! Building, overriding and validating a run configuration in code, then
//! running the identification stage the way `robust-lqg identify` does.

use robust_lqg::cli::config::{ControllerSpec, PlantSource};
use robust_lqg::cli::{cmd_identify, RunConfig};
use robust_lqg::StateSpace;

fn main() -> robust_lqg::Result<()> {
    let mut cfg = RunConfig::for_preset("scalar-stable");
    cfg.plant = PlantSource::Inline(StateSpace::from_rows(
        2,
        1,
        1,
        &[1.2, 0.3, 0.0, 0.5],
        &[1.0, 0.5],
        &[1.0, 0.0],
        &[0.0],
    )?);
    cfg.nominal = None;
    cfg.controller = ControllerSpec::AutoRiccati;
    let cfg = cfg.with_overrides(&[
        "identification.horizon=2048".into(),
        "identification.noise_scale=0.5".into(),
        "identification.c_const=0.02".into(),
        format!("out={}", std::env::temp_dir().join("robust-lqg-run-config").display()),
    ])?;
    cfg.validate()?;
    println!("{}", serde_json::to_string_pretty(&cfg.identification)?);
    cmd_identify(&cfg)?;
    println!("artifacts in {}", cfg.out.display());
    Ok(())
}
