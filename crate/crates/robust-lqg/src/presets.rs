//! Fixture plants: a true plant paired with the nominal model used to build
//! the initial controller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::StateSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub plant: StateSpace,
    pub nominal: StateSpace,
}

pub const PRESET_NAMES: [&str; 3] = ["scalar-stable", "scalar-unstable", "mimo-3x2"];

fn scalar(a: f64, b: f64, c: f64) -> StateSpace {
    StateSpace::from_rows(1, 1, 1, &[a], &[b], &[c], &[0.0]).unwrap()
}

pub fn preset(name: &str) -> Result<Preset> {
    let (plant, nominal) = match name {
        "scalar-stable" => (scalar(0.7, 1.0, 1.0), scalar(0.6, 0.9, 1.0)),
        "scalar-unstable" => (scalar(1.5, 1.0, 1.0), scalar(1.55, 1.05, 1.0)),
        "mimo-3x2" => {
            let plant = StateSpace::from_rows(
                3,
                2,
                2,
                &[0.9, 0.3, 0.0, -0.2, 0.8, 0.1, 0.0, 0.1, 1.1],
                &[1.0, 0.0, 0.0, 0.5, 0.3, 1.0],
                &[1.0, 0.0, 0.0, 0.0, 0.5, 1.0],
                &[0.0, 0.0, 0.0, 0.0],
            )?;
            let nominal = StateSpace::from_rows(
                3,
                2,
                2,
                &[0.85, 0.3, 0.0, -0.2, 0.8, 0.1, 0.0, 0.1, 1.05],
                &[1.0, 0.0, 0.0, 0.5, 0.3, 0.9],
                &[1.0, 0.0, 0.0, 0.0, 0.5, 1.0],
                &[0.0, 0.0, 0.0, 0.0],
            )?;
            (plant, nominal)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(Preset {
        name: name.to_string(),
        plant,
        nominal,
    })
}
