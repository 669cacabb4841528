//! Run configuration: one JSON document, with dotted-path overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::factorization::{self, Dcf};
use crate::lti::{mat_from_rows, StateSpace};
use crate::presets;
use crate::synthesis::SynthesisConfig;
use crate::sysid::IdConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSource {
    Preset(String),
    Inline(StateSpace),
}

/// How the controller running the experiment is built from the nominal model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerSpec {
    /// LQR state feedback with a Kalman observer, unit weights.
    #[default]
    AutoRiccati,
    /// Observer-based controller from explicit gains (row-major arrays).
    Observer {
        state_feedback: Vec<Vec<f64>>,
        observer_gain: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub seeds: Vec<u64>,
    pub horizon: usize,
    /// Fraction of pilot runs on which the calibrated bound must dominate.
    pub quantile: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { seeds: (1000..1020).collect(), horizon: 2048, quantile: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub gammas: Vec<f64>,
    /// Replace `identification.c_const` by a pilot-run calibration before the sweep.
    pub calibration: Option<Calibration>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            horizons: (9..=14).map(|k| 1usize << k).collect(),
            seeds: (0..20).collect(),
            gammas: (0..6).map(|k| 0.01 * 10f64.powf(k as f64 / 5.0)).collect(),
            calibration: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSource,
    /// Model behind the initial controller; defaults to the preset's nominal model,
    /// or to the plant itself when the plant is given inline.
    #[serde(default)]
    pub nominal: Option<PlantSource>,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub identification: IdConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn for_preset(name: &str) -> Self {
        RunConfig {
            plant: PlantSource::Preset(name.to_string()),
            nominal: None,
            controller: ControllerSpec::default(),
            identification: IdConfig::default(),
            synthesis: SynthesisConfig::default(),
            sweep: SweepSettings::default(),
            seed: 0,
            out: default_out(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Apply `key=value` overrides; keys are dotted paths into the document and
    /// values are parsed as JSON, falling back to a plain string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| Error::Config(format!("override key {key:?} does not exist")))?;
            }
            if slot.is_object() {
                return Err(Error::Config(format!("override key {key:?} is not a scalar field")));
            }
            *slot = value;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    pub fn plant(&self) -> Result<StateSpace> {
        match &self.plant {
            PlantSource::Preset(name) => Ok(presets::preset(name)?.plant),
            PlantSource::Inline(s) => Ok(s.clone()),
        }
    }

    pub fn nominal_model(&self) -> Result<StateSpace> {
        match (&self.nominal, &self.plant) {
            (Some(PlantSource::Preset(name)), _) => Ok(presets::preset(name)?.nominal),
            (Some(PlantSource::Inline(s)), _) => Ok(s.clone()),
            (None, PlantSource::Preset(name)) => Ok(presets::preset(name)?.nominal),
            (None, PlantSource::Inline(s)) => Ok(s.clone()),
        }
    }

    /// Factorization whose central controller runs the experiment.
    pub fn nominal_dcf(&self) -> Result<Dcf> {
        let model = self.nominal_model()?;
        let config_err = |e: Error| Error::Config(format!("controller: {e}"));
        match &self.controller {
            ControllerSpec::AutoRiccati => factorization::default_dcf(&model).map_err(config_err),
            ControllerSpec::Observer { state_feedback, observer_gain } => {
                let f = mat_from_rows(state_feedback, model.nu(), model.nx()).map_err(config_err)?;
                let l = mat_from_rows(observer_gain, model.nx(), model.ny()).map_err(config_err)?;
                factorization::observer_dcf(&model, &f, &l).map_err(config_err)
            }
        }
    }

    /// Schema and range checks, run before any computation.
    pub fn validate(&self) -> Result<()> {
        let plant = self.plant()?;
        let model = self.nominal_model()?;
        if (plant.nu(), plant.ny()) != (model.nu(), model.ny()) {
            return Err(Error::Config("plant and nominal model have different input/output sizes".into()));
        }
        let k = self.nominal_dcf()?.central_controller()?;
        if !factorization::is_internally_stabilizing(&plant, &k)? {
            return Err(Error::Config("the initial controller does not stabilize the plant".into()));
        }
        self.identification.validate()?;
        self.synthesis.validate()?;
        let s = &self.sweep;
        if s.horizons.windows(2).any(|w| w[1] <= w[0]) || s.horizons.contains(&0) {
            return Err(Error::Config("sweep.horizons must be positive and increasing".into()));
        }
        if s.seeds.is_empty() {
            return Err(Error::Config("sweep.seeds is empty".into()));
        }
        if s.gammas.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::Config("sweep.gammas must be positive".into()));
        }
        if let Some(c) = &s.calibration {
            if c.seeds.is_empty() || c.horizon == 0 || !(c.quantile > 0.0 && c.quantile <= 1.0) {
                return Err(Error::Config("sweep.calibration needs seeds, a horizon and a quantile in (0, 1]".into()));
            }
        }
        Ok(())
    }
}
