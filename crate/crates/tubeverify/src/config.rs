//! Run settings merged from flags and an optional TOML file. Flags win.
//!
//! The file uses the flag names in snake_case at the top level, plus optional
//! `[dubins3]` and `[rocket]` tables overriding system constants:
//!
//! ```toml
//! system = "rocket_nogo"
//! seed = 7
//! beta = 1e-16
//! [rocket]
//! torque_bound = 200.0
//! [rocket.nogo]
//! floor_height = 15.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tubeverify_core::dynamics::{Dubins3, DubinsParams, Rocket, RocketParams, SYSTEM_NAMES};
use tubeverify_core::retrain::RetrainConfig;
use tubeverify_core::rollout::ErrorPolicy;
use tubeverify_core::verifier::{SweepStrategy, VerifyParams};
use tubeverify_core::System;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    /// Bang-bang policy induced by the value function's gradient.
    Induced,
    /// Zero control.
    Zero,
}

macro_rules! settings {
    ($($(#[$m:meta])* $field:ident: $ty:ty,)*) => {
        /// Every tunable of every subcommand; unset fields fall back to the
        /// config file, then to built-in defaults.
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct Settings {
            $($(#[$m])* #[serde(default, skip_serializing_if = "Option::is_none")] pub $field: Option<$ty>,)*
        }

        impl Settings {
            /// Field-wise `self.or(fallback)`.
            pub fn or(self, fallback: Settings) -> Settings {
                Settings { $($field: self.$field.or(fallback.$field),)* }
            }
        }
    };
}

settings! {
    system: String,
    /// `analytic` or a weight file.
    value: String,
    /// Value function whose induced policy drives rollouts, when different
    /// from `value`: `analytic` or a weight file.
    policy_from: String,
    policy: PolicyChoice,
    seed: u64,
    dt: f64,
    beta: f64,
    n: u64,
    delta: f64,
    levels: Vec<f64>,
    fractions: Vec<f64>,
    strategy: SweepStrategy,
    eps_target: f64,
    initial_level: f64,
    max_iterations: usize,
    error_policy: ErrorPolicy,
    volume_samples: u64,
    max_rejections: u64,
    x0: Vec<f64>,
    n_train: u64,
    n_val: u64,
    epochs: usize,
    learning_rate: f64,
    w: f64,
    batch_size: usize,
    checkpoint_interval: usize,
    normalize_labels: bool,
    hidden: Vec<usize>,
    omega0: f64,
    bootstrap: bool,
    out: PathBuf,
    report: PathBuf,
    csv: PathBuf,
    dump_samples: PathBuf,
    dump_traj: PathBuf,
    threads: usize,
}

/// Contents of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub settings: Settings,
    pub dubins3: Option<DubinsParams>,
    pub rocket: Option<RocketParams>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e| CliError::usage(format!("config: {e}")))?;
        let dubins3 = table
            .remove("dubins3")
            .map(|v| v.try_into::<DubinsParams>())
            .transpose()
            .map_err(|e| CliError::usage(format!("config [dubins3]: {e}")))?;
        let rocket = table
            .remove("rocket")
            .map(|v| v.try_into::<RocketParams>())
            .transpose()
            .map_err(|e| CliError::usage(format!("config [rocket]: {e}")))?;
        let settings =
            toml::Value::Table(table).try_into().map_err(|e| CliError::usage(format!("config: {e}")))?;
        Ok(Self { settings, dubins3, rocket })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Fully merged configuration of one run, echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub settings: Settings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dubins3: Option<DubinsParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rocket: Option<RocketParams>,
}

impl RunConfig {
    pub fn new(command: &str, flags: Settings, config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let mut run = RunConfig {
            command: command.to_string(),
            settings: flags.or(file.settings),
            dubins3: file.dubins3,
            rocket: file.rocket,
        };
        let name = run.system_name()?.to_string();
        // echo the constants actually in force for the chosen system
        match name.as_str() {
            "dubins3" => {
                run.dubins3.get_or_insert_with(DubinsParams::default);
                run.rocket = None;
            }
            _ => {
                let r = run.rocket.get_or_insert_with(RocketParams::default);
                if name == "rocket_nogo" {
                    r.nogo.get_or_insert_with(Default::default);
                } else {
                    r.nogo = None;
                }
                run.dubins3 = None;
            }
        }
        Ok(run)
    }

    pub fn system_name(&self) -> Result<&str, CliError> {
        let name = self.settings.system.as_deref().ok_or_else(|| CliError::usage("--system is required"))?;
        if !SYSTEM_NAMES.contains(&name) {
            return Err(CliError::usage(format!("unknown system `{name}`; expected one of {SYSTEM_NAMES:?}")));
        }
        Ok(name)
    }

    pub fn build_system(&self) -> Result<Box<dyn System>, CliError> {
        Ok(match self.system_name()? {
            "dubins3" => Box::new(Dubins3::new(self.dubins3.clone().unwrap_or_default())?),
            _ => Box::new(Rocket::new(self.rocket.clone().unwrap_or_default())?),
        })
    }

    pub fn seed(&self) -> u64 {
        self.settings.seed.unwrap_or(0)
    }

    pub fn dt(&self) -> f64 {
        self.settings.dt.unwrap_or(0.01)
    }

    pub fn verify_params(&self) -> VerifyParams {
        let s = &self.settings;
        let d = VerifyParams::default();
        VerifyParams {
            n_samples: s.n.unwrap_or(d.n_samples),
            beta: s.beta.unwrap_or(d.beta),
            seed: self.seed(),
            dt: self.dt(),
            volume_samples: s.volume_samples.unwrap_or(d.volume_samples),
            max_rejections_per_sample: s.max_rejections.unwrap_or(d.max_rejections_per_sample),
            error_policy: s.error_policy.unwrap_or(d.error_policy),
            tolerances: d.tolerances,
        }
    }

    pub fn retrain_config(&self) -> RetrainConfig {
        let s = &self.settings;
        let d = RetrainConfig::default();
        RetrainConfig {
            w: s.w.unwrap_or(d.w),
            learning_rate: s.learning_rate.unwrap_or(d.learning_rate),
            epochs: s.epochs.unwrap_or(d.epochs),
            batch_size: s.batch_size.unwrap_or(d.batch_size),
            checkpoint_interval: s.checkpoint_interval.unwrap_or(d.checkpoint_interval),
            seed: self.seed(),
            normalize_labels: s.normalize_labels.unwrap_or(d.normalize_labels),
        }
    }

    /// Box fractions for certified-volume searches and quantile levels.
    pub fn fractions(&self) -> Vec<f64> {
        self.settings.fractions.clone().unwrap_or_else(|| (1..=19).map(|i| i as f64 * 0.05).collect())
    }

    /// JSON echo embedded in every output.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
