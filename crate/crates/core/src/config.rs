//! Flat `key = value` run configuration.
//!
//! Values are SI units. `#` starts a comment. Every key has a default, so an
//! empty file is valid; unknown and repeated keys are rejected with their
//! line. [`RunConfig::to_config_string`] writes every key with its resolved
//! value and parses back to the same configuration.

use std::collections::HashMap;
use std::fmt::Write;
use std::path::Path;

use thiserror::Error;

use crate::bistability::{NonlinearLineshapeParams, SweepDirection};
use crate::cavity::{CavityError, CavityGeometry, DispersionModel, LossAccounting, Medium};
use crate::correlator::{Binning, CarMethod, FitOptions, Weighting};
use crate::rates::{FsrForm, IntensityDefinition, SfwmConventions};
use crate::tagsim::SimConfig;

/// Line 0 marks values given on the command line.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{}: expected key = value, got '{text}'", at(*line))]
    Syntax { line: usize, text: String },
    #[error("{}: unknown key '{key}'", at(*line))]
    UnknownKey { key: String, line: usize },
    #[error("{}: key '{key}' given twice (first on {})", at(*line), at(*first))]
    DuplicateKey {
        key: String,
        line: usize,
        first: usize,
    },
    #[error("{}: invalid value for '{key}': {message}", at(*line))]
    InvalidValue {
        key: String,
        line: usize,
        message: String,
    },
    #[error("{}: '{key}': {message}", at(*line))]
    Invalid {
        key: String,
        line: usize,
        message: String,
    },
    #[error("cannot read config: {0}")]
    Io(String),
}

fn at(line: usize) -> String {
    if line == 0 {
        "command line".into()
    } else {
        format!("line {line}")
    }
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::DuplicateKey { key, .. }
            | ConfigError::InvalidValue { key, .. }
            | ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("'{s}' is not finite"))
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

macro_rules! integer_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                let digits = s.replace('_', "");
                let parsed = match digits.strip_prefix("0x") {
                    Some(hex) => <$t>::from_str_radix(hex, 16),
                    None => digits.parse(),
                };
                parsed.map_err(|_| format!("'{s}' is not a non-negative integer"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
integer_value!(u32, u64, usize);

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(format!("'{s}' is not a boolean")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Option<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            f64::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "none".into(), |v| v.render())
    }
}

impl ConfigValue for Vec<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(f64::parse_value)
            .collect()
    }
    fn render(&self) -> String {
        self.iter()
            .map(|v| v.render())
            .collect::<Vec<_>>()
            .join(",")
    }
}

macro_rules! enum_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse()
            }
            fn render(&self) -> String {
                self.as_str().to_string()
            }
        }
    )*};
}
enum_value!(
    LossAccounting,
    IntensityDefinition,
    FsrForm,
    SweepDirection,
    Weighting,
    CarMethod
);

#[derive(Debug, Clone, PartialEq)]
pub struct CavitySettings {
    /// Measured finesse replacing the mirror-loss value.
    pub finesse: Option<f64>,
    /// Finesse uncertainty entering the absorption bound.
    pub finesse_sigma: f64,
    pub max_order: u32,
    pub dispersion: DispersionModel,
    pub max_control_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineshapeSettings {
    pub params: NonlinearLineshapeParams,
    pub detuning_min: f64,
    pub detuning_max: f64,
    pub points: usize,
    pub threshold: f64,
    /// Input powers of the lineshift series, W.
    pub powers: Vec<f64>,
    pub direction: SweepDirection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorSettings {
    pub bin_width: f64,
    pub window: f64,
    pub weighting: Weighting,
    pub car_method: CarMethod,
}

impl CorrelatorSettings {
    pub fn binning(&self) -> Result<Binning, crate::correlator::CorrelatorError> {
        Binning::from_seconds(self.bin_width, self.window)
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            weighting: self.weighting,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSettings {
    /// Intracavity powers of the pair-rate scan, W.
    pub powers: Vec<f64>,
    /// Measurement time per power, s.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: CavityGeometry,
    pub medium: Medium,
    pub cavity: CavitySettings,
    pub lineshape: LineshapeSettings,
    pub conventions: SfwmConventions,
    /// Holds the rate parameters used by every pipeline.
    pub sim: SimConfig,
    pub correlator: CorrelatorSettings,
    pub scan: ScanSettings,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: CavityGeometry::experiment(),
            medium: Medium::silicone_oil(),
            cavity: CavitySettings {
                finesse: Some(12_500.0),
                finesse_sigma: 500.0,
                max_order: 3,
                dispersion: DispersionModel::NONE,
                max_control_offset: 1.0,
            },
            lineshape: LineshapeSettings {
                params: NonlinearLineshapeParams {
                    beta_prime: 133.0,
                    outcoupling: 1e-4,
                    p_in: 58e-6,
                },
                detuning_min: -20.0,
                detuning_max: 120.0,
                points: 14_001,
                threshold: 0.1,
                powers: vec![10e-6, 20e-6, 30e-6, 40e-6, 50e-6, 60e-6],
                direction: SweepDirection::Up,
            },
            conventions: SfwmConventions::default(),
            sim: SimConfig::experiment(),
            correlator: CorrelatorSettings {
                bin_width: 200e-12,
                window: 50e-9,
                weighting: Weighting::Model,
                car_method: CarMethod::Fit,
            },
            scan: ScanSettings {
                powers: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
                duration: 7200.0,
            },
            svg: false,
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ ;)*) => {
        pub const KEYS: &[&str] = &[$($key),*];

        fn set_value(&mut self, key: &str, value: &str) -> Option<Result<(), String>> {
            match key {
                $($key => Some(ConfigValue::parse_value(value).map(|v| self.$($field).+ = v)),)*
                _ => None,
            }
        }

        fn values(&self) -> Vec<(&'static str, String)> {
            vec![$(($key, ConfigValue::render(&self.$($field).+)),)*]
        }
    };
}

impl RunConfig {
    config_keys! {
        "cavity.length" => geometry.length;
        "cavity.roc" => geometry.roc;
        "cavity.mirror_transmission" => geometry.mirror_transmission;
        "cavity.mirror_loss" => geometry.mirror_loss;
        "cavity.wavelength" => geometry.wavelength_vac;
        "cavity.loss_accounting" => geometry.loss_accounting;
        "cavity.finesse" => cavity.finesse;
        "cavity.finesse_sigma" => cavity.finesse_sigma;
        "cavity.max_order" => cavity.max_order;
        "cavity.dispersion_quadratic" => cavity.dispersion.quadratic_offset;
        "cavity.dispersion_sensitivity" => cavity.dispersion.tuning_sensitivity;
        "cavity.max_control_offset" => cavity.max_control_offset;
        "medium.index" => medium.index;
        "medium.n2" => medium.n2;
        "medium.absorption" => medium.absorption;
        "medium.thermo_optic" => medium.thermo_optic;
        "lineshape.beta_prime" => lineshape.params.beta_prime;
        "lineshape.outcoupling" => lineshape.params.outcoupling;
        "lineshape.p_in" => lineshape.params.p_in;
        "lineshape.detuning_min" => lineshape.detuning_min;
        "lineshape.detuning_max" => lineshape.detuning_max;
        "lineshape.points" => lineshape.points;
        "lineshape.threshold" => lineshape.threshold;
        "lineshape.powers" => lineshape.powers;
        "lineshape.direction" => lineshape.direction;
        "sfwm.gamma_exp" => sim.sfwm.gamma_exp;
        "sfwm.gamma_plus" => sim.sfwm.gamma_plus;
        "sfwm.gamma_minus" => sim.sfwm.gamma_minus;
        "sfwm.tau_c" => sim.sfwm.tau_c;
        "sfwm.order" => sim.sfwm.order;
        "conventions.include_detection_efficiency" => conventions.include_detection_efficiency;
        "conventions.eta_plus" => conventions.eta_plus;
        "conventions.eta_minus" => conventions.eta_minus;
        "conventions.intensity" => conventions.intensity;
        "conventions.fsr_form" => conventions.fsr_form;
        "sim.duration" => sim.duration;
        "sim.p_cav" => sim.p_cav;
        "sim.cable_delay" => sim.cable_delay;
        "sim.seed" => sim.seed;
        "sim.pairs_detected" => sim.pairs_detected;
        "sim.background_detected" => sim.background_detected;
        "sim.memory_budget" => sim.memory_budget;
        "detector.plus.jitter" => sim.det_plus.jitter_sigma;
        "detector.plus.quantization" => sim.det_plus.quantization;
        "detector.plus.dark_rate" => sim.det_plus.dark_rate;
        "detector.plus.dead_time" => sim.det_plus.dead_time;
        "detector.plus.efficiency" => sim.det_plus.efficiency;
        "detector.minus.jitter" => sim.det_minus.jitter_sigma;
        "detector.minus.quantization" => sim.det_minus.quantization;
        "detector.minus.dark_rate" => sim.det_minus.dark_rate;
        "detector.minus.dead_time" => sim.det_minus.dead_time;
        "detector.minus.efficiency" => sim.det_minus.efficiency;
        "correlator.bin_width" => correlator.bin_width;
        "correlator.window" => correlator.window;
        "correlator.weighting" => correlator.weighting;
        "correlator.car_method" => correlator.car_method;
        "scan.powers" => scan.powers;
        "scan.duration" => scan.duration;
        "output.svg" => svg;
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let lines = cfg.apply_text(text)?;
        cfg.check(&lines)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies the file and then `key=value` overrides (reported as line 0),
    /// and validates the result.
    pub fn load_with_overrides(
        path: Option<&Path>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg = RunConfig::default();
        let mut lines = cfg.apply_text(&text)?;
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: 0,
                text: o.clone(),
            })?;
            let key = key.trim();
            cfg.apply(key, value.trim(), 0)?;
            if let Some(k) = KEY_NAMES.iter().find(|k| **k == key) {
                lines.insert(k, 0);
            }
        }
        cfg.check(&lines)?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        match self.set_value(key, value) {
            None => Err(ConfigError::UnknownKey {
                key: key.to_string(),
                line,
            }),
            Some(Err(message)) => Err(ConfigError::InvalidValue {
                key: key.to_string(),
                line,
                message,
            }),
            Some(Ok(())) => Ok(()),
        }
    }

    fn apply_text(&mut self, text: &str) -> Result<HashMap<&'static str, usize>, ConfigError> {
        let mut seen: HashMap<&'static str, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: content.to_string(),
            })?;
            let key = key.trim();
            self.apply(key, value.trim(), line)?;
            let name = KEY_NAMES.iter().find(|k| **k == key).expect("known key");
            if let Some(&first) = seen.get(name) {
                return Err(ConfigError::DuplicateKey {
                    key: key.to_string(),
                    line,
                    first,
                });
            }
            seen.insert(name, line);
        }
        Ok(seen)
    }

    fn check(&self, lines: &HashMap<&'static str, usize>) -> Result<(), ConfigError> {
        let fail = |key: &str, message: String| {
            Err(ConfigError::Invalid {
                key: key.to_string(),
                line: lines.get(key).copied().unwrap_or(0),
                message,
            })
        };
        if let Err(e) = self.geometry.validate() {
            let key = match &e {
                CavityError::NonPositiveLength(_) => "cavity.length",
                CavityError::UnstableGeometry { .. } => {
                    if lines.contains_key("cavity.length") || !lines.contains_key("cavity.roc") {
                        "cavity.length"
                    } else {
                        "cavity.roc"
                    }
                }
                CavityError::MirrorParameter { name, .. } if name.contains("loss") => {
                    "cavity.mirror_loss"
                }
                CavityError::MirrorParameter { .. } => "cavity.mirror_transmission",
                _ => "cavity.wavelength",
            };
            return fail(key, e.to_string());
        }
        if let Err(e) = self.medium.validate() {
            return fail("medium.index", e.to_string());
        }
        if let Some(f) = self.cavity.finesse {
            if !(f > 0.0) {
                return fail(
                    "cavity.finesse",
                    format!("finesse must be positive, got {f}"),
                );
            }
        }
        if !(self.cavity.finesse_sigma > 0.0) {
            return fail("cavity.finesse_sigma", "must be positive".into());
        }
        if !(self.cavity.max_control_offset >= 0.0) {
            return fail("cavity.max_control_offset", "must be non-negative".into());
        }
        if let Err(e) = self.lineshape.params.validate() {
            return fail("lineshape.outcoupling", e.to_string());
        }
        if !(self.lineshape.detuning_min < self.lineshape.detuning_max) {
            return fail(
                "lineshape.detuning_max",
                "must exceed lineshape.detuning_min".into(),
            );
        }
        if self.lineshape.points < 2 {
            return fail(
                "lineshape.points",
                "a scan needs at least two points".into(),
            );
        }
        if !(self.lineshape.threshold > 0.0 && self.lineshape.threshold < 1.0) {
            return fail("lineshape.threshold", "must lie in (0, 1)".into());
        }
        if self.lineshape.powers.iter().any(|&p| !(p > 0.0)) {
            return fail("lineshape.powers", "powers must be positive".into());
        }
        let sfwm = &self.sim.sfwm;
        if !(sfwm.tau_c > 0.0) {
            return fail("sfwm.tau_c", "correlation time must be positive".into());
        }
        for (key, v) in [
            ("sfwm.gamma_exp", sfwm.gamma_exp),
            ("sfwm.gamma_plus", sfwm.gamma_plus),
            ("sfwm.gamma_minus", sfwm.gamma_minus),
        ] {
            if v < 0.0 {
                return fail(key, "rates must be non-negative".into());
            }
        }
        for (key, v) in [
            ("conventions.eta_plus", self.conventions.eta_plus),
            ("conventions.eta_minus", self.conventions.eta_minus),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return fail(key, "efficiency must lie in (0, 1]".into());
            }
        }
        if !(self.sim.duration > 0.0) {
            return fail("sim.duration", "duration must be positive".into());
        }
        if !(self.sim.p_cav >= 0.0) {
            return fail("sim.p_cav", "power must be non-negative".into());
        }
        for (side, det) in [("plus", &self.sim.det_plus), ("minus", &self.sim.det_minus)] {
            let checks: [(&str, bool); 5] = [
                ("jitter", det.jitter_sigma >= 0.0),
                ("quantization", det.quantization_ps() >= 1),
                ("dark_rate", det.dark_rate >= 0.0),
                ("dead_time", det.dead_time >= 0.0),
                ("efficiency", (0.0..=1.0).contains(&det.efficiency)),
            ];
            for (name, ok) in checks {
                if !ok {
                    let key = format!("detector.{side}.{name}");
                    return fail(&key, "out of range".into());
                }
            }
        }
        if let Err(e) = self.correlator.binning() {
            return fail("correlator.bin_width", e.to_string());
        }
        if self.scan.powers.len() < 3 || self.scan.powers.iter().any(|&p| !(p > 0.0)) {
            return fail("scan.powers", "need at least three positive powers".into());
        }
        if !(self.scan.duration > 0.0) {
            return fail("scan.duration", "duration must be positive".into());
        }
        Ok(())
    }

    /// Every key with its resolved value.
    pub fn to_config_string(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in self.values() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

const KEY_NAMES: &[&str] = RunConfig::KEYS;
