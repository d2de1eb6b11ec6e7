//! Source configuration: all physical parameters of the two-crystal scheme,
//! plus numerical knobs shared by the whole pipeline.
//!
//! Configs are serialized as flat `key = value` text files in SI units.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

/// Physical and numerical parameters of the two-crystal PDC source.
///
/// All lengths are in meters, powers in watts, angles in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceConfig {
    /// Pump wavelength (m).
    pub pump_wavelength: f64,
    /// Detected (down-converted) wavelength (m), near-degenerate.
    pub detect_wavelength: f64,
    /// Length of each crystal L_c (m).
    pub crystal_length: f64,
    /// Air gap between the two crystals L (m).
    pub gap_distance: f64,
    /// Pump beam intensity FWHM (m).
    pub pump_fwhm: f64,
    /// Gap distance giving a pi dispersive phase at low pump power (m).
    pub pi_distance: f64,
    /// Parametric gain G0 = G * sqrt(lambda_0), dimensionless.
    pub gain: f64,
    /// Kerr-induced pump phase per unit power (rad/W).
    pub kerr_coeff: f64,
    /// Pump power (W).
    pub pump_power: f64,
    /// Collinear phase mismatch offset Delta0 (1/m).
    pub collinear_mismatch: f64,
    /// Largest azimuthal index kept in the decomposition.
    pub l_max: i32,
    /// Number of radial modes kept per azimuthal index.
    pub p_max: usize,
    /// Radial grid nodes.
    pub n_theta: usize,
    /// Azimuthal grid nodes.
    pub n_phi: usize,
    /// Effective number of independent frequency modes in synthesis.
    pub n_freq: usize,
    /// Camera read noise standard deviation (intensity units, 0 = ideal).
    pub read_noise: f64,
    /// Camera full-well clip level (intensity units, 0 = unclipped).
    pub well_depth: f64,
    /// Far-field lens focal length for the r = f*theta mapping (m).
    pub focal_length: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pump_wavelength: 354.67e-9,
            detect_wavelength: 710e-9,
            crystal_length: 2e-3,
            gap_distance: 18e-3,
            pump_fwhm: 170e-6,
            pi_distance: 18e-3,
            gain: 7.6,
            kerr_coeff: 0.0,
            pump_power: 45e-3,
            collinear_mismatch: 0.0,
            l_max: 12,
            p_max: 8,
            n_theta: 256,
            n_phi: 256,
            n_freq: 1,
            read_noise: 0.0,
            well_depth: 0.0,
            focal_length: 0.2,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: cannot parse `{text}` (expected `key = value`)")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {value}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl SourceConfig {
    /// Check the physical invariants of the configuration.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let lengths = [
            ("pump_wavelength", self.pump_wavelength),
            ("detect_wavelength", self.detect_wavelength),
            ("crystal_length", self.crystal_length),
            ("gap_distance", self.gap_distance),
            ("pump_fwhm", self.pump_fwhm),
            ("pi_distance", self.pi_distance),
            ("focal_length", self.focal_length),
        ];
        for (name, v) in lengths {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.gain < 0.0 || !self.gain.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "gain must be >= 0, got {}",
                self.gain
            )));
        }
        if (self.detect_wavelength - 2.0 * self.pump_wavelength).abs() > 20e-9 {
            return Err(ConfigError::Invalid(format!(
                "detect_wavelength {} is more than 20 nm from degeneracy (2 x pump = {})",
                self.detect_wavelength,
                2.0 * self.pump_wavelength
            )));
        }
        if self.pump_power < 0.0 {
            return Err(ConfigError::Invalid(format!(
                "pump_power must be >= 0, got {}",
                self.pump_power
            )));
        }
        if self.l_max < 0 {
            return Err(ConfigError::Invalid("l_max must be >= 0".into()));
        }
        if self.p_max == 0 {
            return Err(ConfigError::Invalid("p_max must be >= 1".into()));
        }
        if self.n_theta < 16 || self.n_phi < 16 {
            return Err(ConfigError::Invalid(format!(
                "grid must have at least 16 nodes per axis, got {} x {}",
                self.n_theta, self.n_phi
            )));
        }
        Ok(())
    }

    fn set_key(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        macro_rules! parse {
            ($ty:ty) => {
                value
                    .trim()
                    .parse::<$ty>()
                    .map_err(|_| ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        value: value.trim().to_string(),
                    })?
            };
        }
        match key {
            "pump_wavelength" => self.pump_wavelength = parse!(f64),
            "detect_wavelength" => self.detect_wavelength = parse!(f64),
            "crystal_length" => self.crystal_length = parse!(f64),
            "gap_distance" => self.gap_distance = parse!(f64),
            "pump_fwhm" => self.pump_fwhm = parse!(f64),
            "pi_distance" => self.pi_distance = parse!(f64),
            "gain" => self.gain = parse!(f64),
            "kerr_coeff" => self.kerr_coeff = parse!(f64),
            "pump_power" => self.pump_power = parse!(f64),
            "collinear_mismatch" => self.collinear_mismatch = parse!(f64),
            "l_max" => self.l_max = parse!(i32),
            "p_max" => self.p_max = parse!(usize),
            "n_theta" => self.n_theta = parse!(usize),
            "n_phi" => self.n_phi = parse!(usize),
            "n_freq" => self.n_freq = parse!(usize),
            "read_noise" => self.read_noise = parse!(f64),
            "well_depth" => self.well_depth = parse!(f64),
            "focal_length" => self.focal_length = parse!(f64),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file. Blank lines and `#` comments
    /// are ignored; unknown keys are reported with their line number.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SourceConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax {
                    line,
                    text: stripped.to_string(),
                })?;
            cfg.set_key(key.trim(), value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Key/value view of the config, in stable key order.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("pump_wavelength", format!("{:e}", self.pump_wavelength));
        m.insert("detect_wavelength", format!("{:e}", self.detect_wavelength));
        m.insert("crystal_length", format!("{:e}", self.crystal_length));
        m.insert("gap_distance", format!("{:e}", self.gap_distance));
        m.insert("pump_fwhm", format!("{:e}", self.pump_fwhm));
        m.insert("pi_distance", format!("{:e}", self.pi_distance));
        m.insert("gain", format!("{:e}", self.gain));
        m.insert("kerr_coeff", format!("{:e}", self.kerr_coeff));
        m.insert("pump_power", format!("{:e}", self.pump_power));
        m.insert(
            "collinear_mismatch",
            format!("{:e}", self.collinear_mismatch),
        );
        m.insert("l_max", format!("{}", self.l_max));
        m.insert("p_max", format!("{}", self.p_max));
        m.insert("n_theta", format!("{}", self.n_theta));
        m.insert("n_phi", format!("{}", self.n_phi));
        m.insert("n_freq", format!("{}", self.n_freq));
        m.insert("read_noise", format!("{:e}", self.read_noise));
        m.insert("well_depth", format!("{:e}", self.well_depth));
        m.insert("focal_length", format!("{:e}", self.focal_length));
        m
    }

    /// Render the config as a `key = value` file.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
