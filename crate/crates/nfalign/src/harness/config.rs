//! Simulation configuration: a flat `key = value` text format with units
//! spelled out in the key names, plus defaults matching the standard
//! evaluation setup.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::channel::ArrayConfig;
use crate::{Error, Result};

/// Alignment schemes the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Coarse stage plus the learned refinement (requires weights).
    Proposed,
    /// Coarse stage only.
    CoarseOnly,
    Ls,
    PolarExh,
    AswJe,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::CoarseOnly => "coarse",
            Scheme::Ls => "ls",
            Scheme::PolarExh => "polar-exh",
            Scheme::AswJe => "aswje",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "proposed" => Ok(Scheme::Proposed),
            "coarse" => Ok(Scheme::CoarseOnly),
            "ls" => Ok(Scheme::Ls),
            "polar-exh" => Ok(Scheme::PolarExh),
            "aswje" => Ok(Scheme::AswJe),
            other => Err(Error::Config(format!(
                "unknown scheme '{other}' (expected proposed, coarse, ls, polar-exh, aswje)"
            ))),
        }
    }
}

/// Full simulation configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub array: ArrayConfig,
    /// Transmit powers to sweep, in dBm.
    pub sweep_dbm: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Exponent x in the asymmetry penalty gamma = P_t / 10^x.
    pub gamma_exponent: f64,
    pub n_rf: usize,
    pub t_symbol_s: f64,
    pub t_total_s: f64,
    pub schemes: Vec<Scheme>,
    pub phi_max_rad: f64,
    pub polar_beta: f64,
    pub polar_rings: usize,
    pub kappa2: f64,
    pub k_a: usize,
    pub k_b: usize,
    pub chi: usize,
    pub varpi_step: f64,
    pub weights_path: Option<PathBuf>,
    pub train_samples: usize,
    pub train_power_range_dbm: (f64, f64),
    pub train_lr: f64,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_patience: usize,
    pub train_val_fraction: f64,
    pub train_parallel: bool,
    pub out_csv: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            array: ArrayConfig::default_256(),
            sweep_dbm: (0..13).map(|i| -10.0 + 2.0 * i as f64).collect(),
            trials: 2000,
            seed: 1,
            epsilon: 0.1,
            gamma_exponent: 1.5,
            n_rf: 1,
            t_symbol_s: 1.04e-6,
            t_total_s: 1.0e-2,
            schemes: vec![Scheme::CoarseOnly, Scheme::Ls, Scheme::PolarExh, Scheme::AswJe],
            phi_max_rad: std::f64::consts::PI / 3.0,
            polar_beta: 1.2,
            polar_rings: 16,
            kappa2: 0.5,
            k_a: 3,
            k_b: 20,
            chi: 16,
            varpi_step: 0.1,
            weights_path: None,
            train_samples: 6000,
            train_power_range_dbm: (-10.0, 14.0),
            train_lr: 1e-3,
            train_epochs: 40,
            train_batch: 64,
            train_patience: 6,
            train_val_fraction: 0.1,
            train_parallel: true,
            out_csv: None,
            out_dir: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("key '{key}': expected a boolean, got '{other}'"))),
    }
}

impl SimConfig {
    /// Parse the flat key-value format. Lines are `key = value`; `#` starts a
    /// comment; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1))
            })?;
            kv.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut cfg = SimConfig::default();

        let mut n_antennas = cfg.array.n_antennas;
        let mut carrier_ghz = cfg.array.carrier_hz / 1e9;
        let mut bandwidth_mhz = cfg.array.bandwidth_hz / 1e6;
        let mut noise_psd = cfg.array.noise_psd_dbm_per_hz;
        let mut r_min = cfg.array.r_min_m;
        let mut r_max = cfg.array.r_max_m;
        let (mut sweep_start, mut sweep_stop, mut sweep_step) = (-10.0f64, 14.0f64, 2.0f64);
        let mut sweep_list: Option<Vec<f64>> = None;

        for (key, value) in &kv {
            match key.as_str() {
                "n_antennas" => n_antennas = parse_num(key, value)?,
                "carrier_ghz" => carrier_ghz = parse_num(key, value)?,
                "bandwidth_mhz" => bandwidth_mhz = parse_num(key, value)?,
                "noise_psd_dbm_per_hz" => noise_psd = parse_num(key, value)?,
                "r_min_m" => r_min = parse_num(key, value)?,
                "r_max_m" => r_max = parse_num(key, value)?,
                "phi_max_deg" => {
                    cfg.phi_max_rad = parse_num::<f64>(key, value)?.to_radians();
                }
                "sweep_dbm" => {
                    let list = value
                        .split(',')
                        .map(|v| parse_num::<f64>(key, v))
                        .collect::<Result<Vec<f64>>>()?;
                    if list.is_empty() {
                        return Err(Error::Config("sweep_dbm must not be empty".into()));
                    }
                    sweep_list = Some(list);
                }
                "sweep_start_dbm" => sweep_start = parse_num(key, value)?,
                "sweep_stop_dbm" => sweep_stop = parse_num(key, value)?,
                "sweep_step_db" => sweep_step = parse_num(key, value)?,
                "trials" => cfg.trials = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "epsilon" => cfg.epsilon = parse_num(key, value)?,
                "gamma_exponent" => cfg.gamma_exponent = parse_num(key, value)?,
                "n_rf" => cfg.n_rf = parse_num(key, value)?,
                "t_symbol_us" => cfg.t_symbol_s = parse_num::<f64>(key, value)? * 1e-6,
                "t_total_ms" => cfg.t_total_s = parse_num::<f64>(key, value)? * 1e-3,
                "schemes" => {
                    cfg.schemes = value
                        .split(',')
                        .map(Scheme::from_str)
                        .collect::<Result<Vec<Scheme>>>()?;
                }
                "polar_beta" => cfg.polar_beta = parse_num(key, value)?,
                "polar_rings" => cfg.polar_rings = parse_num(key, value)?,
                "kappa2" => cfg.kappa2 = parse_num(key, value)?,
                "k_a" => cfg.k_a = parse_num(key, value)?,
                "k_b" => cfg.k_b = parse_num(key, value)?,
                "chi" => cfg.chi = parse_num(key, value)?,
                "varpi_step" => cfg.varpi_step = parse_num(key, value)?,
                "weights_path" => cfg.weights_path = Some(PathBuf::from(value)),
                "train_samples" => cfg.train_samples = parse_num(key, value)?,
                "train_power_min_dbm" => cfg.train_power_range_dbm.0 = parse_num(key, value)?,
                "train_power_max_dbm" => cfg.train_power_range_dbm.1 = parse_num(key, value)?,
                "train_lr" => cfg.train_lr = parse_num(key, value)?,
                "train_epochs" => cfg.train_epochs = parse_num(key, value)?,
                "train_batch" => cfg.train_batch = parse_num(key, value)?,
                "train_patience" => cfg.train_patience = parse_num(key, value)?,
                "train_val_fraction" => cfg.train_val_fraction = parse_num(key, value)?,
                "train_parallel" => cfg.train_parallel = parse_bool(key, value)?,
                "out_csv" => cfg.out_csv = Some(PathBuf::from(value)),
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                other => {
                    return Err(Error::Config(format!("unknown configuration key '{other}'")));
                }
            }
        }

        cfg.array = ArrayConfig::new(
            n_antennas,
            carrier_ghz * 1e9,
            bandwidth_mhz * 1e6,
            noise_psd,
            r_min,
            r_max,
        )
        .map_err(|e| Error::Config(e.to_string()))?;

        cfg.sweep_dbm = match sweep_list {
            Some(list) => list,
            None => {
                if !(sweep_step > 0.0) || sweep_stop < sweep_start {
                    return Err(Error::Config("invalid sweep bounds".into()));
                }
                let mut v = Vec::new();
                let mut p = sweep_start;
                while p <= sweep_stop + 1e-9 {
                    v.push(p);
                    p += sweep_step;
                }
                v
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.sweep_dbm.is_empty() {
            return Err(Error::Config("sweep must not be empty".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon {} must lie in (0,1)", self.epsilon)));
        }
        if self.n_rf < 1 {
            return Err(Error::Config("n_rf must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_standard_setup() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.array.n_antennas, 256);
        assert_eq!(cfg.sweep_dbm.len(), 13);
        assert_eq!(cfg.sweep_dbm[0], -10.0);
        assert_eq!(*cfg.sweep_dbm.last().unwrap(), 14.0);
        assert_eq!(cfg.polar_rings, 16);
    }

    #[test]
    fn parses_a_full_file() {
        let text = "
# simulation setup
n_antennas = 64
carrier_ghz = 28
bandwidth_mhz = 850
r_min_m = 4            # meters
r_max_m = 60
sweep_dbm = -4, 0, 4
trials = 10
seed = 99
schemes = coarse, ls
t_symbol_us = 1.04
phi_max_deg = 45
";
        let cfg = SimConfig::parse(text).unwrap();
        assert_eq!(cfg.array.n_antennas, 64);
        assert_eq!(cfg.array.r_max_m, 60.0);
        assert_eq!(cfg.sweep_dbm, vec![-4.0, 0.0, 4.0]);
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.schemes, vec![Scheme::CoarseOnly, Scheme::Ls]);
        assert!((cfg.phi_max_rad - std::f64::consts::PI / 4.0).abs() < 1e-12);
        assert!((cfg.t_symbol_s - 1.04e-6).abs() < 1e-18);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(SimConfig::parse("frobnicate = 1"), Err(Error::Config(_))));
        assert!(matches!(SimConfig::parse("trials = abc"), Err(Error::Config(_))));
        assert!(matches!(SimConfig::parse("schemes = warp"), Err(Error::Config(_))));
        assert!(matches!(SimConfig::parse("trials"), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_bounds_form_matches_list_form() {
        let a = SimConfig::parse("sweep_start_dbm = -10\nsweep_stop_dbm = 14\nsweep_step_db = 2")
            .unwrap();
        let b = SimConfig::default();
        assert_eq!(a.sweep_dbm, b.sweep_dbm);
    }
}
