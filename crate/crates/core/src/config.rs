//! Scenario and training configuration, plus the flat `key=value` file format.
//!
//! A config file is UTF-8 text with one `key=value` pair per line. Blank lines
//! and anything after `#` are ignored. Keys not listed in [`KEYS`] are errors.
//! Missing keys take the defaults of the reference scenario (20 devices,
//! 20 dBm, 100 kHz, -169 dBm/Hz, path loss -128.1 - 36.7 log10(d_km)).

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Pilot sequence followed by `D` spread data symbols.
    Coherent,
    /// The transmitted sequence index carries the data bits.
    NonCoherent,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Coherent => "coherent",
            Scheme::NonCoherent => "non-coherent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "coherent" => Some(Scheme::Coherent),
            "non-coherent" | "noncoherent" => Some(Scheme::NonCoherent),
            _ => None,
        }
    }
}

/// Symbol alphabet. Symbol index `c` carries the big-endian bits of `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constellation {
    /// `[+1, -1]`: bit 0 maps to +1.
    Bpsk,
    /// Gray-mapped unit-energy QPSK; first bit picks the real sign, second the imaginary.
    Qpsk,
}

impl Constellation {
    pub fn symbols(self) -> Vec<Complex64> {
        match self {
            Constellation::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            Constellation::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                vec![
                    Complex64::new(a, a),
                    Complex64::new(a, -a),
                    Complex64::new(-a, a),
                    Complex64::new(-a, -a),
                ]
            }
        }
    }

    pub fn size(self) -> usize {
        match self {
            Constellation::Bpsk => 2,
            Constellation::Qpsk => 4,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Constellation::Bpsk => 1,
            Constellation::Qpsk => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Constellation::Bpsk => "bpsk",
            Constellation::Qpsk => "qpsk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bpsk" => Some(Constellation::Bpsk),
            "qpsk" => Some(Constellation::Qpsk),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub scheme: Scheme,
    /// K
    pub n_devices: usize,
    /// L
    pub seq_len: usize,
    /// Coherence interval in samples.
    pub coherence_len: usize,
    /// J
    pub n_bits: usize,
    /// Per-device activity probability used when generating evaluation data.
    pub activity_prob: f64,
    pub tx_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    /// Path loss in dB is `pathloss_a - pathloss_b * log10(d_km)`.
    pub pathloss_a: f64,
    pub pathloss_b: f64,
    pub dist_min_m: f64,
    pub dist_max_m: f64,
    pub constellation: Constellation,
    /// T
    pub n_stages: usize,
    pub decision_threshold: f64,
    /// Hidden layer widths of every CE/AD/DD module.
    pub hidden_layers: Vec<usize>,
    /// Share one parameter set across all devices of a stage.
    pub tie_devices: bool,
    pub codebook_seed: u64,
    /// Disables receiver noise (test scenarios).
    pub noiseless: bool,
    pub fcnn_hidden_layers: usize,
    pub fcnn_width: usize,
    pub lasso_nu: f64,
    pub amp_iters: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Coherent,
            n_devices: 20,
            seq_len: 6,
            coherence_len: 18,
            n_bits: 2,
            activity_prob: 0.1,
            tx_power_dbm: 20.0,
            bandwidth_hz: 100e3,
            noise_psd_dbm_hz: -169.0,
            pathloss_a: -128.1,
            pathloss_b: 36.7,
            dist_min_m: 50.0,
            dist_max_m: 500.0,
            constellation: Constellation::Bpsk,
            n_stages: 4,
            decision_threshold: 0.5,
            hidden_layers: vec![64, 64],
            tie_devices: false,
            codebook_seed: 1,
            noiseless: false,
            fcnn_hidden_layers: 10,
            fcnn_width: 2048,
            lasso_nu: 0.05,
            amp_iters: 50,
        }
    }
}

impl SystemConfig {
    /// D, the number of data symbols per coherent frame.
    pub fn n_symbols(&self) -> usize {
        match self.scheme {
            Scheme::Coherent => self.n_bits.div_ceil(self.constellation.bits_per_symbol()),
            Scheme::NonCoherent => 0,
        }
    }

    /// Sequences assigned to each device: 1 (coherent) or 2^J (non-coherent).
    pub fn sequences_per_device(&self) -> usize {
        match self.scheme {
            Scheme::Coherent => 1,
            Scheme::NonCoherent => 1usize << self.n_bits,
        }
    }

    pub fn n_columns(&self) -> usize {
        self.n_devices * self.sequences_per_device()
    }

    pub fn noise_variance_w(&self) -> f64 {
        10f64.powf((self.noise_psd_dbm_hz - 30.0) / 10.0) * self.bandwidth_hz
    }

    pub fn tx_power_w(&self) -> f64 {
        10f64.powf((self.tx_power_dbm - 30.0) / 10.0)
    }

    /// Transmit amplitude in noise-normalized units, `sqrt(rho / sigma_n^2)`.
    pub fn normalized_amplitude(&self) -> f64 {
        (self.tx_power_w() / self.noise_variance_w()).sqrt()
    }

    pub fn pathloss_db(&self, dist_m: f64) -> f64 {
        self.pathloss_a - self.pathloss_b * (dist_m / 1000.0).log10()
    }

    /// Largest sequence length the coherence interval allows for this scheme.
    pub fn max_seq_len(&self) -> usize {
        match self.scheme {
            Scheme::Coherent => self.coherence_len / (self.n_symbols() + 1),
            Scheme::NonCoherent => self.coherence_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_devices == 0 {
            return bad("K must be at least 1".into());
        }
        if self.seq_len == 0 || self.coherence_len == 0 {
            return bad("L and tau_coh must be at least 1".into());
        }
        if self.n_stages == 0 {
            return bad("T must be at least 1".into());
        }
        match self.scheme {
            Scheme::Coherent => {
                if self.n_bits == 0 {
                    return bad("coherent scheme needs J >= 1".into());
                }
                if !self.n_bits.is_multiple_of(self.constellation.bits_per_symbol()) {
                    return bad(format!(
                        "J={} is not a multiple of the {} bits per {} symbol",
                        self.n_bits,
                        self.constellation.bits_per_symbol(),
                        self.constellation.as_str()
                    ));
                }
                let d = self.n_symbols();
                if self.seq_len > self.coherence_len / (d + 1) {
                    return bad(format!(
                        "coherent scheme requires L <= floor(tau_coh/(D+1)): L={} > floor({}/{}) = {}",
                        self.seq_len,
                        self.coherence_len,
                        d + 1,
                        self.coherence_len / (d + 1)
                    ));
                }
            }
            Scheme::NonCoherent => {
                if self.n_bits > 16 {
                    return bad(format!("J={} gives too many sequences per device", self.n_bits));
                }
                if self.seq_len > self.coherence_len {
                    return bad(format!(
                        "non-coherent scheme requires L <= tau_coh: L={} > {}",
                        self.seq_len, self.coherence_len
                    ));
                }
            }
        }
        if !(self.activity_prob > 0.0 && self.activity_prob < 1.0) {
            return bad(format!("eps must lie in (0,1), got {}", self.activity_prob));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad(format!("tau_thr must lie in (0,1), got {}", self.decision_threshold));
        }
        if !(self.dist_min_m > 0.0 && self.dist_min_m <= self.dist_max_m) {
            return bad(format!(
                "need 0 < dist_min_m <= dist_max_m, got {} and {}",
                self.dist_min_m, self.dist_max_m
            ));
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth_hz must be positive".into());
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return bad("hidden must list at least one positive layer width".into());
        }
        if self.fcnn_hidden_layers == 0 || self.fcnn_width == 0 {
            return bad("fcnn_layers and fcnn_width must be positive".into());
        }
        if !(self.lasso_nu >= 0.0) {
            return bad("lasso_nu must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// lambda, the classification share of the joint loss.
    pub loss_weight: f64,
    /// Per-stage regression weights; a single value is broadcast to every stage.
    pub stage_weights: Vec<f64>,
    pub train_eps: f64,
    pub n_train_samples: usize,
    pub n_val_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 100,
            learning_rate: 1e-3,
            loss_weight: 0.5,
            stage_weights: vec![1.0],
            train_eps: 0.25,
            n_train_samples: 102_400,
            n_val_samples: 50_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Stage weights expanded to `n_stages` entries.
    pub fn weights_for(&self, n_stages: usize) -> Result<Vec<f64>> {
        match self.stage_weights.len() {
            1 => Ok(vec![self.stage_weights[0]; n_stages]),
            n if n == n_stages => Ok(self.stage_weights.clone()),
            n => Err(Error::Config(format!(
                "stage_weights has {n} entries but T = {n_stages}"
            ))),
        }
    }

    pub fn validate(&self, n_stages: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.n_train_samples == 0 {
            return bad("batch_size and n_train must be positive".into());
        }
        if self.batch_size > self.n_train_samples {
            return bad(format!(
                "batch_size {} exceeds n_train {}",
                self.batch_size, self.n_train_samples
            ));
        }
        if !(self.learning_rate > 0.0) {
            return bad("lr must be positive".into());
        }
        if !(self.loss_weight > 0.0 && self.loss_weight < 1.0) {
            return bad(format!("lambda must lie in (0,1), got {}", self.loss_weight));
        }
        if !(self.train_eps > 0.0 && self.train_eps < 1.0) {
            return bad(format!("train_eps must lie in (0,1), got {}", self.train_eps));
        }
        let w = self.weights_for(n_stages)?;
        if w.iter().any(|&x| !(x > 0.0)) {
            return bad("stage weights must be positive".into());
        }
        Ok(())
    }
}

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "scheme",
    "K",
    "L",
    "tau_coh",
    "J",
    "D",
    "eps",
    "rho_dbm",
    "bandwidth_hz",
    "noise_psd_dbm_hz",
    "pathloss_a",
    "pathloss_b",
    "dist_min_m",
    "dist_max_m",
    "constellation",
    "T",
    "tau_thr",
    "hidden",
    "tie_devices",
    "codebook_seed",
    "noiseless",
    "fcnn_layers",
    "fcnn_width",
    "lasso_nu",
    "amp_iters",
    "batch_size",
    "epochs",
    "lr",
    "lambda",
    "stage_weights",
    "train_eps",
    "n_train",
    "n_val",
    "seed",
];

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse value {value:?} for key {key}"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Parse {
            line,
            msg: format!("cannot parse boolean {value:?} for key {key}"),
        }),
    }
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_num(line, key, v.trim()))
        .collect()
}

/// Parses config text. Unspecified keys keep their defaults; the result is validated.
pub fn parse_config_str(text: &str) -> Result<(SystemConfig, TrainConfig)> {
    let mut sys = SystemConfig::default();
    let mut train = TrainConfig::default();
    let mut explicit_d: Option<(usize, usize)> = None;
    let mut seen = std::collections::HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected key=value, got {content:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) && KEYS.contains(&key) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate key {key}"),
            });
        }
        match key {
            "scheme" => {
                sys.scheme = Scheme::parse(value).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("unknown scheme {value:?}"),
                })?
            }
            "K" => sys.n_devices = parse_num(line, key, value)?,
            "L" => sys.seq_len = parse_num(line, key, value)?,
            "tau_coh" => sys.coherence_len = parse_num(line, key, value)?,
            "J" => sys.n_bits = parse_num(line, key, value)?,
            "D" => explicit_d = Some((line, parse_num(line, key, value)?)),
            "eps" => sys.activity_prob = parse_num(line, key, value)?,
            "rho_dbm" => sys.tx_power_dbm = parse_num(line, key, value)?,
            "bandwidth_hz" => sys.bandwidth_hz = parse_num(line, key, value)?,
            "noise_psd_dbm_hz" => sys.noise_psd_dbm_hz = parse_num(line, key, value)?,
            "pathloss_a" => sys.pathloss_a = parse_num(line, key, value)?,
            "pathloss_b" => sys.pathloss_b = parse_num(line, key, value)?,
            "dist_min_m" => sys.dist_min_m = parse_num(line, key, value)?,
            "dist_max_m" => sys.dist_max_m = parse_num(line, key, value)?,
            "constellation" => {
                sys.constellation = Constellation::parse(value).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("unknown constellation {value:?}"),
                })?
            }
            "T" => sys.n_stages = parse_num(line, key, value)?,
            "tau_thr" => sys.decision_threshold = parse_num(line, key, value)?,
            "hidden" => sys.hidden_layers = parse_list(line, key, value)?,
            "tie_devices" => sys.tie_devices = parse_bool(line, key, value)?,
            "codebook_seed" => sys.codebook_seed = parse_num(line, key, value)?,
            "noiseless" => sys.noiseless = parse_bool(line, key, value)?,
            "fcnn_layers" => sys.fcnn_hidden_layers = parse_num(line, key, value)?,
            "fcnn_width" => sys.fcnn_width = parse_num(line, key, value)?,
            "lasso_nu" => sys.lasso_nu = parse_num(line, key, value)?,
            "amp_iters" => sys.amp_iters = parse_num(line, key, value)?,
            "batch_size" => train.batch_size = parse_num(line, key, value)?,
            "epochs" => train.epochs = parse_num(line, key, value)?,
            "lr" => train.learning_rate = parse_num(line, key, value)?,
            "lambda" => train.loss_weight = parse_num(line, key, value)?,
            "stage_weights" => train.stage_weights = parse_list(line, key, value)?,
            "train_eps" => train.train_eps = parse_num(line, key, value)?,
            "n_train" => train.n_train_samples = parse_num(line, key, value)?,
            "n_val" => train.n_val_samples = parse_num(line, key, value)?,
            "seed" => train.seed = parse_num(line, key, value)?,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown key {other:?}"),
                })
            }
        }
    }

    if let Some((line, d)) = explicit_d {
        if sys.scheme == Scheme::Coherent && d != sys.n_symbols() {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "D={d} inconsistent with J={} and {} ({} symbols)",
                    sys.n_bits,
                    sys.constellation.as_str(),
                    sys.n_symbols()
                ),
            });
        }
    }
    sys.validate()?;
    train.validate(sys.n_stages)?;
    Ok((sys, train))
}

pub fn parse_config(path: &Path) -> Result<(SystemConfig, TrainConfig)> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Serializes both configs with every key spelled out; parses back to equal values.
pub fn to_config_string(sys: &SystemConfig, train: &TrainConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("scheme", sys.scheme.as_str().into());
    kv("K", sys.n_devices.to_string());
    kv("L", sys.seq_len.to_string());
    kv("tau_coh", sys.coherence_len.to_string());
    kv("J", sys.n_bits.to_string());
    kv("eps", sys.activity_prob.to_string());
    kv("rho_dbm", sys.tx_power_dbm.to_string());
    kv("bandwidth_hz", sys.bandwidth_hz.to_string());
    kv("noise_psd_dbm_hz", sys.noise_psd_dbm_hz.to_string());
    kv("pathloss_a", sys.pathloss_a.to_string());
    kv("pathloss_b", sys.pathloss_b.to_string());
    kv("dist_min_m", sys.dist_min_m.to_string());
    kv("dist_max_m", sys.dist_max_m.to_string());
    kv("constellation", sys.constellation.as_str().into());
    kv("T", sys.n_stages.to_string());
    kv("tau_thr", sys.decision_threshold.to_string());
    kv("hidden", join(&sys.hidden_layers));
    kv("tie_devices", sys.tie_devices.to_string());
    kv("codebook_seed", sys.codebook_seed.to_string());
    kv("noiseless", sys.noiseless.to_string());
    kv("fcnn_layers", sys.fcnn_hidden_layers.to_string());
    kv("fcnn_width", sys.fcnn_width.to_string());
    kv("lasso_nu", sys.lasso_nu.to_string());
    kv("amp_iters", sys.amp_iters.to_string());
    kv("batch_size", train.batch_size.to_string());
    kv("epochs", train.epochs.to_string());
    kv("lr", train.learning_rate.to_string());
    kv("lambda", train.loss_weight.to_string());
    kv("stage_weights", join(&train.stage_weights));
    kv("train_eps", train.train_eps.to_string());
    kv("n_train", train.n_train_samples.to_string());
    kv("n_val", train.n_val_samples.to_string());
    kv("seed", train.seed.to_string());
    s
}
