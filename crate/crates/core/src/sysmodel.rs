//! Devices, channels, spreading codebooks and received signals.
//!
//! All signals are produced in noise-normalized units: received samples and
//! effective channels are divided by `sqrt(sigma_n^2)`, so the receiver noise
//! has unit variance per complex entry.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::{Scheme, SystemConfig};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, tag, SimRng};

/// Unit-norm spreading sequences stored column-major.
///
/// Non-coherent codebooks are device-major: column `k * 2^J + j` is `s_{k,j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadingCodebook {
    seq_len: usize,
    per_device: usize,
    data: Vec<Complex64>,
}

impl SpreadingCodebook {
    /// Builds a codebook from explicit columns; each column is normalized.
    pub fn from_columns(columns: &[Vec<Complex64>], per_device: usize) -> Result<Self> {
        let seq_len = columns.first().map(|c| c.len()).unwrap_or(0);
        if seq_len == 0 || columns.is_empty() {
            return Err(Error::InvalidArgument("codebook needs at least one non-empty column".into()));
        }
        if per_device == 0 || !columns.len().is_multiple_of(per_device) {
            return Err(Error::Dimension(format!(
                "{} columns is not a multiple of {per_device} sequences per device",
                columns.len()
            )));
        }
        let mut data = Vec::with_capacity(seq_len * columns.len());
        for c in columns {
            if c.len() != seq_len {
                return Err(Error::Dimension("codebook columns differ in length".into()));
            }
            let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Degenerate("zero codebook column".into()));
            }
            data.extend(c.iter().map(|z| z / norm));
        }
        Ok(Self {
            seq_len,
            per_device,
            data,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn n_columns(&self) -> usize {
        self.data.len() / self.seq_len
    }

    pub fn per_device(&self) -> usize {
        self.per_device
    }

    pub fn n_devices(&self) -> usize {
        self.n_columns() / self.per_device
    }

    pub fn column(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.seq_len..(m + 1) * self.seq_len]
    }

    /// `s_{k,j}`; for coherent codebooks only `j = 0` exists.
    pub fn device_column(&self, k: usize, j: usize) -> &[Complex64] {
        self.column(k * self.per_device + j)
    }
}

/// Draws every entry from CN(0, 1/L) and normalizes each column.
pub fn generate_codebook(config: &SystemConfig, seed: u64) -> Result<SpreadingCodebook> {
    if config.seq_len == 0 || config.n_devices == 0 {
        return Err(Error::InvalidArgument("codebook needs L >= 1 and K >= 1".into()));
    }
    let mut rng = derived_rng(seed, tag::CODEBOOK, 0);
    let l = config.seq_len;
    let std = (0.5 / l as f64).sqrt();
    let columns: Vec<Vec<Complex64>> = (0..config.n_columns())
        .map(|_| {
            (0..l)
                .map(|_| Complex64::new(std * normal(&mut rng), std * normal(&mut rng)))
                .collect()
        })
        .collect();
    SpreadingCodebook::from_columns(&columns, config.sequences_per_device())
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Circularly-symmetric complex Gaussian with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    Complex64::new(s * normal(rng), s * normal(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub distances_m: Vec<f64>,
    /// Linear large-scale power gain.
    pub large_scale: Vec<f64>,
    /// CN(0,1) small-scale fading.
    pub small_scale: Vec<Complex64>,
    pub active: Vec<bool>,
    /// Chosen sequence index per active device (non-coherent scheme only).
    pub sequence: Vec<Option<usize>>,
    /// Effective channel in noise-normalized units; exactly zero for inactive devices.
    pub gamma: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn n_devices(&self) -> usize {
        self.active.len()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// The indicator a_{k,j}.
    pub fn chooses(&self, k: usize, j: usize) -> bool {
        self.sequence[k] == Some(j)
    }

    /// Channel variance `A^2 beta_k` in normalized units, the prior of sparse solvers.
    pub fn prior_variance(&self, config: &SystemConfig) -> Vec<f64> {
        let a2 = config.normalized_amplitude().powi(2);
        self.large_scale.iter().map(|b| a2 * b).collect()
    }
}

pub fn sample_channels_with<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> ChannelRealization {
    let k = config.n_devices;
    let amp = config.normalized_amplitude();
    let n_seq = config.sequences_per_device();
    let mut out = ChannelRealization {
        distances_m: Vec::with_capacity(k),
        large_scale: Vec::with_capacity(k),
        small_scale: Vec::with_capacity(k),
        active: Vec::with_capacity(k),
        sequence: Vec::with_capacity(k),
        gamma: Vec::with_capacity(k),
    };
    for _ in 0..k {
        let d = rng.random_range(config.dist_min_m..=config.dist_max_m);
        let beta = 10f64.powf(config.pathloss_db(d) / 10.0);
        let h = complex_normal(rng, 1.0);
        let active = rng.random::<f64>() < config.activity_prob;
        let seq = match (config.scheme, active) {
            (Scheme::NonCoherent, true) => Some(rng.random_range(0..n_seq)),
            _ => None,
        };
        let gamma = if active {
            h * (amp * beta.sqrt())
        } else {
            Complex64::new(0.0, 0.0)
        };
        out.distances_m.push(d);
        out.large_scale.push(beta);
        out.small_scale.push(h);
        out.active.push(active);
        out.sequence.push(seq);
        out.gamma.push(gamma);
    }
    out
}

pub fn sample_channels(config: &SystemConfig, seed: u64) -> ChannelRealization {
    sample_channels_with(config, &mut derived_rng(seed, tag::SAMPLE, u64::MAX))
}

fn noise_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, enabled: bool) -> Vec<Complex64> {
    if enabled {
        (0..n).map(|_| complex_normal(rng, 1.0)).collect()
    } else {
        vec![Complex64::new(0.0, 0.0); n]
    }
}

/// Pilot and data observations of the coherent scheme.
///
/// `symbols` is K x D row-major; rows of inactive devices must be zero.
pub fn simulate_coherent<R: Rng + ?Sized>(
    config: &SystemConfig,
    codebook: &SpreadingCodebook,
    realization: &ChannelRealization,
    symbols: &[Complex64],
    rng: &mut R,
) -> Result<(Vec<Complex64>, Vec<Vec<Complex64>>)> {
    let k = realization.n_devices();
    let d = config.n_symbols();
    if codebook.n_columns() != k || codebook.per_device() != 1 {
        return Err(Error::Dimension(format!(
            "coherent codebook has {} columns for {k} devices",
            codebook.n_columns()
        )));
    }
    if symbols.len() != k * d {
        return Err(Error::Dimension(format!(
            "expected {} symbols, got {}",
            k * d,
            symbols.len()
        )));
    }
    let l = codebook.seq_len();
    let noisy = !config.noiseless;
    let mut pilot = noise_vec(rng, l, noisy);
    let mut data: Vec<Vec<Complex64>> = (0..d).map(|_| noise_vec(rng, l, noisy)).collect();
    for dev in 0..k {
        let g = realization.gamma[dev];
        if g == Complex64::new(0.0, 0.0) {
            continue;
        }
        let s = codebook.column(dev);
        for (y, &si) in pilot.iter_mut().zip(s) {
            *y += si * g;
        }
        for (dd, row) in data.iter_mut().enumerate() {
            let gx = g * symbols[dev * d + dd];
            for (y, &si) in row.iter_mut().zip(s) {
                *y += si * gx;
            }
        }
    }
    Ok((pilot, data))
}

/// Observation of the non-coherent scheme.
pub fn simulate_noncoherent<R: Rng + ?Sized>(
    config: &SystemConfig,
    codebook: &SpreadingCodebook,
    realization: &ChannelRealization,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let k = realization.n_devices();
    if codebook.n_devices() != k || realization.sequence.len() != k {
        return Err(Error::Dimension(format!(
            "non-coherent codebook covers {} devices, realization has {k}",
            codebook.n_devices()
        )));
    }
    for dev in 0..k {
        match (realization.active[dev], realization.sequence[dev]) {
            (true, Some(j)) if j < codebook.per_device() => {}
            (false, None) => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "device {dev}: sequence choice violates sum_j a_kj = a_k"
                )))
            }
        }
    }
    let mut y = noise_vec(rng, codebook.seq_len(), !config.noiseless);
    for dev in 0..k {
        if let Some(j) = realization.sequence[dev] {
            let g = realization.gamma[dev];
            for (yi, &si) in y.iter_mut().zip(codebook.device_column(dev, j)) {
                *yi += si * g;
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Received {
    Coherent {
        pilot: Vec<Complex64>,
        /// D observations of length L.
        data: Vec<Vec<Complex64>>,
    },
    NonCoherent {
        signal: Vec<Complex64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub realization: ChannelRealization,
    /// K x J row-major.
    pub bits: Vec<u8>,
    /// K x D row-major (coherent only).
    pub symbols: Vec<Complex64>,
    pub rx: Received,
}

impl Sample {
    pub fn pilot(&self) -> Option<&[Complex64]> {
        match &self.rx {
            Received::Coherent { pilot, .. } => Some(pilot),
            Received::NonCoherent { .. } => None,
        }
    }

    pub fn data(&self) -> Option<&[Vec<Complex64>]> {
        match &self.rx {
            Received::Coherent { data, .. } => Some(data),
            Received::NonCoherent { .. } => None,
        }
    }

    pub fn nc_signal(&self) -> Option<&[Complex64]> {
        match &self.rx {
            Received::NonCoherent { signal } => Some(signal),
            Received::Coherent { .. } => None,
        }
    }
}

/// Maps J bits (big-endian) onto the index of a sequence or symbol.
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
}

pub fn index_to_bits(index: usize, n_bits: usize, out: &mut [u8]) {
    for (i, b) in out.iter_mut().take(n_bits).enumerate() {
        *b = ((index >> (n_bits - 1 - i)) & 1) as u8;
    }
}

/// Generates sample `index` of the stream identified by `seed`.
pub fn generate_sample(
    config: &SystemConfig,
    codebook: &SpreadingCodebook,
    seed: u64,
    index: u64,
) -> Result<Sample> {
    let mut rng: SimRng = derived_rng(seed, tag::SAMPLE, index);
    let mut realization = sample_channels_with(config, &mut rng);
    while realization.n_active() == 0 {
        realization = sample_channels_with(config, &mut rng);
    }
    let k = config.n_devices;
    let j = config.n_bits;
    let mut bits = vec![0u8; k * j];
    for b in bits.iter_mut() {
        *b = rng.random_range(0..2u8);
    }
    match config.scheme {
        Scheme::Coherent => {
            let d = config.n_symbols();
            let bps = config.constellation.bits_per_symbol();
            let alphabet = config.constellation.symbols();
            let mut symbols = vec![Complex64::new(0.0, 0.0); k * d];
            for dev in 0..k {
                if !realization.active[dev] {
                    continue;
                }
                for dd in 0..d {
                    let chunk = &bits[dev * j + dd * bps..dev * j + (dd + 1) * bps];
                    symbols[dev * d + dd] = alphabet[bits_to_index(chunk)];
                }
            }
            let (pilot, data) = simulate_coherent(config, codebook, &realization, &symbols, &mut rng)?;
            Ok(Sample {
                realization,
                bits,
                symbols,
                rx: Received::Coherent { pilot, data },
            })
        }
        Scheme::NonCoherent => {
            // The chosen sequence is the one the bits select.
            for dev in 0..k {
                if realization.active[dev] {
                    realization.sequence[dev] = Some(bits_to_index(&bits[dev * j..(dev + 1) * j]));
                }
            }
            let signal = simulate_noncoherent(config, codebook, &realization, &mut rng)?;
            Ok(Sample {
                realization,
                bits,
                symbols: Vec::new(),
                rx: Received::NonCoherent { signal },
            })
        }
    }
}

/// Samples `offset..offset + n` of the stream identified by `(config, seed)`.
///
/// Every sample has at least one active device; samples are generated in parallel
/// but the output depends only on the arguments.
pub fn generate_range(
    config: &SystemConfig,
    codebook: &SpreadingCodebook,
    offset: u64,
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_sample(config, codebook, seed, offset + i))
        .collect()
}

pub fn generate_dataset(
    config: &SystemConfig,
    codebook: &SpreadingCodebook,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    generate_range(config, codebook, 0, n_samples, seed)
}
