//! Joint regression/classification loss and its output gradients.

use ndarray::{Array2, Axis};

use super::{PicDims, PicKind, Trace};
use crate::error::{Error, Result};
use crate::nn::{bce, bce_grad};
use crate::prep::Standardizer;
use crate::sysmodel::{bits_to_index, Sample};

/// Training targets for a batch, aligned row by row with a standardized set.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    /// `B x 2K` standardized channels.
    pub gamma: Array2<f64>,
    /// `B x K` activity indicators.
    pub active: Array2<f64>,
    /// `B x K*D*|C|` symbol indicators `e_{k,d,c}` (coherent).
    pub symbols: Array2<f64>,
    /// `B x K*2^J` sequence indicators `a_{k,j}` (non-coherent).
    pub sequences: Array2<f64>,
}

impl Labels {
    pub fn from_samples(samples: &[Sample], std: &Standardizer, kind: PicKind, dims: &PicDims) -> Result<Self> {
        let (b, k_n) = (samples.len(), dims.n_devices);
        let mut gamma = Array2::zeros((b, 2 * k_n));
        let mut active = Array2::zeros((b, k_n));
        let sym_w = if kind == PicKind::DataAided { k_n * dims.n_data * dims.alphabet } else { 0 };
        let seq_w = if kind == PicKind::NonCoherent { k_n * dims.n_seq } else { 0 };
        let mut symbols = Array2::zeros((b, sym_w));
        let mut sequences = Array2::zeros((b, seq_w));
        let bps = dims.n_bits.checked_div(dims.n_data).unwrap_or(0);
        for (row, s) in samples.iter().enumerate() {
            if s.realization.n_devices() != k_n {
                return Err(Error::Dimension(format!(
                    "sample has {} devices, receiver {k_n}",
                    s.realization.n_devices()
                )));
            }
            for k in 0..k_n {
                let g = s.realization.gamma[k];
                gamma[[row, 2 * k]] = g.re / std.sigma_gamma;
                gamma[[row, 2 * k + 1]] = g.im / std.sigma_gamma;
                if !s.realization.active[k] {
                    continue;
                }
                active[[row, k]] = 1.0;
                let bits = &s.bits[k * dims.n_bits..(k + 1) * dims.n_bits];
                if sym_w > 0 {
                    for d in 0..dims.n_data {
                        let c = bits_to_index(&bits[d * bps..(d + 1) * bps]);
                        symbols[[row, k * dims.n_data * dims.alphabet + d * dims.alphabet + c]] = 1.0;
                    }
                }
                if seq_w > 0 {
                    sequences[[row, k * dims.n_seq + bits_to_index(bits)]] = 1.0;
                }
            }
        }
        Ok(Self {
            gamma,
            active,
            symbols,
            sequences,
        })
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            gamma: self.gamma.select(Axis(0), rows),
            active: self.active.select(Axis(0), rows),
            symbols: self.symbols.select(Axis(0), rows),
            sequences: self.sequences.select(Axis(0), rows),
        }
    }

    pub fn len(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Batch-mean loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub reg: f64,
    pub class: f64,
}

/// Gradient of the batch-mean loss with respect to every trace output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSeeds {
    pub gamma_hat: Vec<Array2<f64>>,
    pub probs: Vec<Array2<f64>>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `lambda * L_class + (1 - lambda) * L_reg`, averaged over the batch.
pub fn joint_loss(
    kind: PicKind,
    trace: &Trace,
    labels: &Labels,
    lambda: f64,
    stage_weights: &[f64],
) -> Result<(LossTerms, LossSeeds)> {
    let b = labels.len();
    let t_n = trace.gamma_hat.len();
    if trace.len() != b || b == 0 {
        return Err(Error::Dimension(format!("trace has {} rows, labels {b}", trace.len())));
    }
    if stage_weights.len() != t_n {
        return Err(Error::Dimension(format!("{} stage weights for {t_n} stages", stage_weights.len())));
    }
    let k_n = labels.active.ncols();
    let inv_b = 1.0 / b as f64;
    let mut reg = 0.0;
    let mut d_gamma = Vec::with_capacity(t_n);
    for (t, g) in trace.gamma_hat.iter().enumerate() {
        if g.dim() != labels.gamma.dim() {
            return Err(Error::Dimension("channel estimates and labels differ in shape".into()));
        }
        let scale = stage_weights[t] / (2.0 * k_n as f64);
        let diff = g - &labels.gamma;
        reg += scale * diff.iter().map(|x| x.abs()).sum::<f64>();
        d_gamma.push(diff.mapv(|x| (1.0 - lambda) * scale * inv_b * sign(x)));
    }
    reg *= inv_b;
    let (targets, norm) = match kind {
        PicKind::PilotOnly => (&labels.active, k_n as f64),
        PicKind::DataAided => (&labels.symbols, labels.symbols.ncols() as f64),
        PicKind::NonCoherent => (&labels.sequences, labels.sequences.ncols() as f64),
    };
    let mut class = 0.0;
    let mut d_probs = Vec::with_capacity(trace.probs.len());
    for p in &trace.probs {
        if p.dim() != targets.dim() {
            return Err(Error::Dimension(format!(
                "probabilities {:?} do not match labels {:?}",
                p.dim(),
                targets.dim()
            )));
        }
        let mut d = Array2::zeros(p.raw_dim());
        ndarray::Zip::from(&mut d).and(p).and(targets).for_each(|d, &p, &y| {
            class += bce(p, y);
            *d = lambda * inv_b / norm * bce_grad(p, y);
        });
        d_probs.push(d);
    }
    class *= inv_b / norm;
    let terms = LossTerms {
        total: lambda * class + (1.0 - lambda) * reg,
        reg,
        class,
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (regression {}, classification {})",
            terms.reg, terms.class
        )));
    }
    Ok((
        terms,
        LossSeeds {
            gamma_hat: d_gamma,
            probs: d_probs,
        },
    ))
}
