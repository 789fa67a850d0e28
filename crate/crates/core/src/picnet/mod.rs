//! Learned parallel interference cancellation receivers.
//!
//! Three receiver graphs share one structure: `T` stages of per-device channel
//! estimation (CE) networks separated by interference cancellation (IC).
//!
//! * pilot-only: CE on pilot residuals, then a per-device activity (AD) network
//!   on the residual left after the last stage;
//! * data-aided: CE sees pilot and data residuals, a per-stage data detection
//!   (DD) network emits symbol probabilities, and data interference is cancelled
//!   with soft symbols;
//! * non-coherent: CE estimates the device channel, DD emits per-sequence
//!   probabilities, and cancellation weights each sequence by its probability.
//!
//! Everything runs on row batches and supports exact reverse-mode gradients
//! through the whole stage graph.

mod decide;
pub mod gradcheck;
pub mod graph;
mod loss;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{Constellation, Scheme, SystemConfig};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache, MlpGrads, MlpSpec, OutputActivation};
use crate::prep::{ScaledCodebook, StandardizedSet, Standardizer};
use crate::rng::{derived_rng, tag};

pub use decide::{activity_scores, finalize_data_aided, finalize_noncoherent, finalize_pilot, Decision};
pub use graph::ic_residual;
pub use loss::{joint_loss, Labels, LossSeeds, LossTerms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PicKind {
    PilotOnly,
    DataAided,
    NonCoherent,
}

impl PicKind {
    pub const ALL: [PicKind; 3] = [PicKind::PilotOnly, PicKind::DataAided, PicKind::NonCoherent];

    pub fn as_str(self) -> &'static str {
        match self {
            PicKind::PilotOnly => "pilot",
            PicKind::DataAided => "data-aided",
            PicKind::NonCoherent => "non-coherent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pilot" | "pilot-only" => Some(PicKind::PilotOnly),
            "data-aided" => Some(PicKind::DataAided),
            "non-coherent" | "nc" => Some(PicKind::NonCoherent),
            _ => None,
        }
    }

    pub fn scheme(self) -> Scheme {
        match self {
            PicKind::NonCoherent => Scheme::NonCoherent,
            _ => Scheme::Coherent,
        }
    }
}

/// Sizes that fix the shape of a receiver graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PicDims {
    pub n_devices: usize,
    pub seq_len: usize,
    pub n_stages: usize,
    /// D (coherent only).
    pub n_data: usize,
    /// |C| (coherent only).
    pub alphabet: usize,
    /// J
    pub n_bits: usize,
    /// 2^J (non-coherent only).
    pub n_seq: usize,
}

impl PicDims {
    pub fn from_config(kind: PicKind, sys: &SystemConfig) -> Result<Self> {
        if sys.scheme != kind.scheme() {
            return Err(Error::Config(format!(
                "{} receiver needs the {} scheme",
                kind.as_str(),
                kind.scheme().as_str()
            )));
        }
        Ok(Self {
            n_devices: sys.n_devices,
            seq_len: sys.seq_len,
            n_stages: sys.n_stages,
            n_data: sys.n_symbols(),
            alphabet: sys.constellation.size(),
            n_bits: sys.n_bits,
            n_seq: sys.sequences_per_device(),
        })
    }

    fn ce_inputs(&self, kind: PicKind) -> usize {
        match kind {
            PicKind::DataAided => 2 * self.seq_len * (self.n_data + 1),
            _ => 2 * self.seq_len,
        }
    }

    /// Width of the per-device probability block emitted by a DD module.
    pub fn dd_outputs(&self, kind: PicKind) -> usize {
        match kind {
            PicKind::DataAided => self.n_data * self.alphabet,
            PicKind::NonCoherent => self.n_seq,
            PicKind::PilotOnly => 0,
        }
    }

    fn dd_inputs(&self, kind: PicKind) -> usize {
        match kind {
            PicKind::DataAided => 2 * self.seq_len * self.n_data + 2,
            _ => 2 * self.seq_len + 2,
        }
    }
}

/// Shapes of every module of a receiver.
pub fn module_specs(kind: PicKind, dims: &PicDims, hidden: &[usize]) -> (MlpSpec, Option<MlpSpec>, Option<MlpSpec>) {
    let ce = MlpSpec::new(dims.ce_inputs(kind), hidden, 2, OutputActivation::Identity);
    let (dd, ad) = match kind {
        PicKind::PilotOnly => (None, Some(MlpSpec::new(2 * dims.seq_len, hidden, 1, OutputActivation::Sigmoid))),
        _ => (
            Some(MlpSpec::new(dims.dd_inputs(kind), hidden, dims.dd_outputs(kind), OutputActivation::Sigmoid)),
            None,
        ),
    };
    (ce, dd, ad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicModel {
    pub kind: PicKind,
    pub dims: PicDims,
    pub constellation: Constellation,
    pub hidden: Vec<usize>,
    /// One parameter set per stage shared by all devices.
    pub tied: bool,
    /// `ce[t][k]` (or `ce[t][0]` when tied).
    pub ce: Vec<Vec<Mlp>>,
    pub dd: Vec<Vec<Mlp>>,
    pub ad: Vec<Mlp>,
    pub standardizer: Standardizer,
    pub codebook: ScaledCodebook,
    pub threshold: f64,
    symbols: Vec<Complex64>,
    /// Synthesis matrix for the pilot (coherent) or the only (non-coherent) observation.
    m_main: Array2<f64>,
    m_data: Array2<f64>,
}

/// Values of every stage for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Per stage, `B x 2K` standardized channel estimates.
    pub gamma_hat: Vec<Array2<f64>>,
    /// Pilot-only: one `B x K` matrix of activity scores. Data-aided: per stage
    /// `B x K*D*|C|` (device-major, then slot, then symbol). Non-coherent: per
    /// stage `B x K*2^J`.
    pub probs: Vec<Array2<f64>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.gamma_hat.first().map(|g| g.nrows()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn concat(parts: Vec<Trace>) -> Trace {
        let stack = |get: &dyn Fn(&Trace) -> &Vec<Array2<f64>>| -> Vec<Array2<f64>> {
            let n = get(&parts[0]).len();
            (0..n)
                .map(|i| {
                    let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| get(p)[i].view()).collect();
                    concatenate(Axis(0), &views).expect("trace chunks share widths")
                })
                .collect()
        };
        Trace {
            gamma_hat: stack(&|t| &t.gamma_hat),
            probs: stack(&|t| &t.probs),
        }
    }
}

/// Module caches recorded during a training forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    ce: Vec<Vec<MlpCache>>,
    dd: Vec<Vec<MlpCache>>,
    ad: Vec<MlpCache>,
}

/// Gradients laid out like the model's modules.
#[derive(Debug, Clone, PartialEq)]
pub struct PicGrads {
    pub ce: Vec<Vec<MlpGrads>>,
    pub dd: Vec<Vec<MlpGrads>>,
    pub ad: Vec<MlpGrads>,
}

impl PicGrads {
    pub fn zeros_like(model: &PicModel) -> Self {
        let z = |v: &Vec<Vec<Mlp>>| -> Vec<Vec<MlpGrads>> {
            v.iter()
                .map(|stage| stage.iter().map(|m| MlpGrads::zeros(&m.spec)).collect())
                .collect()
        };
        Self {
            ce: z(&model.ce),
            dd: z(&model.dd),
            ad: model.ad.iter().map(|m| MlpGrads::zeros(&m.spec)).collect(),
        }
    }

    /// All gradient entries in the model's module order.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.ce
            .iter()
            .flatten()
            .chain(self.dd.iter().flatten())
            .chain(self.ad.iter())
            .flat_map(|g| g.iter())
    }
}

fn pair(g: &Array2<f64>, k: usize) -> ArrayView2<'_, f64> {
    g.slice(s![.., 2 * k..2 * k + 2])
}

fn add_cols(target: &mut Array2<f64>, start: usize, src: &ArrayView2<f64>) {
    let w = src.ncols();
    let mut dst = target.slice_mut(s![.., start..start + w]);
    dst += src;
}

impl PicModel {
    /// Fresh model with initialized modules and the default threshold.
    pub fn new(
        kind: PicKind,
        sys: &SystemConfig,
        standardizer: Standardizer,
        codebook: ScaledCodebook,
        seed: u64,
    ) -> Result<Self> {
        let dims = PicDims::from_config(kind, sys)?;
        let (ce_spec, dd_spec, ad_spec) = module_specs(kind, &dims, &sys.hidden_layers);
        let per_stage = if sys.tie_devices { 1 } else { dims.n_devices };
        let mut ordinal = 0u64;
        let mut next = |spec: &MlpSpec| {
            let m = Mlp::init(spec, &mut derived_rng(seed, tag::INIT, ordinal));
            ordinal += 1;
            m
        };
        let mut ce = Vec::with_capacity(dims.n_stages);
        for _ in 0..dims.n_stages {
            ce.push((0..per_stage).map(|_| next(&ce_spec)).collect::<Result<Vec<_>>>()?);
        }
        let mut dd = Vec::new();
        if let Some(spec) = &dd_spec {
            for _ in 0..dims.n_stages {
                dd.push((0..per_stage).map(|_| next(spec)).collect::<Result<Vec<_>>>()?);
            }
        }
        let ad = match &ad_spec {
            Some(spec) => (0..per_stage).map(|_| next(spec)).collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Self::assemble(
            kind,
            dims,
            sys.constellation,
            sys.hidden_layers.clone(),
            sys.tie_devices,
            ce,
            dd,
            ad,
            standardizer,
            codebook,
            sys.decision_threshold,
        )
    }

    /// Builds a model from existing modules, checking every shape.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        kind: PicKind,
        dims: PicDims,
        constellation: Constellation,
        hidden: Vec<usize>,
        tied: bool,
        ce: Vec<Vec<Mlp>>,
        dd: Vec<Vec<Mlp>>,
        ad: Vec<Mlp>,
        standardizer: Standardizer,
        codebook: ScaledCodebook,
        threshold: f64,
    ) -> Result<Self> {
        let (ce_spec, dd_spec, ad_spec) = module_specs(kind, &dims, &hidden);
        let per_stage = if tied { 1 } else { dims.n_devices };
        let check = |mods: &[Mlp], spec: &MlpSpec, what: &str| -> Result<()> {
            if mods.len() != per_stage || mods.iter().any(|m| &m.spec != spec) {
                return Err(Error::Dimension(format!(
                    "{what} modules do not match layer sizes {:?}",
                    spec.layer_sizes
                )));
            }
            Ok(())
        };
        if ce.len() != dims.n_stages {
            return Err(Error::Dimension(format!("{} CE stages, expected {}", ce.len(), dims.n_stages)));
        }
        for stage in &ce {
            check(stage, &ce_spec, "CE")?;
        }
        match &dd_spec {
            Some(spec) => {
                if dd.len() != dims.n_stages {
                    return Err(Error::Dimension("DD stage count mismatch".into()));
                }
                for stage in &dd {
                    check(stage, spec, "DD")?;
                }
            }
            None if !dd.is_empty() => return Err(Error::Dimension("unexpected DD modules".into())),
            None => {}
        }
        match &ad_spec {
            Some(spec) => check(&ad, spec, "AD")?,
            None if !ad.is_empty() => return Err(Error::Dimension("unexpected AD modules".into())),
            None => {}
        }
        if codebook.base.n_devices() != dims.n_devices
            || codebook.base.seq_len() != dims.seq_len
            || codebook.base.per_device() != dims.n_seq.max(1)
        {
            return Err(Error::Dimension(format!(
                "codebook ({} devices, L={}) does not fit K={} L={}",
                codebook.base.n_devices(),
                codebook.base.seq_len(),
                dims.n_devices,
                dims.seq_len
            )));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0,1)")));
        }
        let cols: Vec<&[Complex64]> = (0..codebook.base.n_columns()).map(|m| codebook.base.column(m)).collect();
        let (m_main, m_data) = match kind {
            PicKind::NonCoherent => (
                graph::synthesis_matrix(&cols, codebook.nc_scale),
                Array2::zeros((0, 0)),
            ),
            _ => (
                graph::synthesis_matrix(&cols, codebook.pilot_scale),
                graph::synthesis_matrix(&cols, codebook.data_scale),
            ),
        };
        Ok(Self {
            kind,
            dims,
            constellation,
            hidden,
            tied,
            ce,
            dd,
            ad,
            standardizer,
            codebook,
            threshold,
            symbols: constellation.symbols(),
            m_main,
            m_data,
        })
    }

    fn idx(&self, k: usize) -> usize {
        if self.tied {
            0
        } else {
            k
        }
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    /// Every module in checkpoint order: CE stage-major then device, DD likewise, then AD.
    pub fn modules(&self) -> impl Iterator<Item = &Mlp> {
        self.ce.iter().flatten().chain(self.dd.iter().flatten()).chain(self.ad.iter())
    }

    pub fn modules_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        self.ce
            .iter_mut()
            .flatten()
            .chain(self.dd.iter_mut().flatten())
            .chain(self.ad.iter_mut())
    }

    pub fn n_params(&self) -> usize {
        self.modules().map(|m| m.spec.n_params()).sum()
    }

    fn check_set(&self, set: &StandardizedSet) -> Result<()> {
        let width = 2 * self.dims.seq_len;
        let ok = |a: &Array2<f64>| a.ncols() == width;
        let fits = match self.kind {
            PicKind::PilotOnly => set.pilot.as_ref().is_some_and(ok),
            PicKind::DataAided => {
                set.pilot.as_ref().is_some_and(ok)
                    && set.data.len() == self.dims.n_data
                    && set.data.iter().all(ok)
            }
            PicKind::NonCoherent => set.nc.as_ref().is_some_and(ok),
        };
        if !fits {
            return Err(Error::Dimension(format!(
                "observations do not fit a {} receiver with L={}",
                self.kind.as_str(),
                self.dims.seq_len
            )));
        }
        Ok(())
    }

    /// Pilot (or non-coherent) residuals of every device given packed estimates.
    pub fn main_residuals(&self, y: &ArrayView2<f64>, packed: &Array2<f64>) -> Vec<Array2<f64>> {
        let per = if self.kind == PicKind::NonCoherent { self.dims.n_seq } else { 1 };
        graph::residuals(y, packed, &self.m_main, per)
    }

    pub fn data_residuals(&self, y: &ArrayView2<f64>, packed: &Array2<f64>) -> Vec<Array2<f64>> {
        graph::residuals(y, packed, &self.m_data, 1)
    }

    /// Soft data contribution `gamma_hat_i * sum_c x_c p_{d,i,c}` packed as `B x 2K`.
    pub fn soft_data_estimates(&self, gamma_hat: &Array2<f64>, probs: &Array2<f64>, slot: usize) -> Array2<f64> {
        let (k_n, c_n, d_n) = (self.dims.n_devices, self.dims.alphabet, self.dims.n_data);
        let bpsk = self.constellation == Constellation::Bpsk;
        let mut out = Array2::zeros((gamma_hat.nrows(), 2 * k_n));
        for b in 0..gamma_hat.nrows() {
            for k in 0..k_n {
                let base = k * d_n * c_n + slot * c_n;
                let q = if bpsk {
                    [probs[[b, base]] - probs[[b, base + 1]], 0.0]
                } else {
                    let mut q = Complex64::new(0.0, 0.0);
                    for c in 0..c_n {
                        q += self.symbols[c] * probs[[b, base + c]];
                    }
                    [q.re, q.im]
                };
                let u = graph::complex_mul([gamma_hat[[b, 2 * k]], gamma_hat[[b, 2 * k + 1]]], q);
                out[[b, 2 * k]] = u[0];
                out[[b, 2 * k + 1]] = u[1];
            }
        }
        out
    }

    /// Non-coherent cancellation estimates `gamma_hat_i * p_{i,j}` packed as `B x 2K*2^J`.
    pub fn weighted_sequence_estimates(&self, gamma_hat: &Array2<f64>, probs: &Array2<f64>) -> Array2<f64> {
        let (k_n, j_n) = (self.dims.n_devices, self.dims.n_seq);
        let mut out = Array2::zeros((gamma_hat.nrows(), 2 * k_n * j_n));
        for b in 0..gamma_hat.nrows() {
            for k in 0..k_n {
                for j in 0..j_n {
                    let p = probs[[b, k * j_n + j]];
                    let col = 2 * (k * j_n + j);
                    out[[b, col]] = gamma_hat[[b, 2 * k]] * p;
                    out[[b, col + 1]] = gamma_hat[[b, 2 * k + 1]] * p;
                }
            }
        }
        out
    }

    fn eval(m: &Mlp, x: &Array2<f64>, tape: Option<&mut Vec<MlpCache>>) -> Result<Array2<f64>> {
        match tape {
            Some(t) => {
                let c = m.forward(x)?;
                let out = c.output().clone();
                t.push(c);
                Ok(out)
            }
            None => m.predict(x),
        }
    }

    /// Runs the receiver graph on a batch, optionally recording a tape for [`PicModel::backward`].
    pub fn forward(&self, set: &StandardizedSet, record: bool) -> Result<(Trace, Option<Tape>)> {
        self.check_set(set)?;
        let b = set.len();
        let (k_n, t_n) = (self.dims.n_devices, self.dims.n_stages);
        let mut tape = Tape {
            ce: Vec::new(),
            dd: Vec::new(),
            ad: Vec::new(),
        };
        let mut gamma_hat: Vec<Array2<f64>> = Vec::with_capacity(t_n);
        let mut probs: Vec<Array2<f64>> = Vec::new();
        let main = match self.kind {
            PicKind::NonCoherent => set.nc.as_ref().unwrap(),
            _ => set.pilot.as_ref().unwrap(),
        };
        for t in 0..t_n {
            let prev_main = match (self.kind, t) {
                (_, 0) if self.kind == PicKind::NonCoherent => Array2::zeros((b, 2 * k_n * self.dims.n_seq)),
                (_, 0) => Array2::zeros((b, 2 * k_n)),
                (PicKind::NonCoherent, _) => self.weighted_sequence_estimates(&gamma_hat[t - 1], &probs[t - 1]),
                _ => gamma_hat[t - 1].clone(),
            };
            let res = self.main_residuals(&main.view(), &prev_main);
            let data_res: Vec<Vec<Array2<f64>>> = if self.kind == PicKind::DataAided {
                (0..self.dims.n_data)
                    .map(|d| {
                        let packed = if t == 0 {
                            Array2::zeros((b, 2 * k_n))
                        } else {
                            self.soft_data_estimates(&gamma_hat[t - 1], &probs[t - 1], d)
                        };
                        self.data_residuals(&set.data[d].view(), &packed)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let mut g_t = Array2::zeros((b, 2 * k_n));
            let mut ce_tape = Vec::new();
            for k in 0..k_n {
                let input = if self.kind == PicKind::DataAided {
                    let mut views = vec![res[k].view()];
                    views.extend(data_res.iter().map(|d| d[k].view()));
                    concatenate(Axis(1), &views).unwrap()
                } else {
                    res[k].clone()
                };
                let out = Self::eval(&self.ce[t][self.idx(k)], &input, record.then_some(&mut ce_tape))?;
                g_t.slice_mut(s![.., 2 * k..2 * k + 2]).assign(&out);
            }
            tape.ce.push(ce_tape);
            if self.kind != PicKind::PilotOnly {
                let width = self.dims.dd_outputs(self.kind);
                let mut p_t = Array2::zeros((b, k_n * width));
                let mut dd_tape = Vec::new();
                for k in 0..k_n {
                    let mut views: Vec<ArrayView2<f64>> = if self.kind == PicKind::DataAided {
                        data_res.iter().map(|d| d[k].view()).collect()
                    } else {
                        vec![res[k].view()]
                    };
                    views.push(pair(&g_t, k));
                    let input = concatenate(Axis(1), &views).unwrap();
                    let out = Self::eval(&self.dd[t][self.idx(k)], &input, record.then_some(&mut dd_tape))?;
                    p_t.slice_mut(s![.., k * width..(k + 1) * width]).assign(&out);
                }
                tape.dd.push(dd_tape);
                probs.push(p_t);
            }
            gamma_hat.push(g_t);
        }
        if self.kind == PicKind::PilotOnly {
            let res = self.main_residuals(&main.view(), &gamma_hat[t_n - 1]);
            let mut scores = Array2::zeros((b, k_n));
            for k in 0..k_n {
                let out = Self::eval(&self.ad[self.idx(k)], &res[k], record.then_some(&mut tape.ad))?;
                scores.slice_mut(s![.., k..k + 1]).assign(&out);
            }
            probs.push(scores);
        }
        let trace = Trace { gamma_hat, probs };
        Ok((trace, record.then_some(tape)))
    }

    /// Inference over an arbitrarily large set, chunked and spread over the rayon pool.
    pub fn predict(&self, set: &StandardizedSet) -> Result<Trace> {
        const CHUNK: usize = 2048;
        self.check_set(set)?;
        let n = set.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty observation set".into()));
        }
        let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
        let parts = starts
            .par_iter()
            .map(|&start| {
                let rows: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
                self.forward(&set.select(&rows), false).map(|(t, _)| t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trace::concat(parts))
    }

    /// Back-propagates loss seeds through the recorded graph.
    pub fn backward(&self, trace: &Trace, tape: &Tape, seeds: &LossSeeds) -> Result<PicGrads> {
        let (k_n, t_n, l2) = (self.dims.n_devices, self.dims.n_stages, 2 * self.dims.seq_len);
        let mut grads = PicGrads::zeros_like(self);
        let mut d_gamma = seeds.gamma_hat.clone();
        let mut d_probs = seeds.probs.clone();
        let b = trace.len();
        if self.kind == PicKind::PilotOnly {
            let mut d_res = Vec::with_capacity(k_n);
            for k in 0..k_n {
                let seed = d_probs[0].slice(s![.., k..k + 1]).to_owned();
                let (g, gin) = self.ad[self.idx(k)].backward(&tape.ad[k], &seed)?;
                grads.ad[self.idx(k)].add_assign(&g);
                d_res.push(gin);
            }
            d_gamma[t_n - 1] += &graph::residuals_adjoint(&d_res, &self.m_main, 1);
        }
        for t in (0..t_n).rev() {
            let n_dd = if self.kind == PicKind::DataAided { self.dims.n_data } else { 0 };
            let mut d_res: Vec<Array2<f64>> = vec![Array2::zeros((b, l2)); k_n];
            let mut d_data: Vec<Vec<Array2<f64>>> = vec![vec![Array2::zeros((b, l2)); k_n]; n_dd];
            if self.kind != PicKind::PilotOnly {
                let width = self.dims.dd_outputs(self.kind);
                for k in 0..k_n {
                    let seed = d_probs[t].slice(s![.., k * width..(k + 1) * width]).to_owned();
                    let (g, gin) = self.dd[t][self.idx(k)].backward(&tape.dd[t][k], &seed)?;
                    grads.dd[t][self.idx(k)].add_assign(&g);
                    if self.kind == PicKind::DataAided {
                        for (d, dd) in d_data.iter_mut().enumerate() {
                            dd[k] += &gin.slice(s![.., d * l2..(d + 1) * l2]);
                        }
                        add_cols(&mut d_gamma[t], 2 * k, &gin.slice(s![.., n_dd * l2..]));
                    } else {
                        d_res[k] += &gin.slice(s![.., ..l2]);
                        add_cols(&mut d_gamma[t], 2 * k, &gin.slice(s![.., l2..]));
                    }
                }
            }
            for k in 0..k_n {
                let seed = pair(&d_gamma[t], k).to_owned();
                let (g, gin) = self.ce[t][self.idx(k)].backward(&tape.ce[t][k], &seed)?;
                grads.ce[t][self.idx(k)].add_assign(&g);
                d_res[k] += &gin.slice(s![.., ..l2]);
                for (d, dd) in d_data.iter_mut().enumerate() {
                    dd[k] += &gin.slice(s![.., (d + 1) * l2..(d + 2) * l2]);
                }
            }
            if t == 0 {
                break;
            }
            match self.kind {
                PicKind::PilotOnly => {
                    d_gamma[t - 1] += &graph::residuals_adjoint(&d_res, &self.m_main, 1);
                }
                PicKind::DataAided => {
                    d_gamma[t - 1] += &graph::residuals_adjoint(&d_res, &self.m_main, 1);
                    for (d, dd) in d_data.iter().enumerate() {
                        let d_u = graph::residuals_adjoint(dd, &self.m_data, 1);
                        self.soft_data_adjoint(&trace.gamma_hat[t - 1], &trace.probs[t - 1], d, &d_u, &mut d_gamma[t - 1], &mut d_probs[t - 1]);
                    }
                }
                PicKind::NonCoherent => {
                    let d_u = graph::residuals_adjoint(&d_res, &self.m_main, self.dims.n_seq);
                    self.sequence_adjoint(&trace.gamma_hat[t - 1], &trace.probs[t - 1], &d_u, &mut d_gamma[t - 1], &mut d_probs[t - 1]);
                }
            }
        }
        Ok(grads)
    }

    fn soft_data_adjoint(
        &self,
        gamma_hat: &Array2<f64>,
        probs: &Array2<f64>,
        slot: usize,
        d_u: &Array2<f64>,
        d_gamma: &mut Array2<f64>,
        d_probs: &mut Array2<f64>,
    ) {
        let (k_n, c_n, d_n) = (self.dims.n_devices, self.dims.alphabet, self.dims.n_data);
        for b in 0..gamma_hat.nrows() {
            for k in 0..k_n {
                let base = k * d_n * c_n + slot * c_n;
                let mut q = Complex64::new(0.0, 0.0);
                for c in 0..c_n {
                    q += self.symbols[c] * probs[[b, base + c]];
                }
                let g = Complex64::new(gamma_hat[[b, 2 * k]], gamma_hat[[b, 2 * k + 1]]);
                let gu = Complex64::new(d_u[[b, 2 * k]], d_u[[b, 2 * k + 1]]);
                // For u = g q: dL/dg = gu conj(q), dL/dq = gu conj(g).
                let dg = gu * q.conj();
                d_gamma[[b, 2 * k]] += dg.re;
                d_gamma[[b, 2 * k + 1]] += dg.im;
                let dq = gu * g.conj();
                for c in 0..c_n {
                    let x = self.symbols[c];
                    d_probs[[b, base + c]] += dq.re * x.re + dq.im * x.im;
                }
            }
        }
    }

    fn sequence_adjoint(
        &self,
        gamma_hat: &Array2<f64>,
        probs: &Array2<f64>,
        d_u: &Array2<f64>,
        d_gamma: &mut Array2<f64>,
        d_probs: &mut Array2<f64>,
    ) {
        let (k_n, j_n) = (self.dims.n_devices, self.dims.n_seq);
        for b in 0..gamma_hat.nrows() {
            for k in 0..k_n {
                let g = [gamma_hat[[b, 2 * k]], gamma_hat[[b, 2 * k + 1]]];
                for j in 0..j_n {
                    let col = 2 * (k * j_n + j);
                    let du = [d_u[[b, col]], d_u[[b, col + 1]]];
                    let p = probs[[b, k * j_n + j]];
                    d_gamma[[b, 2 * k]] += du[0] * p;
                    d_gamma[[b, 2 * k + 1]] += du[1] * p;
                    d_probs[[b, k * j_n + j]] += du[0] * g[0] + du[1] * g[1];
                }
            }
        }
    }

    /// Rounds every parameter to single precision, the checkpoint storage format.
    pub fn quantize_f32(&mut self) {
        self.modules_mut().for_each(|m| m.quantize_f32());
    }
}
