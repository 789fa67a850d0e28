//! Training loops for the PIC receivers and the plain FCNN baseline, and threshold calibration.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::config::{Scheme, SystemConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{bce, bce_grad, Adam, Mlp, MlpSpec, OutputActivation};
use crate::picnet::{activity_scores, joint_loss, Labels, PicGrads, PicKind, PicModel};
use crate::prep::{fit_standardizer, standardize, StandardizedSet, Standardizer};
use crate::rng::{derive_seed, derived_rng, tag};
use crate::sysmodel::{generate_codebook, generate_dataset, Sample, SpreadingCodebook};

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_reg: f64,
    pub mean_class: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,mean_loss,mean_reg_loss,mean_class_loss,wall_time_s";

    /// CSV text; with `timing` off the wall-time column is written as 0.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            let t = if timing { r.wall_time_s } else { 0.0 };
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.mean_loss, r.mean_reg, r.mean_class, t);
        }
        out
    }
}

/// The spreading codebook shared by training, validation and test data.
pub fn system_codebook(sys: &SystemConfig) -> Result<SpreadingCodebook> {
    generate_codebook(sys, sys.codebook_seed)
}

/// Training samples drawn at the training activity probability.
pub fn training_samples(sys: &SystemConfig, train: &TrainConfig, codebook: &SpreadingCodebook) -> Result<Vec<Sample>> {
    let mut cfg = sys.clone();
    cfg.activity_prob = train.train_eps;
    generate_dataset(&cfg, codebook, train.n_train_samples, derive_seed(train.seed, tag::TRAIN_SET, 0))
}

/// Validation samples drawn at the evaluation activity probability of `sys`.
pub fn validation_samples(sys: &SystemConfig, train: &TrainConfig, codebook: &SpreadingCodebook) -> Result<Vec<Sample>> {
    generate_dataset(sys, codebook, train.n_val_samples, derive_seed(train.seed, tag::VAL_SET, 0))
}

fn check_kind(kind: PicKind, sys: &SystemConfig) -> Result<()> {
    if kind.scheme() != sys.scheme {
        return Err(Error::Config(format!(
            "{} receiver needs the {} scheme",
            kind.as_str(),
            kind.scheme().as_str()
        )));
    }
    Ok(())
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, tag::SHUFFLE, epoch as u64));
    order
}

fn grads_in_order(g: &PicGrads) -> impl Iterator<Item = &crate::nn::MlpGrads> {
    g.ce.iter().flatten().chain(g.dd.iter().flatten()).chain(g.ad.iter())
}

/// Generates data from the configs and trains a receiver of the given kind.
pub fn train(kind: PicKind, sys: &SystemConfig, train: &TrainConfig) -> Result<(PicModel, TrainLog)> {
    check_kind(kind, sys)?;
    sys.validate()?;
    train.validate(sys.n_stages)?;
    let codebook = system_codebook(sys)?;
    let samples = training_samples(sys, train, &codebook)?;
    train_on(kind, sys, train, &codebook, &samples, |_| {})
}

/// Trains a receiver on the given samples, reporting each finished epoch to `progress`.
///
/// Fits the standardizer on `samples`, initializes every module from the training
/// seed, and runs shuffled mini-batch epochs with one Adam step per module and batch.
/// Parameters are rounded to `f32` at the end so that checkpoints reload exactly.
pub fn train_on(
    kind: PicKind,
    sys: &SystemConfig,
    train: &TrainConfig,
    codebook: &SpreadingCodebook,
    samples: &[Sample],
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(PicModel, TrainLog)> {
    check_kind(kind, sys)?;
    train.validate(sys.n_stages)?;
    let weights = train.weights_for(sys.n_stages)?;
    let std = fit_standardizer(samples)?;
    let (set, scb) = standardize(samples, codebook, &std)?;
    let mut model = PicModel::new(kind, sys, std, scb, derive_seed(train.seed, tag::INIT, 0))?;
    let labels = Labels::from_samples(samples, &model.standardizer, kind, &model.dims)?;
    let mut adams: Vec<Adam> = model.modules().map(|m| Adam::for_mlp(m, train.learning_rate)).collect();
    let mut log = TrainLog::default();
    let start = Instant::now();
    for epoch in 0..train.epochs {
        let order = epoch_order(set.len(), train.seed, epoch);
        let (mut sum, mut sum_reg, mut sum_class, mut n_batches) = (0.0, 0.0, 0.0, 0usize);
        for (bi, rows) in order.chunks(train.batch_size).enumerate() {
            let batch = set.select(rows);
            let batch_labels = labels.select(rows);
            let (trace, tape) = model.forward(&batch, true)?;
            let (terms, seeds) = joint_loss(kind, &trace, &batch_labels, train.loss_weight, &weights)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {bi}: {e}")))?;
            let grads = model.backward(&trace, tape.as_ref().expect("recorded forward"), &seeds)?;
            for ((m, g), adam) in model.modules_mut().zip(grads_in_order(&grads)).zip(adams.iter_mut()) {
                adam.step(m, g)
                    .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {bi}: {e}")))?;
            }
            sum += terms.total;
            sum_reg += terms.reg;
            sum_class += terms.class;
            n_batches += 1;
        }
        let nb = n_batches as f64;
        let rec = EpochRecord {
            epoch: epoch + 1,
            mean_loss: sum / nb,
            mean_reg: sum_reg / nb,
            mean_class: sum_class / nb,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        progress(&rec);
        log.records.push(rec);
    }
    model.quantize_f32();
    Ok((model, log))
}

/// Outcome of threshold calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub p_fa: f64,
    pub p_md: f64,
    pub iterations: usize,
}

/// Empirical false-alarm and missed-detection rates of a threshold rule, computed
/// from sorted score lists.
struct ErrorRates {
    inactive: Vec<f64>,
    active: Vec<f64>,
}

impl ErrorRates {
    fn at(&self, tau: f64) -> (f64, f64) {
        let fa = self.inactive.len() - self.inactive.partition_point(|&s| s < tau);
        let md = self.active.partition_point(|&s| s < tau);
        (fa as f64 / self.inactive.len() as f64, md as f64 / self.active.len() as f64)
    }
}

/// Bisection for the threshold where false-alarm and missed-detection rates meet.
///
/// Searches `(lo, hi)` until `|P_fa - P_md| <= 0.005` or 60 halvings and returns the
/// midpoint of the last bracket. If every score is equal the initial midpoint is returned.
pub fn calibrate_scores(scores: &[f64], active: &[bool], lo: f64, hi: f64) -> Result<Calibration> {
    if scores.len() != active.len() {
        return Err(Error::Dimension("scores and labels differ in length".into()));
    }
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty threshold bracket ({lo}, {hi})")));
    }
    let mut rates = ErrorRates {
        inactive: Vec::new(),
        active: Vec::new(),
    };
    for (&s, &a) in scores.iter().zip(active) {
        if !s.is_finite() {
            return Err(Error::NonFinite("activity score".into()));
        }
        if a {
            rates.active.push(s);
        } else {
            rates.inactive.push(s);
        }
    }
    if rates.active.is_empty() || rates.inactive.is_empty() {
        return Err(Error::Degenerate("calibration set needs both active and inactive devices".into()));
    }
    rates.active.sort_by(f64::total_cmp);
    rates.inactive.sort_by(f64::total_cmp);
    let (mut a, mut b) = (lo, hi);
    let mut mid = 0.5 * (a + b);
    let all_equal = scores.iter().all(|&s| s == scores[0]);
    let mut iterations = 0;
    if !all_equal {
        for it in 0..60 {
            iterations = it + 1;
            mid = 0.5 * (a + b);
            let (fa, md) = rates.at(mid);
            if (fa - md).abs() <= 0.005 {
                break;
            }
            if fa > md {
                a = mid;
            } else {
                b = mid;
            }
            mid = 0.5 * (a + b);
        }
    }
    let (p_fa, p_md) = rates.at(mid);
    Ok(Calibration {
        threshold: mid,
        p_fa,
        p_md,
        iterations,
    })
}

fn flatten_scores(scores: &Array2<f64>, samples: &[Sample]) -> (Vec<f64>, Vec<bool>) {
    let mut s = Vec::with_capacity(scores.len());
    let mut a = Vec::with_capacity(scores.len());
    for (row, sample) in scores.axis_iter(Axis(0)).zip(samples) {
        s.extend(row.iter().copied());
        a.extend(sample.realization.active.iter().copied());
    }
    (s, a)
}

/// Activity scores of a receiver for raw samples (`B x K`).
pub fn pic_scores(model: &PicModel, samples: &[Sample]) -> Result<Array2<f64>> {
    let (set, _) = standardize(samples, &model.codebook.base, &model.standardizer)?;
    let trace = model.predict(&set)?;
    Ok(activity_scores(model.kind, &model.dims, &trace))
}

/// Calibrates the decision threshold of a receiver on validation samples and stores it.
pub fn calibrate_threshold(model: &mut PicModel, samples: &[Sample]) -> Result<Calibration> {
    let scores = pic_scores(model, samples)?;
    let (s, a) = flatten_scores(&scores, samples);
    let cal = calibrate_scores(&s, &a, 0.0, 1.0)?;
    model.threshold = cal.threshold;
    Ok(cal)
}

/// Plain fully connected baseline: one network maps the pilot observation to all
/// channel estimates, another to all activity probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnnModel {
    pub ce: Mlp,
    pub ad: Mlp,
    pub standardizer: Standardizer,
    pub codebook: SpreadingCodebook,
    pub threshold: f64,
}

pub fn fcnn_specs(sys: &SystemConfig) -> (MlpSpec, MlpSpec) {
    let hidden = vec![sys.fcnn_width; sys.fcnn_hidden_layers];
    let (l2, k) = (2 * sys.seq_len, sys.n_devices);
    (
        MlpSpec::new(l2, &hidden, 2 * k, OutputActivation::Identity),
        MlpSpec::new(l2, &hidden, k, OutputActivation::Sigmoid),
    )
}

impl FcnnModel {
    pub fn new(sys: &SystemConfig, standardizer: Standardizer, codebook: SpreadingCodebook, seed: u64) -> Result<Self> {
        let (ce_spec, ad_spec) = fcnn_specs(sys);
        Self::assemble(
            Mlp::init(&ce_spec, &mut derived_rng(seed, tag::INIT, 0))?,
            Mlp::init(&ad_spec, &mut derived_rng(seed, tag::INIT, 1))?,
            standardizer,
            codebook,
            sys.decision_threshold,
        )
    }

    pub fn assemble(ce: Mlp, ad: Mlp, standardizer: Standardizer, codebook: SpreadingCodebook, threshold: f64) -> Result<Self> {
        let (k, l2) = (codebook.n_devices(), 2 * codebook.seq_len());
        if codebook.per_device() != 1 {
            return Err(Error::Config("the FCNN baseline needs the coherent scheme".into()));
        }
        if ce.spec.n_in() != l2 || ad.spec.n_in() != l2 || ce.spec.n_out() != 2 * k || ad.spec.n_out() != k {
            return Err(Error::Dimension("FCNN networks do not match the codebook".into()));
        }
        if ce.spec.output != OutputActivation::Identity || ad.spec.output != OutputActivation::Sigmoid {
            return Err(Error::Dimension("FCNN output activations".into()));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0,1)")));
        }
        Ok(Self {
            ce,
            ad,
            standardizer,
            codebook,
            threshold,
        })
    }

    pub fn n_devices(&self) -> usize {
        self.codebook.n_devices()
    }

    /// Standardized channel estimates (`B x 2K`) and activity probabilities (`B x K`).
    pub fn predict(&self, set: &StandardizedSet) -> Result<(Array2<f64>, Array2<f64>)> {
        let y = set
            .pilot
            .as_ref()
            .ok_or_else(|| Error::Dimension("FCNN needs pilot observations".into()))?;
        Ok((self.ce.predict(y)?, self.ad.predict(y)?))
    }

    pub fn predict_samples(&self, samples: &[Sample]) -> Result<(Array2<f64>, Array2<f64>)> {
        let (set, _) = standardize(samples, &self.codebook, &self.standardizer)?;
        self.predict(&set)
    }

    pub fn quantize_f32(&mut self) {
        self.ce.quantize_f32();
        self.ad.quantize_f32();
    }
}

/// Generates data from the configs and trains the FCNN baseline.
pub fn train_fcnn_baseline(sys: &SystemConfig, train: &TrainConfig) -> Result<(FcnnModel, TrainLog)> {
    sys.validate()?;
    let codebook = system_codebook(sys)?;
    let samples = training_samples(sys, train, &codebook)?;
    train_fcnn_on(sys, train, &codebook, &samples, |_| {})
}

/// Trains both FCNN networks on the given samples: MAE for channel estimates, BCE
/// for activity. The logged total is `lambda * BCE + (1 - lambda) * MAE`.
pub fn train_fcnn_on(
    sys: &SystemConfig,
    train: &TrainConfig,
    codebook: &SpreadingCodebook,
    samples: &[Sample],
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(FcnnModel, TrainLog)> {
    if sys.scheme != Scheme::Coherent {
        return Err(Error::Config("the FCNN baseline needs the coherent scheme".into()));
    }
    train.validate(sys.n_stages)?;
    let std = fit_standardizer(samples)?;
    let (set, _) = standardize(samples, codebook, &std)?;
    let mut model = FcnnModel::new(sys, std, codebook.clone(), derive_seed(train.seed, tag::INIT, 0))?;
    let y = set.pilot.as_ref().expect("coherent set");
    let k = sys.n_devices;
    let active = Array2::from_shape_fn((samples.len(), k), |(b, i)| f64::from(u8::from(samples[b].realization.active[i])));
    let mut adam_ce = Adam::for_mlp(&model.ce, train.learning_rate);
    let mut adam_ad = Adam::for_mlp(&model.ad, train.learning_rate);
    let lambda = train.loss_weight;
    let mut log = TrainLog::default();
    let start = Instant::now();
    for epoch in 0..train.epochs {
        let order = epoch_order(samples.len(), train.seed, epoch);
        let (mut sum_reg, mut sum_class, mut n_batches) = (0.0, 0.0, 0usize);
        for (bi, rows) in order.chunks(train.batch_size).enumerate() {
            let x = y.select(Axis(0), rows);
            let g_true = set.gamma.select(Axis(0), rows);
            let a_true = active.select(Axis(0), rows);
            let nb = rows.len() as f64;

            let cache = model.ce.forward(&x)?;
            let diff = cache.output() - &g_true;
            let mae = diff.iter().map(|d| d.abs()).sum::<f64>() / (nb * 2.0 * k as f64);
            let grad = diff.mapv(|d| {
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                s / (nb * 2.0 * k as f64)
            });
            let (g_ce, _) = model.ce.backward(&cache, &grad)?;

            let cache = model.ad.forward(&x)?;
            let p = cache.output();
            let norm = nb * k as f64;
            let loss_ad = p.iter().zip(a_true.iter()).map(|(&p, &a)| bce(p, a)).sum::<f64>() / norm;
            let grad = Array2::from_shape_fn(p.dim(), |ix| bce_grad(p[ix], a_true[ix]) / norm);
            let (g_ad, _) = model.ad.backward(&cache, &grad)?;

            if !(mae.is_finite() && loss_ad.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {bi}: loss (regression {mae}, classification {loss_ad})"
                )));
            }
            let tagged = |e: Error| Error::NonFinite(format!("epoch {epoch}, batch {bi}: {e}"));
            adam_ce.step(&mut model.ce, &g_ce).map_err(tagged)?;
            adam_ad.step(&mut model.ad, &g_ad).map_err(tagged)?;
            sum_reg += mae;
            sum_class += loss_ad;
            n_batches += 1;
        }
        let nb = n_batches as f64;
        let rec = EpochRecord {
            epoch: epoch + 1,
            mean_loss: (lambda * sum_class + (1.0 - lambda) * sum_reg) / nb,
            mean_reg: sum_reg / nb,
            mean_class: sum_class / nb,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        progress(&rec);
        log.records.push(rec);
    }
    model.quantize_f32();
    Ok((model, log))
}

/// Calibrates the FCNN activity threshold on validation samples and stores it.
pub fn calibrate_fcnn(model: &mut FcnnModel, samples: &[Sample]) -> Result<Calibration> {
    let (_, probs) = model.predict_samples(samples)?;
    let (s, a) = flatten_scores(&probs, samples);
    let cal = calibrate_scores(&s, &a, 0.0, 1.0)?;
    model.threshold = cal.threshold;
    Ok(cal)
}
