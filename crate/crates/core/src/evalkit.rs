//! Receivers behind one interface, MRC data detection, error metrics and parameter sweeps.

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::baselines::{amp_estimate, lasso_estimate, SparsePrior};
use crate::config::{Constellation, Scheme, SystemConfig};
use crate::error::{Error, Result};
use crate::picnet::{activity_scores, Decision, PicKind, PicModel};
use crate::prep::standardize;
use crate::rng::{derive_seed, tag};
use crate::sysmodel::{generate_dataset, index_to_bits, Sample, SpreadingCodebook};
use crate::trainer::{calibrate_scores, Calibration, FcnnModel};

/// Smallest channel magnitude MRC will divide by.
pub const MRC_GUARD: f64 = 1e-12;

/// Matched filter `s^H y / gamma_hat` followed by a nearest-symbol decision
/// (lowest index on ties). `None` when `|gamma_hat|` is below the guard.
pub fn mrc_detect(y: &[Complex64], s: &[Complex64], gamma_hat: Complex64, symbols: &[Complex64]) -> Option<usize> {
    if gamma_hat.norm() <= MRC_GUARD {
        return None;
    }
    let z: Complex64 = s.iter().zip(y).map(|(a, b)| a.conj() * b).sum::<Complex64>() / gamma_hat;
    let mut best = 0;
    for (i, x) in symbols.iter().enumerate().skip(1) {
        if (z - x).norm_sqr() < (z - symbols[best]).norm_sqr() {
            best = i;
        }
    }
    Some(best)
}

/// How data is recovered once activity is decided.
#[derive(Debug, Clone, PartialEq)]
pub enum Detail {
    /// Coherent receiver without a data detector: MRC on the data slots.
    Mrc,
    /// Symbol index per device and slot (`B*K*D`).
    Symbols(Vec<usize>),
    /// Strongest sequence per device (`B*K`).
    Sequences(Vec<usize>),
}

/// Soft output of a receiver before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftOutput {
    /// `B x K` activity scores compared against the threshold.
    pub scores: Array2<f64>,
    /// `B*K` channel estimates in noise-normalized units, not yet gated.
    pub gamma: Vec<Complex64>,
    pub detail: Detail,
}

/// A receiver that maps raw samples to activity scores, channel estimates and data.
pub trait Detector: Send + Sync {
    /// Name used in result tables, e.g. `pilot-pic` or `nc-amp`.
    fn framework(&self) -> String;
    fn scheme(&self) -> Scheme;
    fn codebook(&self) -> &SpreadingCodebook;
    fn threshold(&self) -> f64;
    fn set_threshold(&mut self, tau: f64);
    /// Whether scores are probabilities; otherwise they are magnitudes.
    fn probabilistic(&self) -> bool;
    fn soft(&self, samples: &[Sample]) -> Result<SoftOutput>;
    /// Updates prior knowledge (activity probability, transmit power) for a new operating point.
    fn adapt(&mut self, _sys: &SystemConfig) -> Result<()> {
        Ok(())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl PicModel {
    pub fn soft_output(&self, samples: &[Sample]) -> Result<SoftOutput> {
        let (set, _) = standardize(samples, &self.codebook.base, &self.standardizer)?;
        let trace = self.predict(&set)?;
        let scores = activity_scores(self.kind, &self.dims, &trace);
        let last = trace.gamma_hat.last().expect("at least one stage");
        let sg = self.standardizer.sigma_gamma;
        let k_n = self.dims.n_devices;
        let gamma = (0..samples.len())
            .flat_map(|b| (0..k_n).map(move |k| (b, k)))
            .map(|(b, k)| Complex64::new(last[[b, 2 * k]], last[[b, 2 * k + 1]]) * sg)
            .collect();
        let probs = trace.probs.last().expect("trace has probabilities");
        let detail = match self.kind {
            PicKind::PilotOnly => Detail::Mrc,
            PicKind::DataAided => {
                let c_n = self.dims.alphabet;
                Detail::Symbols(
                    probs
                        .rows()
                        .into_iter()
                        .flat_map(|row| row.to_vec().chunks(c_n).map(argmax).collect::<Vec<_>>())
                        .collect(),
                )
            }
            PicKind::NonCoherent => {
                let j_n = self.dims.n_seq;
                Detail::Sequences(
                    probs
                        .rows()
                        .into_iter()
                        .flat_map(|row| row.to_vec().chunks(j_n).map(argmax).collect::<Vec<_>>())
                        .collect(),
                )
            }
        };
        Ok(SoftOutput { scores, gamma, detail })
    }
}

impl Detector for PicModel {
    fn framework(&self) -> String {
        match self.kind {
            PicKind::PilotOnly => "pilot-pic",
            PicKind::DataAided => "data-aided-pic",
            PicKind::NonCoherent => "nc-pic",
        }
        .into()
    }

    fn scheme(&self) -> Scheme {
        self.kind.scheme()
    }

    fn codebook(&self) -> &SpreadingCodebook {
        &self.codebook.base
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn set_threshold(&mut self, tau: f64) {
        self.threshold = tau;
    }

    fn probabilistic(&self) -> bool {
        true
    }

    fn soft(&self, samples: &[Sample]) -> Result<SoftOutput> {
        self.soft_output(samples)
    }
}

impl Detector for FcnnModel {
    fn framework(&self) -> String {
        "fcnn".into()
    }

    fn scheme(&self) -> Scheme {
        Scheme::Coherent
    }

    fn codebook(&self) -> &SpreadingCodebook {
        &self.codebook
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn set_threshold(&mut self, tau: f64) {
        self.threshold = tau;
    }

    fn probabilistic(&self) -> bool {
        true
    }

    fn soft(&self, samples: &[Sample]) -> Result<SoftOutput> {
        let (g, p) = self.predict_samples(samples)?;
        let sg = self.standardizer.sigma_gamma;
        let k_n = self.n_devices();
        let gamma = (0..samples.len())
            .flat_map(|b| (0..k_n).map(move |k| (b, k)))
            .map(|(b, k)| Complex64::new(g[[b, 2 * k]], g[[b, 2 * k + 1]]) * sg)
            .collect();
        Ok(SoftOutput {
            scores: p,
            gamma,
            detail: Detail::Mrc,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparseMethod {
    Lasso,
    Amp,
}

/// Channel variance knowledge given to AMP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMode {
    /// Per-device large-scale gains of every sample.
    Known,
    /// One variance averaged over the cell.
    Pooled,
}

/// LASSO or AMP followed by magnitude thresholding (and the one-sequence
/// constraint in the non-coherent scheme).
///
/// Both solvers work in noise-normalized units, so `nu` is measured against unit
/// noise variance. AMP defaults to the pooled prior.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseReceiver {
    pub method: SparseMethod,
    pub sys: SystemConfig,
    pub codebook: SpreadingCodebook,
    pub prior: PriorMode,
    pub threshold: f64,
}

/// Mean of `A^2 beta(d)` for distances uniform over the cell.
pub fn pooled_variance(sys: &SystemConfig) -> f64 {
    const N: usize = 4096;
    let a2 = sys.normalized_amplitude().powi(2);
    let span = sys.dist_max_m - sys.dist_min_m;
    let sum: f64 = (0..N)
        .map(|i| {
            let d = sys.dist_min_m + span * (i as f64 + 0.5) / N as f64;
            10f64.powf(sys.pathloss_db(d) / 10.0)
        })
        .sum();
    a2 * sum / N as f64
}

impl SparseReceiver {
    pub fn new(method: SparseMethod, sys: &SystemConfig, codebook: SpreadingCodebook) -> Result<Self> {
        sys.validate()?;
        if codebook.n_devices() != sys.n_devices
            || codebook.seq_len() != sys.seq_len
            || codebook.per_device() != sys.sequences_per_device()
        {
            return Err(Error::Dimension("codebook does not match the system".into()));
        }
        Ok(Self {
            method,
            sys: sys.clone(),
            codebook,
            prior: PriorMode::Pooled,
            threshold: 0.0,
        })
    }

    fn observation<'a>(&self, sample: &'a Sample) -> Result<&'a [Complex64]> {
        match self.sys.scheme {
            Scheme::Coherent => sample.pilot(),
            Scheme::NonCoherent => sample.nc_signal(),
        }
        .ok_or_else(|| Error::Dimension("sample does not match the receiver scheme".into()))
    }

    /// Estimates of every codebook column in noise-normalized units.
    pub fn estimate(&self, sample: &Sample) -> Result<Vec<Complex64>> {
        let y = self.observation(sample)?;
        let m = self.codebook.n_columns();
        let cols: Vec<Vec<Complex64>> = (0..m).map(|i| self.codebook.column(i).to_vec()).collect();
        match self.method {
            SparseMethod::Lasso => Ok(lasso_estimate(y, &cols, self.sys.lasso_nu)?.x),
            SparseMethod::Amp => {
                let per = self.codebook.per_device();
                let variance: Vec<f64> = match self.prior {
                    PriorMode::Known => sample.realization.prior_variance(&self.sys),
                    PriorMode::Pooled => vec![pooled_variance(&self.sys); self.sys.n_devices],
                };
                let prior = SparsePrior {
                    activity: vec![self.sys.activity_prob / per as f64; m],
                    variance: variance.iter().flat_map(|&v| std::iter::repeat_n(v, per)).collect(),
                };
                Ok(amp_estimate(y, &cols, &prior, self.sys.amp_iters)?.x)
            }
        }
    }
}

impl Detector for SparseReceiver {
    fn framework(&self) -> String {
        let base = match self.method {
            SparseMethod::Lasso => "lasso",
            SparseMethod::Amp => "amp",
        };
        match self.sys.scheme {
            Scheme::Coherent => base.into(),
            Scheme::NonCoherent => format!("nc-{base}"),
        }
    }

    fn scheme(&self) -> Scheme {
        self.sys.scheme
    }

    fn codebook(&self) -> &SpreadingCodebook {
        &self.codebook
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn set_threshold(&mut self, tau: f64) {
        self.threshold = tau;
    }

    fn probabilistic(&self) -> bool {
        false
    }

    fn soft(&self, samples: &[Sample]) -> Result<SoftOutput> {
        let k_n = self.sys.n_devices;
        let per = self.codebook.per_device();
        let estimates = samples
            .par_iter()
            .map(|s| self.estimate(s))
            .collect::<Result<Vec<_>>>()?;
        let mut scores = Array2::zeros((samples.len(), k_n));
        let mut gamma = Vec::with_capacity(samples.len() * k_n);
        let mut best = Vec::with_capacity(samples.len() * k_n);
        for (b, est) in estimates.iter().enumerate() {
            for k in 0..k_n {
                let group = &est[k * per..(k + 1) * per];
                let mags: Vec<f64> = group.iter().map(|g| g.norm()).collect();
                let j = argmax(&mags);
                scores[[b, k]] = mags[j];
                gamma.push(group[j]);
                best.push(j);
            }
        }
        let detail = match self.sys.scheme {
            Scheme::Coherent => Detail::Mrc,
            Scheme::NonCoherent => Detail::Sequences(best),
        };
        Ok(SoftOutput { scores, gamma, detail })
    }

    fn adapt(&mut self, sys: &SystemConfig) -> Result<()> {
        if sys.n_devices != self.sys.n_devices || sys.seq_len != self.sys.seq_len || sys.scheme != self.sys.scheme {
            return Err(Error::Config(format!("{} receiver does not fit the new system", self.framework())));
        }
        self.sys = sys.clone();
        Ok(())
    }
}

fn constellation_for(bits_per_symbol: usize) -> Result<Constellation> {
    match bits_per_symbol {
        1 => Ok(Constellation::Bpsk),
        2 => Ok(Constellation::Qpsk),
        b => Err(Error::Config(format!("no constellation carries {b} bits per symbol"))),
    }
}

/// Thresholds soft outputs and recovers data for every sample.
pub fn decide(soft: &SoftOutput, samples: &[Sample], codebook: &SpreadingCodebook, tau: f64) -> Result<Vec<Decision>> {
    let k_n = codebook.n_devices();
    if soft.scores.dim() != (samples.len(), k_n) || soft.gamma.len() != samples.len() * k_n {
        return Err(Error::Dimension("soft output does not match the samples".into()));
    }
    samples
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let j_n = s.bits.len() / k_n;
            let n_data = s.data().map(|d| d.len()).unwrap_or(0);
            let mut out = Decision::inactive(k_n, n_data, j_n);
            let bps = j_n.checked_div(n_data).unwrap_or(0);
            let symbols = if n_data > 0 {
                constellation_for(bps)?.symbols()
            } else {
                Vec::new()
            };
            for k in 0..k_n {
                if soft.scores[[b, k]] < tau {
                    continue;
                }
                let g = soft.gamma[b * k_n + k];
                let bits = &mut out.bits[k * j_n..(k + 1) * j_n];
                match &soft.detail {
                    Detail::Mrc => {
                        let data = s
                            .data()
                            .ok_or_else(|| Error::Dimension("MRC needs coherent samples".into()))?;
                        let mut picks = Vec::with_capacity(n_data);
                        for y in data {
                            match mrc_detect(y, codebook.column(k), g, &symbols) {
                                Some(c) => picks.push(c),
                                None => break,
                            }
                        }
                        if picks.len() < n_data {
                            continue;
                        }
                        for (d, &c) in picks.iter().enumerate() {
                            out.symbols[k * n_data + d] = symbols[c];
                            index_to_bits(c, bps, &mut bits[d * bps..(d + 1) * bps]);
                        }
                    }
                    Detail::Symbols(idx) => {
                        for d in 0..n_data {
                            let c = idx[(b * k_n + k) * n_data + d];
                            out.symbols[k * n_data + d] = symbols[c];
                            index_to_bits(c, bps, &mut bits[d * bps..(d + 1) * bps]);
                        }
                    }
                    Detail::Sequences(idx) => {
                        let j = idx[b * k_n + k];
                        out.sequence[k] = Some(j);
                        index_to_bits(j, j_n, bits);
                    }
                }
                out.active[k] = true;
                out.gamma[k] = g;
            }
            Ok(out)
        })
        .collect()
}

/// Error rates and their raw counters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_active: usize,
    pub n_inactive: usize,
    pub false_alarms: usize,
    pub misses: usize,
    pub bit_errors: usize,
    /// `K * J * n_samples`.
    pub bit_slots: usize,
    pub p_fa: f64,
    pub p_md: f64,
    pub p_err: f64,
    /// Empirical fraction of active device instances.
    pub eps_eval: f64,
    pub nmse_db: f64,
    pub ber: f64,
    pub wall_time_s: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Counts activity errors, bit errors and channel error over aligned samples and decisions.
///
/// An activity mistake in either direction costs all `J` bits of the device; devices
/// active in both truth and decision are charged their bitwise mismatches.
pub fn compute_metrics(samples: &[Sample], decisions: &[Decision]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    if samples.len() != decisions.len() {
        return Err(Error::Dimension("samples and decisions differ in number".into()));
    }
    let (mut n_active, mut n_inactive, mut fa, mut md, mut bit_err, mut slots) = (0, 0, 0, 0, 0, 0);
    let mut nmse_sum = 0.0;
    for (s, d) in samples.iter().zip(decisions) {
        let k_n = s.realization.n_devices();
        if d.n_devices() != k_n || d.bits.len() != s.bits.len() {
            return Err(Error::Dimension("decision does not match its sample".into()));
        }
        let j_n = s.bits.len() / k_n;
        slots += k_n * j_n;
        let (mut err, mut pow) = (0.0, 0.0);
        for k in 0..k_n {
            let truth = s.realization.active[k];
            let est = d.active[k];
            match (truth, est) {
                (true, true) => {
                    n_active += 1;
                    bit_err += (0..j_n).filter(|&j| s.bits[k * j_n + j] != d.bits[k * j_n + j]).count();
                }
                (true, false) => {
                    n_active += 1;
                    md += 1;
                    bit_err += j_n;
                }
                (false, true) => {
                    n_inactive += 1;
                    fa += 1;
                    bit_err += j_n;
                }
                (false, false) => n_inactive += 1,
            }
            err += (d.gamma[k] - s.realization.gamma[k]).norm_sqr();
            pow += s.realization.gamma[k].norm_sqr();
        }
        if !(pow > 0.0) {
            return Err(Error::Degenerate("sample without channel energy".into()));
        }
        nmse_sum += err / pow;
    }
    let n = samples.len();
    let total = n_active + n_inactive;
    Ok(MetricsReport {
        n_samples: n,
        n_active,
        n_inactive,
        false_alarms: fa,
        misses: md,
        bit_errors: bit_err,
        bit_slots: slots,
        p_fa: ratio(fa, n_inactive),
        p_md: ratio(md, n_active),
        p_err: ratio(fa + md, total),
        eps_eval: ratio(n_active, total),
        nmse_db: 10.0 * (nmse_sum / n as f64).log10(),
        ber: ratio(bit_err, slots),
        wall_time_s: 0.0,
    })
}

fn check_samples(det: &dyn Detector, samples: &[Sample]) -> Result<()> {
    let cb = det.codebook();
    let fits = samples.iter().all(|s| {
        s.realization.n_devices() == cb.n_devices()
            && match det.scheme() {
                Scheme::Coherent => s.pilot().is_some_and(|p| p.len() == cb.seq_len()),
                Scheme::NonCoherent => s.nc_signal().is_some_and(|y| y.len() == cb.seq_len()),
            }
    });
    if !fits {
        return Err(Error::Config(format!("samples do not fit the {} receiver", det.framework())));
    }
    Ok(())
}

/// Runs a receiver on samples at threshold `tau`; the wall time covers inference and decisions.
pub fn evaluate(det: &dyn Detector, samples: &[Sample], tau: f64) -> Result<MetricsReport> {
    check_samples(det, samples)?;
    let start = Instant::now();
    let soft = det.soft(samples)?;
    let decisions = decide(&soft, samples, det.codebook(), tau)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut report = compute_metrics(samples, &decisions)?;
    report.wall_time_s = elapsed;
    Ok(report)
}

/// Calibrates a receiver's threshold to the point where false alarms and misses balance.
pub fn calibrate(det: &mut dyn Detector, samples: &[Sample]) -> Result<Calibration> {
    check_samples(det, samples)?;
    let soft = det.soft(samples)?;
    let scores: Vec<f64> = soft.scores.iter().copied().collect();
    let active: Vec<bool> = samples.iter().flat_map(|s| s.realization.active.iter().copied()).collect();
    let (lo, hi) = if det.probabilistic() {
        (0.0, 1.0)
    } else {
        let max = scores.iter().copied().fold(0.0, f64::max);
        (0.0, max * (1.0 + 1e-9) + 1e-12)
    };
    let cal = calibrate_scores(&scores, &active, lo, hi)?;
    det.set_threshold(cal.threshold);
    Ok(cal)
}

/// Axes of a parameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Eps,
    TauCoh,
    Rho,
    TauThr,
    J,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "eps" => Some(Self::Eps),
            "tau_coh" => Some(Self::TauCoh),
            "rho" | "rho_dbm" => Some(Self::Rho),
            "tau_thr" => Some(Self::TauThr),
            "J" | "j" => Some(Self::J),
            _ => None,
        }
    }

    /// Whether trained receivers can be reused across grid points.
    pub fn reuses_models(self) -> bool {
        matches!(self, Self::Eps | Self::Rho | Self::TauThr)
    }
}

/// System at one grid point. Changing `tau_coh` or `J` re-derives the sequence
/// length as the largest one the coherence interval allows.
pub fn point_config(base: &SystemConfig, axis: SweepAxis, value: f64) -> Result<SystemConfig> {
    let mut sys = base.clone();
    let count = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidArgument(format!("grid value {v} is not a count")))
        }
    };
    match axis {
        SweepAxis::Eps => sys.activity_prob = value,
        SweepAxis::Rho => sys.tx_power_dbm = value,
        SweepAxis::TauThr => {}
        SweepAxis::TauCoh => {
            sys.coherence_len = count(value)?;
            sys.seq_len = sys.max_seq_len();
        }
        SweepAxis::J => {
            sys.n_bits = count(value)?;
            sys.seq_len = sys.max_seq_len();
        }
    }
    sys.validate()?;
    Ok(sys)
}

/// One evaluated (receiver, grid point) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub framework: String,
    pub sys: SystemConfig,
    pub tau_thr: f64,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Test samples for one grid point.
pub fn test_samples(sys: &SystemConfig, codebook: &SpreadingCodebook, n: usize, seed: u64, point: usize) -> Result<Vec<Sample>> {
    generate_dataset(sys, codebook, n, derive_seed(seed, tag::SAMPLE, point as u64))
}

fn eval_rows(
    dets: &mut [Box<dyn Detector>],
    sys: &SystemConfig,
    samples: &[Sample],
    seed: u64,
    thresholds: &[Option<f64>],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for det in dets.iter_mut() {
        det.adapt(sys)?;
        check_samples(det.as_ref(), samples)?;
        let start = Instant::now();
        let soft = det.soft(samples)?;
        let soft_time = start.elapsed().as_secs_f64();
        for th in thresholds {
            let tau = th.unwrap_or_else(|| det.threshold());
            let start = Instant::now();
            let decisions = decide(&soft, samples, det.codebook(), tau)?;
            let mut report = compute_metrics(samples, &decisions)?;
            report.wall_time_s = soft_time + start.elapsed().as_secs_f64();
            rows.push(SweepRow {
                framework: det.framework(),
                sys: sys.clone(),
                tau_thr: tau,
                seed,
                report,
            });
        }
    }
    Ok(rows)
}

/// Sweeps an axis that keeps the trained receivers (`eps`, `rho` or `tau_thr`).
///
/// Receivers must share one codebook. For the threshold axis all grid points use
/// the same test samples.
pub fn sweep(
    axis: SweepAxis,
    grid: &[f64],
    base: &SystemConfig,
    dets: &mut [Box<dyn Detector>],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if !axis.reuses_models() {
        return Err(Error::Config(format!("axis {axis:?} changes the system dimensions; use sweep_with")));
    }
    let Some(first) = dets.first() else {
        return Err(Error::InvalidArgument("no receivers to sweep".into()));
    };
    let codebook = first.codebook().clone();
    if dets.iter().any(|d| *d.codebook() != codebook) {
        return Err(Error::Config("receivers in one sweep must share the codebook".into()));
    }
    if axis == SweepAxis::TauThr {
        let samples = test_samples(base, &codebook, n_samples, seed, 0)?;
        let ths: Vec<Option<f64>> = grid.iter().map(|&v| Some(v)).collect();
        return eval_rows(dets, base, &samples, seed, &ths);
    }
    let mut rows = Vec::new();
    for (i, &v) in grid.iter().enumerate() {
        let sys = point_config(base, axis, v)?;
        let samples = test_samples(&sys, &codebook, n_samples, seed, i)?;
        rows.extend(eval_rows(dets, &sys, &samples, seed, &[None])?);
    }
    Ok(rows)
}

/// Sweeps any axis, building receivers for every grid point with `factory`.
pub fn sweep_with(
    axis: SweepAxis,
    grid: &[f64],
    base: &SystemConfig,
    n_samples: usize,
    seed: u64,
    mut factory: impl FnMut(&SystemConfig) -> Result<Vec<Box<dyn Detector>>>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (i, &v) in grid.iter().enumerate() {
        let sys = point_config(base, axis, v)?;
        let mut dets = factory(&sys)?;
        let Some(first) = dets.first() else {
            continue;
        };
        let codebook = first.codebook().clone();
        let samples = test_samples(&sys, &codebook, n_samples, seed, i)?;
        let th = if axis == SweepAxis::TauThr { Some(v) } else { None };
        rows.extend(eval_rows(&mut dets, &sys, &samples, seed, &[th])?);
    }
    Ok(rows)
}
