//! Real-domain conversion and standardization.
//!
//! A complex vector `v` becomes `[Re v; Im v]`. The complex product `s * g` of a
//! sequence and a channel becomes the block matrix `[[Re s, -Im s], [Im s, Re s]]`
//! acting on `[Re g; Im g]`, so after dividing signals by `sigma_y` and channels
//! by `sigma_gamma` the standardized observation is a superposition of the
//! sequences scaled by `sigma_gamma / sigma_y`.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sysmodel::{Sample, SpreadingCodebook};

pub fn to_real(v: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * v.len());
    out.extend(v.iter().map(|z| z.re));
    out.extend(v.iter().map(|z| z.im));
    out
}

pub fn from_real(r: &[f64]) -> Vec<Complex64> {
    let n = r.len() / 2;
    (0..n).map(|i| Complex64::new(r[i], r[n + i])).collect()
}

/// `to_real(s * g)` written as the block-matrix product, accumulated into `out` with weight `alpha`.
pub fn block_apply_into(s: &[Complex64], g: [f64; 2], alpha: f64, out: &mut [f64]) {
    let l = s.len();
    let (re, im) = out.split_at_mut(l);
    for i in 0..l {
        re[i] += alpha * (s[i].re * g[0] - s[i].im * g[1]);
        im[i] += alpha * (s[i].im * g[0] + s[i].re * g[1]);
    }
}

/// The transpose of the block matrix applied to a real 2L-vector, i.e. `to_real(s^H v)`.
pub fn block_transpose(s: &[Complex64], v: &[f64]) -> [f64; 2] {
    let l = s.len();
    let (re, im) = v.split_at(l);
    let mut out = [0.0; 2];
    for i in 0..l {
        out[0] += s[i].re * re[i] + s[i].im * im[i];
        out[1] += s[i].re * im[i] - s[i].im * re[i];
    }
    out
}

/// Population statistics accumulated in one pass (Welford), mergeable across shards.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n == 0.0 {
            0.0
        } else {
            (self.m2 / self.n).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub sigma_gamma: f64,
    pub sigma_pilot: Option<f64>,
    pub sigma_data: Option<f64>,
    pub sigma_nc: Option<f64>,
}

fn positive(name: &str, m: &Moments) -> Result<Option<f64>> {
    if m.n == 0.0 {
        return Ok(None);
    }
    let s = m.std();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate(format!(
            "{name} entries have zero spread; cannot standardize"
        )));
    }
    Ok(Some(s))
}

/// Fits population standard deviations over a training set.
pub fn fit_standardizer(samples: &[Sample]) -> Result<Standardizer> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a standardizer on no samples".into()));
    }
    let mut gamma = Moments::default();
    let mut pilot = Moments::default();
    let mut data = Moments::default();
    let mut nc = Moments::default();
    for s in samples {
        for g in &s.realization.gamma {
            gamma.push(g.re);
        }
        for g in &s.realization.gamma {
            gamma.push(g.im);
        }
        if let Some(p) = s.pilot() {
            to_real(p).into_iter().for_each(|x| pilot.push(x));
        }
        if let Some(d) = s.data() {
            for row in d {
                to_real(row).into_iter().for_each(|x| data.push(x));
            }
        }
        if let Some(y) = s.nc_signal() {
            to_real(y).into_iter().for_each(|x| nc.push(x));
        }
    }
    let sigma_gamma = positive("effective channel", &gamma)?
        .ok_or_else(|| Error::Degenerate("no channels in training set".into()))?;
    Ok(Standardizer {
        sigma_gamma,
        sigma_pilot: positive("pilot", &pilot)?,
        sigma_data: positive("data", &data)?,
        sigma_nc: positive("non-coherent", &nc)?,
    })
}

/// Spreading sequences rescaled by `sigma_gamma / sigma_y` for each signal kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledCodebook {
    pub base: SpreadingCodebook,
    pub pilot_scale: f64,
    pub data_scale: f64,
    pub nc_scale: f64,
}

impl ScaledCodebook {
    pub fn new(base: SpreadingCodebook, std: &Standardizer) -> Self {
        let ratio = |s: Option<f64>| s.map(|v| std.sigma_gamma / v).unwrap_or(0.0);
        Self {
            base,
            pilot_scale: ratio(std.sigma_pilot),
            data_scale: ratio(std.sigma_data),
            nc_scale: ratio(std.sigma_nc),
        }
    }

    /// `s~_m` materialized for one signal kind.
    pub fn scaled_column(&self, m: usize, scale: f64) -> Vec<Complex64> {
        self.base.column(m).iter().map(|z| z * scale).collect()
    }

    pub fn scaled_columns(&self, scale: f64) -> Vec<Vec<Complex64>> {
        (0..self.base.n_columns()).map(|m| self.scaled_column(m, scale)).collect()
    }
}

/// Struct-of-arrays view of a standardized sample set; row `b` is sample `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedSet {
    pub pilot: Option<Array2<f64>>,
    /// One `n x 2L` matrix per data symbol slot.
    pub data: Vec<Array2<f64>>,
    pub nc: Option<Array2<f64>>,
    /// `n x 2K`; device `k` occupies columns `2k, 2k+1`.
    pub gamma: Array2<f64>,
}

impl StandardizedSet {
    pub fn len(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        use ndarray::Axis;
        Self {
            pilot: self.pilot.as_ref().map(|a| a.select(Axis(0), rows)),
            data: self.data.iter().map(|a| a.select(Axis(0), rows)).collect(),
            nc: self.nc.as_ref().map(|a| a.select(Axis(0), rows)),
            gamma: self.gamma.select(Axis(0), rows),
        }
    }
}

fn signal_matrix(rows: Vec<Vec<f64>>, sigma: f64, what: &str) -> Result<Array2<f64>> {
    let n = rows.len();
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut out = Array2::zeros((n, width));
    for (b, r) in rows.into_iter().enumerate() {
        if r.len() != width {
            return Err(Error::Dimension(format!("{what} rows differ in length")));
        }
        for (j, x) in r.into_iter().enumerate() {
            out[[b, j]] = x / sigma;
        }
    }
    Ok(out)
}

fn need(s: Option<f64>, what: &str) -> Result<f64> {
    s.ok_or_else(|| Error::InvalidArgument(format!("standardizer was not fitted on {what} signals")))
}

/// Standardizes observations and channels of `samples`; returns them with the scaled codebook.
pub fn standardize(
    samples: &[Sample],
    codebook: &SpreadingCodebook,
    std: &Standardizer,
) -> Result<(StandardizedSet, ScaledCodebook)> {
    let k = codebook.n_devices();
    let l = codebook.seq_len();
    let n = samples.len();
    let mut gamma = Array2::zeros((n, 2 * k));
    for (b, s) in samples.iter().enumerate() {
        if s.realization.gamma.len() != k {
            return Err(Error::Dimension(format!(
                "sample has {} devices, codebook {k}",
                s.realization.gamma.len()
            )));
        }
        for (dev, g) in s.realization.gamma.iter().enumerate() {
            gamma[[b, 2 * dev]] = g.re / std.sigma_gamma;
            gamma[[b, 2 * dev + 1]] = g.im / std.sigma_gamma;
        }
    }
    let check_len = |v: &[Complex64]| {
        if v.len() != l {
            Err(Error::Dimension(format!("observation of length {} but L = {l}", v.len())))
        } else {
            Ok(())
        }
    };
    let coherent = samples.first().map(|s| s.pilot().is_some()).unwrap_or(true);
    let set = if coherent {
        let sp = need(std.sigma_pilot, "pilot")?;
        let mut pilots = Vec::with_capacity(n);
        let n_data = samples.first().and_then(|s| s.data()).map(|d| d.len()).unwrap_or(0);
        let mut data_rows: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n); n_data];
        for s in samples {
            let p = s
                .pilot()
                .ok_or_else(|| Error::Dimension("mixed coherent and non-coherent samples".into()))?;
            check_len(p)?;
            pilots.push(to_real(p));
            let d = s.data().unwrap_or(&[]);
            if d.len() != n_data {
                return Err(Error::Dimension("samples differ in number of data slots".into()));
            }
            for (slot, row) in d.iter().enumerate() {
                check_len(row)?;
                data_rows[slot].push(to_real(row));
            }
        }
        let data = if n_data > 0 {
            let sd = need(std.sigma_data, "data")?;
            data_rows
                .into_iter()
                .map(|rows| signal_matrix(rows, sd, "data"))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        StandardizedSet {
            pilot: Some(signal_matrix(pilots, sp, "pilot")?),
            data,
            nc: None,
            gamma,
        }
    } else {
        let sn = need(std.sigma_nc, "non-coherent")?;
        let mut rows = Vec::with_capacity(n);
        for s in samples {
            let y = s
                .nc_signal()
                .ok_or_else(|| Error::Dimension("mixed coherent and non-coherent samples".into()))?;
            check_len(y)?;
            rows.push(to_real(y));
        }
        StandardizedSet {
            pilot: None,
            data: Vec::new(),
            nc: Some(signal_matrix(rows, sn, "non-coherent")?),
            gamma,
        }
    };
    Ok((set, ScaledCodebook::new(codebook.clone(), std)))
}

/// Inverse of standardization for one real-form signal.
pub fn unstandardize_signal(real: &[f64], sigma: f64) -> Vec<Complex64> {
    let scaled: Vec<f64> = real.iter().map(|x| x * sigma).collect();
    from_real(&scaled)
}
