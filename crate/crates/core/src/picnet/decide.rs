//! Final hard decisions from a stage trace.

use ndarray::Array2;
use num_complex::Complex64;

use super::{PicDims, PicKind, Trace};
use crate::sysmodel::index_to_bits;

/// Hard decisions for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub active: Vec<bool>,
    /// Effective channel estimates in noise-normalized units, zero for inactive devices.
    pub gamma: Vec<Complex64>,
    /// K x D symbols (coherent), zero for inactive devices.
    pub symbols: Vec<Complex64>,
    /// K x J bits.
    pub bits: Vec<u8>,
    /// Chosen sequence per device (non-coherent).
    pub sequence: Vec<Option<usize>>,
}

impl Decision {
    pub fn inactive(n_devices: usize, n_data: usize, n_bits: usize) -> Self {
        Self {
            active: vec![false; n_devices],
            gamma: vec![Complex64::new(0.0, 0.0); n_devices],
            symbols: vec![Complex64::new(0.0, 0.0); n_devices * n_data],
            bits: vec![0; n_devices * n_bits],
            sequence: vec![None; n_devices],
        }
    }

    pub fn n_devices(&self) -> usize {
        self.active.len()
    }
}

fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

fn gated_gamma(active: bool, pair: [f64; 2], sigma_gamma: f64) -> Complex64 {
    if active {
        Complex64::new(pair[0], pair[1]) * sigma_gamma
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Thresholds activity scores and gates the last-stage channel estimates.
///
/// Symbols and bits are left at zero; the coherent data path fills them in.
pub fn finalize_pilot(scores: &[f64], gamma_last: &[f64], tau: f64, sigma_gamma: f64, n_data: usize, n_bits: usize) -> Decision {
    let k_n = scores.len();
    let mut out = Decision::inactive(k_n, n_data, n_bits);
    for k in 0..k_n {
        out.active[k] = scores[k] >= tau;
        out.gamma[k] = gated_gamma(out.active[k], [gamma_last[2 * k], gamma_last[2 * k + 1]], sigma_gamma);
    }
    out
}

/// Decisions of the data-aided receiver from last-stage symbol probabilities
/// (`K*D*|C|` entries, device-major).
pub fn finalize_data_aided(
    probs: &[f64],
    gamma_last: &[f64],
    tau: f64,
    sigma_gamma: f64,
    symbols: &[Complex64],
    n_data: usize,
) -> Decision {
    let c_n = symbols.len();
    let k_n = probs.len() / (n_data * c_n);
    let bps = c_n.trailing_zeros() as usize;
    let mut out = Decision::inactive(k_n, n_data, n_data * bps);
    for k in 0..k_n {
        let block = &probs[k * n_data * c_n..(k + 1) * n_data * c_n];
        let best: Vec<(usize, f64)> = block.chunks(c_n).map(argmax).collect();
        let mu = best.iter().map(|b| b.1).sum::<f64>() / n_data as f64;
        let active = mu >= tau;
        out.active[k] = active;
        out.gamma[k] = gated_gamma(active, [gamma_last[2 * k], gamma_last[2 * k + 1]], sigma_gamma);
        if active {
            for (d, &(c, _)) in best.iter().enumerate() {
                out.symbols[k * n_data + d] = symbols[c];
                let start = k * n_data * bps + d * bps;
                index_to_bits(c, bps, &mut out.bits[start..start + bps]);
            }
        }
    }
    out
}

/// Decisions of the non-coherent receiver from last-stage sequence probabilities
/// (`K*2^J` entries, device-major).
pub fn finalize_noncoherent(probs: &[f64], gamma_last: &[f64], tau: f64, sigma_gamma: f64, n_bits: usize) -> Decision {
    let j_n = 1usize << n_bits;
    let k_n = probs.len() / j_n;
    let mut out = Decision::inactive(k_n, 0, n_bits);
    for k in 0..k_n {
        let (j, p_max) = argmax(&probs[k * j_n..(k + 1) * j_n]);
        let active = p_max >= tau;
        out.active[k] = active;
        out.gamma[k] = gated_gamma(active, [gamma_last[2 * k], gamma_last[2 * k + 1]], sigma_gamma);
        if active {
            out.sequence[k] = Some(j);
            index_to_bits(j, n_bits, &mut out.bits[k * n_bits..(k + 1) * n_bits]);
        }
    }
    out
}

/// Per-device activity scores compared against the threshold:
/// `p_k` (pilot-only), `mu_k` (data-aided) or `p_max,k` (non-coherent).
pub fn activity_scores(kind: PicKind, dims: &PicDims, trace: &Trace) -> Array2<f64> {
    let last = trace.probs.last().expect("trace has probabilities");
    let (b, k_n) = (last.nrows(), dims.n_devices);
    match kind {
        PicKind::PilotOnly => last.clone(),
        PicKind::DataAided => {
            let c_n = dims.alphabet;
            Array2::from_shape_fn((b, k_n), |(r, k)| {
                let mut sum = 0.0;
                for d in 0..dims.n_data {
                    let start = k * dims.n_data * c_n + d * c_n;
                    sum += (0..c_n).map(|c| last[[r, start + c]]).fold(f64::MIN, f64::max);
                }
                sum / dims.n_data as f64
            })
        }
        PicKind::NonCoherent => {
            let j_n = dims.n_seq;
            Array2::from_shape_fn((b, k_n), |(r, k)| {
                (0..j_n).map(|j| last[[r, k * j_n + j]]).fold(f64::MIN, f64::max)
            })
        }
    }
}

impl super::PicModel {
    /// Hard decisions for every row of a trace at threshold `tau`.
    pub fn decide(&self, trace: &Trace, tau: f64) -> Vec<Decision> {
        let last_g = trace.gamma_hat.last().expect("at least one stage");
        let probs = trace.probs.last().expect("trace has probabilities");
        let sg = self.standardizer.sigma_gamma;
        (0..trace.len())
            .map(|r| {
                let g = last_g.row(r).to_vec();
                let p = probs.row(r).to_vec();
                match self.kind {
                    PicKind::PilotOnly => finalize_pilot(&p, &g, tau, sg, self.dims.n_data, self.dims.n_bits),
                    PicKind::DataAided => finalize_data_aided(&p, &g, tau, sg, self.symbols(), self.dims.n_data),
                    PicKind::NonCoherent => finalize_noncoherent(&p, &g, tau, sg, self.dims.n_bits),
                }
            })
            .collect()
    }
}
