//! Sparse-recovery baselines: complex LASSO, AMP, and activity rules built on them.

use num_complex::Complex64;

use crate::error::{Error, Result};

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `S x` for a column-stored matrix.
pub fn mat_vec(cols: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
    let l = cols[0].len();
    let mut out = vec![Complex64::new(0.0, 0.0); l];
    for (c, &xi) in cols.iter().zip(x) {
        if xi == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (o, &s) in out.iter_mut().zip(c) {
            *o += s * xi;
        }
    }
    out
}

/// `S^H v`.
pub fn adjoint_vec(cols: &[Vec<Complex64>], v: &[Complex64]) -> Vec<Complex64> {
    cols.iter()
        .map(|c| c.iter().zip(v).map(|(s, x)| s.conj() * x).sum())
        .collect()
}

/// Largest eigenvalue of `S^H S` by power iteration.
pub fn spectral_norm_sqr(cols: &[Vec<Complex64>]) -> f64 {
    let m = cols.len();
    let mut x: Vec<Complex64> = (0..m).map(|i| Complex64::new(1.0 + 0.01 * i as f64, 0.0)).collect();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let y = adjoint_vec(cols, &mat_vec(cols, &x));
        let n = norm_sqr(&y).sqrt();
        if n == 0.0 {
            return 0.0;
        }
        let next = n / norm_sqr(&x).sqrt();
        x = y.into_iter().map(|z| z / n).collect();
        if (next - lambda).abs() <= 1e-13 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

fn soft_threshold(z: Complex64, t: f64) -> Complex64 {
    let a = z.norm();
    if a <= t {
        Complex64::new(0.0, 0.0)
    } else {
        z * (1.0 - t / a)
    }
}

pub fn lasso_objective(y: &[Complex64], cols: &[Vec<Complex64>], x: &[Complex64], nu: f64) -> f64 {
    let sx = mat_vec(cols, x);
    let r: f64 = y.iter().zip(&sx).map(|(a, b)| (a - b).norm_sqr()).sum();
    0.5 * r + nu * x.iter().map(|z| z.norm()).sum::<f64>()
}

fn check_matrix(y: &[Complex64], cols: &[Vec<Complex64>]) -> Result<()> {
    if cols.is_empty() {
        return Err(Error::InvalidArgument("matrix has no columns".into()));
    }
    if cols.iter().any(|c| c.len() != y.len()) {
        return Err(Error::Dimension("columns and observation differ in length".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoOutput {
    pub x: Vec<Complex64>,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every accepted iteration.
    pub history: Vec<f64>,
}

/// Minimizes `0.5 ||y - S x||^2 + nu ||x||_1` over complex `x`.
///
/// Monotone FISTA with step `1 / ||S||^2`, complex soft-thresholding and a
/// gradient-based momentum restart. Stops when an accepted step lowers the
/// objective by less than `1e-9` relative, or after 2000 iterations.
pub fn lasso_estimate(y: &[Complex64], cols: &[Vec<Complex64>], nu: f64) -> Result<LassoOutput> {
    const MAX_ITERS: usize = 2000;
    const REL_TOL: f64 = 1e-9;
    check_matrix(y, cols)?;
    let lip = spectral_norm_sqr(cols);
    if !(lip > 0.0) {
        return Err(Error::Degenerate("LASSO matrix is zero".into()));
    }
    let step = 1.0 / lip;
    let m = cols.len();
    let mut x = vec![Complex64::new(0.0, 0.0); m];
    let mut v = x.clone();
    let mut theta: f64 = 1.0;
    let mut f_x = lasso_objective(y, cols, &x, nu);
    let mut history = vec![f_x];
    let mut iterations = 0;
    for it in 0..MAX_ITERS {
        iterations = it + 1;
        let sv = mat_vec(cols, &v);
        let resid: Vec<Complex64> = sv.iter().zip(y).map(|(a, b)| a - b).collect();
        let grad = adjoint_vec(cols, &resid);
        let z: Vec<Complex64> = v
            .iter()
            .zip(&grad)
            .map(|(vi, gi)| soft_threshold(vi - gi * step, nu * step))
            .collect();
        let f_z = lasso_objective(y, cols, &z, nu);
        let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        let accepted = f_z <= f_x;
        let x_prev = x.clone();
        if accepted {
            x = z.clone();
        }
        // Restart momentum when the step points uphill.
        let uphill: f64 = v
            .iter()
            .zip(&z)
            .zip(x_prev.iter())
            .map(|((vi, zi), xi)| ((vi - zi).conj() * (zi - xi)).re)
            .sum();
        if !accepted || uphill > 0.0 {
            theta = 1.0;
            v = x.clone();
        } else {
            let a = theta / theta_next;
            let b = (theta - 1.0) / theta_next;
            v = (0..m).map(|i| x[i] + (z[i] - x[i]) * a + (x[i] - x_prev[i]) * b).collect();
            theta = theta_next;
        }
        if accepted {
            let dec = f_x - f_z;
            f_x = f_z;
            history.push(f_x);
            if dec <= REL_TOL * f_x.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }
    Ok(LassoOutput {
        x,
        objective: f_x,
        iterations,
        history,
    })
}

/// Bernoulli-complex-Gaussian prior: column `m` is nonzero with probability
/// `activity[m]` and then distributed `CN(0, variance[m])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrior {
    pub activity: Vec<f64>,
    pub variance: Vec<f64>,
}

impl SparsePrior {
    pub fn uniform(n: usize, activity: f64, variance: f64) -> Self {
        Self {
            activity: vec![activity; n],
            variance: vec![variance; n],
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.activity.len() != m || self.variance.len() != m {
            return Err(Error::Dimension(format!("prior covers {} columns, matrix {m}", self.activity.len())));
        }
        if self.variance.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("prior variances must be positive".into()));
        }
        if self.activity.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::InvalidArgument("prior activity must lie in (0,1]".into()));
        }
        Ok(())
    }
}

/// MMSE denoiser for one entry: returns `(estimate, posterior activity, derivative)`.
///
/// The derivative is `d eta / d r` in the complex (Wirtinger-averaged) sense used by
/// the Onsager term.
pub fn bg_denoise(r: Complex64, tau2: f64, activity: f64, variance: f64) -> (Complex64, f64, f64) {
    let g = variance / (variance + tau2);
    let u = r.norm_sqr();
    let c = variance / (tau2 * (variance + tau2));
    let phi = if activity >= 1.0 {
        1.0
    } else {
        let log_ratio = ((1.0 - activity) / activity).ln() + ((variance + tau2) / tau2).ln() - u * c;
        1.0 / (1.0 + log_ratio.exp())
    };
    let deriv = g * phi * (1.0 + c * u * (1.0 - phi));
    (r * (g * phi), phi, deriv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpOutput {
    pub x: Vec<Complex64>,
    /// Posterior activity probability per column at the last iteration.
    pub phi: Vec<f64>,
    /// Effective noise variance used at every iteration.
    pub tau2: Vec<f64>,
}

/// Complex AMP with the Bernoulli-Gaussian MMSE denoiser. Columns must have unit norm.
pub fn amp_estimate(y: &[Complex64], cols: &[Vec<Complex64>], prior: &SparsePrior, n_iters: usize) -> Result<AmpOutput> {
    check_matrix(y, cols)?;
    prior.validate(cols.len())?;
    for (m, c) in cols.iter().enumerate() {
        if (norm_sqr(c).sqrt() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("column {m} does not have unit norm")));
        }
    }
    let l = y.len() as f64;
    let m = cols.len();
    let mut x = vec![Complex64::new(0.0, 0.0); m];
    let mut phi = prior.activity.clone();
    let mut z = y.to_vec();
    let mut tau2_track = Vec::with_capacity(n_iters);
    let floor = 1e-30 * (norm_sqr(y) / l).max(1e-300);
    for _ in 0..n_iters {
        let tau2 = (norm_sqr(&z) / l).max(floor);
        tau2_track.push(tau2);
        let corr = adjoint_vec(cols, &z);
        let mut div = 0.0;
        for i in 0..m {
            let r = x[i] + corr[i];
            let (est, p, d) = bg_denoise(r, tau2, prior.activity[i], prior.variance[i]);
            x[i] = est;
            phi[i] = p;
            div += d;
        }
        let sx = mat_vec(cols, &x);
        let onsager = div / l;
        z = (0..y.len()).map(|i| y[i] - sx[i] + z[i] * onsager).collect();
    }
    Ok(AmpOutput {
        x,
        phi,
        tau2: tau2_track,
    })
}

/// `1{|gamma_hat_k| >= theta}` for every threshold of a grid.
pub fn activity_from_magnitude(gamma_hat: &[Complex64], grid: &[f64]) -> Vec<Vec<bool>> {
    grid.iter()
        .map(|&th| gamma_hat.iter().map(|g| g.norm() >= th).collect())
        .collect()
}

/// Per-device decision under the one-sequence-per-device constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupDecision {
    pub active: bool,
    /// Index of the strongest sequence (lowest index on ties).
    pub best: usize,
}

impl GroupDecision {
    pub fn chosen(&self) -> Option<usize> {
        self.active.then_some(self.best)
    }
}

/// Picks the largest-magnitude sequence of each device and thresholds its magnitude.
pub fn noncoherent_constrain(gamma_hat: &[Complex64], per_device: usize, threshold: f64) -> Vec<GroupDecision> {
    gamma_hat
        .chunks(per_device)
        .map(|group| {
            let mut best = 0;
            for (j, g) in group.iter().enumerate().skip(1) {
                if g.norm() > group[best].norm() {
                    best = j;
                }
            }
            GroupDecision {
                active: group[best].norm() >= threshold,
                best,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::sysmodel::complex_normal;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(l: usize, m: usize, seed: u64, normalize: bool) -> Vec<Vec<Complex64>> {
        let mut rng = rng_from(seed);
        (0..m)
            .map(|_| {
                let col: Vec<Complex64> = (0..l).map(|_| complex_normal(&mut rng, 1.0 / l as f64)).collect();
                if normalize {
                    let n = norm_sqr(&col).sqrt();
                    col.into_iter().map(|z| z / n).collect()
                } else {
                    col
                }
            })
            .collect()
    }

    /// Unitary DFT matrix of size n, stored by columns.
    fn dft(n: usize) -> Vec<Vec<Complex64>> {
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|i| Complex64::from_polar(1.0 / (n as f64).sqrt(), -2.0 * std::f64::consts::PI * (i * k) as f64 / n as f64))
                    .collect()
            })
            .collect()
    }

    fn coordinate_descent(y: &[Complex64], cols: &[Vec<Complex64>], nu: f64) -> Vec<Complex64> {
        let m = cols.len();
        let mut x = vec![c(0.0, 0.0); m];
        let mut r = y.to_vec();
        for _ in 0..200_000 {
            let mut change: f64 = 0.0;
            for k in 0..m {
                let nk = norm_sqr(&cols[k]);
                let rho: Complex64 = cols[k].iter().zip(&r).map(|(s, v)| s.conj() * v).sum::<Complex64>() + x[k] * nk;
                let new = soft_threshold(rho, nu) / nk;
                let delta = new - x[k];
                if delta != c(0.0, 0.0) {
                    for (ri, s) in r.iter_mut().zip(&cols[k]) {
                        *ri -= s * delta;
                    }
                }
                change = change.max(delta.norm());
                x[k] = new;
            }
            if change < 1e-15 {
                break;
            }
        }
        x
    }

    #[test]
    fn lasso_unitary_least_squares() {
        let s = dft(8);
        let mut rng = rng_from(1);
        let y: Vec<Complex64> = (0..8).map(|_| complex_normal(&mut rng, 1.0)).collect();
        let out = lasso_estimate(&y, &s, 0.0).unwrap();
        let ls = adjoint_vec(&s, &y);
        for (a, b) in out.x.iter().zip(&ls) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn lasso_kill_condition() {
        let s = random_matrix(6, 20, 2, true);
        let mut rng = rng_from(3);
        let y: Vec<Complex64> = (0..6).map(|_| complex_normal(&mut rng, 1.0)).collect();
        let nu = adjoint_vec(&s, &y).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let out = lasso_estimate(&y, &s, nu).unwrap();
        assert!(out.x.iter().all(|z| *z == c(0.0, 0.0)));
        assert!(lasso_estimate(&y, &vec![vec![c(0.0, 0.0); 6]; 3], 0.1).is_err());
    }

    #[test]
    fn lasso_matches_coordinate_descent() {
        for trial in 0..20 {
            let s = random_matrix(6, 20, 100 + trial, true);
            let mut rng = rng_from(200 + trial);
            let mut x0 = vec![c(0.0, 0.0); 20];
            for _ in 0..3 {
                x0[rng.random_range(0..20)] = complex_normal(&mut rng, 1.0);
            }
            let mut y = mat_vec(&s, &x0);
            y.iter_mut().for_each(|v| *v += complex_normal(&mut rng, 0.01));
            let fista = lasso_estimate(&y, &s, 0.05).unwrap();
            let cd = coordinate_descent(&y, &s, 0.05);
            let f_cd = lasso_objective(&y, &s, &cd, 0.05);
            assert!((fista.objective - f_cd).abs() < 1e-6, "trial {trial}: {} vs {f_cd}", fista.objective);
            assert!(fista.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn denoiser_limits() {
        // Certain activity: linear MMSE shrinkage.
        let (est, phi, _) = bg_denoise(c(1.5, -0.5), 0.3, 1.0, 2.0);
        assert_eq!(phi, 1.0);
        let g = 2.0 / 2.3;
        assert!((est - c(1.5, -0.5) * g).norm() < 1e-10);
        let (_, phi, d) = bg_denoise(c(0.1, 0.0), 1.0, 0.1, 5.0);
        assert!(phi > 0.0 && phi < 1.0 && d > 0.0);
    }

    #[test]
    fn denoiser_derivative_matches_finite_difference() {
        let mut rng = rng_from(4);
        for _ in 0..50 {
            let r = complex_normal(&mut rng, 4.0);
            let (tau2, act, var) = (rng.random_range(0.1..2.0), rng.random_range(0.05..0.9), rng.random_range(0.5..5.0));
            let h = 1e-6;
            let f = |z: Complex64| bg_denoise(z, tau2, act, var).0;
            let d_re = (f(r + c(h, 0.0)).re - f(r - c(h, 0.0)).re) / (2.0 * h);
            let d_im = (f(r + c(0.0, h)).im - f(r - c(0.0, h)).im) / (2.0 * h);
            let (_, _, d) = bg_denoise(r, tau2, act, var);
            assert!((0.5 * (d_re + d_im) - d).abs() < 1e-6);
        }
    }

    #[test]
    fn amp_first_iteration_dense_prior_is_linear_mmse() {
        let s = dft(6);
        let mut rng = rng_from(5);
        let y: Vec<Complex64> = (0..6).map(|_| complex_normal(&mut rng, 1.0)).collect();
        let prior = SparsePrior::uniform(6, 1.0, 2.0);
        let out = amp_estimate(&y, &s, &prior, 1).unwrap();
        let tau2 = norm_sqr(&y) / 6.0;
        let r = adjoint_vec(&s, &y);
        for (a, b) in out.x.iter().zip(&r) {
            assert!((a - b * (2.0 / (2.0 + tau2))).norm() < 1e-10);
        }
    }

    #[test]
    fn amp_exact_recovery_unitary_single_column() {
        let s = dft(8);
        let mut x0 = vec![c(0.0, 0.0); 8];
        x0[3] = c(2.0, -1.0);
        let y = mat_vec(&s, &x0);
        let prior = SparsePrior::uniform(8, 0.1, 4.0);
        let early = amp_estimate(&y, &s, &prior, 5).unwrap();
        assert!((early.x[3] - x0[3]).norm() < 1e-2 * x0[3].norm());
        let out = amp_estimate(&y, &s, &prior, 50).unwrap();
        for (a, b) in out.x.iter().zip(&x0) {
            assert!((a - b).norm() < 1e-8, "{a} vs {b}");
        }
        assert!(out.tau2.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn amp_rejects_unnormalized_columns() {
        let s = random_matrix(4, 6, 6, false);
        let y = vec![c(1.0, 0.0); 4];
        assert!(amp_estimate(&y, &s, &SparsePrior::uniform(6, 0.1, 1.0), 3).is_err());
    }

    #[test]
    fn orthogonal_zero_noise_support_recovery() {
        let s = dft(8);
        let mut x0 = vec![c(0.0, 0.0); 8];
        x0[1] = c(1.0, 1.0);
        x0[6] = c(-0.5, 2.0);
        let y = mat_vec(&s, &x0);
        let lasso = lasso_estimate(&y, &s, 1e-9).unwrap();
        let amp = amp_estimate(&y, &s, &SparsePrior::uniform(8, 0.2, 4.0), 50).unwrap();
        for i in 0..8 {
            let truth = x0[i] != c(0.0, 0.0);
            assert_eq!(lasso.x[i].norm() > 1e-6, truth);
            assert_eq!(amp.phi[i] > 0.5, truth);
        }
    }

    #[test]
    fn magnitude_rule_examples() {
        let g = [c(0.1, 0.0), c(0.9, 0.0), c(0.4, 0.0)];
        let out = activity_from_magnitude(&g, &[0.0, 0.5, 1.0]);
        assert_eq!(out[0], vec![true; 3]);
        assert_eq!(out[1], vec![false, true, false]);
        assert_eq!(out[2], vec![false; 3]);
    }

    #[test]
    fn constrain_examples() {
        let g = [c(0.9, 0.0), c(0.1, 0.0), c(0.2, 0.0), c(0.1, 0.0)];
        assert_eq!(noncoherent_constrain(&g, 4, 0.5), vec![GroupDecision { active: true, best: 0 }]);
        let weak = [c(0.3, 0.0), c(0.1, 0.0), c(0.2, 0.0), c(0.1, 0.0)];
        assert_eq!(noncoherent_constrain(&weak, 4, 0.5)[0].chosen(), None);
    }

    proptest! {
        #[test]
        fn constrain_matches_scalar_loop(
            mags in proptest::collection::vec(0.0..2.0f64, 12),
            th in 0.0..2.0f64,
        ) {
            let g: Vec<Complex64> = mags.iter().map(|&m| c(0.0, m)).collect();
            let out = noncoherent_constrain(&g, 4, th);
            for k in 0..3 {
                let mut best = 0;
                for j in 1..4 {
                    if mags[k * 4 + j] > mags[k * 4 + best] {
                        best = j;
                    }
                }
                let active = mags[k * 4 + best] >= th;
                prop_assert_eq!(out[k].active, active);
                prop_assert_eq!(out[k].best, best);
                prop_assert_eq!(out[k].chosen().iter().count(), active as usize);
            }
        }

        #[test]
        fn lasso_objective_never_increases(seed in 0u64..200, nu in 0.001..0.5f64) {
            let s = random_matrix(5, 12, seed, true);
            let mut rng = rng_from(seed + 1000);
            let y: Vec<Complex64> = (0..5).map(|_| complex_normal(&mut rng, 1.0)).collect();
            let out = lasso_estimate(&y, &s, nu).unwrap();
            prop_assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
