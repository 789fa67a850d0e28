//! Dense ReLU networks with exact reverse-mode gradients and Adam.
//!
//! Networks operate on row batches: an input of shape `B x n_in` yields an
//! output of shape `B x n_out`. Weights are stored `n_out x n_in`.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{rng_from, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    /// Input size, hidden widths, output size.
    pub layer_sizes: Vec<usize>,
    pub output: OutputActivation,
}

impl MlpSpec {
    pub fn new(n_in: usize, hidden: &[usize], n_out: usize, output: OutputActivation) -> Self {
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(n_in);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(n_out);
        Self { layer_sizes, output }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::InvalidArgument("an MLP needs at least one hidden layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("MLP layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn n_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Largest value strictly below one; sigmoid outputs are clamped into `[MIN_POSITIVE, ONE_MINUS]`.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_MINUS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Activations recorded by [`Mlp::forward`]; `acts[0]` is the input, the last entry the output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in spec.layer_sizes.windows(2) {
            weights.push(Array2::zeros((w[1], w[0])));
            biases.push(Array1::zeros(w[1]));
        }
        Self { weights, biases }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }
}

impl Mlp {
    /// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
    ///
    /// Weights are drawn in single precision so that storing them as `f32` is lossless.
    pub fn init(spec: &MlpSpec, rng: &mut SimRng) -> Result<Self> {
        spec.validate()?;
        let n_layers = spec.layer_sizes.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for (i, w) in spec.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = if i + 1 < n_layers {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            } as f32;
            let m = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                rng.random_range(-bound..bound) as f64
            });
            weights.push(m);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            spec: spec.clone(),
            weights,
            biases,
        })
    }

    pub fn init_seeded(spec: &MlpSpec, seed: u64) -> Result<Self> {
        Self::init(spec, &mut rng_from(seed))
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.spec.n_in() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.spec.n_in(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    fn layer(&self, i: usize, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights[i].t());
        z += &self.biases[i];
        if i + 1 < self.n_layers() {
            z.mapv_inplace(|v| v.max(0.0));
        } else if self.spec.output == OutputActivation::Sigmoid {
            z.mapv_inplace(sigmoid);
        }
        z
    }

    /// Forward pass over a batch, keeping what [`Mlp::backward`] needs.
    pub fn forward(&self, x: &Array2<f64>) -> Result<MlpCache> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.clone());
        for i in 0..self.n_layers() {
            let next = self.layer(i, &acts[i]);
            acts.push(next);
        }
        Ok(MlpCache { acts })
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut a = self.layer(0, x);
        for i in 1..self.n_layers() {
            a = self.layer(i, &a);
        }
        Ok(a)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let a = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(self.predict(&a)?.into_raw_vec_and_offset().0)
    }

    /// Gradients of `sum(output * grad_out)` with respect to the parameters (summed
    /// over the batch) and to the input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        let out = cache.output();
        if grad_out.dim() != out.dim() {
            return Err(Error::Dimension(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.dim(),
                out.dim()
            )));
        }
        let n = self.n_layers();
        let mut g = grad_out.clone();
        if self.spec.output == OutputActivation::Sigmoid {
            Zip::from(&mut g).and(out).for_each(|g, &p| *g *= p * (1.0 - p));
        }
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let input = &cache.acts[i];
            gw.push(g.t().dot(input));
            gb.push(g.sum_axis(Axis(0)));
            let mut gin = g.dot(&self.weights[i]);
            if i > 0 {
                Zip::from(&mut gin)
                    .and(&cache.acts[i])
                    .for_each(|g, &a| if a <= 0.0 { *g = 0.0 });
            }
            g = gin;
        }
        gw.reverse();
        gb.reverse();
        Ok((MlpGrads { weights: gw, biases: gb }, g))
    }

    /// Parameters in checkpoint order: per layer, the weight matrix row-major then the bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn from_flat(spec: &MlpSpec, flat: &[f64]) -> Result<Self> {
        spec.validate()?;
        if flat.len() != spec.n_params() {
            return Err(Error::Dimension(format!(
                "network needs {} parameters, got {}",
                spec.n_params(),
                flat.len()
            )));
        }
        let mut mlp = Self {
            spec: spec.clone(),
            weights: spec
                .layer_sizes
                .windows(2)
                .map(|w| Array2::zeros((w[1], w[0])))
                .collect(),
            biases: spec.layer_sizes.windows(2).map(|w| Array1::zeros(w[1])).collect(),
        };
        for (p, &v) in mlp.params_mut().zip(flat) {
            *p = v;
        }
        Ok(mlp)
    }

    /// Rounds every parameter to single precision.
    pub fn quantize_f32(&mut self) {
        self.params_mut().for_each(|p| *p = *p as f32 as f64);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn for_mlp(mlp: &Mlp, lr: f64) -> Self {
        Self::new(mlp.spec.n_params(), lr)
    }

    /// One bias-corrected Adam update. Non-finite gradients abort without touching anything.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if grads.iter().count() != self.m.len() {
            return Err(Error::Dimension("gradient does not match optimizer state".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, &g), m), v) in mlp
            .params_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}

/// Binary cross-entropy with the probability clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce(p: f64, label: f64) -> f64 {
    let q = p.clamp(1e-12, 1.0 - 1e-12);
    -(label * q.ln() + (1.0 - label) * (1.0 - q).ln())
}

/// Derivative of [`bce`] with respect to `p` (zero where the clamp is active).
pub fn bce_grad(p: f64, label: f64) -> f64 {
    if !(1e-12..=1.0 - 1e-12).contains(&p) {
        return 0.0;
    }
    -(label / p) + (1.0 - label) / (1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn relu_spec(sizes: &[usize], out: OutputActivation) -> MlpSpec {
        MlpSpec {
            layer_sizes: sizes.to_vec(),
            output: out,
        }
    }

    #[test]
    fn init_shapes_and_zero_biases() {
        let spec = relu_spec(&[12, 64, 64, 2], OutputActivation::Sigmoid);
        let m = Mlp::init_seeded(&spec, 3).unwrap();
        let shapes: Vec<_> = m.weights.iter().map(|w| w.dim()).collect();
        assert_eq!(shapes, vec![(64, 12), (64, 64), (2, 64)]);
        let bl: Vec<_> = m.biases.iter().map(|b| b.len()).collect();
        assert_eq!(bl, vec![64, 64, 2]);
        assert!(m.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
        assert_eq!(m.to_flat().len(), spec.n_params());
        assert!(MlpSpec::new(3, &[], 1, OutputActivation::Identity).validate().is_err());
    }

    #[test]
    fn he_variance_matches_uniform_formula() {
        let spec = relu_spec(&[64, 64, 64, 1], OutputActivation::Identity);
        let mut rng = rng_from(9);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut n = 0.0;
        while n < 1e4 {
            let m = Mlp::init(&spec, &mut rng).unwrap();
            for &w in m.weights[1].iter() {
                sum += w;
                sum2 += w * w;
                n += 1.0;
            }
        }
        let var = sum2 / n - (sum / n).powi(2);
        // uniform(-b, b) has variance b^2 / 3 with b^2 = 6 / 64.
        let oracle = (6.0 / 64.0) / 3.0;
        assert!((var / oracle - 1.0).abs() < 0.1, "{var} vs {oracle}");
    }

    #[test]
    fn init_is_deterministic_and_f32_exact() {
        let spec = relu_spec(&[5, 7, 3], OutputActivation::Sigmoid);
        let a = Mlp::init_seeded(&spec, 11).unwrap();
        let b = Mlp::init_seeded(&spec, 11).unwrap();
        assert_eq!(a, b);
        let mut q = a.clone();
        q.quantize_f32();
        assert_eq!(a, q);
    }

    #[test]
    fn identity_network_is_relu() {
        let spec = relu_spec(&[3, 3, 3], OutputActivation::Identity);
        let mut m = Mlp::init_seeded(&spec, 0).unwrap();
        m.weights = vec![Array2::eye(3), Array2::eye(3)];
        let x = array![[1.0, -2.0, 0.5]];
        let y = m.predict(&x).unwrap();
        assert_eq!(y, array![[1.0, 0.0, 0.5]]);
    }

    #[test]
    fn negative_preactivations_zero_hidden() {
        let spec = relu_spec(&[2, 4, 1], OutputActivation::Identity);
        let mut m = Mlp::init_seeded(&spec, 0).unwrap();
        m.weights[0].fill(-1.0);
        m.biases[1][0] = 0.25;
        let cache = m.forward(&array![[1.0, 2.0]]).unwrap();
        assert!(cache.acts[1].iter().all(|&h| h == 0.0));
        assert_eq!(cache.output()[[0, 0]], 0.25);
    }

    #[test]
    fn rejects_bad_input() {
        let spec = relu_spec(&[2, 4, 1], OutputActivation::Identity);
        let m = Mlp::init_seeded(&spec, 0).unwrap();
        assert!(matches!(m.forward(&array![[1.0, f64::NAN]]), Err(Error::NonFinite(_))));
        assert!(matches!(m.forward(&array![[1.0, 2.0, 3.0]]), Err(Error::Dimension(_))));
        let cache = m.forward(&array![[1.0, 2.0]]).unwrap();
        assert!(m.backward(&cache, &array![[1.0, 2.0]]).is_err());
    }

    /// Straight-line evaluation with explicit loops, independent of ndarray products.
    fn naive_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let n = m.weights.len();
        for i in 0..n {
            let w = &m.weights[i];
            let mut z = vec![0.0; w.nrows()];
            for r in 0..w.nrows() {
                let mut s = m.biases[i][r];
                for c in 0..w.ncols() {
                    s += w[[r, c]] * a[c];
                }
                z[r] = if i + 1 < n {
                    s.max(0.0)
                } else if m.spec.output == OutputActivation::Sigmoid {
                    1.0 / (1.0 + (-s).exp())
                } else {
                    s
                };
            }
            a = z;
        }
        a
    }

    #[test]
    fn batched_forward_matches_naive_loops() {
        let spec = relu_spec(&[6, 9, 5, 3], OutputActivation::Sigmoid);
        let mut rng = rng_from(21);
        let m = Mlp::init(&spec, &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((8, 6), || rng.random_range(-2.0..2.0));
        let y = m.predict(&x).unwrap();
        for b in 0..8 {
            let oracle = naive_forward(&m, x.row(b).as_slice().unwrap());
            for (o, v) in oracle.iter().zip(y.row(b)) {
                assert!((o - v).abs() < 1e-12);
            }
        }
        assert_eq!(m.forward(&x).unwrap().output(), &y);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let spec = relu_spec(&[4, 6, 2], OutputActivation::Sigmoid);
        let m = Mlp::init_seeded(&spec, 2).unwrap();
        let cache = m.forward(&Array2::ones((3, 4))).unwrap();
        let (g, gi) = m.backward(&cache, &Array2::zeros((3, 2))).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_sigmoid_gradient_closed_form() {
        // One hidden unit with identity-like ReLU passthrough: f(w) = sigmoid(w * relu(x)).
        let spec = relu_spec(&[1, 1, 1], OutputActivation::Sigmoid);
        let mut m = Mlp::init_seeded(&spec, 0).unwrap();
        m.weights[0][[0, 0]] = 1.0;
        m.weights[1][[0, 0]] = 0.7;
        let x = 1.3;
        let cache = m.forward(&array![[x]]).unwrap();
        let (g, _) = m.backward(&cache, &array![[1.0]]).unwrap();
        let s = 1.0 / (1.0 + (-0.7 * x).exp());
        assert!((g.weights[1][[0, 0]] - s * (1.0 - s) * x).abs() < 1e-14);
    }

    fn finite_difference_check(spec: &MlpSpec, seed: u64) {
        let mut rng = rng_from(seed);
        let mut m = Mlp::init(spec, &mut rng).unwrap();
        // Nonzero biases keep pre-activations away from the ReLU kink at exactly zero.
        for b in m.biases.iter_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_simple_fn((4, spec.n_in()), || rng.random_range(-1.5..1.5));
        let gout = Array2::from_shape_simple_fn((4, spec.n_out()), || rng.random_range(-1.0..1.0));
        let objective = |mm: &Mlp, xx: &Array2<f64>| -> f64 {
            (mm.predict(xx).unwrap() * &gout).sum()
        };
        let cache = m.forward(&x).unwrap();
        let (g, gi) = m.backward(&cache, &gout).unwrap();
        let h = 1e-6;
        let analytic: Vec<f64> = g.iter().copied().collect();
        let flat = m.to_flat();
        for (i, &a) in analytic.iter().enumerate() {
            let mut p = flat.clone();
            p[i] += h;
            let up = objective(&Mlp::from_flat(spec, &p).unwrap(), &x);
            p[i] -= 2.0 * h;
            let dn = objective(&Mlp::from_flat(spec, &p).unwrap(), &x);
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            assert!(rel < 1e-5, "param {i}: fd {fd} analytic {a}");
        }
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let up = objective(&m, &xp);
            xp[[r, c]] -= 2.0 * h;
            let dn = objective(&m, &xp);
            let fd = (up - dn) / (2.0 * h);
            let a = gi[[r, c]];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            assert!(rel < 1e-5, "input {idx}: fd {fd} analytic {a}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..4 {
            finite_difference_check(&relu_spec(&[5, 8, 6, 3], OutputActivation::Sigmoid), seed);
            finite_difference_check(&relu_spec(&[4, 7, 5, 2], OutputActivation::Identity), seed + 10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gradients_match_on_random_specs(
            n_in in 1usize..6,
            hidden in proptest::collection::vec(1usize..8, 1..3),
            n_out in 1usize..4,
            sig in any::<bool>(),
            seed in 0u64..1000,
        ) {
            let act = if sig { OutputActivation::Sigmoid } else { OutputActivation::Identity };
            finite_difference_check(&MlpSpec::new(n_in, &hidden, n_out, act), seed);
        }

        #[test]
        fn sigmoid_outputs_strictly_inside_unit_interval(x in -1e4..1e4f64) {
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn adam_first_step_hand_value() {
        let spec = relu_spec(&[1, 1, 1], OutputActivation::Identity);
        let mut m = Mlp::from_flat(&spec, &[0.0; 4]).unwrap();
        let mut g = MlpGrads::zeros(&spec);
        g.weights[0][[0, 0]] = 1.0;
        let mut adam = Adam::for_mlp(&m, 1e-3);
        adam.step(&mut m, &g).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction.
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((m.weights[0][[0, 0]] - expected).abs() < 1e-18);
        assert_eq!(m.weights[1][[0, 0]], 0.0);
    }

    #[test]
    fn adam_zero_gradient_is_noop_and_nan_rejected() {
        let spec = relu_spec(&[3, 4, 2], OutputActivation::Identity);
        let mut m = Mlp::init_seeded(&spec, 1).unwrap();
        let before = m.clone();
        let mut adam = Adam::for_mlp(&m, 1e-3);
        adam.step(&mut m, &MlpGrads::zeros(&spec)).unwrap();
        assert_eq!(m, before);
        let mut g = MlpGrads::zeros(&spec);
        g.biases[0][1] = f64::NAN;
        assert!(matches!(adam.step(&mut m, &g), Err(Error::NonFinite(_))));
        assert_eq!(m, before);
    }

    #[test]
    fn adam_runs_are_bit_identical() {
        let spec = relu_spec(&[3, 5, 2], OutputActivation::Sigmoid);
        let run = || {
            let mut m = Mlp::init_seeded(&spec, 4).unwrap();
            let mut adam = Adam::for_mlp(&m, 1e-3);
            let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
            for _ in 0..100 {
                let cache = m.forward(&x).unwrap();
                let gout = cache.output() - 0.5;
                let (g, _) = m.backward(&cache, &gout).unwrap();
                adam.step(&mut m, &g).unwrap();
            }
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bce_half_is_ln2() {
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce(0.0, 1.0).is_finite());
        let (p, y, h) = (0.3, 1.0, 1e-7);
        let fd = (bce(p + h, y) - bce(p - h, y)) / (2.0 * h);
        assert!((fd - bce_grad(p, y)).abs() < 1e-6);
    }
}
