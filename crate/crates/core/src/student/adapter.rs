//! Two-layer perceptron mapping pooled point features to the embedding
//! space, with a hand-written backward pass.

use crate::embedding::Embedding;
use crate::error::{invalid, CoreError, Result};
use crate::math::{dot, norm};
use crate::scene::mean_rows;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
        }
    }
}

/// First and second moment accumulators of the adaptive-moment optimizer,
/// laid out like [`AdapterParams::flat`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Row-major `hidden × input`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `output × hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub activation: Activation,
    pub optimizer: OptimizerState,
}

/// Gradients with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl AdapterGrads {
    pub fn zeros(p: &AdapterParams) -> Self {
        Self {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }
}

/// Cached activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub n: usize,
    pub input: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Layer-2 output norms, one per row.
    pub norms: Vec<f64>,
    /// Unit-norm outputs, row-major `n × output`.
    pub output: Vec<f64>,
}

impl AdapterParams {
    /// Hidden width `max(input, output)`, ReLU, weights uniform in
    /// `±1/√fan_in`, zero biases.
    pub fn init(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        let hidden_dim = input_dim.max(output_dim);
        Self::init_with_hidden(input_dim, hidden_dim, output_dim, seed)
    }

    pub fn init_with_hidden(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(invalid("adapter dims", "all dimensions must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let b = 1.0 / libm::sqrt(fan_in as f64);
            (0..n).map(|_| rng.random_range(-b..b)).collect()
        };
        let w1 = uniform(hidden_dim * input_dim, input_dim);
        let w2 = uniform(output_dim * hidden_dim, hidden_dim);
        let mut p = Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; output_dim],
            activation: Activation::Relu,
            optimizer: OptimizerState::default(),
        };
        p.reset_optimizer();
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn reset_optimizer(&mut self) {
        let n = self.num_params();
        self.optimizer = OptimizerState {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
        };
    }

    /// Parameters concatenated as `w1, b1, w2, b2`.
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = [
            ("adapter.w1", self.w1.len(), self.hidden_dim * self.input_dim),
            ("adapter.b1", self.b1.len(), self.hidden_dim),
            ("adapter.w2", self.w2.len(), self.output_dim * self.hidden_dim),
            ("adapter.b2", self.b2.len(), self.output_dim),
        ];
        for (what, actual, expected) in shapes {
            if actual != expected {
                return Err(CoreError::Shape {
                    what: what.into(),
                    expected,
                    actual,
                });
            }
        }
        if self.flat().iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("adapter parameters"));
        }
        Ok(())
    }

    /// Batched forward pass over pooled features (row-major `n × input`).
    pub fn forward_batch(&self, pooled: &[f64], n: usize) -> Result<ForwardCache> {
        if pooled.len() != n * self.input_dim {
            return Err(CoreError::Shape {
                what: "pooled features".into(),
                expected: n * self.input_dim,
                actual: pooled.len(),
            });
        }
        let (fi, hd, od) = (self.input_dim, self.hidden_dim, self.output_dim);
        let mut pre = vec![0.0; n * hd];
        let mut hidden = vec![0.0; n * hd];
        let mut output = vec![0.0; n * od];
        let mut norms = vec![0.0; n];
        for i in 0..n {
            let x = &pooled[i * fi..(i + 1) * fi];
            for j in 0..hd {
                let a = dot(&self.w1[j * fi..(j + 1) * fi], x) + self.b1[j];
                pre[i * hd + j] = a;
                hidden[i * hd + j] = if a > 0.0 { a } else { 0.0 };
            }
            let h = &hidden[i * hd..(i + 1) * hd];
            let z = &mut output[i * od..(i + 1) * od];
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = dot(&self.w2[k * hd..(k + 1) * hd], h) + self.b2[k];
            }
            let nz = norm(z);
            if !(nz > 0.0) || !nz.is_finite() {
                return Err(CoreError::DegenerateVector);
            }
            for zk in z.iter_mut() {
                *zk /= nz;
            }
            norms[i] = nz;
        }
        Ok(ForwardCache {
            n,
            input: pooled.to_vec(),
            pre_activation: pre,
            hidden,
            norms,
            output,
        })
    }

    /// Backpropagates `grad_output` (gradient with respect to the unit
    /// outputs) through normalization and both layers. Returns parameter
    /// gradients and the gradient with respect to the pooled input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> (AdapterGrads, Vec<f64>) {
        let (fi, hd, od) = (self.input_dim, self.hidden_dim, self.output_dim);
        let mut grads = AdapterGrads::zeros(self);
        let mut grad_input = vec![0.0; cache.n * fi];
        let mut dz = vec![0.0; od];
        let mut dh = vec![0.0; hd];
        for i in 0..cache.n {
            let f = &cache.output[i * od..(i + 1) * od];
            let g = &grad_output[i * od..(i + 1) * od];
            let fg = dot(f, g);
            for k in 0..od {
                dz[k] = (g[k] - f[k] * fg) / cache.norms[i];
            }
            let h = &cache.hidden[i * hd..(i + 1) * hd];
            for k in 0..od {
                grads.b2[k] += dz[k];
                let row = &mut grads.w2[k * hd..(k + 1) * hd];
                for (w, &hj) in row.iter_mut().zip(h) {
                    *w += dz[k] * hj;
                }
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..od {
                let row = &self.w2[k * hd..(k + 1) * hd];
                for (d, &w) in dh.iter_mut().zip(row) {
                    *d += w * dz[k];
                }
            }
            let x = &cache.input[i * fi..(i + 1) * fi];
            let gx = &mut grad_input[i * fi..(i + 1) * fi];
            for j in 0..hd {
                if cache.pre_activation[i * hd + j] <= 0.0 {
                    continue;
                }
                let da = dh[j];
                grads.b1[j] += da;
                let row = &mut grads.w1[j * fi..(j + 1) * fi];
                for (w, &xk) in row.iter_mut().zip(x) {
                    *w += da * xk;
                }
                let wrow = &self.w1[j * fi..(j + 1) * fi];
                for (gk, &w) in gx.iter_mut().zip(wrow) {
                    *gk += da * w;
                }
            }
        }
        (grads, grad_input)
    }
}

/// Student embedding of one instance: mean of the `M × input` point
/// feature rows, two layers, then L2 normalization.
pub fn adapter_forward(point_features: &[f32], params: &AdapterParams) -> Result<Embedding> {
    let fi = params.input_dim;
    if point_features.is_empty() || point_features.len() % fi != 0 {
        return Err(CoreError::Shape {
            what: "point features".into(),
            expected: fi,
            actual: point_features.len(),
        });
    }
    let pooled = mean_rows(point_features, fi);
    let cache = params.forward_batch(&pooled, 1)?;
    Embedding::normalized(cache.output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_pool_to_the_row() {
        let p = AdapterParams::init(4, 3, 7).unwrap();
        let row = [0.3f32, -1.0, 2.0, 0.5];
        let one = adapter_forward(&row, &p).unwrap();
        let many = adapter_forward(&row.repeat(5), &p).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn zero_weights_return_normalized_bias() {
        let mut p = AdapterParams::init(2, 2, 1).unwrap();
        p.w1.iter_mut().for_each(|w| *w = 0.0);
        p.w2.iter_mut().for_each(|w| *w = 0.0);
        p.b2 = vec![3.0, 4.0];
        let e = adapter_forward(&[1.0, 1.0], &p).unwrap();
        assert_eq!(e.values(), &[0.6, 0.8]);
        p.b2 = vec![0.0, 0.0];
        assert_eq!(
            adapter_forward(&[1.0, 1.0], &p),
            Err(CoreError::DegenerateVector)
        );
    }

    #[test]
    fn init_is_seeded() {
        let a = AdapterParams::init(5, 6, 3).unwrap();
        let b = AdapterParams::init(5, 6, 3).unwrap();
        let c = AdapterParams::init(5, 6, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.w1, c.w1);
        assert_eq!(a.hidden_dim, 6);
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.w1.iter().all(|w| w.abs() < bound));
    }
}
