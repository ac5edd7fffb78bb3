use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::activation::Activation;
use crate::error::{Error, Result};

/// Fully-connected layer `activation(W·x + b)` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub(crate) struct DenseCache {
    pub input: Array2<f64>,
    pub pre_activation: Array2<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    /// Weights drawn from `N(0, 1/fan_in)`, zero bias.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("valid std");
        Self {
            weight: Array2::from_shape_simple_fn((output, input), || normal.sample(rng)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let x = ndarray::ArrayView1::from(x);
        let z = self.weight.dot(&x) + &self.bias;
        Ok(z.iter().map(|&v| self.activation.apply(v)).collect())
    }

    /// Row-batched forward: each row of `input` is one sample.
    pub(crate) fn forward_batch(&self, input: Array2<f64>) -> (Array2<f64>, DenseCache) {
        let mut z = input.dot(&self.weight.t());
        z += &self.bias;
        let a = self.activation.forward(&z);
        (
            a,
            DenseCache {
                input,
                pre_activation: z,
            },
        )
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input.
    pub(crate) fn backward_batch(
        &self,
        cache: &DenseCache,
        upstream: &Array2<f64>,
        grad: &mut DenseLayer,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let dz = self.activation.backward(&cache.pre_activation, upstream);
        grad.weight += &dz.t().dot(&cache.input);
        grad.bias += &dz.sum_axis(Axis(0));
        need_input_grad.then(|| dz.dot(&self.weight))
    }
}

/// Runs a stack of layers, returning the output and one cache per layer.
pub(crate) fn mlp_forward(layers: &[DenseLayer], input: Array2<f64>) -> (Array2<f64>, Vec<DenseCache>) {
    let mut caches = Vec::with_capacity(layers.len());
    let mut a = input;
    for layer in layers {
        let (next, cache) = layer.forward_batch(a);
        caches.push(cache);
        a = next;
    }
    (a, caches)
}

pub(crate) fn mlp_backward(
    layers: &[DenseLayer],
    caches: &[DenseCache],
    upstream: Array2<f64>,
    grads: &mut [DenseLayer],
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    let mut g = upstream;
    for (i, ((layer, cache), grad)) in layers.iter().zip(caches).zip(grads.iter_mut()).enumerate().rev() {
        let need = i > 0 || need_input_grad;
        g = layer.backward_batch(cache, &g, grad, need)?;
    }
    Some(g)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_through() {
        let mut l = DenseLayer::zeros(3, 3, Activation::Identity);
        l.weight = Array2::eye(3);
        assert_eq!(l.forward_vec(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_weights_give_activated_bias() {
        let mut l = DenseLayer::zeros(4, 2, Activation::Selu);
        l.bias = Array1::from(vec![0.3, -0.7]);
        let out = l.forward_vec(&[9.0, 1.0, -3.0, 2.0]).unwrap();
        assert_eq!(out, vec![super::super::activation::selu(0.3), super::super::activation::selu(-0.7)]);
    }

    #[test]
    fn matches_scalar_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = DenseLayer::random(7, 5, Activation::Selu, &mut rng);
        l.bias = Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = l.forward_vec(&x).unwrap();
        for o in 0..5 {
            let mut z = l.bias[o];
            for i in 0..7 {
                z += l.weight[(o, i)] * x[i];
            }
            assert!((got[o] - super::super::activation::selu(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let l = DenseLayer::zeros(4, 2, Activation::Selu);
        assert!(matches!(
            l.forward_vec(&[1.0]),
            Err(Error::ShapeMismatch { expected: 4, actual: 1 })
        ));
    }
}
