use ndarray::{Array2, Zip};

/// Self-normalizing scale constant λ.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_48;
/// Self-normalizing negative-saturation constant α.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_38;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    Identity,
}

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

#[inline]
pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Selu => selu(x),
            Activation::Identity => x,
        }
    }

    pub(crate) fn forward(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Selu => z.mapv(selu),
            Activation::Identity => z.clone(),
        }
    }

    /// `upstream ⊙ act'(z)`.
    pub(crate) fn backward(self, z: &Array2<f64>, upstream: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Selu => {
                let mut out = upstream.clone();
                Zip::from(&mut out).and(z).for_each(|g, &zv| *g *= selu_grad(zv));
                out
            }
            Activation::Identity => upstream.clone(),
        }
    }
}
