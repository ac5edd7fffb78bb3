//! Stacked bidirectional LSTM with backpropagation through time.
//!
//! Gate rows inside every weight matrix are ordered input, forget, candidate,
//! output. Sequences are batched: step `t` of every sequence in the batch is a
//! row of one `B × in` matrix, so all sequences in a batch share a length.

use ndarray::{concatenate, s, Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::activation::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// `4H × in`
    pub input_weight: Array2<f64>,
    /// `4H × H`
    pub recurrent_weight: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub layers: Vec<BiLstmLayer>,
}

#[derive(Debug, Clone)]
struct DirectionCache {
    inputs: Vec<Array2<f64>>,
    /// Post-nonlinearity gates `[i | f | g | o]`, `B × 4H` per step.
    gates: Vec<Array2<f64>>,
    cells: Vec<Array2<f64>>,
    tanh_cells: Vec<Array2<f64>>,
    hidden: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    forward: DirectionCache,
    backward: DirectionCache,
}

#[derive(Debug, Clone)]
pub(crate) struct BiLstmCache {
    layers: Vec<LayerCache>,
}

impl LstmDirection {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input_weight: Array2::zeros((4 * hidden, input)),
            recurrent_weight: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    /// Fan-in scaled normal weights; forget-gate bias 1, other biases 0.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let wn = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("valid std");
        let un = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("valid std");
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self {
            input_weight: Array2::from_shape_simple_fn((4 * hidden, input), || wn.sample(rng)),
            recurrent_weight: Array2::from_shape_simple_fn((4 * hidden, hidden), || un.sample(rng)),
            bias,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.recurrent_weight.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.input_weight.ncols()
    }

    fn run(&self, inputs: Vec<Array2<f64>>) -> DirectionCache {
        let h = self.hidden_dim();
        let batch = inputs[0].nrows();
        let mut hprev = Array2::<f64>::zeros((batch, h));
        let mut cprev = Array2::<f64>::zeros((batch, h));
        let mut cache = DirectionCache {
            gates: Vec::with_capacity(inputs.len()),
            cells: Vec::with_capacity(inputs.len()),
            tanh_cells: Vec::with_capacity(inputs.len()),
            hidden: Vec::with_capacity(inputs.len()),
            inputs: Vec::new(),
        };
        for x in &inputs {
            let mut z = x.dot(&self.input_weight.t());
            z += &hprev.dot(&self.recurrent_weight.t());
            z += &self.bias;
            z.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
            z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
            z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
            let i = z.slice(s![.., 0..h]);
            let f = z.slice(s![.., h..2 * h]);
            let g = z.slice(s![.., 2 * h..3 * h]);
            let o = z.slice(s![.., 3 * h..]);
            let c = &f * &cprev + &i * &g;
            let tc = c.mapv(f64::tanh);
            let hn = &o * &tc;
            cache.gates.push(z.clone());
            cache.cells.push(c.clone());
            cache.tanh_cells.push(tc);
            cache.hidden.push(hn.clone());
            hprev = hn;
            cprev = c;
        }
        cache.inputs = inputs;
        cache
    }

    /// BPTT. `hidden_grads[t]` is the loss gradient arriving at the hidden
    /// output of step `t` from outside the recurrence. Returns input gradients.
    fn backprop(
        &self,
        cache: &DirectionCache,
        hidden_grads: &[Option<Array2<f64>>],
        grad: &mut LstmDirection,
    ) -> Vec<Array2<f64>> {
        let h = self.hidden_dim();
        let steps = cache.inputs.len();
        let batch = cache.inputs[0].nrows();
        let mut dh_next = Array2::<f64>::zeros((batch, h));
        let mut dc_next = Array2::<f64>::zeros((batch, h));
        let mut input_grads = vec![Array2::<f64>::zeros((0, 0)); steps];
        let zeros = Array2::<f64>::zeros((batch, h));
        for t in (0..steps).rev() {
            let mut dh = dh_next;
            if let Some(g) = &hidden_grads[t] {
                dh += g;
            }
            let gates = &cache.gates[t];
            let i = gates.slice(s![.., 0..h]);
            let f = gates.slice(s![.., h..2 * h]);
            let g = gates.slice(s![.., 2 * h..3 * h]);
            let o = gates.slice(s![.., 3 * h..]);
            let tc = &cache.tanh_cells[t];
            let cprev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
            let hprev = if t > 0 { &cache.hidden[t - 1] } else { &zeros };

            // dc = dh·o·(1 - tanh²c) + dc_next
            let mut dc = dc_next;
            Zip::from(&mut dc)
                .and(&dh)
                .and(&o)
                .and(tc)
                .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));

            let mut dz = Array2::<f64>::zeros((batch, 4 * h));
            Zip::from(dz.slice_mut(s![.., 0..h]))
                .and(&dc)
                .and(&g)
                .and(&i)
                .for_each(|d, &dc, &g, &i| *d = dc * g * i * (1.0 - i));
            Zip::from(dz.slice_mut(s![.., h..2 * h]))
                .and(&dc)
                .and(cprev)
                .and(&f)
                .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (1.0 - f));
            Zip::from(dz.slice_mut(s![.., 2 * h..3 * h]))
                .and(&dc)
                .and(&i)
                .and(&g)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            Zip::from(dz.slice_mut(s![.., 3 * h..]))
                .and(&dh)
                .and(tc)
                .and(&o)
                .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));

            grad.input_weight += &dz.t().dot(&cache.inputs[t]);
            grad.recurrent_weight += &dz.t().dot(hprev);
            grad.bias += &dz.sum_axis(Axis(0));

            input_grads[t] = dz.dot(&self.input_weight);
            dh_next = dz.dot(&self.recurrent_weight);
            dc_next = dc * f;
        }
        input_grads
    }
}

impl BiLstmLayer {
    pub fn output_dim(&self) -> usize {
        self.forward.hidden_dim() + self.backward.hidden_dim()
    }
}

impl BiLstm {
    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, BiLstmLayer::output_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.forward.input_dim())
    }

    /// Batched forward. Returns `B × 2H`: the last layer's final forward
    /// hidden state next to its final backward hidden state.
    pub(crate) fn forward_batch(&self, seq: Vec<Array2<f64>>) -> Result<(Array2<f64>, BiLstmCache)> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut current = seq;
        for layer in &self.layers {
            if current[0].ncols() != layer.forward.input_dim() {
                return Err(Error::ShapeMismatch {
                    expected: layer.forward.input_dim(),
                    actual: current[0].ncols(),
                });
            }
            let reversed: Vec<Array2<f64>> = current.iter().rev().cloned().collect();
            let fwd = layer.forward.run(current);
            let bwd = layer.backward.run(reversed);
            let steps = fwd.hidden.len();
            current = (0..steps)
                .map(|t| {
                    concatenate![Axis(1), fwd.hidden[t], bwd.hidden[steps - 1 - t]]
                })
                .collect();
            layers.push(LayerCache {
                forward: fwd,
                backward: bwd,
            });
        }
        let last = layers.last().expect("at least one layer");
        let out = concatenate![
            Axis(1),
            *last.forward.hidden.last().expect("non-empty"),
            *last.backward.hidden.last().expect("non-empty")
        ];
        Ok((out, BiLstmCache { layers }))
    }

    /// Returns per-step input gradients, in original sequence order.
    pub(crate) fn backward_batch(
        &self,
        cache: &BiLstmCache,
        upstream: &Array2<f64>,
        grads: &mut BiLstm,
    ) -> Vec<Array2<f64>> {
        let steps = cache.layers[0].forward.inputs.len();
        let top_fwd_h = self.layers.last().expect("layers").forward.hidden_dim();
        // gradient arriving at each step's (fwd ‖ bwd) output of the current layer
        let mut fwd_grads: Vec<Option<Array2<f64>>> = vec![None; steps];
        let mut bwd_grads: Vec<Option<Array2<f64>>> = vec![None; steps];
        fwd_grads[steps - 1] = Some(upstream.slice(s![.., ..top_fwd_h]).to_owned());
        bwd_grads[steps - 1] = Some(upstream.slice(s![.., top_fwd_h..]).to_owned());

        let mut input_grads = Vec::new();
        for (li, (layer, lcache)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let grad = &mut grads.layers[li];
            let dx_f = layer.forward.backprop(&lcache.forward, &fwd_grads, &mut grad.forward);
            let dx_b = layer.backward.backprop(&lcache.backward, &bwd_grads, &mut grad.backward);
            input_grads = (0..steps).map(|t| &dx_f[t] + &dx_b[steps - 1 - t]).collect();
            if li > 0 {
                let below_fwd_h = self.layers[li - 1].forward.hidden_dim();
                // split into the lower layer's forward and (reversed) backward outputs
                fwd_grads = input_grads
                    .iter()
                    .map(|g| Some(g.slice(s![.., ..below_fwd_h]).to_owned()))
                    .collect();
                bwd_grads = (0..steps)
                    .map(|r| Some(input_grads[steps - 1 - r].slice(s![.., below_fwd_h..]).to_owned()))
                    .collect();
            }
        }
        input_grads
    }

    pub(crate) fn zeros_like(&self) -> BiLstm {
        BiLstm {
            layers: self
                .layers
                .iter()
                .map(|l| BiLstmLayer {
                    forward: LstmDirection::zeros(l.forward.input_dim(), l.forward.hidden_dim()),
                    backward: LstmDirection::zeros(l.backward.input_dim(), l.backward.hidden_dim()),
                })
                .collect(),
        }
    }
}

/// Runs the stack over a single sequence of equal-length vectors.
pub fn bilstm_forward(stack: &BiLstm, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let width = stack.input_dim();
    let steps = seq
        .iter()
        .map(|x| {
            if x.len() != width {
                Err(Error::ShapeMismatch {
                    expected: width,
                    actual: x.len(),
                })
            } else {
                Ok(Array2::from_shape_vec((1, width), x.clone()).expect("shape"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (out, _) = stack.forward_batch(steps)?;
    Ok(out.into_raw_vec_and_offset().0)
}
