//! The constellation-embedding network.
//!
//! ```text
//! neighbour descriptors ─ descriptor_mlp (512→512→256→32) ─┐
//! neighbour geometry (4) ──────────────────────────────────┴─ k × 36
//!     └─ 2-layer BiLSTM (32 per direction) → 64 ─ nn_head (64→64→64→32) ─┐
//! central scale + orientation (2) ──────────────────────────────────────┤
//! central descriptor ─ descriptor_mlp (shared) → 32 ─────────────────────┴─ 66
//!     └─ final_head (66→64→64→48, linear output) → embedding
//! ```
//!
//! Descriptor embeddings are computed once per distinct descriptor in a batch
//! and gathered from there; gradients flow back through the same rows.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use super::dense::{mlp_backward, mlp_forward, DenseCache, DenseLayer};
use super::lstm::{BiLstm, BiLstmCache, BiLstmLayer, LstmDirection};
use crate::constellation::{Constellation, NormConstants, CENTRAL_GEOMETRY, NEIGHBOR_GEOMETRY};
use crate::error::{Error, Result};
use crate::model::{write_descriptor_reals, BinaryDescriptor, DESCRIPTOR_BITS};
use crate::rng;

pub const EMBEDDING_DIM: usize = 48;
pub const DESCRIPTOR_EMBED_DIM: usize = 32;
pub const LSTM_HIDDEN: usize = 32;
pub const NEIGHBORHOOD_DIM: usize = 32;
const SEQ_INPUT: usize = DESCRIPTOR_EMBED_DIM + NEIGHBOR_GEOMETRY;
const HEAD_INPUT: usize = NEIGHBORHOOD_DIM + CENTRAL_GEOMETRY + DESCRIPTOR_EMBED_DIM;

/// Every trainable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub descriptor_mlp: Vec<DenseLayer>,
    pub bilstm: BiLstm,
    pub nn_head: Vec<DenseLayer>,
    pub final_head: Vec<DenseLayer>,
}

/// Gradients, laid out exactly like [`Parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Parameters);

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub params: Parameters,
    pub norm: NormConstants,
    /// Neighbour count the model was built for.
    pub k: usize,
}

/// A read-only view of one named tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

fn dense_stack(dims: &[usize], last: Activation, rng: &mut ChaCha8Rng) -> Vec<DenseLayer> {
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == dims.len() { last } else { Activation::Selu };
            DenseLayer::random(w[0], w[1], act, rng)
        })
        .collect()
}

impl Parameters {
    pub fn random(seed: u64) -> Self {
        let mut rng = rng::stream(seed, "model-init");
        let descriptor_mlp = dense_stack(&[DESCRIPTOR_BITS, 512, 256, DESCRIPTOR_EMBED_DIM], Activation::Selu, &mut rng);
        let bilstm = BiLstm {
            layers: vec![
                BiLstmLayer {
                    forward: LstmDirection::random(SEQ_INPUT, LSTM_HIDDEN, &mut rng),
                    backward: LstmDirection::random(SEQ_INPUT, LSTM_HIDDEN, &mut rng),
                },
                BiLstmLayer {
                    forward: LstmDirection::random(2 * LSTM_HIDDEN, LSTM_HIDDEN, &mut rng),
                    backward: LstmDirection::random(2 * LSTM_HIDDEN, LSTM_HIDDEN, &mut rng),
                },
            ],
        };
        let nn_head = dense_stack(&[2 * LSTM_HIDDEN, 64, 64, NEIGHBORHOOD_DIM], Activation::Selu, &mut rng);
        let final_head = dense_stack(&[HEAD_INPUT, 64, 64, EMBEDDING_DIM], Activation::Identity, &mut rng);
        Self {
            descriptor_mlp,
            bilstm,
            nn_head,
            final_head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |ls: &[DenseLayer]| {
            ls.iter()
                .map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim(), l.activation))
                .collect::<Vec<_>>()
        };
        Self {
            descriptor_mlp: z(&self.descriptor_mlp),
            bilstm: self.bilstm.zeros_like(),
            nn_head: z(&self.nn_head),
            final_head: z(&self.final_head),
        }
    }

    /// All tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        fn tensor<'a>(name: String, rows: usize, cols: usize, data: &'a [f64]) -> TensorRef<'a> {
            TensorRef { name, rows, cols, data }
        }
        fn dense<'a>(prefix: &str, layers: &'a [DenseLayer], out: &mut Vec<TensorRef<'a>>) {
            for (i, l) in layers.iter().enumerate() {
                let (r, c) = l.weight.dim();
                out.push(tensor(format!("{prefix}.{i}.weight"), r, c, l.weight.as_slice().expect("standard layout")));
                out.push(tensor(format!("{prefix}.{i}.bias"), l.bias.len(), 1, l.bias.as_slice().expect("standard layout")));
            }
        }
        let mut out = Vec::new();
        dense("descriptor_mlp", &self.descriptor_mlp, &mut out);
        for (i, layer) in self.bilstm.layers.iter().enumerate() {
            for (dir_name, dir) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                let p = format!("bilstm.{i}.{dir_name}");
                let (r, c) = dir.input_weight.dim();
                out.push(tensor(format!("{p}.input_weight"), r, c, dir.input_weight.as_slice().expect("standard layout")));
                let (r, c) = dir.recurrent_weight.dim();
                out.push(tensor(format!("{p}.recurrent_weight"), r, c, dir.recurrent_weight.as_slice().expect("standard layout")));
                out.push(tensor(format!("{p}.bias"), dir.bias.len(), 1, dir.bias.as_slice().expect("standard layout")));
            }
        }
        dense("nn_head", &self.nn_head, &mut out);
        dense("final_head", &self.final_head, &mut out);
        out
    }

    /// Mutable slices over every tensor, in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        fn dense<'a>(layers: &'a mut [DenseLayer], out: &mut Vec<&'a mut [f64]>) {
            for l in layers {
                out.push(l.weight.as_slice_mut().expect("standard layout"));
                out.push(l.bias.as_slice_mut().expect("standard layout"));
            }
        }
        dense(&mut self.descriptor_mlp, &mut out);
        for layer in &mut self.bilstm.layers {
            for dir in [&mut layer.forward, &mut layer.backward] {
                out.push(dir.input_weight.as_slice_mut().expect("standard layout"));
                out.push(dir.recurrent_weight.as_slice_mut().expect("standard layout"));
                out.push(dir.bias.as_slice_mut().expect("standard layout"));
            }
        }
        dense(&mut self.nn_head, &mut out);
        dense(&mut self.final_head, &mut out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

impl Gradients {
    pub fn zeros_like(params: &Parameters) -> Self {
        Gradients(params.zeros_like())
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.0.tensors()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            for (x, y) in a.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.0.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Intermediate values of one batched forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    constellations: Vec<Constellation>,
    /// Row in the descriptor table for each constellation's central keypoint.
    central_rows: Vec<usize>,
    /// `[constellation][step]` row in the descriptor table.
    neighbor_rows: Vec<Vec<usize>>,
    n_descriptors: usize,
    descriptor_caches: Vec<DenseCache>,
    lstm_cache: BiLstmCache,
    nn_head_caches: Vec<DenseCache>,
    final_head_caches: Vec<DenseCache>,
    output: Array2<f64>,
}

impl ForwardCache {
    /// `B × 48` embeddings, one row per constellation.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn len(&self) -> usize {
        self.constellations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constellations.is_empty()
    }
}

/// Seeded initialization with default normalization constants.
pub fn init_model(seed: u64, k: usize) -> EmbeddingModel {
    EmbeddingModel {
        params: Parameters::random(seed),
        norm: NormConstants::default(),
        k,
    }
}

impl EmbeddingModel {
    pub fn forward_batch(&self, batch: &[&Constellation]) -> Result<ForwardCache> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let k = batch[0].k();
        if k == 0 {
            return Err(Error::EmptySequence);
        }
        if let Some(bad) = batch.iter().find(|c| c.k() != k) {
            return Err(Error::ShapeMismatch {
                expected: k,
                actual: bad.k(),
            });
        }

        // distinct descriptors in first-seen order
        let mut table: HashMap<BinaryDescriptor, usize> = HashMap::new();
        let mut distinct: Vec<BinaryDescriptor> = Vec::new();
        let mut row_of = |d: &BinaryDescriptor| {
            *table.entry(*d).or_insert_with(|| {
                distinct.push(*d);
                distinct.len() - 1
            })
        };
        let central_rows: Vec<usize> = batch.iter().map(|c| row_of(&c.central.descriptor)).collect();
        let neighbor_rows: Vec<Vec<usize>> = batch
            .iter()
            .map(|c| c.neighbors.iter().map(|n| row_of(&n.descriptor)).collect())
            .collect();

        let mut bits = Array2::<f64>::zeros((distinct.len(), DESCRIPTOR_BITS));
        for (d, mut row) in distinct.iter().zip(bits.rows_mut()) {
            write_descriptor_reals(d, row.as_slice_mut().expect("row-major"));
        }
        let (desc_emb, descriptor_caches) = mlp_forward(&self.params.descriptor_mlp, bits);

        let b = batch.len();
        let geometry: Vec<Vec<[f64; NEIGHBOR_GEOMETRY]>> =
            batch.iter().map(|c| self.norm.neighbor_geometry(c)).collect();
        let seq: Vec<Array2<f64>> = (0..k)
            .map(|t| {
                let mut x = Array2::<f64>::zeros((b, SEQ_INPUT));
                for (ci, mut row) in x.rows_mut().into_iter().enumerate() {
                    row.slice_mut(s![..DESCRIPTOR_EMBED_DIM])
                        .assign(&desc_emb.row(neighbor_rows[ci][t]));
                    for (j, g) in geometry[ci][t].iter().enumerate() {
                        row[DESCRIPTOR_EMBED_DIM + j] = *g;
                    }
                }
                x
            })
            .collect();
        let (lstm_out, lstm_cache) = self.params.bilstm.forward_batch(seq)?;
        let (neighborhood, nn_head_caches) = mlp_forward(&self.params.nn_head, lstm_out);

        let mut head_in = Array2::<f64>::zeros((b, HEAD_INPUT));
        for (ci, mut row) in head_in.rows_mut().into_iter().enumerate() {
            row.slice_mut(s![..NEIGHBORHOOD_DIM]).assign(&neighborhood.row(ci));
            let cg = self.norm.central_geometry(batch[ci]);
            row[NEIGHBORHOOD_DIM] = cg[0];
            row[NEIGHBORHOOD_DIM + 1] = cg[1];
            row.slice_mut(s![NEIGHBORHOOD_DIM + CENTRAL_GEOMETRY..])
                .assign(&desc_emb.row(central_rows[ci]));
        }
        let (output, final_head_caches) = mlp_forward(&self.params.final_head, head_in);

        Ok(ForwardCache {
            constellations: batch.iter().map(|&c| c.clone()).collect(),
            central_rows,
            neighbor_rows,
            n_descriptors: distinct.len(),
            descriptor_caches,
            lstm_cache,
            nn_head_caches,
            final_head_caches,
            output,
        })
    }

    /// Gradients of `Σ_b upstream[b] · output[b]` with respect to every parameter.
    pub fn backward_batch(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> Result<Gradients> {
        if upstream.dim() != cache.output.dim() {
            return Err(Error::ShapeMismatch {
                expected: cache.output.len(),
                actual: upstream.len(),
            });
        }
        let mut grads = Gradients::zeros_like(&self.params);
        let g = &mut grads.0;

        let d_head_in = mlp_backward(
            &self.params.final_head,
            &cache.final_head_caches,
            upstream.clone(),
            &mut g.final_head,
            true,
        )
        .expect("input grad requested");

        let mut d_desc = Array2::<f64>::zeros((cache.n_descriptors, DESCRIPTOR_EMBED_DIM));
        for (ci, row) in d_head_in.rows().into_iter().enumerate() {
            let mut target = d_desc.row_mut(cache.central_rows[ci]);
            target += &row.slice(s![NEIGHBORHOOD_DIM + CENTRAL_GEOMETRY..]);
        }
        let d_neighborhood = d_head_in.slice(s![.., ..NEIGHBORHOOD_DIM]).to_owned();
        let d_lstm_out = mlp_backward(
            &self.params.nn_head,
            &cache.nn_head_caches,
            d_neighborhood,
            &mut g.nn_head,
            true,
        )
        .expect("input grad requested");

        let d_seq = self
            .params
            .bilstm
            .backward_batch(&cache.lstm_cache, &d_lstm_out, &mut g.bilstm);
        for (t, dx) in d_seq.iter().enumerate() {
            for (ci, row) in dx.rows().into_iter().enumerate() {
                let mut target = d_desc.row_mut(cache.neighbor_rows[ci][t]);
                target += &row.slice(s![..DESCRIPTOR_EMBED_DIM]);
            }
        }

        mlp_backward(
            &self.params.descriptor_mlp,
            &cache.descriptor_caches,
            d_desc,
            &mut g.descriptor_mlp,
            false,
        );
        Ok(grads)
    }

    /// Gradients for one constellation of an earlier batched forward pass.
    pub fn backward(&self, cache: &ForwardCache, c: &Constellation, upstream: &[f64]) -> Result<Gradients> {
        let row = cache
            .constellations
            .iter()
            .position(|x| x == c)
            .ok_or(Error::MissingCache)?;
        if upstream.len() != EMBEDDING_DIM {
            return Err(Error::ShapeMismatch {
                expected: EMBEDDING_DIM,
                actual: upstream.len(),
            });
        }
        let mut full = Array2::<f64>::zeros(cache.output.dim());
        full.row_mut(row).assign(&ndarray::ArrayView1::from(upstream));
        self.backward_batch(cache, &full)
    }

    /// The 48-dimensional embedding of one constellation.
    pub fn embed_constellation(&self, c: &Constellation) -> Result<Vec<f64>> {
        let cache = self.forward_batch(&[c])?;
        Ok(cache.output.row(0).to_vec())
    }

    /// Embeds many constellations, in chunks to bound memory.
    pub fn embed_all(&self, constellations: &[Constellation]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(constellations.len());
        for chunk in constellations.chunks(512) {
            let refs: Vec<&Constellation> = chunk.iter().collect();
            let cache = self.forward_batch(&refs)?;
            out.extend(cache.output.axis_iter(Axis(0)).map(|r| r.to_vec()));
        }
        Ok(out)
    }
}
