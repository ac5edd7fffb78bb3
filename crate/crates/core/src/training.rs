//! Pair sampling, the contrastive loss, and the mini-batch training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;

use crate::constellation::{frame_constellations, Constellation, NormConstants};
use crate::error::{Error, Result};
use crate::matching::{precision_eval_pool, EvalMode, PrecisionResult};
use crate::model::Dataset;
use crate::nn::{init_model, EmbeddingModel, Gradients, Parameters, EMBEDDING_DIM};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    /// Both central keypoints observe the same landmark (`Y = 0`).
    Similar,
    /// `Y = 1`.
    Dissimilar,
}

impl PairLabel {
    pub fn y(self) -> u8 {
        match self {
            PairLabel::Similar => 0,
            PairLabel::Dissimilar => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationPair {
    pub x1: Constellation,
    pub x2: Constellation,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub pos_fraction: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub k: usize,
    /// Optimizer steps per epoch.
    pub steps_per_epoch: usize,
    /// Queries drawn by the per-epoch validation precision.
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            batch_size: 32,
            pos_fraction: 0.5,
            learning_rate: 1e-3,
            epochs: 200,
            seed: 0,
            k: 20,
            steps_per_epoch: 4,
            val_samples: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.pos_fraction > 0.0 && self.pos_fraction < 1.0) {
            return bad("pos_fraction must lie in (0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return bad("epochs and steps_per_epoch must be positive");
        }
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.val_samples == 0 {
            return bad("val_samples must be positive");
        }
        Ok(())
    }

    /// Similar pairs per batch, `⌈pos_fraction · batch_size⌉`.
    pub fn n_positive(&self) -> usize {
        ((self.pos_fraction * self.batch_size as f64).ceil() as usize).min(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_d_sim: f64,
    pub mean_d_dissim: f64,
    pub val_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,mean_loss,mean_d_sim,mean_d_dissim,val_precision";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let val = r.val_precision.map_or("nan".to_string(), |v| format!("{v}"));
            let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.mean_loss, r.mean_d_sim, r.mean_d_dissim, val);
        }
        s
    }

    pub fn best_val_precision(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.val_precision).reduce(f64::max)
    }
}

pub fn embedding_distance(e1: &[f64], e2: &[f64]) -> f64 {
    e1.iter().zip(e2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Loss of one pair with its gradients with respect to both embeddings.
///
/// Similar pairs cost `½D²`; dissimilar pairs cost `½·max(0, margin − D)²`,
/// with a zero subgradient at `D = 0`.
pub fn contrastive_loss(e1: &[f64], e2: &[f64], label: PairLabel, margin: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let diff: Vec<f64> = e1.iter().zip(e2).map(|(a, b)| a - b).collect();
    let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (loss, coef) = match label {
        PairLabel::Similar => (0.5 * d * d, 1.0),
        PairLabel::Dissimilar => {
            let gap = margin - d;
            if gap <= 0.0 {
                (0.0, 0.0)
            } else if d == 0.0 {
                (0.5 * gap * gap, 0.0)
            } else {
                (0.5 * gap * gap, -gap / d)
            }
        }
    };
    let g1: Vec<f64> = diff.iter().map(|v| coef * v).collect();
    let g2: Vec<f64> = g1.iter().map(|v| -v).collect();
    (loss, g1, g2)
}

/// Every constellation of a dataset, indexed for pair sampling.
#[derive(Debug, Clone)]
pub struct ConstellationPool {
    pub constellations: Vec<Constellation>,
    /// Position of each constellation's frame in the dataset.
    pub frame_index: Vec<usize>,
    /// Constellations per landmark id, in pool order.
    pub by_landmark: BTreeMap<u64, Vec<usize>>,
    /// Landmarks observed in at least two distinct frames.
    pub eligible: Vec<u64>,
}

impl ConstellationPool {
    pub fn build(dataset: &Dataset, k: usize) -> Result<Self> {
        let mut constellations = Vec::new();
        let mut frame_index = Vec::new();
        for (fi, frame) in dataset.frames.iter().enumerate() {
            let cs = frame_constellations(frame, k)?;
            frame_index.extend(std::iter::repeat_n(fi, cs.len()));
            constellations.extend(cs);
        }
        let mut by_landmark: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, c) in constellations.iter().enumerate() {
            if let Some(id) = c.central.landmark_id {
                by_landmark.entry(id).or_default().push(i);
            }
        }
        let eligible = by_landmark
            .iter()
            .filter(|(_, obs)| obs.iter().any(|&i| frame_index[i] != frame_index[obs[0]]))
            .map(|(&id, _)| id)
            .collect();
        Ok(Self {
            constellations,
            frame_index,
            by_landmark,
            eligible,
        })
    }

    pub fn len(&self) -> usize {
        self.constellations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constellations.is_empty()
    }

    pub fn linked(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.constellations[i].central.landmark_id.is_some())
            .collect()
    }

    fn can_form_negative(&self) -> bool {
        let unlinked = self.len() - self.by_landmark.values().map(Vec::len).sum::<usize>();
        unlinked >= 1 && self.len() >= 2 || self.by_landmark.len() >= 2
    }
}

/// One sampled pair, by pool index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    pub a: usize,
    pub b: usize,
    pub label: PairLabel,
}

/// Draws `n_pos` similar pairs followed by `n_neg` dissimilar ones.
///
/// A similar pair picks an eligible landmark uniformly, then two of its
/// observations from distinct frames. A dissimilar pair picks two pool
/// entries uniformly and rejects them if they share a landmark.
pub fn sample_pair_indices<R: Rng + ?Sized>(
    pool: &ConstellationPool,
    n_pos: usize,
    n_neg: usize,
    rng: &mut R,
) -> Result<Vec<PairIndex>> {
    if n_pos > 0 && pool.eligible.is_empty() {
        return Err(Error::InsufficientData(
            "no landmark is observed in two distinct frames".into(),
        ));
    }
    if n_neg > 0 && !pool.can_form_negative() {
        return Err(Error::InsufficientData("cannot form a dissimilar pair".into()));
    }
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for _ in 0..n_pos {
        let id = pool.eligible[rng.random_range(0..pool.eligible.len())];
        let obs = &pool.by_landmark[&id];
        let a = obs[rng.random_range(0..obs.len())];
        let others: Vec<usize> = obs
            .iter()
            .copied()
            .filter(|&i| pool.frame_index[i] != pool.frame_index[a])
            .collect();
        let b = others[rng.random_range(0..others.len())];
        out.push(PairIndex { a, b, label: PairLabel::Similar });
    }
    let n = pool.len();
    while out.len() < n_pos + n_neg {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let la = pool.constellations[a].central.landmark_id;
        let lb = pool.constellations[b].central.landmark_id;
        if la.is_some() && la == lb {
            continue;
        }
        out.push(PairIndex { a, b, label: PairLabel::Dissimilar });
    }
    Ok(out)
}

/// One training batch of `config.batch_size` pairs.
pub fn sample_pairs<R: Rng + ?Sized>(
    dataset: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<ConstellationPair>> {
    config.validate()?;
    let pool = ConstellationPool::build(dataset, config.k)?;
    let n_pos = config.n_positive();
    let idx = sample_pair_indices(&pool, n_pos, config.batch_size - n_pos, rng)?;
    Ok(idx
        .into_iter()
        .map(|p| ConstellationPair {
            x1: pool.constellations[p.a].clone(),
            x2: pool.constellations[p.b].clone(),
            label: p.label,
        })
        .collect())
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Parameters, learning_rate: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

/// Batch statistics of one optimizer step.
#[derive(Debug, Clone, Copy, Default)]
struct StepStats {
    loss: f64,
    d_sim: f64,
    n_sim: usize,
    d_dissim: f64,
    n_dissim: usize,
}

/// Mean loss over `pairs` and its gradient. Each distinct constellation is
/// embedded once by the shared network, so both Siamese branches write into
/// the same gradient tensors.
fn batch_loss_and_grad(
    model: &EmbeddingModel,
    pool: &ConstellationPool,
    pairs: &[PairIndex],
    margin: f64,
) -> Result<(StepStats, Gradients)> {
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    let mut members: Vec<&Constellation> = Vec::new();
    for p in pairs {
        for i in [p.a, p.b] {
            slot.entry(i).or_insert_with(|| {
                members.push(&pool.constellations[i]);
                members.len() - 1
            });
        }
    }
    let cache = model.forward_batch(&members)?;
    let out = cache.output();
    let mut upstream = Array2::<f64>::zeros((members.len(), EMBEDDING_DIM));
    let mut stats = StepStats::default();
    let scale = 1.0 / pairs.len() as f64;
    for p in pairs {
        let (ra, rb) = (slot[&p.a], slot[&p.b]);
        let e1 = out.row(ra);
        let e2 = out.row(rb);
        let (e1, e2) = (e1.as_slice().expect("row-major"), e2.as_slice().expect("row-major"));
        let (loss, g1, g2) = contrastive_loss(e1, e2, p.label, margin);
        let d = embedding_distance(e1, e2);
        stats.loss += loss * scale;
        match p.label {
            PairLabel::Similar => {
                stats.d_sim += d;
                stats.n_sim += 1;
            }
            PairLabel::Dissimilar => {
                stats.d_dissim += d;
                stats.n_dissim += 1;
            }
        }
        for j in 0..EMBEDDING_DIM {
            upstream[(ra, j)] += g1[j] * scale;
            upstream[(rb, j)] += g2[j] * scale;
        }
    }
    let grads = model.backward_batch(&cache, &upstream)?;
    Ok((stats, grads))
}

/// Trains a model on `train`. When `val` is given, validation precision is
/// measured after every epoch and the best-scoring parameters are returned;
/// otherwise the final parameters are.
pub fn train(train: &Dataset, val: Option<&Dataset>, config: &TrainConfig) -> Result<(EmbeddingModel, TrainHistory)> {
    train_with_init(train, val, config, init_model(config.seed, config.k))
}

/// [`train`] starting from the given parameters. Normalization constants are
/// refitted to the training set.
pub fn train_with_init(
    train: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
    mut model: EmbeddingModel,
) -> Result<(EmbeddingModel, TrainHistory)> {
    config.validate()?;
    if model.k != config.k {
        return Err(Error::InvalidArgument(format!(
            "model expects k = {}, config has k = {}",
            model.k, config.k
        )));
    }
    let pool = ConstellationPool::build(train, config.k)?;
    model.norm = NormConstants::fitted(&pool.constellations);
    let val_pool = val.map(|v| ConstellationPool::build(v, config.k)).transpose()?;

    let n_pos = config.n_positive();
    let n_neg = config.batch_size - n_pos;
    let mut pair_rng = rng::stream(config.seed, "pairs");
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Parameters)> = None;

    for epoch in 1..=config.epochs {
        let mut sum = StepStats::default();
        for _ in 0..config.steps_per_epoch {
            let pairs = sample_pair_indices(&pool, n_pos, n_neg, &mut pair_rng)?;
            let (stats, grads) = batch_loss_and_grad(&model, &pool, &pairs, config.margin)?;
            if !stats.loss.is_finite() {
                return Err(Error::Divergence { epoch, loss: stats.loss });
            }
            adam.step(&mut model.params, &grads);
            sum.loss += stats.loss;
            sum.d_sim += stats.d_sim;
            sum.n_sim += stats.n_sim;
            sum.d_dissim += stats.d_dissim;
            sum.n_dissim += stats.n_dissim;
        }
        if !model.params.all_finite() {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        let val_precision = match &val_pool {
            Some(vp) => Some(validation_precision(&model, vp, config)?.precision),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            mean_loss: sum.loss / config.steps_per_epoch as f64,
            mean_d_sim: mean(sum.d_sim, sum.n_sim),
            mean_d_dissim: mean(sum.d_dissim, sum.n_dissim),
            val_precision,
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} d_sim {:.4} d_dissim {:.4} val {:?}",
            record.mean_loss,
            record.mean_d_sim,
            record.mean_d_dissim,
            record.val_precision
        );
        if let Some(p) = val_precision {
            if best.as_ref().is_none_or(|(b, _)| p > *b) {
                best = Some((p, model.params.clone()));
                history.best_epoch = epoch;
            }
        } else {
            history.best_epoch = epoch;
        }
        history.records.push(record);
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Validation precision with the query sample fixed by the seed, so epochs
/// are compared on identical queries.
pub fn validation_precision(model: &EmbeddingModel, val_pool: &ConstellationPool, config: &TrainConfig) -> Result<PrecisionResult> {
    let mut rng = rng::stream(config.seed, "validation");
    precision_eval_pool(&EvalMode::Scone(model), val_pool, config.val_samples, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, WorldConfig};
    use crate::model::{BinaryDescriptor, Keyframe, Keypoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn distance_cases() {
        let z = vec![0.0; EMBEDDING_DIM];
        let mut e = z.clone();
        e[3] = 1.0;
        assert_eq!(embedding_distance(&z, &z), 0.0);
        assert_eq!(embedding_distance(&z, &e), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (rand_vec(&mut rng), rand_vec(&mut rng));
        let mut s = 0.0;
        for i in 0..EMBEDDING_DIM {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert!((embedding_distance(&a, &b) - s.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn loss_cases() {
        let z = vec![0.0; EMBEDDING_DIM];
        let (l, g1, g2) = contrastive_loss(&z, &z, PairLabel::Similar, 1.0);
        assert_eq!(l, 0.0);
        assert!(g1.iter().chain(&g2).all(|&g| g == 0.0));
        let (l, g1, g2) = contrastive_loss(&z, &z, PairLabel::Dissimilar, 1.0);
        assert_eq!(l, 0.5);
        assert!(g1.iter().chain(&g2).all(|&g| g == 0.0));
        let mut far = z.clone();
        far[0] = 1.5;
        let (l, g1, _) = contrastive_loss(&z, &far, PairLabel::Dissimilar, 1.0);
        assert_eq!(l, 0.0);
        assert!(g1.iter().all(|&g| g == 0.0));
        let mut two = z.clone();
        two[0] = 2.0;
        assert_eq!(contrastive_loss(&z, &two, PairLabel::Similar, 1.0).0, 2.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..40 {
            let a = rand_vec(&mut rng);
            let mut b = rand_vec(&mut rng);
            if trial % 2 == 0 {
                for (x, y) in b.iter_mut().zip(&a) {
                    *x = y + (*x - y) * 0.1;
                }
            }
            let margin = 2.0;
            for label in [PairLabel::Similar, PairLabel::Dissimilar] {
                let d = embedding_distance(&a, &b);
                if (margin - d).abs() <= 1e-3 {
                    continue;
                }
                let (_, g1, g2) = contrastive_loss(&a, &b, label, margin);
                let h = 1e-6;
                for i in 0..EMBEDDING_DIM {
                    for (which, g) in [(0, &g1), (1, &g2)] {
                        let (mut p, mut m) = ((a.clone(), b.clone()), (a.clone(), b.clone()));
                        if which == 0 {
                            p.0[i] += h;
                            m.0[i] -= h;
                        } else {
                            p.1[i] += h;
                            m.1[i] -= h;
                        }
                        let num = (contrastive_loss(&p.0, &p.1, label, margin).0
                            - contrastive_loss(&m.0, &m.1, label, margin).0)
                            / (2.0 * h);
                        let scale = num.abs().max(g[i].abs()).max(1e-3);
                        assert!((num - g[i]).abs() / scale < 1e-6, "{label:?} {i}: {num} vs {}", g[i]);
                    }
                }
            }
        }
    }

    fn kp(x: f64, y: f64, id: Option<u64>, seed: u64) -> Keypoint {
        let d = BinaryDescriptor::random(&mut ChaCha8Rng::seed_from_u64(seed));
        Keypoint::new(x, y, 2.0, 0.0, d, id)
    }

    #[test]
    fn single_eligible_landmark() {
        let frame = |fid: i64| Keyframe {
            frame_id: fid,
            keypoints: vec![kp(0.0, 0.0, Some(7), 1), kp(10.0, 0.0, None, 2 + fid as u64), kp(0.0, 10.0, None, 9 + fid as u64)],
            pose: None,
            intrinsics: None,
        };
        let ds = Dataset {
            intrinsics: None,
            landmarks: vec![],
            frames: vec![frame(0), frame(1)],
        };
        let cfg = TrainConfig {
            k: 1,
            batch_size: 2,
            pos_fraction: 0.5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_pairs(&ds, &cfg, &mut rng).unwrap();
        assert_eq!(pairs[0].label, PairLabel::Similar);
        assert_eq!(pairs[0].x1.central.landmark_id, Some(7));
        assert_eq!(pairs[0].x2.central.landmark_id, Some(7));
        assert_eq!(pairs[1].label, PairLabel::Dissimilar);
    }

    #[test]
    fn no_eligible_landmark_is_an_error() {
        let ds = Dataset {
            intrinsics: None,
            landmarks: vec![],
            frames: vec![Keyframe {
                frame_id: 0,
                keypoints: vec![kp(0.0, 0.0, Some(1), 1), kp(5.0, 0.0, Some(2), 2)],
                pose: None,
                intrinsics: None,
            }],
        };
        let cfg = TrainConfig { k: 1, ..Default::default() };
        assert!(matches!(
            sample_pairs(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InsufficientData(_))
        ));
    }

    fn tiny_world() -> Dataset {
        generate_dataset(&WorldConfig {
            n_landmarks: 40,
            n_frames: 4,
            unlinked_fraction: 0.2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn batch_composition() {
        let ds = tiny_world();
        let cfg = TrainConfig {
            k: 5,
            batch_size: 10,
            ..Default::default()
        };
        let pairs = sample_pairs(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(pairs.len(), 10);
        assert_eq!(pairs.iter().filter(|p| p.label.y() == 0).count(), 5);
        for p in &pairs {
            let (a, b) = (p.x1.central.landmark_id, p.x2.central.landmark_id);
            match p.label {
                PairLabel::Similar => assert!(a.is_some() && a == b),
                PairLabel::Dissimilar => assert!(a.is_none() || a != b),
            }
        }
    }

    #[test]
    fn positive_sampling_is_uniform_over_landmarks() {
        let ds = tiny_world();
        let pool = ConstellationPool::build(&ds, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let pairs = sample_pair_indices(&pool, n, 0, &mut rng).unwrap();
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for p in pairs {
            let id = pool.constellations[p.a].central.landmark_id.unwrap();
            assert_ne!(pool.frame_index[p.a], pool.frame_index[p.b]);
            *counts.entry(id).or_default() += 1;
        }
        let l = pool.eligible.len() as f64;
        let expected = n as f64 / l;
        let sigma = (n as f64 * (1.0 / l) * (1.0 - 1.0 / l)).sqrt();
        assert_eq!(counts.len(), pool.eligible.len());
        for (&id, &c) in &counts {
            assert!((c as f64 - expected).abs() < 5.0 * sigma, "landmark {id}: {c}");
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let ds = tiny_world();
        let cfg = TrainConfig {
            k: 5,
            batch_size: 8,
            epochs: 2,
            steps_per_epoch: 2,
            learning_rate: 0.0,
            ..Default::default()
        };
        let (model, _) = train(&ds, None, &cfg).unwrap();
        assert_eq!(model.params, init_model(cfg.seed, cfg.k).params);
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let ds = generate_dataset(&WorldConfig {
            n_landmarks: 10,
            n_frames: 4,
            unlinked_fraction: 0.0,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            k: 3,
            batch_size: 16,
            epochs: 20,
            steps_per_epoch: 10,
            ..Default::default()
        };
        let (m1, h1) = train(&ds, None, &cfg).unwrap();
        let (m2, h2) = train(&ds, None, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        let first = h1.records.first().unwrap().mean_loss;
        let last = h1.records.last().unwrap().mean_loss;
        assert!(last < first, "{first} -> {last}");
        assert!(h1.to_csv().starts_with(TrainHistory::CSV_HEADER));
        assert_eq!(h1.records.len(), 20);
    }

    #[test]
    fn branches_share_parameters() {
        let ds = tiny_world();
        let pool = ConstellationPool::build(&ds, 5).unwrap();
        let model = init_model(1, 5);
        let c = &pool.constellations[0];
        let cache = model.forward_batch(&[c, c]).unwrap();
        assert_eq!(cache.output().row(0), cache.output().row(1));
    }
}
