//! Oracles shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use nalgebra::{Rotation3, Unit, Vector2, Vector3};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scone_core::constellation::{build_constellation, Constellation};
use scone_core::datagen::WorldConfig;
use scone_core::geometry::{
    decompose_essential, estimate_relative_pose, normalize_and_eight_point, rotation_error, Correspondence,
    RansacConfig,
};
use scone_core::matching::{nn_match, Features};
use scone_core::model::{hamming_distance, BinaryDescriptor, CameraIntrinsics, CameraPose, Keyframe, Keypoint};
use scone_core::nn::{init_model, EmbeddingModel};
use scone_core::training::{contrastive_loss, embedding_distance, PairLabel};

pub fn random_frame(seed: u64, n: usize) -> Keyframe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Keyframe {
        frame_id: 0,
        keypoints: (0..n)
            .map(|_| {
                Keypoint::new(
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                    rng.random_range(1.0..10.0),
                    rng.random_range(-3.0..3.0),
                    BinaryDescriptor::random(&mut rng),
                    None,
                )
            })
            .collect(),
        pose: None,
        intrinsics: None,
    }
}

// ---------------------------------------------------------------- gradients

/// Central-difference step.
pub const GRAD_H: f64 = 1e-5;
/// Largest accepted relative error.
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error. Central differences through the
/// full network carry up to about 1e-9 of rounding error, and some gradients
/// are exactly zero (for a similar pair, bias gradients of units in the same
/// activation branch for both inputs cancel), so the relative error of a
/// vanishing gradient is measured against this floor.
pub const GRAD_ABS_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub k: usize,
    pub tensors: usize,
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn worst(&self) -> &GradEntry {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
            .expect("entries")
    }

    pub fn min_per_tensor(&self) -> usize {
        let mut counts = std::collections::BTreeMap::<&str, usize>::new();
        for e in &self.entries {
            *counts.entry(&e.tensor).or_default() += 1;
        }
        if counts.len() < self.tensors {
            return 0;
        }
        counts.values().copied().min().unwrap_or(0)
    }

    pub fn passes(&self, per_tensor: usize) -> bool {
        self.min_per_tensor() >= per_tensor && self.entries.iter().all(|e| e.rel_error < GRAD_REL_TOL)
    }
}

fn pair_loss(model: &EmbeddingModel, c1: &Constellation, c2: &Constellation, label: PairLabel, margin: f64) -> f64 {
    let cache = model.forward_batch(&[c1, c2]).unwrap();
    let out = cache.output();
    contrastive_loss(&out.row(0).to_vec(), &out.row(1).to_vec(), label, margin).0
}

/// Analytic against central-difference gradients of the contrastive loss of
/// one constellation pair, on `per_tensor` random entries of every tensor.
/// Dissimilar pairs use a margin one unit beyond the initial distance so the
/// hinge stays active and smooth.
pub fn gradient_check(seed: u64, k: usize, label: PairLabel, per_tensor: usize) -> GradReport {
    let mut model = init_model(seed, k);
    let frame = random_frame(seed.wrapping_add(1000), k + 10);
    let c1 = build_constellation(&frame, 0, k).unwrap();
    let c2 = build_constellation(&frame, 1, k).unwrap();

    let cache = model.forward_batch(&[&c1, &c2]).unwrap();
    let out = cache.output().clone();
    let (e1, e2) = (out.row(0).to_vec(), out.row(1).to_vec());
    let margin = match label {
        PairLabel::Similar => 1.0,
        PairLabel::Dissimilar => embedding_distance(&e1, &e2) + 1.0,
    };
    let (_, g1, g2) = contrastive_loss(&e1, &e2, label, margin);
    let mut upstream = Array2::zeros(out.dim());
    upstream.row_mut(0).assign(&ndarray::ArrayView1::from(&g1[..]));
    upstream.row_mut(1).assign(&ndarray::ArrayView1::from(&g2[..]));
    let grads = model.backward_batch(&cache, &upstream).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|t| (t.name, t.data.to_vec())).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut entries = Vec::new();
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        for idx in sample(&mut rng, n, per_tensor.min(n)).into_iter() {
            let orig = model.params.tensors_mut()[ti][idx];
            model.params.tensors_mut()[ti][idx] = orig + GRAD_H;
            let lp = pair_loss(&model, &c1, &c2, label, margin);
            model.params.tensors_mut()[ti][idx] = orig - GRAD_H;
            let lm = pair_loss(&model, &c1, &c2, label, margin);
            model.params.tensors_mut()[ti][idx] = orig;
            let numeric = (lp - lm) / (2.0 * GRAD_H);
            let a = grad[idx];
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_ABS_FLOOR);
            entries.push(GradEntry {
                tensor: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_error,
            });
        }
    }
    GradReport {
        k,
        tensors: analytic.len(),
        entries,
    }
}

// ----------------------------------------------------------------- geometry

pub fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 520.0,
        fy: 515.0,
        cx: 320.0,
        cy: 240.0,
    }
}

pub struct TwoView {
    /// Camera-1 to camera-2 motion.
    pub relative: CameraPose,
    pub corrs: Vec<Correspondence>,
    pub is_outlier: Vec<bool>,
}

/// `n` landmarks seen by two calibrated cameras; the first
/// `round(outlier_fraction · n)` correspondences are replaced by random
/// image points.
pub fn two_view(seed: u64, n: usize, outlier_fraction: f64) -> TwoView {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = intrinsics();
    let pose1 = CameraPose::new(
        Rotation3::from_euler_angles(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2))
            .into_inner(),
        Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
    );
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let rel_r = Rotation3::from_axis_angle(&axis, rng.random_range(0.05..0.3)).into_inner();
    let rel_t = Vector3::new(rng.random_range(0.5..1.0), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2));
    let relative = CameraPose::new(rel_r, rel_t);
    let pose2 = relative.compose(&pose1);
    let in_image = |p: &Vector2<f64>| (0.0..640.0).contains(&p.x) && (0.0..480.0).contains(&p.y);
    let mut corrs = Vec::with_capacity(n);
    while corrs.len() < n {
        let xc1 = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..10.0));
        let xw = pose1.inverse().transform(&xc1);
        let xc2 = pose2.transform(&xw);
        if xc2.z <= 0.5 {
            continue;
        }
        let (p1, p2) = (k.project(&xc1), k.project(&xc2));
        if in_image(&p1) && in_image(&p2) {
            corrs.push(Correspondence::new(p1, p2));
        }
    }
    let n_out = (outlier_fraction * n as f64).round() as usize;
    let mut is_outlier = vec![false; n];
    for (c, o) in corrs.iter_mut().zip(is_outlier.iter_mut()).take(n_out) {
        c.p2 = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        *o = true;
    }
    TwoView {
        relative,
        corrs,
        is_outlier,
    }
}

/// Rotation error and translation-direction error of the eight-point
/// solution plus decomposition on a clean scene.
pub fn clean_two_view_errors(seed: u64, n: usize) -> (f64, f64) {
    let s = two_view(seed, n, 0.0);
    let k = intrinsics();
    let e = normalize_and_eight_point(&s.corrs, &k, &k).unwrap();
    let pose = decompose_essential(&e, &s.corrs, &k, &k).unwrap();
    let rot = rotation_error(&pose.rotation, &s.relative.rotation);
    let trans = (pose.translation.normalize() - s.relative.translation.normalize()).norm();
    (rot, trans)
}

/// Number of `trials` in which RANSAC recovers the rotation within
/// `tol_rad`, on 200 points with 30 % outliers.
pub fn ransac_successes(trials: u64, tol_rad: f64) -> u64 {
    let k = intrinsics();
    (0..trials)
        .filter(|&t| {
            let s = two_view(10_000 + t, 200, 0.3);
            let cfg = RansacConfig { seed: t, ..Default::default() };
            estimate_relative_pose(&s.corrs, &k, &k, &cfg)
                .map(|p| rotation_error(&p.rotation, &s.relative.rotation) < tol_rad)
                .unwrap_or(false)
        })
        .count() as u64
}

pub fn axis_angle(axis: Vector3<f64>, theta: f64) -> nalgebra::Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), theta).into_inner()
}

// ----------------------------------------------------------------- matching

/// `(index, nearest, second nearest)` by an exhaustive double loop with
/// first-minimum tie breaking.
pub fn nn_oracle(dist: &dyn Fn(usize, usize) -> f64, n_q: usize, n_db: usize) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::with_capacity(n_q);
    for i in 0..n_q {
        let mut best = 0;
        for j in 1..n_db {
            if dist(i, j) < dist(i, best) {
                best = j;
            }
        }
        let mut second = f64::INFINITY;
        for j in 0..n_db {
            if j != best && dist(i, j) < second {
                second = dist(i, j);
            }
        }
        out.push((best, dist(i, best), second));
    }
    out
}

fn agrees(features_q: &Features, features_db: &Features, oracle: &[(usize, f64, f64)]) -> bool {
    let got = nn_match(features_q, features_db).unwrap();
    got.len() == oracle.len()
        && got.iter().zip(oracle).all(|(m, o)| {
            m.target_index == o.0 && (m.distance - o.1).abs() <= 1e-12 && (m.second_distance - o.2).abs() <= 1e-12
        })
}

/// Instances on which `nn_match` and the oracle disagree, for Euclidean and
/// for Hamming features. Small value ranges force ties.
pub fn nn_match_disagreements(instances: u64) -> (Vec<u64>, Vec<u64>) {
    let mut real_bad = Vec::new();
    let mut bin_bad = Vec::new();
    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(inst);
        let n_q = rng.random_range(1..30);
        let n_db = rng.random_range(2..40);
        let dim = rng.random_range(1..16);
        let levels = if inst % 2 == 0 { 3 } else { 1000 };
        let mut vecs = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect())
                .collect()
        };
        let (q, db) = (vecs(n_q), vecs(n_db));
        let d = |i: usize, j: usize| -> f64 { q[i].iter().zip(&db[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() };
        let oracle = nn_oracle(&d, n_q, n_db);
        if !agrees(&Features::Real(q.clone()), &Features::Real(db.clone()), &oracle) {
            real_bad.push(inst);
        }

        let mut desc = |n: usize| -> Vec<BinaryDescriptor> {
            (0..n)
                .map(|_| {
                    let base = BinaryDescriptor::random(&mut rng);
                    if inst % 2 == 0 {
                        // few distinct distances
                        let bits: Vec<bool> = (0..512).map(|i| i < 8 && base.bit(i)).collect();
                        BinaryDescriptor::from_bits(&bits).unwrap()
                    } else {
                        base
                    }
                })
                .collect()
        };
        let (q, db) = (desc(n_q), desc(n_db));
        let d = |i: usize, j: usize| -> f64 {
            let mut c = 0u32;
            for b in 0..512 {
                c += u32::from(q[i].bit(b) != db[j].bit(b));
            }
            c as f64
        };
        let oracle = nn_oracle(&d, n_q, n_db);
        debug_assert!((0..n_q).all(|i| d(i, 0) == hamming_distance(&q[i], &db[0]) as f64));
        if !agrees(&Features::Binary(q), &Features::Binary(db), &oracle) {
            bin_bad.push(inst);
        }
    }
    (real_bad, bin_bad)
}

// ------------------------------------------------------------- world families

/// Duplicated-descriptor family: 20 groups of three landmarks share one
/// descriptor and orientation, so only their surroundings tell them apart.
pub fn duplicate_family() -> WorldConfig {
    WorldConfig {
        n_landmarks: 60,
        duplicate_descriptor_groups: 20,
        duplicate_group_size: 3,
        descriptor_noise: 0.02,
        unlinked_fraction: 0.1,
        n_frames: 30,
        step: 3f64.to_radians(),
        seed: 7,
        ..Default::default()
    }
}

pub const FAMILY_TRAIN_FRACTION: f64 = 0.8;
