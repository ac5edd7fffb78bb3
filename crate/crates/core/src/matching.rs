//! Brute-force nearest-neighbour matching (Euclidean over embeddings, Hamming
//! over raw descriptors), the ratio test, nearest-neighbour precision, the
//! k-sweep, and per-frame true-positive and pose evaluations.

use std::fmt::Write as _;

use nalgebra::Vector2;
use rand::seq::index::sample;
use rand::Rng;

use crate::constellation::{frame_constellations, Constellation};
use crate::error::{Error, Result};
use crate::geometry::{epipolar_verify, estimate_relative_pose, rotation_error, translation_error, Correspondence, RansacConfig};
use crate::model::{hamming_distance, BinaryDescriptor, CameraIntrinsics, CameraPose, Dataset, Keyframe};
use crate::nn::EmbeddingModel;
use crate::training::{train, validation_precision, ConstellationPool, TrainConfig};

pub const DEFAULT_RATIO_THRESHOLD: f64 = 0.8;
/// Symmetric epipolar distance below which an unlinked match counts as correct.
pub const DEFAULT_EPIPOLAR_THRESHOLD_PX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub query_index: usize,
    pub target_index: usize,
    pub distance: f64,
    pub second_distance: f64,
}

/// A set of feature vectors in one metric space.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    /// Compared by Euclidean distance.
    Real(Vec<Vec<f64>>),
    /// Compared by Hamming distance.
    Binary(Vec<BinaryDescriptor>),
}

impl Features {
    pub fn len(&self) -> usize {
        match self {
            Features::Real(v) => v.len(),
            Features::Binary(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ranking uses this value, so equal reported distances are true ties.
    fn distance(&self, i: usize, other: &Features, j: usize) -> f64 {
        match (self, other) {
            (Features::Real(a), Features::Real(b)) => squared_euclidean(&a[i], &b[j]).sqrt(),
            (Features::Binary(a), Features::Binary(b)) => hamming_distance(&a[i], &b[j]) as f64,
            _ => unreachable!("metric checked by caller"),
        }
    }
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest and second-nearest database entry for every query; ties go to the
/// lower database index.
pub fn nn_match(queries: &Features, database: &Features) -> Result<Vec<Match>> {
    if database.len() < 2 {
        return Err(Error::EmptyDatabase(database.len()));
    }
    match (queries, database) {
        (Features::Real(q), Features::Real(db)) => {
            let dim = db[0].len();
            if let Some(bad) = q.iter().chain(db).find(|v| v.len() != dim) {
                return Err(Error::ShapeMismatch {
                    expected: dim,
                    actual: bad.len(),
                });
            }
        }
        (Features::Binary(_), Features::Binary(_)) => {}
        _ => return Err(Error::InvalidArgument("queries and database use different metrics".into())),
    }
    Ok((0..queries.len())
        .map(|qi| {
            let (best, d1, d2) = two_nearest(|j| queries.distance(qi, database, j), database.len(), None);
            Match {
                query_index: qi,
                target_index: best,
                distance: d1,
                second_distance: d2,
            }
        })
        .collect())
}

/// `(index, nearest, second nearest)` over `0..n`, skipping `exclude`.
fn two_nearest(dist: impl Fn(usize) -> f64, n: usize, exclude: Option<usize>) -> (usize, f64, f64) {
    let mut best = usize::MAX;
    let mut d1 = f64::INFINITY;
    let mut d2 = f64::INFINITY;
    for j in 0..n {
        if Some(j) == exclude {
            continue;
        }
        let d = dist(j);
        if d < d1 || best == usize::MAX {
            d2 = d1;
            d1 = d;
            best = j;
        } else if d < d2 {
            d2 = d;
        }
    }
    (best, d1, d2)
}

/// Keeps matches with `distance < threshold · second_distance`, in order.
pub fn ratio_test(matches: &[Match], threshold: f64) -> Vec<Match> {
    matches
        .iter()
        .filter(|m| m.distance < threshold * m.second_distance)
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionResult {
    pub precision: f64,
    pub n_sampled: usize,
    pub n_correct: usize,
}

/// How keypoints are described for matching.
#[derive(Debug, Clone, Copy)]
pub enum EvalMode<'a> {
    /// Raw binary descriptors under Hamming distance. `k` only decides which
    /// keypoints have a constellation and are therefore comparable.
    Raw { k: usize },
    /// Learned constellation embeddings under Euclidean distance.
    Scone(&'a EmbeddingModel),
}

impl EvalMode<'_> {
    pub fn k(&self) -> usize {
        match self {
            EvalMode::Raw { k } => *k,
            EvalMode::Scone(m) => m.k,
        }
    }

    /// Features of the given constellations, in order.
    pub fn describe(&self, constellations: &[&Constellation]) -> Result<Features> {
        match self {
            EvalMode::Raw { .. } => Ok(Features::Binary(constellations.iter().map(|c| c.central.descriptor).collect())),
            EvalMode::Scone(model) => {
                let mut out = Vec::with_capacity(constellations.len());
                for chunk in constellations.chunks(512) {
                    let cache = model.forward_batch(chunk)?;
                    out.extend(cache.output().rows().into_iter().map(|r| r.to_vec()));
                }
                Ok(Features::Real(out))
            }
        }
    }
}

/// Nearest-neighbour precision over the landmark-linked constellations of
/// `dataset`: `n_samples` queries drawn without replacement, each compared
/// against every other linked constellation, correct when landmark ids agree.
pub fn precision_eval<R: Rng + ?Sized>(
    mode: &EvalMode<'_>,
    dataset: &Dataset,
    n_samples: usize,
    rng: &mut R,
) -> Result<PrecisionResult> {
    let pool = ConstellationPool::build(dataset, mode.k())?;
    precision_eval_pool(mode, &pool, n_samples, rng)
}

/// [`precision_eval`] on a prebuilt pool.
pub fn precision_eval_pool<R: Rng + ?Sized>(
    mode: &EvalMode<'_>,
    pool: &ConstellationPool,
    n_samples: usize,
    rng: &mut R,
) -> Result<PrecisionResult> {
    let linked = pool.linked();
    if linked.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 landmark-linked constellations, got {}",
            linked.len()
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let refs: Vec<&Constellation> = linked.iter().map(|&i| &pool.constellations[i]).collect();
    let features = mode.describe(&refs)?;
    let ids: Vec<u64> = refs.iter().map(|c| c.central.landmark_id.expect("linked")).collect();
    let n = n_samples.min(linked.len());
    let mut n_correct = 0;
    for q in sample(rng, linked.len(), n) {
        let (nearest, _, _) = two_nearest(|j| features.distance(q, &features, j), linked.len(), Some(q));
        if ids[nearest] == ids[q] {
            n_correct += 1;
        }
    }
    Ok(PrecisionResult {
        precision: n_correct as f64 / n as f64,
        n_sampled: n,
        n_correct,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    /// `Err` holds the failure message of a run that did not finish.
    pub precision: std::result::Result<f64, String>,
}

/// Trains one model per `k` and records its validation precision. A failing
/// run yields a failed row instead of aborting the sweep.
pub fn sweep_k(train_set: &Dataset, val_set: &Dataset, k_values: &[usize], config: &TrainConfig) -> Result<Vec<SweepRow>> {
    if k_values.is_empty() {
        return Err(Error::InvalidArgument("k_values is empty".into()));
    }
    Ok(k_values
        .iter()
        .map(|&k| {
            let cfg = TrainConfig { k, ..config.clone() };
            let run = || -> Result<f64> {
                let (model, _) = train(train_set, Some(val_set), &cfg)?;
                let pool = ConstellationPool::build(val_set, k)?;
                Ok(validation_precision(&model, &pool, &cfg)?.precision)
            };
            let precision = run().map_err(|e| {
                log::warn!("k = {k}: {e}");
                e.to_string()
            });
            SweepRow { k, precision }
        })
        .collect())
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("k,precision\n");
    for r in rows {
        match &r.precision {
            Ok(p) => writeln!(s, "{},{}", r.k, p),
            Err(_) => writeln!(s, "{},failed", r.k),
        }
        .expect("writing to a String");
    }
    s
}

/// A match from a keypoint of the query frame to one of the target frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMatch {
    pub query_keypoint: usize,
    pub target_keypoint: usize,
    pub distance: f64,
    pub second_distance: f64,
    pub kept: bool,
}

pub const MATCHES_CSV_HEADER: &str = "query_idx,target_idx,distance,second_distance,kept";

pub fn matches_to_csv(matches: &[FrameMatch]) -> String {
    let mut s = format!("{MATCHES_CSV_HEADER}\n");
    for m in matches {
        writeln!(
            s,
            "{},{},{},{},{}",
            m.query_keypoint, m.target_keypoint, m.distance, m.second_distance, m.kept as u8
        )
        .expect("writing to a String");
    }
    s
}

/// Keypoint indices that have a constellation, with their features.
pub fn frame_features(mode: &EvalMode<'_>, frame: &Keyframe) -> Result<(Vec<usize>, Features)> {
    let cs = frame_constellations(frame, mode.k())?;
    let refs: Vec<&Constellation> = cs.iter().collect();
    let features = if refs.is_empty() {
        match mode {
            EvalMode::Raw { .. } => Features::Binary(Vec::new()),
            EvalMode::Scone(_) => Features::Real(Vec::new()),
        }
    } else {
        mode.describe(&refs)?
    };
    Ok((cs.iter().map(|c| c.central_index).collect(), features))
}

/// Brute-force matches from `query` into `target`, flagged by the ratio test.
pub fn match_frames(mode: &EvalMode<'_>, query: &Keyframe, target: &Keyframe, ratio_threshold: f64) -> Result<Vec<FrameMatch>> {
    let (qi, qf) = frame_features(mode, query)?;
    let (ti, tf) = frame_features(mode, target)?;
    let matches = nn_match(&qf, &tf)?;
    Ok(matches
        .iter()
        .map(|m| FrameMatch {
            query_keypoint: qi[m.query_index],
            target_keypoint: ti[m.target_index],
            distance: m.distance,
            second_distance: m.second_distance,
            kept: m.distance < ratio_threshold * m.second_distance,
        })
        .collect())
}

fn pose_and_intrinsics(dataset: &Dataset, frame: &Keyframe) -> Result<(CameraPose, CameraIntrinsics)> {
    let pose = frame.pose.ok_or(Error::MissingPose(frame.frame_id))?;
    let k = dataset
        .frame_intrinsics(frame)
        .ok_or_else(|| Error::InsufficientData(format!("frame {} has no intrinsics", frame.frame_id)))?;
    Ok((pose, k))
}

fn frame(dataset: &Dataset, id: i64) -> Result<&Keyframe> {
    dataset
        .frame_by_id(id)
        .ok_or_else(|| Error::InvalidArgument(format!("no frame with id {id}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub frame_id: i64,
    /// Ground-truth rotation angle between the frame and the reference.
    pub angular_distance: f64,
    pub n_true_positives: usize,
    /// Matches surviving the ratio test.
    pub n_matches: usize,
}

pub const CURVE_CSV_HEADER: &str = "angular_distance_rad,true_positives";

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut s = format!("{CURVE_CSV_HEADER}\n");
    for p in points {
        writeln!(s, "{},{}", p.angular_distance, p.n_true_positives).expect("writing to a String");
    }
    s
}

/// Matches every frame against the reference and counts correct matches among
/// those passing the ratio test. A match is correct when both keypoints carry
/// the same landmark id; when either is unlinked, the ground-truth epipolar
/// distance decides.
pub fn true_positive_curve(
    dataset: &Dataset,
    mode: &EvalMode<'_>,
    reference_frame: i64,
    frames: &[i64],
    ratio_threshold: f64,
    epipolar_threshold_px: f64,
) -> Result<Vec<CurvePoint>> {
    let reference = frame(dataset, reference_frame)?;
    let (ref_pose, ref_k) = pose_and_intrinsics(dataset, reference)?;
    frames
        .iter()
        .map(|&fid| {
            let f = frame(dataset, fid)?;
            let (pose, k) = pose_and_intrinsics(dataset, f)?;
            let matches = match_frames(mode, f, reference, ratio_threshold)?;
            let mut n_matches = 0;
            let mut n_tp = 0;
            for m in matches.iter().filter(|m| m.kept) {
                n_matches += 1;
                let q = &f.keypoints[m.query_keypoint];
                let t = &reference.keypoints[m.target_keypoint];
                let correct = match (q.landmark_id, t.landmark_id) {
                    (Some(a), Some(b)) => a == b,
                    _ => epipolar_verify(&t.position(), &q.position(), &ref_pose, &pose, &ref_k, &k, epipolar_threshold_px),
                };
                n_tp += correct as usize;
            }
            Ok(CurvePoint {
                frame_id: fid,
                angular_distance: rotation_error(&ref_pose.rotation, &pose.rotation),
                n_true_positives: n_tp,
                n_matches,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseReport {
    pub pair_id: String,
    pub angular_gt: f64,
    pub rot_err: f64,
    pub trans_err: f64,
    pub n_matches: usize,
    pub n_inliers: usize,
}

pub const POSE_CSV_HEADER: &str = "pair_id,angular_gt_rad,rot_err_rad,trans_err,n_matches,n_inliers";

impl PoseReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.pair_id, self.angular_gt, self.rot_err, self.trans_err, self.n_matches, self.n_inliers
        )
    }
}

/// Matches frame `b` against frame `a`, estimates their relative pose from the
/// ratio-test survivors, and compares it with ground truth. The translation
/// error compares directions only.
pub fn evaluate_pair_pose(
    dataset: &Dataset,
    mode: &EvalMode<'_>,
    frame_a: i64,
    frame_b: i64,
    ratio_threshold: f64,
    ransac: &RansacConfig,
) -> Result<PoseReport> {
    let fa = frame(dataset, frame_a)?;
    let fb = frame(dataset, frame_b)?;
    let (pose_a, ka) = pose_and_intrinsics(dataset, fa)?;
    let (pose_b, kb) = pose_and_intrinsics(dataset, fb)?;
    let corrs: Vec<Correspondence> = match_frames(mode, fb, fa, ratio_threshold)?
        .iter()
        .filter(|m| m.kept)
        .map(|m| {
            let pa = &fa.keypoints[m.target_keypoint];
            let pb = &fb.keypoints[m.query_keypoint];
            Correspondence::new(Vector2::new(pa.x, pa.y), Vector2::new(pb.x, pb.y))
        })
        .collect();
    if corrs.len() < crate::geometry::MIN_CORRESPONDENCES {
        return Err(Error::InsufficientData(format!(
            "pair {frame_a}:{frame_b} has only {} matches",
            corrs.len()
        )));
    }
    let est = estimate_relative_pose(&corrs, &ka, &kb, ransac)?;
    let gt = pose_a.relative_to(&pose_b);
    Ok(PoseReport {
        pair_id: format!("{frame_a}:{frame_b}"),
        angular_gt: rotation_error(&pose_a.rotation, &pose_b.rotation),
        rot_err: rotation_error(&est.rotation, &gt.rotation),
        trans_err: translation_error(&est.translation, &gt.translation)?,
        n_matches: corrs.len(),
        n_inliers: est.n_inliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, WorldConfig};
    use crate::nn::init_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn real(v: &[&[f64]]) -> Features {
        Features::Real(v.iter().map(|x| x.to_vec()).collect())
    }

    #[test]
    fn basic_match() {
        let m = nn_match(&real(&[&[1.0, 0.0]]), &real(&[&[0.0, 0.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(m[0].target_index, 0);
        assert_eq!(m[0].distance, 1.0);
        assert!((m[0].second_distance - 20f64.sqrt()).abs() < 1e-12);
        let m = nn_match(&real(&[&[3.0, 4.0]]), &real(&[&[0.0, 0.0], &[3.0, 4.0]])).unwrap();
        assert_eq!((m[0].target_index, m[0].distance), (1, 0.0));
    }

    #[test]
    fn ties_go_to_lower_index() {
        let m = nn_match(&real(&[&[0.0]]), &real(&[&[1.0], &[-1.0], &[1.0]])).unwrap();
        assert_eq!(m[0].target_index, 0);
        assert_eq!(m[0].second_distance, 1.0);
    }

    #[test]
    fn small_database() {
        assert!(matches!(
            nn_match(&real(&[&[0.0]]), &real(&[&[1.0]])),
            Err(Error::EmptyDatabase(1))
        ));
        assert!(matches!(
            nn_match(&real(&[&[0.0, 1.0]]), &real(&[&[1.0], &[2.0]])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ratio_cases() {
        let m = |d: f64, s: f64| Match {
            query_index: 0,
            target_index: 0,
            distance: d,
            second_distance: s,
        };
        assert_eq!(ratio_test(&[m(1.0, 2.0)], 0.8).len(), 1);
        assert!(ratio_test(&[m(2.0, 2.0)], 0.99).is_empty());
        let input: Vec<Match> = (0..50).map(|i| m(i as f64 * 0.02, 1.0)).collect();
        let loose = ratio_test(&input, 1.0);
        let tight = ratio_test(&input, 0.7);
        assert!(tight.iter().all(|t| loose.contains(t)));
        assert_eq!(ratio_test(&tight, 0.7), tight);
    }

    fn twice_observed(duplicate_constellations: bool) -> Dataset {
        let mut ds = generate_dataset(&WorldConfig {
            n_landmarks: 80,
            n_frames: 2,
            descriptor_noise: 0.0,
            unlinked_fraction: 0.0,
            ..Default::default()
        })
        .unwrap();
        if duplicate_constellations {
            let mut copy = ds.frames[0].clone();
            copy.frame_id = 1;
            ds.frames[1] = copy;
        }
        ds
    }

    #[test]
    fn identical_observations_give_perfect_precision() {
        let ds = twice_observed(true);
        let model = init_model(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = precision_eval(&EvalMode::Scone(&model), &ds, 1000, &mut rng).unwrap();
        assert_eq!(r.precision, 1.0);
        let r = precision_eval(&EvalMode::Raw { k: 5 }, &ds, 1000, &mut rng).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.n_sampled, ds.keypoint_count());
    }

    #[test]
    fn precision_is_deterministic() {
        let ds = twice_observed(false);
        let model = init_model(3, 5);
        let run = || precision_eval(&EvalMode::Scone(&model), &ds, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn self_match_curve() {
        let ds = twice_observed(false);
        let pts = true_positive_curve(&ds, &EvalMode::Raw { k: 5 }, 0, &[0, 1], 0.8, 3.0).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].angular_distance, 0.0);
        assert_eq!(pts[0].n_true_positives, pts[0].n_matches);
        assert!(pts[0].n_matches > 0);
    }

    #[test]
    fn missing_pose_is_reported() {
        let mut ds = twice_observed(false);
        ds.frames[1].pose = None;
        assert!(matches!(
            true_positive_curve(&ds, &EvalMode::Raw { k: 5 }, 0, &[1], 0.8, 3.0),
            Err(Error::MissingPose(1))
        ));
    }

    #[test]
    fn sweep_rows_survive_failures() {
        let ds = twice_observed(false);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            steps_per_epoch: 1,
            val_samples: 10,
            ..Default::default()
        };
        // k = 500 leaves no constellations, so that run fails
        let rows = sweep_k(&ds, &ds, &[2, 500], &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].precision.is_ok());
        assert!(rows[1].precision.is_err());
        let csv = sweep_to_csv(&rows);
        assert!(csv.starts_with("k,precision\n2,"));
        assert!(csv.ends_with("500,failed\n"));
        assert_eq!(sweep_k(&ds, &ds, &[5], &cfg).unwrap().len(), 1);
    }
}
