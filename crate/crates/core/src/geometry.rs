//! Two-view epipolar geometry: essential-matrix estimation (normalized
//! 8-point inside RANSAC), pose recovery with a cheirality test, epipolar
//! verification of matches against ground-truth poses, and pose error metrics.
//!
//! Convention: camera poses map world to camera (`X_c = R·X_w + t`); the
//! relative pose from camera 1 to camera 2 satisfies `X_2 = R·X_1 + t`, and
//! the essential matrix `E = [t]ₓR` satisfies `x₂ᵀ E x₁ = 0` on normalized
//! image coordinates.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CameraIntrinsics, CameraPose};

/// Minimum sample size of the linear solver.
pub const MIN_CORRESPONDENCES: usize = 8;

/// A pixel correspondence between image 1 and image 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p1: Vector2<f64>,
    pub p2: Vector2<f64>,
}

impl Correspondence {
    pub fn new(p1: Vector2<f64>, p2: Vector2<f64>) -> Self {
        Self { p1, p2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(pub Matrix3<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Sampson distance threshold in normalized image coordinates.
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            inlier_threshold: 1e-3,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    /// Unit direction; the scale is unobservable.
    pub translation: Vector3<f64>,
    pub n_inliers: usize,
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `E = [t]ₓR` for the relative pose taking camera-1 to camera-2 coordinates.
pub fn essential_from_pose(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Matrix3<f64> {
    skew(translation) * rotation
}

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn hartley_transform(points: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0))
}

/// Projects onto the essential manifold: singular values `(1, 1, 0)`,
/// which also fixes `‖E‖_F = √2`.
fn project_essential(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Degenerate("SVD failed".into())),
    };
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut d = Matrix3::zeros();
    d[(order[0], order[0])] = 1.0;
    d[(order[1], order[1])] = 1.0;
    Ok(u * d * vt)
}

/// Linear 8-point solve on normalized camera coordinates (`z = 1` dropped).
fn eight_point(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    let n = x1.len();
    if n < MIN_CORRESPONDENCES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_CORRESPONDENCES} correspondences, got {n}"
        )));
    }
    let t1 = hartley_transform(x1)?;
    let t2 = hartley_transform(x2)?;
    let rows = n.max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let p = t1 * Vector3::new(x1[i].x, x1[i].y, 1.0);
        let q = t2 * Vector3::new(x2[i].x, x2[i].y, 1.0);
        let row = [
            q.x * p.x, q.x * p.y, q.x,
            q.y * p.x, q.y * p.y, q.y,
            p.x, p.y, 1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = &svd.singular_values;
    let largest = s[idx[0]];
    // a one-dimensional null space needs the second-smallest value well above zero
    if !(s[idx[7]] > 1e-9 * largest) {
        return Err(Error::Degenerate("design matrix has rank below 8".into()));
    }
    let e = vt.row(idx[8]);
    let f = Matrix3::new(e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]);
    project_essential(&(t2.transpose() * f * t1))
}

fn normalize_all(corrs: &[Correspondence], k1: &CameraIntrinsics, k2: &CameraIntrinsics) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
    corrs
        .iter()
        .map(|c| (k1.normalize(&c.p1).xy(), k2.normalize(&c.p2).xy()))
        .unzip()
}

/// Essential matrix from at least eight pixel correspondences.
pub fn normalize_and_eight_point(
    corrs: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Result<EssentialMatrix> {
    let (x1, x2) = normalize_all(corrs, k1, k2);
    eight_point(&x1, &x2).map(EssentialMatrix)
}

/// First-order geometric error of a normalized-coordinate correspondence,
/// returned as a distance (square root of the Sampson error).
pub fn sampson_distance(e: &Matrix3<f64>, x1: &Vector2<f64>, x2: &Vector2<f64>) -> f64 {
    let p = Vector3::new(x1.x, x1.y, 1.0);
    let q = Vector3::new(x2.x, x2.y, 1.0);
    let ep = e * p;
    let etq = e.transpose() * q;
    let num = q.dot(&ep);
    let den = ep.x * ep.x + ep.y * ep.y + etq.x * etq.x + etq.y * etq.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (num * num / den).sqrt()
}

fn inlier_mask(e: &Matrix3<f64>, x1: &[Vector2<f64>], x2: &[Vector2<f64>], threshold: f64) -> Vec<bool> {
    x1.iter()
        .zip(x2)
        .map(|(a, b)| sampson_distance(e, a, b) < threshold)
        .collect()
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let w = inlier_ratio.powi(MIN_CORRESPONDENCES as i32);
    if w >= 1.0 {
        return 1.0;
    }
    if w <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (-w).ln_1p()).ceil()
}

/// Robust essential matrix. Returns the model refitted on the consensus set
/// and its inlier mask.
pub fn ransac_essential(
    corrs: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<(EssentialMatrix, Vec<bool>)> {
    let n = corrs.len();
    if n < MIN_CORRESPONDENCES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_CORRESPONDENCES} correspondences, got {n}"
        )));
    }
    if !(config.confidence > 0.0 && config.confidence < 1.0) || !(config.inlier_threshold > 0.0) {
        return Err(Error::InvalidArgument("invalid RANSAC configuration".into()));
    }
    let (x1, x2) = normalize_all(corrs, k1, k2);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Matrix3<f64>, Vec<bool>, usize)> = None;
    let mut budget = config.max_iterations as f64;
    let mut trial = 0usize;
    let mut s1 = Vec::with_capacity(MIN_CORRESPONDENCES);
    let mut s2 = Vec::with_capacity(MIN_CORRESPONDENCES);
    while (trial as f64) < budget && trial < config.max_iterations {
        trial += 1;
        s1.clear();
        s2.clear();
        for i in sample(&mut rng, n, MIN_CORRESPONDENCES) {
            s1.push(x1[i]);
            s2.push(x2[i]);
        }
        let Ok(e) = eight_point(&s1, &s2) else {
            continue;
        };
        let mask = inlier_mask(&e, &x1, &x2, config.inlier_threshold);
        let count = mask.iter().filter(|&&m| m).count();
        if best.as_ref().is_none_or(|b| count > b.2) {
            budget = budget.min(required_iterations(count as f64 / n as f64, config.confidence));
            best = Some((e, mask, count));
        }
    }
    let (mut e, mut mask, mut count) = best.ok_or(Error::NoConsensus { inliers: 0 })?;
    if count < MIN_CORRESPONDENCES {
        return Err(Error::NoConsensus { inliers: count });
    }
    let (i1, i2): (Vec<_>, Vec<_>) = mask
        .iter()
        .zip(x1.iter().zip(&x2))
        .filter(|(m, _)| **m)
        .map(|(_, (a, b))| (*a, *b))
        .unzip();
    if let Ok(refit) = eight_point(&i1, &i2) {
        let refit_mask = inlier_mask(&refit, &x1, &x2, config.inlier_threshold);
        let refit_count = refit_mask.iter().filter(|&&m| m).count();
        if refit_count >= count {
            e = refit;
            mask = refit_mask;
            count = refit_count;
        }
    }
    debug_assert!(count >= MIN_CORRESPONDENCES);
    Ok((EssentialMatrix(e), mask))
}

/// Depths `(d1, d2)` of the point seen along `x1` and `x2`, or `None` when
/// the rays are (numerically) parallel.
fn triangulate_depths(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    x1: &Vector2<f64>,
    x2: &Vector2<f64>,
) -> Option<(f64, f64)> {
    let a = rotation * Vector3::new(x1.x, x1.y, 1.0);
    let b = -Vector3::new(x2.x, x2.y, 1.0);
    let aa = a.dot(&a);
    let bb = b.dot(&b);
    let ab = a.dot(&b);
    let det = aa * bb - ab * ab;
    if det <= 1e-12 * aa * bb {
        return None;
    }
    let rhs_a = -a.dot(translation);
    let rhs_b = -b.dot(translation);
    let d1 = (bb * rhs_a - ab * rhs_b) / det;
    let d2 = (aa * rhs_b - ab * rhs_a) / det;
    Some((d1, d2))
}

/// Picks the factorization of `E` that puts a strict majority of points in
/// front of both cameras.
pub fn decompose_essential(
    e: &EssentialMatrix,
    corrs: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Result<RelativePose> {
    if corrs.is_empty() {
        return Err(Error::InvalidArgument("need at least one correspondence".into()));
    }
    let svd = e.0.svd(true, true);
    let (mut u, mut vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Degenerate("SVD failed".into())),
    };
    // the null direction of E is the column of U with the smallest singular value
    let null_col = (0..3)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .expect("three singular values");
    if null_col != 2 {
        u.swap_columns(null_col, 2);
        vt.swap_rows(null_col, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    let candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)];

    let (x1, x2) = normalize_all(corrs, k1, k2);
    let counts: Vec<usize> = candidates
        .iter()
        .map(|(r, t)| {
            x1.iter()
                .zip(&x2)
                .filter(|(a, b)| matches!(triangulate_depths(r, t, a, b), Some((d1, d2)) if d1 > 0.0 && d2 > 0.0))
                .count()
        })
        .collect();
    let best = (0..4).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).expect("four candidates");
    let second = (0..4).filter(|&i| i != best).map(|i| counts[i]).max().unwrap_or(0);
    let total = corrs.len();
    if counts[best] * 2 <= total || counts[best] == second {
        return Err(Error::CheiralityTie {
            best: counts[best],
            second,
            total,
        });
    }
    let (rotation, translation) = candidates[best];
    Ok(RelativePose {
        rotation,
        translation,
        n_inliers: counts[best],
    })
}

/// RANSAC essential matrix followed by decomposition on its inliers.
/// `n_inliers` of the result is the RANSAC consensus size.
pub fn estimate_relative_pose(
    corrs: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<RelativePose> {
    let (e, mask) = ransac_essential(corrs, k1, k2, config)?;
    let inliers: Vec<Correspondence> = corrs
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c)
        .collect();
    let mut pose = decompose_essential(&e, &inliers, k1, k2)?;
    pose.n_inliers = inliers.len();
    Ok(pose)
}

/// Angle of the relative rotation `R_estᵀ·R_gt`, in radians.
pub fn rotation_error(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let dr = r_est.transpose() * r_gt;
    let d = (dr.trace() - 1.0) / 2.0;
    d.clamp(-1.0, 1.0).acos()
}

/// Distance between translation directions after resolving the sign
/// ambiguity of `t_est`.
pub fn translation_error(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> Result<f64> {
    let gt_norm = t_gt.norm();
    if !(gt_norm > 0.0) {
        return Err(Error::ZeroTranslation);
    }
    let g = t_gt / gt_norm;
    let e = t_est.normalize();
    Ok((e - g).norm().min((e + g).norm()))
}

/// Ground-truth check of a match from camera 1 to camera 2. Uses the
/// symmetric epipolar distance in pixels (root mean square of the two
/// point-to-line distances); when the cameras share a centre, falls back to
/// the rotation-induced homography transfer.
#[allow(clippy::too_many_arguments)]
pub fn epipolar_verify(
    p1: &Vector2<f64>,
    p2: &Vector2<f64>,
    pose1: &CameraPose,
    pose2: &CameraPose,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    threshold_px: f64,
) -> bool {
    epipolar_distance(p1, p2, pose1, pose2, k1, k2) < threshold_px
}

/// The distance used by [`epipolar_verify`].
pub fn epipolar_distance(
    p1: &Vector2<f64>,
    p2: &Vector2<f64>,
    pose1: &CameraPose,
    pose2: &CameraPose,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> f64 {
    let rel = pose1.relative_to(pose2);
    let k1m = k1.matrix();
    let k2m = k2.matrix();
    let (Some(k1i), Some(k2i)) = (k1m.try_inverse(), k2m.try_inverse()) else {
        return f64::INFINITY;
    };
    let h1 = Vector3::new(p1.x, p1.y, 1.0);
    let h2 = Vector3::new(p2.x, p2.y, 1.0);
    let scene_scale = pose1.translation.norm().max(pose2.translation.norm()).max(1.0);
    if rel.translation.norm() <= 1e-12 * scene_scale {
        let h = k2m * rel.rotation * k1i;
        let fwd = h * h1;
        let bwd = h.try_inverse().map(|hi| hi * h2);
        let d2 = (fwd.xy() / fwd.z - p2).norm();
        let d1 = bwd.map_or(f64::INFINITY, |b| (b.xy() / b.z - p1).norm());
        return ((d1 * d1 + d2 * d2) / 2.0).sqrt();
    }
    let f = k2i.transpose() * essential_from_pose(&rel.rotation, &rel.translation) * k1i;
    let l2 = f * h1;
    let l1 = f.transpose() * h2;
    let d2 = h2.dot(&l2).abs() / l2.xy().norm();
    let d1 = h1.dot(&l1).abs() / l1.xy().norm();
    let d = ((d1 * d1 + d2 * d2) / 2.0).sqrt();
    if d.is_nan() {
        f64::INFINITY
    } else {
        d
    }
}
