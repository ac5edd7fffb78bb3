//! Synthetic structure-from-motion worlds: landmarks with ground-truth binary
//! descriptors, a camera trajectory facing the landmark cloud, and rendered
//! keyframes with noisy descriptors and depth-consistent keypoint scales.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{BinaryDescriptor, CameraIntrinsics, CameraPose, Dataset, Keyframe, Keypoint, Landmark, DESCRIPTOR_BITS};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trajectory {
    /// Circle of radius `orbit_radius` around the origin, `step` radians apart.
    Orbit,
    /// Straight line at distance `orbit_radius`, `step` world units apart.
    Line,
}

impl std::str::FromStr for Trajectory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbit" => Ok(Trajectory::Orbit),
            "line" => Ok(Trajectory::Line),
            other => Err(Error::InvalidArgument(format!("unknown trajectory {other:?}"))),
        }
    }
}

impl std::fmt::Display for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Trajectory::Orbit => "orbit",
            Trajectory::Line => "line",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub n_landmarks: usize,
    /// Side length of the cube, centred at the origin, holding the landmarks.
    pub world_extent: f64,
    pub n_frames: usize,
    pub trajectory: Trajectory,
    pub orbit_radius: f64,
    pub step: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub intrinsics: CameraIntrinsics,
    /// Per-bit flip probability.
    pub descriptor_noise: f64,
    pub unlinked_fraction: f64,
    pub duplicate_descriptor_groups: usize,
    pub duplicate_group_size: usize,
    /// Keypoint scale at depth `orbit_radius`.
    pub base_scale: f64,
    /// Standard deviation of the per-frame orientation jitter, radians.
    pub orientation_jitter: f64,
    /// Round pixel coordinates to 0.1 px.
    pub quantize: bool,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 200,
            world_extent: 4.0,
            n_frames: 20,
            trajectory: Trajectory::Orbit,
            orbit_radius: 8.0,
            step: 5f64.to_radians(),
            image_width: 640,
            image_height: 480,
            intrinsics: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
            },
            descriptor_noise: 0.02,
            unlinked_fraction: 0.1,
            duplicate_descriptor_groups: 0,
            duplicate_group_size: 2,
            base_scale: 4.0,
            orientation_jitter: 0.05,
            quantize: false,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_frames == 0 {
            return bad("n_frames must be positive");
        }
        if !(self.world_extent > 0.0) {
            return bad("world_extent must be positive");
        }
        if !(self.orbit_radius > 0.0) || !self.step.is_finite() {
            return bad("orbit_radius must be positive and step finite");
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive");
        }
        if !self.intrinsics.is_valid() {
            return bad("invalid intrinsics");
        }
        if !(0.0..0.5).contains(&self.descriptor_noise) {
            return bad("descriptor_noise must lie in [0, 0.5)");
        }
        if !(0.0..1.0).contains(&self.unlinked_fraction) {
            return bad("unlinked_fraction must lie in [0, 1)");
        }
        if self.duplicate_descriptor_groups > 0 && self.duplicate_group_size < 2 {
            return bad("duplicate_group_size must be at least 2");
        }
        if self.duplicate_descriptor_groups * self.duplicate_group_size > self.n_landmarks {
            return bad("duplicate groups need more landmarks than available");
        }
        if !(self.base_scale > 0.0) || !(self.orientation_jitter >= 0.0) {
            return bad("base_scale must be positive and orientation_jitter non-negative");
        }
        Ok(())
    }
}

/// Landmarks, their ground-truth appearance, and the camera trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub landmarks: Vec<Landmark>,
    pub descriptors: Vec<BinaryDescriptor>,
    /// Image-plane orientation each landmark is observed with, before jitter.
    pub orientations: Vec<f64>,
    pub poses: Vec<CameraPose>,
}

/// Rotation whose optical axis (third row) points along `forward`, with image
/// `y` as close to world `+y` as possible.
fn look_rotation(forward: &Vector3<f64>) -> Matrix3<f64> {
    let z = forward.normalize();
    let down = Vector3::y();
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

fn trajectory(config: &WorldConfig) -> Vec<CameraPose> {
    let r = config.orbit_radius;
    (0..config.n_frames)
        .map(|i| {
            let center = match config.trajectory {
                Trajectory::Orbit => {
                    let theta = i as f64 * config.step;
                    Vector3::new(r * theta.sin(), 0.0, -r * theta.cos())
                }
                Trajectory::Line => {
                    let offset = (i as f64 - (config.n_frames as f64 - 1.0) / 2.0) * config.step;
                    Vector3::new(offset, 0.0, -r)
                }
            };
            let rotation = match config.trajectory {
                Trajectory::Orbit => look_rotation(&(-center)),
                Trajectory::Line => Matrix3::identity(),
            };
            CameraPose::new(rotation, -(rotation * center))
        })
        .collect()
}

pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "world");
    let half = config.world_extent / 2.0;
    let n_dup = config.duplicate_descriptor_groups * config.duplicate_group_size;
    let positions: Vec<Vector3<f64>> = (0..config.n_landmarks)
        .map(|_| {
            Vector3::new(
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
            )
        })
        .collect();
    let landmarks: Vec<Landmark> = positions
        .into_iter()
        .enumerate()
        .map(|(i, position)| Landmark {
            landmark_id: i as u64,
            position,
        })
        .collect();

    let mut seen = HashSet::new();
    let mut fresh = |rng: &mut rand_chacha::ChaCha8Rng| loop {
        let d = BinaryDescriptor::random(rng);
        if seen.insert(d) {
            return d;
        }
    };
    let mut descriptors = Vec::with_capacity(config.n_landmarks);
    let mut orientations = Vec::with_capacity(config.n_landmarks);
    // group members look alike: same descriptor, same orientation
    for _ in 0..config.duplicate_descriptor_groups {
        let d = fresh(&mut rng);
        let o = rng.random_range(-PI..PI);
        descriptors.extend(std::iter::repeat_n(d, config.duplicate_group_size));
        orientations.extend(std::iter::repeat_n(o, config.duplicate_group_size));
    }
    for _ in n_dup..config.n_landmarks {
        descriptors.push(fresh(&mut rng));
        orientations.push(rng.random_range(-PI..PI));
    }
    Ok(World {
        landmarks,
        descriptors,
        orientations,
        poses: trajectory(config),
    })
}

fn noisy_descriptor<R: Rng + ?Sized>(d: &BinaryDescriptor, p: f64, rng: &mut R) -> BinaryDescriptor {
    if p == 0.0 {
        return *d;
    }
    let mut out = *d;
    for i in 0..DESCRIPTOR_BITS {
        if rng.random_bool(p) {
            out = out.with_flipped(i);
        }
    }
    out
}

fn quantize(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Observes the world from `pose`. Keypoints of visible landmarks come first,
/// in landmark order, followed by the unlinked clutter.
pub fn render_keyframe<R: Rng + ?Sized>(
    world: &World,
    pose: &CameraPose,
    frame_id: i64,
    config: &WorldConfig,
    rng: &mut R,
) -> Keyframe {
    let k = &config.intrinsics;
    let (w, h) = (config.image_width as f64, config.image_height as f64);
    let jitter = Normal::new(0.0, config.orientation_jitter).expect("non-negative std");
    let mut keypoints = Vec::new();
    for (i, lm) in world.landmarks.iter().enumerate() {
        let xc = pose.transform(&lm.position);
        if xc.z <= 1e-6 {
            continue;
        }
        let p = k.project(&xc);
        if !(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h) {
            continue;
        }
        let descriptor = noisy_descriptor(&world.descriptors[i], config.descriptor_noise, rng);
        let scale = config.base_scale * config.orbit_radius / xc.z;
        let orientation = world.orientations[i] + jitter.sample(rng);
        let (x, y) = if config.quantize { (quantize(p.x), quantize(p.y)) } else { (p.x, p.y) };
        keypoints.push(Keypoint::new(x, y, scale, orientation, descriptor, Some(lm.landmark_id)));
    }
    let n_unlinked = (config.unlinked_fraction * keypoints.len() as f64).ceil() as usize;
    for _ in 0..n_unlinked {
        let x = rng.random_range(0.0..w);
        let y = rng.random_range(0.0..h);
        let (x, y) = if config.quantize { (quantize(x), quantize(y)) } else { (x, y) };
        let scale = config.base_scale * rng.random_range(0.5f64..2.0);
        let orientation = rng.random_range(-PI..PI);
        keypoints.push(Keypoint::new(x, y, scale, orientation, BinaryDescriptor::random(rng), None));
    }
    Keyframe {
        frame_id,
        keypoints,
        pose: Some(*pose),
        intrinsics: None,
    }
}

/// World plus every rendered frame. Frame `i` draws from its own named stream,
/// so any frame can be regenerated independently.
pub fn generate_dataset(config: &WorldConfig) -> Result<Dataset> {
    let world = generate_world(config)?;
    let frames = world
        .poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut rng = rng::stream(config.seed, &format!("frame/{i}"));
            render_keyframe(&world, pose, i as i64, config, &mut rng)
        })
        .collect();
    Ok(Dataset {
        intrinsics: Some(config.intrinsics),
        landmarks: world.landmarks,
        frames,
    })
}

/// Splits frames into disjoint training and validation sets. The training
/// share is `floor(train_fraction · n)` clamped to `[1, n − 1]`; validation
/// frames are spread evenly over the sequence.
pub fn make_split(dataset: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    let n = dataset.frames.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 frames to split, got {n}")));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument("train_fraction must lie in [0, 1]".into()));
    }
    let n_train = ((train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let n_val = n - n_train;
    let val_idx: HashSet<usize> = (0..n_val)
        .map(|j| ((j as f64 + 0.5) * n as f64 / n_val as f64).floor() as usize)
        .collect();
    debug_assert_eq!(val_idx.len(), n_val);
    let pick = |val: bool| Dataset {
        intrinsics: dataset.intrinsics,
        landmarks: dataset.landmarks.clone(),
        frames: dataset
            .frames
            .iter()
            .enumerate()
            .filter(|(i, _)| val_idx.contains(i) == val)
            .map(|(_, f)| f.clone())
            .collect(),
    };
    Ok((pick(false), pick(true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::epipolar_verify;
    use crate::model::{hamming_distance, validate_dataset};

    fn small() -> WorldConfig {
        WorldConfig {
            n_landmarks: 60,
            n_frames: 6,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        let c = small();
        assert_eq!(generate_dataset(&c).unwrap(), generate_dataset(&c).unwrap());
        let other = WorldConfig { seed: 1, ..c.clone() };
        assert_ne!(generate_dataset(&c).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn descriptors_distinct_without_groups() {
        let w = generate_world(&small()).unwrap();
        let set: HashSet<_> = w.descriptors.iter().collect();
        assert_eq!(set.len(), w.descriptors.len());
    }

    #[test]
    fn duplicate_groups_share_descriptors() {
        let c = WorldConfig {
            duplicate_descriptor_groups: 5,
            duplicate_group_size: 3,
            ..small()
        };
        let w = generate_world(&c).unwrap();
        for g in 0..5 {
            assert_eq!(w.descriptors[3 * g], w.descriptors[3 * g + 1]);
            assert_eq!(w.descriptors[3 * g], w.descriptors[3 * g + 2]);
            assert_eq!(w.orientations[3 * g], w.orientations[3 * g + 2]);
        }
        let set: HashSet<_> = w.descriptors.iter().collect();
        assert_eq!(set.len(), 5 + 60 - 15);
    }

    #[test]
    fn empty_world_is_valid() {
        let c = WorldConfig {
            n_landmarks: 0,
            ..small()
        };
        let ds = generate_dataset(&c).unwrap();
        assert!(ds.landmarks.is_empty());
        assert!(validate_dataset(&ds).is_empty());
        assert!(ds.frames.iter().all(|f| f.keypoints.is_empty()));
    }

    #[test]
    fn generated_dataset_validates() {
        let ds = generate_dataset(&small()).unwrap();
        assert!(validate_dataset(&ds).is_empty());
        assert!(ds.frames.iter().all(|f| f.keypoints.len() > 30));
    }

    #[test]
    fn noiseless_descriptors_are_exact() {
        let c = WorldConfig {
            descriptor_noise: 0.0,
            unlinked_fraction: 0.0,
            ..small()
        };
        let w = generate_world(&c).unwrap();
        let ds = generate_dataset(&c).unwrap();
        for f in &ds.frames {
            for kp in &f.keypoints {
                assert_eq!(kp.descriptor, w.descriptors[kp.landmark_id.unwrap() as usize]);
            }
        }
    }

    #[test]
    fn landmark_behind_camera_is_absent() {
        let mut w = generate_world(&small()).unwrap();
        w.landmarks.truncate(2);
        w.landmarks[0].position = Vector3::new(0.0, 0.0, 0.0);
        w.landmarks[1].position = Vector3::new(0.0, 0.0, -20.0);
        let c = WorldConfig {
            unlinked_fraction: 0.0,
            ..small()
        };
        let mut rng = rng::stream(0, "t");
        let f = render_keyframe(&w, &w.poses[0], 0, &c, &mut rng);
        let ids: Vec<_> = f.keypoints.iter().map(|k| k.landmark_id).collect();
        assert_eq!(ids, vec![Some(0)]);
    }

    #[test]
    fn flip_count_matches_binomial() {
        let p = 0.05;
        let d = BinaryDescriptor::random(&mut rng::stream(3, "d"));
        let mut rng = rng::stream(4, "flips");
        let n = 1000;
        let total: u32 = (0..n).map(|_| hamming_distance(&d, &noisy_descriptor(&d, p, &mut rng))).sum();
        let mean = total as f64 / n as f64;
        let expected = 512.0 * p;
        let sigma = (512.0 * p * (1.0 - p) / n as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * sigma, "{mean}");
    }

    #[test]
    fn correspondences_are_epipolar_exact() {
        let c = WorldConfig {
            unlinked_fraction: 0.0,
            ..small()
        };
        let ds = generate_dataset(&c).unwrap();
        let (a, b) = (&ds.frames[0], &ds.frames[3]);
        let mut checked = 0;
        for ka in &a.keypoints {
            if let Some(kb) = b.keypoints.iter().find(|kb| kb.landmark_id == ka.landmark_id) {
                assert!(epipolar_verify(
                    &ka.position(),
                    &kb.position(),
                    a.pose.as_ref().unwrap(),
                    b.pose.as_ref().unwrap(),
                    &c.intrinsics,
                    &c.intrinsics,
                    1e-6
                ));
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn orbit_steps_are_rotations_by_step() {
        let w = generate_world(&small()).unwrap();
        for i in 1..w.poses.len() {
            let rel = w.poses[i - 1].relative_to(&w.poses[i]);
            let angle = crate::geometry::rotation_error(&rel.rotation, &Matrix3::identity());
            assert!((angle - 5f64.to_radians()).abs() < 1e-9);
            assert!(w.poses[i].is_valid_rotation());
        }
    }

    #[test]
    fn split_rules() {
        let ds = generate_dataset(&small()).unwrap();
        for frac in [0.0, 0.5, 0.8, 1.0] {
            let (tr, va) = make_split(&ds, frac).unwrap();
            assert_eq!(tr.frames.len() + va.frames.len(), ds.frames.len());
            assert!(!tr.frames.is_empty() && !va.frames.is_empty());
            let ids: HashSet<_> = tr.frames.iter().map(|f| f.frame_id).collect();
            assert!(va.frames.iter().all(|f| !ids.contains(&f.frame_id)));
            assert_eq!(tr.landmarks, ds.landmarks);
        }
    }
}
