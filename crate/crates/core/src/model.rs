//! Domain types shared across the toolkit and bit-level descriptor operations.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;

/// Number of bits in a [`BinaryDescriptor`].
pub const DESCRIPTOR_BITS: usize = 512;
/// Number of bytes in the serialized form of a [`BinaryDescriptor`].
pub const DESCRIPTOR_BYTES: usize = DESCRIPTOR_BITS / 8;
const WORDS: usize = DESCRIPTOR_BITS / 64;

/// Tolerance used for the orthonormality and determinant checks on rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = theta - two_pi * ((theta + PI) / two_pi).floor();
    // floor() can land exactly on the open end after rounding
    if w >= PI {
        w -= two_pi;
    }
    if w < -PI {
        w = -PI;
    }
    w
}

/// A fixed 512-bit binary feature descriptor.
///
/// Bit `i` lives in word `i / 64` at position `i % 64` (bit 0 is the lowest
/// bit of word 0).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor {
    words: [u64; WORDS],
}

impl BinaryDescriptor {
    pub const fn from_words(words: [u64; WORDS]) -> Self {
        Self { words }
    }

    pub const fn zeros() -> Self {
        Self { words: [0; WORDS] }
    }

    pub const fn ones() -> Self {
        Self {
            words: [u64::MAX; WORDS],
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut words = [0u64; WORDS];
        for w in &mut words {
            *w = rng.random();
        }
        Self { words }
    }

    /// Builds a descriptor from exactly 512 booleans.
    pub fn from_bits(bits: &[bool]) -> Option<Self> {
        if bits.len() != DESCRIPTOR_BITS {
            return None;
        }
        let mut words = [0u64; WORDS];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Some(Self { words })
    }

    /// Little-endian 64-bit words, 64 bytes total.
    pub fn from_le_bytes(bytes: &[u8; DESCRIPTOR_BYTES]) -> Self {
        let mut words = [0u64; WORDS];
        for (w, chunk) in words.iter_mut().zip(bytes.chunks_exact(8)) {
            *w = u64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
        Self { words }
    }

    pub fn to_le_bytes(&self) -> [u8; DESCRIPTOR_BYTES] {
        let mut out = [0u8; DESCRIPTOR_BYTES];
        for (chunk, w) in out.chunks_exact_mut(8).zip(self.words.iter()) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn words(&self) -> &[u64; WORDS] {
        &self.words
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    /// Returns a copy with bit `i` inverted.
    pub fn with_flipped(&self, i: usize) -> Self {
        let mut words = self.words;
        words[i / 64] ^= 1 << (i % 64);
        Self { words }
    }

    pub fn complement(&self) -> Self {
        let mut words = self.words;
        for w in &mut words {
            *w = !*w;
        }
        Self { words }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }
}

impl fmt::Debug for BinaryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryDescriptor({})", hex::encode(self.to_le_bytes()))
    }
}

/// Number of differing bit positions, in `[0, 512]`.
pub fn hamming_distance(a: &BinaryDescriptor, b: &BinaryDescriptor) -> u32 {
    a.words
        .iter()
        .zip(b.words.iter())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Network input encoding of a descriptor: bit 0 → 0.0, bit 1 → 1.0.
pub fn descriptor_to_real_vector(d: &BinaryDescriptor) -> Vec<f64> {
    let mut out = vec![0.0; DESCRIPTOR_BITS];
    write_descriptor_reals(d, &mut out);
    out
}

/// Writes the `{0.0, 1.0}` encoding into a 512-long slice.
pub fn write_descriptor_reals(d: &BinaryDescriptor, out: &mut [f64]) {
    debug_assert_eq!(out.len(), DESCRIPTOR_BITS);
    for (i, v) in out.iter_mut().enumerate() {
        *v = if d.bit(i) { 1.0 } else { 0.0 };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Pixels, strictly positive.
    pub scale: f64,
    /// Radians in `[-π, π)`.
    pub orientation: f64,
    pub descriptor: BinaryDescriptor,
    pub landmark_id: Option<u64>,
}

impl Keypoint {
    /// Builds a keypoint, wrapping the orientation.
    pub fn new(
        x: f64,
        y: f64,
        scale: f64,
        orientation: f64,
        descriptor: BinaryDescriptor,
        landmark_id: Option<u64>,
    ) -> Self {
        Self {
            x,
            y,
            scale,
            orientation: wrap_angle(orientation),
            descriptor,
            landmark_id,
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel → normalized camera coordinates (homogeneous, z = 1).
    pub fn normalize(&self, p: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, xc: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * xc.x / xc.z + self.cx,
            self.fy * xc.y / xc.z + self.cy,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite()
    }
}

/// World → camera rigid transform: `X_cam = R · X_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> CameraPose {
        let rt = self.rotation.transpose();
        CameraPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Transform taking camera-`self` coordinates to camera-`other` coordinates.
    pub fn relative_to(&self, other: &CameraPose) -> CameraPose {
        other.compose(&self.inverse())
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn is_valid_rotation(&self) -> bool {
        is_rotation(&self.rotation, ROTATION_TOLERANCE)
    }
}

/// True when `RᵀR = I` and `det R = +1` within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    r.iter().all(|v| v.is_finite()) && ortho <= tol && (r.determinant() - 1.0).abs() <= tol
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub landmark_id: u64,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub frame_id: i64,
    pub keypoints: Vec<Keypoint>,
    pub pose: Option<CameraPose>,
    pub intrinsics: Option<CameraIntrinsics>,
}

/// Landmarks plus the keyframes observing them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    /// Dataset-wide calibration; frames may override it.
    pub intrinsics: Option<CameraIntrinsics>,
    pub landmarks: Vec<Landmark>,
    pub frames: Vec<Keyframe>,
}

impl Dataset {
    pub fn frame_intrinsics(&self, frame: &Keyframe) -> Option<CameraIntrinsics> {
        frame.intrinsics.or(self.intrinsics)
    }

    pub fn frame_by_id(&self, frame_id: i64) -> Option<&Keyframe> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn keypoint_count(&self) -> usize {
        self.frames.iter().map(|f| f.keypoints.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NonPositiveScale,
    OrientationNotWrapped,
    NonFiniteValue,
    DanglingLandmark(u64),
    DuplicateLandmarkId(u64),
    DuplicateFrameId(i64),
    RotationNotOrthonormal,
    InvalidIntrinsics,
}

/// One invariant violation, located by frame and keypoint position.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub frame_index: Option<usize>,
    pub keypoint_index: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.frame_index, self.keypoint_index) {
            (Some(fi), Some(ki)) => write!(f, "frame {fi} keypoint {ki}: {:?}", self.kind),
            (Some(fi), None) => write!(f, "frame {fi}: {:?}", self.kind),
            _ => write!(f, "{:?}", self.kind),
        }
    }
}

/// Checks every type invariant and landmark reference in a dataset.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |frame_index, keypoint_index, kind| {
        out.push(Violation {
            frame_index,
            keypoint_index,
            kind,
        })
    };

    if let Some(k) = &dataset.intrinsics {
        if !k.is_valid() {
            push(None, None, ViolationKind::InvalidIntrinsics);
        }
    }

    let mut ids = HashSet::new();
    for lm in &dataset.landmarks {
        if !ids.insert(lm.landmark_id) {
            push(None, None, ViolationKind::DuplicateLandmarkId(lm.landmark_id));
        }
    }

    let mut frame_ids = HashSet::new();
    for (fi, frame) in dataset.frames.iter().enumerate() {
        if !frame_ids.insert(frame.frame_id) {
            push(Some(fi), None, ViolationKind::DuplicateFrameId(frame.frame_id));
        }
        if let Some(pose) = &frame.pose {
            if !pose.is_valid_rotation() {
                push(Some(fi), None, ViolationKind::RotationNotOrthonormal);
            }
            if !pose.translation.iter().all(|v| v.is_finite()) {
                push(Some(fi), None, ViolationKind::NonFiniteValue);
            }
        }
        if let Some(k) = &frame.intrinsics {
            if !k.is_valid() {
                push(Some(fi), None, ViolationKind::InvalidIntrinsics);
            }
        }
        for (ki, kp) in frame.keypoints.iter().enumerate() {
            if !(kp.x.is_finite() && kp.y.is_finite() && kp.orientation.is_finite()) {
                push(Some(fi), Some(ki), ViolationKind::NonFiniteValue);
            }
            if !(kp.scale > 0.0 && kp.scale.is_finite()) {
                push(Some(fi), Some(ki), ViolationKind::NonPositiveScale);
            }
            if !(-PI..PI).contains(&kp.orientation) {
                push(Some(fi), Some(ki), ViolationKind::OrientationNotWrapped);
            }
            if let Some(id) = kp.landmark_id {
                if !ids.contains(&id) {
                    push(Some(fi), Some(ki), ViolationKind::DanglingLandmark(id));
                }
            }
        }
    }
    out
}
