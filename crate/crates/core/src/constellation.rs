//! Keypoint constellations: a central keypoint together with its `k` nearest
//! image-space neighbours, and the flat network-input layout built from them.
//!
//! Neighbours are ordered by ascending Euclidean distance to the central
//! keypoint, ties broken by ascending keypoint index. The recurrent part of the
//! embedding network consumes them in that order.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{wrap_angle, write_descriptor_reals, BinaryDescriptor, Keyframe, Keypoint};
use crate::model::DESCRIPTOR_BITS;

/// Geometry channels per neighbour: rel_x, rel_y, rel_scale, rel_orientation.
pub const NEIGHBOR_GEOMETRY: usize = 4;
/// Geometry channels for the central keypoint: scale, orientation.
pub const CENTRAL_GEOMETRY: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborFeature {
    pub keypoint_index: usize,
    pub descriptor: BinaryDescriptor,
    /// Pixels, neighbour minus central.
    pub rel_x: f64,
    pub rel_y: f64,
    /// `ln(neighbour.scale / central.scale)`.
    pub rel_scale: f64,
    /// Wrapped into `[-π, π)`.
    pub rel_orientation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub central: Keypoint,
    pub central_index: usize,
    pub neighbors: Vec<NeighborFeature>,
}

impl Constellation {
    pub fn k(&self) -> usize {
        self.neighbors.len()
    }

    /// Euclidean image distance to the farthest (k-th) neighbour.
    pub fn radius(&self) -> f64 {
        self.neighbors
            .last()
            .map(|n| n.rel_x.hypot(n.rel_y))
            .unwrap_or(0.0)
    }
}

/// Constants that map raw constellation geometry to network inputs.
///
/// Relative positions are divided by the constellation radius, the central
/// scale becomes `(ln(scale) - log_scale_offset) / log_scale_divisor`, and
/// all orientations are divided by `orientation_divisor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConstants {
    pub orientation_divisor: f64,
    pub log_scale_offset: f64,
    pub log_scale_divisor: f64,
}

impl Default for NormConstants {
    fn default() -> Self {
        Self {
            orientation_divisor: PI,
            log_scale_offset: 0.0,
            log_scale_divisor: 1.0,
        }
    }
}

impl NormConstants {
    /// Centres the log-scale channel on the mean over `constellations`.
    pub fn fitted<'a>(constellations: impl IntoIterator<Item = &'a Constellation>) -> Self {
        let (sum, n) = constellations
            .into_iter()
            .fold((0.0, 0usize), |(s, n), c| (s + c.central.scale.ln(), n + 1));
        let mut out = Self::default();
        if n > 0 {
            out.log_scale_offset = sum / n as f64;
        }
        out
    }

    pub fn central_geometry(&self, c: &Constellation) -> [f64; CENTRAL_GEOMETRY] {
        [
            (c.central.scale.ln() - self.log_scale_offset) / self.log_scale_divisor,
            c.central.orientation / self.orientation_divisor,
        ]
    }

    /// Normalized geometry of every neighbour, in constellation order.
    pub fn neighbor_geometry(&self, c: &Constellation) -> Vec<[f64; NEIGHBOR_GEOMETRY]> {
        let r = c.radius();
        let r = if r > 0.0 { r } else { 1.0 };
        c.neighbors
            .iter()
            .map(|n| {
                [
                    n.rel_x / r,
                    n.rel_y / r,
                    n.rel_scale,
                    n.rel_orientation / self.orientation_divisor,
                ]
            })
            .collect()
    }
}

/// Indices of the `k` keypoints nearest to `central_index`, nearest first.
pub fn find_k_nearest(frame: &Keyframe, central_index: usize, k: usize) -> Result<Vec<usize>> {
    let n = frame.keypoints.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if central_index >= n {
        return Err(Error::InvalidArgument(format!(
            "central index {central_index} out of range for {n} keypoints"
        )));
    }
    if n <= k {
        return Err(Error::InsufficientKeypoints { available: n, k });
    }
    let c = &frame.keypoints[central_index];
    let mut order: Vec<(f64, usize)> = frame
        .keypoints
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != central_index)
        .map(|(i, kp)| ((kp.x - c.x).hypot(kp.y - c.y), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(order.into_iter().take(k).map(|(_, i)| i).collect())
}

/// `(rel_x, rel_y, rel_scale, rel_orientation)` of `neighbor` seen from `central`.
pub fn relative_geometry(central: &Keypoint, neighbor: &Keypoint) -> (f64, f64, f64, f64) {
    (
        neighbor.x - central.x,
        neighbor.y - central.y,
        (neighbor.scale / central.scale).ln(),
        wrap_angle(neighbor.orientation - central.orientation),
    )
}

pub fn build_constellation(frame: &Keyframe, central_index: usize, k: usize) -> Result<Constellation> {
    let nearest = find_k_nearest(frame, central_index, k)?;
    let central = &frame.keypoints[central_index];
    let neighbors = nearest
        .into_iter()
        .map(|i| {
            let kp = &frame.keypoints[i];
            let (rel_x, rel_y, rel_scale, rel_orientation) = relative_geometry(central, kp);
            NeighborFeature {
                keypoint_index: i,
                descriptor: kp.descriptor,
                rel_x,
                rel_y,
                rel_scale,
                rel_orientation,
            }
        })
        .collect();
    Ok(Constellation {
        central: central.clone(),
        central_index,
        neighbors,
    })
}

/// Every constellation a frame supports, one per keypoint. Frames with `≤ k`
/// keypoints yield nothing.
pub fn frame_constellations(frame: &Keyframe, k: usize) -> Result<Vec<Constellation>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if frame.keypoints.len() <= k {
        return Ok(Vec::new());
    }
    (0..frame.keypoints.len())
        .map(|i| build_constellation(frame, i, k))
        .collect()
}

/// Flat input length for `k` neighbours.
pub const fn input_len(k: usize) -> usize {
    (DESCRIPTOR_BITS + CENTRAL_GEOMETRY) + k * (DESCRIPTOR_BITS + NEIGHBOR_GEOMETRY)
}

/// Flattens a constellation: central descriptor, central scale and orientation,
/// then per neighbour its descriptor followed by the four relative-geometry
/// channels. Geometry is normalized with `norm`.
pub fn assemble_input(c: &Constellation, norm: &NormConstants) -> Vec<f64> {
    let mut out = vec![0.0; input_len(c.k())];
    write_descriptor_reals(&c.central.descriptor, &mut out[..DESCRIPTOR_BITS]);
    let cg = norm.central_geometry(c);
    out[DESCRIPTOR_BITS..DESCRIPTOR_BITS + CENTRAL_GEOMETRY].copy_from_slice(&cg);
    let mut off = DESCRIPTOR_BITS + CENTRAL_GEOMETRY;
    for (n, g) in c.neighbors.iter().zip(norm.neighbor_geometry(c)) {
        write_descriptor_reals(&n.descriptor, &mut out[off..off + DESCRIPTOR_BITS]);
        off += DESCRIPTOR_BITS;
        out[off..off + NEIGHBOR_GEOMETRY].copy_from_slice(&g);
        off += NEIGHBOR_GEOMETRY;
    }
    out
}
