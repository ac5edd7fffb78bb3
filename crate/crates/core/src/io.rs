//! Dataset persistence.
//!
//! # Binary container
//!
//! All integers and floats little-endian.
//!
//! ```text
//! magic       7 bytes  "SCONED1"
//! has_K       u8       dataset-wide intrinsics present (0/1)
//! K           4 × f64  fx fy cx cy (zeros when absent)
//! n_landmarks u64
//! n_frames    u64
//! landmark    n_landmarks × { id u64, x y z f64 }
//! frame       n_frames × {
//!               frame_id i64, flags u8 (bit 0 pose, bit 1 intrinsics),
//!               R 9 × f64 row-major, t 3 × f64, K 4 × f64,
//!               n_keypoints u64,
//!               keypoint n_keypoints × {
//!                 x y scale orientation f64, descriptor 64 bytes,
//!                 has_landmark u8, landmark_id u64 } }
//! ```
//!
//! Descriptors are eight little-endian `u64` words; bit 0 is the lowest bit
//! of word 0.
//!
//! # Plain-text features
//!
//! A directory with one file per frame named `<anything>_<frame_id>.txt` (or
//! `<frame_id>.txt`), one keypoint per line:
//! `x y scale orientation hex512 [landmark_id]`, where `hex512` is the 128
//! hex characters of the 64 descriptor bytes above. Optional side files:
//! `poses.txt` (`frame_id` followed by the 12 row-major entries of `[R|t]`),
//! `intrinsics.txt` (`fx fy cx cy`) and `landmarks.txt` (`id x y z`).
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::model::{
    wrap_angle, BinaryDescriptor, CameraIntrinsics, CameraPose, Dataset, Keyframe, Keypoint, Landmark,
    DESCRIPTOR_BYTES,
};

const MAGIC_PREFIX: &[u8; 6] = b"SCONED";
const VERSION: u8 = b'1';
const SIDE_FILES: [&str; 3] = ["poses.txt", "intrinsics.txt", "landmarks.txt"];

/// Ran out of input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Eof;

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], Eof> {
        if self.remaining() < n {
            return Err(Eof);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], Eof> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> std::result::Result<u8, Eof> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> std::result::Result<u32, Eof> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> std::result::Result<u64, Eof> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> std::result::Result<i64, Eof> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> std::result::Result<f64, Eof> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_intrinsics(out: &mut Vec<u8>, k: Option<&CameraIntrinsics>) {
    match k {
        Some(k) => put_f64s(out, &[k.fx, k.fy, k.cx, k.cy]),
        None => put_f64s(out, &[0.0; 4]),
    }
}

pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + ds.keypoint_count() * 105);
    out.extend_from_slice(MAGIC_PREFIX);
    out.push(VERSION);
    out.push(u8::from(ds.intrinsics.is_some()));
    put_intrinsics(&mut out, ds.intrinsics.as_ref());
    out.extend_from_slice(&(ds.landmarks.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.frames.len() as u64).to_le_bytes());
    for lm in &ds.landmarks {
        out.extend_from_slice(&lm.landmark_id.to_le_bytes());
        put_f64s(&mut out, lm.position.as_slice());
    }
    for f in &ds.frames {
        out.extend_from_slice(&f.frame_id.to_le_bytes());
        let flags = u8::from(f.pose.is_some()) | (u8::from(f.intrinsics.is_some()) << 1);
        out.push(flags);
        let pose = f.pose.unwrap_or(CameraPose {
            rotation: Matrix3::zeros(),
            translation: Vector3::zeros(),
        });
        for r in 0..3 {
            for c in 0..3 {
                put_f64s(&mut out, &[pose.rotation[(r, c)]]);
            }
        }
        put_f64s(&mut out, pose.translation.as_slice());
        put_intrinsics(&mut out, f.intrinsics.as_ref());
        out.extend_from_slice(&(f.keypoints.len() as u64).to_le_bytes());
        for kp in &f.keypoints {
            put_f64s(&mut out, &[kp.x, kp.y, kp.scale, kp.orientation]);
            out.extend_from_slice(&kp.descriptor.to_le_bytes());
            out.push(u8::from(kp.landmark_id.is_some()));
            out.extend_from_slice(&kp.landmark_id.unwrap_or(0).to_le_bytes());
        }
    }
    out
}

/// Reads one record. Running dry before its first byte means the header
/// promised more records than the body holds.
fn record<'a, T>(
    r: &mut ByteReader<'a>,
    what: &str,
    read: impl FnOnce(&mut ByteReader<'a>) -> std::result::Result<T, Eof>,
) -> Result<T> {
    if r.remaining() == 0 {
        return Err(Error::CountMismatch(format!("header declares more {what} than the body contains")));
    }
    read(r).map_err(|_| Error::CorruptFile(format!("truncated {what} record")))
}

fn read_intrinsics(r: &mut ByteReader<'_>) -> std::result::Result<CameraIntrinsics, Eof> {
    Ok(CameraIntrinsics {
        fx: r.f64()?,
        fy: r.f64()?,
        cx: r.f64()?,
        cy: r.f64()?,
    })
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(7).map_err(|_| Error::CorruptFile("missing magic".into()))?;
    if &magic[..6] != MAGIC_PREFIX {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    if magic[6] != VERSION {
        return Err(Error::VersionMismatch {
            expected: "SCONED1".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let truncated = |_| Error::CorruptFile("truncated header".into());
    let has_k = r.u8().map_err(truncated)? != 0;
    let k = read_intrinsics(&mut r).map_err(truncated)?;
    let n_landmarks = r.u64().map_err(truncated)?;
    let n_frames = r.u64().map_err(truncated)?;

    let mut landmarks = Vec::new();
    for _ in 0..n_landmarks {
        landmarks.push(record(&mut r, "landmarks", |r| {
            Ok(Landmark {
                landmark_id: r.u64()?,
                position: Vector3::new(r.f64()?, r.f64()?, r.f64()?),
            })
        })?);
    }
    let mut frames = Vec::new();
    for _ in 0..n_frames {
        let (frame_id, flags, rot, t, fk, n_kp) = record(&mut r, "frames", |r| {
            let id = r.i64()?;
            let flags = r.u8()?;
            let mut rot = Matrix3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    rot[(i, j)] = r.f64()?;
                }
            }
            let t = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
            let fk = read_intrinsics(r)?;
            Ok((id, flags, rot, t, fk, r.u64()?))
        })?;
        let mut keypoints = Vec::new();
        for _ in 0..n_kp {
            keypoints.push(record(&mut r, "keypoints", |r| {
                let (x, y, scale, orientation) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let d: [u8; DESCRIPTOR_BYTES] = r.array()?;
                let has = r.u8()? != 0;
                let id = r.u64()?;
                Ok(Keypoint {
                    x,
                    y,
                    scale,
                    orientation,
                    descriptor: BinaryDescriptor::from_le_bytes(&d),
                    landmark_id: has.then_some(id),
                })
            })?);
        }
        frames.push(Keyframe {
            frame_id,
            keypoints,
            pose: (flags & 1 != 0).then(|| CameraPose::new(rot, t)),
            intrinsics: (flags & 2 != 0).then_some(fk),
        });
    }
    if r.remaining() != 0 {
        return Err(Error::CountMismatch(format!(
            "{} bytes follow the records declared in the header",
            r.remaining()
        )));
    }
    Ok(Dataset {
        intrinsics: has_k.then_some(k),
        landmarks,
        frames,
    })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset_to_bytes(ds))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&fs::read(path)?)
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn numbers(file: &Path, line_no: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| parse_err(file, line_no, format!("not a number: {s:?}")))
        })
        .collect()
}

/// Non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn frame_id_from_path(path: &Path) -> Option<i64> {
    let stem = path.file_stem()?.to_str()?;
    let tail = stem.rsplit('_').next()?;
    tail.parse().ok()
}

fn parse_frame_file(path: &Path) -> Result<Vec<Keypoint>> {
    let text = fs::read_to_string(path)?;
    let mut keypoints = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 5 or 6 fields, found {}", fields.len()),
            ));
        }
        let v = numbers(path, line_no, &fields[..4])?;
        let hex_field = fields[4];
        if hex_field.len() != 2 * DESCRIPTOR_BYTES {
            return Err(parse_err(
                path,
                line_no,
                format!("descriptor must be {} hex characters, found {}", 2 * DESCRIPTOR_BYTES, hex_field.len()),
            ));
        }
        let mut bytes = [0u8; DESCRIPTOR_BYTES];
        hex::decode_to_slice(hex_field, &mut bytes)
            .map_err(|e| parse_err(path, line_no, format!("bad descriptor hex: {e}")))?;
        let landmark_id = match fields.get(5) {
            Some(s) => Some(
                s.parse::<u64>()
                    .map_err(|_| parse_err(path, line_no, format!("bad landmark id {s:?}")))?,
            ),
            None => None,
        };
        if !(v[2] > 0.0) {
            return Err(parse_err(path, line_no, format!("scale must be positive, found {}", v[2])));
        }
        let orientation = wrap_angle(v[3]);
        if orientation != v[3] {
            log::warn!(
                "{}:{line_no}: orientation {} wrapped to {orientation}",
                path.display(),
                v[3]
            );
        }
        keypoints.push(Keypoint {
            x: v[0],
            y: v[1],
            scale: v[2],
            orientation,
            descriptor: BinaryDescriptor::from_le_bytes(&bytes),
            landmark_id,
        });
    }
    Ok(keypoints)
}

/// Parses a directory of per-frame keypoint files (see module docs).
pub fn import_plain_features(dir: &Path) -> Result<Dataset> {
    let mut frame_files: Vec<(i64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") || SIDE_FILES.contains(&name) {
            continue;
        }
        let id = frame_id_from_path(&path)
            .ok_or_else(|| parse_err(&path, 0, "file name does not end in a frame id"))?;
        frame_files.push((id, path));
    }
    frame_files.sort();
    if let Some(w) = frame_files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(parse_err(&w[1].1, 0, format!("duplicate frame id {}", w[1].0)));
    }

    let intrinsics = {
        let p = dir.join("intrinsics.txt");
        if p.exists() {
            let text = fs::read_to_string(&p)?;
            let (line_no, line) = content_lines(&text)
                .next()
                .ok_or_else(|| parse_err(&p, 1, "empty intrinsics file"))?;
            let v = numbers(&p, line_no, &line.split_whitespace().collect::<Vec<_>>())?;
            if v.len() != 4 {
                return Err(parse_err(&p, line_no, "expected fx fy cx cy"));
            }
            Some(CameraIntrinsics {
                fx: v[0],
                fy: v[1],
                cx: v[2],
                cy: v[3],
            })
        } else {
            None
        }
    };

    let mut poses: BTreeMap<i64, CameraPose> = BTreeMap::new();
    let pose_path = dir.join("poses.txt");
    if pose_path.exists() {
        let text = fs::read_to_string(&pose_path)?;
        for (line_no, line) in content_lines(&text) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 13 {
                return Err(parse_err(&pose_path, line_no, "expected frame_id and 12 pose entries"));
            }
            let id: i64 = fields[0]
                .parse()
                .map_err(|_| parse_err(&pose_path, line_no, "bad frame id"))?;
            let v = numbers(&pose_path, line_no, &fields[1..])?;
            let rot = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
            poses.insert(id, CameraPose::new(rot, Vector3::new(v[3], v[7], v[11])));
        }
    }

    let mut landmarks: BTreeMap<u64, Vector3<f64>> = BTreeMap::new();
    let lm_path = dir.join("landmarks.txt");
    if lm_path.exists() {
        let text = fs::read_to_string(&lm_path)?;
        for (line_no, line) in content_lines(&text) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(parse_err(&lm_path, line_no, "expected id x y z"));
            }
            let id: u64 = fields[0]
                .parse()
                .map_err(|_| parse_err(&lm_path, line_no, "bad landmark id"))?;
            let v = numbers(&lm_path, line_no, &fields[1..])?;
            landmarks.insert(id, Vector3::new(v[0], v[1], v[2]));
        }
    }

    let mut frames = Vec::with_capacity(frame_files.len());
    for (id, path) in frame_files {
        let keypoints = parse_frame_file(&path)?;
        for kp in &keypoints {
            if let Some(l) = kp.landmark_id {
                // referenced but unlocated landmarks get an unknown position
                landmarks.entry(l).or_insert_with(|| Vector3::repeat(f64::NAN));
            }
        }
        frames.push(Keyframe {
            frame_id: id,
            keypoints,
            pose: poses.get(&id).copied(),
            intrinsics: None,
        });
    }
    Ok(Dataset {
        intrinsics,
        landmarks: landmarks
            .into_iter()
            .map(|(landmark_id, position)| Landmark { landmark_id, position })
            .collect(),
        frames,
    })
}

/// Writes the plain-text layout read by [`import_plain_features`].
/// Per-frame intrinsics are not representable and are dropped.
pub fn export_plain_features(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in &ds.frames {
        let mut s = String::new();
        for kp in &f.keypoints {
            write!(
                s,
                "{} {} {} {} {}",
                kp.x,
                kp.y,
                kp.scale,
                kp.orientation,
                hex::encode(kp.descriptor.to_le_bytes())
            )
            .expect("string write");
            if let Some(id) = kp.landmark_id {
                write!(s, " {id}").expect("string write");
            }
            s.push('\n');
        }
        write_atomic(&dir.join(format!("frame_{}.txt", f.frame_id)), s.as_bytes())?;
    }
    if let Some(k) = &ds.intrinsics {
        write_atomic(&dir.join("intrinsics.txt"), format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy).as_bytes())?;
    }
    let mut poses = String::new();
    for f in &ds.frames {
        if let Some(p) = &f.pose {
            let (r, t) = (&p.rotation, &p.translation);
            writeln!(
                poses,
                "{} {} {} {} {} {} {} {} {} {} {} {} {}",
                f.frame_id,
                r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
                r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
                r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2]
            )
            .expect("string write");
        }
    }
    if !poses.is_empty() {
        write_atomic(&dir.join("poses.txt"), poses.as_bytes())?;
    }
    let mut lms = String::new();
    for lm in &ds.landmarks {
        writeln!(lms, "{} {} {} {}", lm.landmark_id, lm.position[0], lm.position[1], lm.position[2])
            .expect("string write");
    }
    if !lms.is_empty() {
        write_atomic(&dir.join("landmarks.txt"), lms.as_bytes())?;
    }
    Ok(())
}
