//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. One file may carry
//! keys for several subcommands; each subcommand reads the keys it knows.
//! Unknown keys are rejected so typos surface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::WorldConfig;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Every key any subcommand understands.
pub const KNOWN_KEYS: &[&str] = &[
    // training
    "margin",
    "batch_size",
    "pos_fraction",
    "learning_rate",
    "epochs",
    "seed",
    "k",
    "steps_per_epoch",
    "val_samples",
    // world generation
    "n_landmarks",
    "world_extent",
    "n_frames",
    "trajectory",
    "orbit_radius",
    "step",
    "image_width",
    "image_height",
    "fx",
    "fy",
    "cx",
    "cy",
    "descriptor_noise",
    "unlinked_fraction",
    "duplicate_descriptor_groups",
    "duplicate_group_size",
    "base_scale",
    "orientation_jitter",
    "quantize",
    "train_fraction",
    // evaluation
    "n_samples",
    "ratio_threshold",
    "mode",
    "epipolar_threshold_px",
    "ransac_iterations",
    "ransac_threshold",
    "ransac_confidence",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    pub path: Option<PathBuf>,
    /// Value and 1-based line number per key.
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self> {
        let file = path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<config>"));
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                file: file.clone(),
                line: i + 1,
                message,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(err(format!("unknown key {key:?}")));
            }
            if value.is_empty() {
                return Err(err(format!("missing value for {key:?}")));
            }
            if entries.insert(key.to_string(), (value.to_string(), i + 1)).is_some() {
                return Err(err(format!("duplicate key {key:?}")));
            }
        }
        Ok(Self {
            path: path.map(Path::to_path_buf),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, Some(path))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    /// Parsed value of `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some((value, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        value.parse::<T>().map(Some).map_err(|_| Error::Parse {
            file: self.path.clone().unwrap_or_else(|| PathBuf::from("<config>")),
            line: *line,
            message: format!("invalid value {value:?} for {key:?}"),
        })
    }

    fn set<T: FromStr>(&self, key: &str, target: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *target = v;
        }
        Ok(())
    }

    pub fn apply_train(&self, c: &mut TrainConfig) -> Result<()> {
        self.set("margin", &mut c.margin)?;
        self.set("batch_size", &mut c.batch_size)?;
        self.set("pos_fraction", &mut c.pos_fraction)?;
        self.set("learning_rate", &mut c.learning_rate)?;
        self.set("epochs", &mut c.epochs)?;
        self.set("seed", &mut c.seed)?;
        self.set("k", &mut c.k)?;
        self.set("steps_per_epoch", &mut c.steps_per_epoch)?;
        self.set("val_samples", &mut c.val_samples)
    }

    pub fn apply_world(&self, c: &mut WorldConfig) -> Result<()> {
        self.set("n_landmarks", &mut c.n_landmarks)?;
        self.set("world_extent", &mut c.world_extent)?;
        self.set("n_frames", &mut c.n_frames)?;
        self.set("trajectory", &mut c.trajectory)?;
        self.set("orbit_radius", &mut c.orbit_radius)?;
        self.set("step", &mut c.step)?;
        self.set("image_width", &mut c.image_width)?;
        self.set("image_height", &mut c.image_height)?;
        self.set("fx", &mut c.intrinsics.fx)?;
        self.set("fy", &mut c.intrinsics.fy)?;
        self.set("cx", &mut c.intrinsics.cx)?;
        self.set("cy", &mut c.intrinsics.cy)?;
        self.set("descriptor_noise", &mut c.descriptor_noise)?;
        self.set("unlinked_fraction", &mut c.unlinked_fraction)?;
        self.set("duplicate_descriptor_groups", &mut c.duplicate_descriptor_groups)?;
        self.set("duplicate_group_size", &mut c.duplicate_group_size)?;
        self.set("base_scale", &mut c.base_scale)?;
        self.set("orientation_jitter", &mut c.orientation_jitter)?;
        self.set("quantize", &mut c.quantize)?;
        self.set("seed", &mut c.seed)
    }
}
