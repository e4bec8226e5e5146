//! Dataset manifest: one JSON file listing every image with its metadata.
//! Relative paths are resolved against the manifest's directory.

use anyhow::{bail, Context as _, Result};
use cone_mosaic::density::{ImageMeta, Modality, DEFAULT_SCALING_FACTOR, MAX_ECCENTRICITY_DEG};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub participant: String,
    pub modality: Modality,
    pub eccentricity_deg: f64,
    pub microns_per_pixel: f64,
    #[serde(default = "default_scaling_factor")]
    pub scaling_factor: f64,
    pub width: usize,
    pub height: usize,
    /// Instance label map (16-bit PNG or PGM); the prediction in `evaluate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<PathBuf>,
    /// Cone centres, `x_px,y_px[,label]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<PathBuf>,
    /// Reference label map for `evaluate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    /// Synthetic ground-truth sidecar written by `synth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

fn default_scaling_factor() -> f64 {
    DEFAULT_SCALING_FACTOR
}

impl Record {
    pub fn meta(&self) -> ImageMeta {
        ImageMeta {
            participant_id: self.participant.clone(),
            modality: self.modality,
            eccentricity_deg: self.eccentricity_deg,
            microns_per_pixel: self.microns_per_pixel,
            scaling_factor: self.scaling_factor,
            width: self.width,
            height: self.height,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            bail!("record id is empty");
        }
        if self.participant.is_empty() {
            bail!("participant is empty");
        }
        if !(self.eccentricity_deg.abs() <= MAX_ECCENTRICITY_DEG) {
            bail!("eccentricity {}° outside ±{MAX_ECCENTRICITY_DEG}°", self.eccentricity_deg);
        }
        if !(self.microns_per_pixel > 0.0 && self.microns_per_pixel.is_finite()) {
            bail!("microns_per_pixel must be positive");
        }
        if !(self.scaling_factor > 0.0 && self.scaling_factor.is_finite()) {
            bail!("scaling_factor must be positive");
        }
        if self.width == 0 || self.height == 0 {
            bail!("width and height must be positive");
        }
        Ok(())
    }
}

pub struct LoadedManifest {
    pub base: PathBuf,
    pub manifest: Manifest,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let mut ids = BTreeSet::new();
        for r in &manifest.records {
            r.validate().with_context(|| format!("record {:?}", r.id))?;
            if !ids.insert(r.id.as_str()) {
                bail!("duplicate record id {:?}", r.id);
            }
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedManifest { base, manifest })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Resolves a required path field, naming it when absent or missing on disk.
    pub fn require(&self, field: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        let p = field.as_ref().with_context(|| format!("no {name} given"))?;
        let full = self.resolve(p);
        if !full.is_file() {
            bail!("{name} {} does not exist", full.display());
        }
        Ok(full)
    }
}

pub fn save(manifest: &Manifest, path: &Path) -> Result<()> {
    crate::output::write_json(path, manifest)
}
