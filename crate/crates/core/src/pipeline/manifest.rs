//! Calibration manifest: a TOML list of layers and the tensor files that
//! describe them.
//!
//! ```toml
//! [[layer]]
//! name = "blocks.0.mlp.fc1"
//! weight_path = "fc1.weight.pqt"   # d_in x d_out
//! acts_path = "fc1.acts.pqt"       # n x d_in
//! predecessor = "rmsnorm"          # linear | rmsnorm | layernorm_modulated | none
//! gamma_path = "norm.gamma.pqt"    # optional, 1 x d_in
//! ```
//!
//! Optional folding sources: `gamma_path` (rmsnorm scale), `mod_scale_path`
//! and `mod_shift_path` (adaptive layernorm modulation), `prev_weight_path`
//! (preceding linear, `d_prev x d_in`). Relative paths resolve against the
//! manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::reorder::{LayerSpec, Predecessor};

use super::tensor_io::load_tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub weight_path: PathBuf,
    pub acts_path: PathBuf,
    #[serde(default)]
    pub predecessor: Predecessor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mod_scale_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mod_shift_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_weight_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "layer", default)]
    pub layers: Vec<LayerEntry>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Tensors a layer entry points at, loaded and shape-checked.
#[derive(Debug, Clone)]
pub struct LoadedLayer {
    pub spec: LayerSpec,
    pub gamma: Option<Vec<f64>>,
    pub modulation: Option<(Vec<f64>, Vec<f64>)>,
    pub prev_weight: Option<Matrix>,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: Manifest = toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<manifest>"),
            msg: e.to_string(),
        })?;
        manifest.base_dir = base_dir.into();
        manifest.check_names()?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    fn check_names(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate layer name {:?}", layer.name)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn get(&self, name: &str) -> Option<&LayerEntry> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn load_layer(&self, entry: &LayerEntry) -> Result<LoadedLayer> {
        let weight = load_tensor(self.resolve(&entry.weight_path))?;
        let acts = load_tensor(self.resolve(&entry.acts_path))?;
        let spec = LayerSpec::new(weight, acts, entry.predecessor)?;
        let d = spec.d_in();
        let vector = |p: &Option<PathBuf>, what: &str| -> Result<Option<Vec<f64>>> {
            let Some(p) = p else { return Ok(None) };
            let m = load_tensor(self.resolve(p))?;
            if m.rows() != 1 || m.cols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "{what} is {:?}, expected (1, {d})",
                    m.shape()
                )));
            }
            Ok(Some(m.into_data()))
        };
        let gamma = vector(&entry.gamma_path, "gamma")?;
        let modulation = match (
            vector(&entry.mod_scale_path, "modulation scale")?,
            vector(&entry.mod_shift_path, "modulation shift")?,
        ) {
            (Some(s), Some(b)) => Some((s, b)),
            (None, None) => None,
            _ => {
                return Err(Error::Manifest(format!(
                    "layer {:?}: modulation needs both scale and shift",
                    entry.name
                )))
            }
        };
        let prev_weight = entry
            .prev_weight_path
            .as_ref()
            .map(|p| load_tensor(self.resolve(p)))
            .transpose()?;
        if let Some(w) = &prev_weight {
            if w.cols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "prev weight has {} outputs, layer has {d} inputs",
                    w.cols()
                )));
            }
        }
        Ok(LoadedLayer {
            spec,
            gamma,
            modulation,
            prev_weight,
        })
    }
}
