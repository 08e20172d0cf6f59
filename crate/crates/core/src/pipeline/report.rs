//! Calibration report, serialized as TOML.
//!
//! The `[config]` table echoes the run settings, `[summary]` holds totals and
//! the acceptance rate, and one `[[layer]]` record follows per manifest layer
//! in manifest order. Floats are written in shortest round-trip form, so the
//! report parses back to identical values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reorder::Predecessor;
use crate::stats::ExtremalDiagnostics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub bits: u32,
    pub group_size: usize,
    /// Threshold as given on the command line, in percent.
    pub tau_percent: f64,
    /// Threshold as a fraction, compared against the relative improvement.
    pub tau: f64,
    pub alpha_grid: Vec<f64>,
    pub hadamard: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub layers: usize,
    pub calibrated: usize,
    pub skipped: usize,
    pub accepted: usize,
    /// Accepted layers over all manifest layers.
    pub acceptance_rate: f64,
    pub total_e_orig: f64,
    pub total_e_deployed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerStatus {
    Ok,
    Skipped,
}

/// Where the activation-side permutation ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldTarget {
    /// Nothing to fold: the permutation was rejected.
    Identity,
    PrevLinearColumns,
    RmsnormGamma,
    LayernormModulation,
    /// Written in permuted order by the Hadamard transform that precedes the
    /// layer.
    HadamardOutputLayout,
    /// No foldable predecessor; the permutation is a gather at load time.
    InputGather,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub alpha: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub status: LayerStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub predecessor: Predecessor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<LayerCalibration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCalibration {
    pub d_in: usize,
    pub d_out: usize,
    pub tokens: usize,
    /// Hadamard block size, 0 when the transform is off.
    pub hadamard_block: usize,
    pub alpha: f64,
    pub accepted: bool,
    pub e_orig: f64,
    pub e_reorder: f64,
    pub e_deployed: f64,
    pub rel_improvement: f64,
    pub fold: FoldTarget,
    /// Deployed permutation, `perm[j]` = source channel at position `j`.
    pub perm: Vec<usize>,
    pub candidates: Vec<Candidate>,
    /// Extremal ratios of the activations in deployed channel order.
    pub rho: ExtremalDiagnostics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config: ReportConfig,
    pub summary: ReportSummary,
    #[serde(rename = "layer", default)]
    pub layers: Vec<LayerRecord>,
}

impl CalibrationReport {
    pub fn summarize(layers: &[LayerRecord]) -> ReportSummary {
        let calibrated: Vec<&LayerCalibration> =
            layers.iter().filter_map(|l| l.calibration.as_ref()).collect();
        let accepted = calibrated.iter().filter(|c| c.accepted).count();
        ReportSummary {
            layers: layers.len(),
            calibrated: calibrated.len(),
            skipped: layers.len() - calibrated.len(),
            accepted,
            acceptance_rate: if layers.is_empty() {
                0.0
            } else {
                accepted as f64 / layers.len() as f64
            },
            total_e_orig: calibrated.iter().map(|c| c.e_orig).sum(),
            total_e_deployed: calibrated.iter().map(|c| c.e_deployed).sum(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn layer(&self, name: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(name: &str, accepted: bool, e: (f64, f64)) -> LayerRecord {
        LayerRecord {
            name: name.into(),
            status: LayerStatus::Ok,
            error: None,
            predecessor: Predecessor::Rmsnorm,
            calibration: Some(LayerCalibration {
                d_in: 4,
                d_out: 2,
                tokens: 8,
                hadamard_block: 0,
                alpha: 0.4,
                accepted,
                e_orig: e.0,
                e_reorder: e.1,
                e_deployed: if accepted { e.1 } else { e.0 },
                rel_improvement: (e.0 - e.1) / e.0,
                fold: if accepted {
                    FoldTarget::RmsnormGamma
                } else {
                    FoldTarget::Identity
                },
                perm: if accepted { vec![3, 1, 0, 2] } else { vec![0, 1, 2, 3] },
                candidates: vec![Candidate {
                    alpha: 0.4,
                    error: e.1,
                }],
                rho: ExtremalDiagnostics {
                    rho: vec![0.61, 0.3333333333333333],
                    c_hat: 0.61,
                    degenerate: vec![],
                },
                artifacts: vec![],
            }),
        }
    }

    fn report(layers: Vec<LayerRecord>) -> CalibrationReport {
        CalibrationReport {
            config: ReportConfig {
                bits: 3,
                group_size: 32,
                tau_percent: 0.0,
                tau: 0.0,
                alpha_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                hadamard: false,
                seed: 42,
            },
            summary: CalibrationReport::summarize(&layers),
            layers,
        }
    }

    #[test]
    fn summary_counts() {
        let mut layers = vec![
            record("a", true, (10.0, 8.0)),
            record("b", false, (5.0, 6.0)),
        ];
        layers.push(LayerRecord {
            name: "c".into(),
            status: LayerStatus::Skipped,
            error: Some("invalid grouping".into()),
            predecessor: Predecessor::None,
            calibration: None,
        });
        let s = CalibrationReport::summarize(&layers);
        assert_eq!((s.layers, s.calibrated, s.skipped, s.accepted), (3, 2, 1, 1));
        assert_eq!(s.acceptance_rate, 1.0 / 3.0);
        assert_eq!(s.total_e_orig, 15.0);
        assert_eq!(s.total_e_deployed, 13.0);
    }

    #[test]
    fn header_echoes_config() {
        let text = report(vec![]).to_toml();
        assert!(text.contains("bits = 3"));
        assert!(text.contains("group_size = 32"));
        assert!(text.contains("tau = 0.0"));
        assert!(text.contains("alpha_grid = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]"));
        assert!(text.contains("hadamard = false"));
    }

    proptest! {
        #[test]
        fn round_trips_losslessly(
            e_orig in 1e-300f64..1e300,
            frac in 0.0f64..2.0,
            accepted in any::<bool>(),
        ) {
            let r = report(vec![record("l0", accepted, (e_orig, e_orig * frac))]);
            prop_assert_eq!(CalibrationReport::parse(&r.to_toml()).unwrap(), r);
        }
    }
}
