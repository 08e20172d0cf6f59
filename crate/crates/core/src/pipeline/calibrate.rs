//! Per-layer calibration driver and its inverse check, `evaluate`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::perm::{apply_perm_cols, Permutation};
use crate::quant::QuantConfig;
use crate::reorder::{select_permutation, LayerErrorEval, LayerSpec, Predecessor};
use crate::stats::group_rho;
use crate::transforms::{
    fold_perm_into_norm, fold_perm_into_prev_linear, fold_perm_into_weight, hadamard_cols,
    hadamard_layer, hadamard_rows, HadamardConfig, Modulation, NormSpec, DEFAULT_EPS,
};

use super::manifest::{LayerEntry, LoadedLayer, Manifest};
use super::report::{
    CalibrationReport, Candidate, FoldTarget, LayerCalibration, LayerRecord, LayerStatus,
    ReportConfig,
};
use super::tensor_io::{save_tensor, DType};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateOptions {
    pub quant: QuantConfig,
    /// Acceptance threshold in percent.
    pub tau_percent: f64,
    pub alpha_grid: Vec<f64>,
    pub hadamard: bool,
    pub seed: u64,
    /// Worker threads; `None` uses the rayon default.
    pub jobs: Option<usize>,
    /// Where folded weights and norm parameters are written, if anywhere.
    pub artifacts_dir: Option<PathBuf>,
}

impl CalibrateOptions {
    pub fn tau(&self) -> f64 {
        self.tau_percent / 100.0
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau_percent >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tau must be >= 0, got {}",
                self.tau_percent
            )));
        }
        if self.alpha_grid.is_empty() {
            return Err(Error::Empty("alpha grid"));
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidConfig(format!("alpha {a} outside [0, 1]")));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidConfig("jobs must be positive".into()));
        }
        Ok(())
    }
}

/// The layer as the quantizer sees it: in the Hadamard basis when enabled.
fn working_layer(spec: &LayerSpec, hadamard: bool) -> Result<(LayerSpec, Option<HadamardConfig>)> {
    if hadamard {
        let hcfg = HadamardConfig::for_dim(spec.d_in())?;
        Ok((hadamard_layer(spec, &hcfg)?, Some(hcfg)))
    } else {
        Ok((spec.clone(), None))
    }
}

fn fold_target(pred: Predecessor, accepted: bool, hadamard: bool) -> FoldTarget {
    match (accepted, pred, hadamard) {
        (false, _, _) => FoldTarget::Identity,
        (true, Predecessor::Linear, _) => FoldTarget::PrevLinearColumns,
        (true, _, true) => FoldTarget::HadamardOutputLayout,
        (true, Predecessor::Rmsnorm, false) => FoldTarget::RmsnormGamma,
        (true, Predecessor::LayernormModulated, false) => FoldTarget::LayernormModulation,
        (true, Predecessor::None, false) => FoldTarget::InputGather,
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn row_vector(v: Vec<f64>) -> Matrix {
    Matrix::new(1, v.len(), v).expect("finite parameters")
}

/// Writes the deployed weight and any folded activation-side parameters.
fn write_artifacts(
    dir: &Path,
    name: &str,
    loaded: &LoadedLayer,
    hcfg: Option<&HadamardConfig>,
    perm: &Permutation,
    fold: FoldTarget,
) -> Result<Vec<PathBuf>> {
    let stem = file_stem(name);
    let mut written = Vec::new();
    let mut save = |suffix: &str, m: &Matrix| -> Result<()> {
        let file = PathBuf::from(format!("{stem}.{suffix}.pqt"));
        save_tensor(dir.join(&file), m, DType::F64)?;
        written.push(file);
        Ok(())
    };

    let weight = match hcfg {
        Some(h) => hadamard_cols(&loaded.spec.weight, h)?,
        None => loaded.spec.weight.clone(),
    };
    save("weight", &fold_perm_into_weight(&weight, perm)?)?;

    if loaded.spec.predecessor == Predecessor::Linear && (fold != FoldTarget::Identity || hcfg.is_some()) {
        if let Some(prev) = &loaded.prev_weight {
            // The transform folds into the preceding linear as well: W_prev H P.
            let prev = match hcfg {
                Some(h) => hadamard_rows(prev, h)?,
                None => prev.clone(),
            };
            save("prev_weight", &fold_perm_into_prev_linear(&prev, perm)?)?;
        }
    }

    match fold {
        FoldTarget::RmsnormGamma => {
            if let Some(gamma) = &loaded.gamma {
                let spec = fold_perm_into_norm(&NormSpec::rmsnorm(gamma.clone(), DEFAULT_EPS)?, perm)?;
                save("gamma", &row_vector(spec.gamma.expect("rmsnorm keeps gamma")))?;
            }
        }
        FoldTarget::LayernormModulation => {
            if let Some((scale, shift)) = &loaded.modulation {
                let spec = NormSpec::layernorm(
                    Some(Modulation {
                        scale: scale.clone(),
                        shift: shift.clone(),
                    }),
                    DEFAULT_EPS,
                )?;
                let m = fold_perm_into_norm(&spec, perm)?
                    .modulation
                    .expect("modulation kept");
                save("mod_scale", &row_vector(m.scale))?;
                save("mod_shift", &row_vector(m.shift))?;
            }
        }
        FoldTarget::Identity
        | FoldTarget::PrevLinearColumns
        | FoldTarget::HadamardOutputLayout
        | FoldTarget::InputGather => {}
    }
    Ok(written)
}

fn calibrate_layer(
    manifest: &Manifest,
    entry: &LayerEntry,
    opts: &CalibrateOptions,
) -> Result<LayerCalibration> {
    let loaded = manifest.load_layer(entry)?;
    let grouping = opts.quant.grouping(loaded.spec.d_in())?;
    let (working, hcfg) = working_layer(&loaded.spec, opts.hadamard)?;
    let decision = select_permutation(&working, &opts.quant, &opts.alpha_grid, opts.tau())?;
    let rho = group_rho(&apply_perm_cols(&working.calib_acts, &decision.perm)?, grouping)?;
    let fold = fold_target(entry.predecessor, decision.accepted, opts.hadamard);
    let artifacts = match &opts.artifacts_dir {
        Some(dir) => write_artifacts(dir, &entry.name, &loaded, hcfg.as_ref(), &decision.perm, fold)?,
        None => Vec::new(),
    };
    Ok(LayerCalibration {
        d_in: working.d_in(),
        d_out: working.weight.cols(),
        tokens: working.calib_acts.rows(),
        hadamard_block: hcfg.map_or(0, |h| h.block()),
        alpha: decision.alpha,
        accepted: decision.accepted,
        e_orig: decision.e_orig,
        e_reorder: decision.e_reorder,
        e_deployed: decision.deployed_error(),
        rel_improvement: decision.rel_improvement,
        fold,
        perm: decision.perm.forward().to_vec(),
        candidates: decision
            .candidates
            .iter()
            .map(|&(alpha, error)| Candidate { alpha, error })
            .collect(),
        rho,
        artifacts,
    })
}

/// Runs permutation selection on every manifest layer. Layers that fail
/// (unreadable tensors, a group size that does not divide `d_in`, ...) are
/// recorded as skipped; only invalid options fail the whole run.
pub fn calibrate(manifest: &Manifest, opts: &CalibrateOptions) -> Result<CalibrationReport> {
    opts.validate()?;
    if let Some(dir) = &opts.artifacts_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let run = || -> Vec<LayerRecord> {
        manifest
            .layers
            .par_iter()
            .map(|entry| {
                let (status, error, calibration) = match calibrate_layer(manifest, entry, opts) {
                    Ok(c) => (LayerStatus::Ok, None, Some(c)),
                    Err(e) => (LayerStatus::Skipped, Some(e.to_string()), None),
                };
                LayerRecord {
                    name: entry.name.clone(),
                    status,
                    error,
                    predecessor: entry.predecessor,
                    calibration,
                }
            })
            .collect()
    };
    let layers = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(run),
        None => run(),
    };
    Ok(CalibrationReport {
        config: ReportConfig {
            bits: opts.quant.bits,
            group_size: opts.quant.group_size,
            tau_percent: opts.tau_percent,
            tau: opts.tau(),
            alpha_grid: opts.alpha_grid.clone(),
            hadamard: opts.hadamard,
            seed: opts.seed,
        },
        summary: CalibrationReport::summarize(&layers),
        layers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    /// Recomputed error with the original channel order.
    pub e_orig: f64,
    /// Recomputed error with the report's deployed permutation.
    pub e_deployed: f64,
    pub stored_e_deployed: f64,
    pub rel_diff: f64,
}

impl EvalRow {
    pub fn matches(&self, rel_tol: f64) -> bool {
        self.rel_diff <= rel_tol
    }
}

/// Re-measures every calibrated layer of `report` against the manifest's
/// tensors.
pub fn evaluate(manifest: &Manifest, report: &CalibrationReport) -> Result<Vec<EvalRow>> {
    let quant = QuantConfig::new(report.config.bits, report.config.group_size)?;
    report
        .layers
        .iter()
        .filter_map(|rec| rec.calibration.as_ref().map(|c| (rec, c)))
        .map(|(rec, cal)| {
            let entry = manifest
                .get(&rec.name)
                .ok_or_else(|| Error::Report(format!("layer {:?} not in manifest", rec.name)))?;
            let loaded = manifest.load_layer(entry)?;
            if cal.perm.len() != loaded.spec.d_in() {
                return Err(Error::Report(format!(
                    "layer {:?}: stale permutation of length {} for {} channels",
                    rec.name,
                    cal.perm.len(),
                    loaded.spec.d_in()
                )));
            }
            let perm = Permutation::new(cal.perm.clone())?;
            let (working, _) = working_layer(&loaded.spec, report.config.hadamard)?;
            let eval = LayerErrorEval::new(&working, &quant)?;
            let e_orig = eval.error(&Permutation::identity(working.d_in()))?;
            let e_deployed = eval.error(&perm)?;
            let scale = cal.e_deployed.abs().max(f64::MIN_POSITIVE);
            Ok(EvalRow {
                name: rec.name.clone(),
                e_orig,
                e_deployed,
                stored_e_deployed: cal.e_deployed,
                rel_diff: if e_deployed == cal.e_deployed {
                    0.0
                } else {
                    (e_deployed - cal.e_deployed).abs() / scale
                },
            })
        })
        .collect()
}
