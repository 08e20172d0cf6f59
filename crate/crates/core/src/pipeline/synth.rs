//! Synthetic layers with heavy-tailed channel statistics.
//!
//! Activation channel scales are log-normal with standard deviation `spread`
//! in log space, so a few channels carry most of the energy. Token magnitudes
//! vary log-normally and the per-entry noise is Student-t. Weight rows get
//! their own, milder log-normal scale.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StudentT};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::reorder::{LayerSpec, Predecessor};

use super::manifest::{LayerEntry, Manifest};
use super::tensor_io::{save_tensor, DType};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub d: usize,
    pub d_out: usize,
    pub tokens: usize,
    /// Standard deviation of the log activation channel scale.
    pub spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 128,
            d_out: 32,
            tokens: 128,
            spread: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthLayer {
    pub spec: LayerSpec,
    pub gamma: Option<Vec<f64>>,
    pub modulation: Option<(Vec<f64>, Vec<f64>)>,
    pub prev_weight: Option<Matrix>,
}

const PREDECESSOR_CYCLE: [Predecessor; 4] = [
    Predecessor::Rmsnorm,
    Predecessor::Linear,
    Predecessor::LayernormModulated,
    Predecessor::None,
];

fn lognormal(sigma: f64) -> LogNormal<f64> {
    LogNormal::new(0.0, sigma.max(0.0)).expect("valid lognormal")
}

/// Heavy-tailed activations, `tokens x d`.
pub fn heavy_tailed_acts<R: Rng + ?Sized>(rng: &mut R, tokens: usize, d: usize, spread: f64) -> Matrix {
    let chan = lognormal(spread);
    let scales: Vec<f64> = (0..d).map(|_| chan.sample(rng)).collect();
    let tok = lognormal(0.25);
    let noise = StudentT::new(5.0).expect("valid dof");
    let mut data = Vec::with_capacity(tokens * d);
    for _ in 0..tokens {
        let t = tok.sample(rng);
        data.extend(scales.iter().map(|s| s * t * noise.sample(rng)));
    }
    Matrix::new(tokens, d, data).expect("finite samples")
}

pub fn synth_layer<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig, predecessor: Predecessor) -> SynthLayer {
    let acts = heavy_tailed_acts(rng, cfg.tokens, cfg.d, cfg.spread);
    let row_scale = lognormal(cfg.spread / 2.0);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let inv_sqrt = 1.0 / (cfg.d as f64).sqrt();
    let mut wdata = Vec::with_capacity(cfg.d * cfg.d_out);
    for _ in 0..cfg.d {
        let s = row_scale.sample(rng) * inv_sqrt;
        wdata.extend((0..cfg.d_out).map(|_| s * normal.sample(rng)));
    }
    let weight = Matrix::new(cfg.d, cfg.d_out, wdata).expect("finite weights");
    let spec = LayerSpec::new(weight, acts, predecessor).expect("conforming shapes");

    let mut vec_of = |f: &mut dyn FnMut(&mut R) -> f64| (0..cfg.d).map(|_| f(rng)).collect::<Vec<f64>>();
    let (gamma, modulation, prev_weight) = match predecessor {
        Predecessor::Rmsnorm => (Some(vec_of(&mut |r| 1.0 + 0.1 * normal.sample(r))), None, None),
        Predecessor::LayernormModulated => {
            let scale = vec_of(&mut |r| 0.2 * normal.sample(r));
            let shift = vec_of(&mut |r| 0.2 * normal.sample(r));
            (None, Some((scale, shift)), None)
        }
        Predecessor::Linear => {
            let prev = Matrix::from_fn(cfg.d, cfg.d, |_, _| normal.sample(rng) * inv_sqrt);
            (None, None, Some(prev))
        }
        Predecessor::None => (None, None, None),
    };
    SynthLayer {
        spec,
        gamma,
        modulation,
        prev_weight,
    }
}

/// Alternating channel scales 10 and 1 (a 100:1 second-moment ratio), so
/// identity-order groups of two always pair a large channel with a small one.
/// Entries have random sign and a magnitude within 5% of the channel scale.
pub fn two_population_layer<R: Rng + ?Sized>(rng: &mut R, tokens: usize, d: usize, d_out: usize) -> LayerSpec {
    let acts = Matrix::from_fn(tokens, d, |_, c| {
        let s = if c % 2 == 0 { 10.0 } else { 1.0 };
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * s * rng.random_range(0.95..=1.05)
    });
    let weight = Matrix::from_fn(d, d_out, |_, _| rng.random_range(-1.0..1.0));
    LayerSpec::new(weight, acts, Predecessor::None).expect("conforming shapes")
}

/// Writes `layers` synthetic layers plus `manifest.toml` into `dir` and
/// returns the manifest path.
pub fn write_synthetic_suite(dir: &Path, layers: usize, cfg: &SynthConfig, seed: u64) -> Result<PathBuf> {
    if cfg.d == 0 || cfg.d_out == 0 || cfg.tokens == 0 {
        return Err(Error::InvalidConfig("synthetic dims must be positive".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Manifest::default();
    for i in 0..layers {
        let pred = PREDECESSOR_CYCLE[i % PREDECESSOR_CYCLE.len()];
        let layer = synth_layer(&mut rng, cfg, pred);
        let name = format!("layer{i:03}");
        let file = |suffix: &str| PathBuf::from(format!("{name}.{suffix}.pqt"));
        let write = |p: &PathBuf, m: &Matrix| save_tensor(dir.join(p), m, DType::F32);
        let row = |v: &[f64]| Matrix::new(1, v.len(), v.to_vec()).expect("finite");

        let mut entry = LayerEntry {
            name: name.clone(),
            weight_path: file("weight"),
            acts_path: file("acts"),
            predecessor: pred,
            gamma_path: None,
            mod_scale_path: None,
            mod_shift_path: None,
            prev_weight_path: None,
        };
        write(&entry.weight_path, &layer.spec.weight)?;
        write(&entry.acts_path, &layer.spec.calib_acts)?;
        if let Some(g) = &layer.gamma {
            let p = file("gamma");
            write(&p, &row(g))?;
            entry.gamma_path = Some(p);
        }
        if let Some((s, b)) = &layer.modulation {
            let (ps, pb) = (file("mod_scale"), file("mod_shift"));
            write(&ps, &row(s))?;
            write(&pb, &row(b))?;
            entry.mod_scale_path = Some(ps);
            entry.mod_shift_path = Some(pb);
        }
        if let Some(w) = &layer.prev_weight {
            let p = file("prev_weight");
            write(&p, w)?;
            entry.prev_weight_path = Some(p);
        }
        manifest.layers.push(entry);
    }
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
