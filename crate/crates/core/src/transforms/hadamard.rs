//! Blockwise orthonormal Walsh-Hadamard transform.
//!
//! `H` is block diagonal with `d / block` copies of the `block x block`
//! Hadamard matrix scaled by `1/sqrt(block)`. Each block is symmetric and
//! orthonormal, so `H = H^T = H^-1` and `(XH)(H^T W) = XW`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::perm::{apply_perm_cols, apply_perm_rows, Permutation};
use crate::quant::QuantConfig;
use crate::reorder::{select_permutation, LayerSpec, ReorderDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HadamardConfig {
    block: usize,
}

impl HadamardConfig {
    pub fn new(block: usize) -> Result<Self> {
        if !block.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "hadamard block {block} is not a power of two"
            )));
        }
        Ok(Self { block })
    }

    /// Largest power-of-two divisor of `d`.
    pub fn for_dim(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("hadamard over zero channels".into()));
        }
        Self::new(1 << d.trailing_zeros())
    }

    pub fn block(&self) -> usize {
        self.block
    }

    fn check(&self, d: usize) -> Result<()> {
        if d % self.block != 0 {
            return Err(Error::InvalidConfig(format!(
                "hadamard block {} does not divide {d}",
                self.block
            )));
        }
        Ok(())
    }
}

/// In-place butterfly over one power-of-two block, without normalization.
fn butterfly(x: &mut [f64]) {
    let n = x.len();
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let (a, b) = (x[i], x[i + h]);
                x[i] = a + b;
                x[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

pub fn fwht(x: &[f64], cfg: &HadamardConfig) -> Result<Vec<f64>> {
    cfg.check(x.len())?;
    let mut out = x.to_vec();
    fwht_in_place(&mut out, cfg.block);
    Ok(out)
}

fn fwht_in_place(x: &mut [f64], block: usize) {
    let norm = 1.0 / (block as f64).sqrt();
    for chunk in x.chunks_exact_mut(block) {
        butterfly(chunk);
        for v in chunk.iter_mut() {
            *v *= norm;
        }
    }
}

/// `XH`: every row transformed.
pub fn hadamard_rows(x: &Matrix, cfg: &HadamardConfig) -> Result<Matrix> {
    cfg.check(x.cols())?;
    Ok(x.map_rows(|row| {
        let mut out = row.to_vec();
        fwht_in_place(&mut out, cfg.block);
        out
    }))
}

/// `H^T W`: every column transformed.
pub fn hadamard_cols(w: &Matrix, cfg: &HadamardConfig) -> Result<Matrix> {
    cfg.check(w.rows())?;
    Ok(w.map_cols(|col| {
        let mut out = col.to_vec();
        fwht_in_place(&mut out, cfg.block);
        out
    }))
}

/// Returns `(XHP, P^T H^T W)`. The permutation acts on the transformed
/// channels, which are the ones grouped by the quantizer.
pub fn hadamard_then_reorder(
    x: &Matrix,
    w: &Matrix,
    perm: &Permutation,
    cfg: &HadamardConfig,
) -> Result<(Matrix, Matrix)> {
    if x.cols() != w.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} against {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let xh = apply_perm_cols(&hadamard_rows(x, cfg)?, perm)?;
    let wh = apply_perm_rows(&hadamard_cols(w, cfg)?, perm)?;
    Ok((xh, wh))
}

/// The layer expressed in the Hadamard basis: activations `XH`, weight `H^T W`.
pub fn hadamard_layer(layer: &LayerSpec, cfg: &HadamardConfig) -> Result<LayerSpec> {
    LayerSpec::new(
        hadamard_cols(&layer.weight, cfg)?,
        hadamard_rows(&layer.calib_acts, cfg)?,
        layer.predecessor,
    )
}

/// Permutation selection in the Hadamard basis. Statistics are taken from
/// `XH` and `H^T W`, and the decision's permutation acts on those channels.
pub fn select_permutation_hadamard(
    layer: &LayerSpec,
    qcfg: &QuantConfig,
    hcfg: &HadamardConfig,
    alpha_grid: &[f64],
    tau: f64,
) -> Result<ReorderDecision> {
    select_permutation(&hadamard_layer(layer, hcfg)?, qcfg, alpha_grid, tau)
}
