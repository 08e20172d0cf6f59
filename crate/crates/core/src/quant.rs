//! Per-group symmetric quantization.
//!
//! A vector of `d` values is split into contiguous groups of `g`. Each group
//! gets the scale `s = max|x| / Q` and every element is mapped to the integer
//! code `z = clip(round(x / s), -Q, Q)` and back to `s * z`. Only simulated
//! quantization is provided: codes are dequantized to `f64` before any matmul.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::perm::Grouping;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// Ties round away from zero, which keeps `Q(-x) = -Q(x)`.
    #[default]
    HalfAwayFromZero,
}

impl Rounding {
    fn round(self, v: f64) -> f64 {
        match self {
            Rounding::HalfAwayFromZero => v.round(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: u32,
    pub group_size: usize,
    #[serde(default)]
    pub rounding: Rounding,
}

impl QuantConfig {
    pub fn new(bits: u32, group_size: usize) -> Result<Self> {
        if !(2..=8).contains(&bits) {
            return Err(Error::InvalidConfig(format!("bits must be in 2..=8, got {bits}")));
        }
        if group_size == 0 {
            return Err(Error::InvalidConfig("group size must be positive".into()));
        }
        Ok(Self {
            bits,
            group_size,
            rounding: Rounding::HalfAwayFromZero,
        })
    }

    /// Largest representable code, `2^(bits-1) - 1`.
    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    pub fn grouping(&self, d: usize) -> Result<Grouping> {
        Grouping::new(d, self.group_size)
    }
}

/// Integer codes plus the per-group scales that dequantize them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub codes: Vec<i32>,
    pub scales: Vec<f64>,
    pub group_size: usize,
}

impl QuantizedVector {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes
            .iter()
            .enumerate()
            .map(|(i, &z)| self.scales[i / self.group_size] * f64::from(z))
            .collect()
    }
}

/// `max|x| / q`; zero for an all-zero group.
pub fn group_scale(values: &[f64], q: i32) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs())) / f64::from(q)
}

pub fn quantize_dequantize(x: &[f64], cfg: &QuantConfig) -> Result<(Vec<f64>, QuantizedVector)> {
    let grouping = cfg.grouping(x.len())?;
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let q = cfg.qmax();
    let qf = f64::from(q);
    let mut codes = Vec::with_capacity(x.len());
    let mut scales = Vec::with_capacity(grouping.num_groups());
    let mut xhat = Vec::with_capacity(x.len());
    for range in grouping.ranges() {
        let group = &x[range];
        let s = group_scale(group, q);
        scales.push(s);
        for &v in group {
            let z = if s > 0.0 {
                cfg.rounding.round(v / s).clamp(-qf, qf) as i32
            } else {
                0
            };
            codes.push(z);
            xhat.push(s * f64::from(z));
        }
    }
    Ok((
        xhat,
        QuantizedVector {
            codes,
            scales,
            group_size: grouping.group_size(),
        },
    ))
}

/// Dequantized values only.
pub fn fake_quant(x: &[f64], cfg: &QuantConfig) -> Result<Vec<f64>> {
    quantize_dequantize(x, cfg).map(|(xhat, _)| xhat)
}

/// Squared L2 distance `sum (x_i - xhat_i)^2`.
pub fn quant_error(x: &[f64], xhat: &[f64]) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::DimensionMismatch(format!(
            "quant_error over {} and {} values",
            x.len(),
            xhat.len()
        )));
    }
    Ok(x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Per-sample bound `g / (4 Q^2) * sum_k max_{i in G_k} x_i^2` on the
/// quantization error of `x`.
pub fn error_upper_bound(x: &[f64], grouping: Grouping, q: i32) -> Result<f64> {
    if x.len() != grouping.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a grouping over {} channels",
            x.len(),
            grouping.channels()
        )));
    }
    let sum_max: f64 = grouping
        .ranges()
        .map(|r| x[r].iter().fold(0.0f64, |m, v| m.max(v * v)))
        .sum();
    let qf = f64::from(q);
    Ok(grouping.group_size() as f64 / (4.0 * qf * qf) * sum_max)
}

/// Per-token quantization: every row is grouped independently.
pub fn quantize_rows(m: &Matrix, cfg: &QuantConfig) -> Result<Matrix> {
    cfg.grouping(m.cols())?;
    Ok(m.map_rows(|row| fake_quant(row, cfg).expect("validated grouping")))
}

/// Per-output-channel quantization: every column is grouped along the rows.
pub fn quantize_cols(m: &Matrix, cfg: &QuantConfig) -> Result<Matrix> {
    cfg.grouping(m.rows())?;
    Ok(m.map_cols(|col| fake_quant(col, cfg).expect("validated grouping")))
}
