//! RMSNorm and LayerNorm (with optional adaptive modulation), and folding a
//! channel permutation into their parameters.
//!
//! Both norms compute their statistic over all channels, which a permutation
//! leaves unchanged. Permuting the per-channel parameters therefore moves the
//! permutation in front of the norm:
//! `P rmsnorm(x; gamma) = rmsnorm(Px; P gamma)` and
//! `P ((1 + s) * LN(x) + b) = (1 + Ps) * LN(Px) + Pb`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::Permutation;

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Rmsnorm,
    Layernorm,
}

/// Adaptive modulation `(1 + scale) * y + shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: NormKind,
    pub gamma: Option<Vec<f64>>,
    pub modulation: Option<Modulation>,
    pub eps: f64,
}

impl NormSpec {
    pub fn rmsnorm(gamma: Vec<f64>, eps: f64) -> Result<Self> {
        Self {
            kind: NormKind::Rmsnorm,
            gamma: Some(gamma),
            modulation: None,
            eps,
        }
        .validated()
    }

    pub fn layernorm(modulation: Option<Modulation>, eps: f64) -> Result<Self> {
        Self {
            kind: NormKind::Layernorm,
            gamma: None,
            modulation,
            eps,
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be >= 0, got {}", self.eps)));
        }
        if let Some(m) = &self.modulation {
            if m.scale.len() != m.shift.len() {
                return Err(Error::DimensionMismatch("modulation scale/shift lengths".into()));
            }
        }
        if let (Some(g), Some(m)) = (&self.gamma, &self.modulation) {
            if g.len() != m.scale.len() {
                return Err(Error::DimensionMismatch("gamma/modulation lengths".into()));
            }
        }
        Ok(self)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let bad = self.gamma.as_ref().is_some_and(|g| g.len() != d)
            || self.modulation.as_ref().is_some_and(|m| m.scale.len() != d);
        if bad {
            return Err(Error::DimensionMismatch(format!(
                "norm parameters do not match {d} channels"
            )));
        }
        Ok(())
    }

    /// Applies whichever norm `kind` selects.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            NormKind::Rmsnorm => rmsnorm_apply(x, self),
            NormKind::Layernorm => layernorm_apply(x, self),
        }
    }

    fn affine(&self, mut y: Vec<f64>) -> Vec<f64> {
        if let Some(g) = &self.gamma {
            y.iter_mut().zip(g).for_each(|(v, g)| *v *= g);
        }
        if let Some(m) = &self.modulation {
            for ((v, s), b) in y.iter_mut().zip(&m.scale).zip(&m.shift) {
                *v = (1.0 + s) * *v + b;
            }
        }
        y
    }
}

/// `x / sqrt(mean(x^2) + eps) * gamma`.
pub fn rmsnorm_apply(x: &[f64], spec: &NormSpec) -> Result<Vec<f64>> {
    if spec.kind != NormKind::Rmsnorm {
        return Err(Error::InvalidConfig("expected an rmsnorm spec".into()));
    }
    spec.check_dim(x.len())?;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let denom = (ms + spec.eps).sqrt();
    let y = x.iter().map(|v| if denom > 0.0 { v / denom } else { 0.0 }).collect();
    Ok(spec.affine(y))
}

/// `(x - mean) / sqrt(var + eps)`, followed by gamma and modulation when set.
pub fn layernorm_apply(x: &[f64], spec: &NormSpec) -> Result<Vec<f64>> {
    if spec.kind != NormKind::Layernorm {
        return Err(Error::InvalidConfig("expected a layernorm spec".into()));
    }
    spec.check_dim(x.len())?;
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + spec.eps).sqrt();
    let y = x
        .iter()
        .map(|v| if denom > 0.0 { (v - mean) / denom } else { 0.0 })
        .collect();
    Ok(spec.affine(y))
}

/// Returns the spec whose output on `Px` equals `P` applied to the original
/// output on `x`.
pub fn fold_perm_into_norm(spec: &NormSpec, perm: &Permutation) -> Result<NormSpec> {
    let gamma = spec.gamma.as_deref().map(|g| perm.apply(g)).transpose()?;
    let modulation = spec
        .modulation
        .as_ref()
        .map(|m| -> Result<Modulation> {
            Ok(Modulation {
                scale: perm.apply(&m.scale)?,
                shift: perm.apply(&m.shift)?,
            })
        })
        .transpose()?;
    Ok(NormSpec {
        kind: spec.kind,
        gamma,
        modulation,
        eps: spec.eps,
    })
}
