//! Seeded invariant suites behind `permuquant validate`.
//!
//! Each suite draws random instances, checks one family of identities or
//! bounds, and reports the pass count together with the worst-case slack.
//! Slack is `bound - value` for inequalities (negative means violated) and
//! the largest absolute deviation for equalities.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use crate::error::Result;
use crate::matrix::{matmul, Matrix};
use crate::perm::{apply_perm_cols, Grouping, Permutation};
use crate::quant::{error_upper_bound, fake_quant, quant_error, QuantConfig};
use crate::reorder::{brute_force_min_proxy, sort_by_moments};
use crate::stats::{
    channel_second_moments, expected_error_uniform_noise, group_rho, proxy_objective, sandwich_lower,
};
use crate::transforms::{
    fold_perm_into_norm, fold_perm_into_prev_linear, fold_perm_into_weight, fwht,
    hadamard_then_reorder, HadamardConfig, Modulation, NormSpec, DEFAULT_EPS,
};

use super::synth::heavy_tailed_acts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Bounds,
    Sorting,
    Folding,
    Hadamard,
    Sandwich,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Bounds,
        Suite::Sorting,
        Suite::Folding,
        Suite::Hadamard,
        Suite::Sandwich,
    ];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Bounds => "bounds",
            Suite::Sorting => "sorting",
            Suite::Folding => "folding",
            Suite::Hadamard => "hadamard",
            Suite::Sandwich => "sandwich",
        })
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string() == s)
            .ok_or_else(|| format!("unknown suite {s:?} (expected bounds, sorting, folding, hadamard or sandwich)"))
    }
}

/// One named check inside a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub total: usize,
    pub passed: usize,
    pub worst_slack: f64,
    /// `true` when slack is a deviation that must stay under a tolerance,
    /// `false` when it is a margin that must stay non-negative.
    pub is_deviation: bool,
}

impl CheckResult {
    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(CheckResult::ok)
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "suite {} (seed {}): {}",
            self.suite,
            self.seed,
            if self.ok() { "pass" } else { "FAIL" }
        )?;
        for c in &self.checks {
            let label = if c.is_deviation { "max deviation" } else { "worst slack" };
            writeln!(
                f,
                "  {:<40} {:>5}/{:<5} {label} {:.3e}",
                c.name, c.passed, c.total, c.worst_slack
            )?;
        }
        Ok(())
    }
}

/// Accumulates pass counts and the extreme slack for one check.
struct Tally {
    name: String,
    total: usize,
    passed: usize,
    worst: f64,
    deviation: bool,
    tol: f64,
}

impl Tally {
    /// Inequality check: passes when `margin >= -tol`.
    fn margin(name: impl Into<String>, tol: f64) -> Self {
        Self {
            name: name.into(),
            total: 0,
            passed: 0,
            worst: f64::INFINITY,
            deviation: false,
            tol,
        }
    }

    /// Equality check: passes when `deviation <= tol`.
    fn deviation(name: impl Into<String>, tol: f64) -> Self {
        Self {
            name: name.into(),
            total: 0,
            passed: 0,
            worst: 0.0,
            deviation: true,
            tol,
        }
    }

    fn record(&mut self, v: f64) {
        self.total += 1;
        if self.deviation {
            self.worst = self.worst.max(v);
            if v <= self.tol {
                self.passed += 1;
            }
        } else {
            self.worst = self.worst.min(v);
            if v >= -self.tol {
                self.passed += 1;
            }
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            total: self.total,
            passed: self.passed,
            worst_slack: if self.total == 0 { 0.0 } else { self.worst },
            is_deviation: self.deviation,
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lim: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-lim..lim))
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = match suite {
        Suite::Bounds => bounds(&mut rng)?,
        Suite::Sorting => sorting(&mut rng)?,
        Suite::Folding => folding(&mut rng)?,
        Suite::Hadamard => hadamard(&mut rng)?,
        Suite::Sandwich => sandwich(&mut rng)?,
    };
    Ok(SuiteResult { suite, seed, checks })
}

/// Per-sample error bound on heavy-tailed vectors.
fn bounds(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let t = StudentT::new(2.0).expect("valid dof");
    let d = 64;
    let mut out = Vec::new();
    for bits in [3u32, 4] {
        for g in [8usize, 32] {
            let cfg = QuantConfig::new(bits, g)?;
            let grouping = cfg.grouping(d)?;
            let mut tally = Tally::margin(format!("error bound bits={bits} g={g}"), 0.0);
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d).map(|_| t.sample(rng)).collect();
                let err = quant_error(&x, &fake_quant(&x, &cfg)?)?;
                tally.record(error_upper_bound(&x, grouping, cfg.qmax())? - err);
            }
            out.push(tally.finish());
        }
    }
    Ok(out)
}

/// Moment sorting against exhaustive search.
fn sorting(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut tally = Tally::deviation("sorted proxy == brute-force minimum", 0.0);
    for _ in 0..200 {
        let g = [2usize, 3, 4][rng.random_range(0..3)];
        let d = g * rng.random_range(1..=12 / g);
        let mu2: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..100.0)).collect();
        let sorted = proxy_objective(&mu2, &sort_by_moments(&mu2), g)?;
        let (best, _) = brute_force_min_proxy(&mu2, g)?;
        tally.record((sorted - best).abs());
    }
    Ok(vec![tally.finish()])
}

/// Folded pipelines against unfolded ones, quantization off.
fn folding(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut linear = Tally::deviation("prev linear fold (X W_prev P)(P^T W)", 1e-10);
    let mut rms = Tally::deviation("rmsnorm fold", 1e-10);
    let mut ln = Tally::deviation("modulated layernorm fold", 1e-10);
    for _ in 0..500 {
        let d = 4 * rng.random_range(1..=8);
        let (n, d_prev, d_out) = (rng.random_range(1..6), rng.random_range(2..10), rng.random_range(1..6));
        let x = uniform_matrix(rng, n, d_prev, 3.0);
        let w_prev = uniform_matrix(rng, d_prev, d, 1.0);
        let w = uniform_matrix(rng, d, d_out, 1.0);
        let perm = Permutation::random(d, rng);
        let w_folded = fold_perm_into_weight(&w, &perm)?;

        let hidden = matmul(&x, &w_prev)?;
        let original = matmul(&hidden, &w)?;
        let folded = matmul(&matmul(&x, &fold_perm_into_prev_linear(&w_prev, &perm)?)?, &w_folded)?;
        linear.record(original.max_abs_diff(&folded));

        let gamma: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let scale: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norms = [
            (NormSpec::rmsnorm(gamma, DEFAULT_EPS)?, &mut rms),
            (
                NormSpec::layernorm(Some(Modulation { scale, shift }), DEFAULT_EPS)?,
                &mut ln,
            ),
        ];
        for (spec, tally) in norms {
            let folded_spec = fold_perm_into_norm(&spec, &perm)?;
            let mut unfolded = Vec::new();
            let mut refolded = Vec::new();
            for row in hidden.row_iter() {
                unfolded.extend(spec.apply(row)?);
                refolded.extend(folded_spec.apply(&perm.apply(row)?)?);
            }
            let y = matmul(&Matrix::new(n, d, unfolded)?, &w)?;
            let y_folded = matmul(&Matrix::new(n, d, refolded)?, &w_folded)?;
            tally.record(y.max_abs_diff(&y_folded));
        }
    }
    Ok(vec![linear.finish(), rms.finish(), ln.finish()])
}

/// Involution, energy preservation and product reconstruction.
fn hadamard(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for block in [4usize, 16, 64] {
        let cfg = HadamardConfig::new(block)?;
        let mut invol = Tally::deviation(format!("involution block={block}"), 1e-12);
        let mut energy = Tally::deviation(format!("norm preservation block={block}"), 1e-12);
        for _ in 0..100 {
            let x: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = fwht(&x, &cfg)?;
            invol.record(max_abs_diff(&fwht(&y, &cfg)?, &x));
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            energy.record((nx - ny).abs());
        }
        out.push(invol.finish());
        out.push(energy.finish());
    }
    let mut recon = Tally::deviation("(XHP)(P^T H^T W) == XW", 1e-10);
    for _ in 0..100 {
        let d = 64;
        let block = [4usize, 16, 64][rng.random_range(0..3)];
        let x = uniform_matrix(rng, 6, d, 2.0);
        let w = uniform_matrix(rng, d, 5, 1.0);
        let perm = Permutation::random(d, rng);
        let (xh, wh) = hadamard_then_reorder(&x, &w, &perm, &HadamardConfig::new(block)?)?;
        recon.record(matmul(&xh, &wh)?.max_abs_diff(&matmul(&x, &w)?));
    }
    out.push(recon.finish());
    Ok(out)
}

/// Both halves of the sandwich bound over random partitions.
fn sandwich(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let (d, g, q) = (64usize, 8usize, 3);
    let acts = heavy_tailed_acts(rng, 512, d, 1.5);
    let mu2 = channel_second_moments(&acts)?.mu2;
    let grouping = Grouping::new(d, g)?;
    let log_term = (2.0 * g as f64).log2();
    let mut lower = Tally::margin("(g/12Q^2) Phi(P) <= E(P)", 1e-10);
    let mut upper = Tally::margin("E(P) <= c_hat log2(2g) (g/12Q^2) Phi(P)", 1e-10);
    for _ in 0..100 {
        let perm = Permutation::random(d, rng);
        let xp = apply_perm_cols(&acts, &perm)?;
        let e = expected_error_uniform_noise(&xp, grouping, q)?;
        let lo = sandwich_lower(proxy_objective(&mu2, &perm, g)?, g, q);
        lower.record(e - lo);
        let c_hat = group_rho(&xp, grouping)?.c_hat;
        upper.record((c_hat * log_term * lo - e) / e.max(f64::MIN_POSITIVE));
    }
    Ok(vec![lower.finish(), upper.finish()])
}
