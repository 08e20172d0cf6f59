//! Channel reordering for a quantized linear layer.
//!
//! For a layer `Y = X W` the same permutation `P` is applied to the activation
//! columns and the weight rows, `Y ~ Q(XP) Q(P^T W)`. Channels are sorted in
//! descending order of a joint score `v_i = (mu2_act_i)^alpha (mu2_w_i)^(1-alpha)`;
//! the best alpha on a grid is chosen by calibration error, and the resulting
//! permutation is kept only when its relative error reduction exceeds `tau`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{matmul, Matrix};
use crate::perm::{apply_perm_cols, apply_perm_rows, Grouping, Permutation};
use crate::quant::{fake_quant, quant_error, quantize_cols, quantize_rows, QuantConfig};
use crate::stats::{channel_second_moments, sum_of_maxima, weight_row_moments};

/// Alpha grid searched by default.
pub const DEFAULT_ALPHA_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Default acceptance threshold, as a fraction.
pub const DEFAULT_TAU: f64 = 0.0;

/// Largest channel count [`brute_force_min_proxy`] will enumerate.
pub const BRUTE_FORCE_MAX_D: usize = 14;

/// What produces the layer's input activations, which decides where the
/// activation-side permutation is folded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predecessor {
    Linear,
    Rmsnorm,
    LayernormModulated,
    #[default]
    None,
}

impl std::fmt::Display for Predecessor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Predecessor::Linear => "linear",
            Predecessor::Rmsnorm => "rmsnorm",
            Predecessor::LayernormModulated => "layernorm_modulated",
            Predecessor::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    /// `d_in x d_out`.
    pub weight: Matrix,
    /// `n x d_in` calibration activations.
    pub calib_acts: Matrix,
    pub predecessor: Predecessor,
}

impl LayerSpec {
    pub fn new(weight: Matrix, calib_acts: Matrix, predecessor: Predecessor) -> Result<Self> {
        if weight.rows() != calib_acts.cols() {
            return Err(Error::DimensionMismatch(format!(
                "weight has {} input channels, activations have {}",
                weight.rows(),
                calib_acts.cols()
            )));
        }
        if calib_acts.rows() == 0 {
            return Err(Error::Empty("calibration rows"));
        }
        Ok(Self {
            weight,
            calib_acts,
            predecessor,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReorderDecision {
    /// Alpha of the best candidate, whether or not it was accepted.
    pub alpha: f64,
    /// Deployed permutation; identity unless accepted.
    pub perm: Permutation,
    /// Best permutation found on the grid, deployed or not.
    pub candidate: Permutation,
    pub e_orig: f64,
    /// Calibration error of the best candidate permutation.
    pub e_reorder: f64,
    pub accepted: bool,
    pub rel_improvement: f64,
    /// `(alpha, error)` for every grid point, in grid order.
    pub candidates: Vec<(f64, f64)>,
}

impl ReorderDecision {
    /// Error of the permutation that is actually deployed.
    pub fn deployed_error(&self) -> f64 {
        if self.accepted {
            self.e_reorder
        } else {
            self.e_orig
        }
    }
}

/// Descending order of `scores`; ties keep ascending original index.
pub fn sort_by_moments(scores: &[f64]) -> Permutation {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // sort_by is stable
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Permutation::new(order).expect("argsort is a bijection")
}

/// Exhaustive minimum of `sum_k max mu2` over all unordered partitions of the
/// channels into groups of size `g`.
pub fn brute_force_min_proxy(mu2: &[f64], g: usize) -> Result<(f64, Vec<Vec<usize>>)> {
    let d = mu2.len();
    if d > BRUTE_FORCE_MAX_D {
        return Err(Error::SearchTooLarge {
            d,
            max: BRUTE_FORCE_MAX_D,
        });
    }
    Grouping::new(d, g)?;

    struct Search<'a> {
        mu2: &'a [f64],
        g: usize,
        used: Vec<bool>,
        current: Vec<Vec<usize>>,
        maxima: Vec<f64>,
        best: f64,
        best_groups: Vec<Vec<usize>>,
    }

    impl Search<'_> {
        fn run(&mut self) {
            let Some(first) = self.used.iter().position(|u| !u) else {
                let value = sum_of_maxima(self.maxima.clone());
                if value < self.best {
                    self.best = value;
                    self.best_groups = self.current.clone();
                }
                return;
            };
            self.used[first] = true;
            self.current.push(vec![first]);
            self.extend(first + 1);
            self.current.pop();
            self.used[first] = false;
        }

        // Completes the open group with channels drawn from `from..` in
        // increasing order, so each unordered partition is visited once.
        fn extend(&mut self, from: usize) {
            let group = self.current.last().expect("open group");
            if group.len() == self.g {
                let max = group.iter().map(|&i| self.mu2[i]).fold(f64::NEG_INFINITY, f64::max);
                self.maxima.push(max);
                self.run();
                self.maxima.pop();
                return;
            }
            for i in from..self.mu2.len() {
                if self.used[i] {
                    continue;
                }
                self.used[i] = true;
                self.current.last_mut().expect("open group").push(i);
                self.extend(i + 1);
                self.current.last_mut().expect("open group").pop();
                self.used[i] = false;
            }
        }
    }

    let mut search = Search {
        mu2,
        g,
        used: vec![false; d],
        current: Vec::new(),
        maxima: Vec::new(),
        best: f64::INFINITY,
        best_groups: Vec::new(),
    };
    search.run();
    if d == 0 {
        return Ok((0.0, Vec::new()));
    }
    Ok((search.best, search.best_groups))
}

/// `v_i = a_i^alpha * w_i^(1 - alpha)` with `0^0 = 1`.
pub fn joint_scores(mu2_act: &[f64], mu2_w: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if mu2_act.len() != mu2_w.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} activation moments vs {} weight moments",
            mu2_act.len(),
            mu2_w.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    if let Some(i) = mu2_act.iter().chain(mu2_w).position(|&v| v < 0.0) {
        return Err(Error::NegativeMoment(i % mu2_act.len().max(1)));
    }
    Ok(mu2_act
        .iter()
        .zip(mu2_w)
        .map(|(&a, &w)| a.powf(alpha) * w.powf(1.0 - alpha))
        .collect())
}

/// Evaluates `||Q(XP) Q(P^T W) - XW||_F^2` for one layer, caching `XW`.
pub struct LayerErrorEval<'a> {
    layer: &'a LayerSpec,
    cfg: QuantConfig,
    reference: Matrix,
}

impl<'a> LayerErrorEval<'a> {
    pub fn new(layer: &'a LayerSpec, cfg: &QuantConfig) -> Result<Self> {
        cfg.grouping(layer.d_in())?;
        Ok(Self {
            layer,
            cfg: *cfg,
            reference: matmul(&layer.calib_acts, &layer.weight)?,
        })
    }

    pub fn error(&self, perm: &Permutation) -> Result<f64> {
        let xq = quantize_rows(&apply_perm_cols(&self.layer.calib_acts, perm)?, &self.cfg)?;
        let wq = quantize_cols(&apply_perm_rows(&self.layer.weight, perm)?, &self.cfg)?;
        Ok(matmul(&xq, &wq)?.sub(&self.reference)?.frobenius_sq())
    }
}

pub fn layer_quant_error(layer: &LayerSpec, perm: &Permutation, cfg: &QuantConfig) -> Result<f64> {
    LayerErrorEval::new(layer, cfg)?.error(perm)
}

/// Activation-only error `sum_r ||x_r P - Q(x_r P)||^2` with per-token groups.
pub fn activation_quant_error(acts: &Matrix, perm: &Permutation, cfg: &QuantConfig) -> Result<f64> {
    let xp = apply_perm_cols(acts, perm)?;
    cfg.grouping(xp.cols())?;
    let mut total = 0.0;
    for row in xp.row_iter() {
        total += quant_error(row, &fake_quant(row, cfg)?)?;
    }
    Ok(total)
}

/// Relative improvement and acceptance under the strict rule
/// `(e_orig - e_reorder) / e_orig > tau`. A lossless baseline is never
/// accepted.
pub fn acceptance(e_orig: f64, e_reorder: f64, tau: f64) -> (f64, bool) {
    if e_orig > 0.0 {
        let rel = (e_orig - e_reorder) / e_orig;
        (rel, rel > tau)
    } else {
        (0.0, false)
    }
}

pub fn select_permutation(
    layer: &LayerSpec,
    cfg: &QuantConfig,
    alpha_grid: &[f64],
    tau: f64,
) -> Result<ReorderDecision> {
    if alpha_grid.is_empty() {
        return Err(Error::Empty("alpha grid"));
    }
    if let Some(a) = alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidConfig(format!("alpha {a} outside [0, 1]")));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be >= 0, got {tau}")));
    }

    let eval = LayerErrorEval::new(layer, cfg)?;
    let mu2_act = channel_second_moments(&layer.calib_acts)?.mu2;
    let mu2_w = weight_row_moments(&layer.weight)?.mu2;

    let mut candidates = Vec::with_capacity(alpha_grid.len());
    let mut best: Option<(f64, f64, Permutation)> = None;
    for &alpha in alpha_grid {
        let perm = sort_by_moments(&joint_scores(&mu2_act, &mu2_w, alpha)?);
        let err = eval.error(&perm)?;
        candidates.push((alpha, err));
        let better = match &best {
            None => true,
            Some((b_alpha, b_err, _)) => err < *b_err || (err == *b_err && alpha < *b_alpha),
        };
        if better {
            best = Some((alpha, err, perm));
        }
    }
    let (alpha, e_reorder, perm) = best.expect("grid is nonempty");
    let d = layer.d_in();
    let e_orig = eval.error(&Permutation::identity(d))?;
    let (rel_improvement, accepted) = acceptance(e_orig, e_reorder, tau);

    Ok(ReorderDecision {
        alpha,
        perm: if accepted {
            perm.clone()
        } else {
            Permutation::identity(d)
        },
        candidate: perm,
        e_orig,
        e_reorder,
        accepted,
        rel_improvement,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::proxy_objective;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_population_layer(rng: &mut ChaCha8Rng, n: usize, d: usize, d_out: usize) -> LayerSpec {
        // Alternating channel scales 10 and 1, a 100:1 ratio in second moment.
        let scale = |c: usize| if c % 2 == 0 { 10.0 } else { 1.0 };
        let acts = Matrix::from_fn(n, d, |_, c| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * scale(c) * rng.random_range(0.95..=1.05)
        });
        let weight = Matrix::from_fn(d, d_out, |_, _| rng.random_range(-1.0..1.0));
        LayerSpec::new(weight, acts, Predecessor::None).unwrap()
    }

    #[test]
    fn sort_examples() {
        let p = sort_by_moments(&[1.0, 25.0, 4.0, 16.0, 9.0, 1.0]);
        assert_eq!(p.forward(), &[1, 3, 4, 2, 0, 5]);
        assert!(sort_by_moments(&[5.0, 4.0, 3.0]).is_identity());
        assert!(sort_by_moments(&[2.0; 7]).is_identity());
    }

    #[test]
    fn sort_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mu2: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..4.0)).collect();
            let scaled: Vec<f64> = mu2.iter().map(|v| v * 3.75).collect();
            assert_eq!(sort_by_moments(&mu2), sort_by_moments(&scaled));
        }
    }

    #[test]
    fn brute_force_examples() {
        let mu2 = [1.0, 25.0, 4.0, 16.0, 9.0, 1.0];
        let (v, groups) = brute_force_min_proxy(&mu2, 2).unwrap();
        assert_eq!(v, 35.0);
        assert_eq!(groups.len(), 3);
        assert_eq!(brute_force_min_proxy(&mu2, 6).unwrap().0, 25.0);
        assert_eq!(brute_force_min_proxy(&mu2, 1).unwrap().0, mu2.iter().sum::<f64>());
        assert!(matches!(
            brute_force_min_proxy(&[1.0; 16], 2),
            Err(Error::SearchTooLarge { .. })
        ));
        assert!(brute_force_min_proxy(&[1.0; 6], 4).is_err());
    }

    #[test]
    fn brute_force_beats_every_sampled_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mu2: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..50.0)).collect();
        let (best, groups) = brute_force_min_proxy(&mu2, 3).unwrap();
        let mut flat: Vec<usize> = groups.concat();
        flat.sort();
        assert_eq!(flat, (0..12).collect::<Vec<_>>());
        for _ in 0..500 {
            let p = Permutation::random(12, &mut rng);
            assert!(best <= proxy_objective(&mu2, &p, 3).unwrap());
        }
    }

    #[test]
    fn sorted_partition_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..60 {
            let g = [2usize, 3, 4][rng.random_range(0..3)];
            let d = g * rng.random_range(1..=12 / g);
            let mu2: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..100.0)).collect();
            let phi = proxy_objective(&mu2, &sort_by_moments(&mu2), g).unwrap();
            assert_eq!(phi, brute_force_min_proxy(&mu2, g).unwrap().0);
        }
    }

    #[test]
    fn joint_score_examples() {
        assert_eq!(joint_scores(&[4.0], &[9.0], 0.5).unwrap(), vec![6.0]);
        assert_eq!(joint_scores(&[4.0, 0.3], &[9.0, 7.0], 1.0).unwrap(), vec![4.0, 0.3]);
        assert_eq!(joint_scores(&[4.0, 0.3], &[9.0, 7.0], 0.0).unwrap(), vec![9.0, 7.0]);
        assert_eq!(joint_scores(&[0.0], &[0.0], 0.0).unwrap(), vec![0.0]);
        assert_eq!(joint_scores(&[0.0], &[5.0], 0.0).unwrap(), vec![5.0]);
        assert!(matches!(
            joint_scores(&[1.0, -1.0], &[1.0, 1.0], 0.5),
            Err(Error::NegativeMoment(1))
        ));
        assert!(joint_scores(&[1.0], &[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn lossless_layer_has_zero_error() {
        // 3-bit grid values with a max of 3 in every group
        let acts = Matrix::from_rows(&[vec![3.0, -1.0, 2.0, -3.0], vec![-3.0, 0.0, 1.0, 3.0]])
            .unwrap();
        let weight =
            Matrix::from_rows(&[vec![3.0, 1.0], vec![-2.0, -3.0], vec![0.0, 3.0], vec![3.0, 2.0]])
                .unwrap();
        let layer = LayerSpec::new(weight, acts, Predecessor::None).unwrap();
        let cfg = QuantConfig::new(3, 2).unwrap();
        assert_eq!(layer_quant_error(&layer, &Permutation::identity(4), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn layer_error_matches_scalar_oracle() {
        let acts = Matrix::from_rows(&[
            vec![0.3, -1.2, 2.5, 0.1],
            vec![-0.7, 0.4, 0.05, 1.9],
            vec![1.1, 1.0, -2.2, -0.6],
        ])
        .unwrap();
        let weight = Matrix::from_rows(&[
            vec![0.5, -0.25],
            vec![1.5, 0.75],
            vec![-0.1, 0.9],
            vec![0.3, -1.4],
        ])
        .unwrap();
        let layer = LayerSpec::new(weight.clone(), acts.clone(), Predecessor::None).unwrap();
        let cfg = QuantConfig::new(3, 2).unwrap();
        let perm = Permutation::new(vec![2, 0, 3, 1]).unwrap();

        // Independent scalar pipeline.
        let q = 3.0;
        let fq = |v: &[f64]| -> Vec<f64> {
            let s = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) / q;
            v.iter()
                .map(|x| if s == 0.0 { 0.0 } else { s * (x / s).round().clamp(-q, q) })
                .collect()
        };
        let f = perm.forward();
        let mut total = 0.0;
        for r in 0..3 {
            let xr: Vec<f64> = (0..4).map(|j| acts.get(r, f[j])).collect();
            let xq: Vec<f64> = [fq(&xr[0..2]), fq(&xr[2..4])].concat();
            for c in 0..2 {
                let wc: Vec<f64> = (0..4).map(|j| weight.get(f[j], c)).collect();
                let wq: Vec<f64> = [fq(&wc[0..2]), fq(&wc[2..4])].concat();
                let mut y = 0.0;
                let mut y_ref = 0.0;
                for j in 0..4 {
                    y += xq[j] * wq[j];
                    y_ref += acts.get(r, j) * weight.get(j, c);
                }
                total += (y - y_ref).powi(2);
            }
        }
        let got = layer_quant_error(&layer, &perm, &cfg).unwrap();
        assert!((got - total).abs() <= 1e-12 * total.max(1.0));
    }

    #[test]
    fn acceptance_rule_is_strict() {
        assert_eq!(acceptance(10.0, 9.0, 0.0), (0.1, true));
        assert_eq!(acceptance(10.0, 10.0, 0.0), (0.0, false));
        assert_eq!(acceptance(10.0, 11.0, 0.0).1, false);
        assert_eq!(acceptance(0.0, 0.0, 0.0), (0.0, false));
        assert_eq!(acceptance(10.0, 9.0, 0.1).1, false);
    }

    #[test]
    fn two_population_layer_is_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let layer = two_population_layer(&mut rng, 64, 16, 4);
        let cfg = QuantConfig::new(3, 2).unwrap();
        let dec = select_permutation(&layer, &cfg, &DEFAULT_ALPHA_GRID, 0.0).unwrap();
        assert!(dec.accepted);
        assert!(dec.e_reorder < dec.e_orig);
        assert!(!dec.perm.is_identity());
        assert_eq!(dec.candidates.len(), 6);
        let applied = layer_quant_error(&layer, &dec.perm, &cfg).unwrap();
        assert_eq!(applied, dec.e_reorder);
    }

    #[test]
    fn rejection_deploys_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let layer = two_population_layer(&mut rng, 32, 8, 3);
        let cfg = QuantConfig::new(3, 2).unwrap();
        let dec = select_permutation(&layer, &cfg, &[1.0], 1.0).unwrap();
        assert!(!dec.accepted);
        assert!(dec.perm.is_identity());
        assert_eq!(dec.deployed_error(), dec.e_orig);
    }

    #[test]
    fn select_validates_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let layer = two_population_layer(&mut rng, 8, 4, 2);
        let cfg = QuantConfig::new(3, 2).unwrap();
        assert!(select_permutation(&layer, &cfg, &[], 0.0).is_err());
        assert!(select_permutation(&layer, &cfg, &[1.5], 0.0).is_err());
        assert!(select_permutation(&layer, &cfg, &[0.5], -1.0).is_err());
        let bad = QuantConfig::new(3, 3).unwrap();
        assert!(select_permutation(&layer, &bad, &[0.5], 0.0).is_err());
    }

    #[test]
    fn alpha_ties_pick_smallest() {
        // Activation and weight moments share an order, so every alpha gives
        // the same permutation and the same error.
        let acts = Matrix::from_fn(4, 4, |r, c| (4 - c) as f64 * if r % 2 == 0 { 1.0 } else { -0.5 });
        let weight = Matrix::from_fn(4, 2, |r, c| (4 - r) as f64 * if c == 0 { 1.0 } else { -1.0 });
        let layer = LayerSpec::new(weight, acts, Predecessor::None).unwrap();
        let cfg = QuantConfig::new(3, 2).unwrap();
        let dec = select_permutation(&layer, &cfg, &[0.8, 0.2, 0.6], 0.0).unwrap();
        assert_eq!(dec.alpha, 0.2);
    }

    #[test]
    fn identity_perm_equals_unpermuted_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let layer = two_population_layer(&mut rng, 10, 8, 3);
        let cfg = QuantConfig::new(4, 4).unwrap();
        let xq = quantize_rows(&layer.calib_acts, &cfg).unwrap();
        let wq = quantize_cols(&layer.weight, &cfg).unwrap();
        let y = matmul(&xq, &wq).unwrap();
        let plain = y
            .sub(&matmul(&layer.calib_acts, &layer.weight).unwrap())
            .unwrap()
            .frobenius_sq();
        let via_perm = layer_quant_error(&layer, &Permutation::identity(8), &cfg).unwrap();
        assert_eq!(plain, via_perm);
    }
}
