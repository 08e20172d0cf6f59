//! Calibration statistics over a sample matrix (rows are samples, columns are
//! channels).
//!
//! All expectations are plain sample means over the calibration rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::perm::{Grouping, Permutation};

/// Per-channel second moments `mu2[i] = mean_r x[r][i]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mu2: Vec<f64>,
    pub n_samples: usize,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mu2.len()
    }
}

/// Per-group extremal ratios `rho[k]` and their maximum `c_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalDiagnostics {
    pub rho: Vec<f64>,
    pub c_hat: f64,
    /// Groups whose second moments are all zero; their `rho` is reported as 0.
    pub degenerate: Vec<usize>,
}

pub fn channel_second_moments(samples: &Matrix) -> Result<ChannelStats> {
    let n = samples.rows();
    if n == 0 {
        return Err(Error::Empty("calibration samples"));
    }
    let mut acc = vec![0.0; samples.cols()];
    for row in samples.row_iter() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v * v;
        }
    }
    let inv = 1.0 / n as f64;
    Ok(ChannelStats {
        mu2: acc.into_iter().map(|a| a * inv).collect(),
        n_samples: n,
    })
}

/// Second moments of the input-channel rows of a weight matrix, averaged over
/// output channels.
pub fn weight_row_moments(w: &Matrix) -> Result<ChannelStats> {
    if w.cols() == 0 {
        return Err(Error::Empty("weight output channels"));
    }
    let inv = 1.0 / w.cols() as f64;
    Ok(ChannelStats {
        mu2: w
            .row_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>() * inv)
            .collect(),
        n_samples: w.cols(),
    })
}

fn check_grouping(samples: &Matrix, grouping: Grouping) -> Result<()> {
    if samples.cols() != grouping.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels against a grouping over {}",
            samples.cols(),
            grouping.channels()
        )));
    }
    Ok(())
}

/// Sample mean over rows of `max_{i in G_k} x_i^2`, one entry per group.
pub fn mean_group_max_sq(samples: &Matrix, grouping: Grouping) -> Result<Vec<f64>> {
    check_grouping(samples, grouping)?;
    if samples.rows() == 0 {
        return Err(Error::Empty("calibration samples"));
    }
    let mut acc = vec![0.0; grouping.num_groups()];
    for row in samples.row_iter() {
        for (a, r) in acc.iter_mut().zip(grouping.ranges()) {
            *a += row[r].iter().fold(0.0f64, |m, v| m.max(v * v));
        }
    }
    let inv = 1.0 / samples.rows() as f64;
    Ok(acc.into_iter().map(|a| a * inv).collect())
}

/// `rho(G_k) = E[max x^2] / (log2(2g) * max mu2)` for every group.
pub fn group_rho(samples: &Matrix, grouping: Grouping) -> Result<ExtremalDiagnostics> {
    let numer = mean_group_max_sq(samples, grouping)?;
    let stats = channel_second_moments(samples)?;
    let log_term = (2.0 * grouping.group_size() as f64).log2();
    let mut rho = Vec::with_capacity(numer.len());
    let mut degenerate = Vec::new();
    for (k, (num, r)) in numer.iter().zip(grouping.ranges()).enumerate() {
        let max_mu2 = stats.mu2[r].iter().fold(0.0f64, |m, &v| m.max(v));
        if max_mu2 > 0.0 {
            rho.push(num / (log_term * max_mu2));
        } else {
            degenerate.push(k);
            rho.push(0.0);
        }
    }
    let c_hat = rho.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok(ExtremalDiagnostics {
        rho,
        c_hat,
        degenerate,
    })
}

/// `Phi = sum_k max_{i in G_k} mu2[i]` where group `k` holds channels
/// `perm.forward()[k*g .. (k+1)*g]`.
pub fn proxy_objective(mu2: &[f64], perm: &Permutation, g: usize) -> Result<f64> {
    let grouping = Grouping::new(mu2.len(), g)?;
    let ordered = perm.apply(mu2)?;
    Ok(sum_of_maxima(
        grouping
            .ranges()
            .map(|r| ordered[r].iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
            .collect(),
    ))
}

/// Sums group maxima in descending order, so partitions with the same
/// multiset of maxima give bit-identical totals.
pub fn sum_of_maxima(mut maxima: Vec<f64>) -> f64 {
    maxima.sort_by(|a, b| b.total_cmp(a));
    maxima.into_iter().sum()
}

/// Uniform-noise expected error `(g / 12 Q^2) * sum_k E[M_k^2]` with
/// `M_k = max_{i in G_k} |x_i|`, for samples already in grouped order.
pub fn expected_error_uniform_noise(samples: &Matrix, grouping: Grouping, q: i32) -> Result<f64> {
    if samples.rows() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = mean_group_max_sq(samples, grouping)?.iter().sum();
    let qf = f64::from(q);
    Ok(grouping.group_size() as f64 / (12.0 * qf * qf) * sum)
}

/// Lower half of the sandwich bound, `(g / 12 Q^2) * Phi`.
pub fn sandwich_lower(phi: f64, g: usize, q: i32) -> f64 {
    let qf = f64::from(q);
    g as f64 / (12.0 * qf * qf) * phi
}

/// Fraction of values `<= x` for each threshold, i.e. the empirical CDF.
pub fn empirical_cdf(values: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    thresholds
        .iter()
        .map(|t| sorted.partition_point(|v| v <= t) as f64 / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::apply_perm_cols;
    use crate::quant::{fake_quant, quant_error, QuantConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, LogNormal, Normal};

    fn lognormal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        let scales: Vec<f64> = (0..d)
            .map(|_| LogNormal::new(0.0, 1.0).unwrap().sample(rng))
            .collect();
        let normal = Normal::new(0.0, 1.0).unwrap();
        Matrix::from_fn(n, d, |_, c| scales[c] * normal.sample(rng))
    }

    #[test]
    fn second_moment_examples() {
        let s = channel_second_moments(&Matrix::from_rows(&[vec![3.0, -4.0]]).unwrap()).unwrap();
        assert_eq!(s.mu2, vec![9.0, 16.0]);
        let s = channel_second_moments(
            &Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 2.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(s.mu2, vec![1.0, 2.0]);
        assert_eq!(s.n_samples, 2);
        assert!(channel_second_moments(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn second_moments_match_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Matrix::from_fn(1000, 16, |_, _| rng.random_range(-4.0..4.0));
        let got = channel_second_moments(&m).unwrap();
        for c in 0..16 {
            let mut s = 0.0;
            for r in 0..1000 {
                s += m.get(r, c).powi(2);
            }
            assert!((got.mu2[c] - s / 1000.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn second_moments_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Matrix::from_fn(50, 10, |_, _| rng.random_range(-1.0..1.0));
        let p = Permutation::random(10, &mut rng);
        let permuted = channel_second_moments(&apply_perm_cols(&m, &p).unwrap()).unwrap();
        let base = channel_second_moments(&m).unwrap();
        assert_eq!(permuted.mu2, p.apply(&base.mu2).unwrap());
    }

    #[test]
    fn rho_constant_channels() {
        let m = Matrix::from_fn(5, 4, |_, _| 2.5);
        let d = group_rho(&m, Grouping::new(4, 2).unwrap()).unwrap();
        for r in &d.rho {
            assert!((r - 0.5).abs() < 1e-15);
        }
        assert!((d.c_hat - 0.5).abs() < 1e-15);
        assert!(d.degenerate.is_empty());
    }

    #[test]
    fn rho_single_channel_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Matrix::from_fn(40, 3, |_, _| rng.random_range(-1.0..1.0));
        let d = group_rho(&m, Grouping::new(3, 1).unwrap()).unwrap();
        for r in &d.rho {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_degenerate_group_is_flagged() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 1.0, 2.0]]).unwrap();
        let d = group_rho(&m, Grouping::new(4, 2).unwrap()).unwrap();
        assert_eq!(d.degenerate, vec![0]);
        assert_eq!(d.rho[0], 0.0);
        assert!(d.rho[1] > 0.0);
    }

    #[test]
    fn rho_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = lognormal_rows(&mut rng, 10000, 64);
        let g = 16;
        let d = group_rho(&m, Grouping::new(64, g).unwrap()).unwrap();
        for k in 0..4 {
            let mut num = 0.0;
            let mut mu2 = vec![0.0; g];
            for r in 0..m.rows() {
                let mut mx = 0.0f64;
                for j in 0..g {
                    let v = m.get(r, k * g + j);
                    mx = mx.max(v * v);
                    mu2[j] += v * v;
                }
                num += mx;
            }
            num /= m.rows() as f64;
            let max_mu2 = mu2.iter().map(|v| v / m.rows() as f64).fold(0.0, f64::max);
            let oracle = num / ((2.0 * g as f64).ln() / 2f64.ln() * max_mu2);
            assert!((d.rho[k] - oracle).abs() <= 1e-10 * oracle.max(1.0));
        }
    }

    #[test]
    fn rho_cdf_is_monotone_and_reaches_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = lognormal_rows(&mut rng, 2000, 128);
        let mut all = Vec::new();
        for g in [2usize, 4, 8, 16, 32] {
            all.extend(group_rho(&m, Grouping::new(128, g).unwrap()).unwrap().rho);
        }
        let thresholds: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
        let cdf = empirical_cdf(&all, &thresholds);
        assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
        let max_rho = all.iter().copied().fold(0.0, f64::max);
        assert_eq!(empirical_cdf(&all, &[max_rho])[0], 1.0);
    }

    #[test]
    fn proxy_examples() {
        let mu2 = [25.0, 16.0, 9.0, 4.0, 1.0, 1.0];
        let id = Permutation::identity(6);
        assert_eq!(proxy_objective(&mu2, &id, 2).unwrap(), 35.0);
        assert_eq!(proxy_objective(&mu2, &id, 6).unwrap(), 25.0);
        assert!(proxy_objective(&mu2, &id, 4).is_err());
    }

    #[test]
    fn proxy_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let mu2: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..10.0)).collect();
            let p = Permutation::random(12, &mut rng);
            let mut naive = 0.0;
            for k in 0..4 {
                let mut m = f64::MIN;
                for j in 0..3 {
                    m = m.max(mu2[p.forward()[k * 3 + j]]);
                }
                naive += m;
            }
            assert!((proxy_objective(&mu2, &p, 3).unwrap() - naive).abs() <= 1e-12 * naive);
        }
    }

    #[test]
    fn uniform_noise_examples() {
        let m = Matrix::from_rows(&[vec![0.5, -2.0, 1.0, 3.0]]).unwrap();
        let e = expected_error_uniform_noise(&m, Grouping::new(4, 4).unwrap(), 3).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 1e-15);
        let z = Matrix::zeros(7, 4);
        assert_eq!(
            expected_error_uniform_noise(&z, Grouping::new(4, 2).unwrap(), 3).unwrap(),
            0.0
        );
    }

    /// The uniform-noise model against actual rounding on Gaussian data.
    #[test]
    fn uniform_noise_model_tracks_actual_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (d, g) = (64, 32);
        let m = Matrix::from_fn(5000, d, |_, _| normal.sample(&mut rng));
        let cfg = QuantConfig::new(6, g).unwrap();
        let grouping = cfg.grouping(d).unwrap();
        let model = expected_error_uniform_noise(&m, grouping, cfg.qmax()).unwrap();
        let actual: f64 = m
            .row_iter()
            .map(|r| quant_error(r, &fake_quant(r, &cfg).unwrap()).unwrap())
            .sum::<f64>()
            / m.rows() as f64;
        let gap = (actual - model).abs() / model;
        assert!(gap <= 0.05, "relative gap {gap}");
    }

    #[test]
    fn sandwich_lower_half_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = lognormal_rows(&mut rng, 300, 32);
        let mu2 = channel_second_moments(&m).unwrap().mu2;
        for _ in 0..50 {
            let p = Permutation::random(32, &mut rng);
            let phi = proxy_objective(&mu2, &p, 8).unwrap();
            let xp = apply_perm_cols(&m, &p).unwrap();
            let e = expected_error_uniform_noise(&xp, Grouping::new(32, 8).unwrap(), 3).unwrap();
            assert!(sandwich_lower(phi, 8, 3) <= e + 1e-10);
        }
    }
}
