//! Channel permutations and contiguous groupings.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A bijection over channel indices.
///
/// `forward()[j]` is the original channel placed at position `j`, so applying
/// the permutation to a vector `v` yields `out[j] = v[forward[j]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let d = forward.len();
        let mut inverse = vec![usize::MAX; d];
        for (j, &i) in forward.iter().enumerate() {
            if i >= d {
                return Err(Error::InvalidPermutation(format!("index {i} out of range {d}")));
            }
            if inverse[i] != usize::MAX {
                return Err(Error::InvalidPermutation(format!("index {i} repeated")));
            }
            inverse[i] = j;
        }
        Ok(Self { forward, inverse })
    }

    pub fn identity(d: usize) -> Self {
        let forward: Vec<usize> = (0..d).collect();
        Self {
            inverse: forward.clone(),
            forward,
        }
    }

    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut forward: Vec<usize> = (0..d).collect();
        forward.shuffle(rng);
        Self::new(forward).expect("shuffle is a bijection")
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse_indices(&self) -> &[usize] {
        &self.inverse
    }

    pub fn inverse(&self) -> Permutation {
        Permutation {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(j, &i)| i == j)
    }

    /// Reorders a vector: `out[j] = v[forward[j]]`.
    pub fn apply<T: Copy>(&self, v: &[T]) -> Result<Vec<T>> {
        self.check_len(v.len())?;
        Ok(self.forward.iter().map(|&i| v[i]).collect())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} applied to {n} channels",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Computes `XP`: column `j` of the result is column `forward[j]` of `x`.
pub fn apply_perm_cols(x: &Matrix, p: &Permutation) -> Result<Matrix> {
    p.check_len(x.cols())?;
    Ok(x.map_rows(|row| p.forward.iter().map(|&i| row[i]).collect()))
}

/// Computes `P^T W`: row `j` of the result is row `forward[j]` of `w`.
pub fn apply_perm_rows(w: &Matrix, p: &Permutation) -> Result<Matrix> {
    p.check_len(w.rows())?;
    let mut data = Vec::with_capacity(w.data().len());
    for &i in &p.forward {
        data.extend_from_slice(w.row(i));
    }
    Matrix::new(w.rows(), w.cols(), data)
}

/// `d` channels split into `d / g` contiguous groups of size `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grouping {
    d: usize,
    g: usize,
}

impl Grouping {
    pub fn new(d: usize, g: usize) -> Result<Self> {
        if g == 0 || d % g != 0 {
            return Err(Error::InvalidGrouping { d, g });
        }
        Ok(Self { d, g })
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn group_size(&self) -> usize {
        self.g
    }

    pub fn num_groups(&self) -> usize {
        self.d / self.g
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.g..(k + 1) * self.g
    }

    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.num_groups()).map(|k| self.range(k))
    }
}
