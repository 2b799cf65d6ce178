use nalgebra::{DVector, DVectorView, DVectorViewMut};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Local model parameters of `n` nodes, each a `d`-dimensional block,
/// stored as one flat vector in node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedParams {
    n: usize,
    d: usize,
    flat: DVector<f64>,
}

impl StackedParams {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            flat: DVector::zeros(n * d),
        }
    }

    pub fn from_flat(n: usize, d: usize, flat: DVector<f64>) -> Result<Self> {
        if flat.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: flat.len(),
            });
        }
        Ok(Self { n, d, flat })
    }

    pub fn from_blocks(blocks: &[DVector<f64>]) -> Result<Self> {
        let n = blocks.len();
        let d = blocks.first().map_or(0, |b| b.len());
        let mut flat = DVector::zeros(n * d);
        for (i, b) in blocks.iter().enumerate() {
            if b.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: b.len(),
                });
            }
            flat.rows_mut(i * d, d).copy_from(b);
        }
        Ok(Self { n, d, flat })
    }

    /// Replicate one block at every node.
    pub fn replicated(n: usize, block: &DVector<f64>) -> Self {
        let d = block.len();
        let mut flat = DVector::zeros(n * d);
        for i in 0..n {
            flat.rows_mut(i * d, d).copy_from(block);
        }
        Self { n, d, flat }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn block(&self, i: usize) -> DVectorView<'_, f64> {
        self.flat.rows(i * self.d, self.d)
    }

    pub fn block_mut(&mut self, i: usize) -> DVectorViewMut<'_, f64> {
        self.flat.rows_mut(i * self.d, self.d)
    }

    pub fn block_owned(&self, i: usize) -> DVector<f64> {
        self.block(i).into_owned()
    }

    pub fn set_block(&mut self, i: usize, v: &DVector<f64>) {
        self.block_mut(i).copy_from(v);
    }

    pub fn blocks(&self) -> Vec<DVector<f64>> {
        (0..self.n).map(|i| self.block_owned(i)).collect()
    }

    pub fn flat(&self) -> &DVector<f64> {
        &self.flat
    }

    pub fn into_flat(self) -> DVector<f64> {
        self.flat
    }

    /// Euclidean distance between the flat vectors.
    pub fn distance(&self, other: &StackedParams) -> f64 {
        (&self.flat - &other.flat).norm()
    }

    /// Largest per-block Euclidean distance.
    pub fn max_block_distance(&self, other: &StackedParams) -> f64 {
        (0..self.n)
            .map(|i| (self.block(i) - other.block(i)).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|x| x.is_finite())
    }

    pub fn first_non_finite_block(&self) -> Option<usize> {
        (0..self.n).find(|&i| self.block(i).iter().any(|x| !x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_and_flat_views_agree() {
        let p = StackedParams::from_blocks(&[
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        ])
        .unwrap();
        assert_eq!(p.flat().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.block(1)[0], 3.0);
        assert!(StackedParams::from_flat(2, 3, DVector::zeros(5)).is_err());
    }
}
