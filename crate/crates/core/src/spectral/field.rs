use rustfft::num_complex::Complex64;

use super::Grid;
use crate::error::{Error, Result};

/// Real samples on a [`Grid`], row-major.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Contract(format!(
                "field has {} samples, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InputDomain(format!(
                "non-finite sample {} at index {i}",
                values[i]
            )));
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    /// Internal constructor for values known to be finite and correctly sized.
    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::from_raw(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self::from_raw(grid, vec![c; grid.len()])
    }

    /// Samples `f` at every grid point. In 1-D the second coordinate is 0.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self::from_raw(grid, (0..grid.len()).map(|i| f(grid.point(i))).collect())
    }

    /// Inverse transform of an unnormalized spectrum (real part kept).
    pub fn from_spectrum(grid: &Grid, spectrum: Vec<Complex64>) -> Self {
        Self::from_raw(grid, grid.inverse_real(spectrum))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        self.grid.forward(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::InputDomain(format!(
                "non-finite sample {} at index {i}",
                self.values[i]
            ))),
        }
    }

    pub(crate) fn ensure_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "grid mismatch: {:?} vs {:?}",
                self.grid, other.grid
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Self::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert!(self.grid == other.grid);
        Self::from_raw(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scale(&self, a: f64) -> Field {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &Field) -> Field {
        self.zip_map(other, |x, y| x + a * y)
    }

    pub(crate) fn axpy_in_place(&mut self, a: f64, other: &Field) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }

    pub(crate) fn scale_in_place(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Flat index of the largest sample.
    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }

    /// Even part `(u(x) + u(-x)) / 2`.
    pub fn symmetrized(&self) -> Field {
        let g = &self.grid;
        Self::from_raw(
            g,
            (0..g.len())
                .map(|i| 0.5 * (self.values[i] + self.values[g.mirror_index(i)]))
                .collect(),
        )
    }
}
