use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, RwLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Periodic box `[-L, L)^n` sampled with `N` points per dimension.
///
/// Grid point `j` sits at `x_j = -L + j dx`, so the origin is index `N/2`.
/// Wavenumbers follow the usual FFT ordering, `k_q = pi q / L` with `q`
/// signed in `[-N/2, N/2)`.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

struct GridInner {
    dim: usize,
    size: usize,
    half_width: f64,
    dx: f64,
    /// Signed 1-D wavenumbers in FFT order.
    wavenumbers: Vec<f64>,
    /// |k|^2 at every spectral index (row-major).
    k_squared: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
    symbols: RwLock<HashMap<u64, Arc<Vec<f64>>>>,
    derivative_symbols: RwLock<HashMap<usize, Arc<Vec<f64>>>>,
    padded: RwLock<HashMap<usize, Grid>>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dim == other.inner.dim
                && self.inner.size == other.inner.size
                && self.inner.half_width == other.inner.half_width)
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.inner.dim)
            .field("size", &self.inner.size)
            .field("half_width", &self.inner.half_width)
            .finish()
    }
}

impl Grid {
    /// A grid of dimension `dim` (1 or 2), `size` points per dimension (a power
    /// of two, at least 8) on the box of half-width `half_width`.
    pub fn new(dim: usize, size: usize, half_width: f64) -> Result<Self> {
        if !size.is_power_of_two() {
            return Err(Error::InvalidParams(format!(
                "grid size must be a power of two, got {size}"
            )));
        }
        Self::build(dim, size, half_width)
    }

    fn build(dim: usize, size: usize, half_width: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParams(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if size < 8 || size % 2 != 0 {
            return Err(Error::InvalidParams(format!(
                "grid size must be even and >= 8, got {size}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        let dx = 2.0 * half_width / size as f64;
        let wavenumbers: Vec<f64> = (0..size)
            .map(|q| {
                let signed = if q < size / 2 {
                    q as f64
                } else {
                    q as f64 - size as f64
                };
                PI * signed / half_width
            })
            .collect();
        let k_squared = match dim {
            1 => wavenumbers.iter().map(|k| k * k).collect(),
            _ => {
                let mut out = Vec::with_capacity(size * size);
                for k0 in &wavenumbers {
                    for k1 in &wavenumbers {
                        out.push(k0 * k0 + k1 * k1);
                    }
                }
                out
            }
        };
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let backward = planner.plan_fft_inverse(size);
        Ok(Grid {
            inner: Arc::new(GridInner {
                dim,
                size,
                half_width,
                dx,
                wavenumbers,
                k_squared,
                forward,
                backward,
                symbols: RwLock::new(HashMap::new()),
                derivative_symbols: RwLock::new(HashMap::new()),
                padded: RwLock::new(HashMap::new()),
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    /// Samples per dimension.
    pub fn size(&self) -> usize {
        self.inner.size
    }

    pub fn half_width(&self) -> f64 {
        self.inner.half_width
    }

    pub fn dx(&self) -> f64 {
        self.inner.dx
    }

    /// Total number of samples, `N^n`.
    pub fn len(&self) -> usize {
        self.inner.size.pow(self.inner.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `dx^n`.
    pub fn cell_volume(&self) -> f64 {
        self.inner.dx.powi(self.inner.dim as i32)
    }

    /// Box volume `(2L)^n`.
    pub fn volume(&self) -> f64 {
        (2.0 * self.inner.half_width).powi(self.inner.dim as i32)
    }

    /// Coordinate of 1-D index `j`.
    pub fn coord(&self, j: usize) -> f64 {
        -self.inner.half_width + j as f64 * self.inner.dx
    }

    /// Coordinates of the flat (row-major) index.
    pub fn point(&self, flat: usize) -> [f64; 2] {
        match self.inner.dim {
            1 => [self.coord(flat), 0.0],
            _ => {
                let n = self.inner.size;
                [self.coord(flat / n), self.coord(flat % n)]
            }
        }
    }

    /// Flat index of the point reflected through the origin.
    pub fn mirror_index(&self, flat: usize) -> usize {
        let n = self.inner.size;
        let reflect = |j: usize| (n - j) % n;
        match self.inner.dim {
            1 => reflect(flat),
            _ => reflect(flat / n) * n + reflect(flat % n),
        }
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.inner.wavenumbers
    }

    pub fn k_squared(&self) -> &[f64] {
        &self.inner.k_squared
    }

    /// Fourier symbol `|k|^{2s}`, cached per order.
    pub fn frac_symbol(&self, s: f64) -> Arc<Vec<f64>> {
        let key = s.to_bits();
        if let Some(sym) = self.inner.symbols.read().unwrap().get(&key) {
            return Arc::clone(sym);
        }
        let sym: Arc<Vec<f64>> = Arc::new(
            self.inner
                .k_squared
                .iter()
                .map(|&k2| if k2 == 0.0 { 0.0 } else { k2.powf(s) })
                .collect(),
        );
        self.inner
            .symbols
            .write()
            .unwrap()
            .entry(key)
            .or_insert(sym)
            .clone()
    }

    /// Wavenumber component `k_axis` at every spectral index, with the Nyquist
    /// mode of that axis zeroed so odd-symbol multipliers stay real.
    pub fn derivative_symbol(&self, axis: usize) -> Arc<Vec<f64>> {
        if let Some(sym) = self.inner.derivative_symbols.read().unwrap().get(&axis) {
            return Arc::clone(sym);
        }
        let n = self.inner.size;
        let k1d: Vec<f64> = (0..n)
            .map(|q| if q == n / 2 { 0.0 } else { self.inner.wavenumbers[q] })
            .collect();
        let sym: Vec<f64> = match (self.inner.dim, axis) {
            (1, _) => k1d,
            (_, 0) => (0..n * n).map(|i| k1d[i / n]).collect(),
            _ => (0..n * n).map(|i| k1d[i % n]).collect(),
        };
        let sym = Arc::new(sym);
        self.inner
            .derivative_symbols
            .write()
            .unwrap()
            .entry(axis)
            .or_insert(sym)
            .clone()
    }

    /// Same box, `size` points per dimension (any even size >= 8).
    pub(crate) fn resized(&self, size: usize) -> Result<Grid> {
        if size == self.inner.size {
            return Ok(self.clone());
        }
        if let Some(g) = self.inner.padded.read().unwrap().get(&size) {
            return Ok(g.clone());
        }
        let g = Grid::build(self.inner.dim, size, self.inner.half_width)?;
        Ok(self
            .inner
            .padded
            .write()
            .unwrap()
            .entry(size)
            .or_insert(g)
            .clone())
    }

    /// Unnormalized forward DFT of real samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, true);
        buf
    }

    /// Inverse DFT (normalized) returning the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spectrum, false);
        let scale = 1.0 / self.len() as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }

    pub(crate) fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let plan = if forward {
            &self.inner.forward
        } else {
            &self.inner.backward
        };
        let n = self.inner.size;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        if self.inner.dim == 2 {
            transpose_square(buf, n);
            plan.process_with_scratch(buf, &mut scratch);
            transpose_square(buf, n);
        }
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    const BLOCK: usize = 32;
    for ib in (0..n).step_by(BLOCK) {
        for jb in (ib..n).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(n) {
                let start = if ib == jb { i + 1 } else { jb };
                for j in start..(jb + BLOCK).min(n) {
                    buf.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(1, 6, 1.0).is_err());
        assert!(Grid::new(1, 12, 1.0).is_err());
        assert!(Grid::new(3, 16, 1.0).is_err());
        assert!(Grid::new(1, 16, -1.0).is_err());
        assert!(Grid::new(2, 16, 1.0).is_ok());
    }

    #[test]
    fn origin_and_mirror() {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let origin = 8 * 16 + 8;
        assert_eq!(g.point(origin), [0.0, 0.0]);
        assert_eq!(g.mirror_index(origin), origin);
        let p = g.point(3 * 16 + 5);
        let m = g.point(g.mirror_index(3 * 16 + 5));
        assert_eq!(p[0], -m[0]);
        assert_eq!(p[1], -m[1]);
    }

    #[test]
    fn transpose_roundtrip() {
        let n = 40;
        let mut buf: Vec<Complex64> = (0..n * n).map(|i| Complex64::new(i as f64, 0.0)).collect();
        transpose_square(&mut buf, n);
        assert_eq!(buf[1].re, n as f64);
        transpose_square(&mut buf, n);
        assert!(buf.iter().enumerate().all(|(i, c)| c.re == i as f64));
    }
}
