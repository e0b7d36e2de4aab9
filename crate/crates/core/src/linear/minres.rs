//! Preconditioned MINRES for symmetric, possibly indefinite operators.

use crate::error::{Error, Result};
use crate::spectral::{l2_dot, Field};

#[derive(Clone, Copy, Debug)]
pub struct MinresOptions {
    /// Stop when the preconditioned residual drops below `rtol * |b|`.
    pub rtol: f64,
    /// Absolute floor on the preconditioned residual.
    pub atol: f64,
    pub max_iter: usize,
}

impl Default for MinresOptions {
    fn default() -> Self {
        MinresOptions {
            rtol: 1e-10,
            atol: 0.0,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinresOutcome {
    pub solution: Field,
    pub iterations: usize,
    /// Preconditioned residual norm relative to the right-hand side.
    pub relative_residual: f64,
}

/// Solves `A x = b` for symmetric `A` with symmetric positive definite
/// preconditioner `M^{-1}` (given as `precond`). Both maps must be symmetric
/// with respect to the grid `L^2` inner product.
pub fn minres(
    apply: impl Fn(&Field) -> Field,
    precond: impl Fn(&Field) -> Field,
    b: &Field,
    x0: Option<&Field>,
    opts: &MinresOptions,
) -> Result<MinresOutcome> {
    let b_norm = l2_dot(&precond(b), b).max(0.0).sqrt();
    let mut x = x0.cloned().unwrap_or_else(|| Field::zeros(b.grid()));
    if b_norm == 0.0 && x0.is_none() {
        return Ok(MinresOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let threshold = opts.rtol * b_norm + opts.atol;

    let mut v = if x0.is_some() { b.sub(&apply(&x)) } else { b.clone() };
    let mut z = precond(&v);
    let mut gamma = l2_dot(&z, &v).max(0.0).sqrt();
    let scale = b_norm.max(f64::MIN_POSITIVE);
    if gamma <= threshold {
        return Ok(MinresOutcome {
            solution: x,
            iterations: 0,
            relative_residual: gamma / scale,
        });
    }
    let mut v_old = Field::zeros(b.grid());
    let mut w = Field::zeros(b.grid());
    let mut w_old = Field::zeros(b.grid());
    let mut gamma_old = 1.0;
    let mut eta = gamma;
    let (mut s_old, mut s) = (0.0, 0.0);
    let (mut c_old, mut c) = (1.0, 1.0);

    for it in 1..=opts.max_iter {
        z.scale_in_place(1.0 / gamma);
        let q = apply(&z);
        let delta = l2_dot(&q, &z);
        let mut v_new = q;
        v_new.axpy_in_place(-delta / gamma, &v);
        v_new.axpy_in_place(-gamma / gamma_old, &v_old);
        let z_new = precond(&v_new);
        let gamma_new = l2_dot(&z_new, &v_new).max(0.0).sqrt();

        let a0 = c * delta - c_old * s * gamma;
        let a1 = (a0 * a0 + gamma_new * gamma_new).sqrt();
        let a2 = s * delta + c_old * c * gamma;
        let a3 = s_old * gamma;
        let (c_new, s_new) = (a0 / a1, gamma_new / a1);

        let mut w_new = z.clone();
        w_new.axpy_in_place(-a3, &w_old);
        w_new.axpy_in_place(-a2, &w);
        w_new.scale_in_place(1.0 / a1);
        x.axpy_in_place(c_new * eta, &w_new);
        eta *= -s_new;

        if eta.abs() <= threshold || gamma_new == 0.0 {
            return Ok(MinresOutcome {
                solution: x,
                iterations: it,
                relative_residual: eta.abs() / scale,
            });
        }

        v_old = std::mem::replace(&mut v, v_new);
        z = z_new;
        w_old = std::mem::replace(&mut w, w_new);
        gamma_old = gamma;
        gamma = gamma_new;
        c_old = c;
        c = c_new;
        s_old = s;
        s = s_new;
    }
    Err(Error::LinearSolve {
        iterations: opts.max_iter,
        residual: eta.abs() / scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{riesz, shifted_frac_laplacian, Grid};

    #[test]
    fn solves_indefinite_multiplication_plus_laplacian() {
        let g = Grid::new(1, 128, 20.0).unwrap();
        let s = 0.7;
        let well = Field::from_fn(&g, |x| -3.0 * (-x[0] * x[0]).exp());
        let apply = |v: &Field| shifted_frac_laplacian(v, s).add(&well.zip_map(v, |a, b| a * b));
        let exact = Field::from_fn(&g, |x| (-(x[0] - 1.0).powi(2) / 4.0).exp());
        let b = apply(&exact);
        let out = minres(apply, |v| riesz(v, s), &b, None, &MinresOptions::default()).unwrap();
        let err = out.solution.sub(&exact).max_abs();
        assert!(err < 1e-8, "err {err}");
        assert!(out.iterations < 100);
    }

    #[test]
    fn warm_start_at_solution_returns_immediately() {
        let g = Grid::new(1, 32, 5.0).unwrap();
        let b = Field::from_fn(&g, |x| (-x[0] * x[0]).exp());
        let out = minres(|v| v.scale(2.0), |v| v.clone(), &b, Some(&b.scale(0.5)), &MinresOptions::default()).unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn stagnation_reported() {
        let g = Grid::new(1, 64, 5.0).unwrap();
        let b = Field::from_fn(&g, |x| (x[0]).sin() + (3.0 * x[0]).cos());
        let diag = Field::from_fn(&g, |x| 1.0 + x[0] * x[0]);
        let opts = MinresOptions { rtol: 1e-14, atol: 0.0, max_iter: 2 };
        let r = minres(|v| diag.zip_map(v, |a, b| a * b), |v| v.clone(), &b, None, &opts);
        assert!(matches!(r, Err(Error::LinearSolve { .. })));
    }
}
