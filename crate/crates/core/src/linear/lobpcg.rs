//! Block preconditioned eigensolver (LOBPCG) for the lowest eigenpairs of a
//! symmetric operator on fields, with optional orthogonality constraints.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectral::{l2_dot, Field, Grid};

#[derive(Clone, Copy, Debug)]
pub struct LobpcgOptions {
    /// Converged when `|A v - lambda v| <= tol |v|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra block vectors carried along to speed up convergence.
    pub guard: usize,
    pub seed: u64,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        LobpcgOptions {
            tol: 1e-7,
            max_iter: 600,
            guard: 3,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    /// `L^2`-orthonormal eigenfields.
    pub vectors: Vec<Field>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Orthonormal basis of `span(ys)` in the grid `L^2` product.
pub(crate) fn orthonormal_basis(ys: &[Field]) -> Vec<Field> {
    let mut basis: Vec<Field> = Vec::with_capacity(ys.len());
    for y in ys {
        let mut v = y.clone();
        let n0 = l2_dot(&v, &v).sqrt();
        for _ in 0..2 {
            for q in &basis {
                let c = l2_dot(q, &v);
                v.axpy_in_place(-c, q);
            }
        }
        let n = l2_dot(&v, &v).sqrt();
        if n > 1e-10 * n0 && n > 0.0 {
            v.scale_in_place(1.0 / n);
            basis.push(v);
        }
    }
    basis
}

fn project_out(v: &mut Field, basis: &[Field]) {
    for q in basis {
        let c = l2_dot(q, v);
        v.axpy_in_place(-c, q);
    }
}

/// Orthonormalizes `vs` against `fixed` (already orthonormal) and among
/// themselves, applying the same linear transformation to `avs`.
/// Nearly dependent vectors are dropped.
fn orthonormalize_with_images(
    fixed: &mut Vec<Field>,
    fixed_images: &mut Vec<Field>,
    vs: Vec<Field>,
    avs: Vec<Field>,
) {
    for (mut v, mut av) in vs.into_iter().zip(avs) {
        let n0 = l2_dot(&v, &v).sqrt();
        if n0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for (q, aq) in fixed.iter().zip(fixed_images.iter()) {
                let c = l2_dot(q, &v);
                v.axpy_in_place(-c, q);
                av.axpy_in_place(-c, aq);
            }
        }
        let n = l2_dot(&v, &v).sqrt();
        if n > 1e-8 * n0 {
            v.scale_in_place(1.0 / n);
            av.scale_in_place(1.0 / n);
            fixed.push(v);
            fixed_images.push(av);
        }
    }
}

fn combine(basis: &[Field], coeffs: &DMatrix<f64>, col: usize, rows: std::ops::Range<usize>) -> Field {
    let mut out = Field::zeros(basis[0].grid());
    for r in rows {
        let c = coeffs[(r, col)];
        if c != 0.0 {
            out.axpy_in_place(c, &basis[r]);
        }
    }
    out
}

/// Deterministic smooth random start vectors.
pub(crate) fn random_block(grid: &Grid, count: usize, seed: u64) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = grid.half_width() / 4.0;
    (0..count)
        .map(|_| {
            let phases: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..6.283)).collect();
            let freqs: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..2.0)).collect();
            let raw: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let x = grid.point(i);
                    let r2 = (x[0] * x[0] + x[1] * x[1]) / (width * width);
                    let osc: f64 = (0..3)
                        .map(|j| (freqs[2 * j] * x[0] + freqs[2 * j + 1] * x[1] + phases[j]).cos())
                        .sum();
                    (1.0 + osc + 0.1 * rng.random_range(-1.0..1.0)) * (-r2).exp()
                })
                .collect();
            Field::from_raw(grid, raw)
        })
        .collect()
}

/// Lowest `count` eigenpairs of the symmetric operator `apply`, restricted to
/// the `L^2`-orthogonal complement of `constraints` when given. The
/// constraint projection is applied before and after every operator call.
pub fn lobpcg(
    apply: impl Fn(&Field) -> Field,
    precond: impl Fn(&Field) -> Field,
    grid: &Grid,
    count: usize,
    initial: &[Field],
    constraints: &[Field],
    opts: &LobpcgOptions,
) -> Result<Eigenpairs> {
    let cons = orthonormal_basis(constraints);
    let op = |v: &Field| -> Field {
        let mut pv = v.clone();
        project_out(&mut pv, &cons);
        let mut out = apply(&pv);
        project_out(&mut out, &cons);
        out
    };
    let block = count + opts.guard;
    let mut start: Vec<Field> = initial.iter().take(block).cloned().collect();
    if start.len() < block {
        start.extend(random_block(grid, block - start.len(), opts.seed));
    }
    start.retain_mut(|v| {
        let n0 = l2_dot(v, v).sqrt();
        project_out(v, &cons);
        project_out(v, &cons);
        l2_dot(v, v).sqrt() > 1e-6 * n0
    });
    if start.len() < block {
        let mut extra = random_block(grid, block - start.len(), opts.seed ^ 0x5eed);
        for v in &mut extra {
            project_out(v, &cons);
        }
        start.extend(extra);
    }
    let start = orthonormal_basis(&start);
    if start.len() < count {
        return Err(Error::Contract(
            "initial block is rank deficient after constraint projection".into(),
        ));
    }
    let start_images: Vec<Field> = start.iter().map(&op).collect();
    let keep = start.len().min(block);
    let (mut x, mut ax, mut lambda) = rayleigh_ritz(start, start_images, keep);

    let mut p: Vec<Field> = Vec::new();
    let mut ap: Vec<Field> = Vec::new();
    let mut ritz_history: Vec<Vec<f64>> = Vec::new();
    let mut residual_norms = vec![f64::INFINITY; x.len()];

    for it in 1..=opts.max_iter {
        let residuals: Vec<Field> = x
            .iter()
            .zip(&ax)
            .zip(&lambda)
            .map(|((xi, axi), &l)| axi.add_scaled(-l, xi))
            .collect();
        residual_norms = residuals.iter().map(|r| l2_dot(r, r).sqrt()).collect();
        ritz_history.push(lambda[..count].to_vec());
        if ritz_history.len() > 5 {
            ritz_history.remove(0);
        }
        if residual_norms[..count].iter().all(|&r| r <= opts.tol) {
            return Ok(Eigenpairs {
                values: lambda[..count].to_vec(),
                vectors: x[..count].to_vec(),
                residuals: residual_norms[..count].to_vec(),
                iterations: it,
            });
        }
        let active: Vec<usize> = (0..x.len())
            .filter(|&i| residual_norms[i] > 0.1 * opts.tol)
            .collect();
        let mut w: Vec<Field> = active
            .iter()
            .map(|&i| {
                let mut wi = precond(&residuals[i]);
                project_out(&mut wi, &cons);
                wi
            })
            .collect();
        for wi in &mut w {
            let n = l2_dot(wi, wi).sqrt();
            if n > 0.0 {
                wi.scale_in_place(1.0 / n);
            }
        }
        let aw: Vec<Field> = w.iter().map(&op).collect();

        let mut basis = Vec::with_capacity(x.len() + w.len() + p.len());
        let mut images = Vec::with_capacity(basis.capacity());
        orthonormalize_with_images(&mut basis, &mut images, x.clone(), ax.clone());
        let nx = basis.len();
        orthonormalize_with_images(&mut basis, &mut images, w, aw);
        orthonormalize_with_images(&mut basis, &mut images, p.clone(), ap.clone());
        let k = basis.len();

        let mut gram = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = 0.5 * (l2_dot(&basis[i], &images[j]) + l2_dot(&images[i], &basis[j]));
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let keep = x.len();
        let mut coeffs = DMatrix::<f64>::zeros(k, keep);
        for (c, &o) in order.iter().take(keep).enumerate() {
            coeffs.set_column(c, &eig.eigenvectors.column(o));
        }
        let mut new_x = Vec::with_capacity(keep);
        let mut new_ax = Vec::with_capacity(keep);
        let mut new_p = Vec::with_capacity(keep);
        let mut new_ap = Vec::with_capacity(keep);
        for c in 0..keep {
            new_x.push(combine(&basis, &coeffs, c, 0..k));
            new_ax.push(combine(&images, &coeffs, c, 0..k));
            if k > nx {
                new_p.push(combine(&basis, &coeffs, c, nx..k));
                new_ap.push(combine(&images, &coeffs, c, nx..k));
            }
        }
        lambda = order.iter().take(keep).map(|&o| eig.eigenvalues[o]).collect();
        x = new_x;
        ax = new_ax;
        p = new_p;
        ap = new_ap;
    }
    Err(Error::SpectralSolver {
        iterations: opts.max_iter,
        max_residual: residual_norms[..count.min(residual_norms.len())]
            .iter()
            .copied()
            .fold(0.0, f64::max),
        ritz_history,
    })
}

fn rayleigh_ritz(basis: Vec<Field>, images: Vec<Field>, keep: usize) -> (Vec<Field>, Vec<Field>, Vec<f64>) {
    let k = basis.len();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = 0.5 * (l2_dot(&basis[i], &images[j]) + l2_dot(&images[i], &basis[j]));
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut coeffs = DMatrix::<f64>::zeros(k, keep);
    for (c, &o) in order.iter().take(keep).enumerate() {
        coeffs.set_column(c, &eig.eigenvectors.column(o));
    }
    let x = (0..keep).map(|c| combine(&basis, &coeffs, c, 0..k)).collect();
    let ax = (0..keep).map(|c| combine(&images, &coeffs, c, 0..k)).collect();
    let lambda = order.iter().take(keep).map(|&o| eig.eigenvalues[o]).collect();
    (x, ax, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{riesz, shifted_frac_laplacian};

    #[test]
    fn harmonic_like_well() {
        // -d^2/dx^2 + x^2 on a wide box: eigenvalues 1, 3, 5, ...
        let g = Grid::new(1, 256, 12.0).unwrap();
        let pot = Field::from_fn(&g, |x| x[0] * x[0]);
        let apply = |v: &Field| {
            crate::spectral::frac_laplacian(v, 1.0)
                .unwrap()
                .add(&pot.zip_map(v, |a, b| a * b))
        };
        let out = lobpcg(apply, |v| riesz(v, 1.0), &g, 3, &[], &[], &LobpcgOptions::default()).unwrap();
        for (l, e) in out.values.iter().zip([1.0, 3.0, 5.0]) {
            assert!((l - e).abs() < 1e-8, "{l} vs {e}");
        }
        for i in 0..3 {
            for j in 0..3 {
                let d = l2_dot(&out.vectors[i], &out.vectors[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constraint_removes_ground_mode() {
        let g = Grid::new(1, 256, 12.0).unwrap();
        let pot = Field::from_fn(&g, |x| x[0] * x[0]);
        let apply = |v: &Field| {
            crate::spectral::frac_laplacian(v, 1.0)
                .unwrap()
                .add(&pot.zip_map(v, |a, b| a * b))
        };
        let ground = Field::from_fn(&g, |x| (-x[0] * x[0] / 2.0).exp());
        let out = lobpcg(apply, |v| riesz(v, 1.0), &g, 2, &[], &[ground], &LobpcgOptions::default()).unwrap();
        assert!((out.values[0] - 3.0).abs() < 1e-8);
        assert!((out.values[1] - 5.0).abs() < 1e-8);
    }

    #[test]
    fn shifted_laplacian_lowest_is_one() {
        let g = Grid::new(1, 128, 10.0).unwrap();
        let out = lobpcg(
            |v| shifted_frac_laplacian(v, 0.5),
            |v| riesz(v, 0.5),
            &g,
            1,
            &[],
            &[],
            &LobpcgOptions::default(),
        )
        .unwrap();
        assert!((out.values[0] - 1.0).abs() < 1e-12);
    }
}
