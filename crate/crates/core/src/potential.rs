//! Bounded Gaussian-type potentials with analytic derivatives and their
//! critical-manifold metadata.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Field, Grid};

/// Point in `R^n`; only the first `n` entries are used.
pub type Point = [f64; 2];
pub type Matrix = [[f64; 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticalManifoldTag {
    Point { location: Vec<f64> },
    Sphere { center: Vec<f64>, radius: f64, k: usize },
    Torus { k: usize },
    None,
}

/// Cup length of the supported manifolds: a point, `S^k` and `T^k`.
pub fn cup_length_lookup(tag: &CriticalManifoldTag) -> Result<usize> {
    match tag {
        CriticalManifoldTag::Point { .. } => Ok(1),
        CriticalManifoldTag::Sphere { k, .. } if *k >= 1 => Ok(2),
        CriticalManifoldTag::Torus { k } if *k >= 1 => Ok(k + 1),
        other => Err(Error::UnsupportedManifold(format!("{other:?}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub sup_v: f64,
    pub sup_grad: f64,
    pub sup_hess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    Constant { value: f64 },
    GaussianWell { depth: f64, center: Point, width: f64 },
    RingWell { depth: f64, radius: f64, width: f64 },
    /// Ring well plus `0.01 A exp(-(x_1 - r_0)^2 / w_b^2)`.
    BrokenRing { depth: f64, radius: f64, width: f64, bump_width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub dim: usize,
    pub kind: PotentialKind,
}

pub const BUMP_FRACTION: f64 = 0.01;

pub fn make_constant(dim: usize, value: f64) -> Result<Potential> {
    check_dim(dim)?;
    if !(value >= 0.0 && value.is_finite()) {
        return Err(Error::InvalidParams(format!("constant potential must be >= 0, got {value}")));
    }
    Ok(Potential { dim, kind: PotentialKind::Constant { value } })
}

pub fn make_gaussian_well(depth: f64, center: &[f64], width: f64) -> Result<Potential> {
    let dim = center.len();
    check_dim(dim)?;
    if !(depth > 0.0 && width > 0.0) {
        return Err(Error::InvalidParams(format!(
            "gaussian well needs A > 0 and w > 0, got A={depth}, w={width}"
        )));
    }
    Ok(Potential {
        dim,
        kind: PotentialKind::GaussianWell { depth, center: to_point(center), width },
    })
}

pub fn make_ring_well(depth: f64, radius: f64, width: f64) -> Result<Potential> {
    check_ring(depth, radius, width)?;
    Ok(Potential { dim: 2, kind: PotentialKind::RingWell { depth, radius, width } })
}

pub fn make_broken_ring(depth: f64, radius: f64, width: f64, bump_width: f64) -> Result<Potential> {
    check_ring(depth, radius, width)?;
    if !(bump_width > 0.0) {
        return Err(Error::InvalidParams(format!("bump width must be positive, got {bump_width}")));
    }
    Ok(Potential {
        dim: 2,
        kind: PotentialKind::BrokenRing { depth, radius, width, bump_width },
    })
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("dimension must be 1 or 2, got {dim}")))
    }
}

fn check_ring(depth: f64, radius: f64, width: f64) -> Result<()> {
    if depth > 0.0 && radius > 0.0 && width > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "ring well needs A, r0, w > 0, got A={depth}, r0={radius}, w={width}"
        )))
    }
}

fn to_point(x: &[f64]) -> Point {
    let mut p = [0.0; 2];
    for (d, v) in p.iter_mut().zip(x) {
        *d = *v;
    }
    p
}

impl Potential {
    pub fn eval(&self, x: &Point) -> f64 {
        match &self.kind {
            PotentialKind::Constant { value } => *value,
            PotentialKind::GaussianWell { depth, center, width } => {
                let r2 = self.dist2(x, center);
                depth * (1.0 - (-r2 / (width * width)).exp())
            }
            PotentialKind::RingWell { depth, radius, width } => ring_eval(*depth, *radius, *width, x),
            PotentialKind::BrokenRing { depth, radius, width, bump_width } => {
                ring_eval(*depth, *radius, *width, x) + bump(*depth, *radius, *bump_width, x).0
            }
        }
    }

    pub fn grad(&self, x: &Point) -> Point {
        match &self.kind {
            PotentialKind::Constant { .. } => [0.0; 2],
            PotentialKind::GaussianWell { depth, center, width } => {
                let w2 = width * width;
                let e = (-self.dist2(x, center) / w2).exp();
                let mut g = [0.0; 2];
                for i in 0..self.dim {
                    g[i] = depth * e * 2.0 * (x[i] - center[i]) / w2;
                }
                g
            }
            PotentialKind::RingWell { depth, radius, width } => ring_grad(*depth, *radius, *width, x),
            PotentialKind::BrokenRing { depth, radius, width, bump_width } => {
                let mut g = ring_grad(*depth, *radius, *width, x);
                g[0] += bump(*depth, *radius, *bump_width, x).1;
                g
            }
        }
    }

    pub fn hess(&self, x: &Point) -> Matrix {
        match &self.kind {
            PotentialKind::Constant { .. } => [[0.0; 2]; 2],
            PotentialKind::GaussianWell { depth, center, width } => {
                let w2 = width * width;
                let e = (-self.dist2(x, center) / w2).exp();
                let mut h = [[0.0; 2]; 2];
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        let di = x[i] - center[i];
                        let dj = x[j] - center[j];
                        let delta = if i == j { 2.0 / w2 } else { 0.0 };
                        h[i][j] = depth * e * (delta - 4.0 * di * dj / (w2 * w2));
                    }
                }
                h
            }
            PotentialKind::RingWell { depth, radius, width } => ring_hess(*depth, *radius, *width, x),
            PotentialKind::BrokenRing { depth, radius, width, bump_width } => {
                let mut h = ring_hess(*depth, *radius, *width, x);
                h[0][0] += bump(*depth, *radius, *bump_width, x).2;
                h
            }
        }
    }

    fn dist2(&self, x: &Point, c: &Point) -> f64 {
        (0..self.dim).map(|i| (x[i] - c[i]).powi(2)).sum()
    }

    /// Declared critical manifold. The broken ring declares the circle of the
    /// unperturbed ring it is built from.
    pub fn manifold(&self) -> CriticalManifoldTag {
        match &self.kind {
            PotentialKind::Constant { .. } => CriticalManifoldTag::None,
            PotentialKind::GaussianWell { center, .. } => CriticalManifoldTag::Point {
                location: center[..self.dim].to_vec(),
            },
            PotentialKind::RingWell { radius, .. } | PotentialKind::BrokenRing { radius, .. } => {
                CriticalManifoldTag::Sphere { center: vec![0.0, 0.0], radius: *radius, k: 1 }
            }
        }
    }

    pub fn cup_length(&self) -> Result<usize> {
        cup_length_lookup(&self.manifold())
    }

    /// The potential whose critical set is exactly the declared manifold.
    pub fn unperturbed(&self) -> Potential {
        match &self.kind {
            PotentialKind::BrokenRing { depth, radius, width, .. } => Potential {
                dim: 2,
                kind: PotentialKind::RingWell { depth: *depth, radius: *radius, width: *width },
            },
            _ => self.clone(),
        }
    }

    /// Points sampled on the declared manifold.
    pub fn manifold_samples(&self, count: usize) -> Vec<Point> {
        match self.manifold() {
            CriticalManifoldTag::Point { location } => vec![to_point(&location)],
            CriticalManifoldTag::Sphere { radius, .. } => (0..count)
                .map(|i| {
                    let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                    [radius * t.cos(), radius * t.sin()]
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Distance from `x` to the declared manifold.
    pub fn distance_to_manifold(&self, x: &Point) -> Option<f64> {
        match self.manifold() {
            CriticalManifoldTag::Point { location } => {
                Some(self.dist2(x, &to_point(&location)).sqrt())
            }
            CriticalManifoldTag::Sphere { radius, .. } => {
                Some(((x[0] * x[0] + x[1] * x[1]).sqrt() - radius).abs())
            }
            _ => None,
        }
    }

    /// Closed-form or radially scanned suprema of `|V|`, `|grad V|`, `|D^2 V|`.
    pub fn bounds(&self) -> Bounds {
        match &self.kind {
            PotentialKind::Constant { value } => Bounds { sup_v: *value, sup_grad: 0.0, sup_hess: 0.0 },
            PotentialKind::GaussianWell { depth, width, .. } => Bounds {
                sup_v: *depth,
                sup_grad: depth * 2f64.sqrt() * (-0.5f64).exp() / width,
                sup_hess: 2.0 * depth / (width * width),
            },
            PotentialKind::RingWell { depth, radius, width } => radial_bounds(*depth, *radius, *width),
            PotentialKind::BrokenRing { depth, radius, width, bump_width } => {
                let b = radial_bounds(*depth, *radius, *width);
                let bw2 = bump_width * bump_width;
                let amp = BUMP_FRACTION * depth;
                Bounds {
                    sup_v: b.sup_v + amp,
                    sup_grad: b.sup_grad + amp * 2f64.sqrt() * (-0.5f64).exp() / bump_width,
                    sup_hess: b.sup_hess + 2.0 * amp / bw2,
                }
            }
        }
    }

    /// `V(eps x)` sampled on the grid.
    pub fn sample(&self, grid: &Grid, eps: f64) -> Field {
        Field::from_fn(grid, |x| self.eval(&[eps * x[0], eps * x[1]]))
    }

    /// A box around the region where the potential varies, used for sampling.
    fn sampling_box(&self) -> (Point, f64) {
        match &self.kind {
            PotentialKind::Constant { .. } => ([0.0; 2], 1.0),
            PotentialKind::GaussianWell { center, width, .. } => (*center, 3.0 * width),
            PotentialKind::RingWell { radius, width, .. }
            | PotentialKind::BrokenRing { radius, width, .. } => ([0.0; 2], radius + 2.0 * width),
        }
    }
}

fn ring_eval(depth: f64, r0: f64, w: f64, x: &Point) -> f64 {
    let q = x[0] * x[0] + x[1] * x[1] - r0 * r0;
    depth * (1.0 - (-q * q / w.powi(4)).exp())
}

fn ring_grad(depth: f64, r0: f64, w: f64, x: &Point) -> Point {
    let w4 = w.powi(4);
    let q = x[0] * x[0] + x[1] * x[1] - r0 * r0;
    let e = (-q * q / w4).exp();
    let c = 4.0 * depth * e * q / w4;
    [c * x[0], c * x[1]]
}

fn ring_hess(depth: f64, r0: f64, w: f64, x: &Point) -> Matrix {
    let w4 = w.powi(4);
    let q = x[0] * x[0] + x[1] * x[1] - r0 * r0;
    let e = (-q * q / w4).exp();
    let c = 4.0 * depth * e / w4;
    let d = 2.0 * (1.0 - 2.0 * q * q / w4);
    let mut h = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            h[i][j] = c * (if i == j { q } else { 0.0 } + d * x[i] * x[j]);
        }
    }
    h
}

/// Bump value and its first two derivatives in `x_1`. The bump is centered
/// at `x_1 = r0 + bw`, so it is strictly monotone along the circle.
fn bump(depth: f64, r0: f64, bw: f64, x: &Point) -> (f64, f64, f64) {
    let bw2 = bw * bw;
    let t = x[0] - r0 - bw;
    let v = BUMP_FRACTION * depth * (-t * t / bw2).exp();
    (v, -2.0 * t / bw2 * v, (4.0 * t * t / (bw2 * bw2) - 2.0 / bw2) * v)
}

/// Suprema for a ring profile by scanning the radial variable. The Hessian
/// eigenvalues of a radial function are `V''(r)` and `V'(r)/r`.
fn radial_bounds(depth: f64, r0: f64, w: f64) -> Bounds {
    let r_max = (r0 * r0 + 6.0 * w * w).sqrt() + 1.0;
    let steps = 20_000;
    let mut sup_grad: f64 = 0.0;
    let mut sup_hess: f64 = 0.0;
    for i in 0..=steps {
        let r = r_max * i as f64 / steps as f64;
        let h = ring_hess(depth, r0, w, &[r, 0.0]);
        let g = ring_grad(depth, r0, w, &[r, 0.0]);
        sup_grad = sup_grad.max(g[0].abs());
        sup_hess = sup_hess.max(h[0][0].abs()).max(h[1][1].abs());
    }
    Bounds { sup_v: depth, sup_grad: sup_grad * 1.001, sup_hess: sup_hess * 1.001 }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub min_value: f64,
    pub max_grad_error: f64,
    pub max_hess_error: f64,
    pub manifold_grad: f64,
    pub normal_hessian_min: f64,
    pub bounds: Bounds,
}

/// Checks `V >= 0`, finite bounds, analytic derivatives against centered
/// differences at 100 random points, `|grad V| < 1e-10` on the declared
/// manifold and a non-degenerate normal Hessian there.
pub fn check_admissible(v: &Potential, seed: u64) -> Result<AdmissibilityReport> {
    let bounds = v.bounds();
    if ![bounds.sup_v, bounds.sup_grad, bounds.sup_hess].iter().all(|b| b.is_finite()) {
        return Err(Error::InvalidParams("potential bounds are not finite".into()));
    }
    let (center, radius) = v.sampling_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut min_value = f64::INFINITY;
    let mut max_grad_error: f64 = 0.0;
    let mut max_hess_error: f64 = 0.0;
    let grad_scale = bounds.sup_grad.max(bounds.sup_v).max(1e-300);
    let hess_scale = bounds.sup_hess.max(bounds.sup_v).max(1e-300);
    for _ in 0..100 {
        let mut x = [0.0; 2];
        for i in 0..v.dim {
            x[i] = center[i] + radius * rng.random_range(-1.0..1.0);
        }
        min_value = min_value.min(v.eval(&x));
        let g = v.grad(&x);
        let hs = v.hess(&x);
        for i in 0..v.dim {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (v.eval(&xp) - v.eval(&xm)) / (2.0 * h);
            max_grad_error = max_grad_error.max((fd - g[i]).abs() / grad_scale);
            let (gp, gm) = (v.grad(&xp), v.grad(&xm));
            for j in 0..v.dim {
                let fd = (gp[j] - gm[j]) / (2.0 * h);
                max_hess_error = max_hess_error.max((fd - hs[j][i]).abs() / hess_scale);
            }
        }
    }
    if min_value < 0.0 {
        return Err(Error::InvalidParams(format!("potential takes negative value {min_value}")));
    }
    if max_grad_error > 1e-6 || max_hess_error > 1e-6 {
        return Err(Error::InvalidParams(format!(
            "analytic derivatives disagree with finite differences (grad {max_grad_error:.2e}, hess {max_hess_error:.2e})"
        )));
    }
    let base = v.unperturbed();
    let mut manifold_grad: f64 = 0.0;
    let mut normal_hessian_min = f64::INFINITY;
    for x in base.manifold_samples(64) {
        let g = base.grad(&x);
        manifold_grad = manifold_grad.max((g[0] * g[0] + g[1] * g[1]).sqrt());
        let hs = base.hess(&x);
        let normal = match base.manifold() {
            CriticalManifoldTag::Point { .. } => min_eigenvalue(&hs, base.dim),
            _ => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let nv = [x[0] / r, x[1] / r];
                (0..2).map(|i| (0..2).map(|j| nv[i] * hs[i][j] * nv[j]).sum::<f64>()).sum()
            }
        };
        normal_hessian_min = normal_hessian_min.min(normal);
    }
    if manifold_grad >= 1e-10 {
        return Err(Error::InvalidParams(format!(
            "gradient {manifold_grad:.2e} on the declared critical manifold"
        )));
    }
    if normal_hessian_min.is_finite() && normal_hessian_min <= 1e-8 * hess_scale {
        return Err(Error::InvalidParams(format!(
            "degenerate normal Hessian {normal_hessian_min:.2e} on the declared manifold"
        )));
    }
    Ok(AdmissibilityReport {
        min_value,
        max_grad_error,
        max_hess_error,
        manifold_grad,
        normal_hessian_min,
        bounds,
    })
}

fn min_eigenvalue(h: &Matrix, dim: usize) -> f64 {
    if dim == 1 {
        return h[0][0];
    }
    let tr = h[0][0] + h[1][1];
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    0.5 * tr - (0.25 * tr * tr - det).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gaussian_well_values() {
        let v = make_gaussian_well(2.0, &[0.3], 0.5).unwrap();
        assert_eq!(v.eval(&[0.3, 0.0]), 0.0);
        assert_eq!(v.grad(&[0.3, 0.0])[0], 0.0);
        assert!((v.hess(&[0.3, 0.0])[0][0] - 2.0 * 2.0 / 0.25).abs() < 1e-14);
        assert!((v.eval(&[1e3, 0.0]) - 2.0).abs() < 1e-14);
        assert_eq!(v.bounds().sup_v, 2.0);
        let r = check_admissible(&v, 1).unwrap();
        assert!(r.min_value >= 0.0);
        assert_eq!(v.cup_length().unwrap(), 1);
    }

    #[test]
    fn gaussian_well_2d_hessian_is_isotropic() {
        let v = make_gaussian_well(1.5, &[0.1, -0.2], 0.7).unwrap();
        let h = v.hess(&[0.1, -0.2]);
        let expect = 2.0 * 1.5 / 0.49;
        assert!((h[0][0] - expect).abs() < 1e-13 && (h[1][1] - expect).abs() < 1e-13);
        assert_eq!(h[0][1], 0.0);
        check_admissible(&v, 2).unwrap();
    }

    #[test]
    fn ring_well_normal_curvature() {
        let (a, r0, w) = (1.0, 0.8, 0.5);
        let v = make_ring_well(a, r0, w).unwrap();
        assert!(v.eval(&[r0, 0.0]).abs() < 1e-15);
        let t: f64 = 1.1;
        assert!(v.eval(&[r0 * t.cos(), r0 * t.sin()]).abs() < 1e-15);
        let g = v.grad(&[r0, 0.0]);
        assert_eq!(g, [0.0, 0.0]);
        let h = v.hess(&[r0, 0.0]);
        assert!((h[0][0] - 8.0 * a * r0 * r0 / w.powi(4)).abs() < 1e-12);
        assert!(h[1][1].abs() < 1e-15);
        let r = check_admissible(&v, 3).unwrap();
        assert!(r.normal_hessian_min > 0.0);
        assert_eq!(v.cup_length().unwrap(), 2);
    }

    #[test]
    fn broken_ring_has_two_nondegenerate_points_on_the_circle() {
        let (r0, bw) = (0.4, 1.0);
        let v = make_broken_ring(1.0, r0, 0.5, bw).unwrap();
        check_admissible(&v, 4).unwrap();
        let along = |phi: f64| v.eval(&[r0 * phi.cos(), r0 * phi.sin()]);
        let h = 1e-3;
        let second = |phi: f64| (along(phi + h) - 2.0 * along(phi) + along(phi - h)) / (h * h);
        let first = |phi: f64| (along(phi + h) - along(phi - h)) / (2.0 * h);
        for phi in [0.0, std::f64::consts::PI] {
            assert!(first(phi).abs() < 1e-12);
            assert_eq!(v.grad(&[r0 * phi.cos(), 0.0])[1], 0.0);
        }
        assert!(second(0.0) < -1e-4);
        assert!(second(std::f64::consts::PI) > 1e-5);
        for k in 1..64 {
            let phi = std::f64::consts::PI * k as f64 / 64.0;
            assert!(first(phi) < 0.0, "angular derivative changes sign at {phi}");
        }
    }

    #[test]
    fn cup_lengths() {
        assert_eq!(cup_length_lookup(&CriticalManifoldTag::Point { location: vec![0.0] }).unwrap(), 1);
        let s1 = CriticalManifoldTag::Sphere { center: vec![0.0, 0.0], radius: 1.0, k: 1 };
        assert_eq!(cup_length_lookup(&s1).unwrap(), 2);
        assert_eq!(cup_length_lookup(&CriticalManifoldTag::Torus { k: 2 }).unwrap(), 3);
        assert!(matches!(
            cup_length_lookup(&CriticalManifoldTag::None),
            Err(Error::UnsupportedManifold(_))
        ));
        let s0 = CriticalManifoldTag::Sphere { center: vec![0.0], radius: 1.0, k: 0 };
        assert!(cup_length_lookup(&s0).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_gaussian_well(-1.0, &[0.0], 1.0).is_err());
        assert!(make_gaussian_well(1.0, &[0.0, 0.0, 0.0], 1.0).is_err());
        assert!(make_ring_well(1.0, 0.0, 1.0).is_err());
        assert!(make_constant(1, -0.5).is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_and_bounded(x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let pots = [
                make_gaussian_well(1.3, &[0.2, 0.1], 0.6).unwrap(),
                make_ring_well(0.9, 1.0, 0.4).unwrap(),
                make_broken_ring(0.9, 1.0, 0.4, 1.0).unwrap(),
            ];
            for v in &pots {
                let p = [x, y];
                let b = v.bounds();
                let val = v.eval(&p);
                prop_assert!(val >= 0.0 && val <= b.sup_v + 1e-12);
                let g = v.grad(&p);
                prop_assert!((g[0] * g[0] + g[1] * g[1]).sqrt() <= b.sup_grad * 1.01 + 1e-12);
                // a, b >= 1 follows from V >= 0
                prop_assert!((1.0 + val).powf(1.0 / 1.5) >= 1.0);
            }
        }
    }
}
