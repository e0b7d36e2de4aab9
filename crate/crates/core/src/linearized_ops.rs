//! Linearized operators at `U` and at `z_xi`, their lowest spectra, kernel
//! and Morse index, and coercivity on the complement of the tangent space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_ansatz_cached, AnsatzPoint, ProfileCache};
use crate::error::{Error, Result};
use crate::ground_state::GroundState;
use crate::linear::lobpcg::{lobpcg, LobpcgOptions};
use crate::par;
use crate::potential::Potential;
use crate::spectral::{
    hs_power, l2_dot, l2_norm, partial, riesz, shifted_frac_laplacian, FracParams, Field,
};

/// `v -> (-Delta)^s v + v + V v - p |z|^{p-1} v`, symmetric in `L^2`.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    pub base: String,
    pub params: FracParams,
    profile: Field,
    potential: Option<Field>,
    weight: Field,
}

impl LinearOperator {
    pub fn new(base: impl Into<String>, params: FracParams, profile: Field, potential: Option<Field>) -> Self {
        let p = params.p;
        let weight = profile.map(|z| p * z.abs().powf(p - 1.0));
        LinearOperator { base: base.into(), params, profile, potential, weight }
    }

    /// `L_0` at the ground state.
    pub fn at_ground_state(gs: &GroundState) -> Self {
        Self::new("ground_state", gs.params, gs.u.clone(), None)
    }

    /// The operator of `D^2 f_eps(z_xi)` in strong form.
    pub fn at_ansatz(ap: &AnsatzPoint) -> Self {
        Self::new(
            format!("ansatz eps={} xi={:?}", ap.eps, &ap.xi[..ap.dim()]),
            ap.params,
            ap.z.clone(),
            Some(ap.potential_field.clone()),
        )
    }

    /// Same base point with the potential frozen at `V(eps xi)`.
    pub fn frozen_at(ap: &AnsatzPoint) -> Self {
        Self::new(
            format!("frozen vbar={}", ap.vbar),
            ap.params,
            ap.z.clone(),
            Some(Field::constant(ap.z.grid(), ap.vbar)),
        )
    }

    pub fn profile(&self) -> &Field {
        &self.profile
    }

    pub fn apply(&self, v: &Field) -> Field {
        let mut out = shifted_frac_laplacian(v, self.params.s);
        let mut pot = self.weight.zip_map(v, |w, x| -w * x);
        if let Some(vf) = &self.potential {
            pot = pot.add(&vf.zip_map(v, |a, b| a * b));
        }
        out.axpy_in_place(1.0, &pot);
        out
    }

    /// `M^{-1/2} S M^{-1/2}` with `M = (-Delta)^s + 1`: the operator of the
    /// `H^s` form, conjugated to be symmetric in `L^2`.
    pub fn riesz_apply(&self, u: &Field) -> Field {
        let s = self.params.s;
        hs_power(&self.apply(&hs_power(u, s, -0.5)), s, -0.5)
    }

    /// `||v||_s^2 + int V v^2 - p int |z|^{p-1} v^2`.
    pub fn quadratic_form(&self, v: &Field) -> f64 {
        let hs = crate::spectral::hs_norm(v, self.params.s).powi(2);
        let w = v.grid().cell_volume();
        let mut pot: f64 = self.weight.values().iter().zip(v.values()).map(|(a, b)| -a * b * b).sum();
        if let Some(vf) = &self.potential {
            pot += vf.values().iter().zip(v.values()).map(|(a, b)| a * b * b).sum::<f64>();
        }
        hs + pot * w
    }

    /// `|<A v, w> - <v, A w>| / (|v| |w|)`.
    pub fn symmetry_defect(&self, v: &Field, w: &Field) -> f64 {
        (l2_dot(&self.apply(v), w) - l2_dot(v, &self.apply(w))).abs() / (l2_norm(v) * l2_norm(w))
    }

    /// `|A d_i z| / |d_i z|` for each direction.
    pub fn kernel_residuals(&self) -> Vec<f64> {
        (0..self.profile.grid().dim())
            .map(|i| {
                let d = partial(&self.profile, i);
                l2_norm(&self.apply(&d)) / l2_norm(&d)
            })
            .collect()
    }
}

/// `H^s`-orthogonal projector onto the complement of `span(t_i)`:
/// `P g = g - sum c_i t_i`, `c = G^{-1} <t_j, g>_s`.
#[derive(Clone, Debug)]
pub struct HsProjector {
    s: f64,
    t: Vec<Field>,
    mt: Vec<Field>,
    gram_inv: DMatrix<f64>,
}

impl HsProjector {
    pub fn new(t: &[Field], s: f64) -> Result<Self> {
        let mt: Vec<Field> = t.iter().map(|f| shifted_frac_laplacian(f, s)).collect();
        let k = t.len();
        let gram = DMatrix::from_fn(k, k, |i, j| 0.5 * (l2_dot(&mt[i], &t[j]) + l2_dot(&t[i], &mt[j])));
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Contract("tangent vectors are linearly dependent".into()))?;
        Ok(HsProjector { s, t: t.to_vec(), mt, gram_inv })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Coefficients of the `H^s` projection of `g` onto `span(t_i)`.
    pub fn coefficients(&self, g: &Field) -> Vec<f64> {
        let rhs = DVector::from_iterator(self.t.len(), self.mt.iter().map(|m| l2_dot(m, g)));
        (&self.gram_inv * rhs).iter().copied().collect()
    }

    /// Coefficients when the pairing `<t_j, g>_s` is already known as
    /// `<t_j, e>_0` for a strong-form `e` with `g = M^{-1} e`.
    pub fn coefficients_from_strong(&self, e: &Field) -> Vec<f64> {
        let rhs = DVector::from_iterator(self.t.len(), self.t.iter().map(|t| l2_dot(t, e)));
        (&self.gram_inv * rhs).iter().copied().collect()
    }

    pub fn apply(&self, g: &Field) -> Field {
        let c = self.coefficients(g);
        let mut out = g.clone();
        for (ci, ti) in c.iter().zip(&self.t) {
            out.axpy_in_place(-ci, ti);
        }
        out
    }

    /// `L^2` adjoint `u - sum (M t_j) d_j`, `d = G^{-1} <t_i, u>_0`.
    pub fn adjoint(&self, u: &Field) -> Field {
        let d = self.coefficients_from_strong(u);
        let mut out = u.clone();
        for (di, mi) in d.iter().zip(&self.mt) {
            out.axpy_in_place(-di, mi);
        }
        out
    }

    pub fn tangents(&self) -> &[Field] {
        &self.t
    }

    pub fn order(&self) -> f64 {
        self.s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// Eigenproblem `S v = lambda v` in `L^2`.
    Strong,
    /// Eigenproblem `S v = lambda M v`, i.e. the `H^s` form.
    Riesz,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub form: Form,
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub eigenfields: Vec<Field>,
    pub residuals: Vec<f64>,
    pub kernel_residuals: Vec<f64>,
    pub morse_index: usize,
    /// Eigenvalues with `|lambda| < 1e-3`.
    pub near_zero: usize,
    /// `min |lambda|` over the computed eigenvalues.
    pub coercivity: f64,
    pub iterations: usize,
}

const NEAR_ZERO: f64 = 1e-3;

/// Lowest `m` eigenpairs of `op`, restricted to the complement of
/// `constraints`. In the strong form the constraints are `L^2`-orthogonality
/// conditions; in the Riesz form they are `H^s`-orthogonality conditions.
pub fn lowest_spectrum(op: &LinearOperator, m: usize, constraints: &[Field], form: Form) -> Result<SpectralReport> {
    lowest_spectrum_with(op, m, constraints, form, &LobpcgOptions::default())
}

pub fn lowest_spectrum_with(
    op: &LinearOperator,
    m: usize,
    constraints: &[Field],
    form: Form,
    opts: &LobpcgOptions,
) -> Result<SpectralReport> {
    if m == 0 || m > 20 {
        return Err(Error::Contract(format!("eigenvalue count must be in 1..=20, got {m}")));
    }
    let s = op.params.s;
    let grid = op.profile.grid().clone();
    let z = &op.profile;
    let mut initial = vec![z.clone()];
    for i in 0..grid.dim() {
        initial.push(partial(z, i));
    }
    let pairs = match form {
        Form::Strong => lobpcg(|v| op.apply(v), |r| riesz(r, s), &grid, m, &initial, constraints, opts)?,
        Form::Riesz => {
            let cons: Vec<Field> = constraints.iter().map(|c| hs_power(c, s, 0.5)).collect();
            let init: Vec<Field> = initial.iter().map(|c| hs_power(c, s, 0.5)).collect();
            let mut out = lobpcg(|u| op.riesz_apply(u), |r| r.clone(), &grid, m, &init, &cons, opts)?;
            out.vectors = out.vectors.iter().map(|u| hs_power(u, s, -0.5)).collect();
            out
        }
    };
    let morse_index = pairs.values.iter().filter(|&&l| l < -NEAR_ZERO).count();
    let near_zero = pairs.values.iter().filter(|&&l| l.abs() < NEAR_ZERO).count();
    let coercivity = pairs.values.iter().fold(f64::INFINITY, |a, l| a.min(l.abs()));
    Ok(SpectralReport {
        form,
        eigenvalues: pairs.values,
        eigenfields: pairs.vectors,
        residuals: pairs.residuals,
        kernel_residuals: op.kernel_residuals(),
        morse_index,
        near_zero,
        coercivity,
        iterations: pairs.iterations,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoercivityConstants {
    /// Lowest eigenvalue on the complement of `span{U, d_i U}`.
    pub with_profile: f64,
    /// Lowest eigenvalue on the complement of `span{phi_-1, d_i U}`.
    pub with_ground_mode: f64,
}

/// Projected coercivity of `L_0` for both choices of the excluded subspace.
pub fn projected_coercivity(op: &LinearOperator) -> Result<CoercivityConstants> {
    let z = op.profile();
    let grads: Vec<Field> = (0..z.grid().dim()).map(|i| partial(z, i)).collect();
    let negative = lowest_spectrum_with(op, 1, &grads, Form::Strong, &LobpcgOptions { guard: 2, ..Default::default() })?;
    let mut k1 = vec![z.clone()];
    k1.extend(grads.iter().cloned());
    let mut k2 = vec![negative.eigenfields[0].clone()];
    k2.extend(grads.iter().cloned());
    let a = lowest_spectrum(op, 1, &k1, Form::Strong)?;
    let b = lowest_spectrum(op, 1, &k2, Form::Strong)?;
    Ok(CoercivityConstants { with_profile: a.eigenvalues[0], with_ground_mode: b.eigenvalues[0] })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NegativeDirection {
    pub operator_form: f64,
    pub closed_form: f64,
    pub relative_gap: f64,
}

/// `D^2 F[z, z]` from the quadratic form of `op` and from
/// `-(p-1) int z^{p+1}`. Meaningful when `op` has a constant potential and
/// `z` solves the matching frozen equation.
pub fn negative_direction_check(op: &LinearOperator, z: &Field) -> NegativeDirection {
    let p = op.params.p;
    let operator_form = op.quadratic_form(z);
    let closed_form = -(p - 1.0)
        * z.values().iter().map(|v| v.abs().powf(p + 1.0)).sum::<f64>()
        * z.grid().cell_volume();
    NegativeDirection {
        operator_form,
        closed_form,
        relative_gap: (operator_form - closed_form).abs() / closed_form.abs(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoercivityRow {
    pub eps: f64,
    pub xi: Vec<f64>,
    /// `min |lambda|` of the projected `H^s` operator.
    pub projected: f64,
    /// `min |lambda|` without the projection.
    pub unprojected: f64,
    pub eigenvalues: Vec<f64>,
}

/// For each `eps`, places the spike at `xi = center / eps` (`center` in
/// original coordinates) and reports the coercivity of `L_{eps, xi}` on the
/// `H^s` complement of its tangent space.
pub fn coercivity_sweep(v: &Potential, gs: &GroundState, center: &[f64], eps_list: &[f64]) -> Result<Vec<CoercivityRow>> {
    let cache = ProfileCache::new();
    par::try_map(eps_list, |&eps| {
        let xi: Vec<f64> = center.iter().map(|c| c / eps).collect();
        let ap = build_ansatz_cached(&cache, gs, v, &xi, eps)?;
        let op = LinearOperator::at_ansatz(&ap);
        let opts = LobpcgOptions { guard: 4, ..Default::default() };
        let proj = lowest_spectrum_with(&op, 3, &ap.tangent, Form::Riesz, &opts)?;
        let free = lowest_spectrum_with(&op, 3, &[], Form::Riesz, &opts)?;
        Ok(CoercivityRow {
            eps,
            xi,
            projected: proj.coercivity,
            unprojected: free.coercivity,
            eigenvalues: proj.eigenvalues,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::build_ansatz;
    use crate::ground_state::{solve_ground_state, GroundStateOptions};
    use crate::potential::{make_constant, make_gaussian_well};
    use crate::spectral::{hs_norm, Grid};

    fn ground(s: f64, p: f64, l: f64, n: usize) -> GroundState {
        let params = FracParams::new(s, p, 1).unwrap();
        let g = Grid::new(1, n, l).unwrap();
        solve_ground_state(&params, &g, &GroundStateOptions::default()).unwrap()
    }

    #[test]
    fn free_operator_lowest_is_one() {
        let gs = ground(0.9, 3.0, 16.0, 256);
        let op = LinearOperator::new("free", gs.params, Field::zeros(gs.grid()), None);
        let r = lowest_spectrum(&op, 1, &[], Form::Strong).unwrap();
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn operator_is_symmetric() {
        let gs = ground(0.9, 3.0, 16.0, 512);
        let v = make_gaussian_well(0.5, &[0.0], 1.0).unwrap();
        let ap = build_ansatz(&gs, &v, &[2.0], 0.2).unwrap();
        let op = LinearOperator::at_ansatz(&ap);
        let a = Field::from_fn(gs.grid(), |x| (-(x[0] - 1.0).powi(2)).exp() * (2.0 * x[0]).cos());
        let b = Field::from_fn(gs.grid(), |x| (-(0.5 * x[0]).powi(2)).exp() * x[0]);
        assert!(op.symmetry_defect(&a, &b) < 1e-10);
        let direct = op.quadratic_form(&a);
        let via = l2_dot(&op.apply(&a), &a);
        assert!((direct - via).abs() < 1e-9 * direct.abs());
    }

    #[test]
    fn ground_state_kernel_and_morse_index() {
        let gs = ground(0.9, 3.0, 32.0, 1024);
        let op = LinearOperator::at_ground_state(&gs);
        let r = lowest_spectrum(&op, 3, &[], Form::Strong).unwrap();
        assert!(r.kernel_residuals[0] < 1e-4, "{:?}", r.kernel_residuals);
        assert_eq!(r.morse_index, 1, "{:?}", r.eigenvalues);
        assert_eq!(r.near_zero, 1, "{:?}", r.eigenvalues);
        assert!(r.eigenvalues[2] > 1e-2);
    }

    #[test]
    fn negative_direction_matches_closed_form() {
        let gs = ground(0.9, 3.0, 64.0, 2048);
        let op = LinearOperator::at_ground_state(&gs);
        let nd = negative_direction_check(&op, &gs.u);
        assert!(nd.operator_form < 0.0);
        assert!(nd.relative_gap < 1e-8, "{}", nd.relative_gap);
        let v = make_constant(1, 0.7).unwrap();
        let ap = build_ansatz(&gs, &v, &[3.0], 0.1).unwrap();
        let frozen = LinearOperator::frozen_at(&ap);
        let nd = negative_direction_check(&frozen, &ap.z);
        assert!(nd.relative_gap < 1e-8);
        // discrete frozen profile vs the rescaled discrete ground state
        let expect = -(gs.params.p - 1.0) * ap.b.powf(gs.params.p + 1.0) / ap.a * gs.power_integral;
        assert!((nd.closed_form - expect).abs() < 1e-5 * expect.abs(), "{} vs {expect}", nd.closed_form);
    }

    #[test]
    fn projector_is_idempotent() {
        let gs = ground(0.9, 3.0, 16.0, 512);
        let v = make_gaussian_well(0.5, &[0.0], 1.0).unwrap();
        let ap = build_ansatz(&gs, &v, &[2.0], 0.2).unwrap();
        let pr = HsProjector::new(&ap.tangent, 0.9).unwrap();
        let f = Field::from_fn(gs.grid(), |x| (-(x[0] - 1.5).powi(2)).exp());
        let once = pr.apply(&f);
        let twice = pr.apply(&once);
        assert!(hs_norm(&twice.sub(&once), 0.9) <= 1e-12 * hs_norm(&f, 0.9));
        assert!(pr.coefficients(&once).iter().all(|c| c.abs() < 1e-12));
        let g = Field::from_fn(gs.grid(), |x| x[0] * (-(x[0] * x[0])).exp());
        let lhs = l2_dot(&pr.apply(&f), &g);
        let rhs = l2_dot(&f, &pr.adjoint(&g));
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn translation_mode_removed_by_projection() {
        let gs = ground(0.9, 3.0, 32.0, 1024);
        let v = make_constant(1, 0.0).unwrap();
        let rows = coercivity_sweep(&v, &gs, &[0.0], &[0.2, 0.1]).unwrap();
        assert!(rows[0].unprojected < 1e-6, "{:?}", rows[0]);
        assert!(rows[0].projected > 1e-2, "{:?}", rows[0]);
        assert!((rows[0].projected - rows[1].projected).abs() < 1e-8);
    }
}
