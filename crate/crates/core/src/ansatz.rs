//! The approximate solutions `z = b U(a (x - xi))` with `a`, `b` frozen at
//! `V(eps xi)`, their tangent vectors in `xi`, and residual diagnostics of
//! `f_eps` at `z`.
//!
//! On the grid, the frozen profile is the discrete even solution of
//! `(-Delta)^s Z + (1 + vbar) Z = Z^p`, obtained by continuation from the
//! ground state, and the shift by `xi` is a spectral phase. Its derivative in
//! `vbar` solves the linearized equation, which gives the dilation and
//! amplitude parts of the tangent vectors.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_state::{shifted_residual, solve_frozen, GroundState, GroundStateOptions};
use crate::linear::minres::{minres, MinresOptions};
use crate::potential::{Point, Potential};
use crate::spectral::{
    dual_norm, hs_norm, l2_dot, nonlinear_power, partial, pointwise_power, shifted_apply,
    shifted_frac_laplacian, shifted_solve, strip_nyquist, translate, FracParams, Field, PowerJacobian,
};

/// `a = (1 + V)^{1/(2s)}`, `b = (1 + V)^{1/(p-1)}`.
pub fn scalings(v_at: f64, s: f64, p: f64) -> (f64, f64) {
    let base = 1.0 + v_at;
    (base.powf(1.0 / (2.0 * s)), base.powf(1.0 / (p - 1.0)))
}

/// Centered frozen profile and its first two derivatives in `vbar`.
#[derive(Clone, Debug)]
pub struct FrozenProfile {
    pub vbar: f64,
    pub a: f64,
    pub b: f64,
    pub z: Field,
    pub dz: Field,
    pub d2z: Field,
    pub residual: f64,
}

/// Frozen profiles keyed by `vbar`, shared across nearby evaluations.
#[derive(Default)]
pub struct ProfileCache {
    map: Mutex<HashMap<u64, Arc<FrozenProfile>>>,
    base: OnceLock<Arc<FrozenProfile>>,
}

const CACHE_LIMIT: usize = 256;

impl ProfileCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, gs: &GroundState, vbar: f64) -> Result<Arc<FrozenProfile>> {
        let key = vbar.to_bits();
        if let Some(p) = self.map.lock().expect("profile cache poisoned").get(&key) {
            return Ok(p.clone());
        }
        let base = match self.base.get() {
            Some(b) => b.clone(),
            None => {
                let b = Arc::new(frozen_profile(gs, 0.0)?);
                self.base.get_or_init(|| b).clone()
            }
        };
        let prof = Arc::new(frozen_profile_from(gs, vbar, &base)?);
        let mut map = self.map.lock().expect("profile cache poisoned");
        if map.len() >= CACHE_LIMIT {
            map.clear();
        }
        map.insert(key, prof.clone());
        Ok(prof)
    }
}

fn linear_opts() -> MinresOptions {
    MinresOptions { rtol: 1e-12, atol: 0.0, max_iter: 2000 }
}

/// Solves the frozen equation at `vbar` and the two derivative equations
/// `L D = -Z`, `L D2 = -2 D + p (p-1) Z^{p-2} D^2` with
/// `L = (-Delta)^s + 1 + vbar - p Z^{p-1}`.
pub fn frozen_profile(gs: &GroundState, vbar: f64) -> Result<FrozenProfile> {
    if vbar == 0.0 {
        return with_derivatives(gs.params, 0.0, gs.u.clone(), gs.residual_norm);
    }
    let base = frozen_profile(gs, 0.0)?;
    frozen_profile_from(gs, vbar, &base)
}

/// Newton's method from the second-order continuation of `base` to `vbar`,
/// falling back to the stabilized fixed point from `b U` when Newton stalls.
pub fn frozen_profile_from(gs: &GroundState, vbar: f64, base: &FrozenProfile) -> Result<FrozenProfile> {
    let params = gs.params;
    if vbar == base.vbar {
        return Ok(base.clone());
    }
    if !(vbar >= 0.0 && vbar.is_finite()) {
        return Err(Error::InputDomain(format!("frozen potential value must be >= 0, got {vbar}")));
    }
    let dv = vbar - base.vbar;
    let mut seed = base.z.clone();
    seed.axpy_in_place(dv, &base.dz);
    seed.axpy_in_place(0.5 * dv * dv, &base.d2z);
    let (z, residual) = match newton_frozen(&params, vbar, seed)? {
        Some(found) => found,
        None => {
            let (_, b) = scalings(vbar, params.s, params.p);
            let opts = GroundStateOptions { iterate_tol: 1e-13, ..Default::default() };
            let (z, _, res) = solve_frozen(&params, vbar, gs.u.scale(b), &opts)?;
            (z, res)
        }
    };
    with_derivatives(params, vbar, z, residual)
}

const NEWTON_STEPS: usize = 12;

fn newton_frozen(params: &FracParams, vbar: f64, seed: Field) -> Result<Option<(Field, f64)>> {
    let (s, p, c) = (params.s, params.p, 1.0 + vbar);
    let mut z = strip_nyquist(&seed).symmetrized();
    let mut res = dual_norm(&shifted_residual(&z, params, c)?, s);
    let target = 1e-12 * hs_norm(&z, s).max(1.0);
    for _ in 0..NEWTON_STEPS {
        if res < target {
            break;
        }
        let e = shifted_residual(&z, params, c)?.symmetrized();
        let jac = PowerJacobian::new(&z, p)?;
        let op = |v: &Field| shifted_apply(v, s, c).sub(&jac.apply(v));
        let forcing = MinresOptions { rtol: (0.1 * target / res).clamp(1e-12, 1e-2), ..linear_opts() };
        let step = match minres(op, |v| shifted_solve(v, s, c), &e, None, &forcing) {
            Ok(out) => out.solution,
            Err(_) => return Ok(None),
        };
        let next = z.sub(&step).symmetrized();
        let next_res = dual_norm(&shifted_residual(&next, params, c)?, s);
        if !(next_res < res) {
            break;
        }
        z = next;
        res = next_res;
    }
    if res > 1e-10 || z.min() < -1e-10 {
        return Ok(None);
    }
    Ok(Some((z, res)))
}

fn with_derivatives(params: FracParams, vbar: f64, z: Field, residual: f64) -> Result<FrozenProfile> {
    let (a, b) = scalings(vbar, params.s, params.p);
    let c = 1.0 + vbar;
    let s = params.s;
    let p = params.p;
    let jac = PowerJacobian::new(&z, p)?;
    let op = |v: &Field| shifted_apply(v, s, c).sub(&jac.apply(v));
    let pre = |v: &Field| shifted_solve(v, s, c);
    let dz = minres(op, pre, &z.scale(-1.0), None, &linear_opts())?.solution.symmetrized();
    let rhs = dz.scale(-2.0).add(&jac.second(&dz));
    let d2z = minres(op, pre, &rhs, None, &linear_opts())?.solution.symmetrized();
    Ok(FrozenProfile { vbar, a, b, z, dz, d2z, residual })
}

#[derive(Clone, Debug)]
pub struct AnsatzPoint {
    pub params: FracParams,
    pub xi: Point,
    pub eps: f64,
    pub a: f64,
    pub b: f64,
    /// `V(eps xi)`, its gradient and Hessian.
    pub vbar: f64,
    pub grad_v: Point,
    pub hess_v: [[f64; 2]; 2],
    pub z: Field,
    /// `d z / d xi_i`.
    pub tangent: Vec<Field>,
    /// `|| D f_eps(z) ||_s`.
    pub residual: f64,
    /// `V(eps x)` on the grid.
    pub potential_field: Field,
    /// Shifted `dZ / d vbar` and `d^2 Z / d vbar^2`.
    pub dz: Field,
    pub d2z: Field,
}

/// Builds `z_xi` and its tangents on the ground-state grid.
pub fn build_ansatz(gs: &GroundState, v: &Potential, xi: &[f64], eps: f64) -> Result<AnsatzPoint> {
    build_ansatz_cached(&ProfileCache::new(), gs, v, xi, eps)
}

pub fn build_ansatz_cached(
    cache: &ProfileCache,
    gs: &GroundState,
    v: &Potential,
    xi: &[f64],
    eps: f64,
) -> Result<AnsatzPoint> {
    let grid = gs.grid();
    let n = grid.dim();
    if v.dim != n || xi.len() != n {
        return Err(Error::Contract(format!(
            "dimension mismatch: grid {n}, potential {}, xi {}",
            v.dim,
            xi.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InputDomain(format!("eps must be positive, got {eps}")));
    }
    let l = grid.half_width();
    let mut point = [0.0; 2];
    for (i, &x) in xi.iter().enumerate() {
        if !(x.abs() <= 0.75 * l) {
            return Err(Error::Placement(format!(
                "xi[{i}] = {x} is within 0.25 L of the box boundary (L = {l})"
            )));
        }
        point[i] = x;
    }
    let scaled = [eps * point[0], eps * point[1]];
    let vbar = v.eval(&scaled);
    let grad_v = v.grad(&scaled);
    let hess_v = v.hess(&scaled);
    let prof = cache.get(gs, vbar)?;
    let z = translate(&prof.z, point);
    let dz = translate(&prof.dz, point);
    let d2z = translate(&prof.d2z, point);
    let tangent = (0..n)
        .map(|i| dz.scale(eps * grad_v[i]).sub(&partial(&z, i)))
        .collect();
    let potential_field = v.sample(grid, eps);
    let residual = dual_norm(&f_eps_gradient(&z, &potential_field, &gs.params)?, gs.params.s);
    Ok(AnsatzPoint {
        params: gs.params,
        xi: point,
        eps,
        a: prof.a,
        b: prof.b,
        vbar,
        grad_v,
        hess_v,
        z,
        tangent,
        residual,
        potential_field,
        dz,
        d2z,
    })
}

impl AnsatzPoint {
    pub fn dim(&self) -> usize {
        self.z.grid().dim()
    }

    /// The three parts of `d z / d xi_i`: amplitude, dilation and shift.
    pub fn tangent_parts(&self, i: usize) -> [Field; 3] {
        let p = self.params.p;
        let g = self.eps * self.grad_v[i];
        let amp_rate = 1.0 / ((p - 1.0) * (1.0 + self.vbar));
        let z1 = self.z.scale(g * amp_rate);
        let z2 = self.dz.scale(g).sub(&z1);
        let z3 = partial(&self.z, i).scale(-1.0);
        [z1, z2, z3]
    }

    /// `d^2 z / d xi_i d xi_j`.
    pub fn tangent_derivative(&self, i: usize, j: usize) -> Field {
        let e = self.eps;
        let (gi, gj) = (self.grad_v[i], self.grad_v[j]);
        let mut out = partial(&partial(&self.z, i), j);
        out.axpy_in_place(e * e * self.hess_v[i][j], &self.dz);
        out.axpy_in_place(e * e * gi * gj, &self.d2z);
        out.axpy_in_place(-e * gi, &partial(&self.dz, j));
        out.axpy_in_place(-e * gj, &partial(&self.dz, i));
        out
    }

    /// `|| d_xi z + d_x z ||_s` maximized over directions.
    pub fn tangent_gap(&self) -> f64 {
        (0..self.dim())
            .map(|i| hs_norm(&self.tangent[i].add(&partial(&self.z, i)), self.params.s))
            .fold(0.0, f64::max)
    }

    /// Displacement `x - xi` wrapped to the periodic box.
    pub fn displacement(&self) -> Vec<[f64; 2]> {
        let g = self.z.grid();
        let period = 2.0 * g.half_width();
        let wrap = |d: f64| d - period * (d / period).round();
        (0..g.len())
            .map(|k| {
                let x = g.point(k);
                let mut d = [wrap(x[0] - self.xi[0]), 0.0];
                if g.dim() == 2 {
                    d[1] = wrap(x[1] - self.xi[1]);
                }
                d
            })
            .collect()
    }

    /// `int |x - xi|^4 z^2`.
    pub fn fourth_moment(&self) -> f64 {
        let w = self.z.grid().cell_volume();
        self.displacement()
            .iter()
            .zip(self.z.values())
            .map(|(d, z)| (d[0] * d[0] + d[1] * d[1]).powi(2) * z * z)
            .sum::<f64>()
            * w
    }
}

/// Strong form of `D f_eps(u)`: `(-Delta)^s u + u + V(eps x) u - |u|^{p-1} u`.
pub fn f_eps_gradient(u: &Field, potential_field: &Field, params: &FracParams) -> Result<Field> {
    let mut out = shifted_frac_laplacian(u, params.s);
    out.axpy_in_place(-1.0, &nonlinear_power(u, params.p)?);
    let vu = potential_field.zip_map(u, |a, b| a * b);
    out.axpy_in_place(1.0, &vu);
    Ok(out)
}

/// `f_eps(u) = 1/2 ||u||_s^2 + 1/2 int V(eps x) u^2 - 1/(p+1) int |u|^{p+1}`.
pub fn f_eps(u: &Field, potential_field: &Field, params: &FracParams) -> f64 {
    let w = u.grid().cell_volume();
    let pot: f64 = potential_field
        .values()
        .iter()
        .zip(u.values())
        .map(|(v, x)| v * x * x)
        .sum::<f64>()
        * w;
    let pw: f64 = u.values().iter().map(|x| x.abs().powf(params.p + 1.0)).sum::<f64>() * w;
    0.5 * hs_norm(u, params.s).powi(2) + 0.5 * pot - pw / (params.p + 1.0)
}

/// `|| D f_eps(z) ||_s`.
pub fn residual_f_eps(ap: &AnsatzPoint) -> Result<f64> {
    Ok(dual_norm(&f_eps_gradient(&ap.z, &ap.potential_field, &ap.params)?, ap.params.s))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PotentialWeights {
    /// `int |V(eps x) - V(eps xi)|^2 z^2`.
    pub i1: f64,
    /// `max_i int |V(eps x) - V(eps xi)|^2 |d_i z|^2`.
    pub i2: f64,
}

pub fn potential_difference_weights(ap: &AnsatzPoint) -> PotentialWeights {
    let w = ap.z.grid().cell_volume();
    let diff2 = ap.potential_field.map(|v| (v - ap.vbar).powi(2));
    let i1 = l2_dot(&diff2, &ap.z.map(|z| z * z));
    let i2 = (0..ap.dim())
        .map(|i| {
            let d = partial(&ap.z, i);
            diff2.values().iter().zip(d.values()).map(|(a, b)| a * b * b).sum::<f64>() * w
        })
        .fold(0.0, f64::max);
    PotentialWeights { i1, i2 }
}

/// `|u|^{p-1} u` without dealiasing; matches the quadrature used in `f_eps`.
pub fn power_pointwise(u: &Field, p: f64) -> Field {
    pointwise_power(u, p)
}
