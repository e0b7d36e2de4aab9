//! The corrector `w(eps, xi)` orthogonal to the tangent space of the
//! approximate manifold, and the reduced functional `Phi(xi) = f_eps(z + w)`.

use serde::{Deserialize, Serialize};

use crate::ansatz::{build_ansatz_cached, f_eps, f_eps_gradient, AnsatzPoint, ProfileCache};
use crate::error::{Error, Result};
use crate::ground_state::GroundState;
use crate::linear::minres::{minres, MinresOptions};
use crate::linearized_ops::{HsProjector, LinearOperator};
use crate::potential::Potential;
use crate::spectral::{dual_norm, hs_dot, hs_norm, l2_dot, nonlinear_power, riesz, FracParams, Field};

/// `R(z, w) = -(N(z + w) - N(z) - p |z|^{p-1} w)` with `N(u) = |u|^{p-1} u`.
pub fn remainder_r(z: &Field, w: &Field, p: f64) -> Result<Field> {
    z.ensure_same_grid(w)?;
    let full = nonlinear_power(&z.add(w), p)?;
    let base = nonlinear_power(z, p)?;
    let lin = z.zip_map(w, |a, b| p * a.abs().powf(p - 1.0) * b);
    Ok(full.sub(&base).sub(&lin).scale(-1.0))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FixedPointOptions {
    /// Trust-ball radius in `H^s`; `None` means `0.5 ||z||_s`.
    pub delta: Option<f64>,
    /// Iterate distance in `H^s`.
    pub tol: f64,
    pub max_iter: usize,
    /// `min(1, p - 1)`.
    pub sigma: f64,
    pub krylov_rtol: f64,
    pub krylov_max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            delta: None,
            tol: 1e-9,
            max_iter: 60,
            sigma: 1.0,
            krylov_rtol: 1e-10,
            krylov_max_iter: 3000,
        }
    }
}

impl FixedPointOptions {
    pub fn for_params(params: &FracParams) -> Self {
        FixedPointOptions { sigma: params.sigma(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::InvalidParams(format!("delta must be positive, got {d}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParams(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::InvalidParams(format!("sigma must be in (0, 1], got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrectorResult {
    #[serde(skip)]
    pub w: Field,
    pub iterations: usize,
    pub contraction_estimates: Vec<f64>,
    pub w_norm: f64,
    /// `max_i |<w, t_i>_s| / (||w||_s ||t_i||_s)`.
    pub orthogonality_defect: f64,
    /// `|| P D f_eps(z + w) ||_s`.
    pub equation_residual: f64,
    pub krylov_iterations: usize,
}

/// Fixed point `w = -L^{-1} P (D f_eps(z) + R(z, w))` on the `H^s` complement
/// of the tangent space, starting from `w = 0`.
pub fn solve_corrector(ap: &AnsatzPoint, opts: &FixedPointOptions) -> Result<CorrectorResult> {
    solve_corrector_from(ap, opts, None)
}

/// As [`solve_corrector`], from a given start (projected onto the complement).
pub fn solve_corrector_from(ap: &AnsatzPoint, opts: &FixedPointOptions, start: Option<&Field>) -> Result<CorrectorResult> {
    opts.validate()?;
    let params = ap.params;
    let s = params.s;
    let proj = HsProjector::new(&ap.tangent, s)?;
    let op = LinearOperator::at_ansatz(ap);
    let delta = opts.delta.unwrap_or(0.5 * hs_norm(&ap.z, s));
    let ez = f_eps_gradient(&ap.z, &ap.potential_field, &params)?;

    let reduced = |y: &Field| proj.adjoint(&op.apply(&proj.apply(y)));
    let precond = |r: &Field| proj.apply(&riesz(&proj.adjoint(r), s));
    let kopts = MinresOptions { rtol: opts.krylov_rtol, atol: 0.0, max_iter: opts.krylov_max_iter };

    let mut w = match start {
        Some(w0) => proj.apply(w0),
        None => Field::zeros(ap.z.grid()),
    };
    let mut y_prev: Option<Field> = None;
    let mut last_step: Option<f64> = None;
    let mut estimates = Vec::new();
    let mut above_one = 0;
    let mut krylov_iterations = 0;

    for it in 1..=opts.max_iter {
        let rhs = proj.adjoint(&ez.add(&remainder_r(&ap.z, &w, params.p)?));
        let out = minres(reduced, precond, &rhs, y_prev.as_ref(), &kopts)?;
        krylov_iterations += out.iterations;
        let y = out.solution;
        let w_new = proj.apply(&y).scale(-1.0);
        let step = hs_norm(&w_new.sub(&w), s);
        y_prev = Some(y);
        w = w_new;
        if let Some(prev) = last_step {
            let ratio = if prev > 0.0 { step / prev } else { 0.0 };
            estimates.push(ratio);
            above_one = if ratio >= 1.0 && step > opts.tol { above_one + 1 } else { 0 };
            if above_one >= 3 {
                return Err(Error::ContractionFailure(format!(
                    "contraction estimate >= 1 for 3 consecutive iterations at eps={}, xi={:?}: {:?}",
                    ap.eps,
                    &ap.xi[..ap.dim()],
                    &estimates[estimates.len() - 3..]
                )));
            }
        }
        last_step = Some(step);
        let w_norm = hs_norm(&w, s);
        if w_norm > delta {
            return Err(Error::ContractionFailure(format!(
                "iterate left the trust ball: ||w||_s = {w_norm:.3e} > delta = {delta:.3e} at eps={}",
                ap.eps
            )));
        }
        if step < opts.tol {
            let full = f_eps_gradient(&ap.z.add(&w), &ap.potential_field, &params)?;
            let equation_residual = dual_norm(&proj.adjoint(&full), s);
            if equation_residual > 10.0 * opts.tol {
                return Err(Error::NonConvergence {
                    iterations: it,
                    reason: format!("projected equation residual {equation_residual:.3e} exceeds 10 tol"),
                    history: estimates,
                });
            }
            let orthogonality_defect = if w_norm > 0.0 {
                ap.tangent
                    .iter()
                    .map(|t| hs_dot(&w, t, s).abs() / (w_norm * hs_norm(t, s)))
                    .fold(0.0, f64::max)
            } else {
                0.0
            };
            return Ok(CorrectorResult {
                w,
                iterations: it,
                contraction_estimates: estimates,
                w_norm,
                orthogonality_defect,
                equation_residual,
                krylov_iterations,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        reason: "corrector fixed point did not reach the iterate tolerance".into(),
        history: estimates,
    })
}

/// Relative `h` vs `h/2` discrepancy above which a derivative is rejected.
pub const RICHARDSON_LIMIT: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct CorrectorDerivative {
    /// `d w / d xi_j`, step `h / 2`.
    pub dw: Vec<Field>,
    /// `max_j ||D_h - D_{h/2}||_s / ||D_{h/2}||_s`.
    pub richardson_discrepancy: f64,
    /// `max_j ||d w / d xi_j||_s`.
    pub norm: f64,
}

/// Centered differences of the corrector in `xi` with steps `h` and `h/2`.
pub fn corrector_xi_derivative(
    cache: &ProfileCache,
    gs: &GroundState,
    v: &Potential,
    ap: &AnsatzPoint,
    opts: &FixedPointOptions,
    h: f64,
) -> Result<CorrectorDerivative> {
    let s = ap.params.s;
    let n = ap.dim();
    let w_at = |j: usize, step: f64| -> Result<Field> {
        let mut xi = ap.xi[..n].to_vec();
        xi[j] += step;
        let shifted = build_ansatz_cached(cache, gs, v, &xi, ap.eps)?;
        Ok(solve_corrector(&shifted, opts)?.w)
    };
    let mut dw = Vec::with_capacity(n);
    let mut discrepancy: f64 = 0.0;
    let mut norm: f64 = 0.0;
    for j in 0..n {
        let coarse = w_at(j, h)?.sub(&w_at(j, -h)?).scale(0.5 / h);
        let fine = w_at(j, 0.5 * h)?.sub(&w_at(j, -0.5 * h)?).scale(1.0 / h);
        let fine_norm = hs_norm(&fine, s);
        let gap = hs_norm(&coarse.sub(&fine), s);
        let floor = 10.0 * opts.tol / h;
        let rel = if fine_norm > floor { gap / fine_norm } else { 0.0 };
        if rel > RICHARDSON_LIMIT {
            return Err(Error::DerivativeUnreliable(format!(
                "h vs h/2 corrector derivative discrepancy {:.2}% in direction {j}",
                100.0 * rel
            )));
        }
        discrepancy = discrepancy.max(rel);
        norm = norm.max(fine_norm);
        dw.push(fine);
    }
    Ok(CorrectorDerivative { dw, richardson_discrepancy: discrepancy, norm })
}

/// `theta = (p+1)/(p-1) - n/(2s)` and `C1 = (1/2 - 1/(p+1)) int U^{p+1}`.
pub fn theta_and_constants(params: &FracParams, gs: &GroundState) -> (f64, f64) {
    let p = params.p;
    let theta = (p + 1.0) / (p - 1.0) - params.dim as f64 / (2.0 * params.s);
    let c1 = (0.5 - 1.0 / (p + 1.0)) * gs.power_integral;
    (theta, c1)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedSample {
    pub xi: Vec<f64>,
    pub eps: f64,
    pub phi: f64,
    /// Tangential-coefficient gradient.
    pub grad_phi: Vec<f64>,
    /// Centered differences of `phi` in `xi`, when computed.
    pub grad_phi_fd: Option<Vec<f64>>,
    /// `C1 (1 + V(eps xi))^theta`.
    pub leading: f64,
    /// `(1/2 - 1/(p+1)) int z^{p+1}` on the grid.
    pub leading_discrete: f64,
    pub gamma: f64,
    pub psi: f64,
    pub theta: f64,
    pub c1: f64,
    pub alpha: f64,
    /// `(grad_phi - alpha eps grad V) / eps^{1+sigma}`.
    pub varpi: Vec<f64>,
    /// `|phi - leading_discrete - gamma - psi| / |phi|`.
    pub identity_defect: f64,
    /// `|leading - leading_discrete| / |leading|`.
    pub scaling_defect: f64,
    pub w_norm: f64,
    pub residual_z: f64,
}

impl ReducedSample {
    pub fn grad_norm(&self) -> f64 {
        self.grad_phi.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn varpi_norm(&self) -> f64 {
        self.varpi.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// `Phi`, the tangential gradient and the three-term decomposition.
pub fn reduced_sample(ap: &AnsatzPoint, gs: &GroundState, cr: &CorrectorResult, sigma: f64) -> Result<ReducedSample> {
    let params = ap.params;
    let (s, p) = (params.s, params.p);
    let n = ap.dim();
    let z = &ap.z;
    let w = &cr.w;
    let u = z.add(w);
    let pf = &ap.potential_field;
    let phi = f_eps(&u, pf, &params);

    let e = f_eps_gradient(&u, pf, &params)?;
    let proj = HsProjector::new(&ap.tangent, s)?;
    let c = proj.coefficients_from_strong(&e);
    let grad_phi: Vec<f64> = (0..n)
        .map(|j| {
            let mut g = l2_dot(&e, &ap.tangent[j]);
            for (i, ci) in c.iter().enumerate() {
                g -= ci * hs_dot(w, &ap.tangent_derivative(i, j), s);
            }
            g
        })
        .collect();

    let (theta, c1) = theta_and_constants(&params, gs);
    let base = 1.0 + ap.vbar;
    let leading = c1 * base.powf(theta);
    let cell = z.grid().cell_volume();
    let sum = |f: &dyn Fn(usize) -> f64| (0..z.grid().len()).map(f).sum::<f64>() * cell;
    let (zv, wv, vv) = (z.values(), w.values(), pf.values());
    let leading_discrete = (0.5 - 1.0 / (p + 1.0)) * sum(&|k| zv[k].abs().powf(p + 1.0));
    let gamma = sum(&|k| {
        let dv = vv[k] - ap.vbar;
        0.5 * dv * zv[k] * zv[k] + dv * zv[k] * wv[k]
    });
    let psi = 0.5 * sum(&|k| vv[k] * wv[k] * wv[k]) + 0.5 * hs_norm(w, s).powi(2)
        - sum(&|k| {
            let (a, b) = (zv[k], wv[k]);
            (a + b).abs().powf(p + 1.0) - a.abs().powf(p + 1.0) - (p + 1.0) * a.abs().powf(p - 1.0) * a * b
        }) / (p + 1.0);

    let alpha = theta * c1 * base.powf(theta - 1.0);
    let scale = ap.eps.powf(1.0 + sigma);
    let varpi = (0..n).map(|j| (grad_phi[j] - alpha * ap.eps * ap.grad_v[j]) / scale).collect();
    Ok(ReducedSample {
        xi: ap.xi[..n].to_vec(),
        eps: ap.eps,
        phi,
        grad_phi,
        grad_phi_fd: None,
        leading,
        leading_discrete,
        gamma,
        psi,
        theta,
        c1,
        alpha,
        varpi,
        identity_defect: (phi - leading_discrete - gamma - psi).abs() / phi.abs(),
        scaling_defect: (leading - leading_discrete).abs() / leading.abs(),
        w_norm: cr.w_norm,
        residual_z: ap.residual,
    })
}

/// Step for centered differences of `Phi` in `xi`.
pub const PHI_FD_STEP: f64 = 1e-3;
/// Relative disagreement between the two gradients that is an error.
pub const GRADIENT_AGREEMENT: f64 = 0.05;

/// `Phi` at `xi`, computed from scratch.
pub fn reduced_value(
    cache: &ProfileCache,
    gs: &GroundState,
    v: &Potential,
    xi: &[f64],
    eps: f64,
    opts: &FixedPointOptions,
) -> Result<f64> {
    let ap = build_ansatz_cached(cache, gs, v, xi, eps)?;
    let cr = solve_corrector(&ap, opts)?;
    Ok(f_eps(&ap.z.add(&cr.w), &ap.potential_field, &ap.params))
}

/// Reduced sample with both gradients; fails when they disagree by more
/// than 5% beyond an absolute floor of `gradient_floor`.
pub fn reduced_value_and_gradient(
    cache: &ProfileCache,
    gs: &GroundState,
    v: &Potential,
    ap: &AnsatzPoint,
    cr: &CorrectorResult,
    opts: &FixedPointOptions,
    gradient_floor: f64,
) -> Result<ReducedSample> {
    let mut sample = reduced_sample(ap, gs, cr, opts.sigma)?;
    let n = ap.dim();
    let h = PHI_FD_STEP;
    let mut fd = Vec::with_capacity(n);
    for j in 0..n {
        let mut plus = sample.xi.clone();
        let mut minus = sample.xi.clone();
        plus[j] += h;
        minus[j] -= h;
        let fp = reduced_value(cache, gs, v, &plus, ap.eps, opts)?;
        let fm = reduced_value(cache, gs, v, &minus, ap.eps, opts)?;
        fd.push((fp - fm) / (2.0 * h));
    }
    let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let gap: f64 = norm(&fd.iter().zip(&sample.grad_phi).map(|(a, b)| a - b).collect::<Vec<_>>());
    let size = norm(&fd).max(norm(&sample.grad_phi));
    if gap > GRADIENT_AGREEMENT * size + gradient_floor {
        return Err(Error::GradientInconsistency { fd, tangential: sample.grad_phi });
    }
    sample.grad_phi_fd = Some(fd);
    Ok(sample)
}

/// Default absolute floor for the gradient comparison: the finite-difference
/// error of `Phi` induced by the corrector tolerance.
pub fn default_gradient_floor(opts: &FixedPointOptions) -> f64 {
    10.0 * opts.tol / PHI_FD_STEP * 1e-2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::build_ansatz;
    use crate::ground_state::{solve_ground_state, GroundStateOptions};
    use crate::potential::{make_constant, make_gaussian_well};
    use crate::spectral::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ground(l: f64, n: usize) -> GroundState {
        let params = FracParams::new(0.9, 3.0, 1).unwrap();
        let g = Grid::new(1, n, l).unwrap();
        solve_ground_state(&params, &g, &GroundStateOptions::default()).unwrap()
    }

    fn opts(gs: &GroundState) -> FixedPointOptions {
        FixedPointOptions::for_params(&gs.params)
    }

    #[test]
    fn theta_examples() {
        let gs = ground(16.0, 256);
        let (theta, c1) = theta_and_constants(&gs.params, &gs);
        assert!((theta - (2.0 - 1.0 / 1.8)).abs() < 1e-14);
        assert!(c1 > 0.0);
        let bo = FracParams::new(0.5, 2.0, 1).unwrap();
        let th = (bo.p + 1.0) / (bo.p - 1.0) - 1.0 / (2.0 * bo.s);
        assert_eq!(th, 2.0);
    }

    #[test]
    fn remainder_is_second_order() {
        let gs = ground(32.0, 1024);
        assert_eq!(remainder_r(&gs.u, &Field::zeros(gs.grid()), 3.0).unwrap().max_abs(), 0.0);
        let w = Field::from_fn(gs.grid(), |x| (-(x[0] - 0.5).powi(2)).exp() * (1.0 + 0.3 * x[0]));
        let ts = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
        let vals: Vec<f64> = ts
            .iter()
            .map(|&t| dual_norm(&remainder_r(&gs.u, &w.scale(t), 3.0).unwrap(), 0.9))
            .collect();
        let fit = crate::fit::log_log_fit(&ts, &vals).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.1, "{}", fit.slope);
    }

    #[test]
    fn remainder_lipschitz_scales_with_radius() {
        let gs = ground(32.0, 1024);
        let s = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut random_field = |r: f64| {
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = Field::from_fn(gs.grid(), |x| {
                c.iter()
                    .enumerate()
                    .map(|(k, ck)| ck * (-(x[0] - k as f64 + 1.5).powi(2)).exp())
                    .sum()
            });
            let norm = hs_norm(&f, s);
            f.scale(r / norm)
        };
        let mut worst = [0.0f64; 2];
        for (slot, radius) in [0.1, 0.01].into_iter().enumerate() {
            for _ in 0..25 {
                let w1 = random_field(radius);
                let w2 = random_field(radius);
                let num = dual_norm(&remainder_r(&gs.u, &w2, 3.0).unwrap().sub(&remainder_r(&gs.u, &w1, 3.0).unwrap()), s);
                let den = hs_norm(&w2.sub(&w1), s) * hs_norm(&w1, s).max(hs_norm(&w2, s));
                worst[slot] = worst[slot].max(num / den);
            }
        }
        assert!(worst[1] <= 2.0 * worst[0], "{worst:?}");
    }

    #[test]
    fn flat_potential_gives_zero_corrector() {
        let gs = ground(32.0, 1024);
        let v = make_constant(1, 0.0).unwrap();
        let ap = build_ansatz(&gs, &v, &[1.0], 0.1).unwrap();
        let cr = solve_corrector(&ap, &opts(&gs)).unwrap();
        assert!(cr.w_norm < 1e-10, "{}", cr.w_norm);
        let r = reduced_sample(&ap, &gs, &cr, 1.0).unwrap();
        let (_, c1) = theta_and_constants(&gs.params, &gs);
        assert!((r.phi - c1).abs() < 1e-8 * c1);
        assert!(r.grad_norm() < 1e-9);
    }

    #[test]
    fn corrector_is_orthogonal_and_unique() {
        let gs = ground(64.0, 2048);
        let v = make_gaussian_well(0.5, &[0.0], 1.0).unwrap();
        let o = opts(&gs);
        let ap = build_ansatz(&gs, &v, &[5.0], 0.1).unwrap();
        let cr = solve_corrector(&ap, &o).unwrap();
        assert!(cr.orthogonality_defect < 1e-8);
        assert!(*cr.contraction_estimates.last().unwrap() < 1.0);
        assert!(cr.equation_residual <= 10.0 * o.tol);
        let bump = Field::from_fn(gs.grid(), |x| 0.05 * (-(x[0] - 4.0).powi(2)).exp());
        let other = solve_corrector_from(&ap, &o, Some(&bump)).unwrap();
        assert!(hs_norm(&other.w.sub(&cr.w), 0.9) < 10.0 * o.tol);

        let e = f_eps_gradient(&ap.z.add(&cr.w), &ap.potential_field, &ap.params).unwrap();
        let proj = HsProjector::new(&ap.tangent, 0.9).unwrap();
        let tangential = dual_norm(&e, 0.9);
        let orthogonal = dual_norm(&proj.adjoint(&e), 0.9);
        assert!(orthogonal <= 10.0 * o.tol && tangential > orthogonal);
    }

    #[test]
    fn decomposition_and_gradients_agree() {
        let gs = ground(64.0, 2048);
        let v = make_gaussian_well(0.5, &[0.0], 1.0).unwrap();
        let o = opts(&gs);
        let cache = ProfileCache::new();
        let ap = build_ansatz_cached(&cache, &gs, &v, &[5.0], 0.1).unwrap();
        let cr = solve_corrector(&ap, &o).unwrap();
        let r = reduced_value_and_gradient(&cache, &gs, &v, &ap, &cr, &o, default_gradient_floor(&o)).unwrap();
        assert!(r.identity_defect < 1e-9, "{}", r.identity_defect);
        let fd = r.grad_phi_fd.as_ref().unwrap();
        assert!((fd[0] - r.grad_phi[0]).abs() < 1e-3 * r.grad_phi[0].abs(), "{fd:?} {:?}", r.grad_phi);
    }

    #[test]
    fn corrector_derivative_vanishes_without_potential() {
        let gs = ground(32.0, 1024);
        let v = make_constant(1, 0.0).unwrap();
        let cache = ProfileCache::new();
        let ap = build_ansatz_cached(&cache, &gs, &v, &[1.0], 0.1).unwrap();
        let d = corrector_xi_derivative(&cache, &gs, &v, &ap, &opts(&gs), 1e-3).unwrap();
        assert!(d.norm < 1e-7);
    }

    #[test]
    fn corrector_derivative_passes_richardson() {
        let gs = ground(64.0, 2048);
        let v = make_gaussian_well(0.5, &[0.0], 1.0).unwrap();
        let cache = ProfileCache::new();
        let ap = build_ansatz_cached(&cache, &gs, &v, &[5.0], 0.1).unwrap();
        let d = corrector_xi_derivative(&cache, &gs, &v, &ap, &opts(&gs), 1e-3).unwrap();
        assert!(d.richardson_discrepancy < 0.01, "{}", d.richardson_discrepancy);
        assert!(d.norm > 0.0);
    }
}
