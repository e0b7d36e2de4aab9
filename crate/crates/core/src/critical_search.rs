//! Critical points of the reduced functional over a window of spike
//! positions, their count against the cup length of the critical manifold,
//! concentration along an `eps` sweep, and assembly of the final solutions.
//!
//! Candidates come from a multistart root search on `grad V` (the critical
//! points of the leading term `C1 (1 + V(eps xi))^theta`), then each is
//! refined by Newton's method on the tangential gradient of `Phi`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_ansatz_cached, f_eps_gradient, ProfileCache};
use crate::error::{Error, Result};
use crate::fit::{log_log_fit, LineFit};
use crate::ground_state::GroundState;
use crate::par;
use crate::potential::{Point, Potential};
use crate::reduction::{
    default_gradient_floor, reduced_sample, solve_corrector, theta_and_constants, FixedPointOptions,
    ReducedSample, GRADIENT_AGREEMENT, PHI_FD_STEP,
};
use crate::spectral::{dual_norm, frac_laplacian, nonlinear_power, Field, Grid};

/// Search region for `eps xi`, in original coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SearchWindow {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
}

impl SearchWindow {
    pub fn dim(&self) -> usize {
        match self {
            SearchWindow::Box { lo, .. } => lo.len(),
            SearchWindow::Annulus { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SearchWindow::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() || lo.len() > 2 {
                    return Err(Error::InvalidParams("window bounds must have matching length 1 or 2".into()));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(Error::InvalidParams(format!("window needs lo < hi, got {lo:?} and {hi:?}")));
                }
            }
            SearchWindow::Annulus { center, inner, outer } => {
                if center.len() != 2 || !(*inner >= 0.0 && inner < outer) {
                    return Err(Error::InvalidParams(format!(
                        "annulus needs a 2-d center and 0 <= inner < outer, got {center:?}, {inner}, {outer}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SearchWindow::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v >= a && v <= b),
            SearchWindow::Annulus { center, inner, outer } => {
                let r = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
                r >= *inner && r <= *outer
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            SearchWindow::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt(),
            SearchWindow::Annulus { outer, .. } => 2.0 * outer,
        }
    }

    pub fn centroid(&self) -> Vec<f64> {
        match self {
            SearchWindow::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            SearchWindow::Annulus { center, inner, outer } => vec![center[0] + 0.5 * (inner + outer), center[1]],
        }
    }

    /// Largest `|x_i|` over the window.
    pub fn extent(&self) -> f64 {
        match self {
            SearchWindow::Box { lo, hi } => lo.iter().chain(hi).fold(0.0, |m, v| m.max(v.abs())),
            SearchWindow::Annulus { center, outer, .. } => center[0].abs().max(center[1].abs()) + outer,
        }
    }

    /// Maps a point of the unit cube into the window (area-uniform for the annulus).
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        match self {
            SearchWindow::Box { lo, hi } => lo.iter().zip(hi).zip(u).map(|((a, b), t)| a + (b - a) * t).collect(),
            SearchWindow::Annulus { center, inner, outer } => {
                let r = (inner * inner + (outer * outer - inner * inner) * u[0]).sqrt();
                let t = 2.0 * std::f64::consts::PI * u[1];
                vec![center[0] + r * t.cos(), center[1] + r * t.sin()]
            }
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Halton points in `[0,1)^dim`, shifted by a seeded random rotation.
pub fn halton(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let bases = [2u64, 3];
    (1..=count as u64)
        .map(|i| (0..dim).map(|d| (radical_inverse(i, bases[d]) + shift[d]).fract()).collect())
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Multistart count; `None` means 32 in 1-d and 128 in 2-d.
    pub starts: Option<usize>,
    pub seed: u64,
    /// Critical-point tolerance relative to the gradient scale `eps C1 theta sup|grad V|`.
    pub tol_crit: f64,
    pub max_newton: usize,
    pub max_candidates: usize,
    pub fixed_point: FixedPointOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            starts: None,
            seed: 0,
            tol_crit: 1e-8,
            max_newton: 30,
            max_candidates: 16,
            fixed_point: FixedPointOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub xi_star: Vec<f64>,
    /// `eps xi_star`.
    pub x_star: Vec<f64>,
    pub phi: f64,
    pub grad_norm: f64,
    pub grad_fd: Vec<f64>,
    pub gradients_agree: bool,
    pub distance_to_m: Option<f64>,
    pub hessian_eigenvalues: Vec<f64>,
    pub hessian_signature: Signature,
    pub newton_iterations: usize,
    pub w_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPointReport {
    pub eps: f64,
    pub points: Vec<CriticalPoint>,
    pub count_distinct: usize,
    pub cup_length_bound: Option<usize>,
    pub search_window: SearchWindow,
    pub dedup_radius: f64,
    pub grad_scale: f64,
    pub tol_abs: f64,
    /// Flat potential or a critical set of `V` that is not isolated.
    pub degenerate: bool,
    pub starts: usize,
    pub candidates: usize,
    pub dropped: Vec<String>,
}

impl CriticalPointReport {
    pub fn max_distance(&self) -> Option<f64> {
        self.points.iter().filter_map(|p| p.distance_to_m).reduce(f64::max)
    }

    pub fn meets_cup_length(&self) -> bool {
        self.cup_length_bound.is_none_or(|b| self.count_distinct >= b)
    }
}

struct Context<'a> {
    cache: &'a ProfileCache,
    gs: &'a GroundState,
    v: &'a Potential,
    eps: f64,
    opts: &'a SearchOptions,
}

impl Context<'_> {
    fn sample(&self, xi: &[f64]) -> Result<ReducedSample> {
        let ap = build_ansatz_cached(self.cache, self.gs, self.v, xi, self.eps)?;
        let cr = solve_corrector(&ap, &self.opts.fixed_point)?;
        reduced_sample(&ap, self.gs, &cr, self.opts.fixed_point.sigma)
    }

    /// Hessian of `C1 (1 + V(eps xi))^theta` in `xi`.
    fn surrogate_hessian(&self, xi: &[f64]) -> DMatrix<f64> {
        let n = xi.len();
        let (theta, c1) = theta_and_constants(&self.gs.params, self.gs);
        let x = to_point(xi, self.eps);
        let (v0, g, h) = (self.v.eval(&x), self.v.grad(&x), self.v.hess(&x));
        let base = 1.0 + v0;
        let e2 = self.eps * self.eps;
        DMatrix::from_fn(n, n, |i, j| {
            e2 * c1 * theta * ((theta - 1.0) * base.powf(theta - 2.0) * g[i] * g[j] + base.powf(theta - 1.0) * h[i][j])
        })
    }
}

fn to_point(xi: &[f64], eps: f64) -> Point {
    let mut p = [0.0; 2];
    for (d, v) in p.iter_mut().zip(xi) {
        *d = eps * v;
    }
    p
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Root of `grad V` from `x0` by Levenberg-Marquardt steps; `None` when the
/// iterate leaves the window or stalls.
fn surrogate_root(v: &Potential, window: &SearchWindow, x0: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let grad = |x: &[f64]| -> DVector<f64> {
        let g = v.grad(&to_point(x, 1.0));
        DVector::from_iterator(n, g.iter().take(n).copied())
    };
    let mut g = grad(&x);
    let mut mu = 1e-3 * v.bounds().sup_hess.powi(2).max(1e-12);
    for _ in 0..400 {
        if g.norm() < tol {
            return Some(x);
        }
        let h = v.hess(&to_point(&x, 1.0));
        let hm = DMatrix::from_fn(n, n, |i, j| h[i][j]);
        let lhs = hm.transpose() * &hm + DMatrix::identity(n, n) * mu;
        let step = lhs.lu().solve(&(-(hm.transpose() * &g)))?;
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let gt = grad(&trial);
        if gt.norm() < g.norm() {
            if !window.contains(&trial) {
                return None;
            }
            x = trial;
            g = gt;
            mu = (mu / 3.0).max(1e-300);
        } else {
            mu *= 4.0;
            if mu > 1e20 {
                return None;
            }
        }
    }
    None
}

/// Keeps points farther than `radius` from every already kept point, in the
/// order given.
fn dedup<T>(items: Vec<T>, radius: f64, pos: impl Fn(&T) -> &[f64]) -> Vec<T> {
    let mut kept: Vec<T> = Vec::new();
    for item in items {
        let p = pos(&item);
        if kept.iter().all(|k| {
            let q = pos(k);
            p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > radius
        }) {
            kept.push(item);
        }
    }
    kept
}

/// Multistart search for critical points of `Phi` with `eps xi` in `window`.
pub fn find_critical_points(
    v: &Potential,
    gs: &GroundState,
    eps: f64,
    window: &SearchWindow,
    opts: &SearchOptions,
) -> Result<CriticalPointReport> {
    find_critical_points_cached(&ProfileCache::new(), v, gs, eps, window, opts)
}

pub fn find_critical_points_cached(
    cache: &ProfileCache,
    v: &Potential,
    gs: &GroundState,
    eps: f64,
    window: &SearchWindow,
    opts: &SearchOptions,
) -> Result<CriticalPointReport> {
    window.validate()?;
    let n = gs.params.dim;
    if window.dim() != n || v.dim != n {
        return Err(Error::Contract(format!(
            "dimension mismatch: ground state {n}, window {}, potential {}",
            window.dim(),
            v.dim
        )));
    }
    let l = gs.grid().half_width();
    if window.extent() / eps > 0.75 * l {
        return Err(Error::Placement(format!(
            "window extent {} / eps = {} exceeds 0.75 L = {}",
            window.extent(),
            window.extent() / eps,
            0.75 * l
        )));
    }
    let ctx = Context { cache, gs, v, eps, opts };
    let bounds = v.bounds();
    let (theta, c1) = theta_and_constants(&gs.params, gs);
    let grad_scale = eps * c1 * theta.abs().max(1.0) * bounds.sup_grad.max(f64::MIN_POSITIVE);
    let tol_abs = opts.tol_crit * grad_scale;
    let dedup_radius = 0.05 * window.diameter();
    let cup_length_bound = v.cup_length().ok();
    let starts = opts.starts.unwrap_or(if n == 1 { 32 } else { 128 });
    let mut report = CriticalPointReport {
        eps,
        points: Vec::new(),
        count_distinct: 0,
        cup_length_bound,
        search_window: window.clone(),
        dedup_radius,
        grad_scale,
        tol_abs,
        degenerate: false,
        starts,
        candidates: 0,
        dropped: Vec::new(),
    };

    if bounds.sup_grad == 0.0 {
        let xi: Vec<f64> = window.centroid().iter().map(|c| c / eps).collect();
        let point = finalize(&ctx, &xi, 0)?;
        report.degenerate = true;
        report.candidates = 1;
        report.points = vec![point];
        report.count_distinct = 1;
        return Ok(report);
    }

    let unit = halton(starts, n, opts.seed);
    let seeds: Vec<Vec<f64>> = unit.iter().map(|u| window.from_unit(u)).collect();
    let roots = par::map(&seeds, |x0| surrogate_root(v, window, x0, 1e-10 * bounds.sup_grad));
    let mut found: Vec<Vec<f64>> = Vec::new();
    for (x0, r) in seeds.iter().zip(roots) {
        match r {
            Some(x) => found.push(x),
            None => {
                log::debug!("start {x0:?} left the window or stalled");
                report.dropped.push(format!("start {x0:?}: no root of grad V in the window"));
            }
        }
    }
    let mut candidates = dedup(found, dedup_radius, |x| x.as_slice());
    let degenerate_tol = 1e-6 * bounds.sup_hess;
    report.degenerate = candidates.iter().any(|x| {
        let h = v.hess(&to_point(x, 1.0));
        let m = DMatrix::from_fn(n, n, |i, j| h[i][j]);
        SymmetricEigen::new(m).eigenvalues.iter().any(|l| l.abs() < degenerate_tol)
    });
    candidates.truncate(opts.max_candidates);
    report.candidates = candidates.len();

    let refined = par::map(&candidates, |x| refine(&ctx, window, x, tol_abs));
    let mut points = Vec::new();
    for (x, r) in candidates.iter().zip(refined) {
        match r {
            Ok(Some(p)) => points.push(p),
            Ok(None) => report.dropped.push(format!("candidate {x:?}: Newton left the window or stalled")),
            Err(e) => {
                log::warn!("candidate {x:?} failed: {e}");
                report.dropped.push(format!("candidate {x:?}: {e}"));
            }
        }
    }
    points.sort_by(|a, b| a.grad_norm.total_cmp(&b.grad_norm));
    let mut points = dedup(points, dedup_radius, |p| p.x_star.as_slice());
    points.sort_by(|a, b| a.x_star.iter().zip(&b.x_star).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    report.count_distinct = points.len();
    report.points = points;
    Ok(report)
}

/// Newton's method on the tangential gradient, Hessian initialized from the
/// leading term and updated by symmetric rank-one corrections.
fn refine(ctx: &Context, window: &SearchWindow, x0: &[f64], tol: f64) -> Result<Option<CriticalPoint>> {
    let n = x0.len();
    let eps = ctx.eps;
    let trust = 0.1 * window.diameter() / eps;
    let mut xi: Vec<f64> = x0.iter().map(|x| x / eps).collect();
    let mut s = ctx.sample(&xi)?;
    let mut h = ctx.surrogate_hessian(&xi);
    for it in 0..ctx.opts.max_newton {
        let g = DVector::from_vec(s.grad_phi.clone());
        if g.norm() < tol {
            return finalize(ctx, &xi, it).map(Some);
        }
        let mut step = match h.clone().lu().solve(&(-&g)) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => -&g / h.norm().max(f64::MIN_POSITIVE),
        };
        if step.norm() > trust {
            step *= trust / step.norm();
        }
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..8 {
            let trial: Vec<f64> = xi.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let x: Vec<f64> = trial.iter().map(|v| v * eps).collect();
            if !window.contains(&x) {
                return Ok(None);
            }
            let st = ctx.sample(&trial)?;
            if norm(&st.grad_phi) < g.norm() {
                accepted = Some((trial, st));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, st)) = accepted else {
            return Ok(None);
        };
        let sk = &step * t;
        let yk = DVector::from_vec(st.grad_phi.clone()) - &g;
        let r = &yk - &h * &sk;
        let denom = r.dot(&sk);
        if denom.abs() > 1e-8 * r.norm() * sk.norm() {
            h += &r * r.transpose() / denom;
        }
        xi = trial;
        s = st;
    }
    if norm(&s.grad_phi) < tol {
        return finalize(ctx, &xi, ctx.opts.max_newton).map(Some);
    }
    let _ = n;
    Ok(None)
}

/// Finite-difference Hessian signature and gradient cross-check at `xi`.
fn finalize(ctx: &Context, xi: &[f64], iterations: usize) -> Result<CriticalPoint> {
    let n = xi.len();
    let s = ctx.sample(xi)?;
    let h = PHI_FD_STEP;
    let mut hess = DMatrix::<f64>::zeros(n, n);
    let mut grad_fd = vec![0.0; n];
    for j in 0..n {
        let mut plus = xi.to_vec();
        let mut minus = xi.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let sp = ctx.sample(&plus)?;
        let sm = ctx.sample(&minus)?;
        grad_fd[j] = (sp.phi - sm.phi) / (2.0 * h);
        for i in 0..n {
            hess[(i, j)] = (sp.grad_phi[i] - sm.grad_phi[i]) / (2.0 * h);
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(hess).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let cut = 1e-6 * eig.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let signature = Signature {
        positive: eig.iter().filter(|&&l| l > cut).count(),
        negative: eig.iter().filter(|&&l| l < -cut).count(),
        zero: eig.iter().filter(|&&l| l.abs() <= cut).count(),
    };
    let gap = norm(&grad_fd.iter().zip(&s.grad_phi).map(|(a, b)| a - b).collect::<Vec<_>>());
    let size = norm(&grad_fd).max(norm(&s.grad_phi));
    let gradients_agree = gap <= GRADIENT_AGREEMENT * size + default_gradient_floor(&ctx.opts.fixed_point);
    let x_star: Vec<f64> = xi.iter().map(|v| v * ctx.eps).collect();
    Ok(CriticalPoint {
        xi_star: xi.to_vec(),
        distance_to_m: ctx.v.distance_to_manifold(&to_point(&x_star, 1.0)),
        x_star,
        phi: s.phi,
        grad_norm: norm(&s.grad_phi),
        grad_fd,
        gradients_agree,
        hessian_eigenvalues: eig,
        hessian_signature: signature,
        newton_iterations: iterations,
        w_norm: s.w_norm,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub eps: f64,
    pub count: usize,
    /// `max dist(eps xi*, M)` over the reported points.
    pub max_distance: Option<f64>,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcentrationTable {
    pub rows: Vec<ConcentrationRow>,
    /// Log-log slope of distance against `eps`, when all distances are positive.
    pub slope: Option<LineFit>,
    /// Distances do not grow as `eps` decreases (5% slack for noise).
    pub shrinking: bool,
    #[serde(skip)]
    pub reports: Vec<CriticalPointReport>,
}

/// Critical-point search at each `eps`, with the distance of the reported
/// points to the critical manifold of `V`.
pub fn concentration_curve(
    v: &Potential,
    gs: &GroundState,
    eps_list: &[f64],
    window: &SearchWindow,
    opts: &SearchOptions,
) -> Result<ConcentrationTable> {
    let cache = ProfileCache::new();
    let reports = eps_list
        .iter()
        .map(|&eps| find_critical_points_cached(&cache, v, gs, eps, window, opts))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ConcentrationRow> = reports
        .iter()
        .map(|r| ConcentrationRow { eps: r.eps, count: r.count_distinct, max_distance: r.max_distance(), degenerate: r.degenerate })
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].eps.total_cmp(&rows[a].eps));
    let dists: Vec<Option<f64>> = order.iter().map(|&i| rows[i].max_distance).collect();
    let shrinking = dists.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => b <= 1.05 * a + 1e-12,
        _ => false,
    });
    let slope = if rows.len() >= 2 && rows.iter().all(|r| r.max_distance.is_some_and(|d| d > 0.0)) {
        let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.max_distance.unwrap_or(0.0)).collect();
        log_log_fit(&xs, &ys)
    } else {
        None
    };
    Ok(ConcentrationTable { rows, slope, shrinking, reports })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OriginalCoordinates {
    /// Half-width `eps L` of the dilated box on which `u(x / eps)` lives.
    pub half_width: f64,
    /// `L^2` norm of the rescaled residual.
    pub residual_rescaled: f64,
    /// `L^2` norm of `eps^{2s} (-Delta)^s v + v + V v - |v|^{p-1} v` on the dilated grid.
    pub residual_original: f64,
    /// `eps^{n/2}`, the predicted ratio of the two.
    pub predicted_ratio: f64,
    /// Pointwise mismatch between the two residual fields, relative to the
    /// size of the individual terms.
    pub rescaling_defect: f64,
    pub statement: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssembledSolution {
    pub eps: f64,
    pub xi_star: Vec<f64>,
    #[serde(skip)]
    pub u: Field,
    /// `|| D f_eps(u) ||_s`, unprojected.
    pub residual: f64,
    /// `|| D f_eps(z) ||_s`.
    pub residual_z: f64,
    pub tolerance: f64,
    pub min_value: f64,
    pub peak_location: Vec<f64>,
    pub peak_within_dx: bool,
    pub peak_height: f64,
    /// `b(eps xi*) max U`.
    pub expected_peak: f64,
    pub original_coords_meta: OriginalCoordinates,
}

/// `u = z_{xi*} + w(eps, xi*)` with the full residual check and the map back
/// to original coordinates.
pub fn assemble_solution(
    v: &Potential,
    gs: &GroundState,
    eps: f64,
    xi_star: &[f64],
    opts: &FixedPointOptions,
) -> Result<AssembledSolution> {
    let ap = build_ansatz_cached(&ProfileCache::new(), gs, v, xi_star, eps)?;
    let cr = solve_corrector(&ap, opts)?;
    let u = ap.z.add(&cr.w);
    let params = ap.params;
    let e = f_eps_gradient(&u, &ap.potential_field, &params)?;
    let residual = dual_norm(&e, params.s);
    let tolerance = 10.0 * opts.tol;
    if residual > tolerance {
        return Err(Error::Assembly(format!(
            "full residual {residual:.3e} exceeds {tolerance:.1e} at xi = {xi_star:?}; the point is not critical"
        )));
    }
    let grid = u.grid();
    let k = u.argmax();
    let peak = grid.point(k);
    let peak_location: Vec<f64> = peak[..grid.dim()].to_vec();
    let dx = grid.dx();
    let period = 2.0 * grid.half_width();
    let peak_within_dx = peak_location.iter().zip(xi_star).all(|(p, x)| {
        let d = p - x;
        (d - period * (d / period).round()).abs() <= dx
    });
    let original_coords_meta = rescale_check(&u, &e, v, eps, &params)?;
    Ok(AssembledSolution {
        eps,
        xi_star: xi_star.to_vec(),
        residual,
        residual_z: ap.residual,
        tolerance,
        min_value: u.min(),
        peak_location,
        peak_within_dx,
        peak_height: u.max(),
        expected_peak: ap.b * gs.u.max(),
        u,
        original_coords_meta,
    })
}

fn rescale_check(
    u: &Field,
    e: &Field,
    v: &Potential,
    eps: f64,
    params: &crate::spectral::FracParams,
) -> Result<OriginalCoordinates> {
    let g = u.grid();
    let dilated = Grid::new(g.dim(), g.size(), eps * g.half_width())?;
    let vf = Field::new(&dilated, u.values().to_vec())?;
    let pot = v.sample(&dilated, 1.0);
    let mut orig = frac_laplacian(&vf, params.s)?.scale(eps.powf(2.0 * params.s));
    orig.axpy_in_place(1.0, &vf);
    orig.axpy_in_place(1.0, &pot.zip_map(&vf, |a, b| a * b));
    orig.axpy_in_place(-1.0, &nonlinear_power(&vf, params.p)?);
    let scale = e.max_abs().max(u.max_abs().powf(params.p)).max(u.max_abs()).max(f64::MIN_POSITIVE);
    let rescaling_defect = orig
        .values()
        .iter()
        .zip(e.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale;
    let l2 = |f: &Field| crate::spectral::l2_norm(f);
    Ok(OriginalCoordinates {
        half_width: dilated.half_width(),
        residual_rescaled: l2(e),
        residual_original: l2(&orig),
        predicted_ratio: eps.powf(g.dim() as f64 / 2.0),
        rescaling_defect,
        statement: format!(
            "v(x) = u(x / {eps}) solves eps^(2s) (-Delta)^s v + v + V(x) v = |v|^(p-1) v on [-{0}, {0})^{1} with the residual of u mapped pointwise",
            dilated.half_width(),
            g.dim()
        ),
    })
}
