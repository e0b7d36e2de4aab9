//! Experiment orchestration behind the `fracspike` binary: one entry point
//! per mode, slope fits for the scaling studies, and artifact output.
//!
//! Exit codes: 0 success, 1 configuration or compute error, 2 fewer critical
//! points than the cup length (enforcement on), 3 a slope verdict failed.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ansatz::{build_ansatz_cached, potential_difference_weights, AnsatzPoint, ProfileCache};
use crate::critical_search::{assemble_solution, concentration_curve, find_critical_points_cached, CriticalPointReport};
use crate::error::{Error, Result};
use crate::fit::log_log_fit;
use crate::ground_state::{solve_ground_state, GroundState};
use crate::linearized_ops::{lowest_spectrum, negative_direction_check, projected_coercivity, LinearOperator, SpectralReport};
use crate::par;
use crate::potential::Potential;
use crate::reduction::{
    corrector_xi_derivative, default_gradient_floor, reduced_sample, reduced_value_and_gradient, solve_corrector,
    CorrectorResult, FixedPointOptions,
};

pub use config::{Bound, Mode, Quantity, RunConfig};
use config::SpectrumTarget;
pub use output::{ArtifactWriter, Manifest};
use output::num;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CUP_LENGTH: i32 = 2;
pub const EXIT_SLOPE: i32 = 3;

/// Minimum `R^2` for a passing slope verdict.
pub const MIN_R_SQUARED: f64 = 0.98;
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeSample {
    pub eps: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeFit {
    pub quantity: String,
    /// Sample position in original coordinates.
    pub point: Vec<f64>,
    pub samples: Vec<SlopeSample>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub target: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub pass: bool,
    pub reason: String,
}

impl SlopeFit {
    pub fn evaluate(
        quantity: &str,
        point: &[f64],
        samples: Vec<SlopeSample>,
        target: f64,
        tolerance: f64,
        bound: Bound,
    ) -> SlopeFit {
        let xs: Vec<f64> = samples.iter().map(|s| s.eps).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s.value).collect();
        let fit = log_log_fit(&xs, &ys);
        let (pass, reason) = match fit {
            _ if samples.len() < MIN_FIT_POINTS => {
                (false, format!("{} points, need at least {MIN_FIT_POINTS}", samples.len()))
            }
            None => (false, "log-log fit undefined (non-positive value or repeated eps)".to_string()),
            Some(f) if f.r_squared < MIN_R_SQUARED => {
                (false, format!("R^2 = {:.4} below {MIN_R_SQUARED}", f.r_squared))
            }
            Some(f) => {
                let ok = match bound {
                    Bound::Within => (f.slope - target).abs() <= tolerance,
                    Bound::AtLeast => f.slope >= target - tolerance,
                    Bound::AtMost => f.slope <= target + tolerance,
                };
                let rule = match bound {
                    Bound::Within => format!("{target} +/- {tolerance}"),
                    Bound::AtLeast => format!(">= {}", target - tolerance),
                    Bound::AtMost => format!("<= {}", target + tolerance),
                };
                (ok, format!("slope {:.4} {} {rule}", f.slope, if ok { "meets" } else { "misses" }))
            }
        };
        SlopeFit {
            quantity: quantity.to_string(),
            point: point.to_vec(),
            samples,
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
            r_squared: fit.map(|f| f.r_squared),
            target,
            tolerance,
            bound,
            pass,
            reason,
        }
    }
}

/// Everything a mode needs: the ground state, the potential and a shared
/// frozen-profile cache.
pub struct Setup {
    pub config: RunConfig,
    pub gs: GroundState,
    pub v: Potential,
    pub cache: ProfileCache,
}

impl Setup {
    pub fn new(config: RunConfig, mode: Mode) -> Result<Self> {
        config.validate(mode)?;
        let params = config.frac_params()?;
        let grid = config.build_grid()?;
        let v = config.potential.build(params.dim)?;
        let gs = solve_ground_state(&params, &grid, &config.ground_state_options())?;
        Ok(Setup { config, gs, v, cache: ProfileCache::new() })
    }

    pub fn ansatz(&self, eps: f64, x: &[f64]) -> Result<AnsatzPoint> {
        let xi: Vec<f64> = x.iter().map(|c| c / eps).collect();
        build_ansatz_cached(&self.cache, &self.gs, &self.v, &xi, eps)
    }

    fn fixed_point(&self) -> Result<FixedPointOptions> {
        self.config.fixed_point_options()
    }

    /// `(eps, point)` pairs in sweep order, eps outer.
    fn samples(&self) -> Result<Vec<(f64, Vec<f64>)>> {
        let sweep = self.config.sweep()?;
        Ok(sweep.eps.iter().flat_map(|&e| sweep.points.iter().map(move |p| (e, p.clone()))).collect())
    }
}

/// Evaluates `quantity` at `x = eps xi` for one `eps`.
pub fn sample_quantity(setup: &Setup, quantity: Quantity, eps: f64, x: &[f64], fd_step: f64) -> Result<f64> {
    let ap = setup.ansatz(eps, x)?;
    let opts = setup.fixed_point()?;
    match quantity {
        Quantity::Residual => Ok(ap.residual),
        Quantity::TangentGap => Ok(ap.tangent_gap()),
        Quantity::I1 => Ok(potential_difference_weights(&ap).i1),
        Quantity::CorrectorNorm => Ok(solve_corrector(&ap, &opts)?.w_norm),
        Quantity::CorrectorGrad => {
            Ok(corrector_xi_derivative(&setup.cache, &setup.gs, &setup.v, &ap, &opts, fd_step)?.norm)
        }
        Quantity::PhiGap => {
            let cr = solve_corrector(&ap, &opts)?;
            let r = reduced_sample(&ap, &setup.gs, &cr, opts.sigma)?;
            Ok((r.phi - r.leading).abs())
        }
    }
}

/// One slope fit per sweep point. A failing sample aborts the study with the
/// first failing `eps`; every failing `eps` is logged.
pub fn scaling_study(setup: &Setup) -> Result<Vec<SlopeFit>> {
    let study = setup.config.study()?.clone();
    let sweep = setup.config.sweep()?;
    config::check_geometric(&sweep.eps)?;
    let jobs = setup.samples()?;
    let values = par::map(&jobs, |(eps, x)| sample_quantity(setup, study.quantity, *eps, x, study.fd_step));
    let mut first_failure = None;
    let mut vals = Vec::with_capacity(jobs.len());
    for ((eps, _), v) in jobs.iter().zip(values) {
        match v {
            Ok(v) => vals.push(v),
            Err(e) => {
                log::error!("scaling study sample at eps = {eps} failed: {e}");
                if first_failure.is_none() {
                    first_failure = Some(Error::Study { eps: *eps, source: Box::new(e) });
                }
                vals.push(f64::NAN);
            }
        }
    }
    if let Some(e) = first_failure {
        return Err(e);
    }
    let np = sweep.points.len();
    Ok(sweep
        .points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let samples = sweep
                .eps
                .iter()
                .enumerate()
                .map(|(i, &eps)| SlopeSample { eps, value: vals[i * np + j] })
                .collect();
            SlopeFit::evaluate(study.quantity.name(), p, samples, study.target, study.tolerance, study.bound)
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub exit_code: i32,
    pub summary: Vec<String>,
}

/// Runs `mode` and writes its artifacts under `out` (or the configured
/// output directory, or `./out`).
pub fn run(mode: Mode, mut config: RunConfig, out: Option<&Path>, seed: Option<u64>) -> Result<RunOutcome> {
    if let Some(s) = seed {
        config.seed = s;
    }
    let root: PathBuf = out.map(Path::to_path_buf).or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let setup = Setup::new(config, mode)?;
    let mut w = ArtifactWriter::new(&root)?;
    w.write_json("config.json", &setup.config)?;
    let (exit_code, summary) = match mode {
        Mode::GroundState => ground_state_mode(&setup, &mut w)?,
        Mode::ResidualScan => residual_scan_mode(&setup, &mut w)?,
        Mode::Spectrum => spectrum_mode(&setup, &mut w)?,
        Mode::Corrector => corrector_mode(&setup, &mut w)?,
        Mode::Reduce => reduce_mode(&setup, &mut w)?,
        Mode::FindCritical => find_critical_mode(&setup, &mut w)?,
        Mode::Concentration => concentration_mode(&setup, &mut w)?,
        Mode::Assemble => assemble_mode(&setup, &mut w)?,
        Mode::ScalingStudy => scaling_study_mode(&setup, &mut w)?,
    };
    let manifest = w.finish(mode.name(), setup.config.seed)?;
    Ok(RunOutcome { manifest, exit_code, summary })
}

type ModeResult = Result<(i32, Vec<String>)>;

fn xi_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

fn ground_state_mode(setup: &Setup, w: &mut ArtifactWriter) -> ModeResult {
    let gs = &setup.gs;
    w.write_field("fields/U", &gs.u, gs.params.s)?;
    let d = gs.diagnostics();
    w.write_json("ground_state.json", &d)?;
    Ok((
        EXIT_OK,
        vec![format!(
            "ground state: residual {:.3e}, decay slope {:.4}, {} iterations",
            d.residual_norm, d.decay_slope, d.iterations
        )],
    ))
}

fn residual_scan_mode(setup: &Setup, w: &mut ArtifactWriter) -> ModeResult {
    let n = setup.gs.params.dim;
    let jobs = setup.samples()?;
    let rows = par::try_map(&jobs, |(eps, x)| -> Result<Vec<String>> {
        let ap = setup.ansatz(*eps, x)?;
        let pw = potential_difference_weights(&ap);
        let mut row = vec![num(*eps)];
        row.extend(ap.xi[..n].iter().map(|v| num(*v)));
        row.extend([num(ap.residual), num(pw.i1), num(pw.i2), num(ap.tangent_gap())]);
        Ok(row)
    })?;
    let mut header = vec!["eps".to_string()];
    header.extend(xi_header("xi", n));
    header.extend(["residual", "I1", "I2", "tangent_gap"].map(String::from));
    w.write_csv("residual_scan.csv", &header, &rows)?;
    Ok((EXIT_OK, vec![format!("residual scan: {} samples", rows.len())]))
}

#[derive(Serialize)]
struct GroundSpectrum<'a> {
    report: &'a SpectralReport,
    projected_coercivity: crate::linearized_ops::CoercivityConstants,
    negative_direction: crate::linearized_ops::NegativeDirection,
}

#[derive(Serialize)]
struct AnsatzSpectrum {
    eps: f64,
    xi: Vec<f64>,
    report: SpectralReport,
}

fn spectrum_mode(setup: &Setup, w: &mut ArtifactWriter) -> ModeResult {
    let sec = &setup.config.spectrum;
    let s = setup.gs.params.s;
    match sec.target {
        SpectrumTarget::GroundState => {
            let op = LinearOperator::at_ground_state(&setup.gs);
            let report = lowest_spectrum(&op, sec.count, &[], sec.form)?;
            let out = GroundSpectrum {
                report: &report,
                projected_coercivity: projected_coercivity(&op)?,
                negative_direction: negative_direction_check(&op, &setup.gs.u),
            };
            w.write_json("spectrum.json", &out)?;
            if sec.dump_eigenfields {
                for (k, f) in report.eigenfields.iter().enumerate() {
                    w.write_field(&format!("fields/eigen_{k}"), f, s)?;
                }
            }
            Ok((
                EXIT_OK,
                vec![format!(
                    "spectrum: eigenvalues {:?}, Morse index {}, near-zero {}",
                    report.eigenvalues, report.morse_index, report.near_zero
                )],
            ))
        }
        SpectrumTarget::Ansatz => {
            let n = setup.gs.params.dim;
            let jobs = setup.samples()?;
            let reports = par::try_map(&jobs, |(eps, x)| -> Result<AnsatzSpectrum> {
                let ap = setup.ansatz(*eps, x)?;
                let op = LinearOperator::at_ansatz(&ap);
                let report = lowest_spectrum(&op, sec.count, &ap.tangent, sec.form)?;
                Ok(AnsatzSpectrum { eps: *eps, xi: ap.xi[..n].to_vec(), report })
            })?;
            w.write_json("spectrum.json", &reports)?;
            if sec.dump_eigenfields {
                for (j, r) in reports.iter().enumerate() {
                    for (k, f) in r.report.eigenfields.iter().enumerate() {
                        w.write_field(&format!("fields/eigen_{j}_{k}"), f, s)?;
                    }
                }
            }
            let summary = reports
                .iter()
                .map(|r| format!("spectrum at eps {}: min |lambda| {:.4e}", r.eps, r.report.coercivity))
                .collect();
            Ok((EXIT_OK, summary))
        }
    }
}

#[derive(Serialize)]
struct CorrectorRecord {
    eps: f64,
    xi: Vec<f64>,
    field: String,
    result: CorrectorResult,
}

fn corrector_mode(setup: &Setup, w: &mut ArtifactWriter) -> ModeResult {
    let n = setup.gs.params.dim;
    let opts = setup.fixed_point()?;
    let jobs = setup.samples()?;
    let results = par::try_map(&jobs, |(eps, x)| -> Result<(Vec<f64>, CorrectorResult)> {
        let ap = setup.ansatz(*eps, x)?;
        Ok((ap.xi[..n].to_vec(), solve_corrector(&ap, &opts)?))
    })?;
    let mut records = Vec::new();
    for (k, ((eps, _), (xi, cr))) in jobs.iter().zip(results).enumerate() {
        let stem = format!("fields/w_{k}");
        w.write_field(&stem, &cr.w, setup.gs.params.s)?;
        records.push(CorrectorRecord { eps: *eps, xi, field: format!("{stem}.bin"), result: cr });
    }
    w.write_json("corrector.json", &records)?;
    let summary = records
        .iter()
        .map(|r| format!("corrector at eps {} xi {:?}: ||w||_s {:.4e}, {} iterations", r.eps, r.xi, r.result.w_norm, r.result.iterations))
        .collect();
    Ok((EXIT_OK, summary))
}

fn reduce_mode(setup: &Setup, w: &mut ArtifactWriter) -> ModeResult {
    let n = setup.gs.params.dim;
    let opts = setup.fixed_point()?;
    let floor = default_gradient_floor(&opts);
    let jobs = setup.samples()?;
    let samples = par::try_map(&jobs, |(eps, x)| {
        let ap = setup.ansatz(*eps, x)?;
        let cr = solve_corrector(&ap, &opts)?;
        reduced_value_and_gradient(&setup.cache, &setup.gs, &setup.v, &ap, &cr, &opts, floor)
    })?;
    let mut header = vec!["eps".to_string()];
    header.extend(xi_header("xi", n));
    header.push("phi".into());
    header.extend(xi_header("grad", n));
    header.extend(xi_header("grad_fd", n));
    header.extend(
        ["leading", "leading_discrete", "gamma", "psi", "theta", "c1", "alpha"].map(String::from),
    );
    header.extend(xi_header("varpi", n));
    header.extend(["identity_defect", "scaling_defect", "w_norm", "residual_z"].map(String::from));
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|r| {
            let mut row = vec![num(r.eps)];
            row.extend(r.xi.iter().map(|v| num(*v)));
            row.push(num(r.phi));
            row.extend(r.grad_phi.iter().map(|v| num(*v)));
            let fd = r.grad_phi_fd.clone().unwrap_or_else(|| vec![f64::NAN; n]);
            row.extend(fd.iter().map(|v| num(*v)));
            row.extend([r.leading, r.leading_discrete, r.gamma, r.psi, r.theta, r.c1, r.alpha].map(num));
            row.extend(r.varpi.iter().map(|v| num(*v)));
            row.extend([r.identity_defect, r.scaling_defect, r.w_norm, r.residual_z].map(num));
            row
        })
        .collect();
    w.write_csv("reduce.csv", &header, &rows)?;
    Ok((EXIT_OK, vec![format!("reduce: {} samples", rows.len())]))
}

fn reports(setup: &Setup) -> Result<Vec<CriticalPointReport>> {
    let sweep = setup.config.sweep()?;
    let window = &setup.config.search()?.window;
    let opts = setup.config.search_options()?;
    sweep
        .eps
        .iter()
        .map(|&eps| find_critical_points_cached(&setup.cache, &setup.v, &setup.gs, eps, window, &opts))
        .collect()
}

/// Cup-length enforcement at the smallest `eps`.
fn cup_length_verdict(setup: &Setup, reports: &[CriticalPointReport]) -> Result<(i32, String)> {
    let Some(last) = reports.iter().min_by(|a, b| a.eps.total_cmp(&b.eps)) else {
        return Ok((EXIT_OK, "no eps".into()));
    };
    let met = last.meets_cup_length();
    let enforce = setup.config.search()?.enforce;
    let line = format!(
        "eps {}: {} distinct critical points, cup-length bound {:?}{}",
        last.eps,
        last.count_distinct,
        last.cup_length_bound,
        if met { "" } else { " (bound not met)" }
    );
    Ok((if enforce && !met { EXIT_CUP_LENGTH } else { EXIT_OK }, line))
}

fn find_critical_mode(setup: &Setup, w: &mut ArtifactWriter) -> ModeResult {
    let reports = reports(setup)?;
    w.write_json("find_critical.json", &reports)?;
    let (code, line) = cup_length_verdict(setup, &reports)?;
    Ok((code, vec![line]))
}

fn concentration_mode(setup: &Setup, w: &mut ArtifactWriter) -> ModeResult {
    let sweep = setup.config.sweep()?;
    let window = &setup.config.search()?.window;
    let opts = setup.config.search_options()?;
    let table = concentration_curve(&setup.v, &setup.gs, &sweep.eps, window, &opts)?;
    w.write_json("concentration.json", &table)?;
    w.write_json("find_critical.json", &table.reports)?;
    let header = ["eps", "count", "max_distance", "degenerate"].map(String::from);
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.eps),
                r.count.to_string(),
                r.max_distance.map(num).unwrap_or_default(),
                r.degenerate.to_string(),
            ]
        })
        .collect();
    w.write_csv("concentration.csv", &header, &rows)?;
    let (code, line) = cup_length_verdict(setup, &table.reports)?;
    let slope = table.slope.map(|f| format!("{:.3}", f.slope)).unwrap_or_else(|| "n/a".into());
    Ok((code, vec![line, format!("concentration: shrinking {}, log-log slope {slope}", table.shrinking)]))
}

#[derive(Serialize)]
struct AssembledRecord {
    field: String,
    solution: crate::critical_search::AssembledSolution,
}

fn assemble_mode(setup: &Setup, w: &mut ArtifactWriter) -> ModeResult {
    let opts = setup.fixed_point()?;
    let reports = reports(setup)?;
    w.write_json("find_critical.json", &reports)?;
    let mut records = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        for (j, p) in r.points.iter().enumerate() {
            let sol = assemble_solution(&setup.v, &setup.gs, r.eps, &p.xi_star, &opts)?;
            let stem = format!("fields/u_{i}_{j}");
            w.write_field(&stem, &sol.u, setup.gs.params.s)?;
            records.push(AssembledRecord { field: format!("{stem}.bin"), solution: sol });
        }
    }
    w.write_json("assemble.json", &records)?;
    let mut summary: Vec<String> = records
        .iter()
        .map(|r| {
            format!(
                "assembled at eps {} xi* {:?}: residual {:.3e} (z: {:.3e}), min {:.3e}",
                r.solution.eps, r.solution.xi_star, r.solution.residual, r.solution.residual_z, r.solution.min_value
            )
        })
        .collect();
    let (code, line) = cup_length_verdict(setup, &reports)?;
    summary.push(line);
    Ok((code, summary))
}

fn scaling_study_mode(setup: &Setup, w: &mut ArtifactWriter) -> ModeResult {
    let fits = scaling_study(setup)?;
    w.write_json("scaling_study.json", &fits)?;
    let n = setup.gs.params.dim;
    let mut header = vec!["quantity".to_string(), "eps".to_string()];
    header.extend(xi_header("x", n));
    header.push("value".into());
    let mut rows = Vec::new();
    for f in &fits {
        for s in &f.samples {
            let mut row = vec![f.quantity.clone(), num(s.eps)];
            row.extend(f.point.iter().map(|v| num(*v)));
            row.push(num(s.value));
            rows.push(row);
        }
    }
    w.write_csv("scaling_study.csv", &header, &rows)?;
    let all = fits.iter().all(|f| f.pass);
    let summary = fits
        .iter()
        .map(|f| format!("{} at x = {:?}: {} ({})", f.quantity, f.point, if f.pass { "PASS" } else { "FAIL" }, f.reason))
        .collect();
    Ok((if all { EXIT_OK } else { EXIT_SLOPE }, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(slope: f64, n: usize) -> Vec<SlopeSample> {
        (0..n)
            .map(|k| {
                let eps = 0.2 / 2f64.powi(k as i32);
                SlopeSample { eps, value: 3.0 * eps.powf(slope) }
            })
            .collect()
    }

    #[test]
    fn slope_verdicts() {
        let f = SlopeFit::evaluate("residual", &[1.0], samples(1.05, 4), 1.0, 0.15, Bound::Within);
        assert!(f.pass, "{}", f.reason);
        let f = SlopeFit::evaluate("residual", &[1.0], samples(1.3, 4), 1.0, 0.15, Bound::Within);
        assert!(!f.pass);
        let f = SlopeFit::evaluate("phi_gap", &[1.0], samples(1.9, 4), 1.0, 0.2, Bound::AtLeast);
        assert!(f.pass);
        let f = SlopeFit::evaluate("residual", &[1.0], samples(1.0, 3), 1.0, 0.15, Bound::Within);
        assert!(!f.pass && f.reason.contains("at least 4"));
    }

    #[test]
    fn poor_fit_fails() {
        let mut s = samples(1.0, 4);
        s[1].value *= 3.0;
        s[2].value /= 3.0;
        let f = SlopeFit::evaluate("residual", &[1.0], s, 1.0, 5.0, Bound::Within);
        assert!(!f.pass && f.reason.contains("R^2"), "{}", f.reason);
    }
}
