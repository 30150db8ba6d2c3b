//! Fisher information per photon, the standard-imaging baseline and the
//! resolution gain limits derived from them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blinking::EmitterModel;
use crate::error::{invalid, Error, Result};
use crate::model::{pixel_overlaps, DetectorGeometry, PsfGaussian};
use crate::optimize::{golden_section_max, log_grid};
use crate::quad::{integrate, integrate_2d, QuadOptions};
use crate::summary::{summary, GaussianSummary, SchemeSpec};

/// Relative eigenvalue floor of the (correlation-scaled) covariance.
pub const EIGEN_FLOOR: f64 = 1e-10;
/// Separations at which the θ → 0 limit is first extracted.
pub const BASE_THETAS: [f64; 3] = [0.08, 0.04, 0.02];
/// Relative misfit above which an extraction is not trusted.
pub const RESIDUAL_TOL: f64 = 1e-4;
const SHRINK: f64 = 4.0;
const MAX_SHRINKS: usize = 6;

/// `∂μᵀ Σ⁺ ∂μ` for one frame.
pub fn gaussian_fi(summary: &GaussianSummary) -> Result<f64> {
    gaussian_fi_from(&summary.dmu_dtheta, &summary.sigma1)
}

/// Gaussian Fisher information `dᵀ Σ⁺ d`.
///
/// Σ is first rescaled to a correlation matrix so that statistics of very
/// different magnitude (counts vs. their squares) share one eigenvalue
/// scale; directions below [`EIGEN_FLOOR`]`·λ_max` are then discarded.
/// Components with zero variance carry no usable information and are
/// dropped.
pub fn gaussian_fi_from(dmu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let n = dmu.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "derivative length {n} does not match a {}×{} covariance",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if dmu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite summary entries".into()));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| sigma[(i, i)] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateSummary);
    }
    let scale: Vec<f64> = keep.iter().map(|&i| sigma[(i, i)].sqrt().recip()).collect();
    let k = keep.len();
    let corr = DMatrix::from_fn(k, k, |a, b| scale[a] * sigma[(keep[a], keep[b])] * scale[b]);
    let d = DVector::from_fn(k, |a, _| scale[a] * dmu[keep[a]]);
    let eig = SymmetricEigen::new(corr);
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) {
        return Err(Error::DegenerateSummary);
    }
    let floor = EIGEN_FLOOR * lmax;
    let proj = eig.eigenvectors.transpose() * d;
    Ok(eig
        .eigenvalues
        .iter()
        .zip(proj.iter())
        .filter(|(&l, _)| l >= floor)
        .map(|(&l, &p)| p * p / l)
        .sum())
}

/// Fisher information per detected source photon at separation `theta`.
pub fn fi_per_photon(scheme: SchemeSpec, geometry: &DetectorGeometry, model: &EmitterModel, theta: f64) -> Result<f64> {
    let s = summary(scheme, geometry, model, theta)?;
    if theta == 0.0 {
        return Ok(0.0);
    }
    Ok(gaussian_fi(&s)? / s.mean_photons_per_frame)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiCurve {
    pub thetas: Vec<f64>,
    pub fi_per_photon: Vec<f64>,
    pub scheme: SchemeSpec,
    pub model: EmitterModel,
    pub geometry: DetectorGeometry,
}

pub fn fi_per_photon_curve(
    scheme: SchemeSpec,
    geometry: &DetectorGeometry,
    model: &EmitterModel,
    thetas: &[f64],
) -> Result<FiCurve> {
    if let Some(&t) = thetas.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(invalid("theta", format!("separations must be positive, got {t}")));
    }
    let fi = thetas
        .par_iter()
        .map(|&t| fi_per_photon(scheme, geometry, model, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(FiCurve {
        thetas: thetas.to_vec(),
        fi_per_photon: fi,
        scheme,
        model: model.clone(),
        geometry: geometry.clone(),
    })
}

/// Per-photon standard-imaging FI for a continuous (unpixelated) detector,
/// `σ²F = ¼ − ∫ x² e^{−(t−2x)²/8} / (2√(2π)(e^{tx}+1)) dx` with `t = θ/σ`.
pub fn si_fisher_exact(theta: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(invalid("theta", format!("must be finite and ≥ 0, got {theta}")));
    }
    let t = theta / sigma;
    let norm = 2.0 * (2.0 * std::f64::consts::PI).sqrt();
    let integrand = |x: f64| {
        let g = (-(t - 2.0 * x).powi(2) / 8.0).exp();
        let z = t * x;
        let logistic = if z > 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (z.exp() + 1.0)
        };
        x * x * g * logistic / norm
    };
    let opts = QuadOptions {
        abs_tol: 1e-12,
        rel_tol: 1e-14,
        max_intervals: 4000,
    };
    // The integrand is a smooth bump; splitting at its centre helps the
    // adaptive scheme resolve the small-θ cancellation.
    let centre = (t / 2.0).clamp(-10.0, 10.0);
    let left = integrate(integrand, -10.0, centre, opts)?.value;
    let right = integrate(integrand, centre, 10.0, opts)?.value;
    Ok((0.25 - left - right).max(0.0) / (sigma * sigma))
}

/// Leading terms of the small-θ expansion of [`si_fisher_exact`] (σ = 1).
pub fn si_fisher_series(theta: f64) -> f64 {
    let t2 = theta * theta;
    t2 / 8.0 - t2 * t2 / 16.0 + t2 * t2 * t2 / 24.0
}

/// Per-photon standard-imaging FI on the pixel grid of `geometry`
/// (constant brightness, no background).
pub fn si_pixel_fi(geometry: &DetectorGeometry, theta: f64) -> Result<f64> {
    let ov = pixel_overlaps(geometry, &PsfGaussian::unit(), theta)?;
    let mut info = 0.0;
    let mut mass = 0.0;
    for j in 0..ov.len() {
        let u = ov.u1[j] + ov.u2[j];
        if u > 0.0 {
            let du = ov.du1_dtheta[j] + ov.du2_dtheta[j];
            info += du * du / u;
            mass += u;
        }
    }
    Ok(info / mass)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RglKind {
    /// Against standard imaging on the same pixel grid.
    Zeta,
    /// Against the ideal-detector baseline `θ²/8`.
    ZetaPix,
    /// Full-data bound.
    ZetaMax,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RglReport {
    pub zeta: f64,
    pub kind: RglKind,
    pub theta_grid_used: Vec<f64>,
    /// FI ratios at `theta_grid_used`.
    pub ratios: Vec<f64>,
    pub ratio_extrapolation_residual: f64,
    pub converged: bool,
}

/// Least-squares fit `r ≈ a + bθ²`; returns `(a, max |misfit|/|a|)`.
fn fit_quadratic(thetas: &[f64], ratios: &[f64]) -> (f64, f64) {
    let n = thetas.len() as f64;
    let t: Vec<f64> = thetas.iter().map(|x| x * x).collect();
    let st: f64 = t.iter().sum();
    let stt: f64 = t.iter().map(|x| x * x).sum();
    let sr: f64 = ratios.iter().sum();
    let str_: f64 = t.iter().zip(ratios).map(|(x, r)| x * r).sum();
    let det = n * stt - st * st;
    let b = (n * str_ - st * sr) / det;
    let a = (sr - b * st) / n;
    let misfit = t
        .iter()
        .zip(ratios)
        .map(|(x, r)| (r - a - b * x).abs())
        .fold(0.0, f64::max);
    let rel = if a != 0.0 { misfit / a.abs() } else { misfit };
    (a, rel)
}

/// Extracts `lim_{θ→0} ratio(θ)^{1/4}`, shrinking the θ grid until the
/// quadratic fit is within [`RESIDUAL_TOL`].
pub fn extract_limit<F>(ratio: F, kind: RglKind) -> Result<RglReport>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let mut factor = 1.0;
    let mut last = None;
    for _ in 0..=MAX_SHRINKS {
        let thetas: Vec<f64> = BASE_THETAS.iter().map(|t| t / factor).collect();
        let ratios = thetas.par_iter().map(|&t| ratio(t)).collect::<Result<Vec<_>>>()?;
        if let Some(r) = ratios.iter().find(|r| !r.is_finite()) {
            return Err(Error::Numeric(format!("non-finite FI ratio {r}")));
        }
        let (a, residual) = fit_quadratic(&thetas, &ratios);
        let report = RglReport {
            zeta: a.max(0.0).powf(0.25),
            kind,
            theta_grid_used: thetas,
            ratios,
            ratio_extrapolation_residual: residual,
            converged: residual < RESIDUAL_TOL,
        };
        if report.converged {
            return Ok(report);
        }
        last = Some(report);
        factor *= SHRINK;
    }
    let report = last.expect("at least one grid evaluated");
    log::warn!(
        "θ→0 extraction unconverged: residual {:.2e} on grid {:?}",
        report.ratio_extrapolation_residual,
        report.theta_grid_used
    );
    Ok(report)
}

fn check_scheme(scheme: SchemeSpec, model: &EmitterModel) -> Result<()> {
    scheme.validate_for(model)
}

/// Resolution gain limit against pixelated standard imaging.
pub fn rgl(scheme: SchemeSpec, geometry: &DetectorGeometry, model: &EmitterModel) -> Result<RglReport> {
    check_scheme(scheme, model)?;
    extract_limit(
        |t| Ok(fi_per_photon(scheme, geometry, model, t)? / si_pixel_fi(geometry, t)?),
        RglKind::Zeta,
    )
}

/// Resolution gain limit against the ideal detector (`θ²/8`).
pub fn rgl_pix(scheme: SchemeSpec, geometry: &DetectorGeometry, model: &EmitterModel) -> Result<RglReport> {
    check_scheme(scheme, model)?;
    extract_limit(
        |t| Ok(fi_per_photon(scheme, geometry, model, t)? / (t * t / 8.0)),
        RglKind::ZetaPix,
    )
}

fn check_full_data_args(p: f64, alpha: f64, nbar: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("p", format!("must lie in [0, 1], got {p}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    if !(nbar > 0.0 && nbar.is_finite()) {
        return Err(invalid("nbar", format!("must be positive, got {nbar}")));
    }
    Ok(())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Range of `n` outside which the Poisson(`nbar`) mass is below ~1e−16.
fn poisson_support(nbar: f64) -> (u64, u64) {
    let width = 12.0 * nbar.sqrt() + 40.0;
    let lo = (nbar - width).max(0.0).floor() as u64;
    let hi = (nbar + width).ceil() as u64;
    (lo, hi)
}

/// Mixture sum `S(p, α, n̄)` of the full-data bound, evaluated in log space.
pub fn mixture_sum(p: f64, alpha: f64, nbar: f64) -> Result<f64> {
    check_full_data_args(p, alpha, nbar)?;
    let a = alpha / (2.0 - alpha);
    let b = p * p * (1.0 - a).powi(2);
    let c = 2.0 * p * (1.0 - p);
    let d = (1.0 - p).powi(2) * (1.0 + a).powi(2);
    let (lo, hi) = poisson_support(nbar);
    let ln_nbar = nbar.ln();
    let mut total = 0.0;
    for n in lo..=hi {
        let nf = n as f64;
        let ln_pois = -nbar + nf * ln_nbar - libm::lgamma(nf + 1.0);
        let mut parts = [f64::NEG_INFINITY; 3];
        if b > 0.0 && (a < 1.0 || n == 0) {
            let tail = if n == 0 { 0.0 } else { nf * (1.0 - a).ln() };
            parts[0] = b.ln() + a * nbar + tail;
        }
        if c > 0.0 {
            parts[1] = c.ln();
        }
        if d > 0.0 {
            parts[2] = d.ln() - a * nbar + nf * a.ln_1p();
        }
        total += (ln_pois - log_sum_exp(&parts)).exp();
    }
    Ok(total)
}

/// `G(p, α, n̄)` such that `ζ_max⁴ = 1 + G·n̄`.
pub fn g_function(p: f64, alpha: f64, nbar: f64) -> Result<f64> {
    check_full_data_args(p, alpha, nbar)?;
    if p == 0.0 || p == 1.0 || alpha == 0.0 {
        return Ok(0.0);
    }
    let s = mixture_sum(p, alpha, nbar)?;
    Ok(2.0 * (p * (1.0 - p)).powi(2) * alpha.powi(4) * s / ((2.0 - alpha).powi(3) * (1.0 - p * alpha)))
}

/// `lim_{n̄→∞} G(p, α, n̄)`.
pub fn g_limit(p: f64, alpha: f64) -> f64 {
    p * (1.0 - p) * alpha.powi(4) / ((2.0 - alpha).powi(3) * (1.0 - p * alpha))
}

/// Relative gap `(G_∞ − G)/G`; zero where `G` vanishes identically.
pub fn g_relative_gap(p: f64, alpha: f64, nbar: f64) -> Result<f64> {
    let g = g_function(p, alpha, nbar)?;
    if g == 0.0 {
        return Ok(0.0);
    }
    Ok((g_limit(p, alpha) - g) / g)
}

/// Full-data resolution gain limit of the simplified model.
pub fn zeta_max(p: f64, alpha: f64, nbar: f64) -> Result<f64> {
    let g = g_function(p, alpha, nbar)?;
    Ok((1.0 + g * nbar).powf(0.25))
}

/// Large-`n̄` form of [`zeta_max`].
pub fn zeta_max_asymptotic(p: f64, alpha: f64, nbar: f64) -> Result<f64> {
    check_full_data_args(p, alpha, nbar)?;
    Ok((1.0 + g_limit(p, alpha) * nbar).powf(0.25))
}

/// [`zeta_max`] wrapped as a report.
pub fn zeta_max_report(p: f64, alpha: f64, nbar: f64) -> Result<RglReport> {
    Ok(RglReport {
        zeta: zeta_max(p, alpha, nbar)?,
        kind: RglKind::ZetaMax,
        theta_grid_used: Vec::new(),
        ratios: Vec::new(),
        ratio_extrapolation_residual: 0.0,
        converged: true,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameTimeOptimum {
    pub tau_opt: f64,
    pub zeta: f64,
    /// The maximiser sits at an end of the scanned range.
    pub at_boundary: bool,
    /// Coarse scan `(τ, ζ)`.
    pub scan: Vec<(f64, f64)>,
}

/// ζ at frame time `tau` (all other settings from `geometry`).
pub fn zeta_at_frame_time(scheme: SchemeSpec, geometry: &DetectorGeometry, model: &EmitterModel, tau: f64) -> Result<f64> {
    let g = geometry.clone().with_frame_time(tau)?;
    Ok(rgl(scheme, &g, model)?.zeta)
}

/// Frame time maximising ζ: log-grid scan (9 points per decade) followed
/// by golden-section refinement to 1% in τ.
pub fn optimal_frame_time(
    scheme: SchemeSpec,
    geometry: &DetectorGeometry,
    model: &EmitterModel,
    tau_bounds: (f64, f64),
) -> Result<FrameTimeOptimum> {
    let (lo, hi) = tau_bounds;
    if !(1e-3 <= lo && lo < hi && hi <= 1e3) {
        return Err(invalid("tau_bounds", format!("need 1e-3 ≤ lo < hi ≤ 1e3, got ({lo}, {hi})")));
    }
    if !model.is_markov() {
        return Err(Error::InvalidArgument("frame-time optimisation needs the markov model".into()));
    }
    check_scheme(scheme, model)?;
    let grid = log_grid(lo, hi, 9);
    let zetas = grid
        .par_iter()
        .map(|&t| zeta_at_frame_time(scheme, geometry, model, t))
        .collect::<Result<Vec<_>>>()?;
    let best = (0..grid.len())
        .max_by(|&i, &j| zetas[i].total_cmp(&zetas[j]))
        .expect("grid is non-empty");
    let scan: Vec<(f64, f64)> = grid.iter().copied().zip(zetas.iter().copied()).collect();
    let at_boundary = best == 0 || best == grid.len() - 1;
    if at_boundary {
        log::warn!("ζ(τ) peaks at the scan boundary τ = {}", grid[best]);
        return Ok(FrameTimeOptimum {
            tau_opt: grid[best],
            zeta: zetas[best],
            at_boundary,
            scan,
        });
    }
    let (a, b) = (grid[best - 1].ln(), grid[best + 1].ln());
    let mut failure = None;
    let (x, fx) = golden_section_max(
        |lt| match zeta_at_frame_time(scheme, geometry, model, lt.exp()) {
            Ok(z) => z,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        },
        a,
        b,
        0.01_f64.ln_1p(),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let (tau_opt, zeta) = if fx >= zetas[best] { (x.exp(), fx) } else { (grid[best], zetas[best]) };
    Ok(FrameTimeOptimum {
        tau_opt,
        zeta,
        at_boundary,
        scan,
    })
}

/// Two-photon density of the anti-bunched pair and its θ-derivative (σ = 1).
fn two_photon_density(theta: f64, x1: f64, x2: f64) -> (f64, f64) {
    let psf = PsfGaussian::unit();
    let h = theta / 2.0;
    let (a1, b1) = (psf.value(x1 + h), psf.value(x2 - h));
    let (a2, b2) = (psf.value(x2 + h), psf.value(x1 - h));
    let p = 0.5 * (a1 * b1 + a2 * b2);
    // d/dθ U(x ± θ/2) = ±½ U'(x ± θ/2).
    let dp = 0.25
        * (psf.derivative(x1 + h) * b1 - a1 * psf.derivative(x2 - h) + psf.derivative(x2 + h) * b2
            - a2 * psf.derivative(x1 - h));
    (p, dp)
}

/// Symmetrised two-photon density `p_θ(x₁, x₂)` of two anti-bunched
/// emitters, each contributing exactly one photon.
pub fn two_photon_pdf(theta: f64, x1: f64, x2: f64) -> f64 {
    two_photon_density(theta, x1, x2).0
}

/// Fisher information of one two-photon frame.
pub fn antibunching_fi(theta: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(invalid("theta", format!("must be finite and ≥ 0, got {theta}")));
    }
    let t = theta / sigma;
    if t == 0.0 {
        return Ok(0.0);
    }
    let opts = QuadOptions {
        abs_tol: 1e-13 * t * t,
        rel_tol: 1e-10,
        max_intervals: 2000,
    };
    let half = 10.0 + t / 2.0;
    let f = |x1: f64, x2: f64| {
        let (p, dp) = two_photon_density(t, x1, x2);
        if p > 0.0 {
            dp * dp / p
        } else {
            0.0
        }
    };
    // Quadrants split at the origin, where the integrand has its kinks in
    // resolution demand.
    let mut total = 0.0;
    for (xr, yr) in [
        ((-half, 0.0), (-half, 0.0)),
        ((-half, 0.0), (0.0, half)),
        ((0.0, half), (-half, 0.0)),
        ((0.0, half), (0.0, half)),
    ] {
        total += integrate_2d(f, xr, yr, opts)?;
    }
    Ok(total / (sigma * sigma))
}

/// Resolution gain limit of two-photon anti-bunching measurements.
pub fn antibunching_rgl() -> Result<RglReport> {
    extract_limit(
        |t| Ok(0.5 * antibunching_fi(t, 1.0)? / (t * t / 8.0)),
        RglKind::ZetaPix,
    )
}
