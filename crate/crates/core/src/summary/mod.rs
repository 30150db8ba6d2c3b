//! Asymptotic Gaussian summaries `(μ, Σ₁, ∂μ/∂θ)` of per-frame statistic
//! vectors.
//!
//! Every statistic is a linear combination of count monomials. The moments
//! of the monomials come from one of two engines (see [`engine`]); the
//! statistic summary is then `μ = Lμ_base + c`, `Σ₁ = LΣ_baseLᵀ` and
//! `∂μ/∂θ = L·∂μ_base/∂θ`, with `L` held fixed at the evaluation point.

mod engine;
mod scheme;

use std::collections::HashMap;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::blinking::{EmitterModel, IntensityStats};
use crate::error::{Error, Result};
use crate::model::{pixel_overlaps, DetectorGeometry, PsfGaussian};

use engine::{ConfigAveraging, CountMoments, CoxExpansion, Monomial};
pub use scheme::{statistic_components, Component, SchemeSpec};

/// Pixels whose total source overlap falls below this are dropped when
/// there is no background.
const DEGENERATE_OVERLAP: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct GaussianSummary {
    pub scheme: SchemeSpec,
    pub mu: DVector<f64>,
    /// Long-run per-frame covariance (`M_fr·Cov(N̄)` as `M_fr → ∞`).
    pub sigma1: DMatrix<f64>,
    pub dmu_dtheta: DVector<f64>,
    /// Mean source photons per frame (background excluded).
    pub mean_photons_per_frame: f64,
    pub components: Vec<Component>,
    /// Grid pixels kept in the statistic vector.
    pub pixels: Vec<usize>,
    /// Pixel pairs `(i, j, w)` of each centroid component, in component
    /// order.
    pub centroid_weights: Vec<Vec<(usize, usize, f64)>>,
}

impl GaussianSummary {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `λ_min/λ_max` of `Σ₁`; non-negative up to roundoff for a valid
    /// covariance.
    pub fn min_relative_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(self.sigma1.clone()).eigenvalues;
        let max = eig.max();
        if max <= 0.0 {
            return eig.min();
        }
        eig.min() / max
    }
}

/// Weighting of pixel pairs inside each centroid sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CentroidWeights {
    Uniform,
    /// SNR-optimal weights from exact pair covariances.
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    ConfigAveraging,
    IntensityExpansion,
}

/// Summary for either blinking model.
pub fn summary(scheme: SchemeSpec, geometry: &DetectorGeometry, model: &EmitterModel, theta: f64) -> Result<GaussianSummary> {
    if model.is_markov() {
        markov_summary(scheme, geometry, model, theta)
    } else {
        simplified_summary(scheme, geometry, model, theta)
    }
}

/// Summary under the simplified model (frames independent, four brightness
/// configurations per frame).
pub fn simplified_summary(
    scheme: SchemeSpec,
    geometry: &DetectorGeometry,
    model: &EmitterModel,
    theta: f64,
) -> Result<GaussianSummary> {
    if model.is_markov() {
        return Err(Error::InvalidArgument("simplified_summary needs the simplified model".into()));
    }
    build(scheme, geometry, model, theta, Route::ConfigAveraging, default_weights(scheme))
}

/// Summary under the Markov model, including inter-frame correlations.
pub fn markov_summary(
    scheme: SchemeSpec,
    geometry: &DetectorGeometry,
    model: &EmitterModel,
    theta: f64,
) -> Result<GaussianSummary> {
    if !model.is_markov() {
        return Err(Error::InvalidArgument("markov_summary needs the markov model".into()));
    }
    build(scheme, geometry, model, theta, Route::IntensityExpansion, default_weights(scheme))
}

/// `M+XC2w`-style summary with explicit weighting; `Uniform` reproduces
/// `M+XC2s`.
pub fn weighted_xc2s_summary(
    geometry: &DetectorGeometry,
    model: &EmitterModel,
    theta: f64,
    weights: CentroidWeights,
) -> Result<GaussianSummary> {
    let scheme = match weights {
        CentroidWeights::Uniform => SchemeSpec::MXc2s,
        CentroidWeights::Optimal => SchemeSpec::MXc2w,
    };
    let route = if model.is_markov() {
        Route::IntensityExpansion
    } else {
        Route::ConfigAveraging
    };
    build(scheme, geometry, model, theta, route, weights)
}

fn default_weights(scheme: SchemeSpec) -> CentroidWeights {
    if scheme == SchemeSpec::MXc2w {
        CentroidWeights::Optimal
    } else {
        CentroidWeights::Uniform
    }
}

/// SNR-optimal weights for a sum `S = Σ wᵢ Xᵢ` of terms with means `κ` and
/// covariance `A`, normalised to `w₁ = 1`.
///
/// Stationarity of `⟨S⟩²/Var(S)` requires `(Aw)_m/κ_m` to be the same for
/// all `m`, i.e. the `k − 1` equations `Σᵢ wᵢ (A_mi/κ_m − A_1i/κ₁) = 0`.
/// They are solved in the equivalent form `Aw ∝ κ` after Jacobi scaling,
/// which stays accurate when the terms differ by orders of magnitude; the
/// result is then checked against the reduced system.
pub fn xc2_weights(kappas: &[f64], cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = kappas.len();
    if k == 0 || cov.nrows() != k || cov.ncols() != k {
        return Err(Error::InvalidArgument(format!(
            "need k ≥ 1 covariances and a k×k matrix, got k = {k} and {}×{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let ill = Error::IllConditionedWeights { terms: k };
    if kappas[0] == 0.0 || kappas.iter().any(|v| !v.is_finite()) {
        return Err(ill);
    }
    if (0..k).any(|i| cov[(i, i)] <= 0.0) {
        return Err(ill);
    }
    let d: Vec<f64> = (0..k).map(|i| cov[(i, i)].sqrt().recip()).collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| d[i] * cov[(i, j)] * d[j]);
    let rhs = DVector::from_fn(k, |i, _| d[i] * kappas[i]);
    let v = scaled.lu().solve(&rhs).ok_or(Error::IllConditionedWeights { terms: k })?;
    let w0 = d[0] * v[0];
    if !(w0.is_finite() && w0 != 0.0) {
        return Err(ill);
    }
    let w: Vec<f64> = (0..k).map(|i| d[i] * v[i] / w0).collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(ill);
    }
    // Reduced-system residual, relative to the size of its terms.
    let aw: Vec<f64> = (0..k).map(|m| (0..k).map(|i| cov[(m, i)] * w[i]).sum()).collect();
    let term_size: Vec<f64> = (0..k)
        .map(|m| (0..k).map(|i| (cov[(m, i)] * w[i]).abs()).sum::<f64>() / kappas[m].abs())
        .collect();
    for m in (1..k).filter(|&m| kappas[m] != 0.0) {
        let r = aw[m] / kappas[m] - aw[0] / kappas[0];
        if r.abs() > 1e-6 * (term_size[m] + term_size[0]) {
            return Err(ill);
        }
    }
    Ok(w)
}

/// Sparse linear statistic `c + Σ coeff·base[idx]`.
#[derive(Debug, Clone, Default)]
struct Row {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

struct Basis {
    monomials: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
}

impl Basis {
    fn new() -> Self {
        Self {
            monomials: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, m: Monomial) -> usize {
        if let Some(&i) = self.index.get(&m) {
            return i;
        }
        let i = self.monomials.len();
        self.index.insert(m.clone(), i);
        self.monomials.push(m);
        i
    }
}

fn build(
    scheme: SchemeSpec,
    geometry: &DetectorGeometry,
    model: &EmitterModel,
    theta: f64,
    route: Route,
    weights: CentroidWeights,
) -> Result<GaussianSummary> {
    scheme.validate_for(model)?;
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("must be finite and ≥ 0, got {theta}"),
        });
    }
    let background = geometry.background_mean;
    let all = pixel_overlaps(geometry, &PsfGaussian::unit(), theta)?;
    let pixels: Vec<usize> = (0..all.len())
        .filter(|&j| background > 0.0 || all.total(j) >= DEGENERATE_OVERLAP)
        .collect();
    let overlaps = all.select(&pixels);

    let stats = if model.is_markov() {
        IntensityStats::markov(model, geometry.frame_time)?
    } else {
        IntensityStats::simplified(model, geometry.frame_time)
    };
    let mean_photons_per_frame = (0..all.len()).map(|j| all.total(j)).sum::<f64>() * stats.mean;

    let engine: Box<dyn CountMoments> = match route {
        Route::ConfigAveraging => Box::new(ConfigAveraging::new(
            &overlaps,
            model,
            model.mean_power * geometry.frame_time,
            background,
        )),
        Route::IntensityExpansion => Box::new(CoxExpansion::new(&overlaps, stats, background)),
    };

    let components = scheme::components_for_pixels(scheme, &pixels)?;
    let local = |i: usize| pixels.binary_search(&i).expect("component pixel is active");
    let first: Vec<f64> = (0..pixels.len()).map(|l| engine.mean(&Monomial::power(l, 1)).re).collect();

    let mut basis = Basis::new();
    let mut rows: Vec<Row> = Vec::with_capacity(components.len());
    // Centroid rows are filled after the base covariance is known.
    let mut centroid_slots: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for (r, comp) in components.iter().enumerate() {
        let mut row = Row::default();
        match *comp {
            Component::Mean(i) => row.terms.push((basis.intern(Monomial::power(local(i), 1)), 1.0)),
            Component::Power(i, k) => row.terms.push((basis.intern(Monomial::power(local(i), k)), 1.0)),
            Component::CentredSquare(i) => {
                let l = local(i);
                row.terms.push((basis.intern(Monomial::power(l, 2)), 1.0));
                row.terms.push((basis.intern(Monomial::power(l, 1)), -2.0 * first[l]));
                row.constant = first[l] * first[l];
            }
            Component::Product(i, j) => row.terms.push((basis.intern(Monomial::product(local(i), local(j))), 1.0)),
            Component::Centroid(s) => {
                let pairs: Vec<(usize, usize)> = pixels
                    .iter()
                    .filter(|&&i| i <= s && 2 * i <= s)
                    .filter_map(|&i| pixels.binary_search(&(s - i)).ok().map(|b| (local(i), b)))
                    .collect();
                for &(a, b) in &pairs {
                    basis.intern(Monomial::product(a, b));
                    basis.intern(Monomial::power(a, 1));
                    basis.intern(Monomial::power(b, 1));
                }
                centroid_slots.push((r, pairs));
            }
        }
        rows.push(row);
    }

    let base_means: Vec<_> = basis.monomials.iter().map(|m| engine.mean(m)).collect();
    let base_cov = engine.covariance(&basis.monomials);

    let centred_product = |a: usize, b: usize, w: f64, row: &mut Row, basis: &Basis| {
        row.terms.push((basis.index[&Monomial::product(a, b)], w));
        row.terms.push((basis.index[&Monomial::power(a, 1)], -w * first[b]));
        row.terms.push((basis.index[&Monomial::power(b, 1)], -w * first[a]));
        row.constant += w * first[a] * first[b];
    };
    let mut centroid_weights = Vec::with_capacity(centroid_slots.len());
    let mut fallbacks = 0usize;
    for (r, pairs) in &centroid_slots {
        let w = match weights {
            CentroidWeights::Uniform => vec![1.0; pairs.len()],
            CentroidWeights::Optimal => {
                let pair_rows: Vec<Row> = pairs
                    .iter()
                    .map(|&(a, b)| {
                        let mut row = Row::default();
                        centred_product(a, b, 1.0, &mut row, &basis);
                        row
                    })
                    .collect();
                let l = dense(&pair_rows, basis.monomials.len());
                let a_cov = &l * &base_cov * l.transpose();
                let kappas: Vec<f64> = pairs
                    .iter()
                    .map(|&(a, b)| {
                        base_cov[(basis.index[&Monomial::power(a, 1)], basis.index[&Monomial::power(b, 1)])]
                    })
                    .collect();
                // Reference the strongest term so that `w₁ = 1` is well posed.
                let lead = (0..kappas.len())
                    .max_by(|&i, &j| kappas[i].abs().total_cmp(&kappas[j].abs()))
                    .unwrap_or(0);
                let mut order: Vec<usize> = (0..kappas.len()).collect();
                order.swap(0, lead);
                let kappas: Vec<f64> = order.iter().map(|&i| kappas[i]).collect();
                let a_cov = a_cov.select_rows(&order).select_columns(&order);
                match xc2_weights(&kappas, &a_cov) {
                    Ok(w) => {
                        let mut out = vec![0.0; w.len()];
                        for (slot, &i) in order.iter().enumerate() {
                            out[i] = w[slot];
                        }
                        out
                    }
                    Err(e) => {
                        debug!("centroid {}: {e}; using uniform weights", components[*r].centroid_index());
                        fallbacks += 1;
                        vec![1.0; pairs.len()]
                    }
                }
            }
        };
        for (&(a, b), &wi) in pairs.iter().zip(&w) {
            centred_product(a, b, wi, &mut rows[*r], &basis);
        }
        centroid_weights.push(pairs.iter().zip(&w).map(|(&(a, b), &wi)| (pixels[a], pixels[b], wi)).collect());
    }

    if fallbacks > 0 {
        warn!("{fallbacks} of {} centroids fell back to uniform weights (ill-conditioned weight system)", centroid_slots.len());
    }

    let l = dense(&rows, basis.monomials.len());
    let base_re = DVector::from_iterator(base_means.len(), base_means.iter().map(|d| d.re));
    let base_eps = DVector::from_iterator(base_means.len(), base_means.iter().map(|d| d.eps));
    let constants = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.constant));
    let mu = &l * base_re + constants;
    let dmu_dtheta = &l * base_eps;
    let mut sigma1 = &l * base_cov * l.transpose();
    sigma1 = (&sigma1 + sigma1.transpose()) * 0.5;

    Ok(GaussianSummary {
        scheme,
        mu,
        sigma1,
        dmu_dtheta,
        mean_photons_per_frame,
        components,
        pixels,
        centroid_weights,
    })
}

fn dense(rows: &[Row], n_base: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(rows.len(), n_base);
    for (r, row) in rows.iter().enumerate() {
        for &(i, c) in &row.terms {
            l[(r, i)] += c;
        }
    }
    l
}

impl Component {
    fn centroid_index(self) -> usize {
        match self {
            Component::Centroid(s) => s,
            _ => usize::MAX,
        }
    }
}
