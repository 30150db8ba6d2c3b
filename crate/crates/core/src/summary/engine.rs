//! Expectations and covariances of count monomials `Π n_jᵏʲ` within one
//! frame (and, for correlated frames, summed over frame lags).
//!
//! Two independent routes:
//! * [`ConfigAveraging`]: condition on the four brightness configurations of
//!   the simplified model, apply Poisson raw moments per pixel, average.
//! * [`CoxExpansion`]: expand conditional Poisson moments as polynomials in
//!   the centred frame intensities `δ₁, δ₂` of the two emitters and take
//!   expectations with their central moments and lag sums.

use std::collections::HashMap;

use nalgebra::{DMatrix, SMatrix};

use crate::blinking::{EmitterModel, IntensityStats};
use crate::dual::{Dual, Scalar};
use crate::model::{eval_poly, poisson_moment_gap, poisson_moment_poly, SceneOverlaps};

/// Product of pixel powers; sorted by pixel, exponents ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Monomial(pub Vec<(usize, usize)>);

impl Monomial {
    pub fn power(pixel: usize, k: usize) -> Self {
        Monomial(vec![(pixel, k)])
    }

    pub fn product(i: usize, j: usize) -> Self {
        if i == j {
            Monomial(vec![(i, 2)])
        } else {
            Monomial(vec![(i.min(j), 1), (i.max(j), 1)])
        }
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&(_, k)| k).sum()
    }

    fn exponent(&self, pixel: usize) -> usize {
        self.0.iter().find(|&&(p, _)| p == pixel).map_or(0, |&(_, k)| k)
    }
}

/// Pixels shared by two monomials with the exponent each carries there,
/// plus the merged pixel list `(pixel, a, b)` over the union.
fn merged(x: &Monomial, y: &Monomial) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = x.0.iter().map(|&(p, a)| (p, a, y.exponent(p))).collect();
    for &(p, b) in &y.0 {
        if x.exponent(p) == 0 {
            out.push((p, 0, b));
        }
    }
    out.sort_unstable();
    out
}

pub(crate) trait CountMoments {
    /// `E[X]` with its exact θ-derivative.
    fn mean(&self, x: &Monomial) -> Dual;
    /// Long-run per-frame covariance matrix of the monomials.
    fn covariance(&self, base: &[Monomial]) -> DMatrix<f64>;
}

/// For each unordered pair of monomials that share at least one pixel,
/// calls `f(i, j)` once.
fn for_each_sharing_pair(base: &[Monomial], mut f: impl FnMut(usize, usize)) {
    let mut by_pixel: HashMap<usize, Vec<usize>> = HashMap::new();
    for (idx, m) in base.iter().enumerate() {
        for &(p, _) in &m.0 {
            by_pixel.entry(p).or_default().push(idx);
        }
    }
    for (&pixel, list) in &by_pixel {
        for (a, &i) in list.iter().enumerate() {
            for &j in &list[a..] {
                // Visit each pair only at the smallest pixel the two share.
                let first_shared = base[i]
                    .0
                    .iter()
                    .map(|&(p, _)| p)
                    .find(|&p| base[j].exponent(p) > 0)
                    .expect("pair shares a pixel");
                if first_shared == pixel {
                    f(i, j);
                }
            }
        }
    }
}

/// Four-configuration averaging for the simplified (independent-frame)
/// model.
pub(crate) struct ConfigAveraging {
    configs: Vec<(f64, Vec<Dual>)>,
}

impl ConfigAveraging {
    pub fn new(overlaps: &SceneOverlaps, model: &EmitterModel, nbar: f64, background: f64) -> Self {
        let (p_off, p_on) = model.level_probabilities();
        let (q_off, q_on) = (model.q_off, model.q_on);
        let pairs = [
            (p_off * p_off, q_off, q_off),
            (p_off * p_on, q_off, q_on),
            (p_on * p_off, q_on, q_off),
            (p_on * p_on, q_on, q_on),
        ];
        let configs = pairs
            .iter()
            .filter(|&&(w, _, _)| w > 0.0)
            .map(|&(w, q1, q2)| {
                let nu = (0..overlaps.len())
                    .map(|j| {
                        (overlaps.source1(j).scale(q1) + overlaps.source2(j).scale(q2)).scale(nbar)
                            + Dual::constant(background)
                    })
                    .collect();
                (w, nu)
            })
            .collect();
        Self { configs }
    }

    fn conditional_mean<T: Scalar>(x: &Monomial, nu: &[T]) -> T {
        let mut acc = T::one();
        for &(p, k) in &x.0 {
            acc = acc * eval_poly(poisson_moment_poly(k).expect("order ≤ 8"), nu[p]);
        }
        acc
    }

    /// `Cov(X, Y | configuration)` via a telescoped product of exact
    /// per-pixel moment gaps.
    fn conditional_cov(x: &Monomial, y: &Monomial, nu: &[f64]) -> f64 {
        let pixels = merged(x, y);
        let mut joint = Vec::with_capacity(pixels.len());
        let mut split = Vec::with_capacity(pixels.len());
        let mut gap = Vec::with_capacity(pixels.len());
        for &(p, a, b) in &pixels {
            let v = nu[p];
            joint.push(eval_poly(poisson_moment_poly(a + b).expect("order ≤ 8"), v));
            split.push(
                eval_poly(poisson_moment_poly(a).expect("order ≤ 8"), v)
                    * eval_poly(poisson_moment_poly(b).expect("order ≤ 8"), v),
            );
            gap.push(if a == 0 || b == 0 {
                0.0
            } else {
                eval_poly(&poisson_moment_gap(a, b).expect("order ≤ 8"), v)
            });
        }
        let n = pixels.len();
        let mut total = 0.0;
        for k in 0..n {
            if gap[k] == 0.0 {
                continue;
            }
            let left: f64 = joint[..k].iter().product();
            let right: f64 = split[k + 1..].iter().product();
            total += left * gap[k] * right;
        }
        total
    }
}

impl CountMoments for ConfigAveraging {
    fn mean(&self, x: &Monomial) -> Dual {
        let mut acc = Dual::constant(0.0);
        for (w, nu) in &self.configs {
            acc += Self::conditional_mean(x, nu).scale(*w);
        }
        acc
    }

    fn covariance(&self, base: &[Monomial]) -> DMatrix<f64> {
        let n = base.len();
        let plain: Vec<(f64, Vec<f64>)> = self
            .configs
            .iter()
            .map(|(w, nu)| (*w, nu.iter().map(|d| d.re).collect()))
            .collect();
        let cond: Vec<Vec<f64>> = plain
            .iter()
            .map(|(_, nu)| base.iter().map(|x| Self::conditional_mean(x, nu)).collect())
            .collect();
        let means: Vec<f64> = (0..n)
            .map(|i| plain.iter().zip(&cond).map(|((w, _), c)| w * c[i]).sum())
            .collect();
        let centred = DMatrix::from_fn(plain.len(), n, |c, i| plain[c].0.sqrt() * (cond[c][i] - means[i]));
        let mut cov = centred.transpose() * &centred;
        for_each_sharing_pair(base, |i, j| {
            let within: f64 = plain
                .iter()
                .map(|(w, nu)| w * Self::conditional_cov(&base[i], &base[j], nu))
                .sum();
            cov[(i, j)] += within;
            if i != j {
                cov[(j, i)] += within;
            }
        });
        cov
    }
}

const PD: usize = 5;

/// Polynomial in `(δ₁, δ₂)` of total degree ≤ 4.
#[derive(Debug, Clone, Copy)]
struct Poly2<T: Scalar> {
    c: [[T; PD]; PD],
}

impl<T: Scalar> Poly2<T> {
    fn constant(v: T) -> Self {
        let mut c = [[T::zero(); PD]; PD];
        c[0][0] = v;
        Self { c }
    }

    fn linear(c0: T, c1: T, c2: T) -> Self {
        let mut p = Self::constant(c0);
        p.c[1][0] = c1;
        p.c[0][1] = c2;
        p
    }

    fn mul(&self, o: &Self) -> Self {
        let mut out = Self::constant(T::zero());
        for a in 0..PD {
            for b in 0..PD - a {
                let x = self.c[a][b];
                for c in 0..PD - a {
                    for d in 0..PD - b {
                        if a + b + c + d < PD {
                            out.c[a + c][b + d] += x * o.c[c][d];
                        }
                    }
                }
            }
        }
        out
    }

    fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for a in 0..PD {
            for b in 0..PD {
                out.c[a][b] += o.c[a][b];
            }
        }
        out
    }

    /// `Σ_r coeffs[r]·selfʳ`.
    fn compose(coeffs: &[f64], x: &Self) -> Self {
        let mut acc = Self::constant(T::zero());
        for &k in coeffs.iter().rev() {
            acc = acc.mul(x).add(&Self::constant(T::from(k)));
        }
        acc
    }

    fn expectation(&self, central: &[f64; 5]) -> T {
        let mut acc = T::zero();
        for a in 0..PD {
            for b in 0..PD - a {
                let w = central[a] * central[b];
                if w != 0.0 {
                    acc += self.c[a][b] * T::from(w);
                }
            }
        }
        acc
    }
}

/// Centred-intensity expansion, valid for any stationary brightness process
/// with known per-frame central moments (order ≤ 4) and lag sums.
pub(crate) struct CoxExpansion {
    stats: IntensityStats,
    base_rate: Vec<Dual>,
    u1: Vec<Dual>,
    u2: Vec<Dual>,
}

type Lin = SMatrix<f64, 9, 9>;

/// Index of `δ₁ᵃ δ₂ᵇ` (a, b ≤ 2) in the flattened 3×3 coefficient layout.
fn slot(a: usize, b: usize) -> usize {
    3 * a + b
}

impl CoxExpansion {
    pub fn new(overlaps: &SceneOverlaps, stats: IntensityStats, background: f64) -> Self {
        let n = overlaps.len();
        let u1: Vec<Dual> = (0..n).map(|j| overlaps.source1(j)).collect();
        let u2: Vec<Dual> = (0..n).map(|j| overlaps.source2(j)).collect();
        let base_rate = (0..n)
            .map(|j| (u1[j] + u2[j]).scale(stats.mean) + Dual::constant(background))
            .collect();
        Self {
            stats,
            base_rate,
            u1,
            u2,
        }
    }

    fn rate_poly<T: Scalar>(&self, pixel: usize, pick: impl Fn(Dual) -> T) -> Poly2<T> {
        Poly2::linear(pick(self.base_rate[pixel]), pick(self.u1[pixel]), pick(self.u2[pixel]))
    }

    fn conditional_mean<T: Scalar>(&self, x: &Monomial, pick: impl Fn(Dual) -> T + Copy) -> Poly2<T> {
        let mut acc = Poly2::constant(T::one());
        for &(p, k) in &x.0 {
            let mu = self.rate_poly(p, pick);
            acc = acc.mul(&Poly2::compose(poisson_moment_poly(k).expect("order ≤ 8"), &mu));
        }
        acc
    }

    fn conditional_cov(&self, x: &Monomial, y: &Monomial) -> Poly2<f64> {
        let pixels = merged(x, y);
        let re = |d: Dual| d.re;
        let mut joint = Vec::new();
        let mut split = Vec::new();
        let mut gap = Vec::new();
        for &(p, a, b) in &pixels {
            let mu = self.rate_poly(p, re);
            let m = |k: usize| Poly2::compose(poisson_moment_poly(k).expect("order ≤ 8"), &mu);
            joint.push(m(a + b));
            split.push(m(a).mul(&m(b)));
            gap.push(if a == 0 || b == 0 {
                None
            } else {
                Some(Poly2::compose(&poisson_moment_gap(a, b).expect("order ≤ 8"), &mu))
            });
        }
        let mut total = Poly2::constant(0.0);
        for k in 0..pixels.len() {
            let Some(g) = &gap[k] else { continue };
            let mut term = *g;
            for j in &joint[..k] {
                term = term.mul(j);
            }
            for s in &split[k + 1..] {
                term = term.mul(s);
            }
            total = total.add(&term);
        }
        total
    }

    /// Same-frame covariance of intensity monomials, and the summed lag
    /// cross-covariance (frame 1 against frames m ≥ 2).
    fn intensity_kernels(&self) -> (Lin, Lin) {
        let g = &self.stats.central;
        let h = &self.stats.lag_sum;
        let hh = self.stats.lag_sum_sq11;
        let mut same = Lin::zeros();
        let mut lag = Lin::zeros();
        for a in 0..3 {
            for b in 0..3 - a {
                for c in 0..3 {
                    for d in 0..3 - c {
                        same[(slot(a, b), slot(c, d))] = g[a + c] * g[b + d] - g[a] * g[b] * g[c] * g[d];
                        let mut t = h[a][c] * g[b] * g[d] + g[a] * g[c] * h[b][d];
                        if a == 1 && b == 1 && c == 1 && d == 1 {
                            t += hh;
                        }
                        lag[(slot(a, b), slot(c, d))] = t;
                    }
                }
            }
        }
        (same, lag)
    }
}

impl CountMoments for CoxExpansion {
    fn mean(&self, x: &Monomial) -> Dual {
        self.conditional_mean(x, |d| d).expectation(&self.stats.central)
    }

    fn covariance(&self, base: &[Monomial]) -> DMatrix<f64> {
        assert!(base.iter().all(|m| m.degree() <= 2), "intensity expansion supports degree ≤ 2");
        let n = base.len();
        let mut coeffs = DMatrix::<f64>::zeros(n, 9);
        for (i, x) in base.iter().enumerate() {
            let p = self.conditional_mean(x, |d| d.re);
            for a in 0..3 {
                for b in 0..3 - a {
                    coeffs[(i, slot(a, b))] = p.c[a][b];
                }
            }
        }
        let (same, lag) = self.intensity_kernels();
        let kernel = same + lag + lag.transpose();
        let kernel = DMatrix::from_column_slice(9, 9, kernel.as_slice());
        let mut cov = &coeffs * kernel * coeffs.transpose();
        for_each_sharing_pair(base, |i, j| {
            let within = self.conditional_cov(&base[i], &base[j]).expectation(&self.stats.central);
            cov[(i, j)] += within;
            if i != j {
                cov[(j, i)] += within;
            }
        });
        cov
    }
}
