//! Physical scene: Gaussian PSF, two emitters at ±θ/2, a 1D pixel grid, and
//! the Poisson moment polynomials used to build expectations of counts.
//!
//! Lengths are in units of the PSF width σ unless a [`PsfGaussian`] with a
//! different width is supplied explicitly.

use serde::{Deserialize, Serialize};

use crate::dual::{Dual, Scalar};
use crate::error::{invalid, Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Minimum captured PSF mass per source for a grid to count as covering the
/// scene.
pub const COVERAGE_MASS: f64 = 1.0 - 1e-8;

/// Default half-width of the pixel grid, in σ.
pub const DEFAULT_HALF_EXTENT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfGaussian {
    pub sigma: f64,
}

impl PsfGaussian {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn unit() -> Self {
        Self { sigma: 1.0 }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let z = x / self.sigma;
        FRAC_1_SQRT_2PI / self.sigma * (-0.5 * z * z).exp()
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        -x / (self.sigma * self.sigma) * self.value(x)
    }

    /// Mass of the density in `[lo, hi]`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        normal_mass(lo / self.sigma, hi / self.sigma)
    }
}

/// Gaussian PSF density `(2πσ²)^(-1/2) exp(-x²/2σ²)`.
pub fn gaussian_psf_value(x: f64, sigma: f64) -> Result<f64> {
    Ok(PsfGaussian::new(sigma)?.value(x))
}

/// Standard normal mass in `[lo, hi]`, evaluated on the tail that avoids
/// cancellation.
pub fn normal_mass(lo: f64, hi: f64) -> f64 {
    use std::f64::consts::FRAC_1_SQRT_2;
    if lo >= 0.0 {
        0.5 * (libm::erfc(lo * FRAC_1_SQRT_2) - libm::erfc(hi * FRAC_1_SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (libm::erfc(-hi * FRAC_1_SQRT_2) - libm::erfc(-lo * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * libm::erfc(-lo * FRAC_1_SQRT_2) - 0.5 * libm::erfc(hi * FRAC_1_SQRT_2)
    }
}

/// One-dimensional pixel grid, symmetric about x = 0 with a pixel edge at 0,
/// plus the frame time and the Poisson background level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorGeometry {
    pub pixel_size: f64,
    pub n_pixels: usize,
    pub frame_time: f64,
    pub background_mean: f64,
}

impl DetectorGeometry {
    pub fn new(pixel_size: f64, n_pixels: usize, frame_time: f64, background_mean: f64) -> Result<Self> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(invalid("pixel_size", format!("must be positive, got {pixel_size}")));
        }
        if n_pixels == 0 || n_pixels % 2 != 0 {
            return Err(invalid("n_pixels", format!("must be even and positive, got {n_pixels}")));
        }
        if !(frame_time > 0.0 && frame_time.is_finite()) {
            return Err(invalid("frame_time", format!("must be positive, got {frame_time}")));
        }
        if !(background_mean >= 0.0 && background_mean.is_finite()) {
            return Err(invalid(
                "background_mean",
                format!("must be non-negative, got {background_mean}"),
            ));
        }
        Ok(Self {
            pixel_size,
            n_pixels,
            frame_time,
            background_mean,
        })
    }

    /// Grid of the given pixel size spanning at least `±half_extent`.
    pub fn with_extent(pixel_size: f64, half_extent: f64, frame_time: f64, background_mean: f64) -> Result<Self> {
        if !(pixel_size > 0.0) {
            return Err(invalid("pixel_size", format!("must be positive, got {pixel_size}")));
        }
        let half = (half_extent / pixel_size - 1e-9).ceil().max(1.0) as usize;
        Self::new(pixel_size, 2 * half, frame_time, background_mean)
    }

    /// Default ±8σ grid.
    pub fn standard(pixel_size: f64, frame_time: f64) -> Result<Self> {
        Self::with_extent(pixel_size, DEFAULT_HALF_EXTENT, frame_time, 0.0)
    }

    pub fn half_extent(&self) -> f64 {
        0.5 * self.n_pixels as f64 * self.pixel_size
    }

    /// Centre of the zero-based pixel `i`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5 - 0.5 * self.n_pixels as f64) * self.pixel_size
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let lo = (i as f64 - 0.5 * self.n_pixels as f64) * self.pixel_size;
        (lo, lo + self.pixel_size)
    }

    /// Zero-based index of the reflected pixel (x → −x).
    pub fn mirror(&self, i: usize) -> usize {
        self.n_pixels - 1 - i
    }

    pub fn with_background(mut self, mu_b: f64) -> Result<Self> {
        if !(mu_b >= 0.0 && mu_b.is_finite()) {
            return Err(invalid("background_mean", format!("must be non-negative, got {mu_b}")));
        }
        self.background_mean = mu_b;
        Ok(self)
    }

    pub fn with_frame_time(mut self, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid("frame_time", format!("must be positive, got {tau}")));
        }
        self.frame_time = tau;
        Ok(self)
    }
}

/// Pixel-integrated PSF masses of both sources and their θ-derivatives.
/// Source 1 sits at −θ/2, source 2 at +θ/2.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOverlaps {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub du1_dtheta: Vec<f64>,
    pub du2_dtheta: Vec<f64>,
}

impl SceneOverlaps {
    pub fn len(&self) -> usize {
        self.u1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u1.is_empty()
    }

    pub fn source1(&self, j: usize) -> Dual {
        Dual::new(self.u1[j], self.du1_dtheta[j])
    }

    pub fn source2(&self, j: usize) -> Dual {
        Dual::new(self.u2[j], self.du2_dtheta[j])
    }

    /// Total mass in pixel `j`.
    pub fn total(&self, j: usize) -> f64 {
        self.u1[j] + self.u2[j]
    }

    /// Restricts to the listed pixels.
    pub fn select(&self, pixels: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| pixels.iter().map(|&j| v[j]).collect();
        Self {
            u1: pick(&self.u1),
            u2: pick(&self.u2),
            du1_dtheta: pick(&self.du1_dtheta),
            du2_dtheta: pick(&self.du2_dtheta),
        }
    }
}

/// Pixel masses `U_{j,1} = ∫ U(x+θ/2)`, `U_{j,2} = ∫ U(x−θ/2)` over each
/// pixel, with closed-form derivatives in θ.
pub fn pixel_overlaps(geometry: &DetectorGeometry, psf: &PsfGaussian, theta: f64) -> Result<SceneOverlaps> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(invalid("theta", format!("must be non-negative, got {theta}")));
    }
    let m = geometry.n_pixels;
    let h = 0.5 * theta;
    let mut out = SceneOverlaps {
        u1: Vec::with_capacity(m),
        u2: Vec::with_capacity(m),
        du1_dtheta: Vec::with_capacity(m),
        du2_dtheta: Vec::with_capacity(m),
    };
    for i in 0..m {
        let (a, b) = geometry.edges(i);
        out.u1.push(psf.mass(a + h, b + h));
        out.u2.push(psf.mass(a - h, b - h));
        out.du1_dtheta.push(0.5 * (psf.value(b + h) - psf.value(a + h)));
        out.du2_dtheta.push(-0.5 * (psf.value(b - h) - psf.value(a - h)));
    }
    let achieved = out.u1.iter().sum::<f64>().min(out.u2.iter().sum::<f64>());
    if achieved < COVERAGE_MASS {
        return Err(Error::Coverage {
            achieved,
            required: COVERAGE_MASS,
        });
    }
    Ok(out)
}

/// Stirling numbers of the second kind `S(k, r)` for `k ≤ 8`.
const STIRLING2: [[f64; 9]; 9] = [
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 7.0, 6.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 15.0, 25.0, 10.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 31.0, 90.0, 65.0, 15.0, 1.0, 0.0, 0.0],
    [0.0, 1.0, 63.0, 301.0, 350.0, 140.0, 21.0, 1.0, 0.0],
    [0.0, 1.0, 127.0, 966.0, 1701.0, 1050.0, 266.0, 28.0, 1.0],
];

pub const MAX_MOMENT_ORDER: usize = 8;

/// Coefficients (ascending powers of ν) of the Poisson raw moment `M_k(ν)`.
pub fn poisson_moment_poly(k: usize) -> Result<&'static [f64]> {
    if k > MAX_MOMENT_ORDER {
        return Err(Error::UnsupportedOrder(k));
    }
    Ok(&STIRLING2[k][..=k])
}

/// Raw moment `E[n^k]` of a Poisson variable with mean `nu` (Touchard
/// polynomial).
pub fn poisson_raw_moment(k: usize, nu: f64) -> Result<f64> {
    Ok(eval_poly(poisson_moment_poly(k)?, nu))
}

pub(crate) fn eval_poly<T: Scalar>(coeffs: &[f64], x: T) -> T {
    let mut acc = T::zero();
    for &c in coeffs.iter().rev() {
        acc = acc * x + T::from(c);
    }
    acc
}

/// Coefficients of `M_{a+b}(ν) − M_a(ν)·M_b(ν)`, the conditional covariance
/// of `n^a` and `n^b` for one Poisson variable. Integer arithmetic on the
/// coefficients keeps the cancelling leading powers exact.
pub fn poisson_moment_gap(a: usize, b: usize) -> Result<Vec<f64>> {
    let joint = poisson_moment_poly(a + b)?;
    let pa = poisson_moment_poly(a)?;
    let pb = poisson_moment_poly(b)?;
    let mut out = joint.to_vec();
    for (i, &x) in pa.iter().enumerate() {
        for (j, &y) in pb.iter().enumerate() {
            out[i + j] -= x * y;
        }
    }
    while out.len() > 1 && *out.last().unwrap() == 0.0 {
        out.pop();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, QuadOptions};

    #[test]
    fn psf_peak_and_symmetry() {
        let v = gaussian_psf_value(0.0, 1.0).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(gaussian_psf_value(-1.7, 0.8).unwrap(), gaussian_psf_value(1.7, 0.8).unwrap());
        assert!(gaussian_psf_value(0.0, 0.0).is_err());
        assert!(gaussian_psf_value(0.0, -1.0).is_err());
    }

    #[test]
    fn psf_normalized_by_quadrature() {
        for sigma in [0.3, 1.0, 2.5] {
            let psf = PsfGaussian::new(sigma).unwrap();
            let r = integrate(|x| psf.value(x), -8.0 * sigma, 8.0 * sigma, QuadOptions::default()).unwrap();
            assert!((r.value - 1.0).abs() < 1e-10, "sigma={sigma}: {}", r.value);
        }
    }

    #[test]
    fn grid_layout() {
        let g = DetectorGeometry::standard(0.5, 1.0).unwrap();
        assert_eq!(g.n_pixels, 32);
        assert_eq!(g.edges(16).0, 0.0);
        assert_eq!(g.center(0), -g.center(31));
        assert_eq!(g.mirror(3), 28);
        assert_eq!(DetectorGeometry::standard(2.0, 1.0).unwrap().n_pixels, 8);
        assert_eq!(DetectorGeometry::standard(0.05, 1.0).unwrap().n_pixels, 320);
        assert!(DetectorGeometry::new(0.5, 31, 1.0, 0.0).is_err());
        assert!(DetectorGeometry::new(0.5, 32, 1.0, -1.0).is_err());
    }

    #[test]
    fn coincident_sources_have_equal_overlaps() {
        let g = DetectorGeometry::standard(0.5, 1.0).unwrap();
        let o = pixel_overlaps(&g, &PsfGaussian::unit(), 0.0).unwrap();
        assert_eq!(o.u1, o.u2);
    }

    #[test]
    fn overlaps_mirror() {
        let g = DetectorGeometry::standard(0.37, 1.0).unwrap();
        let o = pixel_overlaps(&g, &PsfGaussian::unit(), 0.83).unwrap();
        for j in 0..g.n_pixels {
            assert!((o.u1[j] - o.u2[g.mirror(j)]).abs() < 1e-16);
            assert!((o.du1_dtheta[j] - o.du2_dtheta[g.mirror(j)]).abs() < 1e-16);
        }
    }

    #[test]
    fn overlap_derivatives_match_finite_differences() {
        let g = DetectorGeometry::standard(0.5, 1.0).unwrap();
        let psf = PsfGaussian::unit();
        let h = 1e-5;
        for theta in [0.05, 0.3, 1.2] {
            let o = pixel_overlaps(&g, &psf, theta).unwrap();
            let p = pixel_overlaps(&g, &psf, theta + h).unwrap();
            let m = pixel_overlaps(&g, &psf, theta - h).unwrap();
            for j in 0..g.n_pixels {
                let fd1 = (p.u1[j] - m.u1[j]) / (2.0 * h);
                let fd2 = (p.u2[j] - m.u2[j]) / (2.0 * h);
                assert!((fd1 - o.du1_dtheta[j]).abs() < 1e-8);
                assert!((fd2 - o.du2_dtheta[j]).abs() < 1e-8);
            }
            let mass_rate: f64 = o.du1_dtheta.iter().sum();
            assert!(mass_rate.abs() < 1e-8);
            let total: f64 = (0..g.n_pixels).map(|j| o.total(j)).sum();
            assert!(total <= 2.0 + 1e-12 && total >= 2.0 - 2e-8);
        }
    }

    #[test]
    fn coverage_error_reports_mass() {
        let g = DetectorGeometry::with_extent(0.5, 3.0, 1.0, 0.0).unwrap();
        match pixel_overlaps(&g, &PsfGaussian::unit(), 0.1) {
            Err(Error::Coverage { achieved, .. }) => assert!(achieved < 0.999),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn poisson_moments_listed_values() {
        let nu = 2.7;
        assert_eq!(poisson_raw_moment(0, nu).unwrap(), 1.0);
        assert!((poisson_raw_moment(2, nu).unwrap() - (nu * nu + nu)).abs() < 1e-12);
        let m4 = nu.powi(4) + 6.0 * nu.powi(3) + 7.0 * nu * nu + nu;
        assert!((poisson_raw_moment(4, nu).unwrap() - m4).abs() < 1e-10);
        assert_eq!(poisson_raw_moment(9, nu), Err(Error::UnsupportedOrder(9)));
    }

    #[test]
    fn poisson_moments_match_direct_sums() {
        for nu in [0.1f64, 1.0, 10.0] {
            // Direct Σ nᵏ Pois(n; ν); terms beyond n = 200 are far below 1e-12.
            let mut pmf = (-nu).exp();
            let mut sums = [0.0f64; 9];
            for n in 0..200usize {
                for (k, s) in sums.iter_mut().enumerate() {
                    *s += (n as f64).powi(k as i32) * pmf;
                }
                pmf *= nu / (n + 1) as f64;
            }
            for (k, &direct) in sums.iter().enumerate() {
                let v = poisson_raw_moment(k, nu).unwrap();
                assert!((v - direct).abs() <= 1e-9 * direct.max(1.0), "k={k} nu={nu}: {v} vs {direct}");
            }
        }
    }

    #[test]
    fn moment_gap_is_exact_difference() {
        let gap = poisson_moment_gap(2, 2).unwrap();
        // M4 − M2² = 4ν³ + 6ν² + ν
        assert_eq!(gap, vec![0.0, 1.0, 6.0, 4.0]);
        let gap = poisson_moment_gap(1, 1).unwrap();
        assert_eq!(gap, vec![0.0, 1.0]);
    }
}
