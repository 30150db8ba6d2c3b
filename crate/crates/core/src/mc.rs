//! Monte Carlo ground truth: simulated camera frames of two blinking
//! emitters, empirical statistic summaries, cumulant images and a
//! score-based estimate of the full-data Fisher information.
//!
//! Randomness comes from ChaCha8 keyed by the user seed. Each replica owns
//! four streams (`4r + 0`/`4r + 1`: brightness of emitter 1/2, `4r + 2`:
//! photon counts, `4r + 3`: spare), so emitters and replicas never share a
//! stream and results are bit-identical for identical inputs.

use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blinking::{BlinkingKind, EmitterModel};
use crate::error::{invalid, Error, Result};
use crate::model::{pixel_overlaps, DetectorGeometry, PsfGaussian};
use crate::optimize::golden_section_max;
use crate::summary::{summary, Component, GaussianSummary, SchemeSpec};

const STREAMS_PER_REPLICA: u64 = 4;

fn stream_rng(seed: u64, replica: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica * STREAMS_PER_REPLICA + slot);
    rng
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite mean");
    d.sample(rng) as u32
}

/// Simulated photon counts, `n_frames × n_pixels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub counts: Vec<u32>,
    pub n_frames: usize,
    pub n_pixels: usize,
    pub seed: u64,
    pub replica: u64,
    pub theta: f64,
    pub model: EmitterModel,
    pub geometry: DetectorGeometry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BatchHeader {
    format: String,
    version: u32,
    encoding: String,
    n_frames: usize,
    n_pixels: usize,
    seed: u64,
    replica: u64,
    theta: f64,
    model: EmitterModel,
    geometry: DetectorGeometry,
}

const FORMAT_NAME: &str = "sofi-rgl-frames";

impl FrameBatch {
    pub fn frame(&self, m: usize) -> &[u32] {
        &self.counts[m * self.n_pixels..(m + 1) * self.n_pixels]
    }

    fn header(&self, encoding: &str) -> BatchHeader {
        BatchHeader {
            format: FORMAT_NAME.into(),
            version: 1,
            encoding: encoding.into(),
            n_frames: self.n_frames,
            n_pixels: self.n_pixels,
            seed: self.seed,
            replica: self.replica,
            theta: self.theta,
            model: self.model,
            geometry: self.geometry,
        }
    }

    /// Binary dump: one JSON header line, then little-endian `u32` counts
    /// in row-major (frame, pixel) order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, &self.header("u32le"))?;
        w.write_all(b"\n")?;
        for &c in &self.counts {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::InvalidArgument(format!("reading header: {e}")))?;
        let h: BatchHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::InvalidArgument(format!("bad header: {e}")))?;
        if h.format != FORMAT_NAME || h.encoding != "u32le" {
            return Err(Error::InvalidArgument(format!("unsupported batch format {}/{}", h.format, h.encoding)));
        }
        let n = h.n_frames * h.n_pixels;
        let mut bytes = vec![0u8; 4 * n];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::InvalidArgument(format!("reading counts: {e}")))?;
        let counts = bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self {
            counts,
            n_frames: h.n_frames,
            n_pixels: h.n_pixels,
            seed: h.seed,
            replica: h.replica,
            theta: h.theta,
            model: h.model,
            geometry: h.geometry,
        })
    }

    /// Delimited dump: `# ` + JSON header, then one comma-separated frame
    /// per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"# ")?;
        serde_json::to_writer(&mut w, &self.header("csv"))?;
        w.write_all(b"\n")?;
        for m in 0..self.n_frames {
            let row: Vec<String> = self.frame(m).iter().map(u32::to_string).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Per-pixel sample means.
    pub fn pixel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_pixels];
        for m in 0..self.n_frames {
            for (s, &c) in sums.iter_mut().zip(self.frame(m)) {
                *s += c as f64;
            }
        }
        sums.iter().map(|s| s / self.n_frames as f64).collect()
    }
}

/// Frame-integrated brightness of one Markov emitter, advanced frame by
/// frame from exact exponential holding times.
struct TelegraphEmitter {
    on: bool,
    /// Time left in the current state.
    remaining: f64,
    hold_on: Exp<f64>,
    hold_off: Exp<f64>,
}

impl TelegraphEmitter {
    fn new<R: Rng>(rng: &mut R, tau_on: f64, tau_off: f64) -> Self {
        let hold_on = Exp::new(1.0 / tau_on).expect("positive rate");
        let hold_off = Exp::new(1.0 / tau_off).expect("positive rate");
        // Stationary start; holding times are memoryless.
        let on = rng.random::<f64>() < tau_on / (tau_on + tau_off);
        let remaining = if on { hold_on.sample(rng) } else { hold_off.sample(rng) };
        Self {
            on,
            remaining,
            hold_on,
            hold_off,
        }
    }

    /// Time spent in the on state during the next `dt`.
    fn on_time<R: Rng>(&mut self, rng: &mut R, dt: f64) -> f64 {
        let mut left = dt;
        let mut on_time = 0.0;
        while self.remaining <= left {
            if self.on {
                on_time += self.remaining;
            }
            left -= self.remaining;
            self.on = !self.on;
            self.remaining = if self.on {
                self.hold_on.sample(rng)
            } else {
                self.hold_off.sample(rng)
            };
        }
        if self.on {
            on_time += left;
        }
        self.remaining -= left;
        on_time
    }
}

/// Simulates `n_frames` frames (replica 0 of `seed`).
pub fn simulate_frames(
    model: &EmitterModel,
    geometry: &DetectorGeometry,
    theta: f64,
    n_frames: usize,
    seed: u64,
) -> Result<FrameBatch> {
    simulate_replica(model, geometry, theta, n_frames, seed, 0)
}

/// Independent replicas on disjoint streams, simulated in parallel.
pub fn simulate_replicas(
    model: &EmitterModel,
    geometry: &DetectorGeometry,
    theta: f64,
    n_frames: usize,
    seed: u64,
    n_replicas: usize,
) -> Result<Vec<FrameBatch>> {
    (0..n_replicas as u64)
        .into_par_iter()
        .map(|r| simulate_replica(model, geometry, theta, n_frames, seed, r))
        .collect()
}

pub fn simulate_replica(
    model: &EmitterModel,
    geometry: &DetectorGeometry,
    theta: f64,
    n_frames: usize,
    seed: u64,
    replica: u64,
) -> Result<FrameBatch> {
    if n_frames == 0 {
        return Err(invalid("n_frames", "must be at least 1"));
    }
    let ov = pixel_overlaps(geometry, &PsfGaussian::unit(), theta)?;
    let n_pixels = geometry.n_pixels;
    let tau = geometry.frame_time;
    let bg = geometry.background_mean;
    let mut rng1 = stream_rng(seed, replica, 0);
    let mut rng2 = stream_rng(seed, replica, 1);
    let mut rng_counts = stream_rng(seed, replica, 2);
    let mut counts = Vec::with_capacity(n_frames * n_pixels);

    let emit = |i1: f64, i2: f64, rng: &mut ChaCha8Rng, counts: &mut Vec<u32>| {
        for j in 0..n_pixels {
            counts.push(poisson(rng, i1 * ov.u1[j] + i2 * ov.u2[j] + bg));
        }
    };

    match model.kind {
        BlinkingKind::Simplified { p_off } => {
            let nbar = model.mean_power * tau;
            let level = |rng: &mut ChaCha8Rng| {
                if rng.random::<f64>() < p_off {
                    model.q_off
                } else {
                    model.q_on
                }
            };
            for _ in 0..n_frames {
                let i1 = level(&mut rng1) * nbar;
                let i2 = level(&mut rng2) * nbar;
                emit(i1, i2, &mut rng_counts, &mut counts);
            }
        }
        BlinkingKind::Markov { tau_on, tau_off } => {
            let mut e1 = TelegraphEmitter::new(&mut rng1, tau_on, tau_off);
            let mut e2 = TelegraphEmitter::new(&mut rng2, tau_on, tau_off);
            let intensity = |on: f64| model.mean_power * (model.q_on * on + model.q_off * (tau - on));
            for _ in 0..n_frames {
                let i1 = intensity(e1.on_time(&mut rng1, tau));
                let i2 = intensity(e2.on_time(&mut rng2, tau));
                emit(i1, i2, &mut rng_counts, &mut counts);
            }
        }
    }
    Ok(FrameBatch {
        counts,
        n_frames,
        n_pixels,
        seed,
        replica,
        theta,
        model: *model,
        geometry: *geometry,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceMethod {
    /// Sample covariance of per-frame statistics (independent frames).
    Direct,
    /// Covariance of batch means scaled by the batch length.
    BatchMeans { batches: usize },
}

/// Sample counterpart of a [`GaussianSummary`], with standard errors.
#[derive(Debug, Clone)]
pub struct EmpiricalSummary {
    pub components: Vec<Component>,
    pub mean: DVector<f64>,
    pub mean_stderr: DVector<f64>,
    pub sigma1: DMatrix<f64>,
    pub sigma1_stderr: DMatrix<f64>,
    pub pixel_means: Vec<f64>,
    pub n_frames: usize,
    pub method: CovarianceMethod,
}

/// Per-frame statistic evaluator over the component layout of a summary.
struct Statistics<'a> {
    components: &'a [Component],
    weights: Vec<Option<&'a [(usize, usize, f64)]>>,
    centre: Vec<f64>,
}

impl<'a> Statistics<'a> {
    fn new(summary: &'a GaussianSummary, centre: Vec<f64>) -> Self {
        let mut next = summary.centroid_weights.iter();
        let weights = summary
            .components
            .iter()
            .map(|c| match c {
                Component::Centroid(_) => next.next().map(|v| v.as_slice()),
                _ => None,
            })
            .collect();
        Self {
            components: &summary.components,
            weights,
            centre,
        }
    }

    fn eval(&self, frame: &[u32], out: &mut [f64]) {
        let n = |i: usize| frame[i] as f64;
        for (k, comp) in self.components.iter().enumerate() {
            out[k] = match *comp {
                Component::Mean(i) => n(i),
                Component::Power(i, p) => n(i).powi(p as i32),
                Component::CentredSquare(i) => (n(i) - self.centre[i]).powi(2),
                Component::Product(i, j) => n(i) * n(j),
                Component::Centroid(_) => self.weights[k]
                    .expect("centroid weights present")
                    .iter()
                    .map(|&(i, j, w)| w * (n(i) - self.centre[i]) * (n(j) - self.centre[j]))
                    .sum(),
            };
        }
    }
}

/// Components over which a direct sample covariance is still affordable.
const DIRECT_LIMIT: usize = 128;
const TARGET_BATCHES: usize = 1000;

/// Empirical mean and long-run covariance of the statistic vector of
/// `scheme`, laid out like the analytic summary at the batch's parameters.
pub fn empirical_summary(batch: &FrameBatch, scheme: SchemeSpec) -> Result<EmpiricalSummary> {
    let analytic = summary(scheme, &batch.geometry, &batch.model, batch.theta)?;
    empirical_summary_like(batch, &analytic)
}

/// As [`empirical_summary`], reusing the layout (pixels, components and
/// centroid weights) of an existing analytic summary.
pub fn empirical_summary_like(batch: &FrameBatch, layout: &GaussianSummary) -> Result<EmpiricalSummary> {
    if batch.n_frames < 2 {
        return Err(invalid("n_frames", "need at least two frames"));
    }
    let pixel_means = batch.pixel_means();
    let stats = Statistics::new(layout, pixel_means.clone());
    let k = layout.components.len();
    let method = if !batch.model.is_markov() && k <= DIRECT_LIMIT {
        CovarianceMethod::Direct
    } else {
        CovarianceMethod::BatchMeans {
            batches: TARGET_BATCHES.min(batch.n_frames / 2).max(2),
        }
    };
    let frames = batch.n_frames as f64;
    let mut v = vec![0.0; k];

    let mut mean = DVector::zeros(k);
    for m in 0..batch.n_frames {
        stats.eval(batch.frame(m), &mut v);
        for (acc, x) in mean.iter_mut().zip(&v) {
            *acc += x;
        }
    }
    mean /= frames;

    let (sigma1, sigma1_stderr) = match method {
        CovarianceMethod::Direct => {
            let mut s = DMatrix::<f64>::zeros(k, k);
            let mut s4 = DMatrix::<f64>::zeros(k, k);
            let mut d = vec![0.0; k];
            for m in 0..batch.n_frames {
                stats.eval(batch.frame(m), &mut v);
                for i in 0..k {
                    d[i] = v[i] - mean[i];
                }
                for j in 0..k {
                    let dj = d[j];
                    for i in 0..=j {
                        let p = d[i] * dj;
                        s[(i, j)] += p;
                        s4[(i, j)] += p * p;
                    }
                }
            }
            let mut cov = DMatrix::zeros(k, k);
            let mut err = DMatrix::zeros(k, k);
            for j in 0..k {
                for i in 0..=j {
                    let c = s[(i, j)] / (frames - 1.0);
                    let m4 = s4[(i, j)] / frames;
                    let e = ((m4 - c * c).max(0.0) / frames).sqrt();
                    cov[(i, j)] = c;
                    cov[(j, i)] = c;
                    err[(i, j)] = e;
                    err[(j, i)] = e;
                }
            }
            (cov, err)
        }
        CovarianceMethod::BatchMeans { batches } => {
            let len = batch.n_frames / batches;
            let mut means = DMatrix::<f64>::zeros(batches, k);
            for b in 0..batches {
                for m in b * len..(b + 1) * len {
                    stats.eval(batch.frame(m), &mut v);
                    for (i, x) in v.iter().enumerate() {
                        means[(b, i)] += x;
                    }
                }
            }
            means /= len as f64;
            let centre = means.row_mean();
            for mut row in means.row_iter_mut() {
                row -= &centre;
            }
            let cov = (means.transpose() * &means) * (len as f64 / (batches as f64 - 1.0));
            let err = DMatrix::from_fn(k, k, |i, j| {
                ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / (batches as f64 - 1.0)).sqrt()
            });
            (cov, err)
        }
    };
    let mean_stderr = DVector::from_fn(k, |i, _| (sigma1[(i, i)].max(0.0) / frames).sqrt());
    Ok(EmpiricalSummary {
        components: layout.components.clone(),
        mean,
        mean_stderr,
        sigma1,
        sigma1_stderr,
        pixel_means,
        n_frames: batch.n_frames,
        method,
    })
}

/// Largest z-scores between an analytic summary and its empirical
/// counterpart.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub max_z_mean: f64,
    pub max_z_cov: f64,
    pub entries: usize,
    /// Entries with `3 < |z|`.
    pub above_3: usize,
    pub worst: String,
}

impl ConsistencyReport {
    pub fn max_z(&self) -> f64 {
        self.max_z_mean.max(self.max_z_cov)
    }
}

/// Pixels a component depends on; a centroid is represented by its centre.
fn anchor_pixels(c: Component) -> Vec<usize> {
    match c {
        Component::Mean(i) | Component::Power(i, _) | Component::CentredSquare(i) => vec![i],
        Component::Product(i, j) => vec![i, j],
        Component::Centroid(s) => vec![s / 2, s.div_ceil(2)],
    }
}

/// Compares entries whose pixels all have sample mean count at least
/// `min_pixel_mean` (rare-count pixels have far-from-Gaussian estimators).
pub fn compare_summaries(
    analytic: &GaussianSummary,
    empirical: &EmpiricalSummary,
    min_pixel_mean: f64,
) -> ConsistencyReport {
    let keep: Vec<usize> = (0..analytic.components.len())
        .filter(|&i| {
            anchor_pixels(analytic.components[i])
                .iter()
                .all(|&p| empirical.pixel_means[p] >= min_pixel_mean)
        })
        .collect();
    let mut report = ConsistencyReport {
        max_z_mean: 0.0,
        max_z_cov: 0.0,
        entries: 0,
        above_3: 0,
        worst: String::new(),
    };
    let mut worst = 0.0;
    let mut note = |z: f64, what: String, report: &mut ConsistencyReport| {
        report.entries += 1;
        if z > 3.0 {
            report.above_3 += 1;
        }
        if z > worst {
            worst = z;
            report.worst = what;
        }
    };
    for &i in &keep {
        let z = ((empirical.mean[i] - analytic.mu[i]) / empirical.mean_stderr[i]).abs();
        report.max_z_mean = report.max_z_mean.max(z);
        note(z, format!("mean {:?}", analytic.components[i]), &mut report);
    }
    for (a, &i) in keep.iter().enumerate() {
        for &j in &keep[a..] {
            let z = ((empirical.sigma1[(i, j)] - analytic.sigma1[(i, j)]) / empirical.sigma1_stderr[(i, j)]).abs();
            report.max_z_cov = report.max_z_cov.max(z);
            note(
                z,
                format!("cov {:?} × {:?}", analytic.components[i], analytic.components[j]),
                &mut report,
            );
        }
    }
    report
}

/// Per-pixel temporal k-statistics (unbiased cumulant estimates) of order
/// `order ≤ 4`.
pub fn cumulant_image_check(batch: &FrameBatch, order: usize) -> Result<Vec<f64>> {
    if !(1..=4).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    if batch.model.is_markov() {
        return Err(Error::InvalidArgument(
            "cumulant images need independent frames (simplified model)".into(),
        ));
    }
    if batch.n_frames <= order {
        return Err(invalid("n_frames", format!("need more than {order} frames")));
    }
    let n = batch.n_frames as f64;
    let means = batch.pixel_means();
    let mut m = vec![[0.0f64; 5]; batch.n_pixels];
    for f in 0..batch.n_frames {
        for (j, &c) in batch.frame(f).iter().enumerate() {
            let d = c as f64 - means[j];
            let d2 = d * d;
            m[j][2] += d2;
            m[j][3] += d2 * d;
            m[j][4] += d2 * d2;
        }
    }
    Ok((0..batch.n_pixels)
        .map(|j| {
            let (m2, m3, m4) = (m[j][2] / n, m[j][3] / n, m[j][4] / n);
            match order {
                1 => means[j],
                2 => n / (n - 1.0) * m2,
                3 => n * n / ((n - 1.0) * (n - 2.0)) * m3,
                _ => n * n * ((n + 1.0) * m4 - 3.0 * (n - 1.0) * m2 * m2) / ((n - 1.0) * (n - 2.0) * (n - 3.0)),
            }
        })
        .collect())
}

/// Cumulants `κ₁..κ₄` of a Bernoulli variable with success probability `p`.
fn bernoulli_cumulant(p: f64, order: usize) -> f64 {
    let v = p * (1.0 - p);
    match order {
        1 => p,
        2 => v,
        3 => v * (1.0 - 2.0 * p),
        _ => v * (1.0 - 6.0 * v),
    }
}

/// Expected per-pixel count cumulant of order `order` under the simplified
/// model: Poisson mixing maps intensity cumulants `κ_r(Λ)` to count
/// cumulants through Stirling numbers of the second kind.
pub fn cumulant_image_expected(
    model: &EmitterModel,
    geometry: &DetectorGeometry,
    theta: f64,
    order: usize,
) -> Result<Vec<f64>> {
    if !(1..=4).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    let BlinkingKind::Simplified { p_off } = model.kind else {
        return Err(Error::InvalidArgument("expected cumulant image needs the simplified model".into()));
    };
    let ov = pixel_overlaps(geometry, &PsfGaussian::unit(), theta)?;
    let nbar = model.mean_power * geometry.frame_time;
    let span = (model.q_on - model.q_off) * nbar;
    let stirling: [[f64; 5]; 5] = [
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 3.0, 1.0, 0.0],
        [0.0, 1.0, 7.0, 6.0, 1.0],
    ];
    Ok((0..ov.len())
        .map(|j| {
            let rate_cumulant = |r: usize| {
                let (u1, u2) = (ov.u1[j], ov.u2[j]);
                let mut k = bernoulli_cumulant(1.0 - p_off, r) * span.powi(r as i32) * (u1.powi(r as i32) + u2.powi(r as i32));
                if r == 1 {
                    k += model.q_off * nbar * (u1 + u2) + geometry.background_mean;
                }
                k
            };
            (1..=order).map(|r| stirling[order][r] * rate_cumulant(r)).sum()
        })
        .collect())
}

/// Least-squares fit of `A·exp(−x²/2w²)`; returns `(A, w)`.
pub fn fit_gaussian_width(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let amp_and_sse = |w: f64| {
        let g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * w * w)).exp()).collect();
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let gy: f64 = g.iter().zip(ys).map(|(a, b)| a * b).sum();
        let amp = gy / gg;
        let sse: f64 = g.iter().zip(ys).map(|(a, y)| (y - amp * a).powi(2)).sum();
        (amp, sse)
    };
    let (w, _) = golden_section_max(|w| -amp_and_sse(w).1, 0.05, 5.0, 1e-9);
    (amp_and_sse(w).0, w)
}

/// Monte Carlo estimate of the full-data FI per photon with its standard
/// error.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreEstimate {
    pub fi_per_photon: f64,
    pub stderr: f64,
    pub n_samples: usize,
    /// Standard error above 20% of the estimate.
    pub insufficient: bool,
}

impl ScoreEstimate {
    /// Implied gain over the ideal-detector baseline `θ²/8`, with its
    /// standard error.
    pub fn implied_zeta(&self, theta: f64) -> (f64, f64) {
        let base = theta * theta / 8.0;
        let z = (self.fi_per_photon / base).powf(0.25);
        (z, 0.25 * z * self.stderr / self.fi_per_photon)
    }
}

const SCORE_CHUNK: usize = 10_000;

/// Log of the frame likelihood of photon positions `xs` (up to
/// θ-independent factors) mixed over the four brightness configurations.
fn mixture_log_likelihood(xs: &[f64], theta: f64, configs: &[(f64, f64, f64)]) -> f64 {
    let h = theta / 2.0;
    let mut terms = [f64::NEG_INFINITY; 4];
    for (t, &(log_w, q1, q2)) in terms.iter_mut().zip(configs) {
        if log_w == f64::NEG_INFINITY {
            continue;
        }
        let s = q1 + q2;
        let mut acc = log_w;
        for &x in xs {
            // Unnormalised Gaussians: the shared factor cancels in the score.
            let a = (-(x + h) * (x + h) / 2.0).exp();
            let b = (-(x - h) * (x - h) / 2.0).exp();
            acc += ((q1 * a + q2 * b) / s).ln();
        }
        *t = acc;
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Score-based estimate of the full-data Fisher information per photon of
/// the simplified model: frames of continuous photon positions are drawn
/// from the brightness mixture and the score is the central difference
/// (step θ/20) of the exact mixture log-likelihood given the photon number.
pub fn score_fi_oracle(model: &EmitterModel, theta: f64, n_samples: usize, seed: u64) -> Result<ScoreEstimate> {
    let BlinkingKind::Simplified { p_off } = model.kind else {
        return Err(Error::InvalidArgument("score oracle needs the simplified model".into()));
    };
    let nbar = model.mean_power;
    if nbar > 200.0 {
        return Err(invalid("nbar", format!("score oracle limited to n̄ ≤ 200, got {nbar}")));
    }
    if !(theta > 0.0 && theta <= 0.1 / nbar.sqrt() + 1e-15) {
        return Err(invalid("theta", format!("need 0 < θ ≤ 0.1/√n̄ = {:.4}, got {theta}", 0.1 / nbar.sqrt())));
    }
    if n_samples < 2 {
        return Err(invalid("n_samples", "need at least two samples"));
    }
    let (q_off, q_on) = (model.q_off, model.q_on);
    let p_on = 1.0 - p_off;
    let pairs = [
        (p_off * p_off, q_off, q_off),
        (p_off * p_on, q_off, q_on),
        (p_on * p_off, q_on, q_off),
        (p_on * p_on, q_on, q_on),
    ];
    let step = theta / 20.0;
    let n_chunks = n_samples.div_ceil(SCORE_CHUNK);
    let partial: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64, 3);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let size = SCORE_CHUNK.min(n_samples - c * SCORE_CHUNK);
            let mut xs = Vec::new();
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..size {
                let draw = |rng: &mut ChaCha8Rng| if rng.random::<f64>() < p_off { q_off } else { q_on };
                let q1 = draw(&mut rng);
                let q2 = draw(&mut rng);
                let n1 = poisson(&mut rng, q1 * nbar);
                let n2 = poisson(&mut rng, q2 * nbar);
                xs.clear();
                for _ in 0..n1 {
                    xs.push(normal.sample(&mut rng) - theta / 2.0);
                }
                for _ in 0..n2 {
                    xs.push(normal.sample(&mut rng) + theta / 2.0);
                }
                let n = xs.len();
                if n == 0 {
                    continue;
                }
                // Configuration posterior given n, up to a common factor.
                let configs: Vec<(f64, f64, f64)> = pairs
                    .iter()
                    .map(|&(w, a, b)| {
                        let rate = (a + b) * nbar;
                        let log_w = if w == 0.0 || rate == 0.0 {
                            f64::NEG_INFINITY
                        } else {
                            w.ln() + n as f64 * rate.ln() - rate
                        };
                        (log_w, a, b)
                    })
                    .collect();
                let score = (mixture_log_likelihood(&xs, theta + step, &configs)
                    - mixture_log_likelihood(&xs, theta - step, &configs))
                    / (2.0 * step);
                let sq = score * score;
                s1 += sq;
                s2 += sq * sq;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = partial.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = n_samples as f64;
    let mean_sq = s1 / n;
    let var_sq = (s2 / n - mean_sq * mean_sq).max(0.0) * n / (n - 1.0);
    let mean_photons = 2.0 * nbar * model.mean_level();
    let fi = mean_sq / mean_photons;
    let stderr = (var_sq / n).sqrt() / mean_photons;
    let insufficient = stderr > 0.2 * fi;
    if insufficient {
        log::warn!("score oracle: stderr {stderr:.3e} exceeds 20% of the estimate {fi:.3e}; increase n_samples");
    }
    Ok(ScoreEstimate {
        fi_per_photon: fi,
        stderr,
        n_samples,
        insufficient,
    })
}
