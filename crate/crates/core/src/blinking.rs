//! Brightness fluctuation models.
//!
//! The simplified model draws each emitter's brightness level independently
//! per frame. The Markov model is a stationary two-state jump process; its
//! frame-integrated intensity moments come from the Feynman–Kac generator
//! `G + s·D`, whose Taylor coefficients in `s` are read off a block
//! bidiagonal matrix exponential. Inter-frame dependence only enters through
//! `T(gap) − Π = e^{−λ·gap}(I − Π)`, so all lag sums are geometric.
//!
//! State order is (off, on) throughout.

use nalgebra::{DMatrix, Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlinkingKind {
    /// Brightness redrawn every frame; `p_off` is the probability of the
    /// dim level.
    Simplified { p_off: f64 },
    /// Two-state Markov process with mean state lifetimes in units of τ₀.
    Markov { tau_on: f64, tau_off: f64 },
}

/// Two-level emitter: relative levels `q_on + q_off = 1`, mean power `P̄`
/// (photons per τ₀ at relative brightness 1), and the switching statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterModel {
    pub q_on: f64,
    pub q_off: f64,
    pub mean_power: f64,
    pub kind: BlinkingKind,
}

/// Relative levels `(q_on, q_off)` for fluctuation strength `α = 1 − q_off/q_on`.
pub fn levels_from_alpha(alpha: f64) -> (f64, f64) {
    let q_on = 1.0 / (2.0 - alpha);
    (q_on, 1.0 - q_on)
}

impl EmitterModel {
    pub fn new(q_on: f64, q_off: f64, mean_power: f64, kind: BlinkingKind) -> Result<Self> {
        if ((q_on + q_off) - 1.0).abs() > 1e-12 {
            return Err(invalid("q_on+q_off", format!("must equal 1, got {}", q_on + q_off)));
        }
        if !(q_off >= 0.0 && q_off <= q_on) {
            return Err(invalid("q_off", format!("need 0 ≤ q_off ≤ q_on, got q_off={q_off}, q_on={q_on}")));
        }
        if !(mean_power > 0.0 && mean_power.is_finite()) {
            return Err(invalid("mean_power", format!("must be positive, got {mean_power}")));
        }
        match kind {
            BlinkingKind::Simplified { p_off } => {
                if !(0.0..=1.0).contains(&p_off) {
                    return Err(invalid("p", format!("must lie in [0, 1], got {p_off}")));
                }
            }
            BlinkingKind::Markov { tau_on, tau_off } => {
                if !(tau_on > 0.0 && tau_on.is_finite()) {
                    return Err(invalid("tau_on", format!("must be positive, got {tau_on}")));
                }
                if !(tau_off > 0.0 && tau_off.is_finite()) {
                    return Err(invalid("tau_off", format!("must be positive, got {tau_off}")));
                }
            }
        }
        Ok(Self {
            q_on,
            q_off,
            mean_power,
            kind,
        })
    }

    pub fn simplified(alpha: f64, p_off: f64, mean_power: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let (q_on, q_off) = levels_from_alpha(alpha);
        Self::new(q_on, q_off, mean_power, BlinkingKind::Simplified { p_off })
    }

    pub fn markov(alpha: f64, tau_on: f64, tau_off: f64, mean_power: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let (q_on, q_off) = levels_from_alpha(alpha);
        Self::new(q_on, q_off, mean_power, BlinkingKind::Markov { tau_on, tau_off })
    }

    pub fn alpha(&self) -> f64 {
        1.0 - self.q_off / self.q_on
    }

    pub fn is_markov(&self) -> bool {
        matches!(self.kind, BlinkingKind::Markov { .. })
    }

    /// Probabilities of the (off, on) levels: per-frame for the simplified
    /// kind, stationary for the Markov kind.
    pub fn level_probabilities(&self) -> (f64, f64) {
        match self.kind {
            BlinkingKind::Simplified { p_off } => (p_off, 1.0 - p_off),
            BlinkingKind::Markov { tau_on, tau_off } => {
                let s = tau_on + tau_off;
                (tau_off / s, tau_on / s)
            }
        }
    }

    /// Mean relative brightness `p_off·q_off + p_on·q_on`.
    pub fn mean_level(&self) -> f64 {
        let (p_off, p_on) = self.level_probabilities();
        p_off * self.q_off + p_on * self.q_on
    }

    fn levels(&self) -> Vector2<f64> {
        Vector2::new(self.q_off, self.q_on)
    }

    fn markov_times(&self) -> Result<(f64, f64)> {
        match self.kind {
            BlinkingKind::Markov { tau_on, tau_off } => Ok((tau_on, tau_off)),
            BlinkingKind::Simplified { .. } => Err(Error::InvalidArgument(
                "operation requires the markov blinking model".into(),
            )),
        }
    }

    /// Relaxation rate `λ = 1/τ_on + 1/τ_off`.
    pub fn relaxation_rate(&self) -> Result<f64> {
        let (on, off) = self.markov_times()?;
        Ok(1.0 / on + 1.0 / off)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// Stationary `(p̃_off, p̃_on) = (τ_off, τ_on)/(τ_off + τ_on)`.
pub fn stationary_state(model: &EmitterModel) -> Result<(f64, f64)> {
    model.markov_times()?;
    Ok(model.level_probabilities())
}

/// Column-stochastic `T(dt) = exp(dt·Q)` acting on `(p_off, p_on)ᵀ`.
pub fn transition_matrix(dt: f64, model: &EmitterModel) -> Result<Matrix2<f64>> {
    if !(dt >= 0.0) {
        return Err(invalid("dt", format!("must be non-negative, got {dt}")));
    }
    let lambda = model.relaxation_rate()?;
    let (p_off, p_on) = stationary_state(model)?;
    let pi = Matrix2::new(p_off, p_off, p_on, p_on);
    let decay = (-lambda * dt).exp();
    Ok(pi + (Matrix2::identity() - pi) * decay)
}

/// `⟨P(t₁)…P(t_r)⟩` for sorted times, `r ≤ 4`.
pub fn brightness_correlation(times: &[f64], model: &EmitterModel) -> Result<f64> {
    if times.is_empty() || times.len() > 4 {
        return Err(Error::InvalidArgument(format!(
            "need between 1 and 4 times, got {}",
            times.len()
        )));
    }
    if times.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidArgument(format!("times must be sorted: {times:?}")));
    }
    let (p_off, p_on) = stationary_state(model)?;
    let b = model.levels() * model.mean_power;
    let mut row = RowVector2::new(p_off, p_on);
    for w in times.windows(2) {
        // S[i][j] = t_{ij}·b_i with t_{ij} = P(i → j) = T[j][i].
        let t = transition_matrix(w[1] - w[0], model)?;
        let s = Matrix2::new(t[(0, 0)] * b[0], t[(1, 0)] * b[0], t[(0, 1)] * b[1], t[(1, 1)] * b[1]);
        row *= s;
    }
    Ok(row.dot(&b.transpose()))
}

/// Frame-integrated correlations `χ` and their geometric tail sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSet {
    pub chi1: f64,
    /// `chi2[m-1] = χ_{2,m}` for `m = 1..=max_lag`; likewise for `chi3`, `chi4`.
    pub chi2: Vec<f64>,
    pub chi3: Vec<f64>,
    pub chi4: Vec<f64>,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
}

/// Moments of the frame-integrated intensity `I = ∫_frame P dt` of one
/// emitter in centred form (`δ = I − E[I]`), as needed by the summary
/// builders.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityStats {
    pub mean: f64,
    /// `central[k] = E[δᵏ]`, `k ≤ 4`.
    pub central: [f64; 5],
    /// `lag_sum[a][c] = Σ_{m≥2} (E[δ₁ᵃ δ_mᶜ] − E[δᵃ]E[δᶜ])`, `a, c ≤ 2`.
    pub lag_sum: [[f64; 3]; 3],
    /// `Σ_{m≥2} (E[δ₁δ_m])²`.
    pub lag_sum_sq11: f64,
}

impl IntensityStats {
    /// Per-frame statistics of the simplified model (`I = q·P̄τ`, frames
    /// independent).
    pub fn simplified(model: &EmitterModel, frame_time: f64) -> Self {
        let nbar = model.mean_power * frame_time;
        let (p_off, p_on) = model.level_probabilities();
        let mean_q = model.mean_level();
        let d_off = (model.q_off - mean_q) * nbar;
        let d_on = (model.q_on - mean_q) * nbar;
        let mut central = [0.0; 5];
        for (k, c) in central.iter_mut().enumerate() {
            *c = p_off * d_off.powi(k as i32) + p_on * d_on.powi(k as i32);
        }
        central[0] = 1.0;
        central[1] = 0.0;
        Self {
            mean: mean_q * nbar,
            central,
            lag_sum: [[0.0; 3]; 3],
            lag_sum_sq11: 0.0,
        }
    }

    pub fn markov(model: &EmitterModel, frame_time: f64) -> Result<Self> {
        let mean = model.mean_level() * model.mean_power * frame_time;
        if model.alpha() == 0.0 {
            let mut central = [0.0; 5];
            central[0] = 1.0;
            return Ok(Self {
                mean,
                central,
                lag_sum: [[0.0; 3]; 3],
                lag_sum_sq11: 0.0,
            });
        }
        let fm = FrameMoments::new(model, frame_time, true)?;
        let pi = fm.pi;
        let one = Vector2::new(1.0, 1.0);
        let mut central = [0.0; 5];
        for (k, c) in central.iter_mut().enumerate() {
            *c = (pi.transpose() * fm.moments[k] * one)[0];
        }
        central[0] = 1.0;
        central[1] = 0.0;
        let rho = fm.rho;
        let one_minus_rho = -(-fm.lambda * frame_time).exp_m1();
        let mut lag_sum = [[0.0; 3]; 3];
        for a in 1..=2 {
            for c in 1..=2 {
                lag_sum[a][c] = fm.connected(a, c) / one_minus_rho;
            }
        }
        let k11 = fm.connected(1, 1);
        let lag_sum_sq11 = k11 * k11 / (one_minus_rho * (1.0 + rho));
        Ok(Self {
            mean,
            central,
            lag_sum,
            lag_sum_sq11,
        })
    }
}

/// `moments[k][i][j] = E[Iᵏ ; end in j | start in i]` over one frame.
struct FrameMoments {
    moments: [Matrix2<f64>; 5],
    pi: Vector2<f64>,
    /// `I − 1πᵀ`, the decaying part of the row-convention transition matrix.
    deflate: Matrix2<f64>,
    lambda: f64,
    rho: f64,
}

impl FrameMoments {
    fn new(model: &EmitterModel, tau: f64, centred: bool) -> Result<Self> {
        let (tau_on, tau_off) = model.markov_times()?;
        let (p_off, p_on) = model.level_probabilities();
        // Row-convention generator: G[i][j] = rate(i → j).
        let g = Matrix2::new(-1.0 / tau_off, 1.0 / tau_off, 1.0 / tau_on, -1.0 / tau_on);
        let shift = if centred { model.mean_level() } else { 0.0 };
        let d = Matrix2::new(model.q_off - shift, 0.0, 0.0, model.q_on - shift);
        let order = 4;
        let n = 2 * (order + 1);
        let mut big = DMatrix::<f64>::zeros(n, n);
        for blk in 0..=order {
            big.view_mut((2 * blk, 2 * blk), (2, 2)).copy_from(&(g * tau));
            if blk < order {
                big.view_mut((2 * blk, 2 * blk + 2), (2, 2)).copy_from(&(d * tau));
            }
        }
        let e = big.exp();
        let mut moments = [Matrix2::zeros(); 5];
        let mut factorial = 1.0;
        let mut power = 1.0;
        for (k, m) in moments.iter_mut().enumerate() {
            if k > 0 {
                factorial *= k as f64;
                power *= model.mean_power;
            }
            let blk: Matrix2<f64> = e.fixed_view::<2, 2>(0, 2 * k).into();
            *m = blk * (factorial * power);
        }
        let pi = Vector2::new(p_off, p_on);
        let deflate = Matrix2::identity() - Vector2::new(1.0, 1.0) * pi.transpose();
        let lambda = model.relaxation_rate()?;
        if !moments.iter().all(|m| m.iter().all(|x| x.is_finite())) {
            return Err(Error::Numeric(format!("non-finite frame moments at tau={tau}")));
        }
        Ok(Self {
            moments,
            pi,
            deflate,
            lambda,
            rho: (-lambda * tau).exp(),
        })
    }

    /// `πᵀ M_a (I − 1πᵀ) M_c 1`: the lag-2 connected moment; lag `m`
    /// multiplies it by `ρ^{m−2}`.
    fn connected(&self, a: usize, c: usize) -> f64 {
        let one = Vector2::new(1.0, 1.0);
        (self.pi.transpose() * self.moments[a] * self.deflate * self.moments[c] * one)[0]
    }

    fn lagged(&self, a: usize, c: usize, lag: usize) -> f64 {
        let one = Vector2::new(1.0, 1.0);
        let ea = (self.pi.transpose() * self.moments[a] * one)[0];
        let ec = (self.pi.transpose() * self.moments[c] * one)[0];
        ea * ec + self.connected(a, c) * self.rho.powi(lag as i32 - 2)
    }

    fn single(&self, k: usize) -> f64 {
        (self.pi.transpose() * self.moments[k] * Vector2::new(1.0, 1.0))[0]
    }
}

/// Closed-form `χ₁`, `χ_{2,m}`, `χ_{3,m}`, `χ_{4,m}` for `m ≤ max_lag` and
/// the tail sums `S₁…S₄`.
pub fn chi_set(model: &EmitterModel, tau: f64, max_lag: usize) -> Result<ChiSet> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("tau", format!("must be positive, got {tau}")));
    }
    let max_lag = max_lag.max(1);
    let fm = FrameMoments::new(model, tau, false)?;
    let chi1 = model.mean_level() * model.mean_power * tau;
    let (mut chi2, mut chi3, mut chi4) = (vec![fm.single(2)], vec![fm.single(3)], vec![fm.single(4)]);
    for m in 2..=max_lag {
        chi2.push(fm.lagged(1, 1, m));
        chi3.push(fm.lagged(2, 1, m));
        chi4.push(fm.lagged(2, 2, m));
    }
    let (s1, s2, s3, s4) = if model.alpha() == 0.0 {
        for (k, v) in [(2, &mut chi2), (3, &mut chi3), (4, &mut chi4)] {
            v.iter_mut().for_each(|x| *x = chi1.powi(k));
        }
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let one_minus_rho = -(-fm.lambda * tau).exp_m1();
        let k11 = fm.connected(1, 1);
        let s1 = k11 / one_minus_rho;
        let s2 = fm.connected(2, 1) / one_minus_rho;
        let s3 = fm.connected(2, 2) / one_minus_rho;
        let s4 = 2.0 * chi1 * chi1 * s1 + k11 * k11 / (one_minus_rho * (1.0 + fm.rho));
        (s1, s2, s3, s4)
    };
    Ok(ChiSet {
        chi1,
        chi2,
        chi3,
        chi4,
        s1,
        s2,
        s3,
        s4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(alpha: f64) -> EmitterModel {
        EmitterModel::markov(alpha, 1.0, 1.0, 10.0).unwrap()
    }

    #[test]
    fn model_validation() {
        assert!(EmitterModel::new(0.6, 0.5, 1.0, BlinkingKind::Simplified { p_off: 0.5 }).is_err());
        assert!(EmitterModel::new(0.4, 0.6, 1.0, BlinkingKind::Simplified { p_off: 0.5 }).is_err());
        assert!(EmitterModel::simplified(0.5, 1.5, 1.0).is_err());
        assert!(EmitterModel::markov(0.5, 0.0, 1.0, 1.0).is_err());
        assert!(EmitterModel::markov(1.2, 1.0, 1.0, 1.0).is_err());
        let m = EmitterModel::simplified(0.9, 0.5, 3.0).unwrap();
        assert!((m.alpha() - 0.9).abs() < 1e-14);
        assert!((m.q_on + m.q_off - 1.0).abs() < 1e-15);
    }

    #[test]
    fn transition_identity_and_limit() {
        let m = EmitterModel::markov(1.0, 1.6, 0.4, 1.0).unwrap();
        assert_eq!(transition_matrix(0.0, &m).unwrap(), Matrix2::identity());
        let t = transition_matrix(1e3, &m).unwrap();
        let (p_off, p_on) = stationary_state(&m).unwrap();
        for col in 0..2 {
            assert!((t[(0, col)] - p_off).abs() < 1e-12);
            assert!((t[(1, col)] - p_on).abs() < 1e-12);
        }
        assert!(transition_matrix(-1.0, &m).is_err());
    }

    #[test]
    fn transition_matches_matrix_exponential() {
        let m = EmitterModel::markov(1.0, 0.7, 2.3, 1.0).unwrap();
        let q = nalgebra::DMatrix::from_row_slice(2, 2, &[-1.0 / 2.3, 1.0 / 0.7, 1.0 / 2.3, -1.0 / 0.7]);
        let dt = 0.9;
        let e = (q * dt).exp();
        let t = transition_matrix(dt, &m).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((e[(i, j)] - t[(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn stationary_values() {
        assert_eq!(stationary_state(&sym(1.0)).unwrap(), (0.5, 0.5));
        let m = EmitterModel::markov(1.0, 0.4, 1.6, 1.0).unwrap();
        let (off, on) = stationary_state(&m).unwrap();
        assert!((off - 0.8).abs() < 1e-15 && (on - 0.2).abs() < 1e-15);
        let t = transition_matrix(0.37, &m).unwrap();
        let p = t * Vector2::new(off, on);
        assert!((p[0] - off).abs() < 1e-12 && (p[1] - on).abs() < 1e-12);
        assert!(stationary_state(&EmitterModel::simplified(1.0, 0.5, 1.0).unwrap()).is_err());
    }

    #[test]
    fn correlation_cases() {
        let m = sym(1.0);
        let mean = brightness_correlation(&[0.3], &m).unwrap();
        assert!((mean - 5.0).abs() < 1e-12);
        let far = brightness_correlation(&[0.0, 40.0], &m).unwrap();
        assert!((far / (mean * mean) - 1.0).abs() < 1e-6);
        let flat = sym(0.0);
        for r in 1..=4 {
            let times: Vec<f64> = (0..r).map(|i| 0.2 * i as f64).collect();
            let v = brightness_correlation(&times, &flat).unwrap();
            assert!((v - 5f64.powi(r as i32)).abs() < 1e-9 * 5f64.powi(r as i32));
        }
        assert!(brightness_correlation(&[1.0, 0.5], &m).is_err());
        assert!(brightness_correlation(&[0.0; 5], &m).is_err());
    }

    #[test]
    fn chi1_is_mean_times_tau() {
        let m = EmitterModel::markov(0.9, 1.3, 0.6, 7.0).unwrap();
        let c = chi_set(&m, 2.0, 1).unwrap();
        let mean = brightness_correlation(&[0.0], &m).unwrap();
        assert!((c.chi1 - 2.0 * mean).abs() < 1e-12);
    }

    #[test]
    fn no_fluctuations_no_connected_parts() {
        let c = chi_set(&sym(0.0), 1.0, 6).unwrap();
        assert_eq!((c.s1, c.s2, c.s3, c.s4), (0.0, 0.0, 0.0, 0.0));
        for m in 1..6 {
            assert!((c.chi2[m] - c.chi1 * c.chi1).abs() <= 1e-10 * c.chi1 * c.chi1);
        }
    }

    #[test]
    fn lag_covariance_is_geometric_and_decays() {
        let m = sym(0.9);
        let tau = 0.7;
        let c = chi_set(&m, tau, 7).unwrap();
        let rho = (-m.relaxation_rate().unwrap() * tau).exp();
        let conn: Vec<f64> = c.chi2.iter().map(|x| x - c.chi1 * c.chi1).collect();
        for w in conn.windows(2).skip(1) {
            assert!(w[1] >= 0.0 && w[1] <= w[0]);
            assert!((w[1] / w[0] - rho).abs() < 1e-10);
        }
        assert!(conn[0] >= conn[1]);
    }

    #[test]
    fn tail_sums_match_truncated_sums() {
        let m = EmitterModel::markov(0.8, 1.7, 0.9, 3.0).unwrap();
        let tau = 0.5;
        let rho = (-m.relaxation_rate().unwrap() * tau).exp();
        let lags = ((1e-12f64).ln() / rho.ln()).ceil() as usize + 2;
        let c = chi_set(&m, tau, lags).unwrap();
        let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
        for k in 1..lags {
            s1 += c.chi2[k] - c.chi1 * c.chi1;
            s2 += c.chi3[k] - c.chi2[0] * c.chi1;
            s3 += c.chi4[k] - c.chi2[0] * c.chi2[0];
            s4 += c.chi2[k] * c.chi2[k] - c.chi1.powi(4);
        }
        for (num, exact) in [(s1, c.s1), (s2, c.s2), (s3, c.s3), (s4, c.s4)] {
            assert!((num - exact).abs() <= 1e-8 * exact.abs(), "{num} vs {exact}");
        }
    }

    #[test]
    fn simplified_intensity_moments() {
        let m = EmitterModel::simplified(1.0, 0.5, 100.0).unwrap();
        let s = IntensityStats::simplified(&m, 1.0);
        assert!((s.mean - 50.0).abs() < 1e-12);
        assert!((s.central[2] - 2500.0).abs() < 1e-9);
        assert!(s.central[3].abs() < 1e-9);
    }

    #[test]
    fn markov_central_moments_agree_with_raw() {
        let m = EmitterModel::markov(0.7, 1.2, 0.8, 4.0).unwrap();
        let tau = 0.9;
        let st = IntensityStats::markov(&m, tau).unwrap();
        let c = chi_set(&m, tau, 3).unwrap();
        let var = c.chi2[0] - c.chi1 * c.chi1;
        assert!((st.central[2] - var).abs() < 1e-10 * var);
        let third = c.chi3[0] - 3.0 * c.chi1 * c.chi2[0] + 2.0 * c.chi1.powi(3);
        assert!((st.central[3] - third).abs() < 1e-9 * c.chi1.powi(3));
        assert!((st.lag_sum[1][1] - c.s1).abs() < 1e-10 * c.s1.abs());
    }
}
