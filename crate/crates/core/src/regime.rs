//! Online estimation of movement regimes.
//!
//! A regime is the parameter triple of the damped oscillator
//! `x'' + 2 zeta omega x' + omega^2 x = u` that best explains the recent MMG
//! signal. Sampled at period `T` the free response obeys
//!
//! ```text
//! x[n] = a1 x[n-1] + a2 x[n-2] + b u[n]
//! ```
//!
//! with poles `exp(s T)`, `s = -zeta omega ± i omega sqrt(1 - zeta^2)`. The
//! estimator tracks `(a1, a2)` with exponentially weighted recursive least
//! squares on a decimated copy of the stream and maps the discrete poles
//! back through `s = ln(z) / T`.
//!
//! The same mode also satisfies `x[n] = a1 x[n-L] + a2 x[n-2L]` for any lag
//! `L`, with poles `exp(s L T)`. Slow modes are heavily oversampled at the
//! decimated rate, so a small bank of lags is fitted side by side and the
//! estimate comes from the longest lag that cannot alias the mode, judged
//! from the lag-1 fit.
//!
//! Samples whose prediction error is far above the running residual level
//! are treated as drive (`u`) rather than as evidence about the dynamics:
//! they are excluded from the parameter update and counted towards the
//! excitation instead.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::features::Series;
use crate::signals::SignalFrame;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct RegimeParams {
    /// Window over which signal, residual and excitation RMS are measured.
    pub window: f64,
    /// Spacing of emitted estimates, seconds.
    pub hop: f64,
    /// RLS forgetting factor, 0 < forgetting <= 1.
    pub forgetting: f64,
    /// Rate the input is decimated to before estimation.
    pub decimated_rate: f64,
    /// Estimates whose residual RMS exceeds this fraction of the signal RMS
    /// are invalid.
    pub validity_ratio: f64,
    /// Window RMS below which the regression is considered ill-conditioned.
    pub silence_rms: f64,
    /// Prediction errors above this many running residual deviations are
    /// treated as drive.
    pub drive_threshold: f64,
    /// Updates and valid estimates need the signal to exceed this multiple
    /// of the tracked noise floor.
    pub snr_gate: f64,
    /// Use outputs three and four samples back as instruments, removing
    /// the bias white measurement noise puts on plain least squares.
    pub instrumental: bool,
}

impl Default for RegimeParams {
    fn default() -> Self {
        RegimeParams {
            window: 0.2,
            hop: 0.025,
            forgetting: 0.995,
            decimated_rate: 200.0,
            validity_ratio: 0.5,
            silence_rms: 1e-6,
            drive_threshold: 4.0,
            snr_gate: 4.0,
            instrumental: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    IllConditioned,
    NonPhysical,
    ResidualCeiling,
    NoiseFloor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeEstimate {
    pub time: f64,
    /// Damping ratio; 0 when no physical estimate exists.
    pub zeta: f64,
    /// Natural frequency in rad/s; 0 when no physical estimate exists.
    pub omega: f64,
    pub excitation: f64,
    pub residual_rms: f64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<InvalidReason>,
}

/// Continuous parameters recovered from discrete recursion coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousPoles {
    pub zeta: f64,
    pub omega: f64,
}

/// Matched-z mapping of `x[n] = a1 x[n-1] + a2 x[n-2]` back to `(zeta, omega)`.
///
/// Returns `None` for pole configurations with no damped-oscillator
/// counterpart (negative real poles, growth, zero frequency).
pub fn poles_to_continuous(a1: f64, a2: f64, period: f64) -> Option<ContinuousPoles> {
    let disc = a1 * a1 + 4.0 * a2;
    let (zeta, omega) = if disc < 0.0 {
        // complex pair r e^{±i theta}, r^2 = -a2
        let r = (-a2).sqrt();
        let theta = (-disc).sqrt().atan2(a1);
        let sigma = r.ln() / period;
        let wd = theta / period;
        let omega = sigma.hypot(wd);
        (-sigma / omega, omega)
    } else {
        let root = disc.sqrt();
        let (z1, z2) = ((a1 + root) / 2.0, (a1 - root) / 2.0);
        if z1 <= 0.0 || z2 <= 0.0 {
            return None;
        }
        let (s1, s2) = (z1.ln() / period, z2.ln() / period);
        let prod = s1 * s2;
        if prod <= 0.0 {
            return None;
        }
        let omega = prod.sqrt();
        (-(s1 + s2) / (2.0 * omega), omega)
    };
    (zeta.is_finite() && omega.is_finite() && zeta >= 0.0 && omega > 0.0)
        .then_some(ContinuousPoles { zeta, omega })
}

/// Discrete recursion coefficients of the sampled oscillator.
pub fn continuous_to_poles(zeta: f64, omega: f64, period: f64) -> (f64, f64) {
    let sigma = -zeta * omega;
    let r = (sigma * period).exp();
    if zeta < 1.0 {
        let wd = omega * (1.0 - zeta * zeta).sqrt();
        (2.0 * r * (wd * period).cos(), -r * r)
    } else {
        let spread = omega * (zeta * zeta - 1.0).sqrt();
        let z1 = ((sigma + spread) * period).exp();
        let z2 = ((sigma - spread) * period).exp();
        (z1 + z2, -z1 * z2)
    }
}

/// Two-parameter exponentially weighted recursive least squares.
#[derive(Clone, Debug)]
pub struct Rls2 {
    theta: [f64; 2],
    p: [[f64; 2]; 2],
    forgetting: f64,
    initialised: bool,
    updates: u64,
}

impl Rls2 {
    /// Initial covariance relative to the first regressor energy; makes the
    /// estimates independent of the input amplitude.
    const INITIAL_GAIN: f64 = 1e8;

    pub fn new(forgetting: f64) -> Self {
        Rls2 {
            theta: [0.0; 2],
            p: [[0.0; 2]; 2],
            forgetting,
            initialised: false,
            updates: 0,
        }
    }

    pub fn theta(&self) -> [f64; 2] {
        self.theta
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        self.p
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn predict(&self, phi: [f64; 2]) -> f64 {
        self.theta[0] * phi[0] + self.theta[1] * phi[1]
    }

    /// Incorporate one observation `y ≈ theta · phi`.
    pub fn update(&mut self, phi: [f64; 2], y: f64) {
        self.update_with_instrument(phi, phi, y);
    }

    /// Instrumental-variable form of the update: the gain is built from `z`
    /// instead of `phi`. With `z` correlated with the regressors but not
    /// with the equation error (e.g. older outputs under white measurement
    /// noise) the estimate is free of the errors-in-variables bias plain
    /// least squares suffers. `z == phi` is ordinary RLS.
    pub fn update_with_instrument(&mut self, phi: [f64; 2], z: [f64; 2], y: f64) {
        let energy = phi[0] * phi[0] + phi[1] * phi[1];
        if energy == 0.0 || !energy.is_finite() || !(z[0].is_finite() && z[1].is_finite()) {
            return;
        }
        if !self.initialised {
            let g = Self::INITIAL_GAIN / energy;
            self.p = [[g, 0.0], [0.0, g]];
            self.initialised = true;
        }
        let p = self.p;
        let p_z = [
            p[0][0] * z[0] + p[0][1] * z[1],
            p[1][0] * z[0] + p[1][1] * z[1],
        ];
        let phi_p = [
            phi[0] * p[0][0] + phi[1] * p[1][0],
            phi[0] * p[0][1] + phi[1] * p[1][1],
        ];
        let denom = self.forgetting + phi[0] * p_z[0] + phi[1] * p_z[1];
        if !(denom.abs() > f64::EPSILON * self.forgetting) {
            return;
        }
        let gain = [p_z[0] / denom, p_z[1] / denom];
        let err = y - self.predict(phi);
        self.theta[0] += gain[0] * err;
        self.theta[1] += gain[1] * err;
        let inv = 1.0 / self.forgetting;
        for i in 0..2 {
            for j in 0..2 {
                self.p[i][j] = (p[i][j] - gain[i] * phi_p[j]) * inv;
            }
        }
        if z == phi {
            // keep P symmetric against rounding drift
            let off = 0.5 * (self.p[0][1] + self.p[1][0]);
            self.p[0][1] = off;
            self.p[1][0] = off;
        }
        self.updates += 1;
    }

    /// Ratio of the largest to the smallest singular value of the
    /// covariance (its eigenvalue ratio in the symmetric case).
    pub fn condition(&self) -> f64 {
        let [[a, b], [c, d]] = self.p;
        let det = (a * d - b * c).abs();
        let frob = a * a + b * b + c * c + d * d;
        // singular values s1 >= s2: s1^2 + s2^2 = frob, s1 * s2 = det
        let disc = (frob * frob - 4.0 * det * det).max(0.0).sqrt();
        let s1 = (0.5 * (frob + disc)).sqrt();
        let s2 = if s1 > 0.0 { det / s1 } else { 0.0 };
        if s2 <= 0.0 {
            f64::INFINITY
        } else {
            s1 / s2
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct WindowSample {
    residual_sq: f64,
    /// Residual of samples kept as evidence about the dynamics; zero for
    /// drive samples.
    fit_sq: f64,
    fitted: bool,
}

/// The two-pole recursion fitted at one lag: `x[n] = a1 x[n-L] + a2 x[n-2L]`.
///
/// A single damped mode satisfies this exactly at every lag, with poles
/// raised to the power `L`. Longer lags spread the regressors apart, which
/// keeps slow modes well conditioned when the signal is noisy.
#[derive(Clone, Debug)]
struct LagFit {
    lag: usize,
    rls: Rls2,
    residual_var: f64,
    consecutive_drive: u32,
    window: VecDeque<WindowSample>,
}

impl LagFit {
    fn new(lag: usize, forgetting: f64) -> Self {
        LagFit {
            lag,
            rls: Rls2::new(forgetting),
            residual_var: 0.0,
            consecutive_drive: 0,
            window: VecDeque::new(),
        }
    }

    /// Residual RMS over the window and over the fitted (non-drive) samples.
    fn window_rms(&self) -> (f64, f64) {
        let n = self.window.len().max(1) as f64;
        let (res, fit, fitted) = self
            .window
            .iter()
            .fold((0.0, 0.0, 0usize), |(r, f, k), w| {
                (r + w.residual_sq, f + w.fit_sq, k + usize::from(w.fitted))
            });
        ((res / n).sqrt(), (fit / fitted.max(1) as f64).sqrt())
    }
}

/// Streaming regime estimator for one MMG channel.
#[derive(Clone, Debug)]
pub struct RegimeEstimator {
    params: RegimeParams,
    input_rate: f64,
    decimation: usize,
    block_sum: f64,
    period: f64,
    window_len: usize,
    hop_len: usize,
    start_time: Option<f64>,
    input_count: u64,
    decimated_count: u64,
    /// Most recent decimated samples, newest first.
    history: VecDeque<f64>,
    fits: Vec<LagFit>,
    signal_window: VecDeque<f64>,
    /// Per-hop residual RMS over the recent past; its minimum estimates the
    /// measurement noise floor.
    floor_history: VecDeque<f64>,
    noise_floor: f64,
    /// Last physical lag-1 estimate; lag 1 cannot alias, so it picks the lag.
    coarse: Option<ContinuousPoles>,
}

impl RegimeEstimator {
    const LAGS: [usize; 4] = [1, 2, 4, 8];
    /// Largest pole angle, radians per lag step, a lag may be used at.
    const MAX_LAG_ANGLE: f64 = std::f64::consts::FRAC_PI_2;
    /// Accepted updates before the noise floor is tracked.
    const WARMUP_UPDATES: u64 = 20;
    /// Drive samples allowed in a row, per lag step, before the estimator
    /// assumes the regime itself changed and resumes updating. An impulse
    /// disturbs the two equations that straddle it plus one partially
    /// averaged sample.
    const MAX_DRIVE_STEPS: usize = 2;
    /// Drive detection also requires the error to exceed this fraction of the
    /// window signal RMS, so a noiseless fit does not flag rounding noise.
    const DRIVE_SIGNAL_FRACTION: f64 = 1e-3;
    const MAX_CONDITION: f64 = 1e12;
    /// How far back the noise floor looks, seconds.
    const FLOOR_MEMORY: f64 = 4.0;

    pub fn new(params: RegimeParams, input_rate: f64) -> Result<Self> {
        if !(params.forgetting > 0.0 && params.forgetting <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "forgetting factor must lie in (0, 1], got {}",
                params.forgetting
            )));
        }
        if !(input_rate > 0.0 && params.decimated_rate > 0.0 && params.hop > 0.0) {
            return Err(Error::InvalidArgument(
                "rates and hop must be positive".into(),
            ));
        }
        let decimation = ((input_rate / params.decimated_rate).round() as usize).max(1);
        let rate = input_rate / decimation as f64;
        let window_len = ((params.window * rate).round() as usize).max(2);
        let hop_len = ((params.hop * rate).round() as usize).max(1);
        let max_lag = Self::LAGS[Self::LAGS.len() - 1];
        Ok(RegimeEstimator {
            params,
            input_rate,
            decimation,
            block_sum: 0.0,
            period: 1.0 / rate,
            window_len,
            hop_len,
            start_time: None,
            input_count: 0,
            decimated_count: 0,
            history: VecDeque::with_capacity(2 * max_lag + 2),
            fits: Self::LAGS
                .iter()
                .map(|&lag| LagFit::new(lag, params.forgetting))
                .collect(),
            signal_window: VecDeque::with_capacity(window_len + 1),
            floor_history: VecDeque::new(),
            noise_floor: 0.0,
            coarse: None,
        })
    }

    pub fn decimated_rate(&self) -> f64 {
        1.0 / self.period
    }

    /// Current estimate of the measurement noise level (lag-1 residual RMS).
    pub fn noise_floor(&self) -> f64 {
        self.noise_floor
    }

    /// The lag-1 recursion, `x[n] = a1 x[n-1] + a2 x[n-2]` at the decimated
    /// rate.
    pub fn rls(&self) -> &Rls2 {
        &self.fits[0].rls
    }

    /// Feed one frame; returns the estimates completed within it.
    pub fn process_frame(&mut self, frame: &SignalFrame) -> Result<Vec<RegimeEstimate>> {
        if frame.sample_rate != self.input_rate {
            return Err(Error::InvalidArgument(format!(
                "frame sample rate {} differs from estimator rate {}",
                frame.sample_rate, self.input_rate
            )));
        }
        let start = *self.start_time.get_or_insert(frame.start_time);
        let mut out = Vec::new();
        // Decimation by block averaging: being FIR it adds no poles of its
        // own (a mode's free response stays an exact two-pole recursion) and
        // it keeps decimated measurement noise white at 1/D of its power.
        for &x in frame.samples() {
            self.block_sum += x;
            self.input_count += 1;
            if self.input_count % self.decimation as u64 != 0 {
                continue;
            }
            let mean = self.block_sum / self.decimation as f64;
            self.block_sum = 0.0;
            self.push_decimated(mean);
            if self.decimated_count % self.hop_len as u64 == 0 {
                let time = start + self.decimated_count as f64 * self.period;
                out.push(self.estimate(time));
            }
        }
        Ok(out)
    }

    fn signal_rms(&self) -> f64 {
        // summed from the buffer each time; running sums drift when values
        // span many orders of magnitude
        let n = self.signal_window.len().max(1) as f64;
        (self.signal_window.iter().sum::<f64>() / n).sqrt()
    }

    fn push_decimated(&mut self, x: f64) {
        let signal_rms = self.signal_rms();
        let gate = self.params.snr_gate * self.noise_floor;
        let h = &self.history;
        let at = |k: usize| h.get(k).copied().unwrap_or(0.0);
        for fit in &mut self.fits {
            let lag = fit.lag;
            let phi = [at(lag - 1), at(2 * lag - 1)];
            let instrument = [at(2 * lag), at(2 * lag + 1)];
            let err = x - fit.rls.predict(phi);
            let threshold_sq = self.params.drive_threshold.powi(2) * fit.residual_var
                + (Self::DRIVE_SIGNAL_FRACTION * signal_rms).powi(2);
            let max_run = (Self::MAX_DRIVE_STEPS * lag + 2) as u32;
            let is_drive = err * err > threshold_sq && fit.consecutive_drive < max_run;

            if is_drive {
                fit.consecutive_drive += 1;
            } else {
                fit.consecutive_drive = 0;
                // samples that do not rise clearly above the noise floor
                // carry mostly noise in their regressors
                let informative = 0.5 * (phi[0] * phi[0] + phi[1] * phi[1]) > gate * gate;
                if phi != [0.0, 0.0] && informative {
                    if self.params.instrumental && instrument != [0.0, 0.0] {
                        fit.rls.update_with_instrument(phi, instrument, x);
                    } else {
                        fit.rls.update(phi, x);
                    }
                    // a-posteriori error: near zero on exact data even while
                    // the fit is still converging, the noise level otherwise
                    let post = x - fit.rls.predict(phi);
                    let w = (1.0 - self.params.forgetting).max(1.0 / fit.rls.updates() as f64);
                    fit.residual_var += w * (post * post - fit.residual_var);
                }
            }
            fit.window.push_back(WindowSample {
                residual_sq: err * err,
                fit_sq: if is_drive { 0.0 } else { err * err },
                fitted: !is_drive,
            });
            if fit.window.len() > self.window_len {
                fit.window.pop_front();
            }
        }

        self.signal_window.push_back(x * x);
        if self.signal_window.len() > self.window_len {
            self.signal_window.pop_front();
        }
        self.history.push_front(x);
        self.history.truncate(2 * Self::LAGS[Self::LAGS.len() - 1] + 2);
        self.decimated_count += 1;
    }

    fn track_floor(&mut self) {
        let memory = ((Self::FLOOR_MEMORY / (self.hop_len as f64 * self.period)).ceil() as usize).max(1);
        let lag1 = &self.fits[0];
        if lag1.rls.updates() >= Self::WARMUP_UPDATES {
            self.floor_history.push_back(lag1.window_rms().1);
            if self.floor_history.len() > memory {
                self.floor_history.pop_front();
            }
        }
        let floor = self
            .floor_history
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        self.noise_floor = if floor.is_finite() { floor } else { 0.0 };
    }

    fn poles(&self, fit: &LagFit) -> Option<ContinuousPoles> {
        if fit.rls.updates() < 2 || fit.rls.condition() > Self::MAX_CONDITION {
            return None;
        }
        let [a1, a2] = fit.rls.theta();
        poles_to_continuous(a1, a2, fit.lag as f64 * self.period)
            .filter(|p| p.omega < std::f64::consts::PI * self.input_rate)
    }

    /// The longest lag at which the mode stays well inside the lag's
    /// Nyquist range, judged from the unaliased lag-1 estimate.
    fn choose_fit(&self) -> usize {
        let Some(coarse) = self.coarse else {
            return 0;
        };
        (0..self.fits.len())
            .rev()
            .find(|&i| {
                coarse.omega * self.fits[i].lag as f64 * self.period <= Self::MAX_LAG_ANGLE
                    && self.poles(&self.fits[i]).is_some()
            })
            .unwrap_or(0)
    }

    fn estimate(&mut self, time: f64) -> RegimeEstimate {
        self.track_floor();
        let signal_rms = self.signal_rms();
        if let Some(p) = self.poles(&self.fits[0]) {
            self.coarse = Some(p);
        }
        let fit = &self.fits[self.choose_fit()];
        let (excitation, residual_rms) = fit.window_rms();
        let invalid = |reason, last: Option<ContinuousPoles>| RegimeEstimate {
            time,
            zeta: last.map_or(0.0, |p| p.zeta),
            omega: last.map_or(0.0, |p| p.omega),
            excitation,
            residual_rms,
            valid: false,
            reason: Some(reason),
        };
        if signal_rms < self.params.silence_rms
            || fit.rls.updates() < 2
            || fit.rls.condition() > Self::MAX_CONDITION
        {
            return invalid(InvalidReason::IllConditioned, None);
        }
        let Some(poles) = self.poles(fit) else {
            return invalid(InvalidReason::NonPhysical, None);
        };
        if residual_rms > self.params.validity_ratio * signal_rms {
            return invalid(InvalidReason::ResidualCeiling, Some(poles));
        }
        if signal_rms <= self.params.snr_gate * self.noise_floor {
            return invalid(InvalidReason::NoiseFloor, Some(poles));
        }
        RegimeEstimate {
            time,
            zeta: poles.zeta,
            omega: poles.omega,
            excitation,
            residual_rms,
            valid: true,
            reason: None,
        }
    }
}

/// Run a fresh estimator over a single-channel MMG stream.
pub fn estimate_stream(
    frames: &[SignalFrame],
    window: f64,
    forgetting: f64,
) -> Result<Vec<RegimeEstimate>> {
    let params = RegimeParams {
        window,
        forgetting,
        ..RegimeParams::default()
    };
    estimate_stream_with(frames, params)
}

pub fn estimate_stream_with(
    frames: &[SignalFrame],
    params: RegimeParams,
) -> Result<Vec<RegimeEstimate>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let mut est = RegimeEstimator::new(params, first.sample_rate)?;
    let mut out = Vec::new();
    for f in frames {
        out.extend(est.process_frame(f)?);
    }
    Ok(out)
}

/// Decay constant (1/s) of an envelope after its peak, from a log-linear
/// least-squares fit of the decaying run that follows `peak_index`.
pub fn damping_from_decay(env: &Series<f64>, peak_index: usize) -> Result<f64> {
    let v = &env.values;
    if peak_index >= v.len() || !(v[peak_index] > 0.0) {
        return Err(Error::NonDecaying);
    }
    let mut end = peak_index;
    while end + 1 < v.len() && v[end + 1] > 0.0 && v[end + 1] < v[end] {
        end += 1;
    }
    if end - peak_index < 5 {
        return Err(Error::NonDecaying);
    }
    let pts: Vec<(f64, f64)> = (peak_index..=end)
        .map(|i| (env.time(i), v[i].ln()))
        .collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(sxy, sxx), (t, y)| {
        (sxy + (t - mt) * (y - my), sxx + (t - mt) * (t - mt))
    });
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::NonDecaying);
    }
    Ok(-slope)
}
