//! Demodulation of port signals at the Rabi frequency, bootstrap amplitude
//! distributions and the four-amplitude directionality estimate.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::dynamics::{check_grid, TimeTrace};
use crate::edge::Chi;
use crate::error::{Error, Result};
use crate::model::RAD_PER_NS_PER_MHZ;

/// Widest transition band (MHz) of the low-pass filters.
pub const MAX_TRANSITION: f64 = 2.0;

/// Blackman-window transition width in units of `fs / taps`.
const BLACKMAN_WIDTH: f64 = 5.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemodOptions {
    /// Low-pass cutoff applied after mixing (MHz).
    pub cutoff: f64,
    /// Optional display low-pass applied to the raw signal before mixing (MHz).
    pub prefilter: Option<f64>,
}

impl Default for DemodOptions {
    fn default() -> Self {
        DemodOptions {
            cutoff: 6.0,
            prefilter: None,
        }
    }
}

/// Blackman-windowed sinc with unit DC gain. `fc` is in cycles per sample.
pub fn blackman_sinc(fc: f64, taps: usize) -> Vec<f64> {
    assert!(taps % 2 == 1 && taps >= 3);
    let mid = (taps / 2) as f64;
    let last = (taps - 1) as f64;
    let tau = std::f64::consts::TAU;
    let mut h: Vec<f64> = (0..taps)
        .map(|k| {
            let x = k as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (tau * fc * x).sin() / (std::f64::consts::PI * x)
            };
            let w = 0.42 - 0.5 * (tau * k as f64 / last).cos() + 0.08 * (2.0 * tau * k as f64 / last).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= sum);
    h
}

/// Odd number of taps giving a transition band of at most `transition`
/// for sample rate `fs` (same units).
pub fn taps_for(transition: f64, fs: f64) -> usize {
    let n = (BLACKMAN_WIDTH * fs / transition).ceil() as usize;
    (n | 1).max(3)
}

/// Zero-phase FIR low-pass on a fixed signal length, applied by FFT
/// convolution after mirror padding.
struct LowPass {
    half: usize,
    len: usize,
    kernel: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl LowPass {
    fn new(cutoff: f64, dt: f64, len: usize) -> Result<Self> {
        let fs = 1e3 / dt;
        if !(cutoff > 0.0 && cutoff < 0.5 * fs) {
            return Err(Error::input(format!("low-pass cutoff {cutoff} MHz outside (0, {}) MHz", 0.5 * fs)));
        }
        let taps = blackman_sinc(cutoff / fs, taps_for(MAX_TRANSITION, fs));
        let half = taps.len() / 2;
        let size = (len + 2 * half + taps.len() - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        let ifft = planner.plan_fft_inverse(size);
        let mut kernel = vec![Complex64::new(0.0, 0.0); size];
        for (k, h) in kernel.iter_mut().zip(&taps) {
            *k = Complex64::new(*h / size as f64, 0.0);
        }
        fft.process(&mut kernel);
        Ok(LowPass {
            half,
            len,
            kernel,
            fft,
            ifft,
        })
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.len);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.kernel.len()];
        let h = self.half as isize;
        for (j, b) in buf.iter_mut().take(self.len + 2 * self.half).enumerate() {
            *b = reflect(x, j as isize - h);
        }
        self.fft.process(&mut buf);
        buf.iter_mut().zip(&self.kernel).for_each(|(b, k)| *b *= k);
        self.ifft.process(&mut buf);
        buf[2 * self.half..2 * self.half + self.len].to_vec()
    }
}

/// Mirror reflection about the end samples, repeated as often as needed.
fn reflect(x: &[Complex64], j: isize) -> Complex64 {
    let n = x.len() as isize;
    if j < 0 {
        reflect(x, -j)
    } else if j >= n {
        reflect(x, 2 * (n - 1) - j)
    } else {
        x[j as usize]
    }
}

/// Reusable demodulator for one time grid and Rabi frequency.
pub struct Demodulator {
    t_grid: Vec<f64>,
    dt: f64,
    reference: Vec<f64>,
    lowpass: LowPass,
    prefilter: Option<LowPass>,
}

impl Demodulator {
    pub fn new(t_grid: &[f64], f_rabi: f64, opts: &DemodOptions) -> Result<Self> {
        check_grid(t_grid, true)?;
        if !(f_rabi.is_finite() && f_rabi > 0.0) {
            return Err(Error::input(format!("Rabi frequency must be positive, got {f_rabi}")));
        }
        let n = t_grid.len();
        let duration = if n > 1 { t_grid[n - 1] - t_grid[0] } else { 0.0 };
        let periods = duration * f_rabi * 1e-3;
        if n < 3 || periods < 2.0 {
            return Err(Error::input(format!("trace covers {periods:.3} Rabi periods, need at least 2")));
        }
        let dt = duration / (n - 1) as f64;
        let prefilter = opts.prefilter.map(|c| LowPass::new(c, dt, n)).transpose()?;
        Ok(Demodulator {
            t_grid: t_grid.to_vec(),
            dt,
            reference: t_grid.iter().map(|t| (RAD_PER_NS_PER_MHZ * f_rabi * t).sin()).collect(),
            lowpass: LowPass::new(opts.cutoff, dt, n)?,
            prefilter,
        })
    }

    /// Mixed, filtered and integrated signal divided by the trace duration.
    pub fn demodulate(&self, signal: &[Complex64]) -> Result<Complex64> {
        if signal.len() != self.t_grid.len() {
            return Err(Error::input("signal length does not match the time grid"));
        }
        let raw = match &self.prefilter {
            Some(f) => f.apply(signal),
            None => signal.to_vec(),
        };
        let mixed: Vec<Complex64> = raw.iter().zip(&self.reference).map(|(s, r)| s * r).collect();
        let y = self.lowpass.apply(&mixed);
        let interior: Complex64 = y[1..y.len() - 1].iter().sum();
        let integral = self.dt * (interior + 0.5 * (y[0] + y[y.len() - 1]));
        Ok(integral / (self.dt * (y.len() - 1) as f64))
    }

    pub fn amplitude(&self, signal: &[Complex64]) -> Result<f64> {
        self.demodulate(signal).map(|z| z.norm())
    }
}

pub fn demodulate_amplitude(t_grid: &[f64], signal: &[Complex64], f_rabi: f64, opts: &DemodOptions) -> Result<f64> {
    Demodulator::new(t_grid, f_rabi, opts)?.amplitude(signal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmplitudeEstimate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Resample the time points with replacement, rebuild the signal on the
/// original grid from the nearest drawn sample, and demodulate. Resample `i`
/// uses ChaCha8 stream `i + 1` of `seed`.
pub fn bootstrap_amplitude(
    t_grid: &[f64],
    signal: &[Complex64],
    f_rabi: f64,
    opts: &DemodOptions,
    n: usize,
    seed: u64,
) -> Result<AmplitudeEstimate> {
    if n < 100 {
        return Err(Error::input(format!("bootstrap needs at least 100 resamples, got {n}")));
    }
    let demod = Demodulator::new(t_grid, f_rabi, opts)?;
    if signal.len() != t_grid.len() {
        return Err(Error::input("signal length does not match the time grid"));
    }
    let samples: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            demod.amplitude(&nearest_resample(signal, &mut rng))
        })
        .collect::<Result<_>>()?;
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(AmplitudeEstimate {
        mean,
        std: var.sqrt(),
        n,
    })
}

fn nearest_resample(signal: &[Complex64], rng: &mut impl Rng) -> Vec<Complex64> {
    let len = signal.len();
    let mut drawn = vec![false; len];
    for _ in 0..len {
        drawn[rng.gen_range(0..len)] = true;
    }
    let mut before = vec![usize::MAX; len];
    let mut last = usize::MAX;
    for i in 0..len {
        if drawn[i] {
            last = i;
        }
        before[i] = last;
    }
    let mut out = Vec::with_capacity(len);
    let mut next = vec![usize::MAX; len];
    let mut upcoming = usize::MAX;
    for i in (0..len).rev() {
        if drawn[i] {
            upcoming = i;
        }
        next[i] = upcoming;
    }
    for i in 0..len {
        let k = match (before[i], next[i]) {
            (usize::MAX, b) => b,
            (a, usize::MAX) => a,
            (a, b) => {
                if i - a <= b - i {
                    a
                } else {
                    b
                }
            }
        };
        out.push(signal[k]);
    }
    out
}

/// Signal amplitudes `s_{m,n}` of edge state `m` on port `n`, with their
/// standard deviations in the order `lL, lR, rL, rR`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalAmplitudes {
    pub s_ll: f64,
    pub s_lr: f64,
    pub s_rl: f64,
    pub s_rr: f64,
    pub stds: [f64; 4],
}

impl SignalAmplitudes {
    pub fn new(s_ll: f64, s_lr: f64, s_rl: f64, s_rr: f64) -> Self {
        SignalAmplitudes {
            s_ll,
            s_lr,
            s_rl,
            s_rr,
            stds: [0.0; 4],
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.s_ll, self.s_lr, self.s_rl, self.s_rr]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in ["s_lL", "s_lR", "s_rL", "s_rR"].iter().zip(self.values()) {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::input(format!("{name} must be finite and non-negative, got {x}")));
            }
        }
        if self.stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::input("standard deviations must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Bootstrap amplitudes of the `port_L` and `port_R` channels of a trace
/// from each edge state. Quadrant `k` in `lL, lR, rL, rR` order uses seed
/// `seed + k`.
pub fn measure_amplitudes(
    left_state: &TimeTrace,
    right_state: &TimeTrace,
    f_rabi: f64,
    opts: &DemodOptions,
    n: usize,
    seed: u64,
) -> Result<SignalAmplitudes> {
    let mut est = [AmplitudeEstimate {
        mean: 0.0,
        std: 0.0,
        n,
    }; 4];
    let quadrants = [(left_state, "port_L"), (left_state, "port_R"), (right_state, "port_L"), (right_state, "port_R")];
    for (k, (trace, port)) in quadrants.iter().enumerate() {
        let signal = trace
            .channel(port)
            .ok_or_else(|| Error::NotFound(format!("channel {port}")))?;
        est[k] = bootstrap_amplitude(&trace.t_grid, signal, f_rabi, opts, n, seed.wrapping_add(k as u64))?;
    }
    Ok(SignalAmplitudes {
        s_ll: est[0].mean,
        s_lr: est[1].mean,
        s_rl: est[2].mean,
        s_rr: est[3].mean,
        stds: est.map(|e| e.std),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiEstimate {
    pub chi_l: Chi,
    pub chi_r: Chi,
    pub chi: Chi,
    #[serde(rename = "chi_dB")]
    pub chi_db: Chi,
    pub fidelity: f64,
    /// Set when a vanishing opposite-port amplitude makes χ infinite.
    pub infinite: bool,
    pub s_values: [f64; 4],
    pub s_stds: [f64; 4],
}

impl ChiEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// `χ_l = s_lL/s_lR`, `χ_r = s_rR/s_rL` and their geometric mean, in which
/// per-port conversion gains cancel.
pub fn chi_estimate(amps: &SignalAmplitudes) -> Result<ChiEstimate> {
    amps.validate()?;
    let chi_l = Chi::from_ratio(amps.s_ll, amps.s_lr);
    let chi_r = Chi::from_ratio(amps.s_rr, amps.s_rl);
    let chi = match (chi_l, chi_r) {
        (Chi::Finite(a), Chi::Finite(b)) => Chi::Finite((a * b).sqrt()),
        _ => Chi::Infinite,
    };
    Ok(ChiEstimate {
        chi_l,
        chi_r,
        chi,
        chi_db: chi.db(),
        fidelity: chi.fidelity(),
        infinite: chi.is_infinite(),
        s_values: amps.values(),
        s_stds: amps.stds,
    })
}
