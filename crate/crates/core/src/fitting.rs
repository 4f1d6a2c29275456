//! Background subtraction, peak extraction and two-stage Hamiltonian fits
//! with case-resampling bootstrap intervals.

use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, sparse_symmetric_eigenvalues};
use crate::model::{build_hamiltonian, real_matrix_unchecked, ModelParams, SiteRoles};
use crate::scattering::SpectrumMap;

/// Subtract from every frequency row its running median along the VQ axis.
/// Windows are truncated at the ends of the axis.
pub fn median_background_subtract(map: &SpectrumMap, window: usize) -> Result<SpectrumMap> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::param(format!("median window must be odd and >= 3, got {window}")));
    }
    let n = map.vq_grid.len();
    if window > n {
        return Err(Error::param(format!("median window {window} exceeds the {n}-point VQ axis")));
    }
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    let values = map
        .values
        .iter()
        .map(|row| {
            (0..n)
                .map(|j| {
                    buf.clear();
                    buf.extend_from_slice(&row[j.saturating_sub(half)..(j + half + 1).min(n)]);
                    row[j] - median(&mut buf)
                })
                .collect()
        })
        .collect();
    SpectrumMap::new(map.kind, map.e_grid.clone(), map.vq_grid.clone(), values)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// One spectral peak. `vq` is the qubit energy (or flux setting) of the slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservedPeak {
    pub vq: f64,
    pub frequency: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakSet {
    pub peaks: Vec<ObservedPeak>,
    pub source: String,
}

impl PeakSet {
    pub fn frequencies(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.frequency).collect()
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    /// CSV `flux_or_VQ,frequency_MHz,amplitude`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("flux_or_VQ,frequency_MHz,amplitude\n");
        for p in &self.peaks {
            out.push_str(&format!("{},{},{}\n", p.vq, p.frequency, p.amplitude));
        }
        out
    }
}

/// Local maxima of `slice` (sampled on `e_grid`) whose topographic
/// prominence is at least `min_prominence`, refined by a parabola through
/// the three samples around each maximum.
pub fn extract_peaks(slice: &[f64], e_grid: &[f64], vq: f64, min_prominence: f64) -> Result<PeakSet> {
    if slice.len() < 3 {
        return Err(Error::input("a peak search needs at least 3 samples"));
    }
    if slice.len() != e_grid.len() {
        return Err(Error::input("slice and energy grid differ in length"));
    }
    let n = slice.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if slice[i] <= slice[i - 1] {
            i += 1;
            continue;
        }
        // extend over a flat top
        let mut j = i;
        while j + 1 < n && slice[j + 1] == slice[i] {
            j += 1;
        }
        if j + 1 >= n || slice[j + 1] > slice[i] {
            i = j + 1;
            continue;
        }
        let top = slice[i];
        let left_base = slice[..i]
            .iter()
            .rev()
            .take_while(|&&y| y <= top)
            .fold(top, |m, &y| m.min(y));
        let right_base = slice[j + 1..]
            .iter()
            .take_while(|&&y| y <= top)
            .fold(top, |m, &y| m.min(y));
        let prominence = top - left_base.max(right_base);
        if prominence >= min_prominence {
            let k = (i + j) / 2;
            let (frequency, amplitude) = if i == j {
                parabolic_vertex(&e_grid[k - 1..=k + 1], &slice[k - 1..=k + 1])
            } else {
                (0.5 * (e_grid[i] + e_grid[j]), top)
            };
            peaks.push(ObservedPeak {
                vq,
                frequency,
                amplitude,
            });
        }
        i = j + 1;
    }
    Ok(PeakSet {
        peaks,
        source: "extract_peaks".into(),
    })
}

fn parabolic_vertex(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (x0, x1, x2) = (x[0], x[1], x[2]);
    let (y0, y1, y2) = (y[0], y[1], y[2]);
    let d1 = (y1 - y0) / (x1 - x0);
    let d2 = (y2 - y1) / (x2 - x1);
    let a = (d2 - d1) / (x2 - x0);
    if a >= 0.0 {
        return (x1, y1);
    }
    let b = d1 - a * (x0 + x1);
    let xv = (-b / (2.0 * a)).clamp(x0, x2);
    let c = y1 - a * x1 * x1 - b * x1;
    (xv, a * xv * xv + b * xv + c)
}

/// Minimum splitting observed near a qubit energy `vq` (lab frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapObservation {
    pub vq: f64,
    pub gap: f64,
}

/// Fitted parameters in the order used throughout this module.
pub const PARAM_NAMES: [&str; 6] = ["t1", "t2", "V", "VM", "f0", "tQ"];
const STAGE1: [usize; 5] = [0, 1, 2, 3, 4];
const TQ: usize = 5;

fn get(p: &ModelParams, i: usize) -> f64 {
    match i {
        0 => p.t1,
        1 => p.t2,
        2 => p.v,
        3 => p.vm,
        4 => p.f0,
        _ => p.tq,
    }
}

fn set(p: &mut ModelParams, i: usize, x: f64) {
    match i {
        0 => p.t1 = x,
        1 => p.t2 = x,
        2 => p.v = x,
        3 => p.vm = x,
        4 => p.f0 = x,
        _ => p.tq = x,
    }
}

/// Which parameters are free (`true`) in a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FitMask(pub [bool; 6]);

impl Default for FitMask {
    fn default() -> Self {
        FitMask([true; 6])
    }
}

impl FitMask {
    pub fn free(&self, name: &str) -> bool {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map_or(false, |i| self.0[i])
    }

    fn stage1(&self) -> Vec<usize> {
        STAGE1.iter().copied().filter(|&i| self.0[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            seed: 0,
            max_iters: 4000,
        }
    }
}

/// Couplings and `V` enter the spectrum only through their magnitude.
fn canonical(mut p: ModelParams) -> ModelParams {
    p.t1 = p.t1.abs();
    p.t2 = p.t2.abs();
    p.tq = p.tq.abs();
    p.v = p.v.abs();
    p
}

/// Closed-model eigenvalues with the qubit at model energy `vq`, ascending.
fn spectrum(params: &ModelParams, vq: f64) -> Option<Vec<f64>> {
    let mut p = canonical(*params);
    p.vq = vq;
    let roles = p.roles().ok()?;
    let mut a = real_matrix_unchecked(&p, &roles);
    sparse_symmetric_eigenvalues(&mut a, roles.dim).ok()
}

/// Waveguide eigenvalues with a far-detuned qubit: the full spectrum minus
/// the level nearest the qubit energy.
fn far_detuned_levels(params: &ModelParams, vq: f64) -> Option<Vec<f64>> {
    let mut e = spectrum(params, vq)?;
    let k = (0..e.len()).min_by(|&a, &b| (e[a] - vq).abs().total_cmp(&(e[b] - vq).abs()))?;
    e.remove(k);
    Some(e)
}

/// Splitting of the eigenvalue pair straddling the qubit energy `vq`.
fn straddling_gap(params: &ModelParams, vq: f64) -> Option<f64> {
    let e = spectrum(params, vq)?;
    let k = e.iter().rposition(|&x| x <= vq)?;
    e.get(k + 1).map(|hi| hi - e[k])
}

/// Peak-to-mode assignment: by sorted order over the best contiguous window
/// of modes, or fixed mode indices.
#[derive(Debug, Clone)]
enum Assignment {
    Sorted,
    Indexed(Vec<usize>),
}

const PENALTY: f64 = 1e30;

struct Stage1Cost<'a> {
    base: ModelParams,
    free: &'a [usize],
    freqs: &'a [f64],
    assignment: &'a Assignment,
    vq_lab: f64,
}

impl Stage1Cost<'_> {
    fn params(&self, x: &[f64]) -> ModelParams {
        let mut p = self.base;
        for (&i, &v) in self.free.iter().zip(x) {
            set(&mut p, i, v);
        }
        p
    }

    /// Sum of squared residuals and the window offset used.
    fn evaluate(&self, p: &ModelParams) -> (f64, usize) {
        let levels = match far_detuned_levels(p, self.vq_lab - p.f0) {
            Some(l) => l,
            None => return (PENALTY, 0),
        };
        match self.assignment {
            Assignment::Indexed(idx) => {
                let s = self
                    .freqs
                    .iter()
                    .zip(idx)
                    .map(|(f, &k)| (f - levels[k] - p.f0).powi(2))
                    .sum();
                (s, 0)
            }
            Assignment::Sorted => {
                let m = self.freqs.len();
                (0..=levels.len() - m)
                    .map(|s| {
                        let sse: f64 = self
                            .freqs
                            .iter()
                            .zip(&levels[s..s + m])
                            .map(|(f, l)| (f - l - p.f0).powi(2))
                            .sum();
                        (sse, s)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .unwrap_or((PENALTY, 0))
            }
        }
    }
}

impl CostFunction for Stage1Cost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let c = self.evaluate(&self.params(x)).0;
        Ok(if c.is_finite() { c } else { PENALTY })
    }
}

struct Stage2Cost<'a> {
    base: ModelParams,
    gaps: &'a [GapObservation],
}

impl Stage2Cost<'_> {
    fn sse(&self, tq: f64) -> f64 {
        let mut p = self.base;
        p.tq = tq;
        self.gaps
            .iter()
            .map(|g| match straddling_gap(&p, g.vq - p.f0) {
                Some(model) => (g.gap - model).powi(2),
                None => PENALTY,
            })
            .sum()
    }
}

impl CostFunction for Stage2Cost<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, x: &f64) -> std::result::Result<f64, argmin::core::Error> {
        let c = self.sse(*x);
        Ok(if c.is_finite() { c } else { PENALTY })
    }
}

/// One-dimensional stage: Brent's derivative-free minimization of the gap
/// residual over `0 ≤ tQ ≤ upper`.
fn fit_tq(cost: Stage2Cost<'_>, upper: f64, max_iters: u64) -> Result<Minimum> {
    let res = Executor::new(cost, BrentOpt::new(0.0, upper))
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(|_| Error::NumericalFailure {
            dim: 1,
            max_abs: upper,
        })?;
    let state = res.state();
    Ok(Minimum {
        x: vec![state.get_best_param().copied().unwrap_or(0.0)],
        cost: state.get_best_cost(),
        converged: matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged)),
    })
}

struct Minimum {
    x: Vec<f64>,
    cost: f64,
    converged: bool,
}

/// Edge of the initial simplex (MHz) along each parameter.
const SIMPLEX_STEP: f64 = 5.0;

/// Spread of vertex costs (MHz²) at which the simplex stops.
const SD_TOLERANCE: f64 = 1e-7;

fn simplex<C>(cost: C, x0: &[f64], max_iters: u64, sd_tolerance: f64) -> Result<Minimum>
where
    C: CostFunction<Param = Vec<f64>, Output = f64>,
{
    let mut vertices = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += SIMPLEX_STEP;
        vertices.push(v);
    }
    let failure = || Error::NumericalFailure {
        dim: x0.len(),
        max_abs: x0.iter().fold(0.0, |m, x| m.max(x.abs())),
    };
    let solver = NelderMead::new(vertices)
        .with_sd_tolerance(sd_tolerance)
        .map_err(|_| failure())?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(|_| failure())?;
    let state = res.state();
    let x = state
        .get_best_param()
        .cloned()
        .unwrap_or_else(|| x0.to_vec());
    Ok(Minimum {
        x,
        cost: state.get_best_cost(),
        converged: matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged)),
    })
}

/// Simplex minimization, optionally followed by one restart from the
/// optimum with a tolerance scaled to the residual reached, which frees a
/// simplex that collapsed early along a weakly constrained direction.
fn minimize<C, F>(make: F, x0: &[f64], max_iters: u64, polish: bool) -> Result<Minimum>
where
    C: CostFunction<Param = Vec<f64>, Output = f64>,
    F: Fn() -> C,
{
    let first = simplex(make(), x0, max_iters, SD_TOLERANCE)?;
    if !polish {
        return Ok(first);
    }
    let tol = (first.cost * 1e-6).clamp(1e-15, SD_TOLERANCE);
    let second = simplex(make(), &first.x, max_iters, tol)?;
    Ok(if second.cost <= first.cost { second } else { first })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub best: f64,
    pub p2_5: f64,
    pub p97_5: f64,
    pub median: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub best: ModelParams,
    /// Free parameters only.
    pub parameters: Vec<ParamSummary>,
    pub n_bootstrap: usize,
    pub residual_rms: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// Mode index (ascending waveguide levels) assigned to each peak in
    /// ascending frequency order.
    pub assignment: Vec<usize>,
}

impl FitResult {
    pub fn summary(&self, name: &str) -> Option<&ParamSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// `{ "parameters": { name: {best, p2_5, p97_5, std} }, … }`
    pub fn to_json(&self) -> serde_json::Value {
        let params: serde_json::Map<String, serde_json::Value> = self
            .parameters
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    serde_json::json!({
                        "best": s.best,
                        "p2_5": s.p2_5,
                        "p97_5": s.p97_5,
                        "median": s.median,
                        "std": s.std,
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "parameters": params,
            "best": self.best,
            "n_bootstrap": self.n_bootstrap,
            "residual_rms_MHz": self.residual_rms,
            "converged": self.converged,
            "warnings": self.warnings,
            "assignment": self.assignment,
        })
    }
}

struct PointFit {
    params: ModelParams,
    sse: f64,
    n_obs: usize,
    converged: bool,
    offset: usize,
}

fn far_vq(peaks: &[ObservedPeak]) -> f64 {
    let mut v: Vec<f64> = peaks.iter().map(|p| p.vq).collect();
    median(&mut v)
}

fn check_determined(n_peaks: usize, n_gaps: usize, mask: &FitMask) -> Result<()> {
    let s1 = mask.stage1().len();
    if n_peaks < s1 {
        return Err(Error::Underdetermined {
            observations: n_peaks,
            free: s1,
        });
    }
    if mask.0[TQ] && n_gaps == 0 {
        // tQ is fitted to the gaps alone
        return Err(Error::Underdetermined {
            observations: 0,
            free: 1,
        });
    }
    Ok(())
}

const MAX_ROUNDS: usize = 6;
const TQ_SETTLED: f64 = 1e-3;

/// Core two-stage fit over sorted frequencies.
fn fit_once(
    freqs: &[f64],
    assignment: &Assignment,
    vq_lab: f64,
    gaps: &[GapObservation],
    starts: &[ModelParams],
    mask: &FitMask,
    max_iters: u64,
    polish: bool,
) -> Result<PointFit> {
    let free = mask.stage1();
    let mut best: Option<(Minimum, ModelParams)> = None;
    for start in starts {
        let make = || Stage1Cost {
            base: *start,
            free: &free,
            freqs,
            assignment,
            vq_lab,
        };
        let m = if free.is_empty() {
            let c = make();
            Minimum {
                cost: c.evaluate(start).0,
                x: Vec::new(),
                converged: true,
            }
        } else {
            let x0: Vec<f64> = free.iter().map(|&i| get(start, i)).collect();
            minimize(make, &x0, max_iters, polish)?
        };
        if best.as_ref().map_or(true, |(b, _)| m.cost < b.cost) {
            best = Some((m, *start));
        }
    }
    let (m1, start) = best.ok_or_else(|| Error::input("no starting point"))?;
    let stage1 = Stage1Cost {
        base: start,
        free: &free,
        freqs,
        assignment,
        vq_lab,
    };
    let mut params = canonical(stage1.params(&m1.x));
    let mut converged = m1.converged;
    let mut sse2 = 0.0;
    if mask.0[TQ] {
        // The far-detuned levels still carry a small tQ-dependent shift, so
        // the stages alternate until tQ settles.
        for round in 0..MAX_ROUNDS {
            let base = params;
            let upper = (4.0 * base.tq).max(base.tq + 200.0);
            let m2 = fit_tq(Stage2Cost { base, gaps }, upper, max_iters)?;
            let shift = (m2.x[0] - params.tq).abs();
            params.tq = m2.x[0];
            sse2 = m2.cost;
            converged &= m2.converged;
            if shift < TQ_SETTLED || free.is_empty() || round + 1 == MAX_ROUNDS {
                break;
            }
            let base = params;
            let make = || Stage1Cost {
                base,
                free: &free,
                freqs,
                assignment,
                vq_lab,
            };
            let x0: Vec<f64> = free.iter().map(|&i| get(&base, i)).collect();
            let m = minimize(make, &x0, max_iters, polish)?;
            converged &= m.converged;
            params = canonical(make().params(&m.x));
        }
    } else if !gaps.is_empty() {
        sse2 = Stage2Cost { base: params, gaps }.sse(params.tq);
    }
    let (sse1, offset) = stage1.evaluate(&params);
    if !(sse1 + sse2).is_finite() || sse1 + sse2 >= PENALTY {
        return Err(Error::NumericalFailure {
            dim: freqs.len(),
            max_abs: sse1 + sse2,
        });
    }
    Ok(PointFit {
        params,
        sse: sse1 + sse2,
        n_obs: freqs.len() + gaps.len(),
        converged,
        offset,
    })
}

fn restart_points(initial: &ModelParams, mask: &FitMask, opts: &FitOptions) -> Vec<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![*initial];
    for _ in 0..opts.restarts {
        let mut p = *initial;
        for i in mask.stage1() {
            let x = get(initial, i);
            let spread = (0.1 * x.abs()).max(10.0);
            set(&mut p, i, x + rng.gen_range(-spread..spread));
        }
        starts.push(p);
    }
    starts
}

fn sorted_frequencies(peaks: &PeakSet) -> Result<Vec<f64>> {
    let mut f = peaks.frequencies();
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("peak frequencies must be finite"));
    }
    f.sort_by(f64::total_cmp);
    Ok(f)
}

fn point_summary(best: &ModelParams, mask: &FitMask) -> Vec<ParamSummary> {
    (0..6)
        .filter(|&i| mask.0[i])
        .map(|i| {
            let x = get(best, i);
            ParamSummary {
                name: PARAM_NAMES[i].into(),
                best: x,
                p2_5: x,
                p97_5: x,
                median: x,
                std: 0.0,
            }
        })
        .collect()
}

/// Stage 1 fits the far-detuned peaks (lab frequencies, qubit at the
/// peaks' median `vq`) with `tQ` held; stage 2 fits `tQ` to the gap sizes.
pub fn fit_hamiltonian(
    far_detuned_peaks: &PeakSet,
    anticrossing_gaps: &[GapObservation],
    initial: &ModelParams,
    mask: &FitMask,
) -> Result<FitResult> {
    fit_hamiltonian_with(far_detuned_peaks, anticrossing_gaps, initial, mask, &FitOptions::default())
}

pub fn fit_hamiltonian_with(
    far_detuned_peaks: &PeakSet,
    anticrossing_gaps: &[GapObservation],
    initial: &ModelParams,
    mask: &FitMask,
    opts: &FitOptions,
) -> Result<FitResult> {
    initial.validate()?;
    check_determined(far_detuned_peaks.len(), anticrossing_gaps.len(), mask)?;
    let freqs = sorted_frequencies(far_detuned_peaks)?;
    let n_modes = 4 * initial.p + 3;
    if freqs.len() > n_modes {
        return Err(Error::input(format!(
            "{} peaks but only {n_modes} waveguide modes at p = {}",
            freqs.len(),
            initial.p
        )));
    }
    let starts = restart_points(initial, mask, opts);
    let fit = fit_once(
        &freqs,
        &Assignment::Sorted,
        far_vq(&far_detuned_peaks.peaks),
        anticrossing_gaps,
        &starts,
        mask,
        opts.max_iters,
        true,
    )?;
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push("simplex stopped at the iteration limit; returning the best point found".into());
    }
    Ok(FitResult {
        best: fit.params,
        parameters: point_summary(&fit.params, mask),
        n_bootstrap: 0,
        residual_rms: (fit.sse / fit.n_obs as f64).sqrt(),
        converged: fit.converged,
        warnings,
        assignment: (0..freqs.len()).map(|k| fit.offset + k).collect(),
    })
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fraction of failed resamples above which the bootstrap aborts.
const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Point fit plus `n` case-resampled refits. Peaks keep the mode indices
/// assigned by the point fit; peaks and gaps are resampled independently.
/// Resample `i` draws from ChaCha8 stream `i + 1` of `seed`, so results do not
/// depend on thread count.
pub fn bootstrap_fit(
    peaks: &PeakSet,
    gaps: &[GapObservation],
    initial: &ModelParams,
    mask: &FitMask,
    n: usize,
    seed: u64,
) -> Result<FitResult> {
    let opts = FitOptions {
        seed,
        ..FitOptions::default()
    };
    bootstrap_fit_with(peaks, gaps, initial, mask, n, &opts)
}

/// [`bootstrap_fit`] with explicit point-fit options; `opts.seed` seeds
/// both the restarts and the resampling.
pub fn bootstrap_fit_with(
    peaks: &PeakSet,
    gaps: &[GapObservation],
    initial: &ModelParams,
    mask: &FitMask,
    n: usize,
    opts: &FitOptions,
) -> Result<FitResult> {
    if n < 100 {
        return Err(Error::param(format!("bootstrap needs n >= 100, got {n}")));
    }
    let seed = opts.seed;
    let point = fit_hamiltonian_with(peaks, gaps, initial, mask, opts)?;
    let freqs = sorted_frequencies(peaks)?;
    let vq_lab = far_vq(&peaks.peaks);
    let free: Vec<usize> = (0..6).filter(|&i| mask.0[i]).collect();

    let draws: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let picks: Vec<usize> = (0..freqs.len()).map(|_| rng.gen_range(0..freqs.len())).collect();
            let f: Vec<f64> = picks.iter().map(|&k| freqs[k]).collect();
            let idx: Vec<usize> = picks.iter().map(|&k| point.assignment[k]).collect();
            let g: Vec<GapObservation> = (0..gaps.len()).map(|_| gaps[rng.gen_range(0..gaps.len())]).collect();
            let mut distinct = idx.clone();
            distinct.sort_unstable();
            distinct.dedup();
            check_determined(distinct.len(), g.len(), mask).ok()?;
            let fit = fit_once(&f, &Assignment::Indexed(idx), vq_lab, &g, &[point.best], mask, opts.max_iters, false).ok()?;
            Some(free.iter().map(|&k| get(&fit.params, k)).collect())
        })
        .collect();

    let failed = draws.iter().filter(|d| d.is_none()).count();
    if failed as f64 > MAX_FAILURE_FRACTION * n as f64 {
        return Err(Error::BootstrapFailed { failed, total: n });
    }
    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let parameters = free
        .iter()
        .enumerate()
        .map(|(col, &k)| {
            let mut v: Vec<f64> = ok.iter().map(|d| d[col]).collect();
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0);
            ParamSummary {
                name: PARAM_NAMES[k].into(),
                best: get(&point.best, k),
                p2_5: percentile(&v, 2.5),
                p97_5: percentile(&v, 97.5),
                median: percentile(&v, 50.0),
                std: var.sqrt(),
            }
        })
        .collect();
    let mut warnings = point.warnings.clone();
    if failed > 0 {
        warnings.push(format!("{failed} of {n} bootstrap resamples failed and were dropped"));
    }
    Ok(FitResult {
        parameters,
        n_bootstrap: n - failed,
        warnings,
        ..point
    })
}

/// Model peak positions (lab frequencies) of the far-detuned waveguide
/// modes, ascending. Used to synthesize observations.
pub fn model_peak_frequencies(params: &ModelParams, vq_lab: f64) -> Result<Vec<f64>> {
    params.validate()?;
    far_detuned_levels(params, vq_lab - params.f0)
        .map(|l| l.into_iter().map(|e| e + params.f0).collect())
        .ok_or(Error::NumericalFailure {
            dim: 4 * params.p + 4,
            max_abs: f64::NAN,
        })
}

/// Model splitting at lab qubit energy `vq_lab`.
pub fn model_gap(params: &ModelParams, vq_lab: f64) -> Result<f64> {
    params.validate()?;
    straddling_gap(params, vq_lab - params.f0).ok_or_else(|| Error::NotFound(format!("no level pair straddles VQ = {vq_lab}")))
}

/// Uncoupled qubit/waveguide crossing energies (lab frame) nearest the band
/// centre: the natural places to measure anti-crossing gaps. Modes with no
/// weight on the site the qubit attaches to never anticross and are skipped.
pub fn crossing_energies(params: &ModelParams, count: usize) -> Result<Vec<f64>> {
    let mut p = *params;
    p.tq = 0.0;
    let h = build_hamiltonian(&p.with_vq(1e6), false)?;
    let (values, vectors) = eig_hermitian(&h.matrix)?;
    let (m, q) = (SiteRoles::idx(h.roles.m), SiteRoles::idx(h.roles.q));
    let mut levels: Vec<f64> = values
        .iter()
        .enumerate()
        .filter(|&(k, _)| vectors[(q, k)].norm() < 0.5 && vectors[(m, k)].norm_sqr() > BRIGHT_WEIGHT)
        .map(|(_, e)| e + p.f0)
        .collect();
    levels.sort_by(|a, b| (a - p.f0).abs().total_cmp(&(b - p.f0).abs()));
    levels.truncate(count);
    levels.sort_by(f64::total_cmp);
    Ok(levels)
}

/// Minimum squared amplitude on the attachment site for a mode to count as
/// coupled to the qubit.
const BRIGHT_WEIGHT: f64 = 1e-3;

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_row(line: &str, lineno: usize, expect: usize) -> Result<Option<Vec<f64>>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expect {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected {expect} comma-separated fields, got {}", fields.len()),
        });
    }
    let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
    match parsed {
        Ok(v) if v.iter().all(|x| x.is_finite()) => Ok(Some(v)),
        Ok(_) => Err(Error::Parse {
            line: lineno,
            message: "non-finite value".into(),
        }),
        Err(_) if fields.iter().all(|f| f.parse::<f64>().is_err()) => Ok(None),
        Err(_) => Err(Error::Parse {
            line: lineno,
            message: format!("could not parse {line:?} as numbers"),
        }),
    }
}

fn parse_table(text: &str, expect: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (k, (lineno, line)) in data_lines(text).enumerate() {
        match parse_row(line, lineno, expect)? {
            Some(v) => rows.push(v),
            None if k == 0 => {}
            None => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("unexpected text row {line:?}"),
                })
            }
        }
    }
    Ok(rows)
}

/// Peaks from CSV `flux_or_VQ,frequency_MHz,amplitude`; an optional header
/// row and `#` comments are allowed.
pub fn parse_peaks_csv(text: &str, source: &str) -> Result<PeakSet> {
    let peaks = parse_table(text, 3)?
        .into_iter()
        .map(|r| ObservedPeak {
            vq: r[0],
            frequency: r[1],
            amplitude: r[2],
        })
        .collect();
    Ok(PeakSet {
        peaks,
        source: source.into(),
    })
}

/// Gaps from CSV `VQ_MHz,gap_MHz`.
pub fn parse_gaps_csv(text: &str) -> Result<Vec<GapObservation>> {
    Ok(parse_table(text, 2)?
        .into_iter()
        .map(|r| GapObservation { vq: r[0], gap: r[1] })
        .collect())
}
