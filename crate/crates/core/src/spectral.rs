//! Eigenmodes, band-gap detection and qubit-energy sweeps.

use std::fmt::Write as _;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{build_hamiltonian, LabeledHamiltonian, ModelParams, SiteRoles};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeClass {
    pub in_gap: bool,
    /// |ψ_Q|²
    pub qubit_weight: f64,
    /// |ψ_M|²
    pub central_weight: f64,
    /// 1 / Σ|ψ_i|⁴
    pub participation_ratio: f64,
}

/// Complete spectrum sorted by real part, with unit-norm eigenvectors.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub eigenvalues: Vec<Complex64>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Mat<Complex64>,
    pub classes: Vec<ModeClass>,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        (0..self.eigenvectors.nrows())
            .map(|i| self.eigenvectors[(i, k)])
            .collect()
    }

    pub fn amplitude(&self, site0: usize, k: usize) -> Complex64 {
        self.eigenvectors[(site0, k)]
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.re).collect()
    }

    /// Index of the in-gap mode with the largest qubit weight.
    pub fn qubit_dominant_in_gap(&self) -> Option<usize> {
        (0..self.len())
            .filter(|&k| self.classes[k].in_gap)
            .max_by(|&a, &b| {
                self.classes[a]
                    .qubit_weight
                    .total_cmp(&self.classes[b].qubit_weight)
            })
    }

    /// Set the `in_gap` flag of every mode from a gap interval.
    pub fn mark_in_gap(&mut self, gap: &BandGap) {
        for (c, e) in self.classes.iter_mut().zip(&self.eigenvalues) {
            c.in_gap = gap.contains(e.re);
        }
    }
}

pub fn eigenmodes(h: &LabeledHamiltonian) -> Result<ModeSet> {
    eigenmodes_of(
        &h.matrix,
        h.hermitian,
        Some(SiteRoles::idx(h.roles.q)),
        Some(SiteRoles::idx(h.roles.m)),
    )
}

/// Eigenmodes of an arbitrary square matrix. `qubit` and `central` are
/// 0-based indices used for the weight classification (0 when absent).
pub fn eigenmodes_of(
    matrix: &Mat<Complex64>,
    hermitian: bool,
    qubit: Option<usize>,
    central: Option<usize>,
) -> Result<ModeSet> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::input("matrix is not square"));
    }
    let (values, vectors) = if hermitian {
        let (vals, vecs) = linalg::eig_hermitian(matrix)?;
        (vals.into_iter().map(|x| Complex64::new(x, 0.0)).collect(), vecs)
    } else {
        linalg::eig_general(matrix)?
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .re
            .total_cmp(&values[b].re)
            .then(values[a].im.total_cmp(&values[b].im))
    });

    let mut eigenvectors = Mat::<Complex64>::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for (k, &src) in order.iter().enumerate() {
        let norm = (0..n)
            .map(|i| vectors[(i, src)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if !(norm > 0.0) {
            return Err(Error::NumericalFailure {
                dim: n,
                max_abs: norm,
            });
        }
        let mut fourth = 0.0;
        for i in 0..n {
            let a = vectors[(i, src)] / norm;
            eigenvectors[(i, k)] = a;
            fourth += a.norm_sqr() * a.norm_sqr();
        }
        let weight = |site: Option<usize>| site.map_or(0.0, |s| eigenvectors[(s, k)].norm_sqr());
        eigenvalues.push(values[src]);
        classes.push(ModeClass {
            in_gap: false,
            qubit_weight: weight(qubit),
            central_weight: weight(central),
            participation_ratio: 1.0 / fourth,
        });
    }
    Ok(ModeSet {
        eigenvalues,
        eigenvectors,
        classes,
    })
}

const GAP_EDGE_MARGIN: f64 = 0.01;

/// Spectral gap of the waveguide modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandGap {
    pub lower: f64,
    pub upper: f64,
    pub in_gap_mode_indices: Vec<usize>,
}

impl BandGap {
    /// Strictly inside, keeping 1% of the width clear of each band edge so
    /// that band-edge modes nudged by a far-detuned qubit stay outside.
    pub fn contains(&self, e: f64) -> bool {
        let margin = GAP_EDGE_MARGIN * self.width();
        self.lower + margin < e && e < self.upper - margin
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Qubit energy used for "far-detuned" reference solves.
pub fn far_detuned_vq(params: &ModelParams) -> f64 {
    1000.0 + 20.0 * (params.t1 + params.t2 + params.v.abs() + params.vm.abs())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Gap edges `(lower, upper)` of the waveguide band structure.
///
/// The edges come from a reference solve with the qubit decoupled (`tQ = 0`),
/// so they do not move with `VQ`. Band modes are those with qubit and central
/// weight below 0.5 and a participation ratio of at least half the median;
/// the gap is the widest spacing between consecutive band energies whose
/// midpoint lies within `±(t1 + t2)` of the band centre.
pub fn gap_edges(params: &ModelParams) -> Result<(f64, f64)> {
    let mut reference = *params;
    reference.tq = 0.0;
    reference.vq = far_detuned_vq(params);
    let modes = eigenmodes(&build_hamiltonian(&reference, false)?)?;

    gap_from_reference(&modes, params.t1 + params.t2)
}

/// Gap selection on an already-solved qubit-free reference spectrum.
pub(crate) fn gap_from_reference(modes: &ModeSet, reach: f64) -> Result<(f64, f64)> {
    let candidates: Vec<usize> = (0..modes.len())
        .filter(|&k| {
            let c = &modes.classes[k];
            c.qubit_weight <= 0.5 && c.central_weight <= 0.5
        })
        .collect();
    if candidates.len() < 4 {
        return Err(Error::InsufficientModes {
            found: candidates.len(),
        });
    }
    let pr_cut = 0.5
        * median(
            candidates
                .iter()
                .map(|&k| modes.classes[k].participation_ratio)
                .collect(),
        );
    let band: Vec<f64> = candidates
        .into_iter()
        .filter(|&k| modes.classes[k].participation_ratio >= pr_cut)
        .map(|k| modes.eigenvalues[k].re)
        .collect();
    if band.len() < 4 {
        return Err(Error::InsufficientModes { found: band.len() });
    }

    let centre = 0.5 * (band[0] + band[band.len() - 1]);
    let spacings: Vec<f64> = band.windows(2).map(|w| w[1] - w[0]).collect();
    let best = band
        .windows(2)
        .filter(|w| (0.5 * (w[0] + w[1]) - centre).abs() <= reach)
        .max_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0])));
    let spacing = median(spacings);
    match best {
        Some(w) if w[1] - w[0] >= 2.0 * spacing && w[1] - w[0] > 1e-9 => Ok((w[0], w[1])),
        Some(w) => Err(Error::DegenerateGap {
            width: w[1] - w[0],
            spacing,
        }),
        None => Err(Error::DegenerateGap {
            width: 0.0,
            spacing,
        }),
    }
}

/// Band gap for `params`, listing the modes of `modes` strictly inside it.
pub fn band_gap(modes: &ModeSet, params: &ModelParams) -> Result<BandGap> {
    let (lower, upper) = gap_edges(params)?;
    let mut gap = BandGap {
        lower,
        upper,
        in_gap_mode_indices: Vec::new(),
    };
    gap.in_gap_mode_indices = modes
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, e)| gap.contains(e.re))
        .map(|(k, _)| k)
        .collect();
    Ok(gap)
}

/// Hermitian eigenmodes of `params` with `in_gap` flags filled in.
pub fn classified_modes(params: &ModelParams) -> Result<(ModeSet, BandGap)> {
    let mut modes = eigenmodes(&build_hamiltonian(params, false)?)?;
    let gap = band_gap(&modes, params)?;
    modes.mark_in_gap(&gap);
    Ok((modes, gap))
}

/// `|ψ_M|² > threshold` for every mode: which modes can anti-cross with the qubit.
pub fn qubit_coupling_flags(modes: &ModeSet, roles: &SiteRoles, threshold: f64) -> Vec<bool> {
    coupling_flags_at(modes, SiteRoles::idx(roles.m), threshold)
}

pub(crate) fn coupling_flags_at(modes: &ModeSet, site0: usize, threshold: f64) -> Vec<bool> {
    (0..modes.len())
        .map(|k| modes.amplitude(site0, k).norm_sqr() > threshold)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMode {
    pub index: usize,
    pub energy: Complex64,
    pub qubit_weight: f64,
    pub central_weight: f64,
    pub in_gap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub vq: f64,
    pub modes: Vec<SweepMode>,
}

/// One Hermitian eigensolve per qubit energy. Grid points run in parallel.
pub fn sweep_qubit_energy(
    params: &ModelParams,
    vq_grid: &[f64],
    in_gap_only: bool,
) -> Result<Vec<SweepPoint>> {
    if vq_grid.is_empty() {
        return Err(Error::input("empty VQ grid"));
    }
    let (lower, upper) = gap_edges(params)?;
    let gap = BandGap {
        lower,
        upper,
        in_gap_mode_indices: Vec::new(),
    };
    vq_grid
        .par_iter()
        .map(|&vq| {
            let modes = eigenmodes(&build_hamiltonian(&params.with_vq(vq), false)?)?;
            let rows = (0..modes.len())
                .filter_map(|k| {
                    let e = modes.eigenvalues[k];
                    let in_gap = gap.contains(e.re);
                    (!in_gap_only || in_gap).then(|| SweepMode {
                        index: k,
                        energy: e,
                        qubit_weight: modes.classes[k].qubit_weight,
                        central_weight: modes.classes[k].central_weight,
                        in_gap,
                    })
                })
                .collect();
            Ok(SweepPoint { vq, modes: rows })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("VQ_MHz,mode_index,re_E_MHz,im_E_MHz,qubit_weight,central_weight,in_gap\n");
    for pt in points {
        for m in &pt.modes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                pt.vq, m.index, m.energy.re, m.energy.im, m.qubit_weight, m.central_weight, m.in_gap
            );
        }
    }
    s
}

/// Pair the modes of `next` with those of `prev`: entry `k` is the index in
/// `next` continuing branch `k`. Greedy on `|ΔE| + scale·(1 − |⟨a|b⟩|)`,
/// so energy distance dominates and overlap breaks near-ties at crossings.
pub fn match_modes(prev: &ModeSet, next: &ModeSet, scale: f64) -> Vec<usize> {
    let n = prev.len();
    let dim = prev.eigenvectors.nrows();
    let mut costs = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let mut dot = Complex64::new(0.0, 0.0);
            for i in 0..dim {
                dot += prev.eigenvectors[(i, a)].conj() * next.eigenvectors[(i, b)];
            }
            let cost = (prev.eigenvalues[a] - next.eigenvalues[b]).norm() + scale * (1.0 - dot.norm());
            costs.push((cost, a, b));
        }
    }
    costs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut assign = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    for (_, a, b) in costs {
        if assign[a] == usize::MAX && !taken[b] {
            assign[a] = b;
            taken[b] = true;
        }
    }
    assign
}

/// Continuous eigenvalue branches across a qubit-energy sweep: `branches[k][i]`
/// is the energy of branch `k` at `vq_grid[i]`.
pub fn track_branches(params: &ModelParams, vq_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    if vq_grid.is_empty() {
        return Err(Error::input("empty VQ grid"));
    }
    let sets: Vec<ModeSet> = vq_grid
        .par_iter()
        .map(|&vq| eigenmodes(&build_hamiltonian(&params.with_vq(vq), false)?))
        .collect::<Result<_>>()?;
    let n = sets[0].len();
    let mut current: Vec<usize> = (0..n).collect();
    let mut branches = vec![Vec::with_capacity(vq_grid.len()); n];
    for (k, b) in branches.iter_mut().enumerate() {
        b.push(sets[0].eigenvalues[k].re);
    }
    for w in 1..sets.len() {
        let step = (vq_grid[w] - vq_grid[w - 1]).abs().max(1e-3);
        let map = match_modes(&sets[w - 1], &sets[w], step);
        for k in 0..n {
            current[k] = map[current[k]];
            branches[k].push(sets[w].eigenvalues[current[k]].re);
        }
    }
    Ok(branches)
}

/// Splitting between the two modes with the largest qubit weight.
pub fn qubit_pair_splitting(modes: &ModeSet) -> f64 {
    let mut idx: Vec<usize> = (0..modes.len()).collect();
    idx.sort_by(|&a, &b| {
        modes.classes[b]
            .qubit_weight
            .total_cmp(&modes.classes[a].qubit_weight)
    });
    (modes.eigenvalues[idx[0]].re - modes.eigenvalues[idx[1]].re).abs()
}

/// Minimum in-gap anti-crossing over a qubit-energy grid, as `(VQ, splitting)`.
/// At each grid point the splitting is taken between the two in-gap modes
/// with the largest qubit weight; points with fewer than two in-gap modes
/// are skipped.
pub fn min_anticrossing(params: &ModelParams, vq_grid: &[f64]) -> Result<(f64, f64)> {
    let mut best = (f64::NAN, f64::INFINITY);
    for &vq in vq_grid {
        let (modes, gap) = classified_modes(&params.with_vq(vq))?;
        let mut idx = gap.in_gap_mode_indices.clone();
        if idx.len() < 2 {
            continue;
        }
        idx.sort_by(|&a, &b| {
            modes.classes[b]
                .qubit_weight
                .total_cmp(&modes.classes[a].qubit_weight)
        });
        let s = (modes.eigenvalues[idx[0]].re - modes.eigenvalues[idx[1]].re).abs();
        if s < best.1 {
            best = (vq, s);
        }
    }
    if best.0.is_nan() {
        return Err(Error::NotFound("no grid point with two in-gap modes".into()));
    }
    Ok(best)
}

/// The 4-site reduction: `NL`, `M`, `NR` and the qubit with the chain's couplings.
pub fn three_site_surrogate(params: &ModelParams) -> Mat<Complex64> {
    let c = |x: f64| Complex64::new(x, 0.0);
    let mut h = Mat::<Complex64>::zeros(4, 4);
    h[(0, 0)] = c(-params.v);
    h[(1, 1)] = c(params.vm);
    h[(2, 2)] = c(params.v);
    h[(3, 3)] = c(params.vq);
    for (i, j, t) in [(0, 1, params.t1), (1, 2, params.t1), (1, 3, params.tq)] {
        h[(i, j)] = c(-t);
        h[(j, i)] = c(-t);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn toy(v: f64, t: f64) -> Mat<Complex64> {
        Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => Complex64::new(-v, 0.0),
            (1, 1) => Complex64::new(v, 0.0),
            _ => Complex64::new(-t, 0.0),
        })
    }

    #[test]
    fn two_site_closed_form() {
        let m = eigenmodes_of(&toy(3.0, 4.0), true, None, None).unwrap();
        assert!((m.eigenvalues[0].re + 5.0).abs() < 1e-12);
        assert!((m.eigenvalues[1].re - 5.0).abs() < 1e-12);
        let g = eigenmodes_of(&toy(3.0, 4.0), false, None, None).unwrap();
        assert!((g.eigenvalues[1] - Complex64::new(5.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn fig1_has_two_states_in_gap() {
        let params = presets::fig1().with_vq(-37.5);
        let (modes, gap) = classified_modes(&params).unwrap();
        assert_eq!(gap.in_gap_mode_indices.len(), 2);
        assert!(gap.contains(0.0) && gap.contains(37.5) && gap.contains(-37.5));
        assert!(modes.classes.iter().filter(|c| c.in_gap).count() == 2);
    }

    #[test]
    fn p1_chiral_spectrum_is_symmetric() {
        // brute-force oracle: the 8x8 matrix written out by hand
        let t1 = 1.3;
        let t2 = 2.1;
        let mut a = [[0.0f64; 8]; 8];
        for (i, j, t) in [(0, 1, t2), (1, 2, t1), (2, 3, t1), (3, 4, t1), (4, 5, t1), (5, 6, t2)] {
            a[i][j] = -t;
            a[j][i] = -t;
        }
        let m = Mat::<Complex64>::from_fn(8, 8, |i, j| Complex64::new(a[i][j], 0.0));
        let oracle = eigenmodes_of(&m, true, None, None).unwrap();
        let params = ModelParams {
            p: 1,
            t1,
            t2,
            ..Default::default()
        };
        let modes = eigenmodes(&build_hamiltonian(&params, false).unwrap()).unwrap();
        for k in 0..8 {
            assert!((modes.eigenvalues[k].re - oracle.eigenvalues[k].re).abs() < 1e-12);
            assert!((modes.eigenvalues[k].re + modes.eigenvalues[7 - k].re).abs() < 1e-10);
        }
    }

    #[test]
    fn chiral_symmetry_for_v0() {
        for p in 1..=6 {
            let params = ModelParams {
                p,
                t1: 120.0,
                t2: 150.0,
                tq: 40.0,
                ..Default::default()
            };
            let modes = eigenmodes(&build_hamiltonian(&params, false).unwrap()).unwrap();
            let n = modes.len();
            for k in 0..n {
                assert!((modes.eigenvalues[k].re + modes.eigenvalues[n - 1 - k].re).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uniform_chain_has_no_gap() {
        let params = ModelParams {
            p: 4,
            t1: 200.0,
            t2: 200.0,
            ..Default::default()
        };
        assert!(matches!(gap_edges(&params), Err(Error::DegenerateGap { .. })));
    }

    #[test]
    fn fitted_device_has_single_gap_state() {
        let params = presets::fig3();
        let params = params.with_vq(far_detuned_vq(&params));
        let (modes, gap) = classified_modes(&params).unwrap();
        assert_eq!(gap.in_gap_mode_indices.len(), 1, "{gap:?}");
        let k = gap.in_gap_mode_indices[0];
        assert!(modes.classes[k].participation_ratio < 8.0);
    }

    #[test]
    fn too_few_modes() {
        let m = Mat::<Complex64>::from_fn(3, 3, |i, j| {
            Complex64::new(if i == j { i as f64 } else { 0.1 }, 0.0)
        });
        let modes = eigenmodes_of(&m, true, None, None).unwrap();
        assert_eq!(
            gap_from_reference(&modes, 1.0),
            Err(Error::InsufficientModes { found: 3 })
        );
    }

    #[test]
    fn parity_alternation_at_v0() {
        for p in 1..=6 {
            let params = ModelParams {
                p,
                t1: 120.0,
                t2: 150.0,
                vq: 1e5,
                ..Default::default()
            };
            let h = build_hamiltonian(&params, false).unwrap();
            let modes = eigenmodes(&h).unwrap();
            let band: Vec<usize> = (0..modes.len())
                .filter(|&k| modes.classes[k].qubit_weight < 0.5)
                .collect();
            let flags = qubit_coupling_flags(&modes, &h.roles, 1e-10);
            let pattern: Vec<bool> = band.iter().map(|&k| flags[k]).collect();
            for w in pattern.windows(2) {
                assert_ne!(w[0], w[1], "p={p}: {pattern:?}");
            }
        }
    }

    #[test]
    fn fig1_flags_alternate() {
        let params = presets::fig1().with_vq(1e5);
        let mut p0 = params;
        p0.tq = 0.0;
        let h = build_hamiltonian(&p0, false).unwrap();
        let modes = eigenmodes(&h).unwrap();
        let flags = qubit_coupling_flags(&modes, &h.roles, 1e-6);
        let (lo, hi) = gap_edges(&params).unwrap();
        // band modes on either side of the gap
        for side in [
            (0..modes.len() - 1).filter(|&k| modes.eigenvalues[k].re <= lo).collect::<Vec<_>>(),
            (0..modes.len() - 1).filter(|&k| modes.eigenvalues[k].re >= hi).collect::<Vec<_>>(),
        ] {
            for w in side.windows(2) {
                assert_ne!(flags[w[0]], flags[w[1]]);
            }
        }
    }

    #[test]
    fn single_site_flag() {
        let m = Mat::<Complex64>::from_fn(1, 1, |_, _| Complex64::new(2.0, 0.0));
        let modes = eigenmodes_of(&m, true, None, Some(0)).unwrap();
        assert_eq!(coupling_flags_at(&modes, 0, 0.5), vec![true]);
    }

    #[test]
    fn far_detuned_gap_states_ignore_vq() {
        let params = presets::fig1();
        let a = sweep_qubit_energy(&params, &[1e4], true).unwrap();
        let b = sweep_qubit_energy(&params, &[-1e4], true).unwrap();
        assert_eq!(a[0].modes.len(), b[0].modes.len());
        for (x, y) in a[0].modes.iter().zip(&b[0].modes) {
            assert!((x.energy.re - y.energy.re).abs() < 0.1);
        }
        assert!(sweep_qubit_energy(&params, &[], true).is_err());
    }

    #[test]
    fn fig1_sweep_shows_anticrossing_in_gap() {
        let params = presets::fig1();
        let grid: Vec<f64> = (0..=300).map(|i| -150.0 + i as f64).collect();
        let (lo, hi) = gap_edges(&params).unwrap();
        let (vq, split) = min_anticrossing(&params, &grid).unwrap();
        assert!(lo < vq && vq < hi, "minimum at {vq}");
        assert!(split > 1.0 && split < hi - lo);
    }

    #[test]
    fn branches_are_continuous() {
        let params = presets::fig1();
        let grid: Vec<f64> = (0..=200).map(|i| -100.0 + i as f64).collect();
        let branches = track_branches(&params, &grid).unwrap();
        for b in &branches {
            for w in b.windows(2) {
                assert!((w[1] - w[0]).abs() < 5.0);
            }
        }
    }

    #[test]
    fn surrogate_tracks_full_chain_anticrossing() {
        // The 4-site reduction lands within 25% of the full chain for the
        // fitted device (measured: 34.5 vs 28.0 MHz).
        let params = presets::fig3();
        let (lo, hi) = gap_edges(&params).unwrap();
        let grid: Vec<f64> = (0..=400).map(|i| lo + (hi - lo) * i as f64 / 400.0).collect();
        let (_, full) = min_anticrossing(&params, &grid).unwrap();
        let mut sur = f64::INFINITY;
        for &vq in &grid {
            let m = three_site_surrogate(&params.with_vq(vq));
            let modes = eigenmodes_of(&m, true, Some(3), Some(1)).unwrap();
            sur = sur.min(qubit_pair_splitting(&modes));
        }
        assert!((full - sur).abs() / full < 0.25, "full {full} surrogate {sur}");
    }

    #[test]
    fn csv_header_and_rows() {
        let pts = sweep_qubit_energy(&presets::fig1(), &[-37.5, 37.5], true).unwrap();
        let csv = sweep_csv(&pts);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "VQ_MHz,mode_index,re_E_MHz,im_E_MHz,qubit_weight,central_weight,in_gap"
        );
        assert_eq!(lines.count(), 4);
    }
}
