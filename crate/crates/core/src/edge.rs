//! Edge-state directionality measured from the central site.

use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{ModelParams, SiteRoles};
use crate::spectral::{classified_modes, gap_edges};

/// Below this the opposite-side population counts as zero.
pub const LEAKAGE_FLOOR: f64 = 1e-14;

/// A directionality ratio with an explicit infinity. Serializes as `null`
/// when infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Chi {
    Finite(f64),
    Infinite,
}

impl Chi {
    pub fn from_ratio(intended: f64, opposite: f64) -> Self {
        if opposite < LEAKAGE_FLOOR {
            Chi::Infinite
        } else {
            Chi::Finite(intended / opposite)
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Chi::Finite(x) => x,
            Chi::Infinite => f64::INFINITY,
        }
    }

    pub fn db(self) -> Chi {
        match self {
            Chi::Finite(x) => Chi::Finite(10.0 * x.log10()),
            Chi::Infinite => Chi::Infinite,
        }
    }

    /// `χ / (1 + χ)`, and 1 for infinite χ.
    pub fn fidelity(self) -> f64 {
        match self {
            Chi::Finite(x) => x / (1.0 + x),
            Chi::Infinite => 1.0,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Chi::Infinite)
    }
}

impl Serialize for Chi {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Chi::Finite(x) if x.is_finite() => s.serialize_f64(*x),
            _ => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionalityReport {
    pub pop_left: f64,
    pub pop_right: f64,
    #[serde(rename = "pop_M")]
    pub pop_m: f64,
    #[serde(rename = "pop_Q")]
    pub pop_q: f64,
    pub chi: Chi,
    #[serde(rename = "chi_dB")]
    pub chi_db: Chi,
    pub fidelity: f64,
}

/// Populations left and right of `M` (exclusive of `M` and the qubit) and
/// the directionality in `direction`.
pub fn directionality(mode: &[Complex64], roles: &SiteRoles, direction: Direction) -> Result<DirectionalityReport> {
    if mode.len() != roles.dim {
        return Err(Error::input(format!(
            "vector has {} entries, lattice has {}",
            mode.len(),
            roles.dim
        )));
    }
    let total: f64 = mode.iter().map(|a| a.norm_sqr()).sum();
    if !(total > 0.0) {
        return Err(Error::input("zero vector"));
    }
    let pop = |r: std::ops::Range<usize>| mode[r].iter().map(|a| a.norm_sqr()).sum::<f64>() / total;
    let pop_left = pop(roles.left());
    let pop_right = pop(roles.right());
    let pop_m = mode[SiteRoles::idx(roles.m)].norm_sqr() / total;
    let pop_q = mode[SiteRoles::idx(roles.q)].norm_sqr() / total;
    let (intended, opposite) = match direction {
        Direction::Left => (pop_left, pop_right),
        Direction::Right => (pop_right, pop_left),
    };
    let chi = Chi::from_ratio(intended, opposite);
    Ok(DirectionalityReport {
        pop_left,
        pop_right,
        pop_m,
        pop_q,
        chi,
        chi_db: chi.db(),
        fidelity: chi.fidelity(),
    })
}

/// Directionality of the qubit-dominant in-gap eigenstate of the closed model.
pub fn gap_state_report(params: &ModelParams, direction: Direction) -> Result<DirectionalityReport> {
    let (modes, _) = classified_modes(params)?;
    let k = modes
        .qubit_dominant_in_gap()
        .ok_or_else(|| Error::NotFound(format!("no in-gap mode at VQ = {}", params.vq)))?;
    directionality(&modes.vector(k), &params.roles()?, direction)
}

const LOG_CHI_CAP: f64 = 700.0;

/// `ln χ` of the qubit-dominant in-gap state, capped so infinity compares.
fn log_chi(params: &ModelParams, vq: f64, direction: Direction) -> Option<f64> {
    let r = gap_state_report(&params.with_vq(vq), direction).ok()?;
    Some(match r.chi {
        Chi::Infinite => LOG_CHI_CAP,
        Chi::Finite(x) if x > 0.0 => x.ln().min(LOG_CHI_CAP),
        Chi::Finite(_) => -LOG_CHI_CAP,
    })
}

fn maximize_in_gap(params: &ModelParams, direction: Direction, lo: f64, hi: f64) -> Result<f64> {
    const STEPS: usize = 400;
    let h = (hi - lo) / STEPS as f64;
    let mut best: Option<(f64, f64)> = None;
    for i in 1..STEPS {
        let vq = lo + h * i as f64;
        if let Some(f) = log_chi(params, vq, direction) {
            if best.map_or(true, |(_, b)| f > b) {
                best = Some((vq, f));
            }
        }
    }
    let (x0, f0) = best.ok_or_else(|| Error::NotFound("no in-gap state over the scan range".into()))?;
    if f0 >= LOG_CHI_CAP {
        return Ok(x0);
    }
    // golden-section refinement inside the neighbouring grid cells
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (x0 - h, x0 + h);
    let f = |x: f64| log_chi(params, x, direction).unwrap_or(-LOG_CHI_CAP);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if fc >= LOG_CHI_CAP {
            return Ok(c);
        }
        if fd >= LOG_CHI_CAP {
            return Ok(d);
        }
    }
    Ok(0.5 * (a + b))
}

/// Qubit energies `(VQ_left, VQ_right)` that maximize the leftward and
/// rightward directionality of the qubit-dominant in-gap state.
pub fn working_points(params: &ModelParams) -> Result<(f64, f64)> {
    if params.v == 0.0 {
        return Err(Error::param("V = 0 has no preferred direction"));
    }
    let (lo, hi) = gap_edges(params)?;
    Ok((
        maximize_in_gap(params, Direction::Left, lo, hi)?,
        maximize_in_gap(params, Direction::Right, lo, hi)?,
    ))
}

/// Qubit energy between the two working points where the qubit-dominant
/// in-gap state changes its preferred side: `χ = 1` when `χ` is continuous
/// there, otherwise the point where the qubit-dominant state hops between
/// the two mirror-image states (the ideal `VM = 0` chain does this at the
/// gap centre).
pub fn bidirectional_point(params: &ModelParams) -> Result<f64> {
    let (left, right) = working_points(params)?;
    let f = |vq: f64| {
        log_chi(params, vq, Direction::Left)
            .ok_or_else(|| Error::NotFound(format!("no in-gap mode at VQ = {vq}")))
    };
    let (mut a, mut b) = (left.min(right), left.max(right));
    let (mut fa, fb) = (f(a)?, f(b)?);
    if fa.signum() == fb.signum() {
        return Err(Error::NotBracketed(format!(
            "ln χ has the same sign at {a} ({fa}) and {b} ({fb})"
        )));
    }
    while b - a > 1e-6 {
        let mid = 0.5 * (a + b);
        let fm = f(mid)?;
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian, site_roles};
    use crate::presets;
    use crate::spectral::eigenmodes;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn symmetric_vector() {
        let roles = site_roles(1).unwrap();
        // 3 sites left, M, 3 sites right, Q
        let v: Vec<Complex64> = [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0].iter().map(|&x| c(x)).collect();
        let r = directionality(&v, &roles, Direction::Left).unwrap();
        assert_eq!(r.chi, Chi::Finite(1.0));
        assert_eq!(r.fidelity, 0.5);
        assert_eq!(r.chi_db, Chi::Finite(0.0));
    }

    #[test]
    fn zero_vector_is_rejected() {
        let roles = site_roles(1).unwrap();
        assert!(matches!(
            directionality(&[c(0.0); 8], &roles, Direction::Left),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn populations_sum_to_one() {
        let params = presets::fig3().with_vq(12.0);
        let h = build_hamiltonian(&params, false).unwrap();
        let modes = eigenmodes(&h).unwrap();
        for k in 0..modes.len() {
            let r = directionality(&modes.vector(k), &h.roles, Direction::Right).unwrap();
            assert!((r.pop_left + r.pop_right + r.pop_m + r.pop_q - 1.0).abs() < 1e-10);
            if let Chi::Finite(x) = r.chi {
                assert!((r.fidelity - x / (1.0 + x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fig1_edge_state_has_no_rightward_leakage() {
        let r = gap_state_report(&presets::fig1().with_vq(-37.5), Direction::Left).unwrap();
        assert!(r.pop_right < 1e-8, "{r:?}");
        assert!(r.chi.value() > 1e8);
        let r = gap_state_report(&presets::fig1().with_vq(37.5), Direction::Right).unwrap();
        assert!(r.pop_left < 1e-8, "{r:?}");
    }

    #[test]
    fn fig1_gap_centre_is_bidirectional() {
        // At VQ = 0 the two in-gap states have χ ≈ 6.0 and ≈ 1/6.0: both
        // leak substantially in both directions, mirror images of each other.
        let params = presets::fig1().with_vq(0.0);
        let (modes, gap) = classified_modes(&params).unwrap();
        let roles = params.roles().unwrap();
        assert_eq!(gap.in_gap_mode_indices.len(), 2);
        let chis: Vec<f64> = gap
            .in_gap_mode_indices
            .iter()
            .map(|&k| {
                let r = directionality(&modes.vector(k), &roles, Direction::Left).unwrap();
                assert!(r.pop_left > 0.05 && r.pop_right > 0.05, "{r:?}");
                r.chi.value()
            })
            .collect();
        assert!((chis[0] * chis[1] - 1.0).abs() < 1e-9);
        assert!((1.0 / 8.0..8.0).contains(&chis[0]));

        // the ideal chain switches sides at the gap centre
        let vq = bidirectional_point(&presets::fig1()).unwrap();
        assert!(vq.abs() < 1e-3, "{vq}");
    }

    #[test]
    fn fig1_working_points() {
        let (l, r) = working_points(&presets::fig1()).unwrap();
        assert!((l + 37.5).abs() < 0.5, "{l}");
        assert!((r - 37.5).abs() < 0.5, "{r}");
    }

    #[test]
    fn v0_has_no_working_point() {
        let mut params = presets::fig1();
        params.v = 0.0;
        assert!(matches!(working_points(&params), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn fitted_device_working_points_are_symmetric() {
        let params = presets::fig3();
        let (lo, hi) = gap_edges(&params).unwrap();
        let (l, r) = working_points(&params).unwrap();
        assert!(lo < l && l < hi && lo < r && r < hi);
        assert!(l < r);
        // symmetric about the band centre (0 for the Rice-Mele bands)
        assert!((l + r).abs() < 20.0, "{l} {r}");
    }

    #[test]
    fn chi_falls_off_around_the_working_point() {
        let params = presets::fig1();
        let mut last = f64::INFINITY;
        for step in 1..=10 {
            let x = gap_state_report(&params.with_vq(-37.5 - step as f64), Direction::Left)
                .unwrap()
                .chi
                .value();
            assert!(x < last);
            last = x;
        }
        let mut last = f64::INFINITY;
        for step in 1..=10 {
            let x = gap_state_report(&params.with_vq(-37.5 + step as f64), Direction::Left)
                .unwrap()
                .chi
                .value();
            assert!(x < last);
            last = x;
        }
    }

    #[test]
    fn bidirectional_point_balances_populations() {
        let params = presets::fig3();
        let vq = bidirectional_point(&params).unwrap();
        let r = gap_state_report(&params.with_vq(vq), Direction::Left).unwrap();
        assert!((r.chi.value() - 1.0).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn mirror_and_energy_flip_swap_directions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let base = ModelParams {
            p: 3,
            v: 30.0,
            t1: 100.0,
            t2: 160.0,
            tq: 50.0,
            ..Default::default()
        };
        let roles = base.roles().unwrap();
        for _ in 0..20 {
            let vq: f64 = rng.gen_range(-120.0..120.0);
            let a = eigenmodes(&build_hamiltonian(&base.with_vq(vq), false).unwrap()).unwrap();
            let b = eigenmodes(&build_hamiltonian(&base.with_vq(-vq), false).unwrap()).unwrap();
            let n = a.len();
            for k in 0..n {
                assert!((a.eigenvalues[k].re + b.eigenvalues[n - 1 - k].re).abs() < 1e-9);
                let ra = directionality(&a.vector(k), &roles, Direction::Left).unwrap();
                let rb = directionality(&b.vector(n - 1 - k), &roles, Direction::Left).unwrap();
                assert!((ra.pop_left - rb.pop_right).abs() < 1e-8);
                assert!((ra.pop_right - rb.pop_left).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn json_encodes_infinity_as_null() {
        let r = gap_state_report(&presets::fig1().with_vq(-37.5), Direction::Left).unwrap();
        let json = serde_json::to_value(r).unwrap();
        assert!(json["chi"].is_null());
        assert!(json["chi_dB"].is_null());
        assert_eq!(json["fidelity"], 1.0);
        for key in ["pop_left", "pop_right", "pop_M", "pop_Q"] {
            assert!(json[key].is_number());
        }
    }
}
