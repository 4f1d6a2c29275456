//! Rice-Mele waveguide with a central defect site and a side-coupled qubit.
//!
//! Two Rice-Mele half-chains of `2p + 1` sites each are joined through a
//! central site `M`. The qubit hangs off `M` and is stored as the last basis
//! state. All site indices in [`SiteRoles`] are 1-based; matrix access goes
//! through [`SiteRoles::idx`].
//!
//! Layout for `p = 1` (8 sites):
//!
//! ```text
//!  1 ==t2== 2 --t1-- 3 --t1-- 4 --t1-- 5 --t1-- 6 ==t2== 7
//! -V       +V       -V       VM       +V       -V       +V
//!                            |
//!                            tQ
//!                            |
//!                            8 (qubit, VQ)
//! ```

use std::fmt::Write as _;

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular conversion for linear frequencies in MHz acting over ns.
pub const RAD_PER_NS_PER_MHZ: f64 = 2.0 * std::f64::consts::PI * 1e-3;

/// Hamiltonian and port parameters. Energies are linear frequencies in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Strongly-coupled pairs per half-chain.
    pub p: usize,
    /// On-site modulation amplitude.
    pub v: f64,
    /// Weak tunnel coupling.
    pub t1: f64,
    /// Strong tunnel coupling.
    pub t2: f64,
    /// Qubit to central-site coupling.
    pub tq: f64,
    /// Qubit energy.
    pub vq: f64,
    /// Central-site energy.
    pub vm: f64,
    /// Wide-band self-energy of the left port.
    pub sigma_l: Complex64,
    /// Wide-band self-energy of the right port.
    pub sigma_r: Complex64,
    /// Global frequency offset between model and lab frequencies.
    pub f0: f64,
    /// Intrinsic qubit linewidth (loss outside the ports), applied with the
    /// port self-energies as `−iκ/2` on the qubit site.
    #[serde(default)]
    pub kappa_q: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            p: 1,
            v: 0.0,
            t1: 0.0,
            t2: 0.0,
            tq: 0.0,
            vq: 0.0,
            vm: 0.0,
            sigma_l: Complex64::new(0.0, 0.0),
            sigma_r: Complex64::new(0.0, 0.0),
            f0: 0.0,
            kappa_q: 0.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.p < 1 {
            return Err(Error::param("p must be >= 1"));
        }
        let reals = [
            ("V", self.v),
            ("t1", self.t1),
            ("t2", self.t2),
            ("tQ", self.tq),
            ("VQ", self.vq),
            ("VM", self.vm),
            ("f0", self.f0),
            ("sigmaL_re", self.sigma_l.re),
            ("sigmaL_im", self.sigma_l.im),
            ("sigmaR_re", self.sigma_r.re),
            ("sigmaR_im", self.sigma_r.im),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, x)| !x.is_finite()) {
            return Err(Error::param(format!("{name} is not finite")));
        }
        for (name, t) in [("t1", self.t1), ("t2", self.t2), ("tQ", self.tq), ("kappaQ", self.kappa_q)] {
            if t < 0.0 {
                return Err(Error::param(format!("{name} must be >= 0, got {t}")));
            }
        }
        if self.sigma_l.im > 0.0 || self.sigma_r.im > 0.0 {
            return Err(Error::param("port self-energies must have Im <= 0"));
        }
        Ok(())
    }

    /// Both ports set to the same self-energy.
    pub fn with_ports(mut self, sigma: Complex64) -> Self {
        self.sigma_l = sigma;
        self.sigma_r = sigma;
        self
    }

    pub fn with_vq(mut self, vq: f64) -> Self {
        self.vq = vq;
        self
    }

    pub fn roles(&self) -> Result<SiteRoles> {
        site_roles(self.p)
    }

    /// Port linewidths `(Γ_L, Γ_R) = (-2 Im Σ_L, -2 Im Σ_R)`.
    pub fn port_widths(&self) -> (f64, f64) {
        (-2.0 * self.sigma_l.im, -2.0 * self.sigma_r.im)
    }

    /// Serialize as the flat `key = value` config format.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "p = {}", self.p);
        for (k, x) in self.config_reals() {
            let _ = writeln!(s, "{k} = {x:?}");
        }
        s
    }

    fn config_reals(&self) -> [(&'static str, f64); 12] {
        [
            ("V", self.v),
            ("t1", self.t1),
            ("t2", self.t2),
            ("tQ", self.tq),
            ("VQ", self.vq),
            ("VM", self.vm),
            ("sigmaL_re", self.sigma_l.re),
            ("sigmaL_im", self.sigma_l.im),
            ("sigmaR_re", self.sigma_r.re),
            ("sigmaR_im", self.sigma_r.im),
            ("f0", self.f0),
            ("kappaQ", self.kappa_q),
        ]
    }

    /// Parse the flat `key = value` format. Blank lines and `#` comments are
    /// ignored, unknown keys are rejected, missing keys keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut params = ModelParams::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = parse_kv(line, lineno + 1)?;
            params.set(key, value, lineno + 1)?;
        }
        params.validate()?;
        Ok(params)
    }

    /// Set one config key. Used by the flat parser and by CLI overrides.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let parse_err = |m: String| Error::Parse { line, message: m };
        if key == "p" {
            self.p = value
                .parse()
                .map_err(|_| parse_err(format!("p must be a positive integer, got {value:?}")))?;
            return Ok(());
        }
        let x: f64 = value
            .parse()
            .map_err(|_| parse_err(format!("{key} must be a decimal number, got {value:?}")))?;
        match key {
            "V" => self.v = x,
            "t1" => self.t1 = x,
            "t2" => self.t2 = x,
            "tQ" => self.tq = x,
            "VQ" => self.vq = x,
            "VM" => self.vm = x,
            "sigmaL_re" => self.sigma_l.re = x,
            "sigmaL_im" => self.sigma_l.im = x,
            "sigmaR_re" => self.sigma_r.re = x,
            "sigmaR_im" => self.sigma_r.im = x,
            "f0" => self.f0 = x,
            "kappaQ" => self.kappa_q = x,
            _ => return Err(parse_err(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}

/// Split one `key = value` line.
pub fn parse_kv(line: &str, lineno: usize) -> Result<(&str, &str)> {
    let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
        line: lineno,
        message: format!("expected `key = value`, got {line:?}"),
    })?;
    Ok((k.trim(), v.trim()))
}

/// Named sites of the canonical layout (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteRoles {
    pub dim: usize,
    pub port_l: usize,
    pub port_r: usize,
    pub m: usize,
    pub nl: usize,
    pub nr: usize,
    pub q: usize,
}

impl SiteRoles {
    /// 0-based matrix index of a 1-based site.
    #[inline]
    pub fn idx(site: usize) -> usize {
        site - 1
    }

    /// 0-based range of the left half-chain (sites 1..=NL).
    pub fn left(&self) -> std::ops::Range<usize> {
        0..self.nl
    }

    /// 0-based range of the right half-chain (sites NR..=portR).
    pub fn right(&self) -> std::ops::Range<usize> {
        Self::idx(self.nr)..self.port_r
    }
}

pub fn site_roles(p: usize) -> Result<SiteRoles> {
    if p < 1 {
        return Err(Error::param("p must be >= 1"));
    }
    let m = 2 * p + 2;
    Ok(SiteRoles {
        dim: 4 * p + 4,
        port_l: 1,
        port_r: 4 * p + 3,
        m,
        nl: m - 1,
        nr: m + 1,
        q: 4 * p + 4,
    })
}

/// Real on-site energies and bonds `(i, j, t)` (0-based, `i < j`) of the
/// port-free lattice. Each bond enters the matrix as `-t`.
pub(crate) fn lattice(params: &ModelParams, roles: &SiteRoles) -> (Vec<f64>, Vec<(usize, usize, f64)>) {
    let p = params.p;
    let v = params.v;
    let mut diag = vec![0.0; roles.dim];
    let mut bonds = Vec::with_capacity(roles.dim);

    // left half-chain, sites 1..=2p+1, odd sites at -V
    for site in 1..=roles.nl {
        diag[site - 1] = if site % 2 == 1 { -v } else { v };
    }
    for l in 1..=p {
        bonds.push((2 * l - 2, 2 * l - 1, params.t2));
        bonds.push((2 * l - 1, 2 * l, params.t1));
    }

    let (nl, m, nr) = (roles.nl - 1, roles.m - 1, roles.nr - 1);
    diag[m] = params.vm;
    diag[nr] = v;
    bonds.push((nl, m, params.t1));
    bonds.push((m, nr, params.t1));
    bonds.push((nr, nr + 1, params.t1));

    // right half-chain body, sites NR+1..=portR, starting at -V
    let start = nr + 1;
    for k in 0..2 * p {
        diag[start + k] = if k % 2 == 0 { -v } else { v };
    }
    for l in 0..p {
        bonds.push((start + 2 * l, start + 2 * l + 1, params.t2));
        if l + 1 < p {
            bonds.push((start + 2 * l + 1, start + 2 * l + 2, params.t1));
        }
    }

    let q = roles.q - 1;
    diag[q] = params.vq;
    bonds.push((m, q, params.tq));
    (diag, bonds)
}

/// Dense Hamiltonian together with its site labels.
#[derive(Debug, Clone)]
pub struct LabeledHamiltonian {
    pub matrix: Mat<Complex64>,
    pub roles: SiteRoles,
    /// True iff no port self-energies were added.
    pub hermitian: bool,
}

impl LabeledHamiltonian {
    pub fn dim(&self) -> usize {
        self.roles.dim
    }
}

pub fn build_hamiltonian(params: &ModelParams, include_ports: bool) -> Result<LabeledHamiltonian> {
    params.validate()?;
    let roles = params.roles()?;
    let (diag, bonds) = lattice(params, &roles);
    let n = roles.dim;
    let mut matrix = Mat::<Complex64>::zeros(n, n);
    for (i, e) in diag.iter().enumerate() {
        matrix[(i, i)] = Complex64::new(*e, 0.0);
    }
    for &(i, j, t) in &bonds {
        matrix[(i, j)] = Complex64::new(-t, 0.0);
        matrix[(j, i)] = Complex64::new(-t, 0.0);
    }
    if include_ports {
        matrix[(0, 0)] += params.sigma_l;
        let r = SiteRoles::idx(roles.port_r);
        matrix[(r, r)] += params.sigma_r;
        let q = SiteRoles::idx(roles.q);
        matrix[(q, q)] += Complex64::new(0.0, -0.5 * params.kappa_q);
    }
    Ok(LabeledHamiltonian {
        matrix,
        roles,
        hermitian: !include_ports,
    })
}

/// Port-free Hamiltonian as a dense row-major real matrix.
pub fn build_real_hamiltonian(params: &ModelParams) -> Result<(Vec<f64>, SiteRoles)> {
    params.validate()?;
    let roles = params.roles()?;
    Ok((real_matrix_unchecked(params, &roles), roles))
}

pub(crate) fn real_matrix_unchecked(params: &ModelParams, roles: &SiteRoles) -> Vec<f64> {
    let (diag, bonds) = lattice(params, roles);
    let n = roles.dim;
    let mut a = vec![0.0; n * n];
    for (i, e) in diag.iter().enumerate() {
        a[i * n + i] = *e;
    }
    for &(i, j, t) in &bonds {
        a[i * n + j] = -t;
        a[j * n + i] = -t;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: usize) -> ModelParams {
        ModelParams {
            p,
            v: 40.0,
            t1: 230.0,
            t2: 280.0,
            tq: 130.0,
            vq: 12.0,
            vm: 590.0,
            ..Default::default()
        }
    }

    #[test]
    fn roles_examples() {
        let r = site_roles(4).unwrap();
        assert_eq!((r.m, r.nl, r.nr, r.q, r.dim), (10, 9, 11, 20, 20));
        let r = site_roles(1).unwrap();
        assert_eq!((r.m, r.nl, r.nr, r.port_r, r.q, r.dim), (4, 3, 5, 7, 8, 8));
        let r = site_roles(10).unwrap();
        assert_eq!((r.m, r.q, r.dim), (22, 44, 44));
        assert!(matches!(site_roles(0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn roles_are_ordered() {
        for p in 1..=12 {
            let r = site_roles(p).unwrap();
            assert!(r.port_l < r.nl && r.nl < r.m && r.m < r.nr && r.nr < r.port_r && r.port_r < r.q);
            assert_eq!(r.dim, r.q);
        }
    }

    #[test]
    fn p1_diagonal_matches_hand_enumeration() {
        let mut pr = params(1);
        pr.v = 1.0;
        pr.vm = 5.0;
        pr.vq = 7.0;
        let h = build_hamiltonian(&pr, false).unwrap();
        let d: Vec<f64> = (0..8).map(|i| h.matrix[(i, i)].re).collect();
        assert_eq!(d, vec![-1.0, 1.0, -1.0, 5.0, 1.0, -1.0, 1.0, 7.0]);
    }

    #[test]
    fn hermitian_without_ports_is_exact() {
        let h = build_hamiltonian(&params(4), false).unwrap();
        let n = h.dim();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(h.matrix[(i, j)], h.matrix[(j, i)].conj());
            }
        }
        assert!(h.hermitian);
    }

    #[test]
    fn ports_land_on_chain_ends() {
        let pr = params(3).with_ports(Complex64::new(0.5, -18.0));
        let h = build_hamiltonian(&pr, true).unwrap();
        assert!(!h.hermitian);
        assert_eq!(h.matrix[(0, 0)], Complex64::new(-40.0 + 0.5, -18.0));
        let r = SiteRoles::idx(h.roles.port_r);
        assert_eq!(h.matrix[(r, r)], Complex64::new(40.0 + 0.5, -18.0));
    }

    #[test]
    fn bond_census_by_matrix_scan() {
        // distinct couplings so each class can be told apart from the matrix alone
        for p in 1..=10 {
            let pr = ModelParams {
                p,
                v: 3.0,
                t1: 1.25,
                t2: 2.5,
                tq: 0.75,
                ..Default::default()
            };
            let h = build_hamiltonian(&pr, false).unwrap();
            let n = h.dim();
            let (mut c1, mut c2, mut cq, mut other) = (0, 0, 0, 0);
            for i in 0..n {
                for j in i + 1..n {
                    let x = h.matrix[(i, j)].re;
                    if x == 0.0 {
                        continue;
                    }
                    match x {
                        x if x == -1.25 => c1 += 1,
                        x if x == -2.5 => c2 += 1,
                        x if x == -0.75 => cq += 1,
                        _ => other += 1,
                    }
                    let nearest = j == i + 1 && j < n - 1;
                    let qubit = (i, j) == (h.roles.m - 1, n - 1);
                    assert!(nearest || qubit, "unexpected bond ({i},{j}) for p={p}");
                }
            }
            assert_eq!((c2, c1, cq, other), (2 * p, 2 * p + 2, 1, 0), "p={p}");
            assert_eq!(c1 + c2, 4 * p + 2);
        }
    }

    #[test]
    fn mirror_asymmetry_of_the_diagonal() {
        let h = build_hamiltonian(&params(3), false).unwrap();
        let r = h.roles;
        let left: Vec<f64> = r.left().map(|i| h.matrix[(i, i)].re).collect();
        let mut right: Vec<f64> = r.right().map(|i| h.matrix[(i, i)].re).collect();
        right.reverse();
        assert_ne!(left, right);
        let flipped: Vec<f64> = right.iter().map(|x| -x).collect();
        assert_eq!(left, flipped);

        let mut sym = params(3);
        sym.v = 0.0;
        let h = build_hamiltonian(&sym, false).unwrap();
        let left: Vec<f64> = r.left().map(|i| h.matrix[(i, i)].re).collect();
        let mut right: Vec<f64> = r.right().map(|i| h.matrix[(i, i)].re).collect();
        right.reverse();
        assert_eq!(left, right);
    }

    #[test]
    fn rejects_active_ports_and_negative_couplings() {
        let mut pr = params(2);
        pr.sigma_l = Complex64::new(0.0, 1.0);
        assert!(build_hamiltonian(&pr, true).is_err());
        let mut pr = params(2);
        pr.t1 = -1.0;
        assert!(pr.validate().is_err());
        let mut pr = params(2);
        pr.p = 0;
        assert!(matches!(pr.validate(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn config_round_trip_and_errors() {
        let mut pr = params(4).with_ports(Complex64::new(0.0, -18.0));
        pr.f0 = 7123.5;
        pr.kappa_q = 0.8;
        let text = pr.to_config_string();
        assert_eq!(ModelParams::from_config_str(&text).unwrap(), pr);

        let text = "# comment\np = 2\n\nV = 1.5 # trailing\nbogus = 3\n";
        match ModelParams::from_config_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ModelParams::from_config_str("t1 = abc"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
