//! Composite Hilbert spaces of target/control atoms, operator embedding and
//! Hamiltonian assembly.
//!
//! Levels are labelled 1, 2, 3 as in the usual ladder scheme (`|3⟩` is the
//! Rydberg state). Three-level sites store them at local indices 0, 1, 2.
//! Two-level control sites keep only `{|1⟩, |3⟩}` at local indices 0 and 1,
//! so `σ₃₁` is the raising operator of the two-dimensional site.
//!
//! Tensor ordering: site 0 is the slowest-varying factor, i.e. the basis
//! index of `|l₀ l₁ … l_{N-1}⟩` is `Σ_k idx(l_k) · stride_k` with
//! `stride_{N-1} = 1`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};
use crate::linalg::{hermiticity_defect, identity, kron, CMatrix, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Target,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveScheme {
    #[default]
    OnePhoton,
    TwoPhoton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSite {
    pub level_count: usize,
    pub role: Role,
    /// μm
    pub position: [f64; 3],
    pub drive_scheme: DriveScheme,
}

impl AtomSite {
    pub fn target(position: [f64; 3]) -> Self {
        AtomSite { level_count: 3, role: Role::Target, position, drive_scheme: DriveScheme::OnePhoton }
    }

    pub fn control(position: [f64; 3], scheme: DriveScheme) -> Self {
        let level_count = match scheme {
            DriveScheme::OnePhoton => 2,
            DriveScheme::TwoPhoton => 3,
        };
        AtomSite { level_count, role: Role::Control, position, drive_scheme: scheme }
    }

    fn validate(&self) -> Result<()> {
        if !(self.level_count == 2 || self.level_count == 3) {
            return Err(FitError::Config(format!("level_count must be 2 or 3, got {}", self.level_count)));
        }
        if self.drive_scheme == DriveScheme::TwoPhoton && self.level_count != 3 {
            return Err(FitError::Config("two-photon drive scheme needs a three-level site".into()));
        }
        if self.role == Role::Target && self.level_count != 3 {
            return Err(FitError::Config("target sites are three-level ladders".into()));
        }
        Ok(())
    }

    /// Local basis index of atomic level 1, 2 or 3, if the site has it.
    pub fn index_of(&self, level: usize) -> Option<usize> {
        match (self.level_count, level) {
            (3, 1..=3) => Some(level - 1),
            (2, 1) => Some(0),
            (2, 3) => Some(1),
            _ => None,
        }
    }

    /// Local transition operator `σ_ab = |a⟩⟨b|`.
    pub fn sigma(&self, a: usize, b: usize) -> Result<CMatrix> {
        let (ia, ib) = match (self.index_of(a), self.index_of(b)) {
            (Some(ia), Some(ib)) => (ia, ib),
            _ => {
                return Err(FitError::Config(format!(
                    "level pair ({a},{b}) not present on a {}-level site",
                    self.level_count
                )))
            }
        };
        let mut m = Array2::zeros((self.level_count, self.level_count));
        m[[ia, ib]] = C64::new(1.0, 0.0);
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSpace {
    sites: Vec<AtomSite>,
    strides: Vec<usize>,
    total_dim: usize,
}

impl CompositeSpace {
    pub fn new(sites: Vec<AtomSite>) -> Result<Self> {
        if sites.is_empty() {
            return Err(FitError::Config("a composite space needs at least one site".into()));
        }
        for s in &sites {
            s.validate()?;
        }
        let mut strides = vec![1; sites.len()];
        for k in (0..sites.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * sites[k + 1].level_count;
        }
        let total_dim = sites.iter().map(|s| s.level_count).product();
        Ok(CompositeSpace { sites, strides, total_dim })
    }

    /// Target at the origin, control a distance `d` away along x.
    pub fn two_atom(d: f64, control_scheme: DriveScheme) -> Result<Self> {
        Self::new(vec![AtomSite::target([0.0; 3]), AtomSite::control([d, 0.0, 0.0], control_scheme)])
    }

    pub fn sites(&self) -> &[AtomSite] {
        &self.sites
    }

    pub fn site(&self, k: usize) -> &AtomSite {
        &self.sites[k]
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn stride(&self, k: usize) -> usize {
        self.strides[k]
    }

    /// Local index of site `k` inside global basis index `i`.
    pub fn local_index(&self, i: usize, k: usize) -> usize {
        (i / self.strides[k]) % self.sites[k].level_count
    }

    /// Global basis index of a product state given one level label per site.
    pub fn basis_index(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.sites.len() {
            return Err(FitError::Dimension { expected: self.sites.len(), got: levels.len() });
        }
        let mut idx = 0;
        for (k, (&lvl, site)) in levels.iter().zip(&self.sites).enumerate() {
            let li = site
                .index_of(lvl)
                .ok_or_else(|| FitError::Config(format!("site {k} has no level {lvl}")))?;
            idx += li * self.strides[k];
        }
        Ok(idx)
    }

    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.sites.iter().enumerate().filter(|(_, s)| s.role == Role::Target).map(|(k, _)| k)
    }

    pub fn controls(&self) -> impl Iterator<Item = usize> + '_ {
        self.sites.iter().enumerate().filter(|(_, s)| s.role == Role::Control).map(|(k, _)| k)
    }

    /// `σ_ab` of site `k`, embedded.
    pub fn sigma(&self, k: usize, a: usize, b: usize) -> Result<CMatrix> {
        let local = self.sites.get(k).ok_or(FitError::Dimension { expected: self.sites.len(), got: k })?.sigma(a, b)?;
        embed_operator(self, k, &local)
    }
}

/// `I ⊗ … ⊗ local ⊗ … ⊗ I` with `local` acting on site `site_index`.
pub fn embed_operator(space: &CompositeSpace, site_index: usize, local: &CMatrix) -> Result<CMatrix> {
    let site = space
        .sites
        .get(site_index)
        .ok_or(FitError::Dimension { expected: space.sites.len(), got: site_index })?;
    if local.nrows() != site.level_count || local.ncols() != site.level_count {
        return Err(FitError::Dimension { expected: site.level_count, got: local.nrows() });
    }
    let left: usize = space.sites[..site_index].iter().map(|s| s.level_count).product();
    let right = space.strides[site_index];
    Ok(kron(&kron(&identity(left), local), &identity(right)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPhotonParams {
    pub omega_c1: f64,
    pub omega_c2: f64,
    /// Intermediate-state detuning Δ.
    pub delta: f64,
}

impl TwoPhotonParams {
    /// Effective two-photon Rabi frequency `Ω_c1 Ω_c2 / (2Δ)`.
    pub fn effective_rabi(&self) -> f64 {
        self.omega_c1 * self.omega_c2 / (2.0 * self.delta)
    }
}

/// Drive parameters, all in units of Γ₁₂ᴬ. Missing fields deserialize to the
/// reference drive (Ω_p = 0.5, Ω = Ω_c = 5, Δ_c = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveParams {
    pub omega_p: f64,
    pub omega: f64,
    pub omega_c: f64,
    pub delta_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_photon: Option<TwoPhotonParams>,
}

impl Default for DriveParams {
    fn default() -> Self {
        DriveParams::new(0.5, 5.0, 5.0, 0.0)
    }
}

impl DriveParams {
    pub fn new(omega_p: f64, omega: f64, omega_c: f64, delta_c: f64) -> Self {
        DriveParams { omega_p, omega, omega_c, delta_c, two_photon: None }
    }

    pub fn with_delta_c(mut self, delta_c: f64) -> Self {
        self.delta_c = delta_c;
        self
    }

    pub fn with_omega_p(mut self, omega_p: f64) -> Self {
        self.omega_p = omega_p;
        self
    }

    fn validate(&self) -> Result<()> {
        let all = [self.omega_p, self.omega, self.omega_c, self.delta_c];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(FitError::Config("drive parameters must be finite".into()));
        }
        if let Some(tp) = &self.two_photon {
            if tp.delta == 0.0 {
                return Err(FitError::Config("two-photon intermediate detuning must be non-zero".into()));
            }
        }
        Ok(())
    }
}

/// Rydberg–Rydberg interactions: van der Waals from geometry unless a pair
/// value is given explicitly.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InteractionSpec {
    /// Γ₁₂ᴬ·μm⁶
    pub c6: f64,
    /// Explicit `V_jl` (Γ units) for unordered site pairs.
    #[serde(default)]
    pub pair_overrides: Vec<PairOverride>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOverride {
    pub sites: (usize, usize),
    pub v: f64,
}

impl InteractionSpec {
    pub fn with_pair(mut self, j: usize, l: usize, v: f64) -> Self {
        self.pair_overrides.push(PairOverride { sites: (j, l), v });
        self
    }

    /// Two-site system with `V_AB` given directly.
    pub fn two_atom(v_ab: f64) -> Self {
        InteractionSpec::default().with_pair(0, 1, v_ab)
    }

    pub fn pair_value(&self, space: &CompositeSpace, j: usize, l: usize) -> Result<f64> {
        if let Some(o) = self
            .pair_overrides
            .iter()
            .rev()
            .find(|o| o.sites == (j, l) || o.sites == (l, j))
        {
            return Ok(o.v);
        }
        if self.c6 == 0.0 {
            return Ok(0.0);
        }
        let (a, b) = (space.site(j).position, space.site(l).position);
        let r2: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum();
        if r2 == 0.0 {
            return Err(FitError::SingularGeometry);
        }
        Ok(-self.c6 / r2.powi(3))
    }
}

/// van der Waals pair energy between excitations separated by `delta_z`
/// along the channels and `d` across them: `-C₆ / (Δz² + d²)³`.
pub fn pair_potential(delta_z: f64, d: f64, c6: f64) -> Result<f64> {
    let r2 = delta_z * delta_z + d * d;
    if r2 == 0.0 {
        return Err(FitError::SingularGeometry);
    }
    Ok(-c6 / (r2 * r2 * r2))
}

/// Probe-independent part of the Hamiltonian plus the embedded `σ₂₁` of each
/// target, so callers can rebuild `H` for a complex probe amplitude cheaply.
#[derive(Debug, Clone)]
pub struct HamiltonianParts {
    pub static_part: CMatrix,
    pub probe_raising: Vec<CMatrix>,
}

impl HamiltonianParts {
    /// `H = H_static − Σ_targets [(Ω_p/2) σ₂₁ + h.c.]` for complex `Ω_p`.
    pub fn with_probe(&self, omega_p: C64) -> CMatrix {
        let mut h = self.static_part.clone();
        for s21 in &self.probe_raising {
            for ((i, j), &s) in s21.indexed_iter() {
                if s != ZERO {
                    h[[i, j]] -= omega_p * 0.5;
                    h[[j, i]] -= omega_p.conj() * 0.5;
                }
            }
        }
        h
    }
}

pub fn hamiltonian_parts(space: &CompositeSpace, drive: &DriveParams, interaction: &InteractionSpec) -> Result<HamiltonianParts> {
    drive.validate()?;
    let n = space.total_dim();
    let mut h: CMatrix = Array2::zeros((n, n));
    let half = |x: f64| C64::new(0.5 * x, 0.0);
    let mut probe_raising = Vec::new();

    let add_coupling = |h: &mut CMatrix, k: usize, upper: usize, lower: usize, rabi: f64| -> Result<()> {
        if rabi == 0.0 {
            return Ok(());
        }
        let raise = space.sigma(k, upper, lower)?;
        let lower_op = space.sigma(k, lower, upper)?;
        *h -= &(raise * half(rabi));
        *h -= &(lower_op * half(rabi));
        Ok(())
    };

    for (k, site) in space.sites().iter().enumerate() {
        match (site.role, site.drive_scheme) {
            (Role::Target, _) => {
                probe_raising.push(space.sigma(k, 2, 1)?);
                add_coupling(&mut h, k, 3, 2, drive.omega)?;
            }
            (Role::Control, DriveScheme::OnePhoton) => {
                add_coupling(&mut h, k, 3, 1, drive.omega_c)?;
                h += &(space.sigma(k, 3, 3)? * C64::new(drive.delta_c, 0.0));
            }
            (Role::Control, DriveScheme::TwoPhoton) => {
                let tp = drive.two_photon.ok_or_else(|| {
                    FitError::Config(format!("site {k} uses the two-photon scheme but no two_photon parameters were given"))
                })?;
                add_coupling(&mut h, k, 2, 1, tp.omega_c1)?;
                add_coupling(&mut h, k, 3, 2, tp.omega_c2)?;
                h += &(space.sigma(k, 2, 2)? * C64::new(tp.delta, 0.0));
                h += &(space.sigma(k, 3, 3)? * C64::new(drive.delta_c, 0.0));
            }
        }
    }

    for j in 0..space.len() {
        for l in j + 1..space.len() {
            let v = interaction.pair_value(space, j, l)?;
            if v == 0.0 {
                continue;
            }
            let p = space.sigma(j, 3, 3)?.dot(&space.sigma(l, 3, 3)?);
            h += &(p * C64::new(v, 0.0));
        }
    }
    Ok(HamiltonianParts { static_part: h, probe_raising })
}

/// Full Hamiltonian for a real probe Rabi frequency `drive.omega_p`.
pub fn build_hamiltonian(space: &CompositeSpace, drive: &DriveParams, interaction: &InteractionSpec) -> Result<CMatrix> {
    let parts = hamiltonian_parts(space, drive, interaction)?;
    let h = parts.with_probe(C64::new(drive.omega_p, 0.0));
    debug_assert!(hermiticity_defect(&h) < 1e-12);
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigh, max_abs};
    use ndarray::Array1;

    fn brute_kron_embed(dims: &[usize], site: usize, local: &CMatrix) -> CMatrix {
        // Enumerates product basis states explicitly.
        let n: usize = dims.iter().product();
        let digits = |mut i: usize| {
            let mut d = vec![0; dims.len()];
            for k in (0..dims.len()).rev() {
                d[k] = i % dims[k];
                i /= dims[k];
            }
            d
        };
        Array2::from_shape_fn((n, n), |(i, j)| {
            let (di, dj) = (digits(i), digits(j));
            if (0..dims.len()).any(|k| k != site && di[k] != dj[k]) {
                ZERO
            } else {
                local[[di[site], dj[site]]]
            }
        })
    }

    fn reference_drive(delta_c: f64) -> DriveParams {
        DriveParams::new(0.5, 5.0, 5.0, delta_c)
    }

    #[test]
    fn embed_identity_gives_identity() {
        let space = CompositeSpace::two_atom(5.0, DriveScheme::OnePhoton).unwrap();
        for k in 0..2 {
            let local = identity(space.site(k).level_count);
            assert_eq!(embed_operator(&space, k, &local).unwrap(), identity(6));
        }
    }

    #[test]
    fn embed_on_control_of_three_by_two() {
        let space = CompositeSpace::two_atom(5.0, DriveScheme::OnePhoton).unwrap();
        let local = Array2::from_diag(&Array1::from(vec![ZERO, C64::new(1.0, 0.0)]));
        let got = embed_operator(&space, 1, &local).unwrap();
        let expect: Vec<f64> = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(got[[i, i]].re, *e);
        }
        assert_eq!(got, brute_kron_embed(&[3, 2], 1, &local));
    }

    #[test]
    fn embed_matches_brute_force_three_sites() {
        let space = CompositeSpace::new(vec![
            AtomSite::target([0.0; 3]),
            AtomSite::target([1.0, 0.0, 0.0]),
            AtomSite::control([0.0, 1.0, 0.0], DriveScheme::OnePhoton),
        ])
        .unwrap();
        let local = Array2::from_shape_fn((3, 3), |(i, j)| C64::new(i as f64 + 1.0, j as f64 - 0.5));
        assert_eq!(embed_operator(&space, 1, &local).unwrap(), brute_kron_embed(&[3, 3, 2], 1, &local));
    }

    #[test]
    fn embed_rejects_wrong_dimension() {
        let space = CompositeSpace::two_atom(5.0, DriveScheme::OnePhoton).unwrap();
        assert!(matches!(embed_operator(&space, 1, &identity(3)), Err(FitError::Dimension { .. })));
    }

    #[test]
    fn different_site_embeddings_commute() {
        let space = CompositeSpace::two_atom(5.0, DriveScheme::OnePhoton).unwrap();
        let x = space.sigma(0, 2, 1).unwrap() + space.sigma(0, 3, 2).unwrap();
        let y = space.sigma(1, 3, 1).unwrap();
        let c = x.dot(&y) - y.dot(&x);
        assert_eq!(max_abs(&c), 0.0);
    }

    #[test]
    fn pair_potential_cases() {
        let (d, c6) = (6.0, 2.0e5);
        let v0 = pair_potential(0.0, d, c6).unwrap();
        assert_eq!(v0, -c6 / d.powi(6));
        assert!((pair_potential(d, d, c6).unwrap() - v0 / 8.0).abs() < 1e-15 * v0.abs());
        assert!(pair_potential(1e4, d, c6).unwrap().abs() < 1e-18);
        assert!(v0 < 0.0);
        assert_eq!(pair_potential(0.0, 0.0, c6), Err(FitError::SingularGeometry));
        assert_eq!(pair_potential(2.0, d, c6).unwrap(), pair_potential(-2.0, d, c6).unwrap());
    }

    #[test]
    fn reference_hamiltonian_is_hermitian_and_facilitated() {
        let space = CompositeSpace::two_atom(5.0, DriveScheme::OnePhoton).unwrap();
        let v = 15.0;
        let h = build_hamiltonian(&space, &reference_drive(-v), &InteractionSpec::two_atom(v)).unwrap();
        assert_eq!(h.dim(), (6, 6));
        assert!(hermiticity_defect(&h) < 1e-12);
        let i33 = space.basis_index(&[3, 3]).unwrap();
        assert_eq!(h[[i33, i33]].re, 0.0);
        let h = build_hamiltonian(&space, &reference_drive(2.0), &InteractionSpec::two_atom(v)).unwrap();
        assert_eq!(h[[i33, i33]].re, 2.0 + v);
        // Coupling signs.
        let i21 = space.basis_index(&[2, 1]).unwrap();
        let i11 = space.basis_index(&[1, 1]).unwrap();
        let i13 = space.basis_index(&[1, 3]).unwrap();
        assert_eq!(h[[i21, i11]].re, -0.25);
        assert_eq!(h[[i13, i11]].re, -2.5);
    }

    #[test]
    fn undriven_hamiltonian_is_diagonal_detuning() {
        let space = CompositeSpace::two_atom(5.0, DriveScheme::OnePhoton).unwrap();
        let h = build_hamiltonian(&space, &DriveParams::new(0.0, 0.0, 0.0, 1.5), &InteractionSpec::default()).unwrap();
        for ((i, j), z) in h.indexed_iter() {
            if i != j {
                assert_eq!(*z, ZERO);
            } else {
                let expect = if space.local_index(i, 1) == 1 { 1.5 } else { 0.0 };
                assert_eq!(z.re, expect);
            }
        }
    }

    #[test]
    fn two_photon_requires_parameters() {
        let space = CompositeSpace::two_atom(5.0, DriveScheme::TwoPhoton).unwrap();
        assert_eq!(space.total_dim(), 9);
        let drive = DriveParams::new(0.8, 4.0, 0.0, 0.0);
        assert!(matches!(
            build_hamiltonian(&space, &drive, &InteractionSpec::two_atom(5.0)),
            Err(FitError::Config(_))
        ));
        let drive = DriveParams { two_photon: Some(TwoPhotonParams { omega_c1: 0.8, omega_c2: 4.0, delta: 10.0 }), ..drive };
        let h = build_hamiltonian(&space, &drive, &InteractionSpec::two_atom(5.0)).unwrap();
        assert!(hermiticity_defect(&h) < 1e-12);
        let i12 = space.basis_index(&[1, 2]).unwrap();
        assert_eq!(h[[i12, i12]].re, 10.0);
        let zero_delta = DriveParams { two_photon: Some(TwoPhotonParams { omega_c1: 0.8, omega_c2: 4.0, delta: 0.0 }), ..drive };
        assert!(build_hamiltonian(&space, &zero_delta, &InteractionSpec::default()).is_err());
    }

    #[test]
    fn invalid_sites_rejected() {
        let mut s = AtomSite::control([0.0; 3], DriveScheme::TwoPhoton);
        s.level_count = 2;
        assert!(CompositeSpace::new(vec![s]).is_err());
        let mut t = AtomSite::target([0.0; 3]);
        t.level_count = 4;
        assert!(CompositeSpace::new(vec![t]).is_err());
    }

    #[test]
    fn geometry_interaction_from_c6() {
        let space = CompositeSpace::two_atom(2.0, DriveScheme::OnePhoton).unwrap();
        let spec = InteractionSpec { c6: -64.0 * 15.0, pair_overrides: vec![] };
        assert_eq!(spec.pair_value(&space, 0, 1).unwrap(), 15.0);
        assert_eq!(spec.pair_value(&space, 1, 0).unwrap(), 15.0);
        let spec = spec.with_pair(1, 0, 3.0);
        assert_eq!(spec.pair_value(&space, 0, 1).unwrap(), 3.0);
    }

    #[test]
    fn swapping_site_order_preserves_spectrum() {
        let drive = DriveParams::new(0.7, 4.0, 3.0, -2.0);
        let a = CompositeSpace::new(vec![AtomSite::target([0.0; 3]), AtomSite::control([6.0, 0.0, 0.0], DriveScheme::OnePhoton)]).unwrap();
        let b = CompositeSpace::new(vec![AtomSite::control([6.0, 0.0, 0.0], DriveScheme::OnePhoton), AtomSite::target([0.0; 3])]).unwrap();
        let spec = InteractionSpec { c6: -6f64.powi(6) * 12.0, pair_overrides: vec![] };
        let ea = eigh(&build_hamiltonian(&a, &drive, &spec).unwrap()).unwrap();
        let eb = eigh(&build_hamiltonian(&b, &drive, &spec).unwrap()).unwrap();
        for (x, y) in ea.values.iter().zip(&eb.values) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
