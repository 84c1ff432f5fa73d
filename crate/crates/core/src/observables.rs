//! Physical observables of stationary states and Δ_c sweeps.
//!
//! Conventions: reduced elements are `ρ_ab = Tr(ρ σ_ba)`, so `ρ₂₁ = ⟨2|ρ|1⟩`
//! of the target atom and `Im ρ₂₁ > 0` means absorption.

use std::f64::consts::TAU;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};
use crate::hilbert::{build_hamiltonian, AtomSite, CompositeSpace, DriveParams, DriveScheme, InteractionSpec, Role, TwoPhotonParams};
use crate::lindblad::{solve_steady_state, DecayRates, DensityMatrix, Liouvillian, SteadyStateOptions};
use crate::linalg::{CMatrix, CVector, C64, ZERO};

/// `Tr(ρ · op)`.
pub fn expectation(rho: &DensityMatrix, op: &CMatrix) -> Result<C64> {
    let m = rho.matrix();
    if op.dim() != m.dim() {
        return Err(FitError::Dimension { expected: m.nrows(), got: op.nrows() });
    }
    let n = m.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += m[[i, k]] * op[[k, i]];
        }
    }
    Ok(acc)
}

/// Reduced one-body element `ρ_ab = Tr(ρ σ_ba)` of `site`.
pub fn one_body(space: &CompositeSpace, rho: &DensityMatrix, site: usize, a: usize, b: usize) -> Result<C64> {
    check_dim(space, rho)?;
    let s = space.sites().get(site).ok_or_else(|| FitError::Config(format!("no site {site}")))?;
    let (ia, ib) = match (s.index_of(a), s.index_of(b)) {
        (Some(ia), Some(ib)) => (ia, ib),
        _ => return Err(FitError::Config(format!("site {site} lacks level {a} or {b}"))),
    };
    let stride = space.stride(site) as isize;
    let m = rho.matrix();
    let mut acc = ZERO;
    for i in 0..space.total_dim() {
        if space.local_index(i, site) == ia {
            let j = (i as isize + (ib as isize - ia as isize) * stride) as usize;
            acc += m[[i, j]];
        }
    }
    Ok(acc)
}

fn check_dim(space: &CompositeSpace, rho: &DensityMatrix) -> Result<()> {
    if rho.dim() != space.total_dim() {
        return Err(FitError::Dimension { expected: space.total_dim(), got: rho.dim() });
    }
    Ok(())
}

/// `(target, control)` site indices of a two-site target/control space.
pub fn two_site_roles(space: &CompositeSpace) -> Result<(usize, usize)> {
    let targets: Vec<usize> = space.targets().collect();
    let controls: Vec<usize> = space.controls().collect();
    if space.len() != 2 || targets.len() != 1 || controls.len() != 1 {
        return Err(FitError::Config("expected exactly one target and one control site".into()));
    }
    Ok((targets[0], controls[0]))
}

/// `⟨σ₁₃ᵗ σ₃₃ᶜ⟩` for a given target/control pair.
pub fn pair_correlator(space: &CompositeSpace, rho: &DensityMatrix, target: usize, control: usize) -> Result<C64> {
    check_dim(space, rho)?;
    let op = space.sigma(target, 1, 3)?.dot(&space.sigma(control, 3, 3)?);
    expectation(rho, &op)
}

/// Two-body correlator `ρ₃₁,₃₃ᴬᴮ = ⟨σ₁₃ᴬ σ₃₃ᴮ⟩`.
pub fn two_body_correlator(space: &CompositeSpace, rho: &DensityMatrix) -> Result<C64> {
    let (a, b) = two_site_roles(space)?;
    pair_correlator(space, rho, a, b)
}

/// `O_AB = ⟨σ₁₃ᴬσ₃₃ᴮ⟩ − ⟨σ₁₃ᴬ⟩⟨σ₃₃ᴮ⟩`.
pub fn connected_correlation(space: &CompositeSpace, rho: &DensityMatrix) -> Result<C64> {
    let (a, b) = two_site_roles(space)?;
    let joint = pair_correlator(space, rho, a, b)?;
    Ok(joint - one_body(space, rho, a, 3, 1)? * one_body(space, rho, b, 3, 3)?)
}

/// Simplified correlator form of the probe coherence, `ρ₂₁ ≈ 2 V ρ₃₁,₃₃ / Ω`.
///
/// The sign follows from the stationary Heisenberg equations of the
/// Hamiltonian used throughout the crate (`+V σ₃₃σ₃₃`, drives `−Ω/2`).
pub fn approx_coherence(correlator: C64, v_ab: f64, omega: f64) -> Result<C64> {
    if omega == 0.0 {
        return Err(FitError::DivisionByZero("coupling Rabi frequency Ω must be non-zero"));
    }
    Ok(correlator * (2.0 * v_ab / omega))
}

/// Inputs of the complete stationary relation for `ρ₂₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceTerms {
    pub correlator: C64,
    pub rho11: f64,
    pub rho22: f64,
    /// `ρ₃₂ = ⟨σ₂₃⟩` of the target.
    pub rho32: C64,
    pub omega: f64,
    pub omega_p: f64,
    pub v_ab: f64,
    /// Damping rate of the target coherence ρ₂₁.
    pub gamma12: f64,
    /// Damping rate of the target coherence ρ₃₁.
    pub gamma13: f64,
}

/// `ρ₂₁ = [2VΩ ρ₃₁,₃₃ + 2iγ₁₃Ω_p(ρ₁₁−ρ₂₂) + ΩΩ_p ρ₃₂] / (Ω² + 4γ₁₂γ₁₃)`:
/// exact for the stationary state, reducing to [`approx_coherence`] when the
/// γ₁₃ and ρ₃₂ terms are dropped.
pub fn approx_coherence_full(t: &CoherenceTerms) -> Result<C64> {
    let den = t.omega * t.omega + 4.0 * t.gamma12 * t.gamma13;
    if den == 0.0 {
        return Err(FitError::DivisionByZero("Ω² + 4γ₁₂γ₁₃ vanishes"));
    }
    let num = t.correlator * (2.0 * t.v_ab * t.omega)
        + C64::new(0.0, 2.0 * t.gamma13 * t.omega_p * (t.rho11 - t.rho22))
        + t.rho32 * (t.omega * t.omega_p);
    Ok(num / den)
}

/// Coherence damping rates `(γ₁₂, γ₁₃)` of a target atom under `rates`.
pub fn target_coherence_damping(rates: &DecayRates) -> (f64, f64) {
    (0.5 * rates.target_21 + rates.dephasing.target_2, 0.5 * rates.target_32 + rates.dephasing.target_3)
}

const MANDEL_MIN_MEAN: f64 = 1e-12;

/// Mandel `Q = ⟨(Δn)²⟩/⟨n⟩ − 1` for `n = Σ_sites σ₃₃`.
pub fn mandel_q(space: &CompositeSpace, rho: &DensityMatrix) -> Result<f64> {
    check_dim(space, rho)?;
    let m = rho.matrix();
    let (mut mean, mut second) = (0.0, 0.0);
    for i in 0..space.total_dim() {
        let count = (0..space.len())
            .filter(|&k| Some(space.local_index(i, k)) == space.site(k).index_of(3))
            .count() as f64;
        let p = m[[i, i]].re;
        mean += p * count;
        second += p * count * count;
    }
    if mean <= MANDEL_MIN_MEAN {
        return Err(FitError::UndefinedStatistic("mean Rydberg number vanishes"));
    }
    Ok((second - mean * mean) / mean - 1.0)
}

/// `⟨ψ|ρ|ψ⟩`, the fidelity with a pure state.
pub fn fidelity_pure(rho: &DensityMatrix, psi: &CVector) -> Result<f64> {
    if psi.len() != rho.dim() {
        return Err(FitError::Dimension { expected: rho.dim(), got: psi.len() });
    }
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(FitError::Normalization(norm));
    }
    let rp = rho.matrix().dot(psi);
    Ok(psi.iter().zip(&rp).map(|(p, r)| p.conj() * r).sum::<C64>().re)
}

/// Physical constants for the SI form of the probe susceptibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SusceptibilityConstants {
    /// Transition dipole moment μ₂₁ in C·m.
    pub dipole_moment: f64,
    /// Atomic density 𝒩_A in m⁻³.
    pub density: f64,
    pub hbar: f64,
    pub epsilon0: f64,
    /// Γ₁₂ᴬ in rad/s, converting Ω_p to SI.
    pub gamma_rad_per_s: f64,
}

impl Default for SusceptibilityConstants {
    fn default() -> Self {
        SusceptibilityConstants {
            // Rb D2 cycling transition.
            dipole_moment: 2.537e-29,
            // 3 × 10¹² cm⁻³.
            density: 3e18,
            hbar: 1.054_571_817e-34,
            epsilon0: 8.854_187_812_8e-12,
            gamma_rad_per_s: crate::units::GAMMA_RAD_PER_S,
        }
    }
}

impl SusceptibilityConstants {
    fn validate(&self) -> Result<()> {
        let all = [self.dipole_moment, self.density, self.hbar, self.epsilon0, self.gamma_rad_per_s];
        if all.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(FitError::Config("susceptibility constants must be positive".into()));
        }
        Ok(())
    }
}

/// Probe susceptibility. Without constants: the dimensionless `ρ₂₁/Ω_p`.
/// With constants: `ħε₀/(𝒩_A μ₂₁² Ω_p) · ρ₂₁`, the prefactor exactly as
/// printed in the source formula (Ω_p converted to rad/s).
pub fn susceptibility(rho21: C64, omega_p: f64, constants: Option<&SusceptibilityConstants>) -> Result<C64> {
    if omega_p == 0.0 {
        return Err(FitError::DivisionByZero("probe Rabi frequency must be non-zero"));
    }
    match constants {
        None => Ok(rho21 / omega_p),
        Some(k) => {
            k.validate()?;
            let omega_si = omega_p * k.gamma_rad_per_s;
            Ok(rho21 * (k.hbar * k.epsilon0 / (k.density * k.dipole_moment.powi(2) * omega_si)))
        }
    }
}

/// All parameters of a two-atom (target + control) problem, Γ₁₂ᴬ units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub drive: DriveParams,
    pub v_ab: f64,
    pub rates: DecayRates,
    pub control_scheme: DriveScheme,
    pub solver: SteadyStateOptions,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig::reference(15.0)
    }
}

impl SystemConfig {
    /// Ω = Ω_c = 5, Ω_p = 0.5, Γ₂₃ᴬ = 10⁻³, Γ₁₃ᴮ = 1, no dephasing.
    pub fn reference(v_ab: f64) -> Self {
        SystemConfig {
            drive: DriveParams::new(0.5, 5.0, 5.0, 0.0),
            v_ab,
            rates: DecayRates::default(),
            control_scheme: DriveScheme::OnePhoton,
            solver: SteadyStateOptions::default(),
        }
    }

    /// Ω = 3, Γ₁₃ᴮ = 0.1, with the given Ω_c; other values as [`reference`](Self::reference).
    pub fn gap_scan(omega_c: f64, v_ab: f64) -> Self {
        let mut c = SystemConfig::reference(v_ab);
        c.drive.omega = 3.0;
        c.drive.omega_c = omega_c;
        c.rates.control_31 = 0.1;
        c
    }

    /// Two-photon control: Ω_c1 = Ω_p = 0.8, Ω_c2 = Ω = 4, Δ = 10.
    pub fn two_photon(v_ab: f64) -> Self {
        let mut c = SystemConfig::reference(v_ab);
        c.drive = DriveParams::new(0.8, 4.0, 0.0, 0.0);
        c.drive.two_photon = Some(TwoPhotonParams { omega_c1: 0.8, omega_c2: 4.0, delta: 10.0 });
        c.control_scheme = DriveScheme::TwoPhoton;
        c
    }

    pub fn space(&self) -> Result<CompositeSpace> {
        // Positions are irrelevant: V_AB is given explicitly.
        CompositeSpace::two_atom(1.0, self.control_scheme)
    }

    pub fn liouvillian(&self, space: &CompositeSpace, delta_c: f64) -> Result<Liouvillian> {
        let h = build_hamiltonian(space, &self.drive.with_delta_c(delta_c), &InteractionSpec::two_atom(self.v_ab))?;
        Liouvillian::new(space, h, self.rates.dissipators(space))
    }

    pub fn steady_state(&self, space: &CompositeSpace, delta_c: f64) -> Result<DensityMatrix> {
        Ok(solve_steady_state(&self.liouvillian(space, delta_c)?, &self.solver, None)?.rho)
    }
}

/// `|3_A3_B⟩`-type product basis state of a two-site space.
fn basis_state(space: &CompositeSpace, levels: &[usize]) -> Result<CVector> {
    let mut v = Array1::from_elem(space.total_dim(), ZERO);
    v[space.basis_index(levels)?] = C64::new(1.0, 0.0);
    Ok(v)
}

/// `(ψ_B, ψ_F)` embedded in a two-site space: `ψ_B = |1_A3_B⟩`,
/// `ψ_F = (|3_A3_B⟩ − |2_A1_B⟩)/√2`.
pub fn reference_states(space: &CompositeSpace) -> Result<(CVector, CVector)> {
    let (a, _) = two_site_roles(space)?;
    let order = |t: usize, c: usize| if a == 0 { [t, c] } else { [c, t] };
    let psi_b = basis_state(space, &order(1, 3))?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let psi_f = (basis_state(space, &order(3, 3))? - basis_state(space, &order(2, 1))?).mapv(|z| z * s);
    Ok((psi_b, psi_f))
}

/// Observables of one two-atom stationary state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoAtomObservables {
    pub rho21: C64,
    pub rho33_a: f64,
    pub rho33_b: f64,
    pub rho31_b: C64,
    pub correlator: C64,
    pub o_ab: C64,
    /// NaN when the mean Rydberg number vanishes.
    pub mandel_q: f64,
    pub fidelity_b: f64,
    pub fidelity_f: f64,
}

impl TwoAtomObservables {
    pub fn evaluate(space: &CompositeSpace, rho: &DensityMatrix) -> Result<Self> {
        let (a, b) = two_site_roles(space)?;
        let (psi_b, psi_f) = reference_states(space)?;
        let mandel = match mandel_q(space, rho) {
            Ok(q) => q,
            Err(FitError::UndefinedStatistic(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok(TwoAtomObservables {
            rho21: one_body(space, rho, a, 2, 1)?,
            rho33_a: one_body(space, rho, a, 3, 3)?.re,
            rho33_b: one_body(space, rho, b, 3, 3)?.re,
            rho31_b: one_body(space, rho, b, 3, 1)?,
            correlator: pair_correlator(space, rho, a, b)?,
            o_ab: connected_correlation(space, rho)?,
            mandel_q: mandel,
            fidelity_b: fidelity_pure(rho, &psi_b)?,
            fidelity_f: fidelity_pure(rho, &psi_f)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Sub-grid refined position.
    pub position: f64,
    pub height: f64,
    pub prominence: f64,
}

/// Default prominence threshold as a fraction of the global maximum.
pub const DEFAULT_PEAK_PROMINENCE: f64 = 0.05;

/// Local maxima of `y(x)` whose topographic prominence is at least
/// `min_prominence_frac · max(y)`, refined by a parabola through the three
/// surrounding samples.
pub fn find_peaks(x: &[f64], y: &[f64], min_prominence_frac: f64) -> Vec<Peak> {
    let n = y.len();
    if n < 3 || x.len() != n {
        return Vec::new();
    }
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = min_prominence_frac * ymax.abs();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        // Flat tops count once, at their centre.
        if y[i] > y[i - 1] {
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let c = (i + j) / 2;
                let left = y[..i].iter().rev().take_while(|&&v| v <= y[i]).cloned().fold(y[i], f64::min);
                let right = y[j + 1..].iter().take_while(|&&v| v <= y[i]).cloned().fold(y[i], f64::min);
                let prominence = y[i] - left.max(right);
                if prominence >= threshold && prominence > 0.0 {
                    let (position, height) = if i == j { refine(x, y, c) } else { (x[c], y[c]) };
                    peaks.push(Peak { position, height, prominence });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Vertex of the parabola through samples `c−1, c, c+1`.
fn refine(x: &[f64], y: &[f64], c: usize) -> (f64, f64) {
    let (x0, x1, x2) = (x[c - 1], x[c], x[c + 1]);
    let (y0, y1, y2) = (y[c - 1], y[c], y[c + 1]);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if a >= 0.0 || !a.is_finite() {
        return (x1, y1);
    }
    let b = d01 - a * (x0 + x1);
    let xv = (-b / (2.0 * a)).clamp(x0, x2);
    let yv = y1 + (xv - x1) * (d01 + a * (xv - x0));
    (xv, yv)
}

/// Steady-state sweep over Δ_c.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Spectrum {
    pub delta_c: Vec<f64>,
    pub re_rho21: Vec<f64>,
    pub im_rho21: Vec<f64>,
    pub rho33_a: Vec<f64>,
    pub rho33_b: Vec<f64>,
    pub re_correlator: Vec<f64>,
    pub im_correlator: Vec<f64>,
    /// `Im` of the simplified correlator form of ρ₂₁.
    pub im_rho21_approx: Vec<f64>,
    pub re_o_ab: Vec<f64>,
    pub im_o_ab: Vec<f64>,
    pub mandel_q: Vec<f64>,
    pub fidelity_b: Vec<f64>,
    pub fidelity_f: Vec<f64>,
    pub peaks: Vec<Peak>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.delta_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_c.is_empty()
    }

    /// Distance between the outermost detected peaks.
    pub fn peak_separation(&self) -> Option<f64> {
        if self.peaks.len() < 2 {
            return None;
        }
        let lo = self.peaks.iter().map(|p| p.position).fold(f64::INFINITY, f64::min);
        let hi = self.peaks.iter().map(|p| p.position).fold(f64::NEG_INFINITY, f64::max);
        Some(hi - lo)
    }
}

/// Validates a sweep grid: non-empty, finite, strictly increasing.
pub fn validate_grid(grid: &[f64], what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(FitError::Config(format!("{what} grid is empty")));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(FitError::Config(format!("{what} grid contains non-finite values")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FitError::Config(format!("{what} grid must be strictly increasing")));
    }
    Ok(())
}

/// `n` evenly spaced points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// 401 points over `[−2V, V]` (or `[−30, 15]` when V = 0).
pub fn default_delta_c_grid(v_ab: f64) -> Vec<f64> {
    let v = if v_ab.abs() > 0.0 { v_ab.abs() } else { 15.0 };
    linspace(-2.0 * v, v, 401)
}

/// Steady-state spectrum over `delta_c_grid`; points are solved in parallel
/// and assembled in grid order.
pub fn coherence_spectrum(config: &SystemConfig, delta_c_grid: &[f64]) -> Result<Spectrum> {
    coherence_spectrum_with(config, delta_c_grid, DEFAULT_PEAK_PROMINENCE)
}

pub fn coherence_spectrum_with(config: &SystemConfig, delta_c_grid: &[f64], prominence: f64) -> Result<Spectrum> {
    validate_grid(delta_c_grid, "Δ_c")?;
    let space = config.space()?;
    let points: Vec<TwoAtomObservables> = delta_c_grid
        .par_iter()
        .map(|&dc| {
            let rho = config.steady_state(&space, dc)?;
            TwoAtomObservables::evaluate(&space, &rho)
        })
        .zip(delta_c_grid.par_iter())
        .map(|(r, &dc)| r.map_err(|e| e.at_detuning(dc)))
        .collect::<Result<_>>()?;
    let mut s = Spectrum { delta_c: delta_c_grid.to_vec(), ..Default::default() };
    for p in &points {
        s.re_rho21.push(p.rho21.re);
        s.im_rho21.push(p.rho21.im);
        s.rho33_a.push(p.rho33_a);
        s.rho33_b.push(p.rho33_b);
        s.re_correlator.push(p.correlator.re);
        s.im_correlator.push(p.correlator.im);
        s.im_rho21_approx.push(approx_coherence(p.correlator, config.v_ab, config.drive.omega)?.im);
        s.re_o_ab.push(p.o_ab.re);
        s.im_o_ab.push(p.o_ab.im);
        s.mandel_q.push(p.mandel_q);
        s.fidelity_b.push(p.fidelity_b);
        s.fidelity_f.push(p.fidelity_f);
    }
    s.peaks = find_peaks(&s.delta_c, &s.im_rho21, prominence);
    Ok(s)
}

/// Targets on a circle of radius `r_fac` around a control atom at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingGeometry {
    pub n_targets: usize,
    /// μm
    pub r_fac: f64,
    /// Angular positions (rad); evenly spaced when absent.
    #[serde(default)]
    pub angles: Option<Vec<f64>>,
}

impl RingGeometry {
    pub fn regular(n_targets: usize, r_fac: f64) -> Self {
        RingGeometry { n_targets, r_fac, angles: None }
    }

    pub fn angles(&self) -> Vec<f64> {
        self.angles
            .clone()
            .unwrap_or_else(|| (0..self.n_targets).map(|k| TAU * k as f64 / self.n_targets as f64).collect())
    }

    /// Targets at sites `0..N`, control at site `N`.
    pub fn space(&self, scheme: DriveScheme) -> Result<CompositeSpace> {
        if self.n_targets == 0 {
            return Err(FitError::Config("ring needs at least one target".into()));
        }
        if !(self.r_fac > 0.0) {
            return Err(FitError::Config("ring radius must be positive".into()));
        }
        let angles = self.angles();
        if angles.len() != self.n_targets {
            return Err(FitError::Config(format!("{} angles for {} targets", angles.len(), self.n_targets)));
        }
        let mut sites: Vec<AtomSite> =
            angles.iter().map(|a| AtomSite::target([self.r_fac * a.cos(), self.r_fac * a.sin(), 0.0])).collect();
        sites.push(AtomSite::control([0.0; 3], scheme));
        CompositeSpace::new(sites)
    }

    /// Control–target pairs at `v_ct`; target pairs at `v_tt` for the
    /// nearest-neighbour distance, scaled as `r⁻⁶` for farther pairs.
    pub fn interactions(&self, space: &CompositeSpace, v_ct: f64, v_tt: f64) -> Result<InteractionSpec> {
        let n = self.n_targets;
        let dist = |j: usize, l: usize| {
            let (a, b) = (space.site(j).position, space.site(l).position);
            (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
        };
        let mut spec = InteractionSpec::default();
        for k in 0..n {
            spec = spec.with_pair(k, n, v_ct);
        }
        let nearest = (0..n).flat_map(|j| (j + 1..n).map(move |l| (j, l))).map(|(j, l)| dist(j, l)).fold(f64::INFINITY, f64::min);
        for j in 0..n {
            for l in j + 1..n {
                let r = dist(j, l);
                if r == 0.0 {
                    return Err(FitError::SingularGeometry);
                }
                spec = spec.with_pair(j, l, v_tt * (nearest / r).powi(6));
            }
        }
        Ok(spec)
    }
}

/// Largest supported ring in dense mode (dimension 3⁴·2 = 162).
pub const MAX_RING_TARGETS: usize = 4;

/// `Im ρ₂₁` (averaged over targets) on a `(V_TT, Δ_c)` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiTargetSpectrum {
    pub n_targets: usize,
    pub v_ct: f64,
    pub v_tt: Vec<f64>,
    pub delta_c: Vec<f64>,
    /// Row per `v_tt` value.
    pub im_rho21: Vec<Vec<f64>>,
    pub rho33_targets: Vec<Vec<f64>>,
    pub rho33_control: Vec<Vec<f64>>,
    pub peaks: Vec<Vec<Peak>>,
}

/// Points per warm-started chain; fixed so results do not depend on the
/// number of worker threads.
const WARM_CHAIN: usize = 8;

pub fn multi_target_spectrum(
    ring: &RingGeometry,
    base: &SystemConfig,
    v_ct: f64,
    v_tt_grid: &[f64],
    delta_c_grid: &[f64],
) -> Result<MultiTargetSpectrum> {
    if ring.n_targets > MAX_RING_TARGETS {
        let dim = 3usize.pow(ring.n_targets as u32) * 2;
        return Err(FitError::Capacity { dim, cap: 3usize.pow(MAX_RING_TARGETS as u32) * 2 });
    }
    validate_grid(delta_c_grid, "Δ_c")?;
    if v_tt_grid.is_empty() {
        return Err(FitError::Config("V_TT grid is empty".into()));
    }
    let space = ring.space(base.control_scheme)?;
    let n = ring.n_targets;
    let dissipators = base.rates.dissipators(&space);
    let mut out = MultiTargetSpectrum {
        n_targets: n,
        v_ct,
        v_tt: v_tt_grid.to_vec(),
        delta_c: delta_c_grid.to_vec(),
        im_rho21: Vec::new(),
        rho33_targets: Vec::new(),
        rho33_control: Vec::new(),
        peaks: Vec::new(),
    };
    for &v_tt in v_tt_grid {
        let inter = ring.interactions(&space, v_ct, v_tt)?;
        let chains: Vec<Vec<(f64, f64, f64)>> = delta_c_grid
            .par_chunks(WARM_CHAIN)
            .map(|chunk| {
                let mut prev: Option<DensityMatrix> = None;
                let mut rows = Vec::with_capacity(chunk.len());
                for &dc in chunk {
                    let solve = || -> Result<(DensityMatrix, (f64, f64, f64))> {
                        let h = build_hamiltonian(&space, &base.drive.with_delta_c(dc), &inter)?;
                        let l = Liouvillian::new(&space, h, dissipators.clone())?;
                        let rho = solve_steady_state(&l, &base.solver, prev.as_ref())?.rho;
                        let mut im = 0.0;
                        let mut r33 = 0.0;
                        for t in 0..n {
                            im += one_body(&space, &rho, t, 2, 1)?.im;
                            r33 += one_body(&space, &rho, t, 3, 3)?.re;
                        }
                        let rc = one_body(&space, &rho, n, 3, 3)?.re;
                        Ok((rho, (im / n as f64, r33 / n as f64, rc)))
                    };
                    let (rho, row) = solve().map_err(|e| e.at_detuning(dc))?;
                    prev = Some(rho);
                    rows.push(row);
                }
                Ok(rows)
            })
            .collect::<Result<_>>()?;
        let rows: Vec<(f64, f64, f64)> = chains.into_iter().flatten().collect();
        let im: Vec<f64> = rows.iter().map(|r| r.0).collect();
        out.peaks.push(find_peaks(delta_c_grid, &im, DEFAULT_PEAK_PROMINENCE));
        out.im_rho21.push(im);
        out.rho33_targets.push(rows.iter().map(|r| r.1).collect());
        out.rho33_control.push(rows.iter().map(|r| r.2).collect());
    }
    Ok(out)
}

/// Is `role` present on any site?
pub fn has_role(space: &CompositeSpace, role: Role) -> bool {
    space.sites().iter().any(|s| s.role == role)
}
