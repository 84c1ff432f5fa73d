//! Dressed-state analysis of the interaction subspace
//! `{|2_A⟩, |3_A⟩} ⊗ {|1_B⟩, |3_B⟩}` with damping neglected.
//!
//! Basis order everywhere in this module: `|2_A1_B⟩, |2_A3_B⟩, |3_A1_B⟩, |3_A3_B⟩`.

use ndarray::{arr1, Array2};
use serde::Serialize;

use crate::error::{FitError, Result};
use crate::linalg::{eigh, CMatrix, CVector, HermitianEigen, C64, ZERO};

pub const BASIS_LABELS: [&str; 4] = ["2A1B", "2A3B", "3A1B", "3A3B"];

/// The 4×4 subspace Hamiltonian `H0`.
pub fn dressed_hamiltonian(omega: f64, omega_c: f64, delta_c: f64, v_ab: f64) -> CMatrix {
    let w = C64::new(-omega / 2.0, 0.0);
    let wc = C64::new(-omega_c / 2.0, 0.0);
    let mut h = Array2::from_elem((4, 4), ZERO);
    h[[1, 1]] = C64::new(delta_c, 0.0);
    h[[3, 3]] = C64::new(delta_c + v_ab, 0.0);
    // Control flips |1_B⟩ ↔ |3_B⟩ at fixed target level.
    for (lo, hi) in [(0, 1), (2, 3)] {
        h[[hi, lo]] = wc;
        h[[lo, hi]] = wc.conj();
    }
    // Coupling flips |2_A⟩ ↔ |3_A⟩ at fixed control level.
    for (lo, hi) in [(0, 2), (1, 3)] {
        h[[hi, lo]] = w;
        h[[lo, hi]] = w.conj();
    }
    h
}

/// Thin wrapper so callers of this module need not reach into `linalg`.
pub fn eigendecompose_hermitian(m: &CMatrix) -> Result<HermitianEigen> {
    eigh(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct DressedResult {
    pub delta_c: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` belongs to `eigenvalues[k]`.
    #[serde(skip)]
    pub eigenvectors: CMatrix,
}

impl DressedResult {
    /// Weight of `psi` inside the eigenspace closest to zero energy, i.e.
    /// `Σ |⟨ψ_k|ψ⟩|²` over eigenvalues within `tol` of the smallest `|ε|`.
    pub fn zero_mode_overlap(&self, psi: &CVector, tol: f64) -> f64 {
        let emin = self.eigenvalues.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
        (0..4)
            .filter(|&k| (self.eigenvalues[k].abs() - emin).abs() <= tol)
            .map(|k| self.eigenvectors.column(k).iter().zip(psi).map(|(v, p)| v.conj() * p).sum::<C64>().norm_sqr())
            .sum()
    }
}

pub fn dressed_spectrum(omega: f64, omega_c: f64, delta_c: f64, v_ab: f64) -> Result<DressedResult> {
    let eig = eigh(&dressed_hamiltonian(omega, omega_c, delta_c, v_ab))?;
    Ok(DressedResult { delta_c, eigenvalues: eig.values, eigenvectors: eig.vectors })
}

/// Eigenvalue curves over a detuning grid.
pub fn eigencurves(omega: f64, omega_c: f64, v_ab: f64, delta_c_grid: &[f64]) -> Result<Vec<DressedResult>> {
    delta_c_grid.iter().map(|&dc| dressed_spectrum(omega, omega_c, dc, v_ab)).collect()
}

fn mismatch(omega: f64, omega_c: f64) -> Result<f64> {
    if omega == 0.0 {
        return Err(FitError::DivisionByZero("coupling Rabi frequency Ω must be non-zero"));
    }
    Ok((omega * omega - omega_c * omega_c) / omega)
}

/// Detunings `(Δc⁺, Δc⁻)` at which `H0` has a zero eigenvalue.
pub fn resonance_detunings(omega: f64, omega_c: f64, v_ab: f64) -> Result<(f64, f64)> {
    let k = mismatch(omega, omega_c)?;
    let root = (v_ab * v_ab + k * k).sqrt();
    Ok((-v_ab / 2.0 + root / 2.0, -v_ab / 2.0 - root / 2.0))
}

/// `ΔE = √(V² + (Ω − Ω_c²/Ω)²)`, equal to `Δc⁺ − Δc⁻`.
pub fn energy_gap(omega: f64, omega_c: f64, v_ab: f64) -> Result<f64> {
    let k = mismatch(omega, omega_c)?;
    Ok((v_ab * v_ab + k * k).sqrt())
}

/// `(ψ_E, ψ_F)`: `ψ_E = (|3_A1_B⟩ − |2_A3_B⟩)/√2`, `ψ_F = (|3_A3_B⟩ − |2_A1_B⟩)/√2`.
pub fn bell_states() -> (CVector, CVector) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let c = |x: f64| C64::new(x, 0.0);
    let psi_e = arr1(&[c(0.0), c(-s), c(s), c(0.0)]);
    let psi_f = arr1(&[c(-s), c(0.0), c(0.0), c(s)]);
    (psi_e, psi_f)
}
