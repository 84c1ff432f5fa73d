//! Conversions between laboratory units and the natural unit Γ₁₂ᴬ.
//!
//! All rates, detunings and interaction energies inside the crate are in units
//! of Γ₁₂ᴬ (angular). Lengths are in μm.

use std::f64::consts::PI;

/// Natural linewidth of Rb |5P₃/₂⟩ in Hz (cyclic): Γ₁₂ᴬ = 2π × 6.06 MHz.
pub const GAMMA_CYCLIC_HZ: f64 = 6.06e6;

/// Γ₁₂ᴬ in rad/s.
pub const GAMMA_RAD_PER_S: f64 = 2.0 * PI * GAMMA_CYCLIC_HZ;

/// Speed of light in μm/s.
pub const SPEED_OF_LIGHT_UM_PER_S: f64 = 2.997_924_58e14;

/// Speed of light in μm·Γ (distance travelled in one 1/Γ₁₂ᴬ).
pub fn speed_of_light_um_gamma() -> f64 {
    SPEED_OF_LIGHT_UM_PER_S / GAMMA_RAD_PER_S
}

/// `C₆` quoted in "GHz·μm⁶" (read as 10⁹ s⁻¹, angular) to Γ·μm⁶.
pub fn c6_ghz_to_gamma(c6_ghz_um6: f64) -> f64 {
    c6_ghz_um6 * 1e9 / GAMMA_RAD_PER_S
}

/// Γ·μm⁶ back to "GHz·μm⁶".
pub fn c6_gamma_to_ghz(c6_gamma_um6: f64) -> f64 {
    c6_gamma_um6 * GAMMA_RAD_PER_S / 1e9
}

/// A cyclic frequency in MHz to Γ units.
pub fn mhz_to_gamma(f_mhz: f64) -> f64 {
    f_mhz * 1e6 * 2.0 * PI / GAMMA_RAD_PER_S
}

/// Γ units to cyclic MHz.
pub fn gamma_to_mhz(x: f64) -> f64 {
    x * GAMMA_RAD_PER_S / (2.0 * PI * 1e6)
}
