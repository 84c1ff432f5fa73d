//! Configuration files: TOML (or JSON) with one optional section per
//! subcommand and a `units` block.
//!
//! Frequencies (Rabi frequencies, detunings, interaction shifts, sweep grids)
//! are read in the unit named by `units.frequency`; `C₆` in the unit named by
//! `units.c6`; lengths are always μm, decay rates always Γ₁₂ᴬ, times Γ₁₂ᴬ⁻¹
//! and κ Γ₁₂ᴬ/μm. Loading converts everything to Γ₁₂ᴬ units, so the resolved
//! configuration stored in the run manifest is unit-free and can be fed back
//! through `--config` unchanged.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rydfit_core::delocalize::SamplingMode;
use rydfit_core::hilbert::DriveParams;
use rydfit_core::observables::{default_delta_c_grid, linspace, SystemConfig, DEFAULT_PEAK_PROMINENCE};
use rydfit_core::propagation::{Grid1D, PropagationConfig, Scenario};
use rydfit_core::units::{c6_ghz_to_gamma, mhz_to_gamma};

use crate::error::CliError;
use crate::output::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FrequencyUnit {
    /// Multiples of Γ₁₂ᴬ.
    #[default]
    #[serde(rename = "gamma")]
    Gamma,
    /// Cyclic MHz (Ω/2π).
    #[serde(rename = "MHz", alias = "mhz")]
    Mhz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum C6Unit {
    #[default]
    #[serde(rename = "gamma_um6")]
    GammaUm6,
    /// Angular GHz·μm⁶ (10⁹ rad/s·μm⁶).
    #[serde(rename = "GHz_um6", alias = "ghz_um6")]
    GhzUm6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LengthUnit {
    #[default]
    #[serde(rename = "um", alias = "μm")]
    Micrometre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Units {
    pub frequency: FrequencyUnit,
    pub c6: C6Unit,
    pub length: LengthUnit,
}

impl Units {
    fn frequency_factor(&self) -> f64 {
        match self.frequency {
            FrequencyUnit::Gamma => 1.0,
            FrequencyUnit::Mhz => mhz_to_gamma(1.0),
        }
    }

    fn c6_factor(&self) -> f64 {
        match self.c6 {
            C6Unit::GammaUm6 => 1.0,
            C6Unit::GhzUm6 => c6_ghz_to_gamma(1.0),
        }
    }
}

/// Detuning grid: `{ start, stop, points }` or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Range { start: f64, stop: f64, points: usize },
    Values(Vec<f64>),
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridSpec::Range { start, stop, points } => linspace(*start, *stop, *points),
            GridSpec::Values(v) => v.clone(),
        }
    }

    fn scale(&mut self, f: f64) {
        match self {
            GridSpec::Range { start, stop, .. } => {
                *start *= f;
                *stop *= f;
            }
            GridSpec::Values(v) => v.iter_mut().for_each(|x| *x *= f),
        }
    }

    fn standard(v_ab: f64) -> Self {
        let g = default_delta_c_grid(v_ab);
        GridSpec::Range { start: g[0], stop: *g.last().expect("non-empty"), points: g.len() }
    }
}

fn scale_drive(d: &mut DriveParams, f: f64) {
    d.omega_p *= f;
    d.omega *= f;
    d.omega_c *= f;
    d.delta_c *= f;
    if let Some(tp) = d.two_photon.as_mut() {
        tp.omega_c1 *= f;
        tp.omega_c2 *= f;
        tp.delta *= f;
    }
}

fn scale_system(s: &mut SystemConfig, f: f64) {
    scale_drive(&mut s.drive, f);
    s.v_ab *= f;
}

fn scale_propagation(p: &mut PropagationConfig, f: f64, c6: f64) {
    scale_drive(&mut p.drive, f);
    if let Scenario::Ramp(r) = &mut p.scenario {
        r.delta_c0 *= f;
        r.delta_cf *= f;
    }
    p.c6 *= c6;
}

/// `spectrum`: two-atom steady-state sweep over Δ_c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub system: SystemConfig,
    /// Defaults to 401 points over [−2V, V].
    pub grid: Option<GridSpec>,
    /// Minimum peak prominence as a fraction of the curve's range.
    pub prominence: f64,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection { system: SystemConfig::reference(15.0), grid: None, prominence: DEFAULT_PEAK_PROMINENCE }
    }
}

/// `dressed`: eigencurves of the interaction subspace and the ΔE(V) table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DressedSection {
    pub omega: f64,
    pub omega_c: Vec<f64>,
    pub v_ab: Vec<f64>,
    /// Interaction used for the eigencurves.
    pub eigencurve_v_ab: f64,
    /// Defaults to 401 points over [−2V, V] at `eigencurve_v_ab`.
    pub grid: Option<GridSpec>,
    /// Also measure ΔE as the peak separation of the master-equation spectrum.
    pub measure_spectrum: bool,
    /// Γ₁₃ᴮ of the measured spectra.
    pub control_decay: f64,
}

impl Default for DressedSection {
    fn default() -> Self {
        DressedSection {
            omega: 3.0,
            omega_c: vec![3.0, 5.0],
            v_ab: (1..=15).map(|k| 2.0 * k as f64).collect(),
            eigencurve_v_ab: 15.0,
            grid: None,
            measure_spectrum: true,
            control_decay: 0.1,
        }
    }
}

/// `switch`: probe propagation for localized and co-propagating excitations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchSection {
    /// Atoms, drive, medium and ramp shape; `scenario` must be a ramp whose
    /// `delta_cf` is replaced by each entry of `ramp_delta_cf`.
    pub base: PropagationConfig,
    pub ramp_delta_cf: Vec<f64>,
    pub localized_delta_c: Vec<f64>,
    pub localized_grid: Grid1D,
    /// μm
    pub localized_z_j: f64,
    /// Calibrate κ so the blockade ramp transmits 1% after this length (μm);
    /// `base.kappa` is used when absent.
    pub calibrate_length: Option<f64>,
}

impl Default for SwitchSection {
    fn default() -> Self {
        SwitchSection {
            base: PropagationConfig::switch_ramp(0.0),
            ramp_delta_cf: vec![0.0, -15.0],
            localized_delta_c: vec![0.0, -7.5, -15.0],
            localized_grid: PropagationConfig::switch_localized(0.0).grid,
            localized_z_j: 0.0,
            calibrate_length: Some(100.0),
        }
    }
}

/// `montecarlo`: averages over delocalized control excitations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    /// Channel separations, μm.
    pub d: Vec<f64>,
    /// Delocalization width σ, μm.
    pub sigma: f64,
    /// Interaction at the nominal separation; sets `C₆ = −V₀ d⁶` per `d`.
    pub v0: f64,
    pub n_trajectories: usize,
    pub seed: u64,
    pub sampling: SamplingMode,
    pub spectrum: bool,
    pub switch: bool,
    /// Defaults to 401 points over [−2V₀, V₀].
    pub grid: Option<GridSpec>,
    pub localized: PropagationConfig,
    pub ramp: PropagationConfig,
    pub calibrate_length: Option<f64>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        let mut localized = PropagationConfig::switch_localized(0.0);
        localized.grid = Grid1D { z_min: -10.0, z_max: 10.0, n_cells: 40 };
        MonteCarloSection {
            d: vec![6.0, 10.0],
            sigma: 0.5,
            v0: 15.0,
            n_trajectories: rydfit_core::delocalize::DEFAULT_TRAJECTORIES,
            seed: 1,
            sampling: SamplingMode::ThreeD,
            spectrum: true,
            switch: true,
            grid: None,
            localized,
            ramp: PropagationConfig::switch_ramp(-15.0),
            calibrate_length: Some(100.0),
        }
    }
}

/// `multichannel`: targets on a ring around one control atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultichannelSection {
    /// Drive, rates and solver; `v_ab` is unused (see `v_ct`).
    pub system: SystemConfig,
    pub n_targets: Vec<usize>,
    /// Ring radius, μm.
    pub r_fac: f64,
    pub v_ct: f64,
    pub v_tt: Vec<f64>,
    pub grid: Option<GridSpec>,
}

impl Default for MultichannelSection {
    fn default() -> Self {
        MultichannelSection {
            system: SystemConfig::reference(15.0),
            n_targets: vec![1, 2, 3],
            r_fac: 6.0,
            v_ct: 15.0,
            v_tt: vec![0.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0],
            grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub units: Units,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dressed: Option<DressedSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switch: Option<SwitchSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multichannel: Option<MultichannelSection>,
}

impl ConfigFile {
    /// Converts every section to Γ₁₂ᴬ units and fills defaulted grids, so
    /// the result serializes to a self-contained, unit-free configuration.
    pub fn resolve(mut self) -> Self {
        let f = self.units.frequency_factor();
        let c6 = self.units.c6_factor();
        if let Some(s) = self.spectrum.as_mut() {
            scale_system(&mut s.system, f);
            s.grid.as_mut().map(|g| g.scale(f));
            s.grid.get_or_insert_with(|| GridSpec::standard(s.system.v_ab));
        }
        if let Some(s) = self.dressed.as_mut() {
            s.omega *= f;
            s.omega_c.iter_mut().for_each(|x| *x *= f);
            s.v_ab.iter_mut().for_each(|x| *x *= f);
            s.eigencurve_v_ab *= f;
            s.grid.as_mut().map(|g| g.scale(f));
            s.grid.get_or_insert_with(|| GridSpec::standard(s.eigencurve_v_ab));
        }
        if let Some(s) = self.switch.as_mut() {
            scale_propagation(&mut s.base, f, c6);
            s.ramp_delta_cf.iter_mut().for_each(|x| *x *= f);
            s.localized_delta_c.iter_mut().for_each(|x| *x *= f);
        }
        if let Some(s) = self.montecarlo.as_mut() {
            s.v0 *= f;
            scale_propagation(&mut s.localized, f, c6);
            scale_propagation(&mut s.ramp, f, c6);
            s.grid.as_mut().map(|g| g.scale(f));
            s.grid.get_or_insert_with(|| GridSpec::standard(s.v0));
        }
        if let Some(s) = self.multichannel.as_mut() {
            scale_system(&mut s.system, f);
            s.v_ct *= f;
            s.v_tt.iter_mut().for_each(|x| *x *= f);
            s.grid.as_mut().map(|g| g.scale(f));
            s.grid.get_or_insert(GridSpec::Range { start: -25.0, stop: 7.0, points: 65 });
        }
        self.units = Units::default();
        self
    }
}

/// Deserializes `T`, rejecting keys that no field consumes.
fn strict<'de, D, T>(de: D) -> Result<T, String>
where
    D: serde::Deserializer<'de>,
    D::Error: std::fmt::Display,
    T: Deserialize<'de>,
{
    let mut unknown = Vec::new();
    // `?` marks an `Option` layer in serde_ignored paths; it is noise here.
    let value = serde_ignored::deserialize(de, |path| unknown.push(path.to_string().replace(".?", ""))).map_err(|e| e.to_string())?;
    if !unknown.is_empty() {
        return Err(format!("unknown field(s): {}", unknown.join(", ")));
    }
    Ok(value)
}

/// Reads a TOML or JSON configuration, or the resolved configuration stored
/// in a run manifest (re-running from a manifest reproduces the run).
pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if value.get("schema_version").is_some() && value.get("config").is_some() {
            let manifest: RunManifest =
                serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: malformed manifest: {e}", path.display())))?;
            strict(manifest.config)
        } else {
            strict(&mut serde_json::Deserializer::from_str(&text))
        }
    } else {
        toml::Deserializer::parse(&text).map_err(|e| e.to_string()).and_then(strict)
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
