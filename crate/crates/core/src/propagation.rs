//! One-dimensional propagation of the single-photon probe amplitude through
//! the target channel, with a control excitation that is either localized at
//! `z_j` or co-propagating under a detuning ramp.
//!
//! Each grid cell carries an independent two-atom (target + control) problem.
//! In the steady-envelope (cw) mode the field obeys
//! `dE/dz = i κ (ρ₂₁(z)/Ω_p) E`; in the time-dependent mode the full
//! `(∂_t + c ∂_z) E = i (κ c/Ω_p) ρ₂₁` is integrated jointly with the
//! per-cell master equations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};
use crate::hilbert::{hamiltonian_parts, pair_potential, CompositeSpace, DriveParams, DriveScheme, HamiltonianParts, InteractionSpec};
use crate::lindblad::{rk4_step, solve_steady_state, DecayRates, DensityMatrix, Liouvillian, Rk4Scratch, SparseHamiltonian, SteadyStateOptions};
use crate::linalg::{C64, ZERO};
use crate::observables::one_body;

/// Uniform grid over `[z_min, z_max]` (μm) with `n_cells` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub z_min: f64,
    pub z_max: f64,
    pub n_cells: usize,
}

/// Smallest accepted number of cells.
pub const MIN_CELLS: usize = 16;

impl Grid1D {
    pub fn new(z_min: f64, z_max: f64, n_cells: usize) -> Result<Self> {
        let g = Grid1D { z_min, z_max, n_cells };
        g.validate()?;
        Ok(g)
    }

    /// Grid with spacing as close as possible to `dz` (and at least
    /// [`MIN_CELLS`] cells).
    pub fn with_spacing(z_min: f64, z_max: f64, dz: f64) -> Result<Self> {
        if !(dz > 0.0) {
            return Err(FitError::Config("grid spacing must be positive".into()));
        }
        Grid1D::new(z_min, z_max, (((z_max - z_min) / dz).round() as usize).max(MIN_CELLS))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_max > self.z_min) {
            return Err(FitError::Config(format!("grid needs z_max > z_min (got {}, {})", self.z_min, self.z_max)));
        }
        if self.n_cells < MIN_CELLS {
            return Err(FitError::Config(format!("grid needs at least {MIN_CELLS} cells (got {})", self.n_cells)));
        }
        Ok(())
    }

    pub fn dz(&self) -> f64 {
        (self.z_max - self.z_min) / self.n_cells as f64
    }

    /// The `n_cells + 1` cell boundaries, `z_min` and `z_max` included.
    pub fn nodes(&self) -> Vec<f64> {
        let dz = self.dz();
        (0..=self.n_cells).map(|k| if k == self.n_cells { self.z_max } else { self.z_min + k as f64 * dz }).collect()
    }
}

/// `Δ_c(z) = Δ_c0 + (Δ_c0 − Δ_cF)[tanh(1 − (z − z_q)/z_s) − 1]/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSpec {
    pub delta_c0: f64,
    pub delta_cf: f64,
    /// μm
    pub z_q: f64,
    /// μm
    pub z_s: f64,
}

impl RampSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_s > 0.0) {
            return Err(FitError::Config(format!("ramp width z_s must be positive (got {})", self.z_s)));
        }
        Ok(())
    }
}

pub fn detuning_ramp(z: f64, ramp: &RampSpec) -> f64 {
    ramp.delta_c0 + (ramp.delta_c0 - ramp.delta_cf) * ((1.0 - (z - ramp.z_q) / ramp.z_s).tanh() - 1.0) / 2.0
}

/// Where the control excitation sits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// Excitation fixed at `z_j`; `V(z) = −C₆/[(z−z_j)² + d²]³`, constant `Δ_c`.
    Localized { z_j: f64 },
    /// Co-propagating excitation: constant `V = −C₆/d⁶`, `Δ_c(z)` from the ramp.
    Ramp(RampSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    #[default]
    CwAdiabatic,
    TimeDependent,
}

/// Input envelope of the time-dependent mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseShape {
    /// `E(z_min, t) = exp(−((t − center)/width)²)`.
    Gaussian { center: f64, width: f64 },
    /// `E(z_min, t) = [1 + tanh((t − t_on)/rise)]/2`.
    Step { t_on: f64, rise: f64 },
    /// No input; `E(z, 0) = exp(−((z − center)/width)²)` inside the medium.
    InitialGaussian { center: f64, width: f64 },
}

impl PulseShape {
    fn input(&self, t: f64) -> f64 {
        match *self {
            PulseShape::Gaussian { center, width } => (-((t - center) / width).powi(2)).exp(),
            PulseShape::Step { t_on, rise } => 0.5 * (1.0 + ((t - t_on) / rise).tanh()),
            PulseShape::InitialGaussian { .. } => 0.0,
        }
    }

    fn initial(&self, z: f64) -> f64 {
        match *self {
            PulseShape::InitialGaussian { center, width } => (-((z - center) / width).powi(2)).exp(),
            _ => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let w = match *self {
            PulseShape::Gaussian { width, .. } | PulseShape::InitialGaussian { width, .. } => width,
            PulseShape::Step { rise, .. } => rise,
        };
        if !(w > 0.0) {
            return Err(FitError::Config("pulse width must be positive".into()));
        }
        Ok(())
    }
}

/// Settings of the time-dependent mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdOptions {
    pub pulse: PulseShape,
    /// Γ⁻¹
    pub t_final: f64,
    /// Γ⁻¹
    pub dt: f64,
    /// μm·Γ; the vacuum value when absent. Stationary transmission does not
    /// depend on it, so reduced values keep the CFL-limited step tractable.
    pub light_speed: Option<f64>,
    /// Store a field snapshot every this many steps.
    pub store_every: usize,
}

impl Default for TdOptions {
    fn default() -> Self {
        TdOptions {
            pulse: PulseShape::Step { t_on: 2.0, rise: 0.5 },
            t_final: 30.0,
            dt: 1e-3,
            light_speed: Some(100.0),
            store_every: 100,
        }
    }
}

impl TdOptions {
    pub fn light_speed(&self) -> f64 {
        self.light_speed.unwrap_or_else(crate::units::speed_of_light_um_gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub grid: Grid1D,
    /// `omega_p` is the reference probe Rabi frequency of a unit envelope.
    pub drive: DriveParams,
    pub rates: DecayRates,
    pub control_scheme: DriveScheme,
    /// Γ·μm⁶; `V = −C₆/r⁶`, so a repulsive shift needs `C₆ < 0`.
    pub c6: f64,
    /// Channel separation, μm.
    pub d: f64,
    pub scenario: Scenario,
    /// `g²𝒩/(2c)`, Γ/μm.
    pub kappa: f64,
    pub mode: PropagationMode,
    pub solver: SteadyStateOptions,
    pub td: TdOptions,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig::switch_ramp(0.0)
    }
}

/// Interaction strength at zero longitudinal offset used by the presets, Γ.
pub const PRESET_V_AB: f64 = 15.0;
/// Channel separation used by the presets, μm.
pub const PRESET_D: f64 = 6.0;

impl PropagationConfig {
    fn preset(scenario: Scenario, grid: Grid1D) -> Self {
        PropagationConfig {
            grid,
            drive: DriveParams::new(0.01, 3.0, 3.0, 0.0),
            rates: DecayRates::default(),
            control_scheme: DriveScheme::OnePhoton,
            c6: -PRESET_V_AB * PRESET_D.powi(6),
            d: PRESET_D,
            scenario,
            kappa: 0.05,
            mode: PropagationMode::CwAdiabatic,
            solver: SteadyStateOptions::default(),
            td: TdOptions::default(),
        }
    }

    /// Ω = Ω_c = 3, V_AB = 15 at d = 6 μm, excitation localized at z = 0,
    /// medium over [−20, 20] μm.
    pub fn switch_localized(delta_c: f64) -> Self {
        let mut c = PropagationConfig::preset(Scenario::Localized { z_j: 0.0 }, Grid1D { z_min: -20.0, z_max: 20.0, n_cells: 400 });
        c.drive.delta_c = delta_c;
        c
    }

    /// Same atoms, co-propagating control ramped from Δ_c0 = 30 to `delta_cf`
    /// around z_q = 20 μm (z_s = 2 μm), medium over [0, 100] μm.
    pub fn switch_ramp(delta_cf: f64) -> Self {
        let ramp = RampSpec { delta_c0: 30.0, delta_cf, z_q: 20.0, z_s: 2.0 };
        PropagationConfig::preset(Scenario::Ramp(ramp), Grid1D { z_min: 0.0, z_max: 100.0, n_cells: 500 })
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(FitError::Config(format!("kappa must be non-negative (got {})", self.kappa)));
        }
        if !(self.d > 0.0) {
            return Err(FitError::Config("channel separation d must be positive".into()));
        }
        if self.drive.omega_p == 0.0 {
            return Err(FitError::DivisionByZero("reference probe Rabi frequency must be non-zero"));
        }
        if let Scenario::Ramp(r) = &self.scenario {
            r.validate()?;
        }
        Ok(())
    }

    /// `(Δ_c, V)` seen by a cell at `z`.
    pub fn local_parameters(&self, z: f64) -> Result<(f64, f64)> {
        match &self.scenario {
            Scenario::Localized { z_j } => Ok((self.drive.delta_c, pair_potential(z - z_j, self.d, self.c6)?)),
            Scenario::Ramp(r) => Ok((detuning_ramp(z, r), pair_potential(0.0, self.d, self.c6)?)),
        }
    }

    fn space(&self) -> Result<CompositeSpace> {
        CompositeSpace::two_atom(self.d, self.control_scheme)
    }
}

/// Stationary response of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResponse {
    pub z: f64,
    pub delta_c: f64,
    pub v: f64,
    /// `ρ₂₁/Ω_p`
    pub chi: C64,
    pub rho33_a: f64,
    pub rho33_b: f64,
    pub rho31_b: C64,
}

fn cell_response(cfg: &PropagationConfig, space: &CompositeSpace, z: f64) -> Result<CellResponse> {
    let (delta_c, v) = cfg.local_parameters(z)?;
    let drive = cfg.drive.with_delta_c(delta_c);
    let h = crate::hilbert::build_hamiltonian(space, &drive, &InteractionSpec::two_atom(v))?;
    let l = Liouvillian::new(space, h, cfg.rates.dissipators(space))?;
    let rho = solve_steady_state(&l, &cfg.solver, None)?.rho;
    Ok(CellResponse {
        z,
        delta_c,
        v,
        chi: one_body(space, &rho, 0, 2, 1)? / cfg.drive.omega_p,
        rho33_a: one_body(space, &rho, 0, 3, 3)?.re,
        rho33_b: one_body(space, &rho, 1, 3, 3)?.re,
        rho31_b: one_body(space, &rho, 1, 3, 1)?,
    })
}

/// Cell responses at the grid nodes and cell midpoints; independent of κ.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptibilityProfile {
    pub grid: Grid1D,
    pub nodes: Vec<CellResponse>,
    pub midpoints: Vec<CellResponse>,
}

pub fn susceptibility_profile(cfg: &PropagationConfig) -> Result<SusceptibilityProfile> {
    cfg.validate()?;
    let space = cfg.space()?;
    let nodes = cfg.grid.nodes();
    let mids: Vec<f64> = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let solve = |zs: &[f64], offset: usize, stride: usize| -> Result<Vec<CellResponse>> {
        zs.par_iter()
            .enumerate()
            .map(|(k, &z)| cell_response(cfg, &space, z).map_err(|e| e.at_cell(offset + stride * k)))
            .collect()
    };
    // Cell indices count half-cells: nodes are even, midpoints odd.
    Ok(SusceptibilityProfile { grid: cfg.grid, nodes: solve(&nodes, 0, 2)?, midpoints: solve(&mids, 1, 2)? })
}

/// RK4 in z of `dE/dz = i κ χ(z) E` with `E(z_min) = 1`; returns `E` at the nodes.
pub fn integrate_field(profile: &SusceptibilityProfile, kappa: f64) -> Vec<C64> {
    let h = profile.grid.dz();
    let rate = |chi: C64| C64::new(0.0, kappa) * chi;
    let mut e = C64::new(1.0, 0.0);
    let mut out = Vec::with_capacity(profile.nodes.len());
    out.push(e);
    for (k, mid) in profile.midpoints.iter().enumerate() {
        let (a, m, b) = (rate(profile.nodes[k].chi), rate(mid.chi), rate(profile.nodes[k + 1].chi));
        let k1 = a * e;
        let k2 = m * (e + k1 * (0.5 * h));
        let k3 = m * (e + k2 * (0.5 * h));
        let k4 = b * (e + k3 * h);
        e += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(e);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationResult {
    pub mode: PropagationMode,
    pub kappa: f64,
    pub z: Vec<f64>,
    /// `I_s(z) = |E(z)|²/|E(z_min)|²`.
    pub intensity: Vec<f64>,
    pub rho33_a: Vec<f64>,
    pub rho33_b: Vec<f64>,
    pub re_rho31_b: Vec<f64>,
    pub delta_c: Vec<f64>,
    pub v: Vec<f64>,
    pub im_chi: Vec<f64>,
    /// `I_s(z_max)`.
    pub transmission: f64,
}

impl PropagationResult {
    /// Linear interpolation of `I_s` at `z`.
    pub fn intensity_at(&self, z: f64) -> f64 {
        interpolate(&self.z, &self.intensity, z)
    }

    /// First `z` at which `I_s` falls to `level` (linear interpolation).
    pub fn extinction_length(&self, level: f64) -> Option<f64> {
        let k = self.intensity.iter().position(|&i| i <= level)?;
        if k == 0 {
            return Some(self.z[0]);
        }
        let (i0, i1) = (self.intensity[k - 1], self.intensity[k]);
        Some(self.z[k - 1] + (self.z[k] - self.z[k - 1]) * (i0 - level) / (i0 - i1))
    }
}

fn interpolate(x: &[f64], y: &[f64], at: f64) -> f64 {
    if at <= x[0] {
        return y[0];
    }
    let k = x.partition_point(|&v| v < at);
    if k >= x.len() {
        return *y.last().expect("non-empty");
    }
    let t = (at - x[k - 1]) / (x[k] - x[k - 1]);
    y[k - 1] + t * (y[k] - y[k - 1])
}

fn assemble(profile: &SusceptibilityProfile, field: &[C64], kappa: f64, mode: PropagationMode) -> PropagationResult {
    let n = &profile.nodes;
    let intensity: Vec<f64> = field.iter().map(|e| e.norm_sqr()).collect();
    PropagationResult {
        mode,
        kappa,
        z: n.iter().map(|c| c.z).collect(),
        transmission: *intensity.last().expect("non-empty grid"),
        intensity,
        rho33_a: n.iter().map(|c| c.rho33_a).collect(),
        rho33_b: n.iter().map(|c| c.rho33_b).collect(),
        re_rho31_b: n.iter().map(|c| c.rho31_b.re).collect(),
        delta_c: n.iter().map(|c| c.delta_c).collect(),
        v: n.iter().map(|c| c.v).collect(),
        im_chi: n.iter().map(|c| c.chi.im).collect(),
    }
}

/// Steady-envelope propagation: local stationary states, RK4 in z.
pub fn propagate_cw(cfg: &PropagationConfig) -> Result<PropagationResult> {
    let profile = susceptibility_profile(cfg)?;
    Ok(assemble(&profile, &integrate_field(&profile, cfg.kappa), cfg.kappa, PropagationMode::CwAdiabatic))
}

/// Relative change of `T` when the probe Rabi frequency is halved.
pub fn linearity_defect(cfg: &PropagationConfig) -> Result<f64> {
    let full = propagate_cw(cfg)?.transmission;
    let mut half = cfg.clone();
    half.drive.omega_p *= 0.5;
    let halved = propagate_cw(&half)?.transmission;
    if full == 0.0 {
        return Ok(if halved == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((halved - full).abs() / full)
}

/// Largest accepted [`linearity_defect`].
pub const LINEARITY_TOLERANCE: f64 = 0.01;

/// Field snapshots and time-resolved output of the time-dependent mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TdResult {
    /// `I_s(z)`: time-integrated `|E|²` normalized by the input energy.
    pub result: PropagationResult,
    /// `|E(z, t_final)|²/|E(z_min, t_final)|²` (NaN when the input has ended).
    pub final_intensity: Vec<f64>,
    pub snapshot_times: Vec<f64>,
    /// `|E(z, t)|²` at the snapshot times.
    pub snapshots: Vec<Vec<f64>>,
    pub output_times: Vec<f64>,
    /// `|E(z_max, t)|²` at every step.
    pub output_intensity: Vec<f64>,
}

/// Joint time integration of the field and the per-cell master equations:
/// first-order upwind differencing in z, RK4 in t, CFL `c·dt ≤ dz`.
pub fn propagate_td(cfg: &PropagationConfig) -> Result<TdResult> {
    cfg.validate()?;
    let td = &cfg.td;
    td.pulse.validate()?;
    let c = td.light_speed();
    let dz = cfg.grid.dz();
    if !(td.dt > 0.0 && td.t_final > 0.0 && c > 0.0) {
        return Err(FitError::Config("time-dependent mode needs dt, t_final and light speed > 0".into()));
    }
    if c * td.dt > dz * (1.0 + 1e-12) {
        return Err(FitError::Config(format!("CFL condition violated: c·dt = {} > dz = {dz}", c * td.dt)));
    }
    let space = cfg.space()?;
    let dim = space.total_dim();
    let block = dim * dim;
    let z = cfg.grid.nodes();
    let n_nodes = z.len();
    let liouvillian = Liouvillian::new(&space, crate::linalg::identity(dim), cfg.rates.dissipators(&space))?;

    // Per-node static Hamiltonians and zero-probe initial states.
    let setup: Vec<(HamiltonianParts, DensityMatrix, CellResponse)> = z
        .par_iter()
        .enumerate()
        .map(|(k, &zk)| {
            let run = || -> Result<_> {
                let (delta_c, v) = cfg.local_parameters(zk)?;
                let drive = cfg.drive.with_delta_c(delta_c);
                let parts = hamiltonian_parts(&space, &drive, &InteractionSpec::two_atom(v))?;
                let l0 = liouvillian.with_hamiltonian(parts.with_probe(ZERO))?;
                let rho = solve_steady_state(&l0, &cfg.solver, None)?.rho;
                let resp = CellResponse { z: zk, delta_c, v, chi: ZERO, rho33_a: 0.0, rho33_b: 0.0, rho31_b: ZERO };
                Ok((parts, rho, resp))
            };
            run().map_err(|e| e.at_cell(k))
        })
        .collect::<Result<_>>()?;

    // Flat elements of ρ₂₁ = ⟨2|ρ|1⟩ of the target (site 0).
    let (i1, i2) = (space.site(0).index_of(1).expect("level 1"), space.site(0).index_of(2).expect("level 2"));
    let stride = space.stride(0);
    let coherence_pairs: Vec<usize> = (0..dim)
        .filter(|&i| space.local_index(i, 0) == i2)
        .map(|i| i * dim + (i - (i2 - i1) * stride))
        .collect();

    let omega_p = cfg.drive.omega_p;
    let coupling = C64::new(0.0, cfg.kappa * c / omega_p);
    let field_offset = n_nodes * block;
    let mut y = vec![ZERO; field_offset + n_nodes];
    for (k, (_, rho, _)) in setup.iter().enumerate() {
        y[k * block..(k + 1) * block].copy_from_slice(rho.matrix().as_slice().expect("standard layout"));
        y[field_offset + k] = C64::new(td.pulse.initial(z[k]), 0.0);
    }
    y[field_offset] = C64::new(td.pulse.input(0.0), 0.0);

    let ratio = td.t_final / td.dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 { ratio.round() as usize } else { ratio.ceil() as usize };
    let h = td.t_final / steps as f64;
    let store_every = td.store_every.max(1);
    let mut scratch = Rk4Scratch::default();
    let mut energy = vec![0.0; n_nodes];
    let mut snapshot_times = vec![0.0];
    let mut snapshots = vec![y[field_offset..].iter().map(|e| e.norm_sqr()).collect::<Vec<_>>()];
    let mut output_times = vec![0.0];
    let mut output_intensity = vec![y[field_offset + n_nodes - 1].norm_sqr()];
    for (k, e) in y[field_offset..].iter().enumerate() {
        energy[k] += 0.5 * h * e.norm_sqr();
    }

    for step in 1..=steps {
        let t0 = (step - 1) as f64 * h;
        let mut stage = 0usize;
        rk4_step(&mut y, h, &mut scratch, |state, out| {
            let t = t0 + [0.0, 0.5, 0.5, 1.0][stage] * h;
            stage += 1;
            let (atoms, field) = state.split_at(field_offset);
            let (d_atoms, d_field) = out.split_at_mut(field_offset);
            for k in 0..n_nodes {
                let e_k = if k == 0 { C64::new(td.pulse.input(t), 0.0) } else { field[k] };
                let hk = SparseHamiltonian::from_dense(&setup[k].0.with_probe(e_k * omega_p));
                let rho = &atoms[k * block..(k + 1) * block];
                liouvillian.apply_slice(&hk, rho, &mut d_atoms[k * block..(k + 1) * block]);
                d_field[k] = if k == 0 {
                    ZERO
                } else {
                    let rho21: C64 = coherence_pairs.iter().map(|&p| rho[p]).sum();
                    let upwind = field[k] - if k == 1 { C64::new(td.pulse.input(t), 0.0) } else { field[k - 1] };
                    -upwind * (c / dz) + coupling * rho21
                };
            }
        });
        y[field_offset] = C64::new(td.pulse.input(step as f64 * h), 0.0);
        if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(FitError::NumericalInstability { step, reason: "non-finite field or density matrix".into() });
        }
        let w = if step == steps { 0.5 * h } else { h };
        for (k, e) in y[field_offset..].iter().enumerate() {
            energy[k] += w * e.norm_sqr();
        }
        output_times.push(step as f64 * h);
        output_intensity.push(y[field_offset + n_nodes - 1].norm_sqr());
        if step % store_every == 0 || step == steps {
            snapshot_times.push(step as f64 * h);
            snapshots.push(y[field_offset..].iter().map(|e| e.norm_sqr()).collect());
        }
    }

    let input_energy = energy[0];
    let intensity: Vec<f64> =
        energy.iter().map(|e| if input_energy > 0.0 { e / input_energy } else { f64::NAN }).collect();
    let last_in = y[field_offset].norm_sqr();
    let final_intensity: Vec<f64> = y[field_offset..]
        .iter()
        .map(|e| if last_in > 1e-300 { e.norm_sqr() / last_in } else { f64::NAN })
        .collect();
    let mut nodes = Vec::with_capacity(n_nodes);
    for (k, (_, _, resp)) in setup.iter().enumerate() {
        let rho = DensityMatrix::from_matrix_unchecked(
            ndarray::Array2::from_shape_vec((dim, dim), y[k * block..(k + 1) * block].to_vec()).expect("shape"),
        );
        let probe = if k == 0 { C64::new(td.pulse.input(td.t_final), 0.0) } else { y[field_offset + k] } * omega_p;
        let chi = if probe.norm() > 0.0 { one_body(&space, &rho, 0, 2, 1)? / probe.norm() } else { ZERO };
        nodes.push(CellResponse {
            chi,
            rho33_a: one_body(&space, &rho, 0, 3, 3)?.re,
            rho33_b: one_body(&space, &rho, 1, 3, 3)?.re,
            rho31_b: one_body(&space, &rho, 1, 3, 1)?,
            ..*resp
        });
    }
    let mut result = PropagationResult {
        mode: PropagationMode::TimeDependent,
        kappa: cfg.kappa,
        z: z.clone(),
        transmission: *intensity.last().expect("non-empty"),
        intensity,
        rho33_a: nodes.iter().map(|c| c.rho33_a).collect(),
        rho33_b: nodes.iter().map(|c| c.rho33_b).collect(),
        re_rho31_b: nodes.iter().map(|c| c.rho31_b.re).collect(),
        delta_c: nodes.iter().map(|c| c.delta_c).collect(),
        v: nodes.iter().map(|c| c.v).collect(),
        im_chi: nodes.iter().map(|c| c.chi.im).collect(),
    };
    if result.transmission.is_nan() {
        result.transmission = 0.0;
    }
    Ok(TdResult { result, final_intensity, snapshot_times, snapshots, output_times, output_intensity })
}

/// Dispatches on `cfg.mode`.
pub fn propagate(cfg: &PropagationConfig) -> Result<PropagationResult> {
    match cfg.mode {
        PropagationMode::CwAdiabatic => propagate_cw(cfg),
        PropagationMode::TimeDependent => Ok(propagate_td(cfg)?.result),
    }
}

/// Target transmission of the calibration.
pub const CALIBRATION_TARGET: f64 = 0.01;
/// Accepted deviation from [`CALIBRATION_TARGET`].
pub const CALIBRATION_TOLERANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaCalibration {
    pub kappa: f64,
    pub length: f64,
    pub transmission: f64,
    pub iterations: usize,
}

/// Bisection on κ such that the blockade ramp (Δ_cF = 0) transmits
/// `T = 0.01` at `z_min + length`.
pub fn calibrate_kappa(length: f64, reference: &PropagationConfig) -> Result<KappaCalibration> {
    match &reference.scenario {
        Scenario::Ramp(r) if r.delta_cf == 0.0 => {}
        _ => return Err(FitError::Calibration("reference must be the blockade ramp (Δ_cF = 0)".into())),
    }
    if !(length > 0.0) {
        return Err(FitError::Calibration(format!("extinction length must be positive (got {length})")));
    }
    let mut cfg = reference.clone();
    cfg.grid = Grid1D::with_spacing(reference.grid.z_min, reference.grid.z_min + length, reference.grid.dz())?;
    let profile = susceptibility_profile(&cfg)?;
    let t_of = |kappa: f64| integrate_field(&profile, kappa).last().expect("non-empty").norm_sqr();

    let (mut lo, mut hi) = (0.0f64, 1e-3f64);
    let mut iterations = 0usize;
    while t_of(hi) > CALIBRATION_TARGET {
        lo = hi;
        hi *= 2.0;
        iterations += 1;
        if iterations > 80 || !hi.is_finite() {
            return Err(FitError::Calibration(format!(
                "no κ up to {hi:e} reaches T = {CALIBRATION_TARGET} within {length} μm (T = {})",
                t_of(hi)
            )));
        }
    }
    let mut kappa = hi;
    for _ in 0..200 {
        iterations += 1;
        kappa = 0.5 * (lo + hi);
        let t = t_of(kappa);
        if (t - CALIBRATION_TARGET).abs() < 1e-9 * CALIBRATION_TARGET || hi - lo < 1e-15 * hi {
            break;
        }
        if t > CALIBRATION_TARGET {
            lo = kappa;
        } else {
            hi = kappa;
        }
    }
    let transmission = t_of(kappa);
    if (transmission - CALIBRATION_TARGET).abs() > CALIBRATION_TOLERANCE {
        return Err(FitError::Calibration(format!("bisection ended at T = {transmission}")));
    }
    Ok(KappaCalibration { kappa, length, transmission, iterations })
}
