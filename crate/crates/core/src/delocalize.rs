//! Monte-Carlo averaging over the position of a delocalized control
//! excitation.
//!
//! Geometry: the channels run along z; the channel-separation vector is
//! `d = (d, 0, 0)`. A sampled offset `r_B` shifts the excitation along the
//! channel by `r_z` and changes the transverse separation to
//! `|(d + r_x, r_y)|`.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};
use crate::propagation::{propagate_cw, PropagationConfig, PropagationResult, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Isotropic three-dimensional Gaussian.
    #[default]
    ThreeD,
    /// Offsets along the channel axis only.
    OneD,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelocalizationSpec {
    /// Width σ of `f(r) ∝ exp(−r²/σ²)`, μm.
    pub sigma: f64,
    /// Channel separation, μm.
    pub d: f64,
    /// Γ·μm⁶
    pub c6: f64,
    pub n_trajectories: usize,
    pub rng_seed: u64,
    pub mode: SamplingMode,
}

/// Default trajectory count.
pub const DEFAULT_TRAJECTORIES: usize = 300;

impl Default for DelocalizationSpec {
    fn default() -> Self {
        DelocalizationSpec { sigma: 1.0, d: 6.0, c6: -15.0 * 6f64.powi(6), n_trajectories: DEFAULT_TRAJECTORIES, rng_seed: 1, mode: SamplingMode::ThreeD }
    }
}

impl DelocalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(FitError::Config(format!("sigma must be non-negative (got {})", self.sigma)));
        }
        if self.n_trajectories == 0 {
            return Err(FitError::Config("need at least one trajectory".into()));
        }
        if !(self.d > 0.0) {
            return Err(FitError::Config("channel separation d must be positive".into()));
        }
        Ok(())
    }

    /// Delocalization degree `σ/d`.
    pub fn degree(&self) -> f64 {
        self.sigma / self.d
    }
}

/// Offset of trajectory `index`: each component ~ N(0, σ²/2), drawn from a
/// ChaCha stream keyed by `(seed, index)`.
pub fn sample_offset(spec: &DelocalizationSpec, index: u64) -> [f64; 3] {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(index);
    let s = spec.sigma / SQRT_2;
    let mut draw = || -> f64 {
        let x: f64 = StandardNormal.sample(&mut rng);
        x * s
    };
    match spec.mode {
        SamplingMode::ThreeD => {
            let x = draw();
            let y = draw();
            let z = draw();
            [x, y, z]
        }
        SamplingMode::OneD => [0.0, 0.0, draw()],
    }
}

/// `V = −C₆/|d + r_B|⁶`.
pub fn effective_interaction(d_vec: [f64; 3], r_b: [f64; 3], c6: f64) -> Result<f64> {
    let r2: f64 = (0..3).map(|k| (d_vec[k] + r_b[k]).powi(2)).sum();
    if r2 == 0.0 {
        return Err(FitError::SingularGeometry);
    }
    Ok(-c6 / (r2 * r2 * r2))
}

/// Trajectory curves and their statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveStats {
    /// One row per successful trajectory, in trajectory order.
    pub trajectories: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Sample standard deviation / √n (NaN for n < 2).
    pub stderr: Vec<f64>,
}

impl CurveStats {
    /// Statistics with a shifted (first-row) origin, so identical rows give
    /// their common value back exactly.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let len = rows.first().map_or(0, |r| r.len());
        let mut mean = vec![0.0; len];
        let mut stderr = vec![f64::NAN; len];
        if n > 0 {
            for k in 0..len {
                let x0 = rows[0][k];
                let shift: f64 = rows.iter().map(|r| r[k] - x0).sum::<f64>() / n as f64;
                mean[k] = x0 + shift;
                if n > 1 {
                    let var = rows.iter().map(|r| (r[k] - x0 - shift).powi(2)).sum::<f64>() / (n - 1) as f64;
                    stderr[k] = (var / n as f64).sqrt();
                }
            }
        }
        CurveStats { trajectories: rows, mean, stderr }
    }

    /// Largest change of the mean caused by the last 10% of trajectories,
    /// relative to the largest mean magnitude.
    pub fn tail_change(&self) -> f64 {
        let n = self.trajectories.len();
        let head = n - n / 10;
        if n < 10 || head == n {
            return f64::INFINITY;
        }
        let partial = CurveStats::from_rows(self.trajectories[..head].to_vec()).mean;
        let scale = self.mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = self.mean.iter().zip(&partial).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if scale == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / scale
        }
    }
}

/// Convergence threshold on [`CurveStats::tail_change`].
pub const CONVERGENCE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub axis_name: String,
    pub axis: Vec<f64>,
    pub curves: BTreeMap<String, CurveStats>,
    pub seed: u64,
    pub n_requested: usize,
    /// Indices of trajectories that failed and were excluded.
    pub failed: Vec<usize>,
    pub offsets: Vec<[f64; 3]>,
    pub sigma_over_d: f64,
    /// Whether the last 10% of trajectories move the main mean by < 1%.
    pub converged: bool,
}

impl McResult {
    pub fn n_used(&self) -> usize {
        self.n_requested - self.failed.len()
    }

    pub fn curve(&self, name: &str) -> Option<&CurveStats> {
        self.curves.get(name)
    }
}

/// Localized scenario seen by one trajectory: the excitation moves to
/// `z_j + r_z` and the transverse separation becomes `|(d + r_x, r_y)|`.
fn displaced(base: &PropagationConfig, spec: &DelocalizationSpec, r: [f64; 3]) -> Result<PropagationConfig> {
    let mut cfg = base.clone();
    cfg.c6 = spec.c6;
    match base.scenario {
        Scenario::Localized { z_j } => {
            cfg.scenario = Scenario::Localized { z_j: z_j + r[2] };
            cfg.d = ((spec.d + r[0]).powi(2) + r[1].powi(2)).sqrt();
        }
        Scenario::Ramp(_) => {
            // Constant interaction with the full 3D separation.
            let v = effective_interaction([spec.d, 0.0, 0.0], r, spec.c6)?;
            cfg.d = spec.d;
            cfg.c6 = -v * spec.d.powi(6);
        }
    }
    if !(cfg.d > 0.0) {
        return Err(FitError::SingularGeometry);
    }
    Ok(cfg)
}

fn run_trajectories<F>(spec: &DelocalizationSpec, jobs: usize, job: F) -> (Vec<[f64; 3]>, Vec<Option<Vec<Vec<f64>>>>)
where
    F: Fn([f64; 3], usize) -> Result<Vec<f64>> + Sync,
{
    let offsets: Vec<[f64; 3]> = (0..spec.n_trajectories).map(|i| sample_offset(spec, i as u64)).collect();
    let flat: Vec<Result<Vec<f64>>> =
        (0..spec.n_trajectories * jobs).into_par_iter().map(|k| job(offsets[k / jobs], k % jobs)).collect();
    let mut per_traj = Vec::with_capacity(spec.n_trajectories);
    for chunk in flat.chunks(jobs) {
        let ok: Option<Vec<Vec<f64>>> = chunk.iter().map(|r| r.as_ref().ok().cloned()).collect();
        per_traj.push(ok);
    }
    (offsets, per_traj)
}

fn finish(
    spec: &DelocalizationSpec,
    axis_name: &str,
    axis: Vec<f64>,
    offsets: Vec<[f64; 3]>,
    rows: Vec<Option<Vec<Vec<f64>>>>,
    names: &[&str],
) -> Result<McResult> {
    let failed: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(i, _)| i).collect();
    if failed.len() == rows.len() {
        return Err(FitError::NotConverged { residual: f64::NAN, time: 0.0 });
    }
    if !failed.is_empty() {
        log::warn!("{} of {} trajectories failed and were excluded", failed.len(), rows.len());
    }
    let good: Vec<Vec<Vec<f64>>> = rows.into_iter().flatten().collect();
    let mut curves = BTreeMap::new();
    for (c, name) in names.iter().enumerate() {
        curves.insert(name.to_string(), CurveStats::from_rows(good.iter().map(|g| g[c].clone()).collect()));
    }
    let converged = curves[names[0]].tail_change() < CONVERGENCE_THRESHOLD;
    Ok(McResult {
        axis_name: axis_name.into(),
        axis,
        curves,
        seed: spec.rng_seed,
        n_requested: spec.n_trajectories,
        failed,
        offsets,
        sigma_over_d: spec.degree(),
        converged,
    })
}

/// Mean transmission versus Δ_c for a localized-scenario base configuration.
pub fn mc_spectrum(spec: &DelocalizationSpec, base: &PropagationConfig, delta_c_grid: &[f64]) -> Result<McResult> {
    spec.validate()?;
    base.validate()?;
    crate::observables::validate_grid(delta_c_grid, "Δ_c")?;
    if !matches!(base.scenario, Scenario::Localized { .. }) {
        return Err(FitError::Config("transmission spectra need a localized-excitation configuration".into()));
    }
    let (offsets, per_traj) = run_trajectories(spec, delta_c_grid.len(), |r, j| {
        let mut cfg = displaced(base, spec, r)?;
        cfg.drive.delta_c = delta_c_grid[j];
        Ok(vec![propagate_cw(&cfg)?.transmission])
    });
    // Reshape from per-Δ_c scalars to one transmission curve per trajectory.
    let rows = per_traj.into_iter().map(|t| t.map(|pts| vec![pts.into_iter().map(|p| p[0]).collect()])).collect();
    finish(spec, "delta_c", delta_c_grid.to_vec(), offsets, rows, &["transmission"])
}

/// Curve names of [`mc_switch`].
pub const SWITCH_CURVES: [&str; 4] = ["intensity", "rho33_a", "rho33_b", "re_rho31_b"];

/// Switch profiles `I_s(z)`, ρ₃₃ᴬ, ρ₃₃ᴮ, Re ρ₃₁ᴮ for a ramp configuration.
pub fn mc_switch(spec: &DelocalizationSpec, ramp: &PropagationConfig) -> Result<McResult> {
    spec.validate()?;
    ramp.validate()?;
    if !matches!(ramp.scenario, Scenario::Ramp(_)) {
        return Err(FitError::Config("switch runs need a ramp configuration".into()));
    }
    let (offsets, per_traj) = run_trajectories(spec, 1, |r, _| {
        let res = propagate_cw(&displaced(ramp, spec, r)?)?;
        Ok(flatten(&res))
    });
    let n = ramp.grid.n_cells + 1;
    let rows = per_traj.into_iter().map(|t| t.map(|mut v| unflatten(v.remove(0), n))).collect();
    finish(spec, "z", ramp.grid.nodes(), offsets, rows, &SWITCH_CURVES)
}

fn flatten(r: &PropagationResult) -> Vec<f64> {
    [&r.intensity, &r.rho33_a, &r.rho33_b, &r.re_rho31_b].into_iter().flatten().copied().collect()
}

fn unflatten(v: Vec<f64>, n: usize) -> Vec<Vec<f64>> {
    v.chunks(n).map(|c| c.to_vec()).collect()
}
