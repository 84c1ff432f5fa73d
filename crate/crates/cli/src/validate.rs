//! Quick invariant suite: closed-form oracles and structural properties that
//! should hold on any build, in a few seconds.

use ndarray::{arr1, Array2};
use serde_json::json;

use rydfit_core::dressed::{dressed_hamiltonian, energy_gap, resonance_detunings};
use rydfit_core::hilbert::{build_hamiltonian, AtomSite, CompositeSpace, DriveParams, DriveScheme, InteractionSpec};
use rydfit_core::lindblad::{
    evolve, solve_steady_state, Decay, DensityMatrix, DissipatorSpec, EvolveOptions, Liouvillian,
    SteadyStateMethod, SteadyStateOptions, Tolerances,
};
use rydfit_core::linalg::{det, max_abs, trace, C64};
use rydfit_core::observables::{coherence_spectrum, default_delta_c_grid, SystemConfig};
use rydfit_core::propagation::{linearity_defect, Grid1D, PropagationConfig, LINEARITY_TOLERANCE};

use crate::commands::Outcome;
use crate::error::CliError;
use crate::output::Table;

pub const ORACLE_TOL: f64 = 1e-6;
pub const RK4_MIN_ORDER: f64 = 3.8;
pub const DET_TOL: f64 = 1e-8;
pub const GAP_IDENTITY_TOL: f64 = 1e-12;
pub const RECONSTRUCTION_RMS_TOL: f64 = 0.15;
pub const GENERATOR_TRACE_TOL: f64 = 1e-11;

/// Comparison direction of a check.
enum Bound {
    Below(f64),
    Above(f64),
}

struct Checks {
    table: Table,
    failed: Vec<String>,
}

impl Checks {
    fn record(&mut self, name: &str, value: f64, bound: Bound) {
        let (limit, passed) = match bound {
            Bound::Below(b) => (b, value < b),
            Bound::Above(b) => (b, value > b),
        };
        log::info!("{name}: {value:.3e} (bound {limit:e}) {}", if passed { "ok" } else { "FAILED" });
        if !passed {
            self.failed.push(name.to_string());
        }
        self.table.push_labelled(name, vec![value, limit, if passed { 1.0 } else { 0.0 }]);
    }
}

fn control_qubit() -> Result<CompositeSpace, CliError> {
    Ok(CompositeSpace::new(vec![AtomSite::control([0.0; 3], DriveScheme::OnePhoton)])?)
}

fn rabi(omega_c: f64) -> Result<Liouvillian, CliError> {
    let space = control_qubit()?;
    let h = build_hamiltonian(&space, &DriveParams::new(0.0, 0.0, omega_c, 0.0), &InteractionSpec::default())?;
    Ok(Liouvillian::new(&space, h, DissipatorSpec::default())?)
}

fn excited_population(l: &Liouvillian, t: f64, dt: f64) -> Result<f64, CliError> {
    let opts = EvolveOptions { store_every: usize::MAX, ..Default::default() };
    Ok(evolve(l, &DensityMatrix::ground(l.space()), t, dt, &opts)?.last().matrix()[[1, 1]].re)
}

fn two_atom(delta_c: f64) -> Result<Liouvillian, CliError> {
    let c = SystemConfig::reference(15.0);
    let space = c.space()?;
    Ok(c.liouvillian(&space, delta_c)?)
}

pub fn run() -> Result<Outcome, CliError> {
    let mut checks = Checks { table: Table::new("validate", &["value", "bound", "passed"]).with_label("check"), failed: Vec::new() };

    // Undamped Rabi oscillation, ρ₃₃ = sin²(Ω_c t/2).
    let l = rabi(2.0)?;
    let mut worst = 0.0f64;
    for t in [0.5, 1.7, 3.1, 6.0] {
        worst = worst.max((excited_population(&l, t, 1e-3)? - (t).sin().powi(2)).abs());
    }
    checks.record("rabi_oscillation", worst, Bound::Below(ORACLE_TOL));

    // Observed RK4 order on the same problem.
    let exact = 10.0f64.sin().powi(2);
    let err = |dt: f64| -> Result<f64, CliError> { Ok((excited_population(&l, 10.0, dt)? - exact).abs()) };
    checks.record("rk4_order", (err(0.1)? / err(0.05)?).log2(), Bound::Above(RK4_MIN_ORDER));

    // Spontaneous decay of |+⟩: population e^{−Γt}, coherence e^{−Γt/2}.
    let gamma = 0.8;
    let diss = DissipatorSpec { decays: vec![Decay { site: 0, from: 3, to: 1, rate: gamma }], dephasings: vec![] };
    let decay = Liouvillian::new(&control_qubit()?, Array2::zeros((2, 2)), diss)?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus = DensityMatrix::pure(&arr1(&[C64::new(s, 0.0), C64::new(s, 0.0)]))?;
    let traj = evolve(&decay, &plus, 4.0, 1e-3, &EvolveOptions { store_every: 500, ..Default::default() })?;
    let worst = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, rho)| {
            let m = rho.matrix();
            (m[[1, 1]].re - 0.5 * (-gamma * t).exp()).abs().max((m[[0, 1]].norm() - 0.5 * (-gamma * t / 2.0).exp()).abs())
        })
        .fold(0.0, f64::max);
    checks.record("spontaneous_decay", worst, Bound::Below(ORACLE_TOL));

    // Trace and positivity over a long driven-dissipative run.
    let tol = Tolerances::default();
    let l = two_atom(-15.0)?;
    let opts = EvolveOptions { store_every: 500, ..Default::default() };
    let traj = evolve(&l, &DensityMatrix::ground(l.space()), 100.0, 1e-2, &opts)?;
    let mut trace_dev = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for rho in &traj.states {
        trace_dev = trace_dev.max((rho.trace() - C64::new(1.0, 0.0)).norm());
        min_eig = min_eig.min(rho.min_eigenvalue()?);
    }
    checks.record("long_run_trace", trace_dev, Bound::Below(tol.trace));
    checks.record("long_run_min_eigenvalue", min_eig, Bound::Above(-tol.positivity));

    // Direct and iterative steady states agree.
    let solve = |method| solve_steady_state(&l, &SteadyStateOptions { method, ..Default::default() }, None);
    let direct = solve(SteadyStateMethod::Direct)?;
    let mut worst = 0.0f64;
    for m in [SteadyStateMethod::Krylov, SteadyStateMethod::Relaxation] {
        worst = worst.max(max_abs(&(solve(m)?.rho.matrix() - direct.rho.matrix())));
    }
    checks.record("steady_state_methods", worst, Bound::Below(ORACLE_TOL));

    // Generator is traceless on a generic Hermitian input.
    let h = Array2::from_shape_fn((6, 6), |(i, j)| C64::new((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.07));
    let h = &h + &h.t().mapv(|z| z.conj());
    checks.record("generator_trace", trace(&l.apply(&h)?).norm(), Bound::Below(GENERATOR_TRACE_TOL));

    // Dressed-state resonances: det H₀ vanishes and Δc⁺ − Δc⁻ equals ΔE.
    let (mut worst_det, mut worst_gap) = (0.0f64, 0.0f64);
    for om in [0.5, 3.0, 7.5] {
        for omc in [1.0, 3.0, 9.0] {
            for v in [0.0, 4.0, 15.0, 29.0] {
                let (p, m) = resonance_detunings(om, omc, v)?;
                for dc in [p, m] {
                    worst_det = worst_det.max(det(&dressed_hamiltonian(om, omc, dc, v))?.norm());
                }
                worst_gap = worst_gap.max(((p - m) - energy_gap(om, omc, v)?).abs());
            }
        }
    }
    checks.record("dressed_determinant", worst_det, Bound::Below(DET_TOL));
    checks.record("gap_identity", worst_gap, Bound::Below(GAP_IDENTITY_TOL));

    // Correlator form of ρ₂₁ reproduces the full solution.
    let sp = coherence_spectrum(&SystemConfig::reference(15.0), &default_delta_c_grid(15.0))?;
    let n = sp.len() as f64;
    let diff = sp.im_rho21.iter().zip(&sp.im_rho21_approx).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let norm = sp.im_rho21.iter().map(|a| a * a).sum::<f64>() / n;
    checks.record("correlator_reconstruction", (diff / norm).sqrt(), Bound::Below(RECONSTRUCTION_RMS_TOL));

    // Weak-probe linearity of the switch.
    let mut sw = PropagationConfig::switch_ramp(-15.0);
    sw.grid = Grid1D::new(0.0, 100.0, 100)?;
    sw.kappa = 0.0856;
    checks.record("switch_linearity", linearity_defect(&sw)?, Bound::Below(LINEARITY_TOLERANCE));

    let summary = json!({ "checks": checks.table.rows.len(), "failed": checks.failed });
    Ok(Outcome { tables: vec![checks.table], summary, failed_checks: checks.failed, ..Default::default() })
}
