//! One function per subcommand: resolved configuration in, tables out.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Value};

use rydfit_core::delocalize::{mc_spectrum, mc_switch, DelocalizationSpec, McResult, SWITCH_CURVES};
use rydfit_core::dressed::{dressed_hamiltonian, eigencurves, energy_gap, resonance_detunings};
use rydfit_core::error::FitError;
use rydfit_core::linalg::det;
use rydfit_core::observables::{coherence_spectrum_with, linspace, multi_target_spectrum, validate_grid, RingGeometry, SystemConfig};
use rydfit_core::propagation::{
    calibrate_kappa, propagate_cw, propagate_td, KappaCalibration, PropagationConfig, PropagationMode, PropagationResult,
    Scenario,
};

use crate::config::{DressedSection, GridSpec, MonteCarloSection, MultichannelSection, SpectrumSection, SwitchSection};
use crate::error::CliError;
use crate::output::Table;

/// Extinction level reported for switch runs.
pub const EXTINCTION_LEVEL: f64 = 0.05;

#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Value,
    pub seeds: BTreeMap<String, u64>,
    /// Names of failed checks; outputs are still written.
    pub failed_checks: Vec<String>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<PropagationMode>,
}

fn grid_values(grid: &Option<GridSpec>) -> Result<Vec<f64>, CliError> {
    let values = grid.as_ref().expect("grids are filled by resolve").values();
    validate_grid(&values, "Δ_c")?;
    Ok(values)
}

fn bool_f64(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

// ── spectrum ───────────────────────────────────────────────────────────────

pub fn spectrum(s: &SpectrumSection) -> Result<Outcome, CliError> {
    let grid = grid_values(&s.grid)?;
    let sp = coherence_spectrum_with(&s.system, &grid, s.prominence)?;
    let mut t = Table::new(
        "spectrum",
        &[
            "delta_c",
            "re_rho21",
            "im_rho21",
            "im_rho21_approx",
            "rho33_a",
            "rho33_b",
            "re_correlator",
            "im_correlator",
            "re_o_ab",
            "im_o_ab",
            "mandel_q",
            "fidelity_b",
            "fidelity_f",
        ],
    );
    for k in 0..sp.len() {
        t.push(vec![
            sp.delta_c[k],
            sp.re_rho21[k],
            sp.im_rho21[k],
            sp.im_rho21_approx[k],
            sp.rho33_a[k],
            sp.rho33_b[k],
            sp.re_correlator[k],
            sp.im_correlator[k],
            sp.re_o_ab[k],
            sp.im_o_ab[k],
            sp.mandel_q[k],
            sp.fidelity_b[k],
            sp.fidelity_f[k],
        ]);
    }
    let mut peaks = Table::new("peaks", &["position", "height", "prominence"]);
    for p in &sp.peaks {
        peaks.push(vec![p.position, p.height, p.prominence]);
    }
    let drive = &s.system.drive;
    let summary = json!({
        "peaks": sp.peaks.iter().map(|p| p.position).collect::<Vec<_>>(),
        "peak_separation": sp.peak_separation(),
        "effective_rabi": drive.two_photon.map(|tp| tp.effective_rabi()),
        "dressed_resonances": if drive.two_photon.is_none() { resonance_detunings(drive.omega, drive.omega_c, s.system.v_ab).ok() } else { None },
    });
    Ok(Outcome { tables: vec![t, peaks], summary, ..Default::default() })
}

// ── dressed ────────────────────────────────────────────────────────────────

/// Zero-energy detunings located numerically: sign changes of `det H0` on a
/// fine scan, refined by bisection. NaN pair unless exactly two are found.
fn numeric_resonances(omega: f64, omega_c: f64, v: f64) -> Result<(f64, f64), CliError> {
    let f = |dc: f64| -> Result<f64, CliError> { Ok(det(&dressed_hamiltonian(omega, omega_c, dc, v))?.re) };
    let reach = v.abs() + (omega * omega - omega_c * omega_c).abs() / omega + 1.0;
    let scan = linspace(-reach, reach, 4001);
    let mut roots = Vec::new();
    let mut prev = (scan[0], f(scan[0])?);
    for &x in &scan[1..] {
        let fx = f(x)?;
        if fx == 0.0 {
            roots.push(x);
        } else if prev.1 * fx < 0.0 {
            let (mut lo, mut hi, mut flo) = (prev.0, x, prev.1);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid)?;
                if fm == 0.0 || hi - lo < 1e-15 * hi.abs().max(1.0) {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev = (x, fx);
    }
    Ok(match roots.as_slice() {
        [m, p] => (*p, *m),
        _ => (f64::NAN, f64::NAN),
    })
}

pub fn dressed(s: &DressedSection) -> Result<Outcome, CliError> {
    if s.omega_c.is_empty() || s.v_ab.is_empty() {
        return Err(CliError::Config("dressed needs at least one omega_c and one v_ab".into()));
    }
    let grid = grid_values(&s.grid)?;
    let mut curves = Table::new("eigencurves", &["omega_c", "delta_c", "e0", "e1", "e2", "e3"]);
    for &oc in &s.omega_c {
        for r in eigencurves(s.omega, oc, s.eigencurve_v_ab, &grid)? {
            let e = &r.eigenvalues;
            curves.push(vec![oc, r.delta_c, e[0], e[1], e[2], e[3]]);
        }
    }
    let jobs: Vec<(f64, f64)> = s.omega_c.iter().flat_map(|&oc| s.v_ab.iter().map(move |&v| (oc, v))).collect();
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(oc, v)| -> Result<Vec<f64>, CliError> {
            let (p, m) = resonance_detunings(s.omega, oc, v)?;
            let (pn, mn) = numeric_resonances(s.omega, oc, v)?;
            let measured = if s.measure_spectrum {
                let mut c = SystemConfig::reference(v);
                c.drive.omega = s.omega;
                c.drive.omega_c = oc;
                c.rates.control_31 = s.control_decay;
                let g = rydfit_core::observables::default_delta_c_grid(v.max(1.0));
                coherence_spectrum_with(&c, &g, rydfit_core::observables::DEFAULT_PEAK_PROMINENCE)?.peak_separation().unwrap_or(f64::NAN)
            } else {
                f64::NAN
            };
            Ok(vec![s.omega, oc, v, energy_gap(s.omega, oc, v)?, v, p, m, pn, mn, measured])
        })
        .collect::<Result<_, _>>()?;
    let mut gaps = Table::new(
        "gap_scaling",
        &[
            "omega",
            "omega_c",
            "v_ab",
            "delta_e",
            "delta_e_reference",
            "delta_c_plus",
            "delta_c_minus",
            "delta_c_plus_numeric",
            "delta_c_minus_numeric",
            "delta_e_spectrum",
        ],
    );
    rows.into_iter().for_each(|r| gaps.push(r));
    let worst = gaps.rows.iter().map(|r| (r[5] - r[7]).abs().max((r[6] - r[8]).abs())).fold(0.0, f64::max);
    let summary = json!({ "max_analytic_numeric_difference": worst });
    Ok(Outcome { tables: vec![curves, gaps], summary, ..Default::default() })
}

// ── switch ─────────────────────────────────────────────────────────────────

const PROFILE_COLUMNS: [&str; 8] = ["z", "delta_c", "v", "intensity", "im_chi", "rho33_a", "rho33_b", "re_rho31_b"];

fn profile_rows(table: &mut Table, setting: f64, r: &PropagationResult) {
    for k in 0..r.z.len() {
        table.push(vec![setting, r.z[k], r.delta_c[k], r.v[k], r.intensity[k], r.im_chi[k], r.rho33_a[k], r.rho33_b[k], r.re_rho31_b[k]]);
    }
}

fn with_setting(first: &str) -> Vec<&str> {
    std::iter::once(first).chain(PROFILE_COLUMNS).collect()
}

/// Calibrates κ on the blockade version (Δ_cF = 0) of a ramp configuration.
fn calibrate_on(ramp_cfg: &PropagationConfig, length: f64) -> Result<KappaCalibration, CliError> {
    let mut blockade = ramp_cfg.clone();
    match &mut blockade.scenario {
        Scenario::Ramp(r) => r.delta_cf = 0.0,
        Scenario::Localized { .. } => return Err(CliError::Config("κ calibration needs a ramp configuration".into())),
    }
    Ok(calibrate_kappa(length, &blockade)?)
}

struct SwitchRun {
    result: PropagationResult,
    output: Option<(Vec<f64>, Vec<f64>)>,
}

fn run_switch(cfg: &PropagationConfig) -> Result<SwitchRun, FitError> {
    match cfg.mode {
        PropagationMode::CwAdiabatic => Ok(SwitchRun { result: propagate_cw(cfg)?, output: None }),
        PropagationMode::TimeDependent => {
            let td = propagate_td(cfg)?;
            Ok(SwitchRun { result: td.result, output: Some((td.output_times, td.output_intensity)) })
        }
    }
}

pub fn switch(s: &SwitchSection, over: Overrides) -> Result<Outcome, CliError> {
    let mut base = s.base.clone();
    if let Some(m) = over.mode {
        base.mode = m;
    }
    let Scenario::Ramp(ramp) = base.scenario else {
        return Err(CliError::Config("switch.base.scenario must be a ramp (kind = \"ramp\")".into()));
    };
    if s.ramp_delta_cf.is_empty() && s.localized_delta_c.is_empty() {
        return Err(CliError::Config("switch needs ramp_delta_cf or localized_delta_c values".into()));
    }
    let calibration = s.calibrate_length.map(|len| calibrate_on(&base, len)).transpose()?;
    if let Some(c) = &calibration {
        base.kappa = c.kappa;
    }

    let mut configs: Vec<(bool, f64, PropagationConfig)> = Vec::new();
    for &dc in &s.localized_delta_c {
        let mut c = base.clone();
        c.scenario = Scenario::Localized { z_j: s.localized_z_j };
        c.grid = s.localized_grid;
        c.drive.delta_c = dc;
        configs.push((false, dc, c));
    }
    for &dcf in &s.ramp_delta_cf {
        let mut c = base.clone();
        c.scenario = Scenario::Ramp(rydfit_core::propagation::RampSpec { delta_cf: dcf, ..ramp });
        configs.push((true, dcf, c));
    }
    let runs: Vec<SwitchRun> = configs.par_iter().map(|(_, _, c)| run_switch(c)).collect::<Result<_, _>>()?;

    let mut localized = Table::new("localized", &with_setting("delta_c_setting"));
    let mut ramped = Table::new("ramp", &with_setting("delta_cf"));
    let mut transmission = Table::new("transmission", &["is_ramp", "setting", "transmission", "extinction_z"]);
    let mut td_output = Table::new("td_output", &["is_ramp", "setting", "t", "output_intensity"]);
    for ((is_ramp, setting, _), run) in configs.iter().zip(&runs) {
        let r = &run.result;
        profile_rows(if *is_ramp { &mut ramped } else { &mut localized }, *setting, r);
        let ext = r.extinction_length(EXTINCTION_LEVEL).unwrap_or(f64::NAN);
        transmission.push(vec![bool_f64(*is_ramp), *setting, r.transmission, ext]);
        if let Some((times, out)) = &run.output {
            for (t, i) in times.iter().zip(out) {
                td_output.push(vec![bool_f64(*is_ramp), *setting, *t, *i]);
            }
        }
    }
    let mut tables = vec![localized, ramped, transmission];
    if let Some(c) = &calibration {
        let mut t = Table::new("calibration", &["length", "kappa", "transmission", "iterations"]);
        t.push(vec![c.length, c.kappa, c.transmission, c.iterations as f64]);
        tables.push(t);
    }
    if base.mode == PropagationMode::TimeDependent {
        tables.push(td_output);
    }
    tables.retain(|t| !t.rows.is_empty());
    let summary = json!({
        "kappa": base.kappa,
        "calibrated": calibration.is_some(),
        "mode": base.mode,
        "extinction_level": EXTINCTION_LEVEL,
    });
    Ok(Outcome { tables, summary, ..Default::default() })
}

// ── montecarlo ─────────────────────────────────────────────────────────────

fn mc_summary(d: f64, r: &McResult) -> Value {
    json!({ "d": d, "n_used": r.n_used(), "failed": r.failed, "converged": r.converged, "sigma_over_d": r.sigma_over_d })
}

pub fn montecarlo(s: &MonteCarloSection, over: Overrides) -> Result<Outcome, CliError> {
    if s.d.is_empty() || !(s.spectrum || s.switch) {
        return Err(CliError::Config("montecarlo needs at least one d and spectrum or switch enabled".into()));
    }
    let seed = over.seed.unwrap_or(s.seed);
    let grid = grid_values(&s.grid)?;
    let kappa = s.calibrate_length.map(|len| calibrate_on(&s.ramp, len)).transpose()?.map(|c| c.kappa);

    let geometry = |cfg: &PropagationConfig, d: f64| {
        let mut c = cfg.clone();
        c.d = d;
        c.c6 = -s.v0 * d.powi(6);
        if let Some(k) = kappa {
            c.kappa = k;
        }
        c
    };
    let spec = |d: f64, sigma: f64, n: usize| DelocalizationSpec {
        sigma,
        d,
        c6: -s.v0 * d.powi(6),
        n_trajectories: n,
        rng_seed: seed,
        mode: s.sampling,
    };

    let mut spectrum = Table::new("mc_spectrum", &["d", "delta_c", "localized", "mean", "stderr"]);
    let mut switch_cols = vec!["d", "z", "localized_intensity"];
    let stat_names: Vec<String> = SWITCH_CURVES.iter().flat_map(|c| [format!("{c}_mean"), format!("{c}_stderr")]).collect();
    switch_cols.extend(stat_names.iter().map(String::as_str));
    let mut switch = Table::new("mc_switch", &switch_cols);
    let mut offsets = Table::new("offsets", &["d", "trajectory", "x", "y", "z"]);
    let mut summaries = Vec::new();

    for &d in &s.d {
        let mut last: Option<McResult> = None;
        if s.spectrum {
            let base = geometry(&s.localized, d);
            let loc = mc_spectrum(&spec(d, 0.0, 1), &base, &grid)?;
            let mc = mc_spectrum(&spec(d, s.sigma, s.n_trajectories), &base, &grid)?;
            let (l, m) = (loc.curve("transmission").expect("curve"), mc.curve("transmission").expect("curve"));
            for k in 0..grid.len() {
                spectrum.push(vec![d, grid[k], l.mean[k], m.mean[k], m.stderr[k]]);
            }
            summaries.push(json!({ "kind": "spectrum", "stats": mc_summary(d, &mc) }));
            last = Some(mc);
        }
        if s.switch {
            let ramp = geometry(&s.ramp, d);
            let loc = propagate_cw(&ramp)?;
            let mc = mc_switch(&spec(d, s.sigma, s.n_trajectories), &ramp)?;
            for k in 0..mc.axis.len() {
                let mut row = vec![d, mc.axis[k], loc.intensity[k]];
                for c in SWITCH_CURVES {
                    let st = mc.curve(c).expect("curve");
                    row.extend([st.mean[k], st.stderr[k]]);
                }
                switch.push(row);
            }
            summaries.push(json!({ "kind": "switch", "stats": mc_summary(d, &mc) }));
            last = Some(mc);
        }
        let mc = last.expect("at least one run");
        for (i, r) in mc.offsets.iter().enumerate() {
            offsets.push(vec![d, i as f64, r[0], r[1], r[2]]);
        }
    }

    // Seed-repeat determinism on a reduced problem.
    let probe = geometry(&s.localized, s.d[0]);
    let short: Vec<f64> = grid.iter().step_by((grid.len() / 5).max(1)).copied().take(5).collect();
    let small = spec(s.d[0], s.sigma, s.n_trajectories.min(4));
    let deterministic = mc_spectrum(&small, &probe, &short)? == mc_spectrum(&small, &probe, &short)?;
    let mut failed_checks = Vec::new();
    if !deterministic {
        failed_checks.push("seed-repeat determinism".to_string());
    }

    let tables = [spectrum, switch, offsets].into_iter().filter(|t| !t.rows.is_empty()).collect();
    let summary = json!({ "kappa": kappa, "runs": summaries, "seed_repeat_identical": deterministic });
    Ok(Outcome { tables, summary, seeds: BTreeMap::from([("montecarlo".to_string(), seed)]), failed_checks })
}

// ── multichannel ───────────────────────────────────────────────────────────

pub fn multichannel(s: &MultichannelSection) -> Result<Outcome, CliError> {
    if s.n_targets.is_empty() || s.v_tt.is_empty() {
        return Err(CliError::Config("multichannel needs n_targets and v_tt values".into()));
    }
    let grid = grid_values(&s.grid)?;
    let mut table = Table::new("multichannel", &["n_targets", "v_tt", "delta_c", "im_rho21", "im_rho21_shift", "rho33_targets", "rho33_control"]);
    let mut peaks = Table::new("peaks", &["n_targets", "v_tt", "position", "height", "prominence"]);
    for &n in &s.n_targets {
        let r = multi_target_spectrum(&RingGeometry::regular(n, s.r_fac), &s.system, s.v_ct, &s.v_tt, &grid)?;
        let reference = &r.im_rho21[0];
        for (row, &v_tt) in s.v_tt.iter().enumerate() {
            for k in 0..grid.len() {
                let im = r.im_rho21[row][k];
                table.push(vec![n as f64, v_tt, grid[k], im, im - reference[k], r.rho33_targets[row][k], r.rho33_control[row][k]]);
            }
            for p in &r.peaks[row] {
                peaks.push(vec![n as f64, v_tt, p.position, p.height, p.prominence]);
            }
        }
    }
    let summary = json!({ "shift_reference_v_tt": s.v_tt[0] });
    Ok(Outcome { tables: vec![table, peaks], summary, ..Default::default() })
}
