//! Lindblad generator for decay and dephasing channels, time evolution and
//! stationary states.
//!
//! The generator is
//!
//! ```text
//! dρ/dt = −i[H, ρ]
//!       + Σ Γ_ba ( σ_ba ρ σ_ab − ½{σ_ab σ_ba, ρ} )          decay a → b
//!       + Σ γ_a  ( 2 σ_aa ρ σ_aa − {σ_aa, ρ} )               dephasing of a
//! ```
//!
//! Note the dephasing term carries twice the weight of the standard Lindblad
//! form with jump operator `√γ σ_aa`: a coherence between `|a⟩` and any other
//! level is damped at rate `γ_a`, not `γ_a / 2`. Halve the inputs to compare
//! with codes using the standard normalization.
//!
//! Two independent evaluation routes exist. [`Liouvillian::apply`] works
//! directly on basis indices without forming any superoperator;
//! [`assemble_superoperator`] builds the dense `dim² × dim²` matrix from
//! Kronecker products of embedded operators (column-major vectorization,
//! `vec(AXB) = (Bᵀ ⊗ A) vec(X)`).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};
use crate::hilbert::{CompositeSpace, DriveScheme, Role};
use crate::linalg::{
    dagger, eigh, hermiticity_defect, trace, unvec_col_major, CMatrix, CVector, Lu, C64, I, ONE, ZERO,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub site: usize,
    /// Upper level `a`.
    pub from: usize,
    /// Lower level `b`.
    pub to: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dephasing {
    pub site: usize,
    pub level: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DissipatorSpec {
    pub decays: Vec<Decay>,
    pub dephasings: Vec<Dephasing>,
}

impl DissipatorSpec {
    pub fn validate(&self, space: &CompositeSpace) -> Result<()> {
        for d in &self.decays {
            if !(d.rate >= 0.0 && d.rate.is_finite()) {
                return Err(FitError::Config(format!("decay rate must be >= 0, got {}", d.rate)));
            }
            let site = space.sites().get(d.site).ok_or_else(|| FitError::Config(format!("no site {}", d.site)))?;
            if site.index_of(d.from).is_none() || site.index_of(d.to).is_none() || d.from == d.to {
                return Err(FitError::Config(format!("invalid decay {}→{} on site {}", d.from, d.to, d.site)));
            }
        }
        for d in &self.dephasings {
            if !(d.rate >= 0.0 && d.rate.is_finite()) {
                return Err(FitError::Config(format!("dephasing rate must be >= 0, got {}", d.rate)));
            }
            let site = space.sites().get(d.site).ok_or_else(|| FitError::Config(format!("no site {}", d.site)))?;
            if site.index_of(d.level).is_none() {
                return Err(FitError::Config(format!("site {} has no level {}", d.site, d.level)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DephasingRates {
    pub target_2: f64,
    pub target_3: f64,
    pub control_2: f64,
    pub control_3: f64,
}

/// Channel decay rates in units of Γ₁₂ᴬ, keyed by role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayRates {
    /// |2⟩→|1⟩ in target atoms (Γ₁₂ᴬ, 1 by choice of units).
    pub target_21: f64,
    /// |3⟩→|2⟩ in target atoms (Γ₂₃ᴬ).
    pub target_32: f64,
    /// |3⟩→|1⟩ in one-photon control atoms (Γ₁₃ᴮ).
    pub control_31: f64,
    /// |2⟩→|1⟩ in two-photon control atoms.
    pub control_21: f64,
    /// |3⟩→|2⟩ in two-photon control atoms.
    pub control_32: f64,
    pub dephasing: DephasingRates,
}

impl Default for DecayRates {
    fn default() -> Self {
        DecayRates {
            target_21: 1.0,
            target_32: 1e-3,
            control_31: 1.0,
            control_21: 1.0,
            control_32: 1e-3,
            dephasing: DephasingRates::default(),
        }
    }
}

impl DecayRates {
    pub fn dissipators(&self, space: &CompositeSpace) -> DissipatorSpec {
        let mut spec = DissipatorSpec::default();
        let mut decay = |site, from, to, rate: f64| {
            if rate > 0.0 {
                spec.decays.push(Decay { site, from, to, rate });
            }
        };
        for (k, s) in space.sites().iter().enumerate() {
            match (s.role, s.drive_scheme) {
                (Role::Target, _) => {
                    decay(k, 2, 1, self.target_21);
                    decay(k, 3, 2, self.target_32);
                }
                (Role::Control, DriveScheme::OnePhoton) => decay(k, 3, 1, self.control_31),
                (Role::Control, DriveScheme::TwoPhoton) => {
                    decay(k, 2, 1, self.control_21);
                    decay(k, 3, 2, self.control_32);
                }
            }
        }
        for (k, s) in space.sites().iter().enumerate() {
            let levels: &[(usize, f64)] = match s.role {
                Role::Target => &[(2, self.dephasing.target_2), (3, self.dephasing.target_3)],
                Role::Control => &[(2, self.dephasing.control_2), (3, self.dephasing.control_3)],
            };
            for &(level, rate) in levels {
                if rate > 0.0 && s.index_of(level).is_some() {
                    spec.dephasings.push(Dephasing { site: k, level, rate });
                }
            }
        }
        spec
    }
}

/// Row-sparse hermitian matrix.
#[derive(Debug, Clone)]
pub struct SparseHamiltonian {
    rows: Vec<Vec<(usize, C64)>>,
}

impl SparseHamiltonian {
    pub fn from_dense(h: &CMatrix) -> Self {
        let rows = h
            .outer_iter()
            .map(|row| row.iter().enumerate().filter(|(_, z)| **z != ZERO).map(|(j, z)| (j, *z)).collect())
            .collect();
        SparseHamiltonian { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Infinity norm, used to bound the generator spectrum.
    pub fn row_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.iter().map(|(_, z)| z.norm()).sum::<f64>()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
struct CompiledJump {
    rate: f64,
    /// (source basis index with the site in `a`, destination with the site in `b`)
    moves: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct CompiledDephasing {
    rate: f64,
    members: Vec<usize>,
}

/// Generator of the master equation for a fixed Hamiltonian.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    space: CompositeSpace,
    hamiltonian: CMatrix,
    sparse: SparseHamiltonian,
    dissipators: DissipatorSpec,
    /// Anti-commutator damping `g_i` per basis index.
    damping: Vec<f64>,
    jumps: Vec<CompiledJump>,
    dephasings: Vec<CompiledDephasing>,
}

impl Liouvillian {
    pub fn new(space: &CompositeSpace, hamiltonian: CMatrix, dissipators: DissipatorSpec) -> Result<Self> {
        let n = space.total_dim();
        if hamiltonian.dim() != (n, n) {
            return Err(FitError::Dimension { expected: n, got: hamiltonian.nrows() });
        }
        dissipators.validate(space)?;
        let mut damping = vec![0.0; n];
        let mut jumps = Vec::new();
        for d in &dissipators.decays {
            let site = space.site(d.site);
            let (ia, ib) = (site.index_of(d.from).unwrap(), site.index_of(d.to).unwrap());
            let stride = space.stride(d.site) as isize;
            let mut moves = Vec::new();
            for i in 0..n {
                if space.local_index(i, d.site) == ia {
                    damping[i] += 0.5 * d.rate;
                    let j = (i as isize + (ib as isize - ia as isize) * stride) as usize;
                    moves.push((i, j));
                }
            }
            jumps.push(CompiledJump { rate: d.rate, moves });
        }
        let mut dephasings = Vec::new();
        for d in &dissipators.dephasings {
            let ia = space.site(d.site).index_of(d.level).unwrap();
            let members: Vec<usize> = (0..n).filter(|&i| space.local_index(i, d.site) == ia).collect();
            for &i in &members {
                damping[i] += d.rate;
            }
            dephasings.push(CompiledDephasing { rate: d.rate, members });
        }
        let sparse = SparseHamiltonian::from_dense(&hamiltonian);
        Ok(Liouvillian { space: space.clone(), hamiltonian, sparse, dissipators, damping, jumps, dephasings })
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn dissipators(&self) -> &DissipatorSpec {
        &self.dissipators
    }

    /// Same dissipators, different Hamiltonian.
    pub fn with_hamiltonian(&self, hamiltonian: CMatrix) -> Result<Self> {
        let n = self.dim();
        if hamiltonian.dim() != (n, n) {
            return Err(FitError::Dimension { expected: n, got: hamiltonian.nrows() });
        }
        let mut out = self.clone();
        out.sparse = SparseHamiltonian::from_dense(&hamiltonian);
        out.hamiltonian = hamiltonian;
        Ok(out)
    }

    /// Crude bound on the generator's spectral radius.
    pub fn spectral_bound(&self) -> f64 {
        let damp = self.damping.iter().cloned().fold(0.0, f64::max);
        let jump: f64 = self.jumps.iter().map(|j| j.rate).sum::<f64>()
            + self.dephasings.iter().map(|d| 2.0 * d.rate).sum::<f64>();
        2.0 * self.sparse.row_norm() + 2.0 * damp + jump
    }

    /// `dρ/dt` for `rho`.
    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        let n = self.dim();
        if rho.dim() != (n, n) {
            return Err(FitError::Dimension { expected: n, got: rho.nrows() });
        }
        let input: Vec<C64> = rho.iter().copied().collect();
        let mut out = vec![ZERO; n * n];
        self.apply_slice(&self.sparse, &input, &mut out);
        Ok(Array2::from_shape_vec((n, n), out).expect("shape"))
    }

    /// Row-major slice form of [`apply`](Self::apply) with an explicit
    /// Hamiltonian; `out` is overwritten.
    pub fn apply_slice(&self, h: &SparseHamiltonian, rho: &[C64], out: &mut [C64]) {
        let n = self.dim();
        debug_assert_eq!(h.dim(), n);
        for i in 0..n {
            let row_i = &h.rows[i];
            let gi = self.damping[i];
            for j in 0..n {
                let mut hr = ZERO;
                for &(k, hik) in row_i {
                    hr += hik * rho[k * n + j];
                }
                let mut rh = ZERO;
                for &(k, hjk) in &h.rows[j] {
                    rh += rho[i * n + k] * hjk.conj();
                }
                let r = rho[i * n + j];
                out[i * n + j] = -I * (hr - rh) - r * (gi + self.damping[j]);
            }
        }
        for jump in &self.jumps {
            for &(p, q) in &jump.moves {
                for &(pp, qq) in &jump.moves {
                    out[q * n + qq] += rho[p * n + pp] * jump.rate;
                }
            }
        }
        for d in &self.dephasings {
            let w = 2.0 * d.rate;
            for &i in &d.members {
                for &j in &d.members {
                    out[i * n + j] += rho[i * n + j] * w;
                }
            }
        }
    }
}

fn nonzeros(m: &CMatrix) -> Vec<(usize, usize, C64)> {
    m.indexed_iter().filter(|(_, z)| **z != ZERO).map(|((i, j), z)| (i, j, *z)).collect()
}

/// `s += coef · (a ⊗ b)` touching only non-zero entries.
fn add_kron(s: &mut CMatrix, a: &CMatrix, b: &CMatrix, coef: C64) {
    let nb = b.nrows();
    let bnz = nonzeros(b);
    for (i, j, aij) in nonzeros(a) {
        let f = coef * aij;
        for &(k, l, bkl) in &bnz {
            s[[i * nb + k, j * nb + l]] += f * bkl;
        }
    }
}

pub const DEFAULT_SUPEROPERATOR_CAP: usize = 2048;

/// Dense superoperator acting on column-major `vec(ρ)`.
pub fn assemble_superoperator(l: &Liouvillian, cap: usize) -> Result<CMatrix> {
    let n = l.dim();
    let n2 = n * n;
    if n2 > cap {
        return Err(FitError::Capacity { dim: n2, cap });
    }
    let space = &l.space;
    let id = crate::linalg::identity(n);
    let h = &l.hamiltonian;
    let mut s: CMatrix = Array2::zeros((n2, n2));
    add_kron(&mut s, &id, h, -I);
    add_kron(&mut s, &h.t().to_owned(), &id, I);
    for d in &l.dissipators.decays {
        let j = space.sigma(d.site, d.to, d.from)?;
        let jdj = dagger(&j).dot(&j);
        let g = C64::new(d.rate, 0.0);
        add_kron(&mut s, &j.mapv(|z| z.conj()), &j, g);
        add_kron(&mut s, &id, &jdj, -0.5 * g);
        add_kron(&mut s, &jdj.t().to_owned(), &id, -0.5 * g);
    }
    for d in &l.dissipators.dephasings {
        let p = space.sigma(d.site, d.level, d.level)?;
        let g = C64::new(d.rate, 0.0);
        add_kron(&mut s, &p.mapv(|z| z.conj()), &p, 2.0 * g);
        add_kron(&mut s, &id, &p, -g);
        add_kron(&mut s, &p.t().to_owned(), &id, -g);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub trace: f64,
    pub hermiticity: f64,
    /// Smallest eigenvalue allowed is `-positivity`.
    pub positivity: f64,
    pub steady_residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { trace: 1e-9, hermiticity: 1e-9, positivity: 1e-8, steady_residual: 1e-10 }
    }
}

/// Density matrix satisfying unit trace, hermiticity and positivity within
/// [`Tolerances`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let rho = DensityMatrix(m);
        rho.check(&Tolerances::default(), true).map_err(FitError::Config)?;
        Ok(rho)
    }

    /// Wraps without validation; used for intermediate RK stages.
    pub fn from_matrix_unchecked(m: CMatrix) -> Self {
        DensityMatrix(m)
    }

    /// All atoms in `|1⟩`.
    pub fn ground(space: &CompositeSpace) -> Self {
        let n = space.total_dim();
        let mut m = Array2::zeros((n, n));
        m[[0, 0]] = ONE;
        DensityMatrix(m)
    }

    pub fn pure(psi: &CVector) -> Result<Self> {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(FitError::Normalization(norm));
        }
        let n = psi.len();
        Ok(DensityMatrix(Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj())))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> C64 {
        trace(&self.0)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(eigh(&self.0)?.values[0])
    }

    pub fn check(&self, tol: &Tolerances, positivity: bool) -> std::result::Result<(), String> {
        let tr = self.trace();
        if (tr - ONE).norm() > tol.trace {
            return Err(format!("trace {tr} deviates from 1"));
        }
        let h = hermiticity_defect(&self.0);
        if h > tol.hermiticity {
            return Err(format!("hermiticity defect {h:e}"));
        }
        if positivity {
            let min = self.min_eigenvalue().map_err(|e| e.to_string())?;
            if min < -tol.positivity {
                return Err(format!("negative eigenvalue {min:e}"));
            }
        }
        Ok(())
    }

    /// Symmetrize and renormalize in place.
    fn clean(&mut self) {
        let n = self.dim();
        let m = &mut self.0;
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (m[[i, j]] + m[[j, i]].conj());
                m[[i, j]] = avg;
                m[[j, i]] = avg.conj();
            }
            m[[i, i]] = C64::new(m[[i, i]].re, 0.0);
        }
        let tr = trace(m).re;
        m.mapv_inplace(|z| z / tr);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Store every `store_every`-th step (the initial and final states are always stored).
    pub store_every: usize,
    /// Eigenvalue positivity check on stored states.
    pub check_positivity: bool,
    pub tolerances: Tolerances,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { store_every: 1, check_positivity: true, tolerances: Tolerances::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

impl Trajectory {
    pub fn last(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// One classical RK4 step of `dy/dt = f(y)` on a flat complex buffer.
pub fn rk4_step<F>(y: &mut [C64], h: f64, scratch: &mut Rk4Scratch, mut f: F)
where
    F: FnMut(&[C64], &mut [C64]),
{
    let n = y.len();
    scratch.resize(n);
    let Rk4Scratch { k, tmp, acc } = scratch;
    f(y, k);
    for i in 0..n {
        acc[i] = k[i];
        tmp[i] = y[i] + k[i] * (0.5 * h);
    }
    f(tmp, k);
    for i in 0..n {
        acc[i] += k[i] * 2.0;
        tmp[i] = y[i] + k[i] * (0.5 * h);
    }
    f(tmp, k);
    for i in 0..n {
        acc[i] += k[i] * 2.0;
        tmp[i] = y[i] + k[i] * h;
    }
    f(tmp, k);
    for i in 0..n {
        y[i] += (acc[i] + k[i]) * (h / 6.0);
    }
}

#[derive(Debug, Default, Clone)]
pub struct Rk4Scratch {
    k: Vec<C64>,
    tmp: Vec<C64>,
    acc: Vec<C64>,
}

impl Rk4Scratch {
    fn resize(&mut self, n: usize) {
        if self.k.len() != n {
            self.k = vec![ZERO; n];
            self.tmp = vec![ZERO; n];
            self.acc = vec![ZERO; n];
        }
    }
}

fn to_flat(m: &CMatrix) -> Vec<C64> {
    m.iter().copied().collect()
}

fn from_flat(v: &[C64], n: usize) -> CMatrix {
    Array2::from_shape_vec((n, n), v.to_vec()).expect("shape")
}

/// Fixed-step RK4 integration from `rho0` to `t_final`.
///
/// The step is shrunk slightly, if needed, so that an integer number of steps
/// lands exactly on `t_final`.
pub fn evolve(l: &Liouvillian, rho0: &DensityMatrix, t_final: f64, dt: f64, opts: &EvolveOptions) -> Result<Trajectory> {
    let n = l.dim();
    if rho0.dim() != n {
        return Err(FitError::Dimension { expected: n, got: rho0.dim() });
    }
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(FitError::Config(format!("need dt > 0 and t_final >= 0 (dt={dt}, t_final={t_final})")));
    }
    rho0.check(&opts.tolerances, opts.check_positivity).map_err(FitError::Config)?;
    let ratio = t_final / dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 { ratio.round() as usize } else { ratio.ceil() as usize };
    let h = if steps == 0 { 0.0 } else { t_final / steps as f64 };
    let store_every = opts.store_every.max(1);

    let mut y = to_flat(rho0.matrix());
    let mut scratch = Rk4Scratch::default();
    let mut times = vec![0.0];
    let mut states = vec![rho0.clone()];
    for step in 1..=steps {
        rk4_step(&mut y, h, &mut scratch, |r, out| l.apply_slice(&l.sparse, r, out));
        if step % store_every == 0 || step == steps {
            if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(FitError::NumericalInstability { step, reason: "non-finite density matrix".into() });
            }
            let rho = DensityMatrix(from_flat(&y, n));
            rho.check(&opts.tolerances, opts.check_positivity)
                .map_err(|reason| FitError::NumericalInstability { step, reason })?;
            times.push(step as f64 * h);
            states.push(rho);
        }
    }
    Ok(Trajectory { times, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyStateMethod {
    /// Direct solve when the superoperator dimension is at most
    /// `direct_limit`; otherwise the matrix-free Krylov solve up to Hilbert
    /// dimension `krylov_dim_limit` and relaxation beyond it, each falling
    /// back to the other.
    #[default]
    Auto,
    /// Null space of the assembled superoperator by dense LU.
    Direct,
    /// Long-time RK4 evolution until `‖dρ/dt‖_max` drops below tolerance.
    Relaxation,
    /// Restarted GMRES on the generator restricted to traceless corrections,
    /// never forming the superoperator.
    Krylov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteadyStateOptions {
    pub method: SteadyStateMethod,
    /// Largest superoperator dimension `dim²` solved directly under `Auto`.
    pub direct_limit: usize,
    pub superoperator_cap: usize,
    /// Required `‖L(ρ)‖_max` of the returned state.
    pub residual_tol: f64,
    /// Relaxation step; chosen from the generator norm when absent.
    pub dt: Option<f64>,
    pub max_time: f64,
    pub krylov_restart: usize,
    pub krylov_max_iterations: usize,
    /// Largest Hilbert dimension for which `Auto` tries Krylov first.
    pub krylov_dim_limit: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        SteadyStateOptions {
            method: SteadyStateMethod::Auto,
            direct_limit: 36,
            superoperator_cap: DEFAULT_SUPEROPERATOR_CAP,
            residual_tol: 1e-10,
            dt: None,
            max_time: 1e5,
            krylov_restart: 60,
            krylov_max_iterations: 30_000,
            krylov_dim_limit: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    pub residual: f64,
    pub method: SteadyStateMethod,
}

pub fn steady_state(l: &Liouvillian) -> Result<DensityMatrix> {
    Ok(solve_steady_state(l, &SteadyStateOptions::default(), None)?.rho)
}

/// Stationary state of `l`. `initial` seeds the iterative paths (ignored by
/// the direct solve); a nearby solution from a sweep neighbour speeds them up.
pub fn solve_steady_state(l: &Liouvillian, opts: &SteadyStateOptions, initial: Option<&DensityMatrix>) -> Result<SteadyState> {
    let n = l.dim();
    if let Some(r) = initial {
        if r.dim() != n {
            return Err(FitError::Dimension { expected: n, got: r.dim() });
        }
    }
    match opts.method {
        SteadyStateMethod::Auto if n * n <= opts.direct_limit.min(opts.superoperator_cap) => {
            finish(l, opts, direct_null_space(l, opts.superoperator_cap)?, SteadyStateMethod::Direct)
        }
        SteadyStateMethod::Auto => {
            let krylov_first = n <= opts.krylov_dim_limit;
            let (first, second) = if krylov_first {
                (SteadyStateMethod::Krylov, SteadyStateMethod::Relaxation)
            } else {
                (SteadyStateMethod::Relaxation, SteadyStateMethod::Krylov)
            };
            match iterate(l, opts, initial, first) {
                Ok(ss) => Ok(ss),
                Err(e) if !e.is_config() => {
                    log::warn!("{first:?} steady-state solve failed ({e}); falling back to {second:?}");
                    iterate(l, opts, initial, second)
                }
                Err(e) => Err(e),
            }
        }
        SteadyStateMethod::Direct => finish(l, opts, direct_null_space(l, opts.superoperator_cap)?, SteadyStateMethod::Direct),
        m => iterate(l, opts, initial, m),
    }
}

fn iterate(l: &Liouvillian, opts: &SteadyStateOptions, initial: Option<&DensityMatrix>, method: SteadyStateMethod) -> Result<SteadyState> {
    let rho = match method {
        SteadyStateMethod::Krylov => krylov(l, opts, initial)?,
        _ => relax(l, opts, initial)?,
    };
    finish(l, opts, rho, method)
}

fn finish(l: &Liouvillian, opts: &SteadyStateOptions, mut rho: DensityMatrix, method: SteadyStateMethod) -> Result<SteadyState> {
    rho.clean();
    let residual = crate::linalg::max_abs(&l.apply(rho.matrix())?);
    if !(residual <= opts.residual_tol) {
        return Err(FitError::NotConverged { residual, time: f64::NAN });
    }
    Ok(SteadyState { rho, residual, method })
}

fn krylov(l: &Liouvillian, opts: &SteadyStateOptions, initial: Option<&DensityMatrix>) -> Result<DensityMatrix> {
    let n = l.dim();
    let start = initial.cloned().unwrap_or_else(|| DensityMatrix::ground(&l.space));
    let rho0 = to_flat(start.matrix());
    // L maps onto traceless matrices and, for a unique stationary state, is
    // invertible there; solve L δ = −L ρ₀ for a traceless correction δ.
    let mut b = vec![ZERO; n * n];
    l.apply_slice(&l.sparse, &rho0, &mut b);
    b.iter_mut().for_each(|z| *z = -*z);
    // Jacobi preconditioner from the superoperator diagonal, floored so that
    // undamped populations do not blow up.
    let h = &l.hamiltonian;
    let mut diag = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            diag[i * n + j] = -I * (h[[i, i]] - h[[j, j]]) - (l.damping[i] + l.damping[j]);
        }
    }
    for d in &l.dephasings {
        for &i in &d.members {
            for &j in &d.members {
                diag[i * n + j] += 2.0 * d.rate;
            }
        }
    }
    let floor = 0.1;
    let inv: Vec<C64> = diag.iter().map(|d| if d.norm() < floor { C64::new(-1.0 / floor, 0.0) } else { 1.0 / d }).collect();
    let mut delta = vec![ZERO; n * n];
    // ‖·‖_max ≤ ‖·‖₂, and the final clean-up renormalizes the trace.
    let gopts = crate::krylov::GmresOptions {
        restart: opts.krylov_restart,
        max_iterations: opts.krylov_max_iterations,
        tol: 0.2 * opts.residual_tol,
    };
    let outcome = crate::krylov::gmres(
        |v, out| l.apply_slice(&l.sparse, v, out),
        |v, out| out.iter_mut().zip(v).zip(&inv).for_each(|((o, v), d)| *o = v * d),
        &b,
        &mut delta,
        &gopts,
    );
    log::debug!("GMRES steady state: {} iterations, residual {:.3e}", outcome.iterations, outcome.residual);
    if !outcome.converged {
        return Err(FitError::NotConverged { residual: outcome.residual, time: f64::NAN });
    }
    let rho: Vec<C64> = rho0.iter().zip(&delta).map(|(a, d)| a + d).collect();
    Ok(DensityMatrix(from_flat(&rho, n)))
}

fn direct_null_space(l: &Liouvillian, cap: usize) -> Result<DensityMatrix> {
    let n = l.dim();
    let mut s = assemble_superoperator(l, cap)?;
    // The equation for ρ₀₀ is redundant given trace preservation; replace it
    // by Tr ρ = 1.
    for c in 0..n * n {
        s[[0, c]] = ZERO;
    }
    for i in 0..n {
        s[[0, i + n * i]] = ONE;
    }
    let lu = Lu::factor(&s)?;
    if lu.relative_min_pivot() < 1e-12 {
        return Err(FitError::NonUniqueSteadyState(format!(
            "trace-constrained superoperator is singular (relative pivot {:.3e})",
            lu.relative_min_pivot()
        )));
    }
    let mut b = CVector::zeros(n * n);
    b[0] = ONE;
    let x = lu.solve(&b);
    Ok(DensityMatrix(unvec_col_major(&x, n)))
}

fn relax(l: &Liouvillian, opts: &SteadyStateOptions, initial: Option<&DensityMatrix>) -> Result<DensityMatrix> {
    let n = l.dim();
    let start = initial.cloned().unwrap_or_else(|| DensityMatrix::ground(&l.space));
    let dt = opts.dt.unwrap_or_else(|| 2.0 / l.spectral_bound().max(1e-12));
    let mut y = to_flat(start.matrix());
    let mut deriv = vec![ZERO; n * n];
    let mut scratch = Rk4Scratch::default();
    let chunk = 50usize;
    let mut t = 0.0;
    let mut step = 0usize;
    loop {
        l.apply_slice(&l.sparse, &y, &mut deriv);
        let residual = deriv.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if !residual.is_finite() {
            return Err(FitError::NumericalInstability { step, reason: "relaxation diverged".into() });
        }
        if residual < 0.5 * opts.residual_tol {
            break;
        }
        if t >= opts.max_time {
            return Err(FitError::NotConverged { residual, time: t });
        }
        for _ in 0..chunk {
            rk4_step(&mut y, dt, &mut scratch, |r, out| l.apply_slice(&l.sparse, r, out));
        }
        step += chunk;
        t += chunk as f64 * dt;
        // Keep the trace pinned against roundoff drift over very long runs.
        let tr: C64 = (0..n).map(|i| y[i * n + i]).sum();
        for z in y.iter_mut() {
            *z /= tr;
        }
    }
    Ok(DensityMatrix(from_flat(&y, n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_hamiltonian, AtomSite, DriveParams, InteractionSpec};
    use crate::linalg::{max_abs, vec_col_major};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qubit_space() -> CompositeSpace {
        // A single two-level control atom: |1⟩, |3⟩.
        CompositeSpace::new(vec![AtomSite::control([0.0; 3], DriveScheme::OnePhoton)]).unwrap()
    }

    fn two_atom(delta_c: f64, v: f64) -> Liouvillian {
        let space = CompositeSpace::two_atom(5.0, DriveScheme::OnePhoton).unwrap();
        let drive = DriveParams::new(0.5, 5.0, 5.0, delta_c);
        let h = build_hamiltonian(&space, &drive, &InteractionSpec::two_atom(v)).unwrap();
        let mut rates = DecayRates::default();
        rates.dephasing.target_3 = 0.05;
        rates.dephasing.control_3 = 0.02;
        Liouvillian::new(&space, h, rates.dissipators(&space)).unwrap()
    }

    fn random_density(n: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        let a = Array2::from_shape_fn((n, n), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let m = a.dot(&dagger(&a));
        let tr = trace(&m);
        DensityMatrix::new(m.mapv(|z| z / tr)).unwrap()
    }

    #[test]
    fn apply_is_traceless_and_hermitian() {
        let l = two_atom(-3.0, 15.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let rho = random_density(6, &mut rng);
            let d = l.apply(rho.matrix()).unwrap();
            assert!(trace(&d).norm() < 1e-13);
            assert!(hermiticity_defect(&d) < 1e-13);
        }
    }

    #[test]
    fn matrix_free_matches_assembled() {
        let l = two_atom(-7.0, 15.0);
        let s = assemble_superoperator(&l, DEFAULT_SUPEROPERATOR_CAP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let rho = random_density(6, &mut rng);
            let direct = l.apply(rho.matrix()).unwrap();
            let via = unvec_col_major(&s.dot(&vec_col_major(rho.matrix())), 6);
            assert!(max_abs(&(direct - via)) < 1e-12);
        }
    }

    #[test]
    fn decaying_qubit_spectrum() {
        let space = qubit_space();
        let gamma = 0.7;
        let diss = DissipatorSpec { decays: vec![Decay { site: 0, from: 3, to: 1, rate: gamma }], dephasings: vec![] };
        let l = Liouvillian::new(&space, Array2::zeros((2, 2)), diss).unwrap();
        let s = assemble_superoperator(&l, 16).unwrap();
        // Populations: 0 and −Γ; coherences: −Γ/2 twice. The superoperator is
        // upper-triangular in this basis: population only flows 3 → 1.
        let mut diag: Vec<f64> = (0..4).map(|k| s[[k, k]].re).collect();
        diag.sort_by(f64::total_cmp);
        assert_eq!(diag, vec![-gamma, -gamma / 2.0, -gamma / 2.0, 0.0]);
        for i in 0..4 {
            for j in 0..4 {
                if i > j {
                    assert_eq!(s[[i, j]], ZERO, "lower triangle should vanish at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn zero_generator_assembles_to_zero() {
        let space = qubit_space();
        let l = Liouvillian::new(&space, Array2::zeros((2, 2)), DissipatorSpec::default()).unwrap();
        assert_eq!(max_abs(&assemble_superoperator(&l, 16).unwrap()), 0.0);
        let traj = evolve(&l, &DensityMatrix::ground(&space), 1.0, 0.1, &EvolveOptions::default()).unwrap();
        assert_eq!(traj.last().matrix(), DensityMatrix::ground(&space).matrix());
    }

    #[test]
    fn capacity_error() {
        let l = two_atom(0.0, 15.0);
        assert!(matches!(assemble_superoperator(&l, 35), Err(FitError::Capacity { dim: 36, cap: 35 })));
    }

    #[test]
    fn steady_state_residual_in_superoperator() {
        let l = two_atom(-15.0, 15.0);
        let ss = steady_state(&l).unwrap();
        let s = assemble_superoperator(&l, DEFAULT_SUPEROPERATOR_CAP).unwrap();
        let r = s.dot(&vec_col_major(ss.matrix()));
        assert!(r.iter().all(|z| z.norm() < 1e-8));
        ss.check(&Tolerances::default(), true).unwrap();
    }

    #[test]
    fn undriven_relaxes_to_ground() {
        let space = CompositeSpace::two_atom(5.0, DriveScheme::OnePhoton).unwrap();
        let h = build_hamiltonian(&space, &DriveParams::new(0.0, 0.0, 0.0, 2.0), &InteractionSpec::two_atom(15.0)).unwrap();
        let l = Liouvillian::new(&space, h, DecayRates::default().dissipators(&space)).unwrap();
        let ss = steady_state(&l).unwrap();
        assert!(max_abs(&(ss.matrix() - DensityMatrix::ground(&space).matrix())) < 1e-12);
    }

    #[test]
    fn degenerate_steady_state_detected() {
        let space = qubit_space();
        let l = Liouvillian::new(&space, Array2::zeros((2, 2)), DissipatorSpec::default()).unwrap();
        assert!(matches!(steady_state(&l), Err(FitError::NonUniqueSteadyState(_))));
    }

    #[test]
    fn direct_and_relaxation_agree() {
        let l = two_atom(-12.0, 15.0);
        let direct = solve_steady_state(&l, &SteadyStateOptions { method: SteadyStateMethod::Direct, ..Default::default() }, None).unwrap();
        let relaxed = solve_steady_state(&l, &SteadyStateOptions { method: SteadyStateMethod::Relaxation, ..Default::default() }, None).unwrap();
        assert!(max_abs(&(direct.rho.matrix() - relaxed.rho.matrix())) < 1e-6);
        assert!(relaxed.residual < 1e-10);
        let krylov = solve_steady_state(&l, &SteadyStateOptions { method: SteadyStateMethod::Krylov, ..Default::default() }, None).unwrap();
        assert!(max_abs(&(direct.rho.matrix() - krylov.rho.matrix())) < 1e-8);
    }

    #[test]
    fn auto_switches_to_matrix_free_above_limit() {
        let space = CompositeSpace::new(vec![
            AtomSite::target([0.0, 0.0, 0.0]),
            AtomSite::target([0.0, 8.0, 0.0]),
            AtomSite::control([6.0, 0.0, 0.0], DriveScheme::OnePhoton),
        ])
        .unwrap();
        let inter = InteractionSpec::default().with_pair(0, 2, 15.0).with_pair(1, 2, 15.0).with_pair(0, 1, 4.0);
        let h = build_hamiltonian(&space, &DriveParams::new(0.5, 5.0, 5.0, -14.0), &inter).unwrap();
        let l = Liouvillian::new(&space, h, DecayRates::default().dissipators(&space)).unwrap();
        let auto = solve_steady_state(&l, &SteadyStateOptions::default(), None).unwrap();
        assert_eq!(auto.method, SteadyStateMethod::Krylov);
        let direct = solve_steady_state(&l, &SteadyStateOptions { method: SteadyStateMethod::Direct, ..Default::default() }, None).unwrap();
        assert!(max_abs(&(direct.rho.matrix() - auto.rho.matrix())) < 1e-8);
    }

    #[test]
    fn auto_prefers_relaxation_for_large_spaces() {
        let l = two_atom(-14.0, 15.0);
        let opts = SteadyStateOptions { direct_limit: 0, krylov_dim_limit: 4, ..Default::default() };
        let auto = solve_steady_state(&l, &opts, None).unwrap();
        assert_eq!(auto.method, SteadyStateMethod::Relaxation);
        let direct = solve_steady_state(&l, &SteadyStateOptions { method: SteadyStateMethod::Direct, ..Default::default() }, None).unwrap();
        assert!(max_abs(&(direct.rho.matrix() - auto.rho.matrix())) < 1e-8);
    }

    #[test]
    fn rejects_bad_rates() {
        let space = qubit_space();
        let diss = DissipatorSpec { decays: vec![Decay { site: 0, from: 3, to: 1, rate: -1.0 }], dephasings: vec![] };
        assert!(Liouvillian::new(&space, Array2::zeros((2, 2)), diss).is_err());
        let diss = DissipatorSpec { decays: vec![Decay { site: 0, from: 2, to: 1, rate: 1.0 }], dephasings: vec![] };
        assert!(Liouvillian::new(&space, Array2::zeros((2, 2)), diss).is_err());
    }

    #[test]
    fn dephasing_damps_coherence_at_gamma() {
        let space = qubit_space();
        let gamma = 0.3;
        let diss = DissipatorSpec { decays: vec![], dephasings: vec![Dephasing { site: 0, level: 3, rate: gamma }] };
        let l = Liouvillian::new(&space, Array2::zeros((2, 2)), diss).unwrap();
        let rho = Array2::from_elem((2, 2), C64::new(0.5, 0.0));
        let d = l.apply(&rho).unwrap();
        assert!((d[[0, 1]].re + gamma * 0.5).abs() < 1e-15);
        assert_eq!(d[[0, 0]], ZERO);
        assert_eq!(d[[1, 1]], ZERO);
    }

    #[test]
    fn dimension_mismatch_in_apply() {
        let l = two_atom(0.0, 1.0);
        assert!(matches!(l.apply(&Array2::zeros((3, 3))), Err(FitError::Dimension { .. })));
    }
}
