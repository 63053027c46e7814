//! Time evolution `i d_t k = [h(rho_{k^* k}), k]` with `h = -Lap + g(rho)`.
//!
//! Both orbital families of `k` are moved by the same one-body unitary, so
//! the rank and all singular values are preserved exactly by the splitting.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{free_flow, j_commutator_raw, weighted_norm_w, RankBudget};
use crate::grid::{Grid, GridFunction, C64};
use crate::nonlinearity::SelfInteraction;
use crate::operator::FiniteRankOperator;
use crate::par;

pub const COLUMNS: [&str; 11] = [
    "t",
    "trace",
    "energy",
    "hs_norm",
    "W1",
    "W2",
    "L2r_Linf_c",
    "gamma_inf",
    "boundary_mass",
    "scat_residual",
    "commut_residual",
];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormRow {
    pub t: f64,
    pub trace: f64,
    pub energy: f64,
    pub hs_norm: f64,
    pub w1: f64,
    pub w2: f64,
    pub l2r_linf_c: f64,
    pub gamma_inf: f64,
    pub boundary_mass: f64,
    /// Cauchy increment of the free-pulled-back solution since the previous row.
    pub scat_residual: f64,
    pub commut_residual: f64,
}

impl NormRow {
    pub fn values(&self) -> [f64; 11] {
        [
            self.t,
            self.trace,
            self.energy,
            self.hs_norm,
            self.w1,
            self.w2,
            self.l2r_linf_c,
            self.gamma_inf,
            self.boundary_mass,
            self.scat_residual,
            self.commut_residual,
        ]
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != COLUMNS.len() {
            return Err(Error::ShapeMismatch {
                expected: COLUMNS.len(),
                found: v.len(),
            });
        }
        Ok(Self {
            t: v[0],
            trace: v[1],
            energy: v[2],
            hs_norm: v[3],
            w1: v[4],
            w2: v[5],
            l2r_linf_c: v[6],
            gamma_inf: v[7],
            boundary_mass: v[8],
            scat_residual: v[9],
            commut_residual: v[10],
        })
    }

    pub fn get(&self, column: &str) -> Option<f64> {
        COLUMNS.iter().position(|c| *c == column).map(|i| self.values()[i])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormSeries {
    rows: Vec<NormRow>,
}

impl NormSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: NormRow) -> Result<()> {
        if row.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: row.t });
        }
        if let Some(last) = self.rows.last() {
            if row.t <= last.t {
                return Err(Error::InvalidParameter(format!(
                    "series time {} does not increase past {}",
                    row.t, last.t
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[NormRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = COLUMNS.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r.values()[i]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionState {
    pub kappa: FiniteRankOperator,
    pub t: f64,
}

impl EvolutionState {
    pub fn new(kappa: FiniteRankOperator, t: f64) -> Self {
        Self { kappa, t }
    }
}

/// Density `rho_gamma` of `gamma = k^* k`, computed from `k` without forming `gamma`.
pub fn density_of_gamma(kappa: &FiniteRankOperator) -> GridFunction {
    let g = kappa.grid();
    let terms = kappa.terms();
    let r = terms.len();
    // w_ij = conj(c_i) c_j <l_i, l_j>
    let mut w = vec![C64::new(0.0, 0.0); r * r];
    for i in 0..r {
        for j in 0..r {
            w[i * r + j] = terms[i].coeff.conj() * terms[j].coeff * g.inner(&terms[i].left, &terms[j].left);
        }
    }
    let rho = par::map_range(g.len(), |x| {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..r {
            let ri = terms[i].right[x];
            for j in 0..r {
                acc += w[i * r + j] * ri * terms[j].right[x].conj();
            }
        }
        C64::new(acc.re, 0.0)
    });
    GridFunction::new(g.clone(), rho).expect("grid length")
}

/// `E = Tr(-Lap gamma) + G(rho_gamma)`.
pub fn energy(kappa: &FiniteRankOperator, interaction: &SelfInteraction) -> Result<f64> {
    let g = kappa.grid().clone();
    let adj = kappa.adjoint();
    let mut kinetic = 0.0;
    for axis in 0..g.dim() {
        let d = adj.map_left(|v| g.derivative_in_place(v, axis))?;
        kinetic += d.hs_norm().powi(2);
    }
    Ok(kinetic + interaction.interaction_energy(&density_of_gamma(kappa))?)
}

/// Strang splitting with cached free symbols. Consecutive steps share their
/// half free steps, so `advance(n)` costs `n + 1` free applications.
pub struct Stepper {
    grid: Arc<Grid>,
    interaction: SelfInteraction,
    dt: f64,
    half: Vec<C64>,
    full: Vec<C64>,
}

impl Stepper {
    pub fn new(grid: Arc<Grid>, interaction: SelfInteraction, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("time step {dt}")));
        }
        let half = grid.free_symbol(dt / 2.0);
        let full = grid.free_symbol(dt);
        Ok(Self {
            grid,
            interaction,
            dt,
            half,
            full,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn interaction(&self) -> &SelfInteraction {
        &self.interaction
    }

    fn free(&self, kappa: &mut FiniteRankOperator, symbol: &[C64]) -> Result<()> {
        let g = &self.grid;
        kappa.map_orbitals_in_place(|v| g.apply_symbol_in_place(v, symbol))
    }

    fn potential(&self, kappa: &mut FiniteRankOperator, t: f64) -> Result<()> {
        if self.interaction.is_free() {
            return Ok(());
        }
        let rho = density_of_gamma(kappa);
        if rho.values().iter().any(|v| !v.re.is_finite()) {
            return Err(Error::NonFinite { time: t });
        }
        let g = self.interaction.evaluate_g(&rho)?;
        let phase: Vec<C64> = g.values().iter().map(|v| C64::from_polar(1.0, -v.re * self.dt)).collect();
        kappa.map_orbitals_in_place(|v| {
            v.iter_mut().zip(&phase).for_each(|(a, p)| *a *= p);
            Ok(())
        })
    }

    /// `steps` Strang steps from `state`.
    pub fn advance(&self, state: &mut EvolutionState, steps: usize) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        if !self.grid.same_as(state.kappa.grid()) {
            return Err(Error::GridMismatch);
        }
        let t0 = state.t;
        self.free(&mut state.kappa, &self.half)?;
        for i in 0..steps {
            self.potential(&mut state.kappa, t0 + (i as f64 + 0.5) * self.dt)?;
            let symbol = if i + 1 == steps { &self.half } else { &self.full };
            self.free(&mut state.kappa, symbol)?;
        }
        state.t = t0 + steps as f64 * self.dt;
        let finite = state
            .kappa
            .terms()
            .iter()
            .all(|t| t.coeff.is_finite() && t.left.iter().chain(&t.right).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite { time: state.t });
        }
        Ok(())
    }
}

/// One Strang step: half free, potential with the midpoint density, half free.
pub fn step_strang(state: &EvolutionState, dt: f64, interaction: &SelfInteraction) -> Result<EvolutionState> {
    let stepper = Stepper::new(state.kappa.grid().clone(), *interaction, dt)?;
    let mut next = state.clone();
    stepper.advance(&mut next, 1)?;
    Ok(next)
}

/// Both sides of `1/2 d/dt sum_l ||J_l k||^2 = sum_l Im <J_l k, [dg(rho) rho_{J_l gamma}, k]>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommutationResidual {
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs - rhs| / max(|lhs|, |rhs|)`, or the absolute gap when both sides
    /// are below `1e-10`.
    pub residual: f64,
}

/// `sum_l Im <J_l k, [dg(rho_gamma) rho_{J_l gamma}, k]>` at the state's own time.
pub fn commutation_rate(state: &EvolutionState, interaction: &SelfInteraction) -> Result<f64> {
    if interaction.is_free() {
        return Ok(0.0);
    }
    let kappa = &state.kappa;
    let rho = density_of_gamma(kappa);
    let gamma = kappa.adjoint().compose(kappa)?;
    let mut total = 0.0;
    for axis in 0..kappa.grid().dim() {
        let jk = j_commutator_raw(kappa, state.t, axis)?;
        let rho_j = j_commutator_raw(&gamma, state.t, axis)?.den();
        let f = interaction.dg(&rho, &rho_j)?;
        let r1 = kappa.commutator_with_multiplier(f.values())?;
        total += jk.hs_inner(&r1)?.im;
    }
    Ok(total)
}

fn half_j_norm_sq(state: &EvolutionState) -> Result<f64> {
    let mut s = 0.0;
    for axis in 0..state.kappa.grid().dim() {
        s += j_commutator_raw(&state.kappa, state.t, axis)?.hs_norm().powi(2);
    }
    Ok(0.5 * s)
}

/// Forward difference of `1/2 sum ||J k||^2` between two nearby states against
/// the endpoint average of the rate; second order in the spacing.
pub fn commutation_residual(
    a: &EvolutionState,
    b: &EvolutionState,
    interaction: &SelfInteraction,
) -> Result<CommutationResidual> {
    let h = b.t - a.t;
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("states at {} and {} are not ordered", a.t, b.t)));
    }
    let lhs = (half_j_norm_sq(b)? - half_j_norm_sq(a)?) / h;
    let rhs = 0.5 * (commutation_rate(a, interaction)? + commutation_rate(b, interaction)?);
    let scale = lhs.abs().max(rhs.abs());
    let gap = (lhs - rhs).abs();
    let residual = if scale < 1e-10 { gap } else { gap / scale };
    Ok(CommutationResidual { lhs, rhs, residual })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorConfig {
    /// Width of the boundary layer as a fraction of `L` on each axis.
    pub boundary_layer: f64,
    /// Alarm threshold for the density mass inside the layer.
    pub boundary_limit: f64,
    pub budget: RankBudget,
    /// Whether to spend one extra step per record on the commutation residual.
    pub commutation: bool,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            boundary_layer: 0.125,
            boundary_limit: 1e-6,
            budget: RankBudget::default(),
            commutation: true,
        }
    }
}

/// Density mass within `boundary_layer * L` of the box faces.
pub fn boundary_mass(rho: &GridFunction, layer: f64) -> f64 {
    let g = rho.grid();
    let edge = g.half_length() * (1.0 - layer);
    let d = g.dim();
    let s: f64 = rho
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let p = g.point(*i);
            p.iter().take(d).any(|c| c.abs() >= edge)
        })
        .map(|(_, v)| v.re.abs())
        .sum();
    s * g.cell_volume()
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub kappa: FiniteRankOperator,
}

#[derive(Clone, Debug)]
pub struct Schedule {
    pub t_final: f64,
    pub dt: f64,
    pub record_every: f64,
    pub snapshot_times: Vec<f64>,
}

impl Schedule {
    /// `base, 2 base, 4 base, ... <= t_final`.
    pub fn dyadic_times(base: f64, t_final: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if !(base > 0.0) {
            return out;
        }
        let mut t = base;
        while t <= t_final * (1.0 + 1e-12) {
            out.push(t);
            t *= 2.0;
        }
        out
    }
}

pub enum Event<'a> {
    Row(&'a NormRow),
    Snapshot(&'a Snapshot),
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub series: NormSeries,
    pub snapshots: Vec<Snapshot>,
    pub final_state: EvolutionState,
}

fn step_index(t: f64, dt: f64, what: &str) -> Result<i64> {
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!("{what} {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as i64)
}

/// Row of monitors at the current state. `previous` is the free pull-back of
/// the last recorded state.
pub fn measure(
    state: &EvolutionState,
    stepper: &Stepper,
    previous: Option<&FiniteRankOperator>,
    cfg: &MonitorConfig,
) -> Result<(NormRow, FiniteRankOperator)> {
    let kappa = &state.kappa;
    let t = state.t;
    let interaction = stepper.interaction();
    let rho = density_of_gamma(kappa);
    let hs = kappa.hs_norm();
    let gamma = kappa.adjoint().compose(kappa)?;
    let tilde = free_flow(kappa, -t)?;
    let scat = match previous {
        Some(p) => tilde.hs_distance(p)?,
        None => 0.0,
    };
    let commut = if cfg.commutation {
        let mut next = state.clone();
        stepper.advance(&mut next, 1)?;
        commutation_residual(state, &next, interaction)?.residual
    } else {
        0.0
    };
    let row = NormRow {
        t,
        trace: hs * hs,
        energy: energy(kappa, interaction)?,
        hs_norm: hs,
        w1: weighted_norm_w(kappa, 1, t, &cfg.budget)?,
        w2: weighted_norm_w(kappa, 2, t, &cfg.budget)?,
        l2r_linf_c: kappa.local_norm_rc(2.0, f64::INFINITY)?,
        gamma_inf: gamma.gamma_local_norm(f64::INFINITY)?,
        boundary_mass: boundary_mass(&rho, cfg.boundary_layer),
        scat_residual: scat,
        commut_residual: commut,
    };
    if row.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { time: t });
    }
    Ok((row, tilde))
}

/// Runs the flow from `initial` (whose time must sit on the `dt` lattice) to
/// `t_final`, recording every `record_every` and at the end, and storing
/// snapshots at the scheduled times. Rows and snapshots are handed to
/// `observer` as they are produced, so a boundary alarm still leaves a
/// complete prefix behind.
pub fn evolve(
    initial: EvolutionState,
    interaction: &SelfInteraction,
    schedule: &Schedule,
    monitors: &MonitorConfig,
    observer: &mut dyn FnMut(Event<'_>) -> Result<()>,
) -> Result<Trajectory> {
    let dt = schedule.dt;
    if !(schedule.record_every > 0.0) {
        return Err(Error::InvalidParameter(format!("record interval {}", schedule.record_every)));
    }
    let stepper = Stepper::new(initial.kappa.grid().clone(), *interaction, dt)?;
    let k0 = step_index(initial.t, dt, "start time")?;
    let k_end = (schedule.t_final / dt).round() as i64;
    if k_end < k0 {
        return Err(Error::InvalidParameter(format!(
            "final time {} precedes start time {}",
            schedule.t_final, initial.t
        )));
    }
    let stride = ((schedule.record_every / dt).round() as i64).max(1);
    let mut snaps = BTreeSet::new();
    for &ts in &schedule.snapshot_times {
        let k = step_index(ts, dt, "snapshot time")?;
        if k >= k0 && k <= k_end {
            snaps.insert(k);
        }
    }
    let is_record = |k: i64| k % stride == 0 || k == k0 || k == k_end;

    let mut state = initial;
    state.t = k0 as f64 * dt;
    let mut series = NormSeries::new();
    let mut snapshots = Vec::new();
    let mut previous: Option<FiniteRankOperator> = None;
    let mut k = k0;
    loop {
        if is_record(k) {
            let (row, tilde) = measure(&state, &stepper, previous.as_ref(), monitors)?;
            previous = Some(tilde);
            series.push(row)?;
            observer(Event::Row(&row))?;
            if row.boundary_mass > monitors.boundary_limit {
                return Err(Error::BoundaryMass {
                    time: row.t,
                    mass: row.boundary_mass,
                    limit: monitors.boundary_limit,
                });
            }
        }
        if snaps.contains(&k) {
            let snap = Snapshot {
                t: state.t,
                kappa: state.kappa.clone(),
            };
            observer(Event::Snapshot(&snap))?;
            snapshots.push(snap);
        }
        if k >= k_end {
            break;
        }
        let next_record = (k / stride + 1) * stride;
        let next_snap = snaps.range(k + 1..).next().copied().unwrap_or(i64::MAX);
        let next = next_record.min(next_snap).min(k_end);
        stepper.advance(&mut state, (next - k) as usize)?;
        k = next;
        state.t = k as f64 * dt;
    }
    Ok(Trajectory {
        series,
        snapshots,
        final_state: state,
    })
}

/// Evolves without recording; returns the state at `t_final`.
pub fn evolve_to(kappa0: &FiniteRankOperator, interaction: &SelfInteraction, dt: f64, t_final: f64) -> Result<FiniteRankOperator> {
    let stepper = Stepper::new(kappa0.grid().clone(), *interaction, dt)?;
    let steps = (t_final / dt).round();
    if steps < 0.0 || (steps * dt - t_final).abs() > 1e-9 * t_final.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!("final time {t_final} is not a multiple of dt = {dt}")));
    }
    let mut state = EvolutionState::new(kappa0.clone(), 0.0);
    stepper.advance(&mut state, steps as usize)?;
    Ok(state.kappa)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_m, p0 = P_{m-1}
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

#[derive(Clone, Debug)]
pub struct PicardResult {
    pub kappa: FiniteRankOperator,
    /// `||Phi^{k+1}(T) - Phi^k(T)||_{I^2}` per iteration.
    pub increments: Vec<f64>,
}

/// Fixed-point iteration of the Duhamel map
/// `k(t) = alpha_t(k_0) - i int_0^t alpha_{t-s}([g(rho(s)), k(s)]) ds`,
/// by Gauss collocation in the interaction picture.
pub fn picard_duhamel(
    kappa0: &FiniteRankOperator,
    interaction: &SelfInteraction,
    t_final: f64,
    n_iter: usize,
    nodes: usize,
) -> Result<PicardResult> {
    if !(t_final > 0.0) || n_iter == 0 || nodes < 2 {
        return Err(Error::InvalidParameter(format!(
            "Picard horizon {t_final}, {n_iter} iterations, {nodes} nodes"
        )));
    }
    let (x, w) = gauss_legendre(nodes);
    let s: Vec<f64> = x.iter().map(|v| 0.5 * t_final * (v + 1.0)).collect();
    let wt: Vec<f64> = w.iter().map(|v| 0.5 * t_final * v).collect();
    let lagrange = |k: usize, t: f64| -> f64 {
        (0..nodes)
            .filter(|&m| m != k)
            .map(|m| (t - s[m]) / (s[k] - s[m]))
            .product()
    };
    // S[j][k] = int_0^{s_j} l_k
    let integ: Vec<Vec<f64>> = (0..nodes)
        .map(|j| {
            (0..nodes)
                .map(|k| {
                    x.iter()
                        .zip(&w)
                        .map(|(xi, wi)| 0.5 * s[j] * wi * lagrange(k, 0.5 * s[j] * (xi + 1.0)))
                        .sum()
                })
                .collect()
        })
        .collect();
    let tol = 1e-13;
    let mut eta: Vec<FiniteRankOperator> = vec![kappa0.clone(); nodes];
    let norm0 = kappa0.hs_norm();
    let mut increments = Vec::with_capacity(n_iter);
    let mut current: Option<FiniteRankOperator> = None;
    let minus_i = C64::new(0.0, -1.0);
    for iter in 0..n_iter {
        let forces: Vec<FiniteRankOperator> = (0..nodes)
            .map(|k| {
                let kap = free_flow(&eta[k], s[k])?;
                if interaction.is_free() {
                    return Ok(FiniteRankOperator::zero(kappa0.grid().clone()));
                }
                let g = interaction.evaluate_g(&density_of_gamma(&kap))?;
                free_flow(&kap.commutator_with_multiplier(g.values())?, -s[k])
            })
            .collect::<Result<_>>()?;
        let combine = |coeffs: &[f64]| -> Result<FiniteRankOperator> {
            let mut acc = kappa0.clone();
            for (f, &c) in forces.iter().zip(coeffs) {
                if f.rank() > 0 {
                    acc = acc.add(&f.scale(minus_i * c))?;
                }
            }
            acc.compress(tol)
        };
        let eta_t = combine(&wt)?;
        let kappa_t = free_flow(&eta_t, t_final)?;
        if kappa_t.hs_norm() > 10.0 * norm0.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence { iterate: iter + 1 });
        }
        if let Some(prev) = &current {
            increments.push(kappa_t.hs_distance(prev)?);
        }
        current = Some(kappa_t);
        if iter + 1 < n_iter {
            eta = (0..nodes).map(|j| combine(&integ[j])).collect::<Result<_>>()?;
        }
    }
    Ok(PicardResult {
        kappa: current.expect("at least one iteration"),
        increments,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AprioriReport {
    pub s_ref: f64,
    pub w_ref: f64,
    /// `sup_{t >= s_ref} W^b(t) / W^b(s_ref)`.
    pub sup_ratio: f64,
    pub within_bound: bool,
    /// `|l1| W^b(s)^2 + |l2| W^b(s)^{2 beta}`.
    pub smallness: f64,
    pub samples: usize,
}

/// Checks `||k(t)||_{W^b} <= 2 ||k(s)||_{W^b}` for `t >= s_ref` on a series.
pub fn apriori_monitor(
    series: &NormSeries,
    b: usize,
    s_ref: f64,
    interaction: &SelfInteraction,
) -> Result<AprioriReport> {
    let column = match b {
        1 => "W1",
        2 => "W2",
        _ => return Err(Error::InvalidParameter(format!("a priori order {b}"))),
    };
    let times = series.times();
    let values = series.column(column).expect("known column");
    let start = times
        .iter()
        .position(|&t| t >= s_ref - 1e-9)
        .ok_or(Error::TooFewSamples { found: 0, needed: 1 })?;
    let w_ref = values[start];
    if !(w_ref > 0.0) {
        return Err(Error::NonPositiveSample {
            time: times[start],
            value: w_ref,
        });
    }
    let sup_ratio = values[start..].iter().map(|v| v / w_ref).fold(0.0, f64::max);
    let smallness = interaction.lambda1.abs() * w_ref * w_ref
        + interaction.lambda2.abs() * w_ref.powf(2.0 * interaction.beta);
    Ok(AprioriReport {
        s_ref: times[start],
        w_ref,
        sup_ratio,
        within_bound: sup_ratio <= 2.0,
        smallness,
        samples: values.len() - start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::boost;
    use crate::grid::PotentialSpec;
    use crate::random::{gaussian_mixture, gaussian_orbital, rng_from_seed, MixtureParams};
    use std::f64::consts::PI;

    fn projection(grid: &Arc<Grid>, center: f64, width: f64, v: f64) -> FiniteRankOperator {
        let phi = gaussian_orbital(grid, [center, 0.0, 0.0], width, [v, 0.0, 0.0]);
        FiniteRankOperator::hermitian(grid.clone(), &[1.0], vec![phi]).unwrap()
    }

    #[test]
    fn free_step_is_free_conjugation() {
        let g = Grid::new(1, 256, 20.0).unwrap();
        let k = projection(&g, 1.0, 1.0, 0.5);
        let s = step_strang(&EvolutionState::new(k.clone(), 0.0), 0.1, &SelfInteraction::free()).unwrap();
        let want = free_flow(&k, 0.1).unwrap();
        assert!(s.kappa.hs_distance(&want).unwrap() < 1e-13);
        assert!((s.t - 0.1).abs() < 1e-15);
        assert!(step_strang(&EvolutionState::new(k, 0.0), 0.0, &SelfInteraction::free()).is_err());
    }

    #[test]
    fn density_of_gamma_matches_composition() {
        let g = Grid::new(1, 128, 12.0).unwrap();
        let mut rng = rng_from_seed(5);
        let k = crate::random::random_operator(&g, &Default::default(), &mut rng);
        let a = density_of_gamma(&k);
        let b = k.adjoint().compose(&k).unwrap().den();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    /// Direct split-step for `i psi_t = -psi_xx + l2 (w |psi|^2)^beta psi`.
    fn scalar_nls(grid: &Grid, psi: &mut Vec<C64>, w: f64, l2: f64, beta: f64, dt: f64, steps: usize) {
        let half = grid.free_symbol(dt / 2.0);
        for _ in 0..steps {
            grid.apply_symbol_in_place(psi, &half).unwrap();
            for v in psi.iter_mut() {
                let rho = w * v.norm_sqr();
                *v *= C64::from_polar(1.0, -l2 * rho.powf(beta) * dt);
            }
            grid.apply_symbol_in_place(psi, &half).unwrap();
        }
    }

    #[test]
    fn rank_one_reduces_to_scalar_nls() {
        let g = Grid::new(1, 256, 24.0).unwrap();
        let phi = gaussian_orbital(&g, [0.5, 0.0, 0.0], 1.0, [0.7, 0.0, 0.0]);
        let w: f64 = 0.8;
        let k0 = FiniteRankOperator::hermitian(g.clone(), &[w.sqrt()], vec![phi.clone()]).unwrap();
        let s = SelfInteraction::power(0.5, 2.0);
        let (dt, steps) = (1e-3, 1000);
        let k = evolve_to(&k0, &s, dt, dt * steps as f64).unwrap();
        let mut psi = phi;
        scalar_nls(&g, &mut psi, w, 0.5, 2.0, dt, steps);
        let want = FiniteRankOperator::hermitian(g.clone(), &[w.sqrt()], vec![psi]).unwrap();
        assert!(k.hs_distance(&want).unwrap() < 1e-9);
    }

    #[test]
    fn strang_is_second_order() {
        let g = Grid::new(1, 256, 24.0).unwrap();
        let mut rng = rng_from_seed(2);
        let k0 = gaussian_mixture(&g, &MixtureParams { rank: 2, width: 1.0, center_spread: Some(1.0), max_velocity: 1.0 }, &mut rng).unwrap();
        let s = SelfInteraction::power(2.0, 2.0);
        let t = 0.4;
        let a = evolve_to(&k0, &s, 0.02, t).unwrap();
        let b = evolve_to(&k0, &s, 0.01, t).unwrap();
        let c = evolve_to(&k0, &s, 0.005, t).unwrap();
        let ratio = a.hs_distance(&b).unwrap() / b.hs_distance(&c).unwrap();
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn flow_preserves_singular_values() {
        let g = Grid::new(1, 256, 24.0).unwrap();
        let mut rng = rng_from_seed(4);
        let k0 = gaussian_mixture(&g, &MixtureParams { rank: 3, width: 1.2, center_spread: Some(2.0), max_velocity: 1.0 }, &mut rng).unwrap();
        let s = SelfInteraction::power(1.0, 2.0);
        let k = evolve_to(&k0, &s, 0.01, 2.0).unwrap();
        for r in [1.0, 2.0, f64::INFINITY] {
            let a = k0.schatten_norm(r).unwrap();
            let b = k.schatten_norm(r).unwrap();
            assert!((a - b).abs() < 1e-10 * a);
        }
    }

    #[test]
    fn roots_related_by_a_unitary_give_the_same_density_matrix() {
        let g = Grid::new(1, 256, 24.0).unwrap();
        let mut rng = rng_from_seed(6);
        let k0 = gaussian_mixture(&g, &MixtureParams { rank: 2, width: 1.2, center_spread: Some(2.0), max_velocity: 1.0 }, &mut rng).unwrap();
        // U k with U = |u_1><u_2| + |u_2><u_1| on the range, identity elsewhere
        // commutes with nothing in particular but leaves k^* k unchanged
        let pairs = k0.hermitian_eigen().unwrap();
        let (u1, u2) = (&pairs[0].1, &pairs[1].1);
        let swap = FiniteRankOperator::from_terms(
            g.clone(),
            vec![
                crate::operator::Term { coeff: C64::new(1.0, 0.0), left: u1.clone(), right: u2.clone() },
                crate::operator::Term { coeff: C64::new(0.0, 1.0), left: u2.clone(), right: u1.clone() },
            ],
        )
        .unwrap();
        let uk0 = swap.compose(&k0).unwrap();
        let gamma0 = k0.adjoint().compose(&k0).unwrap();
        assert!(uk0.adjoint().compose(&uk0).unwrap().hs_distance(&gamma0).unwrap() < 1e-12);
        let s = SelfInteraction::power(1.0, 2.0);
        let a = evolve_to(&k0, &s, 0.01, 1.0).unwrap();
        let b = evolve_to(&uk0, &s, 0.01, 1.0).unwrap();
        let ga = a.adjoint().compose(&a).unwrap();
        let gb = b.adjoint().compose(&b).unwrap();
        assert!(ga.hs_distance(&gb).unwrap() < 1e-8);
    }

    #[test]
    fn galilean_covariance() {
        let g = Grid::new(1, 512, 40.0).unwrap();
        let mut rng = rng_from_seed(8);
        let k0 = gaussian_mixture(&g, &MixtureParams { rank: 2, width: 1.2, center_spread: Some(2.0), max_velocity: 0.5 }, &mut rng).unwrap();
        let s = SelfInteraction::power(1.0, 2.0);
        // momentum on the lattice so the phase is periodic
        let v = [4.0 * PI / g.half_length(), 0.0, 0.0];
        let t = 2.0;
        let a = evolve_to(&boost(&k0, v, 0.0).unwrap(), &s, 0.005, t).unwrap();
        let b = boost(&evolve_to(&k0, &s, 0.005, t).unwrap(), v, t).unwrap();
        assert!(a.hs_distance(&b).unwrap() < 1e-6, "{}", a.hs_distance(&b).unwrap());
    }

    #[test]
    fn free_gaussian_gamma_sup_norm() {
        let g = Grid::new(1, 1024, 128.0).unwrap();
        let k0 = projection(&g, 0.0, 1.0, 0.0);
        let sched = Schedule { t_final: 8.0, dt: 0.5, record_every: 1.0, snapshot_times: vec![] };
        let mon = MonitorConfig { boundary_limit: 1e-3, ..Default::default() };
        let traj = evolve(EvolutionState::new(k0, 0.0), &SelfInteraction::free(), &sched, &mon, &mut |_| Ok(())).unwrap();
        for row in traj.series.rows() {
            if [1.0, 2.0, 4.0, 8.0].contains(&row.t) {
                let want = (PI * (1.0 + 4.0 * row.t * row.t)).powf(-0.5);
                assert!((row.gamma_inf - want).abs() / want < 1e-6, "t = {}: {} vs {want}", row.t, row.gamma_inf);
            }
            assert!((row.trace - 1.0).abs() < 1e-12);
            assert!(row.commut_residual < 1e-10, "{}", row.commut_residual);
        }
        assert_eq!(traj.series.len(), 9);
    }

    #[test]
    fn energy_drift_is_second_order() {
        let g = Grid::new(1, 256, 24.0).unwrap();
        let mut rng = rng_from_seed(10);
        let k0 = gaussian_mixture(&g, &MixtureParams { rank: 2, width: 1.0, center_spread: Some(1.0), max_velocity: 1.0 }, &mut rng).unwrap();
        let s = SelfInteraction::power(1.0, 2.0);
        let e0 = energy(&k0, &s).unwrap();
        let drift = |dt: f64| {
            let k = evolve_to(&k0, &s, dt, 1.0).unwrap();
            (energy(&k, &s).unwrap() - e0).abs()
        };
        let (a, b) = (drift(0.02), drift(0.01));
        assert!((a / b - 4.0).abs() < 0.5, "{a} {b}");
    }

    #[test]
    fn commutation_identity_along_the_flow() {
        // power law in d = 1
        let g = Grid::new(1, 512, 32.0).unwrap();
        let mut rng = rng_from_seed(12);
        let k0 = gaussian_mixture(&g, &MixtureParams { rank: 2, width: 1.0, center_spread: Some(1.0), max_velocity: 1.0 }, &mut rng).unwrap();
        let s = SelfInteraction::power(1.0, 2.0);
        let dt = 1e-3;
        let a = EvolutionState::new(evolve_to(&k0, &s, dt, 0.5).unwrap(), 0.5);
        let b = step_strang(&a, dt, &s).unwrap();
        let r = commutation_residual(&a, &b, &s).unwrap();
        assert!(r.residual < 1e-4, "{r:?}");
        assert!(r.lhs.abs() > 1e-6);
        // free case
        let f = SelfInteraction::free();
        let b = step_strang(&a, dt, &f).unwrap();
        let r = commutation_residual(&a, &b, &f).unwrap();
        assert!(r.lhs.abs() < 1e-10 && r.rhs.abs() < 1e-10);
    }

    #[test]
    fn commutation_identity_for_hartree_in_two_dimensions() {
        let g = Grid::new(2, 64, 12.0).unwrap();
        let mut rng = rng_from_seed(13);
        let k0 = gaussian_mixture(&g, &MixtureParams { rank: 2, width: 1.2, center_spread: Some(1.0), max_velocity: 1.0 }, &mut rng).unwrap();
        let s = SelfInteraction::hartree(1.0, PotentialSpec::Riesz { a: 1.5 });
        let dt = 1e-3;
        let a = EvolutionState::new(evolve_to(&k0, &s, dt, 0.2).unwrap(), 0.2);
        let b = step_strang(&a, dt, &s).unwrap();
        let r = commutation_residual(&a, &b, &s).unwrap();
        assert!(r.residual < 1e-4, "{r:?}");
    }

    #[test]
    fn picard_matches_strang() {
        let g = Grid::new(1, 256, 24.0).unwrap();
        let mut rng = rng_from_seed(14);
        let k0 = gaussian_mixture(&g, &MixtureParams { rank: 2, width: 1.0, center_spread: Some(1.0), max_velocity: 1.0 }, &mut rng).unwrap();
        let free = picard_duhamel(&k0, &SelfInteraction::free(), 0.05, 1, 8).unwrap();
        assert!(free.kappa.hs_distance(&free_flow(&k0, 0.05).unwrap()).unwrap() < 1e-12);

        let s = SelfInteraction::power(0.05, 2.0);
        let p = picard_duhamel(&k0, &s, 0.05, 6, 8).unwrap();
        for w in p.increments.windows(2) {
            assert!(w[1] < w[0] || w[1] < 1e-14);
        }
        let k = evolve_to(&k0, &s, 1e-3, 0.05).unwrap();
        assert!(p.kappa.hs_distance(&k).unwrap() < 1e-6);
    }

    #[test]
    fn evolve_records_and_snapshots() {
        let g = Grid::new(1, 128, 16.0).unwrap();
        let k0 = projection(&g, 0.0, 1.0, 0.0);
        let sched = Schedule { t_final: 1.0, dt: 0.05, record_every: 0.25, snapshot_times: Schedule::dyadic_times(0.25, 1.0) };
        let mut rows = 0;
        let mut snaps = 0;
        let traj = evolve(
            EvolutionState::new(k0, 0.0),
            &SelfInteraction::power(0.2, 2.0),
            &sched,
            &MonitorConfig::default(),
            &mut |e| {
                match e {
                    Event::Row(_) => rows += 1,
                    Event::Snapshot(_) => snaps += 1,
                }
                Ok(())
            },
        )
        .unwrap();
        assert_eq!((rows, snaps), (5, 3));
        assert_eq!(traj.series.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(traj.snapshots.iter().map(|s| s.t).collect::<Vec<_>>(), vec![0.25, 0.5, 1.0]);
        assert_eq!(Schedule::dyadic_times(5.0, 40.0), vec![5.0, 10.0, 20.0, 40.0]);
    }

    #[test]
    fn restart_matches_unbroken_run() {
        let g = Grid::new(1, 128, 16.0).unwrap();
        let k0 = projection(&g, 0.0, 1.0, 0.3);
        let s = SelfInteraction::power(0.3, 2.0);
        let sched = Schedule { t_final: 1.0, dt: 0.01, record_every: 0.1, snapshot_times: vec![0.5] };
        let mon = MonitorConfig::default();
        let full = evolve(EvolutionState::new(k0, 0.0), &s, &sched, &mon, &mut |_| Ok(())).unwrap();
        let snap = full.snapshots[0].clone();
        let rest = evolve(EvolutionState::new(snap.kappa, snap.t), &s, &sched, &mon, &mut |_| Ok(())).unwrap();
        for row in rest.series.rows().iter().skip(1) {
            let other = full.series.rows().iter().find(|r| (r.t - row.t).abs() < 1e-12).unwrap();
            for (a, b) in row.values().iter().zip(other.values()) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn boundary_alarm_fires() {
        let g = Grid::new(1, 128, 8.0).unwrap();
        let k0 = projection(&g, 0.0, 1.0, 3.0);
        let sched = Schedule { t_final: 2.0, dt: 0.01, record_every: 0.1, snapshot_times: vec![] };
        let mut seen = 0;
        let err = evolve(EvolutionState::new(k0, 0.0), &SelfInteraction::free(), &sched, &MonitorConfig::default(), &mut |_| {
            seen += 1;
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, Error::BoundaryMass { .. }));
        assert!(seen > 0);
    }

    #[test]
    fn apriori_monitor_on_free_flow() {
        let g = Grid::new(1, 2048, 256.0).unwrap();
        let k0 = projection(&g, 0.0, 1.0, 0.0);
        let sched = Schedule { t_final: 12.0, dt: 0.5, record_every: 1.0, snapshot_times: vec![] };
        let mon = MonitorConfig { boundary_limit: 1.0, commutation: false, ..Default::default() };
        let traj = evolve(EvolutionState::new(k0, 0.0), &SelfInteraction::free(), &sched, &mon, &mut |_| Ok(())).unwrap();
        let r = apriori_monitor(&traj.series, 1, 10.0, &SelfInteraction::free()).unwrap();
        assert!((r.sup_ratio - 1.0).abs() < 1e-8 && r.within_bound);
        assert_eq!(r.samples, 3);
        assert!(apriori_monitor(&traj.series, 1, 100.0, &SelfInteraction::free()).is_err());
    }

    #[test]
    fn gauss_legendre_rules() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // exact for degree 15
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }
}
