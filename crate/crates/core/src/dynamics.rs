//! Time discretisations of the particle flow and their diagnostics.
//!
//! `step_euler` is explicit Euler on the particle ODE with the minimal
//! selection velocity. Two event rules keep the discrete flow faithful at
//! the nonsmooth points of the kernel:
//!
//! * pairs that collide (their difference reverses orientation within the
//!   step, or ends closer than `merge_tol`) are merged;
//! * pairs of a radial kernel whose distance crosses a kink radius within
//!   the step are placed on the kink, so that sliding along a kink is
//!   resolved by the selection problem instead of chattering.

use serde::Serialize;

use crate::energy::interaction_energy;
use crate::error::{Error, Result};
use crate::measures::{MergeGroup, ParticleMeasure};
use crate::potentials::Potential;
use crate::selection::{l2_norm_sq, minimal_selection, radial_minimal_velocity, SelectionOptions};
use crate::transport::wasserstein;
use crate::vecmath::{axpy, dist, dot, norm, norm_inf, sub};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_MERGE_TOL: f64 = 1e-8;
/// Metric slope below which a state is treated as stationary.
pub const STATIONARY_TOL: f64 = 1e-12;
pub const JKO_MAX_ITER: usize = 10_000;

/// Minimal-selection velocity `v_j = sum_i m_i eta(x_i - x_j)`. Convex radial
/// kernels use the pointwise minimal subgradient directly.
pub fn velocity_field(
    pot: &Potential,
    mu: &ParticleMeasure,
    opts: &SelectionOptions,
) -> Result<Vec<Vec<f64>>> {
    if pot.radial_profile().is_some() && pot.is_convex() {
        radial_minimal_velocity(pot, mu, opts.kink_tol)
    } else {
        Ok(minimal_selection(pot, mu, opts)?.velocities)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EulerStep {
    pub measure: ParticleMeasure,
    pub merges: Vec<MergeGroup>,
    /// Pairs `(i, j)` (pre-step indices) placed on a kink.
    pub snapped: Vec<(usize, usize)>,
}

/// One explicit Euler step `x' = x + dt v` followed by merging.
pub fn step_euler(
    pot: &Potential,
    mu: &ParticleMeasure,
    dt: f64,
    merge_tol: f64,
) -> Result<ParticleMeasure> {
    let opts = SelectionOptions::default();
    let v = velocity_field(pot, mu, &opts)?;
    Ok(advance(pot, mu, &v, dt, merge_tol, opts.kink_tol)?.measure)
}

/// Moves every atom along the given velocities and applies the event rules.
pub fn advance(
    pot: &Potential,
    mu: &ParticleMeasure,
    velocities: &[Vec<f64>],
    dt: f64,
    merge_tol: f64,
    kink_tol: f64,
) -> Result<EulerStep> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::OutOfRange(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if !(merge_tol >= 0.0) {
        return Err(Error::OutOfRange(format!(
            "merge tolerance must be nonnegative, got {merge_tol}"
        )));
    }
    if velocities.len() != mu.len() {
        return Err(Error::OutOfRange(format!(
            "{} velocities for {} atoms",
            velocities.len(),
            mu.len()
        )));
    }
    let n = mu.len();
    let mut next: Vec<Vec<f64>> = mu.positions().to_vec();
    for (x, v) in next.iter_mut().zip(velocities) {
        axpy(x, dt, v);
    }

    let kinks = pot
        .radial_profile()
        .map(|p| p.kink_radii())
        .unwrap_or_default();
    let mut snapped = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let before = norm(&sub(mu.position(i), mu.position(j)));
            let z = sub(&next[i], &next[j]);
            let after = norm(&z);
            if after == 0.0 {
                continue;
            }
            let crossed = kinks
                .iter()
                .find(|&&r| (before - r).abs() > kink_tol && (before - r) * (after - r) < 0.0);
            if let Some(&r) = crossed {
                let (mi, mj) = (mu.mass(i), mu.mass(j));
                let shift = r / after - 1.0;
                let total = mi + mj;
                let zi = z.clone();
                axpy(&mut next[i], shift * mj / total, &zi);
                axpy(&mut next[j], -shift * mi / total, &zi);
                snapped.push((i, j));
            }
        }
    }

    let mut links = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let old = sub(mu.position(i), mu.position(j));
            let new = sub(&next[i], &next[j]);
            let collided = norm(&old) > 0.0 && dot(&old, &new) <= 0.0;
            if collided || dist(&next[i], &next[j]) <= merge_tol {
                links.push((i, j));
            }
        }
    }
    let moved = ParticleMeasure::new(next, mu.masses().to_vec())?;
    let (measure, merges) = moved.merge_linked(&links);
    Ok(EulerStep {
        measure,
        merges,
        snapped,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimulationOptions {
    pub dt: f64,
    pub t_end: f64,
    pub merge_tol: f64,
    pub stationary_tol: f64,
    pub selection: SelectionOptions,
}

impl SimulationOptions {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            merge_tol: DEFAULT_MERGE_TOL,
            stationary_tol: STATIONARY_TOL,
            selection: SelectionOptions::default(),
        }
    }
}

/// Diagnostics of one recorded state.
#[derive(Debug, Clone, Serialize)]
pub struct StateDiagnostics {
    pub energy: f64,
    /// `(sum_j m_j |v_j|^2)^(1/2)`.
    pub slope: f64,
    pub max_speed: f64,
    /// Merges performed by the step that produced this state.
    pub merges: Vec<MergeGroup>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ParticleMeasure>,
    pub diagnostics: Vec<StateDiagnostics>,
    /// Set when the run stopped early at a stationary state.
    pub stationary: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &ParticleMeasure {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }

    pub fn last_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory has at least one state")
    }

    pub fn final_diagnostics(&self) -> &StateDiagnostics {
        self.diagnostics
            .last()
            .expect("trajectory has at least one state")
    }

    /// State at grid time `t`, holding the last state after a stationary stop.
    fn state_at_index(&self, k: usize) -> &ParticleMeasure {
        self.states.get(k).unwrap_or_else(|| self.last_state())
    }
}

/// Repeated `step_euler` from `mu0` up to `t_end`.
pub fn simulate(
    pot: &Potential,
    mu0: &ParticleMeasure,
    dt: f64,
    t_end: f64,
    merge_tol: f64,
) -> Result<Trajectory> {
    let mut opts = SimulationOptions::new(dt, t_end);
    opts.merge_tol = merge_tol;
    simulate_with(pot, mu0, &opts)
}

pub fn simulate_with(
    pot: &Potential,
    mu0: &ParticleMeasure,
    opts: &SimulationOptions,
) -> Result<Trajectory> {
    simulate_until(pot, mu0, opts, |_, _| false)
}

/// Simulation that also stops once `stop(t, state)` holds for a recorded state.
pub fn simulate_until<F>(
    pot: &Potential,
    mu0: &ParticleMeasure,
    opts: &SimulationOptions,
    mut stop: F,
) -> Result<Trajectory>
where
    F: FnMut(f64, &ParticleMeasure) -> bool,
{
    let SimulationOptions { dt, t_end, .. } = *opts;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::OutOfRange(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::OutOfRange(format!(
            "final time must be positive, got {t_end}"
        )));
    }
    if mu0.dim() != pot.dimension() {
        return Err(Error::DimensionMismatch {
            expected: pot.dimension(),
            got: mu0.dim(),
        });
    }
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        diagnostics: Vec::new(),
        stationary: false,
    };
    let mut mu = mu0.clone();
    let mut merges = Vec::new();
    let mut k: u64 = 0;
    let mut t = 0.0;
    loop {
        let v = velocity_field(pot, &mu, &opts.selection)?;
        let slope = l2_norm_sq(mu.masses(), &v).sqrt();
        let max_speed = v.iter().map(|vj| norm(vj)).fold(0.0, f64::max);
        traj.times.push(t);
        traj.diagnostics.push(StateDiagnostics {
            energy: interaction_energy(pot, &mu)?,
            slope,
            max_speed,
            merges: std::mem::take(&mut merges),
        });
        traj.states.push(mu.clone());
        if slope < opts.stationary_tol {
            traj.stationary = true;
            break;
        }
        if t >= t_end * (1.0 - 1e-12) || stop(t, &mu) {
            break;
        }
        k += 1;
        let t_next = (k as f64 * dt).min(t_end);
        let step = advance(
            pot,
            &mu,
            &v,
            t_next - t,
            opts.merge_tol,
            opts.selection.kink_tol,
        )?;
        mu = step.measure;
        merges = step.merges;
        t = t_next;
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct JkoOptions {
    pub inner_tol: f64,
    pub max_iter: usize,
    pub selection: SelectionOptions,
}

impl Default for JkoOptions {
    fn default() -> Self {
        Self {
            inner_tol: 1e-12,
            max_iter: JKO_MAX_ITER,
            selection: SelectionOptions::default(),
        }
    }
}

/// `G(nu) = W(nu) + d_W^2(nu, mu) / (2 tau)`.
pub fn jko_objective(
    pot: &Potential,
    nu: &ParticleMeasure,
    mu: &ParticleMeasure,
    tau: f64,
) -> Result<f64> {
    let d = wasserstein(nu, mu)?.0;
    Ok(interaction_energy(pot, nu)? + d * d / (2.0 * tau))
}

fn check_jko_input(pot: &Potential, mu: &ParticleMeasure, tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::OutOfRange(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if tau * (-pot.lambda()).max(0.0) >= 0.5 {
        return Err(Error::OutOfRange(format!(
            "tau = {tau} too large for lambda = {}: need tau * |min(lambda, 0)| < 1/2",
            pot.lambda()
        )));
    }
    if mu.dim() != pot.dimension() {
        return Err(Error::DimensionMismatch {
            expected: pot.dimension(),
            got: mu.dim(),
        });
    }
    if mu.dim() > 1 && !mu.is_uniform(1e-12) {
        return Err(Error::OutOfRange(
            "minimizing movement in dimension > 1 needs uniform masses".into(),
        ));
    }
    Ok(())
}

/// One minimizing-movement step: minimises `G` over atom positions with the
/// masses of `mu` fixed.
pub fn jko_step(
    pot: &Potential,
    mu: &ParticleMeasure,
    tau: f64,
    inner_tol: f64,
) -> Result<ParticleMeasure> {
    jko_step_with(
        pot,
        mu,
        tau,
        &JkoOptions {
            inner_tol,
            ..Default::default()
        },
    )
}

pub fn jko_step_with(
    pot: &Potential,
    mu: &ParticleMeasure,
    tau: f64,
    opts: &JkoOptions,
) -> Result<ParticleMeasure> {
    check_jko_input(pot, mu, tau)?;
    if !(opts.inner_tol > 0.0) {
        return Err(Error::OutOfRange(format!(
            "inner tolerance must be positive, got {}",
            opts.inner_tol
        )));
    }
    let lip = pot
        .lambda()
        .abs()
        .max(2.0 * pot.growth_constant().unwrap_or(1.0));
    let h = tau / (1.0 + tau * lip);
    let mut nu = mu.clone();
    let mut last_step = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (_, gamma) = wasserstein(&nu, mu)?;
        let targets = gamma.barycentric_targets();
        let v = minimal_selection(pot, &nu, &opts.selection)?.velocities;
        let mut next = nu.positions().to_vec();
        let mut step = 0.0f64;
        for ((y, vj), t) in next.iter_mut().zip(&v).zip(&targets) {
            // grad / m_j = xi_j + (y_j - T_j) / tau, with xi_j = -v_j
            let g: Vec<f64> = y
                .iter()
                .zip(vj)
                .zip(t)
                .map(|((yi, vi), ti)| -vi + (yi - ti) / tau)
                .collect();
            axpy(y, -h, &g);
            step = step.max(h * norm_inf(&g));
        }
        nu = nu.with_positions(next)?;
        last_step = step;
        if step < opts.inner_tol {
            return Ok(nu);
        }
    }
    Err(Error::JkoNotConverged {
        iterations: opts.max_iter,
        step: last_step,
    })
}

/// `|int_0^T |v|^2 dt + W(mu(T)) - W(mu(0))|`, trapezoidal in time.
pub fn energy_identity_report(traj: &Trajectory) -> f64 {
    if traj.is_empty() {
        return 0.0;
    }
    let dissipated: f64 = traj
        .times
        .windows(2)
        .zip(traj.diagnostics.windows(2))
        .map(|(t, d)| 0.5 * (t[1] - t[0]) * (d[0].slope.powi(2) + d[1].slope.powi(2)))
        .sum();
    let first = traj.diagnostics[0].energy;
    let last = traj.final_diagnostics().energy;
    (dissipated + last - first).abs()
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// `e^{-lambda t} d_W(mu_0, nu_0)`.
    pub bounds: Vec<f64>,
    /// `max_t d_W(mu(t), nu(t)) - e^{-lambda t} d_W(mu_0, nu_0)`.
    pub worst_violation: f64,
}

/// Checks `d_W(mu(t), nu(t)) <= e^{-lambda t} d_W(mu(0), nu(0))` along two
/// trajectories on the same grid. A trajectory that stopped at a stationary
/// state is extended by its last state.
pub fn contraction_report(
    pot: &Potential,
    a: &Trajectory,
    b: &Trajectory,
) -> Result<ContractionReport> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return Err(Error::OutOfRange("empty trajectory".into()));
    }
    if long.len() != short.len() && !short.stationary {
        return Err(Error::OutOfRange(format!(
            "trajectories have {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    for (ta, tb) in long.times.iter().zip(&short.times) {
        if (ta - tb).abs() > 1e-12 * ta.abs().max(1.0) {
            return Err(Error::OutOfRange(format!(
                "time grids differ ({ta} vs {tb})"
            )));
        }
    }
    let lambda = pot.lambda();
    let d0 = wasserstein(&a.states[0], &b.states[0])?.0;
    let mut report = ContractionReport {
        times: Vec::new(),
        distances: Vec::new(),
        bounds: Vec::new(),
        worst_violation: f64::NEG_INFINITY,
    };
    for (k, &t) in long.times.iter().enumerate() {
        let d = wasserstein(a.state_at_index(k), b.state_at_index(k))?.0;
        let bound = (-lambda * t).exp() * d0;
        report.worst_violation = report.worst_violation.max(d - bound);
        report.times.push(t);
        report.distances.push(d);
        report.bounds.push(bound);
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CollapseReport {
    /// First recorded time with `R(t) < radius_tol`, or `None` within the budget.
    pub collapse_time: Option<f64>,
    pub times: Vec<f64>,
    /// `R(t)`: largest distance of an atom to the center of mass.
    pub radii: Vec<f64>,
    /// Largest increase `R(t_{k+1}) - R(t_k) - dt * max|v(t_k)|`; nonpositive
    /// when the radius is non-increasing up to the allowed slack.
    pub worst_increase: f64,
    pub monotone: bool,
    pub min_slope: f64,
}

/// Runs the flow until the support radius drops below `radius_tol` or `t_max`
/// is reached. Needs a convex radial kernel and uniform masses.
pub fn collapse_experiment(
    pot: &Potential,
    mu0: &ParticleMeasure,
    dt: f64,
    radius_tol: f64,
    t_max: f64,
) -> Result<CollapseReport> {
    let min_slope = pot
        .radial_profile()
        .filter(|_| pot.is_convex())
        .and_then(|p| p.min_slope())
        .ok_or_else(|| {
            Error::UnsupportedPotential(
                "collapse needs a convex nondecreasing radial kernel".into(),
            )
        })?;
    if !mu0.is_uniform(1e-12) {
        return Err(Error::InvalidMeasure(
            "collapse experiment needs uniform masses".into(),
        ));
    }
    if !(radius_tol >= 0.0) {
        return Err(Error::OutOfRange(format!(
            "radius tolerance must be nonnegative, got {radius_tol}"
        )));
    }
    let crossed = |mu: &ParticleMeasure| {
        let r = mu.radius();
        r < radius_tol || mu.len() == 1
    };
    let opts = SimulationOptions::new(dt, t_max);
    let traj = simulate_until(pot, mu0, &opts, |_, mu| crossed(mu))?;
    let radii: Vec<f64> = traj.states.iter().map(|m| m.radius()).collect();
    let collapse_time = traj
        .states
        .iter()
        .zip(&traj.times)
        .find(|(m, _)| crossed(m))
        .map(|(_, t)| *t);
    let mut worst_increase = f64::NEG_INFINITY;
    for k in 1..radii.len() {
        let h = traj.times[k] - traj.times[k - 1];
        let slack = h * traj.diagnostics[k - 1].max_speed;
        worst_increase = worst_increase.max(radii[k] - radii[k - 1] - slack);
    }
    let monotone = worst_increase <= 1e-12;
    Ok(CollapseReport {
        collapse_time,
        times: traj.times,
        radii,
        worst_increase: if worst_increase.is_finite() {
            worst_increase
        } else {
            0.0
        },
        monotone,
        min_slope,
    })
}
