//! Worked examples: counterexamples to the pointwise minimal selection and
//! stationary states of the double-well kernels.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;
use crate::potentials::{Potential, DEFAULT_KINK_TOL};
use crate::selection::{build_selection_problem, l2_norm_sq, minimal_selection, SelectionOptions};
use crate::vecmath::norm;

/// `(1/4 - a) d_{-1} + 1/2 d_0 + (1/4 + a) d_{(1-4a)/(1+4a)}`, stationary for
/// the Lipschitz double well when `0 < a < 1/4`.
pub fn three_particle_family(alpha: f64) -> Result<ParticleMeasure> {
    if !(alpha > 0.0 && alpha < 0.25) {
        return Err(Error::OutOfRange(format!(
            "alpha must lie in (0, 1/4), got {alpha}"
        )));
    }
    let third = (1.0 - 4.0 * alpha) / (1.0 + 4.0 * alpha);
    ParticleMeasure::normalized(
        vec![vec![-1.0], vec![0.0], vec![third]],
        vec![0.25 - alpha, 0.5, 0.25 + alpha],
        1e-12,
    )
}

/// `(m3 (x3 - x2) + m3 (x3 - x1)) / (m1 + m2)` for a sorted three-atom
/// measure on the line; equal to one on the stationary family.
pub fn vertex_condition(mu: &ParticleMeasure) -> Result<f64> {
    if mu.len() != 3 || mu.dim() != 1 {
        return Err(Error::InvalidMeasure(
            "vertex condition needs three atoms on the line".into(),
        ));
    }
    let x = |i: usize| mu.position(i)[0];
    let m = |i: usize| mu.mass(i);
    Ok((m(2) * (x(2) - x(1)) + m(2) * (x(2) - x(0))) / (m(0) + m(1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryCertificate {
    pub residual: f64,
    pub ok: bool,
}

/// Metric slope of `mu` compared against `tol`.
pub fn certify_stationary(
    pot: &Potential,
    mu: &ParticleMeasure,
    tol: f64,
) -> Result<StationaryCertificate> {
    let residual = minimal_selection(pot, mu, &SelectionOptions::default())?.slope();
    Ok(StationaryCertificate {
        residual,
        ok: residual <= tol,
    })
}

/// `pi - 2 a(R) + 2 sin a(R)` with `a(R) = arccos(1 - 1/(2R^2))`, the angle
/// subtended by a unit chord of the circle of radius `R`.
pub fn circle_f(r: f64) -> f64 {
    let r2 = r * r;
    let alpha = (1.0 - 1.0 / (2.0 * r2)).clamp(-1.0, 1.0).acos();
    let sin_alpha = (r2 - 0.25).max(0.0).sqrt() / r2;
    PI - 2.0 * alpha + 2.0 * sin_alpha
}

pub const CIRCLE_BRACKET: [f64; 2] = [0.5, FRAC_1_SQRT_2];

/// Radius of the stationary uniform circle measure: the root of
/// [`circle_f`] in `(1/2, sqrt(2)/2)`, by bisection.
pub fn circle_radius() -> f64 {
    let [mut lo, mut hi] = CIRCLE_BRACKET;
    assert!(
        circle_f(lo) < 0.0 && circle_f(hi) > 0.0,
        "circle bracket lost its sign change"
    );
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if circle_f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if circle_f(lo).abs() <= circle_f(hi).abs() {
        lo
    } else {
        hi
    }
}

/// `n` equal atoms equally spaced on the circle of radius `radius`, from angle 0.
pub fn circle_measure(n: usize, radius: f64) -> Result<ParticleMeasure> {
    if n == 0 {
        return Err(Error::OutOfRange("circle needs at least one atom".into()));
    }
    let positions = (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect();
    ParticleMeasure::uniform(positions)
}

#[derive(Debug, Clone, Serialize)]
pub struct CircleResidual {
    pub n_atoms: usize,
    pub radius: f64,
    /// Metric slope of the discretised circle under the radial double well.
    pub residual: f64,
    /// Largest tangential velocity component.
    pub max_tangential: f64,
}

pub fn circle_residual(n_atoms: usize) -> Result<CircleResidual> {
    if n_atoms < 8 {
        return Err(Error::OutOfRange(format!(
            "need at least 8 atoms, got {n_atoms}"
        )));
    }
    let radius = circle_radius();
    let mu = circle_measure(n_atoms, radius)?;
    let pot = Potential::double_well_lip_radial();
    let sel = minimal_selection(&pot, &mu, &SelectionOptions::default())?;
    let max_tangential = mu
        .positions()
        .iter()
        .zip(&sel.velocities)
        .map(|(x, v)| (x[0] * v[1] - x[1] * v[0]).abs() / norm(x))
        .fold(0.0, f64::max);
    Ok(CircleResidual {
        n_atoms,
        radius,
        residual: sel.slope(),
        max_tangential,
    })
}

/// `|eta|^2 + <eta, (1, theta)>`: the selection objective at the pyramid
/// configuration, up to an affine change, as a function of `eta(x2 - x1)`.
pub fn pyramid_reduced_objective(theta: f64, eta: [f64; 2]) -> f64 {
    eta[0] * eta[0] + eta[1] * eta[1] + eta[0] + theta * eta[1]
}

/// Equal-mass configuration `x1 = 0`, `x2 = (1, 1)`, `x3 = (1/2 - eps, 3/2)`.
pub fn pyramid_configuration(epsilon: f64) -> ParticleMeasure {
    ParticleMeasure::uniform(vec![
        vec![0.0, 0.0],
        vec![1.0, 1.0],
        vec![0.5 - epsilon, 1.5],
    ])
    .expect("three distinct atoms")
}

#[derive(Debug, Clone, Serialize)]
pub struct PyramidReport {
    pub theta: f64,
    pub epsilon: f64,
    /// Optimal `eta(x2 - x1)`.
    pub optimal_eta: Vec<f64>,
    /// Minimal-norm element of the subdifferential at `x2 - x1`.
    pub min_norm_subgradient: Vec<f64>,
    /// `||v||_{L2(mu)}` of the minimal selection.
    pub optimal_velocity_norm: f64,
    /// Same norm with the pointwise minimal subgradient at every pair.
    pub pointwise_velocity_norm: f64,
    pub reduced_at_optimum: f64,
    pub reduced_at_min_norm: f64,
    /// The selection objective at the two points.
    pub objective_at_optimum: f64,
    pub objective_at_min_norm: f64,
    pub strictly_better: bool,
}

pub fn pyramid_counterexample(theta: f64, epsilon: f64) -> Result<PyramidReport> {
    if !(theta > 2.0) || !theta.is_finite() {
        return Err(Error::OutOfRange(format!(
            "theta must exceed 2, got {theta}"
        )));
    }
    if !(epsilon > 0.0 && epsilon <= 0.05) {
        return Err(Error::OutOfRange(format!(
            "epsilon must lie in (0, 0.05], got {epsilon}"
        )));
    }
    let pot = Potential::pyramid_2d(theta)?;
    let mu = pyramid_configuration(epsilon);
    let opts = SelectionOptions::default();
    let sel = minimal_selection(&pot, &mu, &opts)?;
    // pair (0, 1) stores eta(x1 - x2) = -eta(x2 - x1)
    let optimal_eta = sel.selection.value(1, 0);

    let mut pointwise = build_selection_problem(&pot, &mu, DEFAULT_KINK_TOL)?;
    let min_norm: Vec<f64> = pointwise.free_variables()[0]
        .value
        .iter()
        .map(|x| -x)
        .collect();
    let pointwise_velocity_norm =
        l2_norm_sq(mu.masses(), &pointwise.velocities(mu.masses())).sqrt();

    let objective_at_min_norm = pointwise.objective(mu.masses());
    let opt_value: Vec<f64> = optimal_eta.iter().map(|x| -x).collect();
    pointwise.set_free_value(0, opt_value)?;
    let objective_at_optimum = pointwise.objective(mu.masses());

    let reduced_at_optimum = pyramid_reduced_objective(theta, [1.0, 0.0]);
    let reduced_at_min_norm = pyramid_reduced_objective(theta, [0.5, 0.5]);
    Ok(PyramidReport {
        theta,
        epsilon,
        optimal_velocity_norm: sel.slope(),
        pointwise_velocity_norm,
        optimal_eta,
        min_norm_subgradient: min_norm,
        reduced_at_optimum,
        reduced_at_min_norm,
        objective_at_optimum,
        objective_at_min_norm,
        strictly_better: objective_at_optimum < objective_at_min_norm
            && reduced_at_optimum < reduced_at_min_norm,
    })
}

/// Optimal kink value `eta(1)` for equal masses at `{1, 0, third}` under the
/// Lipschitz double well.
pub fn line_counterexample(third: f64) -> Result<f64> {
    let mu = ParticleMeasure::uniform(vec![vec![1.0], vec![0.0], vec![third]])?;
    let sel = minimal_selection(
        &Potential::double_well_lip(),
        &mu,
        &SelectionOptions::default(),
    )?;
    if sel.selection.free_variables().is_empty() {
        return Err(Error::OutOfRange(format!(
            "atoms {{1, 0, {third}}} leave no kink to select"
        )));
    }
    Ok(sel.selection.value(0, 1)[0])
}
