//! Minimal-norm element of the Wasserstein subdifferential for atomic
//! measures.
//!
//! The velocity of particle `j` is `v_j = sum_i m_i eta(x_i - x_j)` for an
//! antisymmetric selection `eta` of the subdifferential of `W`. Among all
//! such selections the flow uses the one minimising
//! `F(eta) = sum_j m_j |v_j|^2`. Only differences sitting on a kink carry a
//! free variable; `F` is a convex quadratic in those variables and is solved
//! by projected gradient with a constant step.

use serde::Serialize;

use crate::convex_sets::ConvexSet;
use crate::energy::interaction_energy;
use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;
use crate::potentials::{Potential, DEFAULT_KINK_TOL};
use crate::transport::Coupling;
use crate::vecmath::{axpy, dist, dot, norm, norm_sq, sub};

/// Membership tolerance for selection values.
const MEMBERSHIP_TOL: f64 = 1e-9;
/// Distance under which a point counts as lying on a face of its set.
const FACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SelectionOptions {
    pub kink_tol: f64,
    pub qp_tol: f64,
    pub max_iter: usize,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            kink_tol: DEFAULT_KINK_TOL,
            qp_tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Ordered pair `(i, j)`, `i < j`, whose value `eta(x_i - x_j)` is tied to
/// a free variable as `sign * variable`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Member {
    pub i: usize,
    pub j: usize,
    pub sign: f64,
}

/// One free variable: the selected value at a kink difference, shared by
/// every pair with that difference (up to sign).
#[derive(Debug, Clone, Serialize)]
pub struct FreeVariable {
    /// Representative difference `x_i - x_j` of the first member.
    pub difference: Vec<f64>,
    /// Subdifferential at `difference`.
    pub set: ConvexSet,
    pub value: Vec<f64>,
    pub members: Vec<Member>,
}

/// Antisymmetric assignment of subgradients to the pairs of a measure.
///
/// Only pairs `i < j` are stored; `eta(x_j - x_i)` is read as the negation.
#[derive(Debug, Clone, Serialize)]
pub struct PairSelection {
    n: usize,
    dim: usize,
    /// Flat `eta(x_i - x_j)` for `i < j`, row-major upper triangle.
    values: Vec<f64>,
    free: Vec<FreeVariable>,
}

fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

impl PairSelection {
    pub fn n_atoms(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `eta(x_i - x_j)` for any ordered pair; zero on the diagonal.
    pub fn value(&self, i: usize, j: usize) -> Vec<f64> {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => vec![0.0; self.dim],
            std::cmp::Ordering::Less => self.raw(i, j).to_vec(),
            std::cmp::Ordering::Greater => self.raw(j, i).iter().map(|x| -x).collect(),
        }
    }

    fn raw(&self, i: usize, j: usize) -> &[f64] {
        let k = pair_index(self.n, i, j) * self.dim;
        &self.values[k..k + self.dim]
    }

    fn raw_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let k = pair_index(self.n, i, j) * self.dim;
        &mut self.values[k..k + self.dim]
    }

    pub fn free_variables(&self) -> &[FreeVariable] {
        &self.free
    }

    /// Pairs `(i, j)`, `i < j`, whose constraint set is not a singleton.
    pub fn free_pairs(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .free
            .iter()
            .flat_map(|v| v.members.iter().map(|m| (m.i, m.j)))
            .collect();
        out.sort_unstable();
        out
    }

    /// Constraint set of pair `(i, j)`, `i < j`.
    pub fn constraint_set(&self, i: usize, j: usize) -> ConvexSet {
        for var in &self.free {
            if let Some(m) = var.members.iter().find(|m| m.i == i && m.j == j) {
                return if m.sign > 0.0 {
                    var.set.clone()
                } else {
                    var.set.negated()
                };
            }
        }
        ConvexSet::singleton(self.raw(i, j).to_vec())
    }

    /// Sets free variable `k`, rejecting values outside its set.
    pub fn set_free_value(&mut self, k: usize, value: Vec<f64>) -> Result<()> {
        let var = self
            .free
            .get(k)
            .ok_or_else(|| Error::OutOfRange(format!("no free variable {k}")))?;
        if !var.set.contains(&value, MEMBERSHIP_TOL)? {
            return Err(Error::OutOfRange(format!(
                "value {value:?} is outside the constraint set of variable {k}"
            )));
        }
        self.free[k].value = value;
        self.sync_members(k);
        Ok(())
    }

    fn sync_members(&mut self, k: usize) {
        let members = self.free[k].members.clone();
        let value = self.free[k].value.clone();
        for m in members {
            let slot = self.raw_mut(m.i, m.j);
            for (s, v) in slot.iter_mut().zip(&value) {
                *s = m.sign * v;
            }
        }
    }

    /// `v_j = sum_i m_i eta(x_i - x_j)`.
    pub fn velocities(&self, masses: &[f64]) -> Vec<Vec<f64>> {
        let mut v = vec![vec![0.0; self.dim]; self.n];
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let eta = self.raw(i, j);
                axpy(&mut v[j], masses[i], eta);
                axpy(&mut v[i], -masses[j], eta);
            }
        }
        v
    }

    /// `F(eta) = sum_j m_j |v_j|^2`.
    pub fn objective(&self, masses: &[f64]) -> f64 {
        l2_norm_sq(masses, &self.velocities(masses))
    }
}

/// `sum_j m_j |v_j|^2`.
pub fn l2_norm_sq(masses: &[f64], v: &[Vec<f64>]) -> f64 {
    masses.iter().zip(v).map(|(m, vj)| m * norm_sq(vj)).sum()
}

fn require_selectable(pot: &Potential, mu: &ParticleMeasure) -> Result<()> {
    if let crate::potentials::PotentialForm::General(k) = pot.form() {
        return Err(Error::UnsupportedPotential(format!(
            "selections need a difference or radial kernel, got general kernel '{}'",
            k.name
        )));
    }
    if mu.dim() != pot.dimension() {
        return Err(Error::DimensionMismatch {
            expected: pot.dimension(),
            got: mu.dim(),
        });
    }
    Ok(())
}

/// Fills every pair's constraint set. Smooth pairs are fixed to the gradient,
/// coincident atoms to zero; kink pairs become free variables initialised at
/// the minimal-norm element. Pairs whose differences agree up to sign within
/// `kink_tol` share one variable.
pub fn build_selection_problem(
    pot: &Potential,
    mu: &ParticleMeasure,
    kink_tol: f64,
) -> Result<PairSelection> {
    require_selectable(pot, mu)?;
    let n = mu.len();
    let d = mu.dim();
    let mut values = vec![0.0; n * (n - 1) / 2 * d];
    let mut free: Vec<FreeVariable> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let z = sub(mu.position(i), mu.position(j));
            let k = pair_index(n, i, j) * d;
            if norm(&z) <= kink_tol {
                continue;
            }
            if let Some(g) = pot.smooth_gradient(&z, kink_tol)? {
                values[k..k + d].copy_from_slice(&g);
                continue;
            }
            let set = pot.subdiff(&z, kink_tol)?;
            if set.is_singleton() {
                values[k..k + d].copy_from_slice(&set.min_norm());
                continue;
            }
            let neg: Vec<f64> = z.iter().map(|x| -x).collect();
            let existing = free.iter_mut().find_map(|var| {
                if dist(&var.difference, &z) <= kink_tol {
                    Some((var, 1.0))
                } else if dist(&var.difference, &neg) <= kink_tol {
                    Some((var, -1.0))
                } else {
                    None
                }
            });
            let member_value = match existing {
                Some((var, sign)) => {
                    var.members.push(Member { i, j, sign });
                    var.value.iter().map(|x| sign * x).collect::<Vec<f64>>()
                }
                None => {
                    let value = set.min_norm();
                    free.push(FreeVariable {
                        difference: z,
                        set,
                        value: value.clone(),
                        members: vec![Member { i, j, sign: 1.0 }],
                    });
                    value
                }
            };
            values[k..k + d].copy_from_slice(&member_value);
        }
    }
    Ok(PairSelection {
        n,
        dim: d,
        values,
        free,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimalSelection {
    pub selection: PairSelection,
    pub velocities: Vec<Vec<f64>>,
    /// `F` at the returned selection.
    pub objective: f64,
    pub iterations: usize,
    /// Projected-gradient residual at exit.
    pub residual: f64,
}

impl MinimalSelection {
    /// `|dW|(mu) = (sum_j m_j |v_j|^2)^(1/2)`.
    pub fn slope(&self) -> f64 {
        self.objective.max(0.0).sqrt()
    }
}

/// Solves for the antisymmetric selection of minimal `F`.
pub fn minimal_selection(
    pot: &Potential,
    mu: &ParticleMeasure,
    opts: &SelectionOptions,
) -> Result<MinimalSelection> {
    let problem = build_selection_problem(pot, mu, opts.kink_tol)?;
    solve_selection(problem, mu.masses(), opts)
}

/// Runs the projected-gradient QP from the current free values of `problem`.
pub fn solve_selection(
    mut problem: PairSelection,
    masses: &[f64],
    opts: &SelectionOptions,
) -> Result<MinimalSelection> {
    let d = problem.dim;
    let nvar = problem.free.len();

    // Velocity with all free variables zeroed; free contributions are added on top.
    let mut base = problem.clone();
    for k in 0..nvar {
        base.free[k].value = vec![0.0; d];
        base.sync_members(k);
    }
    let base_v = base.velocities(masses);

    if nvar == 0 {
        let objective = l2_norm_sq(masses, &base_v);
        return Ok(MinimalSelection {
            selection: problem,
            velocities: base_v,
            objective,
            iterations: 0,
            residual: 0.0,
        });
    }

    // Hessian bound by Cauchy-Schwarz (sum_{i != j} m_i <= 1).
    let lipschitz = problem
        .free
        .iter()
        .map(|var| {
            4.0 * var
                .members
                .iter()
                .map(|m| masses[m.i] * masses[m.j])
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;

    // Velocity contribution of the free variables alone (linear in `vals`).
    let contribution = |vals: &[Vec<f64>]| {
        let mut v = vec![vec![0.0; d]; masses.len()];
        for (var, y) in problem.free.iter().zip(vals) {
            for m in &var.members {
                axpy(&mut v[m.j], m.sign * masses[m.i], y);
                axpy(&mut v[m.i], -m.sign * masses[m.j], y);
            }
        }
        v
    };
    let velocities_of = |vals: &[Vec<f64>]| {
        let mut v = contribution(vals);
        for (vj, bj) in v.iter_mut().zip(&base_v) {
            axpy(vj, 1.0, bj);
        }
        v
    };
    let gradient_of = |v: &[Vec<f64>]| -> Vec<Vec<f64>> {
        problem
            .free
            .iter()
            .map(|var| {
                let mut g = vec![0.0; d];
                for m in &var.members {
                    let w = 2.0 * m.sign * masses[m.i] * masses[m.j];
                    axpy(&mut g, w, &v[m.j]);
                    axpy(&mut g, -w, &v[m.i]);
                }
                g
            })
            .collect()
    };

    let mut y: Vec<Vec<f64>> = problem.free.iter().map(|v| v.value.clone()).collect();
    let mut iterations = 0;
    let mut residual;
    loop {
        let v = velocities_of(&y);
        let g = gradient_of(&v);
        let mut next = Vec::with_capacity(nvar);
        let mut moved = 0.0;
        for ((var, yk), gk) in problem.free.iter().zip(&y).zip(&g) {
            let mut trial = yk.clone();
            axpy(&mut trial, -step, gk);
            let p = var.set.project(&trial)?;
            moved += crate::vecmath::dist_sq(&p, yk);
            next.push(p);
        }
        residual = moved.sqrt() / step;
        if residual < opts.qp_tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::QpNotConverged {
                iterations,
                residual,
            });
        }
        y = next;
        iterations += 1;
    }

    // The constant-step iterate is only accurate to about qp_tol. Solve the
    // quadratic exactly on the faces it identified and keep that if feasible.
    let (anchors, bases): (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) = problem
        .free
        .iter()
        .zip(&y)
        .map(|(var, yk)| face_of(&var.set, yk, FACE_TOL))
        .unzip();
    let embed = |t: &[f64]| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(nvar);
        let mut c = 0;
        for basis in &bases {
            let mut dk = vec![0.0; d];
            for b in basis {
                axpy(&mut dk, t[c], b);
                c += 1;
            }
            out.push(dk);
        }
        out
    };
    let reduce = |g: &[Vec<f64>]| -> Vec<f64> {
        bases
            .iter()
            .zip(g)
            .flat_map(|(basis, gk)| basis.iter().map(move |b| dot(b, gk)))
            .collect()
    };
    let p_dim: usize = bases.iter().map(Vec::len).sum();
    {
        let hess = |s: &[f64]| reduce(&gradient_of(&contribution(&embed(s))));
        let mut t = vec![0.0; p_dim];
        let mut r: Vec<f64> = reduce(&gradient_of(&velocities_of(&anchors)))
            .into_iter()
            .map(|x| -x)
            .collect();
        let mut dir = r.clone();
        let mut rr = dot(&r, &r);
        for _ in 0..(2 * p_dim + 2) {
            if rr == 0.0 {
                break;
            }
            let hd = hess(&dir);
            let curv = dot(&dir, &hd);
            if !(curv > 0.0) {
                break;
            }
            let alpha = rr / curv;
            axpy(&mut t, alpha, &dir);
            axpy(&mut r, -alpha, &hd);
            let rr_next = dot(&r, &r);
            let beta = rr_next / rr;
            rr = rr_next;
            for (di, ri) in dir.iter_mut().zip(&r) {
                *di = ri + beta * *di;
            }
        }
        let shift = embed(&t);
        let polished: Vec<Vec<f64>> = anchors
            .iter()
            .zip(&shift)
            .map(|(yk, sk)| yk.iter().zip(sk).map(|(a, b)| a + b).collect())
            .collect();
        let mut feasible = true;
        for (var, pk) in problem.free.iter().zip(&polished) {
            feasible &= var.set.contains(pk, 1e-12)?;
        }
        if feasible
            && l2_norm_sq(masses, &velocities_of(&polished))
                <= l2_norm_sq(masses, &velocities_of(&y))
        {
            y = polished;
        }
    }

    for (k, yk) in y.into_iter().enumerate() {
        problem.free[k].value = yk;
        problem.sync_members(k);
    }
    let velocities = problem.velocities(masses);
    let objective = l2_norm_sq(masses, &velocities);
    Ok(MinimalSelection {
        selection: problem,
        velocities,
        objective,
        iterations,
        residual,
    })
}

/// Smallest face of `set` within `tol` of `y`: a point of that face near
/// `y`, and orthonormal directions spanning it.
fn face_of(set: &ConvexSet, y: &[f64], tol: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    match set {
        ConvexSet::Singleton { point } => (point.clone(), vec![]),
        ConvexSet::Segment { a, b } => {
            if dist(y, a) <= tol {
                (a.clone(), vec![])
            } else if dist(y, b) <= tol {
                (b.clone(), vec![])
            } else {
                let e = sub(b, a);
                let len = norm(&e);
                (y.to_vec(), vec![e.iter().map(|x| x / len).collect()])
            }
        }
        ConvexSet::Polygon2D { vertices } => {
            if let Some(v) = vertices.iter().find(|v| dist(y, &v[..]) <= tol) {
                return (v.to_vec(), vec![]);
            }
            let n = vertices.len();
            for k in 0..n {
                let p = vertices[k];
                let q = vertices[(k + 1) % n];
                let e = [q[0] - p[0], q[1] - p[1]];
                let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
                let u = [e[0] / len, e[1] / len];
                let cross = u[0] * (y[1] - p[1]) - u[1] * (y[0] - p[0]);
                if cross.abs() <= tol {
                    let along = u[0] * (y[0] - p[0]) + u[1] * (y[1] - p[1]);
                    let foot = vec![p[0] + along * u[0], p[1] + along * u[1]];
                    return (foot, vec![u.to_vec()]);
                }
            }
            (y.to_vec(), vec![vec![1.0, 0.0], vec![0.0, 1.0]])
        }
    }
}

/// Velocity `v_j = sum_i m_i d°W(x_i - x_j)` for convex radial kernels,
/// where the pointwise minimal subgradient is already optimal.
pub fn radial_minimal_velocity(
    pot: &Potential,
    mu: &ParticleMeasure,
    kink_tol: f64,
) -> Result<Vec<Vec<f64>>> {
    require_selectable(pot, mu)?;
    if pot.radial_profile().is_none() {
        return Err(Error::UnsupportedPotential(
            "pointwise minimal selection is only optimal for radial kernels".into(),
        ));
    }
    if !pot.is_convex() {
        return Err(Error::UnsupportedPotential(format!(
            "pointwise minimal selection needs a convex kernel (lambda = {})",
            pot.lambda()
        )));
    }
    let n = mu.len();
    let mut v = vec![vec![0.0; mu.dim()]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let z = sub(mu.position(i), mu.position(j));
            let eta = pot.min_norm_subgrad(&z, kink_tol)?;
            axpy(&mut v[j], mu.mass(i), &eta);
            axpy(&mut v[i], -mu.mass(j), &eta);
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubdiffCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Evaluates both sides of the Wasserstein subdifferential inequality
/// `W(nu) - W(mu) >= sum gamma <xi(x), y - x> + lambda/2 C^2(mu, nu; gamma)`
/// for `xi_j = sum_i m_i eta(x_j - x_i)` built from `sel`.
pub fn check_strong_subdiff(
    pot: &Potential,
    mu: &ParticleMeasure,
    sel: &PairSelection,
    nu: &ParticleMeasure,
    gamma: &Coupling,
) -> Result<SubdiffCheck> {
    if gamma.source() != mu || gamma.target() != nu {
        return Err(Error::InvalidCoupling(
            "coupling marginals do not match the given measures".into(),
        ));
    }
    if sel.n_atoms() != mu.len() {
        return Err(Error::OutOfRange(format!(
            "selection is for {} atoms, measure has {}",
            sel.n_atoms(),
            mu.len()
        )));
    }
    let xi: Vec<Vec<f64>> = sel
        .velocities(mu.masses())
        .into_iter()
        .map(|v| v.into_iter().map(|x| -x).collect())
        .collect();
    let lhs = interaction_energy(pot, nu)? - interaction_energy(pot, mu)?;
    let linear: f64 = gamma
        .entries()
        .iter()
        .map(|e| {
            e.weight
                * dot(
                    &xi[e.source],
                    &sub(nu.position(e.target), mu.position(e.source)),
                )
        })
        .sum();
    let rhs = linear + 0.5 * pot.lambda() * gamma.cost_sq();
    Ok(SubdiffCheck {
        lhs,
        rhs,
        ok: lhs >= rhs - 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> ParticleMeasure {
        ParticleMeasure::uniform(xs.iter().map(|x| vec![*x]).collect()).unwrap()
    }

    fn pyramid_config(eps: f64) -> ParticleMeasure {
        let x1 = vec![0.0, 0.0];
        let x2 = vec![1.0, 1.0];
        let x3 = vec![0.5 - eps, 1.5];
        ParticleMeasure::uniform(vec![x1, x2, x3]).unwrap()
    }

    #[test]
    fn build_examples() {
        let w = Potential::double_well_lip();
        let p = build_selection_problem(&w, &line(&[1.0, 0.0, 0.75]), 1e-9).unwrap();
        assert_eq!(p.free_pairs(), vec![(0, 1)]);
        assert_eq!(
            p.constraint_set(0, 1),
            ConvexSet::segment(vec![-1.0], vec![1.0]).unwrap()
        );
        // fixed values: eta(x1 - x3) = eta(1/4) = -1/4, eta(x2 - x3) = eta(-3/4) = 3/4
        assert_eq!(p.value(0, 2), vec![-0.25]);
        assert_eq!(p.value(1, 2), vec![0.75]);

        let smooth = Potential::double_well_smooth();
        let p = build_selection_problem(&smooth, &line(&[1.0, 0.0, 0.75, -2.0]), 1e-9).unwrap();
        assert!(p.free_pairs().is_empty());

        let pyr = Potential::pyramid_2d(3.0).unwrap();
        let p = build_selection_problem(&pyr, &pyramid_config(0.01), 1e-9).unwrap();
        assert_eq!(p.free_pairs(), vec![(0, 1)]);
        // set of eta(x2 - x1) is K
        let k = p.constraint_set(0, 1).negated();
        for v in [[1.0, 0.0], [3.0, 0.0], [0.0, 3.0], [0.0, 1.0]] {
            assert!(k.contains(&v, 1e-12).unwrap());
        }
        assert_eq!(k.min_norm(), vec![0.5, 0.5]);

        let general = Potential::general(
            "c",
            1,
            0.0,
            Some(1.0),
            std::sync::Arc::new(|_: &[f64], _: &[f64]| 1.0),
        );
        assert!(matches!(
            build_selection_problem(&general, &line(&[0.0, 1.0]), 1e-9),
            Err(Error::UnsupportedPotential(_))
        ));
    }

    #[test]
    fn counterexamples_in_one_dimension() {
        let w = Potential::double_well_lip();
        let opts = SelectionOptions::default();
        let s = minimal_selection(&w, &line(&[1.0, 0.0, 0.75]), &opts).unwrap();
        // eta(1) = eta(x1 - x2)
        assert!((s.selection.value(0, 1)[0] - 0.5).abs() < 1e-8);
        let s = minimal_selection(&w, &line(&[1.0, 0.0, -0.25]), &opts).unwrap();
        assert!((s.selection.value(0, 1)[0] + 0.75).abs() < 1e-8);
        assert!((s.selection.value(1, 0)[0] - 0.75).abs() < 1e-8);
    }

    #[test]
    fn pyramid_selection_leaves_min_norm() {
        let pyr = Potential::pyramid_2d(3.0).unwrap();
        let s =
            minimal_selection(&pyr, &pyramid_config(0.01), &SelectionOptions::default()).unwrap();
        let eta21 = s.selection.value(1, 0);
        assert!(
            (eta21[0] - 1.0).abs() < 1e-6 && eta21[1].abs() < 1e-6,
            "{eta21:?}"
        );
    }

    #[test]
    fn shared_differences_share_a_variable() {
        // Equally spaced at the kink distance: (0,1) and (1,2) have the same difference.
        let w = Potential::double_well_lip();
        let p = build_selection_problem(&w, &line(&[0.0, 1.0, 2.0]), 1e-9).unwrap();
        assert_eq!(p.free_variables().len(), 1);
        assert_eq!(p.free_variables()[0].members.len(), 2);
        let s = solve_selection(p, &[1.0 / 3.0; 3], &SelectionOptions::default()).unwrap();
        assert_eq!(s.selection.value(0, 1), s.selection.value(1, 2));
    }

    #[test]
    fn coincident_atoms_carry_zero() {
        let w = Potential::power_law(1.0, 1).unwrap();
        let mu = line(&[0.5, 0.5, 2.0]);
        let p = build_selection_problem(&w, &mu, 1e-9).unwrap();
        assert!(p.free_pairs().is_empty());
        assert_eq!(p.value(0, 1), vec![0.0]);
    }

    #[test]
    fn smooth_case_has_no_free_variables() {
        let smooth = Potential::double_well_smooth();
        let mu = line(&[0.3, -0.4, 1.9]);
        let s = minimal_selection(&smooth, &mu, &SelectionOptions::default()).unwrap();
        assert_eq!(s.iterations, 0);
        for j in 0..3 {
            let expected: f64 = (0..3)
                .filter(|&i| i != j)
                .map(|i| {
                    let z = mu.position(i)[0] - mu.position(j)[0];
                    mu.mass(i) * 2.0 * z * (z * z - 1.0)
                })
                .sum();
            assert!((s.velocities[j][0] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn radial_velocity_examples() {
        let w = Potential::power_law(1.0, 1).unwrap();
        let v = radial_minimal_velocity(&w, &line(&[0.0, 2.0]), 1e-9).unwrap();
        assert_eq!(v, vec![vec![0.5], vec![-0.5]]);
        let s = minimal_selection(&w, &line(&[0.0, 2.0]), &SelectionOptions::default()).unwrap();
        assert_eq!(s.velocities, v);
        assert_eq!(
            radial_minimal_velocity(&w, &ParticleMeasure::dirac(vec![1.0]), 1e-9).unwrap(),
            vec![vec![0.0]]
        );
        let v = radial_minimal_velocity(&w, &line(&[1.0, 1.0]), 1e-9).unwrap();
        assert_eq!(v, vec![vec![0.0], vec![0.0]]);
        assert!(
            radial_minimal_velocity(&Potential::double_well_lip(), &line(&[0.0, 1.0]), 1e-9)
                .is_err()
        );
        assert!(radial_minimal_velocity(
            &Potential::pyramid_2d(3.0).unwrap(),
            &pyramid_config(0.01),
            1e-9
        )
        .is_err());
    }

    #[test]
    fn optimality_certificate_and_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Potential::double_well_lip();
        for _ in 0..30 {
            // plant kink pairs
            let mut xs = vec![rng.gen_range(-1.0..1.0)];
            for _ in 0..rng.gen_range(2..6) {
                let base = xs[rng.gen_range(0..xs.len())];
                if rng.gen_bool(0.5) {
                    xs.push(base + if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
                } else {
                    xs.push(rng.gen_range(-2.0..2.0));
                }
            }
            let raw: Vec<f64> = xs.iter().map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mu = ParticleMeasure::normalized(
                xs.iter().map(|x| vec![*x]).collect(),
                raw.iter().map(|m| m / total).collect(),
                1e-9,
            )
            .unwrap();
            let s = minimal_selection(&w, &mu, &SelectionOptions::default()).unwrap();
            let f0 = s.objective;
            let mut momentum = [0.0];
            for (m, v) in mu.masses().iter().zip(&s.velocities) {
                momentum[0] += m * v[0];
            }
            assert!(momentum[0].abs() <= 1e-14);
            for k in 0..s.selection.free_variables().len() {
                let set = s.selection.free_variables()[k].set.clone();
                let ext = set.extreme_points();
                for _ in 0..50 {
                    let t: f64 = rng.gen();
                    let q: Vec<f64> = ext[0]
                        .iter()
                        .zip(&ext[ext.len() - 1])
                        .map(|(a, b)| (1.0 - t) * a + t * b)
                        .collect();
                    let mut pert = s.selection.clone();
                    pert.set_free_value(k, q).unwrap();
                    assert!(pert.objective(mu.masses()) >= f0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn rejects_values_outside_constraint_set() {
        let w = Potential::double_well_lip();
        let mut p = build_selection_problem(&w, &line(&[1.0, 0.0, 0.75]), 1e-9).unwrap();
        assert!(p.set_free_value(0, vec![1.5]).is_err());
        assert!(p.set_free_value(3, vec![0.0]).is_err());
        p.set_free_value(0, vec![-1.0]).unwrap();
        assert_eq!(p.value(1, 0), vec![1.0]);
    }

    #[test]
    fn qp_budget_exhaustion_is_reported() {
        let w = Potential::double_well_lip();
        let opts = SelectionOptions {
            max_iter: 0,
            ..Default::default()
        };
        let err = minimal_selection(&w, &line(&[1.0, 0.0, 0.75]), &opts).unwrap_err();
        assert!(err.is_solver_failure());
    }

    #[test]
    fn subdiff_check_examples() {
        let w = Potential::double_well_lip();
        let mu = line(&[0.0, 1.0]);
        let s = minimal_selection(&w, &mu, &SelectionOptions::default()).unwrap();
        assert_eq!(s.selection.value(0, 1), vec![0.0]);
        let id = Coupling::identity(&mu);
        let c = check_strong_subdiff(&w, &mu, &s.selection, &mu, &id).unwrap();
        assert_eq!((c.lhs, c.rhs, c.ok), (0.0, 0.0, true));

        let nu = line(&[0.0, 1.1]);
        let (_, gamma) = crate::transport::wasserstein_1d(&mu, &nu).unwrap();
        let c = check_strong_subdiff(&w, &mu, &s.selection, &nu, &gamma).unwrap();
        // W(nu) - W(mu) = 1/4 * 0.105; xi = 0; lambda/2 * C^2 = -1/2 * 0.005
        assert!((c.lhs - 0.25 * 0.105).abs() < 1e-15);
        assert!((c.rhs + 0.0025).abs() < 1e-15);
        assert!(c.ok);

        assert!(check_strong_subdiff(&w, &mu, &s.selection, &mu, &gamma).is_err());
    }

    fn planted_line(rng: &mut ChaCha8Rng, n: usize, gaps: &[f64]) -> ParticleMeasure {
        let mut xs = vec![rng.gen_range(-1.0..1.0)];
        while xs.len() < n {
            let base = xs[rng.gen_range(0..xs.len())];
            let g = gaps[rng.gen_range(0..gaps.len())];
            xs.push(if rng.gen_bool(0.5) {
                base + g
            } else {
                base - g
            });
        }
        let raw: Vec<f64> = xs.iter().map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        ParticleMeasure::normalized(
            xs.into_iter().map(|x| vec![x]).collect(),
            raw.into_iter().map(|m| m / total).collect(),
            1e-9,
        )
        .unwrap()
    }

    #[test]
    fn velocities_do_not_depend_on_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = Potential::double_well_lip();
        for _ in 0..20 {
            let mu = planted_line(&mut rng, 6, &[1.0, 0.4]);
            let reference = minimal_selection(&w, &mu, &SelectionOptions::default()).unwrap();
            for _ in 0..5 {
                let mut p = build_selection_problem(&w, &mu, 1e-9).unwrap();
                for k in 0..p.free_variables().len() {
                    let ext = p.free_variables()[k].set.extreme_points();
                    let t: f64 = rng.gen();
                    let q = ext[0]
                        .iter()
                        .zip(&ext[ext.len() - 1])
                        .map(|(a, b)| (1.0 - t) * a + t * b)
                        .collect();
                    p.set_free_value(k, q).unwrap();
                }
                let s = solve_selection(p, mu.masses(), &SelectionOptions::default()).unwrap();
                for (a, b) in s.velocities.iter().zip(&reference.velocities) {
                    assert!((a[0] - b[0]).abs() <= 1e-7);
                }
            }
        }
    }

    #[test]
    fn convex_selection_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Potential::piecewise_linear(vec![1.0, 2.0], vec![0.5, 1.0, 2.0], 1).unwrap();
        for _ in 0..20 {
            let mu = planted_line(&mut rng, 7, &[1.0, 2.0, 0.3]);
            let s = minimal_selection(&w, &mu, &SelectionOptions::default()).unwrap();
            let n = mu.len();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let a = s.selection.value(i, k)[0] - s.selection.value(j, k)[0];
                        let b = mu.position(i)[0] - mu.position(j)[0];
                        if i != k && j != k {
                            assert!(a * b >= -1e-10);
                        }
                    }
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn minimal_selection_beats_random_admissible_ones(seed in 0u64..10_000, n in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pot = Potential::double_well_lip();
            let mu = planted_line(&mut rng, n, &[1.0, 2.0]);
            let best = minimal_selection(&pot, &mu, &SelectionOptions::default()).unwrap();
            let momentum: f64 = best.velocities.iter().zip(mu.masses()).map(|(v, m)| m * v[0]).sum();
            proptest::prop_assert!(momentum.abs() < 1e-12);

            let mut other = build_selection_problem(&pot, &mu, DEFAULT_KINK_TOL).unwrap();
            for k in 0..other.free_variables().len() {
                let ext = other.free_variables()[k].set.extreme_points();
                let t: f64 = rng.gen();
                let q: Vec<f64> = ext[0].iter().zip(&ext[ext.len() - 1]).map(|(a, b)| (1.0 - t) * a + t * b).collect();
                other.set_free_value(k, q).unwrap();
            }
            proptest::prop_assert!(best.objective <= other.objective(mu.masses()) + 1e-12);
        }
    }
}
