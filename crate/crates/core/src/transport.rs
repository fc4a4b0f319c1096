//! Couplings between atomic measures and exact quadratic transport.
//!
//! Two exact solvers: the monotone (quantile) coupling in one dimension,
//! and optimal assignment for equal-size uniform measures in any dimension.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;
use crate::vecmath::dist_sq;

/// Tolerance on coupling marginals.
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingEntry {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// A transport plan between two atomic measures, stored sparsely.
#[derive(Debug, Clone, Serialize)]
pub struct Coupling {
    entries: Vec<CouplingEntry>,
    source: ParticleMeasure,
    target: ParticleMeasure,
}

impl Coupling {
    pub fn new(
        source: ParticleMeasure,
        target: ParticleMeasure,
        entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                got: target.dim(),
            });
        }
        let mut rows = vec![0.0; source.len()];
        let mut cols = vec![0.0; target.len()];
        for &(i, j, w) in &entries {
            if i >= source.len() || j >= target.len() {
                return Err(Error::InvalidCoupling(format!(
                    "entry ({i}, {j}) out of range"
                )));
            }
            if !(w > 0.0) {
                return Err(Error::InvalidCoupling(format!(
                    "entry ({i}, {j}) has non-positive weight {w}"
                )));
            }
            rows[i] += w;
            cols[j] += w;
        }
        for (i, r) in rows.iter().enumerate() {
            if (r - source.mass(i)).abs() > MARGINAL_TOL {
                return Err(Error::InvalidCoupling(format!(
                    "row {i} sums to {r}, source mass is {}",
                    source.mass(i)
                )));
            }
        }
        for (j, c) in cols.iter().enumerate() {
            if (c - target.mass(j)).abs() > MARGINAL_TOL {
                return Err(Error::InvalidCoupling(format!(
                    "column {j} sums to {c}, target mass is {}",
                    target.mass(j)
                )));
            }
        }
        let entries = entries
            .into_iter()
            .map(|(source, target, weight)| CouplingEntry {
                source,
                target,
                weight,
            })
            .collect();
        Ok(Self {
            entries,
            source,
            target,
        })
    }

    /// Each atom sent to itself.
    pub fn identity(mu: &ParticleMeasure) -> Self {
        let entries = (0..mu.len()).map(|i| (i, i, mu.mass(i))).collect();
        Self::new(mu.clone(), mu.clone(), entries).expect("identity coupling is admissible")
    }

    /// Independent coupling `mu x nu`.
    pub fn product(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<Self> {
        let mut entries = Vec::with_capacity(mu.len() * nu.len());
        for i in 0..mu.len() {
            for j in 0..nu.len() {
                entries.push((i, j, mu.mass(i) * nu.mass(j)));
            }
        }
        Self::new(mu.clone(), nu.clone(), entries)
    }

    pub fn entries(&self) -> &[CouplingEntry] {
        &self.entries
    }

    pub fn source(&self) -> &ParticleMeasure {
        &self.source
    }

    pub fn target(&self) -> &ParticleMeasure {
        &self.target
    }

    /// `(sum gamma_ij |x_i - y_j|^2)^(1/2)`.
    pub fn transport_cost(&self) -> f64 {
        self.cost_sq().sqrt()
    }

    pub fn cost_sq(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                e.weight
                    * dist_sq(
                        self.source.position(e.source),
                        self.target.position(e.target),
                    )
            })
            .sum()
    }

    /// Barycentric image of each source atom, `sum_j gamma_ij y_j / m_i`.
    pub fn barycentric_targets(&self) -> Vec<Vec<f64>> {
        let d = self.source.dim();
        let mut out = vec![vec![0.0; d]; self.source.len()];
        for e in &self.entries {
            let w = e.weight / self.source.mass(e.source);
            for (o, y) in out[e.source].iter_mut().zip(self.target.position(e.target)) {
                *o += w * y;
            }
        }
        out
    }

    /// Point on the interpolating curve `((1-t) pi^1 + t pi^2)_# gamma`;
    /// coincident atoms are fused.
    pub fn interpolate(&self, t: f64) -> Result<ParticleMeasure> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange(format!(
                "interpolation time {t} not in [0, 1]"
            )));
        }
        let mut positions = Vec::with_capacity(self.entries.len());
        let mut masses = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let x = self.source.position(e.source);
            let y = self.target.position(e.target);
            positions.push(
                x.iter()
                    .zip(y)
                    .map(|(a, b)| (1.0 - t) * a + t * b)
                    .collect(),
            );
            masses.push(e.weight);
        }
        let m = ParticleMeasure::normalized(positions, masses, 1e-9)?;
        Ok(m.merge_identical())
    }
}

/// Quadratic Wasserstein distance in one dimension via the monotone coupling.
/// Ties in position keep input order.
pub fn wasserstein_1d(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<(f64, Coupling)> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: if mu.dim() != 1 { mu.dim() } else { nu.dim() },
        });
    }
    let order = |m: &ParticleMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&a, &b| m.position(a)[0].total_cmp(&m.position(b)[0]));
        idx
    };
    let (si, sj) = (order(mu), order(nu));
    const EPS: f64 = 1e-15;
    let mut entries = Vec::with_capacity(mu.len() + nu.len());
    let (mut a, mut b) = (0, 0);
    let mut ra = mu.mass(si[0]);
    let mut rb = nu.mass(sj[0]);
    while a < si.len() && b < sj.len() {
        let w = ra.min(rb);
        if w > 0.0 {
            entries.push((si[a], sj[b], w));
        }
        ra -= w;
        rb -= w;
        if ra <= EPS {
            a += 1;
            if a < si.len() {
                ra = mu.mass(si[a]);
            }
        }
        if rb <= EPS {
            b += 1;
            if b < sj.len() {
                rb = nu.mass(sj[b]);
            }
        }
    }
    let gamma = Coupling::new(mu.clone(), nu.clone(), entries)?;
    Ok((gamma.transport_cost(), gamma))
}

/// Quadratic Wasserstein distance between two uniform measures with the same
/// number of atoms, by optimal assignment on squared distances.
pub fn wasserstein_assignment(
    mu: &ParticleMeasure,
    nu: &ParticleMeasure,
) -> Result<(f64, Coupling)> {
    if mu.len() != nu.len() {
        return Err(Error::OutOfRange(format!(
            "assignment needs equal atom counts ({} vs {})",
            mu.len(),
            nu.len()
        )));
    }
    if !mu.is_uniform(1e-12) || !nu.is_uniform(1e-12) {
        return Err(Error::OutOfRange("assignment needs uniform masses".into()));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    let n = mu.len();
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dist_sq(mu.position(i), nu.position(j)))
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost);
    let entries = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| (i, j, mu.mass(i)))
        .collect();
    let gamma = Coupling::new(mu.clone(), nu.clone(), entries)?;
    Ok((gamma.transport_cost(), gamma))
}

/// Exact transport distance when one of the two solvers applies.
pub fn wasserstein(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<(f64, Coupling)> {
    if mu.dim() == 1 && nu.dim() == 1 {
        wasserstein_1d(mu, nu)
    } else {
        wasserstein_assignment(mu, nu)
    }
}

/// Minimum-cost perfect matching on a square matrix (shortest augmenting
/// paths with potentials, O(n^3)). Returns `row -> column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}
