//! Atomic probability measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{axpy, dist};

/// Tolerance on the total mass of a valid measure.
pub const MASS_TOL: f64 = 1e-12;

/// A finite sum of weighted Dirac masses in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct ParticleMeasure {
    positions: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMeasure {
    positions: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

impl TryFrom<RawMeasure> for ParticleMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        ParticleMeasure::new(raw.positions, raw.masses)
    }
}

/// Atoms fused by a merge, reported with their pre-merge indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeGroup {
    pub members: Vec<usize>,
    pub position: Vec<f64>,
    pub mass: f64,
}

impl ParticleMeasure {
    pub fn new(positions: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        validate_shape(&positions, &masses)?;
        if masses.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidMeasure(
                "masses must be positive and finite".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(Self { positions, masses })
    }

    /// Accepts masses whose total is within `tol` of one and rescales them.
    pub fn normalized(positions: Vec<Vec<f64>>, masses: Vec<f64>, tol: f64) -> Result<Self> {
        validate_shape(&positions, &masses)?;
        if masses.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidMeasure(
                "masses must be positive and finite".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidMeasure(format!(
                "masses sum to {total}, not within {tol} of 1"
            )));
        }
        let masses = masses.into_iter().map(|m| m / total).collect();
        Ok(Self { positions, masses })
    }

    /// Equal masses `1/N`.
    pub fn uniform(positions: Vec<Vec<f64>>) -> Result<Self> {
        let n = positions.len().max(1);
        Self::normalized(positions, vec![1.0 / n as f64; n], 1e-9)
    }

    pub fn dirac(p: Vec<f64>) -> Self {
        Self {
            positions: vec![p],
            masses: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    /// Same masses, new positions.
    pub fn with_positions(&self, positions: Vec<Vec<f64>>) -> Result<Self> {
        if positions.len() != self.len() {
            return Err(Error::InvalidMeasure(format!(
                "expected {} positions, got {}",
                self.len(),
                positions.len()
            )));
        }
        validate_shape(&positions, &self.masses)?;
        Ok(Self {
            positions,
            masses: self.masses.clone(),
        })
    }

    pub fn is_uniform(&self, tol: f64) -> bool {
        let target = 1.0 / self.len() as f64;
        self.masses.iter().all(|m| (m - target).abs() <= tol)
    }

    pub fn center_of_mass(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        for (x, m) in self.positions.iter().zip(&self.masses) {
            axpy(&mut c, *m, x);
        }
        c
    }

    /// Largest distance from an atom to the center of mass.
    pub fn radius(&self) -> f64 {
        let c = self.center_of_mass();
        self.positions
            .iter()
            .map(|x| dist(x, &c))
            .fold(0.0, f64::max)
    }

    /// Translated copy.
    pub fn shifted(&self, h: &[f64]) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|x| x.iter().zip(h).map(|(a, b)| a + b).collect())
                .collect(),
            masses: self.masses.clone(),
        }
    }

    /// Fuses atoms closer than `merge_tol`, transitively (single linkage),
    /// into their mass-weighted barycenter.
    pub fn merge_close(&self, merge_tol: f64) -> Self {
        self.merge_close_with_groups(merge_tol).0
    }

    pub fn merge_close_with_groups(&self, merge_tol: f64) -> (Self, Vec<MergeGroup>) {
        let n = self.len();
        let mut links = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if dist(&self.positions[i], &self.positions[j]) <= merge_tol {
                    links.push((i, j));
                }
            }
        }
        self.merge_linked(&links)
    }

    /// Fuses every connected component of the graph given by `links`.
    /// Components are emitted in order of their smallest member.
    pub fn merge_linked(&self, links: &[(usize, usize)]) -> (Self, Vec<MergeGroup>) {
        let n = self.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for &(a, b) in links {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                parent[hi] = lo;
            }
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = find(&mut parent, i);
            members[r].push(i);
        }
        let mut positions = Vec::new();
        let mut masses = Vec::new();
        let mut groups = Vec::new();
        for group in members.into_iter().filter(|g| !g.is_empty()) {
            if group.len() == 1 {
                positions.push(self.positions[group[0]].clone());
                masses.push(self.masses[group[0]]);
                continue;
            }
            let mass: f64 = group.iter().map(|&i| self.masses[i]).sum();
            let mut bary = vec![0.0; self.dim()];
            for &i in &group {
                axpy(&mut bary, self.masses[i] / mass, &self.positions[i]);
            }
            groups.push(MergeGroup {
                members: group,
                position: bary.clone(),
                mass,
            });
            positions.push(bary);
            masses.push(mass);
        }
        (Self { positions, masses }, groups)
    }

    /// Fuses atoms at bitwise-identical positions, keeping first-seen order.
    pub(crate) fn merge_identical(&self) -> Self {
        let n = self.len();
        let mut links = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.positions[i] == self.positions[j] {
                    links.push((i, j));
                }
            }
        }
        self.merge_linked(&links).0
    }
}

fn validate_shape(positions: &[Vec<f64>], masses: &[f64]) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::InvalidMeasure(
            "a measure needs at least one atom".into(),
        ));
    }
    if positions.len() != masses.len() {
        return Err(Error::InvalidMeasure(format!(
            "{} positions but {} masses",
            positions.len(),
            masses.len()
        )));
    }
    let d = positions[0].len();
    if d == 0 {
        return Err(Error::InvalidMeasure(
            "positions must have dimension >= 1".into(),
        ));
    }
    for p in positions {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("positions must be finite".into()));
        }
    }
    Ok(())
}
