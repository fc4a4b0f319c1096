//! Convex sets that arise as subdifferentials of the supported kernels.
//!
//! Three shapes cover everything: a point, a segment in any dimension, and a
//! convex polygon in the plane. Projection onto each is exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{axpy, dist, dot, norm_sq, sub};

/// Default tolerance for membership tests; matches the default kink tolerance.
pub const DEFAULT_CONTAINS_TOL: f64 = 1e-9;

const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexSet {
    Singleton {
        point: Vec<f64>,
    },
    Segment {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    /// Counter-clockwise convex polygon in the plane.
    Polygon2D {
        vertices: Vec<[f64; 2]>,
    },
}

impl ConvexSet {
    pub fn singleton(point: Vec<f64>) -> Self {
        ConvexSet::Singleton { point }
    }

    pub fn segment(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        Ok(ConvexSet::Segment { a, b })
    }

    /// Builds a polygon from counter-clockwise vertices, rejecting
    /// non-convex, clockwise or duplicated input.
    pub fn polygon(vertices: Vec<[f64; 2]>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidSet(format!(
                "polygon needs at least 3 vertices, got {n}"
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if dist(&vertices[i], &vertices[j]) <= DUPLICATE_TOL {
                    return Err(Error::InvalidSet(format!(
                        "duplicate polygon vertices {i} and {j}"
                    )));
                }
            }
        }
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if cross(sub2(b, a), sub2(c, b)) <= 0.0 {
                return Err(Error::InvalidSet(
                    "polygon vertices must be strictly convex and counter-clockwise".into(),
                ));
            }
        }
        Ok(ConvexSet::Polygon2D { vertices })
    }

    /// Convex hull of a finite planar point cloud, collapsed to the simplest
    /// variant that represents it.
    pub fn hull_2d(points: &[[f64; 2]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSet("hull of an empty point set".into()));
        }
        let mut pts: Vec<[f64; 2]> = points.to_vec();
        pts.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
        pts.dedup_by(|p, q| dist(p.as_slice(), q.as_slice()) <= DUPLICATE_TOL);
        if pts.len() == 1 {
            return Ok(ConvexSet::singleton(pts[0].to_vec()));
        }

        // Andrew's monotone chain, dropping collinear points.
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2
                && cross(
                    sub2(lower[lower.len() - 1], lower[lower.len() - 2]),
                    sub2(p, lower[lower.len() - 1]),
                ) <= 0.0
            {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2
                && cross(
                    sub2(upper[upper.len() - 1], upper[upper.len() - 2]),
                    sub2(p, upper[upper.len() - 1]),
                ) <= 0.0
            {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        match lower.len() {
            0 | 1 => Ok(ConvexSet::singleton(pts[0].to_vec())),
            2 => ConvexSet::segment(lower[0].to_vec(), lower[1].to_vec()),
            _ => ConvexSet::polygon(lower),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Singleton { point } => point.len(),
            ConvexSet::Segment { a, .. } => a.len(),
            ConvexSet::Polygon2D { .. } => 2,
        }
    }

    pub fn is_singleton(&self) -> bool {
        match self {
            ConvexSet::Singleton { .. } => true,
            ConvexSet::Segment { a, b } => dist(a, b) <= DUPLICATE_TOL,
            ConvexSet::Polygon2D { .. } => false,
        }
    }

    /// Extreme points; every element of the set is a convex combination of them.
    pub fn extreme_points(&self) -> Vec<Vec<f64>> {
        match self {
            ConvexSet::Singleton { point } => vec![point.clone()],
            ConvexSet::Segment { a, b } => vec![a.clone(), b.clone()],
            ConvexSet::Polygon2D { vertices } => vertices.iter().map(|v| v.to_vec()).collect(),
        }
    }

    /// Pointwise negation, i.e. the set `{-p : p in self}`.
    pub fn negated(&self) -> Self {
        match self {
            ConvexSet::Singleton { point } => ConvexSet::Singleton {
                point: point.iter().map(|x| -x).collect(),
            },
            ConvexSet::Segment { a, b } => ConvexSet::Segment {
                a: a.iter().map(|x| -x).collect(),
                b: b.iter().map(|x| -x).collect(),
            },
            // Point reflection keeps orientation in the plane.
            ConvexSet::Polygon2D { vertices } => ConvexSet::Polygon2D {
                vertices: vertices.iter().map(|v| [-v[0], -v[1]]).collect(),
            },
        }
    }

    fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> Result<bool> {
        let q = self.project(p)?;
        Ok(dist(&q, p) <= tol)
    }

    /// Euclidean projection of `p` onto the set.
    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(p)?;
        Ok(match self {
            ConvexSet::Singleton { point } => point.clone(),
            ConvexSet::Segment { a, b } => project_segment(a, b, p),
            ConvexSet::Polygon2D { vertices } => {
                let q = [p[0], p[1]];
                let n = vertices.len();
                let inside = (0..n).all(|i| {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    cross(sub2(b, a), sub2(q, a)) >= 0.0
                });
                if inside {
                    return Ok(p.to_vec());
                }
                let mut best = vertices[0].to_vec();
                let mut best_d = f64::INFINITY;
                for i in 0..n {
                    let c = project_segment(&vertices[i], &vertices[(i + 1) % n], p);
                    let d = dist(&c, p);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            }
        })
    }

    /// Minimum-norm element, i.e. the projection of the origin.
    pub fn min_norm(&self) -> Vec<f64> {
        let origin = vec![0.0; self.dim()];
        self.project(&origin)
            .expect("origin has matching dimension")
    }
}

fn project_segment(a: &[f64], b: &[f64], p: &[f64]) -> Vec<f64> {
    let ab = sub(b, a);
    let len_sq = norm_sq(&ab);
    if len_sq == 0.0 {
        return a.to_vec();
    }
    let t = (dot(&sub(p, a), &ab) / len_sq).clamp(0.0, 1.0);
    let mut out = a.to_vec();
    axpy(&mut out, t, &ab);
    out
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[1] - u[1] * v[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pyramid_k(theta: f64) -> ConvexSet {
        ConvexSet::polygon(vec![[1.0, 0.0], [theta, 0.0], [0.0, theta], [0.0, 1.0]]).unwrap()
    }

    fn seg(a: f64, b: f64) -> ConvexSet {
        ConvexSet::segment(vec![a], vec![b]).unwrap()
    }

    #[test]
    fn contains_examples() {
        assert!(seg(-1.0, 1.0).contains(&[0.5], 1e-12).unwrap());
        assert!(pyramid_k(3.0)
            .contains(&[1.0, 0.0], DEFAULT_CONTAINS_TOL)
            .unwrap());
        assert!(!seg(-1.0, 1.0).contains(&[1.5], 1e-12).unwrap());
        assert!(!pyramid_k(3.0).contains(&[0.2, 0.2], 1e-9).unwrap());
    }

    #[test]
    fn project_examples() {
        assert_eq!(seg(-1.0, 1.0).project(&[3.0]).unwrap(), vec![1.0]);
        let s = ConvexSet::singleton(vec![2.0, 5.0]);
        assert_eq!(s.project(&[0.0, 0.0]).unwrap(), vec![2.0, 5.0]);
        let q = pyramid_k(3.0).project(&[0.0, 0.0]).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn min_norm_examples() {
        assert_eq!(seg(-1.0, 1.0).min_norm(), vec![0.0]);
        let q = pyramid_k(3.0).min_norm();
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15);
        assert_eq!(
            ConvexSet::singleton(vec![3.0, -1.0]).min_norm(),
            vec![3.0, -1.0]
        );
    }

    #[test]
    fn degenerate_segment_behaves_like_point() {
        let s = seg(2.0, 2.0);
        assert!(s.is_singleton());
        assert_eq!(s.project(&[-7.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(
            seg(-1.0, 1.0).project(&[0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(pyramid_k(3.0).contains(&[0.0], 1e-9).is_err());
    }

    #[test]
    fn polygon_validation() {
        // clockwise
        assert!(ConvexSet::polygon(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).is_err());
        // non-convex
        assert!(ConvexSet::polygon(vec![
            [0.0, 0.0],
            [2.0, 0.0],
            [1.0, 0.2],
            [2.0, 2.0],
            [0.0, 2.0]
        ])
        .is_err());
        // duplicate
        assert!(ConvexSet::polygon(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn hull_collapses_degenerate_inputs() {
        let h = ConvexSet::hull_2d(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(h, ConvexSet::singleton(vec![1.0, 0.0]));
        let h = ConvexSet::hull_2d(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert!(matches!(h, ConvexSet::Segment { .. }));
        let h = ConvexSet::hull_2d(&[[1.0, 0.0], [3.0, 0.0], [0.0, 3.0], [0.0, 1.0]]).unwrap();
        assert_eq!(h.min_norm(), vec![0.5, 0.5]);
    }

    #[test]
    fn negation_keeps_polygon_valid() {
        let k = pyramid_k(3.0).negated();
        if let ConvexSet::Polygon2D { vertices } = &k {
            ConvexSet::polygon(vertices.clone()).unwrap();
        }
        let q = k.min_norm();
        assert!((q[0] + 0.5).abs() < 1e-15 && (q[1] + 0.5).abs() < 1e-15);
    }

    fn arb_set() -> impl Strategy<Value = ConvexSet> {
        prop_oneof![
            (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b)| ConvexSet::singleton(vec![a, b])),
            (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64)
                .prop_map(|(a, b, c, d)| ConvexSet::segment(vec![a, b], vec![c, d]).unwrap()),
            prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..9).prop_filter_map(
                "non-degenerate hull",
                |pts| {
                    let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
                    ConvexSet::hull_2d(&pts).ok()
                }
            ),
        ]
    }

    fn random_member(set: &ConvexSet, weights: &[f64]) -> Vec<f64> {
        let ext = set.extreme_points();
        let w: Vec<f64> = (0..ext.len())
            .map(|i| weights[i % weights.len()] + 1e-3)
            .collect();
        let total: f64 = w.iter().sum();
        let mut out = vec![0.0; set.dim()];
        for (e, wi) in ext.iter().zip(&w) {
            axpy(&mut out, wi / total, e);
        }
        out
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(set in arb_set(), x in -10.0..10.0f64, y in -10.0..10.0f64) {
            let p = set.project(&[x, y]).unwrap();
            let pp = set.project(&p).unwrap();
            prop_assert!(dist(&p, &pp) <= 1e-14);
        }

        #[test]
        fn projection_variational_inequality(
            set in arb_set(),
            x in -10.0..10.0f64,
            y in -10.0..10.0f64,
            ws in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 8), 100),
        ) {
            let p = [x, y];
            let proj = set.project(&p).unwrap();
            let r = sub(&p, &proj);
            for w in &ws {
                let q = random_member(&set, w);
                prop_assert!(dot(&r, &sub(&q, &proj)) <= 1e-10);
            }
        }

        #[test]
        fn min_norm_is_minimal(
            set in arb_set(),
            ws in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 8), 100),
        ) {
            let m = norm_sq(&set.min_norm()).sqrt();
            for w in &ws {
                let q = random_member(&set, w);
                prop_assert!(m <= norm_sq(&q).sqrt() + 1e-12);
            }
        }
    }
}
