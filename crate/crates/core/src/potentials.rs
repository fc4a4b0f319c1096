//! Interaction kernels, their subdifferentials and Moreau–Yosida envelopes.
//!
//! A [`Potential`] houses the kernel in one of three forms: a general
//! symmetric bivariate function, a function of the difference `x - y`, or a
//! radial profile `w(|x - y|)`. Only the last two carry subdifferentials; the
//! general form is evaluation-only.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convex_sets::ConvexSet;
use crate::error::{Error, Result};
use crate::vecmath::{norm, norm_inf, scale, sub};

/// Default absolute tolerance on the distance to a kink.
pub const DEFAULT_KINK_TOL: f64 = 1e-9;

/// Tolerance on the proximal minimiser for numerically evaluated envelopes.
const PROX_TOL: f64 = 1e-10;

pub type KernelFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Symmetric bivariate kernel known only through evaluation.
#[derive(Clone)]
pub struct GeneralKernel {
    pub name: String,
    f: Arc<KernelFn>,
}

impl GeneralKernel {
    pub fn new(name: impl Into<String>, f: Arc<KernelFn>) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl fmt::Debug for GeneralKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralKernel")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

/// Non-radial kernels of the difference `z = x - y`.
#[derive(Debug, Clone, PartialEq)]
pub enum DifferenceKernel {
    /// `W(z) = f(|z|_inf)` with `f(r) = r` on `[0, 1]` and `1 + theta (r - 1)` beyond.
    Pyramid { theta: f64 },
}

/// Profiles `w` of radial kernels `W(z) = w(|z|)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RadialProfile {
    /// `w(r) = r^alpha`, `alpha >= 1`.
    Power { alpha: f64 },
    /// `w(r) = (r^2 - 1)^2 / 2`.
    DoubleWellSmooth,
    /// `w(r) = |r^2 - 1| / 2`.
    DoubleWellLip,
    /// Convex piecewise-linear `w` with `w(0) = 0`, slope `slopes[k]` on
    /// `[breaks[k-1], breaks[k]]` (with `breaks[-1] = 0`).
    PiecewiseLinear { breaks: Vec<f64>, slopes: Vec<f64> },
}

impl RadialProfile {
    pub fn value(&self, r: f64) -> f64 {
        match self {
            RadialProfile::Power { alpha } => r.powf(*alpha),
            RadialProfile::DoubleWellSmooth => 0.5 * (r * r - 1.0).powi(2),
            RadialProfile::DoubleWellLip => 0.5 * (r * r - 1.0).abs(),
            RadialProfile::PiecewiseLinear { breaks, slopes } => {
                let mut acc = 0.0;
                let mut left = 0.0;
                for (k, &s) in slopes.iter().enumerate() {
                    let right = breaks.get(k).copied().unwrap_or(f64::INFINITY);
                    if r <= right {
                        return acc + s * (r - left);
                    }
                    acc += s * (right - left);
                    left = right;
                }
                acc
            }
        }
    }

    /// Kink radii in `(0, inf)`.
    pub fn kink_radii(&self) -> Vec<f64> {
        match self {
            RadialProfile::Power { .. } | RadialProfile::DoubleWellSmooth => vec![],
            RadialProfile::DoubleWellLip => vec![1.0],
            RadialProfile::PiecewiseLinear { breaks, .. } => breaks.clone(),
        }
    }

    /// Right derivative at the origin. A positive value means the radial
    /// kernel has a conical kink at `z = 0`.
    pub fn slope_at_origin(&self) -> f64 {
        match self {
            RadialProfile::Power { alpha } if *alpha == 1.0 => 1.0,
            RadialProfile::Power { .. } => 0.0,
            RadialProfile::DoubleWellSmooth | RadialProfile::DoubleWellLip => 0.0,
            RadialProfile::PiecewiseLinear { slopes, .. } => slopes[0],
        }
    }

    /// One-sided derivatives `(w'(r-), w'(r+))` for `r > 0`.
    pub fn one_sided_derivatives(&self, r: f64) -> (f64, f64) {
        match self {
            RadialProfile::Power { alpha } => {
                let d = alpha * r.powf(alpha - 1.0);
                (d, d)
            }
            RadialProfile::DoubleWellSmooth => {
                let d = 2.0 * r * (r * r - 1.0);
                (d, d)
            }
            RadialProfile::DoubleWellLip => {
                if r < 1.0 {
                    (-r, -r)
                } else if r > 1.0 {
                    (r, r)
                } else {
                    (-1.0, 1.0)
                }
            }
            RadialProfile::PiecewiseLinear { breaks, slopes } => {
                let mut k = 0;
                while k < breaks.len() && r > breaks[k] {
                    k += 1;
                }
                if k < breaks.len() && r == breaks[k] {
                    (slopes[k], slopes[k + 1])
                } else {
                    (slopes[k], slopes[k])
                }
            }
        }
    }

    fn second_derivative(&self, r: f64) -> Option<f64> {
        match self {
            RadialProfile::Power { alpha } => {
                if *alpha == 1.0 {
                    Some(0.0)
                } else if r > 0.0 {
                    Some(alpha * (alpha - 1.0) * r.powf(alpha - 2.0))
                } else {
                    None
                }
            }
            RadialProfile::DoubleWellSmooth => Some(6.0 * r * r - 2.0),
            RadialProfile::DoubleWellLip => {
                if r == 1.0 {
                    None
                } else if r < 1.0 {
                    Some(-1.0)
                } else {
                    Some(1.0)
                }
            }
            RadialProfile::PiecewiseLinear { breaks, .. } => {
                if breaks.contains(&r) {
                    None
                } else {
                    Some(0.0)
                }
            }
        }
    }

    /// `inf_{r > 0}` of the minimal-norm derivative for convex nondecreasing
    /// profiles; `None` for the double wells.
    pub fn min_slope(&self) -> Option<f64> {
        match self {
            RadialProfile::Power { alpha } if *alpha == 1.0 => Some(1.0),
            RadialProfile::Power { .. } => Some(0.0),
            RadialProfile::PiecewiseLinear { slopes, .. } => Some(slopes[0]),
            RadialProfile::DoubleWellSmooth | RadialProfile::DoubleWellLip => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum PotentialForm {
    General(GeneralKernel),
    Difference(DifferenceKernel),
    Radial(RadialProfile),
}

/// Where a potential fails to be differentiable.
#[derive(Debug, Clone, PartialEq)]
pub enum KinkLocus {
    None,
    /// Spheres `|z| = r` for the listed radii, plus the origin when flagged.
    Radii {
        radii: Vec<f64>,
        origin: bool,
    },
    /// Described analytically (e.g. the pyramid's edges and unit square).
    Analytic(&'static str),
    Unknown,
}

#[derive(Debug, Clone)]
pub struct Potential {
    form: PotentialForm,
    lambda: f64,
    growth_constant: Option<f64>,
    dimension: usize,
}

impl Potential {
    pub fn power_law(alpha: f64, dimension: usize) -> Result<Self> {
        if !(alpha >= 1.0) || dimension == 0 {
            return Err(Error::OutOfRange(format!(
                "power law needs alpha >= 1 and d >= 1 (alpha={alpha}, d={dimension})"
            )));
        }
        // r^alpha <= 1 + r^2 for alpha in [1, 2], and |x-y|^2 <= 2|x|^2 + 2|y|^2.
        let growth = (alpha <= 2.0).then_some(2.0);
        Ok(Self {
            form: PotentialForm::Radial(RadialProfile::Power { alpha }),
            lambda: 0.0,
            growth_constant: growth,
            dimension,
        })
    }

    pub fn double_well_smooth() -> Self {
        Self {
            form: PotentialForm::Radial(RadialProfile::DoubleWellSmooth),
            lambda: -2.0,
            growth_constant: None,
            dimension: 1,
        }
    }

    pub fn double_well_lip() -> Self {
        Self {
            form: PotentialForm::Radial(RadialProfile::DoubleWellLip),
            lambda: -1.0,
            growth_constant: Some(1.0),
            dimension: 1,
        }
    }

    pub fn double_well_lip_radial() -> Self {
        Self {
            dimension: 2,
            ..Self::double_well_lip()
        }
    }

    pub fn pyramid_2d(theta: f64) -> Result<Self> {
        if !(theta >= 1.0) {
            return Err(Error::OutOfRange(format!(
                "pyramid slope theta must be >= 1 for convexity, got {theta}"
            )));
        }
        Ok(Self {
            form: PotentialForm::Difference(DifferenceKernel::Pyramid { theta }),
            lambda: 0.0,
            growth_constant: Some(theta),
            dimension: 2,
        })
    }

    /// Convex piecewise-linear radial kernel; `slopes.len() == breaks.len() + 1`,
    /// breaks strictly increasing and positive, slopes nondecreasing and nonnegative.
    pub fn piecewise_linear(breaks: Vec<f64>, slopes: Vec<f64>, dimension: usize) -> Result<Self> {
        if slopes.len() != breaks.len() + 1 {
            return Err(Error::OutOfRange(
                "piecewise-linear profile needs one more slope than breakpoints".into(),
            ));
        }
        if breaks.iter().any(|b| !(*b > 0.0)) || breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::OutOfRange(
                "breakpoints must be positive and strictly increasing".into(),
            ));
        }
        if slopes[0] < 0.0 || slopes.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::OutOfRange(
                "slopes must be nonnegative and nondecreasing".into(),
            ));
        }
        let growth = *slopes.last().unwrap();
        Ok(Self {
            form: PotentialForm::Radial(RadialProfile::PiecewiseLinear { breaks, slopes }),
            lambda: 0.0,
            growth_constant: Some(growth.max(0.0)),
            dimension,
        })
    }

    pub fn general(
        name: impl Into<String>,
        dimension: usize,
        lambda: f64,
        growth_constant: Option<f64>,
        f: Arc<KernelFn>,
    ) -> Self {
        Self {
            form: PotentialForm::General(GeneralKernel::new(name, f)),
            lambda,
            growth_constant,
            dimension,
        }
    }

    /// Replaces the convexity modulus, e.g. to use a weaker but valid bound.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn form(&self) -> &PotentialForm {
        &self.form
    }

    /// Convexity modulus of `W` as a function of the difference (or of the
    /// bivariate kernel for the general form).
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Convexity modulus of the bivariate kernel `(x, y) -> W(x - y)`.
    pub fn kernel_lambda(&self) -> f64 {
        match self.form {
            PotentialForm::General(_) => self.lambda,
            _ => (2.0 * self.lambda).min(0.0),
        }
    }

    pub fn growth_constant(&self) -> Option<f64> {
        self.growth_constant
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn radial_profile(&self) -> Option<&RadialProfile> {
        match &self.form {
            PotentialForm::Radial(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_convex(&self) -> bool {
        self.lambda >= 0.0
    }

    pub fn kinks(&self) -> KinkLocus {
        match &self.form {
            PotentialForm::General(_) => KinkLocus::Unknown,
            PotentialForm::Difference(DifferenceKernel::Pyramid { .. }) => KinkLocus::Analytic(
                "diagonals |z1| = |z2|, the unit square |z|_inf = 1, and the origin",
            ),
            PotentialForm::Radial(p) => {
                let radii = p.kink_radii();
                let origin = p.slope_at_origin() > 0.0;
                if radii.is_empty() && !origin {
                    KinkLocus::None
                } else {
                    KinkLocus::Radii { radii, origin }
                }
            }
        }
    }

    /// Constant `K` with `W(z) >= -K (1 + |z|^2)`, from `W(z) >= W(0) + lambda |z|^2 / 2`.
    pub fn lower_bound_constant(&self) -> f64 {
        let origin = vec![0.0; self.dimension];
        let w0 = self.eval(&origin, &origin).unwrap_or(0.0);
        0.0f64.max(-w0).max(-self.lambda / 2.0)
    }

    fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: p.len(),
            });
        }
        Ok(())
    }

    /// Kernel value `W(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(match &self.form {
            PotentialForm::General(k) => (k.f)(x, y),
            _ => self.eval_difference_unchecked(&sub(x, y)),
        })
    }

    /// `W(z)` for the difference and radial forms.
    pub fn eval_difference(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        match &self.form {
            PotentialForm::General(k) => Err(Error::UnsupportedPotential(format!(
                "general kernel '{}' has no difference form",
                k.name
            ))),
            _ => Ok(self.eval_difference_unchecked(z)),
        }
    }

    pub(crate) fn eval_difference_unchecked(&self, z: &[f64]) -> f64 {
        match &self.form {
            PotentialForm::General(k) => {
                let origin = vec![0.0; z.len()];
                (k.f)(z, &origin)
            }
            PotentialForm::Difference(DifferenceKernel::Pyramid { theta }) => {
                pyramid_profile(*theta, norm_inf(z))
            }
            PotentialForm::Radial(p) => p.value(norm(z)),
        }
    }

    fn require_difference(&self) -> Result<()> {
        if let PotentialForm::General(k) = &self.form {
            return Err(Error::UnsupportedPotential(format!(
                "general kernel '{}' has no analytic subdifferential",
                k.name
            )));
        }
        Ok(())
    }

    /// Subdifferential `dW(z)`. Points within `kink_tol` of a kink get the
    /// full set.
    pub fn subdiff(&self, z: &[f64], kink_tol: f64) -> Result<ConvexSet> {
        self.require_difference()?;
        self.check_dim(z)?;
        Ok(match &self.form {
            PotentialForm::General(_) => unreachable!(),
            PotentialForm::Difference(DifferenceKernel::Pyramid { theta }) => {
                pyramid_subdiff(*theta, z, kink_tol)?
            }
            PotentialForm::Radial(p) => radial_subdiff(p, z, kink_tol)?,
        })
    }

    /// Gradient at `z`, or `None` when `z` is within `kink_tol` of a kink.
    /// Avoids building a set on the hot path.
    pub fn smooth_gradient(&self, z: &[f64], kink_tol: f64) -> Result<Option<Vec<f64>>> {
        self.require_difference()?;
        self.check_dim(z)?;
        match &self.form {
            PotentialForm::Radial(p) => {
                let r = norm(z);
                if r <= kink_tol {
                    // Differentiable at 0 only without a conical tip.
                    return Ok(if p.slope_at_origin() == 0.0 {
                        Some(vec![0.0; z.len()])
                    } else {
                        None
                    });
                }
                if p.kink_radii().iter().any(|k| (r - k).abs() <= kink_tol) {
                    return Ok(None);
                }
                let (d, _) = p.one_sided_derivatives(r);
                Ok(Some(scale(z, d / r)))
            }
            _ => {
                let set = self.subdiff(z, kink_tol)?;
                Ok(match set {
                    ConvexSet::Singleton { point } => Some(point),
                    _ => None,
                })
            }
        }
    }

    /// Minimal-norm element of `dW(z)`; zero at the origin.
    pub fn min_norm_subgrad(&self, z: &[f64], kink_tol: f64) -> Result<Vec<f64>> {
        self.require_difference()?;
        self.check_dim(z)?;
        if norm(z) <= kink_tol {
            return Ok(vec![0.0; z.len()]);
        }
        if let Some(g) = self.smooth_gradient(z, kink_tol)? {
            return Ok(g);
        }
        Ok(self.subdiff(z, kink_tol)?.min_norm())
    }

    /// Smallest `n` accepted by [`Potential::moreau_envelope`].
    pub fn moreau_threshold(&self) -> f64 {
        4.0 * (-self.lambda).max(0.0)
    }

    /// Moreau–Yosida envelope `W_n(z) = inf_v W(v) + n |z - v|^2 / 2`.
    pub fn moreau_envelope(&self, z: &[f64], n: f64) -> Result<f64> {
        self.require_difference()?;
        self.check_dim(z)?;
        if !(n > self.moreau_threshold()) {
            return Err(Error::OutOfRange(format!(
                "Moreau parameter n={n} must exceed {}",
                self.moreau_threshold()
            )));
        }
        Ok(match &self.form {
            PotentialForm::General(_) => unreachable!(),
            PotentialForm::Radial(RadialProfile::Power { alpha }) if *alpha == 1.0 => {
                let r = norm(z);
                if r <= 1.0 / n {
                    0.5 * n * r * r
                } else {
                    r - 0.5 / n
                }
            }
            PotentialForm::Radial(RadialProfile::Power { alpha }) if *alpha == 2.0 => {
                let r = norm(z);
                n * r * r / (n + 2.0)
            }
            PotentialForm::Radial(p) => {
                // The minimiser lies on the ray through z, so only its length varies.
                let r = norm(z);
                let g = |t: f64| p.value(t) + 0.5 * n * (r - t) * (r - t);
                let hi = expand_bracket(&g, r.max(1.0));
                let t = golden_section(&g, 0.0, hi);
                let t = newton_polish(&g, t, |t| {
                    let (d, _) = p.one_sided_derivatives(t.max(f64::MIN_POSITIVE));
                    let dd = p.second_derivative(t)?;
                    Some((d - n * (r - t), dd + n))
                });
                // v = z and kinks are exact candidates, so W_n <= W holds bitwise.
                std::iter::once(t)
                    .chain(std::iter::once(r))
                    .chain(p.kink_radii())
                    .map(g)
                    .fold(f64::INFINITY, f64::min)
            }
            PotentialForm::Difference(DifferenceKernel::Pyramid { theta }) => {
                // For fixed t = |v|_inf the closest v clamps each coordinate to [-t, t].
                let theta = *theta;
                let g = |t: f64| {
                    let excess: f64 = z.iter().map(|zi| (zi.abs() - t).max(0.0).powi(2)).sum();
                    pyramid_profile(theta, t) + 0.5 * n * excess
                };
                let r = norm_inf(z);
                let t = golden_section(&g, 0.0, r);
                [t, r, 1.0f64.min(r)]
                    .into_iter()
                    .map(g)
                    .fold(f64::INFINITY, f64::min)
            }
        })
    }
}

fn pyramid_profile(theta: f64, r: f64) -> f64 {
    if r <= 1.0 {
        r
    } else {
        1.0 + theta * (r - 1.0)
    }
}

fn pyramid_subdiff(theta: f64, z: &[f64], kink_tol: f64) -> Result<ConvexSet> {
    let r = norm_inf(z);
    if r <= kink_tol {
        // Unit ball of the dual (l1) norm, scaled by f'(0+) = 1.
        return ConvexSet::polygon(vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]);
    }
    let slopes: Vec<f64> = if (r - 1.0).abs() <= kink_tol {
        vec![1.0, theta]
    } else if r < 1.0 {
        vec![1.0]
    } else {
        vec![theta]
    };
    let mut points = Vec::with_capacity(4);
    for (i, zi) in z.iter().enumerate() {
        if zi.abs() >= r - kink_tol {
            let mut e = [0.0; 2];
            e[i] = zi.signum();
            for s in &slopes {
                points.push([s * e[0], s * e[1]]);
            }
        }
    }
    ConvexSet::hull_2d(&points)
}

fn radial_subdiff(p: &RadialProfile, z: &[f64], kink_tol: f64) -> Result<ConvexSet> {
    let r = norm(z);
    let d = z.len();
    if r <= kink_tol {
        let a = p.slope_at_origin();
        if a > 0.0 && d == 1 {
            return ConvexSet::segment(vec![-a], vec![a]);
        }
        return Ok(ConvexSet::singleton(vec![0.0; d]));
    }
    let u = scale(z, 1.0 / r);
    if let Some(k) = p
        .kink_radii()
        .into_iter()
        .find(|k| (r - k).abs() <= kink_tol)
    {
        let (lo, hi) = p.one_sided_derivatives(k);
        return ConvexSet::segment(scale(&u, lo), scale(&u, hi));
    }
    let (g, _) = p.one_sided_derivatives(r);
    Ok(ConvexSet::singleton(scale(&u, g)))
}

fn expand_bracket(g: &dyn Fn(f64) -> f64, start: f64) -> f64 {
    let mut hi = start;
    while g(2.0 * hi) < g(hi) && hi < 1e12 {
        hi *= 2.0;
    }
    2.0 * hi
}

fn golden_section(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let tol = PROX_TOL * 1e-2 * b.abs().max(1.0);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while b - a > tol {
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    let mid = 0.5 * (a + b);
    [a, mid, b]
        .into_iter()
        .min_by(|x, y| g(*x).total_cmp(&g(*y)))
        .unwrap()
}

/// A few Newton steps on `g' = 0`, kept only while they lower `g`.
fn newton_polish(
    g: &dyn Fn(f64) -> f64,
    mut t: f64,
    deriv: impl Fn(f64) -> Option<(f64, f64)>,
) -> f64 {
    for _ in 0..5 {
        let Some((d1, d2)) = deriv(t) else { break };
        if d2 <= 0.0 {
            break;
        }
        let next = (t - d1 / d2).max(0.0);
        if (next - t).abs() > 10.0 * PROX_TOL || g(next) > g(t) {
            break;
        }
        t = next;
    }
    t
}

/// Serializable description of a potential, as used in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    PowerLaw {
        alpha: f64,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        lambda: Option<f64>,
    },
    DoubleWellSmooth {
        #[serde(default)]
        lambda: Option<f64>,
    },
    DoubleWellLip {
        #[serde(default)]
        lambda: Option<f64>,
    },
    DoubleWellLipRadial {
        #[serde(default)]
        lambda: Option<f64>,
    },
    #[serde(rename = "pyramid2d")]
    Pyramid2D {
        theta: f64,
        #[serde(default)]
        lambda: Option<f64>,
    },
    PiecewiseLinear {
        breaks: Vec<f64>,
        slopes: Vec<f64>,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        lambda: Option<f64>,
    },
}

fn default_dim() -> usize {
    1
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Potential> {
        let (pot, lambda) = match self {
            PotentialSpec::PowerLaw { alpha, dim, lambda } => {
                (Potential::power_law(*alpha, *dim)?, lambda)
            }
            PotentialSpec::DoubleWellSmooth { lambda } => (Potential::double_well_smooth(), lambda),
            PotentialSpec::DoubleWellLip { lambda } => (Potential::double_well_lip(), lambda),
            PotentialSpec::DoubleWellLipRadial { lambda } => {
                (Potential::double_well_lip_radial(), lambda)
            }
            PotentialSpec::Pyramid2D { theta, lambda } => (Potential::pyramid_2d(*theta)?, lambda),
            PotentialSpec::PiecewiseLinear {
                breaks,
                slopes,
                dim,
                lambda,
            } => (
                Potential::piecewise_linear(breaks.clone(), slopes.clone(), *dim)?,
                lambda,
            ),
        };
        Ok(match lambda {
            Some(l) => pot.with_lambda(*l),
            None => pot,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn builtins() -> Vec<Potential> {
        vec![
            Potential::power_law(1.0, 2).unwrap(),
            Potential::power_law(1.5, 1).unwrap(),
            Potential::power_law(2.0, 3).unwrap(),
            Potential::double_well_smooth(),
            Potential::double_well_lip(),
            Potential::double_well_lip_radial(),
            Potential::pyramid_2d(3.0).unwrap(),
            Potential::piecewise_linear(vec![1.0, 2.0], vec![0.5, 1.0, 2.0], 2).unwrap(),
        ]
    }

    fn random_point(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-r..r)).collect()
    }

    #[test]
    fn eval_examples() {
        let w = Potential::double_well_lip();
        assert_eq!(w.eval(&[1.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(w.eval(&[0.3], &[0.3]).unwrap(), 0.5);
        let p = Potential::pyramid_2d(3.0).unwrap();
        assert_eq!(p.eval(&[2.5, 0.5], &[0.5, 0.5]).unwrap(), 4.0);
        assert!(matches!(
            w.eval(&[1.0, 0.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pyramid_gradient_matches_field() {
        // (1,0) inside the unit square, (theta,0) outside, on the x-dominant cone.
        let p = Potential::pyramid_2d(3.0).unwrap();
        assert_eq!(
            p.min_norm_subgrad(&[0.5, 0.2], 1e-9).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            p.min_norm_subgrad(&[2.0, -1.0], 1e-9).unwrap(),
            vec![3.0, 0.0]
        );
        assert_eq!(
            p.min_norm_subgrad(&[0.1, -0.7], 1e-9).unwrap(),
            vec![0.0, -1.0]
        );
    }

    #[test]
    fn subdiff_examples() {
        let w = Potential::double_well_lip();
        assert_eq!(
            w.subdiff(&[1.0], DEFAULT_KINK_TOL).unwrap(),
            ConvexSet::segment(vec![-1.0], vec![1.0]).unwrap()
        );
        assert_eq!(
            w.subdiff(&[0.5], DEFAULT_KINK_TOL).unwrap(),
            ConvexSet::singleton(vec![-0.5])
        );
        // Within tolerance of the kink, the whole segment.
        assert!(!w
            .subdiff(&[1.0 + 1e-12], DEFAULT_KINK_TOL)
            .unwrap()
            .is_singleton());

        let p = Potential::pyramid_2d(3.0).unwrap();
        let k = p.subdiff(&[1.0, 1.0], DEFAULT_KINK_TOL).unwrap();
        let expected =
            ConvexSet::polygon(vec![[1.0, 0.0], [3.0, 0.0], [0.0, 3.0], [0.0, 1.0]]).unwrap();
        for v in expected.extreme_points() {
            assert!(k.contains(&v, 1e-12).unwrap());
        }
        for v in k.extreme_points() {
            assert!(expected.contains(&v, 1e-12).unwrap());
        }
    }

    #[test]
    fn pyramid_edge_and_origin_sets() {
        let p = Potential::pyramid_2d(3.0).unwrap();
        // Diagonal away from the unit square: segment between the two face gradients.
        let ends = |s: ConvexSet| {
            let mut e = s.extreme_points();
            e.sort_by(|a, b| a.partial_cmp(b).unwrap());
            e
        };
        let s = p.subdiff(&[2.0, 2.0], 1e-9).unwrap();
        assert!(matches!(s, ConvexSet::Segment { .. }));
        assert_eq!(ends(s), vec![vec![0.0, 3.0], vec![3.0, 0.0]]);
        // Unit square edge away from corners: radial slope jump.
        let s = p.subdiff(&[1.0, 0.3], 1e-9).unwrap();
        assert!(matches!(s, ConvexSet::Segment { .. }));
        assert_eq!(ends(s), vec![vec![1.0, 0.0], vec![3.0, 0.0]]);
        let s = p.subdiff(&[0.0, 0.0], 1e-9).unwrap();
        assert_eq!(s.min_norm(), vec![0.0, 0.0]);
        assert!(s.contains(&[0.5, -0.5], 1e-12).unwrap());
    }

    #[test]
    fn min_norm_examples() {
        let w = Potential::double_well_lip();
        assert_eq!(w.min_norm_subgrad(&[1.0], 1e-9).unwrap(), vec![0.0]);
        let q = Potential::power_law(2.0, 1).unwrap();
        assert!((q.min_norm_subgrad(&[3.0], 1e-9).unwrap()[0] - 6.0).abs() < 1e-12);
        let p = Potential::pyramid_2d(3.0).unwrap();
        let m = p.min_norm_subgrad(&[1.0, 1.0], 1e-9).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-15 && (m[1] - 0.5).abs() < 1e-15);
        assert_eq!(
            Potential::power_law(1.0, 3)
                .unwrap()
                .min_norm_subgrad(&[0.0; 3], 1e-9)
                .unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn general_form_is_evaluation_only() {
        let c = Potential::general("const", 2, 0.0, Some(1.0), Arc::new(|_, _| 3.0));
        assert_eq!(c.eval(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 3.0);
        assert!(matches!(
            c.subdiff(&[1.0, 0.0], 1e-9),
            Err(Error::UnsupportedPotential(_))
        ));
        assert!(c.min_norm_subgrad(&[1.0, 0.0], 1e-9).is_err());
    }

    #[test]
    fn symmetry_convexity_growth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for pot in builtins() {
            let d = pot.dimension();
            let kl = pot.kernel_lambda();
            let lam = pot.lambda();
            for _ in 0..300 {
                let x = random_point(&mut rng, d, 3.0);
                let y = random_point(&mut rng, d, 3.0);
                assert_eq!(pot.eval(&x, &y).unwrap(), pot.eval(&y, &x).unwrap());

                // bivariate midpoint test with the kernel modulus
                let (x2, y2) = (
                    random_point(&mut rng, d, 3.0),
                    random_point(&mut rng, d, 3.0),
                );
                let f = |a: &[f64], b: &[f64]| {
                    pot.eval(a, b).unwrap() - 0.5 * kl * (dot(a, a) + dot(b, b))
                };
                let mx: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| 0.5 * (a + b)).collect();
                let my: Vec<f64> = y.iter().zip(&y2).map(|(a, b)| 0.5 * (a + b)).collect();
                assert!(
                    f(&mx, &my) <= 0.5 * (f(&x, &y) + f(&x2, &y2)) + 1e-9,
                    "{pot:?}"
                );

                // same test on the difference with lambda of W
                let g = |z: &[f64]| pot.eval_difference(z).unwrap() - 0.5 * lam * dot(z, z);
                let mz: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                assert!(g(&mz) <= 0.5 * (g(&x) + g(&y)) + 1e-9, "{pot:?}");

                if let Some(c) = pot.growth_constant() {
                    assert!(pot.eval(&x, &y).unwrap() <= c * (1.0 + dot(&x, &x) + dot(&y, &y)));
                }
            }
        }
    }

    #[test]
    fn subgradient_inequality_and_min_norm_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for pot in builtins() {
            let d = pot.dimension();
            let lam = pot.lambda();
            let mut zs: Vec<Vec<f64>> = (0..10).map(|_| random_point(&mut rng, d, 2.5)).collect();
            // points on kinks
            let mut on_kink = vec![0.0; d];
            on_kink[0] = 1.0;
            zs.push(on_kink.clone());
            zs.push(on_kink.iter().map(|v| -v).collect());
            if d == 2 {
                zs.push(vec![1.0, 1.0]);
                zs.push(vec![-2.0, 2.0]);
                zs.push(vec![0.6, 0.8]);
            }
            for z in &zs {
                let set = pot.subdiff(z, DEFAULT_KINK_TOL).unwrap();
                let m = pot.min_norm_subgrad(z, DEFAULT_KINK_TOL).unwrap();
                assert!(set.contains(&m, 1e-9).unwrap());
                let ext = set.extreme_points();
                for _ in 0..100 {
                    let w: Vec<f64> = ext.iter().map(|_| rng.gen::<f64>() + 1e-6).collect();
                    let tot: f64 = w.iter().sum();
                    let mut q = vec![0.0; d];
                    for (e, wi) in ext.iter().zip(&w) {
                        crate::vecmath::axpy(&mut q, wi / tot, e);
                    }
                    assert!(norm(&m) <= norm(&q) + 1e-12);
                }
                let wz = pot.eval_difference(z).unwrap();
                for xi in &ext {
                    for _ in 0..1000 {
                        let zp = random_point(&mut rng, d, 4.0);
                        let dz = sub(&zp, z);
                        let lhs = pot.eval_difference(&zp).unwrap() - wz;
                        let rhs = dot(xi, &dz) + 0.5 * lam * dot(&dz, &dz);
                        assert!(lhs >= rhs - 1e-9, "{pot:?} z={z:?} xi={xi:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn radial_min_norm_is_odd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for pot in builtins()
            .into_iter()
            .filter(|p| p.radial_profile().is_some())
        {
            for _ in 0..200 {
                let z = random_point(&mut rng, pot.dimension(), 3.0);
                let a = pot.min_norm_subgrad(&z, 1e-9).unwrap();
                let neg: Vec<f64> = z.iter().map(|v| -v).collect();
                let b = pot.min_norm_subgrad(&neg, 1e-9).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    assert_eq!(*x, -*y);
                }
            }
        }
    }

    fn grid_envelope(pot: &Potential, z: f64, n: f64) -> f64 {
        // dense scan over v in [-3, 3], step 1e-5
        let steps = 600_000;
        (0..=steps)
            .map(|k| {
                let v = -3.0 + 6.0 * k as f64 / steps as f64;
                pot.eval_difference(&[v]).unwrap() + 0.5 * n * (z - v) * (z - v)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn moreau_examples() {
        let abs = Potential::power_law(1.0, 1).unwrap();
        assert!((abs.moreau_envelope(&[0.25], 2.0).unwrap() - 0.0625).abs() < 1e-15);
        assert!((grid_envelope(&abs, 0.25, 2.0) - 0.0625).abs() < 1e-9);

        let w = Potential::double_well_lip();
        let got = w.moreau_envelope(&[1.0], 8.0).unwrap();
        let oracle = grid_envelope(&w, 1.0, 8.0);
        assert!(got <= 0.0 + 1e-15);
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");

        assert!(matches!(
            w.moreau_envelope(&[1.0], 3.0),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn moreau_numeric_matches_grid() {
        let pots = [
            Potential::double_well_smooth(),
            Potential::double_well_lip(),
            Potential::power_law(1.5, 1).unwrap(),
            Potential::piecewise_linear(vec![1.0, 2.0], vec![0.5, 1.0, 2.0], 1).unwrap(),
        ];
        for pot in &pots {
            for &z in &[-2.2, -1.0, -0.3, 0.0, 0.4, 1.0, 1.7, 2.0] {
                for &n in &[10.0, 40.0] {
                    let got = pot.moreau_envelope(&[z], n).unwrap();
                    let oracle = grid_envelope(pot, z, n);
                    assert!(
                        (got - oracle).abs() < 1e-8,
                        "{pot:?} z={z} n={n}: {got} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn moreau_pyramid_against_grid() {
        let p = Potential::pyramid_2d(3.0).unwrap();
        let n = 5.0;
        for z in [[0.3, 0.1], [1.0, 1.0], [1.5, -0.2], [0.0, 0.0]] {
            let got = p.moreau_envelope(&z, n).unwrap();
            let mut best = f64::INFINITY;
            let steps = 800;
            for i in 0..=steps {
                for j in 0..=steps {
                    let v = [
                        z[0] - 1.0 + 2.0 * i as f64 / steps as f64,
                        z[1] - 1.0 + 2.0 * j as f64 / steps as f64,
                    ];
                    let val =
                        p.eval_difference(&v).unwrap() + 0.5 * n * crate::vecmath::dist_sq(&z, &v);
                    best = best.min(val);
                }
            }
            assert!(
                got <= best + 1e-12 && best - got < 2e-5,
                "{z:?}: {got} vs {best}"
            );
        }
    }

    #[test]
    fn spec_roundtrip_and_lambda_override() {
        let spec: PotentialSpec =
            serde_json::from_str(r#"{"kind": "pyramid2d", "theta": 3.0}"#).unwrap();
        assert_eq!(
            spec,
            PotentialSpec::Pyramid2D {
                theta: 3.0,
                lambda: None
            }
        );
        let pot = spec.build().unwrap();
        assert_eq!(pot.dimension(), 2);
        let spec: PotentialSpec =
            serde_json::from_str(r#"{"kind": "power_law", "alpha": 2.0, "dim": 2, "lambda": 2.0}"#)
                .unwrap();
        assert_eq!(spec.build().unwrap().lambda(), 2.0);
        assert!(serde_json::from_str::<PotentialSpec>(r#"{"kind": "nope"}"#).is_err());
    }

    #[test]
    fn lower_bound_constant_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for pot in builtins() {
            let k = pot.lower_bound_constant();
            for _ in 0..500 {
                let z = random_point(&mut rng, pot.dimension(), 10.0);
                assert!(pot.eval_difference(&z).unwrap() >= -k * (1.0 + dot(&z, &z)) - 1e-12);
            }
        }
    }
}
