//! Interaction energy and metric slope of atomic measures.

use crate::error::Result;
use crate::measures::ParticleMeasure;
use crate::potentials::Potential;
use crate::selection::{minimal_selection, SelectionOptions};

/// `1/2 sum_i sum_j m_i m_j W(x_i, x_j)`, diagonal included.
pub fn interaction_energy(pot: &Potential, mu: &ParticleMeasure) -> Result<f64> {
    let n = mu.len();
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        let xi = mu.position(i);
        let mi = mu.mass(i);
        diag += mi * mi * pot.eval(xi, xi)?;
        for j in (i + 1)..n {
            off += mi * mu.mass(j) * pot.eval(xi, mu.position(j))?;
        }
    }
    Ok(0.5 * diag + off)
}

/// Same double sum with `W` replaced by its Moreau–Yosida envelope `W_n`.
pub fn moreau_energy(pot: &Potential, mu: &ParticleMeasure, n: f64) -> Result<f64> {
    let len = mu.len();
    let origin = vec![0.0; mu.dim()];
    let mut diag = 0.0;
    let mut off = 0.0;
    let w0 = pot.moreau_envelope(&origin, n)?;
    for i in 0..len {
        let mi = mu.mass(i);
        diag += mi * mi * w0;
        for j in (i + 1)..len {
            let z = crate::vecmath::sub(mu.position(i), mu.position(j));
            off += mi * mu.mass(j) * pot.moreau_envelope(&z, n)?;
        }
    }
    Ok(0.5 * diag + off)
}

/// `|dW|(mu)`: L2(mu) norm of the minimal-selection velocity.
pub fn metric_slope(pot: &Potential, mu: &ParticleMeasure, opts: &SelectionOptions) -> Result<f64> {
    Ok(minimal_selection(pot, mu, opts)?.slope())
}
