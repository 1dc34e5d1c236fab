//! Normalized affine functions `ℓ(p) = |b| + b·p` on the unit sphere and the
//! balanced representative of a class `[H] = {H + ℓ}`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{PmcError, Result};
use crate::geometry::{coordinate_gradient, obstruction_vector};
use crate::grid::SphericalGrid;
use crate::harmonics::SphericalTransform;

/// Condition number above which the balancing system is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
/// Fit tolerance of [`class_membership`].
pub const MEMBERSHIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AffineFunction {
    pub b: [f64; 3],
}

impl AffineFunction {
    pub fn new(b: [f64; 3]) -> Self {
        AffineFunction { b }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// The implied constant `a = |b|`.
    pub fn constant(&self) -> f64 {
        self.vector().norm()
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from(self.b)
    }

    pub fn value_at(&self, p: [f64; 3]) -> f64 {
        self.constant() + self.vector().dot(&Vector3::from(p))
    }

    pub fn evaluate(&self, grid: &SphericalGrid) -> Vec<f64> {
        grid.points()
            .into_iter()
            .map(|p| self.value_at(p))
            .collect()
    }

    /// Zero of `ℓ` on the sphere, `−b/|b|`; `None` for `b = 0`.
    pub fn zero_point(&self) -> Option<[f64; 3]> {
        let n = self.constant();
        (n > 0.0).then(|| (-self.vector() / n).into())
    }

    /// `ℓ∘R⁻¹` as a function on the sphere: `b → R b`.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        AffineFunction {
            b: (r * self.vector()).into(),
        }
    }
}

/// `M_jk = ∫ ⟨∇x_j, ∇x_k⟩ w dA` in the round metric.
pub fn moment_matrix(weight: &[f64], grid: &SphericalGrid) -> Result<Matrix3<f64>> {
    if weight.len() != grid.len() {
        return Err(PmcError::Data("weight length does not match grid".into()));
    }
    let mut m = Matrix3::zeros();
    for (k, w) in weight.iter().enumerate() {
        let (t, p) = grid.angles(k);
        let g: [(f64, f64); 3] = std::array::from_fn(|j| coordinate_gradient(j, t, p));
        let dw = w * grid.weights()[k];
        for a in 0..3 {
            for b in 0..3 {
                m[(a, b)] += (g[a].0 * g[b].0 + g[a].1 * g[b].1) * dw;
            }
        }
    }
    Ok(m)
}

/// Solves `M b = −v` so that `H + ℓ_b` has zero obstruction under `weight`.
pub fn canonical_representative(
    h: &[f64],
    weight: &[f64],
    transform: &SphericalTransform,
) -> Result<(Vec<f64>, AffineFunction)> {
    let grid = transform.grid();
    if weight.iter().all(|w| *w == 0.0) {
        return Err(PmcError::Data("area weight vanishes identically".into()));
    }
    let v = obstruction_vector(h, weight, transform)?;
    let m = moment_matrix(weight, grid)?;
    let sv = m.singular_values();
    let cond = sv.max() / sv.min();
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(PmcError::Singular(format!(
            "balancing system has condition number {cond:.3e}; representative is not unique"
        )));
    }
    let b = m
        .lu()
        .solve(&(-Vector3::from(v)))
        .ok_or_else(|| PmcError::Singular("balancing system is singular".into()))?;
    let ell = AffineFunction::new(b.into());
    let rep = h
        .iter()
        .zip(grid.points())
        .map(|(h, p)| h + ell.value_at(p))
        .collect();
    Ok((rep, ell))
}

/// Returns `ℓ` with `h2 = h1 + ℓ` if the difference is a normalized affine
/// function up to [`MEMBERSHIP_TOL`].
pub fn class_membership(
    h1: &[f64],
    h2: &[f64],
    grid: &SphericalGrid,
) -> Result<Option<AffineFunction>> {
    if h1.len() != grid.len() || h2.len() != grid.len() {
        return Err(PmcError::Data("field length does not match grid".into()));
    }
    let pts = grid.points();
    let w = grid.weights();
    let d: Vec<f64> = h1.iter().zip(h2).map(|(a, b)| b - a).collect();
    // {1, x₁, x₂, x₃} are orthogonal with norms 4π and 4π/3.
    let mut a = 0.0;
    let mut b = [0.0; 3];
    for k in 0..grid.len() {
        a += d[k] * w[k];
        for j in 0..3 {
            b[j] += d[k] * pts[k][j] * w[k];
        }
    }
    a /= 4.0 * PI;
    for bj in &mut b {
        *bj /= 4.0 * PI / 3.0;
    }
    let residual = (0..grid.len())
        .map(|k| {
            let fit = a + b[0] * pts[k][0] + b[1] * pts[k][1] + b[2] * pts[k][2];
            (d[k] - fit).powi(2) * w[k]
        })
        .sum::<f64>()
        .sqrt();
    let ell = AffineFunction::new(b);
    if residual < MEMBERSHIP_TOL && (a - ell.constant()).abs() < MEMBERSHIP_TOL {
        Ok(Some(ell))
    } else {
        Ok(None)
    }
}
