//! Gauge directions of the immersion problem and the based normalization.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{PmcError, Result};
use crate::harmonics::{evaluate_at, HarmonicField, SphericalTransform};

use super::system::Jet;

/// Largest admissible condition number of the gauge Gram matrix.
pub const GAUGE_CONDITION: f64 = 1e10;

/// Nine coefficient-space directions spanning the gauge kernel at an iterate:
/// ambient translations, ambient rotations and conformal reparametrizations.
#[derive(Debug, Clone)]
pub struct GaugeBasis {
    directions: Vec<Vec<f64>>,
}

impl GaugeBasis {
    /// Translations `e_a`, rotations `e_a × F` and push-forwards `F_*(∇x_a)`.
    pub fn new(field: &HarmonicField, transform: &SphericalTransform) -> Result<Self> {
        let jets = super::system_jets(field, transform)?;
        Self::from_jets(field, transform, &jets)
    }

    pub(crate) fn from_jets(
        field: &HarmonicField,
        transform: &SphericalTransform,
        jets: &[Jet],
    ) -> Result<Self> {
        let degree = field.degree();
        let nc = field.coeffs().len() / 3;
        let mut directions = Vec::with_capacity(9);
        for a in 0..3 {
            let mut d = vec![0.0; 3 * nc];
            d[a * nc] = 1.0;
            directions.push(d);
        }
        for a in 0..3 {
            let mut d = vec![0.0; 3 * nc];
            let axis = Vector3::ith(a, 1.0);
            for i in 0..nc {
                let f = Vector3::new(
                    field.coeffs()[i],
                    field.coeffs()[nc + i],
                    field.coeffs()[2 * nc + i],
                );
                let r = axis.cross(&f);
                for c in 0..3 {
                    d[c * nc + i] = r[c];
                }
            }
            directions.push(d);
        }
        let grid = transform.grid();
        for a in 0..3 {
            let values: Vec<Vec<f64>> = (0..3)
                .map(|c| {
                    (0..grid.len())
                        .map(|k| {
                            let (t, p) = grid.angles(k);
                            let (gt, gp) = crate::geometry::coordinate_gradient(a, t, p);
                            gt * jets[k].d_theta[c] + gp * jets[k].d_phi[c]
                        })
                        .collect()
                })
                .collect();
            let pushed = transform.analyze(&values)?.with_degree(degree);
            directions.push(pushed.coeffs().to_vec());
        }
        Ok(GaugeBasis { directions })
    }

    pub(crate) fn from_directions(directions: Vec<Vec<f64>>) -> Self {
        GaugeBasis { directions }
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    /// The six ambient rigid-motion directions.
    pub fn rigid(&self) -> &[Vec<f64>] {
        &self.directions[..6]
    }

    /// Condition number of the normalized Gram matrix.
    pub fn gram_condition(&self) -> f64 {
        let n = self.directions.len();
        let norms: Vec<f64> = self
            .directions
            .iter()
            .map(|d| super::system::norm(d))
            .collect();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            let dot: f64 = self.directions[i]
                .iter()
                .zip(&self.directions[j])
                .map(|(a, b)| a * b)
                .sum();
            dot / (norms[i] * norms[j])
        });
        let sv = gram.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    }

    /// Errors unless the directions are independent.
    pub fn check(&self) -> Result<()> {
        let cond = self.gram_condition();
        if cond < GAUGE_CONDITION {
            Ok(())
        } else {
            Err(PmcError::Singular(format!(
                "gauge directions are dependent (Gram condition {cond:e})"
            )))
        }
    }

    /// Largest `|⟨δ, g⟩| / (|δ||g|)` over the directions.
    pub fn max_overlap(&self, delta: &[f64]) -> f64 {
        let nd = super::system::norm(delta);
        if nd == 0.0 {
            return 0.0;
        }
        self.directions
            .iter()
            .map(|g| {
                let dot: f64 = g.iter().zip(delta).map(|(a, b)| a * b).sum();
                dot.abs() / (nd * super::system::norm(g))
            })
            .fold(0.0, f64::max)
    }
}

/// Rigid motion taking `F(p₀) → 0`, the normal at `p₀` to `e₃` and the
/// first frame vector at `p₀` onto the positive `e₁` axis; `p₀` is the north
/// pole. Returns `None` when the frame at `p₀` is degenerate.
pub fn normalize_based(field: &HarmonicField) -> Option<HarmonicField> {
    let (origin, frame) = based_frame(field)?;
    let nc = field.coeffs().len() / 3;
    let y00 = (4.0 * std::f64::consts::PI).sqrt();
    let mut out = field.clone();
    for i in 0..nc {
        let mut f = Vector3::new(
            field.coeffs()[i],
            field.coeffs()[nc + i],
            field.coeffs()[2 * nc + i],
        );
        if i == 0 {
            f -= origin * y00;
        }
        let g = frame * f;
        for c in 0..3 {
            out.coeffs_mut()[c * nc + i] = g[c];
        }
    }
    Some(out)
}

/// `F(p₀)` and the rotation with rows `(e₁, e₂, N)` of the based frame.
pub(crate) fn based_frame(field: &HarmonicField) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    let at = |phi: f64| {
        let v: Vec<_> = (0..3).map(|c| evaluate_at(field, c, 0.0, phi)).collect();
        (
            Vector3::new(v[0].value, v[1].value, v[2].value),
            Vector3::new(v[0].d_theta, v[1].d_theta, v[2].d_theta),
        )
    };
    let (origin, fu) = at(0.0);
    let (_, fv) = at(std::f64::consts::FRAC_PI_2);
    let normal = fu.cross(&fv);
    if fu.norm() < 1e-12 || normal.norm() < 1e-12 * fu.norm_squared() {
        return None;
    }
    let e1 = fu.normalize();
    let n = normal.normalize();
    let e2 = n.cross(&e1);
    Some((
        origin,
        Matrix3::from_rows(&[e1.transpose(), e2.transpose(), n.transpose()]),
    ))
}

/// Six based-immersion constraints: `F(p₀)`, the `e₁, e₂` components of the
/// normal at `p₀`, and the `e₂` component of the first frame vector.
pub fn based_constraints(field: &HarmonicField) -> [f64; 6] {
    let at = |phi: f64| {
        let v: Vec<_> = (0..3).map(|c| evaluate_at(field, c, 0.0, phi)).collect();
        (
            Vector3::new(v[0].value, v[1].value, v[2].value),
            Vector3::new(v[0].d_theta, v[1].d_theta, v[2].d_theta),
        )
    };
    let (origin, fu) = at(0.0);
    let (_, fv) = at(std::f64::consts::FRAC_PI_2);
    let n = fu
        .cross(&fv)
        .try_normalize(0.0)
        .unwrap_or_else(Vector3::zeros);
    let e = fu.try_normalize(0.0).unwrap_or_else(Vector3::zeros);
    [origin[0], origin[1], origin[2], n[0], n[1], e[1]]
}
