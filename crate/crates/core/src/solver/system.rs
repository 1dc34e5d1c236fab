//! Collocation system for the conformal mean-curvature equations: node
//! residuals, the balanced affine term, finite-difference Jacobians and the
//! damped, gauge-regularized normal-equation step.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::affine::AffineFunction;
use crate::charts::Chart;
use crate::error::{PmcError, Result};
use crate::geometry::{coordinate_gradient, V3};
use crate::harmonics::{coeff_count, degree_order, Derivative, HarmonicField, SphericalTransform};

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Jet {
    pub d_theta: V3,
    pub d_phi: V3,
    pub laplacian: V3,
}

impl Jet {
    #[inline]
    pub fn area(&self) -> f64 {
        self.d_theta.cross(&self.d_phi).norm()
    }
}

/// Conformality `F_z·F_z` in the chart with factor `c`, as `[re, im]`.
#[inline]
pub(crate) fn conformality_rows(c: Complex64, jet: &Jet) -> [f64; 2] {
    let re = jet.d_theta.norm_squared() - jet.d_phi.norm_squared();
    let im = -2.0 * jet.d_theta.dot(&jet.d_phi);
    let v = c * c * Complex64::new(re, im);
    [v.re, v.im]
}

/// Calibrated mean-curvature residual `|c|² (Δ₀F + H F_θ × F_φ̂)`.
#[inline]
pub(crate) fn mc_rows(c: Complex64, jet: &Jet, h: f64) -> V3 {
    c.norm_sqr() * (jet.laplacian + h * jet.d_theta.cross(&jet.d_phi))
}

/// What the system's rows are.
#[derive(Debug, Clone)]
pub(crate) enum RowKind {
    /// Conformality only.
    Conformal,
    /// Conformality, mean curvature `H + ℓ_b` with `b` balanced against
    /// `dV_F`, and the centering rows `∫ x dV_F = 0` that pin the
    /// three-parameter solution family.
    Full {
        h: Vec<f64>,
        /// Round gradient `(∂θ, ∂φ̂)` of `h`.
        h_grad: Vec<(f64, f64)>,
    },
}

impl RowKind {
    fn centered(&self) -> bool {
        matches!(self, RowKind::Full { .. })
    }

    fn per_node(&self) -> usize {
        match self {
            RowKind::Conformal => 2,
            RowKind::Full { .. } => 5,
        }
    }
}

/// Collocation tables for fields of degree `degree` on a (finer) grid.
pub(crate) struct Collocation {
    pub transform: SphericalTransform,
    pub degree: usize,
    pub nc: usize,
    pub factor: Vec<Complex64>,
    pub weight: Vec<f64>,
    pub sqrt_w: Vec<f64>,
    pub point: Vec<V3>,
    /// Round gradients of `x₁, x₂, x₃`.
    pub grad_x: Vec<[(f64, f64); 3]>,
    b_val: Vec<f64>,
    b_t: Vec<f64>,
    b_p: Vec<f64>,
    eig: Vec<f64>,
}

impl Collocation {
    pub fn new(degree: usize, grid_degree: usize) -> Result<Self> {
        if grid_degree < degree {
            return Err(PmcError::Config(format!(
                "grid degree {grid_degree} is below field degree {degree}"
            )));
        }
        let grid = crate::grid::SphericalGrid::new(grid_degree)?;
        let transform = SphericalTransform::new(&grid);
        let n = grid.len();
        let nc = coeff_count(degree);
        let mut b_val = vec![0.0; n * nc];
        let mut b_t = vec![0.0; n * nc];
        let mut b_p = vec![0.0; n * nc];
        b_val
            .par_chunks_mut(nc)
            .zip(b_t.par_chunks_mut(nc))
            .zip(b_p.par_chunks_mut(nc))
            .enumerate()
            .for_each(|(k, ((v, t), p))| {
                for i in 0..nc {
                    let (l, m) = degree_order(i);
                    v[i] = transform.basis(Derivative::Value, l, m, k);
                    t[i] = transform.basis(Derivative::Theta, l, m, k);
                    p[i] = transform.basis(Derivative::PhiHat, l, m, k);
                }
            });
        let eig = (0..nc)
            .map(|i| {
                let l = degree_order(i).0 as f64;
                -l * (l + 1.0)
            })
            .collect();
        let mut factor = Vec::with_capacity(n);
        let mut point = Vec::with_capacity(n);
        let mut grad_x = Vec::with_capacity(n);
        for k in 0..n {
            let (t, p) = grid.angles(k);
            factor.push(Chart::preferred(t).factor(t, p));
            point.push(V3::from(grid.point(k)));
            grad_x.push(std::array::from_fn(|j| coordinate_gradient(j, t, p)));
        }
        let weight = grid.weights().to_vec();
        let sqrt_w = weight.iter().map(|w| w.sqrt()).collect();
        Ok(Collocation {
            transform,
            degree,
            nc,
            factor,
            weight,
            sqrt_w,
            point,
            grad_x,
            b_val,
            b_t,
            b_p,
            eig,
        })
    }

    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn n_rows(&self, kind: &RowKind) -> usize {
        kind.per_node() * self.len() + if kind.centered() { 3 } else { 0 }
    }

    /// Target values and round gradients for a band-limited scalar field.
    pub fn target(&self, h: &HarmonicField) -> Result<RowKind> {
        let t = &self.transform;
        let v = t.synthesize_component(h, 0, Derivative::Value)?;
        let dt = t.synthesize_component(h, 0, Derivative::Theta)?;
        let dp = t.synthesize_component(h, 0, Derivative::PhiHat)?;
        Ok(RowKind::Full {
            h: v,
            h_grad: dt.into_iter().zip(dp).collect(),
        })
    }

    pub fn jets(&self, coeffs: &[f64]) -> Vec<Jet> {
        let nc = self.nc;
        (0..self.len())
            .into_par_iter()
            .map(|k| {
                let (bv, bt, bp) = (
                    &self.b_val[k * nc..(k + 1) * nc],
                    &self.b_t[k * nc..(k + 1) * nc],
                    &self.b_p[k * nc..(k + 1) * nc],
                );
                let mut jet = Jet::default();
                for c in 0..3 {
                    let f = &coeffs[c * nc..(c + 1) * nc];
                    let (mut t, mut p, mut l) = (0.0, 0.0, 0.0);
                    for i in 0..nc {
                        t += f[i] * bt[i];
                        p += f[i] * bp[i];
                        l += f[i] * self.eig[i] * bv[i];
                    }
                    jet.d_theta[c] = t;
                    jet.d_phi[c] = p;
                    jet.laplacian[c] = l;
                }
                jet
            })
            .collect()
    }

    /// Obstruction `v` and moment matrix `M` of `h` under the area weights.
    fn moments(&self, areas: &[f64], h_grad: &[(f64, f64)]) -> (Vector3<f64>, Matrix3<f64>) {
        let mut v = Vector3::zeros();
        let mut m = Matrix3::zeros();
        for k in 0..self.len() {
            let dw = self.weight[k] * areas[k];
            let g = &self.grad_x[k];
            let (ht, hp) = h_grad[k];
            for a in 0..3 {
                v[a] += (g[a].0 * ht + g[a].1 * hp) * dw;
                for b in 0..3 {
                    m[(a, b)] += (g[a].0 * g[b].0 + g[a].1 * g[b].1) * dw;
                }
            }
        }
        (v, m)
    }

    /// `b` with `H + ℓ_b` balanced under `dV_F`.
    pub fn balance(&self, jets: &[Jet], h_grad: &[(f64, f64)]) -> AffineFunction {
        let areas: Vec<f64> = jets.iter().map(Jet::area).collect();
        let (v, m) = self.moments(&areas, h_grad);
        solve_balance(v, m)
    }

    /// Stacked residual; `b` for full systems.
    pub fn residual(&self, jets: &[Jet], kind: &RowKind) -> (Vec<f64>, AffineFunction) {
        let per = kind.per_node();
        let mut r = vec![0.0; self.n_rows(kind)];
        let ell = match kind {
            RowKind::Conformal => AffineFunction::zero(),
            RowKind::Full { h_grad, .. } => self.balance(jets, h_grad),
        };
        let mut center = V3::zeros();
        for (k, jet) in jets.iter().enumerate() {
            self.node_rows(k, jet, kind, &ell, &mut r[k * per..(k + 1) * per]);
            center += self.weight[k] * jet.area() * self.point[k];
        }
        if kind.centered() {
            let base = per * self.len();
            r[base..base + 3].copy_from_slice(center.as_slice());
        }
        (r, ell)
    }

    #[inline]
    fn node_rows(
        &self,
        k: usize,
        jet: &Jet,
        kind: &RowKind,
        ell: &AffineFunction,
        out: &mut [f64],
    ) {
        let s = self.sqrt_w[k];
        let c = self.factor[k];
        let conf = conformality_rows(c, jet);
        out[0] = s * conf[0];
        out[1] = s * conf[1];
        if let RowKind::Full { h, .. } = kind {
            let p = self.point[k];
            let hk = h[k] + ell.constant() + ell.vector().dot(&p);
            let mc = mc_rows(c, jet, hk);
            out[2] = s * mc[0];
            out[3] = s * mc[1];
            out[4] = s * mc[2];
        }
    }

    /// Forward-difference Jacobian, column-major `n_rows × n_unknowns`.
    pub fn jacobian(&self, jets: &[Jet], kind: &RowKind, base: &[f64], step: f64) -> Vec<f64> {
        let nr = self.n_rows(kind);
        let per = kind.per_node();
        let n = self.len();
        let nc = self.nc;
        let areas: Vec<f64> = jets.iter().map(Jet::area).collect();
        let moments = match kind {
            RowKind::Full { h_grad, .. } => Some(self.moments(&areas, h_grad)),
            RowKind::Conformal => None,
        };
        let mut data = vec![0.0; nr * 3 * nc];
        data.par_chunks_mut(nr).enumerate().for_each(|(col, out)| {
            let (comp, i) = (col / nc, col % nc);
            let perturbed = |k: usize| {
                let mut j = jets[k];
                j.d_theta[comp] += step * self.b_t[k * nc + i];
                j.d_phi[comp] += step * self.b_p[k * nc + i];
                j.laplacian[comp] += step * self.eig[i] * self.b_val[k * nc + i];
                j
            };
            // First pass: area changes move the balanced affine term.
            let ell = match (&moments, kind) {
                (Some((v0, m0)), RowKind::Full { h_grad, .. }) => {
                    let mut v = *v0;
                    let mut m = *m0;
                    for k in 0..n {
                        let da = perturbed(k).area() - areas[k];
                        if da == 0.0 {
                            continue;
                        }
                        let dw = self.weight[k] * da;
                        let g = &self.grad_x[k];
                        let (ht, hp) = h_grad[k];
                        for a in 0..3 {
                            v[a] += (g[a].0 * ht + g[a].1 * hp) * dw;
                            for b in 0..3 {
                                m[(a, b)] += (g[a].0 * g[b].0 + g[a].1 * g[b].1) * dw;
                            }
                        }
                    }
                    solve_balance(v, m)
                }
                _ => AffineFunction::zero(),
            };
            let mut center = V3::zeros();
            for k in 0..n {
                let j = perturbed(k);
                self.node_rows(k, &j, kind, &ell, &mut out[k * per..(k + 1) * per]);
                center += self.weight[k] * j.area() * self.point[k];
            }
            if kind.centered() {
                out[per * n..per * n + 3].copy_from_slice(center.as_slice());
            }
            for (o, b) in out.iter_mut().zip(base) {
                *o = (*o - b) / step;
            }
        });
        data
    }
}

pub(crate) fn solve_balance(v: Vector3<f64>, m: Matrix3<f64>) -> AffineFunction {
    match m.lu().solve(&(-v)) {
        Some(b) => AffineFunction::new(b.into()),
        None => AffineFunction::zero(),
    }
}

/// Solves `(JᵀJ + σ QQᵀ + μ I) δ = −Jᵀ r` in column-scaled variables, where
/// `Q` spans the gauge directions; returns `δ` projected off the gauge.
pub(crate) fn regularized_step(
    jac: &mut [f64],
    n_rows: usize,
    r: &[f64],
    gauge: &[Vec<f64>],
    mu: f64,
) -> Result<Vec<f64>> {
    let n = jac.len() / n_rows;
    let scale: Vec<f64> = jac
        .par_chunks_mut(n_rows)
        .map(|col| {
            let s = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            let s = if s > 0.0 { s } else { 1.0 };
            col.iter_mut().for_each(|x| *x /= s);
            s
        })
        .collect();
    let j = MatRef::from_column_major_slice(jac, n_rows, n);
    let mut a: Mat<f64> = j.transpose() * j;
    let rv = MatRef::from_column_major_slice(r, n_rows, 1);
    let g: Mat<f64> = j.transpose() * rv;
    // Gauge directions in scaled variables y = D δ.
    let scaled: Vec<Vec<f64>> = gauge
        .iter()
        .map(|q| q.iter().zip(&scale).map(|(x, s)| x * s).collect())
        .collect();
    let basis = orthonormalize(&scaled);
    let sigma = (0..n).map(|i| a[(i, i)]).sum::<f64>() / n as f64;
    for q in &basis {
        for c in 0..n {
            if q[c] == 0.0 {
                continue;
            }
            for rr in 0..n {
                a[(rr, c)] += sigma * q[rr] * q[c];
            }
        }
    }
    let mut damping = mu * sigma;
    for _ in 0..8 {
        let mut damped = a.clone();
        for i in 0..n {
            damped[(i, i)] += damping;
        }
        if let Ok(llt) = damped.llt(faer::Side::Lower) {
            let y = llt.solve(&g);
            let mut delta: Vec<f64> = (0..n).map(|i| -y[(i, 0)] / scale[i]).collect();
            project_out(&mut delta, &orthonormalize(gauge));
            if delta.iter().all(|x| x.is_finite()) {
                return Ok(delta);
            }
        }
        damping = if damping == 0.0 {
            1e-14 * sigma
        } else {
            damping * 100.0
        };
    }
    Err(PmcError::Singular(
        "normal equations could not be factored".into(),
    ))
}

/// Modified Gram–Schmidt; drops numerically dependent vectors.
pub(crate) fn orthonormalize(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        let norm0 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for q in &out {
                let d: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 * norm0 && norm > 0.0 {
            w.iter_mut().for_each(|x| *x /= norm);
            out.push(w);
        }
    }
    out
}

pub(crate) fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for q in basis {
        let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
