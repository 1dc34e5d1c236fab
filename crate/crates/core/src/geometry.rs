//! Differential geometry of a spectrally represented immersion `F: S² → R³`.
//!
//! Everything is computed in the orthonormal round frame `(e_θ, e_φ̂)` and
//! only converted to stereographic chart coordinates where a chart quantity
//! is asked for. The frame is smooth away from the poles and grid nodes never
//! sit on a pole.
//!
//! Sign conventions: `N = F_u × F_v / |F_u × F_v|` (north-chart orientation,
//! outward on the round sphere), `A_ij = −∂_ij F · N`, `H = tr_γ A`. With
//! these the unit sphere has `H = 2`, `K = 1`. A single global flip is
//! applied when `H < 0` at the node farthest from the origin.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::charts::{self, Chart, ChartGradient};
use crate::error::{PmcError, Result};
use crate::grid::SphericalGrid;
use crate::harmonics::{Derivative, HarmonicField, SphericalTransform};

/// Constant `κ` in `F_z̄z = κ · iH (F̄_z × F_z)`, fixed by requiring the
/// residual to vanish on the unit sphere with `H = 2`. See
/// [`calibrate_mc_constant`].
pub const MC_CONSTANT: f64 = -0.5;

/// Default threshold on `|F_z|²` below which a node is not regular.
pub const IMMERSION_EPS: f64 = 1e-8;

/// Below this `|F_θ × F_φ̂|` a node is flagged singular.
pub const SINGULAR_AREA: f64 = 1e-12;

/// Conformality sup-norm allowed by [`mc_residual`].
pub const CONFORMAL_TOL: f64 = 1e-6;

pub type V3 = Vector3<f64>;

/// A spectrally represented map `S² → R³`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmersionField {
    field: HarmonicField,
}

/// Spatial jet of `F` at one node in the round frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeJet {
    pub value: V3,
    pub d_theta: V3,
    /// `F_φ / sin θ`.
    pub d_phi: V3,
    pub d_tt: V3,
    /// `F_θφ / sin θ`.
    pub d_tp: V3,
    /// `F_φφ / sin² θ`.
    pub d_pp: V3,
    /// Round Laplacian `Δ₀ F`.
    pub laplacian: V3,
}

impl ImmersionField {
    pub fn new(field: HarmonicField) -> Result<Self> {
        if field.components() != 3 {
            return Err(PmcError::Config(format!(
                "an immersion needs 3 components, got {}",
                field.components()
            )));
        }
        Ok(ImmersionField { field })
    }

    pub fn round(radius: f64, degree: usize) -> Self {
        ImmersionField {
            field: HarmonicField::round_sphere(radius, degree),
        }
    }

    /// Analyzes `map(point on S²)` on the transform's grid.
    pub fn from_map(
        transform: &SphericalTransform,
        map: impl Fn([f64; 3]) -> [f64; 3],
    ) -> Result<Self> {
        let grid = transform.grid();
        let mut comps = vec![vec![0.0; grid.len()]; 3];
        for k in 0..grid.len() {
            let y = map(grid.point(k));
            for c in 0..3 {
                comps[c][k] = y[c];
            }
        }
        Self::new(transform.analyze(&comps)?)
    }

    pub fn field(&self) -> &HarmonicField {
        &self.field
    }

    pub fn into_field(self) -> HarmonicField {
        self.field
    }

    pub fn degree(&self) -> usize {
        self.field.degree()
    }

    pub fn scaled(&self, s: f64) -> Self {
        ImmersionField {
            field: self.field.scaled(s),
        }
    }

    pub fn jets(&self, transform: &SphericalTransform) -> Result<Vec<NodeJet>> {
        let kinds = [
            Derivative::Value,
            Derivative::Theta,
            Derivative::PhiHat,
            Derivative::ThetaTheta,
            Derivative::ThetaPhiHat,
            Derivative::PhiPhiHat,
            Derivative::Laplacian,
        ];
        let mut data = Vec::with_capacity(kinds.len());
        for kind in kinds {
            let mut per_comp = Vec::with_capacity(3);
            for c in 0..3 {
                per_comp.push(transform.synthesize_component(&self.field, c, kind)?);
            }
            data.push(per_comp);
        }
        let v = |d: &Vec<Vec<f64>>, k: usize| V3::new(d[0][k], d[1][k], d[2][k]);
        Ok((0..transform.grid().len())
            .map(|k| NodeJet {
                value: v(&data[0], k),
                d_theta: v(&data[1], k),
                d_phi: v(&data[2], k),
                d_tt: v(&data[3], k),
                d_tp: v(&data[4], k),
                d_pp: v(&data[5], k),
                laplacian: v(&data[6], k),
            })
            .collect())
    }

    /// Cached-style accessor for the chart gradient of all three components.
    pub fn chart_gradient(
        &self,
        transform: &SphericalTransform,
        chart: Chart,
    ) -> Result<ChartGradient> {
        charts::chart_gradient(&self.field, transform, chart)
    }

    /// `min |F_z|²` over nodes in their preferred chart.
    pub fn min_gradient_sq(&self, transform: &SphericalTransform) -> Result<f64> {
        let grid = transform.grid();
        let jets = self.jets(transform)?;
        Ok(jets
            .iter()
            .enumerate()
            .map(|(k, j)| {
                let (t, p) = grid.angles(k);
                let c = Chart::preferred(t).factor(t, p);
                c.norm_sqr() * (j.d_theta.norm_squared() + j.d_phi.norm_squared())
            })
            .fold(f64::INFINITY, f64::min))
    }

    pub fn is_regular(&self, transform: &SphericalTransform) -> Result<bool> {
        Ok(self.min_gradient_sq(transform)? > IMMERSION_EPS)
    }
}

/// Fundamental forms at one regular node. `gamma` and `second` are in the
/// coordinates of `chart`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeForms {
    pub chart: Chart,
    pub gamma: Matrix2<f64>,
    /// `λ² = 2 F_z·F_z̄`.
    pub lambda_sq: f64,
    pub normal: V3,
    pub second: Matrix2<f64>,
    pub mean: f64,
    pub gauss: f64,
    pub a_norm_sq: f64,
    /// `dV_γ / dV_round`.
    pub area_density: f64,
}

#[derive(Debug, Clone)]
pub struct FundamentalForms {
    /// `None` marks a singular node.
    pub nodes: Vec<Option<NodeForms>>,
    /// Whether the global orientation fix flipped the normal.
    pub flipped: bool,
}

impl FundamentalForms {
    pub fn singular_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_none()).count()
    }

    /// Per-node values of a scalar, singular nodes mapped to 0.
    pub fn scalar(&self, f: impl Fn(&NodeForms) -> f64) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|n| n.as_ref().map_or(0.0, &f))
            .collect()
    }

    pub fn mean_curvature(&self) -> Vec<f64> {
        self.scalar(|n| n.mean)
    }

    pub fn area_density(&self) -> Vec<f64> {
        self.scalar(|n| n.area_density)
    }
}

/// First-form frame metric, second form and curvatures from a node jet.
/// Returns `None` at singular nodes. Frame-level (no chart).
pub(crate) struct FrameForms {
    pub g: Matrix2<f64>,
    pub a: Matrix2<f64>,
    pub normal: V3,
    pub area: f64,
}

pub(crate) fn frame_forms(j: &NodeJet) -> Option<FrameForms> {
    let cross = j.d_theta.cross(&j.d_phi);
    let area = cross.norm();
    if area < SINGULAR_AREA {
        return None;
    }
    let n = cross / area;
    let g = Matrix2::new(
        j.d_theta.dot(&j.d_theta),
        j.d_theta.dot(&j.d_phi),
        j.d_theta.dot(&j.d_phi),
        j.d_phi.dot(&j.d_phi),
    );
    let a12 = -j.d_tp.dot(&n);
    let a = Matrix2::new(-j.d_tt.dot(&n), a12, a12, -j.d_pp.dot(&n));
    Some(FrameForms {
        g,
        a,
        normal: n,
        area,
    })
}

/// Jacobian of the chart coordinates in the round frame: columns are
/// `∂_u`, `∂_v` expressed in `(e_θ, e_φ̂)`.
fn chart_jacobian(chart: Chart, theta: f64, phi: f64) -> Matrix2<f64> {
    let c = chart.factor(theta, phi);
    Matrix2::new(2.0 * c.re, -2.0 * c.im, 2.0 * c.im, 2.0 * c.re)
}

pub fn fundamental_forms(
    immersion: &ImmersionField,
    transform: &SphericalTransform,
) -> Result<FundamentalForms> {
    let grid = transform.grid();
    let jets = immersion.jets(transform)?;
    let mut nodes: Vec<Option<NodeForms>> = jets
        .iter()
        .enumerate()
        .map(|(k, j)| {
            let (theta, phi) = grid.angles(k);
            let ff = frame_forms(j)?;
            let ginv = ff.g.try_inverse()?;
            let shape = ginv * ff.a;
            let mean = shape.trace();
            let gauss = ff.a.determinant() / ff.g.determinant();
            let a_norm_sq = (shape * shape).trace();
            let chart = Chart::preferred(theta);
            let jac = chart_jacobian(chart, theta, phi);
            let c = chart.factor(theta, phi);
            Some(NodeForms {
                chart,
                gamma: jac.transpose() * ff.g * jac,
                lambda_sq: 2.0 * c.norm_sqr() * (j.d_theta.norm_squared() + j.d_phi.norm_squared()),
                normal: ff.normal,
                second: jac.transpose() * ff.a * jac,
                mean,
                gauss,
                a_norm_sq,
                area_density: ff.area,
            })
        })
        .collect();
    let far = jets
        .iter()
        .enumerate()
        .filter(|(k, _)| nodes[*k].is_some())
        .max_by(|a, b| a.1.value.norm().total_cmp(&b.1.value.norm()))
        .map(|(k, _)| k);
    let flipped = matches!(far, Some(k) if nodes[k].is_some_and(|n| n.mean < 0.0));
    if flipped {
        for n in nodes.iter_mut().flatten() {
            n.normal = -n.normal;
            n.second = -n.second;
            n.mean = -n.mean;
        }
    }
    Ok(FundamentalForms { nodes, flipped })
}

/// `F_z·F_z` in `chart`; masked nodes give `None`.
pub fn conformality_residual_in(
    immersion: &ImmersionField,
    transform: &SphericalTransform,
    chart: Chart,
) -> Result<Vec<Option<Complex64>>> {
    let g = immersion.chart_gradient(transform, chart)?;
    Ok((0..transform.grid().len())
        .map(|k| g.at(k).ok().map(|v| v.iter().map(|x| x * x).sum()))
        .collect())
}

/// `F_z·F_z` per node, each node in its preferred chart.
pub fn conformality_residual(
    immersion: &ImmersionField,
    transform: &SphericalTransform,
) -> Result<Vec<Complex64>> {
    let grid = transform.grid();
    let jets = immersion.jets(transform)?;
    Ok(jets
        .iter()
        .enumerate()
        .map(|(k, j)| {
            let (t, p) = grid.angles(k);
            conformality_at(Chart::preferred(t).factor(t, p), j)
        })
        .collect())
}

#[inline]
pub(crate) fn conformality_at(c: Complex64, j: &NodeJet) -> Complex64 {
    // (c (F_θ − i F_φ̂))²
    let re = j.d_theta.norm_squared() - j.d_phi.norm_squared();
    let im = -2.0 * j.d_theta.dot(&j.d_phi);
    c * c * Complex64::new(re, im)
}

pub fn sup_norm(values: &[Complex64]) -> f64 {
    values.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// `F_z̄z − κ iH (F̄_z × F_z)` per node (preferred chart), with `κ` =
/// [`MC_CONSTANT`]. Requires `F` conformal to within [`CONFORMAL_TOL`].
pub fn mc_residual(
    immersion: &ImmersionField,
    target: &[f64],
    transform: &SphericalTransform,
) -> Result<Vec<[Complex64; 3]>> {
    let grid = transform.grid();
    if target.len() != grid.len() {
        return Err(PmcError::Data("target length does not match grid".into()));
    }
    let conf = sup_norm(&conformality_residual(immersion, transform)?);
    if conf > CONFORMAL_TOL {
        return Err(PmcError::NotConformal {
            sup_norm: conf,
            tolerance: CONFORMAL_TOL,
        });
    }
    let jets = immersion.jets(transform)?;
    Ok(jets
        .iter()
        .enumerate()
        .map(|(k, j)| {
            let (t, p) = grid.angles(k);
            mc_chart_residual(Chart::preferred(t).factor(t, p), j, target[k], MC_CONSTANT)
        })
        .collect())
}

fn mc_chart_residual(c: Complex64, j: &NodeJet, h: f64, kappa: f64) -> [Complex64; 3] {
    let fz: [Complex64; 3] = std::array::from_fn(|i| c * Complex64::new(j.d_theta[i], -j.d_phi[i]));
    let bar: [Complex64; 3] = std::array::from_fn(|i| fz[i].conj());
    let cross = [
        bar[1] * fz[2] - bar[2] * fz[1],
        bar[2] * fz[0] - bar[0] * fz[2],
        bar[0] * fz[1] - bar[1] * fz[0],
    ];
    let lap = c.norm_sqr();
    let i = Complex64::new(0.0, 1.0);
    std::array::from_fn(|a| lap * j.laplacian[a] - kappa * i * h * cross[a])
}

/// Least-squares fit of `κ` on the unit sphere with `H = 2`.
pub fn calibrate_mc_constant(transform: &SphericalTransform) -> Result<f64> {
    let grid = transform.grid();
    let jets = ImmersionField::round(1.0, grid.degree()).jets(transform)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, j) in jets.iter().enumerate() {
        let (t, p) = grid.angles(k);
        let c = Chart::preferred(t).factor(t, p);
        // residual(κ) = a − κ b
        let a = mc_chart_residual(c, j, 2.0, 0.0);
        let r1 = mc_chart_residual(c, j, 2.0, 1.0);
        for d in 0..3 {
            let b = a[d] - r1[d];
            num += (b.conj() * a[d]).re;
            den += b.norm_sqr();
        }
    }
    Ok(num / den)
}

/// `∫|A|² dV_γ − ∫H² dV_γ + 8π`.
pub fn gauss_identity_residual(
    immersion: &ImmersionField,
    transform: &SphericalTransform,
) -> Result<f64> {
    let forms = fundamental_forms(immersion, transform)?;
    let grid = transform.grid();
    let a2 = weighted_integral(&forms, grid, |n| n.a_norm_sq);
    let h2 = weighted_integral(&forms, grid, |n| n.mean * n.mean);
    Ok(a2 - h2 + 8.0 * PI)
}

/// `∫ f dV_γ` over regular nodes.
pub fn weighted_integral(
    forms: &FundamentalForms,
    grid: &SphericalGrid,
    f: impl Fn(&NodeForms) -> f64,
) -> f64 {
    forms
        .nodes
        .iter()
        .zip(grid.weights())
        .filter_map(|(n, w)| n.as_ref().map(|n| f(n) * n.area_density * w))
        .sum()
}

/// Round-frame covariant Hessian entries `(θθ, θφ̂, φ̂φ̂)` from a jet.
fn round_hessian(j: &NodeJet, theta: f64) -> [V3; 3] {
    let cot = theta.cos() / theta.sin();
    [j.d_tt, j.d_tp - cot * j.d_phi, j.d_pp + cot * j.d_theta]
}

/// L² norm (in the induced metric) of the 1-form `δ(A − Hγ)`.
///
/// Uses `Δ_γ N = −|A|² N + ∇H`, which holds exactly when Codazzi does, so the
/// tangential part of `Δ_γ N − ∇H` is the divergence defect. `N` and `H` are
/// analyzed on the grid and differentiated spectrally.
pub fn codazzi_residual(immersion: &ImmersionField, transform: &SphericalTransform) -> Result<f64> {
    let grid = transform.grid();
    let forms = fundamental_forms(immersion, transform)?;
    if forms.singular_count() > 0 {
        return Err(PmcError::Data(
            "codazzi residual needs a regular immersion".into(),
        ));
    }
    let jets = immersion.jets(transform)?;
    let normals: Vec<Vec<f64>> = (0..3)
        .map(|c| forms.nodes.iter().map(|n| n.unwrap().normal[c]).collect())
        .collect();
    let n_field = ImmersionField::new(transform.analyze(&normals)?)?;
    let n_jets = n_field.jets(transform)?;
    let h_field = transform.analyze_values(&forms.mean_curvature())?;
    let h_t = transform.synthesize_component(&h_field, 0, Derivative::Theta)?;
    let h_p = transform.synthesize_component(&h_field, 0, Derivative::PhiHat)?;

    let mut total = 0.0;
    for k in 0..grid.len() {
        let theta = grid.angles(k).0;
        let j = &jets[k];
        let ff = frame_forms(j).expect("regular node");
        let ginv = ff.g.try_inverse().expect("regular metric");
        let tangents = [j.d_theta, j.d_phi];
        let hess_f = round_hessian(j, theta);
        let hess_n = round_hessian(&n_jets[k], theta);
        let dn = [n_jets[k].d_theta, n_jets[k].d_phi];
        // Δ_γ N = g^{ij} (Hess⁰_ij N − C^k_ij ∂_k N), C^k_ij = g^{kl} F_l·Hess⁰_ij F.
        let idx = |a: usize, b: usize| if a == b { 2 * a } else { 1 };
        let mut lap_n = V3::zeros();
        for a in 0..2 {
            for b in 0..2 {
                let hf = hess_f[idx(a, b)];
                let mut term = hess_n[idx(a, b)];
                for kk in 0..2 {
                    let ck: f64 = (0..2).map(|l| ginv[(kk, l)] * tangents[l].dot(&hf)).sum();
                    term -= ck * dn[kk];
                }
                lap_n += ginv[(a, b)] * term;
            }
        }
        let dh = [h_t[k], h_p[k]];
        let mut grad_h = V3::zeros();
        for a in 0..2 {
            for b in 0..2 {
                grad_h += ginv[(a, b)] * dh[b] * tangents[a];
            }
        }
        let v = lap_n - grad_h;
        // Tangential projection g^{kl} (v·F_l) F_k.
        let mut vt = V3::zeros();
        for a in 0..2 {
            for b in 0..2 {
                vt += ginv[(a, b)] * v.dot(&tangents[b]) * tangents[a];
            }
        }
        total += vt.norm_squared() * ff.area * grid.weights()[k];
    }
    Ok(total.sqrt())
}

/// Round-frame gradient components `(∂θ, ∂φ̂)` of the coordinate `x_axis`.
pub fn coordinate_gradient(axis: usize, theta: f64, phi: f64) -> (f64, f64) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    match axis {
        0 => (ct * cp, -sp),
        1 => (ct * sp, cp),
        _ => (-st, 0.0),
    }
}

/// `v_j = ∫ ⟨∇x_j, ∇H⟩ dV_γ`, gradients in the round metric and
/// `dV_γ = weight · dV_round`.
pub fn obstruction_vector(
    h: &[f64],
    weight: &[f64],
    transform: &SphericalTransform,
) -> Result<[f64; 3]> {
    let grid = transform.grid();
    if weight.len() != grid.len() {
        return Err(PmcError::Data("weight length does not match grid".into()));
    }
    if weight.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(PmcError::Data(
            "area weight must be finite and non-negative".into(),
        ));
    }
    let hf = transform.analyze_values(h)?;
    let ht = transform.synthesize_component(&hf, 0, Derivative::Theta)?;
    let hp = transform.synthesize_component(&hf, 0, Derivative::PhiHat)?;
    let mut v = [0.0; 3];
    for k in 0..grid.len() {
        let (t, p) = grid.angles(k);
        let w = grid.weights()[k] * weight[k];
        for (axis, out) in v.iter_mut().enumerate() {
            let (gt, gp) = coordinate_gradient(axis, t, p);
            *out += (ht[k] * gt + hp[k] * gp) * w;
        }
    }
    Ok(v)
}

/// Serialized summary of an immersion's identities.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VerificationReport {
    pub degree: usize,
    pub area: f64,
    #[serde(rename = "intA2")]
    pub int_a2: f64,
    #[serde(rename = "intH2")]
    pub int_h2: f64,
    #[serde(rename = "intK")]
    pub int_k: f64,
    pub gauss_identity: f64,
    pub codazzi_norm: f64,
    pub obstruction: [f64; 3],
    pub conformality_sup: f64,
    pub mc_constant: f64,
    pub singular_nodes: usize,
    pub branch_points: Vec<crate::branch::BranchReport>,
}

/// Runs every identity check on `immersion`.
pub fn verify(
    immersion: &ImmersionField,
    transform: &SphericalTransform,
) -> Result<VerificationReport> {
    let grid = transform.grid();
    let forms = fundamental_forms(immersion, transform)?;
    let area = weighted_integral(&forms, grid, |_| 1.0);
    let int_a2 = weighted_integral(&forms, grid, |n| n.a_norm_sq);
    let int_h2 = weighted_integral(&forms, grid, |n| n.mean * n.mean);
    let int_k = weighted_integral(&forms, grid, |n| n.gauss);
    let codazzi_norm = if forms.singular_count() == 0 {
        codazzi_residual(immersion, transform)?
    } else {
        f64::NAN
    };
    let obstruction =
        obstruction_vector(&forms.mean_curvature(), &forms.area_density(), transform)?;
    let conformality_sup = sup_norm(&conformality_residual(immersion, transform)?);
    let branch_points = if conformality_sup <= CONFORMAL_TOL {
        crate::branch::detect_branch_points(immersion, transform)?
            .into_iter()
            .map(Into::into)
            .collect()
    } else {
        Vec::new()
    };
    Ok(VerificationReport {
        degree: grid.degree(),
        area,
        int_a2,
        int_h2,
        int_k,
        gauss_identity: int_a2 - int_h2 + 8.0 * PI,
        codazzi_norm,
        obstruction,
        conformality_sup,
        mc_constant: MC_CONSTANT,
        singular_nodes: forms.singular_count(),
        branch_points,
    })
}
