//! Explicit minimal immersions of planar domains: the Enneper blow-downs and
//! the odd/even Weierstrass families.
//!
//! Every family has the form `F = (Re P₁, Im P₂, Re P₃)` for polynomials
//! `P_i(ζ)`, so derivatives of all orders are exact.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::branch::{detect_in_samples, ChartSamples, SingularPoint};
use crate::charts::Chart;
use crate::error::{PmcError, Result};
use crate::geometry::V3;
use crate::grid::gauss_legendre;

/// Sup-norm bound `C` in `sup_{|ζ|≤1} |E_t − E₀| ≤ C t` for `0 ≤ t ≤ 1`.
pub const BLOWDOWN_BOUND: f64 = std::f64::consts::SQRT_2;
/// Step of the centered difference in [`variation_field_check`].
pub const VARIATION_STEP: f64 = 1e-5;
/// Default radius sweep for [`total_curvature`].
pub const RADIUS_SWEEP: [f64; 3] = [20.0, 35.0, 50.0];

/// Polar grid on the disk `|ζ| ≤ R`: Gauss–Legendre radii times uniform angles.
#[derive(Debug, Clone)]
pub struct DiskGrid {
    radius: f64,
    radii: Vec<f64>,
    angles: Vec<f64>,
    weights: Vec<f64>,
}

impl DiskGrid {
    pub fn new(radius: f64, n_radial: usize, n_angular: usize) -> Result<Self> {
        if !(radius > 0.0) || n_radial == 0 || n_angular < 3 {
            return Err(PmcError::Config(format!(
                "disk grid needs R > 0, at least one ring and three angles (got R={radius}, {n_radial}, {n_angular})"
            )));
        }
        let (radii, rw) = gauss_legendre(n_radial, 0.0, radius);
        let dphi = 2.0 * PI / n_angular as f64;
        let angles = (0..n_angular).map(|j| j as f64 * dphi).collect();
        let mut weights = Vec::with_capacity(n_radial * n_angular);
        for (r, w) in radii.iter().zip(&rw) {
            for _ in 0..n_angular {
                weights.push(r * w * dphi);
            }
        }
        Ok(DiskGrid {
            radius,
            radii,
            angles,
            weights,
        })
    }

    /// Grid resolution used for curvature sweeps.
    pub fn standard(radius: f64) -> Result<Self> {
        Self::new(radius, 400, 64)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_radial(&self) -> usize {
        self.radii.len()
    }

    pub fn n_angular(&self) -> usize {
        self.angles.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, node: usize) -> Complex64 {
        let na = self.angles.len();
        Complex64::from_polar(self.radii[node / na], self.angles[node % na])
    }

    pub fn points(&self) -> Vec<Complex64> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Ring and angular neighbors; the innermost ring is adjacent to itself
    /// across the center.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let (nr, na) = (self.radii.len() as i64, self.angles.len() as i64);
        let (ring, j) = ((node as i64) / na, (node as i64) % na);
        let mut out = Vec::new();
        for dr in [-1, 0, 1] {
            let r = ring + dr;
            if r < 0 || r >= nr {
                continue;
            }
            for dj in [-1, 0, 1] {
                if dr == 0 && dj == 0 {
                    continue;
                }
                out.push((r * na + (j + dj).rem_euclid(na)) as usize);
            }
        }
        if ring == 0 {
            out.extend(
                (0..na)
                    .filter(|&b| (b - j).abs() > 1 && (b - j).abs() < na - 1)
                    .map(|b| b as usize),
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Odd,
    Even,
}

/// A member of an explicit family: kind, order `k ≥ 1` and blow-down parameter `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub kind: FamilyKind,
    pub k: u32,
    pub t: f64,
}

impl Family {
    pub fn new(kind: FamilyKind, k: u32, t: f64) -> Result<Self> {
        if k == 0 {
            return Err(PmcError::Config("family order k must be at least 1".into()));
        }
        Ok(Family { kind, k, t })
    }

    pub fn enneper(t: f64) -> Self {
        Family {
            kind: FamilyKind::Odd,
            k: 1,
            t,
        }
    }

    /// Exponent of `ζ` in `F_z` at the origin when `t = 0`.
    pub fn limit_order(&self) -> usize {
        match self.kind {
            FamilyKind::Odd => 2 * self.k as usize,
            FamilyKind::Even => 2 * self.k as usize + 1,
        }
    }

    /// Total curvature of the full plane, `4π` times the Gauss map degree.
    pub fn limit_total_curvature(&self) -> f64 {
        if self.t == 0.0 {
            return 0.0;
        }
        4.0 * PI * self.k as f64
    }

    fn polynomials(&self) -> [Poly; 3] {
        let k = self.k as i32;
        let t = self.t;
        let c = |x: f64| Complex64::new(x, 0.0);
        match self.kind {
            FamilyKind::Odd => {
                let top = (2 * k + 1) as u32;
                let n = c(1.0 / top as f64);
                [
                    Poly(vec![(c(t.powi(2 * k)), 1), (-n, top)]),
                    Poly(vec![(c(t.powi(2 * k)), 1), (n, top)]),
                    Poly(vec![(c(2.0 * t.powi(k) / (k + 1) as f64), (k + 1) as u32)]),
                ]
            }
            FamilyKind::Even => {
                let top = (2 * k + 2) as u32;
                let n = c(1.0 / top as f64);
                [
                    Poly(vec![(c(0.5 * t.powi(2 * k)), 2), (-n, top)]),
                    Poly(vec![(c(0.5 * t.powi(2 * k)), 2), (n, top)]),
                    Poly(vec![(c(2.0 * t.powi(k) / (k + 2) as f64), (k + 2) as u32)]),
                ]
            }
        }
    }

    /// Position and real derivatives at `ζ`.
    pub fn jet(&self, z: Complex64) -> PlanarJet {
        let [p1, p2, p3] = self.polynomials();
        let (a, b, c) = (p1.eval(z), p2.eval(z), p3.eval(z));
        // ∂_u Re P = Re P', ∂_v Re P = −Im P'; ∂_u Im P = Im P', ∂_v Im P = Re P'.
        PlanarJet {
            position: V3::new(a[0].re, b[0].im, c[0].re),
            du: V3::new(a[1].re, b[1].im, c[1].re),
            dv: V3::new(-a[1].im, b[1].re, -c[1].im),
            duu: V3::new(a[2].re, b[2].im, c[2].re),
            duv: V3::new(-a[2].im, b[2].re, -c[2].im),
            dvv: V3::new(-a[2].re, -b[2].im, -c[2].re),
            fz: [0.5 * a[1], Complex64::new(0.0, -0.5) * b[1], 0.5 * c[1]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Poly(Vec<(Complex64, u32)>);

impl Poly {
    /// `[P, P', P'']` at `z`.
    fn eval(&self, z: Complex64) -> [Complex64; 3] {
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for &(c, n) in &self.0 {
            out[0] += c * z.powu(n);
            if n >= 1 {
                out[1] += c * n as f64 * z.powu(n - 1);
            }
            if n >= 2 {
                out[2] += c * (n * (n - 1)) as f64 * z.powu(n - 2);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarJet {
    pub position: V3,
    pub du: V3,
    pub dv: V3,
    pub duu: V3,
    pub duv: V3,
    pub dvv: V3,
    pub fz: [Complex64; 3],
}

/// Curvatures of a planar parametrization at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarCurvature {
    pub mean: f64,
    pub gauss: f64,
    pub a_norm_sq: f64,
    /// `√det γ`.
    pub area_density: f64,
}

impl PlanarJet {
    /// `None` where `F_u × F_v` vanishes.
    pub fn curvature(&self) -> Option<PlanarCurvature> {
        let cross = self.du.cross(&self.dv);
        let area = cross.norm();
        if area < crate::geometry::SINGULAR_AREA {
            return None;
        }
        let n = cross / area;
        let g = Matrix2::new(
            self.du.dot(&self.du),
            self.du.dot(&self.dv),
            self.du.dot(&self.dv),
            self.dv.dot(&self.dv),
        );
        let a = -Matrix2::new(
            self.duu.dot(&n),
            self.duv.dot(&n),
            self.duv.dot(&n),
            self.dvv.dot(&n),
        );
        let shape = g.try_inverse()? * a;
        Some(PlanarCurvature {
            mean: shape.trace(),
            gauss: a.determinant() / g.determinant(),
            a_norm_sq: (shape * shape).trace(),
            area_density: area,
        })
    }

    pub fn conformality(&self) -> Complex64 {
        self.fz.iter().map(|c| c * c).sum()
    }
}

/// A family member evaluated on a disk grid.
#[derive(Debug, Clone)]
pub struct PlanarImmersion {
    pub family: Family,
    pub grid: DiskGrid,
    pub jets: Vec<PlanarJet>,
}

impl PlanarImmersion {
    pub fn new(family: Family, grid: DiskGrid) -> Self {
        let jets = grid.points().into_iter().map(|z| family.jet(z)).collect();
        PlanarImmersion { family, grid, jets }
    }

    pub fn positions(&self) -> Vec<V3> {
        self.jets.iter().map(|j| j.position).collect()
    }

    pub fn curvatures(&self) -> Vec<Option<PlanarCurvature>> {
        self.jets.iter().map(PlanarJet::curvature).collect()
    }

    /// `sup |H|` over regular nodes.
    pub fn max_mean_curvature(&self) -> f64 {
        self.curvatures()
            .into_iter()
            .flatten()
            .map(|c| c.mean.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_conformality(&self) -> f64 {
        self.jets
            .iter()
            .map(|j| j.conformality().norm())
            .fold(0.0, f64::max)
    }

    /// `(∫|K| dA, ∫|A|² dA)` over the grid.
    pub fn curvature_integrals(&self) -> (f64, f64) {
        let mut k = 0.0;
        let mut a2 = 0.0;
        for (c, w) in self.curvatures().iter().zip(self.grid.weights()) {
            if let Some(c) = c {
                k += -c.gauss * c.area_density * w;
                a2 += c.a_norm_sq * c.area_density * w;
            }
        }
        (k, a2)
    }

    pub fn samples(&self) -> ChartSamples {
        ChartSamples {
            chart: Chart::North,
            z: self.grid.points(),
            fz: self.jets.iter().map(|j| j.fz).collect(),
            neighbors: (0..self.grid.len())
                .map(|k| self.grid.neighbors(k))
                .collect(),
            owned: vec![true; self.grid.len()],
        }
    }

    pub fn detect_branch_points(&self) -> Vec<SingularPoint> {
        detect_in_samples(&self.samples())
    }
}

/// The Enneper blow-down `E_t`:
/// `(u(v² − u²/3 + t²), v(u² − v²/3 + t²), t(u² − v²))`.
pub fn enneper_blowdown(t: f64, grid: &DiskGrid) -> PlanarImmersion {
    PlanarImmersion::new(Family::enneper(t), grid.clone())
}

pub fn weierstrass_family(kind: FamilyKind, k: u32, grid: &DiskGrid) -> Result<PlanarImmersion> {
    weierstrass_blowdown(kind, k, 1.0, grid)
}

pub fn weierstrass_blowdown(
    kind: FamilyKind,
    k: u32,
    t: f64,
    grid: &DiskGrid,
) -> Result<PlanarImmersion> {
    Ok(PlanarImmersion::new(Family::new(kind, k, t)?, grid.clone()))
}

/// The variation field `∂_t E_t = (2tu, 2tv, u² − v²)`.
pub fn variation_field(t: f64, z: Complex64) -> V3 {
    V3::new(2.0 * t * z.re, 2.0 * t * z.im, z.re * z.re - z.im * z.im)
}

/// `sup |(E_{t+h} − E_{t−h})/2h − X|` over the grid.
pub fn variation_field_check(t: f64, grid: &DiskGrid) -> f64 {
    let h = VARIATION_STEP;
    let plus = Family::enneper(t + h);
    let minus = Family::enneper(t - h);
    grid.points()
        .into_iter()
        .map(|z| {
            let fd = (plus.jet(z).position - minus.jet(z).position) / (2.0 * h);
            (fd - variation_field(t, z)).amax()
        })
        .fold(0.0, f64::max)
}

/// How the even family's total curvature is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureCount {
    #[default]
    PerMap,
    /// Divide by the 2-fold cover of the even family.
    PerCover,
}

/// `∫_{|ζ|≤R} |K| dA` for each radius, on [`DiskGrid::standard`] grids.
pub fn total_curvature(family: Family, radii: &[f64], count: CurvatureCount) -> Result<Vec<f64>> {
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PmcError::Config("radii must be strictly increasing".into()));
    }
    let divisor = match (family.kind, count) {
        (FamilyKind::Even, CurvatureCount::PerCover) => 2.0,
        _ => 1.0,
    };
    radii
        .iter()
        .map(|&r| {
            let p = PlanarImmersion::new(family, DiskGrid::standard(r)?);
            Ok(p.curvature_integrals().0 / divisor)
        })
        .collect()
}

/// Limit of `V(R) = V∞ − c R^{−p}` through three samples.
pub fn richardson_limit(radii: [f64; 3], values: [f64; 3]) -> f64 {
    let [r1, r2, r3] = radii;
    let [v1, v2, v3] = values;
    let d1 = v2 - v1;
    let d2 = v3 - v2;
    if d2 == 0.0 || d1 == 0.0 || d1.signum() != d2.signum() {
        return v3;
    }
    let target = d1 / d2;
    let ratio = |p: f64| (r1.powf(-p) - r2.powf(-p)) / (r2.powf(-p) - r3.powf(-p));
    let (mut lo, mut hi) = (0.01, 40.0);
    if (ratio(lo) - target) * (ratio(hi) - target) > 0.0 {
        return v3;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (ratio(lo) - target) * (ratio(mid) - target) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p = 0.5 * (lo + hi);
    let c = d2 / (r2.powf(-p) - r3.powf(-p));
    v3 + c * r3.powf(-p)
}
