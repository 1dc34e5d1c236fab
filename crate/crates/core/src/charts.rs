//! Stereographic atlas of S² and chart-coordinate calculus.
//!
//! The north chart is `z = tan(θ/2) e^{iφ}` (it covers everything except the
//! south pole), the south chart is `w = 1/z`. Both are holomorphically related
//! and orientation compatible, so `F_z·F_z` transforms by `(dz/dw)²` and the
//! unit normal computed from `F_u × F_v` agrees in both.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{PmcError, Result};
use crate::grid::SphericalGrid;
use crate::harmonics::{Derivative, HarmonicField, SphericalTransform};

/// Nodes closer than this (radians) to a chart's excluded pole are masked.
pub const MASK_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Chart {
    North,
    South,
}

impl Chart {
    pub fn name(self) -> &'static str {
        match self {
            Chart::North => "north",
            Chart::South => "south",
        }
    }

    /// The chart a node is evaluated in when a single value per node is needed.
    pub fn preferred(theta: f64) -> Chart {
        if theta <= 0.5 * PI {
            Chart::North
        } else {
            Chart::South
        }
    }

    pub fn is_masked(self, theta: f64) -> bool {
        match self {
            Chart::North => PI - theta < MASK_RADIUS,
            Chart::South => theta < MASK_RADIUS,
        }
    }

    /// Complex factor `c` with `F_z = c (F_θ − i F_φ̂)` in this chart, where
    /// `F_φ̂ = F_φ / sin θ`.
    pub fn factor(self, theta: f64, phi: f64) -> Complex64 {
        let p = ChartPoint::from_angles(self, theta, phi);
        match self {
            Chart::North => theta.sin() / (2.0 * p.z),
            Chart::South => -theta.sin() / (2.0 * p.z),
        }
    }

    /// Round conformal factor `ρ` with `g_round = ρ |dz|²` in this chart.
    pub fn round_factor(self, theta: f64, phi: f64) -> f64 {
        4.0 * self.factor(theta, phi).norm_sqr()
    }
}

/// A point of S² expressed in one of the two charts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub chart: Chart,
    pub z: Complex64,
}

impl ChartPoint {
    pub fn from_angles(chart: Chart, theta: f64, phi: f64) -> Self {
        let z = match chart {
            Chart::North => Complex64::from_polar((0.5 * theta).tan(), phi),
            Chart::South => Complex64::from_polar(1.0 / (0.5 * theta).tan(), -phi),
        };
        ChartPoint { chart, z }
    }

    /// `(θ, φ)` of the point.
    pub fn angles(&self) -> (f64, f64) {
        let (r, arg) = self.z.to_polar();
        match self.chart {
            Chart::North => (2.0 * r.atan(), arg),
            Chart::South => (2.0 * (1.0 / r).atan(), -arg),
        }
    }

    /// Same point in the other chart (`z_south = 1 / z_north`).
    pub fn transition(&self) -> Result<Self> {
        if self.z.norm() == 0.0 {
            return Err(PmcError::Domain {
                node: usize::MAX,
                chart: self.chart.name(),
            });
        }
        let other = match self.chart {
            Chart::North => Chart::South,
            Chart::South => Chart::North,
        };
        Ok(ChartPoint {
            chart: other,
            z: 1.0 / self.z,
        })
    }
}

/// `∂/∂z` of every component at every unmasked node of a grid.
#[derive(Debug, Clone)]
pub struct ChartGradient {
    pub chart: Chart,
    pub components: usize,
    pub mask: Vec<bool>,
    values: Vec<Complex64>,
}

impl ChartGradient {
    pub fn at(&self, node: usize) -> Result<&[Complex64]> {
        if self.mask[node] {
            return Err(PmcError::Domain {
                node,
                chart: self.chart.name(),
            });
        }
        Ok(&self.values[node * self.components..(node + 1) * self.components])
    }
}

/// Frame derivatives `(F_θ, F_φ̂)` of every component, node-major.
pub(crate) fn frame_derivatives(
    transform: &SphericalTransform,
    field: &HarmonicField,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut dt = Vec::with_capacity(field.components());
    let mut dp = Vec::with_capacity(field.components());
    for c in 0..field.components() {
        dt.push(transform.synthesize_component(field, c, Derivative::Theta)?);
        dp.push(transform.synthesize_component(field, c, Derivative::PhiHat)?);
    }
    Ok((dt, dp))
}

/// `F_z = ½(F_u − i F_v)` in `chart`, by spectral differentiation in `(θ, φ)`
/// followed by the chain rule for the stereographic coordinate.
pub fn chart_gradient(
    field: &HarmonicField,
    transform: &SphericalTransform,
    chart: Chart,
) -> Result<ChartGradient> {
    let grid = transform.grid();
    let (dt, dp) = frame_derivatives(transform, field)?;
    let nc = field.components();
    let mut mask = vec![false; grid.len()];
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len() * nc];
    for node in 0..grid.len() {
        let (theta, phi) = grid.angles(node);
        if chart.is_masked(theta) {
            mask[node] = true;
            continue;
        }
        let c = chart.factor(theta, phi);
        for k in 0..nc {
            values[node * nc + k] = c * Complex64::new(dt[k][node], -dp[k][node]);
        }
    }
    Ok(ChartGradient {
        chart,
        components: nc,
        mask,
        values,
    })
}

/// Quadrature `Σ values · weight · w_ij` over the grid.
pub fn integrate(values: &[f64], grid: &SphericalGrid, weight: &[f64]) -> Result<f64> {
    if values.len() != grid.len() || weight.len() != grid.len() {
        return Err(PmcError::Data(
            "integrand length does not match grid".into(),
        ));
    }
    let mut total = 0.0;
    for ((v, a), w) in values.iter().zip(weight).zip(grid.weights()) {
        if !v.is_finite() || !a.is_finite() {
            return Err(PmcError::Data("non-finite integrand".into()));
        }
        if *a < 0.0 {
            return Err(PmcError::Data("negative area weight".into()));
        }
        total += v * a * w;
    }
    Ok(total)
}

/// Integral against the round area element.
pub fn integrate_round(values: &[f64], grid: &SphericalGrid) -> Result<f64> {
    integrate(values, grid, &vec![1.0; grid.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::{coeff_count, evaluate_at};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field_at_z(field: &HarmonicField, c: usize, p: ChartPoint) -> f64 {
        let (t, ph) = p.angles();
        evaluate_at(field, c, t, ph).value
    }

    /// Centered differences of a field in chart coordinates.
    fn fd_chart_gradient(field: &HarmonicField, c: usize, p: ChartPoint, h: f64) -> Complex64 {
        let shift = |d: Complex64| ChartPoint {
            chart: p.chart,
            z: p.z + d,
        };
        let fu = (field_at_z(field, c, shift(Complex64::new(h, 0.0)))
            - field_at_z(field, c, shift(Complex64::new(-h, 0.0))))
            / (2.0 * h);
        let fv = (field_at_z(field, c, shift(Complex64::new(0.0, h)))
            - field_at_z(field, c, shift(Complex64::new(0.0, -h))))
            / (2.0 * h);
        0.5 * Complex64::new(fu, -fv)
    }

    #[test]
    fn chart_round_trip_and_transition() {
        for &(t, p) in &[(0.3, 1.0), (1.2, -2.0), (2.5, 0.4)] {
            for chart in [Chart::North, Chart::South] {
                let q = ChartPoint::from_angles(chart, t, p);
                let (t2, p2) = q.angles();
                assert!((t2 - t).abs() < 1e-14);
                assert!(Complex64::from_polar(1.0, p2 - p).re > 1.0 - 1e-14);
                let r = q.transition().unwrap();
                let expected = ChartPoint::from_angles(r.chart, t, p);
                assert!((r.z - expected.z).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn every_node_unmasked_somewhere() {
        let grid = SphericalGrid::new(24).unwrap();
        for k in 0..grid.len() {
            let t = grid.angles(k).0;
            assert!(!Chart::North.is_masked(t) || !Chart::South.is_masked(t));
            assert!(!Chart::preferred(t).is_masked(t));
        }
    }

    #[test]
    fn masked_node_is_domain_error() {
        let grid = SphericalGrid::new(48).unwrap();
        let t = SphericalTransform::new(&grid);
        let g = chart_gradient(&HarmonicField::coordinate(0, 48), &t, Chart::North).unwrap();
        let last = grid.len() - 1;
        assert!(g.mask[last]);
        assert!(matches!(g.at(last), Err(PmcError::Domain { .. })));
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let grid = SphericalGrid::new(8).unwrap();
        let t = SphericalTransform::new(&grid);
        let g = chart_gradient(&HarmonicField::constant(3.0, 8), &t, Chart::North).unwrap();
        for k in 0..grid.len() {
            if let Ok(v) = g.at(k) {
                assert!(v[0].norm() < 1e-14);
            }
        }
    }

    #[test]
    fn x1_gradient_matches_closed_form() {
        // x₁ = (z + z̄)/(1 + |z|²) so ∂_z x₁ = (1 − z̄²)/(1 + |z|²)².
        let grid = SphericalGrid::new(12).unwrap();
        let t = SphericalTransform::new(&grid);
        let g = chart_gradient(&HarmonicField::coordinate(0, 12), &t, Chart::North).unwrap();
        for k in 0..grid.len() {
            let (th, ph) = grid.angles(k);
            if let Ok(v) = g.at(k) {
                let z = ChartPoint::from_angles(Chart::North, th, ph).z;
                let want = (1.0 - z.conj() * z.conj()) / (1.0 + z.norm_sqr()).powi(2);
                assert!((v[0] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_chart_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let l = 10;
        let grid = SphericalGrid::new(l).unwrap();
        let t = SphericalTransform::new(&grid);
        let coeffs = (0..coeff_count(l))
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let f = HarmonicField::from_coeffs(1, l, coeffs).unwrap();
        for chart in [Chart::North, Chart::South] {
            let g = chart_gradient(&f, &t, chart).unwrap();
            for k in (0..grid.len()).step_by(3) {
                let (th, ph) = grid.angles(k);
                if chart != Chart::preferred(th) {
                    continue;
                }
                let p = ChartPoint::from_angles(chart, th, ph);
                let fd = fd_chart_gradient(&f, 0, p, 1e-5);
                assert!((fd - g.at(k).unwrap()[0]).norm() < 1e-6, "node {k}");
            }
        }
    }

    #[test]
    fn round_embedding_is_conformal_in_both_charts() {
        let grid = SphericalGrid::new(16).unwrap();
        let t = SphericalTransform::new(&grid);
        let e = HarmonicField::round_sphere(1.0, 16);
        for chart in [Chart::North, Chart::South] {
            let g = chart_gradient(&e, &t, chart).unwrap();
            for k in 0..grid.len() {
                if let Ok(v) = g.at(k) {
                    let s: Complex64 = v.iter().map(|x| x * x).sum();
                    assert!(s.norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn charts_agree_on_overlap() {
        // F_w = F_z dz/dw = −z² F_z for z = 1/w.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = 12;
        let grid = SphericalGrid::new(l).unwrap();
        let t = SphericalTransform::new(&grid);
        let coeffs = (0..3 * coeff_count(l))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let f = HarmonicField::from_coeffs(3, l, coeffs).unwrap();
        let n = chart_gradient(&f, &t, Chart::North).unwrap();
        let s = chart_gradient(&f, &t, Chart::South).unwrap();
        for k in 0..grid.len() {
            let (th, ph) = grid.angles(k);
            if let (Ok(a), Ok(b)) = (n.at(k), s.at(k)) {
                let z = ChartPoint::from_angles(Chart::North, th, ph).z;
                for c in 0..3 {
                    assert!((b[c] - (-z * z * a[c])).norm() < 1e-8 * (1.0 + b[c].norm()));
                }
            }
        }
    }

    #[test]
    fn integrals_of_moments() {
        let grid = SphericalGrid::new(16).unwrap();
        let ones = vec![1.0; grid.len()];
        assert!((integrate_round(&ones, &grid).unwrap() - 4.0 * PI).abs() < 1e-10);
        let x3: Vec<f64> = grid.points().iter().map(|p| p[2]).collect();
        assert!(integrate_round(&x3, &grid).unwrap().abs() < 1e-10);
        let x3sq: Vec<f64> = x3.iter().map(|x| x * x).collect();
        assert!((integrate_round(&x3sq, &grid).unwrap() - 4.0 * PI / 3.0).abs() < 1e-9);
        let mut bad = ones.clone();
        bad[0] = f64::INFINITY;
        assert!(integrate_round(&bad, &grid).is_err());
    }
}
