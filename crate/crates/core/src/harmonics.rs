//! Real orthonormal spherical harmonics: coefficient storage, synthesis on a
//! [`SphericalGrid`], quadrature analysis and spectral derivatives.
//!
//! Convention: `Y_l0 = p̄_l0(θ)`, `Y_lm = √2 p̄_lm(θ) cos(mφ)` and
//! `Y_l,-m = √2 p̄_lm(θ) sin(mφ)` for `m > 0`, with `p̄_lm` the associated
//! Legendre functions normalized so that every `Y_lm` has unit L² norm on
//! the unit sphere. No Condon–Shortley phase, so `x₁ = √(4π/3) Y_11`.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;

use crate::error::{PmcError, Result};
use crate::grid::SphericalGrid;

/// Flat index of `(l, m)` with `-l ≤ m ≤ l`.
#[inline]
pub fn coeff_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Number of coefficients per component up to degree `degree`.
#[inline]
pub fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Inverse of [`coeff_index`].
pub fn degree_order(index: usize) -> (usize, i64) {
    let l = (index as f64).sqrt() as usize;
    let l = if (l + 1) * (l + 1) <= index { l + 1 } else { l };
    (l, index as i64 - (l * l + l) as i64)
}

#[inline]
fn tri(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Band-limited field with one or more components.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicField {
    components: usize,
    degree: usize,
    coeffs: Vec<f64>,
}

impl HarmonicField {
    pub fn zeros(components: usize, degree: usize) -> Self {
        HarmonicField {
            components,
            degree,
            coeffs: vec![0.0; components * coeff_count(degree)],
        }
    }

    pub fn from_coeffs(components: usize, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if components == 0 {
            return Err(PmcError::Config(
                "a field needs at least one component".into(),
            ));
        }
        if coeffs.len() != components * coeff_count(degree) {
            return Err(PmcError::Config(format!(
                "expected {} coefficients for {} component(s) at degree {}, got {}",
                components * coeff_count(degree),
                components,
                degree,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(PmcError::Data("non-finite harmonic coefficient".into()));
        }
        Ok(HarmonicField {
            components,
            degree,
            coeffs,
        })
    }

    /// Scalar constant field.
    pub fn constant(value: f64, degree: usize) -> Self {
        let mut f = Self::zeros(1, degree);
        f.coeffs[0] = value * (4.0 * PI).sqrt();
        f
    }

    /// The identity embedding `x ↦ x` of the unit sphere, as a 3-component field.
    pub fn round_sphere(radius: f64, degree: usize) -> Self {
        let mut f = Self::zeros(3, degree.max(1));
        let s = radius * (4.0 * PI / 3.0).sqrt();
        f.set(0, 1, 1, s);
        f.set(1, 1, -1, s);
        f.set(2, 1, 0, s);
        f
    }

    /// Coordinate function `x_axis` on the unit sphere (axis 0, 1 or 2).
    pub fn coordinate(axis: usize, degree: usize) -> Self {
        let mut f = Self::zeros(1, degree.max(1));
        let m = [1, -1, 0][axis];
        f.set(0, 1, m, (4.0 * PI / 3.0).sqrt());
        f
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = coeff_count(self.degree);
        &self.coeffs[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = coeff_count(self.degree);
        &mut self.coeffs[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, l: usize, m: i64) -> f64 {
        if l > self.degree {
            return 0.0;
        }
        self.component(c)[coeff_index(l, m)]
    }

    pub fn set(&mut self, c: usize, l: usize, m: i64, value: f64) {
        let i = coeff_index(l, m);
        self.component_mut(c)[i] = value;
    }

    /// Zero-pads or truncates to a new degree.
    pub fn with_degree(&self, degree: usize) -> Self {
        let mut out = Self::zeros(self.components, degree);
        let n = coeff_count(self.degree.min(degree));
        for c in 0..self.components {
            out.component_mut(c)[..n].copy_from_slice(&self.component(c)[..n]);
        }
        out
    }

    /// Splits out one component as a scalar field.
    pub fn scalar(&self, c: usize) -> Self {
        HarmonicField {
            components: 1,
            degree: self.degree,
            coeffs: self.component(c).to_vec(),
        }
    }

    pub fn stack(parts: &[HarmonicField]) -> Result<Self> {
        let degree = parts
            .first()
            .ok_or_else(|| PmcError::Config("nothing to stack".into()))?
            .degree;
        if parts.iter().any(|p| p.degree != degree) {
            return Err(PmcError::Config(
                "stacked fields must share a degree".into(),
            ));
        }
        let coeffs = parts
            .iter()
            .flat_map(|p| p.coeffs.iter().copied())
            .collect();
        let components = parts.iter().map(|p| p.components).sum();
        Ok(HarmonicField {
            components,
            degree,
            coeffs,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    /// `self + s * other`, both at the same shape.
    pub fn axpy(&self, s: f64, other: &HarmonicField) -> Result<Self> {
        if self.components != other.components || self.degree != other.degree {
            return Err(PmcError::Config("field shapes differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
        Ok(out)
    }

    /// L² norm over the unit sphere, summed over components.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Norm of the coefficients strictly above degree `l`.
    pub fn tail_norm(&self, l: usize) -> f64 {
        let start = coeff_count(l);
        (0..self.components)
            .flat_map(|c| self.component(c)[start.min(coeff_count(self.degree))..].iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Normalized associated Legendre functions `p̄_lm(θ)` and `dp̄_lm/dθ` for
/// `0 ≤ m ≤ l ≤ lmax`, stored triangularly.
pub fn legendre(lmax: usize, theta: f64) -> (Vec<f64>, Vec<f64>) {
    let n = tri(lmax + 1, 0);
    let mut p = vec![0.0; n];
    let (s, c) = theta.sin_cos();
    p[0] = 1.0 / (4.0 * PI).sqrt();
    for m in 1..=lmax {
        let mf = m as f64;
        p[tri(m, m)] = p[tri(m - 1, m - 1)] * ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
    }
    for m in 0..lmax {
        let mf = m as f64;
        p[tri(m + 1, m)] = (2.0 * mf + 3.0).sqrt() * c * p[tri(m, m)];
        for l in m + 2..=lmax {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            p[tri(l, m)] = a * (c * p[tri(l - 1, m)] - b * p[tri(l - 2, m)]);
        }
    }
    let mut dp = vec![0.0; n];
    for l in 0..=lmax {
        let lf = l as f64;
        if l >= 1 {
            dp[tri(l, 0)] = -(lf * (lf + 1.0)).sqrt() * p[tri(l, 1)];
        }
        for m in 1..=l {
            let mf = m as f64;
            let lower = ((lf + mf) * (lf - mf + 1.0)).sqrt() * p[tri(l, m - 1)];
            let upper = if m < l {
                ((lf + mf + 1.0) * (lf - mf)).sqrt() * p[tri(l, m + 1)]
            } else {
                0.0
            };
            dp[tri(l, m)] = 0.5 * (lower - upper);
        }
    }
    (p, dp)
}

/// Which spatial derivative a synthesis evaluates. The `Hat` variants divide
/// every `∂φ` by `sin θ`, i.e. they differentiate along the unit longitude
/// direction and stay bounded near the poles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Value,
    Theta,
    PhiHat,
    ThetaTheta,
    ThetaPhiHat,
    PhiPhiHat,
    Laplacian,
}

impl Derivative {
    fn table_and_phase(self) -> (usize, usize) {
        match self {
            Derivative::Value | Derivative::Laplacian => (0, 0),
            Derivative::Theta => (1, 0),
            Derivative::PhiHat => (2, 1),
            Derivative::ThetaTheta => (5, 0),
            Derivative::ThetaPhiHat => (3, 1),
            Derivative::PhiPhiHat => (4, 2),
        }
    }
}

/// Value of the real trigonometric factor of `Y_lm` (including the √2 for
/// `m ≠ 0`) differentiated `order` times in φ.
#[inline]
pub fn phase(m: i64, order: usize, cos_mphi: f64, sin_mphi: f64) -> f64 {
    if m == 0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let mu = m.unsigned_abs() as f64;
    let v = match (m > 0, order) {
        (true, 0) => cos_mphi,
        (true, 1) => -mu * sin_mphi,
        (true, _) => -mu * mu * cos_mphi,
        (false, 0) => sin_mphi,
        (false, 1) => mu * cos_mphi,
        (false, _) => -mu * mu * sin_mphi,
    };
    SQRT_2 * v
}

/// Precomputed Legendre and trigonometric tables for one grid. Immutable and
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct SphericalTransform {
    grid: SphericalGrid,
    /// Per ring: `[p, dp, p/s, dp/s, p/s², d²p]`, each triangular.
    tables: Vec<[Vec<f64>; 6]>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl SphericalTransform {
    pub fn new(grid: &SphericalGrid) -> Self {
        let lmax = grid.degree();
        let tables = grid
            .thetas()
            .iter()
            .map(|&theta| {
                let (p, dp) = legendre(lmax, theta);
                let (s, c) = theta.sin_cos();
                let mut p_s = vec![0.0; p.len()];
                let mut dp_s = vec![0.0; p.len()];
                let mut p_s2 = vec![0.0; p.len()];
                let mut d2p = vec![0.0; p.len()];
                for l in 0..=lmax {
                    for m in 0..=l {
                        let i = tri(l, m);
                        p_s[i] = p[i] / s;
                        dp_s[i] = dp[i] / s;
                        p_s2[i] = p[i] / (s * s);
                        let lf = l as f64;
                        let mf = m as f64;
                        d2p[i] = -c / s * dp[i] - (lf * (lf + 1.0) - mf * mf / (s * s)) * p[i];
                    }
                }
                [p, dp, p_s, dp_s, p_s2, d2p]
            })
            .collect();
        let n_lon = grid.n_lon();
        let mut cos = vec![0.0; (lmax + 1) * n_lon];
        let mut sin = vec![0.0; (lmax + 1) * n_lon];
        for m in 0..=lmax {
            for (j, &phi) in grid.phis().iter().enumerate() {
                let (s, c) = (m as f64 * phi).sin_cos();
                cos[m * n_lon + j] = c;
                sin[m * n_lon + j] = s;
            }
        }
        SphericalTransform {
            grid: grid.clone(),
            tables,
            cos,
            sin,
        }
    }

    pub fn grid(&self) -> &SphericalGrid {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.grid.degree()
    }

    /// Value of a single basis function (or one of its derivatives) at a node.
    #[inline]
    pub fn basis(&self, kind: Derivative, l: usize, m: i64, node: usize) -> f64 {
        let n_lon = self.grid.n_lon();
        let ring = node / n_lon;
        let j = node % n_lon;
        let (t, order) = kind.table_and_phase();
        let mu = m.unsigned_abs() as usize;
        let leg = self.tables[ring][t][tri(l, mu)];
        let k = mu * n_lon + j;
        let v = leg * phase(m, order, self.cos[k], self.sin[k]);
        if kind == Derivative::Laplacian {
            -((l * (l + 1)) as f64) * v
        } else {
            v
        }
    }

    /// Synthesizes one component of `field` (or a derivative) at every node.
    pub fn synthesize_component(
        &self,
        field: &HarmonicField,
        component: usize,
        kind: Derivative,
    ) -> Result<Vec<f64>> {
        let lmax = self.degree();
        if field.degree() > lmax {
            return Err(PmcError::Config(format!(
                "field degree {} exceeds grid degree {}",
                field.degree(),
                lmax
            )));
        }
        if component >= field.components() {
            return Err(PmcError::Config(format!(
                "component {component} out of range"
            )));
        }
        let coeffs = field.component(component);
        let fdeg = field.degree();
        let (t, order) = kind.table_and_phase();
        let n_lon = self.grid.n_lon();
        let mut out = vec![0.0; self.grid.len()];
        out.par_chunks_mut(n_lon)
            .zip(self.tables.par_iter())
            .for_each(|(ring_out, tables)| {
                let leg = &tables[t];
                for m in 0..=fdeg {
                    let (mut a, mut b) = (0.0, 0.0);
                    for l in m..=fdeg {
                        let lap = if kind == Derivative::Laplacian {
                            -((l * (l + 1)) as f64)
                        } else {
                            1.0
                        };
                        let w = leg[tri(l, m)] * lap;
                        a += w * coeffs[coeff_index(l, m as i64)];
                        if m > 0 {
                            b += w * coeffs[coeff_index(l, -(m as i64))];
                        }
                    }
                    if a == 0.0 && b == 0.0 {
                        continue;
                    }
                    let mi = m as i64;
                    for (j, v) in ring_out.iter_mut().enumerate() {
                        let k = m * n_lon + j;
                        let (c, s) = (self.cos[k], self.sin[k]);
                        *v += a * phase(mi, order, c, s);
                        if m > 0 {
                            *v += b * phase(-mi, order, c, s);
                        }
                    }
                }
            });
        Ok(out)
    }

    /// Quadrature projection of node values onto harmonics of degree ≤ L.
    pub fn analyze_values(&self, values: &[f64]) -> Result<HarmonicField> {
        if values.len() != self.grid.len() {
            return Err(PmcError::Data(format!(
                "expected {} node values, got {}",
                self.grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PmcError::Data("non-finite node value".into()));
        }
        let lmax = self.degree();
        let n_lon = self.grid.n_lon();
        let dphi = 2.0 * PI / n_lon as f64;
        let mut field = HarmonicField::zeros(1, lmax);
        let coeffs = field.component_mut(0);
        for (ring, ring_vals) in values.chunks(n_lon).enumerate() {
            let w = self.grid.ring_weights()[ring] * dphi;
            let leg = &self.tables[ring][0];
            for m in 0..=lmax {
                let (mut a, mut b) = (0.0, 0.0);
                for (j, v) in ring_vals.iter().enumerate() {
                    a += v * self.cos[m * n_lon + j];
                    b += v * self.sin[m * n_lon + j];
                }
                let scale = if m == 0 { w } else { w * SQRT_2 };
                for l in m..=lmax {
                    let pl = leg[tri(l, m)] * scale;
                    coeffs[coeff_index(l, m as i64)] += pl * a;
                    if m > 0 {
                        coeffs[coeff_index(l, -(m as i64))] += pl * b;
                    }
                }
            }
        }
        Ok(field)
    }

    pub fn synthesize(&self, field: &HarmonicField) -> Result<Vec<Vec<f64>>> {
        (0..field.components())
            .map(|c| self.synthesize_component(field, c, Derivative::Value))
            .collect()
    }

    pub fn analyze(&self, components: &[Vec<f64>]) -> Result<HarmonicField> {
        let parts = components
            .iter()
            .map(|v| self.analyze_values(v))
            .collect::<Result<Vec<_>>>()?;
        HarmonicField::stack(&parts)
    }
}

/// Node values of every component of `field`. Returns one vector per component.
pub fn synthesize(field: &HarmonicField, grid: &SphericalGrid) -> Result<Vec<Vec<f64>>> {
    SphericalTransform::new(grid).synthesize(field)
}

/// Scalar analysis of node values on `grid`.
pub fn analyze(values: &[f64], grid: &SphericalGrid) -> Result<HarmonicField> {
    SphericalTransform::new(grid).analyze_values(values)
}

/// A field and its first derivatives at an arbitrary point; `d_phi` is the
/// plain longitude derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointValue {
    pub value: f64,
    pub d_theta: f64,
    pub d_phi: f64,
}

/// Evaluates one component at `(θ, φ)`; valid at the poles too.
pub fn evaluate_at(field: &HarmonicField, component: usize, theta: f64, phi: f64) -> PointValue {
    let lmax = field.degree();
    let (p, dp) = legendre(lmax, theta);
    let coeffs = field.component(component);
    let mut out = PointValue {
        value: 0.0,
        d_theta: 0.0,
        d_phi: 0.0,
    };
    for m in 0..=lmax {
        let (s, c) = (m as f64 * phi).sin_cos();
        for l in m..=lmax {
            let i = tri(l, m);
            for mm in if m == 0 {
                vec![0i64]
            } else {
                vec![m as i64, -(m as i64)]
            } {
                let coef = coeffs[coeff_index(l, mm)];
                if coef == 0.0 {
                    continue;
                }
                out.value += coef * p[i] * phase(mm, 0, c, s);
                out.d_theta += coef * dp[i] * phase(mm, 0, c, s);
                out.d_phi += coef * p[i] * phase(mm, 1, c, s);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, components: usize, degree: usize) -> HarmonicField {
        let n = components * coeff_count(degree);
        HarmonicField::from_coeffs(
            components,
            degree,
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn index_round_trip() {
        for i in 0..coeff_count(30) {
            let (l, m) = degree_order(i);
            assert_eq!(coeff_index(l, m), i);
            assert!(m.unsigned_abs() as usize <= l);
        }
    }

    #[test]
    fn constant_field_synthesizes_to_c00_over_sqrt_4pi() {
        let grid = SphericalGrid::new(8).unwrap();
        let mut f = HarmonicField::zeros(1, 8);
        f.set(0, 0, 0, 2.5);
        let v = synthesize(&f, &grid).unwrap();
        for x in &v[0] {
            assert!((x - 2.5 / (4.0 * PI).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn x3_mode_synthesizes_to_cos_theta() {
        let grid = SphericalGrid::new(10).unwrap();
        let f = HarmonicField::coordinate(2, 10);
        let v = synthesize(&f, &grid).unwrap();
        for (k, x) in v[0].iter().enumerate() {
            assert!((x - grid.angles(k).0.cos()).abs() < 1e-13);
        }
        let e = HarmonicField::round_sphere(1.0, 10);
        let v = synthesize(&e, &grid).unwrap();
        for k in 0..grid.len() {
            let p = grid.point(k);
            for c in 0..3 {
                assert!((v[c][k] - p[c]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn analysis_of_simple_values() {
        let grid = SphericalGrid::new(12).unwrap();
        let t = SphericalTransform::new(&grid);
        let ones = vec![1.0; grid.len()];
        let f = t.analyze_values(&ones).unwrap();
        assert!((f.get(0, 0, 0) - (4.0 * PI).sqrt()).abs() < 1e-12);
        assert!(f.tail_norm(0) < 1e-12);
        let cos: Vec<f64> = (0..grid.len()).map(|k| grid.angles(k).0.cos()).collect();
        let f = t.analyze_values(&cos).unwrap();
        let mut g = f.clone();
        g.set(0, 1, 0, 0.0);
        assert!((f.get(0, 1, 0) - (4.0 * PI / 3.0).sqrt()).abs() < 1e-12);
        assert!(g.l2_norm() < 1e-12);
    }

    #[test]
    fn non_finite_values_rejected() {
        let grid = SphericalGrid::new(4).unwrap();
        let mut v = vec![0.0; grid.len()];
        v[3] = f64::NAN;
        assert!(matches!(analyze(&v, &grid), Err(PmcError::Data(_))));
    }

    #[test]
    fn degree_mismatch_is_config_error() {
        let grid = SphericalGrid::new(4).unwrap();
        let f = HarmonicField::zeros(1, 6);
        assert!(matches!(synthesize(&f, &grid), Err(PmcError::Config(_))));
    }

    #[test]
    fn round_trip_100_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = SphericalGrid::new(16).unwrap();
        let t = SphericalTransform::new(&grid);
        for _ in 0..100 {
            let f = random_field(&mut rng, 1, 16);
            let back = t.analyze(&t.synthesize(&f).unwrap()).unwrap();
            let err = back.axpy(-1.0, &f).unwrap().l2_norm();
            assert!(err < 1e-10, "round-trip error {err}");
        }
    }

    #[test]
    fn quadrature_reproduces_gram_matrix() {
        // Products of degree ≤ L harmonics (total ≤ 2L) integrate exactly.
        let l = 6;
        let grid = SphericalGrid::new(l).unwrap();
        let t = SphericalTransform::new(&grid);
        let n = coeff_count(l);
        let basis: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut f = HarmonicField::zeros(1, l);
                f.coeffs_mut()[i] = 1.0;
                t.synthesize_component(&f, 0, Derivative::Value).unwrap()
            })
            .collect();
        for a in 0..n {
            for b in 0..n {
                let g: f64 = (0..grid.len())
                    .map(|k| basis[a][k] * basis[b][k] * grid.weights()[k])
                    .sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-10, "gram({a},{b}) = {g}");
            }
        }
    }

    #[test]
    fn aliasing_bounded_by_tail_norm() {
        // Oracle: project on a dense grid (degree 2L), compare with the
        // aliased projection from the degree-L grid.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = 10;
        let f = random_field(&mut rng, 1, l + 3);
        let coarse = SphericalGrid::new(l).unwrap();
        let dense = SphericalGrid::new(2 * l).unwrap();
        let dense_vals = synthesize(&f, &dense).unwrap();
        let exact = analyze(&dense_vals[0], &dense).unwrap().with_degree(l);
        let vals: Vec<f64> = (0..coarse.len())
            .map(|k| {
                let (t, p) = coarse.angles(k);
                evaluate_at(&f, 0, t, p).value
            })
            .collect();
        let aliased = analyze(&vals, &coarse).unwrap();
        let err = aliased.axpy(-1.0, &exact).unwrap().l2_norm();
        let tail = f.tail_norm(l);
        assert!(tail > 0.1);
        assert!(err <= tail * 1.0000001, "aliasing {err} vs tail {tail}");
    }

    #[test]
    fn spectral_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = SphericalGrid::new(12).unwrap();
        let t = SphericalTransform::new(&grid);
        let h = 1e-5;
        for _ in 0..20 {
            let f = random_field(&mut rng, 1, 12).scaled(0.3);
            let dt = t.synthesize_component(&f, 0, Derivative::Theta).unwrap();
            let dph = t.synthesize_component(&f, 0, Derivative::PhiHat).unwrap();
            for k in (0..grid.len()).step_by(7) {
                let (th, ph) = grid.angles(k);
                let fd_t = (evaluate_at(&f, 0, th + h, ph).value
                    - evaluate_at(&f, 0, th - h, ph).value)
                    / (2.0 * h);
                let fd_p = (evaluate_at(&f, 0, th, ph + h).value
                    - evaluate_at(&f, 0, th, ph - h).value)
                    / (2.0 * h);
                assert!((fd_t - dt[k]).abs() < 1e-6);
                assert!((fd_p - dph[k] * th.sin()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn second_derivatives_and_laplacian_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = SphericalGrid::new(10).unwrap();
        let t = SphericalTransform::new(&grid);
        let f = random_field(&mut rng, 1, 10);
        let tt = t
            .synthesize_component(&f, 0, Derivative::ThetaTheta)
            .unwrap();
        let d = t.synthesize_component(&f, 0, Derivative::Theta).unwrap();
        let pp = t
            .synthesize_component(&f, 0, Derivative::PhiPhiHat)
            .unwrap();
        let lap = t
            .synthesize_component(&f, 0, Derivative::Laplacian)
            .unwrap();
        for k in 0..grid.len() {
            let th = grid.angles(k).0;
            let lb = tt[k] + th.cos() / th.sin() * d[k] + pp[k];
            assert!((lb - lap[k]).abs() < 1e-9 * (1.0 + lap[k].abs()));
        }
        // Mixed derivative against finite differences of ∂θ in φ.
        let tp = t
            .synthesize_component(&f, 0, Derivative::ThetaPhiHat)
            .unwrap();
        let h = 1e-5;
        for k in (0..grid.len()).step_by(5) {
            let (th, ph) = grid.angles(k);
            let fd = (evaluate_at(&f, 0, th, ph + h).d_theta
                - evaluate_at(&f, 0, th, ph - h).d_theta)
                / (2.0 * h);
            assert!((fd / th.sin() - tp[k]).abs() < 1e-5 * (1.0 + tp[k].abs()));
        }
    }

    #[test]
    fn point_evaluation_matches_grid_synthesis() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = SphericalGrid::new(8).unwrap();
        let f = random_field(&mut rng, 1, 8);
        let v = synthesize(&f, &grid).unwrap();
        for k in 0..grid.len() {
            let (t, p) = grid.angles(k);
            assert!((evaluate_at(&f, 0, t, p).value - v[0][k]).abs() < 1e-12);
        }
    }
}
