//! Collocation grids on the sphere: Gauss–Legendre rings in colatitude times
//! uniform longitudes.

use std::f64::consts::PI;

use crate::error::{PmcError, Result};

/// Gauss–Legendre nodes and weights on `[a, b]`, nodes ascending.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x descends with i; mirror into ascending order.
        nodes[i] = mid - half * x;
        nodes[n - 1 - i] = mid + half * x;
        weights[i] = half * w;
        weights[n - 1 - i] = half * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor-product grid of degree `L`: `L+1` colatitude rings at the
/// Gauss–Legendre nodes in `cos θ` and `2L+2` equally spaced longitudes.
///
/// Nodes are numbered ring-major: `node = ring * n_lon + j`.
#[derive(Debug, Clone)]
pub struct SphericalGrid {
    degree: usize,
    theta: Vec<f64>,
    phi: Vec<f64>,
    ring_weights: Vec<f64>,
    weights: Vec<f64>,
}

impl SphericalGrid {
    pub fn new(degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(PmcError::Config("grid degree must be at least 1".into()));
        }
        let n_lat = degree + 1;
        let n_lon = 2 * degree + 2;
        // Rings ordered north to south: cos θ descending.
        let (x, w) = gauss_legendre(n_lat, -1.0, 1.0);
        let theta: Vec<f64> = x.iter().rev().map(|c| c.acos()).collect();
        let ring_weights: Vec<f64> = w.iter().rev().copied().collect();
        let dphi = 2.0 * PI / n_lon as f64;
        let phi: Vec<f64> = (0..n_lon).map(|j| j as f64 * dphi).collect();
        let mut weights = Vec::with_capacity(n_lat * n_lon);
        for wi in &ring_weights {
            for _ in 0..n_lon {
                weights.push(wi * dphi);
            }
        }
        Ok(SphericalGrid {
            degree,
            theta,
            phi,
            ring_weights,
            weights,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_lat(&self) -> usize {
        self.theta.len()
    }

    pub fn n_lon(&self) -> usize {
        self.phi.len()
    }

    pub fn len(&self) -> usize {
        self.theta.len() * self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    pub fn phis(&self) -> &[f64] {
        &self.phi
    }

    pub fn ring_weights(&self) -> &[f64] {
        &self.ring_weights
    }

    /// Quadrature weight per node, in steradians.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ring_of(&self, node: usize) -> usize {
        node / self.phi.len()
    }

    pub fn angles(&self, node: usize) -> (f64, f64) {
        let n_lon = self.phi.len();
        (self.theta[node / n_lon], self.phi[node % n_lon])
    }

    /// Unit vector of a node on S².
    pub fn point(&self, node: usize) -> [f64; 3] {
        let (t, p) = self.angles(node);
        sphere_point(t, p)
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }
}

pub fn sphere_point(theta: f64, phi: f64) -> [f64; 3] {
    let s = theta.sin();
    [s * phi.cos(), s * phi.sin(), theta.cos()]
}
