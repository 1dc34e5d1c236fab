//! Detection of branch points `F_z = (z − q)^k G`, `G·G = 0`.
//!
//! Detection works on any structured set of chart samples: spherical grids
//! (each hemisphere in its own stereographic chart) or planar disk grids.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::charts::{Chart, ChartPoint};
use crate::error::Result;
use crate::geometry::{ImmersionField, CONFORMAL_TOL};
use crate::harmonics::SphericalTransform;

pub const MAX_ORDER: usize = 6;
pub const MIN_RATIO: f64 = 1e-4;
pub const FIT_TOL: f64 = 0.1;
pub const ISOTROPY_TOL: f64 = 1e-6;
pub const LEADING_MIN: f64 = 1e-6;
const FIT_SAMPLES: usize = 48;
const TIE_TOL: f64 = 1e-9;
const CORRECTION_TERMS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub location: ChartPoint,
    /// Vanishing order `k` of `F_z`.
    pub order: usize,
    pub leading: [Complex64; 3],
    pub fit_residual: f64,
    /// `|G·G| / |G|²`.
    pub isotropy: f64,
}

impl BranchPoint {
    /// Local sheet count `k + 1`.
    pub fn multiplicity(&self) -> usize {
        self.order + 1
    }

    pub fn leading_norm(&self) -> f64 {
        norm3(&self.leading)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SingularPoint {
    Branch(BranchPoint),
    /// No order in `1..=6` fits, or the leading coefficient is not isotropic.
    Unresolved {
        location: ChartPoint,
        local_norm: f64,
        fit_residual: f64,
    },
}

impl SingularPoint {
    pub fn location(&self) -> ChartPoint {
        match self {
            SingularPoint::Branch(b) => b.location,
            SingularPoint::Unresolved { location, .. } => *location,
        }
    }

    pub fn as_branch(&self) -> Option<&BranchPoint> {
        match self {
            SingularPoint::Branch(b) => Some(b),
            SingularPoint::Unresolved { .. } => None,
        }
    }
}

/// JSON form of a [`SingularPoint`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BranchReport {
    pub kind: String,
    pub chart: String,
    pub location: [f64; 2],
    pub order: Option<usize>,
    pub leading: Option<[[f64; 2]; 3]>,
    pub isotropy: Option<f64>,
    pub fit_residual: f64,
}

impl From<SingularPoint> for BranchReport {
    fn from(p: SingularPoint) -> Self {
        let loc = p.location();
        match p {
            SingularPoint::Branch(b) => BranchReport {
                kind: "branch point".into(),
                chart: loc.chart.name().into(),
                location: [loc.z.re, loc.z.im],
                order: Some(b.order),
                leading: Some(b.leading.map(|g| [g.re, g.im])),
                isotropy: Some(b.isotropy),
                fit_residual: b.fit_residual,
            },
            SingularPoint::Unresolved { fit_residual, .. } => BranchReport {
                kind: "unresolved singular point".into(),
                chart: loc.chart.name().into(),
                location: [loc.z.re, loc.z.im],
                order: None,
                leading: None,
                isotropy: None,
                fit_residual,
            },
        }
    }
}

/// Chart samples of `F_z` with grid adjacency.
#[derive(Debug, Clone)]
pub struct ChartSamples {
    pub chart: Chart,
    pub z: Vec<Complex64>,
    pub fz: Vec<[Complex64; 3]>,
    pub neighbors: Vec<Vec<usize>>,
    /// Samples allowed to seed a detection (owned by this chart).
    pub owned: Vec<bool>,
}

fn norm3(v: &[Complex64; 3]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn dot3(a: &[Complex64; 3], b: &[Complex64; 3]) -> Complex64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return 0.0;
    }
    v[v.len() / 2]
}

/// Runs detection on one sample set.
pub fn detect_in_samples(samples: &ChartSamples) -> Vec<SingularPoint> {
    let mags: Vec<f64> = samples.fz.iter().map(norm3).collect();
    let threshold = MIN_RATIO * median(mags.clone());
    let candidates: Vec<usize> = (0..mags.len())
        .filter(|&i| {
            samples.owned[i]
                && mags[i] < threshold
                && samples.neighbors[i]
                    .iter()
                    .all(|&j| mags[i] <= mags[j] * (1.0 + TIE_TOL))
        })
        .collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    let spacing = |i: usize| {
        samples.neighbors[i]
            .iter()
            .map(|&j| (samples.z[j] - samples.z[i]).norm())
            .fold(0.0, f64::max)
    };
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &c in &candidates {
        let radius = 3.0 * spacing(c);
        match clusters.iter_mut().find(|cl| {
            cl.iter()
                .any(|&m| (samples.z[m] - samples.z[c]).norm() <= radius)
        }) {
            Some(cl) => cl.push(c),
            None => clusters.push(vec![c]),
        }
    }
    clusters
        .iter()
        .map(|cl| {
            let q = cl.iter().map(|&i| samples.z[i]).sum::<Complex64>() / cl.len() as f64;
            let h = cl.iter().map(|&i| spacing(i)).fold(0.0, f64::max);
            classify(samples, q, h)
        })
        .collect()
}

struct Fit {
    residual: f64,
    leading: [Complex64; 3],
}

/// Least-squares fit of `(z − q)^k (G₀ + G₁(z−q) + G₂(z−q)²)`.
fn fit_order(samples: &ChartSamples, nearest: &[usize], q: Complex64, k: usize) -> Option<Fit> {
    let scale = nearest
        .iter()
        .map(|&i| (samples.z[i] - q).norm())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let cols = 1 + CORRECTION_TERMS;
    let design = DMatrix::from_fn(nearest.len(), cols, |r, c| {
        let w = (samples.z[nearest[r]] - q) / scale;
        w.powu((k + c) as u32)
    });
    let svd = design.clone().svd(true, true);
    let mut leading = [Complex64::new(0.0, 0.0); 3];
    let (mut res, mut total) = (0.0, 0.0);
    for (d, g) in leading.iter_mut().enumerate() {
        let rhs = DVector::from_iterator(nearest.len(), nearest.iter().map(|&i| samples.fz[i][d]));
        let sol = svd.solve(&rhs, 1e-14).ok()?;
        res += (&design * &sol - &rhs).norm_squared();
        total += rhs.norm_squared();
        *g = sol[0] / scale.powi(k as i32);
    }
    if total == 0.0 {
        return None;
    }
    Some(Fit {
        residual: (res / total).sqrt(),
        leading,
    })
}

fn nearest_samples(samples: &ChartSamples, q: Complex64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..samples.z.len()).collect();
    idx.sort_by(|&a, &b| {
        (samples.z[a] - q)
            .norm()
            .total_cmp(&(samples.z[b] - q).norm())
    });
    idx.truncate(FIT_SAMPLES.min(samples.z.len()));
    idx
}

fn best_order(samples: &ChartSamples, q: Complex64) -> Option<(usize, Fit)> {
    let nearest = nearest_samples(samples, q);
    (1..=MAX_ORDER)
        .rev()
        .filter_map(|k| fit_order(samples, &nearest, q, k).map(|f| (k, f)))
        .find(|(_, f)| f.residual < FIT_TOL)
}

/// Pattern search on `q` minimizing the order-`k` fit residual.
fn refine_location(
    samples: &ChartSamples,
    q0: Complex64,
    k: usize,
    spacing: f64,
) -> (Complex64, f64) {
    let nearest = nearest_samples(samples, q0);
    let cost =
        |q: Complex64| fit_order(samples, &nearest, q, k).map_or(f64::INFINITY, |f| f.residual);
    let mut q = q0;
    let mut best = cost(q);
    let mut step = 0.5 * spacing;
    let dirs = [
        Complex64::new(1.0, 0.0),
        Complex64::new(-1.0, 0.0),
        Complex64::new(0.0, 1.0),
        Complex64::new(0.0, -1.0),
    ];
    for _ in 0..200 {
        if step < 1e-14 * (1.0 + q.norm()) || best < 1e-14 {
            break;
        }
        let mut improved = false;
        for d in dirs {
            let c = cost(q + step * d);
            if c < best {
                best = c;
                q += step * d;
                improved = true;
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (q, best)
}

fn classify(samples: &ChartSamples, q0: Complex64, spacing: f64) -> SingularPoint {
    let local_norm = {
        let nearest = nearest_samples(samples, q0);
        (nearest
            .iter()
            .map(|&i| norm3(&samples.fz[i]).powi(2))
            .sum::<f64>()
            / nearest.len() as f64)
            .sqrt()
    };
    let unresolved = |q: Complex64, r: f64| SingularPoint::Unresolved {
        location: ChartPoint {
            chart: samples.chart,
            z: q,
        },
        local_norm,
        fit_residual: r,
    };
    let Some((k, _)) = best_order(samples, q0) else {
        let nearest = nearest_samples(samples, q0);
        let r = fit_order(samples, &nearest, q0, 1).map_or(f64::INFINITY, |f| f.residual);
        return unresolved(q0, r);
    };
    // Alternate order selection and location refinement until the order settles.
    let mut k = k;
    let mut q = q0;
    let mut best = f64::INFINITY;
    for _ in 0..4 {
        (q, best) = refine_location(samples, q, k, spacing);
        match best_order(samples, q) {
            Some((k2, _)) if k2 != k => k = k2,
            _ => break,
        }
    }
    let Some(fit) = fit_order(samples, &nearest_samples(samples, q), q, k) else {
        return unresolved(q, best);
    };
    let g = norm3(&fit.leading);
    let isotropy = if g > 0.0 {
        dot3(&fit.leading, &fit.leading).norm() / (g * g)
    } else {
        f64::INFINITY
    };
    if fit.residual >= FIT_TOL || g <= LEADING_MIN || isotropy >= ISOTROPY_TOL {
        return unresolved(q, fit.residual);
    }
    SingularPoint::Branch(BranchPoint {
        location: ChartPoint {
            chart: samples.chart,
            z: q,
        },
        order: k,
        leading: fit.leading,
        fit_residual: fit.residual,
        isotropy,
    })
}

/// Grid samples of `F_z` in `chart`, unmasked nodes only.
pub fn sphere_samples(
    immersion: &ImmersionField,
    transform: &SphericalTransform,
    chart: Chart,
) -> Result<ChartSamples> {
    let grid = transform.grid();
    let gradient = immersion.chart_gradient(transform, chart)?;
    let (n_lat, n_lon) = (grid.n_lat(), grid.n_lon());
    let mut local = vec![usize::MAX; grid.len()];
    let mut nodes = Vec::new();
    for k in 0..grid.len() {
        if !chart.is_masked(grid.angles(k).0) {
            local[k] = nodes.len();
            nodes.push(k);
        }
    }
    let mut z = Vec::with_capacity(nodes.len());
    let mut fz = Vec::with_capacity(nodes.len());
    let mut neighbors = Vec::with_capacity(nodes.len());
    let mut owned = Vec::with_capacity(nodes.len());
    for &k in &nodes {
        let (t, p) = grid.angles(k);
        z.push(ChartPoint::from_angles(chart, t, p).z);
        let g = gradient.at(k)?;
        fz.push([g[0], g[1], g[2]]);
        owned.push(Chart::preferred(t) == chart);
        let (ring, j) = (k / n_lon, k % n_lon);
        let mut nb = Vec::new();
        for dr in [-1i64, 0, 1] {
            let r = ring as i64 + dr;
            if r < 0 || r >= n_lat as i64 {
                continue;
            }
            for dj in [-1i64, 0, 1] {
                if dr == 0 && dj == 0 {
                    continue;
                }
                let jj = (j as i64 + dj).rem_euclid(n_lon as i64) as usize;
                let other = r as usize * n_lon + jj;
                if local[other] != usize::MAX {
                    nb.push(local[other]);
                }
            }
        }
        neighbors.push(nb);
    }
    Ok(ChartSamples {
        chart,
        z,
        fz,
        neighbors,
        owned,
    })
}

/// Locates branch points of a conformal immersion of the sphere.
pub fn detect_branch_points(
    immersion: &ImmersionField,
    transform: &SphericalTransform,
) -> Result<Vec<SingularPoint>> {
    let conf = crate::geometry::sup_norm(&crate::geometry::conformality_residual(
        immersion, transform,
    )?);
    if conf > CONFORMAL_TOL {
        return Err(crate::error::PmcError::NotConformal {
            sup_norm: conf,
            tolerance: CONFORMAL_TOL,
        });
    }
    let mut out = Vec::new();
    for chart in [Chart::North, Chart::South] {
        out.extend(detect_in_samples(&sphere_samples(
            immersion, transform, chart,
        )?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SphericalGrid;

    /// Polar sample grid around the origin with ring/angle adjacency.
    fn polar_samples(f: impl Fn(Complex64) -> [Complex64; 3]) -> ChartSamples {
        let (nr, na) = (24, 48);
        // Center node first, then rings.
        let mut z = vec![Complex64::new(0.0, 0.0)];
        let mut neighbors = vec![(1..=na).collect::<Vec<_>>()];
        for r in 0..nr {
            for a in 0..na {
                let rad = (r as f64 + 1.0) / nr as f64;
                let ang = 2.0 * std::f64::consts::PI * (a as f64 + 0.25) / na as f64;
                z.push(Complex64::from_polar(rad, ang));
                let mut nb = Vec::new();
                for dr in [-1i64, 0, 1] {
                    let rr = r as i64 + dr;
                    if rr < 0 || rr >= nr as i64 {
                        continue;
                    }
                    for da in [-1i64, 0, 1] {
                        if dr == 0 && da == 0 {
                            continue;
                        }
                        nb.push(
                            1 + rr as usize * na + (a as i64 + da).rem_euclid(na as i64) as usize,
                        );
                    }
                }
                if r == 0 {
                    nb.push(0);
                }
                neighbors.push(nb);
            }
        }
        let fz = z.iter().map(|&w| f(w)).collect();
        let owned = vec![true; z.len()];
        ChartSamples {
            chart: Chart::North,
            z,
            fz,
            neighbors,
            owned,
        }
    }

    fn isotropic() -> [Complex64; 3] {
        [
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.0, 0.5),
            Complex64::new(0.0, 0.0),
        ]
    }

    #[test]
    fn round_sphere_has_none() {
        let t = SphericalTransform::new(&SphericalGrid::new(16).unwrap());
        let found = detect_branch_points(&ImmersionField::round(1.0, 16), &t).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn recovers_planted_orders() {
        for k in 1..=4 {
            let g = isotropic();
            // One planted zero at the center, one on a ring node.
            for q in [
                Complex64::new(0.0, 0.0),
                Complex64::from_polar(0.25, 2.0 * std::f64::consts::PI * 3.25 / 48.0),
            ] {
                let s = polar_samples(|z| {
                    let w = (z - q).powu(k as u32);
                    [g[0] * w, g[1] * w * (1.0 + 0.3 * (z - q)), g[2] * w]
                });
                let found = detect_in_samples(&s);
                assert_eq!(found.len(), 1, "k={k}: {found:?}");
                let b = found[0].as_branch().expect("branch");
                assert_eq!(b.order, k);
                assert!(
                    (b.location.z - q).norm() < 1e-6,
                    "k={k} q={:?}",
                    b.location.z
                );
                assert!(b.isotropy < 1e-6);
                for d in 0..3 {
                    assert!((b.leading[d] - g[d]).norm() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn non_isotropic_zero_is_unresolved() {
        let s = polar_samples(|z| {
            let w = z;
            [w, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)]
        });
        let found = detect_in_samples(&s);
        assert_eq!(found.len(), 1);
        assert!(found[0].as_branch().is_none());
        let report = BranchReport::from(found[0].clone());
        assert_eq!(report.kind, "unresolved singular point");
    }
}
