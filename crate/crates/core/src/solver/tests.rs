use super::*;
use crate::harmonics::coeff_count;

fn transform(l: usize) -> SphericalTransform {
    SphericalTransform::new(&SphericalGrid::new(l).unwrap())
}

fn constant_values(v: f64, t: &SphericalTransform) -> Vec<f64> {
    vec![v; t.grid().len()]
}

#[test]
fn unit_sphere_residual_vanishes_after_basing() {
    let t = transform(12);
    let f = normalize_based(&HarmonicField::round_sphere(1.0, 8)).unwrap();
    let im = ImmersionField::new(f).unwrap();
    let r = residual(&im, &AffineFunction::zero(), &constant_values(2.0, &t), &t).unwrap();
    assert!(norm(&r) < 1e-12, "{}", norm(&r));
}

#[test]
fn wrong_radius_is_detected() {
    let t = transform(12);
    let im = ImmersionField::round(2.0, 8);
    let r = residual(&im, &AffineFunction::zero(), &constant_values(2.0, &t), &t).unwrap();
    let n = t.grid().len();
    let mc: f64 = (0..n)
        .flat_map(|k| r[5 * k + 2..5 * k + 5].to_vec())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    // Δ₀F + 2 F_θ×F_φ̂ = 4x for radius 2; the area scale is 4.
    assert!(mc > 0.5 * 4.0, "{mc}");
}

#[test]
fn residual_depends_on_the_sum_only() {
    let t = transform(10);
    let im = ImmersionField::from_map(&t, |p| [p[0], 1.1 * p[1], p[2]]).unwrap();
    let grid = t.grid();
    let h: Vec<f64> = grid.points().iter().map(|p| 2.0 + 0.5 * p[2]).collect();
    let (rep, ell) = canonical_representative(&h, &vec![1.0; grid.len()], &t).unwrap();
    let r1 = residual(&im, &ell, &h, &t).unwrap();
    let r2 = residual(&im, &AffineFunction::zero(), &rep, &t).unwrap();
    for (a, b) in r1.iter().zip(&r2) {
        assert!((a - b).abs() < 1e-13);
    }
}

#[test]
fn non_positive_target_is_rejected() {
    let t = transform(8);
    let im = ImmersionField::round(1.0, 6);
    let h: Vec<f64> = t.grid().points().iter().map(|p| p[2]).collect();
    assert!(matches!(
        residual(&im, &AffineFunction::zero(), &h, &t),
        Err(PmcError::NonPositiveTarget { .. })
    ));
    let mut hf = HarmonicField::constant(2.0, 2);
    hf.set(0, 1, 0, 5.0);
    assert!(matches!(
        solve_pmc(&hf, &SolverConfig::with_degree(6)),
        Err(PmcError::NonPositiveTarget { .. })
    ));
}

#[test]
fn config_is_validated() {
    let h = HarmonicField::constant(2.0, 0);
    let mut c = SolverConfig::with_degree(6);
    c.tol = 0.0;
    assert!(matches!(solve_pmc(&h, &c), Err(PmcError::Config(_))));
    let mut c = SolverConfig::with_degree(6);
    c.steps = 0;
    assert!(matches!(solve_pmc(&h, &c), Err(PmcError::Config(_))));
    let h = HarmonicField::constant(2.0, 9);
    assert!(matches!(
        solve_pmc(&h, &SolverConfig::with_degree(6)),
        Err(PmcError::Config(_))
    ));
}

#[test]
fn round_sphere_step_is_zero() {
    let f = normalize_based(&HarmonicField::round_sphere(1.0, 8)).unwrap();
    let mut state = ContinuationState::new(f).unwrap();
    let out = gauge_projected_step(
        &mut state,
        &HarmonicField::constant(2.0, 0),
        &SolverConfig::with_degree(8),
    )
    .unwrap();
    assert!(norm(&out.update) < 1e-10, "{}", norm(&out.update));
}

#[test]
fn steps_are_gauge_orthogonal_and_monotone() {
    let config = SolverConfig::with_degree(8);
    let f = normalize_based(&perturbed_sphere(8, 1e-3, 4)).unwrap();
    let mut state = ContinuationState::new(f).unwrap();
    let h = HarmonicField::constant(2.0, 0);
    let mut last = f64::INFINITY;
    for _ in 0..10 {
        let out = gauge_projected_step(&mut state, &h, &config).unwrap();
        if !out.accepted {
            break;
        }
        assert!(out.gauge_overlap < 1e-10, "{}", out.gauge_overlap);
        assert!(out.residual_after < out.residual_before);
        assert!(out.residual_after < last);
        last = out.residual_after;
        if last < 1e-8 {
            break;
        }
    }
    assert!(last < 1e-8, "{last}");
}

#[test]
fn small_noise_converges_quickly() {
    let mut config = SolverConfig::with_degree(10);
    config.noise = 1e-3;
    config.seed = 11;
    let report = solve_pmc(&HarmonicField::constant(2.0, 0), &config).unwrap();
    assert!(report.converged());
    assert!(report.state.steps[0].iterations <= 10);
    assert!(report.affine.constant() < 1e-10);
    assert!(report.diagnostics.conformality_l2 < 1e-8);
    assert!(report.diagnostics.mc_l2 < 1e-8);
}

/// Extreme distances from the area-weighted centroid.
fn radius_spread(field: &HarmonicField, t: &SphericalTransform) -> (f64, f64) {
    let im = ImmersionField::new(field.clone()).unwrap();
    let area = fundamental_forms(&im, t).unwrap().area_density();
    let vals = t.synthesize(field).unwrap();
    let n = t.grid().len();
    let w: Vec<f64> = (0..n).map(|k| t.grid().weights()[k] * area[k]).collect();
    let total: f64 = w.iter().sum();
    let center: Vec<f64> = (0..3)
        .map(|c| (0..n).map(|k| w[k] * vals[c][k]).sum::<f64>() / total)
        .collect();
    let radii: Vec<f64> = (0..n)
        .map(|k| {
            (0..3)
                .map(|c| (vals[c][k] - center[c]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let min = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let max = radii.iter().copied().fold(0.0, f64::max);
    (min, max)
}

#[test]
fn constant_four_gives_half_sphere() {
    let mut config = SolverConfig::with_degree(8);
    config.noise = 1e-3;
    let report = solve_pmc(&HarmonicField::constant(4.0, 0), &config).unwrap();
    assert!(report.converged(), "{:?}", report.status);
    let (min, max) = radius_spread(report.immersion.field(), &transform(12));
    assert!(
        (min - 0.5).abs() < 1e-7 && (max - 0.5).abs() < 1e-7,
        "{min} {max}"
    );
    assert!(report.affine.constant() < 1e-10);
}

#[test]
fn degree_two_target_matches_recomputed_curvature() {
    let mut h = HarmonicField::constant(2.0, 2);
    h.set(0, 2, 2, 0.1);
    let config = SolverConfig::with_degree(12);
    let report = solve_pmc(&h, &config).unwrap();
    assert!(report.converged(), "{:?}", report.status);
    assert!(
        report.diagnostics.curvature_mismatch < 1e-6,
        "{:?}",
        report.diagnostics
    );
    assert!(report.diagnostics.obstruction < 1e-6);
}

#[test]
fn gauge_basis_is_well_conditioned_on_perturbed_sphere() {
    let t = transform(12);
    let f = perturbed_sphere(8, 0.05, 2);
    GaugeBasis::new(&f, &t).unwrap().check().unwrap();
}

#[test]
fn perturbed_sphere_has_requested_amplitude() {
    let f = perturbed_sphere(6, 0.01, 1);
    let d = f.axpy(-1.0, &HarmonicField::round_sphere(1.0, 6)).unwrap();
    let rms = d.l2_norm() / (4.0 * std::f64::consts::PI).sqrt();
    assert!((rms - 0.01).abs() < 1e-15);
}

#[test]
fn normal_variation_on_the_unit_sphere() {
    let t = transform(10);
    let im = ImmersionField::round(1.0, 10);
    let pts = t.grid().points();
    for axis in 0..3 {
        let f: Vec<f64> = pts.iter().map(|p| p[axis]).collect();
        let out = normal_variation_operator(&im, &f, &t).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-10));
    }
    let out = normal_variation_operator(&im, &constant_values(1.0, &t), &t).unwrap();
    assert!(out.iter().all(|v| (v + 2.0).abs() < 1e-10));
}

fn conformal_bump(l: usize) -> ImmersionField {
    let t = transform(2 * l);
    let f = ImmersionField::from_map(&t, |p| {
        let s = 1.0 + 0.08 * p[0] * p[1] + 0.05 * p[2] * p[2];
        [s * p[0], s * p[1], s * p[2]]
    })
    .unwrap()
    .field()
    .with_degree(l);
    let out = conformalize(&f, 2 * l, 1e-12, 30).unwrap();
    ImmersionField::new(out.field).unwrap()
}

#[test]
fn normal_variation_predicts_curvature_change() {
    let t = transform(24);
    let base = conformal_bump(12);
    let base = ImmersionField::new(base.field().with_degree(24)).unwrap();
    let forms = fundamental_forms(&base, &t).unwrap();
    let grid = t.grid();
    let mut ff = HarmonicField::zeros(1, 3);
    ff.set(0, 0, 0, 1.0);
    ff.set(0, 2, -1, 0.6);
    ff.set(0, 3, 2, 0.3);
    let f = t
        .synthesize_component(&ff.with_degree(24), 0, Derivative::Value)
        .unwrap();
    let normal: Vec<V3> = forms
        .nodes
        .iter()
        .map(|n| n.as_ref().unwrap().normal)
        .collect();
    let vals = t.synthesize(base.field()).unwrap();
    let eps = 1e-5;
    let moved = |e: f64| {
        let comps: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                (0..grid.len())
                    .map(|k| vals[c][k] + e * f[k] * normal[k][c])
                    .collect()
            })
            .collect();
        ImmersionField::new(t.analyze(&comps).unwrap()).unwrap()
    };
    let hp = fundamental_forms(&moved(eps), &t).unwrap().mean_curvature();
    let hm = fundamental_forms(&moved(-eps), &t)
        .unwrap()
        .mean_curvature();
    let op = normal_variation_operator(&base, &f, &t).unwrap();
    let scale = op.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut err: f64 = 0.0;
    for k in 0..grid.len() {
        err = err.max(((hp[k] - hm[k]) / (2.0 * eps) - op[k]).abs());
    }
    assert!(err < 1e-4 * scale, "err {err} scale {scale}");
}

#[test]
fn jacobian_agrees_with_normal_variation_at_round_sphere() {
    let l = 8;
    let col = Collocation::new(l, 12).unwrap();
    let h = HarmonicField::constant(2.0, 0);
    let kind = col.target(&h).unwrap();
    let coeffs = HarmonicField::round_sphere(1.0, l).coeffs().to_vec();
    let jets = col.jets(&coeffs);
    let (r0, _) = col.residual(&jets, &kind);
    let jac = col.jacobian(&jets, &kind, &r0, 1e-6);
    let nr = r0.len();
    let t = &col.transform;
    let grid = t.grid();
    // Normal perturbation f·x with f = Y₂₁ + 0.5 Y₃₋₂ (band-limited product).
    let mut ff = HarmonicField::zeros(1, 3);
    ff.set(0, 2, 1, 1.0);
    ff.set(0, 3, -2, 0.5);
    let fvals = t.synthesize_component(&ff, 0, Derivative::Value).unwrap();
    let pts = grid.points();
    let comps: Vec<Vec<f64>> = (0..3)
        .map(|c| (0..grid.len()).map(|k| fvals[k] * pts[k][c]).collect())
        .collect();
    let dir = t.analyze(&comps).unwrap().with_degree(l);
    let im = ImmersionField::round(1.0, l);
    let op = normal_variation_operator(&im, &fvals, t).unwrap();
    let nc = coeff_count(l);
    assert_eq!(dir.coeffs().len(), 3 * nc);
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..grid.len() {
        let c2 = col.factor[k].norm_sqr();
        for a in 0..3 {
            let row = 5 * k + 2 + a;
            let pred: f64 = (0..3 * nc)
                .map(|i| jac[i * nr + row] * dir.coeffs()[i])
                .sum();
            // The calibrated row is |c|² (Δ₀F + H F_θ×F_φ̂); its normal
            // linearization at the unit sphere is −|c|² (−Δf − 2f) x.
            let expect = -col.sqrt_w[k] * c2 * op[k] * pts[k][a];
            err = err.max((pred - expect).abs());
            scale = scale.max(expect.abs());
        }
    }
    assert!(err < 1e-4 * scale, "err {err} scale {scale}");
}

#[test]
fn index_residuals() {
    let t = transform(16);
    let pts = t.grid().points();
    let one = constant_values(1.0, &t);
    assert!(round_index_residual(&one, &t).unwrap() < 1e-10);
    let r = affine_insolvability_check(16).unwrap();
    assert!(
        (r - (4.0 * std::f64::consts::PI / 3.0).sqrt()).abs() < 1e-8,
        "{r}"
    );
    let rhs: Vec<f64> = pts.iter().map(|p| p[0] + p[1]).collect();
    let expect = (8.0 * std::f64::consts::PI / 3.0).sqrt();
    assert!((round_index_residual(&rhs, &t).unwrap() - expect).abs() < 1e-8);
}

#[test]
fn conformalize_reaches_conformal_map() {
    let t = transform(12);
    let f = ImmersionField::from_map(&t, |p| [p[0], p[1], 1.1 * p[2] + 0.05 * p[0] * p[1]])
        .unwrap()
        .field()
        .with_degree(8);
    let out = conformalize(&f, 12, 1e-8, 30).unwrap();
    assert!(out.converged, "{}", out.residual);
    let im = ImmersionField::new(out.field).unwrap();
    let t2 = transform(16);
    let sup = crate::geometry::sup_norm(&crate::geometry::conformality_residual(&im, &t2).unwrap());
    assert!(sup < 1e-7, "{sup}");
}
