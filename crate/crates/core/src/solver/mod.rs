//! Continuation solver for conformal immersions with prescribed mean
//! curvature `H + ℓ`.

mod gauge;
pub(crate) mod system;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{canonical_representative, AffineFunction};
use crate::branch::{detect_branch_points, BranchReport};
use crate::charts::Chart;
use crate::error::{PmcError, Result};
use crate::geometry::{
    conformality_at, fundamental_forms, obstruction_vector, verify, ImmersionField,
    VerificationReport, V3,
};
use crate::grid::SphericalGrid;
use crate::harmonics::{Derivative, HarmonicField, SphericalTransform};

pub use gauge::{based_constraints, normalize_based, GaugeBasis, GAUGE_CONDITION};
use system::{norm, regularized_step, Collocation, Jet, RowKind};

/// Levenberg–Marquardt floor, relative to the mean diagonal.
const LM_FLOOR: f64 = 1e-12;
/// Levenberg–Marquardt damping of conformalization steps.
const LM_CONFORMAL: f64 = 1e-9;
/// Line-search halvings before a step counts as failed.
const MAX_HALVINGS: usize = 20;
/// Continuation steps shrink at most this many times.
const MAX_STEP_HALVINGS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Band limit `L` of the immersion.
    pub degree: usize,
    /// Collocation grid degree; `None` uses `L + L/2`.
    pub grid_degree: Option<usize>,
    pub tol: f64,
    pub max_iterations: usize,
    pub steps: usize,
    pub damping: f64,
    pub fd_step: f64,
    /// RMS amplitude of the coefficient noise added to the start.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            degree: 24,
            grid_degree: None,
            tol: 1e-8,
            max_iterations: 30,
            steps: 10,
            damping: 0.5,
            fd_step: 1e-6,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_degree(degree: usize) -> Self {
        SolverConfig {
            degree,
            ..Self::default()
        }
    }

    pub fn grid_degree(&self) -> usize {
        self.grid_degree.unwrap_or(self.degree + self.degree / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(PmcError::Config(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.steps == 0 {
            return Err(PmcError::Config("steps must be at least 1".into()));
        }
        if self.degree < 2 {
            return Err(PmcError::Config("degree must be at least 2".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(PmcError::Config("damping must lie in (0, 1)".into()));
        }
        if !(self.fd_step > 0.0) || !(self.noise >= 0.0) || self.max_iterations == 0 {
            return Err(PmcError::Config("invalid solver parameters".into()));
        }
        if self.grid_degree() < self.degree {
            return Err(PmcError::Config("grid degree below field degree".into()));
        }
        Ok(())
    }

    fn min_step(&self) -> f64 {
        1.0 / (self.steps as f64 * f64::from(1u32 << MAX_STEP_HALVINGS))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub s: f64,
    pub step: f64,
    pub iterations: usize,
    pub residual: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationState {
    pub s: f64,
    pub field: HarmonicField,
    pub affine: AffineFunction,
    pub residual_history: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
}

impl ContinuationState {
    pub fn new(field: HarmonicField) -> Result<Self> {
        if field.components() != 3 {
            return Err(PmcError::Config("state needs a 3-component field".into()));
        }
        Ok(ContinuationState {
            s: 0.0,
            field,
            affine: AffineFunction::zero(),
            residual_history: Vec::new(),
            steps: Vec::new(),
        })
    }
}

/// Result of one Gauss–Newton step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub residual_before: f64,
    pub residual_after: f64,
    /// Line-search factor of the accepted step.
    pub alpha: f64,
    /// Accepted update in coefficient space, before rigid normalization.
    pub update: Vec<f64>,
    /// Largest normalized overlap of the update with the rigid directions.
    pub gauge_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Stalled { s: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub conformality_l2: f64,
    pub conformality_sup: f64,
    pub mc_l2: f64,
    pub mc_sup: f64,
    /// `|v|` of `H_target + ℓ` under `dV_F`.
    pub obstruction: f64,
    /// `sup |H_F − (H_target + ℓ)|` on the collocation grid.
    pub curvature_mismatch: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub immersion: ImmersionField,
    pub affine: AffineFunction,
    pub state: ContinuationState,
    pub diagnostics: SolveDiagnostics,
    pub verification: VerificationReport,
    pub singular_points: Vec<BranchReport>,
    /// Seconds spent in [`solve_pmc`].
    pub wall_time: f64,
}

/// Deterministic, serializable part of a [`SolveReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    #[serde(flatten)]
    pub status: SolveStatus,
    pub affine: AffineFunction,
    pub diagnostics: SolveDiagnostics,
    pub steps: Vec<StepDiagnostics>,
    pub residual_history: Vec<f64>,
    pub verification: VerificationReport,
    pub singular_points: Vec<BranchReport>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            status: self.status.clone(),
            affine: self.affine,
            diagnostics: self.diagnostics.clone(),
            steps: self.state.steps.clone(),
            residual_history: self.state.residual_history.clone(),
            verification: self.verification.clone(),
            singular_points: self.singular_points.clone(),
        }
    }
}

pub(crate) fn system_jets(
    field: &HarmonicField,
    transform: &SphericalTransform,
) -> Result<Vec<Jet>> {
    let jets = ImmersionField::new(field.clone())?.jets(transform)?;
    Ok(jets
        .iter()
        .map(|j| Jet {
            d_theta: j.d_theta,
            d_phi: j.d_phi,
            laplacian: j.laplacian,
        })
        .collect())
}

fn check_positive(values: &[f64]) -> Result<()> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        Ok(())
    } else {
        Err(PmcError::NonPositiveTarget { min })
    }
}

/// Stacked residual: per node the two conformality rows and the three
/// calibrated mean-curvature rows for `H_target + ℓ_b`, weighted by the
/// square root of the quadrature weight, then six based-immersion rows.
pub fn residual(
    immersion: &ImmersionField,
    ell: &AffineFunction,
    h_target: &[f64],
    transform: &SphericalTransform,
) -> Result<Vec<f64>> {
    let grid = transform.grid();
    if h_target.len() != grid.len() {
        return Err(PmcError::Data("target length does not match grid".into()));
    }
    check_positive(h_target)?;
    let jets = immersion.jets(transform)?;
    let mut out = Vec::with_capacity(5 * grid.len() + 6);
    for (k, jet) in jets.iter().enumerate() {
        let (t, p) = grid.angles(k);
        let c = Chart::preferred(t).factor(t, p);
        let s = grid.weights()[k].sqrt();
        let conf = conformality_at(c, jet);
        let h = h_target[k] + ell.value_at(grid.point(k));
        let mc = system::mc_rows(
            c,
            &Jet {
                d_theta: jet.d_theta,
                d_phi: jet.d_phi,
                laplacian: jet.laplacian,
            },
            h,
        );
        out.extend([s * conf.re, s * conf.im, s * mc[0], s * mc[1], s * mc[2]]);
    }
    out.extend(based_constraints(immersion.field()));
    Ok(out)
}

/// Unit sphere with random coefficient noise of RMS amplitude `amplitude`.
pub fn perturbed_sphere(degree: usize, amplitude: f64, seed: u64) -> HarmonicField {
    let mut field = HarmonicField::round_sphere(1.0, degree);
    if amplitude == 0.0 {
        return field;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..field.coeffs().len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let scale = amplitude * (4.0 * std::f64::consts::PI).sqrt() / norm(&noise);
    for (c, n) in field.coeffs_mut().iter_mut().zip(noise) {
        *c += scale * n;
    }
    field
}

/// The solver's working set at a fixed target.
struct Engine<'a> {
    col: &'a Collocation,
    kind: RowKind,
    config: &'a SolverConfig,
}

impl Engine<'_> {
    fn evaluate(&self, coeffs: &[f64]) -> (Vec<Jet>, Vec<f64>, AffineFunction) {
        let jets = self.col.jets(coeffs);
        let (r, ell) = self.col.residual(&jets, &self.kind);
        (jets, r, ell)
    }

    /// One damped, gauge-projected Gauss–Newton step from `field`.
    fn step(&self, field: &HarmonicField) -> Result<(StepOutcome, HarmonicField, AffineFunction)> {
        let coeffs = field.coeffs();
        let (jets, r, ell) = self.evaluate(coeffs);
        let r0 = norm(&r);
        let (gauge, mu) = match self.kind {
            RowKind::Full { .. } => (
                GaugeBasis::from_jets(field, &self.col.transform, &jets)?
                    .rigid()
                    .to_vec(),
                LM_FLOOR,
            ),
            RowKind::Conformal => (Vec::new(), LM_CONFORMAL),
        };
        let mut jac = self
            .col
            .jacobian(&jets, &self.kind, &r, self.config.fd_step);
        let delta = regularized_step(&mut jac, r.len(), &r, &gauge, mu)?;
        drop(jac);
        let overlap = if gauge.is_empty() {
            0.0
        } else {
            GaugeBasis::from_directions(gauge).max_overlap(&delta)
        };
        let mut alpha = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = coeffs
                .iter()
                .zip(&delta)
                .map(|(c, d)| c + alpha * d)
                .collect();
            let (_, rt, ell_t) = self.evaluate(&trial);
            let rn = norm(&rt);
            if rn < r0 {
                let moved = HarmonicField::from_coeffs(3, field.degree(), trial)?;
                let normalized = normalize_based(&moved).unwrap_or(moved);
                // Rigid motions rotate the balanced affine term.
                let ell_n = match self.kind {
                    RowKind::Full { .. } => self.evaluate(normalized.coeffs()).2,
                    RowKind::Conformal => ell_t,
                };
                return Ok((
                    StepOutcome {
                        accepted: true,
                        residual_before: r0,
                        residual_after: rn,
                        alpha,
                        update: delta.iter().map(|d| alpha * d).collect(),
                        gauge_overlap: overlap,
                    },
                    normalized,
                    ell_n,
                ));
            }
            alpha *= self.config.damping;
        }
        Ok((
            StepOutcome {
                accepted: false,
                residual_before: r0,
                residual_after: r0,
                alpha: 0.0,
                update: vec![0.0; delta.len()],
                gauge_overlap: overlap,
            },
            field.clone(),
            ell,
        ))
    }

    /// Newton iterations to `tol`: `(converged, iterations, residual)`,
    /// leaving `state` at the last accepted iterate.
    fn newton(&self, state: &mut ContinuationState, tol: f64) -> Result<(bool, usize, f64)> {
        let (_, r, ell) = self.evaluate(state.field.coeffs());
        let mut rn = norm(&r);
        state.affine = ell;
        let mut iterations = 0;
        while rn > tol {
            if iterations == self.config.max_iterations {
                return Ok((false, iterations, rn));
            }
            let (outcome, field, ell) = self.step(&state.field)?;
            if !outcome.accepted {
                return Ok((false, iterations, rn));
            }
            iterations += 1;
            rn = outcome.residual_after;
            state.field = field;
            state.affine = ell;
            state.residual_history.push(rn);
        }
        Ok((true, iterations, rn))
    }
}

/// One gauge-projected Gauss–Newton step for the target `h`, updating
/// `state` in place when the line search succeeds.
pub fn gauge_projected_step(
    state: &mut ContinuationState,
    h: &HarmonicField,
    config: &SolverConfig,
) -> Result<StepOutcome> {
    config.validate()?;
    let col = Collocation::new(
        state.field.degree(),
        config.grid_degree().max(state.field.degree()),
    )?;
    let kind = target_rows(&col, h)?;
    let engine = Engine {
        col: &col,
        kind,
        config,
    };
    let (outcome, field, ell) = engine.step(&state.field)?;
    if outcome.accepted {
        state.field = field;
        state.affine = ell;
        state.residual_history.push(outcome.residual_after);
    }
    Ok(outcome)
}

fn target_rows(col: &Collocation, h: &HarmonicField) -> Result<RowKind> {
    if h.components() != 1 {
        return Err(PmcError::Config("target must be a scalar field".into()));
    }
    if h.degree() > col.degree {
        return Err(PmcError::Config(format!(
            "target degree {} exceeds solver degree {}",
            h.degree(),
            col.degree
        )));
    }
    let kind = col.target(h)?;
    if let RowKind::Full { h: values, .. } = &kind {
        check_positive(values)?;
    }
    Ok(kind)
}

/// Solves for a conformal immersion with mean curvature `h_target + ℓ` by
/// continuation from the round sphere along `H_s = (1 − s)·2 + s·h_target`.
pub fn solve_pmc(h_target: &HarmonicField, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    let start = Instant::now();
    let col = Collocation::new(config.degree, config.grid_degree())?;
    target_rows(&col, h_target)?;
    let two = HarmonicField::constant(2.0, h_target.degree());
    let blend = |s: f64| -> Result<HarmonicField> { two.scaled(1.0 - s).axpy(s, h_target) };

    let start_field = perturbed_sphere(config.degree, config.noise, config.seed);
    let start_field = normalize_based(&start_field).unwrap_or(start_field);
    let mut state = ContinuationState::new(start_field)?;
    let mut total_iterations = 0;
    let mut step = 1.0 / config.steps as f64;
    let mut stall: Option<String> = None;

    // Settle on the round target first.
    let engine = Engine {
        col: &col,
        kind: target_rows(&col, &blend(0.0)?)?,
        config,
    };
    let (ok, its, rn) = engine.newton(&mut state, 10.0 * config.tol)?;
    total_iterations += its;
    state.steps.push(StepDiagnostics {
        s: 0.0,
        step: 0.0,
        iterations: its,
        residual: rn,
        accepted: ok,
    });
    if !ok {
        stall = Some("no convergence at the round target".into());
    }

    while stall.is_none() && state.s < 1.0 {
        let mut s_next = state.s + step;
        if s_next > 1.0 - 1e-12 {
            s_next = 1.0;
        }
        let engine = Engine {
            col: &col,
            kind: target_rows(&col, &blend(s_next)?)?,
            config,
        };
        let mut trial = state.clone();
        let (ok, its, rn) = engine.newton(&mut trial, 10.0 * config.tol)?;
        total_iterations += its;
        state.steps.push(StepDiagnostics {
            s: s_next,
            step,
            iterations: its,
            residual: rn,
            accepted: ok,
        });
        if ok {
            let steps = std::mem::take(&mut state.steps);
            state = trial;
            state.steps = steps;
            state.s = s_next;
        } else if step / 2.0 >= config.min_step() * (1.0 - 1e-12) {
            step /= 2.0;
        } else {
            stall = Some(format!(
                "continuation stalled at s = {s_next} with the minimum step {step}"
            ));
        }
    }

    if stall.is_none() {
        let engine = Engine {
            col: &col,
            kind: target_rows(&col, h_target)?,
            config,
        };
        let (ok, its, rn) = engine.newton(&mut state, config.tol)?;
        total_iterations += its;
        state.steps.push(StepDiagnostics {
            s: 1.0,
            step: 0.0,
            iterations: its,
            residual: rn,
            accepted: ok,
        });
        if !ok {
            stall = Some(format!("final polish stopped at residual {rn:e}"));
        }
    }

    let h_final = if stall.is_none() {
        h_target.clone()
    } else {
        blend(state.s)?
    };
    finish(state, &col, &h_final, stall, total_iterations, start)
}

fn finish(
    state: ContinuationState,
    col: &Collocation,
    h_state: &HarmonicField,
    stall: Option<String>,
    newton_iterations: usize,
    start: Instant,
) -> Result<SolveReport> {
    let transform = &col.transform;
    let grid = transform.grid();
    let immersion = ImmersionField::new(state.field.clone())?;
    let h_vals = transform.synthesize_component(h_state, 0, Derivative::Value)?;

    let forms = fundamental_forms(&immersion, transform)?;
    let area = forms.area_density();
    let affine = if forms.singular_count() == 0 {
        canonical_representative(&h_vals, &area, transform)
            .map(|(_, ell)| ell)
            .unwrap_or(state.affine)
    } else {
        state.affine
    };
    let total: Vec<f64> = h_vals
        .iter()
        .zip(grid.points())
        .map(|(h, p)| h + affine.value_at(p))
        .collect();

    let jets = col.jets(state.field.coeffs());
    let (mut conf_l2, mut conf_sup, mut mc_l2, mut mc_sup) = (0.0, 0.0f64, 0.0, 0.0f64);
    for (k, jet) in jets.iter().enumerate() {
        let c = col.factor[k];
        let cr = system::conformality_rows(c, jet);
        let cn = cr[0].hypot(cr[1]);
        let mn = system::mc_rows(c, jet, total[k]).norm();
        conf_l2 += col.weight[k] * cn * cn;
        mc_l2 += col.weight[k] * mn * mn;
        conf_sup = conf_sup.max(cn);
        mc_sup = mc_sup.max(mn);
    }
    let obstruction = V3::from(obstruction_vector(&total, &area, transform)?).norm();
    let mismatch = forms
        .nodes
        .iter()
        .zip(&total)
        .map(|(n, t)| n.as_ref().map_or(f64::INFINITY, |n| (n.mean - t).abs()))
        .fold(0.0, f64::max);

    let verification = verify(&immersion, transform)?;
    let singular_points = match &stall {
        Some(_) => match detect_branch_points(&immersion, transform) {
            Ok(points) => points.into_iter().map(Into::into).collect(),
            Err(_) => Vec::new(),
        },
        None => verification.branch_points.clone(),
    };
    let status = match stall {
        None => SolveStatus::Converged,
        Some(reason) => SolveStatus::Stalled { s: state.s, reason },
    };
    Ok(SolveReport {
        status,
        immersion,
        affine,
        diagnostics: SolveDiagnostics {
            conformality_l2: conf_l2.sqrt(),
            conformality_sup: conf_sup,
            mc_l2: mc_l2.sqrt(),
            mc_sup,
            obstruction,
            curvature_mismatch: mismatch,
            newton_iterations,
        },
        wall_time: start.elapsed().as_secs_f64(),
        verification,
        state,
        singular_points,
    })
}

/// Result of [`conformalize`].
#[derive(Debug, Clone)]
pub struct Conformalized {
    pub field: HarmonicField,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Moves `field` to a nearby conformal immersion by damped least squares on
/// the conformality rows alone, collocated on a grid of degree `grid_degree`.
pub fn conformalize(
    field: &HarmonicField,
    grid_degree: usize,
    tol: f64,
    max_iterations: usize,
) -> Result<Conformalized> {
    let config = SolverConfig {
        degree: field.degree(),
        grid_degree: Some(grid_degree),
        tol,
        max_iterations,
        ..SolverConfig::default()
    };
    config.validate()?;
    ImmersionField::new(field.clone())?;
    let col = Collocation::new(field.degree(), grid_degree)?;
    let engine = Engine {
        col: &col,
        kind: RowKind::Conformal,
        config: &config,
    };
    let mut state = ContinuationState::new(field.clone())?;
    let (converged, iterations, residual) = engine.newton(&mut state, tol)?;
    Ok(Conformalized {
        field: state.field,
        residual,
        iterations,
        converged,
    })
}

/// `−Δ_γ f − |A|² f` on the nodes of `transform`, with `Δ_γ = λ⁻² Δ₀`.
pub fn normal_variation_operator(
    immersion: &ImmersionField,
    f: &[f64],
    transform: &SphericalTransform,
) -> Result<Vec<f64>> {
    let grid = transform.grid();
    if f.len() != grid.len() {
        return Err(PmcError::Data("field length does not match grid".into()));
    }
    let forms = fundamental_forms(immersion, transform)?;
    let jets = immersion.jets(transform)?;
    let lap =
        transform.synthesize_component(&transform.analyze_values(f)?, 0, Derivative::Laplacian)?;
    forms
        .nodes
        .iter()
        .zip(&jets)
        .enumerate()
        .map(|(k, (node, jet))| {
            let node = node
                .as_ref()
                .ok_or_else(|| PmcError::Data(format!("immersion is singular at node {k}")))?;
            let lambda_sq = 0.5 * (jet.d_theta.norm_squared() + jet.d_phi.norm_squared());
            Ok(-lap[k] / lambda_sq - node.a_norm_sq * f[k])
        })
        .collect()
}

/// Least-squares residual `min_f ‖(−Δ − 2) f − rhs‖` over fields of degree
/// `≤ L` on the unit sphere, in the quadrature `L²` norm.
pub fn round_index_residual(rhs: &[f64], transform: &SphericalTransform) -> Result<f64> {
    let grid = transform.grid();
    if rhs.len() != grid.len() {
        return Err(PmcError::Data("field length does not match grid".into()));
    }
    let degree = transform.degree();
    let nc = crate::harmonics::coeff_count(degree);
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(grid.len(), nc, |k, i| {
        let (l, m) = crate::harmonics::degree_order(i);
        let ev = (l * (l + 1)) as f64 - 2.0;
        sw[k] * ev * transform.basis(Derivative::Value, l, m, k)
    });
    let b = nalgebra::DVector::from_fn(grid.len(), |k, _| sw[k] * rhs[k]);
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&b, 1e-10 * svd.singular_values.max())
        .map_err(|e| PmcError::Singular(e.to_string()))?;
    Ok((a * x - b).norm())
}

/// Index check on the round sphere: the residual of `(−Δ − 2) f = 1 + x₃`,
/// which is `‖x₃‖ = √(4π/3)` because `x₃` spans part of the cokernel.
pub fn affine_insolvability_check(degree: usize) -> Result<f64> {
    let transform = SphericalTransform::new(&SphericalGrid::new(degree)?);
    let rhs: Vec<f64> = transform
        .grid()
        .points()
        .iter()
        .map(|p| 1.0 + p[2])
        .collect();
    round_index_residual(&rhs, &transform)
}

#[cfg(test)]
mod tests;
