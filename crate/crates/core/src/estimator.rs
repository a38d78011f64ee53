//! Residual indicators and the assembled a posteriori bounds.
//!
//! Work for step `n` happens on the common refinement `T̃_n` of `T_n` and
//! `T_{n−1}`. Data approximations (`g_T`, `a_T`, `b_T`, the source and `Ū`)
//! are barycenter values on its elements.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::error::Result;
use crate::fem::assembly::{assemble_vector, element_qps, face_qps, Qp};
use crate::fem::norms::{energy_inner, l2_error};
use crate::fem::quadrature::{LineRule, QuadratureRule};
use crate::fem::sparse::lincomb;
use crate::fem::{energy_matrix, FeSpace, OverlaySpaces};
use crate::field::{Blend, Point};
use crate::mesh::{FaceSet, NodeId, TriMesh};
use crate::par;
use crate::problem::{self, mdiam, DerivedConstants, ProblemData};
use crate::solver::{LinearSolver, SolverOptions};
use crate::stabilization::{basis_laplacians, max_norm_on, StabKind};
use crate::stepper::{Scheme, Trajectory};

/// `[2 − 6ϑ(1 − ϑ)] / 6`, so that `τ` times it is `∫ (ϑ − s)²` over a step.
pub fn nonlinear_time_factor(vartheta: f64) -> f64 {
    (2.0 - 6.0 * vartheta * (1.0 - vartheta)) / 6.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvBranch {
    Domdiff,
    Domconv,
}

impl ConvBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConvBranch::Domdiff => "domdiff",
            ConvBranch::Domconv => "domconv",
        }
    }
}

/// Data oscillation in time on one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DataTerms {
    /// `‖g − g^{nϑ}‖_{L²(L²)}`
    pub g_l2: f64,
    /// `‖g − g^{nϑ}‖_{L∞(L∞)}`
    pub g_linf: f64,
    /// `‖a − a^{nθ}‖_{L∞(L∞)}`
    pub a_linf: f64,
    /// `‖b − b^{nθ}‖_{L∞(L∞)}`
    pub b_linf: f64,
    /// `‖f − f^{nϑ}‖_{L²(L²)}` of the additive source.
    pub f_l2: f64,
    pub f_linf: f64,
    /// `∫ ‖u_I‖_E²` over the step.
    pub energy_integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepIndicators {
    pub n: usize,
    pub t_n: f64,
    pub tau_n: f64,
    pub eta_spatial: f64,
    /// Squared contributions per element of `T_n`; they sum to `eta_spatial²`.
    pub eta_elements: Vec<f64>,
    pub theta_data_spatial: f64,
    pub theta_cip: f64,
    pub energy_jump: f64,
    pub conv_dual: f64,
    pub conv_branch: ConvBranch,
    pub conv_domdiff: f64,
    pub conv_domconv: f64,
    pub eta_aux: f64,
    pub theta_aux: f64,
    pub aux_energy: f64,
    pub temporal_linear: f64,
    pub temporal_nonlinear: f64,
    /// Same bound through the energy norm (`λ²` variant).
    pub temporal_nonlinear_energy: f64,
    pub data_residual: f64,
    pub data: DataTerms,
    pub gamma_n: f64,
}

impl StepIndicators {
    /// `τ_n^{1/2} {η² + ‖δu‖_E² + η̃² + ‖ũ‖_E²}^{1/2}`
    pub fn lower_bound(&self) -> f64 {
        (self.tau_n
            * (self.eta_spatial.powi(2)
                + self.energy_jump.powi(2)
                + self.eta_aux.powi(2)
                + self.aux_energy.powi(2)))
        .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    KappaSmall,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsUsed {
    pub derived: DerivedConstants,
    pub c_star_small: Option<f64>,
    pub c_star_general: f64,
    pub lintempres_lower: f64,
    pub lintempres_upper: f64,
    /// Per step, `√2 C_b (1 + νLλ min{λ, √τ_n} γ_n)`.
    pub residual_factors: Vec<f64>,
    /// The remaining generic constants are not computable and set to 1.
    pub generic_constants: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub initial: f64,
    pub spatial: f64,
    pub jumps: f64,
    pub aux: f64,
    pub data_spatial: f64,
    pub cip: f64,
    pub data_time: f64,
    /// Square root of the upper-bound radicand.
    pub upper: f64,
    pub aux_dropped: bool,
    /// Per-step lower-bound left-hand sides.
    pub lower: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub steps: Vec<StepIndicators>,
    pub initial_error: f64,
    pub totals: Totals,
    pub regime: Regime,
    pub regime_tilde: Regime,
    /// The linear part dominates the temporal residual (`κ̃ < 1`).
    pub linear_dominates: bool,
    pub constants_used: ConstantsUsed,
}

/// How the Friedrichs constant entering `λ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FriedrichsChoice {
    /// `diam(Ω)`, a guaranteed upper bound.
    Diameter,
    Value(f64),
}

/// Lifted functions of one step on the overlay.
pub struct StepView {
    pub ov: OverlaySpaces,
    pub u_new: Vec<f64>,
    pub u_old: Vec<f64>,
    pub du: Vec<f64>,
    pub u_theta: Vec<f64>,
    pub u_vartheta: Vec<f64>,
    pub theta_blend: Blend,
    pub vartheta_blend: Blend,
}

impl StepView {
    pub fn new(traj: &Trajectory, scheme: &Scheme, n: usize) -> Result<Self> {
        let ov = OverlaySpaces::new(traj.space(n), traj.space(n - 1))?;
        let u_new = ov.lift_new(traj.u(n));
        let u_old = ov.lift_old(traj.u(n - 1));
        let th = scheme.params.theta;
        let vt = scheme.params.vartheta;
        let (t0, t1) = (traj.t(n - 1), traj.t(n));
        Ok(Self {
            du: lincomb(1.0, &u_new, -1.0, &u_old),
            u_theta: lincomb(th, &u_new, 1.0 - th, &u_old),
            u_vartheta: lincomb(vt, &u_new, 1.0 - vt, &u_old),
            u_new,
            u_old,
            ov,
            theta_blend: Blend::new(th, t0, t1),
            vartheta_blend: Blend::new(vt, t0, t1),
        })
    }

    pub fn space(&self) -> &FeSpace {
        &self.ov.space
    }
}

/// Per-face `‖⟦ε n·∇u⟧‖²_E`.
pub fn flux_jumps(space: &FeSpace, faces: &FaceSet, u: &[f64], eps: f64) -> Vec<f64> {
    let rule = LineRule::gauss(if space.degree() == 1 { 2 } else { 3 });
    par::map_indexed(faces.len(), |f| {
        let face = &faces.faces[f];
        let cl = space.local_coeffs(face.elems[0], u);
        let ch = space.local_coeffs(face.elems[1], u);
        face_qps(space, faces, f, &rule)
            .iter()
            .map(|qp| {
                let gl = qp.lo.gradient(&cl);
                let gh = qp.hi.gradient(&ch);
                let j = eps * (face.normal[0] * (gl[0] - gh[0]) + face.normal[1] * (gl[1] - gh[1]));
                qp.w * j * j
            })
            .sum()
    })
}

fn lap_value(space: &FeSpace, k: usize, c: &[f64; 6]) -> f64 {
    let lap = basis_laplacians(space, k);
    (0..space.n_local()).map(|i| lap[i] * c[i]).sum()
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Elementwise weights `ᾱ_K`.
pub fn element_weights(mesh: &TriMesh, eps: f64, beta: f64) -> Vec<f64> {
    (0..mesh.n_triangles()).map(|k| mdiam(mesh.diameter(k), eps, beta)).collect()
}

/// Max absolute Jacobian entry of `a^{nθ}` sampled on element `k`.
fn jacobian_linf(mesh: &TriMesh, k: usize, p: &ProblemData, bt: &Blend) -> f64 {
    let rule = QuadratureRule::degree4();
    let pts = mesh.triangle_points(k);
    let mut m = 0.0f64;
    let mut visit = |x: Point| {
        let j = bt.jacobian(&p.a, x);
        for r in j {
            for v in r {
                m = m.max(v.abs());
            }
        }
    };
    visit(mesh.geom(k).centroid);
    for q in 0..rule.len() {
        let l = rule.barycentric(q);
        visit([
            l[0] * pts[0][0] + l[1] * pts[1][0] + l[2] * pts[2][0],
            l[0] * pts[0][1] + l[1] * pts[1][1] + l[2] * pts[2][1],
        ]);
    }
    m
}

/// `η^n`, `θ^n`, `Θ^n_cip` and the per-element split of `η²` onto `T_n`.
pub struct SpatialIndicators {
    pub eta: f64,
    pub theta: f64,
    pub theta_cip: f64,
    pub eta_elements: Vec<f64>,
}

pub fn spatial_indicator(view: &StepView, scheme: &Scheme, tau: f64, n_new: usize) -> SpatialIndicators {
    let p = &scheme.problem;
    let space = view.space();
    let mesh = space.mesh();
    let (eps, beta) = (p.epsilon, p.beta);
    let bt = view.theta_blend;
    let bv = view.vartheta_blend;
    let alpha = element_weights(mesh, eps, beta);
    let rule = QuadratureRule::for_degree(2 * space.degree() + 2);
    let has_noise = p.nu != 0.0 && !p.g.is_zero();
    let has_source = p.has_source();
    let cip = scheme.stab.kind == StabKind::Cip;

    let per_elem: Vec<(f64, f64, f64)> = par::map_indexed(mesh.n_triangles(), |k| {
        let c_t = space.local_coeffs(k, &view.u_theta);
        let c_v = space.local_coeffs(k, &view.u_vartheta);
        let c_d = space.local_coeffs(k, &view.du);
        let xc = mesh.geom(k).centroid;
        let centre = space.basis_at(k, xc);
        let ubar = centre.value(&c_v);
        let g_k = bv.scalar(p.g.as_ref(), xc);
        let f_k = if has_source { bv.scalar(p.source.as_ref(), xc) } else { 0.0 };
        let a_k = bt.vector(&p.a, xc);
        let b_k = bt.scalar(p.b.as_ref(), xc);
        let lap = eps * lap_value(space, k, &c_t);
        let noise_k = if has_noise { p.nu * p.phi.eval(ubar) * g_k } else { 0.0 };
        let (mut r2, mut d2, mut c2, mut grad2) = (0.0, 0.0, 0.0, 0.0);
        for qp in element_qps(space, k, &rule) {
            let u_t = qp.basis.value(&c_t);
            let gu = qp.basis.gradient(&c_t);
            let du = qp.basis.value(&c_d);
            let r = noise_k + f_k - du / tau + lap - dot2(a_k, gu) - b_k * u_t;
            r2 += qp.w * r * r;
            let a = bt.vector(&p.a, qp.x);
            let da = [a_k[0] - a[0], a_k[1] - a[1]];
            let b = bt.scalar(p.b.as_ref(), qp.x);
            let mut d = dot2(da, gu) + (b_k - b) * u_t;
            if has_noise {
                let u_v = qp.basis.value(&c_v);
                let g = bv.scalar(p.g.as_ref(), qp.x);
                let phi = p.phi.eval(u_v);
                d += p.nu * phi * (g_k - g) + p.nu * (phi - p.phi.eval(ubar)) * g_k;
            }
            if has_source {
                d += f_k - bv.scalar(p.source.as_ref(), qp.x);
            }
            d2 += qp.w * d * d;
            if cip {
                let c = dot2(da, gu);
                c2 += qp.w * c * c;
                grad2 += qp.w * dot2(gu, gu);
            }
        }
        let w = alpha[k] * alpha[k];
        let mut cip_k = 0.0;
        if cip {
            let h = mesh.diameter(k);
            cip_k = w * c2 + w * h * h * jacobian_linf(mesh, k, p, &bt) * grad2;
        }
        (w * r2, w * d2, cip_k)
    });

    let faces = mesh.interior_faces();
    let jumps = flux_jumps(space, &faces, &view.u_theta, eps);
    let mut eta_elements = vec![0.0; n_new];
    let to_new = &view.ov.overlay.to_new;
    let mut eta2 = 0.0;
    for (k, e) in per_elem.iter().enumerate() {
        eta_elements[to_new[k]] += e.0;
        eta2 += e.0;
    }
    for (f, j) in faces.faces.iter().zip(&jumps) {
        let c = 0.5 * eps.powf(-0.5) * mdiam(f.length, eps, beta) * j;
        eta2 += c;
        eta_elements[to_new[f.elems[0]]] += 0.5 * c;
        eta_elements[to_new[f.elems[1]]] += 0.5 * c;
    }
    SpatialIndicators {
        eta: eta2.sqrt(),
        theta: per_elem.iter().map(|e| e.1).sum::<f64>().sqrt(),
        theta_cip: per_elem.iter().map(|e| e.2).sum::<f64>().sqrt(),
        eta_elements,
    }
}

/// Result of the dominant-convection auxiliary problem.
pub struct AuxResult {
    pub u_aux: Vec<f64>,
    pub energy: f64,
    pub eta: f64,
    pub theta: f64,
}

/// Right-hand side `(a^{nθ}·∇δu, v)` on the piecewise linear space of the
/// overlay mesh.
pub fn convective_functional(p1: &FeSpace, view: &StepView, p: &ProblemData) -> Vec<f64> {
    let space = view.space();
    let rule = QuadratureRule::for_degree(space.degree() + 2);
    let bt = view.theta_blend;
    assemble_vector(p1, &rule, |k, qp, loc| {
        let c = space.local_coeffs(k, &view.du);
        let b = space.basis(k, p1.mesh().geom(k).barycentric(qp.x));
        let s = dot2(bt.vector(&p.a, qp.x), b.gradient(&c));
        for i in 0..3 {
            loc[i] += qp.w * s * qp.basis.phi[i];
        }
    })
}

/// Solves `ε(∇ũ,∇v) + β(ũ,v) = (a·∇δu, v)` on `S^{1,0}_0(T̃_n)` and evaluates
/// `η̃`, `θ̃` and `‖ũ‖_E`.
pub fn aux_problem(p1: &FeSpace, solver: &LinearSolver, view: &StepView, p: &ProblemData) -> Result<AuxResult> {
    let (eps, beta) = (p.epsilon, p.beta);
    let mut rhs = convective_functional(p1, view, p);
    p1.zero_dirichlet(&mut rhs);
    let u_aux = if rhs.iter().all(|&x| x == 0.0) {
        vec![0.0; p1.n_dofs()]
    } else {
        solver.solve(&rhs)?
    };
    let space = view.space();
    let mesh = p1.mesh();
    let alpha = element_weights(mesh, eps, beta);
    let bt = view.theta_blend;
    let rule = QuadratureRule::for_degree(2 * space.degree() + 2);
    let parts: Vec<(f64, f64)> = par::map_indexed(mesh.n_triangles(), |k| {
        let c = space.local_coeffs(k, &view.du);
        let ca = p1.local_coeffs(k, &u_aux);
        let a_k = bt.vector(&p.a, mesh.geom(k).centroid);
        let (mut r2, mut t2) = (0.0, 0.0);
        for qp in element_qps(space, k, &rule) {
            let gd = qp.basis.gradient(&c);
            let a = bt.vector(&p.a, qp.x);
            let ua = p1.basis(k, mesh.geom(k).barycentric(qp.x)).value(&ca);
            let r = dot2(a, gd) - beta * ua;
            r2 += qp.w * r * r;
            let t = dot2([a[0] - a_k[0], a[1] - a_k[1]], gd);
            t2 += qp.w * t * t;
        }
        let w = alpha[k] * alpha[k];
        (w * r2, w * t2)
    });
    let faces = mesh.interior_faces();
    // the jump is weighted with ε like the flux jump of η
    let jumps = flux_jumps(p1, &faces, &u_aux, eps);
    let mut eta2: f64 = parts.iter().map(|x| x.0).sum();
    for (f, j) in faces.faces.iter().zip(&jumps) {
        eta2 += eps.powf(-0.5) * mdiam(f.length, eps, beta) * j;
    }
    let energy = energy_inner(p1, &u_aux, &u_aux, eps, beta).max(0.0).sqrt();
    Ok(AuxResult {
        u_aux,
        energy,
        eta: eta2.sqrt(),
        theta: parts.iter().map(|x| x.1).sum::<f64>().sqrt(),
    })
}

/// `max ‖a^{nθ}‖` over sampled points of the overlay.
pub fn convection_linf(mesh: &TriMesh, p: &ProblemData, bt: &Blend) -> f64 {
    if p.a.is_zero() {
        return 0.0;
    }
    let a = |x: Point| bt.vector(&p.a, x);
    par::map_indexed(mesh.n_triangles(), |k| max_norm_on(mesh, k, &a))
        .into_iter()
        .fold(0.0, f64::max)
}

/// `ε^{-1/2} λ ‖a^{nθ}‖_∞ ‖δu‖_E`
pub fn domdiff_bound(eps: f64, lambda: f64, a_linf: f64, du_energy: f64) -> f64 {
    eps.powf(-0.5) * lambda * a_linf * du_energy
}

/// `√(τ [2 − 6ϑ(1 − ϑ)]/6) ν L λ γ_n ‖δu‖` and its energy-norm variant.
#[allow(clippy::too_many_arguments)]
pub fn temporal_nonlinear_bound(
    tau: f64,
    vartheta: f64,
    nu: f64,
    l: f64,
    lambda: f64,
    gamma: f64,
    du_l2: f64,
    du_energy: f64,
) -> (f64, f64) {
    let f = (tau * nonlinear_time_factor(vartheta)).sqrt() * nu * l * gamma;
    (f * lambda * du_l2, f * lambda * lambda * du_energy)
}

/// Two-point Gauss on 5 sub-intervals: 10 times per step.
fn data_times(t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let rule = LineRule::gauss(2);
    let h = (t1 - t0) / 5.0;
    let mut out = Vec::with_capacity(10);
    for s in 0..5 {
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            out.push((t0 + h * (s as f64 + x), h * w));
        }
    }
    out
}

/// Evaluates the time-oscillation terms of the data on `mesh`.
pub fn data_terms(mesh: &TriMesh, scheme: &Scheme, t0: f64, t1: f64) -> DataTerms {
    let p = &scheme.problem;
    let bt = Blend::new(scheme.params.theta, t0, t1);
    let bv = Blend::new(scheme.params.vartheta, t0, t1);
    let times = data_times(t0, t1);
    let rule = QuadratureRule::degree4();
    let mut out = DataTerms::default();
    let scalar_terms = |f: &crate::field::Field, blend: &Blend| -> (f64, f64) {
        if f.is_time_independent() || f.is_zero() {
            return (0.0, 0.0);
        }
        let per: Vec<(f64, f64)> = par::map_indexed(mesh.n_triangles(), |k| {
            let qps = element_space_points(mesh, k, &rule);
            let mut l2 = 0.0;
            let mut linf = 0.0f64;
            for &(t, wt) in &times {
                for &(x, w) in &qps {
                    let d = f.value(x, t) - blend.scalar(f.as_ref(), x);
                    l2 += wt * w * d * d;
                    linf = linf.max(d.abs());
                }
            }
            for &(x, _) in &qps {
                for t in [t0, t1] {
                    linf = linf.max((f.value(x, t) - blend.scalar(f.as_ref(), x)).abs());
                }
            }
            (l2, linf)
        });
        (
            per.iter().map(|x| x.0).sum::<f64>().sqrt(),
            per.iter().map(|x| x.1).fold(0.0, f64::max),
        )
    };
    (out.g_l2, out.g_linf) = scalar_terms(&p.g, &bv);
    (_, out.b_linf) = scalar_terms(&p.b, &bt);
    (out.f_l2, out.f_linf) = scalar_terms(&p.source, &bv);
    if !p.a.is_time_independent() && !p.a.is_zero() {
        out.a_linf = par::map_indexed(mesh.n_triangles(), |k| {
            let mut m = 0.0f64;
            for &(x, _) in &element_space_points(mesh, k, &rule) {
                let ab = bt.vector(&p.a, x);
                for t in times.iter().map(|s| s.0).chain([t0, t1]) {
                    let a = p.a.value(x, t);
                    m = m.max(((a[0] - ab[0]).powi(2) + (a[1] - ab[1]).powi(2)).sqrt());
                }
            }
            m
        })
        .into_iter()
        .fold(0.0, f64::max);
    }
    out
}

fn element_space_points(mesh: &TriMesh, k: usize, rule: &QuadratureRule) -> Vec<(Point, f64)> {
    let p = mesh.triangle_points(k);
    let two_area = 2.0 * mesh.geom(k).area;
    (0..rule.len())
        .map(|q| {
            let l = rule.barycentric(q);
            (
                [
                    l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                    l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
                ],
                rule.weights[q] * two_area,
            )
        })
        .collect()
}

/// `∫ ‖u_I‖_E²` over a step: `τ/3 (‖u^n‖² + (u^n, u^{n−1}) + ‖u^{n−1}‖²)`.
pub fn energy_time_integral(tau: f64, e_new: f64, e_cross: f64, e_old: f64) -> f64 {
    tau / 3.0 * (e_new + e_cross + e_old)
}

/// The four-term data residual bound.
pub fn data_residual_bound(d: &DataTerms, p: &ProblemData, lambda: f64) -> f64 {
    let s = d.energy_integral.max(0.0).sqrt();
    p.nu * p.lipschitz_l * lambda * (d.g_l2 + d.g_linf * s)
        + p.epsilon.powf(-0.5) * lambda * d.a_linf * s
        + lambda * lambda * d.b_linf * s
        + lambda * d.f_l2
}

/// Aux solver on a fixed overlay mesh, reused while the mesh repeats.
struct AuxCache {
    key: Vec<NodeId>,
    space: Arc<FeSpace>,
    solver: LinearSolver,
}

/// Computes the indicators of every step of a trajectory.
pub struct Estimator<'a> {
    pub scheme: &'a Scheme,
    pub constants: DerivedConstants,
    pub solver: SolverOptions,
    cache: Option<AuxCache>,
}

impl<'a> Estimator<'a> {
    pub fn new(scheme: &'a Scheme, traj: &Trajectory, friedrichs: FriedrichsChoice) -> Self {
        let mesh = traj.space(0).mesh();
        let c_f = match friedrichs {
            FriedrichsChoice::Diameter => problem::friedrichs_bound(mesh),
            FriedrichsChoice::Value(v) => v,
        };
        // γ sampled on the finest mesh of the run
        let finest = traj
            .spaces
            .iter()
            .max_by_key(|s| s.mesh().n_triangles())
            .unwrap()
            .mesh()
            .clone();
        let constants = problem::derived_constants(&scheme.problem, c_f, &finest, traj.times.times());
        Self {
            scheme,
            constants,
            solver: scheme.solver,
            cache: None,
        }
    }

    fn aux_space(&mut self, mesh: &TriMesh) -> Result<(Arc<FeSpace>, &LinearSolver)> {
        let p = &self.scheme.problem;
        let hit = matches!(&self.cache, Some(c) if c.key == mesh.leaves());
        if !hit {
            let space = Arc::new(FeSpace::new(mesh.clone(), 1)?);
            let a = energy_matrix(&space, p.epsilon, p.beta).eliminate(space.dirichlet());
            let solver = LinearSolver::new(&a, &self.solver)?;
            self.cache = Some(AuxCache {
                key: mesh.leaves().to_vec(),
                space,
                solver,
            });
        }
        let c = self.cache.as_ref().unwrap();
        Ok((c.space.clone(), &c.solver))
    }

    pub fn step(&mut self, traj: &Trajectory, n: usize) -> Result<StepIndicators> {
        let scheme = self.scheme;
        let p = &scheme.problem;
        let (eps, beta) = (p.epsilon, p.beta);
        let view = StepView::new(traj, scheme, n)?;
        let tau = traj.tau(n);
        let lam = self.constants.lambda;
        let gamma_n = self.constants.gamma_steps.get(n - 1).copied().unwrap_or(self.constants.gamma);
        let spatial = spatial_indicator(&view, scheme, tau, traj.space(n).mesh().n_triangles());
        let space = view.space();
        let du_e = energy_inner(space, &view.du, &view.du, eps, beta).max(0.0).sqrt();
        let du_l2 = energy_inner(space, &view.du, &view.du, 0.0, 1.0).max(0.0).sqrt();

        let a_linf = convection_linf(space.mesh(), p, &view.theta_blend);
        let domdiff = domdiff_bound(eps, lam, a_linf, du_e);
        let mesh = space.mesh().clone();
        let (p1, solver) = self.aux_space(&mesh)?;
        let aux = aux_problem(&p1, solver, &view, p)?;
        let domconv = aux.energy + aux.eta;
        let (conv_dual, branch) = if domdiff <= domconv {
            (domdiff, ConvBranch::Domdiff)
        } else {
            (domconv, ConvBranch::Domconv)
        };
        let (tn, tne) =
            temporal_nonlinear_bound(tau, scheme.params.vartheta, p.nu, p.lipschitz_l, lam, gamma_n, du_l2, du_e);

        let mut data = data_terms(traj.space(n).mesh(), scheme, traj.t(n - 1), traj.t(n));
        let e_new = energy_inner(space, &view.u_new, &view.u_new, eps, beta);
        let e_old = energy_inner(space, &view.u_old, &view.u_old, eps, beta);
        let e_cross = energy_inner(space, &view.u_new, &view.u_old, eps, beta);
        data.energy_integral = energy_time_integral(tau, e_new, e_cross, e_old);
        debug_assert!(data.energy_integral <= tau / 2.0 * (e_new + e_old) * (1.0 + 1e-12) + 1e-300);
        let data_residual = data_residual_bound(&data, p, lam);

        Ok(StepIndicators {
            n,
            t_n: traj.t(n),
            tau_n: tau,
            eta_spatial: spatial.eta,
            eta_elements: spatial.eta_elements,
            theta_data_spatial: spatial.theta,
            theta_cip: spatial.theta_cip,
            energy_jump: du_e,
            conv_dual,
            conv_branch: branch,
            conv_domdiff: domdiff,
            conv_domconv: domconv,
            eta_aux: aux.eta,
            theta_aux: aux.theta,
            aux_energy: aux.energy,
            temporal_linear: tau.sqrt() * (du_e + conv_dual),
            temporal_nonlinear: tn,
            temporal_nonlinear_energy: tne,
            data_residual,
            data,
            gamma_n,
        })
    }

    pub fn estimate(&mut self, traj: &Trajectory) -> Result<EstimatorReport> {
        let mut steps = Vec::with_capacity(traj.n_steps());
        for n in 1..=traj.n_steps() {
            steps.push(self.step(traj, n).map_err(|e| e.at_step(n))?);
        }
        let initial_error = initial_error(self.scheme, traj);
        Ok(total_estimate(steps, initial_error, self.scheme, &self.constants))
    }
}

/// `‖u_0 − π_0 u_0‖_{L²}`
pub fn initial_error(scheme: &Scheme, traj: &Trajectory) -> f64 {
    let u0 = scheme.problem.u0.clone();
    l2_error(traj.space(0), traj.u(0), &move |x| u0.value(x, 0.0))
}

/// Assembles the global upper bound and the per-step lower bounds.
pub fn total_estimate(
    steps: Vec<StepIndicators>,
    initial_error: f64,
    scheme: &Scheme,
    constants: &DerivedConstants,
) -> EstimatorReport {
    let p = &scheme.problem;
    let sigma = scheme.stab.sigma_cip();
    let aux_dropped = p.epsilon >= 1.0;
    let (mut spatial, mut jumps, mut aux, mut data_spatial, mut cip) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut g_inf, mut a_inf, mut b_inf, mut f_inf, mut e_int) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0);
    for s in &steps {
        spatial += s.tau_n * s.eta_spatial.powi(2);
        jumps += s.tau_n * s.energy_jump.powi(2);
        if !aux_dropped {
            aux += s.tau_n * (s.eta_aux.powi(2) + s.aux_energy.powi(2) + s.theta_aux.powi(2));
        }
        data_spatial += s.tau_n * s.theta_data_spatial.powi(2);
        cip += s.tau_n * sigma * s.theta_cip.powi(2);
        g_inf = g_inf.max(s.data.g_linf);
        a_inf = a_inf.max(s.data.a_linf);
        b_inf = b_inf.max(s.data.b_linf);
        f_inf = f_inf.max(s.data.f_linf);
        e_int += s.data.energy_integral;
    }
    let data_time = (g_inf * g_inf + f_inf * f_inf) * (1.0 + e_int) + (a_inf * a_inf + b_inf * b_inf) * e_int;
    let radicand = initial_error.powi(2) + spatial + jumps + aux + data_spatial + cip + data_time;
    let lower = steps.iter().map(|s| s.lower_bound()).collect();
    let (lo, up) = constants.lintempres_factors();
    let residual_factors = steps
        .iter()
        .map(|s| constants.residual_factor(s.tau_n, s.gamma_n))
        .collect();
    EstimatorReport {
        initial_error,
        totals: Totals {
            initial: initial_error.powi(2),
            spatial,
            jumps,
            aux,
            data_spatial,
            cip,
            data_time,
            upper: radicand.sqrt(),
            aux_dropped,
            lower,
        },
        regime: if constants.kappa_ok { Regime::KappaSmall } else { Regime::General },
        regime_tilde: if constants.kappa_tilde_ok { Regime::KappaSmall } else { Regime::General },
        linear_dominates: constants.kappa_tilde_ok,
        constants_used: ConstantsUsed {
            derived: constants.clone(),
            c_star_small: constants.c_star_small(),
            c_star_general: constants.c_star_general(),
            lintempres_lower: lo,
            lintempres_upper: up,
            residual_factors,
            generic_constants: 1.0,
        },
        steps,
    }
}

pub const CSV_COLUMNS: &str = "n,t_n,tau_n,eta,theta_data,theta_cip,energy_jump,conv_dual,conv_branch,eta_aux,theta_aux,aux_energy,temporal_linear,temporal_nonlinear,data_residual";

impl EstimatorReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(CSV_COLUMNS);
        s.push('\n');
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.n,
                r.t_n,
                r.tau_n,
                r.eta_spatial,
                r.theta_data_spatial,
                r.theta_cip,
                r.energy_jump,
                r.conv_dual,
                r.conv_branch.as_str(),
                r.eta_aux,
                r.theta_aux,
                r.aux_energy,
                r.temporal_linear,
                r.temporal_nonlinear,
                r.data_residual
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Recomputes the upper bound from the step records.
    pub fn recompute_upper(&self, scheme: &Scheme) -> f64 {
        total_estimate(self.steps.clone(), self.initial_error, scheme, &self.constants_used.derived)
            .totals
            .upper
    }
}

/// Recomputes the spatial and jump parts of the radicand from the CSV.
pub fn radicand_from_csv(csv: &str) -> HashMap<&'static str, f64> {
    let mut out = HashMap::from([("spatial", 0.0), ("jumps", 0.0)]);
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let tau: f64 = f[2].parse().unwrap_or(0.0);
        let eta: f64 = f[3].parse().unwrap_or(0.0);
        let jump: f64 = f[6].parse().unwrap_or(0.0);
        *out.get_mut("spatial").unwrap() += tau * eta * eta;
        *out.get_mut("jumps").unwrap() += tau * jump * jump;
    }
    out
}

/// Shared shape used by elementwise integrals in tests and the verifier.
pub fn qps(space: &FeSpace, k: usize) -> Vec<Qp> {
    element_qps(space, k, &QuadratureRule::for_degree(2 * space.degree() + 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{constant, from_expr, VectorField};
    use crate::problem::ThetaParams;
    use crate::stepper::{run, TimePartition};

    fn zero_problem() -> ProblemData {
        ProblemData::heat(1.0, crate::field::zero(), 0.1)
    }

    #[test]
    fn nonlinear_factor_values() {
        assert_eq!(nonlinear_time_factor(0.0), 1.0 / 3.0);
        assert_eq!(nonlinear_time_factor(1.0), 1.0 / 3.0);
        assert!((nonlinear_time_factor(0.5) - 1.0 / 12.0).abs() < 1e-15);
        assert!((nonlinear_time_factor(0.25) - 7.0 / 48.0).abs() < 1e-15);
        let (a, b) = temporal_nonlinear_bound(0.1, 0.5, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!((a, b), (0.0, 0.0));
    }

    #[test]
    fn domdiff_arithmetic() {
        assert_eq!(domdiff_bound(1.0, 1.0, 2.0, 3.0), 6.0);
    }

    #[test]
    fn simpson_inequality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mesh = TriMesh::unit_square(4).unwrap();
        let s = FeSpace::new(mesh, 1).unwrap();
        for _ in 0..20 {
            let a: Vec<f64> = (0..s.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..s.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (ea, eb, ec) = (
                energy_inner(&s, &a, &a, 0.3, 0.7),
                energy_inner(&s, &b, &b, 0.3, 0.7),
                energy_inner(&s, &a, &b, 0.3, 0.7),
            );
            assert!(energy_time_integral(0.2, ea, ec, eb) <= 0.1 * (ea + eb) * (1.0 + 1e-14));
        }
    }

    #[test]
    fn zero_trajectory_has_zero_indicators() {
        let mesh = TriMesh::unit_square(4).unwrap();
        let scheme = Scheme::new(zero_problem());
        let traj = run(&scheme, &mesh, &TimePartition::uniform(0.1, 2).unwrap()).unwrap();
        let rep = Estimator::new(&scheme, &traj, FriedrichsChoice::Diameter).estimate(&traj).unwrap();
        assert_eq!(rep.totals.upper, 0.0);
        for s in &rep.steps {
            assert_eq!(s.eta_spatial, 0.0);
            assert_eq!(s.theta_data_spatial, 0.0);
            assert_eq!(s.temporal_linear, 0.0);
            assert_eq!(s.data_residual, 0.0);
            assert_eq!(s.aux_energy, 0.0);
        }
        assert_eq!(rep.regime, Regime::KappaSmall);
        let c = rep.constants_used.c_star_small.unwrap();
        assert!((c - 7f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn indicator_invariants_on_a_run() {
        let mesh = TriMesh::unit_square(4).unwrap().refine(&[1, 5]);
        let mut p = ProblemData::heat(0.1, from_expr("sin(pi*x)*sin(pi*y)").unwrap(), 0.1);
        p.nu = 0.5;
        p.g = from_expr("1 + t*x").unwrap();
        p.a = VectorField::new(from_expr("1 + y").unwrap(), constant(0.5));
        p.b = constant(1.0);
        p.beta = 0.5;
        p.c_b = 2.0;
        for kind in [StabKind::None, StabKind::Sd, StabKind::Cip] {
            let scheme = Scheme::new(p.clone())
                .with_params(ThetaParams::new(0.5, 0.5).unwrap())
                .with_stab(crate::stabilization::StabilizationSpec::new(kind, 0.5).unwrap());
            let traj = run(&scheme, &mesh, &TimePartition::uniform(0.1, 2).unwrap()).unwrap();
            let rep = Estimator::new(&scheme, &traj, FriedrichsChoice::Diameter).estimate(&traj).unwrap();
            for s in &rep.steps {
                let sum: f64 = s.eta_elements.iter().sum();
                assert!((sum - s.eta_spatial.powi(2)).abs() <= 1e-12 * sum);
                assert!(s.eta_spatial > 0.0 && s.temporal_linear > 0.0 && s.data_residual > 0.0);
                assert!(s.conv_dual <= s.conv_domdiff && s.conv_dual <= s.conv_domconv);
                assert_eq!(s.theta_cip > 0.0, kind == StabKind::Cip);
            }
            assert!((rep.recompute_upper(&scheme) - rep.totals.upper).abs() <= 1e-12 * rep.totals.upper);
            let parsed = radicand_from_csv(&rep.to_csv());
            assert!((parsed["spatial"] - rep.totals.spatial).abs() <= 1e-12 * rep.totals.spatial);
        }
    }

    #[test]
    fn single_step_total() {
        let mesh = TriMesh::unit_square(3).unwrap();
        let p = ProblemData::heat(1.0, from_expr("x*(1-x)*y*(1-y)").unwrap(), 0.1);
        let scheme = Scheme::new(p);
        let traj = run(&scheme, &mesh, &TimePartition::uniform(0.1, 1).unwrap()).unwrap();
        let rep = Estimator::new(&scheme, &traj, FriedrichsChoice::Diameter).estimate(&traj).unwrap();
        let s = &rep.steps[0];
        let expect = rep.initial_error.powi(2) + s.tau_n * (s.eta_spatial.powi(2) + s.energy_jump.powi(2));
        assert!(rep.totals.aux_dropped);
        assert!((rep.totals.upper.powi(2) - expect).abs() <= 1e-12 * expect);
        // a = 0: the linear temporal indicator is √τ ‖δu‖_E
        assert!((s.temporal_linear - s.tau_n.sqrt() * s.energy_jump).abs() <= 1e-15);
    }

    #[test]
    fn weights_for_unit_diffusion() {
        let mesh = TriMesh::unit_square(3).unwrap();
        let w = element_weights(&mesh, 1.0, 0.0);
        for k in 0..mesh.n_triangles() {
            assert_eq!(w[k], mesh.diameter(k));
        }
    }

    #[test]
    fn flux_jump_of_a_hat() {
        // two triangles, hat at vertex (1, 0) lives on one side of the diagonal
        let mesh = TriMesh::from_raw(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap();
        let s = FeSpace::new(mesh.clone(), 1).unwrap();
        let mut u = vec![0.0; 4];
        let v = (0..4).find(|&i| mesh.vertex(i) == [1.0, 0.0]).unwrap();
        u[v] = 1.0;
        let faces = mesh.interior_faces();
        let eps = 0.25;
        let j = flux_jumps(&s, &faces, &u, eps);
        // ∇u = (1, −1) on the lower triangle, 0 above; n = ±(1, −1)/√2
        let jump = eps * 2f64.sqrt();
        assert!((j[0] - jump * jump * 2f64.sqrt()).abs() < 1e-14);
        let contribution = 0.5 * eps.powf(-0.5) * mdiam(2f64.sqrt(), eps, 0.0) * j[0];
        // ε^{-1/2} = 2 and the weight is ε^{-1/2} √2
        assert!((contribution - 0.5 * 2.0 * (2.0 * 2f64.sqrt()) * jump * jump * 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn time_independent_data_has_no_data_residual() {
        let mesh = TriMesh::unit_square(3).unwrap();
        let mut p = zero_problem();
        p.g = from_expr("1 + x").unwrap();
        p.nu = 1.0;
        let scheme = Scheme::new(p.clone());
        let d = data_terms(&mesh, &scheme, 0.0, 0.1);
        assert_eq!(d, DataTerms::default());
        // linear in time with ϑ = ½: ∫(g − g^{n½})² = τ³/12 per unit area
        p.g = from_expr("t").unwrap();
        let scheme = Scheme::new(p).with_params(ThetaParams::new(1.0, 0.5).unwrap());
        let d = data_terms(&mesh, &scheme, 0.0, 0.2);
        assert!((d.g_l2 - (0.2f64.powi(3) / 12.0).sqrt()).abs() < 1e-14);
        assert!((d.g_linf - 0.1).abs() < 1e-15);
    }
}
