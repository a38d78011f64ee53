//! Problem data, assumption checks and the derived constants.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::quadrature::QuadratureRule;
use crate::field::{self, Blend, Field, Phi, Point, VectorField};
use crate::mesh::TriMesh;

/// `∂_t u − εΔu + a·∇u + b u = ν φ(u) g + f` with `u = 0` on the boundary.
///
/// `source` is an optional additive forcing `f`; it is blended in time like
/// the non-linear term and is zero unless given.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub epsilon: f64,
    pub nu: f64,
    pub lipschitz_l: f64,
    pub phi: Phi,
    pub g: Field,
    pub a: VectorField,
    pub b: Field,
    pub u0: Field,
    pub source: Field,
    pub t_final: f64,
    pub beta: f64,
    pub c_b: f64,
}

impl ProblemData {
    /// Pure diffusion `∂_t u − εΔu = 0` with the given initial value.
    pub fn heat(epsilon: f64, u0: Field, t_final: f64) -> Self {
        Self {
            epsilon,
            nu: 0.0,
            lipschitz_l: 1.0,
            phi: Phi::OnePlusAbs,
            g: field::zero(),
            a: VectorField::zero(),
            b: field::zero(),
            u0,
            source: field::zero(),
            t_final,
            beta: 0.0,
            c_b: 1.0,
        }
    }

    /// Structural invariants that do not need sampling.
    pub fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Validation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.nu >= 0.0) {
            return Err(Error::Validation(format!("nu must be non-negative, got {}", self.nu)));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::Validation(format!("T must be positive, got {}", self.t_final)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Validation(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.c_b >= 1.0) {
            return Err(Error::Validation(format!("c_b must be at least 1, got {}", self.c_b)));
        }
        if self.beta == 0.0 && self.c_b != 1.0 {
            return Err(Error::Validation("c_b must equal 1 when beta = 0".into()));
        }
        if !(self.lipschitz_l >= 0.0) {
            return Err(Error::Validation("L must be non-negative".into()));
        }
        Ok(())
    }

    pub fn has_source(&self) -> bool {
        !self.source.is_zero()
    }

    /// Whether g, a, b and the source are constant in time.
    pub fn data_time_independent(&self) -> bool {
        self.g.is_time_independent()
            && self.a.is_time_independent()
            && self.b.is_time_independent()
            && self.source.is_time_independent()
    }
}

/// Blending weights of the linear (θ) and non-linear (ϑ) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaParams {
    pub theta: f64,
    pub vartheta: f64,
}

impl Default for ThetaParams {
    fn default() -> Self {
        Self {
            theta: 1.0,
            vartheta: 0.0,
        }
    }
}

impl ThetaParams {
    pub fn new(theta: f64, vartheta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) || !(0.0..=1.0).contains(&vartheta) {
            return Err(Error::Validation(format!(
                "theta and vartheta must lie in [0, 1], got {theta} and {vartheta}"
            )));
        }
        Ok(Self { theta, vartheta })
    }
}

/// One checked assumption with its worst sampled value.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AssumptionCheck {
    pub assumption: String,
    pub pass: bool,
    pub worst_value: f64,
    pub witness_x: f64,
    pub witness_y: f64,
    pub witness_t: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    /// Derivatives of `a` come from finite differences.
    pub fd_derivatives: bool,
    /// Elements without a vertex inside the domain.
    pub elements_without_interior_vertex: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.assumption == name)
    }

    pub fn failures(&self) -> Vec<&AssumptionCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.checks).expect("report serializes")
    }
}

pub const VALIDATION_TOL: f64 = 1e-10;

/// Quadrature points of every element at a degree-4 rule.
pub fn sample_points(mesh: &TriMesh) -> Vec<Point> {
    let rule = QuadratureRule::degree4();
    let mut pts = Vec::with_capacity(mesh.n_triangles() * (rule.len() + 1));
    for k in 0..mesh.n_triangles() {
        let p = mesh.triangle_points(k);
        pts.push(mesh.geom(k).centroid);
        for q in 0..rule.len() {
            let l = rule.barycentric(q);
            pts.push([
                l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
            ]);
        }
    }
    pts
}

/// Empirical Lipschitz ratio of φ on a fixed grid of pairs in [-10, 10].
pub fn empirical_lipschitz(phi: &Phi) -> (f64, f64, f64) {
    let grid: Vec<f64> = (0..=80).map(|i| -10.0 + 0.25 * i as f64).collect();
    let mut worst = (0.0, 0.0, 0.0);
    let mut check = |s1: f64, s2: f64| {
        let r = (phi.eval(s1) - phi.eval(s2)).abs() / (s1 - s2).abs();
        if r > worst.0 {
            worst = (r, s1, s2);
        }
    };
    for (i, &s1) in grid.iter().enumerate() {
        for &s2 in &grid[i + 1..] {
            check(s1, s2);
        }
        check(s1, s1 + 1e-3);
        check(s1, s1 - 0.37);
    }
    worst
}

/// Sample (A1), (A3) and (A4) on the quadrature points of `mesh` at the
/// given time nodes (plus midpoints).
pub fn validate_assumptions(p: &ProblemData, mesh: &TriMesh, times: &[f64]) -> Result<ValidationReport> {
    if !(p.epsilon > 0.0) {
        return Err(Error::Validation(format!("epsilon must be positive, got {}", p.epsilon)));
    }
    let pts = sample_points(mesh);
    let mut ts: Vec<f64> = times.to_vec();
    for w in times.windows(2) {
        ts.push(0.5 * (w[0] + w[1]));
    }
    ts.sort_by(f64::total_cmp);
    if ts.is_empty() {
        ts.push(0.0);
    }
    let mut min_react = (f64::INFINITY, [0.0, 0.0], 0.0);
    let mut max_b = (0.0f64, [0.0, 0.0], 0.0);
    for &t in &ts {
        for &x in &pts {
            let r = -0.5 * p.a.divergence(x, t) + p.b.value(x, t);
            if r < min_react.0 {
                min_react = (r, x, t);
            }
            let bv = p.b.value(x, t).abs();
            if bv > max_b.0 {
                max_b = (bv, x, t);
            }
        }
    }
    let mut checks = Vec::new();
    checks.push(AssumptionCheck {
        assumption: "A1".into(),
        pass: p.epsilon > 0.0 && p.nu >= 0.0,
        worst_value: p.epsilon.min(p.nu),
        witness_x: 0.0,
        witness_y: 0.0,
        witness_t: 0.0,
    });
    checks.push(AssumptionCheck {
        assumption: "A3_reaction".into(),
        pass: min_react.0 >= p.beta - VALIDATION_TOL,
        worst_value: min_react.0,
        witness_x: min_react.1[0],
        witness_y: min_react.1[1],
        witness_t: min_react.2,
    });
    checks.push(AssumptionCheck {
        assumption: "A3_bound".into(),
        pass: max_b.0 <= p.c_b * p.beta + VALIDATION_TOL && p.c_b >= 1.0 && (p.beta > 0.0 || p.c_b == 1.0),
        worst_value: max_b.0,
        witness_x: max_b.1[0],
        witness_y: max_b.1[1],
        witness_t: max_b.2,
    });
    let (ratio, s1, s2) = empirical_lipschitz(&p.phi);
    checks.push(AssumptionCheck {
        assumption: "A4".into(),
        pass: ratio <= p.lipschitz_l * (1.0 + 1e-12) + 1e-15,
        worst_value: ratio,
        witness_x: s1,
        witness_y: s2,
        witness_t: 0.0,
    });
    let fd = !p.a.exact_derivatives() && !p.a.is_zero();
    if fd {
        log::info!("derivatives of the convection field use finite differences");
    }
    let bad = mesh.elements_without_interior_vertex();
    if bad > 0 {
        log::warn!("{bad} element(s) have no vertex inside the domain");
    }
    Ok(ValidationReport {
        checks,
        fd_derivatives: fd,
        elements_without_interior_vertex: bad,
    })
}

/// λ = min{C_F ε^{-1/2}, β^{-1/2}}, dropping the β branch when β = 0.
pub fn lambda(c_f: f64, epsilon: f64, beta: f64) -> f64 {
    let l = c_f / epsilon.sqrt();
    if beta > 0.0 {
        l.min(1.0 / beta.sqrt())
    } else {
        l
    }
}

/// `ᾱ = min{ε^{-1/2} diam, β^{-1/2}}` with the β branch dropped when β = 0.
pub fn mdiam(diameter: f64, epsilon: f64, beta: f64) -> f64 {
    lambda(diameter, epsilon, beta)
}

pub fn kappa(nu: f64, l: f64, t_final: f64, lambda: f64, gamma: f64) -> f64 {
    2.0 * nu * l * t_final.min(lambda * lambda) * gamma
}

pub fn kappa_tilde(nu: f64, l: f64, c_b: f64, lambda: f64, gamma: f64) -> f64 {
    25.0 * (2.0 + c_b) * nu * l * lambda * lambda * gamma
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DerivedConstants {
    pub c_f: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// max |g| over each step `[t_{n-1}, t_n]`; entry `n-1` for step `n`.
    pub gamma_steps: Vec<f64>,
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub kappa_ok: bool,
    pub kappa_tilde_ok: bool,
    pub nu: f64,
    pub lipschitz_l: f64,
    pub c_b: f64,
    pub t_final: f64,
}

impl DerivedConstants {
    pub fn from_gamma(p: &ProblemData, c_f: f64, gamma: f64, gamma_steps: Vec<f64>) -> Self {
        let lam = lambda(c_f, p.epsilon, p.beta);
        let k = kappa(p.nu, p.lipschitz_l, p.t_final, lam, gamma);
        let kt = kappa_tilde(p.nu, p.lipschitz_l, p.c_b, lam, gamma);
        Self {
            c_f,
            lambda: lam,
            gamma,
            gamma_steps,
            kappa: k,
            kappa_tilde: kt,
            kappa_ok: k < 1.0,
            kappa_tilde_ok: kt < 1.0,
            nu: p.nu,
            lipschitz_l: p.lipschitz_l,
            c_b: p.c_b,
            t_final: p.t_final,
        }
    }

    /// γ(t) as the maximum over the step containing `t`.
    pub fn gamma_of_t(&self, times: &[f64], t: f64) -> f64 {
        if self.gamma_steps.is_empty() {
            return self.gamma;
        }
        let n = times.partition_point(|&s| s < t).clamp(1, self.gamma_steps.len());
        self.gamma_steps[n - 1]
    }

    /// Equivalence factor when κ < 1:
    /// `√(3 + [1 + 3 max{C_b², ½νLλ²γ}] / (1 − κ))`.
    pub fn c_star_small(&self) -> Option<f64> {
        if !self.kappa_ok {
            return None;
        }
        let m = self
            .c_b
            .powi(2)
            .max(0.5 * self.nu * self.lipschitz_l * self.lambda.powi(2) * self.gamma);
        Some((3.0 + (1.0 + 3.0 * m) / (1.0 - self.kappa)).sqrt())
    }

    /// General factor `√(3 + [1 + 3 max{C_b², ν²L²λ²γ² min{T,λ²}}] e^{2νLγT})`.
    pub fn c_star_general(&self) -> f64 {
        let nlg = self.nu * self.lipschitz_l * self.gamma;
        let m = self
            .c_b
            .powi(2)
            .max(nlg * nlg * self.lambda.powi(2) * self.t_final.min(self.lambda.powi(2)));
        (3.0 + (1.0 + 3.0 * m) * (2.0 * nlg * self.t_final).exp()).sqrt()
    }

    /// Residual-side factor `√2 C_b (1 + νLλ min{λ, √τ} γ_n)`.
    pub fn residual_factor(&self, tau: f64, gamma_n: f64) -> f64 {
        2f64.sqrt()
            * self.c_b
            * (1.0 + self.nu * self.lipschitz_l * self.lambda * self.lambda.min(tau.sqrt()) * gamma_n)
    }

    /// Lower and upper factors of the linear temporal residual:
    /// `1/(√12 (2 + C_b))` and `1/(√3 C_b)`.
    pub fn lintempres_factors(&self) -> (f64, f64) {
        (1.0 / (12f64.sqrt() * (2.0 + self.c_b)), 1.0 / (3f64.sqrt() * self.c_b))
    }
}

/// `max |g|` over quadrature points and 10 uniform times per step.
pub fn gamma_sampled(p: &ProblemData, mesh: &TriMesh, times: &[f64]) -> (f64, Vec<f64>) {
    if p.g.is_zero() {
        return (0.0, vec![0.0; times.len().saturating_sub(1)]);
    }
    let pts = sample_points(mesh);
    let sup = |t: f64| pts.iter().fold(0.0f64, |m, &x| m.max(p.g.value(x, t).abs()));
    if p.g.is_time_independent() {
        let v = sup(0.0);
        return (v, vec![v; times.len().saturating_sub(1)]);
    }
    let mut steps = Vec::with_capacity(times.len().saturating_sub(1));
    for w in times.windows(2) {
        let m = (0..10)
            .map(|i| sup(w[0] + (w[1] - w[0]) * i as f64 / 9.0))
            .fold(0.0f64, f64::max);
        steps.push(m);
    }
    let g = steps.iter().copied().fold(0.0f64, f64::max);
    (g, steps)
}

pub fn derived_constants(p: &ProblemData, c_f: f64, mesh: &TriMesh, times: &[f64]) -> DerivedConstants {
    let (gamma, steps) = gamma_sampled(p, mesh, times);
    DerivedConstants::from_gamma(p, c_f, gamma, steps)
}

/// Guaranteed upper bound `diam(Ω)` for the Friedrichs constant.
pub fn friedrichs_bound(mesh: &TriMesh) -> f64 {
    mesh.domain_diameter()
}

/// `θ u^n + (1 − θ) u^{n−1}`, elementwise on equal-length vectors.
pub fn blend_vectors(weight: f64, cur: &[f64], prev: &[f64]) -> Vec<f64> {
    cur.iter().zip(prev).map(|(c, p)| weight * c + (1.0 - weight) * p).collect()
}

/// Blends for step `n` of the time nodes.
pub fn step_blends(times: &[f64], n: usize, params: &ThetaParams) -> (Blend, Blend) {
    (
        field::blend(times, n, params.theta),
        field::blend(times, n, params.vartheta),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{constant, from_expr};
    use proptest::prelude::*;

    fn base() -> ProblemData {
        ProblemData::heat(1.0, field::zero(), 1.0)
    }

    #[test]
    fn validation_examples() {
        let mesh = TriMesh::unit_square(4).unwrap();
        let times = [0.0, 0.5, 1.0];
        let mut p = base();
        p.b = constant(1.0);
        p.beta = 1.0;
        let r = validate_assumptions(&p, &mesh, &times).unwrap();
        assert!(r.passed());
        assert!((r.get("A3_reaction").unwrap().worst_value - 1.0).abs() < 1e-15);

        let mut p = base();
        p.a = VectorField::new(from_expr("y").unwrap(), from_expr("-x").unwrap());
        let r = validate_assumptions(&p, &mesh, &times).unwrap();
        assert!(r.passed(), "{:?}", r.failures());
        assert!(r.get("A3_reaction").unwrap().worst_value.abs() < 1e-15);
        assert!(!r.fd_derivatives);

        let mut p = base();
        p.b = constant(-1.0);
        let r = validate_assumptions(&p, &mesh, &times).unwrap();
        assert!(!r.passed());
        let w = r.get("A3_reaction").unwrap();
        assert!(!w.pass && w.worst_value == -1.0);
        assert!(r.to_json().contains("\"witness_x\""));

        let mut p = base();
        p.epsilon = 0.0;
        assert!(validate_assumptions(&p, &mesh, &times).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        for phi in [Phi::OnePlusAbs, Phi::SqrtOnePlusSq] {
            let (r, _, _) = empirical_lipschitz(&phi);
            assert!(r <= 1.0 + 1e-12);
        }
        let (r, _, _) = empirical_lipschitz(&Phi::Affine { slope: 2.0, offset: 0.0 });
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_examples() {
        let mut p = base();
        p.nu = 0.0;
        let c = DerivedConstants::from_gamma(&p, 1.0, 1.0, vec![]);
        assert_eq!((c.kappa, c.kappa_tilde), (0.0, 0.0));
        assert!(c.kappa_ok && c.kappa_tilde_ok);

        p.nu = 1.0;
        p.lipschitz_l = 1.0;
        let c = DerivedConstants::from_gamma(&p, 1.0, 1.0, vec![]);
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.kappa, 2.0);
        assert_eq!(c.kappa_tilde, 75.0);
        assert!(!c.kappa_ok && !c.kappa_tilde_ok);

        assert_eq!(lambda(1.0, 0.01, 4.0), 0.5);
        assert_eq!(mdiam(0.5, 1.0, 1.0), 0.5);
        assert_eq!(mdiam(0.5, 1e-4, 1.0), 1.0);
        assert_eq!(mdiam(0.5, 1.0, 0.0), 0.5);
        assert_eq!(mdiam(0.5, 0.25, 0.0), 1.0);
    }

    #[test]
    fn c_star_without_noise() {
        let mut p = base();
        p.beta = 0.75;
        p.c_b = 4.0 / 3.0;
        let c = DerivedConstants::from_gamma(&p, 2f64.sqrt(), 0.0, vec![]);
        let expect = (4.0 + 3.0 * p.c_b * p.c_b).sqrt();
        assert!((c.c_star_small().unwrap() - expect).abs() < 1e-15);
        assert!((c.c_star_general() - expect).abs() < 1e-15);
    }

    #[test]
    fn friedrichs_diameters() {
        assert!((friedrichs_bound(&TriMesh::unit_square(3).unwrap()) - 2f64.sqrt()).abs() < 1e-15);
        let r = TriMesh::structured(crate::mesh::Rect::new(0.0, 2.0, 0.0, 1.0), 3).unwrap();
        assert!((friedrichs_bound(&r) - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gamma_sampling() {
        let mesh = TriMesh::unit_square(2).unwrap();
        let mut p = base();
        p.g = from_expr("1 + t").unwrap();
        let (g, steps) = gamma_sampled(&p, &mesh, &[0.0, 0.5, 1.0]);
        assert!((g - 2.0).abs() < 1e-15);
        assert_eq!(steps.len(), 2);
        assert!((steps[0] - 1.5).abs() < 1e-15);
        let c = DerivedConstants::from_gamma(&p, 1.0, g, steps);
        assert_eq!(c.gamma_of_t(&[0.0, 0.5, 1.0], 0.25), 1.5);
        assert_eq!(c.gamma_of_t(&[0.0, 0.5, 1.0], 0.75), 2.0);
    }

    proptest! {
        #[test]
        fn lambda_monotone(e1 in 1e-6f64..10.0, e2 in 1e-6f64..10.0, b1 in 0.0f64..10.0, b2 in 0.0f64..10.0) {
            let (elo, ehi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            let (blo, bhi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
            prop_assert!(lambda(1.0, ehi, blo) <= lambda(1.0, elo, blo));
            prop_assert!(lambda(1.0, elo, bhi) <= lambda(1.0, elo, blo));
        }

        #[test]
        fn kappas_homogeneous(nu in 0.0f64..5.0, gamma in 0.0f64..5.0, s in 0.1f64..4.0) {
            let k = kappa(nu, 1.0, 2.0, 0.7, gamma);
            prop_assert!((kappa(s * nu, 1.0, 2.0, 0.7, gamma) - s * k).abs() <= 1e-12 * (1.0 + k * s));
            prop_assert!((kappa(nu, 1.0, 2.0, 0.7, s * gamma) - s * k).abs() <= 1e-12 * (1.0 + k * s));
            let kt = kappa_tilde(nu, 1.0, 1.5, 0.7, gamma);
            prop_assert!((kappa_tilde(s * nu, 1.0, 1.5, 0.7, gamma) - s * kt).abs() <= 1e-12 * (1.0 + kt * s));
            prop_assert!((kappa_tilde(nu, 1.0, 1.5, 0.7, s * gamma) - s * kt).abs() <= 1e-12 * (1.0 + kt * s));
        }
    }
}
