//! Dörfler marking, mesh adaptation between steps and step-size control.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Estimator, FriedrichsChoice, StepIndicators};
use crate::mesh::{NodeId, TriMesh};
use crate::stepper::{NextStep, Scheme, StepHook, Trajectory};

/// Largest admissible `C_{T̃,T}` between consecutive meshes.
pub const TRANSITION_BOUND: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptPolicy {
    pub enabled: bool,
    pub refine_fraction: f64,
    pub coarsen_fraction: f64,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    /// No refinement beyond this many elements.
    pub max_elements: usize,
}

impl Default for AdaptPolicy {
    fn default() -> Self {
        Self {
            enabled: false,
            refine_fraction: 0.5,
            coarsen_fraction: 0.05,
            tau_min: None,
            tau_max: None,
            max_elements: 200_000,
        }
    }
}

impl AdaptPolicy {
    pub fn check(&self) -> Result<()> {
        for (name, f) in [("refine_fraction", self.refine_fraction), ("coarsen_fraction", self.coarsen_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("adapt.{name} = {f} is outside [0, 1]")));
            }
        }
        if let (Some(a), Some(b)) = (self.tau_min, self.tau_max) {
            if !(a > 0.0 && a <= b) {
                return Err(Error::Config(format!("adapt.tau_min = {a} and tau_max = {b} are inconsistent")));
            }
        }
        Ok(())
    }

    pub fn controls_time(&self) -> bool {
        self.tau_min.is_some() || self.tau_max.is_some()
    }
}

/// Squared-sum Dörfler marking; ties go to the smaller index.
pub fn mark_doerfler(values: &[f64], fraction: f64) -> Vec<usize> {
    if fraction <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let total: f64 = order.iter().map(|&i| values[i] * values[i]).sum();
    if total == 0.0 {
        return Vec::new();
    }
    let target = fraction.min(1.0) * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        if acc >= target || values[i] == 0.0 {
            break;
        }
        acc += values[i] * values[i];
        out.push(i);
    }
    out
}

/// Largest tail of smallest values whose squared sum stays below
/// `fraction` of the total.
pub fn mark_coarsen(values: &[f64], fraction: f64) -> Vec<usize> {
    if fraction <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let total: f64 = values.iter().map(|v| v * v).sum();
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        acc += values[i] * values[i];
        if acc > fraction * total {
            break;
        }
        out.push(i);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AdaptReport {
    pub refine_requested: usize,
    pub coarsen_requested: usize,
    pub removed_vertices: usize,
    /// Coarsening requests undone, by element of the input mesh.
    pub rolled_back: Vec<usize>,
    pub transition: f64,
    pub shape: f64,
}

fn apply(mesh: &TriMesh, refine_nodes: &[NodeId], coarsen: &[usize]) -> (TriMesh, TriMesh, usize) {
    let (c, rep) = mesh.coarsen(coarsen);
    let idx = c.leaf_index();
    let marks: Vec<usize> = refine_nodes.iter().filter_map(|l| idx.get(l).copied()).collect();
    let r = c.refine(&marks);
    (c, r, rep.removed_vertices)
}

/// Coarsens, then refines, keeping the transition constant against `mesh`
/// at most 2 and the shape below `shape_bound`.
pub fn adapt_space(mesh: &TriMesh, refine: &[usize], coarsen: &[usize], shape_bound: f64) -> Result<(TriMesh, AdaptReport)> {
    let refine_set: HashSet<usize> = refine.iter().copied().collect();
    if coarsen.iter().any(|k| refine_set.contains(k)) {
        return Err(Error::Mesh("refine and coarsen sets overlap".into()));
    }
    let refine_nodes: Vec<NodeId> = refine.iter().map(|&k| mesh.leaves()[k]).collect();
    let mut coarsen: Vec<usize> = coarsen.to_vec();
    let mut report = AdaptReport {
        refine_requested: refine.len(),
        coarsen_requested: coarsen.len(),
        ..Default::default()
    };
    let original: HashSet<NodeId> = mesh.leaves().iter().copied().collect();
    loop {
        let (c, r, removed) = apply(mesh, &refine_nodes, &coarsen);
        // merged parents that the refinement closure split again
        let finals: HashSet<NodeId> = r.leaves().iter().copied().collect();
        let undone: HashSet<NodeId> = c
            .leaves()
            .iter()
            .filter(|l| !original.contains(l) && !finals.contains(l))
            .copied()
            .collect();
        let transition = r.transition_to(mesh)?;
        if undone.is_empty() && transition <= TRANSITION_BOUND * (1.0 + 1e-12) {
            report.removed_vertices = removed;
            report.transition = transition;
            report.shape = r.metrics().shape;
            if report.shape > shape_bound * (1.0 + 1e-9) {
                return Err(Error::Mesh(format!(
                    "shape {} exceeds the forest bound {shape_bound}",
                    report.shape
                )));
            }
            return Ok((r, report));
        }
        let before = coarsen.len();
        if !undone.is_empty() {
            coarsen.retain(|&k| {
                let keep = mesh.parent_of(k).is_none_or(|p| !undone.contains(&p));
                if !keep {
                    report.rolled_back.push(k);
                }
                keep
            });
        }
        if coarsen.len() == before {
            // transition violation: give back the second half of the requests
            let keep = coarsen.len() / 2;
            report.rolled_back.extend(coarsen.drain(keep..));
        }
        report.rolled_back.sort_unstable();
    }
}

/// Shape bound of the refinement forest: newest-vertex bisection produces
/// at most four similarity classes per root triangle.
pub fn forest_shape_bound(initial: &TriMesh) -> f64 {
    let mut m = initial.clone();
    let mut s = m.metrics().shape;
    for _ in 0..4 {
        m = m.refine_uniform();
        s = s.max(m.metrics().shape);
    }
    s
}

/// `τ_n clamp((η/temporal)^{1/2}, ½, 2)`, then clamped to `[τ_min, τ_max]`.
pub fn control_timestep(ind: &StepIndicators, tau_min: f64, tau_max: f64) -> f64 {
    // nothing to balance when both vanish
    let factor = if ind.eta_spatial == 0.0 && ind.temporal_linear == 0.0 {
        1.0
    } else {
        (ind.eta_spatial / ind.temporal_linear.max(f64::MIN_POSITIVE)).sqrt().clamp(0.5, 2.0)
    };
    (ind.tau_n * factor).clamp(tau_min, tau_max)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptRecord {
    pub n: usize,
    pub elements: usize,
    pub next_elements: usize,
    pub next_tau: Option<f64>,
    pub report: AdaptReport,
}

/// Adapts the mesh and the step after every step.
pub struct AdaptiveHook<'a> {
    pub policy: AdaptPolicy,
    scheme: &'a Scheme,
    estimator: Option<Estimator<'a>>,
    shape_bound: f64,
    pub records: Vec<AdaptRecord>,
}

impl<'a> AdaptiveHook<'a> {
    pub fn new(scheme: &'a Scheme, policy: AdaptPolicy, initial: &TriMesh) -> Self {
        Self {
            policy,
            scheme,
            estimator: None,
            shape_bound: forest_shape_bound(initial),
            records: Vec::new(),
        }
    }
}

impl StepHook for AdaptiveHook<'_> {
    fn after_step(&mut self, n: usize, traj: &Trajectory) -> Result<NextStep> {
        if !self.policy.enabled {
            return Ok(NextStep::default());
        }
        let scheme = self.scheme;
        let est = self
            .estimator
            .get_or_insert_with(|| Estimator::new(scheme, traj, FriedrichsChoice::Diameter));
        let ind = est.step(traj, n)?;
        let mesh = traj.space(n).mesh();
        let eta: Vec<f64> = ind.eta_elements.iter().map(|e| e.max(0.0).sqrt()).collect();
        let mut refine = mark_doerfler(&eta, self.policy.refine_fraction);
        if mesh.n_triangles() >= self.policy.max_elements {
            refine.clear();
        }
        let marked: HashSet<usize> = refine.iter().copied().collect();
        let coarsen: Vec<usize> = mark_coarsen(&eta, self.policy.coarsen_fraction)
            .into_iter()
            .filter(|k| !marked.contains(k))
            .collect();
        let (next, report) = adapt_space(mesh, &refine, &coarsen, self.shape_bound)?;
        let tau = self.policy.controls_time().then(|| {
            control_timestep(
                &ind,
                self.policy.tau_min.unwrap_or(0.0),
                self.policy.tau_max.unwrap_or(f64::INFINITY),
            )
        });
        self.records.push(AdaptRecord {
            n,
            elements: mesh.n_triangles(),
            next_elements: next.n_triangles(),
            next_tau: tau,
            report,
        });
        Ok(NextStep { mesh: Some(next), tau })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::ConvBranch;
    use crate::field::from_expr;
    use crate::problem::ProblemData;
    use crate::stepper::{run_with, TimePartition};

    #[test]
    fn doerfler_examples() {
        assert_eq!(mark_doerfler(&[3.0, 2.0, 1.0], 0.6), vec![0]);
        assert_eq!(mark_doerfler(&[1.0, 3.0, 2.0], 0.7), vec![1, 2]);
        assert_eq!(mark_doerfler(&[3.0, 0.0, 1.0], 1.0), vec![0, 2]);
        assert!(mark_doerfler(&[3.0, 2.0], 0.0).is_empty());
        assert!(mark_doerfler(&[0.0, 0.0], 0.5).is_empty());
        // ties by index
        assert_eq!(mark_doerfler(&[1.0, 1.0, 1.0, 1.0], 0.5), vec![0, 1]);
    }

    #[test]
    fn doerfler_minimality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let v: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
            let f = rng.random_range(0.05..0.95);
            let m = mark_doerfler(&v, f);
            let total: f64 = v.iter().map(|x| x * x).sum();
            let s: f64 = m.iter().map(|&i| v[i] * v[i]).sum();
            assert!(s >= f * total);
            for &i in &m {
                assert!(s - v[i] * v[i] < f * total);
            }
        }
    }

    #[test]
    fn coarsen_tail() {
        let v = [3.0, 0.1, 2.0, 0.2];
        // squares 9, 0.01, 4, 0.04; 5% of 13.05 is 0.6525
        assert_eq!(mark_coarsen(&v, 0.05), vec![1, 3]);
        assert!(mark_coarsen(&v, 0.0).is_empty());
    }

    #[test]
    fn empty_sets_are_identity() {
        let m = TriMesh::unit_square(4).unwrap();
        let (r, rep) = adapt_space(&m, &[], &[], f64::INFINITY).unwrap();
        assert_eq!(r.leaves(), m.leaves());
        assert_eq!(rep.transition, 1.0);
    }

    #[test]
    fn refine_all_rounds() {
        let mut m = TriMesh::unit_square(2).unwrap();
        let bound = forest_shape_bound(&m);
        for _ in 0..3 {
            let all: Vec<usize> = (0..m.n_triangles()).collect();
            let (r, rep) = adapt_space(&m, &all, &[], bound).unwrap();
            assert_eq!(r.n_triangles(), 2 * m.n_triangles());
            assert!(rep.transition <= 2.0);
            m = r;
        }
    }

    #[test]
    fn coarsen_then_refine_and_conflicts() {
        let m = TriMesh::unit_square(2).unwrap();
        let r = m.refine_uniform();
        let all: Vec<usize> = (0..r.n_triangles()).collect();
        // coarsening everything returns to the parent mesh
        let (c, rep) = adapt_space(&r, &[], &all, f64::INFINITY).unwrap();
        assert_eq!(c.leaves(), m.leaves());
        assert!(rep.rolled_back.is_empty());
        assert!(rep.transition <= 2.0);
        // refining one element's neighbourhood conflicts with merging it
        let (rr, rep) = adapt_space(&r, &[0], &all[1..], f64::INFINITY).unwrap();
        assert!(!rep.rolled_back.is_empty());
        rr.check_conformity().unwrap();
        assert!(rr.transition_to(&r).unwrap() <= 2.0);
        assert!(adapt_space(&r, &[0], &[0], f64::INFINITY).is_err());
    }

    fn indicators(eta: f64, temporal: f64) -> StepIndicators {
        StepIndicators {
            n: 1,
            t_n: 0.1,
            tau_n: 0.1,
            eta_spatial: eta,
            eta_elements: vec![],
            theta_data_spatial: 0.0,
            theta_cip: 0.0,
            energy_jump: 0.0,
            conv_dual: 0.0,
            conv_branch: ConvBranch::Domdiff,
            conv_domdiff: 0.0,
            conv_domconv: 0.0,
            eta_aux: 0.0,
            theta_aux: 0.0,
            aux_energy: 0.0,
            temporal_linear: temporal,
            temporal_nonlinear: 0.0,
            temporal_nonlinear_energy: 0.0,
            data_residual: 0.0,
            data: Default::default(),
            gamma_n: 0.0,
        }
    }

    #[test]
    fn timestep_control() {
        let inf = f64::INFINITY;
        assert_eq!(control_timestep(&indicators(1.0, 1.0), 0.0, inf), 0.1);
        assert_eq!(control_timestep(&indicators(1.0, 100.0), 0.0, inf), 0.05);
        assert_eq!(control_timestep(&indicators(100.0, 1.0), 0.0, inf), 0.2);
        assert_eq!(control_timestep(&indicators(100.0, 1.0), 0.0, 0.15), 0.15);
        assert_eq!(control_timestep(&indicators(0.0, 0.0), 0.0, inf), 0.1);
    }

    #[test]
    fn adaptive_run_keeps_transition_bound_and_is_deterministic() {
        let p = ProblemData::heat(0.05, from_expr("exp(-40*((x-0.3)^2+(y-0.4)^2))").unwrap(), 0.05);
        let scheme = Scheme::new(p);
        let mesh = TriMesh::unit_square(4).unwrap();
        let policy = AdaptPolicy {
            enabled: true,
            tau_min: Some(1e-3),
            tau_max: Some(0.02),
            ..Default::default()
        };
        let go = || {
            let mut hook = AdaptiveHook::new(&scheme, policy.clone(), &mesh);
            let traj = run_with(&scheme, &mesh, TimePartition::uniform(0.05, 4).unwrap(), &mut hook).unwrap();
            (traj, hook.records)
        };
        let (t1, r1) = go();
        let (t2, r2) = go();
        assert_eq!(t1.times.times(), t2.times.times());
        assert_eq!(t1.values, t2.values);
        assert!(r1.iter().all(|r| r.report.transition <= 2.0));
        assert!(r1.iter().any(|r| r.next_elements > r.elements));
        assert_eq!(r1.len(), r2.len());
        for n in 1..=t1.n_steps() {
            assert!(t1.diagnostics[n - 1].residual <= 1e-10);
        }
    }
}
