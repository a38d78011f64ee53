//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptivity::AdaptPolicy;
use crate::error::{Error, Result};
use crate::field::{from_expr, Field, Phi, VectorField};
use crate::mesh::{Rect, TriMesh};
use crate::problem::{ProblemData, ThetaParams};
use crate::solver::{SolverKind, SolverOptions};
use crate::stabilization::StabilizationSpec;
use crate::stepper::{PicardOptions, Scheme, TimePartition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub epsilon: f64,
    #[serde(default)]
    pub nu: f64,
    /// Lipschitz constant of `phi`; defaults to the known one.
    #[serde(rename = "L", default)]
    pub lipschitz: Option<f64>,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "one")]
    pub c_b: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default = "default_phi")]
    pub phi: String,
    #[serde(default = "zero_expr")]
    pub g: String,
    #[serde(default = "zero_expr")]
    pub a1: String,
    #[serde(default = "zero_expr")]
    pub a2: String,
    #[serde(default = "zero_expr")]
    pub b: String,
    #[serde(default = "zero_expr")]
    pub u0: String,
    /// Additive source.
    #[serde(default = "zero_expr")]
    pub f: String,
    /// Friedrichs constant; `diam(Ω)` when absent.
    #[serde(default)]
    pub c_f: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn zero_expr() -> String {
    "0".into()
}

fn default_phi() -> String {
    "one_plus_abs".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// Subdivisions per side of the structured rectangle mesh.
    pub n: usize,
    pub rect: [f64; 4],
    /// Mesh file in the native text format; overrides `n` and `rect`.
    pub file: Option<PathBuf>,
    pub refine: usize,
    pub degree: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            n: 8,
            rect: [0.0, 1.0, 0.0, 1.0],
            file: None,
            refine: 0,
            degree: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub steps: Option<usize>,
    pub tau: Option<f64>,
    pub theta: f64,
    pub vartheta: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            steps: None,
            tau: None,
            theta: 1.0,
            vartheta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub kind: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
    pub picard_max_iter: usize,
    pub picard_tol: f64,
    pub allow_nonconvergence: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverOptions::default();
        let p = PicardOptions::default();
        Self {
            kind: s.kind,
            tol: s.tol,
            max_iter: s.max_iter,
            picard_max_iter: p.max_iter,
            picard_tol: p.tol,
            allow_nonconvergence: p.allow_nonconvergence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub vtk: bool,
    pub dumps: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { vtk: true, dumps: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub case: String,
    /// Mesh subdivisions of the convergence levels.
    pub levels: Vec<usize>,
    pub fine_levels: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            case: "heat".into(),
            levels: vec![4, 8, 16, 32],
            fine_levels: 4,
            samples: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub stabilization: StabilizationSpec,
    #[serde(default)]
    pub adapt: AdaptPolicy,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub verify: VerifySection,
    /// SHA-256 of the config text.
    #[serde(skip)]
    pub hash: String,
}

fn expr(name: &str, src: &str) -> Result<Field> {
    from_expr(src).map_err(|e| Error::Config(format!("problem.{name}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.hash = hex_digest(text.as_bytes());
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn check(&self) -> Result<()> {
        if Phi::parse(&self.problem.phi).is_none() {
            return Err(Error::Config(format!(
                "problem.phi `{}` is not one of one_plus_abs, sqrt_one_plus_sq",
                self.problem.phi
            )));
        }
        if self.time.steps.is_some() && self.time.tau.is_some() {
            return Err(Error::Config("time.steps and time.tau are exclusive".into()));
        }
        if !matches!(self.mesh.degree, 1 | 2) {
            return Err(Error::Config(format!("mesh.degree must be 1 or 2, got {}", self.mesh.degree)));
        }
        self.adapt.check()?;
        self.stabilization.check()?;
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemData> {
        let s = &self.problem;
        let phi = Phi::parse(&s.phi).expect("checked at parse time");
        Ok(ProblemData {
            epsilon: s.epsilon,
            nu: s.nu,
            lipschitz_l: s.lipschitz.unwrap_or_else(|| phi.lipschitz()),
            phi,
            g: expr("g", &s.g)?,
            a: VectorField::new(expr("a1", &s.a1)?, expr("a2", &s.a2)?),
            b: expr("b", &s.b)?,
            u0: expr("u0", &s.u0)?,
            source: expr("f", &s.f)?,
            t_final: s.t_final,
            beta: s.beta,
            c_b: s.c_b,
        })
    }

    pub fn params(&self) -> Result<ThetaParams> {
        ThetaParams::new(self.time.theta, self.time.vartheta)
    }

    pub fn scheme(&self) -> Result<Scheme> {
        let mut s = Scheme::new(self.problem()?)
            .with_params(self.params()?)
            .with_stab(self.stabilization);
        s.solver = SolverOptions {
            kind: self.solver.kind,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
        };
        s.picard = PicardOptions {
            max_iter: self.solver.picard_max_iter,
            tol: self.solver.picard_tol,
            allow_nonconvergence: self.solver.allow_nonconvergence,
        };
        s.degree = self.mesh.degree;
        Ok(s)
    }

    pub fn mesh(&self) -> Result<TriMesh> {
        let m = match &self.mesh.file {
            Some(f) => TriMesh::read_file(f)?,
            None => {
                let [x0, x1, y0, y1] = self.mesh.rect;
                TriMesh::structured(Rect::new(x0, x1, y0, y1), self.mesh.n)?
            }
        };
        Ok(m.refine_uniform_times(self.mesh.refine))
    }

    pub fn times(&self) -> Result<TimePartition> {
        let t = self.problem.t_final;
        match (self.time.steps, self.time.tau) {
            (_, Some(tau)) => TimePartition::with_tau(t, tau),
            (Some(n), None) => TimePartition::uniform(t, n),
            (None, None) => TimePartition::uniform(t, 10),
        }
    }

    /// First line of every output file.
    pub fn header(&self) -> String {
        format!("nlcd {} config sha256:{}", env!("CARGO_PKG_VERSION"), self.hash)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = "[problem]\nepsilon = 1.0\nT = 0.1\nu0 = \"sin(pi*x)*sin(pi*y)\"\n";

    #[test]
    fn minimal_heat_config() {
        let c = RunConfig::parse(HEAT).unwrap();
        let p = c.params().unwrap();
        assert_eq!((p.theta, p.vartheta), (1.0, 0.0));
        let prob = c.problem().unwrap();
        assert_eq!(prob.nu, 0.0);
        assert!(prob.a.is_zero() && prob.b.is_zero());
        assert_eq!(c.mesh().unwrap().n_triangles(), 128);
        assert_eq!(c.times().unwrap().n_steps(), 10);
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn phi_names() {
        let c = RunConfig::parse(&format!("{HEAT}phi = \"one_plus_abs\"\n")).unwrap();
        let p = c.problem().unwrap();
        assert_eq!(p.phi.eval(-2.0), 3.0);
        assert_eq!(p.lipschitz_l, 1.0);
        assert!(RunConfig::parse(&format!("{HEAT}phi = \"tanh\"\n")).is_err());
    }

    #[test]
    fn unknown_and_missing_keys() {
        let e = RunConfig::parse(&format!("{HEAT}foo = 1\n")).unwrap_err().to_string();
        assert!(e.contains("foo"), "{e}");
        let e = RunConfig::parse("[problem]\nT = 1.0\n").unwrap_err().to_string();
        assert!(e.contains("epsilon"), "{e}");
        let e = RunConfig::parse("[problem]\nepsilon = 1.0\nT = \n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = RunConfig::parse(&format!("{HEAT}[adapt]\nrefine_fraction = 2.0\n")).unwrap_err();
        assert!(e.to_string().contains("refine_fraction"));
    }

    #[test]
    fn bad_expression_names_key() {
        let c = RunConfig::parse(&format!("{HEAT}g = \"sin(\"\n")).unwrap();
        assert!(c.problem().unwrap_err().to_string().contains("problem.g"));
    }
}
