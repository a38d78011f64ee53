use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("meshes do not descend from the same bisection forest")]
    ForestMismatch,
    #[error("mesh file line {line}: {msg}")]
    MeshFormat { line: usize, msg: String },
    #[error("dof vector format: {0}")]
    DofFormat(String),
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("fixed-point iteration did not converge after {iterations} iterations (last increment {increment:e})")]
    PicardDiverged { iterations: usize, increment: f64 },
    #[error("eigenvalue iteration did not converge after {0} iterations")]
    EigenDiverged(usize),
    #[error("expression error at column {column}: {msg}")]
    Expr { column: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("assumption check failed: {0}")]
    Validation(String),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }

    /// True when the failure is a linear or non-linear solver breakdown.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::Solver(_) | Error::PicardDiverged { .. } | Error::EigenDiverged(_) => true,
            Error::Step { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
