use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage that produced an error, used to tag construction failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Reference,
    Collar,
    Moser,
    Compose,
    Verify,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Reference => "reference",
            Stage::Collar => "collar",
            Stage::Moser => "moser",
            Stage::Compose => "compose",
            Stage::Verify => "verify",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("config line {line}, column {column}: {message}")]
    ConfigSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("function `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("evaluation domain error: {0}")]
    EvalDomain(String),

    #[error("argument out of domain: {0}")]
    OutOfDomain(String),

    #[error("domain has no boundary, so no collar chart exists")]
    NoCollar,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("incompatible right-hand side: discrete mass {mass:e} exceeds tolerance {tol:e}")]
    Incompatible { mass: f64, tol: f64 },

    #[error(
        "linear solver stagnated at relative residual {residual:e} after {iterations} iterations"
    )]
    Stagnation {
        residual: f64,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("flow integration error: {0}")]
    Integration(String),

    #[error("infeasible collar equation: {0}")]
    Infeasible(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("map is not monotone: {0}")]
    NonMonotone(String),

    #[error("map is not injective: {0}")]
    NonInjective(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
