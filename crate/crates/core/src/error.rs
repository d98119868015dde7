use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("{what} is not finite at x={x}, y={y}")]
    NonFinite { what: String, x: f64, y: f64 },

    #[error("λ too large for grid: exponent {exponent:.3e} at x={x}, y={y}, λ={lambda}")]
    Overflow {
        x: f64,
        y: f64,
        lambda: f64,
        exponent: f64,
    },

    #[error("no sign change of F(y={y}, ·) - 1/η around λ ∈ [{lo}, {hi}] (η={eta})")]
    BracketExpansion { y: f64, eta: f64, lo: f64, hi: f64 },

    #[error("no renewal: b vanishes on the whole age grid at y={y}")]
    Sterile { y: f64 },

    #[error("accuracy check failed at y={y}: {message}")]
    Accuracy { y: f64, message: String },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("time {t} outside the recorded range [{start}, {end}]")]
    Range { t: f64, start: f64, end: f64 },

    #[error("instability at step {step}: density {value} at node (i={i}, j={j})")]
    Instability {
        step: usize,
        i: usize,
        j: usize,
        value: f64,
    },

    #[error("inconsistent factorization at node (i={i}, j={j}): exp(-u/ε) overflows")]
    Inconsistent { i: usize, j: usize },

    #[error("exponent overflow in η_ε at y={y}, z={z}: {exponent:.3e}")]
    EtaOverflow { y: f64, z: f64, exponent: f64 },

    #[error("concavity lost at t={t}, y={y}: second derivative {hessian}")]
    ConcavityLoss { t: f64, y: f64, hessian: f64 },

    #[error("time derivative not certified after {doublings} doublings of R (last R={r}, sup|∂tU|={sup})")]
    UnboundedDerivative { doublings: usize, r: f64, sup: f64 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps the error with module/operation/index context.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by invalid input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Syntax { .. }
                | Error::UnknownIdentifier { .. }
                | Error::Grid(_)
                | Error::Config { .. }
                | Error::Domain(_)
        )
    }
}
