use thiserror::Error;

/// Errors raised across the library.
///
/// Configuration problems name the offending field so that front ends can
/// report them without further context.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("node index {index} out of range for a graph with {n_nodes} nodes")]
    NodeOutOfRange { index: usize, n_nodes: usize },

    #[error("self-loop ({0}, {0}) is not a valid edge")]
    SelfLoop(usize),

    #[error("changepoint k = {k} outside the retained window [{oldest}, {t}]")]
    OutOfWindow { k: u64, oldest: u64, t: u64 },

    #[error("node set needs at least 2 members, got {0}")]
    SetTooSmall(usize),

    #[error("zero-length window: k equals the current time {0}")]
    EmptyWindow(u64),

    #[error("snapshot has {got} nodes but the detector expects {expected}")]
    NodeCountMismatch { expected: usize, got: usize },

    #[error("no recursive form exists for the statistic with unknown p1")]
    NoRecursiveForm,

    #[error("no positive root: target {target} is not above the untilted mean {mean}")]
    NoRoot { target: f64, mean: f64 },

    #[error("root bracket exceeded theta = {0}")]
    RootBracket(f64),

    #[error("quadrature did not reach tolerance {tol} (estimated error {err})")]
    Quadrature { tol: f64, err: f64 },

    #[error("every term of the bound vanished; the bound is undefined for b = {0}")]
    BoundUndefined(f64),

    #[error("could not bracket the threshold: {0}")]
    Bracket(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

/// Checks that `p` is a probability in the closed unit interval.
pub(crate) fn check_unit(field: &'static str, p: f64) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(field, format!("{p} is not a probability")))
    }
}

/// Checks that `p` lies strictly inside (0, 1).
pub(crate) fn check_open_unit(field: &'static str, p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("{p} is not in the open interval (0, 1)")))
    }
}
