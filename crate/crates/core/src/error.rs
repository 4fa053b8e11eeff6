use thiserror::Error;

/// Which half of the two-stage iteration produced a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Compensator,
    Filter,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Compensator => f.write_str("stage 1 (compensator)"),
            Stage::Filter => f.write_str("stage 2 (filter)"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("denominator vanishes at omega = {omega} rad/s")]
    PoleOnGrid { omega: f64 },
    #[error("resulting denominator is identically zero")]
    DegenerateResult,
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("transfer function is improper (numerator degree {num} > denominator degree {den})")]
    ImproperTransferFunction { num: usize, den: usize },
    #[error("no CCM equilibrium: {0}")]
    NoEquilibrium(String),
    #[error("closed-loop denominator is identically zero")]
    DegenerateLoop,
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("frequency grid is empty")]
    EmptyGrid,
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),
    #[error("{stage} subproblem infeasible at iteration {iteration}")]
    InfeasibleSubproblem { stage: Stage, iteration: usize },
    #[error("{stage} solver failure at iteration {iteration}: {reason}")]
    SolverFailure {
        stage: Stage,
        iteration: usize,
        reason: String,
    },
    #[error("{stage} bound increased at iteration {iteration}: {previous} -> {current}")]
    NonDescent {
        stage: Stage,
        iteration: usize,
        previous: f64,
        current: f64,
    },
    #[error("{stage} linearization point is itself unstable at iteration {iteration}")]
    UnstableIterate { stage: Stage, iteration: usize },
    #[error("composite is improper: {0}")]
    ImproperComposite(String),
    #[error("simulation state became non-finite at t = {t} s")]
    NonFiniteState { t: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
