use thiserror::Error;

/// Errors produced by the simulator, controller, objective and optimizer.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration (ship parameters, training setup).
    #[error("configuration error: {0}")]
    Config(String),

    /// A parameter vector lies outside its search box.
    #[error("parameter `{name}` = {value} outside [{lower}, {upper}]")]
    ParameterBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    /// `J(psi) B` is too ill-conditioned to invert.
    #[error("control matrix ill-conditioned (condition number {condition:e})")]
    ControlSingularity { condition: f64 },

    /// Non-finite state or excursion beyond the divergence radius.
    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite fitness at candidate {index}")]
    NonFiniteFitness { index: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
