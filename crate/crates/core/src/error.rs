use thiserror::Error;

/// Errors raised by model evaluation, simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RestoreError {
    #[error("non-finite evaluation at {x:?}: {what}")]
    Evaluation { x: Vec<f64>, what: String },

    #[error("negative regeneration rate {kappa} at {x:?}; increase C or change mu")]
    NegativeRate { x: Vec<f64>, kappa: f64 },

    #[error("rate {rate} exceeds thinning bound {bound} at {x:?}")]
    BoundViolation { x: Vec<f64>, rate: f64, bound: f64 },

    #[error("rate {kappa} below the lower bound {floor} at {x:?}")]
    AssumptionViolation { x: Vec<f64>, kappa: f64, floor: f64 },

    #[error("envelope violated at {x:?}: pi/mu ratio {ratio} exceeds M = {m}")]
    Envelope { x: Vec<f64>, ratio: f64, m: f64 },

    #[error("all competing clock rates are zero")]
    DegenerateClock,

    #[error("event cap of {cap} reached; the process may be explosive")]
    ExplosionSuspected { cap: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("minimal regeneration density does not vanish on the box boundary (max boundary value {boundary_value:e})")]
    BoxTooSmall { boundary_value: f64 },

    #[error("kappa floor {floor} lies below the partial rate everywhere on the grid")]
    FloorTooLow { floor: f64 },

    #[error("generator is not irreducible (null space dimension {nullity})")]
    Rank { nullity: usize },

    #[error("simulation produced a non-finite state")]
    Simulation,
}

pub type Result<T> = std::result::Result<T, RestoreError>;
