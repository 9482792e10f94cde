use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LensError {
    #[error("total internal reflection: cos(incidence) = {cos_incidence}, index ratio = {kappa}")]
    TotalInternalReflection { cos_incidence: f64, kappa: f64 },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("non-positive thickness {d} at t = {t}")]
    NonpositiveThickness { t: f64, d: f64 },

    #[error("anchor slope {slope} at t0 = {t0} is not flat")]
    AnchorInvalid { t0: f64, slope: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("map is not a contraction: C0 + C1 = {c0} + {c1} >= 1")]
    NotContractive { c0: f64, c1: f64 },

    #[error("iterates leave the neighbourhood of the anchor; last delta tried = {delta}")]
    DeltaTooLarge { delta: f64 },

    #[error("composed argument z1 = {z1} out of range at t = {t}")]
    CompositionOutOfRange { t: f64, z1: f64 },

    #[error("evaluation outside the domain of H: {0}")]
    EvaluationOutsideDomain(String),

    #[error("singular evaluation: {guard}")]
    SingularEvaluation { guard: &'static str },

    #[error("ray misses the sampled upper profile")]
    MissedSurface,

    #[error("indices must be strictly increasing: {0}")]
    Ordering(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("problem is not feasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, LensError>;
