use thiserror::Error;

use crate::geometry::Vec2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("{side} cheek is not tangent to the wall: tangent deviates {deviation:e} rad from horizontal")]
    TangencyViolation { side: &'static str, deviation: f64 },
    #[error("corner {corner} has interior angle {gamma} outside ({gamma0}, π − {gamma0})")]
    CornerAngleViolation { corner: usize, gamma: f64, gamma0: f64 },
    #[error("inward normal on arc {arc} at ({}, {}) deviates {deviation} rad from vertical (limit {alpha0})", at.x, at.y)]
    NormalConeViolation { arc: usize, at: Vec2, deviation: f64, alpha0: f64 },
    #[error("arc {arc} has curvature {kappa} outside the allowed range")]
    CurvatureOutOfRange { arc: usize, kappa: f64 },
    #[error("boundary does not close: {detail}")]
    OpenBoundary { detail: String },
    #[error("arc {arc} is not traversed clockwise, so it does not bulge into the cavity")]
    NotConvex { arc: usize },
    #[error("arc {arc} has degenerate sweep {sweep}")]
    DegenerateArc { arc: usize, sweep: f64 },
    #[error("boundary is not simple: {detail}")]
    SelfIntersection { detail: String },
    #[error("shape spec must give exactly one of `preset`, `parametric`, `arcs`")]
    AmbiguousShape,
    #[error("bad validation tolerance: {detail}")]
    BadTolerance { detail: String },
    #[error("ray from ({}, {}) along ({}, {}) hits nothing", origin.x, origin.y, direction.x, direction.y)]
    NoIntersection { origin: Vec2, direction: Vec2 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("visit exceeded {cap} collisions (theta_in = {theta_in}, offset = {offset})")]
    CollisionCapExceeded { cap: usize, theta_in: f64, offset: f64 },
    #[error("grazing angle {theta}: |sin θ| below {sin_floor:e}")]
    GrazingDegenerate { theta: f64, sin_floor: f64 },
    #[error("collision Jacobian is singular: sin θ = {sin_theta:e}")]
    SingularCollision { sin_theta: f64 },
    #[error("flight Jacobian is singular: sin θ = {sin_theta:e}")]
    SingularFlight { sin_theta: f64 },
    #[error("theta = {theta} is within {probe:e} of a branch boundary")]
    BranchBoundary { theta: f64, probe: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProcessError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid nu spec: {0}")]
    InvalidNu(String),
    #[error("chain {chain} failed at step {step}: {source}")]
    Chain { chain: usize, step: u64, source: DynamicsError },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("{0} outside the domain")]
    DomainError(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("all correlations are below the Monte Carlo noise floor {floor:e}")]
    NoiseFloor { floor: f64 },
    #[error(transparent)]
    Process(#[from] ProcessError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransferError {
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("cell {cell} received no valid samples")]
    CellStarved { cell: usize },
    #[error("power iteration did not converge after {iterations} iterations (last λ = {last_re} + {last_im}i, residual {residual:e})")]
    NoConvergence { iterations: usize, last_re: f64, last_im: f64, residual: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}
