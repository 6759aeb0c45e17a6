use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("control set is empty")]
    EmptyControlSet,
    #[error("invalid control action (v = {v}, theta = {theta})")]
    InvalidAction { v: f64, theta: f64 },
    #[error("duplicate control action (v = {v}, theta = {theta})")]
    DuplicateAction { v: f64, theta: f64 },
    #[error("goal set is empty")]
    EmptyGoalSet,
    #[error("goal coordinates must be finite")]
    NonFiniteGoal,
    #[error("goal {index} lies outside the world bounds")]
    GoalOutOfBounds { index: usize },
    #[error("rationality set is empty")]
    EmptyRationalitySet,
    #[error("rationality coefficients must be finite and positive")]
    NonPositiveBeta,
    #[error("rationality coefficients must be strictly increasing")]
    UnsortedBetas,
    #[error("every action is masked; the effective control set is empty")]
    NoUnmaskedAction,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("observed control is {distance:.4} from the nearest action (tolerance {tolerance:.4}); model mismatch")]
    ModelMismatch { distance: f64, tolerance: f64 },
    #[error("belief has {got} entries but the hypothesis space has {expected}")]
    SizeMismatch { got: usize, expected: usize },
    #[error("stationary mask would leave no action with speed <= {threshold}")]
    EmptyMask { threshold: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be positive and resolution > 0")]
    InvalidSpec,
    #[error("grids have mismatched specs")]
    SpecMismatch,
    #[error("union of an empty grid list")]
    EmptyUnion,
    #[error("grid has {got} values, expected {expected}")]
    ValueCount { got: usize, expected: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("invalid prediction config: {0}")]
    InvalidConfig(&'static str),
    #[error("enumeration needs {needed} evaluations, above the cap of {cap}; use the Monte-Carlo predictor")]
    CapExceeded { needed: u64, cap: u64 },
    #[error("no human inputs supplied")]
    NoHumans,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(&'static str),
    #[error("start or goal cell is out of bounds")]
    OutOfBounds,
    #[error("all rollout costs are non-finite")]
    NonFiniteCosts,
    #[error("path is empty")]
    EmptyPath,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("run log: {0}")]
    Serialize(#[from] serde_json::Error),
}
