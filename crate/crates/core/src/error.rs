use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("data length {actual} does not match shape (expected {expected})")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("no fields given")]
    Empty,
    #[error("pixel {pixel} is not a probability distribution over channels")]
    InvalidProbability { pixel: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid geometry parameter: {0}")]
    InvalidParameter(String),
    #[error("incompatible geometry: {0}")]
    Incompatible(String),
    #[error("cell patch outside tissue patch (c_x={c_x}, c_y={c_y})")]
    CellOutsideTissue { c_x: f64, c_y: f64 },
    #[error("labels require nearest resampling")]
    LabelsRequireNearest,
    #[error("field has shape {actual:?}, expected side {expected}")]
    FieldSize {
        expected: usize,
        actual: (usize, usize, usize),
    },
    #[error("point ({x}, {y}) lies outside the {grid} grid")]
    PointOutside { x: f64, y: f64, grid: &'static str },
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("point {index} at ({x}, {y}) is outside the {side}x{side} grid")]
    PointOutsideGrid {
        index: usize,
        x: f64,
        y: f64,
        side: usize,
    },
    #[error("point {index} has class {class_id}, but only classes 1..={num_classes} exist")]
    UnknownClass {
        index: usize,
        class_id: u8,
        num_classes: usize,
    },
    #[error("radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("invalid annotation row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no evaluable class")]
    NoEvaluableClass,
    #[error("need at least {needed} runs, got {got}")]
    TooFewRuns { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    /// Every violation found while validating a dataset.
    #[error("dataset validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    BadRatios([f64; 3]),
    #[error("invalid pairing request: {0}")]
    Pairing(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Labels(#[from] LabelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },
    #[error("tissue labels are required for the label-leaking variant")]
    MissingTissueLabels,
    #[error("variant {0} does not use a tissue branch")]
    NoTissueBranch(String),
    #[error("non-finite loss at step {step}: cell={loss_cell}, tissue={loss_tissue}")]
    NonFiniteLoss {
        step: usize,
        loss_cell: f64,
        loss_tissue: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
