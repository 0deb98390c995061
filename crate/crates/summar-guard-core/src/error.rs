use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("duplicate attribute `{0}` in schema")]
    DuplicateAttribute(String),
    #[error("fact table `{table}` contains a duplicate tuple at row {row}")]
    DuplicateTuple { table: String, row: usize },
    #[error("row {row} has {got} values, expected {expected}")]
    Arity { row: usize, got: usize, expected: usize },
    #[error("invalid value in column `{column}` row {row}: {message}")]
    InvalidValue { column: String, row: usize, message: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),
    #[error("projection must keep dimension attribute `{0}`")]
    MissingDimensionAttribute(String),
    #[error("`{0}` is not a dimension attribute and cannot be used for grouping, pivoting or joining")]
    NonDimensionGrouping(String),
    #[error("`{0}` is not a measure attribute")]
    NotAMeasure(String),
    #[error("ambiguous pivot cell for `{column}`: two input rows share the same residual key")]
    AmbiguousPivotCell { column: String },
    #[error("attribute name collision: `{0}`")]
    NameCollision(String),
    #[error("no common dimension attributes to merge on")]
    NoCommonDimensionAttributes,
    #[error("union inputs overlap on dimension tuples: {0}")]
    UnionDimensionOverlap(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("function {func} is not applicable to category {category}")]
    NotApplicable { func: String, category: String },
    #[error("x_d {x_d} does not literally determine `{attribute}`")]
    InvalidDeterminant { attribute: String, x_d: String },
    #[error("no aggregable property for `{0}`")]
    MissingInputProperty(String),
    #[error("oracle refuses {0} dimension attributes (limit 6)")]
    ExplosionGuard(usize),
    #[error("expression error: {0}")]
    Expression(String),
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("unknown table or node `{0}`")]
    UnknownNode(String),
    #[error("`{0}` already exists")]
    AlreadyExists(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
