//! Tree amalgamations of locally finite graphs and quasi-isometry tooling.
//!
//! The crate is organised around lazily evaluated graph handles
//! ([`graphcore`]), presentation-level tree amalgamations ([`amalgam`]),
//! explicit quasi-isometry constructions with claimed constants
//! ([`qimaps`]), empirical verification of those claims on exact metric
//! balls ([`qiverify`]), truncation-based end estimation ([`ends`]) and a
//! symbolic calculus on factorisation trees ([`calculus`]).

pub mod amalgam;
pub mod calculus;
pub mod ends;
pub mod graphcore;
pub mod par;
pub mod qimaps;
pub mod qiverify;

use thiserror::Error;

pub const SCHEMA: &str = "amalgo/1";

/// Crate-wide error type. Budget overruns are errors, never silent
/// truncation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown vertex `{0}` in graph `{1}`")]
    UnknownVertex(String, String),
    #[error("vertex budget exceeded ({limit}) while enumerating ball of radius {radius}")]
    VertexBudget { limit: usize, radius: u64 },
    #[error("pair budget exceeded ({0})")]
    PairBudget(u64),
    #[error("identification budget exceeded ({0}): identification class is infinite or too large")]
    IdentificationBudget(usize),
    #[error("vertices `{0}` and `{1}` are not connected inside the certified window (radius {2})")]
    DisconnectedWindow(String, String, u64),
    #[error("factor is not finite: {0}")]
    FactorNotFinite(String),
    #[error("graph `{0}` has no base vertex")]
    MissingBase(String),
    #[error("graph `{0}` is not a tree: {1}")]
    NotATree(String, String),
    #[error("tree has too few ends for the cubic construction: {0}")]
    TooFewEnds(String),
    #[error("quasi-isometry endpoints do not match: `{0}` vs `{1}`")]
    EndpointMismatch(String, String),
    #[error("graph has fewer than two end candidates at radius {0}")]
    NotMultiEnded(u64),
    #[error("adhesion sets do not reach all of factor {0}: vertex `{1}` has no path to an adhesion vertex")]
    AdhesionUnreachable(usize, String),
    #[error("invalid amalgam presentation: {0}")]
    Presentation(String),
    #[error("invalid input: {0}")]
    Schema(String),
    #[error("label `{0}` used with conflicting end classes")]
    NamespaceConflict(String),
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Resource limits for ball enumeration, identification closure and pair
/// enumeration. Exceeding a budget is reported as an error.
#[derive(Debug, Clone)]
pub struct Budget {
    /// Maximum number of vertices enumerated per ball.
    pub vertices: usize,
    /// Maximum number of vertex pairs evaluated exhaustively before
    /// deterministic stratified sampling takes over.
    pub pairs: u64,
    /// Maximum size of an identification class closure.
    pub identification: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            vertices: 1_000_000,
            pairs: 10_000_000,
            identification: 10_000,
        }
    }
}
