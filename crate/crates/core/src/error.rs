use core::fmt;

/// Structural problems found while building or validating a [`crate::VascularTree`].
#[derive(Debug, Clone, PartialEq)]
pub enum TreeError {
    Empty,
    TooFewPoints { branch: usize, count: usize },
    NonFinite { branch: usize, point: usize },
    DegenerateSegment { branch: usize, point: usize },
    LabelOutOfRange { branch: usize, label: u32, max: u32 },
    RootOutOfRange { root: usize, branches: usize },
    EdgeOutOfRange { edge: usize, branch: usize },
    SelfLoop { branch: usize },
    DuplicateEdge { a: usize, b: usize },
    /// The adjacency contains a cycle through `branch`.
    NotATree { branch: usize },
    Disconnected { branch: usize },
    NotBinary { branch: usize, children: usize },
    /// Neither end of `branch` meets the distal end of `parent`.
    JoinMismatch { branch: usize, parent: usize, gap: f64 },
    PointCountMismatch { expected: usize, found: usize },
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TreeError::Empty => write!(f, "tree has no branches"),
            TreeError::TooFewPoints { branch, count } => {
                write!(f, "branch {branch}: {count} points, at least 2 required")
            }
            TreeError::NonFinite { branch, point } => {
                write!(f, "branch {branch}: non-finite coordinate at point {point}")
            }
            TreeError::DegenerateSegment { branch, point } => {
                write!(f, "branch {branch}: zero-length segment ending at point {point}")
            }
            TreeError::LabelOutOfRange { branch, label, max } => {
                write!(f, "branch {branch}: label {label} outside [0, {max}]")
            }
            TreeError::RootOutOfRange { root, branches } => {
                write!(f, "root index {root} out of range for {branches} branches")
            }
            TreeError::EdgeOutOfRange { edge, branch } => {
                write!(f, "edge {edge} references missing branch {branch}")
            }
            TreeError::SelfLoop { branch } => write!(f, "branch {branch}: edge to itself"),
            TreeError::DuplicateEdge { a, b } => write!(f, "duplicate edge between {a} and {b}"),
            TreeError::NotATree { branch } => write!(f, "not a tree: cycle through branch {branch}"),
            TreeError::Disconnected { branch } => {
                write!(f, "branch {branch} is not connected to the root")
            }
            TreeError::NotBinary { branch, children } => {
                write!(f, "branch {branch}: {children} children, interior branches need exactly 2")
            }
            TreeError::JoinMismatch { branch, parent, gap } => {
                write!(f, "branch {branch} does not join parent {parent} (gap {gap:e})")
            }
            TreeError::PointCountMismatch { expected, found } => {
                write!(f, "expected {expected} points, found {found}")
            }
        }
    }
}

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Tree(TreeError),
    LengthMismatch { expected: usize, found: usize },
    /// Shooting produced a non-finite state at `step`.
    NonFinite { step: usize },
    InvalidConfig(&'static str),
    ZeroLengthSegment { segment: usize },
    IndexOutOfRange { index: usize, len: usize },
    EmptyInput(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Tree(e) => write!(f, "invalid tree: {e}"),
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite { step } => write!(f, "non-finite state at integration step {step}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::ZeroLengthSegment { segment } => write!(f, "zero-length tangent at segment {segment}"),
            Error::IndexOutOfRange { index, len } => write!(f, "index {index} out of range ({len})"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
        }
    }
}

impl core::error::Error for TreeError {}
impl core::error::Error for Error {}

impl From<TreeError> for Error {
    fn from(e: TreeError) -> Self {
        Error::Tree(e)
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}
