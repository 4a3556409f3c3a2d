use alloc::string::String;
use core::fmt;

/// Errors surfaced by the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes are inconsistent for the requested operation.
    ShapeMismatch { expected: String, got: String },
    /// Channel count is not divisible by the group count.
    BadGroups { channels: usize, groups: usize },
    /// A class label fell outside `[0, classes)`.
    LabelOutOfRange { label: usize, classes: usize },
    /// `backward` was called on a tape that already ran backward.
    TapeConsumed,
    /// `backward` needs a scalar loss node.
    NonScalarLoss { len: usize },
    /// Requested width is not part of the switchable width list.
    UnknownWidth { width: f64 },
    /// A width multiplier must lie in (0, 1].
    InvalidWidth { value: f64 },
    /// A switchable width list must be nonempty, strictly ascending, unique.
    InvalidWidthList,
    /// A slice request exceeded the stored maximum channel count.
    SliceOutOfRange { requested: usize, max: usize },
    /// Depthwise layers require equal active input and output channels.
    DepthwiseMismatch { w_in: usize, w_out: usize },
    /// Batch normalization needs at least two reduced elements per channel.
    DegenerateBatch { elements: usize },
    /// A non-finite value appeared where the engine requires finite numbers.
    NonFinite { context: &'static str },
    /// Training loss diverged (NaN/Inf) at the given width.
    Diverged { width: f64 },
    /// Dataset construction or decoding failed.
    BadData(String),
    /// Checkpoint bytes failed validation.
    BadCheckpoint(String),
    /// A config value violates its invariant.
    BadConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            Error::BadGroups { channels, groups } => {
                write!(f, "{channels} channels not divisible by {groups} groups")
            }
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::TapeConsumed => write!(f, "backward already ran on this tape"),
            Error::NonScalarLoss { len } => {
                write!(f, "backward requires a scalar loss, got {len} elements")
            }
            Error::UnknownWidth { width } => {
                write!(f, "width {width} is not in the switchable width list")
            }
            Error::InvalidWidth { value } => {
                write!(f, "width multiplier {value} outside (0, 1]")
            }
            Error::InvalidWidthList => {
                write!(f, "width list must be nonempty, unique and ascending")
            }
            Error::SliceOutOfRange { requested, max } => {
                write!(f, "active slice {requested} exceeds maximum {max}")
            }
            Error::DepthwiseMismatch { w_in, w_out } => {
                write!(f, "depthwise layer needs w_in == w_out, got {w_in} vs {w_out}")
            }
            Error::DegenerateBatch { elements } => {
                write!(f, "batch norm needs >= 2 elements per channel, got {elements}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::Diverged { width } => {
                write!(f, "training loss diverged at width {width}")
            }
            Error::BadData(msg) => write!(f, "bad data: {msg}"),
            Error::BadCheckpoint(msg) => write!(f, "bad checkpoint: {msg}"),
            Error::BadConfig(msg) => write!(f, "bad config: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
