//! The three fully-convolutional layouts: single-frame CNN, multi-frame CNN
//! and the convolutional LSTM network, plus parameter checkpoints.

mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{one_hot, Bound, LayerDesc, LayerKind, Network, RecurrentState, SequenceInit, StateVars};

use crate::tensor::TensorError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("expected {expected} input channels, got {got}")]
    InputChannels { expected: usize, got: usize },
    #[error("input {h}x{w} must have both extents divisible by 4")]
    NotDivisible { h: usize, w: usize },
    #[error("expected {expected} frames, got {got}")]
    FrameCount { expected: usize, got: usize },
    #[error("{op} is not available for the {arch:?} architecture")]
    WrongArchitecture { op: &'static str, arch: Architecture },
    #[error("recurrent state does not match the network: {0}")]
    StateMismatch(String),
    #[error("ground-truth initialization requested without a label")]
    MissingGroundTruth,
    #[error("empty frame list")]
    NoFrames,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SingleFrame,
    MultiFrame,
    Lstm,
}

impl Architecture {
    pub(crate) fn code(self) -> f64 {
        match self {
            Architecture::SingleFrame => 0.0,
            Architecture::MultiFrame => 1.0,
            Architecture::Lstm => 2.0,
        }
    }

    pub(crate) fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(Architecture::SingleFrame),
            1 => Some(Architecture::MultiFrame),
            2 => Some(Architecture::Lstm),
            _ => None,
        }
    }
}

/// Declarative description of one network instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    /// Channel multiplier; 1.0 reproduces the full-size layer table.
    pub scale: f64,
    pub num_classes: usize,
    /// 3 for RGB detection input, 4 for one-hot segmented tracking input.
    pub num_input_channels: usize,
    /// 5 for detection, 3 for the tracking variant.
    pub num_initial_convs: usize,
    /// Frames per prediction for the multi-frame layout.
    pub window: usize,
    /// Shrink pooling windows by `scale` below full size. A 17x17 stride-1
    /// pool on a 16x12 feature map covers the whole map, so desk-scale
    /// inputs need proportionally smaller windows to stay localized.
    pub scale_pool_windows: bool,
}

impl NetworkSpec {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            scale: 1.0,
            num_classes: 2,
            num_input_channels: 3,
            num_initial_convs: 5,
            window: if architecture == Architecture::MultiFrame { 32 } else { 1 },
            scale_pool_windows: true,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Tracking variant: segmented 4-channel input and 3 initial convolutions.
    pub fn tracking(mut self) -> Self {
        self.num_input_channels = 4;
        self.num_initial_convs = 3;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(NnError::InvalidSpec(format!("scale must be > 0, got {}", self.scale)));
        }
        if self.window < 1 {
            return Err(NnError::InvalidSpec("window must be >= 1".into()));
        }
        if self.num_initial_convs != 3 && self.num_initial_convs != 5 {
            return Err(NnError::InvalidSpec(format!("num_initial_convs must be 3 or 5, got {}", self.num_initial_convs)));
        }
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(NnError::InvalidSpec(format!("num_classes must be in 2..=255, got {}", self.num_classes)));
        }
        if self.num_input_channels == 0 {
            return Err(NnError::InvalidSpec("num_input_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Full-size channel count scaled and rounded up, never below one.
    pub fn channels(&self, full: usize) -> usize {
        ((full as f64 * self.scale - 1e-9).ceil() as usize).max(1)
    }

    /// Pooling window following a convolution with kernel `k`.
    pub fn pool_window(&self, k: usize) -> usize {
        if !self.scale_pool_windows || self.scale >= 1.0 {
            return k;
        }
        let scaled = (k as f64 * self.scale).floor().max(1.0) as usize;
        if scaled % 2 == 0 {
            scaled - 1
        } else {
            scaled
        }
    }
}
