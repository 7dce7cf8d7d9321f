//! Fall detection from radar point clouds with a hybrid variational RNN
//! autoencoder trained on normal activity only.

pub mod dataio;
pub mod detector;
pub mod diffengine;
pub mod error;
pub mod eval;
pub mod models;
pub mod preprocess;
pub mod probkit;
pub mod simulator;

pub use dataio::{GroundTruthLabel, RadarFrame, RadarPoint};
pub use detector::{DetectionEvent, DetectionThresholds};
pub use diffengine::Tensor;
pub use error::{Error, Result};
pub use eval::{RocPoint, ScoredWindow};
pub use models::{HvraeConfig, LatentMode, LossVariant, ModelWeights};
pub use preprocess::{MotionPattern, PatternShape, RadarPose};
pub use probkit::{DiagonalGaussian, RandomSource};
pub use simulator::{MotionKind, SimulatorConfig};
