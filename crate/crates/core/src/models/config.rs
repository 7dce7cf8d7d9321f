use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which objective (and matching decoder head) a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// KLD plus Gaussian negative log-likelihood with a learned variance.
    Full,
    /// KLD plus half squared error (unit output variance).
    Simplified,
    /// Plain recurrent autoencoder on flattened frames, mean squared error.
    Rae,
}

impl LossVariant {
    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Full => "full",
            LossVariant::Simplified => "simplified",
            LossVariant::Rae => "rae",
        }
    }

    pub fn is_variational(self) -> bool {
        self != LossVariant::Rae
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "hvrae" => Ok(LossVariant::Full),
            "simplified" | "sl" | "hvrae_sl" => Ok(LossVariant::Simplified),
            "rae" => Ok(LossVariant::Rae),
            other => Err(Error::Domain(format!("unknown loss variant '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HvraeConfig {
    /// Frames per pattern (L).
    pub frames: usize,
    /// Points per frame (N).
    pub points: usize,
    /// Values per point (K).
    pub point_dim: usize,
    /// Latent size (D).
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub rnn_hidden: usize,
    pub loss_variant: LossVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub logvar_clamp: (f64, f64),
    /// Standardize each point component with statistics of the training set.
    pub standardize: bool,
}

impl Default for HvraeConfig {
    fn default() -> Self {
        Self {
            frames: 10,
            points: 64,
            point_dim: 4,
            latent_dim: 16,
            encoder_hidden: vec![64, 32],
            decoder_hidden: vec![32, 64],
            rnn_hidden: 32,
            loss_variant: LossVariant::Full,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            logvar_clamp: (-10.0, 10.0),
            standardize: false,
        }
    }
}

impl HvraeConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("frames", self.frames),
            ("points", self.points),
            ("point_dim", self.point_dim),
            ("latent_dim", self.latent_dim),
            ("rnn_hidden", self.rnn_hidden),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Domain(format!("{name} must be at least 1")));
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&w| w == 0) {
            return Err(Error::Domain("layer widths must be at least 1".into()));
        }
        let (lo, hi) = self.logvar_clamp;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Domain(format!("log-variance clamp ({lo}, {hi}) is not ordered")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Domain(format!("clip norm {}", self.clip_norm)));
        }
        Ok(())
    }

    pub(crate) fn encoder_input_width(&self) -> usize {
        match self.loss_variant {
            LossVariant::Rae => self.points * self.point_dim,
            _ => self.point_dim,
        }
    }

    pub(crate) fn decoder_output_width(&self) -> usize {
        match self.loss_variant {
            LossVariant::Full => 2 * self.point_dim,
            LossVariant::Simplified => self.point_dim,
            LossVariant::Rae => self.points * self.point_dim,
        }
    }

    pub(crate) fn encoder_output_width(&self) -> usize {
        if self.loss_variant.is_variational() {
            2 * self.latent_dim
        } else {
            self.latent_dim
        }
    }
}
