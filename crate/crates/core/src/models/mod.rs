//! The three autoencoders: the hybrid variational RNN autoencoder with a
//! learned output variance, its unit-variance simplification, and a plain
//! recurrent autoencoder baseline. Also training, scoring and weight files.

mod config;
mod io;
mod network;
mod train;

use serde::{Deserialize, Serialize};

pub use config::{HvraeConfig, LossVariant};
pub use io::{load_weights, save_weights, weights_from_json, weights_to_json, WEIGHTS_VERSION};
pub use network::{InputScaling, ModelWeights};
pub use train::{train, TrainOutcome};

use crate::diffengine::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::preprocess::MotionPattern;
use crate::probkit::{DiagonalGaussian, RandomSource};
use network::{encode_points, forward, rnn_autoencode, Bound};

/// Loss of one pattern split into its parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub kld_term: f64,
    pub reconstruction_term: f64,
    pub per_frame: Vec<f64>,
}

/// How the latent is chosen when scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// One `ε` draw per frame from the supplied RNG.
    #[default]
    Sampled,
    /// `z = μ_q`.
    PosteriorMean,
}

fn bind_constants<'t>(tape: &'t Tape, weights: &ModelWeights) -> Result<Bound<'t>> {
    let vars: Vec<Var<'t>> = weights
        .parameters()
        .into_iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    Bound::from_flat(&weights.config, &vars)
}

fn check_rows(what: &str, t: &Tensor, rows: usize, cols: usize) -> Result<()> {
    if t.shape() != [rows, cols] {
        return Err(Error::Shape(format!(
            "{what} is {:?}, expected {:?}",
            t.shape(),
            [rows, cols]
        )));
    }
    Ok(())
}

fn gaussian_from(mean: Tensor, logvar: Option<Tensor>) -> Result<DiagonalGaussian> {
    let dim = mean.len();
    DiagonalGaussian::new(
        mean.into_values(),
        logvar.map_or_else(|| vec![0.0; dim], Tensor::into_values),
    )
}

/// Posterior `q(z | X)` of one `N × K` frame (raw units).
pub fn vae_encode(frame: &Tensor, weights: &ModelWeights) -> Result<DiagonalGaussian> {
    let cfg = &weights.config;
    if !cfg.loss_variant.is_variational() {
        return Err(Error::Domain("the plain autoencoder has no posterior".into()));
    }
    check_rows("frame", frame, cfg.points, cfg.point_dim)?;
    let tape = Tape::new();
    let p = bind_constants(&tape, weights)?;
    let x = tape.constant(weights.scaled_input(frame));
    let pooled = encode_points(cfg, &p, x)?;
    let (w, b) = p.encoder_head;
    let head = pooled.affine(w, Some(b))?;
    let d = cfg.latent_dim;
    let (lo, hi) = cfg.logvar_clamp;
    let mu = head.slice_cols(0, d)?.value();
    let lv = head.slice_cols(d, 2 * d)?.clamp(lo, hi)?.value();
    gaussian_from(mu, Some(lv))
}

/// Recurrent compress and reconstruct of an `L × D` latent sequence.
/// Row `l` of the result reconstructs row `l` of the input.
pub fn rae_compress_reconstruct(latents: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let cfg = &weights.config;
    check_rows("latent sequence", latents, cfg.frames, cfg.latent_dim)?;
    let tape = Tape::new();
    let p = bind_constants(&tape, weights)?;
    let z = tape.constant(latents.clone());
    Ok(rnn_autoencode(&tape, cfg, &p, z, 1)?.value())
}

/// Output distribution `p(x | z_r)` shared by every point of the frame.
/// For the simplified variant the log-variance is fixed at zero.
pub fn vae_decode(z_r: &[f64], weights: &ModelWeights) -> Result<DiagonalGaussian> {
    let cfg = &weights.config;
    if !cfg.loss_variant.is_variational() {
        return Err(Error::Domain("the plain autoencoder decodes whole frames".into()));
    }
    if z_r.len() != cfg.latent_dim {
        return Err(Error::Shape(format!(
            "latent of length {}, expected {}",
            z_r.len(),
            cfg.latent_dim
        )));
    }
    let mut h = Tensor::row(z_r.to_vec());
    for layer in &weights.decoder {
        let tape = Tape::new();
        h = layer.bind(&tape).forward(tape.constant(h))?.value();
    }
    let tape = Tape::new();
    let out = weights.decoder_head.bind(&tape).forward(tape.constant(h))?;
    let k = cfg.point_dim;
    match cfg.loss_variant {
        LossVariant::Full => {
            let (lo, hi) = cfg.logvar_clamp;
            gaussian_from(
                out.slice_cols(0, k)?.value(),
                Some(out.slice_cols(k, 2 * k)?.clamp(lo, hi)?.value()),
            )
        }
        _ => gaussian_from(out.value(), None),
    }
}

/// `L × D` standard normal draws, row-major.
pub fn draw_noise(rng: &mut RandomSource, frames: usize, latent_dim: usize) -> Tensor {
    let values = (0..frames * latent_dim).map(|_| rng.standard_normal()).collect();
    Tensor::new(frames, latent_dim, values).expect("sized")
}

/// Loss of one `(L·N) × K` point tensor with explicit latent noise
/// (`None` uses the posterior mean). The noise is ignored by the RAE.
pub fn evaluate(points: &Tensor, weights: &ModelWeights, noise: Option<&Tensor>) -> Result<LossBreakdown> {
    let cfg = &weights.config;
    check_rows("pattern", points, cfg.frames * cfg.points, cfg.point_dim)?;
    if let Some(e) = noise {
        check_rows("noise", e, cfg.frames, cfg.latent_dim)?;
    }
    let tape = Tape::new();
    let p = bind_constants(&tape, weights)?;
    let x = tape.constant(weights.scaled_input(points));
    let eps = noise.map(|e| tape.constant(e.clone()));
    let g = forward(&tape, cfg, &p, x, 1, eps)?;
    let per_frame = g.per_frame.value().into_values();
    let kld_term = g.kld.map_or(0.0, |k| k.value().values().iter().sum());
    let reconstruction_term = g.reconstruction.value().values().iter().sum();
    let total: f64 = per_frame.iter().sum();
    if !total.is_finite() {
        return Err(Error::Numerical(format!("loss evaluated to {total}")));
    }
    Ok(LossBreakdown {
        total,
        kld_term,
        reconstruction_term,
        per_frame,
    })
}

fn check_pattern(pattern: &MotionPattern, cfg: &HvraeConfig) -> Result<()> {
    if pattern.shape() != [cfg.frames, cfg.points, cfg.point_dim] {
        return Err(Error::Shape(format!(
            "pattern {:?} for a model expecting {:?}",
            pattern.shape(),
            [cfg.frames, cfg.points, cfg.point_dim]
        )));
    }
    Ok(())
}

/// Loss of a pattern with `ε` drawn from `rng` (one draw per frame).
pub fn hvrae_loss(pattern: &MotionPattern, weights: &ModelWeights, rng: &mut RandomSource) -> Result<LossBreakdown> {
    check_pattern(pattern, &weights.config)?;
    let cfg = &weights.config;
    let noise = cfg
        .loss_variant
        .is_variational()
        .then(|| draw_noise(rng, cfg.frames, cfg.latent_dim));
    evaluate(&pattern.points, weights, noise.as_ref())
}

/// Anomaly level of a pattern: its total loss.
pub fn anomaly_score(pattern: &MotionPattern, weights: &ModelWeights, rng: &mut RandomSource, mode: LatentMode) -> Result<f64> {
    match mode {
        LatentMode::Sampled => Ok(hvrae_loss(pattern, weights, rng)?.total),
        LatentMode::PosteriorMean => {
            check_pattern(pattern, &weights.config)?;
            Ok(evaluate(&pattern.points, weights, None)?.total)
        }
    }
}

/// Scores every pattern with its own RNG stream keyed by its first frame
/// index, so a score does not depend on which other patterns are scored.
pub fn score_patterns(patterns: &[MotionPattern], weights: &ModelWeights, seed: u64, mode: LatentMode) -> Result<Vec<f64>> {
    let root = RandomSource::new(seed);
    patterns
        .iter()
        .map(|p| anomaly_score(p, weights, &mut root.child(p.start_frame_index), mode))
        .collect()
}

/// Flattened parameters as tape leaves plus the loss of a batch, for
/// gradient checks and training. `eps` is `(L·B) × D` in batch layout.
pub fn batch_loss<'t>(
    tape: &'t Tape,
    config: &HvraeConfig,
    params: &[Var<'t>],
    x: Var<'t>,
    batch: usize,
    eps: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let p = Bound::from_flat(config, params)?;
    let g = forward(tape, config, &p, x, batch, eps)?;
    g.per_frame.sum()?.scale(1.0 / batch as f64)
}

pub use network::batch_layout;
