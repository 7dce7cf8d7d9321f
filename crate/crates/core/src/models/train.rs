use super::config::HvraeConfig;
use super::network::{batch_layout, InputScaling, ModelWeights};
use super::{batch_loss, draw_noise};
use crate::diffengine::{adam_step, clip_global_norm, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::preprocess::MotionPattern;
use crate::probkit::RandomSource;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    /// Mean per-pattern loss of every epoch, as seen during that epoch.
    pub history: Vec<f64>,
}

/// Mini-batch Adam on the configured objective. Fully determined by the
/// dataset order and `config.seed`.
pub fn train(dataset: &[MotionPattern], config: &HvraeConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("no training patterns".into()));
    }
    let expected = [config.frames, config.points, config.point_dim];
    if let Some(p) = dataset.iter().find(|p| p.shape() != expected) {
        return Err(Error::Shape(format!(
            "pattern {:?} in a dataset for {expected:?}",
            p.shape()
        )));
    }

    let root = RandomSource::new(config.seed);
    let mut weights = ModelWeights::init(config, &mut root.child(0))?;
    weights.seed = config.seed;
    if config.standardize {
        weights.input_scaling = Some(InputScaling::fit(dataset.iter().map(|p| &p.points), config.point_dim)?);
    }
    let inputs: Vec<Tensor> = dataset.iter().map(|p| weights.scaled_input(&p.points)).collect();

    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(weights.parameters(), adam);
    let mut order_rng = root.child(1);
    let mut noise_rng = root.child(2);
    let variational = config.loss_variant.is_variational();
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..config.epochs {
        order_rng.shuffle(&mut order);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let members: Vec<&Tensor> = chunk.iter().map(|&i| &inputs[i]).collect();
            let x = batch_layout(&members, config.frames, config.points)?;
            let noise = variational.then(|| draw_noise(&mut noise_rng, config.frames * b, config.latent_dim));

            let tape = Tape::new();
            let params: Vec<Var> = weights.parameters().into_iter().map(|t| tape.param(t.clone())).collect();
            let xv = tape.constant(x);
            let eps = noise.map(|n| tape.constant(n));
            let loss = batch_loss(&tape, config, &params, xv, b, eps).map_err(|e| halt(epoch, e))?;
            let value = loss.item();
            let mut grads = loss.backward()?;
            let mut g: Vec<Tensor> = params.iter().map(|&v| grads.take(v)).collect();
            if g.iter().any(|t| !t.is_finite()) {
                return Err(halt(epoch, Error::Numerical("non-finite gradient".into())));
            }
            clip_global_norm(&mut g, config.clip_norm);
            adam_step(&mut weights.parameters_mut(), &g, &mut state)?;
            epoch_total += value * b as f64;
        }
        let mean = epoch_total / dataset.len() as f64;
        log::debug!("epoch {}: loss {mean:.6}", epoch + 1);
        history.push(mean);
    }
    weights.final_loss = history.last().copied();
    Ok(TrainOutcome { weights, history })
}

fn halt(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("training halted in epoch {}: {msg}", epoch + 1)),
        other => other,
    }
}
