//! Parameters and the differentiable forward graph shared by all variants.
//!
//! A batch of `B` patterns enters as one `(L·B·N) × K` tensor laid out
//! frame-major: row `(l·B + b)·N + n` holds point `n` of frame `l` of
//! pattern `b`. Per-frame quantities are `(L·B) × ·` with row `l·B + b`,
//! so one RNN step over the whole batch is a contiguous row slice.

use serde::{Deserialize, Serialize};

use super::config::{HvraeConfig, LossVariant};
use crate::diffengine::{concat_rows, Activation, DenseLayer, RnnCell, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::probkit::RandomSource;

/// Per-component affine input normalization `(x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    /// Mean and population standard deviation of every column over all
    /// rows of all tensors. Constant columns get scale 1.
    pub fn fit<'a>(tensors: impl IntoIterator<Item = &'a Tensor>, cols: usize) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = vec![0.0; cols];
        let mut sum_sq = vec![0.0; cols];
        for t in tensors {
            if t.cols() != cols {
                return Err(Error::Shape(format!("{} columns, expected {cols}", t.cols())));
            }
            for r in 0..t.rows() {
                for (k, &v) in t.row_slice(r).iter().enumerate() {
                    sum[k] += v;
                    sum_sq[k] += v * v;
                }
            }
            count += t.rows();
        }
        if count == 0 {
            return Err(Error::Empty("no rows to fit input scaling".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let sd = (sq / n - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let c = x.cols();
        let mut out = x.clone();
        for row in out.values_mut().chunks_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Every learned tensor of one model plus its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: HvraeConfig,
    /// Per-point dense stack shared by all points.
    pub encoder: Vec<DenseLayer>,
    /// Emits `(μ_q, log σ_q²)`, or the deterministic code for the RAE.
    pub encoder_head: DenseLayer,
    pub rnn_encoder: RnnCell,
    pub rnn_decoder: RnnCell,
    /// Maps decoder RNN states back to latent space.
    pub rnn_head: DenseLayer,
    pub decoder: Vec<DenseLayer>,
    /// Emits `(μ_p, log σ_p²)`, `μ_p` only, or a whole frame for the RAE.
    pub decoder_head: DenseLayer,
    pub input_scaling: Option<InputScaling>,
    pub seed: u64,
    pub final_loss: Option<f64>,
}

fn stack(widths: &[usize], input: usize, rng: &mut RandomSource) -> (Vec<DenseLayer>, usize) {
    let mut prev = input;
    let layers = widths
        .iter()
        .map(|&w| {
            let layer = DenseLayer::new(prev, w, Activation::Tanh, rng);
            prev = w;
            layer
        })
        .collect();
    (layers, prev)
}

impl ModelWeights {
    /// Fresh weights: uniform `±1/√fan_in`, zero biases.
    pub fn init(config: &HvraeConfig, rng: &mut RandomSource) -> Result<Self> {
        config.validate()?;
        let c = config;
        let (encoder, pooled) = stack(&c.encoder_hidden, c.encoder_input_width(), rng);
        let encoder_head = DenseLayer::new(pooled, c.encoder_output_width(), Activation::Identity, rng);
        let rnn_encoder = RnnCell::new(c.latent_dim, c.rnn_hidden, rng);
        let rnn_decoder = RnnCell::new(c.rnn_hidden, c.rnn_hidden, rng);
        let rnn_head = DenseLayer::new(c.rnn_hidden, c.latent_dim, Activation::Identity, rng);
        let (decoder, last) = stack(&c.decoder_hidden, c.latent_dim, rng);
        let decoder_head = DenseLayer::new(last, c.decoder_output_width(), Activation::Identity, rng);
        Ok(Self {
            config: c.clone(),
            encoder,
            encoder_head,
            rnn_encoder,
            rnn_decoder,
            rnn_head,
            decoder,
            decoder_head,
            input_scaling: None,
            seed: rng.seed(),
            final_loss: None,
        })
    }

    /// Parameter names in canonical order (matches [`Self::parameters`]).
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let dense = |names: &mut Vec<String>, p: &str| {
            names.push(format!("{p}.w"));
            names.push(format!("{p}.b"));
        };
        for i in 0..self.encoder.len() {
            dense(&mut names, &format!("enc.{i}"));
        }
        dense(&mut names, "enc.head");
        for p in ["rnn_enc", "rnn_dec"] {
            for s in ["w_hh", "w_xh", "b"] {
                names.push(format!("{p}.{s}"));
            }
        }
        dense(&mut names, "rnn_head");
        for i in 0..self.decoder.len() {
            dense(&mut names, &format!("dec.{i}"));
        }
        dense(&mut names, "dec.head");
        names
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for l in &self.encoder {
            out.extend(l.parameters());
        }
        out.extend(self.encoder_head.parameters());
        out.extend(self.rnn_encoder.parameters());
        out.extend(self.rnn_decoder.parameters());
        out.extend(self.rnn_head.parameters());
        for l in &self.decoder {
            out.extend(l.parameters());
        }
        out.extend(self.decoder_head.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.encoder {
            out.extend(l.parameters_mut());
        }
        out.extend(self.encoder_head.parameters_mut());
        out.extend(self.rnn_encoder.parameters_mut());
        out.extend(self.rnn_decoder.parameters_mut());
        out.extend(self.rnn_head.parameters_mut());
        for l in &mut self.decoder {
            out.extend(l.parameters_mut());
        }
        out.extend(self.decoder_head.parameters_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Input after optional standardization.
    pub fn scaled_input(&self, x: &Tensor) -> Tensor {
        match &self.input_scaling {
            Some(s) => s.apply(x),
            None => x.clone(),
        }
    }
}

/// Parameters bound to a tape, in canonical order.
pub(crate) struct Bound<'t> {
    pub encoder: Vec<(Var<'t>, Var<'t>)>,
    pub encoder_head: (Var<'t>, Var<'t>),
    pub rnn_encoder: [Var<'t>; 3],
    pub rnn_decoder: [Var<'t>; 3],
    pub rnn_head: (Var<'t>, Var<'t>),
    pub decoder: Vec<(Var<'t>, Var<'t>)>,
    pub decoder_head: (Var<'t>, Var<'t>),
}

impl<'t> Bound<'t> {
    /// Splits a flat canonical-order parameter list back into layers.
    pub(crate) fn from_flat(config: &HvraeConfig, vars: &[Var<'t>]) -> Result<Self> {
        let expected = 2 * (config.encoder_hidden.len() + config.decoder_hidden.len() + 3) + 6;
        if vars.len() != expected {
            return Err(Error::Shape(format!(
                "{} parameter tensors, expected {expected}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut pair = |n: usize| -> Vec<(Var<'t>, Var<'t>)> {
            (0..n).map(|_| (it.next().unwrap(), it.next().unwrap())).collect()
        };
        let encoder = pair(config.encoder_hidden.len());
        let encoder_head = pair(1)[0];
        let rnn: Vec<_> = pair(3);
        let rnn_encoder = [rnn[0].0, rnn[0].1, rnn[1].0];
        let rnn_decoder = [rnn[1].1, rnn[2].0, rnn[2].1];
        let rnn_head = pair(1)[0];
        let decoder = pair(config.decoder_hidden.len());
        let decoder_head = pair(1)[0];
        Ok(Self {
            encoder,
            encoder_head,
            rnn_encoder,
            rnn_decoder,
            rnn_head,
            decoder,
            decoder_head,
        })
    }
}

fn dense<'t>(x: Var<'t>, (w, b): (Var<'t>, Var<'t>), act: Activation) -> Result<Var<'t>> {
    let y = x.affine(w, Some(b))?;
    match act {
        Activation::Tanh => y.tanh(),
        Activation::Identity => Ok(y),
    }
}

fn rnn<'t>(cell: &[Var<'t>; 3], h: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
    let rec = h.affine(cell[0], None)?;
    let inp = x.affine(cell[1], Some(cell[2]))?;
    rec.add(inp)?.tanh()
}

/// Nodes of one forward pass that callers may inspect.
pub(crate) struct Graph<'t> {
    /// `(L·B) × 1`, zero for the RAE.
    pub kld: Option<Var<'t>>,
    /// `(L·B) × 1`.
    pub reconstruction: Var<'t>,
    /// `(L·B) × 1`.
    pub per_frame: Var<'t>,
}

/// Frame features `(L·B·N) × K → (L·B) × width`.
///
/// The variational models run a shared stack on every point and mean-pool,
/// which makes the result independent of point order. The plain RAE
/// flattens each frame into one `N·K` vector first, like a vanilla MLP.
pub(crate) fn encode_points<'t>(cfg: &HvraeConfig, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
    let pooled = !matches!(cfg.loss_variant, LossVariant::Rae);
    let mut h = if pooled {
        x
    } else {
        let [rows, k] = x.shape();
        x.reshape(rows / cfg.points, cfg.points * k)?
    };
    for &layer in &p.encoder {
        h = dense(h, layer, Activation::Tanh)?;
    }
    if pooled {
        h.mean_rows(cfg.points)
    } else {
        Ok(h)
    }
}

/// Recurrent compress/reconstruct over `L` steps for `B` sequences at once.
pub(crate) fn rnn_autoencode<'t>(tape: &'t Tape, cfg: &HvraeConfig, p: &Bound<'t>, z: Var<'t>, batch: usize) -> Result<Var<'t>> {
    let hidden = cfg.rnn_hidden;
    let mut h = tape.constant(Tensor::zeros(batch, hidden));
    for l in 0..cfg.frames {
        let zl = z.slice_rows(l * batch, (l + 1) * batch)?;
        h = rnn(&p.rnn_encoder, h, zl)?;
    }
    let h_e = h;
    let mut states = Vec::with_capacity(cfg.frames);
    let mut s = h_e;
    for _ in 0..cfg.frames {
        s = rnn(&p.rnn_decoder, s, h_e)?;
        states.push(s);
    }
    // The decoder emits the sequence last frame first; flip it back so
    // row block l lines up with input frame l.
    states.reverse();
    dense(concat_rows(&states)?, p.rnn_head, Activation::Identity)
}

/// Full forward graph and per-frame loss for a batch.
///
/// `x` is already scaled. `eps` is `(L·B) × D` standard normal noise for
/// the variational variants; `None` means `z = μ_q`.
pub(crate) fn forward<'t>(
    tape: &'t Tape,
    cfg: &HvraeConfig,
    p: &Bound<'t>,
    x: Var<'t>,
    batch: usize,
    eps: Option<Var<'t>>,
) -> Result<Graph<'t>> {
    let [rows, k] = x.shape();
    if rows != cfg.frames * batch * cfg.points || k != cfg.point_dim {
        return Err(Error::Shape(format!(
            "input {:?} for L={}, B={batch}, N={}, K={}",
            x.shape(),
            cfg.frames,
            cfg.points,
            cfg.point_dim
        )));
    }
    let (lo, hi) = cfg.logvar_clamp;
    let d = cfg.latent_dim;
    let pooled = encode_points(cfg, p, x)?;
    let head = dense(pooled, p.encoder_head, Activation::Identity)?;

    let (mu_q, logvar_q, z) = if cfg.loss_variant.is_variational() {
        let mu_q = head.slice_cols(0, d)?;
        let logvar_q = head.slice_cols(d, 2 * d)?.clamp(lo, hi)?;
        let z = match eps {
            Some(e) => mu_q.add(logvar_q.scale(0.5)?.exp()?.mul(e)?)?,
            None => mu_q,
        };
        (mu_q, Some(logvar_q), z)
    } else {
        (head, None, head)
    };

    let z_r = rnn_autoencode(tape, cfg, p, z, batch)?;
    let mut h = z_r;
    for &layer in &p.decoder {
        h = dense(h, layer, Activation::Tanh)?;
    }
    let out = dense(h, p.decoder_head, Activation::Identity)?;

    let n = cfg.points;
    let reconstruction = match cfg.loss_variant {
        LossVariant::Full => {
            let mu_p = out.slice_cols(0, k)?;
            let logvar_p = out.slice_cols(k, 2 * k)?.clamp(lo, hi)?;
            // ½ Σ_n Σ_k ((x - μ)² e^{-lv} + lv)
            let sq = x.sub_groups(mu_p, n)?.square()?.sum_rows(n)?;
            let weighted = sq.mul(logvar_p.scale(-1.0)?.exp()?)?;
            let r = weighted.add(logvar_p.scale(n as f64)?)?.sum_cols()?.scale(0.5)?;
            r
        }
        LossVariant::Simplified => {
            let sq = x.sub_groups(out, n)?.square()?.sum_rows(n)?;
            sq.sum_cols()?.scale(0.5)?
        }
        LossVariant::Rae => {
            // One row of N·K outputs per frame becomes N rows of K.
            let recon = out.reshape(rows, k)?;
            let sq = x.sub(recon)?.square()?.sum_rows(n)?;
            let total = (cfg.frames * n * k) as f64;
            sq.sum_cols()?.scale(1.0 / total)?
        }
    };

    let kld = match logvar_q {
        // ½ Σ_d (μ² + (e^lv - 1) - lv)
        Some(lv) => Some(mu_q.square()?.add(lv.exp_m1()?.sub(lv)?)?.sum_cols()?.scale(0.5)?),
        None => None,
    };
    let per_frame = match kld {
        Some(kl) => kl.add(reconstruction)?,
        None => reconstruction,
    };
    Ok(Graph {
        kld,
        reconstruction,
        per_frame,
    })
}

/// Stacks patterns (each `(L·N) × K`, frame-major) into the batch layout.
pub fn batch_layout(patterns: &[&Tensor], frames: usize, points: usize) -> Result<Tensor> {
    let b = patterns.len();
    let k = patterns.first().map_or(0, |t| t.cols());
    let block = points * k;
    let mut values = Vec::with_capacity(frames * b * block);
    for l in 0..frames {
        for t in patterns {
            if t.shape() != [frames * points, k] {
                return Err(Error::Shape(format!(
                    "pattern {:?} in a batch of {:?}",
                    t.shape(),
                    [frames * points, k]
                )));
            }
            values.extend_from_slice(&t.values()[l * block..(l + 1) * block]);
        }
    }
    Tensor::new(frames * b * points, k, values)
}
