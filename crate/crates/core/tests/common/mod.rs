//! Scalar reference implementations used as oracles by the integration
//! tests. Everything here is plain loops over `Vec<f64>`, written without
//! the tape so it can catch mistakes in the graph code.
#![allow(dead_code)]

use radarfall_core::diffengine::{check_gradients, concat_cols, concat_rows, DenseLayer, RnnCell, Tape, Tensor, Var};
use radarfall_core::error::Result;
use radarfall_core::models::{batch_layout, batch_loss, HvraeConfig, LossVariant, ModelWeights};
use radarfall_core::preprocess::oversample_frame;
use radarfall_core::probkit::RandomSource;

pub fn tiny_config(variant: LossVariant) -> HvraeConfig {
    HvraeConfig {
        frames: 3,
        points: 5,
        point_dim: 4,
        latent_dim: 3,
        encoder_hidden: vec![6, 4],
        decoder_hidden: vec![4, 5],
        rnn_hidden: 4,
        loss_variant: variant,
        epochs: 1,
        batch_size: 2,
        ..Default::default()
    }
}

/// Weights with every entry, biases included, drawn from `U(-a, a)`.
pub fn random_weights(cfg: &HvraeConfig, seed: u64, a: f64) -> ModelWeights {
    let mut rng = RandomSource::new(seed);
    let mut w = ModelWeights::init(cfg, &mut rng).unwrap();
    for t in w.parameters_mut() {
        for v in t.values_mut() {
            *v = rng.uniform_range(-a, a);
        }
    }
    w
}

pub fn random_tensor(rows: usize, cols: usize, a: f64, rng: &mut RandomSource) -> Tensor {
    let values = (0..rows * cols).map(|_| rng.uniform_range(-a, a)).collect();
    Tensor::new(rows, cols, values).unwrap()
}

pub fn random_points(cfg: &HvraeConfig, rng: &mut RandomSource) -> Tensor {
    random_tensor(cfg.frames * cfg.points, cfg.point_dim, 1.5, rng)
}

pub fn normal_tensor(rows: usize, cols: usize, rng: &mut RandomSource) -> Tensor {
    let values = (0..rows * cols).map(|_| rng.standard_normal()).collect();
    Tensor::new(rows, cols, values).unwrap()
}

/// `W·x + b` with `W` stored outputs × inputs.
pub fn matvec(w: &Tensor, b: Option<&Tensor>, x: &[f64]) -> Vec<f64> {
    assert_eq!(w.cols(), x.len());
    (0..w.rows())
        .map(|o| {
            let mut acc = b.map_or(0.0, |b| b.get(0, o));
            for (i, xi) in x.iter().enumerate() {
                acc += w.get(o, i) * xi;
            }
            acc
        })
        .collect()
}

pub fn dense(layer: &DenseLayer, x: &[f64], tanh: bool) -> Vec<f64> {
    let y = matvec(&layer.weights, Some(&layer.bias), x);
    if tanh {
        y.into_iter().map(f64::tanh).collect()
    } else {
        y
    }
}

pub fn rnn_step(cell: &RnnCell, h: &[f64], x: &[f64]) -> Vec<f64> {
    let a = matvec(&cell.recurrent, None, h);
    let b = matvec(&cell.input, Some(&cell.bias), x);
    a.iter().zip(&b).map(|(p, q)| (p + q).tanh()).collect()
}

fn clamp(v: f64, (lo, hi): (f64, f64)) -> f64 {
    v.max(lo).min(hi)
}

fn scaled_row(w: &ModelWeights, row: &[f64]) -> Vec<f64> {
    match &w.input_scaling {
        Some(s) => row
            .iter()
            .enumerate()
            .map(|(k, v)| (v - s.mean[k]) / s.scale[k])
            .collect(),
        None => row.to_vec(),
    }
}

/// Rows of frame `l` after input scaling.
pub fn frame_rows(points: &Tensor, w: &ModelWeights, l: usize) -> Vec<Vec<f64>> {
    let n = w.config.points;
    (0..n).map(|i| scaled_row(w, points.row_slice(l * n + i))).collect()
}

/// Encoder output for one frame: `(μ_q, log σ_q²)` for the variational
/// variants, `(code, [])` for the RAE.
pub fn oracle_encode(rows: &[Vec<f64>], w: &ModelWeights) -> (Vec<f64>, Vec<f64>) {
    let cfg = &w.config;
    let d = cfg.latent_dim;
    let features = if cfg.loss_variant == LossVariant::Rae {
        let mut h: Vec<f64> = rows.iter().flatten().copied().collect();
        for layer in &w.encoder {
            h = dense(layer, &h, true);
        }
        h
    } else {
        let width = w.encoder.last().map_or(cfg.point_dim, |l| l.outputs());
        let mut pooled = vec![0.0; width];
        for row in rows {
            let mut h = row.clone();
            for layer in &w.encoder {
                h = dense(layer, &h, true);
            }
            for (p, v) in pooled.iter_mut().zip(&h) {
                *p += v;
            }
        }
        pooled.iter().map(|p| p / rows.len() as f64).collect()
    };
    let head = dense(&w.encoder_head, &features, false);
    if cfg.loss_variant == LossVariant::Rae {
        (head, Vec::new())
    } else {
        let lv = head[d..].iter().map(|&v| clamp(v, cfg.logvar_clamp)).collect();
        (head[..d].to_vec(), lv)
    }
}

/// Recurrent compress/reconstruct of an `L`-long latent sequence.
pub fn oracle_unroll(z: &[Vec<f64>], w: &ModelWeights) -> Vec<Vec<f64>> {
    let hidden = w.config.rnn_hidden;
    let mut h = vec![0.0; hidden];
    for zl in z {
        h = rnn_step(&w.rnn_encoder, &h, zl);
    }
    let h_e = h.clone();
    let mut emitted = Vec::new();
    let mut s = h_e.clone();
    for _ in 0..z.len() {
        s = rnn_step(&w.rnn_decoder, &s, &h_e);
        emitted.push(dense(&w.rnn_head, &s, false));
    }
    // Emitted last frame first.
    emitted.reverse();
    emitted
}

pub fn oracle_decode(z_r: &[f64], w: &ModelWeights) -> Vec<f64> {
    let mut h = z_r.to_vec();
    for layer in &w.decoder {
        h = dense(layer, &h, true);
    }
    dense(&w.decoder_head, &h, false)
}

#[derive(Debug)]
pub struct OracleLoss {
    pub total: f64,
    pub kld: f64,
    pub reconstruction: f64,
    pub per_frame: Vec<f64>,
}

/// Triple loop over frames, points and components (plus latent dims).
pub fn oracle_loss(points: &Tensor, w: &ModelWeights, noise: Option<&Tensor>) -> OracleLoss {
    let cfg = &w.config;
    let (l_frames, n, k) = (cfg.frames, cfg.points, cfg.point_dim);
    let frames: Vec<Vec<Vec<f64>>> = (0..l_frames).map(|l| frame_rows(points, w, l)).collect();

    let mut z = Vec::new();
    let mut kld = vec![0.0; l_frames];
    for (l, rows) in frames.iter().enumerate() {
        let (mu, lv) = oracle_encode(rows, w);
        if cfg.loss_variant == LossVariant::Rae {
            z.push(mu);
            continue;
        }
        let mut zl = mu.clone();
        if let Some(eps) = noise {
            for d in 0..cfg.latent_dim {
                zl[d] = mu[d] + (lv[d] / 2.0).exp() * eps.get(l, d);
            }
        }
        z.push(zl);
        // Textbook form: -½ Σ (1 + log σ² - μ² - σ²).
        kld[l] = -0.5
            * (0..cfg.latent_dim)
                .map(|d| 1.0 + lv[d] - mu[d] * mu[d] - lv[d].exp())
                .sum::<f64>();
    }

    let z_r = oracle_unroll(&z, w);
    let mut rec = vec![0.0; l_frames];
    for l in 0..l_frames {
        let out = oracle_decode(&z_r[l], w);
        let mut acc = 0.0;
        for i in 0..n {
            for c in 0..k {
                let x = frames[l][i][c];
                acc += match cfg.loss_variant {
                    LossVariant::Full => {
                        let var = clamp(out[k + c], cfg.logvar_clamp).exp();
                        0.5 * ((x - out[c]).powi(2) / var + var.ln())
                    }
                    LossVariant::Simplified => 0.5 * (x - out[c]).powi(2),
                    LossVariant::Rae => (x - out[i * k + c]).powi(2) / (l_frames * n * k) as f64,
                };
            }
        }
        rec[l] = acc;
    }
    let per_frame: Vec<f64> = (0..l_frames).map(|l| kld[l] + rec[l]).collect();
    OracleLoss {
        total: per_frame.iter().sum(),
        kld: kld.iter().sum(),
        reconstruction: rec.iter().sum(),
        per_frame,
    }
}

/// Returns the `p`-quantile by nearest rank on a sorted copy.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// ML mean and full ML covariance (divide by count).
pub fn moments(t: &Tensor) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (m, k) = (t.rows() as f64, t.cols());
    let mut mean = vec![0.0; k];
    for r in 0..t.rows() {
        for c in 0..k {
            mean[c] += t.get(r, c) / m;
        }
    }
    let mut cov = vec![vec![0.0; k]; k];
    for r in 0..t.rows() {
        for a in 0..k {
            for b in 0..k {
                cov[a][b] += (t.get(r, a) - mean[a]) * (t.get(r, b) - mean[b]) / m;
            }
        }
    }
    (mean, cov)
}

/// Worst relative change of the ML mean and covariance over random frames
/// of 1..=64 points oversampled to 64. Means are scaled by the largest mean
/// magnitude and covariances by the largest variance of the input.
pub fn oversampler_worst_error(instances: usize, seed: u64) -> f64 {
    let rel = |a: f64, b: f64, scale: f64| (a - b).abs() / scale.max(f64::MIN_POSITIVE);
    let mut rng = RandomSource::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let m = 1 + rng.below(64);
        let spread = rng.uniform_range(0.01, 5.0);
        let x = random_tensor(m, 4, spread, &mut rng).map(|v| v + 3.0);
        let y = oversample_frame(&x, 64, &mut rng).unwrap();
        assert_eq!(y.shape(), [64, 4]);
        let (m0, c0) = moments(&x);
        let (m1, c1) = moments(&y);
        let mean_scale = m0.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let cov_scale = (0..4).map(|k| c0[k][k]).fold(0.0, f64::max).max(mean_scale * mean_scale * 1e-12);
        for a in 0..4 {
            worst = worst.max(rel(m1[a], m0[a], mean_scale));
            for b in 0..4 {
                worst = worst.max(rel(c1[a][b], c0[a][b], cov_scale));
            }
        }
    }
    worst
}

pub const STEP: f64 = 1e-6;
pub const FLOOR: f64 = 1e-6;
pub const INSTANCES: u64 = 20;

/// Contracts an op's output with a fixed random tensor so every entry of
/// the Jacobian shows up in the scalar.
fn weigh<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let [r, c] = y.shape();
    let w = random_tensor(r, c, 1.0, &mut RandomSource::new(seed ^ 0xabcd));
    y.mul(tape.constant(w))?.sum()
}

fn away_from(t: Tensor, points: &[f64], gap: f64) -> Tensor {
    t.map(|v| {
        let mut v = v;
        for &p in points {
            if (v - p).abs() < gap {
                v = p + gap.copysign(v - p);
            }
        }
        v
    })
}

fn run<F>(name: &'static str, make: impl Fn(&mut RandomSource) -> Vec<Tensor>, f: F) -> (&'static str, f64)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + Copy,
{
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = RandomSource::new(i * 31 + 7);
        let inputs = make(&mut rng);
        let report = check_gradients(&inputs, STEP, FLOOR, |tape, v| weigh(tape, f(tape, v)?, i)).unwrap();
        worst = worst.max(report.max_relative_error);
    }
    (name, worst)
}

fn t(rng: &mut RandomSource, r: usize, c: usize) -> Tensor {
    random_tensor(r, c, 1.0, rng)
}


/// Central differences through the full unrolled model, all parameters.
pub fn full_model_check(variant: LossVariant, instance: u64) -> f64 {
    let cfg = tiny_config(variant);
    let w = random_weights(&cfg, 4000 + instance, 0.6);
    let mut rng = RandomSource::new(instance);
    let batch = 2;
    let a = random_points(&cfg, &mut rng);
    let b = random_points(&cfg, &mut rng);
    let x = batch_layout(&[&a, &b], cfg.frames, cfg.points).unwrap();
    let eps = normal_tensor(cfg.frames * batch, cfg.latent_dim, &mut rng);
    let params: Vec<Tensor> = w.parameters().into_iter().cloned().collect();
    let report = check_gradients(&params, 1e-5, 1e-5, |tape, v| {
        let xv = tape.constant(x.clone());
        let e = variant.is_variational().then(|| tape.constant(eps.clone()));
        batch_loss(tape, &cfg, v, xv, batch, e)
    })
    .unwrap();
    report.max_relative_error
}


/// Every primitive and a couple of composites, each checked on
/// `INSTANCES` random inputs. Returns the worst relative error per check.
pub fn primitive_suite() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    out.push(run("tanh", |r| vec![t(r, 3, 4)], |_, v| v[0].tanh()));
    out.push(run("exp", |r| vec![t(r, 3, 4)], |_, v| v[0].exp()));
    out.push(run("exp_m1", |r| vec![t(r, 3, 4)], |_, v| v[0].exp_m1()));
    out.push(run("log", |r| vec![t(r, 3, 4).map(|x| x.abs() + 0.2)], |_, v| v[0].log()));
    out.push(run("square", |r| vec![t(r, 3, 4)], |_, v| v[0].square()));
    out.push(run("scale", |r| vec![t(r, 3, 4)], |_, v| v[0].scale(-1.7)));
    out.push(run("offset", |r| vec![t(r, 3, 4)], |_, v| v[0].offset(0.3)));
    out.push(run(
        "clamp",
        |r| vec![away_from(t(r, 3, 4), &[-0.5, 0.5], 1e-3)],
        |_, v| v[0].clamp(-0.5, 0.5),
    ));
    out.push(run("add", |r| vec![t(r, 2, 5), t(r, 2, 5)], |_, v| v[0].add(v[1])));
    out.push(run("sub", |r| vec![t(r, 2, 5), t(r, 2, 5)], |_, v| v[0].sub(v[1])));
    out.push(run("mul", |r| vec![t(r, 2, 5), t(r, 2, 5)], |_, v| v[0].mul(v[1])));
    out.push(run(
        "div",
        |r| vec![t(r, 2, 5), t(r, 2, 5).map(|x| x.signum() * (x.abs() + 0.5))],
        |_, v| v[0].div(v[1]),
    ));
    out.push(run("affine", |r| vec![t(r, 4, 3), t(r, 2, 3), t(r, 1, 2)], |_, v| v[0].affine(v[1], Some(v[2]))));
    out.push(run("affine_no_bias", |r| vec![t(r, 4, 3), t(r, 2, 3)], |_, v| v[0].affine(v[1], None)));
    out.push(run("sub_groups", |r| vec![t(r, 6, 3), t(r, 2, 3)], |_, v| v[0].sub_groups(v[1], 3)));
    out.push(run("sum", |r| vec![t(r, 3, 4)], |_, v| v[0].sum()));
    out.push(run("mean", |r| vec![t(r, 3, 4)], |_, v| v[0].mean()));
    out.push(run("sum_rows", |r| vec![t(r, 6, 2)], |_, v| v[0].sum_rows(3)));
    out.push(run("mean_rows", |r| vec![t(r, 6, 2)], |_, v| v[0].mean_rows(2)));
    out.push(run("sum_cols", |r| vec![t(r, 3, 4)], |_, v| v[0].sum_cols()));
    out.push(run("slice_cols", |r| vec![t(r, 3, 5)], |_, v| v[0].slice_cols(1, 4)));
    out.push(run("slice_rows", |r| vec![t(r, 5, 2)], |_, v| v[0].slice_rows(2, 4)));
    out.push(run("reshape", |r| vec![t(r, 4, 3)], |_, v| v[0].reshape(2, 6)));
    out.push(run("concat_cols", |r| vec![t(r, 3, 2), t(r, 3, 1)], |_, v| concat_cols(&[v[0], v[1], v[0]])));
    out.push(run("concat_rows", |r| vec![t(r, 2, 3), t(r, 1, 3)], |_, v| concat_rows(&[v[1], v[0]])));
    out.push(run("sum(square(tanh(x)))", |r| vec![t(r, 4, 4)], |_, v| v[0].tanh()?.square()?.sum()));
    out.push(run(
        "rnn unroll",
        |r| vec![t(r, 3, 3), t(r, 3, 2), t(r, 1, 3), t(r, 10, 2)],
        |tape, v| {
            let mut h = tape.constant(Tensor::zeros(1, 3));
            for s in 0..10 {
                let x = v[3].slice_rows(s, s + 1)?;
                h = h.affine(v[0], None)?.add(x.affine(v[1], Some(v[2]))?)?.tanh()?;
            }
            Ok(h)
        },
    ));
    out
}

/// KL(N(μ, e^lv) ‖ N(0, 1)) of one dimension by composite Simpson over
/// ±12 standard deviations, written from the definition ∫ q log(q/p).
pub fn kld_quadrature(mu: f64, lv: f64) -> f64 {
    let sigma = (0.5 * lv).exp();
    let steps = 4000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / steps as f64;
    let f = |u: f64| {
        let x = mu + sigma * u;
        let log_q = -0.5 * u * u - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let log_p = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
        // q(x) dx = φ(u) du
        log_q.exp() * sigma * (log_q - log_p)
    };
    let mut s = f(a) + f(b);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Worst absolute gap between the closed form and quadrature over random
/// diagonal Gaussians of dimension 1..=16.
pub fn kld_worst_error(instances: usize, seed: u64) -> f64 {
    use radarfall_core::probkit::{kld_to_standard_normal, DiagonalGaussian};
    let mut rng = RandomSource::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = 1 + rng.below(16);
        let mean: Vec<f64> = (0..d).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        let lv: Vec<f64> = (0..d).map(|_| rng.uniform_range(-4.0, 3.0)).collect();
        let numeric: f64 = mean.iter().zip(&lv).map(|(&m, &l)| kld_quadrature(m, l)).sum();
        let closed = kld_to_standard_normal(&DiagonalGaussian::new(mean, lv).unwrap()).unwrap();
        worst = worst.max((closed - numeric).abs());
    }
    worst
}
