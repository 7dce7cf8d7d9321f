use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use log::info;
use radarfall_core::dataio::{read_labels, read_stream, write_labels, write_stream};
use radarfall_core::detector::{is_fall, save_events, DetectionEvent};
use radarfall_core::eval::{
    auc, exhaustive_thresholds, half_window_for, match_detections, detections_at, parse_windows_csv,
    rate_at_false_alarms, roc_csv, roc_sweep, scored_windows, windows_csv, ScoredWindow,
};
use radarfall_core::models::{load_weights, save_weights, score_patterns, train as fit, LatentMode};
use radarfall_core::preprocess::{build_motion_patterns, MotionPattern, PatternShape};
use radarfall_core::simulator::{generate_dataset, FRAME_PERIOD};
use radarfall_core::{DetectionThresholds, RadarFrame, RandomSource};

use crate::config::RunConfig;
use crate::svg::{chart, Series};
use crate::{Common, ModelFlags, ThresholdFlags, UsageError};

/// Child streams of the global seed, one per stage.
const PREPROCESS_STREAM: u64 = 1;
const SCORE_STREAM: u64 = 2;

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(t) = common.tilt_deg {
        cfg.radar.tilt_deg = t;
    }
    if let Some(h) = common.height {
        cfg.radar.height = h;
    }
    if common.target_id.is_some() {
        cfg.target_id = common.target_id;
    }
    Ok(cfg)
}

fn require_file(path: &Path, what: &str) -> Result<(), UsageError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())))
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Frozen configuration next to an output: `config.toml` inside an output
/// directory, `<name>.config.toml` beside an output file.
fn echo_config(cfg: &RunConfig, out: &Path, is_dir: bool) -> anyhow::Result<()> {
    let path = if is_dir {
        out.join("config.toml")
    } else {
        let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{name}.config.toml"))
    };
    write_file(&path, &cfg.echo())
}

fn patterns_for(cfg: &RunConfig, frames: &[RadarFrame], shape: PatternShape, seed: u64) -> anyhow::Result<Vec<MotionPattern>> {
    let rng = RandomSource::new(seed).child(PREPROCESS_STREAM);
    Ok(build_motion_patterns(frames, &cfg.pose()?, shape, &rng)?)
}

fn load_stream(cfg: &RunConfig, path: &Path) -> anyhow::Result<Vec<RadarFrame>> {
    require_file(path, "stream")?;
    let frames = read_stream(path, cfg.target_id)?;
    info!("{} frames from {}", frames.len(), path.display());
    Ok(frames)
}

fn load_scores(path: &Path) -> anyhow::Result<Vec<ScoredWindow>> {
    require_file(path, "score file")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_windows_csv(&text)?)
}

pub fn simulate(common: &Common, out: &Path, preset: Option<String>, scale: Option<usize>) -> anyhow::Result<()> {
    let mut cfg = resolve(common)?;
    if let Some(p) = preset {
        cfg.simulate.preset = p;
    }
    if let Some(s) = scale {
        cfg.simulate.scale = s;
    }
    let seed = cfg.require_seed()?;
    let recipe = cfg.simulate.recipe()?;
    let run = generate_dataset(&recipe, &cfg.pose()?, seed, &cfg.simulate.simulator)?;
    create_dir(out)?;
    write_stream(&run.frames, out.join("stream.jsonl"))?;
    write_labels(&run.labels, out.join("labels.json"))?;
    let mut seg = String::from("motion,start_frame,end_frame,label_frame\n");
    for s in &run.segments {
        let label = s.label_frame.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(seg, "{},{},{},{}", s.kind.name(), s.start_frame, s.end_frame, label);
    }
    write_file(&out.join("segments.csv"), &seg)?;
    echo_config(&cfg, out, true)?;
    println!(
        "simulated {} frames, {} segments, {} labeled falls -> {}",
        run.frames.len(),
        run.segments.len(),
        run.labels.len(),
        out.display()
    );
    Ok(())
}

pub fn preprocess(common: &Common, input: &Path, out: &Path, stride: Option<usize>) -> anyhow::Result<()> {
    let mut cfg = resolve(common)?;
    if let Some(s) = stride {
        cfg.pattern.train_stride = s;
    }
    let seed = cfg.require_seed()?;
    let frames = load_stream(&cfg, input)?;
    let patterns = patterns_for(&cfg, &frames, cfg.train_shape(), seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = fs::File::create(out).with_context(|| format!("writing {}", out.display()))?;
    let mut w = BufWriter::new(file);
    for p in &patterns {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    echo_config(&cfg, out, false)?;
    println!("{} patterns -> {}", patterns.len(), out.display());
    Ok(())
}

fn apply_model_flags(cfg: &mut RunConfig, f: &ModelFlags) {
    if let Some(v) = f.variant {
        cfg.model.loss_variant = v;
    }
    if let Some(e) = f.epochs {
        cfg.model.epochs = e;
    }
    if let Some(v) = f.frames {
        cfg.pattern.frames = v;
    }
    if let Some(v) = f.points {
        cfg.pattern.points = v;
    }
    if let Some(v) = f.stride {
        cfg.pattern.train_stride = v;
    }
    if let Some(v) = f.batch_size {
        cfg.model.batch_size = v;
    }
    if let Some(v) = f.learning_rate {
        cfg.model.learning_rate = v;
    }
    if let Some(v) = f.latent_dim {
        cfg.model.latent_dim = v;
    }
    if f.standardize {
        cfg.model.standardize = true;
    }
}

pub fn train(common: &Common, input: &Path, out: &Path, flags: &ModelFlags) -> anyhow::Result<()> {
    let mut cfg = resolve(common)?;
    apply_model_flags(&mut cfg, flags);
    let model = cfg.model_config()?;
    model.validate()?;
    let frames = load_stream(&cfg, input)?;
    let patterns = patterns_for(&cfg, &frames, cfg.train_shape(), model.seed)?;
    info!("training {} on {} patterns", model.loss_variant.name(), patterns.len());
    let outcome = fit(&patterns, &model)?;
    create_dir(out)?;
    save_weights(&outcome.weights, out.join("weights.json"))?;
    let mut hist = String::from("epoch,loss\n");
    for (i, l) in outcome.history.iter().enumerate() {
        let _ = writeln!(hist, "{},{}", i + 1, l);
    }
    write_file(&out.join("loss_history.csv"), &hist)?;
    // Scores of the training corpus give the reference percentiles for thresholds.
    let scores = score_patterns(&patterns, &outcome.weights, model.seed ^ SCORE_STREAM, cfg.scoring.latent_mode)?;
    write_file(&out.join("train_scores.csv"), &windows_csv(&scored_windows(&patterns, &scores)?))?;
    echo_config(&cfg, out, true)?;
    println!(
        "trained {} on {} patterns for {} epochs: loss {} -> {} ({})",
        model.loss_variant.name(),
        patterns.len(),
        model.epochs,
        outcome.history.first().map_or("n/a".into(), |v| format!("{v:.4}")),
        outcome.history.last().map_or("n/a".into(), |v| format!("{v:.4}")),
        out.display()
    );
    Ok(())
}

pub fn score(
    common: &Common,
    weights: &Path,
    input: &Path,
    out: &Path,
    mode: Option<LatentMode>,
) -> anyhow::Result<()> {
    let mut cfg = resolve(common)?;
    if let Some(m) = mode {
        cfg.scoring.latent_mode = m;
    }
    require_file(weights, "weight file")?;
    let w = load_weights(weights)?;
    let seed = cfg.seed.unwrap_or(w.seed);
    let frames = load_stream(&cfg, input)?;
    // The window shape is fixed by the trained model.
    let shape = PatternShape {
        frames: w.config.frames,
        points: w.config.points,
        stride: cfg.pattern.score_stride,
    };
    let patterns = patterns_for(&cfg, &frames, shape, seed)?;
    let scores = score_patterns(&patterns, &w, seed ^ SCORE_STREAM, cfg.scoring.latent_mode)?;
    write_file(out, &windows_csv(&scored_windows(&patterns, &scores)?))?;
    echo_config(&cfg, out, false)?;
    println!("scored {} windows -> {}", patterns.len(), out.display());
    Ok(())
}

/// Nearest-rank percentile, `p` in percent.
fn percentile(values: &[f64], p: f64) -> anyhow::Result<f64> {
    if values.is_empty() {
        return Err(radarfall_core::Error::Empty("reference score file has no windows".into()).into());
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(UsageError(format!("percentile {p} is outside [0, 100]")).into());
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Ok(v[rank - 1])
}

fn thresholds(cfg: &RunConfig, f: &ThresholdFlags) -> anyhow::Result<DetectionThresholds> {
    let mut anomaly = cfg.detection.anomaly_threshold;
    if let Some(a) = f.anomaly_threshold {
        anomaly = a;
    }
    if let Some(reference) = &f.reference {
        if f.anomaly_threshold.is_some() {
            return Err(UsageError("give either --anomaly-threshold or --reference, not both".into()).into());
        }
        let scores: Vec<f64> = load_scores(reference)?.iter().map(|w| w.anomaly).collect();
        anomaly = percentile(&scores, f.percentile.unwrap_or(99.0))?;
    }
    let drop = f.drop_threshold.unwrap_or(cfg.detection.drop_threshold);
    Ok(DetectionThresholds::new(anomaly, drop)?)
}

pub fn detect(common: &Common, scores: &Path, out: &Path, flags: &ThresholdFlags) -> anyhow::Result<()> {
    let mut cfg = resolve(common)?;
    let t = thresholds(&cfg, flags)?;
    cfg.detection = t;
    let windows = load_scores(scores)?;
    let events: Vec<DetectionEvent> = windows
        .iter()
        .map(|w| DetectionEvent {
            frame_index: w.frame,
            anomaly: w.anomaly,
            drop: w.drop,
            is_fall: is_fall(w.anomaly, w.drop, &t),
        })
        .collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_events(&events, out)?;
    echo_config(&cfg, out, false)?;
    let falls = events.iter().filter(|e| e.is_fall).count();
    println!(
        "{falls} of {} windows flagged as falls (anomaly > {}, drop > {} m) -> {}",
        events.len(),
        t.anomaly_threshold,
        t.drop_threshold,
        out.display()
    );
    Ok(())
}

pub fn eval(
    common: &Common,
    scores: &Path,
    labels: &Path,
    out: &Path,
    drop: Option<f64>,
    half_window: Option<u64>,
) -> anyhow::Result<()> {
    let mut cfg = resolve(common)?;
    if let Some(d) = drop {
        cfg.detection.drop_threshold = d;
    }
    if half_window.is_some() {
        cfg.eval.half_window = half_window;
    }
    let hw = cfg.eval.half_window.unwrap_or_else(|| half_window_for(1.0 / FRAME_PERIOD));
    let windows = load_scores(scores)?;
    require_file(labels, "label file")?;
    let truth = read_labels(labels)?;
    let drop = cfg.detection.drop_threshold;
    let roc = roc_sweep(&windows, &truth, drop, &exhaustive_thresholds(&windows), hw)?;
    let area = auc(&roc)?;
    create_dir(out)?;
    write_file(&out.join("roc.csv"), &roc_csv(&roc))?;
    let curve: Vec<(f64, f64)> = roc.iter().map(|p| (p.false_alarms as f64, p.detection_rate)).collect();
    let svg = chart(
        &format!("ROC, drop > {drop} m, AUC {area:.4}"),
        "false alarms",
        &[Series { label: "detection rate", color: "#1f77b4", points: curve, dashed: false, right_axis: false }],
    );
    write_file(&out.join("roc.svg"), &svg)?;

    let budgets: serde_json::Map<String, serde_json::Value> = cfg
        .eval
        .false_alarm_budgets
        .iter()
        .map(|&b| (b.to_string(), rate_at_false_alarms(&roc, b).into()))
        .collect();
    let max_fa = roc.iter().map(|p| p.false_alarms).max().unwrap_or(0);
    let mut summary = serde_json::json!({
        "labels": truth.len(),
        "windows": windows.len(),
        "drop_threshold": drop,
        "half_window": hw,
        "auc": area,
        "max_false_alarms": max_fa,
        "detection_rate_at_false_alarms": budgets,
        "false_alarm_collapse": "anchored: alarms within half_window frames of the first alarm of a group count as one",
    });
    if let Some(threshold) = cfg.detection.anomaly_threshold.is_finite().then_some(cfg.detection.anomaly_threshold) {
        let r = match_detections(&detections_at(&windows, threshold, drop), &truth, hw);
        summary["at_configured_threshold"] = serde_json::json!({
            "anomaly_threshold": threshold,
            "true_positives": r.true_positives(),
            "false_alarms": r.false_alarms.len(),
            "misses": r.misses.len(),
        });
    }
    write_file(&out.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    echo_config(&cfg, out, true)?;
    println!("labels {}  windows {}  AUC {area:.4}  max false alarms {max_fa}", truth.len(), windows.len());
    for &b in &cfg.eval.false_alarm_budgets {
        println!("  detection rate at <= {b} false alarms: {:.3}", rate_at_false_alarms(&roc, b));
    }
    println!("  note: false-alarm collapse rule active (alarms within {hw} frames of a group's first alarm count once)");
    Ok(())
}

pub fn plot(common: &Common, scores: &Path, input: &Path, out: &Path, flags: &ThresholdFlags) -> anyhow::Result<()> {
    let cfg = resolve(common)?;
    let windows = load_scores(scores)?;
    let frames = load_stream(&cfg, input)?;
    let heights: Vec<(f64, f64)> = frames.iter().map(|f| (f.frame_index as f64, f.centroid[2])).collect();
    let anomaly: Vec<(f64, f64)> = windows.iter().map(|w| (w.frame as f64, w.anomaly)).collect();
    let mut series = vec![
        Series { label: "centroid height (m)", color: "#1f77b4", points: heights, dashed: false, right_axis: false },
        Series { label: "anomaly level", color: "#ff7f0e", points: anomaly, dashed: false, right_axis: true },
    ];
    let explicit = flags.anomaly_threshold.is_some() || flags.reference.is_some();
    if explicit {
        let t = thresholds(&cfg, flags)?;
        let (a, b) = (
            windows.first().map_or(0.0, |w| w.frame as f64),
            windows.last().map_or(1.0, |w| w.frame as f64),
        );
        series.push(Series {
            label: "anomaly threshold",
            color: "#d62728",
            points: vec![(a, t.anomaly_threshold), (b, t.anomaly_threshold)],
            dashed: true,
            right_axis: true,
        });
    }
    let svg = chart("anomaly level and centroid height", "frame", &series);
    write_file(out, &svg)?;
    echo_config(&cfg, out, false)?;
    println!("plotted {} windows over {} frames -> {}", windows.len(), frames.len(), out.display());
    Ok(())
}
