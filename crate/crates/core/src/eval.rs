//! Event-level matching of detections against labeled falls, threshold
//! sweeps and the area under the resulting curve.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::GroundTruthLabel;
use crate::detector::{centroid_drop, is_fall, DetectionThresholds};
use crate::error::{Error, Result};
use crate::preprocess::MotionPattern;

/// Frames on either side of a label that still count as a hit.
pub fn half_window_for(frame_rate: f64) -> u64 {
    (0.5 * frame_rate).round() as u64
}

pub const DEFAULT_HALF_WINDOW: u64 = 5;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Labels that received a detection.
    pub matched: Vec<u64>,
    /// Labels without any detection.
    pub misses: Vec<u64>,
    /// First detection of every collapsed false-alarm group.
    pub false_alarms: Vec<u64>,
    /// Detections that fell in an already matched label window.
    pub absorbed: usize,
    /// False-alarm detections merged into an earlier one.
    pub collapsed: usize,
}

impl MatchReport {
    pub fn true_positives(&self) -> usize {
        self.matched.len()
    }
}

/// Greedy earliest-first matching.
///
/// Each detection, in frame order, claims the earliest unmatched label
/// within `±half_window`. A detection inside the window of a label that is
/// already matched is absorbed. The remaining detections are false alarms,
/// and those within `half_window` of the first alarm of a group collapse
/// into that group.
pub fn match_detections(detections: &[u64], truth: &GroundTruthLabel, half_window: u64) -> MatchReport {
    let mut dets = detections.to_vec();
    dets.sort_unstable();
    let labels = &truth.fall_frame_indices;
    let mut taken = vec![false; labels.len()];
    let mut report = MatchReport::default();
    let mut candidates = Vec::new();

    let near = |d: u64, t: u64| d.abs_diff(t) <= half_window;
    for &d in &dets {
        // Labels are sorted, so the first hit in the window is the earliest.
        let lo = labels.partition_point(|&t| t + half_window < d);
        let window = lo..labels.len();
        let free = window.clone().take_while(|&i| near(d, labels[i])).find(|&i| !taken[i]);
        if let Some(i) = free {
            taken[i] = true;
        } else if window.take_while(|&i| near(d, labels[i])).any(|i| taken[i]) {
            report.absorbed += 1;
        } else {
            candidates.push(d);
        }
    }

    let mut anchor: Option<u64> = None;
    for d in candidates {
        match anchor {
            Some(a) if d - a <= half_window => report.collapsed += 1,
            _ => {
                anchor = Some(d);
                report.false_alarms.push(d);
            }
        }
    }
    for (i, &t) in labels.iter().enumerate() {
        if taken[i] {
            report.matched.push(t);
        } else {
            report.misses.push(t);
        }
    }
    report
}

/// Score and centroid drop of the window ending at `frame`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredWindow {
    pub frame: u64,
    pub anomaly: f64,
    pub drop: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub anomaly_threshold: f64,
    pub true_positives: usize,
    pub false_alarms: usize,
    pub detection_rate: f64,
}

/// Pairs each pattern with its score and the centroid drop across it.
pub fn scored_windows(patterns: &[MotionPattern], scores: &[f64]) -> Result<Vec<ScoredWindow>> {
    if patterns.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} patterns but {} scores",
            patterns.len(),
            scores.len()
        )));
    }
    patterns
        .iter()
        .zip(scores)
        .map(|(p, &anomaly)| {
            Ok(ScoredWindow {
                frame: p.end_frame_index(),
                anomaly,
                drop: centroid_drop(&p.centroid_heights)?,
            })
        })
        .collect()
}

/// Frames that fire at the given thresholds.
pub fn detections_at(windows: &[ScoredWindow], anomaly_threshold: f64, drop_threshold: f64) -> Vec<u64> {
    let t = DetectionThresholds {
        anomaly_threshold,
        drop_threshold,
    };
    windows
        .iter()
        .filter(|w| is_fall(w.anomaly, w.drop, &t))
        .map(|w| w.frame)
        .collect()
}

/// One curve point per threshold, sorted by threshold descending.
pub fn roc_sweep(
    windows: &[ScoredWindow],
    truth: &GroundTruthLabel,
    drop_threshold: f64,
    thresholds: &[f64],
    half_window: u64,
) -> Result<Vec<RocPoint>> {
    if truth.is_empty() {
        return Err(Error::Empty("no labeled falls; detection rate is undefined".into()));
    }
    if thresholds.iter().any(|t| t.is_nan()) {
        return Err(Error::Domain("NaN threshold".into()));
    }
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted
        .into_iter()
        .map(|thr| {
            let report = match_detections(&detections_at(windows, thr, drop_threshold), truth, half_window);
            RocPoint {
                anomaly_threshold: thr,
                true_positives: report.true_positives(),
                false_alarms: report.false_alarms.len(),
                detection_rate: report.true_positives() as f64 / truth.len() as f64,
            }
        })
        .collect())
}

/// Every distinct score, descending, followed by `-∞`. Sweeping these
/// visits every operating point of the detector.
pub fn exhaustive_thresholds(windows: &[ScoredWindow]) -> Vec<f64> {
    let mut t: Vec<f64> = windows.iter().map(|w| w.anomaly).collect();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t.push(f64::NEG_INFINITY);
    t
}

/// Trapezoidal area under detection rate versus false alarms, with the
/// false-alarm axis divided by its largest value in the sweep. When the
/// sweep has no false alarms at all the area is the best detection rate.
pub fn auc(points: &[RocPoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Domain(format!(
            "area needs at least 2 curve points, got {}",
            points.len()
        )));
    }
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.false_alarms as f64, p.detection_rate))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let max_fa = pts.last().map_or(0.0, |p| p.0);
    if max_fa == 0.0 {
        return Ok(pts.iter().map(|p| p.1).fold(0.0, f64::max));
    }
    // Normalize once at the end; per-segment division can round past 1.
    let twice: f64 = pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    Ok((twice / (2.0 * max_fa)).clamp(0.0, 1.0))
}

/// Highest detection rate reachable with at most `budget` false alarms.
pub fn rate_at_false_alarms(points: &[RocPoint], budget: usize) -> f64 {
    points
        .iter()
        .filter(|p| p.false_alarms <= budget)
        .map(|p| p.detection_rate)
        .fold(0.0, f64::max)
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,true_positives,false_alarms,detection_rate\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.anomaly_threshold, p.true_positives, p.false_alarms, p.detection_rate
        );
    }
    out
}

/// Per-window scores as `frame,anomaly,drop`. Floats use the shortest
/// representation that parses back to the same bits.
pub fn windows_csv(windows: &[ScoredWindow]) -> String {
    let mut out = String::from("frame,anomaly,drop\n");
    for w in windows {
        let _ = writeln!(out, "{},{},{}", w.frame, w.anomaly, w.drop);
    }
    out
}

pub fn parse_windows_csv(text: &str) -> Result<Vec<ScoredWindow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "frame,anomaly,drop" => {}
        _ => return Err(Error::Format("score csv: missing 'frame,anomaly,drop' header".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || Error::Format(format!("score csv line {}: '{line}'", n + 1));
            let mut f = line.split(',');
            let (Some(a), Some(b), Some(c), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(bad());
            };
            Ok(ScoredWindow {
                frame: a.trim().parse().map_err(|_| bad())?,
                anomaly: b.trim().parse().map_err(|_| bad())?,
                drop: c.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
