//! Two-condition fall rule: the pattern must look anomalous and the body
//! centroid must have dropped far enough within the window.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionThresholds {
    pub anomaly_threshold: f64,
    /// Meters.
    pub drop_threshold: f64,
}

impl DetectionThresholds {
    pub fn new(anomaly_threshold: f64, drop_threshold: f64) -> Result<Self> {
        if !(drop_threshold > 0.0) || anomaly_threshold.is_nan() {
            return Err(Error::Domain(format!(
                "thresholds anomaly={anomaly_threshold}, drop={drop_threshold}"
            )));
        }
        Ok(Self {
            anomaly_threshold,
            drop_threshold,
        })
    }
}

impl Default for DetectionThresholds {
    fn default() -> Self {
        Self {
            anomaly_threshold: 0.0,
            drop_threshold: 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    #[serde(rename = "frame")]
    pub frame_index: u64,
    pub anomaly: f64,
    pub drop: f64,
    #[serde(rename = "fall")]
    pub is_fall: bool,
}

/// First height minus last height; positive when the body went down.
pub fn centroid_drop(heights: &[f64]) -> Result<f64> {
    match heights {
        [first, .., last] => Ok(first - last),
        _ => Err(Error::Domain(format!(
            "centroid drop needs at least 2 frames, got {}",
            heights.len()
        ))),
    }
}

/// The rule itself: both thresholds strictly exceeded.
pub fn is_fall(score: f64, drop: f64, thresholds: &DetectionThresholds) -> bool {
    score > thresholds.anomaly_threshold && drop > thresholds.drop_threshold
}

/// Verdict for one window ending at `frame_index`.
pub fn detect(frame_index: u64, score: f64, heights: &[f64], thresholds: &DetectionThresholds) -> Result<DetectionEvent> {
    let drop = centroid_drop(heights)?;
    Ok(DetectionEvent {
        frame_index,
        anomaly: score,
        drop,
        is_fall: is_fall(score, drop, thresholds),
    })
}

pub fn write_events<W: Write>(events: &[DetectionEvent], mut writer: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_events(events: &[DetectionEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_events(events, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn parse_events<R: BufRead>(reader: R) -> Result<Vec<DetectionEvent>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<DetectionEvent>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events(std::io::BufReader::new(file))
}
