//! Portable on-disk formats for radar streams and fall labels.
//!
//! A stream is JSON Lines, one frame per line:
//!
//! ```text
//! {"frame":12,"target":1,"centroid":[0.1,3.2,0.9],"points":[[3.1,0.02,-0.3,0.4]]}
//! ```
//!
//! Points are `[range m, azimuth rad, elevation rad, doppler m/s]`. Ground-truth
//! labels are a JSON array of strictly increasing frame indices.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One radar detection in the radar's spherical coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadarPoint {
    pub range: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub doppler: f64,
}

impl RadarPoint {
    pub fn new(range: f64, azimuth: f64, elevation: f64, doppler: f64) -> Self {
        Self {
            range,
            azimuth,
            elevation,
            doppler,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let RadarPoint {
            range,
            azimuth,
            elevation,
            doppler,
        } = *self;
        if ![range, azimuth, elevation, doppler].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("non-finite radar point {self:?}")));
        }
        if range < 0.0 {
            return Err(Error::Domain(format!("negative range {range}")));
        }
        if !(azimuth > -PI && azimuth <= PI) {
            return Err(Error::Domain(format!("azimuth {azimuth} outside (-pi, pi]")));
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&elevation) {
            return Err(Error::Domain(format!(
                "elevation {elevation} outside [-pi/2, pi/2]"
            )));
        }
        Ok(())
    }
}

/// All points reported for one tracked target in one radar frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarFrame {
    pub frame_index: u64,
    pub target_id: i64,
    pub points: Vec<RadarPoint>,
    /// Tracker centroid `(x_c, y_c, z_c)` in ground coordinates, meters.
    pub centroid: [f64; 3],
}

impl RadarFrame {
    pub fn validate(&self) -> Result<()> {
        if !self.centroid.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain(format!(
                "frame {}: non-finite centroid",
                self.frame_index
            )));
        }
        self.points.iter().try_for_each(RadarPoint::validate)
    }
}

/// Frame indices at which a fall was labeled.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruthLabel {
    pub fall_frame_indices: Vec<u64>,
}

impl GroundTruthLabel {
    pub fn new(fall_frame_indices: Vec<u64>) -> Result<Self> {
        if fall_frame_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format(
                "label indices must be strictly increasing".into(),
            ));
        }
        Ok(Self { fall_frame_indices })
    }

    pub fn len(&self) -> usize {
        self.fall_frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fall_frame_indices.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    frame: u64,
    target: i64,
    centroid: [f64; 3],
    points: Vec<[f64; 4]>,
}

impl From<&RadarFrame> for FrameRecord {
    fn from(f: &RadarFrame) -> Self {
        FrameRecord {
            frame: f.frame_index,
            target: f.target_id,
            centroid: f.centroid,
            points: f
                .points
                .iter()
                .map(|p| [p.range, p.azimuth, p.elevation, p.doppler])
                .collect(),
        }
    }
}

impl From<FrameRecord> for RadarFrame {
    fn from(r: FrameRecord) -> Self {
        RadarFrame {
            frame_index: r.frame,
            target_id: r.target,
            centroid: r.centroid,
            points: r
                .points
                .into_iter()
                .map(|[a, b, c, d]| RadarPoint::new(a, b, c, d))
                .collect(),
        }
    }
}

/// Parses a stream from any reader. See [`read_stream`].
pub fn parse_stream<R: Read>(reader: R, target_id: Option<i64>) -> Result<Vec<RadarFrame>> {
    let mut frames = Vec::new();
    let mut last_index: HashMap<i64, u64> = HashMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let frame = RadarFrame::from(record);
        frame.validate().map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if let Some(&prev) = last_index.get(&frame.target_id) {
            if frame.frame_index <= prev {
                return Err(Error::Format(format!(
                    "line {lineno}: frame index {} after {prev} for target {}",
                    frame.frame_index, frame.target_id
                )));
            }
        }
        last_index.insert(frame.target_id, frame.frame_index);
        if target_id.is_none_or(|t| t == frame.target_id) {
            frames.push(frame);
        }
    }
    // Per-target order is already enforced; interleaved targets get a
    // stable global sort.
    frames.sort_by_key(|f| f.frame_index);
    Ok(frames)
}

/// Reads a JSON Lines stream, optionally keeping one target only.
pub fn read_stream(path: impl AsRef<Path>, target_id: Option<i64>) -> Result<Vec<RadarFrame>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_stream(file, target_id)
}

pub fn format_stream<W: Write>(frames: &[RadarFrame], writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for frame in frames {
        serde_json::to_writer(&mut w, &FrameRecord::from(frame))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Writes frames as JSON Lines. Floats use shortest round-trip formatting,
/// so [`read_stream`] reproduces them bit-exactly.
pub fn write_stream(frames: &[RadarFrame], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for f in frames {
        f.validate()?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    format_stream(frames, file).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<GroundTruthLabel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let indices: Vec<u64> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    GroundTruthLabel::new(indices)
}

pub fn write_labels(labels: &GroundTruthLabel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&labels.fall_frame_indices)
        .map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(index: u64, target: i64, m: usize) -> RadarFrame {
        RadarFrame {
            frame_index: index,
            target_id: target,
            points: (0..m)
                .map(|i| RadarPoint::new(1.0 + i as f64, 0.1, -0.2, 0.3))
                .collect(),
            centroid: [0.5, 2.0, 0.9],
        }
    }

    fn roundtrip(frames: &[RadarFrame]) -> Vec<RadarFrame> {
        let mut buf = Vec::new();
        format_stream(frames, &mut buf).unwrap();
        parse_stream(buf.as_slice(), None).unwrap()
    }

    #[test]
    fn empty_input_gives_empty_stream() {
        assert!(parse_stream(&b""[..], None).unwrap().is_empty());
        assert!(roundtrip(&[]).is_empty());
    }

    #[test]
    fn single_record_with_three_points() {
        let frames = vec![frame(0, 1, 3)];
        let back = roundtrip(&frames);
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].points.len(), 3);
        assert_eq!(back, frames);
    }

    #[test]
    fn empty_point_list_round_trips() {
        let frames = vec![frame(4, 0, 0)];
        assert_eq!(roundtrip(&frames), frames);
    }

    #[test]
    fn filters_by_target_preserving_order() {
        let frames = vec![
            frame(0, 1, 1),
            frame(0, 2, 2),
            frame(1, 2, 1),
            frame(1, 1, 3),
            frame(2, 1, 0),
        ];
        let mut buf = Vec::new();
        format_stream(&frames, &mut buf).unwrap();
        let only_one = parse_stream(buf.as_slice(), Some(1)).unwrap();
        let expected: Vec<_> = frames.iter().filter(|f| f.target_id == 1).cloned().collect();
        assert_eq!(only_one, expected);
    }

    #[test]
    fn malformed_record_reports_line() {
        let text = "{\"frame\":0,\"target\":0,\"centroid\":[0,0,0],\"points\":[]}\n{oops}\n";
        match parse_stream(text.as_bytes(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inversion_is_rejected() {
        let frames = vec![frame(5, 0, 1), frame(3, 0, 1)];
        let mut buf = Vec::new();
        format_stream(&frames, &mut buf).unwrap();
        assert!(matches!(
            parse_stream(buf.as_slice(), None),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn invalid_point_is_a_parse_error() {
        let text = "{\"frame\":0,\"target\":0,\"centroid\":[0,0,0],\"points\":[[-1,0,0,0]]}\n";
        assert!(matches!(
            parse_stream(text.as_bytes(), None),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn labels_must_increase() {
        assert!(GroundTruthLabel::new(vec![1, 5, 9]).is_ok());
        assert!(GroundTruthLabel::new(vec![1, 1]).is_err());
        assert!(GroundTruthLabel::new(vec![3, 2]).is_err());
    }

    #[test]
    fn labels_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.json");
        let labels = GroundTruthLabel::new(vec![10, 200, 3000]).unwrap();
        write_labels(&labels, &path).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = write_stream(&[frame(0, 0, 1)], "/nonexistent-dir/x/stream.jsonl").unwrap_err();
        assert_eq!(err.kind(), "io");
    }
}
