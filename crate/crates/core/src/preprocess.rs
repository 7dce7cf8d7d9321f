//! Raw radar frames to fixed-shape motion patterns.
//!
//! The chain is: spherical → ground coordinates, sliding windows of `L`
//! consecutive frames, a shift so the first frame's centroid sits at the
//! horizontal origin, and per-frame oversampling to exactly `N` points with
//! the mean and covariance of the original cloud preserved.

use serde::{Deserialize, Serialize};

use crate::dataio::{RadarFrame, RadarPoint};
use crate::diffengine::Tensor;
use crate::error::{ensure_finite, Error, Result};
use crate::probkit::RandomSource;

/// Components per point: x, y, z, doppler.
pub const POINT_DIM: usize = 4;

/// A point in ground Cartesian coordinates (x cross-radar, y forward,
/// z height), meters, plus Doppler in m/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub doppler: f64,
}

impl GroundPoint {
    pub fn to_array(self) -> [f64; POINT_DIM] {
        [self.x, self.y, self.z, self.doppler]
    }
}

/// Mounting of the sensor: downward tilt about the cross-radar axis and
/// height above the floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarPose {
    pub tilt: f64,
    pub height: f64,
}

impl RadarPose {
    pub fn new(tilt: f64, height: f64) -> Result<Self> {
        let pose = Self { tilt, height };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_degrees(tilt_deg: f64, height: f64) -> Result<Self> {
        Self::new(tilt_deg.to_radians(), height)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tilt.is_finite() || !self.height.is_finite() {
            return Err(Error::Domain("non-finite radar pose".into()));
        }
        if self.height < 0.0 {
            return Err(Error::Domain(format!("negative radar height {}", self.height)));
        }
        if self.tilt.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::Domain(format!("tilt {} outside [-pi/2, pi/2]", self.tilt)));
        }
        Ok(())
    }
}

impl Default for RadarPose {
    /// Two meters up, tilted ten degrees down.
    fn default() -> Self {
        Self {
            tilt: 10f64.to_radians(),
            height: 2.0,
        }
    }
}

/// Radar spherical measurement to ground coordinates:
///
/// ```text
/// [x]   [1    0      0  ] [r cos(el) sin(az)]   [0]
/// [y] = [0  cos(t) sin(t)] [r cos(el) cos(az)] + [0]
/// [z]   [0 -sin(t) cos(t)] [r sin(el)        ]   [h]
/// ```
pub fn spherical_to_ground(p: &RadarPoint, pose: &RadarPose) -> Result<GroundPoint> {
    ensure_finite("radar point", &[p.range, p.azimuth, p.elevation, p.doppler])?;
    ensure_finite("radar pose", &[pose.tilt, pose.height])?;
    let (se, ce) = p.elevation.sin_cos();
    let (sa, ca) = p.azimuth.sin_cos();
    let xr = p.range * ce * sa;
    let yr = p.range * ce * ca;
    let zr = p.range * se;
    let (st, ct) = pose.tilt.sin_cos();
    Ok(GroundPoint {
        x: xr,
        y: ct * yr + st * zr,
        z: -st * yr + ct * zr + pose.height,
        doppler: p.doppler,
    })
}

/// Inverse of [`spherical_to_ground`]. Fails for points on the radar's
/// own plane or behind it (`y ≤ 0` in radar coordinates).
pub fn ground_to_spherical(g: &GroundPoint, pose: &RadarPose) -> Result<RadarPoint> {
    ensure_finite("ground point", &[g.x, g.y, g.z, g.doppler])?;
    let (st, ct) = pose.tilt.sin_cos();
    let dz = g.z - pose.height;
    // Rotation is orthogonal, so its inverse is the transpose.
    let xr = g.x;
    let yr = ct * g.y - st * dz;
    let zr = st * g.y + ct * dz;
    if yr <= 0.0 {
        return Err(Error::Domain(format!(
            "point ({}, {}, {}) is behind the radar",
            g.x, g.y, g.z
        )));
    }
    let range = (xr * xr + yr * yr + zr * zr).sqrt();
    Ok(RadarPoint {
        range,
        azimuth: xr.atan2(yr),
        elevation: (zr / range).clamp(-1.0, 1.0).asin(),
        doppler: g.doppler,
    })
}

/// One frame after the coordinate transform.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundFrame {
    pub frame_index: u64,
    pub points: Vec<GroundPoint>,
    pub centroid: [f64; 3],
}

pub fn to_ground_frames(frames: &[RadarFrame], pose: &RadarPose) -> Result<Vec<GroundFrame>> {
    frames
        .iter()
        .map(|f| {
            Ok(GroundFrame {
                frame_index: f.frame_index,
                points: f
                    .points
                    .iter()
                    .map(|p| spherical_to_ground(p, pose))
                    .collect::<Result<_>>()?,
                centroid: f.centroid,
            })
        })
        .collect()
}

/// Sliding windows of `len` frames whose starts advance by `stride`.
/// Windows spanning a dropped frame (index jump > 1) are skipped.
pub fn window_stream(frames: &[GroundFrame], len: usize, stride: usize) -> Result<Vec<&[GroundFrame]>> {
    if len == 0 || stride == 0 {
        return Err(Error::Domain(format!(
            "window length {len} and stride {stride} must be positive"
        )));
    }
    if frames.len() < len {
        return Ok(Vec::new());
    }
    Ok((0..=frames.len() - len)
        .step_by(stride)
        .map(|s| &frames[s..s + len])
        .filter(|w| w.windows(2).all(|p| p[1].frame_index == p[0].frame_index + 1))
        .collect())
}

/// Moves the window so the first frame's centroid is at `x = y = 0`.
/// Heights and Doppler are untouched.
pub fn shift_to_reference(window: &[GroundFrame]) -> Vec<GroundFrame> {
    let Some(first) = window.first() else {
        return Vec::new();
    };
    let [cx, cy, _] = first.centroid;
    window
        .iter()
        .map(|f| GroundFrame {
            frame_index: f.frame_index,
            points: f
                .points
                .iter()
                .map(|p| GroundPoint {
                    x: p.x - cx,
                    y: p.y - cy,
                    ..*p
                })
                .collect(),
            centroid: [f.centroid[0] - cx, f.centroid[1] - cy, f.centroid[2]],
        })
        .collect()
}

/// Extends an `M × K` cloud to `N × K` rows.
///
/// For `M ≤ N` the first `M` rows become `μ̂ + √(N/M)(x_i − μ̂)` and the rest
/// are `μ̂`, which leaves the ML mean and the full ML covariance unchanged.
/// For `M > N` a uniform subsample without replacement is taken.
pub fn oversample_frame(points: &Tensor, n: usize, rng: &mut RandomSource) -> Result<Tensor> {
    let (m, k) = (points.rows(), points.cols());
    if n == 0 {
        return Err(Error::Domain("target point count must be at least 1".into()));
    }
    if m == 0 {
        return Err(Error::Domain("cannot oversample an empty frame".into()));
    }
    if m == n {
        return Ok(points.clone());
    }
    if m > n {
        log::warn!("frame has {m} points, more than the {n} kept; subsampling");
        let mut idx = rng.sample_indices(m, n);
        idx.sort_unstable();
        let values = idx.iter().flat_map(|&i| points.row_slice(i).to_vec()).collect();
        return Tensor::new(n, k, values);
    }

    let mut mean = vec![0.0; k];
    for i in 0..m {
        for (acc, v) in mean.iter_mut().zip(points.row_slice(i)) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let scale = (n as f64 / m as f64).sqrt();
    let mut out = Vec::with_capacity(n * k);
    for i in 0..m {
        out.extend(points.row_slice(i).iter().zip(&mean).map(|(x, mu)| mu + scale * (x - mu)));
    }
    for _ in m..n {
        out.extend_from_slice(&mean);
    }
    Tensor::new(n, k, out)
}

/// Window length, points per frame and window stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternShape {
    pub frames: usize,
    pub points: usize,
    pub stride: usize,
}

impl Default for PatternShape {
    fn default() -> Self {
        Self {
            frames: 10,
            points: 64,
            stride: 1,
        }
    }
}

/// `L × N × K` points in reference coordinates, stored as an `(L·N) × K`
/// tensor (frame `l` occupies rows `l·N .. (l+1)·N`), plus the centroid
/// height of every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionPattern {
    pub points: Tensor,
    pub centroid_heights: Vec<f64>,
    pub start_frame_index: u64,
    pub frames: usize,
    pub points_per_frame: usize,
    /// Frames that had no detections and were filled with a placeholder.
    #[serde(default)]
    pub placeholder_frames: Vec<usize>,
}

impl MotionPattern {
    pub fn new(points: Tensor, centroid_heights: Vec<f64>, start_frame_index: u64) -> Result<Self> {
        let frames = centroid_heights.len();
        if frames == 0 || points.rows() % frames != 0 || points.cols() != POINT_DIM {
            return Err(Error::Shape(format!(
                "pattern tensor {:?} for {frames} frames",
                points.shape()
            )));
        }
        Ok(Self {
            points_per_frame: points.rows() / frames,
            points,
            centroid_heights,
            start_frame_index,
            frames,
            placeholder_frames: Vec::new(),
        })
    }

    /// Index of the last frame in the window; detections are stamped here.
    pub fn end_frame_index(&self) -> u64 {
        self.start_frame_index + self.frames as u64 - 1
    }

    /// Rows of frame `l`.
    pub fn frame(&self, l: usize) -> Tensor {
        let n = self.points_per_frame;
        let k = self.points.cols();
        Tensor::new(n, k, self.points.values()[l * n * k..(l + 1) * n * k].to_vec())
            .expect("slice of a consistent pattern")
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.points_per_frame, self.points.cols()]
    }
}

fn frame_to_rows(frame: &GroundFrame, n: usize, rng: &mut RandomSource) -> Result<(Vec<f64>, bool)> {
    if frame.points.is_empty() {
        // Stationary blob at the centroid height.
        let row = [0.0, 0.0, frame.centroid[2], 0.0];
        return Ok((row.repeat(n), true));
    }
    let raw: Vec<f64> = frame.points.iter().flat_map(|p| p.to_array()).collect();
    let m = frame.points.len();
    let t = oversample_frame(&Tensor::new(m, POINT_DIM, raw)?, n, rng)?;
    Ok((t.into_values(), false))
}

/// Builds one pattern from a window already in reference coordinates.
pub fn pattern_from_window(window: &[GroundFrame], n: usize, rng: &mut RandomSource) -> Result<MotionPattern> {
    let mut values = Vec::with_capacity(window.len() * n * POINT_DIM);
    let mut placeholders = Vec::new();
    for (l, frame) in window.iter().enumerate() {
        let (rows, placeholder) = frame_to_rows(frame, n, rng)?;
        values.extend(rows);
        if placeholder {
            placeholders.push(l);
        }
    }
    let heights = window.iter().map(|f| f.centroid[2]).collect();
    let start = window
        .first()
        .ok_or_else(|| Error::Domain("empty window".into()))?
        .frame_index;
    let mut pattern = MotionPattern::new(Tensor::new(window.len() * n, POINT_DIM, values)?, heights, start)?;
    pattern.placeholder_frames = placeholders;
    Ok(pattern)
}

/// Full preprocessing chain for a single-target stream. Each window draws
/// from its own RNG child keyed by its first frame index, so the output
/// does not depend on processing order.
pub fn build_motion_patterns(
    stream: &[RadarFrame],
    pose: &RadarPose,
    shape: PatternShape,
    rng: &RandomSource,
) -> Result<Vec<MotionPattern>> {
    if let Some(first) = stream.first() {
        if stream.iter().any(|f| f.target_id != first.target_id) {
            return Err(Error::Domain(
                "stream holds several targets; filter by target id first".into(),
            ));
        }
    }
    pose.validate()?;
    let ground = to_ground_frames(stream, pose)?;
    window_stream(&ground, shape.frames, shape.stride)?
        .into_iter()
        .map(|w| {
            let shifted = shift_to_reference(w);
            let mut child = rng.child(w[0].frame_index);
            pattern_from_window(&shifted, shape.points, &mut child)
        })
        .collect()
}
