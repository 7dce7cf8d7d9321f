//! Synthetic radar streams from a Gaussian body model.
//!
//! A script moves the body centroid along keyframes and changes the
//! per-axis spread of the body's point distribution with it. Each frame
//! draws a Poisson number of points from that Gaussian, gives each point a
//! line-of-sight Doppler, and converts it to radar coordinates.

use serde::{Deserialize, Serialize};

use crate::dataio::{GroundTruthLabel, RadarFrame};
use crate::error::{Error, Result};
use crate::preprocess::{ground_to_spherical, GroundPoint, RadarPose};
use crate::probkit::RandomSource;

/// 10 frames per second.
pub const FRAME_PERIOD: f64 = 0.1;

/// Redraws allowed for a point that lands behind the radar.
const MAX_REDRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub centroid_height: f64,
    /// Per-axis standard deviation (x, y, z), meters.
    pub spread: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Walk,
    ForwardFall,
    BackwardFall,
    LeftFall,
    RightFall,
    Sit,
    Crouch,
    Bend,
    Jump,
}

impl MotionKind {
    pub const ALL: [MotionKind; 9] = [
        MotionKind::Walk,
        MotionKind::ForwardFall,
        MotionKind::BackwardFall,
        MotionKind::LeftFall,
        MotionKind::RightFall,
        MotionKind::Sit,
        MotionKind::Crouch,
        MotionKind::Bend,
        MotionKind::Jump,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Walk => "walk",
            MotionKind::ForwardFall => "forward_fall",
            MotionKind::BackwardFall => "backward_fall",
            MotionKind::LeftFall => "left_fall",
            MotionKind::RightFall => "right_fall",
            MotionKind::Sit => "sit",
            MotionKind::Crouch => "crouch",
            MotionKind::Bend => "bend",
            MotionKind::Jump => "jump",
        }
    }

    pub fn is_fall(self) -> bool {
        matches!(
            self,
            MotionKind::ForwardFall | MotionKind::BackwardFall | MotionKind::LeftFall | MotionKind::RightFall
        )
    }

    /// Normal activities; the only kinds meant for training.
    pub fn is_adl(self) -> bool {
        matches!(self, MotionKind::Walk | MotionKind::Sit | MotionKind::Crouch | MotionKind::Bend)
    }

    /// Horizontal unit direction of a fall. Forward is away from the radar.
    fn fall_direction(self) -> Option<[f64; 2]> {
        match self {
            MotionKind::ForwardFall => Some([0.0, 1.0]),
            MotionKind::BackwardFall => Some([0.0, -1.0]),
            MotionKind::LeftFall => Some([-1.0, 0.0]),
            MotionKind::RightFall => Some([1.0, 0.0]),
            _ => None,
        }
    }
}

impl std::str::FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown motion '{s}'")))
    }
}

/// Simulator conventions. Every field can be overridden from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub standing: PoseSpec,
    pub lying_height: f64,
    /// Spread along the fall direction when lying.
    pub lying_long_spread: f64,
    /// Spread across the fall direction and vertically when lying.
    pub lying_short_spread: f64,
    /// Horizontal centroid travel during a fall.
    pub fall_travel: f64,
    pub fall_duration: f64,
    pub jump_height: f64,
    pub mean_points: f64,
    /// Standard deviation of the Doppler noise, m/s.
    pub doppler_noise: f64,
    pub walk_speed: (f64, f64),
    /// Length of the walking segment inserted before each motion, seconds.
    pub walk_duration: (f64, f64),
    pub room_x: (f64, f64),
    pub room_y: (f64, f64),
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            standing: PoseSpec {
                centroid_height: 0.9,
                spread: [0.15, 0.15, 0.45],
            },
            lying_height: 0.15,
            lying_long_spread: 0.45,
            lying_short_spread: 0.15,
            fall_travel: 0.5,
            fall_duration: 1.0,
            jump_height: 0.3,
            mean_points: 20.0,
            doppler_noise: 0.05,
            walk_speed: (0.5, 1.0),
            walk_duration: (3.0, 6.0),
            room_x: (-1.5, 1.5),
            room_y: (1.5, 5.0),
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        let spreads = self.standing.spread.iter().chain([&self.lying_long_spread, &self.lying_short_spread]);
        if spreads.clone().any(|s| !(*s > 0.0)) {
            return Err(Error::Domain("pose spreads must be positive".into()));
        }
        if !(self.mean_points >= 1.0) {
            return Err(Error::Domain(format!("mean_points {} < 1", self.mean_points)));
        }
        if !(self.doppler_noise >= 0.0) || !(self.fall_duration > 0.0) {
            return Err(Error::Domain("doppler noise and fall duration must be non-negative/positive".into()));
        }
        for (name, (lo, hi)) in [
            ("walk_speed", self.walk_speed),
            ("walk_duration", self.walk_duration),
            ("room_x", self.room_x),
            ("room_y", self.room_y),
        ] {
            if !(lo <= hi) {
                return Err(Error::Domain(format!("{name} range ({lo}, {hi}) is not ordered")));
            }
        }
        if !(self.walk_speed.0 > 0.0) {
            return Err(Error::Domain("walk speed must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Easing {
    Linear,
    /// `(1 - cos πu) / 2`: zero velocity at both ends.
    Cosine,
}

impl Easing {
    fn value(self, u: f64) -> f64 {
        match self {
            Easing::Linear => u,
            Easing::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * u).cos()),
        }
    }

    fn slope(self, u: f64) -> f64 {
        match self {
            Easing::Linear => 1.0,
            Easing::Cosine => 0.5 * std::f64::consts::PI * (std::f64::consts::PI * u).sin(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    /// Seconds from the script start.
    pub time: f64,
    pub centroid: [f64; 3],
    pub spread: [f64; 3],
}

/// A motion as keyframed centroid and spread. Segment `i` runs from
/// keyframe `i` to `i + 1` with `easing[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub kind: MotionKind,
    pub keyframes: Vec<Keyframe>,
    pub easing: Vec<Easing>,
    pub mean_points: f64,
    pub doppler_noise: f64,
}

fn lerp3(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

/// Rounds a duration to a whole number of frames (at least one).
fn snap(seconds: f64) -> f64 {
    (seconds / FRAME_PERIOD).round().max(1.0) * FRAME_PERIOD
}

struct ScriptBuilder {
    kind: MotionKind,
    keyframes: Vec<Keyframe>,
    easing: Vec<Easing>,
}

impl ScriptBuilder {
    fn new(kind: MotionKind, centroid: [f64; 3], spread: [f64; 3]) -> Self {
        Self {
            kind,
            keyframes: vec![Keyframe {
                time: 0.0,
                centroid,
                spread,
            }],
            easing: Vec::new(),
        }
    }

    fn last(&self) -> Keyframe {
        *self.keyframes.last().expect("never empty")
    }

    fn to(mut self, dt: f64, centroid: [f64; 3], spread: [f64; 3], easing: Easing) -> Self {
        let time = self.last().time + snap(dt);
        self.keyframes.push(Keyframe { time, centroid, spread });
        self.easing.push(easing);
        self
    }

    fn hold(self, dt: f64) -> Self {
        let k = self.last();
        self.to(dt, k.centroid, k.spread, Easing::Linear)
    }

    fn finish(self, cfg: &SimulatorConfig) -> MotionScript {
        MotionScript {
            kind: self.kind,
            keyframes: self.keyframes,
            easing: self.easing,
            mean_points: cfg.mean_points,
            doppler_noise: cfg.doppler_noise,
        }
    }
}

impl MotionScript {
    /// A motion starting upright at horizontal position `at`. Parameters of
    /// the normal activities (depth, speed, hold time) vary per instance.
    pub fn build(kind: MotionKind, at: [f64; 2], cfg: &SimulatorConfig, rng: &mut RandomSource) -> Self {
        let stand = cfg.standing;
        let h0 = stand.centroid_height;
        let start = [at[0], at[1], h0];
        let b = ScriptBuilder::new(kind, start, stand.spread);
        let shifted = |dy: f64, h: f64| [at[0], at[1] + dy, h];
        match kind {
            MotionKind::Walk => {
                let duration = rng.uniform_range(cfg.walk_duration.0, cfg.walk_duration.1);
                return Self::walk(at, duration, cfg, rng);
            }
            MotionKind::ForwardFall | MotionKind::BackwardFall | MotionKind::LeftFall | MotionKind::RightFall => {
                let dir = kind.fall_direction().expect("fall kind");
                let end = [
                    at[0] + dir[0] * cfg.fall_travel,
                    at[1] + dir[1] * cfg.fall_travel,
                    cfg.lying_height,
                ];
                let (long, short) = (cfg.lying_long_spread, cfg.lying_short_spread);
                let lying = if dir[0] != 0.0 { [long, short, short] } else { [short, long, short] };
                let lie = rng.uniform_range(1.0, 2.0);
                let rise = rng.uniform_range(1.5, 2.5);
                b.hold(0.3)
                    .to(cfg.fall_duration, end, lying, Easing::Cosine)
                    .hold(lie)
                    .to(rise, [end[0], end[1], h0], stand.spread, Easing::Cosine)
                    .hold(0.3)
                    .finish(cfg)
            }
            MotionKind::Sit => {
                // Sitting down on the floor, legs forward.
                let h = rng.uniform_range(0.2, 0.4);
                let down = rng.uniform_range(0.8, 2.0);
                b.hold(0.3)
                    .to(down, shifted(0.2, h), [0.25, 0.3, 0.25], Easing::Cosine)
                    .hold(rng.uniform_range(1.0, 2.0))
                    .to(rng.uniform_range(1.2, 2.0), start, stand.spread, Easing::Cosine)
                    .hold(0.3)
                    .finish(cfg)
            }
            MotionKind::Crouch => {
                let h = rng.uniform_range(0.4, 0.6);
                let down = rng.uniform_range(0.7, 1.5);
                b.hold(0.3)
                    .to(down, [at[0], at[1], h], [0.2, 0.2, 0.25], Easing::Cosine)
                    .hold(rng.uniform_range(1.0, 2.0))
                    .to(rng.uniform_range(0.8, 1.5), start, stand.spread, Easing::Cosine)
                    .hold(0.3)
                    .finish(cfg)
            }
            MotionKind::Bend => {
                let h = rng.uniform_range(0.6, 0.75);
                let down = rng.uniform_range(0.8, 1.5);
                b.hold(0.3)
                    .to(down, shifted(0.2, h), [0.15, 0.35, 0.3], Easing::Cosine)
                    .hold(rng.uniform_range(0.5, 1.5))
                    .to(rng.uniform_range(0.8, 1.5), start, stand.spread, Easing::Cosine)
                    .hold(0.3)
                    .finish(cfg)
            }
            MotionKind::Jump => {
                let up = [at[0], at[1], h0 + cfg.jump_height];
                b.hold(0.3)
                    .to(0.3, up, stand.spread, Easing::Cosine)
                    .to(0.3, start, stand.spread, Easing::Cosine)
                    .hold(0.5)
                    .finish(cfg)
            }
        }
    }

    /// Upright walking between random waypoints inside the room.
    pub fn walk(at: [f64; 2], duration: f64, cfg: &SimulatorConfig, rng: &mut RandomSource) -> Self {
        let h0 = cfg.standing.centroid_height;
        let spread = cfg.standing.spread;
        let speed = rng.uniform_range(cfg.walk_speed.0, cfg.walk_speed.1);
        let total = snap(duration);
        let mut keyframes = vec![Keyframe {
            time: 0.0,
            centroid: [at[0], at[1], h0],
            spread,
        }];
        let mut easing = Vec::new();
        let mut pos = at;
        let mut t = 0.0;
        while t < total - 1e-9 {
            let target = [
                rng.uniform_range(cfg.room_x.0, cfg.room_x.1),
                rng.uniform_range(cfg.room_y.0, cfg.room_y.1),
            ];
            let dist = ((target[0] - pos[0]).powi(2) + (target[1] - pos[1]).powi(2)).sqrt();
            if dist < 1e-6 {
                continue;
            }
            let leg = dist / speed;
            let (dt, end) = if t + leg > total {
                let f = (total - t) / leg;
                (total - t, [pos[0] + (target[0] - pos[0]) * f, pos[1] + (target[1] - pos[1]) * f])
            } else {
                (leg, target)
            };
            t += dt;
            keyframes.push(Keyframe {
                time: if t >= total - 1e-9 { total } else { t },
                centroid: [end[0], end[1], h0],
                spread,
            });
            easing.push(Easing::Linear);
            pos = end;
        }
        if keyframes.len() == 1 {
            keyframes.push(Keyframe {
                time: total,
                ..keyframes[0]
            });
            easing.push(Easing::Linear);
        }
        MotionScript {
            kind: MotionKind::Walk,
            keyframes,
            easing,
            mean_points: cfg.mean_points,
            doppler_noise: cfg.doppler_noise,
        }
    }

    pub fn duration(&self) -> f64 {
        self.keyframes.last().map_or(0.0, |k| k.time)
    }

    /// Whole frames in the script; the end keyframe belongs to the next one.
    pub fn frame_count(&self) -> usize {
        (self.duration() / FRAME_PERIOD).round() as usize
    }

    fn segment(&self, t: f64) -> (usize, f64) {
        let last = self.keyframes.len() - 1;
        let t = t.clamp(0.0, self.duration());
        let i = self.keyframes[1..]
            .iter()
            .position(|k| t <= k.time)
            .unwrap_or(last - 1)
            .min(last - 1);
        let (a, b) = (self.keyframes[i].time, self.keyframes[i + 1].time);
        let u = if b > a { (t - a) / (b - a) } else { 1.0 };
        (i, u)
    }

    pub fn centroid(&self, t: f64) -> [f64; 3] {
        let (i, u) = self.segment(t);
        lerp3(
            self.keyframes[i].centroid,
            self.keyframes[i + 1].centroid,
            self.easing[i].value(u),
        )
    }

    pub fn velocity(&self, t: f64) -> [f64; 3] {
        let (i, u) = self.segment(t);
        let (a, b) = (&self.keyframes[i], &self.keyframes[i + 1]);
        let dt = b.time - a.time;
        if dt <= 0.0 {
            return [0.0; 3];
        }
        let s = self.easing[i].slope(u) / dt;
        [
            (b.centroid[0] - a.centroid[0]) * s,
            (b.centroid[1] - a.centroid[1]) * s,
            (b.centroid[2] - a.centroid[2]) * s,
        ]
    }

    pub fn pose(&self, t: f64) -> PoseSpec {
        let (i, u) = self.segment(t);
        let c = self.centroid(t);
        PoseSpec {
            centroid_height: c[2],
            spread: lerp3(self.keyframes[i].spread, self.keyframes[i + 1].spread, self.easing[i].value(u)),
        }
    }

    /// Height threshold halfway down the scripted descent, for falls.
    fn half_descent_height(&self) -> Option<f64> {
        if !self.kind.is_fall() {
            return None;
        }
        let top = self.keyframes[0].centroid[2];
        let bottom = self
            .keyframes
            .iter()
            .map(|k| k.centroid[2])
            .fold(f64::INFINITY, f64::min);
        Some(top - 0.5 * (top - bottom))
    }
}

/// One ground-truth point of a rendered frame, kept for round-trip checks.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub frame: RadarFrame,
    pub ground_points: Vec<GroundPoint>,
}

/// Radar frame at time `t` of `script`.
pub fn render_frame(
    script: &MotionScript,
    t: f64,
    frame_index: u64,
    pose: &RadarPose,
    rng: &mut RandomSource,
) -> Result<RenderedFrame> {
    if !(0.0..=script.duration() + 1e-9).contains(&t) {
        return Err(Error::Domain(format!(
            "time {t} outside script of {} s",
            script.duration()
        )));
    }
    let centroid = script.centroid(t);
    let velocity = script.velocity(t);
    let spread = script.pose(t).spread;
    let count = 1 + rng.poisson(script.mean_points - 1.0) as usize;
    let mut points = Vec::with_capacity(count);
    let mut ground_points = Vec::with_capacity(count);
    for _ in 0..count {
        for attempt in 0..=MAX_REDRAWS {
            let g = [
                rng.normal(centroid[0], spread[0]),
                rng.normal(centroid[1], spread[1]),
                rng.normal(centroid[2], spread[2]),
            ];
            let los = [g[0], g[1], g[2] - pose.height];
            let norm = (los[0] * los[0] + los[1] * los[1] + los[2] * los[2]).sqrt();
            let radial = if norm > 0.0 {
                (velocity[0] * los[0] + velocity[1] * los[1] + velocity[2] * los[2]) / norm
            } else {
                0.0
            };
            let gp = GroundPoint {
                x: g[0],
                y: g[1],
                z: g[2],
                doppler: radial + rng.normal(0.0, script.doppler_noise),
            };
            match ground_to_spherical(&gp, pose) {
                Ok(p) => {
                    points.push(p);
                    ground_points.push(gp);
                    break;
                }
                Err(_) if attempt < MAX_REDRAWS => continue,
                Err(_) => log::warn!("frame {frame_index}: point still behind the radar after {MAX_REDRAWS} redraws"),
            }
        }
    }
    Ok(RenderedFrame {
        frame: RadarFrame {
            frame_index,
            target_id: 0,
            points,
            centroid,
        },
        ground_points,
    })
}

/// Where one scripted motion landed in a generated stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: MotionKind,
    pub start_frame: u64,
    /// Exclusive.
    pub end_frame: u64,
    pub label_frame: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedRun {
    pub frames: Vec<RadarFrame>,
    pub labels: GroundTruthLabel,
    /// Motion segments including the inserted walks, in stream order.
    pub segments: Vec<Segment>,
}

impl SimulatedRun {
    pub fn motions(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.kind != MotionKind::Walk)
    }
}

/// Motion kinds with repeat counts.
pub type Recipe = Vec<(MotionKind, usize)>;

/// Normal activity only, for training.
pub fn adl_recipe(scale: usize) -> Recipe {
    vec![
        (MotionKind::Walk, scale),
        (MotionKind::Sit, 3 * scale),
        (MotionKind::Crouch, 3 * scale),
        (MotionKind::Bend, 3 * scale),
    ]
}

/// One of every non-walk motion.
pub fn single_recipe() -> Recipe {
    MotionKind::ALL
        .into_iter()
        .filter(|&k| k != MotionKind::Walk)
        .map(|k| (k, 1))
        .collect()
}

/// Fifty falls split by direction among fifty of each other motion.
pub fn benchmark_recipe() -> Recipe {
    vec![
        (MotionKind::ForwardFall, 15),
        (MotionKind::BackwardFall, 15),
        (MotionKind::LeftFall, 10),
        (MotionKind::RightFall, 10),
        (MotionKind::Sit, 50),
        (MotionKind::Crouch, 50),
        (MotionKind::Bend, 50),
        (MotionKind::Jump, 50),
    ]
}

/// Renders every motion of `recipe` (in a seeded random order) with a
/// random walk before each one and after the last.
pub fn generate_dataset(
    recipe: &[(MotionKind, usize)],
    pose: &RadarPose,
    seed: u64,
    cfg: &SimulatorConfig,
) -> Result<SimulatedRun> {
    cfg.validate()?;
    pose.validate()?;
    let root = RandomSource::new(seed);
    let mut plan_rng = root.child(0);
    let mut render_rng = root.child(1);

    let mut motions: Vec<MotionKind> = recipe
        .iter()
        .flat_map(|&(kind, count)| std::iter::repeat_n(kind, count))
        .collect();
    plan_rng.shuffle(&mut motions);

    let mut run = SimulatedRun {
        frames: Vec::new(),
        labels: GroundTruthLabel::default(),
        segments: Vec::new(),
    };
    if motions.is_empty() {
        return Ok(run);
    }

    let mut pos = [
        plan_rng.uniform_range(cfg.room_x.0, cfg.room_x.1),
        plan_rng.uniform_range(cfg.room_y.0, cfg.room_y.1),
    ];
    let mut scripts = Vec::with_capacity(2 * motions.len() + 1);
    for &kind in &motions {
        if kind != MotionKind::Walk {
            let walk = MotionScript::build(MotionKind::Walk, pos, cfg, &mut plan_rng);
            pos = end_position(&walk);
            scripts.push(walk);
        }
        let script = MotionScript::build(kind, pos, cfg, &mut plan_rng);
        pos = end_position(&script);
        scripts.push(script);
    }
    scripts.push(MotionScript::build(MotionKind::Walk, pos, cfg, &mut plan_rng));

    let mut index = 0u64;
    let mut labels = Vec::new();
    for script in &scripts {
        let start = index;
        let half = script.half_descent_height();
        let mut label = None;
        for k in 0..script.frame_count() {
            let rendered = render_frame(script, k as f64 * FRAME_PERIOD, index, pose, &mut render_rng)?;
            if let (Some(h), None) = (half, label) {
                if rendered.frame.centroid[2] <= h {
                    label = Some(index);
                }
            }
            run.frames.push(rendered.frame);
            index += 1;
        }
        labels.extend(label);
        run.segments.push(Segment {
            kind: script.kind,
            start_frame: start,
            end_frame: index,
            label_frame: label,
        });
    }
    run.labels = GroundTruthLabel::new(labels)?;
    Ok(run)
}

fn end_position(script: &MotionScript) -> [f64; 2] {
    let c = script.centroid(script.duration());
    [c[0], c[1]]
}
