mod common;

use common::*;
use proptest::prelude::*;
use radarfall_core::dataio::{RadarFrame, RadarPoint};
use radarfall_core::diffengine::Tensor;
use radarfall_core::preprocess::*;
use radarfall_core::probkit::RandomSource;
use radarfall_core::simulator::{generate_dataset, MotionKind, SimulatorConfig};

#[test]
fn oversampler_preserves_mean_and_covariance_on_10k_instances() {
    let worst = oversampler_worst_error(10_000, 2024);
    assert!(worst <= 1e-9, "worst relative error {worst:e}");
}

#[test]
fn stationary_single_point_oversamples_to_copies() {
    let x = Tensor::row(vec![0.5, 2.0, 1.0, -0.1]);
    let y = oversample_frame(&x, 64, &mut RandomSource::new(0)).unwrap();
    for r in 0..64 {
        assert_eq!(y.row_slice(r), x.row_slice(0));
    }
}

/// Independent construction of the rotation as an explicit 3x3 matrix.
fn matrix_oracle(r: f64, az: f64, el: f64, tilt: f64, h: f64) -> [f64; 3] {
    let v = [r * el.cos() * az.sin(), r * el.cos() * az.cos(), r * el.sin()];
    let m = [
        [1.0, 0.0, 0.0],
        [0.0, tilt.cos(), tilt.sin()],
        [0.0, -tilt.sin(), tilt.cos()],
    ];
    let mut out = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i] += m[i][j] * v[j];
        }
    }
    out[2] += h;
    out
}

#[test]
fn spherical_to_ground_matches_matrix_oracle() {
    let pose = RadarPose::from_degrees(10.0, 2.0).unwrap();
    let p = RadarPoint::new(5.0, 30f64.to_radians(), (-10f64).to_radians(), 0.4);
    let g = spherical_to_ground(&p, &pose).unwrap();
    let want = matrix_oracle(5.0, 30f64.to_radians(), (-10f64).to_radians(), 10f64.to_radians(), 2.0);
    assert!((g.x - want[0]).abs() < 1e-12);
    assert!((g.y - want[1]).abs() < 1e-12);
    assert!((g.z - want[2]).abs() < 1e-12);
    assert_eq!(g.doppler, 0.4);
}

proptest! {
    #[test]
    fn rotation_preserves_range(
        r in 0.01f64..20.0,
        az in -3.1f64..3.1,
        el in -1.5f64..1.5,
        tilt in -1.0f64..1.0,
        h in 0.0f64..3.0,
    ) {
        let pose = RadarPose::new(tilt, h).unwrap();
        let g = spherical_to_ground(&RadarPoint::new(r, az, el, 0.0), &pose).unwrap();
        let d = (g.x * g.x + g.y * g.y + (g.z - h) * (g.z - h)).sqrt();
        prop_assert!((d - r).abs() <= 1e-12 * r);
        let want = matrix_oracle(r, az, el, tilt, h);
        prop_assert!((g.x - want[0]).abs() <= 1e-12 * r.max(1.0));
        prop_assert!((g.y - want[1]).abs() <= 1e-12 * r.max(1.0));
        prop_assert!((g.z - want[2]).abs() <= 1e-12 * r.max(1.0) + 1e-15);
    }

    #[test]
    fn zero_pose_is_plain_spherical(r in 0.0f64..10.0, az in -3.0f64..3.0, el in -1.5f64..1.5, h in 0.0f64..4.0) {
        let p = RadarPoint::new(r, az, el, 1.0);
        let g0 = spherical_to_ground(&p, &RadarPose::new(0.0, 0.0).unwrap()).unwrap();
        prop_assert_eq!(g0.x, r * el.cos() * az.sin());
        prop_assert_eq!(g0.y, r * el.cos() * az.cos());
        prop_assert_eq!(g0.z, r * el.sin());
        let gh = spherical_to_ground(&p, &RadarPose::new(0.0, h).unwrap()).unwrap();
        prop_assert_eq!(gh.z, g0.z + h);
    }

    #[test]
    fn ground_spherical_round_trip(
        x in -3.0f64..3.0, y in 0.5f64..6.0, z in -0.5f64..2.5, tilt in -0.3f64..0.3, h in 1.0f64..3.0,
    ) {
        let pose = RadarPose::new(tilt, h).unwrap();
        let g = GroundPoint { x, y, z, doppler: 0.1 };
        if let Ok(p) = ground_to_spherical(&g, &pose) {
            let back = spherical_to_ground(&p, &pose).unwrap();
            prop_assert!((back.x - x).abs() < 1e-9 && (back.y - y).abs() < 1e-9 && (back.z - z).abs() < 1e-9);
        }
    }

    #[test]
    fn oversampler_moments_proptest(m in 1usize..=64, seed in any::<u64>()) {
        let mut rng = RandomSource::new(seed);
        let x = random_tensor(m, 4, 2.0, &mut rng);
        let y = oversample_frame(&x, 64, &mut rng).unwrap();
        let (m0, c0) = moments(&x);
        let (m1, c1) = moments(&y);
        for a in 0..4 {
            prop_assert!((m0[a] - m1[a]).abs() <= 1e-9 * m0[a].abs().max(1.0));
            for b in 0..4 {
                prop_assert!((c0[a][b] - c1[a][b]).abs() <= 1e-9 * c0[a][a].max(c0[b][b]).max(1e-300) + 1e-15);
            }
        }
    }
}

fn frame(index: u64, centroid: [f64; 3], points: Vec<GroundPoint>) -> GroundFrame {
    GroundFrame { frame_index: index, points, centroid }
}

#[test]
fn shift_matches_loop_oracle() {
    let mut rng = RandomSource::new(3);
    let window: Vec<GroundFrame> = (0..10)
        .map(|i| {
            let c = [rng.uniform_range(-1.0, 1.0), rng.uniform_range(2.0, 4.0), 0.9];
            let pts = (0..5)
                .map(|_| GroundPoint {
                    x: rng.uniform_range(-2.0, 2.0),
                    y: rng.uniform_range(1.0, 5.0),
                    z: rng.uniform_range(0.0, 2.0),
                    doppler: rng.uniform_range(-1.0, 1.0),
                })
                .collect();
            frame(i, c, pts)
        })
        .collect();
    let shifted = shift_to_reference(&window);
    let (cx, cy) = (window[0].centroid[0], window[0].centroid[1]);
    for (a, b) in window.iter().zip(&shifted) {
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(q.x, p.x - cx);
            assert_eq!(q.y, p.y - cy);
            assert_eq!((q.z, q.doppler), (p.z, p.doppler));
        }
    }
    // A second application is a no-op: the first centroid is now at x = y = 0.
    assert_eq!(shift_to_reference(&shifted), shifted);
}

#[test]
fn short_stream_and_constant_stream() {
    let pose = RadarPose::default();
    let mk = |i: u64| RadarFrame {
        frame_index: i,
        target_id: 1,
        points: vec![RadarPoint::new(3.0, 0.1, -0.2, 0.0), RadarPoint::new(3.1, 0.0, -0.1, 0.1)],
        centroid: [0.2, 3.0, 0.9],
    };
    let shape = PatternShape::default();
    let short: Vec<RadarFrame> = (0..9).map(mk).collect();
    assert!(build_motion_patterns(&short, &pose, shape, &RandomSource::new(0)).unwrap().is_empty());
    let ten: Vec<RadarFrame> = (0..10).map(mk).collect();
    let patterns = build_motion_patterns(&ten, &pose, shape, &RandomSource::new(0)).unwrap();
    assert_eq!(patterns.len(), 1);
    assert_eq!(patterns[0].shape(), [10, 64, 4]);
    assert_eq!(patterns[0].points.shape(), [640, 4]);
}

#[test]
fn mixed_targets_are_rejected() {
    let mut frames: Vec<RadarFrame> = (0..10)
        .map(|i| RadarFrame { frame_index: i, target_id: 1, points: vec![], centroid: [0.0, 3.0, 0.9] })
        .collect();
    frames[4].target_id = 2;
    assert!(build_motion_patterns(&frames, &RadarPose::default(), PatternShape::default(), &RandomSource::new(0)).is_err());
}

/// Scalar re-derivation of the whole chain for a simulated walk: transform
/// every point, shift by the first centroid, then compare the per-frame
/// ML mean and variance of the pattern with the raw frame's.
#[test]
fn walk_stream_patterns_match_scalar_chain() {
    let pose = RadarPose::default();
    let run = generate_dataset(&[(MotionKind::Walk, 3)], &pose, 11, &SimulatorConfig::default()).unwrap();
    let shape = PatternShape { frames: 10, points: 64, stride: 7 };
    let patterns = build_motion_patterns(&run.frames, &pose, shape, &RandomSource::new(5)).unwrap();
    assert!(patterns.len() > 5);
    let (st, ct) = pose.tilt.sin_cos();
    for p in &patterns {
        let start = p.start_frame_index as usize;
        let first = &run.frames[start];
        for l in 0..10 {
            let raw = &run.frames[start + l];
            assert_eq!(p.centroid_heights[l], raw.centroid[2]);
            let pts: Vec<[f64; 4]> = raw
                .points
                .iter()
                .map(|q| {
                    let xr = q.range * q.elevation.cos() * q.azimuth.sin();
                    let yr = q.range * q.elevation.cos() * q.azimuth.cos();
                    let zr = q.range * q.elevation.sin();
                    [
                        xr - first.centroid[0],
                        ct * yr + st * zr - first.centroid[1],
                        -st * yr + ct * zr + pose.height,
                        q.doppler,
                    ]
                })
                .collect();
            let got = p.frame(l);
            if pts.is_empty() {
                assert!(p.placeholder_frames.contains(&l));
                continue;
            }
            let m = pts.len() as f64;
            let (m1, c1) = moments(&got);
            for k in 0..4 {
                let mean = pts.iter().map(|q| q[k]).sum::<f64>() / m;
                let var = pts.iter().map(|q| (q[k] - mean).powi(2)).sum::<f64>() / m;
                assert!((m1[k] - mean).abs() <= 1e-9 * mean.abs().max(1.0), "mean {k}");
                assert!((c1[k][k] - var).abs() <= 1e-9 * var.max(1e-12), "var {k}");
            }
        }
    }
}

#[test]
fn patterns_do_not_depend_on_processing_order() {
    let pose = RadarPose::default();
    let run = generate_dataset(&[(MotionKind::Sit, 1)], &pose, 2, &SimulatorConfig::default()).unwrap();
    let shape = PatternShape { stride: 1, ..Default::default() };
    let all = build_motion_patterns(&run.frames, &pose, shape, &RandomSource::new(1)).unwrap();
    let tail = build_motion_patterns(&run.frames[20..], &pose, shape, &RandomSource::new(1)).unwrap();
    assert_eq!(&all[20..], &tail[..]);
}
