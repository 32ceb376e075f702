use std::sync::Arc;

use gaitrecon::motion::{extract_features, Skeleton};
use gaitrecon::segmentation::{segment_by_speed, segment_gait, GaitPhase, SegmentParams};
use gaitrecon::synth::{
    generate_with_schedule, simulate_imu, GaitNoise, GaitSpec, MotionType, SensorMount, GRAVITY,
};

fn skeleton() -> Arc<Skeleton> {
    Arc::new(Skeleton::biped18())
}

fn observations(clip: &gaitrecon::motion::MotionClip) -> Vec<gaitrecon::motion::JointObservation> {
    let mount = SensorMount::named(&clip.skeleton, "right_ankle").unwrap();
    let imu = simulate_imu(clip, &mount, GRAVITY, None).unwrap();
    extract_features(clip, &imu).unwrap()
}

fn check_gait(spec: &GaitSpec, expected: usize) {
    let g = generate_with_schedule(spec, &skeleton()).unwrap();
    let obs = observations(&g.clip);
    let segs = segment_gait(&g.clip, &obs, &SegmentParams::default(), true).unwrap();
    let gait: Vec<_> = segs.iter().filter(|s| s.phase.is_gait()).collect();
    let truth = g.boundaries();
    let got: Vec<(usize, GaitPhase)> = segs.iter().map(|s| (s.start, s.phase)).collect();
    assert_eq!(gait.len(), expected, "got {got:?}\ntruth {truth:?}");
    for w in gait.windows(2) {
        assert_eq!(w[0].phase.successor(), w[1].phase);
        assert_eq!(w[0].end, w[1].start);
    }
    assert_eq!(gait[0].phase, GaitPhase::IcLr);
    let truth_gait: Vec<_> = truth.iter().filter(|(_, p)| p.is_gait()).collect();
    assert_eq!(truth_gait.len(), expected, "truth {truth:?}");
    for (s, (f, p)) in gait.iter().zip(truth_gait) {
        assert_eq!(s.phase, *p);
        assert!(
            (s.start as i64 - *f as i64).abs() <= 1,
            "{} starts at {} but schedule says {}\ngot {got:?}\ntruth {truth:?}",
            p,
            s.start,
            f
        );
    }
}

#[test]
fn walk_two_cycles_gives_sixteen_phases() {
    check_gait(&GaitSpec::new(MotionType::Walk).cycles(2), 16);
}

#[test]
fn walk_eight_cycles_with_noise_follows_schedule() {
    for seed in 1..=7 {
        let spec = GaitSpec::new(MotionType::Walk)
            .cycles(8)
            .seed(seed)
            .noise(GaitNoise::default());
        check_gait(&spec, 64);
    }
}

#[test]
fn run_follows_schedule() {
    for seed in 1..=3 {
        let spec = GaitSpec::new(MotionType::Run)
            .cycles(6)
            .seed(seed)
            .noise(GaitNoise::default());
        check_gait(&spec, 48);
    }
}

#[test]
fn turning_walk_follows_schedule() {
    let spec = GaitSpec::new(MotionType::Walk).cycles(6).turn_rate(0.3);
    check_gait(&spec, 48);
}

#[test]
fn hops_split_into_flights() {
    for t in [MotionType::Hop, MotionType::Jump] {
        let spec = GaitSpec::new(t).cycles(3);
        let g = generate_with_schedule(&spec, &skeleton()).unwrap();
        let obs = observations(&g.clip);
        let segs = segment_by_speed(&g.clip, &obs, &SegmentParams::default()).unwrap();
        let ups = segs.iter().filter(|s| s.phase == GaitPhase::AirborneUp).count();
        let downs = segs.iter().filter(|s| s.phase == GaitPhase::AirborneDown).count();
        let got: Vec<(usize, GaitPhase)> = segs.iter().map(|s| (s.start, s.phase)).collect();
        assert_eq!((ups, downs), (3, 3), "{t}: {got:?} vs {:?}", g.boundaries());
        for (s, (f, p)) in segs.iter().zip(g.boundaries()) {
            assert_eq!(s.phase, p);
            assert!(
                (s.start as i64 - f as i64).abs() <= 1,
                "{got:?} vs {:?}",
                g.boundaries()
            );
        }
    }
}
