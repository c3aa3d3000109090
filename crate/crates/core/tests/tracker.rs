use std::sync::OnceLock;

use drmim::bench::{benchmark_sets, BenchConfig};
use drmim::data::{generate_synthetic, Sequence, SynthConfig};
use drmim::geometry::BBox;
use drmim::model::{build_model, ArchConfig, ArchitectureSpec, ModelParams, PruneConfig};
use drmim::tracker::{argmax, cosine_window, modulate_scores, TrackError, Tracker, TrackerConfig};
use drmim::trainer::{train, TrainConfig};

fn config() -> TrainConfig {
    let arch = ArchConfig { search_size: 176, ..ArchConfig::default() };
    let mut c = TrainConfig { batch: 4, steps: 200, arch, ..TrainConfig::default() };
    c.sampler.search_size = 176;
    c
}

/// A briefly trained model shared by every test in this file.
fn model() -> &'static (ArchitectureSpec, ModelParams) {
    static MODEL: OnceLock<(ArchitectureSpec, ModelParams)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = config();
        let bench = BenchConfig { train_sequences: 6, test_sequences: 0, ..BenchConfig::default() };
        let (data, _) = benchmark_sets(&bench, &SynthConfig::default()).unwrap();
        let out = train(&cfg, &data, None, None).unwrap();
        (cfg.spec().unwrap(), out.params)
    })
}

fn still_sequence(frames: usize) -> Sequence {
    let cfg = SynthConfig { length: 1, max_speed: 0.0, seed: 77, ..SynthConfig::default() };
    let one = generate_synthetic(&cfg).unwrap();
    Sequence::new("still", vec![one.frames[0].clone(); frames], vec![one.boxes[0]; frames]).unwrap()
}

#[test]
fn a_static_target_is_held() {
    let (spec, params) = model();
    let tracker = Tracker::new(spec, params, TrackerConfig::default()).unwrap();
    let mut seq = still_sequence(30);
    let gt = seq.boxes[0];
    let res = tracker.track_sequence(&mut seq, &gt).unwrap();
    assert_eq!(res.boxes.len(), 30);
    assert_eq!(res.times.len(), 29);
    let mean_iou = res.boxes.iter().map(|b| b.iou(&gt)).sum::<f64>() / 30.0;
    assert!(mean_iou >= 0.6, "mean IoU {mean_iou}");
    assert!(res.boxes.iter().all(|b| b.is_valid() && b.w > 0.0 && b.h > 0.0));
}

/// Within one score-map stride; the quick model here is not precise enough
/// for sub-stride agreement.
#[test]
fn first_update_stays_close() {
    let (spec, params) = model();
    let tracker = Tracker::new(spec, params, TrackerConfig::default()).unwrap();
    let seq = still_sequence(1);
    let gt = seq.boxes[0];
    let mut state = tracker.init(&seq.frames[0], &gt).unwrap();
    let b = tracker.update(&mut state, &seq.frames[0]).unwrap();
    assert!(b.center_distance(&gt) <= 8.0, "{b:?} vs {gt:?}");
}

#[test]
fn trajectories_repeat_exactly() {
    let (spec, params) = model();
    let tracker = Tracker::new(spec, params, TrackerConfig::default()).unwrap();
    let cfg = SynthConfig { length: 12, seed: 5, ..SynthConfig::default() };
    let seq = generate_synthetic(&cfg).unwrap();
    let run = || tracker.track_sequence(&mut seq.clone(), &seq.boxes[0]).unwrap().boxes;
    assert_eq!(run(), run());
}

#[test]
fn boxes_at_the_frame_edge_are_tracked() {
    let (spec, params) = model();
    let tracker = Tracker::new(spec, params, TrackerConfig::default()).unwrap();
    let cfg = SynthConfig { length: 6, seed: 9, ..SynthConfig::default() };
    let seq = generate_synthetic(&cfg).unwrap();
    for init in [BBox::new(0.0, 0.0, 20.0, 20.0), BBox::new(300.0, 220.0, 20.0, 20.0)] {
        let res = tracker.track_sequence(&mut seq.clone(), &init).unwrap();
        assert_eq!(res.boxes.len(), 6);
        for b in &res.boxes {
            assert!(b.w.is_finite() && b.h.is_finite() && b.w > 0.0 && b.h > 0.0, "{b:?}");
            let (cx, cy) = b.center();
            assert!((0.0..=320.0).contains(&cx) && (0.0..=240.0).contains(&cy), "{b:?}");
        }
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let (spec, params) = model();
    let tracker = Tracker::new(spec, params, TrackerConfig::default()).unwrap();
    let mut one = still_sequence(1);
    let gt = one.boxes[0];
    assert!(matches!(tracker.track_sequence(&mut one, &gt), Err(TrackError::TooShort(1))));
    let frame = &one.frames[0];
    assert!(matches!(tracker.init(frame, &BBox::new(5.0, 5.0, 1.0, 10.0)), Err(TrackError::Degenerate(_))));
    assert!(matches!(tracker.init(frame, &BBox::new(5.0, 5.0, f64::NAN, 10.0)), Err(TrackError::Degenerate(_))));

    let other = build_model(&ArchitectureSpec::default(), PruneConfig::none(), 0).unwrap();
    assert!(Tracker::new(spec, &other, TrackerConfig::default()).is_err());
}

#[test]
fn window_and_modulation() {
    let w = cosine_window(7);
    assert_eq!(w.len(), 49);
    for i in 0..7 {
        for j in 0..7 {
            assert!((w[i * 7 + j] - w[j * 7 + i]).abs() < 1e-15);
            assert!((w[i * 7 + j] - w[(6 - i) * 7 + (6 - j)]).abs() < 1e-15);
        }
    }
    let score = vec![0.1, 0.9, 0.5];
    let ones = vec![1.0; 3];
    assert_eq!(modulate_scores(&score, &ones, &ones, 0.0), score);
    assert_eq!(argmax(&modulate_scores(&score, &ones, &[1.0, 0.0, 0.0], 1.0)), 0);
}
