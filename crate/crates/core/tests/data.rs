use drmim::data::{
    crop_tensor, generate_synthetic, load_sequence, parse_groundtruth, read_ppm, save_sequence, write_ppm, DataError,
    Image, SynthConfig,
};
use drmim::geometry::CropTransform;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_boxes_stay_on_canvas(seed in any::<u64>(), length in 1usize..40, speed in 0.0f64..8.0, min in 6usize..20, extra in 0usize..20) {
        let cfg = SynthConfig {
            width: 96, height: 80, length, min_size: min, max_size: min + extra, max_speed: speed, clutter: 2, seed,
            ..SynthConfig::default()
        };
        let seq = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(seq.len(), length);
        for b in &seq.boxes {
            prop_assert!(b.x >= 0.0 && b.y >= 0.0 && b.right() <= 96.0 && b.bottom() <= 80.0, "{:?}", b);
            prop_assert!(b.w >= min as f64 && b.w <= (min + extra) as f64);
        }
        for f in &seq.frames {
            prop_assert_eq!((f.width, f.height), (96, 80));
        }
    }

    #[test]
    fn same_seed_same_sequence(seed in any::<u64>()) {
        let cfg = SynthConfig { width: 64, height: 64, length: 5, min_size: 8, max_size: 16, seed, ..SynthConfig::default() };
        prop_assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    }
}

#[test]
fn sequence_directory_round_trip() {
    let cfg =
        SynthConfig { width: 64, height: 48, length: 4, min_size: 8, max_size: 12, seed: 3, ..SynthConfig::default() };
    let seq = generate_synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_sequence(&seq, dir.path()).unwrap();
    let back = load_sequence(dir.path()).unwrap();
    assert_eq!(back.frames, seq.frames);
    for (a, b) in back.boxes.iter().zip(&seq.boxes) {
        assert!((a.x - b.x).abs() < 1e-6 && (a.w - b.w).abs() < 1e-6);
    }
}

#[test]
fn ppm_round_trip() {
    let mut img = Image::filled(5, 3, [10, 20, 30]);
    img.put(4, 2, [255, 0, 7]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.ppm");
    write_ppm(&img, &p).unwrap();
    assert_eq!(read_ppm(&p).unwrap(), img);
}

#[test]
fn groundtruth_errors_name_the_line() {
    let ok = parse_groundtruth("1,2,3,4\n\n5\t6 7,8\n", "gt").unwrap();
    assert_eq!(ok.len(), 2);
    assert_eq!((ok[1].x, ok[1].h), (5.0, 8.0));
    for (text, line) in [("1,2,3,4\n1,2,3\n", 2), ("1,2,x,4\n", 1), ("1,2,3,4\n1,2,3,4\n1,2,0,4\n", 3)] {
        match parse_groundtruth(text, "gt") {
            Err(DataError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn missing_sequence_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_sequence(&dir.path().join("nope")).is_err());
}

#[test]
fn crops_past_the_edge_use_the_mean_color() {
    let mut img = Image::filled(8, 8, [0, 0, 0]);
    for y in 0..8 {
        for x in 4..8 {
            img.put(x, y, [200, 100, 0]);
        }
    }
    let mean = img.mean_color();
    // A crop centred on the corner: its top-left quarter lies outside.
    let t = CropTransform::centered(0.0, 0.0, 16.0, 16);
    let c = crop_tensor(&img, &t);
    let norm = |v: f64| (v / 255.0 - 0.5) * 2.0;
    for (ch, &m) in mean.iter().enumerate() {
        let v = c.data()[ch * 256];
        assert!((v - norm(m)).abs() < 1e-12, "channel {ch}: {v}");
    }
    // Inside the frame a pixel-aligned crop is exact.
    let inner = crop_tensor(&img, &CropTransform::centered(4.0, 4.0, 8.0, 8));
    assert!((inner.data()[7] - norm(200.0)).abs() < 1e-12);
    assert!((inner.data()[0] - norm(0.0)).abs() < 1e-12);
}
