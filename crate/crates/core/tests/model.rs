use drmim::model::{
    build_model, load_checkpoint, prune_channels, save_checkpoint, ArchConfig, ArchitectureSpec, CheckpointError,
    ModelError, ModelParams, PruneConfig,
};
use proptest::prelude::*;

/// Independent count for an arbitrary backbone and head widths.
fn oracle(cfg: &ArchConfig, mu: f64) -> usize {
    let p = |n: usize| ((n as f64 * (1.0 - mu)).round() as usize).max(1);
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let mut total = 0;
    let mut cin = 3;
    let mut side = cfg.template_size;
    for &(w, k, s, pad) in &cfg.backbone {
        total += conv(cin, p(w), k);
        cin = p(w);
        side = (side + 2 * pad - k) / s + 1;
    }
    let (feat, dr, neck, head, hid) = (cin, p(cfg.dr_width), p(cfg.neck_width), p(cfg.head_width), p(cfg.disc_hidden));
    total += 2 * conv(feat, dr, 3) + 4 * conv(dr, neck, 3) + 2 * conv(neck, head, 3);
    total += 2 * conv(head, 1, 1) + conv(head, 4, 1);
    total += (feat + 2 * dr) * side * side * hid + hid + hid + 1;
    total += conv(feat + 2 * dr, hid, 1) + conv(hid, 1, 1);
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_match_oracle(
        w1 in 4usize..40, w2 in 4usize..40, dr in 2usize..40, neck in 2usize..40,
        head in 2usize..40, hid in 2usize..40, mu_pct in 0u32..95,
    ) {
        let mu = mu_pct as f64 / 100.0;
        // Skip exact .5 ties: the oracle rounds in plain f64, the model
        // guards against representation error.
        let ties = [w1, w2, dr, neck, head, hid].iter().any(|&n| ((n as f64 * (1.0 - mu)).fract() - 0.5).abs() < 1e-6);
        prop_assume!(!ties);
        let cfg = ArchConfig {
            backbone: vec![(w1, 5, 2, 0), (w2, 3, 2, 0), (w2, 3, 2, 0)],
            dr_width: dr,
            neck_width: neck,
            head_width: head,
            disc_hidden: hid,
            ..ArchConfig::default()
        };
        let spec = ArchitectureSpec::from_config(&cfg).unwrap();
        prop_assert_eq!(spec.param_count(mu), oracle(&cfg, mu));
    }

    #[test]
    fn pruning_never_grows(n in 1usize..512, a in 0u32..99, b in 0u32..99) {
        let (lo, hi) = (a.min(b) as f64 / 100.0, a.max(b) as f64 / 100.0);
        prop_assert!(prune_channels(n, hi) <= prune_channels(n, lo));
        prop_assert!(prune_channels(n, hi) >= 1);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(cut in 0usize..2000) {
        let spec = small_spec();
        let bytes = build_model(&spec, PruneConfig::new(0.5).unwrap(), 1).unwrap().to_bytes();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(ModelParams::from_bytes(&bytes[..cut]).is_err());
    }
}

fn small_spec() -> ArchitectureSpec {
    ArchitectureSpec::from_config(&ArchConfig {
        backbone: vec![(8, 5, 2, 0), (8, 3, 2, 0), (8, 3, 2, 0)],
        dr_width: 4,
        neck_width: 4,
        head_width: 4,
        disc_hidden: 4,
        ..ArchConfig::default()
    })
    .unwrap()
}

#[test]
fn default_oracle_agrees() {
    let cfg = ArchConfig::default();
    let spec = ArchitectureSpec::from_config(&cfg).unwrap();
    for mu in [0.0, 0.2, 0.5, 0.8] {
        assert_eq!(spec.param_count(mu), oracle(&cfg, mu), "mu {mu}");
    }
}

#[test]
fn half_pruning_halves_prunable_layers() {
    let spec = ArchitectureSpec::default();
    for l in spec.layers() {
        let (base, kept) = (l.out.base(), l.out.resolve(0.5));
        if matches!(l.out, drmim::model::Width::Prunable(_)) {
            assert_eq!(kept, base.div_ceil(2), "{}", l.name);
        } else {
            assert_eq!(kept, base, "{}", l.name);
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let spec = ArchitectureSpec::default();
    let params = build_model(&spec, PruneConfig::new(0.5).unwrap(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&params, &path).unwrap();
    let back = load_checkpoint(&path, &spec).unwrap();
    assert_eq!(back, params);
}

#[test]
fn checkpoint_for_another_spec_is_rejected() {
    let params = build_model(&small_spec(), PruneConfig::none(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&params, &path).unwrap();
    let err = load_checkpoint(&path, &ArchitectureSpec::default()).unwrap_err();
    assert!(matches!(err, ModelError::Checkpoint(CheckpointError::SpecHash)), "{err}");
}

#[test]
fn future_version_is_rejected() {
    let mut bytes = build_model(&small_spec(), PruneConfig::none(), 0).unwrap().to_bytes();
    bytes[6] = 99;
    assert!(matches!(ModelParams::from_bytes(&bytes), Err(CheckpointError::Version(_))));
}

#[test]
fn missing_file_is_io_error() {
    let err = load_checkpoint(std::path::Path::new("/nonexistent/x.ckpt"), &small_spec()).unwrap_err();
    assert!(matches!(err, ModelError::Io(..)));
}
