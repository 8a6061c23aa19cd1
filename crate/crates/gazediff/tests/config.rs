use gazediff::config::KEYS;
use gazediff::{Error, RunConfig};

#[test]
fn defaults_validate_and_text_round_trips() {
    let cfg = RunConfig::default();
    cfg.validate().unwrap();
    let mut back = RunConfig::default();
    back.seq_len = 1;
    back.apply_text(&cfg.to_text(), "defaults").unwrap();
    assert_eq!(back, cfg);

    let mut changed = RunConfig::default();
    changed
        .apply_overrides(&[
            "channels=8,16".into(),
            "depth=2".into(),
            "cfg_scale=2.5".into(),
            "truncate=tail".into(),
        ])
        .unwrap();
    let mut parsed = RunConfig::default();
    parsed.apply_text(&changed.to_text(), "changed").unwrap();
    assert_eq!(parsed, changed);
}

#[test]
fn every_key_is_listed_once_in_the_text_form() {
    let text = RunConfig::default().to_text();
    assert_eq!(text.lines().count(), KEYS.len());
    for (key, doc) in KEYS {
        assert!(!doc.is_empty(), "{key}");
        assert_eq!(
            text.lines().filter(|l| l.split(" = ").next() == Some(key)).count(),
            1,
            "{key}"
        );
    }
}

#[test]
fn unknown_and_repeated_keys_are_errors() {
    let mut cfg = RunConfig::default();
    let err = cfg
        .apply_text("seq_len = 64\nsequence_length = 64\n", "run.conf")
        .unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("run.conf:2")), "{err}");
    assert!(cfg.apply_text("seed = 1\nseed = 2\n", "run.conf").is_err());
    assert!(cfg.apply_overrides(&["no_such_key=1".into()]).is_err());
    assert!(cfg.apply_overrides(&["seed".into()]).is_err());
    assert!(cfg.set("seed", "minus one").is_err());
    assert!(cfg.set("truncate", "middle").is_err());
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let mut cfg = RunConfig::default();
    cfg.apply_text("# a comment\n\nseed = 9   # trailing\n", "c").unwrap();
    assert_eq!(cfg.seed, 9);
}

#[test]
fn conflicting_settings_are_rejected() {
    let bad = |overrides: &[&str]| {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&overrides.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            .unwrap();
        cfg.validate().is_err()
    };
    assert!(bad(&["depth=2"]));
    assert!(bad(&["seq_len=100"]));
    assert!(bad(&["heads=5"]));
    assert!(bad(&["test_fraction=1"]));
    assert!(bad(&["ddim_steps=0"]));
    assert!(bad(&["ddim_steps=1001"]));
    assert!(bad(&["beta_end=2"]));
    assert!(bad(&["train_steps=0", "epochs=0"]));
    assert!(bad(&["workers=0"]));
    assert!(!bad(&["depth=2", "channels=16,32", "seq_len=64"]));
}

#[test]
fn converters_carry_the_settings() {
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&["cfg_scale=2".into(), "grid_height=8".into(), "dispersion_px=30".into()])
        .unwrap();
    assert_eq!(cfg.guidance().scale, 2.0);
    assert_eq!(cfg.denoiser().grid, (8, 32));
    assert_eq!(cfg.fixation().dispersion_px, 30.0);
    assert_eq!(cfg.metrics().grid.rows, 12);
    assert_eq!(cfg.frame_size(), (224, 224));
    assert_eq!(cfg.schedule().unwrap().alpha_bar(0), 1.0);
}
