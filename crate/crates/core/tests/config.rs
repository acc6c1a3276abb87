use avloc::config::{Config, Fusion, Objective, Scaling};
use avloc::Error;

#[test]
fn parses_key_value_lines_with_comments() {
    let text = "# run\nseed = 7\nscaling = relu_softmax  # trailing\n\nvisual_channels = 4, 8,16\nuse_pcm=false\n";
    let cfg = Config::parse_text(text).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.scaling, Scaling::ReluSoftmax);
    assert_eq!(cfg.visual_channels, vec![4, 8, 16]);
    assert!(!cfg.use_pcm);
    assert_eq!(cfg.epochs, Config::default().epochs);
}

#[test]
fn text_round_trip() {
    let mut cfg = Config::default();
    cfg.fusion = Fusion::Concat;
    cfg.objective = Objective::InfoNceMasked;
    cfg.lr_heads = 0.0123;
    cfg.train_data = "a/b.bin".into();
    assert_eq!(Config::parse_text(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(cfg.entries().len(), Config::KEYS.len());
}

#[test]
fn bad_entries_are_config_errors() {
    for text in ["nope = 1", "seed = x", "scaling = max", "seed"] {
        let err = Config::parse_text(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        assert_eq!(err.exit_code(), 1);
    }
}

#[test]
fn overrides_apply_in_order() {
    let mut cfg = Config::default();
    cfg.apply_override("epochs=3").unwrap();
    cfg.apply_override("epochs = 4").unwrap();
    assert_eq!(cfg.epochs, 4);
    assert!(matches!(cfg.apply_override("epochs"), Err(Error::Usage(_))));
}

#[test]
fn validation_rejects_unusable_settings() {
    let check = |f: &dyn Fn(&mut Config)| {
        let mut c = Config::default();
        f(&mut c);
        c.validate()
    };
    assert!(check(&|_| {}).is_ok());
    assert!(check(&|c| c.batch_size = 1).is_err());
    assert!(check(&|c| c.lr_heads = 0.0).is_err());
    assert!(check(&|c| c.lr_rest = -1.0).is_err());
    assert!(check(&|c| c.visual_channels = vec![4, 8]).is_err());
    assert!(check(&|c| c.pcm_layers = 4).is_err());
    assert!(check(&|c| c.pcm_steps = 0).is_err());
    assert!(check(&|c| c.image_size = 60).is_err());
    assert!(check(&|c| c.classes = 5).is_err());
    assert!(check(&|c| c.val_fraction = 1.0).is_err());
}

#[test]
fn exit_codes_by_error_kind() {
    assert_eq!(Error::Usage("x".into()).exit_code(), 1);
    assert_eq!(Error::Format { offset: 0, detail: "x".into() }.exit_code(), 2);
    assert_eq!(Error::MissingParameter("w".into()).exit_code(), 2);
    assert_eq!(Error::NonFinite { epoch: 0, batch: 0, seed: 0, detail: "nan".into() }.exit_code(), 3);
}
