use ovlink_bench::{context, frame};

#[test]
fn fixture_frame_matches_layout() {
    let (cfg, ctx) = context(21, 3);
    let obs = frame(&ctx);
    assert_eq!(obs.y.len(), ctx.layout.frame_length());
    assert_eq!(obs.n_r(), cfg.n_r);
    assert!(!obs.is_interference_free());
}
