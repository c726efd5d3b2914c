mod common;

use common::*;
use xcaps::model::{LossKind, Variant};

#[test]
fn every_op_matches_finite_differences() {
    for case in op_cases() {
        let err = op_error(&case, 0..20);
        assert!(err < 1e-4, "{}: max relative error {err:.3e}", case.name);
    }
}

#[test]
fn full_models_match_finite_differences() {
    for variant in [Variant::DcnnCapsNet, Variant::MlpCapsNet] {
        for r in [1, 2] {
            for (seed, classes) in [(1, 2), (2, 6)] {
                let model = randomized_model(tiny_config(variant, r, classes), seed);
                let err = model_error(&model, seed, Some(99));
                assert!(err < 1e-3, "{variant} r={r} C={classes}: {err:.3e}");
            }
        }
    }
}

#[test]
fn cross_entropy_head_matches_finite_differences() {
    let mut cfg = tiny_config(Variant::DcnnCapsNet, 2, 3);
    cfg.loss = LossKind::CrossEntropy;
    let model = randomized_model(cfg, 5);
    let err = model_error(&model, 5, None);
    assert!(err < 1e-3, "{err:.3e}");
}
