use monoalign::align::AlignConfig;
use monoalign::gradcheck::{model_gradient_check, smooth_model_case, MODEL_STEP, MODEL_TOLERANCE};
use monoalign::model::{ModelConfig, Objective};

fn check(n_tokens: usize, lambda: f64, seeds: std::ops::Range<u64>) {
    let config = ModelConfig::new(5, 3);
    let align = AlignConfig::new(0.01, lambda).unwrap();
    for seed in seeds {
        let (params, tokens, targets) = smooth_model_case(seed, n_tokens, config, align.delta).unwrap();
        let err = model_gradient_check(
            &params,
            &tokens,
            &targets,
            Objective::Regularized(align),
            MODEL_STEP,
            None,
        )
        .unwrap();
        assert!(err < MODEL_TOLERANCE, "seed {seed}, {n_tokens} tokens: {err:e}");
    }
}

#[test]
fn three_token_examples() {
    check(3, 1e-3, 0..4);
}

#[test]
fn four_token_examples() {
    check(4, 1e-3, 10..14);
}

#[test]
fn heavy_alignment_weight() {
    check(4, 1e-1, 20..23);
}

#[test]
fn single_token_has_nothing_to_align() {
    check(1, 1e-3, 30..32);
}
