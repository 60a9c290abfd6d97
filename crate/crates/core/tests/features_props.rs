mod common;

use common::{uniformity_brute_force, Lcg};
use memprobe_core::features::{attention_entropy, cls_activation_stats, cls_delta, patch_uniformity};
use proptest::prelude::*;

#[test]
fn activation_stats_768_fixture() {
    // frozen from numpy on the same f32 vector
    let v: Vec<f32> = (0..768)
        .map(|i| {
            let i = i as f64;
            ((0.37 * i).sin() * 3.0 + (1.3 * i).cos() - 0.25) as f32
        })
        .collect();
    let s = cls_activation_stats(&v).unwrap();
    assert!((s.mean - -0.243_474_026_301_555_57).abs() < 1e-7);
    assert!((s.max - 3.749_216_318_130_493).abs() < 1e-7);
    assert!((s.max_abs - 4.237_310_886_383_057).abs() < 1e-7);
}

#[test]
fn uniformity_ten_random_vectors_matches_pairwise() {
    let mut rng = Lcg(2024);
    let patches: Vec<f32> = (0..10 * 8).map(|_| rng.range(-1.0, 1.0) as f32).collect();
    let fast = patch_uniformity(&patches, 8).unwrap();
    let slow = uniformity_brute_force(&patches, 8);
    assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
}

fn patches_strategy() -> impl Strategy<Value = (usize, Vec<f32>)> {
    (2usize..=64, 2usize..=128).prop_flat_map(|(n, d)| {
        (
            Just(d),
            prop::collection::vec(
                prop_oneof![-4.0f32..-0.01, 0.01f32..4.0],
                n * d,
            ),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn uniformity_closed_form_equals_pairwise((d, patches) in patches_strategy()) {
        let fast = patch_uniformity(&patches, d).unwrap();
        let slow = uniformity_brute_force(&patches, d);
        prop_assert!((fast - slow).abs() < 1e-6);
        prop_assert!((-1.0..=1.0).contains(&fast));
    }

    #[test]
    fn uniformity_ignores_per_patch_scale(
        (d, patches) in patches_strategy(),
        scales in prop::collection::vec(0.1f32..10.0, 64),
    ) {
        let scaled: Vec<f32> = patches
            .chunks(d)
            .zip(scales.iter().cycle())
            .flat_map(|(p, s)| p.iter().map(move |v| v * s))
            .collect();
        let a = patch_uniformity(&patches, d).unwrap();
        let b = patch_uniformity(&scaled, d).unwrap();
        prop_assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn entropy_bounds_and_scale_invariance(
        row in prop::collection::vec(0.0f32..1.0, 1..200),
        scale in 0.01f32..100.0,
    ) {
        prop_assume!(row.iter().any(|&v| v > 0.0));
        let h = attention_entropy(&row).unwrap();
        let ln_n = (row.len() as f64).ln();
        prop_assert!((0.0..=ln_n).contains(&h));
        let scaled: Vec<f32> = row.iter().map(|v| v * scale).collect();
        prop_assert!((attention_entropy(&scaled).unwrap() - h).abs() < 1e-5);
    }

    #[test]
    fn delta_scale_invariant_and_bounded(
        a in prop::collection::vec(-3.0f32..3.0, 16),
        b in prop::collection::vec(-3.0f32..3.0, 16),
        sa in 0.01f32..50.0,
        sb in 0.01f32..50.0,
    ) {
        prop_assume!(a.iter().any(|&v| v != 0.0) && b.iter().any(|&v| v != 0.0));
        let d = cls_delta(&a, &b).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
        let a2: Vec<f32> = a.iter().map(|v| v * sa).collect();
        let b2: Vec<f32> = b.iter().map(|v| v * sb).collect();
        prop_assert!((cls_delta(&a2, &b2).unwrap() - d).abs() < 1e-5);
    }
}
