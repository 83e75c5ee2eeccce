//! Property tests for the spec-level invariants: normalization
//! idempotence and round-trips, fingerprint stability, cache
//! determinism, cosine bounds, rank-statistic invariances, and
//! clustering order-independence.

use std::collections::BTreeMap;

use proptest::prelude::*;

use ger_core::analysis::cluster_by_cosine;
use ger_core::domain::{normalize_score, Rubric, RubricOrigin, Scale};
use ger_core::gateway::{
    cosine, ChatBackend, ChatRequest, DecodingParams, EmbeddingVector, Gateway, GatewayError,
};
use ger_core::stats::{self, AlphaMetric, ScoreMatrix};

fn one_to_five_token() -> impl Strategy<Value = String> {
    prop_oneof![
        (0u32..=9).prop_map(|d| d.to_string()),
        (0.0f64..10.0).prop_map(|x| format!("{x:.2}")),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normalize_stays_in_range_and_is_idempotent(token in one_to_five_token()) {
        let scale = Scale::one_to_five();
        let once = normalize_score(&token, &scale).unwrap();
        prop_assert!(once.value >= 1.0 && once.value <= 5.0);
        let twice = normalize_score(&once.value.to_string(), &scale).unwrap();
        prop_assert_eq!(once.value, twice.value);
        prop_assert!(!twice.clamped);
    }

    #[test]
    fn categorical_label_round_trips(k in 2usize..8) {
        let labels: Vec<String> = (0..k).map(|i| format!("level{i}")).collect();
        let scale = Scale::categorical(labels.clone(), 1.0, 5.0).unwrap();
        for label in &labels {
            let n = normalize_score(label, &scale).unwrap();
            prop_assert_eq!(scale.nearest_label(n.value), Some(label.as_str()));
            prop_assert!(n.value >= 1.0 && n.value <= 5.0);
        }
    }

    #[test]
    fn fingerprint_invariant_under_spacing_and_case(
        name in "[A-Za-z][A-Za-z ]{0,20}",
        description in "[A-Za-z][A-Za-z ]{0,40}",
    ) {
        let base = Rubric::new(&name, &description, Scale::one_to_five(), RubricOrigin::Model("m".into()));
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let spaced = Rubric::new(
            format!("  {}  ", name.to_uppercase()),
            description.split_whitespace().collect::<Vec<_>>().join("   "),
            Scale::one_to_five(),
            RubricOrigin::Model("other".into()),
        );
        prop_assume!(spaced.is_ok());
        prop_assert_eq!(base.rubric_id, spaced.unwrap().rubric_id);
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(
        a in proptest::collection::vec(-10.0f64..10.0, 4),
        b in proptest::collection::vec(-10.0f64..10.0, 4),
    ) {
        prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
        let va = EmbeddingVector { values: a, model_id: "e".into() };
        let vb = EmbeddingVector { values: b, model_id: "e".into() };
        let ab = cosine(&va, &vb).unwrap();
        let ba = cosine(&vb, &va).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn spearman_is_invariant_under_monotone_transforms(
        xs in proptest::collection::vec(1u8..=5, 4..12),
        ys in proptest::collection::vec(1u8..=5, 4..12),
    ) {
        let n = xs.len().min(ys.len());
        let a: Vec<Option<f64>> = xs[..n].iter().map(|v| Some(*v as f64)).collect();
        let b: Vec<Option<f64>> = ys[..n].iter().map(|v| Some(*v as f64)).collect();
        let transformed: Vec<Option<f64>> =
            a.iter().map(|v| v.map(|x| x.powi(3) + 11.0)).collect();
        match (stats::spearman(&a, &b), stats::spearman(&transformed, &b)) {
            (Ok(lhs), Ok(rhs)) => prop_assert!((lhs.value - rhs.value).abs() < 1e-12),
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "definedness disagrees: {other:?}"),
        }
    }

    #[test]
    fn reliability_is_invariant_under_rater_relabeling(
        grid in proptest::collection::vec(proptest::collection::vec(1u8..=5, 3), 3..6),
        swap in 0usize..3,
    ) {
        let values: Vec<Vec<Option<f64>>> = grid
            .iter()
            .map(|r| r.iter().map(|v| Some(*v as f64)).collect())
            .collect();
        let items: Vec<String> = (0..grid.len()).map(|i| format!("i{i}")).collect();
        let raters: Vec<String> = (0..3).map(|j| format!("r{j}")).collect();
        let m = ScoreMatrix::new(items.clone(), raters.clone(), values.clone(), 1.0).unwrap();
        // Swap a rater column with its neighbor.
        let other = (swap + 1) % 3;
        let mut permuted_values = values;
        for row in &mut permuted_values {
            row.swap(swap, other);
        }
        let mut permuted_raters = raters;
        permuted_raters.swap(swap, other);
        let p = ScoreMatrix::new(items, permuted_raters, permuted_values, 1.0).unwrap();
        for (lhs, rhs) in [
            (stats::fleiss_kappa(&m), stats::fleiss_kappa(&p)),
            (stats::krippendorff_alpha(&m, AlphaMetric::Ordinal), stats::krippendorff_alpha(&p, AlphaMetric::Ordinal)),
            (stats::icc2(&m), stats::icc2(&p)),
        ] {
            match (lhs, rhs) {
                (Ok(a), Ok(b)) => prop_assert!((a.value - b.value).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "definedness disagrees: {other:?}"),
            }
        }
    }

    #[test]
    fn clustering_partition_is_order_independent(
        seeds in proptest::collection::vec(0u64..1000, 3..7),
        tau in 0.5f64..0.95,
    ) {
        let vectors: Vec<Option<Vec<f64>>> = seeds
            .iter()
            .map(|s| Some(ger_core::gateway::derived_embedding("e", &s.to_string(), 6)))
            .collect();
        let canon = cluster_by_cosine(&vectors, tau);
        // Reverse the input; the induced partition must be identical.
        let reversed: Vec<Option<Vec<f64>>> = vectors.iter().rev().cloned().collect();
        let canon_rev = cluster_by_cosine(&reversed, tau);
        let n = vectors.len();
        for i in 0..n {
            for j in 0..n {
                let together = canon[i] == canon[j];
                let together_rev = canon_rev[n - 1 - i] == canon_rev[n - 1 - j];
                prop_assert_eq!(together, together_rev, "pair ({}, {})", i, j);
            }
        }
    }
}

/// Echo backend whose replies depend only on the request.
struct EchoBackend;

impl ChatBackend for EchoBackend {
    fn raw_complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        Ok(format!("echo::{}::{}", req.model_id, req.user_text))
    }

    fn raw_embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cache_miss_then_hit_equals_hit(user_text in "[a-zA-Z0-9 ]{1,40}") {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Box::new(EchoBackend)).with_cache_dir(dir.path()).unwrap();
        let req = ChatRequest::new("m", user_text, DecodingParams::greedy());
        let miss = gw.complete(&req).unwrap();
        let hit1 = gw.complete(&req).unwrap();
        let hit2 = gw.complete(&req).unwrap();
        prop_assert_eq!(&miss, &hit1);
        prop_assert_eq!(&hit1, &hit2);
        prop_assert_eq!(gw.stats().backend_calls, 1);
        prop_assert_eq!(gw.stats().cache_hits, 2);
    }
}

#[test]
fn align_pct_monotone_in_unseen() {
    for unique in 1..=10usize {
        let mut last = f64::INFINITY;
        for unseen in 0..=unique {
            let value = ger_core::analysis::align_pct(unique, unseen);
            assert!(value <= last);
            assert!((0.0..=100.0).contains(&value));
            last = value;
        }
    }
}

#[test]
fn fingerprints_collide_nowhere_on_a_generated_corpus() {
    // One-character edits across a few hundred rubrics must stay distinct.
    let mut seen = BTreeMap::new();
    for i in 0..400 {
        let name = format!("Criterion {i}");
        let rubric = Rubric::new(
            &name,
            "A fixed description.",
            Scale::one_to_five(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap();
        if let Some(prev) = seen.insert(rubric.rubric_id.clone(), name.clone()) {
            panic!("collision between {prev:?} and {name:?}");
        }
    }
}
