//! The adapter configs and human rubric assets shipped under datasets/
//! must parse, validate, and agree with each other.

use std::path::{Path, PathBuf};

use ger_core::dataset::{DatasetAdapter, HumanRubricSet};

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

#[test]
fn every_shipped_dataset_asset_is_consistent() {
    let expectations = [
        ("mock5", "overall", 2),
        ("summeval", "relevance", 4),
        ("helpsteer2", "helpfulness", 5),
        ("usr", "overall", 6),
        ("sumpubmed", "informativeness_overlap_focus", 4),
    ];
    for (dataset_id, quality_signal, rubric_count) in expectations {
        let dir = workspace_root().join("datasets").join(dataset_id);
        let adapter = DatasetAdapter::load_dir(&dir)
            .unwrap_or_else(|e| panic!("{dataset_id}: {e}"));
        assert_eq!(adapter.dataset_id, dataset_id);
        assert_eq!(adapter.quality_signal, quality_signal, "{dataset_id}");
        let human = HumanRubricSet::load_dir(&dir, &adapter)
            .unwrap_or_else(|e| panic!("{dataset_id}: {e}"));
        assert_eq!(human.rubrics.len(), rubric_count, "{dataset_id}");
        for rubric in &human.rubrics {
            assert!(rubric.instruction.is_some(), "{dataset_id}/{}", rubric.name);
        }
        // Every attribute that backs a human rubric reports a usable
        // granularity for agreement statistics.
        for attr in &adapter.attribute_schema {
            assert!(attr.scale.granularity() > 0.0, "{dataset_id}/{}", attr.name);
        }
    }
}

#[test]
fn usr_scales_stay_native() {
    let dir = workspace_root().join("datasets/usr");
    let adapter = DatasetAdapter::load_dir(&dir).unwrap();
    let understandable = adapter.attribute_scale("understandable").unwrap();
    assert_eq!((understandable.numeric_min, understandable.numeric_max), (0.0, 1.0));
    let natural = adapter.attribute_scale("natural").unwrap();
    assert_eq!((natural.numeric_min, natural.numeric_max), (1.0, 3.0));
    let overall = adapter.attribute_scale("overall").unwrap();
    assert_eq!((overall.numeric_min, overall.numeric_max), (1.0, 5.0));
}
