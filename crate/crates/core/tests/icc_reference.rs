//! ICC checked against the classic 6-target x 4-judge reference data
//! (expected: ICC(2,1) = 0.29, ICC(2,k) = 0.62 at two decimals).

use ger_core::stats::{icc2, icc2k, ScoreMatrix};

#[test]
fn icc_matches_the_published_reference_values() {
    let rows: Vec<Vec<Option<f64>>> = vec![
        vec![Some(9.0), Some(2.0), Some(5.0), Some(8.0)],
        vec![Some(6.0), Some(1.0), Some(3.0), Some(2.0)],
        vec![Some(8.0), Some(4.0), Some(6.0), Some(8.0)],
        vec![Some(7.0), Some(1.0), Some(2.0), Some(6.0)],
        vec![Some(10.0), Some(5.0), Some(6.0), Some(9.0)],
        vec![Some(6.0), Some(2.0), Some(4.0), Some(7.0)],
    ];
    let m = ScoreMatrix::new(
        (0..6).map(|i| format!("t{i}")).collect(),
        (0..4).map(|j| format!("j{j}")).collect(),
        rows,
        1.0,
    )
    .unwrap();
    let single = icc2(&m).unwrap().value;
    let average = icc2k(&m).unwrap().value;
    assert!((single - 0.29).abs() < 0.005, "ICC(2,1) = {single}");
    assert!((average - 0.62).abs() < 0.005, "ICC(2,k) = {average}");
}
