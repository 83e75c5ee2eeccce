//! Inter-rater reliability and correlation statistics over score
//! matrices: agreement %, Spearman ρ, Pearson r, Fleiss' κ,
//! Krippendorff's α, and ICC(2,1)/ICC(2,k).
//!
//! All routines are pure. Undefined statistics (zero variance,
//! degenerate categories) are reported as typed errors, never NaN.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::domain::{CandidateOutput, Rubric, Scale, ScoreRecord};

/// 97.5th percentile of the standard normal, for 95% intervals.
const Z_95: f64 = 1.959963984540054;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatError {
    #[error("no overlapping values after pairwise deletion")]
    EmptyAfterDeletion,
    #[error("need at least {needed} paired values, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("zero variance: statistic undefined")]
    ZeroVariance,
    #[error("all ratings fall in one category: statistic undefined")]
    DegenerateCategories,
    #[error("no unit has two or more ratings")]
    InsufficientPairs,
    #[error("degenerate variance structure: statistic undefined")]
    DegenerateVariance,
    #[error("no rubric maps to a human attribute")]
    NoMappedRubrics,
    #[error("matrix shape error: {0}")]
    Shape(String),
}

/// One computed statistic with its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci95: Option<(f64, f64)>,
    pub n_effective: usize,
}

/// Difference function for Krippendorff's α.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMetric {
    Nominal,
    Ordinal,
    Interval,
}

impl AlphaMetric {
    pub fn slug(self) -> &'static str {
        match self {
            AlphaMetric::Nominal => "nominal",
            AlphaMetric::Ordinal => "ordinal",
            AlphaMetric::Interval => "interval",
        }
    }
}

/// Items × raters numeric grid with a missing-cell mask, the common
/// input of every reliability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub items: Vec<String>,
    pub raters: Vec<String>,
    /// Row-major: `values[item][rater]`, `None` = missing.
    pub values: Vec<Vec<Option<f64>>>,
    /// Smallest scale step, used to discretize scores into categories.
    pub granularity: f64,
}

impl ScoreMatrix {
    pub fn new(
        items: Vec<String>,
        raters: Vec<String>,
        values: Vec<Vec<Option<f64>>>,
        granularity: f64,
    ) -> Result<Self, StatError> {
        if values.len() != items.len() {
            return Err(StatError::Shape(format!(
                "{} rows for {} items",
                values.len(),
                items.len()
            )));
        }
        if let Some(row) = values.iter().find(|r| r.len() != raters.len()) {
            return Err(StatError::Shape(format!(
                "row of width {} for {} raters",
                row.len(),
                raters.len()
            )));
        }
        if granularity.is_nan() || granularity <= 0.0 {
            return Err(StatError::Shape(format!(
                "granularity must be positive, got {granularity}"
            )));
        }
        Ok(Self {
            items,
            raters,
            values,
            granularity,
        })
    }

    /// Rows with no missing cell.
    pub fn complete_rows(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .filter_map(|row| row.iter().copied().collect::<Option<Vec<f64>>>())
            .collect()
    }

    /// CSV with a header of rater ids, a first column of item ids, and
    /// empty cells for missing values.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["item_id".to_string()];
        header.extend(self.raters.iter().cloned());
        w.write_record(&header)?;
        for (item, row) in self.items.iter().zip(&self.values) {
            let mut record = vec![item.clone()];
            for cell in row {
                record.push(match cell {
                    Some(v) => fmt_cell(*v),
                    None => String::new(),
                });
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv<R: Read>(reader: R, granularity: f64) -> Result<Self, StatError> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r
            .headers()
            .map_err(|e| StatError::Shape(e.to_string()))?
            .clone();
        if headers.is_empty() {
            return Err(StatError::Shape("empty CSV header".into()));
        }
        let raters: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut items = Vec::new();
        let mut values = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| StatError::Shape(e.to_string()))?;
            let mut fields = record.iter();
            let item = fields
                .next()
                .ok_or_else(|| StatError::Shape("row missing item id".into()))?;
            items.push(item.to_string());
            let row: Result<Vec<Option<f64>>, StatError> = fields
                .map(|f| {
                    if f.trim().is_empty() {
                        Ok(None)
                    } else {
                        f.trim()
                            .parse::<f64>()
                            .map(Some)
                            .map_err(|_| StatError::Shape(format!("bad cell {f:?}")))
                    }
                })
                .collect();
            values.push(row?);
        }
        Self::new(items, raters, values, granularity)
    }
}

fn fmt_cell(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Round to the nearest multiple of the scale step.
pub fn round_to_grain(x: f64, granularity: f64) -> f64 {
    (x / granularity).round() * granularity
}

fn pairwise_complete(a: &[Option<f64>], b: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y) in a.iter().zip(b.iter()) {
        if let (Some(x), Some(y)) = (x, y) {
            xs.push(*x);
            ys.push(*y);
        }
    }
    (xs, ys)
}

fn wilson_ci(successes: usize, n: usize) -> (f64, f64) {
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = (Z_95 / denom) * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Percentage of positions where both scores round to the same scale
/// step, with a Wilson 95% CI. Missing positions are deleted pairwise.
pub fn agreement_pct(
    a: &[Option<f64>],
    b: &[Option<f64>],
    granularity: f64,
) -> Result<StatResult, StatError> {
    let (xs, ys) = pairwise_complete(a, b);
    if xs.is_empty() {
        return Err(StatError::EmptyAfterDeletion);
    }
    let tol = granularity * 1e-6;
    let matches = xs
        .iter()
        .zip(&ys)
        .filter(|(x, y)| (round_to_grain(**x, granularity) - round_to_grain(**y, granularity)).abs() <= tol)
        .count();
    let (lo, hi) = wilson_ci(matches, xs.len());
    Ok(StatResult {
        statistic: "agreement_pct".into(),
        value: 100.0 * matches as f64 / xs.len() as f64,
        ci95: Some((100.0 * lo, 100.0 * hi)),
        n_effective: xs.len(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pearson_of(xs: &[f64], ys: &[f64]) -> Result<f64, StatError> {
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatError::ZeroVariance);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Product-moment correlation after pairwise deletion of missing values.
pub fn pearson(a: &[Option<f64>], b: &[Option<f64>]) -> Result<StatResult, StatError> {
    let (xs, ys) = pairwise_complete(a, b);
    if xs.len() < 2 {
        return Err(StatError::TooFewPairs {
            needed: 2,
            got: xs.len(),
        });
    }
    Ok(StatResult {
        statistic: "pearson_r".into(),
        value: pearson_of(&xs, &ys)?,
        ci95: None,
        n_effective: xs.len(),
    })
}

/// Average ranks, ties sharing the mean of their rank positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).expect("finite scores"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average 1-based rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank correlation (Pearson on average ranks) after pairwise deletion.
pub fn spearman(a: &[Option<f64>], b: &[Option<f64>]) -> Result<StatResult, StatError> {
    let (xs, ys) = pairwise_complete(a, b);
    if xs.len() < 3 {
        return Err(StatError::TooFewPairs {
            needed: 3,
            got: xs.len(),
        });
    }
    let rx = average_ranks(&xs);
    let ry = average_ranks(&ys);
    Ok(StatResult {
        statistic: "spearman_rho".into(),
        value: pearson_of(&rx, &ry)?,
        ci95: None,
        n_effective: xs.len(),
    })
}

/// Categories present in a matrix after rounding to its granularity,
/// as sorted integer step indices plus per-cell indices.
struct Discretized {
    /// Sorted distinct category step indices.
    categories: Vec<i64>,
    /// Same shape as the matrix values, holding category positions.
    cells: Vec<Vec<Option<usize>>>,
}

fn discretize(m: &ScoreMatrix) -> Discretized {
    let mut categories: Vec<i64> = Vec::new();
    let raw: Vec<Vec<Option<i64>>> = m
        .values
        .iter()
        .map(|row| {
            row.iter()
                .map(|cell| cell.map(|v| (v / m.granularity).round() as i64))
                .collect()
        })
        .collect();
    for row in &raw {
        for cell in row.iter().flatten() {
            if !categories.contains(cell) {
                categories.push(*cell);
            }
        }
    }
    categories.sort_unstable();
    let cells = raw
        .iter()
        .map(|row| {
            row.iter()
                .map(|cell| cell.map(|c| categories.binary_search(&c).expect("present")))
                .collect()
        })
        .collect();
    Discretized { categories, cells }
}

/// Fleiss' multi-rater κ over discretized categories. Items with any
/// missing rating are dropped so every kept item has the full rater count.
pub fn fleiss_kappa(m: &ScoreMatrix) -> Result<StatResult, StatError> {
    let n_raters = m.raters.len();
    if n_raters < 2 {
        return Err(StatError::Shape("need at least 2 raters".into()));
    }
    let disc = discretize(m);
    let kept: Vec<Vec<usize>> = disc
        .cells
        .iter()
        .filter_map(|row| row.iter().copied().collect::<Option<Vec<usize>>>())
        .collect();
    if kept.is_empty() {
        return Err(StatError::EmptyAfterDeletion);
    }
    let n_cats = disc.categories.len();
    if n_cats < 2 {
        return Err(StatError::DegenerateCategories);
    }
    let n = n_raters as f64;
    let mut p_bar = 0.0;
    let mut marginals = vec![0.0; n_cats];
    for row in &kept {
        let mut counts = vec![0.0; n_cats];
        for &c in row {
            counts[c] += 1.0;
        }
        let sum_sq: f64 = counts.iter().map(|c| c * c).sum();
        p_bar += (sum_sq - n) / (n * (n - 1.0));
        for (m, c) in marginals.iter_mut().zip(&counts) {
            *m += c;
        }
    }
    let n_items = kept.len() as f64;
    p_bar /= n_items;
    let total = n_items * n;
    let p_e: f64 = marginals.iter().map(|m| (m / total) * (m / total)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(StatError::DegenerateCategories);
    }
    Ok(StatResult {
        statistic: "fleiss_kappa".into(),
        value: (p_bar - p_e) / (1.0 - p_e),
        ci95: None,
        n_effective: kept.len(),
    })
}

/// Krippendorff's α via coincidence matrices; missing cells are handled
/// natively (units with a single rating contribute nothing).
pub fn krippendorff_alpha(m: &ScoreMatrix, metric: AlphaMetric) -> Result<StatResult, StatError> {
    let disc = discretize(m);
    let n_cats = disc.categories.len();
    if n_cats == 0 {
        return Err(StatError::InsufficientPairs);
    }
    let mut coincidence = vec![vec![0.0; n_cats]; n_cats];
    let mut pairable_units = 0usize;
    for row in &disc.cells {
        let present: Vec<usize> = row.iter().flatten().copied().collect();
        let m_u = present.len();
        if m_u < 2 {
            continue;
        }
        pairable_units += 1;
        let weight = 1.0 / (m_u as f64 - 1.0);
        for (i, &ci) in present.iter().enumerate() {
            for (j, &cj) in present.iter().enumerate() {
                if i != j {
                    coincidence[ci][cj] += weight;
                }
            }
        }
    }
    if pairable_units == 0 {
        return Err(StatError::InsufficientPairs);
    }
    let freq: Vec<f64> = (0..n_cats)
        .map(|c| coincidence[c].iter().sum::<f64>())
        .collect();
    let n: f64 = freq.iter().sum();
    if n < 2.0 {
        return Err(StatError::InsufficientPairs);
    }
    let delta_sq = |c: usize, k: usize| -> f64 {
        if c == k {
            return 0.0;
        }
        match metric {
            AlphaMetric::Nominal => 1.0,
            AlphaMetric::Interval => {
                let d = (disc.categories[c] - disc.categories[k]) as f64 * m.granularity;
                d * d
            }
            AlphaMetric::Ordinal => {
                let (lo, hi) = if c < k { (c, k) } else { (k, c) };
                let between: f64 = (lo..=hi).map(|g| freq[g]).sum();
                let d = between - (freq[c] + freq[k]) / 2.0;
                d * d
            }
        }
    };
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..n_cats {
        for k in 0..n_cats {
            let d2 = delta_sq(c, k);
            d_o += coincidence[c][k] * d2;
            d_e += freq[c] * freq[k] * d2;
        }
    }
    d_e /= n - 1.0;
    if d_e == 0.0 {
        return Err(StatError::DegenerateCategories);
    }
    Ok(StatResult {
        statistic: format!("krippendorff_alpha_{}", metric.slug()),
        value: 1.0 - d_o / d_e,
        ci95: None,
        n_effective: pairable_units,
    })
}

struct TwoWayAnova {
    msr: f64,
    msc: f64,
    mse: f64,
    n_items: usize,
    n_raters: usize,
}

fn two_way_anova(rows: &[Vec<f64>]) -> Result<TwoWayAnova, StatError> {
    let n = rows.len();
    if n < 2 {
        return Err(StatError::TooFewPairs { needed: 2, got: n });
    }
    let k = rows[0].len();
    if k < 2 {
        return Err(StatError::Shape("need at least 2 raters".into()));
    }
    let n_f = n as f64;
    let k_f = k as f64;
    let grand = rows.iter().flatten().sum::<f64>() / (n_f * k_f);
    let row_means: Vec<f64> = rows.iter().map(|r| mean(r)).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n_f)
        .collect();
    let ss_rows: f64 = row_means.iter().map(|m| k_f * (m - grand) * (m - grand)).sum();
    let ss_cols: f64 = col_means.iter().map(|m| n_f * (m - grand) * (m - grand)).sum();
    let ss_total: f64 = rows
        .iter()
        .flatten()
        .map(|x| (x - grand) * (x - grand))
        .sum();
    let ss_err = ss_total - ss_rows - ss_cols;
    Ok(TwoWayAnova {
        msr: ss_rows / (n_f - 1.0),
        msc: ss_cols / (k_f - 1.0),
        mse: ss_err / ((n_f - 1.0) * (k_f - 1.0)),
        n_items: n,
        n_raters: k,
    })
}

/// ICC(2,1): two-way random effects, absolute agreement, single rater.
/// Rows with missing values are dropped first.
pub fn icc2(m: &ScoreMatrix) -> Result<StatResult, StatError> {
    let anova = two_way_anova(&m.complete_rows())?;
    let k = anova.n_raters as f64;
    let n = anova.n_items as f64;
    let denom = anova.msr + (k - 1.0) * anova.mse + k * (anova.msc - anova.mse) / n;
    if denom.abs() < 1e-12 {
        return Err(StatError::DegenerateVariance);
    }
    Ok(StatResult {
        statistic: "icc_2_1".into(),
        value: (anova.msr - anova.mse) / denom,
        ci95: None,
        n_effective: anova.n_items,
    })
}

/// ICC(2,k): same model, reliability of the k-rater average.
pub fn icc2k(m: &ScoreMatrix) -> Result<StatResult, StatError> {
    let anova = two_way_anova(&m.complete_rows())?;
    let n = anova.n_items as f64;
    let denom = anova.msr + (anova.msc - anova.mse) / n;
    if denom.abs() < 1e-12 {
        return Err(StatError::DegenerateVariance);
    }
    Ok(StatResult {
        statistic: "icc_2_k".into(),
        value: (anova.msr - anova.mse) / denom,
        ci95: None,
        n_effective: anova.n_items,
    })
}

/// Linear rescale from one numeric range onto another.
pub fn rescale(x: f64, from: (f64, f64), to: (f64, f64)) -> f64 {
    if (from.1 - from.0).abs() < 1e-12 {
        return to.0;
    }
    to.0 + (x - from.0) * (to.1 - to.0) / (from.1 - from.0)
}

/// Per-rubric correlation of judge scores with a mapped human attribute.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RubricHumanStat {
    pub rubric_id: String,
    pub rubric_name: String,
    pub attribute: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement_pct: Option<(f64, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Output of [`correlate_with_human`]: per-rubric statistics and a
/// pooled value over all (item, rubric) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanCorrelationReport {
    pub per_rubric: Vec<RubricHumanStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_spearman: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_agreement_pct: Option<(f64, f64, f64)>,
    pub pooled_n: usize,
}

/// Correlate judge score records with human gold ratings under a
/// rubric → attribute mapping. Judge scores are rescaled onto each
/// attribute's native range; agreement uses the attribute's granularity
/// so rank statistics stay scale-free and exact matches stay native.
pub fn correlate_with_human(
    records: &[ScoreRecord],
    rubrics: &[Rubric],
    items: &[CandidateOutput],
    attribute_scales: &BTreeMap<String, Scale>,
    mapping: &BTreeMap<String, String>,
) -> Result<HumanCorrelationReport, StatError> {
    let rubric_by_id: BTreeMap<&str, &Rubric> =
        rubrics.iter().map(|r| (r.rubric_id.as_str(), r)).collect();
    let item_by_id: BTreeMap<&str, &CandidateOutput> =
        items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut mapped_rubrics: Vec<(&Rubric, &str, &Scale)> = Vec::new();
    for (rubric_id, attribute) in mapping {
        let Some(rubric) = rubric_by_id.get(rubric_id.as_str()) else {
            continue;
        };
        let Some(attr_scale) = attribute_scales.get(attribute) else {
            continue;
        };
        mapped_rubrics.push((rubric, attribute.as_str(), attr_scale));
    }
    if mapped_rubrics.is_empty() {
        return Err(StatError::NoMappedRubrics);
    }

    let mut per_rubric = Vec::new();
    let mut pooled_judge: Vec<Option<f64>> = Vec::new();
    let mut pooled_human: Vec<Option<f64>> = Vec::new();
    let mut pooled_matches = 0usize;
    let mut pooled_total = 0usize;

    for (rubric, attribute, attr_scale) in mapped_rubrics {
        let from = (rubric.scale.numeric_min, rubric.scale.numeric_max);
        let to = (attr_scale.numeric_min, attr_scale.numeric_max);
        let grain = attr_scale.granularity();
        let mut judge: Vec<Option<f64>> = Vec::new();
        let mut human: Vec<Option<f64>> = Vec::new();
        for record in records.iter().filter(|r| r.rubric_id == rubric.rubric_id) {
            let human_value = item_by_id
                .get(record.item_id.as_str())
                .and_then(|item| item.human_scores.get(attribute))
                .copied();
            if let Some(h) = human_value {
                judge.push(Some(rescale(record.score, from, to)));
                human.push(Some(h));
            }
        }
        let n = judge.len();
        let rho = spearman(&judge, &human);
        let agree = agreement_pct(&judge, &human, grain);
        pooled_judge.extend(judge.iter().copied());
        pooled_human.extend(human.iter().copied());
        if let Ok(ref a) = agree {
            pooled_matches += (a.value / 100.0 * a.n_effective as f64).round() as usize;
            pooled_total += a.n_effective;
        }
        let note = match (&rho, &agree) {
            (Err(e), _) => Some(e.to_string()),
            (_, Err(e)) => Some(e.to_string()),
            _ => None,
        };
        per_rubric.push(RubricHumanStat {
            rubric_id: rubric.rubric_id.clone(),
            rubric_name: rubric.name.clone(),
            attribute: attribute.to_string(),
            n,
            spearman: rho.ok().map(|r| r.value),
            agreement_pct: agree.ok().map(|a| {
                let ci = a.ci95.unwrap_or((a.value, a.value));
                (a.value, ci.0, ci.1)
            }),
            note,
        });
    }

    let pooled_n = pooled_judge.iter().flatten().count();
    let pooled_spearman = spearman(&pooled_judge, &pooled_human).ok().map(|r| r.value);
    let pooled_agreement_pct = if pooled_total > 0 {
        let (lo, hi) = wilson_ci(pooled_matches, pooled_total);
        Some((
            100.0 * pooled_matches as f64 / pooled_total as f64,
            100.0 * lo,
            100.0 * hi,
        ))
    } else {
        None
    };
    Ok(HumanCorrelationReport {
        per_rubric,
        pooled_spearman,
        pooled_agreement_pct,
        pooled_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(xs: &[f64]) -> Vec<Option<f64>> {
        xs.iter().copied().map(Some).collect()
    }

    fn matrix(rows: &[&[f64]], granularity: f64) -> ScoreMatrix {
        let items = (0..rows.len()).map(|i| format!("i{i}")).collect();
        let raters = (0..rows[0].len()).map(|j| format!("r{j}")).collect();
        let values = rows
            .iter()
            .map(|r| r.iter().copied().map(Some).collect())
            .collect();
        ScoreMatrix::new(items, raters, values, granularity).unwrap()
    }

    #[test]
    fn agreement_two_of_three() {
        let r = agreement_pct(&some(&[3.0, 4.0, 5.0]), &some(&[3.0, 4.0, 4.0]), 1.0).unwrap();
        assert!((r.value - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.n_effective, 3);
    }

    #[test]
    fn agreement_identical_hits_ci_ceiling() {
        let r = agreement_pct(&some(&[1.0, 2.0, 3.0]), &some(&[1.0, 2.0, 3.0]), 1.0).unwrap();
        assert_eq!(r.value, 100.0);
        let (_, hi) = r.ci95.unwrap();
        assert!((hi - 100.0).abs() < 1e-9);
    }

    #[test]
    fn agreement_empty_after_deletion() {
        assert_eq!(
            agreement_pct(&[None, Some(1.0)], &[Some(2.0), None], 1.0),
            Err(StatError::EmptyAfterDeletion)
        );
    }

    #[test]
    fn spearman_hand_fixture() {
        let r = spearman(&some(&[1.0, 2.0, 3.0, 4.0]), &some(&[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert!((r.value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_identical_and_reversed() {
        let a = some(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((spearman(&a, &a).unwrap().value - 1.0).abs() < 1e-12);
        let b = some(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        assert!((spearman(&a, &b).unwrap().value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_monotone_transform_invariant() {
        let a = some(&[1.0, 4.0, 2.0, 5.0, 3.0]);
        let b = some(&[2.0, 3.0, 5.0, 1.0, 4.0]);
        let transformed: Vec<Option<f64>> =
            a.iter().map(|v| v.map(|x| x * x * x + 7.0)).collect();
        let r1 = spearman(&a, &b).unwrap().value;
        let r2 = spearman(&transformed, &b).unwrap().value;
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn spearman_ties_use_average_ranks() {
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0, 3.0]), vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn spearman_degenerate_cases() {
        assert_eq!(
            spearman(&some(&[1.0, 2.0]), &some(&[1.0, 2.0])),
            Err(StatError::TooFewPairs { needed: 3, got: 2 })
        );
        assert_eq!(
            spearman(&some(&[1.0, 1.0, 1.0]), &some(&[1.0, 2.0, 3.0])),
            Err(StatError::ZeroVariance)
        );
    }

    #[test]
    fn pearson_hand_fixture() {
        let r = pearson(&some(&[1.0, 2.0, 3.0]), &some(&[2.0, 4.0, 7.0])).unwrap();
        assert!((r.value - 0.9934).abs() < 1e-4);
        // closed form: 5 / sqrt(2 * 38/3)
        let exact = 5.0 / (2.0_f64 * 38.0 / 3.0).sqrt();
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn pearson_self_and_negated() {
        let v = some(&[1.0, 5.0, 3.0, 2.0]);
        assert!((pearson(&v, &v).unwrap().value - 1.0).abs() < 1e-12);
        let neg: Vec<Option<f64>> = v.iter().map(|x| x.map(|x| -x + 10.0)).collect();
        assert!((pearson(&v, &neg).unwrap().value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn fleiss_kappa_hand_fixture() {
        // 2 raters, 2 items, ratings [[A,A],[A,B]] encoded as 1/2.
        let m = matrix(&[&[1.0, 1.0], &[1.0, 2.0]], 1.0);
        let r = fleiss_kappa(&m).unwrap();
        assert!((r.value + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fleiss_kappa_unanimous_with_item_spread() {
        let m = matrix(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]], 1.0);
        assert!((fleiss_kappa(&m).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fleiss_kappa_degenerate_single_category() {
        let m = matrix(&[&[2.0, 2.0], &[2.0, 2.0]], 1.0);
        assert_eq!(fleiss_kappa(&m), Err(StatError::DegenerateCategories));
    }

    #[test]
    fn alpha_nominal_hand_fixture() {
        let m = matrix(&[&[1.0, 2.0], &[2.0, 1.0]], 1.0);
        let r = krippendorff_alpha(&m, AlphaMetric::Nominal).unwrap();
        assert!((r.value + 0.5).abs() < 1e-12);
    }

    #[test]
    fn alpha_unanimous_is_one_for_all_metrics() {
        let m = matrix(&[&[1.0, 1.0], &[3.0, 3.0], &[5.0, 5.0]], 1.0);
        for metric in [AlphaMetric::Nominal, AlphaMetric::Ordinal, AlphaMetric::Interval] {
            assert!((krippendorff_alpha(&m, metric).unwrap().value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_handles_missing_cells() {
        // Single-rating units contribute nothing; all pairable pairs agree.
        let m = ScoreMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["r1".into(), "r2".into(), "r3".into()],
            vec![
                vec![Some(1.0), Some(1.0), None],
                vec![Some(4.0), None, Some(4.0)],
                vec![None, Some(2.0), None],
            ],
            1.0,
        )
        .unwrap();
        let r = krippendorff_alpha(&m, AlphaMetric::Nominal).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert_eq!(r.n_effective, 2);
    }

    #[test]
    fn alpha_insufficient_pairs() {
        let m = ScoreMatrix::new(
            vec!["a".into()],
            vec!["r1".into(), "r2".into()],
            vec![vec![Some(1.0), None]],
            1.0,
        )
        .unwrap();
        assert_eq!(
            krippendorff_alpha(&m, AlphaMetric::Nominal),
            Err(StatError::InsufficientPairs)
        );
    }

    #[test]
    fn icc2_perfect_agreement() {
        let m = matrix(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]], 1.0);
        assert!((icc2(&m).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn icc2_constant_rater_offset() {
        let m = matrix(&[&[1.0, 2.0], &[2.0, 3.0], &[3.0, 4.0]], 1.0);
        assert!((icc2(&m).unwrap().value - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn icc2_degenerate_all_equal() {
        let m = matrix(&[&[2.0, 2.0], &[2.0, 2.0]], 1.0);
        assert_eq!(icc2(&m), Err(StatError::DegenerateVariance));
    }

    #[test]
    fn icc2k_exceeds_icc21_with_noise() {
        let m = matrix(&[&[1.0, 2.0], &[3.0, 2.0], &[4.0, 5.0], &[5.0, 4.0]], 1.0);
        let single = icc2(&m).unwrap().value;
        let average = icc2k(&m).unwrap().value;
        assert!(average > single);
    }

    #[test]
    fn statistics_invariant_under_rater_permutation() {
        let m = matrix(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 1.0], &[5.0, 4.0, 4.0]], 1.0);
        let permuted = ScoreMatrix::new(
            m.items.clone(),
            vec!["r2".into(), "r0".into(), "r1".into()],
            m.values
                .iter()
                .map(|r| vec![r[2], r[0], r[1]])
                .collect(),
            1.0,
        )
        .unwrap();
        assert!((fleiss_kappa(&m).unwrap().value - fleiss_kappa(&permuted).unwrap().value).abs() < 1e-12);
        assert!(
            (krippendorff_alpha(&m, AlphaMetric::Ordinal).unwrap().value
                - krippendorff_alpha(&permuted, AlphaMetric::Ordinal).unwrap().value)
                .abs()
                < 1e-12
        );
        assert!((icc2(&m).unwrap().value - icc2(&permuted).unwrap().value).abs() < 1e-12);
    }

    #[test]
    fn negative_values_not_clamped() {
        let m = matrix(&[&[1.0, 2.0], &[2.0, 1.0]], 1.0);
        assert!(krippendorff_alpha(&m, AlphaMetric::Nominal).unwrap().value < 0.0);
        assert!(fleiss_kappa(&m).unwrap().value < 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let m = ScoreMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["j1".into(), "j2".into()],
            vec![vec![Some(1.0), None], vec![Some(2.5), Some(4.0)]],
            0.5,
        )
        .unwrap();
        let mut buf = Vec::new();
        m.to_csv(&mut buf).unwrap();
        let back = ScoreMatrix::from_csv(buf.as_slice(), 0.5).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rescale_endpoints() {
        assert_eq!(rescale(1.0, (1.0, 5.0), (0.0, 4.0)), 0.0);
        assert_eq!(rescale(5.0, (1.0, 5.0), (0.0, 4.0)), 4.0);
        assert_eq!(rescale(3.0, (1.0, 5.0), (0.0, 4.0)), 2.0);
    }
}
