//! Prediction-target selection, quartile discretization and target-masked
//! labeled examples.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{format_number, normalize_value, ColumnKind, Document, Table, DEFAULT_PRECISION};
use crate::util::rng_for;

pub const MAX_CLASSES: usize = 50;
pub const MAX_LABEL_CHARS: usize = 256;
pub const MIN_DISCRETIZE_VALUES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Categorical,
    DiscretizedNumeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub dataset_id: String,
    pub column: String,
    pub kind: TargetKind,
    /// Quartiles `q1 < q2 < q3`; empty for categorical targets.
    pub boundaries: Vec<f64>,
    pub descriptors: Vec<String>,
}

impl TargetSpec {
    /// Class label for a target cell; `None` for missing values.
    pub fn label_for(&self, cell: &crate::table::CellValue) -> Option<String> {
        if cell.is_missing() {
            return None;
        }
        match self.kind {
            TargetKind::Categorical => Some(normalize_value(cell, DEFAULT_PRECISION)),
            TargetKind::DiscretizedNumeric => {
                let v = cell.as_number()?;
                Some(self.descriptors[bucket_of(v, &self.boundaries)].clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub doc_id: String,
    pub dataset_id: String,
    pub text: String,
    pub label: String,
}

/// Columns that survive the target rejection rules.
pub fn candidate_targets(table: &Table) -> Result<BTreeSet<String>> {
    if table.rows.is_empty() {
        return Err(Error::NoTarget(table.dataset_id.clone()));
    }
    let n_rows = table.rows.len();
    let mut out = BTreeSet::new();
    for (j, col) in table.columns.iter().enumerate() {
        if col.name.contains("Unnamed:") || col.kind == ColumnKind::Timestamp {
            continue;
        }
        let uniques: BTreeSet<String> = table
            .rows
            .iter()
            .map(|r| &r[j])
            .filter(|v| !v.is_missing())
            .map(|v| normalize_value(v, DEFAULT_PRECISION))
            .collect();
        if uniques.len() < 2 || uniques.len() > MAX_CLASSES {
            continue;
        }
        if uniques.iter().any(|u| u.chars().count() > MAX_LABEL_CHARS) {
            continue;
        }
        if uniques.len() == n_rows && col.kind != ColumnKind::Number {
            continue;
        }
        out.insert(col.name.clone());
    }
    if out.is_empty() {
        return Err(Error::NoTarget(table.dataset_id.clone()));
    }
    Ok(out)
}

/// Linear-interpolation quantile at index `(n-1)p` of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Bucket index under half-open intervals `[q_i, q_{i+1})`, top bucket
/// closed above.
pub fn bucket_of(v: f64, boundaries: &[f64]) -> usize {
    boundaries.iter().take_while(|&&q| v >= q).count()
}

/// Quartile boundaries and their natural-language bucket descriptors.
pub fn discretize(values: &[f64]) -> Result<(Vec<f64>, Vec<String>)> {
    if values.len() < MIN_DISCRETIZE_VALUES {
        return Err(Error::DegenerateTarget(format!(
            "{} values, need at least {MIN_DISCRETIZE_VALUES}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q: Vec<f64> = [0.25, 0.5, 0.75]
        .iter()
        .map(|&p| quantile_sorted(&sorted, p))
        .collect();
    if !(q[0] < q[1] && q[1] < q[2]) {
        return Err(Error::DegenerateTarget("quartiles coincide".into()));
    }
    let r: Vec<String> = q.iter().map(|&x| format_number(x, DEFAULT_PRECISION)).collect();
    if r[0] == r[1] || r[1] == r[2] {
        return Err(Error::DegenerateTarget("quartiles coincide after rounding".into()));
    }
    let descriptors = vec![
        format!("less than {}", r[0]),
        format!("between {} and {}", r[0], r[1]),
        format!("between {} and {}", r[1], r[2]),
        format!("greater than {}", r[2]),
    ];
    Ok((q, descriptors))
}

fn spec_for(table: &Table, column: &str) -> Result<TargetSpec> {
    let j = table
        .column_index(column)
        .ok_or_else(|| Error::Argument(format!("no column `{column}`")))?;
    let meta = &table.columns[j];
    if meta.kind == ColumnKind::Number {
        let values: Vec<f64> = table.rows.iter().filter_map(|r| r[j].as_number()).collect();
        let (boundaries, descriptors) = discretize(&values)?;
        Ok(TargetSpec {
            dataset_id: table.dataset_id.clone(),
            column: column.to_string(),
            kind: TargetKind::DiscretizedNumeric,
            boundaries,
            descriptors,
        })
    } else {
        let descriptors: BTreeSet<String> = table
            .rows
            .iter()
            .map(|r| &r[j])
            .filter(|v| !v.is_missing())
            .map(|v| normalize_value(v, DEFAULT_PRECISION))
            .collect();
        Ok(TargetSpec {
            dataset_id: table.dataset_id.clone(),
            column: column.to_string(),
            kind: TargetKind::Categorical,
            boundaries: Vec::new(),
            descriptors: descriptors.into_iter().collect(),
        })
    }
}

/// Picks the categorical pool with probability `p` when both pools are
/// non-empty, then a column uniformly within the pool. A numeric pick whose
/// quartiles are degenerate is dropped and the draw repeated.
pub fn choose_target(
    candidates: &BTreeSet<String>,
    table: &Table,
    p: f64,
    seed: u64,
) -> Result<TargetSpec> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
    }
    let is_numeric = |name: &str| {
        table
            .column_index(name)
            .map(|j| table.columns[j].kind == ColumnKind::Number)
            .unwrap_or(false)
    };
    // Column order, not name order, so the pools follow the table layout.
    let mut numeric: Vec<&str> = Vec::new();
    let mut categorical: Vec<&str> = Vec::new();
    for c in table.column_names().filter(|c| candidates.contains(*c)) {
        if is_numeric(c) {
            numeric.push(c);
        } else {
            categorical.push(c);
        }
    }
    let mut rng = rng_for(seed, &format!("target/{}", table.dataset_id));
    loop {
        let pool = match (numeric.is_empty(), categorical.is_empty()) {
            (true, true) => return Err(Error::NoTarget(table.dataset_id.clone())),
            (false, false) => {
                if rng.random::<f64>() < p {
                    &mut categorical
                } else {
                    &mut numeric
                }
            }
            (true, false) => &mut categorical,
            (false, true) => &mut numeric,
        };
        let pick = *pool.choose(&mut rng).expect("non-empty pool");
        match spec_for(table, pick) {
            Ok(spec) => return Ok(spec),
            Err(Error::DegenerateTarget(why)) => {
                log::debug!("target `{pick}` rejected: {why}");
                pool.retain(|c| *c != pick);
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn labeled_doc_id(dataset_id: &str, row: usize) -> String {
    format!("{dataset_id}:{row}:masked")
}

/// Target-masked documents, one per row with a present target value.
pub fn make_labeled_documents(
    table: &Table,
    target: &TargetSpec,
    precision: u32,
) -> Result<Vec<(Document, String)>> {
    let j = table
        .column_index(&target.column)
        .ok_or_else(|| Error::Argument(format!("target column `{}` not in table", target.column)))?;
    let excluded: BTreeSet<String> = [target.column.clone()].into();
    let mut out = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        let Some(label) = target.label_for(&row[j]) else {
            continue;
        };
        let doc = Document::from_row(labeled_doc_id(&table.dataset_id, i), table, i, &excluded, precision)?;
        out.push((doc, label));
    }
    if out.is_empty() {
        return Err(Error::EmptyExamples(target.column.clone()));
    }
    Ok(out)
}

pub fn make_labeled_examples(
    table: &Table,
    target: &TargetSpec,
    precision: u32,
) -> Result<Vec<LabeledExample>> {
    Ok(make_labeled_documents(table, target, precision)?
        .into_iter()
        .map(|(d, label)| LabeledExample {
            doc_id: d.doc_id,
            dataset_id: d.dataset_id,
            text: d.text,
            label,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::infer_schema;

    fn table(header: &[&str], rows: &[Vec<String>]) -> Table {
        let h: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        infer_schema("ds", &h, rows).unwrap()
    }

    #[test]
    fn rejection_rules() {
        let rows: Vec<Vec<String>> = (0..60)
            .map(|i| {
                vec![
                    "same".into(),
                    format!("cat{i}"),
                    format!("{}", i % 3),
                    format!("{}", i % 4),
                    "2024-01-01".into(),
                    format!("id{i}"),
                ]
            })
            .collect();
        let t = table(&["const", "wide", "Unnamed: 0", "ok", "when", "uid"], &rows);
        let c = candidate_targets(&t).unwrap();
        assert_eq!(c, ["ok".to_string()].into());
    }

    #[test]
    fn unique_per_row_numeric_is_kept() {
        let rows: Vec<Vec<String>> = (0..20).map(|i| vec![i.to_string(), format!("u{i}")]).collect();
        let t = table(&["n", "s"], &rows);
        assert_eq!(candidate_targets(&t).unwrap(), ["n".to_string()].into());
    }

    #[test]
    fn long_labels_rejected() {
        let long = "x".repeat(300);
        let rows: Vec<Vec<String>> = (0..10)
            .map(|i| vec![if i % 2 == 0 { long.clone() } else { "short".into() }])
            .collect();
        let t = table(&["txt"], &rows);
        assert!(matches!(candidate_targets(&t), Err(Error::NoTarget(_))));
    }

    #[test]
    fn quartiles_of_one_to_eight() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        let (q, d) = discretize(&v).unwrap();
        assert_eq!(q, vec![2.75, 4.5, 6.25]);
        assert_eq!(d[0], "less than 2.75");
        assert_eq!(d[1], "between 2.75 and 4.5");
        assert_eq!(d[3], "greater than 6.25");
        assert_eq!(bucket_of(3.0, &q), 1);
        assert_eq!(bucket_of(2.75, &q), 1);
        assert_eq!(bucket_of(8.0, &q), 3);
        assert_eq!(bucket_of(-1.0, &q), 0);
    }

    #[test]
    fn constant_column_is_degenerate() {
        assert!(matches!(discretize(&[3.0; 10]), Err(Error::DegenerateTarget(_))));
        assert!(matches!(discretize(&[1.0, 2.0]), Err(Error::DegenerateTarget(_))));
    }

    #[test]
    fn choose_respects_pools() {
        let rows: Vec<Vec<String>> = (0..40)
            .map(|i| vec![format!("{}", i % 8), ["a", "b"][i % 2].to_string()])
            .collect();
        let t = table(&["num", "cat"], &rows);
        let both = candidate_targets(&t).unwrap();
        assert_eq!(choose_target(&both, &t, 1.0, 1).unwrap().column, "cat");
        let spec = choose_target(&both, &t, 0.0, 1).unwrap();
        assert_eq!(spec.column, "num");
        assert_eq!(spec.kind, TargetKind::DiscretizedNumeric);
        let only_num: BTreeSet<String> = ["num".to_string()].into();
        assert_eq!(choose_target(&only_num, &t, 1.0, 5).unwrap().column, "num");
        assert!(matches!(
            choose_target(&BTreeSet::new(), &t, 0.5, 1),
            Err(Error::NoTarget(_))
        ));
        // Both outcomes appear across seeds at p = 0.5.
        let picks: BTreeSet<String> = (0..32)
            .map(|s| choose_target(&both, &t, 0.5, s).unwrap().column)
            .collect();
        assert_eq!(picks.len(), 2);
    }

    #[test]
    fn degenerate_numeric_falls_back() {
        // 39 zeros and a single one: every quartile is 0.
        let rows: Vec<Vec<String>> = (0..40)
            .map(|i| vec![if i == 0 { "1".into() } else { "0".into() }, ["a", "b"][i % 2].to_string()])
            .collect();
        let t = table(&["num", "cat"], &rows);
        let both = candidate_targets(&t).unwrap();
        assert_eq!(choose_target(&both, &t, 0.0, 3).unwrap().column, "cat");
    }

    #[test]
    fn masked_examples() {
        let mut rows: Vec<Vec<String>> = (1..=8)
            .map(|i| vec![i.to_string(), "setosa".to_string(), format!("{}", i as f64 * 0.5)])
            .collect();
        rows.push(vec!["".into(), "virginica".into(), "1".into()]);
        let t = table(&["y", "species", "petal"], &rows);
        let spec = spec_for(&t, "y").unwrap();
        let ex = make_labeled_examples(&t, &spec, 2).unwrap();
        assert_eq!(ex.len(), 8);
        assert_eq!(ex[2].label, "between 2.75 and 4.5");
        assert!(ex.iter().all(|e| !e.text.contains("The y is")));

        let cat = spec_for(&t, "species").unwrap();
        let ex = make_labeled_examples(&t, &cat, 2).unwrap();
        assert_eq!(ex[0].label, "setosa");
        assert!(!ex[0].text.contains("species"));
    }

    #[test]
    fn all_missing_target_errors() {
        let rows: Vec<Vec<String>> = (0..3).map(|_| vec!["".into(), "x".into()]).collect();
        let t = table(&["y", "f"], &rows);
        let spec = TargetSpec {
            dataset_id: "ds".into(),
            column: "y".into(),
            kind: TargetKind::Categorical,
            boundaries: vec![],
            descriptors: vec!["a".into()],
        };
        assert!(matches!(
            make_labeled_examples(&t, &spec, 2),
            Err(Error::EmptyExamples(_))
        ));
    }
}
