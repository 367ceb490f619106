//! Per-(class, N, quantity) means over replicas.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::records::{split_quantity, Record};

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub class: String,
    pub n: usize,
    pub quantity: String,
    pub mean: f64,
    /// Standard error of the mean; zero for a single replica.
    pub stderr: f64,
    pub count: usize,
    pub theory_ref: Option<f64>,
}

pub fn summarize(records: &[Record]) -> Vec<SummaryRow> {
    type Key<'a> = (&'a str, usize, &'a str, Option<usize>);
    let mut groups: BTreeMap<Key, (&str, Vec<f64>, Option<f64>)> = BTreeMap::new();
    for r in records {
        let (base, h) = split_quantity(&r.quantity);
        let entry = groups
            .entry((r.class.as_str(), r.n, base, h))
            .or_insert((r.quantity.as_str(), Vec::new(), r.theory_ref));
        entry.1.push(r.value);
    }
    groups
        .into_iter()
        .map(|((class, n, _, _), (quantity, values, theory_ref))| {
            let k = values.len() as f64;
            let mean = values.iter().sum::<f64>() / k;
            let stderr = if values.len() > 1 {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                class: class.to_string(),
                n,
                quantity: quantity.to_string(),
                mean,
                stderr,
                count: values.len(),
                theory_ref,
            }
        })
        .collect()
}

pub fn find<'a>(rows: &'a [SummaryRow], class: &str, n: usize, quantity: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.class == class && r.n == n && r.quantity == quantity)
}

pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<13} {:>6} {:<28} {:>14} {:>12} {:>6} {:>14}",
        "class", "N", "quantity", "mean", "stderr", "count", "theory_ref"
    );
    for r in rows {
        let reference = r.theory_ref.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            out,
            "{:<13} {:>6} {:<28} {:>14.6} {:>12.6} {:>6} {:>14}",
            r.class, r.n, r.quantity, r.mean, r.stderr, r.count, reference
        );
    }
    out
}
