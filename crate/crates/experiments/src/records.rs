//! CSV rows: `kind,class,N,replica,seed,quantity,value,theory_ref`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

pub const COLUMNS: [&str; 8] = ["kind", "class", "N", "replica", "seed", "quantity", "value", "theory_ref"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub kind: String,
    pub class: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub replica: usize,
    pub seed: u64,
    pub quantity: String,
    pub value: f64,
    pub theory_ref: Option<f64>,
}

/// Quantity name for a per-horizon measurement, e.g. `loss[H=5]`.
pub fn at_horizon(name: &str, horizon: usize) -> String {
    format!("{name}[H={horizon}]")
}

/// Splits `loss[H=5]` into `("loss", Some(5))`.
pub fn split_quantity(q: &str) -> (&str, Option<usize>) {
    if let Some(base) = q.strip_suffix(']') {
        if let Some((name, h)) = base.split_once("[H=") {
            if let Ok(h) = h.parse() {
                return (name, Some(h));
            }
        }
    }
    (q, None)
}

/// Stable sort by `(class, N, replica)`; rows of one replica keep their
/// generation order.
pub fn sort_records(records: &mut [Record]) {
    records.sort_by(|a, b| (&a.class, a.n, a.replica).cmp(&(&b.class, b.n, b.replica)));
}

pub fn write_csv<W: Write>(out: W, records: &[Record]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses CSV produced by [`write_csv`]. The header must match exactly.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<Record>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(COLUMNS) {
        return Err(RunError::Parse(format!(
            "unexpected CSV header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let rec: Record = row?;
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_csv_str(text: &str) -> Result<Vec<Record>> {
    read_csv(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(class: &str, n: usize, replica: usize, q: &str) -> Record {
        Record {
            kind: "nonlinear".into(),
            class: class.into(),
            n,
            replica,
            seed: 7,
            quantity: q.into(),
            value: 0.1,
            theory_ref: None,
        }
    }

    #[test]
    fn roundtrip() {
        let mut rows = vec![rec("ss", 300, 0, "eval_loss[H=5]"), rec("ms", 300, 1, "eval_loss[H=5]")];
        rows[1].theory_ref = Some(1.0 / 3.0);
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kind,class,N,replica,seed,quantity,value,theory_ref\n"));
        assert_eq!(parse_csv_str(&text).unwrap(), rows);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(parse_csv_str("kind,class,n,replica,seed,quantity,value,theory_ref\n").is_err());
        assert!(parse_csv_str("kind,class,N,replica,seed,quantity,value\n").is_err());
    }

    #[test]
    fn quantity_suffix() {
        assert_eq!(split_quantity(&at_horizon("loss", 15)), ("loss", Some(15)));
        assert_eq!(split_quantity("spectral_radius"), ("spectral_radius", None));
        assert_eq!(split_quantity("x[H=]"), ("x[H=]", None));
    }

    #[test]
    fn sort_is_stable_within_replica() {
        let mut rows = vec![
            rec("ss", 100, 1, "b"),
            rec("ss", 100, 0, "b"),
            rec("ms", 100, 0, "z"),
            rec("ss", 100, 0, "a"),
        ];
        sort_records(&mut rows);
        let order: Vec<_> = rows.iter().map(|r| (r.class.as_str(), r.replica, r.quantity.as_str())).collect();
        assert_eq!(order, vec![("ms", 0, "z"), ("ss", 0, "b"), ("ss", 0, "a"), ("ss", 1, "b")]);
    }
}
