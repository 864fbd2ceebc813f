//! Plain-text helpers shared by the CSV writers and readers.

use crate::error::{Error, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses a headed numeric CSV into its header and rows.
pub fn parse_numeric_csv(text: &str, what: &'static str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or(Error::Parse {
            what,
            detail: "empty file".into(),
        })?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                what,
                detail: format!("row {}: {e}", lineno + 1),
            })?;
        if row.len() != header.len() {
            return Err(Error::Parse {
                what,
                detail: format!(
                    "row {} has {} fields, header has {}",
                    lineno + 1,
                    row.len(),
                    header.len()
                ),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 12_345.678_901_234_5, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn csv_parse_errors() {
        assert!(parse_numeric_csv("", "test").is_err());
        assert!(parse_numeric_csv("a,b\n1,2,3\n", "test").is_err());
        assert!(parse_numeric_csv("a,b\n1,x\n", "test").is_err());
        let (h, r) = parse_numeric_csv("a,b\n1,2\n3,4\n", "test").unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(r, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
