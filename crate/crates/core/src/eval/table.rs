//! CSV result tables with exact float round-trips.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `write -> read` reproduces the table bit for bit and reruns with equal
//! seeds produce byte-identical files.

use super::sweep::{AttackTag, ResultRow};
use super::EvalError;
use crate::semcom::Provenance;
use std::path::Path;

pub(crate) const HEADER: &str = "model_tag,attack_tag,snr_db,epsilon,accuracy,n_samples,seed";

/// Renders rows (sorted by key) to CSV text.
pub(crate) fn render_csv(table: &[ResultRow]) -> Result<String, EvalError> {
    let mut keys: Vec<_> = table.iter().map(|r| r.key()).collect();
    keys.sort();
    let before = keys.len();
    keys.dedup();
    if keys.len() != before {
        return Err(EvalError::Contract(
            "duplicate (model, attack, snr, epsilon, seed) rows; write refused".into(),
        ));
    }
    let mut sorted: Vec<&ResultRow> = table.iter().collect();
    sorted.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut out = String::with_capacity(64 * (table.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model_tag, r.attack_tag, r.snr_db, r.epsilon, r.accuracy, r.n_samples, r.seed
        ));
    }
    Ok(out)
}

/// Writes the table; refuses duplicate keys.
pub fn write_results(table: &[ResultRow], path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, render_csv(table)?)?;
    Ok(())
}

/// Reads a table back; exact inverse of [`write_results`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, EvalError> {
    let content = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            if line != HEADER {
                return Err(EvalError::Contract(format!("unexpected header: {line}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(EvalError::Contract(format!("line {i}: expected 7 fields")));
        }
        let model_tag = match fields[0] {
            "natural" => Provenance::Natural,
            "sdm" => Provenance::Sdm,
            "random_defense" => Provenance::RandomDefense,
            other => return Err(EvalError::Contract(format!("line {i}: bad model '{other}'"))),
        };
        let attack_tag: AttackTag = fields[1]
            .parse()
            .map_err(|e| EvalError::Contract(format!("line {i}: {e}")))?;
        let parse_f = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| EvalError::Contract(format!("line {i}: bad {what} '{s}'")))
        };
        rows.push(ResultRow {
            model_tag,
            attack_tag,
            snr_db: parse_f(fields[2], "snr_db")?,
            epsilon: parse_f(fields[3], "epsilon")?,
            accuracy: parse_f(fields[4], "accuracy")?,
            n_samples: fields[5]
                .parse()
                .map_err(|_| EvalError::Contract(format!("line {i}: bad n_samples")))?,
            seed: fields[6]
                .parse()
                .map_err(|_| EvalError::Contract(format!("line {i}: bad seed")))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(snr: f64, acc: f64) -> ResultRow {
        ResultRow {
            model_tag: Provenance::Natural,
            attack_tag: AttackTag::Sna,
            snr_db: snr,
            epsilon: 0.728_431_9,
            accuracy: acc,
            n_samples: 256,
            seed: 17,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_results(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{HEADER}\n"));
        assert!(read_results(&path).unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_exact() {
        let table = vec![row(0.0, 0.123456789012345), row(2.0, 1.0 / 3.0), row(4.0, 0.97)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_results(&table, &path).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back, table);
        // And the written bytes are stable.
        write_results(&back, &path).unwrap();
        let second = std::fs::read_to_string(&path).unwrap();
        write_results(&table, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), second);
    }

    #[test]
    fn duplicate_keys_refuse_to_write() {
        let table = vec![row(0.0, 0.5), row(0.0, 0.6)];
        let dir = tempfile::tempdir().unwrap();
        let err = write_results(&table, &dir.path().join("r.csv")).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    proptest::proptest! {
        #[test]
        fn float_fields_survive_round_trip(
            snr in -20.0f64..40.0,
            acc in 0.0f64..1.0,
        ) {
            let table = vec![row(snr, acc)];
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.csv");
            write_results(&table, &path).unwrap();
            let back = read_results(&path).unwrap();
            proptest::prop_assert_eq!(back, table);
        }
    }
}
