//! Sample sources: single-column CSV files and the built-in data set.

use std::path::Path;

use sdt_core::density::Sample;

use crate::{CliError, Result};

/// Ordered differences of the telephone line fault data.
pub const TELEPHONE_FAULT: [f64; 14] = [
    -988.0, -135.0, -78.0, 3.0, 59.0, 83.0, 93.0, 110.0, 189.0, 197.0, 204.0, 229.0, 289.0, 310.0,
];

pub const BUILTIN_PREFIX: &str = "builtin:";

/// Reads one numeric column; a non-numeric first row is taken as a header.
pub fn ingest_csv(path: &Path) -> Result<Sample> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 1 {
            return Err(CliError::Parse {
                path: shown,
                row,
                message: format!("expected a single column, found {}", record.len()),
            });
        }
        match record[0].parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ if row == 1 => continue,
            _ => {
                return Err(CliError::Parse {
                    path: shown,
                    row,
                    message: format!("cannot parse {:?} as a finite number", &record[0]),
                })
            }
        }
    }
    if values.is_empty() {
        return Err(CliError::Parse {
            path: shown,
            row: 0,
            message: "no observations".into(),
        });
    }
    Ok(Sample::new(values)?)
}

pub fn builtin(name: &str) -> Result<Sample> {
    match name {
        "telephone-fault" => Ok(Sample::new(TELEPHONE_FAULT.to_vec())?),
        other => Err(CliError::Config(format!("unknown built-in data set {other:?}"))),
    }
}

/// `builtin:<name>` or a file path, with 1-based positions in `drop` removed.
pub fn load_sample(source: &str, drop: &[usize]) -> Result<Sample> {
    let sample = match source.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => builtin(name)?,
        None => ingest_csv(Path::new(source))?,
    };
    if drop.is_empty() {
        return Ok(sample);
    }
    if let Some(&bad) = drop.iter().find(|&&i| i == 0 || i > sample.n()) {
        return Err(CliError::Config(format!(
            "--drop index {bad} is outside 1..={}",
            sample.n()
        )));
    }
    let positions: Vec<usize> = drop.iter().map(|i| i - 1).collect();
    Ok(sample.without(&positions)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn plain_column() {
        let f = file("1\n2\n3\n");
        assert_eq!(ingest_csv(f.path()).unwrap().observations(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn header_is_skipped() {
        let f = file("x\n4.5\n-1\n");
        assert_eq!(ingest_csv(f.path()).unwrap().observations(), &[4.5, -1.0]);
    }

    #[test]
    fn bad_cell_names_its_row() {
        let f = file("x\n1\noops\n");
        let err = ingest_csv(f.path()).unwrap_err();
        assert!(matches!(err, CliError::Parse { row: 3, .. }), "{err}");
        assert!(ingest_csv(file("").path()).is_err());
        assert!(ingest_csv(file("1,2\n").path()).is_err());
    }

    #[test]
    fn telephone_data() {
        let s = load_sample("builtin:telephone-fault", &[]).unwrap();
        assert_eq!(s.n(), 14);
        assert_eq!(s.observations().iter().sum::<f64>(), 565.0);
        let d = load_sample("builtin:telephone-fault", &[1]).unwrap();
        assert_eq!(d.n(), 13);
        assert_eq!(d.observations()[0], -135.0);
        assert!(load_sample("builtin:telephone-fault", &[15]).is_err());
    }
}
