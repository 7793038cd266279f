//! CSV dataset ingestion.
//!
//! Expected layout: a header row with a `y` column and either a single `x`
//! column or `x1`, `x2`, ... in order. Extra columns are ignored. Values must
//! parse as finite floats; failures are reported with their line number.

use std::path::Path;

use tailquant::conditional::Sample;

use crate::{CResult, Failure};

pub fn load_sample(path: &Path) -> CResult<Sample> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Failure::Data(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        .clone();

    let y_col = headers
        .iter()
        .position(|name| name == "y")
        .ok_or_else(|| Failure::Data(format!("{}: no 'y' column", path.display())))?;

    // Either one column named "x", or x1..xp in consecutive numbering.
    let mut x_cols = Vec::new();
    if let Some(i) = headers.iter().position(|name| name == "x") {
        x_cols.push(i);
    } else {
        for d in 1.. {
            match headers.iter().position(|name| name == format!("x{d}")) {
                Some(i) => x_cols.push(i),
                None => break,
            }
        }
    }
    if x_cols.is_empty() {
        return Err(Failure::Data(format!(
            "{}: no covariate column (expected 'x' or 'x1', 'x2', ...)",
            path.display()
        )));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".into());
        let field = |col: usize| -> CResult<f64> {
            let raw = record.get(col).ok_or_else(|| {
                Failure::Data(format!("{}: line {line}: missing field", path.display()))
            })?;
            let v: f64 = raw.parse().map_err(|_| {
                Failure::Data(format!(
                    "{}: line {line}: cannot parse '{raw}' as a number",
                    path.display()
                ))
            })?;
            if !v.is_finite() {
                return Err(Failure::Data(format!(
                    "{}: line {line}: non-finite value '{raw}'",
                    path.display()
                )));
            }
            Ok(v)
        };
        for &c in &x_cols {
            xs.push(field(c)?);
        }
        ys.push(field(y_col)?);
    }

    Sample::new(xs, x_cols.len(), ys)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_covariate_roundtrip() {
        let f = write_tmp("x,y\n0.1,1.0\n0.2,2.0\n0.3,-1.5\n");
        let s = load_sample(f.path()).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.dim(), 1);
        assert_eq!(s.y(2), -1.5);
        assert_eq!(s.x_row(1), &[0.2]);
    }

    #[test]
    fn numbered_covariates_and_extra_columns() {
        let f = write_tmp("id,x1,y,x2\na,0.1,1.0,5.0\nb,0.2,2.0,6.0\n");
        let s = load_sample(f.path()).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.x_row(0), &[0.1, 5.0]);
    }

    #[test]
    fn missing_y_is_a_data_error() {
        let f = write_tmp("x,z\n0.1,1.0\n");
        let err = load_sample(f.path()).unwrap_err();
        assert!(matches!(err, Failure::Data(_)));
        assert!(err.message().contains("no 'y' column"));
    }

    #[test]
    fn parse_error_reports_line_number() {
        let f = write_tmp("x,y\n0.1,1.0\n0.2,oops\n");
        let err = load_sample(f.path()).unwrap_err();
        assert!(err.message().contains("line 3"), "{}", err.message());
    }

    #[test]
    fn comments_and_blank_padding_are_skipped() {
        let f = write_tmp("x,y\n# a comment line\n0.1, 1.0\n");
        let s = load_sample(f.path()).unwrap();
        assert_eq!(s.n(), 1);
        assert_eq!(s.y(0), 1.0);
    }
}
