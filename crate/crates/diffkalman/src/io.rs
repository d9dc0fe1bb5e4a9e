//! Single-column numeric series files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFile {
    pub values: Vec<f64>,
    pub header: Option<String>,
    pub source: Option<PathBuf>,
}

/// Parses one value per line. Blank lines and lines starting with `#` are
/// ignored; a trailing comma (single-column CSV) is accepted. With
/// `header`, the first non-blank line is kept as the column name.
pub fn parse_series(text: &str, header: bool) -> Result<SeriesFile> {
    let mut values = Vec::new();
    let mut name = None;
    let mut want_header = header;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let field = raw.trim();
        if field.is_empty() || field.starts_with('#') {
            continue;
        }
        let field = field.strip_suffix(',').unwrap_or(field).trim();
        if want_header {
            name = Some(field.trim_matches('"').to_string());
            want_header = false;
            continue;
        }
        let v: f64 = field.parse().map_err(|_| Error::Parse {
            line,
            text: field.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                line,
                text: field.to_string(),
            });
        }
        values.push(v);
    }
    if values.len() < 2 {
        return Err(Error::TooShort(values.len()));
    }
    Ok(SeriesFile {
        values,
        header: name,
        source: None,
    })
}

pub fn load_series(path: &Path, header: bool) -> Result<SeriesFile> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut series = parse_series(&text, header)?;
    series.source = Some(path.to_path_buf());
    Ok(series)
}

/// One value per line in shortest round-trip form.
pub fn format_series(values: &[f64], header: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(h);
        out.push('\n');
    }
    for v in values {
        writeln!(out, "{v:?}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_values() {
        let s = parse_series("1.0\n2.0\n3.0", false).unwrap();
        assert_eq!(s.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.header, None);
    }

    #[test]
    fn header_is_skipped_only_when_asked() {
        let s = parse_series("value\n1\n2\n", true).unwrap();
        assert_eq!(s.values, vec![1.0, 2.0]);
        assert_eq!(s.header.as_deref(), Some("value"));
        assert!(matches!(parse_series("value\n1\n2\n", false), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(parse_series("1\nabc\n3", false), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_series("1\n\n2\nNaN", false), Err(Error::NonFiniteValue { line: 4, .. })));
        assert!(matches!(parse_series("1\ninf\n", false), Err(Error::NonFiniteValue { line: 2, .. })));
        // decimal commas are not numbers
        assert!(matches!(parse_series("1\n2,5\n", false), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_column_comments_and_blank_lines() {
        let s = parse_series("\"y\",\r\n# note\n1.5,\n\n-2e-3,\n", true).unwrap();
        assert_eq!(s.values, vec![1.5, -2e-3]);
        assert_eq!(s.header.as_deref(), Some("y"));
    }

    #[test]
    fn needs_two_observations() {
        assert!(matches!(parse_series("1\n", false), Err(Error::TooShort(1))));
    }

    #[test]
    fn round_trips_exactly() {
        let v = vec![0.1, -1.0 / 3.0, 1e-300, 123456789.12345679, f64::MIN_POSITIVE];
        let s = parse_series(&format_series(&v, Some("y")), true).unwrap();
        assert_eq!(s.values, v);
    }
}
