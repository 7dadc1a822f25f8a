//! Headerless comma-separated numeric text.

use crate::dataio::json::format_f64;
use crate::tensor::Matrix;

/// Parse failure with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for CsvError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (line {})", self.message, self.line)
    }
}

/// Parses rows of comma-separated decimals. A single trailing newline is
/// allowed; blank lines elsewhere are errors.
pub fn parse(text: &str) -> Result<Matrix, CsvError> {
    let text = text.strip_suffix('\n').unwrap_or(text);
    let text = text.strip_suffix('\r').unwrap_or(text);
    if text.is_empty() {
        return Err(CsvError {
            line: 1,
            message: "empty array".into(),
        });
    }
    let mut cols = None;
    let mut rows = 0;
    let mut data = Vec::new();
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let err = |message: String| CsvError {
            line: line_no,
            message,
        };
        if line.trim().is_empty() {
            return Err(err("blank line".into()));
        }
        let mut n = 0;
        for field in line.split(',') {
            let field = field.trim();
            let field = field
                .strip_prefix('"')
                .and_then(|f| f.strip_suffix('"'))
                .unwrap_or(field);
            let v: f64 = field
                .parse()
                .map_err(|_| err(format!("cannot parse '{field}' as a number")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value '{field}'")));
            }
            data.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(err(format!("ragged row: {n} fields, expected {c}")));
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(Matrix::new(rows, cols.unwrap_or(0), data).expect("shape tracked while parsing"))
}

/// Renders a matrix with 17 significant digits per value.
pub fn render(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.iter_rows() {
        let fields: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
