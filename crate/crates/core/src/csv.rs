//! Plain numeric CSV: comma-separated decimal floats written with 17
//! significant digits, so every `f64` survives a round trip.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.h() * m.w() * 24);
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        out += &cells.join(",");
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len();
        let line = line.trim_end_matches(['\n', '\r']);
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(here, format!("bad number: {e}")))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(0, "empty matrix"));
    }
    Matrix::from_rows(&rows)
}
