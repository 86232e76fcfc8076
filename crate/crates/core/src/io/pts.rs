//! iBUG-style `.pts` landmark files:
//!
//! ```text
//! version: 1
//! n_points: 68
//! {
//! x y
//! ...
//! }
//! ```
//!
//! Values are written with six decimal places.

use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PtsError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `{expected}`, found {found:?}")]
    MalformedHeader {
        line: usize,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: unsupported pts version {found:?}, expected 1")]
    BadVersion { line: usize, found: String },
    #[error("line {line}: invalid point count {found:?}")]
    BadCount { line: usize, found: String },
    #[error("line {line}: expected point `x y`, found {found:?}")]
    MalformedPoint { line: usize, found: String },
    #[error("line {line}: unexpected content after point list")]
    TrailingContent { line: usize },
    #[error("file ended before {what}")]
    UnexpectedEnd { what: &'static str },
    #[error("cannot write non-finite landmark value at coordinate {index}")]
    NonFinite { index: usize },
    #[error("landmark vector length {got} is not a multiple of 2")]
    OddLength { got: usize },
}

/// Parses pts text into an interleaved 2L landmark vector.
pub fn parse_pts(text: &str) -> Result<DVector<f64>, PtsError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    let (line, version_line) = lines
        .next()
        .ok_or(PtsError::UnexpectedEnd { what: "version line" })?;
    let version = version_line
        .strip_prefix("version:")
        .ok_or_else(|| PtsError::MalformedHeader {
            line,
            expected: "version: 1",
            found: version_line.to_string(),
        })?
        .trim();
    if version != "1" {
        return Err(PtsError::BadVersion {
            line,
            found: version.to_string(),
        });
    }

    let (line, count_line) = lines
        .next()
        .ok_or(PtsError::UnexpectedEnd { what: "n_points line" })?;
    let count_text = count_line
        .strip_prefix("n_points:")
        .ok_or_else(|| PtsError::MalformedHeader {
            line,
            expected: "n_points: <count>",
            found: count_line.to_string(),
        })?
        .trim();
    let count: usize = count_text.parse().map_err(|_| PtsError::BadCount {
        line,
        found: count_text.to_string(),
    })?;

    let (line, brace) = lines
        .next()
        .ok_or(PtsError::UnexpectedEnd { what: "opening brace" })?;
    if brace != "{" {
        return Err(PtsError::MalformedHeader {
            line,
            expected: "{",
            found: brace.to_string(),
        });
    }

    let mut points = DVector::zeros(2 * count);
    for i in 0..count {
        let (line, text) = lines
            .next()
            .ok_or(PtsError::UnexpectedEnd { what: "point line" })?;
        let mut fields = text.split_whitespace();
        let parse = |field: Option<&str>| -> Result<f64, PtsError> {
            field
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| PtsError::MalformedPoint {
                    line,
                    found: text.to_string(),
                })
        };
        points[2 * i] = parse(fields.next())?;
        points[2 * i + 1] = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(PtsError::MalformedPoint {
                line,
                found: text.to_string(),
            });
        }
    }

    let (line, close) = lines
        .next()
        .ok_or(PtsError::UnexpectedEnd { what: "closing brace" })?;
    if close != "}" {
        return Err(PtsError::MalformedHeader {
            line,
            expected: "}",
            found: close.to_string(),
        });
    }
    for (line, rest) in lines {
        if !rest.is_empty() {
            return Err(PtsError::TrailingContent { line });
        }
    }
    Ok(points)
}

pub fn read_pts(path: impl AsRef<Path>) -> Result<DVector<f64>, PtsError> {
    let text = std::fs::read_to_string(path)?;
    parse_pts(&text)
}

/// Formats an interleaved 2L landmark vector as pts text.
pub fn format_pts(points2d: &DVector<f64>) -> Result<String, PtsError> {
    if points2d.len() % 2 != 0 {
        return Err(PtsError::OddLength {
            got: points2d.len(),
        });
    }
    if let Some(index) = points2d.iter().position(|x| !x.is_finite()) {
        return Err(PtsError::NonFinite { index });
    }
    let count = points2d.len() / 2;
    let mut out = String::new();
    out.push_str("version: 1\n");
    out.push_str(&format!("n_points: {count}\n"));
    out.push_str("{\n");
    for i in 0..count {
        out.push_str(&format!(
            "{:.6} {:.6}\n",
            points2d[2 * i],
            points2d[2 * i + 1]
        ));
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn write_pts(points2d: &DVector<f64>, path: impl AsRef<Path>) -> Result<(), PtsError> {
    std::fs::write(path, format_pts(points2d)?)?;
    Ok(())
}
