//! Plain-text correspondence files.
//!
//! The first non-comment line holds the calibration `fx fy cx cy skew`; each
//! following line holds one correspondence `px py X Y Z`. Blank lines and
//! lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Correspondence};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing calibration header")]
    MissingHeader,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub intrinsics: CameraIntrinsics,
    pub correspondences: Vec<Correspondence>,
}

fn numbers(line: &str, lineno: usize, count: usize) -> Result<Vec<f64>, ParseError> {
    let malformed = |message: String| ParseError::Malformed { line: lineno, message };
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != count {
        return Err(malformed(format!("expected {count} numbers, got {}", toks.len())));
    }
    toks.iter()
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(malformed(format!("invalid number '{t}'"))),
        })
        .collect()
}

pub fn parse_problem(text: &str) -> Result<Problem, ParseError> {
    let mut intrinsics = None;
    let mut correspondences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        match intrinsics {
            None => {
                let v = numbers(trimmed, lineno, 5)?;
                let k =
                    CameraIntrinsics::with_skew(v[0], v[1], v[2], v[3], v[4]).map_err(|e| ParseError::Malformed {
                        line: lineno,
                        message: e.to_string(),
                    })?;
                intrinsics = Some(k);
            }
            Some(_) => {
                let v = numbers(trimmed, lineno, 5)?;
                correspondences.push(Correspondence {
                    point: Vector3::new(v[2], v[3], v[4]),
                    pixel: Vector2::new(v[0], v[1]),
                });
            }
        }
    }
    Ok(Problem {
        intrinsics: intrinsics.ok_or(ParseError::MissingHeader)?,
        correspondences,
    })
}

pub fn read_problem(path: impl AsRef<Path>) -> Result<Problem, ParseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_problem(&text)
}

/// Inverse of [`parse_problem`]; floats use shortest round-trip formatting.
pub fn format_problem(problem: &Problem) -> String {
    let k = &problem.intrinsics;
    let mut s = String::from("# fx fy cx cy skew\n");
    let _ = writeln!(s, "{} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.skew);
    s.push_str("# px py X Y Z\n");
    for c in &problem.correspondences {
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            c.pixel.x, c.pixel.y, c.point.x, c.point.y, c.point.z
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_rows() {
        let p = parse_problem("# calib\n800 800 320 240 0\n\n100 200 1 2 5\n# c\n-3.5 1e2 0 0 4\n").unwrap();
        assert_eq!(p.intrinsics, CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).unwrap());
        assert_eq!(p.correspondences.len(), 2);
        assert_eq!(p.correspondences[1].pixel, Vector2::new(-3.5, 100.0));
        assert_eq!(p.correspondences[0].point, Vector3::new(1.0, 2.0, 5.0));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_problem("800 800 320 240 0\n1 2 3 4 5\n1 2 x 4 5\n").unwrap_err();
        assert!(matches!(err, ParseError::Malformed { line: 3, .. }), "{err}");
        let err = parse_problem("800 800 320 240 0\n1 2 3 4\n").unwrap_err();
        assert!(matches!(err, ParseError::Malformed { line: 2, .. }));
        let err = parse_problem("800 800 320 240\n").unwrap_err();
        assert!(matches!(err, ParseError::Malformed { line: 1, .. }));
        let err = parse_problem("-1 800 320 240 0\n").unwrap_err();
        assert!(matches!(err, ParseError::Malformed { line: 1, .. }));
        assert!(matches!(
            parse_problem("# only\n").unwrap_err(),
            ParseError::MissingHeader
        ));
    }

    #[test]
    fn format_round_trips() {
        let p = Problem {
            intrinsics: CameraIntrinsics::with_skew(812.25, 799.0, 321.5, 238.125, 0.5).unwrap(),
            correspondences: vec![Correspondence {
                point: Vector3::new(0.1, -0.2, 4.000000000000001),
                pixel: Vector2::new(123.456789, 1e-7),
            }],
        };
        assert_eq!(parse_problem(&format_problem(&p)).unwrap(), p);
    }
}
