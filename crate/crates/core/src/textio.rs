//! Plain-text matrices and vectors, reference pairs, and graymap images.
//!
//! Matrix format: first line `rows cols`, then the entries in row-major
//! order separated by whitespace. A vector is an `n 1` matrix.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::blockspace::BlockVector;
use crate::diagnostics::ReferencePair;
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn read_matrix_tokens<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<DMatrix<f64>> {
    let mut dim = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| parse_err(format!("missing {what}")))?
            .parse::<usize>()
            .map_err(|e| parse_err(format!("bad {what}: {e}")))
    };
    let rows = dim("row count")?;
    let cols = dim("column count")?;
    let mut data = Vec::with_capacity(rows * cols);
    for idx in 0..rows * cols {
        let t = tokens
            .next()
            .ok_or_else(|| parse_err(format!("expected {} entries, found {idx}", rows * cols)))?;
        data.push(t.parse::<f64>().map_err(|e| parse_err(format!("entry {idx} `{t}`: {e}")))?);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut tokens = text.split_whitespace();
    let m = read_matrix_tokens(&mut tokens)?;
    if let Some(extra) = tokens.next() {
        return Err(parse_err(format!("trailing token `{extra}`")));
    }
    Ok(m)
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{} {}\n", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_vector(text: &str) -> Result<DVector<f64>> {
    let m = parse_matrix(text)?;
    if m.ncols() != 1 {
        return Err(parse_err(format!("vector must have one column, got {}", m.ncols())));
    }
    Ok(m.column(0).into_owned())
}

pub fn format_vector(v: &DVector<f64>) -> String {
    format_matrix(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    Ok(std::fs::write(path, format_matrix(m))?)
}

/// `x*` (flattened) followed by `λ*`, both in vector format.
pub fn format_reference(r: &ReferencePair) -> String {
    let mut s = format_vector(&r.x_star.to_flat());
    s.push_str(&format_vector(&r.lambda_star));
    s
}

/// Parses a pair written by [`format_reference`] and passes it through the
/// KKT gate for `problem`.
pub fn parse_reference(problem: &ProblemSpec, text: &str, source: &str) -> Result<ReferencePair> {
    let mut tokens = text.split_whitespace();
    let x = read_matrix_tokens(&mut tokens)?;
    let l = read_matrix_tokens(&mut tokens)?;
    if x.ncols() != 1 || l.ncols() != 1 {
        return Err(parse_err("reference vectors must have one column"));
    }
    let x = BlockVector::from_flat(&x.column(0).into_owned(), &problem.dims())?;
    ReferencePair::new(problem, x, l.column(0).into_owned(), source)
}

/// Grayscale image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Graymap {
    pub fn square(side: usize, v: &DVector<f64>) -> Result<Self> {
        if v.len() != side * side {
            return Err(Error::Dimension(format!("{} pixels for side {side}", v.len())));
        }
        Ok(Self {
            width: side,
            height: side,
            pixels: v.iter().copied().collect(),
        })
    }

    /// Binary (`P5`) encoding with maxval 255; values are clamped to `[0, 1]`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    /// Reads `P2` (plain) or `P5` (binary, 8-bit) graymaps.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut header = Vec::new();
        while header.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(parse_err("truncated graymap header"));
            }
            header.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| parse_err(e.to_string()))?);
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| parse_err(format!("graymap header `{s}`: {e}")));
        let (width, height, maxval) = (num(header[1])?, num(header[2])?, num(header[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(parse_err(format!("unsupported maxval {maxval}")));
        }
        let n = width * height;
        let scale = maxval as f64;
        let pixels = match header[0] {
            "P5" => {
                let data = bytes.get(pos + 1..pos + 1 + n).ok_or_else(|| parse_err("truncated graymap data"))?;
                data.iter().map(|&b| b as f64 / scale).collect()
            }
            "P2" => {
                let rest = std::str::from_utf8(&bytes[pos..]).map_err(|e| parse_err(e.to_string()))?;
                let vals: Vec<f64> = rest
                    .split_whitespace()
                    .take(n)
                    .map(|t| num(t).map(|v| v as f64 / scale))
                    .collect::<Result<_>>()?;
                if vals.len() != n {
                    return Err(parse_err("truncated graymap data"));
                }
                vals
            }
            other => return Err(parse_err(format!("unsupported graymap magic `{other}`"))),
        };
        Ok(Self { width, height, pixels })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.pixels.clone())
    }
}

pub fn write_pgm(path: &Path, img: &Graymap) -> Result<()> {
    Ok(std::fs::write(path, img.to_pgm())?)
}

pub fn read_pgm(path: &Path) -> Result<Graymap> {
    Graymap::from_pgm(&std::fs::read(path)?)
}

/// CSV with a header row and one row per record.
pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| parse_err(e.to_string()))
}

/// `name=value` summary lines.
pub fn summary_lines(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 0.0, 1e-17, 3.0, 7.25]);
        assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
    }

    #[test]
    fn matrix_rejects_short_input() {
        assert!(matches!(parse_matrix("2 2\n1 2 3"), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix("1 1\n1 2"), Err(Error::Parse(_))));
    }

    #[test]
    fn plain_graymap_with_comment() {
        let g = Graymap::from_pgm(b"P2\n# c\n2 1\n4\n0 4\n").unwrap();
        assert_eq!(g.pixels, vec![0.0, 1.0]);
    }

    #[test]
    fn binary_graymap_round_trip() {
        let g = Graymap {
            width: 2,
            height: 2,
            pixels: vec![0.0, 1.0, 0.2, 0.6],
        };
        let back = Graymap::from_pgm(&g.to_pgm()).unwrap();
        for (a, b) in g.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
