//! Matrix Market reader and writer.
//!
//! Operators are written in `array` format with `symmetric` (real) or
//! `hermitian` (complex) symmetry, storing the lower triangle column by
//! column. Frames are written as `array ... general`. Values carry 17
//! significant digits so a write/read cycle is exact. The reader accepts
//! both `array` and `coordinate` layouts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::linalg::{Frame, HermitianOperator};
use crate::{AceError, Field, FieldTag, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    General,
    Symmetric,
    Hermitian,
    SkewSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Array,
    Coordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Real,
    Integer,
    Complex,
    Pattern,
}

#[derive(Debug, Clone, Copy)]
struct Header {
    layout: Layout,
    kind: ValueKind,
    symmetry: Symmetry,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_entry<T: Field>(z: T) -> String {
    match T::TAG {
        FieldTag::Real => fmt_f64(z.real()),
        FieldTag::Complex => format!("{} {}", fmt_f64(z.real()), fmt_f64(z.imaginary())),
    }
}

pub fn write_matrix<T: Field, W: Write>(w: &mut W, m: &DMatrix<T>, symmetry: Symmetry) -> Result<()> {
    let kind = match T::TAG {
        FieldTag::Real => "real",
        FieldTag::Complex => "complex",
    };
    let sym = match symmetry {
        Symmetry::General => "general",
        Symmetry::Symmetric => "symmetric",
        Symmetry::Hermitian => "hermitian",
        Symmetry::SkewSymmetric => {
            return Err(AceError::InvalidParameter("skew-symmetric output is not supported".into()))
        }
    };
    writeln!(w, "%%MatrixMarket matrix array {kind} {sym}")?;
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for j in 0..m.ncols() {
        let start = if symmetry == Symmetry::General { 0 } else { j };
        for i in start..m.nrows() {
            writeln!(w, "{}", fmt_entry(m[(i, j)]))?;
        }
    }
    Ok(())
}

fn parse_header(line: &str) -> Result<Header> {
    let tokens: Vec<String> = line.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(AceError::Parse(format!("bad Matrix Market header: {line}")));
    }
    let layout = match tokens[2].as_str() {
        "array" => Layout::Array,
        "coordinate" => Layout::Coordinate,
        other => return Err(AceError::Parse(format!("unsupported layout {other}"))),
    };
    let kind = match tokens[3].as_str() {
        "real" | "double" => ValueKind::Real,
        "integer" => ValueKind::Integer,
        "complex" => ValueKind::Complex,
        "pattern" => ValueKind::Pattern,
        other => return Err(AceError::Parse(format!("unsupported value type {other}"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "hermitian" => Symmetry::Hermitian,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        other => return Err(AceError::Parse(format!("unsupported symmetry {other}"))),
    };
    if layout == Layout::Array && kind == ValueKind::Pattern {
        return Err(AceError::Parse("pattern values require coordinate layout".into()));
    }
    Ok(Header { layout, kind, symmetry })
}

fn parse_f64(tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| AceError::Parse("missing value".into()))?;
    tok.parse::<f64>().map_err(|e| AceError::Parse(format!("bad number {tok:?}: {e}")))
}

fn parse_usize(tok: Option<&str>) -> Result<usize> {
    let tok = tok.ok_or_else(|| AceError::Parse("missing integer".into()))?;
    tok.parse::<usize>().map_err(|e| AceError::Parse(format!("bad integer {tok:?}: {e}")))
}

fn parse_value<T: Field>(kind: ValueKind, toks: &mut std::str::SplitWhitespace<'_>) -> Result<T> {
    match kind {
        ValueKind::Pattern => Ok(T::one()),
        ValueKind::Real | ValueKind::Integer => Ok(T::from_real(parse_f64(toks.next())?)),
        ValueKind::Complex => {
            let re = parse_f64(toks.next())?;
            let im = parse_f64(toks.next())?;
            if T::TAG == FieldTag::Real && im != 0.0 {
                return Err(AceError::Parse("complex entry in a real matrix".into()));
            }
            Ok(T::from_parts(re, im))
        }
    }
}

/// Reads the field tag declared in a Matrix Market header.
pub fn peek_field(path: &Path) -> Result<FieldTag> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    Ok(match parse_header(line.trim())?.kind {
        ValueKind::Complex => FieldTag::Complex,
        _ => FieldTag::Real,
    })
}

pub fn read_matrix<T: Field, R: BufRead>(r: R) -> Result<DMatrix<T>> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| AceError::Parse("empty input".into()))??;
    let header = parse_header(first.trim())?;
    let mut data = lines.filter_map(|l| match l {
        Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('%') => None,
        other => Some(other),
    });
    let size_line = data.next().ok_or_else(|| AceError::Parse("missing size line".into()))??;
    let mut st = size_line.split_whitespace();
    let nrows = parse_usize(st.next())?;
    let ncols = parse_usize(st.next())?;
    if header.symmetry != Symmetry::General && nrows != ncols {
        return Err(AceError::Parse("symmetric storage requires a square matrix".into()));
    }
    let mut m = DMatrix::<T>::zeros(nrows, ncols);
    let mirror = |m: &mut DMatrix<T>, i: usize, j: usize, v: T| {
        m[(i, j)] = v;
        if i != j && header.symmetry != Symmetry::General {
            m[(j, i)] = match header.symmetry {
                Symmetry::General | Symmetry::Symmetric => v,
                Symmetry::Hermitian => v.conjugate(),
                Symmetry::SkewSymmetric => -v,
            };
        }
    };
    match header.layout {
        Layout::Array => {
            let mut positions = Vec::new();
            for j in 0..ncols {
                let start = match header.symmetry {
                    Symmetry::General => 0,
                    Symmetry::SkewSymmetric => j + 1,
                    _ => j,
                };
                positions.extend((start..nrows).map(|i| (i, j)));
            }
            for (i, j) in positions {
                let line = data.next().ok_or_else(|| AceError::Parse("truncated array data".into()))??;
                let mut toks = line.split_whitespace();
                let v = parse_value::<T>(header.kind, &mut toks)?;
                mirror(&mut m, i, j, v);
            }
        }
        Layout::Coordinate => {
            let nnz = parse_usize(st.next())?;
            for _ in 0..nnz {
                let line = data.next().ok_or_else(|| AceError::Parse("truncated coordinate data".into()))??;
                let mut toks = line.split_whitespace();
                let i = parse_usize(toks.next())?;
                let j = parse_usize(toks.next())?;
                if i == 0 || j == 0 || i > nrows || j > ncols {
                    return Err(AceError::Parse(format!("entry ({i},{j}) out of range")));
                }
                let v = parse_value::<T>(header.kind, &mut toks)?;
                mirror(&mut m, i - 1, j - 1, v);
            }
        }
    }
    Ok(m)
}

pub fn write_operator<T: Field>(path: &Path, op: &HermitianOperator<T>) -> Result<()> {
    let sym = match T::TAG {
        FieldTag::Real => Symmetry::Symmetric,
        FieldTag::Complex => Symmetry::Hermitian,
    };
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, op.matrix(), sym)?;
    w.flush()?;
    Ok(())
}

pub fn read_operator<T: Field>(path: &Path) -> Result<HermitianOperator<T>> {
    HermitianOperator::new(read_matrix(BufReader::new(File::open(path)?))?)
}

pub fn write_frame<T: Field>(path: &Path, frame: &Frame<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, frame.columns(), Symmetry::General)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<T: Field>(path: &Path) -> Result<Frame<T>> {
    Frame::new(read_matrix(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use proptest::prelude::*;

    fn roundtrip<T: Field>(m: &DMatrix<T>, sym: Symmetry) -> DMatrix<T> {
        let mut buf = Vec::new();
        write_matrix(&mut buf, m, sym).unwrap();
        read_matrix(&buf[..]).unwrap()
    }

    #[test]
    fn reads_coordinate_symmetric() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 3\n1 1 2.0\n3 1 -1.5\n2 2 4\n";
        let m: DMatrix<f64> = read_matrix(text.as_bytes()).unwrap();
        assert_eq!(m[(0, 2)], -1.5);
        assert_eq!(m[(2, 0)], -1.5);
        assert_eq!(m[(1, 1)], 4.0);
    }

    #[test]
    fn reads_coordinate_hermitian() {
        let text = "%%MatrixMarket matrix coordinate complex hermitian\n2 2 2\n1 1 1 0\n2 1 0 2\n";
        let m: DMatrix<C64> = read_matrix(text.as_bytes()).unwrap();
        assert_eq!(m[(1, 0)], C64::new(0.0, 2.0));
        assert_eq!(m[(0, 1)], C64::new(0.0, -2.0));
    }

    #[test]
    fn rejects_complex_into_real_and_bad_headers() {
        let text = "%%MatrixMarket matrix array complex general\n1 1\n1 1\n";
        assert!(read_matrix::<f64, _>(text.as_bytes()).is_err());
        assert!(read_matrix::<f64, _>("%%Matrix bad\n".as_bytes()).is_err());
        assert!(read_matrix::<f64, _>("%%MatrixMarket matrix array real general\n2 2\n1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn array_roundtrip_is_exact(vals in prop::collection::vec(-1e300f64..1e300, 12)) {
            let m = DMatrix::from_row_slice(4, 3, &vals);
            prop_assert_eq!(roundtrip(&m, Symmetry::General), m);
        }

        #[test]
        fn hermitian_roundtrip_is_exact(vals in prop::collection::vec(-10.0f64..10.0, 18)) {
            let raw = DMatrix::from_fn(3, 3, |i, j| C64::new(vals[3 * i + j], vals[9 + 3 * i + j]));
            let h = HermitianOperator::new(&raw + raw.adjoint()).unwrap();
            prop_assert_eq!(&roundtrip(h.matrix(), Symmetry::Hermitian), h.matrix());
        }
    }
}
