//! File formats: CSV with a header row, pretty JSON, 16-bit binary PGM.
//! Every file is written once, through a temporary file renamed into place.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::domain::{DistributionVector, TestFunction};
use crate::Result;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Pretty-printed JSON whose floats carry 17 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// Pretty layout, floats in `{:.16e}` form (non-finite values are
/// written as `null` by the serializer before reaching the formatter).
struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

/// One column, one value per line in C node order.
pub fn vector_csv(header: &str, values: &[f64]) -> String {
    let mut out = String::with_capacity(24 * (values.len() + 1));
    out.push_str(header);
    out.push('\n');
    for v in values {
        out.push_str(&fmt_f64(*v));
        out.push('\n');
    }
    out
}

/// Rows of equal length under a comma-separated header.
pub fn table_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn test_function_csv(f: &TestFunction) -> String {
    vector_csv("value", f.values())
}

pub fn distribution_csv(w: &DistributionVector) -> String {
    vector_csv("weight", w.weights())
}

/// Binary 16-bit PGM, row-major `values` min-max normalised to
/// `0..=65535`; a constant image is all zeros.
pub fn pgm16(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    debug_assert_eq!(values.len(), width * height);
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(2 * values.len());
    for &v in values {
        let level = if range > 0.0 {
            ((v - lo) / range * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn json_floats_have_17_digits() {
        #[derive(Serialize)]
        struct R {
            x: f64,
            v: Vec<f64>,
            n: usize,
            bad: f64,
        }
        let json = to_json(&R { x: 0.1, v: vec![-2.5, 1e-300], n: 3, bad: f64::NAN }).unwrap();
        assert!(json.contains("\"x\": 1.0000000000000001e-1"), "{json}");
        assert!(json.contains("-2.5000000000000000e0"));
        assert!(json.contains("\"n\": 3"));
        assert!(json.contains("\"bad\": null"));
        let back: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
        assert_eq!(back["v"][1].as_f64(), Some(1e-300));
    }

    #[test]
    fn csv_layouts() {
        assert_eq!(vector_csv("value", &[1.0, 0.5]), "value\n1.0000000000000000e0\n5.0000000000000000e-1\n");
        let t = table_csv(&["theta", "s", "value"], vec![vec![0.0, 1.0, 2.0]]);
        assert_eq!(t.lines().count(), 2);
        assert_eq!(t.lines().nth(1).unwrap().split(',').count(), 3);
    }

    #[test]
    fn pgm_header_and_scaling() {
        let img = pgm16(2, 1, &[-1.0, 3.0]);
        let header = b"P5\n2 1\n65535\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(&img[header.len()..], &[0, 0, 0xff, 0xff]);
        let flat = pgm16(2, 2, &[0.0; 4]);
        assert!(flat[b"P5\n2 2\n65535\n".len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
