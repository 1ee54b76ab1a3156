use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::io::{fmt17, write_field, FieldData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Binary,
    Csv,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(Self::Binary),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::Config(format!("unknown export format {s:?}"))),
        }
    }
}

/// Node coordinates for csv rows: (r, θ, x₁, x₂).
pub trait NodeCoords {
    fn n_radial(&self) -> usize;
    fn n_angular(&self) -> usize;
    fn coords(&self, k: usize) -> [f64; 4];
}

impl NodeCoords for Grid2D {
    fn n_radial(&self) -> usize {
        Grid2D::n_radial(self)
    }
    fn n_angular(&self) -> usize {
        Grid2D::n_angular(self)
    }
    fn coords(&self, k: usize) -> [f64; 4] {
        let j = k % Grid2D::n_angular(self);
        [self.radius(k), self.theta()[j], self.x1()[k], self.x2()[k]]
    }
}

pub fn write_csv_to<W: Write, G: NodeCoords + ?Sized>(mut w: W, grid: &G, data: &FieldData) -> Result<()> {
    let n = grid.n_radial() * grid.n_angular();
    if data.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: data.len() });
    }
    match data {
        FieldData::Real(_) => writeln!(w, "r,theta,x1,x2,value")?,
        FieldData::Complex(_) => writeln!(w, "r,theta,x1,x2,re,im")?,
    }
    for k in 0..n {
        let c = grid.coords(k);
        let vals = match data {
            FieldData::Real(v) => fmt17(v[k]),
            FieldData::Complex(v) => format!("{},{}", fmt17(v[k].re), fmt17(v[k].im)),
        };
        writeln!(w, "{},{},{},{},{vals}", fmt17(c[0]), fmt17(c[1]), fmt17(c[2]), fmt17(c[3]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_field<G: NodeCoords + ?Sized>(grid: &G, data: &FieldData, path: &Path, format: ExportFormat) -> Result<()> {
    match format {
        ExportFormat::Binary => write_field(path, grid.n_radial(), grid.n_angular(), data),
        ExportFormat::Csv => {
            let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            write_csv_to(BufWriter::new(f), grid, data)
        }
    }
}

fn collect_nulls(v: &Value, path: &str, out: &mut Vec<String>) {
    match v {
        Value::Null => out.push(path.to_string()),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| collect_nulls(x, &format!("{path}[{i}]"), out)),
        Value::Object(m) => m.iter().for_each(|(k, x)| collect_nulls(x, &if path.is_empty() { k.clone() } else { format!("{path}.{k}") }, out)),
        _ => {}
    }
}

/// JSON with non-finite numbers encoded as null; a top-level `null_fields`
/// lists every null (non-finite or absent value).
pub fn strict_json<T: Serialize>(v: &T) -> Result<Value> {
    let mut value = serde_json::to_value(v)?;
    let mut nulls = Vec::new();
    collect_nulls(&value, "", &mut nulls);
    match &mut value {
        Value::Object(m) => {
            m.insert("null_fields".into(), Value::from(nulls));
            Ok(value)
        }
        _ => Err(Error::Format("top-level JSON document must be an object".into())),
    }
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&strict_json(v)?)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    struct Tiny;

    impl NodeCoords for Tiny {
        fn n_radial(&self) -> usize {
            2
        }
        fn n_angular(&self) -> usize {
            2
        }
        fn coords(&self, k: usize) -> [f64; 4] {
            let (r, t) = (1.0 + (k / 2) as f64, std::f64::consts::PI * (k % 2) as f64);
            [r, t, r * t.cos(), r * t.sin()]
        }
    }

    #[test]
    fn csv_of_two_by_two_has_header_and_four_rows() {
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &Tiny, &FieldData::Real(vec![0.1, 0.2, 1.0 / 3.0, f64::NAN])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "r,theta,x1,x2,value");
        let third: f64 = lines[3].split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(third, 1.0 / 3.0);
        assert!(lines[4].ends_with(",null"));
    }

    #[test]
    fn complex_csv_has_re_and_im() {
        let mut buf = Vec::new();
        let v = vec![Complex64::new(1.0, -2.0); 4];
        write_csv_to(&mut buf, &Tiny, &FieldData::Complex(v)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("r,theta,x1,x2,re,im\n"));
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 6);
    }

    #[test]
    fn binary_export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let v = vec![0.1, -0.0, 1e-300, 7.0];
        export_field(&Tiny, &FieldData::Real(v.clone()), &p, ExportFormat::Binary).unwrap();
        match crate::io::read_field(&p).unwrap().data {
            FieldData::Real(w) => assert!(v.iter().zip(&w).all(|(a, b)| a.to_bits() == b.to_bits())),
            _ => panic!("complex"),
        }
    }

    #[test]
    fn nan_becomes_flagged_null() {
        #[derive(Serialize)]
        struct R {
            a: f64,
            b: Vec<f64>,
        }
        let v = strict_json(&R { a: f64::NAN, b: vec![1.0, f64::INFINITY] }).unwrap();
        assert!(v["a"].is_null());
        assert_eq!(v["null_fields"], serde_json::json!(["a", "b[1]"]));
        let text = serde_json::to_string(&v).unwrap();
        assert!(!text.contains("NaN") && !text.contains("inf"));
    }
}
