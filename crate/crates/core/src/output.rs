//! Result bundles and their on-disk form.
//!
//! A bundle becomes `results.json` (scalars and provenance), one CSV per
//! sweep, one text file per matrix and, optionally, one SVG line plot per
//! sweep. Every file is written to a temporary name in the target directory
//! and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sweep {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Sweep {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                actual: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("sweep file has no header".into()))?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        let mut sweep = Sweep {
            columns,
            rows: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidInput(format!("sweep row {}: {e}", i + 1)))?;
            sweep.push(row)?;
        }
        Ok(sweep)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub kind: String,
    pub scalars: BTreeMap<String, f64>,
    pub sweeps: BTreeMap<String, Sweep>,
    pub matrices: BTreeMap<String, DMatrix<Complex64>>,
    pub provenance: Provenance,
}

impl ResultBundle {
    pub fn new(kind: &str, provenance: Provenance) -> Self {
        Self {
            kind: kind.to_string(),
            scalars: BTreeMap::new(),
            sweeps: BTreeMap::new(),
            matrices: BTreeMap::new(),
            provenance,
        }
    }

    pub fn scalar(&self, label: &str) -> Option<f64> {
        self.scalars.get(label).copied()
    }

    pub fn set_scalar(&mut self, label: &str, value: f64) {
        self.scalars.insert(label.to_string(), value);
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: &'a str,
    scalars: BTreeMap<&'a str, Option<f64>>,
    sweeps: BTreeMap<&'a str, String>,
    matrices: BTreeMap<&'a str, String>,
    provenance: &'a Provenance,
}

/// Writes `matrix` as `dim N` followed by `row col re im` lines.
pub fn format_matrix(matrix: &DMatrix<Complex64>) -> String {
    let mut out = format!("# row col re im\ndim {}\n", matrix.nrows());
    for r in 0..matrix.nrows() {
        for c in 0..matrix.ncols() {
            let z = matrix[(r, c)];
            let _ = writeln!(out, "{r} {c} {:.16e} {:.16e}", z.re, z.im);
        }
    }
    out
}

/// Reads the [`format_matrix`] layout. Entries not listed are zero.
pub fn parse_matrix(text: &str) -> Result<DMatrix<Complex64>> {
    let mut dim = None;
    let mut m = DMatrix::zeros(0, 0);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            path: "matrix".into(),
            line: i + 1,
            column: 1,
            message: msg.into(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] == "dim" {
            let n: usize = fields
                .get(1)
                .and_then(|v| v.parse().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| err("bad dimension"))?;
            dim = Some(n);
            m = DMatrix::zeros(n, n);
            continue;
        }
        let n = dim.ok_or_else(|| err("entry before 'dim' line"))?;
        if fields.len() != 4 {
            return Err(err("expected 'row col re im'"));
        }
        let r: usize = fields[0].parse().map_err(|_| err("bad row index"))?;
        let c: usize = fields[1].parse().map_err(|_| err("bad column index"))?;
        let re: f64 = fields[2].parse().map_err(|_| err("bad real part"))?;
        let im: f64 = fields[3].parse().map_err(|_| err("bad imaginary part"))?;
        if r >= n || c >= n {
            return Err(err("index outside the declared dimension"));
        }
        m[(r, c)] = Complex64::new(re, im);
    }
    if dim.is_none() {
        return Err(Error::InvalidInput("matrix file has no 'dim' line".into()));
    }
    Ok(m)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<Complex64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text).map_err(|e| match e {
        Error::Parse {
            line, column, message, ..
        } => Error::Parse {
            path: path.display().to_string(),
            line,
            column,
            message,
        },
        other => other,
    })
}

/// Polyline plot of every sweep column against the first one.
pub fn render_svg(sweep: &Sweep) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if sweep.rows.is_empty() || sweep.columns.len() < 2 {
        out.push_str("</svg>\n");
        return out;
    }
    let xs: Vec<f64> = sweep.rows.iter().map(|r| r[0]).collect();
    let ys = sweep.rows.iter().flat_map(|r| r[1..].iter().copied());
    let span = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let (x0, x1) = span(&mut xs.iter().copied());
    let (y0, y1) = span(&mut ys.into_iter());
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let _ = writeln!(
        out,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (k, name) in sweep.columns.iter().enumerate().skip(1) {
        let pts: Vec<String> = sweep
            .rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r[0]), py(r[k])))
            .collect();
        let color = COLORS[(k - 1) % COLORS.len()];
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"><title>{name}</title></polyline>",
            pts.join(" ")
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        H - 15.0,
        sweep.columns[0]
    );
    let _ = writeln!(out, "<text x=\"{PAD}\" y=\"{}\" font-size=\"11\">{y1:.4}</text>", PAD - 5.0);
    let _ = writeln!(out, "<text x=\"{PAD}\" y=\"{}\" font-size=\"11\">{y0:.4}</text>", H - PAD + 15.0);
    out.push_str("</svg>\n");
    out
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes the bundle into `dir` (created if needed) and returns the paths
/// written, `results.json` first.
pub fn emit_outputs(bundle: &ResultBundle, dir: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut sweeps = BTreeMap::new();
    let mut matrices = BTreeMap::new();

    for (name, sweep) in &bundle.sweeps {
        let file = format!("sweep_{name}.csv");
        write_atomic(&dir.join(&file), &sweep.to_csv())?;
        written.push(dir.join(&file));
        if plots {
            let svg = format!("sweep_{name}.svg");
            write_atomic(&dir.join(&svg), &render_svg(sweep))?;
            written.push(dir.join(svg));
        }
        sweeps.insert(name.as_str(), file);
    }
    for (name, m) in &bundle.matrices {
        let file = format!("matrix_{name}.txt");
        write_atomic(&dir.join(&file), &format_matrix(m))?;
        written.push(dir.join(&file));
        matrices.insert(name.as_str(), file);
    }
    let summary = Summary {
        kind: &bundle.kind,
        // non-finite values serialize as null
        scalars: bundle
            .scalars
            .iter()
            .map(|(k, &v)| (k.as_str(), v.is_finite().then_some(v)))
            .collect(),
        sweeps,
        matrices,
        provenance: &bundle.provenance,
    };
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidInput(e.to_string()))?;
    json.push('\n');
    let results = dir.join("results.json");
    write_atomic(&results, &json)?;
    written.insert(0, results);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_fn(4, 4, |r, c| Complex64::new(1.0 / (1.0 + r as f64 + c as f64), (r as f64 - c as f64) / 7.0));
        let back = parse_matrix(&format_matrix(&m)).unwrap();
        assert!((back - &m).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let s = Sweep::new(&["offset_ghz", "coincidence"]);
        assert_eq!(s.to_csv(), "offset_ghz,coincidence\n");
        assert_eq!(Sweep::from_csv(&s.to_csv()).unwrap(), s);
        assert!(render_svg(&s).ends_with("</svg>\n"));
    }

    #[test]
    fn sweep_rejects_ragged_rows() {
        let mut s = Sweep::new(&["a", "b"]);
        assert!(s.push(vec![1.0]).is_err());
        s.push(vec![1.0, 0.25]).unwrap();
        assert_eq!(Sweep::from_csv(&s.to_csv()).unwrap(), s);
    }

    #[test]
    fn emit_is_byte_stable() {
        let mut b = ResultBundle::new(
            "dip",
            Provenance {
                config_hash: "00".into(),
                seed: 1,
                tool_version: "0".into(),
            },
        );
        b.set_scalar("visibility", 0.5);
        b.set_scalar("undefined", f64::NAN);
        let mut s = Sweep::new(&["x", "y"]);
        s.push(vec![0.0, 1.0]).unwrap();
        s.push(vec![1.0, 0.5]).unwrap();
        b.sweeps.insert("dip".into(), s);
        b.matrices.insert("rho".into(), DMatrix::identity(2, 2));
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = emit_outputs(&b, d1.path(), true).unwrap();
        let f2 = emit_outputs(&b, d2.path(), true).unwrap();
        assert_eq!(f1.len(), 4);
        for (a, c) in f1.iter().zip(&f2) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(c).unwrap());
        }
        let json = std::fs::read_to_string(&f1[0]).unwrap();
        assert!(json.contains("\"undefined\": null"));
        assert!(!d1.path().join(".results.json.tmp").exists());
    }
}
