//! Delimited-text count tables.
//!
//! All three schemas share one layout: `#` comment lines, a header row, then
//! comma-separated records, with double quotes protecting commas inside a
//! field. A `-` cell marks a configuration that is not part of the
//! measurement. Errors carry the 1-based line and column of the offending
//! cell.

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bell::{CglmpCounts, TermCount, CGLMP_TERMS};
use crate::detection::{Channel, CoincidenceTable};
use crate::tomography::{PhaseConfig, ProjectionSpec, QubitSetting, RawRow, PROJECTION_ORDER};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Table1,
    Table2,
    Coincidence,
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Schema::Table1),
            "table2" => Ok(Schema::Table2),
            "coincidence" => Ok(Schema::Coincidence),
            other => Err(Error::InvalidInput(format!("unknown fixture schema {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fixture {
    Table1(Table1),
    Table2(Table2),
    Coincidence(CoincidenceTable),
}

pub const TABLE1_HEADER: [&str; 7] = ["nu", "signal", "idler", "c_0_0", "c_0_pi2", "c_pi2_0", "c_pi2_pi2"];
pub const TABLE2_HEADER: [&str; 9] = ["term", "x", "y", "a", "b", "phi_s", "phi_i", "counts", "std"];
pub const COINCIDENCE_HEADER: [&str; 4] = ["signal", "idler", "counts", "accidentals"];

/// One projection row of the tomography table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub label: usize,
    pub signal: QubitSetting,
    pub idler: QubitSetting,
    /// Counts per [`PhaseConfig::column`]; `None` for `-`.
    pub cells: RawRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1 {
    pub rows: Vec<Table1Row>,
}

impl Table1 {
    pub fn raw_rows(&self) -> Vec<RawRow> {
        self.rows.iter().map(|r| r.cells).collect()
    }

    /// C: total counts of the first four projections.
    pub fn normalization(&self) -> f64 {
        self.rows
            .iter()
            .take(4)
            .flat_map(|r| r.cells.iter().flatten())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Row {
    pub term: String,
    pub x: Option<u8>,
    pub y: Option<u8>,
    pub a: u8,
    pub b: u8,
    pub phi_s: f64,
    pub phi_i: f64,
    pub counts: f64,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2 {
    pub rows: Vec<Table2Row>,
}

pub const MAX_LABEL: &str = "P_max";
pub const MIN_LABEL: &str = "P_min";

impl Table2 {
    /// Counts in inequality order plus the two references, matched by label.
    pub fn to_counts(&self) -> Result<CglmpCounts> {
        let find = |label: &str| -> Result<TermCount> {
            let row = self
                .rows
                .iter()
                .find(|r| r.term == label)
                .ok_or_else(|| Error::IncompleteData(format!("row {label} missing")))?;
            Ok(TermCount::new(row.counts, row.std))
        };
        let mut terms = [TermCount::new(0.0, None); 8];
        for (slot, t) in terms.iter_mut().zip(&CGLMP_TERMS) {
            *slot = find(&t.label())?;
        }
        let counts = CglmpCounts {
            terms,
            n_max: find(MAX_LABEL)?,
            n_min: find(MIN_LABEL)?,
        };
        counts.validate()?;
        Ok(counts)
    }
}

pub fn parse_fixture(path: &Path, schema: Schema) -> Result<Fixture> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    Ok(match schema {
        Schema::Table1 => Fixture::Table1(parse_table1(&text, &name)?),
        Schema::Table2 => Fixture::Table2(parse_table2(&text, &name)?),
        Schema::Coincidence => Fixture::Coincidence(parse_coincidence(&text, &name)?),
    })
}

pub fn read_table1(path: &Path) -> Result<Table1> {
    match parse_fixture(path, Schema::Table1)? {
        Fixture::Table1(t) => Ok(t),
        _ => unreachable!(),
    }
}

pub fn read_table2(path: &Path) -> Result<Table2> {
    match parse_fixture(path, Schema::Table2)? {
        Fixture::Table2(t) => Ok(t),
        _ => unreachable!(),
    }
}

pub fn read_coincidence(path: &Path) -> Result<CoincidenceTable> {
    match parse_fixture(path, Schema::Coincidence)? {
        Fixture::Coincidence(t) => Ok(t),
        _ => unreachable!(),
    }
}

struct Cell<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

struct Reader<'a> {
    source: &'a str,
    comments: Vec<&'a str>,
    records: Vec<(usize, csv::StringRecord)>,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str, source: &'a str, header: &[&str]) -> Result<Self> {
        // Comment lines above the header may carry directives.
        let comments = text
            .lines()
            .map(str::trim)
            .take_while(|l| l.is_empty() || l.starts_with('#'))
            .filter_map(|l| l.strip_prefix('#').map(str::trim))
            .collect();

        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        let mut seen_header = false;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(1, |p| p.line() as usize);
                parse_error(source, line, 1, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.iter().all(str::is_empty) {
                continue;
            }
            if !seen_header {
                for (col, want) in header.iter().enumerate() {
                    if rec.get(col) != Some(want) {
                        return Err(parse_error(source, line, col + 1, format!("expected header column {want:?}")));
                    }
                }
                if rec.len() != header.len() {
                    return Err(parse_error(source, line, header.len() + 1, "unexpected extra header column"));
                }
                seen_header = true;
                continue;
            }
            if rec.len() != header.len() {
                return Err(parse_error(
                    source,
                    line,
                    rec.len().min(header.len()) + 1,
                    format!("expected {} fields, found {}", header.len(), rec.len()),
                ));
            }
            records.push((line, rec));
        }
        if !seen_header {
            return Err(parse_error(source, 1, 1, "missing header row"));
        }
        Ok(Self {
            source,
            comments,
            records,
        })
    }

    fn cell(&self, rec: usize, col: usize) -> Cell<'_> {
        let (line, fields) = &self.records[rec];
        Cell {
            text: &fields[col],
            line: *line,
            column: col + 1,
        }
    }

    fn error(&self, cell: &Cell<'_>, message: impl Into<String>) -> Error {
        parse_error(self.source, cell.line, cell.column, message)
    }

    fn count(&self, cell: &Cell<'_>) -> Result<f64> {
        let v: f64 = cell
            .text
            .parse()
            .map_err(|_| self.error(cell, format!("{:?} is not a number", cell.text)))?;
        if !v.is_finite() || v < 0.0 {
            return Err(self.error(cell, format!("count {v} must be non-negative")));
        }
        Ok(v)
    }

    fn optional_count(&self, cell: &Cell<'_>) -> Result<Option<f64>> {
        if cell.text == "-" || cell.text.is_empty() {
            Ok(None)
        } else {
            self.count(cell).map(Some)
        }
    }

    fn small_int(&self, cell: &Cell<'_>, max: u8) -> Result<u8> {
        match cell.text.parse::<u8>() {
            Ok(v) if v <= max => Ok(v),
            _ => Err(self.error(cell, format!("expected an integer in 0..={max}, found {:?}", cell.text))),
        }
    }
}

/// Writes rows through the csv writer, quoting only where needed.
fn write_rows<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn parse_error(source: &str, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        column,
        message: message.into(),
    }
}

/// Parses the sixteen-row tomography table and checks which configuration
/// cells each projection fills.
pub fn parse_table1(text: &str, source: &str) -> Result<Table1> {
    let r = Reader::new(text, source, &TABLE1_HEADER)?;
    let mut rows = Vec::new();
    for rec in 0..r.records.len() {
        let label_cell = r.cell(rec, 0);
        let label: usize = label_cell
            .text
            .parse()
            .map_err(|_| r.error(&label_cell, "projection number must be a positive integer"))?;
        if label != rows.len() + 1 {
            return Err(r.error(&label_cell, format!("expected projection {}, found {label}", rows.len() + 1)));
        }
        if label > PROJECTION_ORDER.len() {
            return Err(r.error(&label_cell, "more than 16 projections"));
        }
        let setting = |col: usize| -> Result<QubitSetting> {
            let c = r.cell(rec, col);
            QubitSetting::from_symbol(c.text).ok_or_else(|| r.error(&c, format!("unknown setting {:?}", c.text)))
        };
        let signal = setting(1)?;
        let idler = setting(2)?;
        if (signal, idler) != PROJECTION_ORDER[label - 1] {
            let (s, i) = PROJECTION_ORDER[label - 1];
            return Err(r.error(
                &r.cell(rec, 1),
                format!("projection {label} must be ({}, {})", s.symbol(), i.symbol()),
            ));
        }
        let used = ProjectionSpec::new(label, signal, idler).phase_configs;
        let mut cells: RawRow = [None; 4];
        for cfg in PhaseConfig::ALL {
            let col = 3 + cfg.column();
            let c = r.cell(rec, col);
            let v = r.optional_count(&c)?;
            match (v.is_some(), used.contains(&cfg)) {
                (false, true) => return Err(r.error(&c, "dash in a configuration this projection requires")),
                (true, false) => return Err(r.error(&c, "count in a configuration this projection does not use")),
                _ => {}
            }
            cells[cfg.column()] = v;
        }
        rows.push(Table1Row {
            label,
            signal,
            idler,
            cells,
        });
    }
    if rows.len() != PROJECTION_ORDER.len() {
        return Err(parse_error(
            source,
            r.records.last().map_or(1, |(l, _)| *l),
            1,
            format!("expected 16 projections, found {}", rows.len()),
        ));
    }
    Ok(Table1 { rows })
}

/// Parses phases written as decimals or as rational multiples of π
/// (`pi/6`, `-5pi/6`, `2*pi/3`).
pub fn parse_phase(text: &str) -> Option<f64> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let t = t.replace('π', "pi");
    if let Ok(v) = t.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let (sign, body) = match t.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, t.strip_prefix('+').unwrap_or(&t)),
    };
    let (numer, denom) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().ok().filter(|d| *d != 0.0)?),
        None => (body, 1.0),
    };
    let coeff = numer.strip_suffix("pi")?;
    let coeff = coeff.strip_suffix('*').unwrap_or(coeff);
    let k = if coeff.is_empty() { 1.0 } else { coeff.parse::<f64>().ok()? };
    Some(sign * k * PI / denom)
}

/// Inverse of [`parse_phase`]: a `kpi/d` form when one reproduces the value
/// bit for bit, otherwise the shortest round-trip decimal.
pub fn format_phase(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    for d in [1u32, 2, 3, 4, 6, 12] {
        let k = (v.abs() * f64::from(d) / PI).round();
        if k == 0.0 || k > 48.0 {
            continue;
        }
        let sign = if v < 0.0 { -1.0 } else { 1.0 };
        if sign * k * PI / f64::from(d) == v {
            let num = if k == 1.0 { String::new() } else { format!("{k}") };
            let minus = if v < 0.0 { "-" } else { "" };
            return if d == 1 {
                format!("{minus}{num}pi")
            } else {
                format!("{minus}{num}pi/{d}")
            };
        }
    }
    format!("{v}")
}

pub fn parse_table2(text: &str, source: &str) -> Result<Table2> {
    let r = Reader::new(text, source, &TABLE2_HEADER)?;
    let mut rows: Vec<Table2Row> = Vec::new();
    for rec in 0..r.records.len() {
        let term_cell = r.cell(rec, 0);
        let term = term_cell.text.to_string();
        if term.is_empty() {
            return Err(r.error(&term_cell, "empty term label"));
        }
        if rows.iter().any(|row| row.term == term) {
            return Err(r.error(&term_cell, format!("term {term} listed twice")));
        }
        let setting = |col: usize| -> Result<Option<u8>> {
            let c = r.cell(rec, col);
            if c.text == "-" {
                return Ok(None);
            }
            match c.text.parse::<u8>() {
                Ok(v @ 1..=2) => Ok(Some(v)),
                _ => Err(r.error(&c, format!("setting must be 1, 2 or '-', found {:?}", c.text))),
            }
        };
        let x = setting(1)?;
        let y = setting(2)?;
        let a = r.small_int(&r.cell(rec, 3), 2)?;
        let b = r.small_int(&r.cell(rec, 4), 2)?;
        let phase = |col: usize| -> Result<f64> {
            let c = r.cell(rec, col);
            parse_phase(c.text).ok_or_else(|| r.error(&c, format!("cannot read phase {:?}", c.text)))
        };
        let phi_s = phase(5)?;
        let phi_i = phase(6)?;
        let counts = r.count(&r.cell(rec, 7))?;
        let std = r.optional_count(&r.cell(rec, 8))?;

        if let Some(t) = CGLMP_TERMS.iter().find(|t| t.label() == term) {
            if (x, y, a, b) != (Some(t.x), Some(t.y), t.a, t.b) {
                return Err(r.error(&r.cell(rec, 1), format!("settings do not match term {term}")));
            }
        } else if term != MAX_LABEL && term != MIN_LABEL {
            return Err(r.error(&term_cell, format!("unknown term label {term:?}")));
        }
        rows.push(Table2Row {
            term,
            x,
            y,
            a,
            b,
            phi_s,
            phi_i,
            counts,
            std,
        });
    }
    Ok(Table2 { rows })
}

const INTEGRATION_KEY: &str = "integration_time_s";

/// Coincidence records; the integration time comes from an optional
/// `# integration_time_s = <seconds>` comment above the header (default 1).
pub fn parse_coincidence(text: &str, source: &str) -> Result<CoincidenceTable> {
    let r = Reader::new(text, source, &COINCIDENCE_HEADER)?;
    let mut integration = 1.0;
    for c in &r.comments {
        if let Some((k, v)) = c.split_once('=') {
            if k.trim() == INTEGRATION_KEY {
                integration = v
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|t| t.is_finite() && *t > 0.0)
                    .ok_or_else(|| parse_error(source, 1, 1, format!("bad {INTEGRATION_KEY} value {:?}", v.trim())))?;
            }
        }
    }
    let mut table = CoincidenceTable::new(integration);
    for rec in 0..r.records.len() {
        let channel = |col: usize| -> Result<Channel> {
            let c = r.cell(rec, col);
            c.text.parse::<Channel>().map_err(|e| r.error(&c, e.to_string()))
        };
        let signal = channel(0)?;
        let idler = channel(1)?;
        let counts = r.count(&r.cell(rec, 2))?;
        let accidentals = r.count(&r.cell(rec, 3))?;
        table.push(signal, idler, counts, accidentals)?;
    }
    Ok(table)
}

fn cell_text(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x}"))
}

pub fn emit_table1(table: &Table1) -> String {
    write_rows(
        &TABLE1_HEADER,
        table.rows.iter().map(|row| {
            let mut f = vec![row.label.to_string(), row.signal.symbol().to_string(), row.idler.symbol().to_string()];
            f.extend(row.cells.iter().map(|v| cell_text(*v)));
            f
        }),
    )
}

pub fn emit_table2(table: &Table2) -> String {
    let setting = |v: Option<u8>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    write_rows(
        &TABLE2_HEADER,
        table.rows.iter().map(|row| {
            vec![
                row.term.clone(),
                setting(row.x),
                setting(row.y),
                row.a.to_string(),
                row.b.to_string(),
                format_phase(row.phi_s),
                format_phase(row.phi_i),
                row.counts.to_string(),
                cell_text(row.std),
            ]
        }),
    )
}

pub fn emit_coincidence(table: &CoincidenceTable) -> String {
    let body = write_rows(
        &COINCIDENCE_HEADER,
        table.records.iter().map(|r| {
            vec![
                r.signal.to_string(),
                r.idler.to_string(),
                r.counts.to_string(),
                r.accidentals.to_string(),
            ]
        }),
    );
    format!("# {INTEGRATION_KEY} = {}\n{body}", table.integration_time_s)
}
