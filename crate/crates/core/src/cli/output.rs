//! CSV/JSON emission and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// Significant digits of every number written to CSV.
pub const SIGNIFICANT_DIGITS: usize = 12;

/// `%.12g`-style formatting: fixed notation for decimal exponents in
/// `[-4, 12)`, scientific otherwise, trailing zeros removed.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.to_string()
    }
}

/// One CSV cell.
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => fmt_num(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

/// In-memory CSV table with a leading `#` provenance comment.
pub struct Csv {
    buf: String,
    columns: usize,
}

impl Csv {
    pub fn new(comment: &str, header: &[&str]) -> Self {
        let mut buf = String::new();
        writeln!(buf, "# {comment}").unwrap();
        writeln!(buf, "{}", header.join(",")).unwrap();
        Self {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.columns, "row width must match the header");
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        writeln!(self.buf, "{}", line.join(",")).unwrap();
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}

/// Writes through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Collects the files written by one command.
pub struct OutputDir {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn csv(&mut self, name: &str, table: &Csv) -> Result<()> {
        write_atomic(&self.dir.join(name), table.as_str().as_bytes())?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.dir.join(name), value)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "secure-isac-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct SeedSet {
    pub run: u64,
    pub channels: u64,
    pub symbols: u64,
    pub prior_samples: u64,
    pub noise: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub format: &'static str,
    pub format_version: u32,
    pub command: String,
    pub config_hash: String,
    pub config_schema_version: u32,
    pub seeds: SeedSet,
    pub crate_version: &'static str,
    pub factor_format_version: u32,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub exit_code: i32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(2.0 / 3.0 * 1e-7), "6.66666666667e-8");
        assert_eq!(fmt_num(123456789012.0), "123456789012");
        assert_eq!(fmt_num(1234567890123.0), "1.23456789012e12");
        assert_eq!(fmt_num(1e-4), "0.0001");
        assert_eq!(fmt_num(1e-5), "1e-5");
        assert_eq!(fmt_num(-90.0), "-90");
        assert_eq!(fmt_num(f64::NAN), "nan");
        assert_eq!(fmt_num(-1e-300), "-1e-300");
    }

    #[test]
    fn fmt_num_round_trips_to_twelve_digits() {
        for &x in &[std::f64::consts::PI, -1.23456789e-9, 9.87654321e15, 4.5e-3] {
            let back: f64 = fmt_num(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-11, "{x} -> {}", fmt_num(x));
        }
    }

    #[test]
    fn csv_layout() {
        let mut t = Csv::new("run abc", &["a", "b", "c"]);
        t.row(vec![1.5.into(), Cell::Empty, "x".into()]);
        assert_eq!(t.as_str(), "# run abc\na,b,c\n1.5,,x\n");
    }
}
