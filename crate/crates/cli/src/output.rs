//! Tables rendered as CSV or as one JSON document.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde_json::{json, Map, Value};

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Significant digits of every printed number.
const DIGITS: usize = 12;

/// `x` with 12 significant digits, shortest form, `%g` style.
pub fn format_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS as i32).contains(&exp) {
        let decimals = (DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// JSON number rounded to 12 significant digits.
pub fn num(x: f64) -> Value {
    let rounded: f64 = format_num(x).parse().unwrap_or(x);
    serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
}

pub enum Cell {
    Num(f64),
    Int(usize),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => format_num(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => num(*x),
            Cell::Int(n) => json!(n),
            Cell::Bool(b) => json!(b),
        }
    }
}

#[derive(Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    fn json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .header
                        .iter()
                        .cloned()
                        .zip(row.iter().map(Cell::json))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// Everything one command reports. CSV carries only the table; warnings go
/// to stderr.
pub struct Document {
    pub config: Value,
    pub table: Table,
    pub fits: Map<String, Value>,
    pub warnings: Vec<String>,
}

impl Document {
    pub fn new(config: Value) -> Self {
        Self {
            config,
            table: Table::default(),
            fits: Map::new(),
            warnings: Vec::new(),
        }
    }

    pub fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }

    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.table.csv(),
            Format::Json => {
                let doc = json!({
                    "config": self.config,
                    "results": self.table.json(),
                    "fits": self.fits,
                    "warnings": self.warnings,
                });
                let mut s = serde_json::to_string_pretty(&doc).expect("serializable document");
                s.push('\n');
                s
            }
        }
    }

    pub fn emit(&self, format: Format, path: Option<&Path>) -> Result<(), Failure> {
        let text = self.render(format);
        if format == Format::Csv {
            for w in &self.warnings {
                eprintln!("warning: {w}");
            }
        }
        let written = match path {
            Some(p) => std::fs::write(p, text),
            None => std::io::stdout().lock().write_all(text.as_bytes()),
        };
        written.map_err(|e| Failure::Usage(format!("cannot write output: {e}")))
    }
}
