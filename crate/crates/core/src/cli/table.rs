//! CSV tables of reals with a `#` provenance block.
//!
//! Values are written with 17 significant digits so every finite `f64`
//! reads back bit for bit; undefined values are empty cells.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Revision string baked in at build time, or `unknown`.
pub fn revision() -> &'static str {
    option_env!("QE_BUILD_REVISION").unwrap_or("unknown")
}

/// Header lines stamped on every emitted table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub tool: String,
    pub revision: String,
    pub config_sha256: String,
    /// Seconds since the Unix epoch; the only line allowed to vary between
    /// identical runs.
    pub created_unix: u64,
}

impl Provenance {
    pub fn new(config_sha256: &str) -> Self {
        Provenance {
            tool: format!("qengine {TOOL_VERSION}"),
            revision: revision().to_string(),
            config_sha256: config_sha256.to_string(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    fn lines(&self) -> [String; 4] {
        [
            format!("# tool: {}", self.tool),
            format!("# revision: {}", self.revision),
            format!("# config-sha256: {}", self.config_sha256),
            format!("# created-unix: {}", self.created_unix),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    /// Row-major cells; `None` is an undefined value.
    pub rows: Vec<Vec<Option<f64>>>,
    /// Free-form `#` lines written after the provenance block.
    pub notes: Vec<String>,
    pub provenance: Option<Provenance>,
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

impl ResultTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        ResultTable {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
            provenance: None,
        }
    }

    /// Appends a row; non-finite values become undefined cells.
    pub fn push(&mut self, row: Vec<Option<f64>>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header");
        self.rows.push(row.into_iter().map(|v| v.filter(|x| x.is_finite())).collect());
    }

    pub fn push_values(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| Some(v)).collect());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn get(&self, row: usize, name: &str) -> Option<f64> {
        self.column_index(name).and_then(|i| self.rows.get(row).and_then(|r| r[i]))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        if let Some(p) = &self.provenance {
            for line in p.lines() {
                writeln!(out, "{line}")?;
            }
        }
        for note in &self.notes {
            writeln!(out, "# {note}")?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.map_or(String::new(), format_value)))?;
        }
        w.flush()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io)?;
        let mut buf = BufWriter::new(file);
        self.write_to(&mut buf).map_err(io)?;
        buf.flush().map_err(io)
    }

    /// Parses a table. `path` is used in error messages only.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut provenance = [None, None, None, None];
        let mut notes = Vec::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let body = line[1..].trim_start();
            let field = |prefix: &str| body.strip_prefix(prefix).map(str::to_string);
            if let Some(v) = field("tool: ") {
                provenance[0] = Some(v);
            } else if let Some(v) = field("revision: ") {
                provenance[1] = Some(v);
            } else if let Some(v) = field("config-sha256: ") {
                provenance[2] = Some(v);
            } else if let Some(v) = field("created-unix: ") {
                provenance[3] = Some(v);
            } else {
                notes.push(body.to_string());
            }
        }
        let provenance = match provenance {
            [Some(tool), Some(revision), Some(config_sha256), Some(created)] => Some(Provenance {
                tool,
                revision,
                config_sha256,
                created_unix: created.parse().map_err(|_| err(1, format!("bad timestamp `{created}`")))?,
            }),
            _ => None,
        };

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(text.as_bytes());
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if columns.is_empty() || columns.iter().all(String::is_empty) {
            return Err(err(1, "missing header line".into()));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                let message = match e.kind() {
                    csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                        format!("expected {expected_len} columns, found {len}")
                    }
                    _ => e.to_string(),
                };
                err(line, message)
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let row = record
                .iter()
                .enumerate()
                .map(|(i, cell)| {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>()
                            .map(Some)
                            .map_err(|_| err(line, format!("column `{}`: `{cell}` is not a number", columns[i])))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(ResultTable {
            columns,
            rows,
            notes,
            provenance,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ResultTable::parse(&text, path)
    }
}
