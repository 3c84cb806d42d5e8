//! CSV output with a fixed column order and full-precision floats
//! (17 significant digits), so determinism is checkable by file diff.
//! UTF-8, LF line endings, one header row; lines starting with `#` carry
//! report metadata and are skipped by the plot reader.

use std::fmt::Write as _;

/// Full-precision decimal form of a float: 17 significant digits, or the
/// fixed tokens `nan` / `inf` / `-inf`.
pub fn full(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Short fixed form for values that are not part of the determinism contract
/// (wall-clock timings).
pub fn short(x: f64) -> String {
    format!("{x:.6}")
}

/// Line-oriented CSV builder.
#[derive(Debug, Default)]
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new() -> Self {
        Csv { buf: String::new() }
    }

    pub fn comment(&mut self, text: &str) {
        let _ = writeln!(self.buf, "# {text}");
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for cell in cells {
            if !first {
                self.buf.push(',');
            }
            self.buf.push_str(cell.as_ref());
            first = false;
        }
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Parsed CSV produced by this tool: comment metadata, header, string cells.
#[derive(Debug, Clone)]
pub struct Table {
    pub meta: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> crate::Result<Table> {
        let mut meta = Vec::new();
        let mut header: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                meta.push(rest.trim().to_string());
                continue;
            }
            let cells: Vec<String> = line.split(',').map(|c| c.to_string()).collect();
            match &header {
                None => header = Some(cells),
                Some(h) => {
                    if cells.len() != h.len() {
                        return Err(crate::CliError::Config(format!(
                            "malformed CSV: row has {} cells, header has {}",
                            cells.len(),
                            h.len()
                        )));
                    }
                    rows.push(cells);
                }
            }
        }
        let header = header
            .ok_or_else(|| crate::CliError::Config("malformed CSV: missing header".into()))?;
        Ok(Table { meta, header, rows })
    }

    pub fn column(&self, name: &str) -> crate::Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| crate::CliError::Config(format!("CSV has no column \"{name}\"")))
    }

    pub fn float(&self, row: usize, col: usize) -> crate::Result<f64> {
        let cell = &self.rows[row][col];
        match cell.as_str() {
            "" => Ok(f64::NAN),
            "nan" => Ok(f64::NAN),
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| crate::CliError::Config(format!("bad float cell \"{other}\""))),
        }
    }
}
