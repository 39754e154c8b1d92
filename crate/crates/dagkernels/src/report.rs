//! Deterministic CSV emission.
//!
//! Floats are written in Rust's shortest round-trip form, so identical
//! numbers always give identical bytes; the `seconds` column of experiment
//! CSVs is fixed at `0.000` to keep reruns byte-identical (wall-clock
//! timings go to stderr instead).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> std::io::Result<CsvWriter> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = CsvWriter {
            out: BufWriter::new(File::create(path)?),
        };
        w.write_row(header)?;
        Ok(w)
    }

    pub fn write_row<S: AsRef<str>>(&mut self, fields: &[S]) -> std::io::Result<()> {
        let mut first = true;
        for f in fields {
            if !first {
                self.out.write_all(b",")?;
            }
            first = false;
            self.out.write_all(escape_field(f.as_ref()).as_bytes())?;
        }
        self.out.write_all(b"\n")
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

fn escape_field(f: &str) -> String {
    if f.contains(',') || f.contains('"') || f.contains('\n') {
        format!("\"{}\"", f.replace('"', "\"\""))
    } else {
        f.to_string()
    }
}

/// Shortest round-trip float formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_escaped_rows() {
        let dir = std::env::temp_dir().join("dagkernels-report-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        let mut w = CsvWriter::create(&path, &["a", "b"]).unwrap();
        w.write_row(&["x,y", "plain"]).unwrap();
        w.write_row(&[fmt_f64(0.1), fmt_f64(1.0 / 3.0)]).unwrap();
        w.finish().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "a,b\n\"x,y\",plain\n0.1,0.3333333333333333\n"
        );
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, std::f64::consts::PI] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }
}
