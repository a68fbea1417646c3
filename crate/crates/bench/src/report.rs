//! Row output in CSV or JSON. Column order is the struct field order.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;

use crate::{BenchError, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "QUANCURRENT_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub fn render<T: Serialize>(rows: &[T], format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| BenchError::Output(e.to_string()))?;
            }
            w.into_inner().map_err(|e| BenchError::Output(e.to_string()))
        }
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(rows).map_err(|e| BenchError::Output(e.to_string()))?;
            v.push(b'\n');
            Ok(v)
        }
    }
}

/// Where output goes: the explicit path, else `<$QUANCURRENT_OUT_DIR>/<stem>.<ext>`,
/// else standard output (`None`).
pub fn destination(out: Option<&Path>, stem: &str, format: Format) -> Option<PathBuf> {
    if let Some(p) = out {
        return Some(p.to_path_buf());
    }
    let dir = std::env::var_os(OUT_DIR_ENV)?;
    Some(PathBuf::from(dir).join(format!("{stem}.{}", format.extension())))
}

pub fn emit<T: Serialize>(rows: &[T], format: Format, out: Option<&Path>, stem: &str) -> Result<()> {
    let bytes = render(rows, format)?;
    match destination(out, stem, format) {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, bytes)?;
        }
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: u32,
        b: &'static str,
    }

    #[test]
    fn csv_has_header_in_field_order() {
        let out = render(&[Row { a: 1, b: "x" }, Row { a: 2, b: "y" }], Format::Csv).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a,b\n1,x\n2,y\n");
    }

    #[test]
    fn json_is_an_array() {
        let out = render(&[Row { a: 1, b: "x" }], Format::Json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v[0]["a"], 1);
    }

    #[test]
    fn explicit_path_wins() {
        let p = Path::new("/tmp/x.csv");
        assert_eq!(destination(Some(p), "s", Format::Csv), Some(p.to_path_buf()));
    }
}
