use std::io::{self, Write};

use clap::ValueEnum;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Writes `rows` to stdout as a headed CSV table or a JSON array.
pub fn emit<T: Serialize>(format: Format, rows: &[T]) -> anyhow::Result<()> {
    let stdout = io::stdout().lock();
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(stdout);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => emit_json(rows)?,
    }
    Ok(())
}

pub fn emit_json<T: Serialize + ?Sized>(value: &T) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Writes preformatted text to stdout.
pub fn emit_text(text: &str) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())?;
    Ok(out.flush()?)
}
