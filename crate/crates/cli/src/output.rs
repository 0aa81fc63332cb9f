//! CSV emission: one `#` comment line naming the metric, the header, then
//! one row per grid point. Floats carry 17 significant digits, lines end in LF.

use std::io::Write;
use std::path::Path;

use crate::experiments::ResultTable;

/// 17 significant digits, enough to round-trip any binary64 value.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.16e}")
    }
}

fn comment_line(table: &ResultTable) -> String {
    let metric = if table.squared {
        "squared subspace distance dist2^2"
    } else {
        "unsquared subspace distance dist2"
    };
    format!(
        "# {}: {metric}, median over {} repetitions, master seed {}",
        table.experiment.tag(),
        table.repetitions,
        table.master_seed
    )
}

pub fn write_csv<W: Write>(table: &ResultTable, out: W) -> csv::Result<()> {
    let mut out = out;
    writeln!(out, "{}", comment_line(table))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(table.header())?;
    for row in &table.rows {
        let mut rec = vec![format_value(row.sweep)];
        rec.extend(row.values.iter().map(|v| format_value(*v)));
        if let Some(t) = row.theo {
            rec.push(format_value(t));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(table: &ResultTable, path: &Path) -> csv::Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(table, std::io::BufWriter::new(file))
}
