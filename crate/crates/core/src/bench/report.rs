//! Result rows and their CSV / JSON encodings.

use std::io::Write;

use serde::Serialize;

use crate::error::{IssaError, Result};

pub const CSV_HEADER: [&str; 12] = [
    "method",
    "n",
    "c",
    "h",
    "w",
    "ph",
    "pw",
    "model_flops",
    "counted_flops",
    "affinity_elements",
    "wall_time_ns",
    "reps",
];

/// One measured configuration. `ph` and `pw` are 0 for methods without a
/// partition. FLOP and affinity counts cover the whole batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub method: String,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub ph: usize,
    pub pw: usize,
    pub model_flops: u64,
    pub counted_flops: u64,
    pub affinity_elements: u64,
    pub wall_time_ns: u64,
    pub reps: usize,
}

impl CostRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.n.to_string(),
            self.c.to_string(),
            self.h.to_string(),
            self.w.to_string(),
            self.ph.to_string(),
            self.pw.to_string(),
            self.model_flops.to_string(),
            self.counted_flops.to_string(),
            self.affinity_elements.to_string(),
            self.wall_time_ns.to_string(),
            self.reps.to_string(),
        ]
    }
}

/// A partition-ablation row: a cost row plus whether it attains the minimum
/// model cost of its table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AblateRow {
    #[serde(flatten)]
    pub cost: CostRow,
    pub optimal: bool,
}

impl AblateRow {
    fn fields(&self) -> Vec<String> {
        let mut f = self.cost.fields();
        f.push(self.optimal.to_string());
        f
    }
}

/// Output encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

fn csv_error(e: csv::Error) -> IssaError {
    IssaError::Io(std::io::Error::other(e))
}

fn write_records<W: Write>(out: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    // header written explicitly so an empty table still has one
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(&r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows).map_err(|e| IssaError::Io(e.into()))?;
    writeln!(out)?;
    Ok(())
}

pub fn write_cost_rows<W: Write>(out: W, rows: &[CostRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_records(out, &CSV_HEADER, rows.iter().map(CostRow::fields)),
        Format::Json => write_json(out, rows),
    }
}

pub fn write_ablate_rows<W: Write>(out: W, rows: &[AblateRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut header = CSV_HEADER.to_vec();
            header.push("optimal");
            write_records(out, &header, rows.iter().map(AblateRow::fields))
        }
        Format::Json => write_json(out, rows),
    }
}
