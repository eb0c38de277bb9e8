//! Benchmark harness: size sweeps, partition ablations and the invariant
//! suite.

mod report;
mod run;
mod verify;

pub use report::{write_ablate_rows, write_cost_rows, AblateRow, CostRow, Format, CSV_HEADER};
pub use run::{
    ablate, parse_methods, parse_pair, parse_pairs, parse_partitions, plan, run_one, sweep,
    BenchConfig, Partitions, RunSpec,
};
pub use verify::{support_pattern, verify, Check};
