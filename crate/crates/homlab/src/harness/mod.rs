//! Sweep orchestration: configuration, per-scale pipeline, report emission
//! and the built-in selftest.

pub mod case;
pub mod config;
pub mod emit;
pub mod selftest;
pub mod sweep;

pub use case::{median_level, perforated_constraints, run_case, CaseDiagnostics, CaseResult};
pub use config::{CoefficientSpec, SweepConfig};
pub use emit::{emit, report_csv, report_gnuplot, report_json, EmitFormat};
pub use selftest::{
    manufactured_errors, plain_unit_mesh, selftest, selftest_with_hooks, SelftestHooks,
    SelftestReport,
};
pub use sweep::{run_sweep, sine_mode, SweepReport, SweepRow, TrendVerdict, TREND_FLOOR};
