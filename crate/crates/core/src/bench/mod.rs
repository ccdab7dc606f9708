//! Metrics, Monte Carlo oracles, multiplication counts, scheme definitions,
//! sweeps and the self-check suites.

mod metrics;
mod opcount;
mod oracle;
mod scheme;
mod sweep;
pub mod verify;

pub use metrics::{mean_support_metrics, nmse, support_metrics, NmseReport, NmseVariant, SupportMetrics, NMSE_FLOOR_DB};
pub use opcount::{analytic_op_count, instrumented_op_count, NetPart, OpCount};
pub use oracle::monte_carlo_union_rows;
pub use scheme::{train_scheme, Granularity, SchemeModel, SchemeName, SchemeSpec, BASELINE_ITERS};
pub use sweep::{evaluate, mults_per_iter, run_sweep, Evaluation, SweepAxis, SweepCell, SweepResult, SweepSpec};
