//! Answer metrics, the analytic FLOP model and the latency profiler.

pub mod flops;
pub mod metrics;
pub mod profile;

pub use flops::{decode_step_flops, prefill_flops, FlopModelConfig};
pub use metrics::{exact_match, match_metric, normalize_answer, rouge_l, ExampleMetrics, MetricReport};
pub use profile::{profile_run, ProfileReport, ProfileRow, ProfileSystem};
