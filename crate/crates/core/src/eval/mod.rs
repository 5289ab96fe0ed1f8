//! Swap quality metrics and the benchmark runner.

mod bench;
mod metrics;

pub use bench::{aggregate, cases_from_dataset, run_bench, Aggregate, BenchCase, CaseResult, EvalReport};
pub use metrics::{
    background_preservation, dilate, masked_psnr, psnr, reference_appearance, Appearance, COLOR_BINS, DEFAULT_DILATION,
    METRIC_VERSION, ORIENTATION_BINS, PSNR_CAP_DB,
};
