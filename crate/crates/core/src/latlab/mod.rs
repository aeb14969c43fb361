//! Latency lab: width-configuration sampling, inference block kernels with
//! and without operator fusion, wall-clock measurement, an analytic cost
//! model, and the resulting latency dataset.

mod config;
mod dataset;
mod exec;
mod measure;

pub use config::{sample_configs, sample_unique_configs, WidthConfig, BLOCK_CONVS, BLOCK_KERNELS, WIDTH_ARITY};
pub use dataset::{
    build_dataset, host_description, meta_path, parse_csv, BuildParams, DatasetMeta, LatencyDataset, LatencyMode,
    LatencyRecord, CSV_HEADER,
};
pub use exec::{conv_pixel_shuffle_fused, BenchBlock, Fusion};
pub use measure::{analytic_latency, calibrate, measure_latencies, measure_latency, AnalyticCoeffs, MeasureParams};
