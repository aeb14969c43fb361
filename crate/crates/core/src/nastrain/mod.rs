//! Joint search of weights, channel masks and block paths under the SR and
//! speed losses, followed by weight-only fine-tuning of the extracted model.

mod config;
mod finetune;
mod loss;
mod search;

pub use config::{lr_factor, SearchConfig};
pub use finetune::{finetune, mean_patch_psnr, upscale, FinetuneOutcome, FinetuneRow};
pub use loss::{hinge, speed_loss, total_loss};
pub use search::{
    epoch_patches, group_lrs, history_csv, history_header, parse_history_csv, run_search, search_step, warmup,
    SearchState, StepStats, TrainState,
};
