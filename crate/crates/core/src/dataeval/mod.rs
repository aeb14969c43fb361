//! Image I/O, LR/HR patch generation, and Y-channel quality metrics.

mod corpus;
mod image;
mod metrics;
mod patches;
mod report;
mod resize;

pub use corpus::{synthetic_corpus, synthetic_image};
pub use image::{images_to_tensor, list_pngs, load_png, save_png, tensor_to_image, ImageRGB};
pub use metrics::{psnr, psnr_y, rgb_to_y, ssim, ssim_y};
pub use patches::{patches_to_tensors, sample_from_pair, sample_patches, LrHrPair, PatchPair};
pub use report::{evaluate, EvalReport, EvalRow, REPORT_HEADER};
pub use resize::{bicubic_resize, catmull_rom, resize_plane};
