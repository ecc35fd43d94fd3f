//! Losses and evaluation metrics.

pub mod losses;
pub mod metrics;
pub mod perceptual;

pub use losses::{l1_loss, ms_ssim, ms_ssim_loss, total_loss, LossWeights, MS_SSIM_WEIGHTS};
pub use metrics::{entropy, metric_line, metric_table, mse, psnr, ssim, MetricRow};
pub use perceptual::PerceptualExtractor;
