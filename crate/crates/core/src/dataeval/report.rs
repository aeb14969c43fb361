use std::fmt::Write as _;

use super::image::ImageRGB;
use super::metrics::{psnr, ssim};
use super::patches::LrHrPair;
use super::resize::bicubic_resize;
use crate::error::Result;

pub const REPORT_HEADER: &str = "image,psnr_db,ssim,bicubic_psnr_db,bicubic_ssim";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub bicubic_psnr_db: f64,
    pub bicubic_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_db))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    pub fn mean_bicubic_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.bicubic_psnr_db))
    }

    pub fn mean_bicubic_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.bicubic_ssim))
    }

    /// One line per image, then a `mean` line.
    pub fn to_csv_string(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        let mut line = |name: &str, p: f64, q: f64, bp: f64, bq: f64| {
            let _ = writeln!(s, "{name},{p:.6},{q:.6},{bp:.6},{bq:.6}");
        };
        for r in &self.rows {
            line(&r.image, r.psnr_db, r.ssim, r.bicubic_psnr_db, r.bicubic_ssim);
        }
        line(
            "mean",
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_bicubic_psnr(),
            self.mean_bicubic_ssim(),
        );
        s
    }
}

/// Scores `upscale(lr)` and the bicubic upscale of `lr` against `hr`.
pub fn evaluate<F>(pairs: &[(String, LrHrPair)], shave: usize, mut upscale: F) -> Result<EvalReport>
where
    F: FnMut(&ImageRGB) -> Result<ImageRGB>,
{
    let mut rows = Vec::with_capacity(pairs.len());
    for (name, pair) in pairs {
        let sr = upscale(&pair.lr)?;
        let bic = bicubic_resize(&pair.lr, pair.hr.width(), pair.hr.height())?;
        rows.push(EvalRow {
            image: name.clone(),
            psnr_db: psnr(&sr, &pair.hr, shave)?,
            ssim: ssim(&sr.shave(shave)?, &pair.hr.shave(shave)?)?,
            bicubic_psnr_db: psnr(&bic, &pair.hr, shave)?,
            bicubic_ssim: ssim(&bic.shave(shave)?, &pair.hr.shave(shave)?)?,
        });
    }
    Ok(EvalReport { rows })
}
