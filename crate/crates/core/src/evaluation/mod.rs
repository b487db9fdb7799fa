//! Image-quality metrics, single-channel removal sweeps, per-channel rate
//! accounting and the rate/degradation correlation report.

mod metrics;
mod stats;

pub use metrics::{
    feasible_scales, ms_ssim, mse, psnr, psnr_from_mse, ssim_components, MsSsim, MS_SSIM_WEIGHTS,
};
pub use stats::{average_ranks, log_fit, pearson, spearman, LogFit, LOG_FIT_EPS};

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{per_channel_bits, CodecError, LatentBlock, Latents, ToyCodecModel};
use crate::tensor_io::Image;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image shapes differ: {0}")]
    Shape(String),
    #[error("image {width}x{height} is smaller than one SSIM window")]
    TooSmall { width: usize, height: usize },
    #[error("no images supplied")]
    NoImages,
    #[error("channel {channel} out of range for {channels} channels")]
    Channel { channel: usize, channels: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Bits charged to a channel sent as one 32-bit scalar.
pub const SCALAR_BITS: f64 = 32.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub channel: usize,
    pub bpp: f64,
    pub delta_psnr: f64,
    pub delta_msssim: f64,
    pub baseline_psnr: f64,
    pub is_outlier: bool,
}

/// Bits per pixel of each channel under the factorized model. Channels in
/// `scalar_channels` are charged [`SCALAR_BITS`] once per image.
pub fn per_channel_bpp(
    model: &ToyCodecModel,
    block: &LatentBlock,
    delta: f64,
    pixels: usize,
    scalar_channels: &[usize],
) -> Vec<f64> {
    per_channel_bits(model, block, delta)
        .into_iter()
        .enumerate()
        .map(|(c, bits)| {
            if scalar_channels.contains(&c) {
                SCALAR_BITS / pixels as f64
            } else {
                bits / pixels as f64
            }
        })
        .collect()
}

/// Baseline state of one image shared by all removals.
struct Prepared {
    image: Image,
    latents: Latents,
    bpp: Vec<f64>,
    psnr: f64,
    msssim: f64,
}

fn prepare(model: &ToyCodecModel, image: &Image, delta: f64) -> Result<Prepared, EvalError> {
    let p = model.patch_size();
    let padded = image.pad_edge(
        image.width().div_ceil(p) * p,
        image.height().div_ceil(p) * p,
    );
    let block = model.encode_latents(&padded, delta)?;
    let latents = model.dequantize(&block, delta, &[]);
    let recon = model
        .synthesize(&latents)
        .crop(image.width(), image.height());
    Ok(Prepared {
        bpp: per_channel_bpp(model, &block, delta, image.pixel_count(), &[]),
        psnr: psnr(image, &recon)?,
        msssim: ms_ssim(image, &recon)?.value,
        latents,
        image: image.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelAblation {
    pub delta_psnr: f64,
    pub delta_msssim: f64,
    pub baseline_psnr: f64,
    pub bpp: f64,
}

fn ablate_prepared(
    model: &ToyCodecModel,
    prep: &Prepared,
    c: usize,
) -> Result<ChannelAblation, EvalError> {
    let mut z = prep.latents.clone();
    z.zero_channel(c);
    let recon = model
        .synthesize(&z)
        .crop(prep.image.width(), prep.image.height());
    let psnr_c = psnr(&prep.image, &recon)?;
    let delta_psnr = if prep.psnr == psnr_c {
        0.0
    } else {
        prep.psnr - psnr_c
    };
    Ok(ChannelAblation {
        delta_psnr,
        delta_msssim: prep.msssim - ms_ssim(&prep.image, &recon)?.value,
        baseline_psnr: prep.psnr,
        bpp: prep.bpp[c],
    })
}

/// Quality drop from removing channel `c`: its dequantized latent is set to
/// zero everywhere before synthesis.
pub fn ablate_channel(
    model: &ToyCodecModel,
    image: &Image,
    c: usize,
    delta: f64,
) -> Result<ChannelAblation, EvalError> {
    if c >= model.channels() {
        return Err(EvalError::Channel {
            channel: c,
            channels: model.channels(),
        });
    }
    ablate_prepared(model, &prepare(model, image, delta)?, c)
}

/// Removes every channel in turn on every image and averages the results
/// per channel. Rows come back in channel order regardless of scheduling.
pub fn ablation_sweep(
    model: &ToyCodecModel,
    images: &[Image],
    delta: f64,
    outliers: &[usize],
) -> Result<Vec<AblationRow>, EvalError> {
    if images.is_empty() {
        return Err(EvalError::NoImages);
    }
    let prepared: Vec<Prepared> = images
        .par_iter()
        .map(|img| prepare(model, img, delta))
        .collect::<Result<_, _>>()?;
    let c = model.channels();
    let jobs: Vec<(usize, usize)> = (0..c)
        .flat_map(|ch| (0..prepared.len()).map(move |i| (ch, i)))
        .collect();
    let results: Vec<ChannelAblation> = jobs
        .par_iter()
        .map(|&(ch, i)| ablate_prepared(model, &prepared[i], ch))
        .collect::<Result<_, _>>()?;
    let n = images.len() as f64;
    Ok(results
        .chunks_exact(images.len())
        .enumerate()
        .map(|(ch, rs)| AblationRow {
            channel: ch,
            bpp: rs.iter().map(|r| r.bpp).sum::<f64>() / n,
            delta_psnr: rs.iter().map(|r| r.delta_psnr).sum::<f64>() / n,
            delta_msssim: rs.iter().map(|r| r.delta_msssim).sum::<f64>() / n,
            baseline_psnr: rs.iter().map(|r| r.baseline_psnr).sum::<f64>() / n,
            is_outlier: outliers.contains(&ch),
        })
        .collect())
}

pub const ABLATION_CSV_HEADER: &str = "channel,bpp,delta_psnr,delta_msssim,is_outlier";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.channel, r.bpp, r.delta_psnr, r.delta_msssim, r.is_outlier as u8
        )
        .unwrap();
    }
    out
}

/// Two-column `bpp<TAB>delta_psnr` series, regular channels first, then
/// outliers, separated by a blank line.
pub fn plot_data_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    for (name, flag) in [("channels", false), ("outliers", true)] {
        if flag {
            out.push('\n');
        }
        writeln!(out, "# series: {name}").unwrap();
        out.push_str("bpp\tdelta_psnr\n");
        for r in rows.iter().filter(|r| r.is_outlier == flag) {
            writeln!(out, "{}\t{}", r.bpp, r.delta_psnr).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    /// Over non-outlier rows; `None` when a side is constant.
    pub spearman: Option<f64>,
    pub log_fit: Option<LogFit>,
    pub outliers: Vec<usize>,
    pub rows_used: usize,
}

impl CorrelationReport {
    pub fn log_fit_r2(&self) -> Option<f64> {
        self.log_fit.map(|f| f.r2)
    }
}

pub fn correlation_report(rows: &[AblationRow]) -> CorrelationReport {
    let kept: Vec<&AblationRow> = rows
        .iter()
        .filter(|r| !r.is_outlier && r.bpp.is_finite() && r.delta_psnr.is_finite())
        .collect();
    let x: Vec<f64> = kept.iter().map(|r| r.bpp).collect();
    let y: Vec<f64> = kept.iter().map(|r| r.delta_psnr).collect();
    CorrelationReport {
        spearman: spearman(&x, &y),
        log_fit: log_fit(&x, &y, LOG_FIT_EPS),
        outliers: rows
            .iter()
            .filter(|r| r.is_outlier)
            .map(|r| r.channel)
            .collect(),
        rows_used: kept.len(),
    }
}

/// Number of rows whose `key` is strictly below (`below = true`) or above
/// the value of row `channel`.
pub fn count_beyond(
    rows: &[AblationRow],
    channel: usize,
    key: fn(&AblationRow) -> f64,
    below: bool,
) -> usize {
    let v = key(&rows[channel]);
    rows.iter()
        .filter(|r| if below { key(r) < v } else { key(r) > v })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(channel: usize, bpp: f64, d: f64, outlier: bool) -> AblationRow {
        AblationRow {
            channel,
            bpp,
            delta_psnr: d,
            delta_msssim: 0.0,
            baseline_psnr: 30.0,
            is_outlier: outlier,
        }
    }

    #[test]
    fn report_excludes_outliers() {
        let rows = vec![
            row(0, 0.0001, 20.0, true),
            row(1, 0.5, 3.0, false),
            row(2, 0.2, 1.0, false),
            row(3, 0.1, 0.5, false),
        ];
        let r = correlation_report(&rows);
        assert_eq!(r.spearman, Some(1.0));
        assert_eq!(r.outliers, vec![0]);
        assert_eq!(r.rows_used, 3);
        assert_eq!(count_beyond(&rows, 0, |r| r.bpp, true), 0);
        assert_eq!(count_beyond(&rows, 0, |r| r.delta_psnr, false), 0);
    }

    #[test]
    fn csv_and_tsv_layout() {
        let rows = vec![row(0, 0.25, f64::INFINITY, true), row(1, 0.5, 1.5, false)];
        assert_eq!(
            ablation_csv(&rows),
            "channel,bpp,delta_psnr,delta_msssim,is_outlier\n0,0.25,inf,0,1\n1,0.5,1.5,0,0\n"
        );
        let tsv = plot_data_tsv(&rows);
        assert!(
            tsv.starts_with("# series: channels\nbpp\tdelta_psnr\n0.5\t1.5\n\n# series: outliers")
        );
    }
}
