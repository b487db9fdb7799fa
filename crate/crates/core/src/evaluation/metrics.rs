//! PSNR and multi-scale SSIM on 8-bit images.

use super::EvalError;
use crate::tensor_io::Image;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 255.0;

fn check_shapes(a: &Image, b: &Image) -> Result<(), EvalError> {
    if !a.same_shape(b) {
        return Err(EvalError::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean squared error over all samples.
pub fn mse(a: &Image, b: &Image) -> Result<f64, EvalError> {
    check_shapes(a, b)?;
    let sum: u64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.samples().len() as f64)
}

/// `10 log10(255^2 / MSE)`; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, EvalError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (L * L / mse).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    /// Number of scales actually used.
    pub scales: usize,
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode filtering with the Gaussian window.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w + 1 - WINDOW;
    let oh = h + 1 - WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            tmp[y * ow + ox] = k
                .iter()
                .zip(&row[ox..ox + WINDOW])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * tmp[(oy + i) * ow + ox];
            }
            out[oy * ow + ox] = s;
        }
    }
    (out, ow, oh)
}

/// Mean SSIM and mean contrast-structure term of one plane at one scale.
pub fn ssim_components(a: &[f64], b: &[f64], w: usize, h: usize) -> (f64, f64) {
    assert!(w >= WINDOW && h >= WINDOW, "plane smaller than the window");
    let k = gaussian_window();
    let c1 = (K1 * L).powi(2);
    let c2 = (K2 * L).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, ow, oh) = filter_valid(a, w, h, &k);
    let (mu_b, ..) = filter_valid(b, w, h, &k);
    let (e_aa, ..) = filter_valid(&aa, w, h, &k);
    let (e_bb, ..) = filter_valid(&bb, w, h, &k);
    let (e_ab, ..) = filter_valid(&ab, w, h, &k);
    let n = (ow * oh) as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs_i = (2.0 * cov + c2) / (va + vb + c2);
        let l_i = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim += l_i * cs_i;
        cs += cs_i;
    }
    (ssim / n, cs / n)
}

fn downsample(x: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = vec![0.0; nw * nh];
    for y in 0..nh {
        for xx in 0..nw {
            let i = 2 * y * w + 2 * xx;
            out[y * nw + xx] = 0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]);
        }
    }
    (out, nw, nh)
}

/// Number of dyadic scales whose smallest plane still fits the window.
pub fn feasible_scales(width: usize, height: usize) -> usize {
    let mut side = width.min(height);
    let mut n = 0;
    while n < MS_SSIM_WEIGHTS.len() && side >= WINDOW {
        n += 1;
        side /= 2;
    }
    n
}

fn plane(img: &Image, ch: usize) -> Vec<f64> {
    img.samples()
        .iter()
        .skip(ch)
        .step_by(img.channels())
        .map(|&v| v as f64)
        .collect()
}

/// Multi-scale SSIM, averaged over colour channels. Images too small for
/// five scales use as many as fit, with the leading weights renormalized.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<MsSsim, EvalError> {
    check_shapes(a, b)?;
    let scales = feasible_scales(a.width(), a.height());
    if scales == 0 {
        return Err(EvalError::TooSmall {
            width: a.width(),
            height: a.height(),
        });
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let (mut pa, mut pb) = (plane(a, ch), plane(b, ch));
        let (mut w, mut h) = (a.width(), a.height());
        let mut value = 1.0;
        for (s, &raw_weight) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
            let (ssim, cs) = ssim_components(&pa, &pb, w, h);
            let weight = raw_weight / wsum;
            let term = if s + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(weight);
            if s + 1 < scales {
                let (na, nw, nh) = downsample(&pa, w, h);
                pb = downsample(&pb, w, h).0;
                pa = na;
                w = nw;
                h = nh;
            }
        }
        total += value;
    }
    Ok(MsSsim {
        value: total / a.channels() as f64,
        scales,
    })
}
