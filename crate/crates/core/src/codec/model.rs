//! Patch-PCA analysis/synthesis transform with a planted bias channel.
//!
//! Channels `1..C` are the top principal directions `v_c` of centred `p x p`
//! patches, with analysis rows `W_c = sqrt(lambda_c) * v_c`, so kernel
//! variance grows with the energy the channel carries. Channel 0 has
//! negligible weights and a large bias `beta`; it reconstructs the mean
//! patch through the synthesis direction `u = m / beta`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::entropy::{SYMBOL_MAX, SYMBOL_MIN};
use super::linalg::{jacobi_eigen, JACOBI_TOLERANCE};
use super::CodecError;
use crate::tensor_io::{ConvKernelSet, DType, Image, TensorFile};

pub const SIGMA_FLOOR: f64 = 1e-4;
/// Eigenvalues at or below this are stored as zero and contribute nothing
/// to synthesis.
pub const LAMBDA_EPS: f64 = 1e-12;
pub const BIAS_CHANNEL: usize = 0;
const BIAS_WEIGHT_MAGNITUDE: f64 = 1e-6;

pub const T_WEIGHT: &str = "analysis.weight";
pub const T_BIAS: &str = "analysis.bias";
pub const T_MEAN: &str = "analysis.mean";
pub const T_BASIS: &str = "analysis.basis";
pub const T_EIGENVALUES: &str = "analysis.eigenvalues";
pub const T_ENTROPY_MU: &str = "entropy.mu";
pub const T_ENTROPY_SIGMA: &str = "entropy.sigma";
pub const T_DELTA: &str = "codec.delta";
pub const T_BETA: &str = "codec.beta";

#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub patch_size: usize,
    pub channels: usize,
    pub delta: f64,
    pub beta: f64,
    /// Seeds the sign pattern of the bias channel's near-zero weights.
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            patch_size: 8,
            channels: 32,
            delta: 0.02,
            beta: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCodecModel {
    patch_size: usize,
    channels: usize,
    mean: Vec<f64>,
    /// `C x p^2`; row 0 (bias channel) is all zeros.
    basis: Vec<f64>,
    eigenvalues: Vec<f64>,
    weights: Vec<f64>,
    bias: Vec<f64>,
    delta: f64,
    beta: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

/// Quantization indices of one image, patch-major then channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentBlock {
    pub patches_y: usize,
    pub patches_x: usize,
    pub channels: usize,
    pub symbols: Vec<i32>,
}

impl LatentBlock {
    pub fn patch_count(&self) -> usize {
        self.patches_y * self.patches_x
    }

    pub fn channel_symbols(&self, c: usize) -> impl Iterator<Item = i32> + '_ {
        self.symbols.iter().skip(c).step_by(self.channels).copied()
    }
}

/// Dequantized latents, patch-major then channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub patches_y: usize,
    pub patches_x: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl Latents {
    /// Sets every value of channel `c` to zero.
    pub fn zero_channel(&mut self, c: usize) {
        let ch = self.channels;
        self.values
            .iter_mut()
            .skip(c)
            .step_by(ch)
            .for_each(|v| *v = 0.0);
    }
}

/// Smallest `f32`-representable value that is `>= v`.
fn f32_at_least(v: f64) -> f64 {
    let f = v as f32;
    if (f as f64) < v {
        f32::from_bits(f.to_bits() + 1) as f64
    } else {
        f as f64
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

pub fn quantize(z: f64, mu: f64, delta: f64) -> i32 {
    let q = ((z - mu) / delta).round();
    q.clamp(SYMBOL_MIN as f64, SYMBOL_MAX as f64) as i32
}

fn gray_patches(img: &Image, p: usize) -> Result<Vec<Vec<f64>>, CodecError> {
    if img.channels() != 1 {
        return Err(CodecError::NotGrayscale);
    }
    let (w, h) = (img.width(), img.height());
    let s = img.samples();
    let mut out = Vec::with_capacity((w / p) * (h / p));
    for py in 0..h / p {
        for px in 0..w / p {
            let mut patch = Vec::with_capacity(p * p);
            for y in 0..p {
                let row = (py * p + y) * w + px * p;
                patch.extend(s[row..row + p].iter().map(|&v| v as f64 / 255.0));
            }
            out.push(patch);
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ToyCodecModel {
    /// Fits the transform and entropy parameters on grayscale images.
    pub fn fit(images: &[Image], params: &FitParams) -> Result<Self, CodecError> {
        let p = params.patch_size;
        let c = params.channels;
        let d = p * p;
        if p == 0 || c < 2 || c > d {
            return Err(CodecError::InvalidParam(format!(
                "need 2 <= channels <= patch_size^2, got channels={c}, patch_size={p}"
            )));
        }
        if !params.delta.is_finite() || params.delta <= 0.0 {
            return Err(CodecError::InvalidParam(format!(
                "delta must be positive, got {}",
                params.delta
            )));
        }
        if !params.beta.is_finite() || params.beta == 0.0 {
            return Err(CodecError::InvalidParam(format!(
                "beta must be non-zero, got {}",
                params.beta
            )));
        }
        let mut patches = Vec::new();
        for img in images {
            patches.extend(gray_patches(img, p)?);
        }
        let n = patches.len();
        if n < c {
            return Err(CodecError::TooFewPatches { have: n, need: c });
        }

        let mut mean = vec![0.0; d];
        for x in &patches {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = vec![0.0; d * d];
        let mut centred = vec![0.0; d];
        for x in &patches {
            for k in 0..d {
                centred[k] = x[k] - mean[k];
            }
            for i in 0..d {
                let ci = centred[i];
                for j in i..d {
                    cov[i * d + j] += ci * centred[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / n as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        let eig = jacobi_eigen(&cov, d, JACOBI_TOLERANCE);

        let beta = round_f32(params.beta);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut basis = vec![0.0; c * d];
        let mut eigenvalues = vec![0.0; c];
        let mut weights = vec![0.0; c * d];
        let mut bias = vec![0.0; c];
        for w in weights[..d].iter_mut() {
            *w = if rng.gen::<bool>() {
                BIAS_WEIGHT_MAGNITUDE
            } else {
                -BIAS_WEIGHT_MAGNITUDE
            };
        }
        bias[BIAS_CHANNEL] = beta;
        for ch in 1..c {
            let lambda = match eig.values[ch - 1] {
                l if l > LAMBDA_EPS => l,
                _ => 0.0,
            };
            let v = &eig.vectors[ch - 1];
            eigenvalues[ch] = lambda;
            basis[ch * d..(ch + 1) * d].copy_from_slice(v);
            let s = lambda.sqrt();
            for k in 0..d {
                weights[ch * d + k] = s * v[k];
            }
        }

        let mut model = Self {
            patch_size: p,
            channels: c,
            mean,
            basis,
            eigenvalues,
            weights,
            bias,
            delta: round_f32(params.delta),
            beta,
            mu: vec![0.0; c],
            sigma: vec![0.0; c],
        };

        // Entropy parameters from the training latents.
        let mut sum = vec![0.0; c];
        let mut sum_sq = vec![0.0; c];
        let mut z = vec![0.0; c];
        for x in &patches {
            model.analyze_patch(x, &mut z);
            for ch in 0..c {
                sum[ch] += z[ch];
            }
        }
        let mu: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for x in &patches {
            model.analyze_patch(x, &mut z);
            for ch in 0..c {
                let dz = z[ch] - mu[ch];
                sum_sq[ch] += dz * dz;
            }
        }
        model.mu = mu.iter().map(|&m| round_f32(m)).collect();
        model.sigma = sum_sq
            .iter()
            .map(|&s| f32_at_least((s / n as f64).sqrt().max(SIGMA_FLOOR)))
            .collect();
        Ok(model)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis_vector(&self, c: usize) -> &[f64] {
        let d = self.patch_size * self.patch_size;
        &self.basis[c * d..(c + 1) * d]
    }

    pub fn analysis_row(&self, c: usize) -> &[f64] {
        let d = self.patch_size * self.patch_size;
        &self.weights[c * d..(c + 1) * d]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn entropy_mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn entropy_sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Returns a copy using a different default quantizer step.
    pub fn with_delta(&self, delta: f64) -> Self {
        Self {
            delta: round_f32(delta),
            ..self.clone()
        }
    }

    /// Continuous latents of one patch (pixels in `[0, 1]`).
    pub fn analyze_patch(&self, x: &[f64], z: &mut [f64]) {
        let d = self.patch_size * self.patch_size;
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        z[BIAS_CHANNEL] = self.bias[BIAS_CHANNEL];
        for (c, zc) in z.iter_mut().enumerate().take(self.channels).skip(1) {
            *zc = dot(&self.weights[c * d..(c + 1) * d], &centred) + self.bias[c];
        }
    }

    fn check_dims(&self, img: &Image) -> Result<(), CodecError> {
        let p = self.patch_size;
        if !img.width().is_multiple_of(p) || !img.height().is_multiple_of(p) {
            return Err(CodecError::Dimension(format!(
                "image {}x{} is not a multiple of patch size {p}",
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }

    /// Continuous analysis latents for every patch, patch-major.
    pub fn analysis_latents(&self, img: &Image) -> Result<Latents, CodecError> {
        self.check_dims(img)?;
        let patches = gray_patches(img, self.patch_size)?;
        let mut values = vec![0.0; patches.len() * self.channels];
        for (x, z) in patches.iter().zip(values.chunks_exact_mut(self.channels)) {
            self.analyze_patch(x, z);
        }
        Ok(Latents {
            patches_y: img.height() / self.patch_size,
            patches_x: img.width() / self.patch_size,
            channels: self.channels,
            values,
        })
    }

    /// Analysis transform and uniform quantization with step `delta`.
    pub fn encode_latents(&self, img: &Image, delta: f64) -> Result<LatentBlock, CodecError> {
        let z = self.analysis_latents(img)?;
        let c = self.channels;
        let symbols = z
            .values
            .chunks_exact(c)
            .flat_map(|row| (0..c).map(move |ch| (ch, row[ch])))
            .map(|(ch, v)| quantize(v, self.mu[ch], delta))
            .collect();
        Ok(LatentBlock {
            patches_y: z.patches_y,
            patches_x: z.patches_x,
            channels: c,
            symbols,
        })
    }

    /// `q * delta + mu` per channel; channels listed in `scalars` take the
    /// given constant instead.
    pub fn dequantize(&self, block: &LatentBlock, delta: f64, scalars: &[(usize, f64)]) -> Latents {
        let c = self.channels;
        let mut values: Vec<f64> = block
            .symbols
            .chunks_exact(c)
            .flat_map(|row| (0..c).map(move |ch| (ch, row[ch])))
            .map(|(ch, q)| q as f64 * delta + self.mu[ch])
            .collect();
        for &(ch, v) in scalars {
            values.iter_mut().skip(ch).step_by(c).for_each(|x| *x = v);
        }
        Latents {
            patches_y: block.patches_y,
            patches_x: block.patches_x,
            channels: c,
            values,
        }
    }

    /// Synthesis transform: `x = z_0 * u + sum_c z_c * v_c / sqrt(lambda_c)`,
    /// clamped to `[0, 1]` and rounded to 8 bits.
    pub fn synthesize(&self, latents: &Latents) -> Image {
        let p = self.patch_size;
        let d = p * p;
        let (py_n, px_n) = (latents.patches_y, latents.patches_x);
        let width = px_n * p;
        let mut out = vec![0u8; width * py_n * p];
        let u: Vec<f64> = self.mean.iter().map(|m| m / self.beta).collect();
        let inv_sqrt: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|&l| if l > LAMBDA_EPS { 1.0 / l.sqrt() } else { 0.0 })
            .collect();
        let mut x = vec![0.0; d];
        for (idx, z) in latents.values.chunks_exact(self.channels).enumerate() {
            let z0 = z[BIAS_CHANNEL];
            for k in 0..d {
                x[k] = z0 * u[k];
            }
            for c in 1..self.channels {
                let coeff = z[c] * inv_sqrt[c];
                if coeff != 0.0 {
                    let v = &self.basis[c * d..(c + 1) * d];
                    for k in 0..d {
                        x[k] += coeff * v[k];
                    }
                }
            }
            let (py, px) = (idx / px_n, idx % px_n);
            for y in 0..p {
                let row = (py * p + y) * width + px * p;
                for xx in 0..p {
                    let v = x[y * p + xx].clamp(0.0, 1.0) * 255.0;
                    out[row + xx] = v.round() as u8;
                }
            }
        }
        Image::gray(width, py_n * p, out).expect("synthesized dimensions are consistent")
    }

    /// Encode, dequantize and synthesize without entropy coding.
    pub fn reconstruct(&self, img: &Image, delta: f64) -> Result<Image, CodecError> {
        let block = self.encode_latents(img, delta)?;
        Ok(self.synthesize(&self.dequantize(&block, delta, &[])))
    }

    /// Analysis weights as a `(C, 1, p, p)` kernel set with bias.
    pub fn export_encoder_weights(&self) -> ConvKernelSet {
        ConvKernelSet::new(
            [self.channels, 1, self.patch_size, self.patch_size],
            self.weights.clone(),
            Some(self.bias.clone()),
        )
        .expect("model weights are finite")
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let (c, p) = (self.channels, self.patch_size);
        let mut tf = TensorFile::new();
        let mut put = |name: &str, dt: DType, shape: &[usize], v: &[f64]| {
            tf.push_f64(name, dt, shape, v)
                .expect("model tensors are well-formed")
        };
        put(T_WEIGHT, DType::F64, &[c, 1, p, p], &self.weights);
        put(T_BIAS, DType::F64, &[c], &self.bias);
        put(T_MEAN, DType::F64, &[1, p, p], &self.mean);
        put(T_BASIS, DType::F64, &[c, p * p], &self.basis);
        put(T_EIGENVALUES, DType::F64, &[c], &self.eigenvalues);
        put(T_ENTROPY_MU, DType::F32, &[c], &self.mu);
        put(T_ENTROPY_SIGMA, DType::F32, &[c], &self.sigma);
        put(T_DELTA, DType::F32, &[1], &[self.delta]);
        put(T_BETA, DType::F32, &[1], &[self.beta]);
        tf.metadata.insert("format".into(), "iscs-toy-codec".into());
        tf.metadata
            .insert("bias_channel".into(), BIAS_CHANNEL.to_string());
        tf
    }

    pub fn from_tensor_file(tf: &TensorFile) -> Result<Self, CodecError> {
        let w = tf.entry(T_WEIGHT)?;
        let (c, p) = match w.shape.as_slice() {
            &[c, 1, p, p2] if p == p2 => (c, p),
            other => {
                return Err(CodecError::InvalidModel(format!(
                    "{T_WEIGHT} must have shape (C, 1, p, p), got {other:?}"
                )))
            }
        };
        let d = p * p;
        let get = |name: &str, len: usize| -> Result<Vec<f64>, CodecError> {
            let v = tf.tensor_f64(name)?;
            if v.len() != len {
                return Err(CodecError::InvalidModel(format!(
                    "{name} has {} elements, expected {len}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CodecError::InvalidModel(format!(
                    "{name} has non-finite values"
                )));
            }
            Ok(v)
        };
        let model = Self {
            patch_size: p,
            channels: c,
            weights: get(T_WEIGHT, c * d)?,
            bias: get(T_BIAS, c)?,
            mean: get(T_MEAN, d)?,
            basis: get(T_BASIS, c * d)?,
            eigenvalues: get(T_EIGENVALUES, c)?,
            mu: get(T_ENTROPY_MU, c)?,
            sigma: get(T_ENTROPY_SIGMA, c)?,
            delta: get(T_DELTA, 1)?[0],
            beta: get(T_BETA, 1)?[0],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: String| Err(CodecError::InvalidModel(m));
        if self.channels < 2 || self.channels > self.patch_size * self.patch_size {
            return bad(format!("invalid channel count {}", self.channels));
        }
        if self.delta.is_nan() || self.delta <= 0.0 || self.beta == 0.0 {
            return bad("delta must be positive and beta non-zero".into());
        }
        if self.sigma.iter().any(|&s| s < SIGMA_FLOOR) {
            return bad("entropy scale below floor".into());
        }
        if self.eigenvalues[1..].windows(2).any(|w| w[1] > w[0])
            || self.eigenvalues.iter().any(|&l| l < 0.0)
        {
            return bad("eigenvalues must be non-negative and non-increasing".into());
        }
        for a in 1..self.channels {
            for b in a..self.channels {
                let ip = dot(self.basis_vector(a), self.basis_vector(b));
                let want = if a == b { 1.0 } else { 0.0 };
                if (ip - want).abs() > 1e-8 {
                    return bad(format!(
                        "basis vectors {a} and {b} are not orthonormal ({ip})"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_tensor_file().to_bytes()
    }

    /// First 8 bytes of SHA-256 over the serialized model file.
    pub fn hash(&self) -> [u8; 8] {
        let digest = Sha256::digest(self.to_bytes());
        digest[..8].try_into().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_images(v: u8) -> Vec<Image> {
        vec![Image::gray(32, 32, vec![v; 1024]).unwrap()]
    }

    #[test]
    fn constant_images_floor_every_sigma() {
        let m = ToyCodecModel::fit(
            &constant_images(90),
            &FitParams {
                patch_size: 4,
                channels: 8,
                ..FitParams::default()
            },
        )
        .unwrap();
        assert!(m.eigenvalues().iter().all(|&l| l == 0.0));
        let floor = f32_at_least(SIGMA_FLOOR);
        assert!(m.entropy_sigma().iter().all(|&s| s == floor));
        assert!(floor >= SIGMA_FLOOR);
    }

    #[test]
    fn too_few_patches() {
        let err = ToyCodecModel::fit(
            &[Image::gray(8, 8, vec![0; 64]).unwrap()],
            &FitParams {
                patch_size: 4,
                channels: 8,
                ..FitParams::default()
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CodecError::TooFewPatches { have: 4, need: 8 }
        ));
    }

    #[test]
    fn rejects_color_and_bad_dims() {
        let rgb = Image::new(8, 8, 3, vec![0; 192]).unwrap();
        assert!(matches!(
            ToyCodecModel::fit(
                &[rgb],
                &FitParams {
                    patch_size: 2,
                    channels: 2,
                    ..FitParams::default()
                }
            ),
            Err(CodecError::NotGrayscale)
        ));
        let m = ToyCodecModel::fit(
            &constant_images(10),
            &FitParams {
                patch_size: 4,
                channels: 4,
                ..FitParams::default()
            },
        )
        .unwrap();
        let odd = Image::gray(6, 8, vec![0; 48]).unwrap();
        assert!(matches!(
            m.encode_latents(&odd, 0.1),
            Err(CodecError::Dimension(_))
        ));
    }

    #[test]
    fn quantizer_clamps() {
        assert_eq!(quantize(1e9, 0.0, 1e-6), SYMBOL_MAX);
        assert_eq!(quantize(-1e9, 0.0, 1e-6), SYMBOL_MIN);
        assert_eq!(quantize(0.26, 0.01, 0.5), 1);
        assert_eq!(quantize(0.24, 0.01, 0.5), 0);
    }

    #[test]
    fn f32_rounding_up() {
        assert!(f32_at_least(1e-4) >= 1e-4);
        assert_eq!(f32_at_least(0.5), 0.5);
    }
}
