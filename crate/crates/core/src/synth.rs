//! Seeded synthetic inputs: kernel sets with planted SC/SA/bias structure and
//! grayscale images with a 1/f amplitude spectrum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::tensor_io::{ConvKernelSet, Image};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedParams {
    pub num_groups: usize,
    pub group_size: usize,
    pub bias_count: usize,
    pub residual_count: usize,
    pub c_in: usize,
    pub kernel: usize,
}

impl PlantedParams {
    /// Random shape within `M <= 8`, `N <= 16`, `B <= 4`, `R < N`, keeping
    /// bias channels a strict minority of the non-bias population.
    pub fn random(rng: &mut impl Rng) -> Self {
        let num_groups = rng.gen_range(1..=8);
        let group_size = rng.gen_range(2..=16);
        let residual_count = rng.gen_range(0..group_size);
        let non_bias = num_groups * group_size + residual_count;
        let bias_count = rng.gen_range(0..=4.min((non_bias - 1) / 2));
        Self {
            num_groups,
            group_size,
            bias_count,
            residual_count,
            c_in: 4,
            kernel: 3,
        }
    }

    pub fn channels(&self) -> usize {
        self.num_groups * self.group_size + self.bias_count + self.residual_count
    }

    fn dim(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedGroup {
    pub sc: usize,
    /// Ascending channel indices.
    pub sa: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub kernels: ConvKernelSet,
    pub params: PlantedParams,
    /// In descending SC variance order.
    pub groups: Vec<PlantedGroup>,
    pub bias_channels: Vec<usize>,
    pub residual: Vec<usize>,
}

// Generator ranges. SA variance is at most 0.6^2 * (1 + 0.4^2) * 1.5 < 1,
// below every SC; residual variance stays below every SA.
const SC_VARIANCE: (f64, f64) = (1.0, 1.5);
const SA_ALPHA: (f64, f64) = (0.3, 0.6);
const SA_NOISE: (f64, f64) = (0.1, 0.4);
const RESIDUAL_VARIANCE: (f64, f64) = (0.01, 0.1);
const BIAS_RANGE: (f64, f64) = (0.01, 0.1);
const BIAS_FACTOR: (f64, f64) = (20.0, 100.0);
const DEAD_WEIGHT: f64 = 1e-6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Removes the components along the orthonormal `basis`, twice for accuracy.
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let n = dot(v, v).sqrt();
    if n < 1e-6 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Zero-mean vector with exact population variance `var`.
fn with_variance(unit: &[f64], var: f64) -> Vec<f64> {
    let s = (var * unit.len() as f64).sqrt();
    unit.iter().map(|x| x * s).collect()
}

fn population_variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a) * dot(b, b)).sqrt()
}

impl Planted {
    /// Draws a random shape from the seed, then the weights.
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PlantedParams::random(&mut rng);
        Self::generate_with(&params, &mut rng)
    }

    pub fn generate_with(params: &PlantedParams, rng: &mut impl Rng) -> Self {
        assert!(params.group_size >= 2 && params.num_groups >= 1);
        assert!(params.residual_count < params.group_size);
        assert!(
            params.dim() > params.num_groups + 2,
            "kernel too small for the plant"
        );
        loop {
            if let Some(p) = Self::attempt(params, rng) {
                return p;
            }
        }
    }

    fn attempt(params: &PlantedParams, rng: &mut impl Rng) -> Option<Self> {
        let d = params.dim();
        let (m, n) = (params.num_groups, params.group_size);
        let mut ones = vec![1.0; d];
        normalize(&mut ones);
        let mut basis = vec![ones];

        let mut sc_var: Vec<f64> = (0..m)
            .map(|_| rng.gen_range(SC_VARIANCE.0..SC_VARIANCE.1))
            .collect();
        sc_var.sort_by(|a, b| b.total_cmp(a));
        let mut sc_units = Vec::with_capacity(m);
        for _ in 0..m {
            let mut v = gaussian_vec(rng, d);
            project_out(&mut v, &basis);
            if !normalize(&mut v) {
                return None;
            }
            basis.push(v.clone());
            sc_units.push(v);
        }

        // Logical channels: groups (SC then SAs), residual, bias.
        let mut logical: Vec<Vec<f64>> = Vec::new();
        for (g, unit) in sc_units.iter().enumerate() {
            let sc = with_variance(unit, sc_var[g]);
            logical.push(sc.clone());
            for _ in 1..n {
                let alpha = rng.gen_range(SA_ALPHA.0..SA_ALPHA.1);
                let rho = rng.gen_range(SA_NOISE.0..SA_NOISE.1);
                let mut eps = gaussian_vec(rng, d);
                project_out(&mut eps, &basis);
                if !normalize(&mut eps) {
                    return None;
                }
                let scale = rho * alpha * dot(&sc, &sc).sqrt();
                logical.push(
                    sc.iter()
                        .zip(&eps)
                        .map(|(s, e)| alpha * s + scale * e)
                        .collect(),
                );
            }
        }
        for _ in 0..params.residual_count {
            let mut v = gaussian_vec(rng, d);
            project_out(&mut v, &basis);
            if !normalize(&mut v) {
                return None;
            }
            logical.push(with_variance(
                &v,
                rng.gen_range(RESIDUAL_VARIANCE.0..RESIDUAL_VARIANCE.1),
            ));
        }
        let non_bias = logical.len();
        for _ in 0..params.bias_count {
            logical.push(
                (0..d)
                    .map(|_| {
                        if rng.gen::<bool>() {
                            DEAD_WEIGHT
                        } else {
                            -DEAD_WEIGHT
                        }
                    })
                    .collect(),
            );
        }

        // Small biases evenly spread with jitter, random signs.
        let step = (BIAS_RANGE.1 - BIAS_RANGE.0) / non_bias as f64;
        let mut small: Vec<f64> = (0..non_bias)
            .map(|i| BIAS_RANGE.0 + step * (i as f64 + rng.gen_range(0.1..0.9)))
            .collect();
        small.shuffle(rng);
        let mut sorted = small.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[non_bias / 2];
        let mut biases: Vec<f64> = small
            .into_iter()
            .map(|b| if rng.gen::<bool>() { b } else { -b })
            .collect();
        for _ in 0..params.bias_count {
            let mag = median * rng.gen_range(BIAS_FACTOR.0..BIAS_FACTOR.1);
            biases.push(if rng.gen::<bool>() { mag } else { -mag });
        }

        if !Self::margins_hold(params, &logical) {
            return None;
        }

        let c = params.channels();
        let mut slots: Vec<usize> = (0..c).collect();
        slots.shuffle(rng);
        let mut weights = vec![0.0; c * d];
        let mut bias = vec![0.0; c];
        for (l, &slot) in slots.iter().enumerate() {
            weights[slot * d..(slot + 1) * d].copy_from_slice(&logical[l]);
            bias[slot] = biases[l];
        }
        let groups = (0..m)
            .map(|g| {
                let base = g * n;
                let mut sa: Vec<usize> = (base + 1..base + n).map(|l| slots[l]).collect();
                sa.sort_unstable();
                PlantedGroup {
                    sc: slots[base],
                    sa,
                }
            })
            .collect();
        let mut residual: Vec<usize> = (m * n..non_bias).map(|l| slots[l]).collect();
        residual.sort_unstable();
        let mut bias_channels: Vec<usize> = (non_bias..c).map(|l| slots[l]).collect();
        bias_channels.sort_unstable();
        let kernels = ConvKernelSet::new(
            [c, params.c_in, params.kernel, params.kernel],
            weights,
            Some(bias),
        )
        .expect("planted weights are finite");
        Some(Planted {
            kernels,
            params: params.clone(),
            groups,
            bias_channels,
            residual,
        })
    }

    /// Every SC out-varies every non-SC non-bias channel, SCs are distinct
    /// in variance, and each SA is at least 0.1 closer (cosine) to its own
    /// SC than to any other.
    fn margins_hold(params: &PlantedParams, logical: &[Vec<f64>]) -> bool {
        let (m, n) = (params.num_groups, params.group_size);
        let non_bias = m * n + params.residual_count;
        let var: Vec<f64> = logical[..non_bias]
            .iter()
            .map(|v| population_variance(v))
            .collect();
        let sc_var: Vec<f64> = (0..m).map(|g| var[g * n]).collect();
        let min_sc = sc_var.iter().copied().fold(f64::INFINITY, f64::min);
        let max_other = (0..non_bias)
            .filter(|l| l % n != 0 || *l >= m * n)
            .map(|l| var[l])
            .fold(0.0, f64::max);
        if min_sc <= max_other * 1.1 {
            return false;
        }
        if sc_var.windows(2).any(|w| w[0] - w[1] < 1e-9) {
            return false;
        }
        for g in 0..m {
            let sc = &logical[g * n];
            let own_min = (1..n)
                .map(|k| cosine(sc, &logical[g * n + k]))
                .fold(f64::INFINITY, f64::min);
            let foreign_max = (0..non_bias)
                .filter(|&l| l / n != g || l >= m * n)
                .filter(|&l| l % n != 0 || l >= m * n)
                .map(|l| cosine(sc, &logical[l]))
                .fold(f64::NEG_INFINITY, f64::max);
            if own_min - foreign_max < 0.1 {
                return false;
            }
        }
        true
    }
}

/// Grayscale image whose amplitude spectrum falls off as `1/f`, scaled to
/// mean 128 and standard deviation `contrast`, clamped to 8 bits.
pub fn one_over_f_image(width: usize, height: usize, seed: u64, contrast: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = (0..width * height)
        .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    fft_2d(&mut planner, &mut buf, width, height, false);
    for y in 0..height {
        let fy = y.min(height - y) as f64 / height as f64;
        for x in 0..width {
            let fx = x.min(width - x) as f64 / width as f64;
            let f = (fx * fx + fy * fy).sqrt();
            buf[y * width + x] *= if f == 0.0 { 0.0 } else { 1.0 / f };
        }
    }
    fft_2d(&mut planner, &mut buf, width, height, true);
    let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let n = re.len() as f64;
    let mean = re.iter().sum::<f64>() / n;
    let std = (re.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let samples = re
        .iter()
        .map(|v| {
            let s = if std > 0.0 { (v - mean) / std } else { 0.0 };
            (128.0 + contrast * s).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Image::gray(width, height, samples).expect("dimensions are positive")
}

fn fft_2d(
    planner: &mut FftPlanner<f64>,
    buf: &mut [Complex<f64>],
    w: usize,
    h: usize,
    inverse: bool,
) {
    let row = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut tmp = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            tmp[y] = buf[y * w + x];
        }
        col.process(&mut tmp);
        for y in 0..h {
            buf[y * w + x] = tmp[y];
        }
    }
}

/// `count` 1/f images with seeds `seed, seed + 1, ...`.
pub fn one_over_f_set(count: usize, size: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| one_over_f_image(size, size, seed.wrapping_add(i as u64), 40.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_partition_and_shape() {
        for seed in 0..20 {
            let p = Planted::generate(seed);
            let c = p.params.channels();
            assert_eq!(p.kernels.c_out(), c);
            let mut all: Vec<usize> = p
                .groups
                .iter()
                .flat_map(|g| std::iter::once(g.sc).chain(g.sa.iter().copied()))
                .chain(p.bias_channels.iter().copied())
                .chain(p.residual.iter().copied())
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..c).collect::<Vec<_>>());
        }
    }

    #[test]
    fn planted_is_deterministic() {
        let a = Planted::generate(7);
        let b = Planted::generate(7);
        assert_eq!(a.kernels, b.kernels);
        assert_eq!(a.groups, b.groups);
    }

    #[test]
    fn one_over_f_statistics() {
        let img = one_over_f_image(64, 64, 3, 40.0);
        let s = img.samples();
        let mean = s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64;
        assert!((mean - 128.0).abs() < 3.0);
        // Neighbouring pixels are strongly correlated.
        let mut num = 0.0;
        let mut den = 0.0;
        for y in 0..64 {
            for x in 0..63 {
                let a = s[y * 64 + x] as f64 - mean;
                let b = s[y * 64 + x + 1] as f64 - mean;
                num += a * b;
                den += a * a;
            }
        }
        assert!(num / den > 0.5);
        assert_eq!(one_over_f_image(64, 64, 3, 40.0), img);
    }
}
