//! Parameter-side channel importance: kernel variance, bias magnitude and
//! pairwise cosine similarity of flattened kernels.
//!
//! Every score is a pure function of the weights. Per-channel work runs in
//! parallel but each channel's summation order is fixed, so results do not
//! depend on thread scheduling.

use rayon::prelude::*;
use thiserror::Error;

use crate::tensor_io::ConvKernelSet;

/// Norms below this are treated as dead kernels.
pub const ZERO_NORM: f64 = 1e-30;

#[derive(Debug, Error, PartialEq)]
pub enum ImportanceError {
    #[error("non-finite score at channel {0}")]
    NonFinite(usize),
}

/// Dense symmetric `n x n` matrix of kernel cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds from a row-major square buffer. No symmetry check.
    pub fn from_rows(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "similarity buffer must be n*n");
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n..(a + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScores {
    pub variance: Vec<f64>,
    pub bias_mag: Vec<f64>,
    pub similarity: SimilarityMatrix,
}

impl ChannelScores {
    pub fn compute(k: &ConvKernelSet) -> Self {
        Self {
            variance: variance_scores(k),
            bias_mag: bias_scores(k),
            similarity: cosine_similarity_matrix(k),
        }
    }

    pub fn channels(&self) -> usize {
        self.variance.len()
    }

    /// Reorders channels so that new channel `i` is old channel `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.channels();
        let mut sim = Vec::with_capacity(n * n);
        for &a in perm {
            for &b in perm {
                sim.push(self.similarity.get(a, b));
            }
        }
        Self {
            variance: perm.iter().map(|&c| self.variance[c]).collect(),
            bias_mag: perm.iter().map(|&c| self.bias_mag[c]).collect(),
            similarity: SimilarityMatrix::from_rows(n, sim),
        }
    }
}

/// Population variance of one kernel, corrected two-pass.
fn kernel_variance(w: &[f64]) -> f64 {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let (sq, lin) = w.iter().fold((0.0, 0.0), |(sq, lin), &x| {
        let d = x - mean;
        (sq + d * d, lin + d)
    });
    ((sq - lin * lin / n) / n).max(0.0)
}

/// `Var(W_c)` over all `C_in * K * K` entries of every output kernel.
pub fn variance_scores(k: &ConvKernelSet) -> Vec<f64> {
    (0..k.c_out())
        .into_par_iter()
        .map(|c| kernel_variance(k.kernel(c)))
        .collect()
}

/// `|b_c|`, or zeros when the layer has no bias.
pub fn bias_scores(k: &ConvKernelSet) -> Vec<f64> {
    match k.bias() {
        Some(b) => b.iter().map(|v| v.abs()).collect(),
        None => vec![0.0; k.c_out()],
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise cosine similarity of flattened kernels. The upper triangle is
/// computed once and mirrored, so the result is exactly symmetric; the
/// diagonal is set to 1 and pairs involving a dead kernel are 0.
pub fn cosine_similarity_matrix(k: &ConvKernelSet) -> SimilarityMatrix {
    let n = k.c_out();
    let norms: Vec<f64> = k.kernels().map(|w| dot(w, w).sqrt()).collect();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let wa = k.kernel(a);
            ((a + 1)..n)
                .map(|b| {
                    if norms[a] < ZERO_NORM || norms[b] < ZERO_NORM {
                        0.0
                    } else {
                        dot(wa, k.kernel(b)) / (norms[a] * norms[b])
                    }
                })
                .collect()
        })
        .collect();
    let mut data = vec![0.0; n * n];
    for a in 0..n {
        data[a * n + a] = 1.0;
        for (off, &v) in upper[a].iter().enumerate() {
            let b = a + 1 + off;
            data[a * n + b] = v;
            data[b * n + a] = v;
        }
    }
    SimilarityMatrix { n, data }
}

/// Indices sorted by value descending; ties keep ascending index order.
pub fn rank_descending(values: &[f64]) -> Result<Vec<usize>, ImportanceError> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ImportanceError::NonFinite(i));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kset(c_out: usize, kernel: Vec<f64>, bias: Option<Vec<f64>>) -> ConvKernelSet {
        let len = kernel.len() / c_out;
        ConvKernelSet::new([c_out, len, 1, 1], kernel, bias).unwrap()
    }

    #[test]
    fn constant_kernel_has_zero_variance() {
        let k = kset(1, vec![0.7; 9], None);
        assert_eq!(variance_scores(&k), vec![0.0]);
    }

    #[test]
    fn two_point_kernel_variance() {
        let a = 0.37;
        let w: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { a } else { -a }).collect();
        let k = kset(1, w, None);
        assert!((variance_scores(&k)[0] - a * a).abs() < 1e-15);
    }

    #[test]
    fn bias_magnitudes() {
        let k = kset(3, vec![1.0, 2.0, 3.0], Some(vec![0.0, -1.0, 3.0]));
        assert_eq!(bias_scores(&k), vec![0.0, 1.0, 3.0]);
        let k = kset(1, vec![1.0], Some(vec![-2.0534]));
        assert_eq!(bias_scores(&k), vec![2.0534]);
        let k = kset(2, vec![1.0, 2.0], None);
        assert_eq!(bias_scores(&k), vec![0.0, 0.0]);
    }

    #[test]
    fn identical_and_negated_kernels() {
        let w0 = [0.3, -1.2, 0.5, 2.0];
        let mut w = w0.to_vec();
        w.extend_from_slice(&w0);
        w.extend(w0.iter().map(|v| -v));
        let s = cosine_similarity_matrix(&kset(3, w, None));
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((s.get(0, 2) + 1.0).abs() < 1e-15);
        assert_eq!(s.get(2, 2), 1.0);
    }

    #[test]
    fn dead_kernel_similarity_is_zero() {
        let s = cosine_similarity_matrix(&kset(2, vec![0.0, 0.0, 1.0, 2.0], None));
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(1, 0), 0.0);
        assert_eq!(s.get(0, 0), 1.0);
    }

    #[test]
    fn table4_variance_ordering() {
        let ids = [217usize, 24, 233, 93, 40, 252, 157, 292, 140];
        let var = [
            0.0638, 0.0347, 0.0232, 0.0304, 0.0271, 0.0201, 0.0175, 0.0038, 0.0148,
        ];
        let order: Vec<usize> = rank_descending(&var)
            .unwrap()
            .into_iter()
            .map(|i| ids[i])
            .collect();
        assert_eq!(order, vec![217, 24, 93, 40, 233, 252, 157, 140, 292]);
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(rank_descending(&[1.0, 1.0, 1.0]).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            rank_descending(&[1.0, 2.0, 1.0, 2.0]).unwrap(),
            vec![1, 3, 0, 2]
        );
    }

    #[test]
    fn rank_rejects_nan() {
        assert_eq!(
            rank_descending(&[1.0, f64::NAN]),
            Err(ImportanceError::NonFinite(1))
        );
    }
}
