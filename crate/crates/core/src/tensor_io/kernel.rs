use super::{TensorError, TensorFile};

/// Output-channel kernels of one convolution layer, promoted to `f64`.
///
/// `weights` is row-major `(c_out, c_in, kh, kw)`; kernel `c` is the
/// contiguous slice `weights[c * kernel_len .. (c + 1) * kernel_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernelSet {
    c_out: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl ConvKernelSet {
    pub fn new(
        shape: [usize; 4],
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self, TensorError> {
        let [c_out, c_in, kh, kw] = shape;
        if shape.contains(&0) {
            return Err(TensorError::ZeroDimension("kernel set".into()));
        }
        let n = c_out * c_in * kh * kw;
        if weights.len() != n {
            return Err(TensorError::SizeMismatch {
                tensor: "kernel set".into(),
                expected: n,
                actual: weights.len(),
            });
        }
        if let Some(i) = weights.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                tensor: "weights".into(),
                index: i,
            });
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(TensorError::BiasLength {
                    tensor: "bias".into(),
                    expected: c_out,
                    actual: b.len(),
                });
            }
            if let Some(i) = b.iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite {
                    tensor: "bias".into(),
                    index: i,
                });
            }
        }
        Ok(Self {
            c_out,
            c_in,
            kh,
            kw,
            weights,
            bias,
        })
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn kernel_dims(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kh, self.kw]
    }

    /// Number of entries in one flattened kernel, `C_in * K * K`.
    pub fn kernel_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn kernel(&self, c: usize) -> &[f64] {
        let n = self.kernel_len();
        &self.weights[c * n..(c + 1) * n]
    }

    pub fn kernels(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.weights.chunks_exact(self.kernel_len())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    /// Reorders output channels: new channel `i` is old channel `perm[i]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.c_out, "permutation length");
        let mut weights = Vec::with_capacity(self.weights.len());
        for &c in perm {
            weights.extend_from_slice(self.kernel(c));
        }
        let bias = self
            .bias
            .as_ref()
            .map(|b| perm.iter().map(|&c| b[c]).collect());
        Self {
            weights,
            bias,
            ..*self
        }
    }
}

/// Pulls a rank-4 weight tensor (and optionally a rank-1 bias) out of a
/// container. Names are matched exactly.
pub fn extract_kernel_set(
    tf: &TensorFile,
    weight_name: &str,
    bias_name: Option<&str>,
) -> Result<ConvKernelSet, TensorError> {
    let entry = tf.entry(weight_name)?;
    let shape: [usize; 4] =
        entry
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| TensorError::RankMismatch {
                tensor: weight_name.to_string(),
                expected: 4,
                actual: entry.shape.len(),
            })?;
    let weights = tf.tensor_f64(weight_name)?;
    if let Some(i) = weights.iter().position(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite {
            tensor: weight_name.to_string(),
            index: i,
        });
    }

    let bias = match bias_name {
        None => None,
        Some(name) => {
            let be = tf.entry(name)?;
            if be.shape.len() != 1 {
                return Err(TensorError::RankMismatch {
                    tensor: name.to_string(),
                    expected: 1,
                    actual: be.shape.len(),
                });
            }
            if be.shape[0] != shape[0] {
                return Err(TensorError::BiasLength {
                    tensor: name.to_string(),
                    expected: shape[0],
                    actual: be.shape[0],
                });
            }
            let b = tf.tensor_f64(name)?;
            if let Some(i) = b.iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite {
                    tensor: name.to_string(),
                    index: i,
                });
            }
            Some(b)
        }
    };
    ConvKernelSet::new(shape, weights, bias)
}

/// Writes a kernel set into a container as F64 tensors.
pub fn insert_kernel_set(
    tf: &mut TensorFile,
    k: &ConvKernelSet,
    weight_name: &str,
    bias_name: Option<&str>,
) -> Result<(), TensorError> {
    tf.push_f64(weight_name, super::DType::F64, &k.shape(), k.weights())?;
    if let (Some(name), Some(b)) = (bias_name, k.bias()) {
        tf.push_f64(name, super::DType::F64, &[k.c_out()], b)?;
    }
    Ok(())
}
