//! Assembles the salient channel structure from [`ChannelScores`]: bias
//! outliers are set aside, the highest-variance channels become salient-core
//! (SC) anchors, and each SC greedily claims its most similar remaining
//! channels as salient-auxiliary (SA) members.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::importance::{rank_descending, ChannelScores, ImportanceError};
use crate::tensor_io::ConvKernelSet;

/// Scale factor turning a MAD into a consistent estimate of a normal sigma.
const MAD_TO_SIGMA: f64 = 1.4826;

#[derive(Debug, Error, PartialEq)]
pub enum DiscoveryError {
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("number of groups must be at least 1")]
    NoGroups,
    #[error("bias z threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("need at least 2 channels, got {0}")]
    TooFewChannels(usize),
    #[error("{requested} SC channels requested but only {available} non-bias channels exist")]
    TooManyGroups { requested: usize, available: usize },
    #[error("channel {channel} out of range for {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error(transparent)]
    Score(#[from] ImportanceError),
    #[error("structure invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Signed cosine, most positive first.
    #[default]
    Raw,
    /// Absolute cosine; anti-correlated kernels count as similar.
    Absolute,
}

impl SimilarityMode {
    #[inline]
    pub fn key(self, s: f64) -> f64 {
        match self {
            SimilarityMode::Raw => s,
            SimilarityMode::Absolute => s.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryParams {
    /// Channels per group including its SC.
    pub group_size: usize,
    /// Number of groups; `None` means `floor((C_out - |bias|) / group_size)`.
    pub num_groups: Option<usize>,
    pub bias_z_threshold: f64,
    pub similarity_mode: SimilarityMode,
}

impl DiscoveryParams {
    pub const DEFAULT_BIAS_Z: f64 = 3.5;

    pub fn new(group_size: usize) -> Self {
        Self {
            group_size,
            num_groups: None,
            bias_z_threshold: Self::DEFAULT_BIAS_Z,
            similarity_mode: SimilarityMode::Raw,
        }
    }

    pub fn validate(&self) -> Result<(), DiscoveryError> {
        if self.group_size < 2 {
            return Err(DiscoveryError::GroupSize(self.group_size));
        }
        if self.num_groups == Some(0) {
            return Err(DiscoveryError::NoGroups);
        }
        if self.bias_z_threshold.is_nan() || self.bias_z_threshold <= 0.0 {
            return Err(DiscoveryError::Threshold(self.bias_z_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScGroup {
    pub sc: usize,
    /// SA channels ordered by similarity to `sc`, most similar first.
    pub sa: Vec<usize>,
}

impl ScGroup {
    pub fn channels(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.sc).chain(self.sa.iter().copied())
    }

    pub fn len(&self) -> usize {
        1 + self.sa.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IscsStructure {
    pub groups: Vec<ScGroup>,
    /// Ascending channel indices.
    pub bias_channels: Vec<usize>,
    /// Unassigned channels by descending variance.
    pub residual: Vec<usize>,
}

impl IscsStructure {
    pub fn channel_count(&self) -> usize {
        self.groups.iter().map(ScGroup::len).sum::<usize>()
            + self.bias_channels.len()
            + self.residual.len()
    }

    pub fn sc_channels(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.sc).collect()
    }

    /// Checks that groups, bias channels and residual partition `0..c_out`
    /// and that each group's SA list is ordered by non-increasing similarity.
    pub fn validate(
        &self,
        c_out: usize,
        scores: Option<(&ChannelScores, SimilarityMode)>,
    ) -> Result<(), DiscoveryError> {
        let mut seen = vec![false; c_out];
        let all = self
            .groups
            .iter()
            .flat_map(|g| g.channels())
            .chain(self.bias_channels.iter().copied())
            .chain(self.residual.iter().copied());
        for c in all {
            if c >= c_out {
                return Err(DiscoveryError::ChannelOutOfRange {
                    channel: c,
                    channels: c_out,
                });
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(DiscoveryError::Invariant(format!(
                    "channel {c} appears twice"
                )));
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(DiscoveryError::Invariant(format!(
                "channel {c} is not covered"
            )));
        }
        if let Some((scores, mode)) = scores {
            for g in &self.groups {
                let sims: Vec<f64> =
                    g.sa.iter()
                        .map(|&c| mode.key(scores.similarity.get(g.sc, c)))
                        .collect();
                if sims.windows(2).any(|w| w[1] > w[0]) {
                    return Err(DiscoveryError::Invariant(format!(
                        "SA list of SC {} is not ordered by similarity",
                        g.sc
                    )));
                }
            }
        }
        Ok(())
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Robust z-scores `(x - median) / (1.4826 * MAD)`, or `None` when MAD is 0.
pub fn robust_z_scores(values: &[f64]) -> Option<Vec<f64>> {
    let med = median(&sorted(values.iter().copied()));
    let mad = median(&sorted(values.iter().map(|v| (v - med).abs())));
    if mad == 0.0 {
        return None;
    }
    let scale = MAD_TO_SIGMA * mad;
    Some(values.iter().map(|v| (v - med) / scale).collect())
}

/// Channels whose bias magnitude is a robust outlier above `threshold`.
/// With a degenerate MAD every channel strictly above the median is flagged.
pub fn flag_bias_dominated(bias_mag: &[f64], threshold: f64) -> Vec<usize> {
    if bias_mag.len() < 2 {
        return Vec::new();
    }
    match robust_z_scores(bias_mag) {
        Some(z) => (0..bias_mag.len()).filter(|&c| z[c] > threshold).collect(),
        None => {
            let med = median(&sorted(bias_mag.iter().copied()));
            (0..bias_mag.len()).filter(|&c| bias_mag[c] > med).collect()
        }
    }
}

/// Top-`m` channels by variance, skipping bias-dominated ones.
pub fn select_scs(
    variance: &[f64],
    bias_channels: &[usize],
    m: usize,
) -> Result<Vec<usize>, DiscoveryError> {
    let excluded: BTreeSet<usize> = bias_channels.iter().copied().collect();
    let available = variance.len() - excluded.len();
    if m > available {
        return Err(DiscoveryError::TooManyGroups {
            requested: m,
            available,
        });
    }
    Ok(rank_descending(variance)?
        .into_iter()
        .filter(|c| !excluded.contains(c))
        .take(m)
        .collect())
}

/// Greedy exclusive SA assignment in SC order. An SC that cannot fill a
/// complete group of `group_size` is demoted to the residual together with
/// whatever remains in the pool.
pub fn assign_sas(
    scores: &ChannelScores,
    scs: &[usize],
    bias_channels: &[usize],
    group_size: usize,
    mode: SimilarityMode,
) -> Result<IscsStructure, DiscoveryError> {
    if group_size < 2 {
        return Err(DiscoveryError::GroupSize(group_size));
    }
    let c_out = scores.channels();
    for &c in scs.iter().chain(bias_channels) {
        if c >= c_out {
            return Err(DiscoveryError::ChannelOutOfRange {
                channel: c,
                channels: c_out,
            });
        }
    }
    let mut taken = vec![false; c_out];
    for &c in scs.iter().chain(bias_channels) {
        taken[c] = true;
    }
    let mut groups = Vec::with_capacity(scs.len());
    let mut demoted = Vec::new();
    for &sc in scs {
        let mut pool: Vec<usize> = (0..c_out).filter(|&c| !taken[c]).collect();
        if pool.len() < group_size - 1 {
            demoted.push(sc);
            continue;
        }
        let row = scores.similarity.row(sc);
        pool.sort_by(|&a, &b| {
            mode.key(row[b])
                .total_cmp(&mode.key(row[a]))
                .then(a.cmp(&b))
        });
        pool.truncate(group_size - 1);
        for &c in &pool {
            taken[c] = true;
        }
        groups.push(ScGroup { sc, sa: pool });
    }
    for sc in demoted {
        taken[sc] = false;
    }
    let mut bias: Vec<usize> = bias_channels.to_vec();
    bias.sort_unstable();
    for &c in &bias {
        taken[c] = true;
    }
    let residual: Vec<usize> = rank_descending(&scores.variance)?
        .into_iter()
        .filter(|&c| !taken[c])
        .collect();
    Ok(IscsStructure {
        groups,
        bias_channels: bias,
        residual,
    })
}

/// Number of groups used when the caller leaves it unset.
pub fn default_num_groups(c_out: usize, bias_count: usize, group_size: usize) -> usize {
    (c_out - bias_count) / group_size
}

/// Full structure discovery from precomputed scores.
pub fn discover_from_scores(
    scores: &ChannelScores,
    params: &DiscoveryParams,
) -> Result<IscsStructure, DiscoveryError> {
    params.validate()?;
    let c_out = scores.channels();
    if c_out < 2 {
        return Err(DiscoveryError::TooFewChannels(c_out));
    }
    let bias = flag_bias_dominated(&scores.bias_mag, params.bias_z_threshold);
    let m = params
        .num_groups
        .unwrap_or_else(|| default_num_groups(c_out, bias.len(), params.group_size));
    let scs = select_scs(&scores.variance, &bias, m)?;
    let structure = assign_sas(
        scores,
        &scs,
        &bias,
        params.group_size,
        params.similarity_mode,
    )?;
    debug_assert!(structure
        .validate(c_out, Some((scores, params.similarity_mode)))
        .is_ok());
    Ok(structure)
}

/// One-time weight analysis: scores the kernels and assembles the structure.
pub fn discover(
    k: &ConvKernelSet,
    params: &DiscoveryParams,
) -> Result<(ChannelScores, IscsStructure), DiscoveryError> {
    params.validate()?;
    let scores = ChannelScores::compute(k);
    let structure = discover_from_scores(&scores, params)?;
    Ok((scores, structure))
}
