//! Channel ordering and slicing.
//!
//! Each SC group is written as an ordered list `L = [sc, c_1, ..., c_{N-1}]`
//! and cut into `S` slices. Under kn+i indexing the channel at rank `r` goes
//! to slice `r mod S` at position `r / S`, so every slice gets an even mix of
//! high-, mid- and low-similarity members.

mod manifest;

pub use manifest::{
    IscsManifest, ManifestBuildError, ManifestParams, ManifestScores, ManifestSource,
    GROUP_SIZE_CONVENTION, MANIFEST_VERSION, PERMUTATION_LAYOUT,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discovery::{IscsStructure, SimilarityMode};
use crate::importance::SimilarityMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum GroupingError {
    #[error("slice count {slices} does not divide group size {group}")]
    Divisibility { group: usize, slices: usize },
    #[error("slice count must be at least 1")]
    ZeroSlices,
    #[error("groups have unequal sizes ({0} and {1})")]
    UnequalGroups(usize, usize),
    #[error("expected {expected} channels, got {actual}")]
    ChannelCount { expected: usize, actual: usize },
    #[error("permutation is not a bijection on 0..{0}")]
    NotBijection(usize),
    #[error("unknown ordering strategy {0:?}")]
    UnknownStrategy(String),
    #[error("manifest inconsistent: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderingStrategy {
    /// Descending similarity, strided into slices by `r mod S`.
    #[default]
    KnI,
    /// Ascending similarity, contiguous slices.
    CorrAscending,
    /// Descending similarity, contiguous slices.
    CorrDescending,
    /// Nearest-neighbour chain from the SC, contiguous slices.
    TspGreedy,
}

impl OrderingStrategy {
    pub const ALL: [OrderingStrategy; 4] = [
        OrderingStrategy::KnI,
        OrderingStrategy::CorrAscending,
        OrderingStrategy::CorrDescending,
        OrderingStrategy::TspGreedy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OrderingStrategy::KnI => "kn_i",
            OrderingStrategy::CorrAscending => "corr_ascending",
            OrderingStrategy::CorrDescending => "corr_descending",
            OrderingStrategy::TspGreedy => "tsp_greedy",
        }
    }
}

impl fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrderingStrategy {
    type Err = GroupingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| GroupingError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSlices {
    pub sc: usize,
    /// `slices[i][t]` is an original channel index.
    pub slices: Vec<Vec<usize>>,
}

impl GroupSlices {
    pub fn channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.slices.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingPlan {
    /// `permutation[new_position] = original_channel`.
    pub permutation: Vec<usize>,
    pub groups: Vec<GroupSlices>,
    pub slice_count: usize,
    pub ordering_strategy: OrderingStrategy,
    /// Channels outside the slice schedule, in permutation order
    /// (bias-dominated channels first, then residual).
    pub tail: Vec<usize>,
}

impl GroupingPlan {
    pub fn channel_count(&self) -> usize {
        self.permutation.len()
    }

    /// `inverse[original_channel] = new_position`.
    pub fn inverse(&self) -> Vec<usize> {
        invert_permutation(&self.permutation)
    }

    pub fn slice_size(&self) -> usize {
        self.groups
            .first()
            .and_then(|g| g.slices.first())
            .map_or(0, Vec::len)
    }

    /// Checks bijectivity, equal slice sizes and that groups concatenated
    /// slice-major followed by the tail reproduce the permutation.
    pub fn validate(&self) -> Result<(), GroupingError> {
        let n = self.permutation.len();
        if !is_permutation(&self.permutation) {
            return Err(GroupingError::NotBijection(n));
        }
        let size = self.slice_size();
        for g in &self.groups {
            if g.slices.len() != self.slice_count {
                return Err(GroupingError::Manifest(format!(
                    "group of SC {} has {} slices, expected {}",
                    g.sc,
                    g.slices.len(),
                    self.slice_count
                )));
            }
            if g.slices.iter().any(|s| s.len() != size) {
                return Err(GroupingError::Manifest(format!(
                    "group of SC {} has unequal slices",
                    g.sc
                )));
            }
        }
        let concat: Vec<usize> = self
            .groups
            .iter()
            .flat_map(GroupSlices::channels)
            .chain(self.tail.iter().copied())
            .collect();
        if concat != self.permutation {
            return Err(GroupingError::Manifest(
                "groups and tail do not reproduce the permutation".into(),
            ));
        }
        Ok(())
    }

    /// Identity plan with no groups.
    pub fn identity(channels: usize) -> Self {
        Self {
            permutation: (0..channels).collect(),
            groups: Vec::new(),
            slice_count: 1,
            ordering_strategy: OrderingStrategy::KnI,
            tail: (0..channels).collect(),
        }
    }
}

/// Strided kn+i split: rank `r` lands in slice `r % S` at position `r / S`.
pub fn slice_group(order: &[usize], slice_count: usize) -> Result<Vec<Vec<usize>>, GroupingError> {
    check_divisible(order.len(), slice_count)?;
    let per = order.len() / slice_count;
    let mut slices = vec![Vec::with_capacity(per); slice_count];
    for (r, &c) in order.iter().enumerate() {
        slices[r % slice_count].push(c);
    }
    Ok(slices)
}

/// Contiguous split: slice `i` holds ranks `[i * N/S, (i + 1) * N/S)`.
pub fn slice_contiguous(
    order: &[usize],
    slice_count: usize,
) -> Result<Vec<Vec<usize>>, GroupingError> {
    check_divisible(order.len(), slice_count)?;
    let per = order.len() / slice_count;
    Ok(order.chunks(per).map(<[usize]>::to_vec).collect())
}

fn check_divisible(n: usize, slice_count: usize) -> Result<(), GroupingError> {
    if slice_count == 0 {
        return Err(GroupingError::ZeroSlices);
    }
    if !n.is_multiple_of(slice_count) {
        return Err(GroupingError::Divisibility {
            group: n,
            slices: slice_count,
        });
    }
    Ok(())
}

/// Orders one group's channels, SC first.
pub fn order_group(
    sc: usize,
    members: &[usize],
    similarity: &SimilarityMatrix,
    mode: SimilarityMode,
    strategy: OrderingStrategy,
) -> Vec<usize> {
    let key = |a: usize, b: usize| mode.key(similarity.get(a, b));
    let mut out = Vec::with_capacity(members.len() + 1);
    out.push(sc);
    match strategy {
        OrderingStrategy::KnI | OrderingStrategy::CorrDescending => {
            let mut m = members.to_vec();
            m.sort_by(|&a, &b| key(sc, b).total_cmp(&key(sc, a)).then(a.cmp(&b)));
            out.extend(m);
        }
        OrderingStrategy::CorrAscending => {
            let mut m = members.to_vec();
            m.sort_by(|&a, &b| key(sc, a).total_cmp(&key(sc, b)).then(a.cmp(&b)));
            out.extend(m);
        }
        OrderingStrategy::TspGreedy => {
            let mut left = members.to_vec();
            let mut last = sc;
            while !left.is_empty() {
                let mut best = 0;
                for i in 1..left.len() {
                    let (ki, kb) = (key(last, left[i]), key(last, left[best]));
                    if ki > kb || (ki == kb && left[i] < left[best]) {
                        best = i;
                    }
                }
                last = left.remove(best);
                out.push(last);
            }
        }
    }
    out
}

fn slices_for(
    order: &[usize],
    slice_count: usize,
    strategy: OrderingStrategy,
) -> Result<Vec<Vec<usize>>, GroupingError> {
    match strategy {
        OrderingStrategy::KnI => slice_group(order, slice_count),
        _ => slice_contiguous(order, slice_count),
    }
}

/// Builds the global permutation: every group slice-major in group order,
/// then bias-dominated channels ascending, then residual channels.
pub fn build_plan(
    structure: &IscsStructure,
    similarity: &SimilarityMatrix,
    mode: SimilarityMode,
    slice_count: usize,
    strategy: OrderingStrategy,
) -> Result<GroupingPlan, GroupingError> {
    if slice_count == 0 {
        return Err(GroupingError::ZeroSlices);
    }
    if let (Some(a), Some(b)) = (
        structure.groups.first(),
        structure
            .groups
            .iter()
            .find(|g| g.len() != structure.groups[0].len()),
    ) {
        return Err(GroupingError::UnequalGroups(a.len(), b.len()));
    }
    let mut groups = Vec::with_capacity(structure.groups.len());
    for g in &structure.groups {
        let order = order_group(g.sc, &g.sa, similarity, mode, strategy);
        groups.push(GroupSlices {
            sc: g.sc,
            slices: slices_for(&order, slice_count, strategy)?,
        });
    }
    let mut bias = structure.bias_channels.clone();
    bias.sort_unstable();
    let tail: Vec<usize> = bias
        .into_iter()
        .chain(structure.residual.iter().copied())
        .collect();
    let permutation: Vec<usize> = groups
        .iter()
        .flat_map(GroupSlices::channels)
        .chain(tail.iter().copied())
        .collect();
    let plan = GroupingPlan {
        permutation,
        groups,
        slice_count,
        ordering_strategy: strategy,
        tail,
    };
    plan.validate()?;
    Ok(plan)
}

/// Baseline that groups channels in their original index order, ignoring
/// any similarity structure. Leftover channels form the tail.
pub fn build_naive_plan(
    channels: usize,
    group_size: usize,
    num_groups: usize,
    slice_count: usize,
) -> Result<GroupingPlan, GroupingError> {
    check_divisible(group_size, slice_count)?;
    if group_size * num_groups > channels {
        return Err(GroupingError::ChannelCount {
            expected: group_size * num_groups,
            actual: channels,
        });
    }
    let groups: Vec<GroupSlices> = (0..num_groups)
        .map(|g| {
            let order: Vec<usize> = (g * group_size..(g + 1) * group_size).collect();
            GroupSlices {
                sc: order[0],
                slices: slice_contiguous(&order, slice_count).expect("divisible"),
            }
        })
        .collect();
    let tail: Vec<usize> = (group_size * num_groups..channels).collect();
    Ok(GroupingPlan {
        permutation: (0..channels).collect(),
        groups,
        slice_count,
        ordering_strategy: OrderingStrategy::CorrDescending,
        tail,
    })
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter()
        .all(|&c| c < perm.len() && !std::mem::replace(&mut seen[c], true))
}

/// `inverse[perm[i]] = i`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &c) in perm.iter().enumerate() {
        inv[c] = i;
    }
    inv
}

/// Reorders per-channel items: output `i` is `channels[perm[i]]`.
pub fn apply_permutation<T: Clone>(
    channels: &[T],
    perm: &[usize],
) -> Result<Vec<T>, GroupingError> {
    if channels.len() != perm.len() {
        return Err(GroupingError::ChannelCount {
            expected: perm.len(),
            actual: channels.len(),
        });
    }
    Ok(perm.iter().map(|&c| channels[c].clone()).collect())
}

/// Channel-wise permutation of an interleaved `[position][channel]` buffer.
pub fn permute_interleaved<T: Copy>(data: &[T], perm: &[usize]) -> Result<Vec<T>, GroupingError> {
    let c = perm.len();
    if c == 0 || !data.len().is_multiple_of(c) {
        return Err(GroupingError::ChannelCount {
            expected: c,
            actual: data.len(),
        });
    }
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(c) {
        out.extend(perm.iter().map(|&i| row[i]));
    }
    Ok(out)
}
