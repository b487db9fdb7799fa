use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_plan, GroupingError, GroupingPlan, OrderingStrategy};
use crate::discovery::{discover, DiscoveryError, DiscoveryParams, IscsStructure};
use crate::importance::ChannelScores;
use crate::tensor_io::ConvKernelSet;

pub const MANIFEST_VERSION: u32 = 1;

pub const GROUP_SIZE_CONVENTION: &str = "group_size counts the SC: one SC plus group_size-1 SAs";
pub const PERMUTATION_LAYOUT: &str =
    "groups concatenated in SC variance order, each slice-major; then bias channels ascending; then residual by descending variance";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSource {
    pub file: String,
    pub tensor: String,
    pub bias_tensor: Option<String>,
    pub shape: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestParams {
    pub discovery: DiscoveryParams,
    pub effective_num_groups: usize,
    pub slice_count: usize,
    pub ordering_strategy: OrderingStrategy,
    pub group_size_convention: String,
    pub permutation_layout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestScores {
    pub variance: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Persisted result of the one-time weight analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IscsManifest {
    pub version: u32,
    pub source: ManifestSource,
    pub params: ManifestParams,
    pub scores: ManifestScores,
    pub structure: IscsStructure,
    pub plan: GroupingPlan,
    /// Effective run configuration of the tool that produced the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestBuildError {
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
}

impl IscsManifest {
    /// Runs discovery and planning on a kernel set.
    pub fn analyze(
        kernels: &ConvKernelSet,
        source: ManifestSource,
        discovery: DiscoveryParams,
        slice_count: usize,
        strategy: OrderingStrategy,
    ) -> Result<(Self, ChannelScores), ManifestBuildError> {
        if slice_count == 0 {
            return Err(GroupingError::ZeroSlices.into());
        }
        if !discovery.group_size.is_multiple_of(slice_count) {
            return Err(GroupingError::Divisibility {
                group: discovery.group_size,
                slices: slice_count,
            }
            .into());
        }
        let (scores, structure) = discover(kernels, &discovery)?;
        let plan = build_plan(
            &structure,
            &scores.similarity,
            discovery.similarity_mode,
            slice_count,
            strategy,
        )?;
        let manifest = IscsManifest {
            version: MANIFEST_VERSION,
            source,
            params: ManifestParams {
                effective_num_groups: structure.groups.len(),
                discovery,
                slice_count,
                ordering_strategy: strategy,
                group_size_convention: GROUP_SIZE_CONVENTION.into(),
                permutation_layout: PERMUTATION_LAYOUT.into(),
            },
            scores: ManifestScores {
                variance: scores.variance.clone(),
                bias: scores.bias_mag.clone(),
            },
            structure,
            plan,
            run_config: None,
        };
        manifest.validate()?;
        Ok((manifest, scores))
    }

    pub fn channel_count(&self) -> usize {
        self.plan.permutation.len()
    }

    pub fn validate(&self) -> Result<(), GroupingError> {
        let bad = |m: String| Err(GroupingError::Manifest(m));
        if self.version != MANIFEST_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let c = self.source.shape[0];
        if self.plan.permutation.len() != c {
            return bad(format!(
                "permutation covers {} channels, source has {c}",
                self.plan.permutation.len()
            ));
        }
        if self.scores.variance.len() != c || self.scores.bias.len() != c {
            return bad("score vectors do not match channel count".into());
        }
        self.structure
            .validate(c, None)
            .map_err(|e| GroupingError::Manifest(e.to_string()))?;
        self.plan.validate()?;
        if self.plan.slice_count != self.params.slice_count
            || self.plan.ordering_strategy != self.params.ordering_strategy
        {
            return bad("plan parameters disagree with params".into());
        }
        if self.plan.groups.len() != self.structure.groups.len() {
            return bad("plan and structure have different group counts".into());
        }
        for (pg, sg) in self.plan.groups.iter().zip(&self.structure.groups) {
            let a: BTreeSet<usize> = pg.channels().collect();
            let b: BTreeSet<usize> = sg.channels().collect();
            if pg.sc != sg.sc || a != b {
                return bad(format!(
                    "group of SC {} differs between plan and structure",
                    sg.sc
                ));
            }
        }
        let tail: Vec<usize> = self
            .structure
            .bias_channels
            .iter()
            .chain(&self.structure.residual)
            .copied()
            .collect();
        if tail != self.plan.tail {
            return bad("plan tail differs from bias + residual channels".into());
        }
        Ok(())
    }

    /// Canonical serialization: pretty JSON, struct field order, trailing newline.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, GroupingError> {
        let m: IscsManifest = serde_json::from_slice(bytes)
            .map_err(|e| GroupingError::Manifest(format!("parse error: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, GroupingError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| GroupingError::Manifest(format!("{}: {e}", path.display())))?;
        Self::from_json_bytes(&bytes)
    }

    /// First 8 bytes of SHA-256 over the canonical JSON.
    pub fn hash(&self) -> [u8; 8] {
        let digest = Sha256::digest(self.to_json_bytes());
        digest[..8].try_into().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_kernels() -> ConvKernelSet {
        // Channels 0 and 1 are strong, 2..5 follow them with small
        // perturbations, 6 is a bias channel with negligible weights.
        let base = [[1.0, -1.0, 0.5, 0.0], [0.0, 0.5, 1.0, -1.0]];
        let mut w = Vec::new();
        w.extend_from_slice(&base[0]);
        w.extend_from_slice(&base[1]);
        for (i, b) in [0usize, 0, 1, 1].iter().enumerate() {
            let eps = 0.01 * (i as f64 + 1.0);
            w.extend(
                base[*b]
                    .iter()
                    .enumerate()
                    .map(|(j, v)| 0.5 * v + if j == i { eps } else { 0.0 }),
            );
        }
        w.extend_from_slice(&[1e-6, -1e-6, 1e-6, -1e-6]);
        let bias = vec![0.01, 0.02, 0.015, 0.03, 0.025, 0.012, 4.0];
        ConvKernelSet::new([7, 1, 2, 2], w, Some(bias)).unwrap()
    }

    fn source() -> ManifestSource {
        ManifestSource {
            file: "mem".into(),
            tensor: "w".into(),
            bias_tensor: Some("b".into()),
            shape: [7, 1, 2, 2],
        }
    }

    #[test]
    fn analyze_and_roundtrip() {
        let k = tiny_kernels();
        let (m, _) = IscsManifest::analyze(
            &k,
            source(),
            DiscoveryParams::new(3),
            3,
            OrderingStrategy::KnI,
        )
        .unwrap();
        assert_eq!(m.structure.bias_channels, vec![6]);
        assert_eq!(m.structure.sc_channels(), vec![0, 1]);
        let mut sa0 = m.structure.groups[0].sa.clone();
        sa0.sort();
        assert_eq!(sa0, vec![2, 3]);
        let back = IscsManifest::from_json_bytes(&m.to_json_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
    }

    #[test]
    fn indivisible_slices_rejected() {
        let err = IscsManifest::analyze(
            &tiny_kernels(),
            source(),
            DiscoveryParams::new(3),
            2,
            OrderingStrategy::KnI,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ManifestBuildError::Grouping(GroupingError::Divisibility { .. })
        ));
    }

    #[test]
    fn tampered_manifest_fails_validation() {
        let (mut m, _) = IscsManifest::analyze(
            &tiny_kernels(),
            source(),
            DiscoveryParams::new(3),
            1,
            OrderingStrategy::KnI,
        )
        .unwrap();
        m.plan.permutation.swap(0, 1);
        assert!(m.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let (m, _) = IscsManifest::analyze(
            &tiny_kernels(),
            source(),
            DiscoveryParams::new(3),
            1,
            OrderingStrategy::KnI,
        )
        .unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&m.to_json_bytes()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(IscsManifest::from_json_bytes(&serde_json::to_vec(&v).unwrap()).is_err());
    }
}
