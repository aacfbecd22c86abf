//! Scenario files: structured text (TOML) describing the network, chain
//! parameters, adversary, and workload of one experiment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::Strategy;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub network: NetworkSection,
    pub chain: ChainSection,
    pub adversary: AdversarySection,
    pub workload: WorkloadSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Total sectors to pledge (n).
    pub sectors: u64,
    /// Candidate nodes for the pledge arrival process; nodes that draw no
    /// sector are removed.
    pub nodes: u64,
    pub delta_ms: u64,
    pub gst_ms: u64,
    pub bandwidth_bytes_per_ms: u64,
    pub pre_gst_drop_prob: f64,
    pub pre_gst_delay_mult: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub sector_size: u64,
    pub fragment_size: u64,
    pub pos_period: u64,
    pub pos_grace: u64,
    pub block_interval_ms: u64,
    pub max_block_txs: u64,
    /// 0 keeps genesis threshold-signature weights for the whole run.
    pub wts_refresh_every: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarySection {
    /// Fraction of the n sectors handed to corrupted miners.
    pub fraction: f64,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub files: u32,
    pub file_size: u64,
    pub gets_per_file: u32,
    /// Heights after the put at which the file expires; 0 = never.
    pub file_expiry: u64,
    /// Run at least this many committed heights (useful with files = 0).
    pub min_heights: u64,
    /// Give up on a retrieval after this many tries.
    pub max_get_tries: u32,
    pub time_cap_ms: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            seed: 42,
            network: NetworkSection::default(),
            chain: ChainSection::default(),
            adversary: AdversarySection::default(),
            workload: WorkloadSection::default(),
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            sectors: 10,
            nodes: 10,
            delta_ms: 20,
            gst_ms: 0,
            bandwidth_bytes_per_ms: 1_000_000,
            pre_gst_drop_prob: 0.2,
            pre_gst_delay_mult: 20,
        }
    }
}

impl Default for ChainSection {
    fn default() -> Self {
        ChainSection {
            sector_size: 1 << 16,
            fragment_size: 256,
            pos_period: 2,
            pos_grace: 2,
            block_interval_ms: 200,
            max_block_txs: 512,
            wts_refresh_every: 0,
        }
    }
}

impl Default for AdversarySection {
    fn default() -> Self {
        AdversarySection {
            fraction: 0.0,
            strategy: Strategy::Honest,
        }
    }
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            files: 2,
            file_size: 1 << 15,
            gets_per_file: 1,
            file_expiry: 0,
            min_heights: 1,
            max_get_tries: 50,
            time_cap_ms: 600_000_000,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let inv = |msg: String| Err(ScenarioError::Invalid(msg));
        let c = &self.chain;
        if c.fragment_size == 0 || c.sector_size % c.fragment_size != 0 {
            return inv("sector_size must be a multiple of fragment_size".into());
        }
        if !(c.sector_size / c.fragment_size).is_power_of_two() {
            return inv("sector_size / fragment_size must be a power of two".into());
        }
        if self.network.sectors < 4 {
            return inv(format!(
                "need at least 4 sectors to tolerate a fault, got {}",
                self.network.sectors
            ));
        }
        if self.network.nodes == 0 {
            return inv("need at least one candidate node".into());
        }
        if self.workload.files > 0 && self.workload.file_size == 0 {
            return inv("file_size must be positive".into());
        }
        // every put allocates one chunk in every sector
        let n = self.network.sectors;
        let f = crate::ledger::compute_f(n);
        let k = n - f;
        let unit = k * 8;
        let padded = self.workload.file_size.div_ceil(unit).max(1) * unit;
        let chunk = padded / k;
        if self.workload.files as u64 * chunk > c.sector_size {
            return inv(format!(
                "{} files of chunk size {} overflow {}-byte sectors",
                self.workload.files, chunk, c.sector_size
            ));
        }
        if !(0.0..=1.0).contains(&self.adversary.fraction) {
            return inv("adversary fraction must be in [0, 1]".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid_and_roundtrips() {
        let s = Scenario::default();
        s.validate().unwrap();
        let text = s.to_toml();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(back.seed, s.seed);
        assert_eq!(back.network.sectors, s.network.sectors);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let s = Scenario::from_toml(
            r#"
            name = "small"
            seed = 7
            [network]
            sectors = 7
            nodes = 7
            [adversary]
            fraction = 0.2
            strategy = "tamper-chunk"
            "#,
        )
        .unwrap();
        assert_eq!(s.network.sectors, 7);
        assert_eq!(s.adversary.strategy, Strategy::TamperChunk);
        assert_eq!(s.chain.fragment_size, 256); // default
    }

    #[test]
    fn invalid_schema_rejected() {
        assert!(Scenario::from_toml("nonsense = true").is_err());
        let bad = Scenario {
            network: NetworkSection {
                sectors: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(bad.validate().is_err());

        let overflow = Scenario {
            workload: WorkloadSection {
                files: 1000,
                file_size: 1 << 15,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(overflow.validate().is_err());
    }
}
