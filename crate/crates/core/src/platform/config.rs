//! Platform description: topology kind, per-GPU geometry, hop latencies,
//! and interconnect parameters. Loaded from TOML; four presets ship with
//! the crate.

use serde::Deserialize;

use crate::memsys::mapper::MapScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    /// Single 64-CU GPU.
    Sgpu,
    /// Hypothetical monolithic 256-CU single GPU (scaled x4, no PCIe).
    Msgpu,
    /// 4 GPUs presented as one: only GPU 0's CP/ACE are active and
    /// dispatch to all 256 CUs; memory interleaved across all banks.
    Umgpu,
    /// 4 discrete GPUs with partitioned memory and RDMA over PCIe.
    Dmgpu,
}

impl TopologyKind {
    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Sgpu => "sgpu",
            TopologyKind::Msgpu => "msgpu",
            TopologyKind::Umgpu => "umgpu",
            TopologyKind::Dmgpu => "dmgpu",
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct CacheCfg {
    pub size_kb: u64,
    pub assoc: u32,
    pub hit_latency: u64,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
pub struct GpuCfg {
    pub cu_count: u32,
    pub l2_units: u32,
    pub dram_banks: u32,
    pub dram_bank_mb: u64,
    pub dram_latency: u64,
    pub dram_service: u64,
    pub wavefront_slots: u32,
    pub lds_kb: u32,
    /// CUs sharing one instruction cache.
    pub cus_per_l1i: u32,
    pub l1i: CacheCfg,
    pub l1v: CacheCfg,
    pub l2: CacheCfg,
}

/// Per-hop wire latencies (cycles) and port buffering. The split of the
/// end-to-end latency budget across hops is a config artifact; only the
/// end-to-end round trips are calibrated.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct LinkCfg {
    pub ctrl: u64,
    pub ace_cu: u64,
    /// U-MGPU cross-GPU dispatch link (ACE 0 to remote CUs).
    pub ace_cu_remote: u64,
    pub cu_l1i: u64,
    pub l1_router: u64,
    pub cu_router: u64,
    pub router_l2: u64,
    pub l2_dram: u64,
    pub rdma_router: u64,
    pub credits: u32,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct PcieCfg {
    pub latency: u64,
    pub bytes_per_cycle: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PlatformConfig {
    pub topology: TopologyKind,
    pub gpus: u32,
    pub scheme: MapScheme,
    pub gpu: GpuCfg,
    pub link: LinkCfg,
    pub pcie: PcieCfg,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown platform preset `{0}` (expected r9nano, msgpu, umgpu, or dmgpu)")]
    UnknownPreset(String),
    #[error("failed to parse platform config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid platform config: {0}")]
    Invalid(String),
}

impl PlatformConfig {
    pub fn from_toml(text: &str) -> Result<PlatformConfig, ConfigError> {
        let cfg: PlatformConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<PlatformConfig, ConfigError> {
        let text = match name {
            "r9nano" | "sgpu" => include_str!("../../configs/r9nano.toml"),
            "msgpu" => include_str!("../../configs/msgpu.toml"),
            "umgpu" => include_str!("../../configs/umgpu.toml"),
            "dmgpu" => include_str!("../../configs/dmgpu.toml"),
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        PlatformConfig::from_toml(text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        match self.topology {
            TopologyKind::Sgpu => {
                if self.gpus != 1 {
                    return err(format!("sgpu needs exactly 1 GPU, got {}", self.gpus));
                }
            }
            TopologyKind::Msgpu => {
                if self.gpus != 1 || self.gpu.cu_count != 256 {
                    return err("msgpu is one GPU with 256 CUs".into());
                }
                if self.scheme != MapScheme::InterleaveAll {
                    return err("msgpu uses interleave-all mapping".into());
                }
            }
            TopologyKind::Umgpu => {
                if self.gpus != 4 {
                    return err("umgpu needs 4 GPUs".into());
                }
                if self.scheme != MapScheme::InterleaveAll {
                    return err("umgpu uses interleave-all mapping".into());
                }
            }
            TopologyKind::Dmgpu => {
                if self.gpus != 4 {
                    return err("dmgpu needs 4 GPUs".into());
                }
                if self.scheme != MapScheme::PartitionInterleave {
                    return err("dmgpu uses partition-then-interleave mapping".into());
                }
            }
        }
        if self.gpu.cu_count % self.gpu.cus_per_l1i != 0 {
            return err("cu_count must divide evenly into L1I groups".into());
        }
        if self.gpu.l2_units != self.gpu.dram_banks {
            return err("one DRAM bank per L2 unit is assumed".into());
        }
        Ok(())
    }

    pub fn dram_bank_bytes(&self) -> u64 {
        self.gpu.dram_bank_mb << 20
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse_and_validate() {
        for name in ["r9nano", "msgpu", "umgpu", "dmgpu"] {
            let cfg = PlatformConfig::preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.gpu.l2_units, cfg.gpu.dram_banks);
        }
    }

    #[test]
    fn preset_shapes_match_topology() {
        let sgpu = PlatformConfig::preset("r9nano").unwrap();
        assert_eq!((sgpu.gpus, sgpu.gpu.cu_count, sgpu.gpu.l2_units), (1, 64, 8));
        let msgpu = PlatformConfig::preset("msgpu").unwrap();
        assert_eq!((msgpu.gpus, msgpu.gpu.cu_count, msgpu.gpu.l2_units), (1, 256, 32));
        let umgpu = PlatformConfig::preset("umgpu").unwrap();
        assert_eq!((umgpu.gpus, umgpu.gpu.cu_count), (4, 64));
        assert_eq!(umgpu.scheme, MapScheme::InterleaveAll);
        let dmgpu = PlatformConfig::preset("dmgpu").unwrap();
        assert_eq!(dmgpu.scheme, MapScheme::PartitionInterleave);
    }

    #[test]
    fn inconsistent_topology_scheme_is_rejected() {
        let mut cfg = PlatformConfig::preset("dmgpu").unwrap();
        cfg.scheme = MapScheme::InterleaveAll;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(matches!(
            PlatformConfig::preset("gt730"),
            Err(ConfigError::UnknownPreset(_))
        ));
    }
}
