use serde::{Deserialize, Serialize};

use crate::error::CacheError;
use crate::types::Tier;

/// Either direct token capacities or an HBM capacity derived from memory
/// sizes, `T_max = floor(M_KV / m_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityConfig {
    Tokens {
        hbm: u64,
        dram: u64,
        ssd: u64,
    },
    Memory {
        kv_bytes: u64,
        bytes_per_token: u64,
        dram_tokens: u64,
        ssd_tokens: u64,
    },
}

impl CapacityConfig {
    pub fn tokens(hbm: u64, dram: u64, ssd: u64) -> Self {
        CapacityConfig::Tokens { hbm, dram, ssd }
    }

    pub fn resolve(&self) -> Result<[u64; 3], CacheError> {
        match *self {
            CapacityConfig::Tokens { hbm, dram, ssd } => {
                if hbm == 0 {
                    return Err(CacheError::InvalidCapacity("hbm capacity must be positive".into()));
                }
                Ok([hbm, dram, ssd])
            }
            CapacityConfig::Memory {
                kv_bytes,
                bytes_per_token,
                dram_tokens,
                ssd_tokens,
            } => Ok([
                max_concurrent_tokens(kv_bytes, bytes_per_token)?,
                dram_tokens,
                ssd_tokens,
            ]),
        }
    }
}

/// `floor(kv_bytes / bytes_per_token)`.
pub fn max_concurrent_tokens(kv_bytes: u64, bytes_per_token: u64) -> Result<u64, CacheError> {
    if bytes_per_token == 0 {
        return Err(CacheError::InvalidCapacity("bytes_per_token must be positive".into()));
    }
    let t = kv_bytes / bytes_per_token;
    if t == 0 {
        return Err(CacheError::InvalidCapacity(
            "KV memory smaller than one token".into(),
        ));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierBudget {
    pub capacity_tokens: [u64; 3],
    pub used_tokens: [u64; 3],
}

impl TierBudget {
    pub fn new(capacity_tokens: [u64; 3]) -> Self {
        Self {
            capacity_tokens,
            used_tokens: [0; 3],
        }
    }

    pub fn capacity(&self, t: Tier) -> u64 {
        self.capacity_tokens[t.index()]
    }

    pub fn used(&self, t: Tier) -> u64 {
        self.used_tokens[t.index()]
    }

    pub fn free(&self, t: Tier) -> u64 {
        self.capacity(t).saturating_sub(self.used(t))
    }

    pub(crate) fn add(&mut self, t: Tier, n: u64) {
        self.used_tokens[t.index()] += n;
        debug_assert!(self.used(t) <= self.capacity(t), "tier {t:?} over budget");
    }

    pub(crate) fn sub(&mut self, t: Tier, n: u64) {
        debug_assert!(self.used(t) >= n);
        self.used_tokens[t.index()] -= n;
    }

    pub fn total_used(&self) -> u64 {
        self.used_tokens.iter().sum()
    }

    pub fn within_capacity(&self) -> bool {
        Tier::ALL.iter().all(|&t| self.used(t) <= self.capacity(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_config_floors() {
        let c = CapacityConfig::Memory {
            kv_bytes: 1_000_003,
            bytes_per_token: 1000,
            dram_tokens: 0,
            ssd_tokens: 0,
        };
        assert_eq!(c.resolve().unwrap()[0], 1000);
        assert!(max_concurrent_tokens(10, 0).is_err());
        assert!(max_concurrent_tokens(10, 11).is_err());
    }
}
