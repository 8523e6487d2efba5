use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indicator vector of a seed set over the nodes of one graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedVector {
    flags: Vec<bool>,
}

impl SeedVector {
    pub fn empty(node_count: usize) -> Self {
        SeedVector {
            flags: vec![false; node_count],
        }
    }

    pub fn full(node_count: usize) -> Self {
        SeedVector {
            flags: vec![true; node_count],
        }
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        SeedVector { flags }
    }

    pub fn from_indices(node_count: usize, indices: &[usize]) -> Result<Self> {
        let mut flags = vec![false; node_count];
        for &i in indices {
            if i >= node_count {
                return Err(Error::invalid(format!(
                    "seed index {i} out of range for {node_count} nodes"
                )));
            }
            flags[i] = true;
        }
        Ok(SeedVector { flags })
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn insert(&mut self, i: usize) {
        self.flags[i] = true;
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Number of seeds.
    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Sorted seed node ids.
    pub fn indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect()
    }

    pub fn is_subset_of(&self, other: &SeedVector) -> bool {
        self.flags
            .iter()
            .zip(&other.flags)
            .all(|(&a, &b)| !a || b)
    }

    pub(crate) fn check_len(&self, node_count: usize) -> Result<()> {
        if self.flags.len() != node_count {
            return Err(Error::invalid(format!(
                "seed vector has length {} but the graph has {node_count} nodes",
                self.flags.len()
            )));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives an independent stream key from a parent key and a label.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    mix64(parent ^ mix64(label.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Uniform `[0, 1)` value keyed on `(key, a, b)`.
pub(crate) fn unit_hash(key: u64, a: u64, b: u64) -> f64 {
    let h = mix64(key ^ mix64(a ^ mix64(b.wrapping_mul(0xD6E8_FEB8_6659_FD93))));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
