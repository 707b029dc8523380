use std::cell::Cell;
use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffusion::{KvKey, KvStore, LayerKv};

/// Counters for checking cache discipline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub writes: usize,
    pub hits: usize,
    /// Lookups of keys that were never written.
    pub misses: usize,
    pub evicted: usize,
}

/// Write-once store of self-attention keys and values keyed by
/// `(layer, timestep, frame, branch)`.
#[derive(Debug, Default)]
pub struct AttentionCache {
    entries: HashMap<KvKey, LayerKv>,
    writes: usize,
    hits: Cell<usize>,
    misses: Cell<usize>,
    evicted: usize,
}

impl AttentionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            writes: self.writes,
            hits: self.hits.get(),
            misses: self.misses.get(),
            evicted: self.evicted,
        }
    }

    pub fn contains_frame(&self, frame: usize) -> bool {
        self.entries.keys().any(|k| k.frame == frame)
    }

    /// Drops every entry whose frame fails `keep`.
    pub fn retain_frames(&mut self, keep: impl Fn(usize) -> bool) {
        let before = self.entries.len();
        self.entries.retain(|k, _| keep(k.frame));
        self.evicted += before - self.entries.len();
    }
}

impl KvStore for AttentionCache {
    fn get(&self, key: &KvKey) -> Option<(&Array2<f64>, &Array2<f64>)> {
        match self.entries.get(key) {
            Some((k, v)) => {
                self.hits.set(self.hits.get() + 1);
                Some((k, v))
            }
            None => {
                self.misses.set(self.misses.get() + 1);
                None
            }
        }
    }

    fn put(&mut self, key: KvKey, kv: LayerKv) -> Result<(), String> {
        if self.entries.contains_key(&key) {
            return Err(format!("entry {key:?} already written"));
        }
        self.entries.insert(key, kv);
        self.writes += 1;
        Ok(())
    }
}
