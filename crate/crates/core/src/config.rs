use std::sync::Arc;

use crate::coins::InjectedCoins;
use crate::error::{Error, Result};
use crate::tritmap::MAX_LEVEL;

/// Where propagating owners draw their sampling coins from.
#[derive(Debug, Clone)]
pub enum CoinMode {
    /// Independent per-thread generators derived from the sketch seed.
    PerThread,
    /// One shared, predetermined sequence consumed in propagation order.
    Injected(Arc<InjectedCoins>),
}

/// Construction parameters of a concurrent sketch.
#[derive(Debug, Clone)]
pub struct SketchConfig {
    /// Summary size; level 0 holds `2k` elements, higher levels `k` or `2k`.
    pub k: usize,
    /// Thread-local buffer size. Must divide `2k`.
    pub b: usize,
    /// Number of ingest units, one per memory node.
    pub numa_nodes: usize,
    /// Number of update threads that will be registered.
    pub update_threads: usize,
    /// Highest level index; batches cannot propagate past it.
    pub max_level: usize,
    pub seed: u64,
    pub coins: CoinMode,
    /// Track holes and the stale values they duplicate.
    pub instrumented: bool,
    /// Poison and quarantine reclaimed memory instead of freeing it.
    pub poison_reclaim: bool,
    /// Registration slots for reclamation; bounds concurrent handles.
    pub max_participants: usize,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            k: 4096,
            b: 16,
            numa_nodes: 1,
            update_threads: 1,
            max_level: MAX_LEVEL,
            seed: 0,
            coins: CoinMode::PerThread,
            instrumented: false,
            poison_reclaim: false,
            max_participants: 256,
        }
    }
}

impl SketchConfig {
    pub fn new(k: usize, b: usize) -> Self {
        Self {
            k,
            b,
            ..Self::default()
        }
    }

    pub fn with_threads(mut self, update_threads: usize, numa_nodes: usize) -> Self {
        self.update_threads = update_threads;
        self.numa_nodes = numa_nodes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_coins(mut self, coins: CoinMode) -> Self {
        self.coins = coins;
        self
    }

    pub fn with_max_level(mut self, max_level: usize) -> Self {
        self.max_level = max_level;
        self
    }

    pub fn instrumented(mut self, on: bool) -> Self {
        self.instrumented = on;
        self
    }

    pub fn poison_reclaim(mut self, on: bool) -> Self {
        self.poison_reclaim = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.b == 0 || !(2 * self.k).is_multiple_of(self.b) {
            return bad("b must be positive and divide 2k");
        }
        if self.numa_nodes == 0 {
            return bad("at least one node is required");
        }
        if self.update_threads < self.numa_nodes {
            return bad("update threads must be at least the number of nodes");
        }
        if self.max_level == 0 || self.max_level > MAX_LEVEL {
            return bad("max_level must be in 1..=31");
        }
        // Stream sizes reach 2k * 2^(max_level + 1) and must fit in a u64.
        if (self.k as u64).leading_zeros() < self.max_level as u32 + 3 {
            return bad("k too large for the stream-size range");
        }
        if self.max_participants < self.update_threads {
            return bad("max_participants must cover every update thread");
        }
        Ok(())
    }

    /// Largest stream the levels can absorb before the top level overflows.
    pub fn capacity(&self) -> u64 {
        2 * self.k as u64 * ((1u64 << (self.max_level + 1)) - 1)
    }

    /// Node serving `thread_id`: threads fill nodes in contiguous blocks.
    pub fn node_of(&self, thread_id: usize) -> usize {
        let per_node = self.update_threads.div_ceil(self.numa_nodes).max(1);
        (thread_id / per_node).min(self.numa_nodes - 1)
    }
}
