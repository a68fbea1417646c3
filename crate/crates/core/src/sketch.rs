use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crate::atomics::{ReclaimStats, Reclaimer};
use crate::coins::CoinSource;
use crate::config::{CoinMode, SketchConfig};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::gather::{GatherSortUnit, HoleStats, UpdaterContext};
use crate::levels::{LevelDump, LevelHierarchy, LevelStats};
use crate::query::{collect_snapshot, Collected, QueryContext};
use crate::tritmap::Tritmap;

pub(crate) struct Shared<T> {
    pub(crate) config: SketchConfig,
    pub(crate) levels: LevelHierarchy<T>,
    pub(crate) units: Vec<GatherSortUnit<T>>,
    reclaimer: Arc<Reclaimer>,
    live_updaters: AtomicUsize,
    retired_updates: AtomicU64,
    retired_local: AtomicU64,
}

impl<T> Shared<T> {
    pub(crate) fn retire_updater(&self, updates: u64, local: u64) {
        self.retired_updates.fetch_add(updates, Ordering::SeqCst);
        self.retired_local.fetch_add(local, Ordering::SeqCst);
        self.live_updaters.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Element accounting at a quiescent point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Audit {
    /// Elements summarized by the levels.
    pub stream_size: u64,
    /// Elements in reserved slots of open windows.
    pub unit_buffered: u64,
    /// Elements left in the local buffers of dropped updaters.
    pub local_buffered: u64,
    /// `update` calls made through dropped updaters.
    pub updates: u64,
}

impl Audit {
    /// Every update is either summarized or still buffered.
    pub fn is_conserved(&self) -> bool {
        self.stream_size + self.unit_buffered + self.local_buffered == self.updates
    }

    /// Updates not yet visible to queries.
    pub fn unpropagated(&self) -> u64 {
        self.updates - self.stream_size
    }
}

/// A concurrent quantiles sketch.
///
/// Cloning yields another handle to the same sketch. Each update thread
/// obtains its own [`UpdaterContext`] and each query thread its own
/// [`QueryContext`].
pub struct Quancurrent<T: Element> {
    shared: Arc<Shared<T>>,
}

impl<T: Element> Clone for Quancurrent<T> {
    fn clone(&self) -> Self {
        Self {
            shared: Arc::clone(&self.shared),
        }
    }
}

impl<T: Element> std::fmt::Debug for Quancurrent<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Quancurrent")
            .field("k", &self.shared.config.k)
            .field("b", &self.shared.config.b)
            .field("tritmap", &self.tritmap())
            .finish()
    }
}

impl<T: Element> Quancurrent<T> {
    pub fn new(config: SketchConfig) -> Result<Self> {
        config.validate()?;
        let reclaimer = Reclaimer::with_capacity(
            config.max_participants,
            config.poison_reclaim,
            16 * 1024,
        );
        let levels = LevelHierarchy::new(config.k, config.max_level, Arc::clone(&reclaimer));
        let units = (0..config.numa_nodes)
            .map(|_| GatherSortUnit::new(config.k, config.b, T::default(), config.instrumented))
            .collect::<Result<_>>()?;
        Ok(Self {
            shared: Arc::new(Shared {
                config,
                levels,
                units,
                reclaimer,
                live_updaters: AtomicUsize::new(0),
                retired_updates: AtomicU64::new(0),
                retired_local: AtomicU64::new(0),
            }),
        })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.shared.config
    }

    /// Registers update thread `thread_id` (in `0..update_threads`).
    pub fn updater(&self, thread_id: usize) -> Result<UpdaterContext<T>> {
        let c = &self.shared.config;
        if thread_id >= c.update_threads {
            return Err(Error::InvalidConfig(format!(
                "thread id {thread_id} outside 0..{}",
                c.update_threads
            )));
        }
        let coins = match &c.coins {
            CoinMode::PerThread => CoinSource::seeded(mix(c.seed, thread_id as u64)),
            CoinMode::Injected(seq) => CoinSource::injected(Arc::clone(seq)),
        };
        let participant = self.shared.reclaimer.register()?;
        self.shared.live_updaters.fetch_add(1, Ordering::SeqCst);
        Ok(UpdaterContext::new(Arc::clone(&self.shared), thread_id, coins, participant))
    }

    /// A query handle that reuses its snapshot while the stream has grown
    /// by at most a fraction `rho` since it was collected.
    pub fn query_context(&self, rho: f64) -> Result<QueryContext<T>> {
        let participant = self.shared.reclaimer.register()?;
        QueryContext::new(Arc::clone(&self.shared), participant, rho)
    }

    /// One-off uncached quantile query.
    pub fn query(&self, phi: f64) -> Result<T> {
        self.query_context(0.0)?.query(phi)
    }

    /// Collects a snapshot without caching it.
    pub fn collect(&self) -> Result<Collected<T>> {
        let p = self.shared.reclaimer.register()?;
        collect_snapshot(&self.shared.levels, &p)
    }

    pub fn tritmap(&self) -> Tritmap {
        match self.shared.reclaimer.register() {
            Ok(p) => self.shared.levels.tritmap(&p.pin()),
            Err(_) => Tritmap::EMPTY,
        }
    }

    /// Elements currently summarized by the levels.
    pub fn stream_size(&self) -> u64 {
        self.tritmap().stream_size(self.shared.config.k)
    }

    pub fn dump(&self) -> Result<LevelDump> {
        let p = self.shared.reclaimer.register()?;
        let g = p.pin();
        Ok(self.shared.levels.dump(&g))
    }

    /// Checks tritmap/level coherence. Only meaningful at quiescence.
    pub fn check_quiescent(&self) -> Result<()> {
        let p = self.shared.reclaimer.register()?;
        let g = p.pin();
        self.shared.levels.check_quiescent(&g)
    }

    /// Element accounting. Exact once every updater has been dropped.
    pub fn audit(&self) -> Result<Audit> {
        let live = self.shared.live_updaters.load(Ordering::SeqCst);
        if live != 0 {
            return Err(Error::InvalidConfig(format!(
                "audit requires all updaters to be dropped, {live} still live"
            )));
        }
        Ok(Audit {
            stream_size: self.stream_size(),
            unit_buffered: self.shared.units.iter().map(|u| u.buffered()).sum(),
            local_buffered: self.shared.retired_local.load(Ordering::SeqCst),
            updates: self.shared.retired_updates.load(Ordering::SeqCst),
        })
    }

    pub fn hole_stats(&self) -> HoleStats {
        self.shared.units.iter().fold(HoleStats::default(), |acc, u| {
            let s = u.hole_stats();
            HoleStats {
                batches: acc.batches + s.batches,
                holes: acc.holes + s.holes,
            }
        })
    }

    /// Values duplicated by holes. Empty unless instrumented.
    pub fn hole_duplicates(&self) -> Vec<T> {
        self.shared.units.iter().flat_map(|u| u.duplicates()).collect()
    }

    /// Number of hole duplicates recorded so far. With one unit this is a
    /// prefix length of [`Self::hole_duplicates`].
    pub fn hole_duplicate_count(&self) -> usize {
        self.shared.units.iter().map(|u| u.duplicate_count()).sum()
    }

    pub fn level_stats(&self) -> LevelStats {
        self.shared.levels.stats()
    }

    pub fn reclaim_stats(&self) -> ReclaimStats {
        self.shared.reclaimer.stats()
    }

    /// True once a batch overflowed the top level; the sketch then rejects
    /// further batches.
    pub fn is_wedged(&self) -> bool {
        self.shared.levels.is_wedged()
    }
}

fn mix(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
