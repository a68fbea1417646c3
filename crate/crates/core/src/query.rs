//! Query path: a double-collect snapshot of the levels, rebuilt from the top
//! down so each element is counted once, cached per query thread.

use std::sync::Arc;

use crate::atomics::Participant;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::levels::{LevelArray, LevelHierarchy};
use crate::sequential::WeightedSamples;
use crate::sketch::Shared;
use crate::tritmap::{pow3, Tritmap};

/// A consistent view of the levels.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    entries: Vec<(usize, Arc<LevelArray<T>>)>,
    represented: u64,
    tritmap: Tritmap,
    samples: WeightedSamples<T>,
}

impl<T: Element> Snapshot<T> {
    /// Included levels, highest first.
    pub fn entries(&self) -> &[(usize, Arc<LevelArray<T>>)] {
        &self.entries
    }

    /// Stream size the snapshot summarizes.
    pub fn represented_size(&self) -> u64 {
        self.represented
    }

    /// Trits of the included levels: level size divided by `k`.
    pub fn tritmap(&self) -> Tritmap {
        self.tritmap
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn samples(&self) -> &WeightedSamples<T> {
        &self.samples
    }

    pub fn estimate(&self, phi: f64) -> Result<T> {
        snapshot_estimate(self, phi)
    }
}

/// Weighted bracket-rule estimate over a snapshot.
pub fn snapshot_estimate<T: Element>(snapshot: &Snapshot<T>, phi: f64) -> Result<T> {
    if snapshot.is_empty() {
        return Err(Error::EmptySnapshot);
    }
    snapshot.samples.estimate(phi)
}

/// Result of one collection, with the retry count it took.
#[derive(Debug, Clone)]
pub struct Collected<T> {
    pub snapshot: Snapshot<T>,
    pub tm1: Tritmap,
    pub tm2: Tritmap,
    pub retries: u64,
}

/// Collects a snapshot whose size equals the stream size of both tritmap
/// reads that bracket it.
pub fn collect_snapshot<T: Element>(levels: &LevelHierarchy<T>, p: &Participant) -> Result<Collected<T>> {
    let k = levels.k();
    let top = levels.max_level();
    let mut retries = 0;
    let (tm1, tm2, snap) = loop {
        let guard = p.pin();
        let tm1 = levels.tritmap(&guard);
        // Ascending reads: a promotion can move data up past the reader but
        // never down below it.
        let snap: Vec<_> = (0..=top).map(|i| levels.read_level(i, &guard)).collect();
        let tm2 = levels.tritmap(&guard);
        drop(guard);
        if tm1.stream_size(k) == tm2.stream_size(k) {
            break (tm1, tm2, snap);
        }
        retries += 1;
    };

    let n1 = tm1.stream_size(k);
    let mut acc = 0u64;
    let mut word = 0u64;
    let mut entries = Vec::new();
    for (i, arr) in snap.into_iter().enumerate().rev() {
        if acc == n1 {
            break;
        }
        let Some(arr) = arr else { continue };
        let weight = (arr.len() as u64) << i;
        if acc + weight <= n1 {
            acc += weight;
            word += (arr.len() / k) as u64 * pow3(i);
            entries.push((i, arr));
        }
    }
    if acc != n1 {
        return Err(Error::InvariantViolation(format!(
            "snapshot summarizes {acc} elements, tritmap {tm1} implies {n1}"
        )));
    }
    let samples = WeightedSamples::from_levels(entries.iter().map(|(i, a)| (*i, a.elements())));
    let snapshot = Snapshot {
        entries,
        represented: acc,
        tritmap: Tritmap::from_word(word)?,
        samples,
    };
    Ok(Collected {
        snapshot,
        tm1,
        tm2,
        retries,
    })
}

/// Query-thread counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub queries: u64,
    pub cache_hits: u64,
    pub collects: u64,
    pub collect_retries: u64,
}

/// Per-thread query handle with its cached snapshot.
pub struct QueryContext<T: Element> {
    shared: Arc<Shared<T>>,
    participant: Participant,
    rho: f64,
    cached: Option<Snapshot<T>>,
    stats: QueryStats,
}

impl<T: Element> std::fmt::Debug for QueryContext<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QueryContext")
            .field("rho", &self.rho)
            .field("my_trit", &self.my_trit())
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl<T: Element> QueryContext<T> {
    pub(crate) fn new(shared: Arc<Shared<T>>, participant: Participant, rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("rho must be finite and >= 0, got {rho}")));
        }
        Ok(Self {
            shared,
            participant,
            rho,
            cached: None,
            stats: QueryStats::default(),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Tritmap of the cached snapshot; empty when nothing is cached.
    pub fn my_trit(&self) -> Tritmap {
        self.cached.as_ref().map_or(Tritmap::EMPTY, |s| s.tritmap())
    }

    pub fn cached(&self) -> Option<&Snapshot<T>> {
        self.cached.as_ref()
    }

    pub fn stats(&self) -> QueryStats {
        self.stats
    }

    /// Whether a stream of `current` elements may be answered from a cache
    /// that summarizes `cached` elements. A zero `rho` disables caching.
    pub fn is_fresh(rho: f64, cached: u64, current: u64) -> bool {
        rho > 0.0 && cached > 0 && current as f64 <= (1.0 + rho) * cached as f64
    }

    pub fn query(&mut self, phi: f64) -> Result<T> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::InvalidPhi(phi));
        }
        let levels = &self.shared.levels;
        let n1 = levels.stream_size(&self.participant.pin());
        if n1 == 0 {
            return Err(Error::NoData);
        }
        self.stats.queries += 1;
        let cached = self.cached.as_ref().map_or(0, |s| s.represented_size());
        if Self::is_fresh(self.rho, cached, n1) {
            self.stats.cache_hits += 1;
        } else {
            self.refresh()?;
        }
        snapshot_estimate(self.cached.as_ref().expect("snapshot cached"), phi)
    }

    /// Collects a fresh snapshot into the cache.
    pub fn refresh(&mut self) -> Result<&Snapshot<T>> {
        let c = collect_snapshot(&self.shared.levels, &self.participant)?;
        self.stats.collects += 1;
        self.stats.collect_retries += c.retries;
        Ok(self.cached.insert(c.snapshot))
    }
}
