//! Ingest stage: thread-local buffers feeding node-local Gather&Sort units.
//!
//! A unit has two shared buffers of `2k` slots. Threads reserve `b` slots
//! with a fetch-and-add on the buffer index and copy their sorted local
//! buffer in without further synchronization. The thread whose reservation
//! ends exactly at `2k` owns the window: it copies the buffer, inserts the
//! copy as a batch, and only then resets the index. A writer that is still
//! copying when the owner reads leaves a hole: the owner takes the slot's
//! previous value instead.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crossbeam_utils::{Backoff, CachePadded};

use crate::atomics::{faa, AtomicCounter, Participant};
use crate::coins::CoinSource;
use crate::element::{sort_elements, Element};
use crate::error::{Error, Result};
use crate::sketch::Shared;

struct Slot {
    value: AtomicU64,
    // Completed writes to this slot since construction.
    writes: AtomicU64,
}

/// Hole counters of one unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HoleStats {
    pub batches: u64,
    pub holes: u64,
}

pub struct GatherSortUnit<T> {
    capacity: usize,
    b: usize,
    buffers: [Box<[Slot]>; 2],
    index: [AtomicCounter; 2],
    // Windows copied out of each buffer; written by owners only.
    windows: [CachePadded<AtomicU64>; 2],
    instrumented: bool,
    batches: AtomicU64,
    holes: AtomicU64,
    duplicates: Mutex<Vec<T>>,
}

impl<T> std::fmt::Debug for GatherSortUnit<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GatherSortUnit")
            .field("capacity", &self.capacity)
            .field("b", &self.b)
            .field("index", &[self.index[0].load(), self.index[1].load()])
            .finish_non_exhaustive()
    }
}

impl<T: Element> GatherSortUnit<T> {
    /// A unit with two buffers of `2k` slots pre-filled with `fill`.
    pub fn new(k: usize, b: usize, fill: T, instrumented: bool) -> Result<Self> {
        let capacity = 2 * k;
        if b == 0 || !capacity.is_multiple_of(b) {
            return Err(Error::InvalidConfig("b must be positive and divide 2k".into()));
        }
        let buffer = || {
            (0..capacity)
                .map(|_| Slot {
                    value: AtomicU64::new(fill.to_bits()),
                    writes: AtomicU64::new(0),
                })
                .collect::<Box<[Slot]>>()
        };
        Ok(Self {
            capacity,
            b,
            buffers: [buffer(), buffer()],
            index: [AtomicCounter::new(0), AtomicCounter::new(0)],
            windows: [CachePadded::new(AtomicU64::new(0)), CachePadded::new(AtomicU64::new(0))],
            instrumented,
            batches: AtomicU64::new(0),
            holes: AtomicU64::new(0),
            duplicates: Mutex::new(Vec::new()),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Reserves `b` slots of buffer `i`; returns the first slot index.
    pub fn reserve(&self, i: usize) -> u64 {
        faa(&self.index[i], self.b as u64)
    }

    /// Copies a sorted local buffer into reserved slots.
    pub fn write(&self, i: usize, start: usize, items: &[T]) {
        let slots = &self.buffers[i][start..start + items.len()];
        for (slot, x) in slots.iter().zip(items) {
            slot.value.store(x.to_bits(), Ordering::Relaxed);
            slot.writes.fetch_add(1, Ordering::Release);
        }
    }

    /// Reads every slot of buffer `i` once, in slot order, and returns them
    /// sorted. Slots whose current-window write has not landed yet
    /// contribute their previous value.
    pub fn make_owner_copy(&self, i: usize) -> Vec<T> {
        let window = self.windows[i].load(Ordering::SeqCst);
        let mut copy = Vec::with_capacity(self.capacity);
        let mut holes = 0u64;
        let mut stale = Vec::new();
        for slot in self.buffers[i].iter() {
            let writes = slot.writes.load(Ordering::Acquire);
            let x = T::from_bits(slot.value.load(Ordering::Relaxed));
            if writes <= window {
                holes += 1;
                if self.instrumented {
                    stale.push(x);
                }
            }
            copy.push(x);
        }
        self.windows[i].store(window + 1, Ordering::SeqCst);
        self.batches.fetch_add(1, Ordering::Relaxed);
        self.holes.fetch_add(holes, Ordering::Relaxed);
        if !stale.is_empty() {
            self.duplicates.lock().unwrap().extend(stale);
        }
        sort_elements(&mut copy);
        copy
    }

    /// Reopens buffer `i` after its batch has been inserted.
    pub fn reset(&self, i: usize) {
        self.index[i].store(0);
    }

    pub fn index(&self, i: usize) -> u64 {
        self.index[i].load()
    }

    /// Elements sitting in reserved slots of open windows.
    pub fn buffered(&self) -> u64 {
        (0..2)
            .map(|i| self.index(i).min(self.capacity as u64))
            .sum()
    }

    pub fn hole_stats(&self) -> HoleStats {
        HoleStats {
            batches: self.batches.load(Ordering::Relaxed),
            holes: self.holes.load(Ordering::Relaxed),
        }
    }

    pub fn duplicate_count(&self) -> usize {
        self.duplicates.lock().unwrap().len()
    }

    /// Values taken in place of missing writes. Empty unless instrumented.
    pub fn duplicates(&self) -> Vec<T> {
        self.duplicates.lock().unwrap().clone()
    }
}

/// Per-thread ingest handle. Not shareable; create one per update thread.
pub struct UpdaterContext<T: Element> {
    shared: Arc<Shared<T>>,
    thread_id: usize,
    node: usize,
    local: Vec<T>,
    current: usize,
    coins: CoinSource,
    participant: Participant,
    updates: u64,
    batches_owned: u64,
}

impl<T: Element> std::fmt::Debug for UpdaterContext<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UpdaterContext")
            .field("thread_id", &self.thread_id)
            .field("node", &self.node)
            .field("buffered", &self.local.len())
            .finish_non_exhaustive()
    }
}

impl<T: Element> UpdaterContext<T> {
    pub(crate) fn new(
        shared: Arc<Shared<T>>,
        thread_id: usize,
        coins: CoinSource,
        participant: Participant,
    ) -> Self {
        let node = shared.config.node_of(thread_id);
        let b = shared.config.b;
        Self {
            shared,
            thread_id,
            node,
            local: Vec::with_capacity(b),
            current: 0,
            coins,
            participant,
            updates: 0,
            batches_owned: 0,
        }
    }

    pub fn thread_id(&self) -> usize {
        self.thread_id
    }

    pub fn node(&self) -> usize {
        self.node
    }

    /// Elements held in the local buffer.
    pub fn buffered(&self) -> usize {
        self.local.len()
    }

    /// Completed `update` calls.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Windows this thread has owned.
    pub fn batches_owned(&self) -> u64 {
        self.batches_owned
    }

    pub fn update(&mut self, x: T) -> Result<()> {
        self.local.push(x);
        self.updates += 1;
        if self.local.len() < self.shared.config.b {
            return Ok(());
        }
        sort_elements(&mut self.local);
        let result = self.flush_local();
        self.local.clear();
        result
    }

    fn flush_local(&mut self) -> Result<()> {
        let shared = Arc::clone(&self.shared);
        let unit = &shared.units[self.node];
        let (cap, b) = (unit.capacity() as u64, shared.config.b as u64);
        let backoff = Backoff::new();
        loop {
            let i = self.current;
            let idx = unit.reserve(i);
            if idx < cap {
                unit.write(i, idx as usize, &self.local);
                if idx + b == cap {
                    self.own_window(unit, i)?;
                }
                return Ok(());
            }
            self.current ^= 1;
            if shared.levels.is_wedged() {
                return Err(Error::CapacityExceeded {
                    level: shared.config.max_level,
                    max_level: shared.config.max_level,
                });
            }
            backoff.snooze();
        }
    }

    fn own_window(&mut self, unit: &GatherSortUnit<T>, i: usize) -> Result<()> {
        self.batches_owned += 1;
        let copy = unit.make_owner_copy(i);
        let mut owner = self.shared.levels.batch_owner(copy)?;
        owner.run(&self.participant, &mut self.coins, true)?;
        unit.reset(i);
        owner.run(&self.participant, &mut self.coins, false)
    }
}

impl<T: Element> Drop for UpdaterContext<T> {
    fn drop(&mut self) {
        self.shared.retire_updater(self.updates, self.local.len() as u64);
    }
}
