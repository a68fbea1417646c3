//! Epoch-based reclamation for retired level arrays and DCAS descriptors.
//!
//! Every thread that touches shared cells registers a [`Participant`] and
//! pins it for the duration of each access. Pinning announces the global
//! epoch the thread observed; the epoch only advances once every pinned
//! participant has announced the current value. An object retired at epoch
//! `e` with grace `g` is reclaimed once the global epoch reaches `e + g`.
//!
//! Two grace lengths are used. Level arrays are unlinked before they are
//! retired and need the classic two epochs. A descriptor may be reinstalled
//! into a cell by a helper that read it before the operation was decided, so
//! it can become reachable again after retirement for as long as that helper
//! stays pinned; one extra epoch covers every thread that could observe such
//! a late install.
//!
//! In poison mode reclaimed objects are not dropped. They are poisoned and
//! parked in a bounded quarantine, and any reader that later obtains a
//! poisoned object through a shared cell reports a detection.

use std::cell::{Cell, RefCell};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crossbeam_utils::CachePadded;

use crate::error::{Error, Result};

/// Epochs a retired level array must wait before reclamation.
pub const LEVEL_GRACE: u64 = 2;
/// Epochs a retired descriptor must wait before reclamation.
pub const DESCRIPTOR_GRACE: u64 = 3;

const DEFAULT_SLOTS: usize = 256;
const DEFAULT_QUARANTINE: usize = 16 * 1024;
const COLLECT_THRESHOLD: usize = 64;

/// Something that can be handed to the reclaimer.
pub trait Reclaim: Send {
    /// Marks the object as reclaimed. Only called in poison mode.
    fn poison(&self) {}
}

struct Retired {
    safe_at: u64,
    item: Box<dyn Reclaim>,
}

struct Slot {
    owned: AtomicBool,
    // 0 when unpinned, otherwise (epoch << 1) | 1.
    state: AtomicU64,
}

/// Reclamation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReclaimStats {
    pub epoch: u64,
    pub retired: u64,
    pub reclaimed: u64,
    pub poison_detections: u64,
}

pub struct Reclaimer {
    epoch: CachePadded<AtomicU64>,
    slots: Box<[CachePadded<Slot>]>,
    orphans: Mutex<Vec<Retired>>,
    quarantine: Mutex<VecDeque<Box<dyn Reclaim>>>,
    quarantine_cap: usize,
    poison: bool,
    retired: AtomicU64,
    reclaimed: AtomicU64,
    detections: AtomicU64,
}

impl std::fmt::Debug for Reclaimer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reclaimer")
            .field("stats", &self.stats())
            .field("poison", &self.poison)
            .finish()
    }
}

impl Reclaimer {
    pub fn new(poison: bool) -> Arc<Self> {
        Self::with_capacity(DEFAULT_SLOTS, poison, DEFAULT_QUARANTINE)
    }

    pub fn with_capacity(slots: usize, poison: bool, quarantine_cap: usize) -> Arc<Self> {
        let slots = (0..slots)
            .map(|_| {
                CachePadded::new(Slot {
                    owned: AtomicBool::new(false),
                    state: AtomicU64::new(0),
                })
            })
            .collect();
        Arc::new(Self {
            epoch: CachePadded::new(AtomicU64::new(0)),
            slots,
            orphans: Mutex::new(Vec::new()),
            quarantine: Mutex::new(VecDeque::new()),
            quarantine_cap,
            poison,
            retired: AtomicU64::new(0),
            reclaimed: AtomicU64::new(0),
            detections: AtomicU64::new(0),
        })
    }

    pub fn register(self: &Arc<Self>) -> Result<Participant> {
        for (i, slot) in self.slots.iter().enumerate() {
            if slot
                .owned
                .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
            {
                return Ok(Participant {
                    reclaimer: Arc::clone(self),
                    slot: i,
                    depth: Cell::new(0),
                    garbage: RefCell::new(Vec::new()),
                });
            }
        }
        Err(Error::TooManyParticipants(self.slots.len()))
    }

    pub fn is_poison_mode(&self) -> bool {
        self.poison
    }

    pub fn stats(&self) -> ReclaimStats {
        ReclaimStats {
            epoch: self.epoch.load(Ordering::SeqCst),
            retired: self.retired.load(Ordering::SeqCst),
            reclaimed: self.reclaimed.load(Ordering::SeqCst),
            poison_detections: self.detections.load(Ordering::SeqCst),
        }
    }

    pub(crate) fn report_poison(&self) {
        self.detections.fetch_add(1, Ordering::SeqCst);
    }

    /// Advances the global epoch if every pinned participant has observed
    /// the current one. Returns the epoch after the attempt.
    pub fn try_advance(&self) -> u64 {
        let e = self.epoch.load(Ordering::SeqCst);
        for slot in self.slots.iter() {
            let s = slot.state.load(Ordering::SeqCst);
            if s & 1 == 1 && s >> 1 != e {
                return e;
            }
        }
        match self
            .epoch
            .compare_exchange(e, e + 1, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => e + 1,
            Err(now) => now,
        }
    }

    fn collect(&self, list: &mut Vec<Retired>) {
        let now = self.epoch.load(Ordering::SeqCst);
        let mut i = 0;
        while i < list.len() {
            if list[i].safe_at <= now {
                let r = list.swap_remove(i);
                self.reclaim(r.item);
            } else {
                i += 1;
            }
        }
    }

    fn reclaim(&self, item: Box<dyn Reclaim>) {
        self.reclaimed.fetch_add(1, Ordering::SeqCst);
        if self.poison {
            item.poison();
            let evicted = {
                let mut q = self.quarantine.lock().unwrap();
                q.push_back(item);
                if q.len() > self.quarantine_cap {
                    q.pop_front()
                } else {
                    None
                }
            };
            drop(evicted);
        } else {
            drop(item);
        }
    }

    fn collect_orphans(&self) {
        if let Ok(mut orphans) = self.orphans.try_lock() {
            if !orphans.is_empty() {
                self.collect(&mut orphans);
            }
        }
    }
}

impl Drop for Reclaimer {
    fn drop(&mut self) {
        // No participant can exist any more: each holds an Arc to us.
        let orphans = std::mem::take(self.orphans.get_mut().unwrap());
        drop(orphans);
        self.quarantine.get_mut().unwrap().clear();
    }
}

/// A thread's registration with a [`Reclaimer`]. Not shareable between
/// threads; create one per thread.
pub struct Participant {
    reclaimer: Arc<Reclaimer>,
    slot: usize,
    depth: Cell<usize>,
    garbage: RefCell<Vec<Retired>>,
}

impl std::fmt::Debug for Participant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Participant")
            .field("slot", &self.slot)
            .field("pinned", &(self.depth.get() > 0))
            .finish()
    }
}

impl Participant {
    pub fn reclaimer(&self) -> &Arc<Reclaimer> {
        &self.reclaimer
    }

    pub fn pin(&self) -> Guard<'_> {
        let depth = self.depth.get();
        if depth == 0 {
            let slot = &self.reclaimer.slots[self.slot];
            loop {
                let e = self.reclaimer.epoch.load(Ordering::SeqCst);
                slot.state.store((e << 1) | 1, Ordering::SeqCst);
                if self.reclaimer.epoch.load(Ordering::SeqCst) == e {
                    break;
                }
            }
        }
        self.depth.set(depth + 1);
        Guard { participant: self }
    }

    /// Tries to advance the epoch and reclaim this participant's garbage.
    /// Must be called unpinned to make progress.
    pub fn flush(&self) {
        self.reclaimer.try_advance();
        self.reclaimer.collect(&mut self.garbage.borrow_mut());
        self.reclaimer.collect_orphans();
    }

    /// Number of retired objects this participant still holds.
    pub fn pending(&self) -> usize {
        self.garbage.borrow().len()
    }

    fn unpin(&self) {
        let depth = self.depth.get() - 1;
        self.depth.set(depth);
        if depth == 0 {
            self.reclaimer.slots[self.slot]
                .state
                .store(0, Ordering::SeqCst);
        }
    }
}

impl Drop for Participant {
    fn drop(&mut self) {
        let garbage = std::mem::take(self.garbage.get_mut());
        if !garbage.is_empty() {
            self.reclaimer.orphans.lock().unwrap().extend(garbage);
        }
        let slot = &self.reclaimer.slots[self.slot];
        slot.state.store(0, Ordering::SeqCst);
        slot.owned.store(false, Ordering::SeqCst);
    }
}

/// Proof that the owning participant is pinned. Shared objects read while a
/// guard is alive stay allocated until it is dropped.
pub struct Guard<'p> {
    participant: &'p Participant,
}

impl Guard<'_> {
    pub fn reclaimer(&self) -> &Reclaimer {
        &self.participant.reclaimer
    }

    /// Hands an unlinked object to the reclaimer.
    pub fn retire(&self, item: Box<dyn Reclaim>, grace: u64) {
        let r = &self.participant.reclaimer;
        r.retired.fetch_add(1, Ordering::SeqCst);
        let safe_at = r.epoch.load(Ordering::SeqCst) + grace;
        let mut garbage = self.participant.garbage.borrow_mut();
        garbage.push(Retired { safe_at, item });
        if garbage.len() >= COLLECT_THRESHOLD {
            r.try_advance();
            r.collect(&mut garbage);
            drop(garbage);
            r.collect_orphans();
        }
    }
}

impl Drop for Guard<'_> {
    fn drop(&mut self) {
        self.participant.unpin();
    }
}
