//! The shared level hierarchy: batch insertion at level 0 and upward
//! propagation, each transition published by one DCAS on a level cell and
//! the tritmap cell.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering::SeqCst};
use std::sync::Arc;

use crossbeam_utils::Backoff;

use crate::atomics::{dcas, AtomicCell, CellValue, DcasTarget, Guard, Participant, Reclaim, Reclaimer, LEVEL_GRACE};
use crate::coins::CoinSource;
use crate::element::{is_sorted, Element};
use crate::error::{Error, Result};
use crate::sequential::{merge_sorted, sample_odd_or_even};
use crate::tritmap::{delta_batch, delta_promote_empty, delta_promote_full, Tritmap};

/// An immutable sorted array published in a level cell.
#[derive(Debug)]
pub struct LevelArray<T> {
    elements: Vec<T>,
    level: usize,
    reclaimed: AtomicBool,
}

impl<T: Element> LevelArray<T> {
    pub(crate) fn new(elements: Vec<T>, level: usize) -> Arc<Self> {
        debug_assert!(is_sorted(&elements));
        Arc::new(Self {
            elements,
            level,
            reclaimed: AtomicBool::new(false),
        })
    }

    pub fn elements(&self) -> &[T] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Level the array was built for.
    pub fn level(&self) -> usize {
        self.level
    }

    /// True once the reclaimer has poisoned the cell's reference.
    pub fn is_reclaimed(&self) -> bool {
        self.reclaimed.load(SeqCst)
    }
}

/// Content of a level cell: an `Arc<LevelArray>` pointer, or a unique
/// empty token with bit 1 set.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) struct LevelWord(u64);

impl LevelWord {
    fn token(seq: u64) -> Self {
        Self((seq << 2) | 2)
    }

    fn of<T>(arr: &Arc<LevelArray<T>>) -> Self {
        Self(Arc::as_ptr(arr) as u64)
    }

    pub(crate) fn is_empty(self) -> bool {
        self.0 & 2 == 2
    }

    fn ptr<T>(self) -> Option<*const LevelArray<T>> {
        (!self.is_empty()).then_some(self.0 as *const LevelArray<T>)
    }
}

impl CellValue for LevelWord {
    fn into_word(self) -> u64 {
        self.0
    }

    fn from_word(word: u64) -> Self {
        Self(word)
    }
}

/// The cell's reference to a level array, handed to the reclaimer on unlink.
struct RetiredLevel<T>(*const LevelArray<T>);

// SAFETY: the pointer carries one strong count of an Arc whose payload is
// Send + Sync.
unsafe impl<T: Element> Send for RetiredLevel<T> {}

impl<T: Element> Reclaim for RetiredLevel<T> {
    fn poison(&self) {
        // SAFETY: the strong count held by this value keeps the array alive.
        unsafe { (*self.0).reclaimed.store(true, SeqCst) };
    }
}

impl<T> Drop for RetiredLevel<T> {
    fn drop(&mut self) {
        // SAFETY: releases the count taken by `publish`.
        drop(unsafe { Arc::from_raw(self.0) });
    }
}

/// Hands a new strong count to a cell. Undo with `unpublish` if the DCAS
/// that was meant to install it fails.
fn publish<T>(arr: &Arc<LevelArray<T>>) -> LevelWord {
    LevelWord(Arc::into_raw(Arc::clone(arr)) as u64)
}

fn unpublish<T>(word: LevelWord) {
    if let Some(p) = word.ptr::<T>() {
        // SAFETY: `word` came from `publish` and was never installed.
        drop(unsafe { Arc::from_raw(p) });
    }
}

/// Counters maintained by the hierarchy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LevelStats {
    pub batches: u64,
    pub promotions: u64,
    pub blocked_steps: u64,
}

pub struct LevelHierarchy<T> {
    k: usize,
    max_level: usize,
    levels: Box<[AtomicCell<LevelWord>]>,
    tritmap: AtomicCell<u64>,
    next_token: AtomicU64,
    wedged: AtomicBool,
    reclaimer: Arc<Reclaimer>,
    batches: AtomicU64,
    promotions: AtomicU64,
    blocked: AtomicU64,
    _marker: std::marker::PhantomData<T>,
}

impl<T> fmt::Debug for LevelHierarchy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelHierarchy")
            .field("k", &self.k)
            .field("max_level", &self.max_level)
            .finish_non_exhaustive()
    }
}

impl<T: Element> LevelHierarchy<T> {
    pub fn new(k: usize, max_level: usize, reclaimer: Arc<Reclaimer>) -> Self {
        let levels = (0..=max_level)
            .map(|i| AtomicCell::new(LevelWord::token(i as u64)))
            .collect();
        Self {
            k,
            max_level,
            levels,
            tritmap: AtomicCell::new(0),
            next_token: AtomicU64::new(max_level as u64 + 1),
            wedged: AtomicBool::new(false),
            reclaimer,
            batches: AtomicU64::new(0),
            promotions: AtomicU64::new(0),
            blocked: AtomicU64::new(0),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn reclaimer(&self) -> &Arc<Reclaimer> {
        &self.reclaimer
    }

    pub fn tritmap(&self, guard: &Guard<'_>) -> Tritmap {
        Tritmap::from_word(self.tritmap.load(guard)).expect("tritmap cell out of range")
    }

    pub fn stream_size(&self, guard: &Guard<'_>) -> u64 {
        self.tritmap(guard).stream_size(self.k)
    }

    /// Set once a batch could not propagate past the top level.
    pub fn is_wedged(&self) -> bool {
        self.wedged.load(SeqCst)
    }

    pub fn stats(&self) -> LevelStats {
        LevelStats {
            batches: self.batches.load(SeqCst),
            promotions: self.promotions.load(SeqCst),
            blocked_steps: self.blocked.load(SeqCst),
        }
    }

    fn fresh_token(&self) -> LevelWord {
        LevelWord::token(self.next_token.fetch_add(1, SeqCst))
    }

    pub(crate) fn level_word(&self, i: usize, guard: &Guard<'_>) -> LevelWord {
        self.levels[i].load(guard)
    }

    /// Reads level `i` and takes a reference to its array, if any.
    pub fn read_level(&self, i: usize, guard: &Guard<'_>) -> Option<Arc<LevelArray<T>>> {
        let p = self.levels[i].load(guard).ptr::<T>()?;
        // SAFETY: the pointer was read from the cell while pinned, so the
        // cell's strong count has not been released yet.
        let arr = unsafe {
            Arc::increment_strong_count(p);
            Arc::from_raw(p)
        };
        if arr.is_reclaimed() {
            self.reclaimer.report_poison();
        }
        Some(arr)
    }

    /// Starts the insertion of a sorted `2k` batch.
    pub fn batch_owner(&self, batch: Vec<T>) -> Result<BatchOwner<'_, T>> {
        if batch.len() != 2 * self.k {
            return Err(Error::InvariantViolation(format!(
                "batch of {} elements, expected {}",
                batch.len(),
                2 * self.k
            )));
        }
        Ok(BatchOwner {
            h: self,
            state: State::Insert {
                batch: LevelArray::new(batch, 0),
            },
        })
    }

    /// Inserts a batch and propagates it to completion.
    pub fn batch_update(&self, batch: Vec<T>, p: &Participant, coins: &mut CoinSource) -> Result<()> {
        let mut owner = self.batch_owner(batch)?;
        owner.run(p, coins, false)?;
        Ok(())
    }

    /// Per-level cell sizes and the tritmap, for tracing.
    pub fn dump(&self, guard: &Guard<'_>) -> LevelDump {
        let tritmap = self.tritmap(guard);
        let sizes = (0..=self.max_level)
            .map(|i| self.read_level(i, guard).map_or(0, |a| a.len()))
            .collect();
        LevelDump { tritmap, sizes }
    }

    /// Checks that every trit matches its cell. Only valid while no batch
    /// is in flight.
    pub fn check_quiescent(&self, guard: &Guard<'_>) -> Result<()> {
        let d = self.dump(guard);
        for (i, &size) in d.sizes.iter().enumerate() {
            let want = d.tritmap.trit_unchecked(i) as usize * self.k;
            if size != want {
                return Err(Error::InvariantViolation(format!(
                    "level {i} holds {size} elements but tritmap {} implies {want}",
                    d.tritmap
                )));
            }
        }
        Ok(())
    }
}

impl<T> Drop for LevelHierarchy<T> {
    fn drop(&mut self) {
        for cell in self.levels.iter_mut() {
            if let Some(p) = cell.load_exclusive().ptr::<T>() {
                // SAFETY: releases the count owned by the cell.
                drop(unsafe { Arc::from_raw(p) });
            }
        }
    }
}

/// Snapshot of cell sizes alongside the tritmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelDump {
    pub tritmap: Tritmap,
    pub sizes: Vec<usize>,
}

impl LevelDump {
    /// Highest level whose cell or trit is non-empty.
    fn top(&self) -> usize {
        let cell_top = self.sizes.iter().rposition(|&s| s > 0).unwrap_or(0);
        cell_top.max(self.tritmap.highest_level().unwrap_or(0))
    }
}

impl fmt::Display for LevelDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let top = self.top();
        write!(f, "{} [", self.tritmap.to_trit_string(top + 1))?;
        for (i, s) in self.sizes[..=top].iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "L{i}:{s}")?;
        }
        f.write_str("]")
    }
}

/// Outcome of one [`BatchOwner::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// The batch was installed at level 0.
    Inserted,
    /// Level `level` moved up; `full` when the next level already held `k`.
    Promoted { level: usize, full: bool },
    /// The owner's stale array at `level` was unlinked.
    Cleared { level: usize },
    /// The next transition is not enabled yet; retry later.
    Blocked,
    Finished,
}

enum State<T> {
    Insert {
        batch: Arc<LevelArray<T>>,
    },
    Propagate {
        level: usize,
        mine: Arc<LevelArray<T>>,
        sample: Option<Vec<T>>,
        merged: Option<(LevelWord, Arc<LevelArray<T>>)>,
    },
    Clear {
        level: usize,
        mine: Arc<LevelArray<T>>,
        next: Option<Arc<LevelArray<T>>>,
    },
    Done,
}

/// Drives one batch from level-0 insertion to the end of its propagation,
/// one published transition per step.
pub struct BatchOwner<'h, T> {
    h: &'h LevelHierarchy<T>,
    state: State<T>,
}

impl<T: Element> BatchOwner<'_, T> {
    pub fn is_finished(&self) -> bool {
        matches!(self.state, State::Done)
    }

    /// Steps until the batch is inserted (`until_inserted`) or finished,
    /// backing off while blocked.
    pub fn run(&mut self, p: &Participant, coins: &mut CoinSource, until_inserted: bool) -> Result<()> {
        let backoff = Backoff::new();
        loop {
            match self.step(p, coins)? {
                Step::Finished => return Ok(()),
                Step::Inserted if until_inserted => return Ok(()),
                Step::Blocked => backoff.snooze(),
                _ => backoff.reset(),
            }
        }
    }

    pub fn step(&mut self, p: &Participant, coins: &mut CoinSource) -> Result<Step> {
        let guard = p.pin();
        let step = match std::mem::replace(&mut self.state, State::Done) {
            State::Insert { batch } => self.insert(batch, &guard)?,
            State::Propagate {
                level,
                mine,
                sample,
                merged,
            } => self.propagate(level, mine, sample, merged, coins, &guard)?,
            State::Clear { level, mine, next } => self.clear(level, mine, next, &guard)?,
            State::Done => Step::Finished,
        };
        if step == Step::Blocked {
            self.h.blocked.fetch_add(1, SeqCst);
            if self.h.is_wedged() {
                return Err(Error::CapacityExceeded {
                    level: self.h.max_level,
                    max_level: self.h.max_level,
                });
            }
        }
        Ok(step)
    }

    fn insert(&mut self, batch: Arc<LevelArray<T>>, guard: &Guard<'_>) -> Result<Step> {
        let h = self.h;
        let w = h.tritmap.load(guard);
        let l0 = h.level_word(0, guard);
        if Tritmap::from_word(w)?.trit_unchecked(0) != 0 || !l0.is_empty() {
            self.state = State::Insert { batch };
            return Ok(Step::Blocked);
        }
        let word = publish(&batch);
        let ok = dcas(
            DcasTarget::new(&h.levels[0], l0, word),
            DcasTarget::new(&h.tritmap, w, w + delta_batch()),
            guard,
        )?;
        if !ok {
            unpublish::<T>(word);
            self.state = State::Insert { batch };
            return Ok(Step::Blocked);
        }
        h.batches.fetch_add(1, SeqCst);
        self.state = State::Propagate {
            level: 0,
            mine: batch,
            sample: None,
            merged: None,
        };
        Ok(Step::Inserted)
    }

    fn propagate(
        &mut self,
        l: usize,
        mine: Arc<LevelArray<T>>,
        sample: Option<Vec<T>>,
        mut merged: Option<(LevelWord, Arc<LevelArray<T>>)>,
        coins: &mut CoinSource,
        guard: &Guard<'_>,
    ) -> Result<Step> {
        let h = self.h;
        if l >= h.max_level {
            h.wedged.store(true, SeqCst);
            return Err(Error::CapacityExceeded {
                level: l,
                max_level: h.max_level,
            });
        }
        let sample = match sample {
            Some(s) => s,
            None => sample_odd_or_even(mine.elements(), coins.flip())?,
        };

        let w = h.tritmap.load(guard);
        let next = Tritmap::from_word(w)?.trit_unchecked(l + 1);
        let cell = h.level_word(l + 1, guard);

        let blocked = |state: &mut State<T>, sample, merged| {
            *state = State::Propagate {
                level: l,
                mine: Arc::clone(&mine),
                sample: Some(sample),
                merged,
            };
            Ok(Step::Blocked)
        };

        match next {
            2 => blocked(&mut self.state, sample, merged),
            1 => {
                let Some(p) = cell.ptr::<T>() else {
                    return Err(Error::InvariantViolation(format!(
                        "trit {} is 1 but the level is empty",
                        l + 1
                    )));
                };
                let target = match merged.take() {
                    Some((src, arr)) if src == cell => arr,
                    _ => {
                        // SAFETY: read from the cell while pinned.
                        let upper = unsafe { &*p };
                        if upper.len() != h.k {
                            return Err(Error::InvariantViolation(format!(
                                "trit {} is 1 but the level holds {}",
                                l + 1,
                                upper.len()
                            )));
                        }
                        LevelArray::new(merge_sorted(&sample, upper.elements()), l + 1)
                    }
                };
                let word = publish(&target);
                let ok = dcas(
                    DcasTarget::new(&h.levels[l + 1], cell, word),
                    DcasTarget::new(&h.tritmap, w, w + delta_promote_full(l)),
                    guard,
                )?;
                if !ok {
                    unpublish::<T>(word);
                    return blocked(&mut self.state, sample, Some((cell, target)));
                }
                guard.retire(Box::new(RetiredLevel(p)), LEVEL_GRACE);
                h.promotions.fetch_add(1, SeqCst);
                self.state = State::Clear {
                    level: l,
                    mine,
                    next: Some(target),
                };
                Ok(Step::Promoted { level: l, full: true })
            }
            _ => {
                if !cell.is_empty() {
                    // The previous occupant's owner has not cleared it yet.
                    return blocked(&mut self.state, sample, merged);
                }
                let target = LevelArray::new(sample.clone(), l + 1);
                let word = publish(&target);
                let ok = dcas(
                    DcasTarget::new(&h.levels[l + 1], cell, word),
                    DcasTarget::new(&h.tritmap, w, w + delta_promote_empty(l)),
                    guard,
                )?;
                if !ok {
                    unpublish::<T>(word);
                    return blocked(&mut self.state, sample, merged);
                }
                h.promotions.fetch_add(1, SeqCst);
                self.state = State::Clear {
                    level: l,
                    mine,
                    next: None,
                };
                Ok(Step::Promoted { level: l, full: false })
            }
        }
    }

    fn clear(
        &mut self,
        l: usize,
        mine: Arc<LevelArray<T>>,
        next: Option<Arc<LevelArray<T>>>,
        guard: &Guard<'_>,
    ) -> Result<Step> {
        let h = self.h;
        let word = LevelWord::of(&mine);
        if !h.levels[l].compare_and_set(word, h.fresh_token(), guard) {
            return Err(Error::InvariantViolation(format!(
                "level {l} changed under its owner"
            )));
        }
        guard.retire(Box::new(RetiredLevel(Arc::as_ptr(&mine))), LEVEL_GRACE);
        self.state = match next {
            Some(arr) => State::Propagate {
                level: l + 1,
                mine: arr,
                sample: None,
                merged: None,
            },
            None => State::Done,
        };
        Ok(Step::Cleared { level: l })
    }
}
