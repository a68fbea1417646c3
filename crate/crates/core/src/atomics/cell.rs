//! Word-sized atomic cells with a software double-compare-and-swap.
//!
//! A cell stores a `u64` word. Bit 0 of a stored word is reserved: when set,
//! the remaining bits point at an in-flight DCAS [`Descriptor`]. Payload
//! values therefore encode themselves into words with bit 0 clear (see
//! [`CellValue`]).
//!
//! The DCAS follows the classic descriptor protocol. An operation installs
//! its descriptor into both cells in address order, decides its outcome with
//! a single CAS on the descriptor status, then replaces the descriptor in
//! each cell with the new or the old value. Any thread that meets a
//! descriptor helps it to completion before retrying its own work, which
//! makes the protocol lock-free.
//!
//! The usual restricted-CAS step that prevents a slow helper from installing
//! an already decided descriptor is omitted. Callers guarantee that a cell
//! never returns to an earlier value while any thread that might still hold
//! that value is pinned: tritmap words only grow, empty-level tokens are
//! unique, and level arrays are reclaimed only after a grace period. A late
//! install can then only happen on a cell whose value equals the old value
//! of a decided operation, and the installer removes it itself before
//! unpinning. Descriptors are retired with a longer grace period to cover
//! readers that observe such a transient install.

use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering::SeqCst};

use crossbeam_utils::CachePadded;

use super::reclaim::{Guard, Reclaim, DESCRIPTOR_GRACE};
use crate::error::{Error, Result};

const TAG: u64 = 1;

const UNDECIDED: u8 = 0;
const SUCCEEDED: u8 = 1;
const FAILED: u8 = 2;
const POISONED: u8 = 3;

/// A payload that can live in an [`AtomicCell`].
///
/// `into_word` must return a word with bit 0 clear, and
/// `from_word(into_word(v)) == v`.
pub trait CellValue: Copy + Eq + std::fmt::Debug {
    fn into_word(self) -> u64;
    fn from_word(word: u64) -> Self;
}

/// Integers up to `2^63 - 1`, stored shifted left by one bit.
impl CellValue for u64 {
    fn into_word(self) -> u64 {
        debug_assert!(self < 1 << 63, "cell integer out of range");
        self << 1
    }

    fn from_word(word: u64) -> Self {
        word >> 1
    }
}

/// A sequentially consistent cell that supports DCAS.
pub struct AtomicCell<V> {
    word: CachePadded<AtomicU64>,
    _marker: PhantomData<V>,
}

impl<V> std::fmt::Debug for AtomicCell<V> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("AtomicCell")
            .field(&self.word.load(SeqCst))
            .finish()
    }
}

impl<V: CellValue> AtomicCell<V> {
    pub fn new(value: V) -> Self {
        let word = value.into_word();
        assert_eq!(word & TAG, 0, "cell payload uses the reserved bit");
        Self {
            word: CachePadded::new(AtomicU64::new(word)),
            _marker: PhantomData,
        }
    }

    fn raw(&self) -> &AtomicU64 {
        &self.word
    }

    fn addr(&self) -> usize {
        self.raw() as *const AtomicU64 as usize
    }

    /// Wait-free read that is coherent with in-flight DCAS operations.
    pub fn load(&self, guard: &Guard<'_>) -> V {
        V::from_word(read_word(self.raw(), guard))
    }

    /// Single-word CAS. Helps any DCAS it runs into.
    pub fn compare_and_set(&self, expected: V, desired: V, guard: &Guard<'_>) -> bool {
        let (exp, des) = (expected.into_word(), desired.into_word());
        debug_assert_eq!(des & TAG, 0);
        loop {
            match self.raw().compare_exchange(exp, des, SeqCst, SeqCst) {
                Ok(_) => return true,
                Err(cur) if cur & TAG == TAG => {
                    // SAFETY: `cur` was read from a cell while pinned.
                    unsafe { help(cur, guard) };
                }
                Err(_) => return false,
            }
        }
    }

    /// Reads the cell without a guard. Only meaningful when the caller has
    /// exclusive access, such as during drop.
    pub fn load_exclusive(&mut self) -> V {
        let w = *self.word.get_mut();
        assert_eq!(w & TAG, 0, "descriptor left in a quiescent cell");
        V::from_word(w)
    }
}

/// Reads a cell through [`AtomicCell::load`].
pub fn dcas_read<V: CellValue>(cell: &AtomicCell<V>, guard: &Guard<'_>) -> V {
    cell.load(guard)
}

/// Single-word compare-and-swap on a DCAS-capable cell.
pub fn cas<V: CellValue>(cell: &AtomicCell<V>, expected: V, desired: V, guard: &Guard<'_>) -> bool {
    cell.compare_and_set(expected, desired, guard)
}

/// One leg of a DCAS.
#[derive(Debug)]
pub struct DcasTarget<'a, V> {
    pub cell: &'a AtomicCell<V>,
    pub expected: V,
    pub desired: V,
}

impl<'a, V> DcasTarget<'a, V> {
    pub fn new(cell: &'a AtomicCell<V>, expected: V, desired: V) -> Self {
        Self {
            cell,
            expected,
            desired,
        }
    }
}

/// Atomically replaces both cells if both hold their expected values.
/// On failure neither cell is observably modified.
pub fn dcas<A: CellValue, B: CellValue>(
    t1: DcasTarget<'_, A>,
    t2: DcasTarget<'_, B>,
    guard: &Guard<'_>,
) -> Result<bool> {
    if t1.cell.addr() == t2.cell.addr() {
        return Err(Error::AliasedCells);
    }
    if t1.cell.load(guard) != t1.expected || t2.cell.load(guard) != t2.expected {
        return Ok(false);
    }

    let mut entries = [
        Entry::new(t1.cell.raw(), t1.expected.into_word(), t1.desired.into_word()),
        Entry::new(t2.cell.raw(), t2.expected.into_word(), t2.desired.into_word()),
    ];
    entries.sort_by_key(|e| e.cell as usize);

    let desc = Box::into_raw(Box::new(Descriptor {
        status: AtomicU8::new(UNDECIDED),
        entries,
    }));
    let tagged = desc as u64 | TAG;
    // SAFETY: the descriptor is live until retired below.
    let ok = unsafe { help(tagged, guard) };
    guard.retire(Box::new(RetiredDescriptor(desc)), DESCRIPTOR_GRACE);
    Ok(ok)
}

struct Entry {
    cell: *const AtomicU64,
    old: u64,
    new: u64,
}

impl Entry {
    fn new(cell: &AtomicU64, old: u64, new: u64) -> Self {
        debug_assert_eq!(old & TAG, 0);
        debug_assert_eq!(new & TAG, 0);
        Self { cell, old, new }
    }
}

struct Descriptor {
    status: AtomicU8,
    entries: [Entry; 2],
}

struct RetiredDescriptor(*mut Descriptor);

// SAFETY: once retired the descriptor is only touched through its atomics,
// and the pointer is freed exactly once, by the reclaimer.
unsafe impl Send for RetiredDescriptor {}

impl Reclaim for RetiredDescriptor {
    fn poison(&self) {
        // SAFETY: not yet freed; poisoning precedes the drop.
        unsafe { (*self.0).status.store(POISONED, SeqCst) };
    }
}

impl Drop for RetiredDescriptor {
    fn drop(&mut self) {
        // SAFETY: allocated by Box::into_raw in dcas and dropped only here.
        drop(unsafe { Box::from_raw(self.0) });
    }
}

/// Resolves a word read from a cell to a payload word.
fn read_word(cell: &AtomicU64, guard: &Guard<'_>) -> u64 {
    let w = cell.load(SeqCst);
    if w & TAG == 0 {
        return w;
    }
    // SAFETY: `w` was read from a cell while pinned, so the descriptor is
    // not yet reclaimed.
    let d = unsafe { &*((w & !TAG) as *const Descriptor) };
    let status = d.status.load(SeqCst);
    if status == POISONED {
        guard.reclaimer().report_poison();
    }
    let e = d
        .entries
        .iter()
        .find(|e| std::ptr::eq(e.cell, cell))
        .expect("descriptor installed in a cell it does not name");
    if status == SUCCEEDED {
        e.new
    } else {
        e.old
    }
}

/// Drives the descriptor at `tagged` to completion and reports whether it
/// succeeded.
///
/// # Safety
/// `tagged` must have been read from a cell, or freshly allocated, while
/// `guard` was pinned.
unsafe fn help(tagged: u64, guard: &Guard<'_>) -> bool {
    let d = &*((tagged & !TAG) as *const Descriptor);
    if d.status.load(SeqCst) == POISONED {
        guard.reclaimer().report_poison();
    }

    if d.status.load(SeqCst) == UNDECIDED {
        let mut outcome = SUCCEEDED;
        'install: for e in &d.entries {
            let cell = &*e.cell;
            loop {
                if d.status.load(SeqCst) != UNDECIDED {
                    break 'install;
                }
                match cell.compare_exchange(e.old, tagged, SeqCst, SeqCst) {
                    Ok(_) => break,
                    Err(cur) if cur == tagged => break,
                    Err(cur) if cur & TAG == TAG => {
                        help(cur, guard);
                    }
                    Err(_) => {
                        outcome = FAILED;
                        break 'install;
                    }
                }
            }
        }
        let _ = d
            .status
            .compare_exchange(UNDECIDED, outcome, SeqCst, SeqCst);
    }

    let succeeded = d.status.load(SeqCst) == SUCCEEDED;
    for e in &d.entries {
        let value = if succeeded { e.new } else { e.old };
        let _ = (*e.cell).compare_exchange(tagged, value, SeqCst, SeqCst);
    }
    succeeded
}

/// A plain sequentially consistent counter for fetch-and-add traffic. It
/// never takes part in a DCAS.
#[derive(Debug, Default)]
pub struct AtomicCounter(CachePadded<AtomicU64>);

impl AtomicCounter {
    pub fn new(v: u64) -> Self {
        Self(CachePadded::new(AtomicU64::new(v)))
    }

    pub fn load(&self) -> u64 {
        self.0.load(SeqCst)
    }

    pub fn store(&self, v: u64) {
        self.0.store(v, SeqCst)
    }

    /// Adds `delta` and returns the previous value.
    pub fn faa(&self, delta: u64) -> u64 {
        self.0.fetch_add(delta, SeqCst)
    }

    pub fn cas(&self, expected: u64, desired: u64) -> bool {
        self.0
            .compare_exchange(expected, desired, SeqCst, SeqCst)
            .is_ok()
    }
}

/// Fetch-and-add on a counter cell; returns the prior value.
pub fn faa(cell: &AtomicCounter, delta: u64) -> u64 {
    cell.faa(delta)
}
