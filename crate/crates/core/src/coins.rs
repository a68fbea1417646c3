//! Coin sources for the odd/even sampling decision.
//!
//! A seeded source gives each thread an independent pseudo-random stream. An
//! injected source replays a fixed boolean sequence, which makes sketch
//! evolution fully deterministic and lets the concurrent sketch be checked
//! level-for-level against the sequential one.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};

/// A fixed coin sequence shared by every thread that draws from it. Draws
/// consume the sequence in a single global order and wrap around at the end.
#[derive(Debug)]
pub struct InjectedCoins {
    coins: Vec<bool>,
    cursor: AtomicUsize,
}

impl InjectedCoins {
    pub fn new(coins: Vec<bool>) -> Result<Arc<Self>> {
        if coins.is_empty() {
            return Err(Error::InvalidConfig("injected coin sequence is empty".into()));
        }
        Ok(Arc::new(Self {
            coins,
            cursor: AtomicUsize::new(0),
        }))
    }

    /// `len` coins drawn from a seeded generator.
    pub fn from_seed(seed: u64, len: usize) -> Result<Arc<Self>> {
        let mut rng = SmallRng::seed_from_u64(seed);
        Self::new((0..len).map(|_| rng.random()).collect())
    }

    pub fn next(&self) -> bool {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.coins[i % self.coins.len()]
    }

    /// The underlying sequence, independent of the cursor.
    pub fn sequence(&self) -> &[bool] {
        &self.coins
    }

    /// Number of coins drawn so far.
    pub fn consumed(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

/// Where an updater's coins come from. `false` keeps even (0-based) positions,
/// `true` keeps odd ones.
#[derive(Debug, Clone)]
pub enum CoinSource {
    Seeded(SmallRng),
    Injected(Arc<InjectedCoins>),
}

impl CoinSource {
    pub fn seeded(seed: u64) -> Self {
        CoinSource::Seeded(SmallRng::seed_from_u64(seed))
    }

    pub fn injected(coins: Arc<InjectedCoins>) -> Self {
        CoinSource::Injected(coins)
    }

    pub fn flip(&mut self) -> bool {
        match self {
            CoinSource::Seeded(rng) => rng.random(),
            CoinSource::Injected(seq) => seq.next(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injected_sequence_replays_and_wraps() {
        let seq = InjectedCoins::new(vec![true, false, false]).unwrap();
        let mut src = CoinSource::injected(seq.clone());
        let drawn: Vec<bool> = (0..5).map(|_| src.flip()).collect();
        assert_eq!(drawn, [true, false, false, true, false]);
        assert_eq!(seq.consumed(), 5);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert!(InjectedCoins::new(vec![]).is_err());
    }

    #[test]
    fn seeded_sources_are_reproducible() {
        let mut a = CoinSource::seeded(7);
        let mut b = CoinSource::seeded(7);
        for _ in 0..100 {
            assert_eq!(a.flip(), b.flip());
        }
    }
}
