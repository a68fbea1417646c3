//! The sequential Quantiles sketch and the exact rank/quantile oracles.
//!
//! The sketch is a hierarchy of arrays: level 0 buffers up to `2k` raw
//! elements, every level `i >= 1` holds either nothing or exactly `k` sorted
//! elements of weight `2^i`. A full level 0 is sorted and halved by keeping
//! the even or the odd positions; the survivors cascade upward, merging with
//! and re-halving every full level they meet, until they land on an empty one.
//!
//! Quantile estimates use the bracket rule over the weighted samples with an
//! *exclusive* prefix sum: the answer is the element `x_j` whose preceding
//! weight `W(x_j)` is at most `floor(phi * n)` while `W(x_{j+1})` exceeds it.
//! With unit weights this is exactly the element of rank `floor(phi * n)`.

use std::cmp::Ordering;

use crate::coins::CoinSource;
use crate::element::{is_sorted, sort_elements, Element};
use crate::error::{Error, Result};

/// `floor(phi * n)`, the rank a `phi` quantile query targets.
pub fn target_rank(phi: f64, n: u64) -> Result<u64> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidPhi(phi));
    }
    Ok(((phi * n as f64).floor() as u64).min(n))
}

/// Number of stream elements strictly smaller than `x`.
pub fn exact_rank<T: Element>(stream: &[T], x: T) -> usize {
    stream
        .iter()
        .filter(|a| a.total_cmp(&x) == Ordering::Less)
        .count()
}

/// The stream element of rank `floor(phi * n)` under the bracket convention.
pub fn exact_quantile<T: Element>(stream: &[T], phi: f64) -> Result<T> {
    ExactOracle::new(stream.to_vec())?.quantile(phi)
}

/// A sorted copy of a whole stream, answering exact rank and quantile
/// queries in logarithmic time.
#[derive(Debug, Clone)]
pub struct ExactOracle<T> {
    sorted: Vec<T>,
}

impl<T: Element> ExactOracle<T> {
    pub fn new(mut stream: Vec<T>) -> Result<Self> {
        if stream.is_empty() {
            return Err(Error::EmptyStream);
        }
        sort_elements(&mut stream);
        Ok(Self { sorted: stream })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn rank(&self, x: T) -> usize {
        self.sorted
            .partition_point(|a| a.total_cmp(&x) == Ordering::Less)
    }

    pub fn quantile(&self, phi: f64) -> Result<T> {
        let t = target_rank(phi, self.sorted.len() as u64)? as usize;
        Ok(self.sorted[t.min(self.sorted.len() - 1)])
    }
}

/// Keep the 0-based even (`coin == false`) or odd (`coin == true`) positions
/// of a sorted, even-length array.
pub fn sample_odd_or_even<T: Element>(sorted: &[T], coin: bool) -> Result<Vec<T>> {
    if !sorted.len().is_multiple_of(2) {
        return Err(Error::OddLength(sorted.len()));
    }
    debug_assert!(is_sorted(sorted));
    let start = usize::from(coin);
    Ok(sorted.iter().skip(start).step_by(2).copied().collect())
}

/// Two-way merge of sorted arrays. Ties take from `a` first.
pub fn merge_sorted<T: Element>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if b[j].total_cmp(&a[i]) == Ordering::Less {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Sorted weighted samples with exclusive prefix weights, ready for
/// repeated bracket-rule queries.
#[derive(Debug, Clone)]
pub struct WeightedSamples<T> {
    values: Vec<T>,
    prefix: Vec<u64>,
    total: u64,
}

impl<T: Element> WeightedSamples<T> {
    /// Builds the samples list from `(level, elements)` pairs; an element at
    /// level `i` carries weight `2^i`. Equal values are ordered by level.
    pub fn from_levels<'a, I>(levels: I) -> Self
    where
        I: IntoIterator<Item = (usize, &'a [T])>,
    {
        let mut tagged: Vec<(T, usize)> = Vec::new();
        for (level, elems) in levels {
            tagged.extend(elems.iter().map(|&v| (v, level)));
        }
        tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut values = Vec::with_capacity(tagged.len());
        let mut prefix = Vec::with_capacity(tagged.len());
        let mut total = 0u64;
        for (v, level) in tagged {
            values.push(v);
            prefix.push(total);
            total += 1u64 << level;
        }
        Self {
            values,
            prefix,
            total,
        }
    }

    /// Sum of all weights, i.e. the stream size these samples summarize.
    pub fn total_weight(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn estimate(&self, phi: f64) -> Result<T> {
        if self.values.is_empty() {
            return Err(Error::EmptySketch);
        }
        let t = target_rank(phi, self.total)?;
        // prefix[0] == 0 <= t, so the partition point is at least 1.
        let j = self.prefix.partition_point(|&w| w <= t) - 1;
        Ok(self.values[j])
    }
}

/// The single-threaded sketch.
#[derive(Debug, Clone)]
pub struct SequentialSketch<T> {
    k: usize,
    base: Vec<T>,
    // levels[0] is unused; the base buffer plays the role of level 0.
    levels: Vec<Vec<T>>,
    n: u64,
    coins: CoinSource,
}

impl<T: Element> SequentialSketch<T> {
    pub fn new(k: usize, coins: CoinSource) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        Ok(Self {
            k,
            base: Vec::with_capacity(2 * k),
            levels: vec![Vec::new()],
            n: 0,
            coins,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of elements ingested.
    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The unsorted level-0 buffer.
    pub fn base(&self) -> &[T] {
        &self.base
    }

    /// Contents of level `i` (`i >= 1`); empty when the level is unoccupied.
    pub fn level(&self, i: usize) -> &[T] {
        self.levels.get(i).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Index of the highest level that has ever been allocated.
    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn update(&mut self, x: T) -> Result<()> {
        self.base.push(x);
        self.n += 1;
        if self.base.len() < 2 * self.k {
            return Ok(());
        }

        sort_elements(&mut self.base);
        let mut carry = sample_odd_or_even(&self.base, self.coins.flip())?;
        self.base.clear();

        let mut level = 1;
        loop {
            if level == self.levels.len() {
                self.levels.push(Vec::new());
            }
            if self.levels[level].is_empty() {
                self.levels[level] = carry;
                return Ok(());
            }
            let merged = merge_sorted(&carry, &self.levels[level]);
            self.levels[level].clear();
            carry = sample_odd_or_even(&merged, self.coins.flip())?;
            level += 1;
        }
    }

    pub fn samples(&self) -> WeightedSamples<T> {
        let levels = std::iter::once((0, self.base.as_slice())).chain(
            self.levels
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(_, l)| !l.is_empty())
                .map(|(i, l)| (i, l.as_slice())),
        );
        WeightedSamples::from_levels(levels)
    }

    pub fn query(&self, phi: f64) -> Result<T> {
        if self.n == 0 {
            return Err(Error::EmptySketch);
        }
        self.samples().estimate(phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coins::InjectedCoins;
    use proptest::prelude::*;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    fn injected(coins: &[bool]) -> CoinSource {
        CoinSource::injected(InjectedCoins::new(coins.to_vec()).unwrap())
    }

    #[test]
    fn exact_rank_counts_strictly_smaller() {
        assert_eq!(exact_rank(&[1, 2, 3], 3), 2);
        assert_eq!(exact_rank(&[1.0, 2.0, 3.0], 2.5), 2);
        assert_eq!(exact_rank::<u64>(&[], 7), 0);
    }

    #[test]
    fn exact_rank_of_median_on_uniform_stream() {
        let mut rng = SmallRng::seed_from_u64(1);
        let stream: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let median = exact_quantile(&stream, 0.5).unwrap();
        // Brute-force count over the generated stream; values are distinct.
        assert_eq!(exact_rank(&stream, median), 5_000);
        let oracle = ExactOracle::new(stream.clone()).unwrap();
        assert_eq!(oracle.rank(median), 5_000);
    }

    #[test]
    fn exact_quantile_examples() {
        assert_eq!(exact_quantile(&[1, 2, 3, 4], 0.5).unwrap(), 3);
        assert_eq!(exact_quantile(&[5], 0.0).unwrap(), 5);
        assert_eq!(exact_quantile(&[1, 2, 3, 4], 0.0).unwrap(), 1);
        assert_eq!(exact_quantile(&[1, 2, 3, 4], 1.0).unwrap(), 4);
        assert_eq!(exact_quantile::<u64>(&[], 0.5), Err(Error::EmptyStream));
        assert_eq!(exact_quantile(&[1], 1.5), Err(Error::InvalidPhi(1.5)));
    }

    #[test]
    fn sampling_selects_parity() {
        assert_eq!(sample_odd_or_even(&[1, 2, 3, 4], false).unwrap(), [1, 3]);
        assert_eq!(sample_odd_or_even(&[1, 2, 3, 4], true).unwrap(), [2, 4]);
        assert_eq!(sample_odd_or_even(&[1, 2, 3], true), Err(Error::OddLength(3)));
    }

    #[test]
    fn merge_examples() {
        assert_eq!(merge_sorted(&[1, 3], &[2, 4]), [1, 2, 3, 4]);
        assert_eq!(merge_sorted(&[], &[2]), [2]);
    }

    #[test]
    fn seq_update_examples() {
        let mut s = SequentialSketch::new(2, injected(&[false])).unwrap();
        for x in [4, 1, 3] {
            s.update(x).unwrap();
        }
        assert_eq!(s.base(), [4, 1, 3]);
        assert_eq!(s.height(), 0);

        s.update(2).unwrap();
        assert!(s.base().is_empty());
        assert_eq!(s.level(1), [1, 3]);

        let mut s = SequentialSketch::new(2, injected(&[false, false, false])).unwrap();
        for x in 1..=8u64 {
            s.update(x).unwrap();
        }
        assert!(s.base().is_empty());
        assert!(s.level(1).is_empty());
        // [1,3] then [5,7] -> merge [1,3,5,7] -> even -> [1,5]
        assert_eq!(s.level(2), [1, 5]);
    }

    #[test]
    fn seq_query_examples() {
        let mut s = SequentialSketch::new(2, CoinSource::seeded(0)).unwrap();
        assert_eq!(s.query(0.5), Err(Error::EmptySketch));
        for x in [1, 2, 3, 4] {
            s.update(x).unwrap();
            if s.len() == 3 {
                // still all in base: 1,2,3; floor(0.5*3) = 1 -> 2
                assert_eq!(s.query(0.5).unwrap(), 2);
            }
        }
        // four elements have triggered sampling, so level 1 holds [1,3] or [2,4]
        let l1 = s.level(1).to_vec();
        assert_eq!(s.query(0.0).unwrap(), l1[0]);

        let mut s = SequentialSketch::new(4, CoinSource::seeded(0)).unwrap();
        for x in [1, 2, 3, 4] {
            s.update(x).unwrap();
        }
        assert_eq!(s.query(0.5).unwrap(), 3);
        assert_eq!(s.query(0.0).unwrap(), 1);
    }

    #[test]
    fn weighted_bracket_example() {
        // level 1 holding [10, 20]: n = 4, floor(0.9 * 4) = 3, prefixes 0, 2 -> 20
        let samples = WeightedSamples::from_levels([(1, &[10u64, 20][..])]);
        assert_eq!(samples.total_weight(), 4);
        assert_eq!(samples.estimate(0.9).unwrap(), 20);
        assert_eq!(samples.estimate(0.0).unwrap(), 10);
        assert_eq!(samples.estimate(0.49).unwrap(), 10);
    }

    #[test]
    fn sequential_accuracy_baseline() {
        let mut rng = SmallRng::seed_from_u64(42);
        let stream: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let mut s = SequentialSketch::new(256, CoinSource::seeded(3)).unwrap();
        for &x in &stream {
            s.update(x).unwrap();
        }
        let oracle = ExactOracle::new(stream).unwrap();
        let n = oracle.len() as f64;
        let worst = (1..10)
            .map(|d| {
                let phi = d as f64 / 10.0;
                let est = s.query(phi).unwrap();
                (oracle.rank(est) as f64 - (phi * n).floor()).abs() / n
            })
            .fold(0.0, f64::max);
        // one sampling round at most (2k = 512 < n < 2^6 * 2k); loose guard
        assert!(worst < 0.02, "worst normalized rank error {worst}");
    }

    fn structure(s: &SequentialSketch<u64>) -> (Vec<u64>, Vec<Vec<u64>>) {
        (s.base().to_vec(), (1..=s.height()).map(|i| s.level(i).to_vec()).collect())
    }

    proptest! {
        #[test]
        fn merge_matches_sorted_concat(mut a in prop::collection::vec(any::<u32>(), 0..64),
                                       mut b in prop::collection::vec(any::<u32>(), 0..64)) {
            a.sort();
            b.sort();
            let mut expected = [a.clone(), b.clone()].concat();
            expected.sort();
            prop_assert_eq!(merge_sorted(&a, &b), expected);
        }

        #[test]
        fn sampling_partitions_input(mut v in prop::collection::vec(any::<u32>(), 0..32)) {
            if v.len() % 2 == 1 { v.pop(); }
            v.sort();
            let even = sample_odd_or_even(&v, false).unwrap();
            let odd = sample_odd_or_even(&v, true).unwrap();
            prop_assert_eq!(even.len(), v.len() / 2);
            prop_assert!(is_sorted(&even) && is_sorted(&odd));
            let mut union = [even, odd].concat();
            union.sort();
            prop_assert_eq!(union, v);
        }

        #[test]
        fn weight_and_shape_invariants(k in 1usize..8, seed in any::<u64>(), n in 0usize..400) {
            let mut s = SequentialSketch::new(k, CoinSource::seeded(seed)).unwrap();
            let mut rng = SmallRng::seed_from_u64(seed);
            for _ in 0..n {
                s.update(rng.random_range(0..1000u64)).unwrap();
                prop_assert!(s.base().len() < 2 * k);
                for i in 1..=s.height() {
                    let len = s.level(i).len();
                    prop_assert!(len == 0 || len == k);
                    prop_assert!(is_sorted(s.level(i)));
                }
                prop_assert_eq!(s.samples().total_weight(), s.len());
            }
        }

        #[test]
        fn full_information_matches_oracle(k in 1usize..16, seed in any::<u64>()) {
            let mut rng = SmallRng::seed_from_u64(seed);
            let len = rng.random_range(1..2 * k);
            let stream: Vec<u64> = (0..len).map(|_| rng.random_range(0..50)).collect();
            let mut s = SequentialSketch::new(k, CoinSource::seeded(seed)).unwrap();
            for &x in &stream { s.update(x).unwrap(); }
            for d in 0..=20 {
                let phi = d as f64 / 20.0;
                prop_assert_eq!(s.query(phi).unwrap(), exact_quantile(&stream, phi).unwrap());
            }
        }

        #[test]
        fn identical_coins_identical_structure(seed in any::<u64>(), k in 1usize..6) {
            let coins: Vec<bool> = {
                let mut rng = SmallRng::seed_from_u64(seed);
                (0..64).map(|_| rng.random()).collect()
            };
            let mut a = SequentialSketch::new(k, injected(&coins)).unwrap();
            let mut b = SequentialSketch::new(k, injected(&coins)).unwrap();
            let mut rng = SmallRng::seed_from_u64(seed ^ 1);
            for _ in 0..200 {
                let x = rng.random_range(0..100u64);
                a.update(x).unwrap();
                b.update(x).unwrap();
                prop_assert_eq!(structure(&a), structure(&b));
            }
        }
    }
}
