//! Expected-holes model for one Gather&Sort batch.
//!
//! The `2k` buffer splits into `2k/b` regions of `b` slots. Region `j`
//! (1-based) is written by one thread `T_j`; the owner `T_O` writes its own
//! `b` slots, reads the `j-1` regions below, and then reads region `j`. With
//! only these two threads stepping, each with probability 1/2, the owner
//! reads a hole at slot `i+1` of region `j` when it completes `jb+i+1` steps
//! before `T_j` completes `i+1` writes.

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::dyadic::{binomial, Dyadic};
use crate::error::{Error, Result};

/// Upper bound on the total expected holes per batch, for every `b`.
pub const TOTAL_HOLES_CEILING: f64 = 2.8;
/// Upper bound on the expected holes in the first region.
pub const FIRST_REGION_CEILING: f64 = 1.4;

fn check_slot(i: u64, j: u64, b: u64) -> Result<()> {
    if b == 0 || j == 0 || i >= b {
        return Err(Error::Domain(format!(
            "need b >= 1, j >= 1 and i < b; got i={i}, j={j}, b={b}"
        )));
    }
    Ok(())
}

/// Bound on the probability that the first hole of region `j` is at slot
/// `i+1`: `C(jb+2i, i) / 2^(jb+2i+1)`.
pub fn pi_bound(i: u64, j: u64, b: u64) -> Result<Dyadic> {
    check_slot(i, j, b)?;
    let n = j * b + 2 * i;
    Ok(Dyadic::new(binomial(n, i), n + 1))
}

/// Bound on the probability that region `j` has at least one hole.
pub fn p_bound(j: u64, b: u64) -> Result<Dyadic> {
    check_slot(0, j, b)?;
    (0..b).try_fold(Dyadic::zero(), |acc, i| Ok(acc.add(&pi_bound(i, j, b)?)))
}

/// Closed-form bound on the expected holes in region `j`:
/// `b^2 C((j+2)b-2, b-1) / 2^((j+2)b-1)`.
pub fn eh_region_bound(j: u64, b: u64) -> Result<Dyadic> {
    check_slot(0, j, b)?;
    let n = (j + 2) * b;
    Ok(Dyadic::new(binomial(n - 2, b - 1) * (b * b), n - 1))
}

/// Number of regions in a `2k` buffer.
pub fn regions(b: u64, k: u64) -> Result<u64> {
    if b == 0 || k == 0 || !(2 * k).is_multiple_of(b) {
        return Err(Error::Domain(format!("b={b} must divide 2k={}", 2 * k)));
    }
    Ok(2 * k / b)
}

/// Sum of the region bounds over all `2k/b` regions. Fails if the sum
/// exceeds [`TOTAL_HOLES_CEILING`].
pub fn eh_total_bound(b: u64, k: u64) -> Result<Dyadic> {
    let r = regions(b, k)?;
    let total = (1..=r).try_fold(Dyadic::zero(), |acc, j| Ok(acc.add(&eh_region_bound(j, b)?)))?;
    if !total.le_fraction(28, 10) {
        return Err(Error::InvariantViolation(format!(
            "expected-holes bound {} exceeds {TOTAL_HOLES_CEILING} for b={b}, k={k}",
            total.to_f64()
        )));
    }
    Ok(total)
}

/// Monte-Carlo estimate of holes per batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleEstimate {
    pub trials: u64,
    pub mean: f64,
    pub std_dev: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Regions actually simulated; see [`simulate_holes`].
    pub simulated_regions: u64,
}

const CHUNK: u64 = 1024;
// Regions whose expected-holes bound is below this contribute nothing
// measurable and are not simulated.
const NEGLIGIBLE: f64 = 1e-18;

/// Simulates the two-thread race for every region of a batch and reports
/// the mean number of holes with a 95% confidence interval.
///
/// Regions are simulated while their closed-form bound is at least 1e-18;
/// the bounds halve from one region to the next, so the skipped tail biases
/// the mean by less than 2e-18.
pub fn simulate_holes(b: u64, regions: u64, trials: u64, seed: u64) -> Result<HoleEstimate> {
    if trials == 0 || regions == 0 {
        return Err(Error::Domain("trials and regions must be positive".into()));
    }
    check_slot(0, 1, b)?;
    let mut simulated = 0;
    while simulated < regions && eh_region_bound(simulated + 1, b)?.to_f64() >= NEGLIGIBLE {
        simulated += 1;
    }

    let chunks = trials.div_ceil(CHUNK);
    let (sum, sum_sq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = SmallRng::seed_from_u64(seed ^ c.wrapping_mul(0xD134_2543_DE82_EF95));
            let n = CHUNK.min(trials - c * CHUNK);
            let mut s = 0u64;
            let mut sq = 0u64;
            for _ in 0..n {
                let h = batch_holes(&mut rng, b, simulated);
                s += h;
                sq += h * h;
            }
            (s, sq)
        })
        .reduce(|| (0, 0), |a, x| (a.0 + x.0, a.1 + x.1));

    let t = trials as f64;
    let mean = sum as f64 / t;
    let var = if trials > 1 {
        ((sum_sq as f64 - t * mean * mean) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    let std_dev = var.sqrt();
    let half = 1.96 * std_dev / t.sqrt();
    Ok(HoleEstimate {
        trials,
        mean,
        std_dev,
        ci_low: (mean - half).max(0.0),
        ci_high: mean + half,
        simulated_regions: simulated,
    })
}

/// Owner steps taken before the writer's next step: geometric with
/// success probability 1/2.
fn owner_steps(rng: &mut SmallRng) -> u64 {
    rng.random::<u64>().trailing_zeros() as u64
}

fn batch_holes(rng: &mut SmallRng, b: u64, regions: u64) -> u64 {
    let mut holes = 0;
    for j in 1..=regions {
        let mut owner = 0;
        for m in 1..=b {
            owner += owner_steps(rng);
            // The owner's read of slot m is its (jb + m)-th step.
            if owner >= j * b + m {
                holes += 1;
            }
        }
    }
    holes
}
