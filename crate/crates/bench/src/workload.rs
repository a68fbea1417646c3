//! Workload drivers. Streams are generated up front from the seed so timing
//! covers only sketch operations.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use clap::ValueEnum;
use quancurrent::analysis::{eh_region_bound, eh_total_bound, relaxation, simulate_holes};
use quancurrent::{CoinSource, ExactOracle, Quancurrent, SequentialSketch, SketchConfig};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::affinity::pin_current;
use crate::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    UpdateOnly,
    QueryOnly,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    /// Uniform on [0, 1).
    Uniform,
    /// Normal with mean 0 and standard deviation 1.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Concurrent,
    Sequential,
}

/// One experiment configuration.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub mode: Mode,
    pub update_threads: usize,
    pub query_threads: usize,
    /// Elements to ingest; for query-only runs, the number of queries.
    pub n: u64,
    pub prefill: u64,
    pub k: usize,
    pub b: usize,
    pub numa_nodes: usize,
    pub rho: f64,
    pub dist: Dist,
    pub seed: u64,
    pub runs: usize,
    pub pin: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            mode: Mode::UpdateOnly,
            update_threads: 1,
            query_threads: 0,
            n: 1_000_000,
            prefill: 0,
            k: 4096,
            b: 16,
            numa_nodes: 1,
            rho: 0.0,
            dist: Dist::Uniform,
            seed: 1,
            runs: 15,
            pin: true,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.mode == Mode::QueryOnly && self.prefill == 0 {
            return bad("query-only mode needs a prefill".into());
        }
        if self.mode != Mode::UpdateOnly && self.query_threads == 0 {
            return bad(format!("{:?} mode needs query threads", self.mode));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be finite and >= 0, got {}", self.rho));
        }
        self.config(0).validate()?;
        let cap = self.config(0).capacity();
        if self.prefill + self.n > cap && self.mode != Mode::QueryOnly {
            return bad(format!("{} elements exceed the sketch capacity {cap}", self.prefill + self.n));
        }
        Ok(())
    }

    pub fn config(&self, run: usize) -> SketchConfig {
        let mut c = SketchConfig::new(self.k, self.b)
            .with_threads(self.update_threads, self.numa_nodes)
            .with_seed(run_seed(self.seed, run));
        c.max_participants = c.max_participants.max(self.update_threads + self.query_threads + 8);
        c
    }

    /// Buffering relaxation for this configuration.
    pub fn relaxation(&self) -> Result<u64> {
        Ok(relaxation(
            self.k as u64,
            self.numa_nodes as u64,
            self.update_threads as u64,
            self.b as u64,
        )?)
    }
}

fn run_seed(seed: u64, run: usize) -> u64 {
    seed.wrapping_add((run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn draw(rng: &mut SmallRng, dist: Dist) -> f64 {
    match dist {
        Dist::Uniform => rng.random::<f64>(),
        Dist::Normal => rng.sample(StandardNormal),
    }
}

/// Splits `n` elements over `threads` streams, each from its own generator.
pub fn generate_streams(n: u64, threads: usize, dist: Dist, seed: u64) -> Vec<Vec<f64>> {
    (0..threads)
        .map(|t| {
            let len = n / threads as u64 + u64::from((t as u64) < n % threads as u64);
            let mut rng = SmallRng::seed_from_u64(seed ^ (t as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F));
            (0..len).map(|_| draw(&mut rng, dist)).collect()
        })
        .collect()
}

/// Ingests one stream per update thread concurrently; returns wall time.
pub fn ingest(q: &Quancurrent<f64>, streams: Vec<Vec<f64>>, pin: bool) -> Result<Duration> {
    let barrier = Arc::new(Barrier::new(streams.len() + 1));
    let handles: Vec<_> = streams
        .into_iter()
        .enumerate()
        .map(|(t, stream)| {
            let (q, barrier) = (q.clone(), Arc::clone(&barrier));
            thread::spawn(move || -> Result<()> {
                if pin {
                    pin_current(t);
                }
                let mut u = q.updater(t)?;
                barrier.wait();
                for x in stream {
                    u.update(x)?;
                }
                Ok(())
            })
        })
        .collect();
    barrier.wait();
    let start = Instant::now();
    join_all(handles)?;
    Ok(start.elapsed())
}

fn join_all(handles: Vec<thread::JoinHandle<Result<()>>>) -> Result<()> {
    let mut first = Ok(());
    for h in handles {
        let r = h
            .join()
            .unwrap_or_else(|_| Err(BenchError::Invariant("worker thread panicked".into())));
        if first.is_ok() {
            first = r;
        }
    }
    first
}

/// Post-run conservation audit: every update is summarized or buffered.
pub fn audit(q: &Quancurrent<f64>, expected_updates: u64) -> Result<()> {
    let a = q.audit()?;
    if !a.is_conserved() || a.updates != expected_updates {
        return Err(BenchError::Invariant(format!(
            "conservation audit failed: {a:?}, expected {expected_updates} updates"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ThroughputRow {
    pub run: String,
    pub mode: Mode,
    pub k: usize,
    pub b: usize,
    pub update_threads: usize,
    pub query_threads: usize,
    pub numa_nodes: usize,
    pub rho: f64,
    pub dist: Dist,
    pub n: u64,
    pub prefill: u64,
    pub elapsed_s: f64,
    pub updates: u64,
    pub queries: u64,
    pub update_ops_per_s: f64,
    pub query_ops_per_s: f64,
    pub cache_hit_rate: f64,
    pub holes: u64,
    pub batches: u64,
    pub stream_size: u64,
    pub audit_ok: bool,
}

struct QueryTally {
    queries: u64,
    hits: u64,
}

fn spawn_queriers(
    q: &Quancurrent<f64>,
    spec: &WorkloadSpec,
    stop: &Arc<AtomicBool>,
    budget: Option<u64>,
    seed: u64,
) -> Vec<thread::JoinHandle<Result<QueryTally>>> {
    (0..spec.query_threads)
        .map(|t| {
            let (q, stop) = (q.clone(), Arc::clone(stop));
            let (rho, pin, slot) = (spec.rho, spec.pin, spec.update_threads + t);
            let quota = budget.map(|n| n / spec.query_threads as u64 + u64::from((t as u64) < n % spec.query_threads as u64));
            thread::spawn(move || -> Result<QueryTally> {
                if pin {
                    pin_current(slot);
                }
                let mut ctx = q.query_context(rho)?;
                let mut rng = SmallRng::seed_from_u64(seed ^ (slot as u64 + 77));
                let mut done = 0u64;
                loop {
                    match quota {
                        Some(n) if done >= n => break,
                        None if stop.load(Ordering::Relaxed) => break,
                        _ => {}
                    }
                    match ctx.query(rng.random::<f64>()) {
                        Ok(_) => done += 1,
                        Err(quancurrent::Error::NoData) => thread::yield_now(),
                        Err(e) => return Err(e.into()),
                    }
                }
                Ok(QueryTally {
                    queries: done,
                    hits: ctx.stats().cache_hits,
                })
            })
        })
        .collect()
}

fn join_queriers(handles: Vec<thread::JoinHandle<Result<QueryTally>>>) -> Result<QueryTally> {
    let mut total = QueryTally { queries: 0, hits: 0 };
    for h in handles {
        let t = h
            .join()
            .unwrap_or_else(|_| Err(BenchError::Invariant("query thread panicked".into())))?;
        total.queries += t.queries;
        total.hits += t.hits;
    }
    Ok(total)
}

/// Runs `spec.runs` repetitions and appends a `mean` row.
pub fn run_throughput(spec: &WorkloadSpec) -> Result<Vec<ThroughputRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.runs + 1);
    for run in 0..spec.runs {
        rows.push(throughput_once(spec, run)?);
    }
    rows.push(mean_row(&rows));
    Ok(rows)
}

fn throughput_once(spec: &WorkloadSpec, run: usize) -> Result<ThroughputRow> {
    let seed = run_seed(spec.seed, run);
    let q = Quancurrent::<f64>::new(spec.config(run))?;
    if spec.prefill > 0 {
        let streams = generate_streams(spec.prefill, spec.update_threads, spec.dist, seed ^ 0x5EED);
        ingest(&q, streams, spec.pin)?;
    }

    let (elapsed, updates, tally) = match spec.mode {
        Mode::UpdateOnly => {
            let streams = generate_streams(spec.n, spec.update_threads, spec.dist, seed);
            let t = ingest(&q, streams, spec.pin)?;
            (t, spec.n, QueryTally { queries: 0, hits: 0 })
        }
        Mode::QueryOnly => {
            let stop = Arc::new(AtomicBool::new(false));
            let start = Instant::now();
            let tally = join_queriers(spawn_queriers(&q, spec, &stop, Some(spec.n), seed))?;
            (start.elapsed(), 0, tally)
        }
        Mode::Mixed => {
            let streams = generate_streams(spec.n, spec.update_threads, spec.dist, seed);
            let stop = Arc::new(AtomicBool::new(false));
            let queriers = spawn_queriers(&q, spec, &stop, None, seed);
            let ingested = ingest(&q, streams, spec.pin);
            stop.store(true, Ordering::SeqCst);
            let tally = join_queriers(queriers);
            let t = ingested?;
            (t, spec.n, tally?)
        }
    };

    audit(&q, spec.prefill + updates)?;
    let secs = elapsed.as_secs_f64().max(1e-9);
    let holes = q.hole_stats();
    Ok(ThroughputRow {
        run: run.to_string(),
        mode: spec.mode,
        k: spec.k,
        b: spec.b,
        update_threads: spec.update_threads,
        query_threads: spec.query_threads,
        numa_nodes: spec.numa_nodes,
        rho: spec.rho,
        dist: spec.dist,
        n: spec.n,
        prefill: spec.prefill,
        elapsed_s: secs,
        updates,
        queries: tally.queries,
        update_ops_per_s: updates as f64 / secs,
        query_ops_per_s: tally.queries as f64 / secs,
        cache_hit_rate: if tally.queries == 0 { 0.0 } else { tally.hits as f64 / tally.queries as f64 },
        holes: holes.holes,
        batches: holes.batches,
        stream_size: q.stream_size(),
        audit_ok: true,
    })
}

fn mean_row(rows: &[ThroughputRow]) -> ThroughputRow {
    let n = rows.len() as f64;
    let avg = |f: fn(&ThroughputRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let avg_u = |f: fn(&ThroughputRow) -> u64| (rows.iter().map(f).sum::<u64>() as f64 / n).round() as u64;
    ThroughputRow {
        run: "mean".into(),
        elapsed_s: avg(|r| r.elapsed_s),
        updates: avg_u(|r| r.updates),
        queries: avg_u(|r| r.queries),
        update_ops_per_s: avg(|r| r.update_ops_per_s),
        query_ops_per_s: avg(|r| r.query_ops_per_s),
        cache_hit_rate: avg(|r| r.cache_hit_rate),
        holes: avg_u(|r| r.holes),
        batches: avg_u(|r| r.batches),
        stream_size: avg_u(|r| r.stream_size),
        audit_ok: rows.iter().all(|r| r.audit_ok),
        ..rows[0].clone()
    }
}

/// The percentiles 0.01, 0.02, ..., 0.99.
pub fn phi_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracyRow {
    pub k: usize,
    pub dist: Dist,
    pub update_threads: usize,
    pub n: u64,
    pub phi: f64,
    pub estimate: f64,
    pub exact: f64,
    pub rank_error: f64,
    pub seq_estimate: f64,
    pub seq_rank_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracySummary {
    pub max_rank_error: f64,
    pub seq_max_rank_error: f64,
    /// Relaxation `r` divided by the stream size.
    pub relaxation_allowance: f64,
    pub stream_size: u64,
}

/// Normalized distance between the rank of `x` and the target rank.
pub fn rank_error(oracle: &ExactOracle<f64>, x: f64, phi: f64) -> f64 {
    let n = oracle.len() as f64;
    (oracle.rank(x) as f64 - (phi * n).floor()).abs() / n
}

/// Ingests one stream concurrently and sequentially, then compares both
/// sets of quiescent estimates on the percentile grid with exact answers.
pub fn run_accuracy(spec: &WorkloadSpec) -> Result<(Vec<AccuracyRow>, AccuracySummary)> {
    spec.validate()?;
    let streams = generate_streams(spec.n, spec.update_threads, spec.dist, spec.seed);
    let all: Vec<f64> = streams.iter().flatten().copied().collect();

    let mut seq = SequentialSketch::new(spec.k, CoinSource::seeded(spec.seed ^ 0x51))?;
    for &x in &all {
        seq.update(x)?;
    }
    let q = Quancurrent::<f64>::new(spec.config(0))?;
    ingest(&q, streams, spec.pin)?;
    audit(&q, spec.n)?;
    let snapshot = q.collect()?.snapshot;

    let oracle = ExactOracle::new(all)?;
    let mut rows = Vec::new();
    let mut summary = AccuracySummary {
        max_rank_error: 0.0,
        seq_max_rank_error: 0.0,
        relaxation_allowance: spec.relaxation()? as f64 / spec.n as f64,
        stream_size: snapshot.represented_size(),
    };
    for phi in phi_grid() {
        let est = snapshot.estimate(phi)?;
        let seq_est = seq.query(phi)?;
        let row = AccuracyRow {
            k: spec.k,
            dist: spec.dist,
            update_threads: spec.update_threads,
            n: spec.n,
            phi,
            estimate: est,
            exact: oracle.quantile(phi)?,
            rank_error: rank_error(&oracle, est, phi),
            seq_estimate: seq_est,
            seq_rank_error: rank_error(&oracle, seq_est, phi),
        };
        summary.max_rank_error = summary.max_rank_error.max(row.rank_error);
        summary.seq_max_rank_error = summary.seq_max_rank_error.max(row.seq_rank_error);
        rows.push(row);
    }
    Ok((rows, summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct StderrRow {
    pub engine: Engine,
    pub k: usize,
    pub update_threads: usize,
    pub n: u64,
    pub runs: usize,
    pub phi: f64,
    pub stderr: f64,
}

/// Root-mean-square normalized rank error per grid point over `spec.runs`
/// independent streams.
pub fn run_stderr(spec: &WorkloadSpec, engine: Engine) -> Result<Vec<StderrRow>> {
    spec.validate()?;
    if spec.runs < 2 {
        return Err(BenchError::Config("stderr needs at least 2 runs".into()));
    }
    let grid = phi_grid();
    let mut sq = vec![0.0; grid.len()];
    for run in 0..spec.runs {
        let seed = run_seed(spec.seed, run);
        let streams = generate_streams(spec.n, spec.update_threads, spec.dist, seed);
        let all: Vec<f64> = streams.iter().flatten().copied().collect();
        let estimates: Vec<f64> = match engine {
            Engine::Sequential => {
                let mut s = SequentialSketch::new(spec.k, CoinSource::seeded(seed ^ 0x51))?;
                for &x in &all {
                    s.update(x)?;
                }
                let samples = s.samples();
                grid.iter().map(|&p| samples.estimate(p)).collect::<quancurrent::Result<_>>()?
            }
            Engine::Concurrent => {
                let q = Quancurrent::<f64>::new(spec.config(run))?;
                ingest(&q, streams, spec.pin)?;
                audit(&q, spec.n)?;
                let snap = q.collect()?.snapshot;
                grid.iter().map(|&p| snap.estimate(p)).collect::<quancurrent::Result<_>>()?
            }
        };
        let oracle = ExactOracle::new(all)?;
        let n = oracle.len() as f64;
        for ((acc, &phi), &est) in sq.iter_mut().zip(&grid).zip(&estimates) {
            let e = oracle.rank(est) as f64 / n - phi;
            *acc += e * e;
        }
    }
    Ok(grid
        .iter()
        .zip(sq)
        .map(|(&phi, s)| StderrRow {
            engine,
            k: spec.k,
            update_threads: spec.update_threads,
            n: spec.n,
            runs: spec.runs,
            phi,
            stderr: (s / spec.runs as f64).sqrt(),
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct HolesRow {
    pub b: usize,
    pub k: usize,
    pub regions: u64,
    pub trials: u64,
    pub sim_mean: f64,
    pub sim_ci_low: f64,
    pub sim_ci_high: f64,
    pub first_region_bound: f64,
    pub closed_form_bound: f64,
    pub e2e_update_threads: usize,
    pub e2e_batches: u64,
    pub e2e_holes_per_batch: f64,
}

/// Simulated, closed-form and end-to-end holes per batch. The end-to-end
/// column runs the real sketch on `spec.n` elements and is skipped when
/// `spec.n` is 0.
pub fn run_holes(spec: &WorkloadSpec, trials: u64) -> Result<HolesRow> {
    let (b, k) = (spec.b as u64, spec.k as u64);
    let regions = quancurrent::analysis::regions(b, k)?;
    let sim = simulate_holes(b, regions, trials, spec.seed)?;
    let total = eh_total_bound(b, k)?.to_f64();
    let first = eh_region_bound(1, b)?.to_f64();

    let (mut batches, mut per_batch) = (0, 0.0);
    if spec.n > 0 {
        spec.validate()?;
        let mut c = spec.config(0);
        c.instrumented = true;
        let q = Quancurrent::<f64>::new(c)?;
        ingest(&q, generate_streams(spec.n, spec.update_threads, spec.dist, spec.seed), spec.pin)?;
        audit(&q, spec.n)?;
        let h = q.hole_stats();
        batches = h.batches;
        per_batch = if h.batches == 0 { 0.0 } else { h.holes as f64 / h.batches as f64 };
    }
    Ok(HolesRow {
        b: spec.b,
        k: spec.k,
        regions,
        trials,
        sim_mean: sim.mean,
        sim_ci_low: sim.ci_low,
        sim_ci_high: sim.ci_high,
        first_region_bound: first,
        closed_form_bound: total,
        e2e_update_threads: spec.update_threads,
        e2e_batches: batches,
        e2e_holes_per_batch: per_batch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorkloadSpec {
        WorkloadSpec {
            n: 20_000,
            k: 64,
            b: 8,
            runs: 2,
            pin: false,
            ..WorkloadSpec::default()
        }
    }

    #[test]
    fn streams_split_evenly_and_reproducibly() {
        let s = generate_streams(10, 3, Dist::Normal, 4);
        assert_eq!(s.iter().map(Vec::len).collect::<Vec<_>>(), [4, 3, 3]);
        assert_eq!(s, generate_streams(10, 3, Dist::Normal, 4));
        let u = generate_streams(1000, 1, Dist::Uniform, 4);
        assert!(u[0].iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn validation_rules() {
        let mut s = small();
        s.mode = Mode::QueryOnly;
        s.query_threads = 1;
        assert!(s.validate().is_err());
        s.prefill = 100;
        assert!(s.validate().is_ok());
        let s = WorkloadSpec { b: 7, ..small() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn throughput_smoke() {
        let rows = run_throughput(&small()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].run, "mean");
        assert!(rows.iter().all(|r| r.update_ops_per_s > 0.0 && r.audit_ok));
    }

    #[test]
    fn mixed_and_query_only_run() {
        let s = WorkloadSpec {
            mode: Mode::Mixed,
            query_threads: 1,
            update_threads: 2,
            rho: 0.05,
            prefill: 5_000,
            runs: 1,
            ..small()
        };
        let rows = run_throughput(&s).unwrap();
        assert!(rows[0].queries > 0);
        let s = WorkloadSpec {
            mode: Mode::QueryOnly,
            query_threads: 2,
            prefill: 5_000,
            n: 300,
            runs: 1,
            ..small()
        };
        assert_eq!(run_throughput(&s).unwrap()[0].queries, 300);
    }

    #[test]
    fn accuracy_single_thread_is_reproducible() {
        let (a, sa) = run_accuracy(&small()).unwrap();
        let (b, _) = run_accuracy(&small()).unwrap();
        assert_eq!(a.len(), 99);
        assert_eq!(
            a.iter().map(|r| r.estimate).collect::<Vec<_>>(),
            b.iter().map(|r| r.estimate).collect::<Vec<_>>()
        );
        assert!(sa.max_rank_error < 0.1);
    }

    #[test]
    fn stderr_rows() {
        let rows = run_stderr(&WorkloadSpec { runs: 3, ..small() }, Engine::Sequential).unwrap();
        assert_eq!(rows.len(), 99);
        assert!(rows.iter().all(|r| r.stderr >= 0.0));
    }

    #[test]
    fn holes_row() {
        let r = run_holes(&small(), 2000).unwrap();
        assert_eq!(r.regions, 16);
        assert!(r.closed_form_bound <= 2.8 && r.first_region_bound <= 1.4);
        assert!(r.e2e_batches > 0);
    }
}
