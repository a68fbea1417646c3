//! Python bindings. Import as `pyquancurrent` after building with the
//! `extension-module` feature; see `python/smoke_test.py`.

use std::sync::Mutex;
use std::thread;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use quancurrent::analysis;
use quancurrent::{CoinSource, Error, QueryContext, SketchConfig, UpdaterContext};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvariantViolation(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Concurrent quantiles sketch over floats. Holds one updater per update
/// thread; `update_many` drives all of them in parallel.
#[pyclass(frozen, module = "pyquancurrent")]
struct Quancurrent {
    sketch: quancurrent::Quancurrent<f64>,
    updaters: Mutex<Vec<Mutex<UpdaterContext<f64>>>>,
}

#[pymethods]
impl Quancurrent {
    #[new]
    #[pyo3(signature = (k, b, update_threads = 1, numa_nodes = 1, seed = 1))]
    fn new(k: usize, b: usize, update_threads: usize, numa_nodes: usize, seed: u64) -> PyResult<Self> {
        let cfg = SketchConfig::new(k, b)
            .with_threads(update_threads, numa_nodes)
            .with_seed(seed);
        let sketch = quancurrent::Quancurrent::new(cfg).map_err(to_py)?;
        let updaters = (0..update_threads)
            .map(|t| sketch.updater(t).map(Mutex::new))
            .collect::<quancurrent::Result<_>>()
            .map_err(to_py)?;
        Ok(Self {
            sketch,
            updaters: Mutex::new(updaters),
        })
    }

    /// Adds one element through updater `thread`.
    #[pyo3(signature = (x, thread = 0))]
    fn update(&self, x: f64, thread: usize) -> PyResult<()> {
        let ups = self.updaters.lock().unwrap();
        let u = ups
            .get(thread)
            .ok_or_else(|| PyValueError::new_err(format!("no open updater {thread}")))?;
        let r = u.lock().unwrap().update(x);
        r.map_err(to_py)
    }

    /// Splits `xs` over every updater and ingests the parts in parallel
    /// with the GIL released.
    fn update_many(&self, py: Python<'_>, xs: Vec<f64>) -> PyResult<()> {
        let ups = self.updaters.lock().unwrap();
        if ups.is_empty() {
            return Err(PyValueError::new_err("sketch is closed"));
        }
        let chunk = xs.len().div_ceil(ups.len()).max(1);
        py.detach(|| {
            thread::scope(|s| {
                let hs: Vec<_> = xs
                    .chunks(chunk)
                    .zip(ups.iter())
                    .map(|(part, u)| {
                        s.spawn(move || {
                            let mut u = u.lock().unwrap();
                            part.iter().try_for_each(|&x| u.update(x))
                        })
                    })
                    .collect();
                hs.into_iter()
                    .try_for_each(|h| h.join().unwrap_or_else(|_| Err(Error::InvariantViolation("updater panicked".into()))))
            })
        })
        .map_err(to_py)
    }

    /// Drops every updater; afterwards `audit` is exact and updates fail.
    fn close(&self) {
        self.updaters.lock().unwrap().clear();
    }

    fn query(&self, phi: f64) -> PyResult<f64> {
        self.sketch.query(phi).map_err(to_py)
    }

    /// Answers several quantiles from a single snapshot.
    fn quantiles(&self, phis: Vec<f64>) -> PyResult<Vec<f64>> {
        let c = self.sketch.collect().map_err(to_py)?;
        phis.into_iter()
            .map(|p| c.snapshot.estimate(p).map_err(to_py))
            .collect()
    }

    /// A query handle with snapshot caching controlled by `rho`.
    #[pyo3(signature = (rho = 0.0))]
    fn query_context(&self, rho: f64) -> PyResult<QueryHandle> {
        let ctx = self.sketch.query_context(rho).map_err(to_py)?;
        Ok(QueryHandle { ctx: Mutex::new(ctx) })
    }

    fn stream_size(&self) -> u64 {
        self.sketch.stream_size()
    }

    fn tritmap(&self) -> String {
        self.sketch.tritmap().to_string()
    }

    fn dump(&self) -> PyResult<String> {
        Ok(self.sketch.dump().map_err(to_py)?.to_string())
    }

    /// `(batches, holes)` observed by the ingest units.
    fn hole_stats(&self) -> (u64, u64) {
        let h = self.sketch.hole_stats();
        (h.batches, h.holes)
    }

    /// Element accounting; requires `close()` first.
    fn audit<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let a = self.sketch.audit().map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("stream_size", a.stream_size)?;
        d.set_item("unit_buffered", a.unit_buffered)?;
        d.set_item("local_buffered", a.local_buffered)?;
        d.set_item("updates", a.updates)?;
        d.set_item("conserved", a.is_conserved())?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let c = self.sketch.config();
        format!("Quancurrent(k={}, b={}, tritmap={})", c.k, c.b, self.sketch.tritmap())
    }
}

#[pyclass(frozen, module = "pyquancurrent")]
struct QueryHandle {
    ctx: Mutex<QueryContext<f64>>,
}

#[pymethods]
impl QueryHandle {
    fn query(&self, phi: f64) -> PyResult<f64> {
        self.ctx.lock().unwrap().query(phi).map_err(to_py)
    }

    /// `(queries, cache_hits, collects)` so far.
    fn stats(&self) -> (u64, u64, u64) {
        let s = self.ctx.lock().unwrap().stats();
        (s.queries, s.cache_hits, s.collects)
    }
}

/// The single-threaded reference sketch.
#[pyclass(frozen, module = "pyquancurrent")]
struct SequentialSketch {
    inner: Mutex<quancurrent::SequentialSketch<f64>>,
}

#[pymethods]
impl SequentialSketch {
    #[new]
    #[pyo3(signature = (k, seed = 1))]
    fn new(k: usize, seed: u64) -> PyResult<Self> {
        let s = quancurrent::SequentialSketch::new(k, CoinSource::seeded(seed)).map_err(to_py)?;
        Ok(Self { inner: Mutex::new(s) })
    }

    fn update(&self, x: f64) -> PyResult<()> {
        self.inner.lock().unwrap().update(x).map_err(to_py)
    }

    fn update_many(&self, xs: Vec<f64>) -> PyResult<()> {
        let mut s = self.inner.lock().unwrap();
        xs.into_iter().try_for_each(|x| s.update(x)).map_err(to_py)
    }

    fn query(&self, phi: f64) -> PyResult<f64> {
        self.inner.lock().unwrap().query(phi).map_err(to_py)
    }

    fn height(&self) -> usize {
        self.inner.lock().unwrap().height()
    }

    fn level(&self, i: usize) -> Vec<f64> {
        self.inner.lock().unwrap().level(i).to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.lock().unwrap().len() as usize
    }
}

/// Buffered updates a query may miss.
#[pyfunction]
fn relaxation(k: u64, numa_nodes: u64, update_threads: u64, b: u64) -> PyResult<u64> {
    analysis::relaxation(k, numa_nodes, update_threads, b).map_err(to_py)
}

/// Closed-form bound on expected holes in region `j`.
#[pyfunction]
fn eh_region_bound(j: u64, b: u64) -> PyResult<f64> {
    Ok(analysis::eh_region_bound(j, b).map_err(to_py)?.to_f64())
}

/// Bound on expected holes per batch.
#[pyfunction]
fn eh_total_bound(b: u64, k: u64) -> PyResult<f64> {
    Ok(analysis::eh_total_bound(b, k).map_err(to_py)?.to_f64())
}

/// Monte-Carlo holes per batch as `(mean, ci_low, ci_high)`.
#[pyfunction]
#[pyo3(signature = (b, regions, trials, seed = 1))]
fn simulate_holes(py: Python<'_>, b: u64, regions: u64, trials: u64, seed: u64) -> PyResult<(f64, f64, f64)> {
    let e = py
        .detach(|| analysis::simulate_holes(b, regions, trials, seed))
        .map_err(to_py)?;
    Ok((e.mean, e.ci_low, e.ci_high))
}

#[pymodule]
fn pyquancurrent(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Quancurrent>()?;
    m.add_class::<QueryHandle>()?;
    m.add_class::<SequentialSketch>()?;
    m.add_function(wrap_pyfunction!(relaxation, m)?)?;
    m.add_function(wrap_pyfunction!(eh_region_bound, m)?)?;
    m.add_function(wrap_pyfunction!(eh_total_bound, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_holes, m)?)?;
    Ok(())
}
