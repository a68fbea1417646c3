use crate::error::{Error, Result};

/// Parameters of the error model for a relaxed concurrent sketch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationModel {
    pub k: u64,
    /// Ingest units (memory nodes).
    pub numa_nodes: u64,
    /// Update threads.
    pub update_threads: u64,
    pub b: u64,
    /// Rank error of the underlying sequential sketch.
    pub epsilon_c: f64,
    /// Failure probability of the sequential guarantee; carried for reporting.
    pub delta_c: f64,
    /// Staleness fraction allowed by query caching.
    pub epsilon_prime: f64,
    /// Stream size.
    pub n: u64,
}

/// Buffered updates a query may miss: `4kS + (N - S)b`.
pub fn relaxation(k: u64, numa_nodes: u64, update_threads: u64, b: u64) -> Result<u64> {
    if numa_nodes == 0 || update_threads < numa_nodes {
        return Err(Error::Domain(format!(
            "need N >= S >= 1; got N={update_threads}, S={numa_nodes}"
        )));
    }
    Ok(4 * k * numa_nodes + (update_threads - numa_nodes) * b)
}

impl RelaxationModel {
    pub fn relaxation(&self) -> Result<u64> {
        relaxation(self.k, self.numa_nodes, self.update_threads, self.b)
    }

    /// Rank error including relaxation: `eps_c + (r/n)(1 - eps_c)`.
    pub fn epsilon_relaxed(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::Domain("stream size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon_c) {
            return Err(Error::Domain(format!("epsilon_c={} not in [0,1)", self.epsilon_c)));
        }
        let r = self.relaxation()? as f64;
        Ok(self.epsilon_c + r / self.n as f64 * (1.0 - self.epsilon_c))
    }
}

/// Total rank error: relaxed error plus the staleness fraction.
pub fn epsilon_total(model: &RelaxationModel) -> Result<f64> {
    if model.epsilon_prime.is_nan() || model.epsilon_prime < 0.0 {
        return Err(Error::Domain(format!("epsilon_prime={} < 0", model.epsilon_prime)));
    }
    Ok(model.epsilon_relaxed()? + model.epsilon_prime)
}
