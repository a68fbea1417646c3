//! A concurrent quantiles sketch.
//!
//! Update threads buffer elements locally, gather them into node-local
//! shared buffers, and insert full buffers as batches into a hierarchy of
//! immutable sorted levels. A base-3 tritmap records the state of every
//! level, and each level transition updates one level cell and the tritmap
//! together with a double-compare-and-swap. Queries take a consistent
//! snapshot of the levels without locks and may reuse it while the stream
//! has grown by at most a configured fraction.
//!
//! ```
//! use quancurrent::{Quancurrent, SketchConfig};
//!
//! let sketch = Quancurrent::<f64>::new(SketchConfig::new(64, 8)).unwrap();
//! let mut updater = sketch.updater(0).unwrap();
//! for i in 0..10_000 {
//!     updater.update(i as f64).unwrap();
//! }
//! let median = sketch.query(0.5).unwrap();
//! assert!((median - 5000.0).abs() < 500.0);
//! ```

pub mod analysis;
pub mod atomics;
mod coins;
mod config;
mod element;
mod error;
mod gather;
mod levels;
mod query;
pub mod sequential;
mod sketch;
pub mod tritmap;

pub use coins::{CoinSource, InjectedCoins};
pub use config::{CoinMode, SketchConfig};
pub use element::Element;
pub use error::{Error, Result};
pub use gather::{GatherSortUnit, HoleStats, UpdaterContext};
pub use levels::{BatchOwner, LevelArray, LevelDump, LevelHierarchy, LevelStats, Step};
pub use query::{collect_snapshot, snapshot_estimate, Collected, QueryContext, QueryStats, Snapshot};
pub use sequential::{ExactOracle, SequentialSketch, WeightedSamples};
pub use sketch::{Audit, Quancurrent};
pub use tritmap::Tritmap;
