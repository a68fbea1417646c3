//! Synchronization substrate: sequentially consistent cells, fetch-and-add,
//! CAS, a software DCAS with a wait-free read, and epoch-based reclamation.

mod cell;
mod reclaim;

pub use cell::{cas, dcas, dcas_read, faa, AtomicCell, AtomicCounter, CellValue, DcasTarget};
pub use reclaim::{
    Guard, Participant, Reclaim, ReclaimStats, Reclaimer, DESCRIPTOR_GRACE, LEVEL_GRACE,
};
