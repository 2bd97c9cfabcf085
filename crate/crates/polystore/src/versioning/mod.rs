//! Versioning primitives: vector clocks, sibling resolution, a bounded
//! multi-version chain with stale-write detection, and a single-counter
//! optimistic lock.

mod clock;
mod mvcc;

pub use clock::{vc_compare, vc_increment, vc_merge, Causality, ClockParseError, VectorClock};
pub use mvcc::{
    mvcc_put, optimistic_put, resolve_siblings, OptimisticLock, VersionChain, VersionedValue,
    DEFAULT_RETENTION_LIMIT,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VersionError {
    #[error("no versions to resolve")]
    EmptyInput,
    #[error("stale write: expected version {expected}, current is {current}")]
    StaleWrite { expected: String, current: String },
}
