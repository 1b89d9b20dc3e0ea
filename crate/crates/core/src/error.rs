use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("undeclared entity `{0}`")]
    UndeclaredEntity(String),

    #[error("duplicate entity `{0}`")]
    DuplicateEntity(String),

    #[error("entity `{name}` has count {count}; counts must be at least 1")]
    InvalidCount { name: String, count: usize },

    #[error("relation `{0}` has no members")]
    EmptyRelation(String),

    #[error("relation index {0} out of range")]
    RelationIndex(usize),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("index {index} out of range for axis {axis} of size {size}")]
    IndexOutOfRange { axis: usize, index: usize, size: usize },

    #[error("duplicate index tuple {0:?}")]
    DuplicateTuple(alloc::vec::Vec<usize>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bell({0}) exceeds the supported range (n <= 20)")]
    BellOverflow(usize),

    #[error("partition size {0} outside the enumerable range 1..=12")]
    PartitionSize(usize),

    #[error("invalid restricted growth string {0:?}")]
    InvalidRgs(alloc::vec::Vec<u8>),

    #[error("relation `{0}` carries no one-to-many annotation")]
    NoAnnotation(String),

    #[error("relation `{0}` repeats an entity; the pooled layer only supports repeat-free relations")]
    RepeatedEntity(String),

    #[error("dense oracle limited to {limit} entries, schema has {size}")]
    SizeGuard { size: usize, limit: usize },

    #[error("invalid permutation: {0}")]
    Permutation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("infeasible observation constraint: {0}")]
    Infeasible(String),
}
