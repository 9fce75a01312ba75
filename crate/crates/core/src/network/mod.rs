//! Residual backbone with per-block adapters and task-specific heads.
//!
//! Four families of model come out of one [`NetworkSpec`] by choosing the
//! per-block [`Insertion`]:
//!
//! | insertion   | domain at forward | adapter parameters          |
//! |-------------|-------------------|-----------------------------|
//! | `None`      | not accepted      | none                        |
//! | `SingleSe`  | not accepted      | one SE adapter per block    |
//! | `SeBank`    | required          | `N` SE adapters per block   |
//! | `DaModule`  | not accepted      | `N` SE adapters + `N×C` attention; one SE adapter outside the placement |
//!
//! No normalisation layers are used; the stem and first stage can be
//! frozen through [`FreezeMask`].

mod model;
pub mod probe;
mod spec;

pub use model::{
    Bound, GridOutput, Group, HeadOutput, Network, Param, ParamId, ParamSummary, Partition, Trace,
};
pub use probe::{activation_stats, attention_assignments, total_variation, ProbeReport};
pub use spec::{
    AdapterPosition, BlockKind, ConvSpec, DaPlacement, FreezeMask, HeadKind, HeadSpec, Insertion,
    NetworkSpec, StageSpec,
};
