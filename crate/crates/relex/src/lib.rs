//! Document-level relation extraction with first- and second-order scoring.
//!
//! The model scores a relation between two entities in a document two ways:
//!
//! * **first order**: a bi-affine form over the head/tail projections of the
//!   entity mentions themselves, pooled over mention pairs with LogSumExp
//!   ([`first_order`]);
//! * **second order**: the two entities are bridged through a single context
//!   token `k`, scoring `B[i,k] + B[k,j]` for every mention pair `(i, j)` and
//!   context token `k`, again pooled with LogSumExp ([`second_order`]).
//!
//! The second-order pooling is computed by a kernel that never materializes
//! the `N³` tensor of context-conditioned scores; it builds two masked `N×N`
//! factors and contracts them with one batched matrix multiply, keeping
//! auxiliary memory at `O(batch·R·N²)`. A deliberately naive oracle that does
//! materialize all `N³` scores lives alongside it for verification and for
//! the memory-scaling benchmark ([`bench`]).
//!
//! The crate also ships a transformer-style [`encoder`], a token-level
//! [`ner`] head trained jointly with relation extraction, a hand-derived
//! backward pass for every parameter ([`training`]), a synthetic
//! "bridge-token" corpus generator ([`synth`]), and evaluation utilities
//! ([`eval`]).
//!
//! Every major capability has a runnable demo under `examples/`; the `relex`
//! binary exposes the same functionality as subcommands (see [`cli`]).

pub mod alloc_track;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod first_order;
pub mod model;
pub mod ner;
pub mod second_order;
pub mod synth;
pub mod training;
pub mod util;

pub use error::{Error, Result};
