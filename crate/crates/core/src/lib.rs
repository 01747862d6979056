//! Open transactional memory.
//!
//! Atomic transactions that are not isolated from each other: threads of
//! different transactions may share transactional variables, and touching a
//! variable claimed by another live transaction merges the two so that they
//! commit or abort together.
//!
//! - [`term`], [`combinators`]: the action language and its effect levels.
//! - [`syntax`]: the `.otm` surface syntax.
//! - [`machine`]: the reference small-step semantics, schedulers and explorer.
//! - [`runtime`]: a multi-threaded runtime with the same observable contract.
//! - [`history`]: history recording and opacity checking.
//! - [`scenarios`]: the scenario corpus.

pub mod combinators;
pub mod history;
pub mod machine;
pub mod runtime;
pub mod scenarios;
pub mod syntax;
pub mod term;
pub mod value;

pub use term::{level_check, Cont, EffectLevel, Expr, Frame, LevelError, Term};
pub use value::{HostFn, LocId, ThreadId, TxId, Value};
