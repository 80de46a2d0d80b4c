//! Deterministic simulator for asynchronous multimaster replication.
//!
//! The crate models master sites that replicate row-level deferred
//! transactions, detect the four classic conflict kinds, and add new master
//! sites in one of three ways: online instantiation (copy while quiesced),
//! offline instantiation (export while quiesced, import after resume), and a
//! zero-downtime method that buffers client DML in per-site overlay tables
//! while replication is suspended.

pub mod engine;
pub mod instantiate;
pub mod minisql;
pub mod overlay;
pub mod relmodel;
pub mod report;
pub mod scenario;
pub mod simnet;
pub mod verify;

pub use engine::{ApplyOutcome, ConflictKind, DeferredOp, DeferredTxn, EngineError, ErrorEntry, ExecOutcome, Site, TxnId};
pub use minisql::{parse, render, Predicate, Projection, Statement};
pub use relmodel::{Column, ColumnType, MasterGroup, Row, RowVersion, SiteId, Table, TableSchema, Value};
pub use instantiate::{AdditionPlan, AdditionReport, Method};
pub use simnet::{check_convergence, Metrics, SimConfig, SimError, Simulation};
