//! Per-site replication engine.
//!
//! Local DML is applied immediately, stamped with fresh [`RowVersion`]s and
//! captured as a [`DeferredTxn`] for every other member of the table's master
//! group. Remote transactions are applied all-or-nothing: every row-level op
//! carries the version the row had at its origin, and any mismatch parks the
//! whole transaction in the site's error queue.
//!
//! Conflict classification at the destination:
//!
//! | op     | local row                         | result      |
//! |--------|-----------------------------------|-------------|
//! | insert | present                           | Uniqueness  |
//! | insert | absent, newer tombstone           | Delete      |
//! | update | present, version < old version    | Ordering    |
//! | update | present, version > old version    | Update      |
//! | update | absent, tombstone                 | Delete      |
//! | update | absent, never seen                | Ordering    |
//! | delete | present, version < old version    | Ordering    |
//! | delete | present, version > old version    | Delete      |
//! | delete | absent, tombstone                 | Delete      |
//! | delete | absent, never seen                | Ordering    |
//!
//! Ordering conflicts mean the site has not yet seen a write the transaction
//! depends on; they stay queued until that write arrives. Every other kind is
//! resolved by [`Site::reconcile`]: the write with the higher version wins.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::minisql::{Delete, Insert, Select, Statement, Update};
use crate::overlay::OverlaySet;
use crate::relmodel::{
    MasterGroup, RelError, Row, RowVersion, SelectResult, SiteId, Table, TableSchema, Value,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Rel(#[from] RelError),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown master group {0}")]
    UnknownGroup(String),
    #[error("master group {group} is quiesced; DML rejected")]
    DmlRejectedQuiesced { group: String },
    #[error("transaction {0} is not in the error queue")]
    UnknownTxn(TxnId),
    #[error("an overlay is already active for group {0}")]
    OverlayAlreadyActive(String),
    #[error("no overlay is active for group {0}")]
    OverlayInactive(String),
    #[error("master group {0} is quiesced")]
    GroupQuiesced(String),
    #[error("master group {0} is already quiesced")]
    AlreadyQuiesced(String),
    #[error("master group {0} is not quiesced")]
    NotQuiesced(String),
    #[error("table {table} already exists at site {site}")]
    TableExists { site: SiteId, table: String },
    #[error("table {table} already belongs to group {group}")]
    TableInGroup { table: String, group: String },
}

pub type EngineResult<T> = Result<T, EngineError>;

/// Transaction identifier: origin site plus that site's local sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId {
    pub origin: SiteId,
    pub seq: u64,
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.origin, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeferredOp {
    Insert {
        table: String,
        values: Vec<Value>,
        new_version: RowVersion,
    },
    Update {
        table: String,
        pk: i64,
        after_values: Vec<Value>,
        old_version: RowVersion,
        new_version: RowVersion,
    },
    Delete {
        table: String,
        pk: i64,
        old_version: RowVersion,
        /// Stamp of the delete itself, compared against competing writes.
        delete_version: RowVersion,
    },
}

impl DeferredOp {
    pub fn table(&self) -> &str {
        match self {
            DeferredOp::Insert { table, .. } | DeferredOp::Update { table, .. } | DeferredOp::Delete { table, .. } => table,
        }
    }

    pub fn pk(&self, schema: &TableSchema) -> i64 {
        match self {
            DeferredOp::Insert { values, .. } => values[schema.pk_index()].as_int().unwrap_or_default(),
            DeferredOp::Update { pk, .. } | DeferredOp::Delete { pk, .. } => *pk,
        }
    }

    /// The version this op would leave behind.
    pub fn write_version(&self) -> &RowVersion {
        match self {
            DeferredOp::Insert { new_version, .. } | DeferredOp::Update { new_version, .. } => new_version,
            DeferredOp::Delete { delete_version, .. } => delete_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeferredTxn {
    pub id: TxnId,
    pub group: String,
    pub origin_tick: u64,
    pub ops: Vec<DeferredOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConflictKind {
    Update,
    Uniqueness,
    Delete,
    Ordering,
}

impl ConflictKind {
    pub const ALL: [ConflictKind; 4] = [ConflictKind::Update, ConflictKind::Uniqueness, ConflictKind::Delete, ConflictKind::Ordering];

    pub fn name(self) -> &'static str {
        match self {
            ConflictKind::Update => "update",
            ConflictKind::Uniqueness => "uniqueness",
            ConflictKind::Delete => "delete",
            ConflictKind::Ordering => "ordering",
        }
    }
}

impl fmt::Display for ConflictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the site's error queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorEntry {
    pub txn: DeferredTxn,
    pub destination: SiteId,
    pub failed_op_index: usize,
    pub conflict: ConflictKind,
    pub enqueue_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied,
    Conflicted(ErrorEntry),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecOutcome {
    Rows(SelectResult),
    Dml { rows_affected: usize, txn: Option<TxnId> },
}

impl ExecOutcome {
    pub fn rows(&self) -> Option<&SelectResult> {
        match self {
            ExecOutcome::Rows(r) => Some(r),
            ExecOutcome::Dml { .. } => None,
        }
    }

    pub fn rows_affected(&self) -> usize {
        match self {
            ExecOutcome::Rows(r) => r.rows.len(),
            ExecOutcome::Dml { rows_affected, .. } => *rows_affected,
        }
    }
}

/// How an error-queue entry was settled by a retry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// Every op now matches; applied as an ordinary remote transaction.
    Applied,
    /// At least one op won a version comparison and overwrote local state.
    ForceApplied,
    /// Every conflicting op lost to a newer local write.
    Discarded,
    /// A prerequisite write is still missing; the entry stays queued.
    StillConflicted(ConflictKind),
}

impl Resolution {
    pub fn is_resolved(self) -> bool {
        !matches!(self, Resolution::StillConflicted(_))
    }
}

/// Result of handing a delivered transaction to a site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Receipt {
    Held,
    Applied,
    Conflicted(ConflictKind),
}

#[derive(Debug, Clone)]
struct Undo {
    table: String,
    pk: i64,
    row: Option<Row>,
    tombstone: Option<RowVersion>,
}

#[derive(Debug, Clone)]
pub struct Site {
    id: SiteId,
    tables: BTreeMap<String, Table>,
    groups: BTreeMap<String, MasterGroup>,
    outbound: BTreeMap<SiteId, VecDeque<DeferredTxn>>,
    error_queue: Vec<ErrorEntry>,
    tombstones: BTreeMap<String, BTreeMap<i64, RowVersion>>,
    local_txn_seq: u64,
    write_counter: u64,
    pub(crate) overlays: BTreeMap<String, OverlaySet>,
    held: Option<Vec<DeferredTxn>>,
}

impl Site {
    pub fn new(id: impl Into<SiteId>) -> Self {
        Site {
            id: id.into(),
            tables: BTreeMap::new(),
            groups: BTreeMap::new(),
            outbound: BTreeMap::new(),
            error_queue: Vec::new(),
            tombstones: BTreeMap::new(),
            local_txn_seq: 0,
            write_counter: 0,
            overlays: BTreeMap::new(),
            held: None,
        }
    }

    pub fn id(&self) -> &SiteId {
        &self.id
    }

    pub fn create_table(&mut self, table: Table) -> EngineResult<()> {
        let name = table.name().to_owned();
        if self.tables.contains_key(&name) {
            return Err(EngineError::TableExists { site: self.id.clone(), table: name });
        }
        self.tables.insert(name, table);
        Ok(())
    }

    /// Registers a group catalog entry. The site itself is always a member.
    pub fn add_group(&mut self, mut group: MasterGroup) -> EngineResult<()> {
        for t in &group.table_names {
            if !self.tables.contains_key(t) {
                return Err(EngineError::UnknownTable(t.clone()));
            }
            if let Some(other) = self.group_of(t) {
                return Err(EngineError::TableInGroup { table: t.clone(), group: other.to_owned() });
            }
        }
        group.members.insert(self.id.clone());
        self.groups.insert(group.name.clone(), group);
        Ok(())
    }

    pub fn register_member(&mut self, group: &str, member: SiteId) -> EngineResult<()> {
        self.group_mut(group)?.members.insert(member);
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.tables.values()
    }

    pub fn group(&self, name: &str) -> Option<&MasterGroup> {
        self.groups.get(name)
    }

    pub fn groups(&self) -> impl Iterator<Item = &MasterGroup> {
        self.groups.values()
    }

    pub(crate) fn group_mut(&mut self, name: &str) -> EngineResult<&mut MasterGroup> {
        self.groups.get_mut(name).ok_or_else(|| EngineError::UnknownGroup(name.to_owned()))
    }

    /// Name of the master group replicating `table`, if any.
    pub fn group_of(&self, table: &str) -> Option<&str> {
        self.groups.values().find(|g| g.table_names.contains(table)).map(|g| g.name.as_str())
    }

    pub fn group_tables(&self, group: &str) -> EngineResult<Vec<&Table>> {
        let g = self.groups.get(group).ok_or_else(|| EngineError::UnknownGroup(group.to_owned()))?;
        Ok(g.table_names.iter().filter_map(|t| self.tables.get(t)).collect())
    }

    pub fn tombstone(&self, table: &str, pk: i64) -> Option<&RowVersion> {
        self.tombstones.get(table).and_then(|m| m.get(&pk))
    }

    pub(crate) fn tombstones_for(&self, table: &str) -> BTreeMap<i64, RowVersion> {
        self.tombstones.get(table).cloned().unwrap_or_default()
    }

    /// Installs a copied table together with its delete history, replacing
    /// anything already present under that name.
    pub(crate) fn install_table(&mut self, table: Table, tombstones: BTreeMap<i64, RowVersion>) {
        let name = table.name().to_owned();
        self.tables.insert(name.clone(), table);
        self.tombstones.insert(name, tombstones);
    }

    pub(crate) fn install_group(&mut self, group: MasterGroup) {
        self.groups.insert(group.name.clone(), group);
    }

    /// Queued conflicts for transactions of `group`.
    pub(crate) fn group_error_entries(&self, group: &str) -> Vec<ErrorEntry> {
        self.error_queue.iter().filter(|e| e.txn.group == group).cloned().collect()
    }

    /// Adopts copied error entries as if they had failed here.
    pub(crate) fn install_error_entries(&mut self, entries: Vec<ErrorEntry>) {
        for mut e in entries {
            e.destination = self.id.clone();
            self.error_queue.push(e);
        }
    }

    fn next_version(&mut self, now: u64) -> RowVersion {
        self.write_counter += 1;
        RowVersion::new(now, self.id.clone(), self.write_counter)
    }

    fn table_mut(&mut self, name: &str) -> EngineResult<&mut Table> {
        self.tables.get_mut(name).ok_or_else(|| EngineError::UnknownTable(name.to_owned()))
    }

    fn require_table(&self, name: &str) -> EngineResult<&Table> {
        self.tables.get(name).ok_or_else(|| EngineError::UnknownTable(name.to_owned()))
    }

    /// Executes a client statement directly against the base tables.
    pub fn execute_local(&mut self, stmt: &Statement, now: u64) -> EngineResult<ExecOutcome> {
        let table = self.require_table(stmt.table())?;
        if let Statement::Select(sel) = stmt {
            return Ok(ExecOutcome::Rows(table.raw_select(&sel.projection, &sel.predicate)?));
        }
        let group = self.group_of(stmt.table()).map(str::to_owned);
        if let Some(g) = &group {
            if self.groups[g].is_quiesced() {
                return Err(EngineError::DmlRejectedQuiesced { group: g.clone() });
            }
        }
        let ops = match stmt {
            Statement::Insert(ins) => vec![self.local_insert(ins, now)?],
            Statement::Update(upd) => self.local_update(upd, now)?,
            Statement::Delete(del) => self.local_delete(del, now)?,
            Statement::Select(_) => unreachable!(),
        };
        let rows_affected = ops.len();
        let txn = match group {
            Some(g) if !ops.is_empty() => Some(self.capture(g, ops, now)),
            _ => None,
        };
        Ok(ExecOutcome::Dml { rows_affected, txn })
    }

    fn capture(&mut self, group: String, ops: Vec<DeferredOp>, now: u64) -> TxnId {
        self.local_txn_seq += 1;
        let txn = DeferredTxn {
            id: TxnId { origin: self.id.clone(), seq: self.local_txn_seq },
            group,
            origin_tick: now,
            ops,
        };
        let peers: Vec<SiteId> = self.groups[&txn.group].members.iter().filter(|m| **m != self.id).cloned().collect();
        for peer in peers {
            self.outbound.entry(peer).or_default().push_back(txn.clone());
        }
        txn.id
    }

    pub(crate) fn insert_values(schema: &TableSchema, ins: &Insert) -> EngineResult<Vec<Value>> {
        if ins.columns.len() != ins.values.len() {
            return Err(RelError::Arity { table: ins.table.clone(), got: ins.values.len(), want: ins.columns.len() }.into());
        }
        let mut values = vec![Value::Null; schema.columns().len()];
        for (col, v) in ins.columns.iter().zip(&ins.values) {
            values[schema.require_column(col)?] = v.clone();
        }
        schema.check_values(&values)?;
        Ok(values)
    }

    fn local_insert(&mut self, ins: &Insert, now: u64) -> EngineResult<DeferredOp> {
        let values = Self::insert_values(self.require_table(&ins.table)?.schema(), ins)?;
        let version = self.next_version(now);
        let table = self.table_mut(&ins.table)?;
        let row = Row::new(table.schema(), values.clone(), version.clone())?;
        let pk = row.pk;
        table.raw_insert(row)?;
        self.clear_tombstone(&ins.table, pk);
        Ok(DeferredOp::Insert { table: ins.table.clone(), values, new_version: version })
    }

    fn matching_pks(table: &Table, predicate: &crate::minisql::Predicate) -> EngineResult<Vec<i64>> {
        let bound = table.schema().bind_predicate(predicate)?;
        Ok(match bound.pinned_pk() {
            Some(pk) => table.get(pk).filter(|r| bound.matches(&r.values)).map(|r| r.pk).into_iter().collect(),
            None => table.rows().filter(|r| bound.matches(&r.values)).map(|r| r.pk).collect(),
        })
    }

    fn local_update(&mut self, upd: &Update, now: u64) -> EngineResult<Vec<DeferredOp>> {
        let table = self.require_table(&upd.table)?;
        table.schema().bind_assignments(&upd.assignments)?;
        let pks = Self::matching_pks(table, &upd.predicate)?;
        let mut ops = Vec::with_capacity(pks.len());
        for pk in pks {
            let new_version = self.next_version(now);
            let table = self.table_mut(&upd.table)?;
            let old_version = table.get(pk).map(|r| r.version.clone()).expect("matched row");
            table.raw_update(pk, &upd.assignments, new_version.clone())?;
            let after_values = table.get(pk).expect("updated row").values.clone();
            ops.push(DeferredOp::Update { table: upd.table.clone(), pk, after_values, old_version, new_version });
        }
        Ok(ops)
    }

    fn local_delete(&mut self, del: &Delete, now: u64) -> EngineResult<Vec<DeferredOp>> {
        let pks = Self::matching_pks(self.require_table(&del.table)?, &del.predicate)?;
        let mut ops = Vec::with_capacity(pks.len());
        for pk in pks {
            let delete_version = self.next_version(now);
            let old = self.table_mut(&del.table)?.raw_delete(pk)?;
            self.tombstones.entry(del.table.clone()).or_default().insert(pk, delete_version.clone());
            ops.push(DeferredOp::Delete { table: del.table.clone(), pk, old_version: old.version, delete_version });
        }
        Ok(ops)
    }

    /// Read-only select against the base tables; always allowed.
    pub fn select_base(&self, sel: &Select) -> EngineResult<SelectResult> {
        Ok(self.require_table(&sel.table)?.raw_select(&sel.projection, &sel.predicate)?)
    }

    fn check_op(&self, op: &DeferredOp) -> Result<(), ConflictKind> {
        let Some(table) = self.tables.get(op.table()) else {
            return Err(ConflictKind::Ordering);
        };
        let pk = op.pk(table.schema());
        let local = table.get(pk).map(|r| &r.version);
        let tomb = self.tombstone(op.table(), pk);
        match op {
            DeferredOp::Insert { new_version, .. } => match (local, tomb) {
                (Some(_), _) => Err(ConflictKind::Uniqueness),
                (None, Some(t)) if t > new_version => Err(ConflictKind::Delete),
                (None, _) => Ok(()),
            },
            DeferredOp::Update { old_version, .. } => match (local, tomb) {
                (Some(v), _) if v == old_version => Ok(()),
                (Some(v), _) if v < old_version => Err(ConflictKind::Ordering),
                (Some(_), _) => Err(ConflictKind::Update),
                (None, Some(_)) => Err(ConflictKind::Delete),
                (None, None) => Err(ConflictKind::Ordering),
            },
            DeferredOp::Delete { old_version, .. } => match (local, tomb) {
                (Some(v), _) if v == old_version => Ok(()),
                (Some(v), _) if v < old_version => Err(ConflictKind::Ordering),
                (Some(_), _) => Err(ConflictKind::Delete),
                (None, Some(_)) => Err(ConflictKind::Delete),
                (None, None) => Err(ConflictKind::Ordering),
            },
        }
    }

    fn save_undo(&self, op: &DeferredOp, undo: &mut Vec<Undo>) {
        let table = &self.tables[op.table()];
        let pk = op.pk(table.schema());
        undo.push(Undo {
            table: op.table().to_owned(),
            pk,
            row: table.get(pk).cloned(),
            tombstone: self.tombstone(op.table(), pk).cloned(),
        });
    }

    fn rollback(&mut self, undo: Vec<Undo>) {
        for u in undo.into_iter().rev() {
            let table = self.tables.get_mut(&u.table).expect("undo table");
            match u.row {
                Some(row) => {
                    table.put_row(row).expect("restoring a previously valid row");
                }
                None => {
                    table.take_row(u.pk);
                }
            }
            match u.tombstone {
                Some(t) => {
                    self.tombstones.entry(u.table).or_default().insert(u.pk, t);
                }
                None => self.clear_tombstone(&u.table, u.pk),
            }
        }
    }

    /// Installs the effect of `op` unconditionally.
    fn install_op(&mut self, op: &DeferredOp) {
        let table = self.tables.get_mut(op.table()).expect("op table");
        let schema = table.shared_schema();
        match op {
            DeferredOp::Insert { values, new_version, .. } | DeferredOp::Update { after_values: values, new_version, .. } => {
                let row = Row::new(&schema, values.clone(), new_version.clone()).expect("replicated row conforms");
                let pk = row.pk;
                table.put_row(row).expect("replicated row conforms");
                self.clear_tombstone(op.table(), pk);
            }
            DeferredOp::Delete { pk, delete_version, .. } => {
                table.take_row(*pk);
                self.raise_tombstone(op.table(), *pk, delete_version);
            }
        }
    }

    fn clear_tombstone(&mut self, table: &str, pk: i64) {
        if let Some(ts) = self.tombstones.get_mut(table) {
            ts.remove(&pk);
            if ts.is_empty() {
                self.tombstones.remove(table);
            }
        }
    }

    fn raise_tombstone(&mut self, table: &str, pk: i64, version: &RowVersion) {
        let ts = self.tombstones.entry(table.to_owned()).or_default();
        match ts.get(&pk) {
            Some(t) if t >= version => {}
            _ => {
                ts.insert(pk, version.clone());
            }
        }
    }

    /// Applies every op or none; on failure returns the failing index and kind.
    fn try_apply(&mut self, txn: &DeferredTxn) -> Result<(), (usize, ConflictKind)> {
        let mut undo = Vec::new();
        for (i, op) in txn.ops.iter().enumerate() {
            if let Err(kind) = self.check_op(op) {
                self.rollback(undo);
                return Err((i, kind));
            }
            self.save_undo(op, &mut undo);
            self.install_op(op);
        }
        Ok(())
    }

    /// Applies a transaction delivered from a peer.
    pub fn apply_remote(&mut self, txn: DeferredTxn, now: u64) -> ApplyOutcome {
        match self.try_apply(&txn) {
            Ok(()) => ApplyOutcome::Applied,
            Err((failed_op_index, conflict)) => {
                let entry = ErrorEntry { txn, destination: self.id.clone(), failed_op_index, conflict, enqueue_tick: now };
                self.error_queue.push(entry.clone());
                ApplyOutcome::Conflicted(entry)
            }
        }
    }

    /// Version a conflicting op competes against: the local row's, or the
    /// tombstone's when the row is gone.
    fn local_version(&self, op: &DeferredOp) -> Option<RowVersion> {
        let table = self.tables.get(op.table())?;
        let pk = op.pk(table.schema());
        table.get(pk).map(|r| r.version.clone()).or_else(|| self.tombstone(op.table(), pk).cloned())
    }

    fn retry(&mut self, txn: &DeferredTxn) -> Resolution {
        if self.try_apply(txn).is_ok() {
            return Resolution::Applied;
        }
        let mut undo = Vec::new();
        let mut forced = false;
        let mut skipped = false;
        for op in &txn.ops {
            match self.check_op(op) {
                Ok(()) => {
                    self.save_undo(op, &mut undo);
                    self.install_op(op);
                }
                Err(ConflictKind::Ordering) => {
                    self.rollback(undo);
                    return Resolution::StillConflicted(ConflictKind::Ordering);
                }
                Err(_) => {
                    let local = self.local_version(op);
                    if local.as_ref().is_some_and(|v| op.write_version() > v) {
                        self.save_undo(op, &mut undo);
                        self.install_op(op);
                        forced = true;
                    } else {
                        if let DeferredOp::Delete { pk, delete_version, table, .. } = op {
                            if self.tables.get(table).is_some_and(|t| !t.contains(*pk)) {
                                self.raise_tombstone(table, *pk, delete_version);
                            }
                        }
                        skipped = true;
                    }
                }
            }
        }
        match (forced, skipped) {
            (true, _) => Resolution::ForceApplied,
            (false, true) => Resolution::Discarded,
            (false, false) => Resolution::Applied,
        }
    }

    /// One pass over the error queue in enqueue order. Returns the number of
    /// entries resolved (applied, force-applied or discarded).
    pub fn reconcile(&mut self, _now: u64) -> usize {
        let entries = std::mem::take(&mut self.error_queue);
        let mut resolved = 0;
        for mut entry in entries {
            match self.retry(&entry.txn) {
                Resolution::StillConflicted(kind) => {
                    entry.conflict = kind;
                    self.error_queue.push(entry);
                }
                _ => resolved += 1,
            }
        }
        resolved
    }

    /// Re-executes a single queued transaction by id.
    pub fn execute_error(&mut self, txn_id: &TxnId, _now: u64) -> EngineResult<Resolution> {
        let idx = self
            .error_queue
            .iter()
            .position(|e| &e.txn.id == txn_id)
            .ok_or_else(|| EngineError::UnknownTxn(txn_id.clone()))?;
        let txn = self.error_queue[idx].txn.clone();
        let res = self.retry(&txn);
        match res {
            Resolution::StillConflicted(kind) => self.error_queue[idx].conflict = kind,
            _ => {
                self.error_queue.remove(idx);
            }
        }
        Ok(res)
    }

    pub fn select_error_queue(&self) -> &[ErrorEntry] {
        &self.error_queue
    }

    /// Removes and returns all queued outbound transactions, per destination
    /// in origin order.
    pub fn drain_outbound(&mut self) -> Vec<(SiteId, Vec<DeferredTxn>)> {
        let mut out = Vec::new();
        for (dest, queue) in self.outbound.iter_mut() {
            if !queue.is_empty() {
                out.push((dest.clone(), queue.drain(..).collect()));
            }
        }
        out
    }

    pub fn outbound_is_empty(&self) -> bool {
        self.outbound.values().all(VecDeque::is_empty)
    }

    pub fn outbound_len(&self) -> usize {
        self.outbound.values().map(VecDeque::len).sum()
    }

    /// Starts buffering delivered transactions instead of applying them.
    pub fn begin_hold(&mut self) {
        if self.held.is_none() {
            self.held = Some(Vec::new());
        }
    }

    pub fn is_holding(&self) -> bool {
        self.held.is_some()
    }

    pub fn held_len(&self) -> usize {
        self.held.as_ref().map_or(0, Vec::len)
    }

    /// Stops holding and applies the buffered transactions interleaved by
    /// origin tick (per-origin order is preserved).
    pub fn release_held(&mut self, now: u64) -> Vec<ApplyOutcome> {
        let mut held = self.held.take().unwrap_or_default();
        held.sort_by(|a, b| (a.origin_tick, &a.id.origin, a.id.seq).cmp(&(b.origin_tick, &b.id.origin, b.id.seq)));
        held.into_iter().map(|txn| self.apply_remote(txn, now)).collect()
    }

    /// Entry point for a delivered transaction.
    pub fn receive(&mut self, txn: DeferredTxn, now: u64) -> Receipt {
        if let Some(held) = self.held.as_mut() {
            held.push(txn);
            return Receipt::Held;
        }
        match self.apply_remote(txn, now) {
            ApplyOutcome::Applied => Receipt::Applied,
            ApplyOutcome::Conflicted(e) => Receipt::Conflicted(e.conflict),
        }
    }
}
