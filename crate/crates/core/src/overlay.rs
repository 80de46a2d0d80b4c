//! Shadow ("overlay") tables and the session manager that lets clients keep
//! writing while a master group is quiesced for a site addition.
//!
//! While an overlay is active for a group, client DML never touches the base
//! tables: each statement is evaluated against the merged view (base rows
//! overlaid with the buffered records) and recorded as full after-images.
//! Selects read the merged view. Once replication is running again,
//! [`Site::finalize_overlay`] folds the records into one outcome per key and
//! replays them as ordinary replicated DML.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::engine::{EngineError, EngineResult, ExecOutcome, Site};
use crate::minisql::{Delete, Insert, Predicate, Select, Statement, Update};
use crate::relmodel::{RelError, RelResult, SelectResult, SiteId, Table, TableSchema, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpMarker {
    Insert,
    Update,
    Delete,
}

/// One buffered client mutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlayRecord {
    /// Arrival order within the overlay table.
    pub seq: u64,
    pub op_marker: OpMarker,
    pub pk: i64,
    /// Full row image for inserts and updates; `None` for deletes.
    pub after_values: Option<Vec<Value>>,
}

/// Net effect per key: `None` means deleted.
pub type Delta = BTreeMap<i64, Option<Vec<Value>>>;

/// Folds records in sequence order; the last record per key decides.
pub fn fold_records(records: &[OverlayRecord]) -> Delta {
    let mut delta = Delta::new();
    for r in records {
        match r.op_marker {
            OpMarker::Delete => delta.insert(r.pk, None),
            OpMarker::Insert | OpMarker::Update => delta.insert(r.pk, r.after_values.clone()),
        };
    }
    delta
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlayTable {
    schema: Arc<TableSchema>,
    records: Vec<OverlayRecord>,
    delta: Delta,
    next_seq: u64,
}

impl OverlayTable {
    fn new(schema: Arc<TableSchema>) -> Self {
        OverlayTable { schema, records: Vec::new(), delta: Delta::new(), next_seq: 1 }
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn records(&self) -> &[OverlayRecord] {
        &self.records
    }

    /// Cached fold of [`Self::records`].
    pub fn delta(&self) -> &Delta {
        &self.delta
    }

    fn append(&mut self, op_marker: OpMarker, pk: i64, after_values: Option<Vec<Value>>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.delta.insert(pk, after_values.clone());
        self.records.push(OverlayRecord { seq, op_marker, pk, after_values });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlaySet {
    pub site_id: SiteId,
    pub group_name: String,
    pub tables: BTreeMap<String, OverlayTable>,
    pub active: bool,
}

impl OverlaySet {
    pub fn table(&self, name: &str) -> Option<&OverlayTable> {
        self.tables.get(name)
    }

    pub fn record_count(&self) -> usize {
        self.tables.values().map(|t| t.records.len()).sum()
    }
}

/// Base rows seen through a delta.
#[derive(Debug, Clone, Copy)]
pub struct MergedView<'a> {
    base: &'a Table,
    delta: &'a Delta,
}

impl<'a> MergedView<'a> {
    pub fn new(base: &'a Table, delta: &'a Delta) -> Self {
        MergedView { base, delta }
    }

    pub fn get(&self, pk: i64) -> Option<&'a [Value]> {
        match self.delta.get(&pk) {
            Some(Some(vals)) => Some(vals.as_slice()),
            Some(None) => None,
            None => self.base.get(pk).map(|r| r.values.as_slice()),
        }
    }

    pub fn contains(&self, pk: i64) -> bool {
        self.get(pk).is_some()
    }

    /// Effective rows in ascending key order.
    pub fn rows(&self) -> Vec<(i64, &'a [Value])> {
        let mut out: BTreeMap<i64, &'a [Value]> = BTreeMap::new();
        for row in self.base.rows() {
            if !self.delta.contains_key(&row.pk) {
                out.insert(row.pk, &row.values);
            }
        }
        for (pk, vals) in self.delta {
            if let Some(v) = vals {
                out.insert(*pk, v);
            }
        }
        out.into_iter().collect()
    }

    pub fn select(&self, sel: &Select) -> RelResult<SelectResult> {
        let schema = self.base.schema();
        let cols = schema.bind_projection(&sel.projection)?;
        let pred = schema.bind_predicate(&sel.predicate)?;
        let rows = self.rows();
        Ok(SelectResult::project(schema, &cols, rows.iter().map(|(_, v)| *v).filter(|v| pred.matches(v))))
    }

    fn matching(&self, predicate: &Predicate) -> RelResult<Vec<(i64, &'a [Value])>> {
        let pred = self.base.schema().bind_predicate(predicate)?;
        Ok(match pred.pinned_pk() {
            Some(pk) => self.get(pk).filter(|v| pred.matches(v)).map(|v| (pk, v)).into_iter().collect(),
            None => self.rows().into_iter().filter(|(_, v)| pred.matches(v)).collect(),
        })
    }
}

/// Select over `base` as modified by `records`, folded in sequence order.
pub fn merged_select(base: &Table, records: &[OverlayRecord], sel: &Select) -> RelResult<SelectResult> {
    if sel.table != base.name() {
        return Err(RelError::SchemaMismatch { left: base.name().to_owned(), right: sel.table.clone() });
    }
    let delta = fold_records(records);
    MergedView::new(base, &delta).select(sel)
}

/// How buffered records are turned back into DML at finalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayStrategy {
    /// One statement per key carrying its net effect.
    #[default]
    Compressed,
    /// Every record re-issued in sequence order.
    PerRecord,
}

fn pk_predicate(schema: &TableSchema, pk: i64) -> Predicate {
    Predicate::eq(schema.pk_column(), Value::Int(pk))
}

fn full_insert(schema: &TableSchema, values: &[Value]) -> Statement {
    Statement::Insert(Insert {
        table: schema.table_name().to_owned(),
        columns: schema.column_names().map(str::to_owned).collect(),
        values: values.to_vec(),
    })
}

/// `None` when the table has no columns besides its key.
fn full_update(schema: &TableSchema, pk: i64, values: &[Value]) -> Option<Statement> {
    let assignments: Vec<(String, Value)> = schema
        .columns()
        .iter()
        .zip(values)
        .enumerate()
        .filter(|(i, _)| *i != schema.pk_index())
        .map(|(_, (c, v))| (c.name.clone(), v.clone()))
        .collect();
    (!assignments.is_empty()).then(|| {
        Statement::Update(Update { table: schema.table_name().to_owned(), assignments, predicate: pk_predicate(schema, pk) })
    })
}

fn pk_delete(schema: &TableSchema, pk: i64) -> Statement {
    Statement::Delete(Delete { table: schema.table_name().to_owned(), predicate: pk_predicate(schema, pk) })
}

impl Site {
    /// Creates one empty overlay table per group table and activates the
    /// session manager for the group.
    pub fn begin_overlay(&mut self, group: &str) -> EngineResult<&OverlaySet> {
        let g = self.group(group).ok_or_else(|| EngineError::UnknownGroup(group.to_owned()))?;
        if self.overlays.contains_key(group) {
            return Err(EngineError::OverlayAlreadyActive(group.to_owned()));
        }
        let tables = g
            .table_names
            .iter()
            .filter_map(|t| self.table(t))
            .map(|t| (t.name().to_owned(), OverlayTable::new(t.shared_schema())))
            .collect();
        let set = OverlaySet { site_id: self.id().clone(), group_name: group.to_owned(), tables, active: true };
        self.overlays.insert(group.to_owned(), set);
        Ok(&self.overlays[group])
    }

    pub fn overlay(&self, group: &str) -> Option<&OverlaySet> {
        self.overlays.get(group)
    }

    pub fn has_overlay(&self, group: &str) -> bool {
        self.overlays.get(group).is_some_and(|o| o.active)
    }

    /// Client entry point. Statements on a group with an active overlay go
    /// through [`Site::route_statement`]; everything else runs directly.
    pub fn execute(&mut self, stmt: &Statement, now: u64) -> EngineResult<ExecOutcome> {
        match self.group_of(stmt.table()).filter(|g| self.has_overlay(g)).map(str::to_owned) {
            Some(group) => self.route_statement(&group, stmt, now),
            None => self.execute_local(stmt, now),
        }
    }

    /// Rewrites a statement against the overlay: DML becomes record appends,
    /// selects read the merged view. Nothing is propagated.
    pub fn route_statement(&mut self, group: &str, stmt: &Statement, now: u64) -> EngineResult<ExecOutcome> {
        if !self.has_overlay(group) {
            return Err(EngineError::OverlayInactive(group.to_owned()));
        }
        if self.group_of(stmt.table()) != Some(group) {
            return self.execute_local(stmt, now);
        }
        let name = stmt.table().to_owned();
        let overlay = self.overlays.get(group).expect("active overlay");
        let base = self.table(&name).ok_or_else(|| EngineError::UnknownTable(name.clone()))?;
        let shadow = &overlay.tables[&name];
        let view = MergedView::new(base, &shadow.delta);
        let schema = base.schema();

        let appends: Vec<(OpMarker, i64, Option<Vec<Value>>)> = match stmt {
            Statement::Select(sel) => return Ok(ExecOutcome::Rows(view.select(sel)?)),
            Statement::Insert(ins) => {
                let values = Site::insert_values(schema, ins)?;
                let pk = values[schema.pk_index()].as_int().expect("checked key");
                if view.contains(pk) {
                    return Err(RelError::DuplicateKey { table: name, pk }.into());
                }
                vec![(OpMarker::Insert, pk, Some(values))]
            }
            Statement::Update(upd) => {
                let bound = schema.bind_assignments(&upd.assignments)?;
                view.matching(&upd.predicate)?
                    .into_iter()
                    .map(|(pk, vals)| {
                        let mut after = vals.to_vec();
                        for (idx, v) in &bound {
                            after[*idx] = v.clone();
                        }
                        (OpMarker::Update, pk, Some(after))
                    })
                    .collect()
            }
            Statement::Delete(del) => {
                view.matching(&del.predicate)?.into_iter().map(|(pk, _)| (OpMarker::Delete, pk, None)).collect()
            }
        };
        let rows_affected = appends.len();
        let shadow = self.overlays.get_mut(group).and_then(|o| o.tables.get_mut(&name)).expect("overlay table");
        for (marker, pk, after) in appends {
            shadow.append(marker, pk, after);
        }
        Ok(ExecOutcome::Dml { rows_affected, txn: None })
    }

    /// Replays buffered mutations as replicated DML, then drops the overlay.
    /// Returns the number of statements issued.
    pub fn finalize_overlay(&mut self, group: &str, now: u64) -> EngineResult<usize> {
        self.finalize_overlay_with(group, now, ReplayStrategy::Compressed)
    }

    pub fn finalize_overlay_with(&mut self, group: &str, now: u64, strategy: ReplayStrategy) -> EngineResult<usize> {
        if !self.has_overlay(group) {
            return Err(EngineError::OverlayInactive(group.to_owned()));
        }
        if self.group(group).is_some_and(|g| g.is_quiesced()) {
            return Err(EngineError::GroupQuiesced(group.to_owned()));
        }
        let overlay = self.overlays.remove(group).expect("active overlay");
        let mut replayed = 0;
        // BTreeMap iteration gives the fixed table-name order.
        for (name, shadow) in &overlay.tables {
            let schema = &shadow.schema;
            let mut stmts = Vec::new();
            match strategy {
                ReplayStrategy::Compressed => {
                    let base = self.table(name).ok_or_else(|| EngineError::UnknownTable(name.clone()))?;
                    for (pk, outcome) in &shadow.delta {
                        match (outcome, base.contains(*pk)) {
                            (None, true) => stmts.push(pk_delete(schema, *pk)),
                            (None, false) => {}
                            (Some(vals), true) => stmts.extend(full_update(schema, *pk, vals)),
                            (Some(vals), false) => stmts.push(full_insert(schema, vals)),
                        }
                    }
                }
                ReplayStrategy::PerRecord => {
                    for r in &shadow.records {
                        match (r.op_marker, &r.after_values) {
                            (OpMarker::Insert, Some(vals)) => stmts.push(full_insert(schema, vals)),
                            (OpMarker::Update, Some(vals)) => stmts.extend(full_update(schema, r.pk, vals)),
                            _ => stmts.push(pk_delete(schema, r.pk)),
                        }
                    }
                }
            }
            for stmt in &stmts {
                self.execute_local(stmt, now)?;
            }
            replayed += stmts.len();
        }
        Ok(replayed)
    }
}
