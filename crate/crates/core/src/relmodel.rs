//! Relational core: typed values, schemas, versioned rows and tables, and the
//! master-group catalog entry. Everything here mutates directly; replication
//! lives one layer up in [`crate::engine`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::minisql::{CompareOp, Predicate, Projection};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelError {
    #[error("duplicate primary key {pk} in table {table}")]
    DuplicateKey { table: String, pk: i64 },
    #[error("row with primary key {pk} missing from table {table}")]
    RowMissing { table: String, pk: i64 },
    #[error("unknown column {column} in table {table}")]
    UnknownColumn { table: String, column: String },
    #[error("type mismatch on column {column}: expected {expected}")]
    TypeMismatch { column: String, expected: ColumnType },
    #[error("row for table {table} has {got} values, schema has {want} columns")]
    Arity { table: String, got: usize, want: usize },
    #[error("primary key column {column} may not be null")]
    NullPrimaryKey { column: String },
    #[error("primary key column {column} may not be assigned")]
    PrimaryKeyAssignment { column: String },
    #[error("duplicate column {column}")]
    DuplicateColumn { column: String },
    #[error("tables have different schemas ({left} vs {right})")]
    SchemaMismatch { left: String, right: String },
    #[error("invalid schema for {table}: {reason}")]
    InvalidSchema { table: String, reason: String },
}

pub type RelResult<T> = Result<T, RelError>;

/// Identifier of a master site, e.g. `dbx.rep`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteId(String);

impl SiteId {
    pub fn new(id: impl Into<String>) -> Self {
        SiteId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SiteId {
    fn from(s: &str) -> Self {
        SiteId(s.to_owned())
    }
}

/// A typed cell value.
///
/// The derived `Ord` is the internal total order (Null < Integer < Text) used
/// for table equality and canonical sorting. Predicate evaluation goes through
/// [`Value::compare`] instead, which refuses to compare across types and treats
/// any comparison involving `Null` as false.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Null,
    Int(i64),
    Text(String),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Predicate comparison. `Ok(None)` when either side is null.
    pub fn compare(&self, other: &Value) -> Result<Option<Ordering>, ValueTypeError> {
        match (self, other) {
            (Value::Null, _) | (_, Value::Null) => Ok(None),
            (Value::Int(a), Value::Int(b)) => Ok(Some(a.cmp(b))),
            (Value::Text(a), Value::Text(b)) => Ok(Some(a.cmp(b))),
            _ => Err(ValueTypeError),
        }
    }

    fn fits(&self, ty: ColumnType) -> bool {
        matches!(
            (self, ty),
            (Value::Null, _) | (Value::Int(_), ColumnType::Integer) | (Value::Text(_), ColumnType::Text)
        )
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("integer and text values are not comparable")]
pub struct ValueTypeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Integer,
    Text,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Integer => f.write_str("integer"),
            ColumnType::Text => f.write_str("text"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Column { name: name.into(), ty }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    table_name: String,
    columns: Vec<Column>,
    pk_index: usize,
}

impl TableSchema {
    pub fn new(table_name: impl Into<String>, columns: Vec<Column>, pk_column: &str) -> RelResult<Self> {
        let table_name = table_name.into();
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(RelError::InvalidSchema {
                    table: table_name,
                    reason: format!("column {} declared twice", c.name),
                });
            }
        }
        let pk_index = match columns.iter().position(|c| c.name == pk_column) {
            Some(i) => i,
            None => {
                return Err(RelError::InvalidSchema {
                    table: table_name,
                    reason: format!("primary key {pk_column} is not a column"),
                })
            }
        };
        if columns[pk_index].ty != ColumnType::Integer {
            return Err(RelError::InvalidSchema {
                table: table_name,
                reason: format!("primary key {pk_column} must be integer"),
            });
        }
        Ok(TableSchema { table_name, columns, pk_index })
    }

    pub fn table_name(&self) -> &str {
        &self.table_name
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn pk_column(&self) -> &str {
        &self.columns[self.pk_index].name
    }

    pub fn pk_index(&self) -> usize {
        self.pk_index
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn require_column(&self, name: &str) -> RelResult<usize> {
        self.column_index(name).ok_or_else(|| RelError::UnknownColumn {
            table: self.table_name.clone(),
            column: name.to_owned(),
        })
    }

    /// Checks a complete value vector and returns its primary key.
    pub fn check_values(&self, values: &[Value]) -> RelResult<i64> {
        if values.len() != self.columns.len() {
            return Err(RelError::Arity {
                table: self.table_name.clone(),
                got: values.len(),
                want: self.columns.len(),
            });
        }
        for (v, c) in values.iter().zip(&self.columns) {
            if !v.fits(c.ty) {
                return Err(RelError::TypeMismatch { column: c.name.clone(), expected: c.ty });
            }
        }
        values[self.pk_index].as_int().ok_or_else(|| RelError::NullPrimaryKey {
            column: self.pk_column().to_owned(),
        })
    }

    /// Resolves `(column, value)` assignments to column indices, rejecting the
    /// primary key, duplicates, unknown columns and ill-typed values.
    pub fn bind_assignments(&self, assignments: &[(String, Value)]) -> RelResult<Vec<(usize, Value)>> {
        let mut out = Vec::with_capacity(assignments.len());
        for (name, value) in assignments {
            let idx = self.require_column(name)?;
            if idx == self.pk_index {
                return Err(RelError::PrimaryKeyAssignment { column: name.clone() });
            }
            if out.iter().any(|(i, _)| *i == idx) {
                return Err(RelError::DuplicateColumn { column: name.clone() });
            }
            if !value.fits(self.columns[idx].ty) {
                return Err(RelError::TypeMismatch { column: name.clone(), expected: self.columns[idx].ty });
            }
            out.push((idx, value.clone()));
        }
        Ok(out)
    }

    pub fn bind_predicate(&self, predicate: &Predicate) -> RelResult<BoundPredicate> {
        let mut terms = Vec::with_capacity(predicate.terms.len());
        for term in &predicate.terms {
            let idx = self.require_column(&term.column)?;
            if !term.value.fits(self.columns[idx].ty) {
                return Err(RelError::TypeMismatch { column: term.column.clone(), expected: self.columns[idx].ty });
            }
            terms.push((idx, term.op, term.value.clone()));
        }
        Ok(BoundPredicate { terms, pk_index: self.pk_index })
    }

    pub fn bind_projection(&self, projection: &Projection) -> RelResult<Vec<usize>> {
        match projection {
            Projection::Star => Ok((0..self.columns.len()).collect()),
            Projection::Columns(cols) => cols.iter().map(|c| self.require_column(c)).collect(),
        }
    }
}

/// A predicate resolved against a schema. Evaluation cannot fail.
#[derive(Debug, Clone)]
pub struct BoundPredicate {
    terms: Vec<(usize, CompareOp, Value)>,
    pk_index: usize,
}

impl BoundPredicate {
    pub fn matches(&self, values: &[Value]) -> bool {
        self.terms.iter().all(|(idx, op, lit)| match values[*idx].compare(lit) {
            Ok(Some(ord)) => op.holds(ord),
            _ => false,
        })
    }

    /// The key this predicate pins, if it contains a `pk = k` term.
    pub fn pinned_pk(&self) -> Option<i64> {
        self.terms.iter().find_map(|(idx, op, lit)| match (idx == &self.pk_index, op, lit) {
            (true, CompareOp::Eq, Value::Int(k)) => Some(*k),
            _ => None,
        })
    }
}

/// Version stamp of the most recent write to a row.
///
/// Field order is the total order: `(stamp_tick, origin_site, counter)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowVersion {
    pub stamp_tick: u64,
    pub origin_site: SiteId,
    pub counter: u64,
}

impl RowVersion {
    pub fn new(stamp_tick: u64, origin_site: SiteId, counter: u64) -> Self {
        RowVersion { stamp_tick, origin_site, counter }
    }

    /// Version carried by rows present before any site wrote to them.
    pub fn initial() -> Self {
        RowVersion { stamp_tick: 0, origin_site: SiteId::new(""), counter: 0 }
    }
}

impl fmt::Display for RowVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}#{}", self.origin_site, self.stamp_tick, self.counter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub pk: i64,
    /// One value per schema column, in schema order.
    pub values: Vec<Value>,
    pub version: RowVersion,
}

impl Row {
    pub fn new(schema: &TableSchema, values: Vec<Value>, version: RowVersion) -> RelResult<Self> {
        let pk = schema.check_values(&values)?;
        Ok(Row { pk, values, version })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl SelectResult {
    pub fn project<'a>(
        schema: &TableSchema,
        projection: &[usize],
        rows: impl Iterator<Item = &'a [Value]>,
    ) -> SelectResult {
        SelectResult {
            columns: projection.iter().map(|&i| schema.columns()[i].name.clone()).collect(),
            rows: rows.map(|vals| projection.iter().map(|&i| vals[i].clone()).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    schema: Arc<TableSchema>,
    rows: BTreeMap<i64, Row>,
}

impl Table {
    pub fn new(schema: TableSchema) -> Self {
        Table { schema: Arc::new(schema), rows: BTreeMap::new() }
    }

    pub fn with_schema(schema: Arc<TableSchema>) -> Self {
        Table { schema, rows: BTreeMap::new() }
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn shared_schema(&self) -> Arc<TableSchema> {
        Arc::clone(&self.schema)
    }

    pub fn name(&self) -> &str {
        self.schema.table_name()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, pk: i64) -> Option<&Row> {
        self.rows.get(&pk)
    }

    pub fn contains(&self, pk: i64) -> bool {
        self.rows.contains_key(&pk)
    }

    /// Rows in ascending primary-key order.
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.rows.values()
    }

    pub fn pks(&self) -> impl Iterator<Item = i64> + '_ {
        self.rows.keys().copied()
    }

    pub fn raw_insert(&mut self, row: Row) -> RelResult<()> {
        let pk = self.schema.check_values(&row.values)?;
        debug_assert_eq!(pk, row.pk);
        if self.rows.contains_key(&pk) {
            return Err(RelError::DuplicateKey { table: self.name().to_owned(), pk });
        }
        self.rows.insert(pk, row);
        Ok(())
    }

    pub fn raw_update(&mut self, pk: i64, assignments: &[(String, Value)], new_version: RowVersion) -> RelResult<()> {
        let bound = self.schema.bind_assignments(assignments)?;
        let table = self.schema.table_name().to_owned();
        let row = self.rows.get_mut(&pk).ok_or(RelError::RowMissing { table, pk })?;
        for (idx, value) in bound {
            row.values[idx] = value;
        }
        row.version = new_version;
        Ok(())
    }

    pub fn raw_delete(&mut self, pk: i64) -> RelResult<Row> {
        self.rows
            .remove(&pk)
            .ok_or_else(|| RelError::RowMissing { table: self.name().to_owned(), pk })
    }

    /// Replaces (or creates) the row at `row.pk` without any checks beyond
    /// schema conformance. Used by replication apply paths.
    pub fn put_row(&mut self, row: Row) -> RelResult<Option<Row>> {
        self.schema.check_values(&row.values)?;
        Ok(self.rows.insert(row.pk, row))
    }

    pub fn take_row(&mut self, pk: i64) -> Option<Row> {
        self.rows.remove(&pk)
    }

    pub fn raw_select(&self, projection: &Projection, predicate: &Predicate) -> RelResult<SelectResult> {
        let cols = self.schema.bind_projection(projection)?;
        let pred = self.schema.bind_predicate(predicate)?;
        let matching = self.rows.values().map(|r| r.values.as_slice()).filter(|v| pred.matches(v));
        Ok(SelectResult::project(&self.schema, &cols, matching))
    }

    /// Value equality ignoring versions.
    pub fn table_equal(&self, other: &Table) -> RelResult<bool> {
        if self.schema != other.schema {
            return Err(RelError::SchemaMismatch {
                left: self.name().to_owned(),
                right: other.name().to_owned(),
            });
        }
        Ok(self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|((ka, a), (kb, b))| ka == kb && a.values == b.values))
    }

    /// Deep copy, versions included.
    pub fn snapshot(&self) -> Table {
        self.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupState {
    Normal,
    Quiesced,
}

/// A site's catalog entry for one master group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasterGroup {
    pub name: String,
    pub table_names: BTreeSet<String>,
    pub state: GroupState,
    /// Every registered master site, this one included.
    pub members: BTreeSet<SiteId>,
}

impl MasterGroup {
    pub fn new(name: impl Into<String>, table_names: impl IntoIterator<Item = String>) -> Self {
        MasterGroup {
            name: name.into(),
            table_names: table_names.into_iter().collect(),
            state: GroupState::Normal,
            members: BTreeSet::new(),
        }
    }

    pub fn is_quiesced(&self) -> bool {
        self.state == GroupState::Quiesced
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::minisql::{Comparison, Predicate};
    use proptest::prelude::*;

    fn v(site: &str, tick: u64, c: u64) -> RowVersion {
        RowVersion::new(tick, SiteId::from(site), c)
    }

    fn gt(col: &str, n: i64) -> Predicate {
        Predicate { terms: vec![Comparison { column: col.into(), op: CompareOp::Gt, value: Value::Int(n) }] }
    }

    #[test]
    fn insert_into_empty_table() {
        let mut t = Table::new(table1_schema());
        let r = Row::new(t.schema(), row(1, "Text1", 1234), RowVersion::initial()).unwrap();
        t.raw_insert(r).unwrap();
        assert_eq!(t.len(), 1);
        let all = t.raw_select(&Projection::Star, &Predicate::default()).unwrap();
        assert_eq!(all.rows, vec![row(1, "Text1", 1234)]);
    }

    #[test]
    fn duplicate_insert_rejected() {
        let mut t = table1();
        let r = Row::new(t.schema(), row(1, "again", 0), RowVersion::initial()).unwrap();
        assert_eq!(t.raw_insert(r), Err(RelError::DuplicateKey { table: "table1".into(), pk: 1 }));
    }

    #[test]
    fn insert_rejects_bad_rows() {
        let mut t = Table::new(table1_schema());
        let bad_type = Row { pk: 1, values: vec![Value::Int(1), Value::Int(2), Value::Int(3)], version: RowVersion::initial() };
        assert!(matches!(t.raw_insert(bad_type), Err(RelError::TypeMismatch { .. })));
        assert!(matches!(
            Row::new(t.schema(), vec![Value::Null, Value::Null, Value::Null], RowVersion::initial()),
            Err(RelError::NullPrimaryKey { .. })
        ));
        assert!(matches!(
            Row::new(t.schema(), vec![Value::Int(1)], RowVersion::initial()),
            Err(RelError::Arity { .. })
        ));
    }

    #[test]
    fn update_replaces_named_columns() {
        let mut t = table1();
        t.raw_update(2, &[("field_2".into(), Value::text("TextX"))], v("a", 5, 1)).unwrap();
        let r = t.get(2).unwrap();
        assert_eq!(r.values, row(2, "TextX", 4321));
        assert_eq!(r.version, v("a", 5, 1));
    }

    #[test]
    fn empty_update_changes_only_version() {
        let mut t = table1();
        let before = t.get(3).unwrap().values.clone();
        t.raw_update(3, &[], v("b", 9, 2)).unwrap();
        assert_eq!(t.get(3).unwrap().values, before);
        assert_eq!(t.get(3).unwrap().version, v("b", 9, 2));
    }

    #[test]
    fn update_absent_key_and_bad_columns() {
        let mut t = table1();
        // Linear scan of the fixture's keys confirms 99 is absent.
        assert!(!t.rows().any(|r| r.pk == 99));
        assert_eq!(
            t.raw_update(99, &[], v("a", 1, 1)),
            Err(RelError::RowMissing { table: "table1".into(), pk: 99 })
        );
        assert!(matches!(
            t.raw_update(1, &[("nope".into(), Value::Int(1))], v("a", 1, 1)),
            Err(RelError::UnknownColumn { .. })
        ));
        assert!(matches!(
            t.raw_update(1, &[("field_1".into(), Value::Int(7))], v("a", 1, 1)),
            Err(RelError::PrimaryKeyAssignment { .. })
        ));
    }

    #[test]
    fn delete_rows() {
        let mut t = table1();
        t.raw_delete(4).unwrap();
        assert_eq!(t.len(), 3);
        assert!(matches!(t.raw_delete(4), Err(RelError::RowMissing { pk: 4, .. })));
    }

    #[test]
    fn delete_all_orderings_empty_the_table() {
        fn perms(items: &[i64]) -> Vec<Vec<i64>> {
            if items.len() <= 1 {
                return vec![items.to_vec()];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.to_vec();
                let head = rest.remove(i);
                for mut p in perms(&rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let orders = perms(&[1, 2, 3, 4]);
        assert_eq!(orders.len(), 24);
        for order in orders {
            let mut t = table1();
            for pk in order {
                t.raw_delete(pk).unwrap();
            }
            assert!(t.is_empty());
        }
    }

    #[test]
    fn select_star_and_predicates() {
        let t = table1();
        assert_eq!(t.raw_select(&Projection::Star, &Predicate::default()).unwrap().rows.len(), 4);
        let max = t.pks().max().unwrap();
        assert!(t.raw_select(&Projection::Star, &gt("field_1", max)).unwrap().rows.is_empty());

        let got = t
            .raw_select(&Projection::Columns(vec!["field_3".into()]), &gt("field_3", 2000))
            .unwrap();
        // Oracle: scan the fixture rows by hand.
        let expected: Vec<Vec<Value>> = [1234i64, 4321, 2233, 4411]
            .into_iter()
            .filter(|n| *n > 2000)
            .map(|n| vec![Value::Int(n)])
            .collect();
        assert_eq!(got.rows, expected);
        assert_eq!(got.columns, vec!["field_3".to_string()]);
        assert!(matches!(
            t.raw_select(&Projection::Columns(vec!["zzz".into()]), &Predicate::default()),
            Err(RelError::UnknownColumn { .. })
        ));
    }

    #[test]
    fn null_never_matches_predicates() {
        let mut t = Table::new(table1_schema());
        t.raw_insert(Row::new(t.schema(), vec![Value::Int(1), Value::Null, Value::Null], RowVersion::initial()).unwrap())
            .unwrap();
        for op in [CompareOp::Eq, CompareOp::Ne, CompareOp::Lt, CompareOp::Ge] {
            let p = Predicate { terms: vec![Comparison { column: "field_3".into(), op, value: Value::Int(0) }] };
            assert!(t.raw_select(&Projection::Star, &p).unwrap().rows.is_empty());
            let p = Predicate { terms: vec![Comparison { column: "field_3".into(), op, value: Value::Null }] };
            assert!(t.raw_select(&Projection::Star, &p).unwrap().rows.is_empty());
        }
    }

    #[test]
    fn cross_type_comparison_is_an_error() {
        assert_eq!(Value::Int(1).compare(&Value::text("1")), Err(ValueTypeError));
        let t = table1();
        let p = Predicate { terms: vec![Comparison { column: "field_2".into(), op: CompareOp::Eq, value: Value::Int(1) }] };
        assert!(matches!(t.raw_select(&Projection::Star, &p), Err(RelError::TypeMismatch { .. })));
    }

    #[test]
    fn table_equality_ignores_versions() {
        let t = table1();
        assert!(t.table_equal(&t.snapshot()).unwrap());
        let mut other = t.snapshot();
        other.raw_update(1, &[], v("z", 100, 1)).unwrap();
        assert!(t.table_equal(&other).unwrap());
        other.raw_delete(3).unwrap();
        assert!(!t.table_equal(&other).unwrap());

        let other_schema = TableSchema::new("t2", vec![Column::new("id", ColumnType::Integer)], "id").unwrap();
        assert!(matches!(t.table_equal(&Table::new(other_schema)), Err(RelError::SchemaMismatch { .. })));
    }

    #[test]
    fn snapshot_is_isolated() {
        let t = table1();
        let mut copy = t.snapshot();
        assert_eq!(copy, t);
        copy.raw_delete(1).unwrap();
        assert_eq!(t.len(), 4);
        let mut t2 = t.snapshot();
        let snap = t2.snapshot();
        t2.raw_delete(2).unwrap();
        assert_eq!(snap.len(), 4);
        assert!(Table::new(table1_schema()).snapshot().is_empty());
    }

    #[test]
    fn schema_validation() {
        assert!(TableSchema::new("t", vec![Column::new("a", ColumnType::Text)], "a").is_err());
        assert!(TableSchema::new("t", vec![Column::new("a", ColumnType::Integer)], "b").is_err());
        assert!(TableSchema::new(
            "t",
            vec![Column::new("a", ColumnType::Integer), Column::new("a", ColumnType::Text)],
            "a"
        )
        .is_err());
    }

    #[test]
    fn version_total_order() {
        assert!(v("b", 1, 9) < v("a", 2, 0));
        assert!(v("a", 2, 0) < v("b", 2, 0));
        assert!(v("a", 2, 0) < v("a", 2, 1));
    }

    #[derive(Debug, Clone)]
    enum RawOp {
        Insert(i64),
        Update(i64),
        Delete(i64),
    }

    fn raw_op() -> impl Strategy<Value = RawOp> {
        prop_oneof![
            (0i64..20).prop_map(RawOp::Insert),
            (0i64..20).prop_map(RawOp::Update),
            (0i64..20).prop_map(RawOp::Delete),
        ]
    }

    proptest! {
        #[test]
        fn pk_uniqueness_survives_random_ops(ops in proptest::collection::vec(raw_op(), 0..80)) {
            let mut t = Table::new(table1_schema());
            let mut model = std::collections::BTreeSet::new();
            for (i, op) in ops.into_iter().enumerate() {
                match op {
                    RawOp::Insert(pk) => {
                        let r = Row::new(t.schema(), row(pk, "x", i as i64), RowVersion::initial()).unwrap();
                        prop_assert_eq!(t.raw_insert(r).is_ok(), model.insert(pk));
                    }
                    RawOp::Update(pk) => {
                        let res = t.raw_update(pk, &[("field_3".into(), Value::Int(i as i64))], v("s", i as u64, i as u64));
                        prop_assert_eq!(res.is_ok(), model.contains(&pk));
                    }
                    RawOp::Delete(pk) => {
                        prop_assert_eq!(t.raw_delete(pk).is_ok(), model.remove(&pk));
                    }
                }
                let pks: Vec<i64> = t.pks().collect();
                let mut dedup = pks.clone();
                dedup.dedup();
                prop_assert_eq!(&pks, &dedup);
                prop_assert!(t.rows().all(|r| r.values[0] == Value::Int(r.pk)));
            }
            let a = t.raw_select(&Projection::Star, &Predicate::default()).unwrap();
            let b = t.snapshot().raw_select(&Projection::Star, &Predicate::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
