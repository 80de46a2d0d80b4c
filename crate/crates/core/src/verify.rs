//! Randomized check of the overlay layer against direct application.
//!
//! For each seed a random schema, base data and statement stream are built.
//! The stream runs twice: once directly against plain tables (the oracle) and
//! once through an active overlay. After every statement the outcome and a
//! full read of the touched table must agree; after the stream, finalizing
//! the overlay must leave base tables equal to the oracle's.

use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::engine::{EngineError, ExecOutcome, Site};
use crate::minisql::{Delete, Predicate, Select, Statement, Update};
use crate::overlay::{merged_select, OverlayRecord, ReplayStrategy};
use crate::relmodel::{Column, ColumnType, MasterGroup, RelResult, Row, RowVersion, SelectResult, Table, TableSchema};
use crate::simnet::workload::{random_value, StatementGen};
use crate::simnet::OpMix;

/// Computes a merged read; swapped out in tests to inject faults.
pub type MergeFn = fn(&Table, &[OverlayRecord], &Select) -> RelResult<SelectResult>;

const GROUP: &str = "verify";
const PK_HI: i64 = 80;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    /// Index into the statement stream; equal to the stream length for
    /// failures found at finalization.
    pub index: usize,
    pub statement: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedResult {
    pub seed: u64,
    pub tables: usize,
    pub statements: usize,
    pub failure: Option<Counterexample>,
}

impl SeedResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

impl fmt::Display for SeedResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.failure {
            None => write!(f, "seed {}: pass ({} tables, {} statements)", self.seed, self.tables, self.statements),
            Some(c) => write!(f, "seed {}: FAIL at statement {} `{}`: {}", self.seed, c.index, c.statement, c.detail),
        }
    }
}

fn random_schema(rng: &mut impl Rng, idx: usize) -> TableSchema {
    let extra = rng.gen_range(0..=4);
    let mut cols = vec![Column::new("id", ColumnType::Integer)];
    for c in 0..extra {
        let ty = if rng.gen_bool(0.5) { ColumnType::Integer } else { ColumnType::Text };
        cols.push(Column::new(format!("c{c}"), ty));
    }
    TableSchema::new(format!("t{idx}"), cols, "id").expect("generated schema is valid")
}

fn random_table(rng: &mut impl Rng, schema: &TableSchema) -> Table {
    let mut t = Table::new(schema.clone());
    for _ in 0..rng.gen_range(0..40) {
        let pk = rng.gen_range(1..PK_HI);
        if t.contains(pk) {
            continue;
        }
        let values = schema
            .columns()
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { crate::relmodel::Value::Int(pk) } else { random_value(rng, c.ty, 6, 10) })
            .collect();
        t.put_row(Row::new(schema, values, RowVersion::initial()).expect("generated row")).expect("fresh key");
    }
    t
}

/// A generated statement, sometimes widened to a predicate on a non-key
/// column so it scans the whole merged view.
fn random_statement(rng: &mut impl Rng, gen: &StatementGen<'_>) -> Statement {
    let stmt = gen.statement(rng, &OpMix { insert: 3, update: 3, delete: 2, select: 2 });
    let non_pk = gen.non_pk();
    if non_pk.is_empty() || !rng.gen_bool(0.15) {
        return stmt;
    }
    let col = non_pk[rng.gen_range(0..non_pk.len())];
    let wide = Predicate { terms: vec![gen.column_term(rng, col)] };
    match stmt {
        Statement::Update(u) => Statement::Update(Update { predicate: wide, ..u }),
        Statement::Delete(d) => Statement::Delete(Delete { predicate: wide, ..d }),
        Statement::Select(s) => Statement::Select(Select { predicate: wide, ..s }),
        other => other,
    }
}

fn same_outcome(a: &ExecOutcome, b: &ExecOutcome) -> bool {
    a.rows_affected() == b.rows_affected() && a.rows() == b.rows()
}

/// Runs one seed with the given merge rule.
pub fn verify_seed(seed: u64, statements: usize, merge: MergeFn) -> SeedResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = rng.gen_range(1..=5);
    let schemas: Vec<TableSchema> = (0..tables).map(|i| random_schema(&mut rng, i)).collect();
    let mut oracle = Site::new("oracle");
    let mut site = Site::new("overlay");
    let originals: Vec<Table> = schemas.iter().map(|s| random_table(&mut rng, s)).collect();
    for t in &originals {
        oracle.create_table(t.clone()).expect("fresh site");
        site.create_table(t.clone()).expect("fresh site");
    }
    site.add_group(MasterGroup::new(GROUP, schemas.iter().map(|s| s.table_name().to_owned())))
        .expect("fresh group");
    site.begin_overlay(GROUP).expect("fresh overlay");

    let mut result = SeedResult { seed, tables, statements, failure: None };
    let fail = |index: usize, stmt: &dyn fmt::Display, detail: String| {
        Some(Counterexample { index, statement: stmt.to_string(), detail })
    };
    for index in 0..statements {
        let schema = &schemas[rng.gen_range(0..schemas.len())];
        let gen = StatementGen { schema, pk_lo: 1, pk_hi: PK_HI, max_text_len: 6, null_percent: 10 };
        let stmt = random_statement(&mut rng, &gen);
        let tick = index as u64 + 1;
        let expected = oracle.execute_local(&stmt, tick);
        let got = site.execute(&stmt, tick);
        let agree = match (&expected, &got) {
            (Ok(a), Ok(b)) => same_outcome(a, b),
            (Err(a), Err(b)) => a == b,
            _ => false,
        };
        if !agree {
            result.failure = fail(index, &stmt, format!("oracle returned {expected:?}, overlay returned {got:?}"));
            return result;
        }
        let reads = match &stmt {
            Statement::Select(sel) => vec![sel.clone(), Select::star(stmt.table())],
            _ => vec![Select::star(stmt.table())],
        };
        for sel in reads {
            let want = oracle.select_base(&sel);
            let base = site.table(&sel.table).expect("group table");
            let records = site.overlay(GROUP).and_then(|o| o.table(&sel.table)).map_or(&[][..], |t| t.records());
            let have = merge(base, records, &sel).map_err(EngineError::from);
            if want != have {
                let detail = format!("`{}` gave {have:?}, oracle {want:?}", Statement::Select(sel));
                result.failure = fail(index, &stmt, detail);
                return result;
            }
        }
    }
    for original in &originals {
        let base = site.table(original.name()).expect("group table");
        if !base.table_equal(original).unwrap_or(false) {
            let detail = format!("base table {} changed while the overlay was active", original.name());
            result.failure = fail(statements, &"finalize", detail);
            return result;
        }
    }

    let mut per_record = site.clone();
    if let Err(e) = site.finalize_overlay(GROUP, statements as u64 + 1) {
        result.failure = fail(statements, &"finalize", e.to_string());
        return result;
    }
    if let Err(e) = per_record.finalize_overlay_with(GROUP, statements as u64 + 1, ReplayStrategy::PerRecord) {
        result.failure = fail(statements, &"finalize (per record)", e.to_string());
        return result;
    }
    for s in &schemas {
        let name = s.table_name();
        let want = oracle.table(name).expect("oracle table");
        for (label, replayed) in [("compressed", &site), ("per-record", &per_record)] {
            let t = replayed.table(name).expect("replayed table");
            if !t.table_equal(want).unwrap_or(false) {
                let detail = format!("{label} replay of {name} has {} rows, oracle {}", t.len(), want.len());
                result.failure = fail(statements, &"finalize", detail);
                return result;
            }
        }
    }
    result
}

/// Seeds `0..seeds`, each with the standard merge rule.
pub fn verify(seeds: u64, statements: usize) -> Vec<SeedResult> {
    verify_with(seeds, statements, merged_select)
}

pub fn verify_with(seeds: u64, statements: usize, merge: MergeFn) -> Vec<SeedResult> {
    (0..seeds).map(|seed| verify_seed(seed, statements, merge)).collect()
}
