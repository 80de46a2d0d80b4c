//! Seeded client workload generation.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::minisql::{CompareOp, Comparison, Delete, Insert, Predicate, Projection, Select, Statement, Update};
use crate::relmodel::{ColumnType, SiteId, TableSchema, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpMix {
    pub insert: u32,
    pub update: u32,
    pub delete: u32,
    pub select: u32,
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix { insert: 3, update: 3, delete: 1, select: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub seed: u64,
    /// Statements per 100 ticks, per site.
    pub rate: u32,
    /// Empty means every table with equal weight.
    pub table_weights: Vec<(String, u32)>,
    pub op_mix: OpMix,
    /// Keys are drawn from `pk_lo..pk_hi`.
    pub pk_lo: i64,
    pub pk_hi: i64,
    /// Give each site its own slice of the key range.
    pub disjoint: bool,
    pub start: u64,
    pub stop: u64,
    /// Half-open windows during which no statements are issued.
    pub pauses: Vec<(u64, u64)>,
    /// Longest generated text value.
    pub max_text_len: usize,
    /// Percentage of generated non-key values that are NULL.
    pub null_percent: u32,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            seed: 0,
            rate: 0,
            table_weights: Vec::new(),
            op_mix: OpMix::default(),
            pk_lo: 1,
            pk_hi: 1000,
            disjoint: false,
            start: 0,
            stop: 0,
            pauses: Vec::new(),
            max_text_len: 8,
            null_percent: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientStatement {
    pub tick: u64,
    pub site: SiteId,
    pub stmt: Statement,
}

const TEXT_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz ABC'_0123456789";

pub(crate) fn random_value(rng: &mut impl Rng, ty: ColumnType, max_text_len: usize, null_percent: u32) -> Value {
    if rng.gen_range(0..100) < null_percent {
        return Value::Null;
    }
    match ty {
        ColumnType::Integer => Value::Int(rng.gen_range(-1000..10_000)),
        ColumnType::Text => {
            let len = rng.gen_range(0..=max_text_len);
            Value::Text((0..len).map(|_| TEXT_ALPHABET[rng.gen_range(0..TEXT_ALPHABET.len())] as char).collect())
        }
    }
}

/// Generates statements for one table within a key range. Shared with the
/// overlay verifier.
pub(crate) struct StatementGen<'a> {
    pub schema: &'a TableSchema,
    pub pk_lo: i64,
    pub pk_hi: i64,
    pub max_text_len: usize,
    pub null_percent: u32,
}

impl StatementGen<'_> {
    pub(crate) fn non_pk(&self) -> Vec<usize> {
        (0..self.schema.columns().len()).filter(|i| *i != self.schema.pk_index()).collect()
    }

    fn value(&self, rng: &mut impl Rng, idx: usize) -> Value {
        random_value(rng, self.schema.columns()[idx].ty, self.max_text_len, self.null_percent)
    }

    fn key(&self, rng: &mut impl Rng) -> i64 {
        rng.gen_range(self.pk_lo..self.pk_hi)
    }

    /// Key-bounded predicate: always pins the statement inside the range.
    fn key_predicate(&self, rng: &mut impl Rng) -> Predicate {
        let pk = self.schema.pk_column().to_owned();
        let k = self.key(rng);
        let mut terms = if rng.gen_bool(0.7) {
            vec![Comparison { column: pk, op: CompareOp::Eq, value: Value::Int(k) }]
        } else {
            let hi = (k + rng.gen_range(0..8)).min(self.pk_hi - 1);
            vec![
                Comparison { column: pk.clone(), op: CompareOp::Ge, value: Value::Int(k) },
                Comparison { column: pk, op: CompareOp::Le, value: Value::Int(hi) },
            ]
        };
        let non_pk = self.non_pk();
        if !non_pk.is_empty() && rng.gen_bool(0.2) {
            let col = non_pk[rng.gen_range(0..non_pk.len())];
            terms.push(self.column_term(rng, col));
        }
        Predicate { terms }
    }

    pub(crate) fn column_term(&self, rng: &mut impl Rng, idx: usize) -> Comparison {
        let op = CompareOp::ALL[rng.gen_range(0..CompareOp::ALL.len())];
        let value = match self.value(rng, idx) {
            Value::Null => random_value(rng, self.schema.columns()[idx].ty, self.max_text_len, 0),
            v => v,
        };
        Comparison { column: self.schema.columns()[idx].name.clone(), op, value }
    }

    pub fn insert(&self, rng: &mut impl Rng) -> Statement {
        let k = self.key(rng);
        let mut columns = Vec::new();
        let mut values = Vec::new();
        for (i, c) in self.schema.columns().iter().enumerate() {
            if i == self.schema.pk_index() {
                columns.push(c.name.clone());
                values.push(Value::Int(k));
            } else if rng.gen_bool(0.9) {
                columns.push(c.name.clone());
                values.push(self.value(rng, i));
            }
        }
        Statement::Insert(Insert { table: self.schema.table_name().to_owned(), columns, values })
    }

    pub fn update(&self, rng: &mut impl Rng) -> Option<Statement> {
        let mut non_pk = self.non_pk();
        if non_pk.is_empty() {
            return None;
        }
        non_pk.shuffle(rng);
        let n = rng.gen_range(1..=non_pk.len().min(2));
        let assignments = non_pk[..n]
            .iter()
            .map(|&i| (self.schema.columns()[i].name.clone(), self.value(rng, i)))
            .collect();
        Some(Statement::Update(Update {
            table: self.schema.table_name().to_owned(),
            assignments,
            predicate: self.key_predicate(rng),
        }))
    }

    pub fn delete(&self, rng: &mut impl Rng) -> Statement {
        Statement::Delete(Delete { table: self.schema.table_name().to_owned(), predicate: self.key_predicate(rng) })
    }

    pub fn select(&self, rng: &mut impl Rng) -> Statement {
        let projection = if rng.gen_bool(0.6) {
            Projection::Star
        } else {
            let mut cols: Vec<String> = self.schema.column_names().map(str::to_owned).collect();
            cols.shuffle(rng);
            cols.truncate(rng.gen_range(1..=cols.len()));
            Projection::Columns(cols)
        };
        let predicate = match rng.gen_range(0..3) {
            0 => Predicate::default(),
            1 => self.key_predicate(rng),
            _ => {
                let idx = rng.gen_range(0..self.schema.columns().len());
                Predicate { terms: vec![self.column_term(rng, idx)] }
            }
        };
        Statement::Select(Select { table: self.schema.table_name().to_owned(), projection, predicate })
    }

    pub fn statement(&self, rng: &mut impl Rng, mix: &OpMix) -> Statement {
        let weights = [mix.insert, mix.update, mix.delete, mix.select];
        let pick = WeightedIndex::new(weights).map(|w| w.sample(rng)).unwrap_or(3);
        match pick {
            0 => self.insert(rng),
            1 => self.update(rng).unwrap_or_else(|| self.select(rng)),
            2 => self.delete(rng),
            _ => self.select(rng),
        }
    }
}

/// Generates every client statement for `sites`, ordered by tick then site.
///
/// Each site issues `rate` statements per 100-tick window at uniformly chosen
/// ticks. Statements falling in a pause are skipped after being drawn, so the
/// stream outside pauses does not depend on the pauses.
pub fn generate_workload(spec: &WorkloadSpec, sites: &[SiteId], schemas: &[TableSchema]) -> Vec<ClientStatement> {
    let mut out = Vec::new();
    if spec.rate == 0 || sites.is_empty() || schemas.is_empty() || spec.stop <= spec.start || spec.pk_hi <= spec.pk_lo {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tables: Vec<(&TableSchema, u32)> = if spec.table_weights.is_empty() {
        schemas.iter().map(|s| (s, 1)).collect()
    } else {
        spec.table_weights
            .iter()
            .filter_map(|(name, w)| schemas.iter().find(|s| s.table_name() == name).map(|s| (s, *w)))
            .collect()
    };
    let Ok(table_pick) = WeightedIndex::new(tables.iter().map(|(_, w)| *w)) else {
        return out;
    };
    let span = spec.pk_hi - spec.pk_lo;
    let slice = (span / sites.len() as i64).max(1);
    for window in spec.start / 100..spec.stop.div_ceil(100) {
        for (i, site) in sites.iter().enumerate() {
            let (lo, hi) = if spec.disjoint {
                let lo = spec.pk_lo + slice * i as i64;
                (lo, if i + 1 == sites.len() { spec.pk_hi } else { lo + slice })
            } else {
                (spec.pk_lo, spec.pk_hi)
            };
            for _ in 0..spec.rate {
                let tick = window * 100 + rng.gen_range(0..100);
                let schema = tables[table_pick.sample(&mut rng)].0;
                let gen = StatementGen { schema, pk_lo: lo, pk_hi: hi.max(lo + 1), max_text_len: spec.max_text_len, null_percent: spec.null_percent };
                let stmt = gen.statement(&mut rng, &spec.op_mix);
                let paused = spec.pauses.iter().any(|(a, b)| *a <= tick && tick < *b);
                if tick >= spec.start && tick < spec.stop && !paused {
                    out.push(ClientStatement { tick, site: site.clone(), stmt });
                }
            }
        }
    }
    out.sort_by_key(|c| c.tick);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minisql::{parse, render};
    use crate::relmodel::fixtures::table1_schema;

    fn spec(seed: u64, rate: u32) -> WorkloadSpec {
        WorkloadSpec { seed, rate, stop: 2000, ..WorkloadSpec::default() }
    }

    fn sites() -> Vec<SiteId> {
        vec!["a".into(), "b".into(), "c".into()]
    }

    #[test]
    fn same_seed_same_stream() {
        let a = generate_workload(&spec(7, 20), &sites(), &[table1_schema()]);
        let b = generate_workload(&spec(7, 20), &sites(), &[table1_schema()]);
        assert_eq!(a, b);
        assert!(!a.is_empty());
        let c = generate_workload(&spec(8, 20), &sites(), &[table1_schema()]);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_rate_is_empty() {
        assert!(generate_workload(&spec(1, 0), &sites(), &[table1_schema()]).is_empty());
    }

    #[test]
    fn ten_thousand_statements_parse() {
        let mut s = spec(3, 50);
        s.stop = 7000;
        let stream = generate_workload(&s, &sites(), &[table1_schema()]);
        assert!(stream.len() >= 10_000, "{}", stream.len());
        for c in &stream {
            assert_eq!(parse(&render(&c.stmt)).unwrap(), c.stmt);
        }
    }

    #[test]
    fn pauses_only_remove_statements() {
        let full = generate_workload(&spec(5, 10), &sites(), &[table1_schema()]);
        let mut paused = spec(5, 10);
        paused.pauses = vec![(500, 900)];
        let got = generate_workload(&paused, &sites(), &[table1_schema()]);
        let expected: Vec<_> = full.into_iter().filter(|c| !(500..900).contains(&c.tick)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn disjoint_ranges_stay_in_their_slice() {
        let mut s = spec(9, 30);
        s.disjoint = true;
        s.pk_lo = 0;
        s.pk_hi = 300;
        for c in generate_workload(&s, &sites(), &[table1_schema()]) {
            let i = sites().iter().position(|x| *x == c.site).unwrap() as i64;
            let (lo, hi) = (i * 100, i * 100 + 100);
            let keys: Vec<i64> = match &c.stmt {
                Statement::Insert(ins) => vec![ins.values[0].as_int().unwrap()],
                Statement::Update(Update { predicate, .. }) | Statement::Delete(Delete { predicate, .. }) => predicate
                    .terms
                    .iter()
                    .filter(|t| t.column == "field_1")
                    .map(|t| t.value.as_int().unwrap())
                    .collect(),
                Statement::Select(_) => vec![],
            };
            assert!(keys.iter().all(|k| (lo..hi).contains(k)), "{:?} outside {lo}..{hi}", c.stmt);
        }
    }
}
