#![no_main]

use libfuzzer_sys::fuzz_target;
use repsim_core::minisql::{parse, render, CompareOp, Comparison, Delete, Insert, Predicate, Projection, Select, Statement, Update};
use repsim_core::Value;

const NAMES: [&str; 6] = ["t", "id", "field_1", "_x", "Col9", "selector"];

struct Bytes<'a>(&'a [u8]);

impl Bytes<'_> {
    fn byte(&mut self) -> u8 {
        let (b, rest) = self.0.split_first().map_or((0, &[][..]), |(b, r)| (*b, r));
        self.0 = rest;
        b
    }

    fn ident(&mut self) -> String {
        NAMES[self.byte() as usize % NAMES.len()].to_owned()
    }

    /// Between 1 and `max` distinct names.
    fn idents(&mut self, max: u8) -> Vec<String> {
        let n = 1 + self.byte() % max;
        let mut out: Vec<String> = Vec::new();
        for _ in 0..n {
            let name = self.ident();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    fn value(&mut self) -> Value {
        match self.byte() % 3 {
            0 => Value::Null,
            1 => {
                let mut n = [0u8; 8];
                n.iter_mut().for_each(|b| *b = self.byte());
                Value::Int(i64::from_le_bytes(n))
            }
            _ => {
                let len = (self.byte() % 12) as usize;
                let raw: Vec<u8> = (0..len).map(|_| self.byte()).collect();
                Value::Text(String::from_utf8_lossy(&raw).into_owned())
            }
        }
    }

    fn predicate(&mut self) -> Predicate {
        let n = self.byte() % 4;
        let terms = (0..n)
            .map(|_| Comparison {
                column: self.ident(),
                op: CompareOp::ALL[self.byte() as usize % CompareOp::ALL.len()],
                value: self.value(),
            })
            .collect();
        Predicate { terms }
    }

    fn statement(&mut self) -> Statement {
        let table = self.ident();
        match self.byte() % 4 {
            0 => {
                let columns = self.idents(4);
                let values = columns.iter().map(|_| self.value()).collect();
                Statement::Insert(Insert { table, columns, values })
            }
            1 => {
                let assignments = self.idents(3).into_iter().map(|c| (c, self.value())).collect();
                Statement::Update(Update { table, assignments, predicate: self.predicate() })
            }
            2 => Statement::Delete(Delete { table, predicate: self.predicate() }),
            _ => {
                let projection = match self.byte() % 2 {
                    0 => Projection::Star,
                    _ => Projection::Columns(self.idents(3)),
                };
                Statement::Select(Select { table, projection, predicate: self.predicate() })
            }
        }
    }
}

fuzz_target!(|data: &[u8]| {
    let stmt = Bytes(data).statement();
    let text = render(&stmt);
    let parsed = parse(&text).unwrap_or_else(|e| panic!("`{text}` does not parse: {e}"));
    assert_eq!(parsed, stmt, "{text}");
    assert_eq!(render(&parsed), text);
});
