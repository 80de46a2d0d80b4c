//! The statement language: single-table INSERT / UPDATE / DELETE / SELECT with
//! conjunctive comparison predicates.
//!
//! ```text
//! statement  := insert | update | delete | select [";"]
//! insert     := INSERT INTO ident "(" ident {"," ident} ")" VALUES "(" literal {"," literal} ")"
//! update     := UPDATE ident SET ident "=" literal {"," ident "=" literal} [where]
//! delete     := DELETE FROM ident [where]
//! select     := SELECT ("*" | ident {"," ident}) FROM ident [where]
//! where      := WHERE ident op literal {AND ident op literal}
//! op         := "=" | "!=" | "<>" | "<" | "<=" | ">" | ">="
//! literal    := ["-"] digits | "'" text "'" | NULL
//! ```
//!
//! Keywords are case-insensitive and reserved; identifiers are case-sensitive
//! and match `[A-Za-z_][A-Za-z0-9_]*`. Inside text literals `''` is a quote.
//! [`render`] emits the canonical form (uppercase keywords, single spaces) and
//! `parse(render(s)) == s` for every well-formed AST.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::relmodel::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: expected {expected}, found {found}")]
pub struct SyntaxError {
    pub offset: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub const ALL: [CompareOp; 6] = [CompareOp::Eq, CompareOp::Ne, CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge];

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Ge => ord != Ordering::Less,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub column: String,
    pub op: CompareOp,
    pub value: Value,
}

/// Conjunction of comparisons; empty means "match everything".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Predicate {
    pub terms: Vec<Comparison>,
}

impl Predicate {
    pub fn always() -> Self {
        Predicate::default()
    }

    pub fn eq(column: impl Into<String>, value: Value) -> Self {
        Predicate { terms: vec![Comparison { column: column.into(), op: CompareOp::Eq, value }] }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    Star,
    Columns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insert {
    pub table: String,
    pub columns: Vec<String>,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Update {
    pub table: String,
    pub assignments: Vec<(String, Value)>,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delete {
    pub table: String,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Select {
    pub table: String,
    pub projection: Projection,
    pub predicate: Predicate,
}

impl Select {
    pub fn star(table: impl Into<String>) -> Self {
        Select { table: table.into(), projection: Projection::Star, predicate: Predicate::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Insert(Insert),
    Update(Update),
    Delete(Delete),
    Select(Select),
}

impl Statement {
    pub fn table(&self) -> &str {
        match self {
            Statement::Insert(s) => &s.table,
            Statement::Update(s) => &s.table,
            Statement::Delete(s) => &s.table,
            Statement::Select(s) => &s.table,
        }
    }

    pub fn is_dml(&self) -> bool {
        !matches!(self, Statement::Select(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Statement::Insert(_) => "insert",
            Statement::Update(_) => "update",
            Statement::Delete(_) => "delete",
            Statement::Select(_) => "select",
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

impl FromStr for Statement {
    type Err = SyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

const KEYWORDS: [&str; 11] = ["SELECT", "FROM", "WHERE", "AND", "INSERT", "INTO", "VALUES", "UPDATE", "SET", "DELETE", "NULL"];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

pub fn is_identifier(word: &str) -> bool {
    let mut chars = word.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_keyword(word)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Int(i64),
    Text(String),
    Star,
    Comma,
    LParen,
    RParen,
    Semi,
    Op(CompareOp),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Int(n) => format!("integer {n}"),
            Tok::Text(_) => "text literal".into(),
            Tok::Star => "`*`".into(),
            Tok::Comma => "`,`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Op(op) => format!("`{}`", op.symbol()),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(input: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset: usize, expected: &str, found: String| SyntaxError { offset, expected: expected.into(), found };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'*' => out.push((start, Tok::Star)),
            b',' => out.push((start, Tok::Comma)),
            b'(' => out.push((start, Tok::LParen)),
            b')' => out.push((start, Tok::RParen)),
            b';' => out.push((start, Tok::Semi)),
            b'=' => out.push((start, Tok::Op(CompareOp::Eq))),
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                out.push((start, Tok::Op(CompareOp::Ne)));
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 1;
                    out.push((start, Tok::Op(CompareOp::Le)));
                }
                Some(b'>') => {
                    i += 1;
                    out.push((start, Tok::Op(CompareOp::Ne)));
                }
                _ => out.push((start, Tok::Op(CompareOp::Lt))),
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                    out.push((start, Tok::Op(CompareOp::Ge)));
                } else {
                    out.push((start, Tok::Op(CompareOp::Gt)));
                }
            }
            b'\'' => {
                let mut text = String::new();
                let mut j = i + 1;
                loop {
                    match input[j..].find('\'') {
                        None => return Err(err(input.len(), "closing quote", "end of input".into())),
                        Some(rel) => {
                            text.push_str(&input[j..j + rel]);
                            j += rel + 1;
                            if bytes.get(j) == Some(&b'\'') {
                                text.push('\'');
                                j += 1;
                            } else {
                                break;
                            }
                        }
                    }
                }
                out.push((start, Tok::Text(text)));
                i = j;
                continue;
            }
            b'-' | b'0'..=b'9' => {
                let mut j = if c == b'-' { i + 1 } else { i };
                let digits_start = j;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j == digits_start {
                    let found = input[j..].chars().next().map_or("end of input".into(), |c| format!("`{c}`"));
                    return Err(err(j, "digit", found));
                }
                if j < bytes.len() && (bytes[j].is_ascii_alphabetic() || bytes[j] == b'_') {
                    return Err(err(j, "delimiter after integer", format!("`{}`", bytes[j] as char)));
                }
                let n: i64 = input[start..j]
                    .parse()
                    .map_err(|_| err(start, "integer within 64-bit range", format!("`{}`", &input[start..j])))?;
                out.push((start, Tok::Int(n)));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push((start, Tok::Word(input[i..j].to_owned())));
                i = j;
                continue;
            }
            _ => {
                let ch = input[i..].chars().next().unwrap_or('?');
                return Err(err(i, "token", format!("`{ch}`")));
            }
        }
        i += 1;
    }
    out.push((input.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn fail<T>(&self, expected: &str) -> Result<T, SyntaxError> {
        Err(SyntaxError { offset: self.offset(), expected: expected.into(), found: self.peek().describe() })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), SyntaxError> {
        if self.at_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            self.fail(kw)
        }
    }

    fn punct(&mut self, tok: Tok, what: &str) -> Result<(), SyntaxError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(what)
        }
    }

    fn ident(&mut self) -> Result<(usize, String), SyntaxError> {
        match self.peek() {
            Tok::Word(w) if !is_keyword(w) => {
                let off = self.offset();
                let w = w.clone();
                self.bump();
                Ok((off, w))
            }
            _ => self.fail("identifier"),
        }
    }

    fn literal(&mut self) -> Result<Value, SyntaxError> {
        match self.peek() {
            Tok::Int(n) => {
                let v = Value::Int(*n);
                self.bump();
                Ok(v)
            }
            Tok::Text(s) => {
                let v = Value::Text(s.clone());
                self.bump();
                Ok(v)
            }
            Tok::Word(w) if w.eq_ignore_ascii_case("NULL") => {
                self.bump();
                Ok(Value::Null)
            }
            _ => self.fail("literal"),
        }
    }

    fn predicate(&mut self) -> Result<Predicate, SyntaxError> {
        let mut pred = Predicate::default();
        if !self.at_keyword("WHERE") {
            return Ok(pred);
        }
        self.bump();
        loop {
            let (_, column) = self.ident()?;
            let op = match self.peek() {
                Tok::Op(op) => *op,
                _ => return self.fail("comparison operator"),
            };
            self.bump();
            let value = self.literal()?;
            pred.terms.push(Comparison { column, op, value });
            if self.at_keyword("AND") {
                self.bump();
            } else {
                return Ok(pred);
            }
        }
    }

    fn statement(&mut self) -> Result<Statement, SyntaxError> {
        let stmt = if self.at_keyword("INSERT") {
            self.bump();
            self.keyword("INTO")?;
            let (_, table) = self.ident()?;
            self.punct(Tok::LParen, "`(`")?;
            let mut columns: Vec<String> = Vec::new();
            loop {
                let (off, col) = self.ident()?;
                if columns.contains(&col) {
                    return Err(SyntaxError { offset: off, expected: "distinct column".into(), found: format!("`{col}`") });
                }
                columns.push(col);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.punct(Tok::RParen, "`,` or `)`")?;
            self.keyword("VALUES")?;
            self.punct(Tok::LParen, "`(`")?;
            let mut values = Vec::new();
            loop {
                values.push(self.literal()?);
                if values.len() < columns.len() && *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            if values.len() < columns.len() {
                return self.fail("`,`");
            }
            self.punct(Tok::RParen, "`)`")?;
            Statement::Insert(Insert { table, columns, values })
        } else if self.at_keyword("UPDATE") {
            self.bump();
            let (_, table) = self.ident()?;
            self.keyword("SET")?;
            let mut assignments: Vec<(String, Value)> = Vec::new();
            loop {
                let (off, col) = self.ident()?;
                if assignments.iter().any(|(c, _)| *c == col) {
                    return Err(SyntaxError { offset: off, expected: "distinct column".into(), found: format!("`{col}`") });
                }
                self.punct(Tok::Op(CompareOp::Eq), "`=`")?;
                assignments.push((col, self.literal()?));
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            let predicate = self.predicate()?;
            Statement::Update(Update { table, assignments, predicate })
        } else if self.at_keyword("DELETE") {
            self.bump();
            self.keyword("FROM")?;
            let (_, table) = self.ident()?;
            let predicate = self.predicate()?;
            Statement::Delete(Delete { table, predicate })
        } else if self.at_keyword("SELECT") {
            self.bump();
            let projection = if *self.peek() == Tok::Star {
                self.bump();
                Projection::Star
            } else {
                let mut cols = Vec::new();
                loop {
                    cols.push(self.ident()?.1);
                    if *self.peek() == Tok::Comma {
                        self.bump();
                    } else {
                        break;
                    }
                }
                Projection::Columns(cols)
            };
            self.keyword("FROM")?;
            let (_, table) = self.ident()?;
            let predicate = self.predicate()?;
            Statement::Select(Select { table, projection, predicate })
        } else {
            return self.fail("SELECT, INSERT, UPDATE or DELETE");
        };
        if *self.peek() == Tok::Semi {
            self.bump();
        }
        if *self.peek() != Tok::End {
            return self.fail("end of statement");
        }
        Ok(stmt)
    }
}

pub fn parse(text: &str) -> Result<Statement, SyntaxError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.statement()
}

fn render_predicate(out: &mut String, pred: &Predicate) {
    for (i, term) in pred.terms.iter().enumerate() {
        out.push_str(if i == 0 { " WHERE " } else { " AND " });
        out.push_str(&term.column);
        out.push(' ');
        out.push_str(term.op.symbol());
        out.push(' ');
        out.push_str(&term.value.to_string());
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

pub fn render(stmt: &Statement) -> String {
    let mut out = String::new();
    match stmt {
        Statement::Insert(s) => {
            out.push_str(&format!("INSERT INTO {} ({}) VALUES ({})", s.table, join(&s.columns), join(&s.values)));
        }
        Statement::Update(s) => {
            let sets: Vec<String> = s.assignments.iter().map(|(c, v)| format!("{c} = {v}")).collect();
            out.push_str(&format!("UPDATE {} SET {}", s.table, sets.join(", ")));
            render_predicate(&mut out, &s.predicate);
        }
        Statement::Delete(s) => {
            out.push_str(&format!("DELETE FROM {}", s.table));
            render_predicate(&mut out, &s.predicate);
        }
        Statement::Select(s) => {
            let proj = match &s.projection {
                Projection::Star => "*".to_owned(),
                Projection::Columns(cols) => join(cols),
            };
            out.push_str(&format!("SELECT {proj} FROM {}", s.table));
            render_predicate(&mut out, &s.predicate);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_insert() {
        let s = parse("INSERT INTO table1 (field_1, field_2, field_3) VALUES (5, 'Text5', 7)").unwrap();
        assert_eq!(
            s,
            Statement::Insert(Insert {
                table: "table1".into(),
                columns: vec!["field_1".into(), "field_2".into(), "field_3".into()],
                values: vec![Value::Int(5), Value::text("Text5"), Value::Int(7)],
            })
        );
    }

    #[test]
    fn parses_select_star() {
        let s = parse("Select * from table1").unwrap();
        assert_eq!(s, Statement::Select(Select::star("table1")));
    }

    #[test]
    fn truncated_where_reports_end_offset() {
        let text = "DELETE FROM t WHERE";
        let e = parse(text).unwrap_err();
        assert_eq!(e.offset, text.len());
        assert_eq!(e.expected, "identifier");
        assert_eq!(e.found, "end of input");
    }

    #[test]
    fn renders_canonical_text() {
        assert_eq!(render(&parse("select  *   from table1").unwrap()), "SELECT * FROM table1");
        let s = parse("update t set a = 'it''s', b=-3 where c<>4 and d >= NULL;").unwrap();
        assert_eq!(render(&s), "UPDATE t SET a = 'it''s', b = -3 WHERE c != 4 AND d >= NULL");
        let ins = Statement::Insert(Insert { table: "t".into(), columns: vec!["a".into()], values: vec![Value::text("it's")] });
        assert_eq!(render(&ins), "INSERT INTO t (a) VALUES ('it''s')");
        assert_eq!(parse(&render(&ins)).unwrap(), ins);
    }

    #[test]
    fn extreme_integers() {
        let s = parse("SELECT a FROM t WHERE a > -9223372036854775808 AND a < 9223372036854775807").unwrap();
        assert_eq!(parse(&render(&s)).unwrap(), s);
        assert!(parse("SELECT a FROM t WHERE a > 9223372036854775808").is_err());
    }

    #[test]
    fn rejects_other_forms() {
        for bad in [
            "CREATE TABLE t (a INTEGER)",
            "DROP TABLE t",
            "SELECT * FROM a JOIN b",
            "SELECT * FROM a, b",
            "SELECT * FROM t WHERE a IN (SELECT a FROM u)",
            "SELECT * FROM t WHERE a = (1)",
            "SELECT * FROM t WHERE a = 1 OR b = 2",
            "UPDATE t SET a = a + 1",
            "INSERT INTO t (a, b) VALUES (1)",
            "INSERT INTO t (a) VALUES (1, 2)",
            "INSERT INTO t (a, a) VALUES (1, 2)",
            "UPDATE t SET a = 1, a = 2",
            "SELECT * FROM select",
            "SELECT * FROM t; SELECT * FROM t",
            "SELECT * FROM t WHERE a = 'unterminated",
            "",
        ] {
            assert!(parse(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn error_offsets_are_stable() {
        let a = parse("SELECT * FROM t WHERE a ~ 1").unwrap_err();
        let b = parse("SELECT * FROM t WHERE a ~ 1").unwrap_err();
        assert_eq!(a, b);
        assert_eq!(a.offset, 24);
    }

    #[test]
    fn keywords_case_insensitive_identifiers_case_sensitive() {
        let a = parse("sElEcT Col FROM Tab").unwrap();
        let b = parse("SELECT col FROM tab").unwrap();
        assert_ne!(a, b);
        assert_eq!(render(&a), "SELECT Col FROM Tab");
    }

    #[test]
    fn unicode_text_literal() {
        let s = parse("INSERT INTO t (a) VALUES ('Përshëndetje ''x''')").unwrap();
        assert_eq!(parse(&render(&s)).unwrap(), s);
    }
}
