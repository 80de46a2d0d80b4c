//! Scenario files: a line-oriented description of sites, tables, groups, a
//! workload and a timeline of administrative events.
//!
//! ```text
//! # comment
//! [scenario]
//! seed = 7
//! max_ticks = 50000
//! reconcile_every = 10
//!
//! [costs]
//! table_overhead = 1
//! install_rate = 10000
//! export_rate = 10000
//! import_rate = 10000
//!
//! [sites]
//! initial = a, b
//!
//! [link]
//! latency = 5
//! bandwidth = 1000
//!
//! [link a b]
//! latency = 20
//!
//! [table table1]
//! columns = field_1 int, field_2 text, field_3 int
//! pk = field_1
//! row = 1, 'Text1', 100
//! generate_rows = 50
//!
//! [group g]
//! tables = table1
//!
//! [workload]
//! rate = 20
//! tables = table1:1
//! ops = insert:3, update:3, delete:1, select:3
//! pk_range = 1..500
//! disjoint = false
//! start = 0
//! stop = 2000
//! pause = 900..1200
//!
//! [timeline]
//! at 1000 add_site c method=zero source=a group=g
//! at 300 partition a b until 600
//! at 1500 stop_workload
//! at 1600 sql a UPDATE table1 SET field_3 = 0 WHERE field_1 = 1
//! at 1700 reconcile
//! ```
//!
//! The full grammar is in `docs/scenario-format.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::Site;
use crate::instantiate::{AdditionPlan, AdditionReport, Method};
use crate::minisql::{self, is_identifier, Statement};
use crate::relmodel::{Column, ColumnType, MasterGroup, Row, RowVersion, SiteId, Table, TableSchema, Value};
use crate::simnet::workload::random_value;
use crate::simnet::{
    generate_workload, Action, CostModel, LinkParams, Metrics, Network, OpMix, PartitionWindow, SimConfig, Simulation,
    WorkloadSpec,
};

/// Parse or validation failure. `line` is 1-based; 0 means the problem is
/// not tied to one line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "invalid scenario: {}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError { line, message: message.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    One(Method),
    All,
}

impl fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodChoice::One(m) => m.fmt(f),
            MethodChoice::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimelineKind {
    AddSite { site: SiteId, method: MethodChoice, source: SiteId, group: String },
    Partition { a: SiteId, b: SiteId, until: u64 },
    StopWorkload,
    PauseWorkload { until: u64 },
    Sql { site: SiteId, stmt: Statement },
    Reconcile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineEvent {
    pub line: usize,
    pub tick: u64,
    pub kind: TimelineKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDef {
    pub schema: TableSchema,
    pub rows: Vec<Vec<Value>>,
    pub generate_rows: u64,
    pub text_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupDef {
    pub name: String,
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub max_ticks: u64,
    pub reconcile_every: Option<u64>,
    pub costs: CostModel,
    pub default_link: LinkParams,
    pub links: Vec<(SiteId, SiteId, LinkParams)>,
    pub sites: Vec<SiteId>,
    pub tables: Vec<TableDef>,
    pub groups: Vec<GroupDef>,
    pub workload: WorkloadSpec,
    pub timeline: Vec<TimelineEvent>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            max_ticks: 100_000,
            reconcile_every: Some(10),
            costs: CostModel::default(),
            default_link: LinkParams::default(),
            links: Vec::new(),
            sites: Vec::new(),
            tables: Vec::new(),
            groups: Vec::new(),
            workload: WorkloadSpec::default(),
            timeline: Vec::new(),
        }
    }
}

/// The two sites of a `[link a b]` header.
type SitePair = (SiteId, SiteId);

#[derive(Debug, Clone, PartialEq, Eq)]
enum Section {
    Scenario,
    Costs,
    Sites,
    Link(Option<SitePair>),
    Table(String),
    Group(String),
    Workload,
    Timeline,
}

#[derive(Default)]
struct TableDraft {
    line: usize,
    columns: Option<(usize, Vec<Column>)>,
    pk: Option<(usize, String)>,
    rows: Vec<(usize, String)>,
    generate_rows: u64,
    text_len: usize,
}

#[derive(Default, Clone, Copy)]
struct LinkDraft {
    latency: Option<u64>,
    bandwidth: Option<u64>,
}

impl LinkDraft {
    fn apply(self, base: LinkParams) -> LinkParams {
        LinkParams {
            latency_ticks: self.latency.unwrap_or(base.latency_ticks),
            bandwidth_bytes_per_tick: self.bandwidth.unwrap_or(base.bandwidth_bytes_per_tick),
        }
    }
}

struct Parser {
    scn: Scenario,
    section: Option<Section>,
    seen: BTreeSet<(String, String)>,
    link_drafts: Vec<(usize, Option<SitePair>, LinkDraft)>,
    tables: Vec<(String, TableDraft)>,
    groups: Vec<(usize, GroupDef)>,
    sites_line: usize,
    workload_tables: Option<(usize, Vec<(String, u32)>)>,
}

fn parse_u64(line: usize, key: &str, v: &str) -> Result<u64, ScenarioError> {
    v.parse().or_else(|_| err(line, format!("{key}: expected a non-negative integer, found '{v}'")))
}

fn parse_positive(line: usize, key: &str, v: &str) -> Result<u64, ScenarioError> {
    match parse_u64(line, key, v)? {
        0 => err(line, format!("{key} must be positive")),
        n => Ok(n),
    }
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ScenarioError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => err(line, format!("{key}: expected true or false, found '{v}'")),
    }
}

fn parse_range(line: usize, key: &str, v: &str) -> Result<(i64, i64), ScenarioError> {
    let parsed = v.split_once("..").and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
    match parsed {
        Some((lo, hi)) if lo < hi => Ok((lo, hi)),
        Some(_) => err(line, format!("{key}: range must be non-empty")),
        None => err(line, format!("{key}: expected LO..HI, found '{v}'")),
    }
}

fn split_list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn ident(line: usize, what: &str, s: &str) -> Result<String, ScenarioError> {
    if is_identifier(s) {
        Ok(s.to_owned())
    } else {
        err(line, format!("{what} '{s}' is not a valid identifier"))
    }
}

fn weighted(line: usize, key: &str, v: &str) -> Result<Vec<(String, u32)>, ScenarioError> {
    split_list(v)
        .into_iter()
        .map(|item| {
            let (name, w) = item.split_once(':').unwrap_or((item, "1"));
            let w: u32 = w.trim().parse().or_else(|_| err(line, format!("{key}: bad weight in '{item}'")))?;
            Ok((name.trim().to_owned(), w))
        })
        .collect()
}

impl Parser {
    fn new() -> Self {
        Parser {
            scn: Scenario::default(),
            section: None,
            seen: BTreeSet::new(),
            link_drafts: Vec::new(),
            tables: Vec::new(),
            groups: Vec::new(),
            sites_line: 0,
            workload_tables: None,
        }
    }

    fn header(&mut self, line: usize, inner: &str) -> Result<(), ScenarioError> {
        let words: Vec<&str> = inner.split_whitespace().collect();
        let section = match words.as_slice() {
            ["scenario"] => Section::Scenario,
            ["costs"] => Section::Costs,
            ["sites"] => Section::Sites,
            ["link"] => Section::Link(None),
            ["link", a, b] => Section::Link(Some((SiteId::from(*a), SiteId::from(*b)))),
            ["table", name] => Section::Table(ident(line, "table name", name)?),
            ["group", name] => Section::Group(ident(line, "group name", name)?),
            ["workload"] => Section::Workload,
            ["timeline"] => Section::Timeline,
            _ => return err(line, format!("unknown section [{inner}]")),
        };
        let key = format!("{section:?}");
        if !self.seen.insert(("section".into(), key)) {
            return err(line, format!("duplicate section [{inner}]"));
        }
        match &section {
            Section::Link(pair) => self.link_drafts.push((line, pair.clone(), LinkDraft::default())),
            Section::Table(name) => {
                self.tables.push((name.clone(), TableDraft { line, text_len: 8, ..TableDraft::default() }))
            }
            Section::Group(name) => self.groups.push((line, GroupDef { name: name.clone(), tables: Vec::new() })),
            _ => {}
        }
        self.section = Some(section);
        Ok(())
    }

    fn entry(&mut self, line: usize, key: &str, v: &str) -> Result<(), ScenarioError> {
        let Some(section) = self.section.clone() else {
            return err(line, "entry outside of any section");
        };
        let repeatable = matches!((&section, key), (Section::Table(_), "row") | (Section::Workload, "pause"));
        if !repeatable && !self.seen.insert((format!("{section:?}"), key.to_owned())) {
            return err(line, format!("duplicate key '{key}'"));
        }
        let unknown = || err(line, format!("unknown key '{key}'"));
        match section {
            Section::Scenario => match key {
                "seed" => self.scn.seed = parse_u64(line, key, v)?,
                "max_ticks" => self.scn.max_ticks = parse_u64(line, key, v)?,
                "reconcile_every" => {
                    self.scn.reconcile_every = Some(parse_u64(line, key, v)?).filter(|n| *n > 0);
                }
                _ => return unknown(),
            },
            Section::Costs => {
                let c = &mut self.scn.costs;
                match key {
                    "table_overhead" => c.table_overhead_ticks = parse_u64(line, key, v)?,
                    "install_rate" => c.install_bytes_per_tick = parse_positive(line, key, v)?,
                    "export_rate" => c.export_bytes_per_tick = parse_positive(line, key, v)?,
                    "import_rate" => c.import_bytes_per_tick = parse_positive(line, key, v)?,
                    _ => return unknown(),
                }
            }
            Section::Sites => match key {
                "initial" => {
                    self.sites_line = line;
                    for s in split_list(v) {
                        self.scn.sites.push(SiteId::from(ident(line, "site", s)?.as_str()));
                    }
                }
                _ => return unknown(),
            },
            Section::Link(_) => {
                let params = &mut self.link_drafts.last_mut().expect("link section").2;
                match key {
                    "latency" => params.latency = Some(parse_u64(line, key, v)?),
                    "bandwidth" => params.bandwidth = Some(parse_positive(line, key, v)?),
                    _ => return unknown(),
                }
            }
            Section::Table(_) => {
                let draft = &mut self.tables.last_mut().expect("table section").1;
                match key {
                    "columns" => {
                        let mut cols = Vec::new();
                        for item in split_list(v) {
                            let mut parts = item.split_whitespace();
                            let (Some(name), Some(ty), None) = (parts.next(), parts.next(), parts.next()) else {
                                return err(line, format!("column '{item}': expected NAME TYPE"));
                            };
                            let ty = match ty.to_ascii_lowercase().as_str() {
                                "int" | "integer" => ColumnType::Integer,
                                "text" => ColumnType::Text,
                                other => return err(line, format!("unknown column type '{other}'")),
                            };
                            cols.push(Column::new(ident(line, "column", name)?, ty));
                        }
                        draft.columns = Some((line, cols));
                    }
                    "pk" => draft.pk = Some((line, v.to_owned())),
                    "row" => draft.rows.push((line, v.to_owned())),
                    "generate_rows" => draft.generate_rows = parse_u64(line, key, v)?,
                    "text_len" => draft.text_len = parse_u64(line, key, v)? as usize,
                    _ => return unknown(),
                }
            }
            Section::Group(_) => {
                let group = &mut self.groups.last_mut().expect("group section").1;
                match key {
                    "tables" => group.tables = split_list(v).into_iter().map(str::to_owned).collect(),
                    _ => return unknown(),
                }
            }
            Section::Workload => {
                let w = &mut self.scn.workload;
                match key {
                    "rate" => w.rate = parse_u64(line, key, v)? as u32,
                    "tables" => self.workload_tables = Some((line, weighted(line, key, v)?)),
                    "ops" => {
                        let mut mix = OpMix { insert: 0, update: 0, delete: 0, select: 0 };
                        for (op, weight) in weighted(line, key, v)? {
                            match op.as_str() {
                                "insert" => mix.insert = weight,
                                "update" => mix.update = weight,
                                "delete" => mix.delete = weight,
                                "select" => mix.select = weight,
                                other => return err(line, format!("unknown op '{other}'")),
                            }
                        }
                        if mix.insert + mix.update + mix.delete + mix.select == 0 {
                            return err(line, "ops: at least one weight must be positive");
                        }
                        w.op_mix = mix;
                    }
                    "pk_range" => (w.pk_lo, w.pk_hi) = parse_range(line, key, v)?,
                    "disjoint" => w.disjoint = parse_bool(line, key, v)?,
                    "start" => w.start = parse_u64(line, key, v)?,
                    "stop" => w.stop = parse_u64(line, key, v)?,
                    "pause" => {
                        let (a, b) = parse_range(line, key, v)?;
                        if a < 0 {
                            return err(line, "pause: ticks must be non-negative");
                        }
                        w.pauses.push((a as u64, b as u64));
                    }
                    "text_len" => w.max_text_len = parse_u64(line, key, v)? as usize,
                    "null_percent" => match parse_u64(line, key, v)? {
                        n @ 0..=100 => w.null_percent = n as u32,
                        _ => return err(line, "null_percent must be at most 100"),
                    },
                    _ => return unknown(),
                }
            }
            Section::Timeline => unreachable!("timeline lines are not key/value"),
        }
        Ok(())
    }

    fn timeline(&mut self, line: usize, text: &str) -> Result<(), ScenarioError> {
        let Some(rest) = text.strip_prefix("at ") else {
            return err(line, "timeline entries start with 'at <tick>'");
        };
        let rest = rest.trim_start();
        let (tick, rest) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        let tick = parse_u64(line, "tick", tick)?;
        let rest = rest.trim();
        let (cmd, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        let args = args.trim();
        let words: Vec<&str> = args.split_whitespace().collect();
        let kind = match cmd {
            "add_site" => {
                let Some((site, opts)) = words.split_first() else {
                    return err(line, "add_site: missing site");
                };
                let mut kv = BTreeMap::new();
                for o in opts {
                    let Some((k, v)) = o.split_once('=') else {
                        return err(line, format!("add_site: expected key=value, found '{o}'"));
                    };
                    if kv.insert(k, v).is_some() {
                        return err(line, format!("add_site: duplicate option '{k}'"));
                    }
                }
                let take = |k: &str| kv.get(k).copied().map_or_else(|| err(line, format!("add_site: missing {k}=")), Ok);
                let method = match take("method")? {
                    "all" => MethodChoice::All,
                    m => MethodChoice::One(m.parse().or_else(|e: String| err(line, e))?),
                };
                let source = SiteId::from(take("source")?);
                let group = take("group")?.to_owned();
                if let Some(k) = kv.keys().find(|k| !["method", "source", "group"].contains(k)) {
                    return err(line, format!("add_site: unknown option '{k}'"));
                }
                TimelineKind::AddSite { site: SiteId::from(ident(line, "site", site)?.as_str()), method, source, group }
            }
            "partition" => match words.as_slice() {
                [a, b, "until", t] => TimelineKind::Partition {
                    a: SiteId::from(*a),
                    b: SiteId::from(*b),
                    until: parse_u64(line, "until", t)?,
                },
                _ => return err(line, "partition: expected 'partition A B until TICK'"),
            },
            "stop_workload" if words.is_empty() => TimelineKind::StopWorkload,
            "pause_workload" => match words.as_slice() {
                ["until", t] => TimelineKind::PauseWorkload { until: parse_u64(line, "until", t)? },
                _ => return err(line, "pause_workload: expected 'pause_workload until TICK'"),
            },
            "sql" => {
                let (site, sql) = args.split_once(char::is_whitespace).unwrap_or((args, ""));
                let stmt = minisql::parse(sql.trim()).or_else(|e| err(line, format!("sql: {e}")))?;
                TimelineKind::Sql { site: SiteId::from(site), stmt }
            }
            "reconcile" if words.is_empty() => TimelineKind::Reconcile,
            "stop_workload" | "reconcile" => return err(line, format!("{cmd} takes no arguments")),
            other => return err(line, format!("unknown timeline command '{other}'")),
        };
        self.scn.timeline.push(TimelineEvent { line, tick, kind });
        Ok(())
    }

    fn finish(mut self) -> Result<Scenario, ScenarioError> {
        let scn = &mut self.scn;
        if scn.sites.is_empty() {
            return err(0, "no initial sites ([sites] initial = ...)");
        }
        let mut uniq = BTreeSet::new();
        for s in &scn.sites {
            if !uniq.insert(s.clone()) {
                return err(self.sites_line, format!("duplicate site {s}"));
            }
        }
        // Overrides inherit unspecified fields from the default link.
        for (_, pair, draft) in &self.link_drafts {
            if pair.is_none() {
                scn.default_link = draft.apply(scn.default_link);
            }
        }
        for (line, pair, draft) in self.link_drafts {
            match pair {
                None => {}
                Some((a, b)) => {
                    let params = draft.apply(scn.default_link);
                    for s in [&a, &b] {
                        if !uniq.contains(s) && !added_sites(&scn.timeline).contains(s) {
                            return err(line, format!("link references unknown site {s}"));
                        }
                    }
                    scn.links.push((a, b, params));
                }
            }
        }
        for (name, d) in self.tables {
            let Some((_, cols)) = d.columns else {
                return err(d.line, format!("table {name}: missing columns"));
            };
            let Some((pk_line, pk)) = d.pk else {
                return err(d.line, format!("table {name}: missing pk"));
            };
            let schema = TableSchema::new(name.clone(), cols, &pk).or_else(|e| err(pk_line, e.to_string()))?;
            let mut rows = Vec::new();
            let mut pks = BTreeSet::new();
            for (line, literal) in d.rows {
                let cols: Vec<&str> = schema.column_names().collect();
                let sql = format!("INSERT INTO {name} ({}) VALUES ({literal})", cols.join(", "));
                let values = match minisql::parse(&sql) {
                    Ok(Statement::Insert(ins)) => ins.values,
                    Ok(_) => unreachable!("insert text parses as insert"),
                    Err(_) => return err(line, format!("row: expected {} literals, found '{literal}'", cols.len())),
                };
                let pk = schema.check_values(&values).or_else(|e| err(line, e.to_string()))?;
                if !pks.insert(pk) {
                    return err(line, format!("row: duplicate key {pk}"));
                }
                rows.push(values);
            }
            if scn.tables.iter().any(|t| t.schema.table_name() == name) {
                return err(d.line, format!("duplicate table {name}"));
            }
            scn.tables.push(TableDef { schema, rows, generate_rows: d.generate_rows, text_len: d.text_len });
        }
        let table_names: BTreeSet<&str> = scn.tables.iter().map(|t| t.schema.table_name()).collect();
        let mut owner: BTreeMap<String, String> = BTreeMap::new();
        for (line, g) in &self.groups {
            if g.tables.is_empty() {
                return err(*line, format!("group {}: no tables", g.name));
            }
            for t in &g.tables {
                if !table_names.contains(t.as_str()) {
                    return err(*line, format!("group {}: unknown table {t}", g.name));
                }
                if let Some(prev) = owner.insert(t.clone(), g.name.clone()) {
                    return err(*line, format!("table {t} is already in group {prev}"));
                }
            }
        }
        scn.groups = self.groups.into_iter().map(|(_, g)| g).collect();
        if let Some((line, weights)) = self.workload_tables {
            for (t, _) in &weights {
                if !table_names.contains(t.as_str()) {
                    return err(line, format!("workload: unknown table {t}"));
                }
            }
            scn.workload.table_weights = weights;
        }
        validate_timeline(scn, &uniq)?;
        scn.workload.seed = scn.seed;
        Ok(self.scn)
    }
}

fn added_sites(timeline: &[TimelineEvent]) -> BTreeSet<SiteId> {
    timeline
        .iter()
        .filter_map(|e| match &e.kind {
            TimelineKind::AddSite { site, .. } => Some(site.clone()),
            _ => None,
        })
        .collect()
}

fn validate_timeline(scn: &Scenario, initial: &BTreeSet<SiteId>) -> Result<(), ScenarioError> {
    let mut known = initial.clone();
    let mut events: Vec<&TimelineEvent> = scn.timeline.iter().collect();
    events.sort_by_key(|e| (e.tick, e.line));
    let all_known: BTreeSet<SiteId> = initial.union(&added_sites(&scn.timeline)).cloned().collect();
    for e in events {
        let line = e.line;
        match &e.kind {
            TimelineKind::AddSite { site, source, group, .. } => {
                if known.contains(site) {
                    return err(line, format!("add_site: site {site} already exists"));
                }
                if !known.contains(source) {
                    return err(line, format!("add_site: unknown source site {source}"));
                }
                if !scn.groups.iter().any(|g| &g.name == group) {
                    return err(line, format!("add_site: unknown group {group}"));
                }
                known.insert(site.clone());
            }
            TimelineKind::Partition { a, b, until } => {
                for s in [a, b] {
                    if !all_known.contains(s) {
                        return err(line, format!("partition: unknown site {s}"));
                    }
                }
                if a == b {
                    return err(line, "partition: sites must differ");
                }
                if *until <= e.tick {
                    return err(line, "partition: 'until' must be after the start tick");
                }
            }
            TimelineKind::PauseWorkload { until } if *until <= e.tick => {
                return err(line, "pause_workload: 'until' must be after the start tick");
            }
            TimelineKind::Sql { site, stmt } => {
                if !all_known.contains(site) {
                    return err(line, format!("sql: unknown site {site}"));
                }
                if !scn.tables.iter().any(|t| t.schema.table_name() == stmt.table()) {
                    return err(line, format!("sql: unknown table {}", stmt.table()));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut p = Parser::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if let Some(inner) = t.strip_prefix('[') {
                let Some(inner) = inner.strip_suffix(']') else {
                    return err(line, "unterminated section header");
                };
                p.header(line, inner.trim())?;
            } else if p.section == Some(Section::Timeline) {
                p.timeline(line, t)?;
            } else {
                let Some((k, v)) = t.split_once('=') else {
                    return err(line, format!("expected 'key = value', found '{t}'"));
                };
                p.entry(line, k.trim(), v.trim())?;
            }
        }
        p.finish()
    }

    /// Same scenario under another seed (workload and generated rows follow).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.workload.seed = seed;
        self
    }

    pub fn add_site_events(&self) -> impl Iterator<Item = &TimelineEvent> {
        self.timeline.iter().filter(|e| matches!(e.kind, TimelineKind::AddSite { .. }))
    }

    /// Rejects `method=all`, which only `compare` understands.
    pub fn check_runnable(&self) -> Result<(), ScenarioError> {
        match self.add_site_events().find(|e| matches!(e.kind, TimelineKind::AddSite { method: MethodChoice::All, .. })) {
            Some(e) => err(e.line, "method=all is only valid for compare"),
            None => Ok(()),
        }
    }

    /// Requires exactly one add_site event, with `method=all`.
    pub fn check_comparable(&self) -> Result<(), ScenarioError> {
        let adds: Vec<&TimelineEvent> = self.add_site_events().collect();
        match adds.as_slice() {
            [e] if matches!(e.kind, TimelineKind::AddSite { method: MethodChoice::All, .. }) => Ok(()),
            [e] => err(e.line, "compare needs the add_site event to use method=all"),
            _ => err(0, format!("compare needs exactly one add_site event, found {}", adds.len())),
        }
    }

    fn initial_table(&self, idx: usize) -> Table {
        let def = &self.tables[idx];
        let mut table = Table::new(def.schema.clone());
        for values in &def.rows {
            let row = Row::new(&def.schema, values.clone(), RowVersion::initial()).expect("validated row");
            table.put_row(row).expect("validated row");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(idx as u64 + 1)));
        let pk_idx = def.schema.pk_index();
        let mut pk = 1i64;
        for _ in 0..def.generate_rows {
            while table.contains(pk) {
                pk += 1;
            }
            let values: Vec<Value> = def
                .schema
                .columns()
                .iter()
                .enumerate()
                .map(|(i, c)| if i == pk_idx { Value::Int(pk) } else { random_value(&mut rng, c.ty, def.text_len, 0) })
                .collect();
            let row = Row::new(&def.schema, values, RowVersion::initial()).expect("generated row");
            table.put_row(row).expect("fresh key");
            pk += 1;
        }
        table
    }

    /// Builds the simulation, with every `add_site` event using `method`
    /// when given.
    pub fn build(&self, method: Option<Method>) -> Result<Simulation, ScenarioError> {
        let mut net = Network::new(self.default_link);
        for (a, b, p) in &self.links {
            net.set_link(a.clone(), b.clone(), *p);
        }
        let config = SimConfig { reconcile_every: self.reconcile_every, costs: self.costs, trace: false };
        let mut sim = Simulation::new(net, config);
        let tables: Vec<Table> = (0..self.tables.len()).map(|i| self.initial_table(i)).collect();
        for id in &self.sites {
            let mut site = Site::new(id.clone());
            for t in &tables {
                site.create_table(t.clone()).or_else(|e| err(0, e.to_string()))?;
            }
            for g in &self.groups {
                let mut group = MasterGroup::new(g.name.clone(), g.tables.iter().cloned());
                group.members = self.sites.iter().cloned().collect();
                site.add_group(group).or_else(|e| err(0, e.to_string()))?;
            }
            sim.add_site(site).or_else(|e| err(0, e.to_string()))?;
        }

        let mut workload = self.workload.clone();
        for e in &self.timeline {
            match &e.kind {
                TimelineKind::StopWorkload => workload.stop = workload.stop.min(e.tick),
                TimelineKind::PauseWorkload { until } => workload.pauses.push((e.tick, *until)),
                _ => {}
            }
        }
        let schemas: Vec<TableSchema> = self.tables.iter().map(|t| t.schema.clone()).collect();
        sim.schedule_workload(generate_workload(&workload, &self.sites, &schemas));

        for e in &self.timeline {
            let action = match &e.kind {
                TimelineKind::AddSite { site, method: choice, source, group } => {
                    let m = match (method, choice) {
                        (Some(m), _) => m,
                        (None, MethodChoice::One(m)) => *m,
                        (None, MethodChoice::All) => return err(e.line, "method=all is only valid for compare"),
                    };
                    Action::StartAddition(AdditionPlan {
                        method: m,
                        group_name: group.clone(),
                        new_site: site.clone(),
                        source_site: source.clone(),
                    })
                }
                TimelineKind::Partition { a, b, until } => Action::Partition(PartitionWindow {
                    a: a.clone(),
                    b: b.clone(),
                    from_tick: e.tick,
                    to_tick: *until,
                }),
                TimelineKind::StopWorkload => Action::StopWorkload,
                TimelineKind::PauseWorkload { .. } => Action::Custom("pause_workload".into()),
                TimelineKind::Sql { site, stmt } => Action::ClientStatement { site: site.clone(), stmt: stmt.clone() },
                TimelineKind::Reconcile => Action::ReconcileNow,
            };
            sim.schedule(e.tick, action);
        }
        Ok(sim)
    }

    pub fn run(&self) -> Result<RunOutcome, ScenarioError> {
        self.check_runnable()?;
        self.run_with(None)
    }

    pub fn run_with(&self, method: Option<Method>) -> Result<RunOutcome, ScenarioError> {
        let mut sim = self.build(method)?;
        let converged = sim.run_to_quiescence(self.max_ticks);
        Ok(RunOutcome::collect(self.seed, converged, &mut sim))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub seed: u64,
    pub converged: bool,
    pub end_tick: u64,
    pub metrics: Metrics,
    pub reports: Vec<AdditionReport>,
    pub failed_additions: Vec<(AdditionPlan, String)>,
    /// Row count per table, taken from the first site (by id) holding it.
    pub final_rows: BTreeMap<String, usize>,
    pub sites: Vec<SiteId>,
}

impl RunOutcome {
    fn collect(seed: u64, converged: bool, sim: &mut Simulation) -> Self {
        let metrics = sim.finish_metrics().clone();
        let mut final_rows = BTreeMap::new();
        for site in sim.sites() {
            for t in site.tables() {
                final_rows.entry(t.name().to_owned()).or_insert(t.len());
            }
        }
        RunOutcome {
            seed,
            converged,
            end_tick: sim.now(),
            metrics,
            reports: sim.reports(),
            failed_additions: sim.failed_additions().to_vec(),
            final_rows,
            sites: sim.sites().map(|s| s.id().clone()).collect(),
        }
    }

    pub fn total_rows(&self) -> usize {
        self.final_rows.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[scenario]
seed = 3
max_ticks = 5000

[sites]
initial = a, b

[table table1]
columns = field_1 int, field_2 text, field_3 int
pk = field_1
row = 1, 'Text1', 10
row = 2, 'it''s, here', NULL

[group g]
tables = table1
";

    #[test]
    fn minimal_parses_and_converges_without_downtime() {
        let scn = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(scn.sites, vec![SiteId::from("a"), SiteId::from("b")]);
        assert_eq!(scn.tables[0].rows[1][1], Value::Text("it's, here".into()));
        let out = scn.run().unwrap();
        assert!(out.converged);
        assert_eq!(out.metrics.downtime_ticks, 0);
        assert_eq!(out.final_rows["table1"], 2);
    }

    #[test]
    fn full_example_parses() {
        let text = format!(
            "{MINIMAL}
[costs]
table_overhead = 2
install_rate = 500

[link]
latency = 3
bandwidth = 200

[link a b]
latency = 9

[workload]
rate = 10
tables = table1:2
ops = insert:1, update:1
pk_range = 1..50
stop = 400
pause = 100..200

[timeline]
at 150 add_site c method=offline source=a group=g
at 20 partition a b until 80
at 300 sql c UPDATE table1 SET field_3 = 7 WHERE field_1 = 1
at 320 reconcile
at 350 pause_workload until 380
at 390 stop_workload
"
        );
        let scn = Scenario::parse(&text).unwrap();
        assert_eq!(scn.costs.table_overhead_ticks, 2);
        assert_eq!(scn.links[0].2, LinkParams { latency_ticks: 9, bandwidth_bytes_per_tick: 200 });
        assert_eq!(scn.workload.op_mix, OpMix { insert: 1, update: 1, delete: 0, select: 0 });
        assert_eq!(scn.workload.pauses, vec![(100, 200)]);
        assert_eq!(scn.timeline.len(), 6);
        let out = scn.run().unwrap();
        assert!(out.converged, "{out:?}");
        assert_eq!(out.reports.len(), 1);
        assert_eq!(out.sites.len(), 3);
    }

    fn error_of(extra: &str) -> ScenarioError {
        Scenario::parse(&format!("{MINIMAL}{extra}")).unwrap_err()
    }

    #[test]
    fn errors_carry_line_numbers() {
        let h = MINIMAL.lines().count() + 1;
        let cases = [
            ("[bogus]\n", h, "unknown section"),
            ("[workload]\nrate = many\n", h + 1, "non-negative integer"),
            ("[workload]\ncolour = red\n", h + 1, "unknown key"),
            ("[timeline]\nat 5 launch rockets\n", h + 1, "unknown timeline command"),
            ("[timeline]\nat 5 add_site b method=online source=a group=g\n", h + 1, "already exists"),
            ("[timeline]\nat 5 add_site c method=online source=z group=g\n", h + 1, "unknown source"),
            ("[timeline]\nat 5 add_site c method=fast source=a group=g\n", h + 1, "unknown method"),
            ("[timeline]\nat 5 partition a zz until 9\n", h + 1, "unknown site"),
            ("[timeline]\nat 5 partition a b until 5\n", h + 1, "after the start"),
            ("[timeline]\nat 5 sql a SELECT * FROM nowhere\n", h + 1, "unknown table"),
            ("[timeline]\nat 5 sql a SELEKT\n", h + 1, "sql:"),
            ("[group h]\ntables = table1\n", h, "already in group"),
            ("[scenario]\n", h, "duplicate section"),
        ];
        for (extra, line, needle) in cases {
            let e = error_of(extra);
            assert_eq!(e.line, line, "{extra}: {e}");
            assert!(e.to_string().contains(needle), "{extra}: {e}");
        }
        let e = Scenario::parse("[table t]\ncolumns = id int\npk = id\nrow = 'x'\n[sites]\ninitial = a\n").unwrap_err();
        assert_eq!(e.line, 4);
        assert!(Scenario::parse("").unwrap_err().to_string().contains("no initial sites"));
        assert!(Scenario::parse("seed = 1\n").unwrap_err().to_string().contains("outside"));
    }

    #[test]
    fn method_all_is_for_compare_only() {
        let scn = Scenario::parse(&format!("{MINIMAL}[timeline]\nat 5 add_site c method=all source=a group=g\n")).unwrap();
        assert!(scn.run().is_err());
        assert!(scn.check_comparable().is_ok());
        assert!(scn.run_with(Some(Method::Offline)).unwrap().converged);
        assert!(Scenario::parse(MINIMAL).unwrap().check_comparable().is_err());
    }

    #[test]
    fn generated_rows_are_identical_across_sites_and_seeded() {
        let text = MINIMAL.replace("row = 2, 'it''s, here', NULL", "generate_rows = 100");
        let scn = Scenario::parse(&text).unwrap();
        let sim = scn.build(None).unwrap();
        let tables: Vec<&Table> = sim.sites().map(|s| s.table("table1").unwrap()).collect();
        assert_eq!(tables[0].len(), 101);
        assert!(tables[0].table_equal(tables[1]).unwrap());
        let other = scn.clone().with_seed(99).build(None).unwrap();
        let t2 = other.sites().next().unwrap().table("table1").unwrap();
        assert!(!tables[0].table_equal(t2).unwrap());
    }
}
