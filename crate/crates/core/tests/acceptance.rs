//! Acceptance criteria, one line of output per criterion.
//!
//! Runs without the libtest harness so the pass/fail lines are always
//! printed; exits non-zero if any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use repsim_core::minisql::{parse, render, Projection, Statement};
use repsim_core::report::{compare, comparison_report, metrics_report};
use repsim_core::scenario::Scenario;
use repsim_core::simnet::{
    generate_workload, Action, ClientOutcome, LinkParams, Network, PartitionWindow, SimConfig, WorkloadSpec,
};
use repsim_core::verify::verify;
use repsim_core::{
    check_convergence, ConflictKind, MasterGroup, Method, Row, RowVersion, Site, SiteId, Simulation, Table,
    TableSchema, Value,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    let text = fs::read_to_string(scenario_path(name)).expect("scenario file");
    Scenario::parse(&text).expect("scenario parses")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(limit_secs), || format!("took {elapsed:.2?}, limit {limit_secs}s"))
}

fn ac1_overlay_transparency() -> Outcome {
    let start = Instant::now();
    let results = verify(20, 1000);
    let elapsed = start.elapsed();
    let early: Vec<String> = results
        .iter()
        .filter(|r| r.failure.as_ref().is_some_and(|c| c.index < r.statements))
        .map(ToString::to_string)
        .collect();
    ensure(results.len() == 20, || "expected 20 seeds".into())?;
    ensure(early.is_empty(), || early.join("; "))?;
    within(elapsed, 60)?;
    Ok(format!("20 seeds x 1000 statements in {elapsed:.2?}"))
}

fn ac2_replay_equivalence() -> Outcome {
    let results = verify(20, 1000);
    let failed: Vec<String> = results.iter().filter(|r| !r.passed()).map(ToString::to_string).collect();
    ensure(failed.is_empty(), || failed.join("; "))?;
    Ok("compressed and per-record replay equal the oracle for 20 seeds".into())
}

fn ac3_zero_downtime() -> Outcome {
    let base = load("zero_downtime.scn");
    let mut replayed = 0;
    for seed in 0..10 {
        let out = base.clone().with_seed(seed).run().map_err(|e| e.to_string())?;
        let r = out.reports.first().ok_or_else(|| format!("seed {seed}: addition did not finish"))?;
        ensure(out.converged, || format!("seed {seed}: no convergence"))?;
        ensure(r.method == Method::ZeroDowntime, || "wrong method".into())?;
        ensure(r.rejected_dml == 0 && out.metrics.rejected_dml == 0, || format!("seed {seed}: rejected DML"))?;
        ensure(r.downtime_ticks == 0 && out.metrics.downtime_ticks == 0, || format!("seed {seed}: downtime"))?;
        replayed += r.replayed_statements;
    }
    ensure(replayed > 0, || "workload never overlapped the addition window".into())?;
    Ok(format!("10 seeds, {replayed} statements absorbed by overlays, 0 rejected, 0 downtime"))
}

fn ac4_quiesce_enforcement() -> Outcome {
    let scn = load("online_under_load.scn");
    let mut sim = scn.build(None).map_err(|e| e.to_string())?;
    for tick in 990..1200 {
        let site = if tick % 2 == 0 { "a" } else { "b" };
        let update = format!("UPDATE orders SET amount = {tick} WHERE id = {}", tick % 50 + 1);
        sim.schedule(tick, Action::ClientStatement { site: site.into(), stmt: parse(&update).unwrap() });
        sim.schedule(tick, Action::ClientStatement { site: site.into(), stmt: parse("SELECT * FROM orders").unwrap() });
    }
    ensure(sim.run_to_quiescence(scn.max_ticks), || "no convergence".into())?;
    let r = sim.reports().into_iter().next().ok_or("addition did not finish")?;
    let (mut rejected, mut reads) = (0, 0);
    for rec in sim.client_log() {
        let inside = rec.tick >= r.start_tick && rec.tick < r.end_tick;
        match (&rec.outcome, rec.dml, inside) {
            (ClientOutcome::Rejected, true, true) => rejected += 1,
            (ClientOutcome::Rejected, _, false) if rec.tick != r.end_tick => {
                return Err(format!("DML rejected outside the window at tick {}", rec.tick));
            }
            (ClientOutcome::Rejected, false, _) => return Err("a SELECT was rejected".into()),
            (ClientOutcome::Ok { .. }, false, true) => reads += 1,
            (ClientOutcome::Ok { .. }, true, true) => {
                return Err(format!("DML accepted at tick {} while quiesced", rec.tick));
            }
            (ClientOutcome::Failed(e), _, true) => return Err(format!("statement failed in window: {e}")),
            _ => {}
        }
    }
    ensure(rejected > 0 && r.rejected_dml > 0, || "no DML overlapped the window".into())?;
    ensure(reads > 0, || "no reads in the window".into())?;
    Ok(format!(
        "window [{}, {}): {rejected} DML rejected, {reads} SELECTs served",
        r.start_tick, r.end_tick
    ))
}

fn ac5_calibrated_ratio() -> Outcome {
    let start = Instant::now();
    let scn = load("calibrated_compare.scn");
    let tables = scn.tables.len();
    let rows: u64 = scn.tables.iter().map(|t| t.generate_rows).sum();
    ensure(tables == 10 && rows == 10_000, || "scenario must be 10 tables x 1000 rows".into())?;
    let c = compare(&scn).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let ratio = c.online_offline_ratio().ok_or("offline downtime is zero")?;
    let on = c.get(Method::Online).metrics.downtime_ticks;
    let off = c.get(Method::Offline).metrics.downtime_ticks;
    let zero = c.get(Method::ZeroDowntime).metrics.downtime_ticks;
    ensure((9.6..=14.4).contains(&ratio), || format!("ratio {ratio:.2} outside [9.6, 14.4]"))?;
    ensure(on > off && off > zero && zero == 0, || format!("ordering violated: {on} {off} {zero}"))?;
    ensure(c.all_converged(), || "a run did not converge".into())?;
    within(elapsed, 10)?;
    Ok(format!("online {on}, offline {off}, zero {zero}, ratio {ratio:.2}, {elapsed:.2?}"))
}

fn ac6_method_equivalence() -> Outcome {
    let base = load("equivalence.scn");
    for seed in 0..10 {
        let scn = base.clone().with_seed(seed);
        let mut reference: Option<Vec<Table>> = None;
        for m in Method::ALL {
            let mut sim = scn.build(Some(m)).map_err(|e| e.to_string())?;
            ensure(sim.run_to_quiescence(scn.max_ticks), || format!("seed {seed} {m}: no convergence"))?;
            let sites: Vec<&Site> = sim.sites().collect();
            ensure(sites.len() == 3, || format!("seed {seed} {m}: new site missing"))?;
            ensure(check_convergence(&sites, "bank"), || format!("seed {seed} {m}: sites differ"))?;
            let tables: Vec<Table> = sites[2].group_tables("bank").unwrap().into_iter().cloned().collect();
            match &reference {
                None => reference = Some(tables),
                Some(r) => {
                    let same = r.iter().zip(&tables).all(|(x, y)| x.table_equal(y).unwrap());
                    ensure(same, || format!("seed {seed}: {m} differs from online"))?;
                }
            }
        }
    }
    Ok("10 seeds: every site equal within each run and across the three methods".into())
}

fn two_site_sim(rows: &[(i64, &str)], names: &[&str]) -> Simulation {
    let schema = TableSchema::new(
        "table1",
        vec![
            repsim_core::Column::new("field_1", repsim_core::ColumnType::Integer),
            repsim_core::Column::new("field_2", repsim_core::ColumnType::Text),
        ],
        "field_1",
    )
    .unwrap();
    let mut table = Table::new(schema.clone());
    for (pk, text) in rows {
        let row = Row::new(&schema, vec![Value::Int(*pk), Value::Text((*text).into())], RowVersion::initial()).unwrap();
        table.put_row(row).unwrap();
    }
    let mut sim = Simulation::new(Network::new(LinkParams::default()), SimConfig::default());
    for id in names {
        let mut site = Site::new(*id);
        site.create_table(table.clone()).unwrap();
        let mut g = MasterGroup::new("g", ["table1".to_string()]);
        g.members = names.iter().map(|n| SiteId::from(*n)).collect();
        site.add_group(g).unwrap();
        sim.add_site(site).unwrap();
    }
    sim
}

fn sql(sim: &mut Simulation, tick: u64, site: &str, text: &str) {
    sim.schedule(tick, Action::ClientStatement { site: site.into(), stmt: parse(text).unwrap() });
}

fn only_kind(sim: &Simulation, kind: ConflictKind) -> Result<u64, String> {
    let m = sim.metrics();
    let n = m.conflicts(kind);
    ensure(n > 0 && n == m.total_conflicts(), || format!("expected only {} conflicts, got {:?}", kind.name(), m.conflicts_by_kind))?;
    ensure(sim.sites().all(|s| s.select_error_queue().is_empty()), || "error queue not empty".into())?;
    Ok(n)
}

fn row_everywhere(sim: &Simulation, pk: i64) -> Vec<Option<Vec<Value>>> {
    sim.sites().map(|s| s.table("table1").unwrap().get(pk).map(|r| r.values.clone())).collect()
}

fn ac7_conflict_taxonomy() -> Outcome {
    let mut details = Vec::new();

    let mut sim = two_site_sim(&[(1, "Text1")], &["a", "b"]);
    sql(&mut sim, 5, "a", "UPDATE table1 SET field_2 = 'from a' WHERE field_1 = 1");
    sql(&mut sim, 5, "b", "UPDATE table1 SET field_2 = 'from b' WHERE field_1 = 1");
    ensure(sim.run_to_quiescence(10_000), || "update: no convergence".into())?;
    let n = only_kind(&sim, ConflictKind::Update)?;
    let want = Some(vec![Value::Int(1), Value::Text("from b".into())]);
    ensure(row_everywhere(&sim, 1).iter().all(|r| *r == want), || "update: winner not installed".into())?;
    details.push(format!("update={n}"));

    let mut sim = two_site_sim(&[], &["a", "b"]);
    sql(&mut sim, 5, "a", "INSERT INTO table1 (field_1, field_2) VALUES (9, 'a')");
    sql(&mut sim, 5, "b", "INSERT INTO table1 (field_1, field_2) VALUES (9, 'b')");
    ensure(sim.run_to_quiescence(10_000), || "uniqueness: no convergence".into())?;
    let n = only_kind(&sim, ConflictKind::Uniqueness)?;
    let want = Some(vec![Value::Int(9), Value::Text("b".into())]);
    ensure(row_everywhere(&sim, 9).iter().all(|r| *r == want), || "uniqueness: winner not installed".into())?;
    details.push(format!("uniqueness={n}"));

    let mut sim = two_site_sim(&[(1, "Text1")], &["a", "b"]);
    sql(&mut sim, 5, "a", "DELETE FROM table1 WHERE field_1 = 1");
    sql(&mut sim, 5, "b", "UPDATE table1 SET field_2 = 'kept' WHERE field_1 = 1");
    ensure(sim.run_to_quiescence(10_000), || "delete: no convergence".into())?;
    let n = only_kind(&sim, ConflictKind::Delete)?;
    let want = Some(vec![Value::Int(1), Value::Text("kept".into())]);
    ensure(row_everywhere(&sim, 1).iter().all(|r| *r == want), || "delete: winner not installed".into())?;
    details.push(format!("delete={n}"));

    let scn = load("ordering_partition.scn");
    let mut sim = scn.build(None).map_err(|e| e.to_string())?;
    ensure(sim.run_to_quiescence(scn.max_ticks), || "ordering: no convergence".into())?;
    let n = only_kind(&sim, ConflictKind::Ordering)?;
    let want = Some(vec![Value::Int(1), Value::Text("Text1".into()), Value::Int(102)]);
    let rows: Vec<_> = sim.sites().map(|s| s.table("table1").unwrap().get(1).map(|r| r.values.clone())).collect();
    ensure(rows.iter().all(|r| *r == want), || format!("ordering: final rows {rows:?}"))?;
    details.push(format!("ordering={n}"));

    Ok(details.join(", "))
}

fn ac8_error_queue() -> Outcome {
    let scn = load("ordering_partition.scn");
    let mut sim = scn.build(None).map_err(|e| e.to_string())?;
    sim.run_until(150);
    let a = sim.site(&"a".into()).unwrap();
    let queue = a.select_error_queue();
    ensure(queue.len() == 1, || format!("expected 1 entry at a before reconcile, found {}", queue.len()))?;
    let entry = &queue[0];
    ensure(entry.conflict == ConflictKind::Ordering, || format!("entry is {:?}", entry.conflict))?;
    ensure(entry.txn.id.origin.as_str() == "c", || "entry should be c's update".into())?;
    let id = entry.txn.id.clone();
    ensure(sim.run_to_quiescence(scn.max_ticks), || "no convergence".into())?;
    let after = sim.site(&"a".into()).unwrap().select_error_queue().len();
    ensure(after == 0, || format!("{after} entries left"))?;
    Ok(format!("entry {id} (ordering) listed at tick 150, queue empty after reconcile"))
}

fn random_engine_run(seed: u64, disjoint: bool) -> Result<(bool, u64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = ["a", "b", "c"];
    let mut sim = two_site_sim(&[(1, "x"), (2, "y"), (3, "z")], &ids);
    let stop = 2000;
    let spec = WorkloadSpec { seed, rate: 15, stop, pk_lo: 1, pk_hi: 60, disjoint, ..WorkloadSpec::default() };
    let schema = sim.site(&"a".into()).unwrap().table("table1").unwrap().schema().clone();
    let sites: Vec<SiteId> = ids.iter().map(|s| SiteId::from(*s)).collect();
    let stream = generate_workload(&spec, &sites, &[schema]);
    sim.schedule_workload(stream);
    for _ in 0..rng.gen_range(1..=3) {
        let pair = [(0, 1), (0, 2), (1, 2)][rng.gen_range(0..3)];
        let from = rng.gen_range(0..stop);
        let to = from + rng.gen_range(20..400);
        sim.partition(PartitionWindow { a: ids[pair.0].into(), b: ids[pair.1].into(), from_tick: from, to_tick: to });
    }
    let ok = sim.run_to_quiescence(50_000);
    let sites: Vec<&Site> = sim.sites().collect();
    Ok((ok && check_convergence(&sites, "g"), sim.metrics().total_conflicts()))
}

fn ac9_engine_convergence() -> Outcome {
    let mut conflicts = 0;
    for seed in 0..20 {
        let (ok, c) = random_engine_run(seed, false)?;
        ensure(ok, || format!("seed {seed}: not converged"))?;
        conflicts += c;
    }
    for seed in 0..20 {
        let (ok, c) = random_engine_run(seed, true)?;
        ensure(ok, || format!("disjoint seed {seed}: not converged"))?;
        ensure(c == 0, || format!("disjoint seed {seed}: {c} conflicts"))?;
    }
    Ok(format!("20 overlapping seeds converged ({conflicts} conflicts resolved); 20 disjoint seeds had 0 conflicts"))
}

fn ac10_parser_round_trip() -> Outcome {
    let scn = load("zero_downtime.scn");
    let schemas: Vec<TableSchema> = scn.tables.iter().map(|t| t.schema.clone()).collect();
    let sites: Vec<SiteId> = ["a", "b", "c", "d", "e"].into_iter().map(SiteId::from).collect();
    let spec = WorkloadSpec { seed: 99, rate: 20, stop: 10_000, null_percent: 20, ..WorkloadSpec::default() };
    let stream = generate_workload(&spec, &sites, &schemas);
    ensure(stream.len() >= 10_000, || format!("only {} statements", stream.len()))?;
    for c in stream.iter().take(10_000) {
        let text = render(&c.stmt);
        let back = parse(&text).map_err(|e| format!("`{text}`: {e}"))?;
        ensure(back == c.stmt, || format!("`{text}` did not round-trip"))?;
    }
    match parse("SELECT * FROM table1").map_err(|e| e.to_string())? {
        Statement::Select(s) if s.table == "table1" && s.projection == Projection::Star && s.predicate.is_empty() => {}
        other => return Err(format!("unexpected AST {other:?}")),
    }
    Ok("10000 statements round-trip; SELECT * FROM table1 is a star select".into())
}

fn ac11_determinism() -> Outcome {
    let mut checked = Vec::new();
    for name in ["minimal.scn", "zero_downtime.scn", "online_under_load.scn", "ordering_partition.scn"] {
        let scn = load(name);
        let a = metrics_report(&scn.run().map_err(|e| e.to_string())?);
        let b = metrics_report(&scn.run().map_err(|e| e.to_string())?);
        ensure(a == b, || format!("{name}: reports differ"))?;
        checked.push(name);
    }
    for name in ["equivalence.scn", "calibrated_compare.scn"] {
        let scn = load(name);
        let a = comparison_report(&compare(&scn).map_err(|e| e.to_string())?);
        let b = comparison_report(&compare(&scn).map_err(|e| e.to_string())?);
        ensure(a == b, || format!("{name}: comparisons differ"))?;
        checked.push(name);
    }
    Ok(format!("byte-identical reports for {}", checked.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("overlay transparency", ac1_overlay_transparency),
        ("replay equivalence", ac2_replay_equivalence),
        ("zero-downtime guarantee", ac3_zero_downtime),
        ("quiesce enforcement", ac4_quiesce_enforcement),
        ("downtime ordering and calibrated ratio", ac5_calibrated_ratio),
        ("method equivalence", ac6_method_equivalence),
        ("conflict taxonomy", ac7_conflict_taxonomy),
        ("error-queue semantics", ac8_error_queue),
        ("engine convergence", ac9_engine_convergence),
        ("parser round-trip", ac10_parser_round_trip),
        ("determinism", ac11_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failures += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
