//! Fixed-order `key: value` reports for single runs and method comparisons.

use std::fmt::Write;
use std::thread;

use crate::engine::ConflictKind;
use crate::instantiate::Method;
use crate::scenario::{RunOutcome, Scenario, ScenarioError};

fn opt(v: Option<u64>) -> String {
    v.map_or_else(|| "none".to_owned(), |t| t.to_string())
}

/// The `== METRICS ==` block for one run.
pub fn metrics_report(out: &RunOutcome) -> String {
    let m = &out.metrics;
    let mut s = String::new();
    let mut line = |k: &str, v: &dyn std::fmt::Display| {
        writeln!(s, "{k}: {v}").expect("write to string");
    };
    line("seed", &out.seed);
    line("converged", &out.converged);
    line("convergence_tick", &opt(m.convergence_tick));
    line("end_tick", &out.end_tick);
    line("sites", &out.sites.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","));
    line("downtime_ticks", &m.downtime_ticks);
    line("rejected_dml", &m.rejected_dml);
    line("statements_executed", &m.statements_executed);
    line("client_errors", &m.client_errors);
    for kind in ConflictKind::ALL {
        line(&format!("conflicts.{}", kind.name()), &m.conflicts(kind));
    }
    line("reconcile_resolved", &m.reconcile_resolved);
    line("txns_sent", &m.txns_sent);
    line("deliveries", &m.deliveries);
    line("bytes_transferred", &m.bytes_transferred);
    for r in &out.reports {
        let p = format!("addition.{}", r.new_site);
        line(&format!("{p}.method"), &r.method);
        line(&format!("{p}.start_tick"), &r.start_tick);
        line(&format!("{p}.end_tick"), &r.end_tick);
        line(&format!("{p}.downtime_ticks"), &r.downtime_ticks);
        line(&format!("{p}.rejected_dml"), &r.rejected_dml);
        line(&format!("{p}.snapshot_bytes"), &r.snapshot_bytes);
        line(&format!("{p}.conflicts_during"), &r.conflicts_during);
        line(&format!("{p}.replayed_statements"), &r.replayed_statements);
    }
    for (plan, e) in &out.failed_additions {
        line(&format!("addition_failed.{}", plan.new_site), e);
    }
    for (table, n) in &out.final_rows {
        line(&format!("rows.{table}"), n);
    }
    format!("== METRICS ==\n{s}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    /// One run per method, in `Method::ALL` order.
    pub runs: Vec<(Method, RunOutcome)>,
}

impl Comparison {
    pub fn get(&self, method: Method) -> &RunOutcome {
        &self.runs.iter().find(|(m, _)| *m == method).expect("every method runs").1
    }

    /// downtime(online) / downtime(offline); `None` when offline had none.
    pub fn online_offline_ratio(&self) -> Option<f64> {
        let on = self.get(Method::Online).metrics.downtime_ticks;
        let off = self.get(Method::Offline).metrics.downtime_ticks;
        (off > 0).then(|| on as f64 / off as f64)
    }

    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|(_, r)| r.converged)
    }
}

/// Runs the scenario once per method on parallel threads.
pub fn compare(scn: &Scenario) -> Result<Comparison, ScenarioError> {
    scn.check_comparable()?;
    let results: Vec<Result<RunOutcome, ScenarioError>> = thread::scope(|s| {
        let handles: Vec<_> = Method::ALL.iter().map(|m| s.spawn(move || scn.run_with(Some(*m)))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let runs = Method::ALL.iter().copied().zip(results).map(|(m, r)| r.map(|r| (m, r))).collect::<Result<_, _>>()?;
    Ok(Comparison { runs })
}

/// The `== COMPARISON ==` block.
pub fn comparison_report(c: &Comparison) -> String {
    let mut s = String::from("== COMPARISON ==\n");
    for (m, r) in &c.runs {
        let mm = &r.metrics;
        writeln!(
            s,
            "{m}: downtime_ticks={} rejected_dml={} convergence_tick={} bytes_transferred={} conflicts={} final_rows={} converged={}",
            mm.downtime_ticks,
            mm.rejected_dml,
            opt(mm.convergence_tick),
            mm.bytes_transferred,
            mm.total_conflicts(),
            r.total_rows(),
            r.converged
        )
        .expect("write to string");
    }
    let ratio = c.online_offline_ratio().map_or_else(|| "undefined".to_owned(), |r| format!("{r:.2}"));
    writeln!(s, "downtime_ratio.online_offline: {ratio}").expect("write to string");
    s
}

/// Parses `key: value` lines of a report, skipping headers.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.starts_with("=="))
        .filter_map(|l| l.split_once(": ").map(|(k, v)| (k.to_owned(), v.to_owned())))
        .collect()
}
