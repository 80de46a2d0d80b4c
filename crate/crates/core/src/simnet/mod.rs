//! Deterministic discrete-event simulation of a set of master sites.
//!
//! One [`Simulation`] owns every [`Site`], the [`Network`] between them and a
//! priority queue of [`SimEvent`]s ordered by `(due_tick, seq)`. Nothing here
//! reads the wall clock or an unseeded RNG: the same inputs always produce the
//! same event trace, tables and [`Metrics`].

pub mod network;
pub mod workload;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::engine::{ConflictKind, DeferredTxn, EngineError, Receipt, Site, TxnId};
use crate::instantiate::{AdditionPlan, AdditionProcess, AdditionReport};
use crate::minisql::Statement;
use crate::relmodel::SiteId;

pub use network::{transfer_cost, CostModel, Link, LinkParams, Network, PartitionWindow, SerializedSize};
pub use workload::{generate_workload, ClientStatement, OpMix, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("link {from} -> {to} is down")]
    LinkDown { from: SiteId, to: SiteId },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("unknown site {0}")]
    UnknownSite(SiteId),
    #[error("site {0} already exists")]
    DuplicateSite(SiteId),
    #[error("invalid addition plan: {0}")]
    InvalidPlan(String),
    #[error("simulation ran out of events: {0}")]
    Stalled(String),
}

pub type SimResult<T> = Result<T, SimError>;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// `link_seq` numbers the transactions sent on one directed link.
    DeliverTxn { from: SiteId, to: SiteId, txn: DeferredTxn, bytes: u64, link_seq: u64 },
    ClientStatement { site: SiteId, stmt: Statement },
    StartAddition(AdditionPlan),
    /// Continuation of an in-progress site addition.
    AdditionStep(usize),
    Partition(PartitionWindow),
    /// Periodic reconcile job; reschedules itself until convergence.
    ReconcilePass,
    /// One-off reconcile pass requested by a scenario.
    ReconcileNow,
    StopWorkload,
    Custom(String),
}

impl Action {
    /// Foreground events are the ones a scenario schedules; the run is not
    /// quiescent while any remain.
    fn is_foreground(&self) -> bool {
        !matches!(self, Action::DeliverTxn { .. } | Action::AdditionStep(_) | Action::ReconcilePass)
    }

    fn describe(&self) -> String {
        match self {
            Action::DeliverTxn { from, to, txn, bytes, .. } => format!("deliver {} {from}->{to} {bytes}B", txn.id),
            Action::ClientStatement { site, stmt } => format!("client {site} {stmt}"),
            Action::StartAddition(p) => format!("start_addition {} via {} from {}", p.new_site, p.method, p.source_site),
            Action::AdditionStep(i) => format!("addition_step {i}"),
            Action::Partition(w) => format!("partition {}<->{} [{}, {})", w.a, w.b, w.from_tick, w.to_tick),
            Action::ReconcilePass => "reconcile".into(),
            Action::ReconcileNow => "reconcile_now".into(),
            Action::StopWorkload => "stop_workload".into(),
            Action::Custom(s) => format!("custom {s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub due_tick: u64,
    pub seq: u64,
    pub action: Action,
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.due_tick, self.seq).cmp(&(other.due_tick, other.seq))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub downtime_ticks: u64,
    pub rejected_dml: u64,
    pub conflicts_by_kind: BTreeMap<ConflictKind, u64>,
    pub convergence_tick: Option<u64>,
    pub bytes_transferred: u64,
    pub statements_executed: u64,
    /// Client statements that failed for reasons other than quiescing.
    pub client_errors: u64,
    /// Deferred transactions put on the network, one per destination.
    pub txns_sent: u64,
    pub deliveries: u64,
    pub reconcile_resolved: u64,
}

impl Metrics {
    pub fn conflicts(&self, kind: ConflictKind) -> u64 {
        self.conflicts_by_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn total_conflicts(&self) -> u64 {
        self.conflicts_by_kind.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientOutcome {
    Ok { rows: usize },
    Rejected,
    Failed(String),
}

/// One client statement as observed by the client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRecord {
    pub tick: u64,
    pub site: SiteId,
    pub dml: bool,
    pub outcome: ClientOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// Period of the background reconciliation job; `None` disables it.
    pub reconcile_every: Option<u64>,
    pub costs: CostModel,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { reconcile_every: Some(10), costs: CostModel::default(), trace: false }
    }
}

#[derive(Debug, Clone, Default)]
struct LinkState {
    last_arrival: u64,
    next_send: u64,
    next_deliver: u64,
    /// Arrived ahead of an earlier transaction that is still in transit.
    waiting: BTreeMap<u64, (DeferredTxn, u64)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct DowntimeTracker {
    down_since: Option<u64>,
    total: u64,
}

impl DowntimeTracker {
    /// Closed-interval total as of `now`.
    pub(crate) fn total_at(&self, now: u64) -> u64 {
        self.total + self.down_since.map_or(0, |s| now - s)
    }
}

pub struct Simulation {
    now: u64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<SimEvent>>,
    pub(crate) sites: BTreeMap<SiteId, Site>,
    pub(crate) network: Network,
    links: BTreeMap<(SiteId, SiteId), LinkState>,
    in_flight: BTreeMap<String, usize>,
    foreground: usize,
    downtime: BTreeMap<String, DowntimeTracker>,
    pub(crate) additions: Vec<AdditionProcess>,
    pub(crate) failed_additions: Vec<(AdditionPlan, String)>,
    pub(crate) metrics: Metrics,
    client_log: Vec<ClientRecord>,
    trace: Vec<String>,
    pub(crate) config: SimConfig,
    converged: bool,
}

impl Simulation {
    pub fn new(network: Network, config: SimConfig) -> Self {
        let mut sim = Simulation {
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            sites: BTreeMap::new(),
            network,
            links: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            foreground: 0,
            downtime: BTreeMap::new(),
            additions: Vec::new(),
            failed_additions: Vec::new(),
            metrics: Metrics::default(),
            client_log: Vec::new(),
            trace: Vec::new(),
            config,
            converged: false,
        };
        if let Some(r) = config.reconcile_every {
            sim.schedule(r.max(1), Action::ReconcilePass);
        }
        sim
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn add_site(&mut self, site: Site) -> SimResult<()> {
        if self.sites.contains_key(site.id()) {
            return Err(SimError::DuplicateSite(site.id().clone()));
        }
        self.sites.insert(site.id().clone(), site);
        Ok(())
    }

    pub fn site(&self, id: &SiteId) -> Option<&Site> {
        self.sites.get(id)
    }

    pub fn site_mut(&mut self, id: &SiteId) -> Option<&mut Site> {
        self.sites.get_mut(id)
    }

    pub fn sites(&self) -> impl Iterator<Item = &Site> {
        self.sites.values()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn client_log(&self) -> &[ClientRecord] {
        &self.client_log
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    pub fn reports(&self) -> Vec<AdditionReport> {
        self.additions.iter().filter_map(|a| a.finished_report()).collect()
    }

    pub fn failed_additions(&self) -> &[(AdditionPlan, String)] {
        &self.failed_additions
    }

    pub fn schedule(&mut self, due_tick: u64, action: Action) -> u64 {
        let due_tick = due_tick.max(self.now);
        let seq = self.next_seq;
        self.next_seq += 1;
        if action.is_foreground() {
            self.foreground += 1;
        }
        self.queue.push(Reverse(SimEvent { due_tick, seq, action }));
        seq
    }

    pub fn schedule_workload(&mut self, stream: Vec<ClientStatement>) {
        for c in stream {
            self.schedule(c.tick, Action::ClientStatement { site: c.site, stmt: c.stmt });
        }
    }

    pub fn partition(&mut self, window: PartitionWindow) {
        let at = window.from_tick;
        self.schedule(at, Action::Partition(window));
    }

    pub fn peek_due(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(e)| e.due_tick)
    }

    /// Executes the next event. Returns false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(Reverse(ev)) = self.queue.pop() else {
            return false;
        };
        debug_assert!(ev.due_tick >= self.now, "clock went backwards");
        self.now = ev.due_tick;
        if ev.action.is_foreground() {
            self.foreground -= 1;
        }
        if self.config.trace {
            self.trace.push(format!("{} #{} {}", ev.due_tick, ev.seq, ev.action.describe()));
        }
        self.execute(ev.action);
        true
    }

    /// Executes every event due at or before `tick`, then advances the clock
    /// to `tick`. Returns the number of events executed.
    pub fn run_until(&mut self, tick: u64) -> usize {
        let mut n = 0;
        while self.peek_due().is_some_and(|d| d <= tick) {
            self.step();
            n += 1;
        }
        self.now = self.now.max(tick);
        n
    }

    /// Runs until the sites converge or the next event lies beyond
    /// `max_ticks`. Returns whether convergence was reached.
    pub fn run_to_quiescence(&mut self, max_ticks: u64) -> bool {
        loop {
            if self.converged {
                return true;
            }
            match self.peek_due() {
                Some(due) if due <= max_ticks => {
                    self.step();
                }
                Some(_) => {
                    self.now = self.now.max(max_ticks);
                    return false;
                }
                None => {
                    if self.converged_now() {
                        self.mark_converged();
                    }
                    return self.converged;
                }
            }
        }
    }

    fn execute(&mut self, action: Action) {
        match action {
            Action::DeliverTxn { from, to, txn, bytes, link_seq } => self.deliver(from, to, txn, bytes, link_seq),
            Action::ClientStatement { site, stmt } => self.client_statement(&site, &stmt),
            Action::StartAddition(plan) => {
                if let Err(e) = self.start_addition(plan.clone()) {
                    self.failed_additions.push((plan, e.to_string()));
                }
            }
            Action::AdditionStep(idx) => self.advance_addition(idx),
            Action::Partition(w) => self.network.add_partition(w),
            Action::ReconcilePass => {
                let resolved = self.reconcile_all();
                if resolved == 0 && self.converged_now() {
                    self.mark_converged();
                } else if let Some(r) = self.config.reconcile_every {
                    self.schedule(self.now + r.max(1), Action::ReconcilePass);
                }
            }
            Action::ReconcileNow => {
                self.reconcile_all();
            }
            Action::StopWorkload | Action::Custom(_) => {}
        }
    }

    fn mark_converged(&mut self) {
        self.converged = true;
        self.metrics.convergence_tick = Some(self.now);
        self.close_downtime();
    }

    fn close_downtime(&mut self) {
        self.metrics.downtime_ticks = self.downtime.values().map(|t| t.total_at(self.now)).sum();
    }

    fn client_statement(&mut self, site_id: &SiteId, stmt: &Statement) {
        let now = self.now;
        let Some(site) = self.sites.get_mut(site_id) else {
            self.metrics.client_errors += 1;
            self.client_log.push(ClientRecord {
                tick: now,
                site: site_id.clone(),
                dml: stmt.is_dml(),
                outcome: ClientOutcome::Failed(format!("unknown site {site_id}")),
            });
            return;
        };
        let outcome = match site.execute(stmt, now) {
            Ok(out) => {
                self.metrics.statements_executed += 1;
                ClientOutcome::Ok { rows: out.rows_affected() }
            }
            Err(EngineError::DmlRejectedQuiesced { .. }) => {
                self.metrics.rejected_dml += 1;
                ClientOutcome::Rejected
            }
            Err(e) => {
                self.metrics.client_errors += 1;
                ClientOutcome::Failed(e.to_string())
            }
        };
        self.client_log.push(ClientRecord { tick: now, site: site_id.clone(), dml: stmt.is_dml(), outcome });
        self.flush_outbound(site_id);
    }

    /// Moves a site's outbound queues onto the network. Per-link delivery is
    /// FIFO: a transaction never arrives before one sent earlier on the same
    /// link.
    pub(crate) fn flush_outbound(&mut self, site_id: &SiteId) -> Vec<(TxnId, SiteId)> {
        let Some(site) = self.sites.get_mut(site_id) else {
            return Vec::new();
        };
        let mut sent = Vec::new();
        for (dest, txns) in site.drain_outbound() {
            for txn in txns {
                let bytes = txn.serialized_size();
                let cost = self.network.nominal_cost(site_id, &dest, bytes);
                let link = self.links.entry((site_id.clone(), dest.clone())).or_default();
                let arrival = (self.now + cost).max(link.last_arrival);
                link.last_arrival = arrival;
                let link_seq = link.next_send;
                link.next_send += 1;
                *self.in_flight.entry(txn.group.clone()).or_default() += 1;
                self.metrics.txns_sent += 1;
                sent.push((txn.id.clone(), dest.clone()));
                let action = Action::DeliverTxn { from: site_id.clone(), to: dest.clone(), txn, bytes, link_seq };
                self.schedule(arrival, action);
            }
        }
        sent
    }

    /// A transaction reaching the far end of a link. While the link is down
    /// it is retried when the link comes back; once through, it waits for
    /// any earlier transaction on the same link that is still being retried.
    fn deliver(&mut self, from: SiteId, to: SiteId, txn: DeferredTxn, bytes: u64, link_seq: u64) {
        if !self.network.is_up(&from, &to, self.now) {
            let retry = self.network.next_up(&from, &to, self.now);
            let link = self.links.entry((from.clone(), to.clone())).or_default();
            link.last_arrival = link.last_arrival.max(retry);
            self.schedule(retry, Action::DeliverTxn { from, to, txn, bytes, link_seq });
            return;
        }
        let link = self.links.entry((from, to.clone())).or_default();
        link.waiting.insert(link_seq, (txn, bytes));
        let mut ready = Vec::new();
        while let Some(next) = link.waiting.remove(&link.next_deliver) {
            ready.push(next);
            link.next_deliver += 1;
        }
        for (txn, bytes) in ready {
            self.apply_delivery(&to, txn, bytes);
        }
    }

    fn apply_delivery(&mut self, to: &SiteId, txn: DeferredTxn, bytes: u64) {
        if let Some(n) = self.in_flight.get_mut(&txn.group) {
            *n -= 1;
        }
        self.metrics.deliveries += 1;
        self.metrics.bytes_transferred += bytes;
        let key = (txn.id.clone(), to.clone());
        for a in &mut self.additions {
            a.delivered(&key);
        }
        let now = self.now;
        let site = self
            .sites
            .get_mut(to)
            .unwrap_or_else(|| panic!("delivery to unknown site {to}; members are registered only after creation"));
        if let Receipt::Conflicted(kind) = site.receive(txn, now) {
            self.record_conflict(kind);
        }
    }

    pub(crate) fn record_conflict(&mut self, kind: ConflictKind) {
        *self.metrics.conflicts_by_kind.entry(kind).or_default() += 1;
    }

    /// One reconcile pass at every site, in site order.
    pub fn reconcile_all(&mut self) -> usize {
        let now = self.now;
        let resolved: usize = self.sites.values_mut().map(|s| s.reconcile(now)).sum();
        self.metrics.reconcile_resolved += resolved as u64;
        resolved
    }

    /// Deliveries scheduled but not yet made for `group`.
    pub fn in_flight(&self, group: &str) -> usize {
        self.in_flight.get(group).copied().unwrap_or(0)
    }

    pub(crate) fn last_delivery_due(&self, group: &str) -> Option<u64> {
        self.queue
            .iter()
            .filter_map(|Reverse(e)| match &e.action {
                Action::DeliverTxn { txn, .. } if txn.group == group => Some(e.due_tick),
                _ => None,
            })
            .max()
    }

    pub fn group_names(&self) -> BTreeSet<String> {
        self.sites.values().flat_map(|s| s.groups().map(|g| g.name.clone())).collect()
    }

    /// Sites carrying a catalog entry for `group`.
    pub fn group_sites(&self, group: &str) -> Vec<SiteId> {
        self.sites.values().filter(|s| s.group(group).is_some()).map(|s| s.id().clone()).collect()
    }

    pub(crate) fn refresh_downtime(&mut self, group: &str) {
        let down = self
            .sites
            .values()
            .any(|s| s.group(group).is_some_and(|g| g.is_quiesced()) && !s.has_overlay(group));
        let now = self.now;
        let t = self.downtime.entry(group.to_owned()).or_default();
        match (down, t.down_since) {
            (true, None) => t.down_since = Some(now),
            (false, Some(since)) => {
                t.total += now - since;
                t.down_since = None;
            }
            _ => {}
        }
    }

    pub(crate) fn downtime_total(&self, group: &str) -> u64 {
        self.downtime.get(group).map_or(0, |t| t.total_at(self.now))
    }

    fn quiet(&self) -> bool {
        self.foreground == 0
            && self.additions.iter().all(AdditionProcess::is_done)
            && self.in_flight.values().all(|n| *n == 0)
    }

    /// Convergence as defined for whole simulations: nothing left to do and
    /// every group converged across all sites carrying it.
    pub fn converged_now(&self) -> bool {
        self.quiet()
            && self.group_names().iter().all(|g| {
                let sites: Vec<&Site> = self.sites.values().filter(|s| s.group(g).is_some()).collect();
                check_convergence(&sites, g)
            })
    }

    /// Current downtime totals, closed at the current tick.
    pub fn finish_metrics(&mut self) -> &Metrics {
        self.close_downtime();
        &self.metrics
    }
}

/// True iff no site has queued outbound or held transactions, every error
/// queue is at a reconcile fixed point, and every group table is equal
/// (values) across the given sites.
pub fn check_convergence(sites: &[&Site], group: &str) -> bool {
    if sites.iter().any(|s| !s.outbound_is_empty() || s.is_holding() || s.group(group).is_none()) {
        return false;
    }
    let fixed_point = sites.iter().all(|s| {
        s.select_error_queue().is_empty() || {
            let mut probe = (*s).clone();
            probe.reconcile(0) == 0
        }
    });
    if !fixed_point {
        return false;
    }
    let Some((first, rest)) = sites.split_first() else {
        return true;
    };
    let Ok(reference) = first.group_tables(group) else {
        return false;
    };
    rest.iter().all(|s| match s.group_tables(group) {
        Ok(tables) => {
            tables.len() == reference.len()
                && tables.iter().zip(&reference).all(|(a, b)| a.name() == b.name() && a.table_equal(b).unwrap_or(false))
        }
        Err(_) => false,
    })
}
