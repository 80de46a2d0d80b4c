//! Adding a master site to a running group: online copy, offline
//! export/import, and zero-downtime via overlays.
//!
//! Each addition is a small state machine driven by `AdditionStep` events so
//! client traffic, deliveries and partitions keep interleaving with it.
//!
//! | method | quiesced during | new site receives |
//! |---|---|---|
//! | online | drain, copy, install | snapshot, then normal traffic |
//! | offline | drain, export | held txns applied after import |
//! | zero | copy, install (overlays absorb DML) | snapshot, then overlay replays |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::engine::{ApplyOutcome, EngineError, ErrorEntry, Site, TxnId};
use crate::relmodel::{GroupState, MasterGroup, RowVersion, SiteId, Table};
use crate::simnet::network::table_size;
use crate::simnet::{Action, SimError, SimResult, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Online,
    Offline,
    ZeroDowntime,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Online, Method::Offline, Method::ZeroDowntime];

    pub fn name(self) -> &'static str {
        match self {
            Method::Online => "online",
            Method::Offline => "offline",
            Method::ZeroDowntime => "zero",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "online" => Ok(Method::Online),
            "offline" => Ok(Method::Offline),
            "zero" | "zero_downtime" | "zero-downtime" => Ok(Method::ZeroDowntime),
            other => Err(format!("unknown method '{other}' (expected online, offline or zero)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdditionPlan {
    pub method: Method,
    pub group_name: String,
    pub new_site: SiteId,
    pub source_site: SiteId,
}

impl AdditionPlan {
    pub fn new(method: Method, group: &str, new_site: &str, source: &str) -> Self {
        AdditionPlan {
            method,
            group_name: group.to_owned(),
            new_site: new_site.into(),
            source_site: source.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdditionReport {
    pub method: Method,
    pub new_site: SiteId,
    /// Ticks during which some member would have rejected DML for the group.
    pub downtime_ticks: u64,
    pub rejected_dml: u64,
    pub start_tick: u64,
    pub end_tick: u64,
    /// Tick at which the drain finished and the snapshot was taken.
    pub snapshot_tick: u64,
    pub snapshot_bytes: u64,
    /// All bytes moved during the addition: snapshot plus deliveries.
    pub bytes_transferred: u64,
    pub conflicts_during: u64,
    pub replayed_statements: usize,
}

#[derive(Debug, Clone)]
struct GroupSnapshot {
    group: MasterGroup,
    tables: Vec<(Table, BTreeMap<i64, RowVersion>)>,
    errors: Vec<ErrorEntry>,
    bytes: u64,
}

impl GroupSnapshot {
    fn take(source: &Site, group: &str) -> SimResult<Self> {
        let g = source.group(group).ok_or_else(|| EngineError::UnknownGroup(group.to_owned()))?.clone();
        let tables: Vec<(Table, BTreeMap<i64, RowVersion>)> = source
            .group_tables(group)?
            .into_iter()
            .map(|t| (t.clone(), source.tombstones_for(t.name())))
            .collect();
        let bytes = tables.iter().map(|(t, _)| table_size(t)).sum();
        Ok(GroupSnapshot { group: g, tables, errors: source.group_error_entries(group), bytes })
    }

    fn table_count(&self) -> usize {
        self.tables.len()
    }

    /// Materializes the snapshot as a fresh site.
    fn install(&self, site: &mut Site, members: BTreeSet<SiteId>, state: GroupState) {
        for (t, tombs) in &self.tables {
            site.install_table(t.clone(), tombs.clone());
        }
        site.install_error_entries(self.errors.clone());
        let mut g = self.group.clone();
        g.members = members;
        g.state = state;
        site.install_group(g);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Draining,
    Installing,
    Exporting,
    Importing,
    Reconciling { idle_passes: u32 },
    Done,
}

#[derive(Debug, Clone)]
pub(crate) struct AdditionProcess {
    plan: AdditionPlan,
    phase: Phase,
    snapshot: Option<GroupSnapshot>,
    awaiting: BTreeSet<(TxnId, SiteId)>,
    base_rejected: u64,
    base_conflicts: u64,
    base_downtime: u64,
    base_bytes: u64,
    report: AdditionReport,
}

impl AdditionProcess {
    pub(crate) fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub(crate) fn finished_report(&self) -> Option<AdditionReport> {
        self.is_done().then(|| self.report.clone())
    }

    pub(crate) fn delivered(&mut self, key: &(TxnId, SiteId)) {
        self.awaiting.remove(key);
    }
}

impl Simulation {
    /// Sites whose catalog holds `group`, excluding a site still being built.
    fn members(&self, group: &str) -> Vec<SiteId> {
        self.group_sites(group)
    }

    fn group_busy(&self, group: &str) -> bool {
        self.in_flight(group) > 0
            || self.members(group).iter().any(|id| !self.sites[id].outbound_is_empty())
    }

    /// Quiesces `group` at every site carrying it, starting now.
    fn quiesce_group(&mut self, group: &str) -> SimResult<()> {
        let members = self.members(group);
        if members.is_empty() {
            return Err(EngineError::UnknownGroup(group.to_owned()).into());
        }
        if members.iter().any(|id| self.sites[id].group(group).is_some_and(MasterGroup::is_quiesced)) {
            return Err(EngineError::AlreadyQuiesced(group.to_owned()).into());
        }
        for id in &members {
            self.sites.get_mut(id).expect("member").group_mut(group)?.state = GroupState::Quiesced;
        }
        self.refresh_downtime(group);
        Ok(())
    }

    fn resume_group(&mut self, group: &str) -> SimResult<()> {
        let members = self.members(group);
        if members.is_empty() {
            return Err(EngineError::UnknownGroup(group.to_owned()).into());
        }
        if !members.iter().all(|id| self.sites[id].group(group).is_some_and(MasterGroup::is_quiesced)) {
            return Err(EngineError::NotQuiesced(group.to_owned()).into());
        }
        for id in &members {
            self.sites.get_mut(id).expect("member").group_mut(group)?.state = GroupState::Normal;
        }
        self.refresh_downtime(group);
        Ok(())
    }

    /// Rejects DML for `group` from now on, then runs the simulation until
    /// every deferred transaction of the group has been delivered. Returns
    /// the tick at which the group became fully quiesced.
    pub fn suspend_master_activity(&mut self, group: &str) -> SimResult<u64> {
        self.quiesce_group(group)?;
        while self.group_busy(group) {
            for id in self.members(group) {
                self.flush_outbound(&id);
            }
            if !self.step() {
                return Err(SimError::Stalled(format!("draining group {group}")));
            }
        }
        Ok(self.now())
    }

    pub fn resume_master_activity(&mut self, group: &str) -> SimResult<u64> {
        self.resume_group(group)?;
        Ok(self.now())
    }

    /// Runs a complete addition, stepping the simulation until it finishes.
    pub fn add_master(&mut self, plan: AdditionPlan) -> SimResult<AdditionReport> {
        let idx = self.start_addition(plan)?;
        while !self.additions[idx].is_done() {
            if !self.step() {
                return Err(SimError::Stalled("site addition".into()));
            }
        }
        Ok(self.additions[idx].report.clone())
    }

    pub fn add_master_online(&mut self, plan: AdditionPlan) -> SimResult<AdditionReport> {
        self.add_master_as(Method::Online, plan)
    }

    pub fn add_master_offline(&mut self, plan: AdditionPlan) -> SimResult<AdditionReport> {
        self.add_master_as(Method::Offline, plan)
    }

    pub fn add_master_zero_downtime(&mut self, plan: AdditionPlan) -> SimResult<AdditionReport> {
        self.add_master_as(Method::ZeroDowntime, plan)
    }

    fn add_master_as(&mut self, method: Method, plan: AdditionPlan) -> SimResult<AdditionReport> {
        if plan.method != method {
            return Err(SimError::InvalidPlan(format!("plan method is {}, expected {method}", plan.method)));
        }
        self.add_master(plan)
    }

    fn validate_plan(&self, plan: &AdditionPlan) -> SimResult<()> {
        let group = &plan.group_name;
        let source = self.sites.get(&plan.source_site).ok_or_else(|| SimError::UnknownSite(plan.source_site.clone()))?;
        let g = source.group(group).ok_or_else(|| EngineError::UnknownGroup(group.clone()))?;
        if !g.members.contains(&plan.source_site) {
            return Err(SimError::InvalidPlan(format!("{} is not a member of {group}", plan.source_site)));
        }
        if self.sites.contains_key(&plan.new_site) || g.members.contains(&plan.new_site) {
            return Err(SimError::InvalidPlan(format!("{} already exists", plan.new_site)));
        }
        if self.additions.iter().any(|a| !a.is_done() && a.plan.group_name == *group) {
            return Err(SimError::InvalidPlan(format!("an addition to {group} is already in progress")));
        }
        for id in self.members(group) {
            let s = &self.sites[&id];
            if s.has_overlay(group) {
                return Err(EngineError::OverlayAlreadyActive(group.clone()).into());
            }
            if s.group(group).is_some_and(MasterGroup::is_quiesced) {
                return Err(EngineError::AlreadyQuiesced(group.clone()).into());
            }
        }
        Ok(())
    }

    pub(crate) fn start_addition(&mut self, plan: AdditionPlan) -> SimResult<usize> {
        self.validate_plan(&plan)?;
        let group = plan.group_name.clone();
        match plan.method {
            Method::Online | Method::Offline => self.quiesce_group(&group)?,
            Method::ZeroDowntime => {
                for id in self.members(&group) {
                    self.sites.get_mut(&id).expect("member").begin_overlay(&group)?;
                }
            }
        }
        let now = self.now();
        let idx = self.additions.len();
        self.additions.push(AdditionProcess {
            report: AdditionReport {
                method: plan.method,
                new_site: plan.new_site.clone(),
                downtime_ticks: 0,
                rejected_dml: 0,
                start_tick: now,
                end_tick: now,
                snapshot_tick: now,
                snapshot_bytes: 0,
                bytes_transferred: 0,
                conflicts_during: 0,
                replayed_statements: 0,
            },
            plan,
            phase: Phase::Draining,
            snapshot: None,
            awaiting: BTreeSet::new(),
            base_rejected: self.metrics.rejected_dml,
            base_conflicts: self.metrics.total_conflicts(),
            base_downtime: self.downtime_total(&group),
            base_bytes: self.metrics.bytes_transferred,
        });
        self.schedule(now, Action::AdditionStep(idx));
        Ok(idx)
    }

    pub(crate) fn advance_addition(&mut self, idx: usize) {
        if let Err(e) = self.try_advance(idx) {
            // Steps only fail on internal inconsistencies; surface them loudly.
            panic!("site addition {idx} failed: {e}");
        }
    }

    fn try_advance(&mut self, idx: usize) -> SimResult<()> {
        let plan = self.additions[idx].plan.clone();
        let group = plan.group_name.as_str();
        let now = self.now();
        match self.additions[idx].phase {
            Phase::Draining => {
                if self.group_busy(group) {
                    for id in self.members(group) {
                        self.flush_outbound(&id);
                    }
                    let next = self.last_delivery_due(group).unwrap_or(now).max(now + 1);
                    self.schedule(next, Action::AdditionStep(idx));
                    return Ok(());
                }
                if plan.method == Method::ZeroDowntime {
                    self.quiesce_group(group)?;
                }
                let source = &self.sites[&plan.source_site];
                let snap = GroupSnapshot::take(source, group)?;
                let (bytes, tables) = (snap.bytes, snap.table_count());
                let proc = &mut self.additions[idx];
                proc.report.snapshot_tick = now;
                proc.report.snapshot_bytes = bytes;
                proc.snapshot = Some(snap);
                let copy = self.network.nominal_cost(&plan.source_site, &plan.new_site, bytes);
                let (phase, due) = match plan.method {
                    Method::Online | Method::ZeroDowntime => {
                        (Phase::Installing, now + copy + self.config.costs.install_ticks(bytes, tables))
                    }
                    Method::Offline => {
                        self.begin_instantiation(&plan)?;
                        (Phase::Exporting, now + self.config.costs.export_ticks(bytes, tables))
                    }
                };
                self.additions[idx].phase = phase;
                self.schedule(due, Action::AdditionStep(idx));
            }
            Phase::Installing => {
                let snap = self.additions[idx].snapshot.take().expect("snapshot taken");
                self.metrics.bytes_transferred += snap.bytes;
                let mut members: BTreeSet<SiteId> = self.members(group).into_iter().collect();
                members.insert(plan.new_site.clone());
                let mut site = Site::new(plan.new_site.clone());
                snap.install(&mut site, members, GroupState::Quiesced);
                for id in self.members(group) {
                    self.sites.get_mut(&id).expect("member").register_member(group, plan.new_site.clone())?;
                }
                self.sites.insert(plan.new_site.clone(), site);
                self.resume_group(group)?;
                match plan.method {
                    Method::Online => self.finish_addition(idx),
                    _ => {
                        self.finalize_overlays(idx)?;
                        let r = self.reconcile_period();
                        self.additions[idx].phase = Phase::Reconciling { idle_passes: 0 };
                        self.schedule(now + r, Action::AdditionStep(idx));
                    }
                }
            }
            Phase::Exporting => {
                self.resume_group(group)?;
                let snap = self.additions[idx].snapshot.as_ref().expect("snapshot taken");
                let (bytes, tables) = (snap.bytes, snap.table_count());
                let copy = self.network.nominal_cost(&plan.source_site, &plan.new_site, bytes);
                self.additions[idx].phase = Phase::Importing;
                self.schedule(now + copy + self.config.costs.import_ticks(bytes, tables), Action::AdditionStep(idx));
            }
            Phase::Importing => {
                let snap = self.additions[idx].snapshot.take().expect("snapshot taken");
                self.metrics.bytes_transferred += snap.bytes;
                let members = self.sites[&plan.source_site].group(group).expect("group").members.clone();
                let site = self.sites.get_mut(&plan.new_site).expect("new site created at begin_instantiation");
                snap.install(site, members, GroupState::Normal);
                let outcomes = site.release_held(now);
                for o in outcomes {
                    if let ApplyOutcome::Conflicted(e) = o {
                        self.record_conflict(e.conflict);
                    }
                }
                self.finish_addition(idx);
            }
            Phase::Reconciling { idle_passes } => {
                let resolved = self.reconcile_all();
                let idle = if resolved == 0 { idle_passes + 1 } else { 0 };
                let proc = &mut self.additions[idx];
                if proc.awaiting.is_empty() && idle >= 2 {
                    self.finish_addition(idx);
                } else {
                    proc.phase = Phase::Reconciling { idle_passes: if proc.awaiting.is_empty() { idle } else { 0 } };
                    let r = self.reconcile_period();
                    self.schedule(now + r, Action::AdditionStep(idx));
                }
            }
            Phase::Done => {}
        }
        Ok(())
    }

    fn reconcile_period(&self) -> u64 {
        self.config.reconcile_every.unwrap_or(10).max(1)
    }

    /// Creates the new site in holding mode and registers it everywhere, so
    /// members start queueing deferred transactions for it.
    fn begin_instantiation(&mut self, plan: &AdditionPlan) -> SimResult<()> {
        let group = plan.group_name.as_str();
        for id in self.members(group) {
            self.sites.get_mut(&id).expect("member").register_member(group, plan.new_site.clone())?;
        }
        let mut site = Site::new(plan.new_site.clone());
        site.begin_hold();
        self.sites.insert(plan.new_site.clone(), site);
        Ok(())
    }

    /// Replays every member's overlay in site order and tracks the resulting
    /// deliveries.
    fn finalize_overlays(&mut self, idx: usize) -> SimResult<()> {
        let group = self.additions[idx].plan.group_name.clone();
        let now = self.now();
        let with_overlay: Vec<SiteId> =
            self.members(&group).into_iter().filter(|id| self.sites[id].has_overlay(&group)).collect();
        for id in with_overlay {
            let n = self.sites.get_mut(&id).expect("member").finalize_overlay(&group, now)?;
            self.additions[idx].report.replayed_statements += n;
            let sent = self.flush_outbound(&id);
            self.additions[idx].awaiting.extend(sent);
        }
        Ok(())
    }

    fn finish_addition(&mut self, idx: usize) {
        let now = self.now();
        let group = self.additions[idx].plan.group_name.clone();
        let downtime = self.downtime_total(&group);
        let rejected = self.metrics.rejected_dml;
        let conflicts = self.metrics.total_conflicts();
        let bytes = self.metrics.bytes_transferred;
        let p = &mut self.additions[idx];
        p.phase = Phase::Done;
        p.report.end_tick = now;
        p.report.downtime_ticks = downtime - p.base_downtime;
        p.report.rejected_dml = rejected - p.base_rejected;
        p.report.conflicts_during = conflicts - p.base_conflicts;
        p.report.bytes_transferred = bytes - p.base_bytes;
    }
}
