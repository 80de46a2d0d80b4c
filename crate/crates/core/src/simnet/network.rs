//! Links, partitions and the byte/tick cost model.

use std::collections::BTreeMap;

use crate::engine::{DeferredOp, DeferredTxn};
use crate::relmodel::{SiteId, Table, Value};

use super::SimError;

/// Directional link between two sites at a given moment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub from: SiteId,
    pub to: SiteId,
    pub latency_ticks: u64,
    pub bandwidth_bytes_per_tick: u64,
    pub up: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkParams {
    pub latency_ticks: u64,
    pub bandwidth_bytes_per_tick: u64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams { latency_ticks: 5, bandwidth_bytes_per_tick: 1000 }
    }
}

/// Both directions between `a` and `b` are down for `from_tick <= t < to_tick`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionWindow {
    pub a: SiteId,
    pub b: SiteId,
    pub from_tick: u64,
    pub to_tick: u64,
}

impl PartitionWindow {
    fn covers(&self, from: &SiteId, to: &SiteId, tick: u64) -> bool {
        ((&self.a == from && &self.b == to) || (&self.a == to && &self.b == from))
            && self.from_tick <= tick
            && tick < self.to_tick
    }
}

/// `ceil(bytes / bandwidth) + latency`.
pub fn transfer_cost(bytes: u64, link: &Link) -> Result<u64, SimError> {
    if !link.up {
        return Err(SimError::LinkDown { from: link.from.clone(), to: link.to.clone() });
    }
    Ok(bytes.div_ceil(link.bandwidth_bytes_per_tick) + link.latency_ticks)
}

#[derive(Debug, Clone, Default)]
pub struct Network {
    default: LinkParams,
    overrides: BTreeMap<(SiteId, SiteId), LinkParams>,
    partitions: Vec<PartitionWindow>,
}

impl Network {
    pub fn new(default: LinkParams) -> Self {
        Network { default, overrides: BTreeMap::new(), partitions: Vec::new() }
    }

    /// Sets parameters for both directions between `a` and `b`.
    pub fn set_link(&mut self, a: SiteId, b: SiteId, params: LinkParams) {
        self.overrides.insert((a.clone(), b.clone()), params);
        self.overrides.insert((b, a), params);
    }

    pub fn add_partition(&mut self, window: PartitionWindow) {
        self.partitions.push(window);
    }

    pub fn partitions(&self) -> &[PartitionWindow] {
        &self.partitions
    }

    pub fn params(&self, from: &SiteId, to: &SiteId) -> LinkParams {
        self.overrides.get(&(from.clone(), to.clone())).copied().unwrap_or(self.default)
    }

    pub fn is_up(&self, from: &SiteId, to: &SiteId, tick: u64) -> bool {
        !self.partitions.iter().any(|p| p.covers(from, to, tick))
    }

    pub fn link(&self, from: &SiteId, to: &SiteId, tick: u64) -> Link {
        let p = self.params(from, to);
        Link {
            from: from.clone(),
            to: to.clone(),
            latency_ticks: p.latency_ticks,
            bandwidth_bytes_per_tick: p.bandwidth_bytes_per_tick,
            up: self.is_up(from, to, tick),
        }
    }

    /// First tick at or after `tick` at which the link is up.
    pub fn next_up(&self, from: &SiteId, to: &SiteId, mut tick: u64) -> u64 {
        while let Some(end) = self.partitions.iter().filter(|p| p.covers(from, to, tick)).map(|p| p.to_tick).max() {
            tick = end;
        }
        tick
    }

    /// Cost of sending `bytes` ignoring partitions.
    pub fn nominal_cost(&self, from: &SiteId, to: &SiteId, bytes: u64) -> u64 {
        let mut link = self.link(from, to, 0);
        link.up = true;
        transfer_cost(bytes, &link).expect("link forced up")
    }
}

/// Transfer/processing cost parameters for site instantiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    /// Fixed work per table for install, export and import.
    pub table_overhead_ticks: u64,
    pub install_bytes_per_tick: u64,
    pub export_bytes_per_tick: u64,
    pub import_bytes_per_tick: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            table_overhead_ticks: 1,
            install_bytes_per_tick: 10_000,
            export_bytes_per_tick: 10_000,
            import_bytes_per_tick: 10_000,
        }
    }
}

impl CostModel {
    fn local(&self, bytes: u64, tables: usize, rate: u64) -> u64 {
        self.table_overhead_ticks * tables as u64 + bytes.div_ceil(rate.max(1))
    }

    pub fn install_ticks(&self, bytes: u64, tables: usize) -> u64 {
        self.local(bytes, tables, self.install_bytes_per_tick)
    }

    pub fn export_ticks(&self, bytes: u64, tables: usize) -> u64 {
        self.local(bytes, tables, self.export_bytes_per_tick)
    }

    pub fn import_ticks(&self, bytes: u64, tables: usize) -> u64 {
        self.local(bytes, tables, self.import_bytes_per_tick)
    }
}

const ROW_HEADER: u64 = 16;
const TXN_HEADER: u64 = 16;

/// 8 bytes per integer, 2 + UTF-8 length per text, 1 per null.
pub fn value_size(v: &Value) -> u64 {
    match v {
        Value::Int(_) => 8,
        Value::Text(s) => 2 + s.len() as u64,
        Value::Null => 1,
    }
}

fn values_size(values: &[Value]) -> u64 {
    values.iter().map(value_size).sum()
}

/// Serialized size of a table: 16-byte header plus values per row.
pub fn table_size(table: &Table) -> u64 {
    table.rows().map(|r| ROW_HEADER + values_size(&r.values)).sum()
}

/// Serialized size of a deferred transaction: 16-byte header, then per op a
/// 16-byte header plus its row image (the key alone for deletes).
pub fn txn_size(txn: &DeferredTxn) -> u64 {
    TXN_HEADER
        + txn
            .ops
            .iter()
            .map(|op| {
                ROW_HEADER
                    + match op {
                        DeferredOp::Insert { values, .. } => values_size(values),
                        DeferredOp::Update { after_values, .. } => values_size(after_values),
                        DeferredOp::Delete { .. } => 8,
                    }
            })
            .sum::<u64>()
}

/// Anything the cost model can size.
pub trait SerializedSize {
    fn serialized_size(&self) -> u64;
}

impl SerializedSize for Table {
    fn serialized_size(&self) -> u64 {
        table_size(self)
    }
}

impl SerializedSize for DeferredTxn {
    fn serialized_size(&self) -> u64 {
        txn_size(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::TxnId;
    use crate::relmodel::fixtures::{table1, table1_schema};
    use crate::relmodel::RowVersion;

    fn link(lat: u64, bw: u64) -> Link {
        Link { from: "a".into(), to: "b".into(), latency_ticks: lat, bandwidth_bytes_per_tick: bw, up: true }
    }

    #[test]
    fn transfer_cost_examples() {
        assert_eq!(transfer_cost(1000, &link(5, 100)).unwrap(), 15);
        assert_eq!(transfer_cost(0, &link(7, 100)).unwrap(), 7);
        assert_eq!(transfer_cost(1001, &link(0, 100)).unwrap(), 11);
        let mut down = link(0, 1);
        down.up = false;
        assert!(matches!(transfer_cost(1, &down), Err(SimError::LinkDown { .. })));
    }

    #[test]
    fn sizes() {
        assert_eq!(Table::new(table1_schema()).serialized_size(), 0);
        // 4 · (16 + 8 + (2 + 5) + 8)
        assert_eq!(table1().serialized_size(), 156);
        let empty = DeferredTxn { id: TxnId { origin: "a".into(), seq: 1 }, group: "g".into(), origin_tick: 0, ops: vec![] };
        let mut one = empty.clone();
        one.ops.push(DeferredOp::Delete {
            table: "t".into(),
            pk: 1,
            old_version: RowVersion::initial(),
            delete_version: RowVersion::initial(),
        });
        assert!(one.serialized_size() > empty.serialized_size());
    }

    #[test]
    fn partitions_are_symmetric_windows() {
        let mut net = Network::new(LinkParams::default());
        net.add_partition(PartitionWindow { a: "a".into(), b: "b".into(), from_tick: 10, to_tick: 20 });
        net.add_partition(PartitionWindow { a: "b".into(), b: "a".into(), from_tick: 18, to_tick: 25 });
        let (a, b, c) = (SiteId::from("a"), SiteId::from("b"), SiteId::from("c"));
        assert!(net.is_up(&a, &b, 9));
        assert!(!net.is_up(&b, &a, 10));
        assert!(net.is_up(&a, &c, 15));
        assert_eq!(net.next_up(&a, &b, 12), 25);
        assert_eq!(net.next_up(&a, &b, 30), 30);
    }

    #[test]
    fn link_overrides() {
        let mut net = Network::new(LinkParams { latency_ticks: 1, bandwidth_bytes_per_tick: 10 });
        net.set_link("a".into(), "b".into(), LinkParams { latency_ticks: 3, bandwidth_bytes_per_tick: 100 });
        assert_eq!(net.nominal_cost(&"b".into(), &"a".into(), 1000), 13);
        assert_eq!(net.nominal_cost(&"a".into(), &"c".into(), 1000), 101);
    }
}
