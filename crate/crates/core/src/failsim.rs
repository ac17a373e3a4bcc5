//! Failure injection against the emulated dataplane.
//!
//! Packets are pushed hop by hop through [`Fabric`] with a set of links held
//! down, and every copy that reaches a host port is recorded. On top of that
//! sit the exhaustive tolerance check, the nested-backup hopcount averages and
//! an analytic packet-loss model for three recovery schemes.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::{DataplaneError, Fabric, Packet, PortId};
use crate::netgraph::{Edge, LinkSet, Network, Node};
use crate::protect::GroupState;
use crate::treealg::{MulticastTree, Tag};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FailsimError {
    #[error(transparent)]
    Dataplane(#[from] DataplaneError),
    #[error("{sets} failure sets exceed the budget of {cap}")]
    BudgetExceeded { sets: u128, cap: u128 },
    #[error("depth {k} exceeds the fault tolerance {f}")]
    DepthTooLarge { k: usize, f: usize },
}

/// Outcome for one subscriber under one failure set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriberOutcome {
    pub subscriber: Node,
    pub delivered: bool,
    /// Hops of the first copy to arrive.
    pub hopcount: Option<usize>,
    /// Copies beyond the first.
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeliveryReport {
    pub failure_set: LinkSet,
    pub outcomes: Vec<SubscriberOutcome>,
    /// Copies that reached a switch with no entry for them.
    pub unmatched: usize,
    /// Copies sent out of a port whose link is down.
    pub dead_drops: usize,
    /// Copies that revisited a (link, direction, tag) state.
    pub loops: usize,
    /// Host deliveries at switches that are not subscribers.
    pub stray: Vec<Node>,
}

impl DeliveryReport {
    pub fn outcome(&self, v: Node) -> Option<&SubscriberOutcome> {
        self.outcomes.iter().find(|o| o.subscriber == v)
    }

    pub fn all_delivered(&self) -> bool {
        self.outcomes.iter().all(|o| o.delivered)
    }
}

/// Semicolon separated link labels, `-` for the empty set.
pub fn failure_set_label(net: &Network, fs: &LinkSet) -> String {
    if fs.is_empty() {
        return "-".to_string();
    }
    fs.iter().map(|&l| net.link_label(l)).join(";")
}

/// Injects one packet at the source host with the links of `fs` down, then
/// restores the previous link states.
pub fn simulate_delivery(
    net: &Network,
    fabric: &mut Fabric,
    gs: &GroupState,
    fs: &LinkSet,
) -> Result<DeliveryReport, FailsimError> {
    let newly_down: Vec<_> = fs.iter().copied().filter(|l| !fabric.down_links().contains(l)).collect();
    for &l in &newly_down {
        fabric.set_link_state(net, l, false)?;
    }
    let report = trace(net, fabric, gs, fs);
    for &l in &newly_down {
        fabric.set_link_state(net, l, true)?;
    }
    Ok(report)
}

struct InFlight {
    at: Node,
    vlan: Option<Tag>,
    ingress: PortId,
    seen: Vec<(Edge, Option<Tag>)>,
}

fn trace(net: &Network, fabric: &Fabric, gs: &GroupState, fs: &LinkSet) -> DeliveryReport {
    // Forwarding only depends on (switch, tag), so a copy that repeats a
    // state is caught in a loop. The copy cap guards against blow-ups.
    let cap = 64 * (net.link_count() + 1) * (gs.config().fault_tolerance + 1);
    let mut report = DeliveryReport { failure_set: fs.clone(), ..Default::default() };
    let mut arrivals: BTreeMap<Node, Vec<usize>> = BTreeMap::new();
    let mut queue = VecDeque::from([InFlight { at: gs.source(), vlan: None, ingress: PortId::Host, seen: Vec::new() }]);
    let mut processed = 0;

    while let Some(c) = queue.pop_front() {
        processed += 1;
        if processed > cap {
            report.loops += 1 + queue.len();
            break;
        }
        let pkt = Packet { key: gs.key(), vlan: c.vlan, hop_trace: c.seen.iter().map(|(e, _)| e.link()).collect() };
        let out = fabric.switch(c.at).forward(&pkt, c.ingress);
        if out.unmatched {
            report.unmatched += 1;
            continue;
        }
        for (port, vlan) in out.outputs {
            match port {
                PortId::Host => arrivals.entry(c.at).or_default().push(c.seen.len()),
                PortId::Peer(n) => {
                    let e = Edge::new(c.at, n);
                    if fabric.down_links().contains(&e.link()) {
                        report.dead_drops += 1;
                    } else if c.seen.contains(&(e, vlan)) {
                        report.loops += 1;
                    } else {
                        let mut seen = c.seen.clone();
                        seen.push((e, vlan));
                        queue.push_back(InFlight { at: n, vlan, ingress: PortId::Peer(c.at), seen });
                    }
                }
            }
        }
    }

    let subs = gs.subscribers();
    report.stray = arrivals.keys().copied().filter(|n| !subs.contains(n)).collect();
    report.outcomes = subs
        .iter()
        .map(|&v| {
            let hops = arrivals.get(&v);
            SubscriberOutcome {
                subscriber: v,
                delivered: hops.is_some(),
                hopcount: hops.and_then(|h| h.iter().min().copied()),
                duplicates: hops.map_or(0, |h| h.len() - 1),
            }
        })
        .collect();
    report
}

/// Number of subsets of size at most `f` of an `m` element set.
pub fn failure_set_count(m: usize, f: usize) -> u128 {
    let mut total = 0u128;
    let mut c = 1u128;
    for k in 0..=f.min(m) {
        total += c;
        c = c * (m - k) as u128 / (k + 1) as u128;
    }
    total
}

/// Every failure set of size at most `f`, smallest first, each in link order.
pub fn failure_sets(net: &Network, f: usize) -> impl Iterator<Item = LinkSet> + '_ {
    (0..=f).flat_map(move |k| net.links().iter().copied().combinations(k).map(|c| c.into_iter().collect()))
}

/// A subscriber missed under a failure set that its recorded absences do not
/// explain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub failure_set: LinkSet,
    pub subscriber: Node,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToleranceReport {
    pub sets_checked: usize,
    pub excused: usize,
    pub unexcused: Vec<Violation>,
    pub loops: usize,
    pub unmatched: usize,
    pub stray: usize,
    pub reports: Vec<DeliveryReport>,
}

impl ToleranceReport {
    pub fn is_clean(&self) -> bool {
        self.unexcused.is_empty() && self.loops == 0 && self.stray == 0
    }
}

/// Whether protection building recorded that `v` had no route around some
/// subset of `fs`.
pub fn is_excused(gs: &GroupState, v: Node, fs: &LinkSet) -> bool {
    gs.absences().iter().any(|a| a.subscriber == v && a.down.is_subset(fs))
}

/// Simulates every failure set of size at most `f`. Fails up front when the
/// number of sets exceeds `max_sets`.
pub fn verify_tolerance(
    net: &Network,
    fabric: &mut Fabric,
    gs: &GroupState,
    f: usize,
    max_sets: u128,
) -> Result<ToleranceReport, FailsimError> {
    let sets = failure_set_count(net.link_count(), f);
    if sets > max_sets {
        return Err(FailsimError::BudgetExceeded { sets, cap: max_sets });
    }
    let mut out = ToleranceReport::default();
    for fs in failure_sets(net, f) {
        let r = simulate_delivery(net, fabric, gs, &fs)?;
        out.sets_checked += 1;
        out.loops += r.loops;
        out.unmatched += r.unmatched;
        out.stray += r.stray.len();
        for o in r.outcomes.iter().filter(|o| !o.delivered) {
            if is_excused(gs, o.subscriber, &fs) {
                out.excused += 1;
            } else {
                out.unexcused.push(Violation { failure_set: fs.clone(), subscriber: o.subscriber });
            }
        }
        out.reports.push(r);
    }
    Ok(out)
}

/// Chains of `k` nested protected edges that `v` actually uses: the first
/// edge lies on its primary route, each next edge on its route through the
/// backup tree of the previous one.
pub fn backup_chains(gs: &GroupState, v: Node, k: usize) -> Vec<Vec<Edge>> {
    fn go(t: &MulticastTree, v: Node, k: usize, prefix: &mut Vec<Edge>, out: &mut Vec<Vec<Edge>>) {
        if k == 0 {
            out.push(prefix.clone());
            return;
        }
        for e in t.path_to(v).unwrap_or_default() {
            if let Some(b) = t.backup(e).filter(|b| b.is_terminal(v)) {
                prefix.push(e);
                go(b, v, k - 1, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    if gs.primary().is_terminal(v) {
        go(gs.primary(), v, k, &mut Vec::new(), &mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DepthHopcount {
    pub depth: usize,
    /// Mean over (subscriber, chain) pairs that were delivered.
    pub mean: f64,
    pub samples: usize,
    /// Pairs whose chain failure left the subscriber without delivery.
    pub undelivered: usize,
}

/// Average delivery hopcount when exactly the links of one depth-`k` chain
/// are down. Depth 0 is the primary tree.
pub fn depth_hopcounts(
    net: &Network,
    fabric: &mut Fabric,
    gs: &GroupState,
    k: usize,
) -> Result<DepthHopcount, FailsimError> {
    let f = gs.config().fault_tolerance;
    if k > f {
        return Err(FailsimError::DepthTooLarge { k, f });
    }
    let mut sum = 0usize;
    let mut out = DepthHopcount { depth: k, ..Default::default() };
    let mut cache: BTreeMap<LinkSet, DeliveryReport> = BTreeMap::new();
    for &v in gs.subscribers() {
        for chain in backup_chains(gs, v, k) {
            let fs: LinkSet = chain.iter().map(|e| e.link()).collect();
            if !cache.contains_key(&fs) {
                let r = simulate_delivery(net, fabric, gs, &fs)?;
                cache.insert(fs.clone(), r);
            }
            match cache[&fs].outcome(v).and_then(|o| o.hopcount) {
                Some(h) => {
                    sum += h;
                    out.samples += 1;
                }
                None => out.undelivered += 1,
            }
        }
    }
    if out.samples > 0 {
        out.mean = sum as f64 / out.samples as f64;
    }
    Ok(out)
}

/// One row of the delivery CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRow {
    pub failure_set: String,
    pub subscriber: String,
    pub delivered: bool,
    pub hopcount: Option<usize>,
    pub duplicates: usize,
}

pub fn delivery_rows(net: &Network, reports: &[DeliveryReport]) -> Vec<DeliveryRow> {
    reports
        .iter()
        .flat_map(|r| {
            let label = failure_set_label(net, &r.failure_set);
            r.outcomes.iter().map(move |o| DeliveryRow {
                failure_set: label.clone(),
                subscriber: net.name(o.subscriber).to_string(),
                delivered: o.delivered,
                hopcount: o.hopcount,
                duplicates: o.duplicates,
            })
        })
        .collect()
}

pub fn write_delivery_csv(w: impl io::Write, rows: &[DeliveryRow]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryKind {
    /// Switch-local failover groups.
    FastFailover,
    /// Controller rewrites the root flow onto a preinstalled tree.
    FastTreeSwitching,
    /// Controller computes and installs new paths after the failure.
    Restoration,
}

impl fmt::Display for RecoveryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecoveryKind::FastFailover => "ff",
            RecoveryKind::FastTreeSwitching => "switch",
            RecoveryKind::Restoration => "restore",
        })
    }
}

impl std::str::FromStr for RecoveryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ff" => Ok(RecoveryKind::FastFailover),
            "switch" => Ok(RecoveryKind::FastTreeSwitching),
            "restore" => Ok(RecoveryKind::Restoration),
            other => Err(format!("unknown recovery model `{other}` (expected ff, switch or restore)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryModel {
    pub kind: RecoveryKind,
    pub detection_ms: f64,
    pub controller_rtt_ms: f64,
    pub per_flowmod_ms: f64,
    pub compute_ms: f64,
    pub packet_rate_hz: f64,
}

impl RecoveryModel {
    pub fn new(kind: RecoveryKind) -> Self {
        RecoveryModel {
            kind,
            detection_ms: 0.0,
            controller_rtt_ms: 0.0,
            per_flowmod_ms: 1.0,
            compute_ms: 0.0,
            packet_rate_hz: 120.0,
        }
    }

    /// Time a single cut leaves the stream without a working path.
    pub fn outage_ms(&self, cut: &CutImpact) -> f64 {
        match self.kind {
            RecoveryKind::FastFailover => self.detection_ms,
            RecoveryKind::FastTreeSwitching => {
                self.detection_ms + self.controller_rtt_ms + self.per_flowmod_ms * cut.affected_groups as f64
            }
            RecoveryKind::Restoration => {
                self.detection_ms
                    + self.controller_rtt_ms
                    + self.compute_ms
                    + self.per_flowmod_ms * cut.entries_to_restore as f64
            }
        }
    }
}

/// Controller work caused by one link cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutImpact {
    pub affected_groups: usize,
    pub entries_to_restore: usize,
}

impl Default for CutImpact {
    fn default() -> Self {
        CutImpact { affected_groups: 1, entries_to_restore: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub sent: usize,
    pub lost: usize,
    /// Packets lost per cut, in cut order.
    pub lost_per_cut: Vec<usize>,
}

/// Streams packets at the model rate for `duration_ms` and drops those sent
/// while a cut is unrepaired. Cut `i` happens at `cut_times_ms[i]`. Packet
/// `j` leaves at `j` periods, so with the failure half a period after a send
/// the loss is the number of send instants inside the outage window.
pub fn simulate_recovery(
    model: &RecoveryModel,
    cuts: &[(f64, CutImpact)],
    duration_ms: f64,
) -> RecoveryOutcome {
    let period = 1000.0 / model.packet_rate_hz;
    let sent = (duration_ms / period).floor() as usize + 1;
    let windows: Vec<(f64, f64)> = cuts.iter().map(|(t, c)| (*t, t + model.outage_ms(c))).collect();
    let mut lost_per_cut = vec![0; cuts.len()];
    let mut lost = 0;
    for j in 0..sent {
        let t = j as f64 * period;
        if let Some(i) = windows.iter().position(|&(a, b)| a <= t && t < b) {
            lost_per_cut[i] += 1;
            lost += 1;
        }
    }
    RecoveryOutcome { sent, lost, lost_per_cut }
}

/// `n` cuts spaced `spacing_ms` apart, each half a packet period after a
/// send instant.
pub fn evenly_spaced_cuts(model: &RecoveryModel, n: usize, spacing_ms: f64, impact: CutImpact) -> Vec<(f64, CutImpact)> {
    let half = 500.0 / model.packet_rate_hz;
    (0..n).map(|i| (half + i as f64 * spacing_ms, impact)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protect::{GroupKey, ProtectionConfig};
    use crate::treealg::Strategy;

    fn build(net: &Network, src: &str, subs: &[&str], f: usize, s: Strategy) -> (GroupState, Fabric) {
        let mut gs = GroupState::new(GroupKey(1), net.node(src).unwrap(), ProtectionConfig::new(f, s));
        for v in subs {
            gs.protect_join(net, net.node(v).unwrap(), &mut ()).unwrap();
        }
        let mut fabric = Fabric::new(net);
        fabric.install_group(&gs).unwrap();
        (gs, fabric)
    }

    #[test]
    fn counts_subsets() {
        assert_eq!(failure_set_count(28, 3), 1 + 28 + 378 + 3276);
        assert_eq!(failure_set_count(3, 5), 8);
        assert_eq!(failure_set_count(10, 0), 1);
    }

    #[test]
    fn triangle_failover() {
        let net = Network::from_parts(["A", "B", "C"], [("A", "B"), ("B", "C"), ("A", "C")]).unwrap();
        let (gs, mut fabric) = build(&net, "A", &["C"], 1, Strategy::Spt);
        let c = net.node("C").unwrap();
        let ok = simulate_delivery(&net, &mut fabric, &gs, &LinkSet::new()).unwrap();
        assert_eq!(ok.outcome(c).unwrap().hopcount, Some(1));
        let fs = LinkSet::from([net.link("A", "C").unwrap()]);
        let r = simulate_delivery(&net, &mut fabric, &gs, &fs).unwrap();
        assert_eq!(r.outcome(c).unwrap().hopcount, Some(2));
        assert!(fabric.down_links().is_empty());
        // Two failures exceed the tolerance and are excused by the absence.
        let both = LinkSet::from([net.link("A", "C").unwrap(), net.link("B", "C").unwrap()]);
        let r = simulate_delivery(&net, &mut fabric, &gs, &both).unwrap();
        assert!(!r.all_delivered());
    }

    #[test]
    fn path_without_alternatives_is_excused() {
        let net = Network::from_parts(["A", "B", "C"], [("A", "B"), ("B", "C")]).unwrap();
        let (gs, mut fabric) = build(&net, "A", &["C"], 1, Strategy::Spt);
        let rep = verify_tolerance(&net, &mut fabric, &gs, 1, 100).unwrap();
        assert_eq!(rep.sets_checked, 3);
        assert_eq!(rep.excused, 2);
        assert!(rep.is_clean());
    }

    #[test]
    fn budget_is_enforced() {
        let net = Network::complete_graph(6).unwrap();
        let (gs, mut fabric) = build(&net, "n00", &["n01"], 2, Strategy::Spt);
        let err = verify_tolerance(&net, &mut fabric, &gs, 2, 10).unwrap_err();
        assert_eq!(err, FailsimError::BudgetExceeded { sets: 121, cap: 10 });
    }

    #[test]
    fn depth_checks() {
        let net = Network::complete_graph(5).unwrap();
        let (gs, mut fabric) = build(&net, "n00", &["n01", "n02", "n03", "n04"], 1, Strategy::Spt);
        assert_eq!(
            depth_hopcounts(&net, &mut fabric, &gs, 2),
            Err(FailsimError::DepthTooLarge { k: 2, f: 1 })
        );
        let d0 = depth_hopcounts(&net, &mut fabric, &gs, 0).unwrap();
        assert_eq!((d0.mean, d0.samples), (1.0, 4));
        let d1 = depth_hopcounts(&net, &mut fabric, &gs, 1).unwrap();
        assert_eq!((d1.mean, d1.samples), (2.0, 4));
    }

    #[test]
    fn ring_depth_by_hand() {
        // Ring A-B-C-D-E-A, subscriber C. Primary A-B-C. Losing A-B detours
        // A-E-D-C (3 hops); losing B-C bounces back B-A-E-D-C after the
        // first hop (5 hops).
        let net = Network::from_parts(
            ["A", "B", "C", "D", "E"],
            [("A", "B"), ("B", "C"), ("C", "D"), ("D", "E"), ("E", "A")],
        )
        .unwrap();
        let (gs, mut fabric) = build(&net, "A", &["C"], 1, Strategy::Spt);
        let c = net.node("C").unwrap();
        assert_eq!(backup_chains(&gs, c, 1).len(), 2);
        assert_eq!(depth_hopcounts(&net, &mut fabric, &gs, 0).unwrap().mean, 2.0);
        let d1 = depth_hopcounts(&net, &mut fabric, &gs, 1).unwrap();
        assert_eq!((d1.mean, d1.samples), (4.0, 2));
    }

    #[test]
    fn recovery_windows() {
        let mut m = RecoveryModel::new(RecoveryKind::FastTreeSwitching);
        m.controller_rtt_ms = 20.0;
        let cuts = evenly_spaced_cuts(&m, 1, 1000.0, CutImpact::default());
        assert_eq!(simulate_recovery(&m, &cuts, 1000.0).lost, 3);
        m.controller_rtt_ms = 0.0;
        assert_eq!(simulate_recovery(&m, &cuts, 1000.0).lost, 0);
        let ff = RecoveryModel { kind: RecoveryKind::FastFailover, controller_rtt_ms: 50.0, ..m };
        assert_eq!(simulate_recovery(&ff, &cuts, 1000.0).lost, 0);
    }

    #[test]
    fn csv_rows() {
        let net = Network::from_parts(["A", "B"], [("A", "B")]).unwrap();
        let (gs, mut fabric) = build(&net, "A", &["B"], 0, Strategy::Spt);
        let r = simulate_delivery(&net, &mut fabric, &gs, &LinkSet::new()).unwrap();
        let mut buf = Vec::new();
        write_delivery_csv(&mut buf, &delivery_rows(&net, &[r])).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "failure_set,subscriber,delivered,hopcount,duplicates\n-,B,true,1,0\n"
        );
    }
}
