//! Scenario replay, resource metrics and experiment presets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::{DataplaneError, Fabric, TABLES};
use crate::failsim::{self, DeliveryReport, DepthHopcount, FailsimError};
use crate::netgraph::{GraphError, Link, Network, Node};
use crate::protect::{GroupKey, GroupState, ProtectError, ProtectionConfig, RecordingSink};
use crate::treealg::Strategy;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Protect(#[from] ProtectError),
    #[error(transparent)]
    Dataplane(#[from] DataplaneError),
    #[error(transparent)]
    Failsim(#[from] FailsimError),
    #[error("event {step}: {msg}")]
    InvalidEvent { step: usize, msg: String },
    #[error("malformed scenario: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "arg", rename_all = "lowercase")]
pub enum Event {
    Join(String),
    Leave(String),
    Fail([String; 2]),
    Restore([String; 2]),
    Inject(usize),
}

impl Event {
    pub fn label(&self) -> String {
        match self {
            Event::Join(h) => format!("join {h}"),
            Event::Leave(h) => format!("leave {h}"),
            Event::Fail([a, b]) => format!("fail {a}-{b}"),
            Event::Restore([a, b]) => format!("restore {a}-{b}"),
            Event::Inject(n) => format!("inject {n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub source: String,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn parse(json: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(json).map_err(|e| HarnessError::Malformed(e.to_string()))
    }

    /// Joins every node other than `source`, in the given order.
    pub fn join_all(source: &str, order: impl IntoIterator<Item = String>) -> Self {
        Scenario { source: source.to_string(), events: order.into_iter().map(Event::Join).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SwitchMetrics {
    pub switch: String,
    pub flows: [usize; TABLES],
    pub groups: usize,
}

impl SwitchMetrics {
    pub fn total_flows(&self) -> usize {
        self.flows.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    pub step: usize,
    pub event: String,
    pub subscribers: usize,
    pub switches: Vec<SwitchMetrics>,
    pub total_flows: [usize; TABLES],
    pub total_groups: usize,
    pub max_switch_flows: usize,
    pub max_switch_groups: usize,
    pub tags_in_use: usize,
    pub tags_allocated: usize,
    pub joins_last: usize,
    pub joins_total: usize,
    /// Time spent in the membership update. Never written to CSV.
    pub build_ms: f64,
}

impl MetricsSnapshot {
    pub fn capture(net: &Network, fabric: &Fabric, gs: &GroupState, step: usize, event: String, build_ms: f64) -> Self {
        let key = gs.key();
        let switches: Vec<SwitchMetrics> = fabric
            .switches()
            .map(|s| SwitchMetrics {
                switch: net.name(s.node()).to_string(),
                flows: s.flow_counts(key),
                groups: s.group_count(key),
            })
            .collect();
        let mut total_flows = [0; TABLES];
        for s in &switches {
            for (t, n) in s.flows.iter().enumerate() {
                total_flows[t] += n;
            }
        }
        MetricsSnapshot {
            step,
            event,
            subscribers: gs.subscribers().len(),
            total_groups: switches.iter().map(|s| s.groups).sum(),
            max_switch_flows: switches.iter().map(|s| s.total_flows()).max().unwrap_or(0),
            max_switch_groups: switches.iter().map(|s| s.groups).max().unwrap_or(0),
            switches,
            total_flows,
            tags_in_use: gs.tags_in_use(),
            tags_allocated: gs.tags_allocated(),
            joins_last: gs.joins().last,
            joins_total: gs.joins().total,
            build_ms,
        }
    }

    pub fn total_flow_count(&self) -> usize {
        self.total_flows.iter().sum()
    }

    /// `(metric, value)` pairs in CSV order.
    pub fn metrics(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("subscribers", self.subscribers),
            ("flows_table0", self.total_flows[0]),
            ("flows_table1", self.total_flows[1]),
            ("flows_table2", self.total_flows[2]),
            ("flows_total", self.total_flow_count()),
            ("groups_total", self.total_groups),
            ("max_switch_flows", self.max_switch_flows),
            ("max_switch_groups", self.max_switch_groups),
            ("tags_in_use", self.tags_in_use),
            ("tags_allocated", self.tags_allocated),
            ("joins", self.joins_last),
            ("joins_total", self.joins_total),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectRecord {
    pub step: usize,
    pub packets: usize,
    pub report: DeliveryReport,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub snapshots: Vec<MetricsSnapshot>,
    pub injections: Vec<InjectRecord>,
    pub violations: usize,
    pub dump: String,
}

/// Live replay state: topology, the protected group and its dataplane.
pub struct Replay<'a> {
    net: &'a Network,
    gs: GroupState,
    fabric: Fabric,
}

impl<'a> Replay<'a> {
    pub fn new(net: &'a Network, source: Node, config: ProtectionConfig) -> Result<Self, HarnessError> {
        let gs = GroupState::new(GroupKey(1), source, config);
        let mut fabric = Fabric::new(net);
        fabric.install_group(&gs)?;
        Ok(Replay { net, gs, fabric })
    }

    pub fn group(&self) -> &GroupState {
        &self.gs
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn fabric_mut(&mut self) -> &mut Fabric {
        &mut self.fabric
    }

    pub fn join(&mut self, v: Node) -> Result<bool, HarnessError> {
        let mut sink = RecordingSink::default();
        let joined = self.gs.protect_join(self.net, v, &mut sink)?;
        self.fabric.apply_events(&self.gs, &sink.events)?;
        Ok(joined)
    }

    pub fn leave(&mut self, v: Node) -> Result<bool, HarnessError> {
        let mut sink = RecordingSink::default();
        let left = self.gs.protect_leave(v, &mut sink);
        self.fabric.apply_events(&self.gs, &sink.events)?;
        Ok(left)
    }

    pub fn snapshot(&self, step: usize, event: String, build_ms: f64) -> MetricsSnapshot {
        MetricsSnapshot::capture(self.net, &self.fabric, &self.gs, step, event, build_ms)
    }

    /// Sends one packet over the current link states and counts
    /// non-deliveries not explained by recorded absences, loops and stray
    /// host deliveries.
    pub fn inject(&mut self) -> Result<(DeliveryReport, usize), HarnessError> {
        let fs = self.fabric.down_links().clone();
        let report = failsim::simulate_delivery(self.net, &mut self.fabric, &self.gs, &fs)?;
        let f = self.gs.config().fault_tolerance;
        let missed = report
            .outcomes
            .iter()
            .filter(|o| !o.delivered && fs.len() <= f && !failsim::is_excused(&self.gs, o.subscriber, &fs))
            .count();
        let violations = missed + report.loops + report.stray.len();
        Ok((report, violations))
    }
}

fn link_of(net: &Network, step: usize, [a, b]: &[String; 2]) -> Result<Link, HarnessError> {
    net.link(a, b).map_err(|e| HarnessError::InvalidEvent { step, msg: e.to_string() })
}

fn host_of(net: &Network, step: usize, h: &str) -> Result<Node, HarnessError> {
    net.node(h).map_err(|e| HarnessError::InvalidEvent { step, msg: e.to_string() })
}

/// Applies a join or leave event. Returns false for other events.
fn apply_membership(r: &mut Replay<'_>, step: usize, ev: &Event) -> Result<bool, HarnessError> {
    let invalid = |msg: String| HarnessError::InvalidEvent { step, msg };
    match ev {
        Event::Join(h) => {
            let v = host_of(r.net, step, h)?;
            if v == r.gs.source() {
                return Err(invalid(format!("{h} is the group source")));
            }
            if !r.join(v)? {
                return Err(invalid(format!("{h} is already a member or unreachable")));
            }
        }
        Event::Leave(h) => {
            let v = host_of(r.net, step, h)?;
            if !r.leave(v)? {
                return Err(invalid(format!("{h} is not a member")));
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Replays `scenario` in order. A snapshot is taken before the first event
/// and after every membership event.
pub fn run_scenario(
    net: &Network,
    scenario: &Scenario,
    config: ProtectionConfig,
) -> Result<ScenarioOutput, HarnessError> {
    let source = net.node(&scenario.source)?;
    let mut r = Replay::new(net, source, config)?;
    let mut snapshots = vec![r.snapshot(0, "start".to_string(), 0.0)];
    let mut injections = Vec::new();
    let mut violations = 0;

    for (i, ev) in scenario.events.iter().enumerate() {
        let step = i + 1;
        let t = Instant::now();
        if apply_membership(&mut r, step, ev)? {
            let ms = t.elapsed().as_secs_f64() * 1000.0;
            snapshots.push(r.snapshot(step, ev.label(), ms));
            continue;
        }
        match ev {
            Event::Fail(l) | Event::Restore(l) => {
                let link = link_of(net, step, l)?;
                r.fabric.set_link_state(net, link, matches!(ev, Event::Restore(_)))?;
            }
            Event::Inject(n) => {
                let (report, v) = r.inject()?;
                violations += v;
                injections.push(InjectRecord { step, packets: *n, report, violations: v });
            }
            Event::Join(_) | Event::Leave(_) => unreachable!(),
        }
    }
    Ok(ScenarioOutput { snapshots, injections, violations, dump: r.fabric.dump(net) })
}

/// Builds the group from the scenario's joins and leaves only, with every
/// link up.
pub fn replay_membership<'a>(
    net: &'a Network,
    scenario: &Scenario,
    config: ProtectionConfig,
) -> Result<Replay<'a>, HarnessError> {
    let mut r = Replay::new(net, net.node(&scenario.source)?, config)?;
    for (i, ev) in scenario.events.iter().enumerate() {
        apply_membership(&mut r, i + 1, ev)?;
    }
    Ok(r)
}

#[derive(Serialize)]
struct MetricRow<'a> {
    step: usize,
    event: &'a str,
    metric: &'a str,
    value: usize,
}

#[derive(Serialize)]
struct SwitchRow<'a> {
    step: usize,
    switch: &'a str,
    table0: usize,
    table1: usize,
    table2: usize,
    groups: usize,
}

#[derive(Serialize)]
struct InjectRow {
    step: usize,
    packets: usize,
    failure_set: String,
    subscriber: String,
    delivered: bool,
    hopcount: Option<usize>,
    duplicates: usize,
}

impl ScenarioOutput {
    pub fn metrics_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.snapshots {
            for (metric, value) in s.metrics() {
                w.serialize(MetricRow { step: s.step, event: &s.event, metric, value })?;
            }
        }
        csv_string(w)
    }

    /// Per-switch counts; switches without state for the group are skipped.
    pub fn switches_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.snapshots {
            for m in s.switches.iter().filter(|m| m.total_flows() + m.groups > 0) {
                w.serialize(SwitchRow {
                    step: s.step,
                    switch: &m.switch,
                    table0: m.flows[0],
                    table1: m.flows[1],
                    table2: m.flows[2],
                    groups: m.groups,
                })?;
            }
        }
        csv_string(w)
    }

    pub fn deliveries_csv(&self, net: &Network) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for rec in &self.injections {
            for row in failsim::delivery_rows(net, std::slice::from_ref(&rec.report)) {
                w.serialize(InjectRow {
                    step: rec.step,
                    packets: rec.packets,
                    failure_set: row.failure_set,
                    subscriber: row.subscriber,
                    delivered: row.delivered,
                    hopcount: row.hopcount,
                    duplicates: row.duplicates,
                })?;
            }
        }
        csv_string(w)
    }

    /// Writes `metrics.csv`, `switches.csv`, `deliveries.csv` and `dump.txt`.
    pub fn write_to(&self, net: &Network, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), self.metrics_csv()?)?;
        fs::write(dir.join("switches.csv"), self.switches_csv()?)?;
        fs::write(dir.join("deliveries.csv"), self.deliveries_csv(net)?)?;
        fs::write(dir.join("dump.txt"), &self.dump)?;
        Ok(())
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, HarnessError> {
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Topology preset for repeated experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Geant,
    Complete(usize),
}

impl Preset {
    pub fn network(self) -> Result<Network, GraphError> {
        match self {
            Preset::Geant => Ok(Network::geant()),
            Preset::Complete(n) => Network::complete_graph(n),
        }
    }

    /// AT for GÉANT, the first switch of a complete graph.
    pub fn source(self, net: &Network) -> Node {
        match self {
            Preset::Geant => net.node("AT").expect("bundled topology has AT"),
            Preset::Complete(_) => net.nodes().next().expect("complete graph is non-empty"),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "geant" {
            return Ok(Preset::Geant);
        }
        s.strip_prefix("complete:")
            .and_then(|n| n.parse().ok())
            .map(Preset::Complete)
            .ok_or_else(|| format!("unknown preset `{s}` (expected geant or complete:N)"))
    }
}

/// One repetition of a preset experiment.
#[derive(Debug, Clone)]
pub struct RepResult {
    pub seed: u64,
    pub order: Vec<String>,
    pub snapshots: Vec<MetricsSnapshot>,
    pub depths: Vec<DepthHopcount>,
}

/// Mean over repetitions of the metrics after `joined` subscribers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateStep {
    pub joined: usize,
    pub total_flows: f64,
    pub total_groups: f64,
    pub max_switch_flows: f64,
    pub max_switch_groups: f64,
    pub tags_in_use: f64,
    pub joins: f64,
}

#[derive(Debug, Clone)]
pub struct GeoReplay {
    pub reps: Vec<RepResult>,
    pub steps: Vec<AggregateStep>,
    /// Mean depth-k hopcount over repetitions, k = 0..=F.
    pub depth_means: Vec<f64>,
}

/// Fixed source, every other switch joined one by one in a seeded random
/// order. Repetition `i` uses seed `seed + i`; repetitions run in parallel.
pub fn georeplay(
    preset: Preset,
    strategy: Strategy,
    f: usize,
    seed: u64,
    reps: usize,
) -> Result<GeoReplay, HarnessError> {
    let net = preset.network()?;
    let source = preset.source(&net);
    let config = ProtectionConfig::new(f, strategy);
    let results: Vec<Result<RepResult, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..reps as u64)
            .map(|i| {
                let net = &net;
                s.spawn(move || replay_one(net, source, config, seed + i))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("repetition panicked")).collect()
    });
    let reps = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let n_steps = reps.first().map_or(0, |r| r.snapshots.len());
    let k = reps.len().max(1) as f64;
    let steps = (0..n_steps)
        .map(|i| {
            let mean = |g: &dyn Fn(&MetricsSnapshot) -> usize| reps.iter().map(|r| g(&r.snapshots[i]) as f64).sum::<f64>() / k;
            AggregateStep {
                joined: i,
                total_flows: mean(&|s| s.total_flow_count()),
                total_groups: mean(&|s| s.total_groups),
                max_switch_flows: mean(&|s| s.max_switch_flows),
                max_switch_groups: mean(&|s| s.max_switch_groups),
                tags_in_use: mean(&|s| s.tags_in_use),
                joins: mean(&|s| s.joins_last),
            }
        })
        .collect();
    let depth_means = (0..=f)
        .map(|d| reps.iter().map(|r| r.depths[d].mean).sum::<f64>() / k)
        .collect();
    Ok(GeoReplay { reps, steps, depth_means })
}

fn replay_one(net: &Network, source: Node, config: ProtectionConfig, seed: u64) -> Result<RepResult, HarnessError> {
    let mut order: Vec<Node> = net.nodes().filter(|&n| n != source).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut r = Replay::new(net, source, config)?;
    let mut snapshots = vec![r.snapshot(0, "start".to_string(), 0.0)];
    for (i, &v) in order.iter().enumerate() {
        let t = Instant::now();
        r.join(v)?;
        let ms = t.elapsed().as_secs_f64() * 1000.0;
        snapshots.push(r.snapshot(i + 1, format!("join {}", net.name(v)), ms));
    }
    let depths = (0..=config.fault_tolerance)
        .map(|k| failsim::depth_hopcounts(net, &mut r.fabric, &r.gs, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RepResult {
        seed,
        order: order.iter().map(|&v| net.name(v).to_string()).collect(),
        snapshots,
        depths,
    })
}

impl GeoReplay {
    pub fn steps_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.steps {
            w.serialize(s)?;
        }
        csv_string(w)
    }
}

/// Switches whose group count exceeds `limit`, with their counts.
pub fn capacity_check(snapshot: &MetricsSnapshot, limit: usize) -> Vec<(String, usize)> {
    snapshot
        .switches
        .iter()
        .filter(|s| s.groups > limit)
        .map(|s| (s.switch.clone(), s.groups))
        .collect()
}

/// Plain-text table summarising a metrics CSV: last and peak value per
/// metric.
pub fn summarize_metrics(csv_text: &str) -> Result<String, HarnessError> {
    #[derive(Deserialize)]
    struct Row {
        step: usize,
        metric: String,
        value: usize,
    }
    let mut order: Vec<String> = Vec::new();
    let mut stats: std::collections::HashMap<String, (usize, usize, usize)> = Default::default();
    for row in csv::Reader::from_reader(csv_text.as_bytes()).deserialize::<Row>() {
        let row = row?;
        let e = stats.entry(row.metric.clone()).or_insert_with(|| {
            order.push(row.metric.clone());
            (0, 0, 0)
        });
        *e = (row.step, row.value, e.2.max(row.value));
    }
    let mut s = format!("{:<20} {:>10} {:>10}\n", "metric", "final", "peak");
    for m in order {
        let (_, last, peak) = stats[&m];
        let _ = writeln!(s, "{m:<20} {last:>10} {peak:>10}");
    }
    Ok(s)
}

/// Plain-text summary of a delivery CSV: rows, deliveries and misses.
pub fn summarize_deliveries(csv_text: &str) -> Result<String, HarnessError> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "delivered")
        .ok_or_else(|| HarnessError::Malformed("no delivered column".into()))?;
    let (mut rows, mut ok) = (0, 0);
    for rec in rdr.records() {
        rows += 1;
        if rec?.get(col) == Some("true") {
            ok += 1;
        }
    }
    Ok(format!("rows {rows}\ndelivered {ok}\nmissed {}\n", rows - ok))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(n: usize) -> Network {
        Network::complete_graph(n).unwrap()
    }

    #[test]
    fn empty_scenario() {
        let net = k(4);
        let sc = Scenario { source: "n00".into(), events: vec![] };
        let out = run_scenario(&net, &sc, ProtectionConfig::new(1, Strategy::Spt)).unwrap();
        assert_eq!(out.snapshots.len(), 1);
        let s = &out.snapshots[0];
        assert_eq!((s.total_flow_count(), s.total_groups, s.tags_in_use), (0, 0, 0));
    }

    #[test]
    fn scenario_json() {
        let sc = Scenario::parse(
            r#"{"source":"n00","events":[{"op":"join","arg":"n01"},{"op":"fail","arg":["n00","n01"]},{"op":"inject","arg":1}]}"#,
        )
        .unwrap();
        assert_eq!(sc.events[1], Event::Fail(["n00".into(), "n01".into()]));
        let out = run_scenario(&k(4), &sc, ProtectionConfig::new(1, Strategy::Spt)).unwrap();
        assert_eq!(out.violations, 0);
        assert_eq!(out.injections[0].report.outcomes[0].hopcount, Some(2));
        assert!(Scenario::parse(r#"{"source":"a","events":[{"op":"jump","arg":"b"}]}"#).is_err());
    }

    #[test]
    fn bad_events() {
        let net = k(3);
        let cfg = ProtectionConfig::new(1, Strategy::Spt);
        let twice = Scenario::join_all("n00", ["n01".to_string(), "n01".to_string()]);
        assert!(matches!(run_scenario(&net, &twice, cfg), Err(HarnessError::InvalidEvent { step: 2, .. })));
        let leave = Scenario { source: "n00".into(), events: vec![Event::Leave("n02".into())] };
        assert!(matches!(run_scenario(&net, &leave, cfg), Err(HarnessError::InvalidEvent { step: 1, .. })));
        let own = Scenario::join_all("n00", ["n00".to_string()]);
        assert!(run_scenario(&net, &own, cfg).is_err());
        let ghost = Scenario::join_all("n00", ["zz".to_string()]);
        assert!(run_scenario(&net, &ghost, cfg).is_err());
    }

    #[test]
    fn totals_are_sums() {
        let net = Network::geant();
        let others: Vec<String> = ["NL", "UK", "PT", "GR"].map(String::from).to_vec();
        let out = run_scenario(&net, &Scenario::join_all("AT", others), ProtectionConfig::new(2, Strategy::Dst)).unwrap();
        for s in &out.snapshots {
            let flows: usize = s.switches.iter().map(|m| m.total_flows()).sum();
            let groups: usize = s.switches.iter().map(|m| m.groups).sum();
            assert_eq!(flows, s.total_flow_count());
            assert_eq!(groups, s.total_groups);
        }
    }

    #[test]
    fn capacity() {
        let net = k(6);
        let order = (1..6).map(|i| format!("n{i:02}"));
        let out = run_scenario(&net, &Scenario::join_all("n00", order), ProtectionConfig::new(1, Strategy::Spt)).unwrap();
        let last = out.snapshots.last().unwrap();
        assert!(capacity_check(last, usize::MAX).is_empty());
        assert_eq!(capacity_check(last, 4), vec![("n00".to_string(), 5)]);
    }

    #[test]
    fn presets_parse() {
        assert_eq!("geant".parse::<Preset>(), Ok(Preset::Geant));
        assert_eq!("complete:12".parse::<Preset>(), Ok(Preset::Complete(12)));
        assert!("complete:x".parse::<Preset>().is_err());
    }

    #[test]
    fn summaries() {
        let net = k(4);
        let out = run_scenario(
            &net,
            &Scenario::join_all("n00", ["n01".to_string(), "n02".to_string()]),
            ProtectionConfig::new(1, Strategy::Spt),
        )
        .unwrap();
        let table = summarize_metrics(&out.metrics_csv().unwrap()).unwrap();
        assert!(table.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["groups_total", "2", "2"]));
        let d = summarize_deliveries("failure_set,subscriber,delivered,hopcount,duplicates\n-,a,true,1,0\n-,b,false,,0\n").unwrap();
        assert_eq!(d, "rows 2\ndelivered 1\nmissed 1\n");
    }
}
