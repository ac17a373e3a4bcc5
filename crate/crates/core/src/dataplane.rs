//! Emulated switch forwarding state.
//!
//! Every switch has three flow tables and a set of fast-failover groups.
//! Flows match on `(group key, VLAN tag)`. A group applies the actions of its
//! first bucket whose watched port is live. Groups cannot call other groups,
//! so nested backups at one switch are flattened into a single bucket list,
//! and extra backup ports for the same failed port go into copies of the
//! group whose earlier buckets drop the packet.
//!
//! One action list never mixes group and plain output actions: a real switch
//! would silently skip the outputs. Mixed lists are spread over up to three
//! tables chained with `GotoTable`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::netgraph::{Link, LinkSet, Network, Node};
use crate::protect::{GroupKey, GroupState, SinkEvent};
use crate::treealg::{MulticastTree, Tag, TreeAddr};

pub const TABLES: usize = 3;
/// Priority of compiled forwarding entries.
pub const FORWARD_PRIORITY: i32 = 0;
/// Priority of the per-group drop rule at the source switch.
pub const DROP_PRIORITY: i32 = -1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataplaneError {
    #[error("unknown link {0:?}")]
    UnknownLink(Link),
    #[error("unknown group {0:?}")]
    UnknownGroup(GroupId),
    #[error("group {0:?} has no bucket watching {1:?}")]
    UnknownBucket(GroupId, PortId),
    #[error("table index {0} out of range")]
    BadTable(u8),
    #[error("goto from table {0} to table {1} does not move forward")]
    BackwardGoto(u8, u8),
    #[error("group {0:?} has no buckets")]
    EmptyGroup(GroupId),
    #[error("group {0:?} calls another group")]
    ChainedGroup(GroupId),
}

/// A switch port: the host port or the port facing a neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortId {
    Host,
    Peer(Node),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId {
    pub key: GroupKey,
    /// Tag of the tree whose flow entry owns the group.
    pub tag: Tag,
    /// Port of the protected primary bucket.
    pub port: Node,
    /// 0 for the original group, 1.. for drop-prefixed copies.
    pub copy: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Output(PortId),
    /// Sets the VLAN tag, pushing a header if the packet has none.
    SetTag(Tag),
    PopTag,
    Group(GroupId),
    GotoTable(u8),
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowMatch {
    pub key: GroupKey,
    pub vlan: Option<Tag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub table: u8,
    pub matcher: FlowMatch,
    pub priority: i32,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub watch: PortId,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FfGroup {
    pub id: GroupId,
    pub buckets: Vec<Bucket>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub key: GroupKey,
    pub vlan: Option<Tag>,
    pub hop_trace: Vec<Link>,
}

/// Result of running one packet through one switch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Forwarded {
    pub outputs: Vec<(PortId, Option<Tag>)>,
    pub unmatched: bool,
}

type Table = BTreeMap<FlowMatch, BTreeMap<i32, Vec<Action>>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchState {
    node: Node,
    tables: [Table; TABLES],
    groups: BTreeMap<GroupId, FfGroup>,
    dead: BTreeSet<Node>,
}

impl SwitchState {
    pub fn new(node: Node) -> Self {
        SwitchState { node, tables: Default::default(), groups: BTreeMap::new(), dead: BTreeSet::new() }
    }

    pub fn node(&self) -> Node {
        self.node
    }

    pub fn is_live(&self, port: PortId) -> bool {
        match port {
            PortId::Host => true,
            PortId::Peer(p) => !self.dead.contains(&p),
        }
    }

    pub fn set_port_state(&mut self, peer: Node, up: bool) {
        if up {
            self.dead.remove(&peer);
        } else {
            self.dead.insert(peer);
        }
    }

    pub fn install_entry(&mut self, entry: FlowEntry) -> Result<(), DataplaneError> {
        if usize::from(entry.table) >= TABLES {
            return Err(DataplaneError::BadTable(entry.table));
        }
        for a in &entry.actions {
            match *a {
                Action::GotoTable(t) if usize::from(t) >= TABLES => return Err(DataplaneError::BadTable(t)),
                Action::GotoTable(t) if t <= entry.table => {
                    return Err(DataplaneError::BackwardGoto(entry.table, t))
                }
                Action::Group(g) if !self.groups.contains_key(&g) => return Err(DataplaneError::UnknownGroup(g)),
                _ => {}
            }
        }
        self.tables[usize::from(entry.table)]
            .entry(entry.matcher)
            .or_default()
            .insert(entry.priority, entry.actions);
        Ok(())
    }

    pub fn add_group(&mut self, group: FfGroup) -> Result<(), DataplaneError> {
        if group.buckets.is_empty() {
            return Err(DataplaneError::EmptyGroup(group.id));
        }
        if group.buckets.iter().flat_map(|b| &b.actions).any(|a| matches!(a, Action::Group(_))) {
            return Err(DataplaneError::ChainedGroup(group.id));
        }
        self.groups.insert(group.id, group);
        Ok(())
    }

    pub fn group(&self, id: GroupId) -> Option<&FfGroup> {
        self.groups.get(&id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &FfGroup> + '_ {
        self.groups.values()
    }

    pub fn entries(&self) -> impl Iterator<Item = FlowEntry> + '_ {
        self.tables.iter().enumerate().flat_map(|(t, table)| {
            table.iter().flat_map(move |(m, by_prio)| {
                by_prio.iter().map(move |(&p, a)| FlowEntry {
                    table: t as u8,
                    matcher: *m,
                    priority: p,
                    actions: a.clone(),
                })
            })
        })
    }

    /// Removes the forwarding entries for `matcher` and the groups they own.
    /// Entries at other priorities (the source drop rule) stay.
    pub fn clear(&mut self, matcher: FlowMatch) {
        for table in &mut self.tables {
            if let Some(by_prio) = table.get_mut(&matcher) {
                by_prio.remove(&FORWARD_PRIORITY);
                if by_prio.is_empty() {
                    table.remove(&matcher);
                }
            }
        }
        let tag = matcher.vlan.unwrap_or(Tag::PRIMARY);
        self.groups.retain(|id, _| !(id.key == matcher.key && id.tag == tag));
    }

    /// Removes all state belonging to `key`.
    pub fn clear_key(&mut self, key: GroupKey) {
        for table in &mut self.tables {
            table.retain(|m, _| m.key != key);
        }
        self.groups.retain(|id, _| id.key != key);
    }

    /// Adds a backup bucket `[SetTag(tag), Output(backup)]` behind the bucket
    /// watching `protected`. If that bucket is the last one, the bucket is
    /// appended in place. Otherwise the port already has a backup, so a copy
    /// is made: every bucket up to and including `protected` becomes a drop
    /// bucket and the new bucket goes last. The owning flow entry also sends
    /// packets through the copy. Returns the group that received the bucket.
    pub fn add_backup_bucket(
        &mut self,
        group: GroupId,
        protected: PortId,
        backup: PortId,
        tag: Tag,
    ) -> Result<GroupId, DataplaneError> {
        let g = self.groups.get_mut(&group).ok_or(DataplaneError::UnknownGroup(group))?;
        let idx = g
            .buckets
            .iter()
            .position(|b| b.watch == protected)
            .ok_or(DataplaneError::UnknownBucket(group, protected))?;
        let bucket = Bucket { watch: backup, actions: vec![Action::SetTag(tag), Action::Output(backup)] };
        if idx + 1 == g.buckets.len() {
            g.buckets.push(bucket);
            return Ok(group);
        }
        let mut buckets: Vec<Bucket> = g.buckets[..=idx]
            .iter()
            .map(|b| Bucket { watch: b.watch, actions: vec![Action::Drop] })
            .collect();
        buckets.push(bucket);
        let copy = self
            .groups
            .keys()
            .filter(|id| id.key == group.key && id.tag == group.tag && id.port == group.port)
            .map(|id| id.copy)
            .max()
            .unwrap_or(0)
            + 1;
        let id = GroupId { copy, ..group };
        self.groups.insert(id, FfGroup { id, buckets });

        for table in &mut self.tables {
            for actions in table.values_mut().flat_map(|m| m.values_mut()) {
                if let Some(pos) = actions.iter().rposition(|a| matches!(a, Action::Group(x) if x.key == id.key && x.tag == id.tag && x.port == id.port)) {
                    actions.insert(pos + 1, Action::Group(id));
                }
            }
        }
        Ok(id)
    }

    fn lookup(&self, table: u8, matcher: FlowMatch) -> Option<&[Action]> {
        self.tables[usize::from(table)]
            .get(&matcher)
            .and_then(|by_prio| by_prio.last_key_value())
            .map(|(_, a)| a.as_slice())
    }

    /// Runs a packet through the pipeline. A packet that matches nothing in
    /// table 0 is reported as unmatched (it would go to the controller).
    pub fn forward(&self, pkt: &Packet, _ingress: PortId) -> Forwarded {
        let mut out = Forwarded::default();
        let matcher = FlowMatch { key: pkt.key, vlan: pkt.vlan };
        if self.lookup(0, matcher).is_none() {
            out.unmatched = true;
            return out;
        }
        self.run_table(0, pkt.key, pkt.vlan, &mut out);
        out
    }

    fn run_table(&self, table: u8, key: GroupKey, vlan: Option<Tag>, out: &mut Forwarded) {
        let Some(actions) = self.lookup(table, FlowMatch { key, vlan }) else {
            return;
        };
        // A list holding both group and output actions only runs the groups.
        let has_group = actions.iter().any(|a| matches!(a, Action::Group(_)));
        let mut vlan = vlan;
        for a in actions {
            match *a {
                Action::Output(p) => {
                    if !has_group {
                        out.outputs.push((p, vlan));
                    }
                }
                Action::SetTag(t) => vlan = Some(t),
                Action::PopTag => vlan = None,
                Action::Group(g) => self.run_group(g, vlan, out),
                Action::GotoTable(t) => self.run_table(t, key, vlan, out),
                Action::Drop => break,
            }
        }
    }

    fn run_group(&self, id: GroupId, vlan: Option<Tag>, out: &mut Forwarded) {
        let Some(group) = self.groups.get(&id) else {
            return;
        };
        let Some(bucket) = group.buckets.iter().find(|b| self.is_live(b.watch)) else {
            return;
        };
        let mut vlan = vlan;
        for a in &bucket.actions {
            match *a {
                Action::Output(p) => out.outputs.push((p, vlan)),
                Action::SetTag(t) => vlan = Some(t),
                Action::PopTag => vlan = None,
                Action::Drop => break,
                Action::Group(_) | Action::GotoTable(_) => unreachable!("rejected by add_group"),
            }
        }
    }

    /// Forwarding entries (priority 0) in each table for `key`.
    pub fn flow_counts(&self, key: GroupKey) -> [usize; TABLES] {
        let mut counts = [0; TABLES];
        for (t, table) in self.tables.iter().enumerate() {
            counts[t] = table
                .iter()
                .filter(|(m, by_prio)| m.key == key && by_prio.contains_key(&FORWARD_PRIORITY))
                .count();
        }
        counts
    }

    pub fn group_count(&self, key: GroupKey) -> usize {
        self.groups.keys().filter(|id| id.key == key).count()
    }
}

/// Formats a port with switch names.
pub fn port_label(net: &Network, p: PortId) -> String {
    match p {
        PortId::Host => "host".to_string(),
        PortId::Peer(n) => net.name(n).to_string(),
    }
}

pub fn group_label(net: &Network, id: GroupId) -> String {
    format!("{}/{}/{}#{}", id.key, id.tag, net.name(id.port), id.copy)
}

pub fn actions_label(net: &Network, actions: &[Action]) -> String {
    actions
        .iter()
        .map(|a| match *a {
            Action::Output(p) => format!("output:{}", port_label(net, p)),
            Action::SetTag(t) => format!("tag={t}"),
            Action::PopTag => "pop_tag".to_string(),
            Action::Group(g) => format!("group:{}", group_label(net, g)),
            Action::GotoTable(t) => format!("goto:{t}"),
            Action::Drop => "Drop".to_string(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl FfGroup {
    /// Two-column bucket listing: watch port and actions.
    pub fn bucket_table(&self, net: &Network) -> String {
        let mut s = String::from("Watch Port | Actions\n");
        for b in &self.buckets {
            let _ = writeln!(s, "{} | {}", port_label(net, b.watch), actions_label(net, &b.actions));
        }
        s
    }
}

impl SwitchState {
    /// Sorted listing of all entries and groups.
    pub fn dump(&self, net: &Network) -> String {
        let mut s = format!("switch {}\n", net.name(self.node));
        for e in self.entries() {
            let tag = e.matcher.vlan.map_or("untagged".to_string(), |t| t.to_string());
            let _ = writeln!(
                s,
                "  table {} match {}/{} prio {} : {}",
                e.table,
                e.matcher.key,
                tag,
                e.priority,
                actions_label(net, &e.actions)
            );
        }
        for g in self.groups.values() {
            let _ = writeln!(s, "  group {}", group_label(net, g.id));
            for line in g.bucket_table(net).lines().skip(1) {
                let _ = writeln!(s, "    {line}");
            }
        }
        s
    }
}

/// All switches of a network plus link liveness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fabric {
    switches: Vec<SwitchState>,
    down: LinkSet,
}

impl Fabric {
    pub fn new(net: &Network) -> Self {
        Fabric { switches: net.nodes().map(SwitchState::new).collect(), down: LinkSet::new() }
    }

    pub fn switch(&self, n: Node) -> &SwitchState {
        &self.switches[n.index()]
    }

    pub fn switch_mut(&mut self, n: Node) -> &mut SwitchState {
        &mut self.switches[n.index()]
    }

    pub fn switches(&self) -> impl Iterator<Item = &SwitchState> + '_ {
        self.switches.iter()
    }

    pub fn down_links(&self) -> &LinkSet {
        &self.down
    }

    /// Marks a link up or down; both endpoint ports change at once.
    pub fn set_link_state(&mut self, net: &Network, link: Link, up: bool) -> Result<(), DataplaneError> {
        if !net.has_link(link) {
            return Err(DataplaneError::UnknownLink(link));
        }
        let (a, b) = link.endpoints();
        self.switches[a.index()].set_port_state(b, up);
        self.switches[b.index()].set_port_state(a, up);
        if up {
            self.down.remove(&link);
        } else {
            self.down.insert(link);
        }
        Ok(())
    }

    /// Recompiles all state of the group from its trees.
    pub fn install_group(&mut self, gs: &GroupState) -> Result<(), DataplaneError> {
        let key = gs.key();
        for sw in &mut self.switches {
            sw.clear_key(key);
        }
        self.switches[gs.source().index()].install_entry(FlowEntry {
            table: 0,
            matcher: FlowMatch { key, vlan: None },
            priority: DROP_PRIORITY,
            actions: vec![Action::Drop],
        })?;
        let mut trees = Vec::new();
        gs.primary().walk(&mut |_, t| trees.push(t));
        for t in trees {
            for x in t.nodes() {
                compile_node(&mut self.switches[x.index()], key, t)?;
            }
        }
        Ok(())
    }

    pub fn remove_group(&mut self, key: GroupKey) {
        for sw in &mut self.switches {
            sw.clear_key(key);
        }
    }

    /// Recompiles the switches a route touches in the tree at `addr`, plus
    /// the switch whose failover groups lead into that tree.
    pub fn compile_path(
        &mut self,
        gs: &GroupState,
        addr: &TreeAddr,
        tag: Tag,
        nodes: impl IntoIterator<Item = Node>,
    ) -> Result<(), DataplaneError> {
        let key = gs.key();
        let tree = gs.primary().descend(addr);
        for x in nodes {
            let sw = &mut self.switches[x.index()];
            match tree {
                Some(t) => compile_node(sw, key, t)?,
                None => sw.clear(FlowMatch { key, vlan: tag.vlan() }),
            }
        }
        // Failover chains for a backup tree live in the nearest ancestor
        // tree that does not share its root.
        let mut a = addr.clone();
        while let Some(&last) = a.0.last() {
            let x = last.from;
            let parent = a.parent().unwrap();
            if let Some(pt) = gs.primary().descend(&parent) {
                compile_node(&mut self.switches[x.index()], key, pt)?;
                if parent.depth() == 0 || pt.root() != x {
                    break;
                }
            }
            a = parent;
        }
        Ok(())
    }

    /// Replays installation notices against the final group state.
    pub fn apply_events(&mut self, gs: &GroupState, events: &[SinkEvent]) -> Result<(), DataplaneError> {
        for ev in events {
            let (SinkEvent::Install { tree, tag, edges, subscriber }
            | SinkEvent::Remove { tree, tag, edges, subscriber }) = ev;
            let nodes: BTreeSet<Node> =
                edges.iter().flat_map(|e| [e.from, e.to]).chain([*subscriber]).collect();
            self.compile_path(gs, tree, *tag, nodes)?;
        }
        Ok(())
    }

    pub fn dump(&self, net: &Network) -> String {
        self.switches.iter().map(|s| s.dump(net)).collect()
    }
}

/// Builds the entries and groups of tree `t` at switch `sw`.
pub fn compile_node(sw: &mut SwitchState, key: GroupKey, t: &MulticastTree) -> Result<(), DataplaneError> {
    let x = sw.node();
    let matcher = FlowMatch { key, vlan: t.tag().vlan() };
    sw.clear(matcher);
    // Packets never enter a backup tree at its root: the failover group of
    // the parent tree pushes them straight onto the first hops.
    if !t.contains(x) || (!t.tag().is_primary() && x == t.root()) {
        return Ok(());
    }

    let mut group_ids = Vec::new();
    let mut outputs = Vec::new();
    for c in t.children_of(x) {
        let protected = t.backup(crate::netgraph::Edge::new(x, c)).is_some_and(|b| !b.is_empty());
        if protected {
            let id = GroupId { key, tag: t.tag(), port: c, copy: 0 };
            sw.add_group(FfGroup {
                id,
                buckets: vec![Bucket { watch: PortId::Peer(c), actions: vec![Action::Output(PortId::Peer(c))] }],
            })?;
            group_ids.push(id);
            extend_chain(sw, id, t, c, &mut group_ids)?;
        } else {
            outputs.push(Action::Output(PortId::Peer(c)));
        }
    }
    let mut pop = Vec::new();
    if t.is_terminal(x) {
        if t.tag().is_primary() {
            outputs.push(Action::Output(PortId::Host));
        } else {
            pop = vec![Action::PopTag, Action::Output(PortId::Host)];
        }
    }

    let lists: Vec<Vec<Action>> = [group_ids.into_iter().map(Action::Group).collect(), outputs, pop]
        .into_iter()
        .filter(|l: &Vec<Action>| !l.is_empty())
        .collect();
    let n = lists.len();
    for (i, mut actions) in lists.into_iter().enumerate() {
        if i + 1 < n {
            actions.push(Action::GotoTable(i as u8 + 1));
        }
        sw.install_entry(FlowEntry { table: i as u8, matcher, priority: FORWARD_PRIORITY, actions })?;
    }
    Ok(())
}

/// Appends the backups of edge `x -> port` in `t` behind the bucket watching
/// `port`, following nested backup trees rooted at the same switch.
fn extend_chain(
    sw: &mut SwitchState,
    group: GroupId,
    t: &MulticastTree,
    port: Node,
    ids: &mut Vec<GroupId>,
) -> Result<(), DataplaneError> {
    let x = sw.node();
    let Some(b) = t.backup(crate::netgraph::Edge::new(x, port)) else {
        return Ok(());
    };
    let hops: Vec<Node> = b.children_of(x).collect();
    for q in hops {
        let gid = sw.add_backup_bucket(group, PortId::Peer(port), PortId::Peer(q), b.tag())?;
        if gid != group {
            ids.push(gid);
        }
        extend_chain(sw, gid, b, q, ids)?;
    }
    Ok(())
}
