//! F-link fault tolerance for one multicast group.
//!
//! A join first installs the primary route, then walks a FIFO of work items.
//! Each item protects every edge of a freshly installed route with a backup
//! tree rooted at the edge's upstream switch and computed with the down-set
//! of that branch removed from the graph. Items are re-enqueued until the
//! down-set reaches the configured tolerance.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::netgraph::{Edge, LinkSet, Network, Node};
use crate::treealg::{JoinPath, JoinStrategy, MulticastTree, Strategy, Tag, TreeAddr, TreeError};

/// Largest usable VLAN id; 0 is the untagged primary tree and 4095 is reserved.
pub const MAX_TAG: u16 = 4094;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtectError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("all {MAX_TAG} VLAN tags of the group are in use")]
    TagsExhausted,
}

/// Identifies one (source, multicast address) pair on the switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct GroupKey(pub u32);

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtectionConfig {
    pub fault_tolerance: usize,
    pub strategy: Strategy,
}

impl ProtectionConfig {
    pub fn new(fault_tolerance: usize, strategy: Strategy) -> Self {
        ProtectionConfig { fault_tolerance, strategy }
    }
}

/// Pending protection work: a route just added to `tree`, whose edges still
/// need backup routes. `down` holds the links assumed failed on this branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkItem {
    pub path: JoinPath,
    pub tree: TreeAddr,
    pub down: LinkSet,
}

/// A subscriber that could not be routed around `down` when it joined.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Absence {
    pub subscriber: Node,
    pub down: LinkSet,
}

/// Receives route installation and removal notices, in the order the
/// controller would push them to switches.
pub trait FlowSink {
    /// `edges` are only the edges the tree did not carry yet.
    fn install(&mut self, tree: &TreeAddr, tag: Tag, edges: &[Edge], subscriber: Node);
    fn remove(&mut self, tree: &TreeAddr, tag: Tag, edges: &[Edge], subscriber: Node);
}

impl FlowSink for () {
    fn install(&mut self, _: &TreeAddr, _: Tag, _: &[Edge], _: Node) {}
    fn remove(&mut self, _: &TreeAddr, _: Tag, _: &[Edge], _: Node) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkEvent {
    Install { tree: TreeAddr, tag: Tag, edges: Vec<Edge>, subscriber: Node },
    Remove { tree: TreeAddr, tag: Tag, edges: Vec<Edge>, subscriber: Node },
}

impl SinkEvent {
    pub fn tree(&self) -> &TreeAddr {
        match self {
            SinkEvent::Install { tree, .. } | SinkEvent::Remove { tree, .. } => tree,
        }
    }
}

/// Keeps every notice, in order.
#[derive(Debug, Default, Clone)]
pub struct RecordingSink {
    pub events: Vec<SinkEvent>,
}

impl FlowSink for RecordingSink {
    fn install(&mut self, tree: &TreeAddr, tag: Tag, edges: &[Edge], subscriber: Node) {
        self.events.push(SinkEvent::Install { tree: tree.clone(), tag, edges: edges.to_vec(), subscriber });
    }

    fn remove(&mut self, tree: &TreeAddr, tag: Tag, edges: &[Edge], subscriber: Node) {
        self.events.push(SinkEvent::Remove { tree: tree.clone(), tag, edges: edges.to_vec(), subscriber });
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinCounters {
    /// Strategy invocations made by the most recent `protect_join`.
    pub last: usize,
    pub total: usize,
}

/// Protection state of one multicast group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupState {
    key: GroupKey,
    source: Node,
    primary: MulticastTree,
    config: ProtectionConfig,
    next_tag: u16,
    absences: BTreeSet<Absence>,
    joins: JoinCounters,
}

impl GroupState {
    pub fn new(key: GroupKey, source: Node, config: ProtectionConfig) -> Self {
        GroupState {
            key,
            source,
            primary: MulticastTree::new(source, Tag::PRIMARY),
            config,
            next_tag: 1,
            absences: BTreeSet::new(),
            joins: JoinCounters::default(),
        }
    }

    pub fn key(&self) -> GroupKey {
        self.key
    }

    pub fn source(&self) -> Node {
        self.source
    }

    pub fn primary(&self) -> &MulticastTree {
        &self.primary
    }

    pub fn config(&self) -> ProtectionConfig {
        self.config
    }

    pub fn subscribers(&self) -> &BTreeSet<Node> {
        self.primary.terminals()
    }

    /// Branches left unprotected because no backup route existed.
    pub fn absences(&self) -> &BTreeSet<Absence> {
        &self.absences
    }

    pub fn joins(&self) -> &JoinCounters {
        &self.joins
    }

    /// Tags handed out so far; tags are never reused.
    pub fn tags_allocated(&self) -> usize {
        usize::from(self.next_tag - 1)
    }

    pub fn next_tag(&self) -> u16 {
        self.next_tag
    }

    /// Backup trees that currently carry at least one edge.
    pub fn tags_in_use(&self) -> usize {
        let mut n = 0;
        self.primary.walk(&mut |addr, t| {
            if addr.depth() > 0 && !t.is_empty() {
                n += 1;
            }
        });
        n
    }

    pub fn fresh_tag(&mut self) -> Result<Tag, ProtectError> {
        if self.next_tag > MAX_TAG {
            return Err(ProtectError::TagsExhausted);
        }
        let t = Tag(self.next_tag);
        self.next_tag += 1;
        Ok(t)
    }

    /// Adds `v` to the group and builds its protection. Returns `Ok(false)`
    /// when `v` cannot join (already subscribed or unreachable).
    pub fn protect_join(
        &mut self,
        g: &Network,
        v: Node,
        sink: &mut impl FlowSink,
    ) -> Result<bool, ProtectError> {
        let strategy = self.config.strategy;
        let f = self.config.fault_tolerance;
        self.joins.last = 1;
        self.joins.total += 1;

        let Some(path) = strategy.join(&g.view(), &self.primary, v)? else {
            return Ok(false);
        };
        let primary = TreeAddr::primary();
        sink.install(&primary, Tag::PRIMARY, path.new_edges(), v);
        self.primary.apply_path(&path)?;

        let mut queue = VecDeque::new();
        if f > 0 {
            queue.push_back(WorkItem { path, tree: primary, down: LinkSet::new() });
        }
        while let Some(item) = queue.pop_front() {
            for &e in item.path.edges() {
                let needs_tree = self
                    .primary
                    .descend(&item.tree)
                    .expect("work item tree exists")
                    .backup(e)
                    .is_none();
                if needs_tree {
                    let tag = self.fresh_tag()?;
                    self.primary.descend_mut(&item.tree).unwrap().insert_backup(e, tag);
                }
                let mut down = item.down.clone();
                down.insert(e.link());
                let addr = item.tree.child(e);
                let backup = self.primary.descend_mut(&addr).unwrap();

                self.joins.last += 1;
                self.joins.total += 1;
                let view = g.without_links(&down).expect("down-set links exist");
                match strategy.join(&view, backup, v)? {
                    Some(b_path) => {
                        sink.install(&addr, backup.tag(), b_path.new_edges(), v);
                        backup.apply_path(&b_path)?;
                        if down.len() < f {
                            queue.push_back(WorkItem { path: b_path, tree: addr, down });
                        }
                    }
                    None => {
                        debug_assert!(!backup.is_terminal(v));
                        self.absences.insert(Absence { subscriber: v, down });
                    }
                }
            }
        }
        Ok(true)
    }

    /// Removes `v` from the group: primary routes first, then every backup
    /// tree on its former route, recursively. Returns false when `v` was not
    /// a subscriber.
    pub fn protect_leave(&mut self, v: Node, sink: &mut impl FlowSink) -> bool {
        let left = leave_tree(&mut self.primary, &mut TreeAddr::primary(), v, sink);
        if left {
            self.absences.retain(|a| a.subscriber != v);
        }
        left
    }
}

fn leave_tree(tree: &mut MulticastTree, addr: &mut TreeAddr, v: Node, sink: &mut impl FlowSink) -> bool {
    if v == tree.root() || !tree.is_terminal(v) {
        return false;
    }
    // Snapshot before anything is pruned.
    let route = tree.path_to(v).expect("terminal is in the tree");
    tree.remove_terminal(v);

    // Edges that lead only to v.
    let mut doomed = Vec::new();
    let mut cur = v;
    let mut below: Option<Node> = None;
    while cur != tree.root() {
        let other_children = tree.children_of(cur).filter(|&c| Some(c) != below).count();
        if other_children > 0 || tree.is_terminal(cur) {
            break;
        }
        let pre = tree.parent_of(cur).expect("non-root node has a parent");
        doomed.push(Edge::new(pre, cur));
        below = Some(cur);
        cur = pre;
    }
    doomed.reverse();
    sink.remove(addr, tree.tag(), &doomed, v);

    for &e in &route {
        if let Some(b) = tree.backup_mut(e) {
            addr.0.push(e);
            leave_tree(b, addr, v, sink);
            addr.0.pop();
        }
    }

    for &e in doomed.iter().rev() {
        debug_assert!(tree.backup(e).is_none_or(|b| b.is_empty()), "backup of a pruned edge is empty");
        tree.prune_leaf(e);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Network {
        Network::from_parts(["A", "B", "C"], [("A", "B"), ("B", "C"), ("A", "C")]).unwrap()
    }

    #[test]
    fn f0_only_primary() {
        let g = triangle();
        let (a, c) = (g.node("A").unwrap(), g.node("C").unwrap());
        let mut gs = GroupState::new(GroupKey(1), a, ProtectionConfig::new(0, Strategy::Spt));
        let mut sink = RecordingSink::default();
        assert!(gs.protect_join(&g, c, &mut sink).unwrap());
        assert_eq!(sink.events.len(), 1);
        assert_eq!(gs.joins().last, 1);
        assert_eq!(gs.tags_allocated(), 0);
        assert_eq!(gs.primary().backups().count(), 0);
    }

    #[test]
    fn triangle_backup() {
        let g = triangle();
        let (a, b, c) = (g.node("A").unwrap(), g.node("B").unwrap(), g.node("C").unwrap());
        let mut gs = GroupState::new(GroupKey(1), a, ProtectionConfig::new(1, Strategy::Spt));
        let mut sink = RecordingSink::default();
        assert!(gs.protect_join(&g, c, &mut sink).unwrap());
        let ac = Edge::new(a, c);
        assert!(gs.primary().has_edge(ac));
        let backup = gs.primary().backup(ac).unwrap();
        assert_eq!(backup.root(), a);
        assert_eq!(backup.tag(), Tag(1));
        assert_eq!(backup.path_to(c).unwrap(), vec![Edge::new(a, b), Edge::new(b, c)]);
        // Primary notice precedes the backup notice.
        assert_eq!(sink.events[0].tree(), &TreeAddr::primary());
        assert_eq!(sink.events[1].tree(), &TreeAddr::primary().child(ac));
    }

    #[test]
    fn complete_graph_one_tree_per_subscriber() {
        let g = Network::complete_graph(9).unwrap();
        let root = Node::from_index(0);
        let mut gs = GroupState::new(GroupKey(1), root, ProtectionConfig::new(1, Strategy::Spt));
        for v in g.nodes().skip(1) {
            assert!(gs.protect_join(&g, v, &mut ()).unwrap());
        }
        assert_eq!(gs.tags_allocated(), 8);
        assert_eq!(gs.primary().backups().count(), 8);
        assert!(gs.absences().is_empty());
    }

    #[test]
    fn fresh_tag_bounds() {
        let mut gs = GroupState::new(GroupKey(0), Node::from_index(0), ProtectionConfig::new(1, Strategy::Spt));
        assert_eq!(gs.fresh_tag(), Ok(Tag(1)));
        for expect in 2..=MAX_TAG {
            assert_eq!(gs.fresh_tag(), Ok(Tag(expect)));
        }
        assert_eq!(gs.tags_allocated(), 4094);
        assert_eq!(gs.fresh_tag(), Err(ProtectError::TagsExhausted));
    }

    #[test]
    fn leave_guards() {
        let g = triangle();
        let (a, b, c) = (g.node("A").unwrap(), g.node("B").unwrap(), g.node("C").unwrap());
        let mut gs = GroupState::new(GroupKey(1), a, ProtectionConfig::new(1, Strategy::Spt));
        gs.protect_join(&g, c, &mut ()).unwrap();
        let snap = gs.clone();
        let mut sink = RecordingSink::default();
        assert!(!gs.protect_leave(a, &mut sink));
        assert!(!gs.protect_leave(b, &mut sink));
        assert_eq!(gs, snap);
        assert!(sink.events.is_empty());
    }

    #[test]
    fn join_then_leave_restores_trees() {
        let g = Network::geant();
        let at = g.node("AT").unwrap();
        for f in 0..=2 {
            for strategy in [Strategy::Spt, Strategy::Dst] {
                let mut gs = GroupState::new(GroupKey(1), at, ProtectionConfig::new(f, strategy));
                for name in ["PT", "FI", "IE"] {
                    gs.protect_join(&g, g.node(name).unwrap(), &mut ()).unwrap();
                }
                let before = gs.clone();
                let v = g.node("IS").unwrap();
                let mut sink = RecordingSink::default();
                assert!(gs.protect_join(&g, v, &mut sink).unwrap());
                assert!(gs.protect_leave(v, &mut sink));
                assert_eq!(gs.primary(), before.primary(), "F={f} {strategy}");
                assert_eq!(gs.absences(), before.absences());
                assert!(gs.next_tag() >= before.next_tag());
            }
        }
    }

    #[test]
    fn leave_removes_primary_before_backups() {
        let g = triangle();
        let (a, c) = (g.node("A").unwrap(), g.node("C").unwrap());
        let mut gs = GroupState::new(GroupKey(1), a, ProtectionConfig::new(1, Strategy::Spt));
        gs.protect_join(&g, c, &mut ()).unwrap();
        let mut sink = RecordingSink::default();
        assert!(gs.protect_leave(c, &mut sink));
        let trees: Vec<_> = sink.events.iter().map(|e| e.tree().depth()).collect();
        assert_eq!(trees, vec![0, 1]);
        assert!(gs.primary().is_empty());
        assert!(gs.subscribers().is_empty());
    }

    #[test]
    fn leave_keeps_shared_route() {
        // r - a - b line: b's route passes a, so a leaving removes nothing.
        let g = Network::from_parts(["a", "b", "r"], [("r", "a"), ("a", "b")]).unwrap();
        let (r, a, b) = (g.node("r").unwrap(), g.node("a").unwrap(), g.node("b").unwrap());
        let mut gs = GroupState::new(GroupKey(1), r, ProtectionConfig::new(0, Strategy::Spt));
        gs.protect_join(&g, b, &mut ()).unwrap();
        gs.protect_join(&g, a, &mut ()).unwrap();
        assert!(gs.protect_leave(a, &mut ()));
        assert_eq!(gs.primary().edge_count(), 2);
        assert!(gs.protect_leave(b, &mut ()));
        assert_eq!(gs.primary().edge_count(), 0);
    }

    #[test]
    fn unreachable_backup_is_recorded() {
        // A line has no alternative routes at all.
        let g = Network::from_parts(["a", "b", "r"], [("r", "a"), ("a", "b")]).unwrap();
        let (r, b) = (g.node("r").unwrap(), g.node("b").unwrap());
        let mut gs = GroupState::new(GroupKey(1), r, ProtectionConfig::new(2, Strategy::Spt));
        assert!(gs.protect_join(&g, b, &mut ()).unwrap());
        assert_eq!(gs.absences().len(), 2);
        assert_eq!(gs.tags_in_use(), 0);
        assert_eq!(gs.tags_allocated(), 2);
    }
}
