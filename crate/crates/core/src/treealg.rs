//! Multicast trees and the join strategies that grow them.
//!
//! A [`MulticastTree`] is a rooted arborescence that also owns the backup
//! trees protecting each of its edges, so the whole protection structure of a
//! group is one recursive value. Backup trees are addressed by the chain of
//! protected edges leading to them ([`TreeAddr`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::netgraph::{path_edges, Edge, Link, NetView, Node, UnitCost};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("node index {0} is not in the network")]
    UnknownNode(usize),
    #[error("path does not start inside the tree at {0:?}")]
    Detached(Node),
    #[error("path edges do not chain at {0:?}")]
    Broken(Edge),
    #[error("edge {0:?} would give {1:?} a second parent")]
    SecondParent(Edge, Node),
}

/// VLAN tag of a tree. Tag 0 is the untagged primary tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Tag(pub u16);

impl Tag {
    pub const PRIMARY: Tag = Tag(0);

    pub fn is_primary(self) -> bool {
        self.0 == 0
    }

    /// The VLAN header value carried by packets of this tree.
    pub fn vlan(self) -> Option<Tag> {
        (!self.is_primary()).then_some(self)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Chain of protected edges from the primary tree down to a backup tree.
/// The empty address is the primary tree itself.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TreeAddr(pub Vec<Edge>);

impl TreeAddr {
    pub fn primary() -> Self {
        TreeAddr(Vec::new())
    }

    pub fn child(&self, e: Edge) -> Self {
        let mut v = self.0.clone();
        v.push(e);
        TreeAddr(v)
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Links assumed failed for the tree at this address.
    pub fn down_links(&self) -> BTreeSet<Link> {
        self.0.iter().map(|e| e.link()).collect()
    }

    pub fn parent(&self) -> Option<TreeAddr> {
        let (_, rest) = self.0.split_last()?;
        Some(TreeAddr(rest.to_vec()))
    }
}

/// Result of a join strategy: the full root-to-subscriber route through the
/// tree once the subscriber is attached. `edges[new_from..]` are the edges
/// the tree does not have yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinPath {
    edges: Vec<Edge>,
    new_from: usize,
    target: Node,
}

impl JoinPath {
    pub fn new(edges: Vec<Edge>, new_from: usize, target: Node) -> Self {
        debug_assert!(new_from <= edges.len());
        JoinPath { edges, new_from, target }
    }

    /// A path that adds nothing.
    pub fn empty(at: Node) -> Self {
        JoinPath { edges: Vec::new(), new_from: 0, target: at }
    }

    /// Every edge from the root to the target.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges that would be added to the tree.
    pub fn new_edges(&self) -> &[Edge] {
        &self.edges[self.new_from..]
    }

    pub fn target(&self) -> Node {
        self.target
    }

    pub fn hops(&self) -> usize {
        self.edges.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MulticastTree {
    root: Node,
    tag: Tag,
    parent: BTreeMap<Node, Node>,
    children: BTreeMap<Node, BTreeSet<Node>>,
    terminals: BTreeSet<Node>,
    backups: BTreeMap<Edge, MulticastTree>,
}

impl MulticastTree {
    /// A tree holding only its root.
    pub fn new(root: Node, tag: Tag) -> Self {
        MulticastTree {
            root,
            tag,
            parent: BTreeMap::new(),
            children: BTreeMap::from([(root, BTreeSet::new())]),
            terminals: BTreeSet::new(),
            backups: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> Node {
        self.root
    }

    pub fn tag(&self) -> Tag {
        self.tag
    }

    pub fn contains(&self, n: Node) -> bool {
        self.children.contains_key(&n)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.children.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.children.len()
    }

    pub fn edge_count(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.parent.iter().map(|(&c, &p)| Edge::new(p, c))
    }

    pub fn has_edge(&self, e: Edge) -> bool {
        self.parent.get(&e.to) == Some(&e.from)
    }

    /// Whether the undirected link is used by the tree in either direction.
    pub fn uses_link(&self, l: Link) -> bool {
        let (a, b) = l.endpoints();
        self.parent.get(&a) == Some(&b) || self.parent.get(&b) == Some(&a)
    }

    pub fn parent_of(&self, n: Node) -> Option<Node> {
        self.parent.get(&n).copied()
    }

    pub fn children_of(&self, n: Node) -> impl Iterator<Item = Node> + '_ {
        self.children.get(&n).into_iter().flatten().copied()
    }

    pub fn out_degree(&self, n: Node) -> usize {
        self.children.get(&n).map_or(0, |c| c.len())
    }

    /// Subscribers served by this tree.
    pub fn terminals(&self) -> &BTreeSet<Node> {
        &self.terminals
    }

    pub fn is_terminal(&self, n: Node) -> bool {
        self.terminals.contains(&n)
    }

    /// Edges from the root down to `n`, or `None` if `n` is not in the tree.
    pub fn path_to(&self, n: Node) -> Option<Vec<Edge>> {
        if !self.contains(n) {
            return None;
        }
        let mut edges = Vec::new();
        let mut cur = n;
        while let Some(&p) = self.parent.get(&cur) {
            edges.push(Edge::new(p, cur));
            cur = p;
        }
        edges.reverse();
        Some(edges)
    }

    pub fn depth_of(&self, n: Node) -> Option<usize> {
        self.path_to(n).map(|p| p.len())
    }

    pub fn backup(&self, e: Edge) -> Option<&MulticastTree> {
        self.backups.get(&e)
    }

    pub fn backup_mut(&mut self, e: Edge) -> Option<&mut MulticastTree> {
        self.backups.get_mut(&e)
    }

    pub fn backups(&self) -> impl Iterator<Item = (Edge, &MulticastTree)> + '_ {
        self.backups.iter().map(|(&e, t)| (e, t))
    }

    /// Attaches an empty backup tree rooted at `e.from`. Returns false if one
    /// already exists.
    pub fn insert_backup(&mut self, e: Edge, tag: Tag) -> bool {
        debug_assert!(self.has_edge(e));
        if self.backups.contains_key(&e) {
            return false;
        }
        self.backups.insert(e, MulticastTree::new(e.from, tag));
        true
    }

    pub fn remove_backup(&mut self, e: Edge) -> Option<MulticastTree> {
        self.backups.remove(&e)
    }

    pub fn descend(&self, addr: &TreeAddr) -> Option<&MulticastTree> {
        addr.0.iter().try_fold(self, |t, e| t.backup(*e))
    }

    pub fn descend_mut(&mut self, addr: &TreeAddr) -> Option<&mut MulticastTree> {
        addr.0.iter().try_fold(self, |t, e| t.backup_mut(*e))
    }

    /// Visits this tree and every nested backup tree, parents first.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&TreeAddr, &'a MulticastTree)) {
        fn go<'a>(
            t: &'a MulticastTree,
            addr: &mut TreeAddr,
            f: &mut impl FnMut(&TreeAddr, &'a MulticastTree),
        ) {
            f(addr, t);
            for (&e, b) in &t.backups {
                addr.0.push(e);
                go(b, addr, f);
                addr.0.pop();
            }
        }
        go(self, &mut TreeAddr::primary(), f)
    }

    /// Adds the path's edges and makes its target a terminal. Edges already
    /// present are skipped, so re-applying a path changes nothing.
    pub fn apply_path(&mut self, path: &JoinPath) -> Result<(), TreeError> {
        let edges = path.edges();
        if let Some(first) = edges.first() {
            if !self.contains(first.from) {
                return Err(TreeError::Detached(first.from));
            }
        }
        if let Some(w) = edges.windows(2).find(|w| w[0].to != w[1].from) {
            return Err(TreeError::Broken(w[1]));
        }
        let mut added = BTreeSet::new();
        for &e in edges {
            if self.has_edge(e) {
                continue;
            }
            if self.contains(e.to) || !added.insert(e.to) {
                return Err(TreeError::SecondParent(e, e.to));
            }
        }
        for &e in edges {
            if self.has_edge(e) {
                continue;
            }
            self.parent.insert(e.to, e.from);
            self.children.entry(e.from).or_default().insert(e.to);
            self.children.entry(e.to).or_default();
        }
        if path.target() != self.root {
            self.terminals.insert(path.target());
        }
        Ok(())
    }

    pub(crate) fn remove_terminal(&mut self, n: Node) -> bool {
        self.terminals.remove(&n)
    }

    /// Removes leaf edge `e` together with its backup tree.
    pub(crate) fn prune_leaf(&mut self, e: Edge) {
        debug_assert!(self.has_edge(e) && self.out_degree(e.to) == 0);
        self.parent.remove(&e.to);
        self.children.remove(&e.to);
        if let Some(c) = self.children.get_mut(&e.from) {
            c.remove(&e.to);
        }
        self.backups.remove(&e);
    }

    fn check_node(&self, g: &NetView<'_>, v: Node) -> Result<(), TreeError> {
        if g.network().contains(v) && g.network().contains(self.root) {
            Ok(())
        } else {
            Err(TreeError::UnknownNode(v.index()))
        }
    }

    /// Shared front half of every strategy: `None` when `v` is already
    /// served, the existing route when `v` is a transit node of the tree.
    fn existing_route(&self, v: Node) -> Option<Option<JoinPath>> {
        if v == self.root || self.is_terminal(v) {
            return Some(None);
        }
        if self.contains(v) {
            let edges = self.path_to(v).unwrap();
            let n = edges.len();
            return Some(Some(JoinPath::new(edges, n, v)));
        }
        None
    }
}

/// A tree construction algorithm that attaches one subscriber at a time
/// without rearranging the tree. Implementations must not mutate `t`.
pub trait JoinStrategy {
    fn join(&self, g: &NetView<'_>, t: &MulticastTree, v: Node) -> Result<Option<JoinPath>, TreeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Minimum-hop shortest paths tree, biased towards existing tree links.
    Spt,
    /// Greedy dynamic Steiner tree: attach to the nearest tree node.
    Dst,
}

impl JoinStrategy for Strategy {
    fn join(&self, g: &NetView<'_>, t: &MulticastTree, v: Node) -> Result<Option<JoinPath>, TreeError> {
        match self {
            Strategy::Spt => spt_join(g, t, v),
            Strategy::Dst => dst_join(g, t, v),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Spt => "spt",
            Strategy::Dst => "dst",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "spt" => Ok(Strategy::Spt),
            "dst" => Ok(Strategy::Dst),
            other => Err(format!("unknown tree strategy `{other}`")),
        }
    }
}

/// Scaled link costs for the shortest paths tree. With `m` tree edges the
/// bias is `1/(m+1)`; multiplying through by `m+1` gives tree links cost `m`
/// and all other links cost `m+1`, keeping comparisons exact.
pub fn spt_costs(t: &MulticastTree) -> impl Fn(Link) -> u64 + '_ {
    let m = t.edge_count() as u64;
    move |l| if t.uses_link(l) { m } else { m + 1 }
}

/// Minimum-hop path from the tree root to `v`, reusing as many tree links as
/// possible.
pub fn spt_join(g: &NetView<'_>, t: &MulticastTree, v: Node) -> Result<Option<JoinPath>, TreeError> {
    t.check_node(g, v)?;
    if let Some(r) = t.existing_route(v) {
        return Ok(r);
    }
    let costs = spt_costs(t);
    let Some(nodes) = g.shortest_path(t.root(), v, &costs) else {
        return Ok(None);
    };
    // Last node of the route that the tree already holds.
    let attach_idx = nodes.iter().rposition(|n| t.contains(*n)).unwrap();
    let attach = nodes[attach_idx];
    let mut edges = t.path_to(attach).unwrap();
    debug_assert_eq!(edges, path_edges(&nodes[..=attach_idx]), "tree route is the biased optimum");
    let new_from = edges.len();
    edges.extend(path_edges(&nodes[attach_idx..]));
    Ok(Some(JoinPath::new(edges, new_from, v)))
}

/// Attaches `v` through a shortest path from the nearest tree node. Ties
/// between equally near tree nodes go to the smallest node.
pub fn dst_join(g: &NetView<'_>, t: &MulticastTree, v: Node) -> Result<Option<JoinPath>, TreeError> {
    t.check_node(g, v)?;
    if let Some(r) = t.existing_route(v) {
        return Ok(r);
    }
    let dist = g.bfs_distances(v);
    let Some(w) = t
        .nodes()
        .filter_map(|n| dist[n.index()].map(|d| (d, n)))
        .min()
        .map(|(_, n)| n)
    else {
        return Ok(None);
    };
    let segment = g.shortest_path(w, v, &UnitCost).expect("w reaches v");
    let mut edges = t.path_to(w).unwrap();
    let new_from = edges.len();
    edges.extend(path_edges(&segment));
    Ok(Some(JoinPath::new(edges, new_from, v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::Network;

    fn net(nodes: &[&str], links: &[(&str, &str)]) -> Network {
        Network::from_parts(nodes.iter().copied(), links.iter().copied()).unwrap()
    }

    fn id(g: &Network, s: &str) -> Node {
        g.node(s).unwrap()
    }

    #[test]
    fn member_or_root_is_absent() {
        let g = net(&["A", "B"], &[("A", "B")]);
        let (a, b) = (id(&g, "A"), id(&g, "B"));
        let mut t = MulticastTree::new(a, Tag::PRIMARY);
        for s in [Strategy::Spt, Strategy::Dst] {
            assert_eq!(s.join(&g.view(), &t, a).unwrap(), None);
        }
        let p = spt_join(&g.view(), &t, b).unwrap().unwrap();
        assert_eq!(p.new_edges(), &[Edge::new(a, b)]);
        t.apply_path(&p).unwrap();
        for s in [Strategy::Spt, Strategy::Dst] {
            assert_eq!(s.join(&g.view(), &t, b).unwrap(), None);
        }
    }

    #[test]
    fn isolated_subscriber_is_absent() {
        let g = net(&["A", "B", "C"], &[("A", "B")]);
        let t = MulticastTree::new(id(&g, "A"), Tag::PRIMARY);
        assert_eq!(spt_join(&g.view(), &t, id(&g, "C")).unwrap(), None);
        assert_eq!(dst_join(&g.view(), &t, id(&g, "C")).unwrap(), None);
    }

    #[test]
    fn unknown_node_errors() {
        let g = net(&["A", "B"], &[("A", "B")]);
        let t = MulticastTree::new(id(&g, "A"), Tag::PRIMARY);
        let ghost = Node::from_index(7);
        assert_eq!(spt_join(&g.view(), &t, ghost), Err(TreeError::UnknownNode(7)));
        assert_eq!(dst_join(&g.view(), &t, ghost), Err(TreeError::UnknownNode(7)));
    }

    #[test]
    fn spt_bias_prefers_tree_links() {
        // A-B-C-D-A square, tree holds A->B. Both A-B-C and A-D-C have two
        // hops; scaled costs are 1+2=3 versus 2+2=4, so B wins.
        let g = net(&["A", "B", "C", "D"], &[("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")]);
        let (a, b, c) = (id(&g, "A"), id(&g, "B"), id(&g, "C"));
        let mut t = MulticastTree::new(a, Tag::PRIMARY);
        t.apply_path(&JoinPath::new(vec![Edge::new(a, b)], 0, b)).unwrap();
        let p = spt_join(&g.view(), &t, c).unwrap().unwrap();
        assert_eq!(p.new_edges(), &[Edge::new(b, c)]);
        assert_eq!(p.edges(), &[Edge::new(a, b), Edge::new(b, c)]);
    }

    #[test]
    fn spt_bias_beats_name_order() {
        // Same square but the tree holds A->D; without the bias the
        // lexicographic tie-break would route through B.
        let g = net(&["A", "B", "C", "D"], &[("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")]);
        let (a, c, d) = (id(&g, "A"), id(&g, "C"), id(&g, "D"));
        let mut t = MulticastTree::new(a, Tag::PRIMARY);
        t.apply_path(&JoinPath::new(vec![Edge::new(a, d)], 0, d)).unwrap();
        let p = spt_join(&g.view(), &t, c).unwrap().unwrap();
        assert_eq!(p.new_edges(), &[Edge::new(d, c)]);
    }

    #[test]
    fn epsilon_never_reorders_hop_counts() {
        // A k-hop path costs at least k*(m+1) - m; a (k+1)-hop path at most
        // (k+1)*(m+1). Their gap is always positive.
        for m in 1u64..200 {
            for k in 0u64..50 {
                let cheapest_k_plus_1 = (k + 1) * (m + 1) - m.min(k + 1);
                let priciest_k = k * (m + 1);
                assert!(cheapest_k_plus_1 > priciest_k, "m={m} k={k}");
            }
        }
    }

    #[test]
    fn dst_on_a_line() {
        let g = net(&["a", "b", "r"], &[("r", "a"), ("a", "b")]);
        let (r, a, b) = (id(&g, "r"), id(&g, "a"), id(&g, "b"));
        let mut t = MulticastTree::new(r, Tag::PRIMARY);
        t.apply_path(&JoinPath::new(vec![Edge::new(r, a)], 0, a)).unwrap();
        let p = dst_join(&g.view(), &t, b).unwrap().unwrap();
        assert_eq!(p.edges(), &[Edge::new(r, a), Edge::new(a, b)]);
        assert_eq!(p.new_edges(), &[Edge::new(a, b)]);
    }

    #[test]
    fn dst_from_bare_root_matches_spt() {
        let g = Network::geant();
        let root = id(&g, "AT");
        let t = MulticastTree::new(root, Tag::PRIMARY);
        for v in g.nodes().filter(|&v| v != root) {
            assert_eq!(
                dst_join(&g.view(), &t, v).unwrap(),
                spt_join(&g.view(), &t, v).unwrap(),
                "{}",
                g.name(v)
            );
        }
    }

    #[test]
    fn dst_attaches_to_smallest_nearest_node() {
        let k5 = Network::complete_graph(5).unwrap();
        let n = |i| Node::from_index(i);
        let mut t = MulticastTree::new(n(3), Tag::PRIMARY);
        t.apply_path(&JoinPath::new(vec![Edge::new(n(3), n(1))], 0, n(1))).unwrap();
        t.apply_path(&JoinPath::new(vec![Edge::new(n(3), n(4))], 0, n(4))).unwrap();
        let p = dst_join(&k5.view(), &t, n(0)).unwrap().unwrap();
        assert_eq!(p.new_edges(), &[Edge::new(n(1), n(0))]);
        assert_eq!(p.hops(), 2);
    }

    #[test]
    fn transit_node_is_grafted_without_new_edges() {
        let g = net(&["a", "b", "r"], &[("r", "a"), ("a", "b")]);
        let (r, a, b) = (id(&g, "r"), id(&g, "a"), id(&g, "b"));
        let mut t = MulticastTree::new(r, Tag::PRIMARY);
        t.apply_path(&spt_join(&g.view(), &t, b).unwrap().unwrap()).unwrap();
        assert!(t.contains(a) && !t.is_terminal(a));
        let p = spt_join(&g.view(), &t, a).unwrap().unwrap();
        assert!(p.new_edges().is_empty());
        assert_eq!(p.edges(), &[Edge::new(r, a)]);
        t.apply_path(&p).unwrap();
        assert!(t.is_terminal(a));
    }

    #[test]
    fn apply_path_basics() {
        let g = net(&["A", "B", "C"], &[("A", "B"), ("B", "C"), ("A", "C")]);
        let (a, b, c) = (id(&g, "A"), id(&g, "B"), id(&g, "C"));
        let mut t = MulticastTree::new(a, Tag::PRIMARY);
        let before = t.clone();
        t.apply_path(&JoinPath::empty(a)).unwrap();
        assert_eq!(t, before);

        let p = JoinPath::new(vec![Edge::new(a, b)], 0, b);
        t.apply_path(&p).unwrap();
        assert_eq!((t.node_count(), t.edge_count()), (2, 1));
        let once = t.clone();
        t.apply_path(&p).unwrap();
        assert_eq!(t, once);

        let p2 = JoinPath::new(vec![Edge::new(a, c)], 0, c);
        t.apply_path(&p2).unwrap();
        // B already has parent A.
        let bad = JoinPath::new(vec![Edge::new(a, c), Edge::new(c, b)], 1, b);
        assert_eq!(t.apply_path(&bad), Err(TreeError::SecondParent(Edge::new(c, b), b)));
        let detached = JoinPath::new(vec![Edge::new(b, c)], 0, c);
        assert!(t.apply_path(&detached).is_err());
    }

    #[test]
    fn joins_are_pure() {
        let g = Network::geant();
        let root = id(&g, "AT");
        let mut t = MulticastTree::new(root, Tag::PRIMARY);
        let pt = id(&g, "PT");
        t.apply_path(&spt_join(&g.view(), &t, pt).unwrap().unwrap()).unwrap();
        let snap = t.clone();
        for v in g.nodes() {
            let _ = spt_join(&g.view(), &t, v).unwrap();
            let _ = dst_join(&g.view(), &t, v).unwrap();
        }
        assert_eq!(t, snap);
    }

    #[test]
    fn tree_addresses() {
        let (a, b) = (Node::from_index(0), Node::from_index(1));
        let mut t = MulticastTree::new(a, Tag::PRIMARY);
        t.apply_path(&JoinPath::new(vec![Edge::new(a, b)], 0, b)).unwrap();
        assert!(t.insert_backup(Edge::new(a, b), Tag(1)));
        assert!(!t.insert_backup(Edge::new(a, b), Tag(2)));
        let addr = TreeAddr::primary().child(Edge::new(a, b));
        assert_eq!(t.descend(&addr).unwrap().root(), a);
        assert_eq!(t.descend(&addr).unwrap().tag(), Tag(1));
        assert_eq!(addr.down_links().len(), 1);
        assert_eq!(addr.parent(), Some(TreeAddr::primary()));
        let mut seen = 0;
        t.walk(&mut |_, _| seen += 1);
        assert_eq!(seen, 2);
    }
}
