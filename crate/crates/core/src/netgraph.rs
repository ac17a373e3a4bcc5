//! Topology model: switches, undirected links, ingestion and shortest paths.
//!
//! Nodes are stored in lexicographic order of their [`NodeId`], so the dense
//! [`Node`] index doubles as the tie-breaking order used by every algorithm in
//! the crate. A [`NetView`] hides a set of links without touching the
//! underlying [`Network`].

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building or querying a [`Network`].
#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("malformed topology document: {0}")]
    Malformed(String),
    #[error("empty node identifier")]
    EmptyId,
    #[error("duplicate node identifier `{0}`")]
    DuplicateNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("self-loop on node `{0}`")]
    SelfLoop(String),
    #[error("link {0} is not part of the network")]
    UnknownLink(String),
    #[error("a complete graph needs at least 2 nodes, got {0}")]
    TooSmall(usize),
}

/// Human-readable switch identifier, e.g. `AT` or `NL`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Result<Self, GraphError> {
        let id = id.into();
        if id.is_empty() {
            return Err(GraphError::EmptyId);
        }
        Ok(NodeId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Dense index of a switch. Ordering matches the [`NodeId`] ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Node(u32);

impl Node {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Node(i as u32)
    }
}

/// Undirected link, stored with its endpoints in ascending order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link {
    lo: Node,
    hi: Node,
}

impl Link {
    /// Returns `None` for a self-loop.
    pub fn new(a: Node, b: Node) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Link { lo: a, hi: b }),
            std::cmp::Ordering::Greater => Some(Link { lo: b, hi: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn endpoints(self) -> (Node, Node) {
        (self.lo, self.hi)
    }

    pub fn contains(self, n: Node) -> bool {
        self.lo == n || self.hi == n
    }

    /// The endpoint opposite to `n`.
    pub fn other(self, n: Node) -> Node {
        if self.lo == n {
            self.hi
        } else {
            self.lo
        }
    }
}

/// Directed use of a link, parent to child.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: Node,
    pub to: Node,
}

impl Edge {
    pub fn new(from: Node, to: Node) -> Self {
        Edge { from, to }
    }

    pub fn link(self) -> Link {
        Link::new(self.from, self.to).expect("edge endpoints are distinct")
    }
}

pub type LinkSet = BTreeSet<Link>;

/// On-disk topology document: `{"nodes": [...], "links": [[a, b], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub nodes: Vec<String>,
    pub links: Vec<[String; 2]>,
}

/// Link cost used by [`NetView::shortest_path`]. Costs are exact positive
/// integers so that equal-cost comparisons never suffer rounding.
pub trait LinkCost {
    fn cost(&self, link: Link) -> u64;
}

impl<F: Fn(Link) -> u64> LinkCost for F {
    fn cost(&self, link: Link) -> u64 {
        self(link)
    }
}

/// Every link costs 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitCost;

impl LinkCost for UnitCost {
    fn cost(&self, _: Link) -> u64 {
        1
    }
}

/// Undirected switch graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    names: Vec<NodeId>,
    lookup: HashMap<NodeId, Node>,
    adj: Vec<Vec<Node>>,
    links: LinkSet,
}

const GEANT_DOC: &str = include_str!("../data/geant.json");

impl Network {
    /// Builds a network from node names and endpoint pairs. Parallel links
    /// collapse into one; self-loops and unknown endpoints are rejected.
    pub fn from_parts<N, L, S>(nodes: N, links: L) -> Result<Self, GraphError>
    where
        N: IntoIterator<Item = S>,
        L: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut names = nodes
            .into_iter()
            .map(|s| NodeId::new(s))
            .collect::<Result<Vec<_>, _>>()?;
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateNode(w[0].to_string()));
        }
        let lookup: HashMap<NodeId, Node> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), Node::from_index(i)))
            .collect();

        let mut set = LinkSet::new();
        for (a, b) in links {
            let (a, b) = (a.into(), b.into());
            let na = *lookup.get(a.as_str()).ok_or_else(|| GraphError::UnknownNode(a.clone()))?;
            let nb = *lookup.get(b.as_str()).ok_or_else(|| GraphError::UnknownNode(b.clone()))?;
            let link = Link::new(na, nb).ok_or(GraphError::SelfLoop(a))?;
            set.insert(link);
        }

        let mut adj = vec![Vec::new(); names.len()];
        for l in &set {
            let (a, b) = l.endpoints();
            adj[a.index()].push(b);
            adj[b.index()].push(a);
        }
        for list in &mut adj {
            list.sort();
        }
        Ok(Network { names, lookup, adj, links: set })
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Self, GraphError> {
        Network::from_parts(
            doc.nodes.iter().cloned(),
            doc.links.iter().map(|[a, b]| (a.clone(), b.clone())),
        )
    }

    /// Parses a JSON topology document.
    pub fn load_topology(json: &str) -> Result<Self, GraphError> {
        let doc: TopologyDoc =
            serde_json::from_str(json).map_err(|e| GraphError::Malformed(e.to_string()))?;
        Network::from_doc(&doc)
    }

    /// Complete graph on `n` switches named `n00`, `n01`, ... (zero padded so
    /// that name order equals numeric order).
    pub fn complete_graph(n: usize) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooSmall(n));
        }
        let width = (n - 1).to_string().len().max(2);
        let names: Vec<String> = (0..n).map(|i| format!("n{i:0width$}")).collect();
        let mut links = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                links.push((names[i].clone(), names[j].clone()));
            }
        }
        Network::from_parts(names.clone(), links)
    }

    /// Bundled approximation of the GÉANT pan-European research network.
    pub fn geant() -> Self {
        Network::load_topology(GEANT_DOC).expect("bundled topology is valid")
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            nodes: self.names.iter().map(|n| n.to_string()).collect(),
            links: self
                .links
                .iter()
                .map(|l| {
                    let (a, b) = l.endpoints();
                    [self.name(a).to_string(), self.name(b).to_string()]
                })
                .collect(),
        }
    }

    pub fn node(&self, id: &str) -> Result<Node, GraphError> {
        self.lookup
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    pub fn link(&self, a: &str, b: &str) -> Result<Link, GraphError> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let link = Link::new(na, nb).ok_or_else(|| GraphError::SelfLoop(a.to_string()))?;
        if !self.links.contains(&link) {
            return Err(GraphError::UnknownLink(format!("{a}-{b}")));
        }
        Ok(link)
    }

    pub fn name(&self, n: Node) -> &NodeId {
        &self.names[n.index()]
    }

    pub fn contains(&self, n: Node) -> bool {
        n.index() < self.names.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.names.len()).map(Node::from_index)
    }

    pub fn links(&self) -> &LinkSet {
        &self.links
    }

    pub fn has_link(&self, link: Link) -> bool {
        self.links.contains(&link)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn neighbors(&self, n: Node) -> &[Node] {
        &self.adj[n.index()]
    }

    pub fn degree(&self, n: Node) -> usize {
        self.adj[n.index()].len()
    }

    /// `a-b` with names, endpoints in node order.
    pub fn link_label(&self, link: Link) -> String {
        let (a, b) = link.endpoints();
        format!("{}-{}", self.name(a), self.name(b))
    }

    pub fn view(&self) -> NetView<'_> {
        NetView { net: self, removed: None }
    }

    /// Logical subgraph without `removed`. Every removed link must exist.
    pub fn without_links<'a>(&'a self, removed: &'a LinkSet) -> Result<NetView<'a>, GraphError> {
        if let Some(l) = removed.iter().find(|l| !self.links.contains(l)) {
            return Err(GraphError::UnknownLink(format!("{l:?}")));
        }
        Ok(NetView { net: self, removed: Some(removed) })
    }
}

/// Read-only view of a [`Network`] with some links hidden.
#[derive(Debug, Clone, Copy)]
pub struct NetView<'a> {
    net: &'a Network,
    removed: Option<&'a LinkSet>,
}

impl<'a> NetView<'a> {
    pub fn network(&self) -> &'a Network {
        self.net
    }

    pub fn is_up(&self, link: Link) -> bool {
        self.net.has_link(link) && !self.removed.is_some_and(|r| r.contains(&link))
    }

    pub fn neighbors(&self, n: Node) -> impl Iterator<Item = Node> + '_ {
        self.net
            .neighbors(n)
            .iter()
            .copied()
            .filter(move |&m| self.removed.is_none_or(|r| !r.contains(&Link::new(n, m).unwrap())))
    }

    /// Hop distances from `src`; `None` where unreachable.
    pub fn bfs_distances(&self, src: Node) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.net.node_count()];
        dist[src.index()] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()].unwrap();
            for v in self.neighbors(u) {
                if dist[v.index()].is_none() {
                    dist[v.index()] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Dijkstra distances from `src` under `cost`.
    pub fn distances(&self, src: Node, cost: &impl LinkCost) -> Vec<Option<u64>> {
        let mut dist: Vec<Option<u64>> = vec![None; self.net.node_count()];
        let mut heap = BinaryHeap::new();
        dist[src.index()] = Some(0);
        heap.push(Reverse((0u64, src)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if dist[u.index()].is_some_and(|best| d > best) {
                continue;
            }
            for v in self.neighbors(u) {
                let c = cost.cost(Link::new(u, v).unwrap());
                debug_assert!(c > 0, "link costs must be positive");
                let nd = d + c;
                if dist[v.index()].is_none_or(|old| nd < old) {
                    dist[v.index()] = Some(nd);
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        dist
    }

    /// Minimum-cost path from `src` to `dst` as a node list. Among equal-cost
    /// paths the lexicographically smallest node sequence wins.
    pub fn shortest_path(&self, src: Node, dst: Node, cost: &impl LinkCost) -> Option<Vec<Node>> {
        if src == dst {
            return Some(vec![src]);
        }
        // Distances to dst; costs are symmetric so a forward run from dst works.
        let to_dst = self.distances(dst, cost);
        let mut remaining = to_dst[src.index()]?;
        let mut path = vec![src];
        let mut cur = src;
        while cur != dst {
            let next = self
                .neighbors(cur)
                .find(|&v| {
                    let c = cost.cost(Link::new(cur, v).unwrap());
                    to_dst[v.index()].is_some_and(|rest| c + rest == remaining)
                })
                .expect("a shortest-path successor exists");
            remaining = to_dst[next.index()].unwrap();
            path.push(next);
            cur = next;
        }
        Some(path)
    }
}

/// Turns a node sequence into directed edges.
pub fn path_edges(nodes: &[Node]) -> Vec<Edge> {
    nodes.windows(2).map(|w| Edge::new(w[0], w[1])).collect()
}
