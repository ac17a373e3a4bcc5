#![allow(dead_code)]

use std::collections::VecDeque;

use ffmcast::dataplane::Fabric;
use ffmcast::netgraph::{Network, Node};
use ffmcast::protect::{GroupKey, GroupState, ProtectionConfig};
use ffmcast::treealg::Strategy;
use rand::Rng;

/// Node names and undirected pairs of a random graph on `n` nodes.
pub struct RawGraph {
    pub names: Vec<String>,
    pub pairs: Vec<(usize, usize)>,
}

impl RawGraph {
    pub fn random(rng: &mut impl Rng, n: usize, p: f64, connected: bool) -> Self {
        let names: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    pairs.push((i, j));
                }
            }
        }
        if connected {
            // Random spanning tree on top; duplicates collapse on load.
            for i in 1..n {
                pairs.push((rng.gen_range(0..i), i));
            }
        }
        RawGraph { names, pairs }
    }

    pub fn network(&self) -> Network {
        Network::from_parts(
            self.names.clone(),
            self.pairs.iter().map(|&(a, b)| (self.names[a].clone(), self.names[b].clone())),
        )
        .unwrap()
    }

    /// Plain breadth-first hop distances over the raw pair list.
    pub fn bfs(&self, src: usize) -> Vec<Option<usize>> {
        let n = self.names.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.pairs {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut dist = vec![None; n];
        dist[src] = Some(0);
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            for &w in &adj[u] {
                if dist[w].is_none() {
                    dist[w] = Some(dist[u].unwrap() + 1);
                    q.push_back(w);
                }
            }
        }
        dist
    }
}

pub fn node(net: &Network, name: &str) -> Node {
    net.node(name).unwrap()
}

/// Group with `subs` joined in order and its compiled dataplane.
pub fn build(net: &Network, src: Node, subs: &[Node], f: usize, s: Strategy) -> (GroupState, Fabric) {
    let mut gs = GroupState::new(GroupKey(1), src, ProtectionConfig::new(f, s));
    for &v in subs {
        gs.protect_join(net, v, &mut ()).unwrap();
    }
    let mut fabric = Fabric::new(net);
    fabric.install_group(&gs).unwrap();
    (gs, fabric)
}

pub fn all_but(net: &Network, src: Node) -> Vec<Node> {
    net.nodes().filter(|&n| n != src).collect()
}
