//! Factor match graphs: hypergraphs whose nodes are active factors of
//! individual matrices and whose hyperedges group factors that describe the
//! same underlying component.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::datamodel::{EdgeKey, ViewId, ViewLayout};

/// Identity of a factor across graphs: the matrix it belongs to and its
/// column in that matrix's denoised factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey {
    pub edge: EdgeKey,
    pub factor_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactorNode {
    pub edge: EdgeKey,
    pub factor_index: usize,
    /// View whose graph created the node. Not part of the node's identity.
    pub home_view: ViewId,
}

impl FactorNode {
    pub fn key(&self) -> NodeKey {
        NodeKey {
            edge: self.edge,
            factor_index: self.factor_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperedge {
    pub members: BTreeSet<NodeKey>,
    /// Column of the owning view's joint factors this hyperedge was matched
    /// to; `None` for unanchored factors and in merged graphs.
    pub anchor: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct FactorMatchGraph {
    owner: Option<ViewId>,
    nodes: BTreeMap<NodeKey, ViewId>,
    hyperedges: Vec<Hyperedge>,
    membership: HashMap<NodeKey, usize>,
}

impl FactorMatchGraph {
    pub fn new(owner: Option<ViewId>) -> Self {
        Self {
            owner,
            ..Self::default()
        }
    }

    pub fn owner(&self) -> Option<ViewId> {
        self.owner
    }

    /// Adds a hyperedge. Panics if it is empty or shares a node with an
    /// existing hyperedge.
    pub fn add_hyperedge(&mut self, members: &[FactorNode], anchor: Option<usize>) -> usize {
        assert!(!members.is_empty(), "hyperedges are non-empty");
        let idx = self.hyperedges.len();
        let mut set = BTreeSet::new();
        for node in members {
            let key = node.key();
            assert!(
                !self.membership.contains_key(&key) && set.insert(key),
                "node {key:?} already belongs to a hyperedge"
            );
        }
        for node in members {
            self.nodes.insert(node.key(), node.home_view);
            self.membership.insert(node.key(), idx);
        }
        self.hyperedges.push(Hyperedge {
            members: set,
            anchor,
        });
        idx
    }

    pub fn hyperedges(&self) -> &[Hyperedge] {
        &self.hyperedges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = FactorNode> + '_ {
        self.nodes.iter().map(|(k, home)| FactorNode {
            edge: k.edge,
            factor_index: k.factor_index,
            home_view: *home,
        })
    }

    pub fn contains(&self, key: &NodeKey) -> bool {
        self.nodes.contains_key(key)
    }

    pub fn hyperedge_of(&self, key: &NodeKey) -> Option<usize> {
        self.membership.get(key).copied()
    }

    pub fn anchor_of(&self, key: &NodeKey) -> Option<usize> {
        self.hyperedge_of(key).and_then(|h| self.hyperedges[h].anchor)
    }

    /// Hyperedges as a set of node sets, for order-insensitive comparison.
    pub fn partition(&self) -> BTreeSet<BTreeSet<NodeKey>> {
        self.hyperedges.iter().map(|h| h.members.clone()).collect()
    }

    /// Distinct edges touched by a hyperedge.
    pub fn edges_of(&self, hyperedge: usize) -> BTreeSet<EdgeKey> {
        self.hyperedges[hyperedge].members.iter().map(|k| k.edge).collect()
    }

    /// Hyperedges holding more than one factor of the same matrix.
    pub fn collisions(&self) -> Vec<(usize, EdgeKey)> {
        let mut out = Vec::new();
        for (h, edge) in self.hyperedges.iter().enumerate() {
            let mut seen = BTreeSet::new();
            let mut reported = BTreeSet::new();
            for k in &edge.members {
                if !seen.insert(k.edge) && reported.insert(k.edge) {
                    out.push((h, k.edge));
                }
            }
        }
        out
    }

    /// Keeps only the hyperedges for which `keep` returns true. Nodes of
    /// removed hyperedges are removed as well.
    pub fn retain_hyperedges(&mut self, mut keep: impl FnMut(&Hyperedge) -> bool) -> Vec<Hyperedge> {
        let (kept, dropped): (Vec<Hyperedge>, Vec<Hyperedge>) = self.hyperedges.drain(..).partition(|h| keep(h));
        self.hyperedges = kept;
        for h in &dropped {
            for k in &h.members {
                self.nodes.remove(k);
            }
        }
        self.rebuild_membership();
        dropped
    }

    /// Reorders hyperedges by a permutation: `order[new] = old`.
    pub fn reorder(&mut self, order: &[usize]) {
        assert_eq!(order.len(), self.hyperedges.len());
        let mut old: Vec<Option<Hyperedge>> = self.hyperedges.drain(..).map(Some).collect();
        for &o in order {
            self.hyperedges.push(old[o].take().expect("permutation"));
        }
        self.rebuild_membership();
    }

    fn rebuild_membership(&mut self) {
        self.membership.clear();
        for (h, edge) in self.hyperedges.iter().enumerate() {
            for k in &edge.members {
                self.membership.insert(*k, h);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeStats {
    /// Times a hyperedge of the accumulating graph had to be absorbed because
    /// an incoming hyperedge overlapped it besides the one being merged.
    pub overlap_merges: usize,
    pub pair_merges: usize,
}

/// Mutable working copy used while merging; hyperedges are tombstoned.
struct Work {
    owner: Option<ViewId>,
    nodes: BTreeMap<NodeKey, ViewId>,
    edges: Vec<Option<BTreeSet<NodeKey>>>,
    member: HashMap<NodeKey, usize>,
}

impl Work {
    fn from_graph(g: FactorMatchGraph) -> Self {
        Self {
            owner: g.owner,
            nodes: g.nodes,
            edges: g.hyperedges.into_iter().map(|h| Some(h.members)).collect(),
            member: g.membership,
        }
    }

    fn into_graph(self) -> FactorMatchGraph {
        let mut hyperedges: Vec<Hyperedge> = self
            .edges
            .into_iter()
            .flatten()
            .map(|members| Hyperedge {
                members,
                anchor: None,
            })
            .collect();
        hyperedges.sort_by(|a, b| a.members.first().cmp(&b.members.first()));
        let mut g = FactorMatchGraph {
            owner: None,
            nodes: self.nodes,
            hyperedges,
            membership: HashMap::new(),
        };
        g.rebuild_membership();
        g
    }

    /// Folds `other` into `self`.
    fn absorb(&mut self, mut other: Work, stats: &mut MergeStats) {
        stats.pair_merges += 1;
        let shared: Vec<NodeKey> = other
            .nodes
            .keys()
            .filter(|k| self.nodes.contains_key(k))
            .copied()
            .collect();
        for f in shared {
            // removed together with an earlier hyperedge
            if !other.nodes.contains_key(&f) {
                continue;
            }
            let c1 = self.member[&f];
            let c2 = other.member[&f];
            let incoming = other.edges[c2].take().expect("live hyperedge");

            let overlapping: BTreeSet<usize> = incoming
                .iter()
                .filter_map(|n| self.member.get(n).copied())
                .filter(|&h| h != c1)
                .collect();

            for n in &incoming {
                if !self.nodes.contains_key(n) {
                    self.nodes.insert(*n, other.nodes[n]);
                }
                self.edges[c1].as_mut().expect("live hyperedge").insert(*n);
                self.member.insert(*n, c1);
            }
            for h in overlapping {
                stats.overlap_merges += 1;
                let absorbed = self.edges[h].take().expect("live hyperedge");
                for n in absorbed {
                    self.edges[c1].as_mut().expect("live hyperedge").insert(n);
                    self.member.insert(n, c1);
                }
            }
            for n in &incoming {
                other.nodes.remove(n);
                other.member.remove(n);
            }
        }
        for members in other.edges.into_iter().flatten() {
            let idx = self.edges.len();
            for n in &members {
                self.nodes.insert(*n, other.nodes[n]);
                self.member.insert(*n, idx);
            }
            self.edges.push(Some(members));
        }
    }
}

/// Merges view-specific graphs into one, always combining the two graphs with
/// the smallest owners.
pub fn merge_all(graphs: Vec<FactorMatchGraph>) -> FactorMatchGraph {
    merge_all_with_stats(graphs).0
}

pub fn merge_all_with_stats(mut graphs: Vec<FactorMatchGraph>) -> (FactorMatchGraph, MergeStats) {
    graphs.sort_by_key(|g| (g.owner.is_none(), g.owner));
    merge_in_order(graphs)
}

/// Merges graphs in exactly the given order (first absorbs second, the
/// result absorbs third, ...).
pub fn merge_in_order(graphs: Vec<FactorMatchGraph>) -> (FactorMatchGraph, MergeStats) {
    let mut stats = MergeStats::default();
    let mut iter = graphs.into_iter().map(Work::from_graph);
    let Some(mut acc) = iter.next() else {
        return (FactorMatchGraph::new(None), stats);
    };
    for next in iter {
        acc.absorb(next, &mut stats);
    }
    let owner = acc.owner;
    let merged = acc.into_graph();
    if stats.overlap_merges > 0 {
        log::debug!(
            "merge: {} additional overlapping hyperedges absorbed (accumulator owner {:?})",
            stats.overlap_merges,
            owner
        );
    }
    for (h, edge) in merged.collisions() {
        log::warn!(
            "merged hyperedge {h} holds several factors of matrix #{}-#{} layer {}",
            edge.row_view.0,
            edge.col_view.0,
            edge.layer
        );
    }
    (merged, stats)
}

/// How widely a merged factor is shared across the layout's matrices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SharingClass {
    Individual(EdgeKey),
    Partial(BTreeSet<EdgeKey>),
    Global,
}

impl SharingClass {
    pub fn from_edges(edges: &BTreeSet<EdgeKey>, layout: &ViewLayout) -> Self {
        if edges.len() == 1 {
            SharingClass::Individual(*edges.first().expect("one edge"))
        } else if edges.len() == layout.edges().len() && layout.edges().iter().all(|e| edges.contains(e)) {
            SharingClass::Global
        } else {
            SharingClass::Partial(edges.clone())
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SharingClass::Individual(_) => "individual",
            SharingClass::Partial(_) => "partial",
            SharingClass::Global => "global",
        }
    }

    /// Compact label such as `global`, `individual(1,2)` or
    /// `partial(1,2|1,4)`; non-zero layers are suffixed with `@layer`.
    pub fn label(&self, layout: &ViewLayout) -> String {
        let edge = |e: &EdgeKey| {
            let mut s = format!("{},{}", layout.view_name(e.row_view), layout.view_name(e.col_view));
            if e.layer != 0 {
                s.push_str(&format!("@{}", e.layer));
            }
            s
        };
        match self {
            SharingClass::Individual(e) => format!("individual({})", edge(e)),
            SharingClass::Partial(es) => format!(
                "partial({})",
                es.iter().map(edge).collect::<Vec<_>>().join("|")
            ),
            SharingClass::Global => "global".to_string(),
        }
    }
}

pub fn classify_sharing(merged: &FactorMatchGraph, layout: &ViewLayout) -> Vec<SharingClass> {
    (0..merged.hyperedges().len())
        .map(|h| SharingClass::from_edges(&merged.edges_of(h), layout))
        .collect()
}

/// Number of hyperedges per sharing class.
pub fn class_counts(classes: &[SharingClass]) -> BTreeMap<SharingClass, usize> {
    let mut out = BTreeMap::new();
    for c in classes {
        *out.entry(c.clone()).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Serialize)]
struct JsonMember<'a> {
    row_view: &'a str,
    col_view: &'a str,
    layer: u32,
    factor_index: usize,
}

#[derive(Debug, Serialize)]
struct JsonEdge<'a> {
    row_view: &'a str,
    col_view: &'a str,
    layer: u32,
}

#[derive(Debug, Serialize)]
struct JsonFactor<'a> {
    id: usize,
    class: &'static str,
    edges: Vec<JsonEdge<'a>>,
    members: Vec<JsonMember<'a>>,
}

#[derive(Debug, Serialize)]
struct JsonGraph<'a> {
    factors: Vec<JsonFactor<'a>>,
}

/// `{"factors": [{"id", "class", "edges", "members": [...]}]}`, one entry
/// per hyperedge in graph order.
pub fn graph_to_json(merged: &FactorMatchGraph, layout: &ViewLayout) -> serde_json::Value {
    let classes = classify_sharing(merged, layout);
    let factors = merged
        .hyperedges()
        .iter()
        .enumerate()
        .map(|(id, h)| JsonFactor {
            id,
            class: classes[id].kind(),
            edges: merged
                .edges_of(id)
                .iter()
                .map(|e| JsonEdge {
                    row_view: layout.view_name(e.row_view),
                    col_view: layout.view_name(e.col_view),
                    layer: e.layer,
                })
                .collect(),
            members: h
                .members
                .iter()
                .map(|k| JsonMember {
                    row_view: layout.view_name(k.edge.row_view),
                    col_view: layout.view_name(k.edge.col_view),
                    layer: k.edge.layer,
                    factor_index: k.factor_index,
                })
                .collect(),
        })
        .collect();
    serde_json::to_value(JsonGraph { factors }).expect("graph serializes")
}
