// SPDX-License-Identifier: Apache-2.0

//! Static peer-to-peer graph over validator nodes.
//!
//! Every undirected link carries two independent directed gossip channels,
//! so a graph with `E` links exposes `2E` channels to the event loop.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

/// Index of a node (validator) in the peer graph.
pub type NodeId = u32;

/// Maximum number of whole-graph resamples before [`generate_er`] gives up.
pub const MAX_CONNECTIVITY_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("average degree {avg_degree} outside (0, {max}] for {n} nodes")]
    InvalidDegree { n: usize, avg_degree: f64, max: f64 },
    #[error(
        "no connected ER({n}, p={p:.4}) sample in {attempts} attempts; \
         connectivity needs p well above ln(n)/n = {threshold:.4}"
    )]
    NotConnected {
        n: usize,
        p: f64,
        threshold: f64,
        attempts: usize,
    },
    #[error("graph is disconnected, diameter undefined")]
    Disconnected,
    #[error("graph has no edges")]
    NoEdges,
    #[error("invalid edge ({0}, {1})")]
    InvalidEdge(NodeId, NodeId),
    #[error("log-ratio diameter formula needs n*p > 1, got n*p = {0}")]
    SubcriticalRegime(f64),
    #[error("edge list parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Simple undirected graph with symmetric, sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerGraph {
    node_count: usize,
    edges: Vec<(NodeId, NodeId)>,
    adjacency: Vec<Vec<NodeId>>,
}

impl PeerGraph {
    /// Builds a graph from unordered pairs. Duplicate pairs (in either
    /// orientation) collapse to one link; self-loops and out-of-range ids
    /// are rejected.
    pub fn from_edges(
        node_count: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, TopologyError> {
        let mut normalized = Vec::new();
        for (a, b) in edges {
            if a == b || a as usize >= node_count || b as usize >= node_count {
                return Err(TopologyError::InvalidEdge(a, b));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();

        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in &normalized {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges: normalized,
            adjacency,
        })
    }

    pub fn complete(n: usize) -> Self {
        let n32 = n as NodeId;
        let edges = (0..n32).flat_map(|a| (a + 1..n32).map(move |b| (a, b)));
        Self::from_edges(n, edges).expect("complete graph edges are valid")
    }

    pub fn path(n: usize) -> Self {
        let edges = (1..n as NodeId).map(|b| (b - 1, b));
        Self::from_edges(n, edges).expect("path graph edges are valid")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Undirected links, each as `(low, high)`, sorted.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of directed gossip channels, always `2 * edge_count()`.
    pub fn channel_count(&self) -> usize {
        2 * self.edges.len()
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node as usize]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node as usize].len()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.node_count == 0 {
            return 0.0;
        }
        self.channel_count() as f64 / self.node_count as f64
    }

    pub fn is_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency
            .get(a as usize)
            .is_some_and(|list| list.binary_search(&b).is_ok())
    }

    /// Hop distances from `source`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, source: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.node_count];
        let mut queue = VecDeque::new();
        dist[source as usize] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize].unwrap_or(0);
            for &v in &self.adjacency[u as usize] {
                if dist[v as usize].is_none() {
                    dist[v as usize] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        if self.node_count == 0 {
            return false;
        }
        self.bfs_distances(0).iter().all(Option::is_some)
    }

    /// Serializes as the edge-list text format: a `# nodes=N` header, then
    /// one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes={}\n", self.node_count);
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text.lines().enumerate();
        let node_count = match lines.next() {
            Some((_, header)) => header
                .trim()
                .strip_prefix("# nodes=")
                .and_then(|n| n.trim().parse::<usize>().ok())
                .ok_or_else(|| TopologyError::Parse {
                    line: 1,
                    msg: format!("expected '# nodes=N' header, got {header:?}"),
                })?,
            None => {
                return Err(TopologyError::Parse {
                    line: 1,
                    msg: "empty input".into(),
                })
            }
        };
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace().map(str::parse::<NodeId>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => edges.push((a, b)),
                _ => {
                    return Err(TopologyError::Parse {
                        line: idx + 1,
                        msg: format!("expected 'i j', got {line:?}"),
                    })
                }
            }
        }
        Self::from_edges(node_count, edges)
    }
}

/// A random graph ensemble the engine can draw its topology from.
pub trait GraphGenerator {
    fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PeerGraph, TopologyError>;
}

/// Erdős–Rényi G(n, p) ensemble parameterized by its expected degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErdosRenyi {
    pub nodes: usize,
    pub avg_degree: f64,
}

impl ErdosRenyi {
    pub fn link_probability(&self) -> f64 {
        self.avg_degree / (self.nodes as f64 - 1.0)
    }
}

impl GraphGenerator for ErdosRenyi {
    fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PeerGraph, TopologyError> {
        generate_er(self.nodes, self.avg_degree, rng)
    }
}

/// Samples a connected G(n, p) graph with `p = avg_degree / (n - 1)`,
/// resampling the whole graph until it is connected.
pub fn generate_er<R: Rng + ?Sized>(
    n: usize,
    avg_degree: f64,
    rng: &mut R,
) -> Result<PeerGraph, TopologyError> {
    if n < 2 {
        return Err(TopologyError::TooFewNodes(n));
    }
    let max = (n - 1) as f64;
    if !(avg_degree > 0.0 && avg_degree <= max) {
        return Err(TopologyError::InvalidDegree { n, avg_degree, max });
    }
    let p = avg_degree / max;
    for _ in 0..MAX_CONNECTIVITY_ATTEMPTS {
        let mut edges = Vec::new();
        for a in 0..n as NodeId {
            for b in a + 1..n as NodeId {
                // p == 1 must include every pair regardless of the draw.
                if p >= 1.0 || rng.gen::<f64>() < p {
                    edges.push((a, b));
                }
            }
        }
        let graph = PeerGraph::from_edges(n, edges)?;
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(TopologyError::NotConnected {
        n,
        p,
        threshold: (n as f64).ln() / n as f64,
        attempts: MAX_CONNECTIVITY_ATTEMPTS,
    })
}

/// Exact diameter via breadth-first search from every node.
pub fn diameter(g: &PeerGraph) -> Result<u32, TopologyError> {
    if g.node_count() == 0 {
        return Err(TopologyError::Disconnected);
    }
    let mut best = 0;
    for source in 0..g.node_count() as NodeId {
        for d in g.bfs_distances(source) {
            best = best.max(d.ok_or(TopologyError::Disconnected)?);
        }
    }
    Ok(best)
}

/// Concentration value `ln(n) / ln(n p)` for the diameter of a sparse
/// G(n, p) graph. The ratio is independent of the logarithm base.
pub fn predicted_diameter(n: usize, p: f64) -> Result<f64, TopologyError> {
    let np = n as f64 * p;
    if !(np > 1.0) || !np.is_finite() {
        return Err(TopologyError::SubcriticalRegime(np));
    }
    Ok((n as f64).ln() / np.ln())
}

/// Draws one of the `2E` directed channels uniformly: pick a link, then a
/// direction.
pub fn sample_directed_channel<R: Rng + ?Sized>(
    g: &PeerGraph,
    rng: &mut R,
) -> Result<(NodeId, NodeId), TopologyError> {
    if g.edges.is_empty() {
        return Err(TopologyError::NoEdges);
    }
    let idx = rng.gen_range(0..g.channel_count());
    let (a, b) = g.edges[idx / 2];
    Ok(if idx % 2 == 0 { (a, b) } else { (b, a) })
}
