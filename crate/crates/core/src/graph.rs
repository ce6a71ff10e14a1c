//! Interaction graphs with closed neighborhoods.
//!
//! A station at every vertex contends with the stations at graph distance
//! at most one. The closed neighborhood `V_i` (node `i` together with its
//! neighbors) is the interference set that drives both the attempt
//! probability and the success condition, so it is the primary object here:
//! every query is phrased in terms of `V_i`, not the open adjacency.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node count must be at least 1")]
    Empty,
    #[error("node {0} is outside 1..={1}")]
    NodeOutOfRange(usize, usize),
    #[error("self-loop on node {0}: edge-list files must not contain self-loops")]
    SelfLoop(usize),
    #[error("graph is disconnected: node {0} is unreachable from node 1")]
    Disconnected(usize),
    #[error("neighborhoods are asymmetric: {0} lists {1} but not vice versa")]
    Asymmetric(usize, usize),
    #[error("node {0} is missing from its own neighborhood")]
    MissingSelf(usize),
    #[error("invalid edge-list line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("random regular graph: {0}")]
    BadRegularParams(String),
    #[error("random regular graph: no simple connected graph found in {0} attempts")]
    GenerationFailed(usize),
    #[error("torus dimensions must be positive")]
    BadTorus,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("mixture needs at least one graph")]
    MixtureEmpty,
    #[error("mixture graphs must share one node set: got {0} and {1} nodes")]
    MixtureMismatch(usize, usize),
    #[error("mixture probabilities must be nonnegative and sum to 1 (sum = {0})")]
    BadProbabilities(f64),
}

/// Finite connected interaction graph, stored as closed neighborhoods.
///
/// Invariants, checked on construction:
/// - `i ∈ V_i` for every node (self-inclusion),
/// - `j ∈ V_i ⇔ i ∈ V_j` (symmetry),
/// - the open graph `{(i,j) : j ∈ V_i, j ≠ i}` is connected.
///
/// Nodes are 0-based internally; file formats and display are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    node_count: usize,
    /// Sorted closed neighborhoods; `neighborhoods[i]` contains `i`.
    neighborhoods: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from open (loop-free) undirected edges on `1..=node_count`,
    /// 1-based. Duplicate edges are collapsed, self-inclusion is added.
    pub fn from_edges_1based(
        node_count: usize,
        edges: &[(usize, usize)],
    ) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut open: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); node_count];
        for &(a, b) in edges {
            if a == 0 || a > node_count {
                return Err(GraphError::NodeOutOfRange(a, node_count));
            }
            if b == 0 || b > node_count {
                return Err(GraphError::NodeOutOfRange(b, node_count));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            open[a - 1].insert(b - 1);
            open[b - 1].insert(a - 1);
        }
        let neighborhoods = open
            .into_iter()
            .enumerate()
            .map(|(i, mut set)| {
                set.insert(i);
                set.into_iter().collect()
            })
            .collect();
        let g = Graph {
            node_count,
            neighborhoods,
        };
        g.check_connected()?;
        Ok(g)
    }

    /// Builds a graph directly from closed neighborhoods (0-based), validating
    /// self-inclusion, symmetry and connectivity.
    pub fn from_closed_neighborhoods(neighborhoods: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        let node_count = neighborhoods.len();
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut sorted: Vec<Vec<usize>> = Vec::with_capacity(node_count);
        for (i, hood) in neighborhoods.into_iter().enumerate() {
            let set: BTreeSet<usize> = hood.into_iter().collect();
            for &j in &set {
                if j >= node_count {
                    return Err(GraphError::NodeOutOfRange(j + 1, node_count));
                }
            }
            if !set.contains(&i) {
                return Err(GraphError::MissingSelf(i + 1));
            }
            sorted.push(set.into_iter().collect());
        }
        let g = Graph {
            node_count,
            neighborhoods: sorted,
        };
        for i in 0..node_count {
            for &j in g.closed_neighborhood(i) {
                if !g.closed_neighborhood(j).contains(&i) {
                    return Err(GraphError::Asymmetric(i + 1, j + 1));
                }
            }
        }
        g.check_connected()?;
        Ok(g)
    }

    fn check_connected(&self) -> Result<(), GraphError> {
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in self.closed_neighborhood(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        match seen.iter().position(|&s| !s) {
            Some(i) => Err(GraphError::Disconnected(i + 1)),
            None => Ok(()),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Closed neighborhood `V_i`, sorted, containing `i` itself.
    pub fn closed_neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    /// Open neighbors of `i` (everything in `V_i` except `i`).
    pub fn open_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighborhoods[i].iter().copied().filter(move |&j| j != i)
    }

    /// `|V_i|`, the closed degree.
    pub fn closed_degree(&self, i: usize) -> usize {
        self.neighborhoods[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count).map(|i| self.closed_degree(i)).collect()
    }

    pub fn max_closed_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap()
    }

    /// `Some(V)` when every closed neighborhood has the same size `V`.
    pub fn regular_degree(&self) -> Option<usize> {
        let v = self.closed_degree(0);
        if (1..self.node_count).all(|i| self.closed_degree(i) == v) {
            Some(v)
        } else {
            None
        }
    }

    pub fn contains_closed(&self, i: usize, j: usize) -> bool {
        self.neighborhoods[i].binary_search(&j).is_ok()
    }

    /// `|V_i ∩ V_j|` by direct set intersection.
    pub fn neighborhood_intersection(&self, i: usize, j: usize) -> usize {
        let (a, b) = (&self.neighborhoods[i], &self.neighborhoods[j]);
        let mut count = 0;
        let (mut x, mut y) = (0, 0);
        while x < a.len() && y < b.len() {
            match a[x].cmp(&b[y]) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    x += 1;
                    y += 1;
                }
            }
        }
        count
    }

    /// If the open graph is a single cycle visiting every node (each node has
    /// exactly two open neighbors), returns the nodes in traversal order.
    pub fn hamiltonian_cycle_order(&self) -> Option<Vec<usize>> {
        if self.node_count < 3 {
            return None;
        }
        if self
            .degrees()
            .iter()
            .any(|&d| d != 3)
        {
            return None;
        }
        let mut order = Vec::with_capacity(self.node_count);
        let mut prev = usize::MAX;
        let mut cur = 0usize;
        loop {
            order.push(cur);
            let next = self.open_neighbors(cur).find(|&j| j != prev)?;
            prev = cur;
            cur = next;
            if cur == 0 {
                break;
            }
            if order.len() > self.node_count {
                return None;
            }
        }
        if order.len() == self.node_count {
            Some(order)
        } else {
            None
        }
    }
}

/// Probabilistic mixture of graphs on a common node set: each slot the
/// neighborhood relations are drawn independently from this distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMixture {
    graphs: Vec<Graph>,
    probs: Vec<f64>,
}

impl GraphMixture {
    pub fn new(graphs: Vec<Graph>, probs: Vec<f64>) -> Result<Self, GraphError> {
        if graphs.is_empty() || probs.len() != graphs.len() {
            return Err(GraphError::MixtureEmpty);
        }
        let k = graphs[0].node_count();
        for g in &graphs[1..] {
            if g.node_count() != k {
                return Err(GraphError::MixtureMismatch(k, g.node_count()));
            }
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(GraphError::BadProbabilities(sum));
        }
        Ok(GraphMixture { graphs, probs })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn node_count(&self) -> usize {
        self.graphs[0].node_count()
    }

    /// Index of the graph selected by a uniform draw `u ∈ [0, 1)`.
    pub fn index_for(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Graph recipe accepted by the command line and by [`build_graph`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraphSpec {
    Cycle { nodes: usize },
    Complete { nodes: usize },
    Torus { rows: usize, cols: usize },
    RandomRegular { nodes: usize, degree: usize, seed: u64 },
    EdgeList { path: String },
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSpec::Cycle { nodes } => write!(f, "cycle:{nodes}"),
            GraphSpec::Complete { nodes } => write!(f, "complete:{nodes}"),
            GraphSpec::Torus { rows, cols } => write!(f, "torus:{rows}x{cols}"),
            GraphSpec::RandomRegular { nodes, degree, seed } => {
                write!(f, "rr:{nodes},{degree},{seed}")
            }
            GraphSpec::EdgeList { path } => write!(f, "file:{path}"),
        }
    }
}

impl FromStr for GraphSpec {
    type Err = String;

    /// Accepts `cycle:K`, `complete:K`, `torus:MxN`, `rr:K,d[,seed]`,
    /// `file:PATH`, or a bare path to an edge-list file.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, args) = match s.split_once(':') {
            Some(pair) => pair,
            None => return Ok(GraphSpec::EdgeList { path: s.to_string() }),
        };
        let parse_usize = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("expected a positive integer, got '{v}'"))
        };
        match kind {
            "cycle" => Ok(GraphSpec::Cycle { nodes: parse_usize(args)? }),
            "complete" => Ok(GraphSpec::Complete { nodes: parse_usize(args)? }),
            "torus" => {
                let (m, n) = args
                    .split_once('x')
                    .ok_or_else(|| format!("torus wants MxN, got '{args}'"))?;
                Ok(GraphSpec::Torus { rows: parse_usize(m)?, cols: parse_usize(n)? })
            }
            "rr" | "random-regular" => {
                let parts: Vec<&str> = args.split(',').collect();
                if parts.len() < 2 || parts.len() > 3 {
                    return Err(format!("rr wants K,d[,seed], got '{args}'"));
                }
                let seed = if parts.len() == 3 {
                    parts[2]
                        .trim()
                        .parse::<u64>()
                        .map_err(|_| format!("bad seed '{}'", parts[2]))?
                } else {
                    0
                };
                Ok(GraphSpec::RandomRegular {
                    nodes: parse_usize(parts[0])?,
                    degree: parse_usize(parts[1])?,
                    seed,
                })
            }
            "file" => Ok(GraphSpec::EdgeList { path: args.to_string() }),
            other => Err(format!(
                "unknown graph kind '{other}' (expected cycle, complete, torus, rr, file)"
            )),
        }
    }
}

/// Builds and validates a graph from a [`GraphSpec`].
pub fn build_graph(spec: &GraphSpec) -> Result<Graph, GraphError> {
    match spec {
        GraphSpec::Cycle { nodes } => cycle(*nodes),
        GraphSpec::Complete { nodes } => complete(*nodes),
        GraphSpec::Torus { rows, cols } => torus(*rows, *cols),
        GraphSpec::RandomRegular { nodes, degree, seed } => {
            random_regular(*nodes, *degree, *seed)
        }
        GraphSpec::EdgeList { path } => from_edge_list_path(Path::new(path)),
    }
}

/// Cycle on `k` nodes (node i linked to i±1 mod k). `k = 1` is the isolated
/// node, `k = 2` a single edge.
pub fn cycle(k: usize) -> Result<Graph, GraphError> {
    if k == 0 {
        return Err(GraphError::Empty);
    }
    let mut edges = Vec::new();
    if k >= 2 {
        for i in 1..=k {
            let j = if i == k { 1 } else { i + 1 };
            if i != j {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges_1based(k, &edges)
}

/// Complete graph on `k` nodes.
pub fn complete(k: usize) -> Result<Graph, GraphError> {
    if k == 0 {
        return Err(GraphError::Empty);
    }
    let mut edges = Vec::new();
    for i in 1..=k {
        for j in (i + 1)..=k {
            edges.push((i, j));
        }
    }
    Graph::from_edges_1based(k, &edges)
}

/// m×n torus grid (4-neighbor with wraparound). Duplicate edges produced by
/// small dimensions collapse, so the graph stays regular.
pub fn torus(m: usize, n: usize) -> Result<Graph, GraphError> {
    if m == 0 || n == 0 {
        return Err(GraphError::BadTorus);
    }
    let id = |i: usize, j: usize| i * n + j + 1;
    let mut edges = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let right = id(i, (j + 1) % n);
            let down = id((i + 1) % m, j);
            if id(i, j) != right {
                edges.push((id(i, j), right));
            }
            if id(i, j) != down {
                edges.push((id(i, j), down));
            }
        }
    }
    Graph::from_edges_1based(m * n, &edges)
}

/// Random `d`-regular simple connected graph on `k` nodes via the pairing
/// model: `d` stems per node are shuffled and paired; draws with self-pairs,
/// multi-edges, or a disconnected result are rejected and retried.
pub fn random_regular(k: usize, d: usize, seed: u64) -> Result<Graph, GraphError> {
    if k == 0 {
        return Err(GraphError::Empty);
    }
    if d == 0 {
        return if k == 1 {
            Graph::from_edges_1based(1, &[])
        } else {
            Err(GraphError::BadRegularParams(
                "degree 0 with more than one node is disconnected".into(),
            ))
        };
    }
    if d >= k {
        return Err(GraphError::BadRegularParams(format!(
            "degree {d} must be below node count {k}"
        )));
    }
    if !(k * d).is_multiple_of(2) {
        return Err(GraphError::BadRegularParams(format!(
            "K*d = {} must be even",
            k * d
        )));
    }
    const MAX_ATTEMPTS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stems: Vec<usize> = (0..k).flat_map(|i| std::iter::repeat_n(i, d)).collect();
    'attempt: for _ in 0..MAX_ATTEMPTS {
        stems.shuffle(&mut rng);
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
        for pair in stems.chunks_exact(2) {
            let (a, b) = (pair[0], pair[1]);
            if a == b || adj[a].contains(&b) {
                continue 'attempt;
            }
            adj[a].insert(b);
            adj[b].insert(a);
        }
        let edges: Vec<(usize, usize)> = adj
            .iter()
            .enumerate()
            .flat_map(|(a, set)| {
                set.iter().filter(move |&&b| b > a).map(move |&b| (a + 1, b + 1))
            })
            .collect();
        match Graph::from_edges_1based(k, &edges) {
            Ok(g) => return Ok(g),
            Err(GraphError::Disconnected(_)) => continue 'attempt,
            Err(e) => return Err(e),
        }
    }
    Err(GraphError::GenerationFailed(MAX_ATTEMPTS))
}

/// Parses the edge-list format: first line `K`, then one `i j` pair per line
/// (1-based, whitespace-separated, undirected, no self-loops; self-inclusion
/// is added internally). Blank lines and `#` comments are skipped.
pub fn from_edge_list_str(text: &str) -> Result<Graph, GraphError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(idx, l)| (idx + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (first_no, first) = lines.next().ok_or(GraphError::Empty)?;
    let k: usize = first.parse().map_err(|_| GraphError::Parse {
        line: first_no,
        reason: format!("expected node count, got '{first}'"),
    })?;
    let mut edges = Vec::new();
    for (line_no, line) in lines {
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(GraphError::Parse {
                    line: line_no,
                    reason: format!("expected 'i j', got '{line}'"),
                })
            }
        };
        let parse = |v: &str| {
            v.parse::<usize>().map_err(|_| GraphError::Parse {
                line: line_no,
                reason: format!("bad node index '{v}'"),
            })
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Graph::from_edges_1based(k, &edges)
}

pub fn from_edge_list_path(path: &Path) -> Result<Graph, GraphError> {
    let text = std::fs::read_to_string(path)?;
    from_edge_list_str(&text)
}
