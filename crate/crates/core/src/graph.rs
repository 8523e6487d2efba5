//! Immutable directed graphs in compressed-row form.
//!
//! Every simulator, model and solver in the crate reads a [`Graph`]. Node
//! ids are dense and zero-based; edge ids are positions in the out-adjacency
//! array, so `edge_id` is stable for the lifetime of the graph and can key
//! common-random-number coins.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense zero-based node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    undirected: bool,
    out_offsets: Vec<usize>,
    out_targets: Vec<usize>,
    in_offsets: Vec<usize>,
    in_sources: Vec<usize>,
    /// For each in-adjacency slot, the id of the same edge in out-adjacency.
    in_edge_ids: Vec<usize>,
}

/// Counts of input edges discarded while building a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

impl Graph {
    /// Builds a graph from directed edges. With `undirected` set, every edge
    /// is also inserted reversed. Self-loops and duplicates are dropped.
    pub fn from_edges(
        node_count: usize,
        edges: &[(usize, usize)],
        undirected: bool,
    ) -> Result<(Graph, BuildStats)> {
        let mut stats = BuildStats::default();
        let mut directed: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {node_count} nodes"
                )));
            }
            if u == v {
                stats.self_loops += 1;
                continue;
            }
            directed.push((u, v));
            if undirected {
                directed.push((v, u));
            }
        }
        directed.sort_unstable();
        let before = directed.len();
        directed.dedup();
        let removed = before - directed.len();
        stats.duplicate_edges = if undirected { removed / 2 } else { removed };
        Ok((Self::from_sorted_unique(node_count, &directed, undirected), stats))
    }

    fn from_sorted_unique(node_count: usize, edges: &[(usize, usize)], undirected: bool) -> Graph {
        let mut out_offsets = vec![0usize; node_count + 1];
        for &(u, _) in edges {
            out_offsets[u + 1] += 1;
        }
        for i in 0..node_count {
            out_offsets[i + 1] += out_offsets[i];
        }
        let out_targets: Vec<usize> = edges.iter().map(|&(_, v)| v).collect();

        let mut in_offsets = vec![0usize; node_count + 1];
        for &(_, v) in edges {
            in_offsets[v + 1] += 1;
        }
        for i in 0..node_count {
            in_offsets[i + 1] += in_offsets[i];
        }
        let mut cursor = in_offsets.clone();
        let mut in_sources = vec![0usize; edges.len()];
        let mut in_edge_ids = vec![0usize; edges.len()];
        // Edges are sorted by source, so sources within each in-list come out sorted.
        for (eid, &(u, v)) in edges.iter().enumerate() {
            let slot = cursor[v];
            in_sources[slot] = u;
            in_edge_ids[slot] = eid;
            cursor[v] += 1;
        }
        Graph {
            node_count,
            undirected,
            out_offsets,
            out_targets,
            in_offsets,
            in_sources,
            in_edge_ids,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of directed edges.
    pub fn edge_count(&self) -> usize {
        self.out_targets.len()
    }

    /// True when the graph was built as the directed expansion of an
    /// undirected edge list.
    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn out_neighbors(&self, u: usize) -> &[usize] {
        &self.out_targets[self.out_offsets[u]..self.out_offsets[u + 1]]
    }

    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.in_sources[self.in_offsets[v]..self.in_offsets[v + 1]]
    }

    /// Out-edges of `u` as `(edge_id, target)` pairs.
    pub fn out_edges(&self, u: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let start = self.out_offsets[u];
        self.out_neighbors(u)
            .iter()
            .enumerate()
            .map(move |(i, &v)| (start + i, v))
    }

    /// In-edges of `v` as `(edge_id, source)` pairs, edge ids in out-adjacency numbering.
    pub fn in_edges(&self, v: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let range = self.in_offsets[v]..self.in_offsets[v + 1];
        self.in_edge_ids[range.clone()]
            .iter()
            .copied()
            .zip(self.in_sources[range].iter().copied())
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.out_offsets[u + 1] - self.out_offsets[u]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_offsets[v + 1] - self.in_offsets[v]
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        (0..self.node_count).map(|u| self.out_degree(u)).collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        (0..self.node_count).map(|v| self.in_degree(v)).collect()
    }

    /// All directed edges in edge-id order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.node_count)
            .flat_map(|u| self.out_neighbors(u).iter().map(move |&v| (u, v)))
            .collect()
    }

    /// Source node of an edge id.
    pub fn edge_source(&self, edge_id: usize) -> usize {
        // partition_point returns the first offset strictly greater than edge_id.
        self.out_offsets.partition_point(|&o| o <= edge_id) - 1
    }

    pub fn edge_target(&self, edge_id: usize) -> usize {
        self.out_targets[edge_id]
    }

    /// Weighted-cascade probability `1 / in_degree(v)` for an edge into `v`.
    pub fn cascade_weight(&self, v: usize) -> f64 {
        1.0 / self.in_degree(v) as f64
    }

    /// Rebuilds the graph from its in-adjacency only.
    pub fn transpose_rebuild(&self) -> Graph {
        let mut edges: Vec<(usize, usize)> = (0..self.node_count)
            .flat_map(|v| self.in_neighbors(v).iter().map(move |&u| (u, v)))
            .collect();
        edges.sort_unstable();
        Self::from_sorted_unique(self.node_count, &edges, self.undirected)
    }

    /// SHA-256 over node count, orientation flag and the sorted edge list.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.node_count as u64).to_le_bytes());
        h.update([self.undirected as u8]);
        for (u, v) in self.edges() {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// A graph together with the label mapping it was loaded with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedGraph {
    pub graph: Graph,
    /// `labels[id]` is the input token that was mapped to node `id`.
    pub labels: Vec<String>,
    pub stats: BuildStats,
}

/// Parses a whitespace separated edge list. Lines starting with `#` or `%`
/// and blank lines are skipped. Tokens are arbitrary labels remapped to
/// dense ids in first-seen order.
pub fn load_edge_list<R: BufRead>(reader: R, directed: bool) -> Result<LoadedGraph> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    let mut intern = |tok: &str, labels: &mut Vec<String>| -> usize {
        if let Some(&id) = ids.get(tok) {
            return id;
        }
        let id = labels.len();
        labels.push(tok.to_string());
        ids.insert(tok.to_string(), id);
        id
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected two node tokens, found {}: {trimmed:?}", tokens.len()),
            });
        }
        let u = intern(tokens[0], &mut labels);
        let v = intern(tokens[1], &mut labels);
        edges.push((u, v));
    }
    if edges.is_empty() {
        return Err(Error::EmptyInput("edge list contains no edges".into()));
    }
    let (graph, stats) = Graph::from_edges(labels.len(), &edges, !directed)?;
    Ok(LoadedGraph {
        graph,
        labels,
        stats,
    })
}

/// Writes one `src dst` line per directed edge (per undirected pair when the
/// graph is undirected).
pub fn write_edge_list<W: Write>(graph: &Graph, mut out: W) -> Result<()> {
    writeln!(
        out,
        "# nodes={} directed_edges={} undirected={}",
        graph.node_count(),
        graph.edge_count(),
        graph.is_undirected()
    )?;
    for (u, v) in graph.edges() {
        if graph.is_undirected() && u > v {
            continue;
        }
        writeln!(out, "{u} {v}")?;
    }
    Ok(())
}

/// Uniform random directed graph with exactly `m` distinct non-loop edges.
pub fn erdos_renyi(n: usize, m: usize, rng_seed: u64) -> Result<Graph> {
    let capacity = n.saturating_mul(n.saturating_sub(1));
    if m > capacity {
        return Err(Error::invalid(format!(
            "{m} edges requested but a {n}-node digraph holds at most {capacity}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let encode = |u: usize, v: usize| u * n + v;
    let edges: Vec<(usize, usize)> = if m * 2 <= capacity {
        let mut chosen = HashSet::with_capacity(m);
        let mut edges = Vec::with_capacity(m);
        while edges.len() < m {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v && chosen.insert(encode(u, v)) {
                edges.push((u, v));
            }
        }
        edges
    } else {
        // Dense request: sample the complement instead.
        let mut excluded = HashSet::new();
        while excluded.len() < capacity - m {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v {
                excluded.insert(encode(u, v));
            }
        }
        (0..n)
            .flat_map(|u| (0..n).map(move |v| (u, v)))
            .filter(|&(u, v)| u != v && !excluded.contains(&encode(u, v)))
            .collect()
    };
    Ok(Graph::from_edges(n, &edges, false)?.0)
}

/// Node count of the jazz-musician collaboration network.
pub const JAZZ_NODES: usize = 198;
/// Undirected edge count of the jazz-musician collaboration network.
pub const JAZZ_EDGES: usize = 2742;

/// Synthetic stand-in for the jazz collaboration network: 198 nodes and
/// exactly 2,742 undirected edges drawn from a degree-corrected block model
/// (four bands, lognormal activity weights, 4x within-band affinity).
/// Reproduces the size, density and heavy-tailed degree profile, not the
/// actual musicians' graph.
pub fn jazz_like(rng_seed: u64) -> Graph {
    const BANDS: [usize; 4] = [62, 54, 47, 35];
    const AFFINITY: f64 = 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut band = Vec::with_capacity(JAZZ_NODES);
    for (b, &size) in BANDS.iter().enumerate() {
        band.extend(std::iter::repeat(b).take(size));
    }
    band.shuffle(&mut rng);
    let weight: Vec<f64> = (0..JAZZ_NODES)
        .map(|_| {
            // Box-Muller standard normal.
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            (0.75 * z).exp()
        })
        .collect();
    let total: f64 = weight.iter().sum();
    let cumulative: Vec<f64> = weight
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    let draw = |rng: &mut ChaCha8Rng| -> usize {
        let r: f64 = rng.random();
        cumulative.partition_point(|&c| c < r).min(JAZZ_NODES - 1)
    };
    let mut chosen = HashSet::new();
    let mut edges = Vec::with_capacity(JAZZ_EDGES);
    while edges.len() < JAZZ_EDGES {
        let u = draw(&mut rng);
        let v = draw(&mut rng);
        if u == v {
            continue;
        }
        // Cross-band pairs are accepted with probability 1/AFFINITY.
        if band[u] != band[v] && rng.random::<f64>() >= 1.0 / AFFINITY {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if chosen.insert(key) {
            edges.push(key);
        }
    }
    Graph::from_edges(JAZZ_NODES, &edges, true)
        .expect("generated edges are in range")
        .0
}

/// Per-node selection cost under the degree budget: the out-degree, i.e. the
/// row sum of the adjacency matrix. For an undirected graph stored as two
/// directed edges this is the ordinary undirected degree.
pub fn degree_costs(g: &Graph) -> Vec<f64> {
    (0..g.node_count()).map(|u| g.out_degree(u) as f64).collect()
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"DPIMGRPH";
const SNAPSHOT_VERSION: u32 = 1;

/// Binary snapshot: magic, version, flags, node/edge counts, edges and labels,
/// all little-endian.
pub fn write_snapshot<W: Write>(loaded: &LoadedGraph, mut out: W) -> Result<()> {
    let g = &loaded.graph;
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    out.write_all(&[g.is_undirected() as u8])?;
    out.write_all(&(g.node_count() as u64).to_le_bytes())?;
    out.write_all(&(g.edge_count() as u64).to_le_bytes())?;
    for (u, v) in g.edges() {
        out.write_all(&(u as u32).to_le_bytes())?;
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&(loaded.labels.len() as u64).to_le_bytes())?;
    for label in &loaded.labels {
        out.write_all(&(label.len() as u32).to_le_bytes())?;
        out.write_all(label.as_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut input: R) -> Result<LoadedGraph> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a graph snapshot (bad magic)".into()));
    }
    let version = read_u32(&mut input)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported graph snapshot version {version}")));
    }
    let mut flag = [0u8; 1];
    input.read_exact(&mut flag)?;
    let n = read_u64(&mut input)? as usize;
    let m = read_u64(&mut input)? as usize;
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let u = read_u32(&mut input)? as usize;
        let v = read_u32(&mut input)? as usize;
        edges.push((u, v));
    }
    let label_count = read_u64(&mut input)? as usize;
    let mut labels = Vec::with_capacity(label_count);
    for _ in 0..label_count {
        let len = read_u32(&mut input)? as usize;
        let mut buf = vec![0u8; len];
        input.read_exact(&mut buf)?;
        labels.push(String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?);
    }
    // Stored edges already include both directions of undirected pairs.
    let (graph, _) = Graph::from_edges(n, &edges, false)?;
    let graph = Graph {
        undirected: flag[0] != 0,
        ..graph
    };
    Ok(LoadedGraph {
        graph,
        labels,
        stats: BuildStats::default(),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Identity labels `0..n` for generated graphs.
pub fn with_index_labels(graph: Graph) -> LoadedGraph {
    let labels = (0..graph.node_count()).map(|i| i.to_string()).collect();
    LoadedGraph {
        graph,
        labels,
        stats: BuildStats::default(),
    }
}
