//! Undirected, unweighted graphs in compressed sparse row form, plus the
//! hop-distance machinery used by buffer selection and distortion metrics.

use std::collections::VecDeque;
use std::fmt;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Stable global vertex identifier. Dense and 0-based within a stream.
pub type VertexId = usize;

const NO_INDEX: u32 = u32::MAX;
/// Internal "not reached" marker for local-index BFS buffers.
pub(crate) const INF: u32 = u32::MAX;

/// Hop distance, with a dedicated sentinel for vertices that cannot be reached.
///
/// `Unreachable` orders after every finite distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Hops {
    Finite(u32),
    Unreachable,
}

impl Hops {
    pub fn finite(self) -> Option<u32> {
        match self {
            Hops::Finite(d) => Some(d),
            Hops::Unreachable => None,
        }
    }

    pub fn is_reachable(self) -> bool {
        matches!(self, Hops::Finite(_))
    }

    pub(crate) fn from_raw(d: u32) -> Self {
        if d == INF {
            Hops::Unreachable
        } else {
            Hops::Finite(d)
        }
    }
}

impl fmt::Display for Hops {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hops::Finite(d) => write!(f, "{d}"),
            Hops::Unreachable => f.write_str("unreachable"),
        }
    }
}

/// Immutable undirected graph over a set of global vertex ids.
///
/// Vertices are stored in ascending id order; "local" indices are positions
/// in that order. Neighbor lists are sorted and deduplicated, and adjacency
/// is symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    ids: Vec<VertexId>,
    index: Vec<u32>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Graph {
    /// Build a graph from a vertex set and an undirected edge list.
    ///
    /// Duplicate edges (in either orientation) are merged. Self-loops and
    /// edges touching unknown vertices are rejected.
    pub fn from_edges<I>(vertices: impl IntoIterator<Item = VertexId>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (VertexId, VertexId)>,
    {
        let mut ids: Vec<VertexId> = vertices.into_iter().collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate vertex id in graph vertex set"));
        }
        if ids.len() >= NO_INDEX as usize {
            return Err(Error::invalid("graph too large for 32-bit local indices"));
        }
        let max_id = ids.last().map_or(0, |&m| m + 1);
        let mut index = vec![NO_INDEX; max_id];
        for (local, &id) in ids.iter().enumerate() {
            index[id] = local as u32;
        }

        let n = ids.len();
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::invalid(format!("self-loop on vertex {u}")));
            }
            let lu = lookup(&index, u)
                .ok_or_else(|| Error::invalid(format!("edge ({u}, {v}) references unknown vertex {u}")))?;
            let lv = lookup(&index, v)
                .ok_or_else(|| Error::invalid(format!("edge ({u}, {v}) references unknown vertex {v}")))?;
            pairs.push((lu, lv));
            pairs.push((lv, lu));
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut offsets = vec![0usize; n + 1];
        for &(u, _) in &pairs {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = pairs.into_iter().map(|(_, v)| v).collect();
        Ok(Graph {
            ids,
            index,
            offsets,
            targets,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.ids.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    /// Global ids in local-index order (ascending).
    pub fn ids(&self) -> &[VertexId] {
        &self.ids
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.local(v).is_some()
    }

    /// Local index of a global id.
    pub fn local(&self, v: VertexId) -> Option<usize> {
        lookup(&self.index, v).map(|i| i as usize)
    }

    pub(crate) fn require_local(&self, v: VertexId) -> Result<usize> {
        self.local(v)
            .ok_or_else(|| Error::invalid(format!("vertex {v} is not in the graph")))
    }

    pub fn global(&self, local: usize) -> VertexId {
        self.ids[local]
    }

    /// Sorted neighbor list of a local index, as local indices.
    pub fn neighbors_local(&self, local: usize) -> &[u32] {
        &self.targets[self.offsets[local]..self.offsets[local + 1]]
    }

    pub fn neighbors(&self, v: VertexId) -> Result<impl Iterator<Item = VertexId> + '_> {
        let l = self.require_local(v)?;
        Ok(self.neighbors_local(l).iter().map(|&u| self.ids[u as usize]))
    }

    pub fn degree_local(&self, local: usize) -> usize {
        self.offsets[local + 1] - self.offsets[local]
    }

    pub fn degree(&self, v: VertexId) -> Result<usize> {
        Ok(self.degree_local(self.require_local(v)?))
    }

    /// Undirected edges as `(u, v)` global id pairs with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        (0..self.num_vertices()).flat_map(move |u| {
            self.neighbors_local(u)
                .iter()
                .filter(move |&&v| (v as usize) > u)
                .map(move |&v| (self.ids[u], self.ids[v as usize]))
        })
    }

    /// Subgraph induced by a vertex subset.
    pub fn induced_subgraph(&self, vertices: &[VertexId]) -> Result<Graph> {
        let mut keep = vec![false; self.num_vertices()];
        for &v in vertices {
            keep[self.require_local(v)?] = true;
        }
        let edges = self
            .edges()
            .filter(|&(u, v)| keep[self.local(u).unwrap()] && keep[self.local(v).unwrap()]);
        Graph::from_edges(vertices.iter().copied(), edges.collect::<Vec<_>>())
    }

    /// Pruned BFS from `source`: lowers `dist` wherever the new source is closer.
    ///
    /// With `dist` holding min-distances to a set `P`, this turns it into the
    /// min-distances to `P ∪ {source}`.
    pub(crate) fn relax_from(&self, source: usize, dist: &mut [u32]) {
        if dist[source] == 0 {
            return;
        }
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let next = dist[u] + 1;
            for &w in self.neighbors_local(u) {
                let w = w as usize;
                if next < dist[w] {
                    dist[w] = next;
                    queue.push_back(w);
                }
            }
        }
    }

    /// Multi-source BFS over local indices; unreached entries hold [`INF`].
    pub(crate) fn bfs_local(&self, sources: &[usize]) -> Vec<u32> {
        let mut dist = vec![INF; self.num_vertices()];
        let mut queue = VecDeque::with_capacity(sources.len());
        for &s in sources {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let next = dist[u] + 1;
            for &w in self.neighbors_local(u) {
                let w = w as usize;
                if dist[w] == INF {
                    dist[w] = next;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

fn lookup(index: &[u32], v: VertexId) -> Option<u32> {
    match index.get(v) {
        Some(&i) if i != NO_INDEX => Some(i),
        _ => None,
    }
}

/// Min hop distance from a source set to every vertex of a graph.
#[derive(Debug, Clone)]
pub struct DistanceField<'g> {
    graph: &'g Graph,
    sources: Vec<VertexId>,
    dist: Vec<u32>,
}

impl<'g> DistanceField<'g> {
    pub fn sources(&self) -> &[VertexId] {
        &self.sources
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Distance of a vertex, or `None` if it is not in the graph.
    pub fn get(&self, v: VertexId) -> Option<Hops> {
        self.graph.local(v).map(|l| Hops::from_raw(self.dist[l]))
    }

    pub fn get_local(&self, local: usize) -> Hops {
        Hops::from_raw(self.dist[local])
    }

    /// `(vertex, distance)` pairs in local-index order.
    pub fn iter(&self) -> impl Iterator<Item = (VertexId, Hops)> + '_ {
        self.graph
            .ids()
            .iter()
            .zip(&self.dist)
            .map(|(&v, &d)| (v, Hops::from_raw(d)))
    }
}

/// Hop distance from the nearest source to every vertex.
pub fn multi_source_bfs<'g>(g: &'g Graph, sources: &[VertexId]) -> Result<DistanceField<'g>> {
    if sources.is_empty() {
        return Err(Error::invalid("multi-source BFS needs at least one source"));
    }
    let locals = sources
        .iter()
        .map(|&s| g.require_local(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceField {
        graph: g,
        sources: sources.to_vec(),
        dist: g.bfs_local(&locals),
    })
}

/// Largest min-distance from a covered vertex (that is not a center) to the
/// center set; 0 when every covered vertex is a center.
pub fn coverage_radius(g: &Graph, covered: &[VertexId], centers: &[VertexId]) -> Result<Hops> {
    if centers.is_empty() {
        return Err(Error::invalid("coverage radius needs at least one center"));
    }
    let field = multi_source_bfs(g, centers)?;
    let mut radius = Hops::Finite(0);
    for &u in covered {
        let d = field
            .get(u)
            .ok_or_else(|| Error::invalid(format!("covered vertex {u} is not in the graph")))?;
        radius = radius.max(d);
    }
    Ok(radius)
}

/// The `k`-hop neighborhood subgraph around a root vertex.
#[derive(Debug, Clone)]
pub struct EgoGraph {
    pub root: VertexId,
    pub hops: u32,
    /// Induced subgraph over `{u : d(u, root) ≤ hops}`.
    pub local_adjacency: Graph,
    /// Feature rows aligned with `local_adjacency`'s local order, when attached.
    pub local_features: Option<Array2<f64>>,
}

impl EgoGraph {
    /// Attach feature rows, taken from a matrix aligned with `source`'s local order.
    pub fn with_features(mut self, source: &Graph, features: &Array2<f64>) -> Result<Self> {
        if features.nrows() != source.num_vertices() {
            return Err(Error::invalid("feature rows do not match the source graph"));
        }
        let rows: Vec<usize> = self
            .local_adjacency
            .ids()
            .iter()
            .map(|&v| source.require_local(v))
            .collect::<Result<_>>()?;
        self.local_features = Some(features.select(Axis(0), &rows));
        Ok(self)
    }
}

pub fn ego_graph(g: &Graph, v: VertexId, k: u32) -> Result<EgoGraph> {
    let root = g.require_local(v)?;
    let dist = g.bfs_local(&[root]);
    let members: Vec<VertexId> = dist
        .iter()
        .enumerate()
        .filter(|&(_, &d)| d <= k)
        .map(|(l, _)| g.global(l))
        .collect();
    Ok(EgoGraph {
        root: v,
        hops: k,
        local_adjacency: g.induced_subgraph(&members)?,
        local_features: None,
    })
}
