//! Uniform lazy representation of connected locally finite graphs with
//! exact metric queries on finite balls.
//!
//! A [`GraphHandle`] wraps a neighbor oracle. Oracles are pure functions
//! of (generator parameters, vertex), so handles are safe to query from
//! many workers; internal memo caches never change results.

mod generators;

pub use generators::{complete, cycle, doubleray, explicit, grid2d, path, regtree, semitree, ExplicitGraph};

use crate::{Budget, Error, Result};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Opaque vertex identifier: a hierarchical string token with
/// deterministic equality and ordering. Every identifier returned by an
/// oracle round-trips through its string form.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId(Arc<str>);

impl VertexId {
    pub fn new(token: impl Into<String>) -> Self {
        VertexId(Arc::from(token.into().as_str()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{:?}", &*self.0)
    }
}

impl From<&str> for VertexId {
    fn from(s: &str) -> Self {
        VertexId::new(s)
    }
}

impl From<i64> for VertexId {
    fn from(n: i64) -> Self {
        VertexId::new(n.to_string())
    }
}

/// Neighbor oracle of a connected locally finite simple graph.
///
/// `neighbors` must return a finite, duplicate-free list that excludes
/// the vertex itself, in a deterministic order, and must be symmetric:
/// `u in neighbors(v)` iff `v in neighbors(u)`.
pub trait Graph: Send + Sync {
    fn name(&self) -> String;

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>>;

    /// Default center for ball enumeration; every vertex is reachable
    /// from it.
    fn origin(&self) -> VertexId;

    /// Base vertex for pointed constructions, if any.
    fn base(&self) -> Option<VertexId> {
        None
    }

    fn contains(&self, v: &VertexId) -> bool;

    /// Exact graph distance when the generator admits a closed form
    /// (integer line, grids, trees via longest-common-prefix). `None`
    /// falls back to breadth-first search.
    fn metric(&self, _u: &VertexId, _v: &VertexId) -> Option<u64> {
        None
    }

    /// All vertices, for finite graphs only.
    fn vertices(&self) -> Option<Vec<VertexId>> {
        None
    }
}

/// Shared handle to a lazily evaluated graph, optionally re-pointed at a
/// base vertex.
#[derive(Clone)]
pub struct GraphHandle {
    inner: Arc<dyn Graph>,
    base_override: Option<VertexId>,
}

impl GraphHandle {
    pub fn new(g: impl Graph + 'static) -> Self {
        GraphHandle {
            inner: Arc::new(g),
            base_override: None,
        }
    }

    pub fn from_arc(inner: Arc<dyn Graph>) -> Self {
        GraphHandle {
            inner,
            base_override: None,
        }
    }

    pub fn name(&self) -> String {
        self.inner.name()
    }

    pub fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        self.inner.neighbors(v)
    }

    pub fn origin(&self) -> VertexId {
        self.inner.origin()
    }

    pub fn base(&self) -> Option<VertexId> {
        self.base_override.clone().or_else(|| self.inner.base())
    }

    /// Same graph pointed at `v`.
    pub fn pointed(&self, v: VertexId) -> GraphHandle {
        GraphHandle {
            inner: Arc::clone(&self.inner),
            base_override: Some(v),
        }
    }

    pub fn contains(&self, v: &VertexId) -> bool {
        self.inner.contains(v)
    }

    pub fn metric(&self, u: &VertexId, v: &VertexId) -> Option<u64> {
        self.inner.metric(u, v)
    }

    pub fn vertices(&self) -> Option<Vec<VertexId>> {
        self.inner.vertices()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.vertices().is_some()
    }

    /// Vertex count for finite graphs.
    pub fn order(&self) -> Option<usize> {
        self.inner.vertices().map(|v| v.len())
    }

    /// Diameter of a finite graph by all-pairs BFS.
    pub fn diameter(&self) -> Result<u64> {
        let verts = self
            .vertices()
            .ok_or_else(|| Error::FactorNotFinite(self.name()))?;
        let mut diam = 0;
        for u in &verts {
            let dists = bfs_distances(self, u, u64::MAX, None, &Budget::default())?;
            for d in dists.values() {
                diam = diam.max(*d);
            }
        }
        Ok(diam)
    }
}

impl fmt::Debug for GraphHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GraphHandle({})", self.name())
    }
}

/// Finite window onto a graph: the exact set of vertices at distance at
/// most `radius` from `center`, with induced adjacency and BFS distances.
#[derive(Debug, Clone)]
pub struct BallView {
    pub center: VertexId,
    pub radius: u64,
    /// BFS discovery order; position is the vertex index used by `adj`.
    pub vertices: Vec<VertexId>,
    pub index: HashMap<VertexId, u32>,
    /// Distance from center, per vertex index.
    pub dist: Vec<u32>,
    /// Induced adjacency among listed vertices, sorted per row.
    pub adj: Vec<Vec<u32>>,
}

impl BallView {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, v: &VertexId) -> bool {
        self.index.contains_key(v)
    }

    pub fn distance_from_center(&self, v: &VertexId) -> Option<u64> {
        self.index.get(v).map(|&i| self.dist[i as usize] as u64)
    }

    /// BFS distances from the vertex at `src` restricted to the ball's
    /// induced subgraph. `u32::MAX` marks unreachable vertices.
    pub fn distances_within(&self, src: u32) -> Vec<u32> {
        let n = self.vertices.len();
        let mut dist = vec![u32::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        dist[src as usize] = 0;
        queue.push_back(src);
        while let Some(x) = queue.pop_front() {
            let dx = dist[x as usize];
            for &y in &self.adj[x as usize] {
                if dist[y as usize] == u32::MAX {
                    dist[y as usize] = dx + 1;
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    /// Edges as sorted token pairs, lexicographically sorted lines.
    pub fn edge_list(&self) -> String {
        let mut lines = Vec::new();
        for (i, row) in self.adj.iter().enumerate() {
            for &j in row {
                if (j as usize) > i {
                    let a = self.vertices[i].as_str();
                    let b = self.vertices[j as usize].as_str();
                    let (a, b) = if a <= b { (a, b) } else { (b, a) };
                    lines.push(format!("{a} {b}"));
                }
            }
        }
        lines.sort();
        lines.dedup();
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }

    pub fn dot(&self) -> String {
        let mut out = String::from("graph ball {\n");
        let mut names: Vec<&str> = self.vertices.iter().map(|v| v.as_str()).collect();
        names.sort();
        for n in names {
            out.push_str(&format!("  \"{n}\";\n"));
        }
        let mut lines = Vec::new();
        for (i, row) in self.adj.iter().enumerate() {
            for &j in row {
                if (j as usize) > i {
                    let a = self.vertices[i].as_str();
                    let b = self.vertices[j as usize].as_str();
                    let (a, b) = if a <= b { (a, b) } else { (b, a) };
                    lines.push(format!("  \"{a}\" -- \"{b}\";\n"));
                }
            }
        }
        lines.sort();
        lines.dedup();
        for l in lines {
            out.push_str(&l);
        }
        out.push_str("}\n");
        out
    }
}

/// Full adjacency list of `v`, in the oracle's deterministic order.
pub fn neighbors(g: &GraphHandle, v: &VertexId) -> Result<Vec<VertexId>> {
    if !g.contains(v) {
        return Err(Error::UnknownVertex(v.to_string(), g.name()));
    }
    g.neighbors(v)
}

/// BFS-closed ball of radius `r` around `x0` with induced adjacency.
pub fn ball(g: &GraphHandle, x0: &VertexId, r: u64, budget: &Budget) -> Result<BallView> {
    if !g.contains(x0) {
        return Err(Error::UnknownVertex(x0.to_string(), g.name()));
    }
    let mut vertices = vec![x0.clone()];
    let mut index: HashMap<VertexId, u32> = HashMap::new();
    index.insert(x0.clone(), 0);
    let mut dist = vec![0u32];
    let mut head = 0usize;
    while head < vertices.len() {
        let d = dist[head];
        if (d as u64) >= r {
            head += 1;
            continue;
        }
        let v = vertices[head].clone();
        for w in g.neighbors(&v)? {
            if !index.contains_key(&w) {
                if vertices.len() >= budget.vertices {
                    return Err(Error::VertexBudget {
                        limit: budget.vertices,
                        radius: r,
                    });
                }
                index.insert(w.clone(), vertices.len() as u32);
                vertices.push(w);
                dist.push(d + 1);
            }
        }
        head += 1;
    }
    let mut adj = vec![Vec::new(); vertices.len()];
    for (i, v) in vertices.iter().enumerate() {
        for w in g.neighbors(v)? {
            if let Some(&j) = index.get(&w) {
                adj[i].push(j);
            }
        }
        adj[i].sort_unstable();
        adj[i].dedup();
    }
    Ok(BallView {
        center: x0.clone(),
        radius: r,
        vertices,
        index,
        dist,
        adj,
    })
}

/// BFS distances from `src`, capped at depth `cap`, optionally stopping
/// early once all of `targets` have been found.
pub fn bfs_distances(
    g: &GraphHandle,
    src: &VertexId,
    cap: u64,
    targets: Option<&[VertexId]>,
    budget: &Budget,
) -> Result<HashMap<VertexId, u64>> {
    let mut dist: HashMap<VertexId, u64> = HashMap::new();
    dist.insert(src.clone(), 0);
    let mut frontier = vec![src.clone()];
    let mut remaining = targets.map(|ts| {
        ts.iter()
            .filter(|t| *t != src)
            .cloned()
            .collect::<std::collections::HashSet<_>>()
    });
    let mut d = 0u64;
    while !frontier.is_empty() && d < cap {
        if let Some(rem) = &remaining {
            if rem.is_empty() {
                break;
            }
        }
        d += 1;
        let mut next = Vec::new();
        for v in &frontier {
            for w in g.neighbors(v)? {
                if !dist.contains_key(&w) {
                    if dist.len() >= budget.vertices {
                        return Err(Error::VertexBudget {
                            limit: budget.vertices,
                            radius: cap,
                        });
                    }
                    dist.insert(w.clone(), d);
                    if let Some(rem) = &mut remaining {
                        rem.remove(&w);
                    }
                    next.push(w);
                }
            }
        }
        frontier = next;
    }
    Ok(dist)
}

/// The true graph distance between `u` and `v`, both lying in the ball of
/// radius `a` around the origin.
///
/// A geodesic between two vertices of that ball stays within distance
/// `2a` of either endpoint, so a depth-capped search is exact. Closed
/// form metrics are used when the generator provides one.
pub fn exact_distance(g: &GraphHandle, u: &VertexId, v: &VertexId, a: u64) -> Result<u64> {
    exact_distance_with(g, u, v, a, &Budget::default())
}

pub fn exact_distance_with(
    g: &GraphHandle,
    u: &VertexId,
    v: &VertexId,
    a: u64,
    budget: &Budget,
) -> Result<u64> {
    if !g.contains(u) {
        return Err(Error::UnknownVertex(u.to_string(), g.name()));
    }
    if !g.contains(v) {
        return Err(Error::UnknownVertex(v.to_string(), g.name()));
    }
    if let Some(d) = g.metric(u, v) {
        return Ok(d);
    }
    if u == v {
        return Ok(0);
    }
    let cap = 2 * a;
    let dist = bfs_distances(g, u, cap, Some(std::slice::from_ref(v)), budget)?;
    dist.get(v)
        .copied()
        .ok_or_else(|| Error::DisconnectedWindow(u.to_string(), v.to_string(), 3 * a))
}
