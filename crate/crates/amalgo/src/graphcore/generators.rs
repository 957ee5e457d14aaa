//! Built-in graph generators: the concrete graphs the constructions and
//! their tests touch (integer line, finite factors, a one-ended grid,
//! regular and semiregular trees), plus explicit finite graphs.

use super::{Graph, GraphHandle, VertexId};
use crate::{Error, Result};
use std::collections::BTreeMap;

fn parse_int(v: &VertexId) -> Option<i64> {
    v.as_str().parse().ok()
}

/// The double ray: vertex set Z, edges between consecutive integers.
pub fn doubleray() -> GraphHandle {
    GraphHandle::new(DoubleRay)
}

struct DoubleRay;

impl Graph for DoubleRay {
    fn name(&self) -> String {
        "doubleray".into()
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let n = parse_int(v).ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))?;
        Ok(vec![VertexId::from(n - 1), VertexId::from(n + 1)])
    }

    fn origin(&self) -> VertexId {
        VertexId::from(0)
    }

    fn contains(&self, v: &VertexId) -> bool {
        parse_int(v).is_some()
    }

    fn metric(&self, u: &VertexId, v: &VertexId) -> Option<u64> {
        Some(parse_int(u)?.abs_diff(parse_int(v)?))
    }
}

/// Cycle on `n >= 3` vertices `0..n`.
pub fn cycle(n: u64) -> GraphHandle {
    assert!(n >= 3, "cycle needs at least 3 vertices");
    GraphHandle::new(Cycle { n })
}

struct Cycle {
    n: u64,
}

impl Graph for Cycle {
    fn name(&self) -> String {
        format!("cycle({})", self.n)
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let i = parse_int(v)
            .filter(|&i| i >= 0 && (i as u64) < self.n)
            .ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))? as u64;
        Ok(vec![
            VertexId::from(((i + self.n - 1) % self.n) as i64),
            VertexId::from(((i + 1) % self.n) as i64),
        ])
    }

    fn origin(&self) -> VertexId {
        VertexId::from(0)
    }

    fn contains(&self, v: &VertexId) -> bool {
        parse_int(v).map_or(false, |i| i >= 0 && (i as u64) < self.n)
    }

    fn metric(&self, u: &VertexId, v: &VertexId) -> Option<u64> {
        let a = parse_int(u)? as u64;
        let b = parse_int(v)? as u64;
        let d = a.abs_diff(b);
        Some(d.min(self.n - d))
    }

    fn vertices(&self) -> Option<Vec<VertexId>> {
        Some((0..self.n).map(|i| VertexId::from(i as i64)).collect())
    }
}

/// Path on `n >= 1` vertices `0..n`.
pub fn path(n: u64) -> GraphHandle {
    assert!(n >= 1);
    GraphHandle::new(Path { n })
}

struct Path {
    n: u64,
}

impl Graph for Path {
    fn name(&self) -> String {
        format!("path({})", self.n)
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let i = parse_int(v)
            .filter(|&i| i >= 0 && (i as u64) < self.n)
            .ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))?;
        let mut out = Vec::new();
        if i > 0 {
            out.push(VertexId::from(i - 1));
        }
        if ((i + 1) as u64) < self.n {
            out.push(VertexId::from(i + 1));
        }
        Ok(out)
    }

    fn origin(&self) -> VertexId {
        VertexId::from(0)
    }

    fn base(&self) -> Option<VertexId> {
        Some(VertexId::from(0))
    }

    fn contains(&self, v: &VertexId) -> bool {
        parse_int(v).map_or(false, |i| i >= 0 && (i as u64) < self.n)
    }

    fn metric(&self, u: &VertexId, v: &VertexId) -> Option<u64> {
        Some(parse_int(u)?.abs_diff(parse_int(v)?))
    }

    fn vertices(&self) -> Option<Vec<VertexId>> {
        Some((0..self.n).map(|i| VertexId::from(i as i64)).collect())
    }
}

/// Complete graph on `n >= 1` vertices `0..n`.
pub fn complete(n: u64) -> GraphHandle {
    assert!(n >= 1);
    GraphHandle::new(Complete { n })
}

struct Complete {
    n: u64,
}

impl Graph for Complete {
    fn name(&self) -> String {
        format!("complete({})", self.n)
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let i = parse_int(v)
            .filter(|&i| i >= 0 && (i as u64) < self.n)
            .ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))?;
        Ok((0..self.n as i64)
            .filter(|&j| j != i)
            .map(VertexId::from)
            .collect())
    }

    fn origin(&self) -> VertexId {
        VertexId::from(0)
    }

    fn base(&self) -> Option<VertexId> {
        Some(VertexId::from(0))
    }

    fn contains(&self, v: &VertexId) -> bool {
        parse_int(v).map_or(false, |i| i >= 0 && (i as u64) < self.n)
    }

    fn metric(&self, u: &VertexId, v: &VertexId) -> Option<u64> {
        let a = parse_int(u)?;
        let b = parse_int(v)?;
        Some(if a == b { 0 } else { 1 })
    }

    fn vertices(&self) -> Option<Vec<VertexId>> {
        Some((0..self.n).map(|i| VertexId::from(i as i64)).collect())
    }
}

/// The square grid Z x Z with tokens `x,y`; one-ended.
pub fn grid2d() -> GraphHandle {
    GraphHandle::new(Grid2d)
}

struct Grid2d;

fn parse_pair(v: &VertexId) -> Option<(i64, i64)> {
    let (x, y) = v.as_str().split_once(',')?;
    Some((x.parse().ok()?, y.parse().ok()?))
}

impl Graph for Grid2d {
    fn name(&self) -> String {
        "grid2d".into()
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let (x, y) =
            parse_pair(v).ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))?;
        Ok([(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
            .into_iter()
            .map(|(a, b)| VertexId::new(format!("{a},{b}")))
            .collect())
    }

    fn origin(&self) -> VertexId {
        VertexId::new("0,0")
    }

    fn contains(&self, v: &VertexId) -> bool {
        parse_pair(v).is_some()
    }

    fn metric(&self, u: &VertexId, v: &VertexId) -> Option<u64> {
        let (a, b) = parse_pair(u)?;
        let (c, d) = parse_pair(v)?;
        Some(a.abs_diff(c) + b.abs_diff(d))
    }
}

/// Tree address tokens: root `r`, children appended as `.i`.
fn parse_tree_addr(v: &VertexId) -> Option<Vec<u32>> {
    let s = v.as_str();
    let rest = s.strip_prefix('r')?;
    if rest.is_empty() {
        return Some(Vec::new());
    }
    rest.strip_prefix('.')?
        .split('.')
        .map(|p| p.parse().ok())
        .collect()
}

fn tree_addr_token(addr: &[u32]) -> VertexId {
    if addr.is_empty() {
        VertexId::new("r")
    } else {
        let parts: Vec<String> = addr.iter().map(|i| i.to_string()).collect();
        VertexId::new(format!("r.{}", parts.join(".")))
    }
}

fn tree_distance(a: &[u32], b: &[u32]) -> u64 {
    let common = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count();
    (a.len() - common + b.len() - common) as u64
}

/// The `d`-regular tree, `d >= 3`.
pub fn regtree(d: u32) -> GraphHandle {
    assert!(d >= 3);
    GraphHandle::new(RegTree { d })
}

struct RegTree {
    d: u32,
}

impl RegTree {
    fn valid(&self, addr: &[u32]) -> bool {
        addr.iter().enumerate().all(|(i, &c)| {
            let fanout = if i == 0 { self.d } else { self.d - 1 };
            c < fanout
        })
    }
}

impl Graph for RegTree {
    fn name(&self) -> String {
        format!("regtree({})", self.d)
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let addr = parse_tree_addr(v)
            .filter(|a| self.valid(a))
            .ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))?;
        let mut out = Vec::new();
        if !addr.is_empty() {
            out.push(tree_addr_token(&addr[..addr.len() - 1]));
        }
        let fanout = if addr.is_empty() { self.d } else { self.d - 1 };
        for c in 0..fanout {
            let mut child = addr.clone();
            child.push(c);
            out.push(tree_addr_token(&child));
        }
        Ok(out)
    }

    fn origin(&self) -> VertexId {
        tree_addr_token(&[])
    }

    fn contains(&self, v: &VertexId) -> bool {
        parse_tree_addr(v).map_or(false, |a| self.valid(&a))
    }

    fn metric(&self, u: &VertexId, v: &VertexId) -> Option<u64> {
        Some(tree_distance(&parse_tree_addr(u)?, &parse_tree_addr(v)?))
    }
}

/// The `(p1, p2)`-semiregular tree: the canonical bipartition side of a
/// vertex is its depth parity, the root lies on the degree-`p1` side.
pub fn semitree(p1: u32, p2: u32) -> GraphHandle {
    assert!(p1 >= 1 && p2 >= 1);
    GraphHandle::new(SemiTree { p1, p2 })
}

struct SemiTree {
    p1: u32,
    p2: u32,
}

impl SemiTree {
    fn degree_at_depth(&self, depth: usize) -> u32 {
        if depth % 2 == 0 {
            self.p1
        } else {
            self.p2
        }
    }

    fn valid(&self, addr: &[u32]) -> bool {
        addr.iter().enumerate().all(|(i, &c)| {
            let deg = self.degree_at_depth(i);
            let fanout = if i == 0 { deg } else { deg.saturating_sub(1) };
            c < fanout
        })
    }
}

impl Graph for SemiTree {
    fn name(&self) -> String {
        format!("semitree({},{})", self.p1, self.p2)
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let addr = parse_tree_addr(v)
            .filter(|a| self.valid(a))
            .ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))?;
        let mut out = Vec::new();
        if !addr.is_empty() {
            out.push(tree_addr_token(&addr[..addr.len() - 1]));
        }
        let deg = self.degree_at_depth(addr.len());
        let fanout = if addr.is_empty() { deg } else { deg - 1 };
        for c in 0..fanout {
            let mut child = addr.clone();
            child.push(c);
            out.push(tree_addr_token(&child));
        }
        Ok(out)
    }

    fn origin(&self) -> VertexId {
        tree_addr_token(&[])
    }

    fn contains(&self, v: &VertexId) -> bool {
        parse_tree_addr(v).map_or(false, |a| self.valid(&a))
    }

    fn metric(&self, u: &VertexId, v: &VertexId) -> Option<u64> {
        Some(tree_distance(&parse_tree_addr(u)?, &parse_tree_addr(v)?))
    }
}

/// Explicit finite graph from an edge list; isolated vertices may be
/// listed separately.
#[derive(Clone)]
pub struct ExplicitGraph {
    name: String,
    adj: BTreeMap<VertexId, Vec<VertexId>>,
    origin: VertexId,
    base: Option<VertexId>,
}

impl ExplicitGraph {
    pub fn from_edges(
        name: impl Into<String>,
        edges: &[(VertexId, VertexId)],
        extra_vertices: &[VertexId],
        base: Option<VertexId>,
    ) -> Result<ExplicitGraph> {
        let mut adj: BTreeMap<VertexId, Vec<VertexId>> = BTreeMap::new();
        for v in extra_vertices {
            adj.entry(v.clone()).or_default();
        }
        for (a, b) in edges {
            if a == b {
                return Err(Error::Schema(format!("loop edge at `{a}`")));
            }
            adj.entry(a.clone()).or_default().push(b.clone());
            adj.entry(b.clone()).or_default().push(a.clone());
        }
        for row in adj.values_mut() {
            row.sort();
            row.dedup();
        }
        let origin = adj
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| Error::Schema("empty graph".into()))?;
        Ok(ExplicitGraph {
            name: name.into(),
            adj,
            origin,
            base,
        })
    }

    /// Same graph with a chosen origin vertex.
    pub fn with_origin(mut self, origin: VertexId) -> ExplicitGraph {
        assert!(self.adj.contains_key(&origin), "origin must be a vertex");
        self.origin = origin;
        self
    }

    pub fn handle(self) -> GraphHandle {
        GraphHandle::new(self)
    }
}

impl Graph for ExplicitGraph {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        self.adj
            .get(v)
            .cloned()
            .ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))
    }

    fn origin(&self) -> VertexId {
        self.origin.clone()
    }

    fn base(&self) -> Option<VertexId> {
        self.base.clone()
    }

    fn contains(&self, v: &VertexId) -> bool {
        self.adj.contains_key(v)
    }

    fn vertices(&self) -> Option<Vec<VertexId>> {
        Some(self.adj.keys().cloned().collect())
    }
}

/// Explicit finite graph handle from string-token edges.
pub fn explicit(
    name: &str,
    edges: &[(&str, &str)],
    extra: &[&str],
    base: Option<&str>,
) -> GraphHandle {
    let edges: Vec<(VertexId, VertexId)> = edges
        .iter()
        .map(|(a, b)| (VertexId::new(*a), VertexId::new(*b)))
        .collect();
    let extra: Vec<VertexId> = extra.iter().map(|v| VertexId::new(*v)).collect();
    ExplicitGraph::from_edges(name, &edges, &extra, base.map(VertexId::new))
        .expect("valid explicit graph")
        .handle()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn semitree_degrees_alternate() {
        let g = semitree(3, 4);
        let root = g.origin();
        assert_eq!(g.neighbors(&root).unwrap().len(), 3);
        let child = &g.neighbors(&root).unwrap()[0];
        assert_eq!(g.neighbors(child).unwrap().len(), 4);
    }

    #[test]
    fn tree_tokens_round_trip() {
        let g = regtree(3);
        let root = g.origin();
        for v in g.neighbors(&root).unwrap() {
            let again = VertexId::new(v.to_string());
            assert!(g.contains(&again));
            assert!(g.neighbors(&again).unwrap().contains(&root));
        }
    }

    #[test]
    fn explicit_graph_basics() {
        let g = explicit("tri", &[("a", "b"), ("b", "c"), ("a", "c")], &[], Some("a"));
        assert_eq!(g.order(), Some(3));
        assert_eq!(g.base().unwrap().to_string(), "a");
        assert_eq!(g.diameter().unwrap(), 1);
    }
}
