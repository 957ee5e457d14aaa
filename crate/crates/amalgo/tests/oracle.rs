//! Independent construction oracle: the contracted amalgam is rebuilt
//! from scratch with union-find over the bridging edges of a finite
//! sum-graph window, then compared vertex-for-vertex against the lazy
//! contracted handle — same canonical names, same distances from the
//! origin, same neighbourhoods.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use amalgo::amalgam::{
    amalgam_tree, contract, sum_graph, sum_parts, sum_token, AmalgamSpec, TreeAddress,
};
use amalgo::graphcore::{ball, complete, cycle, VertexId};
use amalgo::Budget;

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind((0..n as u32).collect())
    }

    fn find(&mut self, i: u32) -> u32 {
        let p = self.0[i as usize];
        if p == i {
            return i;
        }
        let r = self.find(p);
        self.0[i as usize] = r;
        r
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra as usize] = rb;
        }
    }
}

/// Rebuild the contraction inside the window of tree depth `2r + 4` and
/// compare its radius-`r` ball against the lazy handle. The depth margin
/// keeps every identification class touched within radius `r` — and all
/// its neighbours — fully inside the window.
fn check_quotient(spec: &AmalgamSpec, r: u64) {
    let budget = Budget::default();
    let depth = 2 * r + 4;

    // every sum vertex over addresses up to the window depth
    let tree = amalgam_tree(spec).unwrap();
    let addrs = ball(&tree, &tree.origin(), depth, &budget).unwrap();
    let mut verts: Vec<VertexId> = Vec::new();
    for a in &addrs.vertices {
        let t = TreeAddress::parse(a.as_str()).unwrap();
        for x in spec.factor(t.side()).vertices().unwrap() {
            verts.push(sum_token(&t, &x));
        }
    }
    verts.sort();
    let index: HashMap<VertexId, u32> = verts
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), i as u32))
        .collect();

    // split the sum edges: same-address edges stay, cross-address
    // bridging edges are contracted via union-find
    let sg = sum_graph(spec);
    let mut uf = UnionFind::new(verts.len());
    let mut factor_edges: Vec<(u32, u32)> = Vec::new();
    for (i, v) in verts.iter().enumerate() {
        let (tv, _) = sum_parts(v).unwrap();
        for w in sg.neighbors(v).unwrap() {
            let Some(&j) = index.get(&w) else { continue };
            let (tw, _) = sum_parts(&w).unwrap();
            if tv == tw {
                factor_edges.push((i as u32, j));
            } else {
                uf.union(i as u32, j);
            }
        }
    }

    // name each class by its least member under (address, vertex) order
    let mut least: HashMap<u32, (TreeAddress, VertexId)> = HashMap::new();
    for (i, v) in verts.iter().enumerate() {
        let root = uf.find(i as u32);
        let pair = sum_parts(v).unwrap();
        least
            .entry(root)
            .and_modify(|m| {
                if pair < *m {
                    *m = pair.clone();
                }
            })
            .or_insert(pair);
    }
    let name_of = |uf: &mut UnionFind, i: u32| -> VertexId {
        let (t, x) = &least[&uf.find(i)];
        sum_token(t, x)
    };

    let mut q_adj: HashMap<VertexId, BTreeSet<VertexId>> = HashMap::new();
    for (i, j) in factor_edges {
        let a = name_of(&mut uf, i);
        let b = name_of(&mut uf, j);
        if a != b {
            q_adj.entry(a.clone()).or_default().insert(b.clone());
            q_adj.entry(b).or_default().insert(a);
        }
    }

    // breadth-first search in the rebuilt quotient
    let start = name_of(&mut uf, index[&sg.origin()]);
    let mut dist: HashMap<VertexId, u64> = HashMap::new();
    dist.insert(start.clone(), 0);
    let mut queue = VecDeque::from([start.clone()]);
    while let Some(v) = queue.pop_front() {
        let d = dist[&v];
        if d == r {
            continue;
        }
        for w in q_adj.get(&v).into_iter().flatten() {
            if !dist.contains_key(w) {
                dist.insert(w.clone(), d + 1);
                queue.push_back(w.clone());
            }
        }
    }

    // the lazy handle must agree on origin, spheres and neighbourhoods
    let g = contract(spec);
    assert_eq!(start, g.origin(), "origin class name");
    let bv = ball(&g, &g.origin(), r, &budget).unwrap();

    let mut expected: BTreeMap<u64, BTreeSet<VertexId>> = BTreeMap::new();
    for (v, d) in &dist {
        expected.entry(*d).or_default().insert(v.clone());
    }
    let mut got: BTreeMap<u64, BTreeSet<VertexId>> = BTreeMap::new();
    for (i, v) in bv.vertices.iter().enumerate() {
        got.entry(bv.dist[i] as u64).or_default().insert(v.clone());
    }
    assert_eq!(expected, got, "{}: spheres up to radius {r}", spec.name());

    for v in &bv.vertices {
        let lazy: BTreeSet<VertexId> = g.neighbors(v).unwrap().into_iter().collect();
        let rebuilt = q_adj.get(v).cloned().unwrap_or_default();
        assert_eq!(rebuilt, lazy, "{}: neighbours of {v}", spec.name());
    }
}

#[test]
fn quotient_oracle_matches_edge_pair_amalgam() {
    let spec = AmalgamSpec::new(
        "S1",
        complete(2),
        vec![vec![VertexId::from(0)], vec![VertexId::from(1)]],
        complete(2),
        vec![vec![VertexId::from(0)], vec![VertexId::from(1)]],
    )
    .unwrap();
    check_quotient(&spec, 8);
}

#[test]
fn quotient_oracle_matches_triangle_edge_amalgam() {
    let spec = AmalgamSpec::new(
        "S2",
        cycle(3),
        vec![
            vec![VertexId::from(0)],
            vec![VertexId::from(1)],
            vec![VertexId::from(2)],
        ],
        complete(2),
        vec![vec![VertexId::from(0)], vec![VertexId::from(1)]],
    )
    .unwrap();
    check_quotient(&spec, 6);
}
