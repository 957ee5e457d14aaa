//! Truncation-based end counting and separation profiles.
//!
//! End counts on finite windows are estimates by nature: the census at
//! inner radius `r` is promoted to a count class only when it is stable
//! (after capping at 3) for the three radii `r`, `r+1`, `r+2`. That
//! stability rule is a declared convention of this crate, and every
//! report carries the window it was computed on.

use crate::graphcore::{ball, BallView, GraphHandle};
use crate::{Budget, Error, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EndClass {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = ">=3")]
    AtLeastThree,
    #[serde(rename = "undecided")]
    Undecided,
}

impl std::fmt::Display for EndClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EndClass::Zero => "0",
            EndClass::One => "1",
            EndClass::Two => "2",
            EndClass::AtLeastThree => ">=3",
            EndClass::Undecided => "undecided",
        };
        f.write_str(s)
    }
}

/// Windowed end-count estimate: census of deep components reaching the
/// outer sphere, plus the promoted class.
#[derive(Debug, Clone, Serialize)]
pub struct EndEstimate {
    pub r: u64,
    #[serde(rename = "R")]
    pub outer: u64,
    pub census: u64,
    pub class: EndClass,
}

/// Deep components of the window: connected components of the induced
/// subgraph on vertices at distance >= `r` from the center. Returns, per
/// component, its vertex indices and whether it reaches the outer sphere.
fn deep_components(bv: &BallView, r: u64) -> Vec<(Vec<u32>, bool)> {
    let n = bv.len();
    let deep = |i: usize| bv.dist[i] as u64 >= r;
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] || !deep(start) {
            continue;
        }
        let mut comp = Vec::new();
        let mut reaches = false;
        let mut queue = std::collections::VecDeque::new();
        seen[start] = true;
        queue.push_back(start as u32);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            if bv.dist[i as usize] as u64 == bv.radius {
                reaches = true;
            }
            for &j in &bv.adj[i as usize] {
                if deep(j as usize) && !seen[j as usize] {
                    seen[j as usize] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push((comp, reaches));
    }
    out
}

fn census_of(bv: &BallView, r: u64) -> u64 {
    deep_components(bv, r)
        .iter()
        .filter(|(_, reaches)| *reaches)
        .count() as u64
}

/// Census and promoted class at inner radius `r` on the window of radius
/// `R`. Requires the containment margin `R >= 3r`.
pub fn end_count_estimate(
    g: &GraphHandle,
    r: u64,
    outer: u64,
    budget: &Budget,
) -> Result<EndEstimate> {
    if outer < 3 * r {
        return Err(Error::Schema(format!(
            "outer radius {outer} must be at least 3r = {}",
            3 * r
        )));
    }
    let bv = ball(g, &g.origin(), outer, budget)?;
    let census = census_of(&bv, r);
    let class = if census == 0 {
        EndClass::Zero
    } else {
        let capped: Vec<u64> = (r..r + 3).map(|rp| census_of(&bv, rp).min(3)).collect();
        if capped[0] == capped[1] && capped[1] == capped[2] {
            match capped[0] {
                1 => EndClass::One,
                2 => EndClass::Two,
                _ => EndClass::AtLeastThree,
            }
        } else {
            EndClass::Undecided
        }
    };
    Ok(EndEstimate {
        r,
        outer,
        census,
        class,
    })
}

/// Whether the graph looks like it has at least `k` >= 2 ends at scale
/// `r` (class promoted to >= k, or an undecided census >= k).
pub fn at_least_ends(est: &EndEstimate, k: u64) -> bool {
    match est.class {
        EndClass::Zero => false,
        EndClass::One => k <= 1,
        EndClass::Two => k <= 2,
        EndClass::AtLeastThree => k <= 3 || est.census >= k,
        EndClass::Undecided => est.census >= k,
    }
}

// Unit-capacity vertex max-flow via node splitting; Dinic's algorithm.
struct FlowNet {
    // edges stored as (to, cap); reverse edge at index ^ 1
    to: Vec<u32>,
    cap: Vec<u32>,
    head: Vec<Vec<u32>>,
}

const INF_CAP: u32 = u32::MAX / 2;

impl FlowNet {
    fn new(n: usize) -> Self {
        FlowNet {
            to: Vec::new(),
            cap: Vec::new(),
            head: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, u: u32, v: u32, c: u32) {
        let e = self.to.len() as u32;
        self.to.push(v);
        self.cap.push(c);
        self.to.push(u);
        self.cap.push(0);
        self.head[u as usize].push(e);
        self.head[v as usize].push(e + 1);
    }

    fn max_flow(&mut self, s: u32, t: u32) -> u64 {
        let n = self.head.len();
        let mut flow = 0u64;
        loop {
            // BFS level graph
            let mut level = vec![u32::MAX; n];
            level[s as usize] = 0;
            let mut queue = std::collections::VecDeque::new();
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &e in &self.head[u as usize] {
                    let v = self.to[e as usize];
                    if self.cap[e as usize] > 0 && level[v as usize] == u32::MAX {
                        level[v as usize] = level[u as usize] + 1;
                        queue.push_back(v);
                    }
                }
            }
            if level[t as usize] == u32::MAX {
                return flow;
            }
            let mut iter = vec![0usize; n];
            loop {
                let pushed = self.dfs(s, t, INF_CAP, &level, &mut iter);
                if pushed == 0 {
                    break;
                }
                flow += pushed as u64;
            }
        }
    }

    fn dfs(&mut self, u: u32, t: u32, limit: u32, level: &[u32], iter: &mut [usize]) -> u32 {
        if u == t {
            return limit;
        }
        while iter[u as usize] < self.head[u as usize].len() {
            let e = self.head[u as usize][iter[u as usize]] as usize;
            let v = self.to[e];
            if self.cap[e] > 0 && level[v as usize] == level[u as usize] + 1 {
                let pushed = self.dfs(v, t, limit.min(self.cap[e]), level, iter);
                if pushed > 0 {
                    self.cap[e] -= pushed;
                    self.cap[e ^ 1] += pushed;
                    return pushed;
                }
            }
            iter[u as usize] += 1;
        }
        0
    }
}

/// Accessibility witness at scale `r`: the maximum, over pairs of deep
/// components reaching the outer sphere (`R = 3r`), of the minimum
/// vertex cut inside the window separating their sphere attachments.
/// An estimate, not a proof.
pub fn separation_profile(g: &GraphHandle, r: u64, budget: &Budget) -> Result<u64> {
    let outer = 3 * r;
    let bv = ball(g, &g.origin(), outer, budget)?;
    let comps: Vec<Vec<u32>> = deep_components(&bv, r)
        .into_iter()
        .filter(|(_, reaches)| *reaches)
        .map(|(c, _)| c)
        .collect();
    if comps.len() < 2 {
        return Err(Error::NotMultiEnded(r));
    }
    // Sphere attachments per component.
    let attachments: Vec<Vec<u32>> = comps
        .iter()
        .map(|c| {
            c.iter()
                .copied()
                .filter(|&i| bv.dist[i as usize] as u64 == outer)
                .collect()
        })
        .collect();
    let n = bv.len();
    let pairs = (comps.len() * (comps.len() - 1) / 2) as u64;
    if pairs > budget.pairs {
        return Err(Error::PairBudget(budget.pairs));
    }
    let mut best = 0u64;
    for a in 0..comps.len() {
        for b in a + 1..comps.len() {
            // Node split: vertex i -> in 2i, out 2i+1, capacity 1.
            let s = (2 * n) as u32;
            let t = s + 1;
            let mut net = FlowNet::new(2 * n + 2);
            for i in 0..n as u32 {
                net.add(2 * i, 2 * i + 1, 1);
            }
            for (i, row) in bv.adj.iter().enumerate() {
                for &j in row {
                    net.add(2 * i as u32 + 1, 2 * j, INF_CAP);
                }
            }
            for &i in &attachments[a] {
                net.add(s, 2 * i, INF_CAP);
            }
            for &i in &attachments[b] {
                net.add(2 * i + 1, t, INF_CAP);
            }
            best = best.max(net.max_flow(s, t));
        }
    }
    Ok(best)
}
