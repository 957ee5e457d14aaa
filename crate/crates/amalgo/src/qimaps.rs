//! Explicit quasi-isometry constructions, each packaged with claimed
//! constants over exact rationals.
//!
//! Claimed constants are derived from quantities observed up to a probe
//! radius (identification sizes, degrees, factor diameters); global
//! finiteness of those quantities is the caller's assertion via the
//! presentation. Generous constants are preferred over tight ones: a
//! claim is an upper bound, and verification lives in `qiverify`.

use crate::amalgam::{
    amalgam_tree, contract, identification_class, max_identification_size, psi, sum_graph,
    sum_parts, sum_token, AmalgamSpec, TreeAddress,
};
use crate::ends::{at_least_ends, end_count_estimate};
use crate::graphcore::{ball, regtree, BallView, ExplicitGraph, Graph, GraphHandle, VertexId};
use crate::{Budget, Error, Result};
use num_rational::Ratio;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

pub type Rational = Ratio<i64>;

fn rat(n: i64) -> Rational {
    Ratio::from_integer(n)
}

/// Multiplicative constant `gamma >= 1`, additive constant `c >= 0` and
/// density bound `density_c >= 0` of a quasi-isometry claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QiConstants {
    pub gamma: Rational,
    pub c: Rational,
    pub density_c: Rational,
}

impl QiConstants {
    pub fn new(gamma: Rational, c: Rational, density_c: Rational) -> QiConstants {
        assert!(gamma >= rat(1), "gamma must be at least 1");
        assert!(c >= rat(0) && density_c >= rat(0), "constants must be non-negative");
        QiConstants { gamma, c, density_c }
    }

    pub fn ints(gamma: i64, c: i64, density_c: i64) -> QiConstants {
        QiConstants::new(rat(gamma), rat(c), rat(density_c))
    }

    pub fn identity() -> QiConstants {
        QiConstants::ints(1, 0, 0)
    }
}

impl std::fmt::Display for QiConstants {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gamma={} c={} density_c={}",
            self.gamma, self.c, self.density_c
        )
    }
}

type VertexFn = Arc<dyn Fn(&VertexId) -> Result<VertexId> + Send + Sync>;

/// A vertex map between two graphs together with its claimed constants.
#[derive(Clone)]
pub struct QiMap {
    pub source: GraphHandle,
    pub target: GraphHandle,
    func: VertexFn,
    pub claimed: QiConstants,
    pub construction: String,
}

impl std::fmt::Debug for QiMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "QiMap[{}] {} -> {} ({})",
            self.construction,
            self.source.name(),
            self.target.name(),
            self.claimed
        )
    }
}

impl QiMap {
    pub fn new(
        source: GraphHandle,
        target: GraphHandle,
        func: VertexFn,
        claimed: QiConstants,
        construction: impl Into<String>,
    ) -> QiMap {
        QiMap {
            source,
            target,
            func,
            claimed,
            construction: construction.into(),
        }
    }

    pub fn apply(&self, v: &VertexId) -> Result<VertexId> {
        (self.func)(v)
    }

    /// Same map, different claim.
    pub fn with_claim(&self, claimed: QiConstants) -> QiMap {
        QiMap {
            claimed,
            ..self.clone()
        }
    }

    /// `<source-token> -> <target-token>` lines over a source ball,
    /// sorted, preceded by a constants header.
    pub fn export_on_ball(&self, r: u64, budget: &Budget) -> Result<String> {
        let bv = ball(&self.source, &self.source.origin(), r, budget)?;
        let mut lines = Vec::with_capacity(bv.len());
        for v in &bv.vertices {
            lines.push(format!("{} -> {}", v, self.apply(v)?));
        }
        lines.sort();
        let mut out = format!("# {}: {}\n", self.construction, self.claimed);
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        Ok(out)
    }
}

/// The identity map with constants (1, 0, 0).
pub fn identity(g: &GraphHandle) -> QiMap {
    let h = g.clone();
    QiMap::new(
        g.clone(),
        g.clone(),
        Arc::new(move |v| {
            if h.contains(v) {
                Ok(v.clone())
            } else {
                Err(Error::UnknownVertex(v.to_string(), h.name()))
            }
        }),
        QiConstants::identity(),
        "identity",
    )
}

/// Composition with the standard constant arithmetic.
pub fn compose(f: &QiMap, g: &QiMap) -> Result<QiMap> {
    if f.target.name() != g.source.name() {
        return Err(Error::EndpointMismatch(f.target.name(), g.source.name()));
    }
    let ff = f.func.clone();
    let gf = g.func.clone();
    let claimed = QiConstants::new(
        f.claimed.gamma * g.claimed.gamma,
        g.claimed.gamma * f.claimed.c + g.claimed.c,
        g.claimed.gamma * f.claimed.density_c + g.claimed.c + g.claimed.density_c,
    );
    Ok(QiMap::new(
        f.source.clone(),
        g.target.clone(),
        Arc::new(move |v| gf(&ff(v)?)),
        claimed,
        format!("{};{}", f.construction, g.construction),
    ))
}

// ---------------------------------------------------------------------
// Contraction map
// ---------------------------------------------------------------------

/// The canonical contraction of a sum graph onto the amalgam, with
/// constants from the observed identification size `s` and adhesion
/// diameter `D`: gamma = c = s(D+1).
pub fn psi_map(spec: &AmalgamSpec) -> Result<QiMap> {
    psi_map_with(spec, 4)
}

pub fn psi_map_with(spec: &AmalgamSpec, probe_r: u64) -> Result<QiMap> {
    let s = max_identification_size(spec, probe_r)? as i64;
    let d = spec.adhesion_diameter(64)? as i64;
    let k = (s * (d + 1)).max(1);
    let sp = spec.clone();
    Ok(QiMap::new(
        sum_graph(spec),
        contract(spec),
        Arc::new(move |v| psi(&sp, v)),
        QiConstants::ints(k, k, 0),
        "psi",
    ))
}

// ---------------------------------------------------------------------
// Collapse onto the amalgamation tree
// ---------------------------------------------------------------------

/// Collapse every factor copy of the sum graph to its tree node, with
/// constants from the maximum factor diameter: gamma = c = max_diam + 2.
pub fn tree_collapse_map(spec: &AmalgamSpec) -> Result<QiMap> {
    let mut delta = 0i64;
    for side in [1, 2] {
        delta = delta.max(spec.factor(side).diameter()? as i64);
    }
    let target = amalgam_tree(spec)?;
    Ok(QiMap::new(
        sum_graph(spec),
        target,
        Arc::new(move |v| {
            let (t, _) = sum_parts(v)?;
            Ok(VertexId::new(t.token()))
        }),
        QiConstants::ints(delta + 2, delta + 2, 0),
        "collapse",
    ))
}

// ---------------------------------------------------------------------
// Cubic tree map
// ---------------------------------------------------------------------

fn reg_token(addr: &[u32]) -> VertexId {
    if addr.is_empty() {
        VertexId::new("r")
    } else {
        let parts: Vec<String> = addr.iter().map(|i| i.to_string()).collect();
        VertexId::new(format!("r.{}", parts.join(".")))
    }
}

/// Derived view of a tree after pruning finite branches (up to a depth
/// bound) and suppressing the resulting degree-2 chains.
struct Shrub {
    t: GraphHandle,
    prune_depth: u64,
    survives: Mutex<HashMap<(VertexId, VertexId), bool>>,
}

const SURVIVE_VISIT_CAP: usize = 100_000;
const WALK_LIMIT: u64 = 100_000;

impl Shrub {
    fn new(t: GraphHandle, prune_depth: u64) -> Shrub {
        Shrub {
            t,
            prune_depth,
            survives: Mutex::new(HashMap::new()),
        }
    }

    /// Whether the branch entered from `anchor` through `dir` reaches
    /// depth `prune_depth` (branches exceeding the visit cap count as
    /// surviving).
    fn survives(&self, anchor: &VertexId, dir: &VertexId) -> Result<bool> {
        let key = (anchor.clone(), dir.clone());
        if let Some(&b) = self.survives.lock().unwrap().get(&key) {
            return Ok(b);
        }
        let mut seen: std::collections::HashSet<VertexId> = std::collections::HashSet::new();
        seen.insert(anchor.clone());
        seen.insert(dir.clone());
        let mut stack = vec![(dir.clone(), 1u64)];
        let mut result = false;
        while let Some((v, depth)) = stack.pop() {
            if depth >= self.prune_depth || seen.len() > SURVIVE_VISIT_CAP {
                result = true;
                break;
            }
            for w in self.t.neighbors(&v)? {
                if seen.insert(w.clone()) {
                    stack.push((w, depth + 1));
                }
            }
        }
        self.survives.lock().unwrap().insert(key, result);
        Ok(result)
    }

    /// Surviving directions at `v`, sorted by token.
    fn surviving_dirs(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let mut out = Vec::new();
        let mut nbrs = self.t.neighbors(v)?;
        nbrs.sort();
        for w in nbrs {
            if self.survives(v, &w)? {
                out.push(w);
            }
        }
        Ok(out)
    }

    fn kept(&self, v: &VertexId) -> Result<bool> {
        Ok(self.surviving_dirs(v)?.len() >= 3)
    }

    /// Follow the chain entered from `from` through `first` until the
    /// next kept vertex; returns it with the number of edges walked.
    fn chain_walk(&self, from: &VertexId, first: &VertexId) -> Result<(VertexId, u64)> {
        let mut prev = from.clone();
        let mut cur = first.clone();
        let mut steps = 1u64;
        loop {
            let dirs = self.surviving_dirs(&cur)?;
            if dirs.len() >= 3 {
                return Ok((cur, steps));
            }
            let next = dirs
                .into_iter()
                .filter(|d| *d != prev)
                .min()
                .ok_or_else(|| Error::TooFewEnds(self.t.name()))?;
            prev = cur;
            cur = next;
            steps += 1;
            if steps > WALK_LIMIT {
                return Err(Error::Unsupported(
                    "suppressed chain exceeds the walk limit".into(),
                ));
            }
        }
    }

    /// Suppressed neighbors of a kept vertex: the next kept vertex in
    /// each surviving direction, with chain length.
    fn suppressed_neighbors(&self, v: &VertexId) -> Result<Vec<(VertexId, u64)>> {
        let mut out = Vec::new();
        for d in self.surviving_dirs(v)? {
            out.push(self.chain_walk(v, &d)?);
        }
        Ok(out)
    }

    /// Nearest kept vertex (ties by token order).
    fn sigma(&self, v: &VertexId) -> Result<VertexId> {
        let mut prev: Option<VertexId> = None;
        let mut cur = v.clone();
        for _ in 0..WALK_LIMIT {
            let dirs = self.surviving_dirs(&cur)?;
            match dirs.len() {
                0 => return Err(Error::TooFewEnds(self.t.name())),
                1 => {
                    let next = dirs.into_iter().next().unwrap();
                    if Some(&next) == prev.as_ref() {
                        return Err(Error::TooFewEnds(self.t.name()));
                    }
                    prev = Some(cur);
                    cur = next;
                }
                2 => {
                    let (e1, d1) = self.chain_walk(&cur, &dirs[0])?;
                    let (e2, d2) = self.chain_walk(&cur, &dirs[1])?;
                    return Ok(match d1.cmp(&d2) {
                        std::cmp::Ordering::Less => e1,
                        std::cmp::Ordering::Greater => e2,
                        std::cmp::Ordering::Equal => e1.min(e2),
                    });
                }
                _ => return Ok(cur),
            }
        }
        Err(Error::Unsupported("suppression walk exceeded the limit".into()))
    }
}

#[derive(Clone, Debug)]
struct PathAssign {
    start: Vec<u32>,
    m: usize,
}

impl PathAssign {
    /// Ordered free attachment slots of the path, one per child (plus,
    /// at the root, one per extra root edge).
    fn slots(&self, at_root: bool) -> Vec<Vec<u32>> {
        let w = |j: usize| -> Vec<u32> {
            let mut a = self.start.clone();
            a.extend(std::iter::repeat(0).take(j));
            a
        };
        let child = |j: usize, c: u32| -> Vec<u32> {
            let mut a = w(j);
            a.push(c);
            a
        };
        let mut out = Vec::new();
        if self.m == 1 {
            if at_root {
                out.push(child(0, 0));
                out.push(child(0, 1));
                out.push(child(0, 2));
            } else {
                out.push(child(0, 0));
                out.push(child(0, 1));
            }
        } else {
            out.push(child(0, 1));
            if at_root {
                out.push(child(0, 2));
            }
            for j in 1..self.m - 1 {
                out.push(child(j, 1));
            }
            out.push(child(self.m - 1, 0));
            out.push(child(self.m - 1, 1));
        }
        out
    }

}

struct CubicState {
    root_ball: Option<BallView>,
    assign: HashMap<VertexId, PathAssign>,
}

struct CubicCtx {
    shrub: Shrub,
    kept_root: VertexId,
    budget: Budget,
    state: Mutex<CubicState>,
}

impl CubicCtx {
    fn ensure_ball(&self, st: &mut CubicState, v: &VertexId) -> Result<()> {
        if let Some(bv) = &st.root_ball {
            if bv.contains(v) {
                return Ok(());
            }
        }
        // Grow linearly: on expanding trees every extra radius step
        // multiplies the ball, so doubling overshoots the vertex budget
        // by orders of magnitude.
        let mut r = st.root_ball.as_ref().map(|b| b.radius + 4).unwrap_or(4).max(4);
        loop {
            let bv = ball(&self.shrub.t, &self.kept_root, r, &self.budget)?;
            let found = bv.contains(v);
            let exhausted = st
                .root_ball
                .as_ref()
                .map(|old| old.len() == bv.len())
                .unwrap_or(false);
            st.root_ball = Some(bv);
            if found {
                return Ok(());
            }
            if exhausted {
                return Err(Error::UnknownVertex(v.to_string(), self.shrub.t.name()));
            }
            r += 4;
        }
    }

    /// Path of kept vertices from the suppressed root to `kv`.
    fn kept_path(&self, st: &mut CubicState, kv: &VertexId) -> Result<Vec<VertexId>> {
        let t = &self.shrub.t;
        let mut chain = Vec::new();
        if let Some(mut d) = t.metric(&self.kept_root, kv) {
            // closed-form metric: step to the unique neighbor closer to
            // the root, no ball enumeration needed
            let mut cur = kv.clone();
            chain.push(cur.clone());
            while d > 0 {
                cur = t
                    .neighbors(&cur)?
                    .into_iter()
                    .find(|w| t.metric(&self.kept_root, w) == Some(d - 1))
                    .ok_or_else(|| {
                        Error::NotATree(t.name(), "no neighbor closer to the root".into())
                    })?;
                d -= 1;
                chain.push(cur.clone());
            }
        } else {
            self.ensure_ball(st, kv)?;
            let bv = st.root_ball.as_ref().unwrap();
            let mut i = *bv.index.get(kv).unwrap() as usize;
            chain.push(bv.vertices[i].clone());
            while bv.dist[i] > 0 {
                let p = bv.adj[i]
                    .iter()
                    .copied()
                    .find(|&j| bv.dist[j as usize] + 1 == bv.dist[i])
                    .expect("ball vertex without parent");
                i = p as usize;
                chain.push(bv.vertices[i].clone());
            }
        }
        chain.reverse();
        let mut kept = Vec::new();
        for v in chain {
            if self.shrub.kept(&v)? {
                kept.push(v);
            }
        }
        Ok(kept)
    }

    fn ensure_assigned(&self, st: &mut CubicState, kv: &VertexId) -> Result<PathAssign> {
        if let Some(pa) = st.assign.get(kv) {
            return Ok(pa.clone());
        }
        let path = self.kept_path(st, kv)?;
        if path.first() != Some(&self.kept_root) {
            return Err(Error::Unsupported(
                "suppressed root path does not start at the root".into(),
            ));
        }
        if !st.assign.contains_key(&self.kept_root) {
            let deg = self.shrub.suppressed_neighbors(&self.kept_root)?.len();
            st.assign.insert(
                self.kept_root.clone(),
                PathAssign {
                    start: Vec::new(),
                    m: deg - 2,
                },
            );
        }
        for w in path.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if st.assign.contains_key(b) {
                continue;
            }
            let pa = st.assign.get(a).expect("parent assigned").clone();
            let at_root = *a == self.kept_root;
            let parent_of_a = if at_root {
                None
            } else {
                // a's predecessor on the kept path
                let idx = path.iter().position(|x| x == a).unwrap();
                Some(path[idx - 1].clone())
            };
            let mut children: Vec<VertexId> = self
                .shrub
                .suppressed_neighbors(a)?
                .into_iter()
                .map(|(e, _)| e)
                .filter(|e| Some(e) != parent_of_a.as_ref())
                .collect();
            children.sort();
            let slots = pa.slots(at_root);
            if slots.len() != children.len() {
                return Err(Error::Unsupported(
                    "slot count does not match child count in the cubic embedding".into(),
                ));
            }
            let pos = children
                .iter()
                .position(|c| c == b)
                .ok_or_else(|| Error::NotATree(self.shrub.t.name(), "path step is not a child".into()))?;
            let deg_b = self.shrub.suppressed_neighbors(b)?.len();
            st.assign.insert(
                b.clone(),
                PathAssign {
                    start: slots[pos].clone(),
                    m: deg_b - 2,
                },
            );
        }
        Ok(st.assign.get(kv).unwrap().clone())
    }

    fn value(&self, v: &VertexId) -> Result<VertexId> {
        let kept = self.shrub.sigma(v)?;
        let mut st = self.state.lock().unwrap();
        let pa = self.ensure_assigned(&mut st, &kept)?;
        Ok(reg_token(&pa.start))
    }
}

/// Map a locally finite tree with at least three probed ends onto the
/// 3-regular tree by contracting, per vertex, a path whose free slot
/// count equals the vertex degree. Degree-2 chains and finite branches
/// (up to a depth bound) are suppressed first and their bookkeeping is
/// folded into the claimed constants.
pub fn cubic_tree_map(t: &GraphHandle) -> Result<QiMap> {
    cubic_tree_map_with(t, 10, 12, &Budget::default())
}

pub fn cubic_tree_map_with(
    t: &GraphHandle,
    probe_r: u64,
    prune_depth: u64,
    budget: &Budget,
) -> Result<QiMap> {
    let bv = ball(t, &t.origin(), probe_r, budget)?;
    let edges: usize = bv.adj.iter().map(|r| r.len()).sum::<usize>() / 2;
    if edges + 1 != bv.len() {
        return Err(Error::NotATree(
            t.name(),
            format!("cycle within the radius-{probe_r} ball"),
        ));
    }
    let est = end_count_estimate(t, 3, 9, budget)?;
    if !at_least_ends(&est, 3) {
        return Err(Error::TooFewEnds(format!(
            "{} has end class {} at radius 3",
            t.name(),
            est.class
        )));
    }
    let shrub = Shrub::new(t.clone(), prune_depth);

    // Probe: degrees and chain lengths of the suppressed tree within the
    // ball, and whether any suppression happens at all.
    let mut all_kept = true;
    let mut maxdeg = 3i64;
    let mut maxstep = 1i64;
    for v in &bv.vertices {
        if shrub.kept(v)? {
            for (_, steps) in shrub.suppressed_neighbors(v)? {
                maxstep = maxstep.max(steps as i64);
            }
            maxdeg = maxdeg.max(shrub.surviving_dirs(v)?.len() as i64);
        } else {
            all_kept = false;
        }
    }
    let core_claim = if maxdeg == 3 {
        // degree-3 everywhere: the embedding is vertex-for-vertex
        QiConstants::identity()
    } else {
        QiConstants::ints(maxdeg - 2, maxdeg, maxdeg - 3)
    };
    let claimed = if all_kept && maxstep == 1 {
        core_claim
    } else {
        let sigma_claim = QiConstants::ints(maxstep.max(1), maxstep + 2, 0);
        QiConstants::new(
            sigma_claim.gamma * core_claim.gamma,
            core_claim.gamma * sigma_claim.c + core_claim.c,
            core_claim.gamma * sigma_claim.density_c + core_claim.c + core_claim.density_c,
        )
    };

    // Deterministic root: first kept vertex in BFS order from the origin.
    let mut kept_root = None;
    let mut r = 2u64;
    let mut last_len = 0usize;
    while kept_root.is_none() {
        let probe = ball(t, &t.origin(), r, budget)?;
        for v in &probe.vertices {
            if shrub.kept(v)? {
                kept_root = Some(v.clone());
                break;
            }
        }
        if kept_root.is_none() {
            if probe.len() == last_len {
                return Err(Error::TooFewEnds(t.name()));
            }
            last_len = probe.len();
            r *= 2;
        }
    }
    let ctx = Arc::new(CubicCtx {
        shrub,
        kept_root: kept_root.unwrap(),
        budget: budget.clone(),
        state: Mutex::new(CubicState {
            root_ball: None,
            assign: HashMap::new(),
        }),
    });
    Ok(QiMap::new(
        t.clone(),
        regtree(3),
        Arc::new(move |v| ctx.value(v)),
        claimed,
        "cubic",
    ))
}

// ---------------------------------------------------------------------
// Absorbing a finite factor
// ---------------------------------------------------------------------

struct AbsorbTarget {
    spec: AmalgamSpec,
    inner: GraphHandle,
    origin: VertexId,
}

impl AbsorbTarget {
    fn in_target(&self, v: &VertexId) -> Result<bool> {
        if !self.inner.contains(v) {
            return Ok(false);
        }
        let (t, x) = sum_parts(v)?;
        let class = identification_class(&self.spec, &t, &x)?;
        Ok(class.iter().any(|(a, _)| a.side() == 2))
    }
}

impl Graph for AbsorbTarget {
    fn name(&self) -> String {
        format!("absorb({})", self.spec.name())
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        if !self.in_target(v)? {
            return Err(Error::UnknownVertex(v.to_string(), self.name()));
        }
        let (t, x) = sum_parts(v)?;
        let class = identification_class(&self.spec, &t, &x)?;
        let mut out = BTreeSet::new();
        for (a, member) in &class {
            if a.side() == 2 {
                // edges inside the infinite factor's copies
                for y in self.spec.factor(2).neighbors(member)? {
                    let c = psi(&self.spec, &sum_token(a, &y))?;
                    if c != *v && self.in_target(&c)? {
                        out.insert(c);
                    }
                }
            } else {
                // classes sharing a finite-factor copy are joined
                if let Some(indices) = self.spec.adhesion_indices(1) {
                    for k in indices {
                        for z in self.spec.adhesion_set(1, &k)? {
                            let c = psi(&self.spec, &sum_token(a, &z))?;
                            if c != *v {
                                out.insert(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    fn origin(&self) -> VertexId {
        self.origin.clone()
    }

    fn contains(&self, v: &VertexId) -> bool {
        self.in_target(v).unwrap_or(false)
    }
}

/// Absorb a finite factor 1 into the infinite factor 2: every vertex of
/// a finite copy maps to a deterministically chosen neighbor of that
/// copy, and the target is the amalgam structure on the infinite copies
/// alone, with copies sharing a finite copy joined directly.
pub fn absorb_finite_factor(spec: &AmalgamSpec) -> Result<QiMap> {
    if !spec.factor(1).is_finite() {
        return Err(Error::FactorNotFinite(spec.factor(1).name()));
    }
    if spec.factor(2).is_finite() {
        return Err(Error::Unsupported(
            "absorbing needs an infinite second factor".into(),
        ));
    }
    let diam = spec.factor(1).diameter()? as i64;
    let sp = spec.clone();
    let value = move |v: &VertexId| -> Result<VertexId> {
        let (t, x) = sum_parts(v)?;
        let class = identification_class(&sp, &t, &x)?;
        if class.iter().any(|(a, _)| a.side() == 2) {
            let rep = &class[0];
            return Ok(sum_token(&rep.0, &rep.1));
        }
        // A finite-copy vertex outside every adhesion set: map the whole
        // copy to its least bridging-target class.
        let indices = sp
            .adhesion_indices(1)
            .ok_or_else(|| Error::FactorNotFinite(sp.factor(1).name()))?;
        let mut best: Option<VertexId> = None;
        for k in indices {
            for z in sp.adhesion_set(1, &k)? {
                for (u, y) in sp.bridges(&t, &z)? {
                    let c = psi(&sp, &sum_token(&u, &y))?;
                    best = Some(match best.take() {
                        Some(b) if b <= c => b,
                        _ => c,
                    });
                }
            }
        }
        best.ok_or_else(|| Error::Presentation("finite copy has no bridging edge".into()))
    };
    let origin = value(&sum_graph(spec).origin())?;
    let target = GraphHandle::new(AbsorbTarget {
        spec: spec.clone(),
        inner: contract(spec),
        origin,
    });
    Ok(QiMap::new(
        sum_graph(spec),
        target,
        Arc::new(value),
        QiConstants::ints(diam + 2, diam + 2, 0),
        "absorb",
    ))
}

// ---------------------------------------------------------------------
// Factorisation-tree map
// ---------------------------------------------------------------------

/// Concrete factorisation of a graph into nested amalgamations with
/// finite leaves.
pub enum FactorisationInstance {
    Leaf(GraphHandle),
    Node {
        spec: AmalgamSpec,
        left: Box<FactorisationInstance>,
        right: Box<FactorisationInstance>,
    },
}

impl FactorisationInstance {
    pub fn leaf(g: GraphHandle) -> FactorisationInstance {
        FactorisationInstance::Leaf(g)
    }

    pub fn node(
        spec: AmalgamSpec,
        left: FactorisationInstance,
        right: FactorisationInstance,
    ) -> FactorisationInstance {
        FactorisationInstance::Node {
            spec,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

struct JoinedTree {
    spec: AmalgamSpec,
    inner: [GraphHandle; 2],
    /// Representative inner-tree vertex per adhesion index, per side.
    reps: [BTreeMap<String, VertexId>; 2],
}

fn join_token(t: &TreeAddress, w: &VertexId) -> VertexId {
    VertexId::new(format!("{}|{}", t.token(), w))
}

fn join_parts(v: &VertexId) -> Option<(TreeAddress, VertexId)> {
    let (a, w) = v.as_str().split_once('|')?;
    Some((TreeAddress::parse(a)?, VertexId::new(w)))
}

impl Graph for JoinedTree {
    fn name(&self) -> String {
        format!("treefact({})", self.spec.name())
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let (t, w) = join_parts(v)
            .ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))?;
        let i = t.side();
        let inner = &self.inner[i - 1];
        if !inner.contains(&w) {
            return Err(Error::UnknownVertex(v.to_string(), self.name()));
        }
        let mut out: Vec<VertexId> = inner
            .neighbors(&w)?
            .into_iter()
            .map(|x| join_token(&t, &x))
            .collect();
        for (u, (k, l)) in self.spec.tree_neighbors(&t)? {
            let (own, other) = if i == 1 { (&k, &l) } else { (&l, &k) };
            if self.reps[i - 1].get(own) == Some(&w) {
                let rep = self.reps[2 - i]
                    .get(other)
                    .ok_or_else(|| Error::Presentation(format!("no representative for index {other}")))?;
                out.push(join_token(&u, rep));
            }
        }
        Ok(out)
    }

    fn origin(&self) -> VertexId {
        join_token(&TreeAddress::root(), &self.inner[0].origin())
    }

    fn contains(&self, v: &VertexId) -> bool {
        match join_parts(v) {
            Some((t, w)) => {
                self.spec.tree_neighbors(&t).is_ok() && self.inner[t.side() - 1].contains(&w)
            }
            None => false,
        }
    }
}

struct BuiltFactorisation {
    graph: GraphHandle,
    tree: GraphHandle,
    func: VertexFn,
    claim: QiConstants,
    is_leaf: bool,
}

fn build_factorisation(fi: &FactorisationInstance, budget: &Budget) -> Result<BuiltFactorisation> {
    match fi {
        FactorisationInstance::Leaf(g) => {
            let delta = g.diameter()? as i64;
            let tree = ExplicitGraph::from_edges(
                format!("point({})", g.name()),
                &[],
                &[VertexId::new("o")],
                None,
            )?
            .handle();
            let gg = g.clone();
            Ok(BuiltFactorisation {
                graph: g.clone(),
                tree,
                func: Arc::new(move |v| {
                    if gg.contains(v) {
                        Ok(VertexId::new("o"))
                    } else {
                        Err(Error::UnknownVertex(v.to_string(), gg.name()))
                    }
                }),
                claim: QiConstants::ints(1, delta.max(0), 0),
                is_leaf: true,
            })
        }
        FactorisationInstance::Node { spec, left, right } => {
            let b1 = build_factorisation(left, budget)?;
            let b2 = build_factorisation(right, budget)?;
            let mut reps = [BTreeMap::new(), BTreeMap::new()];
            for (side, b) in [(1usize, &b1), (2usize, &b2)] {
                let indices = spec.adhesion_indices(side).ok_or_else(|| {
                    Error::Unsupported("factorisation needs finite adhesion families".into())
                })?;
                for k in indices {
                    let set = spec.adhesion_set(side, &k)?;
                    let least = set.iter().min().unwrap().clone();
                    reps[side - 1].insert(k, (b.func)(&least)?);
                }
            }
            let tree = GraphHandle::new(JoinedTree {
                spec: spec.clone(),
                inner: [b1.tree.clone(), b2.tree.clone()],
                reps,
            });
            let sp = spec.clone();
            let (f1, f2) = (b1.func.clone(), b2.func.clone());
            let func: VertexFn = Arc::new(move |v| {
                let (t, x) = sum_parts(v)?;
                let inner = if t.side() == 1 { f1(&x)? } else { f2(&x)? };
                Ok(join_token(&t, &inner))
            });
            let _ = sp;
            let claim = if b1.is_leaf && b2.is_leaf {
                // plain collapse onto the amalgamation tree
                let delta = b1.claim.c.max(b2.claim.c) + rat(2);
                QiConstants::new(delta, delta, rat(0))
            } else {
                let s = rat(max_identification_size(spec, 4)? as i64);
                let d1 = rat(spec.adhesion_diameter(64)? as i64);
                let cross = b1.claim.gamma * d1 + b1.claim.c + b2.claim.gamma * d1 + b2.claim.c
                    + rat(1);
                let g = b1.claim.gamma.max(b2.claim.gamma)
                    + b1.claim.c.max(b2.claim.c)
                    + s * cross;
                QiConstants::new(
                    g.max(rat(1)),
                    g,
                    b1.claim.density_c.max(b2.claim.density_c),
                )
            };
            Ok(BuiltFactorisation {
                graph: contract(spec),
                tree,
                func,
                claim,
                is_leaf: false,
            })
        }
    }
}

/// Map an iterated amalgamation of finite graphs onto a constructed
/// tree; if that tree has at least three probed ends, continue onto the
/// 3-regular tree.
pub fn tree_factorisation_map(fi: &FactorisationInstance) -> Result<QiMap> {
    tree_factorisation_map_with(fi, &Budget::default())
}

pub fn tree_factorisation_map_with(fi: &FactorisationInstance, budget: &Budget) -> Result<QiMap> {
    let b = build_factorisation(fi, budget)?;
    let base = QiMap::new(
        b.graph.clone(),
        b.tree.clone(),
        b.func.clone(),
        b.claim,
        "treefact",
    );
    let est = end_count_estimate(&b.tree, 3, 9, budget)?;
    if at_least_ends(&est, 3) {
        let cubic = cubic_tree_map_with(&b.tree, 8, 12, budget)?;
        compose(&base, &cubic)
    } else {
        Ok(base)
    }
}

// ---------------------------------------------------------------------
// Adhesion normalization
// ---------------------------------------------------------------------

/// Result of normalizing a presentation to singleton, distinct,
/// covering adhesion sets.
pub struct Normalized {
    pub spec: AmalgamSpec,
    pub forward: QiMap,
    pub factor_maps: [QiMap; 2],
    pub stage_specs: [AmalgamSpec; 3],
}

fn split_token(x: &VertexId, j: usize) -> VertexId {
    VertexId::new(format!("{x}@{j}"))
}

/// Number of adhesion sets of `spec` on `side` containing each vertex.
fn multiplicities(spec: &AmalgamSpec, side: usize) -> Result<BTreeMap<VertexId, usize>> {
    let mut out = BTreeMap::new();
    let indices = spec
        .adhesion_indices(side)
        .ok_or_else(|| Error::Unsupported("normalization needs finite adhesion families".into()))?;
    for k in indices {
        for v in spec.adhesion_set(side, &k)? {
            *out.entry(v).or_insert(0) += 1;
        }
    }
    Ok(out)
}

/// Stage 2 factor: split each adhesion vertex into one copy per adhesion
/// set containing it, joined by a clique; edges to copies follow the
/// original edges.
fn split_factor(
    spec: &AmalgamSpec,
    side: usize,
) -> Result<(GraphHandle, Vec<Vec<VertexId>>, BTreeMap<VertexId, usize>)> {
    let factor = spec.factor(side);
    let verts = factor
        .vertices()
        .ok_or_else(|| Error::FactorNotFinite(factor.name()))?;
    let mult = multiplicities(spec, side)?;
    let n = |x: &VertexId| mult.get(x).copied().unwrap_or(0);
    let copies = |x: &VertexId| -> Vec<VertexId> {
        let nx = n(x);
        if nx == 0 {
            vec![x.clone()]
        } else {
            (1..=nx).map(|j| split_token(x, j)).collect()
        }
    };
    let mut edges = Vec::new();
    let mut extra = Vec::new();
    for x in &verts {
        let cs = copies(x);
        for (i, a) in cs.iter().enumerate() {
            for b in cs.iter().skip(i + 1) {
                edges.push((a.clone(), b.clone()));
            }
        }
        extra.extend(cs);
        for y in factor.neighbors(x)? {
            if *x < y {
                for a in copies(x) {
                    for b in copies(&y) {
                        edges.push((a.clone(), b.clone()));
                    }
                }
            }
        }
    }
    let g = ExplicitGraph::from_edges(
        format!("split({},{})", spec.name(), side),
        &edges,
        &extra,
        None,
    )?
    .handle();
    // New singleton adhesion sets: the j-th copy of x belongs to the
    // j-th (in index order) adhesion set containing x.
    let indices = spec.adhesion_indices(side).unwrap();
    let mut rank: BTreeMap<VertexId, usize> = BTreeMap::new();
    let mut sets = Vec::new();
    for k in indices {
        let set = spec.adhesion_set(side, &k)?;
        debug_assert_eq!(set.len(), 1, "stage 2 runs on singleton presentations");
        let x = set[0].clone();
        let r = rank.entry(x.clone()).or_insert(0);
        *r += 1;
        sets.push(vec![split_token(&x, *r)]);
    }
    Ok((g, sets, mult))
}

/// Lift of a stage-1 factor vertex into the split factor.
fn lift_token(mult: &BTreeMap<VertexId, usize>, x: &VertexId) -> VertexId {
    if mult.get(x).copied().unwrap_or(0) >= 1 {
        split_token(x, 1)
    } else {
        x.clone()
    }
}

/// Stage 3 data: eccentricity of the adhesion vertex set and the nearest
/// adhesion vertex per factor vertex (least token among nearest).
fn adhesion_reach(
    factor: &GraphHandle,
    adhesion: &[VertexId],
    side: usize,
) -> Result<(u64, BTreeMap<VertexId, VertexId>)> {
    let verts = factor
        .vertices()
        .ok_or_else(|| Error::FactorNotFinite(factor.name()))?;
    let mut dist: BTreeMap<VertexId, (u64, VertexId)> = BTreeMap::new();
    let mut queue = VecDeque::new();
    let mut seeds: Vec<VertexId> = adhesion.to_vec();
    seeds.sort();
    for a in seeds {
        dist.entry(a.clone()).or_insert((0, a.clone()));
        queue.push_back(a);
    }
    while let Some(v) = queue.pop_front() {
        let (d, root) = dist[&v].clone();
        for w in factor.neighbors(&v)? {
            match dist.get(&w) {
                None => {
                    dist.insert(w.clone(), (d + 1, root.clone()));
                    queue.push_back(w);
                }
                Some((dw, rw)) if *dw == d + 1 && root < *rw => {
                    dist.insert(w.clone(), (d + 1, root.clone()));
                }
                _ => {}
            }
        }
    }
    let mut c = 0;
    let mut nearest = BTreeMap::new();
    for v in verts {
        match dist.get(&v) {
            Some((d, root)) => {
                c = c.max(*d);
                nearest.insert(v, root.clone());
            }
            None => return Err(Error::AdhesionUnreachable(side, v.to_string())),
        }
    }
    Ok((c, nearest))
}

// BFS propagation above keeps the least seed only at equal depth along one
// edge; run to fixpoint instead for a canonical nearest map.
fn nearest_fixpoint(
    factor: &GraphHandle,
    adhesion: &[VertexId],
) -> Result<BTreeMap<VertexId, (u64, VertexId)>> {
    let verts = factor.vertices().unwrap();
    let mut best: BTreeMap<VertexId, (u64, VertexId)> = BTreeMap::new();
    for a in adhesion {
        best.insert(a.clone(), (0, a.clone()));
    }
    loop {
        let mut changed = false;
        for v in &verts {
            let mut cand: Option<(u64, VertexId)> = best.get(v).cloned();
            for w in factor.neighbors(v)? {
                if let Some((dw, rw)) = best.get(&w) {
                    let c = (dw + 1, rw.clone());
                    if cand.as_ref().map_or(true, |b| c < *b) {
                        cand = Some(c);
                    }
                }
            }
            if let Some(c) = cand {
                if best.get(v) != Some(&c) {
                    best.insert(v.clone(), c);
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(best);
        }
    }
}

/// Stage 3 factor: adhesion vertices only, joined when their factor
/// distance is at most 2c+1.
fn dense_factor(
    spec: &AmalgamSpec,
    side: usize,
    c: u64,
) -> Result<GraphHandle> {
    let factor = spec.factor(side);
    let indices = spec.adhesion_indices(side).unwrap();
    let mut adhesion: BTreeSet<VertexId> = BTreeSet::new();
    for k in &indices {
        adhesion.extend(spec.adhesion_set(side, k)?);
    }
    let adhesion: Vec<VertexId> = adhesion.into_iter().collect();
    let mut edges = Vec::new();
    for (i, a) in adhesion.iter().enumerate() {
        let d = crate::graphcore::bfs_distances(factor, a, 2 * c + 1, None, spec.budget())?;
        for b in adhesion.iter().skip(i + 1) {
            if let Some(dist) = d.get(b) {
                if *dist <= 2 * c + 1 {
                    edges.push((a.clone(), b.clone()));
                }
            }
        }
    }
    Ok(ExplicitGraph::from_edges(
        format!("dense({},{})", spec.name(), side),
        &edges,
        &adhesion,
        None,
    )?
    .handle())
}

/// Rewrite a presentation so that all adhesion sets are singletons,
/// pairwise distinct, and cover their factors, with quasi-isometries
/// relating the amalgams and the factors before and after.
pub fn adhesion_normalize(spec: &AmalgamSpec) -> Result<Normalized> {
    for side in [1, 2] {
        if !spec.factor(side).is_finite() {
            return Err(Error::FactorNotFinite(spec.factor(side).name()));
        }
        if spec.adhesion_indices(side).is_none() {
            return Err(Error::Unsupported(
                "normalization needs finite adhesion families".into(),
            ));
        }
    }

    // Stage 1: keep one representative vertex per adhesion set.
    let s_obs = max_identification_size(spec, 4)? as i64;
    let d_obs = spec.adhesion_diameter(64)? as i64;
    let mut sets1 = Vec::new();
    let mut sets2 = Vec::new();
    for (side, out) in [(1usize, &mut sets1), (2usize, &mut sets2)] {
        for k in spec.adhesion_indices(side).unwrap() {
            let set = spec.adhesion_set(side, &k)?;
            out.push(vec![set.iter().min().unwrap().clone()]);
        }
    }
    let spec1 = AmalgamSpec::new(
        format!("{}~1", spec.name()),
        spec.factor(1).clone(),
        sets1,
        spec.factor(2).clone(),
        sets2,
    )?;
    let k1 = 1 + s_obs * (d_obs + 1);
    let sp1 = spec1.clone();
    let m1 = QiMap::new(
        contract(spec),
        contract(&spec1),
        Arc::new(move |v| psi(&sp1, v)),
        QiConstants::ints(k1.max(1), k1, (s_obs * (d_obs + 1)).max(0)),
        "normalize-1",
    );

    // Stage 2: split repeated representatives into clique-joined copies.
    let (g1s, sets1s, mult1) = split_factor(&spec1, 1)?;
    let (g2s, sets2s, mult2) = split_factor(&spec1, 2)?;
    let spec2 = AmalgamSpec::new(
        format!("{}~2", spec.name()),
        g1s,
        sets1s,
        g2s,
        sets2s,
    )?;
    let s1_obs = max_identification_size(&spec1, 4)? as i64;
    let sp2 = spec2.clone();
    let (mm1, mm2) = (mult1.clone(), mult2.clone());
    let m2 = QiMap::new(
        contract(&spec1),
        contract(&spec2),
        Arc::new(move |v| {
            let (t, x) = sum_parts(v)?;
            let lifted = if t.side() == 1 {
                lift_token(&mm1, &x)
            } else {
                lift_token(&mm2, &x)
            };
            psi(&sp2, &sum_token(&t, &lifted))
        }),
        QiConstants::ints(1, 2 * s1_obs, 1),
        "normalize-2",
    );

    // Stage 3: keep only adhesion vertices, joined at distance <= 2c+1.
    let mut cmax = 0u64;
    let mut nearest_maps = Vec::new();
    let mut dense = Vec::new();
    for side in [1usize, 2] {
        let factor = spec2.factor(side);
        let indices = spec2.adhesion_indices(side).unwrap();
        let mut adhesion: BTreeSet<VertexId> = BTreeSet::new();
        for k in &indices {
            adhesion.extend(spec2.adhesion_set(side, k)?);
        }
        let adhesion: Vec<VertexId> = adhesion.into_iter().collect();
        let (c, _) = adhesion_reach(factor, &adhesion, side)?;
        let nearest = nearest_fixpoint(factor, &adhesion)?;
        cmax = cmax.max(c);
        dense.push(dense_factor(&spec2, side, c)?);
        nearest_maps.push(nearest);
    }
    let sets3_1: Vec<Vec<VertexId>> = spec2
        .adhesion_indices(1)
        .unwrap()
        .iter()
        .map(|k| spec2.adhesion_set(1, k))
        .collect::<Result<_>>()?;
    let sets3_2: Vec<Vec<VertexId>> = spec2
        .adhesion_indices(2)
        .unwrap()
        .iter()
        .map(|k| spec2.adhesion_set(2, k))
        .collect::<Result<_>>()?;
    let spec3 = AmalgamSpec::new(
        format!("{}~3", spec.name()),
        dense[0].clone(),
        sets3_1,
        dense[1].clone(),
        sets3_2,
    )?;
    let sp3 = spec3.clone();
    let (n1, n2) = (nearest_maps[0].clone(), nearest_maps[1].clone());
    let k3 = 2 * cmax as i64 + 1;
    let m3 = QiMap::new(
        contract(&spec2),
        contract(&spec3),
        Arc::new(move |v| {
            let (t, x) = sum_parts(v)?;
            let nearest = if t.side() == 1 { &n1 } else { &n2 };
            let (_, target) = nearest
                .get(&x)
                .ok_or_else(|| Error::UnknownVertex(x.to_string(), "split factor".into()))?;
            psi(&sp3, &sum_token(&t, target))
        }),
        QiConstants::ints(k3, k3 + 1, 0),
        "normalize-3",
    );

    let forward = compose(&compose(&m1, &m2)?, &m3)?;

    // Per-factor correspondences: original factor vertex -> its split
    // lift -> nearest adhesion copy.
    let mut factor_maps = Vec::new();
    for side in [1usize, 2] {
        let mult = if side == 1 { mult1.clone() } else { mult2.clone() };
        let nearest = nearest_maps[side - 1].clone();
        let src = spec.factor(side).clone();
        let tgt = dense[side - 1].clone();
        let cm = 2 * cmax as i64 + 1;
        factor_maps.push(QiMap::new(
            src,
            tgt,
            Arc::new(move |x| {
                let lifted = lift_token(&mult, x);
                let (_, target) = nearest
                    .get(&lifted)
                    .ok_or_else(|| Error::UnknownVertex(x.to_string(), "split factor".into()))?;
                Ok(target.clone())
            }),
            QiConstants::ints(cm, cm + 1, 1),
            format!("normalize-factor-{side}"),
        ));
    }
    let fm2 = factor_maps.pop().unwrap();
    let fm1 = factor_maps.pop().unwrap();

    Ok(Normalized {
        spec: spec3,
        forward,
        factor_maps: [fm1, fm2],
        stage_specs: [spec1, spec2.clone(), spec2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::{complete, cycle, doubleray, exact_distance, path, semitree};

    fn s1() -> AmalgamSpec {
        AmalgamSpec::new(
            "S1",
            complete(2),
            vec![vec![VertexId::from(0)], vec![VertexId::from(1)]],
            complete(2),
            vec![vec![VertexId::from(0)], vec![VertexId::from(1)]],
        )
        .unwrap()
    }

    fn s2() -> AmalgamSpec {
        AmalgamSpec::new(
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
        .unwrap()
    }

    #[test]
    fn compose_constant_arithmetic() {
        let g = doubleray();
        let f1 = QiMap::new(
            g.clone(),
            g.clone(),
            Arc::new(|v| Ok(v.clone())),
            QiConstants::ints(2, 1, 0),
            "a",
        );
        let f2 = QiMap::new(
            g.clone(),
            g.clone(),
            Arc::new(|v| Ok(v.clone())),
            QiConstants::ints(3, 2, 0),
            "b",
        );
        let c = compose(&f1, &f2).unwrap();
        assert_eq!(c.claimed.gamma, rat(6));
        assert_eq!(c.claimed.c, rat(5));
    }

    #[test]
    fn compose_identity_preserves_constants() {
        let g = doubleray();
        let f = QiMap::new(
            g.clone(),
            g.clone(),
            Arc::new(|v| Ok(v.clone())),
            QiConstants::ints(2, 3, 1),
            "f",
        );
        let c = compose(&identity(&g), &f).unwrap();
        assert_eq!(c.claimed.gamma, f.claimed.gamma);
        assert_eq!(c.claimed.c, f.claimed.c);
        let c = compose(&f, &identity(&g)).unwrap();
        assert_eq!(c.claimed.gamma, f.claimed.gamma);
        assert_eq!(c.claimed.c, f.claimed.c);
        // the density bound may only grow under composition
        assert!(c.claimed.density_c >= f.claimed.density_c);
    }

    #[test]
    fn compose_endpoint_mismatch() {
        let f = identity(&doubleray());
        let g = identity(&cycle(3));
        assert!(matches!(compose(&f, &g), Err(Error::EndpointMismatch(..))));
    }

    #[test]
    fn psi_map_s1_constants() {
        let m = psi_map(&s1()).unwrap();
        assert_eq!(m.claimed, QiConstants::ints(2, 2, 0));
    }

    #[test]
    fn psi_map_is_contraction_on_ball() {
        let spec = s2();
        let m = psi_map(&spec).unwrap();
        let bv = ball(&m.source, &m.source.origin(), 4, &Budget::default()).unwrap();
        for (i, u) in bv.vertices.iter().enumerate() {
            let d = bv.distances_within(i as u32);
            for (j, v) in bv.vertices.iter().enumerate() {
                if j <= i || d[j] == u32::MAX {
                    continue;
                }
                let du = exact_distance(&m.target, &m.apply(u).unwrap(), &m.apply(v).unwrap(), 8)
                    .unwrap();
                assert!(du <= d[j] as u64);
            }
        }
    }

    #[test]
    fn collapse_fibers_are_copies() {
        let spec = s2();
        let m = tree_collapse_map(&spec).unwrap();
        assert_eq!(m.claimed, QiConstants::ints(3, 3, 0));
        let bv = ball(&m.source, &m.source.origin(), 6, &Budget::default()).unwrap();
        for v in &bv.vertices {
            let (t, _) = sum_parts(v).unwrap();
            assert_eq!(m.apply(v).unwrap().as_str(), t.token());
        }
    }

    #[test]
    fn cubic_on_regtree_is_isometric_on_balls() {
        let t = regtree(3);
        let m = cubic_tree_map(&t).unwrap();
        assert_eq!(m.claimed, QiConstants::identity());
        let bv = ball(&t, &t.origin(), 5, &Budget::default()).unwrap();
        let mut images = BTreeSet::new();
        for v in &bv.vertices {
            images.insert(m.apply(v).unwrap());
        }
        assert_eq!(images.len(), bv.len(), "not injective");
        for u in bv.vertices.iter().step_by(3) {
            for v in bv.vertices.iter().step_by(5) {
                let ds = exact_distance(&t, u, v, 5).unwrap();
                let dt =
                    exact_distance(&m.target, &m.apply(u).unwrap(), &m.apply(v).unwrap(), 10)
                        .unwrap();
                assert_eq!(ds, dt);
            }
        }
    }

    #[test]
    fn cubic_path_system_disjoint_and_adjacent() {
        let t = semitree(4, 4);
        let m = cubic_tree_map(&t).unwrap();
        assert_eq!(m.claimed, QiConstants::ints(2, 4, 1));
        // Recover assignments through the map values plus the claim that
        // paths have d-3 edges: probe a ball, collect start vertices.
        let bv = ball(&t, &t.origin(), 4, &Budget::default()).unwrap();
        let mut starts: BTreeMap<VertexId, VertexId> = BTreeMap::new();
        for v in &bv.vertices {
            starts.insert(v.clone(), m.apply(v).unwrap());
        }
        // Distinct vertices get distinct path starts.
        let distinct: BTreeSet<&VertexId> = starts.values().collect();
        assert_eq!(distinct.len(), bv.len());
        // Path vertex sets (start plus d-3 descents) are disjoint and
        // adjacency carries over to an edge between the path sets.
        let reg = regtree(3);
        let path_of = |s: &VertexId| -> Vec<VertexId> {
            // degree 4 everywhere: one extra descent
            let mut out = vec![s.clone()];
            let child = VertexId::new(if s.as_str() == "r" {
                "r.0".to_string()
            } else {
                format!("{s}.0")
            });
            out.push(child);
            out
        };
        let mut all: BTreeSet<VertexId> = BTreeSet::new();
        for s in starts.values() {
            for p in path_of(s) {
                assert!(all.insert(p), "paths overlap");
            }
        }
        for (i, u) in bv.vertices.iter().enumerate() {
            for &j in &bv.adj[i] {
                let v = &bv.vertices[j as usize];
                let pu = path_of(&starts[u]);
                let pv = path_of(&starts[v]);
                let adjacent = pu.iter().any(|a| {
                    pv.iter()
                        .any(|b| reg.neighbors(a).unwrap().contains(b))
                });
                assert!(adjacent, "no edge between paths of {u} and {v}");
            }
        }
    }

    #[test]
    fn cubic_rejects_few_ends_and_cycles() {
        assert!(matches!(
            cubic_tree_map(&doubleray()),
            Err(Error::TooFewEnds(_))
        ));
        assert!(matches!(
            cubic_tree_map(&cycle(5)),
            Err(Error::NotATree(..))
        ));
    }

    fn absorb_spec() -> AmalgamSpec {
        AmalgamSpec::new(
            "K2xZ",
            complete(2),
            vec![vec![VertexId::from(0)], vec![VertexId::from(1)]],
            doubleray(),
            vec![vec![VertexId::from(0)], vec![VertexId::from(1)]],
        )
        .unwrap()
    }

    #[test]
    fn absorb_fixes_infinite_copies_and_bounds_displacement() {
        let spec = absorb_spec();
        let m = absorb_finite_factor(&spec).unwrap();
        assert_eq!(m.claimed, QiConstants::ints(3, 3, 0));
        let bv = ball(&m.source, &m.source.origin(), 6, &Budget::default()).unwrap();
        let c = contract(&spec);
        for v in &bv.vertices {
            let img = m.apply(v).unwrap();
            assert!(m.target.contains(&img));
            // displacement inside the contracted amalgam
            let pv = psi(&spec, v).unwrap();
            let d = exact_distance(&c, &pv, &img, 8).unwrap();
            assert!(d <= 2, "displacement {d} at {v}");
        }
    }

    #[test]
    fn absorb_requires_finite_then_infinite() {
        assert!(absorb_finite_factor(&s2()).is_err());
        let flipped = AmalgamSpec::new(
            "ZxK2",
            doubleray(),
            vec![vec![VertexId::from(0)]],
            complete(2),
            vec![vec![VertexId::from(0)]],
        )
        .unwrap();
        assert!(matches!(
            absorb_finite_factor(&flipped),
            Err(Error::FactorNotFinite(_))
        ));
    }

    #[test]
    fn treefact_single_leaf_maps_to_point() {
        let fi = FactorisationInstance::leaf(complete(3));
        let m = tree_factorisation_map(&fi).unwrap();
        assert_eq!(m.apply(&VertexId::from(1)).unwrap().as_str(), "o");
        assert_eq!(m.target.order(), Some(1));
    }

    #[test]
    fn treefact_two_ended_skips_cubic() {
        let fi = FactorisationInstance::node(
            s1(),
            FactorisationInstance::leaf(complete(2)),
            FactorisationInstance::leaf(complete(2)),
        );
        let m = tree_factorisation_map(&fi).unwrap();
        assert_eq!(m.construction, "treefact");
        let est = end_count_estimate(&m.target, 3, 9, &Budget::default()).unwrap();
        assert_eq!(est.class, crate::ends::EndClass::Two);
    }

    #[test]
    fn treefact_s2_lands_in_cubic_tree() {
        let fi = FactorisationInstance::node(
            s2(),
            FactorisationInstance::leaf(cycle(3)),
            FactorisationInstance::leaf(complete(2)),
        );
        let m = tree_factorisation_map(&fi).unwrap();
        assert!(m.construction.ends_with("cubic"));
        assert_eq!(m.target.name(), "regtree(3)");
        // values land in the target
        let bv = ball(&m.source, &m.source.origin(), 4, &Budget::default()).unwrap();
        for v in &bv.vertices {
            assert!(m.target.contains(&m.apply(v).unwrap()));
        }
    }

    #[test]
    fn normalize_s2_is_idempotent_shape() {
        let spec = s2();
        assert!(spec.has_adhesion_one());
        assert!(spec.has_distinct_adhesion());
        assert!(spec.adhesion_covers().unwrap());
        let n = adhesion_normalize(&spec).unwrap();
        assert!(n.spec.has_adhesion_one());
        assert!(n.spec.has_distinct_adhesion());
        assert!(n.spec.adhesion_covers().unwrap());
        assert_eq!(n.spec.factor(1).order(), Some(3));
        assert_eq!(n.spec.factor(2).order(), Some(2));
        // contracted balls match in size and degrees
        let b = Budget::default();
        let g0 = contract(&spec);
        let g1 = contract(&n.spec);
        let b0 = ball(&g0, &g0.origin(), 4, &b).unwrap();
        let b1 = ball(&g1, &g1.origin(), 4, &b).unwrap();
        assert_eq!(b0.len(), b1.len());
    }

    #[test]
    fn normalize_size_two_adhesion_becomes_singletons() {
        let spec = AmalgamSpec::new(
            "P3",
            path(3),
            vec![vec![VertexId::from(0), VertexId::from(2)]],
            cycle(4),
            vec![
                vec![VertexId::from(0), VertexId::from(2)],
                vec![VertexId::from(1), VertexId::from(3)],
            ],
        )
        .unwrap();
        assert!(!spec.has_adhesion_one());
        let n = adhesion_normalize(&spec).unwrap();
        assert!(n.spec.has_adhesion_one());
        assert!(n.spec.has_distinct_adhesion());
        assert!(n.spec.adhesion_covers().unwrap());
    }

    #[test]
    fn normalize_splits_repeated_vertex() {
        let spec = AmalgamSpec::new(
            "rep",
            cycle(3),
            vec![
                vec![VertexId::from(0)],
                vec![VertexId::from(0)],
                vec![VertexId::from(2)],
            ],
            complete(2),
            vec![vec![VertexId::from(0)], vec![VertexId::from(1)]],
        )
        .unwrap();
        assert!(!spec.has_distinct_adhesion());
        let n = adhesion_normalize(&spec).unwrap();
        assert!(n.spec.has_distinct_adhesion());
        // vertex 0 of the first factor was split into two adjacent copies
        let split = n.stage_specs[1].factor(1).clone();
        let a = VertexId::new("0@1");
        let b = VertexId::new("0@2");
        assert!(split.contains(&a) && split.contains(&b));
        assert!(split.neighbors(&a).unwrap().contains(&b));
    }

    #[test]
    fn export_format() {
        let m = identity(&cycle(3));
        let out = m.export_on_ball(2, &Budget::default()).unwrap();
        assert_eq!(
            out,
            "# identity: gamma=1 c=0 density_c=0\n0 -> 0\n1 -> 1\n2 -> 2\n"
        );
    }
}
