//! Presentation-level tree amalgamations: the labeled semiregular tree,
//! the sum graph `G1 + G2`, the contracted amalgam `G1 * G2`, and the
//! structural rewrites (finite extension, base-point amalgam, wedge).
//!
//! Canonical labeling: child edges at a node get that node's side
//! coordinates in increasing index order, and at every non-root node the
//! parent edge's own-side coordinate is the reserved first index. The
//! exhaustion condition (each side-`i` coordinate set enumerated exactly
//! once per node) is then forced.

use crate::graphcore::{ExplicitGraph, Graph, GraphHandle, VertexId};
use crate::{Budget, Error, Result};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::{Arc, Mutex};

/// Adhesion-set index token. Explicit families use `"1"..="p"`; pointed
/// (singleton-partition) families use the vertex token itself.
pub type AdhesionIndex = String;

/// Path from the root of the amalgamation tree, one edge-coordinate
/// entry per step. The empty address is the root and lies on side 1;
/// parity of the depth gives the canonical bipartition side.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct TreeAddress(pub Vec<AdhesionIndex>);

impl TreeAddress {
    pub fn root() -> Self {
        TreeAddress(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Bipartition side, 1 or 2.
    pub fn side(&self) -> usize {
        if self.0.len() % 2 == 0 {
            1
        } else {
            2
        }
    }

    pub fn parent(&self) -> Option<TreeAddress> {
        if self.0.is_empty() {
            None
        } else {
            Some(TreeAddress(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn child(&self, entry: impl Into<AdhesionIndex>) -> TreeAddress {
        let mut v = self.0.clone();
        v.push(entry.into());
        TreeAddress(v)
    }

    pub fn token(&self) -> String {
        if self.0.is_empty() {
            "t".into()
        } else {
            let parts: Vec<String> = self.0.iter().map(|e| escape_entry(e)).collect();
            format!("t.{}", parts.join("."))
        }
    }

    pub fn parse(s: &str) -> Option<TreeAddress> {
        let rest = s.strip_prefix('t')?;
        if rest.is_empty() {
            return Some(TreeAddress::root());
        }
        let rest = rest.strip_prefix('.')?;
        let entries: Option<Vec<AdhesionIndex>> = rest.split('.').map(unescape_entry).collect();
        Some(TreeAddress(entries?))
    }

    /// Tree distance between two addresses.
    pub fn distance(&self, other: &TreeAddress) -> u64 {
        let common = self
            .0
            .iter()
            .zip(other.0.iter())
            .take_while(|(a, b)| a == b)
            .count();
        (self.0.len() - common + other.0.len() - common) as u64
    }
}

// Root-most addresses first; ties resolved entry-wise.
impl Ord for TreeAddress {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for TreeAddress {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn escape_entry(e: &str) -> String {
    let mut out = String::with_capacity(e.len());
    for c in e.chars() {
        match c {
            '%' => out.push_str("%25"),
            '.' => out.push_str("%2E"),
            '/' => out.push_str("%2F"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape_entry(e: &str) -> Option<AdhesionIndex> {
    let mut out = String::with_capacity(e.len());
    let mut chars = e.chars();
    while let Some(c) = chars.next() {
        if c == '%' {
            let a = chars.next()?;
            let b = chars.next()?;
            match (a, b) {
                ('2', '5') => out.push('%'),
                ('2', 'E') => out.push('.'),
                ('2', 'F') => out.push('/'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

/// One factor's family of adhesion sets.
#[derive(Clone, Debug)]
pub enum AdhesionSide {
    /// Ordered finite list of adhesion sets; indices `"1"..="p"`.
    Explicit(Vec<Vec<VertexId>>),
    /// The singleton partition of the whole (possibly infinite) vertex
    /// set, indexed by vertex token; the reserved index is the base
    /// vertex. Used by base-point amalgams.
    Pointed,
}

impl AdhesionSide {
    /// Number of adhesion sets, when finite.
    fn count(&self, factor: &GraphHandle) -> Option<usize> {
        match self {
            AdhesionSide::Explicit(sets) => Some(sets.len()),
            AdhesionSide::Pointed => factor.order(),
        }
    }

    fn set_of(&self, idx: &str, factor: &GraphHandle) -> Result<Vec<VertexId>> {
        match self {
            AdhesionSide::Explicit(sets) => {
                let k: usize = idx
                    .parse()
                    .map_err(|_| Error::Presentation(format!("bad adhesion index `{idx}`")))?;
                sets.get(k.wrapping_sub(1))
                    .cloned()
                    .ok_or_else(|| Error::Presentation(format!("adhesion index `{idx}` out of range")))
            }
            AdhesionSide::Pointed => {
                let v = VertexId::new(idx);
                if factor.contains(&v) {
                    Ok(vec![v])
                } else {
                    Err(Error::Presentation(format!("adhesion index `{idx}` is not a vertex")))
                }
            }
        }
    }

    /// Indices of the adhesion sets containing `x`.
    fn indices_containing(&self, x: &VertexId) -> Vec<AdhesionIndex> {
        match self {
            AdhesionSide::Explicit(sets) => sets
                .iter()
                .enumerate()
                .filter(|(_, s)| s.contains(x))
                .map(|(i, _)| (i + 1).to_string())
                .collect(),
            AdhesionSide::Pointed => vec![x.to_string()],
        }
    }

    /// The own-side coordinate reserved for the parent edge.
    fn reserved(&self, factor: &GraphHandle) -> Result<AdhesionIndex> {
        match self {
            AdhesionSide::Explicit(_) => Ok("1".into()),
            AdhesionSide::Pointed => factor
                .base()
                .map(|b| b.to_string())
                .ok_or_else(|| Error::MissingBase(factor.name())),
        }
    }

    /// All indices, when enumerable.
    fn all_indices(&self, factor: &GraphHandle) -> Option<Vec<AdhesionIndex>> {
        match self {
            AdhesionSide::Explicit(sets) => {
                Some((1..=sets.len()).map(|k| k.to_string()).collect())
            }
            AdhesionSide::Pointed => factor
                .vertices()
                .map(|vs| vs.iter().map(|v| v.to_string()).collect()),
        }
    }

    fn is_valid_index(&self, idx: &str, factor: &GraphHandle) -> bool {
        match self {
            AdhesionSide::Explicit(sets) => idx
                .parse::<usize>()
                .map_or(false, |k| k >= 1 && k <= sets.len()),
            AdhesionSide::Pointed => factor.contains(&VertexId::new(idx)),
        }
    }
}

/// Full presentation of a tree amalgamation of two factors.
#[derive(Clone)]
pub struct AmalgamSpec {
    inner: Arc<SpecInner>,
}

struct SpecInner {
    name: String,
    factor1: GraphHandle,
    factor2: GraphHandle,
    adh1: AdhesionSide,
    adh2: AdhesionSide,
    /// Explicit bonding bijections per label, overriding the positional
    /// default.
    bonding: BTreeMap<(AdhesionIndex, AdhesionIndex), BTreeMap<VertexId, VertexId>>,
    budget: Budget,
}

impl std::fmt::Debug for AmalgamSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AmalgamSpec({})", self.inner.name)
    }
}

impl AmalgamSpec {
    pub fn new(
        name: impl Into<String>,
        factor1: GraphHandle,
        adhesion1: Vec<Vec<VertexId>>,
        factor2: GraphHandle,
        adhesion2: Vec<Vec<VertexId>>,
    ) -> Result<AmalgamSpec> {
        Self::with_bonding(name, factor1, adhesion1, factor2, adhesion2, Vec::new())
    }

    pub fn with_bonding(
        name: impl Into<String>,
        factor1: GraphHandle,
        adhesion1: Vec<Vec<VertexId>>,
        factor2: GraphHandle,
        adhesion2: Vec<Vec<VertexId>>,
        bonding: Vec<((AdhesionIndex, AdhesionIndex), Vec<(VertexId, VertexId)>)>,
    ) -> Result<AmalgamSpec> {
        let name = name.into();
        if adhesion1.is_empty() || adhesion2.is_empty() {
            return Err(Error::Presentation("adhesion lists must be non-empty".into()));
        }
        let card = adhesion1[0].len();
        for (i, (factor, sets)) in [(&factor1, &adhesion1), (&factor2, &adhesion2)]
            .into_iter()
            .enumerate()
        {
            for s in sets.iter() {
                if s.len() != card {
                    return Err(Error::Presentation(format!(
                        "all adhesion sets must have equal cardinality (expected {card}, got {})",
                        s.len()
                    )));
                }
                let mut seen = HashSet::new();
                for v in s {
                    if !factor.contains(v) {
                        return Err(Error::Presentation(format!(
                            "adhesion vertex `{v}` is not in factor {}",
                            i + 1
                        )));
                    }
                    if !seen.insert(v.clone()) {
                        return Err(Error::Presentation(format!(
                            "duplicate vertex `{v}` in an adhesion set"
                        )));
                    }
                }
            }
        }
        let mut bmap = BTreeMap::new();
        for ((k, l), pairs) in bonding {
            if pairs.len() != card {
                return Err(Error::Presentation(format!(
                    "bonding for ({k},{l}) must have {card} pairs"
                )));
            }
            let map: BTreeMap<VertexId, VertexId> = pairs.into_iter().collect();
            if map.len() != card || map.values().collect::<HashSet<_>>().len() != card {
                return Err(Error::Presentation(format!(
                    "bonding for ({k},{l}) is not a bijection"
                )));
            }
            bmap.insert((k, l), map);
        }
        let spec = AmalgamSpec {
            inner: Arc::new(SpecInner {
                name,
                factor1,
                factor2,
                adh1: AdhesionSide::Explicit(adhesion1),
                adh2: AdhesionSide::Explicit(adhesion2),
                bonding: bmap,
                budget: Budget::default(),
            }),
        };
        // Bonding domains must match the named adhesion sets.
        for (k, l) in spec.inner.bonding.keys() {
            let s1: HashSet<_> = spec.adhesion_set(1, k)?.into_iter().collect();
            let s2: HashSet<_> = spec.adhesion_set(2, l)?.into_iter().collect();
            let map = &spec.inner.bonding[&(k.clone(), l.clone())];
            if map.keys().cloned().collect::<HashSet<_>>() != s1
                || map.values().cloned().collect::<HashSet<_>>() != s2
            {
                return Err(Error::Presentation(format!(
                    "bonding for ({k},{l}) does not match the adhesion sets"
                )));
            }
        }
        Ok(spec)
    }

    fn pointed(name: impl Into<String>, factor1: GraphHandle, factor2: GraphHandle) -> AmalgamSpec {
        AmalgamSpec {
            inner: Arc::new(SpecInner {
                name: name.into(),
                factor1,
                factor2,
                adh1: AdhesionSide::Pointed,
                adh2: AdhesionSide::Pointed,
                bonding: BTreeMap::new(),
                budget: Budget::default(),
            }),
        }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn factor(&self, side: usize) -> &GraphHandle {
        match side {
            1 => &self.inner.factor1,
            2 => &self.inner.factor2,
            _ => panic!("side must be 1 or 2"),
        }
    }

    fn adh(&self, side: usize) -> &AdhesionSide {
        match side {
            1 => &self.inner.adh1,
            2 => &self.inner.adh2,
            _ => panic!("side must be 1 or 2"),
        }
    }

    pub fn budget(&self) -> &Budget {
        &self.inner.budget
    }

    /// Tree parameter `p_i`: number of adhesion sets of factor `i`
    /// (None when infinite).
    pub fn p(&self, side: usize) -> Option<usize> {
        self.adh(side).count(self.factor(side))
    }

    pub fn is_pointed(&self) -> bool {
        matches!(self.inner.adh1, AdhesionSide::Pointed)
    }

    pub fn adhesion_set(&self, side: usize, idx: &str) -> Result<Vec<VertexId>> {
        self.adh(side).set_of(idx, self.factor(side))
    }

    pub fn adhesion_indices(&self, side: usize) -> Option<Vec<AdhesionIndex>> {
        self.adh(side).all_indices(self.factor(side))
    }

    /// Number of adhesion sets of factor `side` containing `x`.
    pub fn adhesion_multiplicity(&self, side: usize, x: &VertexId) -> usize {
        self.adh(side).indices_containing(x).len()
    }

    /// Bonding bijection for label `(k, l)` applied to `x` in `S^1_k`.
    pub(crate) fn phi(&self, k: &str, l: &str, x: &VertexId) -> Result<VertexId> {
        if let Some(map) = self.inner.bonding.get(&(k.to_string(), l.to_string())) {
            return map
                .get(x)
                .cloned()
                .ok_or_else(|| Error::Presentation(format!("`{x}` not in bonding domain ({k},{l})")));
        }
        let s1 = self.adhesion_set(1, k)?;
        let s2 = self.adhesion_set(2, l)?;
        let pos = s1
            .iter()
            .position(|v| v == x)
            .ok_or_else(|| Error::Presentation(format!("`{x}` not in adhesion set S1_{k}")))?;
        Ok(s2[pos].clone())
    }

    fn phi_inv(&self, k: &str, l: &str, y: &VertexId) -> Result<VertexId> {
        if let Some(map) = self.inner.bonding.get(&(k.to_string(), l.to_string())) {
            return map
                .iter()
                .find(|(_, v)| *v == y)
                .map(|(u, _)| u.clone())
                .ok_or_else(|| Error::Presentation(format!("`{y}` not in bonding image ({k},{l})")));
        }
        let s1 = self.adhesion_set(1, k)?;
        let s2 = self.adhesion_set(2, l)?;
        let pos = s2
            .iter()
            .position(|v| v == y)
            .ok_or_else(|| Error::Presentation(format!("`{y}` not in adhesion set S2_{l}")))?;
        Ok(s1[pos].clone())
    }

    fn valid_address(&self, t: &TreeAddress) -> bool {
        for (depth, entry) in t.0.iter().enumerate() {
            // The entry at step `depth` is a coordinate of the parent
            // node, which sits on side 1 for even depth.
            let side = if depth % 2 == 0 { 1 } else { 2 };
            if !self.adh(side).is_valid_index(entry, self.factor(side)) {
                return false;
            }
            if depth > 0 {
                let reserved = match self.adh(side).reserved(self.factor(side)) {
                    Ok(r) => r,
                    Err(_) => return false,
                };
                if *entry == reserved {
                    return false;
                }
            }
        }
        true
    }

    /// Incident tree edges of `t`: `(other endpoint, label (k, l))`.
    /// Requires an enumerable adhesion family on `t`'s side.
    pub fn tree_neighbors(&self, t: &TreeAddress) -> Result<Vec<(TreeAddress, (AdhesionIndex, AdhesionIndex))>> {
        if !self.valid_address(t) {
            return Err(Error::UnknownVertex(t.token(), format!("tree({})", self.name())));
        }
        let side = t.side();
        let other = 3 - side;
        let indices = self
            .adh(side)
            .all_indices(self.factor(side))
            .ok_or_else(|| Error::Unsupported("tree enumeration needs a finite adhesion family".into()))?;
        let reserved = self.adh(side).reserved(self.factor(side))?;
        let other_reserved = self.adh(other).reserved(self.factor(other))?;
        let mut out = Vec::new();
        if let Some(p) = t.parent() {
            // Own-side coordinate of the parent edge is the reserved
            // index; the coordinate at the parent is the address entry.
            let own = reserved.clone();
            let at_parent = t.0.last().unwrap().clone();
            let label = if side == 1 {
                (own, at_parent)
            } else {
                (at_parent, own)
            };
            out.push((p, label));
        }
        for idx in indices {
            if t.depth() > 0 && idx == reserved {
                continue; // taken by the parent edge
            }
            let child = t.child(idx.clone());
            let label = if side == 1 {
                (idx, other_reserved.clone())
            } else {
                (other_reserved.clone(), idx)
            };
            out.push((child, label));
        }
        Ok(out)
    }

    /// The tree edge carrying own-side coordinate `idx` at node `t`.
    pub(crate) fn edge_for_index(&self, t: &TreeAddress, idx: &AdhesionIndex) -> Result<(TreeAddress, (AdhesionIndex, AdhesionIndex))> {
        let side = t.side();
        let other = 3 - side;
        let reserved = self.adh(side).reserved(self.factor(side))?;
        if t.depth() > 0 && *idx == reserved {
            let at_parent = t.0.last().unwrap().clone();
            let label = if side == 1 {
                (idx.clone(), at_parent)
            } else {
                (at_parent, idx.clone())
            };
            Ok((t.parent().unwrap(), label))
        } else {
            let other_reserved = self.adh(other).reserved(self.factor(other))?;
            let label = if side == 1 {
                (idx.clone(), other_reserved)
            } else {
                (other_reserved, idx.clone())
            };
            Ok((t.child(idx.clone()), label))
        }
    }

    /// Bridging edges of the sum-graph vertex `(t, x)`: one per adhesion
    /// set containing `x`.
    pub(crate) fn bridges(&self, t: &TreeAddress, x: &VertexId) -> Result<Vec<(TreeAddress, VertexId)>> {
        let side = t.side();
        let mut out = Vec::new();
        for idx in self.adh(side).indices_containing(x) {
            let (u, (k, l)) = self.edge_for_index(t, &idx)?;
            let y = if side == 1 {
                self.phi(&k, &l, x)?
            } else {
                self.phi_inv(&k, &l, x)?
            };
            out.push((u, y));
        }
        Ok(out)
    }

    /// Every adhesion set is a singleton.
    pub fn has_adhesion_one(&self) -> bool {
        for side in [1, 2] {
            match self.adh(side) {
                AdhesionSide::Explicit(sets) => {
                    if sets.iter().any(|s| s.len() != 1) {
                        return false;
                    }
                }
                AdhesionSide::Pointed => {}
            }
        }
        true
    }

    /// Within each factor, no two adhesion sets are equal as sets.
    pub fn has_distinct_adhesion(&self) -> bool {
        for side in [1, 2] {
            if let AdhesionSide::Explicit(sets) = self.adh(side) {
                let mut seen: HashSet<BTreeSet<&VertexId>> = HashSet::new();
                for s in sets {
                    if !seen.insert(s.iter().collect()) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// The adhesion sets of each finite factor cover its vertex set.
    pub fn adhesion_covers(&self) -> Result<bool> {
        for side in [1, 2] {
            if let AdhesionSide::Explicit(sets) = self.adh(side) {
                let all = self
                    .factor(side)
                    .vertices()
                    .ok_or_else(|| Error::FactorNotFinite(self.factor(side).name()))?;
                let covered: HashSet<&VertexId> = sets.iter().flatten().collect();
                if all.iter().any(|v| !covered.contains(v)) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Largest adhesion-set diameter, measured inside the owning factor.
    /// `cap` bounds the search in infinite factors.
    pub fn adhesion_diameter(&self, cap: u64) -> Result<u64> {
        let mut diam = 0u64;
        for side in [1, 2] {
            let indices = match self.adhesion_indices(side) {
                Some(ix) => ix,
                None => continue, // pointed over an infinite factor: singletons
            };
            let factor = self.factor(side);
            for idx in indices {
                let set = self.adhesion_set(side, idx.as_str())?;
                for u in &set {
                    for v in &set {
                        if u < v {
                            let d = crate::graphcore::exact_distance_with(
                                factor,
                                u,
                                v,
                                cap,
                                &self.inner.budget,
                            )?;
                            diam = diam.max(d);
                        }
                    }
                }
            }
        }
        Ok(diam)
    }
}

/// Sum-graph vertex token: `<address>/<factor vertex>`.
pub fn sum_token(t: &TreeAddress, x: &VertexId) -> VertexId {
    VertexId::new(format!("{}/{}", t.token(), x))
}

/// Parse a sum-graph vertex token into its address and factor vertex.
pub fn sum_parts(v: &VertexId) -> Result<(TreeAddress, VertexId)> {
    let s = v.as_str();
    let (addr, rest) = s
        .split_once('/')
        .ok_or_else(|| Error::Schema(format!("`{s}` is not a sum-graph vertex token")))?;
    let t = TreeAddress::parse(addr)
        .ok_or_else(|| Error::Schema(format!("`{addr}` is not a tree address")))?;
    Ok((t, VertexId::new(rest)))
}

struct SumGraph {
    spec: AmalgamSpec,
}

impl Graph for SumGraph {
    fn name(&self) -> String {
        format!("sum({})", self.spec.name())
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let (t, x) = sum_parts(v)?;
        if !self.contains(v) {
            return Err(Error::UnknownVertex(v.to_string(), self.name()));
        }
        let factor = self.spec.factor(t.side());
        let mut out: Vec<VertexId> = factor
            .neighbors(&x)?
            .into_iter()
            .map(|y| sum_token(&t, &y))
            .collect();
        for (u, y) in self.spec.bridges(&t, &x)? {
            out.push(sum_token(&u, &y));
        }
        Ok(out)
    }

    fn origin(&self) -> VertexId {
        sum_token(&TreeAddress::root(), &self.spec.factor(1).origin())
    }

    fn base(&self) -> Option<VertexId> {
        self.spec
            .factor(1)
            .base()
            .map(|b| sum_token(&TreeAddress::root(), &b))
    }

    fn contains(&self, v: &VertexId) -> bool {
        match sum_parts(v) {
            Ok((t, x)) => self.spec.valid_address(&t) && self.spec.factor(t.side()).contains(&x),
            Err(_) => false,
        }
    }
}

/// The graph `G1 + G2`: disjoint copies of the factors along the tree
/// plus one bridging edge per tree edge and adhesion vertex.
pub fn sum_graph(spec: &AmalgamSpec) -> GraphHandle {
    GraphHandle::new(SumGraph { spec: spec.clone() })
}

/// The amalgamation tree itself as a graph handle over tree addresses.
pub fn amalgam_tree(spec: &AmalgamSpec) -> Result<GraphHandle> {
    if spec.p(1).is_none() || spec.p(2).is_none() {
        return Err(Error::Unsupported(
            "amalgamation tree handle needs finite adhesion families".into(),
        ));
    }
    Ok(GraphHandle::new(AmalgamTree { spec: spec.clone() }))
}

struct AmalgamTree {
    spec: AmalgamSpec,
}

impl Graph for AmalgamTree {
    fn name(&self) -> String {
        format!("tree({})", self.spec.name())
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let t = TreeAddress::parse(v.as_str())
            .filter(|t| self.spec.valid_address(t))
            .ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))?;
        Ok(self
            .spec
            .tree_neighbors(&t)?
            .into_iter()
            .map(|(u, _)| VertexId::new(u.token()))
            .collect())
    }

    fn origin(&self) -> VertexId {
        VertexId::new(TreeAddress::root().token())
    }

    fn contains(&self, v: &VertexId) -> bool {
        TreeAddress::parse(v.as_str()).map_or(false, |t| self.spec.valid_address(&t))
    }

    fn metric(&self, u: &VertexId, v: &VertexId) -> Option<u64> {
        let a = TreeAddress::parse(u.as_str())?;
        let b = TreeAddress::parse(v.as_str())?;
        Some(a.distance(&b))
    }
}

/// Identification class of a sum-graph vertex: the closure under
/// bonding identifications across tree edges, sorted. Errors when the
/// closure exceeds the identification budget.
pub fn identification_class(
    spec: &AmalgamSpec,
    t: &TreeAddress,
    x: &VertexId,
) -> Result<Vec<(TreeAddress, VertexId)>> {
    let budget = spec.budget().identification;
    let mut seen: BTreeSet<(TreeAddress, VertexId)> = BTreeSet::new();
    seen.insert((t.clone(), x.clone()));
    let mut queue = VecDeque::new();
    queue.push_back((t.clone(), x.clone()));
    while let Some((a, v)) = queue.pop_front() {
        for (u, y) in spec.bridges(&a, &v)? {
            if seen.insert((u.clone(), y.clone())) {
                if seen.len() > budget {
                    return Err(Error::IdentificationBudget(budget));
                }
                queue.push_back((u, y));
            }
        }
    }
    Ok(seen.into_iter().collect())
}

/// Canonical representative of an identification class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContractedVertex {
    pub rep: (TreeAddress, VertexId),
    pub class_size: usize,
}

impl ContractedVertex {
    pub fn token(&self) -> VertexId {
        sum_token(&self.rep.0, &self.rep.1)
    }
}

struct ContractGraph {
    spec: AmalgamSpec,
    // canonical-representative memo; transparent, never changes results
    canon_cache: Mutex<HashMap<(TreeAddress, VertexId), (TreeAddress, VertexId)>>,
}

impl ContractGraph {
    fn canon(&self, t: &TreeAddress, x: &VertexId) -> Result<(TreeAddress, VertexId)> {
        if let Some(c) = self.canon_cache.lock().unwrap().get(&(t.clone(), x.clone())) {
            return Ok(c.clone());
        }
        let class = identification_class(&self.spec, t, x)?;
        let rep = class[0].clone();
        let mut cache = self.canon_cache.lock().unwrap();
        for member in class {
            cache.insert(member, rep.clone());
        }
        Ok(rep)
    }
}

impl Graph for ContractGraph {
    fn name(&self) -> String {
        format!("contract({})", self.spec.name())
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let (t, x) = sum_parts(v)?;
        if !self.spec.valid_address(&t) || !self.spec.factor(t.side()).contains(&x) {
            return Err(Error::UnknownVertex(v.to_string(), self.name()));
        }
        let rep = self.canon(&t, &x)?;
        if (rep.0.clone(), rep.1.clone()) != (t.clone(), x.clone()) {
            return Err(Error::UnknownVertex(
                v.to_string(),
                format!("{} (not a canonical representative)", self.name()),
            ));
        }
        let class = identification_class(&self.spec, &t, &x)?;
        let mut out = BTreeSet::new();
        for (a, member) in &class {
            let factor = self.spec.factor(a.side());
            for y in factor.neighbors(member)? {
                let c = self.canon(a, &y)?;
                if c != rep {
                    out.insert(sum_token(&c.0, &c.1));
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    fn origin(&self) -> VertexId {
        let o = self.spec.factor(1).origin();
        let rep = self
            .canon(&TreeAddress::root(), &o)
            .expect("origin canonicalization");
        sum_token(&rep.0, &rep.1)
    }

    fn contains(&self, v: &VertexId) -> bool {
        match sum_parts(v) {
            Ok((t, x)) => {
                self.spec.valid_address(&t)
                    && self.spec.factor(t.side()).contains(&x)
                    && self
                        .canon(&t, &x)
                        .map_or(false, |rep| rep.0 == t && rep.1 == x)
            }
            Err(_) => false,
        }
    }
}

/// The tree amalgamation `G1 * G2`: the sum graph with all bridging
/// edges contracted. Vertices are canonical class representatives.
pub fn contract(spec: &AmalgamSpec) -> GraphHandle {
    GraphHandle::new(ContractGraph {
        spec: spec.clone(),
        canon_cache: Mutex::new(HashMap::new()),
    })
}

/// The canonical contraction map on a sum-graph vertex token.
pub fn psi(spec: &AmalgamSpec, v: &VertexId) -> Result<VertexId> {
    let (t, x) = sum_parts(v)?;
    let class = identification_class(spec, &t, &x)?;
    let rep = &class[0];
    Ok(sum_token(&rep.0, &rep.1))
}

/// ψ together with class data.
pub fn contracted_vertex(spec: &AmalgamSpec, v: &VertexId) -> Result<ContractedVertex> {
    let (t, x) = sum_parts(v)?;
    let class = identification_class(spec, &t, &x)?;
    Ok(ContractedVertex {
        rep: class[0].clone(),
        class_size: class.len(),
    })
}

/// Identification size and length of a contracted vertex: order and
/// diameter of the minimal subtree hosting its class.
pub fn identification(spec: &AmalgamSpec, x: &VertexId) -> Result<(u64, u64)> {
    let (t, v) = sum_parts(x)?;
    let class = identification_class(spec, &t, &v)?;
    let addrs: BTreeSet<&TreeAddress> = class.iter().map(|(a, _)| a).collect();
    let size = addrs.len() as u64;
    let mut length = 0u64;
    for a in &addrs {
        for b in &addrs {
            length = length.max(a.distance(b));
        }
    }
    Ok((size, length))
}

/// Largest identification size among contracted vertices found within
/// radius `r` of the contract's origin.
pub fn max_identification_size(spec: &AmalgamSpec, r: u64) -> Result<u64> {
    let g = contract(spec);
    let ball = crate::graphcore::ball(&g, &g.origin(), r, spec.budget())?;
    let mut s = 1u64;
    for v in &ball.vertices {
        let (size, _) = identification(spec, v)?;
        s = s.max(size);
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Triviality {
    Trivial,
    Nontrivial,
    /// Neither certificate found at the probed radius.
    Unknown(u64),
}

/// Three-valued triviality test. The sufficient condition (`V(G_i)` the
/// only adhesion set and `p_i = 1`) certifies triviality; a ball probe
/// exhibiting, for every copy, two contracted vertices outside that
/// copy's image certifies nontriviality.
pub fn is_trivial(spec: &AmalgamSpec) -> Result<Triviality> {
    is_trivial_at(spec, 3)
}

pub fn is_trivial_at(spec: &AmalgamSpec, r: u64) -> Result<Triviality> {
    for side in [1, 2] {
        if spec.p(side) == Some(1) {
            if let Some(all) = spec.factor(side).vertices() {
                let set: BTreeSet<VertexId> = spec
                    .adhesion_set(side, "1")
                    .or_else(|_| spec.adhesion_set(side, all[0].as_str()))?
                    .into_iter()
                    .collect();
                let whole: BTreeSet<VertexId> = all.into_iter().collect();
                if set == whole {
                    return Ok(Triviality::Trivial);
                }
            }
        }
    }
    let g = contract(spec);
    let ball = crate::graphcore::ball(&g, &g.origin(), r, spec.budget())?;
    if ball.len() < 2 {
        return Ok(Triviality::Unknown(r));
    }
    // Copy addresses touched by any class in the ball.
    let mut touched: BTreeSet<TreeAddress> = BTreeSet::new();
    let mut class_addrs: Vec<BTreeSet<TreeAddress>> = Vec::new();
    for v in &ball.vertices {
        let (t, x) = sum_parts(v)?;
        let class = identification_class(spec, &t, &x)?;
        let addrs: BTreeSet<TreeAddress> = class.into_iter().map(|(a, _)| a).collect();
        touched.extend(addrs.iter().cloned());
        class_addrs.push(addrs);
    }
    // A copy whose image misses at least two ball vertices cannot be
    // bijective; copies not touching the ball miss the whole ball.
    let all_fail = touched.iter().all(|t| {
        class_addrs.iter().filter(|addrs| !addrs.contains(t)).count() >= 2
    });
    if all_fail {
        Ok(Triviality::Nontrivial)
    } else {
        Ok(Triviality::Unknown(r))
    }
}

/// Finite extension of factor 2 by a finite factor 1, together with the
/// rewritten presentation over a `(p2(p1-1), p2)`-semiregular tree that
/// contracts to the same amalgam.
pub fn finite_extension(spec: &AmalgamSpec) -> Result<(GraphHandle, AmalgamSpec)> {
    let f1 = spec.factor(1);
    let f2 = spec.factor(2);
    let f1_verts = f1
        .vertices()
        .ok_or_else(|| Error::FactorNotFinite(f1.name()))?;
    let p1 = spec
        .p(1)
        .ok_or_else(|| Error::Unsupported("finite extension needs finite adhesion families".into()))?;
    let p2 = spec
        .p(2)
        .ok_or_else(|| Error::Unsupported("finite extension needs finite adhesion families".into()))?;

    // One copy of factor 2 (the first child of the root) and all p2
    // adjacent copies of factor 1, as an induced subgraph of the sum
    // graph.
    let v_addr = TreeAddress::root().child("1");
    let mut g1_copies = vec![TreeAddress::root()];
    for (u, _) in spec.tree_neighbors(&v_addr)? {
        if u != TreeAddress::root() {
            g1_copies.push(u);
        }
    }
    let mut copy_addrs = vec![v_addr.clone()];
    copy_addrs.extend(g1_copies.iter().cloned());

    let sum = sum_graph(spec);
    let member: HashSet<VertexId> = {
        let mut m = HashSet::new();
        for t in &copy_addrs {
            let verts = spec
                .factor(t.side())
                .vertices()
                .ok_or_else(|| Error::FactorNotFinite(spec.factor(t.side()).name()))?;
            for x in verts {
                m.insert(sum_token(t, &x));
            }
        }
        m
    };
    let mut edges = Vec::new();
    for v in &member {
        for w in sum.neighbors(v)? {
            if member.contains(&w) && v < &w {
                edges.push((v.clone(), w.clone()));
            }
        }
    }
    let origin = sum_token(&TreeAddress::root(), &f1.origin());
    let extension = ExplicitGraph::from_edges(
        format!("finext({})", spec.name()),
        &edges,
        &member.iter().cloned().collect::<Vec<_>>(),
        None,
    )?
    .with_origin(origin)
    .handle();

    // Rewritten presentation: the extension becomes factor 1 with the
    // p2(p1-1) adhesion sets left unused inside the extension; factor 2
    // keeps its family. Bonding is transported from the original maps.
    let mut adhesion1: Vec<Vec<VertexId>> = Vec::new();
    let mut bonding = Vec::new();
    let mut new_k = 0usize;
    for u in &g1_copies {
        let reserved = "1".to_string();
        for k in 1..=p1 {
            let k_str = k.to_string();
            if k_str == reserved {
                continue; // used by the edge into the extension copy
            }
            new_k += 1;
            let set1 = spec.adhesion_set(1, &k_str)?;
            let tokens: Vec<VertexId> = set1.iter().map(|x| sum_token(u, x)).collect();
            adhesion1.push(tokens.clone());
            for l in 1..=p2 {
                let l_str = l.to_string();
                let mut pairs = Vec::new();
                for (x, tok) in set1.iter().zip(tokens.iter()) {
                    pairs.push((tok.clone(), spec.phi(&k_str, &l_str, x)?));
                }
                bonding.push(((new_k.to_string(), l_str), pairs));
            }
        }
    }
    debug_assert_eq!(adhesion1.len(), p2 * (p1 - 1));
    let adhesion2: Vec<Vec<VertexId>> = (1..=p2)
        .map(|l| spec.adhesion_set(2, &l.to_string()))
        .collect::<Result<_>>()?;
    let _ = f1_verts;
    let rewritten = AmalgamSpec::with_bonding(
        format!("finext-rewrite({})", spec.name()),
        extension.clone(),
        adhesion1,
        f2.clone(),
        adhesion2,
        bonding,
    )?;
    Ok((extension, rewritten))
}

/// Base-point amalgamation `G1 +_{v1,v2} G2` over the singleton
/// partitions, with the base edge labeled by the two base vertices.
pub fn base_point_amalgam(g1: &GraphHandle, g2: &GraphHandle) -> Result<AmalgamSpec> {
    let b1 = g1.base().ok_or_else(|| Error::MissingBase(g1.name()))?;
    let b2 = g2.base().ok_or_else(|| Error::MissingBase(g2.name()))?;
    Ok(AmalgamSpec::pointed(
        format!("{}+({},{})+{}", g1.name(), b1, b2, g2.name()),
        g1.clone(),
        g2.clone(),
    ))
}

struct WedgeGraph {
    parts: Vec<(GraphHandle, VertexId)>, // handle and its base vertex
}

impl WedgeGraph {
    fn parse(&self, v: &VertexId) -> Option<(usize, VertexId)> {
        let s = v.as_str();
        let rest = s.strip_prefix('w')?;
        let (idx, vert) = rest.split_once('/')?;
        let i: usize = idx.parse().ok()?;
        if i >= self.parts.len() {
            return None;
        }
        Some((i, VertexId::new(vert)))
    }

    fn token(i: usize, v: &VertexId) -> VertexId {
        VertexId::new(format!("w{i}/{v}"))
    }
}

impl Graph for WedgeGraph {
    fn name(&self) -> String {
        format!(
            "wedge({})",
            self.parts
                .iter()
                .map(|(g, _)| g.name())
                .collect::<Vec<_>>()
                .join(",")
        )
    }

    fn neighbors(&self, v: &VertexId) -> Result<Vec<VertexId>> {
        let (i, x) = self
            .parse(v)
            .ok_or_else(|| Error::UnknownVertex(v.to_string(), self.name()))?;
        let (g, base) = &self.parts[i];
        let mut out: Vec<VertexId> = g
            .neighbors(&x)?
            .into_iter()
            .map(|y| Self::token(i, &y))
            .collect();
        if i == 0 && x == *base {
            for (j, (_, b)) in self.parts.iter().enumerate().skip(1) {
                out.push(Self::token(j, b));
            }
        } else if i > 0 && x == *base {
            out.push(Self::token(0, &self.parts[0].1));
        }
        Ok(out)
    }

    fn origin(&self) -> VertexId {
        Self::token(0, &self.parts[0].1)
    }

    fn base(&self) -> Option<VertexId> {
        Some(self.origin())
    }

    fn contains(&self, v: &VertexId) -> bool {
        self.parse(v)
            .map_or(false, |(i, x)| self.parts[i].0.contains(&x))
    }

    fn vertices(&self) -> Option<Vec<VertexId>> {
        let mut out = Vec::new();
        for (i, (g, _)) in self.parts.iter().enumerate() {
            for v in g.vertices()? {
                out.push(Self::token(i, &v));
            }
        }
        Some(out)
    }
}

/// Disjoint union of pointed graphs with a star of edges from the first
/// part's base vertex to every other base vertex.
pub fn wedge(parts: &[GraphHandle]) -> Result<GraphHandle> {
    if parts.len() < 2 {
        return Err(Error::Schema("wedge needs at least two parts".into()));
    }
    let mut resolved = Vec::new();
    for g in parts {
        let b = g.base().ok_or_else(|| Error::MissingBase(g.name()))?;
        resolved.push((g.clone(), b));
    }
    Ok(GraphHandle::new(WedgeGraph { parts: resolved }))
}

// ---------------------------------------------------------------------
// JSON presentation (schema "amalgo/1")
// ---------------------------------------------------------------------

/// Parse a graph description: a generator reference or an explicit edge
/// list.
pub fn graph_from_json(v: &Value) -> Result<GraphHandle> {
    use crate::graphcore as gc;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Schema("graph must be an object".into()))?;
    if let Some(gen) = obj.get("generator") {
        let name = gen
            .as_str()
            .ok_or_else(|| Error::Schema("generator must be a string".into()))?;
        let params: Vec<u64> = obj
            .get("params")
            .and_then(|p| p.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_u64()).collect())
            .unwrap_or_default();
        let handle = match (name, params.as_slice()) {
            ("doubleray", []) => gc::doubleray(),
            ("grid2d", []) => gc::grid2d(),
            ("cycle", [n]) if *n >= 3 => gc::cycle(*n),
            ("path", [n]) if *n >= 1 => gc::path(*n),
            ("complete", [n]) if *n >= 1 => gc::complete(*n),
            ("regtree", [d]) if *d >= 3 => gc::regtree(*d as u32),
            ("semitree", [p1, p2]) if *p1 >= 1 && *p2 >= 1 => gc::semitree(*p1 as u32, *p2 as u32),
            _ => {
                return Err(Error::Schema(format!(
                    "unknown generator `{name}` with params {params:?}"
                )))
            }
        };
        let handle = match obj.get("base") {
            Some(Value::String(b)) => {
                let v = VertexId::new(b.as_str());
                if !handle.contains(&v) {
                    return Err(Error::Schema(format!("base `{b}` not in graph")));
                }
                handle.pointed(v)
            }
            _ => handle,
        };
        return Ok(handle);
    }
    if let Some(edges) = obj.get("edges") {
        let edges = edges
            .as_array()
            .ok_or_else(|| Error::Schema("edges must be an array".into()))?;
        let mut parsed = Vec::new();
        for e in edges {
            let pair = e
                .as_array()
                .filter(|p| p.len() == 2)
                .ok_or_else(|| Error::Schema("each edge must be a token pair".into()))?;
            let a = pair[0]
                .as_str()
                .ok_or_else(|| Error::Schema("edge tokens must be strings".into()))?;
            let b = pair[1]
                .as_str()
                .ok_or_else(|| Error::Schema("edge tokens must be strings".into()))?;
            parsed.push((VertexId::new(a), VertexId::new(b)));
        }
        let extra: Vec<VertexId> = obj
            .get("vertices")
            .and_then(|x| x.as_array())
            .map(|a| {
                a.iter()
                    .filter_map(|x| x.as_str().map(VertexId::new))
                    .collect()
            })
            .unwrap_or_default();
        let base = obj
            .get("base")
            .and_then(|b| b.as_str())
            .map(VertexId::new);
        let name = obj
            .get("name")
            .and_then(|n| n.as_str())
            .unwrap_or("explicit")
            .to_string();
        return Ok(ExplicitGraph::from_edges(name, &parsed, &extra, base)?.handle());
    }
    Err(Error::Schema(
        "graph must have either `generator` or `edges`".into(),
    ))
}

fn adhesion_from_json(v: &Value, field: &str) -> Result<Vec<Vec<VertexId>>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Schema(format!("{field} must be an array of arrays")))?;
    let mut out = Vec::new();
    for set in arr {
        let set = set
            .as_array()
            .ok_or_else(|| Error::Schema(format!("{field} entries must be arrays")))?;
        let mut vs = Vec::new();
        for tok in set {
            let s = tok
                .as_str()
                .ok_or_else(|| Error::Schema(format!("{field} tokens must be strings")))?;
            vs.push(VertexId::new(s));
        }
        out.push(vs);
    }
    Ok(out)
}

impl AmalgamSpec {
    /// Parse an `amalgo/1` presentation document.
    pub fn from_json(v: &Value) -> Result<AmalgamSpec> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Schema("spec must be an object".into()))?;
        match obj.get("schema").and_then(|s| s.as_str()) {
            Some(crate::SCHEMA) => {}
            other => {
                return Err(Error::Schema(format!(
                    "missing or unsupported schema field: {other:?}"
                )))
            }
        }
        let name = obj
            .get("name")
            .and_then(|n| n.as_str())
            .unwrap_or("spec")
            .to_string();
        let factor1 = graph_from_json(
            obj.get("factor1")
                .ok_or_else(|| Error::Schema("missing factor1".into()))?,
        )?;
        let factor2 = graph_from_json(
            obj.get("factor2")
                .ok_or_else(|| Error::Schema("missing factor2".into()))?,
        )?;
        let adhesion1 = adhesion_from_json(
            obj.get("adhesion1")
                .ok_or_else(|| Error::Schema("missing adhesion1".into()))?,
            "adhesion1",
        )?;
        let adhesion2 = adhesion_from_json(
            obj.get("adhesion2")
                .ok_or_else(|| Error::Schema("missing adhesion2".into()))?,
            "adhesion2",
        )?;
        if let Some(p1) = obj.get("p1").and_then(|p| p.as_u64()) {
            if p1 as usize != adhesion1.len() {
                return Err(Error::Schema(format!(
                    "p1 = {p1} does not match {} adhesion sets",
                    adhesion1.len()
                )));
            }
        }
        if let Some(p2) = obj.get("p2").and_then(|p| p.as_u64()) {
            if p2 as usize != adhesion2.len() {
                return Err(Error::Schema(format!(
                    "p2 = {p2} does not match {} adhesion sets",
                    adhesion2.len()
                )));
            }
        }
        let mut bonding = Vec::new();
        if let Some(b) = obj.get("bonding") {
            let arr = b
                .as_array()
                .ok_or_else(|| Error::Schema("bonding must be an array".into()))?;
            for item in arr {
                let o = item
                    .as_object()
                    .ok_or_else(|| Error::Schema("bonding entries must be objects".into()))?;
                let k = o
                    .get("k")
                    .and_then(|x| x.as_str().map(String::from).or(x.as_u64().map(|n| n.to_string())))
                    .ok_or_else(|| Error::Schema("bonding entry needs k".into()))?;
                let l = o
                    .get("l")
                    .and_then(|x| x.as_str().map(String::from).or(x.as_u64().map(|n| n.to_string())))
                    .ok_or_else(|| Error::Schema("bonding entry needs l".into()))?;
                let pairs = o
                    .get("pairs")
                    .and_then(|p| p.as_array())
                    .ok_or_else(|| Error::Schema("bonding entry needs pairs".into()))?;
                let mut parsed = Vec::new();
                for p in pairs {
                    let pair = p
                        .as_array()
                        .filter(|a| a.len() == 2)
                        .ok_or_else(|| Error::Schema("bonding pairs must be token pairs".into()))?;
                    let a = pair[0]
                        .as_str()
                        .ok_or_else(|| Error::Schema("bonding tokens must be strings".into()))?;
                    let b = pair[1]
                        .as_str()
                        .ok_or_else(|| Error::Schema("bonding tokens must be strings".into()))?;
                    parsed.push((VertexId::new(a), VertexId::new(b)));
                }
                bonding.push(((k, l), parsed));
            }
        }
        AmalgamSpec::with_bonding(name, factor1, adhesion1, factor2, adhesion2, bonding)
    }
}
