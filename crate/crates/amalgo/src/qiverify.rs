//! Empirical verification of quasi-isometry claims on exact metric
//! balls: distortion profiling, claim checking, bilipschitz checking
//! and symmetry-based self-map witnesses.
//!
//! Verification never proves a claim; it refutes claims on balls and
//! corroborates them up to the probed radius. Boundary effects are
//! avoided structurally: source distances for pairs inside the radius-r
//! ball are taken from a radius-2r window (or a closed form), and
//! density is only assessed on an interior margin of the image-spanning
//! target ball.

use crate::graphcore::{ball, bfs_distances, GraphHandle, VertexId};
use crate::par;
use crate::qimaps::{QiConstants, QiMap, Rational};
use crate::{Budget, Error, Result};
use num_rational::Ratio;
use serde::Serialize;
use std::collections::{BTreeSet, HashMap};

fn rat(n: i64) -> Rational {
    Ratio::from_integer(n)
}

fn ser_rat<S: serde::Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

fn ceil_u64(r: Rational) -> u64 {
    r.ceil().to_integer().max(0) as u64
}

/// A concrete violation: a vertex pair breaking a metric inequality, or
/// a target vertex not covered by the image within the density bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub kind: String,
    pub u: String,
    pub v: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_distance: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_distance: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail(Witness),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DistortionReport {
    pub radius: u64,
    pub pairs: u64,
    #[serde(serialize_with = "ser_rat")]
    pub gamma_hat: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub c_hat: Rational,
    #[serde(serialize_with = "ser_rat")]
    pub density_hat: Rational,
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl DistortionReport {
    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }
}

/// Per-pair outcome, aggregated with order-independent max/min so the
/// report is identical for any worker count.
#[derive(Debug, Clone)]
struct PairStats {
    pairs: u64,
    gamma_hat: Rational,
    c_hat: Rational,
    /// (source distance, source token, target token) orders witnesses.
    witness: Option<((u64, String, String), Witness)>,
}

impl PairStats {
    fn empty() -> PairStats {
        PairStats {
            pairs: 0,
            gamma_hat: rat(1),
            c_hat: rat(0),
            witness: None,
        }
    }

    fn merge(mut self, other: PairStats) -> PairStats {
        self.pairs += other.pairs;
        self.gamma_hat = self.gamma_hat.max(other.gamma_hat);
        self.c_hat = self.c_hat.max(other.c_hat);
        self.witness = match (self.witness, other.witness) {
            (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
            (a, b) => a.or(b),
        };
        self
    }
}

pub fn measure_distortion(f: &QiMap, r: u64) -> Result<DistortionReport> {
    measure_distortion_with(f, r, &Budget::default())
}

pub fn measure_distortion_with(f: &QiMap, r: u64, budget: &Budget) -> Result<DistortionReport> {
    let src = &f.source;
    let tgt = &f.target;
    let o = src.origin();
    let bs = ball(src, &o, r, budget)?;
    let claim = f.claimed;

    // Source distances: closed form when available, else induced
    // distances in the radius-2r window (exact for pairs in the ball).
    let has_src_metric = src.metric(&o, &o).is_some();
    let window = if has_src_metric {
        None
    } else {
        Some(ball(src, &o, 2 * r, budget)?)
    };

    // Image of every ball vertex.
    let images: Vec<VertexId> = {
        let results = par::map_collect(&bs.vertices, |v| f.apply(v));
        results.into_iter().collect::<Result<Vec<_>>>()?
    };
    let mut distinct: Vec<VertexId> = images.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let phi_o = f.apply(&o)?;
    if !distinct.contains(&phi_o) {
        distinct.push(phi_o.clone());
        distinct.sort();
    }

    // Target distances between distinct images. Without a closed-form
    // metric, enumerate the target once: all images sit within
    // span = max d(phi(o), image) of phi(o), and a geodesic between two
    // images never leaves the radius-2*span ball around phi(o), so BFS
    // rows inside that one window give exact distances. The probe from
    // phi(o) is capped at gamma*r + c; an image beyond that already
    // refutes the claimed upper bound and surfaces as a missing pair.
    let has_tgt_metric = tgt.metric(&phi_o, &phi_o).is_some();
    let tdist: HashMap<(VertexId, VertexId), u64> = if has_tgt_metric {
        HashMap::new()
    } else {
        let cap = ceil_u64(claim.gamma * rat(r as i64) + claim.c).max(1);
        let d0 = bfs_distances(tgt, &phi_o, cap, Some(&distinct), budget)?;
        let span = distinct.iter().filter_map(|a| d0.get(a)).copied().max().unwrap_or(0);
        let wt = ball(tgt, &phi_o, 2 * span, budget)?;
        let rows = par::map_collect(&distinct, |a| {
            wt.index.get(a).map(|&ia| (a.clone(), wt.distances_within(ia)))
        });
        let mut out = HashMap::new();
        for (a, row) in rows.into_iter().flatten() {
            for b in &distinct {
                if let Some(&ib) = wt.index.get(b) {
                    let d = row[ib as usize];
                    if d != u32::MAX {
                        let key = if a <= *b {
                            (a.clone(), b.clone())
                        } else {
                            (b.clone(), a.clone())
                        };
                        out.insert(key, d as u64);
                    }
                }
            }
        }
        out
    };
    let target_distance = |a: &VertexId, b: &VertexId| -> Option<u64> {
        if a == b {
            return Some(0);
        }
        if has_tgt_metric {
            tgt.metric(a, b)
        } else {
            let key = if a <= b {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            };
            tdist.get(&key).copied()
        }
    };

    // Deterministic stride subsampling against the pair budget.
    let n = bs.len() as u64;
    let total_pairs = n * (n.saturating_sub(1)) / 2;
    let stride = (total_pairs / budget.pairs.max(1)).max(1);

    let indices: Vec<u32> = (0..bs.len() as u32).collect();
    let stats = par::map_collect(&indices, |&i| -> Result<PairStats> {
        let mut st = PairStats::empty();
        let u = &bs.vertices[i as usize];
        let row = window.as_ref().map(|w| {
            let wi = *w.index.get(u).expect("ball vertex inside its window");
            w.distances_within(wi)
        });
        // pair counter offset for row i in row-major order; visit only
        // the sampled pairs (multiples of the stride) directly
        let i64v = i as u64;
        let before: u64 = i64v * (n - 1) - i64v * i64v.saturating_sub(1) / 2;
        let row_len = n - 1 - i64v;
        let mut k = before.next_multiple_of(stride);
        while k < before + row_len {
            let j = (i64v + 1 + (k - before)) as usize;
            let v = &bs.vertices[j];
            let ds = if let Some(row) = &row {
                let wj = *window.as_ref().unwrap().index.get(v).unwrap() as usize;
                let d = row[wj];
                if d == u32::MAX {
                    return Err(Error::DisconnectedWindow(
                        u.to_string(),
                        v.to_string(),
                        2 * r,
                    ));
                }
                d as u64
            } else {
                src.metric(u, v)
                    .ok_or_else(|| Error::Unsupported("metric withdrawn mid-run".into()))?
            };
            st.pairs += 1;
            let key = (ds, u.to_string(), v.to_string());
            let dt = match target_distance(&images[i as usize], &images[j]) {
                Some(d) => d,
                None => {
                    // farther than the claim permits
                    let w = Witness {
                        kind: "upper".into(),
                        u: u.to_string(),
                        v: v.to_string(),
                        source_distance: Some(ds),
                        target_distance: None,
                    };
                    if st.witness.as_ref().map_or(true, |(k0, _)| key < *k0) {
                        st.witness = Some((key, w));
                    }
                    k += stride;
                    continue;
                }
            };
            let (dsr, dtr) = (rat(ds as i64), rat(dt as i64));
            if ds >= 1 && dt >= 1 {
                st.gamma_hat = st.gamma_hat.max(dtr / dsr).max(dsr / dtr);
            }
            st.c_hat = st
                .c_hat
                .max(dtr - claim.gamma * dsr)
                .max(dsr / claim.gamma - dtr);
            let kind = if dtr > claim.gamma * dsr + claim.c {
                Some("upper")
            } else if dtr < dsr / claim.gamma - claim.c {
                Some("lower")
            } else {
                None
            };
            if let Some(kind) = kind {
                let w = Witness {
                    kind: kind.into(),
                    u: u.to_string(),
                    v: v.to_string(),
                    source_distance: Some(ds),
                    target_distance: Some(dt),
                };
                if st.witness.as_ref().map_or(true, |(k0, _)| key < *k0) {
                    st.witness = Some((key, w));
                }
            }
            k += stride;
        }
        Ok(st)
    });
    let mut agg = PairStats::empty();
    for s in stats {
        agg = agg.merge(s?);
    }

    // Density on the interior margin of the image-spanning target ball.
    let mut density_hat = rat(0);
    let mut density_witness: Option<Witness> = None;
    let spanning = distinct
        .iter()
        .filter_map(|a| target_distance(&phi_o, a))
        .max()
        .unwrap_or(0);
    // Interior radius: inside the image-spanning ball, and small enough
    // that (if the claim holds) a covering image point has a preimage
    // inside the probed source ball — avoids truncation false-failures.
    let margin = ceil_u64(claim.density_c);
    let reach = (rat(r as i64) - claim.c) / claim.gamma;
    let base = rat(spanning as i64).min(reach) - claim.density_c;
    let interior = if base < rat(0) {
        0
    } else {
        base.floor().to_integer().max(0) as u64
    };
    if spanning > 0 && interior > 0 || (spanning > 0 && margin == 0) {
        let interior = interior.min(spanning);
        let bt = ball(tgt, &phi_o, interior + margin, budget)?;
        let image_set: BTreeSet<&VertexId> = images.iter().collect();
        // multi-source BFS inside the target ball
        let mut dist = vec![u64::MAX; bt.len()];
        let mut queue = std::collections::VecDeque::new();
        for (i, v) in bt.vertices.iter().enumerate() {
            if image_set.contains(v) {
                dist[i] = 0;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            for &j in &bt.adj[i] {
                if dist[j as usize] == u64::MAX {
                    dist[j as usize] = dist[i] + 1;
                    queue.push_back(j as usize);
                }
            }
        }
        for (i, v) in bt.vertices.iter().enumerate() {
            if bt.dist[i] as u64 > interior {
                continue;
            }
            let bad = dist[i] == u64::MAX || rat(dist[i] as i64) > claim.density_c;
            if dist[i] != u64::MAX {
                density_hat = density_hat.max(rat(dist[i] as i64));
            }
            if bad && density_witness.is_none() {
                density_witness = Some(Witness {
                    kind: "density".into(),
                    u: v.to_string(),
                    v: String::new(),
                    source_distance: None,
                    target_distance: if dist[i] == u64::MAX {
                        None
                    } else {
                        Some(dist[i])
                    },
                });
            }
        }
    }

    let witness = agg
        .witness
        .map(|(_, w)| w)
        .or(density_witness);
    Ok(DistortionReport {
        radius: r,
        pairs: agg.pairs,
        gamma_hat: agg.gamma_hat,
        c_hat: agg.c_hat.max(rat(0)),
        density_hat,
        verdict: if witness.is_none() { "pass" } else { "fail" }.into(),
        witness,
    })
}

fn validate_radii(radii: &[u64]) -> Result<()> {
    if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Unsupported(
            "radii must be nonempty and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Check a map's claimed constants at every radius; reports the first
/// violation found (smallest radius, then smallest pair).
pub fn check_claim(f: &QiMap, radii: &[u64]) -> Result<Verdict> {
    check_claim_with(f, radii, &Budget::default())
}

pub fn check_claim_with(f: &QiMap, radii: &[u64], budget: &Budget) -> Result<Verdict> {
    Ok(check_claim_reports(f, radii, budget)?.0)
}

pub fn check_claim_reports(
    f: &QiMap,
    radii: &[u64],
    budget: &Budget,
) -> Result<(Verdict, Vec<DistortionReport>)> {
    validate_radii(radii)?;
    let mut reports = Vec::new();
    let mut verdict = Verdict::Pass;
    for &r in radii {
        let rep = measure_distortion_with(f, r, budget)?;
        if verdict.passed() {
            if let Some(w) = &rep.witness {
                verdict = Verdict::Fail(w.clone());
            }
        }
        reports.push(rep);
    }
    Ok((verdict, reports))
}

/// Claim check with c forced to 0 and surjectivity-on-interior required
/// (density 0); injectivity failures surface as lower-bound violations.
pub fn bilipschitz_check(f: &QiMap, radii: &[u64]) -> Result<Verdict> {
    bilipschitz_check_with(f, radii, &Budget::default())
}

pub fn bilipschitz_check_with(f: &QiMap, radii: &[u64], budget: &Budget) -> Result<Verdict> {
    let strict = f.with_claim(QiConstants::new(f.claimed.gamma, rat(0), rat(0)));
    check_claim_with(&strict, radii, budget)
}

fn parity(v: &VertexId) -> usize {
    // generator tree tokens: "r" or "r.a.b..."; depth = segment count - 1
    (v.as_str().split('.').count() - 1) % 2
}

/// Symmetry-based witness that a built-in generator admits a bilipschitz
/// self-map carrying `u` to `v`: gamma = 1 from a known automorphism, or
/// none (no search is performed).
pub fn unvarying_probe(
    g: &GraphHandle,
    u: &VertexId,
    v: &VertexId,
    r: u64,
) -> Result<Option<Rational>> {
    let bv = ball(g, &g.origin(), r, &Budget::default())?;
    for x in [u, v] {
        if !bv.contains(x) {
            return Err(Error::UnknownVertex(x.to_string(), g.name()));
        }
    }
    let name = g.name();
    let transitive = name == "doubleray"
        || name == "grid2d"
        || name.starts_with("regtree(")
        || name.starts_with("cycle(")
        || name.starts_with("complete(");
    if transitive {
        return Ok(Some(rat(1)));
    }
    if let Some(args) = name.strip_prefix("semitree(").and_then(|s| s.strip_suffix(')')) {
        let parts: Vec<&str> = args.split(',').collect();
        if parts.len() == 2 {
            let same_parity = parity(u) == parity(v);
            let symmetric = parts[0].trim() == parts[1].trim();
            if same_parity || symmetric {
                return Ok(Some(rat(1)));
            }
        }
        return Ok(None);
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amalgam::AmalgamSpec;
    use crate::graphcore::{complete, cycle, doubleray, regtree, semitree};
    use crate::qimaps::{identity, psi_map, tree_collapse_map};
    use std::sync::Arc;

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

    fn doubling() -> QiMap {
        let g = doubleray();
        QiMap::new(
            g.clone(),
            g.clone(),
            Arc::new(|v: &VertexId| {
                let n: i64 = v.as_str().parse().unwrap();
                Ok(VertexId::from(2 * n))
            }),
            QiConstants::ints(1, 0, 0),
            "doubling",
        )
    }

    fn negation() -> QiMap {
        let g = doubleray();
        QiMap::new(
            g.clone(),
            g.clone(),
            Arc::new(|v: &VertexId| {
                let n: i64 = v.as_str().parse().unwrap();
                Ok(VertexId::from(-n))
            }),
            QiConstants::ints(1, 0, 0),
            "negation",
        )
    }

    #[test]
    fn identity_report_is_clean() {
        let rep = measure_distortion(&identity(&doubleray()), 5).unwrap();
        assert_eq!(rep.gamma_hat, rat(1));
        assert_eq!(rep.c_hat, rat(0));
        assert_eq!(rep.density_hat, rat(0));
        assert!(rep.passed());
        assert_eq!(rep.pairs, 11 * 10 / 2);
    }

    #[test]
    fn doubling_fails_identity_claim_with_adjacent_witness() {
        let v = check_claim(&doubling(), &[3]).unwrap();
        match v {
            Verdict::Fail(w) => {
                assert_eq!(w.source_distance, Some(1));
                assert_eq!(w.target_distance, Some(2));
            }
            Verdict::Pass => panic!("doubling cannot claim (1,0,0)"),
        }
    }

    #[test]
    fn doubling_passes_relaxed_claim() {
        let m = doubling().with_claim(QiConstants::ints(2, 0, 1));
        assert!(check_claim(&m, &[3, 4, 5]).unwrap().passed());
    }

    #[test]
    fn negation_is_bilipschitz_doubling_is_not() {
        assert!(bilipschitz_check(&negation(), &[3, 5]).unwrap().passed());
        let m = doubling().with_claim(QiConstants::ints(2, 0, 0));
        assert!(!bilipschitz_check(&m, &[3]).unwrap().passed());
    }

    #[test]
    fn psi_claim_passes_on_s1() {
        let m = psi_map(&s1()).unwrap();
        assert_eq!(m.claimed, QiConstants::ints(2, 2, 0));
        assert!(check_claim(&m, &[4, 8]).unwrap().passed());
    }

    #[test]
    fn collapse_claim_passes_on_s2() {
        let m = tree_collapse_map(&s2()).unwrap();
        let rep = measure_distortion(&m, 6).unwrap();
        assert!(rep.passed(), "witness: {:?}", rep.witness);
    }

    #[test]
    fn statistics_monotone_in_radius() {
        let m = tree_collapse_map(&s2()).unwrap();
        let mut last = (rat(0), rat(0));
        for r in [2, 3, 4, 5] {
            let rep = measure_distortion(&m, r).unwrap();
            assert!(rep.gamma_hat >= last.0 && rep.c_hat >= last.1);
            last = (rep.gamma_hat, rep.c_hat);
        }
    }

    #[test]
    fn windowed_equals_whole_graph_bfs_on_finite_graphs() {
        use crate::graphcore::ExplicitGraph;
        // explicit graphs have no closed-form metric, so the windowed
        // path is exercised; the oracle uses whole-graph all-pairs BFS
        for n in [7usize, 9] {
            let edges: Vec<(VertexId, VertexId)> = (0..n)
                .map(|i| (VertexId::from(i as i64), VertexId::from(((i + 1) % n) as i64)))
                .collect();
            let g = ExplicitGraph::from_edges(format!("ring{n}"), &edges, &[], None)
                .unwrap()
                .handle();
            // rotation by 2: a graph automorphism
            let gg = g.clone();
            let m = QiMap::new(
                g.clone(),
                g.clone(),
                Arc::new(move |v: &VertexId| {
                    let k: usize = v.as_str().parse().unwrap();
                    let img = VertexId::from(((k + 2) % gg.order().unwrap()) as i64);
                    Ok(img)
                }),
                QiConstants::ints(1, 0, 0),
                "rotate2",
            );
            let rep = measure_distortion(&m, 3).unwrap();
            assert!(rep.passed(), "witness: {:?}", rep.witness);
            // oracle: identical statistics from whole-graph BFS
            let b = Budget::default();
            let bv = ball(&g, &g.origin(), 3, &b).unwrap();
            let mut gamma = rat(1);
            let mut slack = rat(0);
            let mut pairs = 0u64;
            for (i, u) in bv.vertices.iter().enumerate() {
                let du = bfs_distances(&g, u, u64::MAX, None, &b).unwrap();
                let dfu = bfs_distances(&g, &m.apply(u).unwrap(), u64::MAX, None, &b).unwrap();
                for v in bv.vertices.iter().skip(i + 1) {
                    pairs += 1;
                    let ds = du[v] as i64;
                    let dt = dfu[&m.apply(v).unwrap()] as i64;
                    if ds >= 1 && dt >= 1 {
                        gamma = gamma.max(rat(dt) / rat(ds)).max(rat(ds) / rat(dt));
                    }
                    slack = slack.max(rat(dt) - rat(ds)).max(rat(ds) - rat(dt));
                }
            }
            assert_eq!(rep.gamma_hat, gamma);
            assert_eq!(rep.c_hat, slack.max(rat(0)));
            assert_eq!(rep.pairs, pairs);
        }
    }

    #[test]
    fn report_serializes_with_rational_strings() {
        let rep = measure_distortion(&identity(&cycle(5)), 2).unwrap();
        let j = serde_json::to_value(&rep).unwrap();
        assert_eq!(j["gamma_hat"], "1");
        assert_eq!(j["verdict"], "pass");
        assert!(j.get("witness").is_none());
    }

    #[test]
    fn radii_preconditions() {
        let m = identity(&doubleray());
        assert!(check_claim(&m, &[]).is_err());
        assert!(check_claim(&m, &[3, 3]).is_err());
        assert!(check_claim(&m, &[4, 2]).is_err());
    }

    #[test]
    fn unvarying_probes() {
        let d = doubleray();
        assert_eq!(
            unvarying_probe(&d, &VertexId::from(0), &VertexId::from(7), 8).unwrap(),
            Some(rat(1))
        );
        let t = regtree(3);
        let bv = ball(&t, &t.origin(), 2, &Budget::default()).unwrap();
        assert_eq!(
            unvarying_probe(&t, &bv.vertices[0], &bv.vertices[3], 2).unwrap(),
            Some(rat(1))
        );
        let st = semitree(3, 4);
        let bv = ball(&st, &st.origin(), 1, &Budget::default()).unwrap();
        // origin and a neighbor sit on different parity classes
        assert_eq!(
            unvarying_probe(&st, &bv.vertices[0], &bv.vertices[1], 1).unwrap(),
            None
        );
        // same parity class
        let bv2 = ball(&st, &st.origin(), 2, &Budget::default()).unwrap();
        let far = bv2
            .vertices
            .iter()
            .find(|v| bv2.distance_from_center(v) == Some(2))
            .unwrap();
        assert_eq!(
            unvarying_probe(&st, &bv2.vertices[0], far, 2).unwrap(),
            Some(rat(1))
        );
        // symmetric parities admit the swap
        let sq = semitree(4, 4);
        let bv3 = ball(&sq, &sq.origin(), 1, &Budget::default()).unwrap();
        assert_eq!(
            unvarying_probe(&sq, &bv3.vertices[0], &bv3.vertices[1], 1).unwrap(),
            Some(rat(1))
        );
    }
}
