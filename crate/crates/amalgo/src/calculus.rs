//! Symbolic factorisation trees and the quasi-isometry-type decision
//! procedure.
//!
//! Inputs are promises: a leaf label stands for a quasi-isometry type
//! (same name, same type; distinct names carry no information), and the
//! flags on a node assert properties of the amalgamation it denotes.
//! The calculus only draws the conclusions those promises support; it
//! returns `Unknown` rather than guessing, and in particular never
//! declares inequality from differing type sets on non-terminal trees.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// End-count class of a symbolic factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EndClassLabel {
    #[serde(rename = "0")]
    Finite,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Infinite,
}

impl std::fmt::Display for EndClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EndClassLabel::Finite => "0",
            EndClassLabel::One => "1",
            EndClassLabel::Two => "2",
            EndClassLabel::Infinite => "inf",
        };
        f.write_str(s)
    }
}

/// A named quasi-isometry type: the name is opaque, the end class and
/// accessibility flag are attributes of the type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QiTypeLabel {
    pub name: String,
    pub ends: EndClassLabel,
    pub accessible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorisationTree {
    #[serde(rename = "leaf")]
    Leaf(QiTypeLabel),
    #[serde(rename = "node")]
    Node {
        left: Box<FactorisationTree>,
        right: Box<FactorisationTree>,
        nontrivial: bool,
        finite_adhesion: bool,
        star: bool,
    },
}

pub fn leaf(name: impl Into<String>, ends: EndClassLabel, accessible: bool) -> FactorisationTree {
    FactorisationTree::Leaf(QiTypeLabel {
        name: name.into(),
        ends,
        accessible,
    })
}

pub fn finite_leaf(name: impl Into<String>) -> FactorisationTree {
    leaf(name, EndClassLabel::Finite, true)
}

/// A node with the standard flags: nontrivial amalgamation, finite
/// adhesion sets, non-star amalgamation tree.
pub fn node(left: FactorisationTree, right: FactorisationTree) -> FactorisationTree {
    node_with(left, right, true, true, false)
}

pub fn node_with(
    left: FactorisationTree,
    right: FactorisationTree,
    nontrivial: bool,
    finite_adhesion: bool,
    star: bool,
) -> FactorisationTree {
    FactorisationTree::Node {
        left: Box::new(left),
        right: Box::new(right),
        nontrivial,
        finite_adhesion,
        star,
    }
}

impl FactorisationTree {
    pub fn leaves(&self) -> Vec<&QiTypeLabel> {
        match self {
            FactorisationTree::Leaf(l) => vec![l],
            FactorisationTree::Node { left, right, .. } => {
                let mut out = left.leaves();
                out.extend(right.leaves());
                out
            }
        }
    }

    pub fn from_json(s: &str) -> Result<FactorisationTree> {
        serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    fn all_nodes_nontrivial_nonstar(&self) -> bool {
        match self {
            FactorisationTree::Leaf(_) => true,
            FactorisationTree::Node {
                left,
                right,
                nontrivial,
                finite_adhesion,
                star,
            } => {
                *nontrivial
                    && *finite_adhesion
                    && !*star
                    && left.all_nodes_nontrivial_nonstar()
                    && right.all_nodes_nontrivial_nonstar()
            }
        }
    }

    /// Whether the root graph is accessible, when derivable: a supplied
    /// leaf flag, or an amalgamation over finite adhesion of accessible
    /// parts. Finite and at-most-two-ended leaves are trivially
    /// accessible.
    pub fn accessible(&self) -> bool {
        match self {
            FactorisationTree::Leaf(l) => l.accessible || l.ends != EndClassLabel::Infinite,
            FactorisationTree::Node {
                left,
                right,
                finite_adhesion,
                ..
            } => *finite_adhesion && left.accessible() && right.accessible(),
        }
    }

    /// Root end class, when the symbolic rules determine it:
    /// a leaf's own class; a nontrivial star amalgamation with a finite
    /// part keeps the other part's class; a nontrivial non-star
    /// amalgamation over finite adhesion has infinitely many ends.
    pub fn end_class(&self) -> Option<EndClassLabel> {
        match self {
            FactorisationTree::Leaf(l) => Some(l.ends),
            FactorisationTree::Node {
                left,
                right,
                nontrivial,
                finite_adhesion,
                star,
            } => {
                if !*nontrivial {
                    return None;
                }
                let lc = left.end_class()?;
                let rc = right.end_class()?;
                if *star {
                    match (lc, rc) {
                        (EndClassLabel::Finite, c) | (c, EndClassLabel::Finite) => Some(c),
                        _ => None,
                    }
                } else if *finite_adhesion {
                    Some(EndClassLabel::Infinite)
                } else {
                    None
                }
            }
        }
    }
}

/// True when every leaf denotes a graph with at most one end.
pub fn is_terminal(ft: &FactorisationTree) -> bool {
    ft.leaves()
        .iter()
        .all(|l| matches!(l.ends, EndClassLabel::Finite | EndClassLabel::One))
}

/// Names of the infinite factors, as a set.
pub fn infinite_type_set(ft: &FactorisationTree) -> BTreeSet<String> {
    ft.leaves()
        .iter()
        .filter(|l| l.ends != EndClassLabel::Finite)
        .map(|l| l.name.clone())
        .collect()
}

fn one_ended_set(ft: &FactorisationTree) -> BTreeSet<String> {
    ft.leaves()
        .iter()
        .filter(|l| l.ends == EndClassLabel::One)
        .map(|l| l.name.clone())
        .collect()
}

/// Every label name must carry one end class across all given trees.
fn namespace_check(trees: &[&FactorisationTree]) -> Result<()> {
    let mut seen: BTreeMap<&str, EndClassLabel> = BTreeMap::new();
    for t in trees {
        for l in t.leaves() {
            match seen.get(l.name.as_str()) {
                Some(e) if *e != l.ends => {
                    return Err(Error::NamespaceConflict(l.name.clone()))
                }
                _ => {
                    seen.insert(&l.name, l.ends);
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FreeLikeCase {
    /// The free-product-like amalgam of the type set itself has
    /// infinitely many ends.
    #[serde(rename = "1")]
    ManyEnds,
    /// A single one-ended type; the classification carries an implicit
    /// finite companion factor.
    #[serde(rename = "2")]
    WithFiniteFactor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Classification {
    /// All factors finite: the graph lies in the quasi-isometry class
    /// of regular trees.
    TreeClass,
    /// Determined by the set of infinite factor types.
    FreeLike {
        types: BTreeSet<String>,
        case: FreeLikeCase,
    },
}

/// Normal form of a factorisation whose root graph has infinitely many
/// ends.
pub fn normal_form(ft: &FactorisationTree) -> Result<Classification> {
    namespace_check(&[ft])?;
    match ft.end_class() {
        Some(EndClassLabel::One) | Some(EndClassLabel::Two) | Some(EndClassLabel::Finite) => {
            return Err(Error::TooFewEnds(format!(
                "root end class {} admits no normal form",
                ft.end_class().unwrap()
            )));
        }
        Some(EndClassLabel::Infinite) => {}
        None => {
            return Err(Error::Unsupported(
                "root end count is not derivable from the supplied flags".into(),
            ));
        }
    }
    let types = infinite_type_set(ft);
    if types.is_empty() {
        if ft.all_nodes_nontrivial_nonstar() {
            return Ok(Classification::TreeClass);
        }
        return Err(Error::Unsupported(
            "all-finite factorisation with trivial or star nodes has no derived class".into(),
        ));
    }
    if types.len() >= 2 {
        return Ok(Classification::FreeLike {
            types,
            case: FreeLikeCase::ManyEnds,
        });
    }
    let lone = ft
        .leaves()
        .into_iter()
        .find(|l| l.ends != EndClassLabel::Finite)
        .expect("nonempty type set has an infinite leaf");
    let case = if lone.ends == EndClassLabel::One {
        FreeLikeCase::WithFiniteFactor
    } else {
        FreeLikeCase::ManyEnds
    };
    Ok(Classification::FreeLike { types, case })
}

/// A factorisation tree whose normal form is the given classification;
/// used to state idempotence.
pub fn rebuild(c: &Classification) -> FactorisationTree {
    match c {
        Classification::TreeClass => node(finite_leaf("fin"), finite_leaf("fin")),
        Classification::FreeLike { types, case } => {
            let mut leaves: Vec<FactorisationTree> = types
                .iter()
                .map(|n| {
                    leaf(
                        n.clone(),
                        match case {
                            FreeLikeCase::WithFiniteFactor => EndClassLabel::One,
                            FreeLikeCase::ManyEnds => EndClassLabel::Infinite,
                        },
                        true,
                    )
                })
                .collect();
            let mut t = leaves.pop().unwrap();
            if leaves.is_empty() {
                // a single type needs a companion to form an amalgamation
                t = node(t.clone(), t);
            }
            while let Some(l) = leaves.pop() {
                t = node(l, t);
            }
            t
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decision {
    #[serde(rename = "equivalent")]
    Equivalent,
    #[serde(rename = "not_equivalent")]
    NotEquivalent,
    #[serde(rename = "unknown")]
    Unknown,
}

/// Decide quasi-isometry of the two factored graphs, where the rules
/// only conclude in the directions the promises support.
pub fn decide_qi(ftg: &FactorisationTree, fth: &FactorisationTree) -> Result<Decision> {
    namespace_check(&[ftg, fth])?;
    if ftg == fth {
        return Ok(Decision::Equivalent);
    }
    let (eg, eh) = (ftg.end_class(), fth.end_class());
    if eg == Some(EndClassLabel::Infinite)
        && eh == Some(EndClassLabel::Infinite)
        && infinite_type_set(ftg) == infinite_type_set(fth)
    {
        return Ok(Decision::Equivalent);
    }
    if eg == Some(EndClassLabel::Two) && eh == Some(EndClassLabel::Two) {
        // both quasi-isometric to the double ray
        return Ok(Decision::Equivalent);
    }
    if is_terminal(ftg) && is_terminal(fth) && ftg.accessible() && fth.accessible() {
        if let (Some(eg), Some(eh)) = (eg, eh) {
            let same = eg == eh && one_ended_set(ftg) == one_ended_set(fth);
            return Ok(if same {
                Decision::Equivalent
            } else {
                Decision::NotEquivalent
            });
        }
    }
    Ok(Decision::Unknown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alpha_inf() -> FactorisationTree {
        leaf("alpha", EndClassLabel::Infinite, true)
    }

    fn alpha_one() -> FactorisationTree {
        leaf("alpha", EndClassLabel::One, true)
    }

    #[test]
    fn json_round_trip() {
        let ft = node(alpha_inf(), finite_leaf("q"));
        let s = ft.to_json();
        assert!(s.contains("\"node\"") && s.contains("\"leaf\""));
        assert_eq!(FactorisationTree::from_json(&s).unwrap(), ft);
        let j: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(j["node"]["left"]["leaf"]["ends"], "inf");
    }

    #[test]
    fn terminal_and_type_sets() {
        let t = node(finite_leaf("a"), alpha_one());
        assert!(is_terminal(&t));
        assert!(!is_terminal(&node(finite_leaf("a"), alpha_inf())));
        assert_eq!(
            infinite_type_set(&node(alpha_inf(), node(alpha_inf(), finite_leaf("f")))),
            BTreeSet::from(["alpha".to_string()])
        );
        assert!(infinite_type_set(&node(finite_leaf("a"), finite_leaf("b"))).is_empty());
    }

    #[test]
    fn normal_forms() {
        assert_eq!(
            normal_form(&node(finite_leaf("a"), finite_leaf("b"))).unwrap(),
            Classification::TreeClass
        );
        let c = normal_form(&node(alpha_one(), alpha_one())).unwrap();
        assert_eq!(
            c,
            Classification::FreeLike {
                types: BTreeSet::from(["alpha".to_string()]),
                case: FreeLikeCase::WithFiniteFactor
            }
        );
        let c = normal_form(&node(alpha_inf(), node(leaf("beta", EndClassLabel::Infinite, true), finite_leaf("f")))).unwrap();
        assert_eq!(
            c,
            Classification::FreeLike {
                types: BTreeSet::from(["alpha".to_string(), "beta".to_string()]),
                case: FreeLikeCase::ManyEnds
            }
        );
        // one- or two-ended roots admit no normal form
        assert!(matches!(
            normal_form(&alpha_one()),
            Err(Error::TooFewEnds(_))
        ));
        assert!(matches!(
            normal_form(&leaf("d", EndClassLabel::Two, true)),
            Err(Error::TooFewEnds(_))
        ));
    }

    #[test]
    fn decide_examples() {
        // same infinite type set, both infinitely many ends
        let g = node(alpha_inf(), node(alpha_inf(), finite_leaf("f")));
        let h = node(alpha_inf(), finite_leaf("g"));
        assert_eq!(decide_qi(&g, &h).unwrap(), Decision::Equivalent);
        // identical single-leaf trees
        assert_eq!(
            decide_qi(&alpha_one(), &alpha_one()).unwrap(),
            Decision::Equivalent
        );
        // terminal + accessible with differing one-ended sets
        let g = node(alpha_one(), leaf("beta", EndClassLabel::One, true));
        let h = node(alpha_one(), finite_leaf("f"));
        assert_eq!(decide_qi(&g, &h).unwrap(), Decision::NotEquivalent);
        // a tree factors into finite graphs, but the single-leaf tree is
        // its own trivial factorisation: sets differ yet nothing follows
        let g = node(finite_leaf("a"), finite_leaf("b"));
        let h = leaf("T", EndClassLabel::Infinite, true);
        assert_eq!(decide_qi(&g, &h).unwrap(), Decision::Unknown);
    }

    #[test]
    fn namespace_conflicts_rejected() {
        let g = node(alpha_one(), finite_leaf("f"));
        let h = node(alpha_inf(), finite_leaf("f"));
        assert!(matches!(
            decide_qi(&g, &h),
            Err(Error::NamespaceConflict(_))
        ));
        assert!(matches!(
            normal_form(&node(alpha_one(), alpha_inf())),
            Err(Error::NamespaceConflict(_))
        ));
    }

    #[test]
    fn star_nodes_suppress_absorption() {
        // one-ended graph star-amalgamated with a finite graph keeps one end
        let t = node_with(alpha_one(), finite_leaf("f"), true, true, true);
        assert_eq!(t.end_class(), Some(EndClassLabel::One));
        assert!(matches!(normal_form(&t), Err(Error::TooFewEnds(_))));
    }

    // --- randomized harness -------------------------------------------

    fn random_tree(rng: &mut ChaCha8Rng, depth: u32) -> FactorisationTree {
        if depth == 0 || rng.gen_bool(0.4) {
            let names = ["alpha", "beta", "gamma", "fin1", "fin2"];
            let name = names[rng.gen_range(0..names.len())];
            let ends = if name.starts_with("fin") {
                EndClassLabel::Finite
            } else {
                match name {
                    "alpha" => EndClassLabel::One,
                    "beta" => EndClassLabel::Infinite,
                    _ => EndClassLabel::One,
                }
            };
            leaf(name, ends, rng.gen_bool(0.8))
        } else {
            let l = random_tree(rng, depth - 1);
            let r = random_tree(rng, depth - 1);
            node_with(
                l,
                r,
                rng.gen_bool(0.9),
                rng.gen_bool(0.9),
                rng.gen_bool(0.1),
            )
        }
    }

    #[test]
    fn randomized_invariants_hold() {
        let start = std::time::Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..10_000 {
            let g = random_tree(&mut rng, 3);
            let h = random_tree(&mut rng, 3);

            // symmetry + reflexivity
            assert_eq!(decide_qi(&g, &h).unwrap(), decide_qi(&h, &g).unwrap());
            assert_eq!(decide_qi(&g, &g).unwrap(), Decision::Equivalent);

            // soundness guard: non-terminal with differing type sets is
            // never declared not_equivalent
            if (!is_terminal(&g) || !is_terminal(&h))
                && infinite_type_set(&g) != infinite_type_set(&h)
            {
                assert_ne!(decide_qi(&g, &h).unwrap(), Decision::NotEquivalent);
            }

            // idempotence through rebuild
            if let Ok(c) = normal_form(&g) {
                assert_eq!(normal_form(&rebuild(&c)).unwrap(), c);
            }

            // finite-leaf insertion under a nontrivial non-star root
            if matches!(
                &g,
                FactorisationTree::Node {
                    nontrivial: true,
                    star: false,
                    finite_adhesion: true,
                    ..
                }
            ) && !infinite_type_set(&g).is_empty()
            {
                let inserted = node(g.clone(), finite_leaf("pad"));
                match (normal_form(&g), normal_form(&inserted)) {
                    (Ok(a), Ok(b)) => assert_eq!(a, b),
                    (Err(_), _) => {}
                    (Ok(a), Err(e)) => panic!("insertion broke normal form {a:?}: {e}"),
                }
            }

            // duplication of an infinite leaf label within an amalgam
            // already known to have infinitely many ends
            if let Some(name) = infinite_type_set(&g).iter().next().cloned() {
                let lbl = g
                    .leaves()
                    .into_iter()
                    .find(|l| l.name == name)
                    .unwrap()
                    .clone();
                let dup = node(g.clone(), FactorisationTree::Leaf(lbl));
                assert_eq!(infinite_type_set(&dup), infinite_type_set(&g));
                if g.end_class() == Some(EndClassLabel::Infinite) {
                    assert_eq!(decide_qi(&dup, &h).unwrap(), decide_qi(&g, &h).unwrap());
                }
            }
        }
        assert!(
            start.elapsed().as_secs() < 60,
            "harness exceeded its time budget"
        );
    }
}
