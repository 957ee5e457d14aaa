//! Batch front end: build amalgams from presentation documents, export
//! metric balls, verify quasi-isometry claims, estimate end counts and
//! run the symbolic calculus.
//!
//! Exit codes: 0 success or pass; 1 a checked property failed (witness
//! artifact emitted); 2 malformed input or exhausted budget (error JSON
//! on stderr).

use amalgo::amalgam::{contract, graph_from_json, AmalgamSpec};
use amalgo::calculus::{decide_qi, normal_form, FactorisationTree};
use amalgo::ends::end_count_estimate;
use amalgo::graphcore::{ball, exact_distance_with, BallView, GraphHandle, VertexId};
use amalgo::qimaps::{
    absorb_finite_factor, adhesion_normalize, cubic_tree_map_with, psi_map_with,
    tree_collapse_map, tree_factorisation_map_with, FactorisationInstance, QiConstants, QiMap,
    Rational,
};
use amalgo::qiverify::{check_claim_reports, DistortionReport, Verdict};
use amalgo::{par, Budget, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "amalgo", version, about = "tree amalgamations and quasi-isometry checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Dot,
    Edgelist,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MapKind {
    Psi,
    Collapse,
    Cubic,
    Absorb,
    Normalize,
    Treefact,
}

#[derive(Args, Clone)]
struct Common {
    /// Radii, comma separated and strictly increasing
    #[arg(short = 'r', long = "radii", value_delimiter = ',', default_value = "4")]
    radii: Vec<u64>,
    #[arg(long, default_value_t = 1_000_000)]
    budget_vertices: usize,
    #[arg(long, default_value_t = 10_000_000)]
    budget_pairs: u64,
    /// Write the artifact here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker count for verification (0 = default pool)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl Common {
    fn budget(&self) -> Budget {
        Budget {
            vertices: self.budget_vertices,
            pairs: self.budget_pairs,
            ..Budget::default()
        }
    }

    fn max_radius(&self) -> u64 {
        self.radii.iter().copied().max().unwrap_or(4)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Contract a presentation and export a metric ball of the amalgam
    Build {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Export a metric ball of a graph
    Ball {
        graph: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Exact distance between two vertices (within twice the largest radius)
    Dist {
        graph: PathBuf,
        u: String,
        v: String,
        #[command(flatten)]
        common: Common,
    },
    /// Construct a named quasi-isometry and check its claimed constants
    Verify {
        input: PathBuf,
        #[arg(long = "map", value_enum)]
        map: MapKind,
        /// Override the claimed multiplicative constant
        #[arg(long)]
        claim_gamma: Option<i64>,
        /// Override the claimed additive constant
        #[arg(long)]
        claim_c: Option<i64>,
        /// Override the claimed density constant
        #[arg(long)]
        claim_density: Option<i64>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the end count of a graph
    Ends {
        graph: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Symbolic factorisation-tree calculus
    Calc {
        #[command(subcommand)]
        cmd: CalcCmd,
    },
}

#[derive(Subcommand)]
enum CalcCmd {
    /// Decide quasi-isometry of two factored graphs
    Decide {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Normal form of a factorisation with infinitely many ends
    #[command(name = "normal-form")]
    NormalForm {
        a: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&error_json(&e)).unwrap());
            2
        }
    };
    std::process::exit(code);
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::UnknownVertex(..) => "unknown_vertex",
        Error::VertexBudget { .. } => "vertex_budget",
        Error::PairBudget(..) => "pair_budget",
        Error::IdentificationBudget(..) => "identification_budget",
        Error::DisconnectedWindow(..) => "disconnected_window",
        Error::FactorNotFinite(..) => "factor_not_finite",
        Error::MissingBase(..) => "missing_base",
        Error::NotATree(..) => "not_a_tree",
        Error::TooFewEnds(..) => "too_few_ends",
        Error::EndpointMismatch(..) => "endpoint_mismatch",
        Error::NotMultiEnded(..) => "not_multi_ended",
        Error::AdhesionUnreachable(..) => "adhesion_unreachable",
        Error::Presentation(..) => "presentation",
        Error::Schema(..) => "schema",
        Error::NamespaceConflict(..) => "namespace_conflict",
        Error::Unsupported(..) => "unsupported",
    }
}

fn error_json(e: &Error) -> Value {
    json!({
        "schema": amalgo::SCHEMA,
        "error": { "kind": error_kind(e), "message": e.to_string() },
    })
}

fn read_json(path: &Path) -> Result<Value, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<AmalgamSpec, Error> {
    AmalgamSpec::from_json(&read_json(path)?)
}

fn load_graph(path: &Path) -> Result<GraphHandle, Error> {
    graph_from_json(&read_json(path)?)
}

fn load_tree(path: &Path) -> Result<FactorisationTree, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
    FactorisationTree::from_json(&text)
}

fn emit(common: &Common, artifact: &str) -> Result<(), Error> {
    match &common.out {
        Some(p) => std::fs::write(p, artifact)
            .map_err(|e| Error::Schema(format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{artifact}");
            Ok(())
        }
    }
}

fn render_ball(name: &str, bv: &BallView, format: Format) -> String {
    match format {
        Format::Dot => bv.dot(),
        Format::Edgelist => bv.edge_list(),
        Format::Json => {
            let vertices: Vec<&str> = bv.vertices.iter().map(|v| v.as_str()).collect();
            let mut edges = Vec::new();
            for (i, row) in bv.adj.iter().enumerate() {
                for &j in row {
                    if (j as usize) > i {
                        edges.push(vec![
                            bv.vertices[i].as_str().to_string(),
                            bv.vertices[j as usize].as_str().to_string(),
                        ]);
                    }
                }
            }
            let doc = json!({
                "schema": amalgo::SCHEMA,
                "graph": name,
                "center": bv.center.as_str(),
                "radius": bv.radius,
                "vertices": vertices,
                "edges": edges,
            });
            serde_json::to_string_pretty(&doc).unwrap()
        }
    }
}

fn rat_str(r: &Rational) -> String {
    r.to_string()
}

fn report_doc(m: &QiMap, verdict: &Verdict, reports: &[DistortionReport]) -> Value {
    json!({
        "schema": amalgo::SCHEMA,
        "construction": m.construction,
        "source": m.source.name(),
        "target": m.target.name(),
        "claimed": {
            "gamma": rat_str(&m.claimed.gamma),
            "c": rat_str(&m.claimed.c),
            "density_c": rat_str(&m.claimed.density_c),
        },
        "verdict": if verdict.passed() { "pass" } else { "fail" },
        "witness": match verdict {
            Verdict::Pass => Value::Null,
            Verdict::Fail(w) => serde_json::to_value(w).unwrap(),
        },
        "reports": serde_json::to_value(reports).unwrap(),
    })
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.cmd {
        Cmd::Build { spec, common } => {
            let spec = load_spec(&spec)?;
            let g = contract(&spec);
            let bv = ball(&g, &g.origin(), common.max_radius(), &common.budget())?;
            emit(&common, &render_ball(&g.name(), &bv, common.format))?;
            Ok(0)
        }
        Cmd::Ball { graph, common } => {
            let g = load_graph(&graph)?;
            let bv = ball(&g, &g.origin(), common.max_radius(), &common.budget())?;
            emit(&common, &render_ball(&g.name(), &bv, common.format))?;
            Ok(0)
        }
        Cmd::Dist {
            graph,
            u,
            v,
            common,
        } => {
            let g = load_graph(&graph)?;
            let (u, v) = (VertexId::new(u.as_str()), VertexId::new(v.as_str()));
            let d = exact_distance_with(&g, &u, &v, common.max_radius(), &common.budget())?;
            let doc = json!({
                "schema": amalgo::SCHEMA,
                "graph": g.name(),
                "u": u.as_str(),
                "v": v.as_str(),
                "distance": d,
            });
            emit(&common, &serde_json::to_string_pretty(&doc).unwrap())?;
            Ok(0)
        }
        Cmd::Verify {
            input,
            map,
            claim_gamma,
            claim_c,
            claim_density,
            common,
        } => {
            let budget = common.budget();
            let mut m = match map {
                MapKind::Psi => psi_map_with(&load_spec(&input)?, common.max_radius())?,
                MapKind::Collapse => tree_collapse_map(&load_spec(&input)?)?,
                MapKind::Cubic => {
                    cubic_tree_map_with(&load_graph(&input)?, common.max_radius(), 12, &budget)?
                }
                MapKind::Absorb => absorb_finite_factor(&load_spec(&input)?)?,
                MapKind::Normalize => adhesion_normalize(&load_spec(&input)?)?.forward,
                MapKind::Treefact => {
                    let spec = load_spec(&input)?;
                    let fi = FactorisationInstance::node(
                        spec.clone(),
                        FactorisationInstance::leaf(spec.factor(1).clone()),
                        FactorisationInstance::leaf(spec.factor(2).clone()),
                    );
                    tree_factorisation_map_with(&fi, &budget)?
                }
            };
            if claim_gamma.is_some() || claim_c.is_some() || claim_density.is_some() {
                let old = m.claimed;
                let pick = |o: Option<i64>, d: Rational| o.map(Rational::from_integer).unwrap_or(d);
                m = m.with_claim(QiConstants::new(
                    pick(claim_gamma, old.gamma),
                    pick(claim_c, old.c),
                    pick(claim_density, old.density_c),
                ));
            }
            let (verdict, reports) =
                par::with_jobs(common.jobs, || check_claim_reports(&m, &common.radii, &budget))?;
            let doc = report_doc(&m, &verdict, &reports);
            emit(&common, &serde_json::to_string_pretty(&doc).unwrap())?;
            Ok(if verdict.passed() { 0 } else { 1 })
        }
        Cmd::Ends { graph, common } => {
            let g = load_graph(&graph)?;
            let r = common.radii[0];
            let est = end_count_estimate(&g, r, 3 * r, &common.budget())?;
            let doc = json!({
                "schema": amalgo::SCHEMA,
                "graph": g.name(),
                "estimate": serde_json::to_value(&est).unwrap(),
                "note": "finite-window estimate; class promoted by three-radius stability",
            });
            emit(&common, &serde_json::to_string_pretty(&doc).unwrap())?;
            Ok(0)
        }
        Cmd::Calc { cmd } => match cmd {
            CalcCmd::Decide { a, b, common } => {
                let (fa, fb) = (load_tree(&a)?, load_tree(&b)?);
                let d = decide_qi(&fa, &fb)?;
                let doc = json!({
                    "schema": amalgo::SCHEMA,
                    "decision": serde_json::to_value(d).unwrap(),
                });
                emit(&common, &serde_json::to_string_pretty(&doc).unwrap())?;
                Ok(0)
            }
            CalcCmd::NormalForm { a, common } => {
                let fa = load_tree(&a)?;
                let c = normal_form(&fa)?;
                let doc = json!({
                    "schema": amalgo::SCHEMA,
                    "classification": serde_json::to_value(&c).unwrap(),
                });
                emit(&common, &serde_json::to_string_pretty(&doc).unwrap())?;
                Ok(0)
            }
        },
    }
}
