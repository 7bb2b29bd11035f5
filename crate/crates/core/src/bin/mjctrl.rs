use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mjctrl::intervention::{self, Method, Norm};
use mjctrl::model::{self, Model};
use mjctrl::report::{self, AnalysisReport, MatrixReport, Status};
use mjctrl::system::{self, ControlPolicy, RandomVector};
use mjctrl::{bsrds, fixtures, Error, Tolerances, Vector};

#[derive(Parser)]
#[command(name = "mjctrl", version, about = "Controllability analysis for linear systems with Markov trend and multiplicative noise")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every applicable engine and print a full report.
    Analyze(Common),
    /// Path-space operator decisions and the controllability form.
    Oracle(Common),
    /// Riccati scheme along the ε grid.
    Bsrds(Common),
    /// Deterministic (noise-free) Gramian.
    Gramian(Common),
    /// Condition N1, Kalman ranks and the Gramian.
    Invariance(Common),
    /// Minimal intervention set among the model's scenarios.
    Intervene {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "exhaustive")]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "spec")]
        norm: NormArg,
    },
    /// Simulate the forward system from x0 under a policy.
    Simulate(Common),
    /// List bundled models, or print one.
    Fixtures { name: Option<String> },
}

#[derive(Args, Clone)]
struct Common {
    /// Model file, or @name for a bundled model.
    model: String,
    /// Comma-separated, strictly decreasing ε values.
    #[arg(long, value_delimiter = ',')]
    eps_seq: Option<Vec<f64>>,
    #[arg(long)]
    tol_rank: Option<f64>,
    #[arg(long)]
    tol_residual: Option<f64>,
    #[arg(long)]
    tol_definiteness: Option<f64>,
    /// Override the model horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Use B(I) built from these 1-based scenarios instead of the model's B.
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<usize>>,
    /// Dual initial value for the controllability norm.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    y0: Option<Vec<String>>,
    /// Initial state for simulation.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<String>>,
    /// JSON policy for simulation: {"default": [..], "nodes": {"1-2": [..]}}.
    #[arg(long)]
    policy_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Also write the machine-readable output here.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Greedy,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Rank,
    Spec,
}

#[derive(Debug)]
enum Failure {
    Engine(Error),
    Inconsistent,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. }
        | Error::Parse { .. }
        | Error::Dimension(_)
        | Error::SingularCoefficient { .. }
        | Error::UnsupportedScheme(_)
        | Error::Io(_) => 2,
        Error::Capacity { .. } => 3,
        Error::Numerical(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Inconsistent) => ExitCode::from(4),
        Err(Failure::Engine(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

struct Loaded {
    model: Model,
    tol: Tolerances,
}

fn load(c: &Common) -> Result<Loaded, Error> {
    let mut model = match c.model.strip_prefix('@') {
        Some(name) => fixtures::load(name)?,
        None => model::load_model(&PathBuf::from(&c.model))?,
    };
    let mut tol = model.tolerances.clone();
    if let Some(e) = &c.eps_seq {
        tol.eps_seq = e.clone();
    }
    if let Some(v) = c.tol_rank {
        tol.rank = v;
    }
    if let Some(v) = c.tol_residual {
        tol.residual = v;
    }
    if let Some(v) = c.tol_definiteness {
        tol.definiteness = v;
    }
    tol.validate()?;
    if let Some(n) = c.horizon {
        model.system = model.system.with_horizon(n);
    }
    if let Some(sub) = &c.subset {
        let set = model
            .scenario_set()?
            .ok_or_else(|| Error::validation("subset", "the model has no scenarios"))?;
        if sub.is_empty() || sub.iter().any(|&i| i == 0 || i > set.len()) {
            return Err(Error::validation("subset", format!("indices must lie in 1..={}", set.len())));
        }
        let idx: Vec<usize> = sub.iter().map(|i| i - 1).collect();
        model.system = model.system.with_b(set.matrix(&idx))?;
    }
    Ok(Loaded { model, tol })
}

fn parse_vec(raw: &[String], field: &str, m: usize) -> Result<Vector, Error> {
    let v = raw
        .iter()
        .map(|s| model::parse_number(s).map_err(|e| Error::validation(field, e)))
        .collect::<Result<Vec<_>, _>>()?;
    if v.len() != m {
        return Err(Error::validation(field, format!("expected {m} entries, got {}", v.len())));
    }
    Ok(Vector::from_vec(v))
}

fn emit<T: Serialize>(c: &Common, value: &T, table: impl FnOnce() -> String) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    if let Some(path) = &c.json_out {
        std::fs::write(path, format!("{json}\n"))?;
    }
    match c.format {
        Format::Json => println!("{json}"),
        Format::Table => print!("{}", table()),
        Format::Both => {
            println!("{json}");
            print!("{}", table());
        }
    }
    Ok(())
}

fn aligned(rows: &[(String, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<w$}  {v}\n")).collect()
}

fn matrix_rows(label: &str, m: &MatrixReport) -> Vec<(String, String)> {
    m.display
        .iter()
        .enumerate()
        .map(|(i, l)| (if i == 0 { label.to_string() } else { String::new() }, l.clone()))
        .collect()
}

#[derive(Serialize)]
struct BsrdsOutput {
    #[serde(flatten)]
    metric: report::MetricSection,
    y0: Option<Vec<f64>>,
    ctrl_norm_sq: Option<f64>,
}

#[derive(Serialize)]
struct OracleOutput {
    #[serde(flatten)]
    oracle: report::OracleSection,
    y0: Option<Vec<f64>>,
    ctrl_norm_sq: Option<f64>,
}

#[derive(Deserialize, Default)]
struct PolicyFile {
    #[serde(default)]
    default: Option<Vec<f64>>,
    /// Keys are 1-based trend paths L_0..L_n joined by '-'.
    #[serde(default)]
    nodes: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize)]
struct LeafOutcome {
    path: Vec<usize>,
    probability: f64,
    state: Vec<f64>,
}

#[derive(Serialize)]
struct SimulationOutput {
    x0: Vec<f64>,
    horizon: usize,
    mean_terminal_state: Vec<f64>,
    expected_square_norm: f64,
    control_energy: f64,
    leaves: Vec<LeafOutcome>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Fixtures { name } => {
            match name {
                None => {
                    for n in fixtures::names() {
                        println!("@{n}");
                    }
                }
                Some(n) => {
                    let n = n.trim_start_matches('@');
                    let src = fixtures::source(n)
                        .ok_or_else(|| Error::validation("fixture", format!("unknown fixture {n:?}")))?;
                    print!("{src}");
                }
            }
            Ok(())
        }
        Cmd::Analyze(c) => {
            let l = load(&c)?;
            let r: AnalysisReport = report::analyze(&l.model, &l.tol)?;
            emit(&c, &r, || r.table())?;
            if r.status == Status::Inconsistent {
                for i in &r.inconsistencies {
                    eprintln!("inconsistent: {i}");
                }
                return Err(Failure::Inconsistent);
            }
            Ok(())
        }
        Cmd::Bsrds(c) => {
            let l = load(&c)?;
            let sys = &l.model.system;
            let res = bsrds::metric_limit(sys, &l.tol)?;
            let y0 = c.y0.as_ref().map(|v| parse_vec(v, "y0", sys.m())).transpose()?;
            let val = y0.as_ref().map(|y| (y.transpose() * &res.p0_limit * y)[0]);
            let out = BsrdsOutput {
                metric: report::MetricSection::new(&res),
                y0: y0.map(|y| y.as_slice().to_vec()),
                ctrl_norm_sq: val,
            };
            emit(&c, &out, || {
                let mut rows = vec![("scheme".to_string(), out.metric.scheme.clone())];
                for e in &out.metric.eps_trace {
                    rows.push((format!("eps {:.0e}", e.epsilon), format!("lambda_min {:.10}", e.lambda_min)));
                }
                rows.extend(matrix_rows("P0 limit", &out.metric.p0_limit));
                rows.push(("rank".into(), out.metric.rank.to_string()));
                rows.push(("lambda_min".into(), format!("{:.7}", out.metric.lambda_min)));
                rows.push(("converged".into(), out.metric.converged.to_string()));
                let nc = out.metric.null_controllable.map_or("abstain".into(), |b| b.to_string());
                rows.push(("null-controllable".into(), nc));
                if let Some(v) = out.ctrl_norm_sq {
                    rows.push(("<P0 y0, y0>".into(), format!("{v:.10}")));
                }
                aligned(&rows)
            })?;
            Ok(())
        }
        Cmd::Oracle(c) => {
            let l = load(&c)?;
            let sys = &l.model.system;
            let sec = report::oracle_section(sys, &l.tol)?;
            let y0 = c.y0.as_ref().map(|v| parse_vec(v, "y0", sys.m())).transpose()?;
            let val = y0.as_ref().map(|y| (y.transpose() * sec.ctrl_form.to_mat() * y)[0]);
            let out = OracleOutput { oracle: sec, y0: y0.map(|y| y.as_slice().to_vec()), ctrl_norm_sq: val };
            emit(&c, &out, || {
                let o = &out.oracle;
                let mut rows = vec![
                    ("null-controllable".to_string(), o.null_controllable.to_string()),
                    ("max relative residual".into(), format!("{:.3e}", o.max_relative_residual)),
                    ("margin".into(), format!("{:.3e}", o.margin)),
                    ("approx-controllable".into(), o.approx_controllable.to_string()),
                    ("rank R1 / rows".into(), format!("{} / {}", o.r1_rank, o.r1_rows)),
                    ("dual kernel dim".into(), o.dual_kernel.kernel_dim.to_string()),
                ];
                rows.extend(matrix_rows("ctrl form", &o.ctrl_form));
                if let Some(v) = out.ctrl_norm_sq {
                    rows.push(("ctrl norm sq".into(), format!("{v:.10}")));
                }
                aligned(&rows)
            })?;
            Ok(())
        }
        Cmd::Gramian(c) => {
            let l = load(&c)?;
            let g = report::gramian_only(&l.model.system, c.horizon, &l.tol)?;
            emit(&c, &g, || {
                let mut rows = matrix_rows(&format!("p_0^{}", g.horizon), &g.matrix);
                rows.push(("rank".into(), g.rank.to_string()));
                rows.push(("verdict".into(), if g.full_rank { "full rank" } else { "singular" }.into()));
                aligned(&rows)
            })?;
            Ok(())
        }
        Cmd::Invariance(c) => {
            let l = load(&c)?;
            let sec = report::invariance_section(&l.model.system, c.horizon, &l.tol)?;
            emit(&c, &sec, || {
                let mut rows = Vec::new();
                if let Some(n1) = &sec.n1 {
                    rows.push(("condition N1".to_string(), n1.holds.to_string()));
                    let dims: Vec<String> = n1.chain.iter().map(|s| s.dim.to_string()).collect();
                    rows.push(("chain dims V^0..V^N".into(), dims.join(" ")));
                }
                for k in &sec.kalman {
                    rows.push((format!("kalman rank {}", k.label), k.rank.to_string()));
                }
                if let Some(g) = &sec.gramian {
                    rows.extend(matrix_rows(&format!("p_0^{}", g.horizon), &g.matrix));
                    rows.push(("gramian".into(), if g.full_rank { "full rank" } else { "singular" }.into()));
                }
                for s in &sec.skipped {
                    rows.push(("skipped".into(), s.clone()));
                }
                aligned(&rows)
            })?;
            Ok(())
        }
        Cmd::Intervene { common: c, method, norm } => {
            let l = load(&c)?;
            let set = l
                .model
                .scenario_set()?
                .ok_or_else(|| Error::validation("scenarios", "the model lists no scenarios"))?;
            let rep = match method {
                MethodArg::Greedy => intervention::greedy_min_rank(&set, &l.tol)?,
                MethodArg::Exhaustive => {
                    let n = match norm {
                        NormArg::Rank => Norm::Rank,
                        NormArg::Spec => Norm::Spec,
                    };
                    intervention::exhaustive_min(&set, n, &l.tol)?
                }
            };
            emit(&c, &rep, || {
                let sel = rep.selected.as_ref().map_or("none".to_string(), |s| {
                    format!("{{{}}}", s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","))
                });
                let mut rows = vec![
                    ("method".to_string(), if rep.method == Method::Greedy { "greedy" } else { "exhaustive" }.into()),
                    ("selected".into(), sel),
                    ("k".into(), rep.k.map_or("-".into(), |k| k.to_string())),
                    ("best rank / m".into(), format!("{} / {}", rep.best_rank, rep.m)),
                ];
                for e in &rep.evaluated {
                    let s: Vec<String> = e.subset.iter().map(|i| i.to_string()).collect();
                    rows.push((format!("  {{{}}}", s.join(",")), format!("rank {} spec {:.7}", e.rank, e.spec)));
                }
                aligned(&rows)
            })?;
            Ok(())
        }
        Cmd::Simulate(c) => {
            let l = load(&c)?;
            let sys = &l.model.system;
            let x0 = parse_vec(
                c.x0.as_ref().ok_or_else(|| Error::validation("x0", "simulate needs --x0"))?,
                "x0",
                sys.m(),
            )?;
            let tree = sys.tree_with_cap(l.tol.node_cap)?;
            let pf: PolicyFile = match &c.policy_file {
                None => PolicyFile::default(),
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p).map_err(Error::from)?)
                    .map_err(|e| Error::Parse { line: Some(e.line()), message: e.to_string() })?,
            };
            let d = sys.d();
            let check = |v: &Vec<f64>, what: &str| -> Result<Vector, Error> {
                if v.len() != d {
                    return Err(Error::validation(what, format!("expected {d} entries, got {}", v.len())));
                }
                Ok(Vector::from_vec(v.clone()))
            };
            let default = pf.default.as_ref().map(|v| check(v, "policy.default")).transpose()?;
            let mut by_path = BTreeMap::new();
            for (k, v) in &pf.nodes {
                by_path.insert(k.clone(), check(v, &format!("policy.nodes[{k}]"))?);
            }
            let policy = ControlPolicy::from_fn(&tree, |id| {
                let key = tree.prefix(id).iter().map(|s| (s + 1).to_string()).collect::<Vec<_>>().join("-");
                by_path.get(&key).cloned().or_else(|| default.clone()).unwrap_or_else(|| Vector::zeros(d))
            });
            let xs = system::simulate_x(sys, &x0, &policy, &tree)?;
            let leaves = tree.leaves();
            let terminal = RandomVector { values: leaves.iter().map(|&id| xs[id].clone()).collect() };
            let zero = RandomVector::zeros(&tree, sys.m());
            let energy = system::expected_square_distance(&terminal, &zero, &tree)?;
            let mean = system::expectation(&xs, &tree, tree.horizon());
            let control_energy: f64 = (0..tree.horizon())
                .flat_map(|n| tree.level(n).iter().copied())
                .map(|id| tree.node(id).prob * policy.u[id].norm_squared())
                .sum();
            let out = SimulationOutput {
                x0: x0.as_slice().to_vec(),
                horizon: tree.horizon(),
                mean_terminal_state: mean.as_slice().to_vec(),
                expected_square_norm: energy,
                control_energy,
                leaves: leaves
                    .iter()
                    .map(|&id| LeafOutcome {
                        path: tree.prefix(id).iter().map(|s| s + 1).collect(),
                        probability: tree.node(id).prob,
                        state: xs[id].as_slice().to_vec(),
                    })
                    .collect(),
            };
            emit(&c, &out, || {
                let mut rows = vec![
                    ("E|X_N|^2".to_string(), format!("{:.10}", out.expected_square_norm)),
                    ("E[X_N]".into(), format!("{:?}", out.mean_terminal_state)),
                    ("E sum |u|^2".into(), format!("{:.10}", out.control_energy)),
                ];
                for lf in &out.leaves {
                    let p: Vec<String> = lf.path.iter().map(|s| s.to_string()).collect();
                    rows.push((format!("path {}", p.join("-")), format!("p={:.6} x={:?}", lf.probability, lf.state)));
                }
                aligned(&rows)
            })?;
            Ok(())
        }
    }
}

