//! Analysis reports: every engine's output collected into one serializable tree.

use serde::{Deserialize, Serialize};

use crate::bsrds::{self, MetricResult};
use crate::error::{Error, Result};
use crate::intervention::{self, Engine, InterventionReport, Norm};
use crate::invariance::{self, GramianResult, KalmanEntry, N1Result};
use crate::linalg::{self, Mat};
use crate::model::Model;
use crate::pathspace::{self, DirectionCheck, DualKernelResult, ObservabilityConstant};
use crate::system::SwitchedSystem;
use crate::trend::TrendMode;
use crate::Tolerances;

/// Row-major matrix with a rounded mirror for reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub display: Vec<String>,
}

impl MatrixReport {
    pub fn new(m: &Mat) -> Self {
        let display = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| format!("{:>12.6}", clean(m[(i, j)]))).collect::<Vec<_>>().join(" "))
            .collect();
        Self { rows: m.nrows(), cols: m.ncols(), data: linalg::to_row_major(m), display }
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_row_slice(self.rows, self.cols, &self.data)
    }
}

fn clean(x: f64) -> f64 {
    if x == 0.0 { 0.0 } else { x }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Inconsistent,
}

/// A yes/no answer tagged with the engine and tolerance that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub engine: Engine,
    /// Method within the engine.
    pub method: String,
    /// `None` when the engine abstains.
    pub value: Option<bool>,
    pub tolerance: f64,
    /// Signed distance to the decision threshold, when meaningful.
    pub margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankVerdict {
    pub engine: Engine,
    pub label: String,
    pub rank: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub null_controllable: Vec<Verdict>,
    pub approx_controllable: Vec<Verdict>,
    pub n1_necessary_condition: Option<Verdict>,
    pub kalman_rank: Vec<RankVerdict>,
    pub deterministic_gramian_rank: Option<RankVerdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub m: usize,
    pub d: usize,
    pub p: usize,
    pub horizon: usize,
    pub trend: TrendMode,
    pub paths: usize,
    pub c_is_zero: bool,
}

impl ModelSummary {
    pub fn new(name: &str, sys: &SwitchedSystem) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            m: sys.m(),
            d: sys.d(),
            p: sys.p(),
            horizon: sys.horizon,
            trend: sys.trend.mode(),
            paths: sys.tree()?.leaves().len(),
            c_is_zero: sys.c_is_zero(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsTraceReport {
    pub epsilon: f64,
    pub p0: MatrixReport,
    pub lambda_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSection {
    pub engine: Engine,
    pub scheme: String,
    pub p0_limit: MatrixReport,
    pub p0_per_state: Vec<MatrixReport>,
    pub eps_trace: Vec<EpsTraceReport>,
    pub converged: bool,
    pub rank: usize,
    pub lambda_min: f64,
    pub sqrt_lambda_min: f64,
    pub spec: f64,
    pub reference_scale: f64,
    pub rank_threshold: f64,
    pub definiteness_threshold: f64,
    pub null_controllable: Option<bool>,
}

impl MetricSection {
    pub fn new(r: &MetricResult) -> Self {
        Self {
            engine: Engine::Bsrds,
            scheme: r.scheme.name().to_string(),
            p0_limit: MatrixReport::new(&r.p0_limit),
            p0_per_state: r.p0_per_state.iter().map(MatrixReport::new).collect(),
            eps_trace: r
                .eps_trace
                .iter()
                .map(|e| EpsTraceReport {
                    epsilon: e.epsilon,
                    p0: MatrixReport::new(&e.p0),
                    lambda_min: linalg::lambda_min(&linalg::symmetrize(&e.p0)),
                })
                .collect(),
            converged: r.converged,
            rank: r.rank,
            lambda_min: r.lambda_min,
            sqrt_lambda_min: r.sqrt_lambda_min,
            spec: r.spec,
            reference_scale: r.reference_scale,
            rank_threshold: r.rank_threshold,
            definiteness_threshold: r.definiteness_threshold,
            null_controllable: r.null_controllable,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSection {
    pub engine: Engine,
    pub null_controllable: bool,
    pub max_relative_residual: f64,
    pub margin: f64,
    pub directions: Vec<DirectionCheck>,
    /// Basis direction with the largest residual, when not null-controllable.
    pub witness_direction: Option<usize>,
    pub approx_controllable: bool,
    pub r1_rank: usize,
    pub r1_rows: usize,
    pub dual_kernel: DualKernelResult,
    /// Controllability quadratic form at ε = 0.
    pub ctrl_form: MatrixReport,
    pub ctrl_form_rank: usize,
    pub ctrl_form_lambda_min: f64,
    pub observability: ObservabilityConstant,
}

pub fn oracle_section(sys: &SwitchedSystem, tol: &Tolerances) -> Result<OracleSection> {
    let tree = sys.tree_with_cap(tol.node_cap)?;
    let ops = pathspace::build_operators(sys, &tree, tol)?;
    let null = pathspace::decide_null_controllable(&ops, &tree, tol);
    let approx = pathspace::decide_approx_controllable(&ops, tol);
    let dual = pathspace::dual_kernel_test(sys, &tree, tol)?;
    let form = pathspace::ctrl_form(sys, &tree, 0.0, tol)?;
    let scale = linalg::spectral_norm(&form.reference);
    let obs = pathspace::observability_constant(sys, &tree, &form, tol)?;
    let witness = (!null.controllable).then(|| {
        null.directions
            .iter()
            .fold(&null.directions[0], |a, b| if b.relative_residual > a.relative_residual { b } else { a })
            .direction
    });
    Ok(OracleSection {
        engine: Engine::Oracle,
        null_controllable: null.controllable,
        max_relative_residual: null.max_relative_residual,
        margin: null.margin,
        directions: null.directions,
        witness_direction: witness,
        approx_controllable: approx,
        r1_rank: linalg::rank(&ops.r1, tol.rank),
        r1_rows: ops.r1.nrows(),
        dual_kernel: dual,
        ctrl_form_rank: if scale > 0.0 { linalg::rank_with_scale(&form.form, tol.rank, scale) } else { 0 },
        ctrl_form_lambda_min: linalg::lambda_min(&form.form),
        ctrl_form: MatrixReport::new(&form.form),
        observability: obs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceReport {
    pub dim: usize,
    pub basis: MatrixReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramianSection {
    pub engine: Engine,
    pub horizon: usize,
    pub matrix: MatrixReport,
    pub rank: usize,
    pub full_rank: bool,
    pub closed_form_gap: f64,
}

impl GramianSection {
    pub fn new(g: &GramianResult, horizon: usize) -> Self {
        Self {
            engine: Engine::Invariance,
            horizon,
            matrix: MatrixReport::new(&g.matrix),
            rank: g.rank,
            full_rank: g.full_rank,
            closed_form_gap: g.closed_form_gap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceSection {
    pub engine: Engine,
    pub n1: Option<N1Report>,
    pub kalman: Vec<KalmanEntry>,
    pub gramian: Option<GramianSection>,
    pub skipped: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct N1Report {
    pub holds: bool,
    pub horizon: usize,
    /// V^{k,N} for k = 0..=N.
    pub chain: Vec<SubspaceReport>,
}

impl N1Report {
    pub fn new(r: &N1Result) -> Self {
        Self {
            holds: r.holds,
            horizon: r.horizon,
            chain: r
                .chain
                .iter()
                .map(|s| SubspaceReport { dim: s.dim(), basis: MatrixReport::new(s.basis()) })
                .collect(),
        }
    }
}

pub fn invariance_section(sys: &SwitchedSystem, horizon: Option<usize>, tol: &Tolerances) -> Result<InvarianceSection> {
    let mut skipped = Vec::new();
    let n1 = match invariance::condition_n1(sys, Some(horizon.unwrap_or(sys.horizon)), tol.rank) {
        Ok(r) => Some(N1Report::new(&r)),
        Err(Error::UnsupportedScheme(msg)) => {
            skipped.push(msg);
            None
        }
        Err(e) => return Err(e),
    };
    let gramian = gramian_section(sys, horizon, tol, &mut skipped)?;
    Ok(InvarianceSection {
        engine: Engine::Invariance,
        n1,
        kalman: invariance::kalman_report(sys, tol.rank),
        gramian,
        skipped,
    })
}

fn gramian_section(
    sys: &SwitchedSystem,
    horizon: Option<usize>,
    tol: &Tolerances,
    skipped: &mut Vec<String>,
) -> Result<Option<GramianSection>> {
    let n = horizon.unwrap_or(sys.horizon);
    if !sys.a.is_nonrandom() {
        skipped.push("deterministic Gramian needs a non-random A".into());
        return Ok(None);
    }
    let g = invariance::system_gramian(sys, n, tol.rank)?;
    Ok(Some(GramianSection::new(&g, n)))
}

pub fn gramian_only(sys: &SwitchedSystem, horizon: Option<usize>, tol: &Tolerances) -> Result<GramianSection> {
    let mut skipped = Vec::new();
    gramian_section(sys, horizon, tol, &mut skipped)?
        .ok_or_else(|| Error::UnsupportedScheme(skipped.join("; ")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionSection {
    pub greedy: InterventionReport,
    pub exhaustive: Option<InterventionReport>,
    pub min_k_rank: Option<usize>,
    pub min_k_spec: Option<usize>,
    /// Minimal k by rank equals minimal k by spec.
    pub min_k_identity: Option<bool>,
    /// Greedy and exhaustive agree on k.
    pub greedy_matches_exhaustive: Option<bool>,
}

pub fn intervention_section(model: &Model, tol: &Tolerances) -> Result<Option<InterventionSection>> {
    let Some(set) = model.scenario_set()? else { return Ok(None) };
    let greedy = intervention::greedy_min_rank(&set, tol)?;
    if set.len() > intervention::EXHAUSTIVE_CAP {
        return Ok(Some(InterventionSection {
            greedy,
            exhaustive: None,
            min_k_rank: None,
            min_k_spec: None,
            min_k_identity: None,
            greedy_matches_exhaustive: None,
        }));
    }
    let exhaustive = intervention::exhaustive_min(&set, Norm::Spec, tol)?;
    let (kr, ks) = intervention::minimal_k_both(&set, tol)?;
    Ok(Some(InterventionSection {
        greedy_matches_exhaustive: Some(greedy.k == exhaustive.k),
        greedy,
        exhaustive: Some(exhaustive),
        min_k_rank: kr,
        min_k_spec: ks,
        min_k_identity: Some(kr == ks),
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub model: ModelSummary,
    pub status: Status,
    pub inconsistencies: Vec<String>,
    pub verdicts: Verdicts,
    pub metric: Option<MetricSection>,
    pub oracle: Option<OracleSection>,
    pub invariance: Option<InvarianceSection>,
    pub intervention: Option<InterventionSection>,
    pub notes: Vec<String>,
    pub tolerances: Tolerances,
}

/// Runs every applicable engine on the model.
pub fn analyze(model: &Model, tol: &Tolerances) -> Result<AnalysisReport> {
    tol.validate()?;
    let sys = &model.system;
    let mut notes = Vec::new();
    let mut verdicts = Verdicts::default();

    let metric = match bsrds::select_scheme(sys) {
        Ok(_) => Some(MetricSection::new(&bsrds::metric_limit(sys, tol)?)),
        Err(Error::UnsupportedScheme(msg)) => {
            notes.push(format!("bsrds skipped: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    if let Some(ms) = &metric {
        if !ms.converged {
            notes.push("bsrds: eps-trace did not stabilize, metric verdict withheld".into());
        }
        verdicts.null_controllable.push(Verdict {
            engine: Engine::Bsrds,
            method: format!("metric limit ({})", ms.scheme),
            value: ms.null_controllable,
            tolerance: tol.definiteness,
            margin: Some(ms.lambda_min - ms.definiteness_threshold),
        });
    }

    let oracle = if sys.horizon == 0 {
        notes.push("oracle skipped: horizon 0".into());
        None
    } else {
        Some(oracle_section(sys, tol)?)
    };
    if let Some(o) = &oracle {
        verdicts.null_controllable.push(Verdict {
            engine: Engine::Oracle,
            method: "range inclusion".into(),
            value: Some(o.null_controllable),
            tolerance: tol.residual,
            margin: Some(o.margin),
        });
        verdicts.null_controllable.push(Verdict {
            engine: Engine::Oracle,
            method: "dual kernel".into(),
            value: Some(o.dual_kernel.null_controllable),
            tolerance: tol.residual,
            margin: Some(tol.residual - o.dual_kernel.y0_on_kernel),
        });
        verdicts.approx_controllable.push(Verdict {
            engine: Engine::Oracle,
            method: "rank of R1".into(),
            value: Some(o.approx_controllable),
            tolerance: tol.rank,
            margin: None,
        });
        verdicts.approx_controllable.push(Verdict {
            engine: Engine::Oracle,
            method: "dual kernel".into(),
            value: Some(o.dual_kernel.approx_controllable),
            tolerance: tol.rank,
            margin: None,
        });
        if o.dual_kernel.conditional_mean_condition != o.dual_kernel.approx_controllable {
            notes.push(format!(
                "dual kernel: conditional-mean condition on the kernel is {} while approximate controllability is {}",
                o.dual_kernel.conditional_mean_condition, o.dual_kernel.approx_controllable
            ));
        }
    }

    let inv = invariance_section(sys, None, tol)?;
    notes.extend(inv.skipped.iter().map(|s| format!("invariance: {s}")));
    verdicts.n1_necessary_condition = inv.n1.as_ref().map(|n| Verdict {
        engine: Engine::Invariance,
        method: "condition N1".into(),
        value: Some(n.holds),
        tolerance: tol.rank,
        margin: None,
    });
    verdicts.kalman_rank = inv
        .kalman
        .iter()
        .map(|k| RankVerdict { engine: Engine::Invariance, label: k.label.clone(), rank: k.rank, tolerance: tol.rank })
        .collect();
    verdicts.deterministic_gramian_rank = inv.gramian.as_ref().map(|g| RankVerdict {
        engine: Engine::Invariance,
        label: format!("p_0^{}", g.horizon),
        rank: g.rank,
        tolerance: tol.rank,
    });

    let intervention = intervention_section(model, tol)?;

    let inconsistencies = consistency(sys, &verdicts, &inv, intervention.as_ref());
    Ok(AnalysisReport {
        model: ModelSummary::new(&model.name, sys)?,
        status: if inconsistencies.is_empty() { Status::Ok } else { Status::Inconsistent },
        inconsistencies,
        verdicts,
        metric,
        oracle,
        invariance: Some(inv),
        intervention,
        notes,
        tolerances: tol.clone(),
    })
}

fn consistency(
    sys: &SwitchedSystem,
    v: &Verdicts,
    inv: &InvarianceSection,
    intervention: Option<&InterventionSection>,
) -> Vec<String> {
    let mut out = Vec::new();
    let describe = |xs: &[Verdict]| {
        xs.iter()
            .filter_map(|x| x.value.map(|b| format!("{:?}/{}={b}", x.engine, x.method)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    for (name, list) in [("null_controllable", &v.null_controllable), ("approx_controllable", &v.approx_controllable)] {
        let vals: Vec<bool> = list.iter().filter_map(|x| x.value).collect();
        if vals.windows(2).any(|w| w[0] != w[1]) {
            out.push(format!("{name}: engines disagree ({})", describe(list)));
        }
    }
    let null = v.null_controllable.iter().find_map(|x| x.value);
    if let (Some(true), Some(n1)) = (null, v.n1_necessary_condition.as_ref().and_then(|x| x.value)) {
        if !n1 {
            out.push("null-controllable but the necessary condition N1 fails".into());
        }
    }
    if let (Some(g), Some(nc)) = (&inv.gramian, null) {
        if sys.c_is_zero() && g.horizon == sys.horizon && g.full_rank != nc {
            out.push(format!("without noise the Gramian criterion gives {} but engines give {nc}", g.full_rank));
        }
    }
    if let Some(iv) = intervention {
        if iv.min_k_identity == Some(false) {
            out.push(format!("intervention: minimal k by rank {:?} differs from minimal k by spec {:?}", iv.min_k_rank, iv.min_k_spec));
        }
    }
    out
}

impl AnalysisReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("serialization failed: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse { line: Some(e.line()), message: e.to_string() })
    }

    /// Aligned human-readable summary.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        let m = &self.model;
        rows.push(("model".into(), m.name.clone()));
        rows.push((
            "dimensions".into(),
            format!("m={} d={} p={} N={} paths={}", m.m, m.d, m.p, m.horizon, m.paths),
        ));
        rows.push(("status".into(), format!("{:?}", self.status).to_lowercase()));
        let show = |v: Option<bool>| v.map_or("abstain".to_string(), |b| b.to_string());
        for x in &self.verdicts.null_controllable {
            rows.push((format!("null-controllable [{:?}: {}]", x.engine, x.method).to_lowercase(), show(x.value)));
        }
        for x in &self.verdicts.approx_controllable {
            rows.push((format!("approx-controllable [{:?}: {}]", x.engine, x.method).to_lowercase(), show(x.value)));
        }
        if let Some(n1) = &self.verdicts.n1_necessary_condition {
            rows.push(("condition N1 [invariance]".into(), show(n1.value)));
        }
        for k in &self.verdicts.kalman_rank {
            rows.push((format!("kalman rank {}", k.label), k.rank.to_string()));
        }
        if let Some(g) = &self.verdicts.deterministic_gramian_rank {
            rows.push((format!("gramian rank {}", g.label), g.rank.to_string()));
        }
        if let Some(ms) = &self.metric {
            rows.push(("metric scheme".into(), ms.scheme.clone()));
            for (i, line) in ms.p0_limit.display.iter().enumerate() {
                rows.push((if i == 0 { "P0 limit".into() } else { String::new() }, line.clone()));
            }
            rows.push(("metric rank".into(), ms.rank.to_string()));
            rows.push(("lambda_min".into(), format!("{:.7}", ms.lambda_min)));
            rows.push(("converged".into(), ms.converged.to_string()));
        }
        if let Some(o) = &self.oracle {
            rows.push(("oracle max residual".into(), format!("{:.3e}", o.max_relative_residual)));
            if let Some(k) = o.observability.k_sharp {
                rows.push(("observability k (sharp)".into(), format!("{k:.6}")));
            }
        }
        if let Some(iv) = &self.intervention {
            let fmt = |s: &Option<Vec<usize>>| {
                s.as_ref().map_or("none".to_string(), |v| {
                    format!("{{{}}}", v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","))
                })
            };
            rows.push(("intervention greedy".into(), fmt(&iv.greedy.selected)));
            if let Some(ex) = &iv.exhaustive {
                let spec = ex
                    .selected
                    .as_ref()
                    .and_then(|s| ex.evaluated.iter().find(|e| &e.subset == s))
                    .map(|e| format!(" rank={} spec={:.7}", e.rank, e.spec))
                    .unwrap_or_default();
                rows.push(("intervention exhaustive".into(), format!("{}{spec}", fmt(&ex.selected))));
            }
        }
        for i in &self.inconsistencies {
            rows.push(("INCONSISTENT".into(), i.clone()));
        }
        for n in &self.notes {
            rows.push(("note".into(), n.clone()));
        }
        let w = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<w$}  {v}\n"));
        }
        out
    }
}
