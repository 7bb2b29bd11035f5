//! Choosing control columns among candidate intervention scenarios b_1..b_r.
//!
//! Subsets are 0-based internally; reports convert them to 1-based.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bsrds;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::pathspace;
use crate::system::SwitchedSystem;
use crate::Tolerances;

pub const EXHAUSTIVE_CAP: usize = 20;
const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ScenarioSet {
    pub scenarios: Vec<Vector>,
    /// The system whose B is replaced by B(I).
    pub base: SwitchedSystem,
}

impl ScenarioSet {
    pub fn new(scenarios: Vec<Vector>, base: SwitchedSystem) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::validation("scenarios", "at least one scenario is required"));
        }
        for (i, s) in scenarios.iter().enumerate() {
            if s.len() != base.m() {
                return Err(Error::validation(
                    format!("scenarios[{}]", i + 1),
                    format!("expected length {}, got {}", base.m(), s.len()),
                ));
            }
        }
        Ok(Self { scenarios, base })
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// B(I) = [b_i for i in I].
    pub fn matrix(&self, subset: &[usize]) -> Mat {
        let m = self.base.m();
        let mut out = Mat::zeros(m, subset.len());
        for (k, &i) in subset.iter().enumerate() {
            out.set_column(k, &self.scenarios[i]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Bsrds,
    Oracle,
    Invariance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetEval {
    /// 1-based scenario indices.
    pub subset: Vec<usize>,
    pub rank: usize,
    /// λ_min of the limiting metric, clamped to 0 below the definiteness threshold.
    pub spec: f64,
    pub lambda_min: f64,
    pub engine: Engine,
    /// True when the ε-trace did not stabilize.
    pub indeterminate: bool,
}

/// Caching evaluator of (rank, spec) over subsets.
pub struct Evaluator<'a> {
    set: &'a ScenarioSet,
    tol: Tolerances,
    cache: HashMap<Vec<usize>, SubsetEval>,
}

impl<'a> Evaluator<'a> {
    pub fn new(set: &'a ScenarioSet, tol: &Tolerances) -> Self {
        Self { set, tol: tol.clone(), cache: HashMap::new() }
    }

    pub fn evaluations(&self) -> usize {
        self.cache.len()
    }

    pub fn eval(&mut self, subset: &[usize]) -> Result<SubsetEval> {
        let mut key = subset.to_vec();
        key.sort_unstable();
        key.dedup();
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        if let Some(&bad) = key.iter().find(|&&i| i >= self.set.len()) {
            return Err(Error::validation("subset", format!("scenario {} does not exist", bad + 1)));
        }
        let res = eval_subset_uncached(self.set, &key, &self.tol)?;
        self.cache.insert(key, res.clone());
        Ok(res)
    }
}

fn eval_subset_uncached(set: &ScenarioSet, subset: &[usize], tol: &Tolerances) -> Result<SubsetEval> {
    let one_based: Vec<usize> = subset.iter().map(|i| i + 1).collect();
    if subset.is_empty() {
        return Ok(SubsetEval {
            subset: one_based,
            rank: 0,
            spec: 0.0,
            lambda_min: 0.0,
            engine: Engine::Bsrds,
            indeterminate: false,
        });
    }
    let sys = set.base.with_b(set.matrix(subset))?;
    if bsrds::select_scheme(&sys).is_ok() {
        let r = bsrds::metric_limit(&sys, tol)?;
        return Ok(SubsetEval {
            subset: one_based,
            rank: r.rank,
            spec: r.spec,
            lambda_min: r.lambda_min,
            engine: Engine::Bsrds,
            indeterminate: !r.converged,
        });
    }
    let tree = sys.tree_with_cap(tol.node_cap)?;
    let form = pathspace::ctrl_form(&sys, &tree, 0.0, tol)?;
    let scale = linalg::spectral_norm(&form.reference);
    let rank = if scale > 0.0 { linalg::rank_with_scale(&form.form, tol.rank, scale) } else { 0 };
    let lambda_min = linalg::lambda_min(&form.form);
    let positive = scale > 0.0 && lambda_min > tol.definiteness * scale;
    Ok(SubsetEval {
        subset: one_based,
        rank,
        spec: if positive { lambda_min } else { 0.0 },
        lambda_min,
        engine: Engine::Oracle,
        indeterminate: false,
    })
}

/// (rank, spec) of B(I).
pub fn eval_subset(set: &ScenarioSet, subset: &[usize], tol: &Tolerances) -> Result<SubsetEval> {
    Evaluator::new(set, tol).eval(subset)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Greedy,
    Exhaustive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Rank,
    Spec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefMeiCheck {
    /// The selected set is controllable.
    pub controllable: bool,
    /// Every strictly smaller set is not.
    pub no_smaller_set: bool,
    /// No set of the same size has a larger spectral norm.
    pub spec_maximal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub method: Method,
    pub norm: Option<Norm>,
    /// Selected set (1-based), `None` when no subset reaches rank m.
    pub selected: Option<Vec<usize>>,
    pub k: Option<usize>,
    /// All size-k maximizers of the spectral norm (exhaustive search).
    pub maximizers: Vec<Vec<usize>>,
    pub best_rank: usize,
    pub m: usize,
    pub evaluated: Vec<SubsetEval>,
    pub definition_check: Option<DefMeiCheck>,
    /// Greedy carries no optimality guarantee.
    pub heuristic: bool,
    pub success: bool,
}

/// Greedy selection by largest rank gain, smallest index on ties.
pub fn greedy_min_rank(set: &ScenarioSet, tol: &Tolerances) -> Result<InterventionReport> {
    let m = set.base.m();
    let mut ev = Evaluator::new(set, tol);
    let mut evaluated = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    let mut rank = 0;
    while rank < m {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..set.len() {
            if chosen.contains(&i) {
                continue;
            }
            let mut cand = chosen.clone();
            cand.push(i);
            let e = ev.eval(&cand)?;
            let gain = e.rank.saturating_sub(rank);
            evaluated.push(e);
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        match best {
            Some((i, gain)) if gain > 0 => {
                chosen.push(i);
                rank += gain;
            }
            _ => break,
        }
    }
    let success = rank >= m;
    let best_rank = if success {
        rank
    } else {
        let all: Vec<usize> = (0..set.len()).collect();
        ev.eval(&all)?.rank
    };
    chosen.sort_unstable();
    let selected: Vec<usize> = chosen.iter().map(|i| i + 1).collect();
    Ok(InterventionReport {
        method: Method::Greedy,
        norm: Some(Norm::Rank),
        k: success.then_some(selected.len()),
        selected: success.then_some(selected),
        maximizers: Vec::new(),
        best_rank,
        m,
        evaluated,
        definition_check: None,
        heuristic: true,
        success,
    })
}

/// All k-subsets of 0..r in lexicographic order.
pub fn combinations(r: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > r {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < r - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Exact minimal intervention; among size-k candidates picks the spec maximizer.
pub fn exhaustive_min(set: &ScenarioSet, norm: Norm, tol: &Tolerances) -> Result<InterventionReport> {
    let r = set.len();
    if r > EXHAUSTIVE_CAP {
        return Err(Error::Capacity {
            what: "exhaustive intervention search (use the greedy method)".into(),
            size: r,
            cap: EXHAUSTIVE_CAP,
        });
    }
    let m = set.base.m();
    let mut ev = Evaluator::new(set, tol);
    let mut evaluated = Vec::new();
    let mut best_rank = 0;
    let ok = |e: &SubsetEval| match norm {
        Norm::Rank => e.rank == m,
        Norm::Spec => e.spec > 0.0,
    };
    for k in 1..=r {
        let mut level = Vec::new();
        for c in combinations(r, k) {
            let e = ev.eval(&c)?;
            best_rank = best_rank.max(e.rank);
            level.push(e);
        }
        let hits: Vec<&SubsetEval> = level.iter().filter(|e| ok(e)).collect();
        if !hits.is_empty() {
            let top = level.iter().map(|e| e.spec).fold(f64::NEG_INFINITY, f64::max);
            let maximizers: Vec<Vec<usize>> = hits
                .iter()
                .filter(|e| e.spec >= top - TIE_TOL * top.abs().max(1.0))
                .map(|e| e.subset.clone())
                .collect();
            let selected = maximizers.first().cloned().unwrap_or_else(|| hits[0].subset.clone());
            let sel_eval = level.iter().find(|e| e.subset == selected).expect("selected evaluated").clone();
            let smaller_all_zero = evaluated.iter().all(|e: &SubsetEval| match norm {
                Norm::Rank => e.rank < m,
                Norm::Spec => e.spec == 0.0,
            });
            let check = DefMeiCheck {
                controllable: ok(&sel_eval),
                no_smaller_set: smaller_all_zero,
                spec_maximal: level.iter().all(|e| e.spec <= sel_eval.spec + TIE_TOL * sel_eval.spec.abs().max(1.0)),
            };
            evaluated.extend(level);
            return Ok(InterventionReport {
                method: Method::Exhaustive,
                norm: Some(norm),
                selected: Some(selected),
                k: Some(k),
                maximizers,
                best_rank,
                m,
                evaluated,
                definition_check: Some(check),
                heuristic: false,
                success: true,
            });
        }
        evaluated.extend(level);
    }
    Ok(InterventionReport {
        method: Method::Exhaustive,
        norm: Some(norm),
        selected: None,
        k: None,
        maximizers: Vec::new(),
        best_rank,
        m,
        evaluated,
        definition_check: None,
        heuristic: false,
        success: false,
    })
}

/// min{k : some |I| = k has rank m} and min{k : some |I| = k has spec > 0}.
pub fn minimal_k_both(set: &ScenarioSet, tol: &Tolerances) -> Result<(Option<usize>, Option<usize>)> {
    let a = exhaustive_min(set, Norm::Rank, tol)?.k;
    let b = exhaustive_min(set, Norm::Spec, tol)?.k;
    Ok((a, b))
}
