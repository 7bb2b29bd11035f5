//! TOML model files.
//!
//! ```toml
//! name = "example"
//! horizon = 2
//! b = [[0], [1]]                 # rows of the m×d matrix
//! scenarios = [[0, 1], [1, 1]]   # optional candidate columns
//!
//! [trend]
//! mode = "iid"                   # or "markov" with `transition = [[..], ..]`
//! q = ["1/2", "1/2"]
//! initial = 1                    # 1-based state, or a probability vector
//!
//! [a]
//! mode = "constant"              # constant | time | trend | time-trend
//! value = [[0, 1], [1, 0]]
//!
//! [[c]]                          # unlisted trend states get C_i = 0
//! state = 1
//! mode = "constant"
//! value = [[0, 1], [0, 0]]
//! ```
//!
//! Numbers may be integers, decimals or exact fractions written as strings ("3/4").

use std::path::Path;

use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::system::{CoefficientMap, SwitchedSystem};
use crate::trend::{InitialLaw, TrendModel};
use crate::Tolerances;

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Num {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Num {
    fn value(&self) -> std::result::Result<f64, String> {
        match self {
            Num::Int(i) => Ok(*i as f64),
            Num::Float(f) => Ok(*f),
            Num::Text(s) => parse_number(s),
        }
    }
}

/// Parses "0.25", "-3", "3/4" or "-1/2".
pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("not a number: {s:?}"));
    let v = match t.split_once('/') {
        Some((n, d)) => {
            let den = parse(d)?;
            if den == 0.0 {
                return Err(format!("zero denominator in {s:?}"));
            }
            parse(n)? / den
        }
        None => parse(t)?,
    };
    if v.is_finite() { Ok(v) } else { Err(format!("not a finite number: {s:?}")) }
}

type RawMatrix = Vec<Vec<Num>>;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawInitial {
    State(i64),
    Law(Vec<Num>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrend {
    mode: String,
    q: Option<Vec<Num>>,
    transition: Option<RawMatrix>,
    initial: Option<RawInitial>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoeff {
    mode: Option<String>,
    value: Option<RawMatrix>,
    values: Option<Vec<toml::Value>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    state: i64,
    mode: Option<String>,
    value: Option<RawMatrix>,
    values: Option<Vec<toml::Value>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDims {
    m: Option<usize>,
    d: Option<usize>,
    p: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: Option<String>,
    description: Option<String>,
    horizon: Spanned<i64>,
    b: Spanned<RawMatrix>,
    scenarios: Option<Spanned<Vec<Vec<Num>>>>,
    dims: Option<RawDims>,
    trend: Spanned<RawTrend>,
    a: Spanned<RawCoeff>,
    #[serde(default)]
    c: Vec<Spanned<RawNoise>>,
    tolerances: Option<Tolerances>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub name: String,
    pub description: Option<String>,
    pub system: SwitchedSystem,
    pub scenarios: Option<Vec<Vector>>,
    pub tolerances: Tolerances,
}

impl Model {
    pub fn scenario_set(&self) -> Result<Option<crate::intervention::ScenarioSet>> {
        self.scenarios
            .as_ref()
            .map(|s| crate::intervention::ScenarioSet::new(s.clone(), self.system.clone()))
            .transpose()
    }
}

struct Ctx<'a> {
    src: &'a str,
}

impl Ctx<'_> {
    fn line(&self, offset: usize) -> usize {
        self.src[..offset.min(self.src.len())].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err<T>(&self, field: &str, span: &std::ops::Range<usize>, msg: impl Into<String>) -> Result<T> {
        Err(Error::validation(format!("{field} (line {})", self.line(span.start)), msg))
    }

    fn relabel(&self, e: Error, span: &std::ops::Range<usize>) -> Error {
        match e {
            Error::Validation { field, message } => {
                Error::Validation { field: format!("{field} (line {})", self.line(span.start)), message }
            }
            other => other,
        }
    }
}

fn to_matrix(raw: &RawMatrix, field: &str) -> Result<Mat> {
    let rows = raw.len();
    let cols = raw.first().map(|r| r.len()).unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(Error::validation(field, "matrix must be non-empty"));
    }
    let mut m = Mat::zeros(rows, cols);
    for (i, row) in raw.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::validation(field, format!("row {} has {} entries, expected {cols}", i + 1, row.len())));
        }
        for (j, x) in row.iter().enumerate() {
            m[(i, j)] = x.value().map_err(|e| Error::validation(field, e))?;
        }
    }
    Ok(m)
}

fn to_vector(raw: &[Num], field: &str) -> Result<Vec<f64>> {
    raw.iter().map(|x| x.value().map_err(|e| Error::validation(field, e))).collect()
}

fn value_matrix(v: &toml::Value, field: &str) -> Result<Mat> {
    let raw: RawMatrix = v.clone().try_into().map_err(|e| Error::validation(field, format!("expected a matrix: {e}")))?;
    to_matrix(&raw, field)
}

fn square(m: Mat, field: &str) -> Result<Mat> {
    if m.nrows() != m.ncols() {
        return Err(Error::validation(field, format!("must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m)
}

fn coefficient(
    mode: Option<&str>,
    value: Option<&RawMatrix>,
    values: Option<&Vec<toml::Value>>,
    field: &str,
) -> Result<CoefficientMap> {
    let mode = mode.unwrap_or(if values.is_some() { "time" } else { "constant" });
    let need_values = || values.ok_or_else(|| Error::validation(field, format!("mode {mode:?} needs `values`")));
    match mode {
        "constant" => {
            let v = value.ok_or_else(|| Error::validation(field, "constant mode needs `value`"))?;
            Ok(CoefficientMap::Constant(square(to_matrix(v, field)?, field)?))
        }
        "time" | "trend" => {
            let mats = need_values()?
                .iter()
                .enumerate()
                .map(|(k, v)| square(value_matrix(v, &format!("{field}.values[{}]", k + 1))?, field))
                .collect::<Result<Vec<_>>>()?;
            Ok(if mode == "time" { CoefficientMap::Time(mats) } else { CoefficientMap::Trend(mats) })
        }
        "time-trend" => {
            let mut out = Vec::new();
            for (k, entry) in need_values()?.iter().enumerate() {
                let arr = entry
                    .as_array()
                    .ok_or_else(|| Error::validation(field, "time-trend values must be lists of matrices"))?;
                let mats = arr
                    .iter()
                    .enumerate()
                    .map(|(l, v)| square(value_matrix(v, &format!("{field}.values[{}][{}]", k + 1, l + 1))?, field))
                    .collect::<Result<Vec<_>>>()?;
                out.push(mats);
            }
            Ok(CoefficientMap::TimeTrend(out))
        }
        other => Err(Error::validation(
            field,
            format!("unknown mode {other:?} (expected constant, time, trend or time-trend)"),
        )),
    }
}

fn toml_error(src: &str, e: toml::de::Error) -> Error {
    let line = e.span().map(|s| src[..s.start.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1);
    Error::Parse { line, message: e.message().to_string() }
}

pub fn parse_model(src: &str) -> Result<Model> {
    let raw: RawModel = toml::from_str(src).map_err(|e| toml_error(src, e))?;
    let ctx = Ctx { src };

    let horizon_span = raw.horizon.span();
    let horizon = *raw.horizon.get_ref();
    if horizon < 0 {
        return ctx.err("horizon", &horizon_span, "must be nonnegative");
    }

    let t_span = raw.trend.span();
    let t = raw.trend.get_ref();
    let trend = (|| -> Result<TrendModel> {
        let p_hint = t.q.as_ref().map(|q| q.len()).or_else(|| t.transition.as_ref().map(|m| m.len())).unwrap_or(0);
        let initial = match &t.initial {
            None => InitialLaw::Fixed(0),
            Some(RawInitial::State(s)) => {
                if *s < 1 || *s as usize > p_hint {
                    return Err(Error::validation("trend.initial", format!("state {s} out of range 1..={p_hint}")));
                }
                InitialLaw::Fixed(*s as usize - 1)
            }
            Some(RawInitial::Law(v)) => InitialLaw::Distribution(to_vector(v, "trend.initial")?),
        };
        match t.mode.as_str() {
            "iid" => {
                let q = t.q.as_ref().ok_or_else(|| Error::validation("trend.q", "iid mode needs `q`"))?;
                TrendModel::iid(&to_vector(q, "trend.q")?, initial)
            }
            "markov" => {
                let tr = t
                    .transition
                    .as_ref()
                    .ok_or_else(|| Error::validation("trend.transition", "markov mode needs `transition`"))?;
                TrendModel::markov(to_matrix(tr, "trend.transition")?, initial)
            }
            other => Err(Error::validation("trend.mode", format!("unknown mode {other:?} (expected iid or markov)"))),
        }
    })()
    .map_err(|e| ctx.relabel(e, &t_span))?;
    let p = trend.states();

    let b_span = raw.b.span();
    let b = to_matrix(raw.b.get_ref(), "b").map_err(|e| ctx.relabel(e, &b_span))?;
    let m = b.nrows();

    let a_span = raw.a.span();
    let ra = raw.a.get_ref();
    let a = coefficient(ra.mode.as_deref(), ra.value.as_ref(), ra.values.as_ref(), "a")
        .map_err(|e| ctx.relabel(e, &a_span))?;

    let mut c = vec![CoefficientMap::zeros(m); p];
    let mut seen = vec![false; p];
    for entry in &raw.c {
        let span = entry.span();
        let rc = entry.get_ref();
        if rc.state < 1 || rc.state as usize > p {
            return ctx.err("c.state", &span, format!("state {} out of range 1..={p}", rc.state));
        }
        let idx = rc.state as usize - 1;
        if seen[idx] {
            return ctx.err("c.state", &span, format!("state {} listed twice", rc.state));
        }
        seen[idx] = true;
        let field = format!("c[{}]", rc.state);
        c[idx] = coefficient(rc.mode.as_deref(), rc.value.as_ref(), rc.values.as_ref(), &field)
            .map_err(|e| ctx.relabel(e, &span))?;
    }

    if let Some(d) = &raw.dims {
        for (name, want, got) in [("dims.m", d.m, m), ("dims.d", d.d, b.ncols()), ("dims.p", d.p, p)] {
            if let Some(w) = want {
                if w != got {
                    return Err(Error::validation(name, format!("declared {w}, but the data has {got}")));
                }
            }
        }
    }

    let system = SwitchedSystem::new(a, b, c, trend, horizon as usize)?;

    let scenarios = match &raw.scenarios {
        None => None,
        Some(sp) => {
            let span = sp.span();
            let mut out = Vec::new();
            for (k, s) in sp.get_ref().iter().enumerate() {
                let v = to_vector(s, "scenarios").map_err(|e| ctx.relabel(e, &span))?;
                if v.len() != m {
                    return ctx.err(&format!("scenarios[{}]", k + 1), &span, format!("expected length {m}, got {}", v.len()));
                }
                out.push(Vector::from_vec(v));
            }
            if out.is_empty() {
                return ctx.err("scenarios", &span, "list must not be empty");
            }
            Some(out)
        }
    };

    let tolerances = match raw.tolerances {
        Some(t) => t,
        None => Tolerances::from_env(),
    };
    tolerances.validate()?;

    Ok(Model {
        name: raw.name.unwrap_or_else(|| "model".into()),
        description: raw.description,
        system,
        scenarios,
        tolerances,
    })
}

pub fn load_model(path: &Path) -> Result<Model> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_model(&src)
}
