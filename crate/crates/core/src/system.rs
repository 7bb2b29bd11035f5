//! The controlled system X_{n+1} = A_n X_n + B u_{n+1} + Σ_i ⟨ΔM_{n+1}, e_i⟩ C_{i,n} X_n,
//! its dual process, and exact tree expectations.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::trend::{PathTree, TrendModel};

/// Full-path coefficient: `(n, [L_0, .., L_n]) -> matrix`.
pub type AdaptedFn = Arc<dyn Fn(usize, &[usize]) -> Mat + Send + Sync>;

/// A coefficient A_n or C_{i,n} as a function of time and trend.
///
/// Time-indexed families repeat periodically, so a two-element `Time` map
/// alternates between even and odd steps.
#[derive(Clone)]
pub enum CoefficientMap {
    Constant(Mat),
    Time(Vec<Mat>),
    /// Indexed by the current trend state L_n.
    Trend(Vec<Mat>),
    /// `[n mod len][state]`.
    TimeTrend(Vec<Vec<Mat>>),
    Adapted(AdaptedFn),
}

impl fmt::Debug for CoefficientMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Self::Time(v) => f.debug_tuple("Time").field(v).finish(),
            Self::Trend(v) => f.debug_tuple("Trend").field(v).finish(),
            Self::TimeTrend(v) => f.debug_tuple("TimeTrend").field(v).finish(),
            Self::Adapted(_) => f.write_str("Adapted(<fn>)"),
        }
    }
}

impl CoefficientMap {
    pub fn zeros(m: usize) -> Self {
        Self::Constant(Mat::zeros(m, m))
    }

    /// Value at step `n` along the trend prefix `L_0..L_n` (non-empty).
    pub fn at(&self, n: usize, prefix: &[usize]) -> Mat {
        let state = *prefix.last().expect("prefix contains L_n");
        match self {
            Self::Adapted(f) => f(n, prefix),
            _ => self.at_state(n, state),
        }
    }

    /// Value at step `n` given only L_n = e_state. Panics on adapted maps.
    pub fn at_state(&self, n: usize, state: usize) -> Mat {
        match self {
            Self::Constant(m) => m.clone(),
            Self::Time(v) => v[n % v.len()].clone(),
            Self::Trend(v) => v[state].clone(),
            Self::TimeTrend(v) => v[n % v.len()][state].clone(),
            Self::Adapted(_) => panic!("adapted coefficient needs the full path"),
        }
    }

    /// True when the value never depends on the trend.
    pub fn is_nonrandom(&self) -> bool {
        matches!(self, Self::Constant(_) | Self::Time(_))
    }

    /// True when the value depends on the trend through L_n only.
    pub fn is_markovian(&self) -> bool {
        !matches!(self, Self::Adapted(_))
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Self::Constant(_) => true,
            Self::Time(v) => v.windows(2).all(|w| w[0] == w[1]),
            _ => false,
        }
    }

    /// True when every stored value is exactly zero. Adapted maps are never
    /// assumed to vanish.
    pub fn is_zero(&self) -> bool {
        self.stored().is_some_and(|ms| ms.iter().all(|m| m.iter().all(|&x| x == 0.0)))
    }

    fn stored(&self) -> Option<Vec<&Mat>> {
        match self {
            Self::Constant(m) => Some(vec![m]),
            Self::Time(v) | Self::Trend(v) => Some(v.iter().collect()),
            Self::TimeTrend(v) => Some(v.iter().flatten().collect()),
            Self::Adapted(_) => None,
        }
    }

    fn validate(&self, field: &str, m: usize, p: usize) -> Result<()> {
        let check_len = |len: usize, what: &str| {
            if len == 0 {
                Err(Error::validation(field, format!("{what} must not be empty")))
            } else {
                Ok(())
            }
        };
        match self {
            Self::Time(v) => check_len(v.len(), "time values")?,
            Self::Trend(v) => {
                if v.len() != p {
                    return Err(Error::validation(
                        field,
                        format!("trend mode needs {p} matrices, got {}", v.len()),
                    ));
                }
            }
            Self::TimeTrend(v) => {
                check_len(v.len(), "time values")?;
                for (k, row) in v.iter().enumerate() {
                    if row.len() != p {
                        return Err(Error::validation(
                            field,
                            format!("time-trend entry {k} needs {p} matrices, got {}", row.len()),
                        ));
                    }
                }
            }
            _ => {}
        }
        if let Some(ms) = self.stored() {
            for mat in ms {
                if mat.nrows() != m || mat.ncols() != m {
                    return Err(Error::validation(
                        field,
                        format!("expected {m}x{m} matrix, got {}x{}", mat.nrows(), mat.ncols()),
                    ));
                }
                if mat.iter().any(|x| !x.is_finite()) {
                    return Err(Error::validation(field, "entries must be finite"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SwitchedSystem {
    pub a: CoefficientMap,
    pub b: Mat,
    /// One map per trend component, C_1..C_p.
    pub c: Vec<CoefficientMap>,
    pub trend: TrendModel,
    pub horizon: usize,
}

impl SwitchedSystem {
    pub fn new(
        a: CoefficientMap,
        b: Mat,
        c: Vec<CoefficientMap>,
        trend: TrendModel,
        horizon: usize,
    ) -> Result<Self> {
        let m = b.nrows();
        let p = trend.states();
        if m == 0 {
            return Err(Error::validation("b", "state dimension must be positive"));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("b", "entries must be finite"));
        }
        if c.len() != p {
            return Err(Error::validation(
                "c",
                format!("expected {p} noise coefficients (one per trend state), got {}", c.len()),
            ));
        }
        a.validate("a", m, p)?;
        for (i, ci) in c.iter().enumerate() {
            ci.validate(&format!("c[{}]", i + 1), m, p)?;
        }
        Ok(Self { a, b, c, trend, horizon })
    }

    /// Noise-free system (single trend state, C = 0).
    pub fn deterministic(a: CoefficientMap, b: Mat, horizon: usize) -> Result<Self> {
        let m = b.nrows();
        Self::new(a, b, vec![CoefficientMap::zeros(m)], TrendModel::deterministic(), horizon)
    }

    pub fn with_b(&self, b: Mat) -> Result<Self> {
        Self::new(self.a.clone(), b, self.c.clone(), self.trend.clone(), self.horizon)
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self { horizon, ..self.clone() }
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.trend.states()
    }

    pub fn c_is_zero(&self) -> bool {
        self.c.iter().all(CoefficientMap::is_zero)
    }

    pub fn tree(&self) -> Result<PathTree> {
        crate::trend::enumerate_paths(&self.trend, self.horizon)
    }

    pub fn tree_with_cap(&self, cap: usize) -> Result<PathTree> {
        crate::trend::enumerate_paths_with_cap(&self.trend, self.horizon, cap)
    }

    /// Coefficients (A_n, [C_{i,n}]) at an internal node.
    pub fn coefficients_at(&self, tree: &PathTree, id: usize) -> (Mat, Vec<Mat>) {
        let node = tree.node(id);
        if self.a.is_markovian() && self.c.iter().all(CoefficientMap::is_markovian) {
            let (n, l) = (node.depth, node.state);
            (self.a.at_state(n, l), self.c.iter().map(|c| c.at_state(n, l)).collect())
        } else {
            let prefix = tree.prefix(id);
            let n = node.depth;
            (self.a.at(n, &prefix), self.c.iter().map(|c| c.at(n, &prefix)).collect())
        }
    }

    /// Every internal node where A_n is numerically singular, as (step, 1-based path).
    pub fn singular_coefficients(&self, tree: &PathTree) -> Vec<(usize, Vec<usize>)> {
        let mut out = Vec::new();
        for n in 0..tree.horizon() {
            for &id in tree.level(n) {
                let (a, _) = self.coefficients_at(tree, id);
                if linalg::checked_inverse(&a).is_none() {
                    out.push((n, tree.prefix(id).iter().map(|s| s + 1).collect()));
                }
            }
        }
        out
    }

    /// A_n^{-1} at an internal node, or an error naming the step and path.
    pub fn a_inverse_at(&self, tree: &PathTree, id: usize) -> Result<Mat> {
        let (a, _) = self.coefficients_at(tree, id);
        linalg::checked_inverse(&a).ok_or_else(|| Error::SingularCoefficient {
            step: tree.node(id).depth,
            path: tree.prefix(id).iter().map(|s| s + 1).collect(),
        })
    }
}

/// Predictable control: `u[id]` is u_{n+1} on the depth-n node `id`.
/// Entries on leaves are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPolicy {
    pub u: Vec<Vector>,
}

impl ControlPolicy {
    pub fn zeros(tree: &PathTree, d: usize) -> Self {
        Self { u: vec![Vector::zeros(d); tree.len()] }
    }

    pub fn from_fn(tree: &PathTree, mut f: impl FnMut(usize) -> Vector) -> Self {
        Self { u: (0..tree.len()).map(&mut f).collect() }
    }
}

/// Predictable m×p dual control, indexed like [`ControlPolicy`].
#[derive(Clone, Debug, PartialEq)]
pub struct DualControl {
    pub v: Vec<Mat>,
}

impl DualControl {
    pub fn zeros(tree: &PathTree, m: usize, p: usize) -> Self {
        Self { v: vec![Mat::zeros(m, p); tree.len()] }
    }
}

/// An F_N-measurable random vector: one value per leaf, in `tree.leaves()` order.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomVector {
    pub values: Vec<Vector>,
}

impl RandomVector {
    pub fn from_fn(tree: &PathTree, mut f: impl FnMut(usize) -> Vector) -> Self {
        Self { values: tree.leaves().iter().map(|&id| f(id)).collect() }
    }

    pub fn zeros(tree: &PathTree, m: usize) -> Self {
        Self { values: vec![Vector::zeros(m); tree.leaves().len()] }
    }

    /// Restriction of a node field to the leaves.
    pub fn from_field(tree: &PathTree, field: &[Vector]) -> Self {
        Self { values: tree.leaves().iter().map(|&id| field[id].clone()).collect() }
    }
}

/// X on every node of the tree, starting from `x0` at the roots.
pub fn simulate_x(
    sys: &SwitchedSystem,
    x0: &Vector,
    u: &ControlPolicy,
    tree: &PathTree,
) -> Result<Vec<Vector>> {
    if x0.len() != sys.m() {
        return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), sys.m())));
    }
    if u.u.len() != tree.len() {
        return Err(Error::Dimension("control policy does not match the tree".into()));
    }
    let mut x = vec![Vector::zeros(sys.m()); tree.len()];
    for &r in tree.roots() {
        x[r] = x0.clone();
    }
    for n in 0..tree.horizon() {
        for &id in tree.level(n) {
            let (a, c) = sys.coefficients_at(tree, id);
            let ui = &u.u[id];
            if ui.len() != sys.d() {
                return Err(Error::Dimension(format!(
                    "control at node {id} has length {}, expected {}",
                    ui.len(),
                    sys.d()
                )));
            }
            let parent_state = tree.node(id).state;
            let drift = &a * &x[id] + &sys.b * ui;
            for &ch in &tree.node(id).children {
                let dm = sys.trend.delta_m(parent_state, tree.node(ch).state);
                let mut next = drift.clone();
                for (i, ci) in c.iter().enumerate() {
                    if dm[i] != 0.0 {
                        next += ci * &x[id] * dm[i];
                    }
                }
                x[ch] = next;
            }
        }
    }
    Ok(x)
}

/// Σ_leaves prob · |X_N − ξ|².
pub fn expected_square_distance(x_n: &RandomVector, xi: &RandomVector, tree: &PathTree) -> Result<f64> {
    let leaves = tree.leaves();
    if x_n.values.len() != leaves.len() || xi.values.len() != leaves.len() {
        return Err(Error::Dimension(format!(
            "random vectors have {} and {} values, tree has {} leaves",
            x_n.values.len(),
            xi.values.len(),
            leaves.len()
        )));
    }
    let mut total = 0.0;
    for (k, &id) in leaves.iter().enumerate() {
        if x_n.values[k].len() != xi.values[k].len() {
            return Err(Error::Dimension("random vectors have different dimensions".into()));
        }
        total += tree.node(id).prob * (&x_n.values[k] - &xi.values[k]).norm_squared();
    }
    Ok(total)
}

/// y on every node, following
/// y_{n+1} = A_n^{-T}(y_n − Σ_i C_i^T v S_i) + v ΔM_{n+1},
/// where S_i is column i of the conditional covariance of ΔM_{n+1}.
pub fn simulate_dual_y(
    sys: &SwitchedSystem,
    y0: &Vector,
    v: &DualControl,
    tree: &PathTree,
) -> Result<Vec<Vector>> {
    let (m, p) = (sys.m(), sys.p());
    if y0.len() != m {
        return Err(Error::Dimension(format!("y0 has length {}, expected {m}", y0.len())));
    }
    if v.v.len() != tree.len() {
        return Err(Error::Dimension("dual control does not match the tree".into()));
    }
    let mut y = vec![Vector::zeros(m); tree.len()];
    for &r in tree.roots() {
        y[r] = y0.clone();
    }
    for n in 0..tree.horizon() {
        for &id in tree.level(n) {
            let vi = &v.v[id];
            if vi.nrows() != m || vi.ncols() != p {
                return Err(Error::Dimension(format!("dual control at node {id} must be {m}x{p}")));
            }
            let (_, c) = sys.coefficients_at(tree, id);
            let a_inv_t = sys.a_inverse_at(tree, id)?.transpose();
            let state = tree.node(id).state;
            let sigma = sys.trend.second_moment_matrix(state);
            let vs = vi * &sigma;
            let mut inner = y[id].clone();
            for (i, ci) in c.iter().enumerate() {
                inner -= ci.transpose() * vs.column(i);
            }
            let mean = a_inv_t * inner;
            for &ch in &tree.node(id).children {
                let dm = sys.trend.delta_m(state, tree.node(ch).state);
                y[ch] = &mean + vi * dm;
            }
        }
    }
    Ok(y)
}

/// E[· | F_n] of a node field known at depth n+1, one value per depth-n node
/// (aligned with `tree.level(n)`).
pub fn conditional_expectation(values: &[Vector], tree: &PathTree, n: usize) -> Vec<Vector> {
    tree.level(n).iter().map(|&id| node_mean(values, tree, id)).collect()
}

/// Transition-weighted average of `values` over the children of `id`.
pub fn node_mean(values: &[Vector], tree: &PathTree, id: usize) -> Vector {
    let node = tree.node(id);
    let dim = values[node.children[0]].len();
    node.children.iter().fold(Vector::zeros(dim), |acc, &ch| acc + &values[ch] * tree.node(ch).cond_prob)
}

/// Full expectation of a field at depth n.
pub fn expectation(values: &[Vector], tree: &PathTree, n: usize) -> Vector {
    let dim = values[tree.level(n)[0]].len();
    tree.level(n).iter().fold(Vector::zeros(dim), |acc, &id| acc + &values[id] * tree.node(id).prob)
}
