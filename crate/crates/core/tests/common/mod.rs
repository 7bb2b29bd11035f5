//! Random instances and brute-force reference computations shared by the test targets.
#![allow(dead_code)]

use mjctrl::linalg;
use mjctrl::system::{self, ControlPolicy};
use mjctrl::{CoefficientMap, InitialLaw, Mat, PathTree, SwitchedSystem, TrendModel, Vector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut Rng) -> f64 {
    rng.random_range(-2.0..=2.0)
}

pub fn matrix(rng: &mut Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| uniform(rng))
}

pub fn vector(rng: &mut Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| uniform(rng))
}

pub fn condition_number(a: &Mat) -> f64 {
    let s = linalg::singular_values(a);
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 { f64::INFINITY } else { max / min }
}

/// Entries in [−2, 2], rejected until cond(A) ≤ 50.
pub fn invertible(rng: &mut Rng, m: usize) -> Mat {
    loop {
        let a = matrix(rng, m, m);
        if condition_number(&a) <= 50.0 {
            return a;
        }
    }
}

/// Some entries are zeroed so that noise is sometimes absent or rank deficient.
pub fn sparse(rng: &mut Rng, m: usize) -> Mat {
    if rng.random_bool(0.25) {
        return Mat::zeros(m, m);
    }
    Mat::from_fn(m, m, |_, _| if rng.random_bool(0.5) { uniform(rng) } else { 0.0 })
}

pub fn law(rng: &mut Rng, p: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Markov trend, trend-dependent A and C: only the path-space oracle applies.
    MarkovGeneral,
    /// iid trend, constant A and C: the non-random scheme applies.
    NonRandomIid,
    /// iid trend, A depending on L_n, C = 0: the C = 0 scheme applies.
    C0TrendA,
}

pub const KINDS: [Kind; 3] = [Kind::MarkovGeneral, Kind::NonRandomIid, Kind::C0TrendA];

pub struct Instance {
    pub kind: Kind,
    pub sys: SwitchedSystem,
}

/// m, p ≤ 3, N ≤ 3, entries in [−2, 2], every A with cond ≤ 50.
pub fn instance(rng: &mut Rng, kind: Kind) -> Instance {
    let m = rng.random_range(1..=3);
    let p = rng.random_range(1..=3);
    let n = rng.random_range(1..=3);
    let d = rng.random_range(1..=m);
    let b = matrix(rng, m, d);
    let init = InitialLaw::Fixed(rng.random_range(0..p));
    let sys = match kind {
        Kind::MarkovGeneral => {
            let q = Mat::from_fn(p, p, |_, _| 0.0);
            let mut q = q;
            for i in 0..p {
                let row = law(rng, p);
                for j in 0..p {
                    q[(i, j)] = row[j];
                }
            }
            let trend = TrendModel::markov(q, init).unwrap();
            let a = CoefficientMap::Trend((0..p).map(|_| invertible(rng, m)).collect());
            let c = (0..p).map(|_| CoefficientMap::Trend((0..p).map(|_| sparse(rng, m)).collect())).collect();
            SwitchedSystem::new(a, b, c, trend, n).unwrap()
        }
        Kind::NonRandomIid => {
            let trend = TrendModel::iid(&law(rng, p), init).unwrap();
            let a = CoefficientMap::Constant(invertible(rng, m));
            let c = (0..p).map(|_| CoefficientMap::Constant(sparse(rng, m))).collect();
            SwitchedSystem::new(a, b, c, trend, n).unwrap()
        }
        Kind::C0TrendA => {
            let trend = TrendModel::iid(&law(rng, p), init).unwrap();
            let a = CoefficientMap::Trend((0..p).map(|_| invertible(rng, m)).collect());
            let c = vec![CoefficientMap::zeros(m); p];
            SwitchedSystem::new(a, b, c, trend, n).unwrap()
        }
    };
    Instance { kind, sys }
}

/// The seeded population used by the engine-equivalence and Riccati suites.
pub fn population(seed: u64, count: usize) -> Vec<Instance> {
    let mut r = rng(seed);
    (0..count).map(|i| instance(&mut r, KINDS[i % KINDS.len()])).collect()
}

/// Terminal state map obtained by probing `simulate_x` with unit inputs:
/// √prob-weighted X_N = Fx x0 + Fu u, u stacked over internal nodes.
pub struct ProbedMap {
    pub fx: Mat,
    pub fu: Mat,
}

pub fn internal_nodes(tree: &PathTree) -> Vec<usize> {
    (0..tree.horizon()).flat_map(|n| tree.level(n).iter().copied()).collect()
}

fn weighted_terminal(sys: &SwitchedSystem, tree: &PathTree, x0: &Vector, u: &ControlPolicy) -> Vector {
    let xs = system::simulate_x(sys, x0, u, tree).unwrap();
    let leaves = tree.leaves();
    let m = sys.m();
    let mut out = Vector::zeros(m * leaves.len());
    for (k, &id) in leaves.iter().enumerate() {
        out.rows_mut(k * m, m).copy_from(&(&xs[id] * tree.node(id).prob.sqrt()));
    }
    out
}

pub fn probe(sys: &SwitchedSystem, tree: &PathTree) -> ProbedMap {
    let (m, d) = (sys.m(), sys.d());
    let internal = internal_nodes(tree);
    let rows = m * tree.leaves().len();
    let zero_u = ControlPolicy::zeros(tree, d);
    let mut fx = Mat::zeros(rows, m);
    for i in 0..m {
        let mut e = Vector::zeros(m);
        e[i] = 1.0;
        fx.set_column(i, &weighted_terminal(sys, tree, &e, &zero_u));
    }
    // Control coordinates are scaled by 1/√prob so that |coords|² = E Σ|u|².
    let mut fu = Mat::zeros(rows, d * internal.len());
    for (k, &id) in internal.iter().enumerate() {
        for j in 0..d {
            let mut u = ControlPolicy::zeros(tree, d);
            u.u[id][j] = 1.0 / tree.node(id).prob.sqrt();
            fu.set_column(k * d + j, &weighted_terminal(sys, tree, &Vector::zeros(m), &u));
        }
    }
    ProbedMap { fx, fu }
}

/// Orthonormal basis of Im M by modified Gram-Schmidt with one reorthogonalization
/// pass; a column is kept when its residual exceeds `rel` times the largest column norm.
pub fn range(m: &Mat, rel: f64) -> Mat {
    let scale = (0..m.ncols()).map(|j| m.column(j).norm()).fold(0.0, f64::max);
    let mut q: Vec<Vector> = Vec::new();
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        for _ in 0..2 {
            for b in &q {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let n = v.norm();
        if scale > 0.0 && n > rel * scale {
            q.push(v / n);
        }
    }
    Mat::from_fn(m.nrows(), q.len(), |r, c| q[c][r])
}

pub fn residual_sq(basis: &Mat, target: &Vector) -> f64 {
    (target - basis * (basis.transpose() * target)).norm_squared()
}

/// Null controllability from the probed map: every column of Fx lies in Im Fu.
pub fn probed_null_controllable(pm: &ProbedMap, rel: f64) -> bool {
    let basis = range(&pm.fu, 1e-10);
    (0..pm.fx.ncols()).all(|i| {
        let t = pm.fx.column(i).into_owned();
        let n = t.norm();
        n == 0.0 || residual_sq(&basis, &t).sqrt() <= rel * n
    })
}

pub fn probed_approx_controllable(pm: &ProbedMap) -> bool {
    range(&pm.fu, 1e-8).ncols() == pm.fu.nrows()
}

/// p_0^N = Σ_{n<N} Φ_n BBᵀ Φ_nᵀ with Φ_n = A_0^{-1}⋯A_n^{-1}.
pub fn gramian_closed_form(a: &[Mat], b: &Mat) -> Mat {
    let m = b.nrows();
    let mut phi = Mat::identity(m, m);
    let mut g = Mat::zeros(m, m);
    for an in a {
        phi = &phi * an.clone().try_inverse().unwrap();
        g += &phi * b * b.transpose() * phi.transpose();
    }
    g
}
