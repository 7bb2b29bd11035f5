//! Exact controllability oracle on the finite path space.
//!
//! Square-integrable random variables over the path tree are represented by
//! probability-weighted coordinates (value · √prob), so the Euclidean inner
//! product is the L² one and matrix transposes are true adjoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::system::{self, ControlPolicy, DualControl, RandomVector, SwitchedSystem};
use crate::trend::PathTree;
use crate::Tolerances;

/// Truncation used for least-squares solves inside the oracle.
const LSTSQ_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct AdjointSolution {
    /// Y on every node (Y_N = ξ on the leaves).
    pub y: Vec<Vector>,
    /// Z_n on every internal node (m×p); zero on leaves.
    pub z: Vec<Mat>,
    pub xi: RandomVector,
    /// Largest martingale-representation residual over all nodes.
    pub max_residual: f64,
}

/// Backward adjoint scheme: Y_N = ξ,
/// Y_n = A_n^T E[Y_{n+1}|F_n] + Σ_i C_{i,n}^T Z_n S_i,
/// with Z_n fitted by least squares to Y_{n+1} − E[Y_{n+1}|F_n] = Z_n ΔM_{n+1}.
pub fn adjoint_backward(sys: &SwitchedSystem, xi: &RandomVector, tree: &PathTree) -> Result<AdjointSolution> {
    let (m, p) = (sys.m(), sys.p());
    if xi.values.len() != tree.leaves().len() {
        return Err(Error::Dimension(format!(
            "terminal value has {} entries, tree has {} leaves",
            xi.values.len(),
            tree.leaves().len()
        )));
    }
    let mut y = vec![Vector::zeros(m); tree.len()];
    let mut z = vec![Mat::zeros(m, p); tree.len()];
    for (k, &id) in tree.leaves().iter().enumerate() {
        if xi.values[k].len() != m {
            return Err(Error::Dimension(format!("terminal value must have length {m}")));
        }
        y[id] = xi.values[k].clone();
    }
    let mut max_residual = 0.0f64;
    for n in (0..tree.horizon()).rev() {
        for &id in tree.level(n) {
            let node = tree.node(id);
            let mean = system::node_mean(&y, tree, id);
            let kids = &node.children;
            let mut dm = Mat::zeros(p, kids.len());
            let mut dev = Mat::zeros(m, kids.len());
            for (c, &ch) in kids.iter().enumerate() {
                dm.set_column(c, &sys.trend.delta_m(node.state, tree.node(ch).state));
                dev.set_column(c, &(&y[ch] - &mean));
            }
            let zn = &dev * linalg::pinv(&dm, LSTSQ_TOL);
            max_residual = max_residual.max((&dev - &zn * &dm).amax());
            let (a, cs) = sys.coefficients_at(tree, id);
            let sigma = sys.trend.second_moment_matrix(node.state);
            let zs = &zn * &sigma;
            let mut yn = a.transpose() * &mean;
            for (i, ci) in cs.iter().enumerate() {
                yn += ci.transpose() * zs.column(i);
            }
            y[id] = yn;
            z[id] = zn;
        }
    }
    Ok(AdjointSolution { y, z, xi: xi.clone(), max_residual })
}

/// Left minus right side of the duality identity
/// E⟨X_N, ξ⟩ = E⟨x, Y_0⟩ + Σ_n E⟨u_{n+1}, B^T E[Y_{n+1}|F_n]⟩.
pub fn duality_residual(
    sys: &SwitchedSystem,
    tree: &PathTree,
    x0: &Vector,
    u: &ControlPolicy,
    xi: &RandomVector,
) -> Result<DualityResidual> {
    let x = system::simulate_x(sys, x0, u, tree)?;
    let adj = adjoint_backward(sys, xi, tree)?;
    let mut residual = 0.0;
    let mut magnitude = 0.0;
    let mut add = |t: f64| {
        residual += t;
        magnitude += t.abs();
    };
    for (k, &id) in tree.leaves().iter().enumerate() {
        add(tree.node(id).prob * x[id].dot(&xi.values[k]));
    }
    for &r in tree.roots() {
        add(-tree.node(r).prob * x0.dot(&adj.y[r]));
    }
    let bt = sys.b.transpose();
    for n in 0..tree.horizon() {
        for &id in tree.level(n) {
            let mean = system::node_mean(&adj.y, tree, id);
            add(-tree.node(id).prob * u.u[id].dot(&(&bt * mean)));
        }
    }
    Ok(DualityResidual { residual, magnitude })
}

/// Left minus right side of the duality identity, with the sum of the absolute
/// values of all terms as the scale rounding errors are measured against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityResidual {
    pub residual: f64,
    pub magnitude: f64,
}

impl DualityResidual {
    /// |residual| / max(1, magnitude).
    pub fn relative(&self) -> f64 {
        self.residual.abs() / self.magnitude.max(1.0)
    }
}

/// Weighted coordinates of a random vector on the leaves.
pub fn weighted_leaves(xi: &RandomVector, tree: &PathTree) -> Vector {
    let m = xi.values.first().map(|v| v.len()).unwrap_or(0);
    let mut out = Vector::zeros(m * xi.values.len());
    for (k, &id) in tree.leaves().iter().enumerate() {
        let w = tree.node(id).prob.sqrt();
        out.rows_mut(k * m, m).copy_from(&(&xi.values[k] * w));
    }
    out
}

/// Inverse of [`weighted_leaves`].
pub fn unweighted_leaves(coords: &Vector, tree: &PathTree, m: usize) -> RandomVector {
    let values = tree
        .leaves()
        .iter()
        .enumerate()
        .map(|(k, &id)| coords.rows(k * m, m) / tree.node(id).prob.sqrt())
        .collect();
    RandomVector { values }
}

/// R1: weighted controls → weighted X_N^{0,u};  R2: x → weighted X_N^{x,0}.
#[derive(Clone, Debug)]
pub struct LinearOperatorPair {
    pub r1: Mat,
    pub r2: Mat,
    /// Internal node and control component of each R1 column.
    pub control_index: Vec<(usize, usize)>,
    /// Leaf node ids in codomain block order.
    pub leaf_ids: Vec<usize>,
    pub m: usize,
    pub d: usize,
}

pub fn control_coordinate_count(tree: &PathTree, width: usize) -> usize {
    width * (0..tree.horizon()).map(|n| tree.level(n).len()).sum::<usize>()
}

fn internal_offsets(tree: &PathTree, width: usize) -> (Vec<usize>, usize) {
    let mut off = vec![usize::MAX; tree.len()];
    let mut next = 0;
    for n in 0..tree.horizon() {
        for &id in tree.level(n) {
            off[id] = next;
            next += width;
        }
    }
    (off, next)
}

pub fn build_operators(sys: &SwitchedSystem, tree: &PathTree, tol: &Tolerances) -> Result<LinearOperatorPair> {
    let (m, d) = (sys.m(), sys.d());
    if tree.horizon() == 0 {
        return Err(Error::validation("horizon", "controllability operators need N ≥ 1"));
    }
    let rows = m * tree.leaves().len();
    if rows > tol.codomain_cap {
        return Err(Error::Capacity { what: "operator codomain (m·leaves)".into(), size: rows, cap: tol.codomain_cap });
    }
    let (off, nu) = internal_offsets(tree, d);
    if nu > tol.control_cap {
        return Err(Error::Capacity { what: "control coordinates".into(), size: nu, cap: tol.control_cap });
    }
    let width = m + nu;
    let mut t: Vec<Option<Mat>> = vec![None; tree.len()];
    for &r in tree.roots() {
        let mut root = Mat::zeros(m, width);
        root.view_mut((0, 0), (m, m)).fill_with_identity();
        t[r] = Some(root);
    }
    for n in 0..tree.horizon() {
        for &id in tree.level(n) {
            let ta = t[id].take().expect("parent map computed");
            let node = tree.node(id);
            let (a, cs) = sys.coefficients_at(tree, id);
            let bw = &sys.b / node.prob.sqrt();
            for &ch in &node.children {
                let dm = sys.trend.delta_m(node.state, tree.node(ch).state);
                let mut step = a.clone();
                for (i, ci) in cs.iter().enumerate() {
                    if dm[i] != 0.0 {
                        step += ci * dm[i];
                    }
                }
                let mut tc = &step * &ta;
                let mut blk = tc.view_mut((0, m + off[id]), (m, d));
                blk += &bw;
                t[ch] = Some(tc);
            }
        }
    }
    let leaf_ids = tree.leaves().to_vec();
    let mut full = Mat::zeros(rows, width);
    for (k, &id) in leaf_ids.iter().enumerate() {
        let w = tree.node(id).prob.sqrt();
        full.view_mut((k * m, 0), (m, width)).copy_from(&(t[id].as_ref().expect("leaf map") * w));
    }
    let mut control_index = vec![(0, 0); nu];
    for n in 0..tree.horizon() {
        for &id in tree.level(n) {
            for k in 0..d {
                control_index[off[id] + k] = (id, k);
            }
        }
    }
    Ok(LinearOperatorPair {
        r2: full.columns(0, m).into_owned(),
        r1: full.columns(m, nu).into_owned(),
        control_index,
        leaf_ids,
        m,
        d,
    })
}

impl LinearOperatorPair {
    /// Converts weighted control coordinates back to a policy.
    pub fn policy(&self, tree: &PathTree, coords: &Vector) -> ControlPolicy {
        let mut pol = ControlPolicy::zeros(tree, self.d);
        for (c, &(id, k)) in self.control_index.iter().enumerate() {
            pol.u[id][k] = coords[c] / tree.node(id).prob.sqrt();
        }
        pol
    }

    fn range(&self, tol: f64) -> Mat {
        linalg::range_basis(&self.r1, tol)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DirectionCheck {
    /// Index of the basis vector e_i (0-based).
    pub direction: usize,
    /// |(I − Π_{Im R1}) R2 e_i| / |R2 e_i|  (0 when R2 e_i = 0).
    pub relative_residual: f64,
    /// Minimal E|X_N^{e_i,u}|² over predictable u.
    pub min_terminal_energy: f64,
}

#[derive(Clone, Debug)]
pub struct NullDecision {
    pub controllable: bool,
    pub directions: Vec<DirectionCheck>,
    pub max_relative_residual: f64,
    /// tolerance − max residual; negative when a direction cannot be steered.
    pub margin: f64,
    /// Steering policy per basis direction (exact when controllable).
    pub steering: Vec<ControlPolicy>,
}

/// Null controllability as the range inclusion Im R2 ⊆ Im R1, tested on each basis vector.
pub fn decide_null_controllable(
    ops: &LinearOperatorPair,
    tree: &PathTree,
    tol: &Tolerances,
) -> NullDecision {
    let basis = ops.range(tol.rank);
    let r1_pinv = linalg::pinv(&ops.r1, tol.rank);
    let mut directions = Vec::with_capacity(ops.m);
    let mut steering = Vec::with_capacity(ops.m);
    let mut worst = 0.0f64;
    for i in 0..ops.m {
        let target = ops.r2.column(i).into_owned();
        let resid = &target - &basis * (basis.transpose() * &target);
        let tn = target.norm();
        let rel = if tn == 0.0 { 0.0 } else { resid.norm() / tn };
        worst = worst.max(rel);
        directions.push(DirectionCheck {
            direction: i,
            relative_residual: rel,
            min_terminal_energy: resid.norm_squared(),
        });
        steering.push(ops.policy(tree, &(-(&r1_pinv * &target))));
    }
    NullDecision {
        controllable: worst <= tol.residual,
        directions,
        max_relative_residual: worst,
        margin: tol.residual - worst,
        steering,
    }
}

/// min_u E|X_N^{x,u}|² and a minimizing policy.
pub fn min_terminal_energy(ops: &LinearOperatorPair, tree: &PathTree, x: &Vector, tol: f64) -> (f64, ControlPolicy) {
    let target = &ops.r2 * x;
    let coords = -(linalg::pinv(&ops.r1, tol) * &target);
    let resid = &target + &ops.r1 * &coords;
    (resid.norm_squared(), ops.policy(tree, &coords))
}

/// min_u E|X_N^{x,u} − ξ|².
pub fn min_distance_to_target(
    ops: &LinearOperatorPair,
    tree: &PathTree,
    x: &Vector,
    xi: &RandomVector,
    tol: f64,
) -> f64 {
    let target = weighted_leaves(xi, tree) - &ops.r2 * x;
    let basis = ops.range(tol);
    (&target - &basis * (basis.transpose() * &target)).norm_squared()
}

/// min over both x and u of E|X_N^{x,u} − ξ|².
pub fn min_distance_any_start(ops: &LinearOperatorPair, tree: &PathTree, xi: &RandomVector, tol: f64) -> f64 {
    let both = linalg::hstack(&[ops.r1.clone(), ops.r2.clone()]);
    let basis = linalg::range_basis(&both, tol);
    let target = weighted_leaves(xi, tree);
    (&target - &basis * (basis.transpose() * &target)).norm_squared()
}

/// Approximate controllability: R1 is onto the weighted leaf space.
pub fn decide_approx_controllable(ops: &LinearOperatorPair, tol: &Tolerances) -> bool {
    linalg::rank(&ops.r1, tol.rank) == ops.r1.nrows()
}

/// The controllability quadratic form
/// ⟨F y0, y0⟩ = min_v ε Σ E|v_{n+1}|² + Σ E|B^T E[y_{n+1}|F_n]|².
#[derive(Clone, Debug)]
pub struct CtrlForm {
    pub epsilon: f64,
    pub form: Mat,
    /// Cost matrix of v = 0, an upper bound for `form`.
    pub reference: Mat,
    fy: Mat,
    fv: Mat,
    offsets: Vec<usize>,
    m: usize,
    p: usize,
}

pub fn ctrl_form(sys: &SwitchedSystem, tree: &PathTree, eps: f64, tol: &Tolerances) -> Result<CtrlForm> {
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::validation("epsilon", "must be nonnegative"));
    }
    let (m, p, d) = (sys.m(), sys.p(), sys.d());
    let width_v = m * p;
    let (off, nv) = internal_offsets(tree, width_v);
    if nv > tol.control_cap {
        return Err(Error::Capacity { what: "dual control coordinates".into(), size: nv, cap: tol.control_cap });
    }
    let internal = nv / width_v.max(1);
    let obs_rows = d * internal;
    let reg_rows = if eps > 0.0 { nv } else { 0 };
    let width = m + nv;
    let mut f = Mat::zeros(obs_rows + reg_rows, width);
    let mut t: Vec<Option<Mat>> = vec![None; tree.len()];
    for &r in tree.roots() {
        let mut root = Mat::zeros(m, width);
        root.view_mut((0, 0), (m, m)).fill_with_identity();
        t[r] = Some(root);
    }
    let bt = sys.b.transpose();
    let mut row = 0;
    for n in 0..tree.horizon() {
        for &id in tree.level(n) {
            let ta = t[id].take().expect("parent map computed");
            let node = tree.node(id);
            let a_inv_t = sys.a_inverse_at(tree, id)?.transpose();
            let (_, cs) = sys.coefficients_at(tree, id);
            let sigma = sys.trend.second_moment_matrix(node.state);
            // mean = A^{-T} y − Σ_j A^{-T} K_j v_j, K_j = Σ_i Σ_ij C_i^T
            let mut mean = &a_inv_t * &ta;
            for j in 0..p {
                let mut kj = Mat::zeros(m, m);
                for (i, ci) in cs.iter().enumerate() {
                    if sigma[(i, j)] != 0.0 {
                        kj += ci.transpose() * sigma[(i, j)];
                    }
                }
                let mut blk = mean.view_mut((0, m + off[id] + j * m), (m, m));
                blk -= &a_inv_t * kj;
            }
            let w = node.prob.sqrt();
            f.view_mut((row, 0), (d, width)).copy_from(&(&bt * &mean * w));
            row += d;
            if eps > 0.0 {
                let rw = (eps * node.prob).sqrt();
                let base = obs_rows + off[id];
                for k in 0..width_v {
                    f[(base + k, m + off[id] + k)] = rw;
                }
            }
            for &ch in &node.children {
                let dm = sys.trend.delta_m(node.state, tree.node(ch).state);
                let mut tc = mean.clone();
                for j in 0..p {
                    if dm[j] != 0.0 {
                        let mut blk = tc.view_mut((0, m + off[id] + j * m), (m, m));
                        for k in 0..m {
                            blk[(k, k)] += dm[j];
                        }
                    }
                }
                t[ch] = Some(tc);
            }
        }
    }
    let fy = f.columns(0, m).into_owned();
    let fv = f.columns(m, nv).into_owned();
    let basis = linalg::range_basis(&fv, tol.rank.min(1e-10));
    let resid = &fy - &basis * (basis.transpose() * &fy);
    let form = linalg::symmetrize(&(resid.transpose() * &resid));
    let reference = linalg::symmetrize(&(fy.transpose() * &fy));
    Ok(CtrlForm { epsilon: eps, form, reference, fy, fv, offsets: off, m, p })
}

impl CtrlForm {
    pub fn value(&self, y0: &Vector) -> f64 {
        y0.dot(&(&self.form * y0))
    }

    /// Min-norm minimizing dual control for `y0`.
    pub fn minimizer(&self, tree: &PathTree, y0: &Vector) -> DualControl {
        let coords = -(linalg::pinv(&self.fv, 1e-10) * (&self.fy * y0));
        let mut v = DualControl::zeros(tree, self.m, self.p);
        for (id, &o) in self.offsets.iter().enumerate() {
            if o != usize::MAX {
                v.v[id] = Mat::from_column_slice(self.m, self.p, coords.rows(o, self.m * self.p).as_slice());
            }
        }
        v
    }
}

/// ‖y0‖²_ctrl (no regularization) and a minimizing dual control.
pub fn ctrl_norm_sq(sys: &SwitchedSystem, y0: &Vector, tree: &PathTree, tol: &Tolerances) -> Result<(f64, DualControl)> {
    if y0.len() != sys.m() {
        return Err(Error::Dimension(format!("y0 has length {}, expected {}", y0.len(), sys.m())));
    }
    let form = ctrl_form(sys, tree, 0.0, tol)?;
    Ok((form.value(y0), form.minimizer(tree, y0)))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DualKernelResult {
    pub null_controllable: bool,
    pub approx_controllable: bool,
    /// Dimension of {ξ : B^T E[Y_n|F_{n−1}] = 0 for n = 1..N}.
    pub kernel_dim: usize,
    /// |Y_0 restricted to the kernel| / |Y_0 map|.
    pub y0_on_kernel: f64,
    /// Whether every kernel element satisfies E[ξ|F_{n−1}] = 0 for all n = 1..N.
    pub conditional_mean_condition: bool,
}

/// Dual characterization via the adjoint scheme.
pub fn dual_kernel_test(sys: &SwitchedSystem, tree: &PathTree, tol: &Tolerances) -> Result<DualKernelResult> {
    let m = sys.m();
    let leaves = tree.leaves();
    let cols = m * leaves.len();
    if cols > tol.codomain_cap {
        return Err(Error::Capacity { what: "terminal variable space (m·leaves)".into(), size: cols, cap: tol.codomain_cap });
    }
    let internal: Vec<usize> = (0..tree.horizon()).flat_map(|n| tree.level(n).iter().copied()).collect();
    let d = sys.d();
    let roots = tree.roots();
    let mut constraint = Mat::zeros(d * internal.len(), cols);
    let mut y0map = Mat::zeros(m * roots.len(), cols);
    let bt = sys.b.transpose();
    for c in 0..cols {
        let mut e = Vector::zeros(cols);
        e[c] = 1.0;
        let xi = unweighted_leaves(&e, tree, m);
        let adj = adjoint_backward(sys, &xi, tree)?;
        for (r, &id) in internal.iter().enumerate() {
            let mean = system::node_mean(&adj.y, tree, id);
            let val = &bt * mean * tree.node(id).prob.sqrt();
            constraint.view_mut((r * d, c), (d, 1)).copy_from(&val);
        }
        for (r, &id) in roots.iter().enumerate() {
            let val = &adj.y[id] * tree.node(id).prob.sqrt();
            y0map.view_mut((r * m, c), (m, 1)).copy_from(&val);
        }
    }
    let kernel = if constraint.nrows() == 0 {
        Mat::identity(cols, cols)
    } else {
        linalg::null_space(&constraint, tol.rank)
    };
    let scale = linalg::spectral_norm(&y0map);
    let on_kernel = if kernel.ncols() == 0 || scale == 0.0 {
        0.0
    } else {
        linalg::spectral_norm(&(&y0map * &kernel)) / scale
    };
    // E[ξ|F_{n−1}] for kernel elements, n = 1..N.
    let mut cond_ok = true;
    for k in 0..kernel.ncols() {
        let xi = unweighted_leaves(&kernel.column(k).into_owned(), tree, m);
        let mut field = vec![Vector::zeros(m); tree.len()];
        for (j, &id) in leaves.iter().enumerate() {
            field[id] = xi.values[j].clone();
        }
        let size = xi.values.iter().map(|v| v.amax()).fold(0.0, f64::max);
        for n in (0..tree.horizon()).rev() {
            for &id in tree.level(n) {
                field[id] = system::node_mean(&field, tree, id);
                if field[id].amax() > tol.residual * size.max(1e-300) {
                    cond_ok = false;
                }
            }
        }
    }
    Ok(DualKernelResult {
        null_controllable: on_kernel <= tol.residual,
        approx_controllable: kernel.ncols() == 0,
        kernel_dim: kernel.ncols(),
        y0_on_kernel: on_kernel,
        conditional_mean_condition: cond_ok,
    })
}

/// Constants of the observability inequality |Y_0|² ≤ k·E Σ|B^T E[Y_n|F_{n−1}]|².
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ObservabilityConstant {
    /// sup over E|ξ|² = 1 of E|Y_0|².
    pub sup_y0_sq: f64,
    pub lambda_min: f64,
    /// sup_y0_sq / λ_min; `None` when the form is not definite.
    pub k: Option<f64>,
    /// 1 / λ_min, the smallest k valid for every ξ; `None` when not definite.
    pub k_sharp: Option<f64>,
}

pub fn observability_constant(
    sys: &SwitchedSystem,
    tree: &PathTree,
    form: &CtrlForm,
    tol: &Tolerances,
) -> Result<ObservabilityConstant> {
    let m = sys.m();
    let cols = m * tree.leaves().len();
    if cols > tol.codomain_cap {
        return Err(Error::Capacity { what: "terminal variable space (m·leaves)".into(), size: cols, cap: tol.codomain_cap });
    }
    let roots = tree.roots();
    let mut y0map = Mat::zeros(m * roots.len(), cols);
    for c in 0..cols {
        let mut e = Vector::zeros(cols);
        e[c] = 1.0;
        let adj = adjoint_backward(sys, &unweighted_leaves(&e, tree, m), tree)?;
        for (r, &id) in roots.iter().enumerate() {
            y0map.view_mut((r * m, c), (m, 1)).copy_from(&(&adj.y[id] * tree.node(id).prob.sqrt()));
        }
    }
    let sup = linalg::spectral_norm(&y0map).powi(2);
    let lmin = linalg::lambda_min(&form.form);
    let thr = tol.definiteness * linalg::spectral_norm(&form.reference);
    let definite = lmin > thr && thr > 0.0;
    Ok(ObservabilityConstant {
        sup_y0_sq: sup,
        lambda_min: lmin,
        k: definite.then(|| sup / lmin),
        k_sharp: definite.then(|| 1.0 / lmin),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::CoefficientMap;
    use crate::trend::{InitialLaw, TrendModel};

    fn half() -> TrendModel {
        TrendModel::iid(&[0.5, 0.5], InitialLaw::Fixed(0)).unwrap()
    }

    fn swap() -> Mat {
        Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    fn null_not_approx() -> SwitchedSystem {
        let c1 = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        SwitchedSystem::new(
            CoefficientMap::Constant(swap()),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            vec![CoefficientMap::Constant(c1.clone()), CoefficientMap::Constant(-c1)],
            half(),
            2,
        )
        .unwrap()
    }

    fn kalman_not_null() -> SwitchedSystem {
        SwitchedSystem::new(
            CoefficientMap::Constant(swap()),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            vec![CoefficientMap::Constant(swap()), CoefficientMap::Constant(-swap())],
            half(),
            2,
        )
        .unwrap()
    }

    fn e12(tree: &PathTree) -> RandomVector {
        RandomVector::from_fn(tree, |id| {
            let s = if tree.node(id).state == 0 { 1.0 } else { -1.0 };
            Vector::from_vec(vec![s, 0.0])
        })
    }

    #[test]
    fn zero_terminal_gives_zero_adjoint() {
        let sys = kalman_not_null();
        let tree = sys.tree().unwrap();
        let adj = adjoint_backward(&sys, &RandomVector::zeros(&tree, 2), &tree).unwrap();
        assert!(adj.y.iter().all(|v| v.amax() == 0.0));
        assert!(adj.z.iter().all(|v| v.amax() == 0.0));
    }

    #[test]
    fn constant_terminal_without_noise() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let sys = SwitchedSystem::new(
            CoefficientMap::Constant(a.clone()),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            vec![CoefficientMap::zeros(2), CoefficientMap::zeros(2)],
            half(),
            3,
        )
        .unwrap();
        let tree = sys.tree().unwrap();
        let c = Vector::from_vec(vec![1.0, -1.0]);
        let adj = adjoint_backward(&sys, &RandomVector::from_fn(&tree, |_| c.clone()), &tree).unwrap();
        for id in 0..tree.len() {
            let k = 3 - tree.node(id).depth;
            let expect = (0..k).fold(c.clone(), |acc, _| a.transpose() * acc);
            assert!((&adj.y[id] - expect).amax() < 1e-12);
            assert!(adj.z[id].amax() < 1e-12);
        }
    }

    #[test]
    fn single_path_one_step_operators() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Mat::from_row_slice(2, 1, &[5.0, 6.0]);
        let sys = SwitchedSystem::deterministic(CoefficientMap::Constant(a.clone()), b.clone(), 1).unwrap();
        let tree = sys.tree().unwrap();
        let ops = build_operators(&sys, &tree, &Tolerances::default()).unwrap();
        assert_eq!(ops.r1, b);
        assert_eq!(ops.r2, a);
    }

    #[test]
    fn null_not_approx_example() {
        let sys = null_not_approx();
        let tree = sys.tree().unwrap();
        let tol = Tolerances::default();
        let ops = build_operators(&sys, &tree, &tol).unwrap();
        let dec = decide_null_controllable(&ops, &tree, &tol);
        assert!(dec.controllable);
        assert!(dec.max_relative_residual < 1e-12);
        assert!(!decide_approx_controllable(&ops, &tol));
        let kt = dual_kernel_test(&sys, &tree, &tol).unwrap();
        assert!(kt.null_controllable && !kt.approx_controllable);
        let best = min_distance_any_start(&ops, &tree, &e12(&tree), tol.rank);
        assert!((best - 0.5).abs() < 1e-12, "{best}");
        // steering controls really steer
        for (i, pol) in dec.steering.iter().enumerate() {
            let mut x0 = Vector::zeros(2);
            x0[i] = 1.0;
            let x = system::simulate_x(&sys, &x0, pol, &tree).unwrap();
            for &l in tree.leaves() {
                assert!(x[l].amax() < 1e-12);
            }
        }
    }

    #[test]
    fn kalman_not_null_example() {
        let sys = kalman_not_null();
        let tree = sys.tree().unwrap();
        let tol = Tolerances::default();
        let ops = build_operators(&sys, &tree, &tol).unwrap();
        let dec = decide_null_controllable(&ops, &tree, &tol);
        assert!(!dec.controllable);
        let (e, _) = min_terminal_energy(&ops, &tree, &Vector::from_vec(vec![1.0, 0.0]), tol.rank);
        assert!((e - 2.0).abs() < 1e-12);
        let kt = dual_kernel_test(&sys, &tree, &tol).unwrap();
        assert!(!kt.null_controllable && !kt.approx_controllable);
    }

    #[test]
    fn ctrl_norm_of_null_not_approx_example() {
        let sys = null_not_approx();
        let tree = sys.tree().unwrap();
        let tol = Tolerances::default();
        let form = ctrl_form(&sys, &tree, 0.0, &tol).unwrap();
        let expect = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        assert!((&form.form - expect).amax() < 1e-12, "{}", form.form);
        let (val, v) = ctrl_norm_sq(&sys, &Vector::from_vec(vec![0.0, 1.0]), &tree, &tol).unwrap();
        assert!((val - 0.5).abs() < 1e-12);
        let y = system::simulate_dual_y(&sys, &Vector::from_vec(vec![0.0, 1.0]), &v, &tree).unwrap();
        let achieved = crate::bsrds::dual_cost(&sys, &v, &y, &tree, 0.0);
        assert!((achieved - 0.5).abs() < 1e-12);
        assert_eq!(ctrl_norm_sq(&sys, &Vector::zeros(2), &tree, &tol).unwrap().0, 0.0);
    }

    #[test]
    fn blind_system_fails_both_tests() {
        let sys = SwitchedSystem::new(
            CoefficientMap::Constant(Mat::identity(2, 2)),
            Mat::zeros(2, 1),
            vec![CoefficientMap::zeros(2), CoefficientMap::zeros(2)],
            half(),
            1,
        )
        .unwrap();
        let tree = sys.tree().unwrap();
        let kt = dual_kernel_test(&sys, &tree, &Tolerances::default()).unwrap();
        assert!(!kt.null_controllable && !kt.approx_controllable);
    }

    #[test]
    fn operator_caps() {
        let sys = kalman_not_null();
        let tree = sys.tree().unwrap();
        let tol = Tolerances { codomain_cap: 4, ..Tolerances::default() };
        assert!(matches!(build_operators(&sys, &tree, &tol), Err(Error::Capacity { .. })));
        let tol = Tolerances { control_cap: 2, ..Tolerances::default() };
        assert!(matches!(build_operators(&sys, &tree, &tol), Err(Error::Capacity { .. })));
    }
}
