//! Backward stochastic Riccati difference schemes (BSRDS) for the two cases
//! where they are known to be solvable, and the ε → 0 controllability metric.
//!
//! * `NonRandom`: i.i.d. trend, A_n and C_{i,n} independent of the trend.
//! * `NoMultiplicativeNoise`: i.i.d. trend, C ≡ 0, A_n = A(n, L_n).
//!
//! Dual controls v_{n+1} ∈ R^{m×p} are stacked column by column into R^{mp},
//! so block j of α, η and v refers to column j of v.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::system::{self, DualControl, SwitchedSystem};
use crate::trend::PathTree;
use crate::Tolerances;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    NonRandom,
    NoMultiplicativeNoise,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::NonRandom => "non_random",
            Scheme::NoMultiplicativeNoise => "no_multiplicative_noise",
        }
    }
}

fn non_random_applies(sys: &SwitchedSystem) -> bool {
    sys.trend.iid_law().is_some() && sys.a.is_nonrandom() && sys.c.iter().all(|c| c.is_nonrandom())
}

fn c0_applies(sys: &SwitchedSystem) -> bool {
    sys.trend.iid_law().is_some() && sys.a.is_markovian() && sys.c_is_zero()
}

/// Picks the scheme for a system, preferring `NonRandom` when both apply.
pub fn select_scheme(sys: &SwitchedSystem) -> Result<Scheme> {
    if non_random_applies(sys) {
        Ok(Scheme::NonRandom)
    } else if c0_applies(sys) {
        Ok(Scheme::NoMultiplicativeNoise)
    } else {
        Err(Error::UnsupportedScheme(
            "no Riccati scheme covers this system (needs an iid trend with either \
             trend-independent A and C, or C = 0 and A depending on L_n only); \
             use the path-space oracle"
                .into(),
        ))
    }
}

/// Quantities specific to the C = 0 scheme, indexed by k = 0..=N.
#[derive(Clone, Debug)]
pub struct C0Aux {
    /// p_k = E[P_k | F_{k-1}] = Σ_l q_l P_k(l).
    pub p: Vec<Mat>,
    /// q_k = ᾱ_k^T η_k^{-1} ᾱ_k.
    pub q: Vec<Mat>,
    /// ᾱ_k (mp×m), block j = Σ_l q_l (δ_jl − q_j) P_k(l).
    pub alpha_bar: Vec<Mat>,
    /// η_k built from P_k (same as `eta[k-1]` for k ≥ 1).
    pub eta: Vec<Mat>,
}

#[derive(Clone, Debug)]
pub struct BsrdsSolution {
    pub scheme: Scheme,
    pub epsilon: f64,
    /// `p[n][l]` is P_n on {L_n = e_l}; the non-random scheme stores one matrix per step.
    pub p: Vec<Vec<Mat>>,
    /// `alpha[n][l]` (mp×m), used for the step n → n+1 on {L_n = e_l}.
    pub alpha: Vec<Vec<Mat>>,
    /// η_n (mp×mp), n = 0..N−1.
    pub eta: Vec<Mat>,
    /// `gain[n][l]` = η_n^{-1} α_n(l) (mp×m), the optimal feedback gain.
    pub gain: Vec<Vec<Mat>>,
    pub aux: Option<C0Aux>,
    initial: Vector,
}

impl BsrdsSolution {
    pub fn horizon(&self) -> usize {
        self.p.len() - 1
    }

    /// P_n on {L_n = e_state}.
    pub fn p_at(&self, n: usize, state: usize) -> &Mat {
        let fam = &self.p[n];
        if fam.len() == 1 { &fam[0] } else { &fam[state] }
    }

    pub fn alpha_at(&self, n: usize, state: usize) -> &Mat {
        let fam = &self.alpha[n];
        if fam.len() == 1 { &fam[0] } else { &fam[state] }
    }

    pub fn gain_at(&self, n: usize, state: usize) -> &Mat {
        let fam = &self.gain[n];
        if fam.len() == 1 { &fam[0] } else { &fam[state] }
    }

    /// P_0 averaged over the law of L_0 (equal to P_0(L_0) for a fixed start).
    pub fn p0(&self) -> Mat {
        collapse(&self.p[0], &self.initial)
    }

    /// P_0 on each starting state (a single entry for the non-random scheme).
    pub fn p0_per_state(&self) -> &[Mat] {
        &self.p[0]
    }
}

fn collapse(family: &[Mat], law: &Vector) -> Mat {
    if family.len() == 1 {
        return family[0].clone();
    }
    let m = family[0].nrows();
    family.iter().zip(law.iter()).fold(Mat::zeros(m, m), |acc, (p, &w)| acc + p * w)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::validation("epsilon", "must be positive"))
    }
}

fn inverse_or_err(a: &Mat, step: usize, state: Option<usize>) -> Result<Mat> {
    linalg::checked_inverse(a).ok_or_else(|| Error::SingularCoefficient {
        step,
        path: state.map(|s| vec![s + 1]).unwrap_or_default(),
    })
}

/// Stacked 𝒞 (mp×m): block j = Σ_l (δ_jl − q_j) q_l C_l.
pub fn stacked_noise(c: &[Mat], q: &Vector) -> Mat {
    let p = q.len();
    let m = c[0].nrows();
    let mut out = Mat::zeros(m * p, m);
    for j in 0..p {
        let mut block = Mat::zeros(m, m);
        for (l, cl) in c.iter().enumerate() {
            let w = (if j == l { 1.0 } else { 0.0 } - q[j]) * q[l];
            if w != 0.0 {
                block += cl * w;
            }
        }
        out.view_mut((j * m, 0), (m, m)).copy_from(&block);
    }
    out
}

/// Solves the non-random scheme.
pub fn solve_nonrandom(sys: &SwitchedSystem, eps: f64) -> Result<BsrdsSolution> {
    check_eps(eps)?;
    if !non_random_applies(sys) {
        return Err(Error::UnsupportedScheme(
            "the non-random scheme needs an iid trend and trend-independent A, C; \
             use the path-space oracle"
                .into(),
        ));
    }
    let q = sys.trend.iid_law().expect("iid checked");
    let (m, p, n_h) = (sys.m(), sys.p(), sys.horizon);
    let bbt = &sys.b * sys.b.transpose();
    let sigma = Mat::from_fn(p, p, |j, k| q[j] * (if j == k { 1.0 } else { 0.0 } - q[k]));

    // Σ = TᵀT with rows √q_l (e_l − q)ᵀ.
    let t = Mat::from_fn(p, p, |l, j| q[l].sqrt() * (if j == l { 1.0 } else { 0.0 } - q[j]));

    let mut ps = vec![vec![Mat::zeros(m, m)]; n_h + 1];
    // Square root of P_{n+1}: SᵀS = P_{n+1}.
    let mut root = Mat::zeros(0, m);
    let mut alphas = vec![Vec::new(); n_h];
    let mut gains = vec![Vec::new(); n_h];
    let mut etas = vec![Mat::zeros(0, 0); n_h];
    for n in (0..n_h).rev() {
        let a = sys.a.at_state(n, 0);
        let a_inv = inverse_or_err(&a, n, None)?;
        let cs: Vec<Mat> = sys.c.iter().map(|c| c.at_state(n, 0)).collect();
        let cal = stacked_noise(&cs, &q);
        let next = &ps[n + 1][0];
        let h = &a_inv * (next + &bbt) * a_inv.transpose();
        let alpha = &cal * &h;
        let mut eta = &alpha * cal.transpose();
        for j in 0..p {
            for k in 0..p {
                let w = sigma[(j, k)];
                let mut blk = eta.view_mut((j * m, k * m), (m, m));
                blk += next * w;
                if j == k {
                    for d in 0..m {
                        blk[(d, d)] += eps;
                    }
                }
            }
        }
        let eta = linalg::symmetrize(&eta);
        let (next_root, gain) = riccati_root(&root, &sys.b, &a_inv, &cal, &t, eps)?;
        root = next_root;
        ps[n][0] = linalg::symmetrize(&(root.transpose() * &root));
        alphas[n] = vec![alpha];
        gains[n] = vec![gain];
        etas[n] = eta;
    }
    Ok(BsrdsSolution {
        scheme: Scheme::NonRandom,
        epsilon: eps,
        p: ps,
        alpha: alphas,
        eta: etas,
        gain: gains,
        aux: None,
        initial: sys.trend.initial_law(),
    })
}

/// One step of the non-random scheme in square-root form.
///
/// With G = [S; Bᵀ] A^{-T} (so h = GᵀG) the matrix [[η, α], [αᵀ, h]] is FᵀF for
///
/// ```text
/// F = [ G 𝒞ᵀ   G ]
///     [ T ⊗ S  0 ]
///     [ √ε I   0 ]
/// ```
///
/// and P_n = h − αᵀη^{-1}α is R₂₂ᵀR₂₂ from the QR factorization of F. Forming
/// the Schur complement this way avoids the cancellation of the direct
/// subtraction when P_n is small compared with h. The gain η^{-1}α is R₁₁^{-1}R₁₂.
fn riccati_root(root: &Mat, b: &Mat, a_inv: &Mat, cal: &Mat, t: &Mat, eps: f64) -> Result<(Mat, Mat)> {
    let m = a_inv.nrows();
    let mp = cal.nrows();
    let g = linalg::vstack(&[root.clone(), b.transpose()]) * a_inv.transpose();
    let ts = t.kronecker(root);
    let rows = (g.nrows() + ts.nrows() + mp).max(mp + m);
    let mut f = Mat::zeros(rows, mp + m);
    f.view_mut((0, 0), (g.nrows(), mp)).copy_from(&(&g * cal.transpose()));
    f.view_mut((0, mp), (g.nrows(), m)).copy_from(&g);
    f.view_mut((g.nrows(), 0), (ts.nrows(), mp)).copy_from(&ts);
    let off = g.nrows() + ts.nrows();
    for d in 0..mp {
        f[(off + d, d)] = eps.sqrt();
    }
    let r = f.qr().r();
    let gain = r
        .view((0, 0), (mp, mp))
        .into_owned()
        .solve_upper_triangular(&r.view((0, mp), (mp, m)).into_owned())
        .ok_or_else(|| Error::Numerical("triangular factor of η is singular".into()))?;
    Ok((r.view((mp, mp), (m, m)).into_owned(), gain))
}

/// ᾱ, η, p = E[P], q = ᾱ^T η^{-1} ᾱ from a per-state family P(·).
fn c0_step(family: &[Mat], q: &Vector, eps: f64) -> Result<C0Step> {
    let p = q.len();
    let m = family[0].nrows();
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut alpha_bar = Mat::zeros(m * p, m);
    let mut eta = Mat::zeros(m * p, m * p);
    let mut mean = Mat::zeros(m, m);
    for (l, pl) in family.iter().enumerate() {
        if q[l] == 0.0 {
            continue;
        }
        mean += pl * q[l];
        for j in 0..p {
            let wj = q[l] * (delta(j, l) - q[j]);
            if wj != 0.0 {
                let mut blk = alpha_bar.view_mut((j * m, 0), (m, m));
                blk += pl * wj;
            }
            for k in 0..p {
                let w = q[l] * (q[j] - delta(j, l)) * (q[k] - delta(k, l));
                if w != 0.0 {
                    let mut blk = eta.view_mut((j * m, k * m), (m, m));
                    blk += pl * w;
                }
            }
        }
    }
    for d in 0..m * p {
        eta[(d, d)] += eps;
    }
    let eta = linalg::symmetrize(&eta);
    let gain = linalg::spd_solve(&eta, &alpha_bar, eps)?;
    let corr = linalg::symmetrize(&(alpha_bar.transpose() * &gain));
    Ok(C0Step { alpha_bar, eta, mean: linalg::symmetrize(&mean), corr, gain })
}

struct C0Step {
    alpha_bar: Mat,
    eta: Mat,
    mean: Mat,
    corr: Mat,
    /// η^{-1} ᾱ.
    gain: Mat,
}

/// Solves the scheme without multiplicative noise (C ≡ 0, A = A(n, L_n)).
pub fn solve_c0(sys: &SwitchedSystem, eps: f64) -> Result<BsrdsSolution> {
    check_eps(eps)?;
    if !c0_applies(sys) {
        return Err(Error::UnsupportedScheme(
            "the C = 0 scheme needs C ≡ 0, an iid trend and A depending on (n, L_n) only; \
             use the path-space oracle"
                .into(),
        ));
    }
    let q = sys.trend.iid_law().expect("iid checked");
    let (m, p, n_h) = (sys.m(), sys.p(), sys.horizon);
    let bbt = &sys.b * sys.b.transpose();

    let mut ps = vec![vec![Mat::zeros(m, m); p]; n_h + 1];
    let mut alphas = vec![Vec::new(); n_h];
    let mut gains = vec![Vec::new(); n_h];
    let mut etas = vec![Mat::zeros(0, 0); n_h];
    let mut aux = C0Aux {
        p: vec![Mat::zeros(m, m); n_h + 1],
        q: vec![Mat::zeros(m, m); n_h + 1],
        alpha_bar: vec![Mat::zeros(m * p, m); n_h + 1],
        eta: vec![Mat::zeros(m * p, m * p); n_h + 1],
    };
    for k in (0..=n_h).rev() {
        let C0Step { alpha_bar, eta, mean, corr, gain } = c0_step(&ps[k], &q, eps)?;
        if k == 0 {
            aux.p[0] = mean;
            aux.q[0] = corr;
            aux.alpha_bar[0] = alpha_bar;
            aux.eta[0] = eta;
            break;
        }
        let n = k - 1;
        let core = &mean + &bbt - &corr;
        let mut family = Vec::with_capacity(p);
        let mut alpha_fam = Vec::with_capacity(p);
        let mut gain_fam = Vec::with_capacity(p);
        for l in 0..p {
            let a_inv = inverse_or_err(&sys.a.at_state(n, l), n, Some(l))?;
            family.push(linalg::symmetrize(&(&a_inv * &core * a_inv.transpose())));
            alpha_fam.push(-(&alpha_bar * a_inv.transpose()));
            gain_fam.push(-(&gain * a_inv.transpose()));
        }
        ps[n] = family;
        alphas[n] = alpha_fam;
        gains[n] = gain_fam;
        etas[n] = eta.clone();
        aux.p[k] = mean;
        aux.q[k] = corr;
        aux.alpha_bar[k] = alpha_bar;
        aux.eta[k] = eta;
    }
    Ok(BsrdsSolution {
        scheme: Scheme::NoMultiplicativeNoise,
        epsilon: eps,
        p: ps,
        alpha: alphas,
        eta: etas,
        gain: gains,
        aux: Some(aux),
        initial: sys.trend.initial_law(),
    })
}

pub fn solve(sys: &SwitchedSystem, scheme: Scheme, eps: f64) -> Result<BsrdsSolution> {
    match scheme {
        Scheme::NonRandom => solve_nonrandom(sys, eps),
        Scheme::NoMultiplicativeNoise => solve_c0(sys, eps),
    }
}

/// Martingale part Q_{n−1} (m×mp) of P_n = p_n + Q_{n−1} diag(ΔM_n) in the
/// C = 0 scheme. Column block k (m×p) has column l equal to column k of P_n(e_l).
pub fn martingale_part(sol: &BsrdsSolution, n: usize) -> Mat {
    let fam = &sol.p[n];
    let m = fam[0].nrows();
    let p = fam.len();
    let mut q = Mat::zeros(m, m * p);
    for k in 0..m {
        for (l, pl) in fam.iter().enumerate() {
            q.set_column(k * p + l, &pl.column(k));
        }
    }
    q
}

/// Cost matrix of the zero dual control, U_0 with ⟨U_0 y, y⟩ = Σ E|B^T E[y_{n+1}|F_n]|²
/// at v = 0. Every P_0^ε lies between 0 and U_0, so U_0 sets the scale for
/// the metric's tolerances.
pub fn uncontrolled_cost_matrix(sys: &SwitchedSystem) -> Result<Mat> {
    let scheme = select_scheme(sys)?;
    let m = sys.m();
    let bbt = &sys.b * sys.b.transpose();
    match scheme {
        Scheme::NonRandom => {
            let mut u = Mat::zeros(m, m);
            for n in (0..sys.horizon).rev() {
                let a_inv = inverse_or_err(&sys.a.at_state(n, 0), n, None)?;
                u = linalg::symmetrize(&(&a_inv * (&u + &bbt) * a_inv.transpose()));
            }
            Ok(u)
        }
        Scheme::NoMultiplicativeNoise => {
            let q = sys.trend.iid_law().expect("iid checked");
            let p = sys.p();
            let mut fam = vec![Mat::zeros(m, m); p];
            for n in (0..sys.horizon).rev() {
                let mean = fam.iter().zip(q.iter()).fold(Mat::zeros(m, m), |acc, (u, &w)| acc + u * w);
                let core = mean + &bbt;
                let mut next = Vec::with_capacity(p);
                for l in 0..p {
                    let a_inv = inverse_or_err(&sys.a.at_state(n, l), n, Some(l))?;
                    next.push(linalg::symmetrize(&(&a_inv * &core * a_inv.transpose())));
                }
                fam = next;
            }
            Ok(collapse(&fam, &sys.trend.initial_law()))
        }
    }
}

/// Feedback v_{n+1} = η_n^{-1} α_n y_n on every internal node, and the cost
/// ε Σ E|v_{n+1}|² + Σ E|B^T E[y_{n+1}|F_n]|² it achieves.
pub fn optimal_feedback(
    sol: &BsrdsSolution,
    sys: &SwitchedSystem,
    y0: &Vector,
    tree: &PathTree,
) -> Result<(DualControl, f64)> {
    let (m, p) = (sys.m(), sys.p());
    if y0.len() != m {
        return Err(Error::Dimension(format!("y0 has length {}, expected {m}", y0.len())));
    }
    if tree.horizon() != sol.horizon() {
        return Err(Error::Dimension("tree horizon differs from the solution's".into()));
    }
    let mut v = DualControl::zeros(tree, m, p);
    let mut y = vec![Vector::zeros(m); tree.len()];
    for &r in tree.roots() {
        y[r] = y0.clone();
    }
    // Build v level by level: v at depth n needs y at depth n, which needs v above it.
    for n in 0..tree.horizon() {
        for &id in tree.level(n) {
            let state = tree.node(id).state;
            let stacked = sol.gain_at(n, state) * &y[id];
            v.v[id] = Mat::from_column_slice(m, p, stacked.as_slice());
        }
        let ys = system::simulate_dual_y(sys, y0, &v, tree)?;
        for &id in tree.level(n + 1) {
            y[id] = ys[id].clone();
        }
    }
    let cost = dual_cost(sys, &v, &y, tree, sol.epsilon);
    Ok((v, cost))
}

/// ε Σ E|v_{n+1}|² + Σ E|B^T E[y_{n+1}|F_n]|² for a given dual trajectory.
pub fn dual_cost(sys: &SwitchedSystem, v: &DualControl, y: &[Vector], tree: &PathTree, eps: f64) -> f64 {
    let bt = sys.b.transpose();
    let mut cost = 0.0;
    for n in 0..tree.horizon() {
        for &id in tree.level(n) {
            let mean = system::node_mean(y, tree, id);
            let prob = tree.node(id).prob;
            cost += prob * ((&bt * mean).norm_squared() + eps * v.v[id].norm_squared());
        }
    }
    cost
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsTraceEntry {
    pub epsilon: f64,
    pub p0: Mat,
}

#[derive(Clone, Debug)]
pub struct MetricResult {
    pub scheme: Scheme,
    /// Last iterate of the ε-trace, symmetrized.
    pub p0_limit: Mat,
    /// Last iterate per starting trend state (one entry for the non-random scheme).
    pub p0_per_state: Vec<Mat>,
    pub eps_trace: Vec<EpsTraceEntry>,
    pub converged: bool,
    pub rank: usize,
    pub lambda_min: f64,
    pub sqrt_lambda_min: f64,
    /// λ_min, clamped to 0 when not above the definiteness threshold.
    pub spec: f64,
    /// σ_max of the uncontrolled cost matrix U_0.
    pub reference_scale: f64,
    pub rank_threshold: f64,
    pub definiteness_threshold: f64,
    /// Null-controllability verdict; `None` when the trace did not stabilize.
    pub null_controllable: Option<bool>,
}

/// Runs the selected scheme along the ε grid and extracts the limiting metric.
///
/// Thresholds are relative to U_0 rather than to P_0 itself: when the system
/// is not controllable P_0^ε can shrink to 0 with ε, and a self-relative test
/// would then read noise as full rank.
pub fn metric_limit(sys: &SwitchedSystem, tol: &Tolerances) -> Result<MetricResult> {
    tol.validate()?;
    let scheme = select_scheme(sys)?;
    let u0 = uncontrolled_cost_matrix(sys)?;
    let scale = linalg::spectral_norm(&u0);
    let frob_scale = u0.norm();
    let mut trace = Vec::with_capacity(tol.eps_seq.len());
    let mut last = None;
    for &eps in &tol.eps_seq {
        let sol = solve(sys, scheme, eps)?;
        trace.push(EpsTraceEntry { epsilon: eps, p0: sol.p0() });
        last = Some(sol);
    }
    let last = last.expect("eps_seq is non-empty");
    let converged = match trace.len() {
        0 | 1 => false,
        k => {
            let diff = (&trace[k - 1].p0 - &trace[k - 2].p0).norm();
            if frob_scale == 0.0 { diff == 0.0 } else { diff < tol.convergence * frob_scale }
        }
    };
    let p0_limit = linalg::symmetrize(&trace.last().unwrap().p0);
    let rank_threshold = tol.rank * scale;
    let definiteness_threshold = tol.definiteness * scale;
    let rank = if scale > 0.0 { linalg::rank_with_scale(&p0_limit, tol.rank, scale) } else { 0 };
    let lambda_min = linalg::lambda_min(&p0_limit);
    let positive = scale > 0.0 && lambda_min > definiteness_threshold;
    Ok(MetricResult {
        scheme,
        p0_per_state: last.p0_per_state().iter().map(linalg::symmetrize).collect(),
        p0_limit,
        eps_trace: trace,
        converged,
        rank,
        lambda_min,
        sqrt_lambda_min: lambda_min.max(0.0).sqrt(),
        spec: if positive { lambda_min } else { 0.0 },
        reference_scale: scale,
        rank_threshold,
        definiteness_threshold,
        null_controllable: converged.then_some(positive),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::CoefficientMap;
    use crate::trend::{InitialLaw, TrendModel};

    fn phage(b: &[f64]) -> SwitchedSystem {
        let a = Mat::from_row_slice(2, 2, &[0.25, 0.5, 0.25, 0.75]);
        let c2 = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let z = CoefficientMap::zeros(2);
        SwitchedSystem::new(
            CoefficientMap::Constant(a),
            Mat::from_column_slice(2, 1, b),
            vec![z.clone(), CoefficientMap::Constant(c2), z.clone(), z],
            TrendModel::iid(&[0.25; 4], InitialLaw::Fixed(0)).unwrap(),
            2,
        )
        .unwrap()
    }

    #[test]
    fn phage_b2_matches_published_values() {
        let sol = solve_nonrandom(&phage(&[1.0, 1.0]), 1e-10).unwrap();
        let p0 = sol.p0();
        let expect = Mat::from_row_slice(2, 2, &[592.0, -192.0, -192.0, 64.0]);
        for i in 0..4 {
            assert!((p0[i] - expect[i]).abs() <= 0.01 * expect[i].abs(), "{p0}");
        }
        assert!((linalg::lambda_min(&p0) - 1.5647078).abs() < 1e-3);
    }

    #[test]
    fn identity_one_step() {
        let sys = SwitchedSystem::new(
            CoefficientMap::Constant(Mat::identity(2, 2)),
            Mat::identity(2, 2),
            vec![CoefficientMap::zeros(2), CoefficientMap::zeros(2)],
            TrendModel::iid(&[0.5, 0.5], InitialLaw::Fixed(0)).unwrap(),
            1,
        )
        .unwrap();
        for eps in [1.0, 1e-3, 1e-9] {
            let p0 = solve_nonrandom(&sys, eps).unwrap().p0();
            assert!((p0 - Mat::identity(2, 2)).amax() < 1e-12);
            let p0 = solve_c0(&sys, eps).unwrap().p0();
            assert!((p0 - Mat::identity(2, 2)).amax() < 1e-12);
        }
    }

    #[test]
    fn c0_identity_two_steps_gives_twice_identity() {
        let sys = SwitchedSystem::new(
            CoefficientMap::Trend(vec![Mat::identity(2, 2), Mat::identity(2, 2)]),
            Mat::identity(2, 2),
            vec![CoefficientMap::zeros(2), CoefficientMap::zeros(2)],
            TrendModel::iid(&[0.3, 0.7], InitialLaw::Fixed(1)).unwrap(),
            2,
        )
        .unwrap();
        assert_eq!(select_scheme(&sys).unwrap(), Scheme::NoMultiplicativeNoise);
        let p0 = solve_c0(&sys, 1e-12).unwrap().p0();
        assert!((p0 - Mat::identity(2, 2) * 2.0).amax() < 1e-9);
    }

    #[test]
    fn c0_nonrandom_a_has_trivial_martingale_part() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
        let b = Mat::from_row_slice(2, 1, &[1.0, 0.0]);
        let sys = SwitchedSystem::new(
            CoefficientMap::Trend(vec![a.clone(), a.clone(), a.clone()]),
            b.clone(),
            vec![CoefficientMap::zeros(2), CoefficientMap::zeros(2), CoefficientMap::zeros(2)],
            TrendModel::iid(&[0.2, 0.3, 0.5], InitialLaw::Fixed(0)).unwrap(),
            3,
        )
        .unwrap();
        let sol = solve_c0(&sys, 1e-6).unwrap();
        for n in 0..=3 {
            let q = martingale_part(&sol, n);
            let m = 2;
            for k in 0..m {
                for l in 1..3 {
                    assert!((q.column(k * 3 + l) - q.column(k * 3)).amax() < 1e-9);
                }
            }
        }
        let a_inv = a.try_inverse().unwrap();
        let bbt = &b * b.transpose();
        let mut det = Mat::zeros(2, 2);
        for _ in 0..3 {
            det = &a_inv * (&det + &bbt) * a_inv.transpose();
        }
        assert!((sol.p0() - &det).amax() < 1e-9 * det.amax());
    }

    #[test]
    fn martingale_part_reconstructs_p() {
        let sys = SwitchedSystem::new(
            CoefficientMap::Trend(vec![
                Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
                Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.5]),
            ]),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            vec![CoefficientMap::zeros(2), CoefficientMap::zeros(2)],
            TrendModel::iid(&[0.4, 0.6], InitialLaw::Fixed(0)).unwrap(),
            3,
        )
        .unwrap();
        let sol = solve_c0(&sys, 1e-4).unwrap();
        let aux = sol.aux.as_ref().unwrap();
        let q = sys.trend.iid_law().unwrap();
        for n in 1..=3 {
            let qm = martingale_part(&sol, n);
            for l in 0..2 {
                let mut dm = -q.clone();
                dm[l] += 1.0;
                let mut diag = Mat::zeros(4, 2);
                for k in 0..2 {
                    diag.view_mut((k * 2, k), (2, 1)).copy_from(&dm);
                }
                let rebuilt = &aux.p[n] + &qm * diag;
                assert!((rebuilt - sol.p_at(n, l)).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn unsupported_systems_are_routed_to_oracle() {
        let q0 = Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let sys = SwitchedSystem::new(
            CoefficientMap::Constant(Mat::identity(1, 1)),
            Mat::identity(1, 1),
            vec![CoefficientMap::Constant(Mat::identity(1, 1)), CoefficientMap::zeros(1)],
            TrendModel::markov(q0, InitialLaw::Fixed(0)).unwrap(),
            2,
        )
        .unwrap();
        assert!(matches!(select_scheme(&sys), Err(Error::UnsupportedScheme(_))));
        assert!(solve_nonrandom(&sys, 1e-3).is_err());
        assert!(solve_c0(&sys, 1e-3).is_err());
    }

    #[test]
    fn feedback_achieves_p0() {
        let sys = phage(&[1.0, 1.0]);
        let tree = sys.tree().unwrap();
        let sol = solve_nonrandom(&sys, 1e-6).unwrap();
        let y0 = Vector::from_vec(vec![1.0, 0.0]);
        let (_, cost) = optimal_feedback(&sol, &sys, &y0, &tree).unwrap();
        let expect = sol.p0()[(0, 0)];
        assert!((cost - expect).abs() <= 1e-8 * expect);
        let (v, cost0) = optimal_feedback(&sol, &sys, &Vector::zeros(2), &tree).unwrap();
        assert_eq!(cost0, 0.0);
        assert!(v.v.iter().all(|x| x.amax() == 0.0));
    }

    #[test]
    fn metric_for_phage_scenarios() {
        let tol = Tolerances::default();
        let r2 = metric_limit(&phage(&[1.0, 1.0]), &tol).unwrap();
        assert!(r2.converged);
        assert_eq!(r2.rank, 2);
        assert_eq!(r2.null_controllable, Some(true));
        assert!((r2.lambda_min - 1.5647078).abs() < 1e-3);
        let r1 = metric_limit(&phage(&[0.0, 1.0]), &tol).unwrap();
        assert!(r1.converged);
        assert!(r1.rank < 2);
        assert_eq!(r1.null_controllable, Some(false));
        assert_eq!(r1.spec, 0.0);
    }
}
