//! Kalman rank, the deterministic Gramian, subspace algebra and the
//! invariant-subspace necessary condition (N1).

use serde::{Deserialize, Serialize};

use crate::bsrds::stacked_noise;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::system::SwitchedSystem;

/// A linear subspace of R^m held as an orthonormal basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: Mat,
}

impl Subspace {
    /// Span of the columns of `m`.
    pub fn span(m: &Mat, tol: f64) -> Self {
        Self { basis: linalg::range_basis(m, tol) }
    }

    /// Span of the columns of `m`, ignoring directions below `tol·scale`.
    pub fn span_with_scale(m: &Mat, tol: f64, scale: f64) -> Self {
        Self { basis: linalg::range_basis_with_scale(m, tol, scale) }
    }

    pub fn whole(m: usize) -> Self {
        Self { basis: Mat::identity(m, m) }
    }

    pub fn zero(m: usize) -> Self {
        Self { basis: Mat::zeros(m, 0) }
    }

    pub fn kernel(m: &Mat, tol: f64) -> Self {
        Self { basis: linalg::null_space(m, tol) }
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn projector(&self) -> Mat {
        &self.basis * self.basis.transpose()
    }

    pub fn complement(&self) -> Self {
        Self { basis: linalg::complement(&self.basis, self.ambient()) }
    }

    pub fn sum(&self, other: &Self, tol: f64) -> Self {
        Self::span_with_scale(&linalg::hstack(&[self.basis.clone(), other.basis.clone()]), tol, 1.0)
    }

    /// S ∩ T = (S^⊥ + T^⊥)^⊥.
    pub fn intersection(&self, other: &Self, tol: f64) -> Self {
        self.complement().sum(&other.complement(), tol).complement()
    }

    /// {x : M x ∈ self} = ker((I − Π) M).
    pub fn preimage(&self, m: &Mat, tol: f64) -> Self {
        let n = self.ambient();
        let resid = (Mat::identity(n, n) - self.projector()) * m;
        Self { basis: linalg::null_space_with_scale(&resid, tol, linalg::spectral_norm(m)) }
    }

    /// Image M·self.
    pub fn image(&self, m: &Mat, tol: f64) -> Self {
        if self.dim() == 0 {
            return Self::zero(m.nrows());
        }
        Self::span(&(m * &self.basis), tol)
    }

    pub fn contains(&self, other: &Self, tol: f64) -> bool {
        if other.dim() == 0 {
            return true;
        }
        let resid = &other.basis - self.projector() * &other.basis;
        resid.amax() <= tol.max(1e-12) * 10.0
    }
}

pub fn kalman_matrix(a: &Mat, b: &Mat) -> Mat {
    let m = a.nrows();
    let mut blocks = Vec::with_capacity(m);
    let mut cur = b.clone();
    for _ in 0..m {
        blocks.push(cur.clone());
        cur = a * cur;
    }
    linalg::hstack(&blocks)
}

/// rank [B AB .. A^{m−1}B].
pub fn kalman_rank(a: &Mat, b: &Mat, tol: f64) -> usize {
    linalg::rank(&kalman_matrix(a, b), tol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramianResult {
    pub matrix: Mat,
    pub rank: usize,
    pub full_rank: bool,
    /// Max entrywise gap between the backward recursion and the closed-form sum.
    pub closed_form_gap: f64,
}

/// p_0^N = Σ_{n<N} (A_0^{-1}⋯A_n^{-1}) BB^T (A_0^{-1}⋯A_n^{-1})^T, computed by the
/// backward recursion p_n = A_n^{-1}(p_{n+1} + BB^T)A_n^{-T} and checked
/// against the closed form.
pub fn deterministic_gramian(a_seq: &[Mat], b: &Mat, tol: f64) -> Result<GramianResult> {
    let m = b.nrows();
    let mut inv = Vec::with_capacity(a_seq.len());
    for (n, a) in a_seq.iter().enumerate() {
        if a.nrows() != m || a.ncols() != m {
            return Err(Error::Dimension(format!("A_{n} must be {m}x{m}")));
        }
        inv.push(linalg::checked_inverse(a).ok_or(Error::SingularCoefficient { step: n, path: vec![] })?);
    }
    let bbt = b * b.transpose();
    let mut p = Mat::zeros(m, m);
    for a_inv in inv.iter().rev() {
        p = linalg::symmetrize(&(a_inv * (&p + &bbt) * a_inv.transpose()));
    }
    let mut closed = Mat::zeros(m, m);
    let mut prod = Mat::identity(m, m);
    for a_inv in &inv {
        prod = &prod * a_inv;
        closed += &prod * &bbt * prod.transpose();
    }
    let rank = linalg::rank(&p, tol);
    Ok(GramianResult {
        closed_form_gap: (&p - &closed).amax(),
        full_rank: rank == m,
        rank,
        matrix: p,
    })
}

/// Gramian of a system whose A does not depend on the trend.
pub fn system_gramian(sys: &SwitchedSystem, horizon: usize, tol: f64) -> Result<GramianResult> {
    if !sys.a.is_nonrandom() {
        return Err(Error::UnsupportedScheme("the deterministic Gramian needs a trend-independent A".into()));
    }
    let seq: Vec<Mat> = (0..horizon).map(|n| sys.a.at_state(n, 0)).collect();
    deterministic_gramian(&seq, &sys.b, tol)
}

/// Largest V ⊆ K with Amap·V ⊆ V + W:
/// V_0 = K, V_{j+1} = K ∩ Amap^{-1}(V_j + W) until the dimension stops shrinking.
pub fn largest_invariant_in(k: &Subspace, amap: &Mat, w: &Subspace, tol: f64) -> Subspace {
    let mut v = k.clone();
    for _ in 0..=k.ambient() {
        let next = k.intersection(&v.sum(w, tol).preimage(amap, tol), tol);
        let done = next.dim() == v.dim();
        v = next;
        if done {
            break;
        }
    }
    v
}

#[derive(Clone, Debug)]
pub struct N1Result {
    pub holds: bool,
    pub horizon: usize,
    /// V^{k,N} for k = 0..=N.
    pub chain: Vec<Subspace>,
}

impl N1Result {
    pub fn v0(&self) -> &Subspace {
        &self.chain[0]
    }
}

/// Condition (N1): V^{N,N} = ker B^T and, for k < N, V^{k,N} is the largest
/// subspace of ker B^T invariant for (A^{-T}; (𝒞(j)A^{-1})^T Π_{V^{k+1,N}}).
/// Holds when V^{0,N} = {0}. `horizon` defaults to m.
pub fn condition_n1(sys: &SwitchedSystem, horizon: Option<usize>, tol: f64) -> Result<N1Result> {
    let q = sys.trend.iid_law().ok_or_else(|| {
        Error::UnsupportedScheme("condition (N1) is implemented for iid trends only".into())
    })?;
    if !sys.a.is_constant() || !sys.c.iter().all(|c| c.is_constant()) {
        return Err(Error::UnsupportedScheme(
            "condition (N1) is implemented for constant, trend-independent A and C only".into(),
        ));
    }
    let m = sys.m();
    let a = sys.a.at_state(0, 0);
    let a_inv = linalg::checked_inverse(&a).ok_or(Error::SingularCoefficient { step: 0, path: vec![] })?;
    let cs: Vec<Mat> = sys.c.iter().map(|c| c.at_state(0, 0)).collect();
    let cal = stacked_noise(&cs, &q);
    let maps: Vec<Mat> = (0..sys.p())
        .map(|j| (cal.view((j * m, 0), (m, m)) * &a_inv).transpose())
        .collect();
    let a_inv_t = a_inv.transpose();
    let map_scale = maps.iter().map(linalg::spectral_norm).fold(0.0, f64::max);
    let n_h = horizon.unwrap_or(m);
    let ker_bt = Subspace::kernel(&sys.b.transpose(), tol);
    let mut chain = vec![ker_bt.clone(); n_h + 1];
    for k in (0..n_h).rev() {
        let proj = chain[k + 1].projector();
        let images: Vec<Mat> = maps.iter().map(|mj| mj * &proj).collect();
        let w = if images.is_empty() { Subspace::zero(m) } else { Subspace::span_with_scale(&linalg::hstack(&images), tol, map_scale) };
        chain[k] = largest_invariant_in(&ker_bt, &a_inv_t, &w, tol);
    }
    Ok(N1Result { holds: chain[0].dim() == 0, horizon: n_h, chain })
}

/// Kalman rank of (A(n, l), B) for every distinct stored value of A.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanEntry {
    pub label: String,
    pub rank: usize,
}

pub fn kalman_report(sys: &SwitchedSystem, tol: f64) -> Vec<KalmanEntry> {
    use crate::system::CoefficientMap as C;
    let b = &sys.b;
    let entry = |label: String, a: &Mat| KalmanEntry { label, rank: kalman_rank(a, b, tol) };
    match &sys.a {
        C::Constant(a) => vec![entry("A".into(), a)],
        C::Time(v) => v.iter().enumerate().map(|(n, a)| entry(format!("A(n ≡ {n} mod {})", v.len()), a)).collect(),
        C::Trend(v) => v.iter().enumerate().map(|(l, a)| entry(format!("A(e_{})", l + 1), a)).collect(),
        C::TimeTrend(v) => v
            .iter()
            .enumerate()
            .flat_map(|(n, row)| {
                let len = v.len();
                row.iter().enumerate().map(move |(l, a)| (format!("A(n ≡ {n} mod {len}, e_{})", l + 1), a))
            })
            .map(|(lab, a)| entry(lab, a))
            .collect(),
        C::Adapted(_) => Vec::new(),
    }
}
