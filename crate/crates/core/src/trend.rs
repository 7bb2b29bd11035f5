//! The trend chain L on the standard basis of R^p, its martingale increments
//! and the exhaustive path tree on which every expectation is computed exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Probabilities below this are treated as zero and their branches pruned.
pub const PRUNE_TOL: f64 = 1e-15;
const LAW_TOL: f64 = 1e-12;
pub const DEFAULT_NODE_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendMode {
    /// Every row of the transition matrix is the same law q.
    Iid,
    Markov,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    /// L_0 = e_state (0-based).
    Fixed(usize),
    Distribution(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrendModel {
    transition: Mat,
    initial: InitialLaw,
    mode: TrendMode,
}

fn check_law(field: &str, law: &[f64]) -> Result<()> {
    if law.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::validation(field, "entries must be finite and nonnegative"));
    }
    let total: f64 = law.iter().sum();
    if (total - 1.0).abs() > LAW_TOL {
        return Err(Error::validation(field, format!("entries sum to {total}, expected 1")));
    }
    Ok(())
}

impl TrendModel {
    pub fn new(transition: Mat, initial: InitialLaw, mode: TrendMode) -> Result<Self> {
        let p = transition.nrows();
        if p == 0 || transition.ncols() != p {
            return Err(Error::validation(
                "trend.transition",
                format!("must be a nonempty square matrix, got {}x{}", p, transition.ncols()),
            ));
        }
        for l in 0..p {
            let row: Vec<f64> = transition.row(l).iter().copied().collect();
            check_law(&format!("trend.transition row {}", l + 1), &row)?;
        }
        match &initial {
            InitialLaw::Fixed(s) if *s >= p => {
                return Err(Error::validation(
                    "trend.initial",
                    format!("state {} out of range 1..={p}", s + 1),
                ))
            }
            InitialLaw::Distribution(d) => {
                if d.len() != p {
                    return Err(Error::validation(
                        "trend.initial",
                        format!("expected {p} probabilities, got {}", d.len()),
                    ));
                }
                check_law("trend.initial", d)?;
            }
            _ => {}
        }
        if mode == TrendMode::Iid {
            for l in 1..p {
                if (transition.row(l) - transition.row(0)).amax() > LAW_TOL {
                    return Err(Error::validation(
                        "trend.transition",
                        "iid mode requires identical rows",
                    ));
                }
            }
        }
        Ok(Self { transition, initial, mode })
    }

    /// i.i.d. trend with law `q`.
    pub fn iid(q: &[f64], initial: InitialLaw) -> Result<Self> {
        check_law("trend.q", q)?;
        let p = q.len();
        let transition = Mat::from_fn(p, p, |_, j| q[j]);
        Self::new(transition, initial, TrendMode::Iid)
    }

    pub fn markov(transition: Mat, initial: InitialLaw) -> Result<Self> {
        Self::new(transition, initial, TrendMode::Markov)
    }

    /// Single-state chain: no noise at all.
    pub fn deterministic() -> Self {
        Self::iid(&[1.0], InitialLaw::Fixed(0)).expect("trivial law is valid")
    }

    pub fn states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn mode(&self) -> TrendMode {
        self.mode
    }

    pub fn transition(&self) -> &Mat {
        &self.transition
    }

    pub fn initial(&self) -> &InitialLaw {
        &self.initial
    }

    /// Conditional law of L_{n+1} given L_n = e_state.
    pub fn row(&self, state: usize) -> Vector {
        self.transition.row(state).transpose()
    }

    /// The common law q in iid mode.
    pub fn iid_law(&self) -> Option<Vector> {
        (self.mode == TrendMode::Iid).then(|| self.row(0))
    }

    pub fn initial_law(&self) -> Vector {
        match &self.initial {
            InitialLaw::Fixed(s) => {
                let mut v = Vector::zeros(self.states());
                v[*s] = 1.0;
                v
            }
            InitialLaw::Distribution(d) => Vector::from_column_slice(d),
        }
    }

    /// ΔM = e_child − (transition row of parent).
    pub fn delta_m(&self, parent: usize, child: usize) -> Vector {
        let mut d = -self.row(parent);
        d[child] += 1.0;
        d
    }

    /// E[⟨ΔM, e_i⟩⟨ΔM, e_j⟩ | L = e_current] = q_j δ_ij − q_i q_j.
    pub fn second_moment(&self, current: usize, i: usize, j: usize) -> f64 {
        let q = &self.transition;
        let delta = if i == j { q[(current, j)] } else { 0.0 };
        delta - q[(current, i)] * q[(current, j)]
    }

    pub fn second_moment_matrix(&self, current: usize) -> Mat {
        let p = self.states();
        Mat::from_fn(p, p, |i, j| self.second_moment(current, i, j))
    }

    /// Invariant law π with πQ = π and Σπ = 1 (least squares).
    pub fn stationary_distribution(&self) -> Result<Vector> {
        let p = self.states();
        let mut sys = Mat::zeros(p + 1, p);
        sys.view_mut((0, 0), (p, p))
            .copy_from(&(self.transition.transpose() - Mat::identity(p, p)));
        sys.row_mut(p).fill(1.0);
        let mut rhs = Vector::zeros(p + 1);
        rhs[p] = 1.0;
        let pi = linalg::pinv(&sys, 1e-12) * &rhs;
        let resid = (&sys * &pi - rhs).amax();
        if resid > 1e-9 {
            return Err(Error::Numerical(format!(
                "no stationary law solves piQ = pi (residual {resid:e})"
            )));
        }
        Ok(pi)
    }
}

/// m_{j,k,l} = q_l (q_j − δ_jl)(q_k − δ_kl) − q_l (δ_jk − q_j) q_k.
pub fn third_moment_m(q: &[f64], j: usize, k: usize, l: usize) -> f64 {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    q[l] * (q[j] - d(j, l)) * (q[k] - d(k, l)) - q[l] * (d(j, k) - q[j]) * q[k]
}

#[derive(Clone, Debug)]
pub struct Node {
    pub depth: usize,
    /// Trend state L_depth (0-based).
    pub state: usize,
    /// Probability of the whole prefix L_0..L_depth.
    pub prob: f64,
    /// P(this state | parent state), or the initial probability at depth 0.
    pub cond_prob: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// All positive-probability trend prefixes up to the horizon. A node at depth n
/// is an atom of F_n. With a random L_0 there are several depth-0 nodes.
#[derive(Clone, Debug)]
pub struct PathTree {
    horizon: usize,
    states: usize,
    nodes: Vec<Node>,
    levels: Vec<Vec<usize>>,
}

impl PathTree {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids at depth `n`.
    pub fn level(&self, n: usize) -> &[usize] {
        &self.levels[n]
    }

    pub fn leaves(&self) -> &[usize] {
        &self.levels[self.horizon]
    }

    pub fn roots(&self) -> &[usize] {
        &self.levels[0]
    }

    /// Trend states L_0..L_depth along the path to `id`.
    pub fn prefix(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes[id].depth + 1);
        let mut cur = Some(id);
        while let Some(c) = cur {
            out.push(self.nodes[c].state);
            cur = self.nodes[c].parent;
        }
        out.reverse();
        out
    }

    /// Position of each leaf id inside `leaves()`.
    pub fn leaf_index(&self) -> Vec<Option<usize>> {
        let mut idx = vec![None; self.nodes.len()];
        for (k, &id) in self.leaves().iter().enumerate() {
            idx[id] = Some(k);
        }
        idx
    }

    /// Law of L_n over the tree.
    pub fn marginal(&self, n: usize) -> Vector {
        let mut out = Vector::zeros(self.states);
        for &id in self.level(n) {
            out[self.nodes[id].state] += self.nodes[id].prob;
        }
        out
    }
}

pub fn enumerate_paths(model: &TrendModel, horizon: usize) -> Result<PathTree> {
    enumerate_paths_with_cap(model, horizon, DEFAULT_NODE_CAP)
}

pub fn enumerate_paths_with_cap(model: &TrendModel, horizon: usize, cap: usize) -> Result<PathTree> {
    let p = model.states();
    let mut nodes = Vec::new();
    let mut levels: Vec<Vec<usize>> = vec![Vec::new(); horizon + 1];
    let init = model.initial_law();
    for s in 0..p {
        if init[s] >= PRUNE_TOL {
            levels[0].push(nodes.len());
            nodes.push(Node {
                depth: 0,
                state: s,
                prob: init[s],
                cond_prob: init[s],
                parent: None,
                children: Vec::new(),
            });
        }
    }
    for n in 0..horizon {
        let mut next = Vec::new();
        for &id in &levels[n] {
            let (state, prob) = (nodes[id].state, nodes[id].prob);
            for c in 0..p {
                let t = model.transition[(state, c)];
                let child_prob = prob * t;
                if t < PRUNE_TOL || child_prob < PRUNE_TOL {
                    continue;
                }
                if nodes.len() >= cap {
                    return Err(Error::Capacity {
                        what: format!("path tree of horizon {horizon}"),
                        size: nodes.len() + 1,
                        cap,
                    });
                }
                let cid = nodes.len();
                nodes.push(Node {
                    depth: n + 1,
                    state: c,
                    prob: child_prob,
                    cond_prob: t,
                    parent: Some(id),
                    children: Vec::new(),
                });
                nodes[id].children.push(cid);
                next.push(cid);
            }
        }
        levels[n + 1] = next;
    }
    Ok(PathTree { horizon, states: p, nodes, levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phage_chain() -> TrendModel {
        let q0 = Mat::from_row_slice(
            4,
            4,
            &[
                0.0, 0.5, 0.5, 0.0, //
                0.5, 0.0, 0.0, 0.5, //
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0,
            ],
        );
        TrendModel::markov(q0, InitialLaw::Fixed(0)).unwrap()
    }

    #[test]
    fn iid_half_two_steps_has_four_quarter_leaves() {
        let m = TrendModel::iid(&[0.5, 0.5], InitialLaw::Fixed(0)).unwrap();
        let t = enumerate_paths(&m, 2).unwrap();
        assert_eq!(t.leaves().len(), 4);
        for &l in t.leaves() {
            assert!((t.node(l).prob - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn absorbing_chain_gives_single_path() {
        let m = TrendModel::markov(Mat::identity(2, 2), InitialLaw::Fixed(0)).unwrap();
        let t = enumerate_paths(&m, 3).unwrap();
        assert_eq!(t.leaves().len(), 1);
        let leaf = t.leaves()[0];
        assert_eq!(t.prefix(leaf), vec![0, 0, 0, 0]);
        assert_eq!(t.node(leaf).prob, 1.0);
    }

    #[test]
    fn phage_chain_two_steps_enumerates_three_leaves() {
        // 1 -> {2,3}; 2 -> {1,4}; 3 -> 1
        let t = enumerate_paths(&phage_chain(), 2).unwrap();
        let mut paths: Vec<Vec<usize>> = t.leaves().iter().map(|&l| t.prefix(l)).collect();
        paths.sort();
        assert_eq!(paths, vec![vec![0, 1, 0], vec![0, 1, 3], vec![0, 2, 0]]);
        let probs: Vec<f64> = t.leaves().iter().map(|&l| t.node(l).prob).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_m_examples() {
        let m = TrendModel::iid(&[0.5, 0.5], InitialLaw::Fixed(0)).unwrap();
        let d = m.delta_m(0, 0);
        assert_eq!(d.as_slice(), &[0.5, -0.5]);
        let ph = phage_chain();
        assert_eq!(ph.delta_m(0, 1).as_slice(), &[0.0, 0.5, -0.5, 0.0]);
        // deterministic transition 3 -> 1
        assert!(ph.delta_m(2, 0).amax() == 0.0);
    }

    #[test]
    fn second_moment_examples() {
        let m = TrendModel::iid(&[0.5, 0.5], InitialLaw::Fixed(0)).unwrap();
        assert!((m.second_moment(0, 0, 0) - 0.25).abs() < 1e-15);
        assert!((m.second_moment(0, 0, 1) + 0.25).abs() < 1e-15);
        let ph = phage_chain();
        assert!(ph.second_moment_matrix(3).amax() == 0.0);
    }

    #[test]
    fn third_moment_examples() {
        assert!(third_moment_m(&[0.5, 0.5], 0, 0, 0).abs() < 1e-15);
        assert_eq!(third_moment_m(&[1.0, 0.0, 0.0], 0, 2, 1), 0.0);
        assert_eq!(third_moment_m(&[1.0, 0.0, 0.0], 1, 1, 2), 0.0);
        assert!((third_moment_m(&[0.25; 4], 0, 1, 2) - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn stationary_law_of_phage_chain() {
        // pi1 = pi2/2 + pi3, pi2 = pi1/2 + pi4, pi3 = pi1/2, pi4 = pi2/2
        let pi = phage_chain().stationary_distribution().unwrap();
        let expect = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for (v, e) in pi.iter().zip(expect) {
            assert!((v - e).abs() < 1e-12, "{pi}");
        }
    }

    #[test]
    fn invalid_laws_are_rejected() {
        assert!(TrendModel::iid(&[0.5, 0.6], InitialLaw::Fixed(0)).is_err());
        assert!(TrendModel::iid(&[0.5, 0.5], InitialLaw::Fixed(2)).is_err());
        let bad = Mat::from_row_slice(2, 2, &[0.5, 0.5, 0.4, 0.6]);
        assert!(TrendModel::new(bad, InitialLaw::Fixed(0), TrendMode::Iid).is_err());
    }

    #[test]
    fn node_cap_is_enforced() {
        let m = TrendModel::iid(&[0.5, 0.5], InitialLaw::Fixed(0)).unwrap();
        let err = enumerate_paths_with_cap(&m, 10, 100).unwrap_err();
        assert!(matches!(err, Error::Capacity { cap: 100, .. }));
        assert!(enumerate_paths(&m, 25).is_err());
    }
}
