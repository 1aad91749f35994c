//! Independent numerical oracles for the integration tests.
//!
//! Everything here is deliberately written as plain-loop, dense linear
//! algebra over `Vec<Vec<f64>>` — sharing no solver code with the library —
//! so that agreement between the two is evidence of correctness rather than
//! of consistency.

#![allow(dead_code)]
// Index loops are the point here: the oracles must stay naive.
#![allow(clippy::needless_range_loop)]

use ndarray::Array2;
use nslmdp_core::linmdp::{LinearMdpParams, TabularSnapshot};

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// Panics on a numerically singular system: the callers construct
/// strictly positive-definite matrices (identity plus outer products).
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    assert_eq!(a.len(), n);
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            assert_eq!(row.len(), n);
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        assert!(m[pivot][col].abs() > 1e-14, "singular system at column {col}");
        m.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..=n {
                let sub = factor * m[col][k];
                m[row][k] -= sub;
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = m[col][n];
        for k in col + 1..n {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    x
}

/// Dense matrix inverse by Gauss-Jordan elimination with partial pivoting.
pub fn dense_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            assert_eq!(row.len(), n);
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        assert!(m[pivot][col].abs() > 1e-14, "singular matrix at column {col}");
        m.swap(col, pivot);
        let scale = m[col][col];
        for k in 0..2 * n {
            m[col][k] /= scale;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = m[row][col];
            if factor == 0.0 {
                continue;
            }
            for k in 0..2 * n {
                let sub = factor * m[col][k];
                m[row][k] -= sub;
            }
        }
    }
    m.into_iter().map(|row| row[n..].to_vec()).collect()
}

/// `log det(A)` of a symmetric positive-definite matrix via an
/// independently coded Cholesky factorization.
pub fn chol_logdet(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[i][j];
            for k in 0..j {
                acc -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(acc > 0.0, "matrix not positive definite at row {i}");
                l[i][j] = acc.sqrt();
            } else {
                l[i][j] = acc / l[j][j];
            }
        }
    }
    2.0 * (0..n).map(|i| l[i][i].ln()).sum::<f64>()
}

pub fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).to_vec()).collect()
}

/// Backward-induction plan computed with plain loops straight off a tabular
/// snapshot. `v[h][s]` for `h = 0..=H` (the extra row is the zero terminal
/// value); greedy ties break toward the lowest action index.
pub struct NaivePlan {
    pub v: Vec<Vec<f64>>,
    pub policy: Vec<Vec<usize>>,
}

pub fn naive_backward_induction(snap: &TabularSnapshot) -> NaivePlan {
    let (hh, ss, aa) = (snap.horizon(), snap.num_states(), snap.num_actions());
    let mut v = vec![vec![0.0; ss]; hh + 1];
    let mut policy = vec![vec![0usize; ss]; hh];
    for h in (0..hh).rev() {
        for s in 0..ss {
            let mut best_value = f64::NEG_INFINITY;
            let mut best_action = 0usize;
            for a in 0..aa {
                let mut q = snap.rewards[(h, s, a)];
                for s_next in 0..ss {
                    q += snap.transitions[(h, s, a, s_next)] * v[h + 1][s_next];
                }
                if q > best_value {
                    best_value = q;
                    best_action = a;
                }
            }
            v[h][s] = best_value;
            policy[h][s] = best_action;
        }
    }
    NaivePlan { v, policy }
}

/// Evaluates a deterministic policy table by plain backward recursion.
pub fn naive_deterministic_policy_values(
    snap: &TabularSnapshot,
    policy: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    let (hh, ss) = (snap.horizon(), snap.num_states());
    let mut v = vec![vec![0.0; ss]; hh + 1];
    for h in (0..hh).rev() {
        for s in 0..ss {
            let a = policy[h][s];
            let mut value = snap.rewards[(h, s, a)];
            for s_next in 0..ss {
                value += snap.transitions[(h, s, a, s_next)] * v[h + 1][s_next];
            }
            v[h][s] = value;
        }
    }
    v
}

/// Evaluates the uniform-random policy by plain backward recursion.
pub fn naive_uniform_policy_values(snap: &TabularSnapshot) -> Vec<Vec<f64>> {
    let (hh, ss, aa) = (snap.horizon(), snap.num_states(), snap.num_actions());
    let mut v = vec![vec![0.0; ss]; hh + 1];
    for h in (0..hh).rev() {
        for s in 0..ss {
            let mut acc = 0.0;
            for a in 0..aa {
                let mut q = snap.rewards[(h, s, a)];
                for s_next in 0..ss {
                    q += snap.transitions[(h, s, a, s_next)] * v[h + 1][s_next];
                }
                acc += q;
            }
            v[h][s] = acc / aa as f64;
        }
    }
    v
}

/// Double-loop variation-budget summation: outer loop over consecutive
/// episode pairs, inner loop over steps, per-step Euclidean / Frobenius
/// norms accumulated in plain index order.
pub fn naive_budgets(params: &LinearMdpParams) -> (f64, f64, f64) {
    let (hh, d, ss) = (params.horizon(), params.dim(), params.num_states());
    let mut b_theta = 0.0;
    let mut b_mu = 0.0;
    let mut prev = params.episode_params(0).unwrap().into_owned();
    for k in 1..params.num_episodes() {
        let cur = params.episode_params(k).unwrap();
        for h in 0..hh {
            let mut dt = 0.0;
            for j in 0..d {
                let diff = cur.theta[(h, j)] - prev.theta[(h, j)];
                dt += diff * diff;
            }
            b_theta += dt.sqrt();
            let mut dm = 0.0;
            for j in 0..d {
                for s in 0..ss {
                    let diff = cur.mu[(h, j, s)] - prev.mu[(h, j, s)];
                    dm += diff * diff;
                }
            }
            b_mu += dm.sqrt();
        }
        prev = cur.into_owned();
    }
    (b_theta, b_mu, b_theta + b_mu)
}
