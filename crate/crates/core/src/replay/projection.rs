//! Gradient projections that keep an update from increasing the loss on
//! earlier tasks, to first order.

use crate::error::{Result, SharcError};
use crate::math::dot;

const GEM_TOL: f64 = 1e-10;
const GEM_MAX_ITERS: usize = 10_000;
const GEM_FEASIBILITY: f64 = 1e-6;
const POLISH_EVERY: usize = 25;

/// Single-constraint projection: identity when `g . g_ref >= 0`, otherwise
/// `g - (g . g_ref / |g_ref|^2) g_ref`.
pub fn agem_project(g: &[f64], g_ref: &[f64]) -> Result<Vec<f64>> {
    if g.len() != g_ref.len() {
        return Err(SharcError::shape(g.len(), g_ref.len()));
    }
    let d = dot(g, g_ref);
    if d >= 0.0 {
        return Ok(g.to_vec());
    }
    let scale = d / dot(g_ref, g_ref);
    Ok(g.iter().zip(g_ref).map(|(a, r)| a - scale * r).collect())
}

/// Closest `g~` to `g` with `g~ . g_k >= -eps` for every reference.
///
/// Solves the dual `min_{v >= 0} 1/2 v^T Q v + p^T v` with `Q = G G^T` and
/// `p = G g + eps`, then returns `g + G^T v`. The dual is minimized by
/// accelerated projected gradient with restarts; every few iterations the
/// current active set is solved exactly and accepted if it satisfies the
/// optimality conditions.
pub fn gem_project(g: &[f64], refs: &[Vec<f64>], eps: f64) -> Result<Vec<f64>> {
    if refs.is_empty() {
        return Err(SharcError::EmptyInput);
    }
    if !(eps >= 0.0) {
        return Err(SharcError::InvalidArgument(format!("eps {eps} < 0")));
    }
    for r in refs {
        if r.len() != g.len() {
            return Err(SharcError::shape(g.len(), r.len()));
        }
    }
    if refs.iter().all(|r| dot(g, r) >= -eps) {
        return Ok(g.to_vec());
    }
    let m = refs.len();
    let q: Vec<Vec<f64>> = refs
        .iter()
        .map(|a| refs.iter().map(|b| dot(a, b)).collect())
        .collect();
    let p: Vec<f64> = refs.iter().map(|r| dot(r, g) + eps).collect();
    let grad = |v: &[f64]| -> Vec<f64> { (0..m).map(|i| dot(&q[i], v) + p[i]).collect() };
    let objective =
        |v: &[f64]| -> f64 { 0.5 * (0..m).map(|i| v[i] * dot(&q[i], v)).sum::<f64>() + dot(&p, v) };
    // Largest eigenvalue is bounded by the trace.
    let lipschitz: f64 = (0..m).map(|i| q[i][i]).sum();
    let kkt_residual = |v: &[f64]| -> f64 {
        grad(v)
            .iter()
            .zip(v)
            .map(|(gi, vi)| if *vi > 0.0 { gi.abs() } else { (-gi).max(0.0) })
            .fold(0.0, f64::max)
    };
    let finish = |v: &[f64]| -> Result<Vec<f64>> {
        let mut out = g.to_vec();
        for (vi, r) in v.iter().zip(refs) {
            if *vi != 0.0 {
                crate::math::axpy(*vi, r, &mut out);
            }
        }
        let worst = refs
            .iter()
            .map(|r| -(dot(&out, r) + eps))
            .fold(f64::NEG_INFINITY, f64::max);
        if worst > GEM_FEASIBILITY {
            return Err(SharcError::GemNotConverged { violation: worst });
        }
        Ok(out)
    };

    // Stopping tolerance on the dual optimality residual, relative to the
    // problem's scale.
    let tol = GEM_TOL * (1.0 + lipschitz + p.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    let mut v = vec![0.0; m];
    let mut y = v.clone();
    let mut t = 1.0f64;
    let mut prev_obj = objective(&v);
    for it in 1..=GEM_MAX_ITERS {
        let gy = grad(&y);
        let next: Vec<f64> = y
            .iter()
            .zip(&gy)
            .map(|(yi, gi)| (yi - gi / lipschitz).max(0.0))
            .collect();
        let obj = objective(&next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if obj > prev_obj {
            // Momentum overshot: restart from the last iterate.
            y = v.clone();
            t = 1.0;
            continue;
        }
        let beta = (t - 1.0) / t_next;
        y = next
            .iter()
            .zip(&v)
            .map(|(n, o)| n + beta * (n - o))
            .collect();
        v = next;
        t = t_next;
        prev_obj = obj;
        if kkt_residual(&v) <= tol {
            return finish(&v);
        }
        if it % POLISH_EVERY == 0 {
            if let Some(exact) = solve_active_set(&q, &p, &v) {
                if kkt_residual(&exact) <= tol {
                    return finish(&exact);
                }
            }
        }
    }
    // Iteration cap reached: accept the iterate if it is feasible to the
    // return tolerance, otherwise report the worst violation.
    finish(&v)
}

/// Solve `Q_AA v_A = -p_A` on the support of `v`; `None` when singular or
/// the solution leaves the non-negative orthant.
fn solve_active_set(q: &[Vec<f64>], p: &[f64], v: &[f64]) -> Option<Vec<f64>> {
    let active: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
    let a: Vec<Vec<f64>> = active
        .iter()
        .map(|&i| active.iter().map(|&j| q[i][j]).collect())
        .collect();
    let b: Vec<f64> = active.iter().map(|&i| -p[i]).collect();
    let sol = solve_dense(a, b)?;
    if sol.iter().any(|&x| x < 0.0) {
        return None;
    }
    let mut out = vec![0.0; v.len()];
    for (&i, x) in active.iter().zip(sol) {
        out[i] = x;
    }
    Some(out)
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in col + 1..n {
            let f = a[row][col] / pivot_row[col];
            if f != 0.0 {
                for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
