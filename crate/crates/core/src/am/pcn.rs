//! Predictive-coding associative memory.
//!
//! Layer `0` is the stored pattern; layer `L` is the top. Each layer `l < L`
//! predicts the one below through `A_l(x) = W_l tanh(x) + b_l`, and the top
//! layer is pulled toward a learned prior vector:
//!
//! ```text
//! E = |x_L - prior|^2 + lambda * sum_{l<L} |x_l - W_l tanh(x_{l+1}) - b_l|^2
//! ```
//!
//! Writes descend `E` in the parameters with `x_0` clamped to each pattern;
//! reads descend `E` in the states with observed coordinates of `x_0` clamped.
//! Both use gradient steps scaled by a diagonal curvature estimate, with
//! backtracking so every accepted step lowers the energy.

use serde::{Deserialize, Serialize};

use crate::am::{Cue, Recall};
use crate::error::{Result, SharcError};
use crate::math::{self, dot, Matrix, RngStream};

/// Relative step growth after an accepted step; capped at the configured rate.
const STEP_GROWTH: f64 = 1.25;
/// Give up on a step after this many halvings.
const MAX_HALVINGS: usize = 40;

/// Optimization schedule for writes and reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcnSchedule {
    pub write_steps: usize,
    pub write_lr: f64,
    pub infer_steps: usize,
    pub infer_lr: f64,
    pub read_steps: usize,
    pub read_lr: f64,
    /// Keep observed cue coordinates fixed during reads.
    pub clamp: bool,
}

impl Default for PcnSchedule {
    fn default() -> Self {
        Self {
            write_steps: 100,
            write_lr: 0.5,
            infer_steps: 20,
            infer_lr: 0.5,
            read_steps: 200,
            read_lr: 0.5,
            clamp: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcnParams {
    /// `(W_l, b_l)` for `l = 0..L`; `W_l` is `width_l x width_{l+1}`.
    pub layers: Vec<(Matrix, Vec<f64>)>,
    /// Top-layer prior `omega_L`.
    pub prior: Vec<f64>,
}

impl PcnParams {
    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|(w, b)| w.as_slice().len() + b.len())
            .sum::<usize>()
            + self.prior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat layout: `W_0, b_0, W_1, b_1, ..., prior`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (w, b) in &self.layers {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.prior);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(SharcError::shape(self.len(), flat.len()));
        }
        let mut off = 0;
        for (w, b) in &mut self.layers {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = b.len();
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        self.prior.copy_from_slice(&flat[off..]);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteReport {
    pub energy_before: f64,
    pub energy_after: f64,
    /// Total energy over the written patterns after each outer iteration,
    /// starting with the pre-write value.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcnMemory {
    /// `[width_0 = d, width_1, ..., width_L]`
    widths: Vec<usize>,
    lambda: f64,
    params: PcnParams,
    initial: PcnParams,
}

impl PcnMemory {
    pub fn new(dim: usize, hidden: &[usize], lambda: f64, seed: u64) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || dim == 0 {
            return Err(SharcError::InvalidArgument(
                "PCN needs >= 1 non-empty hidden layer".into(),
            ));
        }
        if !(lambda >= 0.0) {
            return Err(SharcError::InvalidArgument(format!("lambda {lambda} < 0")));
        }
        let mut widths = vec![dim];
        widths.extend_from_slice(hidden);
        let mut rng = RngStream::new(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let scale = 1.0 / (w[1] as f64).sqrt();
                (
                    Matrix::from_fn(w[0], w[1], |_, _| scale * rng.normal()),
                    vec![0.0; w[0]],
                )
            })
            .collect();
        let params = PcnParams {
            layers,
            prior: vec![0.0; *widths.last().unwrap()],
        };
        Ok(Self {
            widths,
            lambda,
            initial: params.clone(),
            params,
        })
    }

    pub(crate) fn from_parts(
        widths: Vec<usize>,
        lambda: f64,
        params: PcnParams,
        initial: PcnParams,
    ) -> Self {
        Self {
            widths,
            lambda,
            params,
            initial,
        }
    }

    pub fn dim(&self) -> usize {
        self.widths[0]
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn params(&self) -> &PcnParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PcnParams {
        &mut self.params
    }

    pub fn initial_params(&self) -> &PcnParams {
        &self.initial
    }

    fn top(&self) -> usize {
        self.widths.len() - 1
    }

    fn check_states(&self, states: &[Vec<f64>]) -> Result<()> {
        let shapes: Vec<usize> = states.iter().map(Vec::len).collect();
        if shapes != self.widths {
            return Err(SharcError::shape(
                format!("{:?}", self.widths),
                format!("{shapes:?}"),
            ));
        }
        Ok(())
    }

    /// `x_l - A_l(x_{l+1})` for `l < L`, then `x_L - prior`.
    fn errors_with(&self, params: &PcnParams, states: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut errs = Vec::with_capacity(states.len());
        for (l, (w, b)) in params.layers.iter().enumerate() {
            let act: Vec<f64> = states[l + 1].iter().map(|v| v.tanh()).collect();
            let pred = w.matvec(&act);
            errs.push(
                states[l]
                    .iter()
                    .zip(pred.iter().zip(b))
                    .map(|(x, (p, bb))| x - p - bb)
                    .collect(),
            );
        }
        errs.push(
            states[self.top()]
                .iter()
                .zip(&params.prior)
                .map(|(x, p)| x - p)
                .collect(),
        );
        errs
    }

    fn energy_from_errors(&self, errs: &[Vec<f64>]) -> f64 {
        let top = self.top();
        let mut e = dot(&errs[top], &errs[top]);
        for err in &errs[..top] {
            e += self.lambda * dot(err, err);
        }
        e
    }

    fn energy_with(&self, params: &PcnParams, states: &[Vec<f64>]) -> f64 {
        self.energy_from_errors(&self.errors_with(params, states))
    }

    pub fn energy(&self, states: &[Vec<f64>]) -> Result<f64> {
        self.check_states(states)?;
        Ok(self.energy_with(&self.params, states))
    }

    fn state_gradients_from(&self, states: &[Vec<f64>], errs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let top = self.top();
        let two_lambda = 2.0 * self.lambda;
        let mut grads: Vec<Vec<f64>> = errs
            .iter()
            .enumerate()
            .map(|(l, e)| {
                let c = if l == top { 2.0 } else { two_lambda };
                e.iter().map(|v| c * v).collect()
            })
            .collect();
        for l in 1..=top {
            let (w, _) = &self.params.layers[l - 1];
            let back = w.matvec_t(&errs[l - 1]);
            for ((g, &x), bk) in grads[l].iter_mut().zip(&states[l]).zip(back) {
                let t = x.tanh();
                *g -= two_lambda * (1.0 - t * t) * bk;
            }
        }
        grads
    }

    /// `dE / dx_l` for every layer.
    pub fn state_gradients(&self, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_states(states)?;
        let errs = self.errors_with(&self.params, states);
        Ok(self.state_gradients_from(states, &errs))
    }

    fn add_param_gradient(&self, states: &[Vec<f64>], errs: &[Vec<f64>], out: &mut [f64]) {
        let two_lambda = 2.0 * self.lambda;
        let mut off = 0;
        for (l, (w, b)) in self.params.layers.iter().enumerate() {
            let act: Vec<f64> = states[l + 1].iter().map(|v| v.tanh()).collect();
            let cols = w.cols();
            for (r, &e) in errs[l].iter().enumerate() {
                math::axpy(
                    -two_lambda * e,
                    &act,
                    &mut out[off + r * cols..off + (r + 1) * cols],
                );
            }
            off += w.as_slice().len();
            for (o, &e) in out[off..off + b.len()].iter_mut().zip(&errs[l]) {
                *o -= two_lambda * e;
            }
            off += b.len();
        }
        for (o, &e) in out[off..].iter_mut().zip(&errs[self.top()]) {
            *o -= 2.0 * e;
        }
    }

    /// `dE / d omega` in the flat layout of [`PcnParams::flat`].
    pub fn param_gradient(&self, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_states(states)?;
        let errs = self.errors_with(&self.params, states);
        let mut g = vec![0.0; self.params.len()];
        self.add_param_gradient(states, &errs, &mut g);
        Ok(g)
    }

    /// Bottom-up state initialization: each hidden layer takes the single
    /// best step along `W_l^T (x_l - b_l)` from zero in the linearized model.
    pub fn init_states(&self, x0: &[f64]) -> Vec<Vec<f64>> {
        let mut states = vec![x0.to_vec()];
        for (w, b) in &self.params.layers {
            let below = states.last().unwrap();
            let r: Vec<f64> = below.iter().zip(b).map(|(x, bb)| x - bb).collect();
            let t = w.matvec_t(&r);
            let wt = w.matvec(&t);
            let denom = dot(&wt, &wt);
            let alpha = if denom > 0.0 {
                dot(&t, &t) / denom
            } else {
                0.0
            };
            states.push(t.into_iter().map(|v| alpha * v).collect());
        }
        states
    }

    /// Diagonal curvature estimate of `E` w.r.t. each state coordinate.
    fn state_curvature(&self, states: &[Vec<f64>], col_sq: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let top = self.top();
        let two_lambda = 2.0 * self.lambda;
        (0..=top)
            .map(|l| {
                let own = if l == top { 2.0 } else { two_lambda };
                if l == 0 {
                    return vec![own.max(1e-12); self.widths[0]];
                }
                states[l]
                    .iter()
                    .zip(&col_sq[l - 1])
                    .map(|(&x, &cs)| {
                        let t = x.tanh();
                        let d = 1.0 - t * t;
                        (own + two_lambda * d * d * cs).max(1e-12)
                    })
                    .collect()
            })
            .collect()
    }

    fn column_sq_norms(&self) -> Vec<Vec<f64>> {
        self.params
            .layers
            .iter()
            .map(|(w, _)| {
                let mut cs = vec![0.0; w.cols()];
                for r in 0..w.rows() {
                    for (c, v) in cs.iter_mut().zip(w.row(r)) {
                        *c += v * v;
                    }
                }
                cs
            })
            .collect()
    }

    /// Preconditioned descent on the states with `omega` fixed.
    /// `x0_free[i]` marks coordinates of `x_0` that may move; hidden layers
    /// always move. Returns the energy after every accepted step, starting
    /// with the initial energy.
    pub fn relax(
        &self,
        states: &mut [Vec<f64>],
        x0_free: &[bool],
        steps: usize,
        lr: f64,
    ) -> Vec<f64> {
        let col_sq = self.column_sq_norms();
        let mut errs = self.errors_with(&self.params, states);
        let mut energy = self.energy_from_errors(&errs);
        let mut trace = vec![energy];
        let mut step = lr;
        let mut halvings = 0;
        for _ in 0..steps {
            if step <= 0.0 || halvings > MAX_HALVINGS {
                break;
            }
            let grads = self.state_gradients_from(states, &errs);
            let curv = self.state_curvature(states, &col_sq);
            let mut candidate = states.to_vec();
            for (l, layer) in candidate.iter_mut().enumerate() {
                for (i, x) in layer.iter_mut().enumerate() {
                    if l == 0 && !x0_free[i] {
                        continue;
                    }
                    *x -= step * grads[l][i] / curv[l][i];
                }
            }
            let cand_errs = self.errors_with(&self.params, &candidate);
            let cand_energy = self.energy_from_errors(&cand_errs);
            if cand_energy <= energy {
                let improved = cand_energy < energy;
                states.clone_from_slice(&candidate);
                errs = cand_errs;
                energy = cand_energy;
                trace.push(energy);
                step = (step * STEP_GROWTH).min(lr);
                halvings = 0;
                if !improved {
                    break;
                }
            } else {
                step *= 0.5;
                halvings += 1;
            }
        }
        trace
    }

    /// Energy of `pattern` after standard inference with `x_0` clamped.
    pub fn pattern_energy(&self, pattern: &[f64], schedule: &PcnSchedule) -> f64 {
        let mut states = self.init_states(pattern);
        let clamped = vec![false; pattern.len()];
        *self
            .relax(
                &mut states,
                &clamped,
                schedule.infer_steps,
                schedule.infer_lr,
            )
            .last()
            .unwrap()
    }

    /// Diagonal curvature of the total energy w.r.t. each flat parameter.
    fn param_curvature(&self, all_states: &[Vec<Vec<f64>>]) -> Vec<f64> {
        let two_lambda = 2.0 * self.lambda;
        let n = all_states.len() as f64;
        let mut out = Vec::with_capacity(self.params.len());
        for (l, (w, b)) in self.params.layers.iter().enumerate() {
            let mut act_sq = vec![0.0; w.cols()];
            for states in all_states {
                for (a, x) in act_sq.iter_mut().zip(&states[l + 1]) {
                    let t = x.tanh();
                    *a += t * t;
                }
            }
            for _ in 0..w.rows() {
                out.extend(act_sq.iter().map(|a| (two_lambda * a).max(1e-12)));
            }
            out.extend(std::iter::repeat_n((two_lambda * n).max(1e-12), b.len()));
        }
        out.extend(std::iter::repeat_n(2.0 * n, self.params.prior.len()));
        out
    }

    /// Store `patterns`: alternate state inference (pattern clamped) with
    /// backtracked parameter steps on the summed energy.
    pub fn write(&mut self, patterns: &[Vec<f64>], schedule: &PcnSchedule) -> Result<WriteReport> {
        if schedule.write_steps == 0 {
            return Err(SharcError::InvalidArgument(
                "write_steps must be >= 1".into(),
            ));
        }
        if !(schedule.write_lr >= 0.0) || !(schedule.infer_lr >= 0.0) {
            return Err(SharcError::InvalidArgument(
                "learning rates must be >= 0".into(),
            ));
        }
        for p in patterns {
            if p.len() != self.dim() {
                return Err(SharcError::shape(self.dim(), p.len()));
            }
        }
        if patterns.is_empty() {
            return Ok(WriteReport {
                energy_before: 0.0,
                energy_after: 0.0,
                trace: vec![0.0],
            });
        }
        let clamped = vec![false; self.dim()];
        let mut all_states: Vec<Vec<Vec<f64>>> = patterns
            .iter()
            .map(|p| {
                let mut s = self.init_states(p);
                self.relax(&mut s, &clamped, schedule.infer_steps, schedule.infer_lr);
                s
            })
            .collect();
        let total = |mem: &Self, params: &PcnParams, states: &[Vec<Vec<f64>>]| -> f64 {
            states.iter().map(|s| mem.energy_with(params, s)).sum()
        };
        let before = total(self, &self.params, &all_states);
        let mut current = before;
        let mut trace = vec![before];
        let mut step = schedule.write_lr;
        for _ in 0..schedule.write_steps {
            let mut grad = vec![0.0; self.params.len()];
            for s in &all_states {
                let errs = self.errors_with(&self.params, s);
                self.add_param_gradient(s, &errs, &mut grad);
            }
            let curv = self.param_curvature(&all_states);
            let flat = self.params.flat();
            let mut halvings = 0;
            while step > 0.0 && halvings <= MAX_HALVINGS {
                let cand_flat: Vec<f64> = flat
                    .iter()
                    .zip(grad.iter().zip(&curv))
                    .map(|(p, (g, c))| p - step * g / c)
                    .collect();
                let mut cand = self.params.clone();
                cand.set_flat(&cand_flat)?;
                let e = total(self, &cand, &all_states);
                if e <= current {
                    self.params = cand;
                    step = (step * STEP_GROWTH).min(schedule.write_lr);
                    break;
                }
                step *= 0.5;
                halvings += 1;
            }
            for s in &mut all_states {
                self.relax(s, &clamped, schedule.infer_steps, schedule.infer_lr);
            }
            current = total(self, &self.params, &all_states);
            if !current.is_finite() || current > 10.0 * before.max(f64::MIN_POSITIVE) {
                return Err(SharcError::WriteDiverged {
                    initial: before,
                    energy: current,
                });
            }
            trace.push(current);
        }
        Ok(WriteReport {
            energy_before: before,
            energy_after: current,
            trace,
        })
    }

    /// Complete a cue: `x_0` starts at the cue values, free coordinates of
    /// `x_0` (unobserved ones when `clamp`, all otherwise) and every hidden
    /// layer descend the energy. Returns the final `x_0`.
    pub fn read(&self, cue: &Cue, steps: usize, lr: f64, clamp: bool) -> Recall {
        let mut states = self.init_states(cue.values());
        let free: Vec<bool> = if clamp {
            cue.observed().iter().map(|o| !o).collect()
        } else {
            vec![true; self.dim()]
        };
        let energies = self.relax(&mut states, &free, steps.max(1), lr);
        Recall {
            pattern: states.swap_remove(0),
            energies,
        }
    }

    /// `omega <- gamma * omega + (1 - gamma) * omega_init`
    pub fn forget(&mut self, gamma: f64) {
        if gamma == 1.0 {
            return;
        }
        let init = self.initial.flat();
        let blended: Vec<f64> = self
            .params
            .flat()
            .iter()
            .zip(&init)
            .map(|(p, i)| gamma * p + (1.0 - gamma) * i)
            .collect();
        self.params.set_flat(&blended).expect("same layout");
    }
}
