use crate::am::{Cue, Recall};
use crate::error::{Result, SharcError};
use crate::math::{self, dot, norm};

/// Continuous modern Hopfield memory with energy
/// `E = -lse(beta, X^T xi) + xi^T xi / 2 + ln(N) / beta + M^2 / 2`
/// and retrieval `xi <- X softmax(beta X^T xi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModernHopfieldMemory {
    dim: usize,
    beta: f64,
    columns: Vec<Vec<f64>>,
    /// Tasks elapsed since each column was written.
    ages: Vec<u32>,
    max_norm: f64,
}

impl ModernHopfieldMemory {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(SharcError::InvalidArgument(format!(
                "beta must be positive, got {beta}"
            )));
        }
        Ok(Self {
            dim,
            beta,
            columns: Vec::new(),
            ages: Vec::new(),
            max_norm: 0.0,
        })
    }

    pub(crate) fn from_parts(
        dim: usize,
        beta: f64,
        columns: Vec<Vec<f64>>,
        ages: Vec<u32>,
    ) -> Self {
        let max_norm = columns.iter().map(|c| norm(c)).fold(0.0, f64::max);
        Self {
            dim,
            beta,
            columns,
            ages,
            max_norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn ages(&self) -> &[u32] {
        &self.ages
    }

    /// Largest stored column norm, `M`.
    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn write(&mut self, patterns: &[Vec<f64>]) -> Result<()> {
        for p in patterns {
            if p.len() != self.dim {
                return Err(SharcError::shape(self.dim, p.len()));
            }
        }
        for p in patterns {
            self.max_norm = self.max_norm.max(norm(p));
            self.columns.push(p.clone());
            self.ages.push(0);
        }
        Ok(())
    }

    fn similarities(&self, state: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|c| dot(c, state)).collect()
    }

    pub fn energy(&self, state: &[f64]) -> Result<f64> {
        let n = self.columns.len();
        if n == 0 {
            return Err(SharcError::EmptyInput);
        }
        let lse = math::lse(self.beta, &self.similarities(state))?;
        Ok(-lse
            + 0.5 * dot(state, state)
            + (n as f64).ln() / self.beta
            + 0.5 * self.max_norm * self.max_norm)
    }

    /// One retrieval update `X softmax(beta X^T xi)`.
    pub fn update(&self, state: &[f64]) -> Vec<f64> {
        let weights =
            math::softmax(&self.similarities(state), self.beta).expect("non-empty memory");
        let mut out = vec![0.0; self.dim];
        for (c, &p) in self.columns.iter().zip(&weights) {
            if p != 0.0 {
                math::axpy(p, c, &mut out);
            }
        }
        out
    }

    /// Unobserved coordinates start at 0. Observed coordinates are re-clamped
    /// after every iteration but the last. If that schedule ends above the
    /// starting energy, the read falls back to unclamped iterations from the
    /// start, which never raise the energy. `clamp_strict` restores observed
    /// coordinates on the returned pattern.
    pub fn read(&self, cue: &Cue, iters: usize, clamp_strict: bool) -> Recall {
        let start: Vec<f64> = cue
            .values()
            .iter()
            .zip(cue.observed())
            .map(|(&v, &o)| if o { v } else { 0.0 })
            .collect();
        if self.columns.is_empty() {
            return Recall {
                pattern: start,
                energies: Vec::new(),
            };
        }
        let iters = iters.max(1);
        let e0 = self.energy(&start).expect("non-empty memory");
        let mut state = start.clone();
        let mut energies = vec![e0];
        for it in 0..iters {
            state = self.update(&state);
            if it + 1 < iters {
                cue.clamp(&mut state);
            }
            energies.push(self.energy(&state).expect("non-empty memory"));
        }
        if *energies.last().unwrap() > e0 + 1e-9 {
            state = start;
            energies.truncate(1);
            for _ in 0..iters {
                state = self.update(&state);
                energies.push(self.energy(&state).expect("non-empty memory"));
            }
        }
        if clamp_strict {
            cue.clamp(&mut state);
        }
        Recall {
            pattern: state,
            energies,
        }
    }

    /// Age every stored column by one task.
    pub fn advance_task(&mut self) {
        for a in &mut self.ages {
            *a += 1;
        }
    }

    /// Scale each column by `gamma^age`.
    pub fn forget(&mut self, gamma: f64) {
        if gamma == 1.0 {
            return;
        }
        for (c, &age) in self.columns.iter_mut().zip(&self.ages) {
            let s = gamma.powi(age as i32);
            for v in c.iter_mut() {
                *v *= s;
            }
        }
        self.max_norm = self.columns.iter().map(|c| norm(c)).fold(0.0, f64::max);
    }
}
