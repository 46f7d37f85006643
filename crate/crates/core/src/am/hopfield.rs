use crate::am::{Cue, Recall};
use crate::error::{Result, SharcError};
use crate::math::{dot, Matrix};

/// Classical Hopfield network over bipolar patterns: Hebbian outer-product
/// writes, sign-dynamics reads on `E = -1/2 xi^T W xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldMemory {
    dim: usize,
    weights: Matrix,
    pattern_count: usize,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl HopfieldMemory {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            weights: Matrix::zeros(dim, dim),
            pattern_count: 0,
        }
    }

    pub(crate) fn from_parts(dim: usize, weights: Matrix, pattern_count: usize) -> Self {
        Self {
            dim,
            weights,
            pattern_count,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn pattern_count(&self) -> usize {
        self.pattern_count
    }

    /// `W += sum x x^T`, diagonal kept at zero.
    pub fn write(&mut self, patterns: &[Vec<f64>]) -> Result<()> {
        for p in patterns {
            if p.len() != self.dim {
                return Err(SharcError::shape(self.dim, p.len()));
            }
            if let Some((index, &value)) =
                p.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0)
            {
                return Err(SharcError::NonBipolar { index, value });
            }
        }
        for p in patterns {
            self.weights.add_outer(1.0, p, p);
            for i in 0..self.dim {
                self.weights.set(i, i, 0.0);
            }
            self.pattern_count += 1;
        }
        Ok(())
    }

    pub fn energy(&self, state: &[f64]) -> f64 {
        -0.5 * dot(state, &self.weights.matvec(state))
    }

    /// Synchronous `xi <- sign(W xi)` until a fixed point or `max_iters`.
    ///
    /// Observed coordinates start at the sign of the cue value, unobserved
    /// ones at `+1`. A synchronous proposal that would raise the energy is
    /// rejected in favour of one asynchronous sweep, so the energy trace is
    /// non-increasing.
    pub fn read(&self, cue: &Cue, max_iters: usize) -> Recall {
        let mut state: Vec<f64> = cue
            .values()
            .iter()
            .zip(cue.observed())
            .map(|(&v, &o)| if o { sign(v) } else { 1.0 })
            .collect();
        let mut energy = self.energy(&state);
        let mut energies = vec![energy];
        for _ in 0..max_iters {
            let field = self.weights.matvec(&state);
            let proposal: Vec<f64> = field.iter().map(|&h| sign(h)).collect();
            if proposal == state {
                break;
            }
            let proposed_energy = self.energy(&proposal);
            if proposed_energy <= energy {
                state = proposal;
                energy = proposed_energy;
            } else {
                let mut changed = false;
                for i in 0..self.dim {
                    let s = sign(dot(self.weights.row(i), &state));
                    if s != state[i] {
                        state[i] = s;
                        changed = true;
                    }
                }
                energy = self.energy(&state);
                if !changed {
                    break;
                }
            }
            energies.push(energy);
        }
        Recall {
            pattern: state,
            energies,
        }
    }

    pub fn forget(&mut self, gamma: f64) {
        if gamma == 1.0 {
            return;
        }
        for w in self.weights.as_mut_slice() {
            *w *= gamma;
        }
    }
}
