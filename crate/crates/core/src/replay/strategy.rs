use serde::{Deserialize, Serialize};

use crate::error::{Result, SharcError};
use crate::math::RngStream;
use crate::model::{Head, Sample};
use crate::replay::{agem_project, gem_project, sample_indices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Sgd,
    Joint,
    Er,
    Agem,
    Gem,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sgd => "sgd",
            Strategy::Joint => "joint",
            Strategy::Er => "er",
            Strategy::Agem => "agem",
            Strategy::Gem => "gem",
        }
    }

    /// Whether the strategy consumes retrieved memories of earlier tasks.
    pub fn uses_replay(self) -> bool {
        matches!(self, Strategy::Er | Strategy::Agem | Strategy::Gem)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = SharcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Strategy::Sgd),
            "joint" => Ok(Strategy::Joint),
            "er" => Ok(Strategy::Er),
            "agem" => Ok(Strategy::Agem),
            "gem" => Ok(Strategy::Gem),
            other => Err(SharcError::InvalidArgument(format!(
                "unknown strategy {other:?}"
            ))),
        }
    }
}

/// Everything one optimizer step may look at.
pub struct StepContext<'a, 'r> {
    /// Index of the task being trained.
    pub task: usize,
    pub batch: &'a [Sample<'a>],
    /// Retrieved memories of each earlier task, indexed by task id.
    pub replay: &'a [Vec<Sample<'a>>],
    /// Raw training data of every earlier task (JOINT only).
    pub joint: &'a [Sample<'a>],
    /// `Some(classes_per_task)` confines each sample to its own task's logits.
    pub masking: Option<usize>,
    pub lr: f64,
    /// Replay minibatch size for ER and A-GEM.
    pub replay_batch: usize,
    pub gem_eps: f64,
    pub rng: &'r mut RngStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Loss of the objective the step was taken on.
    pub loss: f64,
    /// Update direction; parameters moved by `-lr * direction`.
    pub direction: Vec<f64>,
    /// A-GEM's reference gradient, or GEM's per-task references.
    pub references: Vec<Vec<f64>>,
}

fn pooled<'a>(replay: &'a [Vec<Sample<'a>>]) -> Vec<Sample<'a>> {
    replay.iter().flatten().copied().collect()
}

fn replay_minibatch<'a>(
    pool: &[Sample<'a>],
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<Sample<'a>>> {
    Ok(sample_indices(pool.len(), n, rng)?
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

pub fn strategy_step(
    strategy: Strategy,
    head: &mut Head,
    ctx: StepContext<'_, '_>,
) -> Result<StepOutcome> {
    let has_past = ctx.task > 0;
    if strategy.uses_replay() && has_past && ctx.replay.iter().take(ctx.task).all(Vec::is_empty) {
        return Err(SharcError::MissingReplay {
            strategy: strategy.name().to_string(),
            task: ctx.task,
        });
    }
    let outcome = match strategy {
        Strategy::Sgd => sgd(head, ctx.batch, ctx.masking)?,
        Strategy::Joint => {
            let mut items = ctx.batch.to_vec();
            if has_past {
                items.extend_from_slice(ctx.joint);
            }
            sgd(head, &items, ctx.masking)?
        }
        Strategy::Er => {
            if !has_past {
                sgd(head, ctx.batch, ctx.masking)?
            } else {
                let pool = pooled(ctx.replay);
                let mut items = ctx.batch.to_vec();
                items.extend(replay_minibatch(&pool, ctx.replay_batch, ctx.rng)?);
                sgd(head, &items, ctx.masking)?
            }
        }
        Strategy::Agem => {
            let (loss, g) = head.loss_and_grad(ctx.batch, ctx.masking)?;
            if !has_past {
                StepOutcome {
                    loss,
                    direction: g,
                    references: Vec::new(),
                }
            } else {
                let pool = pooled(ctx.replay);
                let mem = replay_minibatch(&pool, ctx.replay_batch, ctx.rng)?;
                let (_, g_ref) = head.loss_and_grad(&mem, ctx.masking)?;
                StepOutcome {
                    loss,
                    direction: agem_project(&g, &g_ref)?,
                    references: vec![g_ref],
                }
            }
        }
        Strategy::Gem => {
            let (loss, g) = head.loss_and_grad(ctx.batch, ctx.masking)?;
            let refs: Vec<Vec<f64>> = ctx.replay[..ctx.task.min(ctx.replay.len())]
                .iter()
                .filter(|r| !r.is_empty())
                .map(|r| head.loss_and_grad(r, ctx.masking).map(|(_, g)| g))
                .collect::<Result<_>>()?;
            let direction = if refs.is_empty() {
                g
            } else {
                gem_project(&g, &refs, ctx.gem_eps)?
            };
            StepOutcome {
                loss,
                direction,
                references: refs,
            }
        }
    };
    head.sgd_step(&outcome.direction, ctx.lr)?;
    Ok(outcome)
}

fn sgd(head: &Head, items: &[Sample<'_>], masking: Option<usize>) -> Result<StepOutcome> {
    let (loss, g) = head.loss_and_grad(items, masking)?;
    Ok(StepOutcome {
        loss,
        direction: g,
        references: Vec::new(),
    })
}
