use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::am::{AssociativeMemory, Cue, Standardizer};
use crate::error::{Result, SharcError};
use crate::math::{squared_distance, RngStream, Tensor3};
use crate::model::{
    read_feature_file, split_feature_records, Backbone, ConvBackbone, FeatureMap, Head, HeadSpec,
    Sample,
};
use crate::replay::{strategy_step, BufferItem, EpisodicBuffer, StepContext};
use crate::saliency::{channel_saliency, mask_feature_map, SparseFeatureMap};
use crate::stream::{
    batches, load_idx_dataset, make_synthetic_stream, split_into_tasks, TaskStream,
};
use crate::trainer::metrics::{acc_metric, bwt_metric, evaluate_features, AccuracyMatrix};
use crate::trainer::{ExperimentConfig, Scenario, StreamSpec};

// Sub-stream ids of the run seed.
const RNG_STREAM: u64 = 1;
const RNG_HEAD: u64 = 2;
const RNG_BATCHES: u64 = 3;
const RNG_REPLAY: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub accuracy_matrix: AccuracyMatrix,
    pub acc: f64,
    /// 0 when undefined (a single task); see `bwt_defined`.
    pub bwt: f64,
    pub bwt_defined: bool,
    /// Mean accuracy over seen tasks after each task.
    pub learning_curve: Vec<f64>,
    /// Mean squared error between retrieved and true feature maps at the
    /// start of each task; `None` when nothing was retrieved.
    pub retrieval_mse: Vec<Option<f64>>,
    /// Stored samples and their bytes at the end of the run.
    pub buffer_items: usize,
    pub buffer_bytes: usize,
    /// Tasks completed; equals the task count for a finished run.
    pub tasks_completed: usize,
    /// Wall-clock seconds per task. Kept out of the JSON so reruns are
    /// byte-identical.
    #[serde(skip)]
    pub task_seconds: Vec<f64>,
}

/// A run that stopped early, with everything computed up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: Box<RunResult>,
    pub error: SharcError,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run failed after {} task(s): {}",
            self.partial.tasks_completed, self.error
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Build the task stream and frozen feature extractor a config describes.
pub fn build_stream(cfg: &ExperimentConfig) -> Result<(TaskStream, Backbone)> {
    let rng = RngStream::new(cfg.seed).derive(RNG_STREAM);
    match &cfg.stream {
        StreamSpec::Synthetic(spec) => {
            let stream = make_synthetic_stream(spec, &rng)?;
            let backbone = ConvBackbone::new(spec.image_dims, &cfg.backbone)?;
            Ok((stream, Backbone::Conv(backbone)))
        }
        StreamSpec::Idx {
            images,
            labels,
            tasks,
            classes_per_task,
            test_fraction,
        } => {
            let set = load_idx_dataset(images, labels)?;
            let dims = set.first().ok_or(SharcError::EmptyInput)?.input.dims();
            let stream = split_into_tasks(&set, *tasks, *classes_per_task, *test_fraction, &rng)?;
            Ok((
                stream,
                Backbone::Conv(ConvBackbone::new(dims, &cfg.backbone)?),
            ))
        }
        StreamSpec::Features {
            path,
            test_fraction,
        } => {
            let records = read_feature_file(path)?;
            let stream = split_feature_records(&records, *test_fraction, &rng)?;
            Ok((stream, Backbone::Precomputed(records.table)))
        }
    }
}

struct Caches {
    train: Vec<Vec<(FeatureMap, usize)>>,
    test: Vec<Vec<(FeatureMap, usize)>>,
}

fn feature_caches(stream: &TaskStream, backbone: &Backbone) -> Result<Caches> {
    let encode = |examples: &[crate::stream::LabeledExample]| -> Result<Vec<(FeatureMap, usize)>> {
        examples
            .iter()
            .map(|ex| Ok((backbone.forward(ex)?, ex.label)))
            .collect()
    };
    Ok(Caches {
        train: stream
            .tasks
            .iter()
            .map(|t| encode(&t.train))
            .collect::<Result<_>>()?,
        test: stream
            .tasks
            .iter()
            .map(|t| encode(&t.test))
            .collect::<Result<_>>()?,
    })
}

/// One retrieved replay sample.
struct Retrieved {
    map: FeatureMap,
    label: usize,
    task: usize,
}

/// Complete a stored sparse map. Kept channels are returned verbatim; the
/// memory fills the dropped ones. Without a memory the dropped channels stay
/// zero.
fn retrieve(
    sparse: &SparseFeatureMap,
    am: Option<&AssociativeMemory>,
    standardizer: &Standardizer,
) -> Result<FeatureMap> {
    let dense = sparse.reconstruct_dense();
    let Some(am) = am else {
        return Ok(dense);
    };
    let observed = sparse.observed_mask();
    let z = standardizer.apply(dense.as_slice());
    let values: Vec<f64> = z
        .iter()
        .zip(&observed)
        .map(|(&v, &o)| if o { v } else { 0.0 })
        .collect();
    let recall = am.read(&Cue::new(values, observed.clone())?);
    let completed = standardizer.invert(&recall.pattern);
    let merged: Vec<f64> = completed
        .into_iter()
        .zip(dense.as_slice())
        .zip(&observed)
        .map(|((c, &d), &o)| if o { d } else { c })
        .collect();
    let (h, w, k) = dense.dims();
    Tensor3::from_vec(h, w, k, merged)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<RunResult, RunFailure> {
    let mut result = RunResult {
        config: cfg.clone(),
        accuracy_matrix: AccuracyMatrix::new(0),
        acc: 0.0,
        bwt: 0.0,
        bwt_defined: false,
        learning_curve: Vec::new(),
        retrieval_mse: Vec::new(),
        buffer_items: 0,
        buffer_bytes: 0,
        tasks_completed: 0,
        task_seconds: Vec::new(),
    };
    match run_into(cfg, &mut result) {
        Ok(()) => Ok(result),
        Err(error) => Err(RunFailure {
            partial: Box::new(result),
            error,
        }),
    }
}

fn run_into(cfg: &ExperimentConfig, result: &mut RunResult) -> Result<()> {
    cfg.validate()?;
    let (stream, backbone) = build_stream(cfg)?;
    let caches = feature_caches(&stream, &backbone)?;
    let tasks = stream.num_tasks();
    let cpt = stream.classes_per_task;
    let dims = backbone.output_dims();
    let dim = dims.0 * dims.1 * dims.2;
    result.accuracy_matrix = AccuracyMatrix::new(tasks);

    let seed_rng = RngStream::new(cfg.seed);
    let head_spec = HeadSpec {
        seed: cfg.head.seed ^ seed_rng.derive(RNG_HEAD).next_u64(),
        ..cfg.head.clone()
    };
    let mut head = Head::from_spec(dims, stream.total_classes, &head_spec);
    let mut batch_rng = seed_rng.derive(RNG_BATCHES);
    let mut replay_rng = seed_rng.derive(RNG_REPLAY);

    let first: Vec<&[f64]> = caches.train[0].iter().map(|(m, _)| m.as_slice()).collect();
    let standardizer = Standardizer::fit(&first)?;
    let mut buffer = EpisodicBuffer::new(cfg.budget, tasks)?;
    let mut am = AssociativeMemory::new(cfg.am_kind, dim, &cfg.am)?;
    let masking = (cfg.scenario == Scenario::TaskIl).then_some(cpt);

    for t in 0..tasks {
        let started = Instant::now();

        let mut retrieved: Vec<Vec<Retrieved>> = Vec::with_capacity(t);
        let mut sq_err = 0.0;
        let mut count = 0usize;
        for k in 0..t {
            let mut per_task = Vec::new();
            for item in buffer.items(k) {
                let map = retrieve(&item.map, am.as_ref(), &standardizer)?;
                sq_err +=
                    squared_distance(map.as_slice(), caches.train[k][item.source].0.as_slice())
                        / dim as f64;
                count += 1;
                per_task.push(Retrieved {
                    map,
                    label: item.map.label,
                    task: k,
                });
            }
            retrieved.push(per_task);
        }
        result
            .retrieval_mse
            .push((count > 0).then(|| sq_err / count as f64));

        let replay: Vec<Vec<Sample>> = retrieved
            .iter()
            .map(|r| {
                r.iter()
                    .map(|x| Sample {
                        map: &x.map,
                        label: x.label,
                        task: x.task,
                    })
                    .collect()
            })
            .collect();
        let joint: Vec<Sample> = caches.train[..t]
            .iter()
            .enumerate()
            .flat_map(|(k, exs)| {
                exs.iter().map(move |(m, y)| Sample {
                    map: m,
                    label: *y,
                    task: k,
                })
            })
            .collect();

        let data = &stream.tasks[t];
        for epoch in 0..cfg.epochs_per_task {
            let last_epoch = epoch + 1 == cfg.epochs_per_task;
            for batch in batches(data, cfg.batch_size, &mut batch_rng)? {
                let samples: Vec<Sample> = batch
                    .indices
                    .iter()
                    .map(|&i| Sample {
                        map: &caches.train[t][i].0,
                        label: caches.train[t][i].1,
                        task: t,
                    })
                    .collect();
                strategy_step(
                    cfg.strategy,
                    &mut head,
                    StepContext {
                        task: t,
                        batch: &samples,
                        replay: &replay,
                        joint: &joint,
                        masking,
                        lr: cfg.lr,
                        replay_batch: cfg.batch_size,
                        gem_eps: cfg.gem_eps,
                        rng: &mut replay_rng,
                    },
                )?;
                if last_epoch {
                    for &i in &batch.indices {
                        let (map, label) = &caches.train[t][i];
                        let sal = channel_saliency(&head, map, *label)?;
                        let sparse = mask_feature_map(map, &sal, cfg.mu, *label, t)?;
                        buffer.insert(
                            t,
                            BufferItem {
                                map: sparse,
                                source: i,
                            },
                        )?;
                    }
                }
            }
        }

        if let Some(mem) = am.as_mut() {
            let patterns: Vec<Vec<f64>> = if cfg.write_full_task {
                caches.train[t]
                    .iter()
                    .map(|(m, _)| standardizer.apply(m.as_slice()))
                    .collect()
            } else {
                buffer
                    .items(t)
                    .iter()
                    .map(|item| standardizer.apply(caches.train[t][item.source].0.as_slice()))
                    .collect()
            };
            mem.write(&patterns)?;
            mem.advance_task();
            if (t + 1) % cfg.forget_every == 0 {
                mem.forget(cfg.forget_gamma)?;
            }
        }

        let row = evaluate_features(&head, &caches.test, t, cfg.scenario, cpt)?;
        result.accuracy_matrix.set_row(t, &row);
        result
            .learning_curve
            .push(row.iter().sum::<f64>() / row.len() as f64);
        result.buffer_items = buffer.len();
        result.buffer_bytes = buffer.stored_bytes();
        result.tasks_completed = t + 1;
        result.task_seconds.push(started.elapsed().as_secs_f64());
    }

    result.acc = acc_metric(&result.accuracy_matrix)?;
    match bwt_metric(&result.accuracy_matrix) {
        Ok(b) => {
            result.bwt = b;
            result.bwt_defined = true;
        }
        Err(SharcError::BwtUndefined) => {
            result.bwt = 0.0;
            result.bwt_defined = false;
        }
        Err(e) => return Err(e),
    }
    Ok(())
}
