//! Harnesses shared by the integration tests and the acceptance target.
//! Every harness returns what it measured; callers decide the verdict.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::RngCore;

use sharc_core::am::{Cue, HopfieldMemory, ModernHopfieldMemory, PcnMemory, PcnSchedule};
use sharc_core::math::{dot, squared_distance};
use sharc_core::model::{Activation, Dense, Head, HeadSpec, Sample};
use sharc_core::replay::{agem_project, gem_project, sample_indices};
use sharc_core::saliency::{
    channel_saliency, keep_count, mask_feature_map, top_channels, ChannelSaliency,
};
use sharc_core::stream::batches;
use sharc_core::trainer::{
    acc_metric, build_stream, bwt_metric, evaluate_features, AccuracyMatrix,
};
use sharc_core::{
    Budget, ExperimentConfig, FeatureMap, Matrix, RngStream, Scenario, Strategy, Tensor3,
};

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn normals(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

pub fn bipolar(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
        .collect()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Cue hiding the coordinates in `hidden` (zero-filled).
pub fn hiding_cue(pattern: &[f64], hidden: &[usize]) -> Cue {
    let mut observed = vec![true; pattern.len()];
    for &i in hidden {
        observed[i] = false;
    }
    let values = pattern
        .iter()
        .zip(&observed)
        .map(|(&v, &o)| if o { v } else { 0.0 })
        .collect();
    Cue::new(values, observed).unwrap()
}

pub fn nearest_cosine(x: &[f64], stored: &[Vec<f64>]) -> usize {
    let nx = dot(x, x).sqrt().max(f64::MIN_POSITIVE);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in stored.iter().enumerate() {
        let c = dot(x, s) / (nx * dot(s, s).sqrt());
        if c > best.1 {
            best = (i, c);
        }
    }
    best.0
}

pub struct Recall {
    pub successes: usize,
    pub trials: usize,
    pub elapsed: Duration,
}

impl Recall {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Bipolar patterns, `flip` of the coordinates negated, exact-match recall.
pub fn hopfield_recall(dim: usize, patterns: usize, flip: f64, trials: usize, seed: u64) -> Recall {
    let started = Instant::now();
    let mut rng = RngStream::new(seed);
    let stored: Vec<Vec<f64>> = (0..patterns).map(|_| bipolar(&mut rng, dim)).collect();
    let mut mem = HopfieldMemory::new(dim);
    mem.write(&stored).unwrap();
    let flips = (flip * dim as f64).round() as usize;
    let mut successes = 0;
    for trial in 0..trials {
        let target = &stored[trial % patterns];
        let mut cue = target.clone();
        for &i in &rng.permutation(dim)[..flips] {
            cue[i] = -cue[i];
        }
        let out = mem.read(&Cue::full(cue).unwrap(), 20);
        if out.pattern == *target {
            successes += 1;
        }
    }
    Recall {
        successes,
        trials,
        elapsed: started.elapsed(),
    }
}

/// Recall counts at each corruption level, where every trial's corrupted set
/// at one level contains its set at the previous level.
pub fn hopfield_nested(
    dim: usize,
    patterns: usize,
    levels: &[f64],
    trials: usize,
    seed: u64,
) -> Vec<usize> {
    let mut rng = RngStream::new(seed);
    let stored: Vec<Vec<f64>> = (0..patterns).map(|_| bipolar(&mut rng, dim)).collect();
    let mut mem = HopfieldMemory::new(dim);
    mem.write(&stored).unwrap();
    let mut counts = vec![0; levels.len()];
    for trial in 0..trials {
        let target = &stored[trial % patterns];
        let order = rng.permutation(dim);
        for (l, &level) in levels.iter().enumerate() {
            let mut cue = target.clone();
            for &i in &order[..(level * dim as f64).round() as usize] {
                cue[i] = -cue[i];
            }
            if mem.read(&Cue::full(cue).unwrap(), 20).pattern == *target {
                counts[l] += 1;
            }
        }
    }
    counts
}

/// Unit patterns, `hidden` of the coordinates unobserved, nearest-cosine recall.
pub fn mhn_recall(
    dim: usize,
    patterns: usize,
    beta: f64,
    hidden: f64,
    trials: usize,
    seed: u64,
) -> Recall {
    let started = Instant::now();
    let mut rng = RngStream::new(seed);
    let stored: Vec<Vec<f64>> = (0..patterns)
        .map(|_| unit(normals(&mut rng, dim)))
        .collect();
    let mut mem = ModernHopfieldMemory::new(dim, beta).unwrap();
    mem.write(&stored).unwrap();
    let n_hidden = (hidden * dim as f64).round() as usize;
    let mut successes = 0;
    for trial in 0..trials {
        let target = trial % patterns;
        let cue = hiding_cue(&stored[target], &rng.permutation(dim)[..n_hidden]);
        if nearest_cosine(&mem.read(&cue, 3, false).pattern, &stored) == target {
            successes += 1;
        }
    }
    Recall {
        successes,
        trials,
        elapsed: started.elapsed(),
    }
}

pub fn mhn_nested(
    dim: usize,
    patterns: usize,
    beta: f64,
    levels: &[f64],
    trials: usize,
    seed: u64,
) -> Vec<usize> {
    let mut rng = RngStream::new(seed);
    let stored: Vec<Vec<f64>> = (0..patterns)
        .map(|_| unit(normals(&mut rng, dim)))
        .collect();
    let mut mem = ModernHopfieldMemory::new(dim, beta).unwrap();
    mem.write(&stored).unwrap();
    let mut counts = vec![0; levels.len()];
    for trial in 0..trials {
        let target = trial % patterns;
        let order = rng.permutation(dim);
        for (l, &level) in levels.iter().enumerate() {
            let cue = hiding_cue(
                &stored[target],
                &order[..(level * dim as f64).round() as usize],
            );
            if nearest_cosine(&mem.read(&cue, 3, false).pattern, &stored) == target {
                counts[l] += 1;
            }
        }
    }
    counts
}

pub struct PcnCompletion {
    /// Mean over trials of `1 - err(read) / err(zero fill)` on unobserved coordinates.
    pub mean_reduction: f64,
    /// Largest energy increase between consecutive write iterations or read steps.
    pub worst_increase: f64,
    pub elapsed: Duration,
}

pub fn pcn_completion(
    dim: usize,
    patterns: usize,
    hidden: f64,
    trials: usize,
    seed: u64,
) -> PcnCompletion {
    let started = Instant::now();
    let mut rng = RngStream::new(seed);
    let stored: Vec<Vec<f64>> = (0..patterns).map(|_| normals(&mut rng, dim)).collect();
    let mut mem = PcnMemory::new(dim, &[64, 32], 1.0, seed).unwrap();
    let schedule = PcnSchedule::default();
    let report = mem.write(&stored, &schedule).unwrap();
    let mut worst = max_increase(&report.trace);
    let n_hidden = (hidden * dim as f64).round() as usize;
    let mut total = 0.0;
    for trial in 0..trials {
        let target = &stored[trial % patterns];
        let hidden_idx = rng.permutation(dim)[..n_hidden].to_vec();
        let cue = hiding_cue(target, &hidden_idx);
        let out = mem.read(&cue, schedule.read_steps, schedule.read_lr, schedule.clamp);
        worst = worst.max(max_increase(&out.energies));
        let zero: f64 = hidden_idx.iter().map(|&i| target[i] * target[i]).sum();
        let err: f64 = hidden_idx
            .iter()
            .map(|&i| (out.pattern[i] - target[i]).powi(2))
            .sum();
        total += 1.0 - err / zero;
    }
    PcnCompletion {
        mean_reduction: total / trials as f64,
        worst_increase: worst,
        elapsed: started.elapsed(),
    }
}

pub fn max_increase(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

const FD_STEP: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-2;

/// Fourth-order central difference of `f` at 0.
fn richardson(mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = FD_STEP;
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

fn random_head(rng: &mut RngStream, activation: Activation) -> Head {
    let dims = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4));
    let input = dims.0 * dims.1 * dims.2;
    let classes = 2 * (1 + rng.below(3));
    let mut widths = vec![input];
    for _ in 0..rng.below(3) {
        widths.push(2 + rng.below(5));
    }
    widths.push(classes);
    let layers = widths
        .windows(2)
        .map(|w| Dense {
            // Fan-in scaling keeps logits O(1); saturated softmax makes FD
            // ill-conditioned.
            weights: Matrix::from_vec(
                w[1],
                w[0],
                scaled(normals(rng, w[0] * w[1]), (w[0] as f64).sqrt().recip()),
            )
            .unwrap(),
            bias: scaled(normals(rng, w[1]), 0.1),
        })
        .collect();
    Head::from_layers(dims, layers, activation).unwrap()
}

fn scaled(v: Vec<f64>, s: f64) -> Vec<f64> {
    v.into_iter().map(|x| x * s).collect()
}

fn random_map(rng: &mut RngStream, dims: (usize, usize, usize)) -> FeatureMap {
    Tensor3::from_vec(
        dims.0,
        dims.1,
        dims.2,
        normals(rng, dims.0 * dims.1 * dims.2),
    )
    .unwrap()
}

/// Smallest |pre-activation| over the hidden layers: relu kinks within a few
/// FD steps make central differences meaningless.
fn kink_margin(head: &Head, a: &FeatureMap) -> f64 {
    let mut x = a.as_slice().to_vec();
    let mut margin = f64::INFINITY;
    let last = head.layers().len() - 1;
    for l in &head.layers()[..last] {
        let z: Vec<f64> = l
            .weights
            .matvec(&x)
            .iter()
            .zip(&l.bias)
            .map(|(v, b)| v + b)
            .collect();
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        x = z.iter().map(|v| v.max(0.0)).collect();
    }
    margin
}

fn activation_for(i: usize) -> Activation {
    [Activation::Tanh, Activation::Identity, Activation::Relu][i % 3]
}

/// Max relative error of the cross-entropy parameter gradient against
/// central differences, over `instances` random heads and minibatches.
pub fn head_loss_gradient_suite(instances: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let activation = activation_for(done);
        let head = random_head(&mut rng, activation);
        let dims = head.input_dims();
        let classes = head.num_classes();
        let maps: Vec<FeatureMap> = (0..1 + rng.below(4))
            .map(|_| random_map(&mut rng, dims))
            .collect();
        if activation == Activation::Relu
            && maps.iter().any(|m| kink_margin(&head, m) < KINK_MARGIN)
        {
            continue;
        }
        let items: Vec<Sample> = maps
            .iter()
            .map(|m| {
                let label = rng.below(classes);
                Sample {
                    map: m,
                    label,
                    task: label / 2,
                }
            })
            .collect();
        let masking = (rng.uniform() < 0.5).then_some(2);
        let (_, grad) = head.loss_and_grad(&items, masking).unwrap();
        let theta = head.params();
        let mut probe_head = head.clone();
        for i in 0..theta.len() {
            let fd = richardson(|s| {
                let mut probe = theta.clone();
                probe[i] += s;
                probe_head.set_params(&probe).unwrap();
                probe_head.loss_and_grad(&items, masking).unwrap().0
            });
            worst = worst.max(rel_err(grad[i], fd));
        }
        done += 1;
    }
    worst
}

/// Max relative error of channel saliency against the spatially averaged
/// central difference of the class score along each channel slice.
pub fn saliency_gradient_suite(instances: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let activation = activation_for(done);
        let head = random_head(&mut rng, activation);
        let dims = head.input_dims();
        let a = random_map(&mut rng, dims);
        if activation == Activation::Relu && kink_margin(&head, &a) < KINK_MARGIN {
            continue;
        }
        let class = rng.below(head.num_classes());
        let sal = channel_saliency(&head, &a, class).unwrap();
        let score = |m: &FeatureMap| head.forward(m, None).unwrap()[class];
        let area = (dims.0 * dims.1) as f64;
        for c in 0..dims.2 {
            let shifted = |s: f64| {
                let mut m = a.clone();
                for i in 0..dims.0 {
                    for j in 0..dims.1 {
                        m.set(i, j, c, a.get(i, j, c) + s);
                    }
                }
                m
            };
            let fd = richardson(|s| score(&shifted(s))) / area;
            worst = worst.max(rel_err(sal.alpha[c], fd));
        }
        done += 1;
    }
    worst
}

fn random_pcn(rng: &mut RngStream) -> (PcnMemory, Vec<Vec<f64>>) {
    let dim = 2 + rng.below(6);
    let hidden = [2 + rng.below(5), 1 + rng.below(4)];
    let mut mem =
        PcnMemory::new(dim, &hidden, rng.uniform_range(0.1, 2.0), rng.next_u64()).unwrap();
    let len = mem.params().len();
    let flat: Vec<f64> = normals(rng, len).iter().map(|v| 0.7 * v).collect();
    mem.params_mut().set_flat(&flat).unwrap();
    let states = mem.widths().iter().map(|&w| normals(rng, w)).collect();
    (mem, states)
}

pub struct PcnGradients {
    pub state: f64,
    pub param: f64,
}

/// Max relative errors of the PCN energy gradients (states and parameters).
pub fn pcn_gradient_suite(instances: usize, seed: u64) -> PcnGradients {
    let mut rng = RngStream::new(seed);
    let h = 1e-5;
    let mut out = PcnGradients {
        state: 0.0,
        param: 0.0,
    };
    for _ in 0..instances {
        let (mem, states) = random_pcn(&mut rng);
        let gs = mem.state_gradients(&states).unwrap();
        for l in 0..states.len() {
            for i in 0..states[l].len() {
                let mut p = states.clone();
                let mut m = states.clone();
                p[l][i] += h;
                m[l][i] -= h;
                let fd = (mem.energy(&p).unwrap() - mem.energy(&m).unwrap()) / (2.0 * h);
                out.state = out.state.max(rel_err(gs[l][i], fd));
            }
        }
        let gp = mem.param_gradient(&states).unwrap();
        let flat = mem.params().flat();
        let mut probe = mem.clone();
        for i in 0..flat.len() {
            let mut f = flat.clone();
            f[i] = flat[i] + h;
            probe.params_mut().set_flat(&f).unwrap();
            let up = probe.energy(&states).unwrap();
            f[i] = flat[i] - h;
            probe.params_mut().set_flat(&f).unwrap();
            let down = probe.energy(&states).unwrap();
            out.param = out.param.max(rel_err(gp[i], (up - down) / (2.0 * h)));
        }
    }
    out
}

pub struct AgemCheck {
    /// Largest |g~ . g_ref| over active instances.
    pub worst_active_dot: f64,
    pub active: usize,
    /// Inactive instances returned unchanged.
    pub identity_ok: bool,
}

pub fn agem_suite(instances: usize, seed: u64) -> AgemCheck {
    let mut rng = RngStream::new(seed);
    let mut out = AgemCheck {
        worst_active_dot: 0.0,
        active: 0,
        identity_ok: true,
    };
    for _ in 0..instances {
        let dim = 1 + rng.below(8);
        let g = normals(&mut rng, dim);
        let r = normals(&mut rng, dim);
        let projected = agem_project(&g, &r).unwrap();
        if dot(&g, &r) < 0.0 {
            out.active += 1;
            out.worst_active_dot = out.worst_active_dot.max(dot(&projected, &r).abs());
        } else if projected != g {
            out.identity_ok = false;
        }
    }
    out
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting; `None`
/// when numerically singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let pivot_row = a[col].clone();
        for r in col + 1..n {
            let f = a[r][col] / pivot_row[col];
            for (x, p) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Enumerate every active set: make its constraints tight, keep candidates
/// with non-negative multipliers that satisfy all constraints, return the
/// closest to `g`.
pub fn gem_brute_force(g: &[f64], refs: &[Vec<f64>], eps: f64) -> Vec<f64> {
    let m = refs.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let gram: Vec<Vec<f64>> = active
            .iter()
            .map(|&i| active.iter().map(|&j| dot(&refs[i], &refs[j])).collect())
            .collect();
        let rhs: Vec<f64> = active.iter().map(|&i| -eps - dot(&refs[i], g)).collect();
        let Some(lambda) = solve(gram, rhs) else {
            continue;
        };
        if lambda.iter().any(|&l| l < -1e-12) {
            continue;
        }
        let mut z = g.to_vec();
        for (&i, &l) in active.iter().zip(&lambda) {
            for (zi, ri) in z.iter_mut().zip(&refs[i]) {
                *zi += l * ri;
            }
        }
        if refs.iter().any(|r| dot(&z, r) < -eps - 1e-9) {
            continue;
        }
        let d = squared_distance(&z, g);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, z));
        }
    }
    best.expect("the feasible cone is non-empty").1
}

pub struct GemCheck {
    pub worst_oracle_gap: f64,
    pub worst_violation: f64,
}

/// GEM against the brute-force oracle on random instances with dim <= 4 and
/// at most 3 constraints.
pub fn gem_suite(instances: usize, seed: u64) -> GemCheck {
    let mut rng = RngStream::new(seed);
    let mut out = GemCheck {
        worst_oracle_gap: 0.0,
        worst_violation: 0.0,
    };
    for _ in 0..instances {
        let dim = 1 + rng.below(4);
        let m = 1 + rng.below(3);
        let g = normals(&mut rng, dim);
        let refs: Vec<Vec<f64>> = (0..m).map(|_| normals(&mut rng, dim)).collect();
        let eps = if rng.uniform() < 0.5 {
            0.0
        } else {
            rng.uniform_range(0.0, 0.5)
        };
        let z = gem_project(&g, &refs, eps).unwrap();
        let oracle = gem_brute_force(&g, &refs, eps);
        let gap = z
            .iter()
            .zip(&oracle)
            .fold(0.0f64, |w, (a, b)| w.max((a - b).abs()));
        out.worst_oracle_gap = out.worst_oracle_gap.max(gap);
        for r in &refs {
            out.worst_violation = out.worst_violation.max(-eps - dot(&z, r));
        }
    }
    out
}

/// Kept set by rank counting: channel `i` is kept when fewer than `keep`
/// channels beat it (larger |alpha|, or equal and lower index).
pub fn kept_by_rank(alpha: &[f64], keep: usize) -> Vec<usize> {
    (0..alpha.len())
        .filter(|&i| {
            let better = (0..alpha.len())
                .filter(|&j| {
                    alpha[j].abs() > alpha[i].abs() || (alpha[j].abs() == alpha[i].abs() && j < i)
                })
                .count();
            better < keep
        })
        .collect()
}

pub struct MaskingCheck {
    pub top_k_mismatches: usize,
    pub bytes_increases: usize,
    pub idempotence_failures: usize,
}

pub fn masking_suite(instances: usize, seed: u64) -> MaskingCheck {
    let mut rng = RngStream::new(seed);
    let mus = [0.0, 0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 0.99];
    let mut out = MaskingCheck {
        top_k_mismatches: 0,
        bytes_increases: 0,
        idempotence_failures: 0,
    };
    for _ in 0..instances {
        let dims = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(12));
        // Small integers force ties.
        let alpha: Vec<f64> = (0..dims.2)
            .map(|_| {
                if rng.uniform() < 0.3 {
                    rng.below(3) as f64 - 1.0
                } else {
                    rng.normal()
                }
            })
            .collect();
        let mu = rng.uniform_range(0.0, 0.999);
        let keep = keep_count(dims.2, mu);
        if top_channels(&alpha, keep) != kept_by_rank(&alpha, keep) {
            out.top_k_mismatches += 1;
        }
        let a = random_map(&mut rng, dims);
        let sal = ChannelSaliency {
            alpha: alpha.clone(),
            class_used: 0,
        };
        let sizes: Vec<usize> = mus
            .iter()
            .map(|&m| mask_feature_map(&a, &sal, m, 0, 0).unwrap().stored_bytes())
            .collect();
        out.bytes_increases += sizes.windows(2).filter(|w| w[1] > w[0]).count();
        let once = mask_feature_map(&a, &sal, mu, 1, 0).unwrap();
        let twice = mask_feature_map(&once.reconstruct_dense(), &sal, mu, 1, 0).unwrap();
        if once != twice {
            out.idempotence_failures += 1;
        }
    }
    out
}

/// Matrix rows, ACC, and BWT (`None` when undefined).
pub type MetricCase = (Vec<Vec<Option<f64>>>, f64, Option<f64>);

/// Hand-computed metric cases.
pub fn metric_cases() -> Vec<MetricCase> {
    vec![
        (
            vec![vec![Some(1.0), None], vec![Some(0.8), Some(0.9)]],
            (0.8 + 0.9) / 2.0,
            Some(0.8 - 1.0),
        ),
        (
            vec![vec![Some(1.0), None], vec![Some(1.0), Some(1.0)]],
            1.0,
            Some(0.0),
        ),
        (vec![vec![Some(0.625)]], 0.625, None),
        (
            vec![
                vec![Some(0.5), None, None],
                vec![Some(0.4), Some(0.6), None],
                vec![Some(0.5), Some(0.6), Some(0.75)],
            ],
            (0.5 + 0.6 + 0.75) / 3.0,
            Some(0.0),
        ),
        (
            vec![vec![Some(0.5), None], vec![Some(0.75), Some(0.25)]],
            0.5,
            Some(0.25),
        ),
    ]
}

/// Count of metric cases whose computed values differ from the hand values.
pub fn metric_mismatches() -> usize {
    metric_cases()
        .into_iter()
        .filter(|(rows, acc, bwt)| {
            let m = AccuracyMatrix::from_rows(rows.clone()).unwrap();
            let acc_ok = acc_metric(&m).unwrap() == *acc;
            let bwt_ok = match (bwt_metric(&m), bwt) {
                (Ok(b), Some(want)) => b == *want,
                (Err(_), None) => true,
                _ => false,
            };
            !(acc_ok && bwt_ok)
        })
        .count()
}

/// What a dense-replay reference run produces.
#[derive(Debug, PartialEq)]
pub struct ReferenceRun {
    pub accuracy_matrix: AccuracyMatrix,
    pub acc: f64,
    pub bwt: f64,
    pub learning_curve: Vec<f64>,
}

/// Plain experience replay on dense feature maps: per-task FIFO buffers,
/// batch plus a uniform replay minibatch, one SGD step. Shares only the data
/// pipeline and the head with the library.
pub fn reference_dense_er(cfg: &ExperimentConfig) -> ReferenceRun {
    assert_eq!(cfg.strategy, Strategy::Er);
    let Budget::Slots(slots) = cfg.budget else {
        panic!("slot budgets only")
    };
    let (stream, backbone) = build_stream(cfg).unwrap();
    let tasks = stream.num_tasks();
    let cpt = stream.classes_per_task;
    let encode = |exs: &[sharc_core::stream::LabeledExample]| -> Vec<(FeatureMap, usize)> {
        exs.iter()
            .map(|e| (backbone.forward(e).unwrap(), e.label))
            .collect()
    };
    let train: Vec<_> = stream.tasks.iter().map(|t| encode(&t.train)).collect();
    let test: Vec<_> = stream.tasks.iter().map(|t| encode(&t.test)).collect();

    let root = RngStream::new(cfg.seed);
    let spec = HeadSpec {
        seed: cfg.head.seed ^ root.derive(2).next_u64(),
        ..cfg.head.clone()
    };
    let mut head = Head::from_spec(backbone.output_dims(), stream.total_classes, &spec);
    let mut batch_rng = root.derive(3);
    let mut replay_rng = root.derive(4);
    let masking = (cfg.scenario == Scenario::TaskIl).then_some(cpt);
    let per_task = slots / tasks;

    let mut memory: Vec<VecDeque<usize>> = vec![VecDeque::new(); tasks];
    let mut matrix = AccuracyMatrix::new(tasks);
    let mut curve = Vec::new();
    for t in 0..tasks {
        let pool: Vec<Sample> = (0..t)
            .flat_map(|k| {
                let train = &train;
                memory[k].iter().map(move |&i| Sample {
                    map: &train[k][i].0,
                    label: train[k][i].1,
                    task: k,
                })
            })
            .collect();
        for epoch in 0..cfg.epochs_per_task {
            for batch in batches(&stream.tasks[t], cfg.batch_size, &mut batch_rng).unwrap() {
                let mut items: Vec<Sample> = batch
                    .indices
                    .iter()
                    .map(|&i| Sample {
                        map: &train[t][i].0,
                        label: train[t][i].1,
                        task: t,
                    })
                    .collect();
                if t > 0 {
                    for j in sample_indices(pool.len(), cfg.batch_size, &mut replay_rng).unwrap() {
                        items.push(pool[j]);
                    }
                }
                let (_, grad) = head.loss_and_grad(&items, masking).unwrap();
                head.sgd_step(&grad, cfg.lr).unwrap();
                if epoch + 1 == cfg.epochs_per_task {
                    for &i in &batch.indices {
                        memory[t].push_back(i);
                        if memory[t].len() > per_task {
                            memory[t].pop_front();
                        }
                    }
                }
            }
        }
        let row = evaluate_features(&head, &test, t, cfg.scenario, cpt).unwrap();
        matrix.set_row(t, &row);
        curve.push(row.iter().sum::<f64>() / row.len() as f64);
    }
    let acc = acc_metric(&matrix).unwrap();
    let bwt = bwt_metric(&matrix).unwrap_or(0.0);
    ReferenceRun {
        accuracy_matrix: matrix,
        acc,
        bwt,
        learning_curve: curve,
    }
}

/// Config over the default synthetic stream.
pub fn synthetic_config(
    scenario: Scenario,
    am: sharc_core::AmKind,
    mu: f64,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        scenario,
        am_kind: am,
        mu,
        seed,
        ..ExperimentConfig::default()
    }
}
