use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SharcError};
use crate::math::{self, Matrix, RngStream, Tensor3};
use crate::model::FeatureMap;

/// Finite stand-in for `-inf` on masked logits.
pub const MASKED_LOGIT: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`; relu uses 0 at the kink.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSpec {
    /// Hidden layer widths; empty for a linear head.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }
}

/// One labeled feature map fed to the head.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub map: &'a FeatureMap,
    pub label: usize,
    pub task: usize,
}

/// Class range of `task` when every task owns `classes_per_task` consecutive classes.
pub fn task_classes(task: usize, classes_per_task: usize) -> Range<usize> {
    task * classes_per_task..(task + 1) * classes_per_task
}

struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

/// Trainable MLP classification head over flattened feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    input_dims: (usize, usize, usize),
    layers: Vec<Dense>,
    activation: Activation,
}

impl Head {
    pub fn new(
        input_dims: (usize, usize, usize),
        hidden: &[usize],
        classes: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let mut sizes = vec![input_dims.0 * input_dims.1 * input_dims.2];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        let gain = match activation {
            Activation::Tanh => 1.0,
            _ => 2.0,
        };
        let layers = sizes
            .windows(2)
            .map(|w| {
                let scale = (gain / w[0] as f64).sqrt();
                Dense {
                    weights: Matrix::from_fn(w[1], w[0], |_, _| scale * rng.normal()),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Self {
            input_dims,
            layers,
            activation,
        }
    }

    pub fn from_spec(input_dims: (usize, usize, usize), classes: usize, spec: &HeadSpec) -> Self {
        Self::new(
            input_dims,
            &spec.hidden,
            classes,
            spec.activation,
            &mut RngStream::new(spec.seed),
        )
    }

    pub fn from_layers(
        input_dims: (usize, usize, usize),
        layers: Vec<Dense>,
        activation: Activation,
    ) -> Result<Self> {
        let mut width = input_dims.0 * input_dims.1 * input_dims.2;
        if layers.is_empty() {
            return Err(SharcError::InvalidArgument(
                "head needs at least one layer".into(),
            ));
        }
        for l in &layers {
            if l.weights.cols() != width || l.bias.len() != l.weights.rows() {
                return Err(SharcError::shape(
                    format!("layer input {width}"),
                    l.weights.cols(),
                ));
            }
            width = l.weights.rows();
        }
        Ok(Self {
            input_dims,
            layers,
            activation,
        })
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        self.input_dims
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Flat view: each layer's weights (row-major) followed by its bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(SharcError::shape(self.param_count(), theta.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weights.as_slice().len();
            l.weights
                .as_mut_slice()
                .copy_from_slice(&theta[off..off + n]);
            off += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&theta[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_input(&self, a: &FeatureMap) -> Result<()> {
        if a.dims() != self.input_dims {
            return Err(SharcError::shape(
                format!("{:?}", self.input_dims),
                format!("{:?}", a.dims()),
            ));
        }
        Ok(())
    }

    fn trace(&self, a: &FeatureMap) -> Trace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut x = a.as_slice().to_vec();
        for (li, l) in self.layers.iter().enumerate() {
            let mut z = l.weights.matvec(&x);
            for (zi, bi) in z.iter_mut().zip(&l.bias) {
                *zi += bi;
            }
            inputs.push(x);
            if li == last {
                return Trace {
                    inputs,
                    pre,
                    logits: z,
                };
            }
            x = z.iter().map(|&v| self.activation.apply(v)).collect();
            pre.push(z);
        }
        unreachable!("head has at least one layer")
    }

    /// Reverse pass from `d loss / d logits`. Accumulates `scale * grad` into
    /// `param_grad` when given; returns `d / d input` when `want_input`.
    fn backward(
        &self,
        trace: &Trace,
        dlogits: Vec<f64>,
        scale: f64,
        mut param_grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.param_count();
                Some(o)
            })
            .collect();
        let mut delta = dlogits;
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            if let Some(g) = param_grad.as_deref_mut() {
                let off = offsets[li];
                let nw = l.weights.as_slice().len();
                let cols = l.weights.cols();
                let input = &trace.inputs[li];
                for (r, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        math::axpy(
                            scale * d,
                            input,
                            &mut g[off + r * cols..off + (r + 1) * cols],
                        );
                    }
                }
                for (gb, &d) in g[off + nw..off + nw + l.bias.len()].iter_mut().zip(&delta) {
                    *gb += scale * d;
                }
            }
            if li == 0 && !want_input {
                return None;
            }
            let mut dx = l.weights.matvec_t(&delta);
            if li > 0 {
                for (d, &z) in dx.iter_mut().zip(&trace.pre[li - 1]) {
                    *d *= self.activation.derivative(z);
                }
            }
            delta = dx;
        }
        Some(delta)
    }

    /// Logits, with classes outside `task_mask` pinned to [`MASKED_LOGIT`].
    pub fn forward(&self, a: &FeatureMap, task_mask: Option<Range<usize>>) -> Result<Vec<f64>> {
        self.check_input(a)?;
        let mut logits = self.trace(a).logits;
        if let Some(mask) = task_mask {
            apply_mask(&mut logits, &mask);
        }
        Ok(logits)
    }

    pub fn predict(&self, a: &FeatureMap, task_mask: Option<Range<usize>>) -> Result<usize> {
        Ok(math::argmax(&self.forward(a, task_mask)?))
    }

    /// Mean cross-entropy over `items` and its exact gradient w.r.t. the flat
    /// parameter vector. With `masking = Some(classes_per_task)` each item's
    /// logits are confined to its own task's classes.
    pub fn loss_and_grad(
        &self,
        items: &[Sample<'_>],
        masking: Option<usize>,
    ) -> Result<(f64, Vec<f64>)> {
        if items.is_empty() {
            return Err(SharcError::EmptyInput);
        }
        let n = items.len() as f64;
        let mut grad = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        for item in items {
            self.check_input(item.map)?;
            let classes = self.num_classes();
            if item.label >= classes {
                return Err(SharcError::LabelOutOfRange {
                    label: item.label,
                    classes,
                });
            }
            let trace = self.trace(item.map);
            let mut logits = trace.logits.clone();
            let mask = masking.map(|cpt| task_classes(item.task, cpt));
            if let Some(m) = &mask {
                if !m.contains(&item.label) {
                    return Err(SharcError::InvalidArgument(format!(
                        "label {} outside task {} classes {:?}",
                        item.label, item.task, m
                    )));
                }
                apply_mask(&mut logits, m);
            }
            loss += math::cross_entropy(&logits, item.label)?;
            let mut dlogits = math::softmax(&logits, 1.0)?;
            dlogits[item.label] -= 1.0;
            if let Some(m) = &mask {
                for (c, d) in dlogits.iter_mut().enumerate() {
                    if !m.contains(&c) {
                        *d = 0.0;
                    }
                }
            }
            self.backward(&trace, dlogits, 1.0 / n, Some(&mut grad), false);
        }
        Ok((loss / n, grad))
    }

    /// `d logit_c / d A`, same shape as `A`.
    pub fn class_score_input_grad(&self, a: &FeatureMap, class: usize) -> Result<Tensor3> {
        self.check_input(a)?;
        let classes = self.num_classes();
        if class >= classes {
            return Err(SharcError::LabelOutOfRange {
                label: class,
                classes,
            });
        }
        let trace = self.trace(a);
        let mut seed = vec![0.0; classes];
        seed[class] = 1.0;
        let dx = self
            .backward(&trace, seed, 1.0, None, true)
            .expect("input gradient requested");
        let (h, w, k) = self.input_dims;
        Tensor3::from_vec(h, w, k, dx)
    }

    /// `theta <- theta - lr * grad`
    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.param_count() {
            return Err(SharcError::shape(self.param_count(), grad.len()));
        }
        let mut theta = self.params();
        math::axpy(-lr, grad, &mut theta);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(SharcError::NonFinite("sgd_step"));
        }
        self.set_params(&theta)
    }
}

fn apply_mask(logits: &mut [f64], mask: &Range<usize>) {
    for (c, l) in logits.iter_mut().enumerate() {
        if !mask.contains(&c) {
            *l = MASKED_LOGIT;
        }
    }
}
