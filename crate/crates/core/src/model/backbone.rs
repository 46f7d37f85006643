use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SharcError};
use crate::math::{RngStream, Tensor3};
use crate::model::FeatureMap;
use crate::stream::LabeledExample;

/// One frozen `kernel x kernel` convolution with relu, channels-last.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    /// `[out][ky][kx][in]`
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    /// He-scaled Gaussian weights, zero bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut RngStream,
    ) -> Self {
        let fan_in = (kernel * kernel * in_channels) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let weights = (0..out_channels * kernel * kernel * in_channels)
            .map(|_| scale * rng.normal())
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
            bias: vec![0.0; out_channels],
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let out = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (out(h), out(w))
    }

    #[inline]
    fn weight(&self, o: usize, ky: usize, kx: usize, i: usize) -> f64 {
        self.weights[((o * self.kernel + ky) * self.kernel + kx) * self.in_channels + i]
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        let (h, w, c) = x.dims();
        if c != self.in_channels {
            return Err(SharcError::shape(
                format!("{} input channels", self.in_channels),
                format!("{c}"),
            ));
        }
        let (oh, ow) = self.output_size(h, w);
        let mut out = Tensor3::zeros(oh, ow, self.out_channels);
        let pad = self.padding as isize;
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..self.out_channels {
                    let mut acc = self.bias[o];
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            for i in 0..c {
                                acc +=
                                    self.weight(o, ky, kx, i) * x.get(iy as usize, ix as usize, i);
                            }
                        }
                    }
                    out.set(oy, ox, o, acc.max(0.0));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSpec {
    /// Output channels of each frozen conv layer.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            channels: vec![8, 16],
            kernel: 3,
            stride: 2,
            seed: 0x5eed,
        }
    }
}

/// Frozen stack of strided relu convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBackbone {
    input_dims: (usize, usize, usize),
    layers: Vec<ConvLayer>,
}

impl ConvBackbone {
    pub fn new(input_dims: (usize, usize, usize), spec: &BackboneSpec) -> Result<Self> {
        if spec.channels.is_empty() || spec.kernel == 0 || spec.stride == 0 {
            return Err(SharcError::InvalidArgument(
                "backbone needs >= 1 layer, kernel and stride >= 1".into(),
            ));
        }
        let mut rng = RngStream::new(spec.seed);
        let mut in_c = input_dims.2;
        let (mut h, mut w) = (input_dims.0, input_dims.1);
        let mut layers = Vec::with_capacity(spec.channels.len());
        for &out_c in &spec.channels {
            let layer = ConvLayer::new(
                in_c,
                out_c,
                spec.kernel,
                spec.stride,
                spec.kernel / 2,
                &mut rng,
            );
            if h + 2 * (spec.kernel / 2) < spec.kernel || w + 2 * (spec.kernel / 2) < spec.kernel {
                return Err(SharcError::InvalidArgument(
                    "input too small for backbone".into(),
                ));
            }
            (h, w) = layer.output_size(h, w);
            in_c = out_c;
            layers.push(layer);
        }
        Ok(Self { input_dims, layers })
    }

    pub fn from_layers(input_dims: (usize, usize, usize), layers: Vec<ConvLayer>) -> Self {
        Self { input_dims, layers }
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn output_dims(&self) -> (usize, usize, usize) {
        let (mut h, mut w, mut c) = self.input_dims;
        for l in &self.layers {
            (h, w) = l.output_size(h, w);
            c = l.out_channels;
        }
        (h, w, c)
    }

    pub fn forward(&self, image: &Tensor3) -> Result<FeatureMap> {
        if image.dims() != self.input_dims {
            return Err(SharcError::shape(
                format!("{:?}", self.input_dims),
                format!("{:?}", image.dims()),
            ));
        }
        let mut x = image.clone();
        for l in &self.layers {
            x = l.forward(&x)?;
        }
        Ok(x)
    }
}

/// Feature maps looked up by example id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub dims: (usize, usize, usize),
    pub maps: BTreeMap<usize, FeatureMap>,
}

/// The frozen feature extractor `g`. Parameters never change after construction.
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Conv(ConvBackbone),
    Precomputed(FeatureTable),
}

impl Backbone {
    pub fn output_dims(&self) -> (usize, usize, usize) {
        match self {
            Backbone::Conv(c) => c.output_dims(),
            Backbone::Precomputed(t) => t.dims,
        }
    }

    pub fn forward(&self, example: &LabeledExample) -> Result<FeatureMap> {
        match self {
            Backbone::Conv(c) => c.forward(&example.input),
            Backbone::Precomputed(t) => t
                .maps
                .get(&example.id)
                .cloned()
                .ok_or(SharcError::MissingKey(example.id)),
        }
    }
}
