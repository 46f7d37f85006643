//! Saliency-guided structured sparsity.
//!
//! A channel's importance is the spatial mean of `d logit_c / d A` over that
//! channel. Masking keeps the `max(1, round((1 - mu) * K))` channels with the
//! largest `|alpha|` and stores only those, plus their indices.
//!
//! Serialized form of a [`SparseFeatureMap`] (little-endian):
//!
//! ```text
//! H, W, K, kept, label, task : u32 each (24 bytes)
//! kept x u32 channel index (ascending)
//! kept x H x W f64, channel-major
//! ```

use crate::error::{Result, SharcError};
use crate::math::Tensor3;
use crate::model::{FeatureMap, Head};

const HEADER_BYTES: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSaliency {
    pub alpha: Vec<f64>,
    pub class_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureMap {
    kept_channels: Vec<usize>,
    /// `H x W x kept`
    kept_data: Tensor3,
    full_dims: (usize, usize, usize),
    pub label: usize,
    pub task: usize,
}

pub fn channel_saliency(head: &Head, a: &FeatureMap, class: usize) -> Result<ChannelSaliency> {
    let grad = head.class_score_input_grad(a, class)?;
    let (h, w, k) = grad.dims();
    let mut alpha = vec![0.0; k];
    for cell in grad.as_slice().chunks_exact(k) {
        for (acc, g) in alpha.iter_mut().zip(cell) {
            *acc += g;
        }
    }
    let area = (h * w) as f64;
    for v in &mut alpha {
        *v /= area;
    }
    Ok(ChannelSaliency {
        alpha,
        class_used: class,
    })
}

pub fn keep_count(channels: usize, mu: f64) -> usize {
    (((1.0 - mu) * channels as f64).round() as usize).clamp(1, channels.max(1))
}

/// Indices of the `count` largest `|alpha|`, ascending. Ties favour the lower index.
pub fn top_channels(alpha: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| alpha[b].abs().total_cmp(&alpha[a].abs()).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    order
}

pub fn mask_feature_map(
    a: &FeatureMap,
    saliency: &ChannelSaliency,
    mu: f64,
    label: usize,
    task: usize,
) -> Result<SparseFeatureMap> {
    let k = a.dims().2;
    if saliency.alpha.len() != k {
        return Err(SharcError::shape(
            format!("{k} saliency weights"),
            saliency.alpha.len(),
        ));
    }
    if !(0.0..1.0).contains(&mu) {
        return Err(SharcError::InvalidArgument(format!(
            "mu {mu} outside [0, 1)"
        )));
    }
    let kept = top_channels(&saliency.alpha, keep_count(k, mu));
    SparseFeatureMap::from_channels(a, kept, label, task)
}

impl SparseFeatureMap {
    /// Keep the given channels of `a`. `kept` must be strictly ascending.
    pub fn from_channels(
        a: &FeatureMap,
        kept: Vec<usize>,
        label: usize,
        task: usize,
    ) -> Result<Self> {
        let (h, w, k) = a.dims();
        if kept.windows(2).any(|p| p[0] >= p[1]) || kept.last().is_some_and(|&c| c >= k) {
            return Err(SharcError::InvalidArgument(format!(
                "kept channels {kept:?} not strictly ascending below {k}"
            )));
        }
        let mut data = Tensor3::zeros(h, w, kept.len());
        for i in 0..h {
            for j in 0..w {
                for (slot, &c) in kept.iter().enumerate() {
                    data.set(i, j, slot, a.get(i, j, c));
                }
            }
        }
        Ok(Self {
            kept_channels: kept,
            kept_data: data,
            full_dims: (h, w, k),
            label,
            task,
        })
    }

    pub fn kept_channels(&self) -> &[usize] {
        &self.kept_channels
    }

    pub fn kept_data(&self) -> &Tensor3 {
        &self.kept_data
    }

    pub fn full_dims(&self) -> (usize, usize, usize) {
        self.full_dims
    }

    /// Dense map with dropped channels zero-filled.
    pub fn reconstruct_dense(&self) -> FeatureMap {
        let (h, w, k) = self.full_dims;
        let mut out = Tensor3::zeros(h, w, k);
        for i in 0..h {
            for j in 0..w {
                for (slot, &c) in self.kept_channels.iter().enumerate() {
                    out.set(i, j, c, self.kept_data.get(i, j, slot));
                }
            }
        }
        out
    }

    /// Per-coordinate flags over the flattened dense map: true where the channel was kept.
    pub fn observed_mask(&self) -> Vec<bool> {
        let (h, w, k) = self.full_dims;
        let mut channel = vec![false; k];
        for &c in &self.kept_channels {
            channel[c] = true;
        }
        (0..h * w).flat_map(|_| channel.iter().copied()).collect()
    }

    pub fn stored_bytes(&self) -> usize {
        let (h, w, _) = self.full_dims;
        let kept = self.kept_channels.len();
        8 * h * w * kept + 4 * kept + HEADER_BYTES
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w, k) = self.full_dims;
        let mut out = Vec::with_capacity(self.stored_bytes());
        for v in [h, w, k, self.kept_channels.len(), self.label, self.task] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &c in &self.kept_channels {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for slot in 0..self.kept_channels.len() {
            for i in 0..h {
                for j in 0..w {
                    out.extend_from_slice(&self.kept_data.get(i, j, slot).to_le_bytes());
                }
            }
        }
        out
    }

    /// Parse one map from the front of `bytes`; returns it with the bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let u32_at = |o: usize| -> Result<usize> {
            bytes
                .get(o..o + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| SharcError::Malformed("truncated sparse feature map".into()))
        };
        let (h, w, k, n, label, task) = (
            u32_at(0)?,
            u32_at(4)?,
            u32_at(8)?,
            u32_at(12)?,
            u32_at(16)?,
            u32_at(20)?,
        );
        let total = HEADER_BYTES + 4 * n + 8 * h * w * n;
        if bytes.len() < total {
            return Err(SharcError::Malformed("truncated sparse feature map".into()));
        }
        let kept: Vec<usize> = (0..n)
            .map(|s| u32_at(HEADER_BYTES + 4 * s))
            .collect::<Result<_>>()?;
        let mut data = Tensor3::zeros(h, w, n);
        let mut off = HEADER_BYTES + 4 * n;
        for slot in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                    if !v.is_finite() {
                        return Err(SharcError::Malformed("non-finite feature value".into()));
                    }
                    data.set(i, j, slot, v);
                    off += 8;
                }
            }
        }
        if kept.windows(2).any(|p| p[0] >= p[1]) || kept.last().is_some_and(|&c| c >= k) {
            return Err(SharcError::Malformed(format!(
                "bad channel index list {kept:?}"
            )));
        }
        Ok((
            Self {
                kept_channels: kept,
                kept_data: data,
                full_dims: (h, w, k),
                label,
                task,
            },
            total,
        ))
    }
}
