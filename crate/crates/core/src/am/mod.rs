//! Associative memories over flattened feature maps.

mod hopfield;
mod modern;
mod pcn;

pub use hopfield::HopfieldMemory;
pub use modern::ModernHopfieldMemory;
pub use pcn::{PcnMemory, PcnParams, PcnSchedule, WriteReport};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SharcError};
use crate::math::Matrix;

/// Partially observed pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Cue {
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl Cue {
    pub fn new(values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != observed.len() {
            return Err(SharcError::shape(values.len(), observed.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SharcError::NonFinite("cue values"));
        }
        if !observed.iter().any(|&o| o) {
            return Err(SharcError::InvalidArgument(
                "cue has no observed coordinates".into(),
            ));
        }
        Ok(Self { values, observed })
    }

    pub fn full(values: Vec<f64>) -> Result<Self> {
        let observed = vec![true; values.len()];
        Self::new(values, observed)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Overwrite observed coordinates of `state` with the cue values.
    pub fn clamp(&self, state: &mut [f64]) {
        for ((s, &v), &o) in state.iter_mut().zip(&self.values).zip(&self.observed) {
            if o {
                *s = v;
            }
        }
    }
}

/// Completed pattern plus the energy after each accepted update.
#[derive(Debug, Clone, PartialEq)]
pub struct Recall {
    pub pattern: Vec<f64>,
    pub energies: Vec<f64>,
}

/// Per-coordinate affine standardization, frozen once fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Coordinates with (near) zero spread get scale 1.
    pub fn fit(samples: &[&[f64]]) -> Result<Self> {
        let first = samples.first().ok_or(SharcError::EmptyInput)?;
        let d = first.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            if s.len() != d {
                return Err(SharcError::shape(d, s.len()));
            }
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmKind {
    None,
    Hopfield,
    Mhn,
    Pcn,
}

impl AmKind {
    pub fn name(self) -> &'static str {
        match self {
            AmKind::None => "none",
            AmKind::Hopfield => "hopfield",
            AmKind::Mhn => "mhn",
            AmKind::Pcn => "pcn",
        }
    }
}

impl std::fmt::Display for AmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AmKind {
    type Err = SharcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AmKind::None),
            "hopfield" => Ok(AmKind::Hopfield),
            "mhn" => Ok(AmKind::Mhn),
            "pcn" => Ok(AmKind::Pcn),
            other => Err(SharcError::InvalidArgument(format!(
                "unknown memory kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HopfieldConfig {
    pub max_iters: usize,
}

impl Default for HopfieldConfig {
    fn default() -> Self {
        Self { max_iters: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MhnConfig {
    pub beta: f64,
    pub read_iters: usize,
    pub clamp_strict: bool,
}

impl Default for MhnConfig {
    fn default() -> Self {
        Self {
            beta: 32.0,
            read_iters: 3,
            clamp_strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcnConfig {
    /// Hidden widths from the layer just above the pattern to the top.
    pub hidden: Vec<usize>,
    pub lambda: f64,
    pub seed: u64,
    pub schedule: PcnSchedule,
}

impl Default for PcnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            lambda: 1.0,
            seed: 0,
            schedule: PcnSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmConfig {
    pub hopfield: HopfieldConfig,
    pub mhn: MhnConfig,
    pub pcn: PcnConfig,
}

/// One memory behind a common interface. Patterns are standardized vectors;
/// the Hopfield variant binarizes them by sign on write.
#[derive(Debug, Clone, PartialEq)]
pub enum AssociativeMemory {
    Hopfield {
        mem: HopfieldMemory,
        cfg: HopfieldConfig,
    },
    Mhn {
        mem: ModernHopfieldMemory,
        cfg: MhnConfig,
    },
    Pcn {
        mem: PcnMemory,
        schedule: PcnSchedule,
    },
}

fn binarize(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
        .collect()
}

impl AssociativeMemory {
    /// `None` for [`AmKind::None`].
    pub fn new(kind: AmKind, dim: usize, cfg: &AmConfig) -> Result<Option<Self>> {
        Ok(match kind {
            AmKind::None => None,
            AmKind::Hopfield => Some(Self::Hopfield {
                mem: HopfieldMemory::new(dim),
                cfg: cfg.hopfield.clone(),
            }),
            AmKind::Mhn => Some(Self::Mhn {
                mem: ModernHopfieldMemory::new(dim, cfg.mhn.beta)?,
                cfg: cfg.mhn.clone(),
            }),
            AmKind::Pcn => Some(Self::Pcn {
                mem: PcnMemory::new(dim, &cfg.pcn.hidden, cfg.pcn.lambda, cfg.pcn.seed)?,
                schedule: cfg.pcn.schedule.clone(),
            }),
        })
    }

    pub fn kind(&self) -> AmKind {
        match self {
            Self::Hopfield { .. } => AmKind::Hopfield,
            Self::Mhn { .. } => AmKind::Mhn,
            Self::Pcn { .. } => AmKind::Pcn,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Hopfield { mem, .. } => mem.dim(),
            Self::Mhn { mem, .. } => mem.dim(),
            Self::Pcn { mem, .. } => mem.dim(),
        }
    }

    pub fn write(&mut self, patterns: &[Vec<f64>]) -> Result<()> {
        match self {
            Self::Hopfield { mem, .. } => {
                let bipolar: Vec<Vec<f64>> = patterns.iter().map(|p| binarize(p)).collect();
                mem.write(&bipolar)
            }
            Self::Mhn { mem, .. } => mem.write(patterns),
            Self::Pcn { mem, schedule } => mem.write(patterns, schedule).map(|_| ()),
        }
    }

    pub fn read(&self, cue: &Cue) -> Recall {
        match self {
            Self::Hopfield { mem, cfg } => mem.read(cue, cfg.max_iters),
            Self::Mhn { mem, cfg } => mem.read(cue, cfg.read_iters, cfg.clamp_strict),
            Self::Pcn { mem, schedule } => {
                mem.read(cue, schedule.read_steps, schedule.read_lr, schedule.clamp)
            }
        }
    }

    pub fn forget(&mut self, gamma: f64) -> Result<()> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(SharcError::InvalidArgument(format!(
                "gamma {gamma} outside (0, 1]"
            )));
        }
        match self {
            Self::Hopfield { mem, .. } => mem.forget(gamma),
            Self::Mhn { mem, .. } => mem.forget(gamma),
            Self::Pcn { mem, .. } => mem.forget(gamma),
        }
        Ok(())
    }

    /// Called once per finished task; ages MHN columns.
    pub fn advance_task(&mut self) {
        if let Self::Mhn { mem, .. } = self {
            mem.advance_task();
        }
    }

    /// Snapshot of the memory state (see the format notes in the README).
    /// Read-time settings are not part of the snapshot.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        put_u32(&mut out, SNAPSHOT_VERSION);
        match self {
            Self::Hopfield { mem, .. } => {
                put_u32(&mut out, 1);
                put_u64(&mut out, mem.dim() as u64);
                put_u64(&mut out, mem.pattern_count() as u64);
                put_f64s(&mut out, mem.weights().as_slice());
            }
            Self::Mhn { mem, .. } => {
                put_u32(&mut out, 2);
                put_u64(&mut out, mem.dim() as u64);
                put_u64(&mut out, mem.len() as u64);
                out.extend_from_slice(&mem.beta().to_le_bytes());
                for &a in mem.ages() {
                    put_u32(&mut out, a);
                }
                for c in mem.columns() {
                    put_f64s(&mut out, c);
                }
            }
            Self::Pcn { mem, .. } => {
                put_u32(&mut out, 3);
                put_u32(&mut out, (mem.widths().len() - 1) as u32);
                for &w in mem.widths() {
                    put_u64(&mut out, w as u64);
                }
                out.extend_from_slice(&mem.lambda().to_le_bytes());
                put_f64s(&mut out, &mem.params().flat());
                put_f64s(&mut out, &mem.initial_params().flat());
            }
        }
        out
    }

    /// Inverse of [`Self::to_bytes`]; read-time settings come from `cfg`.
    pub fn from_bytes(bytes: &[u8], cfg: &AmConfig) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(SharcError::Malformed("not a memory snapshot".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(SharcError::Malformed(format!(
                "unsupported snapshot version {version}"
            )));
        }
        let mem = match r.u32()? {
            1 => {
                let d = r.u64()? as usize;
                let count = r.u64()? as usize;
                let w = Matrix::from_vec(d, d, r.f64s(d * d)?)?;
                Self::Hopfield {
                    mem: HopfieldMemory::from_parts(d, w, count),
                    cfg: cfg.hopfield.clone(),
                }
            }
            2 => {
                let d = r.u64()? as usize;
                let n = r.u64()? as usize;
                let beta = r.f64()?;
                let ages = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let columns = (0..n).map(|_| r.f64s(d)).collect::<Result<Vec<_>>>()?;
                Self::Mhn {
                    mem: ModernHopfieldMemory::from_parts(d, beta, columns, ages),
                    cfg: MhnConfig {
                        beta,
                        ..cfg.mhn.clone()
                    },
                }
            }
            3 => {
                let layers = r.u32()? as usize;
                let widths = (0..=layers)
                    .map(|_| r.u64().map(|w| w as usize))
                    .collect::<Result<Vec<_>>>()?;
                let lambda = r.f64()?;
                let template = PcnMemory::new(widths[0], &widths[1..], lambda, 0)?;
                let mut params = template.params().clone();
                params.set_flat(&r.f64s(params.len())?)?;
                let mut initial = template.params().clone();
                initial.set_flat(&r.f64s(initial.len())?)?;
                Self::Pcn {
                    mem: PcnMemory::from_parts(widths, lambda, params, initial),
                    schedule: cfg.pcn.schedule.clone(),
                }
            }
            tag => return Err(SharcError::Malformed(format!("unknown memory tag {tag}"))),
        };
        if r.pos != bytes.len() {
            return Err(SharcError::Malformed(
                "trailing bytes in memory snapshot".into(),
            ));
        }
        Ok(mem)
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"SHAM";
const SNAPSHOT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SharcError::Malformed("truncated memory snapshot".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| SharcError::Malformed("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}
