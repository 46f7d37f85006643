//! Fixed-budget episodic buffer holding sparse feature maps, split evenly
//! across tasks. Each task keeps its most recent items.
//!
//! Snapshot layout (little-endian):
//!
//! ```text
//! task_count: u32
//! task_count x ( task: u32 | items: u32 | items x ( source: u32 | SparseFeatureMap ) )
//! ```

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SharcError};
use crate::math::RngStream;
use crate::saliency::SparseFeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// One slot per stored sample.
    Slots(usize),
    /// Sum of `stored_bytes` over stored samples.
    Bytes(usize),
}

impl Budget {
    pub fn total(self) -> usize {
        match self {
            Budget::Slots(n) | Budget::Bytes(n) => n,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Budget::Slots(_) => "slots",
            Budget::Bytes(_) => "bytes",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferItem {
    pub map: SparseFeatureMap,
    /// Index of the originating example in its task's training split.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicBuffer {
    budget: Budget,
    tasks: usize,
    per_task: BTreeMap<usize, VecDeque<BufferItem>>,
}

/// `n` indices into `0..len`: without replacement when `n <= len`, with
/// replacement otherwise.
pub fn sample_indices(len: usize, n: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(SharcError::EmptyBuffer);
    }
    if n <= len {
        let mut order = rng.permutation(len);
        order.truncate(n);
        Ok(order)
    } else {
        Ok((0..n).map(|_| rng.below(len)).collect())
    }
}

impl EpisodicBuffer {
    pub fn new(budget: Budget, tasks: usize) -> Result<Self> {
        if tasks == 0 {
            return Err(SharcError::InvalidArgument(
                "buffer needs at least one task".into(),
            ));
        }
        Ok(Self {
            budget,
            tasks,
            per_task: BTreeMap::new(),
        })
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks
    }

    /// Per-task share of the budget, in the budget's unit.
    pub fn per_task_budget(&self) -> usize {
        self.budget.total() / self.tasks
    }

    fn usage(&self, items: &VecDeque<BufferItem>) -> usize {
        match self.budget {
            Budget::Slots(_) => items.len(),
            Budget::Bytes(_) => items.iter().map(|i| i.map.stored_bytes()).sum(),
        }
    }

    /// Append to task `task`, evicting that task's oldest items while over
    /// its share of the budget.
    pub fn insert(&mut self, task: usize, item: BufferItem) -> Result<()> {
        if item.map.task != task {
            return Err(SharcError::InvalidArgument(format!(
                "item of task {} inserted into task {task}",
                item.map.task
            )));
        }
        if task >= self.tasks {
            return Err(SharcError::InvalidArgument(format!(
                "task {task} beyond {} tasks",
                self.tasks
            )));
        }
        let limit = self.per_task_budget();
        let mut items = self.per_task.remove(&task).unwrap_or_default();
        items.push_back(item);
        while !items.is_empty() && self.usage(&items) > limit {
            items.pop_front();
        }
        self.per_task.insert(task, items);
        Ok(())
    }

    /// Items of `task` in insertion order.
    pub fn items(&self, task: usize) -> Vec<&BufferItem> {
        self.per_task
            .get(&task)
            .map_or_else(Vec::new, |q| q.iter().collect())
    }

    pub fn len(&self) -> usize {
        self.per_task.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task_len(&self, task: usize) -> usize {
        self.per_task.get(&task).map_or(0, VecDeque::len)
    }

    pub fn stored_bytes(&self) -> usize {
        self.per_task
            .values()
            .flatten()
            .map(|i| i.map.stored_bytes())
            .sum()
    }

    /// Uniform sample from one task, or from all tasks when `task` is `None`.
    pub fn sample(
        &self,
        task: Option<usize>,
        n: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<&BufferItem>> {
        let pool: Vec<&BufferItem> = match task {
            Some(t) => self.items(t),
            None => self.per_task.values().flatten().collect(),
        };
        let idx = sample_indices(pool.len(), n, rng)?;
        Ok(idx.into_iter().map(|i| pool[i]).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.per_task.len() as u32).to_le_bytes());
        for (&task, items) in &self.per_task {
            out.extend_from_slice(&(task as u32).to_le_bytes());
            out.extend_from_slice(&(items.len() as u32).to_le_bytes());
            for item in items {
                out.extend_from_slice(&(item.source as u32).to_le_bytes());
                out.extend_from_slice(&item.map.to_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], budget: Budget, tasks: usize) -> Result<Self> {
        let mut buf = Self::new(budget, tasks)?;
        let mut pos = 0;
        let u32_at = |pos: &mut usize| -> Result<usize> {
            let raw = bytes
                .get(*pos..*pos + 4)
                .ok_or_else(|| SharcError::Malformed("truncated buffer snapshot".into()))?;
            *pos += 4;
            Ok(u32::from_le_bytes(raw.try_into().unwrap()) as usize)
        };
        let task_count = u32_at(&mut pos)?;
        for _ in 0..task_count {
            let task = u32_at(&mut pos)?;
            let count = u32_at(&mut pos)?;
            let mut items = VecDeque::with_capacity(count);
            for _ in 0..count {
                let source = u32_at(&mut pos)?;
                let (map, used) = SparseFeatureMap::from_bytes(&bytes[pos..])?;
                pos += used;
                items.push_back(BufferItem { map, source });
            }
            buf.per_task.insert(task, items);
        }
        if pos != bytes.len() {
            return Err(SharcError::Malformed(
                "trailing bytes in buffer snapshot".into(),
            ));
        }
        Ok(buf)
    }
}
