//! Precomputed feature file (`SHRF`), little-endian:
//!
//! ```text
//! magic "SHRF" | n: u32 | H: u32 | W: u32 | K: u32
//! n x ( label: u32 | task: u32 | H*W*K x f64 )
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Result, SharcError};
use crate::math::{RngStream, Tensor3};
use crate::model::{task_classes, FeatureTable};
use crate::stream::{LabeledExample, TaskData, TaskStream};

const MAGIC: &[u8; 4] = b"SHRF";

#[derive(Debug, Clone)]
pub struct FeatureRecords {
    pub table: FeatureTable,
    /// One example per record; `id` is the record index and `input` is a
    /// `1x1x1` placeholder since features come from `table`.
    pub examples: Vec<LabeledExample>,
}

pub fn write_feature_file(path: &Path, records: &[(usize, usize, Tensor3)]) -> Result<()> {
    let dims = records.first().map_or((0, 0, 0), |r| r.2.dims());
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [records.len(), dims.0, dims.1, dims.2] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (label, task, map) in records {
        if map.dims() != dims {
            return Err(SharcError::shape(
                format!("{dims:?}"),
                format!("{:?}", map.dims()),
            ));
        }
        buf.extend_from_slice(&(*label as u32).to_le_bytes());
        buf.extend_from_slice(&(*task as u32).to_le_bytes());
        for v in map.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureRecords> {
    parse_feature_bytes(&std::fs::read(path)?)
}

fn parse_feature_bytes(bytes: &[u8]) -> Result<FeatureRecords> {
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(SharcError::Malformed("not a SHRF feature file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (n, h, w, k) = (u32_at(4), u32_at(8), u32_at(12), u32_at(16));
    let per = h * w * k;
    let record = 8 + 8 * per;
    if bytes.len() != 20 + n * record {
        return Err(SharcError::Malformed(format!(
            "SHRF size {} does not match {n} records of {record} bytes",
            bytes.len()
        )));
    }
    let mut table = FeatureTable {
        dims: (h, w, k),
        maps: BTreeMap::new(),
    };
    let mut examples = Vec::with_capacity(n);
    for (id, rec) in bytes[20..].chunks_exact(record).enumerate() {
        let label = u32::from_le_bytes(rec[0..4].try_into().unwrap()) as usize;
        let task = u32::from_le_bytes(rec[4..8].try_into().unwrap()) as usize;
        let data = rec[8..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        table.maps.insert(id, Tensor3::from_vec(h, w, k, data)?);
        examples.push(LabeledExample {
            input: Tensor3::zeros(1, 1, 1),
            label,
            task,
            id,
        });
    }
    Ok(FeatureRecords { table, examples })
}

/// Build a task stream from records whose task ids are already assigned.
///
/// Task ids must be `0..T`, every task must own the same number of classes,
/// and task `t`'s labels must lie in `t*cpt..(t+1)*cpt`.
pub fn split_feature_records(
    records: &FeatureRecords,
    test_fraction: f64,
    rng: &RngStream,
) -> Result<TaskStream> {
    let mut by_task: BTreeMap<usize, BTreeMap<usize, Vec<&LabeledExample>>> = BTreeMap::new();
    for ex in &records.examples {
        by_task
            .entry(ex.task)
            .or_default()
            .entry(ex.label)
            .or_default()
            .push(ex);
    }
    let tasks = by_task.len();
    if tasks == 0 {
        return Err(SharcError::EmptyInput);
    }
    if by_task.keys().copied().ne(0..tasks) {
        return Err(SharcError::Malformed(
            "task ids must be contiguous from 0".into(),
        ));
    }
    let cpt = by_task[&0].len();
    let mut out = Vec::with_capacity(tasks);
    for (&t, classes) in &by_task {
        let expected: BTreeSet<usize> = task_classes(t, cpt).collect();
        let got: BTreeSet<usize> = classes.keys().copied().collect();
        if got != expected {
            return Err(SharcError::Malformed(format!(
                "task {t} has classes {got:?}, expected {expected:?}"
            )));
        }
        let mut data = TaskData {
            task: t,
            classes: task_classes(t, cpt),
            train: Vec::new(),
            test: Vec::new(),
        };
        for (&label, examples) in classes {
            let order = rng.derive(label as u64).permutation(examples.len());
            let n_test = (test_fraction * examples.len() as f64).round() as usize;
            for (pos, &i) in order.iter().enumerate() {
                let ex = examples[i].clone();
                if pos < n_test {
                    data.test.push(ex);
                } else {
                    data.train.push(ex);
                }
            }
        }
        out.push(data);
    }
    Ok(TaskStream {
        tasks: out,
        classes_per_task: cpt,
        total_classes: tasks * cpt,
    })
}
