//! Task streams: a sequence of tasks with disjoint class groups, built from a
//! synthetic generator or from IDX image/label files.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SharcError};
use crate::math::{RngStream, Tensor3};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    /// Image (channels-last, pixels in `[0, 1]`).
    pub input: Tensor3,
    pub label: usize,
    pub task: usize,
    /// Stable identifier, used as the key for precomputed feature tables.
    pub id: usize,
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub task: usize,
    pub classes: Range<usize>,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<TaskData>,
    pub classes_per_task: usize,
    pub total_classes: usize,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn class_range(&self, task: usize) -> Range<usize> {
        task * self.classes_per_task..(task + 1) * self.classes_per_task
    }

    pub fn train_len(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).sum()
    }
}

/// A minibatch of one task, as indices into that task's train set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub task: usize,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn examples<'a>(
        &'a self,
        data: &'a TaskData,
    ) -> impl Iterator<Item = &'a LabeledExample> + 'a {
        self.indices.iter().map(move |&i| &data.train[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub image_dims: (usize, usize, usize),
    pub noise_sigma: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            tasks: 5,
            classes_per_task: 2,
            per_class_train: 50,
            per_class_test: 50,
            image_dims: (16, 16, 3),
            noise_sigma: 0.3,
        }
    }
}

/// Gaussian-around-class-mean image stream.
///
/// Class `c`'s mean image depends only on `(rng seed, c)`; examples add
/// per-pixel Gaussian noise and clip to `[0, 1]`.
pub fn make_synthetic_stream(spec: &SyntheticSpec, rng: &RngStream) -> Result<TaskStream> {
    let SyntheticSpec {
        tasks,
        classes_per_task,
        per_class_train,
        per_class_test,
        image_dims: (h, w, c),
        noise_sigma,
    } = *spec;
    if tasks == 0 || classes_per_task == 0 || per_class_train == 0 || per_class_test == 0 {
        return Err(SharcError::InvalidArgument(
            "synthetic stream counts must be >= 1".into(),
        ));
    }
    if h == 0 || w == 0 || c == 0 {
        return Err(SharcError::InvalidArgument(
            "image dims must be >= 1".into(),
        ));
    }
    if !(noise_sigma >= 0.0) {
        return Err(SharcError::InvalidArgument(format!(
            "noise_sigma {noise_sigma} < 0"
        )));
    }

    let mut next_id = 0;
    let mut out = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let classes = t * classes_per_task..(t + 1) * classes_per_task;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in classes.clone() {
            let mean = class_mean(rng, class, h * w * c);
            let mut noise = rng.derive(0x5_0000 + class as u64);
            for (split, count) in [(&mut train, per_class_train), (&mut test, per_class_test)] {
                for _ in 0..count {
                    let data = mean
                        .iter()
                        .map(|&m| (m + noise_sigma * noise.normal()).clamp(0.0, 1.0))
                        .collect();
                    split.push(LabeledExample {
                        input: Tensor3::from_vec(h, w, c, data)?,
                        label: class,
                        task: t,
                        id: next_id,
                    });
                    next_id += 1;
                }
            }
        }
        out.push(TaskData {
            task: t,
            classes,
            train,
            test,
        });
    }
    Ok(TaskStream {
        tasks: out,
        classes_per_task,
        total_classes: tasks * classes_per_task,
    })
}

fn class_mean(rng: &RngStream, class: usize, len: usize) -> Vec<f64> {
    let mut r = rng.derive(0x1_0000 + class as u64);
    (0..len).map(|_| r.uniform()).collect()
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| SharcError::Malformed(format!("truncated {what} header")))
}

/// Parse an IDX image file (magic `0x00000803`) into `rows x cols x 1` tensors.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Tensor3>> {
    let magic = read_be_u32(bytes, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(SharcError::NotIdx(format!("image magic {magic:#010x}")));
    }
    let count = read_be_u32(bytes, 4, "image")? as usize;
    let rows = read_be_u32(bytes, 8, "image")? as usize;
    let cols = read_be_u32(bytes, 12, "image")? as usize;
    let per = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * per {
        return Err(SharcError::Malformed(format!(
            "truncated image data: expected {} bytes, found {}",
            count * per,
            body.len()
        )));
    }
    body.chunks_exact(per.max(1))
        .take(count)
        .map(|px| {
            Tensor3::from_vec(
                rows,
                cols,
                1,
                px.iter().map(|&b| b as f64 / 255.0).collect(),
            )
        })
        .collect()
}

/// Parse an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_be_u32(bytes, 0, "label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(SharcError::NotIdx(format!("label magic {magic:#010x}")));
    }
    let count = read_be_u32(bytes, 4, "label")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(SharcError::Malformed(format!(
            "truncated label data: expected {count} bytes, found {}",
            body.len()
        )));
    }
    Ok(body[..count].iter().map(|&b| b as usize).collect())
}

/// Load an IDX image/label file pair. Task ids are left at 0 until
/// [`split_into_tasks`] assigns them.
pub fn load_idx_dataset(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledExample>> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(SharcError::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(id, (input, label))| LabeledExample {
            input,
            label,
            task: 0,
            id,
        })
        .collect())
}

/// Split a flat labeled set into `tasks` tasks of `classes_per_task` classes.
///
/// Distinct labels are taken in ascending order: the first `classes_per_task`
/// go to task 0, and so on. Labels are renumbered to their rank among the
/// selected classes so the head sees contiguous class ids. Each class's
/// train/test split is a seeded shuffle with `round(test_fraction * n)` test
/// examples.
pub fn split_into_tasks(
    set: &[LabeledExample],
    tasks: usize,
    classes_per_task: usize,
    test_fraction: f64,
    rng: &RngStream,
) -> Result<TaskStream> {
    if tasks == 0 || classes_per_task == 0 {
        return Err(SharcError::InvalidArgument(
            "tasks and classes_per_task must be >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(SharcError::InvalidArgument(format!(
            "test_fraction {test_fraction} outside [0, 1]"
        )));
    }
    let mut by_label: BTreeMap<usize, Vec<&LabeledExample>> = BTreeMap::new();
    for ex in set {
        by_label.entry(ex.label).or_default().push(ex);
    }
    let required = tasks * classes_per_task;
    if by_label.len() < required {
        return Err(SharcError::InsufficientClasses {
            required,
            available: by_label.len(),
        });
    }

    let mut out: Vec<TaskData> = (0..tasks)
        .map(|t| TaskData {
            task: t,
            classes: t * classes_per_task..(t + 1) * classes_per_task,
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (rank, (&label, examples)) in by_label.iter().take(required).enumerate() {
        let t = rank / classes_per_task;
        let order = rng.derive(label as u64).permutation(examples.len());
        let n_test = (test_fraction * examples.len() as f64).round() as usize;
        for (pos, &i) in order.iter().enumerate() {
            let mut ex = examples[i].clone();
            ex.label = rank;
            ex.task = t;
            if pos < n_test {
                out[t].test.push(ex);
            } else {
                out[t].train.push(ex);
            }
        }
    }
    Ok(TaskStream {
        tasks: out,
        classes_per_task,
        total_classes: required,
    })
}

/// One epoch over a task's train set: a seeded shuffle cut into consecutive
/// batches; the last may be short.
pub fn batches(data: &TaskData, batch_size: usize, rng: &mut RngStream) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(SharcError::InvalidArgument(
            "batch_size must be >= 1".into(),
        ));
    }
    let order = rng.permutation(data.train.len());
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            task: data.task,
            indices: chunk.to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            tasks: 5,
            classes_per_task: 2,
            per_class_train: 3,
            per_class_test: 2,
            image_dims: (4, 4, 1),
            noise_sigma: 0.2,
        }
    }

    #[test]
    fn synthetic_structure() {
        let s = make_synthetic_stream(&small_spec(), &RngStream::new(1)).unwrap();
        assert_eq!(s.total_classes, 10);
        assert_eq!(s.num_tasks(), 5);
        for (t, task) in s.tasks.iter().enumerate() {
            assert_eq!(task.classes, 2 * t..2 * t + 2);
            assert_eq!(task.train.len(), 6);
            assert_eq!(task.test.len(), 4);
            for ex in task.train.iter().chain(&task.test) {
                assert_eq!(ex.task, t);
                assert!(task.classes.contains(&ex.label));
                assert!(ex
                    .input
                    .as_slice()
                    .iter()
                    .all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    #[test]
    fn zero_noise_examples_equal_class_mean() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            ..small_spec()
        };
        let rng = RngStream::new(9);
        let s = make_synthetic_stream(&spec, &rng).unwrap();
        for task in &s.tasks {
            for ex in task.train.iter().chain(&task.test) {
                assert_eq!(
                    ex.input.as_slice(),
                    class_mean(&rng, ex.label, 16).as_slice()
                );
            }
        }
    }

    #[test]
    fn class_mean_independent_of_task_count() {
        let rng = RngStream::new(5);
        let b = make_synthetic_stream(
            &SyntheticSpec {
                tasks: 2,
                noise_sigma: 0.0,
                ..small_spec()
            },
            &rng,
        )
        .unwrap();
        assert_eq!(
            b.tasks[1].train[0].input.as_slice(),
            class_mean(&rng, 2, 16).as_slice()
        );
    }

    #[test]
    fn deterministic_stream() {
        let a = make_synthetic_stream(&small_spec(), &RngStream::new(3)).unwrap();
        let b = make_synthetic_stream(&small_spec(), &RngStream::new(3)).unwrap();
        for (x, y) in a.tasks.iter().zip(&b.tasks) {
            assert_eq!(x.train, y.train);
            assert_eq!(x.test, y.test);
        }
    }

    #[test]
    fn batch_partition() {
        let spec = SyntheticSpec {
            tasks: 1,
            classes_per_task: 2,
            per_class_train: 5,
            ..small_spec()
        };
        let s = make_synthetic_stream(&spec, &RngStream::new(1)).unwrap();
        let task = &s.tasks[0];
        let b = batches(task, 4, &mut RngStream::new(7)).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.iter().flat_map(|b| b.indices.clone()).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let whole = batches(task, 100, &mut RngStream::new(7)).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].len(), 10);

        assert_eq!(b, batches(task, 4, &mut RngStream::new(7)).unwrap());
        assert!(batches(task, 0, &mut RngStream::new(7)).is_err());
    }

    fn flat_set(classes: usize, per_class: usize) -> Vec<LabeledExample> {
        let mut id = 0;
        let mut out = Vec::new();
        for c in 0..classes {
            for _ in 0..per_class {
                out.push(LabeledExample {
                    input: Tensor3::zeros(1, 1, 1),
                    label: c,
                    task: 0,
                    id,
                });
                id += 1;
            }
        }
        out
    }

    #[test]
    fn split_ascending_assignment() {
        let set = flat_set(10, 10);
        let s = split_into_tasks(&set, 5, 2, 0.5, &RngStream::new(0)).unwrap();
        let labels = |t: usize| {
            let mut l: Vec<usize> = s.tasks[t].train.iter().map(|e| e.label).collect();
            l.sort();
            l.dedup();
            l
        };
        assert_eq!(labels(0), vec![0, 1]);
        assert_eq!(labels(4), vec![8, 9]);
        for task in &s.tasks {
            assert_eq!(task.train.len(), 10);
            assert_eq!(task.test.len(), 10);
        }

        let single = split_into_tasks(&set, 1, 10, 0.5, &RngStream::new(0)).unwrap();
        assert_eq!(single.num_tasks(), 1);
        assert_eq!(
            single.tasks[0].train.len() + single.tasks[0].test.len(),
            100
        );

        match split_into_tasks(&set, 6, 2, 0.5, &RngStream::new(0)) {
            Err(SharcError::InsufficientClasses {
                required,
                available,
            }) => {
                assert_eq!((required, available), (12, 10));
            }
            other => panic!("expected InsufficientClasses, got {other:?}"),
        }
    }

    #[test]
    fn split_renumbers_sparse_labels() {
        let mut set = flat_set(4, 2);
        for ex in &mut set {
            ex.label = ex.label * 3 + 1;
        }
        let s = split_into_tasks(&set, 2, 2, 0.0, &RngStream::new(0)).unwrap();
        let labels: Vec<usize> = s.tasks[1].train.iter().map(|e| e.label).collect();
        assert!(labels.iter().all(|l| (2..4).contains(l)));
    }

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        std::fs::write(&img, idx_images(4, 2, 2, &[0u8; 16])).unwrap();
        std::fs::write(&lab, idx_labels(&[0, 1, 1, 0])).unwrap();
        let set = load_idx_dataset(&img, &lab).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(
            set.iter().map(|e| e.label).collect::<Vec<_>>(),
            vec![0, 1, 1, 0]
        );
        assert!(set
            .iter()
            .all(|e| e.input.as_slice().iter().all(|&p| p == 0.0)));

        let px = parse_idx_images(&idx_images(1, 1, 2, &[255, 51])).unwrap();
        assert_eq!(px[0].as_slice(), &[1.0, 0.2]);

        std::fs::write(&img, idx_images(4, 2, 2, &[0u8; 10])).unwrap();
        assert!(matches!(
            load_idx_dataset(&img, &lab),
            Err(SharcError::Malformed(_))
        ));

        std::fs::write(&img, idx_images(3, 2, 2, &[0u8; 12])).unwrap();
        assert!(matches!(
            load_idx_dataset(&img, &lab),
            Err(SharcError::CountMismatch {
                images: 3,
                labels: 4
            })
        ));

        std::fs::write(&img, idx_labels(&[1, 2])).unwrap();
        let err = load_idx_dataset(&img, &lab).unwrap_err();
        assert!(err.to_string().contains("not an IDX file"));
    }
}
