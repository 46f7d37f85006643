use serde::{Deserialize, Serialize};

use crate::error::{Result, SharcError};
use crate::model::{task_classes, Backbone, FeatureMap, Head};
use crate::stream::TaskStream;
use crate::trainer::Scenario;

/// `r[i][j]`: test accuracy on task `j` after training through task `i`.
/// Entries with `j > i` stay unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            rows: vec![vec![None; tasks]; tasks],
        }
    }

    /// Build from fully specified rows; `None` marks an unset entry.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let t = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != t) {
            return Err(SharcError::shape(t, r.len()));
        }
        Ok(Self { rows })
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.rows[i][j] = Some(value);
    }

    pub fn set_row(&mut self, i: usize, values: &[f64]) {
        for (j, &v) in values.iter().enumerate() {
            self.set(i, j, v);
        }
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    /// Mean of the populated entries of row `i`.
    pub fn row_mean(&self, i: usize) -> Option<f64> {
        let vals: Vec<f64> = self.rows[i].iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn final_row(m: &AccuracyMatrix) -> Result<Vec<f64>> {
    let t = m.num_tasks();
    if t == 0 {
        return Err(SharcError::EmptyInput);
    }
    m.rows[t - 1]
        .iter()
        .map(|v| v.ok_or(SharcError::UnpopulatedRow(t - 1)))
        .collect()
}

/// Mean accuracy over all tasks after the last one.
pub fn acc_metric(m: &AccuracyMatrix) -> Result<f64> {
    let row = final_row(m)?;
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

/// Mean change in accuracy of each earlier task between when it was learned
/// and the end. Negative values mean forgetting.
pub fn bwt_metric(m: &AccuracyMatrix) -> Result<f64> {
    let t = m.num_tasks();
    if t < 2 {
        return Err(SharcError::BwtUndefined);
    }
    let last = final_row(m)?;
    let mut total = 0.0;
    for (j, final_acc) in last.iter().enumerate().take(t - 1) {
        let learned = m.get(j, j).ok_or(SharcError::UnpopulatedRow(j))?;
        total += final_acc - learned;
    }
    Ok(total / (t - 1) as f64)
}

/// Accuracy on each task `0..=upto` from precomputed test features.
pub fn evaluate_features(
    head: &Head,
    test: &[Vec<(FeatureMap, usize)>],
    upto: usize,
    scenario: Scenario,
    classes_per_task: usize,
) -> Result<Vec<f64>> {
    if upto >= test.len() {
        return Err(SharcError::InvalidArgument(format!(
            "task {upto} beyond {} tasks",
            test.len()
        )));
    }
    test[..=upto]
        .iter()
        .enumerate()
        .map(|(j, examples)| {
            if examples.is_empty() {
                return Err(SharcError::EmptyInput);
            }
            let mask = match scenario {
                Scenario::TaskIl => Some(task_classes(j, classes_per_task)),
                Scenario::ClassIl => None,
            };
            let mut correct = 0usize;
            for (map, label) in examples {
                if head.predict(map, mask.clone())? == *label {
                    correct += 1;
                }
            }
            Ok(correct as f64 / examples.len() as f64)
        })
        .collect()
}

/// Accuracy on each task `0..=upto`, pushing test inputs through `backbone`.
pub fn evaluate(
    head: &Head,
    backbone: &Backbone,
    stream: &TaskStream,
    upto: usize,
    scenario: Scenario,
) -> Result<Vec<f64>> {
    let test = stream
        .tasks
        .iter()
        .map(|t| {
            t.test
                .iter()
                .map(|ex| Ok((backbone.forward(ex)?, ex.label)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_features(head, &test, upto, scenario, stream.classes_per_task)
}
