//! On-disk form of a [`RunResult`].
//!
//! | file | header |
//! |------|--------|
//! | `result.json` | pretty JSON of the whole result (no timings) |
//! | `accuracy_matrix.csv` | `after_task,task_0,...,task_{T-1}`; unset cells empty |
//! | `learning_curve.csv` | `task,mean_accuracy` |
//! | `fidelity.csv` | `task,retrieval_mse`; empty when nothing was retrieved |
//! | `timing.txt` | one `task <i> <seconds>` line per task |

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::trainer::RunResult;

pub const RESULT_JSON: &str = "result.json";
pub const ACCURACY_CSV: &str = "accuracy_matrix.csv";
pub const LEARNING_CURVE_CSV: &str = "learning_curve.csv";
pub const FIDELITY_CSV: &str = "fidelity.csv";
pub const TIMING_TXT: &str = "timing.txt";

/// Files whose presence marks a completed run directory.
pub const RESULT_FILES: [&str; 4] = [RESULT_JSON, ACCURACY_CSV, LEARNING_CURVE_CSV, FIDELITY_CSV];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn accuracy_csv(result: &RunResult) -> Result<String> {
    let t = result.accuracy_matrix.num_tasks();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["after_task".to_string()];
    header.extend((0..t).map(|j| format!("task_{j}")));
    w.write_record(&header)?;
    for (i, row) in result.accuracy_matrix.rows().iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("ascii"))
}

pub fn learning_curve_csv(result: &RunResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "mean_accuracy"])?;
    for (i, v) in result.learning_curve.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("ascii"))
}

pub fn fidelity_csv(result: &RunResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "retrieval_mse"])?;
    for (i, v) in result.retrieval_mse.iter().enumerate() {
        w.write_record([i.to_string(), opt(*v)])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("ascii"))
}

pub fn write_run_outputs(dir: &Path, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(result)?;
    json.push('\n');
    fs::write(dir.join(RESULT_JSON), json)?;
    fs::write(dir.join(ACCURACY_CSV), accuracy_csv(result)?)?;
    fs::write(dir.join(LEARNING_CURVE_CSV), learning_curve_csv(result)?)?;
    fs::write(dir.join(FIDELITY_CSV), fidelity_csv(result)?)?;
    let timing: String = result
        .task_seconds
        .iter()
        .enumerate()
        .map(|(i, s)| format!("task {i} {s:.6}\n"))
        .collect();
    fs::write(dir.join(TIMING_TXT), timing)?;
    Ok(())
}

pub fn read_run_result(dir: &Path) -> Result<RunResult> {
    let text = fs::read_to_string(dir.join(RESULT_JSON))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn is_complete(dir: &Path) -> bool {
    RESULT_FILES.iter().all(|f| dir.join(f).is_file())
}
