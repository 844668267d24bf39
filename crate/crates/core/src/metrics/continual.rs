use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular matrix of per-task scores: `get(j, i)` is the score on
/// task `i`'s test split after training through task `j`, defined for
/// `i <= j` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    tasks: usize,
    /// Row `j` holds `j + 1` entries; `None` marks an undefined score.
    rows: Vec<Vec<Option<f64>>>,
}

impl EvalMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            tasks,
            rows: Vec::with_capacity(tasks),
        }
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn completed_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.tasks
    }

    /// Appends the row for the next increment; it must hold exactly one
    /// entry per task seen so far, each within `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<Option<f64>>) -> Result<()> {
        let j = self.rows.len();
        if j >= self.tasks {
            return Err(Error::IncompleteMatrix(format!(
                "matrix already holds all {} rows",
                self.tasks
            )));
        }
        if row.len() != j + 1 {
            return Err(Error::IncompleteMatrix(format!(
                "row {j} must have {} entries, got {}",
                j + 1,
                row.len()
            )));
        }
        if let Some(v) = row.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::IncompleteMatrix(format!("entry {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, j: usize, i: usize) -> Option<f64> {
        if i > j {
            return None;
        }
        self.rows.get(j).and_then(|r| r[i])
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for r in rows {
            m.push_row(r.into_iter().map(Some).collect())?;
        }
        Ok(m)
    }

    fn entry(&self, j: usize, i: usize) -> Result<f64> {
        self.get(j, i)
            .ok_or_else(|| Error::Undefined(format!("score after task {j} on task {i} is undefined")))
    }

    fn require_complete(&self) -> Result<()> {
        if self.tasks == 0 || !self.is_complete() {
            return Err(Error::IncompleteMatrix(format!(
                "{} of {} rows filled",
                self.rows.len(),
                self.tasks
            )));
        }
        Ok(())
    }
}

/// Average accuracy: mean of the final row.
pub fn acc(m: &EvalMatrix) -> Result<f64> {
    m.require_complete()?;
    let last = m.tasks - 1;
    let mut sum = 0.0;
    for i in 0..m.tasks {
        sum += m.entry(last, i)?;
    }
    Ok(sum / m.tasks as f64)
}

/// Backward transfer: mean change on earlier tasks between just after
/// learning them and the end of the stream. Negative means forgetting.
pub fn bwt(m: &EvalMatrix) -> Result<f64> {
    m.require_complete()?;
    if m.tasks < 2 {
        return Err(Error::Undefined("backward transfer needs at least two tasks".into()));
    }
    let last = m.tasks - 1;
    let mut sum = 0.0;
    for i in 0..last {
        sum += m.entry(last, i)? - m.entry(i, i)?;
    }
    Ok(sum / last as f64)
}
