use serde::{Deserialize, Serialize};

use super::{CellResult, Method, Task};
use crate::error::{Error, Result};

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Stat> {
        if values.is_empty() {
            return Err(Error::EmptyDataset("no values to summarize".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Stat { mean, std })
    }
}

/// Aggregates of one (task, method, λ) cell over its runs. Percent scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub task: Task,
    pub method: Method,
    pub lambda: f64,
    pub runs: usize,
    /// Set when only one run completed, so the deviations are 0 by convention.
    pub single_run: bool,
    pub train_acc: Stat,
    pub val_acc: Stat,
    pub attacker_advantage: Stat,
    /// Train minus validation accuracy.
    pub gap: Stat,
}

/// Groups cells by (task, method, λ), ordered by task, method, then λ.
pub fn aggregate(cells: &[CellResult]) -> Result<Vec<CellSummary>> {
    if cells.is_empty() {
        return Err(Error::EmptyDataset("no cells to aggregate".into()));
    }
    let mut keys: Vec<(Task, Method, f64)> =
        cells.iter().map(|c| (c.task, c.method, c.lambda)).collect();
    keys.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    keys.dedup();
    keys.into_iter()
        .map(|(task, method, lambda)| {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.task == task && c.method == method && c.lambda == lambda)
                .collect();
            let col = |f: fn(&CellResult) -> f64| group.iter().map(|c| f(c)).collect::<Vec<f64>>();
            Ok(CellSummary {
                task,
                method,
                lambda,
                runs: group.len(),
                single_run: group.len() == 1,
                train_acc: Stat::of(&col(|c| c.train_acc))?,
                val_acc: Stat::of(&col(|c| c.val_acc))?,
                attacker_advantage: Stat::of(&col(|c| c.attacker_advantage))?,
                gap: Stat::of(&col(|c| c.train_acc - c.val_acc))?,
            })
        })
        .collect()
}

/// Pearson correlation in one pass, accumulating co-moments.
pub fn pearson(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "{} points",
            points.len()
        )));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &(x, y)) in points.iter().enumerate() {
        let n = (i + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a coordinate has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub task: Task,
    pub method: Method,
    pub lambda: f64,
    /// Mean attacker advantage (percent).
    pub advantage: f64,
    /// Mean train − validation accuracy (percentage points).
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub points: Vec<CorrelationPoint>,
    pub r: f64,
}

/// Pearson r between per-cell mean advantage and mean accuracy gap,
/// optionally restricted to some tasks. Needs at least three cells.
pub fn gap_advantage_correlation(
    summary: &[CellSummary],
    tasks: Option<&[Task]>,
) -> Result<Correlation> {
    let points: Vec<CorrelationPoint> = summary
        .iter()
        .filter(|s| tasks.is_none_or(|t| t.contains(&s.task)))
        .map(|s| CorrelationPoint {
            task: s.task,
            method: s.method,
            lambda: s.lambda,
            advantage: s.attacker_advantage.mean,
            gap: s.gap.mean,
        })
        .collect();
    if points.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 3 cells, have {}",
            points.len()
        )));
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.advantage, p.gap)).collect();
    let r = pearson(&xy)?;
    Ok(Correlation { points, r })
}
