//! Continual-learning metrics and the embedding distortion profile.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::EmbeddingTable;
use crate::graph::{multi_source_bfs, Graph, VertexId};

/// Header comment of the performance-matrix CSV.
pub const PERFORMANCE_CSV_VERSION: &str = "# seaer performance-matrix v1";
/// Header comment of the distortion CSV.
pub const DISTORTION_CSV_VERSION: &str = "# seaer distortion-profile v1";

/// `r[i][j]`: accuracy on task `j` after training through stage `i`.
///
/// Continual runs fill the lower triangle (row `i` holds tasks `1..=i`).
/// Joint training records only the final row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    num_tasks: usize,
    /// Stage index (1-based) and accuracies for tasks `1..=row.len()`.
    rows: Vec<(usize, Vec<f64>)>,
}

impl PerformanceMatrix {
    /// Lower-triangular matrix; `rows[i]` must hold `i + 1` entries.
    pub fn triangular(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("performance matrix has no rows"));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != i + 1 {
                return Err(Error::invalid(format!("row {} has {} entries, expected {}", i + 1, r.len(), i + 1)));
            }
            check_entries(r)?;
        }
        Ok(PerformanceMatrix { num_tasks: rows.len(), rows: rows.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect() })
    }

    /// Single final row covering every task.
    pub fn final_only(row: Vec<f64>) -> Result<Self> {
        if row.is_empty() {
            return Err(Error::invalid("performance row is empty"));
        }
        check_entries(&row)?;
        Ok(PerformanceMatrix { num_tasks: row.len(), rows: vec![(row.len(), row)] })
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn is_triangular(&self) -> bool {
        self.rows.len() == self.num_tasks
    }

    /// `r[i][j]` with 1-based indices, when recorded.
    pub fn get(&self, stage: usize, task: usize) -> Option<f64> {
        let (_, row) = self.rows.iter().find(|(s, _)| *s == stage)?;
        row.get(task.checked_sub(1)?).copied()
    }

    pub fn final_row(&self) -> &[f64] {
        &self.rows.last().expect("matrix is non-empty").1
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(s, r)| (*s, r.as_slice()))
    }

    /// CSV with a version comment, a `stage,task_1,..,task_m` header and
    /// empty cells above the diagonal.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(PERFORMANCE_CSV_VERSION);
        out.push('\n');
        out.push_str("stage");
        for j in 1..=self.num_tasks {
            write!(out, ",task_{j}").unwrap();
        }
        out.push('\n');
        for (stage, row) in self.rows() {
            write!(out, "{stage}").unwrap();
            for j in 0..self.num_tasks {
                out.push(',');
                if let Some(x) = row.get(j) {
                    write!(out, "{x}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}

fn check_entries(row: &[f64]) -> Result<()> {
    if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!("accuracy {x} is outside [0, 1]")));
    }
    Ok(())
}

/// Final average performance: mean of the last row.
pub fn fap(r: &PerformanceMatrix) -> f64 {
    let last = r.final_row();
    last.iter().sum::<f64>() / last.len() as f64
}

/// Final average forgetting `Σ_j (r[m][j] − r[j][j]) / m`; zero for one task.
///
/// Needs the diagonal, so it is an error on a final-row-only matrix.
pub fn faf(r: &PerformanceMatrix) -> Result<f64> {
    if !r.is_triangular() {
        return Err(Error::invalid("forgetting needs a full lower-triangular matrix"));
    }
    let m = r.num_tasks();
    let last = r.final_row();
    let total: f64 = (1..=m).map(|j| last[j - 1] - r.get(j, j).expect("diagonal entry")).sum();
    Ok(total / m as f64)
}

/// `r[i][j] − r[j][j]` for `j ≤ i`; row `i` holds `i` entries.
pub fn forgetting_matrix(r: &PerformanceMatrix) -> Result<Vec<Vec<f64>>> {
    if !r.is_triangular() {
        return Err(Error::invalid("forgetting needs a full lower-triangular matrix"));
    }
    Ok(r.rows()
        .map(|(_, row)| {
            row.iter()
                .enumerate()
                .map(|(j, x)| x - r.get(j + 1, j + 1).expect("diagonal entry"))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fap: f64,
    /// Absent for joint training, which records no diagonal.
    pub faf: Option<f64>,
    pub forgetting: Option<Vec<Vec<f64>>>,
}

impl MetricsReport {
    pub fn from_matrix(r: &PerformanceMatrix) -> Self {
        MetricsReport { fap: fap(r), faf: faf(r).ok(), forgetting: forgetting_matrix(r).ok() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopBucket {
    pub hop: u32,
    pub count: usize,
    /// Mean over the bucket of the Euclidean distance to the nearest
    /// train-set embedding.
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionProfile {
    /// Non-empty buckets in increasing hop order.
    pub buckets: Vec<HopBucket>,
    /// Least-squares slope through the origin of mean distance on hop.
    pub slope: f64,
    /// `max_h(mean_h / h) / min_h(mean_h / h)`; `None` when degenerate.
    pub alpha: Option<f64>,
    /// Set when some bucket has zero mean distance, leaving `alpha` undefined.
    pub degenerate: bool,
}

impl DistortionProfile {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{DISTORTION_CSV_VERSION}\nhop,count,mean_distance\n");
        for b in &self.buckets {
            writeln!(out, "{},{},{}", b.hop, b.count, b.mean_distance).unwrap();
        }
        out
    }
}

/// Groups vertices by hop distance `1..=max_hops` from `train_set` and
/// measures how far their embeddings sit from the nearest train embedding.
pub fn distortion_profile(
    embeddings: &EmbeddingTable,
    g: &Graph,
    train_set: &[VertexId],
    max_hops: u32,
) -> Result<DistortionProfile> {
    if train_set.is_empty() {
        return Err(Error::invalid("train set is empty"));
    }
    let anchors = embeddings.select(train_set)?;
    let field = multi_source_bfs(g, train_set)?;
    let mut sums = vec![(0usize, 0.0f64); max_hops as usize];
    for (v, hops) in field.iter() {
        let Some(h) = hops.finite().filter(|&h| (1..=max_hops).contains(&h)) else {
            continue;
        };
        let x = embeddings
            .get(v)
            .ok_or_else(|| Error::invalid(format!("no embedding for vertex {v}")))?;
        let nearest = anchors
            .rows()
            .into_iter()
            .map(|a| a.iter().zip(x.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        let slot = &mut sums[h as usize - 1];
        slot.0 += 1;
        slot.1 += nearest;
    }
    let buckets: Vec<HopBucket> = sums
        .into_iter()
        .enumerate()
        .filter(|(_, (count, _))| *count > 0)
        .map(|(i, (count, total))| HopBucket { hop: i as u32 + 1, count, mean_distance: total / count as f64 })
        .collect();
    if buckets.is_empty() {
        return Err(Error::computation(format!("no vertex lies within {max_hops} hops of the train set")));
    }
    let (num, den) = buckets.iter().fold((0.0, 0.0), |(n, d), b| {
        let h = b.hop as f64;
        (n + h * b.mean_distance, d + h * h)
    });
    let ratios: Vec<f64> = buckets.iter().map(|b| b.mean_distance / b.hop as f64).collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let degenerate = lo <= 0.0;
    Ok(DistortionProfile { buckets, slope: num / den, alpha: (!degenerate).then(|| hi / lo), degenerate })
}
