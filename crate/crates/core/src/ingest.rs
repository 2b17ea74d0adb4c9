//! Conversion of plain-text node-classification datasets into task streams.
//!
//! Inputs are a whitespace-separated edge list, a headerless CSV of feature
//! rows and a headerless CSV of integer labels, where row `i` of both CSV files
//! describes vertex `i`. Lines starting with `#` are comments in all three.
//! Classes are grouped in ascending order into tasks of `classes_per_task`
//! classes; each task becomes one batch with task-local labels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::stream::{TaggedEdge, TaskStream, VertexBatch};

/// Assignment of classes to tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPartition {
    /// Classes of each task, ascending; task `t` (1-based) is `tasks[t - 1]`.
    pub tasks: Vec<Vec<usize>>,
    /// Original vertex indices of every kept class, ascending.
    pub members: BTreeMap<usize, Vec<usize>>,
    /// Trailing classes that did not fill a whole task.
    pub dropped: Vec<usize>,
}

impl TaskPartition {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// 1-based task and task-local label of a class, if it is kept.
    pub fn locate(&self, class: usize) -> Option<(usize, usize)> {
        self.tasks
            .iter()
            .enumerate()
            .find_map(|(t, cs)| cs.iter().position(|&c| c == class).map(|k| (t + 1, k)))
    }
}

/// Group the distinct labels, ascending, into consecutive runs of
/// `classes_per_task`. Leftover classes are dropped with a warning.
pub fn partition_by_class(labels: &[usize], classes_per_task: usize) -> Result<TaskPartition> {
    if classes_per_task < 2 {
        return Err(Error::invalid("a task needs at least 2 classes"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(v);
    }
    let classes: Vec<usize> = by_class.keys().copied().collect();
    if classes.len() < classes_per_task {
        return Err(Error::invalid(format!(
            "{} distinct classes cannot fill a task of {classes_per_task}",
            classes.len()
        )));
    }
    let kept = classes.len() - classes.len() % classes_per_task;
    let dropped = classes[kept..].to_vec();
    if !dropped.is_empty() {
        log::warn!("dropping classes {dropped:?}, which do not fill a whole task");
    }
    for c in &dropped {
        by_class.remove(c);
    }
    Ok(TaskPartition {
        tasks: classes[..kept].chunks(classes_per_task).map(<[usize]>::to_vec).collect(),
        members: by_class,
        dropped,
    })
}

/// Dataset as read from disk, indexed by original vertex id.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    /// Undirected edges with `u < v`, deduplicated, self-loops removed.
    pub edges: Vec<(usize, usize)>,
}

impl RawDataset {
    /// Read the three files and check that they agree on the vertex count.
    pub fn read(edges: &Path, features: &Path, labels: &Path) -> Result<Self> {
        let open = |p: &Path| std::fs::File::open(p).map(std::io::BufReader::new);
        let (edges_name, features_name, labels_name) =
            (edges.display().to_string(), features.display().to_string(), labels.display().to_string());
        let features = parse_features(open(features)?, &features_name)?;
        let labels = parse_labels(open(labels)?, &labels_name)?;
        let rows = features.nrows();
        if labels.len() != rows {
            // Point at the first row that has no counterpart in the other file.
            let (file, line) = if labels.len() > rows { (labels_name, rows + 1) } else { (features_name, labels.len() + 1) };
            return Err(Error::Ingest {
                file,
                line,
                message: format!("{} labels but {rows} feature rows", labels.len()),
            });
        }
        let edges = parse_edges(open(edges)?, &edges_name, labels.len())?;
        Ok(RawDataset { features, labels, edges })
    }
}

/// Parse a whitespace-separated edge list over vertices `0..num_vertices`.
/// Both orientations of an edge and repeated lines collapse to one edge.
pub fn parse_edges<R: BufRead>(reader: R, file: &str, num_vertices: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Ingest { file: file.to_string(), line: i + 1, message };
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(format!("expected 2 vertex ids, found {} fields", fields.len())));
        }
        let mut ends = [0usize; 2];
        for (slot, field) in ends.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| err(format!("{field:?} is not a vertex id")))?;
            if *slot >= num_vertices {
                return Err(err(format!("vertex {slot} outside 0..{num_vertices}")));
            }
        }
        let [u, v] = ends;
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    Ok(edges.into_iter().collect())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn csv_line(e: &csv::Error) -> usize {
    e.position().map_or(0, |p| p.line() as usize)
}

/// Parse feature rows; every row must have the same positive width.
pub fn parse_features<R: Read>(reader: R, file: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in csv_reader(reader).into_records() {
        let record = record.map_err(|e| Error::Ingest { file: file.to_string(), line: csv_line(&e), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Ingest { file: file.to_string(), line, message };
        match width {
            None if record.is_empty() => return Err(err("empty feature row".into())),
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(err(format!("{} values, expected {w}", record.len())));
            }
            Some(_) => {}
        }
        for field in &record {
            let x: f64 = field.parse().map_err(|_| err(format!("{field:?} is not a number")))?;
            if !x.is_finite() {
                return Err(err(format!("non-finite value {field}")));
            }
            data.push(x);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Ingest { file: file.to_string(), line: 1, message: "no feature rows".into() })?;
    Ok(Array2::from_shape_vec((rows, width), data).expect("rows have equal width"))
}

/// Parse one non-negative integer label per row.
pub fn parse_labels<R: Read>(reader: R, file: &str) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for record in csv_reader(reader).into_records() {
        let record = record.map_err(|e| Error::Ingest { file: file.to_string(), line: csv_line(&e), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Ingest { file: file.to_string(), line, message };
        if record.len() != 1 {
            return Err(err(format!("expected one label, found {} fields", record.len())));
        }
        let field = &record[0];
        labels.push(field.parse().map_err(|_| err(format!("{field:?} is not a class label")))?);
    }
    Ok(labels)
}

/// An ingested stream together with the original index of every stream vertex.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub stream: TaskStream,
    /// `original[v]` is the dataset index of stream vertex `v`.
    pub original: Vec<usize>,
}

/// Build the stream: vertices of kept classes are renumbered task by task in
/// ascending original order, labels become task-local, and each surviving
/// edge is tagged with the later task of its endpoints.
pub fn to_stream(raw: &RawDataset, partition: &TaskPartition) -> Result<Ingested> {
    if raw.labels.len() != raw.features.nrows() {
        return Err(Error::invalid(format!(
            "{} labels but {} feature rows",
            raw.labels.len(),
            raw.features.nrows()
        )));
    }
    let classes_per_task = partition.tasks.first().map_or(0, Vec::len);
    if classes_per_task == 0 || partition.tasks.iter().any(|t| t.len() != classes_per_task) {
        return Err(Error::invalid("every task must have the same positive number of classes"));
    }
    let mut new_id = vec![usize::MAX; raw.labels.len()];
    let mut task_of = vec![0usize; raw.labels.len()];
    let mut original = Vec::new();
    let mut batches = Vec::with_capacity(partition.num_tasks());
    for (t, classes) in partition.tasks.iter().enumerate() {
        let mut members: Vec<(usize, usize)> = Vec::new();
        for (local, class) in classes.iter().enumerate() {
            let vs = partition
                .members
                .get(class)
                .ok_or_else(|| Error::invalid(format!("class {class} has no member list")))?;
            for &v in vs {
                if raw.labels.get(v) != Some(class) {
                    return Err(Error::invalid(format!("vertex {v} is not labelled {class}")));
                }
                members.push((v, local));
            }
        }
        members.sort_unstable();
        let mut batch = VertexBatch {
            vertex_ids: Vec::with_capacity(members.len()),
            features: Array2::zeros((members.len(), raw.features.ncols())),
            labels: Vec::with_capacity(members.len()),
        };
        for (row, &(v, local)) in members.iter().enumerate() {
            new_id[v] = original.len();
            task_of[v] = t + 1;
            batch.vertex_ids.push(original.len());
            batch.labels.push(local);
            batch.features.row_mut(row).assign(&raw.features.row(v));
            original.push(v);
        }
        batches.push(batch);
    }
    let mut edges: Vec<TaggedEdge> = raw
        .edges
        .iter()
        .filter(|&&(u, v)| task_of[u] != 0 && task_of[v] != 0)
        .map(|&(u, v)| {
            let (a, b) = (new_id[u], new_id[v]);
            TaggedEdge { u: a.min(b), v: a.max(b), task: task_of[u].max(task_of[v]) }
        })
        .collect();
    edges.sort_unstable();
    let stream = TaskStream::new(raw.features.ncols(), classes_per_task, batches, edges)?;
    Ok(Ingested { stream, original })
}
