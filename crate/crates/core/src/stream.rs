//! Task streams: ordered vertex batches plus tagged edges, and the JSON
//! stream file format.
//!
//! The reader validates every stream invariant while parsing, so a violation
//! is reported at the line and column of the offending element.

use std::fmt;
use std::io::Write;

use ndarray::Array2;
use serde::de::{self, DeserializeSeed, Deserializer, MapAccess, SeqAccess, Visitor};

use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId};

/// One task's vertices with features and labels. Rows of `features` and
/// entries of `labels` follow `vertex_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexBatch {
    pub vertex_ids: Vec<VertexId>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl VertexBatch {
    pub fn len(&self) -> usize {
        self.vertex_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertex_ids.is_empty()
    }
}

/// Undirected edge tagged with the first task at which both endpoints exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaggedEdge {
    pub u: VertexId,
    pub v: VertexId,
    /// 1-based task index.
    pub task: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    feature_dim: usize,
    num_classes: usize,
    batches: Vec<VertexBatch>,
    edges: Vec<TaggedEdge>,
    /// Per global id: (1-based task, row within its batch).
    location: Vec<(usize, usize)>,
}

impl TaskStream {
    /// Assemble a stream, checking every invariant.
    pub fn new(
        feature_dim: usize,
        num_classes: usize,
        batches: Vec<VertexBatch>,
        edges: Vec<TaggedEdge>,
    ) -> Result<Self> {
        let mut checker = Checker::new(Some(feature_dim), Some(num_classes));
        for (i, b) in batches.iter().enumerate() {
            checker.header_ok().map_err(Error::InvalidArgument)?;
            checker
                .batch(i + 1, &b.vertex_ids, &b.labels, b.features.nrows(), b.features.ncols())
                .map_err(Error::InvalidArgument)?;
            if b.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("batch {} has non-finite features", i + 1)));
            }
        }
        checker.finish_vertices().map_err(Error::InvalidArgument)?;
        for e in &edges {
            checker.edge(e.u, e.v, e.task).map_err(Error::InvalidArgument)?;
        }
        Ok(Self::assemble(feature_dim, num_classes, batches, edges))
    }

    fn assemble(
        feature_dim: usize,
        num_classes: usize,
        batches: Vec<VertexBatch>,
        edges: Vec<TaggedEdge>,
    ) -> Self {
        let total: usize = batches.iter().map(VertexBatch::len).sum();
        let mut location = vec![(0, 0); total];
        for (t, b) in batches.iter().enumerate() {
            for (row, &v) in b.vertex_ids.iter().enumerate() {
                location[v] = (t + 1, row);
            }
        }
        TaskStream {
            feature_dim,
            num_classes,
            batches,
            edges,
            location,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_tasks(&self) -> usize {
        self.batches.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.location.len()
    }

    pub fn batches(&self) -> &[VertexBatch] {
        &self.batches
    }

    /// Batch of a 1-based task index.
    pub fn batch(&self, task: usize) -> Result<&VertexBatch> {
        self.check_task(task)?;
        Ok(&self.batches[task - 1])
    }

    pub fn edges(&self) -> &[TaggedEdge] {
        &self.edges
    }

    /// 1-based task of a vertex.
    pub fn task_of(&self, v: VertexId) -> Option<usize> {
        self.location.get(v).map(|&(t, _)| t)
    }

    pub fn label(&self, v: VertexId) -> Option<usize> {
        self.location
            .get(v)
            .map(|&(t, row)| self.batches[t - 1].labels[row])
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task == 0 || task > self.num_tasks() {
            return Err(Error::invalid(format!(
                "task index {task} outside 1..={}",
                self.num_tasks()
            )));
        }
        Ok(())
    }

    /// The graph induced by the vertices of tasks `1..=upto` and every edge
    /// tagged `≤ upto`.
    pub fn induce_graph(&self, upto: usize) -> Result<Graph> {
        self.check_task(upto)?;
        let vertices = self.batches[..upto]
            .iter()
            .flat_map(|b| b.vertex_ids.iter().copied());
        let edges = self
            .edges
            .iter()
            .filter(|e| e.task <= upto)
            .map(|e| (e.u, e.v));
        Graph::from_edges(vertices, edges.collect::<Vec<_>>())
    }

    /// Feature matrix with rows aligned to `g`'s local order.
    pub fn features_for(&self, g: &Graph) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((g.num_vertices(), self.feature_dim));
        for (local, &v) in g.ids().iter().enumerate() {
            let &(t, row) = self
                .location
                .get(v)
                .ok_or_else(|| Error::invalid(format!("vertex {v} is not in the stream")))?;
            out.row_mut(local).assign(&self.batches[t - 1].features.row(row));
        }
        Ok(out)
    }

    /// Write the stream file format. Each feature row and each edge sits on
    /// its own line so reader errors point at a single element.
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{{")?;
        writeln!(w, "  \"feature_dim\": {},", self.feature_dim)?;
        writeln!(w, "  \"num_classes\": {},", self.num_classes)?;
        writeln!(w, "  \"batches\": [")?;
        for (bi, b) in self.batches.iter().enumerate() {
            writeln!(w, "    {{")?;
            write!(w, "      \"vertices\": ")?;
            write_list(&mut w, b.vertex_ids.iter())?;
            writeln!(w, ",")?;
            write!(w, "      \"labels\": ")?;
            write_list(&mut w, b.labels.iter())?;
            writeln!(w, ",")?;
            writeln!(w, "      \"features\": [")?;
            for (ri, row) in b.features.rows().into_iter().enumerate() {
                write!(w, "        ")?;
                write_list(&mut w, row.iter())?;
                writeln!(w, "{}", if ri + 1 < b.features.nrows() { "," } else { "" })?;
            }
            writeln!(w, "      ]")?;
            writeln!(w, "    }}{}", if bi + 1 < self.batches.len() { "," } else { "" })?;
        }
        writeln!(w, "  ],")?;
        writeln!(w, "  \"edges\": [")?;
        for (i, e) in self.edges.iter().enumerate() {
            let sep = if i + 1 < self.edges.len() { "," } else { "" };
            writeln!(w, "    [{}, {}, {}]{sep}", e.u, e.v, e.task)?;
        }
        writeln!(w, "  ]")?;
        writeln!(w, "}}")?;
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_json(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Parse and validate a stream file.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let stream = de
            .deserialize_map(StreamVisitor)
            .and_then(|s| de.end().map(|()| s))
            .map_err(|e| Error::Parse {
                line: e.line(),
                column: e.column(),
                message: strip_position(&e),
            })?;
        Ok(stream)
    }

    pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

fn write_list<W: Write, T: serde::Serialize>(
    w: &mut W,
    items: impl Iterator<Item = T>,
) -> Result<()> {
    w.write_all(b"[")?;
    for (i, x) in items.enumerate() {
        if i > 0 {
            w.write_all(b", ")?;
        }
        serde_json::to_writer(&mut *w, &x).map_err(|e| Error::Io(e.into()))?;
    }
    w.write_all(b"]")?;
    Ok(())
}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

/// Incremental invariant checker shared by the reader and [`TaskStream::new`].
struct Checker {
    feature_dim: Option<usize>,
    num_classes: Option<usize>,
    /// Per global id: 1-based task, 0 when unseen.
    task_of: Vec<usize>,
    vertices_seen: usize,
    seen_edges: std::collections::HashSet<(VertexId, VertexId)>,
}

impl Checker {
    fn new(feature_dim: Option<usize>, num_classes: Option<usize>) -> Self {
        Checker {
            feature_dim,
            num_classes,
            task_of: Vec::new(),
            vertices_seen: 0,
            seen_edges: Default::default(),
        }
    }

    fn header_ok(&self) -> std::result::Result<(), String> {
        match (self.feature_dim, self.num_classes) {
            (Some(0), _) => Err("feature_dim must be positive".into()),
            (_, Some(0)) => Err("num_classes must be positive".into()),
            _ => Ok(()),
        }
    }

    fn row(&self, len: usize) -> std::result::Result<(), String> {
        match self.feature_dim {
            Some(p) if p != len => Err(format!("feature row has {len} entries, expected {p}")),
            _ => Ok(()),
        }
    }

    fn batch(
        &mut self,
        task: usize,
        vertices: &[VertexId],
        labels: &[usize],
        rows: usize,
        cols: usize,
    ) -> std::result::Result<(), String> {
        if vertices.is_empty() {
            return Err(format!("batch {task} has no vertices"));
        }
        if labels.len() != vertices.len() {
            return Err(format!(
                "batch {task}: {} labels for {} vertices",
                labels.len(),
                vertices.len()
            ));
        }
        if rows != vertices.len() {
            return Err(format!(
                "batch {task}: {rows} feature rows for {} vertices",
                vertices.len()
            ));
        }
        if rows > 0 {
            self.row(cols)?;
        }
        if let Some(c) = self.num_classes {
            if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
                return Err(format!("batch {task}: label {bad} outside 0..{c}"));
            }
        }
        for &v in vertices {
            if v >= self.task_of.len() {
                self.task_of.resize(v + 1, 0);
            }
            if self.task_of[v] != 0 {
                return Err(format!(
                    "vertex {v} appears in batch {task} and batch {}",
                    self.task_of[v]
                ));
            }
            self.task_of[v] = task;
        }
        self.vertices_seen += vertices.len();
        Ok(())
    }

    fn finish_vertices(&self) -> std::result::Result<(), String> {
        if self.vertices_seen == 0 {
            return Err("stream has no batches".into());
        }
        if let Some(missing) = self.task_of.iter().position(|&t| t == 0) {
            return Err(format!(
                "vertex ids must be dense from 0; id {missing} is missing"
            ));
        }
        Ok(())
    }

    fn edge(&mut self, u: VertexId, v: VertexId, tag: usize) -> std::result::Result<(), String> {
        if u == v {
            return Err(format!("self-loop on vertex {u}"));
        }
        let tu = *self.task_of.get(u).filter(|&&t| t != 0).ok_or(format!("edge endpoint {u} is not a stream vertex"))?;
        let tv = *self.task_of.get(v).filter(|&&t| t != 0).ok_or(format!("edge endpoint {v} is not a stream vertex"))?;
        let want = tu.max(tv);
        if tag != want {
            return Err(format!(
                "edge ({u}, {v}) tagged {tag}, but its endpoints first coexist at task {want}"
            ));
        }
        if !self.seen_edges.insert((u.min(v), u.max(v))) {
            return Err(format!("duplicate edge ({u}, {v})"));
        }
        Ok(())
    }
}

const FIELDS: &[&str] = &["feature_dim", "num_classes", "batches", "edges"];
const BATCH_FIELDS: &[&str] = &["vertices", "labels", "features"];

struct StreamVisitor;

impl<'de> Visitor<'de> for StreamVisitor {
    type Value = TaskStream;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a task stream object")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<TaskStream, A::Error> {
        let mut checker = Checker::new(None, None);
        let mut batches: Option<Vec<VertexBatch>> = None;
        let mut edges: Option<Vec<TaggedEdge>> = None;
        let mut deferred = false;

        while let Some(key) = map.next_key::<String>()? {
            match key.as_str() {
                "feature_dim" => {
                    if checker.feature_dim.is_some() {
                        return Err(de::Error::duplicate_field("feature_dim"));
                    }
                    checker.feature_dim = Some(map.next_value()?);
                    checker.header_ok().map_err(de::Error::custom)?;
                }
                "num_classes" => {
                    if checker.num_classes.is_some() {
                        return Err(de::Error::duplicate_field("num_classes"));
                    }
                    checker.num_classes = Some(map.next_value()?);
                    checker.header_ok().map_err(de::Error::custom)?;
                }
                "batches" => {
                    if batches.is_some() {
                        return Err(de::Error::duplicate_field("batches"));
                    }
                    let header_known = checker.feature_dim.is_some() && checker.num_classes.is_some();
                    let b = map.next_value_seed(BatchesSeed(&mut checker))?;
                    if header_known {
                        checker.finish_vertices().map_err(de::Error::custom)?;
                    } else {
                        deferred = true;
                    }
                    batches = Some(b);
                }
                "edges" => {
                    if edges.is_some() {
                        return Err(de::Error::duplicate_field("edges"));
                    }
                    let eager = batches.is_some()
                        && checker.feature_dim.is_some()
                        && checker.num_classes.is_some();
                    deferred |= !eager;
                    edges = Some(map.next_value_seed(EdgesSeed {
                        checker: &mut checker,
                        check: eager,
                    })?);
                }
                other => return Err(de::Error::unknown_field(other, FIELDS)),
            }
        }

        let feature_dim = checker
            .feature_dim
            .ok_or_else(|| de::Error::missing_field("feature_dim"))?;
        let num_classes = checker
            .num_classes
            .ok_or_else(|| de::Error::missing_field("num_classes"))?;
        let batches = batches.ok_or_else(|| de::Error::missing_field("batches"))?;
        let edges = edges.ok_or_else(|| de::Error::missing_field("edges"))?;

        // Keys arrived out of the canonical order: re-check against the full picture.
        if deferred {
            return TaskStream::new(feature_dim, num_classes, batches, edges).map_err(|e| match e {
                Error::InvalidArgument(msg) => de::Error::custom(msg),
                other => de::Error::custom(other),
            });
        }
        Ok(TaskStream::assemble(feature_dim, num_classes, batches, edges))
    }
}

struct BatchesSeed<'a>(&'a mut Checker);

impl<'de> DeserializeSeed<'de> for BatchesSeed<'_> {
    type Value = Vec<VertexBatch>;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for BatchesSeed<'_> {
    type Value = Vec<VertexBatch>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an array of vertex batches")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let mut out = Vec::new();
        while let Some(b) = seq.next_element_seed(BatchSeed {
            checker: &mut *self.0,
            task: out.len() + 1,
        })? {
            out.push(b);
        }
        Ok(out)
    }
}

struct BatchSeed<'a> {
    checker: &'a mut Checker,
    task: usize,
}

impl<'de> DeserializeSeed<'de> for BatchSeed<'_> {
    type Value = VertexBatch;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_map(self)
    }
}

impl<'de> Visitor<'de> for BatchSeed<'_> {
    type Value = VertexBatch;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a vertex batch object")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
        let mut vertices: Option<Vec<VertexId>> = None;
        let mut labels: Option<Vec<usize>> = None;
        let mut rows: Option<Vec<Vec<f64>>> = None;
        while let Some(key) = map.next_key::<String>()? {
            match key.as_str() {
                "vertices" => vertices = Some(map.next_value()?),
                "labels" => labels = Some(map.next_value()?),
                "features" => rows = Some(map.next_value_seed(RowsSeed(self.checker.feature_dim))?),
                other => return Err(de::Error::unknown_field(other, BATCH_FIELDS)),
            }
        }
        let vertices = vertices.ok_or_else(|| de::Error::missing_field("vertices"))?;
        let labels = labels.ok_or_else(|| de::Error::missing_field("labels"))?;
        let rows = rows.ok_or_else(|| de::Error::missing_field("features"))?;

        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(de::Error::custom(format!(
                "batch {}: feature row {i} has {} entries, expected {cols}",
                self.task,
                rows[i].len()
            )));
        }
        self.checker
            .batch(self.task, &vertices, &labels, rows.len(), cols)
            .map_err(de::Error::custom)?;
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((vertices.len(), cols), flat)
            .map_err(|e| de::Error::custom(e.to_string()))?;
        Ok(VertexBatch {
            vertex_ids: vertices,
            features,
            labels,
        })
    }
}

struct RowsSeed(Option<usize>);

impl<'de> DeserializeSeed<'de> for RowsSeed {
    type Value = Vec<Vec<f64>>;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for RowsSeed {
    type Value = Vec<Vec<f64>>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an array of feature rows")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let mut out = Vec::new();
        while let Some(row) = seq.next_element_seed(RowSeed(self.0))? {
            out.push(row);
        }
        Ok(out)
    }
}

/// One feature row; the length check runs before the row's closing bracket
/// is consumed so errors carry the row's own line.
struct RowSeed(Option<usize>);

impl<'de> DeserializeSeed<'de> for RowSeed {
    type Value = Vec<f64>;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for RowSeed {
    type Value = Vec<f64>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a feature row")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let mut row = Vec::with_capacity(self.0.unwrap_or(0));
        while let Some(x) = seq.next_element::<f64>()? {
            row.push(x);
        }
        if let Some(p) = self.0 {
            if row.len() != p {
                return Err(de::Error::custom(format!(
                    "feature row has {} entries, expected {p}",
                    row.len()
                )));
            }
        }
        Ok(row)
    }
}

struct EdgesSeed<'a> {
    checker: &'a mut Checker,
    check: bool,
}

impl<'de> DeserializeSeed<'de> for EdgesSeed<'_> {
    type Value = Vec<TaggedEdge>;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for EdgesSeed<'_> {
    type Value = Vec<TaggedEdge>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an array of [u, v, task] edges")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let mut out = Vec::new();
        let checker = if self.check { Some(self.checker) } else { None };
        let mut checker = checker;
        while let Some(e) = seq.next_element_seed(EdgeSeed(checker.as_deref_mut()))? {
            out.push(e);
        }
        Ok(out)
    }
}

struct EdgeSeed<'a>(Option<&'a mut Checker>);

impl<'de> DeserializeSeed<'de> for EdgeSeed<'_> {
    type Value = TaggedEdge;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for EdgeSeed<'_> {
    type Value = TaggedEdge;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a [u, v, task] triple")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let mut next = |i| -> Result<usize, A::Error> {
            seq.next_element()?
                .ok_or_else(|| de::Error::invalid_length(i, &"3 elements"))
        };
        let (u, v, task) = (next(0)?, next(1)?, next(2)?);
        if seq.next_element::<de::IgnoredAny>()?.is_some() {
            return Err(de::Error::invalid_length(4, &"3 elements"));
        }
        if let Some(checker) = self.0 {
            checker.edge(u, v, task).map_err(de::Error::custom)?;
        }
        Ok(TaggedEdge { u, v, task })
    }
}
