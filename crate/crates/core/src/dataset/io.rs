//! Canonical on-disk formats: `nodes.csv`, `edges.csv`, `splits.csv`, `meta.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, LinkSample, Split};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;

/// Per-split, per-class sample counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train_pos: usize,
    pub train_neg: usize,
    pub val_pos: usize,
    pub val_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
}

impl SplitCounts {
    pub fn tally(samples: &[LinkSample]) -> Self {
        let mut c = Self::default();
        for s in samples {
            let slot = match (s.split, s.label) {
                (Split::Train, 1) => &mut c.train_pos,
                (Split::Train, _) => &mut c.train_neg,
                (Split::Val, 1) => &mut c.val_pos,
                (Split::Val, _) => &mut c.val_neg,
                (Split::Test, 1) => &mut c.test_pos,
                (Split::Test, _) => &mut c.test_neg,
            };
            *slot += 1;
        }
        c
    }

    pub fn positives(&self) -> usize {
        self.train_pos + self.val_pos + self.test_pos
    }

    pub fn negatives(&self) -> usize {
        self.train_neg + self.val_neg + self.test_neg
    }
}

/// Sidecar written next to `splits.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub delta: f64,
    pub mean_edge_length: f64,
    pub std_edge_length: f64,
    pub d_spatial: usize,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_positives: usize,
    pub num_negatives: usize,
    pub counts: SplitCounts,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec
        .get(col)
        .ok_or_else(|| parse_err(path, line, format!("missing column {name}")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} from {raw:?}")))
}

/// Reads `nodes.csv` (`id,x,y[,z]`) and `edges.csv` (`u,v`).
pub fn load_graph_csv(nodes_path: &Path, edges_path: &Path) -> Result<SpatialGraph> {
    let mut reader = csv_reader(nodes_path)?;
    let headers = reader.headers().map_err(|e| csv_err(nodes_path, e))?.clone();
    let dim = headers.len().saturating_sub(1);
    if headers.get(0) != Some("id") || !(dim == 2 || dim == 3) {
        return Err(parse_err(
            nodes_path,
            1,
            format!("expected header id,x,y[,z], found {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(nodes_path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != dim + 1 {
            return Err(Error::Validation(format!(
                "{}:{line}: row has {} coordinates, header declares {dim}",
                nodes_path.display(),
                rec.len().saturating_sub(1)
            )));
        }
        let id: usize = field(nodes_path, &rec, 0, "id")?;
        let mut c = Vec::with_capacity(dim);
        for k in 0..dim {
            c.push(field(nodes_path, &rec, k + 1, &headers[k + 1])?);
        }
        rows.push((id, c));
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("empty graph: {} has no nodes", nodes_path.display())));
    }
    let n = rows.len();
    let mut coords = vec![f64::NAN; n * dim];
    let mut filled = vec![false; n];
    for (id, c) in rows {
        if id >= n || filled[id] {
            return Err(Error::Structural(format!(
                "node ids must be dense and unique in 0..{n}; offending id {id}"
            )));
        }
        filled[id] = true;
        coords[id * dim..(id + 1) * dim].copy_from_slice(&c);
    }

    let mut reader = csv_reader(edges_path)?;
    let headers = reader.headers().map_err(|e| csv_err(edges_path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["u", "v"] {
        return Err(parse_err(edges_path, 1, "expected header u,v"));
    }
    let mut edges = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(edges_path, e))?;
        let u: usize = field(edges_path, &rec, 0, "u")?;
        let v: usize = field(edges_path, &rec, 1, "v")?;
        edges.push((u, v));
    }
    SpatialGraph::new(dim, coords, &edges)
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_graph_csv(g: &SpatialGraph, nodes_path: &Path, edges_path: &Path) -> Result<()> {
    let axes = ["x", "y", "z"];
    let mut out = String::from("id");
    for a in &axes[..g.dim()] {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for u in 0..g.num_nodes() {
        out.push_str(&u.to_string());
        for c in g.coord(u) {
            out.push(',');
            out.push_str(&c.to_string());
        }
        out.push('\n');
    }
    write_text(nodes_path, &out)?;

    let mut out = String::from("u,v\n");
    for (u, v) in g.edges() {
        out.push_str(&format!("{u},{v}\n"));
    }
    write_text(edges_path, &out)
}

pub fn save_splits_csv(samples: &[LinkSample], path: &Path) -> Result<()> {
    let mut out = String::from("u,v,label,split\n");
    for s in samples {
        out.push_str(&format!("{},{},{},{}\n", s.u, s.v, s.label, s.split));
    }
    write_text(path, &out)
}

pub fn load_splits_csv(path: &Path) -> Result<Vec<LinkSample>> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["u", "v", "label", "split"] {
        return Err(parse_err(path, 1, "expected header u,v,label,split"));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let u: usize = field(path, &rec, 0, "u")?;
        let v: usize = field(path, &rec, 1, "v")?;
        let label: u8 = field(path, &rec, 2, "label")?;
        let split: String = field(path, &rec, 3, "split")?;
        if label > 1 {
            return Err(parse_err(path, line, format!("label must be 0 or 1, got {label}")));
        }
        if u == v {
            return Err(parse_err(path, line, format!("self pair ({u}, {v})")));
        }
        let split = split.parse().map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        let (u, v) = if u < v { (u, v) } else { (v, u) };
        out.push(LinkSample { u, v, label, split });
    }
    Ok(out)
}

/// File layout of a prepared dataset directory.
pub struct DatasetFiles {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub splits: PathBuf,
    pub meta: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            nodes: dir.join("nodes.csv"),
            edges: dir.join("edges.csv"),
            splits: dir.join("splits.csv"),
            meta: dir.join("meta.json"),
        }
    }
}

/// Writes graph, splits and metadata into `dir`; returns the metadata.
pub fn save_dataset(ds: &DatasetSplit, dir: &Path) -> Result<DatasetMeta> {
    let files = DatasetFiles::in_dir(dir);
    save_graph_csv(&ds.graph, &files.nodes, &files.edges)?;
    save_splits_csv(&ds.samples, &files.splits)?;
    let (mean, std) = ds.graph.edge_length_stats()?;
    let counts = ds.counts();
    let meta = DatasetMeta {
        seed: ds.seed,
        delta: ds.delta,
        mean_edge_length: mean,
        std_edge_length: std,
        d_spatial: ds.graph.dim(),
        num_nodes: ds.graph.num_nodes(),
        num_edges: ds.graph.num_edges(),
        num_positives: counts.positives(),
        num_negatives: counts.negatives(),
        counts,
    };
    write_text(&files.meta, &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    Ok(meta)
}

pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    let files = DatasetFiles::in_dir(dir);
    let graph = load_graph_csv(&files.nodes, &files.edges)?;
    let samples = load_splits_csv(&files.splits)?;
    let meta_text = fs::read_to_string(&files.meta).map_err(|e| Error::io(&files.meta, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)?;
    for s in &samples {
        graph.check_node(s.u)?;
        graph.check_node(s.v)?;
    }
    Ok(DatasetSplit {
        graph,
        samples,
        seed: meta.seed,
        delta: meta.delta,
    })
}
