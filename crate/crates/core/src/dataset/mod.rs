//! Link datasets: canonical CSV files, spatial negative sampling, splits and
//! synthetic flow networks.

mod io;
mod sampling;
mod synthetic;

pub use io::{
    load_dataset, load_graph_csv, load_splits_csv, save_dataset, save_graph_csv, save_splits_csv,
    DatasetFiles, DatasetMeta, SplitCounts,
};
pub use io::write_text;
pub use sampling::sample_negative_links;
pub use synthetic::{generate_synthetic_network, NetworkKind};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

/// A candidate link with its ground truth (1 = real edge, 0 = sampled) and split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkSample {
    pub u: usize,
    pub v: usize,
    pub label: u8,
    pub split: Split,
}

impl LinkSample {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// A graph together with its labelled, split link samples.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub graph: SpatialGraph,
    pub samples: Vec<LinkSample>,
    pub seed: u64,
    pub delta: f64,
}

impl DatasetSplit {
    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &LinkSample> + '_ {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn counts(&self) -> SplitCounts {
        SplitCounts::tally(&self.samples)
    }
}

/// Sizes of the train/val/test parts of a class of `n` links.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let train = n * 8 / 10;
    let val = n / 10;
    [train, val, n - train - val]
}

/// Pairs every graph edge (label 1) and every sampled negative (label 0) with
/// a shuffled 80/10/10 train/val/test assignment made independently per class.
pub fn split_links(
    g: &SpatialGraph,
    negatives: &[(usize, usize)],
    seed: u64,
    delta: f64,
) -> DatasetSplit {
    let mut rng = rng::stream(seed, "prepare.split");
    let mut samples = Vec::with_capacity(g.num_edges() + negatives.len());
    for (label, links) in [(1u8, g.edges()), (0u8, negatives)] {
        let mut order: Vec<(usize, usize)> = links.to_vec();
        order.shuffle(&mut rng);
        let [train, val, _] = split_sizes(order.len());
        for (rank, (u, v)) in order.into_iter().enumerate() {
            let split = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
            let (u, v) = if u < v { (u, v) } else { (v, u) };
            samples.push(LinkSample { u, v, label, split });
        }
    }
    DatasetSplit {
        graph: g.clone(),
        samples,
        seed,
        delta,
    }
}

/// Full preparation: threshold, negatives (one per positive), split.
pub fn prepare_dataset(g: &SpatialGraph, seed: u64, delta_override: Option<f64>) -> Result<DatasetSplit> {
    let delta = match delta_override {
        Some(d) => d,
        None => g.sampling_threshold()?,
    };
    let negatives = sample_negative_links(g, g.num_edges(), seed, delta)?;
    Ok(split_links(g, &negatives, seed, delta))
}
