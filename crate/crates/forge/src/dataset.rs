//! On-disk synthetic datasets: RTM1 files plus a `dataset.json` index.

use std::path::{Path, PathBuf};

use cadence_core::synth::{ClassLayout, GestureSpec, Split};
use cadence_core::RangeTimeMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::formats::{read_file, read_rtm};

pub const INDEX_FILE: &str = "dataset.json";
pub const SAMPLE_DIR: &str = "samples";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    /// Path relative to the dataset directory.
    pub file: String,
    pub label: usize,
    pub split: Split,
    pub spec: GestureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub seed: u64,
    pub num_classes: usize,
    pub per_class: usize,
    pub layout: ClassLayout,
    pub frame_rate_hz: f64,
    pub samples: Vec<SampleEntry>,
}

pub fn sample_file(i: usize) -> String {
    format!("{SAMPLE_DIR}/{i:05}.rtm")
}

/// A dataset loaded into memory.
pub struct Dataset {
    pub dir: PathBuf,
    pub index: DatasetIndex,
    pub samples: Vec<RangeTimeMap>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        let index: DatasetIndex = serde_json::from_slice(&read_file(&index_path)?)?;
        if index.samples.is_empty() {
            invalid!("{} lists no samples", index_path.display());
        }
        let samples = index
            .samples
            .par_iter()
            .map(|e| {
                let rtm = read_rtm(&dir.join(&e.file))?;
                if rtm.label != Some(e.label) {
                    invalid!("{}: label {:?} disagrees with index label {}", e.file, rtm.label, e.label);
                }
                if e.label >= index.num_classes {
                    invalid!("{}: label {} outside {} classes", e.file, e.label, index.num_classes);
                }
                Ok(rtm)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dir: dir.to_path_buf(), index, samples })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.index.samples[i].split == split).collect()
    }
}
