//! On-disk formats: dataset, checkpoint and visualisation JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hipan_core::hierarchy::{branching_stats, load_tree};
use hipan_core::model::{HipanModel, ModelConfig};
use hipan_core::padic::format_digits;
use hipan_core::vapo::{Optimizer, TrainPlan, TrainerState};
use hipan_core::{CodecParams, EncodedDataset, TreeSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, CliError, CliResult};

pub const DATASET_FORMAT: &str = "hipan-dataset";
pub const CHECKPOINT_FORMAT: &str = "hipan-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub leaves: usize,
    pub nodes: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "B_max")]
    pub b_max: usize,
    pub p: u32,
    /// depth -> child count -> internal nodes.
    pub branching: BTreeMap<usize, BTreeMap<usize, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub leaf: String,
    pub code: String,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format: String,
    pub version: u32,
    pub codec: CodecParams,
    pub summary: DatasetSummary,
    /// `(name, parent)` in node id order.
    pub nodes: Vec<(String, Option<String>)>,
    pub records: Vec<RecordEntry>,
}

impl DatasetFile {
    pub fn new(tree: &TreeSpec, data: &EncodedDataset) -> Self {
        let nodes = (0..tree.len())
            .map(|id| {
                (
                    tree.name(id).to_string(),
                    tree.parent(id).map(|p| tree.name(p).to_string()),
                )
            })
            .collect();
        let records = data
            .records
            .iter()
            .map(|r| RecordEntry {
                leaf: tree.name(r.leaf).to_string(),
                code: r.code.to_string(),
                depth: r.depth,
            })
            .collect();
        Self {
            format: DATASET_FORMAT.into(),
            version: FORMAT_VERSION,
            codec: data.codec,
            summary: DatasetSummary {
                leaves: data.len(),
                nodes: tree.len(),
                k: data.codec.k,
                b_max: tree.max_branching(),
                p: data.codec.p,
                branching: branching_stats(tree),
            },
            nodes,
            records,
        }
    }

    /// Rebuilds the tree and re-encodes it, checking the stored codes.
    pub fn restore(&self) -> CliResult<(TreeSpec, EncodedDataset)> {
        if self.format != DATASET_FORMAT || self.version != FORMAT_VERSION {
            return Err(CliError::Data(format!(
                "unsupported dataset format {:?} v{}",
                self.format, self.version
            )));
        }
        let mut text = String::new();
        for (name, parent) in &self.nodes {
            text.push_str(name);
            text.push('\t');
            text.push_str(
                parent
                    .as_deref()
                    .unwrap_or(hipan_core::hierarchy::ROOT_PARENT),
            );
            text.push('\n');
        }
        let tree = load_tree(&text)?;
        let codec = CodecParams::new(self.codec.p, self.codec.k)?;
        let data = EncodedDataset::with_codec(&tree, codec)?;
        let stored: Vec<(&str, &str)> = self
            .records
            .iter()
            .map(|r| (r.leaf.as_str(), r.code.as_str()))
            .collect();
        let fresh: Vec<(String, String)> = data
            .records
            .iter()
            .map(|r| (tree.name(r.leaf).to_string(), r.code.to_string()))
            .collect();
        let same = stored.len() == fresh.len()
            && stored
                .iter()
                .zip(&fresh)
                .all(|(a, b)| a.0 == b.0 && a.1 == b.1);
        if !same {
            return Err(CliError::Data(
                "dataset records do not match the encoding of its tree".into(),
            ));
        }
        Ok((tree, data))
    }
}

pub fn load_dataset(path: &Path) -> CliResult<(TreeSpec, EncodedDataset)> {
    read_json::<DatasetFile>(path)?
        .restore()
        .map_err(|e| match e {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    /// Seconds since the Unix epoch; the only non-deterministic field.
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Vec<f64>,
}

/// Shuffle streams are derived from the seed and the epoch index, so this is
/// the whole RNG state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub init_seed: u64,
    pub next_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: ModelState,
    pub optimizer: Optimizer,
    pub plan: TrainPlan,
    pub trainer: TrainerState,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn model(&self) -> CliResult<HipanModel> {
        Ok(HipanModel::from_params(
            self.model.config,
            self.model.params.clone(),
        )?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let ck: Self = read_json(path)?;
        if ck.header.format != CHECKPOINT_FORMAT || ck.header.version != FORMAT_VERSION {
            return Err(CliError::Data(format!(
                "{}: unsupported checkpoint format {:?} v{}",
                path.display(),
                ck.header.format,
                ck.header.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }
}

/// Nested tree for plotting; leaves carry their code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizNode {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub code: Option<String>,
    pub children: Vec<VizNode>,
}

pub fn export_tree_for_viz(tree: &TreeSpec, data: &EncodedDataset) -> VizNode {
    let codes: BTreeMap<usize, String> = data
        .records
        .iter()
        .map(|r| (r.leaf, format_digits(r.code.digits())))
        .collect();
    fn build(tree: &TreeSpec, id: usize, codes: &BTreeMap<usize, String>) -> VizNode {
        VizNode {
            name: tree.name(id).to_string(),
            code: codes.get(&id).cloned(),
            children: tree
                .children(id)
                .iter()
                .map(|&c| build(tree, c, codes))
                .collect(),
        }
    }
    build(tree, tree.root(), &codes)
}

/// Flattens a viz document back into `child<TAB>parent` lines.
pub fn viz_to_edge_list(root: &VizNode) -> String {
    fn walk(node: &VizNode, parent: Option<&str>, out: &mut String) {
        out.push_str(&node.name);
        out.push('\t');
        out.push_str(parent.unwrap_or(hipan_core::hierarchy::ROOT_PARENT));
        out.push('\n');
        for c in &node.children {
            walk(c, Some(&node.name), out);
        }
    }
    let mut out = String::new();
    walk(root, None, &mut out);
    out
}
