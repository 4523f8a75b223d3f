//! Flat key-value experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use vjpsketch::data::{load_idx, make_synthetic, Dataset, SyntheticSpec};
use vjpsketch::{Budget, SketchOperatorSpec};

/// Dataset value selecting generated gaussian blobs instead of IDX files.
pub const SYNTHETIC: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding `train-{images-idx3,labels-idx1}-ubyte[.gz]`, or `synthetic`.
    pub dataset: String,
    /// Held-out tail of the training file; default 10000 for the full file,
    /// a fifth of the samples otherwise.
    pub val_size: Option<usize>,
    pub synthetic_samples: usize,
    pub synthetic_dim: usize,
    pub synthetic_classes: usize,
    pub synthetic_seed: u64,
    pub synthetic_separation: f64,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Method labels such as `l1`, `indep_rcs`, `per_element`, `l2_plain`.
    pub methods: Vec<String>,
    /// Keep fractions `p ∈ (0, 1]`.
    pub budgets: Vec<f64>,
    /// `all`, `first`, `last`, or a comma-separated list of layer indices.
    pub layers: String,
    pub lr_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Global gradient-norm clip; `inf` disables clipping.
    pub clip_norm: f64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "data/mnist-10k".into(),
            val_size: None,
            synthetic_samples: 2000,
            synthetic_dim: 20,
            synthetic_classes: 2,
            synthetic_seed: 0,
            synthetic_separation: 8.0,
            hidden: vec![64, 64],
            epochs: 10,
            batch_size: 32,
            methods: vec!["l1".into()],
            budgets: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            layers: "all".into(),
            lr_grid: vec![10f64.powf(-0.5), 0.1, 10f64.powf(-1.5)],
            seeds: vec![0, 1, 2],
            clip_norm: 1.0,
            out: "results".into(),
        }
    }
}

/// Which layers carry the sketch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelection {
    All,
    First,
    Last,
    List(Vec<usize>),
}

impl LayerSelection {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        Ok(match s.trim() {
            "all" => LayerSelection::All,
            "first" => LayerSelection::First,
            "last" => LayerSelection::Last,
            list => LayerSelection::List(
                list.split(',')
                    .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad layer index `{t}`")))
                    .collect::<anyhow::Result<_>>()?,
            ),
        })
    }

    pub fn resolve(&self, n_layers: usize) -> anyhow::Result<Vec<usize>> {
        let layers = match self {
            LayerSelection::All => (0..n_layers).collect(),
            LayerSelection::First => vec![0],
            LayerSelection::Last => vec![n_layers - 1],
            LayerSelection::List(v) => v.clone(),
        };
        if let Some(&bad) = layers.iter().find(|&&l| l >= n_layers) {
            bail!("layer {bad} out of range for {n_layers} layers");
        }
        Ok(layers)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The full-scale protocol: whole training file, 50 epochs, 13-point grid.
    pub fn full_protocol(mut self) -> Self {
        self.dataset = "data/mnist".into();
        self.val_size = Some(10_000);
        self.epochs = 50;
        self.lr_grid = (0..=12).map(|i| 10f64.powf(-0.25 * i as f64)).collect();
        self
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            bail!("lr_grid must be non-empty with positive finite entries");
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            bail!("budgets must be non-empty and inside (0, 1]");
        }
        if self.seeds.is_empty() || self.methods.is_empty() {
            bail!("at least one seed and one method are required");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            bail!("epochs and batch_size must be positive");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            bail!("clip_norm must be positive");
        }
        self.method_specs()?;
        LayerSelection::parse(&self.layers)?.resolve(self.hidden.len() + 1)?;
        Ok(())
    }

    /// Parsed methods paired with their config labels.
    pub fn method_specs(&self) -> anyhow::Result<Vec<(String, SketchOperatorSpec)>> {
        self.methods
            .iter()
            .map(|m| {
                let spec: SketchOperatorSpec = m.parse().with_context(|| format!("method `{m}`"))?;
                Ok((m.clone(), spec))
            })
            .collect()
    }

    pub fn clip(&self) -> Option<f64> {
        self.clip_norm.is_finite().then_some(self.clip_norm)
    }

    /// Loads the dataset and splits off the validation tail.
    pub fn load_data(&self) -> anyhow::Result<(Dataset, Dataset)> {
        let ds = if self.dataset == SYNTHETIC {
            let mut spec = SyntheticSpec::new(self.synthetic_samples, self.synthetic_dim, self.synthetic_classes, self.synthetic_seed);
            spec.separation = self.synthetic_separation;
            make_synthetic(&spec)?
        } else {
            let dir = Path::new(&self.dataset);
            load_idx(idx_file(dir, "train-images-idx3-ubyte")?, idx_file(dir, "train-labels-idx1-ubyte")?)?
        };
        let n_val = self.val_size.unwrap_or(if ds.len() == 60_000 { 10_000 } else { ds.len() / 5 });
        Ok(ds.split_last(n_val)?)
    }

    pub fn with_budget(spec: SketchOperatorSpec, p: f64) -> SketchOperatorSpec {
        SketchOperatorSpec { budget: Budget::Fraction(p), ..spec }
    }
}

fn idx_file(dir: &Path, stem: &str) -> anyhow::Result<PathBuf> {
    [dir.join(stem), dir.join(format!("{stem}.gz"))]
        .into_iter()
        .find(|p| p.exists())
        .with_context(|| format!("no {stem}[.gz] in {}", dir.display()))
}
