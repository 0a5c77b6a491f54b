//! Declarative pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{CommandFlow, FlowProvider, MaxMagnitude, PrecomputedFlow};
use crate::nn::{MqpmConfig, NetworkConfig, RefineConfig, TrainConfig};
use crate::quality::{CommandSaliency, ContrastSaliency, SaliencyModel};
use crate::selection::DEFAULT_WINDOW;

/// Directories of one corpus split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub frames: PathBuf,
    /// Precomputed `.flo` tree.
    #[serde(default)]
    pub flows: Option<PathBuf>,
    /// External estimator template with `{frame_t}`, `{frame_t1}`, `{out}`.
    #[serde(default)]
    pub flow_command: Option<String>,
    #[serde(default)]
    pub gt: Option<PathBuf>,
    /// Target-method maps.
    #[serde(default)]
    pub sota: Option<PathBuf>,
}

impl SplitConfig {
    /// Standard layout under `root`: `frames/`, `flows/`, `gt/`, `sota/`.
    pub fn under(root: &Path) -> Self {
        Self {
            frames: root.join("frames"),
            flows: Some(root.join("flows")),
            flow_command: None,
            gt: Some(root.join("gt")),
            sota: Some(root.join("sota")),
        }
    }

    pub fn flow_provider(&self, scratch: &Path) -> Result<Box<dyn FlowProvider>> {
        match (&self.flows, &self.flow_command) {
            (Some(dir), None) => {
                if !dir.is_dir() {
                    return Err(Error::MissingDependency(format!(
                        "flow directory {} does not exist",
                        dir.display()
                    )));
                }
                Ok(Box::new(PrecomputedFlow::new(dir)))
            }
            (None, Some(cmd)) => Ok(Box::new(CommandFlow::new(cmd, scratch))),
            _ => Err(Error::Config(
                "set exactly one of `flows` and `flow_command`".into(),
            )),
        }
    }

    pub fn require_gt(&self) -> Result<&Path> {
        self.gt
            .as_deref()
            .ok_or_else(|| Error::Config(format!("split {} has no `gt`", self.frames.display())))
    }

    pub fn require_sota(&self) -> Result<&Path> {
        self.sota
            .as_deref()
            .ok_or_else(|| Error::Config(format!("split {} has no `sota`", self.frames.display())))
    }

    fn resolve(&mut self, base: &Path) {
        resolve(&mut self.frames, base);
        for p in [&mut self.flows, &mut self.gt, &mut self.sota]
            .into_iter()
            .flatten()
        {
            resolve(p, base);
        }
    }
}

/// The image saliency model applied to flow renderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ThetaSpec {
    Contrast { cell: usize, border: usize },
    Command { template: String },
}

impl Default for ThetaSpec {
    fn default() -> Self {
        let c = ContrastSaliency::default();
        ThetaSpec::Contrast {
            cell: c.cell,
            border: c.border,
        }
    }
}

impl ThetaSpec {
    pub fn build(&self, scratch: &Path) -> Box<dyn SaliencyModel> {
        match self {
            ThetaSpec::Contrast { cell, border } => Box::new(ContrastSaliency {
                cell: *cell,
                border: *border,
            }),
            ThetaSpec::Command { template } => Box::new(CommandSaliency::new(template, scratch)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Keep one frame out of every `window` high-quality candidates.
    pub window: usize,
    pub out: PathBuf,
    /// Name recorded in the manifest provenance.
    pub target_method: String,
    pub max_magnitude: MaxMagnitude,
    /// Annotated split used to train the quality network.
    pub train: SplitConfig,
    /// Split whose target-method maps are boosted.
    pub test: SplitConfig,
    pub theta: ThetaSpec,
    pub mqpm: MqpmConfig,
    pub refine: RefineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: DEFAULT_WINDOW,
            out: PathBuf::from("out"),
            target_method: "target".into(),
            max_magnitude: MaxMagnitude::Auto,
            train: SplitConfig::default(),
            test: SplitConfig::default(),
            theta: ThetaSpec::default(),
            mqpm: MqpmConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Config(format!(
                "window must be at least 1, got {}",
                self.window
            )));
        }
        self.mqpm.validate()?;
        self.refine.validate()
    }

    fn resolve(&mut self, base: &Path) {
        resolve(&mut self.out, base);
        self.train.resolve(base);
        self.test.resolve(base);
        if let Some(p) = &mut self.refine.init_from_mqpm {
            resolve(p, base);
        }
        for p in [
            &mut self.mqpm.network.encoder_weights,
            &mut self.refine.network.encoder_weights,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p, base);
        }
    }

    /// Quality-network settings with the run seed applied.
    pub fn mqpm_config(&self) -> MqpmConfig {
        let mut c = self.mqpm.clone();
        c.train.seed = self.seed;
        c
    }

    /// Refinement settings with the run seed applied.
    pub fn refine_config(&self) -> RefineConfig {
        let mut c = self.refine.clone();
        c.train.seed = self.seed;
        c
    }

    /// Small CPU-friendly configuration over a generated corpus at `root`
    /// (with `train/` and `test/` splits), for 64×64 frames.
    pub fn synthetic(root: &Path, out: &Path) -> Self {
        let network = NetworkConfig {
            input_size: [64, 64],
            base_channels: 8,
            decoder_channels: vec![32, 16, 8],
            ..NetworkConfig::default()
        };
        Self {
            out: out.to_path_buf(),
            target_method: "simulated".into(),
            train: SplitConfig::under(&root.join("train")),
            test: SplitConfig::under(&root.join("test")),
            mqpm: MqpmConfig {
                network: network.clone(),
                train: TrainConfig {
                    epochs: 12,
                    batch_size: 8,
                    ..TrainConfig::default()
                },
            },
            refine: RefineConfig {
                network,
                train: TrainConfig {
                    epochs: 40,
                    batch_size: 4,
                    ..TrainConfig::default()
                },
                ..RefineConfig::default()
            },
            ..Self::default()
        }
    }
}

fn resolve(p: &mut PathBuf, base: &Path) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}
