//! The three-stage boosting run. Stages exchange data only through files
//! under the output root:
//!
//! ```text
//! out/stage1/  quality_records.tsv  fit.json  mqpm.safetensors  mqpm_loss.csv
//! out/stage2/  scores.csv  motion_maps/  candidates.csv  manifest.json  selection_stats.csv
//! out/stage3/  refine.safetensors  refine_loss.csv  maps/  metrics.csv
//! out/report.json
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::{map_path, Corpus};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::map::BinaryMask;
use crate::metrics::MetricsReport;
use crate::nn::{train_mqpm, Mqpm, RefineNet, TrainLog};
use crate::quality::{build_mqpm_trainset, records_to_tsv, AnnotatedFlow};
use crate::refine::{infer_corpus, train_refine};
use crate::selection::{
    build_manifest, candidates_csv, filter_window, score_corpus, select_candidates,
    window_table_csv, write_scores, ManifestProvenance, SelectionStats, TrainingManifest,
    WindowRow,
};

/// Output locations of a run.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn stage(&self, n: u8) -> PathBuf {
        self.root.join(format!("stage{n}"))
    }

    pub fn mqpm_checkpoint(&self) -> PathBuf {
        self.stage(1).join("mqpm.safetensors")
    }

    pub fn manifest(&self) -> PathBuf {
        self.stage(2).join("manifest.json")
    }

    pub fn motion_maps(&self) -> PathBuf {
        self.stage(2).join("motion_maps")
    }

    pub fn refine_checkpoint(&self) -> PathBuf {
        self.stage(3).join("refine.safetensors")
    }

    pub fn refined_maps(&self) -> PathBuf {
        self.stage(3).join("maps")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

/// Headline numbers of a metrics report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub frames: usize,
    pub max_f: f64,
    pub mean_f: f64,
    pub adp_f: f64,
    pub s_measure: f64,
    pub mae: f64,
}

impl From<&MetricsReport> for MetricSummary {
    fn from(r: &MetricsReport) -> Self {
        Self {
            frames: r.frame_count,
            max_f: r.max_f,
            mean_f: r.mean_f,
            adp_f: r.adp_f,
            s_measure: r.s_measure,
            mae: r.mae,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Summary {
    pub frames: usize,
    pub lam: f64,
    pub positives: usize,
    pub negatives: usize,
    pub degenerate: bool,
    pub fit_iterations: usize,
    pub fallback_used: bool,
    pub epochs: usize,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Summary {
    pub window: usize,
    pub stats: SelectionStats,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Summary {
    pub trained_on: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub maps_written: usize,
    pub maps: PathBuf,
    pub checkpoint: PathBuf,
    /// Refined maps against the test masks, when masks are configured.
    pub refined: Option<MetricSummary>,
    /// Target-method maps against the same masks.
    pub target: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub window: usize,
    pub stage1: Stage1Summary,
    pub stage2: Stage2Summary,
    pub stage3: Stage3Summary,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::map::ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Stage 1: score and label the training split, then fit the quality network.
pub fn run_stage1(config: &PipelineConfig) -> Result<Stage1Summary> {
    let layout = RunLayout::new(&config.out);
    let dir = layout.stage(1);
    let corpus = Corpus::scan(&config.train.frames)?;
    let gt_root = config.train.require_gt()?;
    let flows = config.train.flow_provider(&dir.join("flow_scratch"))?;
    let theta = config.theta.build(&dir.join("theta_scratch"));

    let mut annotated = Vec::new();
    for i in corpus.with_successor() {
        let key = corpus.entries[i].key.clone();
        let flow = flows.flow(&key, &corpus.load(i)?, &corpus.load(i + 1)?)?;
        let gt = BinaryMask::load(&map_path(gt_root, &key, "ground-truth mask")?)?;
        annotated.push(AnnotatedFlow { key, flow, gt });
    }
    let trainset = build_mqpm_trainset(&annotated, theta.as_ref(), config.max_magnitude)?;
    write_text(
        &dir.join("quality_records.tsv"),
        &records_to_tsv(&trainset.records),
    )?;
    write_text(
        &dir.join("fit.json"),
        &serde_json::to_string_pretty(&trainset.provenance)?,
    )?;

    let mqpm_config = config.mqpm_config();
    let (model, log) = train_mqpm(&trainset.samples, &mqpm_config)?;
    model.save(&layout.mqpm_checkpoint(), &mqpm_config)?;
    write_text(&dir.join("mqpm_loss.csv"), &log.to_csv())?;

    let p = &trainset.provenance;
    Ok(Stage1Summary {
        frames: trainset.samples.len(),
        lam: p.lam,
        positives: p.positives,
        negatives: p.negatives,
        degenerate: p.degenerate,
        fit_iterations: p.fit.iterations,
        fallback_used: p.fit.fallback_used,
        epochs: log.epochs.len(),
        final_loss: log.epochs.last().map(|e| e.total).unwrap_or(f64::NAN),
        checkpoint: layout.mqpm_checkpoint(),
    })
}

/// Short content hash identifying a checkpoint file.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    Ok(format!("{name}@{h:016x}"))
}

/// Stage 2: judge every test frame, filter by consistency and write the
/// pseudo-GT manifest.
pub fn run_stage2(config: &PipelineConfig) -> Result<Stage2Summary> {
    let layout = RunLayout::new(&config.out);
    let dir = layout.stage(2);
    let sota_root = config.test.require_sota()?;
    if !sota_root.is_dir() {
        return Err(Error::MissingDependency(format!(
            "target-method map directory {} does not exist",
            sota_root.display()
        )));
    }
    let corpus = Corpus::scan(&config.test.frames)?;
    let flows = config.test.flow_provider(&dir.join("flow_scratch"))?;
    let ckpt = layout.mqpm_checkpoint();
    let (model, _) = Mqpm::load(&ckpt)?;

    let scored = score_corpus(&corpus, flows.as_ref(), &model, config.max_magnitude)?;
    write_scores(&scored, &dir)?;
    let candidates = select_candidates(&scored, sota_root)?;
    let survivors = filter_window(candidates.clone(), config.window)?;
    let stats = SelectionStats::new(scored.len(), &candidates, &survivors);
    write_text(
        &dir.join("candidates.csv"),
        &candidates_csv(&scored, &candidates, &survivors),
    )?;
    write_text(
        &dir.join("selection_stats.csv"),
        &window_table_csv(&[WindowRow {
            window: config.window,
            stats: stats.clone(),
            metrics: None,
        }]),
    )?;
    let provenance = ManifestProvenance {
        target_method: config.target_method.clone(),
        mqpm_checkpoint: checkpoint_id(&ckpt)?,
        stats: stats.clone(),
    };
    build_manifest(
        &survivors,
        &corpus,
        sota_root,
        config.window,
        provenance,
        Some(&layout.manifest()),
    )?;
    Ok(Stage2Summary {
        window: config.window,
        stats,
        manifest: layout.manifest(),
    })
}

/// Stage 3: train the refinement network on the manifest and write final
/// maps for every test frame.
pub fn run_stage3(config: &PipelineConfig) -> Result<Stage3Summary> {
    let layout = RunLayout::new(&config.out);
    let dir = layout.stage(3);
    let (trained_on, log) = train_stage3(config)?;

    let corpus = Corpus::scan(&config.test.frames)?;
    let written = infer_refined_dir(&corpus, &layout.refine_checkpoint(), &layout.refined_maps())?;

    let (refined, target) = match &config.test.gt {
        Some(gt) => {
            let report = evaluate(&layout.refined_maps(), gt)?;
            write_text(&dir.join("metrics.csv"), &report.to_csv())?;
            let target = match &config.test.sota {
                Some(sota) if sota.is_dir() => Some(MetricSummary::from(&evaluate(sota, gt)?)),
                _ => None,
            };
            (Some(MetricSummary::from(&report)), target)
        }
        None => (None, None),
    };
    Ok(Stage3Summary {
        trained_on,
        epochs: log.epochs.len(),
        final_loss: log.epochs.last().map(|e| e.total).unwrap_or(f64::NAN),
        maps_written: written,
        maps: layout.refined_maps(),
        checkpoint: layout.refine_checkpoint(),
        refined,
        target,
    })
}

/// Training half of stage 3: fits the refinement network on the manifest
/// and writes its checkpoint and loss log. Returns the manifest size.
pub fn train_stage3(config: &PipelineConfig) -> Result<(usize, TrainLog)> {
    let layout = RunLayout::new(&config.out);
    let manifest = TrainingManifest::load(&layout.manifest())?;
    let refine_config = config.refine_config();
    let (model, log) = train_refine(&manifest, &refine_config)?;
    model.save(&layout.refine_checkpoint(), &refine_config)?;
    write_text(&layout.stage(3).join("refine_loss.csv"), &log.to_csv())?;
    Ok((manifest.entries.len(), log))
}

/// Loads a refinement checkpoint and writes maps for `corpus` under `out`.
pub fn infer_refined_dir(corpus: &Corpus, checkpoint: &Path, out: &Path) -> Result<usize> {
    let (model, _) = RefineNet::load(checkpoint)?;
    infer_corpus(corpus, &model, out)
}

/// Runs all three stages and writes `report.json`. A failing stage aborts
/// the run with its number attached; earlier outputs stay on disk.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    log::info!("stage 1: quality network");
    let stage1 = run_stage1(config).map_err(|e| e.at_stage(1))?;
    log::info!(
        "stage 1 done: lambda {:.4}, {} positive / {} negative",
        stage1.lam,
        stage1.positives,
        stage1.negatives
    );
    log::info!("stage 2: selection");
    let stage2 = run_stage2(config).map_err(|e| e.at_stage(2))?;
    log::info!(
        "stage 2 done: {} accepted, {} survivors",
        stage2.stats.accepted,
        stage2.stats.survivors
    );
    log::info!("stage 3: refinement");
    let stage3 = run_stage3(config).map_err(|e| e.at_stage(3))?;
    let report = RunReport {
        seed: config.seed,
        window: config.window,
        stage1,
        stage2,
        stage3,
    };
    write_text(
        &RunLayout::new(&config.out).report(),
        &serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}
