//! Comparison tables: window sweep, high- versus low-quality split and the
//! pseudo-GT source variants.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::eval::evaluate_filtered;
use crate::flow::{encode_color_wheel, FrameKey};
use crate::map::SaliencyMap;
use crate::metrics::MetricsReport;
use crate::nn::Mqpm;
use crate::pipeline::{MetricSummary, RunLayout};
use crate::refine::{infer_corpus, prepare_sample, train_refine_samples};
use crate::selection::{
    filter_window, score_corpus, select_candidates, window_table_csv, CandidateFrame,
    SelectionStats, WindowRow, WINDOW_SWEEP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Saliency of the flow rendering, used directly.
    MsBaseline,
    /// Refinement on flow saliency of randomly chosen frames.
    MsMinusMqpm,
    /// Refinement on flow saliency of the quality-selected frames.
    MsPlusMqpm,
    /// Refinement on target-method maps of the quality-selected frames.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::MsBaseline,
        Variant::MsMinusMqpm,
        Variant::MsPlusMqpm,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::MsBaseline => "MS Baseline",
            Variant::MsMinusMqpm => "MS-MQPM",
            Variant::MsPlusMqpm => "MS+MQPM",
            Variant::Full => "MS+MQPM+SOTA",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Variant::MsBaseline => "ms_baseline",
            Variant::MsMinusMqpm => "ms_random",
            Variant::MsPlusMqpm => "ms_mqpm",
            Variant::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOptions {
    pub variants: Vec<Variant>,
    pub windows: Vec<usize>,
    pub hq_lq: bool,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            windows: WINDOW_SWEEP.to_vec(),
            hq_lq: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub label: String,
    pub training_frames: Option<usize>,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub method: String,
    /// `HQ` for frames the quality network accepts, `LQ` otherwise.
    pub split: String,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AblationReport {
    pub table1: Vec<WindowRow>,
    pub table2: Vec<SplitRow>,
    pub table3: Vec<VariantRow>,
    pub notices: Vec<String>,
}

impl AblationReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantRow> {
        self.table3.iter().find(|r| r.variant == v)
    }

    pub fn split(&self, method: &str, split: &str) -> Option<&SplitRow> {
        self.table2
            .iter()
            .find(|r| r.method == method && r.split == split)
    }

    pub fn table2_csv(&self) -> String {
        let mut out = String::from("method,split,frames,max_f,s_measure,mae\n");
        for r in &self.table2 {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4}\n",
                r.method, r.split, m.frames, m.max_f, m.s_measure, m.mae
            ));
        }
        out
    }

    pub fn table3_csv(&self) -> String {
        let mut out = String::from("variant,training_frames,max_f,s_measure,mae\n");
        for r in &self.table3 {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{:.4}\n",
                r.label,
                r.training_frames.map(|n| n.to_string()).unwrap_or_default(),
                m.max_f,
                m.s_measure,
                m.mae
            ));
        }
        out
    }

    /// Plain-text rendering of all three tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.table1.is_empty() {
            out.push_str("Keep ratio sweep\n");
            out.push_str(&format!(
                "{:<6} {:>9} {:>7} {:>7} {:>7}\n",
                "T", "survivors", "maxF", "S-M", "MAE"
            ));
            for r in &self.table1 {
                let [f, s, e] = r.metrics.unwrap_or([f64::NAN; 3]);
                out.push_str(&format!(
                    "{:<6} {:>9} {:>7.4} {:>7.4} {:>7.4}\n",
                    format!("1/{}", r.window),
                    r.stats.survivors,
                    f,
                    s,
                    e
                ));
            }
            out.push('\n');
        }
        if !self.table2.is_empty() {
            out.push_str("Quality split\n");
            out.push_str(&format!(
                "{:<14} {:<5} {:>6} {:>7} {:>7} {:>7}\n",
                "method", "split", "frames", "maxF", "S-M", "MAE"
            ));
            for r in &self.table2 {
                let m = &r.metrics;
                out.push_str(&format!(
                    "{:<14} {:<5} {:>6} {:>7.4} {:>7.4} {:>7.4}\n",
                    r.method, r.split, m.frames, m.max_f, m.s_measure, m.mae
                ));
            }
            out.push('\n');
        }
        if !self.table3.is_empty() {
            out.push_str("Pseudo-GT source\n");
            out.push_str(&format!(
                "{:<14} {:>7} {:>7} {:>7}\n",
                "variant", "maxF", "S-M", "MAE"
            ));
            for r in &self.table3 {
                let m = &r.metrics;
                out.push_str(&format!(
                    "{:<14} {:>7.4} {:>7.4} {:>7.4}\n",
                    r.label, m.max_f, m.s_measure, m.mae
                ));
            }
        }
        for n in &self.notices {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

struct Workbench<'a> {
    config: &'a PipelineConfig,
    corpus: Corpus,
    gt: PathBuf,
    dir: PathBuf,
    /// Frames with a forward flow; every table is restricted to them.
    with_flow: HashSet<String>,
}

impl Workbench<'_> {
    fn evaluate(&self, maps: &Path) -> Result<MetricsReport> {
        evaluate_filtered(maps, &self.gt, |id| self.with_flow.contains(id))
    }

    /// Trains a refinement model on `(frame, pseudo-GT)` pairs and scores its
    /// maps over the test corpus.
    fn train_and_score(
        &self,
        name: &str,
        keys: &[FrameKey],
        pseudo: &dyn Fn(&FrameKey) -> Result<SaliencyMap>,
    ) -> Result<MetricsReport> {
        let index: HashMap<&FrameKey, usize> = self
            .corpus
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (&e.key, i))
            .collect();
        let refine = self.config.refine_config();
        let samples = keys
            .iter()
            .map(|k| {
                let i = *index
                    .get(k)
                    .ok_or_else(|| Error::Integration(format!("frame {k} is not in the corpus")))?;
                prepare_sample(&k.id(), &self.corpus.load(i)?, &pseudo(k)?, &refine)
            })
            .collect::<Result<Vec<_>>>()?;
        let (model, _) = train_refine_samples(&samples, &refine)?;
        let maps = self.dir.join(name).join("maps");
        infer_corpus(&self.corpus, &model, &maps)?;
        self.evaluate(&maps)
    }
}

fn summary(r: &MetricsReport) -> MetricSummary {
    MetricSummary::from(r)
}

fn keys(c: &[CandidateFrame]) -> Vec<FrameKey> {
    c.iter().map(|c| c.key.clone()).collect()
}

/// Builds the comparison tables under `<out>/ablation/`. Needs the stage-1
/// checkpoint of a finished run; the full-method row and its window entry
/// reuse the stage-3 maps when present.
pub fn ablation_report(
    config: &PipelineConfig,
    options: &AblationOptions,
) -> Result<AblationReport> {
    let layout = RunLayout::new(&config.out);
    let ckpt = layout.mqpm_checkpoint();
    if !ckpt.is_file() {
        return Err(Error::MissingDependency(format!(
            "quality network checkpoint {} not found; run stage 1 first",
            ckpt.display()
        )));
    }
    let gt = config.test.require_gt()?.to_path_buf();
    let sota = config.test.require_sota()?.to_path_buf();
    let dir = layout.root.join("ablation");
    let corpus = Corpus::scan(&config.test.frames)?;
    let flows = config.test.flow_provider(&dir.join("flow_scratch"))?;
    let theta = config.theta.build(&dir.join("theta_scratch"));
    let (model, _) = Mqpm::load(&ckpt)?;

    // Flow saliency maps of every frame with a successor.
    let ms_dir = dir.join(Variant::MsBaseline.slug()).join("maps");
    let mut with_flow = HashSet::new();
    let mut flow_keys = Vec::new();
    for i in corpus.with_successor() {
        let key = corpus.entries[i].key.clone();
        let flow = flows.flow(&key, &corpus.load(i)?, &corpus.load(i + 1)?)?;
        let map = theta.predict(&encode_color_wheel(&flow, config.max_magnitude)?)?;
        map.save(&ms_dir.join(key.rel_path("png")))?;
        with_flow.insert(key.id());
        flow_keys.push(key);
    }
    let ms_of = |k: &FrameKey| SaliencyMap::load(&ms_dir.join(k.rel_path("png")));
    let sota_of = |k: &FrameKey| SaliencyMap::load(&sota.join(k.rel_path("png")));

    let bench = Workbench {
        config,
        corpus,
        gt,
        dir: dir.clone(),
        with_flow,
    };
    let scored = score_corpus(&bench.corpus, flows.as_ref(), &model, config.max_magnitude)?;
    let candidates = select_candidates(&scored, &sota)?;
    let survivors = filter_window(candidates.clone(), config.window)?;

    let mut report = AblationReport::default();
    let full_maps = layout.refined_maps();
    let full = if full_maps.is_dir() {
        Some(bench.evaluate(&full_maps)?)
    } else {
        None
    };

    for &v in &options.variants {
        let (metrics, training) = match v {
            Variant::MsBaseline => (bench.evaluate(&ms_dir)?, None),
            Variant::MsMinusMqpm => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0a11_ce5e);
                let n = survivors.len().min(flow_keys.len());
                let mut picked: Vec<usize> = sample(&mut rng, flow_keys.len(), n).into_vec();
                picked.sort_unstable();
                let chosen: Vec<FrameKey> =
                    picked.into_iter().map(|i| flow_keys[i].clone()).collect();
                if chosen.is_empty() {
                    report
                        .notices
                        .push(format!("{} omitted: no frames to draw", v.label()));
                    continue;
                }
                (bench.train_and_score(v.slug(), &chosen, &ms_of)?, Some(n))
            }
            Variant::MsPlusMqpm => {
                if survivors.is_empty() {
                    report
                        .notices
                        .push(format!("{} omitted: no frame was selected", v.label()));
                    continue;
                }
                let r = bench.train_and_score(v.slug(), &keys(&survivors), &ms_of)?;
                (r, Some(survivors.len()))
            }
            Variant::Full => match &full {
                Some(r) => (r.clone(), Some(survivors.len())),
                None => {
                    report.notices.push(format!(
                        "{} omitted: no refined maps at {}",
                        v.label(),
                        full_maps.display()
                    ));
                    continue;
                }
            },
        };
        report.table3.push(VariantRow {
            variant: v,
            label: v.label().to_string(),
            training_frames: training,
            metrics: summary(&metrics),
        });
    }

    for &w in &options.windows {
        let kept = filter_window(candidates.clone(), w)?;
        let stats = SelectionStats::new(scored.len(), &candidates, &kept);
        let metrics = if kept.is_empty() {
            report
                .notices
                .push(format!("window {w}: no frame was selected"));
            None
        } else if let (true, Some(r)) = (w == config.window, &full) {
            Some(r.clone())
        } else {
            Some(bench.train_and_score(&format!("window_{w}"), &keys(&kept), &sota_of)?)
        };
        report.table1.push(WindowRow {
            window: w,
            stats,
            metrics: metrics.map(|m| [m.max_f, m.s_measure, m.mae]),
        });
    }

    if options.hq_lq {
        let accepted: HashSet<String> = scored
            .iter()
            .filter(|s| s.decision)
            .map(|s| s.key.id())
            .collect();
        let target = bench.evaluate(&sota)?;
        let mut methods = vec![(config.target_method.clone(), target)];
        if let Some(r) = &full {
            methods.push(("boosted".to_string(), r.clone()));
        }
        for (name, r) in methods {
            for (split, hq) in [("HQ", true), ("LQ", false)] {
                let part = r.subset(|f| accepted.contains(&f.frame_id) == hq);
                if part.frame_count == 0 {
                    report.notices.push(format!("{name} {split}: no frames"));
                    continue;
                }
                report.table2.push(SplitRow {
                    method: name.clone(),
                    split: split.to_string(),
                    metrics: summary(&part),
                });
            }
        }
    }

    let write = |name: &str, text: String| {
        let p = dir.join(name);
        crate::map::ensure_parent(&p)?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("table1.csv", window_table_csv(&report.table1))?;
    write("table2.csv", report.table2_csv())?;
    write("table3.csv", report.table3_csv())?;
    write("ablation.json", serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
