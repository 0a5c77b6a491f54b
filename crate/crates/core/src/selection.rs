//! Scoring a test corpus with the quality network, picking high-quality
//! frames, window filtering by consistency and the pseudo-GT manifest.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{map_path, Corpus};
use crate::error::{Error, Result};
use crate::flow::{encode_color_wheel, FlowProvider, FrameKey, MaxMagnitude};
use crate::map::{ColorImage, SaliencyMap};
use crate::metrics::consistency_degree;
use crate::nn::{quality_decision, Mqpm};

/// Default keep-one-of-W window.
pub const DEFAULT_WINDOW: usize = 5;

/// Windows evaluated by the ablation sweep.
pub const WINDOW_SWEEP: [usize; 6] = [1, 2, 3, 4, 5, 10];

/// Quality-network output for one test frame.
#[derive(Debug, Clone)]
pub struct ScoredFrame {
    pub key: FrameKey,
    pub motion_saliency: SaliencyMap,
    pub quality_confidence: f64,
    pub decision: bool,
}

/// Runs the quality network over every frame that has a successor.
pub fn score_corpus(
    corpus: &Corpus,
    flows: &dyn FlowProvider,
    model: &Mqpm,
    max_magnitude: MaxMagnitude,
) -> Result<Vec<ScoredFrame>> {
    let indices = corpus.with_successor();
    let mut out = Vec::with_capacity(indices.len());
    let mut cached: Option<(usize, ColorImage)> = None;
    for chunk in indices.chunks(16) {
        let mut renders = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let frame_t = match cached.take() {
                Some((j, img)) if j == i => img,
                _ => corpus.load(i)?,
            };
            let next = i + 1;
            let frame_t1 = corpus.load(next)?;
            let key = &corpus.entries[i].key;
            let flow = flows.flow(key, &frame_t, &frame_t1)?;
            renders.push(encode_color_wheel(&flow, max_magnitude)?);
            cached = Some((next, frame_t1));
        }
        let outputs = model.predict(&renders.iter().collect::<Vec<_>>())?;
        for (&i, o) in chunk.iter().zip(outputs) {
            out.push(ScoredFrame {
                key: corpus.entries[i].key.clone(),
                decision: quality_decision(o.quality_confidence),
                quality_confidence: o.quality_confidence,
                motion_saliency: o.motion_saliency,
            });
        }
    }
    Ok(out)
}

/// Writes `scores.csv` and the motion maps under `dir/motion_maps/`.
pub fn write_scores(scored: &[ScoredFrame], dir: &Path) -> Result<()> {
    let mut csv = String::from("frame_id,confidence,decision\n");
    for s in scored {
        csv.push_str(&format!(
            "{},{:.6},{}\n",
            s.key.id(),
            s.quality_confidence,
            u8::from(s.decision)
        ));
        s.motion_saliency
            .save(&dir.join("motion_maps").join(s.key.rel_path("png")))?;
    }
    crate::map::ensure_parent(&dir.join("scores.csv"))?;
    let path = dir.join("scores.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

/// A frame judged to contain high-quality motion, paired with its target
/// method map.
#[derive(Debug, Clone)]
pub struct CandidateFrame {
    pub key: FrameKey,
    pub motion_saliency: SaliencyMap,
    pub sota_map: SaliencyMap,
    pub consistency: f64,
    pub quality_decision: bool,
    pub quality_confidence: f64,
}

/// Keeps positively judged frames and attaches their consistency degree.
pub fn select_candidates(scored: &[ScoredFrame], sota_root: &Path) -> Result<Vec<CandidateFrame>> {
    if !sota_root.is_dir() {
        return Err(Error::MissingDependency(format!(
            "target-method map directory {} does not exist",
            sota_root.display()
        )));
    }
    let mut out = Vec::new();
    for s in scored.iter().filter(|s| s.decision) {
        let sota_map = SaliencyMap::load(&map_path(sota_root, &s.key, "target-method map")?)?;
        let motion = if sota_map.dims() == s.motion_saliency.dims() {
            s.motion_saliency.clone()
        } else {
            s.motion_saliency
                .resize(sota_map.height(), sota_map.width())?
        };
        let consistency = consistency_degree(&motion, &sota_map)?;
        out.push(CandidateFrame {
            key: s.key.clone(),
            motion_saliency: motion,
            sota_map,
            consistency,
            quality_decision: true,
            quality_confidence: s.quality_confidence,
        });
    }
    if out.is_empty() {
        log::warn!(
            "the quality network accepted none of {} frames",
            scored.len()
        );
    }
    Ok(out)
}

/// Indices of the survivors of keep-one-of-`w` filtering. Items are grouped
/// into runs of equal `sequences[i]`; each run is cut into consecutive blocks
/// of `w` and each block keeps its highest score, the earliest on ties.
pub fn window_survivors(sequences: &[&str], scores: &[f64], w: usize) -> Result<Vec<usize>> {
    if w < 1 {
        return Err(Error::Config(format!("window must be at least 1, got {w}")));
    }
    if sequences.len() != scores.len() {
        return Err(Error::InvalidInput(
            "sequence and score lists differ in length".into(),
        ));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < scores.len() {
        let mut end = start;
        while end < scores.len() && sequences[end] == sequences[start] {
            end += 1;
        }
        for block in (start..end).collect::<Vec<_>>().chunks(w) {
            let mut best = block[0];
            for &i in &block[1..] {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            out.push(best);
        }
        start = end;
    }
    Ok(out)
}

/// Window filtering over candidates in temporal order.
pub fn filter_window(candidates: Vec<CandidateFrame>, w: usize) -> Result<Vec<CandidateFrame>> {
    let seqs: Vec<&str> = candidates.iter().map(|c| c.key.sequence.as_str()).collect();
    let scores: Vec<f64> = candidates.iter().map(|c| c.consistency).collect();
    let keep = window_survivors(&seqs, &scores, w)?;
    let mut slots: Vec<Option<CandidateFrame>> = candidates.into_iter().map(Some).collect();
    Ok(keep.into_iter().filter_map(|i| slots[i].take()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub scored: usize,
    pub accepted: usize,
    /// Fraction of scored frames accepted before filtering.
    pub acceptance_fraction: f64,
    pub survivors: usize,
    pub mean_candidate_consistency: f64,
    pub mean_survivor_consistency: f64,
}

impl SelectionStats {
    pub fn new(scored: usize, candidates: &[CandidateFrame], survivors: &[CandidateFrame]) -> Self {
        let mean = |c: &[CandidateFrame]| {
            if c.is_empty() {
                0.0
            } else {
                c.iter().map(|c| c.consistency).sum::<f64>() / c.len() as f64
            }
        };
        Self {
            scored,
            accepted: candidates.len(),
            acceptance_fraction: if scored == 0 {
                0.0
            } else {
                candidates.len() as f64 / scored as f64
            },
            survivors: survivors.len(),
            mean_candidate_consistency: mean(candidates),
            mean_survivor_consistency: mean(survivors),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub frame: PathBuf,
    pub pseudo_gt: PathBuf,
    pub consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestProvenance {
    pub target_method: String,
    pub mqpm_checkpoint: String,
    pub stats: SelectionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub entries: Vec<ManifestEntry>,
    pub window: usize,
    pub provenance: ManifestProvenance,
}

impl TrainingManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::map::ensure_parent(path)?;
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Pairs each survivor's frame with its target-method map and writes the
/// manifest to `out` when given.
pub fn build_manifest(
    filtered: &[CandidateFrame],
    corpus: &Corpus,
    sota_root: &Path,
    window: usize,
    provenance: ManifestProvenance,
    out: Option<&Path>,
) -> Result<TrainingManifest> {
    if filtered.is_empty() {
        return Err(Error::Degenerate(
            "no frame survived selection; the manifest would be empty".into(),
        ));
    }
    let frames: HashMap<&FrameKey, &Path> = corpus
        .entries
        .iter()
        .map(|e| (&e.key, e.path.as_path()))
        .collect();
    let entries = filtered
        .iter()
        .map(|c| {
            let frame = frames.get(&c.key).ok_or_else(|| {
                Error::Integration(format!("frame {} is not part of the corpus", c.key))
            })?;
            Ok(ManifestEntry {
                frame_id: c.key.id(),
                frame: frame.to_path_buf(),
                pseudo_gt: map_path(sota_root, &c.key, "target-method map")?,
                consistency: c.consistency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = TrainingManifest {
        entries,
        window,
        provenance,
    };
    if let Some(path) = out {
        manifest.save(path)?;
    }
    Ok(manifest)
}

/// Per-frame table of the selection: decision, consistency and survival.
pub fn candidates_csv(
    scored: &[ScoredFrame],
    candidates: &[CandidateFrame],
    survivors: &[CandidateFrame],
) -> String {
    let consistency: HashMap<&FrameKey, f64> =
        candidates.iter().map(|c| (&c.key, c.consistency)).collect();
    let kept: std::collections::HashSet<&FrameKey> = survivors.iter().map(|c| &c.key).collect();
    let mut out = String::from("frame_id,confidence,decision,consistency,survivor\n");
    for s in scored {
        out.push_str(&format!(
            "{},{:.6},{},{},{}\n",
            s.key.id(),
            s.quality_confidence,
            u8::from(s.decision),
            consistency
                .get(&s.key)
                .map(|c| format!("{c:.6}"))
                .unwrap_or_default(),
            u8::from(kept.contains(&s.key))
        ));
    }
    out
}

/// One row of the window table; metrics are blank until evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window: usize,
    pub stats: SelectionStats,
    pub metrics: Option<[f64; 3]>,
}

pub fn window_table_csv(rows: &[WindowRow]) -> String {
    let mut out = String::from(
        "T,window,accepted,survivors,acceptance_fraction,mean_consistency,max_f,s_measure,mae\n",
    );
    for r in rows {
        let m = r
            .metrics
            .map(|[f, s, e]| format!("{f:.4},{s:.4},{e:.4}"))
            .unwrap_or_else(|| ",,".into());
        out.push_str(&format!(
            "1/{},{},{},{},{:.4},{:.4},{}\n",
            r.window,
            r.window,
            r.stats.accepted,
            r.stats.survivors,
            r.stats.acceptance_fraction,
            r.stats.mean_survivor_consistency,
            m
        ));
    }
    out
}
