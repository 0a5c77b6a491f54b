//! On-disk corpus layout: `<root>/<sequence>/<index>.<ext>` trees for frames,
//! masks and maps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flow::FrameKey;
use crate::map::ColorImage;

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub key: FrameKey,
    pub path: PathBuf,
}

/// Frames of a corpus sorted by sequence, then index.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub entries: Vec<FrameEntry>,
}

impl Corpus {
    /// Scans `root/<sequence>/` for images whose stem is a frame index.
    pub fn scan(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingDependency(format!(
                "frame directory {} does not exist",
                root.display()
            )));
        }
        let mut entries = Vec::new();
        for seq in read_dir_sorted(root)? {
            if !seq.is_dir() {
                continue;
            }
            let name = file_name(&seq);
            for file in read_dir_sorted(&seq)? {
                let ext = file
                    .extension()
                    .map(|e| e.to_string_lossy().to_ascii_lowercase())
                    .unwrap_or_default();
                if !IMAGE_EXTS.contains(&ext.as_str()) {
                    continue;
                }
                let stem = file.file_stem().unwrap_or_default().to_string_lossy();
                let index = stem.parse::<usize>().map_err(|_| {
                    Error::Format(format!(
                        "frame file {} has no numeric index",
                        file.display()
                    ))
                })?;
                entries.push(FrameEntry {
                    key: FrameKey::new(name.clone(), index),
                    path: file,
                });
            }
        }
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        if entries.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no frames under {}",
                root.display()
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self, i: usize) -> Result<ColorImage> {
        ColorImage::load(&self.entries[i].path)
    }

    /// Index of the next frame of the same sequence, if any.
    pub fn successor(&self, i: usize) -> Option<usize> {
        let next = self.entries.get(i + 1)?;
        (next.key.sequence == self.entries[i].key.sequence).then_some(i + 1)
    }

    /// Frames that have a successor and therefore a forward flow.
    pub fn with_successor(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.successor(i).is_some())
            .collect()
    }

    pub fn sequences(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.entry(e.key.sequence.as_str()).or_default().push(i);
        }
        out
    }
}

/// `<root>/<sequence>/<index>.png`, failing with an integration error that
/// names the frame when the file is absent.
pub fn map_path(root: &Path, key: &FrameKey, what: &str) -> Result<PathBuf> {
    let path = root.join(key.rel_path("png"));
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Integration(format!(
            "no {what} for frame {key} (expected {})",
            path.display()
        )))
    }
}

pub(crate) fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

pub(crate) fn file_name(p: &Path) -> String {
    p.file_name()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::ColorImage;
    use ndarray::Array3;

    #[test]
    fn scans_sorted_and_links_successors() {
        let dir = tempfile::tempdir().unwrap();
        let img = ColorImage::new(Array3::zeros((4, 4, 3))).unwrap();
        for (seq, idx) in [("b", 1), ("a", 2), ("a", 0), ("b", 0)] {
            img.save(&dir.path().join(seq).join(format!("{idx:05}.png")))
                .unwrap();
        }
        let c = Corpus::scan(dir.path()).unwrap();
        let ids: Vec<String> = c.entries.iter().map(|e| e.key.id()).collect();
        assert_eq!(ids, ["a/00000", "a/00002", "b/00000", "b/00001"]);
        assert_eq!(c.successor(0), Some(1));
        assert_eq!(c.successor(1), None);
        assert_eq!(c.with_successor(), vec![0, 2]);
    }

    #[test]
    fn missing_root_is_reported() {
        let err = Corpus::scan(Path::new("/nonexistent/frames")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/frames"));
    }
}
