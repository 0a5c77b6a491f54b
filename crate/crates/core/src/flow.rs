//! Optical-flow fields: the Middlebury `.flo` container, the 55-bin color-wheel
//! rendering consumed by the quality network, and flow providers.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{same_dims, ColorImage};

/// `"PIEH"`, the float 202021.25 in little-endian byte order.
pub const FLO_TAG: [u8; 4] = *b"PIEH";
/// Vectors with a component magnitude above this are unknown.
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;

/// Per-pixel displacement in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f32>,
    pub v: Array2<f32>,
    pub valid: Array2<bool>,
}

impl FlowField {
    pub fn new(u: Array2<f32>, v: Array2<f32>) -> Result<Self> {
        same_dims(u.dim(), v.dim())?;
        let (h, w) = u.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput(
                "flow field must be at least 1x1".into(),
            ));
        }
        let valid = ndarray::Zip::from(&u)
            .and(&v)
            .map_collect(|&a, &b| is_known(a) && is_known(b));
        Ok(Self { u, v, valid })
    }

    pub fn uniform(height: usize, width: usize, u: f32, v: f32) -> Result<Self> {
        Self::new(
            Array2::from_elem((height, width), u),
            Array2::from_elem((height, width), v),
        )
    }

    pub fn height(&self) -> usize {
        self.u.nrows()
    }

    pub fn width(&self) -> usize {
        self.u.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn magnitude(&self, y: usize, x: usize) -> f32 {
        self.u[[y, x]].hypot(self.v[[y, x]])
    }

    /// Largest magnitude over valid vectors; `None` when nothing is valid.
    pub fn max_valid_magnitude(&self) -> Option<f32> {
        self.valid
            .indexed_iter()
            .filter(|(_, ok)| **ok)
            .map(|((y, x), _)| self.magnitude(y, x))
            .fold(None, |acc, m| Some(acc.map_or(m, |a: f32| a.max(m))))
    }
}

fn is_known(c: f32) -> bool {
    c.is_finite() && c.abs() <= UNKNOWN_FLOW_THRESHOLD
}

/// Parses a `.flo` container: tag, LE u32 width, LE u32 height, then
/// row-major interleaved LE f32 `(u, v)` pairs.
pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::Format("flo header truncated".into()));
    }
    if bytes[..4] != FLO_TAG {
        return Err(Error::Format(format!(
            "bad flo tag {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!(
            "flo has empty size {width}x{height}"
        )));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("flo size overflows".into()))?;
    let payload = &bytes[12..];
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "flo payload truncated: {} of {expected} bytes",
            payload.len()
        )));
    }
    let mut u = Array2::zeros((height, width));
    let mut v = Array2::zeros((height, width));
    for (i, pair) in payload[..expected].chunks_exact(8).enumerate() {
        let (y, x) = (i / width, i % width);
        u[[y, x]] = f32::from_le_bytes(pair[..4].try_into().unwrap());
        v[[y, x]] = f32::from_le_bytes(pair[4..].try_into().unwrap());
    }
    FlowField::new(u, v)
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (h, w) = flow.dims();
    let mut out = Vec::with_capacity(12 + h * w * 8);
    out.extend_from_slice(&FLO_TAG);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for (a, b) in flow.u.iter().zip(flow.v.iter()) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    crate::map::ensure_parent(path)?;
    std::fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

// Segment lengths of the Middlebury wheel: red-yellow, yellow-green,
// green-cyan, cyan-blue, blue-magenta, magenta-red.
const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
pub const WHEEL_BINS: usize = RY + YG + GC + CB + BM + MR;

/// The 55 wheel colors in 0..=255 channel units.
pub fn color_wheel() -> [[f32; 3]; WHEEL_BINS] {
    let mut wheel = [[0.0f32; 3]; WHEEL_BINS];
    let ramp = |i: usize, n: usize| (255 * i / n) as f32;
    let mut k = 0;
    for i in 0..RY {
        wheel[k] = [255.0, ramp(i, RY), 0.0];
        k += 1;
    }
    for i in 0..YG {
        wheel[k] = [255.0 - ramp(i, YG), 255.0, 0.0];
        k += 1;
    }
    for i in 0..GC {
        wheel[k] = [0.0, 255.0, ramp(i, GC)];
        k += 1;
    }
    for i in 0..CB {
        wheel[k] = [0.0, 255.0 - ramp(i, CB), 255.0];
        k += 1;
    }
    for i in 0..BM {
        wheel[k] = [ramp(i, BM), 0.0, 255.0];
        k += 1;
    }
    for i in 0..MR {
        wheel[k] = [255.0, 0.0, 255.0 - ramp(i, MR)];
        k += 1;
    }
    wheel
}

/// Normalization applied before color encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum MaxMagnitude {
    /// Per-frame maximum valid magnitude.
    #[default]
    Auto,
    Fixed(f32),
}

/// Renders flow with the Middlebury color wheel: hue follows
/// `atan2(−v, −u)`, saturation grows linearly with `|flow| / max_magnitude`
/// (clamped at 1), zero flow is white and unknown vectors are black.
pub fn encode_color_wheel(flow: &FlowField, max_magnitude: MaxMagnitude) -> Result<ColorImage> {
    let auto = flow
        .max_valid_magnitude()
        .ok_or_else(|| Error::Degenerate("flow field has no valid vectors".into()))?;
    let scale = match max_magnitude {
        MaxMagnitude::Auto => auto,
        MaxMagnitude::Fixed(m) if m > 0.0 && m.is_finite() => m,
        MaxMagnitude::Fixed(m) => {
            return Err(Error::InvalidInput(format!(
                "max magnitude {m} must be positive"
            )))
        }
    };
    let wheel = color_wheel();
    let (h, w) = flow.dims();
    let mut pixels = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            if !flow.valid[[y, x]] {
                continue;
            }
            let (u, v) = if scale > 0.0 {
                (flow.u[[y, x]] / scale, flow.v[[y, x]] / scale)
            } else {
                (0.0, 0.0)
            };
            let rgb = wheel_color(&wheel, u, v);
            for c in 0..3 {
                pixels[[y, x, c]] = rgb[c];
            }
        }
    }
    ColorImage::new(pixels)
}

/// Color of a single normalized vector.
fn wheel_color(wheel: &[[f32; 3]; WHEEL_BINS], u: f32, v: f32) -> [f32; 3] {
    let rad = u.hypot(v).min(1.0);
    let a = (-v).atan2(-u) / std::f32::consts::PI;
    let fk = (a + 1.0) / 2.0 * (WHEEL_BINS - 1) as f32;
    let k0 = (fk.floor() as usize).min(WHEEL_BINS - 1);
    let k1 = (k0 + 1) % WHEEL_BINS;
    let f = fk - k0 as f32;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let col0 = wheel[k0][c] / 255.0;
        let col1 = wheel[k1][c] / 255.0;
        let col = (1.0 - f) * col0 + f * col1;
        out[c] = (1.0 - rad * (1.0 - col)).clamp(0.0, 1.0);
    }
    out
}

/// Identifies one frame inside a corpus: `<sequence>/<index>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameKey {
    pub sequence: String,
    pub index: usize,
}

impl FrameKey {
    pub fn new(sequence: impl Into<String>, index: usize) -> Self {
        Self {
            sequence: sequence.into(),
            index,
        }
    }

    pub fn id(&self) -> String {
        format!("{}/{:05}", self.sequence, self.index)
    }

    /// Relative path of this frame's artifact with the given extension.
    pub fn rel_path(&self, ext: &str) -> PathBuf {
        PathBuf::from(&self.sequence).join(format!("{:05}.{ext}", self.index))
    }
}

impl std::fmt::Display for FrameKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.id())
    }
}

/// Source of optical flow between frame `key` and its successor.
pub trait FlowProvider: Send + Sync {
    fn flow(
        &self,
        key: &FrameKey,
        frame_t: &ColorImage,
        frame_t1: &ColorImage,
    ) -> Result<FlowField>;
}

/// Reads `<root>/<sequence>/<index>.flo` written by an external estimator.
#[derive(Debug, Clone)]
pub struct PrecomputedFlow {
    pub root: PathBuf,
}

impl PrecomputedFlow {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_for(&self, key: &FrameKey) -> PathBuf {
        self.root.join(key.rel_path("flo"))
    }
}

impl FlowProvider for PrecomputedFlow {
    fn flow(
        &self,
        key: &FrameKey,
        frame_t: &ColorImage,
        _frame_t1: &ColorImage,
    ) -> Result<FlowField> {
        let path = self.path_for(key);
        if !path.is_file() {
            return Err(Error::MissingDependency(format!(
                "no precomputed flow for frame {key} at {}",
                path.display()
            )));
        }
        let flow = read_flo(&path)?;
        same_dims(frame_t.dims(), flow.dims()).map_err(|_| {
            Error::Integration(format!(
                "flow for frame {key} is {:?}, frame is {:?}",
                flow.dims(),
                frame_t.dims()
            ))
        })?;
        Ok(flow)
    }
}

/// Runs an external estimator. The template's `{frame_t}`, `{frame_t1}` and
/// `{out}` placeholders are replaced by file paths; the command must write a
/// `.flo` file to `{out}`. Invocations are serialized.
#[derive(Debug)]
pub struct CommandFlow {
    pub template: String,
    pub scratch: PathBuf,
    slot: Mutex<()>,
}

impl CommandFlow {
    pub fn new(template: impl Into<String>, scratch: impl Into<PathBuf>) -> Self {
        Self {
            template: template.into(),
            scratch: scratch.into(),
            slot: Mutex::new(()),
        }
    }
}

impl FlowProvider for CommandFlow {
    fn flow(
        &self,
        key: &FrameKey,
        frame_t: &ColorImage,
        frame_t1: &ColorImage,
    ) -> Result<FlowField> {
        let _guard = self.slot.lock().unwrap_or_else(|p| p.into_inner());
        let dir = self.scratch.join(&key.sequence);
        let a = dir.join(format!("{:05}_t.png", key.index));
        let b = dir.join(format!("{:05}_t1.png", key.index));
        let out = dir.join(format!("{:05}.flo", key.index));
        frame_t.save(&a)?;
        frame_t1.save(&b)?;
        let cmd = self
            .template
            .replace("{frame_t}", &a.to_string_lossy())
            .replace("{frame_t1}", &b.to_string_lossy())
            .replace("{out}", &out.to_string_lossy());
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| Error::MissingDependency(format!("flow command `{cmd}`: {e}")))?;
        if !status.success() {
            return Err(Error::MissingDependency(format!(
                "flow command for frame {key} exited with {status}"
            )));
        }
        read_flo(&out)
    }
}

/// Serves flow known by construction, for generated corpora only.
#[derive(Debug, Clone, Default)]
pub struct SyntheticFlow {
    fields: HashMap<FrameKey, FlowField>,
}

impl SyntheticFlow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: FrameKey, flow: FlowField) {
        self.fields.insert(key, flow);
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

impl FlowProvider for SyntheticFlow {
    fn flow(
        &self,
        key: &FrameKey,
        _frame_t: &ColorImage,
        _frame_t1: &ColorImage,
    ) -> Result<FlowField> {
        self.fields
            .get(key)
            .cloned()
            .ok_or_else(|| Error::MissingDependency(format!("no synthetic flow for frame {key}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pack(w: u32, h: u32, pairs: &[(f32, f32)]) -> Vec<u8> {
        let mut b = b"PIEH".to_vec();
        b.extend_from_slice(&w.to_le_bytes());
        b.extend_from_slice(&h.to_le_bytes());
        for (u, v) in pairs {
            b.extend_from_slice(&u.to_le_bytes());
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_single_zero_vector() {
        let f = decode_flo(&pack(1, 1, &[(0.0, 0.0)])).unwrap();
        assert_eq!(f.dims(), (1, 1));
        assert_eq!(f.u[[0, 0]], 0.0);
        assert!(f.valid[[0, 0]]);
    }

    #[test]
    fn decodes_row_major_pairs() {
        let f = decode_flo(&pack(2, 1, &[(1.0, 0.0), (0.0, -1.0)])).unwrap();
        assert_eq!(f.u, array![[1.0, 0.0]]);
        assert_eq!(f.v, array![[0.0, -1.0]]);
    }

    #[test]
    fn rejects_bad_tag_and_truncation() {
        let mut b = pack(1, 1, &[(0.0, 0.0)]);
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_flo(&b), Err(Error::Format(_))));
        let b = pack(2, 2, &[(0.0, 0.0)]);
        assert!(matches!(decode_flo(&b), Err(Error::Format(_))));
        assert!(matches!(decode_flo(b"PIE"), Err(Error::Format(_))));
    }

    #[test]
    fn marks_sentinel_vectors_invalid() {
        let f = decode_flo(&pack(2, 1, &[(1e10, 0.0), (1.0, 1.0)])).unwrap();
        assert_eq!(f.valid, array![[false, true]]);
    }

    #[test]
    fn zero_flow_is_white() {
        let f = FlowField::uniform(3, 4, 0.0, 0.0).unwrap();
        let rgb = encode_color_wheel(&f, MaxMagnitude::Auto).unwrap();
        assert!(rgb.pixels().iter().all(|c| *c == 1.0));
    }

    #[test]
    fn unit_x_flow_is_wheel_origin_color() {
        let f = FlowField::uniform(1, 1, 1.0, 0.0).unwrap();
        let rgb = encode_color_wheel(&f, MaxMagnitude::Fixed(1.0)).unwrap();
        // atan2(-0, -1) = -pi lands exactly on bin 0: pure red.
        assert_eq!(rgb.pixel(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn all_invalid_flow_is_degenerate() {
        let f = FlowField::uniform(2, 2, f32::NAN, 0.0).unwrap();
        assert!(matches!(
            encode_color_wheel(&f, MaxMagnitude::Auto),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn invalid_vectors_render_black() {
        let f = FlowField::new(array![[1.0, 2e9]], array![[0.0, 0.0]]).unwrap();
        let rgb = encode_color_wheel(&f, MaxMagnitude::Auto).unwrap();
        assert_eq!(rgb.pixel(0, 1), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn wheel_has_55_bins_and_a_zero_channel() {
        let wheel = color_wheel();
        assert_eq!(wheel.len(), 55);
        assert!(wheel.iter().all(|c| c.iter().any(|v| *v == 0.0)));
        assert_eq!(wheel[0], [255.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_precomputed_file_names_frame() {
        let dir = tempfile::tempdir().unwrap();
        let p = PrecomputedFlow::new(dir.path());
        let img = ColorImage::new(Array3::zeros((2, 2, 3))).unwrap();
        let err = p.flow(&FrameKey::new("seq", 7), &img, &img).unwrap_err();
        assert!(matches!(err, Error::MissingDependency(ref m) if m.contains("seq/00007")));
    }
}
