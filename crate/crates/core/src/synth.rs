//! Seeded micro-datasets of textured shapes over textured backgrounds.
//!
//! Each video alternates between two motion regimes:
//!
//! * **coherent**: the camera is still and the object translates rigidly,
//!   so the flow separates the object from its surroundings;
//! * **chaotic**: the camera rotates, zooms and pans at random while the
//!   object stays put in the world (optionally jittering and deforming), so
//!   it moves with its surroundings and the flow does not isolate it.
//!
//! Flow is exact by construction. A simulated target method produces maps
//! from the ground truth with light corruption on coherent frames and heavy
//! corruption on chaotic ones.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{write_flo, FlowField, FrameKey, SyntheticFlow};
use crate::map::{BinaryMask, ColorImage, SaliencyMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub videos: usize,
    pub frames_per_video: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Inclusive range of regime run lengths, in frames.
    pub run_length: [usize; 2],
    /// Probability that the first run of a video is coherent.
    pub coherent_first: f64,
    /// Corruption severity of the simulated target on chaotic frames.
    pub target_corruption: f64,
    /// Corruption severity on coherent frames.
    pub target_noise: f64,
    /// Per-frame object displacement on chaotic frames, in pixels at 64×64.
    pub object_jitter: f64,
    /// Per-frame anisotropic object scale change on chaotic frames.
    pub object_deform: f64,
    /// Prefix of the generated sequence names.
    pub prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            videos: 8,
            frames_per_video: 30,
            height: 64,
            width: 64,
            seed: 7,
            run_length: [4, 8],
            coherent_first: 0.5,
            target_corruption: 1.0,
            target_noise: 0.1,
            object_jitter: 0.0,
            object_deform: 0.0,
            prefix: "vid".into(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.videos == 0 || self.frames_per_video == 0 {
            return Err(Error::InvalidInput(format!(
                "synthetic spec needs frames: {} videos x {} frames",
                self.videos, self.frames_per_video
            )));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidInput(
                "synthetic frames must be at least 16x16".into(),
            ));
        }
        if self.run_length[0] == 0 || self.run_length[0] > self.run_length[1] {
            return Err(Error::InvalidInput(format!(
                "bad run length {:?}",
                self.run_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Coherent,
    Chaotic,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Coherent => "coherent",
            Regime::Chaotic => "chaotic",
        }
    }
}

/// 2D affine map `p -> m p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0], [0.0, 1.0]],
            t: [0.0, 0.0],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            t: [dx, dy],
            ..Self::identity()
        }
    }

    /// Rotation by `angle` and anisotropic scale `(sx, sy)` in the local
    /// frame, then translation to `origin`.
    pub fn pose(origin: [f64; 2], angle: f64, sx: f64, sy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            m: [[c * sx, -s * sy], [s * sx, c * sy]],
            t: origin,
        }
    }

    /// Similarity about `center`: `center + scale R(angle) (p − center) + shift`.
    pub fn about(center: [f64; 2], angle: f64, scale: f64, shift: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let m = [[c * scale, -s * scale], [s * scale, c * scale]];
        let t = [
            center[0] - (m[0][0] * center[0] + m[0][1] * center[1]) + shift[0],
            center[1] - (m[1][0] * center[0] + m[1][1] * center[1]) + shift[1],
        ];
        Self { m, t }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.t[0],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.t[1],
        ]
    }

    pub fn inverse(&self) -> Self {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        let m = [[d / det, -b / det], [-c / det, a / det]];
        let t = [
            -(m[0][0] * self.t[0] + m[0][1] * self.t[1]),
            -(m[1][0] * self.t[0] + m[1][1] * self.t[1]),
        ];
        Self { m, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ellipse { rx: f64, ry: f64 },
    Rect { hx: f64, hy: f64 },
}

impl Shape {
    pub fn contains(&self, l: [f64; 2]) -> bool {
        match *self {
            Shape::Ellipse { rx, ry } => (l[0] / rx).powi(2) + (l[1] / ry).powi(2) <= 1.0,
            Shape::Rect { hx, hy } => l[0].abs() <= hx && l[1].abs() <= hy,
        }
    }

    fn extent(&self) -> f64 {
        match *self {
            Shape::Ellipse { rx, ry } => rx.max(ry),
            Shape::Rect { hx, hy } => hx.hypot(hy),
        }
    }
}

/// Smooth, low-saturation world texture.
#[derive(Debug, Clone, PartialEq)]
pub struct Backdrop {
    base: [f64; 3],
    waves: Vec<([f64; 2], f64, [f64; 3])>,
}

impl Backdrop {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let gray = rng.random_range(0.3..0.6);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.04..0.04));
        let base = std::array::from_fn(|c| gray + tint[c]);
        let waves = (0..4)
            .map(|_| {
                let theta = rng.random_range(0.0..PI);
                let freq = rng.random_range(0.15..0.6);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.04..0.1);
                let chroma: [f64; 3] = std::array::from_fn(|_| amp * rng.random_range(0.8..1.0));
                ([freq * theta.cos(), freq * theta.sin()], phase, chroma)
            })
            .collect();
        Self { base, waves }
    }

    pub fn flat(gray: f64) -> Self {
        Self {
            base: [gray; 3],
            waves: Vec::new(),
        }
    }

    fn color(&self, w: [f64; 2]) -> [f64; 3] {
        let mut c = self.base;
        for (k, phase, amp) in &self.waves {
            let s = (k[0] * w[0] + k[1] * w[1] + phase).sin();
            for i in 0..3 {
                c[i] += amp[i] * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Saturated, striped object texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Skin {
    rgb: [f64; 3],
    period: f64,
}

impl Skin {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let hue = rng.random_range(0.0..1.0);
        let value = rng.random_range(0.8..0.95);
        let sat = rng.random_range(0.75..0.95);
        Self {
            rgb: hsv_to_rgb(hue, sat, value),
            period: rng.random_range(4.0..7.0),
        }
    }

    pub fn solid(rgb: [f64; 3]) -> Self {
        Self {
            rgb,
            period: f64::INFINITY,
        }
    }

    fn color(&self, l: [f64; 2]) -> [f64; 3] {
        let stripe = if self.period.is_finite() {
            0.85 + 0.15 * (2.0 * PI * l[0] / self.period).cos()
        } else {
            1.0
        };
        self.rgb.map(|v| (v * stripe).clamp(0.0, 1.0))
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// A renderable video: per-frame camera (screen → world) and object
/// (local → world) transforms over a fixed backdrop and object.
#[derive(Debug, Clone)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub backdrop: Backdrop,
    pub skin: Skin,
    pub shape: Shape,
    pub cameras: Vec<Affine>,
    pub objects: Vec<Affine>,
}

impl Scene {
    /// Still camera and a solid square translating by `shift` per frame.
    pub fn translating_square(
        height: usize,
        width: usize,
        half: f64,
        start: [f64; 2],
        shift: [f64; 2],
        frames: usize,
    ) -> Self {
        let objects = (0..frames)
            .map(|t| {
                Affine::translation(
                    start[0] + shift[0] * t as f64,
                    start[1] + shift[1] * t as f64,
                )
            })
            .collect();
        Self {
            height,
            width,
            backdrop: Backdrop::flat(0.4),
            skin: Skin::solid([0.9, 0.2, 0.1]),
            shape: Shape::Rect { hx: half, hy: half },
            cameras: vec![Affine::identity(); frames],
            objects,
        }
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    fn pixel_world(&self, t: usize, y: usize, x: usize) -> [f64; 2] {
        self.cameras[t].apply([x as f64 + 0.5, y as f64 + 0.5])
    }

    fn object_local(&self, t: usize, world: [f64; 2]) -> Option<[f64; 2]> {
        let local = self.objects[t].inverse().apply(world);
        self.shape.contains(local).then_some(local)
    }

    pub fn render(&self, t: usize) -> Result<(ColorImage, BinaryMask)> {
        let (h, w) = (self.height, self.width);
        let mut px = Array3::<f32>::zeros((h, w, 3));
        let mut mask = Array2::from_elem((h, w), false);
        for y in 0..h {
            for x in 0..w {
                let world = self.pixel_world(t, y, x);
                let color = match self.object_local(t, world) {
                    Some(local) => {
                        mask[[y, x]] = true;
                        self.skin.color(local)
                    }
                    None => self.backdrop.color(world),
                };
                for c in 0..3 {
                    px[[y, x, c]] = color[c] as f32;
                }
            }
        }
        Ok((ColorImage::new(px)?, BinaryMask::new(mask)?))
    }

    /// Exact forward flow from frame `t` to `t + 1`.
    pub fn flow(&self, t: usize) -> Result<FlowField> {
        if t + 1 >= self.len() {
            return Err(Error::InvalidInput(format!("frame {t} has no successor")));
        }
        let (h, w) = (self.height, self.width);
        let next_cam_inv = self.cameras[t + 1].inverse();
        let mut u = Array2::zeros((h, w));
        let mut v = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let world = self.pixel_world(t, y, x);
                let next_world = match self.object_local(t, world) {
                    Some(local) => self.objects[t + 1].apply(local),
                    None => world,
                };
                let p = next_cam_inv.apply(next_world);
                u[[y, x]] = (p[0] - (x as f64 + 0.5)) as f32;
                v[[y, x]] = (p[1] - (y as f64 + 0.5)) as f32;
            }
        }
        FlowField::new(u, v)
    }
}

/// One generated video with all of its artifacts.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub name: String,
    pub scene: Scene,
    pub frames: Vec<ColorImage>,
    pub gts: Vec<BinaryMask>,
    /// `flows[t]` goes from frame `t` to `t + 1`; the last frame has none.
    pub flows: Vec<FlowField>,
    /// Regime of each frame's outgoing motion (the last frame repeats its predecessor).
    pub regimes: Vec<Regime>,
    pub targets: Vec<SaliencyMap>,
}

impl SynthVideo {
    pub fn key(&self, t: usize) -> FrameKey {
        FrameKey::new(self.name.clone(), t)
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub videos: Vec<SynthVideo>,
}

impl SynthCorpus {
    pub fn frame_count(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    pub fn flow_count(&self) -> usize {
        self.videos.iter().map(|v| v.flows.len()).sum()
    }

    /// Provider serving the exact flows of this corpus.
    pub fn flow_provider(&self) -> SyntheticFlow {
        let mut provider = SyntheticFlow::new();
        for video in &self.videos {
            for (t, flow) in video.flows.iter().enumerate() {
                provider.insert(video.key(t), flow.clone());
            }
        }
        provider
    }

    /// Writes `frames/`, `gt/`, `flows/`, `sota/`, `regimes.csv` and
    /// `spec.json` under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        let mut regimes = String::from("sequence,index,regime\n");
        for video in &self.videos {
            for t in 0..video.frames.len() {
                let key = video.key(t);
                video.frames[t].save(&root.join("frames").join(key.rel_path("png")))?;
                video.gts[t].save(&root.join("gt").join(key.rel_path("png")))?;
                video.targets[t].save(&root.join("sota").join(key.rel_path("png")))?;
                if let Some(flow) = video.flows.get(t) {
                    write_flo(&root.join("flows").join(key.rel_path("flo")), flow)?;
                }
                regimes.push_str(&format!(
                    "{},{},{}\n",
                    video.name,
                    t,
                    video.regimes[t].as_str()
                ));
            }
        }
        let write = |name: &str, text: String| {
            let p = root.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("regimes.csv", regimes)?;
        write("spec.json", serde_json::to_string_pretty(&self.spec)?)?;
        Ok(())
    }
}

/// Reads `regimes.csv` as `(frame id, regime)` pairs.
pub fn read_regimes(path: &Path) -> Result<Vec<(String, Regime)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("bad regime line `{line}`"));
            if cols.len() != 3 {
                return Err(bad());
            }
            let index: usize = cols[1].parse().map_err(|_| bad())?;
            let regime = match cols[2] {
                "coherent" => Regime::Coherent,
                "chaotic" => Regime::Chaotic,
                _ => return Err(bad()),
            };
            Ok((FrameKey::new(cols[0], index).id(), regime))
        })
        .collect()
}

/// Generates the corpus described by `spec`.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let videos = (0..spec.videos)
        .map(|i| {
            let seed: u64 = master.random();
            gen_video(spec, &format!("{}{i:02}", spec.prefix), seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthCorpus {
        spec: spec.clone(),
        videos,
    })
}

/// Writes a test split at `root/test` from `spec` and an independent
/// training split of `train_videos` videos at `root/train`.
pub fn gen_synthetic_splits(
    root: &Path,
    spec: &SynthSpec,
    train_videos: usize,
) -> Result<(SynthCorpus, SynthCorpus)> {
    let train_spec = SynthSpec {
        videos: train_videos,
        seed: spec.seed ^ 0x7a11_5eed,
        prefix: format!("{}train", spec.prefix),
        ..spec.clone()
    };
    let train = gen_synthetic(&train_spec)?;
    let test = gen_synthetic(spec)?;
    train.write(&root.join("train"))?;
    test.write(&root.join("test"))?;
    Ok((train, test))
}

fn regime_schedule(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Regime> {
    let n = spec.frames_per_video;
    let mut regimes = Vec::with_capacity(n);
    let mut current = if rng.random_bool(spec.coherent_first.clamp(0.0, 1.0)) {
        Regime::Coherent
    } else {
        Regime::Chaotic
    };
    while regimes.len() < n {
        let run = rng.random_range(spec.run_length[0]..=spec.run_length[1]);
        for _ in 0..run.min(n - regimes.len()) {
            regimes.push(current);
        }
        current = match current {
            Regime::Coherent => Regime::Chaotic,
            Regime::Chaotic => Regime::Coherent,
        };
    }
    regimes
}

fn random_velocity(rng: &mut ChaCha8Rng, scale: f64) -> [f64; 2] {
    let angle = rng.random_range(0.0..2.0 * PI);
    let speed = rng.random_range(1.5..3.0) * scale;
    [speed * angle.cos(), speed * angle.sin()]
}

fn gen_video(spec: &SynthSpec, name: &str, seed: u64) -> Result<SynthVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height as f64, spec.width as f64);
    let scale = h.min(w) / 64.0;
    let center = [w / 2.0, h / 2.0];

    let backdrop = Backdrop::random(&mut rng);
    let skin = Skin::random(&mut rng);
    let shape = if rng.random_bool(0.5) {
        Shape::Ellipse {
            rx: rng.random_range(8.0..13.0) * scale,
            ry: rng.random_range(7.0..12.0) * scale,
        }
    } else {
        Shape::Rect {
            hx: rng.random_range(6.0..10.0) * scale,
            hy: rng.random_range(6.0..10.0) * scale,
        }
    };
    let angle = rng.random_range(0.0..PI);
    let margin = shape.extent() + 2.0;
    let regimes = regime_schedule(spec, &mut rng);

    let mut origin = [
        rng.random_range(w * 0.35..w * 0.65),
        rng.random_range(h * 0.35..h * 0.65),
    ];
    let mut camera = Affine::identity();
    let mut deform = (1.0, 1.0);
    let mut velocity = random_velocity(&mut rng, scale);
    let mut cameras = Vec::with_capacity(spec.frames_per_video);
    let mut objects = Vec::with_capacity(spec.frames_per_video);

    for t in 0..spec.frames_per_video {
        cameras.push(camera);
        objects.push(Affine::pose(origin, angle, deform.0, deform.1));
        match regimes[t] {
            Regime::Coherent => {
                if t == 0 || regimes[t - 1] != Regime::Coherent {
                    velocity = random_velocity(&mut rng, scale);
                }
                // Bounce off the world margins so the object stays in view.
                for (axis, limit) in [(0, w), (1, h)] {
                    let next = origin[axis] + velocity[axis];
                    if next < margin || next > limit - margin {
                        velocity[axis] = -velocity[axis];
                    }
                }
                origin = [origin[0] + velocity[0], origin[1] + velocity[1]];
            }
            Regime::Chaotic => {
                camera = Affine::about(
                    center,
                    rng.random_range(-0.15..0.15),
                    rng.random_range(0.9..1.1),
                    [
                        rng.random_range(-3.0..3.0) * scale,
                        rng.random_range(-3.0..3.0) * scale,
                    ],
                );
                let j = spec.object_jitter * scale;
                let d = spec.object_deform;
                origin = [
                    (origin[0] + rng.random_range(-1.0..=1.0) * j).clamp(margin, w - margin),
                    (origin[1] + rng.random_range(-1.0..=1.0) * j).clamp(margin, h - margin),
                ];
                deform = (
                    1.0 + rng.random_range(-1.0..=1.0) * d,
                    1.0 + rng.random_range(-1.0..=1.0) * d,
                );
            }
        }
    }

    let scene = Scene {
        height: spec.height,
        width: spec.width,
        backdrop,
        skin,
        shape,
        cameras,
        objects,
    };

    let mut frames = Vec::with_capacity(scene.len());
    let mut gts = Vec::with_capacity(scene.len());
    for t in 0..scene.len() {
        let (frame, gt) = scene.render(t)?;
        frames.push(frame);
        gts.push(gt);
    }
    let flows = (0..scene.len().saturating_sub(1))
        .map(|t| scene.flow(t))
        .collect::<Result<Vec<_>>>()?;
    let targets = gts
        .iter()
        .zip(&regimes)
        .map(|(gt, regime)| {
            let severity = match regime {
                Regime::Coherent => spec.target_noise,
                Regime::Chaotic => spec.target_corruption,
            };
            simulate_target(gt, severity, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthVideo {
        name: name.to_string(),
        scene,
        frames,
        gts,
        flows,
        regimes,
        targets,
    })
}

/// Corrupts a ground-truth mask into a plausible detector output. Severity
/// scales the object shift, the cut-away fraction and the number and size of
/// false-positive blobs; every map is softened by a 3×3 box blur.
pub fn simulate_target(
    gt: &BinaryMask,
    severity: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SaliencyMap> {
    let (h, w) = gt.dims();
    let src = gt.values();
    let severity = severity.max(0.0);

    let shift_mag = if severity >= 0.5 {
        rng.random_range(2.0..4.0) * severity
    } else {
        rng.random_range(0.0..1.0) * severity * 2.0
    };
    let shift_angle = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (
        (shift_mag * shift_angle.cos()).round() as isize,
        (shift_mag * shift_angle.sin()).round() as isize,
    );

    // Cut away the part of the object beyond a random line through it.
    let (mut cy, mut cx, mut n) = (0.0, 0.0, 0.0);
    for ((y, x), &g) in src.indexed_iter() {
        if g {
            cy += y as f64;
            cx += x as f64;
            n += 1.0;
        }
    }
    let (cy, cx) = if n > 0.0 {
        (cy / n, cx / n)
    } else {
        (h as f64 / 2.0, w as f64 / 2.0)
    };
    let cut_angle = rng.random_range(0.0..2.0 * PI);
    let cut_offset = (1.0 - 0.6 * severity.min(1.0)) * (n.sqrt() / 2.0);
    let cut = severity >= 0.5;

    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let sy = y as isize - dy;
            let sx = x as isize - dx;
            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                continue;
            }
            if !src[[sy as usize, sx as usize]] {
                continue;
            }
            let proj = (sx as f64 - cx) * cut_angle.cos() + (sy as f64 - cy) * cut_angle.sin();
            if cut && proj > cut_offset {
                continue;
            }
            out[[y, x]] = 1.0;
        }
    }

    let blobs = if severity >= 0.5 {
        1 + (severity * 1.5).floor() as usize
    } else {
        0
    };
    for _ in 0..blobs {
        let r = rng.random_range(4.0..7.0) * severity.min(1.5) * h.min(w) as f64 / 64.0;
        let by = rng.random_range(0.0..h as f64);
        let bx = rng.random_range(0.0..w as f64);
        let level = rng.random_range(0.6..0.9);
        for y in 0..h {
            for x in 0..w {
                if (y as f64 - by).hypot(x as f64 - bx) <= r {
                    out[[y, x]] = out[[y, x]].max(level);
                }
            }
        }
    }

    let noise = 0.05 * severity.min(1.0);
    let mut blurred = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut k) = (0.0, 0.0);
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    s += out[[yy, xx]];
                    k += 1.0;
                }
            }
            let jitter = if noise > 0.0 {
                rng.random_range(-noise..noise)
            } else {
                0.0
            };
            blurred[[y, x]] = s / k + jitter;
        }
    }
    SaliencyMap::from_clamped(blurred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::s_measure;

    fn small() -> SynthSpec {
        SynthSpec {
            videos: 2,
            frames_per_video: 6,
            height: 32,
            width: 32,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn counts_frames_and_flows() {
        let c = gen_synthetic(&small()).unwrap();
        assert_eq!(c.frame_count(), 12);
        assert_eq!(c.flow_count(), 10);
    }

    #[test]
    fn zero_frames_rejected() {
        let spec = SynthSpec {
            frames_per_video: 0,
            ..small()
        };
        assert!(matches!(gen_synthetic(&spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn seed_deterministic() {
        let a = gen_synthetic(&small()).unwrap();
        let b = gen_synthetic(&small()).unwrap();
        for (va, vb) in a.videos.iter().zip(&b.videos) {
            assert_eq!(va.frames, vb.frames);
            assert_eq!(va.targets, vb.targets);
            assert_eq!(va.flows, vb.flows);
        }
    }

    #[test]
    fn translating_square_flow_equals_shift() {
        let scene = Scene::translating_square(32, 32, 5.0, [12.0, 16.0], [2.0, 0.0], 3);
        let (_, gt) = scene.render(0).unwrap();
        let flow = scene.flow(0).unwrap();
        for ((y, x), &inside) in gt.values().indexed_iter() {
            if inside {
                assert!((flow.u[[y, x]] - 2.0).abs() < 1e-5);
                assert!(flow.v[[y, x]].abs() < 1e-5);
            } else {
                assert!(flow.u[[y, x]].abs() < 1e-5);
            }
        }
    }

    #[test]
    fn affine_inverse_round_trips() {
        let a = Affine::about([10.0, 5.0], 0.3, 1.1, [1.0, -2.0]);
        let p = a.inverse().apply(a.apply([3.0, 4.0]));
        assert!((p[0] - 3.0).abs() < 1e-12 && (p[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn heavy_corruption_hurts_structure() {
        let scene = Scene::translating_square(64, 64, 10.0, [32.0, 32.0], [0.0, 0.0], 1);
        let (_, gt) = scene.render(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let light = simulate_target(&gt, 0.1, &mut rng).unwrap();
        let heavy = simulate_target(&gt, 1.0, &mut rng).unwrap();
        assert!(s_measure(&light, &gt).unwrap() > s_measure(&heavy, &gt).unwrap());
    }
}
