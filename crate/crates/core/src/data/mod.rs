//! Paired exposure-error datasets: corruption operators, procedural
//! sources, generation and on-disk layout.
//!
//! Layout: `<dir>/gt/<id>.png`, `<dir>/input/<id>.png`, `<dir>/manifest.csv`.

mod corrupt;
mod io;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use lumafix_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use corrupt::{apply_exposure_shift, apply_lowlight, DISPLAY_GAMMA};
pub use io::{create_dir, list_pngs, read_png, to_rgb8, write_atomic, write_png};

use crate::config::KvConfig;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "id,label,mode,ev,gamma,illum";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Overexposed,
    Underexposed,
    Lowlight,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Overexposed => "overexposed",
            Label::Underexposed => "underexposed",
            Label::Lowlight => "lowlight",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Label::Overexposed, Label::Underexposed, Label::Lowlight]
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown label `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionMode {
    EvShift,
    Lowlight,
}

impl CorruptionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionMode::EvShift => "ev_shift",
            CorruptionMode::Lowlight => "lowlight",
        }
    }
}

impl fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ev_shift" => Ok(CorruptionMode::EvShift),
            "lowlight" => Ok(CorruptionMode::Lowlight),
            _ => Err(Error::config("mode", format!("`{s}` is not ev_shift|lowlight"))),
        }
    }
}

/// Corruption parameters; only the fields of `mode` are meaningful.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CorruptionSpec {
    EvShift { ev: f64 },
    Lowlight { gamma: f64, illum: f64 },
}

impl CorruptionSpec {
    pub fn mode(&self) -> CorruptionMode {
        match self {
            CorruptionSpec::EvShift { .. } => CorruptionMode::EvShift,
            CorruptionSpec::Lowlight { .. } => CorruptionMode::Lowlight,
        }
    }

    pub fn label(&self) -> Label {
        match *self {
            CorruptionSpec::EvShift { ev } if ev > 0.0 => Label::Overexposed,
            CorruptionSpec::EvShift { .. } => Label::Underexposed,
            CorruptionSpec::Lowlight { .. } => Label::Lowlight,
        }
    }

    pub fn apply(&self, img: &Tensor) -> Tensor {
        match *self {
            CorruptionSpec::EvShift { ev } => apply_exposure_shift(img, ev),
            CorruptionSpec::Lowlight { gamma, illum } => apply_lowlight(img, gamma, illum),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub label: Label,
    pub input: Tensor,
    pub gt: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatagenConfig {
    pub count: usize,
    pub mode: CorruptionMode,
    pub image_size: usize,
    pub ev_min: f64,
    pub ev_max: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub illum_min: f64,
    pub illum_max: f64,
    pub seed: u64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            count: 16,
            mode: CorruptionMode::EvShift,
            image_size: 64,
            ev_min: 1.5,
            ev_max: 3.5,
            gamma_min: 2.0,
            gamma_max: 4.0,
            illum_min: 0.1,
            illum_max: 0.5,
            seed: 0,
        }
    }
}

impl DatagenConfig {
    pub const KEYS: [&'static str; 10] = [
        "count",
        "mode",
        "image_size",
        "ev_min",
        "ev_max",
        "gamma_min",
        "gamma_max",
        "illum_min",
        "illum_max",
        "seed",
    ];

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            count: kv.get_or("count", d.count)?,
            mode: match kv.get_str("mode") {
                Some(s) => s.parse()?,
                None => d.mode,
            },
            image_size: kv.get_or("image_size", d.image_size)?,
            ev_min: kv.get_or("ev_min", d.ev_min)?,
            ev_max: kv.get_or("ev_max", d.ev_max)?,
            gamma_min: kv.get_or("gamma_min", d.gamma_min)?,
            gamma_max: kv.get_or("gamma_max", d.gamma_max)?,
            illum_min: kv.get_or("illum_min", d.illum_min)?,
            illum_max: kv.get_or("illum_max", d.illum_max)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("count", "must be at least 1"));
        }
        if self.image_size == 0 {
            return Err(Error::config("image_size", "must be positive"));
        }
        if !(self.ev_min > 0.0 && self.ev_min <= self.ev_max) {
            return Err(Error::config("ev_min", "need 0 < ev_min <= ev_max"));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= self.gamma_max) {
            return Err(Error::config("gamma_min", "need 0 < gamma_min <= gamma_max"));
        }
        if !(self.illum_min > 0.0 && self.illum_min <= self.illum_max && self.illum_max <= 1.0) {
            return Err(Error::config("illum_min", "need 0 < illum_min <= illum_max <= 1"));
        }
        Ok(())
    }

    /// Generator for item `index`: independent of every other item.
    pub fn item_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    /// Corruption for item `index`. In `ev_shift` mode even indices are
    /// overexposed and odd ones underexposed.
    pub fn draw_spec(&self, index: usize, rng: &mut impl Rng) -> CorruptionSpec {
        match self.mode {
            CorruptionMode::EvShift => {
                let mag = uniform(rng, self.ev_min, self.ev_max);
                let ev = if index % 2 == 0 { mag } else { -mag };
                CorruptionSpec::EvShift { ev }
            }
            CorruptionMode::Lowlight => CorruptionSpec::Lowlight {
                gamma: uniform(rng, self.gamma_min, self.gamma_max),
                illum: uniform(rng, self.illum_min, self.illum_max),
            },
        }
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Smooth four-corner colour gradient overlaid with soft-edged discs,
/// rectangles and a Gaussian blob.
pub fn procedural_source(size: usize, rng: &mut impl Rng) -> Tensor {
    let colour = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| -> [f64; 3] {
        [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
    };
    let corners: Vec<[f64; 3]> = (0..4).map(|_| colour(rng, 0.15, 0.85)).collect();
    let n = size * size;
    let mut img = vec![0.0; 3 * n];
    let s = (size.max(2) - 1) as f64;
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 / s, x as f64 / s);
            for c in 0..3 {
                let top = corners[0][c] * (1.0 - fx) + corners[1][c] * fx;
                let bot = corners[2][c] * (1.0 - fx) + corners[3][c] * fx;
                img[c * n + y * size + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    let shapes = rng.gen_range(3..=6);
    for k in 0..shapes {
        let col = colour(rng, 0.05, 0.95);
        let alpha = rng.gen_range(0.6..1.0);
        let cy = rng.gen_range(0.0..size as f64);
        let cx = rng.gen_range(0.0..size as f64);
        let r = rng.gen_range(0.08..0.3) * size as f64;
        let r2 = rng.gen_range(0.08..0.3) * size as f64;
        let kind = if k == 0 { 2 } else { rng.gen_range(0..2) };
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let cover = match kind {
                    0 => 1.0 - smoothstep(r - 1.0, r + 1.0, (dy * dy + dx * dx).sqrt()),
                    1 => {
                        (1.0 - smoothstep(r - 1.0, r + 1.0, dx.abs()))
                            * (1.0 - smoothstep(r2 - 1.0, r2 + 1.0, dy.abs()))
                    }
                    _ => (-(dy * dy + dx * dx) / (2.0 * r * r)).exp(),
                };
                let a = alpha * cover;
                for (c, &v) in col.iter().enumerate() {
                    let p = &mut img[c * n + y * size + x];
                    *p = *p * (1.0 - a) + v * a;
                }
            }
        }
    }
    Tensor::from_vec(&[3, size, size], img).expect("sized")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub spec: CorruptionSpec,
}

impl ManifestRow {
    pub fn to_csv(&self) -> String {
        let (ev, gamma, illum) = match self.spec {
            CorruptionSpec::EvShift { ev } => (ev.to_string(), String::new(), String::new()),
            CorruptionSpec::Lowlight { gamma, illum } => (String::new(), gamma.to_string(), illum.to_string()),
        };
        format!(
            "{},{},{},{ev},{gamma},{illum}",
            self.id,
            self.spec.label(),
            self.spec.mode()
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => return Err(err(1, format!("expected header `{MANIFEST_HEADER}`"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(err(i + 1, format!("{} fields, expected 6", f.len())));
            }
            let num =
                |s: &str, what: &str| -> Result<f64> { s.parse().map_err(|_| err(i + 1, format!("bad {what} `{s}`"))) };
            let label: Label = f[1].parse().map_err(|e: Error| err(i + 1, e.to_string()))?;
            let mode: CorruptionMode = f[2].parse().map_err(|e: Error| err(i + 1, e.to_string()))?;
            let spec = match mode {
                CorruptionMode::EvShift => CorruptionSpec::EvShift { ev: num(f[3], "ev")? },
                CorruptionMode::Lowlight => CorruptionSpec::Lowlight {
                    gamma: num(f[4], "gamma")?,
                    illum: num(f[5], "illum")?,
                },
            };
            if spec.label() != label {
                return Err(err(i + 1, format!("label `{label}` contradicts {spec:?}")));
            }
            rows.push(ManifestRow {
                id: f[0].to_string(),
                spec,
            });
        }
        Ok(Self { rows })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }

    pub fn count(&self, label: Label) -> usize {
        self.rows.iter().filter(|r| r.spec.label() == label).count()
    }
}

pub fn item_id(index: usize) -> String {
    format!("img{index:04}")
}

/// Builds sample `index` in memory: source image (procedural, or
/// `sources[index % len]`) and its corruption.
pub fn synthesize(cfg: &DatagenConfig, index: usize, sources: &[Tensor]) -> (PairedSample, CorruptionSpec) {
    let mut rng = cfg.item_rng(index);
    let gt = if sources.is_empty() {
        procedural_source(cfg.image_size, &mut rng)
    } else {
        sources[index % sources.len()].clone()
    };
    let spec = cfg.draw_spec(index, &mut rng);
    let sample = PairedSample {
        id: item_id(index),
        label: spec.label(),
        input: spec.apply(&gt),
        gt,
    };
    (sample, spec)
}

/// Writes `cfg.count` pairs and the manifest under `out_dir`.
/// `source_dir`, when given, supplies ground-truth PNGs (cycled by index).
pub fn generate_dataset(source_dir: Option<&Path>, out_dir: &Path, cfg: &DatagenConfig) -> Result<Manifest> {
    cfg.validate()?;
    let sources = match source_dir {
        None => Vec::new(),
        Some(dir) => {
            let files = list_pngs(dir)?;
            if files.is_empty() {
                return Err(Error::Invalid(format!("{}: no PNG source images", dir.display())));
            }
            files.iter().map(|p| read_png(p)).collect::<Result<Vec<_>>>()?
        }
    };
    let (gt_dir, in_dir) = (out_dir.join("gt"), out_dir.join("input"));
    create_dir(&gt_dir)?;
    create_dir(&in_dir)?;
    let mut manifest = Manifest::default();
    for index in 0..cfg.count {
        let (sample, spec) = synthesize(cfg, index, &sources);
        write_png(&gt_dir.join(format!("{}.png", sample.id)), &sample.gt)?;
        write_png(&in_dir.join(format!("{}.png", sample.id)), &sample.input)?;
        manifest.rows.push(ManifestRow { id: sample.id, spec });
    }
    write_atomic(&out_dir.join(MANIFEST), manifest.to_csv().as_bytes())?;
    Ok(manifest)
}

/// Loads every pair listed in `<dir>/manifest.csv`, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<PairedSample>> {
    let manifest = Manifest::load(dir)?;
    manifest
        .rows
        .iter()
        .map(|r| {
            let input = read_png(&dir.join("input").join(format!("{}.png", r.id)))?;
            let gt = read_png(&dir.join("gt").join(format!("{}.png", r.id)))?;
            if input.shape() != gt.shape() {
                return Err(Error::Invalid(format!("{}: input and gt shapes differ", r.id)));
            }
            Ok(PairedSample {
                id: r.id.clone(),
                label: r.spec.label(),
                input,
                gt,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic_specs() {
        let cfg = DatagenConfig {
            count: 4,
            seed: 7,
            image_size: 8,
            ..DatagenConfig::default()
        };
        let a: Vec<_> = (0..4).map(|i| synthesize(&cfg, i, &[]).1).collect();
        let b: Vec<_> = (0..4).map(|i| synthesize(&cfg, i, &[]).1).collect();
        assert_eq!(a, b);
        let over = a.iter().filter(|s| s.label() == Label::Overexposed).count();
        assert_eq!(over, 2);
        for s in &a {
            let CorruptionSpec::EvShift { ev } = *s else { panic!() };
            assert!((1.5..3.5).contains(&ev.abs()));
        }
    }

    #[test]
    fn lowlight_ranges() {
        let cfg = DatagenConfig {
            mode: CorruptionMode::Lowlight,
            image_size: 8,
            ..DatagenConfig::default()
        };
        for i in 0..20 {
            let CorruptionSpec::Lowlight { gamma, illum } = synthesize(&cfg, i, &[]).1 else {
                panic!()
            };
            assert!((2.0..4.0).contains(&gamma) && (0.1..0.5).contains(&illum));
        }
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            rows: vec![
                ManifestRow {
                    id: "a".into(),
                    spec: CorruptionSpec::EvShift { ev: -2.25 },
                },
                ManifestRow {
                    id: "b".into(),
                    spec: CorruptionSpec::Lowlight { gamma: 2.5, illum: 0.3 },
                },
            ],
        };
        let text = m.to_csv();
        assert!(text.starts_with("id,label,mode,ev,gamma,illum\na,underexposed,ev_shift,-2.25,,\n"));
        assert_eq!(Manifest::parse(&text, Path::new("m")).unwrap(), m);
        assert!(Manifest::parse("id,x\n", Path::new("m")).is_err());
    }

    #[test]
    fn procedural_images_are_in_range_and_varied() {
        let cfg = DatagenConfig::default();
        let a = synthesize(&cfg, 0, &[]).0;
        let b = synthesize(&cfg, 1, &[]).0;
        assert_eq!(a.gt.shape(), &[3, 64, 64]);
        assert!(a.gt.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.gt.max_abs_diff(&b.gt).unwrap() > 0.1);
    }
}
