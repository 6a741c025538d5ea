//! Synthetic street-scene-like two-domain data.
//!
//! Each image is a stack of horizontal "stuff" bands (one class each, top to
//! bottom) with elliptical "thing" blobs drawn on top. The last `rare_classes`
//! thing classes are small and intermittent, which makes them bottleneck classes.
//! Pixel colors are the class palette color plus Gaussian noise; the target domain
//! adds a per-channel offset and scales the noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClassId, ImageGrid, LabelMap};
use crate::mixer::LabeledImage;
use crate::sim::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainPairConfig {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    /// Classes `0..num_stuff` are drawn as horizontal bands.
    pub num_stuff: usize,
    /// The last `rare_classes` classes are small, intermittent blobs.
    pub rare_classes: usize,
    /// Blob count range (inclusive) for common thing classes.
    pub thing_blobs: (usize, usize),
    /// Blob radius range in pixels for common thing classes.
    pub thing_radius: (f64, f64),
    pub rare_blobs: (usize, usize),
    pub rare_radius: (f64, f64),
    /// Probability that a rare class appears in a given image.
    pub rare_presence: f64,
    /// Mean RGB color per class. Generated from the seed when empty.
    pub palette: Vec<[f64; 3]>,
    /// Per-pixel Gaussian noise standard deviation in the source domain.
    pub noise: f64,
    /// Per-channel intensity offset added to target pixels.
    pub target_offset: [f64; 3],
    /// Multiplier on `noise` for target pixels.
    pub target_noise_scale: f64,
}

impl Default for DomainPairConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            height: 64,
            width: 64,
            num_stuff: 3,
            rare_classes: 2,
            thing_blobs: (1, 3),
            thing_radius: (5.0, 10.0),
            rare_blobs: (1, 2),
            rare_radius: (2.0, 4.0),
            rare_presence: 0.7,
            palette: default_palette(),
            noise: 0.08,
            target_offset: [0.0, 0.05, 0.25],
            target_noise_scale: 1.5,
        }
    }
}

fn default_palette() -> Vec<[f64; 3]> {
    vec![
        [0.55, 0.70, 0.90], // sky
        [0.60, 0.45, 0.40], // building
        [0.35, 0.35, 0.38], // road
        [0.20, 0.30, 0.65], // car
        [0.75, 0.70, 0.25], // sign
        [0.65, 0.35, 0.30], // person
    ]
}

impl DomainPairConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let c = self.num_classes;
        if c < 2 || c > 256 {
            return bad(format!("num_classes={c} must be in [2, 256]"));
        }
        if self.num_stuff == 0 || self.num_stuff > c {
            return bad(format!("num_stuff={} must be in [1, {c}]", self.num_stuff));
        }
        if self.rare_classes > c - self.num_stuff {
            return bad(format!(
                "rare_classes={} exceeds the {} thing classes",
                self.rare_classes,
                c - self.num_stuff
            ));
        }
        if self.height < 2 * self.num_stuff || self.width < 4 {
            return bad(format!(
                "{}x{} image cannot hold {} stuff bands",
                self.height, self.width, self.num_stuff
            ));
        }
        for (name, (lo, hi)) in [("thing_radius", self.thing_radius), ("rare_radius", self.rare_radius)] {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("{name} range ({lo}, {hi}) is invalid"));
            }
            if hi > self.height.min(self.width) as f64 / 4.0 {
                return bad(format!("{name} max {hi} too large for {}x{}", self.height, self.width));
            }
        }
        for (name, (lo, hi)) in [("thing_blobs", self.thing_blobs), ("rare_blobs", self.rare_blobs)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) is invalid"));
            }
        }
        // every thing class needs room for one minimum-size blob in half the image
        let things = (c - self.num_stuff) as f64;
        let min_area = things * std::f64::consts::PI * self.thing_radius.0.min(self.rare_radius.0).powi(2);
        if min_area > (self.height * self.width) as f64 / 2.0 {
            return bad(format!(
                "{} thing classes do not fit a {}x{} layout",
                c - self.num_stuff,
                self.height,
                self.width
            ));
        }
        if !(0.0..=1.0).contains(&self.rare_presence) {
            return bad(format!("rare_presence={} outside [0, 1]", self.rare_presence));
        }
        if !self.palette.is_empty() && self.palette.len() != c {
            return bad(format!("palette has {} colors for {c} classes", self.palette.len()));
        }
        if !(self.noise >= 0.0 && self.target_noise_scale >= 0.0) {
            return bad("noise parameters must be non-negative".into());
        }
        Ok(())
    }

    pub fn is_rare(&self, class: usize) -> bool {
        class >= self.num_classes - self.rare_classes
    }

    fn resolved_palette(&self, seed: u64) -> Vec<[f64; 3]> {
        if !self.palette.is_empty() {
            return self.palette.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x9a1e77e));
        (0..self.num_classes).map(|_| [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]).collect()
    }
}

/// Target image whose labels are kept only for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample {
    pub image: ImageGrid,
    pub hidden_labels: LabelMap,
}

/// One labeled source sample and one target sample with hidden labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source: LabeledImage,
    pub target: TargetSample,
}

fn draw_layout(cfg: &DomainPairConfig, rng: &mut ChaCha8Rng) -> LabelMap {
    let (h, w) = (cfg.height, cfg.width);
    let mut data = vec![0 as ClassId; h * w];

    // band boundaries: stuff class k owns rows [cut[k], cut[k+1]) with a column wobble
    let n = cfg.num_stuff;
    let mut cuts: Vec<f64> = (1..n)
        .map(|k| (k as f64 + rng.gen_range(-0.3..0.3)) * h as f64 / n as f64)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let wobble_amp = rng.gen_range(0.0..(h as f64 / (4.0 * n as f64)));
    let wobble_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for col in 0..w {
        let shift = wobble_amp * (wobble_phase + col as f64 * std::f64::consts::TAU / w as f64).sin();
        for row in 0..h {
            let y = row as f64 + 0.5 - shift;
            let band = cuts.iter().take_while(|&&cut| y >= cut).count();
            data[row * w + col] = band as ClassId;
        }
    }

    // common things first so rare blobs stay visible
    let things: Vec<usize> = (n..cfg.num_classes).collect();
    let (common, rare): (Vec<usize>, Vec<usize>) = things.into_iter().partition(|&c| !cfg.is_rare(c));
    for class in common {
        let count = rng.gen_range(cfg.thing_blobs.0..=cfg.thing_blobs.1);
        for _ in 0..count {
            draw_blob(&mut data, h, w, class, cfg.thing_radius, rng);
        }
    }
    for class in rare {
        if !rng.gen_bool(cfg.rare_presence) {
            continue;
        }
        let count = rng.gen_range(cfg.rare_blobs.0..=cfg.rare_blobs.1);
        for _ in 0..count {
            draw_blob(&mut data, h, w, class, cfg.rare_radius, rng);
        }
    }
    LabelMap::new(h, w, cfg.num_classes, data).expect("layout classes are in range")
}

fn draw_blob(data: &mut [ClassId], h: usize, w: usize, class: usize, radius: (f64, f64), rng: &mut ChaCha8Rng) {
    let ry = rng.gen_range(radius.0..=radius.1);
    let rx = rng.gen_range(radius.0..=radius.1);
    let cy = rng.gen_range(ry..=(h as f64 - ry));
    let cx = rng.gen_range(rx..=(w as f64 - rx));
    let (r0, r1) = ((cy - ry).floor().max(0.0) as usize, ((cy + ry).ceil() as usize).min(h));
    let (c0, c1) = ((cx - rx).floor().max(0.0) as usize, ((cx + rx).ceil() as usize).min(w));
    for row in r0..r1 {
        for col in c0..c1 {
            let dy = (row as f64 + 0.5 - cy) / ry;
            let dx = (col as f64 + 0.5 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                data[row * w + col] = class as ClassId;
            }
        }
    }
}

fn render(
    labels: &LabelMap,
    palette: &[[f64; 3]],
    offset: [f64; 3],
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> ImageGrid {
    let plane = labels.len();
    let mut img = ImageGrid::zeros(3, labels.height(), labels.width());
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("noise is finite and positive"));
    for px in 0..plane {
        let color = palette[usize::from(labels.data()[px])];
        for ch in 0..3 {
            let eps = normal.as_ref().map_or(0.0, |n| n.sample(rng));
            img.set(ch, px, (color[ch] + offset[ch] + eps).clamp(0.0, 1.0));
        }
    }
    img
}

/// Deterministic source/target pair for `seed`.
pub fn generate_pair(cfg: &DomainPairConfig, seed: u64) -> Result<DomainPair> {
    cfg.validate()?;
    let palette = cfg.resolved_palette(seed);
    let mut src_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let src_labels = draw_layout(cfg, &mut src_rng);
    let src_image = render(&src_labels, &palette, [0.0; 3], cfg.noise, &mut src_rng);
    let tgt_labels = draw_layout(cfg, &mut tgt_rng);
    let tgt_image = render(
        &tgt_labels,
        &palette,
        cfg.target_offset,
        cfg.noise * cfg.target_noise_scale,
        &mut tgt_rng,
    );
    Ok(DomainPair {
        source: LabeledImage::new(src_image, src_labels)?,
        target: TargetSample { image: tgt_image, hidden_labels: tgt_labels },
    })
}

/// `count` pairs; pair `i` is `generate_pair(cfg, derive_seed(seed, i))`.
pub fn generate_corpus(cfg: &DomainPairConfig, count: usize, seed: u64) -> Result<Vec<DomainPair>> {
    (0..count).map(|i| generate_pair(cfg, derive_seed(seed, 0x1000 + i as u64))).collect()
}
