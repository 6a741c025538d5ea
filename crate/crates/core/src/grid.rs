//! Dense row-major grids and the per-pixel reductions shared by every stage of
//! the pipeline: label maps, class-probability maps, images and binary masks.

use crate::error::{dim_err, Error, Result};

/// Class index stored per pixel.
pub type ClassId = u16;

/// Tolerance on the per-pixel probability sum accepted by [`ProbMap::new`].
pub const PROB_SUM_TOL: f64 = 1e-6;

/// H×W grid of class indices in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<ClassId>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<ClassId>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("label map needs at least one class".into()));
        }
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "label data has {} entries, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some((i, &c)) = data.iter().enumerate().find(|(_, &c)| usize::from(c) >= num_classes) {
            return Err(Error::Data(format!(
                "pixel {i} holds class {c}, outside [0, {num_classes})"
            )));
        }
        Ok(Self { height, width, num_classes, data })
    }

    /// Label map with every pixel set to `class`.
    pub fn filled(height: usize, width: usize, num_classes: usize, class: ClassId) -> Result<Self> {
        Self::new(height, width, num_classes, vec![class; height * width])
    }

    /// Builds a map from nested rows; convenient for small hand-written fixtures.
    pub fn from_rows(num_classes: usize, rows: &[&[ClassId]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged label rows".into()));
        }
        Self::new(height, width, num_classes, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[ClassId] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> ClassId {
        self.data[row * self.width + col]
    }

    /// Per-class pixel counts.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &c in &self.data {
            counts[usize::from(c)] += 1;
        }
        counts
    }

    /// Classes with at least one pixel, ascending.
    pub fn present_classes(&self) -> Vec<ClassId> {
        self.histogram()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(c, _)| c as ClassId)
            .collect()
    }

    /// Mask that is 1 exactly where the label belongs to `selected`.
    pub fn indicator(&self, selected: &[ClassId]) -> MixMask {
        let mut hit = vec![false; self.num_classes];
        for &c in selected {
            if let Some(slot) = hit.get_mut(usize::from(c)) {
                *slot = true;
            }
        }
        MixMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&c| hit[usize::from(c)]).collect(),
        }
    }
}

/// C×H×W per-pixel categorical distributions, stored class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    num_classes: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbMap {
    /// Validates that every pixel holds a distribution (non-negative, sums to 1 within
    /// [`PROB_SUM_TOL`]).
    pub fn new(num_classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("probability map needs at least one class".into()));
        }
        let plane = height * width;
        if data.len() != num_classes * plane {
            return Err(Error::Dimension(format!(
                "probability data has {} entries, expected {num_classes}x{height}x{width}",
                data.len()
            )));
        }
        for px in 0..plane {
            let mut sum = 0.0;
            for c in 0..num_classes {
                let p = data[c * plane + px];
                if !(p >= 0.0) {
                    return Err(Error::Data(format!("pixel {px} class {c}: probability {p} < 0")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::Data(format!("pixel {px}: probabilities sum to {sum}")));
            }
        }
        Ok(Self { num_classes, height, width, data })
    }

    /// Applies a max-subtracted softmax over the class axis of class-major logits.
    pub fn from_logits(num_classes: usize, height: usize, width: usize, mut logits: Vec<f64>) -> Result<Self> {
        let plane = height * width;
        if num_classes == 0 || logits.len() != num_classes * plane {
            return Err(Error::Dimension(format!(
                "logit data has {} entries, expected {num_classes}x{height}x{width}",
                logits.len()
            )));
        }
        let mut column = vec![0.0; num_classes];
        for px in 0..plane {
            for c in 0..num_classes {
                column[c] = logits[c * plane + px];
            }
            softmax_in_place(&mut column);
            for c in 0..num_classes {
                logits[c * plane + px] = column[c];
            }
        }
        Ok(Self { num_classes, height, width, data: logits })
    }

    /// One-hot distributions of a label map.
    pub fn one_hot(labels: &LabelMap) -> Self {
        let plane = labels.len();
        let mut data = vec![0.0; labels.num_classes * plane];
        for (px, &c) in labels.data.iter().enumerate() {
            data[usize::from(c) * plane + px] = 1.0;
        }
        Self { num_classes: labels.num_classes, height: labels.height, width: labels.width, data }
    }

    /// Every pixel uniform over the classes.
    pub fn uniform(num_classes: usize, height: usize, width: usize) -> Self {
        let p = 1.0 / num_classes as f64;
        Self { num_classes, height, width, data: vec![p; num_classes * height * width] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Probability of `class` at flat pixel index `px`.
    pub fn prob(&self, class: usize, px: usize) -> f64 {
        self.data[class * self.height * self.width + px]
    }

    /// The class-probability column of one pixel.
    pub fn pixel(&self, px: usize) -> Vec<f64> {
        (0..self.num_classes).map(|c| self.prob(c, px)).collect()
    }
}

/// Numerically stabilized softmax (max subtraction).
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Multi-channel image with intensities in `[0, 1]`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "image data has {} entries, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, channel: usize, px: usize) -> f64 {
        self.data[channel * self.height * self.width + px]
    }

    pub fn set(&mut self, channel: usize, px: usize, value: f64) {
        let plane = self.height * self.width;
        self.data[channel * plane + px] = value;
    }
}

/// H×W binary selection mask; `true` picks the donor pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MixMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl MixMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask data has {} entries, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged mask rows".into()));
        }
        let mut data = Vec::with_capacity(height * width);
        for &v in rows.iter().flat_map(|r| r.iter()) {
            match v {
                0 => data.push(false),
                1 => data.push(true),
                other => return Err(Error::Data(format!("mask value {other} is not 0 or 1"))),
            }
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn complement(&self) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&b| !b).collect() }
    }

    /// Number of donor pixels.
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fraction of pixels taken from the donor.
    pub fn coverage(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.data.len() as f64
        }
    }
}

/// Grids that can be composed pixel-wise under a [`MixMask`].
pub trait Blend: Sized {
    /// Returns `self` where `mask` is 1 and `other` where it is 0.
    fn masked_blend(&self, other: &Self, mask: &MixMask) -> Result<Self>;
}

impl Blend for LabelMap {
    fn masked_blend(&self, other: &Self, mask: &MixMask) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(dim_err("blend labels", self.shape(), other.shape()));
        }
        if self.shape() != mask.shape() {
            return Err(dim_err("blend mask", self.shape(), mask.shape()));
        }
        if self.num_classes != other.num_classes {
            return Err(Error::Dimension(format!(
                "blend labels: {} vs {} classes",
                self.num_classes, other.num_classes
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .zip(&mask.data)
            .map(|((&a, &b), &m)| if m { a } else { b })
            .collect();
        Ok(Self { height: self.height, width: self.width, num_classes: self.num_classes, data })
    }
}

impl Blend for ImageGrid {
    fn masked_blend(&self, other: &Self, mask: &MixMask) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(dim_err("blend images", self.shape(), other.shape()));
        }
        if self.shape() != mask.shape() {
            return Err(dim_err("blend mask", self.shape(), mask.shape()));
        }
        if self.channels != other.channels {
            return Err(Error::Dimension(format!(
                "blend images: {} vs {} channels",
                self.channels, other.channels
            )));
        }
        let plane = self.height * self.width;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .enumerate()
            .map(|(i, (&a, &b))| if mask.data[i % plane] { a } else { b })
            .collect();
        Ok(Self { channels: self.channels, height: self.height, width: self.width, data })
    }
}

/// `a` where `mask` is 1, `b` where it is 0.
pub fn masked_blend<T: Blend>(a: &T, b: &T, mask: &MixMask) -> Result<T> {
    a.masked_blend(b, mask)
}

/// Per-pixel argmax over the class axis; ties go to the lowest class index.
pub fn argmax_labels(p: &ProbMap) -> LabelMap {
    let plane = p.height * p.width;
    let data = (0..plane)
        .map(|px| {
            let mut best = 0;
            let mut best_p = p.data[px];
            for c in 1..p.num_classes {
                let v = p.data[c * plane + px];
                if v > best_p {
                    best = c;
                    best_p = v;
                }
            }
            best as ClassId
        })
        .collect();
    LabelMap { height: p.height, width: p.width, num_classes: p.num_classes, data }
}

/// Per-pixel maximum class probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

pub fn max_confidence(p: &ProbMap) -> ConfidenceMap {
    let plane = p.height * p.width;
    let data = (0..plane)
        .map(|px| (0..p.num_classes).map(|c| p.data[c * plane + px]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    ConfidenceMap { height: p.height, width: p.width, data }
}
