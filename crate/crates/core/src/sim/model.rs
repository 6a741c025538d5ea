//! Linear softmax pixel classifier over engineered per-pixel features, its
//! cross-entropy loss with analytic gradient, and the EMA teacher.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::grid::{argmax_labels, softmax_in_place, ImageGrid, LabelMap, ProbMap};
use crate::mixer::MixedSample;

/// Features per pixel: RGB, local-mean RGB, normalized row, normalized column.
pub const FEATURE_DIM: usize = 8;

/// Half-width of the box window used for the local-mean features.
pub const LOCAL_RADIUS: usize = 2;

/// Pixel-major feature matrix (`len × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, px: usize) -> &[f64] {
        &self.data[px * self.dim..(px + 1) * self.dim]
    }

    /// Features from raw rows, for tests and external callers.
    pub fn from_raw(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * dim {
            return Err(Error::Dimension(format!(
                "feature data has {} entries, expected {height}x{width}x{dim}",
                data.len()
            )));
        }
        Ok(Self { height, width, dim, data })
    }
}

/// Builds the per-pixel feature matrix of a 3-channel image.
pub fn extract_features(img: &ImageGrid) -> Result<Features> {
    if img.channels() != 3 {
        return Err(Error::Dimension(format!("features need 3 channels, image has {}", img.channels())));
    }
    let (h, w) = img.shape();
    let plane = h * w;
    let mut data = vec![0.0; plane * FEATURE_DIM];
    let row_scale = if h > 1 { 1.0 / (h - 1) as f64 } else { 0.0 };
    let col_scale = if w > 1 { 1.0 / (w - 1) as f64 } else { 0.0 };
    for ch in 0..3 {
        let means = box_mean(&img.data()[ch * plane..(ch + 1) * plane], h, w, LOCAL_RADIUS);
        for px in 0..plane {
            data[px * FEATURE_DIM + ch] = img.get(ch, px);
            data[px * FEATURE_DIM + 3 + ch] = means[px];
        }
    }
    for row in 0..h {
        for col in 0..w {
            let px = row * w + col;
            data[px * FEATURE_DIM + 6] = row as f64 * row_scale;
            data[px * FEATURE_DIM + 7] = col as f64 * col_scale;
        }
    }
    Ok(Features { height: h, width: w, dim: FEATURE_DIM, data })
}

/// Mean over the clipped `(2r+1)²` window around each pixel, via a summed-area table.
fn box_mean(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for row in 0..h {
        let mut acc = 0.0;
        for col in 0..w {
            acc += plane[row * w + col];
            sat[(row + 1) * (w + 1) + col + 1] = sat[row * (w + 1) + col + 1] + acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        let (r0, r1) = (row.saturating_sub(r), (row + r + 1).min(h));
        for col in 0..w {
            let (c0, c1) = (col.saturating_sub(r), (col + r + 1).min(w));
            let sum = sat[r1 * (w + 1) + c1] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0] + sat[r0 * (w + 1) + c0];
            out[row * w + col] = sum / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    out
}

/// `C × (F + 1)` parameters, one row per class: `F` weights then the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelClassifier {
    num_classes: usize,
    feature_dim: usize,
    params: Vec<f64>,
}

impl PixelClassifier {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        Self { num_classes, feature_dim, params: vec![0.0; num_classes * (feature_dim + 1)] }
    }

    pub fn from_params(num_classes: usize, feature_dim: usize, params: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || params.len() != num_classes * (feature_dim + 1) {
            return Err(Error::Dimension(format!(
                "{} parameters for {num_classes} classes x {} inputs",
                params.len(),
                feature_dim + 1
            )));
        }
        Ok(Self { num_classes, feature_dim, params })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check(&self, feats: &Features) -> Result<()> {
        if feats.dim != self.feature_dim {
            return Err(Error::Dimension(format!(
                "model expects {} features, got {}",
                self.feature_dim, feats.dim
            )));
        }
        Ok(())
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let stride = self.feature_dim + 1;
        for (c, slot) in out.iter_mut().enumerate() {
            let row = &self.params[c * stride..(c + 1) * stride];
            *slot = row[self.feature_dim] + row[..self.feature_dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Softmax output for every pixel.
    pub fn predict(&self, feats: &Features) -> Result<ProbMap> {
        self.check(feats)?;
        let plane = feats.len();
        let mut data = vec![0.0; self.num_classes * plane];
        let mut column = vec![0.0; self.num_classes];
        for px in 0..plane {
            self.logits_into(feats.row(px), &mut column);
            softmax_in_place(&mut column);
            for (c, &p) in column.iter().enumerate() {
                data[c * plane + px] = p;
            }
        }
        ProbMap::new(self.num_classes, feats.height, feats.width, data)
    }

    pub fn predict_image(&self, img: &ImageGrid) -> Result<ProbMap> {
        self.predict(&extract_features(img)?)
    }

    /// Mean per-pixel cross-entropy against `labels` and its gradient with respect
    /// to every parameter.
    pub fn loss_and_grad(&self, feats: &Features, labels: &LabelMap) -> Result<LossGrad> {
        self.check(feats)?;
        if (feats.height, feats.width) != labels.shape() {
            return Err(dim_err("loss", (feats.height, feats.width), labels.shape()));
        }
        if labels.num_classes() != self.num_classes {
            return Err(Error::Dimension(format!(
                "model has {} classes, labels {}",
                self.num_classes,
                labels.num_classes()
            )));
        }
        let n = feats.len();
        if n == 0 {
            return Err(Error::DegenerateInput("loss over an empty image".into()));
        }
        let stride = self.feature_dim + 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut column = vec![0.0; self.num_classes];
        for (px, &y) in labels.data().iter().enumerate() {
            let x = feats.row(px);
            self.logits_into(x, &mut column);
            let y = usize::from(y);
            let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + column.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += log_z - column[y];
            for (c, &logit) in column.iter().enumerate() {
                let delta = (logit - log_z).exp() - if c == y { 1.0 } else { 0.0 };
                let row = &mut grad[c * stride..(c + 1) * stride];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += delta * v;
                }
                row[self.feature_dim] += delta;
            }
        }
        let scale = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(LossGrad { loss: loss * scale, grad })
    }

    /// Gradient-descent update `params -= lr * grad`.
    pub fn step(&mut self, grad: &[f64], lr: f64) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Mean per-pixel one-hot cross-entropy of a probability map.
pub fn cross_entropy(p: &ProbMap, labels: &LabelMap) -> Result<f64> {
    if p.shape() != labels.shape() || p.num_classes() != labels.num_classes() {
        return Err(dim_err("cross_entropy", p.shape(), labels.shape()));
    }
    if labels.is_empty() {
        return Err(Error::DegenerateInput("cross-entropy over an empty map".into()));
    }
    let total: f64 = labels
        .data()
        .iter()
        .enumerate()
        .map(|(px, &y)| -p.prob(usize::from(y), px).max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Supervised loss on a labeled source image.
pub fn source_loss(model: &PixelClassifier, image: &ImageGrid, labels: &LabelMap) -> Result<LossGrad> {
    model.loss_and_grad(&extract_features(image)?, labels)
}

/// Loss on a mixed image against its mixed label.
pub fn mixed_loss(model: &PixelClassifier, sample: &MixedSample) -> Result<LossGrad> {
    source_loss(model, &sample.image, &sample.label)
}

/// Teacher argmax labels. No gradient is produced.
pub fn pseudo_label(teacher: &PixelClassifier, image: &ImageGrid) -> Result<LabelMap> {
    Ok(argmax_labels(&teacher.predict_image(image)?))
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    feature_dim: usize,
    num_classes: usize,
    params: usize,
}

const MODEL_FORMAT: &str = "imix-linear-v1";

impl PixelClassifier {
    /// One JSON header line followed by the parameters as little-endian `f64`,
    /// class-major, each row holding `feature_dim` weights then the bias.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            params: self.params.len(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Data("model file has no header line".into()))?;
        let header: ModelHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::Data(format!("model header: {e}")))?;
        if header.format != MODEL_FORMAT {
            return Err(Error::Data(format!("unsupported model format {:?}", header.format)));
        }
        let body = &bytes[newline + 1..];
        if body.len() != header.params * 8 {
            return Err(Error::Data(format!("model body has {} bytes for {} parameters", body.len(), header.params)));
        }
        let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        Self::from_params(header.num_classes, header.feature_dim, params).map_err(|e| Error::Data(e.to_string()))
    }
}

/// EMA copy of the student.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState {
    pub teacher: PixelClassifier,
    pub alpha: f64,
}

impl TeacherState {
    pub fn new(student: &PixelClassifier, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("teacher momentum alpha={alpha} outside [0, 1]")));
        }
        Ok(Self { teacher: student.clone(), alpha })
    }

    /// `teacher <- alpha * teacher + (1 - alpha) * student`, parameter-wise.
    pub fn update(&mut self, student: &PixelClassifier) -> Result<()> {
        if student.params.len() != self.teacher.params.len() {
            return Err(Error::Dimension("teacher and student shapes differ".into()));
        }
        let a = self.alpha;
        if a == 0.0 {
            self.teacher.params.copy_from_slice(&student.params);
            return Ok(());
        }
        for (t, s) in self.teacher.params.iter_mut().zip(&student.params) {
            *t = a * *t + (1.0 - a) * s;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_bytes_round_trip() {
        let params: Vec<f64> = (0..3 * 9).map(|i| (i as f64 * 0.37).sin()).collect();
        let model = PixelClassifier::from_params(3, 8, params).unwrap();
        let bytes = model.to_bytes();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..header_end]).unwrap();
        assert_eq!(header["feature_dim"], 8);
        assert_eq!(header["num_classes"], 3);
        assert_eq!(bytes.len(), header_end + 1 + 27 * 8);
        assert_eq!(PixelClassifier::from_bytes(&bytes).unwrap(), model);
        assert!(matches!(PixelClassifier::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Data(_))));
        assert!(matches!(PixelClassifier::from_bytes(b"junk"), Err(Error::Data(_))));
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, c: usize) -> PixelClassifier {
        let params = (0..c * (FEATURE_DIM + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        PixelClassifier::from_params(c, FEATURE_DIM, params).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageGrid {
        ImageGrid::new(3, h, w, (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        let labels = LabelMap::from_rows(3, &[&[0, 1], &[2, 2]]).unwrap();
        assert_eq!(cross_entropy(&ProbMap::one_hot(&labels), &labels).unwrap(), 0.0);
        let ce = cross_entropy(&ProbMap::uniform(3, 2, 2), &labels).unwrap();
        assert!((ce - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_model_loss_is_log_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 4, 4);
        let labels = LabelMap::filled(4, 4, 5, 3).unwrap();
        let lg = source_loss(&PixelClassifier::zeros(5, FEATURE_DIM), &img, &labels).unwrap();
        assert!((lg.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = random_model(&mut rng, 3);
        let img = random_image(&mut rng, 4, 4);
        let labels = LabelMap::new(4, 4, 3, (0..16).map(|_| rng.gen_range(0..3)).collect()).unwrap();
        let analytic = source_loss(&model, &img, &labels).unwrap();
        let h = 1e-5;
        for i in 0..model.params().len() {
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            let fd = (source_loss(&plus, &img, &labels).unwrap().loss
                - source_loss(&minus, &img, &labels).unwrap().loss)
                / (2.0 * h);
            let g = analytic.grad[i];
            assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()).max(1e-3), "param {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn features_layout() {
        let img = ImageGrid::new(3, 2, 3, (0..18).map(|v| v as f64 / 18.0).collect()).unwrap();
        let f = extract_features(&img).unwrap();
        assert_eq!(f.dim, FEATURE_DIM);
        // pixel (1, 2): last pixel, normalized coordinates (1, 1)
        let last = f.row(5);
        assert_eq!(&last[..3], &[5.0 / 18.0, 11.0 / 18.0, 17.0 / 18.0]);
        assert_eq!(&last[6..], &[1.0, 1.0]);
        // 2x3 image with radius 2: every window covers the whole image
        let mean_r = (0..6).map(|v| v as f64 / 18.0).sum::<f64>() / 6.0;
        assert!((last[3] - mean_r).abs() < 1e-12);
    }

    #[test]
    fn box_mean_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (h, w) = (7, 9);
        let plane: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let fast = box_mean(&plane, h, w, 2);
        for row in 0..h {
            for col in 0..w {
                let mut sum = 0.0;
                let mut n = 0;
                for r in row.saturating_sub(2)..(row + 3).min(h) {
                    for c in col.saturating_sub(2)..(col + 3).min(w) {
                        sum += plane[r * w + c];
                        n += 1;
                    }
                }
                assert!((fast[row * w + col] - sum / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn teacher_ema_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let student = random_model(&mut rng, 4);
        let start = random_model(&mut rng, 4);

        let mut frozen = TeacherState { teacher: start.clone(), alpha: 1.0 };
        frozen.update(&student).unwrap();
        assert_eq!(frozen.teacher, start);

        let mut synced = TeacherState { teacher: start.clone(), alpha: 0.0 };
        synced.update(&student).unwrap();
        assert_eq!(synced.teacher, student);

        let mut half = TeacherState { teacher: start.clone(), alpha: 0.25 };
        half.update(&student).unwrap();
        for ((t, a), b) in half.teacher.params().iter().zip(start.params()).zip(student.params()) {
            assert_eq!(*t, 0.25 * a + 0.75 * b);
        }
        assert!(TeacherState::new(&student, 1.5).is_err());
    }

    #[test]
    fn synced_teacher_pseudo_labels_equal_student_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let student = random_model(&mut rng, 4);
        let mut teacher = TeacherState { teacher: random_model(&mut rng, 4), alpha: 0.0 };
        teacher.update(&student).unwrap();
        let img = random_image(&mut rng, 5, 5);
        let expected = argmax_labels(&student.predict_image(&img).unwrap());
        assert_eq!(pseudo_label(&teacher.teacher, &img).unwrap(), expected);
        assert_eq!(pseudo_label(&teacher.teacher, &img).unwrap(), expected);
    }

    #[test]
    fn loss_shape_errors() {
        let img = ImageGrid::zeros(3, 2, 2);
        let model = PixelClassifier::zeros(3, FEATURE_DIM);
        assert!(source_loss(&model, &img, &LabelMap::filled(2, 3, 3, 0).unwrap()).is_err());
        assert!(source_loss(&model, &img, &LabelMap::filled(2, 2, 4, 0).unwrap()).is_err());
        assert!(source_loss(&PixelClassifier::zeros(3, 5), &img, &LabelMap::filled(2, 2, 3, 0).unwrap()).is_err());
    }
}
