use serde::Serialize;

use crate::error::{dim_err, Error, Result};
use crate::grid::{argmax_labels, ImageGrid, LabelMap};
use crate::sim::model::PixelClassifier;

/// Pixel counts indexed `[ground truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::Dimension(format!("{} counts for {num_classes} classes", counts.len())));
        }
        Ok(Self { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn accumulate(&mut self, truth: &LabelMap, pred: &LabelMap) -> Result<()> {
        if truth.shape() != pred.shape() {
            return Err(dim_err("confusion", truth.shape(), pred.shape()));
        }
        if truth.num_classes() != self.num_classes || pred.num_classes() != self.num_classes {
            return Err(Error::Dimension("confusion: class count mismatch".into()));
        }
        for (&t, &p) in truth.data().iter().zip(pred.data()) {
            self.counts[usize::from(t) * self.num_classes + usize::from(p)] += 1;
        }
        Ok(())
    }

    /// Per-class IoU; `None` for classes absent from the ground truth.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let gt: u64 = (0..c).map(|p| self.get(k, p)).sum();
                if gt == 0 {
                    return None;
                }
                let pred: u64 = (0..c).map(|t| self.get(t, k)).sum();
                let union = gt + pred - tp;
                Some(tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn report(&self) -> IouReport {
        let per_class = self.iou();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
        IouReport { per_class, miou }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes present in the ground truth.
    pub miou: f64,
}

impl IouReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,iou\n");
        for (c, v) in self.per_class.iter().enumerate() {
            out.push_str(&format!("{c},{}\n", v.map(|v| v.to_string()).unwrap_or_default()));
        }
        out
    }
}

/// Per-class IoU and mIoU of `model` over a labeled held-out set.
pub fn evaluate(model: &PixelClassifier, held_out: &[(ImageGrid, LabelMap)]) -> Result<IouReport> {
    if held_out.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut cm = ConfusionMatrix::new(model.num_classes());
    for (image, truth) in held_out {
        let pred = argmax_labels(&model.predict_image(image)?);
        cm.accumulate(truth, &pred)?;
    }
    Ok(cm.report())
}
