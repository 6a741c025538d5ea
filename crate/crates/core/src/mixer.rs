//! Cross-domain class-region mixing.
//!
//! The selecting (donor) domain contributes the pixels of a chosen class set; the
//! following domain fills the complement. Classes are chosen either uniformly at
//! random (half of the classes present, the ClassMix rule) or by ranking the
//! donor domain's smoothed ECS ([`i_sample`]).

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ecs::{Domain, EcsState};
use crate::error::{dim_err, Error, Result};
use crate::grid::{masked_blend, ClassId, ImageGrid, LabelMap, MixMask};

/// Which domain provides the guaranteed class selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectOrder {
    /// Source selects, target follows.
    Sstf,
    /// Target selects, source follows.
    Tssf,
}

impl SelectOrder {
    pub fn donor(self) -> Domain {
        match self {
            SelectOrder::Sstf => Domain::Source,
            SelectOrder::Tssf => Domain::Target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    /// Highest ECS first.
    Well,
    /// Lowest ECS first.
    Under,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    ClassMix,
    IMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MixStrategy {
    pub order: SelectOrder,
    pub kind: ClassKind,
    pub sampler: Sampler,
}

impl MixStrategy {
    pub const fn new(order: SelectOrder, kind: ClassKind, sampler: Sampler) -> Self {
        Self { order, kind, sampler }
    }

    /// Source ground-truth regions of under-performing classes.
    pub const fn informed() -> Self {
        Self::new(SelectOrder::Sstf, ClassKind::Under, Sampler::IMix)
    }

    /// Random half of the source classes pasted onto the target.
    pub const fn classmix() -> Self {
        Self::new(SelectOrder::Sstf, ClassKind::Under, Sampler::ClassMix)
    }

    /// All eight order × kind × sampler combinations.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::with_capacity(8);
        for order in [SelectOrder::Sstf, SelectOrder::Tssf] {
            for kind in [ClassKind::Well, ClassKind::Under] {
                for sampler in [Sampler::ClassMix, Sampler::IMix] {
                    out.push(Self::new(order, kind, sampler));
                }
            }
        }
        out
    }
}

impl fmt::Display for MixStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order = match self.order {
            SelectOrder::Sstf => "SSTF",
            SelectOrder::Tssf => "TSSF",
        };
        let kind = match self.kind {
            ClassKind::Well => "W",
            ClassKind::Under => "U",
        };
        match self.sampler {
            Sampler::ClassMix => write!(f, "{order}-ClassMix"),
            Sampler::IMix => write!(f, "{order}-{kind}"),
        }
    }
}

macro_rules! impl_from_str {
    ($ty:ty, $($name:literal => $val:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($val),)+
                    other => Err(Error::Config(format!(concat!("unknown ", stringify!($ty), " `{}`"), other))),
                }
            }
        }
    };
}

impl_from_str!(SelectOrder, "sstf" => SelectOrder::Sstf, "tssf" => SelectOrder::Tssf);
impl_from_str!(ClassKind, "well" => ClassKind::Well, "w" => ClassKind::Well, "under" => ClassKind::Under, "u" => ClassKind::Under);
impl_from_str!(Sampler, "classmix" => Sampler::ClassMix, "imix" => Sampler::IMix);

/// A selected class set and the mask it induces on the donor label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub mask: MixMask,
    /// Ascending class indices.
    pub classes: Vec<ClassId>,
}

/// Image with its (ground-truth or pseudo) label map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageGrid,
    pub labels: LabelMap,
}

impl LabeledImage {
    pub fn new(image: ImageGrid, labels: LabelMap) -> Result<Self> {
        if image.shape() != labels.shape() {
            return Err(dim_err("image vs labels", image.shape(), labels.shape()));
        }
        Ok(Self { image, labels })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub image: ImageGrid,
    pub label: LabelMap,
    pub mask: MixMask,
    pub selected_classes: Vec<ClassId>,
}

/// Picks `floor(P / 2)` distinct classes uniformly from the `P` classes present in
/// `donor_labels`.
pub fn class_sample<R: Rng + ?Sized>(donor_labels: &LabelMap, rng: &mut R) -> Result<Selection> {
    if donor_labels.is_empty() {
        return Err(Error::DegenerateInput("class_sample on an empty label map".into()));
    }
    let present = donor_labels.present_classes();
    let mut classes: Vec<ClassId> = index::sample(rng, present.len(), present.len() / 2)
        .into_iter()
        .map(|i| present[i])
        .collect();
    classes.sort_unstable();
    Ok(Selection { mask: donor_labels.indicator(&classes), classes })
}

/// Number of classes requested for ratio `eta` over `num_classes`: `max(1, round(eta * C))`.
pub fn selection_budget(eta: f64, num_classes: usize) -> usize {
    ((eta * num_classes as f64).round() as usize).max(1)
}

/// Ranks the classes present in `donor_labels` by ECS (descending for
/// [`ClassKind::Well`], ascending for [`ClassKind::Under`], ties to the lower
/// index) and keeps the first `min(k, P)`.
pub fn i_sample(donor_labels: &LabelMap, ecs: &[f64], eta: f64, kind: ClassKind) -> Result<Selection> {
    if ecs.len() != donor_labels.num_classes() {
        return Err(Error::Config(format!(
            "ECS vector has {} entries for {} classes",
            ecs.len(),
            donor_labels.num_classes()
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Range(format!("allocation ratio eta={eta} outside [0, 1]")));
    }
    if let Some(bad) = ecs.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite ECS value {bad}")));
    }
    let mut present = donor_labels.present_classes();
    if present.is_empty() {
        return Err(Error::DegenerateInput("i_sample on a label map with no pixels".into()));
    }
    let k = selection_budget(eta, donor_labels.num_classes());
    present.sort_by(|&a, &b| {
        let (ea, eb) = (ecs[usize::from(a)], ecs[usize::from(b)]);
        let by_score = match kind {
            ClassKind::Well => eb.total_cmp(&ea),
            ClassKind::Under => ea.total_cmp(&eb),
        };
        by_score.then(a.cmp(&b))
    });
    present.truncate(k);
    present.sort_unstable();
    Ok(Selection { mask: donor_labels.indicator(&present), classes: present })
}

/// Composes donor and follower under the mask chosen by `sampler`/`kind`.
/// `ecs` is the donor domain's ECS vector; it is ignored by ClassMix.
pub fn mix_with_ecs<R: Rng + ?Sized>(
    donor: &LabeledImage,
    follower: &LabeledImage,
    sampler: Sampler,
    kind: ClassKind,
    ecs: &[f64],
    eta: f64,
    rng: &mut R,
) -> Result<MixedSample> {
    if donor.labels.num_classes() != follower.labels.num_classes() {
        return Err(Error::Config(format!(
            "donor has {} classes, follower {}",
            donor.labels.num_classes(),
            follower.labels.num_classes()
        )));
    }
    if donor.image.shape() != follower.image.shape() {
        return Err(dim_err("donor vs follower", donor.image.shape(), follower.image.shape()));
    }
    let selection = match sampler {
        Sampler::ClassMix => class_sample(&donor.labels, rng)?,
        Sampler::IMix => i_sample(&donor.labels, ecs, eta, kind)?,
    };
    Ok(MixedSample {
        image: masked_blend(&donor.image, &follower.image, &selection.mask)?,
        label: masked_blend(&donor.labels, &follower.labels, &selection.mask)?,
        mask: selection.mask,
        selected_classes: selection.classes,
    })
}

/// Mixes a source sample (ground truth) with a target sample (pseudo-label). The
/// strategy's order decides which one is the donor and which ECS vector ranks it.
pub fn mix<R: Rng + ?Sized>(
    source: &LabeledImage,
    target: &LabeledImage,
    strategy: MixStrategy,
    ecs_state: &EcsState,
    eta: f64,
    rng: &mut R,
) -> Result<MixedSample> {
    if ecs_state.num_classes() != source.labels.num_classes() {
        return Err(Error::Config(format!(
            "ECS state tracks {} classes, samples have {}",
            ecs_state.num_classes(),
            source.labels.num_classes()
        )));
    }
    let (donor, follower) = match strategy.order {
        SelectOrder::Sstf => (source, target),
        SelectOrder::Tssf => (target, source),
    };
    let ecs = ecs_state.snapshot(strategy.order.donor());
    mix_with_ecs(donor, follower, strategy.sampler, strategy.kind, ecs, eta, rng)
}
