//! Informed domain adaptation primitives: class-level confidence tracking,
//! ECS-guided class mixing, the Kumaraswamy ratio schedule, and a small
//! synthetic self-training simulator to exercise them end to end.

pub mod ecs;
pub mod error;
pub mod grid;
pub mod io;
pub mod mixer;
pub mod report;
pub mod schedule;
pub mod sim;

pub use ecs::{measure_ecs, Domain, EcsHistory, EcsState, RawEcs};
pub use error::{Error, Result};
pub use grid::{masked_blend, ClassId, ImageGrid, LabelMap, MixMask, ProbMap};
pub use mixer::{class_sample, i_sample, mix, ClassKind, LabeledImage, MixStrategy, MixedSample, Sampler, SelectOrder};
pub use schedule::{eta_at, kcdf, rkcdf, ScheduleConfig};
