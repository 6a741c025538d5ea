//! Teacher–student self-training with informed mixing.
//!
//! Each iteration runs four stages in order:
//! 1. the teacher takes an EMA step toward the student;
//! 2. the student takes a gradient step on the source cross-entropy;
//! 3. the teacher pseudo-labels the target image, and the raw ECS of both
//!    domains is measured on teacher outputs and folded into the smoothed state;
//! 4. source and target are mixed with the scheduled ratio and the student takes
//!    a gradient step on the mixed cross-entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ecs::{measure_ecs, Domain, EcsHistory, EcsState, RawEcs};
use crate::error::{Error, Result};
use crate::grid::{argmax_labels, ClassId, ImageGrid, LabelMap};
use crate::mixer::{mix, LabeledImage, MixStrategy};
use crate::schedule::{eta_at, ScheduleConfig};
use crate::sim::data::{generate_corpus, DomainPair, DomainPairConfig};
use crate::sim::derive_seed;
use crate::sim::metrics::{evaluate, IouReport};
use crate::sim::model::{extract_features, Features, PixelClassifier, TeacherState, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of iterations `K`; also the horizon of `schedule`.
    pub iterations: usize,
    pub learning_rate: f64,
    /// ECS smoothness weight.
    pub tau: f64,
    /// Teacher EMA momentum.
    pub alpha: f64,
    pub strategy: MixStrategy,
    /// Ratio schedule; its `total_iters` is replaced by `iterations`.
    pub schedule: ScheduleConfig,
    /// Weight of the mixed loss step; 0 turns the loop into source-only training.
    pub mix_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1.0,
            tau: 0.999,
            alpha: 0.99,
            strategy: MixStrategy::informed(),
            schedule: ScheduleConfig::default(),
            mix_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate={} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau={} outside [0, 1)", self.tau)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha={} outside [0, 1)", self.alpha)));
        }
        if !(self.mix_weight >= 0.0 && self.mix_weight.is_finite()) {
            return Err(Error::Config(format!("mix_weight={} must be non-negative", self.mix_weight)));
        }
        self.effective_schedule().validate()
    }

    pub fn effective_schedule(&self) -> ScheduleConfig {
        self.schedule.with_total_iters(self.iterations)
    }
}

/// Training inputs: labeled source images and unlabeled target images, with
/// their features precomputed.
#[derive(Debug, Clone)]
pub struct TrainingData {
    num_classes: usize,
    source: Vec<(LabeledImage, Features)>,
    target: Vec<(ImageGrid, Features)>,
}

impl TrainingData {
    pub fn new(source: Vec<LabeledImage>, target: Vec<ImageGrid>) -> Result<Self> {
        let num_classes = source
            .first()
            .map(|s| s.labels.num_classes())
            .ok_or_else(|| Error::Config("no source samples".into()))?;
        if target.is_empty() {
            return Err(Error::Config("no target samples".into()));
        }
        if source.iter().any(|s| s.labels.num_classes() != num_classes) {
            return Err(Error::Config("source samples disagree on class count".into()));
        }
        let source = source
            .into_iter()
            .map(|s| extract_features(&s.image).map(|f| (s, f)))
            .collect::<Result<_>>()?;
        let target = target
            .into_iter()
            .map(|t| extract_features(&t).map(|f| (t, f)))
            .collect::<Result<_>>()?;
        Ok(Self { num_classes, source, target })
    }

    /// Keeps the source labels and drops the target labels.
    pub fn from_pairs(pairs: &[DomainPair]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.source.clone()).collect(),
            pairs.iter().map(|p| p.target.image.clone()).collect(),
        )
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// One iteration's inputs.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub source: &'a LabeledImage,
    pub source_features: &'a Features,
    pub target_image: &'a ImageGrid,
    pub target_features: &'a Features,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub iteration: usize,
    pub source_loss: f64,
    pub mix_loss: f64,
    pub eta: f64,
    pub raw_source: RawEcs,
    pub raw_target: RawEcs,
    pub ecs_source: Vec<f64>,
    pub ecs_target: Vec<f64>,
    pub selected_classes: Vec<ClassId>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub student: PixelClassifier,
    pub teacher: TeacherState,
    pub ecs: EcsState,
    config: TrainConfig,
    schedule: ScheduleConfig,
    mix_rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: &TrainConfig, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let student = PixelClassifier::zeros(num_classes, FEATURE_DIM);
        Ok(Self {
            teacher: TeacherState::new(&student, config.alpha)?,
            student,
            ecs: EcsState::new(num_classes, config.tau)?,
            config: config.clone(),
            schedule: config.effective_schedule(),
            mix_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x313)),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn train_step(&mut self, batch: Batch<'_>, iter: usize) -> Result<StepMetrics> {
        if iter >= self.config.iterations {
            return Err(Error::Range(format!("iteration {iter} beyond K={}", self.config.iterations)));
        }
        let lr = self.config.learning_rate;

        self.teacher.update(&self.student)?;

        let source = self.student.loss_and_grad(batch.source_features, &batch.source.labels)?;
        self.student.step(&source.grad, lr);

        let target_probs = self.teacher.teacher.predict(batch.target_features)?;
        let pseudo = argmax_labels(&target_probs);
        let raw_target = measure_ecs(&target_probs, &pseudo)?;
        let source_probs = self.teacher.teacher.predict(batch.source_features)?;
        let raw_source = measure_ecs(&source_probs, &batch.source.labels)?;
        self.ecs.update(Domain::Source, &raw_source)?;
        self.ecs.update(Domain::Target, &raw_target)?;

        let eta = eta_at(&self.schedule, iter)?;
        let target = LabeledImage::new(batch.target_image.clone(), pseudo)?;
        let mixed = mix(batch.source, &target, self.config.strategy, &self.ecs, eta, &mut self.mix_rng)?;
        let mixed_features = extract_features(&mixed.image)?;
        let mixed_loss = self.student.loss_and_grad(&mixed_features, &mixed.label)?;
        if self.config.mix_weight > 0.0 {
            self.student.step(&mixed_loss.grad, lr * self.config.mix_weight);
        }

        Ok(StepMetrics {
            iteration: iter,
            source_loss: source.loss,
            mix_loss: mixed_loss.loss,
            eta,
            raw_source,
            raw_target,
            ecs_source: self.ecs.snapshot(Domain::Source).to_vec(),
            ecs_target: self.ecs.snapshot(Domain::Target).to_vec(),
            selected_classes: mixed.selected_classes,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: TrainState,
    pub metrics: Vec<StepMetrics>,
}

impl RunOutput {
    /// `iteration,L_S,L_M,eta,ecs_source_0..,ecs_target_0..` rows.
    pub fn metrics_csv(&self) -> String {
        let c = self.state.ecs.num_classes();
        let mut out = String::from("iteration,L_S,L_M,eta");
        for domain in ["source", "target"] {
            for k in 0..c {
                out.push_str(&format!(",ecs_{domain}_{k}"));
            }
        }
        out.push('\n');
        for m in &self.metrics {
            out.push_str(&format!("{},{},{},{}", m.iteration, m.source_loss, m.mix_loss, m.eta));
            for v in m.ecs_source.iter().chain(&m.ecs_target) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Raw and smoothed ECS per iteration, class and domain.
    pub fn ecs_history(&self) -> EcsHistory {
        let mut history = EcsHistory::default();
        for m in &self.metrics {
            for (domain, raw, smoothed) in [
                (Domain::Source, &m.raw_source, &m.ecs_source),
                (Domain::Target, &m.raw_target, &m.ecs_target),
            ] {
                for (class, &s) in smoothed.iter().enumerate() {
                    history.records.push(crate::ecs::EcsRecord {
                        iteration: m.iteration,
                        domain,
                        class,
                        raw: raw.get(class),
                        smoothed: s,
                    });
                }
            }
        }
        history
    }
}

/// Runs `config.iterations` steps, drawing one source and one target image per
/// iteration uniformly from `data`.
pub fn train(config: &TrainConfig, data: &TrainingData) -> Result<RunOutput> {
    let mut state = TrainState::new(config, data.num_classes())?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xba7c));
    let mut metrics = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let (source, source_features) = &data.source[batch_rng.gen_range(0..data.source.len())];
        let (target_image, target_features) = &data.target[batch_rng.gen_range(0..data.target.len())];
        let batch = Batch { source, source_features, target_image, target_features };
        metrics.push(state.train_step(batch, iter)?);
    }
    Ok(RunOutput { state, metrics })
}

/// Everything `simulate` needs: training hyperparameters, the synthetic domain
/// pair and the corpus sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub train: TrainConfig,
    pub data: DomainPairConfig,
    /// Source/target training pairs generated up front.
    pub train_pairs: usize,
    /// Held-out labeled target images used only for evaluation.
    pub eval_images: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), data: DomainPairConfig::default(), train_pairs: 32, eval_images: 16 }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.validate()?;
        if self.train_pairs == 0 || self.eval_images == 0 {
            return Err(Error::Config("train_pairs and eval_images must be positive".into()));
        }
        Ok(())
    }
}

/// Training corpus and held-out target evaluation set for a simulation seed.
#[derive(Debug, Clone)]
pub struct SimulationData {
    pub corpus: Vec<DomainPair>,
    pub eval_set: Vec<(ImageGrid, LabelMap)>,
}

impl SimulationData {
    pub fn generate(cfg: &SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let corpus = generate_corpus(&cfg.data, cfg.train_pairs, derive_seed(cfg.train.seed, 0xc0a9))?;
        let eval_set = generate_corpus(&cfg.data, cfg.eval_images, derive_seed(cfg.train.seed, 0xe7a1))?
            .into_iter()
            .map(|p| (p.target.image, p.target.hidden_labels))
            .collect();
        Ok(Self { corpus, eval_set })
    }
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub run: RunOutput,
    pub iou: IouReport,
}

/// Trains on `data` and evaluates the student on the held-out target set.
pub fn simulate_with(cfg: &SimulationConfig, data: &SimulationData) -> Result<SimulationResult> {
    cfg.validate()?;
    let training = TrainingData::from_pairs(&data.corpus)?;
    let run = train(&cfg.train, &training)?;
    let iou = evaluate(&run.state.student, &data.eval_set)?;
    Ok(SimulationResult { run, iou })
}

pub fn simulate(cfg: &SimulationConfig) -> Result<SimulationResult> {
    simulate_with(cfg, &SimulationData::generate(cfg)?)
}
