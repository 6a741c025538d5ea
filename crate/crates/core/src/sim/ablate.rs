//! Multi-seed ablation grids over mixing strategy, fixed ratio and ECS smoothness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixer::{ClassKind, MixStrategy, Sampler, SelectOrder};
use crate::schedule::ScheduleConfig;
use crate::sim::train::{simulate_with, SimulationConfig, SimulationData};

pub const FIXED_ETAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const TAUS: [f64; 7] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.999];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub base: SimulationConfig,
    pub seeds: Vec<u64>,
    pub fixed_etas: Vec<f64>,
    pub taus: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { base: SimulationConfig::default(), seeds: (0..10).collect(), fixed_etas: FIXED_ETAS.to_vec(), taus: TAUS.to_vec() }
    }
}

/// Which ratio the cell uses: a constant or the base configuration's schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaChoice {
    Fixed(f64),
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// `strategy` for the strategy × ratio grid, `tau` for the smoothness grid.
    pub grid: String,
    pub strategy: MixStrategy,
    pub eta: EtaChoice,
    pub tau: f64,
}

impl Cell {
    pub fn label(&self) -> String {
        let eta = match self.eta {
            EtaChoice::Fixed(e) => format!("eta={e}"),
            EtaChoice::Dynamic => "eta=dynamic".into(),
        };
        format!("{}/{}/{}/tau={}", self.grid, self.strategy, eta, self.tau)
    }

    fn apply(&self, base: &SimulationConfig, seed: u64) -> SimulationConfig {
        let mut cfg = base.clone();
        cfg.train.seed = seed;
        cfg.train.strategy = self.strategy;
        cfg.train.tau = self.tau;
        if let EtaChoice::Fixed(eta) = self.eta {
            cfg.train.schedule = ScheduleConfig::constant(eta, cfg.train.iterations);
        }
        cfg
    }
}

/// The four order × kind IMix strategies at every fixed ratio and the dynamic
/// schedule, plus the ClassMix baseline.
pub fn strategy_grid(cfg: &AblationConfig) -> Vec<Cell> {
    let tau = cfg.base.train.tau;
    let mut cells = Vec::new();
    for order in [SelectOrder::Sstf, SelectOrder::Tssf] {
        for kind in [ClassKind::Well, ClassKind::Under] {
            let strategy = MixStrategy::new(order, kind, Sampler::IMix);
            for eta in cfg.fixed_etas.iter().map(|&e| EtaChoice::Fixed(e)).chain([EtaChoice::Dynamic]) {
                cells.push(Cell { grid: "strategy".into(), strategy, eta, tau });
            }
        }
    }
    cells.push(Cell { grid: "strategy".into(), strategy: MixStrategy::classmix(), eta: EtaChoice::Fixed(0.5), tau });
    cells
}

/// The informed strategy with the dynamic schedule at every smoothness weight.
pub fn smoothness_grid(cfg: &AblationConfig) -> Vec<Cell> {
    cfg.taus
        .iter()
        .map(|&tau| Cell { grid: "tau".into(), strategy: MixStrategy::informed(), eta: EtaChoice::Dynamic, tau })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: Cell,
    /// mIoU per seed, in the order of `AblationConfig::seeds`.
    pub mious: Vec<f64>,
}

impl CellResult {
    pub fn mean(&self) -> f64 {
        self.mious.iter().sum::<f64>() / self.mious.len() as f64
    }

    /// Sample standard deviation; 0 for a single seed.
    pub fn stddev(&self) -> f64 {
        let n = self.mious.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.mious.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Runs every cell on every seed. All cells of a seed share one generated
/// corpus, so per-seed comparisons are paired. Runs execute in parallel and
/// results do not depend on scheduling.
pub fn run_cells(cfg: &AblationConfig, cells: &[Cell]) -> Result<Vec<CellResult>> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    for cell in cells {
        cell.apply(&cfg.base, 0).validate()?;
    }
    let data: Vec<SimulationData> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.base.clone();
            c.train.seed = seed;
            SimulationData::generate(&c)
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.seeds.len()).map(move |s| (c, s))).collect();
    let mious: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, s)| simulate_with(&cells[c].apply(&cfg.base, cfg.seeds[s]), &data[s]).map(|r| r.iou.miou))
        .collect::<Result<_>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, cell)| CellResult { cell: cell.clone(), mious: mious[c * cfg.seeds.len()..(c + 1) * cfg.seeds.len()].to_vec() })
        .collect())
}

pub fn summary_csv(results: &[CellResult]) -> String {
    let mut out = String::from("grid,strategy,eta,tau,seeds,mean_miou,std_miou\n");
    for r in results {
        let eta = match r.cell.eta {
            EtaChoice::Fixed(e) => e.to_string(),
            EtaChoice::Dynamic => "dynamic".into(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.cell.grid,
            r.cell.strategy,
            eta,
            r.cell.tau,
            r.mious.len(),
            r.mean(),
            r.stddev()
        ));
    }
    out
}

pub fn per_seed_csv(results: &[CellResult], seeds: &[u64]) -> String {
    let mut out = String::from("cell,seed,miou\n");
    for r in results {
        for (seed, miou) in seeds.iter().zip(&r.mious) {
            out.push_str(&format!("{},{seed},{miou}\n", r.cell.label()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::data::DomainPairConfig;
    use crate::sim::train::TrainConfig;

    #[test]
    fn grid_shapes() {
        let cfg = AblationConfig::default();
        let s = strategy_grid(&cfg);
        assert_eq!(s.len(), 4 * 6 + 1);
        assert_eq!(s.last().unwrap().strategy, MixStrategy::classmix());
        let t = smoothness_grid(&cfg);
        assert_eq!(t.iter().map(|c| c.tau).collect::<Vec<_>>(), TAUS.to_vec());
    }

    #[test]
    fn stats() {
        let r = CellResult { cell: smoothness_grid(&AblationConfig::default())[0].clone(), mious: vec![0.2, 0.4] };
        assert!((r.mean() - 0.3).abs() < 1e-15);
        assert!((r.stddev() - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tiny_sweep_is_deterministic() {
        let cfg = AblationConfig {
            base: SimulationConfig {
                train: TrainConfig { iterations: 10, ..TrainConfig::default() },
                data: DomainPairConfig { height: 20, width: 20, thing_radius: (2.5, 4.0), rare_radius: (1.5, 2.0), ..DomainPairConfig::default() },
                train_pairs: 3,
                eval_images: 2,
            },
            seeds: vec![1, 2],
            fixed_etas: vec![0.5],
            taus: vec![0.0, 0.9],
        };
        let cells = smoothness_grid(&cfg);
        let a = run_cells(&cfg, &cells).unwrap();
        let b = run_cells(&cfg, &cells).unwrap();
        assert_eq!(summary_csv(&a), summary_csv(&b));
        assert_eq!(a[0].mious.len(), 2);
        assert_eq!(per_seed_csv(&a, &cfg.seeds).lines().count(), 5);
    }

    #[test]
    fn bad_cell_is_config_error() {
        let mut cfg = AblationConfig { seeds: vec![0], ..AblationConfig::default() };
        cfg.taus = vec![1.0];
        assert!(matches!(run_cells(&cfg, &smoothness_grid(&cfg)), Err(Error::Config(_))));
        cfg.seeds.clear();
        assert!(run_cells(&cfg, &[]).is_err());
    }
}
