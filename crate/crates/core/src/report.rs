//! Reliability binning, ECS/IoU correlation, and run manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub ecs_low: f64,
    pub ecs_high: f64,
    /// `None` flags an empty bin.
    pub mean_iou: Option<f64>,
    pub count: usize,
}

/// Equal-width bins over ECS in `[0, 1]`; the last bin is closed on the right.
pub fn reliability(pairs: &[(f64, f64)], num_bins: usize) -> Result<Vec<ReliabilityBin>> {
    if pairs.is_empty() {
        return Err(Error::Config("reliability: no (ECS, IoU) pairs".into()));
    }
    if num_bins < 2 {
        return Err(Error::Config(format!("reliability: num_bins={num_bins} must be at least 2")));
    }
    let mut sums = vec![0.0; num_bins];
    let mut counts = vec![0usize; num_bins];
    for &(ecs, iou) in pairs {
        if !(0.0..=1.0).contains(&ecs) || !(0.0..=1.0).contains(&iou) {
            return Err(Error::Range(format!("reliability: pair ({ecs}, {iou}) outside [0, 1]")));
        }
        let bin = ((ecs * num_bins as f64) as usize).min(num_bins - 1);
        sums[bin] += iou;
        counts[bin] += 1;
    }
    Ok((0..num_bins)
        .map(|b| ReliabilityBin {
            ecs_low: b as f64 / num_bins as f64,
            ecs_high: (b + 1) as f64 / num_bins as f64,
            mean_iou: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
            count: counts[b],
        })
        .collect())
}

pub fn reliability_csv(bins: &[ReliabilityBin]) -> String {
    let mut out = String::from("ecs_low,ecs_high,mean_iou,count\n");
    for b in bins {
        let mean = b.mean_iou.map(|m| m.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", b.ecs_low, b.ecs_high, mean, b.count));
    }
    out
}

/// Pearson correlation coefficient of the pairs.
pub fn correlation(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} pairs; need at least 2", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairs the final smoothed target ECS of each class with its IoU, skipping
/// classes absent from the evaluation ground truth.
pub fn ecs_iou_pairs(final_target_ecs: &[f64], iou: &[Option<f64>]) -> Result<Vec<(f64, f64)>> {
    if final_target_ecs.len() != iou.len() {
        return Err(Error::Dimension(format!(
            "{} ECS values vs {} IoU values",
            final_target_ecs.len(),
            iou.len()
        )));
    }
    Ok(final_target_ecs.iter().zip(iou).filter_map(|(&e, i)| i.map(|i| (e, i))).collect())
}

/// Last row of a `metrics.csv`, split into source and target ECS columns.
pub fn final_ecs_from_metrics(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Data("metrics.csv is empty".into()))?.split(',').collect();
    let last = lines.last().ok_or_else(|| Error::Data("metrics.csv has no rows".into()))?;
    let values: Vec<&str> = last.split(',').collect();
    if values.len() != header.len() {
        return Err(Error::Data(format!("metrics.csv row has {} fields, header {}", values.len(), header.len())));
    }
    let (mut source, mut target) = (Vec::new(), Vec::new());
    for (name, v) in header.iter().zip(&values) {
        let dest = if name.starts_with("ecs_source_") {
            &mut source
        } else if name.starts_with("ecs_target_") {
            &mut target
        } else {
            continue;
        };
        dest.push(v.trim().parse::<f64>().map_err(|_| Error::Data(format!("bad ECS value {v:?} in column {name}")))?);
    }
    if target.is_empty() {
        return Err(Error::Data("metrics.csv has no ecs_target_* columns".into()));
    }
    Ok((source, target))
}

/// Parses a `class,iou` CSV; empty IoU cells mean the class was absent.
pub fn iou_from_csv(text: &str) -> Result<Vec<Option<f64>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "class,iou" => {}
        other => return Err(Error::Data(format!("expected header class,iou, got {other:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let (class, iou) = line.split_once(',').ok_or_else(|| Error::Data(format!("malformed IoU row {line:?}")))?;
        if class.trim().parse::<usize>().ok() != Some(i) {
            return Err(Error::Data(format!("IoU rows out of order at {line:?}")));
        }
        let iou = iou.trim();
        out.push(if iou.is_empty() {
            None
        } else {
            Some(iou.parse::<f64>().map_err(|_| Error::Data(format!("bad IoU {iou:?}")))?)
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run: String,
    pub pairs: Vec<(f64, f64)>,
    pub miou: f64,
    /// `None` when the pairs have zero variance.
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub runs: Vec<RunSummary>,
    pub bins: Vec<ReliabilityBin>,
    pub pooled_correlation: Option<f64>,
}

impl ReportSummary {
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("run,miou,correlation\n");
        for r in &self.runs {
            let corr = r.correlation.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.run, r.miou, corr));
        }
        out
    }
}

fn optional(result: Result<f64>) -> Result<Option<f64>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Builds a summary from `(run name, metrics.csv text, iou.csv text)` triples.
pub fn summarize(runs: &[(String, String, String)], num_bins: usize) -> Result<ReportSummary> {
    if runs.is_empty() {
        return Err(Error::Config("report: no runs given".into()));
    }
    let mut summaries = Vec::with_capacity(runs.len());
    let mut pooled = Vec::new();
    for (name, metrics, iou) in runs {
        let (_, target) = final_ecs_from_metrics(metrics)?;
        let iou = iou_from_csv(iou)?;
        let pairs = ecs_iou_pairs(&target, &iou)?;
        let present: Vec<f64> = iou.iter().flatten().copied().collect();
        let miou = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
        pooled.extend_from_slice(&pairs);
        summaries.push(RunSummary { run: name.clone(), correlation: optional(correlation(&pairs))?, pairs, miou });
    }
    Ok(ReportSummary { bins: reliability(&pooled, num_bins)?, pooled_correlation: optional(correlation(&pooled))?, runs: summaries })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-run provenance written next to every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub config_sha256: String,
    /// Git-style blob digests of every input file, in the order given.
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub blob_sha256: String,
}

/// SHA-256 over a git-style `blob <len>\0` header and the content.
pub fn blob_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        let canonical = serde_json::to_vec(config)?;
        Ok(Self {
            command: command.into(),
            seed,
            config_sha256: sha256_hex(&canonical),
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(InputDigest { path: path.display().to_string(), blob_sha256: blob_digest(&bytes) });
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
