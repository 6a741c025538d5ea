//! Per-class, per-domain expected confidence scores (ECS).
//!
//! A raw ECS is the mean max-class probability over the pixels that belong to a
//! class. [`EcsState`] smooths the raw measurements of each domain with an
//! exponential moving average of weight `tau`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::grid::{max_confidence, LabelMap, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Data(format!("unknown domain `{other}`"))),
        }
    }
}

/// One raw measurement per class; `None` marks a class with no member pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEcs(pub Vec<Option<f64>>);

impl RawEcs {
    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, class: usize) -> Option<f64> {
        self.0.get(class).copied().flatten()
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().enumerate().filter_map(|(c, v)| v.map(|v| (c, v)))
    }
}

/// Mean max-confidence of the pixels assigned to each class by `membership`.
pub fn measure_ecs(p: &ProbMap, membership: &LabelMap) -> Result<RawEcs> {
    if p.shape() != membership.shape() {
        return Err(dim_err("measure_ecs", p.shape(), membership.shape()));
    }
    if p.num_classes() != membership.num_classes() {
        return Err(Error::Dimension(format!(
            "measure_ecs: {} probability classes vs {} label classes",
            p.num_classes(),
            membership.num_classes()
        )));
    }
    let conf = max_confidence(p);
    let c = p.num_classes();
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for (&cls, &v) in membership.data().iter().zip(&conf.data) {
        sums[usize::from(cls)] += v;
        counts[usize::from(cls)] += 1;
    }
    Ok(RawEcs(
        sums.into_iter()
            .zip(counts)
            .map(|(s, n)| (n > 0).then(|| s / n as f64))
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DomainTrack {
    smoothed: Vec<f64>,
    seen: Vec<bool>,
}

impl DomainTrack {
    fn new(num_classes: usize) -> Self {
        Self { smoothed: vec![1.0 / num_classes as f64; num_classes], seen: vec![false; num_classes] }
    }
}

/// Smoothed ECS for both domains. Unobserved classes sit at `1/C`; the first
/// observation of a class replaces that initializer, later ones are averaged in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcsState {
    num_classes: usize,
    tau: f64,
    source: DomainTrack,
    target: DomainTrack,
}

impl EcsState {
    pub fn new(num_classes: usize, tau: f64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("ECS state needs at least one class".into()));
        }
        check_tau(tau)?;
        Ok(Self {
            num_classes,
            tau,
            source: DomainTrack::new(num_classes),
            target: DomainTrack::new(num_classes),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn track(&self, domain: Domain) -> &DomainTrack {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    /// `s <- tau * s + (1 - tau) * raw` for each class present in `raw`.
    pub fn update(&mut self, domain: Domain, raw: &RawEcs) -> Result<()> {
        check_tau(self.tau)?;
        if raw.num_classes() != self.num_classes {
            return Err(Error::Dimension(format!(
                "ECS update: {} raw classes vs {} tracked",
                raw.num_classes(),
                self.num_classes
            )));
        }
        let tau = self.tau;
        let track = match domain {
            Domain::Source => &mut self.source,
            Domain::Target => &mut self.target,
        };
        for (c, value) in raw.present() {
            if track.seen[c] {
                track.smoothed[c] = tau * track.smoothed[c] + (1.0 - tau) * value;
            } else {
                track.smoothed[c] = value;
                track.seen[c] = true;
            }
        }
        Ok(())
    }

    /// Value-returning form of [`EcsState::update`].
    pub fn updated(&self, domain: Domain, raw: &RawEcs) -> Result<Self> {
        let mut next = self.clone();
        next.update(domain, raw)?;
        Ok(next)
    }

    /// Current smoothed vector of `domain`.
    pub fn snapshot(&self, domain: Domain) -> &[f64] {
        &self.track(domain).smoothed
    }

    pub fn seen(&self, domain: Domain) -> &[bool] {
        &self.track(domain).seen
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Config(format!("smoothness weight tau={tau} outside [0, 1)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcsRecord {
    pub iteration: usize,
    pub domain: Domain,
    pub class: usize,
    pub raw: Option<f64>,
    pub smoothed: f64,
}

/// Raw and smoothed ECS per iteration, exportable as
/// `iteration,domain,class,raw,smoothed` CSV (absent raw values are left empty).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EcsHistory {
    pub records: Vec<EcsRecord>,
}

impl EcsHistory {
    pub fn record(&mut self, iteration: usize, domain: Domain, raw: &RawEcs, state: &EcsState) {
        let smoothed = state.snapshot(domain);
        for (class, &s) in smoothed.iter().enumerate() {
            self.records.push(EcsRecord { iteration, domain, class, raw: raw.get(class), smoothed: s });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,domain,class,raw,smoothed\n");
        for r in &self.records {
            let raw = r.raw.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", r.iteration, r.domain, r.class, raw, r.smoothed));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Data(format!("ECS history line {}: {what}", lineno + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            records.push(EcsRecord {
                iteration: f[0].parse().map_err(|_| bad("iteration"))?,
                domain: f[1].parse()?,
                class: f[2].parse().map_err(|_| bad("class"))?,
                raw: if f[3].is_empty() { None } else { Some(f[3].parse().map_err(|_| bad("raw"))?) },
                smoothed: f[4].parse().map_err(|_| bad("smoothed"))?,
            });
        }
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_single(c: usize, class: usize, v: f64) -> RawEcs {
        let mut r = vec![None; c];
        r[class] = Some(v);
        RawEcs(r)
    }

    #[test]
    fn measure_examples() {
        let labels = LabelMap::from_rows(4, &[&[0, 1], &[3, 3]]).unwrap();
        let raw = measure_ecs(&ProbMap::uniform(4, 2, 2), &labels).unwrap();
        assert_eq!(raw.0, vec![Some(0.25), Some(0.25), None, Some(0.25)]);

        let raw = measure_ecs(&ProbMap::one_hot(&labels), &labels).unwrap();
        assert_eq!(raw.0, vec![Some(1.0), Some(1.0), None, Some(1.0)]);

        // two class-0 pixels with confidences 0.6 and 0.8
        let p = ProbMap::new(2, 1, 2, vec![0.6, 0.2, 0.4, 0.8]).unwrap();
        let m = LabelMap::from_rows(2, &[&[0, 0]]).unwrap();
        let raw = measure_ecs(&p, &m).unwrap();
        assert!((raw.get(0).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(raw.get(1), None);
    }

    #[test]
    fn measure_shape_mismatch() {
        let labels = LabelMap::from_rows(4, &[&[0, 1]]).unwrap();
        assert!(matches!(measure_ecs(&ProbMap::uniform(4, 2, 1), &labels), Err(Error::Dimension(_))));
        assert!(matches!(measure_ecs(&ProbMap::uniform(3, 1, 2), &labels), Err(Error::Dimension(_))));
    }

    #[test]
    fn update_examples() {
        let mut s = EcsState::new(2, 0.9).unwrap();
        s.update(Domain::Source, &raw_single(2, 0, 0.5)).unwrap();
        s.update(Domain::Source, &raw_single(2, 0, 0.7)).unwrap();
        assert!((s.snapshot(Domain::Source)[0] - 0.52).abs() < 1e-12);
        // absent class carries over; target untouched
        assert_eq!(s.snapshot(Domain::Source)[1], 0.5);
        assert_eq!(s.snapshot(Domain::Target), &[0.5, 0.5]);

        let mut s = EcsState::new(3, 0.0).unwrap();
        s.update(Domain::Target, &raw_single(3, 1, 0.3)).unwrap();
        s.update(Domain::Target, &raw_single(3, 1, 0.6)).unwrap();
        assert_eq!(s.snapshot(Domain::Target)[1], 0.6);

        let mut s = EcsState::new(3, 0.5).unwrap();
        s.update(Domain::Source, &raw_single(3, 2, 0.4)).unwrap();
        s.update(Domain::Source, &RawEcs(vec![Some(0.9), None, None])).unwrap();
        assert_eq!(s.snapshot(Domain::Source)[2], 0.4);
    }

    #[test]
    fn snapshot_examples() {
        let s = EcsState::new(5, 0.0).unwrap();
        assert_eq!(s.snapshot(Domain::Source), &[0.2; 5]);
        let s = s.updated(Domain::Source, &raw_single(5, 2, 0.9)).unwrap();
        assert_eq!(s.snapshot(Domain::Source), &[0.2, 0.2, 0.9, 0.2, 0.2]);
    }

    #[test]
    fn tau_validation() {
        assert!(matches!(EcsState::new(3, 1.0), Err(Error::Config(_))));
        assert!(matches!(EcsState::new(3, -0.1), Err(Error::Config(_))));
        let mut s = EcsState::new(3, 0.5).unwrap();
        assert!(matches!(s.update(Domain::Source, &RawEcs(vec![None; 2])), Err(Error::Dimension(_))));
    }

    #[test]
    fn history_csv_round_trip() {
        let mut s = EcsState::new(2, 0.5).unwrap();
        let mut h = EcsHistory::default();
        let raw = raw_single(2, 1, 0.75);
        s.update(Domain::Target, &raw).unwrap();
        h.record(3, Domain::Target, &raw, &s);
        let csv = h.to_csv();
        assert_eq!(csv, "iteration,domain,class,raw,smoothed\n3,target,0,,0.5\n3,target,1,0.75,0.75\n");
        assert_eq!(EcsHistory::from_csv(&csv).unwrap(), h);
    }

    proptest! {
        #[test]
        fn per_class_independence(
            first in prop::collection::vec(prop::option::of(0.0f64..1.0), 5),
            second in prop::collection::vec(prop::option::of(0.0f64..1.0), 5),
            tau in 0.0f64..0.999,
        ) {
            let mut joint = EcsState::new(5, tau).unwrap();
            joint.update(Domain::Source, &RawEcs(first.clone())).unwrap();
            joint.update(Domain::Source, &RawEcs(second.clone())).unwrap();
            // class-by-class replay gives the same vector in any class order
            let mut split = EcsState::new(5, tau).unwrap();
            for round in [&first, &second] {
                for c in (0..5).rev() {
                    let mut one = vec![None; 5];
                    one[c] = round[c];
                    split.update(Domain::Source, &RawEcs(one)).unwrap();
                }
            }
            prop_assert_eq!(joint.snapshot(Domain::Source), split.snapshot(Domain::Source));
        }

        #[test]
        fn high_tau_moves_slowly(raws in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 2..40)) {
            let mut s = EcsState::new(3, 0.999).unwrap();
            s.update(Domain::Target, &RawEcs(raws[0].iter().map(|&v| Some(v)).collect())).unwrap();
            for r in &raws[1..] {
                let before = s.snapshot(Domain::Target).to_vec();
                s.update(Domain::Target, &RawEcs(r.iter().map(|&v| Some(v)).collect())).unwrap();
                for (a, b) in before.iter().zip(s.snapshot(Domain::Target)) {
                    prop_assert!((a - b).abs() <= 0.001 + 1e-15);
                }
            }
        }

        #[test]
        fn measured_ecs_within_bounds(c in 2usize..6, logits in prop::collection::vec(-4.0f64..4.0, 6 * 9), labels in prop::collection::vec(0u16..6, 9)) {
            let p = ProbMap::from_logits(c, 3, 3, logits[..c * 9].to_vec()).unwrap();
            let m = LabelMap::new(3, 3, c, labels.iter().map(|&l| l % c as u16).collect()).unwrap();
            for (_, v) in measure_ecs(&p, &m).unwrap().present() {
                prop_assert!(v >= 1.0 / c as f64 - 1e-12 && v <= 1.0 + 1e-12);
            }
        }
    }
}
