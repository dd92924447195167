//! Relevant-objective detection, active-mask updates, noise injection for
//! stuck objectives, and the preference reset policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::fit;
use crate::mdm::RankedSample;
use crate::problems::ActiveMask;
use crate::stats::spearman;

/// Ranked samples accumulated since the last reset, oldest first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceStore {
    samples: Vec<RankedSample>,
}

impl PreferenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<RankedSample>) -> Self {
        PreferenceStore { samples }
    }

    pub fn samples(&self) -> &[RankedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: RankedSample) {
        self.samples.push(sample);
    }

    /// Number of objectives, taken from the first record.
    pub fn m(&self) -> Option<usize> {
        self.samples
            .iter()
            .flat_map(|s| s.records.first())
            .map(|r| r.objectives.len())
            .next()
    }

    /// `self + sample` without modifying `self`.
    pub fn with(&self, sample: RankedSample) -> Self {
        let mut out = self.clone();
        out.push(sample);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionMethod {
    None,
    Univariate,
    Recursive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetPolicy {
    None,
    Fixed,
    Dynamic,
}

impl std::fmt::Display for DetectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DetectionMethod::None => "none",
            DetectionMethod::Univariate => "univariate",
            DetectionMethod::Recursive => "recursive",
        })
    }
}

impl std::fmt::Display for ResetPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ResetPolicy::None => "none",
            ResetPolicy::Fixed => "fixed",
            ResetPolicy::Dynamic => "dynamic",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub method: DetectionMethod,
    pub reduction: bool,
    pub tau: f64,
    pub noise: bool,
    pub noise_fraction: f64,
    pub reset: ResetPolicy,
    pub min_active: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            method: DetectionMethod::None,
            reduction: false,
            tau: 0.5,
            noise: false,
            noise_fraction: 0.01,
            reset: ResetPolicy::None,
            min_active: 2,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::param("tau", "must lie in [0, 1]"));
        }
        if !(self.noise_fraction > 0.0) {
            return Err(Error::param("noise_fraction", "must be > 0"));
        }
        if self.min_active == 0 {
            return Err(Error::param("min_active", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// Detected relevant objectives (ascending).
    pub relevant: Vec<usize>,
    /// Per-objective relevance in [0, 1].
    pub scores: Vec<f64>,
    /// The detected set is not contained in the current mask.
    pub update_needed: bool,
}

/// Tolerance under which a column counts as constant.
pub const CONSTANT_TOL: f64 = 1e-12;

/// Half-width used in place of `fraction * |value|` when the constant is 0.
pub const ZERO_NOISE_SCALE: f64 = 1.490_116_119_384_765_6e-8; // sqrt(f64::EPSILON)

/// Perturbs every objective whose value is the same across all records by
/// uniform noise in `±fraction·|value|`. Other columns are left untouched.
pub fn inject_noise<R: Rng + ?Sized>(sample: &RankedSample, fraction: f64, rng: &mut R) -> RankedSample {
    let mut out = sample.clone();
    let Some(first) = sample.records.first() else {
        return out;
    };
    for obj in 0..first.objectives.len() {
        let v0 = first.objectives[obj];
        let constant = sample
            .records
            .iter()
            .all(|r| (r.objectives[obj] - v0).abs() <= CONSTANT_TOL);
        if !constant {
            continue;
        }
        let half_width = if v0.abs() > CONSTANT_TOL {
            fraction * v0.abs()
        } else {
            fraction * ZERO_NOISE_SCALE
        };
        for rec in out.records.iter_mut() {
            let u: f64 = rng.random_range(-1.0..1.0);
            rec.objectives[obj] += u * half_width;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateScores {
    /// Mean absolute Spearman correlation with the ranks.
    pub raw: Vec<f64>,
    /// `raw / max(raw)`, all zero when every raw score is zero.
    pub normalized: Vec<f64>,
}

pub fn score_univariate(pref: &PreferenceStore) -> Result<UnivariateScores> {
    let m = pref.m().ok_or(Error::EmptyPreferences)?;
    let usable: Vec<&RankedSample> = pref.samples().iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::EmptyPreferences);
    }
    let raw: Vec<f64> = (0..m)
        .map(|obj| {
            usable
                .iter()
                .map(|s| {
                    let ranks: Vec<f64> = s.ranks().iter().map(|&r| r as f64).collect();
                    spearman(&s.column(obj), &ranks).abs()
                })
                .sum::<f64>()
                / usable.len() as f64
        })
        .collect();
    Ok(UnivariateScores {
        normalized: normalize_by_max(&raw),
        raw,
    })
}

fn normalize_by_max(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter().map(|x| x / max).collect()
    } else {
        vec![0.0; v.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfeResult {
    pub selected: Vec<usize>,
    /// Normalized |weight| of each objective in the all-features fit.
    pub importance: Vec<f64>,
}

/// Recursive feature elimination driven by the pairwise rank model.
///
/// Starting from all objectives, the one with the smallest standardized
/// |weight| is dropped while the training-pair Kendall tau stays at or
/// above 0.999 of its current value and more than `min_keep` remain.
/// Among equal weights the highest index goes first.
pub fn rfe_select(pref: &PreferenceStore, min_keep: usize) -> Result<RfeResult> {
    let m = pref.m().ok_or(Error::EmptyPreferences)?;
    let mut current: Vec<usize> = (0..m).collect();
    let mut model = fit(pref, &current)?;
    let mut tau = model.training_tau(pref)?;
    let importance = normalize_by_max(&model.weights.iter().map(|w| w.abs()).collect::<Vec<_>>());

    while current.len() > min_keep.max(1) {
        let drop_pos = (0..current.len())
            .rev()
            .min_by(|&a, &b| model.weights[a].abs().total_cmp(&model.weights[b].abs()))
            .expect("non-empty");
        let mut candidate = current.clone();
        candidate.remove(drop_pos);
        let next = fit(pref, &candidate)?;
        let next_tau = next.training_tau(pref)?;
        if next_tau < 0.999 * tau {
            break;
        }
        current = candidate;
        model = next;
        tau = next_tau;
    }
    Ok(RfeResult {
        selected: current,
        importance,
    })
}

pub fn detect(cfg: &DetectionConfig, pref: &PreferenceStore, current: &ActiveMask) -> Result<DetectionOutcome> {
    let (relevant, scores) = match cfg.method {
        DetectionMethod::None => {
            return Err(Error::param("method", "detection requires a method other than none"));
        }
        DetectionMethod::Univariate => {
            let scores = score_univariate(pref)?.normalized;
            let mut relevant: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= cfg.tau).collect();
            if relevant.is_empty() {
                let top = (0..scores.len())
                    .rev()
                    .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                    .expect("m >= 1");
                relevant.push(top);
            }
            (relevant, scores)
        }
        DetectionMethod::Recursive => {
            let rfe = rfe_select(pref, cfg.min_active)?;
            (rfe.selected, rfe.importance)
        }
    };
    let update_needed = !current.is_superset_of(&relevant);
    Ok(DetectionOutcome {
        relevant,
        scores,
        update_needed,
    })
}

/// New active mask after a detection. With reduction the mask becomes the
/// detected set, padded with the highest-scoring other objectives up to
/// `min_active`; without reduction it is left as is.
pub fn update_mask(cfg: &DetectionConfig, mask: &ActiveMask, outcome: &DetectionOutcome) -> ActiveMask {
    if !cfg.reduction {
        return mask.clone();
    }
    let m = outcome.scores.len();
    let mut chosen = outcome.relevant.clone();
    let mut others: Vec<usize> = (0..m).filter(|i| !chosen.contains(i)).collect();
    others.sort_by(|&a, &b| outcome.scores[b].total_cmp(&outcome.scores[a]).then(a.cmp(&b)));
    let target = cfg.min_active.min(m);
    chosen.extend(others.into_iter().take(target.saturating_sub(chosen.len())));
    ActiveMask::new(chosen, m).expect("indices come from the score vector")
}

/// Combines stored and new preferences according to the reset policy.
pub fn refine_pref(
    pref: &PreferenceStore,
    new_pref: &RankedSample,
    update_needed: bool,
    reset: ResetPolicy,
) -> PreferenceStore {
    match reset {
        ResetPolicy::None => pref.with(new_pref.clone()),
        ResetPolicy::Fixed => PreferenceStore::from_samples(vec![new_pref.clone()]),
        ResetPolicy::Dynamic => {
            if update_needed {
                PreferenceStore::from_samples(vec![new_pref.clone()])
            } else {
                pref.with(new_pref.clone())
            }
        }
    }
}
