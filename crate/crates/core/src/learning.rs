//! Pairwise linear rank model learned from decision-maker rankings.
//!
//! Each within-interaction pair `(a, b)` with `rank(a) < rank(b)` contributes
//! the hinge term `max(0, margin - (score(b) - score(a)))`. Features are
//! standardized over the training records; the model stores the
//! standardization so it can score raw objective vectors.

use serde::{Deserialize, Serialize};

use crate::detection::PreferenceStore;
use crate::emoa::{Individual, RankingCriterion};
use crate::error::{Error, Result};
use crate::problems::PartialObjectives;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub margin: f64,
    pub l2: f64,
    pub epochs: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            margin: 1.0,
            l2: 1e-3,
            epochs: 500,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::param("margin", "must be > 0"));
        }
        if !(self.l2 > 0.0) {
            return Err(Error::param("l2", "must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub margin: f64,
    pub l2: f64,
    pub epochs_run: usize,
    pub converged: bool,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    pub feature_indices: Vec<usize>,
    /// Weights in standardized feature space.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub meta: TrainingMeta,
}

impl RankModel {
    /// Model that scores every input as 0.
    pub fn zero(feature_indices: Vec<usize>) -> Self {
        let k = feature_indices.len();
        RankModel {
            feature_indices,
            weights: vec![0.0; k],
            bias: 0.0,
            means: vec![0.0; k],
            scales: vec![1.0; k],
            meta: TrainingMeta {
                margin: 0.0,
                l2: 0.0,
                epochs_run: 0,
                converged: false,
                pairs: 0,
            },
        }
    }

    /// Weights expressed on raw objective values (`w_j / scale_j`).
    pub fn destandardized_weights(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.scales).map(|(w, s)| w / s).collect()
    }

    /// Lower is preferred. `f` is a full objective vector.
    pub fn score(&self, f: &[f64]) -> Result<f64> {
        self.score_with(|i| f.get(i).copied())
    }

    pub fn score_partial(&self, f: &PartialObjectives) -> Result<f64> {
        self.score_with(|i| f.get(i))
    }

    fn score_with(&self, lookup: impl Fn(usize) -> Option<f64>) -> Result<f64> {
        let mut s = self.bias;
        for (j, &i) in self.feature_indices.iter().enumerate() {
            let v = lookup(i).ok_or(Error::MissingFeature(i))?;
            s += self.weights[j] * (v - self.means[j]) / self.scales[j];
        }
        Ok(s)
    }

    /// Kendall tau over the within-interaction training pairs of `pref`.
    pub fn training_tau(&self, pref: &PreferenceStore) -> Result<f64> {
        let mut concordant = 0i64;
        let mut discordant = 0i64;
        let mut total = 0i64;
        for sample in pref.samples() {
            let scores = sample
                .records
                .iter()
                .map(|r| self.score(&r.objectives))
                .collect::<Result<Vec<f64>>>()?;
            for a in 0..sample.records.len() {
                for b in 0..sample.records.len() {
                    if sample.records[a].rank < sample.records[b].rank {
                        total += 1;
                        if scores[a] < scores[b] {
                            concordant += 1;
                        } else if scores[a] > scores[b] {
                            discordant += 1;
                        }
                    }
                }
            }
        }
        if total == 0 {
            return Err(Error::EmptyPreferences);
        }
        Ok((concordant - discordant) as f64 / total as f64)
    }
}

impl RankingCriterion for RankModel {
    fn cost(&self, ind: &Individual) -> Result<f64> {
        self.score_partial(&ind.active)
    }
}

pub fn fit(pref: &PreferenceStore, feature_indices: &[usize]) -> Result<RankModel> {
    fit_with(pref, feature_indices, &FitConfig::default())
}

/// Deterministic full-batch subgradient descent on the regularized pairwise
/// hinge loss. The best iterate seen is returned.
pub fn fit_with(pref: &PreferenceStore, feature_indices: &[usize], cfg: &FitConfig) -> Result<RankModel> {
    cfg.validate()?;
    let records: Vec<&[f64]> = pref
        .samples()
        .iter()
        .flat_map(|s| s.records.iter().map(|r| r.objectives.as_slice()))
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyPreferences);
    }
    let m = records[0].len();
    if let Some(&i) = feature_indices.iter().find(|&&i| i >= m) {
        return Err(Error::MissingFeature(i));
    }
    let k = feature_indices.len();
    let n = records.len() as f64;

    let mut means = vec![0.0; k];
    let mut scales = vec![1.0; k];
    let mut informative = false;
    for (j, &i) in feature_indices.iter().enumerate() {
        let mu = records.iter().map(|r| r[i]).sum::<f64>() / n;
        let var = records.iter().map(|r| (r[i] - mu).powi(2)).sum::<f64>() / n;
        means[j] = mu;
        if var > 0.0 {
            scales[j] = var.sqrt();
            informative = true;
        }
    }

    // difference vectors x_b - x_a for every ordered within-interaction pair
    let mut diffs: Vec<Vec<f64>> = Vec::new();
    for sample in pref.samples() {
        let std_rows: Vec<Vec<f64>> = sample
            .records
            .iter()
            .map(|r| {
                feature_indices
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| (r.objectives[i] - means[j]) / scales[j])
                    .collect()
            })
            .collect();
        for a in 0..sample.records.len() {
            for b in 0..sample.records.len() {
                if sample.records[a].rank < sample.records[b].rank {
                    diffs.push(std_rows[b].iter().zip(&std_rows[a]).map(|(xb, xa)| xb - xa).collect());
                }
            }
        }
    }
    if diffs.is_empty() {
        return Err(Error::EmptyPreferences);
    }

    let mut model = RankModel {
        feature_indices: feature_indices.to_vec(),
        weights: vec![0.0; k],
        bias: 0.0,
        means,
        scales,
        meta: TrainingMeta {
            margin: cfg.margin,
            l2: cfg.l2,
            epochs_run: 0,
            converged: false,
            pairs: diffs.len(),
        },
    };
    if !informative || k == 0 {
        return Ok(model);
    }

    let p = diffs.len() as f64;
    let objective = |w: &[f64]| -> (f64, f64) {
        let hinge: f64 = diffs
            .iter()
            .map(|d| (cfg.margin - dot(w, d)).max(0.0))
            .sum::<f64>()
            / p;
        let reg = 0.5 * cfg.l2 * w.iter().map(|v| v * v).sum::<f64>();
        (hinge + reg, hinge)
    };

    // Pegasos schedule: step 1/(l2·t), iterates kept in the ball of radius
    // 1/sqrt(l2) that contains the optimum
    let radius = 1.0 / cfg.l2.sqrt();
    let mut w = vec![0.0; k];
    let mut best = (objective(&w).0, w.clone());
    let mut pull = vec![0.0; k];
    for epoch in 0..cfg.epochs {
        pull.iter_mut().for_each(|v| *v = 0.0);
        let mut violated = 0usize;
        for d in &diffs {
            if cfg.margin - dot(&w, d) > 0.0 {
                violated += 1;
                for (v, di) in pull.iter_mut().zip(d) {
                    *v += di / p;
                }
            }
        }
        model.meta.epochs_run = epoch + 1;
        if violated == 0 {
            model.meta.converged = true;
            best.1 = w.clone();
            break;
        }
        let step = 1.0 / (cfg.l2 * (epoch + 1) as f64);
        let shrink = 1.0 - step * cfg.l2;
        for (wi, v) in w.iter_mut().zip(&pull) {
            *wi = shrink * *wi + step * v;
        }
        let norm = dot(&w, &w).sqrt();
        if norm > radius {
            w.iter_mut().for_each(|v| *v *= radius / norm);
        }
        let (obj, hinge) = objective(&w);
        if obj < best.0 {
            best = (obj, w.clone());
        }
        if hinge == 0.0 {
            model.meta.converged = true;
            best.1 = w.clone();
            model.meta.epochs_run = epoch + 1;
            break;
        }
    }
    model.weights = best.1;
    Ok(model)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdm::{rank, UtilityKind, UtilityModel};
    use crate::problems::ActiveMask;

    fn store_from_costs(rows: Vec<Vec<f64>>, cost_col: usize) -> PreferenceStore {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[a][cost_col].total_cmp(&rows[b][cost_col]));
        let s = crate::mdm::RankedSample::from_order(&rows, &order, 1).unwrap();
        PreferenceStore::from_samples(vec![s])
    }

    #[test]
    fn separable_one_feature_reaches_tau_one() {
        let rows = vec![vec![0.3], vec![0.1], vec![0.5], vec![0.2], vec![0.4]];
        let pref = store_from_costs(rows, 0);
        let model = fit(&pref, &[0]).unwrap();
        assert_eq!(model.training_tau(&pref).unwrap(), 1.0);
        assert!(model.meta.converged);
        assert!(model.weights[0] > 0.0);
    }

    #[test]
    fn duplicated_feature_keeps_order() {
        let rows: Vec<Vec<f64>> = [0.3, 0.1, 0.5, 0.2, 0.4].iter().map(|&v| vec![v, v]).collect();
        let pref = store_from_costs(rows, 0);
        let model = fit(&pref, &[0, 1]).unwrap();
        assert_eq!(model.training_tau(&pref).unwrap(), 1.0);
    }

    #[test]
    fn identical_rows_give_zero_model() {
        let rows = vec![vec![0.4, 0.2]; 4];
        let order = vec![0, 1, 2, 3];
        let s = crate::mdm::RankedSample::from_order(&rows, &order, 1).unwrap();
        let pref = PreferenceStore::from_samples(vec![s]);
        let model = fit(&pref, &[0, 1]).unwrap();
        assert!(!model.meta.converged);
        assert!(model.weights.iter().all(|&w| w == 0.0));
        assert_eq!(model.score(&[9.0, 9.0]).unwrap(), 0.0);
    }

    #[test]
    fn empty_store_is_an_error() {
        assert_eq!(fit(&PreferenceStore::new(), &[0]), Err(Error::EmptyPreferences));
    }

    #[test]
    fn tchebychef_ranking_matches_grid_oracle() {
        let dm = UtilityModel::new(UtilityKind::Tchebychef, vec![0.55, 0.45]).unwrap();
        let rows = vec![
            vec![0.50, 0.60],
            vec![0.10, 0.20],
            vec![0.70, 0.40],
            vec![0.35, 0.25],
            vec![0.20, 0.30],
        ];
        let pref = PreferenceStore::from_samples(vec![rank(&dm, &rows, 1).unwrap()]);

        // oracle: best achievable pairwise agreement over unit-norm linear scorers
        let mut best = -1.0f64;
        for step in 0..3600 {
            let theta = step as f64 / 3600.0 * std::f64::consts::TAU;
            let w = [theta.cos(), theta.sin()];
            let mut agree = 0;
            let mut pairs = 0;
            for a in &pref.samples()[0].records {
                for b in &pref.samples()[0].records {
                    if a.rank < b.rank {
                        pairs += 1;
                        let sa = w[0] * a.objectives[0] + w[1] * a.objectives[1];
                        let sb = w[0] * b.objectives[0] + w[1] * b.objectives[1];
                        if sa < sb {
                            agree += 1;
                        }
                    }
                }
            }
            best = best.max(agree as f64 / pairs as f64);
        }
        let model = fit(&pref, &[0, 1]).unwrap();
        let tau = model.training_tau(&pref).unwrap();
        let agreement = (tau + 1.0) / 2.0;
        assert_eq!(best, 1.0, "oracle finds a separating direction");
        assert!((agreement - best).abs() < 1e-12, "model {agreement} oracle {best}");
        let mut by_score: Vec<usize> = (0..rows.len()).collect();
        by_score.sort_by(|&a, &b| {
            model.score(&rows[a]).unwrap().total_cmp(&model.score(&rows[b]).unwrap())
        });
        let mut by_rank: Vec<usize> = (0..rows.len()).collect();
        by_rank.sort_by_key(|&i| pref.samples()[0].records[i].rank);
        assert_eq!(by_score, by_rank);
    }

    #[test]
    fn score_examples() {
        let mut m = RankModel::zero(vec![0, 2]);
        assert_eq!(m.score(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        m.weights = vec![1.0, 0.0];
        assert_eq!(m.score(&[0.7, 2.0, 3.0]).unwrap(), 0.7);
        let a = m.score(&[0.7, 2.0, 3.0]).unwrap() - m.score(&[0.1, 2.0, 3.0]).unwrap();
        let b = m.score(&[0.7, 9.0, 3.0]).unwrap() - m.score(&[0.1, 9.0, 3.0]).unwrap();
        assert_eq!(a, b);

        let partial = PartialObjectives {
            mask: ActiveMask::new(vec![0, 1], 3).unwrap(),
            values: vec![0.7, 2.0],
        };
        assert_eq!(m.score_partial(&partial), Err(Error::MissingFeature(2)));
    }
}
