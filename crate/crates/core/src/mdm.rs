//! Machine decision maker: a hidden utility function, its drift, and the
//! rankings it produces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{ObjectiveVector, ProblemKind, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityKind {
    Tchebychef,
    Quadratic,
}

impl std::fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UtilityKind::Tchebychef => "tchebychef",
            UtilityKind::Quadratic => "quadratic",
        })
    }
}

/// Pairwise input mixing with intensity `gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixing {
    pub gamma: f64,
    /// `(relevant, partner)` pairs; every index appears at most once.
    pub pairing: Vec<(usize, usize)>,
}

/// When and how strongly the preferences drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub gamma: f64,
    pub at_interaction: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityModel {
    pub kind: UtilityKind,
    pub weights: Vec<f64>,
    pub ideal: Vec<f64>,
    /// Relevant objectives before any drift (ascending).
    pub relevant: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSchedule>,
    /// Mixing currently in force.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<Mixing>,
}

impl UtilityModel {
    /// Model with zero ideal point; relevant objectives are those with
    /// positive weight.
    pub fn new(kind: UtilityKind, weights: Vec<f64>) -> Result<Self> {
        let m = weights.len();
        let model = UtilityModel {
            kind,
            relevant: (0..m).filter(|&i| weights[i] > 0.0).collect(),
            ideal: vec![0.0; m],
            weights,
            drift: None,
            mixing: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Shipped weights: two relevant objectives, chosen so the preferred
    /// solution lies away from the corners of the front.
    pub fn default_for(problem: &ProblemSpec, kind: UtilityKind) -> Result<Self> {
        let m = problem.m;
        let mut w = vec![0.0; m];
        let (a, b, wa, wb) = match problem.kind {
            ProblemKind::Rmnk => (0, 1, 0.55, 0.45),
            ProblemKind::Dtlz1 => (0, 3, 0.9, 0.1),
            ProblemKind::Dtlz2 => (0, 3, 0.8, 0.2),
            ProblemKind::Dtlz7 => (0, 3, 0.8, 0.2),
        };
        if b >= m {
            return Err(Error::param("m", format!("default weights need m > {b}")));
        }
        w[a] = wa;
        w[b] = wb;
        Self::new(kind, w)
    }

    pub fn with_drift(mut self, gamma: f64, at_interaction: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::param("gamma", "must lie in [0, 1]"));
        }
        default_pairing(&self.relevant, self.m())?;
        self.drift = Some(DriftSchedule { gamma, at_interaction });
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if self.ideal.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.ideal.len(),
            });
        }
        if self.relevant.is_empty() {
            return Err(Error::param("weights", "at least one weight must be positive"));
        }
        for i in 0..m {
            let w = self.weights[i];
            let rel = self.relevant.contains(&i);
            if !w.is_finite() || w < 0.0 || (rel && w <= 0.0) || (!rel && w != 0.0) {
                return Err(Error::param(
                    "weights",
                    format!("weight {i} = {w} inconsistent with relevant set"),
                ));
            }
        }
        Ok(())
    }

    /// Cost of an objective vector; lower is preferred.
    pub fn utility(&self, f: &[f64]) -> Result<f64> {
        let m = self.m();
        if f.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: f.len(),
            });
        }
        let (z, ideal) = match &self.mixing {
            Some(mix) => (mix_inputs(f, mix), mix_inputs(&self.ideal, mix)),
            None => (f.to_vec(), self.ideal.clone()),
        };
        let terms = self.relevant.iter().map(|&i| self.weights[i] * (z[i] - ideal[i]).abs());
        Ok(match self.kind {
            UtilityKind::Tchebychef => terms.fold(0.0, f64::max),
            UtilityKind::Quadratic => terms.map(|t| t * t).sum(),
        })
    }

    /// The model as the decision maker holds it at a given interaction.
    pub fn at_interaction(&self, interaction: usize) -> UtilityModel {
        match &self.drift {
            Some(d) if interaction >= d.at_interaction && self.mixing.is_none() => {
                apply_drift(self, d.gamma).expect("drift validated at construction")
            }
            _ => self.clone(),
        }
    }

    /// Objectives that currently influence the utility.
    pub fn effective_relevant(&self) -> Vec<usize> {
        let mut out: Vec<usize> = match &self.mixing {
            None => self.relevant.clone(),
            Some(mix) if mix.gamma == 0.0 => self.relevant.clone(),
            Some(mix) => {
                let mut set = Vec::new();
                for &c in &self.relevant {
                    match mix.pairing.iter().find(|(r, _)| *r == c) {
                        Some(&(_, p)) => {
                            if mix.gamma < 1.0 {
                                set.push(c);
                            }
                            set.push(p);
                        }
                        None => set.push(c),
                    }
                }
                set
            }
        };
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Pairs each relevant objective with the lowest-index irrelevant objective
/// not yet paired.
pub fn default_pairing(relevant: &[usize], m: usize) -> Result<Vec<(usize, usize)>> {
    let mut free = (0..m).filter(|i| !relevant.contains(i));
    relevant
        .iter()
        .map(|&c| {
            free.next().map(|p| (c, p)).ok_or_else(|| {
                Error::param("pairing", "not enough irrelevant objectives to pair with")
            })
        })
        .collect()
}

fn mix_inputs(z: &[f64], mix: &Mixing) -> Vec<f64> {
    let g = mix.gamma;
    let mut out = z.to_vec();
    for &(c, p) in &mix.pairing {
        out[c] = (1.0 - g) * z[c] + g * z[p];
        out[p] = (1.0 - g) * z[p] + g * z[c];
    }
    out
}

/// Returns a copy of `model` whose utility evaluates on mixed inputs.
pub fn apply_drift(model: &UtilityModel, gamma: f64) -> Result<UtilityModel> {
    apply_drift_with(model, gamma, default_pairing(&model.relevant, model.m())?)
}

pub fn apply_drift_with(model: &UtilityModel, gamma: f64, pairing: Vec<(usize, usize)>) -> Result<UtilityModel> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::param("gamma", format!("gamma={gamma} outside [0, 1]")));
    }
    let mut seen = Vec::new();
    for &(c, p) in &pairing {
        if c == p || c >= model.m() || p >= model.m() || seen.contains(&c) || seen.contains(&p) {
            return Err(Error::param("pairing", format!("pair ({c}, {p}) collides")));
        }
        seen.push(c);
        seen.push(p);
    }
    let mut out = model.clone();
    out.mixing = Some(Mixing { gamma, pairing });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedRecord {
    pub objectives: ObjectiveVector,
    /// 1 = most preferred.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSample {
    pub records: Vec<RankedRecord>,
    pub interaction: usize,
}

impl RankedSample {
    /// Builds a sample from candidates and a best-first ordering of their
    /// indices. The ordering must be a permutation.
    pub fn from_order(candidates: &[ObjectiveVector], order: &[usize], interaction: usize) -> Result<Self> {
        let n = candidates.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if order.len() != n {
            return Err(Error::InvalidRanking(format!(
                "expected {n} entries, got {}",
                order.len()
            )));
        }
        let mut ranks = vec![0usize; n];
        for (pos, &idx) in order.iter().enumerate() {
            if idx >= n {
                return Err(Error::InvalidRanking(format!("index {idx} out of range")));
            }
            if ranks[idx] != 0 {
                return Err(Error::InvalidRanking(format!("index {idx} repeated")));
            }
            ranks[idx] = pos + 1;
        }
        Ok(RankedSample {
            records: candidates
                .iter()
                .zip(ranks)
                .map(|(f, rank)| RankedRecord {
                    objectives: f.clone(),
                    rank,
                })
                .collect(),
            interaction,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.rank).collect()
    }

    pub fn column(&self, objective: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.objectives[objective]).collect()
    }
}

/// Best-first ordering of `sample` under the model as held at `interaction`.
/// Equal costs keep input order.
pub fn preference_order(model: &UtilityModel, sample: &[ObjectiveVector], interaction: usize) -> Result<Vec<usize>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let current = model.at_interaction(interaction);
    let costs = sample
        .iter()
        .map(|f| current.utility(f))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
    Ok(order)
}

pub fn rank(model: &UtilityModel, sample: &[ObjectiveVector], interaction: usize) -> Result<RankedSample> {
    let order = preference_order(model, sample, interaction)?;
    RankedSample::from_order(sample, &order, interaction)
}

/// Answers ranking requests. Implementations may block (a human at a console).
pub trait DecisionMaker: Send {
    /// Candidate indices ordered from most to least preferred.
    fn rank(&mut self, interaction: usize, candidates: &[ObjectiveVector]) -> Result<Vec<usize>>;
}

#[derive(Clone, Debug)]
pub struct MachineDecisionMaker {
    pub model: UtilityModel,
}

impl MachineDecisionMaker {
    pub fn new(model: UtilityModel) -> Self {
        MachineDecisionMaker { model }
    }
}

impl DecisionMaker for MachineDecisionMaker {
    fn rank(&mut self, interaction: usize, candidates: &[ObjectiveVector]) -> Result<Vec<usize>> {
        preference_order(&self.model, candidates, interaction)
    }
}

/// Higher-is-better report value `1 - cost / reference_cost`.
pub fn reported_utility(cost: f64, reference_cost: f64) -> f64 {
    if reference_cost > 0.0 {
        1.0 - cost / reference_cost
    } else {
        0.0
    }
}
