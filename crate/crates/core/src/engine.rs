//! End-to-end interactive run: initial evolution, the interaction loop with
//! detection, mask updates, preference reset and learning, and the final
//! stretch of generations.

use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detection::{
    detect, inject_noise, refine_pref, update_mask, DetectionConfig, DetectionMethod, DetectionOutcome,
    PreferenceStore,
};
use crate::emoa::{
    evolve_with, initialize, rank_population, Criterion, EvolutionContext, Individual, RankingCriterion,
    VariationConfig,
};
use crate::error::{Error, Result};
use crate::learning::{fit_with, FitConfig, RankModel};
use crate::mdm::{reported_utility, DecisionMaker, RankedSample, UtilityKind, UtilityModel};
use crate::problems::{ActiveMask, EvalCounter, ObjectiveVector, ProblemInstance, ProblemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub utility: UtilityKind,
    /// Overrides the shipped per-problem weights when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub gen_1: usize,
    pub gen_i: usize,
    pub interactions: usize,
    pub n_exa: usize,
    pub population: usize,
    pub total_generations: usize,
    pub seed: u64,
    pub learning: bool,
    pub detection: DetectionConfig,
    pub gamma: f64,
    pub drift_at: usize,
    /// Explicit starting mask; otherwise all objectives with reduction and
    /// `{1, m-1}` without.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_mask: Option<Vec<usize>>,
    pub variation: VariationConfig,
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemSpec::rmnk(4, 1, 0.0, 0),
            utility: UtilityKind::Tchebychef,
            weights: None,
            gen_1: 200,
            gen_i: 30,
            interactions: 9,
            n_exa: 5,
            population: 100,
            total_generations: 500,
            seed: 0,
            learning: true,
            detection: DetectionConfig::default(),
            gamma: 0.0,
            drift_at: 3,
            initial_mask: None,
            variation: VariationConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

impl RunConfig {
    /// Generations after the last interaction.
    pub fn final_stretch(&self) -> Result<usize> {
        let used = self.gen_1 + self.gen_i * self.interactions.saturating_sub(1);
        self.total_generations.checked_sub(used).ok_or_else(|| {
            Error::param(
                "total_generations",
                format!("{} < gen_1 + gen_i * (interactions - 1) = {used}", self.total_generations),
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.final_stretch()?;
        if self.interactions == 0 {
            return Err(Error::param("interactions", "must be >= 1"));
        }
        if self.population < 2 {
            return Err(Error::param("population", "must be >= 2"));
        }
        if self.n_exa < 2 {
            return Err(Error::param("n_exa", "must be >= 2"));
        }
        if self.n_exa > self.population {
            return Err(Error::param(
                "n_exa",
                format!("n_exa={} exceeds population={}", self.n_exa, self.population),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param("gamma", "must lie in [0, 1]"));
        }
        if !self.learning && self.detection.method != DetectionMethod::None {
            return Err(Error::param("detection", "detection requires learning"));
        }
        if self.detection.method == DetectionMethod::None && (self.detection.noise || self.detection.reduction) {
            return Err(Error::param("detection", "noise and reduction require a detection method"));
        }
        self.detection.validate()?;
        self.variation.validate()?;
        self.fit.validate()?;
        self.utility_model()?;
        self.start_mask()?;
        Ok(())
    }

    pub fn utility_model(&self) -> Result<UtilityModel> {
        let model = match &self.weights {
            Some(w) => {
                if w.len() != self.problem.m {
                    return Err(Error::param("weights", format!("expected {} weights", self.problem.m)));
                }
                UtilityModel::new(self.utility, w.clone())?
            }
            None => UtilityModel::default_for(&self.problem, self.utility)?,
        };
        if self.gamma > 0.0 {
            model.with_drift(self.gamma, self.drift_at)
        } else {
            Ok(model)
        }
    }

    pub fn start_mask(&self) -> Result<ActiveMask> {
        let m = self.problem.m;
        match &self.initial_mask {
            Some(d) => ActiveMask::new(d.clone(), m),
            None if self.detection.reduction => Ok(ActiveMask::all(m)),
            None => ActiveMask::new(vec![1, m - 1], m),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Crowding,
    Learned,
    Utility,
}

impl std::fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CriterionKind::Crowding => "crowding",
            CriterionKind::Learned => "learned",
            CriterionKind::Utility => "utility",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub interaction: usize,
    /// Generations executed so far.
    pub generation: usize,
    pub reported_utility: f64,
    pub best_cost: f64,
    pub mask: ActiveMask,
    /// Objectives relevant to the decision maker at this interaction.
    pub dm_relevant: Vec<usize>,
    pub active_relevant: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detected: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detected_relevant: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update_needed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_before: Option<ActiveMask>,
    pub pref_samples: usize,
    pub objective_evaluations: u64,
    pub criterion: CriterionKind,
    #[serde(skip)]
    pub wall_time_ms: u128,
}

const CSV_HEADER: [&str; 16] = [
    "interaction",
    "generation",
    "reported_utility",
    "best_cost",
    "mask",
    "n_active",
    "dm_relevant",
    "active_relevant",
    "detected",
    "detected_relevant",
    "scores",
    "update_needed",
    "mask_before",
    "pref_samples",
    "objective_evaluations",
    "criterion",
];

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|p| p.parse::<T>().map_err(|_| Error::Parse(format!("bad list entry `{p}`"))))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub aborted: bool,
    /// Rank models fitted at each interaction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<RankModel>,
}

impl RunTrace {
    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn utilities(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.reported_utility).collect()
    }

    /// One row per interaction; floats use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let opt = |o: Option<String>| o.unwrap_or_default();
            w.write_record([
                r.interaction.to_string(),
                r.generation.to_string(),
                r.reported_utility.to_string(),
                r.best_cost.to_string(),
                r.mask.to_string(),
                r.mask.len().to_string(),
                join(&r.dm_relevant),
                r.active_relevant.to_string(),
                opt(r.detected.as_deref().map(join)),
                opt(r.detected_relevant.map(|v| v.to_string())),
                opt(r.scores.as_deref().map(join)),
                opt(r.update_needed.map(|v| v.to_string())),
                opt(r.mask_before.as_ref().map(|m| m.to_string())),
                r.pref_samples.to_string(),
                r.objective_evaluations.to_string(),
                r.criterion.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<RunTrace> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| -> Result<f64> {
                get(i).parse().map_err(|_| Error::Parse(format!("bad number `{}`", get(i))))
            };
            let int = |i: usize| -> Result<usize> {
                get(i).parse().map_err(|_| Error::Parse(format!("bad integer `{}`", get(i))))
            };
            let opt_list = |i: usize| -> Result<Option<Vec<usize>>> {
                if get(i).is_empty() {
                    Ok(None)
                } else {
                    split(get(i)).map(Some)
                }
            };
            let mask = ActiveMask::try_from(split::<usize>(get(4))?)?;
            rows.push(TraceRow {
                interaction: int(0)?,
                generation: int(1)?,
                reported_utility: num(2)?,
                best_cost: num(3)?,
                mask,
                dm_relevant: split(get(6))?,
                active_relevant: int(7)?,
                detected: opt_list(8)?,
                detected_relevant: if get(9).is_empty() { None } else { Some(int(9)?) },
                scores: if get(10).is_empty() { None } else { Some(split(get(10))?) },
                update_needed: match get(11) {
                    "" => None,
                    "true" => Some(true),
                    "false" => Some(false),
                    other => return Err(Error::Parse(format!("bad flag `{other}`"))),
                },
                mask_before: match opt_list(12)? {
                    Some(v) => Some(ActiveMask::try_from(v)?),
                    None => None,
                },
                pref_samples: int(13)?,
                objective_evaluations: get(14)
                    .parse()
                    .map_err(|_| Error::Parse("bad evaluation count".into()))?,
                criterion: match get(15) {
                    "crowding" => CriterionKind::Crowding,
                    "learned" => CriterionKind::Learned,
                    "utility" => CriterionKind::Utility,
                    other => return Err(Error::Parse(format!("bad criterion `{other}`"))),
                },
                wall_time_ms: 0,
            });
        }
        Ok(RunTrace {
            rows,
            aborted: false,
            models: Vec::new(),
        })
    }
}

/// Callbacks fired while a run progresses.
pub trait RunObserver {
    fn on_generation(&mut self, _generation: usize, _criterion: CriterionKind, _mask: &ActiveMask) {}
    fn on_row(&mut self, _row: &TraceRow) {}
}

pub struct NoObserver;

impl RunObserver for NoObserver {}

/// Ranks individuals by the decision maker's own utility (no learning).
struct TrueUtility<'a>(&'a UtilityModel);

impl RankingCriterion for TrueUtility<'_> {
    fn cost(&self, ind: &Individual) -> Result<f64> {
        self.0.utility(&ind.objectives)
    }
}

/// Picks `n_exa` distinct individuals uniformly, from the first front when
/// it holds at least `n_exa` members and from the whole population otherwise.
pub fn select_presentation_sample(pop: &[Individual], n_exa: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if pop.len() < n_exa {
        return Err(Error::param(
            "n_exa",
            format!("population of {} smaller than n_exa={n_exa}", pop.len()),
        ));
    }
    let first: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].front_rank == 0).collect();
    let pool: Vec<usize> = if first.len() >= n_exa { first } else { (0..pop.len()).collect() };
    Ok(index::sample(rng, pool.len(), n_exa).into_iter().map(|k| pool[k]).collect())
}

struct Reporter {
    model: UtilityModel,
    initial: Vec<ObjectiveVector>,
}

impl Reporter {
    /// (reported utility, best raw cost, relevant set) under the decision
    /// maker's model at `interaction`. The reference cost is the mean cost
    /// of the initial random population under that same model.
    fn report(&self, pop: &[Individual], interaction: usize) -> Result<(f64, f64, Vec<usize>)> {
        let current = self.model.at_interaction(interaction);
        let mut reference = 0.0;
        for f in &self.initial {
            reference += current.utility(f)?;
        }
        reference /= self.initial.len() as f64;
        let mut best = f64::INFINITY;
        for ind in pop {
            best = best.min(current.utility(&ind.objectives)?);
        }
        Ok((reported_utility(best, reference), best, current.effective_relevant()))
    }
}

fn count_in(set: &[usize], mask: &ActiveMask) -> usize {
    set.iter().filter(|&&i| mask.contains(i)).count()
}

/// Executes one run. A failing decision-maker channel ends the run with a
/// partial trace flagged `aborted`.
pub fn run(
    cfg: &RunConfig,
    instance: &ProblemInstance,
    dm: &mut dyn DecisionMaker,
    observer: &mut dyn RunObserver,
) -> Result<RunTrace> {
    cfg.validate()?;
    if instance.m != cfg.problem.m {
        return Err(Error::DimensionMismatch {
            expected: cfg.problem.m,
            got: instance.m,
        });
    }
    let started = Instant::now();
    let dm_model = cfg.utility_model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut counter = EvalCounter::new();
    let mut mask = cfg.start_mask()?;
    let mut trace = RunTrace::default();
    let mut generation = 0usize;

    let mut pop = initialize(instance, &mask, cfg.population, &mut rng, &mut counter)?;
    let reporter = Reporter {
        model: dm_model.clone(),
        initial: pop.iter().map(|ind| ind.objectives.clone()).collect(),
    };

    pop = run_segment(
        pop,
        cfg.gen_1,
        instance,
        &mask,
        &mut counter,
        &mut rng,
        cfg,
        Criterion::Crowding,
        CriterionKind::Crowding,
        &mut generation,
        observer,
    )?;
    let (u, best, relevant) = reporter.report(&pop, 0)?;
    let row = TraceRow {
        interaction: 0,
        generation,
        reported_utility: u,
        best_cost: best,
        active_relevant: count_in(&relevant, &mask),
        dm_relevant: relevant,
        mask: mask.clone(),
        detected: None,
        detected_relevant: None,
        scores: None,
        update_needed: None,
        mask_before: None,
        pref_samples: 0,
        objective_evaluations: counter.get(),
        criterion: CriterionKind::Crowding,
        wall_time_ms: started.elapsed().as_millis(),
    };
    observer.on_row(&row);
    trace.rows.push(row);

    let mut pref = PreferenceStore::new();
    let final_stretch = cfg.final_stretch()?;

    for interaction in 1..=cfg.interactions {
        let gens = if interaction == cfg.interactions { final_stretch } else { cfg.gen_i };
        let mask_before = mask.clone();
        let mut outcome: Option<DetectionOutcome> = None;

        let learned: RankModel;
        let truth: TrueUtility;
        let drifted;
        let (criterion, kind) = if cfg.learning {
            let picks = select_presentation_sample(&pop, cfg.n_exa, &mut rng)?;
            let candidates: Vec<ObjectiveVector> = picks.iter().map(|&i| pop[i].objectives.clone()).collect();
            let order = match dm.rank(interaction, &candidates) {
                Ok(order) => order,
                Err(_) => {
                    trace.aborted = true;
                    return Ok(trace);
                }
            };
            let mut new_pref = RankedSample::from_order(&candidates, &order, interaction)?;
            if cfg.detection.noise {
                new_pref = inject_noise(&new_pref, cfg.detection.noise_fraction, &mut rng);
            }

            let mut update_needed = false;
            if cfg.detection.method != DetectionMethod::None {
                let o = detect(&cfg.detection, &pref.with(new_pref.clone()), &mask)?;
                update_needed = o.update_needed;
                let next = update_mask(&cfg.detection, &mask, &o);
                if next != mask {
                    for ind in pop.iter_mut() {
                        ind.reevaluate(instance, &next, &mut counter)?;
                    }
                    mask = next;
                }
                outcome = Some(o);
            }
            pref = refine_pref(&pref, &new_pref, update_needed, cfg.detection.reset);

            let mut features: Vec<usize> = match &outcome {
                Some(o) => o.relevant.iter().copied().filter(|&i| mask.contains(i)).collect(),
                None => mask.indices().to_vec(),
            };
            if features.is_empty() {
                features = mask.indices().to_vec();
            }
            learned = fit_with(&pref, &features, &cfg.fit)?;
            trace.models.push(learned.clone());
            (Criterion::Learned(&learned), CriterionKind::Learned)
        } else {
            drifted = dm_model.at_interaction(interaction);
            truth = TrueUtility(&drifted);
            (Criterion::Learned(&truth), CriterionKind::Utility)
        };

        // sorted under the new mask and criterion before evolution resumes
        rank_population(&mut pop, &mask, criterion)?;
        pop = run_segment(
            pop,
            gens,
            instance,
            &mask,
            &mut counter,
            &mut rng,
            cfg,
            criterion,
            kind,
            &mut generation,
            observer,
        )?;

        let (u, best, relevant) = reporter.report(&pop, interaction)?;
        let row = TraceRow {
            interaction,
            generation,
            reported_utility: u,
            best_cost: best,
            active_relevant: count_in(&relevant, &mask),
            detected_relevant: outcome
                .as_ref()
                .map(|o| o.relevant.iter().filter(|i| relevant.contains(i)).count()),
            dm_relevant: relevant,
            mask: mask.clone(),
            detected: outcome.as_ref().map(|o| o.relevant.clone()),
            scores: outcome.as_ref().map(|o| o.scores.clone()),
            update_needed: outcome.as_ref().map(|o| o.update_needed),
            mask_before: outcome.as_ref().map(|_| mask_before),
            pref_samples: pref.len(),
            objective_evaluations: counter.get(),
            criterion: kind,
            wall_time_ms: started.elapsed().as_millis(),
        };
        observer.on_row(&row);
        trace.rows.push(row);
    }
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn run_segment(
    pop: Vec<Individual>,
    generations: usize,
    instance: &ProblemInstance,
    mask: &ActiveMask,
    counter: &mut EvalCounter,
    rng: &mut ChaCha8Rng,
    cfg: &RunConfig,
    criterion: Criterion<'_>,
    kind: CriterionKind,
    generation: &mut usize,
    observer: &mut dyn RunObserver,
) -> Result<Vec<Individual>> {
    let mut ctx = EvolutionContext {
        instance,
        mask,
        counter,
        rng,
        variation: &cfg.variation,
    };
    let start = *generation;
    let out = evolve_with(pop, generations, &mut ctx, criterion, &mut |g, _| {
        observer.on_generation(start + g, kind, mask);
    })?;
    *generation += generations;
    Ok(out)
}

/// Convenience: builds the instance and answers with the machine DM.
pub fn run_machine(cfg: &RunConfig) -> Result<RunTrace> {
    let instance = cfg.problem.build()?;
    let mut dm = crate::mdm::MachineDecisionMaker::new(cfg.utility_model()?);
    run(cfg, &instance, &mut dm, &mut NoObserver)
}
