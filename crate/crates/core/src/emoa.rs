//! NSGA-II machinery: non-dominated sorting, crowding distance, binary
//! tournaments, variation, and (μ+λ) survivor selection with a pluggable
//! secondary criterion.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{ActiveMask, EvalCounter, Genome, ObjectiveVector, PartialObjectives, ProblemInstance};

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    /// Full objective vector, only ever read by the decision-maker side
    /// (presentation, detection inputs and reporting). Never charged.
    pub objectives: ObjectiveVector,
    /// Values the optimizer has paid for: exactly the current mask.
    pub active: PartialObjectives,
    pub front_rank: usize,
    /// Crowding distance or learned cost, depending on the criterion in use.
    pub secondary_score: f64,
}

impl Individual {
    pub fn evaluate(
        instance: &ProblemInstance,
        genome: Genome,
        mask: &ActiveMask,
        ctr: &mut EvalCounter,
    ) -> Result<Self> {
        let active = instance.evaluate_active(&genome, mask, ctr)?;
        let objectives = instance.evaluate_full(&genome)?;
        Ok(Individual {
            genome,
            objectives,
            active,
            front_rank: 0,
            secondary_score: 0.0,
        })
    }

    /// Brings `active` in line with `mask`. Objectives already known are
    /// reused; newly activated ones are computed and charged.
    pub fn reevaluate(
        &mut self,
        instance: &ProblemInstance,
        mask: &ActiveMask,
        ctr: &mut EvalCounter,
    ) -> Result<()> {
        if &self.active.mask == mask {
            return Ok(());
        }
        let added = mask.difference(&self.active.mask);
        let fresh = instance.evaluate_subset(&self.genome, &added)?;
        ctr.charge(added.len());
        let values = mask
            .indices()
            .iter()
            .map(|&i| match self.active.get(i) {
                Some(v) => v,
                None => fresh[added.iter().position(|&a| a == i).expect("added index")],
            })
            .collect();
        self.active = PartialObjectives {
            mask: mask.clone(),
            values,
        };
        Ok(())
    }
}

/// `a` dominates `b`: no worse everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Fast non-dominated sorting over raw objective rows. Each returned front
/// lists indices in ascending order.
pub fn nondominated_sort_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Vec<Vec<usize>>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut dom_count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (points[i].as_ref(), points[j].as_ref());
            if dominates(a, b) {
                dominated_by_me[i].push(j);
                dom_count[j] += 1;
            } else if dominates(b, a) {
                dominated_by_me[j].push(i);
                dom_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dom_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by_me[p] {
                dom_count[q] -= 1;
                if dom_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    Ok(fronts)
}

/// Non-dominated sorting of a population on its masked objective values.
pub fn nondominated_sort(pop: &[Individual], mask: &ActiveMask) -> Result<Vec<Vec<usize>>> {
    if let Some(ind) = pop.iter().find(|ind| &ind.active.mask != mask) {
        return Err(Error::InvalidMask(format!(
            "individual evaluated under {} but sorting under {mask}",
            ind.active.mask
        )));
    }
    let rows: Vec<&[f64]> = pop.iter().map(|ind| ind.active.values.as_slice()).collect();
    nondominated_sort_points(&rows)
}

/// Crowding distance of each row of a front. Boundary rows of every
/// objective with non-zero range get `+inf`; zero-range objectives add
/// nothing. Identical rows receive identical scores.
pub fn crowding_distance_points<P: AsRef<[f64]>>(front: &[P]) -> Vec<f64> {
    if front.is_empty() {
        return Vec::new();
    }
    // collapse duplicates so that identical rows share one score
    let mut unique: Vec<&[f64]> = Vec::new();
    let owner: Vec<usize> = front
        .iter()
        .map(|p| {
            let p = p.as_ref();
            match unique.iter().position(|u| *u == p) {
                Some(k) => k,
                None => {
                    unique.push(p);
                    unique.len() - 1
                }
            }
        })
        .collect();

    let u = unique.len();
    let m = unique[0].len();
    let mut dist = vec![0.0; u];
    let mut order: Vec<usize> = (0..u).collect();
    for obj in 0..m {
        order.sort_by(|&a, &b| unique[a][obj].total_cmp(&unique[b][obj]).then(a.cmp(&b)));
        let lo = unique[order[0]][obj];
        let hi = unique[order[u - 1]][obj];
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        dist[order[0]] = f64::INFINITY;
        dist[order[u - 1]] = f64::INFINITY;
        for w in 1..u.saturating_sub(1) {
            let gap = unique[order[w + 1]][obj] - unique[order[w - 1]][obj];
            dist[order[w]] += gap / range;
        }
    }
    owner.into_iter().map(|k| dist[k]).collect()
}

pub fn crowding_distance(front: &[&Individual]) -> Vec<f64> {
    let rows: Vec<&[f64]> = front.iter().map(|ind| ind.active.values.as_slice()).collect();
    crowding_distance_points(&rows)
}

/// Scores an individual; lower is preferred.
pub trait RankingCriterion: Sync {
    fn cost(&self, ind: &Individual) -> Result<f64>;
}

#[derive(Clone, Copy)]
pub enum Criterion<'a> {
    Crowding,
    Learned(&'a dyn RankingCriterion),
}

impl Criterion<'_> {
    pub fn is_crowding(&self) -> bool {
        matches!(self, Criterion::Crowding)
    }

    /// Ordering of two individuals with already assigned rank and score.
    fn compare(&self, a: &Individual, b: &Individual) -> Ordering {
        a.front_rank.cmp(&b.front_rank).then_with(|| match self {
            Criterion::Crowding => b.secondary_score.total_cmp(&a.secondary_score),
            Criterion::Learned(_) => a.secondary_score.total_cmp(&b.secondary_score),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationConfig {
    pub eta_c: f64,
    pub eta_m: f64,
    pub crossover_prob: f64,
    /// Per-gene mutation rate; `None` means `1/n`.
    pub mutation_rate: Option<f64>,
    /// Reject offspring whose genome already exists in the parent
    /// population or the current offspring batch.
    pub eliminate_duplicates: bool,
}

impl Default for VariationConfig {
    fn default() -> Self {
        VariationConfig {
            eta_c: 15.0,
            eta_m: 20.0,
            crossover_prob: 0.9,
            mutation_rate: None,
            eliminate_duplicates: true,
        }
    }
}

impl VariationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_c > 0.0) {
            return Err(Error::param("eta_c", "must be > 0"));
        }
        if !(self.eta_m > 0.0) {
            return Err(Error::param("eta_m", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(Error::param("crossover_prob", "must lie in [0, 1]"));
        }
        if let Some(r) = self.mutation_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::param("mutation_rate", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Everything a generation needs besides the population itself.
pub struct EvolutionContext<'a> {
    pub instance: &'a ProblemInstance,
    pub mask: &'a ActiveMask,
    pub counter: &'a mut EvalCounter,
    pub rng: &'a mut ChaCha8Rng,
    pub variation: &'a VariationConfig,
}

pub fn initialize(
    instance: &ProblemInstance,
    mask: &ActiveMask,
    size: usize,
    rng: &mut ChaCha8Rng,
    ctr: &mut EvalCounter,
) -> Result<Vec<Individual>> {
    if size == 0 {
        return Err(Error::EmptyPopulation);
    }
    (0..size)
        .map(|_| {
            let g = instance.random_genome(rng);
            Individual::evaluate(instance, g, mask, ctr)
        })
        .collect()
}

/// Assigns front ranks and secondary scores, then sorts best-first.
pub fn rank_population(pop: &mut [Individual], mask: &ActiveMask, criterion: Criterion<'_>) -> Result<()> {
    let fronts = nondominated_sort(pop, mask)?;
    for (rank, front) in fronts.iter().enumerate() {
        for &i in front {
            pop[i].front_rank = rank;
        }
        match criterion {
            Criterion::Crowding => {
                let members: Vec<&Individual> = front.iter().map(|&i| &pop[i]).collect();
                let cd = crowding_distance(&members);
                for (&i, d) in front.iter().zip(cd) {
                    pop[i].secondary_score = d;
                }
            }
            Criterion::Learned(model) => {
                for &i in front {
                    pop[i].secondary_score = model.cost(&pop[i])?;
                }
            }
        }
    }
    pop.sort_by(|a, b| criterion.compare(a, b));
    Ok(())
}

/// Runs `generations` of (μ+λ) NSGA-II with λ = μ. `hook` is called after
/// every generation with the generation number (1-based) and survivors.
pub fn evolve_with(
    mut pop: Vec<Individual>,
    generations: usize,
    ctx: &mut EvolutionContext<'_>,
    criterion: Criterion<'_>,
    hook: &mut dyn FnMut(usize, &[Individual]),
) -> Result<Vec<Individual>> {
    if pop.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    if generations == 0 {
        return Ok(pop);
    }
    ctx.variation.validate()?;
    let mu = pop.len();
    rank_population(&mut pop, ctx.mask, criterion)?;
    for gen in 1..=generations {
        let mut offspring = Vec::with_capacity(mu);
        let mut seen: HashSet<GenomeKey> = if ctx.variation.eliminate_duplicates {
            pop.iter().map(|ind| GenomeKey::of(&ind.genome)).collect()
        } else {
            HashSet::new()
        };
        // once the budget is spent, duplicates are admitted so the loop ends
        let mut attempts = DUPLICATE_ATTEMPTS * mu;
        while offspring.len() < mu {
            let a = tournament(&pop, criterion, ctx.rng);
            let b = tournament(&pop, criterion, ctx.rng);
            let (c1, c2) = vary(&pop[a].genome, &pop[b].genome, ctx);
            for child in [c1, c2] {
                if offspring.len() == mu {
                    break;
                }
                if ctx.variation.eliminate_duplicates && attempts > 0 {
                    attempts -= 1;
                    if !seen.insert(GenomeKey::of(&child)) {
                        continue;
                    }
                }
                offspring.push(Individual::evaluate(ctx.instance, child, ctx.mask, ctx.counter)?);
            }
        }
        pop.extend(offspring);
        rank_population(&mut pop, ctx.mask, criterion)?;
        pop.truncate(mu);
        hook(gen, &pop);
    }
    Ok(pop)
}

const DUPLICATE_ATTEMPTS: usize = 20;

#[derive(Hash, PartialEq, Eq)]
enum GenomeKey {
    Real(Vec<u64>),
    Binary(Vec<bool>),
}

impl GenomeKey {
    fn of(g: &Genome) -> Self {
        match g {
            Genome::Real(x) => GenomeKey::Real(x.iter().map(|v| v.to_bits()).collect()),
            Genome::Binary(b) => GenomeKey::Binary(b.clone()),
        }
    }
}

pub fn evolve(
    pop: Vec<Individual>,
    generations: usize,
    ctx: &mut EvolutionContext<'_>,
    criterion: Criterion<'_>,
) -> Result<Vec<Individual>> {
    evolve_with(pop, generations, ctx, criterion, &mut |_, _| {})
}

/// Binary tournament on (front rank, secondary score); exact ties are
/// broken at random.
pub fn tournament(pop: &[Individual], criterion: Criterion<'_>, rng: &mut ChaCha8Rng) -> usize {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    match criterion.compare(&pop[a], &pop[b]) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if rng.random_bool(0.5) {
                a
            } else {
                b
            }
        }
    }
}

fn vary(p1: &Genome, p2: &Genome, ctx: &mut EvolutionContext<'_>) -> (Genome, Genome) {
    let cfg = ctx.variation;
    match (p1, p2) {
        (Genome::Real(x1), Genome::Real(x2)) => {
            let (lo, hi) = ctx.instance.bounds();
            let (mut c1, mut c2) = if ctx.rng.random_bool(cfg.crossover_prob) {
                sbx(x1, x2, lo, hi, cfg.eta_c, ctx.rng)
            } else {
                (x1.clone(), x2.clone())
            };
            let rate = cfg.mutation_rate.unwrap_or(1.0 / x1.len() as f64);
            polynomial_mutation(&mut c1, lo, hi, cfg.eta_m, rate, ctx.rng);
            polynomial_mutation(&mut c2, lo, hi, cfg.eta_m, rate, ctx.rng);
            (Genome::Real(c1), Genome::Real(c2))
        }
        (Genome::Binary(b1), Genome::Binary(b2)) => {
            let (mut c1, mut c2) = (b1.clone(), b2.clone());
            if ctx.rng.random_bool(cfg.crossover_prob) {
                for j in 0..c1.len() {
                    if ctx.rng.random_bool(0.5) {
                        std::mem::swap(&mut c1[j], &mut c2[j]);
                    }
                }
            }
            let rate = cfg.mutation_rate.unwrap_or(1.0 / b1.len() as f64);
            for c in [&mut c1, &mut c2] {
                for bit in c.iter_mut() {
                    if ctx.rng.random_bool(rate) {
                        *bit = !*bit;
                    }
                }
            }
            (Genome::Binary(c1), Genome::Binary(c2))
        }
        _ => unreachable!("population genomes share one encoding"),
    }
}

/// Bounded simulated binary crossover.
fn sbx(x1: &[f64], x2: &[f64], lo: f64, hi: f64, eta: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = x1.to_vec();
    let mut c2 = x2.to_vec();
    for j in 0..x1.len() {
        if !rng.random_bool(0.5) || (x1[j] - x2[j]).abs() <= 1e-14 {
            continue;
        }
        let (y1, y2) = if x1[j] < x2[j] { (x1[j], x2[j]) } else { (x2[j], x1[j]) };
        let u: f64 = rng.random();
        let spread = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let beta_lo = 1.0 + 2.0 * (y1 - lo) / (y2 - y1);
        let beta_hi = 1.0 + 2.0 * (hi - y2) / (y2 - y1);
        let a = (0.5 * ((y1 + y2) - spread(beta_lo) * (y2 - y1))).clamp(lo, hi);
        let b = (0.5 * ((y1 + y2) + spread(beta_hi) * (y2 - y1))).clamp(lo, hi);
        if rng.random_bool(0.5) {
            c1[j] = b;
            c2[j] = a;
        } else {
            c1[j] = a;
            c2[j] = b;
        }
    }
    (c1, c2)
}

/// Bounded polynomial mutation.
fn polynomial_mutation(x: &mut [f64], lo: f64, hi: f64, eta: f64, rate: f64, rng: &mut ChaCha8Rng) {
    let span = hi - lo;
    for v in x.iter_mut() {
        if !rng.random_bool(rate) {
            continue;
        }
        let d1 = (*v - lo) / span;
        let d2 = (hi - *v) / span;
        let u: f64 = rng.random();
        let pow = 1.0 / (eta + 1.0);
        let dq = if u < 0.5 {
            let val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
            val.powf(pow) - 1.0
        } else {
            let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - val.powf(pow)
        };
        *v = (*v + dq * span).clamp(lo, hi);
    }
}
