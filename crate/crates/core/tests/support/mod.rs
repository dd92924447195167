//! Module invariants as named checks. Each check drives proptest with a
//! fixed RNG so both the `properties` and `acceptance` targets see the same
//! cases.

#![allow(dead_code)]

use iemoa_core::detection::{
    detect, inject_noise, refine_pref, score_univariate, DetectionConfig, DetectionMethod, PreferenceStore, ResetPolicy,
};
use iemoa_core::emoa::{
    dominates, evolve_with, initialize, nondominated_sort_points, rank_population, Criterion, EvolutionContext,
    Individual, RankingCriterion, VariationConfig,
};
use iemoa_core::engine::{run, run_machine, CriterionKind, RunConfig, RunObserver, RunTrace};
use iemoa_core::harness::{aggregate, execute, ExperimentGrid};
use iemoa_core::learning::fit;
use iemoa_core::mdm::{
    apply_drift, default_pairing, preference_order, rank, MachineDecisionMaker, RankedRecord, RankedSample,
    UtilityKind, UtilityModel,
};
use iemoa_core::problems::{ActiveMask, EvalCounter, Genome, ProblemKind, ProblemSpec};
use iemoa_core::Result;
use proptest::prelude::*;
use proptest::sample::subsequence;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseResult, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn prop<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> TestCaseResult) -> Check
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn ranked(rows: Vec<Vec<f64>>, cost: impl Fn(&[f64]) -> f64, interaction: usize) -> RankedSample {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| cost(&rows[a]).total_cmp(&cost(&rows[b])).then(a.cmp(&b)));
    RankedSample::from_order(&rows, &order, interaction).unwrap()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect()
}

fn problem_spec() -> impl Strategy<Value = ProblemSpec> {
    prop_oneof![
        (2usize..6).prop_map(|m| ProblemSpec::dtlz(ProblemKind::Dtlz1, m)),
        (2usize..6).prop_map(|m| ProblemSpec::dtlz(ProblemKind::Dtlz2, m)),
        (2usize..6).prop_map(|m| ProblemSpec::dtlz(ProblemKind::Dtlz7, m)),
        (2usize..6, 0usize..3, 0u64..50).prop_map(|(m, k, s)| ProblemSpec::rmnk(m, k, 0.0, s)),
        (2usize..6, 0u64..50).prop_map(|(m, s)| ProblemSpec::rmnk(m, 1, 0.9, s)),
    ]
}

fn vectors(m: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, m), n)
}

// ---------- problems ----------

pub fn active_evaluation_matches_full_vector() -> Check {
    prop(64, (problem_spec(), any::<u64>(), any::<u64>()), |(spec, seed, pick)| {
        let inst = spec.build().unwrap();
        let g = inst.random_genome(&mut ChaCha8Rng::seed_from_u64(seed));
        let full = inst.evaluate_full(&g).unwrap();
        let idx: Vec<usize> = (0..inst.m).filter(|i| (pick >> i) & 1 == 1).collect();
        let mask = if idx.is_empty() { ActiveMask::all(inst.m) } else { ActiveMask::new(idx, inst.m).unwrap() };
        let mut ctr = EvalCounter::new();
        let part = inst.evaluate_active(&g, &mask, &mut ctr).unwrap();
        prop_assert_eq!(ctr.get(), mask.len() as u64);
        for (k, &i) in mask.indices().iter().enumerate() {
            prop_assert_eq!(part.values[k], full[i]);
        }
        Ok(())
    })
}

pub fn dtlz1_linear_front_at_half() -> Check {
    prop(64, (2usize..8, any::<u64>()), |(m, seed)| {
        let inst = ProblemSpec::dtlz(ProblemKind::Dtlz1, m).build().unwrap();
        let Genome::Real(mut x) = inst.random_genome(&mut ChaCha8Rng::seed_from_u64(seed)) else {
            unreachable!()
        };
        for v in x.iter_mut().skip(m - 1) {
            *v = 0.5;
        }
        let f = inst.evaluate_full(&Genome::Real(x)).unwrap();
        prop_assert!((f.iter().sum::<f64>() - 0.5).abs() < 1e-12);
        Ok(())
    })
}

pub fn dtlz2_radius_at_least_one() -> Check {
    prop(64, (2usize..8, any::<u64>()), |(m, seed)| {
        let inst = ProblemSpec::dtlz(ProblemKind::Dtlz2, m).build().unwrap();
        let f = inst.evaluate_full(&inst.random_genome(&mut ChaCha8Rng::seed_from_u64(seed))).unwrap();
        prop_assert!(f.iter().map(|v| v * v).sum::<f64>() >= 1.0 - 1e-12);
        Ok(())
    })
}

pub fn rmnk_objectives_in_unit_interval() -> Check {
    prop(64, (2usize..6, 0usize..4, 0.0f64..0.95, any::<u64>()), |(m, k, rho, seed)| {
        let inst = ProblemSpec::rmnk(m, k, rho, seed % 1000).build().unwrap();
        let g = inst.random_genome(&mut ChaCha8Rng::seed_from_u64(seed));
        for v in inst.evaluate_full(&g).unwrap() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        Ok(())
    })
}

// ---------- emoa ----------

/// Peels fronts by checking every pair.
pub fn naive_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| dominates(&points[j], &points[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

pub fn same_partition(a: &[Vec<usize>], b: &[Vec<usize>]) -> bool {
    let norm = |f: &[Vec<usize>]| -> Vec<Vec<usize>> {
        f.iter()
            .map(|x| {
                let mut x = x.clone();
                x.sort_unstable();
                x
            })
            .collect()
    };
    norm(a) == norm(b)
}

fn grid_points(max_m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    // a coarse grid produces plenty of ties and shared coordinates
    (2usize..=max_m).prop_flat_map(|m| prop::collection::vec(prop::collection::vec((0u8..6).prop_map(f64::from), m), 1..40))
}

pub fn sort_matches_naive_oracle() -> Check {
    prop(128, grid_points(5), |pts| {
        prop_assert!(same_partition(&nondominated_sort_points(&pts).unwrap(), &naive_fronts(&pts)));
        Ok(())
    })
}

pub fn sort_ignores_monotone_column_transform() -> Check {
    prop(128, (grid_points(4), 0usize..4, 0u8..3), |(pts, col, kind)| {
        let col = col % pts[0].len();
        let mut moved = pts.clone();
        for p in moved.iter_mut() {
            p[col] = match kind {
                0 => p[col].exp(),
                1 => 3.0 * p[col] - 7.0,
                _ => p[col].powi(3) + p[col],
            };
        }
        prop_assert_eq!(nondominated_sort_points(&pts).unwrap(), nondominated_sort_points(&moved).unwrap());
        Ok(())
    })
}

struct Linear(Vec<f64>);

impl RankingCriterion for Linear {
    fn cost(&self, ind: &Individual) -> Result<f64> {
        Ok(ind.objectives.iter().zip(&self.0).map(|(f, w)| f * w).sum())
    }
}

/// Inside each front, survivors follow ascending cost of an injected model.
pub fn learned_criterion_orders_fronts_by_cost() -> Check {
    prop(64, (any::<u64>(), prop::collection::vec(-1.0f64..1.0, 3)), |(seed, w)| {
        let inst = ProblemSpec::dtlz(ProblemKind::Dtlz2, 3).build().unwrap();
        let mask = ActiveMask::all(3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pop = initialize(&inst, &mask, 30, &mut rng, &mut EvalCounter::new()).unwrap();
        let model = Linear(w);
        rank_population(&mut pop, &mask, Criterion::Learned(&model)).unwrap();
        for pair in pop.windows(2) {
            prop_assert!(pair[0].front_rank <= pair[1].front_rank);
            if pair[0].front_rank == pair[1].front_rank {
                prop_assert!(model.cost(&pair[0]).unwrap() <= model.cost(&pair[1]).unwrap());
            }
        }
        Ok(())
    })
}

fn best_never_worsens<K: PartialOrd + Clone>(
    spec: &ProblemSpec,
    seed: u64,
    criterion: Criterion<'_>,
    key: impl Fn(&[Individual]) -> K,
) -> bool {
    let inst = spec.build().unwrap();
    let mask = ActiveMask::all(inst.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctr = EvalCounter::new();
    let pop = initialize(&inst, &mask, 20, &mut rng, &mut ctr).unwrap();
    let mut best = key(&pop);
    let variation = VariationConfig::default();
    let mut ctx = EvolutionContext {
        instance: &inst,
        mask: &mask,
        counter: &mut ctr,
        rng: &mut rng,
        variation: &variation,
    };
    let mut ok = true;
    evolve_with(pop, 30, &mut ctx, criterion, &mut |_, p| {
        let b = key(p);
        ok &= b <= best;
        best = b;
    })
    .unwrap();
    ok
}

/// The minimum of a positive weighted sum is non-dominated and first in its
/// front, so truncation never loses it. Under crowding the lexicographic
/// minimum is a boundary point with infinite distance.
pub fn elitism() -> Check {
    prop(24, (problem_spec(), any::<u64>(), prop::collection::vec(0.01f64..1.0, 6)), |(spec, seed, raw)| {
        let model = Linear(raw[..spec.m].to_vec());
        let ok = best_never_worsens(&spec, seed, Criterion::Learned(&model), |p| {
            p.iter().map(|i| model.cost(i).unwrap()).fold(f64::INFINITY, f64::min)
        });
        prop_assert!(ok, "weighted-sum best worsened");
        Ok(())
    })?;
    prop(24, (2usize..5, any::<u64>(), 0usize..5), |(m, seed, obj)| {
        let obj = obj % m;
        let spec = ProblemSpec::dtlz(ProblemKind::Dtlz2, m);
        let ok = best_never_worsens(&spec, seed, Criterion::Crowding, |p| {
            p.iter()
                .map(|i| {
                    let mut k = vec![i.objectives[obj]];
                    k.extend(i.objectives.iter().enumerate().filter(|(j, _)| *j != obj).map(|(_, v)| *v));
                    k
                })
                .min_by(|a, b| a.partial_cmp(b).unwrap())
                .unwrap()
        });
        prop_assert!(ok, "lexicographic best worsened");
        Ok(())
    })
}

// ---------- mdm ----------

fn utility_model() -> impl Strategy<Value = UtilityModel> {
    (4usize..8, any::<bool>(), prop::collection::vec(0.05f64..1.0, 8), any::<prop::sample::Index>(), any::<prop::sample::Index>())
        .prop_map(|(m, quad, raw, i, j)| {
            let a = i.index(m);
            let b = (a + 1 + j.index(m - 1)) % m;
            let w = (0..m).map(|k| if k == a || k == b { raw[k] } else { 0.0 }).collect();
            let kind = if quad { UtilityKind::Quadratic } else { UtilityKind::Tchebychef };
            UtilityModel::new(kind, w).unwrap()
        })
}

fn model_and_rows(n: usize) -> impl Strategy<Value = (UtilityModel, Vec<Vec<f64>>)> {
    utility_model().prop_flat_map(move |u| {
        let m = u.m();
        (Just(u), vectors(m, n))
    })
}

pub fn ranking_ignores_increasing_transform() -> Check {
    prop(128, model_and_rows(6), |(model, rows)| {
        let order = preference_order(&model, &rows, 0).unwrap();
        let t = |f: &[f64]| (5.0 * model.utility(f).unwrap()).exp() - 2.0;
        let mut by_t: Vec<usize> = (0..rows.len()).collect();
        by_t.sort_by(|&a, &b| t(&rows[a]).total_cmp(&t(&rows[b])).then(a.cmp(&b)));
        prop_assert_eq!(order, by_t);
        Ok(())
    })
}

pub fn utility_nonnegative_zero_only_at_ideal() -> Check {
    prop(128, model_and_rows(4), |(model, rows)| {
        for f in &rows {
            let u = model.utility(f).unwrap();
            prop_assert!(u >= 0.0);
            let vanish = model.relevant.iter().all(|&i| f[i] == model.ideal[i]);
            prop_assert_eq!(u == 0.0, vanish);
        }
        let mut at_ideal = rows[0].clone();
        for &i in &model.relevant {
            at_ideal[i] = model.ideal[i];
        }
        prop_assert_eq!(model.utility(&at_ideal).unwrap(), 0.0);
        Ok(())
    })
}

pub fn zero_drift_is_identity() -> Check {
    prop(128, model_and_rows(5), |(model, rows)| {
        let drifted = apply_drift(&model, 0.0).unwrap();
        for f in &rows {
            prop_assert_eq!(drifted.utility(f).unwrap(), model.utility(f).unwrap());
        }
        prop_assert_eq!(rank(&drifted, &rows, 3).unwrap().ranks(), rank(&model, &rows, 3).unwrap().ranks());
        Ok(())
    })
}

pub fn full_drift_swaps_partners() -> Check {
    prop(128, model_and_rows(5), |(model, rows)| {
        let drifted = apply_drift(&model, 1.0).unwrap();
        let pairs = default_pairing(&model.relevant, model.m()).unwrap();
        for f in &rows {
            let mut swapped = f.clone();
            for &(c, p) in &pairs {
                swapped.swap(c, p);
            }
            prop_assert!((drifted.utility(f).unwrap() - model.utility(&swapped).unwrap()).abs() < 1e-12);
        }
        Ok(())
    })
}

/// Before drift, moving an irrelevant objective never changes the utility;
/// after drift with gamma > 0, moving a partner objective does.
pub fn irrelevant_objective_invariance() -> Check {
    prop(128, (model_and_rows(1), 0.05f64..0.5), |((model, rows), delta)| {
        let f = &rows[0];
        let base = model.utility(f).unwrap();
        for i in (0..model.m()).filter(|i| !model.relevant.contains(i)) {
            let mut g = f.clone();
            g[i] += delta;
            prop_assert_eq!(model.utility(&g).unwrap(), base);
        }
        Ok(())
    })?;
    let model = UtilityModel::new(UtilityKind::Quadratic, vec![0.55, 0.0, 0.0, 0.45]).unwrap();
    let f = [0.3, 0.4, 0.5, 0.6];
    for gamma in [0.25, 0.5, 1.0] {
        let drifted = apply_drift(&model, gamma).unwrap();
        for (_, p) in default_pairing(&model.relevant, 4).unwrap() {
            let mut g = f.to_vec();
            g[p] += 0.1;
            ensure(drifted.utility(&g).unwrap() != drifted.utility(&f).unwrap(), || {
                format!("gamma {gamma}: partner {p} has no effect")
            })?;
        }
    }
    Ok(())
}

// ---------- learning ----------

/// Rankings from a linear cost whose sorted values are at least `gap` apart.
pub fn separable_store(rng: &mut ChaCha8Rng, m: usize, w: &[f64], interactions: usize, gap: f64) -> PreferenceStore {
    let cost = |f: &[f64]| f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let mut store = PreferenceStore::new();
    for it in 0..interactions {
        let rows = loop {
            let rows = unit_rows(rng, 5, m);
            let mut c: Vec<f64> = rows.iter().map(|r| cost(r)).collect();
            c.sort_by(f64::total_cmp);
            if c.windows(2).all(|p| p[1] - p[0] > gap) {
                break rows;
            }
        };
        store.push(ranked(rows, cost, it));
    }
    store
}

pub fn separable_rankings_reach_tau_one() -> Check {
    prop(64, (any::<u64>(), 2usize..5, 1usize..4), |(seed, m, interactions)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let store = separable_store(&mut rng, m, &w, interactions, 0.02);
        let model = fit(&store, &(0..m).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(model.training_tau(&store).unwrap(), 1.0);
        Ok(())
    })
}

pub fn score_slope_matches_weights() -> Check {
    prop(64, (any::<u64>(), 2usize..5), |(seed, m)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let store = separable_store(&mut rng, m, &w, 2, 0.02);
        let model = fit(&store, &(0..m).collect::<Vec<_>>()).unwrap();
        let slopes = model.destandardized_weights();
        let f: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let h = 1e-3;
        for i in 0..m {
            let mut g = f.clone();
            g[i] += h;
            let fd = (model.score(&g).unwrap() - model.score(&f).unwrap()) / h;
            prop_assert!((fd - slopes[i]).abs() <= 1e-9, "{} vs {}", fd, slopes[i]);
        }
        Ok(())
    })
}

pub fn fit_is_deterministic() -> Check {
    prop(32, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = PreferenceStore::from_samples(vec![ranked(unit_rows(&mut rng, 5, 4), |f| 0.3 * f[0] + f[2], 0)]);
        prop_assert_eq!(fit(&store, &[0, 1, 2, 3]).unwrap(), fit(&store, &[0, 1, 2, 3]).unwrap());
        Ok(())
    })
}

// ---------- detection ----------

fn sample_strategy(m: usize) -> impl Strategy<Value = RankedSample> {
    (vectors(m, 5), 0usize..10).prop_map(|(rows, it)| ranked(rows, |f| f[0] + 0.5 * f[1], it))
}

pub fn refine_pref_only_keeps_given_records() -> Check {
    let reset = prop_oneof![Just(ResetPolicy::None), Just(ResetPolicy::Fixed), Just(ResetPolicy::Dynamic)];
    let strategy = (prop::collection::vec(sample_strategy(3), 0..4), sample_strategy(3), any::<bool>(), reset);
    prop(128, strategy, |(old, new, update, reset)| {
        let out = refine_pref(&PreferenceStore::from_samples(old.clone()), &new, update, reset);
        let mut pool: Vec<&RankedSample> = old.iter().chain(std::iter::once(&new)).collect();
        for s in out.samples() {
            let Some(k) = pool.iter().position(|p| *p == s) else {
                return Err(TestCaseError::fail("record not taken from inputs"));
            };
            pool.remove(k);
        }
        prop_assert!(out.samples().last() == Some(&new));
        Ok(())
    })
}

pub fn noise_removes_constant_columns() -> Check {
    let strategy = (
        vectors(4, 5),
        subsequence(vec![0usize, 1, 2, 3], 1..4),
        prop_oneof![Just(0.0), -2.0f64..2.0],
        any::<u64>(),
    );
    prop(128, strategy, |(mut rows, constant, value, seed)| {
        for r in rows.iter_mut() {
            for &c in &constant {
                r[c] = value;
            }
        }
        let sample = ranked(rows, |f| f.iter().sum(), 0);
        let noisy = inject_noise(&sample, 0.01, &mut ChaCha8Rng::seed_from_u64(seed));
        let half = if value == 0.0 { 1.5e-8 } else { 0.01 * value.abs() };
        for &c in &constant {
            let col = noisy.column(c);
            prop_assert!(col.iter().any(|v| *v != col[0]), "column {} still constant", c);
            prop_assert!(col.iter().all(|v| (v - value).abs() <= half));
        }
        for c in (0..4).filter(|c| !constant.contains(c)) {
            prop_assert_eq!(noisy.column(c), sample.column(c));
        }
        let scores = score_univariate(&PreferenceStore::from_samples(vec![noisy])).unwrap();
        prop_assert!(scores.raw.iter().all(|s| s.is_finite()));
        Ok(())
    })
}

pub fn detect_is_permutation_equivariant() -> Check {
    let strategy = (
        prop::collection::vec(sample_strategy(5), 2..4),
        Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        any::<bool>(),
    );
    prop(128, strategy, |(samples, perm, recursive)| {
        let cfg = DetectionConfig {
            method: if recursive { DetectionMethod::Recursive } else { DetectionMethod::Univariate },
            ..DetectionConfig::default()
        };
        // objective i moves to position perm[i]
        let relabel = |s: &RankedSample| RankedSample {
            interaction: s.interaction,
            records: s
                .records
                .iter()
                .map(|r| {
                    let mut o = vec![0.0; 5];
                    for (i, &p) in perm.iter().enumerate() {
                        o[p] = r.objectives[i];
                    }
                    RankedRecord { objectives: o, rank: r.rank }
                })
                .collect(),
        };
        let all = ActiveMask::all(5);
        let a = detect(&cfg, &PreferenceStore::from_samples(samples.clone()), &all).unwrap();
        let b = detect(&cfg, &PreferenceStore::from_samples(samples.iter().map(relabel).collect()), &all).unwrap();
        let mut mapped: Vec<usize> = a.relevant.iter().map(|&i| perm[i]).collect();
        mapped.sort_unstable();
        prop_assert_eq!(mapped, b.relevant);
        Ok(())
    })
}

/// Share of 100 seeds in which `detect` keeps every objective of a random
/// pair `c` that generated the rankings through `cost = sum of f_i, i in c`.
pub fn recovery_rate(method: DetectionMethod, m: usize, interactions: usize) -> f64 {
    let cfg = DetectionConfig {
        method,
        ..DetectionConfig::default()
    };
    let seeds = 100u64;
    let mut hits = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rand::seq::index::sample(&mut rng, m, 2).into_vec();
        let cost = |f: &[f64]| c.iter().map(|&i| f[i]).sum::<f64>();
        let samples = (0..interactions).map(|it| ranked(unit_rows(&mut rng, 5, m), cost, it)).collect();
        let found = detect(&cfg, &PreferenceStore::from_samples(samples), &ActiveMask::all(m)).unwrap();
        hits += c.iter().all(|i| found.relevant.contains(i)) as usize;
    }
    hits as f64 / seeds as f64
}

pub const RECOVERY_TARGET: f64 = 0.95;

/// Every (method, m, stored interactions) cell of the recovery grid.
pub fn recovery_grid() -> Vec<(DetectionMethod, usize, usize, f64)> {
    let mut out = Vec::new();
    for method in [DetectionMethod::Univariate, DetectionMethod::Recursive] {
        for m in [4, 10] {
            for k in [3, 5, 9] {
                out.push((method, m, k, recovery_rate(method, m, k)));
            }
        }
    }
    out
}

pub fn detector_recovery() -> Check {
    let short: Vec<String> = recovery_grid()
        .into_iter()
        .filter(|c| c.3 < RECOVERY_TARGET)
        .map(|(method, m, k, r)| format!("{method} m={m} {k} interactions: {r:.2}"))
        .collect();
    ensure(short.is_empty(), || format!("recovery below {RECOVERY_TARGET}: {}", short.join(", ")))
}

// ---------- engine ----------

#[derive(Default)]
pub struct Recorder {
    pub generations: Vec<(usize, CriterionKind, ActiveMask)>,
}

impl RunObserver for Recorder {
    fn on_generation(&mut self, generation: usize, criterion: CriterionKind, mask: &ActiveMask) {
        self.generations.push((generation, criterion, mask.clone()));
    }
}

pub fn observed(cfg: &RunConfig) -> (RunTrace, Recorder) {
    let inst = cfg.problem.build().unwrap();
    let mut dm = MachineDecisionMaker::new(cfg.utility_model().unwrap());
    let mut rec = Recorder::default();
    let trace = run(cfg, &inst, &mut dm, &mut rec).unwrap();
    (trace, rec)
}

pub fn config(problem: ProblemSpec, detection: DetectionMethod, reduction: bool, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        problem,
        seed,
        ..RunConfig::default()
    };
    cfg.detection.method = detection;
    cfg.detection.reduction = reduction;
    cfg
}

/// Crowding before the first interaction, the learned score after it, and
/// exactly the configured number of generations.
pub fn criterion_swap_and_generation_count() -> Check {
    let cases = [
        (DetectionMethod::None, false),
        (DetectionMethod::Univariate, true),
        (DetectionMethod::Recursive, true),
    ];
    for (det, red) in cases {
        let cfg = config(ProblemSpec::rmnk(4, 1, 0.0, 0), det, red, 5);
        let (trace, rec) = observed(&cfg);
        ensure(rec.generations.len() == 500, || format!("{det}: {} generations", rec.generations.len()))?;
        ensure(trace.final_row().unwrap().generation == 500, || "final row generation".into())?;
        for (k, (g, kind, _)) in rec.generations.iter().enumerate() {
            let want = if *g <= cfg.gen_1 { CriterionKind::Crowding } else { CriterionKind::Learned };
            ensure(*g == k + 1 && *kind == want, || format!("{det}: generation {g} used {kind}"))?;
        }
    }
    let mut cfg = config(ProblemSpec::dtlz(ProblemKind::Dtlz2, 4), DetectionMethod::None, false, 1);
    cfg.learning = false;
    let (_, rec) = observed(&cfg);
    ensure(rec.generations.len() == 500, || "learning off: generation count".into())?;
    ensure(rec.generations[cfg.gen_1..].iter().all(|(_, k, _)| *k == CriterionKind::Utility), || {
        "learning off: criterion".into()
    })
}

pub fn mask_fixed_without_detection() -> Check {
    let cfg = config(ProblemSpec::dtlz(ProblemKind::Dtlz7, 4), DetectionMethod::None, false, 2);
    let start = cfg.start_mask().unwrap();
    let (trace, rec) = observed(&cfg);
    ensure(
        rec.generations.iter().all(|(_, _, m)| *m == start) && trace.rows.iter().all(|r| r.mask == start),
        || "mask moved without detection".into(),
    )
}

/// Between two rows the counter grows by one evaluation per survivor for
/// every newly activated objective plus the offspring under the new mask,
/// so every survivor is brought up to date when the mask changes.
pub fn mask_change_reevaluates_survivors() -> Check {
    let mut changes = 0;
    for seed in 0..4 {
        let cfg = config(ProblemSpec::rmnk(10, 1, 0.0, 0), DetectionMethod::Univariate, true, seed);
        let (trace, rec) = observed(&cfg);
        let p = cfg.population as u64;
        for w in trace.rows.windows(2) {
            let (before, after) = (&w[0], &w[1]);
            let added = after.mask.difference(&before.mask).len() as u64;
            let gens = (after.generation - before.generation) as u64;
            let expected = p * added + gens * p * after.mask.len() as u64;
            let got = after.objective_evaluations - before.objective_evaluations;
            ensure(got == expected, || format!("seed {seed} row {}: {got} != {expected}", after.interaction))?;
            changes += (after.mask != before.mask) as usize;
        }
        for (g, _, mask) in &rec.generations {
            let row = trace.rows.iter().find(|r| r.generation >= *g).unwrap();
            ensure(mask == &row.mask, || format!("seed {seed}: generation {g} ran on a stale mask"))?;
        }
    }
    ensure(changes > 0, || "no mask change exercised".into())
}

pub fn reruns_are_byte_identical() -> Check {
    for cfg in [
        config(ProblemSpec::rmnk(4, 1, 0.9, 3), DetectionMethod::Univariate, true, 11),
        config(ProblemSpec::dtlz(ProblemKind::Dtlz1, 4), DetectionMethod::Recursive, true, 12),
    ] {
        let a = run_machine(&cfg).unwrap();
        let b = run_machine(&cfg).unwrap();
        ensure(a.to_csv_string() == b.to_csv_string(), || "trace CSV differs".into())?;
        ensure(
            serde_json::to_string(&a.models).unwrap() == serde_json::to_string(&b.models).unwrap(),
            || "models differ".into(),
        )?;
    }
    Ok(())
}

// ---------- harness ----------

fn small_grid() -> ExperimentGrid {
    let mut grid = ExperimentGrid {
        detection: vec![DetectionMethod::None, DetectionMethod::Univariate],
        reduction: vec![false, true],
        repetitions: 3,
        ..ExperimentGrid::default()
    };
    grid.run.interactions = 3;
    grid.run.gen_1 = 20;
    grid.run.gen_i = 5;
    grid.run.total_generations = 40;
    grid
}

/// The same grid and base seed give the same bytes on disk, independent of
/// the thread count.
pub fn grid_reruns_are_byte_identical() -> Check {
    let cells = small_grid().expand().map_err(|e| e.to_string())?;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = execute(&cells, Some(1), Some(a.path())).map_err(|e| e.to_string())?;
    let rb = execute(&cells, Some(4), Some(b.path())).map_err(|e| e.to_string())?;
    iemoa_core::harness::write_summary(a.path(), &ra).map_err(|e| e.to_string())?;
    iemoa_core::harness::write_summary(b.path(), &rb).map_err(|e| e.to_string())?;
    let files = |root: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in std::fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(root).unwrap().display().to_string();
                    out.push((rel, std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    };
    let (fa, fb) = (files(a.path()), files(b.path()));
    ensure(!fa.is_empty() && fa == fb, || "grid output differs between reruns".into())
}

pub fn aggregation_is_permutation_invariant() -> Check {
    let cells = small_grid().expand().map_err(|e| e.to_string())?;
    let records = execute(&cells, None, None).map_err(|e| e.to_string())?;
    let forward = aggregate(&records).map_err(|e| e.to_string())?;
    let mut shuffled = records.clone();
    shuffled.reverse();
    shuffled.rotate_left(2);
    let back = aggregate(&shuffled).map_err(|e| e.to_string())?;
    ensure(forward == back, || "aggregate depends on record order".into())
}

pub type NamedCheck = (&'static str, fn() -> Check);

pub const CHECKS: &[NamedCheck] = &[
    ("active evaluation matches full vector", active_evaluation_matches_full_vector),
    ("dtlz1 linear front at half", dtlz1_linear_front_at_half),
    ("dtlz2 radius at least one", dtlz2_radius_at_least_one),
    ("rmnk objectives in [0,1]", rmnk_objectives_in_unit_interval),
    ("non-dominated sort matches naive oracle", sort_matches_naive_oracle),
    ("non-dominated sort ignores monotone transform", sort_ignores_monotone_column_transform),
    ("learned criterion breaks ties by cost", learned_criterion_orders_fronts_by_cost),
    ("elitism", elitism),
    ("ranking ignores increasing transform", ranking_ignores_increasing_transform),
    ("utility non-negative, zero only at ideal", utility_nonnegative_zero_only_at_ideal),
    ("drift identity at gamma 0", zero_drift_is_identity),
    ("drift swap at gamma 1", full_drift_swaps_partners),
    ("irrelevant-objective invariance", irrelevant_objective_invariance),
    ("rank model tau 1 on separable data", separable_rankings_reach_tau_one),
    ("score slope equals weight", score_slope_matches_weights),
    ("fit deterministic", fit_is_deterministic),
    ("refine_pref keeps only given records", refine_pref_only_keeps_given_records),
    ("noise removes constant columns", noise_removes_constant_columns),
    ("detect permutation-equivariant", detect_is_permutation_equivariant),
    ("detector recovery >= 95%", detector_recovery),
    ("criterion swap and generation count", criterion_swap_and_generation_count),
    ("mask fixed without detection", mask_fixed_without_detection),
    ("mask change re-evaluates survivors", mask_change_reevaluates_survivors),
    ("byte-stable reruns per seed", reruns_are_byte_identical),
    ("grid reruns byte-identical", grid_reruns_are_byte_identical),
    ("aggregation permutation-invariant", aggregation_is_permutation_invariant),
];
