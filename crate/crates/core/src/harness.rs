//! Batch experiments: grid expansion, parallel execution, on-disk artifacts
//! and aggregation into summary tables and plot-ready series.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionMethod, ResetPolicy};
use crate::engine::{run_machine, RunConfig, RunTrace};
use crate::error::{Error, Result};
use crate::mdm::UtilityKind;
use crate::problems::ProblemSpec;
use crate::stats::{mean, std_dev};

/// Cartesian experiment description, loaded from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    pub problems: Vec<ProblemSpec>,
    pub uf: Vec<UtilityKind>,
    pub learning: Vec<bool>,
    pub detection: Vec<DetectionMethod>,
    pub reduction: Vec<bool>,
    pub noise: Vec<bool>,
    pub gamma: Vec<f64>,
    pub reset: Vec<ResetPolicy>,
    pub tau: Vec<f64>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Settings shared by every cell (generations, population, ...).
    pub run: RunConfig,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            problems: vec![ProblemSpec::rmnk(4, 1, 0.0, 0)],
            uf: vec![UtilityKind::Tchebychef],
            learning: vec![true],
            detection: vec![DetectionMethod::Univariate],
            reduction: vec![true],
            noise: vec![false],
            gamma: vec![0.0],
            reset: vec![ResetPolicy::None],
            tau: vec![0.5],
            repetitions: 10,
            base_seed: 0,
            run: RunConfig::default(),
        }
    }
}

/// Values of the grid axes identifying one group of repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupKey {
    pub problem: String,
    pub uf: UtilityKind,
    pub learning: bool,
    pub detection: DetectionMethod,
    pub reduction: bool,
    pub noise: bool,
    pub gamma: f64,
    pub reset: ResetPolicy,
    pub tau: f64,
}

impl GroupKey {
    pub fn of(cfg: &RunConfig) -> Self {
        GroupKey {
            problem: cfg.problem.label(),
            uf: cfg.utility,
            learning: cfg.learning,
            detection: cfg.detection.method,
            reduction: cfg.detection.reduction,
            noise: cfg.detection.noise,
            gamma: cfg.gamma,
            reset: cfg.detection.reset,
            tau: cfg.detection.tau,
        }
    }

    const HEADER: [&'static str; 9] = [
        "problem",
        "uf",
        "learning",
        "detection",
        "reduction",
        "noise",
        "gamma",
        "reset",
        "tau",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.problem.clone(),
            self.uf.to_string(),
            u8::from(self.learning).to_string(),
            self.detection.to_string(),
            u8::from(self.reduction).to_string(),
            u8::from(self.noise).to_string(),
            self.gamma.to_string(),
            self.reset.to_string(),
            self.tau.to_string(),
        ]
    }

    /// Sortable string form; also used to build run directory names.
    pub fn slug(&self) -> String {
        format!(
            "{}-{}-l{}-{}-red{}-noise{}-g{}-{}-tau{}",
            self.problem,
            self.uf,
            u8::from(self.learning),
            self.detection,
            u8::from(self.reduction),
            u8::from(self.noise),
            self.gamma,
            self.reset,
            self.tau
        )
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.slug())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub id: String,
    pub key: GroupKey,
    pub repetition: usize,
    pub config: RunConfig,
}

fn is_legal(learning: bool, det: DetectionMethod, reduction: bool, noise: bool, reset: ResetPolicy) -> bool {
    if !learning && (det != DetectionMethod::None || reset != ResetPolicy::None) {
        return false;
    }
    if det == DetectionMethod::None && (noise || reduction) {
        return false;
    }
    true
}

impl ExperimentGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Cartesian product minus illegal combinations, one entry per
    /// repetition. Ordering follows the axis order of the struct.
    pub fn expand(&self) -> Result<Vec<GridCell>> {
        let axes = [
            self.problems.len(),
            self.uf.len(),
            self.learning.len(),
            self.detection.len(),
            self.reduction.len(),
            self.noise.len(),
            self.gamma.len(),
            self.reset.len(),
            self.tau.len(),
        ];
        if self.repetitions == 0 || axes.contains(&0) {
            return Err(Error::EmptyGrid);
        }
        let mut cells = Vec::new();
        for problem in &self.problems {
            for &uf in &self.uf {
                for &learning in &self.learning {
                    for &det in &self.detection {
                        for &reduction in &self.reduction {
                            for &noise in &self.noise {
                                for &gamma in &self.gamma {
                                    for &reset in &self.reset {
                                        for (ti, &tau) in self.tau.iter().enumerate() {
                                            // tau only matters with a detector
                                            if det == DetectionMethod::None && ti > 0 {
                                                continue;
                                            }
                                            if !is_legal(learning, det, reduction, noise, reset) {
                                                continue;
                                            }
                                            let mut cfg = self.run.clone();
                                            cfg.problem = problem.clone();
                                            cfg.utility = uf;
                                            cfg.learning = learning;
                                            cfg.detection.method = det;
                                            cfg.detection.reduction = reduction;
                                            cfg.detection.noise = noise;
                                            cfg.detection.reset = reset;
                                            cfg.detection.tau = tau;
                                            cfg.gamma = gamma;
                                            cfg.validate()?;
                                            let key = GroupKey::of(&cfg);
                                            for rep in 0..self.repetitions {
                                                let mut c = cfg.clone();
                                                c.seed = self.base_seed + rep as u64;
                                                cells.push(GridCell {
                                                    id: format!("{}-rep{rep:03}", key.slug()),
                                                    key: key.clone(),
                                                    repetition: rep,
                                                    config: c,
                                                });
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// Structured per-run record written next to the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub id: String,
    pub key: GroupKey,
    pub repetition: usize,
    pub seed: u64,
    pub config: RunConfig,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub aborted: bool,
    pub rows: usize,
    pub final_utility: Option<f64>,
    pub objective_evaluations: Option<u64>,
    pub final_mask: Option<Vec<usize>>,
    #[serde(default)]
    pub models: Vec<crate::learning::RankModel>,
}

impl RunManifest {
    pub fn new(cell: &GridCell, trace: &RunTrace) -> Self {
        let last = trace.final_row();
        RunManifest {
            id: cell.id.clone(),
            key: cell.key.clone(),
            repetition: cell.repetition,
            seed: cell.config.seed,
            config: cell.config.clone(),
            outcome: Outcome {
                aborted: trace.aborted,
                rows: trace.rows.len(),
                final_utility: last.map(|r| r.reported_utility),
                objective_evaluations: last.map(|r| r.objective_evaluations),
                final_mask: last.map(|r| r.mask.indices().to_vec()),
                models: trace.models.clone(),
            },
        }
    }
}

/// A finished run with its grouping.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub id: String,
    pub key: GroupKey,
    pub trace: RunTrace,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_run(dir: &Path, cell: &GridCell, trace: &RunTrace) -> Result<PathBuf> {
    let run_dir = dir.join("runs").join(&cell.id);
    fs::create_dir_all(&run_dir)?;
    write_atomic(&run_dir.join("trace.csv"), trace.to_csv_string().as_bytes())?;
    let manifest = serde_json::to_string_pretty(&RunManifest::new(cell, trace))?;
    write_atomic(&run_dir.join("manifest.json"), manifest.as_bytes())?;
    Ok(run_dir)
}

/// Runs every cell on a bounded pool. With `out_dir` set, each run's
/// artifacts are written as soon as it finishes.
pub fn execute(cells: &[GridCell], threads: Option<usize>, out_dir: Option<&Path>) -> Result<Vec<RunRecord>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Io(e.to_string()))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let trace = run_machine(&cell.config)?;
                if let Some(dir) = out_dir {
                    write_run(dir, cell, &trace)?;
                }
                Ok(RunRecord {
                    id: cell.id.clone(),
                    key: cell.key.clone(),
                    trace,
                })
            })
            .collect()
    })
}

/// Reads back every `runs/<id>/` directory, sorted by id.
pub fn load_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let runs = dir.join("runs");
    let mut entries: Vec<PathBuf> = fs::read_dir(&runs)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(p.join("manifest.json"))?)?;
            let mut trace = RunTrace::read_csv(fs::File::open(p.join("trace.csv"))?)?;
            trace.aborted = manifest.outcome.aborted;
            Ok(RunRecord {
                id: manifest.id,
                key: manifest.key,
                trace,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub key: GroupKey,
    pub runs: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SummaryTable {
    pub interactions: usize,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn find(&self, pred: impl Fn(&GroupKey) -> bool) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| pred(&r.key))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = GroupKey::HEADER.iter().map(|s| s.to_string()).collect();
        header.push("runs".into());
        header.extend((0..self.interactions).map(|i| i.to_string()));
        header.extend((0..self.interactions).map(|i| format!("std_{i}")));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = row.key.fields();
            rec.push(row.runs.to_string());
            rec.extend(row.mean.iter().map(|v| v.to_string()));
            rec.extend(row.std.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 csv"))
    }
}

/// Mean and std of a multiset of values, independent of input order.
fn moments(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    (mean(values), std_dev(values))
}

fn completed(records: &[RunRecord]) -> Result<(usize, BTreeMap<String, (GroupKey, Vec<&RunTrace>)>)> {
    let mut groups: BTreeMap<String, (GroupKey, Vec<&RunTrace>)> = BTreeMap::new();
    let mut len: Option<usize> = None;
    for rec in records.iter().filter(|r| !r.trace.aborted) {
        let n = rec.trace.rows.len();
        match len {
            None => len = Some(n),
            Some(l) if l != n => {
                return Err(Error::InconsistentTraces(format!(
                    "run {} has {n} rows, expected {l}",
                    rec.id
                )))
            }
            _ => {}
        }
        groups
            .entry(rec.key.slug())
            .or_insert_with(|| (rec.key.clone(), Vec::new()))
            .1
            .push(&rec.trace);
    }
    Ok((len.unwrap_or(0), groups))
}

/// Per-group mean and std of the reported utility at every interaction,
/// over completed (non-aborted) runs.
pub fn aggregate(records: &[RunRecord]) -> Result<SummaryTable> {
    let (interactions, groups) = completed(records)?;
    let rows = groups
        .into_values()
        .map(|(key, traces)| {
            let (mean, std) = (0..interactions)
                .map(|k| moments(&mut traces.iter().map(|t| t.rows[k].reported_utility).collect::<Vec<_>>()))
                .unzip();
            SummaryRow {
                key,
                runs: traces.len(),
                mean,
                std,
            }
        })
        .collect();
    Ok(SummaryTable { interactions, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesAxis {
    /// Final utility per (gamma, reset).
    GammaReset,
    /// Utility per interaction, split by the noise flag.
    InteractionNoise,
    /// Active/relevant objective counts per interaction.
    InteractionActiveCounts,
}

impl SeriesAxis {
    pub const ALL: [SeriesAxis; 3] = [
        SeriesAxis::GammaReset,
        SeriesAxis::InteractionNoise,
        SeriesAxis::InteractionActiveCounts,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SeriesAxis::GammaReset => "gamma_reset",
            SeriesAxis::InteractionNoise => "interaction_noise",
            SeriesAxis::InteractionActiveCounts => "interaction_active_counts",
        }
    }
}

impl std::str::FromStr for SeriesAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SeriesAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAxis(s.to_string()))
    }
}

/// Long-format rows: group key, interaction, metric, mean, std.
pub fn emit_series(records: &[RunRecord], axis: SeriesAxis) -> Result<String> {
    let (interactions, groups) = completed(records)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = GroupKey::HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(["runs", "interaction", "metric", "mean", "std"].map(String::from));
    w.write_record(&header)?;
    for (key, traces) in groups.values() {
        let mut emit = |interaction: usize, metric: &str, mut values: Vec<f64>| -> Result<()> {
            let (m, s) = moments(&mut values);
            let mut rec = key.fields();
            rec.push(traces.len().to_string());
            rec.push(interaction.to_string());
            rec.push(metric.to_string());
            rec.push(m.to_string());
            rec.push(s.to_string());
            w.write_record(&rec)?;
            Ok(())
        };
        match axis {
            SeriesAxis::GammaReset => {
                let last = interactions - 1;
                emit(last, "utility", traces.iter().map(|t| t.rows[last].reported_utility).collect())?;
            }
            SeriesAxis::InteractionNoise => {
                for k in 0..interactions {
                    emit(k, "utility", traces.iter().map(|t| t.rows[k].reported_utility).collect())?;
                }
            }
            SeriesAxis::InteractionActiveCounts => {
                for k in 0..interactions {
                    let rows: Vec<_> = traces.iter().map(|t| &t.rows[k]).collect();
                    emit(
                        k,
                        "active_relevant_over_active",
                        rows.iter().map(|r| r.active_relevant as f64 / r.mask.len() as f64).collect(),
                    )?;
                    emit(
                        k,
                        "active_relevant",
                        rows.iter().map(|r| r.active_relevant as f64).collect(),
                    )?;
                    emit(
                        k,
                        "active_relevant_over_relevant",
                        rows.iter()
                            .map(|r| r.active_relevant as f64 / r.dm_relevant.len().max(1) as f64)
                            .collect(),
                    )?;
                    emit(k, "n_active", rows.iter().map(|r| r.mask.len() as f64).collect())?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

/// Writes `summary/table.csv` and one `summary/series_<axis>.csv` per axis.
pub fn write_summary(dir: &Path, records: &[RunRecord]) -> Result<SummaryTable> {
    let summary = dir.join("summary");
    fs::create_dir_all(&summary)?;
    let table = aggregate(records)?;
    write_atomic(&summary.join("table.csv"), table.to_csv_string()?.as_bytes())?;
    for axis in SeriesAxis::ALL {
        let csv = emit_series(records, axis)?;
        write_atomic(&summary.join(format!("series_{}.csv", axis.name())), csv.as_bytes())?;
    }
    Ok(table)
}
