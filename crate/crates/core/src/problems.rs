//! Benchmark problems with active-objective masking.
//!
//! All problems are minimisation problems over `m` potential objectives.
//! Objective indices are zero-based throughout the crate.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub type ObjectiveVector = Vec<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "encoding", content = "genes")]
pub enum Genome {
    Real(Vec<f64>),
    Binary(Vec<bool>),
}

impl Genome {
    pub fn len(&self) -> usize {
        match self {
            Genome::Real(x) => x.len(),
            Genome::Binary(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Dtlz1,
    Dtlz2,
    Dtlz7,
    Rmnk,
}

impl ProblemKind {
    pub fn is_dtlz(self) -> bool {
        !matches!(self, ProblemKind::Rmnk)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProblemKind::Dtlz1 => "dtlz1",
            ProblemKind::Dtlz2 => "dtlz2",
            ProblemKind::Dtlz7 => "dtlz7",
            ProblemKind::Rmnk => "rmnk",
        };
        f.write_str(s)
    }
}

/// Ordered set of active objective indices (zero-based, strictly increasing).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ActiveMask(Vec<usize>);

impl ActiveMask {
    /// Builds a mask from arbitrary indices; they are sorted and deduplicated.
    pub fn new(mut indices: Vec<usize>, m: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        let mask = ActiveMask(indices);
        mask.validate(m)?;
        Ok(mask)
    }

    pub fn all(m: usize) -> Self {
        ActiveMask((0..m).collect())
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidMask("mask is empty".into()));
        }
        if let Some(&i) = self.0.iter().find(|&&i| i >= m) {
            return Err(Error::InvalidMask(format!("index {i} out of range for m={m}")));
        }
        if self.0.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMask("indices not strictly increasing".into()));
        }
        Ok(())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_superset_of(&self, set: &[usize]) -> bool {
        set.iter().all(|&i| self.contains(i))
    }

    /// Indices present in `self` but not in `other`.
    pub fn difference(&self, other: &ActiveMask) -> Vec<usize> {
        self.0.iter().copied().filter(|&i| !other.contains(i)).collect()
    }
}

impl TryFrom<Vec<usize>> for ActiveMask {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidMask("mask is empty".into()));
        }
        if v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMask("indices not strictly increasing".into()));
        }
        Ok(ActiveMask(v))
    }
}

impl From<ActiveMask> for Vec<usize> {
    fn from(m: ActiveMask) -> Self {
        m.0
    }
}

impl fmt::Display for ActiveMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        f.write_str(&parts.join(";"))
    }
}

/// Counts objective evaluations: one unit per objective per solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounter {
    objective_evaluations: u64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&mut self, n: usize) {
        self.objective_evaluations += n as u64;
    }

    pub fn get(&self) -> u64 {
        self.objective_evaluations
    }
}

/// Objective values restricted to an active mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialObjectives {
    pub mask: ActiveMask,
    pub values: Vec<f64>,
}

impl PartialObjectives {
    pub fn get(&self, objective: usize) -> Option<f64> {
        self.mask
            .indices()
            .binary_search(&objective)
            .ok()
            .map(|pos| self.values[pos])
    }
}

/// ρMNK landscape: shared epistatic links, one contribution table per objective.
#[derive(Clone, Debug, PartialEq)]
pub struct RmnkLandscape {
    pub k: usize,
    pub rho: f64,
    pub seed: u64,
    /// For each position, `k + 1` positions whose bits form the lookup pattern;
    /// the first entry is the position itself.
    pub links: Vec<Vec<usize>>,
    /// Flat `[objective][position][pattern]` table with `2^(k+1)` patterns.
    tables: Vec<f64>,
}

impl RmnkLandscape {
    pub fn patterns(&self) -> usize {
        1 << (self.k + 1)
    }

    pub fn entry(&self, objective: usize, position: usize, pattern: usize) -> f64 {
        let n = self.links.len();
        let p = self.patterns();
        self.tables[objective * n * p + position * p + pattern]
    }

    fn pattern(&self, position: usize, bits: &[bool]) -> usize {
        self.links[position]
            .iter()
            .enumerate()
            .fold(0, |acc, (t, &j)| acc | ((bits[j] as usize) << t))
    }

    fn objective(&self, objective: usize, bits: &[bool]) -> f64 {
        let n = bits.len();
        let total: f64 = (0..n)
            .map(|j| self.entry(objective, j, self.pattern(j, bits)))
            .sum();
        total / n as f64
    }
}

/// Serializable description of a problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub m: usize,
    /// Epistasis degree (rmnk only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Objective correlation (rmnk only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Landscape generator seed (rmnk only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Decision-space dimension override (rmnk only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

impl ProblemSpec {
    pub fn dtlz(kind: ProblemKind, m: usize) -> Self {
        ProblemSpec {
            kind,
            m,
            k: None,
            rho: None,
            seed: None,
            n: None,
        }
    }

    pub fn rmnk(m: usize, k: usize, rho: f64, seed: u64) -> Self {
        ProblemSpec {
            kind: ProblemKind::Rmnk,
            m,
            k: Some(k),
            rho: Some(rho),
            seed: Some(seed),
            n: None,
        }
    }

    pub fn build(&self) -> Result<ProblemInstance> {
        match self.kind {
            ProblemKind::Rmnk => {
                let n = self.n.unwrap_or_else(|| rmnk_default_n(self.m));
                rmnk_generate(
                    self.m,
                    n,
                    self.k.unwrap_or(1),
                    self.rho.unwrap_or(0.0),
                    self.seed.unwrap_or(0),
                )
            }
            kind => ProblemInstance::dtlz(kind, self.m),
        }
    }

    /// Short label such as `rmnk_m4_k1_r0` or `dtlz2_m4`.
    pub fn label(&self) -> String {
        match self.kind {
            ProblemKind::Rmnk => format!(
                "rmnk_m{}_k{}_r{}",
                self.m,
                self.k.unwrap_or(1),
                self.rho.unwrap_or(0.0)
            ),
            kind => format!("{kind}_m{}", self.m),
        }
    }
}

/// Decision-space size used for ρMNK: 10 for m=4, 20 for m=10, 30 for m=20.
pub fn rmnk_default_n(m: usize) -> usize {
    ((m as f64 / 10.0).round() as usize + 1) * 10
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub m: usize,
    pub n: usize,
    pub rmnk: Option<RmnkLandscape>,
}

impl ProblemInstance {
    pub fn dtlz(kind: ProblemKind, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::param("m", "DTLZ needs at least 2 objectives"));
        }
        let n = match kind {
            ProblemKind::Dtlz1 => m + 4,
            ProblemKind::Dtlz2 => m + 9,
            ProblemKind::Dtlz7 => m + 19,
            ProblemKind::Rmnk => return Err(Error::param("kind", "use rmnk_generate for rmnk")),
        };
        Ok(ProblemInstance {
            kind,
            m,
            n,
            rmnk: None,
        })
    }

    pub fn is_binary(&self) -> bool {
        self.kind == ProblemKind::Rmnk
    }

    /// Box bounds of gene `i` for continuous encodings.
    pub fn bounds(&self) -> (f64, f64) {
        match self.kind {
            ProblemKind::Dtlz1 => (0.25, 0.75),
            _ => (0.0, 1.0),
        }
    }

    pub fn random_genome<R: Rng + ?Sized>(&self, rng: &mut R) -> Genome {
        if self.is_binary() {
            Genome::Binary((0..self.n).map(|_| rng.random_bool(0.5)).collect())
        } else {
            let (lo, hi) = self.bounds();
            Genome::Real((0..self.n).map(|_| rng.random_range(lo..=hi)).collect())
        }
    }

    fn check(&self, g: &Genome) -> Result<()> {
        if g.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: g.len(),
            });
        }
        match (g, self.is_binary()) {
            (Genome::Binary(_), true) => Ok(()),
            (Genome::Real(x), false) => {
                let (lo, hi) = self.bounds();
                match x.iter().position(|v| !(lo..=hi).contains(v)) {
                    Some(index) => Err(Error::OutOfDomain {
                        index,
                        value: x[index],
                    }),
                    None => Ok(()),
                }
            }
            _ => Err(Error::EncodingMismatch),
        }
    }

    /// All `m` objective values. Does not touch any evaluation counter.
    pub fn evaluate_full(&self, g: &Genome) -> Result<ObjectiveVector> {
        self.check(g)?;
        Ok(match (g, &self.rmnk) {
            (Genome::Binary(bits), Some(land)) => {
                (0..self.m).map(|i| land.objective(i, bits)).collect()
            }
            (Genome::Real(x), _) => match self.kind {
                ProblemKind::Dtlz1 => dtlz1(x, self.m),
                ProblemKind::Dtlz2 => dtlz2_modified(x, self.m),
                ProblemKind::Dtlz7 => dtlz7(x, self.m),
                ProblemKind::Rmnk => unreachable!("checked by encoding"),
            },
            _ => return Err(Error::EncodingMismatch),
        })
    }

    /// Values at the masked indices only; charges `|mask|` evaluations.
    pub fn evaluate_active(
        &self,
        g: &Genome,
        mask: &ActiveMask,
        ctr: &mut EvalCounter,
    ) -> Result<PartialObjectives> {
        mask.validate(self.m)?;
        let values = self.evaluate_subset(g, mask.indices())?;
        ctr.charge(mask.len());
        Ok(PartialObjectives {
            mask: mask.clone(),
            values,
        })
    }

    /// Values at the given objective indices, uncharged. Used by the engine
    /// when only newly activated objectives must be computed.
    pub(crate) fn evaluate_subset(&self, g: &Genome, objectives: &[usize]) -> Result<Vec<f64>> {
        self.check(g)?;
        match (g, &self.rmnk) {
            (Genome::Binary(bits), Some(land)) => {
                Ok(objectives.iter().map(|&i| land.objective(i, bits)).collect())
            }
            _ => {
                let full = self.evaluate_full(g)?;
                Ok(objectives.iter().map(|&i| full[i]).collect())
            }
        }
    }

    /// Dumps ρMNK links and tables as CSV (`kind,objective,position,pattern,value`).
    pub fn export_rmnk_csv<W: Write>(&self, out: W) -> Result<()> {
        let land = self
            .rmnk
            .as_ref()
            .ok_or_else(|| Error::param("kind", "not an rmnk instance"))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "objective", "position", "pattern", "value"])?;
        for (pos, links) in land.links.iter().enumerate() {
            for (t, &j) in links.iter().enumerate() {
                w.write_record(["link", "", &pos.to_string(), &t.to_string(), &j.to_string()])?;
            }
        }
        for obj in 0..self.m {
            for pos in 0..self.n {
                for pat in 0..land.patterns() {
                    w.write_record([
                        "table",
                        &obj.to_string(),
                        &pos.to_string(),
                        &pat.to_string(),
                        &format!("{:.17e}", land.entry(obj, pos, pat)),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn dtlz1(x: &[f64], m: usize) -> Vec<f64> {
    let (head, tail) = x.split_at(m - 1);
    let k = tail.len() as f64;
    let g = 100.0
        * (k + tail
            .iter()
            .map(|&xi| (xi - 0.5).powi(2) - (20.0 * PI * (xi - 0.5)).cos())
            .sum::<f64>());
    (0..m)
        .map(|i| {
            let mut f = 0.5 * (1.0 + g);
            f *= head[..m - 1 - i].iter().product::<f64>();
            if i > 0 {
                f *= 1.0 - head[m - 1 - i];
            }
            f
        })
        .collect()
}

/// DTLZ2 with every variable mapped to `x / 2 + 0.25`.
fn dtlz2_modified(x: &[f64], m: usize) -> Vec<f64> {
    let y: Vec<f64> = x.iter().map(|&xi| xi / 2.0 + 0.25).collect();
    let (head, tail) = y.split_at(m - 1);
    let g: f64 = tail.iter().map(|&yi| (yi - 0.5).powi(2)).sum();
    (0..m)
        .map(|i| {
            let mut f = 1.0 + g;
            f *= head[..m - 1 - i]
                .iter()
                .map(|&t| (t * PI / 2.0).cos())
                .product::<f64>();
            if i > 0 {
                f *= (head[m - 1 - i] * PI / 2.0).sin();
            }
            f
        })
        .collect()
}

fn dtlz7(x: &[f64], m: usize) -> Vec<f64> {
    let (head, tail) = x.split_at(m - 1);
    let g = 1.0 + 9.0 / tail.len() as f64 * tail.iter().sum::<f64>();
    let h = m as f64
        - head
            .iter()
            .map(|&f| f / (1.0 + g) * (1.0 + (3.0 * PI * f).sin()))
            .sum::<f64>();
    let mut out = head.to_vec();
    out.push((1.0 + g) * h);
    out
}

/// Generates a ρMNK instance. Contribution entries of the `m` objectives at
/// each (position, pattern) come from a Gaussian copula with constant
/// pairwise correlation `rho`.
pub fn rmnk_generate(m: usize, n: usize, k: usize, rho: f64, seed: u64) -> Result<ProblemInstance> {
    if m < 2 {
        return Err(Error::param("m", "rmnk needs at least 2 objectives"));
    }
    if n == 0 || n > 63 {
        return Err(Error::param("n", format!("n={n} must lie in 1..=63")));
    }
    if k >= n {
        return Err(Error::param("k", format!("K={k} must be smaller than n={n}")));
    }
    let rho_min = -1.0 / (m as f64 - 1.0);
    if !(rho >= rho_min - 1e-12 && rho <= 1.0) {
        return Err(Error::param(
            "rho",
            format!("rho={rho} must lie in [{rho_min}, 1] for m={m}"),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let links: Vec<Vec<usize>> = (0..n)
        .map(|pos| {
            let others: Vec<usize> = (0..n).filter(|&j| j != pos).collect();
            let mut l = vec![pos];
            l.extend(others.choose_multiple(&mut rng, k).copied());
            l
        })
        .collect();

    let chol = equicorrelation_cholesky(m, rho);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let patterns = 1usize << (k + 1);
    let mut tables = vec![0.0; m * n * patterns];
    let mut z = vec![0.0; m];
    for pos in 0..n {
        for pat in 0..patterns {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for obj in 0..m {
                let y: f64 = (0..=obj).map(|c| chol[obj * m + c] * z[c]).sum();
                tables[obj * n * patterns + pos * patterns + pat] = normal.cdf(y);
            }
        }
    }

    Ok(ProblemInstance {
        kind: ProblemKind::Rmnk,
        m,
        n,
        rmnk: Some(RmnkLandscape {
            k,
            rho,
            seed,
            links,
            tables,
        }),
    })
}

/// Lower-triangular Cholesky factor (row-major) of the matrix with unit
/// diagonal and constant off-diagonal `rho`. Zero pivots are clamped, which
/// covers the singular boundary `rho = -1/(m-1)` and `rho = 1`.
fn equicorrelation_cholesky(m: usize, rho: f64) -> Vec<f64> {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let a = if i == j { 1.0 } else { rho };
            let s: f64 = (0..j).map(|c| l[i * m + c] * l[j * m + c]).sum();
            if i == j {
                l[i * m + j] = (a - s).max(0.0).sqrt();
            } else {
                let d = l[j * m + j];
                l[i * m + j] = if d > 1e-12 { (a - s) / d } else { 0.0 };
            }
        }
    }
    l
}
