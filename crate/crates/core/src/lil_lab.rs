//! Monte Carlo harness for iterated-logarithm statistics.
//!
//! For each sampled `x` the harness walks `k = 1..N_max`, reads the leading
//! bits of `{n_{sigma(k)} x}` exactly, and records either the partial sum
//! `S_N = \sum_{k<=N} f(n_{sigma(k)} x)` or the prefix discrepancy `N D_N` at a
//! geometric grid of checkpoints. The statistic is
//!
//! ```text
//! |S_N| / sqrt(2 N LL(N))  or  N D_N / sqrt(2 N LL(N)),   LL(N) = max(1, ln ln N),
//! ```
//!
//! maximised over checkpoints `N >= N_min` as a finite stand-in for the limsup.
//! Values at finite `N_max` approach their limits at a `log log N` rate, so
//! reports carry `N_max` alongside every aggregate.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discrepancy::prefix_discrepancies;
use crate::numerics::{sample_unit_with_budget, unit_real_from_top, FracTerm, NumericsError, PrecisionBudget, UnitFraction, DEFAULT_GUARD_BITS, MIN_SAMPLE_PRECISION};
use crate::periodic::{centered_indicator, parse_rational, sigma_identity, PeriodicError, PeriodicFunction, TrigPolynomial};
use crate::permutations::{build_counterexample, find_solution_pairs, pairs_in_prefix, GrowthPolicy, PermutationError, PermutationPlan};
use crate::sequences::{gen_power, gen_power_minus_one, gen_superlacunary, load_sequence_file, Generator, IntegerSequence, SequenceError};

pub const DEFAULT_N_MIN: usize = 64;
pub const DEFAULT_TRUNCATION: u32 = 24;

/// Printed with every report.
pub const CONVERGENCE_CAVEAT: &str = "running maximum over checkpoints up to N_max; \
convergence to the limsup is at a log log N rate and is not certified";

pub fn default_checkpoint_ratio() -> f64 {
    2f64.powf(0.125)
}

#[derive(Debug, Error)]
pub enum LilError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Permutation(#[from] PermutationError),
    #[error(transparent)]
    Periodic(#[from] PeriodicError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LilError {
    /// Whether the failure lies in the configuration rather than the run.
    pub fn is_usage(&self) -> bool {
        matches!(self, LilError::Config(_))
    }
}

fn config_error(message: impl Into<String>) -> LilError {
    LilError::Config(message.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Power,
    PowerMinusOne,
    Superlacunary,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<u32>,
    /// Sequence length; defaults to what the permutation needs.
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    Zero,
    Cos,
    Trig,
    Indicator,
    Pair,
    Discrepancy,
}

/// A rational written as `"p/q"` or a bare integer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Int(i64),
    Text(String),
}

impl Param {
    fn rational(&self) -> Result<BigRational, LilError> {
        match self {
            Param::Int(v) => Ok(BigRational::from_integer((*v).into())),
            Param::Text(s) => parse_rational(s).ok_or_else(|| config_error(format!("not a rational: {s:?}"))),
        }
    }

    fn integer(&self) -> Result<i64, LilError> {
        match self {
            Param::Int(v) => Ok(*v),
            Param::Text(s) => s.trim().parse().map_err(|_| config_error(format!("not an integer: {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub kind: FunctionKind,
    /// `trig`: cosine coefficients; `indicator`: `[a, b]`; `pair`: frequencies `[a, b]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<Param>,
    /// `trig`: sine coefficients.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sin: Vec<Param>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationKind {
    #[default]
    Identity,
    BlockSorted,
    Counterexample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Spaced,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub a: i64,
    pub b: i64,
    pub c: i64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermutationSpec {
    #[serde(default)]
    pub kind: PermutationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Seed of the shuffle that `block_sorted` starts from; defaults to `lil.seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QuerySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_gap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LilSpec {
    #[serde(rename = "N_max")]
    pub n_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_ratio: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_guard: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<usize>,
    /// Total precision `P` in bits, replacing the computed one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_override: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionKind {
    #[default]
    None,
    Constant,
    /// `|f|`.
    Norm,
    SigmaIdentity,
    /// `sqrt((cos 2 pi c x + 2) / 2)`.
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSpec {
    #[serde(default)]
    pub kind: PredictionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<u64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<u32>,
    /// Defaults to `permutation.query.c`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sequence: SequenceSpec,
    pub function: FunctionSpec,
    #[serde(default)]
    pub permutation: PermutationSpec,
    pub lil: LilSpec,
    #[serde(default)]
    pub prediction: PredictionSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, LilError> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, then applies `key.path=value` overrides before validation.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, LilError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_error(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Sets `a.b.c = value` in a TOML table; `value` is TOML, or a bare string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), LilError> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| config_error(format!("override {item:?} is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_error(format!("override key {path:?} is malformed")));
    }
    let mut node = table;
    for key in &keys[..keys.len() - 1] {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("override key {path:?} descends into a value")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Geometric checkpoints `round(r^j) >= n_min` up to `n_max`, always ending at `n_max`.
pub fn checkpoint_grid(n_max: usize, ratio: f64, n_min: usize) -> Result<Vec<usize>, LilError> {
    if ratio <= 1.0 || !ratio.is_finite() {
        return Err(config_error(format!("checkpoint ratio must exceed 1, got {ratio}")));
    }
    if n_max == 0 {
        return Err(config_error("N_max must be positive"));
    }
    let mut grid: Vec<usize> = Vec::new();
    let mut c = 1.0f64;
    loop {
        let n = c.round() as usize;
        if n > n_max {
            break;
        }
        if n >= n_min && grid.last() != Some(&n) {
            grid.push(n);
        }
        c *= ratio;
    }
    if grid.last() != Some(&n_max) {
        grid.push(n_max);
    }
    Ok(grid)
}

/// `max(1, ln ln n)`.
pub fn log_log(n: usize) -> f64 {
    (n as f64).ln().ln().max(1.0)
}

pub fn normalizer(n: usize) -> f64 {
    (2.0 * n as f64 * log_log(n)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    Sums(PeriodicFunction),
    Discrepancy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    None,
    Constant(f64),
    Pointwise { c: i64 },
}

impl Prediction {
    pub fn at(&self, x: f64) -> Option<f64> {
        match self {
            Prediction::None => None,
            Prediction::Constant(v) => Some(*v),
            Prediction::Pointwise { c } => {
                let angle = std::f64::consts::TAU * (*c as f64 * x).fract();
                Some(((angle.cos() + 2.0) / 2.0).sqrt())
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Prediction::Constant(_)) || matches!(self, Prediction::Pointwise { c: 0 })
    }
}

/// A configuration resolved into concrete objects, ready to sample.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sequence: IntegerSequence,
    pub plan: PermutationPlan,
    pub observable: Observable,
    pub prediction: Prediction,
    pub checkpoints: Vec<usize>,
    pub n_min: usize,
    budget: PrecisionBudget,
    terms: Vec<FracTerm>,
}

fn resolve_function(spec: &FunctionSpec, query: Option<QuerySpec>) -> Result<Observable, LilError> {
    let function: PeriodicFunction = match spec.kind {
        FunctionKind::Discrepancy => return Ok(Observable::Discrepancy),
        FunctionKind::Zero => PeriodicFunction::zero(),
        FunctionKind::Cos => TrigPolynomial::cosines(&[1]).into(),
        FunctionKind::Trig => {
            let cos = spec.params.iter().map(Param::rational).collect::<Result<Vec<_>, _>>()?;
            let sin = spec.sin.iter().map(Param::rational).collect::<Result<Vec<_>, _>>()?;
            if cos.is_empty() && sin.is_empty() {
                return Err(config_error("function.kind = \"trig\" needs coefficients in params"));
            }
            TrigPolynomial::exact(cos, sin).into()
        }
        FunctionKind::Indicator => match spec.params.as_slice() {
            [a, b] => centered_indicator(&a.rational()?, &b.rational()?)
                .map_err(|e| config_error(e.to_string()))?
                .into(),
            _ => return Err(config_error("function.kind = \"indicator\" needs params = [a, b]")),
        },
        FunctionKind::Pair => {
            let (a, b) = match (spec.params.as_slice(), query) {
                ([a, b], _) => (a.integer()?, b.integer()?),
                ([], Some(q)) => (q.a, q.b),
                _ => return Err(config_error("function.kind = \"pair\" needs params = [a, b] or a permutation query")),
            };
            if a < 1 || b < 1 {
                return Err(config_error("pair frequencies must be positive"));
            }
            let mut coefficients = vec![0i64; a.max(b) as usize];
            coefficients[a as usize - 1] += 1;
            coefficients[b as usize - 1] += 1;
            TrigPolynomial::cosines(&coefficients).into()
        }
    };
    Ok(Observable::Sums(function))
}

fn build_sequence(spec: &SequenceSpec, len: usize) -> Result<IntegerSequence, LilError> {
    let base = spec.base.unwrap_or(2);
    Ok(match spec.kind {
        SequenceKind::Power => gen_power(base, len)?,
        SequenceKind::PowerMinusOne => gen_power_minus_one(base, len)?,
        SequenceKind::Superlacunary => gen_superlacunary(len)?,
        SequenceKind::File => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| config_error("sequence.kind = \"file\" needs sequence.path"))?;
            let seq = load_sequence_file(path)?;
            match spec.n {
                Some(n) => seq.prefix(n)?,
                None => seq,
            }
        }
    })
}

impl Experiment {
    pub fn resolve(config: &ExperimentConfig) -> Result<Self, LilError> {
        let lil = &config.lil;
        let n_max = lil.n_max;
        if lil.samples == 0 {
            return Err(config_error("lil.samples must be at least 1"));
        }
        let n_min = lil.n_min.unwrap_or(DEFAULT_N_MIN);
        let checkpoints = checkpoint_grid(n_max, lil.checkpoint_ratio.unwrap_or_else(default_checkpoint_ratio), n_min)?;
        let perm = &config.permutation;
        let observable = resolve_function(&config.function, perm.query)?;

        let (sequence, plan) = match perm.kind {
            PermutationKind::Identity => {
                let seq = build_sequence(&config.sequence, config.sequence.n.unwrap_or(n_max))?;
                (seq, PermutationPlan::identity(n_max))
            }
            PermutationKind::BlockSorted => {
                let seq = build_sequence(&config.sequence, config.sequence.n.unwrap_or(n_max))?;
                let mut order: Vec<usize> = (1..=n_max).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(perm.shuffle_seed.unwrap_or(lil.seed));
                order.shuffle(&mut rng);
                let theta = perm.theta.unwrap_or(2.0);
                (seq, PermutationPlan::block_sorted(&order, theta)?)
            }
            PermutationKind::Counterexample => {
                let q = perm
                    .query
                    .ok_or_else(|| config_error("permutation.kind = \"counterexample\" needs permutation.query"))?;
                let needed = pairs_in_prefix(n_max + n_max % 2);
                let default_policy = GrowthPolicy::spaced_for(n_max);
                let policy = match (perm.policy.unwrap_or(PolicyKind::Spaced), default_policy) {
                    (PolicyKind::Spaced, GrowthPolicy::Spaced { min_index, min_gap }) => GrowthPolicy::Spaced {
                        min_index: perm.min_index.unwrap_or(min_index),
                        min_gap: perm.min_gap.unwrap_or(min_gap),
                    },
                    (PolicyKind::Asymptotic, _) | (_, GrowthPolicy::Asymptotic { .. }) => GrowthPolicy::Asymptotic {
                        min_index: perm.min_index.unwrap_or(1),
                    },
                };
                let search = config.sequence.n.unwrap_or(2 * n_max + 64);
                let seq = build_sequence(&config.sequence, search)?;
                let pairs = find_solution_pairs(&seq, q.a, q.b, &BigInt::from(q.c), needed, policy)?;
                let plan = build_counterexample(&pairs, n_max)?;
                (seq, plan)
            }
        };
        if plan.len() < n_max {
            return Err(config_error(format!("permutation covers {} positions, need N_max = {n_max}", plan.len())));
        }
        if plan.max_index() > sequence.len() {
            return Err(config_error(format!(
                "permutation uses index {} but the sequence has {} terms",
                plan.max_index(),
                sequence.len()
            )));
        }
        let terms = plan
            .order()
            .iter()
            .map(|&k| sequence.frac_term(k))
            .collect::<Result<Vec<_>, _>>()?;
        let max_bits = terms.iter().map(FracTerm::bit_length).max().unwrap_or(0);
        let guard = lil.precision_guard.unwrap_or(DEFAULT_GUARD_BITS);
        let precision = lil
            .precision_override
            .unwrap_or((max_bits + guard).max(MIN_SAMPLE_PRECISION));
        let budget = PrecisionBudget::new(precision, guard.min(precision))?;
        budget.check_operand(max_bits)?;

        let prediction = match config.prediction.kind {
            PredictionKind::None => Prediction::None,
            PredictionKind::Constant => Prediction::Constant(
                config
                    .prediction
                    .value
                    .ok_or_else(|| config_error("prediction.kind = \"constant\" needs prediction.value"))?,
            ),
            PredictionKind::Norm => match &observable {
                Observable::Sums(f) => Prediction::Constant(f.l2_norm()),
                Observable::Discrepancy => return Err(config_error("prediction \"norm\" needs a function")),
            },
            PredictionKind::SigmaIdentity => match &observable {
                Observable::Sums(f) => {
                    let theta = config.prediction.theta.unwrap_or(2);
                    let k = config.prediction.truncation.unwrap_or(DEFAULT_TRUNCATION);
                    Prediction::Constant(sigma_identity(f, theta, k)?.sigma)
                }
                Observable::Discrepancy => return Err(config_error("prediction \"sigma_identity\" needs a function")),
            },
            PredictionKind::Pointwise => Prediction::Pointwise {
                c: config
                    .prediction
                    .c
                    .or(perm.query.map(|q| q.c))
                    .ok_or_else(|| config_error("prediction \"pointwise\" needs prediction.c or a query"))?,
            },
        };

        Ok(Self {
            config: config.clone(),
            sequence,
            plan,
            observable,
            prediction,
            checkpoints,
            n_min,
            budget,
            terms,
        })
    }

    pub fn n_max(&self) -> usize {
        self.config.lil.n_max
    }

    pub fn budget(&self) -> PrecisionBudget {
        self.budget
    }

    /// The same experiment with `extra` more bits of precision and guard.
    pub fn with_extra_guard(&self, extra: u64) -> Result<Self, LilError> {
        let mut copy = self.clone();
        copy.budget = PrecisionBudget::new(
            self.budget.precision_bits() + extra,
            self.budget.guard_bits() + extra,
        )?;
        Ok(copy)
    }

    pub fn sample_point(&self, index: u64) -> Result<UnitFraction, LilError> {
        Ok(sample_unit_with_budget(self.config.lil.seed, index, self.budget)?)
    }

    /// Leading 64 bits of `{n_{sigma(k)} x}` for `k = 1..=n`.
    pub fn fractional_parts(&self, x: &UnitFraction, n: usize) -> Result<Vec<u64>, LilError> {
        self.terms[..n]
            .iter()
            .map(|t| t.top_bits(x).map_err(LilError::from))
            .collect()
    }

    /// `S_N` (sums) or `N D_N` (discrepancy) at each of `checkpoints`.
    pub fn raw_series(&self, x: &UnitFraction, checkpoints: &[usize]) -> Result<Vec<f64>, LilError> {
        let n = checkpoints.last().copied().unwrap_or(0);
        if n > self.terms.len() {
            return Err(config_error(format!("checkpoint {n} exceeds N_max = {}", self.terms.len())));
        }
        let tops = self.fractional_parts(x, n)?;
        Ok(match &self.observable {
            Observable::Sums(f) => {
                let mut out = Vec::with_capacity(checkpoints.len());
                let mut sum = 0.0f64;
                let mut next = checkpoints.iter().peekable();
                for (k, top) in tops.iter().enumerate() {
                    sum += f.eval(unit_real_from_top(*top));
                    while next.peek() == Some(&&(k + 1)) {
                        out.push(sum);
                        next.next();
                    }
                }
                out
            }
            Observable::Discrepancy => {
                let points = tops.into_iter().map(unit_real_from_top);
                prefix_discrepancies(points, checkpoints)
                    .into_iter()
                    .map(|(n, v)| n as f64 * v.extreme)
                    .collect()
            }
        })
    }

    /// Per-sample statistics at this experiment's checkpoints.
    pub fn statistics(&self, x: &UnitFraction) -> Result<SampleStatistics, LilError> {
        let raw = self.raw_series(x, &self.checkpoints)?;
        Ok(SampleStatistics::from_raw(&self.checkpoints, &raw, self.n_min))
    }

    pub fn record(&self, index: u64) -> Result<SampleRecord, LilError> {
        let x = self.sample_point(index)?;
        let stats = self.statistics(&x)?;
        let x_top64 = x.top_u64();
        let prediction = self.prediction.at(unit_real_from_top(x_top64));
        Ok(SampleRecord {
            index,
            x_top64,
            runmax: stats.runmax,
            final_stat: stats.final_stat,
            prediction,
        })
    }

    pub fn run(&self) -> Result<LilEstimate, LilError> {
        let records = (0..self.config.lil.samples as u64)
            .into_par_iter()
            .map(|i| self.record(i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LilEstimate::new(self, records))
    }
}

/// Statistics of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStatistics {
    /// `(N, statistic)` per checkpoint.
    pub series: Vec<(usize, f64)>,
    pub runmax: f64,
    pub final_stat: f64,
}

impl SampleStatistics {
    /// Normalizes raw values; the running maximum covers `N >= n_min`.
    pub fn from_raw(checkpoints: &[usize], raw: &[f64], n_min: usize) -> Self {
        let series: Vec<(usize, f64)> = checkpoints
            .iter()
            .zip(raw)
            .map(|(&n, &v)| (n, v.abs() / normalizer(n)))
            .collect();
        let final_stat = series.last().map_or(0.0, |s| s.1);
        let runmax = series
            .iter()
            .filter(|(n, _)| *n >= n_min)
            .map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max);
        Self {
            runmax: if runmax.is_finite() { runmax.max(final_stat) } else { final_stat },
            final_stat,
            series,
        }
    }
}

/// Statistics of the partial sums for one `x`.
pub fn lil_statistic_sums(exp: &Experiment, x: &UnitFraction) -> Result<SampleStatistics, LilError> {
    match exp.observable {
        Observable::Sums(_) => exp.statistics(x),
        Observable::Discrepancy => Err(config_error("experiment observes discrepancy, not sums")),
    }
}

/// Statistics of the prefix discrepancies for one `x`.
pub fn lil_statistic_discrepancy(exp: &Experiment, x: &UnitFraction) -> Result<SampleStatistics, LilError> {
    match exp.observable {
        Observable::Discrepancy => exp.statistics(x),
        Observable::Sums(_) => Err(config_error("experiment observes sums, not discrepancy")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub index: u64,
    pub x_top64: u64,
    pub runmax: f64,
    pub final_stat: f64,
    pub prediction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q10: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            count: values.len(),
            mean,
            sd,
            min: sorted[0],
            q10: quantile(&sorted, 0.10),
            q25: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q75: quantile(&sorted, 0.75),
            q90: quantile(&sorted, 0.90),
            max: sorted[sorted.len() - 1],
        })
    }

    /// Coefficient of variation `sd / mean`.
    pub fn cv(&self) -> f64 {
        self.sd / self.mean
    }
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman's rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `runmax / prediction` per sample, aggregated.
    pub ratio: Aggregate,
    /// Rank correlation of running maxima with predictions.
    pub spearman: Option<f64>,
    /// Coefficient of variation of the running maxima.
    pub cv: f64,
}

/// Compares running maxima with per-sample predictions.
pub fn compare_prediction(records: &[SampleRecord]) -> Option<Comparison> {
    let paired: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.prediction.map(|p| (r.runmax, p)))
        .collect();
    if paired.is_empty() || paired.len() != records.len() {
        return None;
    }
    let estimates: Vec<f64> = paired.iter().map(|p| p.0).collect();
    let predictions: Vec<f64> = paired.iter().map(|p| p.1).collect();
    let ratios: Vec<f64> = paired.iter().map(|(e, p)| e / p).collect();
    Some(Comparison {
        ratio: Aggregate::of(&ratios)?,
        spearman: spearman(&estimates, &predictions),
        cv: Aggregate::of(&estimates)?.cv(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LilEstimate {
    pub config: ExperimentConfig,
    pub n_max: usize,
    pub checkpoints: usize,
    pub precision_bits: u64,
    pub records: Vec<SampleRecord>,
    pub runmax: Aggregate,
    pub final_stat: Aggregate,
    pub comparison: Option<Comparison>,
}

pub const CSV_HEADER: &str = "sample_index,x_top64_hex,stat_runmax,stat_final,prediction";

impl LilEstimate {
    fn new(exp: &Experiment, records: Vec<SampleRecord>) -> Self {
        let runmax: Vec<f64> = records.iter().map(|r| r.runmax).collect();
        let finals: Vec<f64> = records.iter().map(|r| r.final_stat).collect();
        Self {
            config: exp.config.clone(),
            n_max: exp.n_max(),
            checkpoints: exp.checkpoints.len(),
            precision_bits: exp.budget.precision_bits(),
            runmax: Aggregate::of(&runmax).expect("at least one sample"),
            final_stat: Aggregate::of(&finals).expect("at least one sample"),
            comparison: compare_prediction(&records),
            records,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let prediction = r.prediction.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:016x},{},{},{}",
                r.index, r.x_top64, r.runmax, r.final_stat, prediction
            );
        }
        out
    }

    /// TOML summary: run metadata, aggregates, comparison and the configuration echo.
    pub fn summary(&self) -> String {
        fn aggregate_table(a: &Aggregate) -> toml::Table {
            let mut t = toml::Table::new();
            for (k, v) in [
                ("mean", a.mean),
                ("sd", a.sd),
                ("min", a.min),
                ("q10", a.q10),
                ("q25", a.q25),
                ("median", a.median),
                ("q75", a.q75),
                ("q90", a.q90),
                ("max", a.max),
            ] {
                t.insert(k.into(), toml::Value::Float(v));
            }
            t.insert("count".into(), toml::Value::Integer(a.count as i64));
            t
        }
        let mut run = toml::Table::new();
        run.insert("tool".into(), "lacunary".into());
        run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        run.insert("N_max".into(), toml::Value::Integer(self.n_max as i64));
        run.insert("checkpoints".into(), toml::Value::Integer(self.checkpoints as i64));
        run.insert("precision_bits".into(), toml::Value::Integer(self.precision_bits as i64));
        run.insert("caveat".into(), CONVERGENCE_CAVEAT.into());
        let mut stats = toml::Table::new();
        stats.insert("runmax".into(), toml::Value::Table(aggregate_table(&self.runmax)));
        stats.insert("final".into(), toml::Value::Table(aggregate_table(&self.final_stat)));
        let mut doc = toml::Table::new();
        doc.insert("run".into(), toml::Value::Table(run));
        doc.insert("statistics".into(), toml::Value::Table(stats));
        if let Some(c) = &self.comparison {
            let mut t = toml::Table::new();
            t.insert("ratio".into(), toml::Value::Table(aggregate_table(&c.ratio)));
            t.insert("cv".into(), toml::Value::Float(c.cv));
            match c.spearman {
                Some(s) => t.insert("spearman".into(), toml::Value::Float(s)),
                None => t.insert("spearman".into(), "undefined (constant prediction)".into()),
            };
            doc.insert("comparison".into(), toml::Value::Table(t));
        }
        let echo = toml::Value::try_from(&self.config).expect("configuration serializes");
        doc.insert("config".into(), echo);
        toml::to_string(&doc).expect("summary serializes")
    }
}

/// Re-reads the configuration echoed in a summary.
pub fn config_from_summary(summary: &str) -> Result<ExperimentConfig, LilError> {
    let mut doc: toml::Table = toml::from_str(summary).map_err(|e| config_error(e.to_string()))?;
    let echo = doc
        .remove("config")
        .ok_or_else(|| config_error("summary has no config section"))?;
    echo.try_into().map_err(|e: toml::de::Error| config_error(e.to_string()))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<LilEstimate, LilError> {
    Experiment::resolve(config)?.run()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProbe {
    pub n: usize,
    pub samples: usize,
    /// Monte Carlo mean of `S_N^2 / N`.
    pub mean: f64,
    pub standard_error: f64,
    /// `sigma^2` of the identity arrangement when the sequence is `theta^k`.
    pub sigma2: Option<f64>,
}

impl VarianceProbe {
    /// Distance from `sigma^2` in standard errors.
    pub fn z_score(&self) -> Option<f64> {
        self.sigma2.map(|s| (self.mean - s) / self.standard_error)
    }
}

/// Estimates `E[S_N^2] / N` over the configured samples.
pub fn variance_probe(exp: &Experiment, n_probe: usize) -> Result<VarianceProbe, LilError> {
    let Observable::Sums(f) = &exp.observable else {
        return Err(config_error("variance probe needs a function, not discrepancy"));
    };
    if n_probe == 0 || n_probe > exp.n_max() {
        return Err(config_error(format!("N_probe must lie in 1..={}", exp.n_max())));
    }
    let values = (0..exp.config.lil.samples as u64)
        .into_par_iter()
        .map(|i| {
            let x = exp.sample_point(i)?;
            let s = exp.raw_series(&x, &[n_probe])?[0];
            Ok(s * s / n_probe as f64)
        })
        .collect::<Result<Vec<f64>, LilError>>()?;
    let agg = Aggregate::of(&values).expect("at least one sample");
    let sigma2 = match (exp.sequence.generator(), &exp.plan.kind) {
        (Generator::Power { base }, crate::permutations::PlanKind::Identity) => {
            Some(sigma_identity(f, *base as u64, DEFAULT_TRUNCATION)?.sigma2.to_f64())
        }
        _ => None,
    };
    Ok(VarianceProbe {
        n: n_probe,
        samples: values.len(),
        mean: agg.mean,
        standard_error: agg.sd / (values.len() as f64).sqrt(),
        sigma2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::frac_mul;
    use proptest::prelude::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    const COS_DYADIC: &str = r#"
        [sequence]
        kind = "power"
        base = 2
        [function]
        kind = "cos"
        [lil]
        N_max = 4096
        samples = 4
        seed = 11
    "#;

    #[test]
    fn checkpoint_grid_shape() {
        let grid = checkpoint_grid(1 << 16, default_checkpoint_ratio(), 64).unwrap();
        assert_eq!(grid[0], 64);
        assert_eq!(*grid.last().unwrap(), 1 << 16);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        // eight steps per doubling
        assert_eq!(grid.len(), 8 * 10 + 1);
        assert_eq!(checkpoint_grid(10, 2.0, 64).unwrap(), vec![10]);
        assert!(checkpoint_grid(10, 1.0, 1).is_err());
        assert!(checkpoint_grid(0, 2.0, 1).is_err());
    }

    #[test]
    fn log_log_convention() {
        assert_eq!(log_log(1), 1.0);
        assert_eq!(log_log(15), 1.0);
        assert!((log_log(1 << 16) - (65536f64).ln().ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_function_gives_zero() {
        let mut cfg = config(COS_DYADIC);
        cfg.function.kind = FunctionKind::Zero;
        let est = run_experiment(&cfg).unwrap();
        assert!(est.records.iter().all(|r| r.runmax == 0.0 && r.final_stat == 0.0));
    }

    #[test]
    fn cos_statistic_is_bounded() {
        let mut cfg = config(COS_DYADIC);
        cfg.lil.n_max = 1 << 16;
        cfg.lil.samples = 1;
        let est = run_experiment(&cfg).unwrap();
        let r = &est.records[0];
        assert!(r.runmax > 0.0 && r.runmax < 3.0);
        assert!(r.runmax >= r.final_stat);
        assert_eq!(est.runmax.median, r.runmax);
        assert_eq!(est.runmax.mean, r.runmax);
    }

    #[test]
    fn sums_match_direct_products() {
        let exp = Experiment::resolve(&config(COS_DYADIC)).unwrap();
        let x = exp.sample_point(2).unwrap();
        let got = exp.raw_series(&x, &[1, 100, 4096]).unwrap();
        // the raw sequence, multiplied out in full
        let mut sum = 0.0;
        let mut direct = Vec::new();
        for k in 1..=4096usize {
            let y = frac_mul(&exp.sequence.term(k).unwrap(), &x).unwrap();
            sum += (std::f64::consts::TAU * unit_real_from_top(y.top_u64())).cos();
            if [1, 100, 4096].contains(&k) {
                direct.push(sum);
            }
        }
        assert_eq!(got, direct);
    }

    #[test]
    fn discrepancy_matches_fresh_point_sets() {
        let cfg = config(
            r#"
            [sequence]
            kind = "power_minus_one"
            [function]
            kind = "discrepancy"
            [lil]
            N_max = 300
            samples = 1
            seed = 3
            n_min = 1
        "#,
        );
        let exp = Experiment::resolve(&cfg).unwrap();
        let x = exp.sample_point(0).unwrap();
        let raw = exp.raw_series(&x, &[1, 7, 300]).unwrap();
        let tops = exp.fractional_parts(&x, 300).unwrap();
        for (n, v) in [1usize, 7, 300].iter().zip(raw) {
            let pts: Vec<f64> = tops[..*n].iter().map(|t| unit_real_from_top(*t)).collect();
            let d = crate::discrepancy::PointSet::new(pts).unwrap().discrepancy().extreme;
            assert_eq!(v, *n as f64 * d);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = config(COS_DYADIC);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.summary(), b.summary());
        assert!(a.to_csv().starts_with(CSV_HEADER));
        assert_eq!(a.to_csv().lines().count(), 5);
    }

    #[test]
    fn summary_echo_round_trips() {
        let mut cfg = config(COS_DYADIC);
        cfg.prediction.kind = PredictionKind::SigmaIdentity;
        let est = run_experiment(&cfg).unwrap();
        assert_eq!(config_from_summary(&est.summary()).unwrap(), cfg);
        let c = est.comparison.unwrap();
        assert!(c.spearman.is_none());
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml_with_overrides(
            COS_DYADIC,
            &["lil.samples=9".into(), "sequence.kind=power_minus_one".into(), "lil.checkpoint_ratio = 1.5".into()],
        )
        .unwrap();
        assert_eq!(cfg.lil.samples, 9);
        assert_eq!(cfg.sequence.kind, SequenceKind::PowerMinusOne);
        assert_eq!(cfg.lil.checkpoint_ratio, Some(1.5));
        for bad in ["lil.sample=9", "nonsense", "lil.samples.x=1", "extra.key=1"] {
            let err = ExperimentConfig::from_toml_with_overrides(COS_DYADIC, &[bad.into()]).unwrap_err();
            assert!(err.is_usage(), "{bad}");
        }
        assert!(ExperimentConfig::from_toml("[sequence]\nkind = \"power\"\nsurprise = 1").is_err());
    }

    #[test]
    fn precision_errors_report_required_bits() {
        let mut cfg = config(COS_DYADIC);
        cfg.lil.precision_override = Some(1000);
        match Experiment::resolve(&cfg) {
            Err(LilError::Numerics(NumericsError::BudgetExceeded { required, .. })) => assert_eq!(required, 4097 + 64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extra_guard_bits_change_nothing() {
        let exp = Experiment::resolve(&config(COS_DYADIC)).unwrap();
        let wide = exp.with_extra_guard(64).unwrap();
        for i in 0..4 {
            let a = exp.statistics(&exp.sample_point(i).unwrap()).unwrap();
            let b = wide.statistics(&wide.sample_point(i).unwrap()).unwrap();
            assert!((a.runmax - b.runmax).abs() <= 1e-9);
            assert!((a.final_stat - b.final_stat).abs() <= 1e-9);
        }
    }

    #[test]
    fn counterexample_plan_feeds_the_harness() {
        let cfg = config(
            r#"
            [sequence]
            kind = "power_minus_one"
            [function]
            kind = "pair"
            [permutation]
            kind = "counterexample"
            query = { a = 1, b = 2, c = 1 }
            [lil]
            N_max = 512
            samples = 3
            seed = 1
            [prediction]
            kind = "pointwise"
        "#,
        );
        let exp = Experiment::resolve(&cfg).unwrap();
        assert_eq!(exp.plan.order()[..2], [5, 6]);
        assert_eq!(exp.prediction, Prediction::Pointwise { c: 1 });
        let est = exp.run().unwrap();
        assert!(est.records.iter().all(|r| r.prediction.is_some()));
    }

    #[test]
    fn variance_probe_small() {
        let mut cfg = config(COS_DYADIC);
        cfg.lil.samples = 64;
        let exp = Experiment::resolve(&cfg).unwrap();
        let probe = variance_probe(&exp, 1024).unwrap();
        assert_eq!(probe.sigma2, Some(0.5));
        assert!(probe.z_score().unwrap().abs() < 4.0, "{probe:?}");
    }

    #[test]
    fn spearman_hand_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn pointwise_prediction_values() {
        let p = Prediction::Pointwise { c: 1 };
        assert!((p.at(0.0).unwrap() - 1.5f64.sqrt()).abs() < 1e-15);
        assert!((p.at(0.5).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(Prediction::Pointwise { c: 0 }.is_constant());
    }

    proptest! {
        #[test]
        fn more_checkpoints_never_lower_the_maximum(
            mask in proptest::collection::vec(any::<bool>(), 40),
            seed in 0u64..1000,
        ) {
            let mut cfg = config(COS_DYADIC);
            cfg.lil.seed = seed;
            let exp = Experiment::resolve(&cfg).unwrap();
            let x = exp.sample_point(0).unwrap();
            let full: Vec<usize> = (0..40).map(|i| 64 + i * 100).collect();
            let subset: Vec<usize> = full.iter().zip(&mask).filter(|(_, m)| **m).map(|(n, _)| *n).collect();
            prop_assume!(!subset.is_empty());
            let a = SampleStatistics::from_raw(&full, &exp.raw_series(&x, &full).unwrap(), 64);
            let b = SampleStatistics::from_raw(&subset, &exp.raw_series(&x, &subset).unwrap(), 64);
            prop_assert!(a.runmax >= b.runmax);
        }
    }
}
