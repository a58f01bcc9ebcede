//! EM for ML and MAP parameter estimation with hidden mechanism variables.
//!
//! Observed cases are complete on causes and effect; the mechanism values
//! are always latent. The E-step routes each case's unit mass to the
//! observed parent configuration of every mechanism and splits it over
//! mechanism values with the exact posteriors from the inference module.
//!
//! MAP convention: the M-step follows the update theta_ijk proportional to
//! alpha_ijk + E[N_ijk]. That update is the density-coordinate mode of a
//! Dirichlet with parameters alpha+1, so the objective's prior term uses the
//! Dirichlet(alpha+1) log-density (and the exact Gamma(a, b) density for
//! Poisson rates, whose update uses a-1). The recorded trace is then the
//! exact quantity the iteration ascends.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::exec;
use crate::inference::{effect_distribution, mech_posterior_at};
use crate::model::{
    Dataset, DirichletPrior, MechParams, MechPrior, MechanismFamily, ModelParams, ModelStructure,
};

/// Poisson rate floor applied by both M-steps.
const RATE_FLOOR: f64 = 1e-9;

/// Groups per parallel E-step chunk.
const ESTEP_CHUNK: usize = 32;

/// Fractional sufficient statistics: the imaginary complete data set.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedStats {
    /// cause_counts[c][s]: observed tally of cause c in state s.
    pub cause_counts: Vec<Vec<f64>>,
    pub mechanisms: Vec<MechStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MechStats {
    /// counts[j][k] = E[N_ijk].
    Table(Vec<Vec<f64>>),
    /// Per configuration: expected sum of X_i over cases, and the number of
    /// cases whose parents hit the configuration.
    Poisson {
        expected_total: Vec<f64>,
        exposure: Vec<f64>,
    },
}

impl ExpectedStats {
    pub fn zeros(structure: &ModelStructure) -> Self {
        ExpectedStats {
            cause_counts: structure
                .causes
                .iter()
                .map(|c| vec![0.0; c.domain.cardinality().unwrap_or(1)])
                .collect(),
            mechanisms: structure
                .mechanisms
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let q = structure.config_count(i);
                    match m.family {
                        MechanismFamily::Multinomial => {
                            let r = m.domain.cardinality().unwrap_or(0);
                            MechStats::Table(vec![vec![0.0; r]; q])
                        }
                        MechanismFamily::Poisson => MechStats::Poisson {
                            expected_total: vec![0.0; q],
                            exposure: vec![0.0; q],
                        },
                    }
                })
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &ExpectedStats) {
        for (a, b) in self.cause_counts.iter_mut().zip(&other.cause_counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.mechanisms.iter_mut().zip(&other.mechanisms) {
            match (a, b) {
                (MechStats::Table(ta), MechStats::Table(tb)) => {
                    for (ra, rb) in ta.iter_mut().zip(tb) {
                        for (x, y) in ra.iter_mut().zip(rb) {
                            *x += y;
                        }
                    }
                }
                (
                    MechStats::Poisson {
                        expected_total: ea,
                        exposure: na,
                    },
                    MechStats::Poisson {
                        expected_total: eb,
                        exposure: nb,
                    },
                ) => {
                    for (x, y) in ea.iter_mut().zip(eb) {
                        *x += y;
                    }
                    for (x, y) in na.iter_mut().zip(nb) {
                        *x += y;
                    }
                }
                _ => unreachable!("mismatched stats kinds"),
            }
        }
    }
}

/// Distinct (cause assignment, effect) patterns with multiplicities.
/// Posteriors depend on a case only through this pattern, so the E-step
/// runs once per group. Sorted order keeps accumulation deterministic
/// regardless of worker count.
#[derive(Debug, Clone)]
pub(crate) struct CaseGroups {
    pub groups: Vec<CaseGroup>,
}

#[derive(Debug, Clone)]
pub(crate) struct CaseGroup {
    pub assignment: Vec<u32>,
    pub effect: u32,
    pub count: f64,
    /// Parent configuration index per mechanism.
    pub configs: Vec<usize>,
}

pub(crate) fn group_cases(structure: &ModelStructure, data: &Dataset) -> Result<CaseGroups> {
    data.check_against(structure)?;
    let mut counts: std::collections::BTreeMap<Vec<u32>, f64> = std::collections::BTreeMap::new();
    for row in &data.rows {
        *counts.entry(row.clone()).or_insert(0.0) += 1.0;
    }
    let groups = counts
        .into_iter()
        .map(|(row, count)| {
            let (assignment, effect) = Dataset::split_case(&row);
            let configs = (0..structure.mechanisms.len())
                .map(|i| structure.parent_config_index(i, assignment))
                .collect::<Result<Vec<_>>>()?;
            Ok(CaseGroup {
                assignment: assignment.to_vec(),
                effect,
                count,
                configs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseGroups { groups })
}

/// Expected sufficient statistics at the current parameters.
pub fn e_step(
    structure: &ModelStructure,
    params: &ModelParams,
    data: &Dataset,
) -> Result<ExpectedStats> {
    let groups = group_cases(structure, data)?;
    e_step_grouped(structure, params, &groups).map(|(stats, _)| stats)
}

/// E-step over pre-grouped cases; also returns the observed-data
/// log-likelihood at `params` (it falls out of the same evidence terms).
pub(crate) fn e_step_grouped(
    structure: &ModelStructure,
    params: &ModelParams,
    groups: &CaseGroups,
) -> Result<(ExpectedStats, f64)> {
    let partials = exec::map_chunks(&groups.groups, ESTEP_CHUNK, |chunk| {
        let mut stats = ExpectedStats::zeros(structure);
        let mut loglik = 0.0;
        for g in chunk {
            let post = mech_posterior_at(structure, params, &g.configs, g.effect)?;
            for (c, &s) in g.assignment.iter().enumerate() {
                stats.cause_counts[c][s as usize] += g.count;
            }
            for (i, dist) in post.dists.iter().enumerate() {
                let j = g.configs[i];
                match &mut stats.mechanisms[i] {
                    MechStats::Table(counts) => {
                        let row = &mut counts[j];
                        for (k, &p) in dist.iter().enumerate() {
                            if k < row.len() {
                                row[k] += g.count * p;
                            }
                        }
                    }
                    MechStats::Poisson {
                        expected_total,
                        exposure,
                    } => {
                        let mean: f64 = dist.iter().enumerate().map(|(k, &p)| k as f64 * p).sum();
                        expected_total[j] += g.count * mean;
                        exposure[j] += g.count;
                    }
                }
            }
            let mut case_ll = 0.0;
            for (c, &s) in g.assignment.iter().enumerate() {
                let p = params.cause_priors[c][s as usize];
                case_ll += if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
            }
            case_ll += effect_distribution(structure, params, &g.assignment)?.ln_pmf(g.effect);
            loglik += g.count * case_ll;
        }
        Ok::<_, Error>((stats, loglik))
    });

    let mut stats = ExpectedStats::zeros(structure);
    let mut loglik = 0.0;
    for partial in partials {
        let (s, ll) = partial?;
        stats.add_assign(&s);
        loglik += ll;
    }
    Ok((stats, loglik))
}

fn normalize_or_keep(counts: &[f64], prev: &[f64]) -> Vec<f64> {
    let denom: f64 = counts.iter().sum();
    if denom > 0.0 {
        counts.iter().map(|&c| c / denom).collect()
    } else {
        prev.to_vec()
    }
}

/// ML M-step: row-normalized expected counts. Rows no case touched keep the
/// previous iterate's value; clamped rows are copied bit-for-bit.
pub fn m_step_ml(
    structure: &ModelStructure,
    stats: &ExpectedStats,
    prev: &ModelParams,
) -> ModelParams {
    let cause_priors = stats
        .cause_counts
        .iter()
        .zip(&prev.cause_priors)
        .map(|(counts, prev_row)| normalize_or_keep(counts, prev_row))
        .collect();
    let mechanisms = structure
        .mechanisms
        .iter()
        .enumerate()
        .map(|(i, _)| match (&stats.mechanisms[i], &prev.mechanisms[i]) {
            (MechStats::Table(counts), MechParams::Table { rows, clamps }) => {
                let new_rows = counts
                    .iter()
                    .enumerate()
                    .map(|(j, row_counts)| {
                        if clamps[j].is_some() {
                            rows[j].clone()
                        } else {
                            normalize_or_keep(row_counts, &rows[j])
                        }
                    })
                    .collect();
                MechParams::Table {
                    rows: new_rows,
                    clamps: clamps.clone(),
                }
            }
            (
                MechStats::Poisson {
                    expected_total,
                    exposure,
                },
                MechParams::Rates(prev_rates),
            ) => MechParams::Rates(
                expected_total
                    .iter()
                    .zip(exposure)
                    .zip(prev_rates)
                    .map(|((&total, &n), &prev_rate)| {
                        if n > 0.0 {
                            (total / n).max(RATE_FLOOR)
                        } else {
                            prev_rate
                        }
                    })
                    .collect(),
            ),
            _ => unreachable!("mismatched stats kinds"),
        })
        .collect();
    ModelParams {
        cause_priors,
        mechanisms,
    }
}

/// MAP M-step: theta_ijk = (alpha_ijk + E[N_ijk]) / sum_k(...); Poisson
/// rates (a - 1 + expected total) / (b + exposure), floored at a small
/// positive value. Clamped rows are untouched.
pub fn m_step_map(
    structure: &ModelStructure,
    stats: &ExpectedStats,
    prior: &DirichletPrior,
    prev: &ModelParams,
) -> ModelParams {
    let posterior_row = |counts: &[f64], alphas: &[f64]| -> Vec<f64> {
        let weighted: Vec<f64> = counts.iter().zip(alphas).map(|(&c, &a)| a + c).collect();
        let denom: f64 = weighted.iter().sum();
        weighted.into_iter().map(|w| w / denom).collect()
    };
    let cause_priors = stats
        .cause_counts
        .iter()
        .zip(&prior.cause_alphas)
        .map(|(counts, alphas)| posterior_row(counts, alphas))
        .collect();
    let mechanisms = structure
        .mechanisms
        .iter()
        .enumerate()
        .map(|(i, _)| {
            match (
                &stats.mechanisms[i],
                &prior.mech_priors[i],
                &prev.mechanisms[i],
            ) {
                (
                    MechStats::Table(counts),
                    MechPrior::Table(alphas),
                    MechParams::Table { rows, clamps },
                ) => {
                    let new_rows = counts
                        .iter()
                        .enumerate()
                        .map(|(j, row_counts)| {
                            if clamps[j].is_some() {
                                rows[j].clone()
                            } else {
                                posterior_row(row_counts, &alphas[j])
                            }
                        })
                        .collect();
                    MechParams::Table {
                        rows: new_rows,
                        clamps: clamps.clone(),
                    }
                }
                (
                    MechStats::Poisson {
                        expected_total,
                        exposure,
                    },
                    MechPrior::Gamma(hyper),
                    MechParams::Rates(_),
                ) => MechParams::Rates(
                    expected_total
                        .iter()
                        .zip(exposure)
                        .zip(hyper)
                        .map(|((&total, &n), &(shape, rate))| {
                            ((shape - 1.0 + total) / (rate + n)).max(RATE_FLOOR)
                        })
                        .collect(),
                ),
                _ => unreachable!("mismatched stats/prior kinds"),
            }
        })
        .collect();
    ModelParams {
        cause_priors,
        mechanisms,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Ml,
    Map,
}

/// Log prior term matching the MAP update's coordinate convention:
/// Dirichlet(alpha+1) log-density per unclamped row and cause prior, exact
/// Gamma(shape, rate) log-density per Poisson rate.
pub fn log_prior_term(params: &ModelParams, prior: &DirichletPrior) -> f64 {
    fn dirichlet_plus_one(theta: &[f64], alphas: &[f64]) -> f64 {
        let a_sum: f64 = alphas.iter().map(|&a| a + 1.0).sum();
        let mut v = ln_gamma(a_sum);
        for (&t, &a) in theta.iter().zip(alphas) {
            v -= ln_gamma(a + 1.0);
            v += a * t.ln();
        }
        v
    }
    let mut total = 0.0;
    for (theta, alphas) in params.cause_priors.iter().zip(&prior.cause_alphas) {
        total += dirichlet_plus_one(theta, alphas);
    }
    for (mp, pr) in params.mechanisms.iter().zip(&prior.mech_priors) {
        match (mp, pr) {
            (MechParams::Table { rows, clamps }, MechPrior::Table(alphas)) => {
                for (j, row) in rows.iter().enumerate() {
                    if clamps[j].is_none() {
                        total += dirichlet_plus_one(row, &alphas[j]);
                    }
                }
            }
            (MechParams::Rates(rates), MechPrior::Gamma(hyper)) => {
                for (&lambda, &(shape, rate)) in rates.iter().zip(hyper) {
                    total += shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * lambda.ln()
                        - rate * lambda;
                }
            }
            _ => unreachable!("mismatched prior kinds"),
        }
    }
    total
}

/// g(theta) = log p(D | theta) in ML mode, plus the prior term in MAP mode.
pub fn g_objective(
    structure: &ModelStructure,
    params: &ModelParams,
    data: &Dataset,
    mode: FitMode,
    prior: &DirichletPrior,
) -> Result<f64> {
    let ll = crate::inference::dataset_loglik(structure, params, data)?;
    Ok(match mode {
        FitMode::Ml => ll,
        FitMode::Map => ll + log_prior_term(params, prior),
    })
}

/// Starting point policy for each restart.
#[derive(Debug, Clone)]
pub enum Init {
    /// Fresh uniform-simplex rows and Gamma(2,1) rates per restart.
    Random,
    /// As `Random`, but the listed rows stay clamped point masses.
    RandomClamped(Vec<Vec<Option<usize>>>),
    /// Every restart starts from these exact parameters.
    Fixed(ModelParams),
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub mode: FitMode,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    pub init: Init,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            mode: FitMode::Map,
            tol: 1e-6,
            max_iter: 500,
            restarts: 5,
            seed: 0,
            init: Init::Random,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// g(theta_t) per iteration, including the initial point.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub best_restart: usize,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Draw a point on the uniform simplex (Dirichlet with unit parameters).
fn sample_simplex(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // normalized unit exponentials
    let mut row: Vec<f64> = (0..len)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let sum: f64 = row.iter().sum();
    for v in &mut row {
        *v /= sum;
    }
    row
}

pub(crate) fn random_params(
    structure: &ModelStructure,
    clamps: Option<&[Vec<Option<usize>>]>,
    rng: &mut ChaCha8Rng,
) -> ModelParams {
    let gamma = Gamma::new(2.0, 1.0).expect("valid Gamma");
    let cause_priors = structure
        .causes
        .iter()
        .map(|c| sample_simplex(rng, c.domain.cardinality().unwrap_or(1)))
        .collect();
    let mechanisms = structure
        .mechanisms
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let q = structure.config_count(i);
            match m.family {
                MechanismFamily::Multinomial => {
                    let r = m.domain.cardinality().unwrap_or(0);
                    let mech_clamps: Vec<Option<usize>> = clamps
                        .and_then(|c| c.get(i).cloned())
                        .unwrap_or_else(|| vec![None; q]);
                    let rows = (0..q)
                        .map(|j| match mech_clamps.get(j).copied().flatten() {
                            Some(k) => {
                                let mut row = vec![0.0; r];
                                row[k] = 1.0;
                                row
                            }
                            None => sample_simplex(rng, r),
                        })
                        .collect();
                    MechParams::Table {
                        rows,
                        clamps: mech_clamps,
                    }
                }
                MechanismFamily::Poisson => MechParams::Rates(
                    (0..q)
                        .map(|_| {
                            let v: f64 = gamma.sample(rng);
                            v.max(RATE_FLOOR)
                        })
                        .collect(),
                ),
            }
        })
        .collect();
    ModelParams {
        cause_priors,
        mechanisms,
    }
}

/// Largest absolute entry-wise change between two parameter vectors.
pub fn max_param_delta(a: &ModelParams, b: &ModelParams) -> f64 {
    let mut m: f64 = 0.0;
    for (x, y) in a
        .cause_priors
        .iter()
        .flatten()
        .zip(b.cause_priors.iter().flatten())
    {
        m = m.max((x - y).abs());
    }
    for (ma, mb) in a.mechanisms.iter().zip(&b.mechanisms) {
        match (ma, mb) {
            (MechParams::Table { rows: ra, .. }, MechParams::Table { rows: rb, .. }) => {
                for (x, y) in ra.iter().flatten().zip(rb.iter().flatten()) {
                    m = m.max((x - y).abs());
                }
            }
            (MechParams::Rates(ra), MechParams::Rates(rb)) => {
                for (x, y) in ra.iter().zip(rb) {
                    m = m.max((x - y).abs());
                }
            }
            _ => unreachable!("mismatched parameter kinds"),
        }
    }
    m
}

struct SingleRun {
    params: ModelParams,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn run_restart(
    structure: &ModelStructure,
    groups: &CaseGroups,
    prior: &DirichletPrior,
    opts: &EmOptions,
    restart: usize,
) -> Result<SingleRun> {
    let mut params = match &opts.init {
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(exec::mix_seed(opts.seed, restart as u64));
            random_params(structure, None, &mut rng)
        }
        Init::RandomClamped(clamps) => {
            let mut rng = ChaCha8Rng::seed_from_u64(exec::mix_seed(opts.seed, restart as u64));
            random_params(structure, Some(clamps), &mut rng)
        }
        Init::Fixed(p) => p.clone(),
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;
    // Largest parameter move of the most recent M-step. Convergence demands
    // this be small too: stopping on the objective alone can leave the
    // iterate still drifting by far more than the objective tolerance.
    let mut last_move = f64::INFINITY;
    loop {
        let (stats, loglik) = e_step_grouped(structure, &params, groups)?;
        let g = match opts.mode {
            FitMode::Ml => loglik,
            FitMode::Map => loglik + log_prior_term(&params, prior),
        };
        if !g.is_finite() {
            return Err(Error::EmFailed { restarts: 1 });
        }
        let objective_stable = trace
            .last()
            .map(|&prev: &f64| (g - prev).abs() < opts.tol * (1.0 + g.abs()))
            .unwrap_or(false);
        trace.push(g);
        if objective_stable && last_move < 2.0 * opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let next = match opts.mode {
            FitMode::Ml => m_step_ml(structure, &stats, &params),
            FitMode::Map => m_step_map(structure, &stats, prior, &params),
        };
        last_move = max_param_delta(&params, &next);
        params = next;
        iterations += 1;
    }
    Ok(SingleRun {
        params,
        trace,
        converged,
        iterations,
    })
}

/// Run EM with independent restarts and return the run with the best final
/// objective. Deterministic for a fixed seed regardless of worker count.
pub fn em_fit(
    structure: &ModelStructure,
    data: &Dataset,
    prior: &DirichletPrior,
    opts: &EmOptions,
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::IncompatibleData("empty dataset".into()));
    }
    let groups = group_cases(structure, data)?;
    let restarts = opts.restarts.max(1);
    let runs = exec::map_indexed(restarts, |r| {
        run_restart(structure, &groups, prior, opts, r)
    });

    let mut best: Option<(usize, SingleRun)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let Ok(run) = run else { continue };
        let g = run.trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        if !g.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => g > b.trace.last().copied().unwrap_or(f64::NEG_INFINITY),
        };
        if better {
            best = Some((r, run));
        }
    }
    let (best_restart, run) = best.ok_or(Error::EmFailed { restarts })?;
    Ok(FitResult {
        params: run.params,
        trace: run.trace,
        converged: run.converged,
        iterations: run.iterations,
        best_restart,
    })
}
