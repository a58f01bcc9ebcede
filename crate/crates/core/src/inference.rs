//! Exact effect distributions and mechanism posteriors.
//!
//! Max-combination models get the CDF-product closed form and its
//! case-by-case posterior; sum-combination Poisson models get the
//! superposition closed form and the conditional-binomial posterior. A
//! generic enumeration engine covers every combination function and serves
//! as the independent oracle for the closed forms.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{
    CombinationFunction, Dataset, MechParams, MechanismFamily, ModelParams, ModelStructure,
};

/// Joint outcome cap for the enumeration engine.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Mechanism count above which CDF products are accumulated in log space.
const LOG_SPACE_THRESHOLD: usize = 32;

/// Distribution of the effect given a cause assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectDistribution {
    /// probs[e] for e in 0..len; sums to 1.
    Finite(Vec<f64>),
    /// Poisson mass function with the given rate, evaluated lazily.
    Poisson { rate: f64 },
}

impl EffectDistribution {
    pub fn pmf(&self, e: u32) -> f64 {
        match self {
            EffectDistribution::Finite(p) => p.get(e as usize).copied().unwrap_or(0.0),
            EffectDistribution::Poisson { rate } => poisson_pmf(*rate, e),
        }
    }

    pub fn ln_pmf(&self, e: u32) -> f64 {
        match self {
            EffectDistribution::Finite(p) => {
                let v = p.get(e as usize).copied().unwrap_or(0.0);
                if v > 0.0 {
                    v.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            EffectDistribution::Poisson { rate } => poisson_ln_pmf(*rate, e),
        }
    }
}

/// Per-mechanism posterior over X_i given (causes, effect).
///
/// Support convention: under Max and Sum the vectors cover 0..=e (entries
/// above the mechanism's own domain are zero); under NOf and Parity they
/// cover the binary domain {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismPosterior {
    pub dists: Vec<Vec<f64>>,
}

pub(crate) fn poisson_ln_pmf(rate: f64, k: u32) -> f64 {
    let kf = k as f64;
    kf * rate.ln() - rate - ln_gamma(kf + 1.0)
}

pub(crate) fn poisson_pmf(rate: f64, k: u32) -> f64 {
    poisson_ln_pmf(rate, k).exp()
}

/// Apply the combination function to a joint mechanism value vector.
pub fn eval_combination(combo: CombinationFunction, values: &[u32]) -> u32 {
    match combo {
        CombinationFunction::Max => values.iter().copied().max().unwrap_or(0),
        CombinationFunction::Sum => {
            let s: u64 = values.iter().map(|&v| v as u64).sum();
            u32::try_from(s).expect("sum combination overflow")
        }
        CombinationFunction::NOf(n) => {
            let ones = values.iter().filter(|&&v| v == 1).count() as u32;
            (ones >= n) as u32
        }
        CombinationFunction::Parity => {
            let ones = values.iter().filter(|&&v| v == 1).count();
            (ones % 2 == 0) as u32
        }
    }
}

fn mech_row<'a>(params: &'a ModelParams, i: usize, j: usize) -> &'a [f64] {
    match &params.mechanisms[i] {
        MechParams::Table { rows, .. } => &rows[j],
        MechParams::Rates(_) => unreachable!("multinomial row requested from Poisson mechanism"),
    }
}

fn mech_rate(params: &ModelParams, i: usize, j: usize) -> f64 {
    match &params.mechanisms[i] {
        MechParams::Rates(rates) => rates[j],
        MechParams::Table { .. } => unreachable!("rate requested from multinomial mechanism"),
    }
}

/// Row CDF: p(X_i <= e | config j). Exactly 1 at or above the top state.
fn row_cdf(row: &[f64], e: i64) -> f64 {
    if e < 0 {
        0.0
    } else if e as usize >= row.len() - 1 {
        1.0
    } else {
        row[..=e as usize].iter().sum()
    }
}

/// Parent configuration index of every mechanism under `assignment`.
pub(crate) fn config_indices(structure: &ModelStructure, assignment: &[u32]) -> Result<Vec<usize>> {
    (0..structure.mechanisms.len())
        .map(|i| structure.parent_config_index(i, assignment))
        .collect()
}

fn require_combo(structure: &ModelStructure, required: CombinationFunction) -> Result<()> {
    let ok = match required {
        CombinationFunction::Max => structure.combo == CombinationFunction::Max,
        CombinationFunction::Sum => structure.combo == CombinationFunction::Sum,
        _ => structure.combo == required,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::WrongCombination {
            required: required.name(),
            found: structure.combo.name().to_string(),
        })
    }
}

/// p(E <= e | c) = prod_i p(X_i <= e | c) for Max-combination models.
pub fn nmi_effect_cdf(
    structure: &ModelStructure,
    params: &ModelParams,
    assignment: &[u32],
    e: u32,
) -> Result<f64> {
    require_combo(structure, CombinationFunction::Max)?;
    let js = config_indices(structure, assignment)?;
    Ok(nmi_cdf_at(structure, params, &js, e as i64))
}

fn nmi_cdf_at(structure: &ModelStructure, params: &ModelParams, js: &[usize], e: i64) -> f64 {
    if structure.mechanisms.len() > LOG_SPACE_THRESHOLD {
        let mut zeros = 0usize;
        let mut log_sum = 0.0;
        for (i, &j) in js.iter().enumerate() {
            let v = row_cdf(mech_row(params, i, j), e);
            if v == 0.0 {
                zeros += 1;
            } else {
                log_sum += v.ln();
            }
        }
        if zeros > 0 {
            0.0
        } else {
            log_sum.exp()
        }
    } else {
        js.iter()
            .enumerate()
            .map(|(i, &j)| row_cdf(mech_row(params, i, j), e))
            .product()
    }
}

/// Effect pmf vector for a Max model: pmf(e) = cdf(e) - cdf(e-1).
fn nmi_effect_probs(structure: &ModelStructure, params: &ModelParams, js: &[usize]) -> Vec<f64> {
    let re = structure
        .effect
        .domain
        .cardinality()
        .expect("max combination has a finite effect");
    let mut prev = 0.0;
    (0..re)
        .map(|e| {
            // exact unit total: the top state takes the complement
            let c = if e + 1 == re {
                1.0
            } else {
                nmi_cdf_at(structure, params, js, e as i64)
            };
            let p = (c - prev).max(0.0);
            prev = c;
            p
        })
        .collect()
}

/// Exact per-mechanism posterior for Max models. For k < e the mass is
/// theta_{i j k} * (prod_{a!=i} P_a(<=e) - prod_{a!=i} P_a(<e)) / p(E=e|c);
/// k = e takes the complement, and k > e is zero.
pub fn nmi_mech_posterior(
    structure: &ModelStructure,
    params: &ModelParams,
    assignment: &[u32],
    e: u32,
) -> Result<MechanismPosterior> {
    require_combo(structure, CombinationFunction::Max)?;
    let js = config_indices(structure, assignment)?;
    nmi_mech_posterior_at(structure, params, &js, e)
}

pub(crate) fn nmi_mech_posterior_at(
    structure: &ModelStructure,
    params: &ModelParams,
    js: &[usize],
    e: u32,
) -> Result<MechanismPosterior> {
    let m = structure.mechanisms.len();
    let e = e as i64;
    let le: Vec<f64> = (0..m)
        .map(|i| row_cdf(mech_row(params, i, js[i]), e))
        .collect();
    let lt: Vec<f64> = (0..m)
        .map(|i| row_cdf(mech_row(params, i, js[i]), e - 1))
        .collect();

    if m > LOG_SPACE_THRESHOLD {
        return nmi_mech_posterior_log(params, js, &le, &lt, e);
    }

    let prod_le: f64 = le.iter().product();
    let prod_lt: f64 = lt.iter().product();
    let denom = prod_le - prod_lt;
    if !(denom > 0.0) {
        return Err(Error::ZeroProbabilityEvidence { effect: e as u32 });
    }

    let holdout_le = holdout_products(&le);
    let holdout_lt = holdout_products(&lt);

    let dists = (0..m)
        .map(|i| {
            let row = mech_row(params, i, js[i]);
            let weight = (holdout_le[i] - holdout_lt[i]) / denom;
            let mut dist = vec![0.0; e as usize + 1];
            let mut below = 0.0;
            for k in 0..e as usize {
                let theta = row.get(k).copied().unwrap_or(0.0);
                let p = theta * weight;
                dist[k] = p;
                below += p;
            }
            dist[e as usize] = (1.0 - below).max(0.0);
            dist
        })
        .collect();
    Ok(MechanismPosterior { dists })
}

/// log(e^a - e^b) for a >= b.
fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        a
    } else if a <= b {
        f64::NEG_INFINITY
    } else {
        a + (-(b - a).exp_m1()).ln()
    }
}

/// Log-space variant of the Max posterior, used when products of many CDFs
/// would underflow.
fn nmi_mech_posterior_log(
    params: &ModelParams,
    js: &[usize],
    le: &[f64],
    lt: &[f64],
    e: i64,
) -> Result<MechanismPosterior> {
    let m = le.len();
    let log_total = |xs: &[f64]| -> (usize, f64) {
        let mut zeros = 0;
        let mut s = 0.0;
        for &x in xs {
            if x == 0.0 {
                zeros += 1;
            } else {
                s += x.ln();
            }
        }
        (zeros, s)
    };
    let (z_le, s_le) = log_total(le);
    let (z_lt, s_lt) = log_total(lt);
    let full = |zeros: usize, sum: f64| if zeros > 0 { f64::NEG_INFINITY } else { sum };
    let without = |zeros: usize, sum: f64, x: f64| -> f64 {
        if x == 0.0 {
            if zeros == 1 {
                sum
            } else {
                f64::NEG_INFINITY
            }
        } else if zeros > 0 {
            f64::NEG_INFINITY
        } else {
            sum - x.ln()
        }
    };

    let log_denom = log_diff_exp(full(z_le, s_le), full(z_lt, s_lt));
    if log_denom == f64::NEG_INFINITY {
        return Err(Error::ZeroProbabilityEvidence { effect: e as u32 });
    }

    let dists = (0..m)
        .map(|i| {
            let row = mech_row(params, i, js[i]);
            let log_weight =
                log_diff_exp(without(z_le, s_le, le[i]), without(z_lt, s_lt, lt[i])) - log_denom;
            let mut dist = vec![0.0; e as usize + 1];
            let mut below = 0.0;
            for k in 0..e as usize {
                let theta = row.get(k).copied().unwrap_or(0.0);
                let p = if theta > 0.0 {
                    (theta.ln() + log_weight).exp()
                } else {
                    0.0
                };
                dist[k] = p;
                below += p;
            }
            dist[e as usize] = (1.0 - below).max(0.0);
            dist
        })
        .collect();
    Ok(MechanismPosterior { dists })
}

/// For each index i, the product of all entries except the i-th.
fn holdout_products(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut prefix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * xs[i];
    }
    let mut suffix = vec![1.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] * xs[i];
    }
    (0..n).map(|i| prefix[i] * suffix[i + 1]).collect()
}

/// p(E | c) for a Poisson sum model: Poisson with the summed rate.
pub fn poisson_nai_effect(
    structure: &ModelStructure,
    params: &ModelParams,
    assignment: &[u32],
) -> Result<EffectDistribution> {
    require_combo(structure, CombinationFunction::Sum)?;
    let js = config_indices(structure, assignment)?;
    let mut total = 0.0;
    for (i, &j) in js.iter().enumerate() {
        let rate = mech_rate(params, i, j);
        if !(rate > 0.0) {
            return Err(Error::NonPositiveRate {
                mechanism: i,
                config: j,
                rate,
            });
        }
        total += rate;
    }
    Ok(EffectDistribution::Poisson { rate: total })
}

/// Conditional of independent Poissons given their sum: X_i | E=e is
/// Binomial(e, rate_i / total_rate).
pub fn poisson_nai_mech_posterior(
    structure: &ModelStructure,
    params: &ModelParams,
    assignment: &[u32],
    e: u32,
) -> Result<MechanismPosterior> {
    require_combo(structure, CombinationFunction::Sum)?;
    let js = config_indices(structure, assignment)?;
    poisson_nai_mech_posterior_at(structure, params, &js, e)
}

pub(crate) fn poisson_nai_mech_posterior_at(
    structure: &ModelStructure,
    params: &ModelParams,
    js: &[usize],
    e: u32,
) -> Result<MechanismPosterior> {
    let m = structure.mechanisms.len();
    let rates: Vec<f64> = (0..m).map(|i| mech_rate(params, i, js[i])).collect();
    for (i, &rate) in rates.iter().enumerate() {
        if !(rate > 0.0) {
            return Err(Error::NonPositiveRate {
                mechanism: i,
                config: js[i],
                rate,
            });
        }
    }
    let total: f64 = rates.iter().sum();
    let dists = rates
        .iter()
        .map(|&rate| {
            let p = rate / total;
            binomial_pmf_vector(e, p)
        })
        .collect();
    Ok(MechanismPosterior { dists })
}

/// Binomial(e, p) pmf over 0..=e via log-gamma.
fn binomial_pmf_vector(e: u32, p: f64) -> Vec<f64> {
    let n = e as usize;
    if n == 0 {
        return vec![1.0];
    }
    if p >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let ln_n_fact = ln_gamma(e as f64 + 1.0);
    (0..=n)
        .map(|k| {
            let kf = k as f64;
            let ef = e as f64;
            (ln_n_fact - ln_gamma(kf + 1.0) - ln_gamma(ef - kf + 1.0)
                + kf * ln_p
                + (ef - kf) * ln_q)
                .exp()
        })
        .collect()
}

/// Per-mechanism enumeration supports for the brute-force engine.
fn enumeration_supports(structure: &ModelStructure, e: u32) -> Result<Vec<usize>> {
    structure
        .mechanisms
        .iter()
        .enumerate()
        .map(|(i, m)| match m.family {
            MechanismFamily::Multinomial => m.domain.cardinality().ok_or_else(|| {
                Error::InvalidModel(format!("mechanism {} has no finite domain", i))
            }),
            MechanismFamily::Poisson => {
                if structure.combo != CombinationFunction::Sum {
                    Err(Error::InvalidModel(
                        "Poisson mechanisms require the sum combination".into(),
                    ))
                } else {
                    // conditioning on E = e bounds every X_i to 0..=e exactly
                    Ok(e as usize + 1)
                }
            }
        })
        .collect()
}

/// Enumerates every joint mechanism value, filters on the combination
/// function, and normalizes. Exact for all combination functions (Poisson
/// supports are truncated to 0..=e, which is exact under Sum). This is the
/// test oracle for the closed forms and the E-step engine for NOf/Parity.
pub fn brute_force_posterior(
    structure: &ModelStructure,
    params: &ModelParams,
    assignment: &[u32],
    e: u32,
    cap: u128,
) -> Result<MechanismPosterior> {
    let js = config_indices(structure, assignment)?;
    brute_force_posterior_at(structure, params, &js, e, cap)
}

pub(crate) fn brute_force_posterior_at(
    structure: &ModelStructure,
    params: &ModelParams,
    js: &[usize],
    e: u32,
    cap: u128,
) -> Result<MechanismPosterior> {
    let m = structure.mechanisms.len();
    let supports = enumeration_supports(structure, e)?;
    let size: u128 = supports.iter().map(|&s| s as u128).product();
    if size > cap {
        return Err(Error::EnumerationCapExceeded { size, cap });
    }

    // pmf per mechanism over its enumeration support
    let pmfs: Vec<Vec<f64>> = (0..m)
        .map(|i| match structure.mechanisms[i].family {
            MechanismFamily::Multinomial => mech_row(params, i, js[i]).to_vec(),
            MechanismFamily::Poisson => {
                let rate = mech_rate(params, i, js[i]);
                (0..supports[i])
                    .map(|k| poisson_pmf(rate, k as u32))
                    .collect()
            }
        })
        .collect();

    let out_len = match structure.combo {
        CombinationFunction::Max | CombinationFunction::Sum => e as usize + 1,
        CombinationFunction::NOf(_) | CombinationFunction::Parity => 2,
    };
    let mut acc = vec![vec![0.0f64; out_len]; m];
    let mut total = 0.0f64;

    let mut values = vec![0u32; m];
    let mut weights = vec![0.0f64; m + 1];
    weights[0] = 1.0;
    // mixed-radix sweep with incremental weight products
    let mut level = 0usize;
    loop {
        if level == m {
            let w = weights[m];
            if eval_combination(structure.combo, &values) == e && w > 0.0 {
                total += w;
                for (i, &v) in values.iter().enumerate() {
                    if (v as usize) < out_len {
                        acc[i][v as usize] += w;
                    }
                }
            }
            // backtrack to the deepest incrementable level
            loop {
                if level == 0 {
                    // done
                    if !(total > 0.0) {
                        return Err(Error::ZeroProbabilityEvidence { effect: e });
                    }
                    for dist in &mut acc {
                        for p in dist.iter_mut() {
                            *p /= total;
                        }
                    }
                    return Ok(MechanismPosterior { dists: acc });
                }
                level -= 1;
                if (values[level] as usize) + 1 < supports[level] {
                    values[level] += 1;
                    break;
                }
                values[level] = 0;
            }
        }
        weights[level + 1] = weights[level] * pmfs[level][values[level] as usize];
        level += 1;
    }
}

/// Effect distribution for any combination function.
pub fn effect_distribution(
    structure: &ModelStructure,
    params: &ModelParams,
    assignment: &[u32],
) -> Result<EffectDistribution> {
    match structure.combo {
        CombinationFunction::Max => {
            let js = config_indices(structure, assignment)?;
            Ok(EffectDistribution::Finite(nmi_effect_probs(
                structure, params, &js,
            )))
        }
        CombinationFunction::Sum => poisson_nai_effect(structure, params, assignment),
        CombinationFunction::NOf(_) | CombinationFunction::Parity => {
            let js = config_indices(structure, assignment)?;
            let probs = enumerate_effect_probs(structure, params, &js)?;
            Ok(EffectDistribution::Finite(probs))
        }
    }
}

/// Effect pmf by full enumeration (finite mechanism domains only).
fn enumerate_effect_probs(
    structure: &ModelStructure,
    params: &ModelParams,
    js: &[usize],
) -> Result<Vec<f64>> {
    let m = structure.mechanisms.len();
    let supports: Vec<usize> = structure
        .mechanisms
        .iter()
        .enumerate()
        .map(|(i, mech)| {
            mech.domain
                .cardinality()
                .ok_or_else(|| Error::InvalidModel(format!("mechanism {} has no finite domain", i)))
        })
        .collect::<Result<_>>()?;
    let size: u128 = supports.iter().map(|&s| s as u128).product();
    if size > DEFAULT_ENUMERATION_CAP {
        return Err(Error::EnumerationCapExceeded {
            size,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    let re = structure
        .effect
        .domain
        .cardinality()
        .ok_or_else(|| Error::InvalidModel("finite effect required".into()))?;
    let mut probs = vec![0.0; re];
    let mut values = vec![0u32; m];
    loop {
        let w: f64 = values
            .iter()
            .enumerate()
            .map(|(i, &v)| mech_row(params, i, js[i])[v as usize])
            .product();
        let eff = eval_combination(structure.combo, &values) as usize;
        if eff < re {
            probs[eff] += w;
        }
        let mut level = m;
        loop {
            if level == 0 {
                return Ok(probs);
            }
            level -= 1;
            if (values[level] as usize) + 1 < supports[level] {
                values[level] += 1;
                break;
            }
            values[level] = 0;
        }
    }
}

/// Posterior over mechanism values dispatched on the combination function.
pub fn mech_posterior(
    structure: &ModelStructure,
    params: &ModelParams,
    assignment: &[u32],
    e: u32,
) -> Result<MechanismPosterior> {
    let js = config_indices(structure, assignment)?;
    mech_posterior_at(structure, params, &js, e)
}

pub(crate) fn mech_posterior_at(
    structure: &ModelStructure,
    params: &ModelParams,
    js: &[usize],
    e: u32,
) -> Result<MechanismPosterior> {
    match structure.combo {
        CombinationFunction::Max => nmi_mech_posterior_at(structure, params, js, e),
        CombinationFunction::Sum => poisson_nai_mech_posterior_at(structure, params, js, e),
        CombinationFunction::NOf(_) | CombinationFunction::Parity => {
            brute_force_posterior_at(structure, params, js, e, DEFAULT_ENUMERATION_CAP)
        }
    }
}

/// log p(c, e | theta) = sum of cause-prior logs + log p(E=e | c).
/// Returns negative infinity for zero-probability cases.
pub fn loglik_case(structure: &ModelStructure, params: &ModelParams, case: &[u32]) -> Result<f64> {
    let (assignment, e) = Dataset::split_case(case);
    let mut ll = 0.0;
    for (c, &s) in assignment.iter().enumerate() {
        let p = params.cause_priors[c]
            .get(s as usize)
            .copied()
            .ok_or_else(|| Error::StateOutOfRange {
                cause: structure.causes[c].name.clone(),
                state: s,
                cardinality: params.cause_priors[c].len(),
            })?;
        if p > 0.0 {
            ll += p.ln();
        } else {
            return Ok(f64::NEG_INFINITY);
        }
    }
    let dist = effect_distribution(structure, params, assignment)?;
    Ok(ll + dist.ln_pmf(e))
}

/// Sum of per-case log-likelihoods.
pub fn dataset_loglik(
    structure: &ModelStructure,
    params: &ModelParams,
    data: &Dataset,
) -> Result<f64> {
    let mut total = 0.0;
    for row in &data.rows {
        total += loglik_case(structure, params, row)?;
    }
    Ok(total)
}
