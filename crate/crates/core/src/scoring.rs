//! Complete-data marginal likelihood, BIC, and the raw and adjusted
//! Cheeseman-Stutz scores, plus normalized model posteriors.
//!
//! The adjusted score treats the E-step's expected statistics as an
//! imaginary complete data set D', computes its closed-form Dirichlet
//! marginal, and corrects with likelihood and dimension terms so the
//! approximation stays asymptotically aligned with the observed data.

use statrs::function::gamma::ln_gamma;

use crate::em::{e_step, ExpectedStats, MechStats};
use crate::error::{Error, Result};
use crate::inference::dataset_loglik;
use crate::model::{Dataset, DirichletPrior, MechParams, MechPrior, ModelParams, ModelStructure};

/// Which approximation of the log marginal likelihood to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    CsAdjusted,
    CsRaw,
    Bic,
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::CsAdjusted => "cs",
            Criterion::CsRaw => "cs-raw",
            Criterion::Bic => "bic",
        }
    }

    pub fn parse(s: &str) -> Option<Criterion> {
        match s {
            "cs" => Some(Criterion::CsAdjusted),
            "cs-raw" => Some(Criterion::CsRaw),
            "bic" => Some(Criterion::Bic),
            _ => None,
        }
    }
}

/// One scored candidate; serialized as a CSV row per (model, N, criterion).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub model_id: String,
    pub n: usize,
    pub criterion: Criterion,
    pub log_score: f64,
    pub dim: usize,
    pub dim_unadjusted: usize,
    pub posterior: f64,
}

/// Dirichlet-multinomial marginal for one family row with real-valued
/// counts: lnG(a) - lnG(a + N) + sum_k [lnG(a_k + N_k) - lnG(a_k)].
fn dirichlet_multinomial_term(counts: &[f64], alphas: &[f64]) -> f64 {
    let a: f64 = alphas.iter().sum();
    let n: f64 = counts.iter().sum();
    let mut v = ln_gamma(a) - ln_gamma(a + n);
    for (&nk, &ak) in counts.iter().zip(alphas) {
        v += ln_gamma(ak + nk) - ln_gamma(ak);
    }
    v
}

/// Closed-form log marginal likelihood of a complete (possibly fractional)
/// data set: the product of Dirichlet-multinomial terms over cause priors
/// and every unclamped mechanism row. Clamped rows carry no parameters and
/// contribute a unit factor. Poisson families are not scorable this way.
pub fn complete_data_log_marginal(
    structure: &ModelStructure,
    stats: &ExpectedStats,
    prior: &DirichletPrior,
    clamps: Option<&ModelParams>,
) -> Result<f64> {
    let mut total = 0.0;
    for (counts, alphas) in stats.cause_counts.iter().zip(&prior.cause_alphas) {
        total += dirichlet_multinomial_term(counts, alphas);
    }
    for (i, (mech_stats, mech_prior)) in stats.mechanisms.iter().zip(&prior.mech_priors).enumerate()
    {
        match (mech_stats, mech_prior) {
            (MechStats::Table(counts), MechPrior::Table(alphas)) => {
                for (j, row_counts) in counts.iter().enumerate() {
                    let clamped = clamps
                        .map(|p| p.mechanisms[i].is_clamped(j))
                        .unwrap_or(false);
                    if !clamped {
                        total += dirichlet_multinomial_term(row_counts, &alphas[j]);
                    }
                }
            }
            (MechStats::Poisson { .. }, _) => {
                return Err(Error::PoissonNotScorable { mechanism: i });
            }
            _ => unreachable!("mismatched prior kinds"),
        }
    }
    let _ = structure;
    Ok(total)
}

/// Complete-data log-likelihood with fractional counts:
/// sum E[N] * ln(theta), cause terms included. Zero counts contribute
/// nothing regardless of theta.
pub fn complete_data_loglik(stats: &ExpectedStats, params: &ModelParams) -> Result<f64> {
    let weighted = |counts: &[f64], theta: &[f64]| -> f64 {
        counts
            .iter()
            .zip(theta)
            .map(|(&n, &t)| {
                if n > 0.0 {
                    if t > 0.0 {
                        n * t.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    0.0
                }
            })
            .sum()
    };
    let mut total = 0.0;
    for (counts, theta) in stats.cause_counts.iter().zip(&params.cause_priors) {
        total += weighted(counts, theta);
    }
    for (i, (mech_stats, mech_params)) in
        stats.mechanisms.iter().zip(&params.mechanisms).enumerate()
    {
        match (mech_stats, mech_params) {
            (MechStats::Table(counts), MechParams::Table { rows, .. }) => {
                for (row_counts, row) in counts.iter().zip(rows) {
                    total += weighted(row_counts, row);
                }
            }
            (MechStats::Poisson { .. }, _) => {
                return Err(Error::PoissonNotScorable { mechanism: i });
            }
            _ => unreachable!("mismatched parameter kinds"),
        }
    }
    Ok(total)
}

/// log p(D | theta-hat) - (d/2) ln N.
pub fn bic_score(loglik_at_mode: f64, dim: usize, n: usize) -> f64 {
    loglik_at_mode - 0.5 * dim as f64 * (n as f64).ln()
}

/// Raw Cheeseman-Stutz: one E-step at theta-hat forms the imaginary data,
/// then the exact complete-data marginal of those fractional counts.
pub fn cs_raw(
    structure: &ModelStructure,
    data: &Dataset,
    params_hat: &ModelParams,
    prior: &DirichletPrior,
) -> Result<f64> {
    let stats = e_step(structure, params_hat, data)?;
    complete_data_log_marginal(structure, &stats, prior, Some(params_hat))
}

/// Adjusted Cheeseman-Stutz, the five-term expression:
/// cs_raw - log p(D'|theta) + (d'/2) ln N + log p(D|theta) - (d/2) ln N.
pub fn cs_adjusted(
    structure: &ModelStructure,
    data: &Dataset,
    params_hat: &ModelParams,
    prior: &DirichletPrior,
    dim: usize,
    dim_unadjusted: usize,
) -> Result<f64> {
    let n = data.len() as f64;
    let stats = e_step(structure, params_hat, data)?;
    let raw = complete_data_log_marginal(structure, &stats, prior, Some(params_hat))?;
    let imaginary_ll = complete_data_loglik(&stats, params_hat)?;
    let observed_ll = dataset_loglik(structure, params_hat, data)?;
    Ok(
        raw - imaginary_ll + 0.5 * dim_unadjusted as f64 * n.ln() + observed_ll
            - 0.5 * dim as f64 * n.ln(),
    )
}

/// Score one fitted candidate under the selected criterion.
pub fn score_fitted(
    structure: &ModelStructure,
    data: &Dataset,
    params_hat: &ModelParams,
    prior: &DirichletPrior,
    criterion: Criterion,
    dim: usize,
    dim_unadjusted: usize,
) -> Result<f64> {
    match criterion {
        Criterion::Bic => Ok(bic_score(
            dataset_loglik(structure, params_hat, data)?,
            dim,
            data.len(),
        )),
        Criterion::CsRaw => cs_raw(structure, data, params_hat, prior),
        Criterion::CsAdjusted => {
            cs_adjusted(structure, data, params_hat, prior, dim, dim_unadjusted)
        }
    }
}

/// Normalize log-scores into posteriors under a uniform model prior.
pub fn model_posteriors(log_scores: &[f64]) -> Vec<f64> {
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        let u = 1.0 / log_scores.len().max(1) as f64;
        return vec![u; log_scores.len()];
    }
    let shifted: Vec<f64> = log_scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = shifted.iter().sum();
    shifted.into_iter().map(|w| w / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{em_fit, EmOptions, FitMode, Init};
    use crate::model::{CombinationFunction, Mechanism, VariableSpec};
    use approx::assert_relative_eq;

    #[test]
    fn dirichlet_multinomial_hand_integrals() {
        // empty data: marginal 1
        assert_relative_eq!(dirichlet_multinomial_term(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        // one observation under a uniform prior: integral of theta = 1/2
        assert_relative_eq!(
            dirichlet_multinomial_term(&[1.0, 0.0], &[1.0, 1.0]),
            0.5f64.ln(),
            epsilon = 1e-12
        );
        // counts (2,1): integral of theta^2 (1-theta) = 1/12
        assert_relative_eq!(
            dirichlet_multinomial_term(&[2.0, 1.0], &[1.0, 1.0]),
            (1.0f64 / 12.0).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn prior_domination_at_large_alpha() {
        // with huge alphas the marginal approaches sum_k N_k ln(prior mean)
        let term = dirichlet_multinomial_term(&[3.0, 1.0], &[1e6, 1e6]);
        let expect = 4.0 * 0.5f64.ln();
        assert!((term - expect).abs() / expect.abs() < 1e-3);
    }

    #[test]
    fn bic_arithmetic() {
        assert_eq!(bic_score(-50.0, 0, 100), -50.0);
        assert_relative_eq!(
            bic_score(-100.0, 7, 100),
            -100.0 - 3.5 * 100f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(bic_score(-100.0, 7, 1), -100.0);
    }

    #[test]
    fn posterior_normalization() {
        let p = model_posteriors(&[0.0; 5]);
        assert_eq!(p, vec![0.2; 5]);
        let p = model_posteriors(&[0.0, -(3.0f64.ln())]);
        assert_relative_eq!(p[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.25, epsilon = 1e-12);
        assert_eq!(model_posteriors(&[-17.0]), vec![1.0]);
        // invariant to adding a constant to every score
        let a = model_posteriors(&[-3.0, -1.0, -2.0]);
        let b = model_posteriors(&[97.0, 99.0, 98.0]);
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        // permutation equivariance
        let c = model_posteriors(&[-1.0, -3.0, -2.0]);
        assert_relative_eq!(a[0], c[1], epsilon = 1e-15);
        assert_relative_eq!(a[1], c[0], epsilon = 1e-15);
    }

    /// Single mechanism over all causes with the effect's own domain: the
    /// mechanism value is observed through the effect, nothing is hidden.
    fn hidden_free_model() -> (ModelStructure, Dataset) {
        let s = ModelStructure {
            causes: vec![VariableSpec::finite("C1", 2), VariableSpec::finite("C2", 2)],
            effect: VariableSpec::finite("E", 2),
            mechanisms: vec![Mechanism::multinomial(vec![0, 1], 2)],
            combo: CombinationFunction::Max,
        };
        let data = Dataset {
            names: vec!["C1".into(), "C2".into(), "E".into()],
            rows: vec![
                vec![0, 0, 0],
                vec![0, 1, 1],
                vec![1, 0, 1],
                vec![1, 1, 1],
                vec![0, 0, 1],
                vec![1, 1, 0],
                vec![0, 1, 0],
                vec![0, 0, 0],
            ],
        };
        (s, data)
    }

    #[test]
    fn cs_adjusted_equals_exact_marginal_when_nothing_hidden() {
        let (s, data) = hidden_free_model();
        let prior = DirichletPrior::unit(&s);
        let opts = EmOptions {
            mode: FitMode::Map,
            seed: 9,
            restarts: 2,
            ..Default::default()
        };
        let fit = em_fit(&s, &data, &prior, &opts).unwrap();
        let d = s.unadjusted_dimension(None);
        let adjusted = cs_adjusted(&s, &data, &fit.params, &prior, d, d).unwrap();
        // D' = D exactly, so the correction cancels and the score is the
        // closed-form marginal of the actual counts
        let stats = e_step(&s, &fit.params, &data).unwrap();
        let exact = complete_data_log_marginal(&s, &stats, &prior, None).unwrap();
        assert_relative_eq!(adjusted, exact, epsilon = 1e-10);
        let raw = cs_raw(&s, &data, &fit.params, &prior).unwrap();
        assert_relative_eq!(adjusted, raw, epsilon = 1e-10);
    }

    #[test]
    fn equal_dims_reduce_correction_to_likelihood_gap() {
        // hidden structure present (two mechanisms), d set equal to d':
        // cs_adjusted - cs_raw must equal log p(D|th) - log p(D'|th)
        let s = ModelStructure {
            causes: vec![VariableSpec::finite("C1", 2)],
            effect: VariableSpec::finite("E", 2),
            mechanisms: vec![
                Mechanism::multinomial(vec![0], 2),
                Mechanism::multinomial(vec![], 2),
            ],
            combo: CombinationFunction::Max,
        };
        let data = Dataset {
            names: vec!["C1".into(), "E".into()],
            rows: vec![vec![0, 1], vec![1, 0], vec![1, 1], vec![0, 0], vec![1, 1]],
        };
        let prior = DirichletPrior::unit(&s);
        let opts = EmOptions {
            mode: FitMode::Map,
            seed: 21,
            restarts: 2,
            ..Default::default()
        };
        let fit = em_fit(&s, &data, &prior, &opts).unwrap();
        let d = s.unadjusted_dimension(None);
        let adjusted = cs_adjusted(&s, &data, &fit.params, &prior, d, d).unwrap();
        let raw = cs_raw(&s, &data, &fit.params, &prior).unwrap();
        let stats = e_step(&s, &fit.params, &data).unwrap();
        let gap = dataset_loglik(&s, &fit.params, &data).unwrap()
            - complete_data_loglik(&stats, &fit.params).unwrap();
        assert_relative_eq!(adjusted - raw, gap, epsilon = 1e-10);
    }

    #[test]
    fn poisson_candidates_are_not_closed_form_scorable() {
        let s = ModelStructure {
            causes: vec![VariableSpec::finite("C1", 2)],
            effect: VariableSpec::counting("E"),
            mechanisms: vec![Mechanism::poisson(vec![0])],
            combo: CombinationFunction::Sum,
        };
        let p = ModelParams {
            cause_priors: vec![vec![0.5, 0.5]],
            mechanisms: vec![MechParams::Rates(vec![1.0, 2.0])],
        };
        let data = Dataset {
            names: vec!["C1".into(), "E".into()],
            rows: vec![vec![0, 1], vec![1, 3]],
        };
        let prior = DirichletPrior::unit(&s);
        assert!(matches!(
            cs_raw(&s, &data, &p, &prior),
            Err(Error::PoissonNotScorable { .. })
        ));
        // BIC still applies
        let ll = dataset_loglik(&s, &p, &data).unwrap();
        let b = score_fitted(&s, &data, &p, &prior, Criterion::Bic, 2, 2).unwrap();
        assert_relative_eq!(b, ll - 1.0 * (2f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn fixed_init_em_keeps_scoring_deterministic() {
        let (s, data) = hidden_free_model();
        let prior = DirichletPrior::unit(&s);
        let opts = EmOptions {
            mode: FitMode::Map,
            seed: 4,
            restarts: 1,
            init: Init::Random,
            ..Default::default()
        };
        let fit = em_fit(&s, &data, &prior, &opts).unwrap();
        let a = cs_raw(&s, &data, &fit.params, &prior).unwrap();
        let b = cs_raw(&s, &data, &fit.params, &prior).unwrap();
        assert_eq!(a, b);
    }
}
