//! Regular model dimension as the generic rank of the Jacobian of the map
//! from network parameters to observable joint probabilities.
//!
//! The map is differentiated numerically (central differences) and the rank
//! read off the singular values. The regular dimension is the maximum rank
//! over several interior parameter draws; per-point ranks and the
//! singular-value gap at the cut are reported so a non-generic draw is
//! visible rather than silent.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::exec;
use crate::inference::effect_distribution;
use crate::model::{Domain, MechParams, MechanismFamily, ModelParams, ModelStructure};

#[derive(Debug, Clone, Copy)]
pub struct DimensionOptions {
    pub n_points: usize,
    pub seed: u64,
    pub fd_step: f64,
    pub rank_tol: f64,
}

impl Default for DimensionOptions {
    fn default() -> Self {
        DimensionOptions {
            n_points: 10,
            seed: 0,
            fd_step: 1e-5,
            rank_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DimensionReport {
    pub model_id: String,
    /// Adjusted dimension: maximum numerical Jacobian rank over the points.
    pub dim: usize,
    /// Raw free-parameter count.
    pub dim_unadjusted: usize,
    pub point_ranks: Vec<usize>,
    /// sigma_rank / sigma_rank+1 at the first point attaining `dim`
    /// (infinite when the cut falls past the last singular value).
    pub sv_gap: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl DimensionReport {
    pub fn min_rank(&self) -> usize {
        self.point_ranks.iter().copied().min().unwrap_or(0)
    }

    pub fn max_rank(&self) -> usize {
        self.point_ranks.iter().copied().max().unwrap_or(0)
    }
}

/// Free coordinates of a parameter vector, in documented order: each cause
/// prior's first r-1 entries, then per mechanism each unclamped row's first
/// r_i-1 entries (Poisson rates verbatim).
pub fn flatten_params(structure: &ModelStructure, params: &ModelParams) -> Vec<f64> {
    let mut out = Vec::new();
    for prior in &params.cause_priors {
        out.extend_from_slice(&prior[..prior.len() - 1]);
    }
    for mech in &params.mechanisms {
        match mech {
            MechParams::Table { rows, clamps } => {
                for (j, row) in rows.iter().enumerate() {
                    if clamps[j].is_none() {
                        out.extend_from_slice(&row[..row.len() - 1]);
                    }
                }
            }
            MechParams::Rates(rates) => out.extend_from_slice(rates),
        }
    }
    let _ = structure;
    out
}

/// Inverse of `flatten_params`; the template supplies shapes and clamped
/// rows. Each row's last entry is one minus the free entries.
pub fn unflatten_params(
    structure: &ModelStructure,
    template: &ModelParams,
    flat: &[f64],
) -> ModelParams {
    fn take_row(flat: &[f64], pos: &mut usize, len: usize) -> Vec<f64> {
        let free = &flat[*pos..*pos + len - 1];
        *pos += len - 1;
        let mut row = free.to_vec();
        row.push(1.0 - free.iter().sum::<f64>());
        row
    }
    let mut pos = 0usize;
    let cause_priors = template
        .cause_priors
        .iter()
        .map(|p| take_row(flat, &mut pos, p.len()))
        .collect();
    let mut mechanisms = Vec::with_capacity(template.mechanisms.len());
    for mech in &template.mechanisms {
        mechanisms.push(match mech {
            MechParams::Table { rows, clamps } => {
                let mut new_rows = Vec::with_capacity(rows.len());
                for (j, row) in rows.iter().enumerate() {
                    if clamps[j].is_some() {
                        new_rows.push(row.clone());
                    } else {
                        new_rows.push(take_row(flat, &mut pos, row.len()));
                    }
                }
                MechParams::Table {
                    rows: new_rows,
                    clamps: clamps.clone(),
                }
            }
            MechParams::Rates(rates) => {
                let new = flat[pos..pos + rates.len()].to_vec();
                pos += rates.len();
                MechParams::Rates(new)
            }
        });
    }
    let _ = structure;
    ModelParams {
        cause_priors,
        mechanisms,
    }
}

/// Effect-value cells per cause configuration. Finite effects use their
/// full domain; counting effects are truncated where the Poisson tail at
/// the evaluation point is negligible.
fn effect_cell_count(structure: &ModelStructure, params: &ModelParams) -> usize {
    match structure.effect.domain {
        Domain::Finite(r) => r,
        Domain::Counting => {
            let mut max_rate: f64 = 0.0;
            for assignment in structure.enumerate_cause_assignments() {
                let mut total = 0.0;
                for i in 0..structure.mechanisms.len() {
                    if let Ok(j) = structure.parent_config_index(i, &assignment) {
                        if let MechParams::Rates(rates) = &params.mechanisms[i] {
                            total += rates[j];
                        }
                    }
                }
                max_rate = max_rate.max(total);
            }
            (max_rate + 10.0 * max_rate.sqrt()).ceil().max(20.0) as usize + 1
        }
    }
}

/// Joint p(c, e) over all cause-configuration x effect-value cells in
/// row-major order, dropping the final cell (normalization) for finite
/// effects.
pub fn observable_map(
    structure: &ModelStructure,
    template: &ModelParams,
    flat: &[f64],
) -> Result<Vec<f64>> {
    let cells = effect_cell_count(structure, template);
    observable_map_with_cells(structure, template, flat, cells)
}

fn observable_map_with_cells(
    structure: &ModelStructure,
    template: &ModelParams,
    flat: &[f64],
    effect_cells: usize,
) -> Result<Vec<f64>> {
    let params = unflatten_params(structure, template, flat);
    let mut out = Vec::new();
    for assignment in structure.enumerate_cause_assignments() {
        let pc: f64 = assignment
            .iter()
            .enumerate()
            .map(|(c, &s)| params.cause_priors[c][s as usize])
            .product();
        let dist = effect_distribution(structure, &params, &assignment)?;
        for e in 0..effect_cells {
            out.push(pc * dist.pmf(e as u32));
        }
    }
    if matches!(structure.effect.domain, Domain::Finite(_)) {
        out.pop();
    }
    Ok(out)
}

/// Numerical Jacobian rank at one interior point: central differences with
/// step `fd_step`, then the count of singular values above
/// rank_tol * sigma_max. Also returns the singular-value ratio at the cut.
pub fn jacobian_rank(
    structure: &ModelStructure,
    template: &ModelParams,
    theta0: &[f64],
    fd_step: f64,
    rank_tol: f64,
) -> Result<(usize, f64)> {
    let cells = effect_cell_count(structure, &unflatten_params(structure, template, theta0));
    let cols = theta0.len();
    let f0 = observable_map_with_cells(structure, template, theta0, cells)?;
    let rows = f0.len();
    let mut jac = DMatrix::<f64>::zeros(rows, cols);
    for p in 0..cols {
        let mut plus = theta0.to_vec();
        plus[p] += fd_step;
        let mut minus = theta0.to_vec();
        minus[p] -= fd_step;
        let fp = observable_map_with_cells(structure, template, &plus, cells)?;
        let fm = observable_map_with_cells(structure, template, &minus, cells)?;
        for r in 0..rows {
            jac[(r, p)] = (fp[r] - fm[r]) / (2.0 * fd_step);
        }
    }
    let mut sv: Vec<f64> = jac
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    if !(sigma_max > 0.0) {
        return Err(Error::DegenerateObservableMap);
    }
    let rank = sv.iter().filter(|&&s| s > rank_tol * sigma_max).count();
    let gap = if rank < sv.len() && sv[rank] > 0.0 {
        sv[rank - 1] / sv[rank]
    } else {
        f64::INFINITY
    };
    Ok((rank, gap))
}

/// Interior parameter draw for rank sampling: uniform-simplex rows with all
/// entries at least 1e-3 (re-drawn otherwise) so the finite differences stay
/// well conditioned; Poisson rates from Gamma(2,1) bounded below.
fn sample_interior(
    structure: &ModelStructure,
    template: &ModelParams,
    rng: &mut ChaCha8Rng,
) -> ModelParams {
    const MIN_ENTRY: f64 = 1e-3;
    fn simplex(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        loop {
            let mut row: Vec<f64> = (0..len)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let sum: f64 = row.iter().sum();
            for v in &mut row {
                *v /= sum;
            }
            if row.iter().all(|&v| v >= MIN_ENTRY) {
                return row;
            }
        }
    }
    let cause_priors = template
        .cause_priors
        .iter()
        .map(|p| simplex(rng, p.len()))
        .collect();
    let mut mechanisms = Vec::with_capacity(template.mechanisms.len());
    for mech in &template.mechanisms {
        mechanisms.push(match mech {
            MechParams::Table { rows, clamps } => MechParams::Table {
                rows: rows
                    .iter()
                    .enumerate()
                    .map(|(j, row)| {
                        if clamps[j].is_some() {
                            row.clone()
                        } else {
                            simplex(rng, row.len())
                        }
                    })
                    .collect(),
                clamps: clamps.clone(),
            },
            MechParams::Rates(rates) => {
                let gamma = rand_distr::Gamma::new(2.0, 1.0).expect("valid Gamma");
                MechParams::Rates(
                    rates
                        .iter()
                        .map(|_| loop {
                            let v: f64 = gamma.sample(rng);
                            if v >= 0.05 {
                                break v;
                            }
                        })
                        .collect(),
                )
            }
        });
    }
    let _ = structure;
    ModelParams {
        cause_priors,
        mechanisms,
    }
}

/// Template parameters with the right shapes (uniform rows, unit rates),
/// honoring an optional clamp specification.
pub fn template_params(
    structure: &ModelStructure,
    clamps: Option<&[Vec<Option<usize>>]>,
) -> ModelParams {
    let cause_priors = structure
        .causes
        .iter()
        .map(|c| {
            let r = c.domain.cardinality().unwrap_or(1);
            vec![1.0 / r as f64; r]
        })
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
                            None => vec![1.0 / r as f64; r],
                        })
                        .collect();
                    MechParams::Table {
                        rows,
                        clamps: mech_clamps,
                    }
                }
                MechanismFamily::Poisson => MechParams::Rates(vec![1.0; q]),
            }
        })
        .collect();
    ModelParams {
        cause_priors,
        mechanisms,
    }
}

/// Regular (almost-everywhere) dimension: the maximum Jacobian rank over
/// independent interior draws.
pub fn regular_dimension(
    id: &str,
    structure: &ModelStructure,
    clamps: Option<&[Vec<Option<usize>>]>,
    opts: &DimensionOptions,
) -> Result<DimensionReport> {
    let template = template_params(structure, clamps);
    let dim_unadjusted = structure.unadjusted_dimension(Some(&template));

    let results = exec::map_indexed(opts.n_points.max(1), |point| {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::mix_seed(opts.seed, point as u64));
        let params = sample_interior(structure, &template, &mut rng);
        let theta = flatten_params(structure, &params);
        jacobian_rank(structure, &template, &theta, opts.fd_step, opts.rank_tol)
    });

    let mut point_ranks = Vec::with_capacity(results.len());
    let mut gaps = Vec::with_capacity(results.len());
    for r in results {
        let (rank, gap) = r?;
        point_ranks.push(rank);
        gaps.push(gap);
    }
    let dim = point_ranks.iter().copied().max().unwrap_or(0);
    let sv_gap = point_ranks
        .iter()
        .position(|&r| r == dim)
        .map(|i| gaps[i])
        .unwrap_or(f64::INFINITY);
    Ok(DimensionReport {
        model_id: id.to_string(),
        dim,
        dim_unadjusted,
        point_ranks,
        sv_gap,
        n_points: opts.n_points,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CombinationFunction, Mechanism, VariableSpec};
    use approx::assert_relative_eq;

    fn binary_nmi(parent_sets: &[&[usize]]) -> ModelStructure {
        ModelStructure {
            causes: (1..=3)
                .map(|i| VariableSpec::finite(format!("C{}", i), 2))
                .collect(),
            effect: VariableSpec::finite("E", 2),
            mechanisms: parent_sets
                .iter()
                .map(|ps| Mechanism::multinomial(ps.to_vec(), 2))
                .collect(),
            combo: CombinationFunction::Max,
        }
    }

    #[test]
    fn flatten_lengths_match_unadjusted_dimension() {
        for parent_sets in [
            vec![vec![0usize, 1, 2]],
            vec![vec![0], vec![1], vec![2]],
            vec![vec![0, 1], vec![0, 2], vec![1, 2]],
        ] {
            let sets: Vec<&[usize]> = parent_sets.iter().map(|v| v.as_slice()).collect();
            let s = binary_nmi(&sets);
            let t = template_params(&s, None);
            assert_eq!(
                flatten_params(&s, &t).len(),
                s.unadjusted_dimension(Some(&t))
            );
        }
    }

    #[test]
    fn clamped_rows_are_excluded_from_flattening() {
        let s = binary_nmi(&[&[0]]);
        let clamps = vec![vec![Some(0), None]];
        let t = template_params(&s, Some(&clamps));
        // 3 cause params + 1 free row
        assert_eq!(flatten_params(&s, &t).len(), 4);
    }

    #[test]
    fn flatten_round_trips() {
        let s = binary_nmi(&[&[0, 1], &[2]]);
        let t = template_params(&s, None);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sample_interior(&s, &t, &mut rng);
        let flat = flatten_params(&s, &p);
        let back = unflatten_params(&s, &t, &flat);
        for (a, b) in p.cause_priors.iter().zip(&back.cause_priors) {
            for (x, y) in a.iter().zip(b) {
                assert_relative_eq!(x, y, epsilon = 1e-14);
            }
        }
        for (ma, mb) in p.mechanisms.iter().zip(&back.mechanisms) {
            if let (MechParams::Table { rows: ra, .. }, MechParams::Table { rows: rb, .. }) =
                (ma, mb)
            {
                for (a, b) in ra.iter().zip(rb) {
                    for (x, y) in a.iter().zip(b) {
                        assert_relative_eq!(x, y, epsilon = 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn observable_map_shape_and_total_mass() {
        let s = binary_nmi(&[&[0], &[1], &[2]]);
        let t = template_params(&s, None);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = sample_interior(&s, &t, &mut rng);
        let flat = flatten_params(&s, &p);
        let cells = observable_map(&s, &t, &flat).unwrap();
        assert_eq!(cells.len(), 15);
        let sum: f64 = cells.iter().sum();
        assert!(sum < 1.0);
        assert!(sum > 0.0);
        // the dropped cell restores unit mass
        assert_relative_eq!(
            1.0 - sum,
            {
                let params = unflatten_params(&s, &t, &flat);
                let pc: f64 = params.cause_priors.iter().map(|v| v[1]).product();
                pc * effect_distribution(&s, &params, &[1, 1, 1]).unwrap().pmf(1)
            },
            epsilon = 1e-12
        );
    }

    #[test]
    fn identity_model_has_full_rank() {
        // one mechanism over all causes with the effect's domain: the map is
        // a reparameterized identity, so rank equals the parameter count
        let s = binary_nmi(&[&[0, 1, 2]]);
        let report = regular_dimension(
            "full",
            &s,
            None,
            &DimensionOptions {
                n_points: 3,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.dim, 11);
        assert_eq!(report.dim_unadjusted, 11);
    }

    #[test]
    fn independent_mechanisms_lose_rank() {
        let s = binary_nmi(&[&[0], &[1], &[2]]);
        let report = regular_dimension(
            "singles",
            &s,
            None,
            &DimensionOptions {
                n_points: 4,
                seed: 7,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.dim, 7);
        assert_eq!(report.dim_unadjusted, 9);
        assert!(
            report.sv_gap > 1e3,
            "ambiguous rank cut: gap {}",
            report.sv_gap
        );
    }

    #[test]
    fn rank_stable_across_fd_steps() {
        let s = binary_nmi(&[&[0, 1], &[0, 2]]);
        let t = template_params(&s, None);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = sample_interior(&s, &t, &mut rng);
        let theta = flatten_params(&s, &p);
        let mut ranks = Vec::new();
        for step in [1e-4, 1e-5, 1e-6] {
            let (rank, _) = jacobian_rank(&s, &t, &theta, step, 1e-7).unwrap();
            ranks.push(rank);
        }
        assert_eq!(ranks[0], ranks[1]);
        assert_eq!(ranks[1], ranks[2]);
        assert_eq!(ranks[0], 9);
    }

    #[test]
    fn clamping_never_increases_dimension() {
        let s = binary_nmi(&[&[0, 1, 2]]);
        let base = regular_dimension(
            "full",
            &s,
            None,
            &DimensionOptions {
                n_points: 3,
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let clamps = vec![vec![Some(0), None, None, None, None, None, None, None]];
        let clamped = regular_dimension(
            "full+clamp",
            &s,
            Some(&clamps),
            &DimensionOptions {
                n_points: 3,
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(clamped.dim <= base.dim);
        assert_eq!(clamped.dim_unadjusted, 10);
    }

    #[test]
    fn poisson_dimension_counts_identifiable_rates() {
        // two single-parent Poisson mechanisms on one shared cause: the
        // observable rates are Lambda(c) per cause state, so only 2 of the 4
        // rate parameters are identifiable (plus 1 cause prior)
        let s = ModelStructure {
            causes: vec![VariableSpec::finite("C1", 2)],
            effect: VariableSpec::counting("E"),
            mechanisms: vec![Mechanism::poisson(vec![0]), Mechanism::poisson(vec![0])],
            combo: CombinationFunction::Sum,
        };
        let report = regular_dimension(
            "poisson-pair",
            &s,
            None,
            &DimensionOptions {
                n_points: 3,
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.dim_unadjusted, 5);
        assert_eq!(report.dim, 3);
    }
}
