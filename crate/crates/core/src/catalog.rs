//! The five-model NMI catalog used by the simulation study, reference
//! parameter generation, and forward sampling.
//!
//! Every catalog model has three binary causes C1..C3, a binary effect, and
//! the max combination; they differ in how mechanisms cover the causes:
//!
//!   F1  {C1} {C2} {C3}
//!   F2  {C1,C2} {C3}
//!   F3  {C1,C2} {C1,C3}
//!   F4  {C1,C2} {C1,C3} {C2,C3}
//!   F5  {C1,C2,C3}
//!
//! Each entry carries reference dimensions that the acceptance suite
//! checks against `dimension::regular_dimension`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::error::Result;
use crate::exec;
use crate::inference::eval_combination;
use crate::model::{
    CombinationFunction, Dataset, MechParams, Mechanism, MechanismFamily, ModelParams,
    ModelStructure, VariableSpec,
};

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub structure: ModelStructure,
    /// Reference adjusted dimension the acceptance suite enforces.
    pub expected_dim: usize,
    /// Reference raw free-parameter count.
    pub expected_dim_unadjusted: usize,
}

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

/// The five study models, in order F1..F5.
pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            id: "F1",
            structure: binary_nmi(&[&[0], &[1], &[2]]),
            expected_dim: 7,
            expected_dim_unadjusted: 9,
        },
        CatalogEntry {
            id: "F2",
            structure: binary_nmi(&[&[0, 1], &[2]]),
            expected_dim: 7,
            expected_dim_unadjusted: 9,
        },
        CatalogEntry {
            id: "F3",
            structure: binary_nmi(&[&[0, 1], &[0, 2]]),
            expected_dim: 9,
            expected_dim_unadjusted: 11,
        },
        CatalogEntry {
            id: "F4",
            structure: binary_nmi(&[&[0, 1], &[0, 2], &[1, 2]]),
            expected_dim: 10,
            expected_dim_unadjusted: 15,
        },
        CatalogEntry {
            id: "F5",
            structure: binary_nmi(&[&[0, 1, 2]]),
            expected_dim: 11,
            expected_dim_unadjusted: 11,
        },
    ]
}

pub fn catalog_entry(id: &str) -> Option<CatalogEntry> {
    catalog()
        .into_iter()
        .find(|e| e.id.eq_ignore_ascii_case(id))
}

const CLIP_LO: f64 = 0.05;
const CLIP_HI: f64 = 0.95;

fn clipped_simplex(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let sum: f64 = row.iter().sum();
    for v in &mut row {
        *v = (*v / sum).clamp(CLIP_LO, CLIP_HI);
    }
    let sum: f64 = row.iter().sum();
    for v in &mut row {
        *v /= sum;
    }
    row
}

/// Seeded interior generating parameters: uniform-simplex rows clipped to
/// [0.05, 0.95] and renormalized.
pub fn reference_params(entry: &CatalogEntry, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(exec::mix_seed(seed, 0x9e3d));
    let structure = &entry.structure;
    let cause_priors = structure
        .causes
        .iter()
        .map(|c| clipped_simplex(&mut rng, c.domain.cardinality().unwrap_or(1)))
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
                    MechParams::table((0..q).map(|_| clipped_simplex(&mut rng, r)).collect())
                }
                MechanismFamily::Poisson => {
                    MechParams::Rates((0..q).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect())
                }
            }
        })
        .collect();
    ModelParams {
        cause_priors,
        mechanisms,
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> u32 {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return k as u32;
        }
    }
    probs.len() as u32 - 1
}

/// Forward-sample n complete cases: causes from their priors, each
/// mechanism from its row at the observed parent configuration, the effect
/// by the combination function. One RNG stream in case order, so a longer
/// run's prefix equals a shorter run with the same seed.
pub fn forward_sample(
    structure: &ModelStructure,
    params: &ModelParams,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    forward_sample_full(structure, params, n, seed).map(|(data, _)| data)
}

/// As `forward_sample`, also returning the latent mechanism values per case.
/// The emitted dataset is byte-identical to `forward_sample`'s.
pub fn forward_sample_full(
    structure: &ModelStructure,
    params: &ModelParams,
    n: usize,
    seed: u64,
) -> Result<(Dataset, Vec<Vec<u32>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = structure.mechanisms.len();
    let mut rows = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    let mut mech_values = vec![0u32; m];
    for _ in 0..n {
        let mut row = Vec::with_capacity(structure.causes.len() + 1);
        for prior in &params.cause_priors {
            row.push(sample_categorical(&mut rng, prior));
        }
        for i in 0..m {
            let j = structure.parent_config_index(i, &row)?;
            mech_values[i] = match &params.mechanisms[i] {
                MechParams::Table { rows: table, .. } => sample_categorical(&mut rng, &table[j]),
                MechParams::Rates(rates) => {
                    let poisson = rand_distr::Poisson::new(rates[j]).expect("positive rate");
                    let draw: f64 = poisson.sample(&mut rng);
                    draw as u32
                }
            };
        }
        row.push(eval_combination(structure.combo, &mech_values));
        rows.push(row);
        latents.push(mech_values.clone());
    }
    let names = structure
        .causes
        .iter()
        .map(|c| c.name.clone())
        .chain(std::iter::once(structure.effect.name.clone()))
        .collect();
    Ok((Dataset { names, rows }, latents))
}
