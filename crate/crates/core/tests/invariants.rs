//! Cross-module invariants and pinned regression values.

use cim_core::catalog::{catalog, catalog_entry, forward_sample, reference_params};
use cim_core::dimension::{flatten_params, regular_dimension, template_params, DimensionOptions};
use cim_core::em::{em_fit, EmOptions, FitMode};
use cim_core::inference::dataset_loglik;
use cim_core::model::{Dataset, DirichletPrior};
use cim_core::scoring::{bic_score, cs_adjusted, cs_raw};

/// First verified run pinned as a regression value.
#[test]
fn cs_raw_golden_value() {
    let entry = catalog_entry("F1").unwrap();
    let gen = reference_params(&entry, 5);
    let data = forward_sample(&entry.structure, &gen, 100, 6).unwrap();
    let prior = DirichletPrior::unit(&entry.structure);
    let opts = EmOptions {
        mode: FitMode::Map,
        seed: 7,
        restarts: 5,
        ..Default::default()
    };
    let fit = em_fit(&entry.structure, &data, &prior, &opts).unwrap();
    let raw = cs_raw(&entry.structure, &data, &fit.params, &prior).unwrap();
    assert!(
        (raw - -307.015701936584).abs() < 1e-9,
        "cs_raw regression moved: {}",
        raw
    );
}

/// The adjusted score and BIC agree to O(1): the gap between them must not
/// grow with N (successive-gap ratio <= 1.5 as N doubles 100 -> 6400).
#[test]
fn cs_and_bic_agree_to_constant_order() {
    let entry = catalog_entry("F3").unwrap();
    let gen = reference_params(&entry, 33);
    let full = forward_sample(&entry.structure, &gen, 6400, 34).unwrap();
    let prior = DirichletPrior::unit(&entry.structure);
    let (d, d_unadj) = (9usize, 11usize);
    let mut gaps = Vec::new();
    let mut n = 100usize;
    while n <= 6400 {
        let data = Dataset {
            names: full.names.clone(),
            rows: full.rows[..n].to_vec(),
        };
        let opts = EmOptions {
            mode: FitMode::Map,
            seed: 35,
            restarts: 3,
            ..Default::default()
        };
        let fit = em_fit(&entry.structure, &data, &prior, &opts).unwrap();
        let adj = cs_adjusted(&entry.structure, &data, &fit.params, &prior, d, d_unadj).unwrap();
        let bic = bic_score(
            dataset_loglik(&entry.structure, &fit.params, &data).unwrap(),
            d,
            n,
        );
        gaps.push((adj - bic).abs().max(1e-6));
        n *= 2;
    }
    for w in gaps.windows(2) {
        assert!(w[1] / w[0] <= 1.5, "cs-bic gap grew too fast: {:?}", gaps);
    }
}

/// Generic rank is attained at nearly every sampled interior point.
#[test]
fn rank_is_stable_across_points() {
    for entry in catalog() {
        let report = regular_dimension(
            entry.id,
            &entry.structure,
            None,
            &DimensionOptions {
                n_points: 10,
                seed: 99,
                ..Default::default()
            },
        )
        .unwrap();
        let at_max = report
            .point_ranks
            .iter()
            .filter(|&&r| r == report.dim)
            .count();
        assert!(
            at_max * 10 >= report.point_ranks.len() * 9,
            "{}: ranks {:?}",
            entry.id,
            report.point_ranks
        );
        assert!(report.sv_gap >= 1e3 || report.sv_gap.is_infinite());
    }
}

/// The raw parameter count equals the flattened coordinate length for every
/// catalog model.
#[test]
fn unadjusted_dimension_matches_flattening() {
    for entry in catalog() {
        let template = template_params(&entry.structure, None);
        assert_eq!(
            flatten_params(&entry.structure, &template).len(),
            entry.structure.unadjusted_dimension(Some(&template)),
            "{}",
            entry.id
        );
        assert_eq!(
            entry.structure.unadjusted_dimension(None),
            entry.expected_dim_unadjusted,
            "{}",
            entry.id
        );
    }
}

/// Sampling a prefix is the same as sampling fewer cases, for every model.
#[test]
fn sampling_prefix_stability_across_catalog() {
    for entry in catalog() {
        let params = reference_params(&entry, 7);
        let long = forward_sample(&entry.structure, &params, 300, 70).unwrap();
        let short = forward_sample(&entry.structure, &params, 120, 70).unwrap();
        assert_eq!(&long.rows[..120], &short.rows[..], "{}", entry.id);
    }
}
