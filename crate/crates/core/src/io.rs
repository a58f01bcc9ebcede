//! External file formats: the JSON model specification, the dataset CSV,
//! and the CSV report writers. Every output carries a format version
//! header; readers reject unknown fields and report line-level diagnostics.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dimension::DimensionReport;
use crate::error::{Error, Result};
use crate::model::{
    validate, CombinationFunction, Dataset, Domain, MechParams, Mechanism, MechanismFamily,
    ModelParams, ModelStructure, VariableSpec,
};
use crate::scoring::ScoredModel;

/// Version string embedded in every file this crate writes.
pub const FORMAT_VERSION: &str = "cim/1";

// ---------------------------------------------------------------------------
// model specification (JSON)

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    causes: Vec<CauseFile>,
    effect: EffectFile,
    combo: ComboFile,
    mechanisms: Vec<MechanismFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<ParamsFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CauseFile {
    name: String,
    cardinality: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EffectFile {
    name: String,
    cardinality: CardinalityFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum CardinalityFile {
    Finite(usize),
    Word(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ComboFile {
    Name(String),
    NOf { nof: u32 },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MechanismFile {
    parents: Vec<String>,
    family: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    cardinality: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    cause_priors: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tables: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rates: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clamps: Option<Vec<ClampFile>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClampFile {
    mechanism: usize,
    config: usize,
    state: usize,
}

fn file_err(path: &Path, message: impl Into<String>) -> Error {
    Error::File {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn structure_to_file(structure: &ModelStructure, params: Option<&ModelParams>) -> ModelFile {
    let causes = structure
        .causes
        .iter()
        .map(|c| CauseFile {
            name: c.name.clone(),
            cardinality: c.domain.cardinality().unwrap_or(0),
        })
        .collect();
    let effect = EffectFile {
        name: structure.effect.name.clone(),
        cardinality: match structure.effect.domain {
            Domain::Finite(r) => CardinalityFile::Finite(r),
            Domain::Counting => CardinalityFile::Word("count".into()),
        },
    };
    let combo = match structure.combo {
        CombinationFunction::Max => ComboFile::Name("max".into()),
        CombinationFunction::Sum => ComboFile::Name("sum".into()),
        CombinationFunction::Parity => ComboFile::Name("parity".into()),
        CombinationFunction::NOf(n) => ComboFile::NOf { nof: n },
    };
    let mechanisms = structure
        .mechanisms
        .iter()
        .map(|m| MechanismFile {
            parents: m
                .parents
                .iter()
                .map(|&p| structure.causes[p].name.clone())
                .collect(),
            family: match m.family {
                MechanismFamily::Multinomial => "multinomial".into(),
                MechanismFamily::Poisson => "poisson".into(),
            },
            cardinality: m.domain.cardinality(),
        })
        .collect();
    let params = params.map(|p| {
        let mut tables = Vec::new();
        let mut rates = Vec::new();
        let mut clamps = Vec::new();
        for (i, mp) in p.mechanisms.iter().enumerate() {
            match mp {
                MechParams::Table {
                    rows,
                    clamps: row_clamps,
                } => {
                    tables.push(rows.clone());
                    for (j, clamp) in row_clamps.iter().enumerate() {
                        if let Some(state) = clamp {
                            clamps.push(ClampFile {
                                mechanism: i,
                                config: j,
                                state: *state,
                            });
                        }
                    }
                }
                MechParams::Rates(r) => rates.push(r.clone()),
            }
        }
        ParamsFile {
            cause_priors: p.cause_priors.clone(),
            tables: (!tables.is_empty()).then_some(tables),
            rates: (!rates.is_empty()).then_some(rates),
            clamps: (!clamps.is_empty()).then_some(clamps),
        }
    });
    ModelFile {
        format: FORMAT_VERSION.to_string(),
        causes,
        effect,
        combo,
        mechanisms,
        params,
    }
}

fn file_to_structure(
    path: &Path,
    file: ModelFile,
) -> Result<(ModelStructure, Option<ModelParams>)> {
    if file.format != FORMAT_VERSION {
        return Err(file_err(
            path,
            format!(
                "unsupported format '{}', expected '{}'",
                file.format, FORMAT_VERSION
            ),
        ));
    }
    let causes: Vec<VariableSpec> = file
        .causes
        .iter()
        .map(|c| VariableSpec::finite(c.name.clone(), c.cardinality))
        .collect();
    let index_by_name: HashMap<&str, usize> = file
        .causes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();
    if index_by_name.len() != causes.len() {
        return Err(file_err(path, "duplicate cause names"));
    }
    let effect = VariableSpec {
        name: file.effect.name.clone(),
        domain: match &file.effect.cardinality {
            CardinalityFile::Finite(r) => Domain::Finite(*r),
            CardinalityFile::Word(w) if w == "count" => Domain::Counting,
            CardinalityFile::Word(w) => {
                return Err(file_err(
                    path,
                    format!("unknown effect cardinality '{}'", w),
                ))
            }
        },
    };
    let combo = match &file.combo {
        ComboFile::Name(n) => match n.as_str() {
            "max" => CombinationFunction::Max,
            "sum" => CombinationFunction::Sum,
            "parity" => CombinationFunction::Parity,
            other => return Err(file_err(path, format!("unknown combination '{}'", other))),
        },
        ComboFile::NOf { nof } => CombinationFunction::NOf(*nof),
    };
    let effect_card = effect.domain.cardinality();
    let mechanisms = file
        .mechanisms
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let parents = m
                .parents
                .iter()
                .map(|name| {
                    index_by_name.get(name.as_str()).copied().ok_or_else(|| {
                        file_err(path, format!("mechanism {}: unknown parent '{}'", i, name))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            match m.family.as_str() {
                "multinomial" => {
                    let card = m.cardinality.or(effect_card).ok_or_else(|| {
                        file_err(path, format!("mechanism {}: cardinality required", i))
                    })?;
                    Ok(Mechanism::multinomial(parents, card))
                }
                "poisson" => {
                    if m.cardinality.is_some() {
                        return Err(file_err(
                            path,
                            format!("mechanism {}: poisson mechanisms take no cardinality", i),
                        ));
                    }
                    Ok(Mechanism::poisson(parents))
                }
                other => Err(file_err(path, format!("unknown family '{}'", other))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let structure = ModelStructure {
        causes,
        effect,
        mechanisms,
        combo,
    };

    let params = match file.params {
        None => None,
        Some(pf) => {
            let mut tables = pf.tables.unwrap_or_default().into_iter();
            let mut rates = pf.rates.unwrap_or_default().into_iter();
            let mut mech_params: Vec<MechParams> = structure
                .mechanisms
                .iter()
                .enumerate()
                .map(|(i, m)| match m.family {
                    MechanismFamily::Multinomial => {
                        let rows = tables.next().ok_or_else(|| {
                            file_err(path, format!("mechanism {}: missing table", i))
                        })?;
                        Ok(MechParams::table(rows))
                    }
                    MechanismFamily::Poisson => {
                        let r = rates.next().ok_or_else(|| {
                            file_err(path, format!("mechanism {}: missing rates", i))
                        })?;
                        Ok(MechParams::Rates(r))
                    }
                })
                .collect::<Result<_>>()?;
            if tables.next().is_some() || rates.next().is_some() {
                return Err(file_err(path, "more parameter blocks than mechanisms"));
            }
            for clamp in pf.clamps.unwrap_or_default() {
                let mech = mech_params.get_mut(clamp.mechanism).ok_or_else(|| {
                    file_err(
                        path,
                        format!("clamp names unknown mechanism {}", clamp.mechanism),
                    )
                })?;
                match mech {
                    MechParams::Table { rows, clamps } => {
                        if clamp.config >= rows.len() {
                            return Err(file_err(
                                path,
                                format!(
                                    "clamp config {} out of range for mechanism {}",
                                    clamp.config, clamp.mechanism
                                ),
                            ));
                        }
                        clamps[clamp.config] = Some(clamp.state);
                    }
                    MechParams::Rates(_) => {
                        return Err(file_err(
                            path,
                            "clamps apply to multinomial mechanisms only",
                        ))
                    }
                }
            }
            let params = ModelParams {
                cause_priors: pf.cause_priors,
                mechanisms: mech_params,
            };
            let violations = validate(&structure, &params);
            if !violations.is_empty() {
                let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                return Err(file_err(
                    path,
                    format!("invalid model: {}", msgs.join("; ")),
                ));
            }
            Some(params)
        }
    };
    Ok((structure, params))
}

pub fn model_to_json(structure: &ModelStructure, params: Option<&ModelParams>) -> String {
    let file = structure_to_file(structure, params);
    let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_json(path: &Path, json: &str) -> Result<(ModelStructure, Option<ModelParams>)> {
    let file: ModelFile = serde_json::from_str(json).map_err(|e| file_err(path, e.to_string()))?;
    file_to_structure(path, file)
}

pub fn write_model(
    path: &Path,
    structure: &ModelStructure,
    params: Option<&ModelParams>,
) -> Result<()> {
    std::fs::write(path, model_to_json(structure, params))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<(ModelStructure, Option<ModelParams>)> {
    let json = std::fs::read_to_string(path)?;
    model_from_json(path, &json)
}

// ---------------------------------------------------------------------------
// prior hyperparameters (JSON)

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    format: String,
    #[serde(flatten)]
    prior: crate::model::DirichletPrior,
}

pub fn write_prior(path: &Path, prior: &crate::model::DirichletPrior) -> Result<()> {
    let file = PriorFile {
        format: FORMAT_VERSION.to_string(),
        prior: prior.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("prior serializes");
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_prior(path: &Path) -> Result<crate::model::DirichletPrior> {
    let json = std::fs::read_to_string(path)?;
    let file: PriorFile = serde_json::from_str(&json).map_err(|e| file_err(path, e.to_string()))?;
    if file.format != FORMAT_VERSION {
        return Err(file_err(
            path,
            format!(
                "unsupported format '{}', expected '{}'",
                file.format, FORMAT_VERSION
            ),
        ));
    }
    Ok(file.prior)
}

// ---------------------------------------------------------------------------
// dataset (CSV with a version comment line)

/// Write a dataset; `latents` optionally appends named latent columns.
pub fn write_dataset(
    path: &Path,
    data: &Dataset,
    latents: Option<(&[String], &[Vec<u32>])>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# format: {}", FORMAT_VERSION)?;
    let mut header = data.names.join(",");
    if let Some((names, _)) = latents {
        header.push(',');
        header.push_str(&names.join(","));
    }
    writeln!(out, "{}", header)?;
    for (l, row) in data.rows.iter().enumerate() {
        let mut line = row.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        if let Some((_, xs)) = latents {
            line.push(',');
            line.push_str(
                &xs[l]
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        writeln!(out, "{}", line)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset. Comment lines (leading '#') are skipped; every row must
/// be complete, with integer states only.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut names: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match &names {
            None => {
                names = Some(fields.into_iter().map(str::to_string).collect());
            }
            Some(header) => {
                if fields.len() != header.len() {
                    return Err(Error::Parse {
                        path: path_str,
                        line: lineno,
                        message: format!(
                            "expected {} fields, found {}",
                            header.len(),
                            fields.len()
                        ),
                    });
                }
                let mut row = Vec::with_capacity(fields.len());
                for (col, field) in fields.iter().enumerate() {
                    let trimmed = field.trim();
                    if trimmed.is_empty() {
                        return Err(Error::Parse {
                            path: path_str,
                            line: lineno,
                            message: format!(
                                "missing entry in column {} ({})",
                                col + 1,
                                header[col]
                            ),
                        });
                    }
                    let value: u32 = trimmed.parse().map_err(|_| Error::Parse {
                        path: path_str.clone(),
                        line: lineno,
                        message: format!(
                            "'{}' is not a state index (column {})",
                            trimmed, header[col]
                        ),
                    })?;
                    row.push(value);
                }
                rows.push(row);
            }
        }
    }
    let names = names.ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: "missing header row".into(),
    })?;
    Ok(Dataset { names, rows })
}

// ---------------------------------------------------------------------------
// report writers

pub fn score_report_to_csv(entries: &[ScoredModel]) -> String {
    let mut out = format!("# format: {}\n", FORMAT_VERSION);
    out.push_str("model_id,n,criterion,log_score,d,d_unadjusted,posterior\n");
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.model_id,
            e.n,
            e.criterion.name(),
            e.log_score,
            e.dim,
            e.dim_unadjusted,
            e.posterior
        ));
    }
    out
}

pub fn write_score_report(path: &Path, entries: &[ScoredModel]) -> Result<()> {
    std::fs::write(path, score_report_to_csv(entries))?;
    Ok(())
}

pub fn dimension_report_to_csv(report: &DimensionReport) -> String {
    let mut out = format!("# format: {}\n", FORMAT_VERSION);
    out.push_str("model_id,d,d_unadjusted,n_points,min_rank,max_rank,sv_gap,seed\n");
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{}\n",
        report.model_id,
        report.dim,
        report.dim_unadjusted,
        report.n_points,
        report.min_rank(),
        report.max_rank(),
        report.sv_gap,
        report.seed
    ));
    out
}

pub fn write_dimension_report(path: &Path, report: &DimensionReport) -> Result<()> {
    std::fs::write(path, dimension_report_to_csv(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{catalog_entry, reference_params};
    use proptest::prelude::*;

    #[test]
    fn model_json_round_trips_with_params() {
        let e = catalog_entry("F3").unwrap();
        let p = reference_params(&e, 4);
        let json = model_to_json(&e.structure, Some(&p));
        let (s2, p2) = model_from_json(Path::new("mem"), &json).unwrap();
        assert_eq!(e.structure, s2);
        assert_eq!(Some(p), p2);
    }

    #[test]
    fn clamps_round_trip() {
        let e = catalog_entry("F1").unwrap();
        let mut p = reference_params(&e, 4);
        if let MechParams::Table { rows, clamps } = &mut p.mechanisms[0] {
            rows[0] = vec![1.0, 0.0];
            clamps[0] = Some(0);
        }
        let json = model_to_json(&e.structure, Some(&p));
        assert!(json.contains("\"clamps\""));
        let (_, p2) = model_from_json(Path::new("mem"), &json).unwrap();
        assert_eq!(Some(p), p2);
    }

    #[test]
    fn poisson_and_nof_serialize() {
        let s = ModelStructure {
            causes: vec![VariableSpec::finite("C1", 2)],
            effect: VariableSpec::counting("E"),
            mechanisms: vec![Mechanism::poisson(vec![0])],
            combo: CombinationFunction::Sum,
        };
        let p = ModelParams {
            cause_priors: vec![vec![0.4, 0.6]],
            mechanisms: vec![MechParams::Rates(vec![0.5, 1.5])],
        };
        let json = model_to_json(&s, Some(&p));
        let (s2, p2) = model_from_json(Path::new("mem"), &json).unwrap();
        assert_eq!(s, s2);
        assert_eq!(Some(p), p2);

        let nof = ModelStructure {
            causes: vec![VariableSpec::finite("C1", 2)],
            effect: VariableSpec::finite("E", 2),
            mechanisms: vec![
                Mechanism::multinomial(vec![0], 2),
                Mechanism::multinomial(vec![], 2),
            ],
            combo: CombinationFunction::NOf(2),
        };
        let json = model_to_json(&nof, None);
        let (s2, _) = model_from_json(Path::new("mem"), &json).unwrap();
        assert_eq!(nof, s2);
    }

    #[test]
    fn unknown_fields_rejected() {
        let e = catalog_entry("F1").unwrap();
        let json =
            model_to_json(&e.structure, None).replace("\"format\"", "\"extra\": 1, \"format\"");
        assert!(model_from_json(Path::new("mem"), &json).is_err());
    }

    #[test]
    fn invalid_params_rejected_at_load() {
        let e = catalog_entry("F1").unwrap();
        let p = reference_params(&e, 4);
        let json = model_to_json(&e.structure, Some(&p));
        // corrupt one row so it no longer sums to 1
        let broken = json.replacen("0.", "9.", 1);
        assert!(model_from_json(Path::new("mem"), &broken).is_err());
    }

    #[test]
    fn dataset_round_trip_and_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = Dataset {
            names: vec!["C1".into(), "C2".into(), "E".into()],
            rows: vec![vec![0, 1, 1], vec![1, 0, 0]],
        };
        write_dataset(&path, &data, None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&format!("# format: {}\n", FORMAT_VERSION)));
        let back = read_dataset(&path).unwrap();
        assert_eq!(data, back);

        std::fs::write(&path, "# format: cim/1\nC1,E\n0,\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("missing entry"), "{}", err);

        std::fs::write(&path, "C1,E\n0,x\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("not a state index"), "{}", err);

        std::fs::write(&path, "C1,E\n0\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("expected 2 fields"), "{}", err);
    }

    #[test]
    fn latent_columns_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = Dataset {
            names: vec!["C1".into(), "E".into()],
            rows: vec![vec![0, 1]],
        };
        let latents = vec![vec![1u32, 0]];
        let names = vec!["X1".to_string(), "X2".to_string()];
        write_dataset(&path, &data, Some((&names, &latents))).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("C1,E,X1,X2"));
        assert!(text.contains("0,1,1,0"));
    }

    proptest! {
        #[test]
        fn random_models_round_trip(seed in 0u64..64, model_idx in 0usize..5) {
            let entries = crate::catalog::catalog();
            let e = &entries[model_idx];
            let p = reference_params(e, seed);
            let json = model_to_json(&e.structure, Some(&p));
            let (s2, p2) = model_from_json(Path::new("mem"), &json).unwrap();
            prop_assert_eq!(&e.structure, &s2);
            prop_assert_eq!(Some(p), p2);
        }

        #[test]
        fn random_datasets_round_trip(rows in proptest::collection::vec(
            proptest::collection::vec(0u32..5, 3), 0..20
        )) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.csv");
            let data = Dataset {
                names: vec!["A".into(), "B".into(), "E".into()],
                rows,
            };
            write_dataset(&path, &data, None).unwrap();
            let back = read_dataset(&path).unwrap();
            prop_assert_eq!(data, back);
        }
    }
}
