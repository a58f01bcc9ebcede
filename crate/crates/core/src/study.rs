//! End-to-end simulation study: sample from each generating model, fit
//! every candidate on nested initial segments, score, and normalize model
//! posteriors per cell.
//!
//! Cells of the (generating x segment x candidate) grid are independent
//! jobs; each derives its seed from the config seed and its coordinates, so
//! scheduling and worker count never affect the output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{catalog, forward_sample, reference_params};
use crate::dimension::{regular_dimension, DimensionOptions};
use crate::em::{em_fit, EmOptions, FitMode, Init};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{Dataset, DirichletPrior};
use crate::scoring::{model_posteriors, score_fitted, Criterion, ScoredModel};

fn default_generating() -> Vec<String> {
    vec!["F1", "F2", "F3", "F4", "F5"]
        .into_iter()
        .map(String::from)
        .collect()
}

fn default_segments() -> Vec<usize> {
    vec![100, 200, 400, 800, 1600]
}

fn default_total_n() -> usize {
    6400
}

fn default_mode() -> String {
    "map".into()
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    500
}

fn default_restarts() -> usize {
    5
}

fn default_criterion() -> String {
    "cs".into()
}

fn default_dim_points() -> usize {
    10
}

fn default_fd_step() -> f64 {
    1e-5
}

fn default_rank_tol() -> f64 {
    1e-7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_generating")]
    pub generating: Vec<String>,
    #[serde(default = "default_generating")]
    pub candidates: Vec<String>,
    #[serde(default = "default_segments")]
    pub segment_sizes: Vec<usize>,
    #[serde(default = "default_total_n")]
    pub total_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub em_mode: String,
    #[serde(default = "default_tol")]
    pub em_tol: f64,
    #[serde(default = "default_max_iter")]
    pub em_max_iter: usize,
    #[serde(default = "default_restarts")]
    pub em_restarts: usize,
    #[serde(default = "default_criterion")]
    pub criterion: String,
    #[serde(default = "default_dim_points")]
    pub dim_points: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0usize;
        for &s in &self.segment_sizes {
            if s < prev {
                return Err(Error::InvalidModel(
                    "segment sizes must be non-decreasing".into(),
                ));
            }
            if s > self.total_n {
                return Err(Error::InvalidModel(format!(
                    "segment size {} exceeds total n {}",
                    s, self.total_n
                )));
            }
            prev = s;
        }
        self.parsed_criterion()?;
        self.parsed_mode()?;
        Ok(())
    }

    pub fn parsed_criterion(&self) -> Result<Criterion> {
        Criterion::parse(&self.criterion).ok_or_else(|| {
            Error::InvalidModel(format!(
                "unknown criterion '{}' (expected cs, cs-raw, or bic)",
                self.criterion
            ))
        })
    }

    pub fn parsed_mode(&self) -> Result<FitMode> {
        match self.em_mode.as_str() {
            "ml" => Ok(FitMode::Ml),
            "map" => Ok(FitMode::Map),
            other => Err(Error::InvalidModel(format!(
                "unknown EM mode '{}' (expected ml or map)",
                other
            ))),
        }
    }
}

/// Parse and validate a JSON study configuration.
pub fn parse_config(text: &str) -> Result<StudyConfig> {
    let config: StudyConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}

/// One (generating, segment, candidate) cell. A failed fit records the
/// error text instead of aborting the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyCell {
    pub log_score: Option<f64>,
    pub posterior: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub generating: Vec<String>,
    pub segment_sizes: Vec<usize>,
    pub candidates: Vec<String>,
    pub criterion: Criterion,
    /// Candidate id -> (adjusted, unadjusted) dimension used for scoring.
    pub dims: Vec<(String, usize, usize)>,
    /// cells[gen][segment][candidate]
    pub cells: Vec<Vec<Vec<StudyCell>>>,
    pub seed: u64,
}

impl StudyResult {
    pub fn posterior(&self, gen: usize, seg: usize, cand: usize) -> Option<f64> {
        self.cells[gen][seg][cand].posterior
    }

    /// Scores and posteriors only; error strings are not compared.
    pub fn grid_eq(&self, other: &StudyResult) -> bool {
        self.generating == other.generating
            && self.segment_sizes == other.segment_sizes
            && self.candidates == other.candidates
            && self.cells.len() == other.cells.len()
            && self.cells.iter().zip(&other.cells).all(|(a, b)| {
                a.iter().zip(b).all(|(ra, rb)| {
                    ra.iter().zip(rb).all(|(ca, cb)| {
                        ca.log_score == cb.log_score && ca.posterior == cb.posterior
                    })
                })
            })
    }
}

// seed stream tags
const STREAM_DIMS: u64 = 1 << 40;
const STREAM_PARAMS: u64 = 2 << 40;
const STREAM_DATA: u64 = 3 << 40;
const STREAM_CELL: u64 = 4 << 40;

fn cell_stream(gen: usize, seg: usize, cand: usize) -> u64 {
    STREAM_CELL | ((gen as u64) << 20) | ((seg as u64) << 10) | cand as u64
}

/// Run the full grid. Dimensions are computed once per candidate structure;
/// per-cell failures degrade to recorded errors.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let criterion = config.parsed_criterion()?;
    let mode = config.parsed_mode()?;
    let entries = catalog();
    let find = |id: &String| -> Result<usize> {
        entries
            .iter()
            .position(|e| e.id.eq_ignore_ascii_case(id))
            .ok_or_else(|| Error::InvalidModel(format!("unknown catalog model '{}'", id)))
    };
    let gen_idx: Vec<usize> = config.generating.iter().map(find).collect::<Result<_>>()?;
    let cand_idx: Vec<usize> = config.candidates.iter().map(find).collect::<Result<_>>()?;

    // dimensions once per candidate
    let dim_opts: Vec<DimensionOptions> = cand_idx
        .iter()
        .map(|&c| DimensionOptions {
            n_points: config.dim_points,
            seed: exec::mix_seed(config.seed, STREAM_DIMS | c as u64),
            fd_step: config.fd_step,
            rank_tol: config.rank_tol,
        })
        .collect();
    let dims: Vec<(String, usize, usize)> = cand_idx
        .iter()
        .zip(&dim_opts)
        .map(|(&c, opts)| {
            let report = regular_dimension(entries[c].id, &entries[c].structure, None, opts)?;
            Ok((entries[c].id.to_string(), report.dim, report.dim_unadjusted))
        })
        .collect::<Result<_>>()?;

    // one 6400-case dataset per generating model; segments are prefixes
    let datasets: Vec<Dataset> = gen_idx
        .iter()
        .map(|&g| {
            let params = reference_params(
                &entries[g],
                exec::mix_seed(config.seed, STREAM_PARAMS | g as u64),
            );
            forward_sample(
                &entries[g].structure,
                &params,
                config.total_n,
                exec::mix_seed(config.seed, STREAM_DATA | g as u64),
            )
        })
        .collect::<Result<_>>()?;

    // flatten the grid into independent jobs
    let n_gen = gen_idx.len();
    let n_seg = config.segment_sizes.len();
    let n_cand = cand_idx.len();
    let jobs = n_gen * n_seg * n_cand;
    let outcomes = exec::map_indexed(jobs, |job| {
        let gi = job / (n_seg * n_cand);
        let si = (job / n_cand) % n_seg;
        let ci = job % n_cand;
        let seg = config.segment_sizes[si];
        let data = Dataset {
            names: datasets[gi].names.clone(),
            rows: datasets[gi].rows[..seg].to_vec(),
        };
        let cand = &entries[cand_idx[ci]];
        let prior = DirichletPrior::unit(&cand.structure);
        let opts = EmOptions {
            mode,
            tol: config.em_tol,
            max_iter: config.em_max_iter,
            restarts: config.em_restarts,
            seed: exec::mix_seed(config.seed, cell_stream(gi, si, ci)),
            init: Init::Random,
        };
        let run = || -> Result<f64> {
            let fit = em_fit(&cand.structure, &data, &prior, &opts)?;
            let (_, d, d_unadj) = dims[ci];
            score_fitted(
                &cand.structure,
                &data,
                &fit.params,
                &prior,
                criterion,
                d,
                d_unadj,
            )
        };
        run()
    });

    // assemble cells and normalize posteriors per (generating, segment)
    let mut cells = vec![vec![Vec::with_capacity(n_cand); n_seg]; n_gen];
    for (job, outcome) in outcomes.into_iter().enumerate() {
        let gi = job / (n_seg * n_cand);
        let si = (job / n_cand) % n_seg;
        cells[gi][si].push(match outcome {
            Ok(score) => StudyCell {
                log_score: Some(score),
                posterior: None,
                error: None,
            },
            Err(e) => StudyCell {
                log_score: None,
                posterior: None,
                error: Some(e.to_string()),
            },
        });
    }
    for row in cells.iter_mut().flatten() {
        let available: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.log_score.map(|s| (i, s)))
            .collect();
        if available.is_empty() {
            continue;
        }
        let scores: Vec<f64> = available.iter().map(|&(_, s)| s).collect();
        let posts = model_posteriors(&scores);
        for ((i, _), p) in available.into_iter().zip(posts) {
            row[i].posterior = Some(p);
        }
    }

    Ok(StudyResult {
        generating: config.generating.clone(),
        segment_sizes: config.segment_sizes.clone(),
        candidates: config.candidates.clone(),
        criterion,
        dims,
        cells,
        seed: config.seed,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{}", x),
        None => "NA".into(),
    }
}

/// Long-form scores CSV: one row per grid cell.
pub fn scores_to_csv(result: &StudyResult) -> String {
    let mut out = format!("# format: {}\n", crate::io::FORMAT_VERSION);
    out.push_str(&format!(
        "# criterion: {}, seed: {}\n",
        result.criterion.name(),
        result.seed
    ));
    out.push_str("generating,n,candidate,criterion,log_score,d,d_unadjusted,posterior\n");
    for (gi, gen) in result.generating.iter().enumerate() {
        for (si, &n) in result.segment_sizes.iter().enumerate() {
            for (ci, cand) in result.candidates.iter().enumerate() {
                let cell = &result.cells[gi][si][ci];
                let (_, d, d_unadj) = result.dims[ci];
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    gen,
                    n,
                    cand,
                    result.criterion.name(),
                    fmt_opt(cell.log_score),
                    d,
                    d_unadj,
                    fmt_opt(cell.posterior)
                ));
            }
        }
    }
    out
}

/// Wide-form posterior CSV: one row per (generating, segment).
pub fn posteriors_to_csv(result: &StudyResult) -> String {
    let mut out = format!("# format: {}\n", crate::io::FORMAT_VERSION);
    out.push_str("generating,n");
    for cand in &result.candidates {
        out.push(',');
        out.push_str(cand);
    }
    out.push('\n');
    for (gi, gen) in result.generating.iter().enumerate() {
        for (si, &n) in result.segment_sizes.iter().enumerate() {
            out.push_str(&format!("{},{}", gen, n));
            for ci in 0..result.candidates.len() {
                out.push(',');
                out.push_str(&fmt_opt(result.cells[gi][si][ci].posterior));
            }
            out.push('\n');
        }
    }
    out
}

/// Plain-text posterior table: one block per generating model, rows are
/// segment sizes, columns are candidates.
pub fn render_text_report(result: &StudyResult) -> String {
    let mut out = format!("# format: {}\n", crate::io::FORMAT_VERSION);
    out.push_str(&format!(
        "model posteriors by sample size (criterion: {}, seed: {})\n",
        result.criterion.name(),
        result.seed
    ));
    for (gi, gen) in result.generating.iter().enumerate() {
        out.push_str(&format!("\ngenerating model {}\n", gen));
        out.push_str(&format!("{:>8}", "N"));
        for cand in &result.candidates {
            out.push_str(&format!("{:>9}", cand));
        }
        out.push('\n');
        for (si, &n) in result.segment_sizes.iter().enumerate() {
            out.push_str(&format!("{:>8}", n));
            for ci in 0..result.candidates.len() {
                match result.cells[gi][si][ci].posterior {
                    Some(p) => out.push_str(&format!("{:>9.4}", p)),
                    None => out.push_str(&format!("{:>9}", "NA")),
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Rebuild a StudyResult grid from the long-form scores CSV.
pub fn parse_scores_csv(text: &str) -> Result<StudyResult> {
    let mut generating: Vec<String> = Vec::new();
    let mut segment_sizes: Vec<usize> = Vec::new();
    let mut candidates: Vec<String> = Vec::new();
    let mut criterion = Criterion::CsAdjusted;
    let mut dims: Vec<(String, usize, usize)> = Vec::new();
    let mut seed = 0u64;
    let mut records: Vec<(String, usize, String, Option<f64>, Option<f64>)> = Vec::new();

    let parse_err = |line: usize, message: String| Error::Parse {
        path: "study_scores.csv".into(),
        line,
        message,
    };

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if let Some(rest) = line.strip_prefix("# criterion: ") {
            let parts: Vec<&str> = rest.split(", seed: ").collect();
            if parts.len() == 2 {
                criterion = Criterion::parse(parts[0])
                    .ok_or_else(|| parse_err(lineno, format!("unknown criterion {}", parts[0])))?;
                seed = parts[1]
                    .parse()
                    .map_err(|_| parse_err(lineno, "bad seed".into()))?;
            }
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() || line.starts_with("generating,") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(parse_err(
                lineno,
                format!("expected 8 fields, found {}", f.len()),
            ));
        }
        let n: usize = f[1]
            .parse()
            .map_err(|_| parse_err(lineno, "bad n".into()))?;
        let opt = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| parse_err(lineno, format!("bad float '{}'", s)))
            }
        };
        let log_score = opt(f[4])?;
        let posterior = opt(f[7])?;
        if !generating.contains(&f[0].to_string()) {
            generating.push(f[0].to_string());
        }
        if !segment_sizes.contains(&n) {
            segment_sizes.push(n);
        }
        if !candidates.contains(&f[2].to_string()) {
            candidates.push(f[2].to_string());
            dims.push((
                f[2].to_string(),
                f[5].parse()
                    .map_err(|_| parse_err(lineno, "bad d".into()))?,
                f[6].parse()
                    .map_err(|_| parse_err(lineno, "bad d_unadjusted".into()))?,
            ));
        }
        records.push((f[0].to_string(), n, f[2].to_string(), log_score, posterior));
    }

    let mut cells = vec![
        vec![
            vec![
                StudyCell {
                    log_score: None,
                    posterior: None,
                    error: None
                };
                candidates.len()
            ];
            segment_sizes.len()
        ];
        generating.len()
    ];
    for (gen, n, cand, log_score, posterior) in records {
        let gi = generating.iter().position(|g| g == &gen).unwrap();
        let si = segment_sizes.iter().position(|&s| s == n).unwrap();
        let ci = candidates.iter().position(|c| c == &cand).unwrap();
        cells[gi][si][ci] = StudyCell {
            log_score,
            posterior,
            error: None,
        };
    }
    Ok(StudyResult {
        generating,
        segment_sizes,
        candidates,
        criterion,
        dims,
        cells,
        seed,
    })
}

/// Write study_scores.csv, study_posteriors.csv, and report.txt into `dir`.
pub fn render_report(result: &StudyResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("study_scores.csv"), scores_to_csv(result))?;
    std::fs::write(dir.join("study_posteriors.csv"), posteriors_to_csv(result))?;
    std::fs::write(dir.join("report.txt"), render_text_report(result))?;
    Ok(())
}

/// The long-form rows as ScoredModel entries (for the score-report writer).
pub fn result_to_entries(result: &StudyResult) -> Vec<ScoredModel> {
    let mut out = Vec::new();
    for (gi, _gen) in result.generating.iter().enumerate() {
        for (si, &n) in result.segment_sizes.iter().enumerate() {
            for (ci, cand) in result.candidates.iter().enumerate() {
                let cell = &result.cells[gi][si][ci];
                if let (Some(score), Some(post)) = (cell.log_score, cell.posterior) {
                    let (_, d, d_unadj) = result.dims[ci];
                    out.push(ScoredModel {
                        model_id: cand.clone(),
                        n,
                        criterion: result.criterion,
                        log_score: score,
                        dim: d,
                        dim_unadjusted: d_unadj,
                        posterior: post,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_config() -> StudyConfig {
        StudyConfig {
            generating: vec!["F1".into(), "F5".into()],
            candidates: vec!["F1".into(), "F3".into(), "F5".into()],
            segment_sizes: vec![50, 100],
            total_n: 100,
            seed: 13,
            em_restarts: 2,
            em_max_iter: 200,
            dim_points: 3,
            ..StudyConfig::default()
        }
    }

    #[test]
    fn defaults_follow_the_study_protocol() {
        let c = StudyConfig::default();
        assert_eq!(c.segment_sizes, vec![100, 200, 400, 800, 1600]);
        assert_eq!(c.total_n, 6400);
        assert_eq!(c.em_mode, "map");
        assert_eq!(c.criterion, "cs");
        assert_eq!(c.em_restarts, 5);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn decreasing_segments_rejected() {
        let c = StudyConfig {
            segment_sizes: vec![200, 100],
            ..StudyConfig::default()
        };
        assert!(c.validate().is_err());
        let c = StudyConfig {
            segment_sizes: vec![100, 99999],
            ..StudyConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn posteriors_normalize_and_grid_is_deterministic() {
        let config = small_config();
        let a = run_study(&config).unwrap();
        let b = run_study(&config).unwrap();
        assert!(a.grid_eq(&b));
        assert_eq!(scores_to_csv(&a), scores_to_csv(&b));
        for gi in 0..a.generating.len() {
            for si in 0..a.segment_sizes.len() {
                let total: f64 = (0..a.candidates.len())
                    .filter_map(|ci| a.posterior(gi, si, ci))
                    .sum();
                assert_relative_eq!(total, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_candidate_posterior_is_one() {
        let config = StudyConfig {
            generating: vec!["F1".into()],
            candidates: vec!["F1".into()],
            segment_sizes: vec![50],
            total_n: 50,
            seed: 3,
            em_restarts: 1,
            dim_points: 2,
            ..StudyConfig::default()
        };
        let r = run_study(&config).unwrap();
        assert_eq!(r.posterior(0, 0, 0), Some(1.0));
    }

    #[test]
    fn csv_round_trip_reproduces_grid() {
        let r = run_study(&small_config()).unwrap();
        let csv = scores_to_csv(&r);
        let back = parse_scores_csv(&csv).unwrap();
        assert!(r.grid_eq(&back));
        assert_eq!(r.dims, back.dims);
        assert_eq!(r.criterion, back.criterion);
        assert_eq!(r.seed, back.seed);
    }

    #[test]
    fn failed_cells_render_na() {
        let r = StudyResult {
            generating: vec!["F1".into()],
            segment_sizes: vec![100],
            candidates: vec!["F1".into(), "F2".into()],
            criterion: Criterion::CsAdjusted,
            dims: vec![("F1".into(), 7, 9), ("F2".into(), 8, 9)],
            cells: vec![vec![vec![
                StudyCell {
                    log_score: Some(-10.0),
                    posterior: Some(1.0),
                    error: None,
                },
                StudyCell {
                    log_score: None,
                    posterior: None,
                    error: Some("em failed".into()),
                },
            ]]],
            seed: 0,
        };
        assert!(scores_to_csv(&r).contains("NA"));
        assert!(render_text_report(&r).contains("NA"));
        let back = parse_scores_csv(&scores_to_csv(&r)).unwrap();
        assert!(r.grid_eq(&back));
    }

    #[test]
    fn config_json_defaults_and_unknown_fields() {
        let c: StudyConfig = serde_json::from_str(r#"{"seed": 7, "total_n": 400}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.total_n, 400);
        assert_eq!(c.segment_sizes, vec![100, 200, 400, 800, 1600]);
        assert!(serde_json::from_str::<StudyConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
