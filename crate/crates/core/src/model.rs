//! Domain types for causal interaction models and structural validation.
//!
//! A model is a set of observed causes, a hidden mechanism variable per
//! mechanism, and an effect that is a deterministic combination of the
//! mechanism values. Each mechanism carries a conditional distribution of
//! its variable given its parent causes: a multinomial row per parent
//! configuration, or a Poisson rate per configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain of a variable: a finite ordered set of states, or the counting
/// numbers (for Poisson mechanisms and additive effects).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    /// States 0..cardinality, ordered by index.
    Finite(usize),
    /// Non-negative integers.
    Counting,
}

impl Domain {
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            Domain::Finite(r) => Some(*r),
            Domain::Counting => None,
        }
    }

    /// True if `value` is a valid state of this domain.
    pub fn contains(&self, value: u32) -> bool {
        match self {
            Domain::Finite(r) => (value as usize) < *r,
            Domain::Counting => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub domain: Domain,
}

impl VariableSpec {
    pub fn finite(name: impl Into<String>, cardinality: usize) -> Self {
        VariableSpec {
            name: name.into(),
            domain: Domain::Finite(cardinality),
        }
    }

    pub fn counting(name: impl Into<String>) -> Self {
        VariableSpec {
            name: name.into(),
            domain: Domain::Counting,
        }
    }
}

/// Distribution family of a mechanism's conditional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MechanismFamily {
    Multinomial,
    Poisson,
}

/// One mechanism: a hidden variable with a (possibly empty) ordered set of
/// parent causes. An empty parent set is a leak term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    /// Indices into `ModelStructure::causes`, in declared order.
    pub parents: Vec<usize>,
    pub family: MechanismFamily,
    pub domain: Domain,
}

impl Mechanism {
    pub fn multinomial(parents: Vec<usize>, cardinality: usize) -> Self {
        Mechanism {
            parents,
            family: MechanismFamily::Multinomial,
            domain: Domain::Finite(cardinality),
        }
    }

    pub fn poisson(parents: Vec<usize>) -> Self {
        Mechanism {
            parents,
            family: MechanismFamily::Poisson,
            domain: Domain::Counting,
        }
    }
}

/// Deterministic map from mechanism values to the effect value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombinationFunction {
    /// Componentwise maximum over the shared ordered domain.
    Max,
    /// Arithmetic sum (counting domains).
    Sum,
    /// Binary effect is 1 iff at least N of the binary mechanisms are 1.
    NOf(u32),
    /// Binary effect is 1 iff an even number of the binary mechanisms are 1
    /// (zero ones counts as even).
    Parity,
}

impl CombinationFunction {
    pub fn name(&self) -> &'static str {
        match self {
            CombinationFunction::Max => "max",
            CombinationFunction::Sum => "sum",
            CombinationFunction::NOf(_) => "n-of",
            CombinationFunction::Parity => "parity",
        }
    }
}

/// The graph: causes, effect, mechanisms, and the combination function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStructure {
    pub causes: Vec<VariableSpec>,
    pub effect: VariableSpec,
    pub mechanisms: Vec<Mechanism>,
    pub combo: CombinationFunction,
}

impl ModelStructure {
    /// Number of parent configurations q_i of mechanism `i` (1 for leaks).
    pub fn config_count(&self, mech: usize) -> usize {
        self.mechanisms[mech]
            .parents
            .iter()
            .map(|&p| match self.causes[p].domain {
                Domain::Finite(r) => r,
                Domain::Counting => 0,
            })
            .product()
    }

    /// Mechanism domain cardinality, for multinomial mechanisms.
    pub fn mech_cardinality(&self, mech: usize) -> Option<usize> {
        self.mechanisms[mech].domain.cardinality()
    }

    /// Raw free-parameter count: (r-1) per cause, plus per mechanism
    /// q_i * (r_i - 1) for multinomials or q_i rates for Poisson.
    /// Clamped rows contribute nothing.
    pub fn unadjusted_dimension(&self, params: Option<&ModelParams>) -> usize {
        let cause_part: usize = self
            .causes
            .iter()
            .map(|c| c.domain.cardinality().unwrap_or(1).saturating_sub(1))
            .sum();
        let mech_part: usize = self
            .mechanisms
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let q = self.config_count(i);
                let clamped = |j: usize| -> bool {
                    params
                        .map(|p| p.mechanisms[i].is_clamped(j))
                        .unwrap_or(false)
                };
                match m.family {
                    MechanismFamily::Multinomial => {
                        let r = m.domain.cardinality().unwrap_or(0);
                        (0..q).filter(|&j| !clamped(j)).count() * (r - 1)
                    }
                    MechanismFamily::Poisson => q,
                }
            })
            .sum();
        cause_part + mech_part
    }

    /// Mixed-radix parent configuration index for mechanism `mech` under a
    /// full cause assignment. First-declared parent is most significant.
    /// Leak terms always map to configuration 0.
    pub fn parent_config_index(&self, mech: usize, assignment: &[u32]) -> Result<usize> {
        let m = &self.mechanisms[mech];
        let mut j = 0usize;
        for &p in &m.parents {
            let r = match self.causes[p].domain {
                Domain::Finite(r) => r,
                Domain::Counting => {
                    return Err(Error::InvalidModel(format!(
                        "cause {} has a counting domain",
                        self.causes[p].name
                    )))
                }
            };
            let s = *assignment.get(p).ok_or_else(|| {
                Error::IncompatibleData(format!(
                    "assignment covers {} causes, model has {}",
                    assignment.len(),
                    self.causes.len()
                ))
            })?;
            if s as usize >= r {
                return Err(Error::StateOutOfRange {
                    cause: self.causes[p].name.clone(),
                    state: s,
                    cardinality: r,
                });
            }
            j = j * r + s as usize;
        }
        Ok(j)
    }

    /// Inverse of `parent_config_index`: the parent state tuple for each
    /// configuration index 0..q_i, in index order.
    pub fn enumerate_configs(&self, mech: usize) -> Vec<Vec<u32>> {
        let m = &self.mechanisms[mech];
        let radices: Vec<usize> = m
            .parents
            .iter()
            .map(|&p| self.causes[p].domain.cardinality().unwrap_or(1))
            .collect();
        let q: usize = radices.iter().product();
        (0..q)
            .map(|mut j| {
                let mut tuple = vec![0u32; radices.len()];
                for (slot, &r) in radices.iter().enumerate().rev() {
                    tuple[slot] = (j % r) as u32;
                    j /= r;
                }
                tuple
            })
            .collect()
    }

    /// All joint cause assignments in row-major order (first cause most
    /// significant). Requires all-finite causes.
    pub fn enumerate_cause_assignments(&self) -> Vec<Vec<u32>> {
        let radices: Vec<usize> = self
            .causes
            .iter()
            .map(|c| c.domain.cardinality().unwrap_or(1))
            .collect();
        let total: usize = radices.iter().product();
        (0..total)
            .map(|mut idx| {
                let mut a = vec![0u32; radices.len()];
                for (slot, &r) in radices.iter().enumerate().rev() {
                    a[slot] = (idx % r) as u32;
                    idx /= r;
                }
                a
            })
            .collect()
    }
}

/// Parameters of one mechanism: a multinomial table (row per parent
/// configuration, with optional per-row clamps to a point mass) or a
/// Poisson rate per configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MechParams {
    Table {
        /// rows[j][k] = p(X_i = k | parent config j); q_i rows of length r_i.
        rows: Vec<Vec<f64>>,
        /// clamps[j] = Some(k) fixes row j to a point mass at state k.
        clamps: Vec<Option<usize>>,
    },
    Rates(Vec<f64>),
}

impl MechParams {
    pub fn is_clamped(&self, config: usize) -> bool {
        match self {
            MechParams::Table { clamps, .. } => clamps.get(config).map_or(false, Option::is_some),
            MechParams::Rates(_) => false,
        }
    }

    pub fn table(rows: Vec<Vec<f64>>) -> Self {
        let q = rows.len();
        MechParams::Table {
            rows,
            clamps: vec![None; q],
        }
    }
}

/// Cause priors plus per-mechanism conditionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// cause_priors[c][s] = p(C_c = s); one probability vector per cause.
    pub cause_priors: Vec<Vec<f64>>,
    pub mechanisms: Vec<MechParams>,
}

/// Conjugate hyperparameters: Dirichlet alphas for each multinomial row and
/// cause prior, Gamma (shape, rate) pairs for Poisson rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrior {
    pub cause_alphas: Vec<Vec<f64>>,
    pub mech_priors: Vec<MechPrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MechPrior {
    /// alphas[j][k] > 0 for each row of the mechanism table.
    Table(Vec<Vec<f64>>),
    /// (shape, rate) per parent configuration.
    Gamma(Vec<(f64, f64)>),
}

/// Near-flat Gamma hyperparameters for Poisson rates: shape 1, tiny rate.
pub const DEFAULT_GAMMA_SHAPE: f64 = 1.0;
pub const DEFAULT_GAMMA_RATE: f64 = 1e-6;

impl DirichletPrior {
    /// Shapes must match the structure and every hyperparameter must be
    /// strictly positive.
    pub fn check_against(&self, structure: &ModelStructure) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if self.cause_alphas.len() != structure.causes.len() {
            return bad("prior cause_alphas count mismatch".into());
        }
        for (c, alphas) in self.cause_alphas.iter().enumerate() {
            if Some(alphas.len()) != structure.causes[c].domain.cardinality() {
                return bad(format!("prior for cause {} has wrong length", c));
            }
            if alphas.iter().any(|&a| !(a > 0.0)) {
                return bad(format!("non-positive hyperparameter for cause {}", c));
            }
        }
        if self.mech_priors.len() != structure.mechanisms.len() {
            return bad("prior mech_priors count mismatch".into());
        }
        for (i, (m, prior)) in structure
            .mechanisms
            .iter()
            .zip(&self.mech_priors)
            .enumerate()
        {
            let q = structure.config_count(i);
            match (m.family, prior) {
                (MechanismFamily::Multinomial, MechPrior::Table(alphas)) => {
                    if alphas.len() != q {
                        return bad(format!(
                            "prior for mechanism {} has {} rows, expected {}",
                            i,
                            alphas.len(),
                            q
                        ));
                    }
                    for row in alphas {
                        if Some(row.len()) != m.domain.cardinality() {
                            return bad(format!("prior row length mismatch in mechanism {}", i));
                        }
                        if row.iter().any(|&a| !(a > 0.0)) {
                            return bad(format!("non-positive hyperparameter in mechanism {}", i));
                        }
                    }
                }
                (MechanismFamily::Poisson, MechPrior::Gamma(pairs)) => {
                    if pairs.len() != q {
                        return bad(format!(
                            "prior for mechanism {} has {} pairs, expected {}",
                            i,
                            pairs.len(),
                            q
                        ));
                    }
                    if pairs.iter().any(|&(a, b)| !(a > 0.0) || !(b > 0.0)) {
                        return bad(format!(
                            "non-positive Gamma hyperparameter in mechanism {}",
                            i
                        ));
                    }
                }
                _ => return bad(format!("prior kind mismatch for mechanism {}", i)),
            }
        }
        Ok(())
    }

    /// Unit prior: every Dirichlet hyperparameter 1, near-flat Gamma for rates.
    pub fn unit(structure: &ModelStructure) -> Self {
        let cause_alphas = structure
            .causes
            .iter()
            .map(|c| vec![1.0; c.domain.cardinality().unwrap_or(1)])
            .collect();
        let mech_priors = structure
            .mechanisms
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let q = structure.config_count(i);
                match m.family {
                    MechanismFamily::Multinomial => {
                        let r = m.domain.cardinality().unwrap_or(0);
                        MechPrior::Table(vec![vec![1.0; r]; q])
                    }
                    MechanismFamily::Poisson => {
                        MechPrior::Gamma(vec![(DEFAULT_GAMMA_SHAPE, DEFAULT_GAMMA_RATE); q])
                    }
                }
            })
            .collect();
        DirichletPrior {
            cause_alphas,
            mech_priors,
        }
    }
}

/// N complete cases over causes and effect, causes first and effect last,
/// in the structure's declared order. Mechanism values are always latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Variable names: causes in order, then the effect.
    pub names: Vec<String>,
    /// rows[l] = one case: cause states followed by the effect value.
    pub rows: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Split a case row into cause assignment and effect value.
    pub fn split_case(row: &[u32]) -> (&[u32], u32) {
        let (causes, effect) = row.split_at(row.len() - 1);
        (causes, effect[0])
    }

    /// Check that names, widths, and state ranges match the structure.
    pub fn check_against(&self, structure: &ModelStructure) -> Result<()> {
        let expected: Vec<&str> = structure
            .causes
            .iter()
            .map(|c| c.name.as_str())
            .chain(std::iter::once(structure.effect.name.as_str()))
            .collect();
        let got: Vec<&str> = self.names.iter().map(String::as_str).collect();
        if expected != got {
            return Err(Error::IncompatibleData(format!(
                "column names {:?} do not match model variables {:?}",
                got, expected
            )));
        }
        for (l, row) in self.rows.iter().enumerate() {
            if row.len() != self.names.len() {
                return Err(Error::IncompatibleData(format!(
                    "case {} has {} entries, expected {}",
                    l,
                    row.len(),
                    self.names.len()
                )));
            }
            let (cs, e) = Dataset::split_case(row);
            for (c, &s) in cs.iter().enumerate() {
                if !structure.causes[c].domain.contains(s) {
                    return Err(Error::IncompatibleData(format!(
                        "case {}: state {} out of range for cause {}",
                        l, s, structure.causes[c].name
                    )));
                }
            }
            if !structure.effect.domain.contains(e) {
                return Err(Error::IncompatibleData(format!(
                    "case {}: effect value {} out of range",
                    l, e
                )));
            }
        }
        Ok(())
    }
}

/// One constraint violation found by `validate`, naming the offending part.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

const ROW_SUM_TOL: f64 = 1e-9;

/// Check every structural and parametric invariant; returns an empty list
/// iff the model is well formed.
pub fn validate(structure: &ModelStructure, params: &ModelParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |location: String, message: String| {
        out.push(Violation { location, message });
    };

    if structure.mechanisms.is_empty() {
        bad(
            "structure".into(),
            "a model must have at least one mechanism".into(),
        );
    }
    for (c, cause) in structure.causes.iter().enumerate() {
        match cause.domain {
            Domain::Finite(r) if r >= 2 => {}
            Domain::Finite(r) => bad(
                format!("cause {}", cause.name),
                format!("finite cardinality must be >= 2, got {}", r),
            ),
            Domain::Counting => bad(
                format!("cause {}", cause.name),
                "causes must have finite domains".into(),
            ),
        }
        let _ = c;
    }
    if let Domain::Finite(r) = structure.effect.domain {
        if r < 2 {
            bad(
                format!("effect {}", structure.effect.name),
                format!("finite cardinality must be >= 2, got {}", r),
            );
        }
    }

    // Combination-specific domain constraints.
    let effect_card = structure.effect.domain.cardinality();
    match structure.combo {
        CombinationFunction::Max => {
            let Some(re) = effect_card else {
                bad(
                    "effect".into(),
                    "max combination requires a finite ordered effect domain".into(),
                );
                return out;
            };
            for (i, m) in structure.mechanisms.iter().enumerate() {
                match (m.family, m.domain) {
                    (MechanismFamily::Multinomial, Domain::Finite(ri)) => {
                        if ri < 1 || ri > re {
                            bad(
                                format!("mechanism {}", i),
                                format!(
                                    "mechanism domain ({} states) must be a prefix of the effect domain ({} states)",
                                    ri, re
                                ),
                            );
                        }
                    }
                    _ => bad(
                        format!("mechanism {}", i),
                        "max combination requires finite multinomial mechanisms".into(),
                    ),
                }
            }
        }
        CombinationFunction::Sum => {
            if effect_card.is_some() {
                bad(
                    "effect".into(),
                    "sum combination requires a counting effect domain".into(),
                );
            }
            for (i, m) in structure.mechanisms.iter().enumerate() {
                if m.family != MechanismFamily::Poisson || m.domain != Domain::Counting {
                    bad(
                        format!("mechanism {}", i),
                        "sum combination requires Poisson mechanisms over counting domains".into(),
                    );
                }
            }
        }
        CombinationFunction::NOf(n) => {
            if effect_card != Some(2) {
                bad("effect".into(), "n-of requires a binary effect".into());
            }
            if n == 0 {
                bad("combo".into(), "n-of threshold must be positive".into());
            }
            for (i, m) in structure.mechanisms.iter().enumerate() {
                if m.domain.cardinality() != Some(2) {
                    bad(
                        format!("mechanism {}", i),
                        "n-of requires binary mechanisms".into(),
                    );
                }
            }
        }
        CombinationFunction::Parity => {
            if effect_card != Some(2) {
                bad("effect".into(), "parity requires binary effect".into());
            }
            for (i, m) in structure.mechanisms.iter().enumerate() {
                if m.domain.cardinality() != Some(2) {
                    bad(
                        format!("mechanism {}", i),
                        "parity requires binary mechanisms".into(),
                    );
                }
            }
        }
    }

    for (i, m) in structure.mechanisms.iter().enumerate() {
        for &p in &m.parents {
            if p >= structure.causes.len() {
                bad(
                    format!("mechanism {}", i),
                    format!("parent index {} refers to a non-existent cause", p),
                );
            }
        }
    }

    // Parameter shapes and contents.
    if params.cause_priors.len() != structure.causes.len() {
        bad(
            "cause priors".into(),
            format!(
                "{} prior vectors for {} causes",
                params.cause_priors.len(),
                structure.causes.len()
            ),
        );
    }
    for (c, prior) in params.cause_priors.iter().enumerate() {
        let name = structure
            .causes
            .get(c)
            .map(|v| v.name.clone())
            .unwrap_or_else(|| format!("#{}", c));
        if let Some(Domain::Finite(r)) = structure.causes.get(c).map(|v| v.domain) {
            if prior.len() != r {
                bad(
                    format!("cause {} prior", name),
                    format!("length {} != cardinality {}", prior.len(), r),
                );
                continue;
            }
        }
        let sum: f64 = prior.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            bad(
                format!("cause {} prior", name),
                format!("row sum {} != 1", sum),
            );
        }
        if prior.iter().any(|&p| p < 0.0) {
            bad(format!("cause {} prior", name), "negative entry".into());
        }
    }

    if params.mechanisms.len() != structure.mechanisms.len() {
        bad(
            "params".into(),
            format!(
                "{} mechanism parameter blocks for {} mechanisms",
                params.mechanisms.len(),
                structure.mechanisms.len()
            ),
        );
        return out;
    }
    for (i, (m, mp)) in structure
        .mechanisms
        .iter()
        .zip(&params.mechanisms)
        .enumerate()
    {
        let q = structure.config_count(i);
        match (m.family, mp) {
            (MechanismFamily::Multinomial, MechParams::Table { rows, clamps }) => {
                let r = m.domain.cardinality().unwrap_or(0);
                if rows.len() != q {
                    bad(
                        format!("mechanism {}", i),
                        format!("{} rows for {} parent configurations", rows.len(), q),
                    );
                    continue;
                }
                if clamps.len() != q {
                    bad(
                        format!("mechanism {}", i),
                        format!("{} clamp entries for {} rows", clamps.len(), q),
                    );
                    continue;
                }
                for (j, row) in rows.iter().enumerate() {
                    if row.len() != r {
                        bad(
                            format!("mechanism {} row {}", i, j),
                            format!("length {} != mechanism cardinality {}", row.len(), r),
                        );
                        continue;
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        bad(
                            format!("mechanism {} row {}", i, j),
                            format!("row sum {} != 1", sum),
                        );
                    }
                    match clamps[j] {
                        Some(k) => {
                            if k >= r {
                                bad(
                                    format!("mechanism {} row {}", i, j),
                                    format!("clamp state {} out of range", k),
                                );
                            } else if row.iter().enumerate().any(|(s, &p)| {
                                if s == k {
                                    p != 1.0
                                } else {
                                    p != 0.0
                                }
                            }) {
                                bad(
                                    format!("mechanism {} row {}", i, j),
                                    format!("clamped row must be a point mass at state {}", k),
                                );
                            }
                        }
                        None => {
                            if row.iter().any(|&p| p <= 0.0) {
                                bad(
                                    format!("mechanism {} row {}", i, j),
                                    "unclamped entries must be strictly positive".into(),
                                );
                            }
                        }
                    }
                }
            }
            (MechanismFamily::Poisson, MechParams::Rates(rates)) => {
                if rates.len() != q {
                    bad(
                        format!("mechanism {}", i),
                        format!("{} rates for {} parent configurations", rates.len(), q),
                    );
                    continue;
                }
                for (j, &rate) in rates.iter().enumerate() {
                    if !(rate > 0.0) || !rate.is_finite() {
                        bad(
                            format!("mechanism {} config {}", i, j),
                            format!("rate must be positive and finite, got {}", rate),
                        );
                    }
                }
            }
            _ => bad(
                format!("mechanism {}", i),
                "parameter block kind does not match mechanism family".into(),
            ),
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn binary_nmi(parent_sets: &[&[usize]]) -> ModelStructure {
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

    fn uniform_params(s: &ModelStructure) -> ModelParams {
        ModelParams {
            cause_priors: s
                .causes
                .iter()
                .map(|c| {
                    let r = c.domain.cardinality().unwrap();
                    vec![1.0 / r as f64; r]
                })
                .collect(),
            mechanisms: s
                .mechanisms
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let q = s.config_count(i);
                    let r = m.domain.cardinality().unwrap();
                    MechParams::table(vec![vec![1.0 / r as f64; r]; q])
                })
                .collect(),
        }
    }

    #[test]
    fn valid_three_cause_nmi_passes() {
        let s = binary_nmi(&[&[0], &[1], &[2]]);
        let p = uniform_params(&s);
        assert!(validate(&s, &p).is_empty());
    }

    #[test]
    fn bad_row_sum_is_reported() {
        let s = binary_nmi(&[&[0]]);
        let mut p = uniform_params(&s);
        if let MechParams::Table { rows, .. } = &mut p.mechanisms[0] {
            rows[0] = vec![0.5, 0.6];
        }
        let v = validate(&s, &p);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("row sum"), "{}", v[0]);
    }

    #[test]
    fn parity_needs_binary_effect() {
        let mut s = binary_nmi(&[&[0], &[1]]);
        s.combo = CombinationFunction::Parity;
        s.effect = VariableSpec::finite("E", 3);
        let p = uniform_params(&s);
        let v = validate(&s, &p);
        assert!(v
            .iter()
            .any(|v| v.message.contains("parity requires binary effect")));
    }

    #[test]
    fn zero_mechanisms_invalid() {
        let mut s = binary_nmi(&[&[0]]);
        s.mechanisms.clear();
        let p = ModelParams {
            cause_priors: vec![vec![0.5, 0.5]; 3],
            mechanisms: vec![],
        };
        let v = validate(&s, &p);
        assert!(v
            .iter()
            .any(|v| v.message.contains("at least one mechanism")));
    }

    #[test]
    fn clamped_row_must_be_point_mass() {
        let s = binary_nmi(&[&[0]]);
        let mut p = uniform_params(&s);
        if let MechParams::Table { clamps, .. } = &mut p.mechanisms[0] {
            clamps[0] = Some(1);
        }
        let v = validate(&s, &p);
        assert!(v.iter().any(|v| v.message.contains("point mass")));
    }

    #[test]
    fn config_index_all_zero_prefix() {
        let s = binary_nmi(&[&[0, 1]]);
        assert_eq!(s.parent_config_index(0, &[0, 0, 1]).unwrap(), 0);
    }

    #[test]
    fn config_index_mixed_radix_verified_by_enumeration() {
        // parents (C1, C3): assignment (1, 0, 1) -> 1*2 + 1 = 3
        let s = binary_nmi(&[&[0, 2]]);
        assert_eq!(s.parent_config_index(0, &[1, 0, 1]).unwrap(), 3);
        // enumerate all 8 assignments and check against the inverse listing
        let configs = s.enumerate_configs(0);
        for a in s.enumerate_cause_assignments() {
            let j = s.parent_config_index(0, &a).unwrap();
            assert_eq!(configs[j], vec![a[0], a[2]]);
        }
    }

    #[test]
    fn leak_maps_to_config_zero() {
        let s = binary_nmi(&[&[]]);
        assert_eq!(s.parent_config_index(0, &[1, 1, 0]).unwrap(), 0);
        assert_eq!(s.enumerate_configs(0), vec![Vec::<u32>::new()]);
    }

    #[test]
    fn state_out_of_range_rejected() {
        let s = binary_nmi(&[&[0]]);
        assert!(matches!(
            s.parent_config_index(0, &[2, 0, 0]),
            Err(Error::StateOutOfRange { .. })
        ));
    }

    #[test]
    fn config_index_bijection() {
        // non-binary radices: causes of cardinality 2,3,4
        let s = ModelStructure {
            causes: vec![
                VariableSpec::finite("A", 2),
                VariableSpec::finite("B", 3),
                VariableSpec::finite("C", 4),
            ],
            effect: VariableSpec::finite("E", 2),
            mechanisms: vec![Mechanism::multinomial(vec![1, 2, 0], 2)],
            combo: CombinationFunction::Max,
        };
        let configs = s.enumerate_configs(0);
        assert_eq!(configs.len(), 24);
        let mut seen = vec![false; 24];
        for a in s.enumerate_cause_assignments() {
            let j = s.parent_config_index(0, &a).unwrap();
            assert_eq!(configs[j], vec![a[1], a[2], a[0]]);
            seen[j] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn unadjusted_dimension_catalog_values() {
        // single full-parent mechanism: 3 + 8 = 11
        assert_eq!(binary_nmi(&[&[0, 1, 2]]).unadjusted_dimension(None), 11);
        // three single-parent mechanisms: 3 + 6 = 9
        assert_eq!(
            binary_nmi(&[&[0], &[1], &[2]]).unadjusted_dimension(None),
            9
        );
        // three pairwise mechanisms: 3 + 12 = 15
        assert_eq!(
            binary_nmi(&[&[0, 1], &[0, 2], &[1, 2]]).unadjusted_dimension(None),
            15
        );
    }

    #[test]
    fn clamps_reduce_unadjusted_dimension() {
        let s = binary_nmi(&[&[0]]);
        let mut p = uniform_params(&s);
        if let MechParams::Table { rows, clamps } = &mut p.mechanisms[0] {
            rows[0] = vec![1.0, 0.0];
            clamps[0] = Some(0);
        }
        assert_eq!(s.unadjusted_dimension(None), 5);
        assert_eq!(s.unadjusted_dimension(Some(&p)), 4);
    }

    #[test]
    fn dataset_check_rejects_wrong_names_and_ranges() {
        let s = binary_nmi(&[&[0], &[1], &[2]]);
        let good = Dataset {
            names: vec!["C1".into(), "C2".into(), "C3".into(), "E".into()],
            rows: vec![vec![0, 1, 0, 1]],
        };
        assert!(good.check_against(&s).is_ok());

        let bad_name = Dataset {
            names: vec!["C1".into(), "X".into(), "C3".into(), "E".into()],
            rows: vec![],
        };
        assert!(bad_name.check_against(&s).is_err());

        let bad_state = Dataset {
            names: good.names.clone(),
            rows: vec![vec![0, 2, 0, 1]],
        };
        assert!(bad_state.check_against(&s).is_err());
    }
}
