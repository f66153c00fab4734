//! Constructors for the distributions, knowledge functions, and mechanisms
//! the analyses are run against, plus the scenario description that the CLI
//! schema maps onto.

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::model::{
    DatabaseDistribution, DbSpace, KnowledgeFunction, Mechanism, RecordAlphabet,
};
use crate::num::Prob;
use crate::verifier::Budget;

/// Database distribution families.
#[derive(Clone, Debug, PartialEq)]
pub enum DistributionSpec {
    /// iid records over a binary alphabet; `p` is the mass of the second
    /// record value (the "Yes" that counting mechanisms tally).
    IidBernoulli { p: f64 },
    /// Independent per-position categorical distributions.
    ProductCategorical { rows: Vec<Vec<f64>> },
    /// Explicit database probabilities; unlisted databases get mass zero.
    Tabulated { entries: Vec<(Vec<String>, f64)> },
}

/// Background-knowledge families. Indices are 0-based here; the CLI schema
/// converts from the 1-based convention of scenario files.
#[derive(Clone, Debug, PartialEq)]
pub enum KnowledgeSpec {
    /// No knowledge: a single constant value.
    None,
    /// The first `k` records.
    Prefix { k: usize },
    /// The records at a fixed set of positions.
    Subset { indices: Vec<usize> },
    /// Every record except position `i`: the classical-DP attacker.
    AllBut { i: usize },
    /// The whole database.
    Identity,
    /// Each record is revealed independently with probability `q`; hidden
    /// positions show as `?`. The canonical randomized knowledge function.
    IndependentReveal { q: f64 },
}

/// Mechanism families.
#[derive(Clone, Debug, PartialEq)]
pub enum MechanismSpec {
    /// Releases the count of "Yes" records when it clears the threshold,
    /// otherwise releases the literal value 0 — which collides with a true
    /// count of zero, exactly as intended.
    ThresholdedCount { t: i64, strict: bool },
    /// Releases the exact count.
    Count,
    /// Always releases the same output.
    Constant { output: String },
    /// Flips each record independently with probability `q` and releases the
    /// noisy database.
    RandomizedResponse { q: f64 },
}

pub fn make_distribution<P: Prob>(
    spec: &DistributionSpec,
    space: &DbSpace,
) -> Result<DatabaseDistribution<P>> {
    match spec {
        DistributionSpec::IidBernoulli { p } => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidParameter(format!(
                    "Bernoulli parameter {p} outside [0,1]"
                )));
            }
            DatabaseDistribution::iid_bernoulli(space.clone(), P::from_f64(*p))
        }
        DistributionSpec::ProductCategorical { rows } => {
            let rows = rows
                .iter()
                .map(|row| row.iter().map(|&p| P::from_f64(p)).collect())
                .collect();
            DatabaseDistribution::product(space.clone(), rows)
        }
        DistributionSpec::Tabulated { entries } => {
            let mut probs = vec![P::zero(); space.size()?];
            for (labels, p) in entries {
                if labels.len() != space.n() {
                    return Err(Error::DimensionMismatch(format!(
                        "tabulated entry lists {} records for n = {}",
                        labels.len(),
                        space.n()
                    )));
                }
                let mut rank = 0usize;
                for l in labels {
                    let idx = space.alphabet().index_of(l).ok_or_else(|| {
                        Error::InvalidParameter(format!("unknown record label {l:?}"))
                    })?;
                    rank = rank * space.alphabet().len() + idx as usize;
                }
                probs[rank] += &P::from_f64(*p);
            }
            DatabaseDistribution::tabulated(space.clone(), probs)
        }
    }
}

pub fn make_knowledge<P: Prob>(
    spec: &KnowledgeSpec,
    space: &DbSpace,
) -> Result<KnowledgeFunction<P>> {
    let size = space.size()?;
    let n = space.n();
    let base = space.alphabet().len();
    match spec {
        KnowledgeSpec::None => {
            KnowledgeFunction::deterministic(vec!["()".to_string()], vec![0; size])
        }
        KnowledgeSpec::Prefix { k } => {
            if *k > n {
                return Err(Error::DimensionMismatch(format!(
                    "prefix length {k} exceeds n = {n}"
                )));
            }
            if *k == 0 {
                return make_knowledge(&KnowledgeSpec::None, space);
            }
            let positions: Vec<usize> = (0..*k).collect();
            subset_knowledge(space, &positions)
        }
        KnowledgeSpec::Subset { indices } => {
            let mut positions = indices.clone();
            positions.sort_unstable();
            positions.dedup();
            if positions.len() != indices.len() {
                return Err(Error::InvalidParameter(
                    "subset positions must be distinct".to_string(),
                ));
            }
            if positions.iter().any(|&i| i >= n) {
                return Err(Error::DimensionMismatch(format!(
                    "subset position outside 0..{n}"
                )));
            }
            if positions.is_empty() {
                return make_knowledge(&KnowledgeSpec::None, space);
            }
            subset_knowledge(space, &positions)
        }
        KnowledgeSpec::AllBut { i } => {
            if *i >= n {
                return Err(Error::DimensionMismatch(format!(
                    "all_but position {i} outside 0..{n}"
                )));
            }
            let positions: Vec<usize> = (0..n).filter(|j| j != i).collect();
            if positions.is_empty() {
                return make_knowledge(&KnowledgeSpec::None, space);
            }
            subset_knowledge(space, &positions)
        }
        KnowledgeSpec::Identity => {
            let positions: Vec<usize> = (0..n).collect();
            subset_knowledge(space, &positions)
        }
        KnowledgeSpec::IndependentReveal { q } => {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::InvalidParameter(format!(
                    "reveal probability {q} outside [0,1]"
                )));
            }
            // Knowledge values are masked databases over base |T|+1:
            // digit 0 is hidden, digit v+1 is the revealed record v.
            let kbase = base + 1;
            let mut kspace = 1usize;
            for _ in 0..n {
                kspace = kspace.checked_mul(kbase).ok_or(Error::BudgetExceeded {
                    required: (kbase as f64).powi(n as i32),
                    budget: usize::MAX as f64,
                })?;
            }
            let labels = (0..kspace)
                .map(|krank| {
                    let mut rest = krank;
                    let mut parts = vec![String::new(); n];
                    for i in (0..n).rev() {
                        let d = rest % kbase;
                        rest /= kbase;
                        parts[i] = if d == 0 {
                            "?".to_string()
                        } else {
                            space.alphabet().label((d - 1) as u8).to_string()
                        };
                    }
                    parts.join("|")
                })
                .collect();
            let qv = P::from_f64(*q);
            let hide = P::one() - &qv;
            let mut rows = Vec::with_capacity(size);
            for rank in 0..size {
                let mut row: Vec<(usize, P)> = vec![(0, P::one())];
                for i in 0..n {
                    let digit = space.digit(rank, i) as usize;
                    let mut next = Vec::with_capacity(row.len() * 2);
                    for (krank, w) in &row {
                        // Hidden branch contributes digit 0.
                        if !hide.is_zero() {
                            next.push((krank * kbase, w.clone() * &hide));
                        }
                        if !qv.is_zero() {
                            next.push((krank * kbase + digit + 1, w.clone() * &qv));
                        }
                    }
                    row = next;
                }
                rows.push(row);
            }
            KnowledgeFunction::stochastic(labels, rows)
        }
    }
}

/// Deterministic knowledge built from a sorted set of revealed positions.
fn subset_knowledge<P: Prob>(space: &DbSpace, positions: &[usize]) -> Result<KnowledgeFunction<P>> {
    let size = space.size()?;
    let base = space.alphabet().len();
    let mut kspace = 1usize;
    for _ in positions {
        kspace = kspace.checked_mul(base).ok_or(Error::BudgetExceeded {
            required: (base as f64).powi(positions.len() as i32),
            budget: usize::MAX as f64,
        })?;
    }
    let labels = (0..kspace)
        .map(|krank| {
            let mut rest = krank;
            let mut parts = vec![""; positions.len()];
            for j in (0..positions.len()).rev() {
                parts[j] = space.alphabet().label((rest % base) as u8);
                rest /= base;
            }
            parts.join("|")
        })
        .collect();
    let mut map = Vec::with_capacity(size);
    for rank in 0..size {
        let mut krank = 0usize;
        for &i in positions {
            krank = krank * base + space.digit(rank, i) as usize;
        }
        map.push(krank);
    }
    KnowledgeFunction::deterministic(labels, map)
}

pub fn make_mechanism<P: Prob>(spec: &MechanismSpec, space: &DbSpace) -> Result<Mechanism<P>> {
    let n = space.n();
    match spec {
        MechanismSpec::ThresholdedCount { t, strict } => {
            // T = -1 is allowed so that the never-binding threshold is
            // expressible; it behaves as a plain count.
            if *t < -1 || *t > n as i64 {
                return Err(Error::InvalidParameter(format!(
                    "threshold {t} outside [-1, {n}]"
                )));
            }
            let released = |c: usize| {
                if *strict {
                    (c as i64) > *t
                } else {
                    (c as i64) >= *t
                }
            };
            let mut values: Vec<usize> = Vec::new();
            for c in 0..=n {
                let v = if released(c) { c } else { 0 };
                if !values.contains(&v) {
                    values.push(v);
                }
            }
            values.sort_unstable();
            let outputs: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            let map = (0..=n)
                .map(|c| {
                    let v = if released(c) { c } else { 0 };
                    values.iter().position(|&x| x == v).expect("value present")
                })
                .collect();
            Mechanism::sum_map(space.clone(), outputs, map)
        }
        MechanismSpec::Count => {
            let outputs = (0..=n).map(|c| c.to_string()).collect();
            Mechanism::sum_map(space.clone(), outputs, (0..=n).collect())
        }
        MechanismSpec::Constant { output } => {
            Ok(Mechanism::constant(space.clone(), output.clone()))
        }
        MechanismSpec::RandomizedResponse { q } => {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::InvalidParameter(format!(
                    "flip probability {q} outside [0,1]"
                )));
            }
            Mechanism::record_flip(space.clone(), P::from_f64(*q))
        }
    }
}

/// Which guarantee an analysis run evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalysisModel {
    Dp,
    Apk,
    Ppk,
    /// Both partial-knowledge models side by side.
    Compare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineChoice {
    Exact,
    Fastpath,
    Montecarlo,
}

/// Inclusive 1-based range of attacked indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TargetRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug)]
pub struct AnalysisSpec {
    pub model: AnalysisModel,
    pub epsilons: Vec<f64>,
    pub engine: EngineChoice,
    pub samples: Option<u64>,
    pub seed: Option<u64>,
    /// Overrides the strictness of a thresholded-count mechanism.
    pub threshold_strict: Option<bool>,
}

/// A full scenario description: the tuple (distributions, knowledge
/// functions, mechanism) plus how to analyze it.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub alphabet: Vec<String>,
    pub n: usize,
    pub distributions: Vec<DistributionSpec>,
    pub knowledge: Vec<KnowledgeSpec>,
    pub mechanism: MechanismSpec,
    /// 1-based inclusive range of target indices; `None` attacks every index.
    pub targets: Option<TargetRange>,
    pub analysis: AnalysisSpec,
}

impl ScenarioSpec {
    /// The mechanism spec after applying the analysis-level strictness
    /// override. Returns the effective spec and whether an override happened.
    pub fn effective_mechanism(&self) -> (MechanismSpec, bool) {
        match (&self.mechanism, self.analysis.threshold_strict) {
            (MechanismSpec::ThresholdedCount { t, strict }, Some(s)) => (
                MechanismSpec::ThresholdedCount { t: *t, strict: s },
                s != *strict,
            ),
            _ => (self.mechanism.clone(), false),
        }
    }

    /// Structural validation: every dimension check the engines rely on.
    pub fn validate(&self) -> Result<()> {
        let alphabet = RecordAlphabet::new(self.alphabet.clone())?;
        let space = DbSpace::new(alphabet, self.n)?;
        if self.distributions.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one distribution is required".to_string(),
            ));
        }
        if self.knowledge.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one knowledge function is required".to_string(),
            ));
        }
        for d in &self.distributions {
            match d {
                DistributionSpec::IidBernoulli { p } => {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::InvalidParameter(format!(
                            "Bernoulli parameter {p} outside [0,1]"
                        )));
                    }
                    if space.alphabet().len() != 2 {
                        return Err(Error::DimensionMismatch(
                            "iid_bernoulli needs a binary alphabet".to_string(),
                        ));
                    }
                }
                DistributionSpec::ProductCategorical { rows } => {
                    if rows.len() != self.n {
                        return Err(Error::DimensionMismatch(format!(
                            "product form lists {} positions for n = {}",
                            rows.len(),
                            self.n
                        )));
                    }
                    for row in rows {
                        if row.len() != space.alphabet().len() {
                            return Err(Error::DimensionMismatch(
                                "product row length must match the alphabet".to_string(),
                            ));
                        }
                        if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                            return Err(Error::InvalidParameter(
                                "record probabilities must lie in [0,1]".to_string(),
                            ));
                        }
                        let mass: f64 = row.iter().sum();
                        if (mass - 1.0).abs() > crate::model::MASS_TOLERANCE {
                            return Err(Error::InvalidParameter(format!(
                                "product row mass {mass} is not 1"
                            )));
                        }
                    }
                }
                DistributionSpec::Tabulated { entries } => {
                    for (labels, p) in entries {
                        if labels.len() != self.n {
                            return Err(Error::DimensionMismatch(format!(
                                "tabulated entry lists {} records for n = {}",
                                labels.len(),
                                self.n
                            )));
                        }
                        for l in labels {
                            if space.alphabet().index_of(l).is_none() {
                                return Err(Error::InvalidParameter(format!(
                                    "unknown record label {l:?}"
                                )));
                            }
                        }
                        if !(0.0..=1.0).contains(p) {
                            return Err(Error::InvalidParameter(
                                "database probabilities must lie in [0,1]".to_string(),
                            ));
                        }
                    }
                }
            }
        }
        for z in &self.knowledge {
            match z {
                KnowledgeSpec::Prefix { k } => {
                    if *k > self.n {
                        return Err(Error::DimensionMismatch(format!(
                            "prefix length {k} exceeds n = {}",
                            self.n
                        )));
                    }
                }
                KnowledgeSpec::Subset { indices } => {
                    if indices.iter().any(|&i| i >= self.n) {
                        return Err(Error::DimensionMismatch(
                            "subset position outside the database".to_string(),
                        ));
                    }
                }
                KnowledgeSpec::AllBut { i } => {
                    if *i >= self.n {
                        return Err(Error::DimensionMismatch(
                            "all_but position outside the database".to_string(),
                        ));
                    }
                }
                KnowledgeSpec::IndependentReveal { q } => {
                    if !(0.0..=1.0).contains(q) {
                        return Err(Error::InvalidParameter(format!(
                            "reveal probability {q} outside [0,1]"
                        )));
                    }
                }
                KnowledgeSpec::None | KnowledgeSpec::Identity => {}
            }
        }
        let (mech, _) = self.effective_mechanism();
        match &mech {
            MechanismSpec::ThresholdedCount { t, .. } => {
                if space.alphabet().len() != 2 {
                    return Err(Error::DimensionMismatch(
                        "thresholded_count needs a binary alphabet".to_string(),
                    ));
                }
                if *t < -1 || *t > self.n as i64 {
                    return Err(Error::InvalidParameter(format!(
                        "threshold {t} outside [-1, {}]",
                        self.n
                    )));
                }
            }
            MechanismSpec::Count => {
                if space.alphabet().len() != 2 {
                    return Err(Error::DimensionMismatch(
                        "count needs a binary alphabet".to_string(),
                    ));
                }
            }
            MechanismSpec::RandomizedResponse { q } => {
                if space.alphabet().len() != 2 {
                    return Err(Error::DimensionMismatch(
                        "randomized_response needs a binary alphabet".to_string(),
                    ));
                }
                if !(0.0..=1.0).contains(q) {
                    return Err(Error::InvalidParameter(format!(
                        "flip probability {q} outside [0,1]"
                    )));
                }
            }
            MechanismSpec::Constant { .. } => {}
        }
        if let Some(range) = &self.targets {
            if range.min == 0 || range.min > range.max || range.max > self.n {
                return Err(Error::InvalidParameter(format!(
                    "target range {}..={} outside 1..={}",
                    range.min, range.max, self.n
                )));
            }
        }
        for e in &self.analysis.epsilons {
            if !e.is_finite() || *e < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "epsilon {e} must be finite and nonnegative"
                )));
            }
        }
        if self.analysis.epsilons.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one epsilon is required".to_string(),
            ));
        }
        if self.analysis.engine == EngineChoice::Montecarlo {
            if self.analysis.samples.unwrap_or(0) == 0 {
                return Err(Error::InvalidParameter(
                    "the montecarlo engine requires a positive sample count".to_string(),
                ));
            }
            if self.analysis.seed.is_none() {
                return Err(Error::InvalidParameter(
                    "the montecarlo engine requires a seed".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// 0-based target indices, after applying the optional range.
    pub fn target_indices(&self) -> Vec<usize> {
        match &self.targets {
            Some(range) => (range.min - 1..range.max).collect(),
            None => (0..self.n).collect(),
        }
    }
}

/// A compiled scenario: every component materialized for the exact engine.
#[derive(Clone, Debug)]
pub struct Scenario<P: Prob> {
    pub space: DbSpace,
    pub thetas: Vec<DatabaseDistribution<P>>,
    pub zetas: Vec<KnowledgeFunction<P>>,
    pub mechanism: Mechanism<P>,
    /// 0-based target indices.
    pub targets: Vec<usize>,
}

/// Materializes a scenario for exact enumeration, refusing to build anything
/// whose materialization alone would blow the budget.
pub fn compile<P: Prob>(spec: &ScenarioSpec, budget: &Budget) -> Result<Scenario<P>> {
    spec.validate()?;
    let alphabet = RecordAlphabet::new(spec.alphabet.clone())?;
    let space = DbSpace::new(alphabet, spec.n)?;

    let mut materialization = space.size_approx();
    if spec
        .knowledge
        .iter()
        .any(|z| matches!(z, KnowledgeSpec::IndependentReveal { .. }))
    {
        materialization *= 2f64.powi(spec.n as i32);
    }
    if matches!(spec.mechanism, MechanismSpec::RandomizedResponse { .. }) {
        materialization *= space.size_approx();
    }
    budget.check(materialization)?;

    let thetas = spec
        .distributions
        .iter()
        .map(|d| make_distribution(d, &space))
        .collect::<Result<Vec<_>>>()?;
    let zetas = spec
        .knowledge
        .iter()
        .map(|z| make_knowledge(z, &space))
        .collect::<Result<Vec<_>>>()?;
    let (mech_spec, _) = spec.effective_mechanism();
    let mechanism = make_mechanism(&mech_spec, &space)?;
    Ok(Scenario {
        space,
        thetas,
        zetas,
        mechanism,
        targets: spec.target_indices(),
    })
}
