//! Finite probabilistic model: fixed-size databases over a finite record
//! alphabet, exact distributions over them, stochastic mechanisms, and
//! background-knowledge functions, with exact conditioning.
//!
//! Everything here is an immutable value after construction and all
//! operations are pure, so the types are safe to share across threads.

use num_traits::{One, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::num::Prob;

/// Validation tolerance for probability masses (exact mode passes trivially).
pub const MASS_TOLERANCE: f64 = 1e-12;

/// The finite set of possible record values, in a fixed canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordAlphabet {
    labels: Vec<String>,
}

impl RecordAlphabet {
    pub fn new<S: Into<String>>(labels: Vec<S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidParameter(
                "alphabet must not be empty".to_string(),
            ));
        }
        if labels.len() > 256 {
            return Err(Error::InvalidParameter(
                "alphabet holds at most 256 record values".to_string(),
            ));
        }
        for (idx, l) in labels.iter().enumerate() {
            if labels[..idx].contains(l) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate record label {l:?}"
                )));
            }
        }
        Ok(Self { labels })
    }

    /// The two-value alphabet used by referendum-style scenarios. Index 1 is
    /// the "Yes" that counting mechanisms tally.
    pub fn binary() -> Self {
        Self::new(vec!["No", "Yes"]).expect("static labels")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn label(&self, idx: u8) -> &str {
        &self.labels[idx as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<u8> {
        self.labels.iter().position(|l| l == label).map(|i| i as u8)
    }
}

/// A fixed-size database: record indices into a [`RecordAlphabet`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Database {
    records: Vec<u8>,
}

impl Database {
    pub fn new(records: Vec<u8>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, i: usize) -> u8 {
        self.records[i]
    }

    pub fn records(&self) -> &[u8] {
        &self.records
    }

    /// Count of records equal to `value`.
    pub fn count_of(&self, value: u8) -> usize {
        self.records.iter().filter(|&&r| r == value).count()
    }

    pub fn label<'a>(&self, alphabet: &'a RecordAlphabet) -> String {
        let parts: Vec<&'a str> = self.records.iter().map(|&r| alphabet.label(r)).collect();
        parts.join("|")
    }
}

/// The space of all databases of size `n` over an alphabet, with a canonical
/// ranking (first coordinate most significant).
#[derive(Clone, Debug, PartialEq)]
pub struct DbSpace {
    alphabet: RecordAlphabet,
    n: usize,
}

impl DbSpace {
    pub fn new(alphabet: RecordAlphabet, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "database size must be positive".to_string(),
            ));
        }
        Ok(Self { alphabet, n })
    }

    pub fn alphabet(&self) -> &RecordAlphabet {
        &self.alphabet
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `|alphabet|^n` as a float; stays usable when the space is astronomically
    /// large (budget checks compare against this before any materialization).
    pub fn size_approx(&self) -> f64 {
        (self.alphabet.len() as f64).powi(self.n as i32)
    }

    /// Materializable size, or an error when it cannot even be indexed.
    pub fn size(&self) -> Result<usize> {
        let base = self.alphabet.len();
        let mut size: usize = 1;
        for _ in 0..self.n {
            size = size.checked_mul(base).ok_or(Error::BudgetExceeded {
                required: self.size_approx(),
                budget: usize::MAX as f64,
            })?;
        }
        Ok(size)
    }

    /// Record value at position `i` (0-based) of the database with this rank.
    pub fn digit(&self, rank: usize, i: usize) -> u8 {
        let base = self.alphabet.len();
        let stride = base.pow((self.n - 1 - i) as u32);
        ((rank / stride) % base) as u8
    }

    pub fn rank(&self, db: &Database) -> usize {
        debug_assert_eq!(db.len(), self.n);
        let base = self.alphabet.len();
        db.records()
            .iter()
            .fold(0usize, |acc, &r| acc * base + r as usize)
    }

    pub fn unrank(&self, rank: usize) -> Database {
        let base = self.alphabet.len();
        let mut records = vec![0u8; self.n];
        let mut rest = rank;
        for i in (0..self.n).rev() {
            records[i] = (rest % base) as u8;
            rest /= base;
        }
        Database::new(records)
    }

    /// Rank of the database that equals `rank` except at position `i`.
    pub fn with_digit(&self, rank: usize, i: usize, value: u8) -> usize {
        let base = self.alphabet.len();
        let stride = base.pow((self.n - 1 - i) as u32);
        let old = (rank / stride) % base;
        rank - old * stride + value as usize * stride
    }
}

/// An exact, finite distribution over a database space. Product forms stay
/// unexpanded so that scenario descriptions scale to sizes only the fast
/// evaluator can handle.
#[derive(Clone, Debug)]
pub struct DatabaseDistribution<P: Prob> {
    space: DbSpace,
    form: DistForm<P>,
}

#[derive(Clone, Debug)]
enum DistForm<P> {
    /// Dense probabilities indexed by database rank.
    Tabulated(Vec<P>),
    /// Independent per-position categorical distributions.
    Product(Vec<Vec<P>>),
    /// iid records over a binary alphabet; `p` is the mass of record 1.
    IidBernoulli { p: P },
}

fn check_mass<P: Prob>(mass: &P, what: &str) -> Result<()> {
    if (mass.to_f64() - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "{what} has total mass {} instead of 1",
            mass.to_f64()
        )));
    }
    Ok(())
}

fn check_prob<P: Prob>(p: &P, what: &str) -> Result<()> {
    if *p < P::zero() || *p > P::one() {
        return Err(Error::InvalidParameter(format!(
            "{what} must lie in [0,1], got {}",
            p.to_f64()
        )));
    }
    Ok(())
}

impl<P: Prob> DatabaseDistribution<P> {
    pub fn tabulated(space: DbSpace, probs: Vec<P>) -> Result<Self> {
        if probs.len() != space.size()? {
            return Err(Error::DimensionMismatch(format!(
                "tabulated distribution has {} entries for a space of {}",
                probs.len(),
                space.size()?
            )));
        }
        let mut mass = P::zero();
        for p in &probs {
            check_prob(p, "database probability")?;
            mass += p;
        }
        check_mass(&mass, "tabulated distribution")?;
        Ok(Self {
            space,
            form: DistForm::Tabulated(probs),
        })
    }

    /// Tabulated form from explicit (database, probability) pairs; unlisted
    /// databases get probability zero.
    pub fn from_entries(space: DbSpace, entries: &[(Database, P)]) -> Result<Self> {
        let mut probs = vec![P::zero(); space.size()?];
        for (db, p) in entries {
            if db.len() != space.n() {
                return Err(Error::DimensionMismatch(format!(
                    "database of size {} in a space of size {}",
                    db.len(),
                    space.n()
                )));
            }
            probs[space.rank(db)] += p;
        }
        Self::tabulated(space, probs)
    }

    pub fn product(space: DbSpace, rows: Vec<Vec<P>>) -> Result<Self> {
        if rows.len() != space.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} per-position rows for n = {}",
                rows.len(),
                space.n()
            )));
        }
        for row in &rows {
            if row.len() != space.alphabet().len() {
                return Err(Error::DimensionMismatch(
                    "per-position row length must match the alphabet".to_string(),
                ));
            }
            let mut mass = P::zero();
            for p in row {
                check_prob(p, "record probability")?;
                mass += p;
            }
            check_mass(&mass, "per-position distribution")?;
        }
        Ok(Self {
            space,
            form: DistForm::Product(rows),
        })
    }

    pub fn iid_bernoulli(space: DbSpace, p: P) -> Result<Self> {
        if space.alphabet().len() != 2 {
            return Err(Error::DimensionMismatch(
                "iid Bernoulli needs a binary alphabet".to_string(),
            ));
        }
        check_prob(&p, "Bernoulli parameter")?;
        Ok(Self {
            space,
            form: DistForm::IidBernoulli { p },
        })
    }

    pub fn space(&self) -> &DbSpace {
        &self.space
    }

    /// Probability of a single database, evaluated without expansion.
    pub fn prob_of_rank(&self, rank: usize) -> P {
        match &self.form {
            DistForm::Tabulated(probs) => probs[rank].clone(),
            DistForm::Product(rows) => {
                let mut acc = P::one();
                for (i, row) in rows.iter().enumerate() {
                    acc *= &row[self.space.digit(rank, i) as usize];
                }
                acc
            }
            DistForm::IidBernoulli { p } => {
                let mut acc = P::one();
                let q = P::one() - p;
                for i in 0..self.space.n() {
                    if self.space.digit(rank, i) == 1 {
                        acc *= p;
                    } else {
                        acc *= &q;
                    }
                }
                acc
            }
        }
    }

    pub fn prob(&self, db: &Database) -> P {
        self.prob_of_rank(self.space.rank(db))
    }

    /// Dense expansion indexed by rank. Callers gate this behind the
    /// enumeration budget; the expansion itself just needs an indexable space.
    pub fn expand(&self) -> Result<Vec<P>> {
        let size = self.space.size()?;
        match &self.form {
            DistForm::Tabulated(probs) => Ok(probs.clone()),
            _ => {
                let mut out = Vec::with_capacity(size);
                for rank in 0..size {
                    out.push(self.prob_of_rank(rank));
                }
                Ok(out)
            }
        }
    }

    /// True when the form is a product (or iid) over positions, which lets
    /// samplers pin one coordinate directly.
    pub fn per_position_rows(&self) -> Option<Vec<Vec<P>>> {
        match &self.form {
            DistForm::Tabulated(_) => None,
            DistForm::Product(rows) => Some(rows.clone()),
            DistForm::IidBernoulli { p } => {
                let q = P::one() - p;
                Some(vec![vec![q, p.clone()]; self.space.n()])
            }
        }
    }
}

/// A background-knowledge function: for every database, a distribution over a
/// finite knowledge space. Deterministic functions are the point-mass case.
#[derive(Clone, Debug)]
pub struct KnowledgeFunction<P: Prob> {
    labels: Vec<String>,
    rows: KnowledgeRows<P>,
    deterministic: bool,
}

#[derive(Clone, Debug)]
enum KnowledgeRows<P> {
    /// Knowledge value per database rank.
    Deterministic(Vec<usize>),
    /// Sparse distribution over knowledge values, per database rank.
    Stochastic(Vec<Vec<(usize, P)>>),
}

impl<P: Prob> KnowledgeFunction<P> {
    pub fn deterministic(labels: Vec<String>, map: Vec<usize>) -> Result<Self> {
        for &k in &map {
            if k >= labels.len() {
                return Err(Error::DimensionMismatch(format!(
                    "knowledge value {k} outside a space of {}",
                    labels.len()
                )));
            }
        }
        Ok(Self {
            labels,
            rows: KnowledgeRows::Deterministic(map),
            deterministic: true,
        })
    }

    pub fn stochastic(labels: Vec<String>, rows: Vec<Vec<(usize, P)>>) -> Result<Self> {
        let mut all_point_masses = true;
        for row in &rows {
            let mut mass = P::zero();
            for (k, p) in row {
                if *k >= labels.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "knowledge value {k} outside a space of {}",
                        labels.len()
                    )));
                }
                check_prob(p, "knowledge probability")?;
                mass += p;
            }
            check_mass(&mass, "knowledge row")?;
            if row.len() != 1 || row[0].1 != P::one() {
                all_point_masses = false;
            }
        }
        if all_point_masses {
            let map = rows.into_iter().map(|row| row[0].0).collect();
            return Self::deterministic(labels, map);
        }
        Ok(Self {
            labels,
            rows: KnowledgeRows::Stochastic(rows),
            deterministic: false,
        })
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn space_size(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn num_databases(&self) -> usize {
        match &self.rows {
            KnowledgeRows::Deterministic(map) => map.len(),
            KnowledgeRows::Stochastic(rows) => rows.len(),
        }
    }

    /// Worst-case support size of a single row.
    pub fn max_row_support(&self) -> usize {
        match &self.rows {
            KnowledgeRows::Deterministic(_) => 1,
            KnowledgeRows::Stochastic(rows) => rows.iter().map(Vec::len).max().unwrap_or(0),
        }
    }

    /// Probability that the knowledge value of database `rank` equals `k`.
    pub fn prob(&self, rank: usize, k: usize) -> P {
        match &self.rows {
            KnowledgeRows::Deterministic(map) => {
                if map[rank] == k {
                    P::one()
                } else {
                    P::zero()
                }
            }
            KnowledgeRows::Stochastic(rows) => rows[rank]
                .iter()
                .find(|(kk, _)| *kk == k)
                .map(|(_, p)| p.clone())
                .unwrap_or_else(P::zero),
        }
    }

    /// Visits the support of row `rank` as `(knowledge value, probability)`.
    pub fn for_each(&self, rank: usize, mut f: impl FnMut(usize, &P)) {
        match &self.rows {
            KnowledgeRows::Deterministic(map) => {
                let one = P::one();
                f(map[rank], &one);
            }
            KnowledgeRows::Stochastic(rows) => {
                for (k, p) in &rows[rank] {
                    f(*k, p);
                }
            }
        }
    }

    pub fn sample<R: Rng>(&self, rank: usize, rng: &mut R) -> usize {
        match &self.rows {
            KnowledgeRows::Deterministic(map) => map[rank],
            KnowledgeRows::Stochastic(rows) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let row = &rows[rank];
                for (k, p) in row {
                    acc += p.to_f64();
                    if u < acc {
                        return *k;
                    }
                }
                row.last().expect("nonempty row").0
            }
        }
    }
}

/// A stochastic map from databases to a finite output space.
#[derive(Clone, Debug)]
pub struct Mechanism<P: Prob> {
    space: DbSpace,
    outputs: Vec<String>,
    kernel: Kernel<P>,
}

#[derive(Clone, Debug)]
enum Kernel<P> {
    /// Dense rows indexed by database rank.
    Rows(Vec<Vec<P>>),
    /// Deterministic output as a function of the count of record 1
    /// (binary alphabets): `map[count] = output index`.
    SumMap(Vec<usize>),
    /// Always the same output.
    Constant(usize),
    /// Each record is flipped independently with probability `q`; the output
    /// space is the database space itself (binary alphabets).
    RecordFlip { q: P },
}

impl<P: Prob> Mechanism<P> {
    pub fn from_rows(space: DbSpace, outputs: Vec<String>, rows: Vec<Vec<P>>) -> Result<Self> {
        if rows.len() != space.size()? {
            return Err(Error::DimensionMismatch(format!(
                "{} kernel rows for a space of {}",
                rows.len(),
                space.size()?
            )));
        }
        for row in &rows {
            if row.len() != outputs.len() {
                return Err(Error::DimensionMismatch(
                    "kernel row length must match the output space".to_string(),
                ));
            }
            let mut mass = P::zero();
            for p in row {
                check_prob(p, "output probability")?;
                mass += p;
            }
            check_mass(&mass, "kernel row")?;
        }
        Ok(Self {
            space,
            outputs,
            kernel: Kernel::Rows(rows),
        })
    }

    /// Deterministic sum-dependent mechanism over a binary alphabet:
    /// `count_to_output[c]` is the output index released when the database
    /// holds `c` records of value 1.
    pub fn sum_map(space: DbSpace, outputs: Vec<String>, count_to_output: Vec<usize>) -> Result<Self> {
        if space.alphabet().len() != 2 {
            return Err(Error::DimensionMismatch(
                "sum-dependent mechanisms need a binary alphabet".to_string(),
            ));
        }
        if count_to_output.len() != space.n() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "sum map must cover counts 0..={}",
                space.n()
            )));
        }
        for &o in &count_to_output {
            if o >= outputs.len() {
                return Err(Error::DimensionMismatch(format!(
                    "output index {o} outside a space of {}",
                    outputs.len()
                )));
            }
        }
        Ok(Self {
            space,
            outputs,
            kernel: Kernel::SumMap(count_to_output),
        })
    }

    pub fn constant(space: DbSpace, output: String) -> Self {
        Self {
            space,
            outputs: vec![output],
            kernel: Kernel::Constant(0),
        }
    }

    /// Randomized response: flips each record independently with probability
    /// `q` and releases the whole noisy database.
    pub fn record_flip(space: DbSpace, q: P) -> Result<Self> {
        if space.alphabet().len() != 2 {
            return Err(Error::DimensionMismatch(
                "randomized response needs a binary alphabet".to_string(),
            ));
        }
        check_prob(&q, "flip probability")?;
        let size = space.size()?;
        let outputs = (0..size)
            .map(|rank| space.unrank(rank).label(space.alphabet()))
            .collect();
        Ok(Self {
            space,
            outputs,
            kernel: Kernel::RecordFlip { q },
        })
    }

    pub fn space(&self) -> &DbSpace {
        &self.space
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Count used by sum-dependent kernels.
    fn count_of_rank(&self, rank: usize) -> usize {
        let mut count = 0;
        for i in 0..self.space.n() {
            if self.space.digit(rank, i) == 1 {
                count += 1;
            }
        }
        count
    }

    /// If the mechanism factors through the count of record 1, the
    /// count-to-output map (used by the exchangeable fast path).
    pub fn as_sum_map(&self) -> Option<Vec<usize>> {
        match &self.kernel {
            Kernel::SumMap(map) => Some(map.clone()),
            Kernel::Constant(o) if self.space.alphabet().len() == 2 => {
                Some(vec![*o; self.space.n() + 1])
            }
            _ => None,
        }
    }

    pub fn output_prob(&self, rank: usize, output: usize) -> P {
        match &self.kernel {
            Kernel::Rows(rows) => rows[rank][output].clone(),
            Kernel::SumMap(map) => {
                if map[self.count_of_rank(rank)] == output {
                    P::one()
                } else {
                    P::zero()
                }
            }
            Kernel::Constant(o) => {
                if *o == output {
                    P::one()
                } else {
                    P::zero()
                }
            }
            Kernel::RecordFlip { q } => {
                let mut acc = P::one();
                let keep = P::one() - q;
                for i in 0..self.space.n() {
                    if self.space.digit(rank, i) == self.space.digit(output, i) {
                        acc *= &keep;
                    } else {
                        acc *= q;
                    }
                }
                acc
            }
        }
    }

    /// Visits the support of the output row for database `rank`.
    pub fn for_each_output(&self, rank: usize, mut f: impl FnMut(usize, &P)) {
        match &self.kernel {
            Kernel::Rows(rows) => {
                for (o, p) in rows[rank].iter().enumerate() {
                    if !p.is_zero() {
                        f(o, p);
                    }
                }
            }
            Kernel::SumMap(map) => {
                let one = P::one();
                f(map[self.count_of_rank(rank)], &one);
            }
            Kernel::Constant(o) => {
                let one = P::one();
                f(*o, &one);
            }
            Kernel::RecordFlip { .. } => {
                for o in 0..self.outputs.len() {
                    let p = self.output_prob(rank, o);
                    if !p.is_zero() {
                        f(o, &p);
                    }
                }
            }
        }
    }

    /// Sparse output row, reusable across inner loops.
    pub fn output_row(&self, rank: usize) -> Vec<(usize, P)> {
        let mut row = Vec::new();
        self.for_each_output(rank, |o, p| row.push((o, p.clone())));
        row
    }

    pub fn sample_output<R: Rng>(&self, rank: usize, rng: &mut R) -> usize {
        match &self.kernel {
            Kernel::SumMap(map) => map[self.count_of_rank(rank)],
            Kernel::Constant(o) => *o,
            _ => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut last = 0;
                for o in 0..self.outputs.len() {
                    let p = self.output_prob(rank, o).to_f64();
                    if p > 0.0 {
                        acc += p;
                        last = o;
                        if u < acc {
                            return o;
                        }
                    }
                }
                last
            }
        }
    }
}

/// The joint law of `(database, knowledge value)` under a distribution and a
/// knowledge function: the canonical object behind every conditioning step.
#[derive(Clone, Debug)]
pub struct JointState<P: Prob> {
    space: DbSpace,
    knowledge_labels: Vec<String>,
    /// Sparse weights `(db rank, knowledge value, theta(D) * zeta(D)(B))`.
    weights: Vec<(usize, usize, P)>,
}

/// Builds the joint law of `(D, zeta(D))` with `D ~ theta`.
pub fn joint<P: Prob>(
    theta: &DatabaseDistribution<P>,
    zeta: &KnowledgeFunction<P>,
) -> Result<JointState<P>> {
    let size = theta.space().size()?;
    if zeta.num_databases() != size {
        return Err(Error::DimensionMismatch(format!(
            "knowledge function covers {} databases, distribution {}",
            zeta.num_databases(),
            size
        )));
    }
    let dense = theta.expand()?;
    let mut weights = Vec::new();
    let mut mass = P::zero();
    for (rank, w0) in dense.iter().enumerate() {
        if w0.is_zero() {
            continue;
        }
        zeta.for_each(rank, |k, zp| {
            if !zp.is_zero() {
                let w = w0.clone() * zp;
                mass += &w;
                weights.push((rank, k, w));
            }
        });
    }
    check_mass(&mass, "joint state")?;
    Ok(JointState {
        space: theta.space().clone(),
        knowledge_labels: (0..zeta.space_size())
            .map(|k| zeta.label(k).to_string())
            .collect(),
        weights,
    })
}

impl<P: Prob> JointState<P> {
    pub fn space(&self) -> &DbSpace {
        &self.space
    }

    pub fn knowledge_labels(&self) -> &[String] {
        &self.knowledge_labels
    }

    pub fn weights(&self) -> &[(usize, usize, P)] {
        &self.weights
    }

    /// Exact probability of the event `{D(i) = a, zeta(D) = bhat}`; `None`
    /// for `bhat` means the knowledge value is left free.
    pub fn event_prob(&self, i: usize, a: u8, bhat: Option<usize>) -> P {
        let mut mass = P::zero();
        for (rank, k, w) in &self.weights {
            if self.space.digit(*rank, i) != a {
                continue;
            }
            if let Some(bh) = bhat {
                if *k != bh {
                    continue;
                }
            }
            mass += w;
        }
        mass
    }

    /// The database law conditioned on `{D(i) = a, zeta(D) = bhat}`,
    /// renormalized to mass one.
    pub fn condition(
        &self,
        i: usize,
        a: u8,
        bhat: Option<usize>,
    ) -> Result<DatabaseDistribution<P>> {
        let mut probs = vec![P::zero(); self.space.size()?];
        let mut mass = P::zero();
        for (rank, k, w) in &self.weights {
            if self.space.digit(*rank, i) != a {
                continue;
            }
            if let Some(bh) = bhat {
                if *k != bh {
                    continue;
                }
            }
            probs[*rank] += w;
            mass += w;
        }
        if mass.is_zero() {
            return Err(Error::ZeroMassEvent);
        }
        for p in &mut probs {
            *p /= &mass;
        }
        DatabaseDistribution::tabulated(self.space.clone(), probs)
    }
}

/// Push-forward of a database distribution through a mechanism.
pub fn output_dist<P: Prob>(
    theta: &DatabaseDistribution<P>,
    mech: &Mechanism<P>,
) -> Result<Vec<P>> {
    if theta.space() != mech.space() {
        return Err(Error::DimensionMismatch(
            "distribution and mechanism live on different database spaces".to_string(),
        ));
    }
    let dense = theta.expand()?;
    let mut dist = vec![P::zero(); mech.num_outputs()];
    for (rank, w) in dense.iter().enumerate() {
        if w.is_zero() {
            continue;
        }
        mech.for_each_output(rank, |o, p| {
            dist[o] += &(w.clone() * p);
        });
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_space(n: usize) -> DbSpace {
        DbSpace::new(RecordAlphabet::binary(), n).unwrap()
    }

    fn iid(n: usize, p: f64) -> DatabaseDistribution<f64> {
        DatabaseDistribution::iid_bernoulli(binary_space(n), p).unwrap()
    }

    fn prefix_knowledge(n: usize, k: usize) -> KnowledgeFunction<f64> {
        crate::scenarios::make_knowledge(
            &crate::scenarios::KnowledgeSpec::Prefix { k },
            &binary_space(n),
        )
        .unwrap()
    }

    #[test]
    fn ranking_round_trips() {
        let space = DbSpace::new(RecordAlphabet::new(vec!["a", "b", "c"]).unwrap(), 4).unwrap();
        for rank in 0..space.size().unwrap() {
            let db = space.unrank(rank);
            assert_eq!(space.rank(&db), rank);
            for i in 0..4 {
                assert_eq!(space.digit(rank, i), db.record(i));
            }
        }
        assert_eq!(space.with_digit(5, 3, 2), 5 - 5 % 3 + 2);
    }

    #[test]
    fn alphabet_rejects_duplicates() {
        assert!(RecordAlphabet::new(vec!["x", "x"]).is_err());
        assert!(RecordAlphabet::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn joint_of_point_mass_is_point_mass() {
        let space = binary_space(2);
        let db = Database::new(vec![1, 0]);
        let theta =
            DatabaseDistribution::from_entries(space.clone(), &[(db.clone(), 1.0)]).unwrap();
        let zeta = prefix_knowledge(2, 1);
        let j = joint(&theta, &zeta).unwrap();
        assert_eq!(j.weights().len(), 1);
        let (rank, k, w) = &j.weights()[0];
        assert_eq!(*rank, space.rank(&db));
        assert_eq!(zeta.label(*k), "Yes");
        assert_eq!(*w, 1.0);
    }

    #[test]
    fn joint_identity_on_one_coin() {
        let theta = iid(1, 0.5);
        let zeta = crate::scenarios::make_knowledge(
            &crate::scenarios::KnowledgeSpec::Identity,
            &binary_space(1),
        )
        .unwrap();
        let j = joint(&theta, &zeta).unwrap();
        let mut got: Vec<(usize, usize, f64)> = j.weights().to_vec();
        got.sort_by_key(|(r, _, _)| *r);
        assert_eq!(got, vec![(0, 0, 0.5), (1, 1, 0.5)]);
    }

    #[test]
    fn joint_prefix_collapses_pairs() {
        // theta = iid(2, 0.25), zeta = prefix(1): four databases fold onto
        // four (db, prefix) pairs whose weights are the database masses.
        let theta = iid(2, 0.25);
        let zeta = prefix_knowledge(2, 1);
        let j = joint(&theta, &zeta).unwrap();
        let mut got: Vec<(usize, usize, f64)> = j.weights().to_vec();
        got.sort_by_key(|(r, _, _)| *r);
        let expected = [
            (0usize, 0usize, 0.5625),
            (1, 0, 0.1875),
            (2, 1, 0.1875),
            (3, 1, 0.0625),
        ];
        for ((r, k, w), (er, ek, ew)) in got.iter().zip(expected.iter()) {
            assert_eq!((r, k), (er, ek));
            assert!((w - ew).abs() < 1e-15);
        }
    }

    #[test]
    fn condition_keeps_independent_coordinates() {
        let theta = iid(3, 0.5);
        let zeta = prefix_knowledge(3, 0);
        let j = joint(&theta, &zeta).unwrap();
        let cond = j.condition(0, 1, None).unwrap();
        for rank in 0..8 {
            let expected = if cond.space().digit(rank, 0) == 1 {
                0.25
            } else {
                0.0
            };
            assert!((cond.prob_of_rank(rank) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn condition_fully_determined() {
        let theta = iid(2, 0.5);
        let zeta = prefix_knowledge(2, 1);
        let j = joint(&theta, &zeta).unwrap();
        // D(2) = Yes with prefix (Yes) pins the database to (Yes, Yes).
        let cond = j.condition(1, 1, Some(1)).unwrap();
        assert!((cond.prob(&Database::new(vec![1, 1])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn condition_contradictory_event_errors() {
        let theta = iid(2, 0.5);
        let zeta = prefix_knowledge(2, 1);
        let j = joint(&theta, &zeta).unwrap();
        // D(1) = Yes contradicts prefix (No).
        assert!(matches!(j.condition(0, 1, Some(0)), Err(Error::ZeroMassEvent)));
    }

    #[test]
    fn event_prob_examples() {
        let theta = iid(2, 0.25);
        let zeta = prefix_knowledge(2, 1);
        let j = joint(&theta, &zeta).unwrap();
        assert!((j.event_prob(0, 1, None) - 0.25).abs() < 1e-15);
        // i = 2, a = Yes, bhat = (Yes): independent coordinates multiply.
        assert!((j.event_prob(1, 1, Some(1)) - 0.0625).abs() < 1e-15);
        // Impossible knowledge value.
        let zeta_const = crate::scenarios::make_knowledge(
            &crate::scenarios::KnowledgeSpec::None,
            &binary_space(2),
        )
        .unwrap();
        let j2 = joint(&theta, &zeta_const).unwrap();
        assert_eq!(j2.event_prob(0, 1, Some(0)), j2.event_prob(0, 1, None));
    }

    #[test]
    fn output_dist_binomial_count() {
        let theta = iid(2, 0.5);
        let mech = crate::scenarios::make_mechanism(
            &crate::scenarios::MechanismSpec::Count,
            &binary_space(2),
        )
        .unwrap();
        let dist = output_dist(&theta, &mech).unwrap();
        assert_eq!(dist.len(), 3);
        assert!((dist[0] - 0.25).abs() < 1e-15);
        assert!((dist[1] - 0.5).abs() < 1e-15);
        assert!((dist[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn output_dist_threshold_merges_low_counts() {
        let theta = iid(2, 0.5);
        let mech = crate::scenarios::make_mechanism(
            &crate::scenarios::MechanismSpec::ThresholdedCount { t: 1, strict: true },
            &binary_space(2),
        )
        .unwrap();
        let dist = output_dist(&theta, &mech).unwrap();
        // Outputs {0, 2}: counts 0 and 1 map to 0.
        assert_eq!(mech.outputs(), &["0".to_string(), "2".to_string()]);
        assert!((dist[0] - 0.75).abs() < 1e-15);
        assert!((dist[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn output_dist_constant_mechanism() {
        let theta = iid(2, 0.5);
        let mech = Mechanism::constant(binary_space(2), "c".to_string());
        let dist = output_dist(&theta, &mech).unwrap();
        assert_eq!(dist, vec![1.0]);
    }

    #[test]
    fn output_dist_is_linear_in_theta() {
        let space = binary_space(2);
        let t1 = iid(2, 0.3);
        let t2 = iid(2, 0.8);
        let lambda = 0.4;
        let mix: Vec<f64> = (0..4)
            .map(|r| lambda * t1.prob_of_rank(r) + (1.0 - lambda) * t2.prob_of_rank(r))
            .collect();
        let mix = DatabaseDistribution::tabulated(space.clone(), mix).unwrap();
        let mech = crate::scenarios::make_mechanism(
            &crate::scenarios::MechanismSpec::Count,
            &space,
        )
        .unwrap();
        let d1 = output_dist(&t1, &mech).unwrap();
        let d2 = output_dist(&t2, &mech).unwrap();
        let dm = output_dist(&mix, &mech).unwrap();
        for o in 0..dm.len() {
            assert!((dm[o] - (lambda * d1[o] + (1.0 - lambda) * d2[o])).abs() < 1e-12);
        }
    }

    #[test]
    fn product_expansion_matches_tabulated() {
        let space = DbSpace::new(RecordAlphabet::new(vec!["x", "y", "z"]).unwrap(), 3).unwrap();
        let rows = vec![
            vec![0.2, 0.3, 0.5],
            vec![0.6, 0.1, 0.3],
            vec![0.25, 0.25, 0.5],
        ];
        let prod = DatabaseDistribution::product(space.clone(), rows.clone()).unwrap();
        let expanded = prod.expand().unwrap();
        let tab = DatabaseDistribution::tabulated(space.clone(), expanded.clone()).unwrap();
        for rank in 0..space.size().unwrap() {
            let direct: f64 = (0..3).map(|i| rows[i][space.digit(rank, i) as usize]).product();
            assert!((expanded[rank] - direct).abs() < 1e-15);
            assert!((tab.prob_of_rank(rank) - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn record_flip_rows_are_stochastic() {
        let space = binary_space(3);
        let mech = Mechanism::record_flip(space.clone(), 0.25f64).unwrap();
        for rank in 0..8 {
            let mut mass = 0.0;
            mech.for_each_output(rank, |_, p| mass += *p);
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }
}
