//! Tight delta(epsilon) computation for classical DP and for active/passive
//! partial-knowledge attackers, by exact summation of the defining
//! expectations over finite scenarios.
//!
//! Terms are evaluated through the loss-expectation route
//! `E[max(0, 1 - e^(eps - L))]`; the worst-event route lives in
//! [`tight_delta_indist`], so the two formulations cross-check each other
//! instead of sharing code.

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::model::{DatabaseDistribution, DbSpace, KnowledgeFunction, Mechanism};
use crate::num::{Epsilon, Prob};
use crate::plrv::Plrv;
use crate::scenarios::Scenario;

/// Cap on elementary terms an exact run may touch before it refuses and
/// points the caller at the fastpath or montecarlo engines.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    pub max_elementary_terms: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_elementary_terms: 1e8,
        }
    }
}

impl Budget {
    pub fn new(max_elementary_terms: f64) -> Self {
        Self {
            max_elementary_terms,
        }
    }

    pub fn check(&self, required: f64) -> Result<()> {
        if required > self.max_elementary_terms {
            return Err(Error::BudgetExceeded {
                required,
                budget: self.max_elementary_terms,
            });
        }
        Ok(())
    }
}

/// Which guarantee a tight delta refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackerModel {
    /// Classical DP: replace-one adjacency, no data distribution.
    Dp,
    /// Active partial knowledge: the bound holds for every knowledge value.
    Apk,
    /// Passive partial knowledge: the bound holds in expectation over the
    /// knowledge the attacker happens to receive.
    Ppk,
}

impl AttackerModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackerModel::Dp => "dp",
            AttackerModel::Apk => "apk",
            AttackerModel::Ppk => "ppk",
        }
    }
}

/// Which evaluation engine produced a number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineKind {
    Exact,
    Fastpath,
    Montecarlo,
}

impl EngineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EngineKind::Exact => "exact",
            EngineKind::Fastpath => "fastpath",
            EngineKind::Montecarlo => "montecarlo",
        }
    }
}

/// One quantifier cell `(theta, zeta, i, a, b[, bhat])` with its delta.
/// Indices `i` are 1-based here; `bhat` is `None` exactly when the model is
/// not APK.
#[derive(Clone, Debug, PartialEq)]
pub struct TermReport {
    pub model: AttackerModel,
    pub theta: Option<usize>,
    pub zeta: Option<usize>,
    pub i: usize,
    pub a: String,
    pub b: String,
    pub bhat: Option<String>,
    pub epsilon: f64,
    pub delta: f64,
    pub engine: EngineKind,
    pub half_width: Option<f64>,
    pub seed: Option<u64>,
}

/// The supremum over the quantifier grid, with the cell attaining it.
#[derive(Clone, Debug)]
pub struct TightDelta<P: Prob> {
    pub epsilon: f64,
    pub delta: P,
    pub argmax: TermReport,
}

impl<P: Prob> TightDelta<P> {
    pub fn delta_f64(&self) -> f64 {
        self.delta.to_f64()
    }
}

fn clamp01<P: Prob>(x: P) -> P {
    if x < P::zero() {
        P::zero()
    } else if x > P::one() {
        P::one()
    } else {
        x
    }
}

/// Smallest delta making two distributions `(epsilon, delta)`-indistinguishable:
/// the worst event is the set of outcomes whose likelihood ratio exceeds
/// `e^epsilon`, in both directions.
pub fn tight_delta_indist<P: Prob>(p: &[P], q: &[P], eps: &Epsilon<P>) -> P {
    assert_eq!(p.len(), q.len(), "distributions over different spaces");
    let one_way = |x: &[P], y: &[P]| {
        let mut acc = P::zero();
        for (px, py) in x.iter().zip(y.iter()) {
            if px.is_zero() {
                continue;
            }
            let slack = match eps {
                Epsilon::Infinite => {
                    if py.is_zero() {
                        px.clone()
                    } else {
                        continue;
                    }
                }
                Epsilon::Finite { exp_eps, .. } => {
                    let scaled = exp_eps.clone() * py;
                    if *px > scaled {
                        px.clone() - scaled
                    } else {
                        continue;
                    }
                }
            };
            acc += &slack;
        }
        acc
    };
    let forward = one_way(p, q);
    let backward = one_way(q, p);
    clamp01(if forward >= backward { forward } else { backward })
}

/// Expectation `E_{O ~ dist_a}[max(0, 1 - e^(eps - L(O)))]` for two
/// normalized output distributions whose conditioning events both have
/// positive mass.
fn loss_expectation<P: Prob>(dist_a: &[P], dist_b: &[P], eps: &Epsilon<P>) -> P {
    let mut acc = P::zero();
    for (pa, pb) in dist_a.iter().zip(dist_b.iter()) {
        if pa.is_zero() {
            continue;
        }
        let loss = if pb.is_zero() {
            Plrv::PosInfinity
        } else {
            Plrv::Finite {
                ratio: pa.clone() / pb,
            }
        };
        let m = loss.integrand(eps);
        if !m.is_zero() {
            acc += &(pa.clone() * m);
        }
    }
    clamp01(acc)
}

/// Evaluator for one `(mechanism, theta, zeta)` triple.
pub(crate) struct PairContext<'a, P: Prob> {
    mech: &'a Mechanism<P>,
    zeta: &'a KnowledgeFunction<P>,
    theta_dense: Vec<P>,
    space: DbSpace,
}

type CondStat<P> = Option<(P, Vec<P>)>;

impl<'a, P: Prob> PairContext<'a, P> {
    pub(crate) fn new(
        mech: &'a Mechanism<P>,
        theta: &'a DatabaseDistribution<P>,
        zeta: &'a KnowledgeFunction<P>,
    ) -> Result<Self> {
        if theta.space() != mech.space() {
            return Err(Error::DimensionMismatch(
                "distribution and mechanism live on different database spaces".to_string(),
            ));
        }
        let theta_dense = theta.expand()?;
        if zeta.num_databases() != theta_dense.len() {
            return Err(Error::DimensionMismatch(format!(
                "knowledge function covers {} databases, space holds {}",
                zeta.num_databases(),
                theta_dense.len()
            )));
        }
        Ok(Self {
            mech,
            zeta,
            theta_dense,
            space: theta.space().clone(),
        })
    }

    fn size(&self) -> usize {
        self.theta_dense.len()
    }

    /// Mass and normalized output distribution of `M(D)` conditioned on
    /// `{D(i) = a}` (and `{zeta(D) = bhat}` when given); `None` on zero mass.
    pub(crate) fn cond_stats(&self, i: usize, a: u8, bhat: Option<usize>) -> CondStat<P> {
        let mut mass = P::zero();
        let mut dist = vec![P::zero(); self.mech.num_outputs()];
        for rank in 0..self.size() {
            if self.space.digit(rank, i) != a {
                continue;
            }
            let w0 = &self.theta_dense[rank];
            if w0.is_zero() {
                continue;
            }
            let w = match bhat {
                None => w0.clone(),
                Some(bh) => {
                    let zp = self.zeta.prob(rank, bh);
                    if zp.is_zero() {
                        continue;
                    }
                    if zp.is_one() {
                        w0.clone()
                    } else {
                        w0.clone() * zp
                    }
                }
            };
            self.mech.for_each_output(rank, |o, p| {
                dist[o] += &(w.clone() * p);
            });
            mass += &w;
        }
        if mass.is_zero() {
            return None;
        }
        for d in &mut dist {
            *d /= &mass;
        }
        Some((mass, dist))
    }

    /// The APK expectation for one quantifier cell. Zero-mass conditioning
    /// events on either side make every loss 0 by convention, so the term
    /// collapses to 0.
    pub(crate) fn apk_term(&self, i: usize, a: u8, b: u8, bhat: usize, eps: &Epsilon<P>) -> P {
        let Some((_, dist_a)) = self.cond_stats(i, a, Some(bhat)) else {
            return P::zero();
        };
        let Some((_, dist_b)) = self.cond_stats(i, b, Some(bhat)) else {
            return P::zero();
        };
        loss_expectation(&dist_a, &dist_b, eps)
    }

    /// The PPK expectation for one cell, summed directly over the joint law
    /// of `(D, O, B)` conditioned on `{D(i) = a}` — not via the decomposition
    /// into APK terms, which stays available as an independent identity.
    pub(crate) fn ppk_term(&self, i: usize, a: u8, b: u8, eps: &Epsilon<P>) -> Result<P> {
        let klen = self.zeta.space_size();
        let mut mass_a = P::zero();
        for rank in 0..self.size() {
            if self.space.digit(rank, i) == a {
                mass_a += &self.theta_dense[rank];
            }
        }
        if mass_a.is_zero() {
            return Err(Error::ZeroMassEvent);
        }

        // Conditional output stats per knowledge value, for both hypotheses.
        let mut stats_a: Vec<CondStat<P>> = vec![None; klen];
        let mut stats_b: Vec<CondStat<P>> = vec![None; klen];
        for rank in 0..self.size() {
            let d = self.space.digit(rank, i);
            if d != a && d != b {
                continue;
            }
            let w0 = &self.theta_dense[rank];
            if w0.is_zero() {
                continue;
            }
            let row = self.mech.output_row(rank);
            let stats = if d == a { &mut stats_a } else { &mut stats_b };
            self.zeta.for_each(rank, |k, zp| {
                if zp.is_zero() {
                    return;
                }
                let w = w0.clone() * zp;
                let entry = stats[k]
                    .get_or_insert_with(|| (P::zero(), vec![P::zero(); self.mech.num_outputs()]));
                entry.0 += &w;
                for (o, p) in &row {
                    entry.1[*o] += &(w.clone() * p);
                }
            });
        }

        // Loss integrand tables; a knowledge value missing on either side
        // leaves m = 0 pointwise (condition 1 of the loss definition).
        let m_tables: Vec<Option<Vec<P>>> = (0..klen)
            .map(|k| match (&stats_a[k], &stats_b[k]) {
                (Some((ma, da)), Some((mb, db))) => {
                    let table = (0..self.mech.num_outputs())
                        .map(|o| {
                            let pa = da[o].clone() / ma;
                            let pb = db[o].clone() / mb;
                            let loss = if pa.is_zero() {
                                Plrv::NegInfinity
                            } else if pb.is_zero() {
                                Plrv::PosInfinity
                            } else {
                                Plrv::Finite { ratio: pa / pb }
                            };
                            loss.integrand(eps)
                        })
                        .collect();
                    Some(table)
                }
                _ => None,
            })
            .collect();

        // E over D | D(i)=a, then B ~ zeta(D), then O ~ M(D).
        let mut acc = P::zero();
        for rank in 0..self.size() {
            if self.space.digit(rank, i) != a {
                continue;
            }
            let w0 = &self.theta_dense[rank];
            if w0.is_zero() {
                continue;
            }
            let row = self.mech.output_row(rank);
            self.zeta.for_each(rank, |k, zp| {
                if zp.is_zero() {
                    return;
                }
                let Some(m) = &m_tables[k] else {
                    return;
                };
                let mut inner = P::zero();
                for (o, p) in &row {
                    if !m[*o].is_zero() {
                        inner += &(p.clone() * &m[*o]);
                    }
                }
                if !inner.is_zero() {
                    acc += &(w0.clone() * zp * inner);
                }
            });
        }
        Ok(clamp01(acc / mass_a))
    }

    /// Conditional stats for every `(target, record, knowledge value)` cell
    /// in one enumeration pass. Entries are normalized; `None` marks a
    /// zero-mass event.
    fn cond_table(&self, targets: &[usize]) -> Vec<Vec<Vec<CondStat<P>>>> {
        let base = self.space.alphabet().len();
        let klen = self.zeta.space_size();
        let outs = self.mech.num_outputs();
        let mut table: Vec<Vec<Vec<CondStat<P>>>> =
            vec![vec![vec![None; klen]; base]; targets.len()];
        for rank in 0..self.size() {
            let w0 = &self.theta_dense[rank];
            if w0.is_zero() {
                continue;
            }
            let row = self.mech.output_row(rank);
            self.zeta.for_each(rank, |k, zp| {
                if zp.is_zero() {
                    return;
                }
                let w = if zp.is_one() {
                    w0.clone()
                } else {
                    w0.clone() * zp
                };
                for (ti, &i) in targets.iter().enumerate() {
                    let a = self.space.digit(rank, i) as usize;
                    let entry =
                        table[ti][a][k].get_or_insert_with(|| (P::zero(), vec![P::zero(); outs]));
                    entry.0 += &w;
                    for (o, p) in &row {
                        entry.1[*o] += &(w.clone() * p);
                    }
                }
            });
        }
        for per_target in &mut table {
            for per_record in per_target {
                for entry in per_record.iter_mut().flatten() {
                    let (mass, dist) = entry;
                    for d in dist.iter_mut() {
                        *d /= &*mass;
                    }
                }
            }
        }
        table
    }

    /// All APK terms over `(i in targets, ordered a != b, admissible bhat)`.
    fn apk_terms(&self, targets: &[usize], eps: &Epsilon<P>) -> Vec<RawTerm<P>> {
        let base = self.space.alphabet().len();
        let klen = self.zeta.space_size();
        let table = self.cond_table(targets);
        let mut terms = Vec::new();
        for (ti, &i) in targets.iter().enumerate() {
            for a in 0..base {
                for b in 0..base {
                    if a == b {
                        continue;
                    }
                    for k in 0..klen {
                        // Quantify only over knowledge values of positive
                        // joint mass under theta.
                        let admissible =
                            (0..base).any(|v| table[ti][v][k].is_some());
                        if !admissible {
                            continue;
                        }
                        let delta = match (&table[ti][a][k], &table[ti][b][k]) {
                            (Some((_, da)), Some((_, db))) => loss_expectation(da, db, eps),
                            _ => P::zero(),
                        };
                        terms.push(RawTerm {
                            i,
                            a: a as u8,
                            b: b as u8,
                            bhat: Some(k),
                            delta,
                        });
                    }
                }
            }
        }
        terms
    }

    /// All PPK terms over `(i in targets, ordered a != b)`, each by the
    /// direct joint summation.
    fn ppk_terms(&self, targets: &[usize], eps: &Epsilon<P>) -> Result<Vec<RawTerm<P>>> {
        let base = self.space.alphabet().len();
        let mut terms = Vec::new();
        for &i in targets {
            for a in 0..base {
                for b in 0..base {
                    if a == b {
                        continue;
                    }
                    let delta = match self.ppk_term(i, a as u8, b as u8, eps) {
                        Ok(d) => d,
                        // A hypothesis the data can never satisfy constrains
                        // nothing.
                        Err(Error::ZeroMassEvent) => P::zero(),
                        Err(e) => return Err(e),
                    };
                    terms.push(RawTerm {
                        i,
                        a: a as u8,
                        b: b as u8,
                        bhat: None,
                        delta,
                    });
                }
            }
        }
        Ok(terms)
    }
}

struct RawTerm<P> {
    i: usize,
    a: u8,
    b: u8,
    bhat: Option<usize>,
    delta: P,
}

fn sweep_budget<P: Prob>(
    mech: &Mechanism<P>,
    zeta: &KnowledgeFunction<P>,
    targets: usize,
) -> f64 {
    let size = mech.space().size_approx();
    let outs = mech.num_outputs() as f64;
    let support = zeta.max_row_support() as f64;
    let base = mech.space().alphabet().len() as f64;
    let klen = zeta.space_size() as f64;
    let t = targets as f64;
    // Table pass plus per-cell term evaluation.
    size * t.max(1.0) * support * outs + t * base * base * klen * outs
}

fn report_from_raw<P: Prob>(
    model: AttackerModel,
    theta_idx: usize,
    zeta_idx: usize,
    zeta: &KnowledgeFunction<P>,
    space: &DbSpace,
    raw: &RawTerm<P>,
    eps: &Epsilon<P>,
) -> TermReport {
    TermReport {
        model,
        theta: Some(theta_idx),
        zeta: Some(zeta_idx),
        i: raw.i + 1,
        a: space.alphabet().label(raw.a).to_string(),
        b: space.alphabet().label(raw.b).to_string(),
        bhat: raw.bhat.map(|k| zeta.label(k).to_string()),
        epsilon: eps.value(),
        delta: clamp01(raw.delta.clone()).to_f64(),
        engine: EngineKind::Exact,
        half_width: None,
        seed: None,
    }
}

/// The APK expectation for a single quantifier cell.
pub fn apk_term<P: Prob>(
    mech: &Mechanism<P>,
    theta: &DatabaseDistribution<P>,
    zeta: &KnowledgeFunction<P>,
    i: usize,
    a: u8,
    b: u8,
    bhat: usize,
    eps: &Epsilon<P>,
) -> Result<P> {
    let ctx = PairContext::new(mech, theta, zeta)?;
    Ok(ctx.apk_term(i, a, b, bhat, eps))
}

/// The PPK expectation for a single quantifier cell.
pub fn ppk_term<P: Prob>(
    mech: &Mechanism<P>,
    theta: &DatabaseDistribution<P>,
    zeta: &KnowledgeFunction<P>,
    i: usize,
    a: u8,
    b: u8,
    eps: &Epsilon<P>,
) -> Result<P> {
    let ctx = PairContext::new(mech, theta, zeta)?;
    ctx.ppk_term(i, a, b, eps)
}

/// Every term of the given model over the scenario's quantifier grid.
pub fn term_reports<P: Prob>(
    model: AttackerModel,
    scenario: &Scenario<P>,
    eps: &Epsilon<P>,
    budget: &Budget,
) -> Result<Vec<TermReport>> {
    match model {
        AttackerModel::Dp => Ok(vec![tight_delta_dp(&scenario.mechanism, eps, budget)?.argmax]),
        AttackerModel::Apk | AttackerModel::Ppk => {
            let mut reports = Vec::new();
            for (zi, zeta) in scenario.zetas.iter().enumerate() {
                budget.check(sweep_budget(
                    &scenario.mechanism,
                    zeta,
                    scenario.targets.len(),
                ))?;
                for (thi, theta) in scenario.thetas.iter().enumerate() {
                    let ctx = PairContext::new(&scenario.mechanism, theta, zeta)?;
                    let raws = match model {
                        AttackerModel::Apk => ctx.apk_terms(&scenario.targets, eps),
                        AttackerModel::Ppk => ctx.ppk_terms(&scenario.targets, eps)?,
                        AttackerModel::Dp => unreachable!(),
                    };
                    for raw in &raws {
                        reports.push(report_from_raw(
                            model,
                            thi,
                            zi,
                            zeta,
                            &scenario.space,
                            raw,
                            eps,
                        ));
                    }
                }
            }
            Ok(reports)
        }
    }
}

fn tight_over_terms<P: Prob>(
    model: AttackerModel,
    scenario: &Scenario<P>,
    eps: &Epsilon<P>,
    budget: &Budget,
) -> Result<TightDelta<P>> {
    let mut best: Option<(P, TermReport)> = None;
    for (zi, zeta) in scenario.zetas.iter().enumerate() {
        budget.check(sweep_budget(
            &scenario.mechanism,
            zeta,
            scenario.targets.len(),
        ))?;
        for (thi, theta) in scenario.thetas.iter().enumerate() {
            let ctx = PairContext::new(&scenario.mechanism, theta, zeta)?;
            let raws = match model {
                AttackerModel::Apk => ctx.apk_terms(&scenario.targets, eps),
                AttackerModel::Ppk => ctx.ppk_terms(&scenario.targets, eps)?,
                AttackerModel::Dp => unreachable!("handled by tight_delta_dp"),
            };
            for raw in raws {
                let delta = clamp01(raw.delta.clone());
                let better = match &best {
                    None => true,
                    Some((cur, _)) => delta > *cur,
                };
                if better {
                    let report =
                        report_from_raw(model, thi, zi, zeta, &scenario.space, &raw, eps);
                    best = Some((delta, report));
                }
            }
        }
    }
    let (delta, argmax) = best.ok_or_else(|| {
        Error::InvalidParameter("scenario has an empty quantifier grid".to_string())
    })?;
    Ok(TightDelta {
        epsilon: eps.value(),
        delta,
        argmax,
    })
}

/// Tight delta under APK-DP: the max of [`apk_term`] over all distributions,
/// knowledge functions, target indices, ordered record pairs, and admissible
/// knowledge values.
pub fn apk_tight_delta<P: Prob>(
    mech: &Mechanism<P>,
    thetas: &[DatabaseDistribution<P>],
    zetas: &[KnowledgeFunction<P>],
    eps: &Epsilon<P>,
    budget: &Budget,
) -> Result<TightDelta<P>> {
    let scenario = Scenario {
        space: mech.space().clone(),
        thetas: thetas.to_vec(),
        zetas: zetas.to_vec(),
        mechanism: mech.clone(),
        targets: (0..mech.space().n()).collect(),
    };
    tight_over_terms(AttackerModel::Apk, &scenario, eps, budget)
}

/// Tight delta under PPK-DP: as [`apk_tight_delta`] without the knowledge
/// quantifier.
pub fn ppk_tight_delta<P: Prob>(
    mech: &Mechanism<P>,
    thetas: &[DatabaseDistribution<P>],
    zetas: &[KnowledgeFunction<P>],
    eps: &Epsilon<P>,
    budget: &Budget,
) -> Result<TightDelta<P>> {
    let scenario = Scenario {
        space: mech.space().clone(),
        thetas: thetas.to_vec(),
        zetas: zetas.to_vec(),
        mechanism: mech.clone(),
        targets: (0..mech.space().n()).collect(),
    };
    tight_over_terms(AttackerModel::Ppk, &scenario, eps, budget)
}

/// Tight delta for a compiled scenario, honoring its target restriction.
pub fn tight_delta<P: Prob>(
    model: AttackerModel,
    scenario: &Scenario<P>,
    eps: &Epsilon<P>,
    budget: &Budget,
) -> Result<TightDelta<P>> {
    match model {
        AttackerModel::Dp => tight_delta_dp(&scenario.mechanism, eps, budget),
        _ => tight_over_terms(model, scenario, eps, budget),
    }
}

/// Tight delta under classical DP via the loss expectation, maximized over
/// all ordered pairs of databases differing in exactly one position.
pub fn tight_delta_dp<P: Prob>(
    mech: &Mechanism<P>,
    eps: &Epsilon<P>,
    budget: &Budget,
) -> Result<TightDelta<P>> {
    let space = mech.space();
    let size = space.size()?;
    let base = space.alphabet().len();
    let n = space.n();
    budget.check(
        space.size_approx() * n as f64 * (base as f64 - 1.0) * mech.num_outputs() as f64,
    )?;

    let mut best: Option<(P, usize, u8, u8)> = None;
    for rank in 0..size {
        let row = mech.output_row(rank);
        for i in 0..n {
            let current = space.digit(rank, i);
            for v in 0..base as u8 {
                if v == current {
                    continue;
                }
                let other = space.with_digit(rank, i, v);
                // E over O ~ M(D1) of the loss integrand against D2.
                let mut acc = P::zero();
                for (o, p1) in &row {
                    let p2 = mech.output_prob(other, *o);
                    let loss = if p2.is_zero() {
                        Plrv::PosInfinity
                    } else {
                        Plrv::Finite {
                            ratio: p1.clone() / p2,
                        }
                    };
                    let m = loss.integrand(eps);
                    if !m.is_zero() {
                        acc += &(p1.clone() * m);
                    }
                }
                let acc = clamp01(acc);
                let better = match &best {
                    None => true,
                    Some((cur, ..)) => acc > *cur,
                };
                if better {
                    best = Some((acc, i, current, v));
                }
            }
        }
    }
    let (delta, i, a, b) =
        best.ok_or_else(|| Error::InvalidParameter("degenerate database space".to_string()))?;
    let argmax = TermReport {
        model: AttackerModel::Dp,
        theta: None,
        zeta: None,
        i: i + 1,
        a: space.alphabet().label(a).to_string(),
        b: space.alphabet().label(b).to_string(),
        bhat: None,
        epsilon: eps.value(),
        delta: delta.to_f64(),
        engine: EngineKind::Exact,
        half_width: None,
        seed: None,
    };
    Ok(TightDelta {
        epsilon: eps.value(),
        delta,
        argmax,
    })
}

/// The conditioned family: every `theta` conditioned on every knowledge
/// value of positive mass, for every knowledge function. Replacing
/// `(Theta, Z)` by `(condition_family(Theta, Z), {constant})` leaves the APK
/// tight delta unchanged.
pub fn condition_family<P: Prob>(
    thetas: &[DatabaseDistribution<P>],
    zetas: &[KnowledgeFunction<P>],
) -> Result<Vec<DatabaseDistribution<P>>> {
    let mut family = Vec::new();
    for theta in thetas {
        let dense = theta.expand()?;
        for zeta in zetas {
            if zeta.num_databases() != dense.len() {
                return Err(Error::DimensionMismatch(
                    "knowledge function and distribution cover different spaces".to_string(),
                ));
            }
            let klen = zeta.space_size();
            let mut buckets: Vec<Option<(P, Vec<P>)>> = vec![None; klen];
            for (rank, w0) in dense.iter().enumerate() {
                if w0.is_zero() {
                    continue;
                }
                zeta.for_each(rank, |k, zp| {
                    if zp.is_zero() {
                        return;
                    }
                    let w = w0.clone() * zp;
                    let entry = buckets[k]
                        .get_or_insert_with(|| (P::zero(), vec![P::zero(); dense.len()]));
                    entry.0 += &w;
                    entry.1[rank] += &w;
                });
            }
            for bucket in buckets.into_iter().flatten() {
                let (mass, mut probs) = bucket;
                for p in &mut probs {
                    *p /= &mass;
                }
                family.push(DatabaseDistribution::tabulated(
                    theta.space().clone(),
                    probs,
                )?);
            }
        }
    }
    Ok(family)
}

/// `delta(epsilon)` along a grid; non-increasing by construction of the
/// integrand.
pub fn delta_curve<P: Prob>(
    model: AttackerModel,
    scenario: &Scenario<P>,
    epsilons: &[f64],
    budget: &Budget,
) -> Result<Vec<TightDelta<P>>> {
    if epsilons.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter(
            "epsilon grid must be sorted ascending".to_string(),
        ));
    }
    epsilons
        .iter()
        .map(|&e| tight_delta(model, scenario, &Epsilon::from_f64(e)?, budget))
        .collect()
}

/// Result of inverting the delta curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsilonSearch {
    /// Smallest epsilon on the bisection grid with `delta <= target`.
    Attained(f64),
    /// The infinite-loss mass alone exceeds the target: no finite epsilon
    /// can reach it.
    Unattainable,
}

/// Absolute tolerance of the bisection in [`epsilon_for_delta`].
pub const EPSILON_SEARCH_TOLERANCE: f64 = 1e-6;

/// Largest epsilon probed before the search declares the target out of
/// reach; `e^eps` stays a normal f64 below this.
const EPSILON_SEARCH_CAP: f64 = 709.0;

/// Smallest epsilon whose tight delta is at most `delta_target`.
pub fn epsilon_for_delta<P: Prob>(
    model: AttackerModel,
    scenario: &Scenario<P>,
    delta_target: f64,
    budget: &Budget,
) -> Result<EpsilonSearch> {
    if !(0.0..=1.0).contains(&delta_target) {
        return Err(Error::InvalidParameter(format!(
            "delta target {delta_target} outside [0,1]"
        )));
    }
    let delta_at = |eps: &Epsilon<P>| -> Result<f64> {
        Ok(tight_delta(model, scenario, eps, budget)?.delta.to_f64())
    };
    if delta_at(&Epsilon::infinite())? > delta_target {
        return Ok(EpsilonSearch::Unattainable);
    }
    if delta_at(&Epsilon::from_f64(0.0)?)? <= delta_target {
        return Ok(EpsilonSearch::Attained(0.0));
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    loop {
        if delta_at(&Epsilon::from_f64(hi)?)? <= delta_target {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > EPSILON_SEARCH_CAP {
            hi = EPSILON_SEARCH_CAP;
            if delta_at(&Epsilon::from_f64(hi)?)? > delta_target {
                return Ok(EpsilonSearch::Unattainable);
            }
            break;
        }
    }
    while hi - lo > EPSILON_SEARCH_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if delta_at(&Epsilon::from_f64(mid)?)? <= delta_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(EpsilonSearch::Attained(hi))
}
