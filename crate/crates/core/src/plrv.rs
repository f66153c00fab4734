//! Privacy loss random variables, classical and under partial knowledge.
//!
//! A loss value is carried as the likelihood *ratio* `e^L` rather than the
//! log itself, so exact mode never rounds; `log_value` recovers the usual
//! extended-real reading. The zero-by-convention case (a conditioning event
//! of probability zero) is tracked as its own variant: it behaves as 0 in
//! arithmetic but stays distinguishable, so tests can verify the convention
//! actually fires.

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::model::{joint, output_dist, Database, DatabaseDistribution, KnowledgeFunction, Mechanism};
use crate::num::{Epsilon, Prob};

/// An extended-real privacy loss.
#[derive(Clone, Debug, PartialEq)]
pub enum Plrv<P: Prob> {
    /// Finite loss `ln(ratio)`, stored as the exact ratio of the two output
    /// probabilities.
    Finite { ratio: P },
    /// Only the denominator vanished.
    PosInfinity,
    /// Only the numerator vanished.
    NegInfinity,
    /// A conditioning event had probability zero (or, classically, the output
    /// lies outside both supports); the loss is 0 by convention.
    ZeroByConvention,
}

impl<P: Prob> Plrv<P> {
    /// The extended-real loss value. `ZeroByConvention` reads as 0.
    pub fn log_value(&self) -> f64 {
        match self {
            Plrv::Finite { ratio } => ratio.to_f64().ln(),
            Plrv::PosInfinity => f64::INFINITY,
            Plrv::NegInfinity => f64::NEG_INFINITY,
            Plrv::ZeroByConvention => 0.0,
        }
    }

    pub fn is_zero_by_convention(&self) -> bool {
        matches!(self, Plrv::ZeroByConvention)
    }

    /// The loss with the two hypotheses swapped.
    pub fn swapped(&self) -> Plrv<P> {
        match self {
            Plrv::Finite { ratio } => Plrv::Finite {
                ratio: P::one() / ratio,
            },
            Plrv::PosInfinity => Plrv::NegInfinity,
            Plrv::NegInfinity => Plrv::PosInfinity,
            Plrv::ZeroByConvention => Plrv::ZeroByConvention,
        }
    }

    /// `max(0, 1 - e^(epsilon - L))`, the summand of every tight-delta
    /// expectation. Infinite losses take their limit values; the
    /// zero-convention value gives 0 because `epsilon >= 0`.
    pub fn integrand(&self, eps: &Epsilon<P>) -> P {
        match (self, eps) {
            (Plrv::ZeroByConvention, _) | (Plrv::NegInfinity, _) => P::zero(),
            (Plrv::PosInfinity, _) => P::one(),
            (Plrv::Finite { .. }, Epsilon::Infinite) => P::zero(),
            (Plrv::Finite { ratio }, Epsilon::Finite { exp_eps, .. }) => {
                if *exp_eps >= *ratio {
                    P::zero()
                } else {
                    P::one() - exp_eps.clone() / ratio
                }
            }
        }
    }
}

fn loss_from_probs<P: Prob>(pa: P, pb: P) -> Plrv<P> {
    match (pa.is_zero(), pb.is_zero()) {
        (true, true) => Plrv::ZeroByConvention,
        (true, false) => Plrv::NegInfinity,
        (false, true) => Plrv::PosInfinity,
        (false, false) => Plrv::Finite { ratio: pa / pb },
    }
}

/// Classical privacy loss of output `o` for the pair `(d1, d2)`.
///
/// When the output lies outside both supports the loss is returned as
/// [`Plrv::ZeroByConvention`]: such outputs carry zero weight in every
/// downstream expectation, mirroring the partial-knowledge convention.
pub fn plrv_classical<P: Prob>(
    mech: &Mechanism<P>,
    d1: &Database,
    d2: &Database,
    o: usize,
) -> Plrv<P> {
    let r1 = mech.space().rank(d1);
    let r2 = mech.space().rank(d2);
    loss_from_probs(mech.output_prob(r1, o), mech.output_prob(r2, o))
}

/// Conditional output probability `Pr[M(D) = o | D(i) = a, zeta(D) = bhat]`.
pub fn cond_output_prob<P: Prob>(
    mech: &Mechanism<P>,
    theta: &DatabaseDistribution<P>,
    zeta: &KnowledgeFunction<P>,
    i: usize,
    a: u8,
    o: usize,
    bhat: usize,
) -> Result<P> {
    if theta.space() != mech.space() {
        return Err(Error::DimensionMismatch(
            "distribution and mechanism live on different database spaces".to_string(),
        ));
    }
    let j = joint(theta, zeta)?;
    let cond = j.condition(i, a, Some(bhat))?;
    Ok(output_dist(&cond, mech)?[o].clone())
}

/// Partial-knowledge privacy loss of output `o` at knowledge value `bhat`,
/// for the hypotheses `D(i) = a` versus `D(i) = b`.
///
/// The condition cascade: if either conditioning event has probability zero
/// the loss is 0 by convention; otherwise a vanishing `a`-side output
/// probability gives negative infinity, a vanishing `b`-side positive
/// infinity, and the finite case is the log-ratio.
pub fn plrv_partial<P: Prob>(
    mech: &Mechanism<P>,
    theta: &DatabaseDistribution<P>,
    zeta: &KnowledgeFunction<P>,
    i: usize,
    a: u8,
    b: u8,
    o: usize,
    bhat: usize,
) -> Result<Plrv<P>> {
    if theta.space() != mech.space() {
        return Err(Error::DimensionMismatch(
            "distribution and mechanism live on different database spaces".to_string(),
        ));
    }
    let j = joint(theta, zeta)?;
    if j.event_prob(i, a, Some(bhat)).is_zero() || j.event_prob(i, b, Some(bhat)).is_zero() {
        return Ok(Plrv::ZeroByConvention);
    }
    let pa = output_dist(&j.condition(i, a, Some(bhat))?, mech)?[o].clone();
    let pb = output_dist(&j.condition(i, b, Some(bhat))?, mech)?[o].clone();
    Ok(match (pa.is_zero(), pb.is_zero()) {
        (true, _) => Plrv::NegInfinity,
        (false, true) => Plrv::PosInfinity,
        (false, false) => Plrv::Finite { ratio: pa / pb },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DbSpace, RecordAlphabet};
    use crate::scenarios::{
        make_distribution, make_knowledge, make_mechanism, DistributionSpec, KnowledgeSpec,
        MechanismSpec,
    };

    fn binary_space(n: usize) -> DbSpace {
        DbSpace::new(RecordAlphabet::binary(), n).unwrap()
    }

    #[test]
    fn classical_constant_mechanism_is_flat_zero() {
        let space = binary_space(2);
        let mech = Mechanism::<f64>::constant(space.clone(), "c".to_string());
        let loss = plrv_classical(&mech, &space.unrank(0), &space.unrank(3), 0);
        assert_eq!(loss.log_value(), 0.0);
        assert!(!loss.is_zero_by_convention());
    }

    #[test]
    fn classical_randomized_response_single_record() {
        let space = binary_space(1);
        let mech: Mechanism<f64> =
            make_mechanism(&MechanismSpec::RandomizedResponse { q: 0.25 }, &space).unwrap();
        let yes = Database::new(vec![1]);
        let no = Database::new(vec![0]);
        let o_yes = mech.outputs().iter().position(|o| o == "Yes").unwrap();
        let loss = plrv_classical(&mech, &yes, &no, o_yes);
        assert!((loss.log_value() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn classical_disjoint_supports_is_infinite() {
        let space = binary_space(3);
        let mech: Mechanism<f64> = make_mechanism(&MechanismSpec::Count, &space).unwrap();
        let d1 = Database::new(vec![1, 1, 0]);
        let d2 = Database::new(vec![1, 0, 0]);
        assert_eq!(plrv_classical(&mech, &d1, &d2, 2), Plrv::PosInfinity);
        assert_eq!(plrv_classical(&mech, &d2, &d1, 2), Plrv::NegInfinity);
        // Output 3 lies outside both supports.
        assert!(plrv_classical(&mech, &d1, &d2, 3).is_zero_by_convention());
    }

    #[test]
    fn partial_full_reveal_fires_the_convention() {
        // With zeta = identity, any knowledge value pins D(i), so one of the
        // two conditioning events is always empty.
        let space = binary_space(2);
        let theta: DatabaseDistribution<f64> =
            make_distribution(&DistributionSpec::IidBernoulli { p: 0.5 }, &space).unwrap();
        let zeta = make_knowledge(&KnowledgeSpec::Identity, &space).unwrap();
        let mech = make_mechanism(&MechanismSpec::Count, &space).unwrap();
        for bhat in 0..4 {
            let loss = plrv_partial(&mech, &theta, &zeta, 0, 1, 0, 0, bhat).unwrap();
            assert!(loss.is_zero_by_convention());
        }
    }

    #[test]
    fn partial_reduces_to_classical_under_all_but() {
        let space = binary_space(3);
        let theta: DatabaseDistribution<f64> = make_distribution(
            &DistributionSpec::Tabulated {
                entries: (0..8)
                    .map(|rank| {
                        let db = space.unrank(rank);
                        (
                            db.records()
                                .iter()
                                .map(|&r| space.alphabet().label(r).to_string())
                                .collect(),
                            0.125,
                        )
                    })
                    .collect(),
            },
            &space,
        )
        .unwrap();
        let i = 1;
        let zeta = make_knowledge(&KnowledgeSpec::AllBut { i }, &space).unwrap();
        let mech = make_mechanism(&MechanismSpec::Count, &space).unwrap();
        // bhat = (Yes, No) for the revealed positions 0 and 2.
        let d_a = Database::new(vec![1, 1, 0]);
        let d_b = Database::new(vec![1, 0, 0]);
        let mut bhat = None;
        zeta.for_each(space.rank(&d_a), |k, _| bhat = Some(k));
        let bhat = bhat.unwrap();
        for o in 0..mech.num_outputs() {
            let partial = plrv_partial(&mech, &theta, &zeta, i, 1, 0, o, bhat).unwrap();
            let classical = plrv_classical(&mech, &d_a, &d_b, o);
            match (&partial, &classical) {
                (Plrv::Finite { ratio: r1 }, Plrv::Finite { ratio: r2 }) => {
                    assert!((r1 - r2).abs() < 1e-12)
                }
                _ => assert_eq!(partial, classical),
            }
        }
    }

    #[test]
    fn partial_threshold_matches_brute_force() {
        // n = 4, p = 0.5, threshold 2 (strict), prefix-2 knowledge,
        // i = 3 (1-based), hypotheses Yes vs No, output "3", bhat = Yes|Yes.
        let space = binary_space(4);
        let theta: DatabaseDistribution<f64> =
            make_distribution(&DistributionSpec::IidBernoulli { p: 0.5 }, &space).unwrap();
        let zeta = make_knowledge(&KnowledgeSpec::Prefix { k: 2 }, &space).unwrap();
        let mech =
            make_mechanism(&MechanismSpec::ThresholdedCount { t: 2, strict: true }, &space)
                .unwrap();
        let o3 = mech.outputs().iter().position(|o| o == "3").unwrap();
        let bhat_label = "Yes|Yes";
        let bhat = (0..zeta.space_size())
            .find(|&k| zeta.label(k) == bhat_label)
            .unwrap();

        // Brute force over all 16 databases, straight from the definition.
        let mut num = (0.0, 0.0); // (event mass, output-and-event mass) for a
        let mut den = (0.0, 0.0);
        for rank in 0..16 {
            let w = 0.5f64.powi(4);
            let db = space.unrank(rank);
            if !(db.record(0) == 1 && db.record(1) == 1) {
                continue;
            }
            let count = db.count_of(1);
            let released = count > 2;
            let is_o3 = released && count == 3;
            if db.record(2) == 1 {
                num.0 += w;
                if is_o3 {
                    num.1 += w;
                }
            } else {
                den.0 += w;
                if is_o3 {
                    den.1 += w;
                }
            }
        }
        let expected = (num.1 / num.0) / (den.1 / den.0);
        let loss = plrv_partial(&mech, &theta, &zeta, 2, 1, 0, o3, bhat).unwrap();
        match loss {
            Plrv::Finite { ratio } => assert!((ratio - expected).abs() < 1e-12),
            other => panic!("expected finite loss, got {other:?}"),
        }
    }

    #[test]
    fn cond_output_prob_examples() {
        let space = binary_space(2);
        let theta: DatabaseDistribution<f64> =
            make_distribution(&DistributionSpec::IidBernoulli { p: 0.5 }, &space).unwrap();
        let zeta = make_knowledge(&KnowledgeSpec::None, &space).unwrap();
        let constant = Mechanism::constant(space.clone(), "c".to_string());
        assert_eq!(
            cond_output_prob(&constant, &theta, &zeta, 0, 1, 0, 0).unwrap(),
            1.0
        );
        let count = make_mechanism(&MechanismSpec::Count, &space).unwrap();
        // Remaining coin decides whether the count reaches 2.
        let p = cond_output_prob(&count, &theta, &zeta, 0, 1, 2, 0).unwrap();
        assert!((p - 0.5).abs() < 1e-15);

        let space3 = binary_space(3);
        let theta3: DatabaseDistribution<f64> =
            make_distribution(&DistributionSpec::IidBernoulli { p: 0.25 }, &space3).unwrap();
        let zeta3 = make_knowledge(&KnowledgeSpec::Prefix { k: 1 }, &space3).unwrap();
        let count3 = make_mechanism(&MechanismSpec::Count, &space3).unwrap();
        // Prefix pinned to No, target pinned to Yes: count = 1 + Bernoulli(0.25).
        let p = cond_output_prob(&count3, &theta3, &zeta3, 1, 1, 1, 0).unwrap();
        assert!((p - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cond_output_prob_zero_mass_event() {
        let space = binary_space(2);
        let theta: DatabaseDistribution<f64> =
            make_distribution(&DistributionSpec::IidBernoulli { p: 0.0 }, &space).unwrap();
        let zeta = make_knowledge(&KnowledgeSpec::None, &space).unwrap();
        let mech = make_mechanism(&MechanismSpec::Count, &space).unwrap();
        assert!(matches!(
            cond_output_prob(&mech, &theta, &zeta, 0, 1, 0, 0),
            Err(Error::ZeroMassEvent)
        ));
    }

    #[test]
    fn integrand_limit_values() {
        let eps = Epsilon::<f64>::from_f64(0.5).unwrap();
        assert_eq!(Plrv::<f64>::PosInfinity.integrand(&eps), 1.0);
        assert_eq!(Plrv::<f64>::NegInfinity.integrand(&eps), 0.0);
        assert_eq!(Plrv::<f64>::ZeroByConvention.integrand(&eps), 0.0);
        let finite = Plrv::Finite { ratio: 4.0f64 };
        assert!((finite.integrand(&eps) - (1.0 - 0.5f64.exp() / 4.0)).abs() < 1e-15);
        assert_eq!(finite.integrand(&Epsilon::infinite()), 0.0);
        assert_eq!(Plrv::<f64>::PosInfinity.integrand(&Epsilon::infinite()), 1.0);
    }
}
