//! Epistemic machinery: distributions over worlds, oi-alternative traces,
//! compatible states, normalization, and truth of full formulas (including
//! belief, `box` and `[p]` operators).

use std::collections::BTreeMap;

use num_traits::Zero;

use crate::interpreter;
use crate::lang::{Formula, Rat, Term};
use crate::model::{GroundBat, ModelError, ValId, WorldId};

/// Finite map from worlds to nonnegative weights. Weights need not sum to 1;
/// Norm normalizes.
pub type Distribution = BTreeMap<WorldId, Rat>;

/// A nonempty finite set of distributions.
pub type EpistemicState = Vec<Distribution>;

/// Point-mass epistemic state on a single world.
pub fn point_mass(w: WorldId) -> EpistemicState {
    let mut d = Distribution::new();
    d.insert(w, crate::lang::rat_int(1));
    vec![d]
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("belief is undefined here (the normalizing set has weight zero)")]
    BeliefUndefined,
    #[error("normalization undefined: the reference set has weight zero")]
    UndefinedNorm,
    #[error("`box` requires an explicit horizon (--box-horizon)")]
    BoxHorizonRequired,
}

/// Evaluation knobs shared by the belief engine and the interpreter.
#[derive(Debug, Clone, Copy)]
pub struct EvalParams {
    /// Horizon for `box` (quantifies over infinitely many traces otherwise).
    pub box_horizon: Option<usize>,
    /// Star bound for `[p]` program trace enumeration.
    pub star_bound: usize,
    /// Turn undefined belief into an error instead of `false`.
    pub strict_belief: bool,
    /// Retain zero-likelihood oi-alternatives (they never change Norm).
    pub keep_zero: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            box_horizon: None,
            star_bound: 16,
            strict_belief: false,
            keep_zero: false,
        }
    }
}

/// One member of a compatible set, with its weight d(w)·l*(w, z).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatibleMember {
    pub world: WorldId,
    pub trace: Vec<Term>,
    pub weight: Rat,
}

/// The compatible states S_α of a reference state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CompatibleSet {
    pub members: Vec<CompatibleMember>,
}

impl CompatibleSet {
    pub fn total_weight(&self) -> Rat {
        let mut w = Rat::zero();
        for m in &self.members {
            w += m.weight.clone();
        }
        w
    }

    fn contains(&self, world: WorldId, trace: &[Term]) -> bool {
        self.members
            .iter()
            .any(|m| m.world == world && m.trace == trace)
    }
}

/// Norm(d, U, V) for finite sets: weight(U) / weight(V). `U ⊆ V` is the
/// caller's obligation (checked in debug builds).
pub fn norm(u: &CompatibleSet, v: &CompatibleSet) -> Result<Rat, EvalError> {
    debug_assert!(
        u.members.iter().all(|m| v.contains(m.world, &m.trace)),
        "norm requires U ⊆ V"
    );
    let dv = v.total_weight();
    if dv.is_zero() {
        return Err(EvalError::UndefinedNorm);
    }
    Ok(u.total_weight() / dv)
}

/// Do two worlds agree on observational indistinguishability? Checked on
/// the declared ground actions at the initial valuations — a bounded
/// approximation of agreement over all traces.
pub fn worlds_oi_agree(bat: &GroundBat, w: WorldId, w2: WorldId) -> Result<bool, ModelError> {
    if w == w2 {
        return Ok(true);
    }
    for &a in bat.declared_actions() {
        if bat.oi_siblings(w, a)? != bat.oi_siblings(w2, a)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// All traces of equal length stepwise oi-indistinguishable from `z`,
/// evaluated in world `w`, restricted to declared ground actions. With
/// `keep_zero` unset, alternatives whose step likelihood is 0 are pruned
/// (they cannot contribute to Norm).
pub fn oi_trace_alternatives(
    bat: &GroundBat,
    w: WorldId,
    z: &[Term],
    keep_zero: bool,
) -> Result<Vec<Vec<Term>>, ModelError> {
    // Each partial alternative carries its current valuation, or None once
    // it has gone through a non-executable step (the oi axiom is then
    // evaluated at the world's initial valuation — for state-independent
    // oi axioms this is exact).
    let mut partial: Vec<(Vec<Term>, Option<ValId>)> = vec![(Vec::new(), Some(w))];
    for a in z {
        let act = bat.eval_term(a)?;
        let aid = bat.intern_act(&act);
        let mut next = Vec::new();
        for (prefix, vid) in &partial {
            let here = vid.unwrap_or(w);
            for &bid in &bat.oi_siblings(here, aid)? {
                let possible = match vid {
                    Some(v) => bat.poss_id(*v, bid)?,
                    None => false,
                };
                if !keep_zero {
                    if let Some(v) = vid {
                        if bat.lik_id(*v, bid)?.is_zero() {
                            continue;
                        }
                    }
                }
                let nvid = match (vid, possible) {
                    (Some(v), true) => Some(bat.progress(*v, bid)?),
                    _ => None,
                };
                let mut t = prefix.clone();
                t.push(bat.act_term(bid));
                next.push((t, nvid));
            }
        }
        partial = next;
    }
    Ok(partial.into_iter().map(|(t, _)| t).collect())
}

/// Compatible states S_α of the reference state (w, z) under distribution
/// d: oi-indistinguishable states over d's support that are executable and
/// satisfy α.
pub fn compatible_states(
    bat: &GroundBat,
    e: &EpistemicState,
    d: &Distribution,
    w: WorldId,
    z: &[Term],
    alpha: &Formula,
    params: &EvalParams,
) -> Result<CompatibleSet, EvalError> {
    let mut members = Vec::new();
    for (&w2, dw) in d {
        if dw.is_zero() && !params.keep_zero {
            continue;
        }
        if !worlds_oi_agree(bat, w, w2)? {
            continue;
        }
        for z2 in oi_trace_alternatives(bat, w2, z, params.keep_zero)? {
            if !bat.exec(w2, &z2)? {
                continue;
            }
            if !eval(bat, e, w2, &z2, alpha, params)? {
                continue;
            }
            let weight = dw.clone() * bat.seq_likelihood(w2, &z2)?;
            members.push(CompatibleMember {
                world: w2,
                trace: z2,
                weight,
            });
        }
    }
    Ok(CompatibleSet { members })
}

/// The belief degree in α at (e, d, w, z): Norm(d, S_α, S_TRUE), or None
/// when undefined.
pub fn degree(
    bat: &GroundBat,
    e: &EpistemicState,
    d: &Distribution,
    w: WorldId,
    z: &[Term],
    alpha: &Formula,
    params: &EvalParams,
) -> Result<Option<Rat>, EvalError> {
    let s_true = compatible_states(bat, e, d, w, z, &Formula::True, params)?;
    if s_true.total_weight().is_zero() {
        return Ok(None);
    }
    let s_alpha = compatible_states(bat, e, d, w, z, alpha, params)?;
    Ok(Some(norm(&s_alpha, &s_true)?))
}

/// Truth of an arbitrary formula at (e, w, z).
///
/// `B(α : r)` holds iff Norm(d, S_α, S_TRUE) = r for every d ∈ e; an
/// undefined norm makes the belief false (or an error in strict mode).
/// `box` checks all executable extensions up to the configured horizon;
/// `[p]` defers to the interpreter's trace enumeration.
pub fn eval(
    bat: &GroundBat,
    e: &EpistemicState,
    w: WorldId,
    z: &[Term],
    f: &Formula,
    params: &EvalParams,
) -> Result<bool, EvalError> {
    // Pure objective static formulas evaluate directly on the progressed
    // valuation.
    let cl = f.classify();
    if cl.is_static && cl.is_objective {
        let vid = bat.val_after(w, z)?;
        return Ok(bat.eval_ground(vid, f)?);
    }
    match f {
        Formula::Not(g) => Ok(!eval(bat, e, w, z, g, params)?),
        Formula::And(a, b) => Ok(eval(bat, e, w, z, a, params)? && eval(bat, e, w, z, b, params)?),
        Formula::Or(a, b) => Ok(eval(bat, e, w, z, a, params)? || eval(bat, e, w, z, b, params)?),
        Formula::Iff(a, b) => Ok(eval(bat, e, w, z, a, params)? == eval(bat, e, w, z, b, params)?),
        Formula::Forall(v, sort, g) => {
            for item in bat.carrier(sort)? {
                if !eval(bat, e, w, z, &g.subst(v, &item), params)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Formula::Exists(v, sort, g) => {
            for item in bat.carrier(sort)? {
                if eval(bat, e, w, z, &g.subst(v, &item), params)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Formula::Belief(g, r) => {
            for d in e {
                match degree(bat, e, d, w, z, g, params)? {
                    None => {
                        if params.strict_belief {
                            return Err(EvalError::BeliefUndefined);
                        }
                        return Ok(false);
                    }
                    Some(got) => {
                        if got != *r {
                            return Ok(false);
                        }
                    }
                }
            }
            Ok(true)
        }
        Formula::Box(g) => {
            let horizon = params.box_horizon.ok_or(EvalError::BoxHorizonRequired)?;
            let mut frontier: Vec<Vec<Term>> = vec![z.to_vec()];
            for depth in 0..=horizon {
                for zz in &frontier {
                    if !eval(bat, e, w, zz, g, params)? {
                        return Ok(false);
                    }
                }
                if depth == horizon {
                    break;
                }
                let mut next = Vec::new();
                for zz in &frontier {
                    let vid = bat.val_after(w, zz)?;
                    for &aid in bat.declared_actions() {
                        if bat.poss_id(vid, aid)? {
                            let mut t = zz.clone();
                            t.push(bat.act_term(aid));
                            next.push(t);
                        }
                    }
                }
                frontier = next;
            }
            Ok(true)
        }
        Formula::After(p, g) => {
            let ts = interpreter::traces(bat, e, w, z, p, params.star_bound, params)?;
            for suffix in &ts.traces {
                let mut zz = z.to_vec();
                zz.extend(suffix.iter().cloned());
                if !eval(bat, e, w, &zz, g, params)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        // Remaining objective/static cases were handled above.
        _ => {
            let vid = bat.val_after(w, z)?;
            Ok(bat.eval_ground(vid, f)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{rat, rat_int};
    use crate::parser::parse_theory;

    fn move_bat() -> GroundBat {
        GroundBat::compile(parse_theory(include_str!("../assets/move.dsg")).unwrap()).unwrap()
    }

    fn mv(x: i64, y: i64) -> Term {
        Term::app("move", vec![Term::int(x), Term::int(y)])
    }

    fn sonar(z: i64) -> Term {
        Term::app("sonar", vec![Term::int(z)])
    }

    fn loc(x: i64) -> Formula {
        Formula::Atom("Loc".into(), vec![Term::int(x)])
    }

    fn setup(bat: &GroundBat) -> (EpistemicState, Distribution, WorldId) {
        let w = bat.initial_worlds()[0].0;
        let mut d = Distribution::new();
        d.insert(w, rat_int(1));
        (vec![d.clone()], d, w)
    }

    #[test]
    fn alternatives_of_empty_trace() {
        let bat = move_bat();
        let (_, _, w) = setup(&bat);
        assert_eq!(
            oi_trace_alternatives(&bat, w, &[], false).unwrap(),
            vec![Vec::<Term>::new()]
        );
    }

    #[test]
    fn alternatives_of_sonar_are_singleton() {
        let bat = move_bat();
        let (_, _, w) = setup(&bat);
        assert_eq!(
            oi_trace_alternatives(&bat, w, &[sonar(3)], false).unwrap(),
            vec![vec![sonar(3)]]
        );
    }

    #[test]
    fn alternatives_of_move_are_pruned_outcomes() {
        let bat = move_bat();
        let (_, _, w) = setup(&bat);
        let alts = oi_trace_alternatives(&bat, w, &[mv(-1, 0)], false).unwrap();
        assert_eq!(
            alts,
            vec![vec![mv(-1, -2)], vec![mv(-1, -1)], vec![mv(-1, 0)]]
        );
        // With keep-zero, all declared outcomes appear.
        let all = oi_trace_alternatives(&bat, w, &[mv(-1, 0)], true).unwrap();
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn s_true_after_one_move() {
        let bat = move_bat();
        let (e, d, w) = setup(&bat);
        let params = EvalParams::default();
        let s = compatible_states(&bat, &e, &d, w, &[mv(-1, 0)], &Formula::True, &params).unwrap();
        assert_eq!(s.members.len(), 3);
        let weight_at = |x: i64| {
            s.members
                .iter()
                .find(|m| {
                    bat.holds_atom(m.world, &m.trace, "Loc", &[Term::int(x)])
                        .unwrap()
                })
                .map(|m| m.weight.clone())
                .unwrap()
        };
        assert_eq!(weight_at(1), rat(1, 5));
        assert_eq!(weight_at(2), rat(3, 5));
        assert_eq!(weight_at(3), rat(1, 5));
    }

    #[test]
    fn s_loc2_after_one_move() {
        let bat = move_bat();
        let (e, d, w) = setup(&bat);
        let params = EvalParams::default();
        let s = compatible_states(&bat, &e, &d, w, &[mv(-1, 0)], &loc(2), &params).unwrap();
        assert_eq!(s.members.len(), 1);
        assert_eq!(s.members[0].weight, rat(3, 5));
    }

    #[test]
    fn s_true_of_initial_state_is_point() {
        let bat = move_bat();
        let (e, d, w) = setup(&bat);
        let params = EvalParams::default();
        let s = compatible_states(&bat, &e, &d, w, &[], &Formula::True, &params).unwrap();
        assert_eq!(s.members.len(), 1);
        assert_eq!(s.members[0].weight, rat_int(1));
    }

    #[test]
    fn norm_of_set_with_itself_is_one() {
        let bat = move_bat();
        let (e, d, w) = setup(&bat);
        let params = EvalParams::default();
        let s = compatible_states(&bat, &e, &d, w, &[mv(-1, 0)], &Formula::True, &params).unwrap();
        assert_eq!(norm(&s, &s).unwrap(), rat_int(1));
    }

    #[test]
    fn spot_value_8_11_after_sonar_move_sonar() {
        let bat = move_bat();
        let (e, d, w) = setup(&bat);
        let params = EvalParams::default();
        let z = vec![sonar(3), mv(-1, 0), sonar(3)];
        let got = degree(&bat, &e, &d, w, &z, &loc(3), &params).unwrap();
        assert_eq!(got, Some(rat(8, 11)));
        assert!(eval(
            &bat,
            &e,
            w,
            &z,
            &Formula::believe(loc(3), rat(8, 11)),
            &params
        )
        .unwrap());
    }

    #[test]
    fn initial_point_mass_knows_location() {
        let bat = move_bat();
        let (e, _, w) = setup(&bat);
        let params = EvalParams::default();
        assert!(eval(&bat, &e, w, &[], &Formula::knows(loc(3)), &params).unwrap());
        assert!(!eval(&bat, &e, w, &[], &Formula::knows(loc(2)), &params).unwrap());
    }

    #[test]
    fn pruning_invariance_on_sample_traces() {
        let bat = move_bat();
        let (e, d, w) = setup(&bat);
        let pruned = EvalParams::default();
        let kept = EvalParams {
            keep_zero: true,
            ..EvalParams::default()
        };
        for z in [
            vec![mv(-1, 0)],
            vec![sonar(3), mv(-1, 0), sonar(3)],
            vec![mv(1, 1), mv(1, 2), sonar(6)],
        ] {
            for x in 0..10 {
                let a = degree(&bat, &e, &d, w, &z, &loc(x), &pruned).unwrap();
                let b = degree(&bat, &e, &d, w, &z, &loc(x), &kept).unwrap();
                assert_eq!(a, b, "pruning changed degree of Loc({x}) after {z:?}");
            }
        }
    }

    #[test]
    fn degrees_sum_to_one() {
        let bat = move_bat();
        let (e, d, w) = setup(&bat);
        let params = EvalParams::default();
        let z = vec![sonar(3), mv(-1, 0), sonar(2)];
        let mut sum = Rat::zero();
        for x in 0..10 {
            sum += degree(&bat, &e, &d, w, &z, &loc(x), &params)
                .unwrap()
                .unwrap();
        }
        assert_eq!(sum, rat_int(1));
    }

    #[test]
    fn knows_equals_belief_one() {
        let bat = move_bat();
        let (e, _, w) = setup(&bat);
        let params = EvalParams::default();
        let z = vec![sonar(3), mv(-1, 0), sonar(3)];
        let near = Formula::exists(
            "x",
            "position",
            Formula::and(loc_var(), Formula::Cmp(crate::lang::CmpOp::Le, Term::var("x"), Term::int(2))),
        );
        assert_eq!(
            eval(&bat, &e, w, &z, &Formula::knows(near.clone()), &params).unwrap(),
            eval(&bat, &e, w, &z, &Formula::believe(near, rat_int(1)), &params).unwrap()
        );
    }

    fn loc_var() -> Formula {
        Formula::Atom("Loc".into(), vec![Term::var("x")])
    }

    #[test]
    fn undefined_belief_is_false_or_strict_error() {
        let bat = move_bat();
        let (e, _, w) = setup(&bat);
        // A distribution with zero weight everywhere makes S_TRUE empty.
        let d: Distribution = [(w, rat_int(0))].into_iter().collect();
        let e0 = vec![d];
        let params = EvalParams::default();
        let f = Formula::believe(loc(3), rat_int(1));
        assert!(!eval(&bat, &e0, w, &[], &f, &params).unwrap());
        let strict = EvalParams {
            strict_belief: true,
            ..EvalParams::default()
        };
        assert_eq!(
            eval(&bat, &e0, w, &[], &f, &strict),
            Err(EvalError::BeliefUndefined)
        );
        let _ = e;
    }
}
