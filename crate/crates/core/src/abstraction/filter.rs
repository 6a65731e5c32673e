//! Aggregated belief filtering.
//!
//! Enumerating every trace of a noisy program blows up exponentially, but
//! the truth of the formulas we need (objective facts and beliefs in
//! objective facts) at a state (w, z) only depends on the current valuation
//! and on the posterior over the oi-alternatives of z, aggregated by the
//! valuation they end in. A [`FilterState`] captures exactly that, so whole
//! bundles of traces collapse into one node during program exploration.

use std::collections::{BTreeMap, HashSet};

use num_traits::{One, Zero};

use crate::belief::{worlds_oi_agree, Distribution, EvalError};
use crate::lang::{expand_sugar, Formula, Program, Rat, Term};
use crate::model::{ActId, GroundBat, ModelError, ValId, WorldId};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the filter cannot evaluate `{0}` (belief bodies must be objective and static, no box/after)")]
    Unsupported(String),
}

impl From<FilterError> for EvalError {
    fn from(e: FilterError) -> EvalError {
        match e {
            FilterError::Model(m) => EvalError::Model(m),
            FilterError::Unsupported(_) => EvalError::Model(ModelError::NotObjective),
        }
    }
}

/// The abstraction of a state (w, z): the world, the valuation reached by
/// z, and the normalized posterior over the executable oi-alternatives of
/// z, keyed by the (world, valuation) they end in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FilterState {
    pub world: WorldId,
    pub vid: ValId,
    pub belief: BTreeMap<(WorldId, ValId), Rat>,
}

fn normalize(mut belief: BTreeMap<(WorldId, ValId), Rat>) -> BTreeMap<(WorldId, ValId), Rat> {
    let total: Rat = belief.values().cloned().sum();
    if total.is_zero() {
        return BTreeMap::new();
    }
    for v in belief.values_mut() {
        *v /= total.clone();
    }
    belief
}

impl FilterState {
    /// The initial filter state of (w, ⟨⟩) under distribution d.
    pub fn initial(bat: &GroundBat, d: &Distribution, w: WorldId) -> Result<FilterState, FilterError> {
        let mut belief = BTreeMap::new();
        for (&w2, p) in d {
            if p.is_zero() || !worlds_oi_agree(bat, w, w2)? {
                continue;
            }
            belief.insert((w2, w2), p.clone());
        }
        Ok(FilterState {
            world: w,
            vid: w,
            belief: normalize(belief),
        })
    }

    /// Advance the state by one executed action, or None if the action is
    /// not possible in the current valuation.
    pub fn step(&self, bat: &GroundBat, a: &Term) -> Result<Option<FilterState>, FilterError> {
        let act = bat.eval_term(a)?;
        let aid = bat.intern_act(&act);
        if !bat.poss_id(self.vid, aid)? {
            return Ok(None);
        }
        let vid = bat.progress(self.vid, aid)?;
        let mut belief: BTreeMap<(WorldId, ValId), Rat> = BTreeMap::new();
        for (&(w0, v), p) in &self.belief {
            for &bid in &bat.oi_siblings(v, aid)? {
                if !bat.poss_id(v, bid)? {
                    continue;
                }
                let lik = bat.lik_id(v, bid)?;
                if lik.is_zero() {
                    continue;
                }
                let nv = bat.progress(v, bid)?;
                *belief.entry((w0, nv)).or_insert_with(Rat::zero) += p.clone() * lik;
            }
        }
        Ok(Some(FilterState {
            world: self.world,
            vid,
            belief: normalize(belief),
        }))
    }

    /// Belief degree in an objective static formula, or None when the
    /// posterior is empty (undefined).
    pub fn degree(&self, bat: &GroundBat, g: &Formula) -> Result<Option<Rat>, FilterError> {
        let cl = g.classify();
        if !(cl.is_static && cl.is_objective) {
            return Err(FilterError::Unsupported(format!("{g:?}")));
        }
        if self.belief.is_empty() {
            return Ok(None);
        }
        let mut sum = Rat::zero();
        for (&(_, v), p) in &self.belief {
            if bat.eval_ground(v, g)? {
                sum += p.clone();
            }
        }
        Ok(Some(sum))
    }

    /// The coarse image of this state: the posterior replaced by the
    /// uniform distribution over its support. Knowledge (belief of degree 0
    /// or 1) and everything objective only depend on the support, so the
    /// coarse image decides them exactly while collapsing all states that
    /// differ only in posterior values.
    pub fn support_class(&self) -> FilterState {
        if self.belief.is_empty() {
            return self.clone();
        }
        let share = Rat::one() / Rat::from_integer((self.belief.len() as i64).into());
        FilterState {
            world: self.world,
            vid: self.vid,
            belief: self.belief.keys().map(|&k| (k, share.clone())).collect(),
        }
    }

    /// Truth of a static formula at the abstracted state. Belief operands
    /// must be objective; undefined beliefs are false.
    pub fn holds(&self, bat: &GroundBat, f: &Formula) -> Result<bool, FilterError> {
        let cl = f.classify();
        if cl.is_static && cl.is_objective {
            return Ok(bat.eval_ground(self.vid, f)?);
        }
        match f {
            Formula::Not(g) => Ok(!self.holds(bat, g)?),
            Formula::And(a, b) => Ok(self.holds(bat, a)? && self.holds(bat, b)?),
            Formula::Or(a, b) => Ok(self.holds(bat, a)? || self.holds(bat, b)?),
            Formula::Iff(a, b) => Ok(self.holds(bat, a)? == self.holds(bat, b)?),
            Formula::Forall(v, sort, g) => {
                for item in bat.carrier(sort)? {
                    if !self.holds(bat, &g.subst(v, &item))? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Formula::Exists(v, sort, g) => {
                for item in bat.carrier(sort)? {
                    if self.holds(bat, &g.subst(v, &item))? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Formula::Belief(g, r) => match self.degree(bat, g)? {
                None => Ok(false),
                Some(got) => Ok(got == *r),
            },
            other => Err(FilterError::Unsupported(format!("{other:?}"))),
        }
    }
}

/// Does the formula only ever ask support-determined questions: objective
/// facts, knowledge, and belief of degree exactly 0 or 1? Such formulas
/// cannot distinguish posteriors with equal support.
pub fn knowledge_only_formula(f: &Formula) -> bool {
    match f {
        Formula::True
        | Formula::False
        | Formula::Atom(..)
        | Formula::Equal(..)
        | Formula::Cmp(..) => true,
        Formula::Poss(_) => true,
        Formula::Not(g) | Formula::Forall(_, _, g) | Formula::Exists(_, _, g) => {
            knowledge_only_formula(g)
        }
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Iff(a, b) => {
            knowledge_only_formula(a) && knowledge_only_formula(b)
        }
        Formula::Box(g) => knowledge_only_formula(g),
        Formula::After(p, g) => knowledge_only_program(p) && knowledge_only_formula(g),
        Formula::Belief(g, r) => {
            (r.is_zero() || r.is_one())
                && g.classify().is_objective
                && knowledge_only_formula(g)
        }
    }
}

/// Does every test in the program only ask support-determined questions?
pub fn knowledge_only_program(p: &Program) -> bool {
    match p {
        Program::Act(_) | Program::Nil => true,
        Program::Test(f) => knowledge_only_formula(f),
        Program::Seq(a, b) | Program::Choice(a, b) => {
            knowledge_only_program(a) && knowledge_only_program(b)
        }
        Program::Pick(_, _, b) | Program::Star(b) => knowledge_only_program(b),
        Program::While(c, b) => knowledge_only_formula(c) && knowledge_only_program(b),
        Program::If(arms, els) => {
            arms.iter()
                .all(|(c, q)| knowledge_only_formula(c) && knowledge_only_program(q))
                && els.as_deref().map_or(true, knowledge_only_program)
        }
    }
}

/// One way the program can run to completion: the class of states it ends
/// in, the observation signature of the run (each action replaced by the
/// least of its oi-siblings, so runs an agent cannot tell apart share a
/// signature), and a representative action suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Realization {
    pub class: FilterState,
    pub obs: Vec<ActId>,
    pub suffix: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterTraces {
    pub realizations: Vec<Realization>,
    pub exact: bool,
}

type StarCounts = BTreeMap<String, usize>;

fn fstep(
    bat: &GroundBat,
    fs: &FilterState,
    p: &Program,
) -> Result<Vec<(Term, ActId, FilterState, Program, Vec<Program>)>, FilterError> {
    let mut out: Vec<(Term, ActId, FilterState, Program, Vec<Program>)> = Vec::new();
    match p {
        Program::Act(t) => {
            let a = bat.eval_term(t)?;
            if let Some(next) = fs.step(bat, &a)? {
                let aid = bat.intern_act(&a);
                let canon = bat
                    .oi_siblings(fs.vid, aid)?
                    .into_iter()
                    .min()
                    .unwrap_or(aid);
                out.push((a, canon, next, Program::Test(Formula::True), Vec::new()));
            }
        }
        Program::Test(_) => {}
        Program::Seq(p1, p2) => {
            for (a, o, nfs, rem, entered) in fstep(bat, fs, p1)? {
                out.push((a, o, nfs, Program::seq(rem, (**p2).clone()), entered));
            }
            if ffinal(bat, fs, p1)? {
                out.extend(fstep(bat, fs, p2)?);
            }
        }
        Program::Choice(p1, p2) => {
            out.extend(fstep(bat, fs, p1)?);
            out.extend(fstep(bat, fs, p2)?);
        }
        Program::Pick(v, sort, body) => {
            for item in bat.carrier(sort)? {
                out.extend(fstep(bat, fs, &body.subst(v, &item))?);
            }
        }
        Program::Star(body) => {
            for (a, o, nfs, rem, entered) in fstep(bat, fs, body)? {
                let mut ent = vec![(**body).clone()];
                ent.extend(entered);
                out.push((a, o, nfs, Program::seq(rem, p.clone()), ent));
            }
        }
        Program::If(..) | Program::While(..) | Program::Nil => {
            out.extend(fstep(bat, fs, &expand_sugar(p))?);
        }
    }
    out.dedup();
    Ok(out)
}

fn ffinal(bat: &GroundBat, fs: &FilterState, p: &Program) -> Result<bool, FilterError> {
    match p {
        Program::Act(_) => Ok(false),
        Program::Test(f) => fs.holds(bat, f),
        Program::Seq(a, b) => Ok(ffinal(bat, fs, a)? && ffinal(bat, fs, b)?),
        Program::Choice(a, b) => Ok(ffinal(bat, fs, a)? || ffinal(bat, fs, b)?),
        Program::Pick(v, sort, body) => {
            for item in bat.carrier(sort)? {
                if ffinal(bat, fs, &body.subst(v, &item))? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Program::Star(_) => Ok(true),
        Program::If(..) | Program::While(..) | Program::Nil => {
            ffinal(bat, fs, &expand_sugar(p))
        }
    }
}

/// Enumerate the program's realizations from an abstracted state, grouping
/// completions by the filter class and observation signature they end with.
/// The star bound cuts branches exactly as in the trace-level interpreter.
pub fn filter_traces(
    bat: &GroundBat,
    start: &FilterState,
    p: &Program,
    star_bound: usize,
) -> Result<FilterTraces, FilterError> {
    filter_traces_mode(bat, start, p, star_bound, false)
}

/// Coarse enumeration: states are uniformized over their support after
/// every step and observation signatures keep only the action head symbols
/// (not the noisy argument values). Exact — and vastly cheaper — whenever every
/// test in the program is support-determined ([`knowledge_only_program`]);
/// rejected otherwise.
pub fn filter_traces_support(
    bat: &GroundBat,
    start: &FilterState,
    p: &Program,
    star_bound: usize,
) -> Result<FilterTraces, FilterError> {
    if !knowledge_only_program(p) {
        return Err(FilterError::Unsupported(format!(
            "coarse enumeration needs knowledge-only tests in `{}`",
            crate::parser::pretty::print_program(p)
        )));
    }
    filter_traces_mode(bat, &start.support_class(), p, star_bound, true)
}

fn filter_traces_mode(
    bat: &GroundBat,
    start: &FilterState,
    p: &Program,
    star_bound: usize,
    coarse: bool,
) -> Result<FilterTraces, FilterError> {
    let p = expand_sugar(p);
    let mut exact = true;
    let mut found: BTreeMap<(FilterState, Vec<ActId>), Vec<Term>> = BTreeMap::new();
    let mut visited: HashSet<(FilterState, Vec<ActId>, Program, Vec<(String, usize)>)> =
        HashSet::new();
    let mut stack: Vec<(FilterState, Vec<ActId>, Vec<Term>, Program, StarCounts)> =
        vec![(start.clone(), Vec::new(), Vec::new(), p, StarCounts::new())];
    while let Some((fs, obs, suffix, prog, counts)) = stack.pop() {
        let key = (
            fs.clone(),
            obs.clone(),
            prog.clone(),
            counts.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        );
        if !visited.insert(key) {
            continue;
        }
        if ffinal(bat, &fs, &prog)? {
            found
                .entry((fs.clone(), obs.clone()))
                .or_insert_with(|| suffix.clone());
        }
        for (a, o, nfs, rem, entered) in fstep(bat, &fs, &prog)? {
            let mut counts = counts.clone();
            let mut cut = false;
            for body in &entered {
                let c = counts
                    .entry(crate::parser::pretty::print_program(body))
                    .or_insert(0);
                *c += 1;
                if *c > star_bound {
                    cut = true;
                }
            }
            if cut {
                exact = false;
                continue;
            }
            let mut no = obs.clone();
            let nfs = if coarse {
                // Record only the action's head symbol: fine enough to
                // separate runs of different shape, value-free so noisy
                // argument values do not multiply the state space.
                if let Term::Rigid(head, _) = &a {
                    no.push(bat.intern_act(&Term::app(head.clone(), Vec::new())));
                }
                nfs.support_class()
            } else {
                no.push(o);
                nfs
            };
            let mut ns = suffix.clone();
            ns.push(a);
            stack.push((nfs, no, ns, rem, counts));
        }
    }
    Ok(FilterTraces {
        realizations: found
            .into_iter()
            .map(|((class, obs), suffix)| Realization { class, obs, suffix })
            .collect(),
        exact,
    })
}
