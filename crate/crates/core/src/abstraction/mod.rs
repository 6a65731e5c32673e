//! Refinement mappings between a high-level and a low-level theory, the
//! objective/epistemic isomorphism checks, bounded bisimulation
//! construction with a certified-to-bound verdict, sound/complete
//! abstraction checks over enumerated initial models, and a randomized
//! harness for the correspondence theorems.

pub mod filter;

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::{self, Distribution, EpistemicState, EvalError, EvalParams};
use crate::lang::{Formula, Program, Rat, Term, Trace};
use crate::model::{ActId, GroundBat, ModelError, WorldId};
use crate::parser::MappingFile;
use filter::{filter_traces, filter_traces_support, FilterError, FilterState, FilterTraces};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum MapError {
    #[error("no mapping for high-level symbol `{0}`")]
    UnmappedSymbol(String),
    #[error("mapping templates take no trace arguments; `{0}` is not ground enough")]
    BadInstantiation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("coarse aggregation is unsound here: {0}")]
    CoarseUnsound(String),
}

/// A refinement mapping: one low-level formula template per high-level
/// fluent and one low-level program template per high-level action.
#[derive(Debug, Clone)]
pub struct RefinementMapping {
    fluents: BTreeMap<String, (Vec<String>, Formula)>,
    actions: BTreeMap<String, (Vec<String>, Program)>,
}

impl RefinementMapping {
    pub fn new(file: &MappingFile) -> RefinementMapping {
        RefinementMapping {
            fluents: file
                .fluents
                .iter()
                .map(|(n, ps, f)| (n.clone(), (ps.clone(), f.clone())))
                .collect(),
            actions: file
                .actions
                .iter()
                .map(|(n, ps, p)| (n.clone(), (ps.clone(), p.clone())))
                .collect(),
        }
    }
}

fn instantiate_formula(template: &Formula, params: &[String], args: &[Term]) -> Formula {
    let mut f = template.clone();
    for (p, a) in params.iter().zip(args) {
        f = f.subst(p, a);
    }
    f
}

fn instantiate_program(template: &Program, params: &[String], args: &[Term]) -> Program {
    let mut p = template.clone();
    for (v, a) in params.iter().zip(args) {
        p = p.subst(v, a);
    }
    p
}

/// Map a high-level formula to a low-level formula. Quantifiers over
/// high-level sorts are expanded over the (finite) carrier so the result
/// mentions only low-level sorts; fluent atoms are replaced by their
/// instantiated templates.
pub fn map_formula(m: &RefinementMapping, bat_h: &GroundBat, f: &Formula) -> Result<Formula, MapError> {
    use std::boxed::Box as B;
    Ok(match f {
        Formula::True | Formula::False | Formula::Equal(..) | Formula::Cmp(..) => f.clone(),
        Formula::Atom(name, args) => {
            let (params, template) = m
                .fluents
                .get(name)
                .ok_or_else(|| MapError::UnmappedSymbol(name.clone()))?;
            instantiate_formula(template, params, args)
        }
        Formula::Poss(_) => return Err(MapError::UnmappedSymbol("Poss".into())),
        Formula::Not(g) => Formula::not(map_formula(m, bat_h, g)?),
        Formula::And(a, b) => Formula::and(map_formula(m, bat_h, a)?, map_formula(m, bat_h, b)?),
        Formula::Or(a, b) => Formula::or(map_formula(m, bat_h, a)?, map_formula(m, bat_h, b)?),
        Formula::Iff(a, b) => {
            Formula::Iff(B::new(map_formula(m, bat_h, a)?), B::new(map_formula(m, bat_h, b)?))
        }
        Formula::Forall(v, sort, g) => match bat_h.carrier(sort) {
            Ok(items) => items
                .into_iter()
                .map(|item| map_formula(m, bat_h, &g.subst(v, &item)))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .reduce(Formula::and)
                .unwrap_or(Formula::True),
            Err(_) => Formula::Forall(v.clone(), sort.clone(), B::new(map_formula(m, bat_h, g)?)),
        },
        Formula::Exists(v, sort, g) => match bat_h.carrier(sort) {
            Ok(items) => items
                .into_iter()
                .map(|item| map_formula(m, bat_h, &g.subst(v, &item)))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .reduce(Formula::or)
                .unwrap_or(Formula::False),
            Err(_) => Formula::Exists(v.clone(), sort.clone(), B::new(map_formula(m, bat_h, g)?)),
        },
        Formula::Box(g) => Formula::Box(B::new(map_formula(m, bat_h, g)?)),
        Formula::After(p, g) => Formula::After(
            B::new(map_program(m, bat_h, p)?),
            B::new(map_formula(m, bat_h, g)?),
        ),
        Formula::Belief(g, r) => Formula::believe(map_formula(m, bat_h, g)?, r.clone()),
    })
}

/// Map a high-level program to a low-level program: actions become their
/// instantiated program templates, tests are mapped as formulas, picks over
/// high-level sorts expand into finite choices.
pub fn map_program(m: &RefinementMapping, bat_h: &GroundBat, p: &Program) -> Result<Program, MapError> {
    Ok(match p {
        Program::Act(t) => match t {
            Term::Rigid(name, args) => {
                let (params, template) = m
                    .actions
                    .get(name)
                    .ok_or_else(|| MapError::UnmappedSymbol(name.clone()))?;
                instantiate_program(template, params, args)
            }
            other => return Err(MapError::BadInstantiation(format!("{other:?}"))),
        },
        Program::Test(f) => Program::Test(map_formula(m, bat_h, f)?),
        Program::Seq(a, b) => Program::seq(map_program(m, bat_h, a)?, map_program(m, bat_h, b)?),
        Program::Choice(a, b) => {
            Program::choice(map_program(m, bat_h, a)?, map_program(m, bat_h, b)?)
        }
        Program::Star(b) => Program::star(map_program(m, bat_h, b)?),
        Program::Pick(v, sort, body) => match bat_h.carrier(sort) {
            Ok(items) => items
                .into_iter()
                .map(|item| map_program(m, bat_h, &body.subst(v, &item)))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .reduce(Program::choice)
                .unwrap_or(Program::Test(Formula::False)),
            Err(_) => Program::Pick(
                v.clone(),
                sort.clone(),
                Box::new(map_program(m, bat_h, body)?),
            ),
        },
        Program::Nil => Program::Nil,
        Program::If(arms, els) => Program::If(
            arms.iter()
                .map(|(c, q)| Ok((map_formula(m, bat_h, c)?, map_program(m, bat_h, q)?)))
                .collect::<Result<Vec<_>, MapError>>()?,
            match els {
                Some(q) => Some(Box::new(map_program(m, bat_h, q)?)),
                None => None,
            },
        ),
        Program::While(c, b) => Program::While(
            map_formula(m, bat_h, c)?,
            Box::new(map_program(m, bat_h, b)?),
        ),
    })
}

/// Map a high-level trace to the sequence of low-level programs that
/// realize it, elementwise.
pub fn map_trace(m: &RefinementMapping, bat_h: &GroundBat, z: &[Term]) -> Result<Vec<Program>, MapError> {
    z.iter()
        .map(|a| map_program(m, bat_h, &Program::Act(a.clone())))
        .collect()
}

/// A concrete state: a world plus the trace executed in it.
pub type State = (WorldId, Trace);

/// Objective isomorphism: every ground atom mentioned in the high-level
/// theory holds at the high state iff its mapped formula holds at the low
/// state.
pub fn objective_iso(
    m: &RefinementMapping,
    bat_h: &GroundBat,
    bat_l: &GroundBat,
    s_h: &State,
    s_l: &State,
) -> Result<bool, MapError> {
    let vh = bat_h.val_after(s_h.0, &s_h.1)?;
    let vl = bat_l.val_after(s_l.0, &s_l.1)?;
    for (fluent, args) in &bat_h.atoms {
        let atom = Formula::Atom(fluent.clone(), args.clone());
        let high = bat_h.eval_ground(vh, &atom)?;
        let low = bat_l.eval_ground(vl, &map_formula(m, bat_h, &atom)?)?;
        if high != low {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Class-level objective isomorphism against an abstracted low state.
fn objective_iso_class(
    m: &RefinementMapping,
    bat_h: &GroundBat,
    bat_l: &GroundBat,
    s_h: &State,
    low: &FilterState,
) -> Result<bool, MapError> {
    let vh = bat_h.val_after(s_h.0, &s_h.1)?;
    for (fluent, args) in &bat_h.atoms {
        let atom = Formula::Atom(fluent.clone(), args.clone());
        let high = bat_h.eval_ground(vh, &atom)?;
        let mapped = map_formula(m, bat_h, &atom)?;
        if high != low.holds(bat_l, &mapped)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Are two states of the same theory observationally indistinguishable:
/// same oi-behaviour of the worlds and elementwise oi actions?
pub fn states_oi(bat: &GroundBat, a: &State, b: &State) -> Result<bool, ModelError> {
    if a.1.len() != b.1.len() || !belief::worlds_oi_agree(bat, a.0, b.0)? {
        return Ok(false);
    }
    for (k, (x, y)) in a.1.iter().zip(b.1.iter()).enumerate() {
        // The oi axiom is evaluated in the second state's run when it is
        // executable there, falling back to the first.
        let ok = match bat.val_after(b.0, &b.1[..k]) {
            Ok(vid) => {
                let xa = bat.eval_term(x)?;
                let ya = bat.eval_term(y)?;
                bat.oi_pair(vid, bat.intern_act(&xa), bat.intern_act(&ya))?
            }
            Err(_) => bat.oi_actions(a.0, &a.1[..k], x, y)?,
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The result of an epistemic isomorphism check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EpistemicVerdict {
    Isomorphic,
    /// Some cell's norm differs from the high-level norm.
    NormMismatch { cell: usize, high: Option<Rat>, low: Option<Rat> },
    /// Two representatives of the same cell disagree on the norm — a
    /// theory anomaly that is reported, never silently resolved.
    RepresentativeDisagreement { cell: usize },
}

/// Epistemic isomorphism of (d_h, s_h) and (d_l, S_l): partition S_l by
/// observational indistinguishability, and require every cell's normalized
/// weight to equal the high state's normalized weight. The norm is checked
/// against every representative of a cell.
pub fn epistemic_iso(
    bat_h: &GroundBat,
    bat_l: &GroundBat,
    e_h: &EpistemicState,
    e_l: &EpistemicState,
    d_h: &Distribution,
    s_h: &State,
    d_l: &Distribution,
    s_l: &[State],
    params: &EvalParams,
) -> Result<EpistemicVerdict, MapError> {
    // High-side norm: weight of {s_h} within its own S_TRUE.
    let s_true_h = belief::compatible_states(bat_h, e_h, d_h, s_h.0, &s_h.1, &Formula::True, params)?;
    let total_h = s_true_h.total_weight();
    let high_norm = if total_h.is_zero() {
        None
    } else {
        let self_weight: Rat = s_true_h
            .members
            .iter()
            .filter(|mem| mem.world == s_h.0 && mem.trace == s_h.1)
            .map(|mem| mem.weight.clone())
            .sum();
        Some(self_weight / total_h)
    };
    // Partition S_l by ≈oi.
    let mut cells: Vec<Vec<&State>> = Vec::new();
    for s in s_l {
        match cells
            .iter_mut()
            .find(|cell| states_oi(bat_l, cell[0], s).unwrap_or(false))
        {
            Some(cell) => cell.push(s),
            None => cells.push(vec![s]),
        }
    }
    for (i, cell) in cells.iter().enumerate() {
        let mut cell_weight = Rat::zero();
        for s in cell {
            let dw = d_l.get(&s.0).cloned().unwrap_or_else(Rat::zero);
            if dw.is_zero() || !bat_l.exec(s.0, &s.1)? {
                continue;
            }
            cell_weight += dw * bat_l.seq_likelihood(s.0, &s.1)?;
        }
        // Check the norm against every representative; Def-level it is one
        // representative, but a disagreement between representatives would
        // make the definition ambiguous, so it is surfaced explicitly.
        let mut norms: Vec<Option<Rat>> = Vec::new();
        for rep in cell {
            let s_true = belief::compatible_states(
                bat_l, e_l, d_l, rep.0, &rep.1, &Formula::True, params,
            )?;
            let total = s_true.total_weight();
            norms.push(if total.is_zero() {
                None
            } else {
                Some(cell_weight.clone() / total)
            });
        }
        if norms.windows(2).any(|w| w[0] != w[1]) {
            return Ok(EpistemicVerdict::RepresentativeDisagreement { cell: i });
        }
        let low_norm = norms.into_iter().next().flatten();
        if low_norm != high_norm {
            return Ok(EpistemicVerdict::NormMismatch {
                cell: i,
                high: high_norm,
                low: low_norm,
            });
        }
    }
    Ok(EpistemicVerdict::Isomorphic)
}

/// One member of the constructed relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePair {
    pub high: State,
    pub low_class: FilterState,
    /// A representative low trace of the class.
    pub low_trace: Trace,
}

/// Why certification failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    /// Violated bisimulation condition 1–7, or 0 for definiteness.
    pub condition: u8,
    pub description: String,
    pub high: State,
    pub low_trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    CertifiedToBound,
    Counterexample(Counterexample),
}

/// A bounded bisimulation relation with its verdict.
#[derive(Debug, Clone)]
pub struct BisimRelation {
    pub pairs: Vec<StatePair>,
    pub definite: bool,
    pub horizon: usize,
    pub star_bound: usize,
    pub verdict: Verdict,
    /// Some ‖m(a)‖ enumeration was cut at the star bound; the verdict can
    /// only ever be certified *to the bound*.
    pub truncated: bool,
}

/// The identity of a low state in the relation: its filter class plus the
/// observation signature of how it was reached. Two concrete low traces
/// collapse into one key exactly when the agent cannot tell them apart and
/// they end in the same class; distinct observable histories never collide,
/// so definiteness violations reported on this map are real.
type LowKey = (FilterState, Vec<ActId>);

struct Builder<'a> {
    m: &'a RefinementMapping,
    bat_h: &'a GroundBat,
    bat_l: &'a GroundBat,
    e_h: EpistemicState,
    d_h: Distribution,
    params: EvalParams,
    /// Low classes (with observation signature) to the unique high state
    /// they are paired with; definiteness is enforced on this map.
    rel: BTreeMap<LowKey, State>,
    rep: BTreeMap<LowKey, Trace>,
    by_high: BTreeMap<State, BTreeSet<LowKey>>,
    violations: Vec<Counterexample>,
    truncated: bool,
}

impl<'a> Builder<'a> {
    fn add_pair(&mut self, high: &State, key: LowKey, rep: Trace) -> bool {
        if let Some(existing) = self.rel.get(&key) {
            if existing != high {
                self.violations.push(Counterexample {
                    condition: 0,
                    description: format!(
                        "low state is paired with two high states: {:?} and {:?}",
                        existing.1, high.1
                    ),
                    high: high.clone(),
                    low_trace: rep,
                });
            }
            return false;
        }
        self.rel.insert(key.clone(), high.clone());
        self.rep.insert(key.clone(), rep);
        self.by_high.entry(high.clone()).or_default().insert(key);
        true
    }

    /// Close a pair under the epistemic transitions (conditions 6 and 7):
    /// every positive-weight executable oi-companion of the low state is
    /// itself a class over the same posterior and must appear in B paired
    /// with an oi-companion of the high state.
    fn close_companions(&mut self, high: &State, key: &LowKey) -> Result<(), MapError> {
        let (class, obs) = key.clone();
        // High-side companions: oi-alternatives with positive weight that
        // are executable.
        let mut high_companions: Vec<State> = Vec::new();
        for (&wh, p) in &self.d_h {
            if p.is_zero() || !belief::worlds_oi_agree(self.bat_h, high.0, wh)? {
                continue;
            }
            for zh in belief::oi_trace_alternatives(self.bat_h, wh, &high.1, false)? {
                if self.bat_h.exec(wh, &zh)? {
                    high_companions.push((wh, zh));
                }
            }
        }
        let rep = self.rep.get(key).cloned().unwrap_or_default();
        let mut matched_high: BTreeSet<usize> = BTreeSet::new();
        let members: Vec<(WorldId, usize)> =
            class.belief.keys().map(|&(w0, v)| (w0, v)).collect();
        for (w0, v) in members {
            let companion = FilterState {
                world: w0,
                vid: v,
                belief: class.belief.clone(),
            };
            // Pair the companion with an objectively isomorphic high
            // companion when one exists; otherwise keep the original high
            // state so the violation surfaces as condition 1.
            let mut target: Option<(usize, State)> = None;
            for (i, hc) in high_companions.iter().enumerate() {
                if objective_iso_class(self.m, self.bat_h, self.bat_l, hc, &companion)? {
                    target = Some((i, hc.clone()));
                    break;
                }
            }
            let (idx, hs) = match target {
                Some((i, hc)) => (Some(i), hc),
                None => (None, high.clone()),
            };
            if let Some(i) = idx {
                matched_high.insert(i);
            }
            self.add_pair(&hs, (companion, obs.clone()), rep.clone());
        }
        // Condition 6: every high companion must be matched by some low
        // companion.
        for (i, hc) in high_companions.iter().enumerate() {
            if hc == high {
                continue; // matched by the pair itself
            }
            if !matched_high.contains(&i) {
                self.violations.push(Counterexample {
                    condition: 6,
                    description: format!(
                        "high oi-companion {:?} has no paired low companion",
                        hc.1
                    ),
                    high: hc.clone(),
                    low_trace: rep.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Construct and verify a bounded bisimulation between (e_h, w_h) and
/// (e_l, w_l): starting from the initial pair, close under high-level
/// action successors (via the realizations of m(a)) and oi-companions, up
/// to `horizon` high-level actions, then check all seven conditions and
/// definiteness on every pair.
#[allow(clippy::too_many_arguments)]
pub fn build_bisim(
    m: &RefinementMapping,
    bat_h: &GroundBat,
    bat_l: &GroundBat,
    e_h: &EpistemicState,
    w_h: WorldId,
    e_l: &EpistemicState,
    w_l: WorldId,
    horizon: usize,
    star_bound: usize,
) -> Result<BisimRelation, MapError> {
    build_bisim_mode(m, bat_h, bat_l, e_h, w_h, e_l, w_l, horizon, star_bound, false)
}

/// Like [`build_bisim`], but with coarse (support-level) low states: the
/// posterior is uniformized over its support after every step, so low
/// states that differ only in posterior values collapse. Exact whenever
/// every test in the refined programs is knowledge-only and every high
/// norm encountered is 0 or 1; anything else is rejected with
/// [`MapError::CoarseUnsound`]. Definiteness is checked at the class
/// level in this mode.
#[allow(clippy::too_many_arguments)]
pub fn build_bisim_coarse(
    m: &RefinementMapping,
    bat_h: &GroundBat,
    bat_l: &GroundBat,
    e_h: &EpistemicState,
    w_h: WorldId,
    e_l: &EpistemicState,
    w_l: WorldId,
    horizon: usize,
    star_bound: usize,
) -> Result<BisimRelation, MapError> {
    build_bisim_mode(m, bat_h, bat_l, e_h, w_h, e_l, w_l, horizon, star_bound, true)
}

#[allow(clippy::too_many_arguments)]
fn build_bisim_mode(
    m: &RefinementMapping,
    bat_h: &GroundBat,
    bat_l: &GroundBat,
    e_h: &EpistemicState,
    w_h: WorldId,
    e_l: &EpistemicState,
    w_l: WorldId,
    horizon: usize,
    star_bound: usize,
    coarse: bool,
) -> Result<BisimRelation, MapError> {
    let params = EvalParams {
        star_bound,
        ..EvalParams::default()
    };
    let d_h = e_h.first().cloned().unwrap_or_default();
    let d_l = e_l.first().cloned().unwrap_or_default();
    let mut b = Builder {
        m,
        bat_h,
        bat_l,
        e_h: e_h.clone(),
        d_h,
        params,
        rel: BTreeMap::new(),
        rep: BTreeMap::new(),
        by_high: BTreeMap::new(),
        violations: Vec::new(),
        truncated: false,
    };

    // Ground high-level actions, in a stable order.
    let high_actions: Vec<Term> = bat_h
        .declared_actions()
        .iter()
        .map(|&aid| bat_h.act_term(aid))
        .collect();

    let init_high: State = (w_h, Vec::new());
    let mut init_low = FilterState::initial(bat_l, &d_l, w_l)?;
    if coarse {
        init_low = init_low.support_class();
    }
    b.add_pair(&init_high, (init_low.clone(), Vec::new()), Vec::new());
    b.close_companions(&init_high, &(init_low.clone(), Vec::new()))?;

    // Work list of pairs to expand, by number of high-level actions taken.
    let mut frontier: Vec<(State, LowKey)> = vec![(init_high, (init_low, Vec::new()))];
    for _depth in 0..horizon {
        let mut next: Vec<(State, LowKey)> = Vec::new();
        for (high, key) in frontier {
            for a in &high_actions {
                let high_poss = bat_h.poss(high.0, &high.1, a)?;
                let m_a = map_program(m, bat_h, &Program::Act(a.clone()))?;
                let ft = if coarse {
                    filter_traces_support(bat_l, &key.0, &m_a, star_bound)?
                } else {
                    filter_traces(bat_l, &key.0, &m_a, star_bound)?
                };
                if !ft.exact {
                    b.truncated = true;
                }
                if ft.realizations.is_empty() {
                    if high_poss && ft.exact {
                        b.violations.push(Counterexample {
                            condition: 4,
                            description: format!(
                                "{} is possible at the high level but its refinement has no realization",
                                crate::parser::pretty::print_term(a)
                            ),
                            high: high.clone(),
                            low_trace: b.rep.get(&key).cloned().unwrap_or_default(),
                        });
                    }
                    continue;
                }
                if !high_poss {
                    let witness = &ft.realizations[0];
                    let mut lt = b.rep.get(&key).cloned().unwrap_or_default();
                    lt.extend(witness.suffix.iter().cloned());
                    b.violations.push(Counterexample {
                        condition: 5,
                        description: format!(
                            "{} is not possible at the high level but its refinement has a realization",
                            crate::parser::pretty::print_term(a)
                        ),
                        high: high.clone(),
                        low_trace: lt,
                    });
                    continue;
                }
                let mut nh = high.clone();
                nh.1.push(a.clone());
                for r in &ft.realizations {
                    let mut nobs = key.1.clone();
                    nobs.extend(r.obs.iter().copied());
                    let nkey = (r.class.clone(), nobs);
                    let mut lt = b.rep.get(&key).cloned().unwrap_or_default();
                    lt.extend(r.suffix.iter().cloned());
                    if b.add_pair(&nh, nkey.clone(), lt) {
                        b.close_companions(&nh, &nkey)?;
                        next.push((nh.clone(), nkey));
                    }
                }
            }
        }
        frontier = next;
    }

    // Verification pass: conditions 1–3 on every pair (4–7 were checked
    // during construction).
    for (key, high) in b.rel.clone() {
        let rep = b.rep.get(&key).cloned().unwrap_or_default();
        // Condition 3: executability. High traces are built from possible
        // actions and low classes only ever step through possible actions,
        // but the representative trace is re-checked explicitly.
        if !bat_h.exec(high.0, &high.1)? {
            b.violations.push(Counterexample {
                condition: 3,
                description: "high trace is not executable".into(),
                high: high.clone(),
                low_trace: rep.clone(),
            });
        }
        // Condition 1: objective isomorphism at the class level.
        if !objective_iso_class(m, bat_h, bat_l, &high, &key.0)? {
            b.violations.push(Counterexample {
                condition: 1,
                description: "states are not objectively isomorphic".into(),
                high: high.clone(),
                low_trace: rep.clone(),
            });
            continue;
        }
        // Condition 2: epistemic isomorphism. Each class carries its own
        // oi-cell: the posterior over its companions. The cell members
        // paired with this high state must make up the same share of the
        // cell as the high state does of its own compatible set.
        let s_true_h = belief::compatible_states(
            bat_h, &b.e_h, &b.d_h, high.0, &high.1, &Formula::True, &b.params,
        )?;
        let total_h = s_true_h.total_weight();
        let high_norm = if total_h.is_zero() {
            None
        } else {
            let self_weight: Rat = s_true_h
                .members
                .iter()
                .filter(|mem| mem.world == high.0 && mem.trace == high.1)
                .map(|mem| mem.weight.clone())
                .sum();
            Some(self_weight / total_h)
        };
        if coarse {
            if let Some(r) = &high_norm {
                if !(r.is_zero() || r.is_one()) {
                    return Err(MapError::CoarseUnsound(format!(
                        "high state {:?} has fractional norm {}; use the exact mode",
                        high.1,
                        crate::parser::pretty::print_rat(r)
                    )));
                }
            }
        }
        let low_norm = if key.0.belief.is_empty() {
            None
        } else {
            let mut paired_weight = Rat::zero();
            for (&(w0, v), p) in &key.0.belief {
                let companion = FilterState {
                    world: w0,
                    vid: v,
                    belief: key.0.belief.clone(),
                };
                if b.rel.get(&(companion, key.1.clone())) == Some(&high) {
                    paired_weight += p.clone();
                }
            }
            Some(paired_weight) // posterior is normalized: S_TRUE weight is 1
        };
        if high_norm != low_norm {
            b.violations.push(Counterexample {
                condition: 2,
                description: format!(
                    "norms differ: high {:?}, low {:?}",
                    high_norm, low_norm
                ),
                high: high.clone(),
                low_trace: rep.clone(),
            });
        }
    }

    let pairs: Vec<StatePair> = b
        .rel
        .iter()
        .map(|(key, high)| StatePair {
            high: high.clone(),
            low_class: key.0.clone(),
            low_trace: b.rep.get(key).cloned().unwrap_or_default(),
        })
        .collect();
    let definite = !b.violations.iter().any(|v| v.condition == 0);
    let verdict = match b.violations.into_iter().next() {
        None => Verdict::CertifiedToBound,
        Some(v) => Verdict::Counterexample(v),
    };
    Ok(BisimRelation {
        pairs,
        definite,
        horizon,
        star_bound,
        verdict,
        truncated: b.truncated,
    })
}

/// Per-model verdict of a soundness/completeness check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelVerdict {
    pub subject_world: WorldId,
    pub matched_world: Option<WorldId>,
    pub certified: bool,
}

#[derive(Debug, Clone)]
pub struct AbstractionCheck {
    pub verdicts: Vec<ModelVerdict>,
    pub holds: bool,
    pub truncated: bool,
}

/// Sound abstraction check: every initial low-level model must be bisimilar
/// to some initial high-level model (point-mass epistemic states, following
/// the constructive proof).
pub fn check_sound(
    m: &RefinementMapping,
    bat_h: &GroundBat,
    bat_l: &GroundBat,
    horizon: usize,
    star_bound: usize,
    coarse: bool,
) -> Result<AbstractionCheck, MapError> {
    let mut verdicts = Vec::new();
    let mut truncated = false;
    for &(w_l, _) in bat_l.initial_worlds() {
        let e_l = belief::point_mass(w_l);
        let mut matched = None;
        for &(w_h, _) in bat_h.initial_worlds() {
            let e_h = belief::point_mass(w_h);
            let rel = build_bisim_mode(
                m, bat_h, bat_l, &e_h, w_h, &e_l, w_l, horizon, star_bound, coarse,
            )?;
            truncated |= rel.truncated;
            if rel.verdict == Verdict::CertifiedToBound {
                matched = Some(w_h);
                break;
            }
        }
        verdicts.push(ModelVerdict {
            subject_world: w_l,
            matched_world: matched,
            certified: matched.is_some(),
        });
    }
    let holds = verdicts.iter().all(|v| v.certified);
    Ok(AbstractionCheck {
        verdicts,
        holds,
        truncated,
    })
}

/// Complete abstraction check: every initial high-level model must be
/// bisimilar to some initial low-level model.
pub fn check_complete(
    m: &RefinementMapping,
    bat_h: &GroundBat,
    bat_l: &GroundBat,
    horizon: usize,
    star_bound: usize,
    coarse: bool,
) -> Result<AbstractionCheck, MapError> {
    let mut verdicts = Vec::new();
    let mut truncated = false;
    for &(w_h, _) in bat_h.initial_worlds() {
        let e_h = belief::point_mass(w_h);
        let mut matched = None;
        for &(w_l, _) in bat_l.initial_worlds() {
            let e_l = belief::point_mass(w_l);
            let rel = build_bisim_mode(
                m, bat_h, bat_l, &e_h, w_h, &e_l, w_l, horizon, star_bound, coarse,
            )?;
            truncated |= rel.truncated;
            if rel.verdict == Verdict::CertifiedToBound {
                matched = Some(w_l);
                break;
            }
        }
        verdicts.push(ModelVerdict {
            subject_world: w_h,
            matched_world: matched,
            certified: matched.is_some(),
        });
    }
    let holds = verdicts.iter().all(|v| v.certified);
    Ok(AbstractionCheck {
        verdicts,
        holds,
        truncated,
    })
}

/// Outcome of the randomized theorem harness.
#[derive(Debug, Clone, Default)]
pub struct HarnessReport {
    pub static_checked: usize,
    pub static_skipped: usize,
    pub bounded_checked: usize,
    pub trace_checked: usize,
    pub failures: Vec<String>,
    pub seed: u64,
}

struct FormulaGen<'a> {
    bat_h: &'a GroundBat,
    rng: ChaCha8Rng,
}

impl<'a> FormulaGen<'a> {
    fn atom(&mut self) -> Formula {
        let (fluent, args) = &self.bat_h.atoms[self.rng.gen_range(0..self.bat_h.atoms.len())];
        Formula::Atom(fluent.clone(), args.clone())
    }

    fn objective(&mut self, depth: usize) -> Formula {
        if depth == 0 {
            return self.atom();
        }
        match self.rng.gen_range(0..4) {
            0 => self.atom(),
            1 => Formula::not(self.objective(depth - 1)),
            2 => Formula::and(self.objective(depth - 1), self.objective(depth - 1)),
            _ => Formula::or(self.objective(depth - 1), self.objective(depth - 1)),
        }
    }

    /// A static formula of bounded depth; belief operands stay objective so
    /// both the exact evaluator and the filter can decide them.
    fn static_formula(&mut self, depth: usize) -> Formula {
        if depth == 0 {
            return self.atom();
        }
        match self.rng.gen_range(0..6) {
            0 => self.atom(),
            1 => Formula::not(self.static_formula(depth - 1)),
            2 => Formula::and(self.static_formula(depth - 1), self.static_formula(depth - 1)),
            3 => Formula::or(self.static_formula(depth - 1), self.static_formula(depth - 1)),
            4 => Formula::knows(self.objective(depth - 1)),
            _ => {
                let degrees = [Rat::zero(), crate::lang::rat(1, 2), Rat::one()];
                let r = degrees[self.rng.gen_range(0..degrees.len())].clone();
                Formula::believe(self.objective(depth - 1), r)
            }
        }
    }
}

/// Randomized checks of the correspondence theorems on a certified
/// relation: static formulas must agree across every pair, bounded
/// formulas with one program operator must agree, and executable
/// high-level traces must correspond to low-level realizations and back.
#[allow(clippy::too_many_arguments)]
pub fn theorem_harness(
    m: &RefinementMapping,
    bat_h: &GroundBat,
    bat_l: &GroundBat,
    e_h: &EpistemicState,
    rel: &BisimRelation,
    n_static: usize,
    depth: usize,
    n_bounded: usize,
    n_trace: usize,
    seed: u64,
) -> Result<HarnessReport, MapError> {
    let mut report = HarnessReport {
        seed,
        ..HarnessReport::default()
    };
    let params = EvalParams {
        star_bound: rel.star_bound.min(4),
        ..EvalParams::default()
    };
    let mut gen = FormulaGen {
        bat_h,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    if rel.pairs.is_empty() {
        return Ok(report);
    }
    let pick_pair = |rng: &mut ChaCha8Rng| rel.pairs[rng.gen_range(0..rel.pairs.len())].clone();

    // Static formula correspondence.
    for i in 0..n_static {
        let alpha = gen.static_formula(depth);
        let mapped = map_formula(m, bat_h, &alpha)?;
        let pair = pick_pair(&mut gen.rng);
        let high = belief::eval(bat_h, e_h, pair.high.0, &pair.high.1, &alpha, &params)?;
        let low = match pair.low_class.holds(bat_l, &mapped) {
            Ok(v) => v,
            Err(FilterError::Unsupported(_)) => {
                report.static_skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        report.static_checked += 1;
        if high != low {
            report.failures.push(format!(
                "static sample {i}: high {high}, low {low} for {}",
                crate::parser::pretty::print_formula(&alpha)
            ));
        }
    }

    // Bounded formula correspondence: [a] β for a random high action.
    // Sampled from the interior pairs, whose successors stay inside the
    // certified bound.
    let high_actions: Vec<Term> = bat_h
        .declared_actions()
        .iter()
        .map(|&aid| bat_h.act_term(aid))
        .collect();
    let interior: Vec<_> = rel
        .pairs
        .iter()
        .filter(|p| p.high.1.len() < rel.horizon)
        .cloned()
        .collect();
    // The same (class, action) enumeration is drawn many times; memoize it.
    let mut ft_cache: BTreeMap<(FilterState, Term), FilterTraces> = BTreeMap::new();
    let mut enumerate = |class: &FilterState, a: &Term| -> Result<FilterTraces, MapError> {
        if let Some(ft) = ft_cache.get(&(class.clone(), a.clone())) {
            return Ok(ft.clone());
        }
        let m_a = map_program(m, bat_h, &Program::Act(a.clone()))?;
        let ft = filter_traces(bat_l, class, &m_a, rel.star_bound)?;
        ft_cache.insert((class.clone(), a.clone()), ft.clone());
        Ok(ft)
    };
    for i in 0..n_bounded {
        if interior.is_empty() {
            break;
        }
        let a = high_actions[gen.rng.gen_range(0..high_actions.len())].clone();
        let beta = gen.static_formula(depth.saturating_sub(1));
        let alpha = Formula::After(
            Box::new(Program::Act(a.clone())),
            Box::new(beta.clone()),
        );
        let pair = interior[gen.rng.gen_range(0..interior.len())].clone();
        let high = belief::eval(bat_h, e_h, pair.high.0, &pair.high.1, &alpha, &params)?;
        // Low side: every realization of m(a) must satisfy m(β).
        let m_beta = map_formula(m, bat_h, &beta)?;
        let ft = enumerate(&pair.low_class, &a)?;
        let mut low = true;
        let mut decidable = true;
        for r in &ft.realizations {
            match r.class.holds(bat_l, &m_beta) {
                Ok(v) => low &= v,
                Err(FilterError::Unsupported(_)) => {
                    decidable = false;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if !decidable {
            report.static_skipped += 1;
            continue;
        }
        report.bounded_checked += 1;
        if high != low {
            report.failures.push(format!(
                "bounded sample {i}: high {high}, low {low} for {}",
                crate::parser::pretty::print_formula(&alpha)
            ));
        }
    }

    // Trace correspondence: a high action is executable at a pair iff its
    // refinement has a realization from the paired low class.
    for i in 0..n_trace {
        if interior.is_empty() {
            break;
        }
        let pair = interior[gen.rng.gen_range(0..interior.len())].clone();
        let a = high_actions[gen.rng.gen_range(0..high_actions.len())].clone();
        let high_poss = bat_h.poss(pair.high.0, &pair.high.1, &a)?;
        let ft = enumerate(&pair.low_class, &a)?;
        let low_realizable = !ft.realizations.is_empty();
        report.trace_checked += 1;
        if high_poss != low_realizable && ft.exact {
            report.failures.push(format!(
                "trace sample {i}: {} possible={high_poss} but realizable={low_realizable}",
                crate::parser::pretty::print_term(&a)
            ));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::builtin;
    use crate::lang::CmpOp;

    fn bundle() -> crate::builtins::ExampleBundle {
        builtin("move-goto").unwrap()
    }

    fn mapping(b: &crate::builtins::ExampleBundle) -> RefinementMapping {
        RefinementMapping::new(&b.mapping)
    }

    fn at(l: &str) -> Formula {
        Formula::Atom("At".into(), vec![Term::sym(l)])
    }

    #[test]
    fn maps_at_near_to_location_bound() {
        let b = bundle();
        let m = mapping(&b);
        let got = map_formula(&m, &b.high, &at("near")).unwrap();
        // (near = near ∧ ∃x(...x ≤ 2)) ∨ (near = mid ∧ ...) ∨ ...; evaluate
        // instead of comparing syntax: true exactly at positions ≤ 2.
        for w in [b.low.initial_worlds()[0].0] {
            let vid = b.low.val_after(w, &[]).unwrap();
            assert!(!b.low.eval_ground(vid, &got).unwrap()); // Loc(3) is mid
        }
        let mapped_mid = map_formula(&m, &b.high, &at("mid")).unwrap();
        let w = b.low.initial_worlds()[0].0;
        let vid = b.low.val_after(w, &[]).unwrap();
        assert!(b.low.eval_ground(vid, &mapped_mid).unwrap());
    }

    #[test]
    fn maps_connectives_homomorphically() {
        let b = bundle();
        let m = mapping(&b);
        let f = Formula::and(at("near"), Formula::not(at("far")));
        let got = map_formula(&m, &b.high, &f).unwrap();
        match got {
            Formula::And(_, g) => match *g {
                Formula::Not(_) => {}
                other => panic!("negation not preserved: {other:?}"),
            },
            other => panic!("conjunction not preserved: {other:?}"),
        }
    }

    #[test]
    fn maps_high_quantifier_over_carrier() {
        let b = bundle();
        let m = mapping(&b);
        let f = Formula::exists("l", "location", Formula::Atom("At".into(), vec![Term::var("l")]));
        let got = map_formula(&m, &b.high, &f).unwrap();
        // Expanded to a disjunction over near/mid/far: must hold at Loc(3).
        let w = b.low.initial_worlds()[0].0;
        let vid = b.low.val_after(w, &[]).unwrap();
        assert!(b.low.eval_ground(vid, &got).unwrap());
    }

    #[test]
    fn unmapped_symbol_is_reported() {
        let b = bundle();
        let m = mapping(&b);
        let f = Formula::Atom("Elsewhere".into(), vec![]);
        assert_eq!(
            map_formula(&m, &b.high, &f),
            Err(MapError::UnmappedSymbol("Elsewhere".into()))
        );
    }

    #[test]
    fn map_trace_is_elementwise() {
        let b = bundle();
        let m = mapping(&b);
        let z = vec![
            Term::app("goto", vec![Term::sym("near")]),
            Term::app("goto", vec![Term::sym("far")]),
        ];
        let progs = map_trace(&m, &b.high, &z).unwrap();
        assert_eq!(progs.len(), 2);
        assert_ne!(progs[0], progs[1]);
    }

    #[test]
    fn objective_iso_holds_initially() {
        let b = bundle();
        let m = mapping(&b);
        let wh = b.high.initial_worlds()[0].0;
        let wl = b.low.initial_worlds()[0].0;
        assert!(objective_iso(&m, &b.high, &b.low, &(wh, vec![]), &(wl, vec![])).unwrap());
        // After goto(near) at the high level, Loc(3) does not correspond.
        let zh = vec![Term::app("goto", vec![Term::sym("near")])];
        assert!(!objective_iso(&m, &b.high, &b.low, &(wh, zh), &(wl, vec![])).unwrap());
    }

    #[test]
    fn epistemic_iso_point_masses() {
        let b = bundle();
        let wh = b.high.initial_worlds()[0].0;
        let wl = b.low.initial_worlds()[0].0;
        let e_h = belief::point_mass(wh);
        let e_l = belief::point_mass(wl);
        let params = EvalParams::default();
        let got = epistemic_iso(
            &b.high,
            &b.low,
            &e_h,
            &e_l,
            &e_h[0],
            &(wh, vec![]),
            &e_l[0],
            &[(wl, vec![])],
            &params,
        )
        .unwrap();
        assert_eq!(got, EpistemicVerdict::Isomorphic);
        // Dropping the only member of the cell leaves nothing to check.
        let empty = epistemic_iso(
            &b.high,
            &b.low,
            &e_h,
            &e_l,
            &e_h[0],
            &(wh, vec![]),
            &e_l[0],
            &[],
            &params,
        )
        .unwrap();
        assert_eq!(empty, EpistemicVerdict::Isomorphic);
    }

    #[test]
    fn epistemic_iso_detects_missing_mass() {
        let b = bundle();
        let wl = b.low.initial_worlds()[0].0;
        let e_l = belief::point_mass(wl);
        let params = EvalParams::default();
        // A sonar reading has no oi-alternatives, so the subject state is
        // its whole compatible set (norm 1). An unobserved move spreads
        // weight over three outcomes, so a cell holding just one of them
        // has norm 1/5. Comparing the two must report the mismatch.
        let zh = vec![Term::app("sonar", vec![Term::int(3)])];
        let zl = vec![Term::app("move", vec![Term::int(-1), Term::int(0)])];
        let got = epistemic_iso(
            &b.low,
            &b.low,
            &e_l,
            &e_l,
            &e_l[0],
            &(wl, zh),
            &e_l[0],
            &[(wl, zl)],
            &params,
        )
        .unwrap();
        match got {
            EpistemicVerdict::NormMismatch { .. } => {}
            other => panic!("expected a norm mismatch, got {other:?}"),
        }
    }

    #[test]
    fn identity_self_bisimulation_on_goto() {
        // Identity mapping of the high-level theory onto itself must
        // certify with a diagonal relation.
        let b = bundle();
        let table = &b.high_table;
        let text = "mapping { \
            fluent At(l) -> At(l); \
            action goto(t) -> { goto(t) } \
        }";
        let file = crate::parser::parse_mapping(text, table, table).unwrap();
        let m = RefinementMapping::new(&file);
        let w = b.high.initial_worlds()[0].0;
        let e = belief::point_mass(w);
        let rel = build_bisim(&m, &b.high, &b.high, &e, w, &e, w, 2, 4).unwrap();
        assert_eq!(rel.verdict, Verdict::CertifiedToBound);
        assert!(rel.definite);
        assert!(!rel.truncated);
        // Diagonal: ⟨⟩, ⟨g(near)⟩, ⟨g(far)⟩ and their 2-step extensions.
        assert_eq!(rel.pairs.len(), 7);
    }

    #[test]
    fn builtin_bisimulation_certifies_small_bound() {
        let b = bundle();
        let m = mapping(&b);
        let wh = b.high.initial_worlds()[0].0;
        let wl = b.low.initial_worlds()[0].0;
        let e_h = belief::point_mass(wh);
        let e_l = belief::point_mass(wl);
        let rel = build_bisim(&m, &b.high, &b.low, &e_h, wh, &e_l, wl, 1, 6).unwrap();
        assert_eq!(rel.verdict, Verdict::CertifiedToBound);
        assert!(rel.definite);
    }

    #[test]
    fn coarse_bisimulation_certifies_horizon_two() {
        let b = bundle();
        let m = mapping(&b);
        let wh = b.high.initial_worlds()[0].0;
        let wl = b.low.initial_worlds()[0].0;
        let e_h = belief::point_mass(wh);
        let e_l = belief::point_mass(wl);
        let rel =
            build_bisim_coarse(&m, &b.high, &b.low, &e_h, wh, &e_l, wl, 2, 6).unwrap();
        assert_eq!(rel.verdict, Verdict::CertifiedToBound);
        assert!(rel.definite);
    }

    #[test]
    fn coarse_mode_rejects_value_dependent_tests() {
        let b = bundle();
        let text = "mapping { \
            fluent At(l) -> \
              ((l = near) & exists x: position ((Loc(x) & (x <= 2)))) \
              | ((l = mid) & exists x: position ((Loc(x) & ((x > 2) & (x <= 5))))) \
              | ((l = far) & exists x: position ((Loc(x) & (x > 5)))); \
            action goto(t) -> { sonar(); B(Loc(3) : 1/2)? } \
        }";
        let file = crate::parser::parse_mapping(text, &b.high_table, &b.low_table).unwrap();
        let m = RefinementMapping::new(&file);
        let wh = b.high.initial_worlds()[0].0;
        let wl = b.low.initial_worlds()[0].0;
        let e_h = belief::point_mass(wh);
        let e_l = belief::point_mass(wl);
        let got = build_bisim_coarse(&m, &b.high, &b.low, &e_h, wh, &e_l, wl, 1, 4);
        assert!(
            matches!(got, Err(MapError::Filter(FilterError::Unsupported(_)))),
            "{got:?}"
        );
    }

    #[test]
    fn sabotaged_fluent_mapping_fails_condition_1() {
        let b = bundle();
        let text = "mapping { \
            fluent At(l) -> \
              ((l = near) & exists x: position ((Loc(x) & (x <= 1)))) \
              | ((l = mid) & exists x: position ((Loc(x) & ((x > 1) & (x <= 5))))) \
              | ((l = far) & exists x: position ((Loc(x) & (x > 5)))); \
            action goto(t) -> { \
              sonar(); \
              if (t = near) then \
                while !K(exists x: position ((Loc(x) & (x <= 2)))) do move(-1); sonar() done \
              elif (t = far) then \
                while !K(exists x: position ((Loc(x) & (x > 5)))) do move(1); sonar() done \
              fi \
            } \
        }";
        let file = crate::parser::parse_mapping(text, &b.high_table, &b.low_table).unwrap();
        let m = RefinementMapping::new(&file);
        let wh = b.high.initial_worlds()[0].0;
        let wl = b.low.initial_worlds()[0].0;
        let e_h = belief::point_mass(wh);
        let e_l = belief::point_mass(wl);
        let rel = build_bisim(&m, &b.high, &b.low, &e_h, wh, &e_l, wl, 1, 6).unwrap();
        match rel.verdict {
            Verdict::Counterexample(cex) => assert_eq!(cex.condition, 1),
            other => panic!("expected a counterexample, got {other:?}"),
        }
    }

    #[test]
    fn theorem_harness_smoke() {
        let b = bundle();
        let m = mapping(&b);
        let wh = b.high.initial_worlds()[0].0;
        let wl = b.low.initial_worlds()[0].0;
        let e_h = belief::point_mass(wh);
        let e_l = belief::point_mass(wl);
        let rel = build_bisim(&m, &b.high, &b.low, &e_h, wh, &e_l, wl, 1, 6).unwrap();
        assert_eq!(rel.verdict, Verdict::CertifiedToBound);
        let report = theorem_harness(&m, &b.high, &b.low, &e_h, &rel, 50, 3, 20, 20, 7).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert!(report.static_checked > 0);
    }

    #[test]
    fn cmp_terms_survive_mapping() {
        let b = bundle();
        let m = mapping(&b);
        let f = Formula::Cmp(CmpOp::Le, Term::int(1), Term::int(2));
        assert_eq!(map_formula(&m, &b.high, &f).unwrap(), f);
    }
}
