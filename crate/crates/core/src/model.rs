//! Ground semantic engine for a single basic action theory: worlds as
//! initial valuations, fluent progression via successor-state axioms,
//! preconditions, likelihood, observational indistinguishability and
//! sequence likelihood.
//!
//! Valuations are interned; progression, precondition, likelihood and
//! oi-sibling results are memoized per (valuation, action).

use std::collections::HashMap;
use std::sync::Mutex;

use num_traits::{One, Signed, Zero};

use crate::lang::{rat_int, Formula, Rat, Term};
use crate::parser::{InitClause, LikExpr, SsaDecl, SymbolTable, TheoryFile};

pub type ValId = usize;
pub type ActId = usize;
pub type AtomId = usize;
/// A world is identified by its initial valuation.
pub type WorldId = ValId;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("action at step {step} of the trace is not possible")]
    ImpossibleAction { step: usize },
    #[error("likelihood axiom is not functional for `{action}`: {detail}")]
    AxiomNotFunctional { action: String, detail: String },
    #[error("no likelihood case for action functor `{0}`")]
    UnknownAction(String),
    #[error("formula is not objective; belief operators require the belief engine")]
    NotObjective,
    #[error("unbound variable `{0}` at evaluation time")]
    UnboundVariable(String),
    #[error("term `{0}` is not numeric")]
    NonNumeric(String),
    #[error("unknown sort `{0}`")]
    UnknownSort(String),
    #[error("the initial theory has no model")]
    NoModel,
    #[error("too many unconstrained atoms to enumerate worlds ({0})")]
    TooManyWorlds(usize),
    #[error("oi axiom is not an equivalence relation: {0}")]
    OiNotEquivalence(String),
    #[error("functional fluent `{0}` does not hold for exactly one tuple in an initial world")]
    FunctionalViolation(String),
    #[error("initial world mentions unknown atom instance `{0}`")]
    UnknownAtom(String),
    #[error("init constraints must be static objective formulas")]
    NonObjectiveConstraint,
}

/// Θ(u, v, c, d): c if u = v, d if |u − v| = 1, 0 otherwise.
pub fn theta(u: &Rat, v: &Rat, c: &Rat, d: &Rat) -> Rat {
    let diff = (u - v).abs();
    if diff.is_zero() {
        c.clone()
    } else if diff.is_one() {
        d.clone()
    } else {
        Rat::zero()
    }
}

type Bits = Vec<u64>;

fn bit_get(bits: &Bits, i: usize) -> bool {
    bits[i / 64] >> (i % 64) & 1 == 1
}

fn bit_set(bits: &mut Bits, i: usize, v: bool) {
    if v {
        bits[i / 64] |= 1 << (i % 64);
    } else {
        bits[i / 64] &= !(1 << (i % 64));
    }
}

#[derive(Default)]
struct ValArena {
    vals: Vec<Bits>,
    ids: HashMap<Bits, ValId>,
}

impl ValArena {
    fn intern(&mut self, bits: Bits) -> ValId {
        if let Some(&id) = self.ids.get(&bits) {
            return id;
        }
        let id = self.vals.len();
        self.vals.push(bits.clone());
        self.ids.insert(bits, id);
        id
    }
}

#[derive(Default)]
struct ActArena {
    terms: Vec<Term>,
    ids: HashMap<Term, ActId>,
}

impl ActArena {
    fn intern(&mut self, t: &Term) -> ActId {
        if let Some(&id) = self.ids.get(t) {
            return id;
        }
        let id = self.terms.len();
        self.terms.push(t.clone());
        self.ids.insert(t.clone(), id);
        id
    }
}

#[derive(Default)]
struct Caches {
    succ: HashMap<(ValId, ActId), ValId>,
    poss: HashMap<(ValId, ActId), bool>,
    lik: HashMap<(ValId, ActId), Rat>,
    sibs: HashMap<(ValId, ActId), Vec<ActId>>,
}

/// A compiled theory: finite atom and action spaces plus memoizing
/// evaluators for the axioms.
pub struct GroundBat {
    pub theory: TheoryFile,
    pub table: SymbolTable,
    /// Primitive atoms (fluent name, canonical ground args), index = AtomId.
    pub atoms: Vec<(String, Vec<Term>)>,
    atom_ids: HashMap<(String, Vec<Term>), AtomId>,
    ssas: HashMap<String, SsaDecl>,
    /// Ids of the declared ground actions (schemas × carriers).
    declared: Vec<ActId>,
    words: usize,
    acts: Mutex<ActArena>,
    vals: Mutex<ValArena>,
    caches: Mutex<Caches>,
    init_worlds: Vec<(WorldId, Rat)>,
}

impl GroundBat {
    pub fn compile(theory: TheoryFile) -> Result<GroundBat, ModelError> {
        let table = SymbolTable::from_theory(&theory);

        let mut atoms = Vec::new();
        let mut atom_ids = HashMap::new();
        for f in &theory.fluents {
            let carriers: Vec<&Vec<Term>> = f
                .arg_sorts
                .iter()
                .map(|s| table.sorts.get(s).ok_or_else(|| ModelError::UnknownSort(s.clone())))
                .collect::<Result<_, _>>()?;
            for combo in cartesian(&carriers) {
                let key = (f.name.clone(), combo);
                atom_ids.insert(key.clone(), atoms.len());
                atoms.push(key);
            }
        }
        let words = atoms.len().div_ceil(64).max(1);

        let mut acts = ActArena::default();
        let mut declared = Vec::new();
        for a in &theory.actions {
            let carriers: Vec<&Vec<Term>> = a
                .args
                .iter()
                .map(|arg| {
                    table
                        .sorts
                        .get(&arg.sort)
                        .ok_or_else(|| ModelError::UnknownSort(arg.sort.clone()))
                })
                .collect::<Result<_, _>>()?;
            for combo in cartesian(&carriers) {
                declared.push(acts.intern(&Term::Rigid(a.name.clone(), combo)));
            }
        }

        let ssas = theory
            .ssas
            .iter()
            .map(|s| (s.fluent.clone(), s.clone()))
            .collect();

        let mut bat = GroundBat {
            theory,
            table,
            atoms,
            atom_ids,
            ssas,
            declared,
            words,
            acts: Mutex::new(acts),
            vals: Mutex::new(ValArena::default()),
            caches: Mutex::new(Caches::default()),
            init_worlds: Vec::new(),
        };
        bat.init_worlds = bat.build_initial_worlds()?;
        bat.validate_functional()?;
        bat.validate_oi_equivalence()?;
        Ok(bat)
    }

    // -- interning ---------------------------------------------------------

    pub fn intern_act(&self, t: &Term) -> ActId {
        debug_assert!(t.is_ground());
        self.acts.lock().unwrap().intern(t)
    }

    pub fn act_term(&self, id: ActId) -> Term {
        self.acts.lock().unwrap().terms[id].clone()
    }

    pub fn declared_actions(&self) -> &[ActId] {
        &self.declared
    }

    fn intern_bits(&self, bits: Bits) -> ValId {
        self.vals.lock().unwrap().intern(bits)
    }

    fn bits_of(&self, vid: ValId) -> Bits {
        self.vals.lock().unwrap().vals[vid].clone()
    }

    pub fn atom_id(&self, fluent: &str, args: &[Term]) -> Option<AtomId> {
        self.atom_ids
            .get(&(fluent.to_string(), args.to_vec()))
            .copied()
    }

    /// Truth of a primitive atom in a (progressed) valuation.
    pub fn atom_true(&self, vid: ValId, atom: AtomId) -> bool {
        bit_get(&self.vals.lock().unwrap().vals[vid], atom)
    }

    /// The atoms true in a valuation, in atom-id order.
    pub fn true_atoms(&self, vid: ValId) -> Vec<AtomId> {
        let bits = self.bits_of(vid);
        (0..self.atoms.len()).filter(|&i| bit_get(&bits, i)).collect()
    }

    // -- term evaluation -----------------------------------------------------

    /// Evaluate a ground term to canonical form (interpreted `+`/`-` folded).
    pub fn eval_term(&self, t: &Term) -> Result<Term, ModelError> {
        match t {
            Term::Var(v) => Err(ModelError::UnboundVariable(v.clone())),
            Term::Num(_) => Ok(t.clone()),
            Term::Rigid(f, args) if (f == "+" || f == "-") && args.len() == 2 => {
                let a = self.numeric(&args[0])?;
                let b = self.numeric(&args[1])?;
                Ok(Term::Num(if f == "+" { a + b } else { a - b }))
            }
            Term::Rigid(f, args) => {
                let args = args
                    .iter()
                    .map(|a| self.eval_term(a))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Term::Rigid(f.clone(), args))
            }
        }
    }

    fn numeric(&self, t: &Term) -> Result<Rat, ModelError> {
        match self.eval_term(t)? {
            Term::Num(r) => Ok(r),
            other => Err(ModelError::NonNumeric(crate::parser::pretty::print_term(
                &other,
            ))),
        }
    }

    // -- objective formula evaluation ------------------------------------------

    /// Evaluate a ground objective static formula in a valuation.
    pub fn eval_ground(&self, vid: ValId, f: &Formula) -> Result<bool, ModelError> {
        match f {
            Formula::True => Ok(true),
            Formula::False => Ok(false),
            Formula::Atom(name, args) => {
                let args = args
                    .iter()
                    .map(|a| self.eval_term(a))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(match self.atom_id(name, &args) {
                    Some(id) => self.atom_true(vid, id),
                    // Instances outside the declared carriers are false.
                    None => false,
                })
            }
            Formula::Poss(t) => {
                let act = self.eval_term(t)?;
                let aid = self.intern_act(&act);
                self.poss_id(vid, aid)
            }
            Formula::Equal(a, b) => Ok(self.eval_term(a)? == self.eval_term(b)?),
            Formula::Cmp(op, a, b) => Ok(op.holds(&self.numeric(a)?, &self.numeric(b)?)),
            Formula::Not(g) => Ok(!self.eval_ground(vid, g)?),
            Formula::And(a, b) => Ok(self.eval_ground(vid, a)? && self.eval_ground(vid, b)?),
            Formula::Or(a, b) => Ok(self.eval_ground(vid, a)? || self.eval_ground(vid, b)?),
            Formula::Iff(a, b) => Ok(self.eval_ground(vid, a)? == self.eval_ground(vid, b)?),
            Formula::Forall(v, sort, g) => {
                for item in self.carrier(sort)? {
                    if !self.eval_ground(vid, &g.subst(v, &item))? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Formula::Exists(v, sort, g) => {
                for item in self.carrier(sort)? {
                    if self.eval_ground(vid, &g.subst(v, &item))? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Formula::Box(_) | Formula::After(..) | Formula::Belief(..) => {
                Err(ModelError::NotObjective)
            }
        }
    }

    pub fn carrier(&self, sort: &str) -> Result<Vec<Term>, ModelError> {
        self.table
            .sorts
            .get(sort)
            .cloned()
            .ok_or_else(|| ModelError::UnknownSort(sort.to_string()))
    }

    // -- per-(valuation, action) evaluators -----------------------------------

    /// The valuation after executing the action (successor-state axioms).
    pub fn progress(&self, vid: ValId, aid: ActId) -> Result<ValId, ModelError> {
        if let Some(&s) = self.caches.lock().unwrap().succ.get(&(vid, aid)) {
            return Ok(s);
        }
        let act = self.act_term(aid);
        let mut bits = vec![0u64; self.words];
        for (i, (fluent, args)) in self.atoms.iter().enumerate() {
            let ssa = &self.ssas[fluent];
            let mut body = ssa.body.clone();
            for (p, arg) in ssa.params.iter().zip(args) {
                body = body.subst(p, arg);
            }
            body = body.subst("a", &act);
            bit_set(&mut bits, i, self.eval_ground(vid, &body)?);
        }
        let s = self.intern_bits(bits);
        self.caches.lock().unwrap().succ.insert((vid, aid), s);
        Ok(s)
    }

    pub fn poss_id(&self, vid: ValId, aid: ActId) -> Result<bool, ModelError> {
        if let Some(&p) = self.caches.lock().unwrap().poss.get(&(vid, aid)) {
            return Ok(p);
        }
        let act = self.act_term(aid);
        let p = self.eval_ground(vid, &self.theory.poss.subst("a", &act))?;
        self.caches.lock().unwrap().poss.insert((vid, aid), p);
        Ok(p)
    }

    pub fn lik_id(&self, vid: ValId, aid: ActId) -> Result<Rat, ModelError> {
        if let Some(l) = self.caches.lock().unwrap().lik.get(&(vid, aid)) {
            return Ok(l.clone());
        }
        let act = self.act_term(aid);
        let l = self.compute_lik(vid, &act)?;
        self.caches.lock().unwrap().lik.insert((vid, aid), l.clone());
        Ok(l)
    }

    fn compute_lik(&self, vid: ValId, act: &Term) -> Result<Rat, ModelError> {
        let Term::Rigid(functor, args) = act else {
            return Err(ModelError::UnknownAction(
                crate::parser::pretty::print_term(act),
            ));
        };
        let case = self
            .theory
            .likelihood
            .iter()
            .find(|c| c.action == *functor)
            .ok_or_else(|| ModelError::UnknownAction(functor.clone()))?;
        if case.params.len() != args.len() {
            return Err(ModelError::UnknownAction(
                crate::parser::pretty::print_term(act),
            ));
        }
        let subst_params = |f: &Formula| {
            let mut f = f.clone();
            for (p, arg) in case.params.iter().zip(args) {
                f = f.subst(p, arg);
            }
            f
        };
        let subst_params_term = |t: &Term| {
            let mut t = t.clone();
            for (p, arg) in case.params.iter().zip(args) {
                t = t.subst(p, arg);
            }
            t
        };
        // Resolve the optional state binder: the unique satisfier of the
        // condition. No satisfier means likelihood 0; several mean the
        // axiom does not behave like a function.
        let binding: Option<(String, Term)> = match &case.binder {
            None => None,
            Some(b) => {
                let cond = subst_params(&b.cond);
                let mut found = Vec::new();
                for item in self.carrier(&b.sort)? {
                    if self.eval_ground(vid, &cond.subst(&b.var, &item))? {
                        found.push(item);
                    }
                }
                match found.len() {
                    0 => return Ok(Rat::zero()),
                    1 => Some((b.var.clone(), found.pop().unwrap())),
                    n => {
                        return Err(ModelError::AxiomNotFunctional {
                            action: crate::parser::pretty::print_term(act),
                            detail: format!("{n} satisfiers for binder `{}`", b.var),
                        })
                    }
                }
            }
        };
        match &case.expr {
            LikExpr::Const(r) => Ok(r.clone()),
            LikExpr::Theta(u, v, c, d) => {
                let mut u = subst_params_term(u);
                let mut v = subst_params_term(v);
                if let Some((var, val)) = &binding {
                    u = u.subst(var, val);
                    v = v.subst(var, val);
                }
                Ok(theta(&self.numeric(&u)?, &self.numeric(&v)?, c, d))
            }
        }
    }

    /// Truth of the oi axiom for a pair of ground actions in a valuation.
    pub fn oi_pair(&self, vid: ValId, aid: ActId, bid: ActId) -> Result<bool, ModelError> {
        let a = self.act_term(aid);
        let b = self.act_term(bid);
        self.eval_ground(vid, &self.theory.oi.subst("a", &a).subst("b", &b))
    }

    /// The declared ground actions oi-indistinguishable from `aid` in `vid`.
    pub fn oi_siblings(&self, vid: ValId, aid: ActId) -> Result<Vec<ActId>, ModelError> {
        if let Some(s) = self.caches.lock().unwrap().sibs.get(&(vid, aid)) {
            return Ok(s.clone());
        }
        let mut sibs = Vec::new();
        for &bid in &self.declared {
            if self.oi_pair(vid, aid, bid)? {
                sibs.push(bid);
            }
        }
        self.caches.lock().unwrap().sibs.insert((vid, aid), sibs.clone());
        Ok(sibs)
    }

    // -- trace-level API -------------------------------------------------------

    /// Fold a trace from a world's initial valuation, requiring each action
    /// to be possible at its step.
    pub fn val_after(&self, w: WorldId, z: &[Term]) -> Result<ValId, ModelError> {
        let mut vid = w;
        for (step, a) in z.iter().enumerate() {
            let act = self.eval_term(a)?;
            let aid = self.intern_act(&act);
            if !self.poss_id(vid, aid)? {
                return Err(ModelError::ImpossibleAction { step });
            }
            vid = self.progress(vid, aid)?;
        }
        Ok(vid)
    }

    pub fn holds_atom(
        &self,
        w: WorldId,
        z: &[Term],
        fluent: &str,
        args: &[Term],
    ) -> Result<bool, ModelError> {
        let vid = self.val_after(w, z)?;
        self.eval_ground(vid, &Formula::Atom(fluent.to_string(), args.to_vec()))
    }

    pub fn poss(&self, w: WorldId, z: &[Term], a: &Term) -> Result<bool, ModelError> {
        let vid = self.val_after(w, z)?;
        let aid = self.intern_act(&self.eval_term(a)?);
        self.poss_id(vid, aid)
    }

    pub fn likelihood(&self, w: WorldId, z: &[Term], a: &Term) -> Result<Rat, ModelError> {
        let vid = self.val_after(w, z)?;
        let aid = self.intern_act(&self.eval_term(a)?);
        self.lik_id(vid, aid)
    }

    pub fn oi_actions(
        &self,
        w: WorldId,
        z: &[Term],
        a: &Term,
        b: &Term,
    ) -> Result<bool, ModelError> {
        let vid = self.val_after(w, z)?;
        let aid = self.intern_act(&self.eval_term(a)?);
        let bid = self.intern_act(&self.eval_term(b)?);
        self.oi_pair(vid, aid, bid)
    }

    /// Inductive executability: every action possible at its step.
    pub fn exec(&self, w: WorldId, z: &[Term]) -> Result<bool, ModelError> {
        match self.val_after(w, z) {
            Ok(_) => Ok(true),
            Err(ModelError::ImpossibleAction { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// l*: the product of per-step likelihoods along the trace.
    pub fn seq_likelihood(&self, w: WorldId, z: &[Term]) -> Result<Rat, ModelError> {
        let mut vid = w;
        let mut l = Rat::one();
        for (step, a) in z.iter().enumerate() {
            let act = self.eval_term(a)?;
            let aid = self.intern_act(&act);
            if !self.poss_id(vid, aid)? {
                return Err(ModelError::ImpossibleAction { step });
            }
            l *= self.lik_id(vid, aid)?;
            vid = self.progress(vid, aid)?;
        }
        Ok(l)
    }

    /// The weighted initial worlds (deterministic order).
    pub fn initial_worlds(&self) -> &[(WorldId, Rat)] {
        &self.init_worlds
    }

    // -- initial-world construction ---------------------------------------------

    fn build_initial_worlds(&self) -> Result<Vec<(WorldId, Rat)>, ModelError> {
        let explicit: Vec<_> = self
            .theory
            .init
            .iter()
            .filter_map(|c| match c {
                InitClause::World { atoms, weight } => Some((atoms.clone(), weight.clone())),
                InitClause::Constraint(_) => None,
            })
            .collect();
        let constraints: Vec<Formula> = self
            .theory
            .init
            .iter()
            .filter_map(|c| match c {
                InitClause::Constraint(f) => Some(f.clone()),
                InitClause::World { .. } => None,
            })
            .collect();
        for c in &constraints {
            let cl = c.classify();
            if !(cl.is_static && cl.is_objective) {
                return Err(ModelError::NonObjectiveConstraint);
            }
        }

        let mut candidates: Vec<(ValId, Rat)> = Vec::new();
        if !explicit.is_empty() {
            for (atoms, weight) in explicit {
                let mut bits = vec![0u64; self.words];
                for (name, args) in &atoms {
                    let args = args
                        .iter()
                        .map(|a| self.eval_term(a))
                        .collect::<Result<Vec<_>, _>>()?;
                    let id = self.atom_id(name, &args).ok_or_else(|| {
                        ModelError::UnknownAtom(format!(
                            "{}({})",
                            name,
                            args.iter()
                                .map(crate::parser::pretty::print_term)
                                .collect::<Vec<_>>()
                                .join(", ")
                        ))
                    })?;
                    bit_set(&mut bits, id, true);
                }
                candidates.push((self.intern_bits(bits), weight));
            }
        } else {
            // Enumerate valuations: functional fluents pick exactly one
            // instance; remaining atoms range over all subsets.
            let mut groups: Vec<Vec<AtomId>> = Vec::new();
            let mut free: Vec<AtomId> = Vec::new();
            for f in &self.theory.fluents {
                let ids: Vec<AtomId> = (0..self.atoms.len())
                    .filter(|&i| self.atoms[i].0 == f.name)
                    .collect();
                if f.functional {
                    groups.push(ids);
                } else {
                    free.extend(ids);
                }
            }
            if free.len() > 20 {
                return Err(ModelError::TooManyWorlds(free.len()));
            }
            let mut all: Vec<Bits> = vec![vec![0u64; self.words]];
            for g in &groups {
                let mut next = Vec::new();
                for bits in &all {
                    for &id in g {
                        let mut b = bits.clone();
                        bit_set(&mut b, id, true);
                        next.push(b);
                    }
                }
                all = next;
            }
            let mut with_free = Vec::new();
            for bits in all {
                for mask in 0..(1usize << free.len()) {
                    let mut b = bits.clone();
                    for (j, &id) in free.iter().enumerate() {
                        if mask >> j & 1 == 1 {
                            bit_set(&mut b, id, true);
                        }
                    }
                    with_free.push(b);
                }
            }
            for bits in with_free {
                candidates.push((self.intern_bits(bits), Rat::one()));
            }
        }

        let mut worlds = Vec::new();
        'outer: for (vid, weight) in candidates {
            for c in &constraints {
                if !self.eval_ground(vid, c)? {
                    continue 'outer;
                }
            }
            worlds.push((vid, weight));
        }
        if worlds.is_empty() {
            return Err(ModelError::NoModel);
        }
        // Uniform weights for enumerated worlds.
        if !self
            .theory
            .init
            .iter()
            .any(|c| matches!(c, InitClause::World { .. }))
        {
            let n = rat_int(worlds.len() as i64);
            for (_, w) in &mut worlds {
                *w = Rat::one() / n.clone();
            }
        }
        Ok(worlds)
    }

    fn validate_functional(&self) -> Result<(), ModelError> {
        for f in &self.theory.fluents {
            if !f.functional {
                continue;
            }
            let ids: Vec<AtomId> = (0..self.atoms.len())
                .filter(|&i| self.atoms[i].0 == f.name)
                .collect();
            for (w, _) in &self.init_worlds {
                let count = ids.iter().filter(|&&i| self.atom_true(*w, i)).count();
                if count != 1 {
                    return Err(ModelError::FunctionalViolation(f.name.clone()));
                }
            }
        }
        Ok(())
    }

    fn validate_oi_equivalence(&self) -> Result<(), ModelError> {
        let n = self.declared.len();
        for (w, _) in &self.init_worlds {
            let mut m = vec![vec![false; n]; n];
            for i in 0..n {
                for j in 0..n {
                    m[i][j] = self.oi_pair(*w, self.declared[i], self.declared[j])?;
                }
            }
            for i in 0..n {
                if !m[i][i] {
                    return Err(ModelError::OiNotEquivalence(format!(
                        "not reflexive at `{}`",
                        crate::parser::pretty::print_term(&self.act_term(self.declared[i]))
                    )));
                }
                for j in 0..n {
                    if m[i][j] != m[j][i] {
                        return Err(ModelError::OiNotEquivalence("not symmetric".into()));
                    }
                    if m[i][j] {
                        for k in 0..n {
                            if m[j][k] && !m[i][k] {
                                return Err(ModelError::OiNotEquivalence("not transitive".into()));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn cartesian(carriers: &[&Vec<Term>]) -> Vec<Vec<Term>> {
    let mut out = vec![Vec::new()];
    for c in carriers {
        let mut next = Vec::with_capacity(out.len() * c.len());
        for combo in &out {
            for item in *c {
                let mut v = combo.clone();
                v.push(item.clone());
                next.push(v);
            }
        }
        out = next;
    }
    out
}
