//! Abstract syntax for terms, formulas, programs and traces, together with
//! substitution, syntactic-sugar expansion and formula classification.

use num_rational::BigRational;

/// Exact rational number used everywhere in semantic values.
pub type Rat = BigRational;

/// Build an exact rational from an integer pair.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(num.into(), den.into())
}

/// Build an exact rational from an integer.
pub fn rat_int(num: i64) -> Rat {
    Rat::from_integer(num.into())
}

/// A term: a variable, a rigid function application (constants are nullary
/// applications), or an exact rational constant.
///
/// The interpreted functors `+` and `-` are represented as binary rigid
/// applications and evaluated during grounding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Rigid(String, Vec<Term>),
    Num(Rat),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn sym(name: impl Into<String>) -> Term {
        Term::Rigid(name.into(), Vec::new())
    }

    pub fn app(name: impl Into<String>, args: Vec<Term>) -> Term {
        Term::Rigid(name.into(), args)
    }

    pub fn int(n: i64) -> Term {
        Term::Num(rat_int(n))
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Rigid(_, args) => args.iter().all(Term::is_ground),
            Term::Num(_) => true,
        }
    }

    pub fn subst(&self, var: &str, value: &Term) -> Term {
        match self {
            Term::Var(v) if v == var => value.clone(),
            Term::Var(_) | Term::Num(_) => self.clone(),
            Term::Rigid(f, args) => {
                Term::Rigid(f.clone(), args.iter().map(|a| a.subst(var, value)).collect())
            }
        }
    }
}

/// Comparison operators over numeric terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Le,
    Lt,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn holds(&self, a: &Rat, b: &Rat) -> bool {
        match self {
            CmpOp::Le => a <= b,
            CmpOp::Lt => a < b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

/// Formulas. `K f` is normalized to `Belief(f, 1)` at construction; the
/// pretty-printer renders degree-1 beliefs back as `K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    False,
    Atom(String, Vec<Term>),
    /// `Poss(a)` as an atom usable inside formulas (e.g. precondition axioms).
    Poss(Term),
    Equal(Term, Term),
    Cmp(CmpOp, Term, Term),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    /// Logical equivalence, written `==` in the surface syntax.
    Iff(Box<Formula>, Box<Formula>),
    Forall(String, String, Box<Formula>),
    Exists(String, String, Box<Formula>),
    /// `box f`: f after every executable trace (up to an explicit horizon).
    Box(Box<Formula>),
    /// `[p] f`: f after every trace of program p.
    After(Box<Program>, Box<Formula>),
    /// `B(f : q)`: belief in f to exactly degree q.
    Belief(Box<Formula>, Rat),
}

impl Formula {
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn knows(f: Formula) -> Formula {
        Formula::Belief(Box::new(f), rat_int(1))
    }

    pub fn believe(f: Formula, degree: Rat) -> Formula {
        Formula::Belief(Box::new(f), degree)
    }

    pub fn exists(var: impl Into<String>, sort: impl Into<String>, f: Formula) -> Formula {
        Formula::Exists(var.into(), sort.into(), Box::new(f))
    }

    pub fn forall(var: impl Into<String>, sort: impl Into<String>, f: Formula) -> Formula {
        Formula::Forall(var.into(), sort.into(), Box::new(f))
    }

    pub fn subst(&self, var: &str, value: &Term) -> Formula {
        use std::boxed::Box as B;
        use Formula::*;
        match self {
            True => True,
            False => False,
            Atom(p, args) => Atom(p.clone(), args.iter().map(|a| a.subst(var, value)).collect()),
            Poss(t) => Poss(t.subst(var, value)),
            Equal(a, b) => Equal(a.subst(var, value), b.subst(var, value)),
            Cmp(op, a, b) => Cmp(*op, a.subst(var, value), b.subst(var, value)),
            Not(f) => Not(B::new(f.subst(var, value))),
            And(a, b) => And(B::new(a.subst(var, value)), B::new(b.subst(var, value))),
            Or(a, b) => Or(B::new(a.subst(var, value)), B::new(b.subst(var, value))),
            Iff(a, b) => Iff(B::new(a.subst(var, value)), B::new(b.subst(var, value))),
            Forall(v, s, f) if v == var => Forall(v.clone(), s.clone(), f.clone()),
            Forall(v, s, f) => Forall(v.clone(), s.clone(), B::new(f.subst(var, value))),
            Exists(v, s, f) if v == var => Exists(v.clone(), s.clone(), f.clone()),
            Exists(v, s, f) => Exists(v.clone(), s.clone(), B::new(f.subst(var, value))),
            Box(f) => Box(B::new(f.subst(var, value))),
            After(p, f) => After(B::new(p.subst(var, value)), B::new(f.subst(var, value))),
            Belief(f, r) => Belief(B::new(f.subst(var, value)), r.clone()),
        }
    }

    pub fn classify(&self) -> Classification {
        let mut c = Classification {
            is_static: true,
            is_fluent: true,
            is_bounded: true,
            is_objective: true,
        };
        self.classify_into(&mut c);
        c
    }

    fn classify_into(&self, c: &mut Classification) {
        use Formula::*;
        match self {
            True | False | Atom(..) | Equal(..) | Cmp(..) => {}
            Poss(_) => c.is_fluent = false,
            Not(f) => f.classify_into(c),
            And(a, b) | Or(a, b) | Iff(a, b) => {
                a.classify_into(c);
                b.classify_into(c);
            }
            Forall(_, _, f) | Exists(_, _, f) => f.classify_into(c),
            Box(f) => {
                c.is_static = false;
                c.is_fluent = false;
                c.is_bounded = false;
                f.classify_into(c);
            }
            After(_, f) => {
                c.is_static = false;
                c.is_fluent = false;
                f.classify_into(c);
            }
            Belief(f, _) => {
                c.is_fluent = false;
                c.is_objective = false;
                f.classify_into(c);
            }
        }
    }
}

/// Syntactic classes of a formula. `general` means "not static".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    /// No `box` and no `[p]` operators.
    pub is_static: bool,
    /// Static and mentions neither `Poss` nor belief.
    pub is_fluent: bool,
    /// No `box` operator (`[p]` allowed).
    pub is_bounded: bool,
    /// No belief operator.
    pub is_objective: bool,
}

impl Classification {
    pub fn is_general(&self) -> bool {
        !self.is_static
    }

    /// Human-readable label set, most specific classes included.
    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.is_fluent {
            out.push("fluent");
        }
        if self.is_static {
            out.push("static");
        } else {
            out.push("general");
        }
        if self.is_bounded {
            out.push("bounded");
        }
        if self.is_objective {
            out.push("objective");
        }
        out
    }
}

/// Golog programs. The first six constructors are the core language; `If`,
/// `While` and `Nil` are surface sugar removed by [`expand_sugar`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Program {
    Act(Term),
    Test(Formula),
    Seq(Box<Program>, Box<Program>),
    Choice(Box<Program>, Box<Program>),
    Pick(String, String, Box<Program>),
    Star(Box<Program>),
    /// `if c1 then p1 elif c2 then p2 ... [else q] fi`
    If(Vec<(Formula, Program)>, Option<Box<Program>>),
    While(Formula, Box<Program>),
    Nil,
}

impl Program {
    pub fn seq(a: Program, b: Program) -> Program {
        Program::Seq(Box::new(a), Box::new(b))
    }

    pub fn choice(a: Program, b: Program) -> Program {
        Program::Choice(Box::new(a), Box::new(b))
    }

    pub fn star(p: Program) -> Program {
        Program::Star(Box::new(p))
    }

    pub fn pick(var: impl Into<String>, sort: impl Into<String>, p: Program) -> Program {
        Program::Pick(var.into(), sort.into(), Box::new(p))
    }

    /// True if the program uses only the six core constructors.
    pub fn is_core(&self) -> bool {
        match self {
            Program::Act(_) | Program::Test(_) => true,
            Program::Seq(a, b) | Program::Choice(a, b) => a.is_core() && b.is_core(),
            Program::Pick(_, _, p) | Program::Star(p) => p.is_core(),
            Program::If(..) | Program::While(..) | Program::Nil => false,
        }
    }

    pub fn subst(&self, var: &str, value: &Term) -> Program {
        use Program::*;
        match self {
            Act(t) => Act(t.subst(var, value)),
            Test(f) => Test(f.subst(var, value)),
            Seq(a, b) => Program::seq(a.subst(var, value), b.subst(var, value)),
            Choice(a, b) => Program::choice(a.subst(var, value), b.subst(var, value)),
            Pick(v, s, p) if v == var => Pick(v.clone(), s.clone(), p.clone()),
            Pick(v, s, p) => Pick(v.clone(), s.clone(), Box::new(p.subst(var, value))),
            Star(p) => Program::star(p.subst(var, value)),
            If(arms, els) => If(
                arms.iter()
                    .map(|(c, p)| (c.subst(var, value), p.subst(var, value)))
                    .collect(),
                els.as_ref().map(|p| Box::new(p.subst(var, value))),
            ),
            While(c, p) => While(c.subst(var, value), Box::new(p.subst(var, value))),
            Nil => Nil,
        }
    }
}

/// Rewrite `if`/`while`/`nil` into the six core constructors:
///
/// * `nil` becomes `TRUE?`;
/// * `if c then p else q fi` becomes `(c?; p) | (!c?; q)` (elif chains nest
///   the negations of all earlier conditions; without an else branch the
///   program has no transition when every guard is false);
/// * `while c do p done` becomes `(c?; p)*; !c?`.
pub fn expand_sugar(p: &Program) -> Program {
    use Program::*;
    match p {
        Act(_) | Test(_) => p.clone(),
        Seq(a, b) => Program::seq(expand_sugar(a), expand_sugar(b)),
        Choice(a, b) => Program::choice(expand_sugar(a), expand_sugar(b)),
        Pick(v, s, q) => Pick(v.clone(), s.clone(), Box::new(expand_sugar(q))),
        Star(q) => Program::star(expand_sugar(q)),
        Nil => Test(Formula::True),
        While(c, body) => Program::seq(
            Program::star(Program::seq(Test(c.clone()), expand_sugar(body))),
            Test(Formula::not(c.clone())),
        ),
        If(arms, els) => {
            // (c1?; p1) | (!c1 & c2?; p2) | ... — and, only with an explicit
            // else, a final (!c1 & ... & !cn?; else) branch. Without one the
            // program has no transition when every guard is false.
            let mut negated: Option<Formula> = None;
            let mut branches: Vec<Program> = Vec::new();
            for (c, body) in arms {
                let guard = match &negated {
                    None => c.clone(),
                    Some(n) => Formula::and(n.clone(), c.clone()),
                };
                branches.push(Program::seq(Test(guard), expand_sugar(body)));
                let nc = Formula::not(c.clone());
                negated = Some(match negated {
                    None => nc,
                    Some(n) => Formula::and(n, nc),
                });
            }
            if let Some(q) = els {
                let fallthrough_guard = negated.expect("if-chain has at least one arm");
                branches.push(Program::seq(Test(fallthrough_guard), expand_sugar(q)));
            }
            branches
                .into_iter()
                .reduce(Program::choice)
                .expect("nonempty branch list")
        }
    }
}

/// A finite sequence of ground action terms.
pub type Trace = Vec<Term>;
