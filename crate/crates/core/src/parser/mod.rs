//! Parser for the `.dsg` theory/mapping DSL plus inline formulas and
//! programs, and the canonical pretty-printer.

mod lexer;
pub mod pretty;

use std::collections::BTreeMap;

use crate::lang::{rat_int, CmpOp, Formula, Program, Rat, Term};
use lexer::{lex, Spanned, Tok};

pub use lexer::LexError;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
}

// ---------------------------------------------------------------------------
// Theory file AST
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortDecl {
    pub name: String,
    /// Ground carrier elements (rationals or symbolic constants).
    pub carrier: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FluentDecl {
    pub name: String,
    pub arg_sorts: Vec<String>,
    /// Functional fluents must hold for exactly one argument tuple in every
    /// initial world (validated at load time).
    pub functional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionArg {
    pub sort: String,
    /// Noise (outcome) arguments are chosen by nature, not the agent.
    pub noise: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionDecl {
    pub name: String,
    pub args: Vec<ActionArg>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsaDecl {
    pub fluent: String,
    pub params: Vec<String>,
    /// γ_F over the params and the action variable `a`.
    pub body: Formula,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LikExpr {
    Const(Rat),
    /// `theta(u, v, c, d)`: c if u = v, d if |u - v| = 1, 0 otherwise.
    Theta(Term, Term, Rat, Rat),
}

/// Optional state binder of a likelihood case: the unique `var` of `sort`
/// satisfying `cond` in the current state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LikBinder {
    pub var: String,
    pub sort: String,
    pub cond: Formula,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LikelihoodCase {
    pub action: String,
    pub params: Vec<String>,
    pub binder: Option<LikBinder>,
    pub expr: LikExpr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitClause {
    /// An explicit world: the listed atoms are true, all others false.
    World {
        atoms: Vec<(String, Vec<Term>)>,
        weight: Rat,
    },
    /// Worlds are all valuations satisfying the constraint, uniform weights.
    Constraint(Formula),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TheoryFile {
    pub sorts: Vec<SortDecl>,
    pub fluents: Vec<FluentDecl>,
    pub actions: Vec<ActionDecl>,
    /// Precondition axiom over the free action variable `a`.
    pub poss: Formula,
    pub ssas: Vec<SsaDecl>,
    pub likelihood: Vec<LikelihoodCase>,
    /// Observational-indistinguishability axiom over free variables `a`, `b`.
    pub oi: Formula,
    pub init: Vec<InitClause>,
}

/// A refinement-mapping file: templates for high-level fluents and actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingFile {
    pub fluents: Vec<(String, Vec<String>, Formula)>,
    pub actions: Vec<(String, Vec<String>, Program)>,
}

// ---------------------------------------------------------------------------
// Symbol table
// ---------------------------------------------------------------------------

/// Pseudo-sort given to the reserved action variables of axioms.
pub const ACTION_SORT: &str = "__action";

#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    pub sorts: BTreeMap<String, Vec<Term>>,
    /// Symbolic carrier constant -> its sort.
    pub consts: BTreeMap<String, String>,
    pub fluents: BTreeMap<String, FluentDecl>,
    pub actions: BTreeMap<String, ActionDecl>,
}

impl SymbolTable {
    pub fn from_theory(th: &TheoryFile) -> SymbolTable {
        let mut t = SymbolTable::default();
        for s in &th.sorts {
            t.add_sort(s);
        }
        for f in &th.fluents {
            t.fluents.insert(f.name.clone(), f.clone());
        }
        for a in &th.actions {
            t.actions.insert(a.name.clone(), a.clone());
        }
        t
    }

    fn add_sort(&mut self, s: &SortDecl) {
        self.sorts.insert(s.name.clone(), s.carrier.clone());
        for item in &s.carrier {
            if let Term::Rigid(c, args) = item {
                if args.is_empty() {
                    self.consts.insert(c.clone(), s.name.clone());
                }
            }
        }
    }

    /// Table for parsing mapping files: low-level fluents/actions with the
    /// sorts and constants of both theories.
    pub fn merged(low: &SymbolTable, high: &SymbolTable) -> SymbolTable {
        let mut t = low.clone();
        for (name, carrier) in &high.sorts {
            t.sorts.entry(name.clone()).or_insert_with(|| carrier.clone());
        }
        for (name, sort) in &high.consts {
            t.consts.entry(name.clone()).or_insert_with(|| sort.clone());
        }
        t
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    table: &'a SymbolTable,
    /// Bound variables, innermost last: (name, sort).
    scope: Vec<(String, String)>,
}

type PResult<T> = Result<T, ParseError>;

const KEYWORDS: &[&str] = &[
    "true", "false", "exists", "forall", "box", "pick", "if", "then", "elif", "else", "fi",
    "while", "do", "done", "nil", "theta", "case", "where", "satisfies", "sorts", "fluents",
    "actions", "poss", "ssa", "likelihood", "oi", "init", "world", "weight", "constraint",
    "mapping", "fluent", "action", "functional", "noise", "K", "B", "Poss",
];

impl<'a> Parser<'a> {
    fn new(text: &str, table: &'a SymbolTable) -> PResult<Parser<'a>> {
        Ok(Parser {
            toks: lex(text)?,
            pos: 0,
            table,
            scope: Vec::new(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let s = &self.toks[self.pos];
        Err(ParseError::Syntax {
            line: s.line,
            col: s.col,
            msg: msg.into(),
        })
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.err(format!("expected {tok}, found {}", self.peek()))
        }
    }

    /// True if the next token is the given keyword identifier.
    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(format!("expected `{kw}`, found {}", self.peek()))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {other}")),
        }
    }

    fn name(&mut self) -> PResult<String> {
        let s = self.ident()?;
        if KEYWORDS.contains(&s.as_str()) {
            return self.err(format!("`{s}` is a reserved word"));
        }
        Ok(s)
    }

    fn lookup_var(&self, name: &str) -> Option<&(String, String)> {
        self.scope.iter().rev().find(|(v, _)| v == name)
    }

    // -- terms -------------------------------------------------------------

    fn rational(&mut self) -> PResult<Rat> {
        let neg = self.eat(&Tok::Minus);
        let num = match self.bump() {
            Tok::Int(s) => s.parse::<i64>().map_err(|_| ()).ok(),
            _ => None,
        };
        let Some(num) = num else {
            return self.err("expected a rational literal");
        };
        let den = if self.eat(&Tok::Slash) {
            match self.bump() {
                Tok::Int(s) => match s.parse::<i64>() {
                    Ok(d) if d != 0 => d,
                    _ => return self.err("invalid denominator"),
                },
                _ => return self.err("expected denominator"),
            }
        } else {
            1
        };
        let mut r = Rat::new(num.into(), den.into());
        if neg {
            r = -r;
        }
        Ok(r)
    }

    fn term(&mut self) -> PResult<Term> {
        let mut t = self.term_primary()?;
        loop {
            if self.eat(&Tok::Plus) {
                let rhs = self.term_primary()?;
                t = Term::app("+", vec![t, rhs]);
            } else if matches!(self.peek(), Tok::Minus) && !matches!(self.peek2(), Tok::Gt) {
                self.bump();
                let rhs = self.term_primary()?;
                t = Term::app("-", vec![t, rhs]);
            } else {
                break;
            }
        }
        Ok(t)
    }

    fn term_primary(&mut self) -> PResult<Term> {
        match self.peek().clone() {
            Tok::Int(_) | Tok::Minus => {
                let r = self.rational()?;
                Ok(Term::Num(r))
            }
            Tok::LParen => {
                self.bump();
                let t = self.term()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            Tok::Ident(name) => {
                if KEYWORDS.contains(&name.as_str()) {
                    return self.err(format!("`{name}` is a reserved word"));
                }
                self.bump();
                if self.eat(&Tok::LParen) {
                    // Function application: must be a declared action functor.
                    let Some(decl) = self.table.actions.get(&name).cloned() else {
                        return self.err(format!("`{name}` is not a declared action"));
                    };
                    let mut args = Vec::new();
                    if !self.eat(&Tok::RParen) {
                        loop {
                            args.push(self.term()?);
                            if self.eat(&Tok::RParen) {
                                break;
                            }
                            self.expect(Tok::Comma)?;
                        }
                    }
                    if args.len() != decl.args.len() {
                        return self.err(format!(
                            "action `{name}` expects {} arguments, got {}",
                            decl.args.len(),
                            args.len()
                        ));
                    }
                    Ok(Term::Rigid(name, args))
                } else if self.lookup_var(&name).is_some() {
                    Ok(Term::Var(name))
                } else if self.table.consts.contains_key(&name) {
                    Ok(Term::sym(name))
                } else {
                    self.err(format!("unbound name `{name}`"))
                }
            }
            other => self.err(format!("expected a term, found {other}")),
        }
    }

    // -- formulas ------------------------------------------------------------

    fn formula(&mut self) -> PResult<Formula> {
        let mut f = self.formula_or()?;
        while self.eat(&Tok::EqEq) {
            let rhs = self.formula_or()?;
            f = Formula::Iff(Box::new(f), Box::new(rhs));
        }
        Ok(f)
    }

    fn formula_or(&mut self) -> PResult<Formula> {
        let mut f = self.formula_and()?;
        while self.eat(&Tok::Bar) {
            let rhs = self.formula_and()?;
            f = Formula::or(f, rhs);
        }
        Ok(f)
    }

    fn formula_and(&mut self) -> PResult<Formula> {
        let mut f = self.formula_unary()?;
        while self.eat(&Tok::Amp) {
            let rhs = self.formula_unary()?;
            f = Formula::and(f, rhs);
        }
        Ok(f)
    }

    fn quantified(&mut self, existential: bool) -> PResult<Formula> {
        let var = self.name()?;
        let sort = if self.eat(&Tok::Colon) {
            let s = self.ident()?;
            if !self.table.sorts.contains_key(&s) {
                return self.err(format!("unknown sort `{s}`"));
            }
            Some(s)
        } else {
            None
        };
        self.expect(Tok::LParen)?;
        // Parse the body with a placeholder sort, then infer if needed.
        self.scope.push((var.clone(), sort.clone().unwrap_or_default()));
        let body = self.formula();
        self.scope.pop();
        let body = body?;
        let sort = match sort {
            Some(s) => s,
            None => match infer_sort(&body, &var, self.table) {
                Ok(s) => s,
                Err(msg) => return self.err(format!("variable `{var}`: {msg}")),
            },
        };
        self.expect(Tok::RParen)?;
        Ok(if existential {
            Formula::Exists(var, sort, Box::new(body))
        } else {
            Formula::Forall(var, sort, Box::new(body))
        })
    }

    fn formula_unary(&mut self) -> PResult<Formula> {
        if self.eat(&Tok::Bang) {
            return Ok(Formula::not(self.formula_unary()?));
        }
        if self.eat_kw("box") {
            return Ok(Formula::Box(Box::new(self.formula_unary()?)));
        }
        if self.eat(&Tok::LBracket) {
            let p = self.program()?;
            self.expect(Tok::RBracket)?;
            let f = self.formula_unary()?;
            return Ok(Formula::After(Box::new(p), Box::new(f)));
        }
        if self.eat_kw("exists") {
            return self.quantified(true);
        }
        if self.eat_kw("forall") {
            return self.quantified(false);
        }
        self.formula_primary()
    }

    fn formula_primary(&mut self) -> PResult<Formula> {
        if self.eat_kw("true") {
            return Ok(Formula::True);
        }
        if self.eat_kw("false") {
            return Ok(Formula::False);
        }
        if self.eat_kw("K") {
            self.expect(Tok::LParen)?;
            let f = self.formula()?;
            self.expect(Tok::RParen)?;
            return Ok(Formula::knows(f));
        }
        if self.eat_kw("B") {
            self.expect(Tok::LParen)?;
            let f = self.formula()?;
            self.expect(Tok::Colon)?;
            let r = self.rational()?;
            self.expect(Tok::RParen)?;
            return Ok(Formula::believe(f, r));
        }
        if self.eat_kw("Poss") {
            self.expect(Tok::LParen)?;
            let t = self.term()?;
            self.expect(Tok::RParen)?;
            return Ok(Formula::Poss(t));
        }
        // Fluent atom.
        if let Tok::Ident(name) = self.peek().clone() {
            if self.table.fluents.contains_key(&name) && *self.peek2() == Tok::LParen {
                self.bump();
                self.bump();
                let decl = &self.table.fluents[&name];
                let mut args = Vec::new();
                if !self.eat(&Tok::RParen) {
                    loop {
                        args.push(self.term()?);
                        if self.eat(&Tok::RParen) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                if args.len() != decl.arg_sorts.len() {
                    return self.err(format!(
                        "fluent `{name}` expects {} arguments, got {}",
                        decl.arg_sorts.len(),
                        args.len()
                    ));
                }
                return Ok(Formula::Atom(name, args));
            }
        }
        // Comparison / equality between terms (may start with `(`).
        let save = self.pos;
        if let Ok(lhs) = self.term() {
            let op = match self.peek() {
                Tok::Eq => None,
                Tok::Le => Some(CmpOp::Le),
                Tok::Lt => Some(CmpOp::Lt),
                Tok::Ge => Some(CmpOp::Ge),
                Tok::Gt => Some(CmpOp::Gt),
                _ => {
                    self.pos = save;
                    return self.formula_paren();
                }
            };
            self.bump();
            let rhs = self.term()?;
            return Ok(match op {
                None => Formula::Equal(lhs, rhs),
                Some(op) => Formula::Cmp(op, lhs, rhs),
            });
        }
        self.pos = save;
        self.formula_paren()
    }

    fn formula_paren(&mut self) -> PResult<Formula> {
        if self.eat(&Tok::LParen) {
            let f = self.formula()?;
            self.expect(Tok::RParen)?;
            Ok(f)
        } else {
            self.err(format!("expected a formula, found {}", self.peek()))
        }
    }

    // -- programs ------------------------------------------------------------

    fn program(&mut self) -> PResult<Program> {
        let mut p = self.program_seq()?;
        while self.eat(&Tok::Bar) {
            let rhs = self.program_seq()?;
            p = Program::choice(p, rhs);
        }
        Ok(p)
    }

    fn program_seq(&mut self) -> PResult<Program> {
        let mut p = self.program_star()?;
        while self.eat(&Tok::Semi) {
            let rhs = self.program_star()?;
            p = Program::seq(p, rhs);
        }
        Ok(p)
    }

    fn program_star(&mut self) -> PResult<Program> {
        let mut p = self.program_primary()?;
        while self.eat(&Tok::Star) {
            p = Program::star(p);
        }
        Ok(p)
    }

    fn program_primary(&mut self) -> PResult<Program> {
        if self.eat_kw("nil") {
            return Ok(Program::Nil);
        }
        if self.eat_kw("pick") {
            let var = self.name()?;
            let sort = if self.eat(&Tok::Colon) {
                let s = self.ident()?;
                if !self.table.sorts.contains_key(&s) {
                    return self.err(format!("unknown sort `{s}`"));
                }
                Some(s)
            } else {
                None
            };
            self.expect(Tok::LParen)?;
            self.scope.push((var.clone(), sort.clone().unwrap_or_default()));
            let body = self.program();
            self.scope.pop();
            let body = body?;
            let sort = match sort {
                Some(s) => s,
                None => match infer_sort_program(&body, &var, self.table) {
                    Ok(s) => s,
                    Err(msg) => return self.err(format!("variable `{var}`: {msg}")),
                },
            };
            self.expect(Tok::RParen)?;
            return Ok(Program::Pick(var, sort, Box::new(body)));
        }
        if self.eat_kw("if") {
            let mut arms = Vec::new();
            let c = self.formula()?;
            self.expect_kw("then")?;
            let p = self.program()?;
            arms.push((c, p));
            loop {
                if self.eat_kw("elif") {
                    let c = self.formula()?;
                    self.expect_kw("then")?;
                    let p = self.program()?;
                    arms.push((c, p));
                } else {
                    break;
                }
            }
            let els = if self.eat_kw("else") {
                Some(Box::new(self.program()?))
            } else {
                None
            };
            self.expect_kw("fi")?;
            for (c, _) in &arms {
                if !c.classify().is_static {
                    return self.err("if condition must be a static formula");
                }
            }
            return Ok(Program::If(arms, els));
        }
        if self.eat_kw("while") {
            let c = self.formula()?;
            if !c.classify().is_static {
                return self.err("while condition must be a static formula");
            }
            self.expect_kw("do")?;
            let p = self.program()?;
            self.expect_kw("done")?;
            return Ok(Program::While(c, Box::new(p)));
        }
        // Test: a static formula followed by `?`.
        let save = self.pos;
        if let Ok(f) = self.formula() {
            if self.eat(&Tok::Question) {
                if !f.classify().is_static {
                    return self.err("test formula must be static");
                }
                return Ok(Program::Test(f));
            }
        }
        self.pos = save;
        // Action invocation, possibly with trailing noise arguments omitted.
        if let Tok::Ident(name) = self.peek().clone() {
            if self.table.actions.contains_key(&name) && *self.peek2() == Tok::LParen {
                self.bump();
                self.bump();
                let decl = self.table.actions[&name].clone();
                let mut args = Vec::new();
                if !self.eat(&Tok::RParen) {
                    loop {
                        args.push(self.term()?);
                        if self.eat(&Tok::RParen) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                if args.len() == decl.args.len() {
                    return Ok(Program::Act(Term::Rigid(name, args)));
                }
                // Sugar: omitted trailing noise arguments become picks.
                let missing = &decl.args[args.len()..];
                if !missing.is_empty() && missing.iter().all(|a| a.noise) {
                    let mut vars = Vec::new();
                    for (i, arg) in missing.iter().enumerate() {
                        let v = format!("_n{}", args.len() + i + 1);
                        args.push(Term::var(&v));
                        vars.push((v, arg.sort.clone()));
                    }
                    let mut p = Program::Act(Term::Rigid(name, args));
                    for (v, s) in vars.into_iter().rev() {
                        p = Program::Pick(v, s, Box::new(p));
                    }
                    return Ok(p);
                }
                return self.err(format!(
                    "action `{name}` expects {} arguments, got {}",
                    decl.args.len(),
                    args.len()
                ));
            }
        }
        if self.eat(&Tok::LParen) {
            let p = self.program()?;
            self.expect(Tok::RParen)?;
            return Ok(p);
        }
        self.err(format!("expected a program, found {}", self.peek()))
    }

    // -- theory files ----------------------------------------------------------

    fn carrier_items(&mut self) -> PResult<Vec<Term>> {
        self.expect(Tok::LBrace)?;
        let mut items = Vec::new();
        if self.eat(&Tok::RBrace) {
            return Ok(items);
        }
        loop {
            match self.peek().clone() {
                Tok::Int(_) | Tok::Minus => {
                    let lo = self.rational()?;
                    if self.eat(&Tok::DotDot) {
                        let hi = self.rational()?;
                        if !lo.is_integer() || !hi.is_integer() {
                            return self.err("range bounds must be integers");
                        }
                        let mut v = lo.clone();
                        while v <= hi {
                            items.push(Term::Num(v.clone()));
                            v += rat_int(1);
                        }
                    } else {
                        items.push(Term::Num(lo));
                    }
                }
                Tok::Ident(_) => {
                    let c = self.name()?;
                    items.push(Term::sym(c));
                }
                other => return self.err(format!("expected a carrier element, found {other}")),
            }
            if self.eat(&Tok::RBrace) {
                break;
            }
            self.expect(Tok::Comma)?;
        }
        Ok(items)
    }

    fn param_list(&mut self) -> PResult<Vec<String>> {
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(params);
        }
        loop {
            params.push(self.name()?);
            if self.eat(&Tok::RParen) {
                break;
            }
            self.expect(Tok::Comma)?;
        }
        Ok(params)
    }
}

// ---------------------------------------------------------------------------
// Sort inference for unannotated quantifier/pick variables
// ---------------------------------------------------------------------------

fn collect_sorts_term(t: &Term, var: &str, table: &SymbolTable, out: &mut Vec<String>) {
    if let Term::Rigid(f, args) = t {
        if let Some(decl) = table.actions.get(f) {
            for (i, a) in args.iter().enumerate() {
                if let Term::Var(v) = a {
                    if v == var {
                        out.push(decl.args[i].sort.clone());
                    }
                }
                collect_sorts_term(a, var, table, out);
            }
        } else {
            for a in args {
                collect_sorts_term(a, var, table, out);
            }
        }
    }
}

fn collect_sorts_formula(f: &Formula, var: &str, table: &SymbolTable, out: &mut Vec<String>) {
    use Formula::*;
    match f {
        True | False => {}
        Atom(name, args) => {
            if let Some(decl) = table.fluents.get(name) {
                for (i, a) in args.iter().enumerate() {
                    if let Term::Var(v) = a {
                        if v == var {
                            out.push(decl.arg_sorts[i].clone());
                        }
                    }
                    collect_sorts_term(a, var, table, out);
                }
            }
        }
        Poss(t) => collect_sorts_term(t, var, table, out),
        Equal(a, b) | Cmp(_, a, b) => {
            // A direct equation with a symbolic constant pins the sort.
            for (x, y) in [(a, b), (b, a)] {
                if let (Term::Var(v), Term::Rigid(c, args)) = (x, y) {
                    if v == var && args.is_empty() {
                        if let Some(s) = table.consts.get(c) {
                            out.push(s.clone());
                        }
                    }
                }
            }
            collect_sorts_term(a, var, table, out);
            collect_sorts_term(b, var, table, out);
        }
        Not(g) => collect_sorts_formula(g, var, table, out),
        And(a, b) | Or(a, b) | Iff(a, b) => {
            collect_sorts_formula(a, var, table, out);
            collect_sorts_formula(b, var, table, out);
        }
        Forall(v, _, g) | Exists(v, _, g) => {
            if v != var {
                collect_sorts_formula(g, var, table, out);
            }
        }
        Box(g) => collect_sorts_formula(g, var, table, out),
        After(p, g) => {
            collect_sorts_program(p, var, table, out);
            collect_sorts_formula(g, var, table, out);
        }
        Belief(g, _) => collect_sorts_formula(g, var, table, out),
    }
}

fn collect_sorts_program(p: &Program, var: &str, table: &SymbolTable, out: &mut Vec<String>) {
    use Program::*;
    match p {
        Act(t) => collect_sorts_term(t, var, table, out),
        Test(f) => collect_sorts_formula(f, var, table, out),
        Seq(a, b) | Choice(a, b) => {
            collect_sorts_program(a, var, table, out);
            collect_sorts_program(b, var, table, out);
        }
        Pick(v, _, q) => {
            if v != var {
                collect_sorts_program(q, var, table, out);
            }
        }
        Star(q) => collect_sorts_program(q, var, table, out),
        If(arms, els) => {
            for (c, q) in arms {
                collect_sorts_formula(c, var, table, out);
                collect_sorts_program(q, var, table, out);
            }
            if let Some(q) = els {
                collect_sorts_program(q, var, table, out);
            }
        }
        While(c, q) => {
            collect_sorts_formula(c, var, table, out);
            collect_sorts_program(q, var, table, out);
        }
        Nil => {}
    }
}

fn unique_sort(mut found: Vec<String>) -> Result<String, String> {
    found.sort();
    found.dedup();
    match found.len() {
        0 => Err("cannot infer sort; annotate as `var: sort`".into()),
        1 => Ok(found.pop().unwrap()),
        _ => Err(format!(
            "ambiguous sort ({}); annotate as `var: sort`",
            found.join(", ")
        )),
    }
}

fn infer_sort(body: &Formula, var: &str, table: &SymbolTable) -> Result<String, String> {
    let mut found = Vec::new();
    collect_sorts_formula(body, var, table, &mut found);
    unique_sort(found)
}

fn infer_sort_program(body: &Program, var: &str, table: &SymbolTable) -> Result<String, String> {
    let mut found = Vec::new();
    collect_sorts_program(body, var, table, &mut found);
    unique_sort(found)
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

/// Parse a standalone formula against a theory's symbol table.
pub fn parse_formula(text: &str, table: &SymbolTable) -> Result<Formula, ParseError> {
    let mut p = Parser::new(text, table)?;
    let f = p.formula()?;
    p.expect(Tok::Eof)?;
    Ok(f)
}

/// Parse a standalone program against a theory's symbol table.
pub fn parse_program(text: &str, table: &SymbolTable) -> Result<Program, ParseError> {
    let mut p = Parser::new(text, table)?;
    let prog = p.program()?;
    p.expect(Tok::Eof)?;
    Ok(prog)
}

/// Parse a ground trace written as a comma-separated list of action terms.
pub fn parse_trace(text: &str, table: &SymbolTable) -> Result<Vec<Term>, ParseError> {
    let mut p = Parser::new(text, table)?;
    let mut out = Vec::new();
    if !matches!(p.peek(), Tok::Eof) {
        loop {
            let t = p.term()?;
            if !t.is_ground() {
                return p.err("trace actions must be ground");
            }
            out.push(t);
            if !p.eat(&Tok::Comma) {
                break;
            }
        }
    }
    p.expect(Tok::Eof)?;
    Ok(out)
}

/// Parse a complete theory file.
pub fn parse_theory(text: &str) -> Result<TheoryFile, ParseError> {
    // The symbol table is grown as declaration blocks are parsed; axiom
    // bodies are parsed against the table built so far.
    let mut table = SymbolTable::default();
    let empty = SymbolTable::default();
    let mut p = Parser::new(text, &empty)?;

    // sorts
    p.expect_kw("sorts")?;
    p.expect(Tok::LBrace)?;
    let mut sorts = Vec::new();
    while !p.eat(&Tok::RBrace) {
        let name = p.name()?;
        p.expect(Tok::Eq)?;
        let carrier = p.carrier_items()?;
        p.expect(Tok::Semi)?;
        if carrier.is_empty() {
            return p.err(format!("sort `{name}` has an empty carrier"));
        }
        let decl = SortDecl { name, carrier };
        table.add_sort(&decl);
        sorts.push(decl);
    }

    // fluents
    p.expect_kw("fluents")?;
    p.expect(Tok::LBrace)?;
    let mut fluents: Vec<FluentDecl> = Vec::new();
    while !p.eat(&Tok::RBrace) {
        let name = p.name()?;
        p.expect(Tok::LParen)?;
        let mut arg_sorts = Vec::new();
        if !p.eat(&Tok::RParen) {
            loop {
                let s = p.ident()?;
                if !table.sorts.contains_key(&s) {
                    return p.err(format!("unknown sort `{s}`"));
                }
                arg_sorts.push(s);
                if p.eat(&Tok::RParen) {
                    break;
                }
                p.expect(Tok::Comma)?;
            }
        }
        let functional = p.eat_kw("functional");
        p.expect(Tok::Semi)?;
        if fluents.iter().any(|f| f.name == name) {
            return p.err(format!("duplicate fluent `{name}`"));
        }
        let decl = FluentDecl {
            name: name.clone(),
            arg_sorts,
            functional,
        };
        table.fluents.insert(name, decl.clone());
        fluents.push(decl);
    }

    // actions
    p.expect_kw("actions")?;
    p.expect(Tok::LBrace)?;
    let mut actions: Vec<ActionDecl> = Vec::new();
    while !p.eat(&Tok::RBrace) {
        let name = p.name()?;
        p.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if !p.eat(&Tok::RParen) {
            loop {
                let noise = p.eat_kw("noise");
                let s = p.ident()?;
                if !table.sorts.contains_key(&s) {
                    return p.err(format!("unknown sort `{s}`"));
                }
                args.push(ActionArg { sort: s, noise });
                if p.eat(&Tok::RParen) {
                    break;
                }
                p.expect(Tok::Comma)?;
            }
        }
        p.expect(Tok::Semi)?;
        if actions.iter().any(|a| a.name == name) {
            return p.err(format!("duplicate action `{name}`"));
        }
        let decl = ActionDecl {
            name: name.clone(),
            args,
        };
        table.actions.insert(name, decl.clone());
        actions.push(decl);
    }

    // Re-create the parser with the now-complete table (same token stream).
    let pos = p.pos;
    let mut p = Parser {
        toks: p.toks,
        pos,
        table: &table,
        scope: Vec::new(),
    };

    // poss
    p.expect_kw("poss")?;
    p.expect(Tok::LBrace)?;
    p.scope.push(("a".into(), ACTION_SORT.into()));
    let poss = p.formula()?;
    p.scope.pop();
    p.expect(Tok::RBrace)?;

    // ssa blocks, one per fluent
    let mut ssas = Vec::new();
    while p.at_kw("ssa") {
        p.bump();
        let fluent = p.name()?;
        if !table.fluents.contains_key(&fluent) {
            return p.err(format!("unknown fluent `{fluent}`"));
        }
        let params = p.param_list()?;
        let decl = &table.fluents[&fluent];
        if params.len() != decl.arg_sorts.len() {
            return p.err(format!(
                "ssa for `{fluent}` expects {} parameters",
                decl.arg_sorts.len()
            ));
        }
        p.expect(Tok::LBrace)?;
        for (v, s) in params.iter().zip(&decl.arg_sorts) {
            p.scope.push((v.clone(), s.clone()));
        }
        p.scope.push(("a".into(), ACTION_SORT.into()));
        let body = p.formula()?;
        p.scope.clear();
        p.expect(Tok::RBrace)?;
        if ssas.iter().any(|s: &SsaDecl| s.fluent == fluent) {
            return p.err(format!("duplicate ssa for `{fluent}`"));
        }
        ssas.push(SsaDecl {
            fluent,
            params,
            body,
        });
    }
    for f in &fluents {
        if !ssas.iter().any(|s| s.fluent == f.name) {
            return p.err(format!("missing ssa for fluent `{}`", f.name));
        }
    }

    // likelihood
    p.expect_kw("likelihood")?;
    p.expect(Tok::LBrace)?;
    let mut likelihood: Vec<LikelihoodCase> = Vec::new();
    while !p.eat(&Tok::RBrace) {
        p.expect_kw("case")?;
        let action = p.name()?;
        let Some(decl) = table.actions.get(&action).cloned() else {
            return p.err(format!("unknown action `{action}`"));
        };
        let params = p.param_list()?;
        if params.len() != decl.args.len() {
            return p.err(format!(
                "likelihood case for `{action}` expects {} parameters",
                decl.args.len()
            ));
        }
        if likelihood.iter().any(|c| c.action == action) {
            return p.err(format!("duplicate likelihood case for `{action}`"));
        }
        for (v, a) in params.iter().zip(&decl.args) {
            p.scope.push((v.clone(), a.sort.clone()));
        }
        let binder = if p.eat_kw("where") {
            let var = p.name()?;
            p.expect(Tok::Colon)?;
            let sort = p.ident()?;
            if !table.sorts.contains_key(&sort) {
                return p.err(format!("unknown sort `{sort}`"));
            }
            p.expect_kw("satisfies")?;
            p.scope.push((var.clone(), sort.clone()));
            let cond = p.formula()?;
            p.scope.pop();
            Some(LikBinder { var, sort, cond })
        } else {
            None
        };
        p.expect(Tok::Arrow)?;
        let expr = if p.eat_kw("theta") {
            p.expect(Tok::LParen)?;
            if let Some(b) = &binder {
                p.scope.push((b.var.clone(), b.sort.clone()));
            }
            let u = p.term()?;
            p.expect(Tok::Comma)?;
            let v = p.term()?;
            if binder.is_some() {
                p.scope.pop();
            }
            p.expect(Tok::Comma)?;
            let c = p.rational()?;
            p.expect(Tok::Comma)?;
            let d = p.rational()?;
            p.expect(Tok::RParen)?;
            LikExpr::Theta(u, v, c, d)
        } else {
            LikExpr::Const(p.rational()?)
        };
        p.scope.clear();
        p.expect(Tok::Semi)?;
        likelihood.push(LikelihoodCase {
            action,
            params,
            binder,
            expr,
        });
    }
    for a in &actions {
        if !likelihood.iter().any(|c| c.action == a.name) {
            return p.err(format!("missing likelihood case for action `{}`", a.name));
        }
    }

    // oi
    p.expect_kw("oi")?;
    p.expect(Tok::LBrace)?;
    p.scope.push(("a".into(), ACTION_SORT.into()));
    p.scope.push(("b".into(), ACTION_SORT.into()));
    let oi = p.formula()?;
    p.scope.clear();
    p.expect(Tok::RBrace)?;

    // init
    p.expect_kw("init")?;
    p.expect(Tok::LBrace)?;
    let mut init = Vec::new();
    while !p.eat(&Tok::RBrace) {
        if p.eat_kw("world") {
            p.expect(Tok::LBrace)?;
            let mut atoms = Vec::new();
            while !p.eat(&Tok::RBrace) {
                let name = p.name()?;
                let Some(decl) = table.fluents.get(&name).cloned() else {
                    return p.err(format!("unknown fluent `{name}`"));
                };
                p.expect(Tok::LParen)?;
                let mut args = Vec::new();
                if !p.eat(&Tok::RParen) {
                    loop {
                        let t = p.term()?;
                        if !t.is_ground() {
                            return p.err("world atoms must be ground");
                        }
                        args.push(t);
                        if p.eat(&Tok::RParen) {
                            break;
                        }
                        p.expect(Tok::Comma)?;
                    }
                }
                if args.len() != decl.arg_sorts.len() {
                    return p.err(format!(
                        "fluent `{name}` expects {} arguments",
                        decl.arg_sorts.len()
                    ));
                }
                atoms.push((name, args));
                if !p.eat(&Tok::Comma) && *p.peek() != Tok::RBrace {
                    return p.err("expected `,` or `}` in world atom list");
                }
            }
            p.expect_kw("weight")?;
            let weight = p.rational()?;
            p.expect(Tok::Semi)?;
            init.push(InitClause::World { atoms, weight });
        } else if p.eat_kw("constraint") {
            let f = p.formula()?;
            p.expect(Tok::Semi)?;
            init.push(InitClause::Constraint(f));
        } else {
            return p.err(format!(
                "expected `world` or `constraint`, found {}",
                p.peek()
            ));
        }
    }

    p.expect(Tok::Eof)?;
    Ok(TheoryFile {
        sorts,
        fluents,
        actions,
        poss,
        ssas,
        likelihood,
        oi,
        init,
    })
}

/// Parse a refinement-mapping file against the high- and low-level tables.
pub fn parse_mapping(
    text: &str,
    high: &SymbolTable,
    low: &SymbolTable,
) -> Result<MappingFile, ParseError> {
    let merged = SymbolTable::merged(low, high);
    let mut p = Parser::new(text, &merged)?;
    p.expect_kw("mapping")?;
    p.expect(Tok::LBrace)?;
    let mut fluents: Vec<(String, Vec<String>, Formula)> = Vec::new();
    let mut actions: Vec<(String, Vec<String>, Program)> = Vec::new();
    while !p.eat(&Tok::RBrace) {
        if p.eat_kw("fluent") {
            let name = p.name()?;
            let Some(decl) = high.fluents.get(&name).cloned() else {
                return p.err(format!("`{name}` is not a high-level fluent"));
            };
            let params = p.param_list()?;
            if params.len() != decl.arg_sorts.len() {
                return p.err(format!(
                    "fluent `{name}` expects {} parameters",
                    decl.arg_sorts.len()
                ));
            }
            if fluents.iter().any(|(n, _, _)| *n == name) {
                return p.err(format!("duplicate mapping for fluent `{name}`"));
            }
            p.expect(Tok::Arrow)?;
            for (v, s) in params.iter().zip(&decl.arg_sorts) {
                p.scope.push((v.clone(), s.clone()));
            }
            let f = p.formula()?;
            p.scope.clear();
            p.expect(Tok::Semi)?;
            if !f.classify().is_static {
                return p.err(format!("mapping for fluent `{name}` must be static"));
            }
            fluents.push((name, params, f));
        } else if p.eat_kw("action") {
            let name = p.name()?;
            let Some(decl) = high.actions.get(&name).cloned() else {
                return p.err(format!("`{name}` is not a high-level action"));
            };
            let params = p.param_list()?;
            if params.len() != decl.args.len() {
                return p.err(format!(
                    "action `{name}` expects {} parameters",
                    decl.args.len()
                ));
            }
            if actions.iter().any(|(n, _, _)| *n == name) {
                return p.err(format!("duplicate mapping for action `{name}`"));
            }
            p.expect(Tok::Arrow)?;
            p.expect(Tok::LBrace)?;
            for (v, a) in params.iter().zip(&decl.args) {
                p.scope.push((v.clone(), a.sort.clone()));
            }
            let prog = p.program()?;
            p.scope.clear();
            p.expect(Tok::RBrace)?;
            actions.push((name, params, prog));
        } else {
            return p.err(format!("expected `fluent` or `action`, found {}", p.peek()));
        }
    }
    p.expect(Tok::Eof)?;
    for name in high.fluents.keys() {
        if !fluents.iter().any(|(n, _, _)| n == name) {
            return p.err(format!("missing mapping for high-level fluent `{name}`"));
        }
    }
    for name in high.actions.keys() {
        if !actions.iter().any(|(n, _, _)| n == name) {
            return p.err(format!("missing mapping for high-level action `{name}`"));
        }
    }
    Ok(MappingFile { fluents, actions })
}
