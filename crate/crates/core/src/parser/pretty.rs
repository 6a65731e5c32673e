//! Canonical pretty-printer. `parse(print(ast)) == ast` for well-formed
//! ASTs; printed text uses single spaces and full parenthesization of
//! binary operators.

use num_traits::One;

use crate::lang::{Formula, Program, Rat, Term};

use super::{
    ActionDecl, FluentDecl, InitClause, LikExpr, LikelihoodCase, MappingFile, SortDecl, SsaDecl,
    TheoryFile,
};

pub fn print_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn print_term(t: &Term) -> String {
    match t {
        Term::Var(v) => v.clone(),
        Term::Num(r) => print_rat(r),
        Term::Rigid(f, args) if (f == "+" || f == "-") && args.len() == 2 => {
            format!("({} {} {})", print_term(&args[0]), f, print_term(&args[1]))
        }
        Term::Rigid(f, args) => {
            if args.is_empty() {
                f.clone()
            } else {
                let inner: Vec<String> = args.iter().map(print_term).collect();
                format!("{}({})", f, inner.join(", "))
            }
        }
    }
}

pub fn print_formula(f: &Formula) -> String {
    match f {
        Formula::True => "true".into(),
        Formula::False => "false".into(),
        Formula::Atom(p, args) => {
            if args.is_empty() {
                format!("{p}()")
            } else {
                let inner: Vec<String> = args.iter().map(print_term).collect();
                format!("{}({})", p, inner.join(", "))
            }
        }
        Formula::Poss(t) => format!("Poss({})", print_term(t)),
        Formula::Equal(a, b) => format!("({} = {})", print_term(a), print_term(b)),
        Formula::Cmp(op, a, b) => {
            format!("({} {} {})", print_term(a), op.symbol(), print_term(b))
        }
        Formula::Not(g) => format!("!{}", print_formula(g)),
        Formula::And(a, b) => format!("({} & {})", print_formula(a), print_formula(b)),
        Formula::Or(a, b) => format!("({} | {})", print_formula(a), print_formula(b)),
        Formula::Iff(a, b) => format!("({} == {})", print_formula(a), print_formula(b)),
        Formula::Forall(v, s, g) => format!("forall {v}: {s} ({})", print_formula(g)),
        Formula::Exists(v, s, g) => format!("exists {v}: {s} ({})", print_formula(g)),
        Formula::Box(g) => format!("box {}", print_formula(g)),
        Formula::After(p, g) => format!("[{}] {}", print_program(p), print_formula(g)),
        Formula::Belief(g, r) => {
            if r.is_one() {
                format!("K({})", print_formula(g))
            } else {
                format!("B({} : {})", print_formula(g), print_rat(r))
            }
        }
    }
}

pub fn print_program(p: &Program) -> String {
    match p {
        Program::Act(t) => print_term(t),
        Program::Test(f) => format!("{}?", print_formula(f)),
        Program::Seq(a, b) => format!("({}; {})", print_program(a), print_program(b)),
        Program::Choice(a, b) => format!("({} | {})", print_program(a), print_program(b)),
        Program::Pick(v, s, q) => format!("pick {v}: {s} ({})", print_program(q)),
        Program::Star(q) => format!("{}*", print_program(q)),
        Program::If(arms, els) => {
            let mut out = String::new();
            for (i, (c, q)) in arms.iter().enumerate() {
                let kw = if i == 0 { "if" } else { "elif" };
                out.push_str(&format!("{kw} {} then {} ", print_formula(c), print_program(q)));
            }
            if let Some(q) = els {
                out.push_str(&format!("else {} ", print_program(q)));
            }
            out.push_str("fi");
            out
        }
        Program::While(c, q) => {
            format!("while {} do {} done", print_formula(c), print_program(q))
        }
        Program::Nil => "nil".into(),
    }
}

pub fn print_trace(z: &[Term]) -> String {
    let items: Vec<String> = z.iter().map(print_term).collect();
    items.join(", ")
}

fn print_sort(s: &SortDecl) -> String {
    let items: Vec<String> = s.carrier.iter().map(print_term).collect();
    format!("  {} = {{ {} }};\n", s.name, items.join(", "))
}

fn print_fluent(f: &FluentDecl) -> String {
    let func = if f.functional { " functional" } else { "" };
    format!("  {}({}){};\n", f.name, f.arg_sorts.join(", "), func)
}

fn print_action(a: &ActionDecl) -> String {
    let args: Vec<String> = a
        .args
        .iter()
        .map(|arg| {
            if arg.noise {
                format!("noise {}", arg.sort)
            } else {
                arg.sort.clone()
            }
        })
        .collect();
    format!("  {}({});\n", a.name, args.join(", "))
}

fn print_ssa(s: &SsaDecl) -> String {
    format!(
        "ssa {}({}) {{\n  {}\n}}\n",
        s.fluent,
        s.params.join(", "),
        print_formula(&s.body)
    )
}

fn print_lik_case(c: &LikelihoodCase) -> String {
    let binder = match &c.binder {
        None => String::new(),
        Some(b) => format!(
            " where {}: {} satisfies {}",
            b.var,
            b.sort,
            print_formula(&b.cond)
        ),
    };
    let expr = match &c.expr {
        LikExpr::Const(r) => print_rat(r),
        LikExpr::Theta(u, v, cc, dd) => format!(
            "theta({}, {}, {}, {})",
            print_term(u),
            print_term(v),
            print_rat(cc),
            print_rat(dd)
        ),
    };
    format!(
        "  case {}({}){} -> {};\n",
        c.action,
        c.params.join(", "),
        binder,
        expr
    )
}

fn print_init(c: &InitClause) -> String {
    match c {
        InitClause::World { atoms, weight } => {
            let items: Vec<String> = atoms
                .iter()
                .map(|(name, args)| {
                    let inner: Vec<String> = args.iter().map(print_term).collect();
                    format!("{}({})", name, inner.join(", "))
                })
                .collect();
            format!(
                "  world {{ {} }} weight {};\n",
                items.join(", "),
                print_rat(weight)
            )
        }
        InitClause::Constraint(f) => format!("  constraint {};\n", print_formula(f)),
    }
}

/// Canonical theory rendering: fixed block order, declarations sorted by
/// name, single spaces.
pub fn print_theory(th: &TheoryFile) -> String {
    let mut out = String::new();
    out.push_str("sorts {\n");
    let mut sorts = th.sorts.clone();
    sorts.sort_by(|a, b| a.name.cmp(&b.name));
    for s in &sorts {
        out.push_str(&print_sort(s));
    }
    out.push_str("}\n\nfluents {\n");
    let mut fluents = th.fluents.clone();
    fluents.sort_by(|a, b| a.name.cmp(&b.name));
    for f in &fluents {
        out.push_str(&print_fluent(f));
    }
    out.push_str("}\n\nactions {\n");
    let mut actions = th.actions.clone();
    actions.sort_by(|a, b| a.name.cmp(&b.name));
    for a in &actions {
        out.push_str(&print_action(a));
    }
    out.push_str("}\n\n");
    out.push_str(&format!("poss {{\n  {}\n}}\n\n", print_formula(&th.poss)));
    let mut ssas = th.ssas.clone();
    ssas.sort_by(|a, b| a.fluent.cmp(&b.fluent));
    for s in &ssas {
        out.push_str(&print_ssa(s));
        out.push('\n');
    }
    out.push_str("likelihood {\n");
    let mut cases = th.likelihood.clone();
    cases.sort_by(|a, b| a.action.cmp(&b.action));
    for c in &cases {
        out.push_str(&print_lik_case(c));
    }
    out.push_str("}\n\n");
    out.push_str(&format!("oi {{\n  {}\n}}\n\n", print_formula(&th.oi)));
    out.push_str("init {\n");
    for c in &th.init {
        out.push_str(&print_init(c));
    }
    out.push_str("}\n");
    out
}

pub fn print_mapping(m: &MappingFile) -> String {
    let mut out = String::new();
    out.push_str("mapping {\n");
    let mut fluents = m.fluents.clone();
    fluents.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, params, f) in &fluents {
        out.push_str(&format!(
            "  fluent {}({}) -> {};\n",
            name,
            params.join(", "),
            print_formula(f)
        ));
    }
    let mut actions = m.actions.clone();
    actions.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, params, p) in &actions {
        out.push_str(&format!(
            "  action {}({}) -> {{ {} }};\n",
            name,
            params.join(", "),
            print_program(p)
        ));
    }
    out.push_str("}\n");
    out
}
