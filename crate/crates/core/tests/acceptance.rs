//! Acceptance suite: one test per criterion, each printing a pass line
//! (visible with `--nocapture`) and enforcing the agreed runtime budget.
//! Every semantic check is made against an independently coded brute-force
//! oracle, never against the engine itself.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use noisy_golog::abstraction::{
    build_bisim, build_bisim_coarse, theorem_harness, BisimRelation, RefinementMapping, Verdict,
};
use noisy_golog::belief::{self, compatible_states, EvalParams};
use noisy_golog::builtins::{builtin, ExampleBundle};
use noisy_golog::interpreter::{self, Policy, SampleResult};
use noisy_golog::lang::{rat, rat_int, Formula, Rat, Term};
use noisy_golog::parser::{parse_mapping, pretty::print_trace};

fn mv(x: i64, y: i64) -> Term {
    Term::app("move", vec![Term::int(x), Term::int(y)])
}

fn sonar(z: i64) -> Term {
    Term::app("sonar", vec![Term::int(z)])
}

fn loc(x: i64) -> Formula {
    Formula::Atom("Loc".into(), vec![Term::int(x)])
}

fn goto(t: &str) -> Term {
    Term::app("goto", vec![Term::sym(t)])
}

// ---------------------------------------------------------------------
// Independent oracle: a hand-coded corridor filter over plain integers.
// It shares no code with the engine: positions, likelihoods and the
// possibility rules are written out directly from the domain description.
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
struct OraclePosterior {
    /// Unnormalized weight per position 0..9.
    weight: Vec<Rat>,
    /// The actual position of the robot.
    actual: i64,
}

fn move_lik(intent: i64, outcome: i64) -> Rat {
    match (outcome - intent).abs() {
        0 => rat(3, 5),
        1 => rat(1, 5),
        _ => Rat::zero(),
    }
}

fn sonar_lik(pos: i64, reading: i64) -> Rat {
    match (reading - pos).abs() {
        0 => rat(4, 5),
        1 => rat(1, 10),
        _ => Rat::zero(),
    }
}

impl OraclePosterior {
    fn start() -> OraclePosterior {
        let mut weight = vec![Rat::zero(); 10];
        weight[3] = rat_int(1);
        OraclePosterior { weight, actual: 3 }
    }

    /// Apply one action; None when the action is not possible in the actual
    /// state (outside the corridor, or an outcome/reading the noise model
    /// cannot produce).
    fn step(&self, a: &Action) -> Option<OraclePosterior> {
        match *a {
            Action::Move(x, y) => {
                let target = self.actual + y;
                if (y - x).abs() > 1 || !(0..=9).contains(&target) {
                    return None;
                }
                let mut weight = vec![Rat::zero(); 10];
                for (p, w) in self.weight.iter().enumerate() {
                    if w.is_zero() {
                        continue;
                    }
                    for y2 in (x - 1)..=(x + 1) {
                        let q = p as i64 + y2;
                        if (0..=9).contains(&q) {
                            weight[q as usize] += w.clone() * move_lik(x, y2);
                        }
                    }
                }
                Some(OraclePosterior {
                    weight,
                    actual: target,
                })
            }
            Action::Sonar(z) => {
                if (z - self.actual).abs() > 1 {
                    return None;
                }
                let mut weight = vec![Rat::zero(); 10];
                for (p, w) in self.weight.iter().enumerate() {
                    weight[p] = w.clone() * sonar_lik(p as i64, z);
                }
                Some(OraclePosterior {
                    weight,
                    actual: self.actual,
                })
            }
        }
    }

    fn degree(&self, pos: i64) -> Option<Rat> {
        let total: Rat = self.weight.iter().cloned().sum();
        if total.is_zero() {
            return None;
        }
        if !(0..=9).contains(&pos) {
            return Some(Rat::zero());
        }
        Some(self.weight[pos as usize].clone() / total)
    }

    /// Degree of belief that the position satisfies `pred`.
    fn degree_where(&self, pred: impl Fn(i64) -> bool) -> Option<Rat> {
        let total: Rat = self.weight.iter().cloned().sum();
        if total.is_zero() {
            return None;
        }
        let mut s = Rat::zero();
        for (p, w) in self.weight.iter().enumerate() {
            if pred(p as i64) {
                s += w.clone();
            }
        }
        Some(s / total)
    }

    fn knows(&self, pred: impl Fn(i64) -> bool) -> bool {
        self.degree_where(pred) == Some(Rat::one())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Action {
    Move(i64, i64),
    Sonar(i64),
}

impl Action {
    fn to_term(self) -> Term {
        match self {
            Action::Move(x, y) => mv(x, y),
            Action::Sonar(z) => sonar(z),
        }
    }

    fn from_term(t: &Term) -> Action {
        match t {
            Term::Rigid(name, args) if name == "move" => {
                Action::Move(as_int(&args[0]), as_int(&args[1]))
            }
            Term::Rigid(name, args) if name == "sonar" => Action::Sonar(as_int(&args[0])),
            other => panic!("not a move-theory action: {other:?}"),
        }
    }
}

fn as_int(t: &Term) -> i64 {
    match t {
        Term::Num(r) => {
            assert!(r.is_integer());
            let (q, _) = num_integer::div_rem(r.numer().clone(), r.denom().clone());
            i64::try_from(q).unwrap()
        }
        other => panic!("not an integer term: {other:?}"),
    }
}

/// All actions that are possible with positive likelihood in the oracle's
/// actual state.
fn viable_actions(o: &OraclePosterior) -> Vec<Action> {
    let mut out = Vec::new();
    for x in [-1i64, 1] {
        for y in (x - 1)..=(x + 1) {
            if (0..=9).contains(&(o.actual + y)) {
                out.push(Action::Move(x, y));
            }
        }
    }
    for z in (o.actual - 1)..=(o.actual + 1) {
        if (0..=9).contains(&z) {
            out.push(Action::Sonar(z));
        }
    }
    out
}

fn bundle() -> &'static ExampleBundle {
    static BUNDLE: OnceLock<ExampleBundle> = OnceLock::new();
    BUNDLE.get_or_init(|| builtin("move-goto").expect("bundled example"))
}

/// The horizon-2 certification for criterion 5, built with support
/// aggregation (exact here: every refinement test is knowledge-only).
fn certified_relation() -> &'static BisimRelation {
    static REL: OnceLock<BisimRelation> = OnceLock::new();
    REL.get_or_init(|| {
        let b = bundle();
        let m = RefinementMapping::new(&b.mapping);
        let wh = b.high.initial_worlds()[0].0;
        let wl = b.low.initial_worlds()[0].0;
        let e_h = belief::point_mass(wh);
        let e_l = belief::point_mass(wl);
        build_bisim_coarse(&m, &b.high, &b.low, &e_h, wh, &e_l, wl, 2, 6)
            .expect("bisim construction")
    })
}

/// A horizon-1 relation with full (non-aggregated) posteriors, used by the
/// theorem harness in criterion 6, whose graded-belief probes need them.
fn exact_relation() -> &'static BisimRelation {
    static REL: OnceLock<BisimRelation> = OnceLock::new();
    REL.get_or_init(|| {
        let b = bundle();
        let m = RefinementMapping::new(&b.mapping);
        let wh = b.high.initial_worlds()[0].0;
        let wl = b.low.initial_worlds()[0].0;
        let e_h = belief::point_mass(wh);
        let e_l = belief::point_mass(wl);
        build_bisim(&m, &b.high, &b.low, &e_h, wh, &e_l, wl, 1, 6).expect("bisim construction")
    })
}

fn pass(n: usize, what: &str) {
    println!("criterion {n} ({what}): PASS");
}

#[test]
fn criterion_1_deterministic_abstraction_trace() {
    let started = Instant::now();
    let b = bundle();
    let w = b.high.initial_worlds()[0].0;
    let e = belief::point_mass(w);
    let params = EvalParams::default();
    let ts = interpreter::traces(&b.high, &e, w, &[], &b.delta_h, 4, &params).unwrap();
    assert!(ts.exact, "trace set must be exact");
    assert_eq!(
        ts.traces,
        vec![vec![goto("near"), goto("far")]],
        "exactly one completion"
    );
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(1),
        "budget exceeded: {elapsed:?}"
    );
    pass(1, "deterministic abstraction trace");
}

#[test]
fn criterion_2_reference_trace_reachability() {
    let started = Instant::now();
    let b = bundle();
    let w = b.low.initial_worlds()[0].0;
    let e = belief::point_mass(w);
    let params = EvalParams::default();
    let rep = interpreter::follow_trace(
        &b.low,
        &e,
        w,
        &[],
        &b.delta_l,
        &b.reference_trace,
        8,
        &params,
    )
    .unwrap();
    assert!(rep.reached, "reference trace must be reachable");

    // Independent oracle: replay the loop structure of the low program over
    // the hand-coded filter. The program is one sonar, then (move(-1);
    // sonar) while not K(<= 2), then (move(+1); sonar) while not K(> 5);
    // the trace is final iff that replay consumes it exactly and ends with
    // K(> 5).
    let oracle_final = {
        let z: Vec<Action> = b.reference_trace.iter().map(Action::from_term).collect();
        let mut o = OraclePosterior::start();
        let mut i = 0;
        let mut ok = true;
        // initial sonar
        match z.first() {
            Some(a @ Action::Sonar(_)) => {
                o = o.step(a).expect("executable");
                i = 1;
            }
            _ => ok = false,
        }
        // first loop
        while ok && !o.knows(|p| p <= 2) {
            match (z.get(i), z.get(i + 1)) {
                (Some(m @ Action::Move(-1, _)), Some(s @ Action::Sonar(_))) => {
                    o = o.step(m).expect("executable");
                    o = o.step(s).expect("executable");
                    i += 2;
                }
                _ => {
                    ok = false;
                }
            }
        }
        // second loop
        while ok && !o.knows(|p| p > 5) {
            match (z.get(i), z.get(i + 1)) {
                (Some(m @ Action::Move(1, _)), Some(s @ Action::Sonar(_))) => {
                    o = o.step(m).expect("executable");
                    o = o.step(s).expect("executable");
                    i += 2;
                }
                _ => {
                    ok = false;
                }
            }
        }
        ok && i == z.len() && o.knows(|p| p > 5)
    };
    assert_eq!(
        rep.final_config, oracle_final,
        "engine and oracle disagree on finality"
    );
    // Report the verdict either way (the oracle says: not final).
    println!(
        "criterion 2: reference trace reachable; final = {} (engine and oracle agree)",
        rep.final_config
    );
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(120),
        "budget exceeded: {elapsed:?}"
    );
    pass(2, "reference trace reachability");
}

#[test]
fn criterion_3_belief_filtering_oracle_equivalence() {
    let started = Instant::now();
    let b = bundle();
    let w = b.low.initial_worlds()[0].0;
    let e = belief::point_mass(w);
    let d = e[0].clone();
    let params = EvalParams::default();

    // Spot value first.
    let spot = belief::degree(
        &b.low,
        &e,
        &d,
        w,
        &[sonar(3), mv(-1, 0), sonar(3)],
        &loc(3),
        &params,
    )
    .unwrap();
    assert_eq!(spot, Some(rat(8, 11)), "spot belief value");

    // Exhaustive: all positive-likelihood executable traces of length <= 4.
    let mut stack: Vec<(Vec<Term>, OraclePosterior)> =
        vec![(Vec::new(), OraclePosterior::start())];
    let mut checked = 0usize;
    while let Some((z, o)) = stack.pop() {
        for x in 0..10 {
            let engine = belief::degree(&b.low, &e, &d, w, &z, &loc(x), &params).unwrap();
            let oracle = o.degree(x);
            assert_eq!(
                engine,
                oracle,
                "degree Loc({x}) after {}",
                print_trace(&z)
            );
        }
        checked += 1;
        if z.len() < 4 {
            for a in viable_actions(&o) {
                let no = o.step(&a).expect("viable actions are executable");
                let mut nz = z.clone();
                nz.push(a.to_term());
                stack.push((nz, no));
            }
        }
    }
    assert!(checked > 5000, "exhaustive enumeration looks too small: {checked}");
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(300),
        "budget exceeded: {elapsed:?}"
    );
    println!("criterion 3: {checked} traces checked against the oracle");
    pass(3, "belief filtering oracle equivalence");
}

#[test]
fn criterion_4_normalization_invariants() {
    let b = bundle();
    let w = b.low.initial_worlds()[0].0;
    let e = belief::point_mass(w);
    let d = e[0].clone();
    let params = EvalParams::default();
    let keep = EvalParams {
        keep_zero: true,
        ..EvalParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for round in 0..200 {
        // A random executable positive-likelihood trace of length <= 3.
        let mut o = OraclePosterior::start();
        let mut z: Vec<Term> = Vec::new();
        let len = rng.gen_range(0..=3);
        for _ in 0..len {
            let opts = viable_actions(&o);
            let a = opts[rng.gen_range(0..opts.len())];
            o = o.step(&a).unwrap();
            z.push(a.to_term());
        }

        // norm(V, V) = 1.
        let s_true = compatible_states(&b.low, &e, &d, w, &z, &Formula::True, &params).unwrap();
        assert_eq!(belief::norm(&s_true, &s_true).unwrap(), rat_int(1));

        // Degrees are a probability distribution over the carrier.
        let mut total = Rat::zero();
        for x in 0..10 {
            total += belief::degree(&b.low, &e, &d, w, &z, &loc(x), &params)
                .unwrap()
                .unwrap();
        }
        assert_eq!(total, rat_int(1), "round {round}: degrees must sum to 1");

        // Additivity over a disjoint union.
        let a = rng.gen_range(0..10);
        let c = (a + 1 + rng.gen_range(0..9)) % 10;
        assert_ne!(a, c);
        let da = belief::degree(&b.low, &e, &d, w, &z, &loc(a), &params)
            .unwrap()
            .unwrap();
        let dc = belief::degree(&b.low, &e, &d, w, &z, &loc(c), &params)
            .unwrap()
            .unwrap();
        let du = belief::degree(&b.low, &e, &d, w, &z, &Formula::or(loc(a), loc(c)), &params)
            .unwrap()
            .unwrap();
        assert_eq!(du, da + dc, "round {round}: additivity");

        // Pruning invariance: retaining zero-likelihood alternatives never
        // changes a degree or a truth value.
        let dk = belief::degree(&b.low, &e, &d, w, &z, &loc(a), &keep)
            .unwrap()
            .unwrap();
        let da2 = belief::degree(&b.low, &e, &d, w, &z, &loc(a), &params)
            .unwrap()
            .unwrap();
        assert_eq!(dk, da2, "round {round}: pruning invariance (degree)");
        let f = Formula::believe(loc(a), da2);
        assert_eq!(
            belief::eval(&b.low, &e, w, &z, &f, &params).unwrap(),
            belief::eval(&b.low, &e, w, &z, &f, &keep).unwrap(),
            "round {round}: pruning invariance (truth)"
        );
    }
    pass(4, "normalization invariants");
}

#[test]
fn criterion_5_bisimulation_certification() {
    let started = Instant::now();
    let b = bundle();
    let rel = certified_relation();
    assert_eq!(rel.verdict, Verdict::CertifiedToBound, "built-in mapping");
    assert!(rel.definite, "relation must be definite");

    // Sabotaged mutants: each must produce a counterexample naming the
    // violated condition.
    let mutants: [(&str, &str, u8); 3] = [
        (
            "fluent mapping misclassifies position 2",
            "mapping { \
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
                 fi } \
             }",
            1,
        ),
        (
            "possible high action refines to a blocked program",
            "mapping { \
               fluent At(l) -> \
                 ((l = near) & exists x: position ((Loc(x) & (x <= 2)))) \
                 | ((l = mid) & exists x: position ((Loc(x) & ((x > 2) & (x <= 5))))) \
                 | ((l = far) & exists x: position ((Loc(x) & (x > 5)))); \
               action goto(t) -> { \
                 if (t = near) then false? fi; \
                 if (t = far) then \
                   sonar(); \
                   while !K(exists x: position ((Loc(x) & (x > 5)))) do move(1); sonar() done \
                 fi } \
             }",
            4,
        ),
        (
            "impossible high action becomes realizable",
            "mapping { \
               fluent At(l) -> \
                 ((l = near) & exists x: position ((Loc(x) & (x <= 2)))) \
                 | ((l = mid) & exists x: position ((Loc(x) & ((x > 2) & (x <= 5))))) \
                 | ((l = far) & exists x: position ((Loc(x) & (x > 5)))); \
               action goto(t) -> { \
                 if (t = mid) then sonar() \
                 elif (t = near) then \
                   sonar(); \
                   while !K(exists x: position ((Loc(x) & (x <= 2)))) do move(-1); sonar() done \
                 elif (t = far) then \
                   sonar(); \
                   while !K(exists x: position ((Loc(x) & (x > 5)))) do move(1); sonar() done \
                 fi } \
             }",
            5,
        ),
    ];
    let wh = b.high.initial_worlds()[0].0;
    let wl = b.low.initial_worlds()[0].0;
    let e_h = belief::point_mass(wh);
    let e_l = belief::point_mass(wl);
    for (what, text, expected) in mutants {
        let file = parse_mapping(text, &b.high_table, &b.low_table).unwrap();
        let m = RefinementMapping::new(&file);
        let rel = build_bisim(&m, &b.high, &b.low, &e_h, wh, &e_l, wl, 1, 6).unwrap();
        match rel.verdict {
            Verdict::Counterexample(ref cex) => {
                assert_eq!(cex.condition, expected, "mutant `{what}`: {cex:?}");
            }
            ref other => panic!("mutant `{what}` was not caught: {other:?}"),
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(600),
        "budget exceeded: {elapsed:?}"
    );
    pass(5, "bisimulation certification and mutants");
}

#[test]
fn criterion_6_theorem_property_suites() {
    let b = bundle();
    let m = RefinementMapping::new(&b.mapping);
    let wh = b.high.initial_worlds()[0].0;
    let e_h = belief::point_mass(wh);
    let rel = exact_relation();
    assert_eq!(rel.verdict, Verdict::CertifiedToBound);
    let report =
        theorem_harness(&m, &b.high, &b.low, &e_h, rel, 500, 3, 200, 100, 20260823).unwrap();
    assert!(
        report.failures.is_empty(),
        "theorem harness failures: {:#?}",
        report.failures
    );
    assert!(report.static_checked >= 400, "{report:?}");
    assert!(report.bounded_checked > 0, "{report:?}");
    assert!(report.trace_checked > 0, "{report:?}");
    println!(
        "criterion 6: {} static / {} bounded / {} trace checks, 0 failures",
        report.static_checked, report.bounded_checked, report.trace_checked
    );
    pass(6, "theorem property suites");
}

#[test]
fn criterion_7_sampler_statistics() {
    let b = bundle();
    let w = b.low.initial_worlds()[0].0;
    let e = belief::point_mass(w);
    let params = EvalParams::default();
    // `move(-1)`: the omitted outcome argument is nature's choice.
    let p = noisy_golog::parser::parse_program("move(-1)", &b.low_table).unwrap();
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    const RUNS: usize = 10_000;
    for seed in 0..RUNS as u64 {
        let r = interpreter::sample_trace(&b.low, &e, w, &[], &p, 1, Policy::First, seed, &params)
            .unwrap();
        match r {
            SampleResult::Completed(z) => {
                assert_eq!(z.len(), 1);
                match Action::from_term(&z[0]) {
                    Action::Move(-1, y) => *counts.entry(y).or_insert(0) += 1,
                    other => panic!("unexpected action {other:?}"),
                }
            }
            SampleResult::Blocked(z) => panic!("sampler blocked: {}", print_trace(&z)),
        }
    }
    let freq = |y: i64| counts.get(&y).copied().unwrap_or(0) as f64 / RUNS as f64;
    for (y, expect) in [(-1i64, 0.6), (-2, 0.2), (0, 0.2)] {
        let got = freq(y);
        assert!(
            (got - expect).abs() <= 0.03,
            "outcome {y}: frequency {got} not within 0.03 of {expect}"
        );
    }
    // Determinism: the same seed reproduces the same outcome.
    let again =
        interpreter::sample_trace(&b.low, &e, w, &[], &p, 1, Policy::First, 17, &params).unwrap();
    let first =
        interpreter::sample_trace(&b.low, &e, w, &[], &p, 1, Policy::First, 17, &params).unwrap();
    assert_eq!(again, first);
    println!(
        "criterion 7: frequencies {:.4}/{:.4}/{:.4} for outcomes -1/-2/0",
        freq(-1),
        freq(-2),
        freq(0)
    );
    pass(7, "sampler statistics");
}

#[test]
fn criterion_8_exact_arithmetic_substitutes() {
    // Full-scale claims (unbounded domains, uncountable world sets, general
    // epistemic states) are out of desk scale by design; criteria 3-6 are
    // the property-based substitutes. This criterion checks the common
    // premise they rely on: the bundled domains are finite and every
    // semantic value is an exact rational (no floating point anywhere in a
    // verdict).
    let b = bundle();
    for sort in ["position", "offset", "intent", "reading"] {
        let c = b.low.carrier(sort).unwrap();
        assert!(!c.is_empty() && c.len() <= 10, "{sort} carrier is finite");
    }
    assert_eq!(b.high.carrier("location").unwrap().len(), 3);
    // 8/11 is not representable in binary floating point; exact equality
    // on the Rat result demonstrates the arithmetic is not float-backed.
    let w = b.low.initial_worlds()[0].0;
    let e = belief::point_mass(w);
    let d = e[0].clone();
    let got = belief::degree(
        &b.low,
        &e,
        &d,
        w,
        &[sonar(3), mv(-1, 0), sonar(3)],
        &loc(3),
        &EvalParams::default(),
    )
    .unwrap()
    .unwrap();
    assert_eq!(got, rat(8, 11));
    assert_eq!(got * rat_int(11), rat_int(8));
    pass(8, "exact-arithmetic property substitutes");
}
