//! Program transition semantics: single steps, final configurations, full
//! trace enumeration under a star bound, directed trace replay, and seeded
//! online execution.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::{EpistemicState, EvalError, EvalParams};
use crate::lang::{expand_sugar, Formula, Program, Term, Trace};
use crate::model::{GroundBat, WorldId};
use crate::parser::pretty::print_program;

/// A program configuration: the trace executed so far (a full history from
/// the initial situation) and the remaining program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub trace: Vec<Term>,
    pub remaining: Program,
}

/// One transition of the configuration, together with the star bodies that
/// were (re-)entered to derive it.
struct Successor {
    config: Configuration,
    entered: Vec<Program>,
}

fn step_inner(
    bat: &GroundBat,
    e: &EpistemicState,
    w: WorldId,
    trace: &[Term],
    p: &Program,
    params: &EvalParams,
) -> Result<Vec<Successor>, EvalError> {
    let mut out: Vec<Successor> = Vec::new();
    let push = |out: &mut Vec<Successor>, s: Successor| {
        if !out
            .iter()
            .any(|o| o.config == s.config && o.entered == s.entered)
        {
            out.push(s);
        }
    };
    match p {
        Program::Act(t) => {
            let a = bat.eval_term(t)?;
            let vid = bat.val_after(w, trace)?;
            if bat.poss_id(vid, bat.intern_act(&a))? {
                let mut z = trace.to_vec();
                z.push(a);
                push(
                    &mut out,
                    Successor {
                        config: Configuration {
                            trace: z,
                            remaining: Program::Test(Formula::True),
                        },
                        entered: Vec::new(),
                    },
                );
            }
        }
        Program::Test(_) => {}
        Program::Seq(p1, p2) => {
            for s in step_inner(bat, e, w, trace, p1, params)? {
                push(
                    &mut out,
                    Successor {
                        config: Configuration {
                            trace: s.config.trace,
                            remaining: Program::seq(s.config.remaining, (**p2).clone()),
                        },
                        entered: s.entered,
                    },
                );
            }
            if is_final(bat, e, w, trace, p1, params)? {
                for s in step_inner(bat, e, w, trace, p2, params)? {
                    push(&mut out, s);
                }
            }
        }
        Program::Choice(p1, p2) => {
            for s in step_inner(bat, e, w, trace, p1, params)? {
                push(&mut out, s);
            }
            for s in step_inner(bat, e, w, trace, p2, params)? {
                push(&mut out, s);
            }
        }
        Program::Pick(v, sort, body) => {
            for item in bat.carrier(sort)? {
                for s in step_inner(bat, e, w, trace, &body.subst(v, &item), params)? {
                    push(&mut out, s);
                }
            }
        }
        Program::Star(body) => {
            for s in step_inner(bat, e, w, trace, body, params)? {
                let mut entered = vec![(**body).clone()];
                entered.extend(s.entered);
                push(
                    &mut out,
                    Successor {
                        config: Configuration {
                            trace: s.config.trace,
                            remaining: Program::seq(s.config.remaining, p.clone()),
                        },
                        entered,
                    },
                );
            }
        }
        Program::If(..) | Program::While(..) | Program::Nil => {
            return step_inner(bat, e, w, trace, &expand_sugar(p), params);
        }
    }
    Ok(out)
}

/// All one-step successors of a configuration. Every transition appends
/// exactly one (possible) action to the trace; order is deterministic.
pub fn step(
    bat: &GroundBat,
    e: &EpistemicState,
    w: WorldId,
    cfg: &Configuration,
    params: &EvalParams,
) -> Result<Vec<Configuration>, EvalError> {
    Ok(
        step_inner(bat, e, w, &cfg.trace, &cfg.remaining, params)?
            .into_iter()
            .map(|s| s.config)
            .fold(Vec::new(), |mut acc, c| {
                if !acc.contains(&c) {
                    acc.push(c);
                }
                acc
            }),
    )
}

/// May the program legally terminate in this configuration?
pub fn is_final(
    bat: &GroundBat,
    e: &EpistemicState,
    w: WorldId,
    trace: &[Term],
    p: &Program,
    params: &EvalParams,
) -> Result<bool, EvalError> {
    match p {
        Program::Act(_) => Ok(false),
        Program::Test(f) => crate::belief::eval(bat, e, w, trace, f, params),
        Program::Seq(p1, p2) => Ok(is_final(bat, e, w, trace, p1, params)?
            && is_final(bat, e, w, trace, p2, params)?),
        Program::Choice(p1, p2) => Ok(is_final(bat, e, w, trace, p1, params)?
            || is_final(bat, e, w, trace, p2, params)?),
        Program::Pick(v, sort, body) => {
            for item in bat.carrier(sort)? {
                if is_final(bat, e, w, trace, &body.subst(v, &item), params)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Program::Star(_) => Ok(true),
        Program::If(..) | Program::While(..) | Program::Nil => {
            is_final(bat, e, w, trace, &expand_sugar(p), params)
        }
    }
}

/// The result of a bounded trace enumeration. `exact` is false when some
/// branch was cut because a star body exceeded the bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSet {
    pub traces: Vec<Trace>,
    pub exact: bool,
}

type StarCounts = BTreeMap<String, usize>;

/// All action suffixes with which the program can run to completion from
/// (w, z0). Each star body may be entered at most `star_bound` times along
/// any single branch; cut branches flip `exact` off.
pub fn traces(
    bat: &GroundBat,
    e: &EpistemicState,
    w: WorldId,
    z0: &[Term],
    p: &Program,
    star_bound: usize,
    params: &EvalParams,
) -> Result<TraceSet, EvalError> {
    let p = expand_sugar(p);
    let mut found: BTreeSet<Vec<Term>> = BTreeSet::new();
    let mut exact = true;
    let mut visited: HashSet<(Vec<Term>, Program, Vec<(String, usize)>)> = HashSet::new();
    let mut stack: Vec<(Vec<Term>, Program, StarCounts)> =
        vec![(z0.to_vec(), p, StarCounts::new())];
    while let Some((trace, prog, counts)) = stack.pop() {
        let key = (
            trace.clone(),
            prog.clone(),
            counts.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        );
        if !visited.insert(key) {
            continue;
        }
        if is_final(bat, e, w, &trace, &prog, params)? {
            found.insert(trace[z0.len()..].to_vec());
        }
        for s in step_inner(bat, e, w, &trace, &prog, params)? {
            let mut counts = counts.clone();
            let mut cut = false;
            for body in &s.entered {
                let c = counts.entry(print_program(body)).or_insert(0);
                *c += 1;
                if *c > star_bound {
                    cut = true;
                }
            }
            if cut {
                exact = false;
                continue;
            }
            stack.push((s.config.trace, s.config.remaining, counts));
        }
    }
    Ok(TraceSet {
        traces: found.into_iter().collect(),
        exact,
    })
}

/// Outcome of replaying a fixed trace against a program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FollowReport {
    /// Every action of the target trace was matched by a transition.
    pub reached: bool,
    /// Index of the first action no surviving configuration could take.
    pub failed_at: Option<usize>,
    /// Some surviving configuration is final after the full trace.
    pub final_config: bool,
    /// A branch was cut by the star bound while following.
    pub truncated: bool,
}

/// Directed replay: follow only the transitions that append the next action
/// of `target`, and report whether the trace is reachable and whether the
/// program may terminate there.
pub fn follow_trace(
    bat: &GroundBat,
    e: &EpistemicState,
    w: WorldId,
    z0: &[Term],
    p: &Program,
    target: &[Term],
    star_bound: usize,
    params: &EvalParams,
) -> Result<FollowReport, EvalError> {
    let p = expand_sugar(p);
    let mut truncated = false;
    let mut layer: Vec<(Program, StarCounts)> = vec![(p, StarCounts::new())];
    let mut trace = z0.to_vec();
    for (k, a) in target.iter().enumerate() {
        let want = bat.eval_term(a)?;
        let mut next: Vec<(Program, StarCounts)> = Vec::new();
        for (prog, counts) in &layer {
            for s in step_inner(bat, e, w, &trace, prog, params)? {
                if *s.config.trace.last().unwrap() != want {
                    continue;
                }
                let mut counts = counts.clone();
                let mut cut = false;
                for body in &s.entered {
                    let c = counts.entry(print_program(body)).or_insert(0);
                    *c += 1;
                    if *c > star_bound {
                        cut = true;
                    }
                }
                if cut {
                    truncated = true;
                    continue;
                }
                let item = (s.config.remaining, counts);
                if !next.contains(&item) {
                    next.push(item);
                }
            }
        }
        if next.is_empty() {
            return Ok(FollowReport {
                reached: false,
                failed_at: Some(k),
                final_config: false,
                truncated,
            });
        }
        trace.push(want);
        layer = next;
    }
    let mut final_config = false;
    for (prog, _) in &layer {
        if is_final(bat, e, w, &trace, prog, params)? {
            final_config = true;
            break;
        }
    }
    Ok(FollowReport {
        reached: true,
        failed_at: None,
        final_config,
        truncated,
    })
}

/// How the executor resolves agent-level nondeterminism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Always take the first available option (deterministic).
    First,
    /// Choose uniformly at random among available options.
    Random,
}

/// Result of one online execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleResult {
    /// The program ran to a final configuration; the executed suffix.
    Completed(Trace),
    /// The program got stuck (or ran out of steps) without reaching a final
    /// configuration.
    Blocked(Trace),
}

fn program_size(p: &Program) -> usize {
    match p {
        Program::Act(_) | Program::Test(_) | Program::Nil => 1,
        Program::Seq(a, b) | Program::Choice(a, b) => 1 + program_size(a) + program_size(b),
        Program::Pick(_, _, b) | Program::Star(b) => 1 + program_size(b),
        Program::While(_, b) => 2 + program_size(b),
        Program::If(arms, els) => {
            1 + arms.iter().map(|(_, p)| 1 + program_size(p)).sum::<usize>()
                + els.as_deref().map_or(0, program_size)
        }
    }
}

/// Execute the program online from (w, z0): agent choices are resolved by
/// `policy`, noise arguments are sampled with probability proportional to
/// the action's likelihood in the current state. The run is cut off after
/// star_bound · |p| steps.
#[allow(clippy::too_many_arguments)]
pub fn sample_trace(
    bat: &GroundBat,
    e: &EpistemicState,
    w: WorldId,
    z0: &[Term],
    p: &Program,
    star_bound: usize,
    policy: Policy,
    seed: u64,
    params: &EvalParams,
) -> Result<SampleResult, EvalError> {
    let max_steps = star_bound.max(1) * program_size(p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // noise-argument positions per action schema
    let noise_mask: BTreeMap<String, Vec<bool>> = bat
        .theory
        .actions
        .iter()
        .map(|a| (a.name.clone(), a.args.iter().map(|g| g.noise).collect()))
        .collect();
    let mut cfg = Configuration {
        trace: z0.to_vec(),
        remaining: expand_sugar(p),
    };
    for _ in 0..max_steps {
        let succs = step(bat, e, w, &cfg, params)?;
        if succs.is_empty() {
            let suffix = cfg.trace[z0.len()..].to_vec();
            return Ok(
                if is_final(bat, e, w, &cfg.trace, &cfg.remaining, params)? {
                    SampleResult::Completed(suffix)
                } else {
                    SampleResult::Blocked(suffix)
                },
            );
        }
        // Group successors by what the agent controls: the action with its
        // noise arguments erased, plus the remaining program. Nature then
        // picks within the group proportionally to likelihood.
        let vid = bat.val_after(w, &cfg.trace)?;
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, s) in succs.iter().enumerate() {
            let a = s.trace.last().unwrap();
            let key = match a {
                Term::Rigid(name, args) => {
                    let mask = noise_mask.get(name).cloned().unwrap_or_default();
                    let agent_args: Vec<String> = args
                        .iter()
                        .zip(mask.iter().chain(std::iter::repeat(&false)))
                        .filter(|(_, noisy)| !**noisy)
                        .map(|(t, _)| format!("{t:?}"))
                        .collect();
                    format!("{name}({}) :: {}", agent_args.join(","), print_program(&s.remaining))
                }
                other => format!("{other:?} :: {}", print_program(&s.remaining)),
            };
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(i),
                None => groups.push((key, vec![i])),
            }
        }
        // Drop groups whose every member has zero likelihood: nature cannot
        // realize them.
        let mut viable: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        for (_, idxs) in &groups {
            let mut weights = Vec::new();
            let mut total = 0.0;
            for &i in idxs {
                let a = succs[i].trace.last().unwrap();
                let lik = bat.likelihood(w, &cfg.trace, a)?;
                let _ = vid;
                let wgt = if lik.is_zero() {
                    0.0
                } else {
                    lik.to_f64().unwrap_or(0.0)
                };
                total += wgt;
                weights.push(wgt);
            }
            if total > 0.0 {
                viable.push((idxs.clone(), weights));
            }
        }
        if viable.is_empty() {
            let suffix = cfg.trace[z0.len()..].to_vec();
            return Ok(
                if is_final(bat, e, w, &cfg.trace, &cfg.remaining, params)? {
                    SampleResult::Completed(suffix)
                } else {
                    SampleResult::Blocked(suffix)
                },
            );
        }
        let (idxs, weights) = match policy {
            Policy::First => &viable[0],
            Policy::Random => &viable[rng.gen_range(0..viable.len())],
        };
        let total: f64 = weights.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut chosen = idxs[idxs.len() - 1];
        for (&i, wgt) in idxs.iter().zip(weights.iter()) {
            if pick < *wgt {
                chosen = i;
                break;
            }
            pick -= wgt;
        }
        cfg = succs[chosen].clone();
    }
    let suffix = cfg.trace[z0.len()..].to_vec();
    Ok(
        if is_final(bat, e, w, &cfg.trace, &cfg.remaining, params)? {
            SampleResult::Completed(suffix)
        } else {
            SampleResult::Blocked(suffix)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_theory;

    fn goto_bat() -> GroundBat {
        GroundBat::compile(parse_theory(include_str!("../assets/goto.dsg")).unwrap()).unwrap()
    }

    fn move_bat() -> GroundBat {
        GroundBat::compile(parse_theory(include_str!("../assets/move.dsg")).unwrap()).unwrap()
    }

    fn gt(l: &str) -> Term {
        Term::app("goto", vec![Term::sym(l)])
    }

    fn at(l: &str) -> Formula {
        Formula::Atom("At".into(), vec![Term::sym(l)])
    }

    fn setup(bat: &GroundBat) -> (EpistemicState, WorldId) {
        let w = bat.initial_worlds()[0].0;
        (crate::belief::point_mass(w), w)
    }

    #[test]
    fn act_steps_once_when_possible() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let cfg = Configuration {
            trace: vec![],
            remaining: Program::Act(gt("near")),
        };
        let succs = step(&bat, &e, w, &cfg, &params).unwrap();
        assert_eq!(succs.len(), 1);
        assert_eq!(succs[0].trace, vec![gt("near")]);
        assert!(is_final(&bat, &e, w, &succs[0].trace, &succs[0].remaining, &params).unwrap());
    }

    #[test]
    fn impossible_act_has_no_step() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let cfg = Configuration {
            trace: vec![],
            remaining: Program::Act(gt("mid")),
        };
        assert!(step(&bat, &e, w, &cfg, &params).unwrap().is_empty());
    }

    #[test]
    fn test_program_gates_finality() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let ok = traces(&bat, &e, w, &[], &Program::Test(at("mid")), 4, &params).unwrap();
        assert_eq!(ok.traces, vec![Vec::<Term>::new()]);
        let no = traces(&bat, &e, w, &[], &Program::Test(at("near")), 4, &params).unwrap();
        assert!(no.traces.is_empty());
        assert!(ok.exact && no.exact);
    }

    #[test]
    fn if_then_seq_yields_single_trace() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::seq(
            Program::If(
                vec![(Formula::not(at("near")), Program::Act(gt("near")))],
                None,
            ),
            Program::Act(gt("far")),
        );
        let ts = traces(&bat, &e, w, &[], &p, 4, &params).unwrap();
        assert!(ts.exact);
        assert_eq!(ts.traces, vec![vec![gt("near"), gt("far")]]);
    }

    #[test]
    fn while_loop_runs_until_guard_fails() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::While(Formula::not(at("far")), Box::new(Program::Act(gt("far"))));
        let ts = traces(&bat, &e, w, &[], &p, 4, &params).unwrap();
        assert!(ts.exact);
        assert_eq!(ts.traces, vec![vec![gt("far")]]);
    }

    #[test]
    fn star_is_bounded_and_flags_truncation() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::star(Program::Act(gt("near")));
        let ts = traces(&bat, &e, w, &[], &p, 2, &params).unwrap();
        assert!(!ts.exact);
        assert_eq!(
            ts.traces,
            vec![
                vec![],
                vec![gt("near")],
                vec![gt("near"), gt("near")],
            ]
        );
    }

    #[test]
    fn star_is_always_final() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::star(Program::Act(gt("mid")));
        assert!(is_final(&bat, &e, w, &[], &p, &params).unwrap());
    }

    #[test]
    fn choice_unions_and_dedups() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::choice(
            Program::Act(gt("near")),
            Program::choice(Program::Act(gt("near")), Program::Act(gt("far"))),
        );
        let cfg = Configuration {
            trace: vec![],
            remaining: p,
        };
        let succs = step(&bat, &e, w, &cfg, &params).unwrap();
        assert_eq!(succs.len(), 2);
    }

    #[test]
    fn pick_expands_over_the_carrier() {
        let bat = move_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::pick(
            "y",
            "offset",
            Program::Act(Term::app("move", vec![Term::int(-1), Term::var("y")])),
        );
        let ts = traces(&bat, &e, w, &[], &p, 4, &params).unwrap();
        // Only the outcomes within one of the intent are possible.
        assert_eq!(ts.traces.len(), 3);
    }

    #[test]
    fn pick_respects_possibility() {
        let bat = move_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::pick(
            "y",
            "offset",
            Program::Act(Term::app("move", vec![Term::int(-1), Term::var("y")])),
        );
        // From Loc(1), the displacement -2 would leave the corridor, so only
        // -1 and 0 remain of the realizable outcomes.
        let z0 = vec![
            Term::app("move", vec![Term::int(-1), Term::int(-2)]),
        ];
        let ts = traces(&bat, &e, w, &z0, &p, 4, &params).unwrap();
        assert_eq!(ts.traces.len(), 2);
    }

    #[test]
    fn follow_trace_replays_and_reports_finality() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::seq(Program::Act(gt("near")), Program::Act(gt("far")));
        let full = follow_trace(&bat, &e, w, &[], &p, &[gt("near"), gt("far")], 4, &params)
            .unwrap();
        assert!(full.reached && full.final_config && !full.truncated);
        let half = follow_trace(&bat, &e, w, &[], &p, &[gt("near")], 4, &params).unwrap();
        assert!(half.reached && !half.final_config);
        let off = follow_trace(&bat, &e, w, &[], &p, &[gt("far")], 4, &params).unwrap();
        assert!(!off.reached);
        assert_eq!(off.failed_at, Some(0));
    }

    #[test]
    fn sugar_matches_its_expansion() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let sugar = Program::While(Formula::not(at("far")), Box::new(Program::Act(gt("far"))));
        let core = expand_sugar(&sugar);
        assert_eq!(
            traces(&bat, &e, w, &[], &sugar, 4, &params).unwrap(),
            traces(&bat, &e, w, &[], &core, 4, &params).unwrap()
        );
    }

    #[test]
    fn sample_blocked_on_impossible_program() {
        let bat = goto_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let got = sample_trace(
            &bat,
            &e,
            w,
            &[],
            &Program::Act(gt("mid")),
            4,
            Policy::First,
            7,
            &params,
        )
        .unwrap();
        assert_eq!(got, SampleResult::Blocked(vec![]));
    }

    #[test]
    fn sample_noisy_action_draws_supported_outcome() {
        let bat = move_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::pick(
            "y",
            "offset",
            Program::Act(Term::app("move", vec![Term::int(-1), Term::var("y")])),
        );
        for seed in 0..20 {
            let got =
                sample_trace(&bat, &e, w, &[], &p, 4, Policy::First, seed, &params).unwrap();
            match got {
                SampleResult::Completed(tr) => {
                    assert_eq!(tr.len(), 1);
                    // Only outcomes within one of the intent have positive
                    // likelihood.
                    match &tr[0] {
                        Term::Rigid(n, args) if n == "move" => {
                            let y = match &args[1] {
                                Term::Num(r) => r.to_integer().to_string(),
                                other => panic!("unexpected arg {other:?}"),
                            };
                            assert!(["-2", "-1", "0"].contains(&y.as_str()), "y = {y}");
                        }
                        other => panic!("unexpected action {other:?}"),
                    }
                }
                other => panic!("expected completion, got {other:?}"),
            }
        }
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let bat = move_bat();
        let (e, w) = setup(&bat);
        let params = EvalParams::default();
        let p = Program::pick(
            "y",
            "offset",
            Program::Act(Term::app("move", vec![Term::int(1), Term::var("y")])),
        );
        let a = sample_trace(&bat, &e, w, &[], &p, 4, Policy::Random, 42, &params).unwrap();
        let b = sample_trace(&bat, &e, w, &[], &p, 4, Policy::Random, 42, &params).unwrap();
        assert_eq!(a, b);
    }
}
