//! Acceptance criteria, one pass/fail line each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use cpds::ecpds::prestar_extended;
use cpds::hostack::{apply_op, Alphabet, Stack, StackOp, Symbol};
use cpds::model::{Configuration, Control, Ecpds, Mcpds, Mode, Rule};
use cpds::oracle::*;
use cpds::ordered::ordered_reachability;
use cpds::phases::{phase_global, phase_reachability};
use cpds::regconf::{ConfigTuple, RegularConfigSet, StackLang};
use cpds::saturate::{
    prestar, prestar_with, satstep, state_ceiling, SaturationError, SaturationOptions,
};
use cpds::scopes::{explore_graph, sbmax, scope_global, scope_reachability};
use cpds::stackauto::{PAutomaton, Target};
use cpds_cli::commands::{cmd_check, cmd_global, load, CheckOptions};
use cpds_cli::sysfile::SystemFile;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BOUNDS: ExploreBounds = ExploreBounds {
    max_steps: 200,
    max_size: 40,
    max_configs: 200_000,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> SystemFile {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    load(&p).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn fixture_names() -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".cpds"))
        .collect();
    v.sort();
    v
}

fn query(f: &SystemFile) -> (Control, Control) {
    f.query.expect("fixture has a query")
}

fn random_target(order: u8, letters: usize, controls: usize, seed: u64) -> PAutomaton {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut a0 = PAutomaton::new(order, letters, controls);
    for q in 0..controls as u32 {
        match rng.gen_range(0..4) {
            0 => a0.add_target(Control(q), Target::Any),
            1 => a0.add_target(Control(q), Target::Empty),
            2 => a0.add_target(Control(q), Target::Top(Symbol(1))),
            _ => {}
        }
    }
    a0
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let al = Alphabet::new(["a", "b", "c"]).unwrap();
    let w0 = Stack::parse_notation("[[a]_1 [b]_1]_2", &al).unwrap();
    let c = al.symbol("c").unwrap();
    let w1 = apply_op(StackOp::Push(c, 2), &w0).unwrap();
    let w2 = apply_op(StackOp::Copy(2), &w1).unwrap();
    let w3 = apply_op(StackOp::Collapse(2), &w2).unwrap();
    let got = [w1.notation(&al), w2.notation(&al), w3.notation(&al)];
    let expect = [
        "[[c^{[[b]_1]_2} a]_1 [b]_1]_2",
        "[[c^{[[b]_1]_2} a]_1 [c^{[[b]_1]_2} a]_1 [b]_1]_2",
        "[[b]_1]_2",
    ];
    for (g, e) in got.iter().zip(expect) {
        ensure(g.as_bytes() == e.as_bytes(), || {
            format!("got {g}, expected {e}")
        })?;
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(1), || format!("took {t:?}"))?;
    Ok(format!("3 stacks identical in {t:?}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (mut instances, mut configs, mut seed) = (0, 0usize, 0u64);
    while instances < 200 {
        ensure(seed < 1000, || format!("only {instances} instances closed"))?;
        let order = 1 + (seed % 2) as u8;
        let mut profile = Profile::closed_single(order);
        profile.letters = 2 + (seed % 4 == 3) as usize;
        let sys = gen_random_system(seed, profile);
        let a0 = random_target(order, sys.alphabet.len(), sys.num_controls(), seed);
        let enum_size = match (order, profile.letters) {
            (1, 2) => 10,
            (1, _) => 8,
            (_, 2) => 8,
            _ => 6,
        };
        let or = prestar_oracle(
            order,
            &sys.alphabet,
            sys.num_controls(),
            &sys.stacks[0],
            &a0,
            enum_size,
            BOUNDS,
        );
        seed += 1;
        if !or.closed {
            continue;
        }
        let res = prestar(&sys.stacks[0], &a0).map_err(|e| format!("seed {}: {e}", seed - 1))?;
        for (q, w, v) in &or.verdicts {
            let got = res.member(*q, w).unwrap();
            ensure(got == *v, || {
                format!(
                    "seed {} diverges at q{} {}",
                    seed - 1,
                    q.0,
                    w.notation(&sys.alphabet)
                )
            })?;
        }
        configs += or.verdicts.len();
        instances += 1;
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(300), || format!("took {t:?}"))?;
    Ok(format!(
        "{instances} instances, {configs} configurations, 0 divergences, {} skipped, {t:?}",
        seed as usize - instances
    ))
}

fn ecpds_target(sys: &Ecpds, seed: u64) -> PAutomaton {
    let mut a = PAutomaton::new(sys.order, sys.alphabet.len(), sys.controls.len());
    let last = Control(sys.controls.len() as u32 - 1);
    a.add_target(
        last,
        if seed.is_multiple_of(2) {
            Target::Any
        } else {
            Target::Top(Symbol(1))
        },
    );
    a.add_target(Control(1), Target::Empty);
    a
}

fn criterion_3() -> Outcome {
    let mut compared = 0usize;
    for seed in 0..100u64 {
        let order = 1 + (seed % 2) as u8;
        let e = gen_ecpds_system(seed, Profile::closed_single(order), 1);
        let a0 = ecpds_target(&e, seed);
        let x = prestar_extended(&e, &a0).map_err(|err| format!("seed {seed}: {err}"))?;
        let mut plain: Vec<Rule> = e.rules.clone();
        for r in &e.extended {
            plain.extend(r.lang.words().unwrap().iter().map(|w| w[0]));
        }
        let y = prestar(&plain, &a0).map_err(|err| format!("seed {seed}: {err}"))?;
        for w in StackEnumerator::new(order, &e.alphabet).up_to(7) {
            for q in 0..e.controls.len() as u32 {
                ensure(
                    x.member(Control(q), &w).unwrap() == y.member(Control(q), &w).unwrap(),
                    || {
                        format!(
                            "singleton seed {seed} differs at q{q} {}",
                            w.notation(&e.alphabet)
                        )
                    },
                )?;
                compared += 1;
            }
        }
    }
    let (mut agreed, mut seed) = (0, 0u64);
    while agreed < 50 {
        ensure(seed < 300, || {
            format!("only {agreed} length-2 instances closed")
        })?;
        let order = 1 + (seed % 2) as u8;
        let e = gen_ecpds_system(seed, Profile::closed_single(order), 2);
        let a0 = ecpds_target(&e, seed);
        let or = prestar_oracle_extended(&e, &a0, 7, BOUNDS);
        seed += 1;
        if !or.closed {
            continue;
        }
        let x = prestar_extended(&e, &a0).map_err(|err| format!("seed {}: {err}", seed - 1))?;
        for (q, w, v) in &or.verdicts {
            ensure(x.member(*q, w).unwrap() == *v, || {
                format!(
                    "length-2 seed {} differs at q{} {}",
                    seed - 1,
                    q.0,
                    w.notation(&e.alphabet)
                )
            })?;
        }
        agreed += 1;
    }
    Ok(format!("100 singleton instances ({compared} memberships) equal prestar; {agreed} length-2 instances match the oracle"))
}

/// Compares a solver with the oracle on every control reachable-or-not
/// from `q0`; returns the number of definitive comparisons.
fn agree_with_oracle(
    sys: &Mcpds,
    solve: &dyn Fn(&Mcpds, Control) -> Result<bool, String>,
    label: &str,
) -> Result<usize, String> {
    let mut n = 0;
    let ex = explore(sys, &sys.initial(Control(0)), BOUNDS, None);
    for q in 1..sys.num_controls() as u32 {
        let Some(v) = ex.verdict(Control(q)).definitive() else {
            continue;
        };
        let got = solve(sys, Control(q))?;
        ensure(got == v, || {
            format!("{label} q{q}: solver {got}, oracle {v}")
        })?;
        n += 1;
    }
    Ok(n)
}

fn random_multi(seed: u64, mode: Mode) -> Mcpds {
    let order = 1 + (seed % 2) as u8;
    if seed.is_multiple_of(2) {
        gen_random_system(seed, Profile::closed_multi(order, mode))
    } else {
        let mut p = Profile::closed_multi(order, mode);
        p.rules_per_stack = (seed % 3) as usize;
        p.controls = 6 + (seed % 4) as usize;
        gen_scripted_system(seed, p)
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let f = fixture("fix3.cpds");
    let (a, b) = query(&f);
    ensure(
        ordered_reachability(&f.sys, a, b).map_err(|e| e.to_string())?,
        || "FIX3 unreachable".into(),
    )?;
    let f = fixture("fix3-blocked.cpds");
    let (a, b) = query(&f);
    ensure(
        !ordered_reachability(&f.sys, a, b).map_err(|e| e.to_string())?,
        || "FIX3-blocked reachable".into(),
    )?;
    let mut n = 0;
    for seed in 0..50u64 {
        let sys = random_multi(seed, Mode::Ordered);
        let solve = |s: &Mcpds, q: Control| {
            ordered_reachability(s, Control(0), q).map_err(|e| e.to_string())
        };
        n += agree_with_oracle(&sys, &solve, &format!("seed {seed}"))?;
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(600), || format!("took {t:?}"))?;
    Ok(format!(
        "FIX3 reachable, FIX3-blocked unreachable, 50 instances ({n} queries) match, {t:?}"
    ))
}

fn bounded_criterion(
    mode: fn(u32) -> Mode,
    solve: fn(&Mcpds, u32, Control, Control) -> Result<bool, String>,
    on: &str,
    off: &str,
) -> Outcome {
    for (name, bound, expect) in [(on, 2u32, true), (on, 1, false), (off, 1, false)] {
        let f = fixture(name);
        let (a, b) = query(&f);
        let got = solve(&f.sys, bound, a, b)?;
        ensure(got == expect, || format!("{name} at bound {bound}: {got}"))?;
        let oracle = check(&f.sys, a, b, BOUNDS).definitive();
        ensure(
            oracle == Some(expect) || bound != mode_bound(f.sys.mode),
            || format!("{name}: oracle {oracle:?}"),
        )?;
    }
    let (mut n, mut discriminating) = (0, 0);
    for seed in 0..50u64 {
        let mut sys = random_multi(seed, mode(1));
        for q in 1..sys.num_controls() as u32 {
            let mut verdicts = Vec::new();
            for bound in 1..=3u32 {
                sys.mode = mode(bound);
                let got = solve(&sys, bound, Control(0), Control(q))?;
                if let Some(v) = check(&sys, Control(0), Control(q), BOUNDS).definitive() {
                    ensure(got == v, || {
                        format!("seed {seed} q{q} bound {bound}: solver {got}, oracle {v}")
                    })?;
                    n += 1;
                }
                verdicts.push(got);
            }
            ensure(verdicts.windows(2).all(|w| !w[0] || w[1]), || {
                format!("seed {seed} q{q} not monotone: {verdicts:?}")
            })?;
            discriminating += (verdicts[0] != verdicts[2]) as usize;
        }
    }
    Ok(format!("{on} true at 2 and false at 1; 50 instances ({n} queries, {discriminating} bound-sensitive) match; monotone"))
}

fn mode_bound(m: Mode) -> u32 {
    match m {
        Mode::Phase(z) | Mode::Scope(z) => z,
        _ => 0,
    }
}

fn criterion_5() -> Outcome {
    bounded_criterion(
        Mode::Scope,
        |s, z, a, b| scope_reachability(s, z, a, b).map_err(|e| e.to_string()),
        "fix-sc.cpds",
        "fix-sc-z1.cpds",
    )
}

fn criterion_6() -> Outcome {
    bounded_criterion(
        Mode::Phase,
        |s, z, a, b| phase_reachability(s, z, a, b).map_err(|e| e.to_string()),
        "fix-ph.cpds",
        "fix-ph-z1.cpds",
    )
}

fn order_n_targets_at_most_one(a: &PAutomaton) -> bool {
    let n = a.order();
    a.aut.states_of_order(n).all(|q| {
        if n == 1 {
            a.aut.lo(q).iter().all(|t| t.targets.len() <= 1)
        } else {
            a.aut.hi(q).iter().all(|(_, s)| s.len() <= 1)
        }
    })
}

fn criterion_7() -> Outcome {
    let (mut optimized, mut rounds_total, mut automata) = (0, 0, 0);
    for seed in 0..40u64 {
        let order = 1 + (seed % 2) as u8;
        let sys = gen_random_system(seed, Profile::closed_single(order));
        let a0 = random_target(order, sys.alphabet.len(), sys.num_controls(), seed);
        let (a, stats) = prestar_with(&sys.stacks[0], &a0, SaturationOptions::default())
            .map_err(|e| e.to_string())?;
        a.aut
            .check_invariants()
            .map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(a.aut.num_states() as u64 <= state_ceiling(&a0), || {
            format!("seed {seed}: state ceiling")
        })?;
        if stats.optimized {
            optimized += 1;
            ensure(order_n_targets_at_most_one(&a), || {
                format!("seed {seed}: |Q_n| > 1")
            })?;
        }
        let stacks = StackEnumerator::new(order, &sys.alphabet).up_to(6);
        let accepted = |a: &PAutomaton| -> Vec<bool> {
            stacks
                .iter()
                .flat_map(|w| (0..a.num_controls() as u32).map(move |q| (q, w)))
                .map(|(q, w)| a.member(Control(q), w).unwrap())
                .collect()
        };
        let mut cur = a0.clone();
        let mut prev = accepted(&cur);
        let mut rounds = 0;
        loop {
            let (next, added) = satstep(&sys.stacks[0], &cur);
            let now = accepted(&next);
            ensure(prev.iter().zip(&now).all(|(x, y)| !x || *y), || {
                format!("seed {seed}: satstep not monotone")
            })?;
            prev = now;
            cur = next;
            rounds += 1;
            if added == 0 {
                break;
            }
            ensure(rounds < 10_000, || format!("seed {seed}: no fixpoint"))?;
        }
        rounds_total += rounds;
    }
    let sys = gen_random_system(3, Profile::closed_single(2));
    let mut a0 = PAutomaton::new(2, sys.alphabet.len(), sys.num_controls());
    a0.add_target(Control(3), Target::Any);
    let capped = prestar_with(
        &sys.stacks[0],
        &a0,
        SaturationOptions {
            max_transitions: 1,
            ..Default::default()
        },
    );
    let grows = prestar(&sys.stacks[0], &a0)
        .map(|a| a.aut.num_transitions() > a0.aut.num_transitions() + 1)
        .unwrap_or(false);
    ensure(
        !grows || matches!(capped, Err(SaturationError::CapExceeded(_))),
        || "transition cap not enforced".into(),
    )?;
    for seed in 0..30u64 {
        let order = 1 + (seed % 2) as u8;
        let sys = gen_random_system(seed, Profile::closed_multi(order, Mode::Scope(2)));
        let (g, _) = explore_graph(&sys, 2, Control(3), None).map_err(|e| e.to_string())?;
        let ceiling = sbmax(3, sys.num_controls(), order, false);
        for a in &g.automata {
            a.check_layering()
                .map_err(|e| format!("seed {seed}: {e}"))?;
            a.aut
                .check_invariants()
                .map_err(|e| format!("seed {seed}: {e}"))?;
            ensure(a.aut.num_states() as u64 <= ceiling, || {
                format!("seed {seed}: sbmax exceeded")
            })?;
            automata += 1;
        }
    }
    Ok(format!("40 saturations ({optimized} optimized, {rounds_total} monotone rounds), {automata} layered automata within sbmax"))
}

fn sample(sys: &Mcpds, rng: &mut ChaCha8Rng, pool: &[Stack]) -> Configuration {
    Configuration {
        control: Control(rng.gen_range(0..sys.num_controls() as u32)),
        stacks: (0..sys.num_stacks())
            .map(|_| pool.choose(rng).unwrap().clone())
            .collect(),
    }
}

fn criterion_8() -> Outcome {
    let (mut unions, mut inters, mut empties, mut witnesses) = (0, 0, 0, 0);
    for seed in 0..10u64 {
        let sys = gen_random_system(seed, Profile::closed_multi(2, Mode::Scope(2)));
        let a = scope_global(&sys, 2, Control(3)).map_err(|e| e.to_string())?;
        let b = phase_global(&sys, 2, Control(2)).map_err(|e| e.to_string())?;
        let u = a.union(&b).map_err(|e| e.to_string())?;
        let i = a.intersect(&b).map_err(|e| e.to_string())?;
        let pool = StackEnumerator::new(2, &sys.alphabet).up_to(6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut configs: Vec<Configuration> =
            [a.witness(), b.witness()].into_iter().flatten().collect();
        while configs.len() < 200 {
            configs.push(sample(&sys, &mut rng, &pool));
        }
        for c in &configs {
            let (x, y) = (a.member(c).unwrap(), b.member(c).unwrap());
            ensure(u.member(c).unwrap() == (x || y), || {
                format!("seed {seed}: union law fails at {}", sys.render_config(c))
            })?;
            ensure(i.member(c).unwrap() == (x && y), || {
                format!(
                    "seed {seed}: intersection law fails at {}",
                    sys.render_config(c)
                )
            })?;
            unions += 1;
            inters += 1;
        }
        for s in [&a, &b, &u, &i] {
            match s.witness() {
                Some(w) => {
                    ensure(s.member(&w).unwrap(), || {
                        format!("seed {seed}: witness not a member")
                    })?;
                    witnesses += 1;
                }
                None => {
                    ensure(configs.iter().all(|c| !s.member(c).unwrap()), || {
                        format!("seed {seed}: empty set has a member")
                    })?;
                    empties += 1;
                }
            }
        }
    }
    let mut x = RegularConfigSet::empty(1, 1, 2);
    let mut y = RegularConfigSet::empty(1, 1, 2);
    x.push(ConfigTuple {
        control: Control(0),
        stacks: vec![StackLang::bottom(1, 2)],
    })
    .unwrap();
    y.push(ConfigTuple {
        control: Control(0),
        stacks: vec![StackLang::from_target(1, 2, Target::Top(Symbol(1)))],
    })
    .unwrap();
    ensure(x.intersect(&y).unwrap().is_empty(), || {
        "disjoint intersection nonempty".into()
    })?;
    empties += 1;
    Ok(format!("{unions} union and {inters} intersection checks; {witnesses} witnesses verified; {empties} empty verdicts"))
}

fn criterion_9() -> Outcome {
    let mut runs = 0;
    for name in fixture_names() {
        let f = fixture(&name);
        let from = if f.query.is_none() {
            Some(f.sys.controls[0].clone())
        } else {
            None
        };
        let to = if f.query.is_none() && f.targets.is_empty() {
            f.sys.controls.last().cloned()
        } else {
            None
        };
        let opts = CheckOptions {
            from,
            to: to.clone(),
            oracle: false,
            witness: true,
        };
        let c1 = cmd_check(&f, &opts)
            .map_err(|e| format!("{name}: {e}"))?
            .to_json();
        let c2 = cmd_check(&f, &opts)
            .map_err(|e| format!("{name}: {e}"))?
            .to_json();
        ensure(c1 == c2, || format!("{name}: check differs between runs"))?;
        let g1 = cmd_global(&f, to.as_deref())
            .map_err(|e| format!("{name}: {e}"))?
            .to_json();
        let g2 = cmd_global(&f, to.as_deref())
            .map_err(|e| format!("{name}: {e}"))?
            .to_json();
        ensure(g1 == g2, || format!("{name}: global differs between runs"))?;
        runs += 1;
    }
    Ok(format!("{runs} fixtures produce identical documents"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("worked example", criterion_1),
        ("prestar vs oracle", criterion_2),
        ("extended systems", criterion_3),
        ("ordered", criterion_4),
        ("scope-bounded", criterion_5),
        ("phase-bounded", criterion_6),
        ("structural invariants", criterion_7),
        ("regular-set algebra", criterion_8),
        ("determinism", criterion_9),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panic: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
