mod common;

use std::collections::HashSet;

use common::*;
use cpds::hostack::{Stack, StackOp, Symbol};
use cpds::model::{validate_ordered, validate_phase, validate_scope, Control, Mode, Rule};
use cpds::oracle::*;
use cpds::stackauto::{PAutomaton, Target};

#[test]
fn generators_are_deterministic() {
    for seed in 0..20u64 {
        let p = Profile::closed_multi(2, Mode::Phase(2));
        assert_eq!(
            gen_random_system(seed, p).stacks,
            gen_random_system(seed, p).stacks
        );
        assert_eq!(
            gen_scripted_system(seed, p).stacks,
            gen_scripted_system(seed, p).stacks
        );
        let a = gen_ecpds_system(seed, Profile::closed_single(2), 2);
        let b = gen_ecpds_system(seed, Profile::closed_single(2), 2);
        assert_eq!(a.rules, b.rules);
        assert_eq!(a.extended.len(), b.extended.len());
    }
    let a = gen_random_system(1, Profile::closed_single(2));
    let b = gen_random_system(2, Profile::closed_single(2));
    assert_ne!(a.stacks, b.stacks);
}

#[test]
fn closed_profiles_mostly_close() {
    let mut closed = 0;
    for seed in 0..500u64 {
        let order = 1 + (seed % 2) as u8;
        let sys = gen_random_system(seed, Profile::closed_single(order));
        if explore(&sys, &sys.initial(Control(0)), BOUNDS, None).closed {
            closed += 1;
        }
    }
    assert!(closed * 100 >= 500 * 80, "{closed}/500");
}

#[test]
fn closed_profiles_respect_the_control_order() {
    for seed in 0..100u64 {
        let sys = gen_random_system(seed, Profile::closed_multi(2, Mode::Single));
        for r in sys.stacks.iter().flatten() {
            let growing = matches!(r.op, StackOp::Push(..) | StackOp::Copy(_));
            assert!(
                if growing {
                    r.src < r.dst
                } else {
                    r.src <= r.dst
                },
                "{}",
                sys.render_rule(r)
            );
        }
    }
}

#[test]
fn witnesses_replay_and_respect_the_mode() {
    let mut witnessed = 0;
    for seed in 0..60u64 {
        let mode = match seed % 3 {
            0 => Mode::Ordered,
            1 => Mode::Phase(2),
            _ => Mode::Scope(2),
        };
        let sys = gen_scripted_system(seed, Profile::closed_multi(1 + (seed % 2) as u8, mode));
        let ex = explore(&sys, &sys.initial(Control(0)), BOUNDS, None);
        for run in ex.reached.values() {
            assert!(run.replays(&sys), "seed {seed}");
            assert_eq!(run.start, sys.initial(Control(0)));
            let ok = match mode {
                Mode::Ordered => validate_ordered(run),
                Mode::Phase(z) => validate_phase(run, z),
                Mode::Scope(z) => validate_scope(run, 2, z).unwrap(),
                Mode::Single => true,
            };
            assert!(ok, "seed {seed} {mode:?}");
            witnessed += 1;
        }
    }
    assert!(witnessed > 200, "{witnessed}");
}

#[test]
fn witnesses_are_shortest() {
    let sys = fix2();
    let ex = explore(
        &sys,
        &config(&sys, "p0", &["[[a]_1 [b]_1]_2"]),
        BOUNDS,
        None,
    );
    assert!(ex.reached[&ctl(&sys, "p0")].steps.is_empty());
    assert_eq!(ex.reached[&ctl(&sys, "p3")].steps.len(), 3);
}

#[test]
fn fix1_closes() {
    let sys = fix1();
    let ex = explore(&sys, &sys.initial(Control(0)), BOUNDS, None);
    assert!(ex.closed);
    assert_eq!(ex.verdict(ctl(&sys, "q")).definitive(), Some(false));
    let start = config(&sys, "p", &["[[a ⊥]_1]_2"]);
    let ex = explore(&sys, &start, BOUNDS, None);
    assert!(ex.closed && ex.reached.contains_key(&ctl(&sys, "q")));
}

#[test]
fn zero_step_queries_are_reachable() {
    let sys = fix1();
    let v = check(&sys, Control(0), Control(0), BOUNDS);
    assert!(matches!(&v, OracleVerdict::Reachable(run) if run.steps.is_empty()));
}

#[test]
fn unbounded_growth_is_reported_as_bounded() {
    let sys = system(
        1,
        Mode::Single,
        &["a"],
        &["p", "q"],
        &["1: p ⊥ push a 1 p", "1: p a push a 1 p"],
    );
    let v = check(&sys, ctl(&sys, "p"), ctl(&sys, "q"), BOUNDS);
    assert!(matches!(v, OracleVerdict::UnreachableWithinBounds));
    assert_eq!(v.definitive(), None);
}

#[test]
fn enumerated_stacks_are_distinct_and_sized() {
    for order in 1..=3u8 {
        let sys = system(order, Mode::Single, &["a", "b"], &["p"], &[]);
        let mut en = StackEnumerator::new(order, &sys.alphabet);
        let mut seen = HashSet::new();
        for size in 1..=7u64 {
            for w in en.stacks(order, size) {
                assert_eq!(w.size(), size);
                assert_eq!(w.order(), order);
                assert!(w.is_well_formed(order));
                assert!(seen.insert(w));
            }
        }
        assert!(seen.contains(&Stack::bottom(order)));
    }
}

#[test]
fn order_one_stacks_are_words() {
    let sys = system(1, Mode::Single, &["a", "b"], &["p"], &[]);
    let mut en = StackEnumerator::new(1, &sys.alphabet);
    for size in 2..=8u64 {
        assert_eq!(
            en.stacks(1, size).len() as u64,
            2u64.pow((size - 2) as u32),
            "size {size}"
        );
    }
}

#[test]
fn prestar_oracle_without_rules_is_the_target() {
    let sys = system(2, Mode::Single, &["a", "b"], &["p", "q"], &[]);
    let mut a0 = PAutomaton::new(2, sys.alphabet.len(), 2);
    a0.add_target(Control(1), Target::Top(Symbol(2)));
    let o = prestar_oracle(2, &sys.alphabet, 2, &[], &a0, 6, BOUNDS);
    assert!(o.closed);
    for (q, w, v) in &o.verdicts {
        let expect = *q == Control(1) && w.top_char().map(|c| c.symbol) == Ok(Symbol(2));
        assert_eq!(*v, expect);
    }
}

#[test]
fn prestar_oracle_follows_rules() {
    let sys = system(1, Mode::Single, &["a"], &["p", "q"], &["1: p a pop 1 q"]);
    let mut a0 = PAutomaton::new(1, sys.alphabet.len(), 2);
    a0.add_target(Control(1), Target::Empty);
    let rules: Vec<Rule> = sys.stacks[0].clone();
    let o = prestar_oracle(1, &sys.alphabet, 2, &rules, &a0, 4, BOUNDS);
    let yes: HashSet<(Control, Stack)> = o
        .verdicts
        .iter()
        .filter(|v| v.2)
        .map(|(q, w, _)| (*q, w.clone()))
        .collect();
    let expect: HashSet<(Control, Stack)> = [
        (ctl(&sys, "q"), stack(&sys, "[⊥]_1")),
        (ctl(&sys, "p"), stack(&sys, "[a ⊥]_1")),
    ]
    .into_iter()
    .collect();
    assert_eq!(yes, expect);
}

#[test]
fn singleton_extended_systems_only_wrap_generating_rules() {
    for seed in 0..20u64 {
        let e = gen_ecpds_system(seed, Profile::closed_single(2), 1);
        assert!(e.rules.iter().all(Rule::is_consuming));
        for x in &e.extended {
            let words = x.lang.words().unwrap();
            assert_eq!(words.len(), 1);
            assert_eq!(words[0].len(), 1);
            assert_eq!(
                (words[0][0].src, words[0][0].letter, words[0][0].dst),
                (x.src, x.letter, x.dst)
            );
        }
    }
}
