mod common;

use common::*;
use cpds::hostack::Symbol;
use cpds::model::{partition_rounds, Configuration, Control, Mcpds, Mode};
use cpds::oracle::{
    check, explore, gen_random_system, gen_scripted_system, OracleVerdict, Profile, StackEnumerator,
};
use cpds::scopes::*;
use cpds::stackauto::{NameTable, StateSet};

fn agree_on(sys: &mut Mcpds) -> (usize, usize) {
    let (mut n, mut discriminating) = (0, 0);
    for q in 1..sys.num_controls() as u32 {
        let mut solver = Vec::new();
        for zeta in 1..=3u32 {
            sys.mode = Mode::Scope(zeta);
            let r = scope_reachability(sys, zeta, Control(0), Control(q)).unwrap();
            if let Some(v) = check(sys, Control(0), Control(q), BOUNDS).definitive() {
                assert_eq!(r, v, "zeta {zeta} q{q}");
                n += 1;
            }
            solver.push(r);
        }
        assert!(
            solver.windows(2).all(|w| !w[0] || w[1]),
            "not monotone in zeta"
        );
        if solver[0] != solver[2] {
            discriminating += 1;
        }
    }
    (n, discriminating)
}

#[test]
fn fix_sc_threshold() {
    let sys = fix_sc(2);
    let (p0, p5) = (ctl(&sys, "p0"), ctl(&sys, "p5"));
    assert!(scope_reachability(&sys, 2, p0, p5).unwrap());
    assert!(!scope_reachability(&sys, 1, p0, p5).unwrap());
    assert_eq!(check(&fix_sc(1), p0, p5, BOUNDS).definitive(), Some(false));
    assert_eq!(check(&fix_sc(2), p0, p5, BOUNDS).definitive(), Some(true));
}

#[test]
fn fix_sc_global_contains_the_start() {
    let sys = fix_sc(2);
    let g = scope_global(&sys, 2, ctl(&sys, "p5")).unwrap();
    assert!(g.member(&sys.initial(ctl(&sys, "p0"))).unwrap());
    let g1 = scope_global(&sys, 1, ctl(&sys, "p5")).unwrap();
    assert!(!g1.member(&sys.initial(ctl(&sys, "p0"))).unwrap());
    assert!(g1
        .member(&config(&sys, "p4", &["[[a ⊥]_1]_2", "[[⊥]_1]_2"]))
        .unwrap());
}

#[test]
fn enough_rounds_admit_every_run() {
    for seed in 0..30u64 {
        let order = 1 + (seed % 2) as u8;
        let mut sys = gen_random_system(seed, Profile::closed_multi(order, Mode::Single));
        for q in 1..sys.num_controls() as u32 {
            sys.mode = Mode::Single;
            match check(&sys, Control(0), Control(q), BOUNDS) {
                OracleVerdict::Reachable(run) => {
                    let rounds = partition_rounds(&run, 2).unwrap().len() as u32;
                    sys.mode = Mode::Scope(rounds);
                    assert!(
                        scope_reachability(&sys, rounds, Control(0), Control(q)).unwrap(),
                        "seed {seed}"
                    );
                }
                OracleVerdict::UnreachableClosed => {
                    assert!(
                        !scope_reachability(&sys, 4, Control(0), Control(q)).unwrap(),
                        "seed {seed}"
                    );
                }
                OracleVerdict::UnreachableWithinBounds => {}
            }
        }
    }
}

#[test]
fn random_instances_match_the_oracle() {
    let mut n = 0;
    for seed in 0..60u64 {
        let order = 1 + (seed % 2) as u8;
        n += agree_on(&mut gen_random_system(
            seed,
            Profile::closed_multi(order, Mode::Scope(1)),
        ))
        .0;
    }
    assert!(n > 300, "{n}");
}

#[test]
fn scripted_instances_match_the_oracle() {
    let (mut n, mut d) = (0, 0);
    for seed in 0..200u64 {
        let order = 1 + (seed % 2) as u8;
        let mut pr = Profile::closed_multi(order, Mode::Scope(1));
        pr.rules_per_stack = (seed % 3) as usize;
        pr.controls = 6 + (seed % 3) as usize;
        let (a, b) = agree_on(&mut gen_scripted_system(seed, pr));
        n += a;
        d += b;
    }
    assert!(n > 1000 && d > 0, "{n} {d}");
}

#[test]
fn global_sets_match_the_oracle() {
    for seed in 0..24u64 {
        let order = 1 + (seed % 2) as u8;
        let mut sys = gen_random_system(seed, Profile::closed_multi(order, Mode::Scope(1)));
        for zeta in 1..=2u32 {
            sys.mode = Mode::Scope(zeta);
            let q_out = Control(3);
            let g = scope_global(&sys, zeta, q_out).unwrap();
            let stacks =
                StackEnumerator::new(order, &sys.alphabet).up_to(if order == 1 { 4 } else { 5 });
            for q in 0..sys.num_controls() as u32 {
                for w1 in &stacks {
                    for w2 in &stacks {
                        let start = Configuration {
                            control: Control(q),
                            stacks: vec![w1.clone(), w2.clone()],
                        };
                        let Some(v) = explore(&sys, &start, BOUNDS, Some(q_out))
                            .verdict(q_out)
                            .definitive()
                        else {
                            continue;
                        };
                        assert_eq!(
                            g.member(&start).unwrap(),
                            v,
                            "seed {seed} zeta {zeta} {}",
                            sys.render_config(&start)
                        );
                    }
                }
            }
        }
    }
}

fn layered(order: u8, layers: u32) -> LayeredAutomaton {
    let mut a = LayeredAutomaton::new(order, 2, 2, layers);
    let q1 = a.state(Control(0), 1);
    let q2 = a.state(Control(1), 2);
    let q3 = a.state(Control(1), 3.min(layers));
    a.aut
        .add_lo(q1, Symbol(1), StateSet::empty(), StateSet::singleton(q2));
    a.aut
        .add_lo(q2, Symbol(1), StateSet::empty(), StateSet::singleton(q3));
    a.aut
        .add_lo(q3, Symbol::BOTTOM, StateSet::empty(), StateSet::empty());
    a
}

#[test]
fn shift_moves_layers_up_and_drops_the_top() {
    let a = layered(1, 3);
    assert!(a.check_layering().is_ok());
    let s = shift(&a);
    let (q1, q2, q3) = (
        s.state(Control(0), 1),
        s.state(Control(0), 2),
        s.state(Control(1), 3),
    );
    assert!(s.aut.lo(q1).is_empty());
    assert_eq!(s.aut.lo(q2).len(), 1);
    assert_eq!(s.aut.lo(q2)[0].targets, StateSet::singleton(q3));
    assert!(s.aut.lo(q3).is_empty());
    assert!(s.check_layering().is_ok());
}

#[test]
fn shift_with_one_extra_layer_empties_everything() {
    let a = layered(1, 2);
    let s = shift(&a);
    assert_eq!(s.aut.num_transitions(), 0);
}

#[test]
fn envmove_copies_the_next_context_start() {
    let a = layered(1, 3);
    let mut s = shift(&a);
    envmove(&mut s, Control(1), Control(0));
    let from = s.state(Control(0), 2);
    let to = s.state(Control(1), 1);
    assert_eq!(s.aut.lo(to), s.aut.lo(from));
}

#[test]
fn truncation_removes_the_top_layer() {
    let a = layered(1, 3);
    let t = a.truncate();
    assert!(t.aut.lo(t.state(Control(1), 3)).is_empty());
    assert!(t.aut.lo(t.state(Control(1), 2)).is_empty());
    assert_eq!(t.aut.lo(t.state(Control(0), 1)).len(), 1);
}

#[test]
fn layering_detects_downward_transitions() {
    let mut a = LayeredAutomaton::new(1, 2, 1, 2);
    let (q1, q2) = (a.state(Control(0), 1), a.state(Control(0), 2));
    a.aut
        .add_lo(q2, Symbol(1), StateSet::empty(), StateSet::singleton(q1));
    assert!(a.check_layering().is_err());
}

#[test]
fn saturation_preserves_layering() {
    for seed in 0..30u64 {
        let order = 1 + (seed % 2) as u8;
        let sys = gen_random_system(seed, Profile::closed_multi(order, Mode::Scope(2)));
        let mut a = LayeredAutomaton::new(order, sys.alphabet.len(), sys.num_controls(), 3);
        a.accept_all(Control(3));
        for s in 0..2 {
            let sat = saturate_layer(&sys.stacks[s], &a).unwrap();
            assert!(sat.check_layering().is_ok(), "seed {seed}");
            let p = predecessor(&sys.stacks[s], &sat, Control(1), Control(2)).unwrap();
            assert!(p.check_layering().is_ok(), "seed {seed}");
        }
    }
}

#[test]
fn explored_automata_respect_the_ceiling() {
    for seed in 0..30u64 {
        let order = 1 + (seed % 2) as u8;
        let sys = gen_random_system(seed, Profile::closed_multi(order, Mode::Scope(2)));
        let (g, _) = explore_graph(&sys, 2, Control(3), None).unwrap();
        let ceiling = sbmax(3, sys.num_controls(), order, false);
        for a in &g.automata {
            assert!(a.check_layering().is_ok());
            assert!(a.aut.check_invariants().is_ok());
            assert!((a.aut.num_states() as u64) <= ceiling);
        }
        let mut table = NameTable::default();
        let forms: std::collections::HashSet<_> =
            g.automata.iter().map(|a| a.canonical(&mut table)).collect();
        assert_eq!(
            forms.len(),
            g.automata.len(),
            "interning keeps one copy per automaton"
        );
    }
}

#[test]
fn sbmax_values() {
    assert_eq!(sbmax(2, 3, 1, false), 6);
    assert_eq!(sbmax(1, 2, 2, true), 2 + 2 * 3);
    assert_eq!(sbmax(1, 2, 2, false), 2 + 2 * 4);
    assert_eq!(sbmax(4, 16, 3, false), u64::MAX);
}

#[test]
fn one_stack_initial_vertices_are_admissible_controls() {
    let sys = system(
        1,
        Mode::Scope(1),
        &["a"],
        &["p", "q", "r"],
        &["1: p ⊥ push a 1 q"],
    );
    let (g, _) = explore_graph(&sys, 1, ctl(&sys, "q"), None).unwrap();
    let mut starts: Vec<u32> = g.vertices[..g.initial]
        .iter()
        .map(|v| v.controls[0].0)
        .collect();
    starts.sort();
    assert_eq!(starts, vec![0, 1]);
    assert!(g
        .vertices
        .iter()
        .all(|v| v.controls.len() == 2 && v.controls[1] == ctl(&sys, "q")
            || v.controls[1] != ctl(&sys, "r")));
}

#[test]
fn vertex_budget_and_ids_are_reported() {
    let sys = fix_sc(2);
    let (g, found) = explore_graph(&sys, 2, ctl(&sys, "p5"), None).unwrap();
    assert!(found.is_none());
    assert!(g.vertices.len() >= g.initial && g.initial > 0);
    assert!(g
        .edges
        .iter()
        .all(|&(a, b)| a < g.vertices.len() && b < g.vertices.len()));
}
