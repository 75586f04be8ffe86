//! Shared builders for the integration tests.
#![allow(dead_code)]

use cpds::hostack::{Alphabet, Stack, StackOp};
use cpds::model::{Configuration, Control, Mcpds, Mode, Rule};
use cpds::oracle::ExploreBounds;

/// Bounds under which the generated closed instances close.
pub const BOUNDS: ExploreBounds = ExploreBounds {
    max_steps: 200,
    max_size: 40,
    max_configs: 200_000,
};

/// Builds a system from rule lines `stack: q a op q'`, stacks numbered from 1.
pub fn system(order: u8, mode: Mode, letters: &[&str], controls: &[&str], rules: &[&str]) -> Mcpds {
    let alphabet = Alphabet::new(letters.iter().copied()).unwrap();
    let names: Vec<String> = controls.iter().map(|s| s.to_string()).collect();
    let m = rules.iter().map(|l| stack_of(l)).max().unwrap_or(1);
    let mut stacks = vec![Vec::new(); m];
    for l in rules {
        let (s, rest) = l.split_once(':').unwrap();
        let t: Vec<&str> = rest.split_whitespace().collect();
        let c = |n: &str| {
            Control(
                names
                    .iter()
                    .position(|x| x == n)
                    .unwrap_or_else(|| panic!("control {n}")) as u32,
            )
        };
        let sym = |n: &str| alphabet.symbol(n).unwrap_or_else(|| panic!("letter {n}"));
        let k = |i: usize| t[i].parse::<u8>().unwrap();
        let (op, dst) = match t[2] {
            "noop" => (StackOp::Noop, t[3]),
            "rew" => (StackOp::Rew(sym(t[3])), t[4]),
            "push" => (StackOp::Push(sym(t[3]), k(4)), t[5]),
            "copy" => (StackOp::Copy(k(3)), t[4]),
            "pop" => (StackOp::Pop(k(3)), t[4]),
            "collapse" => (StackOp::Collapse(k(3)), t[4]),
            o => panic!("op {o}"),
        };
        stacks[s.trim().parse::<usize>().unwrap() - 1].push(Rule::new(
            c(t[0]),
            sym(t[1]),
            op,
            c(dst),
        ));
    }
    Mcpds::new(alphabet, names, order, stacks, mode).unwrap()
}

fn stack_of(l: &str) -> usize {
    l.split_once(':').unwrap().0.trim().parse().unwrap()
}

pub fn ctl(sys: &Mcpds, name: &str) -> Control {
    sys.control(name).unwrap()
}

pub fn stack(sys: &Mcpds, text: &str) -> Stack {
    Stack::parse_notation(text, &sys.alphabet).unwrap()
}

pub fn config(sys: &Mcpds, q: &str, stacks: &[&str]) -> Configuration {
    Configuration {
        control: ctl(sys, q),
        stacks: stacks.iter().map(|s| stack(sys, s)).collect(),
    }
}

/// One pop rule at order 2.
pub fn fix1() -> Mcpds {
    system(2, Mode::Single, &["a"], &["p", "q"], &["1: p a pop 1 q"])
}

/// push_c^2, copy_2 and collapse_2 through p0..p3.
pub fn fix2() -> Mcpds {
    system(
        2,
        Mode::Single,
        &["a", "b", "c"],
        &["p0", "p1", "p2", "p3"],
        &[
            "1: p0 a push c 2 p1",
            "1: p1 c copy 2 p2",
            "1: p2 c collapse 2 p3",
        ],
    )
}

const FIX3_CONTROLS: [&str; 13] = [
    "p0", "p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8", "p9", "p10", "p11", "p",
];

/// Ordered: stack 2 is popped after stack 1 has been emptied.
pub fn fix3() -> Mcpds {
    system(
        2,
        Mode::Ordered,
        &["a", "b"],
        &FIX3_CONTROLS,
        &[
            "2: p0 ⊥ push b 1 p1",
            "2: p1 b push a 1 p2",
            "1: p2 ⊥ push a 1 p3",
            "1: p3 a push b 1 p4",
            "1: p4 b copy 2 p5",
            "1: p5 b pop 1 p6",
            "1: p6 a pop 2 p7",
            "1: p7 b pop 1 p8",
            "1: p8 a pop 1 p9",
            "2: p9 a pop 1 p10",
            "2: p10 b pop 1 p11",
            "2: p11 ⊥ noop p",
        ],
    )
}

/// As [`fix3`], with the stack-2 pops moved before stack 1 is emptied.
pub fn fix3_blocked() -> Mcpds {
    system(
        2,
        Mode::Ordered,
        &["a", "b"],
        &FIX3_CONTROLS,
        &[
            "2: p0 ⊥ push b 1 p1",
            "2: p1 b push a 1 p2",
            "1: p2 ⊥ push a 1 p3",
            "2: p3 a pop 1 p4",
            "2: p4 b pop 1 p5",
            "1: p5 a push b 1 p6",
            "1: p6 b copy 2 p7",
            "1: p7 b pop 1 p8",
            "1: p8 a pop 2 p9",
            "1: p9 b pop 1 p10",
            "1: p10 a pop 1 p11",
            "2: p11 ⊥ noop p",
        ],
    )
}

/// Scope: the a pushed in round 1 is popped in round 3.
pub fn fix_sc(zeta: u32) -> Mcpds {
    system(
        2,
        Mode::Scope(zeta),
        &["a"],
        &["p0", "p1", "p2", "p3", "p4", "p5"],
        &[
            "1: p0 ⊥ push a 1 p1",
            "2: p1 ⊥ noop p2",
            "1: p2 a noop p3",
            "2: p3 ⊥ noop p4",
            "1: p4 a pop 1 p5",
        ],
    )
}

/// Phase: pop stack 1, then pop stack 2.
pub fn fix_ph(z: u32) -> Mcpds {
    system(
        2,
        Mode::Phase(z),
        &["a", "b"],
        &["p0", "p1", "p2", "p3", "p4"],
        &[
            "1: p0 ⊥ push a 1 p1",
            "2: p1 ⊥ push b 1 p2",
            "1: p2 a pop 1 p3",
            "2: p3 b pop 1 p4",
        ],
    )
}
