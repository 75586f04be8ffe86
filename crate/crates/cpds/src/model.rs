//! System descriptions, concrete step semantics and run validators.
//!
//! A multi-stack system ([`Mcpds`]) has one rule set per stack. A rule
//! `(q, a, o, q')` applies to stack `i` when the control is `q` and the top
//! character of stack `i` is `a`. The [`Mode`] selects which runs count:
//! all runs, ordered runs, runs with a bounded number of phases, or runs
//! respecting a scope bound.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecpds::LanguageHandle;
use crate::hostack::{
    apply_op, apply_op_rounded, Alphabet, Stack, StackError, StackOp, Symbol, Tag,
};

/// A control state index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Control(pub u32);

impl Control {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A rule `(src, letter, op, dst)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Rule {
    pub src: Control,
    pub letter: Symbol,
    pub op: StackOp,
    pub dst: Control,
}

impl Rule {
    pub fn new(src: Control, letter: Symbol, op: StackOp, dst: Control) -> Rule {
        Rule {
            src,
            letter,
            op,
            dst,
        }
    }

    pub fn is_consuming(&self) -> bool {
        self.op.is_consuming()
    }
}

/// Which runs of a multi-stack system are considered.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Mode {
    /// Every run; with one stack this is a plain CPDS.
    Single,
    /// Stack `i` may consume only while stacks `1..i` are all `⊥_n`.
    Ordered,
    /// At most `z` phases, each consuming from a single stack.
    Phase(u32),
    /// Round-partitionable runs where consumed material is at most `ζ`
    /// rounds old.
    Scope(u32),
}

/// Errors raised while building or validating systems and runs.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown control {0}")]
    UnknownControl(String),
    #[error("invalid rule on stack {stack}: {msg}")]
    InvalidRule { stack: usize, msg: String },
    #[error("configuration does not match the system: {0}")]
    BadConfiguration(String),
    #[error("run step {0} does not replay")]
    BadRun(usize),
    #[error("stack error: {0}")]
    Stack(#[from] StackError),
}

/// A multi-stack collapsible pushdown system.
#[derive(Clone, Debug)]
pub struct Mcpds {
    pub alphabet: Alphabet,
    pub controls: Vec<String>,
    pub order: u8,
    pub stacks: Vec<Vec<Rule>>,
    pub mode: Mode,
}

impl Mcpds {
    /// Builds and validates a system.
    pub fn new(
        alphabet: Alphabet,
        controls: Vec<String>,
        order: u8,
        stacks: Vec<Vec<Rule>>,
        mode: Mode,
    ) -> Result<Mcpds, ModelError> {
        let sys = Mcpds {
            alphabet,
            controls,
            order,
            stacks,
            mode,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// A single-stack system.
    pub fn single(
        alphabet: Alphabet,
        controls: Vec<String>,
        order: u8,
        rules: Vec<Rule>,
    ) -> Result<Mcpds, ModelError> {
        Mcpds::new(alphabet, controls, order, vec![rules], Mode::Single)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.order == 0 {
            return Err(ModelError::InvalidRule {
                stack: 0,
                msg: "order must be positive".into(),
            });
        }
        if self.stacks.is_empty() {
            return Err(ModelError::InvalidRule {
                stack: 0,
                msg: "at least one stack is required".into(),
            });
        }
        for (i, rules) in self.stacks.iter().enumerate() {
            for r in rules {
                validate_rule(r, self.order, self.alphabet.len(), self.controls.len())
                    .map_err(|msg| ModelError::InvalidRule { stack: i, msg })?;
            }
        }
        Ok(())
    }

    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn num_stacks(&self) -> usize {
        self.stacks.len()
    }

    pub fn control(&self, name: &str) -> Result<Control, ModelError> {
        self.controls
            .iter()
            .position(|c| c == name)
            .map(|i| Control(i as u32))
            .ok_or_else(|| ModelError::UnknownControl(name.to_string()))
    }

    pub fn control_name(&self, c: Control) -> &str {
        &self.controls[c.index()]
    }

    /// Renders a rule as `q a op q'`.
    pub fn render_rule(&self, r: &Rule) -> String {
        format!(
            "{} {} {} {}",
            self.control_name(r.src),
            self.alphabet.name(r.letter),
            r.op.render(&self.alphabet),
            self.control_name(r.dst)
        )
    }

    /// The configuration `⟨q, ⊥_n, ..., ⊥_n⟩`.
    pub fn initial(&self, q: Control) -> Configuration {
        Configuration {
            control: q,
            stacks: vec![Stack::bottom(self.order); self.num_stacks()],
        }
    }

    /// Adds a control and returns it.
    pub fn add_control(&mut self, name: impl Into<String>) -> Control {
        self.controls.push(name.into());
        Control(self.controls.len() as u32 - 1)
    }

    pub fn render_config(&self, c: &Configuration) -> String {
        let stacks: Vec<String> = c
            .stacks
            .iter()
            .map(|s| s.notation(&self.alphabet))
            .collect();
        format!("<{}, {}>", self.control_name(c.control), stacks.join(", "))
    }
}

pub(crate) fn validate_rule(
    r: &Rule,
    order: u8,
    letters: usize,
    controls: usize,
) -> Result<(), String> {
    if r.src.index() >= controls || r.dst.index() >= controls {
        return Err("control out of range".into());
    }
    let in_alpha = |s: Symbol| (s.0 as usize) < letters;
    if !in_alpha(r.letter) {
        return Err("letter out of range".into());
    }
    r.op.check_order(order).map_err(|e| e.to_string())?;
    match r.op {
        StackOp::Rew(b) => {
            if !in_alpha(b) {
                return Err("letter out of range".into());
            }
            if b.is_bottom() || r.letter.is_bottom() {
                return Err("rewrite involving the bottom symbol".into());
            }
        }
        StackOp::Push(b, _) => {
            if !in_alpha(b) {
                return Err("letter out of range".into());
            }
            if b.is_bottom() {
                return Err("push of the bottom symbol".into());
            }
        }
        StackOp::Pop(1) if r.letter.is_bottom() => return Err("pop of the bottom symbol".into()),
        _ => {}
    }
    Ok(())
}

/// A configuration `⟨q, w_1, ..., w_m⟩`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Configuration {
    pub control: Control,
    pub stacks: Vec<Stack>,
}

/// A successor produced by [`step`].
#[derive(Clone, Debug)]
pub struct Successor {
    pub stack: usize,
    pub rule: Rule,
    pub config: Configuration,
    /// Round tag inspected by the scope check for consuming operations.
    pub consumed_round: Option<Tag>,
}

/// Rule lookup by `(control, letter)` for every stack.
pub struct Stepper<'a> {
    sys: &'a Mcpds,
    index: Vec<HashMap<(Control, Symbol), Vec<Rule>>>,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a Mcpds) -> Stepper<'a> {
        let index = sys
            .stacks
            .iter()
            .map(|rules| {
                let mut m: HashMap<(Control, Symbol), Vec<Rule>> = HashMap::new();
                for r in rules {
                    m.entry((r.src, r.letter)).or_default().push(*r);
                }
                m
            })
            .collect();
        Stepper { sys, index }
    }

    /// Successors of `c`, with stack operations applied during round `z`.
    /// In ordered mode consuming rules on stack `i` require stacks `< i` to
    /// be `⊥_n`.
    pub fn successors(&self, c: &Configuration, z: Tag) -> Vec<Successor> {
        let mut out = Vec::new();
        for (i, w) in c.stacks.iter().enumerate() {
            let Ok(top) = w.top_char() else { continue };
            let Some(rules) = self.index[i].get(&(c.control, top.symbol)) else {
                continue;
            };
            for r in rules {
                if self.sys.mode == Mode::Ordered
                    && r.is_consuming()
                    && !c.stacks[..i].iter().all(Stack::is_bottom)
                {
                    continue;
                }
                if let Ok(applied) = apply_op_rounded(r.op, w, z) {
                    let mut stacks = c.stacks.clone();
                    stacks[i] = applied.stack;
                    out.push(Successor {
                        stack: i,
                        rule: *r,
                        config: Configuration {
                            control: r.dst,
                            stacks,
                        },
                        consumed_round: applied.consumed_round,
                    });
                }
            }
        }
        out
    }
}

/// All successors of `c` under the system's rules.
pub fn step(sys: &Mcpds, c: &Configuration) -> Vec<Successor> {
    Stepper::new(sys).successors(c, 0)
}

/// An extended rule `(src, letter, L, dst)` applying a whole word of
/// generating rules in one step.
#[derive(Clone)]
pub struct ExtRule {
    pub src: Control,
    pub letter: Symbol,
    pub lang: Arc<dyn LanguageHandle>,
    pub dst: Control,
}

impl std::fmt::Debug for ExtRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtRule")
            .field("src", &self.src)
            .field("letter", &self.letter)
            .field("lang", &self.lang.name())
            .field("dst", &self.dst)
            .finish()
    }
}

/// An extended single-stack system.
#[derive(Clone, Debug)]
pub struct Ecpds {
    pub alphabet: Alphabet,
    pub controls: Vec<String>,
    pub order: u8,
    pub rules: Vec<Rule>,
    pub extended: Vec<ExtRule>,
}

/// Successors of a single-stack configuration under an extended system.
/// Extended rules are realised by every word of their (finite) language
/// whose chained operations are all defined; intermediate configurations
/// are not emitted.
pub fn ecpds_step(
    sys: &Ecpds,
    control: Control,
    w: &Stack,
) -> Result<Vec<(Control, Stack)>, crate::ecpds::EcpdsError> {
    let mut out = Vec::new();
    let Ok(top) = w.top_char() else {
        return Ok(out);
    };
    let a = top.symbol;
    for r in &sys.rules {
        if r.src == control && r.letter == a {
            if let Ok(s) = apply_op(r.op, w) {
                out.push((r.dst, s));
            }
        }
    }
    for e in &sys.extended {
        if e.src != control || e.letter != a {
            continue;
        }
        let words = e.lang.words().ok_or_else(|| {
            crate::ecpds::EcpdsError::LanguageQuery(format!(
                "language {} cannot enumerate its words",
                e.lang.name()
            ))
        })?;
        'words: for word in words {
            let mut q = control;
            let mut s = w.clone();
            for r in word {
                let Ok(t) = s.top_char() else { continue 'words };
                if r.src != q || r.letter != t.symbol || r.is_consuming() {
                    continue 'words;
                }
                match apply_op(r.op, &s) {
                    Ok(s2) => {
                        s = s2;
                        q = r.dst;
                    }
                    Err(_) => continue 'words,
                }
            }
            if !word.is_empty() && q == e.dst {
                out.push((q, s));
            }
        }
    }
    Ok(out)
}

/// One step of a run.
#[derive(Clone, Debug)]
pub struct RunStep {
    pub stack: usize,
    pub rule: Rule,
    pub config: Configuration,
}

/// A run: a start configuration and the steps taken from it.
#[derive(Clone, Debug)]
pub struct Run {
    pub start: Configuration,
    pub steps: Vec<RunStep>,
}

impl Run {
    pub fn empty(start: Configuration) -> Run {
        Run {
            start,
            steps: Vec::new(),
        }
    }

    pub fn last(&self) -> &Configuration {
        self.steps.last().map_or(&self.start, |s| &s.config)
    }

    /// Checks that every step is a plain successor of the previous
    /// configuration (ignoring mode restrictions).
    pub fn replays(&self, sys: &Mcpds) -> bool {
        let mut cur = &self.start;
        for s in &self.steps {
            let Ok(top) = cur.stacks[s.stack].top_char() else {
                return false;
            };
            if s.rule.src != cur.control
                || s.rule.letter != top.symbol
                || !sys.stacks[s.stack].contains(&s.rule)
            {
                return false;
            }
            let Ok(w) = apply_op(s.rule.op, &cur.stacks[s.stack].erase_tags()) else {
                return false;
            };
            let mut expect = cur.stacks.iter().map(Stack::erase_tags).collect::<Vec<_>>();
            expect[s.stack] = w;
            let got: Vec<Stack> = s.config.stacks.iter().map(Stack::erase_tags).collect();
            if expect != got || s.config.control != s.rule.dst {
                return false;
            }
            cur = &s.config;
        }
        true
    }
}

/// True iff every consuming step on stack `i` happens while all stacks
/// `j < i` are `⊥_n`.
pub fn validate_ordered(run: &Run) -> bool {
    let mut cur = &run.start;
    for s in &run.steps {
        if s.rule.is_consuming() && !cur.stacks[..s.stack].iter().all(Stack::is_bottom) {
            return false;
        }
        cur = &s.config;
    }
    true
}

/// The coarsest round partition: each round is a list of step indices whose
/// stack indices are non-decreasing. Returns `None` when a step names a
/// stack outside `0..m`.
pub fn partition_rounds(run: &Run, m: usize) -> Option<Vec<Vec<usize>>> {
    let mut rounds: Vec<Vec<usize>> = Vec::new();
    let mut ctx = 0usize;
    for (i, s) in run.steps.iter().enumerate() {
        if s.stack >= m {
            return None;
        }
        if rounds.is_empty() || s.stack < ctx {
            rounds.push(Vec::new());
        }
        ctx = s.stack;
        rounds.last_mut().unwrap().push(i);
    }
    if rounds.is_empty() {
        rounds.push(Vec::new());
    }
    Some(rounds)
}

/// Checks the scope bound `ζ` by replaying the run with round tags under its
/// coarsest round partition. Rounds are numbered from 1; the initial
/// configuration carries tag 0.
pub fn validate_scope(run: &Run, m: usize, zeta: u32) -> Result<bool, ModelError> {
    let rounds = partition_rounds(run, m).ok_or(ModelError::BadRun(0))?;
    let mut stacks: Vec<Stack> = run.start.stacks.iter().map(Stack::erase_tags).collect();
    let mut ok = true;
    for (z0, round) in rounds.iter().enumerate() {
        let z = z0 as Tag + 1;
        for &i in round {
            let s = &run.steps[i];
            let applied = apply_op_rounded(s.rule.op, &stacks[s.stack], z)
                .map_err(|_| ModelError::BadRun(i))?;
            if let Some(t) = applied.consumed_round {
                if (t as i64) < z as i64 - zeta as i64 {
                    ok = false;
                }
            }
            stacks[s.stack] = applied.stack;
        }
    }
    Ok(ok)
}

/// Minimal number of phases: maximal segments whose consuming steps all
/// touch the same stack.
pub fn min_phases(run: &Run) -> usize {
    let mut phases = 1;
    let mut current: Option<usize> = None;
    for s in &run.steps {
        if s.rule.is_consuming() {
            match current {
                None => current = Some(s.stack),
                Some(j) if j == s.stack => {}
                Some(_) => {
                    phases += 1;
                    current = Some(s.stack);
                }
            }
        }
    }
    phases
}

/// True iff the run splits into at most `z` phases.
pub fn validate_phase(run: &Run, z: u32) -> bool {
    min_phases(run) <= z as usize
}

/// Adds stack-clearing rules after `q_out`: the returned control is reached
/// with stacks `1..m-1` equal to `⊥_n` exactly when `q_out` is reachable.
/// Stacks are cleared in index order, so the added rules respect the
/// ordered discipline. With a single stack `q_out` itself is returned.
pub fn with_clearing(sys: &Mcpds, q_out: Control) -> (Mcpds, Control) {
    let m = sys.num_stacks();
    if m == 1 {
        return (sys.clone(), q_out);
    }
    let mut out = sys.clone();
    let clear: Vec<Control> = (1..m)
        .map(|i| out.add_control(format!("clear#{i}")))
        .collect();
    let done = out.add_control("done#");
    let n = sys.order;
    let letters: Vec<Symbol> = sys.alphabet.symbols().collect();
    for &x in &letters {
        out.stacks[0].push(Rule::new(q_out, x, StackOp::Noop, clear[0]));
    }
    for i in 0..m - 1 {
        let c = clear[i];
        let next = if i + 1 < m - 1 { clear[i + 1] } else { done };
        for &x in &letters {
            if !x.is_bottom() {
                out.stacks[i].push(Rule::new(c, x, StackOp::Pop(1), c));
            }
            for k in 2..=n {
                out.stacks[i].push(Rule::new(c, x, StackOp::Pop(k), c));
            }
        }
        out.stacks[i].push(Rule::new(c, Symbol::BOTTOM, StackOp::Noop, next));
    }
    (out, done)
}
