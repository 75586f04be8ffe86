//! Command implementations and the JSON result document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cpds::ecpds::prestar_extended_with;
use cpds::hostack::Stack;
use cpds::model::{
    step, validate_ordered, validate_phase, validate_scope, Control, Mcpds, Mode, Run, RunStep,
};
use cpds::oracle::{self, ExploreBounds, OracleVerdict, Profile};
use cpds::ordered::{ordered_global, ordered_reachability};
use cpds::phases::{phase_global_with_stats, phase_reachability};
use cpds::regconf::{ConfigTuple, RegConfDoc, RegularConfigSet, StackLang};
use cpds::saturate::{prestar_with, SaturationOptions};
use cpds::scopes::{explore_graph, graph_set, vertex_tuple, Goal, ReachGraph, Vertex};
use cpds::stackauto::{PAutomaton, StackAutomaton};

use crate::sysfile::{parse_config, parse_system, render_system, SystemFile};

/// Version tag of [`ResultDocument`].
pub const SCHEMA: &str = "cpds-result/1";

/// Errors mapped to exit code 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {err}")]
    Parse {
        path: String,
        err: crate::sysfile::ParseError,
    },
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Reachable,
    Unreachable,
    UnknownWithinBounds,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Reachable => 0,
            Verdict::Unreachable | Verdict::UnknownWithinBounds => 1,
        }
    }
}

/// Counters of a solver run: saturation rounds, backward phases or rounds
/// explored; transitions in the result automata; reachability-graph
/// vertices for scope-bounded systems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statistics {
    pub iterations: usize,
    pub transitions: usize,
    pub vertices: usize,
}

/// The machine-readable output of `check` and `global`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema: String,
    pub command: String,
    pub mode: String,
    pub controls: Vec<String>,
    /// Letters other than `⊥`.
    pub alphabet: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verdict: Option<Verdict>,
    pub statistics: Statistics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub set: Option<RegConfDoc>,
}

impl ResultDocument {
    fn new(command: &str, sys: &Mcpds) -> ResultDocument {
        ResultDocument {
            schema: SCHEMA.into(),
            command: command.into(),
            mode: mode_name(sys.mode),
            controls: sys.controls.clone(),
            alphabet: sys
                .alphabet
                .letters()
                .map(|a| sys.alphabet.name(a).to_string())
                .collect(),
            verdict: None,
            statistics: Statistics::default(),
            witness: None,
            set: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("documents serialize")
    }
}

fn mode_name(m: Mode) -> String {
    match m {
        Mode::Single => "single".into(),
        Mode::Ordered => "ordered".into(),
        Mode::Phase(z) => format!("phase {z}"),
        Mode::Scope(z) => format!("scope {z}"),
    }
}

/// Reads and parses a system file.
pub fn load(path: &Path) -> Result<SystemFile, CliError> {
    let text = std::fs::read_to_string(path)?;
    parse_system(&text).map_err(|err| CliError::Parse {
        path: path.display().to_string(),
        err,
    })
}

fn control(sys: &Mcpds, name: &str) -> Result<Control, CliError> {
    sys.control(name)
        .map_err(|e| CliError::Usage(e.to_string()))
}

/// Options of `check`.
#[derive(Clone, Debug, Default)]
pub struct CheckOptions {
    pub from: Option<String>,
    pub to: Option<String>,
    /// Decide with the bounded explorer instead of a solver.
    pub oracle: bool,
    /// Attach a shortest witness run found by the explorer.
    pub witness: bool,
}

fn endpoints(
    f: &SystemFile,
    from: Option<&str>,
    to: Option<&str>,
) -> Result<(Control, Option<Control>), CliError> {
    let q_in = match (from, f.query) {
        (Some(n), _) => control(&f.sys, n)?,
        (None, Some((a, _))) => a,
        (None, None) => {
            return Err(CliError::Usage(
                "no source control: pass --from or add a query line".into(),
            ))
        }
    };
    let q_out = match (to, f.query) {
        (Some(n), _) => Some(control(&f.sys, n)?),
        (None, Some((_, b))) => Some(b),
        (None, None) if !f.targets.is_empty() => None,
        (None, None) => {
            return Err(CliError::Usage(
                "no target: pass --to, add a query line or a target block".into(),
            ))
        }
    };
    Ok((q_in, q_out))
}

fn transitions(set: &RegularConfigSet) -> usize {
    let mut seen = std::collections::HashSet::new();
    set.tuples
        .iter()
        .flat_map(|t| &t.stacks)
        .filter(|l| seen.insert(std::sync::Arc::as_ptr(&l.aut)))
        .map(|l| l.aut.num_transitions())
        .sum()
}

fn solve_single(f: &SystemFile, q_out: Option<Control>) -> Result<(PAutomaton, usize), CliError> {
    let target = f.target(q_out);
    let (a, stats) = if f.extended.is_empty() {
        prestar_with(&f.sys.stacks[0], &target, SaturationOptions::default())
            .map_err(|e| CliError::Solver(e.to_string()))?
    } else {
        prestar_extended_with(&f.ecpds(), &target, None)
            .map_err(|e| CliError::Solver(e.to_string()))?
    };
    Ok((a, stats.rounds))
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

fn scope_graph(
    sys: &Mcpds,
    zeta: u32,
    q_in: Option<Control>,
    q_out: Control,
) -> Result<(ReachGraph, Option<usize>), CliError> {
    let start = sys.initial(q_in.unwrap_or(Control(0)));
    let goal = |g: &ReachGraph, v: &Vertex| {
        v.controls[0] == start.control && vertex_tuple(g, v).accepts(&start)
    };
    let goal: Option<&Goal<'_>> = if q_in.is_some() { Some(&goal) } else { None };
    explore_graph(sys, zeta, q_out, goal).map_err(solver_err)
}

fn require_query_target(q_out: Option<Control>) -> Result<Control, CliError> {
    q_out.ok_or_else(|| {
        CliError::Usage("target blocks are only used by single-stack systems; pass --to".into())
    })
}

fn unrestricted(f: &SystemFile) -> bool {
    f.sys.mode == Mode::Single && f.sys.num_stacks() > 1
}

/// Decides control-state reachability from `⟨q_in, ⊥_n, ..., ⊥_n⟩`.
pub fn cmd_check(f: &SystemFile, opts: &CheckOptions) -> Result<ResultDocument, CliError> {
    let sys = &f.sys;
    let (q_in, q_out) = endpoints(f, opts.from.as_deref(), opts.to.as_deref())?;
    let mut doc = ResultDocument::new("check", sys);
    if opts.oracle || unrestricted(f) {
        if !opts.oracle {
            return Err(CliError::Usage("unrestricted multi-stack reachability is undecidable; choose a mode or pass --oracle".into()));
        }
        let q_out = require_query_target(q_out)?;
        let v = oracle::check(sys, q_in, q_out, ExploreBounds::default());
        doc.verdict = Some(match &v {
            OracleVerdict::Reachable(_) => Verdict::Reachable,
            OracleVerdict::UnreachableClosed => Verdict::Unreachable,
            OracleVerdict::UnreachableWithinBounds => Verdict::UnknownWithinBounds,
        });
        if let OracleVerdict::Reachable(run) = v {
            if opts.witness {
                doc.witness = Some(trace(sys, &run));
            }
        }
        return Ok(doc);
    }
    let reachable = match sys.mode {
        Mode::Single => {
            let (a, rounds) = solve_single(f, q_out)?;
            doc.statistics.iterations = rounds;
            doc.statistics.transitions = a.aut.num_transitions();
            a.aut
                .accepts(a.control_state(q_in), &Stack::bottom(sys.order))
        }
        Mode::Ordered => {
            ordered_reachability(sys, q_in, require_query_target(q_out)?).map_err(solver_err)?
        }
        Mode::Phase(z) => {
            phase_reachability(sys, z, q_in, require_query_target(q_out)?).map_err(solver_err)?
        }
        Mode::Scope(zeta) => {
            let (g, found) = scope_graph(sys, zeta, Some(q_in), require_query_target(q_out)?)?;
            doc.statistics.vertices = g.vertices.len();
            doc.statistics.iterations = g.edges.len();
            found.is_some()
        }
    };
    doc.verdict = Some(if reachable {
        Verdict::Reachable
    } else {
        Verdict::Unreachable
    });
    if reachable && opts.witness {
        if let Some(q_out) = q_out {
            if let OracleVerdict::Reachable(run) =
                oracle::check(sys, q_in, q_out, ExploreBounds::default())
            {
                doc.witness = Some(trace(sys, &run));
            }
        }
    }
    Ok(doc)
}

/// Computes the set of configurations from which the target is reachable.
pub fn cmd_global(f: &SystemFile, to: Option<&str>) -> Result<ResultDocument, CliError> {
    let sys = &f.sys;
    if unrestricted(f) {
        return Err(CliError::Usage(
            "unrestricted multi-stack reachability is undecidable; choose a mode".into(),
        ));
    }
    let q_out = match (to, f.query) {
        (Some(n), _) => Some(control(sys, n)?),
        (None, _) if !f.targets.is_empty() => None,
        (None, Some((_, b))) => Some(b),
        (None, None) => {
            return Err(CliError::Usage(
                "no target: pass --to, add a query line or a target block".into(),
            ))
        }
    };
    let mut doc = ResultDocument::new("global", sys);
    let set = match sys.mode {
        Mode::Single => {
            let (a, rounds) = solve_single(f, q_out)?;
            doc.statistics.iterations = rounds;
            let mut set = RegularConfigSet::empty(sys.order, 1, sys.alphabet.len());
            for c in 0..sys.num_controls() {
                let c = Control(c as u32);
                set.tuples.push(ConfigTuple {
                    control: c,
                    stacks: vec![StackLang::restricted(&a.aut, a.control_state(c))],
                });
            }
            set.prune();
            set
        }
        Mode::Ordered => ordered_global(sys, require_query_target(q_out)?).map_err(solver_err)?,
        Mode::Phase(z) => {
            let (set, stats) = phase_global_with_stats(sys, z, require_query_target(q_out)?)
                .map_err(solver_err)?;
            doc.statistics.iterations = stats.tuples.len();
            set
        }
        Mode::Scope(zeta) => {
            let q_out = require_query_target(q_out)?;
            let (g, _) = scope_graph(sys, zeta, None, q_out)?;
            doc.statistics.vertices = g.vertices.len();
            doc.statistics.iterations = g.edges.len();
            graph_set(sys, &g)
        }
    };
    doc.statistics.transitions = transitions(&set);
    doc.set = Some(set.to_doc());
    Ok(doc)
}

/// Writes one DOT file per automaton of a global result into `dir`.
pub fn write_dot(doc: &ResultDocument, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let set = doc
        .set
        .as_ref()
        .ok_or_else(|| CliError::Usage("the document holds no set".into()))?;
    let alphabet = cpds::hostack::Alphabet::new(doc.alphabet.clone())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (i, a) in set.automata.iter().enumerate() {
        let aut = StackAutomaton::from_doc(a).map_err(CliError::Usage)?;
        let path = dir.join(format!("automaton{i}.dot"));
        std::fs::write(&path, aut.to_dot(&alphabet, &|q| format!("s{}", q.0)))?;
        out.push(path);
    }
    Ok(out)
}

/// Membership of a configuration literal in the set of a result document.
pub fn cmd_member(doc: &ResultDocument, config: &str) -> Result<bool, CliError> {
    let set_doc = doc
        .set
        .as_ref()
        .ok_or_else(|| CliError::Usage("the document holds no set".into()))?;
    let set = RegularConfigSet::from_doc(set_doc).map_err(|e| CliError::Usage(e.to_string()))?;
    let alphabet = cpds::hostack::Alphabet::new(doc.alphabet.clone())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let c = parse_config(config, &doc.controls, &alphabet).map_err(CliError::Usage)?;
    if c.stacks.iter().any(|w| w.order() != set.order) {
        return Err(CliError::Usage(format!(
            "stacks must have order {}",
            set.order
        )));
    }
    set.member(&c).map_err(|e| CliError::Usage(e.to_string()))
}

fn trace(sys: &Mcpds, run: &Run) -> Vec<String> {
    let mut out = vec![format!("0: {}", sys.render_config(&run.start))];
    for (i, s) in run.steps.iter().enumerate() {
        out.push(format!(
            "{}: stack {}: {} => {}",
            i + 1,
            s.stack + 1,
            sys.render_rule(&s.rule),
            sys.render_config(&s.config)
        ));
    }
    out
}

fn respects_mode(sys: &Mcpds, run: &Run) -> bool {
    match sys.mode {
        Mode::Single => true,
        Mode::Ordered => validate_ordered(run),
        Mode::Phase(z) => validate_phase(run, z),
        Mode::Scope(zeta) => validate_scope(run, sys.num_stacks(), zeta).unwrap_or(false),
    }
}

/// Runs up to `steps` steps from `from`, always taking the first successor
/// (in rule order) that keeps the run within the mode. `from` is a control
/// name or a configuration literal.
pub fn cmd_simulate(f: &SystemFile, from: &str, steps: usize) -> Result<Vec<String>, CliError> {
    let sys = &f.sys;
    let start = if from.trim_start().starts_with('<') {
        parse_config(from, &sys.controls, &sys.alphabet).map_err(CliError::Usage)?
    } else {
        sys.initial(control(sys, from)?)
    };
    if start.stacks.len() != sys.num_stacks() || start.stacks.iter().any(|w| w.order() != sys.order)
    {
        return Err(CliError::Usage(format!(
            "the configuration needs {} stacks of order {}",
            sys.num_stacks(),
            sys.order
        )));
    }
    let mut run = Run::empty(start);
    for _ in 0..steps {
        let next = step(sys, run.last()).into_iter().find_map(|s| {
            let mut r = run.clone();
            r.steps.push(RunStep {
                stack: s.stack,
                rule: s.rule,
                config: s.config,
            });
            respects_mode(sys, &r).then_some(r)
        });
        match next {
            Some(r) => run = r,
            None => break,
        }
    }
    let mut lines = trace(sys, &run);
    if run.steps.len() < steps {
        lines.push("stuck".into());
    }
    Ok(lines)
}

/// Outcome of a self-test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelftestReport {
    pub cases: usize,
    /// Seed and reproducer path of the first divergence.
    pub divergence: Option<(u64, PathBuf)>,
}

fn solver_verdict(sys: &Mcpds, q_in: Control, q_out: Control) -> Result<bool, CliError> {
    let f = SystemFile {
        sys: sys.clone(),
        extended: Vec::new(),
        targets: Vec::new(),
        query: Some((q_in, q_out)),
    };
    let doc = cmd_check(&f, &CheckOptions::default())?;
    Ok(doc.verdict == Some(Verdict::Reachable))
}

/// The system checked by the self-test for a seed; modes rotate with the seed.
pub fn selftest_system(seed: u64) -> Mcpds {
    let order = 1 + (seed / 4 % 2) as u8;
    let bound = 1 + (seed / 8 % 3) as u32;
    let profile = match seed % 4 {
        0 => Profile::closed_single(order),
        1 => Profile::closed_multi(order, Mode::Ordered),
        2 => Profile::closed_multi(order, Mode::Phase(bound)),
        _ => Profile::closed_multi(order, Mode::Scope(bound)),
    };
    oracle::gen_random_system(seed, profile)
}

/// Differential test of every solver against the explorer over `seeds`
/// random closed systems. With `inject_fault` the first solver verdict is
/// negated. The first divergence is written to `out_dir` as a system file.
pub fn cmd_selftest(
    seeds: u64,
    inject_fault: bool,
    out_dir: &Path,
) -> Result<SelftestReport, CliError> {
    let bounds = ExploreBounds {
        max_steps: 200,
        max_size: 40,
        max_configs: 200_000,
    };
    let mut cases = 0;
    let mut fault = inject_fault;
    for seed in 0..seeds {
        let sys = selftest_system(seed);
        let q_in = Control(0);
        for q in 1..sys.num_controls() as u32 {
            let q_out = Control(q);
            let Some(expected) = oracle::check(&sys, q_in, q_out, bounds).definitive() else {
                continue;
            };
            let mut got = solver_verdict(&sys, q_in, q_out)?;
            if std::mem::take(&mut fault) {
                got = !got;
            }
            cases += 1;
            if got != expected {
                std::fs::create_dir_all(out_dir)?;
                let path = out_dir.join(format!("selftest-seed{seed}.cpds"));
                let text = format!(
                    "# selftest seed {seed}: solver says {}, explorer says {}\n{}",
                    verdict_word(got),
                    verdict_word(expected),
                    render_system(&sys, Some((q_in, q_out)))
                );
                std::fs::write(&path, text)?;
                return Ok(SelftestReport {
                    cases,
                    divergence: Some((seed, path)),
                });
            }
        }
    }
    Ok(SelftestReport {
        cases,
        divergence: None,
    })
}

fn verdict_word(b: bool) -> &'static str {
    if b {
        "reachable"
    } else {
        "unreachable"
    }
}
