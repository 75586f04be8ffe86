//! The textual system format.
//!
//! ```text
//! file      := header line*
//! header    := 'cpds' 'order' N 'stacks' M 'mode' mode
//! mode      := 'single' | 'ordered' | 'phase' N | 'scope' N
//! line      := 'alphabet' letter*
//!            | 'controls' name+
//!            | 'stack' N                      (starts the rule block of stack N)
//!            | rule                           (inside a stack block)
//!            | 'language' name '=' word ('|' word)*
//!            | 'extended' name letter name name
//!            | 'target' name ('any' | 'empty' | 'top' letter)
//!            | 'query' name name
//! word      := rule (',' rule)*
//! rule      := name letter op name
//! op        := 'pop' K | 'copy' K | 'collapse' K | 'push' letter K | 'rew' letter | 'noop'
//! ```
//!
//! Stacks are numbered from 1. `#` starts a comment. The bottom symbol is
//! written `⊥` or `bot`. `alphabet` and `controls` come before any rule.
//! Extended rules, languages and targets need a single stack; languages are
//! declared before use.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use cpds::ecpds::FiniteLanguage;
use cpds::hostack::{Alphabet, StackOp, Symbol};
use cpds::model::{Control, Ecpds, ExtRule, Mcpds, Mode, Rule};
use cpds::stackauto::{PAutomaton, Target};

/// A parse or validation error with a 1-based position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.col, self.msg)
    }
}

impl std::error::Error for ParseError {}

/// A parsed system file.
#[derive(Clone, Debug)]
pub struct SystemFile {
    pub sys: Mcpds,
    pub extended: Vec<ExtRule>,
    pub targets: Vec<(Control, Target)>,
    pub query: Option<(Control, Control)>,
}

impl SystemFile {
    /// The extended view of a single-stack file.
    pub fn ecpds(&self) -> Ecpds {
        Ecpds {
            alphabet: self.sys.alphabet.clone(),
            controls: self.sys.controls.clone(),
            order: self.sys.order,
            rules: self.sys.stacks[0].clone(),
            extended: self.extended.clone(),
        }
    }

    /// The target automaton of the file, or every stack at `q_out`.
    pub fn target(&self, q_out: Option<Control>) -> PAutomaton {
        let sys = &self.sys;
        let mut a = PAutomaton::new(sys.order, sys.alphabet.len(), sys.num_controls());
        match q_out {
            Some(q) => a.add_target(q, Target::Any),
            None => {
                for &(q, t) in &self.targets {
                    a.add_target(q, t);
                }
            }
        }
        a
    }
}

#[derive(Clone, Copy)]
struct Tok<'a> {
    text: &'a str,
    line: usize,
    col: usize,
}

fn tokenize(line: &str, lineno: usize) -> Vec<Tok<'_>> {
    let line = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let col_of = |byte: usize| line[..byte].chars().count() + 1;
    for (i, c) in line.char_indices() {
        let single = matches!(c, ',' | '|' | '=');
        if c.is_whitespace() || single {
            if let Some(s) = start.take() {
                out.push(Tok {
                    text: &line[s..i],
                    line: lineno,
                    col: col_of(s),
                });
            }
            if single {
                out.push(Tok {
                    text: &line[i..i + 1],
                    line: lineno,
                    col: col_of(i),
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Tok {
            text: &line[s..],
            line: lineno,
            col: col_of(s),
        });
    }
    out
}

struct Cursor<'a> {
    toks: Vec<Tok<'a>>,
    pos: usize,
    line: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn err_at(&self, t: &Tok<'_>, msg: impl Into<String>) -> ParseError {
        ParseError {
            line: t.line,
            col: t.col,
            msg: msg.into(),
        }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        match self.toks.get(self.pos) {
            Some(t) => self.err_at(t, msg),
            None => ParseError {
                line: self.line,
                col: self.end_col,
                msg: msg.into(),
            },
        }
    }

    fn next(&mut self, what: &str) -> Result<Tok<'a>, ParseError> {
        let t = self
            .toks
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(format!("expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let t = self.next(&format!("'{kw}'"))?;
        if t.text != kw {
            return Err(self.err_at(&t, format!("expected '{kw}', found '{}'", t.text)));
        }
        Ok(())
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ParseError> {
        let t = self.next(what)?;
        t.text
            .parse()
            .map_err(|_| self.err_at(&t, format!("expected {what}, found '{}'", t.text)))
    }

    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(|t| t.text)
    }

    fn done(&self) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            Some(t) => Err(self.err_at(t, format!("unexpected '{}'", t.text))),
            None => Ok(()),
        }
    }
}

struct Names {
    alphabet: Option<Alphabet>,
    controls: HashMap<String, Control>,
}

impl Names {
    fn alphabet(&self, c: &Cursor<'_>) -> Result<&Alphabet, ParseError> {
        self.alphabet
            .as_ref()
            .ok_or_else(|| c.err("alphabet not declared"))
    }

    fn letter(&self, c: &mut Cursor<'_>) -> Result<Symbol, ParseError> {
        let t = c.next("a letter")?;
        self.alphabet(c)?
            .symbol(t.text)
            .ok_or_else(|| c.err_at(&t, format!("unknown letter '{}'", t.text)))
    }

    fn control(&self, c: &mut Cursor<'_>) -> Result<Control, ParseError> {
        let t = c.next("a control")?;
        if self.controls.is_empty() {
            return Err(c.err_at(&t, "controls not declared"));
        }
        self.controls
            .get(t.text)
            .copied()
            .ok_or_else(|| c.err_at(&t, format!("unknown control '{}'", t.text)))
    }

    fn order(&self, c: &mut Cursor<'_>) -> Result<u8, ParseError> {
        c.number("an order")
    }

    fn op(&self, c: &mut Cursor<'_>) -> Result<StackOp, ParseError> {
        let t = c.next("an operation")?;
        Ok(match t.text {
            "noop" => StackOp::Noop,
            "rew" => StackOp::Rew(self.letter(c)?),
            "push" => {
                let b = self.letter(c)?;
                StackOp::Push(b, self.order(c)?)
            }
            "copy" => StackOp::Copy(self.order(c)?),
            "pop" => StackOp::Pop(self.order(c)?),
            "collapse" => StackOp::Collapse(self.order(c)?),
            other => return Err(c.err_at(&t, format!("unknown operation '{other}'"))),
        })
    }

    fn rule(&self, c: &mut Cursor<'_>) -> Result<Rule, ParseError> {
        let src = self.control(c)?;
        let letter = self.letter(c)?;
        let op = self.op(c)?;
        let dst = self.control(c)?;
        Ok(Rule::new(src, letter, op, dst))
    }
}

/// Parses a system file.
pub fn parse_system(text: &str) -> Result<SystemFile, ParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let toks = tokenize(l, i + 1);
            Cursor {
                toks,
                pos: 0,
                line: i + 1,
                end_col: l.chars().count() + 1,
            }
        })
        .filter(|c| !c.toks.is_empty());
    let mut h = lines.next().ok_or(ParseError {
        line: 1,
        col: 1,
        msg: "empty file".into(),
    })?;
    h.keyword("cpds")?;
    h.keyword("order")?;
    let order_tok = h.toks.get(h.pos).copied();
    let order: u8 = h.number("an order")?;
    if order == 0 {
        return Err(h.err_at(&order_tok.unwrap(), "order must be positive"));
    }
    h.keyword("stacks")?;
    let stacks_tok = h.toks.get(h.pos).copied();
    let m: usize = h.number("a stack count")?;
    if m == 0 {
        return Err(h.err_at(&stacks_tok.unwrap(), "at least one stack is needed"));
    }
    h.keyword("mode")?;
    let mt = h.next("a mode")?;
    let mode = match mt.text {
        "single" => Mode::Single,
        "ordered" => Mode::Ordered,
        "phase" => Mode::Phase(h.number("a phase bound")?),
        "scope" => Mode::Scope(h.number("a scope bound")?),
        other => return Err(h.err_at(&mt, format!("unknown mode '{other}'"))),
    };
    h.done()?;

    let mut names = Names {
        alphabet: None,
        controls: HashMap::new(),
    };
    let mut control_list: Vec<String> = Vec::new();
    let mut rules: Vec<Vec<Rule>> = vec![Vec::new(); m];
    let mut current: Option<usize> = None;
    let mut languages: HashMap<String, Arc<FiniteLanguage>> = HashMap::new();
    let mut extended = Vec::new();
    let mut targets = Vec::new();
    let mut query = None;
    let mut rule_pos: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
    for mut c in lines {
        let first = c.toks[0];
        match first.text {
            "alphabet" => {
                c.pos += 1;
                if names.alphabet.is_some() {
                    return Err(c.err_at(&first, "alphabet declared twice"));
                }
                let letters: Vec<String> = c.toks[1..].iter().map(|t| t.text.to_string()).collect();
                names.alphabet =
                    Some(Alphabet::new(letters).map_err(|e| c.err_at(&first, e.to_string()))?);
            }
            "controls" => {
                if !control_list.is_empty() {
                    return Err(c.err_at(&first, "controls declared twice"));
                }
                for t in &c.toks[1..] {
                    if names
                        .controls
                        .insert(t.text.to_string(), Control(control_list.len() as u32))
                        .is_some()
                    {
                        return Err(c.err_at(t, format!("duplicate control '{}'", t.text)));
                    }
                    control_list.push(t.text.to_string());
                }
                if control_list.is_empty() {
                    return Err(c.err_at(&first, "no controls"));
                }
            }
            "stack" => {
                c.pos += 1;
                let t = c.toks.get(1).copied();
                let i: usize = c.number("a stack number")?;
                if i == 0 || i > m {
                    return Err(c.err_at(&t.unwrap(), format!("stack number must be in 1..={m}")));
                }
                c.done()?;
                current = Some(i - 1);
            }
            "language" => {
                c.pos += 1;
                let name = c.next("a language name")?;
                c.keyword("=")?;
                let mut words = vec![Vec::new()];
                loop {
                    words.last_mut().unwrap().push(names.rule(&mut c)?);
                    match c.peek() {
                        None => break,
                        Some(",") => c.pos += 1,
                        Some("|") => {
                            c.pos += 1;
                            words.push(Vec::new());
                        }
                        Some(_) => return Err(c.err("expected ',' or '|'")),
                    }
                }
                let lang = FiniteLanguage::new(name.text, words)
                    .map_err(|e| c.err_at(&name, e.to_string()))?;
                languages.insert(name.text.to_string(), Arc::new(lang));
            }
            "extended" => {
                c.pos += 1;
                if m != 1 {
                    return Err(c.err_at(&first, "extended rules need a single stack"));
                }
                let src = names.control(&mut c)?;
                let letter = names.letter(&mut c)?;
                let lt = c.next("a language name")?;
                let lang = languages
                    .get(lt.text)
                    .cloned()
                    .ok_or_else(|| c.err_at(&lt, format!("unknown language '{}'", lt.text)))?;
                let dst = names.control(&mut c)?;
                c.done()?;
                extended.push(ExtRule {
                    src,
                    letter,
                    lang,
                    dst,
                });
            }
            "target" => {
                c.pos += 1;
                if m != 1 {
                    return Err(c.err_at(&first, "target blocks need a single stack"));
                }
                let q = names.control(&mut c)?;
                let kt = c.next("'any', 'empty' or 'top'")?;
                let t = match kt.text {
                    "any" => Target::Any,
                    "empty" => Target::Empty,
                    "top" => Target::Top(names.letter(&mut c)?),
                    other => return Err(c.err_at(&kt, format!("unknown target '{other}'"))),
                };
                c.done()?;
                targets.push((q, t));
            }
            "query" => {
                c.pos += 1;
                let a = names.control(&mut c)?;
                let b = names.control(&mut c)?;
                c.done()?;
                query = Some((a, b));
            }
            _ => {
                let Some(i) = current else {
                    return Err(c.err_at(&first, format!("unexpected '{}'", first.text)));
                };
                let r = names.rule(&mut c)?;
                c.done()?;
                rules[i].push(r);
                rule_pos[i].push((first.line, first.col));
            }
        }
    }
    let alphabet = names.alphabet.ok_or(ParseError {
        line: 1,
        col: 1,
        msg: "missing alphabet".into(),
    })?;
    if control_list.is_empty() {
        return Err(ParseError {
            line: 1,
            col: 1,
            msg: "missing controls".into(),
        });
    }
    for (i, rs) in rules.iter().enumerate() {
        for (j, r) in rs.iter().enumerate() {
            let one = Mcpds {
                alphabet: alphabet.clone(),
                controls: control_list.clone(),
                order,
                stacks: vec![vec![*r]],
                mode: Mode::Single,
            };
            if let Err(e) = one.validate() {
                let (line, col) = rule_pos[i][j];
                return Err(ParseError {
                    line,
                    col,
                    msg: e.to_string(),
                });
            }
        }
    }
    let sys = Mcpds::new(alphabet, control_list, order, rules, mode).map_err(|e| ParseError {
        line: 1,
        col: 1,
        msg: e.to_string(),
    })?;
    Ok(SystemFile {
        sys,
        extended,
        targets,
        query,
    })
}

/// Renders a system in the file format; `parse_system` reads it back.
pub fn render_system(sys: &Mcpds, query: Option<(Control, Control)>) -> String {
    let mode = match sys.mode {
        Mode::Single => "single".to_string(),
        Mode::Ordered => "ordered".to_string(),
        Mode::Phase(z) => format!("phase {z}"),
        Mode::Scope(z) => format!("scope {z}"),
    };
    let mut out = format!(
        "cpds order {} stacks {} mode {mode}\n",
        sys.order,
        sys.num_stacks()
    );
    let letters: Vec<&str> = sys
        .alphabet
        .letters()
        .map(|a| sys.alphabet.name(a))
        .collect();
    out.push_str(&format!("alphabet {}\n", letters.join(" ")));
    out.push_str(&format!("controls {}\n", sys.controls.join(" ")));
    for (i, rs) in sys.stacks.iter().enumerate() {
        out.push_str(&format!("stack {}\n", i + 1));
        for r in rs {
            out.push_str(&format!("  {}\n", sys.render_rule(r)));
        }
    }
    if let Some((a, b)) = query {
        out.push_str(&format!(
            "query {} {}\n",
            sys.control_name(a),
            sys.control_name(b)
        ));
    }
    out
}

/// Parses `<q, w_1, ..., w_m>` with stacks in bracket notation.
pub fn parse_config(
    text: &str,
    controls: &[String],
    alphabet: &Alphabet,
) -> Result<cpds::model::Configuration, String> {
    let t = text.trim();
    let inner = t
        .strip_prefix('<')
        .and_then(|s| s.strip_suffix('>'))
        .ok_or("a configuration is written <q, w_1, ..., w_m>")?;
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in inner.char_indices() {
        match c {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&inner[start..]);
    let name = parts[0].trim();
    let control = controls
        .iter()
        .position(|c| c == name)
        .map(|i| Control(i as u32))
        .ok_or_else(|| format!("unknown control '{name}'"))?;
    let stacks = parts[1..]
        .iter()
        .map(|p| {
            cpds::hostack::Stack::parse_notation(p.trim(), alphabet).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(cpds::model::Configuration { control, stacks })
}
