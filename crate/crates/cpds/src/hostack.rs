//! Annotated higher-order stacks.
//!
//! An order-1 stack is a sequence of characters, each optionally carrying an
//! annotation stack. An order-k stack (k ≥ 2) is a sequence of order-(k-1)
//! stacks. Stacks are immutable and hash-consed: structurally equal stacks are
//! represented by the same node, so equality and hashing are constant time and
//! `copy_k` or annotations never duplicate memory.
//!
//! Every substack and character also carries round tags used by scope-bounded
//! systems (see [`apply_op_rounded`]). Plain stacks keep every tag at 0.
//!
//! # Textual encodings
//!
//! Bracket notation, used by the CLI and golden files, writes every stack with
//! its order as a subscript and annotations in braces:
//!
//! ```text
//! stack := '[' item* ']_' order
//! item  := stack | char
//! char  := letter ( '^{' stack '}' )?
//! ```
//!
//! Items are separated by whitespace, the bottom symbol is `⊥` (alias `bot`).
//! For example `[[c^{[[b]_1]_2} a]_1 [b]_1]_2`.
//!
//! The tree encoding ([`Stack::encode_tree`]) is the edge-labelled tree word
//! over the tokens `⟨k`, `⟩k` and letters, with the brackets of the outermost
//! order omitted. An annotation is written `a^{ ⟨j ... ⟩j }` and keeps its own
//! outer bracket so that its order is explicit. `⊥_2` encodes as `⟨1 ⊥ ⟩1`.

use std::collections::HashMap;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::{Arc, LazyLock, Weak};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Round tag: pop-round or collapse-round of a stack element.
pub type Tag = u32;

/// Errors raised by stack construction, operations and parsing.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StackError {
    #[error("top of stack is undefined")]
    UndefinedTop,
    #[error("order mismatch: expected {expected}, found {found}")]
    OrderMismatch { expected: u8, found: u8 },
    #[error("operation undefined: {0}")]
    UndefinedOperation(&'static str),
    #[error("parse error at offset {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("invalid alphabet: {0}")]
    Alphabet(String),
}

/// A stack symbol. Symbol 0 is the bottom symbol `⊥`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Symbol(pub u16);

impl Symbol {
    pub const BOTTOM: Symbol = Symbol(0);

    pub fn is_bottom(self) -> bool {
        self == Symbol::BOTTOM
    }
}

/// A finite stack alphabet with the reserved bottom symbol at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    names: Vec<String>,
}

impl Alphabet {
    pub const BOTTOM_NAME: &'static str = "⊥";

    /// Builds an alphabet from letter names; `⊥` is added implicitly.
    pub fn new<I, S>(letters: I) -> Result<Self, StackError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names = vec![Self::BOTTOM_NAME.to_string()];
        for l in letters {
            let l = l.into();
            if !is_ident(&l) || l == "bot" {
                return Err(StackError::Alphabet(format!("bad letter name {l:?}")));
            }
            if names.contains(&l) {
                return Err(StackError::Alphabet(format!("duplicate letter {l:?}")));
            }
            names.push(l);
        }
        if names.len() > u16::MAX as usize {
            return Err(StackError::Alphabet("too many letters".into()));
        }
        Ok(Alphabet { names })
    }

    /// Number of symbols including `⊥`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All symbols including `⊥`.
    pub fn symbols(&self) -> impl Iterator<Item = Symbol> + '_ {
        (0..self.names.len() as u16).map(Symbol)
    }

    /// All symbols except `⊥`.
    pub fn letters(&self) -> impl Iterator<Item = Symbol> + '_ {
        (1..self.names.len() as u16).map(Symbol)
    }

    pub fn name(&self, s: Symbol) -> &str {
        &self.names[s.0 as usize]
    }

    pub fn symbol(&self, name: &str) -> Option<Symbol> {
        if name == "bot" || name == "_|_" {
            return Some(Symbol::BOTTOM);
        }
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| Symbol(i as u16))
    }

    pub fn names(&self) -> &[String] {
        &self.names[1..]
    }
}

pub(crate) fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_alphanumeric() || c == '_' || c == '\'' || c == '.')
}

/// Stack operations. Orders are 1-based.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum StackOp {
    Noop,
    Rew(Symbol),
    Push(Symbol, u8),
    Copy(u8),
    Pop(u8),
    Collapse(u8),
}

impl StackOp {
    /// Consuming operations are `pop_k` and `collapse_k`.
    pub fn is_consuming(&self) -> bool {
        matches!(self, StackOp::Pop(_) | StackOp::Collapse(_))
    }

    /// Checks that the operation belongs to the operation set of order `n`.
    pub fn check_order(&self, n: u8) -> Result<(), StackError> {
        let ok = match *self {
            StackOp::Noop | StackOp::Rew(_) => true,
            StackOp::Push(_, k) | StackOp::Pop(k) | StackOp::Collapse(k) => (1..=n).contains(&k),
            StackOp::Copy(k) => (2..=n).contains(&k),
        };
        if ok {
            Ok(())
        } else {
            Err(StackError::UndefinedOperation(
                "operation order out of range",
            ))
        }
    }

    /// Renders the operation in the rule syntax `pop k | copy k | ...`.
    pub fn render(&self, alphabet: &Alphabet) -> String {
        match *self {
            StackOp::Noop => "noop".into(),
            StackOp::Rew(b) => format!("rew {}", alphabet.name(b)),
            StackOp::Push(b, k) => format!("push {} {k}", alphabet.name(b)),
            StackOp::Copy(k) => format!("copy {k}"),
            StackOp::Pop(k) => format!("pop {k}"),
            StackOp::Collapse(k) => format!("collapse {k}"),
        }
    }
}

/// An immutable, interned stack.
#[derive(Clone)]
pub struct Stack(Arc<Node>);

struct Node {
    order: u8,
    body: Body,
    hash: u64,
    size: u64,
    len: u32,
}

#[derive(PartialEq, Eq, Hash)]
enum Body {
    Empty,
    Cons(Elem, Stack),
}

/// An entry of a stack: a character (order 1) or a substack with its pop-round.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Elem {
    Char(Char),
    Stack(Stack, Tag),
}

/// A character with its optional annotation and round tags.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Char {
    pub symbol: Symbol,
    pub annotation: Option<Annotation>,
    pub pop_round: Tag,
    pub collapse_round: Tag,
}

/// An annotation stack together with the pop-round it is restored with.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Annotation {
    pub stack: Stack,
    pub pop_round: Tag,
}

impl Char {
    pub fn plain(symbol: Symbol) -> Char {
        Char {
            symbol,
            annotation: None,
            pop_round: 0,
            collapse_round: 0,
        }
    }

    pub fn annotated(symbol: Symbol, annotation: Stack) -> Char {
        Char {
            symbol,
            annotation: Some(Annotation {
                stack: annotation,
                pop_round: 0,
            }),
            pop_round: 0,
            collapse_round: 0,
        }
    }
}

impl Elem {
    fn size(&self) -> u64 {
        match self {
            Elem::Char(c) => {
                1u64.saturating_add(c.annotation.as_ref().map_or(0, |a| a.stack.size()))
            }
            Elem::Stack(s, _) => s.size(),
        }
    }

    fn order(&self) -> u8 {
        match self {
            Elem::Char(_) => 0,
            Elem::Stack(s, _) => s.order(),
        }
    }

    /// Pop-round of the entry.
    pub fn pop_round(&self) -> Tag {
        match self {
            Elem::Char(c) => c.pop_round,
            Elem::Stack(_, t) => *t,
        }
    }
}

impl PartialEq for Stack {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for Stack {}

impl Hash for Stack {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl fmt::Debug for Stack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.notation_raw())
    }
}

struct Interner {
    table: HashMap<u64, Vec<Weak<Node>>>,
    entries: usize,
    next_purge: usize,
}

static INTERNER: LazyLock<Mutex<Interner>> = LazyLock::new(|| {
    Mutex::new(Interner {
        table: HashMap::new(),
        entries: 0,
        next_purge: 1 << 16,
    })
});

fn intern(order: u8, body: Body) -> Stack {
    let mut h = DefaultHasher::new();
    order.hash(&mut h);
    body.hash(&mut h);
    let hash = h.finish();
    let mut guard = INTERNER.lock();
    if let Some(bucket) = guard.table.get(&hash) {
        for w in bucket {
            if let Some(n) = w.upgrade() {
                if n.order == order && n.body == body {
                    return Stack(n);
                }
            }
        }
    }
    let (size, len) = match &body {
        Body::Empty => (1, 0),
        Body::Cons(e, t) => (t.size().saturating_add(e.size()), t.len() as u32 + 1),
    };
    let node = Arc::new(Node {
        order,
        body,
        hash,
        size,
        len,
    });
    guard
        .table
        .entry(hash)
        .or_default()
        .push(Arc::downgrade(&node));
    guard.entries += 1;
    if guard.entries >= guard.next_purge {
        guard.table.retain(|_, b| {
            b.retain(|w| w.strong_count() > 0);
            !b.is_empty()
        });
        let live: usize = guard.table.values().map(Vec::len).sum();
        guard.entries = live;
        guard.next_purge = (live * 2).max(1 << 16);
    }
    Stack(node)
}

/// Result of a round-aware operation: the new stack and, for consuming
/// operations, the round tag that the scope check inspects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied {
    pub stack: Stack,
    pub consumed_round: Option<Tag>,
}

impl Stack {
    /// The empty stack `[]_order`.
    pub fn empty(order: u8) -> Stack {
        assert!(order >= 1, "stacks have order at least 1");
        intern(order, Body::Empty)
    }

    /// Prepends `elem` to `tail`; the element must have order `tail.order() - 1`.
    pub fn cons(elem: Elem, tail: &Stack) -> Result<Stack, StackError> {
        let expected = tail.order() - 1;
        if elem.order() != expected {
            return Err(StackError::OrderMismatch {
                expected,
                found: elem.order(),
            });
        }
        Ok(intern(tail.order(), Body::Cons(elem, tail.clone())))
    }

    /// Builds a stack from its entries listed top first.
    pub fn from_elems(order: u8, elems: Vec<Elem>) -> Result<Stack, StackError> {
        let mut s = Stack::empty(order);
        for e in elems.into_iter().rev() {
            s = Stack::cons(e, &s)?;
        }
        Ok(s)
    }

    /// The empty stack convention `⊥_1 = [⊥]_1`, `⊥_{k+1} = [⊥_k]_{k+1}`.
    pub fn bottom(order: u8) -> Stack {
        let mut s = Stack::cons(Elem::Char(Char::plain(Symbol::BOTTOM)), &Stack::empty(1)).unwrap();
        for k in 2..=order {
            s = Stack::cons(Elem::Stack(s, 0), &Stack::empty(k)).unwrap();
        }
        s
    }

    pub fn order(&self) -> u8 {
        self.0.order
    }

    pub fn is_empty(&self) -> bool {
        matches!(self.0.body, Body::Empty)
    }

    /// Number of entries of the outermost sequence.
    pub fn len(&self) -> usize {
        self.0.len as usize
    }

    /// Tree size: one per stack node and character, annotations included.
    pub fn size(&self) -> u64 {
        self.0.size
    }

    /// Structural hash, stable across runs.
    pub fn structural_hash(&self) -> u64 {
        self.0.hash
    }

    pub fn split(&self) -> Option<(&Elem, &Stack)> {
        match &self.0.body {
            Body::Empty => None,
            Body::Cons(e, t) => Some((e, t)),
        }
    }

    pub fn tail(&self) -> Option<&Stack> {
        self.split().map(|(_, t)| t)
    }

    /// Entries from top to bottom.
    pub fn iter(&self) -> StackIter<'_> {
        StackIter { cur: self }
    }

    /// `top_k(w)` for `2 ≤ k ≤ n+1`: the topmost order-(k-1) stack.
    pub fn top(&self, k: u8) -> Result<Stack, StackError> {
        let n = self.order();
        if k == n + 1 {
            return Ok(self.clone());
        }
        if k < 2 || k > n + 1 {
            return Err(StackError::OrderMismatch {
                expected: n,
                found: k,
            });
        }
        Ok(self.top_sequence(k)?.clone())
    }

    /// The topmost order-`k` sequence, i.e. `top_{k+1}(w)`, for `k ≤ n`.
    fn top_sequence(&self, k: u8) -> Result<&Stack, StackError> {
        let mut cur = self;
        while cur.order() > k {
            match cur.split() {
                Some((Elem::Stack(u, _), _)) => cur = u,
                _ => return Err(StackError::UndefinedTop),
            }
        }
        Ok(cur)
    }

    /// The entry on top of the topmost order-`k` sequence, with its tags.
    pub fn top_entry(&self, k: u8) -> Result<&Elem, StackError> {
        if k < 1 || k > self.order() {
            return Err(StackError::OrderMismatch {
                expected: self.order(),
                found: k,
            });
        }
        self.top_sequence(k)?
            .split()
            .map(|(e, _)| e)
            .ok_or(StackError::UndefinedTop)
    }

    /// `top_1(w)`: the topmost character.
    pub fn top_char(&self) -> Result<&Char, StackError> {
        match self.top_entry(1)? {
            Elem::Char(c) => Ok(c),
            Elem::Stack(..) => unreachable!("order-1 stacks hold characters"),
        }
    }

    /// `u :_k v`: places `u` (order k-1, or a character when k = 1) on top of
    /// the topmost order-k stack of `v`.
    pub fn compose(u: Elem, k: u8, v: &Stack) -> Result<Stack, StackError> {
        if v.order() < k || u.order() + 1 != k {
            return Err(StackError::OrderMismatch {
                expected: k,
                found: v.order(),
            });
        }
        if v.order() == k {
            return Stack::cons(u, v);
        }
        match v.split() {
            Some((Elem::Stack(h, tag), tail)) => {
                let inner = Stack::compose(u, k, h)?;
                Stack::cons(Elem::Stack(inner, *tag), tail)
            }
            _ => Err(StackError::UndefinedTop),
        }
    }

    /// Rebuilds the stack with `f` replacing the topmost order-`k` sequence.
    fn map_top<R>(
        &self,
        k: u8,
        f: impl FnOnce(&Stack) -> Result<(Stack, R), StackError>,
    ) -> Result<(Stack, R), StackError> {
        if self.order() == k {
            return f(self);
        }
        match self.split() {
            Some((Elem::Stack(u, tag), tail)) => {
                let (inner, r) = u.map_top(k, f)?;
                Ok((Stack::cons(Elem::Stack(inner, *tag), tail)?, r))
            }
            _ => Err(StackError::UndefinedTop),
        }
    }

    /// Rewrites every round tag with `f`.
    pub fn map_tags(&self, f: &dyn Fn(Tag) -> Tag) -> Stack {
        let mut memo = HashMap::new();
        self.map_tags_memo(f, &mut memo)
    }

    fn map_tags_memo(&self, f: &dyn Fn(Tag) -> Tag, memo: &mut HashMap<Stack, Stack>) -> Stack {
        if let Some(s) = memo.get(self) {
            return s.clone();
        }
        let out = match self.split() {
            None => self.clone(),
            Some((e, tail)) => {
                let e2 = match e {
                    Elem::Char(c) => Elem::Char(Char {
                        symbol: c.symbol,
                        annotation: c.annotation.as_ref().map(|a| Annotation {
                            stack: a.stack.map_tags_memo(f, memo),
                            pop_round: f(a.pop_round),
                        }),
                        pop_round: f(c.pop_round),
                        collapse_round: f(c.collapse_round),
                    }),
                    Elem::Stack(s, t) => Elem::Stack(s.map_tags_memo(f, memo), f(*t)),
                };
                let t2 = tail.map_tags_memo(f, memo);
                Stack::cons(e2, &t2).expect("tag rewriting preserves orders")
            }
        };
        memo.insert(self.clone(), out.clone());
        out
    }

    /// The same stack with every tag reset to 0.
    pub fn erase_tags(&self) -> Stack {
        self.map_tags(&|_| 0)
    }

    /// Largest round tag occurring anywhere in the stack.
    pub fn max_tag(&self) -> Tag {
        let mut best = 0;
        self.visit_tags(&mut |t| best = best.max(t));
        best
    }

    fn visit_tags(&self, f: &mut dyn FnMut(Tag)) {
        for e in self.iter() {
            match e {
                Elem::Char(c) => {
                    f(c.pop_round);
                    f(c.collapse_round);
                    if let Some(a) = &c.annotation {
                        f(a.pop_round);
                        a.stack.visit_tags(f);
                    }
                }
                Elem::Stack(s, t) => {
                    f(*t);
                    s.visit_tags(f);
                }
            }
        }
    }

    /// True when the stack equals `⊥_n` up to round tags.
    pub fn is_bottom(&self) -> bool {
        let mut cur = self;
        loop {
            if cur.len() != 1 {
                return false;
            }
            match cur.split() {
                Some((Elem::Stack(u, _), _)) => cur = u,
                Some((Elem::Char(c), _)) => return c.symbol.is_bottom(),
                None => return false,
            }
        }
    }

    /// Checks the bottom-symbol discipline: every order-1 stack ends with a
    /// single unannotated `⊥`, inner sequences are nonempty, annotation
    /// orders are at most `n`. Annotations may be empty stacks.
    pub fn is_well_formed(&self, n: u8) -> bool {
        self.order() <= n && !self.is_empty() && self.well_formed_inner(n)
    }

    fn well_formed_inner(&self, n: u8) -> bool {
        if self.order() == 1 {
            let len = self.len();
            if len == 0 {
                return false;
            }
            for (i, e) in self.iter().enumerate() {
                let Elem::Char(c) = e else { return false };
                let last = i + 1 == len;
                if c.symbol.is_bottom() != last {
                    return false;
                }
                if let Some(a) = &c.annotation {
                    if last || a.stack.order() > n {
                        return false;
                    }
                    if !a.stack.is_empty() && !a.stack.well_formed_inner(n) {
                        return false;
                    }
                }
            }
            true
        } else {
            !self.is_empty()
                && self.iter().all(|e| match e {
                    Elem::Stack(s, _) => s.well_formed_inner(n),
                    Elem::Char(_) => false,
                })
        }
    }

    /// Bracket notation, e.g. `[[a ⊥]_1]_2`.
    pub fn notation(&self, alphabet: &Alphabet) -> String {
        let mut out = String::new();
        self.write_notation(&mut out, &|s| alphabet.name(s).to_string());
        out
    }

    fn notation_raw(&self) -> String {
        let mut out = String::new();
        self.write_notation(&mut out, &|s| {
            if s.is_bottom() {
                Alphabet::BOTTOM_NAME.to_string()
            } else {
                format!("#{}", s.0)
            }
        });
        out
    }

    fn write_notation(&self, out: &mut String, name: &dyn Fn(Symbol) -> String) {
        out.push('[');
        for (i, e) in self.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match e {
                Elem::Char(c) => {
                    out.push_str(&name(c.symbol));
                    if let Some(a) = &c.annotation {
                        out.push_str("^{");
                        a.stack.write_notation(out, name);
                        out.push('}');
                    }
                }
                Elem::Stack(s, _) => s.write_notation(out, name),
            }
        }
        out.push_str("]_");
        out.push_str(&self.order().to_string());
    }

    /// Parses bracket notation; the order is read from the outer subscript.
    pub fn parse_notation(text: &str, alphabet: &Alphabet) -> Result<Stack, StackError> {
        let mut p = NotationParser {
            src: text,
            pos: 0,
            alphabet,
        };
        p.skip_ws();
        let s = p.stack()?;
        p.skip_ws();
        if p.pos != text.len() {
            return Err(p.err("trailing input"));
        }
        Ok(s)
    }

    /// Edge-labelled tree word with the outermost brackets omitted.
    pub fn encode_tree(&self, alphabet: &Alphabet) -> String {
        let mut toks = Vec::new();
        self.tree_tokens(&mut toks, alphabet);
        toks.join(" ")
    }

    fn tree_tokens(&self, toks: &mut Vec<String>, alphabet: &Alphabet) {
        for e in self.iter() {
            match e {
                Elem::Char(c) => match &c.annotation {
                    None => toks.push(alphabet.name(c.symbol).to_string()),
                    Some(a) => {
                        toks.push(format!("{}^{{", alphabet.name(c.symbol)));
                        let j = a.stack.order();
                        toks.push(format!("⟨{j}"));
                        a.stack.tree_tokens(toks, alphabet);
                        toks.push(format!("⟩{j}"));
                        toks.push("}".into());
                    }
                },
                Elem::Stack(s, _) => {
                    let j = s.order();
                    toks.push(format!("⟨{j}"));
                    s.tree_tokens(toks, alphabet);
                    toks.push(format!("⟩{j}"));
                }
            }
        }
    }

    /// Inverse of [`Stack::encode_tree`] for a stack of the given order.
    pub fn decode_tree(word: &str, order: u8, alphabet: &Alphabet) -> Result<Stack, StackError> {
        let mut toks = Vec::new();
        let mut offset = 0;
        for t in word.split_whitespace() {
            let at = word[offset..].find(t).map_or(offset, |i| offset + i);
            offset = at + t.len();
            toks.push((at, t));
        }
        let mut i = 0;
        let s = decode_items(&toks, &mut i, order, alphabet)?;
        if i != toks.len() {
            return Err(StackError::Parse {
                pos: toks[i].0,
                msg: format!("unexpected token {:?}", toks[i].1),
            });
        }
        Ok(s)
    }
}

fn decode_items(
    toks: &[(usize, &str)],
    i: &mut usize,
    order: u8,
    alphabet: &Alphabet,
) -> Result<Stack, StackError> {
    let mut elems = Vec::new();
    while *i < toks.len() {
        let (pos, t) = toks[*i];
        if t.starts_with('⟩') || t == "}" {
            break;
        }
        if let Some(rest) = t.strip_prefix('⟨') {
            let j: u8 = rest.parse().map_err(|_| StackError::Parse {
                pos,
                msg: format!("bad bracket {t:?}"),
            })?;
            if order < 2 || j != order - 1 {
                return Err(StackError::Parse {
                    pos,
                    msg: format!("bracket of order {j} inside order {order}"),
                });
            }
            *i += 1;
            let inner = decode_items(toks, i, j, alphabet)?;
            expect_close(toks, i, j)?;
            elems.push(Elem::Stack(inner, 0));
        } else {
            if order != 1 {
                return Err(StackError::Parse {
                    pos,
                    msg: format!("letter inside order-{order} stack"),
                });
            }
            let (name, annotated) = match t.strip_suffix("^{") {
                Some(n) => (n, true),
                None => (t, false),
            };
            let sym = alphabet.symbol(name).ok_or_else(|| StackError::Parse {
                pos,
                msg: format!("unknown letter {name:?}"),
            })?;
            *i += 1;
            let annotation = if annotated {
                let (p2, open) = *toks.get(*i).ok_or(StackError::Parse {
                    pos,
                    msg: "unterminated annotation".into(),
                })?;
                let j: u8 = open
                    .strip_prefix('⟨')
                    .and_then(|r| r.parse().ok())
                    .ok_or_else(|| StackError::Parse {
                        pos: p2,
                        msg: "annotation must start with a bracket".into(),
                    })?;
                if j == 0 {
                    return Err(StackError::Parse {
                        pos: p2,
                        msg: "order 0".into(),
                    });
                }
                *i += 1;
                let inner = decode_items(toks, i, j, alphabet)?;
                expect_close(toks, i, j)?;
                match toks.get(*i) {
                    Some((_, "}")) => *i += 1,
                    _ => {
                        return Err(StackError::Parse {
                            pos: p2,
                            msg: "missing closing brace".into(),
                        })
                    }
                }
                Some(Annotation {
                    stack: inner,
                    pop_round: 0,
                })
            } else {
                None
            };
            elems.push(Elem::Char(Char {
                symbol: sym,
                annotation,
                pop_round: 0,
                collapse_round: 0,
            }));
        }
    }
    Stack::from_elems(order, elems)
}

fn expect_close(toks: &[(usize, &str)], i: &mut usize, j: u8) -> Result<(), StackError> {
    let want = format!("⟩{j}");
    match toks.get(*i) {
        Some((_, t)) if *t == want => {
            *i += 1;
            Ok(())
        }
        Some((pos, t)) => Err(StackError::Parse {
            pos: *pos,
            msg: format!("expected {want}, found {t:?}"),
        }),
        None => Err(StackError::Parse {
            pos: toks.last().map_or(0, |t| t.0),
            msg: format!("expected {want}"),
        }),
    }
}

pub struct StackIter<'a> {
    cur: &'a Stack,
}

impl<'a> Iterator for StackIter<'a> {
    type Item = &'a Elem;

    fn next(&mut self) -> Option<&'a Elem> {
        let (e, t) = self.cur.split()?;
        self.cur = t;
        Some(e)
    }
}

struct NotationParser<'a> {
    src: &'a str,
    pos: usize,
    alphabet: &'a Alphabet,
}

impl NotationParser<'_> {
    fn err(&self, msg: &str) -> StackError {
        StackError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.src[self.pos..].starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn stack(&mut self) -> Result<Stack, StackError> {
        let start = self.pos;
        if !self.eat("[") {
            return Err(self.err("expected '['"));
        }
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.eat("]_") {
                break;
            }
            match self.peek() {
                Some('[') => items.push(Item::Stack(self.stack()?)),
                Some(_) => items.push(self.char()?),
                None => return Err(self.err("unterminated stack")),
            }
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let order: u8 = self.src[digits_start..self.pos]
            .parse()
            .map_err(|_| self.err("expected order subscript"))?;
        if order == 0 {
            return Err(self.err("order must be positive"));
        }
        let mut elems = Vec::with_capacity(items.len());
        for it in items {
            let e = match it {
                Item::Char(c) if order == 1 => Elem::Char(c),
                Item::Stack(s) if s.order() + 1 == order => Elem::Stack(s, 0),
                _ => {
                    return Err(StackError::Parse {
                        pos: start,
                        msg: format!("entry of wrong order inside order-{order} stack"),
                    })
                }
            };
            elems.push(e);
        }
        Stack::from_elems(order, elems)
    }

    fn char(&mut self) -> Result<Item, StackError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || matches!(c, '[' | ']' | '^' | '{' | '}') {
                break;
            }
            self.pos += c.len_utf8();
        }
        let name = &self.src[start..self.pos];
        if name.is_empty() {
            return Err(self.err("expected a letter"));
        }
        let symbol = self
            .alphabet
            .symbol(name)
            .ok_or_else(|| StackError::Parse {
                pos: start,
                msg: format!("unknown letter {name:?}"),
            })?;
        let annotation = if self.eat("^{") {
            self.skip_ws();
            let s = self.stack()?;
            self.skip_ws();
            if !self.eat("}") {
                return Err(self.err("expected '}'"));
            }
            Some(Annotation {
                stack: s,
                pop_round: 0,
            })
        } else {
            None
        };
        Ok(Item::Char(Char {
            symbol,
            annotation,
            pop_round: 0,
            collapse_round: 0,
        }))
    }
}

enum Item {
    Char(Char),
    Stack(Stack),
}

/// Applies `o` to the order-n stack `w` with plain semantics.
pub fn apply_op(o: StackOp, w: &Stack) -> Result<Stack, StackError> {
    apply_op_rounded(o, w, 0).map(|a| a.stack)
}

/// Applies `o` to `w` during round `z`, maintaining pop- and collapse-rounds.
///
/// `copy_k` tags the fresh copy with `z`; `push_b^k` tags `b` with pop-round
/// `z` and collapse-round equal to the pop-round of `top_k(w)`. For `pop_k`
/// the returned tag is the pop-round of the removed entry, for `collapse_k`
/// the collapse-round of the top character.
///
/// An operation is undefined when its result has no top character. This
/// covers popping the last entry of a sequence and collapsing to an empty
/// annotation.
pub fn apply_op_rounded(o: StackOp, w: &Stack, z: Tag) -> Result<Applied, StackError> {
    let n = w.order();
    o.check_order(n)?;
    let top = w.top_char()?.clone();
    let done = |stack: Stack, consumed_round: Option<Tag>| -> Result<Applied, StackError> {
        stack.top_char()?;
        Ok(Applied {
            stack,
            consumed_round,
        })
    };
    match o {
        StackOp::Noop => done(w.clone(), None),
        StackOp::Rew(b) => {
            if b.is_bottom() || top.symbol.is_bottom() {
                return Err(StackError::UndefinedOperation(
                    "rewrite involving the bottom symbol",
                ));
            }
            let (s, ()) = w.map_top(1, |s| {
                let (_, tail) = s.split().ok_or(StackError::UndefinedTop)?;
                let c = Char {
                    symbol: b,
                    ..top.clone()
                };
                Ok((Stack::cons(Elem::Char(c), tail)?, ()))
            })?;
            done(s, None)
        }
        StackOp::Push(b, k) => {
            if b.is_bottom() {
                return Err(StackError::UndefinedOperation("push of the bottom symbol"));
            }
            let annotation = if k == 1 {
                None
            } else {
                let seq = w.top_sequence(k)?;
                let rest = seq.tail().ok_or(StackError::UndefinedTop)?.clone();
                let pop_round = if k == n {
                    0
                } else {
                    w.top_entry(k + 1)?.pop_round()
                };
                Some(Annotation {
                    stack: rest,
                    pop_round,
                })
            };
            let collapse_round = w.top_entry(k)?.pop_round();
            let c = Char {
                symbol: b,
                annotation,
                pop_round: z,
                collapse_round,
            };
            done(Stack::compose(Elem::Char(c), 1, w)?, None)
        }
        StackOp::Copy(k) => {
            let (s, ()) = w.map_top(k, |s| {
                let (e, _) = s.split().ok_or(StackError::UndefinedTop)?;
                let Elem::Stack(u, _) = e else {
                    return Err(StackError::UndefinedTop);
                };
                Ok((Stack::cons(Elem::Stack(u.clone(), z), s)?, ()))
            })?;
            done(s, None)
        }
        StackOp::Pop(k) => {
            if k == 1 && top.symbol.is_bottom() {
                return Err(StackError::UndefinedOperation("pop of the bottom symbol"));
            }
            let (s, tag) = w.map_top(k, |s| {
                let (e, tail) = s.split().ok_or(StackError::UndefinedTop)?;
                Ok((tail.clone(), e.pop_round()))
            })?;
            done(s, Some(tag))
        }
        StackOp::Collapse(k) => {
            let a = top
                .annotation
                .as_ref()
                .ok_or(StackError::UndefinedOperation(
                    "collapse on an unannotated symbol",
                ))?;
            if a.stack.order() != k {
                return Err(StackError::UndefinedOperation(
                    "collapse order differs from annotation order",
                ));
            }
            let s = if k == n {
                a.stack.clone()
            } else {
                let (s, ()) = w.map_top(k + 1, |s| {
                    let (_, tail) = s.split().ok_or(StackError::UndefinedTop)?;
                    Ok((
                        Stack::cons(Elem::Stack(a.stack.clone(), a.pop_round), tail)?,
                        (),
                    ))
                })?;
                s
            };
            done(s, Some(top.collapse_round))
        }
    }
}
