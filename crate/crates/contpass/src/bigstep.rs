//! The three big-step evaluators — naive, intermediate (minimal stores)
//! and optimised (minimal stores + compact closures) — together with the
//! semantic objects they share: stores, variable environments, split
//! environments, closures and function environments.
//!
//! The three evaluators are deliberately written as three separate
//! recursive functions, each a direct transcription of its rule set, so
//! that the differential harness compares genuinely independent
//! implementations rather than one parameterised code path.

use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{BinOp, Expr, Ident, Term, Value};

/// A store location. Allocated from a per-run monotone counter, so a
/// location is never reused within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Location(pub u64);

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0)
    }
}

/// A finite map from locations to values. Lookup of an unbound location
/// is an error at the use site, never a default.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Store {
    bindings: std::collections::BTreeMap<Location, Value>,
}

impl Store {
    pub fn new() -> Store {
        Store::default()
    }

    pub fn get(&self, l: Location) -> Option<Value> {
        self.bindings.get(&l).copied()
    }

    pub fn contains(&self, l: Location) -> bool {
        self.bindings.contains_key(&l)
    }

    /// The paper's single extend-or-modify operator `s{l -> v}`.
    pub fn update(&mut self, l: Location, v: Value) {
        self.bindings.insert(l, v);
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn domain(&self) -> BTreeSet<Location> {
        self.bindings.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Location, Value)> + '_ {
        self.bindings.iter().map(|(l, v)| (*l, *v))
    }

    pub fn restricted_to(&self, dom: &BTreeSet<Location>) -> Store {
        Store {
            bindings: self
                .bindings
                .iter()
                .filter(|(l, _)| dom.contains(l))
                .map(|(l, v)| (*l, *v))
                .collect(),
        }
    }
}

impl fmt::Display for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (l, v)) in self.bindings.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{l} -> {v}")?;
        }
        write!(f, "}}")
    }
}

/// An environment of variables: an ordered shadowing list, later entries
/// shadow earlier ones. Order matters because the rules manipulate
/// concatenations such as `rhoT . (x,l) . rho`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VarEnv {
    entries: Vec<(Ident, Location)>,
}

impl VarEnv {
    pub fn new() -> VarEnv {
        VarEnv::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Ident, Location)>) -> VarEnv {
        VarEnv {
            entries: pairs.into_iter().collect(),
        }
    }

    pub fn push(&mut self, x: Ident, l: Location) {
        self.entries.push((x, l));
    }

    pub fn lookup(&self, x: &str) -> Option<Location> {
        self.entries
            .iter()
            .rev()
            .find(|(y, _)| y == x)
            .map(|(_, l)| *l)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn domain(&self) -> BTreeSet<&Ident> {
        self.entries.iter().map(|(x, _)| x).collect()
    }

    /// Image of the environment as a partial function: the locations of
    /// visible bindings only, shadowed entries excluded.
    pub fn image(&self) -> BTreeSet<Location> {
        self.domain()
            .into_iter()
            .filter_map(|x| self.lookup(x))
            .collect()
    }

    /// Concatenation where `self` shadows `rest`.
    pub fn over(&self, rest: &VarEnv) -> VarEnv {
        let mut entries = rest.entries.clone();
        entries.extend(self.entries.iter().cloned());
        VarEnv { entries }
    }

    /// Restriction of the domain: every entry for the given names removed.
    pub fn without(&self, names: &[Ident]) -> VarEnv {
        VarEnv {
            entries: self
                .entries
                .iter()
                .filter(|(x, _)| !names.contains(x))
                .cloned()
                .collect(),
        }
    }
}

impl fmt::Display for VarEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, (x, l)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x} -> {l}")?;
        }
        write!(f, "]")
    }
}

/// A split environment `<tail | rest>`: bindings in `tail` may be
/// reclaimed once the current term has been reduced. Effective lookup is
/// on the concatenation, `tail` first.
#[derive(Debug, Clone)]
pub struct SplitEnv<'a> {
    pub tail: &'a VarEnv,
    pub rest: &'a VarEnv,
}

impl SplitEnv<'_> {
    pub fn lookup(&self, x: &str) -> Option<Location> {
        self.tail.lookup(x).or_else(|| self.rest.lookup(x))
    }
}

/// A function closure. In compact mode no parameter of the closure
/// appears in its captured variable environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Closure {
    pub params: Vec<Ident>,
    pub body: Term,
    pub env: VarEnv,
    pub funs: FunEnv,
}

impl Closure {
    pub fn is_compact(&self) -> bool {
        self.params.iter().all(|p| self.env.lookup(p).is_none()) && self.funs.is_compact()
    }
}

/// An environment of functions: a persistent association list from names
/// to closures, the most recent binding shadowing earlier ones. Sharing
/// matters: closures capture whole function environments, and copying
/// them eagerly would blow up on nested definitions.
#[derive(Debug, Clone, Default)]
pub struct FunEnv {
    head: Option<Rc<FunEnvNode>>,
}

#[derive(Debug)]
struct FunEnvNode {
    name: Ident,
    closure: Rc<Closure>,
    rest: FunEnv,
}

impl FunEnv {
    pub fn new() -> FunEnv {
        FunEnv::default()
    }

    pub fn extend(&self, name: Ident, closure: Rc<Closure>) -> FunEnv {
        FunEnv {
            head: Some(Rc::new(FunEnvNode {
                name,
                closure,
                rest: self.clone(),
            })),
        }
    }

    pub fn lookup(&self, name: &str) -> Option<&Rc<Closure>> {
        let mut cur = self;
        while let Some(node) = &cur.head {
            if node.name == name {
                return Some(&node.closure);
            }
            cur = &node.rest;
        }
        None
    }

    pub fn is_empty(&self) -> bool {
        self.head.is_none()
    }

    pub fn domain(&self) -> BTreeSet<Ident> {
        let mut out = BTreeSet::new();
        let mut cur = self;
        while let Some(node) = &cur.head {
            out.insert(node.name.clone());
            cur = &node.rest;
        }
        out
    }

    /// Visible bindings, shadowed entries excluded, in first-seen order.
    pub fn visible(&self) -> Vec<(&Ident, &Rc<Closure>)> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut cur = self;
        while let Some(node) = &cur.head {
            if seen.insert(&node.name) {
                out.push((&node.name, &node.closure));
            }
            cur = &node.rest;
        }
        out
    }

    pub fn is_compact(&self) -> bool {
        self.visible().iter().all(|(_, c)| c.is_compact())
    }
}

/// Equality as partial functions: same visible bindings.
impl PartialEq for FunEnv {
    fn eq(&self, other: &FunEnv) -> bool {
        let a = self.visible();
        let mut b = other.visible();
        if a.len() != b.len() {
            return false;
        }
        b.sort_by_key(|(n, _)| n.clone());
        let mut a = a;
        a.sort_by_key(|(n, _)| n.clone());
        a.iter()
            .zip(b.iter())
            .all(|((n1, c1), (n2, c2))| n1 == n2 && c1 == c2)
    }
}

impl Eq for FunEnv {}

/// `Env(F)`: every variable environment reachable through the closures of
/// `F`, recursively.
pub fn env_environments(funs: &FunEnv) -> Vec<&VarEnv> {
    let mut out = Vec::new();
    fn go<'a>(funs: &'a FunEnv, out: &mut Vec<&'a VarEnv>) {
        for (_, c) in funs.visible() {
            out.push(&c.env);
            go(&c.funs, out);
        }
    }
    go(funs, &mut out);
    out
}

/// `Loc(F)`: the union of the images of all environments in `Env(F)`.
pub fn env_locations(funs: &FunEnv) -> BTreeSet<Location> {
    env_environments(funs)
        .into_iter()
        .flat_map(|e| e.image())
        .collect()
}

/// The cleaning operator: `s` restricted to `dom(s) \ Im(env)`.
pub fn gc_clean(env: &VarEnv, s: &Store) -> Store {
    let image = env.image();
    let dom: BTreeSet<Location> = s.domain().difference(&image).copied().collect();
    s.restricted_to(&dom)
}

/// Store extension: `s <= t` iff `t` restricted to `dom(s)` equals `s`.
pub fn store_leq(s: &Store, t: &Store) -> bool {
    s.iter().all(|(l, v)| t.get(l) == Some(v))
}

/// True iff no two variable names across the environments map to the same
/// location.
pub fn check_aliasing_free(envs: &[&VarEnv]) -> bool {
    for a in envs {
        for b in envs {
            for x in a.domain() {
                for y in b.domain() {
                    if a.lookup(x) == b.lookup(y) && x != y {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// The canonical compact environment: each closure's captured variables
/// restricted by its own parameters, nested environments recursively
/// compacted.
pub fn close_env(funs: &FunEnv) -> FunEnv {
    let mut out = FunEnv::new();
    // Rebuild in reverse so first-seen (visible) order is preserved.
    for (name, c) in funs.visible().into_iter().rev() {
        let compacted = Closure {
            params: c.params.clone(),
            body: c.body.clone(),
            env: c.env.without(&c.params),
            funs: close_env(&c.funs),
        };
        out = out.extend(name.clone(), Rc::new(compacted));
    }
    out
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("fuel exhausted: the term did not finish within the step budget")]
    FuelExhausted,
    #[error("unbound variable `{0}`")]
    UnboundVar(Ident),
    #[error("call to undefined function `{0}`")]
    UnboundFun(Ident),
    #[error("variable `{0}` is bound to location {1} which is not in the store")]
    DanglingLocation(Ident, Location),
    #[error("type error: {0}")]
    TypeError(String),
    #[error("arity mismatch calling `{fun}`: expected {expected} arguments, got {got}")]
    ArityMismatch {
        fun: Ident,
        expected: usize,
        got: usize,
    },
    #[error("monitor violation ({monitor}) at step {step}: {detail}")]
    MonitorViolation {
        monitor: &'static str,
        step: u64,
        detail: String,
    },
}

/// Runtime invariant monitors for the optimised evaluator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Monitors {
    /// Check `Env(F) + {rho, rhoT}` aliasing-free at every (call).
    pub aliasing: bool,
    /// Check every closure built at a (letrec) is compact.
    pub compact: bool,
}

impl Monitors {
    pub fn all() -> Monitors {
        Monitors {
            aliasing: true,
            compact: true,
        }
    }
}

/// Deliberate evaluator defects, used by the harness sanity checks to
/// prove the differential suites can detect real bugs. Never enabled on a
/// normal run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Skip the store cleaning in the (val)/(var) rules of the
    /// intermediate and optimised evaluators.
    DropGcAtVal,
    /// Evaluate the first part of a (seq) under the unsplit tail
    /// environment instead of demoting it to the non-tail side.
    SwapSeqEnvs,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub fuel: u64,
    pub monitors: Monitors,
    /// Record one `TraceRow` per rule application.
    pub trace: bool,
    /// Record the rule-input function environment at every (call).
    pub record_call_envs: bool,
    /// Record (store at call entry, store after call) at every (call).
    pub record_call_stores: bool,
    pub fault: Option<Fault>,
}

impl EvalOptions {
    pub fn with_fuel(fuel: u64) -> EvalOptions {
        EvalOptions {
            fuel,
            monitors: Monitors::default(),
            trace: false,
            record_call_envs: false,
            record_call_stores: false,
            fault: None,
        }
    }
}

pub const DEFAULT_FUEL: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvalStats {
    pub steps: u64,
    pub max_store: usize,
    pub fresh_allocated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub rule: &'static str,
    pub store_size: usize,
    pub env_depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub value: Value,
    pub final_store: Store,
    pub stats: EvalStats,
    pub trace: Vec<TraceRow>,
    /// Rule-input function environments of each (call), in firing order.
    pub call_fun_envs: Vec<FunEnv>,
    pub call_stores: Vec<(Store, Store)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    Naive,
    Intermediate,
    Optimised,
}

impl Semantics {
    pub fn name(self) -> &'static str {
        match self {
            Semantics::Naive => "naive",
            Semantics::Intermediate => "intermediate",
            Semantics::Optimised => "optimised",
        }
    }
}

/// Evaluates a pure expression through a variable resolver.
pub(crate) fn eval_expr_with(
    e: &Expr,
    look: &mut dyn FnMut(&str) -> Result<Value, EvalError>,
) -> Result<Value, EvalError> {
    match e {
        Expr::Lit(v) => Ok(*v),
        Expr::Var(x) => look(x),
        Expr::BinOp(op, l, r) => {
            let lv = eval_expr_with(l, look)?;
            let rv = eval_expr_with(r, look)?;
            let (Value::Int(a), Value::Int(b)) = (lv, rv) else {
                return Err(EvalError::TypeError(format!(
                    "operator `{}` needs integer operands, got {lv} and {rv}",
                    op.symbol()
                )));
            };
            Ok(match op {
                BinOp::Add => Value::Int(a.wrapping_add(b)),
                BinOp::Sub => Value::Int(a.wrapping_sub(b)),
                BinOp::Lt => Value::Bool(a < b),
                BinOp::Eq => Value::Bool(a == b),
            })
        }
    }
}

fn expr_rule(e: &Expr) -> &'static str {
    match e {
        Expr::Lit(_) => "val",
        Expr::Var(_) => "var",
        Expr::BinOp(..) => "binop",
    }
}

struct Ctx {
    store: Store,
    next_loc: u64,
    fuel_left: u64,
    steps: u64,
    max_store: usize,
    allocated: u64,
    opts: EvalOptions,
    trace: Vec<TraceRow>,
    call_fun_envs: Vec<FunEnv>,
    call_stores: Vec<(Store, Store)>,
}

impl Ctx {
    fn new(opts: &EvalOptions) -> Ctx {
        Ctx {
            store: Store::new(),
            next_loc: 0,
            fuel_left: opts.fuel,
            steps: 0,
            max_store: 0,
            allocated: 0,
            opts: opts.clone(),
            trace: Vec::new(),
            call_fun_envs: Vec::new(),
            call_stores: Vec::new(),
        }
    }

    fn tick(&mut self, rule: &'static str, env_depth: usize) -> Result<(), EvalError> {
        if self.fuel_left == 0 {
            return Err(EvalError::FuelExhausted);
        }
        self.fuel_left -= 1;
        self.steps += 1;
        self.max_store = self.max_store.max(self.store.len());
        if self.opts.trace {
            self.trace.push(TraceRow {
                step: self.steps,
                rule,
                store_size: self.store.len(),
                env_depth,
            });
        }
        Ok(())
    }

    fn alloc(&mut self) -> Location {
        let l = Location(self.next_loc);
        self.next_loc += 1;
        self.allocated += 1;
        // Monotone allocation keeps both freshness conditions: the
        // location is in no store domain and appears in no environment.
        debug_assert!(!self.store.contains(l));
        l
    }

    fn finish(self, value: Value) -> EvalOutcome {
        let max_store = self.max_store.max(self.store.len());
        EvalOutcome {
            value,
            final_store: self.store,
            stats: EvalStats {
                steps: self.steps,
                max_store,
                fresh_allocated: self.allocated,
            },
            trace: self.trace,
            call_fun_envs: self.call_fun_envs,
            call_stores: self.call_stores,
        }
    }

    fn read_var(&self, env_lookup: Option<Location>, x: &str) -> Result<Value, EvalError> {
        let l = env_lookup.ok_or_else(|| EvalError::UnboundVar(x.to_string()))?;
        self.store
            .get(l)
            .ok_or_else(|| EvalError::DanglingLocation(x.to_string(), l))
    }
}

// ---------------------------------------------------------------------
// Naive rules
// ---------------------------------------------------------------------

fn naive(ctx: &mut Ctx, t: &Term, env: &VarEnv, funs: &FunEnv) -> Result<Value, EvalError> {
    match t {
        Term::Expr(e) => {
            ctx.tick(expr_rule(e), env.len())?;
            eval_expr_with(e, &mut |x| ctx.read_var(env.lookup(x), x))
        }
        Term::Assign(x, rhs) => {
            ctx.tick("assign", env.len())?;
            let v = naive(ctx, rhs, env, funs)?;
            let l = env
                .lookup(x)
                .ok_or_else(|| EvalError::UnboundVar(x.clone()))?;
            if !ctx.store.contains(l) {
                return Err(EvalError::DanglingLocation(x.clone(), l));
            }
            ctx.store.update(l, v);
            Ok(Value::Unit)
        }
        Term::If(c, a, b) => {
            let cond = naive(ctx, c, env, funs)?;
            match cond {
                Value::Bool(true) => {
                    ctx.tick("if_true", env.len())?;
                    naive(ctx, a, env, funs)
                }
                Value::Bool(false) => {
                    ctx.tick("if_false", env.len())?;
                    naive(ctx, b, env, funs)
                }
                v => Err(EvalError::TypeError(format!(
                    "condition evaluated to {v}, expected a boolean"
                ))),
            }
        }
        Term::Seq(a, b) => {
            ctx.tick("seq", env.len())?;
            naive(ctx, a, env, funs)?;
            naive(ctx, b, env, funs)
        }
        Term::LetRec {
            name,
            params,
            body,
            cont,
        } => {
            ctx.tick("letrec", env.len())?;
            let closure = Rc::new(Closure {
                params: params.clone(),
                body: body.as_ref().clone(),
                env: env.clone(),
                funs: funs.clone(),
            });
            let extended = funs.extend(name.clone(), closure);
            naive(ctx, cont, env, &extended)
        }
        Term::Call(f, args) => {
            ctx.tick("call", env.len())?;
            let closure = funs
                .lookup(f)
                .ok_or_else(|| EvalError::UnboundFun(f.clone()))?
                .clone();
            if closure.params.len() != args.len() {
                return Err(EvalError::ArityMismatch {
                    fun: f.clone(),
                    expected: closure.params.len(),
                    got: args.len(),
                });
            }
            if ctx.opts.record_call_envs {
                ctx.call_fun_envs.push(funs.clone());
            }
            let pre = ctx.opts.record_call_stores.then(|| ctx.store.clone());

            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(naive(ctx, a, env, funs)?);
            }
            let mut callee_env = closure.env.clone();
            for (x, v) in closure.params.iter().zip(vals) {
                let l = ctx.alloc();
                ctx.store.update(l, v);
                callee_env.push(x.clone(), l);
            }
            let callee_funs = closure.funs.extend(f.clone(), closure.clone());
            let v = naive(ctx, &closure.body, &callee_env, &callee_funs)?;

            if let Some(pre) = pre {
                ctx.call_stores.push((pre, ctx.store.clone()));
            }
            Ok(v)
        }
    }
}

// ---------------------------------------------------------------------
// Intermediate and optimised rules (split environments, minimal stores)
// ---------------------------------------------------------------------

fn split_rules(
    ctx: &mut Ctx,
    compact: bool,
    t: &Term,
    tail: &VarEnv,
    rest: &VarEnv,
    funs: &FunEnv,
) -> Result<Value, EvalError> {
    let depth = tail.len() + rest.len();
    let env = SplitEnv { tail, rest };
    match t {
        Term::Expr(e) => {
            ctx.tick(expr_rule(e), depth)?;
            let v = eval_expr_with(e, &mut |x| ctx.read_var(env.lookup(x), x))?;
            if ctx.opts.fault != Some(Fault::DropGcAtVal) {
                ctx.store = gc_clean(tail, &ctx.store);
            }
            Ok(v)
        }
        Term::Assign(x, rhs) => {
            ctx.tick("assign", depth)?;
            let demoted = tail.over(rest);
            let v = split_rules(ctx, compact, rhs, &VarEnv::new(), &demoted, funs)?;
            let l = env
                .lookup(x)
                .ok_or_else(|| EvalError::UnboundVar(x.clone()))?;
            if !ctx.store.contains(l) {
                return Err(EvalError::DanglingLocation(x.clone(), l));
            }
            ctx.store.update(l, v);
            ctx.store = gc_clean(tail, &ctx.store);
            Ok(Value::Unit)
        }
        Term::If(c, a, b) => {
            let demoted = tail.over(rest);
            let cond = split_rules(ctx, compact, c, &VarEnv::new(), &demoted, funs)?;
            match cond {
                Value::Bool(true) => {
                    ctx.tick("if_true", depth)?;
                    split_rules(ctx, compact, a, tail, rest, funs)
                }
                Value::Bool(false) => {
                    ctx.tick("if_false", depth)?;
                    split_rules(ctx, compact, b, tail, rest, funs)
                }
                v => Err(EvalError::TypeError(format!(
                    "condition evaluated to {v}, expected a boolean"
                ))),
            }
        }
        Term::Seq(a, b) => {
            ctx.tick("seq", depth)?;
            if ctx.opts.fault == Some(Fault::SwapSeqEnvs) {
                split_rules(ctx, compact, a, tail, rest, funs)?;
            } else {
                let demoted = tail.over(rest);
                split_rules(ctx, compact, a, &VarEnv::new(), &demoted, funs)?;
            }
            split_rules(ctx, compact, b, tail, rest, funs)
        }
        Term::LetRec {
            name,
            params,
            body,
            cont,
        } => {
            ctx.tick("letrec", depth)?;
            let concat = tail.over(rest);
            let captured = if compact {
                concat.without(params)
            } else {
                concat
            };
            let closure = Rc::new(Closure {
                params: params.clone(),
                body: body.as_ref().clone(),
                env: captured,
                funs: funs.clone(),
            });
            if compact && ctx.opts.monitors.compact && !closure.is_compact() {
                return Err(EvalError::MonitorViolation {
                    monitor: "compact",
                    step: ctx.steps,
                    detail: format!("closure built for `{name}` is not compact"),
                });
            }
            let extended = funs.extend(name.clone(), closure);
            split_rules(ctx, compact, cont, tail, rest, &extended)
        }
        Term::Call(f, args) => {
            ctx.tick("call", depth)?;
            if compact && ctx.opts.monitors.aliasing {
                let mut envs = env_environments(funs);
                envs.push(tail);
                envs.push(rest);
                if !check_aliasing_free(&envs) {
                    return Err(EvalError::MonitorViolation {
                        monitor: "aliasing",
                        step: ctx.steps,
                        detail: format!("environments are not aliasing-free at call to `{f}`"),
                    });
                }
            }
            let closure = funs
                .lookup(f)
                .ok_or_else(|| EvalError::UnboundFun(f.clone()))?
                .clone();
            if closure.params.len() != args.len() {
                return Err(EvalError::ArityMismatch {
                    fun: f.clone(),
                    expected: closure.params.len(),
                    got: args.len(),
                });
            }
            if ctx.opts.record_call_envs {
                ctx.call_fun_envs.push(funs.clone());
            }
            let pre = ctx.opts.record_call_stores.then(|| ctx.store.clone());

            let demoted = tail.over(rest);
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(split_rules(ctx, compact, a, &VarEnv::new(), &demoted, funs)?);
            }
            let mut param_env = VarEnv::new();
            for (x, v) in closure.params.iter().zip(vals) {
                let l = ctx.alloc();
                ctx.store.update(l, v);
                param_env.push(x.clone(), l);
            }
            let callee_funs = closure.funs.extend(f.clone(), closure.clone());
            let v = split_rules(ctx, compact, &closure.body, &param_env, &closure.env, &callee_funs)?;
            ctx.store = gc_clean(tail, &ctx.store);

            if let Some(pre) = pre {
                ctx.call_stores.push((pre, ctx.store.clone()));
            }
            Ok(v)
        }
    }
}

/// Evaluates under the chosen rule set with full control of the options.
pub fn eval_with(sem: Semantics, t: &Term, opts: &EvalOptions) -> Result<EvalOutcome, EvalError> {
    let mut ctx = Ctx::new(opts);
    let value = match sem {
        Semantics::Naive => naive(&mut ctx, t, &VarEnv::new(), &FunEnv::new())?,
        Semantics::Intermediate => {
            split_rules(&mut ctx, false, t, &VarEnv::new(), &VarEnv::new(), &FunEnv::new())?
        }
        Semantics::Optimised => {
            split_rules(&mut ctx, true, t, &VarEnv::new(), &VarEnv::new(), &FunEnv::new())?
        }
    };
    Ok(ctx.finish(value))
}

/// Fig.-1-style evaluation: full stores, plain closures.
pub fn eval_naive(t: &Term, fuel: u64) -> Result<EvalOutcome, EvalError> {
    eval_with(Semantics::Naive, t, &EvalOptions::with_fuel(fuel))
}

/// Fig.-3-style evaluation: minimal stores, non-compact closures.
pub fn eval_intermediate(t: &Term, fuel: u64) -> Result<EvalOutcome, EvalError> {
    eval_with(Semantics::Intermediate, t, &EvalOptions::with_fuel(fuel))
}

/// Fig.-2-style evaluation: minimal stores and compact closures, with
/// optional invariant monitors.
pub fn eval_optimised(t: &Term, fuel: u64, monitors: Monitors) -> Result<EvalOutcome, EvalError> {
    let mut opts = EvalOptions::with_fuel(fuel);
    opts.monitors = monitors;
    eval_with(Semantics::Optimised, t, &opts)
}

/// Runs a closure on a thread with a large stack. The big-step evaluators
/// recurse as deeply as the evaluated program does, which for recursive
/// generated programs can exceed the default thread stack well before the
/// fuel budget runs out.
pub fn with_big_stack<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    std::thread::scope(|scope| {
        std::thread::Builder::new()
            .stack_size(512 * 1024 * 1024)
            .spawn_scoped(scope, f)
            .expect("spawning evaluation thread")
            .join()
            .expect("evaluation thread panicked")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_term;

    fn loc(n: u64) -> Location {
        Location(n)
    }

    fn store_of(pairs: &[(u64, i64)]) -> Store {
        let mut s = Store::new();
        for (l, v) in pairs {
            s.update(loc(*l), Value::Int(*v));
        }
        s
    }

    fn env_of(pairs: &[(&str, u64)]) -> VarEnv {
        VarEnv::from_pairs(pairs.iter().map(|(x, l)| (x.to_string(), loc(*l))))
    }

    #[test]
    fn gc_clean_with_empty_env_is_identity() {
        let s = store_of(&[(1, 1)]);
        assert_eq!(gc_clean(&VarEnv::new(), &s), s);
    }

    #[test]
    fn gc_clean_removes_image_locations() {
        let s = store_of(&[(1, 1), (2, 2)]);
        assert_eq!(gc_clean(&env_of(&[("x", 1)]), &s), store_of(&[(2, 2)]));
        assert_eq!(gc_clean(&env_of(&[("x", 1), ("y", 2)]), &s), Store::new());
    }

    #[test]
    fn gc_clean_is_pure_and_idempotent() {
        let s = store_of(&[(1, 1), (2, 2)]);
        let env = env_of(&[("x", 1)]);
        let once = gc_clean(&env, &s);
        assert_eq!(gc_clean(&env, &once), once);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn store_leq_examples() {
        assert!(store_leq(&Store::new(), &store_of(&[(1, 1)])));
        assert!(store_leq(&store_of(&[(1, 1)]), &store_of(&[(1, 1), (2, 2)])));
        assert!(!store_leq(&store_of(&[(1, 1)]), &store_of(&[(1, 2)])));
    }

    #[test]
    fn aliasing_check_examples() {
        assert!(check_aliasing_free(&[]));
        let a = env_of(&[("x", 1)]);
        let b = env_of(&[("x", 1)]);
        assert!(check_aliasing_free(&[&a, &b]));
        let c = env_of(&[("y", 1)]);
        assert!(!check_aliasing_free(&[&a, &c]));
        // Aliasing within a single environment counts too.
        let d = env_of(&[("x", 1), ("y", 1)]);
        assert!(!check_aliasing_free(&[&d]));
    }

    fn closure_with(params: &[&str], env: VarEnv, funs: FunEnv) -> Rc<Closure> {
        Rc::new(Closure {
            params: params.iter().map(|p| p.to_string()).collect(),
            body: Term::var("a"),
            env,
            funs,
        })
    }

    #[test]
    fn env_locations_walks_nested_closures() {
        assert!(env_locations(&FunEnv::new()).is_empty());

        let inner = FunEnv::new().extend(
            "g".into(),
            closure_with(&[], env_of(&[("y", 2)]), FunEnv::new()),
        );
        let outer = FunEnv::new().extend("f".into(), closure_with(&[], env_of(&[("x", 1)]), inner));
        assert_eq!(
            env_locations(&outer),
            BTreeSet::from([loc(1), loc(2)])
        );

        let single = FunEnv::new().extend(
            "f".into(),
            closure_with(&[], env_of(&[("x", 3)]), FunEnv::new()),
        );
        assert_eq!(env_locations(&single), BTreeSet::from([loc(3)]));
    }

    #[test]
    fn close_env_restricts_params_and_is_idempotent() {
        assert_eq!(close_env(&FunEnv::new()), FunEnv::new());

        let f = FunEnv::new().extend(
            "h".into(),
            closure_with(&["x"], env_of(&[("x", 1)]), FunEnv::new()),
        );
        let closed = close_env(&f);
        let c = closed.lookup("h").unwrap();
        assert!(c.env.is_empty());
        assert!(closed.is_compact());
        assert_eq!(close_env(&closed), closed);
        assert_eq!(closed.domain(), f.domain());

        // Already-compact environments are fixpoints.
        let compact = FunEnv::new().extend(
            "h".into(),
            closure_with(&["x"], env_of(&[("y", 2)]), FunEnv::new()),
        );
        assert_eq!(close_env(&compact), compact);
    }

    fn paper_term() -> Term {
        parse_term("letrec g(x) = { letrec h() = { x } in h() } in g(1)").unwrap()
    }

    fn lifted_paper_term() -> Term {
        parse_term("letrec g(x) = { letrec h(x) = { x } in h(x) } in g(1)").unwrap()
    }

    #[test]
    fn naive_literal_evaluates_to_itself() {
        let out = eval_naive(&Term::int(42), 10).unwrap();
        assert_eq!(out.value, Value::Int(42));
        assert!(out.final_store.is_empty());
    }

    #[test]
    fn naive_paper_example_leaves_one_location() {
        let out = eval_naive(&paper_term(), 100).unwrap();
        assert_eq!(out.value, Value::Int(1));
        assert_eq!(out.final_store.len(), 1);
        let (_, v) = out.final_store.iter().next().unwrap();
        assert_eq!(v, Value::Int(1));
    }

    #[test]
    fn naive_lifted_paper_example_leaves_two_locations() {
        let out = eval_naive(&lifted_paper_term(), 100).unwrap();
        assert_eq!(out.value, Value::Int(1));
        assert_eq!(out.final_store.len(), 2);
        assert!(out.final_store.iter().all(|(_, v)| v == Value::Int(1)));
    }

    #[test]
    fn intermediate_paper_example_ends_with_empty_store() {
        let out = eval_intermediate(&paper_term(), 100).unwrap();
        assert_eq!(out.value, Value::Int(1));
        assert!(out.final_store.is_empty());
    }

    #[test]
    fn intermediate_value_rule_with_empty_tail() {
        let out = eval_intermediate(&Term::bool(true), 10).unwrap();
        assert_eq!(out.value, Value::Bool(true));
        assert!(out.final_store.is_empty());
    }

    #[test]
    fn intermediate_call_cleans_parameters() {
        let t = parse_term("letrec f(a) = { a } in f(5)").unwrap();
        let out = eval_intermediate(&t, 100).unwrap();
        assert_eq!(out.value, Value::Int(5));
        assert!(out.final_store.is_empty());
    }

    #[test]
    fn optimised_paper_examples_end_empty() {
        for t in [paper_term(), lifted_paper_term()] {
            let out = eval_optimised(&t, 100, Monitors::all()).unwrap();
            assert_eq!(out.value, Value::Int(1));
            assert!(out.final_store.is_empty());
        }
    }

    #[test]
    fn optimised_assignment_in_function_body() {
        let t = parse_term("letrec f(x) = { x := 1; 2 } in f(0)").unwrap();
        let out = eval_optimised(&t, 100, Monitors::all()).unwrap();
        assert_eq!(out.value, Value::Int(2));
        assert!(out.final_store.is_empty());
    }

    #[test]
    fn evaluation_is_deterministic_including_stats() {
        let t = paper_term();
        for sem in [Semantics::Naive, Semantics::Intermediate, Semantics::Optimised] {
            let mut opts = EvalOptions::with_fuel(1000);
            opts.trace = true;
            let a = eval_with(sem, &t, &opts).unwrap();
            let b = eval_with(sem, &t, &opts).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn divergent_term_exhausts_fuel() {
        let t = parse_term("letrec f() = { f() } in f()").unwrap();
        for sem in [Semantics::Naive, Semantics::Intermediate, Semantics::Optimised] {
            let err = eval_with(sem, &t, &EvalOptions::with_fuel(500)).unwrap_err();
            assert_eq!(err, EvalError::FuelExhausted);
        }
    }

    #[test]
    fn ill_typed_condition_is_a_type_error() {
        let t = parse_term("if 1 then { 2 } else { 3 }").unwrap();
        assert!(matches!(
            eval_naive(&t, 10).unwrap_err(),
            EvalError::TypeError(_)
        ));
    }

    #[test]
    fn recursion_works_through_self_extension() {
        // letrec f(n) = { if n < 5 then { f(n + 1) } else { n } } in f(0)
        let t =
            parse_term("letrec f(n) = { if n < 5 then { f(n + 1) } else { n } } in f(0)").unwrap();
        for sem in [Semantics::Naive, Semantics::Intermediate, Semantics::Optimised] {
            let out = eval_with(sem, &t, &EvalOptions::with_fuel(1000)).unwrap();
            assert_eq!(out.value, Value::Int(5), "{}", sem.name());
        }
        let out = eval_optimised(&t, 1000, Monitors::all()).unwrap();
        assert!(out.final_store.is_empty());
    }

    #[test]
    fn trace_rows_follow_schema_fields() {
        let mut opts = EvalOptions::with_fuel(100);
        opts.trace = true;
        let out = eval_with(Semantics::Naive, &paper_term(), &opts).unwrap();
        assert_eq!(out.trace.len(), out.stats.steps as usize);
        assert_eq!(out.trace[0].rule, "letrec");
        let json = serde_json::to_value(out.trace[0]).unwrap();
        assert!(json.get("step").is_some());
        assert!(json.get("rule").is_some());
        assert!(json.get("store_size").is_some());
        assert!(json.get("env_depth").is_some());
    }

    #[test]
    fn gc_fault_leaves_garbage_behind() {
        let mut opts = EvalOptions::with_fuel(100);
        opts.fault = Some(Fault::DropGcAtVal);
        let out = eval_with(Semantics::Optimised, &paper_term(), &opts).unwrap();
        assert_eq!(out.value, Value::Int(1));
        assert!(!out.final_store.is_empty());
    }
}
