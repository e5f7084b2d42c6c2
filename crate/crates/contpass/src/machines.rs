//! The two small-step machines: the context machine for CPS-convertible
//! terms and the continuation machine for CPS terms. Both reduce head
//! states `<T, K, sigma>` and tail states `<Q, K>`; tails carry no store
//! because every variable of a tail is substituted away on entry (early
//! evaluation). A lazy-lookup variant that resolves variables at
//! frame-push time instead is provided for the early-evaluation check,
//! and a lock-step bisimulation driver relates the two machines.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{Expr, Ident, Value};
use crate::bigstep::eval_expr_with;
use crate::cps::{
    cps_convert, cps_convert_program, ConvProgram, ConvTail, ConvTerm, CpsProgram, CpsTail,
    CpsTerm, NestedCall, PushCall,
};

/// One pending call: evaluated arguments, plus optionally a hole awaiting
/// the return value of a nested call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub f: Ident,
    pub args: Vec<Value>,
    pub hole: bool,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.f)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        if self.hole {
            if !self.args.is_empty() {
                write!(f, ", ")?;
            }
            write!(f, "#")?;
        }
        write!(f, ")")
    }
}

/// A context: pending call frames, innermost first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Context {
    pub frames: Vec<Frame>,
}

/// A continuation: pending call frames, head first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Continuation {
    pub frames: Vec<Frame>,
}

/// Per-frame variable store, rebuilt wholesale at each function entry.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameStore {
    bindings: BTreeMap<Ident, Value>,
}

impl FrameStore {
    pub fn new() -> FrameStore {
        FrameStore::default()
    }

    pub fn from_params(params: &[Ident], values: Vec<Value>) -> FrameStore {
        FrameStore {
            bindings: params.iter().cloned().zip(values).collect(),
        }
    }

    pub fn get(&self, x: &str) -> Option<Value> {
        self.bindings.get(x).copied()
    }

    pub fn set(&mut self, x: Ident, v: Value) {
        self.bindings.insert(x, v);
    }

    pub fn as_map(&self) -> &BTreeMap<Ident, Value> {
        &self.bindings
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MachineError {
    #[error("fuel exhausted: the machine did not finish within the step budget")]
    FuelExhausted,
    #[error("stuck: {0}")]
    Stuck(String),
    #[error("arity mismatch calling `{fun}`: expected {expected} arguments, got {got}")]
    ArityMismatch {
        fun: Ident,
        expected: usize,
        got: usize,
    },
    #[error("call to undefined function `{0}`")]
    UnknownFunction(Ident),
    #[error("unbound variable `{0}`")]
    UnboundVar(Ident),
    #[error("type error: {0}")]
    TypeError(String),
}

/// Evaluates a pure expression against a frame store.
pub fn eval_expr(e: &Expr, store: &FrameStore) -> Result<Value, MachineError> {
    eval_expr_with(e, &mut |x| {
        store
            .get(x)
            .ok_or_else(|| crate::bigstep::EvalError::UnboundVar(x.to_string()))
    })
    .map_err(|err| match err {
        crate::bigstep::EvalError::UnboundVar(x) => MachineError::UnboundVar(x),
        crate::bigstep::EvalError::TypeError(m) => MachineError::TypeError(m),
        other => MachineError::Stuck(other.to_string()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvState {
    Head {
        term: ConvTerm,
        ctx: Context,
        store: FrameStore,
    },
    Tail {
        tail: ConvTail,
        ctx: Context,
    },
    Done(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CpsState {
    Head {
        term: CpsTerm,
        cont: Continuation,
        store: FrameStore,
    },
    Tail {
        tail: CpsTail,
        cont: Continuation,
    },
    Done(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub step: u64,
    pub rule: &'static str,
    pub state: serde_json::Value,
}

fn value_json(v: Value) -> serde_json::Value {
    match v {
        Value::Unit => serde_json::Value::String("unit".into()),
        Value::Bool(b) => serde_json::Value::Bool(b),
        Value::Int(n) => serde_json::Value::Number(n.into()),
    }
}

fn frames_json(frames: &[Frame]) -> serde_json::Value {
    serde_json::Value::Array(
        frames
            .iter()
            .map(|fr| {
                serde_json::json!({
                    "f": fr.f,
                    "args": fr.args.iter().map(|v| value_json(*v)).collect::<Vec<_>>(),
                    "hole": fr.hole,
                })
            })
            .collect(),
    )
}

fn store_json(s: &FrameStore) -> serde_json::Value {
    serde_json::Value::Object(
        s.as_map()
            .iter()
            .map(|(k, v)| (k.clone(), value_json(*v)))
            .collect(),
    )
}

impl fmt::Display for ConvTail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.calls.is_empty() {
            return write!(f, "eps");
        }
        write!(f, "eps")?;
        for c in &self.calls {
            write!(f, "; {}", c.to_term())?;
        }
        Ok(())
    }
}

impl ConvState {
    fn to_json(&self) -> serde_json::Value {
        match self {
            ConvState::Head { term, ctx, store } => serde_json::json!({
                "kind": "head",
                "term": term.to_term().to_string(),
                "context": frames_json(&ctx.frames),
                "store": store_json(store),
            }),
            ConvState::Tail { tail, ctx } => serde_json::json!({
                "kind": "tail",
                "tail": tail.to_string(),
                "context": frames_json(&ctx.frames),
            }),
            ConvState::Done(v) => serde_json::json!({
                "kind": "done",
                "value": value_json(*v),
            }),
        }
    }
}

impl CpsState {
    fn to_json(&self) -> serde_json::Value {
        match self {
            CpsState::Head { term, cont, store } => serde_json::json!({
                "kind": "head",
                "term": term.to_string(),
                "continuation": frames_json(&cont.frames),
                "store": store_json(store),
            }),
            CpsState::Tail { tail, cont } => serde_json::json!({
                "kind": "tail",
                "tail": CpsTerm::Tail(tail.clone()).to_string(),
                "continuation": frames_json(&cont.frames),
            }),
            CpsState::Done(v) => serde_json::json!({
                "kind": "done",
                "value": value_json(*v),
            }),
        }
    }
}

fn literal_args(f: &Ident, args: &[Expr]) -> Result<Vec<Value>, MachineError> {
    args.iter()
        .map(|e| match e {
            Expr::Lit(v) => Ok(*v),
            other => Err(MachineError::Stuck(format!(
                "argument `{other}` of `{f}` is not a value; tails must be substituted before unfolding"
            ))),
        })
        .collect()
}

fn subst_call(c: &NestedCall, store: &FrameStore) -> Result<NestedCall, MachineError> {
    Ok(NestedCall {
        f: c.f.clone(),
        args: c
            .args
            .iter()
            .map(|e| eval_expr(e, store).map(Expr::Lit))
            .collect::<Result<_, _>>()?,
        nested: match &c.nested {
            Some(n) => Some(Box::new(subst_call(n, store)?)),
            None => None,
        },
    })
}

/// Rule (7): substitutes the store into a tail and normalizes every
/// argument expression to a value.
fn subst_tail(q: &ConvTail, store: &FrameStore) -> Result<ConvTail, MachineError> {
    Ok(ConvTail {
        calls: q
            .calls
            .iter()
            .map(|c| subst_call(c, store))
            .collect::<Result<_, _>>()?,
    })
}

fn subst_cps_tail(q: &CpsTail, store: &FrameStore) -> Result<CpsTail, MachineError> {
    Ok(CpsTail {
        pushes: q
            .pushes
            .iter()
            .map(|p| {
                Ok(PushCall {
                    f: p.f.clone(),
                    args: p
                        .args
                        .iter()
                        .map(|e| eval_expr(e, store).map(Expr::Lit))
                        .collect::<Result<_, _>>()?,
                    hole: p.hole,
                })
            })
            .collect::<Result<_, _>>()?,
    })
}

fn enter_function(
    prog_params: Option<&[Ident]>,
    f: &Ident,
    args: Vec<Value>,
) -> Result<FrameStore, MachineError> {
    let params = prog_params.ok_or_else(|| MachineError::UnknownFunction(f.clone()))?;
    if params.len() != args.len() {
        return Err(MachineError::ArityMismatch {
            fun: f.clone(),
            expected: params.len(),
            got: args.len(),
        });
    }
    Ok(FrameStore::from_params(params, args))
}

/// Fires exactly one rule of the context machine.
pub fn step_convertible(
    state: ConvState,
    prog: &ConvProgram,
) -> Result<(ConvState, &'static str), MachineError> {
    match state {
        ConvState::Head { term, ctx, store } => match term {
            ConvTerm::AssignThen { x, e, rest } => {
                let v = eval_expr(&e, &store)?;
                let mut store = store;
                store.set(x, v);
                Ok((
                    ConvState::Head {
                        term: *rest,
                        ctx,
                        store,
                    },
                    "assign",
                ))
            }
            ConvTerm::If {
                cond,
                then_branch,
                else_branch,
            } => match eval_expr(&cond, &store)? {
                Value::Bool(true) => Ok((
                    ConvState::Head {
                        term: *then_branch,
                        ctx,
                        store,
                    },
                    "if_true",
                )),
                Value::Bool(false) => Ok((
                    ConvState::Head {
                        term: *else_branch,
                        ctx,
                        store,
                    },
                    "if_false",
                )),
                v => Err(MachineError::TypeError(format!(
                    "condition evaluated to {v}, expected a boolean"
                ))),
            },
            ConvTerm::Leaf(e) => {
                let v = eval_expr(&e, &store)?;
                let mut ctx = ctx;
                match ctx.frames.first_mut() {
                    None => Ok((ConvState::Done(v), "return_final")),
                    Some(frame) if frame.hole => {
                        frame.args.push(v);
                        frame.hole = false;
                        Ok((
                            ConvState::Tail {
                                tail: ConvTail::default(),
                                ctx,
                            },
                            "return_fill",
                        ))
                    }
                    Some(_) => Ok((
                        ConvState::Tail {
                            tail: ConvTail::default(),
                            ctx,
                        },
                        "return_discard",
                    )),
                }
            }
            ConvTerm::Tail(q) => {
                let tail = subst_tail(&q, &store)?;
                Ok((ConvState::Tail { tail, ctx }, "early_subst"))
            }
        },
        ConvState::Tail { mut tail, mut ctx } => match tail.calls.pop() {
            Some(call) => {
                let args = literal_args(&call.f, &call.args)?;
                match call.nested {
                    None => {
                        ctx.frames.insert(
                            0,
                            Frame {
                                f: call.f,
                                args,
                                hole: false,
                            },
                        );
                        Ok((ConvState::Tail { tail, ctx }, "push"))
                    }
                    Some(nested) => {
                        ctx.frames.insert(
                            0,
                            Frame {
                                f: call.f,
                                args,
                                hole: true,
                            },
                        );
                        tail.calls.push(*nested);
                        Ok((ConvState::Tail { tail, ctx }, "push_hole"))
                    }
                }
            }
            None => {
                if ctx.frames.is_empty() {
                    return Err(MachineError::Stuck(
                        "empty tail under the empty context".into(),
                    ));
                }
                let frame = ctx.frames.remove(0);
                if frame.hole {
                    return Err(MachineError::Stuck(format!(
                        "cannot enter `{}`: its hole argument was never filled",
                        frame.f
                    )));
                }
                let def = prog.function(&frame.f);
                let store =
                    enter_function(def.map(|d| d.params.as_slice()), &frame.f, frame.args)?;
                Ok((
                    ConvState::Head {
                        term: def.unwrap().body.clone(),
                        ctx,
                        store,
                    },
                    "enter",
                ))
            }
        },
        ConvState::Done(_) => Err(MachineError::Stuck("the machine already finished".into())),
    }
}

/// Fires exactly one rule of the continuation machine.
pub fn step_cps(
    state: CpsState,
    prog: &CpsProgram,
) -> Result<(CpsState, &'static str), MachineError> {
    match state {
        CpsState::Head { term, cont, store } => match term {
            CpsTerm::AssignThen { x, e, rest } => {
                let v = eval_expr(&e, &store)?;
                let mut store = store;
                store.set(x, v);
                Ok((
                    CpsState::Head {
                        term: *rest,
                        cont,
                        store,
                    },
                    "assign",
                ))
            }
            CpsTerm::If {
                cond,
                then_branch,
                else_branch,
            } => match eval_expr(&cond, &store)? {
                Value::Bool(true) => Ok((
                    CpsState::Head {
                        term: *then_branch,
                        cont,
                        store,
                    },
                    "if_true",
                )),
                Value::Bool(false) => Ok((
                    CpsState::Head {
                        term: *else_branch,
                        cont,
                        store,
                    },
                    "if_false",
                )),
                v => Err(MachineError::TypeError(format!(
                    "condition evaluated to {v}, expected a boolean"
                ))),
            },
            CpsTerm::InvokeExpr(e) => {
                let v = eval_expr(&e, &store)?;
                let mut cont = cont;
                match cont.frames.first_mut() {
                    None => Ok((CpsState::Done(v), "return_final")),
                    Some(frame) if frame.hole => {
                        frame.args.push(v);
                        frame.hole = false;
                        Ok((
                            CpsState::Tail {
                                tail: CpsTail::default(),
                                cont,
                            },
                            "return_fill",
                        ))
                    }
                    Some(_) => Ok((
                        CpsState::Tail {
                            tail: CpsTail::default(),
                            cont,
                        },
                        "return_discard",
                    )),
                }
            }
            CpsTerm::Tail(q) => {
                let tail = subst_cps_tail(&q, &store)?;
                Ok((CpsState::Tail { tail, cont }, "early_subst"))
            }
        },
        CpsState::Tail { mut tail, mut cont } => {
            if tail.pushes.is_empty() {
                // invoke
                if cont.frames.is_empty() {
                    return Err(MachineError::Stuck(
                        "invoke with an empty continuation".into(),
                    ));
                }
                let frame = cont.frames.remove(0);
                if frame.hole {
                    return Err(MachineError::Stuck(format!(
                        "invoke of `{}` whose hole argument was never filled",
                        frame.f
                    )));
                }
                let def = prog.function(&frame.f);
                let store =
                    enter_function(def.map(|d| d.params.as_slice()), &frame.f, frame.args)?;
                Ok((
                    CpsState::Head {
                        term: def.unwrap().body.clone(),
                        cont,
                        store,
                    },
                    "enter",
                ))
            } else {
                let p = tail.pushes.remove(0);
                let args = literal_args(&p.f, &p.args)?;
                cont.frames.insert(
                    0,
                    Frame {
                        f: p.f,
                        args,
                        hole: p.hole,
                    },
                );
                let rule = if p.hole { "push_hole" } else { "push" };
                Ok((CpsState::Tail { tail, cont }, rule))
            }
        }
        CpsState::Done(_) => Err(MachineError::Stuck("the machine already finished".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineRun {
    pub value: Value,
    pub steps: u64,
    pub trace: Vec<TraceEvent>,
}

/// Runs the context machine from `<main, [], {}>` to completion.
pub fn run_convertible(
    prog: &ConvProgram,
    fuel: u64,
    trace: bool,
) -> Result<MachineRun, MachineError> {
    let mut state = ConvState::Head {
        term: prog.main.clone(),
        ctx: Context::default(),
        store: FrameStore::new(),
    };
    let mut events = Vec::new();
    for step in 1..=fuel {
        let (next, rule) = step_convertible(state, prog)?;
        if trace {
            events.push(TraceEvent {
                step,
                rule,
                state: next.to_json(),
            });
        }
        match next {
            ConvState::Done(value) => {
                return Ok(MachineRun {
                    value,
                    steps: step,
                    trace: events,
                })
            }
            other => state = other,
        }
    }
    Err(MachineError::FuelExhausted)
}

/// Runs the continuation machine from `<main, eps, {}>` to completion.
pub fn run_cps(prog: &CpsProgram, fuel: u64, trace: bool) -> Result<MachineRun, MachineError> {
    let mut state = CpsState::Head {
        term: prog.main.clone(),
        cont: Continuation::default(),
        store: FrameStore::new(),
    };
    let mut events = Vec::new();
    for step in 1..=fuel {
        let (next, rule) = step_cps(state, prog)?;
        if trace {
            events.push(TraceEvent {
                step,
                rule,
                state: next.to_json(),
            });
        }
        match next {
            CpsState::Done(value) => {
                return Ok(MachineRun {
                    value,
                    steps: step,
                    trace: events,
                })
            }
            other => state = other,
        }
    }
    Err(MachineError::FuelExhausted)
}

/// The lazy-lookup variant of the context machine: tails keep the frame
/// store and arguments are evaluated when their frame is pushed, not when
/// the tail is entered. Used to check early evaluation.
pub fn run_convertible_lazy(prog: &ConvProgram, fuel: u64) -> Result<MachineRun, MachineError> {
    enum LazyState {
        Head {
            term: ConvTerm,
            ctx: Context,
            store: FrameStore,
        },
        Tail {
            tail: ConvTail,
            ctx: Context,
            store: FrameStore,
        },
    }

    let mut state = LazyState::Head {
        term: prog.main.clone(),
        ctx: Context::default(),
        store: FrameStore::new(),
    };
    for step in 1..=fuel {
        state = match state {
            LazyState::Head { term, ctx, store } => match term {
                ConvTerm::AssignThen { x, e, rest } => {
                    let v = eval_expr(&e, &store)?;
                    let mut store = store;
                    store.set(x, v);
                    LazyState::Head {
                        term: *rest,
                        ctx,
                        store,
                    }
                }
                ConvTerm::If {
                    cond,
                    then_branch,
                    else_branch,
                } => match eval_expr(&cond, &store)? {
                    Value::Bool(true) => LazyState::Head {
                        term: *then_branch,
                        ctx,
                        store,
                    },
                    Value::Bool(false) => LazyState::Head {
                        term: *else_branch,
                        ctx,
                        store,
                    },
                    v => {
                        return Err(MachineError::TypeError(format!(
                            "condition evaluated to {v}, expected a boolean"
                        )))
                    }
                },
                ConvTerm::Leaf(e) => {
                    let v = eval_expr(&e, &store)?;
                    let mut ctx = ctx;
                    match ctx.frames.first_mut() {
                        None => {
                            return Ok(MachineRun {
                                value: v,
                                steps: step,
                                trace: vec![],
                            })
                        }
                        Some(frame) => {
                            if frame.hole {
                                frame.args.push(v);
                                frame.hole = false;
                            }
                            LazyState::Tail {
                                tail: ConvTail::default(),
                                ctx,
                                store: FrameStore::new(),
                            }
                        }
                    }
                }
                ConvTerm::Tail(q) => LazyState::Tail {
                    tail: q,
                    ctx,
                    store,
                },
            },
            LazyState::Tail {
                mut tail,
                mut ctx,
                store,
            } => match tail.calls.pop() {
                Some(call) => {
                    // Arguments resolved against the store now, at push time.
                    let args = call
                        .args
                        .iter()
                        .map(|e| eval_expr(e, &store))
                        .collect::<Result<Vec<_>, _>>()?;
                    match call.nested {
                        None => {
                            ctx.frames.insert(
                                0,
                                Frame {
                                    f: call.f,
                                    args,
                                    hole: false,
                                },
                            );
                        }
                        Some(nested) => {
                            ctx.frames.insert(
                                0,
                                Frame {
                                    f: call.f,
                                    args,
                                    hole: true,
                                },
                            );
                            tail.calls.push(*nested);
                        }
                    }
                    LazyState::Tail { tail, ctx, store }
                }
                None => {
                    if ctx.frames.is_empty() {
                        return Err(MachineError::Stuck(
                            "empty tail under the empty context".into(),
                        ));
                    }
                    let frame = ctx.frames.remove(0);
                    if frame.hole {
                        return Err(MachineError::Stuck(format!(
                            "cannot enter `{}`: its hole argument was never filled",
                            frame.f
                        )));
                    }
                    let def = prog.function(&frame.f);
                    let new_store =
                        enter_function(def.map(|d| d.params.as_slice()), &frame.f, frame.args)?;
                    LazyState::Head {
                        term: def.unwrap().body.clone(),
                        ctx,
                        store: new_store,
                    }
                }
            },
        };
    }
    Err(MachineError::FuelExhausted)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BisimReport {
    pub lockstep: bool,
    pub divergence_step: Option<u64>,
    pub fuel_exhausted: bool,
    pub steps: Option<u64>,
    pub final_value: Option<Value>,
    pub detail: Option<String>,
}

fn states_related(conv: &ConvState, cps: &CpsState) -> bool {
    match (conv, cps) {
        (
            ConvState::Head { term, ctx, store },
            CpsState::Head {
                term: cterm,
                cont,
                store: cstore,
            },
        ) => {
            &cps_convert(term) == cterm
                && crate::cps::convert_context(ctx) == *cont
                && store == cstore
        }
        (
            ConvState::Tail { tail, ctx },
            CpsState::Tail {
                tail: ctail,
                cont,
            },
        ) => {
            &cps_convert(&ConvTerm::Tail(tail.clone())) == &CpsTerm::Tail(ctail.clone())
                && crate::cps::convert_context(ctx) == *cont
        }
        (ConvState::Done(a), CpsState::Done(b)) => a == b,
        _ => false,
    }
}

/// Runs the context machine on the program and the continuation machine
/// on its CPS image in lock-step, asserting the state relation at every
/// step.
pub fn bisim_check(prog: &ConvProgram, fuel: u64) -> BisimReport {
    let cps_prog = cps_convert_program(prog);
    let mut conv = ConvState::Head {
        term: prog.main.clone(),
        ctx: Context::default(),
        store: FrameStore::new(),
    };
    let mut cps = CpsState::Head {
        term: cps_prog.main.clone(),
        cont: Continuation::default(),
        store: FrameStore::new(),
    };

    if !states_related(&conv, &cps) {
        return BisimReport {
            lockstep: false,
            divergence_step: Some(0),
            fuel_exhausted: false,
            steps: None,
            final_value: None,
            detail: Some("initial states are not related".into()),
        };
    }

    for step in 1..=fuel {
        let conv_next = step_convertible(conv, prog);
        let cps_next = step_cps(cps, &cps_prog);
        match (conv_next, cps_next) {
            (Ok((c, _)), Ok((k, _))) => {
                if !states_related(&c, &k) {
                    return BisimReport {
                        lockstep: false,
                        divergence_step: Some(step),
                        fuel_exhausted: false,
                        steps: None,
                        final_value: None,
                        detail: Some("states diverged".into()),
                    };
                }
                match (&c, &k) {
                    (ConvState::Done(v), CpsState::Done(_)) => {
                        return BisimReport {
                            lockstep: true,
                            divergence_step: None,
                            fuel_exhausted: false,
                            steps: Some(step),
                            final_value: Some(*v),
                            detail: None,
                        }
                    }
                    _ => {
                        conv = c;
                        cps = k;
                    }
                }
            }
            (Err(e1), Err(e2)) => {
                return BisimReport {
                    lockstep: false,
                    divergence_step: Some(step),
                    fuel_exhausted: false,
                    steps: None,
                    final_value: None,
                    detail: Some(format!("both machines stopped: {e1} / {e2}")),
                }
            }
            (Err(e), Ok(_)) | (Ok(_), Err(e)) => {
                return BisimReport {
                    lockstep: false,
                    divergence_step: Some(step),
                    fuel_exhausted: false,
                    steps: None,
                    final_value: None,
                    detail: Some(format!("one machine stopped: {e}")),
                }
            }
        }
    }

    BisimReport {
        lockstep: true,
        divergence_step: None,
        fuel_exhausted: true,
        steps: None,
        final_value: None,
        detail: Some("fuel exhausted before completion".into()),
    }
}
