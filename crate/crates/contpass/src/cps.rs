//! The CPS-convertible grammar and its recognizer, CPS terms over `push`
//! and `invoke`, well-formedness, and the four structural conversions:
//! terms to CPS terms and back, contexts to continuations and back.
//!
//! A convertible term has a head (assignments and conditionals over pure
//! expressions) and a tail (a sequence of calls whose arguments are
//! expressions, except that the last argument may be one nested call).
//! Its CPS image builds the continuation explicitly: `push` appends a
//! call frame, `invoke` enters the head frame; `_` is the hole filled by
//! the nested call's return value.

use std::fmt;

use thiserror::Error;

use crate::ast::{Expr, Ident, Term};
use crate::lifting::Program;
use crate::machines::{Context, Continuation, Frame};
use crate::parser::{codes, lex, Diagnostic, SourceSpan, Tok, TokStream};

/// A call in a tail: expression arguments, except that the final argument
/// position may hold one nested call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestedCall {
    pub f: Ident,
    pub args: Vec<Expr>,
    pub nested: Option<Box<NestedCall>>,
}

/// A tail `Q ::= eps | Q ; F`, kept as its calls in execution order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConvTail {
    pub calls: Vec<NestedCall>,
}

/// A CPS-convertible term (the head grammar).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConvTerm {
    Leaf(Expr),
    AssignThen {
        x: Ident,
        e: Expr,
        rest: Box<ConvTerm>,
    },
    If {
        cond: Expr,
        then_branch: Box<ConvTerm>,
        else_branch: Box<ConvTerm>,
    },
    Tail(ConvTail),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvFunDef {
    pub name: Ident,
    pub params: Vec<Ident>,
    pub body: ConvTerm,
}

/// A convertible program: a set of top-level functions (evaluated under a
/// constant function environment) plus a main term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvProgram {
    pub functions: Vec<ConvFunDef>,
    pub main: ConvTerm,
}

/// One `push f(e, ..., e)` or `push f(e, ..., e, _)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushCall {
    pub f: Ident,
    pub args: Vec<Expr>,
    pub hole: bool,
}

/// A CPS tail: pushes followed by the implicit terminating `invoke`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CpsTail {
    pub pushes: Vec<PushCall>,
}

/// A CPS term (the head grammar with tails replaced by push/invoke).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CpsTerm {
    InvokeExpr(Expr),
    AssignThen {
        x: Ident,
        e: Expr,
        rest: Box<CpsTerm>,
    },
    If {
        cond: Expr,
        then_branch: Box<CpsTerm>,
        else_branch: Box<CpsTerm>,
    },
    Tail(CpsTail),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpsFunDef {
    pub name: Ident,
    pub params: Vec<Ident>,
    pub body: CpsTerm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpsProgram {
    pub functions: Vec<CpsFunDef>,
    pub main: CpsTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CpsError {
    #[error("the CPS term is not well-formed: a continuation queue ends with a hole push followed by invoke")]
    NotWellFormed,
}

// ---------------------------------------------------------------------
// Recognizer: flat programs into the convertible grammar
// ---------------------------------------------------------------------

fn conv_diag(code: &'static str, ctx: &str, detail: String) -> Diagnostic {
    Diagnostic {
        span: SourceSpan::synthetic(),
        severity: crate::parser::Severity::Error,
        code,
        message: format!("in `{ctx}`: {detail}"),
    }
}

fn conv_call(f: &Ident, args: &[Term], ctx: &str, diags: &mut Vec<Diagnostic>) -> Option<NestedCall> {
    let mut exprs = Vec::new();
    let mut nested = None;
    for (i, a) in args.iter().enumerate() {
        let last = i + 1 == args.len();
        match a {
            Term::Expr(e) => exprs.push(e.clone()),
            Term::Call(g, gargs) => {
                if last {
                    nested = conv_call(g, gargs, ctx, diags).map(Box::new);
                } else {
                    diags.push(conv_diag(
                        codes::CONV_NESTED_NOT_LAST,
                        ctx,
                        format!("nested call `{g}(...)` must be the last argument of `{f}`"),
                    ));
                    return None;
                }
            }
            other => {
                diags.push(conv_diag(
                    codes::CONV_HEAD_SHAPE,
                    ctx,
                    format!("argument `{other}` of `{f}` is neither an expression nor a nested call"),
                ));
                return None;
            }
        }
    }
    Some(NestedCall {
        f: f.clone(),
        args: exprs,
        nested,
    })
}

fn seq_spine(t: &Term) -> Vec<&Term> {
    let mut out = Vec::new();
    let mut cur = t;
    while let Term::Seq(a, b) = cur {
        out.push(a.as_ref());
        cur = b.as_ref();
    }
    out.push(cur);
    out
}

fn conv_term(t: &Term, ctx: &str, diags: &mut Vec<Diagnostic>) -> Option<ConvTerm> {
    match t {
        Term::Expr(e) => Some(ConvTerm::Leaf(e.clone())),
        Term::If(c, a, b) => {
            let cond = match c.as_ref() {
                Term::Expr(e) => e.clone(),
                Term::Call(g, _) => {
                    diags.push(conv_diag(
                        codes::CONV_CALL_IN_EXPR,
                        ctx,
                        format!("condition calls `{g}`; conditions must be pure expressions"),
                    ));
                    return None;
                }
                other => {
                    diags.push(conv_diag(
                        codes::CONV_HEAD_SHAPE,
                        ctx,
                        format!("condition `{other}` is not a pure expression"),
                    ));
                    return None;
                }
            };
            let then_branch = conv_term(a, ctx, diags)?;
            let else_branch = conv_term(b, ctx, diags)?;
            Some(ConvTerm::If {
                cond,
                then_branch: Box::new(then_branch),
                else_branch: Box::new(else_branch),
            })
        }
        Term::Call(f, args) => {
            let call = conv_call(f, args, ctx, diags)?;
            Some(ConvTerm::Tail(ConvTail { calls: vec![call] }))
        }
        Term::Seq(first, rest) => match first.as_ref() {
            Term::Assign(x, rhs) => match rhs.as_ref() {
                Term::Expr(e) => {
                    let restc = conv_term(rest, ctx, diags)?;
                    Some(ConvTerm::AssignThen {
                        x: x.clone(),
                        e: e.clone(),
                        rest: Box::new(restc),
                    })
                }
                Term::Call(g, _) => {
                    diags.push(conv_diag(
                        codes::CONV_CALL_IN_EXPR,
                        ctx,
                        format!("assignment to `{x}` calls `{g}`; right-hand sides must be pure expressions"),
                    ));
                    None
                }
                other => {
                    diags.push(conv_diag(
                        codes::CONV_HEAD_SHAPE,
                        ctx,
                        format!("assignment right-hand side `{other}` is not a pure expression"),
                    ));
                    None
                }
            },
            _ => {
                // Not a head assignment, so the whole spine must be a tail
                // of calls.
                let spine = seq_spine(t);
                let mut calls = Vec::with_capacity(spine.len());
                for elem in &spine {
                    match elem {
                        Term::Call(f, args) => calls.push(conv_call(f, args, ctx, diags)?),
                        other => {
                            let code = if spine.iter().any(|e| matches!(e, Term::Call(..))) {
                                codes::CONV_CALL_IN_EXPR
                            } else {
                                codes::CONV_HEAD_SHAPE
                            };
                            diags.push(conv_diag(
                                code,
                                ctx,
                                format!("`{other}` interrupts a tail of calls"),
                            ));
                            return None;
                        }
                    }
                }
                Some(ConvTerm::Tail(ConvTail { calls }))
            }
        },
        Term::Assign(x, _) => {
            diags.push(conv_diag(
                codes::CONV_HEAD_SHAPE,
                ctx,
                format!("assignment to `{x}` has no continuation; the head grammar is `x := e; T`"),
            ));
            None
        }
        Term::LetRec { name, .. } => {
            diags.push(conv_diag(
                codes::CONV_HEAD_SHAPE,
                ctx,
                format!("nested definition of `{name}`; run block floating first"),
            ));
            None
        }
    }
}

/// Classifies a flat program into the convertible grammar, or reports why
/// it does not fit.
pub fn to_convertible(p: &Program) -> Result<ConvProgram, Vec<Diagnostic>> {
    let mut diags = crate::parser::validate_program(p);
    let mut functions = Vec::with_capacity(p.functions.len());
    for f in &p.functions {
        if let Some(body) = conv_term(&f.body, &f.name, &mut diags) {
            functions.push(ConvFunDef {
                name: f.name.clone(),
                params: f.params.clone(),
                body,
            });
        }
    }
    let main = conv_term(&p.main, "main", &mut diags);
    match (main, diags.is_empty()) {
        (Some(main), true) => Ok(ConvProgram { functions, main }),
        (_, _) => Err(diags),
    }
}

// ---------------------------------------------------------------------
// Back to plain terms
// ---------------------------------------------------------------------

impl NestedCall {
    pub fn to_term(&self) -> Term {
        let mut args: Vec<Term> = self.args.iter().cloned().map(Term::Expr).collect();
        if let Some(n) = &self.nested {
            args.push(n.to_term());
        }
        Term::Call(self.f.clone(), args)
    }
}

impl ConvTerm {
    /// The plain term this convertible term denotes. A complete term never
    /// has an empty tail (`eps` only arises as a machine state).
    pub fn to_term(&self) -> Term {
        match self {
            ConvTerm::Leaf(e) => Term::Expr(e.clone()),
            ConvTerm::AssignThen { x, e, rest } => Term::seq(
                Term::assign(x.clone(), Term::Expr(e.clone())),
                rest.to_term(),
            ),
            ConvTerm::If {
                cond,
                then_branch,
                else_branch,
            } => Term::if_(
                Term::Expr(cond.clone()),
                then_branch.to_term(),
                else_branch.to_term(),
            ),
            ConvTerm::Tail(q) => {
                let mut terms: Vec<Term> = q.calls.iter().map(NestedCall::to_term).collect();
                let last = terms.pop().expect("a complete term never has an empty tail");
                terms
                    .into_iter()
                    .rev()
                    .fold(last, |acc, t| Term::seq(t, acc))
            }
        }
    }
}

impl ConvProgram {
    pub fn to_program(&self) -> Program {
        Program {
            functions: self
                .functions
                .iter()
                .map(|f| crate::lifting::FunDef {
                    name: f.name.clone(),
                    params: f.params.clone(),
                    body: f.body.to_term(),
                })
                .collect(),
            main: self.main.to_term(),
        }
    }

    pub fn function(&self, name: &str) -> Option<&ConvFunDef> {
        self.functions.iter().find(|f| f.name == name)
    }
}

impl CpsProgram {
    pub fn function(&self, name: &str) -> Option<&CpsFunDef> {
        self.functions.iter().find(|f| f.name == name)
    }
}

// ---------------------------------------------------------------------
// The conversions
// ---------------------------------------------------------------------

/// Tail conversion: the last call of the tail becomes the first push; a
/// nested call takes its parent's place with the parent pushed as a hole
/// frame.
fn convert_tail(q: &ConvTail) -> CpsTail {
    let mut calls = q.calls.clone();
    let mut pushes = Vec::new();
    while let Some(call) = calls.pop() {
        match call.nested {
            Some(nested) => {
                pushes.push(PushCall {
                    f: call.f,
                    args: call.args,
                    hole: true,
                });
                calls.push(*nested);
            }
            None => pushes.push(PushCall {
                f: call.f,
                args: call.args,
                hole: false,
            }),
        }
    }
    CpsTail { pushes }
}

/// CPS conversion of a term.
pub fn cps_convert(t: &ConvTerm) -> CpsTerm {
    match t {
        ConvTerm::Leaf(e) => CpsTerm::InvokeExpr(e.clone()),
        ConvTerm::AssignThen { x, e, rest } => CpsTerm::AssignThen {
            x: x.clone(),
            e: e.clone(),
            rest: Box::new(cps_convert(rest)),
        },
        ConvTerm::If {
            cond,
            then_branch,
            else_branch,
        } => CpsTerm::If {
            cond: cond.clone(),
            then_branch: Box::new(cps_convert(then_branch)),
            else_branch: Box::new(cps_convert(else_branch)),
        },
        ConvTerm::Tail(q) => CpsTerm::Tail(convert_tail(q)),
    }
}

pub fn cps_convert_program(p: &ConvProgram) -> CpsProgram {
    CpsProgram {
        functions: p
            .functions
            .iter()
            .map(|f| CpsFunDef {
                name: f.name.clone(),
                params: f.params.clone(),
                body: cps_convert(&f.body),
            })
            .collect(),
        main: cps_convert(&p.main),
    }
}

fn invert_tail(pushes: &[PushCall]) -> Result<ConvTail, CpsError> {
    match pushes.split_first() {
        None => Ok(ConvTail::default()),
        Some((p, rest)) => {
            let mut q = invert_tail(rest)?;
            if p.hole {
                // The first push expects the value of the rest's last
                // call, which becomes its nested final argument. A
                // well-formed queue guarantees that call exists.
                let nested = q.calls.pop().ok_or(CpsError::NotWellFormed)?;
                q.calls.push(NestedCall {
                    f: p.f.clone(),
                    args: p.args.clone(),
                    nested: Some(Box::new(nested)),
                });
            } else {
                q.calls.push(NestedCall {
                    f: p.f.clone(),
                    args: p.args.clone(),
                    nested: None,
                });
            }
            Ok(q)
        }
    }
}

/// Inverse CPS conversion, total on well-formed terms.
pub fn cps_invert(t: &CpsTerm) -> Result<ConvTerm, CpsError> {
    match t {
        CpsTerm::InvokeExpr(e) => Ok(ConvTerm::Leaf(e.clone())),
        CpsTerm::AssignThen { x, e, rest } => Ok(ConvTerm::AssignThen {
            x: x.clone(),
            e: e.clone(),
            rest: Box::new(cps_invert(rest)?),
        }),
        CpsTerm::If {
            cond,
            then_branch,
            else_branch,
        } => Ok(ConvTerm::If {
            cond: cond.clone(),
            then_branch: Box::new(cps_invert(then_branch)?),
            else_branch: Box::new(cps_invert(else_branch)?),
        }),
        CpsTerm::Tail(q) => Ok(ConvTerm::Tail(invert_tail(&q.pushes)?)),
    }
}

pub fn cps_invert_program(p: &CpsProgram) -> Result<ConvProgram, CpsError> {
    Ok(ConvProgram {
        functions: p
            .functions
            .iter()
            .map(|f| {
                Ok(ConvFunDef {
                    name: f.name.clone(),
                    params: f.params.clone(),
                    body: cps_invert(&f.body)?,
                })
            })
            .collect::<Result<_, CpsError>>()?,
        main: cps_invert(&p.main)?,
    })
}

/// True iff no continuation queue in the term ends with a hole push
/// immediately followed by `invoke`.
pub fn is_well_formed(t: &CpsTerm) -> bool {
    match t {
        CpsTerm::InvokeExpr(_) => true,
        CpsTerm::AssignThen { rest, .. } => is_well_formed(rest),
        CpsTerm::If {
            then_branch,
            else_branch,
            ..
        } => is_well_formed(then_branch) && is_well_formed(else_branch),
        CpsTerm::Tail(q) => q.pushes.last().is_none_or(|p| !p.hole),
    }
}

pub fn is_well_formed_program(p: &CpsProgram) -> bool {
    p.functions.iter().all(|f| is_well_formed(&f.body)) && is_well_formed(&p.main)
}

/// Context-to-continuation conversion: the innermost frame of the context
/// becomes the head of the continuation.
pub fn convert_context(c: &Context) -> Continuation {
    Continuation {
        frames: c.frames.clone(),
    }
}

/// The inverse of [`convert_context`].
pub fn invert_continuation(k: &Continuation) -> Context {
    Context {
        frames: k.frames.clone(),
    }
}

// ---------------------------------------------------------------------
// Concrete syntax
// ---------------------------------------------------------------------

impl fmt::Display for PushCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "push {}(", self.f)?;
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
            write!(f, "_")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for CpsTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CpsTerm::InvokeExpr(e) => write!(f, "invoke {e}"),
            CpsTerm::AssignThen { x, e, rest } => write!(f, "{x} := {e}; {rest}"),
            CpsTerm::If {
                cond,
                then_branch,
                else_branch,
            } => write!(f, "if {cond} then {{ {then_branch} }} else {{ {else_branch} }}"),
            CpsTerm::Tail(q) => {
                for p in &q.pushes {
                    write!(f, "{p}; ")?;
                }
                write!(f, "invoke")
            }
        }
    }
}

impl fmt::Display for CpsProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.functions {
            writeln!(f, "fun {}({}) {{ {} }}", d.name, d.params.join(", "), d.body)?;
        }
        write!(f, "{}", self.main)
    }
}

impl fmt::Display for ConvProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_program())
    }
}

fn starts_expr(t: &Tok) -> bool {
    matches!(
        t,
        Tok::Int(_) | Tok::Minus | Tok::True | Tok::False | Tok::Unit | Tok::Ident(_) | Tok::LParen
    )
}

fn p_cps_expr(ts: &mut TokStream) -> Result<Expr, Vec<Diagnostic>> {
    use crate::ast::BinOp;
    fn p_atom(ts: &mut TokStream) -> Result<Expr, Vec<Diagnostic>> {
        match ts.peek().clone() {
            Tok::Int(n) => {
                ts.bump();
                Ok(Expr::int(n))
            }
            Tok::Minus => {
                ts.bump();
                match ts.peek().clone() {
                    Tok::Int(n) => {
                        ts.bump();
                        Ok(Expr::int(-n))
                    }
                    _ => Err(ts.unexpected("an integer literal after `-`")),
                }
            }
            Tok::True => {
                ts.bump();
                Ok(Expr::Lit(crate::ast::Value::Bool(true)))
            }
            Tok::False => {
                ts.bump();
                Ok(Expr::Lit(crate::ast::Value::Bool(false)))
            }
            Tok::Unit => {
                ts.bump();
                Ok(Expr::Lit(crate::ast::Value::Unit))
            }
            Tok::Ident(x) => {
                ts.bump();
                Ok(Expr::var(x))
            }
            Tok::LParen => {
                ts.bump();
                let e = p_cps_expr(ts)?;
                ts.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            _ => Err(ts.unexpected("an expression")),
        }
    }
    fn p_add(ts: &mut TokStream) -> Result<Expr, Vec<Diagnostic>> {
        let mut lhs = p_atom(ts)?;
        loop {
            let op = match ts.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            ts.bump();
            let rhs = p_atom(ts)?;
            lhs = Expr::binop(op, lhs, rhs);
        }
        Ok(lhs)
    }
    let lhs = p_add(ts)?;
    let op = match ts.peek() {
        Tok::Lt => Some(BinOp::Lt),
        Tok::EqEq => Some(BinOp::Eq),
        _ => None,
    };
    match op {
        Some(op) => {
            ts.bump();
            let rhs = p_add(ts)?;
            Ok(Expr::binop(op, lhs, rhs))
        }
        None => Ok(lhs),
    }
}

fn p_cps_term(ts: &mut TokStream) -> Result<CpsTerm, Vec<Diagnostic>> {
    match ts.peek().clone() {
        Tok::Ident(k) if k == "push" => {
            let mut pushes = Vec::new();
            loop {
                match ts.peek().clone() {
                    Tok::Ident(k) if k == "push" => {
                        ts.bump();
                        let (f, _) = ts.expect_ident("a function name after `push`")?;
                        ts.expect(Tok::LParen, "`(`")?;
                        let mut args = Vec::new();
                        let mut hole = false;
                        if ts.peek() != &Tok::RParen {
                            loop {
                                if matches!(ts.peek(), Tok::Ident(h) if h == "_") {
                                    ts.bump();
                                    hole = true;
                                    break;
                                }
                                args.push(p_cps_expr(ts)?);
                                if !ts.eat(&Tok::Comma) {
                                    break;
                                }
                            }
                        }
                        ts.expect(Tok::RParen, "`)`")?;
                        ts.expect(Tok::Semi, "`;` after a push")?;
                        pushes.push(PushCall { f, args, hole });
                    }
                    Tok::Ident(k) if k == "invoke" => {
                        ts.bump();
                        return Ok(CpsTerm::Tail(CpsTail { pushes }));
                    }
                    _ => return Err(ts.unexpected("`push` or `invoke`")),
                }
            }
        }
        Tok::Ident(k) if k == "invoke" => {
            ts.bump();
            if starts_expr(ts.peek()) {
                let e = p_cps_expr(ts)?;
                Ok(CpsTerm::InvokeExpr(e))
            } else {
                Ok(CpsTerm::Tail(CpsTail::default()))
            }
        }
        Tok::Ident(x) if ts.peek2() == &Tok::Walrus => {
            ts.bump();
            ts.bump();
            let e = p_cps_expr(ts)?;
            ts.expect(Tok::Semi, "`;` after the assignment")?;
            let rest = p_cps_term(ts)?;
            Ok(CpsTerm::AssignThen {
                x,
                e,
                rest: Box::new(rest),
            })
        }
        Tok::If => {
            ts.bump();
            let cond = p_cps_expr(ts)?;
            ts.expect(Tok::Then, "`then`")?;
            ts.expect(Tok::LBrace, "`{`")?;
            let then_branch = p_cps_term(ts)?;
            ts.expect(Tok::RBrace, "`}` closing the then branch")?;
            ts.expect(Tok::Else, "`else`")?;
            ts.expect(Tok::LBrace, "`{`")?;
            let else_branch = p_cps_term(ts)?;
            ts.expect(Tok::RBrace, "`}` closing the else branch")?;
            Ok(CpsTerm::If {
                cond,
                then_branch: Box::new(then_branch),
                else_branch: Box::new(else_branch),
            })
        }
        _ => Err(ts.unexpected("a CPS term")),
    }
}

/// Parses the concrete CPS syntax written by `Display`: `fun` definitions
/// followed by a main CPS term.
pub fn parse_cps_program(src: &str) -> Result<CpsProgram, Vec<Diagnostic>> {
    let toks = lex(src)?;
    let mut ts = TokStream::new(toks);
    let mut functions = Vec::new();
    while matches!(ts.peek(), Tok::Ident(k) if k == "fun") && matches!(ts.peek2(), Tok::Ident(_)) {
        ts.bump();
        let (name, _) = ts.expect_ident("a function name after `fun`")?;
        ts.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if ts.peek() != &Tok::RParen {
            loop {
                let (x, _) = ts.expect_ident("a parameter name")?;
                params.push(x);
                if !ts.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        ts.expect(Tok::RParen, "`)`")?;
        ts.expect(Tok::LBrace, "`{`")?;
        let body = p_cps_term(&mut ts)?;
        ts.expect(Tok::RBrace, "`}` closing the function body")?;
        functions.push(CpsFunDef { name, params, body });
    }
    let main = p_cps_term(&mut ts)?;
    if ts.peek() != &Tok::Eof {
        return Err(ts.unexpected("end of input"));
    }
    Ok(CpsProgram { functions, main })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Value;
    use crate::lifting::{float_blocks, lift_all};
    use crate::parser::parse_term;

    fn floated_paper() -> Program {
        let t = parse_term("letrec g(x) = { letrec h() = { x } in h() } in g(1)").unwrap();
        float_blocks(&lift_all(&t).unwrap()).unwrap()
    }

    fn call(f: &str, args: Vec<Expr>) -> NestedCall {
        NestedCall {
            f: f.into(),
            args,
            nested: None,
        }
    }

    #[test]
    fn classifies_the_floated_paper_example() {
        let conv = to_convertible(&floated_paper()).unwrap();
        let g = conv.function("g").unwrap();
        assert_eq!(
            g.body,
            ConvTerm::Tail(ConvTail {
                calls: vec![call("h", vec![Expr::var("x")])]
            })
        );
        let h = conv.function("h").unwrap();
        assert_eq!(h.body, ConvTerm::Leaf(Expr::var("x")));
    }

    #[test]
    fn expression_bodies_classify_as_leaves() {
        let p = Program {
            functions: vec![],
            main: Term::int(5),
        };
        let conv = to_convertible(&p).unwrap();
        assert_eq!(conv.main, ConvTerm::Leaf(Expr::int(5)));
    }

    #[test]
    fn call_followed_by_expression_is_rejected() {
        let p = crate::parser::parse_program("fun f(x) { x }\nf(1); 2").unwrap();
        let diags = to_convertible(&p).unwrap_err();
        assert!(diags.iter().any(|d| d.code == codes::CONV_CALL_IN_EXPR));
    }

    #[test]
    fn nested_call_not_in_last_position_is_rejected() {
        let p = crate::parser::parse_program("fun f(x) { x }\nfun g(a, b) { a }\ng(f(1), 2)")
            .unwrap();
        let diags = to_convertible(&p).unwrap_err();
        assert!(diags.iter().any(|d| d.code == codes::CONV_NESTED_NOT_LAST));
    }

    #[test]
    fn converts_empty_tail_to_invoke() {
        assert_eq!(
            cps_convert(&ConvTerm::Tail(ConvTail::default())),
            CpsTerm::Tail(CpsTail::default())
        );
    }

    #[test]
    fn converts_nested_call_with_hole() {
        // (eps ; g(2, f(1)))  =>  push g(2,_); push f(1); invoke
        let q = ConvTail {
            calls: vec![NestedCall {
                f: "g".into(),
                args: vec![Expr::int(2)],
                nested: Some(Box::new(call("f", vec![Expr::int(1)]))),
            }],
        };
        let cps = convert_tail(&q);
        assert_eq!(
            cps.pushes,
            vec![
                PushCall {
                    f: "g".into(),
                    args: vec![Expr::int(2)],
                    hole: true
                },
                PushCall {
                    f: "f".into(),
                    args: vec![Expr::int(1)],
                    hole: false
                },
            ]
        );
        assert_eq!(
            CpsTerm::Tail(cps).to_string(),
            "push g(2, _); push f(1); invoke"
        );
    }

    #[test]
    fn converts_expression_leaf() {
        assert_eq!(
            cps_convert(&ConvTerm::Leaf(Expr::int(7))),
            CpsTerm::InvokeExpr(Expr::int(7))
        );
    }

    #[test]
    fn inverts_invoke_to_empty_tail() {
        assert_eq!(
            cps_invert(&CpsTerm::Tail(CpsTail::default())).unwrap(),
            ConvTerm::Tail(ConvTail::default())
        );
    }

    #[test]
    fn inverts_hole_pushes_back_to_nested_calls() {
        let cps = CpsTerm::Tail(CpsTail {
            pushes: vec![
                PushCall {
                    f: "g".into(),
                    args: vec![Expr::int(2)],
                    hole: true,
                },
                PushCall {
                    f: "f".into(),
                    args: vec![Expr::int(1)],
                    hole: false,
                },
            ],
        });
        let conv = cps_invert(&cps).unwrap();
        assert_eq!(cps_convert(&conv), cps);
        let ConvTerm::Tail(q) = &conv else { panic!() };
        assert_eq!(q.calls.len(), 1);
        assert_eq!(q.calls[0].f, "g");
        assert_eq!(q.calls[0].nested.as_ref().unwrap().f, "f");
    }

    #[test]
    fn inverting_a_non_well_formed_term_fails() {
        let bad = CpsTerm::Tail(CpsTail {
            pushes: vec![PushCall {
                f: "f".into(),
                args: vec![Expr::int(1)],
                hole: true,
            }],
        });
        assert!(!is_well_formed(&bad));
        assert_eq!(cps_invert(&bad).unwrap_err(), CpsError::NotWellFormed);
    }

    #[test]
    fn well_formedness_examples() {
        assert!(is_well_formed(&CpsTerm::Tail(CpsTail::default())));
        let ok = CpsTerm::Tail(CpsTail {
            pushes: vec![
                PushCall {
                    f: "f".into(),
                    args: vec![Expr::int(1)],
                    hole: true,
                },
                PushCall {
                    f: "g".into(),
                    args: vec![Expr::int(2)],
                    hole: false,
                },
            ],
        });
        assert!(is_well_formed(&ok));
    }

    #[test]
    fn conversion_yields_well_formed_terms() {
        let conv = to_convertible(&floated_paper()).unwrap();
        let cps = cps_convert_program(&conv);
        assert!(is_well_formed_program(&cps));
        assert_eq!(cps_invert_program(&cps).unwrap(), conv);
    }

    #[test]
    fn context_continuation_bijection() {
        let empty = Context { frames: vec![] };
        assert_eq!(convert_context(&empty).frames, vec![]);

        let frames = vec![
            Frame {
                f: "f".into(),
                args: vec![Value::Int(1), Value::Int(2)],
                hole: false,
            },
            Frame {
                f: "g".into(),
                args: vec![Value::Int(1)],
                hole: true,
            },
        ];
        let c = Context {
            frames: frames.clone(),
        };
        let k = convert_context(&c);
        assert_eq!(k.frames, frames);
        assert_eq!(invert_continuation(&k), c);
        assert_eq!(convert_context(&invert_continuation(&k)), k);
    }

    #[test]
    fn cps_concrete_syntax_round_trips() {
        let conv = to_convertible(&floated_paper()).unwrap();
        let cps = cps_convert_program(&conv);
        let printed = cps.to_string();
        assert_eq!(parse_cps_program(&printed).unwrap(), cps);
    }

    #[test]
    fn conv_term_to_term_rebuilds_tails() {
        let conv = to_convertible(&floated_paper()).unwrap();
        let back = conv.to_program();
        assert_eq!(to_convertible(&back).unwrap(), conv);
    }
}
