//! Lambda-lifting in two halves: parameter lifting (threading a free
//! variable as an extra parameter through every inner function) and block
//! floating (hoisting the now-closed functions to top level). Also the
//! syntactic liftability check that makes parameter lifting sound, and
//! the lifted-environment transformation used by the runtime monitors.

use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{ChildIdx, Ident, Term, TermPath};
use crate::bigstep::{Closure, FunEnv};

/// A top-level function of a floated program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunDef {
    pub name: Ident,
    pub params: Vec<Ident>,
    pub body: Term,
}

/// A flat program: top-level functions plus a main term. Bodies and main
/// contain no `letrec`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub functions: Vec<FunDef>,
    pub main: Term,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&FunDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Rebuilds a single term with the functions reintroduced as a chain
    /// of `letrec`s around the main term, outermost first. Forward calls
    /// (a function calling one defined later in the list) are not
    /// representable under `letrec` scoping, so callers that need big-step
    /// agreement must only pass programs whose calls go backwards or to
    /// themselves.
    pub fn unfloat(&self) -> Term {
        let mut t = self.main.clone();
        for f in self.functions.iter().rev() {
            t = Term::letrec(f.name.clone(), f.params.clone(), f.body.clone(), t);
        }
        t
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.functions {
            writeln!(f, "fun {}({}) {{ {} }}", d.name, d.params.join(", "), d.body)?;
        }
        write!(f, "{}", self.main)
    }
}

/// A single parameter-lifting target: the parameter `param` of function
/// `owner`, threaded through every function defined anywhere inside
/// `owner`'s body (the `inner_funs`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftTarget {
    pub param: Ident,
    pub owner: Ident,
    pub inner_funs: BTreeSet<Ident>,
}

impl LiftTarget {
    /// Locates `owner` in the term and computes its inner functions.
    pub fn resolve(t: &Term, param: &str, owner: &str) -> Result<LiftTarget, LiftError> {
        let (letrec, _) = find_letrec(t, owner)
            .ok_or_else(|| LiftError::TargetNotFound(format!("no function named `{owner}`")))?;
        let Term::LetRec { params, body, .. } = letrec else {
            unreachable!()
        };
        if !params.iter().any(|p| p == param) {
            return Err(LiftError::TargetNotFound(format!(
                "`{param}` is not a parameter of `{owner}`"
            )));
        }
        Ok(LiftTarget {
            param: param.to_string(),
            owner: owner.to_string(),
            inner_funs: defined_functions(body),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LiftViolation {
    /// Path of the offending call, relative to the root of the checked term.
    pub path: TermPath,
    pub callee: Ident,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftReport {
    pub target: LiftTarget,
    pub liftable: bool,
    pub violations: Vec<LiftViolation>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LiftError {
    #[error("lift target not found: {0}")]
    TargetNotFound(String),
    #[error("parameter `{}` of `{}` is not liftable ({} offending call site{})",
            .0.target.param, .0.target.owner, .0.violations.len(),
            if .0.violations.len() == 1 { "" } else { "s" })]
    NotLiftable(LiftReport),
    #[error("function `{0}` still has free variables {1:?}; run parameter lifting first")]
    NotClosed(Ident, BTreeSet<Ident>),
    #[error("parameter lifting did not reach a fixpoint")]
    NoFixpoint,
}

/// Tail positions of a term: the whole term, both branches of an `if`,
/// the second of a sequence and the continuation of a `letrec`,
/// recursively.
pub fn tail_positions(t: &Term) -> BTreeSet<TermPath> {
    let mut out = BTreeSet::new();
    fn go(t: &Term, path: &mut TermPath, out: &mut BTreeSet<TermPath>) {
        out.insert(path.clone());
        match t {
            Term::If(_, a, b) => {
                path.push(ChildIdx::IfThen);
                go(a, path, out);
                path.pop();
                path.push(ChildIdx::IfElse);
                go(b, path, out);
                path.pop();
            }
            Term::Seq(_, b) => {
                path.push(ChildIdx::SeqSecond);
                go(b, path, out);
                path.pop();
            }
            Term::LetRec { cont, .. } => {
                path.push(ChildIdx::LetRecCont);
                go(cont, path, out);
                path.pop();
            }
            _ => {}
        }
    }
    go(t, &mut Vec::new(), &mut out);
    out
}

/// Local positions of a term: every position not under a `letrec` body.
/// The continuation of a `letrec` is local; its body is not.
pub fn local_positions(t: &Term) -> BTreeSet<TermPath> {
    let mut out = BTreeSet::new();
    fn go(t: &Term, path: &mut TermPath, out: &mut BTreeSet<TermPath>) {
        out.insert(path.clone());
        for (idx, child) in t.children() {
            if idx == ChildIdx::LetRecBody {
                continue;
            }
            path.push(idx);
            go(child, path, out);
            path.pop();
        }
    }
    go(t, &mut Vec::new(), &mut out);
    out
}

/// All function names defined (at any depth) inside a term.
pub fn defined_functions(t: &Term) -> BTreeSet<Ident> {
    let mut out = BTreeSet::new();
    t.walk(&mut |_, node| {
        if let Term::LetRec { name, .. } = node {
            out.insert(name.clone());
        }
    });
    out
}

fn find_letrec<'a>(t: &'a Term, name: &str) -> Option<(&'a Term, TermPath)> {
    let mut found = None;
    t.walk(&mut |path, node| {
        if found.is_none() {
            if let Term::LetRec { name: n, .. } = node {
                if n == name {
                    found = Some((node, path.clone()));
                }
            }
        }
    });
    found
}

/// Checks that every call to an inner function of the target's owner sits
/// in tail position of the owner's body or of one of the inner functions'
/// bodies.
pub fn check_liftable(t: &Term, target: &LiftTarget) -> Result<LiftReport, LiftError> {
    let (owner_node, owner_path) = find_letrec(t, &target.owner)
        .ok_or_else(|| LiftError::TargetNotFound(format!("no function named `{}`", target.owner)))?;
    let Term::LetRec { params, body, .. } = owner_node else {
        unreachable!()
    };
    if !params.iter().any(|p| p == &target.param) {
        return Err(LiftError::TargetNotFound(format!(
            "`{}` is not a parameter of `{}`",
            target.param, target.owner
        )));
    }

    let mut violations = Vec::new();
    if !target.inner_funs.is_empty() {
        let owner_tails = tail_positions(body);
        let mut calls: Vec<(TermPath, Ident)> = Vec::new();
        body.walk(&mut |path, node| {
            if let Term::Call(f, _) = node {
                if target.inner_funs.contains(f) {
                    calls.push((path.clone(), f.clone()));
                }
            }
        });

        for (path, callee) in calls {
            // The call must be in tail position of its innermost enclosing
            // function body; with no enclosing letrec, that is the owner's
            // own body.
            let last_body = path.iter().rposition(|i| *i == ChildIdx::LetRecBody);
            let ok = match last_body {
                None => owner_tails.contains(&path),
                Some(i) => {
                    let enclosing_body = body.at_path(&path[..=i]).expect("path into body");
                    tail_positions(enclosing_body).contains(&path[i + 1..].to_vec())
                }
            };
            if !ok {
                let enclosing = match last_body {
                    None => target.owner.clone(),
                    Some(i) => match body.at_path(&path[..i]) {
                        Some(Term::LetRec { name, .. }) => name.clone(),
                        _ => target.owner.clone(),
                    },
                };
                let mut abs = owner_path.clone();
                abs.push(ChildIdx::LetRecBody);
                abs.extend(path.iter().copied());
                violations.push(LiftViolation {
                    path: abs,
                    callee,
                    reason: format!("call is not in tail position of `{enclosing}`"),
                });
            }
        }
    }

    Ok(LiftReport {
        target: target.clone(),
        liftable: violations.is_empty(),
        violations,
    })
}

/// The core term transformation of parameter lifting: every definition of
/// an inner function gains a trailing parameter, every call to one gains
/// the variable as a trailing argument. Assignment targets are untouched
/// even when they name the lifted variable.
pub(crate) fn lift_term(t: &Term, x: &Ident, inner: &BTreeSet<Ident>) -> Term {
    match t {
        Term::Expr(_) => t.clone(),
        Term::Assign(y, a) => Term::assign(y.clone(), lift_term(a, x, inner)),
        Term::If(c, a, b) => Term::if_(
            lift_term(c, x, inner),
            lift_term(a, x, inner),
            lift_term(b, x, inner),
        ),
        Term::Seq(a, b) => Term::seq(lift_term(a, x, inner), lift_term(b, x, inner)),
        Term::LetRec {
            name,
            params,
            body,
            cont,
        } => {
            let mut params = params.clone();
            if inner.contains(name) {
                params.push(x.clone());
            }
            Term::letrec(
                name.clone(),
                params,
                lift_term(body, x, inner),
                lift_term(cont, x, inner),
            )
        }
        Term::Call(f, args) => {
            let mut args: Vec<Term> = args.iter().map(|a| lift_term(a, x, inner)).collect();
            if inner.contains(f) {
                args.push(Term::var(x.clone()));
            }
            Term::call(f.clone(), args)
        }
    }
}

/// Lifts a single parameter, refusing when the liftability check fails.
pub fn lift_param(t: &Term, target: &LiftTarget) -> Result<Term, LiftError> {
    let report = check_liftable(t, target)?;
    if !report.liftable {
        return Err(LiftError::NotLiftable(report));
    }
    Ok(lift_term(t, &target.param, &target.inner_funs))
}

/// Every (param, owner) pair whose parameter occurs free in a function
/// nested inside the owner's body, innermost owners first.
pub fn lift_targets(t: &Term) -> Vec<LiftTarget> {
    struct Site {
        depth: usize,
        target: LiftTarget,
    }
    let mut sites: Vec<Site> = Vec::new();
    t.walk(&mut |path, node| {
        if let Term::LetRec {
            name, params, body, ..
        } = node
        {
            let inner = defined_functions(body);
            if inner.is_empty() {
                return;
            }
            // Free variables of the functions nested in this body.
            let mut needed: BTreeSet<Ident> = BTreeSet::new();
            body.walk(&mut |_, n| {
                if let Term::LetRec {
                    params: ps,
                    body: b,
                    ..
                } = n
                {
                    for v in b.free_vars() {
                        if !ps.contains(&v) {
                            needed.insert(v);
                        }
                    }
                }
            });
            let depth = path.iter().filter(|i| **i == ChildIdx::LetRecBody).count();
            for p in params {
                if needed.contains(p) {
                    sites.push(Site {
                        depth,
                        target: LiftTarget {
                            param: p.clone(),
                            owner: name.clone(),
                            inner_funs: inner.clone(),
                        },
                    });
                }
            }
        }
    });
    sites.sort_by(|a, b| {
        b.depth
            .cmp(&a.depth)
            .then_with(|| a.target.param.cmp(&b.target.param))
            .then_with(|| a.target.owner.cmp(&b.target.owner))
    });
    sites.into_iter().map(|s| s.target).collect()
}

/// Whole-program parameter lifting: applies `lift_param` for every
/// candidate target until no function body has free variables.
pub fn lift_all(t: &Term) -> Result<Term, LiftError> {
    let mut cur = t.clone();
    for _round in 0..64 {
        let targets = lift_targets(&cur);
        if targets.is_empty() {
            return Ok(cur);
        }
        for target in &targets {
            cur = lift_param(&cur, target)?;
        }
    }
    Err(LiftError::NoFixpoint)
}

/// Hoists every `letrec` to a flat top-level function list, definition
/// order outermost-first. Requires every function body to be closed under
/// its own parameters (i.e. `lift_all` already applied).
pub fn float_blocks(t: &Term) -> Result<Program, LiftError> {
    let mut open = None;
    t.walk(&mut |_, node| {
        if open.is_none() {
            if let Term::LetRec { name, params, body, .. } = node {
                let mut fv = body.free_vars();
                for p in params {
                    fv.remove(p);
                }
                if !fv.is_empty() {
                    open = Some((name.clone(), fv));
                }
            }
        }
    });
    if let Some((name, fv)) = open {
        return Err(LiftError::NotClosed(name, fv));
    }

    fn float(t: &Term, defs: &mut Vec<FunDef>) -> Term {
        match t {
            Term::LetRec {
                name,
                params,
                body,
                cont,
            } => {
                let slot = defs.len();
                defs.push(FunDef {
                    name: name.clone(),
                    params: params.clone(),
                    body: Term::unit(), // replaced below
                });
                let body = float(body, defs);
                defs[slot].body = body;
                float(cont, defs)
            }
            Term::Expr(_) => t.clone(),
            Term::Assign(x, rhs) => Term::assign(x.clone(), float(rhs, defs)),
            Term::If(c, a, b) => {
                Term::if_(float(c, defs), float(a, defs), float(b, defs))
            }
            Term::Seq(a, b) => Term::seq(float(a, defs), float(b, defs)),
            Term::Call(f, args) => {
                Term::call(f.clone(), args.iter().map(|a| float(a, defs)).collect())
            }
        }
    }

    let mut functions = Vec::new();
    let main = float(t, &mut functions);
    Ok(Program { functions, main })
}

/// The lifted form of a function environment: closures of the target's
/// inner functions gain the trailing parameter and lose it from their
/// captured variables; every body is lifted; nested environments are
/// lifted recursively.
pub fn lift_env(funs: &FunEnv, target: &LiftTarget) -> FunEnv {
    let mut out = FunEnv::new();
    for (name, c) in funs.visible().into_iter().rev() {
        let lifted_body = lift_term(&c.body, &target.param, &target.inner_funs);
        let lifted = if target.inner_funs.contains(name) {
            let mut params = c.params.clone();
            params.push(target.param.clone());
            Closure {
                params,
                body: lifted_body,
                env: c.env.without(std::slice::from_ref(&target.param)),
                funs: lift_env(&c.funs, target),
            }
        } else {
            Closure {
                params: c.params.clone(),
                body: lifted_body,
                env: c.env.clone(),
                funs: lift_env(&c.funs, target),
            }
        };
        out = out.extend(name.clone(), Rc::new(lifted));
    }
    out
}

/// Optional readability pass: renames shadowing parameters introduced by
/// lifting to fresh names, e.g. the second `x` becomes `x_1`.
pub fn rename_shadowed_params(t: &Term) -> Term {
    let mut reserved: BTreeSet<Ident> = BTreeSet::new();
    t.walk(&mut |_, node| match node {
        Term::LetRec { name, params, .. } => {
            reserved.insert(name.clone());
            reserved.extend(params.iter().cloned());
        }
        Term::Expr(e) => reserved.extend(e.free_vars()),
        Term::Assign(x, _) => {
            reserved.insert(x.clone());
        }
        _ => {}
    });

    fn fresh(base: &str, reserved: &mut BTreeSet<Ident>) -> Ident {
        for i in 1.. {
            let candidate = format!("{base}_{i}");
            if !reserved.contains(&candidate) {
                reserved.insert(candidate.clone());
                return candidate;
            }
        }
        unreachable!()
    }

    // Renames variable occurrences bound by the current binder, stopping
    // at any inner letrec that re-binds the name.
    fn rename_var(t: &Term, from: &Ident, to: &Ident) -> Term {
        fn rename_expr(e: &crate::ast::Expr, from: &Ident, to: &Ident) -> crate::ast::Expr {
            use crate::ast::Expr;
            match e {
                Expr::Lit(_) => e.clone(),
                Expr::Var(x) if x == from => Expr::Var(to.clone()),
                Expr::Var(_) => e.clone(),
                Expr::BinOp(op, l, r) => Expr::binop(
                    *op,
                    rename_expr(l, from, to),
                    rename_expr(r, from, to),
                ),
            }
        }
        match t {
            Term::Expr(e) => Term::Expr(rename_expr(e, from, to)),
            Term::Assign(x, rhs) => {
                let x = if x == from { to.clone() } else { x.clone() };
                Term::Assign(x, Box::new(rename_var(rhs, from, to)))
            }
            Term::If(c, a, b) => Term::if_(
                rename_var(c, from, to),
                rename_var(a, from, to),
                rename_var(b, from, to),
            ),
            Term::Seq(a, b) => Term::seq(rename_var(a, from, to), rename_var(b, from, to)),
            Term::LetRec {
                name,
                params,
                body,
                cont,
            } => {
                let body = if params.contains(from) {
                    body.as_ref().clone()
                } else {
                    rename_var(body, from, to)
                };
                Term::letrec(
                    name.clone(),
                    params.clone(),
                    body,
                    rename_var(cont, from, to),
                )
            }
            Term::Call(f, args) => Term::call(
                f.clone(),
                args.iter().map(|a| rename_var(a, from, to)).collect(),
            ),
        }
    }

    fn go(t: &Term, seen: &mut BTreeSet<Ident>, reserved: &mut BTreeSet<Ident>) -> Term {
        match t {
            Term::LetRec {
                name,
                params,
                body,
                cont,
            } => {
                let mut body = body.as_ref().clone();
                let mut new_params = Vec::with_capacity(params.len());
                for p in params {
                    if seen.contains(p) {
                        let np = fresh(p, reserved);
                        body = rename_var(&body, p, &np);
                        seen.insert(np.clone());
                        new_params.push(np);
                    } else {
                        seen.insert(p.clone());
                        new_params.push(p.clone());
                    }
                }
                Term::letrec(
                    name.clone(),
                    new_params,
                    go(&body, seen, reserved),
                    go(cont, seen, reserved),
                )
            }
            Term::Expr(_) => t.clone(),
            Term::Assign(x, rhs) => Term::assign(x.clone(), go(rhs, seen, reserved)),
            Term::If(c, a, b) => Term::if_(
                go(c, seen, reserved),
                go(a, seen, reserved),
                go(b, seen, reserved),
            ),
            Term::Seq(a, b) => Term::seq(go(a, seen, reserved), go(b, seen, reserved)),
            Term::Call(f, args) => Term::call(
                f.clone(),
                args.iter().map(|a| go(a, seen, reserved)).collect(),
            ),
        }
    }

    go(t, &mut BTreeSet::new(), &mut reserved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bigstep::{eval_naive, VarEnv};
    use crate::parser::{parse_term, validate, validate_lifted};

    fn paper_term() -> Term {
        parse_term("letrec g(x) = { letrec h() = { x } in h() } in g(1)").unwrap()
    }

    fn paper_target(t: &Term) -> LiftTarget {
        LiftTarget::resolve(t, "x", "g").unwrap()
    }

    #[test]
    fn tail_positions_of_sequence() {
        let t = parse_term("a(); b()").unwrap();
        let tails = tail_positions(&t);
        assert_eq!(
            tails,
            BTreeSet::from([vec![], vec![ChildIdx::SeqSecond]])
        );
    }

    #[test]
    fn tail_positions_of_conditional() {
        let t = parse_term("if c() then { a() } else { b() }").unwrap();
        let tails = tail_positions(&t);
        assert_eq!(
            tails,
            BTreeSet::from([vec![], vec![ChildIdx::IfThen], vec![ChildIdx::IfElse]])
        );
    }

    #[test]
    fn assignment_rhs_is_not_a_tail_position() {
        let t = parse_term("letrec f(x) = { 0 } in x := f(1)").unwrap();
        let Term::LetRec { cont, .. } = &t else { panic!() };
        assert_eq!(tail_positions(cont), BTreeSet::from([vec![]]));
    }

    #[test]
    fn local_positions_stop_at_function_bodies() {
        let t = parse_term("letrec f(x) = { x } in f(1)").unwrap();
        let locals = local_positions(&t);
        assert!(locals.contains(&vec![ChildIdx::LetRecCont]));
        assert!(!locals.contains(&vec![ChildIdx::LetRecBody]));

        let assign = Term::assign("x", Term::int(1));
        assert!(local_positions(&assign).contains(&vec![ChildIdx::AssignRhs]));

        let call = Term::call("f", vec![Term::int(1)]);
        assert!(local_positions(&call).contains(&vec![ChildIdx::CallArg(0)]));
    }

    #[test]
    fn paper_example_is_liftable() {
        let t = paper_term();
        let report = check_liftable(&t, &paper_target(&t)).unwrap();
        assert!(report.liftable);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn non_tail_call_is_reported() {
        let t = parse_term("letrec g(x) = { letrec h() = { x } in h(); 0 } in g(1)").unwrap();
        let report = check_liftable(&t, &paper_target(&t)).unwrap();
        assert!(!report.liftable);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].callee, "h");
        // The violating call is the first of the sequence in g's body.
        let at = t.at_path(&report.violations[0].path).unwrap();
        assert_eq!(at, &Term::call("h", vec![]));
    }

    #[test]
    fn no_inner_functions_is_vacuously_liftable() {
        let t = parse_term("letrec g(x) = { x } in g(1)").unwrap();
        let target = LiftTarget::resolve(&t, "x", "g").unwrap();
        assert!(target.inner_funs.is_empty());
        assert!(check_liftable(&t, &target).unwrap().liftable);
    }

    #[test]
    fn missing_target_is_an_error() {
        let t = paper_term();
        assert!(matches!(
            LiftTarget::resolve(&t, "y", "g"),
            Err(LiftError::TargetNotFound(_))
        ));
        assert!(matches!(
            LiftTarget::resolve(&t, "x", "nope"),
            Err(LiftError::TargetNotFound(_))
        ));
    }

    #[test]
    fn lift_param_on_paper_example() {
        let t = paper_term();
        let lifted = lift_param(&t, &paper_target(&t)).unwrap();
        assert_eq!(
            lifted,
            parse_term("letrec g(x) = { letrec h(x) = { x } in h(x) } in g(1)").unwrap()
        );
        assert!(validate_lifted(&lifted).is_empty());
    }

    #[test]
    fn lift_param_without_inner_functions_is_identity() {
        let t = parse_term("letrec g(x) = { x } in g(1)").unwrap();
        let target = LiftTarget::resolve(&t, "x", "g").unwrap();
        assert_eq!(lift_param(&t, &target).unwrap(), t);
    }

    #[test]
    fn lift_param_appends_to_existing_parameters() {
        let t = parse_term("letrec g(x) = { letrec h(a) = { a } in h(x) } in g(3)").unwrap();
        let lifted = lift_param(&t, &paper_target(&t)).unwrap();
        assert_eq!(
            lifted,
            parse_term("letrec g(x) = { letrec h(a, x) = { a } in h(x, x) } in g(3)").unwrap()
        );
    }

    #[test]
    fn lift_param_refuses_non_liftable_targets() {
        let t = parse_term("letrec g(x) = { letrec h() = { x } in h(); 0 } in g(1)").unwrap();
        match lift_param(&t, &paper_target(&t)) {
            Err(LiftError::NotLiftable(report)) => assert_eq!(report.violations.len(), 1),
            other => panic!("expected NotLiftable, got {other:?}"),
        }
    }

    #[test]
    fn lift_all_reaches_the_paper_form() {
        let lifted = lift_all(&paper_term()).unwrap();
        assert_eq!(
            lifted,
            parse_term("letrec g(x) = { letrec h(x) = { x } in h(x) } in g(1)").unwrap()
        );
    }

    #[test]
    fn lift_all_is_identity_on_lifted_terms() {
        let t = parse_term("letrec g(x) = { letrec h(x) = { x } in h(x) } in g(1)").unwrap();
        assert_eq!(lift_all(&t).unwrap(), t);
    }

    #[test]
    fn lift_all_threads_through_two_levels() {
        let t = parse_term(
            "letrec g(x) = { letrec h() = { letrec k() = { x } in k() } in h() } in g(1)",
        )
        .unwrap();
        let lifted = lift_all(&t).unwrap();
        // Both k and h gained the parameter and every call passes it.
        assert_eq!(
            lifted,
            parse_term(
                "letrec g(x) = { letrec h(x) = { letrec k(x) = { x } in k(x) } in h(x) } in g(1)"
            )
            .unwrap()
        );
        // No function body keeps free variables.
        lifted.walk(&mut |_, n| {
            if let Term::LetRec { params, body, .. } = n {
                let mut fv = body.free_vars();
                for p in params {
                    fv.remove(p);
                }
                assert!(fv.is_empty());
            }
        });
        // Evaluation agrees with the original.
        let a = eval_naive(&t, 1000).unwrap();
        let b = eval_naive(&lifted, 1000).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn float_blocks_flattens_the_lifted_example() {
        let lifted = lift_all(&paper_term()).unwrap();
        let prog = float_blocks(&lifted).unwrap();
        assert_eq!(prog.functions.len(), 2);
        assert_eq!(prog.functions[0].name, "g");
        assert_eq!(prog.functions[0].body, Term::call("h", vec![Term::var("x")]));
        assert_eq!(prog.functions[1].name, "h");
        assert_eq!(prog.functions[1].body, Term::var("x"));
        assert_eq!(prog.main, Term::call("g", vec![Term::int(1)]));
        assert!(prog
            .functions
            .iter()
            .all(|f| !matches!(f.body, Term::LetRec { .. })));
    }

    #[test]
    fn float_blocks_of_a_literal_is_trivial() {
        let prog = float_blocks(&Term::int(5)).unwrap();
        assert!(prog.functions.is_empty());
        assert_eq!(prog.main, Term::int(5));
    }

    #[test]
    fn float_blocks_two_level_example() {
        let t = parse_term(
            "letrec g(x) = { letrec h() = { letrec k() = { x } in k() } in h() } in g(1)",
        )
        .unwrap();
        let prog = float_blocks(&lift_all(&t).unwrap()).unwrap();
        assert_eq!(prog.functions.len(), 3);
        assert_eq!(prog.main, Term::call("g", vec![Term::int(1)]));
        // Un-floating preserves big-step meaning.
        let v = eval_naive(&prog.unfloat(), 1000).unwrap().value;
        assert_eq!(v, eval_naive(&t, 1000).unwrap().value);
    }

    #[test]
    fn float_blocks_rejects_open_functions() {
        let t = paper_term(); // h still captures x
        assert!(matches!(
            float_blocks(&t),
            Err(LiftError::NotClosed(name, _)) if name == "h"
        ));
    }

    #[test]
    fn lift_env_examples() {
        let target = LiftTarget {
            param: "x".into(),
            owner: "g".into(),
            inner_funs: BTreeSet::from(["h".to_string()]),
        };
        assert_eq!(lift_env(&FunEnv::new(), &target), FunEnv::new());

        // Inner function: parameter appended, capture removed.
        let l = crate::bigstep::Location(7);
        let h = Rc::new(Closure {
            params: vec!["a".into()],
            body: Term::var("a"),
            env: VarEnv::from_pairs([("x".to_string(), l)]),
            funs: FunEnv::new(),
        });
        let f = FunEnv::new().extend("h".into(), h);
        let lifted = lift_env(&f, &target);
        let h2 = lifted.lookup("h").unwrap();
        assert_eq!(h2.params, vec!["a".to_string(), "x".to_string()]);
        assert!(h2.env.is_empty());

        // Other functions: only the body is lifted.
        let caller = Rc::new(Closure {
            params: vec!["b".into()],
            body: Term::call("h", vec![Term::var("b")]),
            env: VarEnv::new(),
            funs: FunEnv::new(),
        });
        let f = FunEnv::new().extend("f".into(), caller);
        let lifted = lift_env(&f, &target);
        let f2 = lifted.lookup("f").unwrap();
        assert_eq!(f2.params, vec!["b".to_string()]);
        assert_eq!(
            f2.body,
            Term::call("h", vec![Term::var("b"), Term::var("x")])
        );
    }

    #[test]
    fn rename_shadowed_gives_alpha_equivalent_display() {
        let lifted = lift_all(&paper_term()).unwrap();
        let renamed = rename_shadowed_params(&lifted);
        assert_eq!(
            renamed,
            parse_term("letrec g(x) = { letrec h(x_1) = { x_1 } in h(x) } in g(1)").unwrap()
        );
        assert!(validate(&renamed).is_empty());
        assert_eq!(
            eval_naive(&renamed, 100).unwrap().value,
            eval_naive(&lifted, 100).unwrap().value
        );
    }
}
