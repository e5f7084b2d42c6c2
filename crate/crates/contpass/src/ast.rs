//! Abstract syntax: values, pure expressions and terms, plus
//! pretty-printing, free-variable analysis and capture-free value
//! substitution.
//!
//! Variables and function names share one flat namespace and are
//! disambiguated by position: call targets are function names, everything
//! else is a variable. Only function parameters bind variables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub type Ident = String;

/// Runtime values. `Unit` is the value of assignments and of functions
/// returning nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Value {
    Unit,
    Bool(bool),
    Int(i64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => write!(f, "unit"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(n) => write!(f, "{n}"),
        }
    }
}

/// Binary operators on integers. `Add`/`Sub` produce integers,
/// `Lt`/`Eq` produce booleans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Lt,
    Eq,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Lt => "<",
            BinOp::Eq => "==",
        }
    }

    /// 0 = comparison (non-associative), 1 = additive (left-associative).
    fn precedence(self) -> u8 {
        match self {
            BinOp::Lt | BinOp::Eq => 0,
            BinOp::Add | BinOp::Sub => 1,
        }
    }
}

/// Pure expressions: no calls, no assignments, no control flow.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Lit(Value),
    Var(Ident),
    BinOp(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<Ident>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn int(n: i64) -> Expr {
        Expr::Lit(Value::Int(n))
    }

    pub fn binop(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::BinOp(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn free_vars(&self) -> BTreeSet<Ident> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Ident>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var(x) => {
                out.insert(x.clone());
            }
            Expr::BinOp(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    /// Replaces every occurrence of a mapped variable by a literal of its
    /// value. Replacements are closed, so no capture is possible.
    pub fn subst_values(&self, binding: &BTreeMap<Ident, Value>) -> Expr {
        match self {
            Expr::Lit(_) => self.clone(),
            Expr::Var(x) => match binding.get(x) {
                Some(v) => Expr::Lit(*v),
                None => self.clone(),
            },
            Expr::BinOp(op, l, r) => {
                Expr::binop(*op, l.subst_values(binding), r.subst_values(binding))
            }
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var(x) => write!(f, "{x}"),
            Expr::BinOp(op, l, r) => {
                let prec = op.precedence();
                if prec < min {
                    write!(f, "(")?;
                }
                // Left operand may sit at the operator's own level
                // (left-associative chains); the right operand must bind
                // tighter to reparse into the same tree.
                l.fmt_prec(f, prec)?;
                write!(f, " {} ", op.symbol())?;
                r.fmt_prec(f, prec + 1)?;
                if prec < min {
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// Terms: assignments, conditionals, sequences, recursive function
/// definitions and calls.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Expr(Expr),
    Assign(Ident, Box<Term>),
    If(Box<Term>, Box<Term>, Box<Term>),
    Seq(Box<Term>, Box<Term>),
    LetRec {
        name: Ident,
        params: Vec<Ident>,
        body: Box<Term>,
        cont: Box<Term>,
    },
    Call(Ident, Vec<Term>),
}

/// One step from a term to one of its direct subterms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ChildIdx {
    AssignRhs,
    IfCond,
    IfThen,
    IfElse,
    SeqFirst,
    SeqSecond,
    LetRecBody,
    LetRecCont,
    CallArg(usize),
}

/// A path from the root of a term to one of its subterm positions.
pub type TermPath = Vec<ChildIdx>;

impl Term {
    pub fn lit(v: Value) -> Term {
        Term::Expr(Expr::Lit(v))
    }

    pub fn int(n: i64) -> Term {
        Term::lit(Value::Int(n))
    }

    pub fn bool(b: bool) -> Term {
        Term::lit(Value::Bool(b))
    }

    pub fn unit() -> Term {
        Term::lit(Value::Unit)
    }

    pub fn var(name: impl Into<Ident>) -> Term {
        Term::Expr(Expr::Var(name.into()))
    }

    pub fn assign(x: impl Into<Ident>, rhs: Term) -> Term {
        Term::Assign(x.into(), Box::new(rhs))
    }

    pub fn if_(cond: Term, then: Term, els: Term) -> Term {
        Term::If(Box::new(cond), Box::new(then), Box::new(els))
    }

    pub fn seq(first: Term, second: Term) -> Term {
        Term::Seq(Box::new(first), Box::new(second))
    }

    pub fn letrec(
        name: impl Into<Ident>,
        params: Vec<Ident>,
        body: Term,
        cont: Term,
    ) -> Term {
        Term::LetRec {
            name: name.into(),
            params,
            body: Box::new(body),
            cont: Box::new(cont),
        }
    }

    pub fn call(f: impl Into<Ident>, args: Vec<Term>) -> Term {
        Term::Call(f.into(), args)
    }

    pub fn children(&self) -> Vec<(ChildIdx, &Term)> {
        match self {
            Term::Expr(_) => vec![],
            Term::Assign(_, rhs) => vec![(ChildIdx::AssignRhs, rhs.as_ref())],
            Term::If(c, t, e) => vec![
                (ChildIdx::IfCond, c.as_ref()),
                (ChildIdx::IfThen, t.as_ref()),
                (ChildIdx::IfElse, e.as_ref()),
            ],
            Term::Seq(a, b) => vec![
                (ChildIdx::SeqFirst, a.as_ref()),
                (ChildIdx::SeqSecond, b.as_ref()),
            ],
            Term::LetRec { body, cont, .. } => vec![
                (ChildIdx::LetRecBody, body.as_ref()),
                (ChildIdx::LetRecCont, cont.as_ref()),
            ],
            Term::Call(_, args) => args
                .iter()
                .enumerate()
                .map(|(i, a)| (ChildIdx::CallArg(i), a))
                .collect(),
        }
    }

    pub fn at_path(&self, path: &[ChildIdx]) -> Option<&Term> {
        let mut cur = self;
        for idx in path {
            cur = cur
                .children()
                .into_iter()
                .find(|(i, _)| i == idx)
                .map(|(_, t)| t)?;
        }
        Some(cur)
    }

    /// Preorder walk over all subterm positions, with their paths.
    pub fn walk(&self, f: &mut impl FnMut(&TermPath, &Term)) {
        fn go(t: &Term, path: &mut TermPath, f: &mut impl FnMut(&TermPath, &Term)) {
            f(path, t);
            for (idx, child) in t.children() {
                path.push(idx);
                go(child, path, f);
                path.pop();
            }
        }
        go(self, &mut Vec::new(), f);
    }

    pub fn node_count(&self) -> usize {
        1 + self
            .children()
            .into_iter()
            .map(|(_, c)| c.node_count())
            .sum::<usize>()
    }

    /// Variables occurring in the term and not bound by any enclosing
    /// function-parameter list within it. Assignment targets count as
    /// occurrences; function names do not.
    pub fn free_vars(&self) -> BTreeSet<Ident> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut out);
        out
    }

    fn collect_free(&self, out: &mut BTreeSet<Ident>) {
        match self {
            Term::Expr(e) => e.collect_vars(out),
            Term::Assign(x, rhs) => {
                out.insert(x.clone());
                rhs.collect_free(out);
            }
            Term::If(c, t, e) => {
                c.collect_free(out);
                t.collect_free(out);
                e.collect_free(out);
            }
            Term::Seq(a, b) => {
                a.collect_free(out);
                b.collect_free(out);
            }
            Term::LetRec {
                params, body, cont, ..
            } => {
                let mut body_vars = BTreeSet::new();
                body.collect_free(&mut body_vars);
                for p in params {
                    body_vars.remove(p);
                }
                out.extend(body_vars);
                cont.collect_free(out);
            }
            Term::Call(_, args) => {
                for a in args {
                    a.collect_free(out);
                }
            }
        }
    }

    /// Function names called anywhere in the term, free or not.
    pub fn called_functions(&self) -> BTreeSet<Ident> {
        let mut out = BTreeSet::new();
        self.walk(&mut |_, t| {
            if let Term::Call(f, _) = t {
                out.insert(f.clone());
            }
        });
        out
    }

    /// Replaces free occurrences of mapped variables by literals of their
    /// values. Bound occurrences (under a parameter of the same name) and
    /// assignment targets are left untouched.
    pub fn subst_values(&self, binding: &BTreeMap<Ident, Value>) -> Term {
        if binding.is_empty() {
            return self.clone();
        }
        match self {
            Term::Expr(e) => Term::Expr(e.subst_values(binding)),
            Term::Assign(x, rhs) => Term::assign(x.clone(), rhs.subst_values(binding)),
            Term::If(c, t, e) => Term::if_(
                c.subst_values(binding),
                t.subst_values(binding),
                e.subst_values(binding),
            ),
            Term::Seq(a, b) => Term::seq(a.subst_values(binding), b.subst_values(binding)),
            Term::LetRec {
                name,
                params,
                body,
                cont,
            } => {
                let inner: BTreeMap<Ident, Value> = binding
                    .iter()
                    .filter(|(k, _)| !params.contains(k))
                    .map(|(k, v)| (k.clone(), *v))
                    .collect();
                Term::letrec(
                    name.clone(),
                    params.clone(),
                    body.subst_values(&inner),
                    cont.subst_values(binding),
                )
            }
            Term::Call(f, args) => Term::call(
                f.clone(),
                args.iter().map(|a| a.subst_values(binding)).collect(),
            ),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Expr(e) => write!(f, "{e}"),
            Term::Assign(x, rhs) => write!(f, "{x} := {rhs}"),
            Term::If(c, t, e) => write!(f, "if {c} then {{ {t} }} else {{ {e} }}"),
            Term::Seq(a, b) => write!(f, "{a}; {b}"),
            Term::LetRec {
                name,
                params,
                body,
                cont,
            } => {
                write!(f, "letrec {name}({}) = {{ {body} }} in {cont}", params.join(", "))
            }
            Term::Call(g, args) => {
                write!(f, "{g}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// letrec g(x) = { letrec h() = { x } in h() } in g(1)
    pub(crate) fn paper_example() -> Term {
        Term::letrec(
            "g",
            vec!["x".into()],
            Term::letrec("h", vec![], Term::var("x"), Term::call("h", vec![])),
            Term::call("g", vec![Term::int(1)]),
        )
    }

    #[test]
    fn pretty_prints_literals_and_sequences() {
        assert_eq!(Term::int(1).to_string(), "1");
        assert_eq!(
            Term::seq(Term::assign("x", Term::int(2)), Term::var("x")).to_string(),
            "x := 2; x"
        );
    }

    #[test]
    fn pretty_prints_paper_example() {
        assert_eq!(
            paper_example().to_string(),
            "letrec g(x) = { letrec h() = { x } in h() } in g(1)"
        );
    }

    #[test]
    fn pretty_prints_operator_precedence() {
        let add = Expr::binop(BinOp::Add, Expr::var("a"), Expr::var("b"));
        assert_eq!(
            Expr::binop(BinOp::Lt, add.clone(), Expr::int(5)).to_string(),
            "a + b < 5"
        );
        assert_eq!(
            Expr::binop(BinOp::Add, Expr::var("c"), add.clone()).to_string(),
            "c + (a + b)"
        );
        assert_eq!(
            Expr::binop(
                BinOp::Add,
                Expr::binop(BinOp::Lt, Expr::var("a"), Expr::var("b")),
                Expr::int(1)
            )
            .to_string(),
            "(a < b) + 1"
        );
    }

    #[test]
    fn free_vars_single_variable() {
        assert_eq!(
            Term::var("x").free_vars(),
            BTreeSet::from(["x".to_string()])
        );
    }

    #[test]
    fn free_vars_sees_through_inner_function() {
        // letrec h() = { x } in h()
        let t = Term::letrec("h", vec![], Term::var("x"), Term::call("h", vec![]));
        assert_eq!(t.free_vars(), BTreeSet::from(["x".to_string()]));
    }

    #[test]
    fn free_vars_respects_parameter_binding() {
        // letrec h(y) = { y } in h(x)
        let t = Term::letrec(
            "h",
            vec!["y".into()],
            Term::var("y"),
            Term::call("h", vec![Term::var("x")]),
        );
        assert_eq!(t.free_vars(), BTreeSet::from(["x".to_string()]));
    }

    #[test]
    fn free_vars_counts_assignment_targets() {
        assert_eq!(
            Term::assign("x", Term::int(1)).free_vars(),
            BTreeSet::from(["x".to_string()])
        );
    }

    #[test]
    fn subst_direct() {
        let m = BTreeMap::from([("x".to_string(), Value::Int(3))]);
        assert_eq!(Term::var("x").subst_values(&m), Term::int(3));
    }

    #[test]
    fn subst_descends_into_nested_call_arguments() {
        // g(2, f(x)) with x -> 7
        let t = Term::call(
            "g",
            vec![Term::int(2), Term::call("f", vec![Term::var("x")])],
        );
        let m = BTreeMap::from([("x".to_string(), Value::Int(7))]);
        assert_eq!(
            t.subst_values(&m),
            Term::call("g", vec![Term::int(2), Term::call("f", vec![Term::int(7)])])
        );
    }

    #[test]
    fn subst_respects_shadowing() {
        // letrec h(x) = { x } in h(x), x -> 1: only the call argument changes.
        let t = Term::letrec(
            "h",
            vec!["x".into()],
            Term::var("x"),
            Term::call("h", vec![Term::var("x")]),
        );
        let m = BTreeMap::from([("x".to_string(), Value::Int(1))]);
        assert_eq!(
            t.subst_values(&m),
            Term::letrec(
                "h",
                vec!["x".into()],
                Term::var("x"),
                Term::call("h", vec![Term::int(1)]),
            )
        );
    }

    #[test]
    fn subst_empty_map_is_identity() {
        let t = paper_example();
        assert_eq!(t.subst_values(&BTreeMap::new()), t);
    }

    #[test]
    fn paths_address_subterms() {
        let t = paper_example();
        let body = t.at_path(&[ChildIdx::LetRecBody]).unwrap();
        assert!(matches!(body, Term::LetRec { name, .. } if name == "h"));
        assert!(t.at_path(&[ChildIdx::IfCond]).is_none());
        assert_eq!(t.node_count(), 6);
    }
}
