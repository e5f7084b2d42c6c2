//! Concrete syntax: lexer, recursive-descent parser and scope validator.
//!
//! Grammar (LL(1) on the token stream, `;` associates right, `:=` binds
//! tighter than `;`):
//!
//! ```text
//! term := seq
//! seq  := stmt (";" seq)?
//! stmt := "letrec" IDENT "(" params? ")" "=" "{" term "}" "in" term
//!       | IDENT ":=" stmt
//!       | "if" term "then" "{" term "}" "else" "{" term "}"
//!       | IDENT "(" (term ("," term)*)? ")"
//!       | expr
//! expr := add (("<" | "==") add)?
//! add  := atom (("+" | "-") atom)*
//! atom := INT | "-" INT | "true" | "false" | "unit" | IDENT | "(" expr ")"
//! ```
//!
//! Keywords: `letrec in if then else true false unit`. Line comments start
//! with `//`. Identifiers are ASCII `[a-zA-Z_][a-zA-Z0-9_]*`.

use std::fmt;

use serde::Serialize;

use crate::ast::{BinOp, Expr, Ident, Term};
use crate::lifting::{FunDef, Program};

/// Byte range plus the 1-based line/column of its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SourceSpan {
    pub start_offset: usize,
    pub end_offset: usize,
    pub line: u32,
    pub column: u32,
}

impl SourceSpan {
    pub fn synthetic() -> SourceSpan {
        SourceSpan {
            start_offset: 0,
            end_offset: 0,
            line: 1,
            column: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

/// Diagnostic codes form a documented closed set.
pub mod codes {
    pub const PARSE_UNEXPECTED_TOKEN: &str = "PARSE_UNEXPECTED_TOKEN";
    pub const PARSE_UNTERMINATED: &str = "PARSE_UNTERMINATED";
    pub const PARSE_INT_OVERFLOW: &str = "PARSE_INT_OVERFLOW";
    pub const SCOPE_UNBOUND_VAR: &str = "SCOPE_UNBOUND_VAR";
    pub const SCOPE_UNBOUND_FUN: &str = "SCOPE_UNBOUND_FUN";
    pub const UNIQ_PARAM: &str = "UNIQ_PARAM";
    pub const UNIQ_FUN: &str = "UNIQ_FUN";
    pub const CONV_CALL_IN_EXPR: &str = "CONV_CALL_IN_EXPR";
    pub const CONV_NESTED_NOT_LAST: &str = "CONV_NESTED_NOT_LAST";
    pub const CONV_HEAD_SHAPE: &str = "CONV_HEAD_SHAPE";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub span: SourceSpan,
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
}

impl Diagnostic {
    fn error(span: SourceSpan, code: &'static str, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            span,
            severity: Severity::Error,
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {}: {}",
            self.span.line, self.span.column, self.code, self.message
        )
    }
}

/// Spans of every term node, mirroring `Term::children` order.
#[derive(Debug, Clone)]
pub struct SpanTree {
    pub span: SourceSpan,
    pub children: Vec<SpanTree>,
}

impl SpanTree {
    fn leaf(span: SourceSpan) -> SpanTree {
        SpanTree {
            span,
            children: vec![],
        }
    }

    pub fn at_path(&self, path: &[crate::ast::ChildIdx]) -> Option<&SpanTree> {
        // Paths index children positionally, matching `Term::children`.
        let mut cur = self;
        for idx in path {
            let pos = match idx {
                crate::ast::ChildIdx::AssignRhs
                | crate::ast::ChildIdx::IfCond
                | crate::ast::ChildIdx::SeqFirst
                | crate::ast::ChildIdx::LetRecBody => 0,
                crate::ast::ChildIdx::IfThen
                | crate::ast::ChildIdx::SeqSecond
                | crate::ast::ChildIdx::LetRecCont => 1,
                crate::ast::ChildIdx::IfElse => 2,
                crate::ast::ChildIdx::CallArg(i) => *i,
            };
            cur = cur.children.get(pos)?;
        }
        Some(cur)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(Ident),
    Int(i64),
    Letrec,
    In,
    If,
    Then,
    Else,
    True,
    False,
    Unit,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Walrus, // :=
    Eq,     // =
    EqEq,   // ==
    Plus,
    Minus,
    Lt,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(x) => format!("identifier `{x}`"),
            Tok::Int(n) => format!("integer `{n}`"),
            Tok::Eof => "end of input".to_string(),
            t => format!("`{}`", t.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::Letrec => "letrec",
            Tok::In => "in",
            Tok::If => "if",
            Tok::Then => "then",
            Tok::Else => "else",
            Tok::True => "true",
            Tok::False => "false",
            Tok::Unit => "unit",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Walrus => ":=",
            Tok::Eq => "=",
            Tok::EqEq => "==",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Lt => "<",
            Tok::Ident(_) | Tok::Int(_) | Tok::Eof => "",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SpannedTok {
    pub(crate) tok: Tok,
    pub(crate) span: SourceSpan,
}

pub(crate) fn lex(src: &str) -> Result<Vec<SpannedTok>, Vec<Diagnostic>> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line: u32 = 1;
    let mut col: u32 = 1;

    let span_at = |start: usize, end: usize, line: u32, col: u32| SourceSpan {
        start_offset: start,
        end_offset: end,
        line,
        column: col,
    };

    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' => {
                i += 1;
                col += 1;
            }
            b'\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            _ => {
                let start = i;
                let (sline, scol) = (line, col);
                let tok = match c {
                    b'(' => {
                        i += 1;
                        Tok::LParen
                    }
                    b')' => {
                        i += 1;
                        Tok::RParen
                    }
                    b'{' => {
                        i += 1;
                        Tok::LBrace
                    }
                    b'}' => {
                        i += 1;
                        Tok::RBrace
                    }
                    b',' => {
                        i += 1;
                        Tok::Comma
                    }
                    b';' => {
                        i += 1;
                        Tok::Semi
                    }
                    b'+' => {
                        i += 1;
                        Tok::Plus
                    }
                    b'-' => {
                        i += 1;
                        Tok::Minus
                    }
                    b'<' => {
                        i += 1;
                        Tok::Lt
                    }
                    b':' if bytes.get(i + 1) == Some(&b'=') => {
                        i += 2;
                        Tok::Walrus
                    }
                    b'=' if bytes.get(i + 1) == Some(&b'=') => {
                        i += 2;
                        Tok::EqEq
                    }
                    b'=' => {
                        i += 1;
                        Tok::Eq
                    }
                    b'0'..=b'9' => {
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                        let text = &src[start..i];
                        match text.parse::<i64>() {
                            Ok(n) => Tok::Int(n),
                            Err(_) => {
                                return Err(vec![Diagnostic::error(
                                    span_at(start, i, sline, scol),
                                    codes::PARSE_INT_OVERFLOW,
                                    format!("integer literal `{text}` does not fit in 64 bits"),
                                )])
                            }
                        }
                    }
                    b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                        while i < bytes.len()
                            && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                        {
                            i += 1;
                        }
                        match &src[start..i] {
                            "letrec" => Tok::Letrec,
                            "in" => Tok::In,
                            "if" => Tok::If,
                            "then" => Tok::Then,
                            "else" => Tok::Else,
                            "true" => Tok::True,
                            "false" => Tok::False,
                            "unit" => Tok::Unit,
                            text => Tok::Ident(text.to_string()),
                        }
                    }
                    _ => {
                        return Err(vec![Diagnostic::error(
                            span_at(i, i + 1, sline, scol),
                            codes::PARSE_UNEXPECTED_TOKEN,
                            format!("unexpected character `{}`", src[i..].chars().next().unwrap()),
                        )])
                    }
                };
                col += (i - start) as u32;
                toks.push(SpannedTok {
                    tok,
                    span: span_at(start, i, sline, scol),
                });
            }
        }
    }
    toks.push(SpannedTok {
        tok: Tok::Eof,
        span: span_at(bytes.len(), bytes.len(), line, col),
    });
    Ok(toks)
}

pub(crate) struct TokStream {
    toks: Vec<SpannedTok>,
    pos: usize,
}

impl TokStream {
    pub(crate) fn new(toks: Vec<SpannedTok>) -> TokStream {
        TokStream { toks, pos: 0 }
    }

    pub(crate) fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub(crate) fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    pub(crate) fn span(&self) -> SourceSpan {
        self.toks[self.pos].span
    }

    pub(crate) fn prev_span(&self) -> SourceSpan {
        self.toks[self.pos.saturating_sub(1)].span
    }

    pub(crate) fn bump(&mut self) -> SpannedTok {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub(crate) fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    pub(crate) fn unexpected(&self, wanted: &str) -> Vec<Diagnostic> {
        let code = if *self.peek() == Tok::Eof && wanted.contains(['}', ')']) {
            codes::PARSE_UNTERMINATED
        } else {
            codes::PARSE_UNEXPECTED_TOKEN
        };
        vec![Diagnostic::error(
            self.span(),
            code,
            format!("expected {wanted}, found {}", self.peek().describe()),
        )]
    }

    pub(crate) fn expect(&mut self, tok: Tok, wanted: &str) -> Result<SpannedTok, Vec<Diagnostic>> {
        if self.peek() == &tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    pub(crate) fn expect_ident(&mut self, wanted: &str) -> Result<(Ident, SourceSpan), Vec<Diagnostic>> {
        match self.peek().clone() {
            Tok::Ident(x) => {
                let sp = self.span();
                self.bump();
                Ok((x, sp))
            }
            _ => Err(self.unexpected(wanted)),
        }
    }
}

fn join(a: SourceSpan, b: SourceSpan) -> SourceSpan {
    SourceSpan {
        start_offset: a.start_offset,
        end_offset: b.end_offset,
        line: a.line,
        column: a.column,
    }
}

struct Parser {
    ts: TokStream,
}

type PResult<T> = Result<T, Vec<Diagnostic>>;

impl Parser {
    fn p_term(&mut self) -> PResult<(Term, SpanTree)> {
        let (first, sp1) = self.p_stmt()?;
        if self.ts.eat(&Tok::Semi) {
            let (second, sp2) = self.p_term()?;
            let span = join(sp1.span, sp2.span);
            Ok((
                Term::seq(first, second),
                SpanTree {
                    span,
                    children: vec![sp1, sp2],
                },
            ))
        } else {
            Ok((first, sp1))
        }
    }

    fn p_stmt(&mut self) -> PResult<(Term, SpanTree)> {
        match self.ts.peek().clone() {
            Tok::Letrec => {
                let start = self.ts.span();
                self.ts.bump();
                let (name, _) = self.ts.expect_ident("a function name after `letrec`")?;
                self.ts.expect(Tok::LParen, "`(`")?;
                let mut params = Vec::new();
                if self.ts.peek() != &Tok::RParen {
                    loop {
                        let (p, _) = self.ts.expect_ident("a parameter name")?;
                        params.push(p);
                        if !self.ts.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                self.ts.expect(Tok::RParen, "`)`")?;
                self.ts.expect(Tok::Eq, "`=`")?;
                self.ts.expect(Tok::LBrace, "`{`")?;
                let (body, body_sp) = self.p_term()?;
                self.ts.expect(Tok::RBrace, "`}` closing the function body")?;
                self.ts.expect(Tok::In, "`in`")?;
                let (cont, cont_sp) = self.p_term()?;
                let span = join(start, cont_sp.span);
                Ok((
                    Term::letrec(name, params, body, cont),
                    SpanTree {
                        span,
                        children: vec![body_sp, cont_sp],
                    },
                ))
            }
            Tok::If => {
                let start = self.ts.span();
                self.ts.bump();
                let (cond, cond_sp) = self.p_term()?;
                self.ts.expect(Tok::Then, "`then`")?;
                self.ts.expect(Tok::LBrace, "`{`")?;
                let (then, then_sp) = self.p_term()?;
                self.ts.expect(Tok::RBrace, "`}` closing the then branch")?;
                self.ts.expect(Tok::Else, "`else`")?;
                self.ts.expect(Tok::LBrace, "`{`")?;
                let (els, els_sp) = self.p_term()?;
                let end = self.ts.expect(Tok::RBrace, "`}` closing the else branch")?;
                let span = join(start, end.span);
                Ok((
                    Term::if_(cond, then, els),
                    SpanTree {
                        span,
                        children: vec![cond_sp, then_sp, els_sp],
                    },
                ))
            }
            Tok::Ident(x) if self.ts.peek2() == &Tok::Walrus => {
                let start = self.ts.span();
                self.ts.bump();
                self.ts.bump();
                let (rhs, rhs_sp) = self.p_stmt()?;
                let span = join(start, rhs_sp.span);
                Ok((
                    Term::assign(x, rhs),
                    SpanTree {
                        span,
                        children: vec![rhs_sp],
                    },
                ))
            }
            Tok::Ident(f) if self.ts.peek2() == &Tok::LParen => {
                let start = self.ts.span();
                self.ts.bump();
                self.ts.bump();
                let mut args = Vec::new();
                let mut arg_sps = Vec::new();
                if self.ts.peek() != &Tok::RParen {
                    loop {
                        let (a, sp) = self.p_term()?;
                        args.push(a);
                        arg_sps.push(sp);
                        if !self.ts.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                let end = self.ts.expect(Tok::RParen, "`)` closing the argument list")?;
                let span = join(start, end.span);
                Ok((
                    Term::call(f, args),
                    SpanTree {
                        span,
                        children: arg_sps,
                    },
                ))
            }
            _ => {
                let (e, span) = self.p_expr()?;
                Ok((Term::Expr(e), SpanTree::leaf(span)))
            }
        }
    }

    fn p_expr(&mut self) -> PResult<(Expr, SourceSpan)> {
        let (lhs, lsp) = self.p_add()?;
        let op = match self.ts.peek() {
            Tok::Lt => Some(BinOp::Lt),
            Tok::EqEq => Some(BinOp::Eq),
            _ => None,
        };
        match op {
            Some(op) => {
                self.ts.bump();
                let (rhs, rsp) = self.p_add()?;
                Ok((Expr::binop(op, lhs, rhs), join(lsp, rsp)))
            }
            None => Ok((lhs, lsp)),
        }
    }

    fn p_add(&mut self) -> PResult<(Expr, SourceSpan)> {
        let (mut lhs, mut lsp) = self.p_atom()?;
        loop {
            let op = match self.ts.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.ts.bump();
            let (rhs, rsp) = self.p_atom()?;
            lhs = Expr::binop(op, lhs, rhs);
            lsp = join(lsp, rsp);
        }
        Ok((lhs, lsp))
    }

    fn p_atom(&mut self) -> PResult<(Expr, SourceSpan)> {
        let sp = self.ts.span();
        match self.ts.peek().clone() {
            Tok::Int(n) => {
                self.ts.bump();
                Ok((Expr::int(n), sp))
            }
            Tok::Minus => {
                self.ts.bump();
                match self.ts.peek().clone() {
                    Tok::Int(n) => {
                        let end = self.ts.span();
                        self.ts.bump();
                        Ok((Expr::int(-n), join(sp, end)))
                    }
                    _ => Err(self.ts.unexpected("an integer literal after `-`")),
                }
            }
            Tok::True => {
                self.ts.bump();
                Ok((Expr::Lit(crate::ast::Value::Bool(true)), sp))
            }
            Tok::False => {
                self.ts.bump();
                Ok((Expr::Lit(crate::ast::Value::Bool(false)), sp))
            }
            Tok::Unit => {
                self.ts.bump();
                Ok((Expr::Lit(crate::ast::Value::Unit), sp))
            }
            Tok::Ident(x) => {
                self.ts.bump();
                if self.ts.peek() == &Tok::LParen {
                    return Err(vec![Diagnostic::error(
                        self.ts.span(),
                        codes::PARSE_UNEXPECTED_TOKEN,
                        format!("function calls such as `{x}(...)` cannot appear inside expressions"),
                    )]);
                }
                Ok((Expr::var(x), sp))
            }
            Tok::LParen => {
                self.ts.bump();
                let (e, _) = self.p_expr()?;
                let end = self.ts.expect(Tok::RParen, "`)`")?;
                Ok((e, join(sp, end.span)))
            }
            _ => Err(self.ts.unexpected("a term")),
        }
    }
}

/// Parses a term, keeping the span of every node.
pub fn parse_term_spanned(src: &str) -> Result<(Term, SpanTree), Vec<Diagnostic>> {
    let toks = lex(src)?;
    let mut p = Parser {
        ts: TokStream::new(toks),
    };
    let (t, sp) = p.p_term()?;
    if p.ts.peek() != &Tok::Eof {
        return Err(p.ts.unexpected("end of input"));
    }
    Ok((t, sp))
}

/// Parses a term of the mini language.
pub fn parse_term(src: &str) -> Result<Term, Vec<Diagnostic>> {
    parse_term_spanned(src).map(|(t, _)| t)
}

/// Parses a flat program: `fun` definitions followed by a main term.
/// `fun` is contextual, not a reserved word of the term language.
pub fn parse_program(src: &str) -> Result<Program, Vec<Diagnostic>> {
    let toks = lex(src)?;
    let mut p = Parser {
        ts: TokStream::new(toks),
    };
    let mut functions = Vec::new();
    while matches!(p.ts.peek(), Tok::Ident(k) if k == "fun")
        && matches!(p.ts.peek2(), Tok::Ident(_))
    {
        p.ts.bump();
        let (name, _) = p.ts.expect_ident("a function name after `fun`")?;
        p.ts.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if p.ts.peek() != &Tok::RParen {
            loop {
                let (x, _) = p.ts.expect_ident("a parameter name")?;
                params.push(x);
                if !p.ts.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        p.ts.expect(Tok::RParen, "`)`")?;
        p.ts.expect(Tok::LBrace, "`{`")?;
        let (body, _) = p.p_term()?;
        p.ts.expect(Tok::RBrace, "`}` closing the function body")?;
        functions.push(FunDef { name, params, body });
    }
    let (main, _) = p.p_term()?;
    if p.ts.peek() != &Tok::Eof {
        return Err(p.ts.unexpected("end of input"));
    }
    Ok(Program { functions, main })
}

/// How strictly `validate` treats duplicate parameter names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamRule {
    GloballyUnique,
    ShadowingAllowed,
}

/// Checks that a term is closed (no free variables, no unbound function
/// names) and that function parameters are globally unique. Function names
/// must be unique as well, so that lifting targets and floating are
/// unambiguous. Returns an empty list on success.
pub fn validate(t: &Term) -> Vec<Diagnostic> {
    validate_impl(t, None, ParamRule::GloballyUnique)
}

/// Like [`validate`], but permits the parameter shadowing that parameter
/// lifting deliberately introduces.
pub fn validate_lifted(t: &Term) -> Vec<Diagnostic> {
    validate_impl(t, None, ParamRule::ShadowingAllowed)
}

/// [`validate`] with source spans recovered from the parse.
pub fn validate_spanned(t: &Term, spans: &SpanTree) -> Vec<Diagnostic> {
    validate_impl(t, Some(spans), ParamRule::GloballyUnique)
}

fn validate_impl(t: &Term, spans: Option<&SpanTree>, rule: ParamRule) -> Vec<Diagnostic> {
    struct Ctx<'a> {
        diags: Vec<Diagnostic>,
        vars: Vec<Ident>,
        funs: Vec<Ident>,
        all_params: Vec<Ident>,
        all_funs: Vec<Ident>,
        rule: ParamRule,
        root_spans: Option<&'a SpanTree>,
    }

    impl Ctx<'_> {
        fn span_of(&self, path: &[crate::ast::ChildIdx]) -> SourceSpan {
            self.root_spans
                .and_then(|s| s.at_path(path))
                .map(|s| s.span)
                .unwrap_or_else(SourceSpan::synthetic)
        }

        fn go(&mut self, t: &Term, path: &mut Vec<crate::ast::ChildIdx>) {
            match t {
                Term::Expr(e) => {
                    for x in e.free_vars() {
                        if !self.vars.contains(&x) {
                            let span = self.span_of(path);
                            self.diags.push(Diagnostic::error(
                                span,
                                codes::SCOPE_UNBOUND_VAR,
                                format!("unbound variable `{x}`"),
                            ));
                        }
                    }
                }
                Term::Assign(x, rhs) => {
                    if !self.vars.contains(x) {
                        let span = self.span_of(path);
                        self.diags.push(Diagnostic::error(
                            span,
                            codes::SCOPE_UNBOUND_VAR,
                            format!("assignment to unbound variable `{x}`"),
                        ));
                    }
                    path.push(crate::ast::ChildIdx::AssignRhs);
                    self.go(rhs, path);
                    path.pop();
                }
                Term::If(c, a, b) => {
                    for (idx, child) in [
                        (crate::ast::ChildIdx::IfCond, c),
                        (crate::ast::ChildIdx::IfThen, a),
                        (crate::ast::ChildIdx::IfElse, b),
                    ] {
                        path.push(idx);
                        self.go(child, path);
                        path.pop();
                    }
                }
                Term::Seq(a, b) => {
                    path.push(crate::ast::ChildIdx::SeqFirst);
                    self.go(a, path);
                    path.pop();
                    path.push(crate::ast::ChildIdx::SeqSecond);
                    self.go(b, path);
                    path.pop();
                }
                Term::LetRec {
                    name,
                    params,
                    body,
                    cont,
                } => {
                    let span = self.span_of(path);
                    if self.all_funs.contains(name) {
                        self.diags.push(Diagnostic::error(
                            span,
                            codes::UNIQ_FUN,
                            format!("function name `{name}` is defined more than once"),
                        ));
                    }
                    self.all_funs.push(name.clone());
                    for p in params {
                        if self.rule == ParamRule::GloballyUnique && self.all_params.contains(p) {
                            self.diags.push(Diagnostic::error(
                                span,
                                codes::UNIQ_PARAM,
                                format!("parameter `{p}` is not globally unique"),
                            ));
                        }
                        self.all_params.push(p.clone());
                    }

                    self.funs.push(name.clone());
                    let saved_vars = self.vars.len();
                    self.vars.extend(params.iter().cloned());
                    path.push(crate::ast::ChildIdx::LetRecBody);
                    self.go(body, path);
                    path.pop();
                    self.vars.truncate(saved_vars);

                    path.push(crate::ast::ChildIdx::LetRecCont);
                    self.go(cont, path);
                    path.pop();
                    self.funs.pop();
                }
                Term::Call(f, args) => {
                    if !self.funs.contains(f) {
                        let span = self.span_of(path);
                        self.diags.push(Diagnostic::error(
                            span,
                            codes::SCOPE_UNBOUND_FUN,
                            format!("call to undefined function `{f}`"),
                        ));
                    }
                    for (i, a) in args.iter().enumerate() {
                        path.push(crate::ast::ChildIdx::CallArg(i));
                        self.go(a, path);
                        path.pop();
                    }
                }
            }
        }
    }

    let mut ctx = Ctx {
        diags: Vec::new(),
        vars: Vec::new(),
        funs: Vec::new(),
        all_params: Vec::new(),
        all_funs: Vec::new(),
        rule,
        root_spans: spans,
    };
    ctx.go(t, &mut Vec::new());
    ctx.diags
}

/// Validates a flat program: unique function names, defined call targets,
/// and every body closed under its own parameters.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut names: Vec<&Ident> = Vec::new();
    for f in &p.functions {
        if names.contains(&&f.name) {
            diags.push(Diagnostic::error(
                SourceSpan::synthetic(),
                codes::UNIQ_FUN,
                format!("function name `{}` is defined more than once", f.name),
            ));
        }
        names.push(&f.name);
    }
    let defined: Vec<&Ident> = p.functions.iter().map(|f| &f.name).collect();
    let no_params: Vec<Ident> = Vec::new();
    for (name, params, body) in p
        .functions
        .iter()
        .map(|f| (f.name.as_str(), &f.params, &f.body))
        .chain(std::iter::once(("main", &no_params, &p.main)))
    {
        for x in body.free_vars() {
            if !params.contains(&x) {
                diags.push(Diagnostic::error(
                    SourceSpan::synthetic(),
                    codes::SCOPE_UNBOUND_VAR,
                    format!("unbound variable `{x}` in `{name}`"),
                ));
            }
        }
        for f in body.called_functions() {
            if !defined.contains(&&f) {
                diags.push(Diagnostic::error(
                    SourceSpan::synthetic(),
                    codes::SCOPE_UNBOUND_FUN,
                    format!("call to undefined function `{f}` in `{name}`"),
                ));
            }
        }
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_src() -> &'static str {
        "letrec g(x) = { letrec h() = { x } in h() } in g(1)"
    }

    #[test]
    fn parses_paper_example() {
        let t = parse_term(paper_src()).unwrap();
        let expected = Term::letrec(
            "g",
            vec!["x".into()],
            Term::letrec("h", vec![], Term::var("x"), Term::call("h", vec![])),
            Term::call("g", vec![Term::int(1)]),
        );
        assert_eq!(t, expected);
    }

    #[test]
    fn parses_conditional() {
        let t = parse_term("if true then { 1 } else { 2 }").unwrap();
        assert_eq!(t, Term::if_(Term::bool(true), Term::int(1), Term::int(2)));
    }

    #[test]
    fn assignment_binds_tighter_than_semicolon() {
        let t = parse_term("x := 2; x").unwrap();
        assert_eq!(
            t,
            Term::seq(Term::assign("x", Term::int(2)), Term::var("x"))
        );
    }

    #[test]
    fn semicolon_associates_right() {
        let t = parse_term("1; 2; 3").unwrap();
        assert_eq!(
            t,
            Term::seq(Term::int(1), Term::seq(Term::int(2), Term::int(3)))
        );
    }

    #[test]
    fn incomplete_assignment_reports_unexpected_token() {
        let diags = parse_term("x := ").unwrap_err();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, codes::PARSE_UNEXPECTED_TOKEN);
        assert_eq!(diags[0].span.start_offset, 5);
    }

    #[test]
    fn unterminated_brace_reports_unterminated() {
        let diags = parse_term("letrec f() = { 1 in f()").unwrap_err();
        assert_eq!(diags[0].code, codes::PARSE_UNTERMINATED);
    }

    #[test]
    fn diagnostics_render_line_and_column() {
        let diags = parse_term("1 +\n  @").unwrap_err();
        assert_eq!(diags[0].to_string(), "2:3: PARSE_UNEXPECTED_TOKEN: unexpected character `@`");
    }

    #[test]
    fn round_trips_paper_example() {
        let t = parse_term(paper_src()).unwrap();
        assert_eq!(parse_term(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn validates_paper_example_clean() {
        let t = parse_term(paper_src()).unwrap();
        assert!(validate(&t).is_empty());
    }

    #[test]
    fn open_term_reports_unbound_var() {
        let diags = validate(&Term::var("x"));
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, codes::SCOPE_UNBOUND_VAR);
    }

    #[test]
    fn duplicate_parameters_reported() {
        let t =
            parse_term("letrec f(x) = { x } in letrec g(x) = { x } in f(g(1))").unwrap();
        let diags = validate(&t);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, codes::UNIQ_PARAM);
        assert!(diags[0].message.contains('x'));
    }

    #[test]
    fn duplicate_function_names_reported() {
        let t = parse_term("letrec f() = { 1 } in letrec f() = { 2 } in f()").unwrap();
        let diags = validate(&t);
        assert!(diags.iter().any(|d| d.code == codes::UNIQ_FUN));
    }

    #[test]
    fn unbound_function_reported() {
        let diags = validate(&parse_term("f(1)").unwrap());
        assert_eq!(diags[0].code, codes::SCOPE_UNBOUND_FUN);
    }

    #[test]
    fn lifted_validator_permits_shadowing() {
        let t = parse_term("letrec g(x) = { letrec h(x) = { x } in h(x) } in g(1)").unwrap();
        assert_eq!(validate(&t).len(), 1);
        assert!(validate_lifted(&t).is_empty());
    }

    #[test]
    fn spanned_validation_points_at_the_offender() {
        let src = "letrec f() = { y } in f()";
        let (t, spans) = parse_term_spanned(src).unwrap();
        let diags = validate_spanned(&t, &spans);
        assert_eq!(diags.len(), 1);
        assert_eq!(&src[diags[0].span.start_offset..diags[0].span.end_offset], "y");
    }

    #[test]
    fn parses_program_with_fun_definitions() {
        let p = parse_program("fun g(x) { h(x) }\nfun h(y) { y }\ng(1)").unwrap();
        assert_eq!(p.functions.len(), 2);
        assert_eq!(p.functions[0].name, "g");
        assert_eq!(p.main, Term::call("g", vec![Term::int(1)]));
        assert!(validate_program(&p).is_empty());
    }

    #[test]
    fn negative_literals_parse_in_argument_position() {
        let t = parse_term("letrec f(x) = { x - -3 } in f(-5)").unwrap();
        assert!(validate(&t).is_empty());
        assert_eq!(parse_term(&t.to_string()).unwrap(), t);
    }
}
