use std::fmt::Write;

use super::SourceProgram;
use crate::term::{Cont, Expr, Term};

/// Canonical text of a program; `parse(&print(p)) == p` for programs without host functions.
pub fn print(p: &SourceProgram) -> String {
    let mut out = String::new();
    for v in &p.vars {
        let _ = writeln!(out, "(var {} {})", v.name, v.init);
    }
    for t in &p.threads {
        let _ = writeln!(out, "(thread {} {})", t.name, print_term(&t.term));
    }
    out
}

pub fn print_term(t: &Term) -> String {
    let mut out = String::new();
    term(&mut out, t);
    out
}

pub fn print_expr(e: &Expr) -> String {
    let mut out = String::new();
    expr(&mut out, e);
    out
}

fn expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Val(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Var(x) => out.push_str(x),
        Expr::Prim(op, args) => {
            out.push('(');
            out.push_str(op.symbol());
            for a in args {
                out.push(' ');
                expr(out, a);
            }
            out.push(')');
        }
    }
}

fn cont(out: &mut String, k: &Cont) {
    match k {
        Cont::Lambda(x, body) => {
            out.push_str(x);
            out.push(' ');
            term(out, body);
        }
        Cont::Host(f) => {
            let _ = write!(out, "#<host {f:?}>");
        }
    }
}

fn term(out: &mut String, t: &Term) {
    let head = |out: &mut String, kw: &str| {
        out.push('(');
        out.push_str(kw);
    };
    match t {
        Term::Return(e) | Term::Throw(e) | Term::NewVar(e) | Term::Read(e) | Term::PutChar(e) => {
            head(
                out,
                match t {
                    Term::Return(_) => "return",
                    Term::Throw(_) => "throw",
                    Term::NewVar(_) => "newOTVar",
                    Term::Read(_) => "readOTVar",
                    _ => "putChar",
                },
            );
            out.push(' ');
            expr(out, e);
        }
        Term::Write(r, e) => {
            head(out, "writeOTVar");
            out.push(' ');
            expr(out, r);
            out.push(' ');
            expr(out, e);
        }
        Term::Bind(m, Cont::Lambda(x, _)) if &**x == "_" => {
            head(out, "seq");
            let mut rest = t;
            while let Term::Bind(m, Cont::Lambda(x, n)) = rest {
                if &**x != "_" {
                    break;
                }
                out.push(' ');
                term(out, m);
                rest = n;
            }
            out.push(' ');
            term(out, rest);
        }
        Term::Bind(m, k) | Term::Catch(m, k) => {
            head(
                out,
                if matches!(t, Term::Bind(..)) {
                    "bind"
                } else {
                    "catch"
                },
            );
            out.push(' ');
            term(out, m);
            out.push(' ');
            cont(out, k);
        }
        Term::Retry => head(out, "retry"),
        Term::GetChar => head(out, "getChar"),
        Term::OrElse(a, b) => {
            head(out, "orElse");
            out.push(' ');
            term(out, a);
            out.push(' ');
            term(out, b);
        }
        Term::Fork(m) | Term::Atomic(m) | Term::Isolated(m) => {
            head(
                out,
                match t {
                    Term::Fork(_) => "fork",
                    Term::Atomic(_) => "atomic",
                    _ => "isolated",
                },
            );
            out.push(' ');
            term(out, m);
        }
        Term::If(c, a, b) => {
            head(out, "if");
            out.push(' ');
            expr(out, c);
            out.push(' ');
            term(out, a);
            out.push(' ');
            term(out, b);
        }
        Term::Pure(th) => {
            let _ = write!(out, "(#<thunk {th:?}>");
        }
    }
    out.push(')');
}
