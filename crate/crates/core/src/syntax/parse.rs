use std::sync::Arc;

use super::lexer::{lex, Tok, Token};
use super::{SourceProgram, SyntaxError, ThreadDecl, VarDecl};
use crate::combinators;
use crate::term::{level_check, Cont, Expr, Name, PrimOp, Term};
use crate::value::{LocId, ThreadId, Value};

/// Parses a complete program. Every thread is level-checked.
pub fn parse(src: &str) -> Result<SourceProgram, SyntaxError> {
    let mut p = Parser::new(src)?;
    let prog = p.program()?;
    Ok(prog)
}

/// Parses raw bytes, rejecting invalid UTF-8 with a position.
pub fn parse_bytes(bytes: &[u8]) -> Result<SourceProgram, SyntaxError> {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse(s),
        Err(e) => {
            let valid = &bytes[..e.valid_up_to()];
            let text = String::from_utf8_lossy(valid);
            let line = text.matches('\n').count() + 1;
            let col = text.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            Err(SyntaxError::Invalid {
                line,
                col,
                message: "invalid UTF-8".into(),
            })
        }
    }
}

/// Parses a single closed term and level-checks it.
pub fn parse_term(src: &str) -> Result<Term, SyntaxError> {
    let mut p = Parser::new(src)?;
    let (line, col) = p.pos();
    let t = p.term()?;
    p.expect_eof()?;
    level_check(&t).map_err(|source| SyntaxError::Level {
        line,
        col,
        name: "<term>".into(),
        source,
    })?;
    Ok(t)
}

/// Parses a single closed expression.
pub fn parse_expr(src: &str) -> Result<Expr, SyntaxError> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

/// Parses the canonical text form of a value.
pub fn parse_value(src: &str) -> Result<Value, SyntaxError> {
    let mut p = Parser::new(src)?;
    let (line, col) = p.pos();
    let e = p.expr()?;
    p.expect_eof()?;
    e.eval().map_err(|err| SyntaxError::Invalid {
        line,
        col,
        message: err.to_string(),
    })
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    scope: Vec<Name>,
    depth: usize,
}

/// Deepest bracket nesting accepted; deeper input is rejected rather than
/// risking the stack. Long sequences should use `seq`.
const MAX_DEPTH: usize = 200;

const TERM_KEYWORDS: &[&str] = &[
    "return",
    "bind",
    "throw",
    "catch",
    "retry",
    "orElse",
    "newOTVar",
    "readOTVar",
    "writeOTVar",
    "fork",
    "atomic",
    "isolated",
    "getChar",
    "putChar",
    "if",
    "check",
    "modifyOTVar",
    "assertOTVar",
    "up",
    "down",
    "downAny",
    "seq",
];

impl Parser {
    fn new(src: &str) -> Result<Self, SyntaxError> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
            scope: Vec::new(),
            depth: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, expected: &[&str]) -> Result<T, SyntaxError> {
        let (line, col) = self.pos();
        Err(SyntaxError::Parse {
            line,
            col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        })
    }

    fn invalid<T>(&self, at: (usize, usize), message: String) -> Result<T, SyntaxError> {
        Err(SyntaxError::Invalid {
            line: at.0,
            col: at.1,
            message,
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), SyntaxError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.err(&[what])
        }
    }

    fn expect_eof(&mut self) -> Result<(), SyntaxError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            self.err(&["end of input"])
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Tok::Sym(s) if is_ident(&s) => {
                self.bump();
                Ok(s)
            }
            _ => self.err(&["identifier"]),
        }
    }

    fn program(&mut self) -> Result<SourceProgram, SyntaxError> {
        let mut prog = SourceProgram::default();
        loop {
            match self.peek() {
                Tok::Eof => break,
                Tok::LParen => {}
                _ => return self.err(&["`(`", "end of input"]),
            }
            let start = self.pos();
            self.bump();
            let kw = match self.peek().clone() {
                Tok::Sym(s) if s == "var" || s == "thread" => s,
                _ => return self.err(&["`var`", "`thread`"]),
            };
            self.bump();
            let name_at = self.pos();
            let name = self.ident()?;
            if kw == "var" {
                if prog.vars.iter().any(|v| v.name == name) {
                    return self.invalid(name_at, format!("duplicate var `{name}`"));
                }
                let at = self.pos();
                let init = self.expr()?;
                let init = match init.eval() {
                    Ok(v) => v,
                    Err(e) => return self.invalid(at, e.to_string()),
                };
                self.expect(Tok::RParen, "`)`")?;
                self.scope.push(Name::from(name.as_str()));
                prog.vars.push(VarDecl { name, init });
            } else {
                if prog.threads.iter().any(|t| t.name == name) {
                    return self.invalid(name_at, format!("duplicate thread `{name}`"));
                }
                let term = self.term()?;
                self.expect(Tok::RParen, "`)`")?;
                level_check(&term).map_err(|source| SyntaxError::Level {
                    line: start.0,
                    col: start.1,
                    name: name.clone(),
                    source,
                })?;
                prog.threads.push(ThreadDecl { name, term });
            }
        }
        Ok(prog)
    }

    fn binder(&mut self) -> Result<Name, SyntaxError> {
        Ok(Name::from(self.ident()?.as_str()))
    }

    fn scoped<T>(
        &mut self,
        x: &Name,
        f: impl FnOnce(&mut Self) -> Result<T, SyntaxError>,
    ) -> Result<T, SyntaxError> {
        self.scope.push(x.clone());
        let r = f(self);
        self.scope.pop();
        r
    }

    fn term(&mut self) -> Result<Term, SyntaxError> {
        self.nested(Self::term_at)
    }

    fn nested<T>(&mut self, f: fn(&mut Self) -> Result<T, SyntaxError>) -> Result<T, SyntaxError> {
        if self.depth >= MAX_DEPTH {
            let (line, col) = self.pos();
            return Err(SyntaxError::Invalid {
                line,
                col,
                message: format!("nesting deeper than {MAX_DEPTH}"),
            });
        }
        self.depth += 1;
        let r = f(self);
        self.depth -= 1;
        r
    }

    fn term_at(&mut self) -> Result<Term, SyntaxError> {
        if *self.peek() != Tok::LParen {
            return self.err(&["`(`"]);
        }
        self.bump();
        let kw = match self.peek().clone() {
            Tok::Sym(s) if TERM_KEYWORDS.contains(&s.as_str()) => s,
            _ => return self.err(&["term keyword"]),
        };
        self.bump();
        let sub = |p: &mut Self| p.term().map(Arc::new);
        let t = match kw.as_str() {
            "return" => Term::Return(self.expr()?),
            "throw" => Term::Throw(self.expr()?),
            "retry" => Term::Retry,
            "getChar" => Term::GetChar,
            "putChar" => Term::PutChar(self.expr()?),
            "newOTVar" => Term::NewVar(self.expr()?),
            "readOTVar" => Term::Read(self.expr()?),
            "writeOTVar" => {
                let r = self.expr()?;
                Term::Write(r, self.expr()?)
            }
            "bind" | "catch" => {
                let m = sub(self)?;
                let x = self.binder()?;
                let n = self.scoped(&x, |p| p.term())?;
                let k = Cont::Lambda(x, Arc::new(n));
                if kw == "bind" {
                    Term::Bind(m, k)
                } else {
                    Term::Catch(m, k)
                }
            }
            "orElse" => {
                let a = sub(self)?;
                Term::OrElse(a, sub(self)?)
            }
            "fork" => Term::Fork(sub(self)?),
            "atomic" => Term::Atomic(sub(self)?),
            "isolated" => Term::Isolated(sub(self)?),
            "if" => {
                let c = self.expr()?;
                let a = sub(self)?;
                Term::If(c, a, sub(self)?)
            }
            "check" => combinators::check_expr(self.expr()?),
            "modifyOTVar" | "assertOTVar" => {
                let r = self.expr()?;
                let x = self.binder()?;
                let e = self.scoped(&x, |p| p.expr())?;
                if kw == "modifyOTVar" {
                    combinators::modify_with(r, &x, e)
                } else {
                    combinators::assert_with(r, &x, e)
                }
            }
            "up" => combinators::sem_up(self.expr()?),
            "down" => combinators::sem_down(self.expr()?),
            "downAny" => {
                let mut sems = Vec::new();
                while *self.peek() != Tok::RParen {
                    sems.push(self.expr()?);
                }
                combinators::down_any(&sems)
            }
            "seq" => {
                let mut ts = vec![self.term()?];
                while *self.peek() != Tok::RParen {
                    ts.push(self.term()?);
                }
                Term::seq(ts)
            }
            _ => unreachable!("keyword list and match arms agree"),
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(t)
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        self.nested(Self::expr_at)
    }

    fn expr_at(&mut self) -> Result<Expr, SyntaxError> {
        let at = self.pos();
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Val(Value::Int(i)))
            }
            Tok::Char(c) => {
                self.bump();
                Ok(Expr::Val(Value::Char(c)))
            }
            Tok::Bool(b) => {
                self.bump();
                Ok(Expr::Val(Value::Bool(b)))
            }
            Tok::Sym(s) if is_ident(&s) => {
                self.bump();
                if !self.scope.iter().any(|x| **x == *s) {
                    return self.invalid(at, format!("unbound variable `{s}`"));
                }
                Ok(Expr::Var(Name::from(s.as_str())))
            }
            Tok::LParen => {
                if *self.peek2() == Tok::RParen {
                    self.bump();
                    self.bump();
                    return Ok(Expr::Val(Value::Unit));
                }
                self.bump();
                let head = match self.peek().clone() {
                    Tok::Sym(s) => s,
                    _ => return self.err(&["operator", "`loc`", "`tid`", "`exc`", "`)`"]),
                };
                self.bump();
                let e = match head.as_str() {
                    "loc" | "tid" => {
                        let n = match self.peek().clone() {
                            Tok::Int(n) if n >= 0 => n as u64,
                            _ => return self.err(&["non-negative integer"]),
                        };
                        self.bump();
                        Expr::Val(if head == "loc" {
                            Value::Loc(LocId(n))
                        } else {
                            Value::Thread(ThreadId(n))
                        })
                    }
                    "exc" => {
                        let name = self.ident()?;
                        Expr::Val(Value::exc(&name))
                    }
                    op => {
                        let Some(op) = PrimOp::from_symbol(op) else {
                            return self.invalid(at, format!("unknown operator `{op}`"));
                        };
                        let mut args = Vec::with_capacity(op.arity());
                        for _ in 0..op.arity() {
                            args.push(self.expr()?);
                        }
                        Expr::Prim(op, args)
                    }
                };
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            _ => self.err(&["expression"]),
        }
    }
}

pub(crate) fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'')
        && PrimOp::from_symbol(s).is_none()
}
