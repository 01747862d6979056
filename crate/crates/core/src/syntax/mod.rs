//! Textual surface syntax (`.otm` files).
//!
//! ```text
//! ; comment to end of line
//! (var c 0)                                  ; shared location with initial value
//! (thread main (atomic (isolated (up c)))) ; named IO-level thread
//! ```
//!
//! Term forms: `return`, `bind M x N`, `throw`, `catch M x N`, `retry`,
//! `orElse`, `newOTVar`, `readOTVar`, `writeOTVar`, `fork`, `atomic`,
//! `isolated`, `getChar`, `putChar`, `if`. Sugar forms desugar at parse time:
//! `check`, `modifyOTVar r x E`, `assertOTVar r x E`, `up`, `down`,
//! `downAny`, `seq`.

mod lexer;
mod parse;
mod print;

use thiserror::Error;

use crate::term::{LevelError, Term};
use crate::value::Value;

pub use parse::{parse, parse_bytes, parse_expr, parse_term, parse_value};
pub use print::{print, print_expr, print_term};

/// A shared location declared at program level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub init: Value,
}

/// A named top-level thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreadDecl {
    pub name: String,
    pub term: Term,
}

/// A parsed `.otm` program.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SourceProgram {
    pub vars: Vec<VarDecl>,
    pub threads: Vec<ThreadDecl>,
}

impl SourceProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(mut self, name: &str, init: impl Into<Value>) -> Self {
        self.vars.push(VarDecl {
            name: name.to_string(),
            init: init.into(),
        });
        self
    }

    pub fn thread(mut self, name: &str, term: Term) -> Self {
        self.threads.push(ThreadDecl {
            name: name.to_string(),
            term,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("{line}:{col}: expected {}, found {found}", expected.join(" or "))]
    Parse {
        line: usize,
        col: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("{line}:{col}: {message}")]
    Invalid {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}:{col}: in `{name}`: {source}")]
    Level {
        line: usize,
        col: usize,
        name: String,
        source: LevelError,
    },
}

impl SyntaxError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            SyntaxError::Parse { line, col, .. }
            | SyntaxError::Invalid { line, col, .. }
            | SyntaxError::Level { line, col, .. } => (*line, *col),
        }
    }

    pub fn is_level_error(&self) -> bool {
        matches!(self, SyntaxError::Level { .. })
    }
}

/// Escapes a character for use inside a `'...'` literal.
pub fn escape_char(c: char) -> String {
    match c {
        '\\' => "\\\\".into(),
        '\'' => "\\'".into(),
        '\n' => "\\n".into(),
        '\t' => "\\t".into(),
        '\r' => "\\r".into(),
        '\0' => "\\0".into(),
        c if c.is_control() || (c.is_whitespace() && c != ' ') => {
            format!("\\u{{{:x}}}", c as u32)
        }
        c => c.to_string(),
    }
}
