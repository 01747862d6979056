//! Identifiers and runtime values.

use std::fmt;
use std::sync::Arc;

use crate::term::Term;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Name of a transactional location (an OTVar).
    LocId,
    "r"
);
id_type!(
    /// Thread identifier.
    ThreadId,
    "t"
);
id_type!(
    /// Transaction name. `TxId(0)` is reserved for the initializing transaction.
    TxId,
    "k"
);

impl TxId {
    /// The synthetic transaction that writes initial location values.
    pub const INIT: TxId = TxId(0);
}

/// A host function from a value to the next action.
///
/// Compared and hashed by identity: two `HostFn`s are equal only when they
/// are clones of the same allocation.
#[derive(Clone)]
pub struct HostFn {
    f: Arc<dyn Fn(Value) -> Term + Send + Sync>,
    level: crate::term::EffectLevel,
}

impl HostFn {
    /// `level` is the declared effect level of every term `f` produces.
    pub fn new(
        level: crate::term::EffectLevel,
        f: impl Fn(Value) -> Term + Send + Sync + 'static,
    ) -> Self {
        HostFn {
            f: Arc::new(f),
            level,
        }
    }

    pub fn call(&self, v: Value) -> Term {
        (self.f)(v)
    }

    pub fn level(&self) -> crate::term::EffectLevel {
        self.level
    }

    fn addr(&self) -> usize {
        Arc::as_ptr(&self.f) as *const () as usize
    }
}

impl PartialEq for HostFn {
    fn eq(&self, other: &Self) -> bool {
        self.addr() == other.addr()
    }
}

impl Eq for HostFn {}

impl std::hash::Hash for HostFn {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.addr().hash(state)
    }
}

impl fmt::Debug for HostFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<fn@{:x}>", self.addr())
    }
}

/// Values manipulated by actions.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Value {
    Unit,
    Int(i64),
    Char(char),
    Bool(bool),
    Loc(LocId),
    Thread(ThreadId),
    /// Opaque exception payload, compared structurally.
    Exc(Arc<str>),
    /// A host continuation stored as data.
    Fn(HostFn),
}

impl Value {
    pub fn exc(name: &str) -> Value {
        Value::Exc(Arc::from(name))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_loc(&self) -> Option<LocId> {
        match self {
            Value::Loc(l) => Some(*l),
            _ => None,
        }
    }

    pub fn as_char(&self) -> Option<char> {
        match self {
            Value::Char(c) => Some(*c),
            _ => None,
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<char> for Value {
    fn from(c: char) -> Self {
        Value::Char(c)
    }
}

impl From<LocId> for Value {
    fn from(l: LocId) -> Self {
        Value::Loc(l)
    }
}

impl fmt::Display for Value {
    /// Canonical text form; identical to the surface syntax for literals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => f.write_str("()"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Char(c) => write!(f, "'{}'", crate::syntax::escape_char(*c)),
            Value::Bool(true) => f.write_str("#t"),
            Value::Bool(false) => f.write_str("#f"),
            Value::Loc(l) => write!(f, "(loc {})", l.0),
            Value::Thread(t) => write!(f, "(tid {})", t.0),
            Value::Exc(e) => write!(f, "(exc {e})"),
            Value::Fn(h) => write!(f, "{h:?}"),
        }
    }
}
