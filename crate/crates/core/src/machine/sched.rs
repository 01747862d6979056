use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Machine, MachineError, Thread, Transition};
use crate::term::Term;
use crate::value::ThreadId;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Uniform choice among enabled transitions.
    SeededRandom(u64),
    /// Cycles through threads, taking the first enabled transition at or
    /// after the cursor.
    RoundRobin,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    /// Every thread finished with a value or an uncaught exception.
    Terminated,
    /// Nothing is enabled but some thread has not finished.
    Deadlock,
    StepLimit,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub outcome: RunOutcome,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ThreadOutcome {
    Returned(String),
    Threw(String),
    Killed,
    Blocked,
}

impl fmt::Display for ThreadOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThreadOutcome::Returned(v) => write!(f, "returned {v}"),
            ThreadOutcome::Threw(v) => write!(f, "threw {v}"),
            ThreadOutcome::Killed => f.write_str("killed"),
            ThreadOutcome::Blocked => f.write_str("blocked"),
        }
    }
}

/// Observable end state of a run. Unnamed locations are listed by value
/// only, since their ids depend on allocation order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Summary {
    pub vars: Vec<(String, String)>,
    pub anon: Vec<String>,
    pub output: String,
    pub threads: Vec<(String, ThreadOutcome)>,
    pub deadlock: bool,
    /// Event log in trace format, when requested.
    pub history: Option<String>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vars: Vec<String> = self.vars.iter().map(|(n, v)| format!("{n}={v}")).collect();
        write!(f, "heap {{{}}}", vars.join(", "))?;
        if !self.anon.is_empty() {
            write!(f, " new [{}]", self.anon.join(", "))?;
        }
        write!(f, " output {:?}", self.output)?;
        for (n, o) in &self.threads {
            write!(f, " {n}: {o};")?;
        }
        if self.deadlock {
            f.write_str(" DEADLOCK")?;
        }
        Ok(())
    }
}

impl Machine {
    fn finished(th: &Thread) -> bool {
        matches!(
            th,
            Thread::Plain {
                term: Term::Return(_) | Term::Throw(_),
                ..
            }
        )
    }

    /// True when some thread is neither finished nor killed.
    pub fn has_unfinished(&self) -> bool {
        self.threads.values().any(|th| !Self::finished(th))
    }

    pub fn outcome_of(&self, t: ThreadId) -> ThreadOutcome {
        match self.threads.get(&t) {
            None if self.killed.contains(&t) => ThreadOutcome::Killed,
            Some(Thread::Plain {
                term: Term::Return(e),
                ..
            }) => ThreadOutcome::Returned(
                e.eval()
                    .map(|v| v.to_string())
                    .unwrap_or_else(|_| crate::syntax::print_expr(e)),
            ),
            Some(Thread::Plain {
                term: Term::Throw(e),
                ..
            }) => ThreadOutcome::Threw(
                e.eval()
                    .map(|v| v.to_string())
                    .unwrap_or_else(|_| crate::syntax::print_expr(e)),
            ),
            _ => ThreadOutcome::Blocked,
        }
    }

    pub fn summary(&self, with_history: bool) -> Summary {
        let vars = self
            .var_names
            .iter()
            .map(|(r, n)| {
                let v = self
                    .heap
                    .get(r)
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "?".into());
                (n.clone(), v)
            })
            .collect();
        let mut anon: Vec<String> = self
            .heap
            .iter()
            .filter(|(r, _)| !self.var_names.contains_key(r))
            .map(|(_, v)| v.to_string())
            .collect();
        anon.sort();
        let threads = self
            .thread_names
            .iter()
            .map(|(t, n)| (n.clone(), self.outcome_of(*t)))
            .collect();
        Summary {
            vars,
            anon,
            output: self.output.clone(),
            threads,
            deadlock: self.enabled().is_empty() && self.has_unfinished(),
            history: with_history.then(|| self.history().to_jsonl()),
        }
    }

    /// Runs until nothing is enabled or `max_steps` transitions were taken.
    pub fn run(&mut self, policy: Policy, max_steps: usize) -> Result<RunResult, MachineError> {
        let mut rng = match policy {
            Policy::SeededRandom(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            Policy::RoundRobin => None,
        };
        let mut cursor = 0u64;
        for steps in 0..max_steps {
            let enabled = self.enabled();
            if enabled.is_empty() {
                let outcome = if self.has_unfinished() {
                    RunOutcome::Deadlock
                } else {
                    RunOutcome::Terminated
                };
                return Ok(RunResult { outcome, steps });
            }
            let choice = match rng.as_mut() {
                Some(rng) => enabled[rng.gen_range(0..enabled.len())],
                None => {
                    let pick = |tr: &&Transition| self.actor(**tr).0 >= cursor;
                    let tr = *enabled.iter().find(pick).unwrap_or(&enabled[0]);
                    cursor = self.actor(tr).0 + 1;
                    tr
                }
            };
            self.apply(choice)?;
        }
        Ok(RunResult {
            outcome: RunOutcome::StepLimit,
            steps: max_steps,
        })
    }
}
