//! Named example programs, runnable on both engines.

use crate::syntax::{self, SourceProgram, SyntaxError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Params {
    pub threads: usize,
    pub iterations: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            threads: 8,
            iterations: 1000,
        }
    }
}

/// What a scenario should exhibit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Expected {
    /// Every schedule gets stuck.
    pub deadlock: bool,
    /// The participants end up in one transaction with a single commit.
    pub single_merged_commit: bool,
    /// Final committed values of declared variables, in canonical text.
    pub vars: Vec<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: &'static str,
    pub summary: &'static str,
    build: fn(&Params) -> String,
    expect: fn(&Params) -> Expected,
    /// Default size.
    pub desk: Params,
    /// Parameters small enough for exhaustive exploration.
    pub small: Params,
}

impl Scenario {
    pub fn source(&self, p: &Params) -> String {
        (self.build)(p)
    }

    pub fn program(&self, p: &Params) -> Result<SourceProgram, SyntaxError> {
        syntax::parse(&self.source(p))
    }

    pub fn expected(&self, p: &Params) -> Expected {
        (self.expect)(p)
    }
}

fn vars(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|(n, v)| (n.to_string(), v.clone()))
        .collect()
}

fn master_worker(closed: bool) -> String {
    let (open, close) = if closed {
        ("(isolated ", ")")
    } else {
        ("", "")
    };
    let iso = |body: &str| {
        if closed {
            body.to_string()
        } else {
            format!("(isolated {body})")
        }
    };
    format!(
        "; master hands a request to a worker and waits for the answer\n\
         (var c1 0)\n(var c2 0)\n(var b 0)\n\
         (thread master (atomic {open}(seq (writeOTVar b 21) {} {} (readOTVar b)){close}))\n\
         (thread worker (atomic {open}(seq {} (bind (readOTVar b) x (writeOTVar b (* x 2))) {}){close}))\n",
        iso("(up c1)"),
        iso("(down c2)"),
        iso("(down c1)"),
        iso("(up c2)"),
    )
}

fn semaphore_stress(p: &Params) -> String {
    let mut s = String::from("(var s 0)\n");
    for t in 0..p.threads {
        s.push_str(&format!("(thread w{t} (seq"));
        for _ in 0..p.iterations {
            s.push_str(" (atomic (isolated (up s)))");
        }
        s.push_str("))\n");
    }
    s
}

fn counter_isolated(p: &Params) -> String {
    let mut s = String::from("(var c 0)\n");
    for t in 0..p.threads {
        s.push_str(&format!("(thread w{t} (atomic (seq"));
        for _ in 0..p.iterations {
            s.push_str(" (isolated (modifyOTVar c x (+ x 1)))");
        }
        s.push_str(" (return ()))))\n");
    }
    s
}

fn down_any(_: &Params) -> String {
    "; the consumer takes whichever semaphore becomes available\n\
     (var a 0)\n(var b 0)\n(var got 0)\n\
     (thread producer (atomic (isolated (up b))))\n\
     (thread consumer (atomic (isolated (seq (downAny a b) (writeOTVar got 1)))))\n"
        .to_string()
}

fn fork_abort(_: &Params) -> String {
    "; `a` forks a helper, merges with `b`, then throws\n\
     (var shared 0)\n(var outB 0)\n(var flag 0)\n(var f 0)\n\
     (thread a (atomic (seq (writeOTVar shared 7) (bind (newOTVar 42) n (return ())) \
     (fork (writeOTVar f 1)) (isolated (assertOTVar flag x (= x 1))) (throw (exc boom)))))\n\
     (thread b (atomic (bind (readOTVar shared) x (seq (writeOTVar outB (+ x 100)) (writeOTVar flag 1)))))\n"
        .to_string()
}

fn merge_chain(p: &Params) -> String {
    let n = p.threads.max(2);
    let mut s = String::from("(var n 0)\n");
    for t in 0..n {
        s.push_str(&format!("(var v{t} 0)\n"));
    }
    for t in 0..n {
        s.push_str(&format!(
            "(thread t{t} (atomic (seq (writeOTVar v{t} {}) (isolated (up n)) (isolated (assertOTVar n x (= x {n}))) (return {t}))))\n",
            t + 1
        ));
    }
    s
}

pub fn all() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "master-worker-otm",
            summary: "master and worker synchronise through semaphores inside open transactions",
            build: |_| master_worker(false),
            expect: |_| Expected {
                single_merged_commit: true,
                vars: vars(&[("c1", "0".into()), ("c2", "0".into()), ("b", "42".into())]),
                ..Expected::default()
            },
            desk: Params {
                threads: 2,
                iterations: 1,
            },
            small: Params {
                threads: 2,
                iterations: 1,
            },
        },
        Scenario {
            name: "master-worker-closed",
            summary: "the same exchange with each party fully isolated; it cannot make progress",
            build: |_| master_worker(true),
            expect: |_| Expected {
                deadlock: true,
                vars: vars(&[("c1", "0".into()), ("c2", "0".into()), ("b", "0".into())]),
                ..Expected::default()
            },
            desk: Params {
                threads: 2,
                iterations: 1,
            },
            small: Params {
                threads: 2,
                iterations: 1,
            },
        },
        Scenario {
            name: "semaphore-stress",
            summary: "many threads each performing isolated increments in separate transactions",
            build: semaphore_stress,
            expect: |p| Expected {
                vars: vars(&[("s", (p.threads * p.iterations).to_string())]),
                ..Expected::default()
            },
            desk: Params::default(),
            small: Params {
                threads: 2,
                iterations: 2,
            },
        },
        Scenario {
            name: "down-any",
            summary: "a consumer decrements whichever of two semaphores is available",
            build: down_any,
            expect: |_| Expected {
                vars: vars(&[("a", "0".into()), ("b", "0".into()), ("got", "1".into())]),
                ..Expected::default()
            },
            desk: Params {
                threads: 2,
                iterations: 1,
            },
            small: Params {
                threads: 2,
                iterations: 1,
            },
        },
        Scenario {
            name: "counter-isolated",
            summary: "several isolated increments inside each transaction",
            build: counter_isolated,
            expect: |p| Expected {
                vars: vars(&[("c", (p.threads * p.iterations).to_string())]),
                ..Expected::default()
            },
            desk: Params {
                threads: 4,
                iterations: 25,
            },
            small: Params {
                threads: 2,
                iterations: 2,
            },
        },
        Scenario {
            name: "fork-abort",
            summary: "a transaction with a forked helper aborts after merging with another party",
            build: fork_abort,
            expect: |_| Expected {
                vars: vars(&[
                    ("shared", "0".into()),
                    ("outB", "100".into()),
                    ("flag", "1".into()),
                    ("f", "0".into()),
                ]),
                ..Expected::default()
            },
            desk: Params {
                threads: 2,
                iterations: 1,
            },
            small: Params {
                threads: 2,
                iterations: 1,
            },
        },
        Scenario {
            name: "merge-chain",
            summary: "threads meet at a counter barrier, merging into one transaction",
            build: merge_chain,
            expect: |p| {
                let n = p.threads.max(2);
                let mut v = vec![("n".to_string(), n.to_string())];
                v.extend((0..n).map(|t| (format!("v{t}"), (t + 1).to_string())));
                Expected {
                    single_merged_commit: true,
                    vars: v,
                    ..Expected::default()
                }
            },
            desk: Params {
                threads: 3,
                iterations: 1,
            },
            small: Params {
                threads: 3,
                iterations: 1,
            },
        },
    ]
}

pub fn find(name: &str) -> Option<Scenario> {
    all().into_iter().find(|s| s.name == name)
}
