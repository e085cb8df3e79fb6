//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p webrpg-cli --test acceptance [-- FILTER...]` runs every
//! criterion whose key (e.g. `06-ar-overfit`) contains one of the filters.
//! Tolerances and budgets are pinned here, next to each check.

mod diffusion;
mod gradients;
mod identities;
mod overfit;
mod pipeline;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// `Ok(detail)` passes, `Err(detail)` fails.
pub type Outcome = Result<String, String>;

struct Criterion {
    id: u8,
    key: &'static str,
    /// Wall-clock budget for the whole check, if any.
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

const fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, key: "metric-identity", budget: None, run: pipeline::metric_identity },
    Criterion { id: 2, key: "vocabulary", budget: secs(1), run: identities::vocabulary },
    Criterion { id: 3, key: "css-json-round-trip", budget: secs(30), run: identities::round_trips },
    Criterion { id: 4, key: "gradients", budget: secs(120), run: gradients::suite },
    Criterion { id: 5, key: "vae-overfit", budget: secs(600), run: overfit::vae },
    Criterion { id: 6, key: "ar-overfit", budget: secs(1800), run: overfit::ar },
    Criterion { id: 7, key: "diffusion", budget: None, run: diffusion::consistency },
    Criterion { id: 8, key: "vc-oracle", budget: None, run: identities::vc_oracle },
    Criterion { id: 9, key: "sc-brute-force", budget: None, run: identities::sc_brute_force },
    Criterion { id: 10, key: "fid", budget: None, run: overfit::fid_suite },
    Criterion { id: 11, key: "determinism", budget: None, run: pipeline::determinism },
];

fn panic_text(e: Box<dyn std::any::Any + Send>) -> String {
    match e.downcast::<String>() {
        Ok(s) => *s,
        Err(e) => e.downcast_ref::<&str>().map(|s| s.to_string()).unwrap_or_else(|| "panic".into()),
    }
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed) = (0, 0);
    for c in CRITERIA {
        let key = format!("{:02}-{}", c.id, c.key);
        if !filters.is_empty() && !filters.iter().any(|f| key.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| Err(panic_text(e)));
        let took = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(d), Some(b)) if took > b => Err(format!("{d}; over the {}s budget", b.as_secs())),
            (o, _) => o,
        };
        match outcome {
            Ok(d) => {
                passed += 1;
                println!("PASS {key} ({:.1}s): {d}", took.as_secs_f64());
            }
            Err(d) => {
                failed += 1;
                println!("FAIL {key} ({:.1}s): {d}", took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}

/// `Err` with `msg` unless `cond`.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Stringify any error.
pub fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}
