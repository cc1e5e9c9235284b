//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines reach the terminal under a
//! plain `cargo test`. Exits non-zero when any criterion fails.

#![allow(clippy::needless_range_loop)]

#[path = "../common/mod.rs"]
mod common;

mod campaign;
mod metrics;
mod replay;
mod scorer;
mod stats;
mod subjective;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

/// Outcome of one criterion: a short detail line on success, the reason on failure.
pub type Verdict = Result<String, String>;

#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    }};
}

type Criterion = (&'static str, fn() -> Verdict);

const CRITERIA: &[Criterion] = &[
    ("replay: per-model SRCC to human", replay::correlations),
    ("replay: per-model RMSE to human", replay::rmse),
    ("rank reconstruction", replay::ranks),
    ("MOS pipeline oracle", subjective::pipeline_oracle),
    ("stats kernel oracles", stats::kernel_oracles),
    ("reference-metric identities", metrics::identities),
    ("campaign simulation", campaign::simulation),
    ("scorer source indifference", scorer::source_indifference),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    // Keep panics from individual checks out of the report; they are caught below.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS  {name}  [{secs:.1}s]  {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}  [{secs:.1}s]  {reason}");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
