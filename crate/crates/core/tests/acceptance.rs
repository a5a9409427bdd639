//! Runs every acceptance criterion once and prints one line per criterion.
//! Exits with status 1 if any criterion fails.

use wf_levy::validate::{Mode, Suite, CRITERIA};

fn main() {
    let suite = Suite::new(Mode::Full, 20_240_601);
    let mut failed = Vec::new();
    for id in 1..=CRITERIA {
        let report = suite.run(id);
        println!("{report}");
        if !report.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {CRITERIA} criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
