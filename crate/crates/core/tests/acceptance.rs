//! Runs every acceptance criterion and prints one line per criterion.
//!
//! `SEPSPIKE_CRITERIA=1,2,7` restricts the run; `SEPSPIKE_TIER=fast` uses
//! 200 replications for the Table 1 reproduction instead of 2000.

use std::process::ExitCode;

use sepspike::harness::acceptance::{format_line, run_criterion, SuiteOptions, Tier, CRITERIA};

fn main() -> ExitCode {
    let selected: Vec<u8> = match std::env::var("SEPSPIKE_CRITERIA") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => CRITERIA.iter().map(|c| c.0).collect(),
    };
    let tier = match std::env::var("SEPSPIKE_TIER").as_deref() {
        Ok("fast") => Tier::Fast,
        _ => Tier::Paper,
    };
    let opts = SuiteOptions {
        tier,
        ..SuiteOptions::default()
    };
    println!("acceptance suite ({tier:?} tier, seed {})", opts.seed);
    let mut failed = 0;
    for id in selected {
        let r = run_criterion(id, &opts);
        println!("{}", format_line(&r));
        if !r.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
