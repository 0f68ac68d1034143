//! Acceptance gate: runs every criterion on the bundled worked example and
//! prints one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use switchreg::regulator::SynthesisOptions;
use switchreg::reproduce::{ExampleCase, Reproduction, CRITERIA};

fn main() -> ExitCode {
    let start = Instant::now();
    let reproduction = Reproduction::new(ExampleCase::bundled(), SynthesisOptions::default());
    let mut failed = 0;
    for id in 1..=CRITERIA {
        let t = Instant::now();
        let check = reproduction.criterion(id);
        let tag = if check.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {tag} ({:.3}s): {}",
            check.name,
            t.elapsed().as_secs_f64(),
            check.detail
        );
        for (key, value) in &check.values {
            println!("    {key}: {}", value.render());
        }
        if !check.passed {
            failed += 1;
        }
    }
    let total = start.elapsed().as_secs_f64();
    println!(
        "acceptance: {} of {CRITERIA} criteria passed in {total:.2}s",
        CRITERIA - failed
    );
    if total >= 60.0 {
        println!("acceptance: FAIL, total runtime exceeds 60 s");
        failed += 1;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
