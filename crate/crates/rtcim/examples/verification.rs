//! Drive the machine-vs-reference suites from code: every routine in the
//! simulator has an independent host-arithmetic model, and the suites sweep
//! randomized cases against them under a fixed seed.

use rtcim::verify::{oracle, run_suites, Suite};

fn main() {
    let report = run_suites(&Suite::ALL, 2024, 250);
    for suite in &report.suites {
        println!("suite {}:", suite.suite);
        for check in &suite.checks {
            println!(
                "  {:<62} {:>5}/{} ok",
                check.check,
                check.trials - check.mismatches,
                check.trials
            );
        }
    }
    println!(
        "\noverall: {}",
        if report.passed { "PASS" } else { "FAIL" }
    );
    assert!(report.passed);

    // The oracles stand alone. A product the machine truncates:
    let (p, flag) = oracle::fp_mul(1.5f32.to_bits(), 2.5f32.to_bits());
    println!("\noracle fp_mul(1.5, 2.5) = {} (flag {flag})", f32::from_bits(p));

    // And an order-insensitive 3-term sum:
    let a = [16777216.0f32.to_bits(), 1.0f32.to_bits(), (-16777216.0f32).to_bits()];
    let b = [a[1], a[0], a[2]];
    assert_eq!(oracle::fp_add(&a), oracle::fp_add(&b));
    println!(
        "oracle fp_add keeps the small term regardless of order: {}",
        f32::from_bits(oracle::fp_add(&a).0)
    );
}
