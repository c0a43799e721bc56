//! One PASS/FAIL line per acceptance criterion. Runs without the libtest harness
//! so every line is printed, passing or not; exits nonzero if any criterion fails.

use mbres::acceptance::{run_all_lazy, Suite};

fn main() {
    let suite = Suite::default();
    let checks = run_all_lazy();
    let total = checks.len();
    let mut failed = 0;
    for check in checks {
        let r = check(&suite);
        println!("{}", r.line());
        if !r.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {} failed", total - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
