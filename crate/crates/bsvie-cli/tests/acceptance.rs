//! Acceptance gate: every criterion runs at its stated scale and must pass.
//! One line per criterion goes to stdout (run with `--nocapture` to watch).

use bsvie_cli::acceptance::{run_all, run_criterion};

#[test]
fn acceptance_suite() {
    let outcomes = run_all(false);
    for o in &outcomes {
        println!("{}", o.line());
        for d in &o.details {
            println!("    {d}");
        }
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("criterion {} [{}]: {:?}", o.id, o.name, o.details))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

#[test]
fn quick_suite_smoke() {
    // the reduced-scale path used for development stays green too
    let o = run_criterion(6, true);
    println!("{}", o.line());
    assert!(o.pass, "{:?}", o.details);
}
