//! Central-difference check of every graph operator and of weighted BCE
//! through each model variant.
//!
//! cargo run --release --example gradcheck

use atgat::diagnostics::{gradcheck_suite, suite_max_error, GRADCHECK_TOL};

fn main() -> atgat::Result<()> {
    let entries = gradcheck_suite()?;
    for e in &entries {
        println!("{:<28} {:>5} entries  max rel error {:.2e}", e.name, e.report.entries, e.report.max_rel_error);
    }
    let max = suite_max_error(&entries);
    println!("overall {max:.2e} (tolerance {GRADCHECK_TOL:e})");
    if max >= GRADCHECK_TOL {
        std::process::exit(2);
    }
    Ok(())
}
