//! Analytic derivatives against central differences, activations first and
//! then small full models.
//!
//!     cargo run --release --example gradient_check

use ulu_kit::verify::{check_activation_gradients, check_model_gradients, Tolerance};

fn main() {
    let mut rows = check_activation_gradients(2001, Tolerance::relative(1e-6));
    rows.extend(check_model_gradients(Tolerance::relative(1e-5), 0));
    for r in &rows {
        println!(
            "{:<6} {:<55} max |err| {:.2e} ({} points, {} skipped)",
            if r.passed() { "ok" } else { "FAIL" },
            r.name,
            r.max_abs_err,
            r.points,
            r.skipped
        );
    }
    let bad = rows.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {bad} failed", rows.len());
    if bad > 0 {
        std::process::exit(1);
    }
}
