//! Evaluates every activation family on a few inputs and shows the ULU
//! special cases next to the functions they reduce to.
//!
//!     cargo run --example activations_tour

use ulu_kit::activations::{ActivationKind, ActivationSpec};

fn main() {
    let xs = [-3.0, -1.0, -0.25, 0.0, 0.25, 1.0, 3.0];
    let mut specs: Vec<ActivationSpec> = ["ulu(0.3,0.8)", "ulu(0.5,0.5)", "ulu(10,10)", "leaky_relu(0.01)", "swish(1.5)"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    specs.extend(ActivationKind::ALL.into_iter().filter(|k| k.arity() == 0).map(ActivationSpec::plain));

    print!("{:<18}", "x");
    for x in xs {
        print!("{x:>10}");
    }
    println!();
    for spec in &specs {
        print!("{:<18}", spec.to_string());
        for x in xs {
            print!("{:>10.5}", spec.eval(x));
        }
        println!();
    }

    println!("\nderivatives:");
    for spec in &specs[..3] {
        print!("{:<18}", spec.to_string());
        for x in xs {
            print!("{:>10.5}", spec.dx(x));
        }
        println!();
    }
}
