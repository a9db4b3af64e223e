//! Jump in the derivative of a two-branch unit split at `a`. Only a = 0 (or
//! equal coefficients) joins the branches smoothly.
//!
//!     cargo run --example derivative_gap

use ulu_kit::verify::derivative_gap;

fn main() {
    let (a1, a2) = (0.3, 0.8);
    println!("{:>6} {:>12} {:>12} {:>12}", "a", "left", "right", "gap");
    for a in [-2.0, -1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0, 2.0] {
        let g = derivative_gap(a, a1, a2);
        println!("{:>6} {:>12.6} {:>12.6} {:>12.3e}", a, g.left_limit, g.right_limit, g.gap);
    }
}
