mod support;

use support::gradcheck::{worst, CASES, TOLERANCE};

#[test]
fn analytic_gradients_match_finite_differences() {
    for (name, case) in CASES {
        let w = worst(case, 20);
        assert!(w <= TOLERANCE, "{name}: worst relative error {w:.3e}");
    }
}
