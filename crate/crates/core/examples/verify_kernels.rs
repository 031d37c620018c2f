//! Run the kernel self-checks: dense-attention equivalence at full routing,
//! the sparsity law for partial routing, and tile-permutation equivariance.
//!
//! ```bash
//! cargo run --example verify_kernels
//! ```

use std::process::ExitCode;

use proctor::harness::run_verify;

fn main() -> ExitCode {
    let report = run_verify(false);
    print!("{}", report.render());
    if report.all_passed() {
        println!("all checks passed");
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
