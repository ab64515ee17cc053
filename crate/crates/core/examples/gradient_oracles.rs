//! Finite-difference checks of every differentiable building block.

fn main() -> avword::Result<()> {
    for r in avword::gradcheck::oracle_suite(0..3)? {
        println!("{:<16} worst relative error {:.2e} (seed {})", r.name, r.max_relative_error, r.worst_seed);
    }
    Ok(())
}
