//! What each boundary mode does to a small feature sequence.

use avword::backend::{boundary_augment, BoundaryMode, BoundarySpec};
use avword::Tensor;

fn main() -> avword::Result<()> {
    let x = Tensor::<f32>::from_fn([8, 2], |i| i as f32);
    let b = BoundarySpec::new(2, 5, 8)?;
    for mode in BoundaryMode::ALL {
        let y = boundary_augment(&x, b, mode)?;
        println!("{mode}: {:?}", y.shape());
        for row in y.data().chunks(y.shape()[1]) {
            println!("  {row:?}");
        }
    }
    Ok(())
}
