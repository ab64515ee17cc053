use avword::integration::{late_fuse, FusionConfig};

fn main() -> avword::Result<()> {
    let visual = [0.8, 0.2];
    let audio = [0.3, 0.7];
    for gamma in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let p = late_fuse(&visual, &audio, &FusionConfig { gamma })?;
        println!("gamma {gamma:.1}: [{:.4}, {:.4}]", p[0], p[1]);
    }
    Ok(())
}
