//! Per-frame shapes through the full-size visual frontend and the
//! temporal-convolution backend.

use avword::backend::tconv_shape_chain;
use avword::visual::{shape_chain_report, ResNetConfig};

fn show(title: &str, chain: &[Vec<usize>]) {
    println!("{title}");
    for s in chain {
        let dims: Vec<String> = s.iter().map(|d| d.to_string()).collect();
        println!("  {}", dims.join(" x "));
    }
}

fn main() -> avword::Result<()> {
    show("resnet-18, 112x112 input", &shape_chain_report(&ResNetConfig::default(), 112)?);
    show("desk resnet, 32x32 input", &shape_chain_report(&ResNetConfig::desk(32, [8, 16, 16, 32], 64), 32)?);
    show("temporal conv backend", &tconv_shape_chain(29, 256, 500)?);
    Ok(())
}
