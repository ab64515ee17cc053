//! Write a small wordbank, its noise bank and the fixed noisy test sets.

use avword::data::{build_test_noise_sets, write_test_noise_sets, NoiseBank, Split, Wordbank, WordbankConfig};

fn main() -> avword::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "target/example-data".into());
    let root = std::path::Path::new(&root);
    let cfg = WordbankConfig {
        vocab_size: 6,
        train_per_word: 2,
        val_per_word: 1,
        test_per_word: 2,
        predictable_words: 3,
        homophone_pairs: vec![[4, 5]],
        ..Default::default()
    };
    let wb = Wordbank::generate(&cfg)?;
    let manifest = wb.write(root)?;
    let bank = NoiseBank::synthetic(cfg.seed, 1, 2.0)?;
    bank.write_dir(&root.join("noise"))?;
    let ids: Vec<String> = wb.split(Split::Test).iter().map(|s| s.id.clone()).collect();
    let sets = build_test_noise_sets(&bank, &ids, wb.samples[0].waveform.samples.len(), cfg.seed)?;
    write_test_noise_sets(&root.join("noise_sets"), &sets)?;
    println!("{} samples in {}, hash {}", manifest.samples.len(), root.display(), manifest.content_hash);
    for s in wb.samples.iter().take(4) {
        println!("  {} {:?} word {} frames {:?}", s.id, s.split, s.word, s.boundaries);
    }
    Ok(())
}
