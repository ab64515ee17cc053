//! Mixing a clip with every noise category at the test SNRs.

use avword::data::{mix_at_snr, NoiseBank, NoiseCategory, Wordbank, WordbankConfig, TEST_SNRS};
use avword::audio::Waveform;

fn main() -> avword::Result<()> {
    let wb = Wordbank::generate(&WordbankConfig {
        vocab_size: 4,
        train_per_word: 1,
        val_per_word: 1,
        test_per_word: 1,
        predictable_words: 0,
        homophone_pairs: vec![],
        ..Default::default()
    })?;
    let clean = &wb.samples[0].waveform;
    let bank = NoiseBank::synthetic(0, 1, 2.0)?;
    for cat in NoiseCategory::ALL {
        let src = bank.source(cat, 0)?;
        let noise = Waveform::new(src.samples[..clean.samples.len()].to_vec());
        let measured: Vec<String> = TEST_SNRS
            .iter()
            .map(|&snr| {
                let mix = mix_at_snr(clean, &noise, snr).unwrap();
                let residual: f64 = mix.samples.iter().zip(&clean.samples).map(|(m, c)| ((m - c) as f64).powi(2)).sum();
                let signal: f64 = clean.samples.iter().map(|&c| (c as f64).powi(2)).sum();
                format!("{:.3}", 10.0 * (signal / residual).log10())
            })
            .collect();
        println!("{cat:<10} {}", measured.join(" "));
    }
    Ok(())
}
