//! Audio and visual models on one wordbank, their SNR sweeps and the
//! late-fused sweep.

use avword::data::{build_test_noise_sets, NoiseBank, Split, Wordbank, WordbankConfig};
use avword::integration::{assemble_model, FusionConfig, ModelKind, ModelSpec};
use avword::train::{snr_sweep_report, train, Scorer, TrainConfig, TrainData};

fn main() -> avword::Result<()> {
    let epochs = std::env::args().nth(1).map_or(2, |e| e.parse().expect("epoch count"));
    let wb = Wordbank::generate(&WordbankConfig {
        vocab_size: 6,
        train_per_word: 3,
        val_per_word: 1,
        test_per_word: 2,
        predictable_words: 0,
        homophone_pairs: vec![],
        context_words: 1,
        ..Default::default()
    })?;
    let bank = NoiseBank::synthetic(0, 1, 2.0)?;
    let data = TrainData::from_wordbank(&wb, Some(&bank));
    let cfg = TrainConfig {
        batch_size: 6,
        max_epochs: epochs,
        ..Default::default()
    };
    let mut audio = assemble_model::<f32>(&ModelSpec::desk(ModelKind::Audio, 6), 0)?;
    train(&mut audio, &data, &cfg, None)?;
    let mut visual = assemble_model::<f32>(&ModelSpec::desk(ModelKind::Visual, 6), 0)?;
    train(&mut visual, &data, &cfg, None)?;

    let test = wb.split(Split::Test);
    let ids: Vec<String> = test.iter().map(|s| s.id.clone()).collect();
    let sets = build_test_noise_sets(&bank, &ids, test[0].waveform.samples.len(), 0)?;
    let fused = Scorer::Fused {
        visual: &visual,
        audio: &audio,
        fusion: FusionConfig::default(),
    };
    for (name, scorer) in [("audio", Scorer::Single(&audio)), ("fused", fused)] {
        let r = snr_sweep_report(&scorer, &sets, &bank, &test, &wb.vocab, 16)?;
        println!("{name}");
        print!("{}", r.to_csv());
    }
    Ok(())
}
