//! Train a desk-scale lipreader for a few epochs and score it.

use avword::data::{Split, Wordbank, WordbankConfig};
use avword::integration::{assemble_model, ModelKind, ModelSpec};
use avword::train::{confusion_pairs, train, Scorer, TrainConfig, TrainData};

fn main() -> avword::Result<()> {
    let epochs = std::env::args().nth(1).map_or(3, |e| e.parse().expect("epoch count"));
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
    let mut model = assemble_model::<f32>(&ModelSpec::desk(ModelKind::Visual, 6), 0)?;
    println!("{} parameters", model.param_count());
    let cfg = TrainConfig {
        batch_size: 6,
        max_epochs: epochs,
        ..Default::default()
    };
    let out = train(&mut model, &TrainData::from_wordbank(&wb, None), &cfg, None)?;
    for r in &out.records {
        println!("epoch {} loss {:.4} val {:?} lr {:.1e}", r.epoch, r.loss, r.val_mcr, r.lr);
    }
    let report = Scorer::Single(&model).evaluate(&wb.split(Split::Test), None, &wb.vocab, 16)?;
    println!("test MCR {:.1}% confusions {:?}", report.mcr, confusion_pairs(&report, 3));
    Ok(())
}
