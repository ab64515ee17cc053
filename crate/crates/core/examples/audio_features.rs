//! Log spectra of a synthetic clip and the frame counts through the
//! pyramidal frontend.

use avword::audio::{stft_log_spectra, utterance_scalar_normalize, AudioFrontend, AudioFrontendConfig};
use avword::data::{Wordbank, WordbankConfig};
use avword::recurrent::Seq;
use avword::{Graph, Mode, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

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
    let s = &wb.samples[0];
    let spectra = utterance_scalar_normalize(stft_log_spectra(&s.waveform)?)?;
    println!("{} samples -> {:?} spectral frames", s.waveform.samples.len(), spectra.frames.shape());

    let cfg = AudioFrontendConfig {
        hidden: 16,
        boundary_input: false,
        ..Default::default()
    };
    let mut store = ParamStore::<f32>::new();
    let front = AudioFrontend::new(&mut store, "audio", &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let g = Graph::with_store(&store, Mode::Eval, ChaCha8Rng::seed_from_u64(0));
    let t = spectra.len();
    let bins = spectra.frames.shape()[1];
    let x = spectra.frames.reshape([t, 1, bins])?;
    let (fwd, _) = front.forward(&g, &Seq::new(&g, g.constant(x), vec![t])?)?;
    println!("frontend output {:?} per direction", g.shape(fwd.data));
    Ok(())
}
