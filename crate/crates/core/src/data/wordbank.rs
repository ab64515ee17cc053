use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{load_sample, store_sample, Sample, Split, CLIP_FRAMES, SAMPLES_PER_FRAME};
use crate::audio::{Waveform, SAMPLE_RATE};
use crate::backend::{BoundarySpec, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Tone frequencies available to audio motifs and babble voices.
pub fn tone_grid() -> Vec<f64> {
    (0..20).map(|k| 300.0 * 1.15f64.powi(k)).collect()
}

const TONE_AMPLITUDE: f64 = 0.3;
const RAMP: usize = 80;
const DOT_SIGMA: f64 = 2.0;
const BACKGROUND: f64 = 40.0;
const DOT_PEAK: f64 = 180.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WordbankConfig {
    pub vocab_size: usize,
    pub train_per_word: usize,
    pub val_per_word: usize,
    pub test_per_word: usize,
    pub frame_size: usize,
    /// Words `0..predictable_words` get fixed context words.
    pub predictable_words: usize,
    /// Word pairs sharing one audio motif.
    pub homophone_pairs: Vec<[usize; 2]>,
    pub min_word_frames: usize,
    pub max_word_frames: usize,
    /// Smallest context run on either side of the word.
    pub min_margin: usize,
    /// Standard deviation of pixel noise, in grey levels.
    pub pixel_noise: f64,
    /// Largest per-sample shift of the whole trajectory, in pixels.
    pub position_jitter: f64,
    /// Largest relative change of the trajectory radius.
    pub scale_jitter: f64,
    /// Size of the context lexicon rendered outside the word boundaries.
    pub context_words: usize,
    /// Two-word clips: the target and one other vocabulary word split the
    /// clip evenly, in random order. Word lengths and margins are then
    /// fixed by the clip length.
    pub confusable_context: bool,
    pub seed: u64,
}

impl Default for WordbankConfig {
    fn default() -> Self {
        WordbankConfig {
            vocab_size: 20,
            train_per_word: 5,
            val_per_word: 2,
            test_per_word: 5,
            frame_size: 32,
            predictable_words: 10,
            homophone_pairs: vec![[10, 11], [14, 15]],
            min_word_frames: 8,
            max_word_frames: 12,
            min_margin: 2,
            pixel_noise: 6.0,
            position_jitter: 1.5,
            scale_jitter: 0.1,
            context_words: 8,
            confusable_context: false,
            seed: 0,
        }
    }
}

impl WordbankConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.predictable_words > self.vocab_size {
            return bad("predictable_words exceeds vocab_size".into());
        }
        if self.train_per_word == 0 || self.test_per_word == 0 {
            return bad("train_per_word and test_per_word must be positive".into());
        }
        if self.frame_size < 16 || self.frame_size % 16 != 0 {
            return bad(format!("frame_size must be a positive multiple of 16, got {}", self.frame_size));
        }
        if self.min_word_frames < 3 || self.min_word_frames > self.max_word_frames {
            return bad("need 3 <= min_word_frames <= max_word_frames".into());
        }
        if self.max_word_frames + 2 * self.min_margin > CLIP_FRAMES || self.min_margin == 0 {
            return bad(format!(
                "word of {} frames plus margins of {} does not fit {CLIP_FRAMES} frames",
                self.max_word_frames, self.min_margin
            ));
        }
        let mut used = vec![false; self.vocab_size];
        for &[a, b] in &self.homophone_pairs {
            if a == b || a >= self.vocab_size || b >= self.vocab_size || used[a] || used[b] {
                return bad(format!("invalid homophone pair [{a}, {b}]"));
            }
            used[a] = true;
            used[b] = true;
        }
        let p = self.predictable_words;
        if self.confusable_context && (p == 1 || p == 2 || self.vocab_size - p == 1) {
            return bad("two-word clips need 0 or at least 3 predictable words and never exactly 1 free word".into());
        }
        if self.context_lexicon() == 0 {
            return bad("context lexicon is empty".into());
        }
        if self.context_lexicon().pow(2) < self.predictable_words {
            return bad(format!(
                "{} context words cannot give {} predictable words distinct contexts",
                self.context_lexicon(),
                self.predictable_words
            ));
        }
        if !(0.0..=4.0).contains(&self.position_jitter) || !(0.0..0.5).contains(&self.scale_jitter) {
            return bad("position_jitter must lie in [0, 4] and scale_jitter in [0, 0.5)".into());
        }
        if !(0.0..=64.0).contains(&self.pixel_noise) {
            return bad("pixel_noise must lie in [0, 64]".into());
        }
        Ok(())
    }

    /// Number of distinct context words.
    pub fn context_lexicon(&self) -> usize {
        if self.confusable_context {
            self.vocab_size
        } else {
            self.context_words
        }
    }

    fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_word,
            Split::Val => self.val_per_word,
            Split::Test => self.test_per_word,
        }
    }
}

/// Three mouth poses, each a cell of a 3×3 grid (row-major, centre 4).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualMotif {
    pub poses: [usize; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioMotif {
    pub tones: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordMotif {
    pub visual: VisualMotif,
    pub audio: AudioMotif,
}

fn hamming(a: &[usize; 3], b: &[usize; 3]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Draw `count` motifs whose pose sequences differ from every earlier one
/// in at least `min_pose_distance` positions and whose tone triples are new.
fn motif_set(
    seed: u64,
    tag: &str,
    count: usize,
    min_pose_distance: usize,
    taken: &mut Vec<([usize; 3], [usize; 3])>,
) -> Vec<WordMotif> {
    let grid = tone_grid();
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, tag, i as u64);
            let mut tries = 0usize;
            loop {
                tries += 1;
                let poses = [rng.random_range(0..9), rng.random_range(0..9), rng.random_range(0..9)];
                let tones = [
                    rng.random_range(0..grid.len()),
                    rng.random_range(0..grid.len()),
                    rng.random_range(0..grid.len()),
                ];
                let need = if tries > 10_000 { 1 } else { min_pose_distance };
                let fresh = taken.iter().all(|(p, t)| hamming(p, &poses) >= need && t != &tones);
                if poses[0] != poses[1] && poses[1] != poses[2] && tones[0] != tones[1] && tones[1] != tones[2] && fresh {
                    taken.push((poses, tones));
                    break WordMotif {
                        visual: VisualMotif { poses },
                        audio: AudioMotif {
                            tones: tones.map(|k| grid[k]),
                        },
                    };
                }
            }
        })
        .collect()
}

pub fn word_motifs(cfg: &WordbankConfig) -> Vec<WordMotif> {
    let mut motifs = motif_set(cfg.seed, "motif", cfg.vocab_size, 2, &mut Vec::new());
    for &[a, b] in &cfg.homophone_pairs {
        motifs[b].audio = motifs[a].audio;
    }
    motifs
}

/// Motifs of the context lexicon.
pub fn context_motifs(cfg: &WordbankConfig) -> Vec<WordMotif> {
    if cfg.confusable_context {
        return word_motifs(cfg);
    }
    let mut taken = Vec::new();
    motif_set(cfg.seed, "motif", cfg.vocab_size, 2, &mut taken);
    motif_set(cfg.seed, "context-motif", cfg.context_words, 1, &mut taken)
}

fn word_name(i: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syl = |k: usize| format!("{}{}", C[k % C.len()] as char, V[(k / C.len()) % V.len()] as char);
    format!("{}{}", syl(i * 5 + 1), syl(i * 3 + 7 + i / 70))
}

pub fn vocabulary(vocab_size: usize) -> Result<Vocabulary> {
    let mut words = Vec::with_capacity(vocab_size);
    for i in 0..vocab_size {
        let mut w = word_name(i);
        if words.contains(&w) {
            w = format!("{w}{i}");
        }
        words.push(w);
    }
    Vocabulary::new(words)
}

/// Audio of one motif stretched over `len` samples: three equal tones with
/// raised-cosine edges.
pub fn render_motif_audio(motif: &AudioMotif, len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; len];
    let sr = SAMPLE_RATE as f64;
    for (k, &f) in motif.tones.iter().enumerate() {
        let (a, b) = (k * len / 3, (k + 1) * len / 3);
        let n = b - a;
        let ramp = RAMP.min(n / 2).max(1);
        for j in 0..n {
            let edge = j.min(n - 1 - j);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            out[a + j] = (TONE_AMPLITUDE * env * (2.0 * PI * f * j as f64 / sr).sin()) as f32;
        }
    }
    out
}

/// Dot centre for phase `tau` in [0, 1], relative to the frame centre: each
/// pose is held around its third of the segment with eased transitions.
pub fn motif_position(motif: &VisualMotif, tau: f64, radius: f64) -> (f64, f64) {
    let at = |p: usize| (radius * ((p % 3) as f64 - 1.0), radius * ((p / 3) as f64 - 1.0));
    let x = (3.0 * tau - 0.5).clamp(0.0, 2.0);
    let k = (x.floor() as usize).min(1);
    let f = x - k as f64;
    let w = 0.5 - 0.5 * (PI * f).cos();
    let (a, b) = (at(motif.poses[k]), at(motif.poses[k + 1]));
    (a.0 + w * (b.0 - a.0), a.1 + w * (b.1 - a.1))
}

/// Segment (0 left context, 1 word, 2 right context) and motif phase of
/// every frame.
fn frame_segments(bounds: BoundarySpec) -> Vec<(usize, f64)> {
    (0..CLIP_FRAMES)
        .map(|t| {
            let (seg, a, b) = if t < bounds.start {
                (0, 0, bounds.start)
            } else if t < bounds.end {
                (1, bounds.start, bounds.end)
            } else {
                (2, bounds.end, CLIP_FRAMES)
            };
            (seg, ((t - a) as f64 + 0.5) / (b - a) as f64)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Wordbank {
    pub config: WordbankConfig,
    pub vocab: Vocabulary,
    pub motifs: Vec<WordMotif>,
    pub context_motifs: Vec<WordMotif>,
    pub samples: Vec<Sample>,
}

impl Wordbank {
    pub fn generate(cfg: &WordbankConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = vocabulary(cfg.vocab_size)?;
        let motifs = word_motifs(cfg);
        let context = context_motifs(cfg);
        let mut samples = Vec::new();
        for (si, split) in Split::ALL.into_iter().enumerate() {
            for w in 0..cfg.vocab_size {
                for k in 0..cfg.count(split) {
                    let index = ((si * cfg.vocab_size + w) * 100_000 + k) as u64;
                    samples.push(render_sample(cfg, &vocab, &motifs, &context, split, w, k, index)?);
                }
            }
        }
        Ok(Wordbank {
            config: cfg.clone(),
            vocab,
            motifs,
            context_motifs: context,
            samples,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn is_predictable(&self, label: usize) -> bool {
        label < self.config.predictable_words
    }

    /// Fixed left and right context words of a predictable word, as indices
    /// into the context lexicon.
    pub fn context_partners(&self, label: usize) -> Option<(usize, usize)> {
        predictable_partners(&self.config, label)
    }

    pub fn write(&self, root: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut entries = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let rel = PathBuf::from(s.split.name()).join(&s.word).join(&s.id);
            store_sample(s, &root.join(&rel))?;
            entries.push(ManifestEntry {
                id: s.id.clone(),
                split: s.split,
                word: s.word.clone(),
                label: s.label,
                path: rel.to_string_lossy().replace('\\', "/"),
            });
        }
        let manifest = Manifest {
            config: self.config.clone(),
            words: self.vocab.words().to_vec(),
            content_hash: content_hash(root, &entries)?,
            samples: entries,
        };
        let path = root.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let manifest = Manifest::read(root)?;
        let hash = content_hash(root, &manifest.samples)?;
        if hash != manifest.content_hash {
            return Err(Error::Mismatch(format!(
                "{}: content hash {hash} differs from manifest {}",
                root.display(),
                manifest.content_hash
            )));
        }
        let vocab = Vocabulary::new(manifest.words.clone())?;
        let samples = manifest
            .samples
            .iter()
            .map(|e| load_sample(&root.join(&e.path)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Wordbank {
            motifs: word_motifs(&manifest.config),
            context_motifs: context_motifs(&manifest.config),
            config: manifest.config,
            vocab,
            samples,
        })
    }
}

fn predictable_partners(cfg: &WordbankConfig, label: usize) -> Option<(usize, usize)> {
    let p = cfg.predictable_words;
    if label >= p {
        return None;
    }
    if cfg.confusable_context {
        return Some(((label + 1) % p, (label + 2) % p));
    }
    let c = cfg.context_words;
    Some((label % c, (label + 1 + label / c) % c))
}

fn free_context(cfg: &WordbankConfig, rng: &mut impl Rng) -> usize {
    if cfg.confusable_context {
        rng.random_range(cfg.predictable_words..cfg.vocab_size)
    } else {
        rng.random_range(0..cfg.context_words)
    }
}

fn render_sample(
    cfg: &WordbankConfig,
    vocab: &Vocabulary,
    motifs: &[WordMotif],
    context: &[WordMotif],
    split: Split,
    word: usize,
    k: usize,
    index: u64,
) -> Result<Sample> {
    let mut rng = stream(cfg.seed, "sample", index);
    let (start, len, left, right) = if cfg.confusable_context {
        let len = rng.random_range(CLIP_FRAMES / 2 - 1..=CLIP_FRAMES / 2 + 2);
        let first = rng.random_bool(0.5);
        let other = match predictable_partners(cfg, word) {
            Some((l, r)) => if first { r } else { l },
            None => loop {
                let c = free_context(cfg, &mut rng);
                if c != word {
                    break c;
                }
            },
        };
        if first {
            (0, len, other, other)
        } else {
            (CLIP_FRAMES - len, len, other, other)
        }
    } else {
        let len = rng.random_range(cfg.min_word_frames..=cfg.max_word_frames);
        let start = rng.random_range(cfg.min_margin..=CLIP_FRAMES - cfg.min_margin - len);
        let (left, right) = match predictable_partners(cfg, word) {
            Some(p) => p,
            None => (free_context(cfg, &mut rng), free_context(cfg, &mut rng)),
        };
        (start, len, left, right)
    };
    let bounds = BoundarySpec::new(start, start + len, CLIP_FRAMES)?;
    let owners = [&context[left], &motifs[word], &context[right]];

    let size = cfg.frame_size;
    let centre = (size as f64 - 1.0) / 2.0;
    let radius = size as f64 * 0.25 * (1.0 + cfg.scale_jitter * rng.random_range(-1.0..1.0));
    let j = cfg.position_jitter;
    let (dx, dy) = (j * rng.random_range(-1.0..1.0), j * rng.random_range(-1.0..1.0));
    let noise = Normal::new(0.0, cfg.pixel_noise.max(1e-12)).unwrap();
    let mut frames = Vec::with_capacity(CLIP_FRAMES * size * size);
    for (seg, tau) in frame_segments(bounds) {
        let (px, py) = motif_position(&owners[seg].visual, tau, radius);
        let (cx, cy) = (centre + dx + px, centre + dy + py);
        for h in 0..size {
            for w in 0..size {
                let d2 = (w as f64 - cx).powi(2) + (h as f64 - cy).powi(2);
                let mut v = BACKGROUND + DOT_PEAK * (-d2 / (2.0 * DOT_SIGMA * DOT_SIGMA)).exp();
                if cfg.pixel_noise > 0.0 {
                    v += noise.sample(&mut rng);
                }
                frames.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }

    let mut samples = Vec::with_capacity(CLIP_FRAMES * SAMPLES_PER_FRAME);
    for (owner, a, b) in [(owners[0], 0, start), (owners[1], start, start + len), (owners[2], start + len, CLIP_FRAMES)] {
        samples.extend(render_motif_audio(&owner.audio, (b - a) * SAMPLES_PER_FRAME));
    }
    let mut waveform = Waveform::new(samples);
    waveform.quantize();

    Ok(Sample {
        id: format!("{}_{}_{k:03}", split.name(), vocab.word(word)),
        word: vocab.word(word).to_string(),
        label: word,
        split,
        boundaries: bounds,
        frame_count: CLIP_FRAMES,
        frame_size: size,
        frames,
        waveform,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub word: String,
    pub label: usize,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: WordbankConfig,
    pub words: Vec<String>,
    pub content_hash: String,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn content_hash(root: &Path, entries: &[ManifestEntry]) -> Result<String> {
    let mut h = Sha256::new();
    for e in entries {
        for file in ["frames.tnsr", "audio.wav", "meta.json"] {
            let path = root.join(&e.path).join(file);
            let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
            h.update(e.path.as_bytes());
            h.update(file.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Write the wordbank for `cfg` under `root` and return its manifest.
pub fn generate_wordbank(cfg: &WordbankConfig, root: &Path) -> Result<Manifest> {
    Wordbank::generate(cfg)?.write(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictable_contexts_are_distinct() {
        for confusable_context in [false, true] {
            let cfg = WordbankConfig { confusable_context, ..Default::default() };
            let pairs: Vec<_> = (0..cfg.predictable_words).map(|i| predictable_partners(&cfg, i).unwrap()).collect();
            for i in 0..pairs.len() {
                assert!(!pairs[i + 1..].contains(&pairs[i]));
            }
            assert!(predictable_partners(&cfg, cfg.predictable_words).is_none());
        }
    }

    #[test]
    fn poses_are_held_and_motifs_separated() {
        let m = VisualMotif { poses: [0, 4, 8] };
        assert_eq!(motif_position(&m, 0.0, 8.0), (-8.0, -8.0));
        assert_eq!(motif_position(&m, 0.5, 8.0), (0.0, 0.0));
        assert_eq!(motif_position(&m, 1.0, 8.0), (8.0, 8.0));
        let motifs = word_motifs(&WordbankConfig::default());
        for i in 0..motifs.len() {
            for j in i + 1..motifs.len() {
                assert!(hamming(&motifs[i].visual.poses, &motifs[j].visual.poses) >= 2);
            }
        }
    }

    #[test]
    fn vocabulary_is_unique() {
        let v = vocabulary(500).unwrap();
        assert_eq!(v.len(), 500);
    }

    #[test]
    fn motif_audio_is_deterministic_and_bounded() {
        let m = AudioMotif { tones: [400.0, 900.0, 1800.0] };
        let a = render_motif_audio(&m, 6400);
        assert_eq!(a, render_motif_audio(&m, 6400));
        assert!(a.iter().all(|v| v.abs() <= 0.3 + 1e-6));
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn segments_cover_the_clip() {
        let b = BoundarySpec::new(5, 14, CLIP_FRAMES).unwrap();
        let o = frame_segments(b);
        assert!(o[..5].iter().all(|&(w, _)| w == 0));
        assert!(o[5..14].iter().all(|&(w, _)| w == 1));
        assert!(o[14..].iter().all(|&(w, _)| w == 2));
        assert!(o.iter().all(|&(_, tau)| (0.0..1.0).contains(&tau)));
    }
}
