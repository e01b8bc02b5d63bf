//! Seeded synthetic topic-cluster world: corpus, STS pairs and probe labels.
//!
//! K topics each own a keyword vocabulary; sentences mix topic keywords with
//! a shared filler pool. STS gold is graded topic overlap: same topic lands
//! in the high band, different topics in the low band, with seeded noise
//! inside the band. Probe label = topic id. Same seed, byte-identical files.

use anyhow::{bail, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const SAME_TOPIC_BAND: (f64, f64) = (3.5, 5.0);
pub const DIFF_TOPIC_BAND: (f64, f64) = (0.0, 1.5);

pub const MIN_CORPUS: usize = 64;
pub const MIN_STS: usize = 50;
pub const MIN_PROBE: usize = 100;

#[derive(Debug, Clone, Copy)]
pub struct SynthSizes {
    pub corpus: usize,
    pub sts: usize,
    pub probe: usize,
}

impl Default for SynthSizes {
    fn default() -> Self {
        SynthSizes {
            corpus: 1024,
            sts: 300,
            probe: 400,
        }
    }
}

const TOPICS: usize = 8;
const KEYWORDS_PER_TOPIC: usize = 12;
const FILLER_WORDS: usize = 40;
const SENT_MIN_LEN: usize = 8;
const SENT_MAX_LEN: usize = 14;
/// Fraction of tokens drawn from the sentence's topic keywords.
const KEYWORD_FRACTION: f64 = 0.7;

struct World {
    topics: Vec<Vec<String>>,
    filler: Vec<String>,
}

fn build_world() -> World {
    let topics = (0..TOPICS)
        .map(|t| {
            (0..KEYWORDS_PER_TOPIC)
                .map(|k| format!("topic{t}kw{k}"))
                .collect()
        })
        .collect();
    let filler = (0..FILLER_WORDS).map(|i| format!("fill{i:02}")).collect();
    World { topics, filler }
}

fn sample_sentence(world: &World, topic: usize, rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(SENT_MIN_LEN..=SENT_MAX_LEN);
    let words: Vec<&str> = (0..len)
        .map(|_| {
            if rng.gen::<f64>() < KEYWORD_FRACTION {
                world.topics[topic][rng.gen_range(0..KEYWORDS_PER_TOPIC)].as_str()
            } else {
                world.filler[rng.gen_range(0..FILLER_WORDS)].as_str()
            }
        })
        .collect();
    words.join(" ")
}

pub struct SynthData {
    pub corpus: Vec<String>,
    pub sts: Vec<(String, String, f64)>,
    pub probe: Vec<(usize, String)>,
}

pub fn generate(seed: u64, sizes: SynthSizes) -> Result<SynthData> {
    if sizes.corpus < MIN_CORPUS {
        bail!("corpus size {} below minimum {}", sizes.corpus, MIN_CORPUS);
    }
    if sizes.sts < MIN_STS {
        bail!("sts size {} below minimum {}", sizes.sts, MIN_STS);
    }
    if sizes.probe < MIN_PROBE {
        bail!("probe size {} below minimum {}", sizes.probe, MIN_PROBE);
    }
    let world = build_world();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let corpus: Vec<String> = (0..sizes.corpus)
        .map(|i| sample_sentence(&world, i % TOPICS, &mut rng))
        .collect();

    let sts: Vec<(String, String, f64)> = (0..sizes.sts)
        .map(|i| {
            let same = i % 2 == 0;
            let ta = rng.gen_range(0..TOPICS);
            let tb = if same {
                ta
            } else {
                (ta + rng.gen_range(1..TOPICS)) % TOPICS
            };
            let band = if same { SAME_TOPIC_BAND } else { DIFF_TOPIC_BAND };
            let gold = rng.gen_range(band.0..band.1);
            (
                sample_sentence(&world, ta, &mut rng),
                sample_sentence(&world, tb, &mut rng),
                gold,
            )
        })
        .collect();

    let probe: Vec<(usize, String)> = (0..sizes.probe)
        .map(|i| {
            let t = i % TOPICS;
            (t, sample_sentence(&world, t, &mut rng))
        })
        .collect();

    Ok(SynthData { corpus, sts, probe })
}

/// Writes corpus.txt, sts.tsv and probe.tsv into `dir`.
pub fn write_files(data: &SynthData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let corpus = data.corpus.join("\n") + "\n";
    std::fs::write(dir.join("corpus.txt"), corpus)?;
    let sts: String = data
        .sts
        .iter()
        .map(|(a, b, g)| format!("{a}\t{b}\t{g}\n"))
        .collect();
    std::fs::write(dir.join("sts.tsv"), sts)?;
    let probe: String = data
        .probe
        .iter()
        .map(|(l, s)| format!("{l}\t{s}\n"))
        .collect();
    std::fs::write(dir.join("probe.tsv"), probe)?;
    Ok(())
}
