//! Deterministic synthetic corpus with a known recoverable signal: reference
//! answers draw from a content vocabulary, candidate answers mix reference
//! words with distractors, and the candidate/reference word-overlap fraction
//! drives every simulated rating.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{AnnotationRecord, Benchmark, EvalInstance, FeedbackCode, Modality, Source};

/// Words that may appear in reference answers (and hence in overlapping
/// candidate words).
const CONTENT_VOCAB: &[&str] = &[
    "dog", "barking", "thunder", "rain", "melody", "violin", "drum", "tempo", "child", "laughing",
    "crowd", "cheering", "engine", "humming", "birds", "chirping", "wind", "waves", "crashing",
    "door", "creaking", "bell", "ringing", "guitar", "chord", "piano", "whistle", "echo", "siren",
    "wailing", "footsteps", "gravel", "rustling", "leaves", "applause", "murmur", "conversation",
    "muffled", "alarm", "beeping", "stream", "trickling", "horse", "galloping", "cat", "purring",
    "glass", "shattering", "paper", "tearing", "clock", "ticking", "phone", "buzzing", "kettle",
    "hissing", "choir", "harmony", "trumpet", "flute",
];

/// Words that never appear in any reference answer; a candidate word from
/// this pool is always a miss.
const DISTRACTOR_VOCAB: &[&str] = &[
    "ledger", "purple", "quantum", "velvet", "orbit", "crayon", "lantern", "pickle", "nomad",
    "tundra", "saffron", "trellis", "goblet", "prairie", "mosaic", "ember", "cobalt", "drizzle",
    "marble", "thimble", "walnut", "parka", "sundial", "bramble", "copper", "meadow", "anchor",
    "pigment", "satchel", "juniper", "gondola", "turbine", "falcon", "hexagon", "lichen",
    "pendulum", "quartz", "ribbon", "sapphire", "tarpaulin",
];

const REFERENCE_WORDS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_questions: usize,
    pub candidates_per_question: usize,
    pub n_lalms: usize,
    /// Inclusive range of simulated raters per instance.
    pub min_raters: usize,
    pub max_raters: usize,
    /// Gaussian noise added to the overlap fraction before discretization.
    pub noise_sigma: f64,
    /// Fraction of annotations replaced by a random rating plus a quality
    /// flag, for exercising the filtering pipeline.
    pub flag_fraction: f64,
    /// How many of the built-in content words to draw references from.
    /// Smaller pools make word statistics denser at a fixed corpus size.
    pub content_vocab_size: usize,
    /// How many of the built-in distractor words candidates may use.
    pub distractor_vocab_size: usize,
    /// Pool of overlap hit counts (0..=8) that candidates draw from,
    /// uniformly with multiplicity; None means uniform over 0..=8.
    /// Shapes the quality mix of the simulated systems.
    pub overlap_choices: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_questions: 500,
            candidates_per_question: 4,
            n_lalms: 15,
            min_raters: 3,
            max_raters: 5,
            noise_sigma: 0.1,
            flag_fraction: 0.0,
            content_vocab_size: CONTENT_VOCAB.len(),
            distractor_vocab_size: DISTRACTOR_VOCAB.len(),
            overlap_choices: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub instances: Vec<EvalInstance>,
    pub annotations: Vec<AnnotationRecord>,
    /// Ground-truth overlap fraction per instance id.
    pub overlap: BTreeMap<String, f64>,
}

/// A 1–5 rating from overlap fraction `o`: round(1 + 4·clip(o + ε, 0, 1))
/// with ε ~ N(0, σ).
pub fn rate(o: f64, sigma: f64, rng: &mut impl Rng) -> u8 {
    let noise = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma is finite and non-negative").sample(rng)
    } else {
        0.0
    };
    (1.0 + 4.0 * (o + noise).clamp(0.0, 1.0)).round() as u8
}

fn modality_category(question_idx: usize) -> (Modality, &'static str) {
    let modality = match question_idx % 3 {
        0 => Modality::Speech,
        1 => Modality::Sound,
        _ => Modality::Music,
    };
    let category = match (modality, question_idx % 2) {
        (Modality::Speech, 0) => "conversation",
        (Modality::Speech, _) => "narration",
        (Modality::Sound, 0) => "ambient",
        (Modality::Sound, _) => "events",
        (Modality::Music, 0) => "instruments",
        _ => "structure",
    };
    (modality, category)
}

impl SynthConfig {
    /// The bounds `generate` requires, as an error for callers that take
    /// configs from user input.
    pub fn validate(&self) -> Result<(), String> {
        if self.n_lalms < self.candidates_per_question {
            return Err("not enough systems per question".into());
        }
        if self.min_raters < 1 || self.min_raters > self.max_raters {
            return Err("rater range must satisfy 1 <= min <= max".into());
        }
        if self.content_vocab_size < REFERENCE_WORDS
            || self.content_vocab_size > CONTENT_VOCAB.len()
        {
            return Err(format!(
                "content vocab size must be in {}..={}",
                REFERENCE_WORDS,
                CONTENT_VOCAB.len()
            ));
        }
        if self.distractor_vocab_size < REFERENCE_WORDS
            || self.distractor_vocab_size > DISTRACTOR_VOCAB.len()
        {
            return Err(format!(
                "distractor vocab size must be in {}..={}",
                REFERENCE_WORDS,
                DISTRACTOR_VOCAB.len()
            ));
        }
        if let Some(pool) = &self.overlap_choices {
            if pool.is_empty() {
                return Err("overlap pool must be non-empty".into());
            }
            if pool.iter().any(|&h| h > REFERENCE_WORDS) {
                return Err("overlap hits exceed reference length".into());
            }
        }
        Ok(())
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    cfg.validate().expect("invalid synth config");
    let content_pool = &CONTENT_VOCAB[..cfg.content_vocab_size];
    let distractor_pool = &DISTRACTOR_VOCAB[..cfg.distractor_vocab_size];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lalm_ids: Vec<String> = (0..cfg.n_lalms).map(|i| format!("lalm{i:02}")).collect();

    let mut instances = Vec::new();
    let mut annotations = Vec::new();
    let mut overlap = BTreeMap::new();

    for qi in 0..cfg.n_questions {
        let question_id = format!("q{qi:04}");
        let (modality, category) = modality_category(qi);
        let benchmark = if qi % 2 == 0 { Benchmark::Mmau } else { Benchmark::Mmar };

        let mut reference: Vec<&str> = content_pool
            .choose_multiple(&mut rng, REFERENCE_WORDS)
            .copied()
            .collect();
        reference.shuffle(&mut rng);
        let question = format!("what is heard in recording {qi}");
        let rationale = format!("the audio clearly contains {} and {}", reference[0], reference[1]);

        let mut systems = lalm_ids.clone();
        systems.shuffle(&mut rng);
        systems.truncate(cfg.candidates_per_question);
        systems.sort();

        for lalm_id in systems {
            let instance_id = format!("{question_id}-{lalm_id}");
            let hits = match &cfg.overlap_choices {
                Some(pool) => *pool.choose(&mut rng).expect("pool is non-empty"),
                None => rng.gen_range(0..=REFERENCE_WORDS),
            };
            let o = hits as f64 / REFERENCE_WORDS as f64;

            let mut words: Vec<&str> = reference
                .choose_multiple(&mut rng, hits)
                .copied()
                .chain(
                    distractor_pool
                        .choose_multiple(&mut rng, REFERENCE_WORDS - hits)
                        .copied(),
                )
                .collect();
            words.shuffle(&mut rng);

            instances.push(EvalInstance {
                instance_id: instance_id.clone(),
                question_id: question_id.clone(),
                benchmark: benchmark.clone(),
                modality,
                category: category.to_string(),
                lalm_id,
                question: question.clone(),
                reference_answer: reference.join(" "),
                rationale: rationale.clone(),
                transcript: String::new(),
                candidate_answer: words.join(" "),
            });

            let n_raters = rng.gen_range(cfg.min_raters..=cfg.max_raters);
            for r in 0..n_raters {
                let corrupted = cfg.flag_fraction > 0.0 && rng.gen::<f64>() < cfg.flag_fraction;
                let (rating, feedback) = if corrupted {
                    let code = [FeedbackCode::Q, FeedbackCode::A, FeedbackCode::R]
                        [rng.gen_range(0..3)];
                    (rng.gen_range(1..=5), std::iter::once(code).collect())
                } else {
                    (rate(o, cfg.noise_sigma, &mut rng), Default::default())
                };
                annotations.push(AnnotationRecord {
                    instance_id: instance_id.clone(),
                    rater_id: format!("h{}", r + 1),
                    source: Source::Human,
                    rating: Some(rating),
                    feedback,
                    comment: String::new(),
                });
            }
            overlap.insert(instance_id, o);
        }
    }

    SynthCorpus { instances, annotations, overlap }
}

/// One rating per instance from a simulated automatic judge with its own
/// noise level; several calls with distinct ids build a multi-judge set.
pub fn judge_annotations(
    overlap: &BTreeMap<String, f64>,
    judge_id: &str,
    sigma: f64,
    seed: u64,
) -> Vec<AnnotationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    overlap
        .iter()
        .map(|(instance_id, &o)| AnnotationRecord {
            instance_id: instance_id.clone(),
            rater_id: judge_id.to_string(),
            source: Source::Judge(judge_id.to_string()),
            rating: Some(rate(o, sigma, &mut rng)),
            feedback: Default::default(),
            comment: String::new(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn vocabularies_are_disjoint_and_distinct() {
        let content: std::collections::BTreeSet<_> = CONTENT_VOCAB.iter().collect();
        let distract: std::collections::BTreeSet<_> = DISTRACTOR_VOCAB.iter().collect();
        assert_eq!(content.len(), CONTENT_VOCAB.len());
        assert_eq!(distract.len(), DISTRACTOR_VOCAB.len());
        assert!(content.is_disjoint(&distract));
    }

    #[test]
    fn rate_spans_the_scale_and_respects_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(rate(0.0, 0.0, &mut rng), 1);
        assert_eq!(rate(1.0, 0.0, &mut rng), 5);
        assert_eq!(rate(0.5, 0.0, &mut rng), 3);
        for _ in 0..200 {
            let r = rate(rng.gen_range(0.0..1.0), 0.2, &mut rng);
            assert!((1..=5).contains(&r));
        }
    }

    #[test]
    fn generation_is_deterministic_and_well_formed() {
        let cfg = SynthConfig { n_questions: 30, seed: 7, ..SynthConfig::default() };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.instances, b.instances);
        assert_eq!(a.annotations, b.annotations);
        assert_eq!(a.instances.len(), 120);

        let mut buf_a = Vec::new();
        corpus::write_records(&a.instances, &a.annotations, &mut buf_a).unwrap();
        let mut buf_b = Vec::new();
        corpus::write_records(&b.instances, &b.annotations, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);

        // Round-trips through the corpus parser without warnings or errors.
        let parsed = corpus::parse_records(buf_a.as_slice()).unwrap();
        assert_eq!(parsed.instances.len(), a.instances.len());
        assert_eq!(parsed.annotations.len(), a.annotations.len());
        assert!(parsed.report.line_errors.is_empty());

        for inst in &a.instances {
            assert_eq!(inst.reference_answer.split_whitespace().count(), REFERENCE_WORDS);
            assert_eq!(inst.candidate_answer.split_whitespace().count(), REFERENCE_WORDS);
        }
    }

    #[test]
    fn overlap_matches_candidate_content_exactly() {
        let cfg = SynthConfig { n_questions: 40, seed: 3, ..SynthConfig::default() };
        let c = generate(&cfg);
        for inst in &c.instances {
            let reference: std::collections::BTreeSet<&str> =
                inst.reference_answer.split_whitespace().collect();
            let shared = inst
                .candidate_answer
                .split_whitespace()
                .filter(|w| reference.contains(w))
                .count();
            let o = shared as f64 / REFERENCE_WORDS as f64;
            assert_eq!(o, c.overlap[&inst.instance_id]);
        }
    }

    #[test]
    fn ratings_track_overlap() {
        let cfg = SynthConfig { n_questions: 120, seed: 11, ..SynthConfig::default() };
        let c = generate(&cfg);
        let sets = corpus::collect_rating_sets(&c.annotations, &Default::default());
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for (id, rs) in &sets {
            let (mean, _) = corpus::rating_stats_normalized(rs).unwrap();
            if c.overlap[id] <= 0.25 {
                lo.push(mean);
            } else if c.overlap[id] >= 0.75 {
                hi.push(mean);
            }
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(avg(&hi) > avg(&lo) + 0.3, "{} vs {}", avg(&hi), avg(&lo));
    }

    #[test]
    fn flagged_fraction_produces_flags() {
        let cfg = SynthConfig {
            n_questions: 50,
            flag_fraction: 0.2,
            seed: 5,
            ..SynthConfig::default()
        };
        let c = generate(&cfg);
        let flagged = c.annotations.iter().filter(|a| !a.feedback.is_empty()).count();
        let frac = flagged as f64 / c.annotations.len() as f64;
        assert!((0.1..0.3).contains(&frac), "flag fraction {frac}");
    }

    #[test]
    fn judge_annotations_cover_every_instance_once() {
        let cfg = SynthConfig { n_questions: 20, seed: 2, ..SynthConfig::default() };
        let c = generate(&cfg);
        let judged = judge_annotations(&c.overlap, "judge-a", 0.2, 9);
        assert_eq!(judged.len(), c.instances.len());
        for (rec, inst) in judged.iter().zip(&c.instances) {
            assert_eq!(rec.instance_id, inst.instance_id);
            assert_eq!(rec.source, Source::Judge("judge-a".into()));
            assert!((1..=5).contains(&rec.rating.unwrap()));
        }
        assert_eq!(judged, judge_annotations(&c.overlap, "judge-a", 0.2, 9));
    }
}
