//! Cross-module flows: ingestion → filtering → agreement, and
//! generation → files → parsing → splitting.

use std::collections::BTreeSet;

use betarate::corpus::{
    self, AnnotationRecord, Benchmark, EvalInstance, FeedbackCode, FilterPolicy, Modality, Source,
};
use betarate::metrics::{krippendorff_alpha, AlphaLevel, ReliabilityMatrix};
use betarate::splits::{self, Partition};
use betarate::synth::{self, SynthConfig};

fn instance(id: &str, qid: &str, lalm: &str) -> EvalInstance {
    EvalInstance {
        instance_id: id.into(),
        question_id: qid.into(),
        benchmark: Benchmark::Mmau,
        modality: Modality::Sound,
        category: "events".into(),
        lalm_id: lalm.into(),
        question: format!("question {qid}"),
        reference_answer: "a dog barking".into(),
        rationale: "the clip contains barking".into(),
        transcript: String::new(),
        candidate_answer: format!("answer from {lalm}"),
    }
}

fn rated(id: &str, rater: &str, rating: u8) -> AnnotationRecord {
    AnnotationRecord {
        instance_id: id.into(),
        rater_id: rater.into(),
        source: Source::Human,
        rating: Some(rating),
        feedback: BTreeSet::new(),
        comment: String::new(),
    }
}

/// A bad question drags agreement down; question-level filtering removes all
/// of its instances and alpha recomputed on the remainder comes out higher.
#[test]
fn filtering_changes_recomputed_agreement() {
    // 10 instances: q1 has three (one flagged {Q}), q2..q8 one each.
    let mut instances = vec![
        instance("q1-a", "q1", "a"),
        instance("q1-b", "q1", "b"),
        instance("q1-c", "q1", "c"),
    ];
    for q in 2..=8 {
        instances.push(instance(&format!("q{q}-a"), &format!("q{q}"), "a"));
    }

    let mut records = Vec::new();
    // The ambiguous question collects scattered ratings.
    for (id, rs) in [("q1-a", [1u8, 5, 3]), ("q1-b", [5, 1, 4]), ("q1-c", [2, 5, 1])] {
        for (rater, r) in ["h1", "h2", "h3"].iter().zip(rs) {
            records.push(rated(id, rater, r));
        }
    }
    // The rest agree closely.
    for q in 2..=8 {
        let base = 1 + (q % 4) as u8;
        for (i, rater) in ["h1", "h2", "h3"].iter().enumerate() {
            let r = if i == 2 && q == 4 { base + 1 } else { base };
            records.push(rated(&format!("q{q}-a"), rater, r));
        }
    }
    // The flag rides on a feedback-only record.
    records.push(AnnotationRecord {
        instance_id: "q1-b".into(),
        rater_id: "h2".into(),
        source: Source::Human,
        rating: None,
        feedback: BTreeSet::from([FeedbackCode::Q]),
        comment: "question does not match the audio".into(),
    });

    let policy = FilterPolicy::default();
    assert!(policy.question_level && policy.exclude_codes.contains(&FeedbackCode::Q));
    let outcome = corpus::filter_flagged(&records, &instances, &policy).unwrap();
    assert_eq!(
        outcome.excluded,
        BTreeSet::from(["q1-a".to_string(), "q1-b".into(), "q1-c".into()])
    );
    assert_eq!(outcome.valid.len(), 7);

    let alpha_on = |keep: &dyn Fn(&str) -> bool| {
        let mut m = ReliabilityMatrix::new();
        for rec in &records {
            if let Some(r) = rec.rating {
                if keep(&rec.instance_id) {
                    m.insert(rec.rater_id.clone(), rec.instance_id.clone(), r as f64).unwrap();
                }
            }
        }
        krippendorff_alpha(&m, AlphaLevel::Interval).unwrap()
    };
    let before = alpha_on(&|_| true);
    let after = alpha_on(&|id| outcome.valid.contains(id));
    assert_ne!(before, after);
    assert!(after > before, "filtering should raise agreement: {before} -> {after}");
    assert!(after > 0.9, "remainder agrees closely: {after}");
}

/// Generator output survives the full file round trip and splits cleanly.
#[test]
fn synthetic_corpus_flows_through_files_and_splits() {
    let cfg = SynthConfig { n_questions: 60, seed: 17, ..SynthConfig::default() };
    let c = synth::generate(&cfg);

    let mut buf = Vec::new();
    corpus::write_records(&c.instances, &c.annotations, &mut buf).unwrap();
    let parsed = corpus::parse_records(buf.as_slice()).unwrap();
    assert!(parsed.report.warnings.is_empty());
    assert_eq!(parsed.instances, c.instances);
    assert_eq!(parsed.annotations, c.annotations);

    let sets = corpus::collect_rating_sets(&parsed.annotations, &FilterPolicy::default());
    assert_eq!(sets.len(), parsed.instances.len());

    let manifest = splits::stratified_split(&parsed.instances, 11).unwrap();
    // Question groups never straddle partitions.
    for inst in &parsed.instances {
        let p = manifest.assignment[&inst.instance_id];
        for other in &parsed.instances {
            if other.question_id == inst.question_id {
                assert_eq!(manifest.assignment[&other.instance_id], p);
            }
        }
    }
    let n_test = manifest.ids_in(Partition::Test).len();
    assert!(n_test > 0 && n_test < parsed.instances.len() / 5);

    // Assembled inputs keep the five-slot shape for every instance.
    for inst in &parsed.instances {
        let text = corpus::assemble_input(inst, "\n###\n", false, true, true);
        assert_eq!(text.matches("\n###\n").count(), 4);
    }
}
