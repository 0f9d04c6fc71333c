//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture`
//! to see every line.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use behavior_gap::analysis::{
    injection_result, split_by_alignment, stats, AlignmentObservation,
};
use behavior_gap::config::RunConfig;
use behavior_gap::corpus::{slice_contexts, Dialog, Speaker, Task, Turn};
use behavior_gap::gateway::DiskCache;
use behavior_gap::judge::{Aspect, ResponseScore};
use behavior_gap::label::LabelSet;
use behavior_gap::metrics;
use behavior_gap::pipeline::{Pipeline, REPORT_FILE};

fn check(name: &str, body: impl FnOnce()) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("criterion {name}: pass"),
        Err(err) => {
            println!("criterion {name}: FAIL");
            resume_unwind(err);
        }
    }
}

fn labels(rng: &mut ChaCha8Rng, universe: &[&str], max: usize) -> LabelSet {
    let k = rng.gen_range(0..=max);
    let mut picked = Vec::new();
    while picked.len() < k {
        let cand = universe[rng.gen_range(0..universe.len())];
        if !picked.contains(&cand) {
            picked.push(cand);
        }
    }
    LabelSet::new(picked)
}

#[test]
fn criterion_1_metric_oracle_equivalence() {
    check("1 (micro-F1 vs pooled-confusion oracle)", || {
        let universe = ["a", "b", "c", "d", "e", "f", "g"];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let start = Instant::now();
        for _ in 0..500 {
            let turns = rng.gen_range(1..=12);
            let pred: Vec<LabelSet> = (0..turns)
                .map(|_| labels(&mut rng, &universe, 5))
                .collect();
            let gold: Vec<LabelSet> = (0..turns)
                .map(|_| labels(&mut rng, &universe, 5))
                .collect();
            // brute-force oracle: recount every label of every turn
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (p, g) in pred.iter().zip(&gold) {
                for l in &p.labels {
                    if g.labels.contains(l) {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
                for l in &g.labels {
                    if !p.labels.contains(l) {
                        fn_ += 1;
                    }
                }
            }
            let oracle = if tp + fp + fn_ == 0 {
                1.0
            } else {
                2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64)
            };
            let f1 = metrics::micro_f1(&pred, &gold).unwrap();
            assert_eq!(f1, oracle);
            assert_eq!(metrics::discrepancy(&pred, &gold).unwrap(), 1.0 - oracle);
        }
        assert!(start.elapsed().as_secs_f64() < 5.0);
    });
}

#[test]
fn criterion_2_complexity_closed_forms() {
    check("2 (complexity closed forms)", || {
        let c = metrics::DEFAULT_TURN_COUNT_C;
        for (t, want) in [(14.7, 0.3977), (35.6, 0.5185), (120.2, 0.6832)] {
            assert!((metrics::normalized_turn_count(t, c) - want).abs() < 1e-3);
        }
        assert_eq!(metrics::act_diversity(3.0, 11).unwrap(), 3.0 / 11.0);
        // composite on a corpus with known shape: t = 4, d = 2
        let dialog = Dialog {
            id: "c2".into(),
            task: Task::Custom,
            turns: vec![
                turn(0, Speaker::User, "hello there"),
                turn(1, Speaker::HumanExpert, "hi, how can i help"),
                turn(2, Speaker::User, "never mind"),
                turn(3, Speaker::HumanExpert, "goodbye then"),
            ],
            success_label: None,
        };
        let mut iso = BTreeMap::new();
        iso.insert(("c2".to_string(), 1), LabelSet::new(["salutation", "set_q"]));
        iso.insert(("c2".to_string(), 3), LabelSet::new(["salutation"]));
        let score = metrics::task_complexity(&[dialog], &iso, c, 11).unwrap();
        let ntc = metrics::normalized_turn_count(4.0, c);
        assert_eq!(score.normalized_turn_count, ntc);
        assert_eq!(score.act_diversity, 2.0 / 11.0);
        assert_eq!(score.composite, (ntc + 2.0 / 11.0) / 2.0);
    });
}

#[test]
fn criterion_3_knowledge_metrics() {
    check("3 (knowledge metrics, 20 cases)", || {
        let rouge_cases: [(&str, &str, f64); 10] = [
            ("the hotel is nice", "the hotel is nice", 1.0),
            ("the the the", "the", 1.0 / 3.0), // clipping
            ("a b c d", "a b", 0.5),
            ("x y", "a b", 0.0),
            ("a", "a a a", 1.0),
            ("a b a b", "a b", 0.5),
            ("cheap chinese food", "chinese food cheap", 1.0),
            ("one two three four five", "five", 0.2),
            ("a a b", "a b b", 2.0 / 3.0),
            ("hello world", "world hello world", 1.0),
        ];
        for (resp, knowledge, want) in rouge_cases {
            assert_eq!(metrics::rouge1_precision(resp, knowledge), want);
        }
        let compression_cases: [(usize, usize, Option<f64>); 10] = [
            (5, 10, Some(0.5)),
            (3, 2, Some(-0.5)), // response longer than its knowledge
            (0, 4, Some(1.0)),
            (4, 4, Some(0.0)),
            (7, 0, None),
            (1, 4, Some(0.75)),
            (2, 3, Some(1.0 - 2.0 / 3.0)),
            (6, 8, Some(0.25)),
            (8, 2, Some(-3.0)),
            (5, 8, Some(0.375)),
        ];
        for (resp, knowledge, want) in compression_cases {
            assert_eq!(metrics::compression_ratio(resp, knowledge), want);
        }
        // both metrics ignore knowledge token order
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let knowledge = "gonville hotel centre three stars expensive parking internet";
        let response = "the gonville has three stars and parking";
        let base = metrics::rouge1_precision(response, knowledge);
        let mut tokens: Vec<&str> = knowledge.split_whitespace().collect();
        for _ in 0..5 {
            for i in (1..tokens.len()).rev() {
                tokens.swap(i, rng.gen_range(0..=i));
            }
            let shuffled = tokens.join(" ");
            assert_eq!(metrics::rouge1_precision(response, &shuffled), base);
        }
    });
}

fn turn(index: usize, speaker: Speaker, text: &str) -> Turn {
    Turn {
        index,
        speaker,
        text: text.to_string(),
        gold_acts: None,
        gold_tools: None,
    }
}

#[test]
fn criterion_4_teacher_forcing() {
    check("4 (teacher-forcing slices)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..50 {
            // every fifth dialog opens with the expert, like an outbound
            // support call
            let expert_first = i % 5 == 0;
            let len = rng.gen_range(2..=10);
            let turns: Vec<Turn> = (0..len)
                .map(|j| {
                    let expert = (j % 2 == 0) == expert_first;
                    let speaker = if expert {
                        Speaker::HumanExpert
                    } else {
                        Speaker::User
                    };
                    turn(j, speaker, &format!("utterance {i} {j}"))
                })
                .collect();
            let dialog = Dialog {
                id: format!("d{i}"),
                task: Task::Pcs,
                turns,
                success_label: None,
            };
            let slices = slice_contexts(&dialog);
            assert_eq!(slices.len(), dialog.expert_turn_count());
            for slice in &slices {
                assert_eq!(slice.context, dialog.turns[..slice.target_index]);
                let target = &dialog.turns[slice.target_index];
                assert_eq!(target.speaker, Speaker::HumanExpert);
                assert_eq!(slice.reference_response, target.text);
            }
            if expert_first {
                assert!(slices[0].context.is_empty());
            }
        }
    });
}

fn toy_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), &dest).unwrap();
        }
    }
}

fn run_toy_pipeline(dir: &Path) -> RunConfig {
    copy_dir(&toy_data_dir(), dir);
    let config = RunConfig::load(&dir.join("run.toml")).unwrap();
    let pipeline = Pipeline::new(config.clone(), false);
    pipeline.ingest(None).unwrap();
    pipeline.generate().unwrap();
    pipeline.annotate().unwrap();
    pipeline.judge().unwrap();
    pipeline.inject().unwrap();
    pipeline.analyze().unwrap();
    config
}

#[test]
fn criterion_5_end_to_end_determinism() {
    check("5 (end-to-end determinism and cache shape)", || {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let config = run_toy_pipeline(a.path());
        run_toy_pipeline(b.path());
        let report_a = std::fs::read(config.out_dir.join(REPORT_FILE)).unwrap();
        let report_b = std::fs::read(b.path().join("out").join(REPORT_FILE)).unwrap();
        assert!(!report_a.is_empty());
        assert_eq!(
            String::from_utf8_lossy(&report_a),
            String::from_utf8_lossy(&report_b)
        );

        // injected requests must differ from their baseline counterparts
        // only in the system prompt
        let cache = DiskCache::new(config.cache_dir.clone());
        let entries = cache.entries().unwrap();
        let injected: Vec<_> = entries
            .iter()
            .filter(|e| e.request.system_prompt.contains("***Behavior Directive***"))
            .collect();
        assert!(!injected.is_empty());
        for inj in &injected {
            let baseline = entries
                .iter()
                .find(|e| {
                    !e.request.system_prompt.contains("***Behavior Directive***")
                        && e.request.messages == inj.request.messages
                        && e.request.tool_schemas == inj.request.tool_schemas
                        && e.request.model_id == inj.request.model_id
                        && e.request.temperature == inj.request.temperature
                })
                .expect("baseline counterpart in cache");
            let suffix = inj
                .request
                .system_prompt
                .strip_prefix(&baseline.request.system_prompt)
                .expect("injected system prompt extends the baseline one");
            assert!(suffix.starts_with("\n***Behavior Directive***\n"));
        }
    });
}

#[test]
fn criterion_6_statistics_oracle() {
    check("6 (statistics vs frozen oracle)", || {
        #[derive(serde::Deserialize)]
        struct WelchCase {
            a: Vec<f64>,
            b: Vec<f64>,
            t: f64,
        }
        #[derive(serde::Deserialize)]
        struct LogRatioCase {
            pairs: Vec<(f64, f64)>,
            t: f64,
        }
        #[derive(serde::Deserialize)]
        struct Oracle {
            welch: Vec<WelchCase>,
            log_ratio: Vec<LogRatioCase>,
        }
        let raw = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/stat_oracle.json"),
        )
        .unwrap();
        let oracle: Oracle = serde_json::from_str(&raw).unwrap();
        assert_eq!(oracle.welch.len(), 100);
        assert_eq!(oracle.log_ratio.len(), 100);
        for case in &oracle.welch {
            let got = stats::welch_t_test(&case.a, &case.b).unwrap();
            assert!((got.t - case.t).abs() < 1e-6, "welch t {} vs {}", got.t, case.t);
        }
        for case in &oracle.log_ratio {
            let got = stats::log_ratio_t_test(&case.pairs).unwrap();
            assert!((got.t - case.t).abs() < 1e-6, "ratio t {} vs {}", got.t, case.t);
        }
        // bootstrap width vs the CLT interval for N(0,1), n = 1000
        let sample = stats::seeded_standard_normal(1000, 6);
        let (lo, hi) = stats::bootstrap_ci(&sample, 2000, 6).unwrap();
        let clt = 2.0 * 1.96 / (1000f64).sqrt();
        assert!(((hi - lo) - clt).abs() / clt < 0.15);
        // exact linear data pins the correlation to the endpoints
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let up: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -3.0 * v + 4.0).collect();
        assert!((stats::pearson_r(&x, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((stats::pearson_r(&x, &down).unwrap() + 1.0).abs() < 1e-12);
    });
}

fn score(v: u8) -> ResponseScore {
    ResponseScore {
        coherence: v,
        specificity: v,
        satisfaction: v,
        effectiveness: v,
        reasoning: BTreeMap::new(),
    }
}

#[test]
fn criterion_7_alignment_split_direction() {
    check("7 (alignment split direction)", || {
        let mut records = Vec::new();
        for _ in 0..30 {
            records.push(AlignmentObservation {
                agent: LabelSet::new(["inform"]),
                human: LabelSet::new(["inform"]),
                score: score(4),
            });
            records.push(AlignmentObservation {
                agent: LabelSet::new(["greet"]),
                human: LabelSet::new(["book"]),
                score: score(2),
            });
        }
        let split = split_by_alignment(&records, 0.5);
        assert_eq!(split.aligned_count, 30);
        assert_eq!(split.misaligned_count, 30);
        for aspect in Aspect::ALL {
            let cell = &split.per_aspect[&aspect];
            assert_eq!(cell.aligned_mean, Some(4.0));
            assert_eq!(cell.misaligned_mean, Some(2.0));
            assert!(cell.p.unwrap() < 0.001);
        }
    });
}

#[test]
fn criterion_8_injection_mechanics() {
    check("8 (injection mechanics)", || {
        // null intervention: injected responses scored identically
        let null: Vec<_> = (0..10).map(|i| (score(2 + i % 3), score(2 + i % 3))).collect();
        let result = injection_result(&null).unwrap();
        for aspect in Aspect::ALL {
            assert_eq!(result[&aspect].improvement_pct, 0.0);
            assert_eq!(result[&aspect].p_value, 0.5);
        }
        // constructed improvement: every pair gains at least one point
        let better: Vec<_> = (0..10)
            .map(|i| (score(4 + (i % 2) as u8), score(2 + (i % 3) as u8)))
            .collect();
        let result = injection_result(&better).unwrap();
        for aspect in Aspect::ALL {
            assert!(result[&aspect].improvement_pct > 0.0);
            assert!(result[&aspect].p_value < 0.01);
        }
    });
}

#[test]
fn criterion_9_provider_dependent_targets_declared() {
    check(
        "9 (provider-dependent numbers declared as configured targets)",
        || {
            let dir = tempfile::tempdir().unwrap();
            let config = run_toy_pipeline(dir.path());
            let report: serde_json::Value = serde_json::from_str(
                &std::fs::read_to_string(config.out_dir.join(REPORT_FILE)).unwrap(),
            )
            .unwrap();
            let targets = report["targets"].as_object().unwrap();
            for (key, want) in [
                ("act_classifier_micro_f1", 0.771),
                ("act_classifier_iso_micro_f1", 0.745),
                ("tool_classifier_multiwoz_micro_f1", 0.893),
                ("tool_classifier_spokenwoz_micro_f1", 0.898),
                ("tool_classifier_pcs_micro_f1", 0.748),
                ("act_gap_pcs", 0.464),
                ("tool_gap_pcs", 0.139),
                ("complexity_gap_correlation", 0.963),
                ("act_injection_improvement_pct", 22.4),
                ("tool_injection_improvement_pct", 26.3),
            ] {
                assert_eq!(targets[key].as_f64().unwrap(), want);
            }
            // measured analogues live beside the targets in the same report
            assert!(report["gaps"]["acts"]["discrepancy"].is_number());
            assert!(report["injection"]["coherence"]["improvement_pct"].is_number());
        },
    );
}
