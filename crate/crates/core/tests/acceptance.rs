//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! run with `--nocapture` to see them.

use std::time::{Duration, Instant};

use fuzzyfuse::baseline::{log_loss, log_loss_gradient, train_logistic, LogisticConfig};
use fuzzyfuse::document::serialize_tree;
use fuzzyfuse::eval::{
    evaluate, export_heatmap, read_prompt_grid, select_prompt, EvalReport, LabelPredictor,
    MajorityVote, PromptGridRecord, SingleDetector,
};
use fuzzyfuse::oracle::{certify_tree, enumerate_all, expected_candidate_count};
use fuzzyfuse::rules::{extract_rules, rule_label};
use fuzzyfuse::simulate::{complementary_suite, DetectorClass, Suite};
use fuzzyfuse::tree::best_split;
use fuzzyfuse::{
    DetectorKind, DetectorMeta, FuzzyTree, Hyperparams, Label, SampleRecord, ScoreMatrix,
    SplitLabeling,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Outcome {
    check(
        elapsed < limit,
        String::new(),
        format!(
            "{what} took {:.2}s, limit {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ),
    )
}

fn random_instance(seed: u64) -> (ScoreMatrix, Hyperparams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=50);
    let m = rng.random_range(1..=4);
    let coarse = rng.random_bool(0.5);
    let registry: Vec<DetectorMeta> = (0..m)
        .map(|j| {
            if rng.random_bool(0.3) {
                DetectorMeta::binary(format!("d{j}"))
            } else {
                DetectorMeta::continuous(format!("d{j}"))
            }
        })
        .collect();
    let records = (0..n)
        .map(|i| SampleRecord {
            sample_id: format!("s{i}"),
            label: if rng.random_bool(0.5) {
                Label::Fake
            } else {
                Label::Real
            },
            benchmark: "b".into(),
            subset: "s".into(),
            scores: registry
                .iter()
                .map(|d| match d.kind {
                    DetectorKind::Binary => f64::from(u8::from(rng.random_bool(0.5))),
                    DetectorKind::Continuous if coarse => {
                        f64::from(rng.random_range(0..=10u8)) / 10.0
                    }
                    DetectorKind::Continuous => rng.random::<f64>(),
                })
                .collect(),
        })
        .collect();
    let hp = Hyperparams {
        max_split_models: rng.random_range(1..=3),
        min_samples: rng.random_range(0..=3),
        max_depth: 4,
        thr_grid_size: rng.random_range(2..=10),
        split_labeling: if rng.random_bool(0.75) {
            SplitLabeling::Majority
        } else {
            SplitLabeling::Fixed
        },
    };
    (ScoreMatrix::new(registry, records).unwrap(), hp)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut splits = 0;
    for seed in 0..100u64 {
        let (matrix, hp) = random_instance(seed);
        let all: Vec<usize> = (0..matrix.n_samples()).collect();
        let fast = best_split(&matrix, &all, &hp).map_err(|e| e.to_string())?;
        let report = enumerate_all(&matrix, &all, &hp).map_err(|e| e.to_string())?;
        let slow = report
            .top_qualifying(hp.min_samples)
            .map(|c| (c.config.clone(), c.gain));
        let same = match (&fast, &slow) {
            (None, None) => true,
            (Some((a, ga)), Some((b, gb))) => a == b && ga.to_bits() == gb.to_bits(),
            _ => false,
        };
        if !same {
            return Err(format!("seed {seed}: search {fast:?} vs oracle {slow:?}"));
        }
        splits += usize::from(fast.is_some());
    }
    within(start.elapsed(), Duration::from_secs(10), "100 instances")?;
    Ok(format!(
        "100 instances agree ({splits} with a split) in {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn certification(suite: &Suite) -> Outcome {
    let start = Instant::now();
    let variants = [
        Hyperparams::default(),
        Hyperparams {
            max_split_models: 2,
            min_samples: 20,
            max_depth: 3,
            thr_grid_size: 6,
            split_labeling: SplitLabeling::Majority,
        },
        Hyperparams {
            split_labeling: SplitLabeling::Fixed,
            ..Hyperparams::default()
        },
    ];
    let mut nodes = 0;
    for hp in &variants {
        let tree = FuzzyTree::grow(&suite.dev, hp).map_err(|e| e.to_string())?;
        let verdict = certify_tree(&tree, &suite.dev, hp).map_err(|e| e.to_string())?;
        if !verdict.passed() {
            return Err(format!("{hp:?}: {:?}", verdict.mismatches));
        }
        nodes += verdict.nodes_checked;
    }
    within(start.elapsed(), Duration::from_secs(5), "certification")?;
    Ok(format!(
        "{} trees, {nodes} nodes certified in {:.2}s",
        variants.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn default_config_bounds(suite: &Suite) -> Outcome {
    let hp = Hyperparams::default();
    if (
        hp.max_split_models,
        hp.min_samples,
        hp.max_depth,
        hp.thr_grid_size,
    ) != (3, 0, 4, 10)
    {
        return Err(format!("unexpected defaults {hp:?}"));
    }
    check(
        suite.dev.n_samples() == 2500 && suite.dev.n_detectors() == 6,
        String::new(),
        format!(
            "dev matrix is {}x{}",
            suite.dev.n_samples(),
            suite.dev.n_detectors()
        ),
    )?;
    let (tree, stats) = FuzzyTree::grow_with_stats(&suite.dev, &hp).map_err(|e| e.to_string())?;
    let expected = expected_candidate_count(6, 3, 10);
    check(
        expected == 1640,
        String::new(),
        format!("expected count {expected}"),
    )?;
    check(
        tree.depth() <= 4 && !stats.candidates_per_node.is_empty(),
        String::new(),
        format!("depth {}", tree.depth()),
    )?;
    check(
        stats.candidates_per_node.iter().all(|&c| c == 1640),
        format!(
            "depth {}, {} searched nodes x 1640 candidates",
            tree.depth(),
            stats.candidates_per_node.len()
        ),
        format!("candidate counts {:?}", stats.candidates_per_node),
    )
}

fn overall(p: &dyn LabelPredictor, suite: &Suite) -> f64 {
    evaluate(p, &suite.benches, None).unwrap().overall
}

fn complementarity(suites: &[Suite], trees: &[FuzzyTree], elapsed: Duration) -> Outcome {
    let mut wins = 0;
    let mut notes = Vec::new();
    for (seed, (suite, tree)) in suites.iter().zip(trees).enumerate() {
        let fused = overall(tree, suite);
        let best_single = (0..suite.dev.n_detectors())
            .map(|index| overall(&SingleDetector { index }, suite))
            .fold(f64::NEG_INFINITY, f64::max);
        let vote = overall(&MajorityVote, suite);
        let ok = fused >= best_single + 0.05 && fused >= vote + 0.01;
        wins += usize::from(ok);
        notes.push(format!(
            "seed {seed}: tree {:.2} single {:.2} vote {:.2}{}",
            100.0 * fused,
            100.0 * best_single,
            100.0 * vote,
            if ok { "" } else { " (miss)" }
        ));
    }
    within(elapsed, Duration::from_secs(30), "10 suites")?;
    check(
        wins >= 9,
        format!(
            "{wins}/10 seeds, {:.1}s; {}",
            elapsed.as_secs_f64(),
            notes.join("; ")
        ),
        format!("only {wins}/10 seeds: {}", notes.join("; ")),
    )
}

fn degradation(p: &dyn LabelPredictor, suite: &Suite, perturbed: &[ScoreMatrix]) -> f64 {
    let report = evaluate(p, &suite.benches, Some(perturbed)).unwrap();
    report.overall - report.robustness.unwrap()
}

fn robustness_ordering(suites: &[Suite], trees: &[FuzzyTree]) -> Outcome {
    let mut notes = Vec::new();
    for (seed, (suite, tree)) in suites.iter().zip(trees).enumerate() {
        let perturbed: Vec<ScoreMatrix> = suite
            .perturbed()
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(_, m)| m)
            .collect();
        let of_class = |class| -> Vec<usize> {
            (0..suite.profiles.len())
                .filter(|&i| suite.profiles[i].class == class)
                .collect()
        };
        let artifact = of_class(DetectorClass::Lightweight);
        let semantic = of_class(DetectorClass::Mllm);
        let best_artifact = *artifact
            .iter()
            .max_by(|&&a, &&b| {
                overall(&SingleDetector { index: a }, suite)
                    .total_cmp(&overall(&SingleDetector { index: b }, suite))
            })
            .unwrap();
        let tree_drop = degradation(tree, suite, &perturbed);
        let best_drop = degradation(
            &SingleDetector {
                index: best_artifact,
            },
            suite,
            &perturbed,
        );
        let min_artifact = artifact
            .iter()
            .map(|&index| degradation(&SingleDetector { index }, suite, &perturbed))
            .fold(f64::INFINITY, f64::min);
        let max_semantic = semantic
            .iter()
            .map(|&index| degradation(&SingleDetector { index }, suite, &perturbed))
            .fold(f64::NEG_INFINITY, f64::max);
        if tree_drop > best_drop {
            return Err(format!(
                "seed {seed}: tree drops {tree_drop:.4}, best artifact {best_drop:.4}"
            ));
        }
        if min_artifact <= max_semantic {
            return Err(format!(
                "seed {seed}: artifact drop {min_artifact:.4} not above semantic {max_semantic:.4}"
            ));
        }
        notes.push(format!("{tree_drop:.3}<={best_drop:.3}"));
    }
    Ok(format!(
        "tree vs best artifact drop over 10 seeds: {}",
        notes.join(" ")
    ))
}

fn rule_fidelity(suites: &[Suite], trees: &[FuzzyTree]) -> Outcome {
    let mut checked = 0usize;
    for (seed, (suite, tree)) in suites.iter().zip(trees).enumerate() {
        let rules = extract_rules(tree);
        let perturbed = suite.perturbed().map_err(|e| e.to_string())?;
        let matrices = std::iter::once(&suite.dev)
            .chain(&suite.benches)
            .chain(perturbed.iter().map(|(_, m)| m));
        for matrix in matrices {
            for i in 0..matrix.n_samples() {
                let x = matrix.scores(i);
                let by_tree = tree.predict(x).map_err(|e| e.to_string())?.label;
                let by_rules = rule_label(&rules, x).map_err(|e| e.to_string())?;
                if by_tree != by_rules {
                    return Err(format!(
                        "seed {seed}: mismatch on {}",
                        matrix.records()[i].sample_id
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} samples, 0 mismatches"))
}

fn pipeline(seed: u64) -> (String, String) {
    let suite = complementary_suite(seed).unwrap();
    let tree = FuzzyTree::grow(&suite.dev, &Hyperparams::default()).unwrap();
    let perturbed: Vec<ScoreMatrix> = suite
        .perturbed()
        .unwrap()
        .into_iter()
        .map(|(_, m)| m)
        .collect();
    let report = evaluate(&tree, &suite.benches, Some(&perturbed)).unwrap();
    (serialize_tree(&tree), report.to_json())
}

fn determinism() -> Outcome {
    let a = pipeline(42);
    let b = pipeline(42);
    check(
        a == b,
        format!(
            "tree document {} bytes, report {} bytes, identical",
            a.0.len(),
            a.1.len()
        ),
        "two runs differ".into(),
    )
}

fn metric_arithmetic() -> Outcome {
    let registry = vec![DetectorMeta::binary("d")];
    let records = |bench: &str, n: usize, correct: usize| -> Vec<SampleRecord> {
        (0..n)
            .map(|i| SampleRecord {
                sample_id: format!("{bench}{i}"),
                label: Label::Fake,
                benchmark: bench.into(),
                subset: "s".into(),
                scores: vec![if i < correct { 1.0 } else { 0.0 }],
            })
            .collect()
    };
    let a = ScoreMatrix::new(registry.clone(), records("a", 100, 90)).unwrap();
    let b = ScoreMatrix::new(registry, records("b", 300, 210)).unwrap();
    let r: EvalReport =
        evaluate(&SingleDetector { index: 0 }, &[a, b], None).map_err(|e| e.to_string())?;
    let ok = (r.overall - 0.75).abs() <= 1e-12
        && (r.avg - 0.80).abs() <= 1e-12
        && (r.std - 0.10).abs() <= 1e-12;
    check(
        ok,
        format!("overall {} avg {} std {}", r.overall, r.avg, r.std),
        format!("got overall {} avg {} std {}", r.overall, r.avg, r.std),
    )
}

fn logistic_gradient() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(5..=30);
        let m = rng.random_range(1..=5);
        let registry = (0..m)
            .map(|j| DetectorMeta::continuous(format!("d{j}")))
            .collect();
        let records = (0..n)
            .map(|i| SampleRecord {
                sample_id: format!("s{i}"),
                label: if i % 2 == 0 { Label::Fake } else { Label::Real },
                benchmark: "b".into(),
                subset: "s".into(),
                scores: (0..m).map(|_| rng.random::<f64>()).collect(),
            })
            .collect();
        let matrix = ScoreMatrix::new(registry, records).unwrap();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = rng.random_range(-1.0..1.0);

        let (gw, gb) = log_loss_gradient(&matrix, &w, b);
        let h = 1e-5;
        let mut numeric = Vec::with_capacity(m + 1);
        for j in 0..m {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            numeric.push((log_loss(&matrix, &up, b) - log_loss(&matrix, &down, b)) / (2.0 * h));
        }
        numeric.push((log_loss(&matrix, &w, b + h) - log_loss(&matrix, &w, b - h)) / (2.0 * h));
        let analytic: Vec<f64> = gw.iter().copied().chain([gb]).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        if rel > 1e-6 {
            return Err(format!("seed {seed}: relative error {rel:e}"));
        }

        let (_, trace) =
            train_logistic(&matrix, &LogisticConfig::default()).map_err(|e| e.to_string())?;
        if let Some(i) = trace.windows(2).position(|w| w[1] > w[0]) {
            return Err(format!("seed {seed}: loss rose at step {}", i + 1));
        }
    }
    Ok(format!(
        "20 instances, worst relative error {worst:.1e}, traces non-increasing"
    ))
}

fn prompt_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(168);
    let planted = (4u8, 6u8, 2u8);
    let mut grid = Vec::new();
    for s in 1..=6u8 {
        for q in 1..=7u8 {
            for o in 1..=4u8 {
                let accuracy = if (s, q, o) == planted {
                    0.951
                } else {
                    rng.random_range(0.5..0.95)
                };
                grid.push(PromptGridRecord {
                    system_idx: s,
                    question_idx: q,
                    output_idx: o,
                    accuracy,
                });
            }
        }
    }
    for i in (1..grid.len()).rev() {
        grid.swap(i, rng.random_range(0..=i));
    }
    let best = select_prompt(&grid).map_err(|e| e.to_string())?;
    if best.key() != planted {
        return Err(format!("selected {:?}", best.key()));
    }
    let csv = export_heatmap(&grid);
    let back = read_prompt_grid(csv.as_bytes()).map_err(|e| e.to_string())?;
    let mut sorted = grid.clone();
    sorted.sort_by_key(|r| r.key());
    let lossless = back.len() == 168
        && back
            .iter()
            .zip(&sorted)
            .all(|(a, b)| a.key() == b.key() && a.accuracy.to_bits() == b.accuracy.to_bits());
    check(
        lossless && export_heatmap(&back) == csv,
        format!(
            "planted {planted:?} selected from {} records; heatmap round-trips",
            grid.len()
        ),
        "heatmap round trip lost information".into(),
    )
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let suites: Vec<Suite> = (0..10)
        .map(|seed| complementary_suite(seed).unwrap())
        .collect();
    let trees: Vec<FuzzyTree> = suites
        .iter()
        .map(|s| FuzzyTree::grow(&s.dev, &Hyperparams::default()).unwrap())
        .collect();
    let suite_time = start.elapsed();
    let seed42 = complementary_suite(42).unwrap();

    let results: Vec<(&str, Outcome)> = vec![
        ("1 oracle equivalence", oracle_equivalence()),
        ("2 certification", certification(&seed42)),
        ("3 default-config bounds", default_config_bounds(&seed42)),
        ("4 complementarity", {
            let t = Instant::now();
            let outcome = complementarity(&suites, &trees, suite_time);
            outcome.and_then(|msg| {
                within(
                    suite_time + t.elapsed(),
                    Duration::from_secs(30),
                    "complementarity",
                )?;
                Ok(msg)
            })
        }),
        (
            "5 robustness ordering",
            robustness_ordering(&suites, &trees),
        ),
        ("6 rule fidelity", rule_fidelity(&suites, &trees)),
        ("7 determinism", determinism()),
        ("8 metric arithmetic", metric_arithmetic()),
        ("9 logistic baseline", logistic_gradient()),
        ("10 prompt grid", prompt_grid()),
    ];

    let mut failed = Vec::new();
    for (name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("PASS  criterion {name}: {msg}"),
            Err(msg) => {
                println!("FAIL  criterion {name}: {msg}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
