//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! Runs without the libtest harness so the long training criteria can share
//! runs and execute strictly one after another.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flexssl::cpl::{map_effect, Confidence, CurriculumConfig, CurriculumState, Mapping};
use flexssl::datagen::{make_synthetic, split, split_fully_labeled, SplitDataset, SyntheticKind};
use flexssl::metrics::{evaluate_probabilities, mean_std, summarize, Evaluation, MetricsRecord};
use flexssl::numkit::{cosine_lr, log_softmax, softmax, Matrix, Mlp};
use flexssl::sslloss::{class_balance_loss, cross_entropy, AlgorithmSpec, Target};
use flexssl::trainer::{train, train_with_curriculum, RunArtifact, TrainConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1. Gradient oracle.

fn ce_loss(model: &Mlp, x: &Matrix, y: &[usize]) -> f64 {
    let lp = log_softmax(&model.forward(x, false).unwrap());
    -y.iter().enumerate().map(|(r, &c)| lp.get(r, c)).sum::<f64>() / y.len() as f64
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let h = 1e-5;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=4)];
        for _ in 1..depth {
            sizes.push(rng.random_range(2..=8));
        }
        let classes = rng.random_range(2..=5);
        sizes.push(classes);
        let mut model = Mlp::new(&sizes, case).unwrap();
        // Non-zero biases so every parameter kind is exercised.
        for b in model.params_mut().biases.iter_mut() {
            b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let n = rng.random_range(1..=6);
        let x = Matrix::from_vec(n, sizes[0], (0..n * sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();

        let tape = model.forward_tape(&x).unwrap();
        let mut g = softmax(tape.logits().unwrap());
        for (r, &c) in y.iter().enumerate() {
            let row = g.row_mut(r);
            row[c] -= 1.0;
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
        let analytic = model.backward(&tape, &g).unwrap().flatten();

        let mut t = 0;
        for ti in 0..model.params().tensors().count() {
            let len = model.params().tensors().nth(ti).unwrap().data().len();
            for k in 0..len {
                let shift = |m: &mut Mlp, d: f64| {
                    m.params_mut().tensors_mut().nth(ti).unwrap().data_mut()[k] += d;
                };
                let mut up = model.clone();
                shift(&mut up, h);
                let mut dn = model.clone();
                shift(&mut dn, -h);
                let fd = (ce_loss(&up, &x, &y) - ce_loss(&dn, &x, &y)) / (2.0 * h);
                let a = analytic[t];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
                t += 1;
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 30.0,
        format!("{checked} parameters over 100 networks, max relative error {worst:.2e}, {secs:.1}s"),
    )
}

// 2. CPL counter oracle.

fn counter_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut updates = 0usize;
    for seq in 0..1000 {
        let n = rng.random_range(1..=40);
        let c = rng.random_range(1..=6);
        let tau = rng.random_range(0.5..=1.0);
        let mut state = CurriculumState::new(n, c, CurriculumConfig::new(tau)).unwrap();
        for _ in 0..rng.random_range(1..=30) {
            let batch: Vec<Confidence> = (0..rng.random_range(1..=2 * n))
                .map(|_| Confidence {
                    index: rng.random_range(0..n),
                    confidence: if rng.random_bool(0.6) { rng.random_range(tau..=1.0) } else { rng.random_range(0.0..=tau) },
                    class: rng.random_range(0..c),
                })
                .collect();
            state.record_predictions(&batch).unwrap();
            updates += batch.len();
            let mut brute = vec![0u64; c];
            let mut unused = 0u64;
            for slot in state.cache() {
                match slot {
                    Some(k) => brute[k] += 1,
                    None => unused += 1,
                }
            }
            if brute != state.learning_effects() || unused != state.unused_count() {
                return Err(format!("sequence {seq}: counters {:?} vs recount {brute:?}", state.learning_effects()));
            }
            if state.learning_effects().iter().sum::<u64>() + state.unused_count() != n as u64 {
                return Err(format!("sequence {seq}: conservation violated"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, format!("1000 sequences, {updates} predictions, exact recount and conservation, {secs:.2}s"))
}

// 3. Threshold invariants.

fn threshold_invariants() -> Outcome {
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // (a) fresh state admits everything.
    let fresh = CurriculumState::new(50, 4, CurriculumConfig::new(0.95)).unwrap();
    if fresh.thresholds().thresholds.iter().any(|&t| t != 0.0) {
        return Err("(a) fresh thresholds not all zero".into());
    }
    let batch: Vec<(f64, usize)> = (0..200).map(|_| (rng.random_range(1e-9..1.0), rng.random_range(0..4))).collect();
    if !fresh.mask(&batch).unwrap().iter().all(|&m| m) {
        return Err("(a) fresh mask rejected a sample".into());
    }
    notes.push("a");

    // (b) once warm-up is off, the best class sits at τ; (c) 0 ≤ T ≤ τ always.
    for trial in 0..200 {
        let c = rng.random_range(2..=6);
        let n = rng.random_range(5..=60);
        let tau = rng.random_range(0.5..=1.0);
        let mut cfg = CurriculumConfig::new(tau);
        cfg.mapping = Mapping::ALL[trial % 3];
        cfg.warmup = trial % 2 == 0;
        let mut state = CurriculumState::new(n, c, cfg).unwrap();
        for _ in 0..rng.random_range(1..=10) {
            let b: Vec<Confidence> = (0..rng.random_range(1..=n))
                .map(|_| Confidence {
                    index: rng.random_range(0..n),
                    confidence: rng.random_range(0.0..=1.0),
                    class: rng.random_range(0..c),
                })
                .collect();
            state.record_predictions(&b).unwrap();
            let tv = state.thresholds();
            if tv.thresholds.iter().any(|&t| !(0.0..=tau).contains(&t)) {
                return Err(format!("(c) threshold outside [0, τ]: {:?}", tv.thresholds));
            }
            let max_sigma = *state.learning_effects().iter().max().unwrap();
            if !tv.warmup_active && max_sigma > 0 {
                let best = state.learning_effects().iter().position(|&s| s == max_sigma).unwrap();
                let max_beta = tv.effects.iter().cloned().fold(0.0, f64::max);
                if max_beta != 1.0 || tv.thresholds[best] != tau {
                    return Err(format!("(b) max β {max_beta}, best-class threshold {} vs τ {tau}", tv.thresholds[best]));
                }
            }
        }
    }
    notes.push("b");
    notes.push("c");

    // (d) mapping order on a 99-point grid, equality at the endpoints.
    for i in 1..=99 {
        let x = i as f64 / 100.0;
        let (cv, li, cc) = (
            map_effect(x, Mapping::Convex).unwrap(),
            map_effect(x, Mapping::Linear).unwrap(),
            map_effect(x, Mapping::Concave).unwrap(),
        );
        if !(cv < li && li < cc) {
            return Err(format!("(d) order violated at {x}: {cv} {li} {cc}"));
        }
    }
    for x in [0.0, 1.0] {
        let v: Vec<f64> = Mapping::ALL.iter().map(|&m| map_effect(x, m).unwrap()).collect();
        if v.iter().any(|&y| y != x) {
            return Err(format!("(d) endpoint {x} maps to {v:?}"));
        }
    }
    notes.push("d");

    // (e) overwriting a cached prediction lowers that class's threshold.
    let mut cfg = CurriculumConfig::new(0.95);
    cfg.warmup = false;
    let mut s = CurriculumState::new(4, 2, cfg).unwrap();
    let conf = |index, class| Confidence {
        index,
        confidence: 0.99,
        class,
    };
    s.record_predictions(&[conf(0, 0), conf(1, 0), conf(2, 1), conf(3, 1)]).unwrap();
    let before = s.thresholds().thresholds[1];
    s.record_predictions(&[conf(3, 0)]).unwrap();
    let after = s.thresholds().thresholds[1];
    if !(after < before) {
        return Err(format!("(e) threshold of class 1 went {before} -> {after}"));
    }
    notes.push("e");
    Ok(format!("{} hold; overwrite lowered T(1) from {before:.4} to {after:.4}", notes.join(",")))
}

// 4. Degeneracy equivalence.

fn moons(labels_per_class: usize, seed: u64) -> SplitDataset {
    let pool = make_synthetic(SyntheticKind::TwoMoons, 2510, 2, 0.1, 7).unwrap();
    split(&pool, labels_per_class, 0.2, seed).unwrap()
}

fn degeneracy() -> Outcome {
    let data = moons(4, 1);
    let base = TrainConfig {
        iterations: 600,
        checkpoint_every: 20,
        mapping: Mapping::Linear,
        warmup: false,
        ..TrainConfig::default()
    };
    let fix = train(&TrainConfig { spec: AlgorithmSpec::fixmatch(), ..base.clone() }, &data).map_err(|e| e.to_string())?;
    let flex_cfg = TrainConfig { spec: AlgorithmSpec::fixmatch().flex(), ..base };
    let mut state = CurriculumState::new(data.unlabeled_len(), 2, flex_cfg.curriculum_config()).unwrap();
    state.pin_effects(vec![1.0; 2]).unwrap();
    let flex = train_with_curriculum(&flex_cfg, &data, Some(state)).map_err(|e| e.to_string())?;
    let (a, b) = (fix.csv_string(), flex.csv_string());
    check(
        a == b && fix.records.len() == 30,
        format!("600 iterations, {} checkpoints, metrics CSVs bitwise equal: {}", fix.records.len(), a == b),
    )
}

// 5. Exact values.

fn exact_values() -> Outcome {
    let lr = cosine_lr(20_000, 20_000, 0.03).map_err(|e| e.to_string())?;
    let convex = map_effect(0.5, Mapping::Convex).unwrap();
    let concave = map_effect(0.5, Mapping::Concave).unwrap();
    let probs = Matrix::from_rows(&[[0.9, 0.1], [0.6, 0.4]]).unwrap();
    let lb = class_balance_loss(&probs).unwrap();
    let ce = cross_entropy(Target::Class(3), &[0.1; 10]);
    let ok = (lr - 0.005853).abs() <= 1e-6
        && convex == 1.0 / 3.0
        && (concave - 0.58496).abs() <= 1e-5
        && (lb - 0.14384).abs() <= 1e-5
        && (ce - 10f64.ln()).abs() <= 1e-9;
    check(
        ok,
        format!("cosine_lr(K)={lr:.7}, M_convex(0.5)={convex}, M_concave(0.5)={concave:.6}, L_b={lb:.6}, CE={ce:.12}"),
    )
}

// 6 and 7 share the same six runs.

struct Pair {
    fix: RunArtifact,
    flex: RunArtifact,
}

const SEEDS: [u64; 3] = [1, 2, 3];
const K: usize = 20_000;

fn moons_pairs() -> &'static Result<(Vec<Pair>, f64), String> {
    static RUNS: OnceLock<Result<(Vec<Pair>, f64), String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mut out = Vec::new();
        for seed in SEEDS {
            let data = moons(4, seed);
            assert_eq!(data.unlabeled_len(), 2000);
            let cfg = |spec| TrainConfig {
                spec,
                iterations: K,
                seed,
                ..TrainConfig::default()
            };
            let fix = train(&cfg(AlgorithmSpec::fixmatch()), &data).map_err(|e| e.to_string())?;
            let flex = train(&cfg(AlgorithmSpec::fixmatch().flex()), &data).map_err(|e| e.to_string())?;
            out.push(Pair { fix, flex });
        }
        Ok((out, start.elapsed().as_secs_f64()))
    })
}

fn first_reaching(records: &[MetricsRecord], target_error: f64) -> Option<usize> {
    records.iter().find(|r| r.eval.error <= target_error).map(|r| r.iteration)
}

fn convergence() -> Outcome {
    let (pairs, secs) = moons_pairs().as_ref().map_err(|e| e.clone())?;
    let fix_best: Vec<f64> = pairs.iter().map(|p| p.fix.summary().unwrap().best_error).collect();
    let flex_best: Vec<f64> = pairs.iter().map(|p| p.flex.summary().unwrap().best_error).collect();
    let (fix_mean, _) = mean_std(&fix_best);
    let (flex_mean, _) = mean_std(&flex_best);
    let mut fast = 0;
    let mut per_seed = Vec::new();
    for (p, &target) in pairs.iter().zip(&fix_best) {
        let flex_hit = first_reaching(&p.flex.records, target);
        let fix_hit = first_reaching(&p.fix.records, target).unwrap();
        if flex_hit.is_some_and(|it| it * 2 <= K) {
            fast += 1;
        }
        per_seed.push(format!(
            "flex reaches {:.2}% at {} (fixmatch first at {fix_hit})",
            100.0 * target,
            flex_hit.map_or("never".into(), |i| i.to_string())
        ));
    }
    let ok = flex_mean <= fix_mean + 0.005 && fast >= 2 && *secs < 900.0;
    check(
        ok,
        format!(
            "mean best error FlexMatch {:.2}% vs FixMatch {:.2}%; within K/2 on {fast}/3 seeds [{}]; 6 runs in {secs:.0}s",
            100.0 * flex_mean,
            100.0 * fix_mean,
            per_seed.join("; ")
        ),
    )
}

fn early_utilization() -> Outcome {
    let (pairs, _) = moons_pairs().as_ref().map_err(|e| e.clone())?;
    let early = |r: &RunArtifact| {
        let rs: Vec<f64> = r.records.iter().filter(|m| m.iteration <= K / 10).map(|m| m.utilization).collect();
        rs.iter().sum::<f64>() / rs.len() as f64
    };
    let mut wins = 0;
    let mut parts = Vec::new();
    for (seed, p) in SEEDS.iter().zip(pairs) {
        let (f, x) = (early(&p.flex), early(&p.fix));
        if f > x {
            wins += 1;
        }
        parts.push(format!("seed {seed}: {f:.3} vs {x:.3}"));
    }
    check(wins == 3, format!("first 10% mean utilization FlexMatch vs FixMatch: {}", parts.join(", ")))
}

// 8. Flex variants on a hard blobs split.

fn flex_improves_baselines() -> Outcome {
    let pool = make_synthetic(SyntheticKind::Blobs, 2510, 4, 1.0, 7).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for (base, flex) in [(AlgorithmSpec::pseudo_label(), AlgorithmSpec::pseudo_label().flex()), (AlgorithmSpec::uda(), AlgorithmSpec::uda().flex())] {
        let mut means = Vec::new();
        for spec in [base, flex] {
            let label = spec.label();
            let mut best = Vec::new();
            for seed in SEEDS {
                let data = split(&pool, 2, 0.2, seed).unwrap();
                let cfg = TrainConfig {
                    spec: spec.clone(),
                    seed,
                    ..TrainConfig::default()
                };
                best.push(train(&cfg, &data).map_err(|e| e.to_string())?.summary().unwrap().best_error);
            }
            means.push((label, mean_std(&best).0));
        }
        ok &= means[1].1 <= means[0].1 + 0.005;
        lines.push(format!("{} {:.2}% vs {} {:.2}%", means[1].0, 100.0 * means[1].1, means[0].0, 100.0 * means[0].1));
    }
    check(ok, lines.join("; "))
}

// 9. Cost-free curriculum.

fn cost_free() -> Outcome {
    let data = moons(4, 1);
    let cfg = |spec| TrainConfig {
        spec,
        iterations: 2000,
        ..TrainConfig::default()
    };
    let (mut fix, mut flex) = (Vec::new(), Vec::new());
    // Interleave repetitions so drift in machine load hits both equally.
    for _ in 0..5 {
        for (spec, out) in [(AlgorithmSpec::fixmatch(), &mut fix), (AlgorithmSpec::fixmatch().flex(), &mut flex)] {
            let t = Instant::now();
            train(&cfg(spec), &data).map_err(|e| e.to_string())?;
            out.push(t.elapsed().as_secs_f64() / 2000.0);
        }
    }
    let med = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (a, b) = (med(&mut fix), med(&mut flex));
    let ratio = b / a;
    check(
        (ratio - 1.0).abs() <= 0.10,
        format!("per-iteration time FlexMatch {:.3} ms vs FixMatch {:.3} ms (ratio {ratio:.3})", 1e3 * b, 1e3 * a),
    )
}

// 10. Metrics.

fn metrics_checks() -> Outcome {
    let record = |i: usize, error: f64| MetricsRecord {
        iteration: i,
        eval: Evaluation {
            error,
            class_accuracy: vec![],
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            auc: 0.0,
        },
        utilization: 0.0,
        thresholds: vec![],
        loss_s: 0.0,
        loss_u: 0.0,
        pseudo_acc: f64::NAN,
    };
    // 20 shuffled errors; sorted, the middle pair is 0.10 and 0.11.
    let errors = [0.12, 0.05, 0.09, 0.20, 0.01, 0.07, 0.15, 0.03, 0.11, 0.08, 0.19, 0.02, 0.14, 0.06, 0.18, 0.04, 0.10, 0.17, 0.13, 0.16];
    let recs: Vec<MetricsRecord> = errors.iter().enumerate().map(|(i, &e)| record(i, e)).collect();
    let median = summarize(&recs).unwrap().median_last_20_error;
    let hand = (0.10 + 0.11) / 2.0;

    let labels = [0, 1, 0, 1, 1, 0];
    let constant = Matrix::from_rows(&[[1.0, 0.0]; 6]).unwrap();
    let f1 = evaluate_probabilities(&constant, &labels).unwrap().f1;
    let mut perfect = Matrix::zeros(6, 2);
    for (r, &l) in labels.iter().enumerate() {
        perfect.set(r, l, 0.9);
        perfect.set(r, 1 - l, 0.1);
    }
    let auc = evaluate_probabilities(&perfect, &labels).unwrap().auc;
    check(
        median == hand && f1 == 1.0 / 3.0 && auc == 1.0,
        format!("median-of-last-20 {median} (hand {hand}), constant-predictor macro F1 {f1}, perfect AUC {auc}"),
    )
}

// 11. Determinism.

fn determinism() -> Outcome {
    let data = moons(4, 2);
    let mut names = Vec::new();
    for name in AlgorithmSpec::PRESETS {
        let cfg = TrainConfig {
            spec: AlgorithmSpec::preset(name).unwrap(),
            iterations: 400,
            checkpoint_every: 50,
            seed: 2,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &data).map_err(|e| e.to_string())?.csv_string();
        let b = train(&cfg, &data).map_err(|e| e.to_string())?.csv_string();
        if a != b {
            return Err(format!("{name}: metrics CSV differs between identical runs"));
        }
        names.push(name);
    }
    Ok(format!("byte-identical metrics CSVs on repeat for {}", names.join(", ")))
}

// 12. Fully supervised anchor.

fn supervised_anchor() -> Outcome {
    let pool = make_synthetic(SyntheticKind::TwoMoons, 2510, 2, 0.1, 7).unwrap();
    let data = split_fully_labeled(&pool, 0.2, 1).unwrap();
    let cfg = TrainConfig {
        spec: AlgorithmSpec::supervised(),
        iterations: 2000,
        seed: 1,
        ..TrainConfig::default()
    };
    let run = train(&cfg, &data).map_err(|e| e.to_string())?;
    let best = 1.0 - run.summary().unwrap().best_error;
    let last = 1.0 - run.records.last().unwrap().eval.error;
    check(
        best >= 0.95,
        format!(
            "{} labeled samples, best eval accuracy {:.2}% (final {:.2}%) within 2000 iterations",
            data.labeled.len(),
            100.0 * best,
            100.0 * last
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient oracle", gradient_oracle),
        ("curriculum counter oracle", counter_oracle),
        ("threshold invariants", threshold_invariants),
        ("flexible/fixed degeneracy", degeneracy),
        ("exact values", exact_values),
        ("directional convergence", convergence),
        ("early utilization", early_utilization),
        ("flex improves baselines", flex_improves_baselines),
        ("cost-free curriculum", cost_free),
        ("evaluation metrics", metrics_checks),
        ("determinism", determinism),
        ("supervised anchor", supervised_anchor),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {}",
                p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            ))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
