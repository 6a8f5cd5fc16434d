//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Set `ACCEPTANCE_ONLY=1,4` to run a subset.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use microseg::activation::{ActivationKind, ActivationState};
use microseg::cli::main_with_args;
use microseg::data::{self, resize_for_train, resize_pred_back, Dataset};
use microseg::ensemble::{evaluate_models, fuse_probs, member_reports, train_ensemble, EnsembleSpec};
use microseg::gradsuite::{run_suite, DEFAULT_SEEDS};
use microseg::metrics::{mask_metrics, mean_report, metrics_from_counts, ConfusionCounts};
use microseg::model::{ActivationAssignment, Model, NetworkConfig, SelectionMode};
use microseg::ops::softmax_channel;
use microseg::rng::{derive_seed, SplitMix64};
use microseg::train::{train_model, TrainConfig};
use microseg::{Shape, Tensor};

/// Test dice the criterion-5 model must reach. Frozen from the verified
/// default-config runs on seeds 6..8 and 10..19: the runs that did not
/// collapse to all-background scored 0.72 to 0.86.
const DESK_DICE_THRESHOLD: f64 = 0.70;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let entries = run_suite(DEFAULT_SEEDS);
    let elapsed = start.elapsed();
    let failed: Vec<String> = entries.iter().filter(|e| !e.passed()).map(|e| e.to_string()).collect();
    let worst_unit = entries
        .iter()
        .filter(|e| !e.name.starts_with("model/"))
        .map(|e| e.worst.max_rel_error)
        .fold(0.0, f64::max);
    let e2e = entries.iter().find(|e| e.name == "model/end_to_end").unwrap();
    let fast = elapsed < Duration::from_secs(120);
    outcome(
        failed.is_empty() && fast && DEFAULT_SEEDS >= 20,
        format!(
            "{} checks x {} seeds, worst unit error {:.2e}, end-to-end {:.2e}, {:.1}s{}",
            entries.len(),
            DEFAULT_SEEDS,
            worst_unit,
            e2e.worst.max_rel_error,
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(" | ")) }
        ),
    )
}

fn metric_oracle() -> Outcome {
    let mut rng = SplitMix64::new(derive_seed(2, 0));
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dp = rng.next_f64();
        let dg = rng.next_f64();
        let pred = common::random_mask(&mut rng, 8, 8, dp);
        let gt = common::random_mask(&mut rng, 8, 8, dg);
        let r = mask_metrics(&pred, &gt).unwrap();
        let o = common::oracle_scores(&pred, &gt);
        for (a, b) in r.table_row().iter().zip(o) {
            worst = worst.max((a - b).abs());
        }
    }
    let ex = metrics_from_counts(&ConfusionCounts::new(1, 1, 1, 1)).unwrap();
    let exact = ex.iou == 1.0 / 3.0 && ex.dice == 0.5 && ex.f2 == 0.5 && ex.accuracy == 0.5;
    outcome(
        worst <= 1e-12 && exact,
        format!("1000 random 8x8 pairs, max deviation {worst:.1e}; (1,1,1,1) example exact: {exact}"),
    )
}

fn bits_equal(a: &ActivationState<f64>, b: &ActivationState<f64>, x: &Tensor<f64>) -> bool {
    let ya = a.forward(x).unwrap();
    let yb = b.forward(x).unwrap();
    ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits())
}

fn bits_equal32(a: &ActivationState<f32>, b: &ActivationState<f32>, x: &Tensor<f32>) -> bool {
    let ya = a.forward(x).unwrap();
    let yb = b.forward(x).unwrap();
    ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits())
}

fn identity_suite() -> Outcome {
    let mut rng = SplitMix64::new(derive_seed(3, 0));
    let mut dice_f1 = true;
    let mut worst_iou = 0.0f64;
    for _ in 0..1000 {
        let c = ConfusionCounts::new(rng.below(50) as u64, rng.below(50) as u64, rng.below(50) as u64, rng.below(50) as u64 + 1);
        let r = metrics_from_counts(&c).unwrap();
        dice_f1 &= r.dice.to_bits() == r.f1.to_bits();
        worst_iou = worst_iou.max((r.dice - 2.0 * r.iou / (1.0 + r.iou)).abs());
    }

    let shape = Shape::new(1, 1, 100, 100);
    let x = Tensor::from_fn(shape, |_| rng.uniform(-5.0, 5.0));
    let x32 = x.cast::<f32>();
    let mut act_ok = true;
    let mut failures = Vec::new();
    let prelu = ActivationState::<f64>::new(ActivationKind::Prelu, 1).unwrap();
    let relu = ActivationState::<f64>::new(ActivationKind::Relu, 1).unwrap();
    let prelu32 = ActivationState::<f32>::new(ActivationKind::Prelu, 1).unwrap();
    let relu32 = ActivationState::<f32>::new(ActivationKind::Relu, 1).unwrap();
    for kind in [ActivationKind::Melu4, ActivationKind::Melu8, ActivationKind::Galu4, ActivationKind::Galu8, ActivationKind::Aplu] {
        let (r64, r32) = if kind == ActivationKind::Aplu { (&relu, &relu32) } else { (&prelu, &prelu32) };
        let s = ActivationState::<f64>::new(kind, 1).unwrap();
        let s32 = ActivationState::<f32>::new(kind, 1).unwrap();
        if !(bits_equal(&s, r64, &x) && bits_equal32(&s32, r32, &x32)) {
            act_ok = false;
            failures.push(kind.name());
        }
    }
    outcome(
        dice_f1 && worst_iou <= 1e-12 && act_ok,
        format!(
            "dice==f1 bitwise: {dice_f1}; |dice - 2iou/(1+iou)| max {worst_iou:.1e} over 1000 counts; \
             MeLU/GaLU init == PReLU and APLU init == ReLU on 10000 inputs (f64 and f32): {}",
            if act_ok { "bit-equal".to_string() } else { format!("differs for {}", failures.join(",")) }
        ),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn fusion_properties() -> Outcome {
    let mut rng = SplitMix64::new(derive_seed(4, 0));
    let (mut idem, mut perm) = (true, true);
    let mut worst_norm = 0.0f32;
    let mut orderings = 0usize;
    for set in 0..100 {
        let n = 1 + set % 5;
        let shape = Shape::new(1, 2, 1 + rng.below(6), 1 + rng.below(6));
        let spread = rng.uniform(0.5, 30.0);
        let maps: Vec<Tensor<f32>> = (0..n)
            .map(|_| {
                let logits = Tensor::from_fn(shape, |_| rng.uniform(-spread, spread));
                softmax_channel(&logits).unwrap().cast()
            })
            .collect();
        let fused = fuse_probs(&maps).unwrap();
        for p in permutations(n) {
            let shuffled: Vec<Tensor<f32>> = p.iter().map(|&i| maps[i].clone()).collect();
            perm &= fuse_probs(&shuffled).unwrap() == fused;
            orderings += 1;
        }
        for m in &maps {
            idem &= fuse_probs(&vec![m.clone(); n]).unwrap() == *m;
        }
        for i in 0..shape.plane() {
            worst_norm = worst_norm.max((fused.plane(0, 0)[i] + fused.plane(0, 1)[i] - 1.0).abs());
        }
    }
    outcome(
        idem && perm && worst_norm <= 1e-6,
        format!(
            "100 map sets, sizes 1..5: idempotent {idem}, invariant under all {orderings} orderings {perm}, \
             max |sum - 1| {worst_norm:.1e}"
        ),
    )
}

fn desk_split(seed: u64, train: usize, test: usize) -> (Dataset, Dataset) {
    let all = data::synth_blobs(train + test, 64, derive_seed(seed, 1)).unwrap();
    data::split(&all, train, test, derive_seed(seed, 2)).unwrap()
}

fn desk_learning() -> Outcome {
    let start = Instant::now();
    let (train, test) = desk_split(5, 200, 40);
    let cfg = NetworkConfig::default();
    let asg = ActivationAssignment::uniform(ActivationKind::Relu, cfg.site_count());
    let mut model = Model::<f32>::build(&cfg, &asg, derive_seed(5, 3)).unwrap();
    let tc = TrainConfig {
        shuffle_seed: derive_seed(5, 4),
        ..TrainConfig::default()
    };
    let history = train_model(&mut model, &train, &tc).unwrap();
    let report = evaluate_models(std::slice::from_ref(&model), &test).unwrap();
    let elapsed = start.elapsed();
    let (first, last) = (history[0], *history.last().unwrap());
    outcome(
        last < first && report.dice >= DESK_DICE_THRESHOLD && elapsed < Duration::from_secs(300),
        format!(
            "ReLU model, 200/40 blobs at 64x64, {} epochs: loss {first:.4} -> {last:.4}, test dice {:.4} \
             (threshold {DESK_DICE_THRESHOLD}), {:.0}s",
            tc.epochs,
            report.dice,
            elapsed.as_secs_f64()
        ),
    )
}

fn ensemble_effect() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    for master in 0..5u64 {
        let (train, test) = desk_split(100 + master, 120, 40);
        let mut spec = EnsembleSpec::new(SelectionMode::Sto, 5, master);
        spec.train.shuffle_seed = derive_seed(master, 4);
        let ens = train_ensemble(&spec, &train).unwrap();
        let members = member_reports(&ens, &test).unwrap();
        let mean_member = members.iter().map(|r| r.dice).sum::<f64>() / members.len() as f64;
        let fused = evaluate_models(&ens.members, &test).unwrap().dice;
        if fused >= mean_member {
            wins += 1;
        }
        rows.push(format!("{fused:.3}/{mean_member:.3}"));
    }
    let elapsed = start.elapsed();
    outcome(
        wins >= 4 && elapsed < Duration::from_secs(1800),
        format!(
            "fused/mean-member dice per master seed [{}]: fused >= mean in {wins}/5, {:.0}s",
            rows.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "seed = 17\ndata.synth_count = 24\ndata.synth_size = 40\nnet.input_size = 32\n\
         train.epochs = 8\nensemble.size = 4\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut identical = true;
    let mut runs = 0;
    for cmd in ["train", "ensemble"] {
        let mut first: Option<Vec<u8>> = None;
        for (i, threads) in ["1", "2", "1", "4"].iter().enumerate() {
            let out = dir.path().join(format!("{cmd}{i}"));
            main_with_args(["microseg", cmd, "--config", cfg, "--out", out.to_str().unwrap(), "--parallel", threads])
                .unwrap();
            let bytes = std::fs::read(out.join("results.csv")).unwrap();
            runs += 1;
            match &first {
                None => first = Some(bytes),
                Some(f) => identical &= *f == bytes,
            }
        }
    }
    outcome(
        identical,
        format!("{runs} CLI runs (train, ensemble) at --parallel 1/2/1/4: results.csv byte-identical {identical}"),
    )
}

fn protocol() -> Outcome {
    let all = data::synth_blobs(1000, 16, 8).unwrap();
    let (tr, te) = data::split_counts(all.len(), 0.88);
    let (train, test) = data::split(&all, tr, te, 9).unwrap();
    let split_ok = (train.len(), test.len()) == (880, 120);

    // Macro average at original resolution, checked against a by-hand loop
    // over test images of differing sizes.
    let cfg = NetworkConfig::reduced();
    let asg = ActivationAssignment::uniform(ActivationKind::Relu, cfg.site_count());
    let model = Model::<f32>::build(&cfg, &asg, 3).unwrap();
    let samples: Vec<_> = [20usize, 33, 47, 16]
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut x = data::synth_blobs(1, s, 50 + i as u64).unwrap().samples.remove(0);
            x.id = format!("img{i}");
            x
        })
        .collect();
    let mixed = Dataset::new(samples, "mixed sizes").unwrap();
    let reported = evaluate_models(std::slice::from_ref(&model), &mixed).unwrap();
    let mut per_image = Vec::new();
    let mut sizes_ok = true;
    for s in mixed.iter() {
        let probs = model.predict(&resize_for_train(s, cfg.input_size).image).unwrap();
        let fg = Tensor::from_vec(Shape::new(1, 1, cfg.input_size, cfg.input_size), probs.plane(0, 1).to_vec()).unwrap();
        let pred = resize_pred_back(&fg, s.orig_h, s.orig_w);
        sizes_ok &= (pred.h, pred.w) == (s.orig_h, s.orig_w);
        per_image.push(mask_metrics(&pred, &s.mask).unwrap());
    }
    let manual = mean_report(&per_image).unwrap();
    let macro_ok = reported == manual;
    outcome(
        split_ok && macro_ok && sizes_ok,
        format!(
            "1000 samples split {}/{}; macro mean over 4 images at original sizes matches per-image loop: {}",
            train.len(),
            test.len(),
            macro_ok && sizes_ok
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [Criterion; 8] = [
        ("gradient suite", gradient_suite),
        ("metric oracle", metric_oracle),
        ("identity suite", identity_suite),
        ("fusion properties", fusion_properties),
        ("desk-scale learning", desk_learning),
        ("ensemble effect", ensemble_effect),
        ("reproducibility", reproducibility),
        ("protocol conformance", protocol),
    ];
    let mut failed = 0;
    let mut stdout = std::io::stdout();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let o = run();
        if !o.pass {
            failed += 1;
        }
        let _ = writeln!(stdout, "criterion {n} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        let _ = stdout.flush();
    }
    if failed > 0 {
        let _ = writeln!(stdout, "{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
