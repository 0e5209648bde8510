//! One test per acceptance criterion. Each prints a PASS/FAIL line to stderr
//! (bypassing output capture) before asserting.

mod common;

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use synthkit_core::caption::pair_captions;
use synthkit_core::losses::{
    check_all, decomposition_costs, loss_clip_concat, loss_tripletclip, seeded_batch, LossKind,
};
use synthkit_core::metrics::{delta_mtl, diversity, kmeans_fit, recognizability, MetricVector};
use synthkit_core::sampler::{balanced_sample, count_concepts, ConceptBank, SamplerConfig};
use synthkit_core::scheduler::{schedule_p, utilization_report};
use synthkit_core::spectral::{gaussian_blur, hf_energy, spectrum, ImageGrid};
use synthkit_core::{CaptionRecord, CurriculumSchedule, CurriculumScheduler, EmbeddingMatrix, Embeddings};
use synthkit_lab::experiments::{
    curriculum_experiment, curriculum_train_config, invariance_experiment, invariance_train_config,
};
use synthkit_lab::WorldConfig;

fn verdict(name: &str, pass: bool, detail: &str) {
    let _ = writeln!(std::io::stderr(), "[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

#[test]
fn gradient_fidelity() {
    let t = Instant::now();
    let reports = check_all(0, 20, 1e-5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<&str> =
        reports.iter().filter(|r| r.max_rel_error.is_nan() || r.max_rel_error >= 1e-4).map(|r| r.loss).collect();
    let detail =
        format!("{} losses x 20 batches, worst rel error {worst:.2e}, failing {failing:?}, {secs:.1}s", reports.len());
    verdict("gradient fidelity", reports.len() == 7 && failing.is_empty() && secs < 30.0, &detail);
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sim(a: &[f64], b: &[f64], tau: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / tau
}

/// Mean over anchors of `lse(anchor vs candidates) - anchor·target`.
fn directional(anchors: &[&[f64]], targets: &[&[f64]], candidates: &[&[f64]], tau: f64) -> f64 {
    anchors
        .iter()
        .zip(targets)
        .map(|(a, t)| lse(&candidates.iter().map(|c| sim(a, c, tau)).collect::<Vec<_>>()) - sim(a, t, tau))
        .sum::<f64>()
        / anchors.len() as f64
}

fn rows(m: &Embeddings) -> Vec<&[f64]> {
    (0..m.rows()).map(|r| m.row(r)).collect()
}

#[test]
fn loss_decomposition_identity() {
    let t = Instant::now();
    let (mut worst_residual, mut worst_oracle, mut min_cost) = (0.0f64, 0.0f64, f64::INFINITY);
    for seed in 0..100 {
        let b = seeded_batch(LossKind::ClipConcat, 1000 + seed).unwrap();
        let tau = b.config.temperature();
        let (i, tx) = (rows(&b.img), rows(&b.txt));
        let (hi, ht) = (rows(b.hn_img.as_ref().unwrap()), rows(b.hn_txt.as_ref().unwrap()));
        let all_i: Vec<&[f64]> = i.iter().chain(&hi).copied().collect();
        let all_t: Vec<&[f64]> = tx.iter().chain(&ht).copied().collect();

        // Direct summation, independent of the loss kernel.
        let clip4 = 2.0 * (directional(&all_i, &all_t, &all_t, tau) + directional(&all_t, &all_i, &all_i, tau));
        let negclip = |img: &[&[f64]], txt: &[&[f64]], neg: &[&[f64]]| {
            let cands: Vec<&[f64]> = txt.iter().chain(neg).copied().collect();
            directional(img, txt, &cands, tau) + directional(txt, img, img, tau)
        };
        let triplet = negclip(&i, &tx, &ht) + negclip(&hi, &ht, &tx);
        let c_pos = directional(&tx, &i, &all_i, tau) - directional(&tx, &i, &i, tau);
        let hi_then_i: Vec<&[f64]> = hi.iter().chain(&i).copied().collect();
        let c_neg = directional(&ht, &hi, &hi_then_i, tau) - directional(&ht, &hi, &hi, tau);

        let lib_clip = loss_clip_concat(&b).unwrap().value;
        let lib_triplet = loss_tripletclip(&b).unwrap().value;
        let (cp, cn) = decomposition_costs(&b).unwrap();
        worst_residual = worst_residual.max((4.0 * lib_clip - (lib_triplet + cp + cn)).abs());
        for (lib, oracle) in [(4.0 * lib_clip, clip4), (lib_triplet, triplet), (cp, c_pos), (cn, c_neg)] {
            worst_oracle = worst_oracle.max((lib - oracle).abs());
        }
        min_cost = min_cost.min(cp).min(cn);
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "100 batches, max residual {worst_residual:.1e}, max deviation from direct sums {worst_oracle:.1e}, \
         min cost {min_cost:.2e}, {secs:.2}s"
    );
    verdict(
        "loss decomposition identity",
        worst_residual < 1e-9 && worst_oracle < 1e-9 && min_cost >= -1e-12 && secs < 10.0,
        &detail,
    );
}

const BASELINE: [f64; 5] = [49.1, 61.6, 11.6, 15.9, 8.15];

/// Rows whose recomputed delta misses the printed one by more than 0.2pp.
fn delta_misses(rows: &[(&str, [f64; 5], f64)]) -> (Vec<String>, f64) {
    let base = MetricVector::higher_better(&BASELINE);
    let mut misses = Vec::new();
    let mut worst = 0.0f64;
    for (label, values, printed) in rows {
        let d = delta_mtl(&MetricVector::higher_better(values), &base).unwrap();
        worst = worst.max((d - printed).abs());
        if (d - printed).abs() > 0.2 {
            misses.push(format!("{label}: {d:.3} vs {printed}"));
        }
    }
    (misses, worst)
}

#[test]
fn density_and_ensemble_delta_arithmetic() {
    let t = Instant::now();
    // (n+, m, image-to-image term): per-task averages and the printed delta.
    let rows = [
        ("1,1", BASELINE, 0.0),
        ("1,2", [47.5, 61.1, 12.1, 17.5, 8.53], 3.1),
        ("1,3", [48.5, 61.3, 13.3, 17.9, 8.56], 6.1),
        ("1,4", [48.9, 61.5, 12.8, 17.6, 8.92], 6.2),
        ("2,1", [49.5, 62.4, 13.8, 18.7, 9.41], 11.0),
        ("2,2", [47.9, 61.1, 14.2, 20.2, 9.54], 12.7),
        ("3,1", [49.3, 62.7, 14.7, 21.1, 9.66], 16.1),
        ("3,3", [48.2, 61.1, 16.2, 22.4, 9.38], 18.7),
        ("4,1", [49.8, 62.8, 14.8, 19.4, 9.56], 14.1),
        ("4,4", [48.9, 62.0, 16.1, 21.4, 9.86], 19.0),
        ("2,1,i2i", [43.4, 57.3, 13.3, 17.6, 10.14], 6.3),
        ("2,2,i2i", [41.5, 55.7, 14.4, 19.8, 11.19], 12.3),
        ("3,1,i2i", [44.4, 57.3, 14.2, 18.9, 10.88], 11.8),
        ("3,3,i2i", [41.3, 55.2, 16.5, 21.7, 10.98], 17.4),
        ("4,1,i2i", [45.2, 57.7, 15.0, 19.9, 11.24], 15.6),
        ("4,4,i2i", [42.9, 56.4, 15.7, 20.6, 11.34], 16.6),
    ];
    let (misses, worst) = delta_misses(&rows);
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("{} rows, worst gap {worst:.3}pp, outside 0.2pp: {misses:?}, {secs:.3}s", rows.len());
    verdict("density/ensemble delta arithmetic", misses.is_empty() && secs < 1.0, &detail);
}

#[test]
fn hard_negative_delta_arithmetic() {
    // (hard-negative samples, loss, scheduler) at n+ = m = 2 unless noted.
    let rows = [
        ("baseline", BASELINE, 0.0),
        ("naive", [41.5, 55.7, 13.2, 17.9, 9.95], 4.7),
        ("scheduler", [40.8, 55.8, 13.6, 18.8, 10.23], 7.0),
        ("loss", [42.3, 56.8, 14.0, 19.0, 10.27], 9.0),
        ("loss+scheduler", [41.4, 55.8, 14.6, 20.5, 10.8], 12.5),
        ("3,3 full", [40.8, 55.5, 15.7, 18.9, 10.72], 11.8),
        ("4,4 full", [42.7, 56.5, 15.7, 20.4, 11.1], 15.5),
    ];
    let (misses, worst) = delta_misses(&rows);
    let detail = format!("{} rows, worst gap {worst:.3}pp, outside 0.2pp: {misses:?}", rows.len());
    verdict("hard-negative delta arithmetic", misses.is_empty(), &detail);
}

#[test]
fn curriculum_scheduler_utilization() {
    let t = Instant::now();
    let (n, epochs, bsz) = (1000, 40, 50);
    let records: Vec<CaptionRecord> = (0..n)
        .flat_map(|i| {
            [
                CaptionRecord::new(format!("p{i}"), format!("base {i}"), "x"),
                CaptionRecord::new(format!("n{i}"), format!("neg {i}"), "x")
                    .with_axis("color")
                    .hard_negative_of(format!("p{i}")),
            ]
        })
        .collect();
    let dataset = pair_captions(&records, 1).unwrap();
    let mut problems = Vec::new();
    let (mut worst_gap, mut worst_queue) = (0.0f64, 0usize);
    for seed in 0..5 {
        let sched = CurriculumSchedule::new(epochs, 0.0, 0.5).unwrap();
        let mut s = CurriculumScheduler::new(sched, bsz, seed).unwrap();
        let plans = s.plan_all(&dataset).unwrap();
        for (e, batches) in plans.iter().enumerate() {
            let positives: Vec<&String> = batches.iter().flat_map(|b| &b.positive_ids).collect();
            let distinct: HashSet<&String> = positives.iter().copied().collect();
            if positives.len() != n || distinct.len() != n {
                problems.push(format!(
                    "seed {seed} epoch {e}: {} positives, {} distinct",
                    positives.len(),
                    distinct.len()
                ));
            }
            let hn: usize = batches.iter().map(|b| b.hn_ids.len()).sum();
            let realized = hn as f64 / (hn + positives.len()) as f64;
            let gap = (realized - schedule_p(&sched, e).unwrap()).abs();
            worst_gap = worst_gap.max(gap);
            if gap > 1.0 / bsz as f64 {
                problems.push(format!("seed {seed} epoch {e}: realized {realized:.4}"));
            }
        }
        let report = utilization_report(&plans, &dataset, &sched, s.queue());
        if !report.fully_utilized() {
            problems.push(format!("seed {seed}: {} report violations", report.violations.len()));
        }
        worst_queue = worst_queue.max(s.queue().len());
        if s.queue().len() >= bsz {
            problems.push(format!("seed {seed}: final queue {}", s.queue().len()));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "5 seeds, worst ratio gap {worst_gap:.4} (limit {:.3}), worst final queue {worst_queue}, {secs:.2}s, problems {problems:?}",
        1.0 / bsz as f64
    );
    verdict("curriculum scheduler", problems.is_empty() && secs < 5.0, &detail);
}

#[test]
fn balanced_sampler_planted_corpus() {
    let t = Instant::now();
    let bank = ConceptBank::new(["apple", "pear", "plum", "fig"]).unwrap();
    let mut captions = Vec::new();
    for (concept, count) in [("apple", 1000), ("pear", 30), ("plum", 10), ("fig", 1)] {
        for i in 0..count {
            captions.push(CaptionRecord::new(format!("{concept}{i}"), format!("one {concept} number {i}"), concept));
        }
    }
    let hist = count_concepts(&captions, &bank);
    let (threshold, seeds) = (30usize, 50u64);
    let mut heads = Vec::new();
    let mut tail_losses = 0;
    for seed in 0..seeds {
        let kept = balanced_sample(&captions, &hist, &SamplerConfig::new(threshold, seed).unwrap()).unwrap();
        heads.push(kept.iter().filter(|c| c.concept == "apple").count() as f64);
        tail_losses += 41 - kept.iter().filter(|c| c.concept != "apple").count();
    }
    let mean = heads.iter().sum::<f64>() / heads.len() as f64;
    let p = threshold as f64 / 1000.0;
    let sigma_mean = (1000.0 * p * (1.0 - p) / seeds as f64).sqrt();
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "mean head kept {mean:.2} (band 30 +/- {:.2}), tail captions lost {tail_losses}, {secs:.2}s",
        3.0 * sigma_mean
    );
    verdict("balanced sampler", (mean - 30.0).abs() <= 3.0 * sigma_mean && tail_losses == 0 && secs < 10.0, &detail);
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn embedding_metrics() {
    let mut notes = Vec::new();
    let mut pass = true;

    // Identical images inside every cluster.
    let text = Embeddings::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
    let imgs =
        Embeddings::from_rows(&[vec![0.6, 0.8, 0.0], vec![0.6, 0.8, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
    let model = kmeans_fit(&text, 2, 0, 10).unwrap();
    let d0 = diversity(&imgs, &model, &[0, 0, 1, 1]).unwrap().diversity;
    pass &= d0 == 0.0;
    notes.push(format!("identical clusters D={d0}"));

    // Gaussian world: ten well separated captions, 1000 images each.
    let (d, sigma) = (16usize, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let centers: Vec<Vec<f64>> = (0..10).map(|c| (0..d).map(|j| if j == c { 1.0 } else { 0.0 }).collect()).collect();
    let mut img_rows = Vec::new();
    let mut map = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..1000 {
            img_rows.push(center.iter().map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
            map.push(c);
        }
    }
    let text = Embeddings::from_rows(&centers).unwrap();
    let imgs = Embeddings::from_rows(&img_rows).unwrap();
    let model = kmeans_fit(&text, 10, 1, 50).unwrap();
    let dg = diversity(&imgs, &model, &map).unwrap().diversity;
    let target = sigma * (d as f64).sqrt();
    let rel = (dg / target - 1.0).abs();
    pass &= rel < 0.02;
    notes.push(format!("gaussian D={dg:.5} vs {target:.5} ({:.2}%)", 100.0 * rel));

    // Recognizability on constructed pairs.
    let angle = std::f64::consts::FRAC_PI_3;
    let cases = [
        (vec![1.0, 0.0], vec![1.0, 0.0], 100.0),
        (vec![1.0, 0.0], vec![0.0, 1.0], 0.0),
        (vec![1.0, 0.0], vec![-1.0, 0.0], 0.0),
        (vec![1.0, 0.0], vec![angle.cos(), angle.sin()], 50.0),
    ];
    for (i, t, want) in &cases {
        let r = recognizability(
            &Embeddings::from_rows(std::slice::from_ref(i)).unwrap(),
            &Embeddings::from_rows(std::slice::from_ref(t)).unwrap(),
            100.0,
        )
        .unwrap();
        pass &= (r - want).abs() < 1e-12;
    }
    let mixed = recognizability(
        &Embeddings::from_rows(&cases.iter().map(|c| c.0.clone()).collect::<Vec<_>>()).unwrap(),
        &Embeddings::from_rows(&cases.iter().map(|c| c.1.clone()).collect::<Vec<_>>()).unwrap(),
        100.0,
    )
    .unwrap();
    pass &= (mixed - 37.5).abs() < 1e-12;
    notes.push(format!("recognizability cases exact, mean {mixed}"));

    // Two planted blobs.
    let mut exact = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut label = Vec::new();
        for k in 0..200 {
            let c = if k % 3 == 0 { 4.0 } else { -4.0 };
            pts.push(unit((0..4).map(|j| if j == 0 { c } else { 0.0 } + rng.random_range(-1.0..1.0)).collect()));
            label.push(k % 3 == 0);
        }
        let x = EmbeddingMatrix::<f64>::from_rows(&pts).unwrap();
        let m = kmeans_fit(&x, 2, seed, 100).unwrap();
        let same = (0..200).all(|k| (m.assignment[k] == m.assignment[0]) == (label[k] == label[0]));
        exact += same as usize;
    }
    pass &= exact == 10;
    notes.push(format!("2-blob partitions recovered {exact}/10"));
    verdict("embedding metrics", pass, &notes.join("; "));
}

#[test]
fn spectral_energy() {
    let t = Instant::now();
    let n = 128;
    let constant = ImageGrid::<f64>::gray(n, n, vec![0.7; n * n]).unwrap();
    let c = hf_energy(&constant);
    let board = ImageGrid::<f64>::from_fn(n, n, |y, x| ((x + y) % 2) as f64).unwrap();
    let b = hf_energy(&board);

    let mut blur_wins = 0;
    let mut parseval_worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = ImageGrid::<f64>::gray(n, n, (0..n * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let blurred = gaussian_blur(&noise, 1.5).unwrap();
        blur_wins += (hf_energy(&blurred) < hf_energy(&noise)) as usize;
        let spatial: f64 = noise.values().iter().map(|v| v * v).sum();
        let spectral: f64 = spectrum(&noise).iter().map(|z| z.norm_sqr()).sum();
        parseval_worst = parseval_worst.max(((spatial - spectral) / spatial).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "constant {c}, checkerboard {b:.6}, blur lowers energy {blur_wins}/50, Parseval {parseval_worst:.1e}, {secs:.2}s at {n}x{n}"
    );
    verdict(
        "spectral energy",
        c == 0.0 && b > 0.99 && blur_wins == 50 && parseval_worst < 1e-6 && secs < 30.0,
        &detail,
    );
}

#[test]
fn invariance_lab() {
    let t = Instant::now();
    let mut lines = Vec::new();
    let (mut a, mut b, mut c) = (0, 0, 0);
    let seeds = 0..5u64;
    let n = seeds.clone().count();
    for seed in seeds {
        let world = WorldConfig { seed, ..Default::default() };
        let inv = invariance_experiment(&world, &invariance_train_config(seed)).unwrap();
        let cur = curriculum_experiment(&world, &curriculum_train_config(seed)).unwrap();
        a += inv.probe_drops() as usize;
        b += (inv.recall_cost_pp() <= 2.0) as usize;
        c += cur.curriculum_helps() as usize;
        lines.push(format!(
            "seed {seed}: probe {:.3} vs {:.3}, recall cost {:+.2}pp, hn accuracy {:.3} vs {:.3}",
            inv.probe_multi,
            inv.probe_single,
            inv.recall_cost_pp(),
            cur.hn_accuracy_curriculum,
            cur.hn_accuracy_none
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    for l in &lines {
        let _ = writeln!(std::io::stderr(), "    {l}");
    }
    let detail = format!("probe drops {a}/{n}, recall within 2pp {b}/{n}, curriculum helps {c}/{n}, {secs:.1}s");
    verdict("invariance lab", a == n && b == n && c == n && secs < 300.0, &detail);
}

#[test]
fn replay_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut reproduced = Vec::new();
    let mut failed = Vec::new();
    for (name, args) in common::every_subcommand(dir.path()) {
        let run = common::synthkit(&args);
        let manifest = dir.path().join("runs").join(&name).join("manifest.json");
        let replay = common::synthkit(&[
            "replay".to_string(),
            "--manifest".into(),
            common::s(&manifest),
            "--out".into(),
            common::s(&dir.path().join("replays").join(&name)),
        ]);
        if run.code == 0 && replay.code == 0 {
            reproduced.push(name);
        } else {
            failed.push(format!("{name}: {}{}", run.stderr, replay.stdout));
        }
    }
    let detail = format!("{} subcommands byte-identical on replay, failed {failed:?}", reproduced.len());
    verdict("replay determinism", failed.is_empty() && reproduced.len() == 8, &detail);
}
