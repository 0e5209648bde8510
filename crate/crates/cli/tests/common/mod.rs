#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthkit_core::caption::write_captions;
use synthkit_core::emb1::save_embeddings;
use synthkit_core::{CaptionRecord, EmbeddingMatrix};

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn synthkit<S: AsRef<str>>(args: &[S]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_synthkit"))
        .args(args.iter().map(AsRef::as_ref))
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn s(p: &Path) -> String {
    p.display().to_string()
}

pub fn templates_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../templates")
}

/// Captions over a small bank: a head concept far above the threshold, a few
/// tail concepts, some captions matching nothing and two exact duplicates.
pub fn caption_corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let bank = dir.join("bank.txt");
    fs::write(&bank, "# concepts\ndog\ncat\nbird\nred car\n").unwrap();
    let mut records = Vec::new();
    let mut push = |text: String, concept: &str| {
        let id = format!("c{}", records.len());
        records.push(CaptionRecord::new(id, text, concept));
    };
    for i in 0..200 {
        push(format!("a dog playing in park number {i}"), "dog");
    }
    for i in 0..20 {
        push(format!("a cat asleep on sofa {i}"), "cat");
    }
    for i in 0..5 {
        push(format!("a bird on a wire {i}"), "bird");
    }
    for i in 0..3 {
        push(format!("a red car parked outside {i}"), "red car");
    }
    for i in 0..5 {
        push(format!("an empty street {i}"), "none");
    }
    push("a cat asleep on sofa 0".into(), "cat");
    push("a bird on a wire 0".into(), "bird");
    let path = dir.join("captions.jsonl");
    write_captions(&path, &records).unwrap();
    (path, bank)
}

fn unit_row(rng: &mut ChaCha8Rng, center: &[f64], noise: f64) -> Vec<f64> {
    let v: Vec<f64> = center.iter().map(|c| c + noise * rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Four concept groups of ten captions with two images each, d = 8.
pub fn embedding_set(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 8;
    let centers: Vec<Vec<f64>> = (0..4).map(|g| (0..d).map(|j| if j == g { 1.0 } else { 0.0 }).collect()).collect();
    let mut text = Vec::new();
    let mut imgs = Vec::new();
    let mut records = Vec::new();
    for i in 0..40 {
        let t = unit_row(&mut rng, &centers[i % 4], 0.2);
        for _ in 0..2 {
            imgs.push(unit_row(&mut rng, &t, 0.3));
        }
        text.push(t);
        records.push(CaptionRecord::new(format!("t{i}"), format!("caption {i}"), format!("g{}", i % 4)));
    }
    let ids = records.iter().map(|r| r.id.clone()).collect();
    let text = EmbeddingMatrix::<f64>::from_rows(&text).unwrap().with_ids(ids).unwrap();
    let imgs = EmbeddingMatrix::<f64>::from_rows(&imgs).unwrap();
    let (ip, tp, cp) = (dir.join("images.emb"), dir.join("text.emb"), dir.join("captions.jsonl"));
    save_embeddings(&ip, &imgs).unwrap();
    save_embeddings(&tp, &text).unwrap();
    write_captions(&cp, &records).unwrap();
    (ip, tp, cp)
}

#[derive(Debug, Clone, Copy)]
pub enum Pattern {
    Checkerboard,
    Smooth,
    Noise(u64),
}

/// A directory of 32x32 images named `name`.
pub fn image_set(dir: &Path, name: &str, patterns: &[Pattern]) -> PathBuf {
    let set = dir.join(name);
    fs::create_dir_all(&set).unwrap();
    for (k, p) in patterns.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(match p {
            Pattern::Noise(s) => *s,
            _ => 0,
        });
        let img = image::GrayImage::from_fn(32, 32, |x, y| {
            let v = match p {
                Pattern::Checkerboard => 255 * ((x + y) % 2) as u8,
                Pattern::Smooth => (128.0 + 100.0 * (x as f64 * 0.2).sin() * (y as f64 * 0.15).cos()) as u8,
                Pattern::Noise(_) => rng.random::<u8>(),
            };
            image::Luma([v])
        });
        let ext = if k % 2 == 0 { "png" } else { "pgm" };
        img.save(set.join(format!("img{k:02}.{ext}"))).unwrap();
    }
    set
}

/// Labels for 60 hard negatives and three voters. Voters are reliable on every
/// axis except `texture`, which they confuse with `material`.
pub fn axis_labels(dir: &Path) -> (PathBuf, Vec<PathBuf>) {
    let axes = ["color", "material", "texture", "concept", "position"];
    let mut truth = String::from("id,axis\n");
    let mut voters = vec![String::from("id,axis\n"); 3];
    for i in 0..60 {
        let a = axes[i % axes.len()];
        writeln!(truth, "hn{i},{a}").unwrap();
        for (v, out) in voters.iter_mut().enumerate() {
            let p = match a {
                "texture" if (i + v) % 3 != 0 => "material",
                _ if (i + v) % 7 == 0 => "color",
                _ => a,
            };
            writeln!(out, "hn{i},{p}").unwrap();
        }
    }
    let tp = dir.join("truth.csv");
    fs::write(&tp, truth).unwrap();
    let preds = voters
        .into_iter()
        .enumerate()
        .map(|(v, text)| {
            let p = dir.join(format!("voter{v}.csv"));
            fs::write(&p, text).unwrap();
            p
        })
        .collect();
    (tp, preds)
}

pub const TASKS: [&str; 5] = ["linear_probe", "few_shot", "image_retrieval", "text_retrieval", "zero_shot"];

pub fn metric_csv(path: &Path, values: &[f64]) {
    let mut text = String::from("name,value\n");
    for (n, v) in TASKS.iter().zip(values) {
        writeln!(text, "{n},{v}").unwrap();
    }
    fs::write(path, text).unwrap();
}

/// One invocation of every subcommand on small fixtures, each writing to its
/// own directory under `dir`.
pub fn every_subcommand(dir: &Path) -> Vec<(String, Vec<String>)> {
    let (captions, bank) = caption_corpus(&dir.join("corpus").tap_mkdir());
    let (imgs, text, caps) = embedding_set(&dir.join("emb").tap_mkdir());
    let sets = dir.join("sets").tap_mkdir();
    let a = image_set(&sets, "sharp", &[Pattern::Checkerboard, Pattern::Noise(1), Pattern::Noise(2)]);
    let b = image_set(&sets, "soft", &[Pattern::Smooth, Pattern::Noise(3)]);
    let (truth, preds) = axis_labels(&dir.join("axes").tap_mkdir());
    let (base, model) = (dir.join("base.csv"), dir.join("model.csv"));
    metric_csv(&base, &[49.1, 61.6, 11.6, 15.9, 8.15]);
    metric_csv(&model, &[48.9, 62.0, 16.1, 21.4, 9.86]);
    let out = |name: &str| s(&dir.join("runs").join(name));
    let v = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let mut runs = vec![
        (
            "metrics",
            v(&[
                "metrics",
                "--images",
                &s(&imgs),
                "--text",
                &s(&text),
                "--captions",
                &s(&caps),
                "--clusters",
                "4",
                "--seed",
                "3",
                "--out",
                &out("metrics"),
            ]),
        ),
        (
            "sample",
            v(&[
                "sample",
                "--captions",
                &s(&captions),
                "--bank",
                &s(&bank),
                "--seed",
                "5",
                "--templates",
                &s(&templates_dir()),
                "--tuples",
                "3",
                "--out",
                &out("sample"),
            ]),
        ),
        (
            "schedule-sim",
            v(&[
                "schedule-sim",
                "--samples",
                "120",
                "--epochs",
                "6",
                "--batch-size",
                "20",
                "--seed",
                "2",
                "--out",
                &out("schedule-sim"),
            ]),
        ),
        (
            "spectra",
            v(&[
                "spectra",
                "--set",
                &s(&a),
                "--set",
                &s(&b),
                "--bins",
                "16",
                "--threads",
                "2",
                "--out",
                &out("spectra"),
            ]),
        ),
        (
            "train-toy",
            v(&[
                "train-toy",
                "--concepts",
                "8",
                "--captions",
                "40",
                "--eval-captions",
                "40",
                "--epochs",
                "3",
                "--batch-size",
                "10",
                "--seed",
                "4",
                "--out",
                &out("train-toy"),
            ]),
        ),
        ("check-losses", v(&["check-losses", "--batches", "2", "--out", &out("check-losses")])),
        ("delta-mtl", v(&["delta-mtl", "--baseline", &s(&base), "--model", &s(&model), "--out", &out("delta-mtl")])),
    ];
    let mut axes = v(&["report-axes", "--truth", &s(&truth), "--min-f1", "0.6", "--out", &out("report-axes")]);
    for p in &preds {
        axes.extend(["--pred".to_string(), s(p)]);
    }
    runs.push(("report-axes", axes));
    runs.into_iter().map(|(n, a)| (n.to_string(), a)).collect()
}

trait TapMkdir {
    fn tap_mkdir(self) -> Self;
}

impl TapMkdir for PathBuf {
    fn tap_mkdir(self) -> Self {
        fs::create_dir_all(&self).unwrap();
        self
    }
}
