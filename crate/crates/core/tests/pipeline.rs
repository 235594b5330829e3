mod common;

use std::path::Path;
use std::process::Command;

use rdvc::data::{read_manifest, Corpus, ToyCorpusConfig};
use rdvc::signal::{estimate_f0, median};

const BIN: &str = env!("CARGO_BIN_EXE_rdvc");

fn rdvc(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = rdvc(args);
    assert!(
        out.status.success(),
        "rdvc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for seed in [1, 2] {
        let worst = common::worst_gradient_error(seed, 100);
        assert!(worst < 1e-3, "seed {seed}: {worst}");
    }
}

/// Two-sided one-sample Kolmogorov-Smirnov statistic against U(lo, hi).
fn ks_uniform(mut x: Vec<f64>, lo: f64, hi: f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[test]
fn corpus_factors_are_uniform() {
    let specs = ToyCorpusConfig {
        speakers: 8,
        per_speaker: 200,
        vocab: 12,
        seed: 7,
    }
    .specs()
    .unwrap();
    assert_eq!(specs.len(), 1600);
    let seeds: std::collections::BTreeSet<u64> = specs.iter().map(|s| s.seed).collect();
    assert_eq!(seeds.len(), 1600);
    let d_r = ks_uniform(specs.iter().map(|s| s.rhythm_factor).collect(), 0.6, 1.6);
    let d_p = ks_uniform(specs.iter().map(|s| s.pitch_factor).collect(), 0.7, 1.4);
    assert!(d_r < 0.05 && d_p < 0.05, "{d_r} {d_p}");
    // The statistic does detect a skewed sample.
    let skewed: Vec<f64> = specs.iter().map(|s| s.rhythm_factor.powi(2) / 1.6).collect();
    assert!(ks_uniform(skewed, 0.6, 1.6) > 0.05);
}

#[test]
fn rendered_pitch_follows_the_nominal_f0() {
    let c = Corpus::toy(&ToyCorpusConfig {
        speakers: 4,
        per_speaker: 6,
        vocab: 12,
        seed: 11,
    })
    .unwrap();
    let roster = rdvc::data::SpeakerProfile::roster(4);
    for u in &c.utterances {
        let truth = u.truth.as_ref().unwrap();
        let nominal = truth.nominal_f0(&roster[u.speaker_id]);
        let hz = estimate_f0(&u.wav).voiced_hz();
        let m = median(&hz);
        assert!((m / nominal - 1.0).abs() < 0.05, "{}: {m} vs {nominal}", u.utt_id);
    }
}

#[test]
fn cli_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("ckpt");
    ok(&["synth-corpus", "--speakers", "3", "--per-speaker", "6", "--seed", "5", "--out", s(&data)]);
    let manifest = data.join("manifest.jsonl");
    let rows = read_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), 18);
    let before = std::fs::read(&manifest).unwrap();

    let train = |stage: &str| {
        ok(&[
            stage,
            "--corpus",
            s(&manifest),
            "--out",
            s(&ckpt),
            "--size",
            "tiny",
            "--iterations",
            "4",
            "--batch-size",
            "4",
            "--seed",
            "3",
        ])
    };
    train("train-encoders");
    assert!(ckpt.join("encoders.bin").exists());
    let log = std::fs::read_to_string(ckpt.join("encoders.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    train("train-decoder");
    assert!(ckpt.join("model.bin").exists());
    assert_eq!(std::fs::read_to_string(ckpt.join("decoder.jsonl")).unwrap().lines().count(), 4);

    let wav = |i: usize| format!("{}:spk{}", s(&data.join(&rows[i].wav_path)), rows[i].speaker_id);
    let model = ckpt.join("model.bin");
    let out_wav = dir.path().join("conv.wav");
    let out_mel = dir.path().join("conv.mel");
    ok(&[
        "convert",
        "--ckpt",
        s(&model),
        "--source",
        &wav(0),
        "--target",
        &wav(17),
        "--combo",
        "rhythm",
        "--out",
        s(&out_wav),
        "--emit-mel",
        s(&out_mel),
    ]);
    let mel = rdvc::signal::melfile::read(&out_mel).unwrap();
    let target = rdvc::signal::wav::read_wav(data.join(&rows[17].wav_path), false).unwrap();
    assert_eq!(mel.num_frames(), target.num_frames());
    assert!(out_wav.exists());

    let rec = dir.path().join("rec.mel");
    ok(&["reconstruct", "--ckpt", s(&model), "--input", &wav(3), "--emit-mel", s(&rec)]);

    let report = dir.path().join("report.json");
    let plots = dir.path().join("plots");
    ok(&[
        "evaluate",
        "--ckpt",
        s(&model),
        "--corpus",
        s(&manifest),
        "--pairs",
        "20",
        "--out",
        s(&report),
        "--plot",
        s(&plots),
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("pcc_table") && text.contains("paper_reference"));
    assert!(plots.join("pcc.svg").exists() && plots.join("conversion_rate.svg").exists());
    assert_eq!(std::fs::read(&manifest).unwrap(), before, "inputs are never modified");
}

#[test]
fn cli_exit_codes_and_help() {
    for sub in [
        "synth-corpus",
        "ingest-corpus",
        "augment",
        "train-encoders",
        "train-decoder",
        "convert",
        "reconstruct",
        "evaluate",
    ] {
        let out = rdvc(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--"), "{sub}");
    }
    let out = rdvc(&["evaluate", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(rdvc(&[]).status.code(), Some(1));
    // A missing checkpoint is a runtime failure.
    let out = rdvc(&["reconstruct", "--ckpt", "/nonexistent/model.bin", "--input", "x.wav:spk0", "--out", "/tmp/x.wav"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_corpus_is_reproducible_and_augment_cli_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth-corpus", "--speakers", "2", "--per-speaker", "3", "--seed", "9", "--out", s(d)]);
    }
    assert_eq!(
        std::fs::read(a.join("manifest.jsonl")).unwrap(),
        std::fs::read(b.join("manifest.jsonl")).unwrap()
    );
    let rows = read_manifest(a.join("manifest.jsonl")).unwrap();
    let input = a.join(&rows[0].wav_path);
    let same = dir.path().join("same.wav");
    ok(&["augment", "--input", s(&input), "--kind", "pitch", "--tau", "0.5", "--out", s(&same)]);
    let x = rdvc::signal::wav::read_wav(&input, false).unwrap();
    let y = rdvc::signal::wav::read_wav(&same, false).unwrap();
    assert_eq!(x, y);
    let slow = dir.path().join("slow.wav");
    ok(&["augment", "--input", s(&input), "--kind", "rhythm", "--tau", "0.2", "--out", s(&slow)]);
    assert!(rdvc::signal::wav::read_wav(&slow, false).unwrap().len() > x.len());
    let out = rdvc(&["augment", "--input", s(&input), "--kind", "rhythm", "--tau", "0.5", "--out", s(&slow)]);
    assert_eq!(out.status.code(), Some(0));
    let out = rdvc(&["augment", "--input", s(&input), "--kind", "rhythm", "--tau", "1.5", "--out", s(&slow)]);
    assert_eq!(out.status.code(), Some(1));
}
