use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cycleisp::models::{CycleConfig, CycleIsp, DenoiseMode, Denoiser, DenoiserConfig};
use cycleisp::noise::NoiseParams;
use cycleisp::pipeline::checkpoint::cycle_checkpoint;
use cycleisp::pipeline::io::{read_image, read_raw, write_png16, write_raw};
use cycleisp::pipeline::pairs::save_pair;
use cycleisp::pipeline::{Checkpoint, ModelSpec, PairDomain, PairSample, Provenance};
use cycleisp::synthetic::{corpus, IspVariation};
use cycleisp::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn cycleisp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cycleisp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn identity_denoiser(dir: &Path, mode: DenoiseMode) -> PathBuf {
    let cfg = DenoiserConfig {
        n_rrg: 1,
        n_dab: 1,
        channels: 8,
        ..DenoiserConfig::toy(mode)
    };
    let m = Denoiser::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let path = dir.join(format!("denoiser_{mode}.ckpt"));
    Checkpoint::from_store(ModelSpec::Denoiser { denoiser: cfg }, &m.params, "denoiser", 0, 0)
        .save(&path)
        .unwrap();
    path
}

fn tiny_cycle() -> CycleConfig {
    let mut c = CycleConfig::with_width(8);
    c.rgb2raw.n_rrg = 1;
    c.rgb2raw.n_dab = 1;
    c.raw2rgb.n_rrg = 1;
    c.raw2rgb.n_dab = 1;
    c.color_corr.n_rrg = 1;
    c.color_corr.n_dab = 1;
    c
}

fn cycle_ckpt(dir: &Path) -> PathBuf {
    let m = CycleIsp::new(tiny_cycle(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let path = dir.join("cycle.ckpt");
    cycle_checkpoint(&m, "joint_finetune", 0, 0).save(&path).unwrap();
    path
}

fn image(seed: u64, h: usize, w: usize) -> Tensor {
    let full = corpus(1, h + h % 2, w + w % 2, IspVariation::Fixed, seed).remove(0).srgb;
    full.crop(0, 0, h, w).unwrap()
}

#[test]
fn count_params_reports_layer_formulas() {
    let o = cycleisp(&["count-params"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["components"]["dab"], 83227);
    assert_eq!(v["components"]["rrg"], 702744);
    assert_eq!(v["components"]["denoiser_raw"], 2817956);

    let o = cycleisp(&["count-params", "--set", "stage=denoiser_srgb", "--set", "preset=toy"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn help_lists_every_verb() {
    let o = cycleisp(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for verb in ["train", "synth", "denoise", "eval", "color-match", "count-params"] {
        assert!(text.contains(verb), "{verb} missing from help");
    }
}

#[test]
fn missing_required_argument_is_usage_error() {
    assert_eq!(code(&cycleisp(&["denoise", "--input", "x.png"])), 2);
    assert_eq!(code(&cycleisp(&["denoise", "--input", "x.png", "--checkpoint", "c", "--mode", "cmyk", "--output", "o"])), 2);
}

#[test]
fn identity_srgb_denoise_caps_psnr() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_denoiser(dir.path(), DenoiseMode::Srgb);
    let input = dir.path().join("in.png");
    write_png16(&input, &image(3, 24, 20)).unwrap();
    let out = dir.path().join("out.png");
    let o = cycleisp(&[
        "denoise", "--input", p(&input), "--checkpoint", p(&ckpt), "--mode", "srgb", "--output", p(&out), "--reference", p(&input),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_image(&out).unwrap(), read_image(&input).unwrap());
    let rec: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out.metrics.json")).unwrap()).unwrap();
    assert_eq!(rec["metrics"]["psnr"], 100.0);
}

#[test]
fn denoise_without_reference_writes_no_metrics() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_denoiser(dir.path(), DenoiseMode::Srgb);
    let input = dir.path().join("in.png");
    write_png16(&input, &image(4, 16, 16)).unwrap();
    let out = dir.path().join("out.png");
    let o = cycleisp(&["denoise", "--input", p(&input), "--checkpoint", p(&ckpt), "--mode", "srgb", "--output", p(&out)]);
    assert_eq!(code(&o), 0);
    assert!(out.exists());
    assert!(!dir.path().join("out.metrics.json").exists());
}

#[test]
fn raw_denoise_needs_noise_parameters() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_denoiser(dir.path(), DenoiseMode::Raw);
    let raw = corpus(1, 16, 16, IspVariation::Fixed, 5).remove(0).raw;
    let input = dir.path().join("in.bin");
    write_raw(&input, &raw, None).unwrap();
    let out = dir.path().join("out.bin");
    let args = ["denoise", "--input", p(&input), "--checkpoint", p(&ckpt), "--mode", "raw", "--output", p(&out)];
    assert_eq!(code(&cycleisp(&args)), 2);

    let mut with_noise = args.to_vec();
    with_noise.extend(["--noise", "0.01,0.0001"]);
    let o = cycleisp(&with_noise);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_raw(&out).unwrap().0, raw);

    // Sidecar noise is used when no flag is given.
    write_raw(&input, &raw, Some(NoiseParams { shot: 0.01, read: 0.0001 })).unwrap();
    assert_eq!(code(&cycleisp(&args)), 0);
}

#[test]
fn denoise_mode_mismatch_is_config_error() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_denoiser(dir.path(), DenoiseMode::Raw);
    let input = dir.path().join("in.png");
    write_png16(&input, &image(6, 16, 16)).unwrap();
    let o = cycleisp(&[
        "denoise", "--input", p(&input), "--checkpoint", p(&ckpt), "--mode", "srgb", "--output", p(&dir.path().join("o.png")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
}

#[test]
fn color_match_size_mismatch_is_dimension_error() {
    let dir = TempDir::new().unwrap();
    let ckpt = cycle_ckpt(dir.path());
    let (s, t) = (dir.path().join("s.png"), dir.path().join("t.png"));
    write_png16(&s, &image(7, 16, 16)).unwrap();
    write_png16(&t, &image(8, 16, 18)).unwrap();
    let out = dir.path().join("o.png");
    let o = cycleisp(&["color-match", "--input", p(&s), "--target", p(&t), "--checkpoint", p(&ckpt), "--output", p(&out)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn color_match_keeps_source_size() {
    let dir = TempDir::new().unwrap();
    let ckpt = cycle_ckpt(dir.path());
    let (s, t) = (dir.path().join("s.png"), dir.path().join("t.png"));
    write_png16(&s, &image(9, 15, 17)).unwrap();
    write_png16(&t, &image(10, 15, 17)).unwrap();
    let out = dir.path().join("o.png");
    let o = cycleisp(&["color-match", "--input", p(&s), "--target", p(&t), "--checkpoint", p(&ckpt), "--output", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_image(&out).unwrap().shape(), (3, 15, 17));
}

#[test]
fn eval_of_empty_folder_is_data_error() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_denoiser(dir.path(), DenoiseMode::Srgb);
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = cycleisp(&["eval", "--input", p(&empty), "--checkpoint", p(&ckpt), "--output", p(&dir.path().join("t.json"))]);
    assert_eq!(code(&o), 4);
}

#[test]
fn eval_table_of_identical_pairs() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_denoiser(dir.path(), DenoiseMode::Srgb);
    let pairs = dir.path().join("pairs");
    for i in 0..3 {
        let img = image(20 + i, 16, 16);
        let pair = PairSample::new(img.clone(), img, PairDomain::Srgb, None, Provenance::Real).unwrap();
        save_pair(&pairs.join(format!("p{i}")), &pair).unwrap();
    }
    let table = dir.path().join("t.json");
    let o = cycleisp(&["eval", "--input", p(&pairs), "--checkpoint", p(&ckpt), "--output", p(&table)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&table).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert_eq!(v["mean"]["psnr"], 100.0);
}

#[test]
fn synth_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let ckpt = cycle_ckpt(dir.path());
    let imgs = dir.path().join("imgs");
    for i in 0..2 {
        write_png16(&imgs.join(format!("im{i}.png")), &image(30 + i, 16, 16)).unwrap();
    }
    let run = |out: &Path, mode: &str| {
        let o = cycleisp(&["synth", "--input", p(&imgs), "--checkpoint", p(&ckpt), "--mode", mode, "--output", p(out), "--seed", "5"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    for mode in ["raw", "srgb"] {
        let (a, b) = (dir.path().join(format!("a_{mode}")), dir.path().join(format!("b_{mode}")));
        run(&a, mode);
        run(&b, mode);
        for i in 0..2 {
            for f in ["clean.bin", "noisy.bin", "pair.json"] {
                let (x, y) = (fs::read(a.join(format!("im{i}")).join(f)).unwrap(), fs::read(b.join(format!("im{i}")).join(f)).unwrap());
                assert_eq!(x, y, "{mode} im{i}/{f}");
            }
        }
    }
}

#[test]
fn train_is_reproducible_and_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("scenes");
    for (i, s) in corpus(2, 16, 16, IspVariation::Fixed, 40).iter().enumerate() {
        let d = data.join(format!("s{i}"));
        write_png16(&d.join("clean.png"), &s.srgb).unwrap();
        write_raw(&d.join("clean.bin"), &s.raw, None).unwrap();
    }
    let run = |out: &Path| {
        let o = cycleisp(&[
            "train", "--set", "stage=rgb2raw", "--set", "preset=toy", "--set", "epochs=2", "--set", "data.crop=16",
            "--set", "model.cycle.rgb2raw.channels=8", "--seed", "3", "--input", p(&data), "--output", p(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    for f in ["rgb2raw_last.ckpt", "rgb2raw_best.ckpt", "rgb2raw_metrics.jsonl", "rgb2raw_config.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn joint_stage_without_branches_is_config_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("scenes");
    let s = &corpus(1, 16, 16, IspVariation::Fixed, 41)[0];
    write_png16(&data.join("s0").join("clean.png"), &s.srgb).unwrap();
    write_raw(&data.join("s0").join("clean.bin"), &s.raw, None).unwrap();
    let o = cycleisp(&[
        "train", "--set", "stage=joint_finetune", "--set", "preset=toy", "--input", p(&data), "--output", p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_override_is_config_error() {
    let o = cycleisp(&["count-params", "--set", "model.denoiser.n_rrg=0"]);
    assert_eq!(code(&o), 2);
}
