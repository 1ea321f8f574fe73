use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srlab_core::data::synthetic_image;
use srlab_core::imaging::{load_image, psnr, save_image};
use srlab_core::models::{load_checkpoint, Model};

fn srlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srlab"))
        .args(args)
        .env("SRLAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = srlab(args);
    assert!(
        out.status.success(),
        "srlab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_hr(dir: &Path, n: u64, side: usize) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        save_image(&synthetic_image(i, side, side), dir.join(format!("img{i:02}.png"))).unwrap();
    }
}

/// Every file under `root`, relative path and bytes.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TINY: &str = "[model]\nkind = baseline\nn_blocks = 1\nn_feats = 4\nscale = 2\n\
[train]\nsteps = 3\nbatch = 2\nlr = 0.001\nval_every = 2\ncheckpoint_every = 2\n\
[data]\nlr_patch = 8\nval_count = 1\n";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        write_hr(&f.path("hr"), 4, 32);
        ok(&["make-dataset", "--hr", s(&f.path("hr")), "--scale", "2", "--out", s(&f.path("data"))]);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn train(&self, cfg: &Path, out: &str, extra: &[&str]) -> Output {
        let out = self.path(out);
        let data = self.path("data");
        let mut args = vec!["train", "--config", s(cfg), "--data", s(&data), "--out", s(&out)];
        args.extend_from_slice(extra);
        srlab(&args)
    }
}

#[test]
fn make_dataset_halves_and_is_reproducible() {
    let f = Fixture::new();
    fs::write(f.path("hr/notes.txt"), "not an image").unwrap();
    let again = f.path("again");
    let out = srlab(&["make-dataset", "--hr", s(&f.path("hr")), "--scale", "2", "--out", s(&again)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote 4 pairs"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("notes.txt"));
    let lr = fs::read_dir(again.join("LRx2")).unwrap().count();
    assert_eq!(lr, 4);
    let img = load_image(again.join("LRx2/img00.png")).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));
    assert_eq!(tree(&f.path("data")), tree(&again));

    let noisy = |dir: &str| {
        ok(&[
            "make-dataset", "--hr", s(&f.path("hr")), "--scale", "2", "--noise-sigma", "5", "--seed", "3", "--out",
            s(&f.path(dir)),
        ]);
        tree(&f.path(dir))
    };
    assert_eq!(noisy("n1"), noisy("n2"));
    assert_eq!(code(&srlab(&["make-dataset", "--hr", s(&f.path("missing")), "--scale", "2", "--out", s(&f.path("x"))])), 2);
    assert_eq!(code(&srlab(&["make-dataset", "--hr", s(&f.path("hr")), "--scale", "3", "--out", s(&f.path("x"))])), 1);
}

#[test]
fn noise_round_trip_through_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    write_hr(&hr, 6, 96);
    let data = dir.path().join("noisy");
    ok(&["make-dataset", "--hr", s(&hr), "--scale", "2", "--noise-sigma", "10", "--seed", "1", "--out", s(&data)]);
    let csv = dir.path().join("noise.csv");
    let est = |lr: &Path, threshold: &str| {
        srlab(&[
            "estimate-noise", "--hr", s(&data.join("HR")), "--lr", s(lr), "--scale", "2", "--flat-threshold", threshold,
            "--out", s(&csv),
        ])
    };
    assert_eq!(code(&est(&data.join("LRx2"), "1.0")), 0);
    let text = fs::read_to_string(&csv).unwrap();
    let pooled: f64 = text.lines().next().unwrap().strip_prefix("# pooled_std=").unwrap().parse().unwrap();
    assert!((pooled - 10.0).abs() <= 1.0, "pooled {pooled}");
    assert_eq!(text.lines().nth(1), Some("bin_center,count"));
    assert_eq!(text.lines().skip(2).count(), 256);

    let clean = dir.path().join("clean");
    ok(&["make-dataset", "--hr", s(&hr), "--scale", "2", "--out", s(&clean)]);
    let out = srlab(&[
        "estimate-noise", "--hr", s(&clean.join("HR")), "--lr", s(&clean.join("LRx2")), "--scale", "2", "--out", s(&csv),
    ]);
    let printed: f64 = String::from_utf8_lossy(&out.stdout)
        .split_whitespace()
        .next()
        .unwrap()
        .strip_prefix("pooled_std=")
        .unwrap()
        .parse()
        .unwrap();
    assert!(printed <= 0.8);

    let out = est(&data.join("LRx2"), "0");
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient flat area"));
}

#[test]
fn zero_step_training_writes_initialization() {
    let f = Fixture::new();
    let cfg = f.config("tiny.cfg", TINY);
    let out = f.train(&cfg, "zero.ckpt", &["--set", "train.steps=0", "--set", "train.seed=5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = load_checkpoint::<f32>(&f.path("zero.ckpt")).unwrap();
    assert_eq!(ckpt.step, 0);
    let fresh = Model::<f32>::new(ckpt.model.spec, 5).unwrap();
    for (a, b) in fresh.params.iter().zip(ckpt.model.params.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value.data(), b.value.data());
    }
    let resolved = fs::read_to_string(f.path("zero.ckpt.config")).unwrap();
    assert!(resolved.contains("steps = 0"));
    assert!(resolved.contains("[data]"));
    assert_eq!(fs::read_to_string(f.path("zero.ckpt.metrics.csv")).unwrap(), "step,loss,val_psnr,val_ssim,lr\n");
}

#[test]
fn training_is_reproducible_and_resumable() {
    let f = Fixture::new();
    let cfg = f.config("tiny.cfg", TINY);
    let halving = ["--set", "train.lr_halve_every=2"];
    let a = f.train(&cfg, "a.ckpt", &halving);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(code(&f.train(&cfg, "b.ckpt", &halving)), 0);
    assert_eq!(fs::read(f.path("a.ckpt")).unwrap(), fs::read(f.path("b.ckpt")).unwrap());
    let metrics = fs::read_to_string(f.path("a.ckpt.metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read_to_string(f.path("b.ckpt.metrics.csv")).unwrap());
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.lines().nth(2).unwrap().split(',').nth(2).is_some_and(|v| !v.is_empty()));

    let r = f.train(
        &cfg,
        "a.ckpt",
        &["--set", "train.steps=6", "--set", "train.lr_halve_every=2", "--resume", s(&f.path("a.ckpt"))],
    );
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("at step 3"));
    assert_eq!(load_checkpoint::<f32>(&f.path("a.ckpt")).unwrap().step, 6);
    let metrics = fs::read_to_string(f.path("a.ckpt.metrics.csv")).unwrap();
    let steps: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["1", "2", "3", "4", "5", "6"]);
    let lrs: Vec<f64> = metrics.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(lrs, [0.001, 0.001, 0.0005, 0.0005, 0.00025, 0.00025]);

    let uninterrupted = f.train(&cfg, "c.ckpt", &["--set", "train.steps=6", "--set", "train.lr_halve_every=2"]);
    assert_eq!(code(&uninterrupted), 0);
    let a = load_checkpoint::<f32>(&f.path("a.ckpt")).unwrap();
    let c = load_checkpoint::<f32>(&f.path("c.ckpt")).unwrap();
    for (x, y) in a.model.params.iter().zip(c.model.params.iter()) {
        assert_eq!(x.value.data(), y.value.data(), "{}", x.name);
    }
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let cfg = f.config("tiny.cfg", TINY);
    let bad = f.config("bad.cfg", "[train]\nmomentum = 0.9\n");
    let out = f.train(&bad, "x.ckpt", &[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.momentum"));
    assert_eq!(code(&f.train(&cfg, "x.ckpt", &["--set", "model.width=3"])), 1);
    assert_eq!(code(&srlab(&["train", "--config", s(&cfg)])), 1);
    assert_eq!(code(&srlab(&["frobnicate"])), 1);
    assert_eq!(code(&srlab(&["--threads", "0", "eval", "--model", "m", "--hr", "h", "--lr", "l", "--out", "o"])), 1);
    assert_eq!(code(&srlab(&["--help"])), 0);

    let nan = f.train(&cfg, "nan.ckpt", &["--set", "train.lr=1e30", "--set", "train.steps=20"]);
    assert_eq!(code(&nan), 3, "{}", String::from_utf8_lossy(&nan.stderr));
    let msg = String::from_utf8_lossy(&nan.stderr);
    assert!(msg.contains("non-finite loss at step"), "{msg}");
    assert!(msg.contains("(lr 1"), "{msg}");

    let missing = srlab(&["train", "--config", s(&cfg), "--data", s(&f.path("nowhere")), "--out", s(&f.path("y.ckpt"))]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn composite_training_from_donors() {
    let f = Fixture::new();
    let den = f.config(
        "den.cfg",
        "[model]\nkind = denoiser\ndenoiser_depth = 3\ndenoiser_feats = 4\nscale = 2\n[train]\nsteps = 2\nbatch = 1\n[data]\nlr_patch = 8\n",
    );
    assert_eq!(code(&f.train(&den, "den.ckpt", &[])), 0);
    let sr = f.config("sr.cfg", TINY);
    assert_eq!(code(&f.train(&sr, "sr.ckpt", &["--set", "data.val_count=0"])), 0);
    for kind in ["dnsr", "dnisr"] {
        let cfg = f.config(
            "comp.cfg",
            &format!(
                "[model]\nkind = {kind}\ndenoiser_ckpt = {}\nsr_ckpt = {}\n[train]\nsteps = 2\nbatch = 1\n[data]\nlr_patch = 8\n",
                f.path("den.ckpt").display(),
                f.path("sr.ckpt").display()
            ),
        );
        let out = f.train(&cfg, &format!("{kind}.ckpt"), &[]);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout.contains("init-equivalence check passed"), "{stdout}");
        let ckpt = load_checkpoint::<f32>(&f.path(&format!("{kind}.ckpt"))).unwrap();
        assert_eq!(ckpt.model.spec.sr.n_feats, 4);
        assert_eq!(ckpt.model.spec.denoiser.depth, 3);
    }
    let only_one = f.config(
        "one.cfg",
        &format!("[model]\nkind = dnsr\nsr_ckpt = {}\n", f.path("sr.ckpt").display()),
    );
    assert_eq!(code(&f.train(&only_one, "one.ckpt", &[])), 1);
}

#[test]
fn staged_pyramid_training() {
    let f = Fixture::new();
    let cfg = f.config(
        "adrsr.cfg",
        "[model]\nkind = adrsr\nlevels = 2\nn_blocks = 1\nn_feats = 4\n[train]\nsteps = 1\nbatch = 1\n[data]\nlr_patch = 16\n",
    );
    let sched = f.config("sched.txt", "level=1 steps=2\nlevel=0 steps=1\njoint steps=2\n");
    let out = f.train(&cfg, "ad.ckpt", &["--adrsr-schedule", s(&sched)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_checkpoint::<f32>(&f.path("ad.ckpt")).unwrap().step, 5);
    let bad = f.config("bad.txt", "level=0 steps=1\nlevel=1 steps=1\njoint steps=1\n");
    assert_eq!(code(&f.train(&cfg, "ad2.ckpt", &["--adrsr-schedule", s(&bad)])), 1);
    let default = f.train(&cfg, "ad3.ckpt", &[]);
    assert_eq!(code(&default), 0);
    assert_eq!(load_checkpoint::<f32>(&f.path("ad3.ckpt")).unwrap().step, 3);
}

#[test]
fn upscale_shapes_and_determinism() {
    let f = Fixture::new();
    let cfg = f.config("x8.cfg", "[model]\nn_blocks = 1\nn_feats = 4\nscale = 8\n[train]\nsteps = 0\n[data]\nlr_patch = 4\n");
    let data8 = f.path("data8");
    ok(&["make-dataset", "--hr", s(&f.path("hr")), "--scale", "8", "--out", s(&data8)]);
    let model = f.path("x8.ckpt");
    ok(&["train", "--config", s(&cfg), "--data", s(&data8), "--out", s(&model)]);
    let input = f.path("in.png");
    save_image(&synthetic_image(77, 32, 32), &input).unwrap();
    for flags in [&[][..], &["--self-ensemble"][..], &["--rgb-shuffle"][..]] {
        let (a, b) = (f.path("a.png"), f.path("b.png"));
        for out in [&a, &b] {
            let mut args = vec!["upscale", "--model", s(&model), "--in", s(&input), "--out", s(out)];
            args.extend_from_slice(flags);
            ok(&args);
        }
        let img = load_image(&a).unwrap();
        assert_eq!((img.width(), img.height()), (256, 256));
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}

#[test]
fn eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = |r: &str| dir.path().join(r);
    write_hr(&p("hr"), 10, 24);
    ok(&["make-dataset", "--hr", s(&p("hr")), "--scale", "2", "--out", s(&p("data"))]);
    let cfg = p("m.cfg");
    fs::write(&cfg, TINY).unwrap();
    ok(&["train", "--config", s(&cfg), "--data", s(&p("data")), "--out", s(&p("m.ckpt")), "--set", "train.steps=2"]);
    let (hr, lr) = (p("data/HR"), p("data/LRx2"));
    let model = p("m.ckpt");

    ok(&["eval", "--model", s(&model), "--hr", s(&hr), "--lr", s(&lr), "--out", s(&p("plain.csv"))]);
    let text = fs::read_to_string(p("plain.csv")).unwrap();
    let rows: Vec<f64> = text
        .lines()
        .skip_while(|l| !l.starts_with("image,"))
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 10);
    let mean: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("# psnr mean="))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((mean - rows.iter().sum::<f64>() / 10.0).abs() <= 1e-9);

    ok(&[
        "eval", "--model", s(&model), "--model-b", s(&model), "--hr", s(&hr), "--lr", s(&lr), "--out", s(&p("self.csv")),
    ]);
    let text = fs::read_to_string(p("self.csv")).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "rank,image,psnr,ssim,psnr_other,delta");
    assert_eq!(body.len(), 11);
    assert!(body[1..].iter().all(|l| l.ends_with(",0")));

    let list = p("val.txt");
    fs::write(&list, "img03\nimg07\n").unwrap();
    ok(&[
        "eval", "--model", s(&model), "--hr", s(&hr), "--lr", s(&lr), "--val-list", s(&list), "--out", s(&p("two.csv")),
    ]);
    let text = fs::read_to_string(p("two.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("img")).count(), 2);

    // upscale with and without channel shuffling agrees with the paired report
    ok(&[
        "eval", "--model", s(&model), "--model-b", s(&model), "--rgb-shuffle", "--hr", s(&hr), "--lr", s(&lr), "--out",
        s(&p("pair.csv")),
    ]);
    let text = fs::read_to_string(p("pair.csv")).unwrap();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let name = cols[1];
        let delta: f64 = cols[5].parse().unwrap();
        let input = lr.join(format!("{name}.png"));
        let target = load_image(hr.join(format!("{name}.png"))).unwrap();
        let (a, b) = (p("shuf.png"), p("single.png"));
        ok(&["upscale", "--model", s(&model), "--in", s(&input), "--out", s(&a), "--rgb-shuffle"]);
        ok(&["upscale", "--model", s(&model), "--in", s(&input), "--out", s(&b)]);
        let direct = psnr(&load_image(&a).unwrap(), &target).unwrap() - psnr(&load_image(&b).unwrap(), &target).unwrap();
        assert!((direct - delta).abs() <= 1e-9, "{name}: {direct} vs {delta}");
    }

    let empty = p("empty");
    fs::create_dir_all(empty.join("HR")).unwrap();
    fs::create_dir_all(empty.join("LRx2")).unwrap();
    let out = srlab(&[
        "eval", "--model", s(&model), "--hr", s(&empty.join("HR")), "--lr", s(&empty.join("LRx2")), "--out", s(&p("e.csv")),
    ]);
    assert_eq!(code(&out), 2);
}
