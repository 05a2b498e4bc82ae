//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.
//!
//! `ACCEPTANCE_CRITERIA=1,2,5` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use lumafix_autograd::Tensor;
use lumafix_core::checkpoint::Checkpoint;
use lumafix_core::data::{generate_dataset, load_dataset, CorruptionMode, DatagenConfig, Label, PairedSample};
use lumafix_core::diffusion::{forward_sample_rng, posterior, ScalingSchedule, ScheduleConfig, Schedules};
use lumafix_core::dit::{BlockKind, ModelConfig, RestorationNet};
use lumafix_core::gradcheck::{check_module, worst, GroupCheck};
use lumafix_core::metrics::{
    cluster_csv, cluster_report, davies_bouldin, extract_prompt_features, psnr, ssim, Aggregate, CLUSTER_HEADER,
};
use lumafix_core::nn::{Module, ParamStore};
use lumafix_core::pipeline::{evaluate_restored, restore_images};
use lumafix_core::prompt::{
    directional_flatten, directional_unflatten, selective_scan_1d, AdaptivePromptIntegration, GatedScan,
    GlobalPromptScanner, PromptConfig, PromptModule, ScanDirection,
};
use lumafix_core::train::{run_training, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

/// Linear alpha_bar from 0.9999 to 0.02 over eight steps.
fn oracle_alpha_bar(t: usize) -> f64 {
    0.9999 + (0.02 - 0.9999) * (t - 1) as f64 / 7.0
}

/// Block mean over `f x f` tiles of a single-channel `h x w` plane.
fn oracle_block_mean(x: &[f64], h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h / f, w / f);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            let mut s = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    s += x[(y * f + dy) * w + xx * f + dx];
                }
            }
            out[y * ow + xx] = s / (f * f) as f64;
        }
    }
    out
}

fn criterion_1() -> Verdict {
    let sched = ScheduleConfig::default().build().map_err(err)?;
    let x0 = Tensor::from_vec(&[1, 8, 8], (0..64).map(|i| ((i * 37 % 64) as f64) / 63.0).collect()).map_err(err)?;
    let n = 10_000usize;
    let mut worst_z: f64 = 0.0;
    for t in 1..=8 {
        let ab = oracle_alpha_bar(t);
        ensure((sched.noise.alpha_bar(t) - ab).abs() < 1e-12, || {
            format!("alpha_bar({t}) differs from linear")
        })?;
        let u = if t <= 3 { 1 } else { 2 };
        ensure(sched.scaling.factor(t) == u, || {
            format!("U_{t} = {}", sched.scaling.factor(t))
        })?;
        let mu: Vec<f64> = oracle_block_mean(x0.data(), 8, 8, u)
            .iter()
            .map(|v| ab.sqrt() * v)
            .collect();
        let var = 1.0 - ab;
        let d = mu.len();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut r = rng(100 + t as u64);
        for _ in 0..n {
            let xt = forward_sample_rng(&x0, t, &sched, &mut r).map_err(err)?;
            ensure(xt.len() == d, || {
                format!("t={t}: x_t has {} elements, expected {d}", xt.len())
            })?;
            for (i, v) in xt.data().iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..d {
            let m = sum[i] / n as f64;
            let s2 = (sq[i] - n as f64 * m * m) / (n - 1) as f64;
            let z_mean = (m - mu[i]) / (var / n as f64).sqrt();
            let z_var = (s2 - var) / (var * (2.0 / (n - 1) as f64).sqrt());
            worst_z = worst_z.max(z_mean.abs()).max(z_var.abs());
            ensure(z_mean.abs() <= 4.0 && z_var.abs() <= 4.0, || {
                format!("t={t} pixel {i}: mean z {z_mean:.2}, variance z {z_var:.2}")
            })?;
        }
    }
    Ok(format!("8 timesteps x {n} draws, worst |z| = {worst_z:.2} (limit 4)"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Verdict {
    let default = ScheduleConfig::default().build().map_err(err)?;
    let flat = Schedules {
        noise: default.noise.clone(),
        scaling: ScalingSchedule::from_factors(&[1.0; 9]).map_err(err)?,
    };
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for t in 1..=8 {
        let ab = oracle_alpha_bar(t);
        let ab_prev = if t == 1 { 1.0 } else { oracle_alpha_bar(t - 1) };
        let a = ab / ab_prev;
        for _ in 0..16 {
            let (x, y): (f64, f64) = (r.gen_range(-2.0..2.0), r.gen_range(-0.5..1.5));
            let mean = ab_prev.sqrt() * (1.0 - a) / (1.0 - ab) * y + a.sqrt() * (1.0 - ab_prev) / (1.0 - ab) * x;
            let variance = (1.0 - ab_prev) * (1.0 - a) / (1.0 - ab);
            let post = posterior(&Tensor::full(&[1, 1, 1], x), t, &Tensor::full(&[1, 1, 1], y), &flat).map_err(err)?;
            let e = (post.mean.data()[0] - mean).abs().max((post.variance - variance).abs());
            worst = worst.max(e);
            ensure(e <= 1e-10, || format!("t={t} x={x} y={y}: error {e:e}"))?;
        }
    }
    let ab3 = oracle_alpha_bar(3);
    for c in [0.0, 0.25, 0.5, 0.8125, 1.0] {
        let post = posterior(&Tensor::zeros(&[3, 4, 4]), 4, &Tensor::full(&[3, 4, 4], c), &default).map_err(err)?;
        ensure(post.mean.shape() == [3, 8, 8], || {
            format!("upscaled mean shape {:?}", post.mean.shape())
        })?;
        let want = ab3.sqrt() * c;
        ensure(post.mean.data().iter().all(|&v| v == want), || {
            format!("c={c}: mean is not exactly {want}")
        })?;
        ensure((post.variance - (1.0 - ab3)).abs() < 1e-15, || {
            format!("c={c}: variance {}", post.variance)
        })?;
    }
    Ok(format!(
        "same-resolution max error {worst:.1e}; resolution change exact for 5 constants"
    ))
}

// ---------------------------------------------------------------- 3

fn max_err(report: &[GroupCheck]) -> Result<f64, String> {
    Ok(worst(report).ok_or("empty gradient report")?.max_rel_err)
}

fn init(module: &impl Module, seed: u64) -> Result<ParamStore, String> {
    let mut store = ParamStore::new();
    module.init(&mut store, &mut rng(seed)).map_err(err)?;
    Ok(store)
}

fn criterion_3() -> Verdict {
    const H: f64 = 1e-5;
    let mut parts = Vec::new();

    let api = AdaptivePromptIntegration::new("api", 4, 4, 3, 4);
    let store = init(&api, 30)?;
    let x = Tensor::randn(&[4, 8, 8], &mut rng(31));
    let target = Tensor::rand_uniform(&[4, 8, 8], 0.0, 1.0, &mut rng(32));
    let e = max_err(&check_module(&store, &x, |b, v| Ok(api.forward(b, v)?.l1_loss(&target)?), H, 24).map_err(err)?)?;
    ensure(e <= 1e-4, || format!("api_forward rel err {e:e} > 1e-4"))?;
    parts.push(format!("api {e:.1e}"));

    let scan = GatedScan::new("scan", 4);
    let store = init(&scan, 33)?;
    let seq = Tensor::randn(&[64, 4], &mut rng(34));
    let target = Tensor::randn(&[64, 4], &mut rng(35));
    let e = max_err(
        &check_module(
            &store,
            &seq,
            |b, v| Ok(selective_scan_1d(b, v, &scan)?.l1_loss(&target)?),
            H,
            32,
        )
        .map_err(err)?,
    )?;
    ensure(e <= 1e-4, || format!("selective_scan_1d rel err {e:e} > 1e-4"))?;
    parts.push(format!("scan {e:.1e}"));

    let gps = GlobalPromptScanner::new("gps", 4, 4);
    let store = init(&gps, 36)?;
    let prompt = Tensor::rand_uniform(&[4, 8, 8], 0.0, 1.0, &mut rng(37));
    let target = Tensor::rand_uniform(&[4, 8, 8], 0.0, 1.0, &mut rng(38));
    let e = max_err(
        &check_module(
            &store,
            &x,
            |b, v| Ok(gps.forward(b, v, Some(b.constant(prompt.clone())))?.l1_loss(&target)?),
            H,
            24,
        )
        .map_err(err)?,
    )?;
    ensure(e <= 1e-4, || format!("gps_forward rel err {e:e} > 1e-4"))?;
    let module = PromptModule::new(
        "pm",
        PromptConfig {
            channels: 4,
            prompt_channels: 4,
            components: 3,
            prompt_size: 4,
            use_api: true,
            use_gps: true,
        },
    );
    let store = init(&module, 39)?;
    let e2 =
        max_err(&check_module(&store, &x, |b, v| Ok(module.forward(b, v)?.l1_loss(&target)?), H, 24).map_err(err)?)?;
    ensure(e2 <= 1e-4, || format!("api+gps prompt module rel err {e2:e} > 1e-4"))?;
    parts.push(format!("gps {e:.1e} (with api {e2:.1e})"));

    let cfg = ModelConfig::tiny();
    ensure(cfg.levels == 2, || "tiny config is not 2-level".into())?;
    let net = RestorationNet::new(cfg).map_err(err)?;
    let store = net.init_params(40).map_err(err)?;
    let mut r = rng(41);
    let x = Tensor::randn(&[3, 8, 8], &mut r);
    let cond = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
    let target = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
    let e = max_err(
        &check_module(
            &store,
            &x,
            |b, v| Ok(net.forward(b, v, b.constant(cond.clone()), 2)?.y.l1_loss(&target)?),
            H,
            12,
        )
        .map_err(err)?,
    )?;
    ensure(e <= 1e-3, || format!("network rel err {e:e} > 1e-3"))?;
    parts.push(format!("network {e:.1e}"));
    Ok(format!("max rel err: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Verdict {
    let grid = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).map_err(err)?;
    let expect = [
        (ScanDirection::TopLeftToBottomRight, [1.0, 2.0, 3.0, 4.0]),
        (ScanDirection::BottomRightToTopLeft, [4.0, 3.0, 2.0, 1.0]),
        (ScanDirection::TopRightToBottomLeft, [2.0, 4.0, 1.0, 3.0]),
        (ScanDirection::BottomLeftToTopRight, [3.0, 1.0, 4.0, 2.0]),
    ];
    for (d, want) in expect {
        let got = directional_flatten(&grid, d).map_err(err)?;
        ensure(got.data() == want, || format!("{d}: {:?} != {want:?}", got.data()))?;
    }
    let mut r = rng(4);
    for _ in 0..200 {
        let (c, h, w) = (r.gen_range(1..=4), r.gen_range(1..=16), r.gen_range(1..=16));
        let x = Tensor::rand_uniform(&[c, h, w], -1.0, 1.0, &mut r);
        let seq = Tensor::rand_uniform(&[h * w, c], -1.0, 1.0, &mut r);
        for d in ScanDirection::ALL {
            let back = directional_unflatten(&directional_flatten(&x, d).map_err(err)?, d, h, w).map_err(err)?;
            ensure(back == x, || format!("{d} {c}x{h}x{w}: unflatten(flatten(x)) != x"))?;
            let again = directional_flatten(&directional_unflatten(&seq, d, h, w).map_err(err)?, d).map_err(err)?;
            ensure(again == seq, || format!("{d} {c}x{h}x{w}: flatten(unflatten(s)) != s"))?;
        }
    }
    Ok("4 enumeration examples exact; 200 random shapes round-trip in all 4 directions".into())
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Verdict {
    let close =
        |name: &str, got: f64, want: f64| ensure((got - want).abs() <= 1e-6, || format!("{name}: {got} vs {want}"));
    let z = Tensor::zeros(&[3, 16, 16]);
    let p20 = psnr(&z, &Tensor::full(&[3, 16, 16], 0.1), 1.0).map_err(err)?;
    close("psnr 0 vs 0.1", p20, 20.0)?;
    let p6 = psnr(&z, &Tensor::full(&[3, 16, 16], 0.5), 1.0).map_err(err)?;
    close("psnr mse 0.25", p6, 6.0206)?;
    let s = ssim(&Tensor::zeros(&[1, 16, 16]), &Tensor::full(&[1, 16, 16], 1.0), 1.0).map_err(err)?;
    close("ssim 0 vs 1", s, 9.999e-5)?;
    let f = vec![vec![0.0, 0.0], vec![0.0, 2.0], vec![10.0, 0.0], vec![10.0, 2.0]];
    let d = davies_bouldin(&f, &[0, 0, 1, 1]).map_err(err)?;
    close("dbi hand case", d, 0.2)?;
    Ok(format!("psnr {p20:.6} / {p6:.6} dB, ssim {s:.6e}, dbi {d:.6}"))
}

// ---------------------------------------------------------------- 6-8

const SEED: u64 = 7;
const PAIRS: usize = 200;
const TRAIN_PAIRS: usize = 160;
const STEPS: usize = 400;

fn protocol() -> TrainConfig {
    TrainConfig {
        epochs: 1000,
        learning_rate: 1e-3,
        batch_size: 4,
        max_steps: Some(STEPS),
        patch_size: Some(32),
        grad_clip: Some(1.0),
        seed: SEED,
    }
}

struct Split {
    train: Vec<PairedSample>,
    test: Vec<PairedSample>,
}

struct Trained {
    checkpoint: PathBuf,
    restored: Aggregate,
    baseline: Aggregate,
}

struct Ctx {
    dir: tempfile::TempDir,
    split: Option<Split>,
    main: Option<Trained>,
}

impl Ctx {
    fn split(&mut self) -> Result<&Split, String> {
        if self.split.is_none() {
            let cfg = DatagenConfig {
                count: PAIRS,
                mode: CorruptionMode::EvShift,
                image_size: 64,
                seed: SEED,
                ..DatagenConfig::default()
            };
            let dir = self.dir.path().join("data");
            let manifest = generate_dataset(None, &dir, &cfg).map_err(err)?;
            let (over, under) = (manifest.count(Label::Overexposed), manifest.count(Label::Underexposed));
            ensure(over == 100 && under == 100, || {
                format!("dataset split {over} over / {under} under")
            })?;
            let mut all = load_dataset(&dir).map_err(err)?;
            ensure(all.len() == PAIRS, || format!("loaded {} pairs", all.len()))?;
            let test = all.split_off(TRAIN_PAIRS);
            self.split = Some(Split { train: all, test });
        }
        Ok(self.split.as_ref().expect("split set above"))
    }

    fn train_and_eval(&mut self, name: &str, model: ModelConfig) -> Result<Trained, String> {
        let out = self.dir.path().join(name);
        let split = self.split()?;
        let started = Instant::now();
        let outcome = run_training(
            &split.train,
            &model,
            &ScheduleConfig::default(),
            &protocol(),
            &out,
            &mut |r| {
                if r.step % 50 == 0 {
                    eprintln!(
                        "  [{name}] step {} loss {:.4} ({:.0}s)",
                        r.step,
                        r.loss,
                        started.elapsed().as_secs_f64()
                    );
                }
            },
        )
        .map_err(err)?;
        ensure(outcome.records.len() == STEPS, || {
            format!("{} updates", outcome.records.len())
        })?;
        let ckpt = Checkpoint::load(&outcome.checkpoint).map_err(err)?;
        let net = ckpt.network(&outcome.checkpoint).map_err(err)?;
        let schedules = ckpt.schedule.build().map_err(err)?;
        let inputs: Vec<Tensor> = split.test.iter().map(|s| s.input.clone()).collect();
        let restored = restore_images(&net, &ckpt.params, &schedules, &inputs, SEED).map_err(err)?;
        let (ours, base) = evaluate_restored(&restored, &split.test).map_err(err)?;
        let trained = Trained {
            checkpoint: outcome.checkpoint,
            restored: ours.aggregate().map_err(err)?,
            baseline: base.aggregate().map_err(err)?,
        };
        eprintln!("  [{name}] done in {:.0}s", started.elapsed().as_secs_f64());
        Ok(trained)
    }

    fn main_model(&mut self) -> Result<&Trained, String> {
        if self.main.is_none() {
            let t = self.train_and_eval("main", ModelConfig::default())?;
            self.main = Some(t);
        }
        Ok(self.main.as_ref().expect("main set above"))
    }
}

fn criterion_6(ctx: &mut Ctx) -> Verdict {
    let cfg = ModelConfig::default();
    ensure(cfg.levels == 4 && cfg.base_channels == 16, || {
        "default model is not the desk config".into()
    })?;
    ensure(ScheduleConfig::default().steps == 8, || {
        "default schedule is not T=8".into()
    })?;
    let t = ctx.main_model()?;
    let (r, b) = (t.restored, t.baseline);
    let gain = r.mean_psnr - b.mean_psnr;
    let detail = format!(
        "{STEPS} steps; psnr {:.2} -> {:.2} dB (gain {gain:.2}, need 2.00); ssim {:.4} -> {:.4}",
        b.mean_psnr, r.mean_psnr, b.mean_ssim, r.mean_ssim
    );
    ensure(gain >= 2.0 && r.mean_ssim > b.mean_ssim, || detail.clone())?;
    Ok(detail)
}

fn criterion_7(ctx: &mut Ctx) -> Verdict {
    let base = ModelConfig::default();
    let variants = [
        (
            "no_api",
            ModelConfig {
                use_api: false,
                ..base.clone()
            },
        ),
        (
            "no_gps",
            ModelConfig {
                use_gps: false,
                ..base.clone()
            },
        ),
        (
            "plain_unet",
            ModelConfig {
                block_kind: BlockKind::Conv,
                ..base.clone()
            },
        ),
    ];
    let mut rows = Vec::new();
    if let Some(m) = &ctx.main {
        rows.push(format!("full {:.2}/{:.4}", m.restored.mean_psnr, m.restored.mean_ssim));
    }
    for (name, cfg) in variants {
        let t = ctx.train_and_eval(name, cfg)?;
        let r = t.restored;
        ensure(r.mean_psnr.is_finite() && r.mean_ssim.is_finite(), || {
            format!("{name}: non-finite metrics")
        })?;
        rows.push(format!("{name} {:.2}/{:.4}", r.mean_psnr, r.mean_ssim));
    }
    Ok(format!("psnr/ssim: {}", rows.join(", ")))
}

fn criterion_8(ctx: &mut Ctx) -> Verdict {
    let path = ctx.main_model()?.checkpoint.clone();
    let ckpt = Checkpoint::load(&path).map_err(err)?;
    let net = ckpt.network(&path).map_err(err)?;
    let schedules = ckpt.schedule.build().map_err(err)?;
    let out = ctx.dir.path().join("clusters.csv");
    let test = &ctx.split()?.test;
    let blocks = extract_prompt_features(&net, &ckpt.params, &schedules, test).map_err(err)?;
    let rows = cluster_report(&blocks).map_err(err)?;
    let csv = cluster_csv(&rows);
    std::fs::write(&out, &csv).map_err(err)?;
    check_cluster_csv(&std::fs::read_to_string(&out).map_err(err)?, &net.config, test.len())?;
    let trend: Vec<String> = rows.iter().map(|r| format!("block {} {:.3}", r.block, r.dbi)).collect();
    Ok(format!("dbi {}", trend.join(", ")))
}

fn check_cluster_csv(csv: &str, cfg: &ModelConfig, samples: usize) -> Result<(), String> {
    let mut lines = csv.lines();
    ensure(lines.next() == Some(CLUSTER_HEADER), || "missing header".into())?;
    let body: Vec<&str> = lines.collect();
    ensure(body.len() == cfg.levels - 1, || {
        format!("{} rows for {} prompt blocks", body.len(), cfg.levels - 1)
    })?;
    for (i, line) in body.iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        ensure(f.len() == 5, || format!("row {line:?} has {} fields", f.len()))?;
        let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad integer {s:?} in {line:?}"));
        let (block, level, channels, n) = (num(f[0])?, num(f[1])?, num(f[2])?, num(f[3])?);
        ensure(block == i + 1, || format!("block {block} at row {i}"))?;
        ensure(level == cfg.levels - 2 - i, || {
            format!("block {block} at level {level}")
        })?;
        ensure(channels == cfg.width(level), || {
            format!("block {block} has {channels} channels")
        })?;
        ensure(n == samples, || format!("block {block} pooled {n} samples"))?;
        let dbi: f64 = f[4].parse().map_err(|_| format!("bad dbi in {line:?}"))?;
        ensure(dbi.is_finite() && dbi >= 0.0, || format!("block {block} dbi {dbi}"))?;
        ensure(f[4].split('.').nth(1).is_some_and(|d| d.len() == 6), || {
            format!("dbi {:?} not 6 decimals", f[4])
        })?;
    }
    Ok(())
}

// ---------------------------------------------------------------- driver

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<Duration>,
    run: fn(&mut Ctx) -> Verdict,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "forward statistics",
            budget: Some(Duration::from_secs(30)),
            run: |_| criterion_1(),
        },
        Criterion {
            id: 2,
            name: "reverse-step algebra",
            budget: Some(Duration::from_secs(5)),
            run: |_| criterion_2(),
        },
        Criterion {
            id: 3,
            name: "gradient suite",
            budget: Some(Duration::from_secs(120)),
            run: |_| criterion_3(),
        },
        Criterion {
            id: 4,
            name: "scan properties",
            budget: Some(Duration::from_secs(5)),
            run: |_| criterion_4(),
        },
        Criterion {
            id: 5,
            name: "metric oracles",
            budget: Some(Duration::from_secs(5)),
            run: |_| criterion_5(),
        },
        Criterion {
            id: 6,
            name: "end-to-end toy restoration",
            budget: Some(Duration::from_secs(60 * 60)),
            run: criterion_6,
        },
        Criterion {
            id: 7,
            name: "ablation harness",
            budget: None,
            run: criterion_7,
        },
        Criterion {
            id: 8,
            name: "prompt-feature diagnostic",
            budget: None,
            run: criterion_8,
        },
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut ctx = Ctx {
        dir: tempfile::tempdir().expect("temp dir"),
        split: None,
        main: None,
    };
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id)))
    {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(|| (c.run)(&mut ctx)))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let elapsed = start.elapsed();
        let verdict = match (verdict, c.budget) {
            (Ok(d), Some(b)) if elapsed > b => Err(format!("{d}; over the {}s budget", b.as_secs())),
            (v, _) => v,
        };
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if verdict.is_err() {
            failed += 1;
        }
        println!(
            "criterion {} ({}): {tag} [{:.1}s] {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}
