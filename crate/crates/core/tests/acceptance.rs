//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Arguments not starting with `-` filter criteria
//! by substring, e.g. `cargo test --test acceptance -- fid`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::oracles::*;
use common::*;
use nalgebra::{DMatrix, DVector};
use objcomp::data::*;
use objcomp::diffusion::*;
use objcomp::encoder::{drop_should_fire, Encoder, EncoderConfig, BACKBONE_GROUP};
use objcomp::eval::{fid, silhouette, FeatureStats};
use objcomp::training::*;
use objcomp::{ImageBuffer, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

// Desk-scale trend setup: 16 px images, 20 objects x 12 views.
const TREND_SIZE: usize = 16;
const TREND_DATA_SEED: u64 = 0;
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const STAGE1_EPOCHS: usize = 1500;
const STAGE2_EPOCHS: usize = 200;
const TREND_LR: f64 = 1e-3;
const MIN_SILHOUETTE_GAIN: f64 = 0.1;
const VALIDATION_TUPLES_PER_SCENE: u64 = 2;
const VALIDATION_DRAWS: u64 = 8;

const OVERFIT_EXAMPLES: usize = 8;
const OVERFIT_EPOCHS: usize = 3000;
const MIN_OVERFIT_PSNR: f64 = 20.0;

fn trend_config() -> ExperimentConfig {
    let n = TREND_SIZE;
    ExperimentConfig {
        encoder: EncoderConfig {
            image_size: n,
            patch_size: 4,
            embed_dim: 64,
            depth: 2,
            heads: 2,
            adapter_depth: 1,
            cond_dim: 64,
        },
        denoiser: DenoiserConfig {
            image_size: n,
            base_channels: 16,
            channel_multipliers: vec![1, 2, 2],
            attn_resolutions: vec![n / 4, n / 8],
            cond_dim: 64,
            ..DenoiserConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn trend_dataset() -> Dataset<f32> {
    Dataset::synthesize(&SyntheticConfig {
        objects: 20,
        views_per_object: 12,
        frames_per_scene: 12,
        image_size: TREND_SIZE,
        seed: TREND_DATA_SEED,
    })
    .unwrap()
}

/// Stage-1 plan with rates scaled for the small model; the backbone keeps
/// one tenth of the adapter rate.
fn stage1_plan(seed: u64, epochs: usize) -> TrainPlan {
    TrainPlan {
        batch_size: 8,
        epochs,
        seed,
        lr_adapter: TREND_LR,
        lr_unet: TREND_LR,
        lr_encoder: TREND_LR / 10.0,
        ..TrainPlan::stage1()
    }
}

fn stage2_plan(seed: u64, epochs: usize) -> TrainPlan {
    TrainPlan {
        batch_size: 8,
        epochs,
        seed,
        lr_adapter: TREND_LR,
        lr_unet: TREND_LR / 10.0,
        lr_encoder: TREND_LR / 10.0,
        ..TrainPlan::stage2()
    }
}

fn embedding_silhouette(enc: &Encoder<f32>, ds: &Dataset<f32>) -> f64 {
    let mut emb = Vec::new();
    let mut labels = Vec::new();
    for (&object, views) in &ds.multiview {
        for v in views {
            emb.push(enc.embed(&v.image).unwrap().iter().map(|&x| x as f64).collect());
            labels.push(object);
        }
    }
    silhouette(&emb, &labels).unwrap()
}

// ---------------------------------------------------------------------------

fn background_preservation() -> Outcome {
    let start = Instant::now();
    let n = 16;
    let schedule = make_schedule(100).unwrap();
    let variants = [Variant::CrossAttention, Variant::Concat, Variant::ControlNet];
    let models: Vec<_> = variants
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let den = Denoiser::<f32>::new(tiny_denoiser(n, v), 10 + i as u64).unwrap();
            let enc = Encoder::<f32>::new(tiny_encoder(n, 4), 20 + i as u64).unwrap();
            (den, enc)
        })
        .collect();
    let mut r = rng(31);
    let mut worst = 0.0f64;
    let mut masked_pixels = 0usize;
    for i in 0..50u64 {
        let (den, enc) = &models[i as usize % 3];
        let background = random_image::<f32>(n, &mut r);
        let blob = random_blob(n, &mut r);
        let level = MaskLevel::new(r.random_range(1..=4)).unwrap();
        let mask = coarsen_mask(&blob, level, i).unwrap();
        let object = random_image::<f32>(n, &mut r);
        let mut req = SampleRequest::new(background.clone(), mask.clone(), object);
        req.steps = r.random_range(1..=12);
        req.cfg_scale = r.random_range(0.0..5.0);
        req.seed = i;
        let out = sample_composite(&req, den, enc, &schedule).unwrap();
        for row in 0..n {
            for col in 0..n {
                if mask.get(row, col) == 0.0 {
                    masked_pixels += 1;
                    for (a, b) in out.pixel(row, col).iter().zip(background.pixel(row, col)) {
                        worst = worst.max((a - b).abs() as f64);
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-6, "max deviation {worst:e} on unmasked pixels");
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!("50 requests, {masked_pixels} unmasked pixels, max deviation {worst:e}"))
}

fn loss_oracles() -> Outcome {
    let (den, enc) = models();
    let timesteps = 50;
    let schedule = make_schedule(timesteps).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..6u64 {
        let mut r = rng(700 + seed);
        let comp: Vec<_> = (0..2).map(|_| random_composite::<f64>(N, &mut r)).collect();
        let got = loss_comp(&comp, &den, &enc, &schedule, LossOptions::new(0.5, seed)).unwrap().loss;
        worst = worst.max((got - oracle_loss_comp(&comp, &den, &enc, timesteps, seed, 0.5)).abs());

        let pairs: Vec<_> = (0..2).map(|_| random_view_pair::<f64>(N, &mut r)).collect();
        let got = loss_id(&pairs, &den, &enc, &schedule, LossOptions::new(0.5, seed)).unwrap().loss;
        worst = worst.max((got - oracle_loss_id(&pairs, &den, &enc, timesteps, seed, 0.5)).abs());
    }
    ensure!(worst < 1e-6, "max abs difference {worst:e}");
    Ok(format!("2x{N}x{N} batches, 6 seeds per loss, max abs difference {worst:.1e}"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = DenoiserConfig {
        channel_multipliers: vec![1],
        attn_resolutions: vec![N / 2],
        ..tiny_denoiser(N, Variant::CrossAttention)
    };
    let mut den = Denoiser::<f64>::new(cfg, 7).unwrap();
    let mut enc = Encoder::<f64>::new(tiny_encoder(N, 4), 8).unwrap();
    let total = den.params().numel() + enc.params().numel();
    ensure!(total <= 5000, "{total} parameters");
    let mut r = rng(9);
    for e in den.params_mut().entries_mut() {
        for v in e.value.data_mut() {
            *v += r.random_range(-0.05..0.05);
        }
    }
    let batch: Vec<_> = (0..2).map(|_| random_composite::<f64>(N, &mut r)).collect();
    let err = max_relative_gradient_error(&mut den, &mut enc, &batch);
    let elapsed = start.elapsed();
    ensure!(err < 1e-3, "max relative error {err:e}");
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("{total} parameters, max relative error {err:.2e}"))
}

/// Stage-1 state for the tiny model, then a stage-2 state on the default
/// stage-2 plan.
fn default_stage2() -> (Dataset<f32>, TrainState<f32>, TrainState<f32>) {
    let ds = Dataset::synthesize(&small_synthetic()).unwrap();
    let mut s1 = TrainState::stage1(&small_experiment(1, 2)).unwrap();
    run_stage1(&mut s1, &ViewPairs::new(&ds).unwrap(), &mut RunOptions::default()).unwrap();
    let mut cfg = small_experiment(2, 1);
    cfg.plan = TrainPlan::stage2();
    let s2 = TrainState::stage2(&cfg, Some(&s1)).unwrap();
    (ds, s1, s2)
}

fn schedule_replay() -> Outcome {
    let (ds, _, mut st) = default_stage2();
    let plan = st.plan.clone();
    let mut log = Vec::new();
    let scenes = ScenePairs::new(&ds, plan.temporal_window, plan.video_fraction).unwrap();
    run_stage2(&mut st, &scenes, &mut RunOptions { metrics: Some(&mut log), ..Default::default() }).unwrap();
    let records = parse_metrics(std::str::from_utf8(&log).unwrap()).unwrap();
    let swap = plan.swap_epoch();
    ensure!(!records.is_empty(), "no steps logged");
    ensure!(records.last().unwrap().epoch + 1 == plan.epochs, "run stopped at epoch {}", records.last().unwrap().epoch);
    for (i, rec) in records.iter().enumerate() {
        ensure!(rec.step == i as u64, "step {} logged at position {i}", rec.step);
        let want = (lr_for(Component::Adapter, rec.epoch, &plan).unwrap(), lr_for(Component::Unet, rec.epoch, &plan).unwrap());
        ensure!((rec.lr_adapter, rec.lr_unet) == want, "step {}: logged {:?}, lr_for {:?}", rec.step, (rec.lr_adapter, rec.lr_unet), want);
        let phase = if rec.epoch < swap { (4e-5, 4e-6) } else { (4e-6, 4e-5) };
        ensure!(want == phase, "epoch {}: lr_for {want:?}", rec.epoch);
    }
    let before = records.iter().filter(|r| r.epoch < swap).count();
    ensure!(before > 0 && before < records.len(), "swap not exercised");
    Ok(format!("{} steps over {} epochs, swap at epoch {swap}", records.len(), plan.epochs))
}

fn freeze_contract() -> Outcome {
    let (ds, s1, mut st) = default_stage2();
    let plan = st.plan.clone();
    let scenes = ScenePairs::new(&ds, plan.temporal_window, plan.video_fraction).unwrap();
    run_stage2(&mut st, &scenes, &mut RunOptions::default()).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut checked = 0;
    let mut adapter_moved = false;
    for (a, b) in s1.encoder.params().entries().iter().zip(st.encoder.params().entries()) {
        if a.group == BACKBONE_GROUP {
            ensure!(bits(&a.value) == bits(&b.value), "backbone tensor {} changed", a.name);
            checked += a.value.numel();
        } else {
            adapter_moved |= a.value != b.value;
        }
    }
    ensure!(adapter_moved, "adapter did not train");
    Ok(format!("{checked} backbone values bit-identical after {} steps", st.step))
}

fn conditioning_dropout() -> Outcome {
    let mut rates = Vec::new();
    for (plan, want) in [(TrainPlan::stage1(), 0.05), (TrainPlan::stage2(), 0.1)] {
        ensure!(plan.drop_prob == want, "stage {} default drop rate {}", plan.stage, plan.drop_prob);
        let mut r = rng(40 + plan.stage as u64);
        let direct = (0..10_000).filter(|_| drop_should_fire(plan.drop_prob, &mut r).unwrap()).count();
        let in_loss = (0..10_000).filter(|&i| draw_noise::<f32>(41, i, 1000, &[1], plan.drop_prob).drop).count();
        for hits in [direct, in_loss] {
            let rate = hits as f64 / 10_000.0;
            ensure!((rate - want).abs() <= 0.02, "stage {} rate {rate}", plan.stage);
            rates.push(rate);
        }
    }
    Ok(format!("stage 1 rates {:.4}/{:.4}, stage 2 rates {:.4}/{:.4}", rates[0], rates[1], rates[2], rates[3]))
}

fn temporal_window() -> Outcome {
    ensure!(DEFAULT_TEMPORAL_WINDOW == 7, "default window {DEFAULT_TEMPORAL_WINDOW}");
    let mut r = rng(50);
    let mut seen = [false; 8];
    for i in 0..10_000u64 {
        let frames = r.random_range(2..40);
        let spec = VideoPairSpec { frame_count: frames, window: DEFAULT_TEMPORAL_WINDOW, rng_seed: i };
        let (a, b) = sample_frame_pair(&spec).unwrap();
        let gap = a.abs_diff(b);
        ensure!((1..=7).contains(&gap) && a < frames && b < frames, "pair ({a}, {b}) of {frames} frames");
        seen[gap] = true;
    }
    ensure!(seen[1..].iter().all(|&s| s), "gaps seen {seen:?}");
    Ok("10000 pairs, every gap in 1..=7 observed".into())
}

fn mask_coarsening() -> Outcome {
    let mut r = rng(60);
    for i in 0..1000u64 {
        let blob = random_blob(48, &mut r);
        let mut prev = blob.clone();
        for level in MaskLevel::all() {
            let m = coarsen_mask(&blob, level, i).unwrap();
            ensure!(subset(&prev, &m), "blob {i}: level {} does not contain the previous level", level.get());
            prev = m;
        }
        ensure!(prev == brute_bbox(&blob), "blob {i}: level 4 differs from the bounding box");
    }
    let mut means = [0.0; 4];
    for seed in 0..100u64 {
        let blob = random_blob(48, &mut rng(61_000 + seed));
        for (k, level) in MaskLevel::all().into_iter().enumerate() {
            means[k] += coarsen_mask(&blob, level, seed).unwrap().area() as f64 / 100.0;
        }
    }
    ensure!(means.windows(2).all(|w| w[0] <= w[1]), "mean areas {means:?}");
    Ok(format!("1000 blobs nested, mean areas {:.1} {:.1} {:.1} {:.1}", means[0], means[1], means[2], means[3]))
}

fn fid_math() -> Outcome {
    let mut r = rng(70);
    let mut worst = 0.0f64;
    let d = 5;
    for _ in 0..20 {
        let va: Vec<f64> = (0..d).map(|_| r.random_range(0.1..3.0)).collect();
        let vb: Vec<f64> = (0..d).map(|_| r.random_range(0.1..3.0)).collect();
        let (ma, mb) = (random_mean(d, &mut r), random_mean(d, &mut r));
        let a = to_stats(&ma, &DMatrix::from_diagonal(&DVector::from_vec(va.clone())));
        let b = to_stats(&mb, &DMatrix::from_diagonal(&DVector::from_vec(vb.clone())));
        let want = (&ma - &mb).norm_squared() + va.iter().zip(&vb).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        worst = worst.max((fid(&a, &b).unwrap() - want).abs());
    }
    ensure!(worst < 1e-6, "diagonal closed form off by {worst:e}");
    let closed = worst;

    let (mut self_dist, mut rotation, mut oracle) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (ma, mb) = (random_mean(d, &mut r), random_mean(d, &mut r));
        let (sa, sb) = (random_psd(d, &mut r), random_psd(d, &mut r));
        let (a, b) = (to_stats(&ma, &sa), to_stats(&mb, &sb));
        self_dist = self_dist.max(fid(&a, &a).unwrap().abs());
        let ab = fid(&a, &b).unwrap();
        oracle = oracle.max((ab - oracle_fid(&ma, &sa, &mb, &sb)).abs());
        let q = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0)).qr().q();
        let ra = to_stats(&(&q * &ma), &(&q * &sa * q.transpose()));
        let rb = to_stats(&(&q * &mb), &(&q * &sb * q.transpose()));
        rotation = rotation.max((fid(&ra, &rb).unwrap() - ab).abs());
    }
    ensure!(self_dist < 1e-6, "fid(a, a) = {self_dist:e}");
    ensure!(rotation < 1e-6, "rotation changed fid by {rotation:e}");
    ensure!(oracle < 1e-6, "general case off by {oracle:e}");
    let one = |m: f64, v: f64| FeatureStats { count: 10, mean: vec![m], covariance: vec![v] };
    ensure!((fid(&one(0.0, 1.0), &one(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-6, "1-D variance case");
    Ok(format!("closed form {closed:.1e}, fid(a,a) {self_dist:.1e}, rotation {rotation:.1e}, general {oracle:.1e}"))
}

fn zero_init_equivalence() -> Outcome {
    let configs = [
        tiny_denoiser(8, Variant::CrossAttention),
        DenoiserConfig {
            image_size: 16,
            base_channels: 8,
            channel_multipliers: vec![1, 2, 2],
            attn_resolutions: vec![8, 4],
            cond_dim: 4,
            ..DenoiserConfig::default()
        },
    ];
    let mut compared = 0;
    for cfg in configs {
        let n = cfg.image_size;
        for seed in 0..3u64 {
            let mut r = rng(80 + seed);
            let enc = Encoder::<f64>::new(tiny_encoder(n, cfg.cond_dim), 1).unwrap();
            let ex = random_composite::<f64>(n, &mut r);
            let cond = enc.adapt(&enc.encode_tokens(&ex.object_image).unwrap()).unwrap().tokens;
            let x_t = Tensor::randn(&[3, n, n], 1.0, &mut r);
            let run = |v: Variant| {
                let model = Denoiser::<f64>::new(cfg.clone().with_variant(v), seed).unwrap();
                let ctx = SpatialContext::for_composite(&ex.background, &ex.mask, &ex.object_image, &ex.object_mask, v).unwrap();
                model.predict_eps(&assemble_denoiser_input(&x_t, &ctx, v).unwrap(), 417, &cond).unwrap().into_data()
            };
            let base = run(Variant::CrossAttention);
            ensure!(base.iter().any(|&v| v != 0.0), "base output is all zero");
            for v in [Variant::Concat, Variant::ControlNet] {
                ensure!(run(v) == base, "{v:?} differs from the base model at {n}px seed {seed}");
                compared += base.len();
            }
        }
    }
    Ok(format!("{compared} outputs exactly equal"))
}

struct TrendRun {
    seed: u64,
    random: TrainState<f32>,
    trained: TrainState<f32>,
}

/// Stage-1 runs shared by both trend criteria.
fn stage1_runs(ds: &Dataset<f32>) -> Vec<TrendRun> {
    TREND_SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ExperimentConfig { plan: stage1_plan(seed, STAGE1_EPOCHS), ..trend_config() };
            let random = TrainState::stage1(&cfg).unwrap();
            let mut trained = random.clone();
            run_stage1(&mut trained, &ViewPairs::new(ds).unwrap(), &mut RunOptions::default()).unwrap();
            TrendRun { seed, random, trained }
        })
        .collect()
}

fn stage1_trend(runs: &[TrendRun], ds: &Dataset<f32>) -> Outcome {
    let mut gains = Vec::new();
    let mut detail = Vec::new();
    for run in runs {
        let before = embedding_silhouette(&run.random.encoder, ds);
        let after = embedding_silhouette(&run.trained.encoder, ds);
        gains.push(after - before);
        detail.push(format!("seed {}: {before:.3} -> {after:.3}", run.seed));
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let msg = format!("mean gain {mean:.4} ({})", detail.join(", "));
    ensure!(mean >= MIN_SILHOUETTE_GAIN, "{msg}");
    Ok(msg)
}

fn validation_loss(st: &TrainState<f32>, val: &[CompositeExample<f32>]) -> f64 {
    (0..VALIDATION_DRAWS)
        .map(|k| loss_comp(val, &st.denoiser, &st.encoder, &st.schedule, LossOptions::eval(1000 + k)).unwrap().loss as f64)
        .sum::<f64>()
        / VALIDATION_DRAWS as f64
}

fn two_stage_trend(runs: &[TrendRun], ds: &Dataset<f32>) -> Outcome {
    let scenes = ScenePairs::new(ds, DEFAULT_TEMPORAL_WINDOW, 0.5).unwrap();
    let val: Vec<_> = (0..scenes.len())
        .flat_map(|i| (0..VALIDATION_TUPLES_PER_SCENE).map(move |k| (i, k)))
        .map(|(i, k)| scenes.example(i, 555_000 + 10 * i as u64 + k).unwrap())
        .collect();
    let mut wins = 0;
    let mut detail = Vec::new();
    for run in runs {
        let cfg = ExperimentConfig { plan: stage2_plan(run.seed, STAGE2_EPOCHS), ..trend_config() };
        let mut losses = [0.0; 2];
        for (slot, start) in [&run.trained, &run.random].into_iter().enumerate() {
            let mut st = TrainState::stage2(&cfg, Some(start)).unwrap();
            run_stage2(&mut st, &scenes, &mut RunOptions::default()).unwrap();
            losses[slot] = validation_loss(&st, &val);
        }
        if losses[0] < losses[1] {
            wins += 1;
        }
        detail.push(format!("seed {}: {:.5} vs {:.5}", run.seed, losses[0], losses[1]));
    }
    let msg = format!("stage-1 encoder lower in {wins}/3 ({})", detail.join(", "));
    ensure!(wins >= 2, "{msg}");
    Ok(msg)
}

fn in_mask_psnr(out: &ImageBuffer<f32>, ex: &CompositeExample<f32>) -> (f64, usize) {
    let mut se = 0.0;
    let mut count = 0;
    for r in 0..out.height() {
        for c in 0..out.width() {
            if ex.mask.is_on(r, c) {
                for (a, b) in out.pixel(r, c).iter().zip(ex.target.pixel(r, c)) {
                    se += ((a - b) as f64).powi(2);
                    count += 1;
                }
            }
        }
    }
    (se, count)
}

fn overfit_psnr() -> Outcome {
    let ds = Dataset::<f32>::synthesize(&SyntheticConfig {
        objects: OVERFIT_EXAMPLES,
        views_per_object: 2,
        frames_per_scene: 12,
        image_size: TREND_SIZE,
        seed: 3,
    })
    .unwrap();
    let scenes = ScenePairs::new(&ds, DEFAULT_TEMPORAL_WINDOW, 0.5).unwrap();
    let examples: Vec<_> = (0..OVERFIT_EXAMPLES).map(|i| scenes.example(i, 9000 + i as u64).unwrap()).collect();
    let base = trend_config();
    let s1 = TrainState::<f32>::stage1(&ExperimentConfig { plan: stage1_plan(0, 1), ..base.clone() }).unwrap();
    let mut plan = stage2_plan(0, OVERFIT_EPOCHS);
    plan.lr_unet = TREND_LR;
    let mut st = TrainState::stage2(&ExperimentConfig { plan, ..base }, Some(&s1)).unwrap();
    let summary = run_stage2(&mut st, &FixedExamples(examples.clone()), &mut RunOptions::default()).unwrap();
    let (mut se, mut count) = (0.0, 0);
    for (i, ex) in examples.iter().enumerate() {
        let mut req = SampleRequest::new(ex.background.clone(), ex.mask.clone(), ex.object_image.clone());
        req.object_mask = Some(ex.object_mask.clone());
        req.seed = 77 + i as u64;
        let out = sample_composite(&req, &st.denoiser, &st.encoder, &st.schedule).unwrap();
        let (s, c) = in_mask_psnr(&out, ex);
        se += s;
        count += c;
    }
    let psnr = 10.0 * (count as f64 / se).log10();
    let first = summary.records.first().unwrap().loss;
    let last = summary.records.last().unwrap().loss;
    let msg = format!("in-mask PSNR {psnr:.2} dB after {OVERFIT_EPOCHS} epochs (loss {first:.4} -> {last:.4})");
    ensure!(psnr >= MIN_OVERFIT_PSNR, "{msg}");
    Ok(msg)
}

// ---------------------------------------------------------------------------

fn report(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag}  {name:<26} {detail} [{secs:.1} s]");
    ok
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let checks: [Check; 11] = [
        ("background_preservation", background_preservation),
        ("loss_oracles", loss_oracles),
        ("gradient_check", gradient_check),
        ("schedule_replay", schedule_replay),
        ("freeze_contract", freeze_contract),
        ("conditioning_dropout", conditioning_dropout),
        ("temporal_window", temporal_window),
        ("mask_coarsening", mask_coarsening),
        ("fid_math", fid_math),
        ("zero_init_equivalence", zero_init_equivalence),
        ("overfit_psnr", overfit_psnr),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        if wanted(name) && !report(name, check) {
            failed += 1;
        }
    }

    let trend = ["stage1_trend", "two_stage_trend"];
    if trend.iter().any(|n| wanted(n)) {
        let start = Instant::now();
        let ds = trend_dataset();
        let runs = catch_unwind(AssertUnwindSafe(|| stage1_runs(&ds)));
        println!("      (stage-1 training for {} seeds took {:.1} s)", TREND_SEEDS.len(), start.elapsed().as_secs_f64());
        match &runs {
            Ok(runs) => {
                if wanted(trend[0]) && !report(trend[0], || stage1_trend(runs, &ds)) {
                    failed += 1;
                }
                if wanted(trend[1]) && !report(trend[1], || two_stage_trend(runs, &ds)) {
                    failed += 1;
                }
            }
            Err(_) => {
                for name in trend.iter().filter(|n| wanted(n)) {
                    println!("FAIL  {name:<26} stage-1 training panicked");
                    failed += 1;
                }
            }
        }
    }

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
