use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use objcomp::data::{coarsen_mask, generate_synthetic_dataset, Dataset, MaskLevel, SyntheticConfig};
use objcomp::diffusion::{sample_composite, SampleRequest};
use objcomp::eval::{clustering_quality, evaluate_run, projection_to_text, ModelCompositor, RandomConvFeatures, TsneOptions};
use objcomp::training::{
    derive_seed, file_sha256, load_checkpoint, run_stage1, run_stage2, save_checkpoint, DataConfig, ExampleSource,
    ExperimentConfig, RunOptions, ScenePairs, TrainState, ViewPairs,
};
use objcomp::{Image, Mask};

use crate::args::*;

const FID_FEATURE_SEED: u64 = 7;

pub fn datagen(a: &DatagenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        objects: a.objects,
        views_per_object: a.views,
        frames_per_scene: a.frames,
        image_size: a.size,
        seed: a.seed,
    };
    let manifest = generate_synthetic_dataset(&cfg, &a.out)?;
    println!("wrote {} records to {}", manifest.records.len(), a.out.display());
    Ok(())
}

fn load_data(cfg: &DataConfig) -> Result<Dataset<f32>> {
    Ok(match &cfg.dir {
        Some(dir) => Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?,
        None => Dataset::synthesize(&cfg.synthetic)?,
    })
}

fn load_state(path: &Path) -> Result<TrainState<f32>> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Checkpoints go to `<output_dir>/checkpoints`, step metrics are appended
/// to `<output_dir>/metrics.log` and the last state to `final.ckpt`.
fn train(cfg: &ExperimentConfig, state: &mut TrainState<f32>, run: impl FnOnce(&mut TrainState<f32>, &mut RunOptions) -> objcomp::Result<()>) -> Result<()> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.write(out.join("config.toml"))?;
    let log_path = out.join("metrics.log");
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut opts = RunOptions {
        checkpoint_dir: Some(out.join("checkpoints")),
        metrics: Some(&mut log),
        stop_after_epoch: None,
    };
    run(state, &mut opts)?;
    let final_path = out.join("final.ckpt");
    save_checkpoint(state, &final_path)?;
    println!(
        "stage {} finished at epoch {} ({} steps); {} sha256 {}",
        state.plan.stage,
        state.epoch,
        state.step,
        final_path.display(),
        file_sha256(&final_path)?
    );
    Ok(())
}

fn resumed(path: &Path, stage: u8) -> Result<TrainState<f32>> {
    let state = load_state(path)?;
    if state.plan.stage != stage {
        bail!("checkpoint {} is from stage {}, not stage {stage}", path.display(), state.plan.stage);
    }
    Ok(state)
}

pub fn train_stage1(a: &Stage1Args) -> Result<()> {
    let cfg = ExperimentConfig::read(&a.config)?;
    let mut state = match &a.resume {
        Some(p) => resumed(p, 1)?,
        None => TrainState::stage1(&cfg)?,
    };
    let data = load_data(&cfg.data)?;
    let pairs = ViewPairs::new(&data)?;
    train(&cfg, &mut state, |s, o| run_stage1(s, &pairs, o).map(drop))
}

pub fn train_stage2(a: &Stage2Args) -> Result<()> {
    let cfg = ExperimentConfig::read(&a.config)?;
    let mut state = match &a.resume {
        Some(p) => resumed(p, 2)?,
        None => {
            let stage1 = a.encoder_ckpt.as_deref().map(load_state).transpose()?;
            TrainState::stage2(&cfg, stage1.as_ref())?
        }
    };
    let data = load_data(&cfg.data)?;
    let plan = &state.plan;
    let scenes = ScenePairs::new(&data, plan.temporal_window, plan.video_fraction)?;
    train(&cfg, &mut state, |s, o| run_stage2(s, &scenes, o).map(drop))
}

pub fn compose(a: &ComposeArgs) -> Result<()> {
    let state = load_state(&a.checkpoint)?;
    let background = Image::read_png(&a.background).with_context(|| format!("reading {}", a.background.display()))?;
    let object = Image::read_png(&a.object).with_context(|| format!("reading {}", a.object.display()))?;
    let mut mask = Mask::read_png(&a.mask).with_context(|| format!("reading {}", a.mask.display()))?;
    if let (Some(level), false) = (a.mask_level, mask.is_empty()) {
        mask = coarsen_mask(&mask, MaskLevel::new(level)?, a.seed)?;
    }
    let mut req = SampleRequest::new(background, mask, object);
    if let Some(p) = &a.object_mask {
        req.object_mask = Some(Mask::read_png(p).with_context(|| format!("reading {}", p.display()))?);
    }
    req.steps = a.steps;
    req.cfg_scale = a.cfg;
    req.seed = a.seed;
    let out = sample_composite(&req, &state.denoiser, &state.encoder, &state.schedule)?;
    out.write_png(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

/// The dataset at `dir`, or a synthetic one at the model resolution.
fn eval_data(dir: &Option<PathBuf>, seed: u64, image_size: usize) -> Result<Dataset<f32>> {
    load_data(&DataConfig {
        dir: dir.clone(),
        synthetic: SyntheticConfig {
            image_size,
            seed,
            ..SyntheticConfig::default()
        },
    })
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let state = load_state(&a.checkpoint)?;
    let n = state.denoiser.config().image_size;
    let data = eval_data(&a.data, a.data_seed, n)?;
    let plan = &state.plan;
    let scenes = ScenePairs::new(&data, plan.temporal_window, plan.video_fraction)?;
    let examples = (0..a.count)
        .map(|i| scenes.example(i % scenes.len(), derive_seed(a.seed, &[i as u64])))
        .collect::<objcomp::Result<Vec<_>>>()?;
    let compositor = ModelCompositor {
        model: &state.denoiser,
        encoder: &state.encoder,
        schedule: &state.schedule,
        steps: a.steps,
        cfg_scale: a.cfg,
    };
    let fid_features = RandomConvFeatures::new(n, FID_FEATURE_SEED)?;
    let report = evaluate_run(&compositor, &examples, &state.encoder, &fid_features, a.seed)?;
    report.write(&a.out)?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    let state = load_state(&a.checkpoint)?;
    let data = eval_data(&a.data, a.data_seed, state.encoder.config().image_size)?;
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for (&object, views) in &data.multiview {
        for v in views {
            embeddings.push(state.encoder.embed(&v.image)?.iter().map(|&x| x as f64).collect());
            labels.push(object);
        }
    }
    let tsne = TsneOptions {
        perplexity: a.perplexity,
        iterations: a.iterations,
        seed: a.seed,
        ..TsneOptions::default()
    };
    let result = clustering_quality(&embeddings, &labels, tsne)?;
    std::fs::write(&a.out, projection_to_text(&result.projection)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("silhouette {:.4} over {} embeddings; projection in {}", result.silhouette, labels.len(), a.out.display());
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let state = load_state(&a.checkpoint)?;
    let hash = file_sha256(&a.checkpoint)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let (app, worker) = crate::server::AppState::new(state, hash);
        tokio::spawn(worker.run());
        let listener = tokio::net::TcpListener::bind(a.addr).await.with_context(|| format!("binding {}", a.addr))?;
        println!("listening on http://{}/v1", listener.local_addr()?);
        axum::serve(listener, crate::server::router(app)).await?;
        Ok(())
    })
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Datagen(a) => datagen(a),
        Command::TrainStage1(a) => train_stage1(a),
        Command::TrainStage2(a) => train_stage2(a),
        Command::Compose(a) => compose(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Cluster(a) => cluster(a),
        Command::Serve(a) => serve(a),
    }
}
