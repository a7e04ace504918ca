use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ndarray::{Array1, Array2};
use serde_json::{json, Value};
use xfdreid::datamodel::{read_feature_file, write_feature_file, Dataset, Domain, FrameFeatureSequence, Split};
use xfdreid::evaluation::{ablation_run, embed_dataset_with, evaluate, AblationCell, TrackletEmbeddings};
use xfdreid::gradcheck::{run_gradcheck, GradcheckOptions, Mutation};
use xfdreid::pooling::{AttentionPoolParams, NeckParams, PoolingMode};
use xfdreid::retrieval::{
    cosine_distance_matrix, k_reciprocal_rerank, write_distance_matrix, EmbeddingSet, Neighborhood, RerankParams,
};
use xfdreid::synthfix::{generate, write_fixture, FixtureConfig};
use xfdreid::training::{train, HeadFile, PoolingHead, Stage, TrainConfig};
use xfdreid::{Error, Result};

use crate::run_config::{sidecar_path, write_json, Precision, RunConfig};
use crate::{
    AblateArgs, Command, DataArgs, EvalArgs, GradcheckArgs, PoolArgs, RerankArgs, RerankFlags, SynthArgs, TrainArgs,
};

pub fn run(command: Command, threads: usize) -> Result<ExitCode> {
    match command {
        Command::Synth(a) => synth(a, threads),
        Command::Train(a) => train_cmd(a, threads),
        Command::Pool(a) => pool(a, threads),
        Command::Rerank(a) => rerank(a, threads),
        Command::Eval(a) => eval(a, threads),
        Command::Ablate(a) => ablate(a, threads),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

impl RerankFlags {
    fn params(&self) -> RerankParams {
        RerankParams {
            k1: self.k1,
            k2: self.k2,
            lambda: self.lambda,
            neighborhood: if self.gallery_only {
                Neighborhood::GalleryOnly
            } else {
                Neighborhood::Combined
            },
        }
    }
}

fn synth(args: SynthArgs, threads: usize) -> Result<ExitCode> {
    let mut run = RunConfig::new("synth", threads);
    let mut config: FixtureConfig = match &args.config {
        Some(path) => {
            run.input("config", path)?;
            serde_json::from_value(read_json(path)?)?
        }
        None => FixtureConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    run.seed = Some(config.seed);
    run.settings = serde_json::to_value(&config)?;
    let fixture = generate(&config)?;
    let paths = write_fixture(&fixture, &args.out_dir)?;
    write_json(
        &args.out_dir.join("fixture.json"),
        &json!({ "config": config, "files": paths, "run": run.to_value() }),
    )?;
    println!(
        "wrote {} tracklets ({} ids, T={}, C={}) to {}",
        fixture.dataset.records.len(),
        config.num_ids,
        config.seq_len,
        config.feature_dim,
        args.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_stage(s: &str) -> Result<Stage> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "stage1" => Ok(Stage::Stage1),
        "2" | "stage2" => Ok(Stage::Stage2),
        _ => Err(Error::Config(format!("unknown stage {s:?} (expected 1 or 2)"))),
    }
}

fn resolve_train_config(args: &TrainArgs, run: &mut RunConfig) -> Result<TrainConfig> {
    let overrides = match &args.config {
        Some(path) => {
            run.input("config", path)?;
            read_json(path)?
        }
        None => Value::Null,
    };
    let mut cfg = TrainConfig::from_json_overrides(parse_stage(&args.stage)?, &overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.pooling = mode;
    }
    if let Some(epochs) = args.epochs {
        cfg.max_epochs = epochs;
    }
    if let Some(lr) = args.base_lr {
        cfg.base_lr = lr;
    }
    if let Some(batch) = args.batch {
        cfg.batch = batch;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_settings(cfg: &TrainConfig) -> Result<Value> {
    Ok(json!({
        "train": cfg,
        "schedule": cfg.schedule_config(),
        "loss": cfg.loss_config(),
        "param_groups": cfg.plan()?,
        "rerank": RerankParams::default(),
    }))
}

fn load_dataset(data: &DataArgs, run: &mut RunConfig) -> Result<Dataset> {
    run.input("features", &data.features)?;
    run.input("manifest", &data.manifest)?;
    if let Some(flip) = &data.flip_features {
        run.input("flip_features", flip)?;
    }
    Dataset::load(&data.features, &data.manifest, data.flip_features.as_deref())
}

fn train_cmd(args: TrainArgs, threads: usize) -> Result<ExitCode> {
    let mut run = RunConfig::new("train", threads);
    let cfg = resolve_train_config(&args, &mut run)?;
    run.seed = Some(cfg.seed);
    run.settings = train_settings(&cfg)?;
    if args.dump_config {
        print_json(&run.settings)?;
        return Ok(ExitCode::SUCCESS);
    }
    let data = DataArgs {
        features: args.features.clone().expect("clap requires --features"),
        manifest: args.manifest.clone().expect("clap requires --manifest"),
        flip_features: args.flip_features.clone(),
    };
    let dataset = load_dataset(&data, &mut run)?;
    let init = match &args.init {
        Some(path) => {
            run.input("init", path)?;
            Some(PoolingHead::load(path)?)
        }
        None => None,
    };
    let outcome = train(&dataset, &cfg, init)?;
    let out = args.out.as_ref().expect("clap requires --out");
    let mut value = run.to_value();
    value["history"] = serde_json::to_value(&outcome.history)?;
    outcome.head.save(out, value)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} epochs, final loss {:.6}, head written to {}",
            outcome.history.len(),
            last.loss.total,
            out.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Pooling head from `--head`, with `--mode` overriding its pooling. With no
/// head only mean pooling is possible.
fn resolve_head(
    head: Option<&PathBuf>,
    mode: Option<PoolingMode>,
    run: &mut RunConfig,
) -> Result<(PoolingHead, Option<u64>)> {
    match head {
        Some(path) => {
            run.input("head", path)?;
            let file: HeadFile = serde_json::from_value(read_json(path)?)?;
            let mut head = PoolingHead::from_file(&file)?;
            if let Some(m) = mode {
                head.mode = m;
            }
            Ok((head, file.run.get("seed").and_then(Value::as_u64)))
        }
        None => {
            if mode == Some(PoolingMode::Attn) {
                return Err(Error::Config("attention pooling needs a trained --head".into()));
            }
            Ok((bare_head(0), None))
        }
    }
}

fn bare_head(feature_dim: usize) -> PoolingHead {
    PoolingHead {
        mode: PoolingMode::Mean,
        attention: AttentionPoolParams::zeros(feature_dim),
        neck: NeckParams::disabled(),
        classifier_weight: Array2::zeros((0, feature_dim)),
        classifier_bias: Array1::zeros(0),
        identity_memory: Array2::zeros((0, feature_dim)),
        log_temperature: 0.0,
        class_person_ids: Vec::new(),
    }
}

fn embed(dataset: &Dataset, head: &PoolingHead, precision: Precision) -> Result<TrackletEmbeddings> {
    let attention = if head.attention.w.len() == dataset.feature_dim {
        head.attention.clone()
    } else {
        AttentionPoolParams::zeros(dataset.feature_dim)
    };
    let e = embed_dataset_with(dataset, head.mode, &attention, &head.neck)?;
    Ok(match precision {
        Precision::F64 => e,
        Precision::F32 => e.to_f32_precision(),
    })
}

fn pool(args: PoolArgs, threads: usize) -> Result<ExitCode> {
    let mut run = RunConfig::new("pool", threads);
    run.precision = Some(args.precision);
    let dataset = load_dataset(&args.data, &mut run)?;
    let (head, seed) = resolve_head(args.head.as_ref(), args.mode, &mut run)?;
    run.seed = seed;
    let split = args.split.as_deref().map(Split::parse).transpose()?;
    let domain = args.domain.as_deref().map(Domain::parse).transpose()?;
    run.settings =
        json!({ "pooling": head.mode, "split": split.map(Split::as_str), "domain": domain.map(Domain::as_str) });

    let mut keep: Vec<usize> = dataset
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s) && domain.is_none_or(|d| r.domain == d))
        .map(|r| r.tracklet_index)
        .collect();
    // Training tracklets are pooled only on request.
    if split.is_none() {
        keep.retain(|&i| {
            dataset
                .records
                .iter()
                .any(|r| r.tracklet_index == i && r.split != Split::Train)
        });
    }
    let embeddings = embed(&dataset, &head, args.precision)?;
    let sequences = keep
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let v = embeddings
                .get(*t)
                .cloned()
                .map_or_else(|| pool_train(&dataset, &head, *t), Ok)?;
            FrameFeatureSequence::new(v.insert_axis(ndarray::Axis(0)), i)
        })
        .collect::<Result<Vec<_>>>()?;
    write_feature_file(&args.out, &sequences)?;
    write_json(
        &sidecar_path(&args.out),
        &json!({ "tracklets": keep, "pooling": head.mode, "run": run.to_value() }),
    )?;
    println!("pooled {} tracklets into {}", sequences.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn pool_train(dataset: &Dataset, head: &PoolingHead, tracklet: usize) -> Result<Array1<f64>> {
    let record = dataset
        .records
        .iter()
        .find(|r| r.tracklet_index == tracklet)
        .expect("filtered from records");
    xfdreid::pooling::embed_tracklet(
        dataset.sequence(tracklet),
        dataset.flipped(record),
        head.mode,
        &head.attention,
        &head.neck,
    )
}

fn read_embeddings(path: &Path, role: &str, run: &mut RunConfig) -> Result<EmbeddingSet> {
    run.input(role, path)?;
    let file = read_feature_file(path)?;
    if file.seq_len != 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} holds sequences of length {}, expected pooled embeddings (length 1)",
            path.display(),
            file.seq_len
        )));
    }
    let mut m = Array2::zeros((file.sequences.len(), file.feature_dim));
    for (i, s) in file.sequences.iter().enumerate() {
        m.row_mut(i).assign(&s.frames.row(0));
    }
    let sidecar = sidecar_path(path);
    let tracklets = match sidecar.exists() {
        true => serde_json::from_value(read_json(&sidecar)?["tracklets"].clone())?,
        false => (0..m.nrows()).collect(),
    };
    EmbeddingSet::new(m, tracklets)
}

fn rerank(args: RerankArgs, threads: usize) -> Result<ExitCode> {
    let params = args.params.params();
    let mut run = RunConfig::new("rerank", threads);
    run.settings = json!({ "rerank": params, "raw": args.raw });
    if args.dump_config {
        print_json(&run.settings)?;
        return Ok(ExitCode::SUCCESS);
    }
    let queries = read_embeddings(args.query_emb.as_ref().expect("required"), "query_emb", &mut run)?;
    let gallery = read_embeddings(args.gallery_emb.as_ref().expect("required"), "gallery_emb", &mut run)?;
    let d = if args.raw {
        cosine_distance_matrix(&queries, &gallery)?
    } else {
        k_reciprocal_rerank(&queries, &gallery, &params)?
    };
    let out = args.out.as_ref().expect("required");
    write_distance_matrix(out, &d)?;
    write_json(
        &sidecar_path(out),
        &json!({
            "stage": d.stage,
            "params": d.params,
            "query_tracklets": queries.tracklets,
            "gallery_tracklets": gallery.tracklets,
            "run": run.to_value(),
        }),
    )?;
    println!(
        "wrote {}x{} distance matrix to {}",
        d.values.nrows(),
        d.values.ncols(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval(args: EvalArgs, threads: usize) -> Result<ExitCode> {
    let mut run = RunConfig::new("eval", threads);
    run.precision = Some(args.precision);
    let dataset = load_dataset(&args.data, &mut run)?;
    let (head, seed) = resolve_head(args.head.as_ref(), args.mode, &mut run)?;
    run.seed = seed;
    let rerank = args.rerank.then(|| args.params.params());
    run.settings = json!({ "pooling": head.mode, "rerank": rerank });
    let embeddings = embed(&dataset, &head, args.precision)?;
    let mut report = evaluate(&dataset, &embeddings, rerank.as_ref())?;
    report.config.seed = seed;
    report.run = run.to_value();
    print!("{}", report.table());
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_json()?).map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_rerank(arg: &str) -> Result<RerankParams> {
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("rerank setting {arg:?} is not K1,K2,LAMBDA"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(RerankParams::new(
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
    ))
}

fn ablate(args: AblateArgs, threads: usize) -> Result<ExitCode> {
    let mut run = RunConfig::new("ablate", threads);
    run.precision = Some(args.precision);
    let dataset = load_dataset(&args.data, &mut run)?;
    let mut heads = Vec::new();
    for (i, arg) in args.heads.iter().enumerate() {
        let (mode, path) = arg
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--head {arg:?} is not MODE=PATH")))?;
        let mode: PoolingMode = mode.parse()?;
        let path = PathBuf::from(path);
        let mut sub = RunConfig::new("ablate", threads);
        let (head, _) = resolve_head(Some(&path), Some(mode), &mut sub)?;
        run.inputs
            .extend(sub.inputs.into_values().map(|v| (format!("head{i}"), v)));
        heads.push(head);
    }
    if heads.is_empty() {
        heads.push(bare_head(dataset.feature_dim));
    }
    let mut reranks = vec![None];
    for arg in &args.reranks {
        reranks.push(Some(parse_rerank(arg)?));
    }
    run.settings = json!({ "pooling": heads.iter().map(|h| h.mode).collect::<Vec<_>>(), "rerank": reranks });
    let embeddings = heads
        .iter()
        .map(|h| embed(&dataset, h, args.precision))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TrackletEmbeddings> = embeddings.iter().collect();
    let table = ablation_run(&dataset, &AblationCell::grid(&refs, &reranks))?;
    print!("{}", table.table());
    if let Some(out) = &args.out {
        write_json(out, &json!({ "rows": table.rows, "run": run.to_value() }))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let report = run_gradcheck(&GradcheckOptions {
        configs: args.configs,
        seed: args.seed,
        tolerance: args.tolerance,
        mutation: args.inject_sign_error.then_some(Mutation::FlipGradW),
        ..GradcheckOptions::default()
    })?;
    print!("{}", report.table());
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
