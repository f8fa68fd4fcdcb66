use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use btc_core::chord::Vocabulary;
use btc_core::features::{segment, synth_dataset, SegmentMode, SynthConfig};
use btc_core::io::{
    format_stats, load_model, read_btcf, read_kv, read_lab, save_model, write_atomic,
    write_attention, write_btcf, write_lab,
};
use btc_core::metrics::{report, ScoredPair};
use btc_core::net::{BtcConfig, BtcModel};
use btc_core::pipeline::{normalize, transcribe};
use btc_core::tensor::Rng;
use btc_core::train::{fit, prepare_dataset, TrainConfig};
use log::{info, warn};

use crate::dataset::{list_files, load_songs, MANIFEST};
use crate::error::{file_error, CliError, Result};
use crate::{EvalArgs, ExportArgs, InferArgs, SynthArgs, TrainArgs};

/// Seed and config-file overrides shared by every subcommand.
pub struct Settings {
    pub seed: u64,
    pub overrides: Vec<(String, String)>,
}

impl Settings {
    pub fn load(seed: u64, config: Option<&Path>) -> Result<Self> {
        let overrides = match config {
            Some(path) => read_kv(path)?,
            None => Vec::new(),
        };
        Ok(Settings { seed, overrides })
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("bad value {value:?} for {key}")))
}

fn ignore(key: &str) {
    warn!("config key {key:?} does not apply to this command; ignored");
}

fn ignore_all(settings: &Settings) {
    settings.overrides.iter().for_each(|(k, _)| ignore(k));
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(file_error(path))
}

pub fn synth_data(args: &SynthArgs, settings: &Settings) -> Result<()> {
    let mut cfg = SynthConfig {
        seed: settings.seed,
        ..SynthConfig::default()
    };
    for (k, v) in &settings.overrides {
        match k.as_str() {
            "songs" => cfg.songs = parse(k, v)?,
            "noise" => cfg.noise_sigma = parse(k, v)?,
            "frames" => cfg.frames_per_song = parse(k, v)?,
            "vocab" => cfg.vocab = Vocabulary::new(parse(k, v)?),
            _ => ignore(k),
        }
    }
    if let Some(n) = args.songs {
        cfg.songs = n;
    }
    if let Some(v) = args.vocab {
        cfg.vocab = Vocabulary::new(v);
    }
    if let Some(s) = args.noise {
        cfg.noise_sigma = s;
    }
    if let Some(f) = args.frames {
        cfg.frames_per_song = f;
    }
    if !(cfg.noise_sigma.is_finite() && cfg.noise_sigma >= 0.0) {
        return Err(CliError::Config(format!("noise {} must be >= 0", cfg.noise_sigma)));
    }
    if cfg.frames_per_song == 0 {
        return Err(CliError::Config("frames must be positive".into()));
    }
    let header = format!(
        "seed={}\nsongs={}\nvocab={}\nnoise={}\nframes={}\n",
        cfg.seed,
        cfg.songs,
        cfg.vocab.kind(),
        cfg.noise_sigma,
        cfg.frames_per_song
    );
    print!("{header}");

    create_dir(&args.out)?;
    let mut manifest = header;
    for (id, features, track) in synth_dataset(&cfg) {
        write_btcf(&features, &args.out.join(format!("{id}.btcf")))?;
        write_lab(&track, &args.out.join(format!("{id}.lab")))?;
        let _ = writeln!(manifest, "song={id}");
    }
    write_atomic(&args.out.join(MANIFEST), manifest.as_bytes())?;
    println!("wrote {} songs to {}", cfg.songs, args.out.display());
    Ok(())
}

pub fn train(args: &TrainArgs, settings: &Settings) -> Result<()> {
    let mut model_cfg = BtcConfig::default();
    let mut train_cfg = TrainConfig {
        seed: settings.seed,
        ..TrainConfig::default()
    };
    let mut val_split = 0.2;
    for (k, v) in &settings.overrides {
        if k == "val_split" {
            val_split = parse(k, v)?;
        } else if !model_cfg.set(k, v)? && !train_cfg.set(k, v)? {
            ignore(k);
        }
    }
    let set = |slot: &mut usize, flag: Option<usize>| {
        if let Some(v) = flag {
            *slot = v;
        }
    };
    set(&mut model_cfg.n_layers, args.layers);
    set(&mut model_cfg.n_heads, args.heads);
    set(&mut model_cfg.model_dim, args.dim);
    set(&mut model_cfg.conv_repeats, args.conv_repeats);
    set(&mut model_cfg.kernel, args.kernel);
    set(&mut train_cfg.patience, args.patience);
    set(&mut train_cfg.batch_size, args.batch_size);
    set(&mut train_cfg.max_epochs, args.max_epochs);
    if let Some(v) = args.vocab {
        model_cfg.vocab = v;
    }
    if let Some(d) = args.dropout {
        model_cfg.dropout = d;
    }
    if let Some(lr) = args.lr {
        train_cfg.lr = lr;
    }
    if let Some(d) = args.decay {
        train_cfg.decay = d;
    }
    if let Some(t) = args.target_accuracy {
        train_cfg.target_accuracy = Some(t);
    }
    train_cfg.augment |= args.augment;
    if let Some(v) = args.val_split {
        val_split = v;
    }
    if !(val_split > 0.0 && val_split < 1.0) {
        return Err(CliError::Config(format!("val split {val_split} outside (0, 1)")));
    }
    model_cfg.validate()?;
    train_cfg.validate()?;

    let mut log = format!(
        "seed={}\nmodel: {model_cfg}\ntrain: {train_cfg} val_split={val_split}\n",
        settings.seed
    );
    print!("{log}");

    let songs = load_songs(&args.data)?;
    let data = prepare_dataset(&songs, &model_cfg.vocabulary(), val_split, model_cfg.seq_len)?;
    let ids = format!(
        "train_songs={}\nval_songs={}\n",
        data.train_ids.join(","),
        data.val_ids.join(",")
    );
    print!("{ids}");
    log.push_str(&ids);
    info!(
        "{} training segments, {} validation segments, {} parameters",
        data.train.len(),
        data.val.len(),
        model_cfg.parameter_count()
    );

    let model = BtcModel::new(model_cfg, &mut Rng::derive(settings.seed, 0))?;
    let (best, report) = fit(model, &data.train, &data.val, &train_cfg)?;
    for e in &report.epochs {
        let _ = writeln!(log, "{e}");
    }
    let summary = format!(
        "best_epoch={} best_val_acc={:.6} stop={:?}\n",
        report.best_epoch, report.best_accuracy, report.stop
    );
    log.push_str(&summary);
    print!("{summary}");
    if report.best_epoch == 0 {
        write_atomic(&args.out.with_extension("log"), log.as_bytes())?;
        return Err(CliError::Diverged);
    }
    save_model(&best, Some(&data.stats), &args.out)?;
    write_atomic(&args.out.with_extension("stats"), format_stats(&data.stats).as_bytes())?;
    write_atomic(&args.out.with_extension("log"), log.as_bytes())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn infer(args: &InferArgs, settings: &Settings) -> Result<()> {
    ignore_all(settings);
    let (model, stats) = load_model(&args.model)?;
    let stats = stats.ok_or_else(|| CliError::MissingStats(args.model.clone()))?;
    println!("seed={}\nmodel: {}", settings.seed, model.config());
    if args.features.is_dir() {
        create_dir(&args.out)?;
        let files = list_files(&args.features, "btcf")?;
        if files.is_empty() {
            return Err(CliError::NoSongs(args.features.clone()));
        }
        for (id, path) in &files {
            let track = transcribe(&model, &stats, &read_btcf(path)?)?;
            write_lab(&track, &args.out.join(format!("{id}.lab")))?;
        }
        println!("wrote {} label files to {}", files.len(), args.out.display());
    } else {
        let track = transcribe(&model, &stats, &read_btcf(&args.features)?)?;
        write_lab(&track, &args.out)?;
        println!("wrote {} intervals to {}", track.intervals().len(), args.out.display());
    }
    Ok(())
}

pub fn eval(args: &EvalArgs, settings: &Settings) -> Result<()> {
    ignore_all(settings);
    let refs = list_files(&args.reference, "lab")?;
    if refs.is_empty() {
        return Err(CliError::NoSongs(args.reference.clone()));
    }
    println!("seed={}\nvocab={}\nsongs={}", settings.seed, args.vocab, refs.len());
    let pairs = refs
        .iter()
        .map(|(id, path)| {
            let est = args.est.join(format!("{id}.lab"));
            if !est.is_file() {
                return Err(CliError::MissingCounterpart {
                    song: id.clone(),
                    missing: est,
                });
            }
            Ok(ScoredPair::new(&read_lab(path)?, &read_lab(&est)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = report(&pairs, args.vocab);
    print!("\n{}\n{}", report.to_table(), report.to_csv());
    if let Some(path) = &args.csv {
        write_atomic(path, report.to_csv().as_bytes())?;
    }
    Ok(())
}

pub fn export_attention(args: &ExportArgs, settings: &Settings) -> Result<()> {
    ignore_all(settings);
    let (model, stats) = load_model(&args.model)?;
    let stats = stats.ok_or_else(|| CliError::MissingStats(args.model.clone()))?;
    println!("seed={}\nmodel: {}", settings.seed, model.config());
    let features = normalize(&read_btcf(&args.features)?, &stats)?;
    let len = model.config().seq_len;
    let labels = vec![0; features.frames()];
    let first = segment("", &features, &labels, len, SegmentMode::Inference, 0).remove(0);
    let maps = model.attention_maps(&first.features, len)?;
    let written = write_attention(&maps, &args.out, args.layers.as_deref(), args.pgm)?;
    let dumps = written.iter().filter(|p| p.extension().is_some_and(|e| e == "txt")).count();
    println!("wrote {dumps} attention dumps to {}", args.out.display());
    Ok(())
}
