use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rtar_core::bench::run_bench;
use rtar_core::dataset::{
    generate_synthetic, load_labeled_clips, load_split, precompute_cache, split_by_group, ClipId, SplitManifest,
    CLIPS_DIR, FULL_SPLIT_COUNTS, SPLIT_FILE,
};
use rtar_core::media::read_clip;
use rtar_core::network::{evaluate, load_checkpoint, save_checkpoint, train, ThreeStreamModel};
use rtar_core::runtime::{format_event_log, run_live, run_offline};

use crate::settings::{read_config_file, resolve, Resolved};
use crate::{Cli, Command, DatasetCommand, UsageError};

pub fn dispatch(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => read_config_file(p)?,
        None => Default::default(),
    };
    let settings = resolve(cli.seed, cli.threads, &cli.tunables, &file);
    settings.check()?;
    let threads: usize = settings.get("threads")?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    // The resolved configuration goes to stderr so stdout stays machine-readable.
    eprint!("{}", settings.header());
    match cli.command {
        Command::Preprocess { clips, out } => cmd_preprocess(&settings, &clips, &out),
        Command::Train { data, out, cache } => cmd_train(&settings, &data, &out, cache.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            cache,
            train_split,
        } => cmd_eval(&settings, &checkpoint, &data, cache.as_deref(), train_split),
        Command::Run { checkpoint, clip, live } => cmd_run(&settings, &checkpoint, &clip, live),
        Command::Dataset(d) => match d {
            DatasetCommand::Validate { split, full } => cmd_validate(&split, full),
            DatasetCommand::Split { clips, out } => cmd_split(&settings, &clips, &out),
            DatasetCommand::Synth { out } => cmd_synth(&settings, &out),
        },
        Command::Bench => cmd_bench(&settings),
    }
}

/// Subdirectories of `dir`, sorted by name.
fn clip_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn cmd_preprocess(s: &Resolved, clips: &Path, out: &Path) -> Result<()> {
    let report = precompute_cache(&clip_dirs(clips)?, &s.preprocess()?, out)?;
    println!(
        "written {}\tskipped {}\tfailed {}",
        report.written,
        report.skipped,
        report.failed.len()
    );
    for (clip, reason) in &report.failed {
        eprintln!("warning: {clip}: {reason}");
    }
    Ok(())
}

fn split_of(data: &Path) -> Result<SplitManifest> {
    Ok(load_split(data.join(SPLIT_FILE))?)
}

fn cmd_train(s: &Resolved, data: &Path, out: &Path, cache: Option<&Path>) -> Result<()> {
    let split = split_of(data)?;
    if split.train.is_empty() {
        return Err(UsageError("the split has no training clips".into()).into());
    }
    let needed = split.train.iter().map(ClipId::class_index).max().unwrap_or(0) + 1;
    let classes = s.classes()?.unwrap_or(needed);
    if classes < needed {
        return Err(UsageError(format!("--classes {classes} but the data has {needed} classes")).into());
    }
    let clips = load_labeled_clips(data.join(CLIPS_DIR), &split.train, &s.preprocess()?, cache)?;
    let mut model = ThreeStreamModel::new(s.model(classes)?, s.get("seed")?)?;
    log::info!("training {} parameters on {} clips", model.parameter_count(), clips.len());
    let report = train(&mut model, &clips, &s.train()?)?;
    save_checkpoint(&model, out)?;
    let history: String = report
        .loss_history
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}\t{l:.6}\n", i + 1))
        .collect();
    let mut loss_path = out.as_os_str().to_owned();
    loss_path.push(".loss.tsv");
    fs::write(&loss_path, history).with_context(|| format!("writing {}", loss_path.to_string_lossy()))?;
    println!("train_accuracy\t{:.4}", report.train_accuracy);
    Ok(())
}

fn cmd_eval(s: &Resolved, checkpoint: &Path, data: &Path, cache: Option<&Path>, train_split: bool) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let split = split_of(data)?;
    let ids = if train_split { &split.train } else { &split.test };
    if let Some(bad) = ids.iter().find(|id| id.class_index() >= model.num_classes()) {
        return Err(UsageError(format!("{bad} is outside the model's {} classes", model.num_classes())).into());
    }
    let clips = load_labeled_clips(data.join(CLIPS_DIR), ids, &s.preprocess()?, cache)?;
    let threshold = s.runtime()?.threshold_confidence;
    let r = evaluate(&model, &clips, threshold)?;
    let mut out = format!(
        "clips\t{}\nframes\t{}\nclip_accuracy\t{:.4}\nframe_accuracy\t{:.4}\nbelow_threshold_rate\t{:.4}\nclass\taccuracy\n",
        r.clips, r.frames, r.clip_accuracy, r.frame_accuracy, r.below_threshold_rate
    );
    for (c, acc) in r.per_class.iter().enumerate() {
        match acc {
            Some(a) => out.push_str(&format!("{c}\t{a:.4}\n")),
            None => out.push_str(&format!("{c}\t-\n")),
        }
    }
    print!("{out}");
    Ok(())
}

fn cmd_run(s: &Resolved, checkpoint: &Path, clip: &Path, live: bool) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let (meta, frames) = read_clip(clip)?;
    let pre = s.preprocess()?;
    let rt = s.runtime()?;
    let events = if live {
        run_live(frames, meta.fps, &model, &pre, &rt, 4)?
    } else {
        run_offline(frames, meta.fps, &model, &pre, &rt)?
    };
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(format_event_log(&events).as_bytes())?;
    Ok(())
}

fn cmd_validate(split: &Path, full: bool) -> Result<()> {
    let m = load_split(split)?;
    if full {
        m.validate(Some(FULL_SPLIT_COUNTS))?;
    }
    let (train, test) = m.counts();
    println!("train\t{train}\ntest\t{test}");
    Ok(())
}

fn cmd_split(s: &Resolved, clips: &Path, out: &Path) -> Result<()> {
    let ids = clip_dirs(clips)?
        .iter()
        .map(|d| {
            let stem = d.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            ClipId::parse_stem(stem)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m = split_by_group(&ids, s.get("test_fraction")?, s.get("seed")?)?;
    fs::write(out, m.to_text()).with_context(|| format!("writing {}", out.display()))?;
    let (train, test) = m.counts();
    println!("train\t{train}\ntest\t{test}");
    Ok(())
}

fn cmd_synth(s: &Resolved, out: &Path) -> Result<()> {
    let ds = generate_synthetic(&s.synth()?, s.get("seed")?, out)?;
    let (train, test) = ds.split.counts();
    println!("clips\t{}\ntrain\t{train}\ntest\t{test}", ds.clips.len());
    Ok(())
}

fn cmd_bench(s: &Resolved) -> Result<()> {
    let report = run_bench(&s.bench()?)?;
    print!("{}", report.to_table());
    if !report.within_budget() {
        log::warn!(
            "resize+flow+HOG took {:.1} ms per pair, over the {} ms budget",
            report.preprocess_mean_ms(),
            rtar_core::bench::PREPROCESS_BUDGET_MS
        );
    }
    Ok(())
}
