//! Tunables resolved as flag > config file > default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use clap::Args;
use rtar_core::bench::BenchConfig;
use rtar_core::dataset::SynthConfig;
use rtar_core::network::{ModelConfig, StreamConfig, StreamMode, TrainConfig};
use rtar_core::preprocess::{FlowParams, PreprocessConfig};
use rtar_core::runtime::RuntimeConfig;

use crate::UsageError;

/// Every tunable; each may also be set as `key=value` in the `--config`
/// file, where `key` is the flag name with `_` for `-`.
#[derive(Args, Debug, Default, Clone)]
pub struct Tunables {
    #[arg(long, global = true)]
    pub target_size: Option<usize>,
    #[arg(long, global = true)]
    pub sample_fps: Option<u32>,
    #[arg(long, global = true)]
    pub flow_levels: Option<usize>,
    #[arg(long, global = true)]
    pub flow_alpha: Option<f32>,
    #[arg(long, global = true)]
    pub flow_iterations: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f32>,
    #[arg(long, global = true)]
    pub momentum: Option<f32>,
    #[arg(long, global = true)]
    pub weight_decay: Option<f32>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub growth: Option<usize>,
    /// Dense layers per block, comma separated (e.g. `4,4`).
    #[arg(long, global = true)]
    pub blocks: Option<String>,
    /// `fused`, `rgb`, `flow` or `hog`.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub classes: Option<usize>,
    #[arg(long, global = true)]
    pub threshold: Option<f32>,
    #[arg(long, global = true)]
    pub poll_interval: Option<f64>,
    #[arg(long, global = true)]
    pub stipulated_time: Option<f64>,
    #[arg(long, global = true)]
    pub window_seconds: Option<f64>,
    #[arg(long, global = true)]
    pub clips_per_class: Option<usize>,
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    #[arg(long, global = true)]
    pub fps: Option<u32>,
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    #[arg(long, global = true)]
    pub groups: Option<usize>,
    #[arg(long, global = true)]
    pub test_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub frames: Option<usize>,
}

pub const KEYS: [&str; 27] = [
    "seed",
    "threads",
    "target_size",
    "sample_fps",
    "flow_levels",
    "flow_alpha",
    "flow_iterations",
    "epochs",
    "lr",
    "momentum",
    "weight_decay",
    "batch",
    "growth",
    "blocks",
    "mode",
    "classes",
    "threshold",
    "poll_interval",
    "stipulated_time",
    "window_seconds",
    "clips_per_class",
    "resolution",
    "fps",
    "duration",
    "groups",
    "test_fraction",
    "frames",
];

/// Parses a `key=value` config file; `#` starts a comment line.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(UsageError(format!("{}:{}: unknown key {k:?}", path.display(), n + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Fully resolved settings, recorded in every command's header.
pub struct Resolved {
    pub values: BTreeMap<&'static str, String>,
}

impl Resolved {
    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, UsageError>
    where
        T::Err: Display,
    {
        let raw = &self.values[key];
        raw.parse()
            .map_err(|e| UsageError(format!("invalid value {raw:?} for {key}: {e}")))
    }

    /// `None` when the class count is left to the data (`auto`).
    pub fn classes(&self) -> Result<Option<usize>, UsageError> {
        match self.values["classes"].as_str() {
            "auto" => Ok(None),
            _ => self.get("classes").map(Some),
        }
    }

    /// Parses every value so a bad setting fails before any work starts.
    pub fn check(&self) -> Result<(), UsageError> {
        self.get::<u64>("seed")?;
        self.get::<usize>("threads")?;
        self.preprocess()?;
        self.train()?;
        self.runtime()?;
        self.synth()?;
        self.bench()?;
        Ok(())
    }

    pub fn header(&self) -> String {
        self.values.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig, UsageError> {
        Ok(PreprocessConfig {
            target_size: self.get("target_size")?,
            sample_fps: self.get("sample_fps")?,
            flow: FlowParams {
                pyramid_levels: self.get("flow_levels")?,
                alpha: self.get("flow_alpha")?,
                iterations: self.get("flow_iterations")?,
                ..FlowParams::default()
            },
            seed: self.get("seed")?,
            ..PreprocessConfig::default()
        })
    }

    pub fn train(&self) -> Result<TrainConfig, UsageError> {
        Ok(TrainConfig {
            lr: self.get("lr")?,
            momentum: self.get("momentum")?,
            weight_decay: self.get("weight_decay")?,
            epochs: self.get("epochs")?,
            batch: self.get("batch")?,
            seed: self.get("seed")?,
        })
    }

    pub fn model(&self, num_classes: usize) -> Result<ModelConfig, UsageError> {
        let blocks = self.values["blocks"]
            .split(',')
            .map(|b| b.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| UsageError(format!("invalid blocks {:?}: {e}", self.values["blocks"])))?;
        let mode: StreamMode = self.get("mode")?;
        Ok(ModelConfig {
            num_classes,
            stream: StreamConfig {
                growth: self.get("growth")?,
                blocks,
                ..StreamConfig::default()
            },
            mode,
        })
    }

    pub fn runtime(&self) -> Result<RuntimeConfig, UsageError> {
        Ok(RuntimeConfig {
            poll_interval: self.get("poll_interval")?,
            threshold_confidence: self.get("threshold")?,
            stipulated_time: self.get("stipulated_time")?,
            window_seconds: self.get("window_seconds")?,
        })
    }

    pub fn synth(&self) -> Result<SynthConfig, UsageError> {
        Ok(SynthConfig {
            clips_per_class: self.get("clips_per_class")?,
            resolution: self.get("resolution")?,
            fps: self.get("fps")?,
            duration_s: self.get("duration")?,
            groups: self.get("groups")?,
            test_fraction: self.get("test_fraction")?,
            texture_seed: self.get("seed")?,
            ..SynthConfig::default()
        })
    }

    pub fn bench(&self) -> Result<BenchConfig, UsageError> {
        let classes = self.classes()?.unwrap_or(12);
        Ok(BenchConfig {
            frames: self.get("frames")?,
            preprocess: self.preprocess()?,
            model: ModelConfig {
                mode: StreamMode::Fused,
                ..self.model(classes)?
            },
            seed: self.get("seed")?,
            ..BenchConfig::default()
        })
    }
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

/// Merges flags over the config file over built-in defaults.
pub fn resolve(
    seed: Option<u64>,
    threads: Option<usize>,
    t: &Tunables,
    file: &BTreeMap<String, String>,
) -> Resolved {
    let pre = PreprocessConfig::default();
    let train = TrainConfig::default();
    let stream = StreamConfig::default();
    let rt = RuntimeConfig::default();
    let synth = SynthConfig::default();
    let blocks = stream
        .blocks
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let entries: [(&'static str, Option<String>, String); 27] = [
        ("seed", opt(&seed), "0".into()),
        ("threads", opt(&threads), "0".into()),
        ("target_size", opt(&t.target_size), pre.target_size.to_string()),
        ("sample_fps", opt(&t.sample_fps), pre.sample_fps.to_string()),
        ("flow_levels", opt(&t.flow_levels), pre.flow.pyramid_levels.to_string()),
        ("flow_alpha", opt(&t.flow_alpha), pre.flow.alpha.to_string()),
        ("flow_iterations", opt(&t.flow_iterations), pre.flow.iterations.to_string()),
        ("epochs", opt(&t.epochs), train.epochs.to_string()),
        ("lr", opt(&t.lr), train.lr.to_string()),
        ("momentum", opt(&t.momentum), train.momentum.to_string()),
        ("weight_decay", opt(&t.weight_decay), train.weight_decay.to_string()),
        ("batch", opt(&t.batch), train.batch.to_string()),
        ("growth", opt(&t.growth), stream.growth.to_string()),
        ("blocks", t.blocks.clone(), blocks),
        ("mode", t.mode.clone(), "fused".into()),
        ("classes", opt(&t.classes), "auto".into()),
        ("threshold", opt(&t.threshold), rt.threshold_confidence.to_string()),
        ("poll_interval", opt(&t.poll_interval), rt.poll_interval.to_string()),
        ("stipulated_time", opt(&t.stipulated_time), rt.stipulated_time.to_string()),
        ("window_seconds", opt(&t.window_seconds), rt.window_seconds.to_string()),
        ("clips_per_class", opt(&t.clips_per_class), synth.clips_per_class.to_string()),
        ("resolution", opt(&t.resolution), synth.resolution.to_string()),
        ("fps", opt(&t.fps), synth.fps.to_string()),
        ("duration", opt(&t.duration), synth.duration_s.to_string()),
        ("groups", opt(&t.groups), synth.groups.to_string()),
        ("test_fraction", opt(&t.test_fraction), synth.test_fraction.to_string()),
        ("frames", opt(&t.frames), "20".into()),
    ];
    let values = entries
        .into_iter()
        .map(|(k, flag, default)| {
            let v = flag.or_else(|| file.get(k).cloned()).unwrap_or(default);
            (k, v)
        })
        .collect();
    Resolved { values }
}
