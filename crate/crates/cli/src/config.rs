//! Flat `key=value` experiment configuration with dotted namespaces.
//!
//! Blank lines and lines starting with `#` are ignored. Every key not listed
//! in [`KEYS`] is rejected. [`ExperimentConfig::to_text`] writes all keys in
//! a fixed order, so the text round-trips through [`ExperimentConfig::parse`].

use seafield::data::{InputChannels, SplitSpec, SyntheticSpec};
use seafield::evaluation::ReconstructionConfig;
use seafield::experiment::DataConfig;
use seafield::field::EncoderKind;
use seafield::fusion::{AggregateMode, Placement};
use seafield::model::{AblationVariant, GraphSourceKind, ModelConfig, ModelKind};
use seafield::training::TrainConfig;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Dataset directory; relative paths resolve against `SEAFIELD_DATA_DIR`.
    /// `None` means the synthetic dataset.
    pub data_path: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub variants: Vec<AblationVariant>,
    pub reconstruct: ReconstructionConfig,
    pub reconstruct_nodes: Vec<String>,
    pub reconstruct_kinds: Vec<EncoderKind>,
    /// Nodes drawn in prediction overlay plots.
    pub plot_nodes: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            data_path: None,
            synthetic: SyntheticSpec { nodes: 20, days: 28, granularity_minutes: 30, noise_std: 0.1, seed: 0 },
            data: DataConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0],
            out: PathBuf::from("out"),
            variants: AblationVariant::ALL.to_vec(),
            reconstruct: ReconstructionConfig::default(),
            reconstruct_nodes: Vec::new(),
            reconstruct_kinds: vec![EncoderKind::Rff, EncoderKind::Siren, EncoderKind::Linear],
            plot_nodes: Vec::new(),
        }
    }
}

/// Every accepted key, in output order.
pub const KEYS: &[&str] = &[
    "model.kind",
    "model.graph_source",
    "conv.channels",
    "conv.modules",
    "conv.kernels",
    "conv.out_hidden",
    "graph.residual_channels",
    "graph.conv_channels",
    "graph.skip_channels",
    "graph.end_channels",
    "graph.modules",
    "graph.kernels",
    "graph.dilations",
    "graph.embed_dim",
    "graph.alpha",
    "graph.k",
    "graph.depth",
    "graph.beta",
    "cnf.encoder",
    "cnf.m",
    "cnf.sigma",
    "cnf.node_m",
    "cnf.node_sigma",
    "cnf.hidden",
    "cnf.layers",
    "cnf.out_dim",
    "cnf.weekend",
    "cnf.omega0",
    "fusion.mode",
    "fusion.placement",
    "data.path",
    "data.history",
    "data.horizon",
    "data.channels",
    "data.split",
    "synthetic.nodes",
    "synthetic.days",
    "synthetic.granularity",
    "synthetic.noise_std",
    "synthetic.seed",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.weight_decay",
    "train.clip",
    "train.curriculum",
    "train.step_every",
    "train.max_horizon",
    "seeds",
    "output.dir",
    "ablation.variants",
    "reconstruct.nodes",
    "reconstruct.kinds",
    "reconstruct.hidden",
    "reconstruct.iterations",
    "reconstruct.lr",
    "reconstruct.m",
    "reconstruct.sigma",
    "reconstruct.omega0",
    "evaluate.nodes",
];

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.parse().map_err(|e| format!("'{v}': {e}"))
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| f(s.trim())).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn named<T>(r: seafield::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn split_spec(v: &str) -> Result<SplitSpec, String> {
    match v {
        "road" => Ok(SplitSpec::road()),
        "cellular" => Ok(SplitSpec::cellular()),
        _ => {
            let parts = list(v, num::<f64>)?;
            if parts.len() != 3 {
                return Err(format!("split needs road, cellular or three fractions, got '{v}'"));
            }
            named(SplitSpec::new(parts[0], parts[1], parts[2]))
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError { line: i + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { line: 0, message: format!("cannot read {}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let m = &mut self.model;
        match key {
            "model.kind" => m.kind = named(ModelKind::parse(v))?,
            "model.graph_source" => m.graph_source = named(GraphSourceKind::parse(v))?,
            "conv.channels" => m.conv.channels = num(v)?,
            "conv.modules" => m.conv.modules = num(v)?,
            "conv.kernels" => m.conv.kernels = list(v, num)?,
            "conv.out_hidden" => m.conv.out_hidden = num(v)?,
            "graph.residual_channels" => m.graph.residual_channels = num(v)?,
            "graph.conv_channels" => m.graph.conv_channels = num(v)?,
            "graph.skip_channels" => m.graph.skip_channels = num(v)?,
            "graph.end_channels" => m.graph.end_channels = num(v)?,
            "graph.modules" => m.graph.modules = num(v)?,
            "graph.kernels" => m.graph.kernels = list(v, num)?,
            "graph.dilations" => m.graph.dilations = if v == "auto" { Vec::new() } else { list(v, num)? },
            "graph.embed_dim" => m.graph.embed_dim = num(v)?,
            "graph.alpha" => m.graph.alpha = num(v)?,
            "graph.k" => m.graph.top_k = if v == "auto" { None } else { Some(num(v)?) },
            "graph.depth" => m.graph.depth = num(v)?,
            "graph.beta" => m.graph.beta = num(v)?,
            "cnf.encoder" => m.field.encoder = named(EncoderKind::parse(v))?,
            "cnf.m" => m.field.time_frequencies = num(v)?,
            "cnf.sigma" => m.field.time_sigma = num(v)?,
            "cnf.node_m" => m.field.node_frequencies = num(v)?,
            "cnf.node_sigma" => m.field.node_sigma = num(v)?,
            "cnf.hidden" => m.field.hidden = num(v)?,
            "cnf.layers" => m.field.layers = num(v)?,
            "cnf.out_dim" => m.field.out_dim = num(v)?,
            "cnf.weekend" => m.field.with_weekend = flag(v)?,
            "cnf.omega0" => m.field.siren_omega0 = num(v)?,
            "fusion.mode" => m.fusion_mode = named(AggregateMode::parse(v))?,
            "fusion.placement" => m.placement = named(Placement::parse(v))?,
            "data.path" => self.data_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.history" => self.data.history = num(v)?,
            "data.horizon" => self.data.horizon = num(v)?,
            "data.channels" => self.data.channels = named(InputChannels::parse(v))?,
            "data.split" => self.data.split = split_spec(v)?,
            "synthetic.nodes" => self.synthetic.nodes = num(v)?,
            "synthetic.days" => self.synthetic.days = num(v)?,
            "synthetic.granularity" => self.synthetic.granularity_minutes = num(v)?,
            "synthetic.noise_std" => self.synthetic.noise_std = num(v)?,
            "synthetic.seed" => self.synthetic.seed = num(v)?,
            "train.epochs" => self.train.epochs = num(v)?,
            "train.batch_size" => self.train.batch_size = num(v)?,
            "train.lr" => self.train.learning_rate = num(v)?,
            "train.weight_decay" => self.train.weight_decay = num(v)?,
            "train.clip" => self.train.clip_norm = num(v)?,
            "train.curriculum" => self.train.curriculum = flag(v)?,
            "train.step_every" => self.train.schedule.step_every = num(v)?,
            "train.max_horizon" => self.train.schedule.max_horizon = num(v)?,
            "seeds" => {
                let seeds = list(v, num)?;
                if seeds.is_empty() {
                    return Err("seeds must not be empty".into());
                }
                self.seeds = seeds;
            }
            "output.dir" => self.out = PathBuf::from(v),
            "ablation.variants" => self.variants = list(v, |s| named(AblationVariant::parse(s)))?,
            "reconstruct.nodes" => self.reconstruct_nodes = list(v, |s| Ok(s.to_owned()))?,
            "reconstruct.kinds" => self.reconstruct_kinds = list(v, |s| named(EncoderKind::parse(s)))?,
            "reconstruct.hidden" => self.reconstruct.hidden = num(v)?,
            "reconstruct.iterations" => self.reconstruct.iterations = num(v)?,
            "reconstruct.lr" => self.reconstruct.learning_rate = num(v)?,
            "reconstruct.m" => self.reconstruct.rff_frequencies = num(v)?,
            "reconstruct.sigma" => self.reconstruct.sigma = num(v)?,
            "reconstruct.omega0" => self.reconstruct.omega0 = num(v)?,
            "evaluate.nodes" => self.plot_nodes = list(v, |s| Ok(s.to_owned()))?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let syn = &self.synthetic;
        let s = &self.data.split;
        Some(match key {
            "model.kind" => m.kind.as_str().into(),
            "model.graph_source" => m.graph_source.as_str().into(),
            "conv.channels" => m.conv.channels.to_string(),
            "conv.modules" => m.conv.modules.to_string(),
            "conv.kernels" => join(&m.conv.kernels),
            "conv.out_hidden" => m.conv.out_hidden.to_string(),
            "graph.residual_channels" => m.graph.residual_channels.to_string(),
            "graph.conv_channels" => m.graph.conv_channels.to_string(),
            "graph.skip_channels" => m.graph.skip_channels.to_string(),
            "graph.end_channels" => m.graph.end_channels.to_string(),
            "graph.modules" => m.graph.modules.to_string(),
            "graph.kernels" => join(&m.graph.kernels),
            "graph.dilations" if m.graph.dilations.is_empty() => "auto".into(),
            "graph.dilations" => join(&m.graph.dilations),
            "graph.embed_dim" => m.graph.embed_dim.to_string(),
            "graph.alpha" => m.graph.alpha.to_string(),
            "graph.k" => m.graph.top_k.map_or("auto".into(), |k| k.to_string()),
            "graph.depth" => m.graph.depth.to_string(),
            "graph.beta" => m.graph.beta.to_string(),
            "cnf.encoder" => m.field.encoder.as_str().into(),
            "cnf.m" => m.field.time_frequencies.to_string(),
            "cnf.sigma" => m.field.time_sigma.to_string(),
            "cnf.node_m" => m.field.node_frequencies.to_string(),
            "cnf.node_sigma" => m.field.node_sigma.to_string(),
            "cnf.hidden" => m.field.hidden.to_string(),
            "cnf.layers" => m.field.layers.to_string(),
            "cnf.out_dim" => m.field.out_dim.to_string(),
            "cnf.weekend" => m.field.with_weekend.to_string(),
            "cnf.omega0" => m.field.siren_omega0.to_string(),
            "fusion.mode" => m.fusion_mode.as_str().into(),
            "fusion.placement" => m.placement.as_str().into(),
            "data.path" => self.data_path.as_ref().map_or(String::new(), |p| p.display().to_string()),
            "data.history" => self.data.history.to_string(),
            "data.horizon" => self.data.horizon.to_string(),
            "data.channels" => self.data.channels.as_str().into(),
            "data.split" => format!("{},{},{}", s.train, s.val, s.test),
            "synthetic.nodes" => syn.nodes.to_string(),
            "synthetic.days" => syn.days.to_string(),
            "synthetic.granularity" => syn.granularity_minutes.to_string(),
            "synthetic.noise_std" => syn.noise_std.to_string(),
            "synthetic.seed" => syn.seed.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.lr" => self.train.learning_rate.to_string(),
            "train.weight_decay" => self.train.weight_decay.to_string(),
            "train.clip" => self.train.clip_norm.to_string(),
            "train.curriculum" => self.train.curriculum.to_string(),
            "train.step_every" => self.train.schedule.step_every.to_string(),
            "train.max_horizon" => self.train.schedule.max_horizon.to_string(),
            "seeds" => join(&self.seeds),
            "output.dir" => self.out.display().to_string(),
            "ablation.variants" => self.variants.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(","),
            "reconstruct.nodes" => self.reconstruct_nodes.join(","),
            "reconstruct.kinds" => self.reconstruct_kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(","),
            "reconstruct.hidden" => self.reconstruct.hidden.to_string(),
            "reconstruct.iterations" => self.reconstruct.iterations.to_string(),
            "reconstruct.lr" => self.reconstruct.learning_rate.to_string(),
            "reconstruct.m" => self.reconstruct.rff_frequencies.to_string(),
            "reconstruct.sigma" => self.reconstruct.sigma.to_string(),
            "reconstruct.omega0" => self.reconstruct.omega0.to_string(),
            "evaluate.nodes" => self.plot_nodes.join(","),
            _ => return None,
        })
    }

    /// Canonical text holding every key.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("listed key"))).collect()
    }

    /// The dataset directory, resolved against `data_root` when relative.
    pub fn data_dir(&self, data_root: Option<&Path>) -> Option<PathBuf> {
        let p = self.data_path.as_ref()?;
        Some(match data_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_readable() {
        let cfg = ExperimentConfig::default();
        for k in KEYS {
            assert!(cfg.get(k).is_some(), "{k}");
        }
        assert!(cfg.get("foo").is_none());
    }

    #[test]
    fn edited_values_round_trip() {
        let text = "\
# a comment
model.kind = seacnn
graph.k=5
graph.dilations=1,2,4
data.path=metr-la
data.split=cellular
train.epochs=7
train.curriculum=false
seeds=3,1,4
ablation.variants=full,no_rff
reconstruct.nodes=20,21
cnf.sigma=2.5
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.model.kind, ModelKind::Seacnn);
        assert_eq!(cfg.model.graph.top_k, Some(5));
        assert_eq!(cfg.model.graph.dilations, vec![1, 2, 4]);
        assert_eq!(cfg.data_path, Some("metr-la".into()));
        assert_eq!(cfg.data.split, SplitSpec::cellular());
        assert_eq!(cfg.seeds, vec![3, 1, 4]);
        assert_eq!(cfg.variants, vec![AblationVariant::Full, AblationVariant::NoRff]);
        assert_eq!(cfg.reconstruct_nodes, vec!["20", "21"]);
        assert!(!cfg.train.curriculum);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_lines() {
        let e = ExperimentConfig::parse("train.epochs=3\nfoo=1\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("foo"));
        for bad in ["train.epochs=three", "model.kind=lstm", "no equals sign", "seeds=", "data.split=0.5,0.5", "cnf.weekend=yes"] {
            assert!(ExperimentConfig::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn data_dir_resolves_relative_paths() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.data_dir(Some(Path::new("/data"))), None);
        cfg.set("data.path", "metr").unwrap();
        assert_eq!(cfg.data_dir(Some(Path::new("/data"))), Some(PathBuf::from("/data/metr")));
        assert_eq!(cfg.data_dir(None), Some(PathBuf::from("metr")));
        cfg.set("data.path", "/abs/metr").unwrap();
        assert_eq!(cfg.data_dir(Some(Path::new("/data"))), Some(PathBuf::from("/abs/metr")));
    }
}
