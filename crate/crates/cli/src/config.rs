//! Flat `key = value` run configuration.
//!
//! One UTF-8 text file holds every tunable across the pipeline. The format
//! is deliberately primitive: one `key = value` pair per line, `#` starts a
//! full-line comment, lists are comma-separated. Unknown and duplicate keys
//! are rejected so typos fail loudly, and `serialize` emits a canonical form
//! that reparses to an identical config (the canonical bytes are also what
//! the checkpoint hash covers).

use std::collections::BTreeMap;

use scan_core::data::augment::AugmentConfig;
use scan_core::data::synth::{DataKind, SynthConfig};
use scan_core::error::{Result, ScanError};
use scan_core::fewshot::{ClassifierBudget, EvalConfig};
use scan_core::loss::{LossConfig, PurityReduction};
use scan_core::model::{
    default_cluster_count, EncoderConfig, HeadConfig, ModelConfig, ProjectionConfig,
};
use scan_core::optim::SgdConfig;
use scan_core::train::{ReassignCadence, TrainConfig, TrainMode};

/// Encoder family selector; the concrete dimensions come from other keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Mlp,
    Conv4,
}

impl EncoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderKind::Mlp => "mlp",
            EncoderKind::Conv4 => "conv4",
        }
    }

    pub fn parse(s: &str) -> Result<EncoderKind> {
        match s {
            "mlp" => Ok(EncoderKind::Mlp),
            "conv4" => Ok(EncoderKind::Conv4),
            other => Err(ScanError::config(format!(
                "unknown encoder '{other}' (expected mlp or conv4)"
            ))),
        }
    }
}

/// Every tunable of the pipeline with its default. Field order here is the
/// canonical serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    // Synthetic data generation and loading.
    pub data_kind: DataKindKey,
    pub input_dim: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub n_base_classes: usize,
    pub n_novel_classes: usize,
    pub subclusters: Vec<usize>,
    pub samples_per_class: usize,
    pub separation: f64,
    pub spread: f64,
    pub noise_std: f64,

    // Model.
    pub encoder: EncoderKind,
    pub mlp_hidden: Vec<usize>,
    pub conv_channels: [usize; 4],
    pub backbone_dim: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    /// `None` means the `ceil(2.5 * n_classes)` rule.
    pub n_clusters: Option<usize>,

    // Optimization.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Checkpoint every k epochs (0 = only at the end).
    pub checkpoint_every: usize,

    // Losses and memory.
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub purity_reduction: PurityReduction,
    pub reassign: ReassignCadence,

    // Augmentation (images only; vector samples pass through untouched).
    pub augment: bool,
    pub hflip_prob: f64,
    pub crop_pad: usize,
    pub rotation_range: f64,
    pub brightness_lo: f64,
    pub brightness_hi: f64,

    // Few-shot evaluation.
    pub n_way: usize,
    pub k_shot: usize,
    pub q_per_class: usize,
    pub episodes: usize,
    pub classifier_steps: usize,
    pub classifier_lr: f64,
    pub classifier_l2: f64,
}

/// `data_kind` selector mirroring [`DataKind`] without the dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKindKey {
    Vector,
    Image,
}

impl DataKindKey {
    pub fn as_str(&self) -> &'static str {
        match self {
            DataKindKey::Vector => "vector",
            DataKindKey::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Result<DataKindKey> {
        match s {
            "vector" => Ok(DataKindKey::Vector),
            "image" => Ok(DataKindKey::Image),
            other => Err(ScanError::config(format!(
                "unknown data_kind '{other}' (expected vector or image)"
            ))),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data_kind: DataKindKey::Vector,
            input_dim: 8,
            image_height: 32,
            image_width: 32,
            n_base_classes: 4,
            n_novel_classes: 4,
            subclusters: vec![1, 2, 3, 2],
            samples_per_class: 200,
            separation: 4.0,
            spread: 8.0,
            noise_std: 0.75,
            encoder: EncoderKind::Mlp,
            mlp_hidden: vec![64, 64],
            conv_channels: [8, 16, 16, 32],
            backbone_dim: 64,
            embed_dim: 32,
            dropout: 0.5,
            n_clusters: None,
            lr: 0.0075,
            momentum: 0.9,
            weight_decay: 1e-5,
            epochs: 60,
            warmup_epochs: 5,
            batch_size: 32,
            checkpoint_every: 20,
            alpha: 0.3,
            beta: 0.5,
            lambda: 1.0,
            purity_reduction: PurityReduction::Sum,
            reassign: ReassignCadence::Batch,
            augment: true,
            hflip_prob: 0.5,
            crop_pad: 2,
            rotation_range: 30.0,
            brightness_lo: 0.9,
            brightness_hi: 1.1,
            n_way: 2,
            k_shot: 1,
            q_per_class: 5,
            episodes: 600,
            classifier_steps: 100,
            classifier_lr: 0.01,
            classifier_l2: 1e-3,
        }
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|item| {
            item.trim().parse::<usize>().map_err(|_| {
                ScanError::config(format!("config key '{key}': invalid list item '{}'", item.trim()))
            })
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| ScanError::config(format!("config key '{key}': invalid {what} '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(ScanError::config(format!(
            "config key '{key}': invalid bool '{other}' (expected true or false)"
        ))),
    }
}

impl RunConfig {
    /// Parses the flat text form over the defaults. Unknown keys, duplicate
    /// keys, malformed lines, and bad values are all config errors.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut pairs = BTreeMap::<String, String>::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ScanError::config(format!(
                    "config line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if pairs.insert(key.clone(), value).is_some() {
                return Err(ScanError::config(format!("duplicate config key '{key}'")));
            }
        }

        let mut cfg = RunConfig::default();
        let mut take = |key: &str| pairs.remove(key);

        if let Some(v) = take("seed") {
            cfg.seed = parse_scalar("seed", &v, "u64")?;
        }
        if let Some(v) = take("data_kind") {
            cfg.data_kind = DataKindKey::parse(&v)?;
        }
        if let Some(v) = take("input_dim") {
            cfg.input_dim = parse_scalar("input_dim", &v, "integer")?;
        }
        if let Some(v) = take("image_height") {
            cfg.image_height = parse_scalar("image_height", &v, "integer")?;
        }
        if let Some(v) = take("image_width") {
            cfg.image_width = parse_scalar("image_width", &v, "integer")?;
        }
        if let Some(v) = take("n_base_classes") {
            cfg.n_base_classes = parse_scalar("n_base_classes", &v, "integer")?;
        }
        if let Some(v) = take("n_novel_classes") {
            cfg.n_novel_classes = parse_scalar("n_novel_classes", &v, "integer")?;
        }
        if let Some(v) = take("subclusters") {
            cfg.subclusters = parse_list("subclusters", &v)?;
        }
        if let Some(v) = take("samples_per_class") {
            cfg.samples_per_class = parse_scalar("samples_per_class", &v, "integer")?;
        }
        if let Some(v) = take("separation") {
            cfg.separation = parse_scalar("separation", &v, "float")?;
        }
        if let Some(v) = take("spread") {
            cfg.spread = parse_scalar("spread", &v, "float")?;
        }
        if let Some(v) = take("noise_std") {
            cfg.noise_std = parse_scalar("noise_std", &v, "float")?;
        }
        if let Some(v) = take("encoder") {
            cfg.encoder = EncoderKind::parse(&v)?;
        }
        if let Some(v) = take("mlp_hidden") {
            cfg.mlp_hidden = parse_list("mlp_hidden", &v)?;
        }
        if let Some(v) = take("conv_channels") {
            let list = parse_list("conv_channels", &v)?;
            cfg.conv_channels = list.try_into().map_err(|_| {
                ScanError::config("config key 'conv_channels': expected exactly 4 items".to_string())
            })?;
        }
        if let Some(v) = take("backbone_dim") {
            cfg.backbone_dim = parse_scalar("backbone_dim", &v, "integer")?;
        }
        if let Some(v) = take("embed_dim") {
            cfg.embed_dim = parse_scalar("embed_dim", &v, "integer")?;
        }
        if let Some(v) = take("dropout") {
            cfg.dropout = parse_scalar("dropout", &v, "float")?;
        }
        if let Some(v) = take("n_clusters") {
            cfg.n_clusters = if v == "auto" {
                None
            } else {
                Some(parse_scalar("n_clusters", &v, "integer (or auto)")?)
            };
        }
        if let Some(v) = take("lr") {
            cfg.lr = parse_scalar("lr", &v, "float")?;
        }
        if let Some(v) = take("momentum") {
            cfg.momentum = parse_scalar("momentum", &v, "float")?;
        }
        if let Some(v) = take("weight_decay") {
            cfg.weight_decay = parse_scalar("weight_decay", &v, "float")?;
        }
        if let Some(v) = take("epochs") {
            cfg.epochs = parse_scalar("epochs", &v, "integer")?;
        }
        if let Some(v) = take("warmup_epochs") {
            cfg.warmup_epochs = parse_scalar("warmup_epochs", &v, "integer")?;
        }
        if let Some(v) = take("batch_size") {
            cfg.batch_size = parse_scalar("batch_size", &v, "integer")?;
        }
        if let Some(v) = take("checkpoint_every") {
            cfg.checkpoint_every = parse_scalar("checkpoint_every", &v, "integer")?;
        }
        if let Some(v) = take("alpha") {
            cfg.alpha = parse_scalar("alpha", &v, "float")?;
        }
        if let Some(v) = take("beta") {
            cfg.beta = parse_scalar("beta", &v, "float")?;
        }
        if let Some(v) = take("lambda") {
            cfg.lambda = parse_scalar("lambda", &v, "float")?;
        }
        if let Some(v) = take("purity_reduction") {
            cfg.purity_reduction = PurityReduction::parse(&v)?;
        }
        if let Some(v) = take("reassign") {
            cfg.reassign = ReassignCadence::parse(&v)?;
        }
        if let Some(v) = take("augment") {
            cfg.augment = parse_bool("augment", &v)?;
        }
        if let Some(v) = take("hflip_prob") {
            cfg.hflip_prob = parse_scalar("hflip_prob", &v, "float")?;
        }
        if let Some(v) = take("crop_pad") {
            cfg.crop_pad = parse_scalar("crop_pad", &v, "integer")?;
        }
        if let Some(v) = take("rotation_range") {
            cfg.rotation_range = parse_scalar("rotation_range", &v, "float")?;
        }
        if let Some(v) = take("brightness_lo") {
            cfg.brightness_lo = parse_scalar("brightness_lo", &v, "float")?;
        }
        if let Some(v) = take("brightness_hi") {
            cfg.brightness_hi = parse_scalar("brightness_hi", &v, "float")?;
        }
        if let Some(v) = take("n_way") {
            cfg.n_way = parse_scalar("n_way", &v, "integer")?;
        }
        if let Some(v) = take("k_shot") {
            cfg.k_shot = parse_scalar("k_shot", &v, "integer")?;
        }
        if let Some(v) = take("q_per_class") {
            cfg.q_per_class = parse_scalar("q_per_class", &v, "integer")?;
        }
        if let Some(v) = take("episodes") {
            cfg.episodes = parse_scalar("episodes", &v, "integer")?;
        }
        if let Some(v) = take("classifier_steps") {
            cfg.classifier_steps = parse_scalar("classifier_steps", &v, "integer")?;
        }
        if let Some(v) = take("classifier_lr") {
            cfg.classifier_lr = parse_scalar("classifier_lr", &v, "float")?;
        }
        if let Some(v) = take("classifier_l2") {
            cfg.classifier_l2 = parse_scalar("classifier_l2", &v, "float")?;
        }

        if let Some(key) = pairs.keys().next() {
            return Err(ScanError::config(format!("unknown config key '{key}'")));
        }
        Ok(cfg)
    }

    /// Canonical text form; `parse(serialize(c)) == c`. These bytes are also
    /// what the checkpoint config hash covers.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |key: &str, value: String| {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&value);
            s.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("data_kind", self.data_kind.as_str().to_string());
        kv("input_dim", self.input_dim.to_string());
        kv("image_height", self.image_height.to_string());
        kv("image_width", self.image_width.to_string());
        kv("n_base_classes", self.n_base_classes.to_string());
        kv("n_novel_classes", self.n_novel_classes.to_string());
        kv("subclusters", join(&self.subclusters));
        kv("samples_per_class", self.samples_per_class.to_string());
        kv("separation", self.separation.to_string());
        kv("spread", self.spread.to_string());
        kv("noise_std", self.noise_std.to_string());
        kv("encoder", self.encoder.as_str().to_string());
        kv("mlp_hidden", join(&self.mlp_hidden));
        kv("conv_channels", join(&self.conv_channels));
        kv("backbone_dim", self.backbone_dim.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("dropout", self.dropout.to_string());
        kv("n_clusters", self.n_clusters.map_or("auto".to_string(), |k| k.to_string()));
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("epochs", self.epochs.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta.to_string());
        kv("lambda", self.lambda.to_string());
        kv("purity_reduction", self.purity_reduction.as_str().to_string());
        kv("reassign", self.reassign.as_str().to_string());
        kv("augment", self.augment.to_string());
        kv("hflip_prob", self.hflip_prob.to_string());
        kv("crop_pad", self.crop_pad.to_string());
        kv("rotation_range", self.rotation_range.to_string());
        kv("brightness_lo", self.brightness_lo.to_string());
        kv("brightness_hi", self.brightness_hi.to_string());
        kv("n_way", self.n_way.to_string());
        kv("k_shot", self.k_shot.to_string());
        kv("q_per_class", self.q_per_class.to_string());
        kv("episodes", self.episodes.to_string());
        kv("classifier_steps", self.classifier_steps.to_string());
        kv("classifier_lr", self.classifier_lr.to_string());
        kv("classifier_l2", self.classifier_l2.to_string());
        s
    }

    pub fn synth_config(&self) -> SynthConfig {
        let kind = match self.data_kind {
            DataKindKey::Vector => DataKind::Vector { dim: self.input_dim },
            DataKindKey::Image => {
                DataKind::Image { height: self.image_height, width: self.image_width }
            }
        };
        SynthConfig {
            n_base_classes: self.n_base_classes,
            n_novel_classes: self.n_novel_classes,
            subclusters_per_class: self.subclusters.clone(),
            samples_per_class: self.samples_per_class,
            kind,
            inter_class_separation: self.separation,
            intra_subcluster_std: self.noise_std,
            subcluster_spread: self.spread,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, n_classes: usize) -> ModelConfig {
        let encoder = match self.encoder {
            EncoderKind::Mlp => EncoderConfig::Mlp {
                input_dim: self.input_dim,
                hidden: self.mlp_hidden.clone(),
                backbone_dim: self.backbone_dim,
            },
            EncoderKind::Conv4 => EncoderConfig::Conv4Lite {
                in_channels: 1,
                height: self.image_height,
                width: self.image_width,
                channels: self.conv_channels,
                backbone_dim: self.backbone_dim,
            },
        };
        ModelConfig {
            encoder,
            projection: ProjectionConfig { out_dim: self.embed_dim, dropout_rate: self.dropout },
            heads: HeadConfig {
                n_classes,
                n_clusters: self.n_clusters.unwrap_or_else(|| default_cluster_count(n_classes)),
            },
        }
    }

    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        let augment = if self.augment {
            AugmentConfig {
                hflip_prob: self.hflip_prob,
                crop_pad: self.crop_pad,
                rotation_range: self.rotation_range,
                brightness: (self.brightness_lo, self.brightness_hi),
            }
        } else {
            AugmentConfig::disabled()
        };
        TrainConfig {
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            batch_size: self.batch_size,
            sgd: SgdConfig {
                lr: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
            loss: LossConfig {
                alpha: self.alpha,
                lambda: self.lambda,
                purity_reduction: self.purity_reduction,
            },
            memory: scan_core::memory::MemoryConfig { beta: self.beta },
            mode,
            reassign: self.reassign,
            augment,
            seed: self.seed,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_per_class: self.q_per_class,
            episodes: self.episodes,
            seed: self.seed,
            classifier: ClassifierBudget {
                steps: self.classifier_steps,
                lr: self.classifier_lr,
                l2: self.classifier_l2,
            },
        }
    }

    /// Cheap cross-field checks shared by every subcommand. Deeper
    /// validation happens in the library configs this expands into.
    pub fn validate(&self) -> Result<()> {
        self.train_config(TrainMode::Full).validate()?;
        self.eval_config().validate()?;
        if self.embed_dim == 0 || self.backbone_dim == 0 {
            return Err(ScanError::config("embed_dim and backbone_dim must be positive".to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = cfg.serialize();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
        // And a second round for canonical-form stability.
        assert_eq!(text, back.serialize());
    }

    #[test]
    fn edited_values_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.lambda = 0.1;
        cfg.n_clusters = Some(12);
        cfg.subclusters = vec![2, 5];
        cfg.encoder = EncoderKind::Conv4;
        cfg.weight_decay = 3e-7;
        cfg.augment = false;
        let back = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::parse("learning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key 'learning_rate'"), "got: {err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = RunConfig::parse("lr = 0.1\nlr = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate config key 'lr'"), "got: {err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = RunConfig::parse("lr = 0.1\nnot a pair\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "got: {err}");
    }

    #[test]
    fn bad_values_name_the_key() {
        for (text, needle) in [
            ("lr = fast", "config key 'lr'"),
            ("subclusters = 1,x,3", "config key 'subclusters'"),
            ("augment = yes", "config key 'augment'"),
            ("encoder = resnet", "unknown encoder 'resnet'"),
            ("n_clusters = some", "config key 'n_clusters'"),
            ("conv_channels = 1,2,3", "expected exactly 4 items"),
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(err.to_string().contains(needle), "for '{text}' got: {err}");
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# a comment\n\n  \nseed = 9\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn auto_cluster_rule_expands_per_class_count() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model_config(4).heads.n_clusters, 10);
        assert_eq!(cfg.model_config(10).heads.n_clusters, 25);
        let pinned = RunConfig { n_clusters: Some(7), ..RunConfig::default() };
        assert_eq!(pinned.model_config(4).heads.n_clusters, 7);
    }

    #[test]
    fn validate_surfaces_library_violations() {
        let bad = RunConfig { lr: -1.0, ..RunConfig::default() };
        assert!(bad.validate().is_err());
        let bad = RunConfig { warmup_epochs: 60, epochs: 60, ..RunConfig::default() };
        assert!(bad.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
