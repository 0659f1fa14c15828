//! TOML run configuration: every knob of a training run in one file, validated
//! in full before any work starts. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{assemble, load_csv, synth, vertical_split, CsvSchema, SynthSpec, VerticalDataset};
use crate::error::{Error, Result};
use crate::he::{keygen, KeyPair};
use crate::metrics::{CostModel, TimingMode};
use crate::netsim::LinkModel;
use crate::protocol::HyperParams;
use crate::straggler::StragglerConfig;
use crate::scheme::PlainScheme;
use crate::training::{run_training, Fault, TrainingConfig, TrainingResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub label: String,
    /// Paillier modulus size; 0 runs the protocol without encryption.
    pub key_bits: usize,
    pub seed: u64,
    /// Feature count per party, guest first. The host count is one less.
    pub feature_counts: Vec<usize>,
    pub hyper: HyperParams,
    pub straggler: StragglerConfig,
    pub network: LinkModel,
    pub compression: CompressionSection,
    pub timing: TimingSection,
    pub data: DataSection,
    pub output: OutputSection,
    pub faults: Vec<Fault>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionSection {
    /// Kept fraction of features per party, or one value for all; 1.0 is off.
    pub pca_ratio: Vec<f64>,
}

impl Default for CompressionSection {
    fn default() -> Self {
        CompressionSection {
            pca_ratio: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSection {
    pub mode: TimingMode,
    /// Constant charged to every round, in seconds.
    pub other_per_round_s: f64,
    /// Unit op costs; defaults follow the key size.
    pub costs: Option<CostModel>,
}

impl Default for TimingSection {
    fn default() -> Self {
        TimingSection {
            mode: TimingMode::Model,
            other_per_round_s: 2.0,
            costs: None,
        }
    }
}

/// Where the data comes from: `synth` or `csv`, exactly one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub csv: Option<CsvSection>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            synth: Some(SynthSection::default()),
            csv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub m: usize,
    pub rank: usize,
    pub noise: f64,
    pub margin: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            m: 1024,
            rank: 10,
            noise: 0.1,
            margin: 1.0,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSection {
    /// One file per party; the one holding `label_column` becomes the guest.
    pub paths: Vec<PathBuf>,
    pub id_column: String,
    pub label_column: String,
    pub standardize: bool,
}

impl Default for CsvSection {
    fn default() -> Self {
        CsvSection {
            paths: Vec::new(),
            id_column: "id".into(),
            label_column: "label".into(),
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write the message trace.
    pub trace: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            trace: false,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            label: "run".into(),
            key_bits: 1024,
            seed: 0,
            feature_counts: vec![10, 10, 10, 10],
            hyper: HyperParams::default(),
            straggler: StragglerConfig::default(),
            network: LinkModel::default(),
            compression: CompressionSection::default(),
            timing: TimingSection::default(),
            data: DataSection::default(),
            output: OutputSection::default(),
            faults: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The effective configuration with every default spelled out.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hosts(&self) -> usize {
        self.feature_counts.len().saturating_sub(1)
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self) -> Result<()> {
        let too_small = self.key_bits < crate::he::MIN_KEY_BITS && !crate::he::small_keys_allowed();
        if self.key_bits != 0 && (too_small || self.key_bits % 2 != 0 || self.key_bits < 64) {
            return Err(Error::Config(format!(
                "key_bits must be 0 (plain) or at least {}, got {}",
                crate::he::MIN_KEY_BITS,
                self.key_bits
            )));
        }
        if self.feature_counts.is_empty() || self.feature_counts.contains(&0) {
            return Err(Error::Config("feature_counts needs a positive count per party".into()));
        }
        self.hyper.validate()?;
        self.straggler.validate(self.hosts())?;
        self.network.validate()?;
        let parties = self.feature_counts.len();
        let ratios = &self.compression.pca_ratio;
        if ratios.len() != 1 && ratios.len() != parties {
            return Err(Error::Config(format!(
                "pca_ratio has {} entries for {parties} parties",
                ratios.len()
            )));
        }
        if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::Config(format!("pca_ratio must be in (0, 1], got {r}")));
        }
        if let Some(c) = &self.timing.costs {
            c.validate()?;
        }
        if !(self.timing.other_per_round_s >= 0.0 && self.timing.other_per_round_s.is_finite()) {
            return Err(Error::Config("other_per_round_s must be non-negative".into()));
        }
        match (&self.data.synth, &self.data.csv) {
            (Some(s), None) => {
                let n: usize = self.feature_counts.iter().sum();
                if s.m == 0 || s.rank == 0 || s.rank > n {
                    return Err(Error::Config(format!(
                        "synth needs m > 0 and 0 < rank <= {n}, got m={} rank={}",
                        s.m, s.rank
                    )));
                }
                if self.straggler.backup_workers > 0 && self.hyper.batch_size < s.m {
                    return Err(Error::Config(
                        "backup workers need full-batch training (batch_size >= m)".into(),
                    ));
                }
            }
            (None, Some(c)) => {
                if c.paths.len() != parties {
                    return Err(Error::Config(format!(
                        "{} csv paths for {parties} parties",
                        c.paths.len()
                    )));
                }
            }
            _ => {
                return Err(Error::Config(
                    "data needs exactly one of [data.synth] or [data.csv]".into(),
                ))
            }
        }
        for f in &self.faults {
            if f.host == 0 || f.host as usize > self.hosts() {
                return Err(Error::Config(format!("fault names unknown host {}", f.host)));
            }
        }
        Ok(())
    }

    /// Builds the aligned dataset. CSV paths are resolved against `base`.
    pub fn dataset(&self, base: &Path) -> Result<VerticalDataset> {
        if let Some(s) = &self.data.synth {
            let (x, y) = synth(&SynthSpec {
                m: s.m,
                n: self.feature_counts.iter().sum(),
                rank: s.rank,
                noise: s.noise,
                margin: s.margin,
                seed: s.seed.unwrap_or(self.seed),
            })?;
            return Ok(vertical_split(&x, &y, &self.feature_counts, self.seed)?.0);
        }
        let c = self.data.csv.as_ref().expect("validated");
        let mut tables = Vec::with_capacity(c.paths.len());
        for p in &c.paths {
            let path = if p.is_absolute() { p.clone() } else { base.join(p) };
            let header = std::fs::read_to_string(&path)
                .ok()
                .and_then(|t| t.lines().next().map(str::to_string))
                .unwrap_or_default();
            let has_label = header.split(',').any(|h| h.trim() == c.label_column);
            let schema = CsvSchema {
                id_column: c.id_column.clone(),
                label_column: has_label.then(|| c.label_column.clone()),
                standardize: c.standardize,
            };
            tables.push(load_csv(&path, &schema)?);
        }
        let ds = assemble(tables)?;
        if ds.feature_counts() != self.feature_counts {
            return Err(Error::Config(format!(
                "feature_counts {:?} do not match the files {:?}",
                self.feature_counts,
                ds.feature_counts()
            )));
        }
        if self.straggler.backup_workers > 0 && self.hyper.batch_size < ds.m() {
            return Err(Error::Config(
                "backup workers need full-batch training (batch_size >= m)".into(),
            ));
        }
        Ok(ds)
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            label: self.label.clone(),
            hp: self.hyper.clone(),
            straggler: self.straggler,
            link: self.network,
            pca_ratio: self.compression.pca_ratio.clone(),
            timing: self.timing.mode,
            costs: self.timing.costs,
            other_per_round_s: self.timing.other_per_round_s,
            seed: self.seed,
            faults: self.faults.clone(),
            trace: self.output.trace,
            evaluate: true,
        }
    }

    /// Key pair derived from the run seed, so a config alone pins the keys.
    pub fn keypair(&self) -> Result<KeyPair> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ KEY_SEED_SALT);
        Ok(keygen(self.key_bits, &mut rng)?)
    }

    /// Builds the dataset and trains, encrypted unless `key_bits` is 0.
    pub fn execute(&self, base: &Path) -> Result<TrainingResult> {
        self.validate()?;
        let ds = self.dataset(base)?;
        let cfg = self.training();
        if self.key_bits == 0 {
            run_training(&PlainScheme, &(), &ds, &cfg)
        } else {
            let kp = self.keypair()?;
            run_training(&kp.public_key, &kp.private_key, &ds, &cfg)
        }
    }
}

/// One comment per key of the default config, plus commented-out optional keys
/// appended to their section.
const KEY_DOCS: &[(&str, &str)] = &[
    ("label", "Name written into every metrics row."),
    ("key_bits", "Paillier modulus bits: 512, 1024, 2048 or 3072; 0 runs without encryption."),
    ("seed", "Seeds keys, data, batches and link draws."),
    ("feature_counts", "Features per party, guest first; the host count is one less."),
    ("faults", "Hosts that stop responding, e.g. [{ host = 1, from_iteration = 10 }]."),
    ("hyper.learning_rate", "Step size applied to the batch-averaged gradient."),
    ("hyper.lambda", "L2 regularization weight."),
    ("hyper.max_iterations", "Training rounds."),
    ("hyper.batch_size", "Rows per round; values at or above the row count give full-batch training."),
    ("hyper.residual_rule", "\"linear\" (squared loss) or \"logistic_taylor\" (labels 0/1 or -1/+1)."),
    ("hyper.optimizer", "\"sgd\" or \"rmsprop\"."),
    ("hyper.normalize_gradient", "Divide summed gradients by the batch size."),
    ("straggler.backup_workers", "Slowest hosts a round may skip; needs full-batch training when above 0."),
    ("straggler.max_staleness", "Oldest cached share, in rounds, that may stand in for a late host."),
    ("straggler.policy", "\"stale\" reuses cached shares, \"drop\" leaves late hosts out."),
    ("network.baseline_bandwidth", "Link bandwidth in bits per second."),
    ("network.slowdown_prob", "Chance per round that a link runs at baseline / bottleneck_divisor."),
    ("network.bottleneck_divisor", "Slowdown factor of a degraded link."),
    ("network.latency", "Fixed per-message delay in seconds."),
    ("network.scope", "\"per_link\" draws each link, \"per_party\" draws each party once per round."),
    ("compression.pca_ratio", "Kept fraction of features, one value or one per party; 1.0 is off."),
    ("timing.mode", "\"model\" charges unit costs per op (deterministic); \"wall_clock\" measures."),
    ("timing.other_per_round_s", "Constant overhead charged to every round, in seconds."),
    ("data.synth.m", "Rows."),
    ("data.synth.rank", "Rank of the noise-free feature matrix."),
    ("data.synth.noise", "Standard deviation of added Gaussian noise."),
    ("data.synth.margin", "Distance of each class from the separating plane."),
    ("output.dir", "Run directory; --out overrides it."),
    ("output.trace", "Also write every simulated message to trace.jsonl."),
];

const SECTION_EXTRAS: &[(&str, &str)] = &[
    (
        "timing",
        "# Unit op costs in seconds; derived from key_bits when omitted.\n\
         # costs = { encrypt_s = 3e-3, decrypt_s = 1e-3, enc_mul_s = 1.9e-4, enc_add_s = 4e-6, flop_s = 1e-9 }",
    ),
    (
        "data.synth",
        "# Data seed; defaults to the run seed.\n# seed = 0\n\
         # Replace [data.synth] with [data.csv] to read one file per party:\n\
         # [data.csv]\n# paths = [\"guest.csv\", \"host1.csv\"]\n\
         # id_column = \"id\"\n# label_column = \"label\"\n# standardize = true",
    ),
];

impl RunConfig {
    /// The default config with every key documented inline.
    pub fn reference_toml() -> String {
        let plain = RunConfig::default().to_toml_string();
        let mut out = String::from("# Reference run configuration. Every value shown is the default.\n");
        let mut section = String::new();
        let flush = |section: &str, out: &mut String| {
            if let Some((_, extra)) = SECTION_EXTRAS.iter().find(|(s, _)| *s == section) {
                out.push_str(extra);
                out.push('\n');
            }
        };
        for line in plain.lines() {
            let t = line.trim();
            if t.starts_with('[') {
                flush(&section, &mut out);
                if !out.ends_with("\n\n") {
                    out.push('\n');
                }
                section = t.trim_matches(|c| c == '[' || c == ']').to_string();
                out.push_str(line);
                out.push('\n');
                continue;
            }
            if t.is_empty() {
                continue;
            }
            if let Some((key, _)) = t.split_once('=') {
                let full = if section.is_empty() {
                    key.trim().to_string()
                } else {
                    format!("{section}.{}", key.trim())
                };
                if let Some((_, doc)) = KEY_DOCS.iter().find(|(k, _)| *k == full) {
                    out.push_str(&format!("# {doc}\n"));
                }
            }
            out.push_str(line);
            out.push('\n');
        }
        flush(&section, &mut out);
        out
    }
}

const KEY_SEED_SALT: u64 = 0x6b65_795f_7365_6564;

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.hyper.learning_rate, 0.05);
        assert_eq!(cfg.hyper.batch_size, 1024);
        assert_eq!(cfg.hyper.max_iterations, 50);
    }

    #[test]
    fn reference_documents_every_key() {
        let text = RunConfig::reference_toml();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), RunConfig::default());
        let lines: Vec<&str> = text.lines().collect();
        for (i, l) in lines.iter().enumerate() {
            if l.contains(" = ") && !l.starts_with('#') {
                assert!(i > 0 && lines[i - 1].starts_with('#'), "undocumented: {l}");
            }
        }
        for (key, _) in KEY_DOCS {
            let last = key.rsplit('.').next().unwrap();
            assert!(text.contains(&format!("\n{last} = ")), "stale doc entry {key}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("bogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(RunConfig::from_toml_str("[hyper]\nlr = 0.1\n").is_err());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str(
            "key_bits = 0\nfeature_counts = [2, 3]\n[hyper]\nresidual_rule = \"logistic_taylor\"\n[data.synth]\nm = 50\nrank = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.hosts(), 1);
        assert_eq!(cfg.data.synth.as_ref().unwrap().noise, 0.1);
        let ds = cfg.dataset(Path::new(".")).unwrap();
        assert_eq!(ds.feature_counts(), vec![2, 3]);
        assert_eq!(cfg.training().hp.residual_rule, crate::protocol::ResidualRule::LogisticTaylor);
    }

    #[test]
    fn validation_errors() {
        for bad in [
            "feature_counts = []",
            "key_bits = 511",
            "[straggler]\nbackup_workers = 3",
            "[straggler]\nbackup_workers = 1\n[hyper]\nbatch_size = 10",
            "[compression]\npca_ratio = [0.5, 0.5]",
            "[compression]\npca_ratio = [0.0]",
            "[data.csv]\npaths = [\"a.csv\"]",
            "[network]\nslowdown_prob = 2.0",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }
}
