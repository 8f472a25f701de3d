//! Checkpoint files: stage tag, configuration header, vocabulary, and raw
//! little-endian f64 tensors. Serialization is canonical (parameters in
//! name order, probabilities untouched), so save → load → save reproduces
//! the original bytes exactly.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::data::Vocabulary;
use crate::model::{
    clf_param_specs, lm_param_specs, ClassifierConfig, LmConfig, MIX_GAMMA, MIX_LOGITS,
};
use crate::numerics::{ParamSet, Tensor};

use super::PipelineError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LATLM01\n";
const FORMAT_VERSION: &str = "1";

/// Which phase of the pipeline produced a checkpoint's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Sequential bidirectional LM trained on text.
    SeqLm,
    /// Lattice LM fine-tuned from a [`Stage::SeqLm`] checkpoint.
    LatticeLm,
    /// Frozen lattice LM plus scalar mix and classifier head.
    Classifier,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::SeqLm => "seq-lm",
            Stage::LatticeLm => "lattice-lm",
            Stage::Classifier => "classifier",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Stage> {
        match tag {
            "seq-lm" => Some(Stage::SeqLm),
            "lattice-lm" => Some(Stage::LatticeLm),
            "classifier" => Some(Stage::Classifier),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A trained model: stage, config header, vocabulary, and parameters.
///
/// The header holds everything needed to rebuild the configs; the
/// vocabulary travels with the parameters so id assignments can never
/// drift between training and evaluation.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: Stage,
    /// Config rows in file order, excluding `format_version` and `stage`.
    pub header: Vec<(String, String)>,
    pub vocab: Vocabulary,
    pub params: ParamSet,
}

fn lm_header(config: &LmConfig, seed: u64) -> Vec<(String, String)> {
    vec![
        ("seed".into(), seed.to_string()),
        ("vocab_size".into(), config.vocab_size.to_string()),
        ("embed_dim".into(), config.embed_dim.to_string()),
        ("hidden_dim".into(), config.hidden_dim.to_string()),
        ("layers".into(), config.layers.to_string()),
        ("decoder_bias".into(), config.decoder_bias.to_string()),
    ]
}

fn bad(message: impl Into<String>) -> PipelineError {
    PipelineError::BadCheckpoint {
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn seq_lm(
        config: &LmConfig,
        seed: u64,
        vocab: Vocabulary,
        params: ParamSet,
    ) -> Result<Checkpoint, PipelineError> {
        let ck = Checkpoint {
            stage: Stage::SeqLm,
            header: lm_header(config, seed),
            vocab,
            params,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn lattice_lm(
        config: &LmConfig,
        seed: u64,
        vocab: Vocabulary,
        params: ParamSet,
    ) -> Result<Checkpoint, PipelineError> {
        let ck = Checkpoint {
            stage: Stage::LatticeLm,
            header: lm_header(config, seed),
            vocab,
            params,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn classifier(
        config: &LmConfig,
        clf_config: &ClassifierConfig,
        labels: &[String],
        seed: u64,
        vocab: Vocabulary,
        params: ParamSet,
    ) -> Result<Checkpoint, PipelineError> {
        if labels.is_empty() {
            return Err(bad("classifier checkpoint needs at least one label"));
        }
        for label in labels {
            if label.is_empty() || label.contains(',') || label.contains('\n') {
                return Err(bad(format!("label {label:?} cannot be stored in the header")));
            }
        }
        let mut header = lm_header(config, seed);
        header.push(("clf_hidden".into(), clf_config.hidden_dim.to_string()));
        header.push(("clf_layers".into(), clf_config.layers.to_string()));
        header.push(("dropout".into(), format!("{:?}", clf_config.dropout)));
        header.push(("labels".into(), labels.join(",")));
        let ck = Checkpoint {
            stage: Stage::Classifier,
            header,
            vocab,
            params,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, PipelineError> {
        self.header_value(key)
            .ok_or_else(|| bad(format!("header is missing {key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, PipelineError> {
        self.require(key)?
            .parse()
            .map_err(|_| bad(format!("header value for {key} does not parse")))
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.parse("seed")
    }

    pub fn lm_config(&self) -> Result<LmConfig, PipelineError> {
        let config = LmConfig {
            vocab_size: self.parse("vocab_size")?,
            embed_dim: self.parse("embed_dim")?,
            hidden_dim: self.parse("hidden_dim")?,
            layers: self.parse("layers")?,
            decoder_bias: self.parse("decoder_bias")?,
        };
        config.validate()?;
        if config.vocab_size != self.vocab.len() {
            return Err(bad(format!(
                "header says vocab_size={} but the stored vocabulary has {} ids",
                config.vocab_size,
                self.vocab.len()
            )));
        }
        Ok(config)
    }

    /// Label inventory of a classifier checkpoint, in id order.
    pub fn labels(&self) -> Result<Vec<String>, PipelineError> {
        let raw = self.require("labels")?;
        let labels: Vec<String> = raw.split(',').map(String::from).collect();
        if labels.iter().any(String::is_empty) {
            return Err(bad("labels header contains an empty label"));
        }
        Ok(labels)
    }

    pub fn classifier_config(&self) -> Result<ClassifierConfig, PipelineError> {
        let lm = self.lm_config()?;
        let config = ClassifierConfig {
            input_dim: lm.mix_width(),
            hidden_dim: self.parse("clf_hidden")?,
            layers: self.parse("clf_layers")?,
            labels: self.labels()?.len(),
            dropout: self.parse("dropout")?,
        };
        config.validate()?;
        Ok(config)
    }

    fn expected_specs(&self) -> Result<Vec<(String, Vec<usize>)>, PipelineError> {
        let config = self.lm_config()?;
        let mut specs = lm_param_specs(&config);
        if self.stage == Stage::Classifier {
            specs.push((MIX_LOGITS.to_string(), vec![config.layers + 1]));
            specs.push((MIX_GAMMA.to_string(), Vec::new()));
            specs.extend(clf_param_specs(&self.classifier_config()?));
        }
        Ok(specs)
    }

    /// Exact parameter inventory check for the stage: every expected tensor
    /// present with the right shape, nothing extra, all values finite.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let specs = self.expected_specs()?;
        for (name, shape) in &specs {
            let tensor = self
                .params
                .get(name)
                .map_err(|_| bad(format!("missing parameter {name}")))?;
            if tensor.shape() != shape.as_slice() {
                return Err(bad(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    tensor.shape()
                )));
            }
        }
        if self.params.len() != specs.len() {
            for (name, _) in self.params.iter() {
                if !specs.iter().any(|(n, _)| n == name) {
                    return Err(bad(format!("unexpected parameter {name}")));
                }
            }
        }
        for (name, tensor) in self.params.iter() {
            if !tensor.is_finite() {
                return Err(bad(format!("parameter {name} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn require_stage(&self, expected: Stage) -> Result<(), PipelineError> {
        if self.stage != expected {
            return Err(PipelineError::StageMismatch {
                expected: expected.tag(),
                got: self.stage.tag(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let line = |out: &mut Vec<u8>, text: String| {
            out.extend_from_slice(text.as_bytes());
            out.push(b'\n');
        };
        line(&mut out, format!("format_version={FORMAT_VERSION}"));
        line(&mut out, format!("stage={}", self.stage.tag()));
        for (key, value) in &self.header {
            line(&mut out, format!("{key}={value}"));
        }
        out.push(b'\n');
        for (_, token, count) in self.vocab.entries() {
            line(&mut out, format!("{count} {token}"));
        }
        out.push(b'\n');
        for (name, tensor) in self.params.iter() {
            let mut head = format!("T {name} {}", tensor.shape().len());
            for dim in tensor.shape() {
                head.push(' ');
                head.push_str(&dim.to_string());
            }
            line(&mut out, head);
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, PipelineError> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC
        {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let mut reader = Reader {
            bytes,
            pos: CHECKPOINT_MAGIC.len(),
        };

        // Header: format_version and stage first, then config rows.
        let version = reader.line()?;
        if version != format!("format_version={FORMAT_VERSION}") {
            return Err(bad(format!("unsupported header line {version:?}")));
        }
        let stage_row = reader.line()?;
        let stage_tag = stage_row
            .strip_prefix("stage=")
            .ok_or_else(|| bad("second header line must be the stage"))?;
        let stage = Stage::from_tag(stage_tag)
            .ok_or_else(|| bad(format!("unknown stage {stage_tag:?}")))?;
        let mut header = Vec::new();
        loop {
            let row = reader.line()?;
            if row.is_empty() {
                break;
            }
            let (key, value) = row
                .split_once('=')
                .ok_or_else(|| bad(format!("header line without '=': {row:?}")))?;
            header.push((key.to_string(), value.to_string()));
        }

        // Vocabulary: "count token" rows until the blank separator.
        let mut rows = Vec::new();
        loop {
            let row = reader.line()?;
            if row.is_empty() {
                break;
            }
            let (count, token) = row
                .split_once(' ')
                .ok_or_else(|| bad(format!("vocabulary line without a count: {row:?}")))?;
            let count: u64 = count
                .parse()
                .map_err(|_| bad(format!("bad vocabulary count in {row:?}")))?;
            rows.push((token.to_string(), count));
        }
        let vocab = Vocabulary::from_counted_tokens(rows)?;

        // Tensors until end of input.
        let mut params = ParamSet::new();
        while !reader.done() {
            let head = reader.line()?;
            let mut fields = head.split(' ');
            if fields.next() != Some("T") {
                return Err(bad(format!("expected a tensor line, got {head:?}")));
            }
            let name = fields
                .next()
                .ok_or_else(|| bad("tensor line without a name"))?;
            let rank: usize = fields
                .next()
                .ok_or_else(|| bad(format!("tensor {name} has no rank")))?
                .parse()
                .map_err(|_| bad(format!("tensor {name} has a bad rank")))?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let dim: usize = fields
                    .next()
                    .ok_or_else(|| bad(format!("tensor {name} is missing a dimension")))?
                    .parse()
                    .map_err(|_| bad(format!("tensor {name} has a bad dimension")))?;
                shape.push(dim);
            }
            if fields.next().is_some() {
                return Err(bad(format!("tensor {name} has extra fields")));
            }
            let elems: usize = shape.iter().product();
            let raw = reader.take(elems * 8).map_err(|_| {
                bad(format!("tensor {name} is truncated"))
            })?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(name, Tensor::from_vec(&shape, data)?)?;
        }

        let ck = Checkpoint {
            stage,
            header,
            vocab,
            params,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, PipelineError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn line(&mut self) -> Result<String, PipelineError> {
        let rest = &self.bytes[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated line (file truncated?)"))?;
        let text = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("non-UTF-8 text line"))?;
        self.pos += nl + 1;
        Ok(text.to_string())
    }

    fn take(&mut self, n: usize) -> Result<&[u8], PipelineError> {
        if self.bytes.len() - self.pos < n {
            return Err(bad("truncated payload"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
