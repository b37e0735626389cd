//! Synthetic multi-answer task generator.
//!
//! Each sample offers four candidate options. Every option independently
//! carries defects across four spatial-plausibility dimensions; an option is
//! correct iff its defect row is empty, and the label is the set of correct
//! options (or "N" when there is none). The observation exposes the defects
//! through noisy feature blocks so the task is learnable: a defect shifts
//! that option's dimension sub-block mean by a fixed offset of 1.0 before
//! additive Gaussian noise.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{parse_answer_set, AnswerSet, NUM_OPTIONS};
use crate::policy::Observation;
use crate::rng::{substream, tags};
use crate::textio::{fmt_f64, LineWriter};

/// Offset added to a feature sub-block mean when the defect is present.
pub const DEFECT_OFFSET: f64 = 1.0;

/// The four spatial-plausibility defect dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectDimension {
    AppearanceDeformation = 0,
    PhysicalShadow = 1,
    PlacementLayout = 2,
    ExtensionRationality = 3,
}

pub const NUM_DIMENSIONS: usize = 4;

impl DefectDimension {
    pub const ALL: [DefectDimension; NUM_DIMENSIONS] = [
        DefectDimension::AppearanceDeformation,
        DefectDimension::PhysicalShadow,
        DefectDimension::PlacementLayout,
        DefectDimension::ExtensionRationality,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn display_name(self) -> &'static str {
        match self {
            DefectDimension::AppearanceDeformation => "Appearance Deformation",
            DefectDimension::PhysicalShadow => "Physical Shadow",
            DefectDimension::PlacementLayout => "Placement Layout",
            DefectDimension::ExtensionRationality => "Extension Rationality",
        }
    }
}

impl fmt::Display for DefectDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Per-option, per-dimension defect flags; `[option][dimension]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DefectMatrix(pub [[bool; NUM_DIMENSIONS]; NUM_OPTIONS]);

impl DefectMatrix {
    /// The label implied by the defects: options whose row is all-false.
    pub fn label(&self) -> AnswerSet {
        AnswerSet::from_correct_options((0..NUM_OPTIONS).filter(|&o| self.0[o].iter().all(|&d| !d)))
    }

    /// Dimensions present in any option's defect row.
    pub fn dimensions_present(&self) -> Vec<DefectDimension> {
        DefectDimension::ALL
            .into_iter()
            .filter(|d| (0..NUM_OPTIONS).any(|o| self.0[o][d.code()]))
            .collect()
    }

    fn to_bit_strings(self) -> [String; NUM_OPTIONS] {
        std::array::from_fn(|o| {
            (0..NUM_DIMENSIONS)
                .map(|d| if self.0[o][d] { '1' } else { '0' })
                .collect()
        })
    }

    fn from_bit_strings(strings: &[String]) -> Result<Self, String> {
        if strings.len() != NUM_OPTIONS {
            return Err(format!(
                "expected {NUM_OPTIONS} defect strings, got {}",
                strings.len()
            ));
        }
        let mut matrix = [[false; NUM_DIMENSIONS]; NUM_OPTIONS];
        for (o, s) in strings.iter().enumerate() {
            if s.len() != NUM_DIMENSIONS {
                return Err(format!(
                    "defect string {s:?} must have {NUM_DIMENSIONS} bits"
                ));
            }
            for (d, c) in s.chars().enumerate() {
                matrix[o][d] = match c {
                    '0' => false,
                    '1' => true,
                    other => return Err(format!("defect bit must be 0 or 1, got {other:?}")),
                };
            }
        }
        Ok(Self(matrix))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Explore,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Explore => "explore",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => tags::DATA_TRAIN,
            Split::Test => tags::DATA_TEST,
            Split::Explore => tags::DATA_EXPLORE,
        }
    }
}

/// Generator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Per-option, per-dimension defect probability.
    pub defect_prob: f64,
    /// Elements per feature sub-block; the observation has one reference
    /// block plus one sub-block per (option, dimension).
    pub block_size: usize,
    /// Standard deviation of the additive feature noise.
    pub noise_sigma: f64,
}

impl GenConfig {
    pub fn feature_dim(&self) -> usize {
        self.block_size * (1 + NUM_OPTIONS * NUM_DIMENSIONS)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.defect_prob) {
            return Err(EnvError::InvalidConfig(format!(
                "defect_prob must be in [0, 1], got {}",
                self.defect_prob
            )));
        }
        if self.block_size < 2 {
            return Err(EnvError::InvalidConfig(format!(
                "block_size must be at least 2, got {}",
                self.block_size
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(EnvError::InvalidConfig(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// One generated task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub split: Split,
    pub obs: Observation,
    /// Withheld (None) on the explore split.
    pub defects: Option<DefectMatrix>,
    /// Withheld (None) on the explore split.
    pub label: Option<AnswerSet>,
}

impl SyntheticSample {
    pub fn label_or_err(&self) -> Result<&AnswerSet, EnvError> {
        self.label.as_ref().ok_or(EnvError::MissingLabels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
    pub explore: usize,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Schema {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("split carries no labels")]
    MissingLabels,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EnvError + '_ {
    move |source| EnvError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Draws one sample. The generator seed, split, and index fully determine
/// the result via the id's substream.
pub fn generate_sample(
    cfg: &GenConfig,
    id: &str,
    split: Split,
    rng: &mut ChaCha8Rng,
) -> SyntheticSample {
    let mut defects = [[false; NUM_DIMENSIONS]; NUM_OPTIONS];
    for row in &mut defects {
        for cell in row.iter_mut() {
            *cell = rng.random::<f64>() < cfg.defect_prob;
        }
    }
    let defects = DefectMatrix(defects);

    let b = cfg.block_size;
    let mut features = Vec::with_capacity(cfg.feature_dim());
    // Reference block: anchored at 1.0, no defect signal.
    for _ in 0..b {
        let z: f64 = rng.sample(StandardNormal);
        features.push(1.0 + cfg.noise_sigma * z);
    }
    for option in 0..NUM_OPTIONS {
        for dim in 0..NUM_DIMENSIONS {
            let mean = if defects.0[option][dim] {
                DEFECT_OFFSET
            } else {
                0.0
            };
            for _ in 0..b {
                let z: f64 = rng.sample(StandardNormal);
                features.push(mean + cfg.noise_sigma * z);
            }
        }
    }

    let withhold = matches!(split, Split::Explore);
    SyntheticSample {
        id: id.to_string(),
        split,
        obs: Observation::new(features),
        defects: (!withhold).then_some(defects),
        label: (!withhold).then_some(defects.label()),
    }
}

/// Generates one split's samples in index order.
pub fn generate_split(
    cfg: &GenConfig,
    split: Split,
    count: usize,
    seed: u64,
) -> Vec<SyntheticSample> {
    (0..count)
        .map(|i| {
            let id = format!("{}-{:06}", split.name(), i);
            let mut rng = substream(seed, &[split.stream_tag(), i as u64]);
            generate_sample(cfg, &id, split, &mut rng)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    version: u32,
    feature_dim: usize,
    block_size: usize,
    gen_cfg: GenConfig,
    seed: u64,
    split: Split,
    count: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    split: Split,
    features: Vec<f64>,
    defects: Option<Vec<String>>,
    label: Option<String>,
}

/// Loaded split file: the header it was generated with plus its samples.
#[derive(Debug)]
pub struct Dataset {
    pub gen_cfg: GenConfig,
    pub seed: u64,
    pub split: Split,
    pub samples: Vec<SyntheticSample>,
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.gen_cfg.feature_dim()
    }
}

// Records are composed by hand so that every real is serialized with 17
// significant digits; the loader is ordinary JSON parsing.
fn render_features(features: &[f64]) -> String {
    let mut out = String::from("[");
    for (i, v) in features.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push(']');
    out
}

fn render_header(cfg: &GenConfig, seed: u64, split: Split, count: usize) -> String {
    format!(
        concat!(
            "{{\"version\":1,\"feature_dim\":{},\"block_size\":{},",
            "\"gen_cfg\":{{\"defect_prob\":{},\"block_size\":{},\"noise_sigma\":{}}},",
            "\"seed\":{},\"split\":\"{}\",\"count\":{}}}"
        ),
        cfg.feature_dim(),
        cfg.block_size,
        fmt_f64(cfg.defect_prob),
        cfg.block_size,
        fmt_f64(cfg.noise_sigma),
        seed,
        split.name(),
        count
    )
}

fn render_sample(sample: &SyntheticSample) -> String {
    let defects = match &sample.defects {
        Some(m) => {
            let strings = m.to_bit_strings();
            format!(
                "[\"{}\",\"{}\",\"{}\",\"{}\"]",
                strings[0], strings[1], strings[2], strings[3]
            )
        }
        None => "null".to_string(),
    };
    let label = match &sample.label {
        Some(l) => format!("\"{l}\""),
        None => "null".to_string(),
    };
    format!(
        "{{\"id\":\"{}\",\"split\":\"{}\",\"features\":{},\"defects\":{},\"label\":{}}}",
        sample.id,
        sample.split.name(),
        render_features(&sample.obs.features),
        defects,
        label
    )
}

/// Writes one split file: a header line, then one record per sample.
pub fn write_split_file(
    path: &Path,
    cfg: &GenConfig,
    seed: u64,
    split: Split,
    samples: &[SyntheticSample],
) -> Result<(), EnvError> {
    let err = io_err(path);
    let mut w = LineWriter::create(path).map_err(&err)?;
    w.write_line(&render_header(cfg, seed, split, samples.len()))
        .map_err(&err)?;
    for sample in samples {
        w.write_line(&render_sample(sample)).map_err(&err)?;
    }
    w.finish().map_err(&err)
}

/// Generates and writes the three split files under `dir`. Returns the
/// per-split sample counts in (train, test, explore) order.
pub fn generate_dataset(
    cfg: &GenConfig,
    sizes: &SplitSizes,
    seed: u64,
    dir: &Path,
) -> Result<[usize; 3], EnvError> {
    cfg.validate()?;
    for (split, count) in [
        (Split::Train, sizes.train),
        (Split::Test, sizes.test),
        (Split::Explore, sizes.explore),
    ] {
        let samples = generate_split(cfg, split, count, seed);
        write_split_file(
            &dir.join(format!("{}.jsonl", split.name())),
            cfg,
            seed,
            split,
            &samples,
        )?;
    }
    Ok([sizes.train, sizes.test, sizes.explore])
}

/// Loads and validates one split file. Label/defect consistency is
/// re-checked on every record; violations are reported with line numbers.
pub fn load_dataset(path: &Path) -> Result<Dataset, EnvError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let schema = |line: usize, msg: String| EnvError::Schema {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| schema(1, "missing header record".into()))?;
    let header: DatasetHeader = serde_json::from_str(header_line)
        .map_err(|e| schema(1, format!("bad header record: {e}")))?;
    if header.version != 1 {
        return Err(schema(
            1,
            format!("unsupported dataset version {}", header.version),
        ));
    }
    if header.feature_dim != header.gen_cfg.feature_dim()
        || header.block_size != header.gen_cfg.block_size
    {
        return Err(schema(1, "header dimensions disagree with gen_cfg".into()));
    }
    header.gen_cfg.validate()?;

    let mut samples = Vec::with_capacity(header.count);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let record: SampleRecord =
            serde_json::from_str(line).map_err(|e| schema(line_no, e.to_string()))?;
        if record.features.len() != header.feature_dim {
            return Err(schema(
                line_no,
                format!(
                    "expected {} features, got {}",
                    header.feature_dim,
                    record.features.len()
                ),
            ));
        }
        if record.split != header.split {
            return Err(schema(
                line_no,
                format!(
                    "record split does not match header ({})",
                    header.split.name()
                ),
            ));
        }
        let defects = match &record.defects {
            Some(strings) => {
                Some(DefectMatrix::from_bit_strings(strings).map_err(|e| schema(line_no, e))?)
            }
            None => None,
        };
        let label = match &record.label {
            Some(text) => Some(
                parse_answer_set(text).map_err(|e| schema(line_no, format!("bad label: {e}")))?,
            ),
            None => None,
        };
        match (&defects, &label) {
            (Some(m), Some(l)) => {
                if m.label() != *l {
                    return Err(schema(
                        line_no,
                        format!(
                            "label {l} inconsistent with defects (implied {})",
                            m.label()
                        ),
                    ));
                }
            }
            (None, None) => {}
            _ => {
                return Err(schema(
                    line_no,
                    "defects and label must be both present or both absent".into(),
                ));
            }
        }
        samples.push(SyntheticSample {
            id: record.id,
            split: record.split,
            obs: Observation::new(record.features),
            defects,
            label,
        });
    }
    if samples.len() != header.count {
        return Err(schema(
            1,
            format!(
                "header count {} but {} records found",
                header.count,
                samples.len()
            ),
        ));
    }
    Ok(Dataset {
        gen_cfg: header.gen_cfg,
        seed: header.seed,
        split: header.split,
        samples,
    })
}
