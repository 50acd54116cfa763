//! Synthetic monotonic transduction corpus.
//!
//! Each symbol of a small vocabulary owns a fixed duration (frames per
//! occurrence) and a prototype frame vector. An example is a random token
//! sequence rendered as consecutive blocks of noisy prototype frames, so its
//! true alignment is known exactly and is monotonic by construction. The gold
//! alignment is only ever used for evaluation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignError, AlignmentMatrix};
use crate::autodiff::Tensor;
use crate::numfmt::{from_f17, to_f17, F17};

/// Minimum Euclidean distance required between any two prototypes.
pub const MIN_PROTOTYPE_DISTANCE: f64 = 0.5;
const MAX_TABLE_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("could not draw distinct prototypes after {0} attempts")]
    Infeasible(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed dataset: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Align(#[from] AlignError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub vocab_size: usize,
    pub frame_dim: usize,
    pub max_duration: usize,
    pub noise_std: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            frame_dim: 16,
            max_duration: 4,
            noise_std: 0.05,
            min_len: 5,
            max_len: 20,
            train: 2000,
            val: 200,
            test: 200,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |msg: &str| Err(DataError::Config(msg.to_string()));
        if self.vocab_size < 2 {
            return fail("vocab_size must be at least 2");
        }
        if self.frame_dim < 2 {
            return fail("frame_dim must be at least 2");
        }
        if self.max_duration < 1 {
            return fail("max_duration must be at least 1");
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return fail("noise_std must be finite and nonnegative");
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return fail("token lengths need 1 <= min_len <= max_len");
        }
        Ok(())
    }
}

/// Per-symbol durations and prototype frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTable {
    pub durations: Vec<usize>,
    /// `vocab_size × frame_dim`.
    pub prototypes: Vec<Vec<f64>>,
}

impl SymbolTable {
    pub fn vocab_size(&self) -> usize {
        self.durations.len()
    }

    pub fn frame_dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    pub fn max_duration(&self) -> usize {
        self.durations.iter().copied().max().unwrap_or(0)
    }

    pub fn min_prototype_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (a, pa) in self.prototypes.iter().enumerate() {
            for pb in &self.prototypes[a + 1..] {
                let d2: f64 = pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.min(d2.sqrt());
            }
        }
        best
    }

    /// One-hot alignment: frame `j` attends the token whose duration block
    /// contains it.
    pub fn gold_alignment(&self, tokens: &[usize]) -> Result<AlignmentMatrix, AlignError> {
        let rows: Vec<usize> = tokens
            .iter()
            .enumerate()
            .flat_map(|(pos, &t)| std::iter::repeat_n(pos, self.durations[t]))
            .collect();
        AlignmentMatrix::one_hot(tokens.len(), &rows)
    }

    pub fn n_frames(&self, tokens: &[usize]) -> usize {
        tokens.iter().map(|&t| self.durations[t]).sum()
    }
}

/// Samples durations uniformly from `1..=max_duration` and prototypes from a
/// standard normal, rescaled to unit RMS per entry. Draws are repeated until
/// all prototypes are at least [`MIN_PROTOTYPE_DISTANCE`] apart.
pub fn build_symbol_table(
    config: &DatasetConfig,
    rng: &mut impl Rng,
) -> Result<SymbolTable, DataError> {
    config.validate()?;
    let (k, f) = (config.vocab_size, config.frame_dim);
    let durations: Vec<usize> = (0..k).map(|_| rng.random_range(1..=config.max_duration)).collect();
    for _ in 0..MAX_TABLE_ATTEMPTS {
        let prototypes: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let raw: Vec<f64> = (0..f).map(|_| StandardNormal.sample(rng)).collect();
                let rms = (raw.iter().map(|x| x * x).sum::<f64>() / f as f64).sqrt();
                raw.into_iter().map(|x| x / rms).collect()
            })
            .collect();
        let table = SymbolTable {
            durations: durations.clone(),
            prototypes,
        };
        if table.min_prototype_distance() > MIN_PROTOTYPE_DISTANCE {
            return Ok(table);
        }
    }
    Err(DataError::Infeasible(MAX_TABLE_ATTEMPTS))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    /// `M × frame_dim`.
    pub frames: Tensor,
    pub gold_alignment: AlignmentMatrix,
}

impl Example {
    pub fn n_inputs(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_frames(&self) -> usize {
        self.gold_alignment.n_frames()
    }
}

pub fn generate_example(
    table: &SymbolTable,
    length: usize,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<Example, DataError> {
    if length == 0 {
        return Err(DataError::Config("example length must be at least 1".into()));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|e| DataError::Config(format!("noise_std {noise_std}: {e}")))?;
    let tokens: Vec<usize> = (0..length)
        .map(|_| rng.random_range(0..table.vocab_size()))
        .collect();
    let f = table.frame_dim();
    let mut frames = Vec::with_capacity(table.n_frames(&tokens) * f);
    for &t in &tokens {
        for _ in 0..table.durations[t] {
            frames.extend(table.prototypes[t].iter().map(|&p| p + noise.sample(rng)));
        }
    }
    let m = frames.len() / f;
    let frames = Tensor::matrix(m, f, frames).expect("frame buffer sized from durations");
    let gold_alignment = table.gold_alignment(&tokens)?;
    Ok(Example {
        tokens,
        frames,
        gold_alignment,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub table: SymbolTable,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Dataset {
    /// Symbol table and each split are drawn from disjoint ChaCha streams of
    /// the same seed.
    pub fn generate(config: &DatasetConfig) -> Result<Self, DataError> {
        config.validate()?;
        let table = build_symbol_table(config, &mut stream_rng(config.seed, 0))?;
        let split = |stream: u64, count: usize| -> Result<Vec<Example>, DataError> {
            let mut rng = stream_rng(config.seed, stream);
            (0..count)
                .map(|_| {
                    let len = rng.random_range(config.min_len..=config.max_len);
                    generate_example(&table, len, config.noise_std, &mut rng)
                })
                .collect()
        };
        Ok(Self {
            config: config.clone(),
            train: split(1, config.train)?,
            val: split(2, config.val)?,
            test: split(3, config.test)?,
            table,
        })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> String {
        let examples = |xs: &[Example]| -> Vec<ExampleFile> {
            xs.iter()
                .map(|e| ExampleFile {
                    tokens: e.tokens.clone(),
                    frames: e.frames.data().chunks(self.table.frame_dim()).map(to_f17).collect(),
                })
                .collect()
        };
        let c = &self.config;
        let file = DatasetFile {
            config: ConfigFile {
                vocab_size: c.vocab_size,
                frame_dim: c.frame_dim,
                max_duration: c.max_duration,
                noise_std: F17(c.noise_std),
                min_len: c.min_len,
                max_len: c.max_len,
                train: c.train,
                val: c.val,
                test: c.test,
                seed: c.seed,
            },
            symbol_table: TableFile {
                durations: self.table.durations.clone(),
                prototypes: self.table.prototypes.iter().map(|p| to_f17(p)).collect(),
            },
            splits: SplitsFile {
                train: examples(&self.train),
                val: examples(&self.val),
                test: examples(&self.test),
            },
        };
        serde_json::to_string(&file).expect("dataset values are finite")
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, DataError> {
        let bad = |reason: String| DataError::Format {
            path: path.to_string(),
            reason,
        };
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let c = file.config;
        let config = DatasetConfig {
            vocab_size: c.vocab_size,
            frame_dim: c.frame_dim,
            max_duration: c.max_duration,
            noise_std: c.noise_std.0,
            min_len: c.min_len,
            max_len: c.max_len,
            train: c.train,
            val: c.val,
            test: c.test,
            seed: c.seed,
        };
        let table = SymbolTable {
            durations: file.symbol_table.durations,
            prototypes: file.symbol_table.prototypes.iter().map(|p| from_f17(p)).collect(),
        };
        let (k, f) = (config.vocab_size, config.frame_dim);
        if table.durations.len() != k || table.prototypes.len() != k {
            return Err(bad(format!("symbol table must have {k} entries")));
        }
        if table.durations.contains(&0) || table.prototypes.iter().any(|p| p.len() != f) {
            return Err(bad("durations must be >= 1 and prototypes of frame_dim length".into()));
        }
        let load = |xs: Vec<ExampleFile>, name: &str| -> Result<Vec<Example>, DataError> {
            xs.into_iter()
                .enumerate()
                .map(|(idx, e)| {
                    if e.tokens.is_empty() || e.tokens.iter().any(|&t| t >= k) {
                        return Err(bad(format!("{name}[{idx}]: tokens empty or out of vocabulary")));
                    }
                    let m = table.n_frames(&e.tokens);
                    if e.frames.len() != m || e.frames.iter().any(|r| r.len() != f) {
                        return Err(bad(format!("{name}[{idx}]: frames must be {m}x{f}")));
                    }
                    let data: Vec<f64> = e.frames.iter().flat_map(|r| from_f17(r)).collect();
                    Ok(Example {
                        gold_alignment: table.gold_alignment(&e.tokens)?,
                        frames: Tensor::matrix(m, f, data).map_err(|e| bad(e.to_string()))?,
                        tokens: e.tokens,
                    })
                })
                .collect()
        };
        Ok(Self {
            train: load(file.splits.train, "train")?,
            val: load(file.splits.val, "val")?,
            test: load(file.splits.test, "test")?,
            config,
            table,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_json()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}

/// Generates the dataset for `config` and writes it to `path`.
pub fn generate_dataset(config: &DatasetConfig, path: &Path) -> Result<Dataset, DataError> {
    let dataset = Dataset::generate(config)?;
    dataset.save(path)?;
    Ok(dataset)
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    config: ConfigFile,
    symbol_table: TableFile,
    splits: SplitsFile,
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    vocab_size: usize,
    frame_dim: usize,
    max_duration: usize,
    noise_std: F17,
    min_len: usize,
    max_len: usize,
    train: usize,
    val: usize,
    test: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    durations: Vec<usize>,
    prototypes: Vec<Vec<F17>>,
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    train: Vec<ExampleFile>,
    val: Vec<ExampleFile>,
    test: Vec<ExampleFile>,
}

#[derive(Serialize, Deserialize)]
struct ExampleFile {
    tokens: Vec<usize>,
    frames: Vec<Vec<F17>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{alignment_loss, centroids};

    fn small_config() -> DatasetConfig {
        DatasetConfig {
            train: 30,
            val: 5,
            test: 5,
            seed: 7,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn forced_unit_durations() {
        let config = DatasetConfig {
            vocab_size: 2,
            max_duration: 1,
            ..DatasetConfig::default()
        };
        let table = build_symbol_table(&config, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(table.durations, vec![1, 1]);
    }

    #[test]
    fn table_is_seeded_and_distinct() {
        let config = DatasetConfig {
            vocab_size: 8,
            ..DatasetConfig::default()
        };
        let a = build_symbol_table(&config, &mut stream_rng(3, 0)).unwrap();
        let b = build_symbol_table(&config, &mut stream_rng(3, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.min_prototype_distance() > MIN_PROTOTYPE_DISTANCE);
        assert!(a.durations.iter().all(|&d| (1..=4).contains(&d)));
    }

    #[test]
    fn infeasible_table_fails() {
        // 40 unit-RMS points in 2-D lie on a circle of radius √2, whose
        // circumference 2π√2 is shorter than 40 · 0.5
        let config = DatasetConfig {
            vocab_size: 40,
            frame_dim: 2,
            ..DatasetConfig::default()
        };
        assert!(matches!(
            build_symbol_table(&config, &mut stream_rng(0, 0)),
            Err(DataError::Infeasible(100))
        ));
    }

    #[test]
    fn single_token_example() {
        let table = SymbolTable {
            durations: vec![3, 1],
            prototypes: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let mut rng = stream_rng(0, 9);
        // draw until we get token 0
        let ex = loop {
            let ex = generate_example(&table, 1, 0.0, &mut rng).unwrap();
            if ex.tokens == [0] {
                break ex;
            }
        };
        assert_eq!(ex.n_frames(), 3);
        assert_eq!(ex.gold_alignment.values(), &[1.0, 1.0, 1.0]);
        assert_eq!(ex.frames.row(2), &[1.0, 0.0]);
    }

    #[test]
    fn gold_alignments_are_monotone() {
        let ds = Dataset::generate(&small_config()).unwrap();
        for ex in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            assert_eq!(ex.n_frames(), ds.table.n_frames(&ex.tokens));
            let c = centroids(&ex.gold_alignment);
            for w in c.as_slice().windows(2) {
                let step = w[1] - w[0];
                assert!(step == 0.0 || step == 1.0);
            }
            let m = ex.n_frames() as f64;
            assert_eq!(alignment_loss(&ex.gold_alignment, 0.0).unwrap(), 0.0);
            assert!(alignment_loss(&ex.gold_alignment, 0.01).unwrap() <= 0.01 * (m - 1.0) / m + 1e-15);
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let config = DatasetConfig {
            train: 100,
            val: 20,
            test: 20,
            ..small_config()
        };
        let a = Dataset::generate(&config).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (100, 20, 20));
        assert_eq!(a.len(), 140);
        let b = Dataset::generate(&config).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_ne!(a.train[0], a.val[0]);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ds = Dataset::generate(&small_config()).unwrap();
        let back = Dataset::from_json(&ds.to_json(), "mem").unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn malformed_json_reports_path() {
        let err = Dataset::from_json("{\"config\": 1}", "d.json").unwrap_err();
        assert!(err.to_string().starts_with("d.json"));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = DatasetConfig {
            min_len: 0,
            ..DatasetConfig::default()
        };
        assert!(Dataset::generate(&bad).is_err());
        let bad = DatasetConfig {
            vocab_size: 1,
            ..DatasetConfig::default()
        };
        assert!(Dataset::generate(&bad).is_err());
    }
}
