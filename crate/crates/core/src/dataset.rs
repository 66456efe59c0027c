//! Sample manifests, label schemes, stratified splits and folds.
//!
//! A manifest is a CSV table with header `path,source,finding,split`. Paths
//! are relative to an image root unless absolute.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate path in manifest: {0}")]
    DuplicatePath(String),
    #[error("class {class}: split counts sum to {requested}, but the class has {available} records")]
    CountMismatch {
        class: usize,
        requested: usize,
        available: usize,
    },
    #[error("expected split counts for {expected} classes, got {actual}")]
    ClassCount { expected: usize, actual: usize },
    #[error("class {class} has {count} records, fewer than k = {k}")]
    TooFewSamples { class: usize, count: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("unknown {kind}: {value}")]
    Unknown { kind: &'static str, value: String },
    #[error("manifest CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    COVID19,
    RSNA,
    NLMMC,
    SYNTHETIC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Finding {
    Normal,
    COVID19,
    OtherPneumonia,
    Tuberculosis,
}

impl Finding {
    pub const ALL: [Finding; 4] = [
        Finding::Normal,
        Finding::COVID19,
        Finding::OtherPneumonia,
        Finding::Tuberculosis,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: String,
    pub source: Source,
    pub finding: Finding,
    pub split: Split,
}

impl SampleRecord {
    pub fn new(path: impl Into<String>, source: Source, finding: Finding) -> Self {
        Self {
            path: path.into(),
            source,
            finding,
            split: Split::Unassigned,
        }
    }

    /// Location of the image: absolute paths as-is, others under `root`.
    pub fn resolve(&self, root: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    }
}

/// How findings map onto class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelScheme {
    /// COVID-19 (1) against everything else (0).
    Binary,
    /// Normal (0), COVID-19 (1), other pneumonia or tuberculosis (2).
    Multi3,
    /// Normal (0), COVID-19 (1), other pneumonia (2), tuberculosis (3).
    Multi4,
}

impl LabelScheme {
    pub fn num_classes(self) -> usize {
        match self {
            LabelScheme::Binary => 2,
            LabelScheme::Multi3 => 3,
            LabelScheme::Multi4 => 4,
        }
    }

    /// Short code used in scenario names: `B`, `M3`, `M4`.
    pub fn code(self) -> &'static str {
        match self {
            LabelScheme::Binary => "B",
            LabelScheme::Multi3 => "M3",
            LabelScheme::Multi4 => "M4",
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            LabelScheme::Binary => vec!["non-COVID19", "COVID19"],
            LabelScheme::Multi3 => vec!["Normal", "COVID19", "OtherPneumonia+Tuberculosis"],
            LabelScheme::Multi4 => vec!["Normal", "COVID19", "OtherPneumonia", "Tuberculosis"],
        }
    }
}

impl FromStr for LabelScheme {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "b" => Ok(LabelScheme::Binary),
            "multi3" | "m3" => Ok(LabelScheme::Multi3),
            "multi4" | "m4" => Ok(LabelScheme::Multi4),
            _ => Err(DatasetError::Unknown {
                kind: "label scheme",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

pub fn encode_label(finding: Finding, scheme: LabelScheme) -> usize {
    use Finding::*;
    match (scheme, finding) {
        (LabelScheme::Binary, COVID19) => 1,
        (LabelScheme::Binary, _) => 0,
        (_, Normal) => 0,
        (_, COVID19) => 1,
        (LabelScheme::Multi3, OtherPneumonia | Tuberculosis) => 2,
        (LabelScheme::Multi4, OtherPneumonia) => 2,
        (LabelScheme::Multi4, Tuberculosis) => 3,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    /// Seed of the last seeded assignment applied to this manifest.
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        let m = Self { records, seed: None };
        m.check_unique()?;
        Ok(m)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.path.as_str()) {
                return Err(DatasetError::DuplicatePath(r.path.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self, scheme: LabelScheme) -> Vec<usize> {
        self.records.iter().map(|r| encode_label(r.finding, scheme)).collect()
    }

    pub fn class_counts(&self, scheme: LabelScheme) -> Vec<usize> {
        let mut counts = vec![0; scheme.num_classes()];
        for label in self.labels(scheme) {
            counts[label] += 1;
        }
        counts
    }

    pub fn finding_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for r in &self.records {
            counts[r.finding as usize] += 1;
        }
        counts
    }

    /// Records of one split, order preserved.
    pub fn subset(&self, split: Split) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
            seed: self.seed,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Manifest {
        Manifest {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            seed: self.seed,
        }
    }

    pub fn read_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<SampleRecord>, _>>()?;
        Self::new(records)
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        if self.records.is_empty() {
            wtr.write_record(["path", "source", "finding", "split"])?;
        }
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Concatenates manifests in order; paths must be disjoint.
pub fn fuse(manifests: &[Manifest]) -> Result<Manifest> {
    let records = manifests.iter().flat_map(|m| m.records.iter().cloned()).collect();
    Manifest::new(records)
}

/// Per-class number of records sent to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub const fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Shuffles each class with its own sub-stream of `seed` and assigns records
/// to train, validation and test in that order.
pub fn split(manifest: &Manifest, scheme: LabelScheme, counts: &[SplitCounts], seed: u64) -> Result<Manifest> {
    let n_classes = scheme.num_classes();
    if counts.len() != n_classes {
        return Err(DatasetError::ClassCount {
            expected: n_classes,
            actual: counts.len(),
        });
    }
    let labels = manifest.labels(scheme);
    let mut out = manifest.clone();
    for (class, c) in counts.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() != c.total() {
            return Err(DatasetError::CountMismatch {
                class,
                requested: c.total(),
                available: members.len(),
            });
        }
        rng::shuffle(&mut members, &mut rng::derived(seed, class as u64));
        for (rank, &i) in members.iter().enumerate() {
            out.records[i].split = if rank < c.train {
                Split::Train
            } else if rank < c.train + c.val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    out.seed = Some(seed);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified k-fold assignment over class labels.
///
/// Each class is shuffled with its own sub-stream of `seed` and dealt
/// round-robin over the folds; the dealing position carries over from one
/// class to the next so total fold sizes also stay within one of each other.
pub fn kfold_labels(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(DatasetError::InvalidK(k));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut fold_of = vec![0usize; labels.len()];
    let mut next = 0usize;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(DatasetError::TooFewSamples {
                class,
                count: members.len(),
                k,
            });
        }
        rng::shuffle(&mut members, &mut rng::derived(seed, class as u64));
        for i in members {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| Fold {
            train: (0..labels.len()).filter(|&i| fold_of[i] != f).collect(),
            val: (0..labels.len()).filter(|&i| fold_of[i] == f).collect(),
        })
        .collect())
}

pub fn kfold(manifest: &Manifest, scheme: LabelScheme, k: usize, seed: u64) -> Result<Vec<Fold>> {
    kfold_labels(&manifest.labels(scheme), k, seed)
}

/// Split and oversampling counts of the published fused-dataset experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPreset {
    pub name: &'static str,
    pub scheme: LabelScheme,
    pub counts: Vec<SplitCounts>,
    /// Per-class training counts after random oversampling (`R*` presets only).
    pub oversample_target: Option<Vec<usize>>,
}

pub const PRESET_NAMES: [&str; 6] = [
    "table2-cb",
    "table2-cm3",
    "table2-cm4",
    "table2-rb",
    "table2-rm3",
    "table2-rm4",
];

pub fn preset(name: &str) -> Result<SplitPreset> {
    let binary = vec![SplitCounts::new(906, 90, 110), SplitCounts::new(88, 9, 11)];
    let multi3 = vec![
        SplitCounts::new(437, 44, 52),
        SplitCounts::new(88, 9, 11),
        SplitCounts::new(469, 46, 58),
    ];
    let multi4 = vec![
        SplitCounts::new(437, 44, 52),
        SplitCounts::new(88, 9, 11),
        SplitCounts::new(422, 41, 52),
        SplitCounts::new(47, 5, 6),
    ];
    let (name, scheme, counts, target) = match name.to_ascii_lowercase().as_str() {
        "table2-cb" => ("table2-cb", LabelScheme::Binary, binary, None),
        "table2-cm3" => ("table2-cm3", LabelScheme::Multi3, multi3, None),
        "table2-cm4" => ("table2-cm4", LabelScheme::Multi4, multi4, None),
        "table2-rb" => ("table2-rb", LabelScheme::Binary, binary, Some(vec![960; 2])),
        "table2-rm3" => ("table2-rm3", LabelScheme::Multi3, multi3, Some(vec![469; 3])),
        "table2-rm4" => ("table2-rm4", LabelScheme::Multi4, multi4, Some(vec![437; 4])),
        _ => {
            return Err(DatasetError::Unknown {
                kind: "preset",
                value: name.to_string(),
            })
        }
    };
    Ok(SplitPreset {
        name,
        scheme,
        counts,
        oversample_target: target,
    })
}

/// Parses `train/val/test` triples separated by commas, e.g. `906/90/110,88/9/11`.
pub fn parse_counts(s: &str) -> Result<Vec<SplitCounts>> {
    let bad = || DatasetError::Unknown {
        kind: "split counts",
        value: s.to_string(),
    };
    s.split(',')
        .map(|triple| {
            let parts: Vec<usize> = triple
                .trim()
                .split('/')
                .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            match parts.as_slice() {
                [a, b, c] => Ok(SplitCounts::new(*a, *b, *c)),
                _ => Err(bad()),
            }
        })
        .collect()
}
