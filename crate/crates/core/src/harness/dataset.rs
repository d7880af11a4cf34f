use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::HarnessError;
use crate::imagecore::{load_pgm, save_pgm, GrayImage, ImageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split '{s}' (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleSource {
    File(PathBuf),
    Raster(GrayImage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Unique key: the file path, or `<split>/<class>/<index>` for generated rasters.
    pub id: String,
    pub source: SampleSource,
    pub label: usize,
    pub split: Split,
}

impl Sample {
    pub fn image(&self) -> Result<Cow<'_, GrayImage>, ImageError> {
        match &self.source {
            SampleSource::File(p) => load_pgm(p).map(Cow::Owned),
            SampleSource::Raster(img) => Ok(Cow::Borrowed(img)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
    /// Non-fatal problems met while loading.
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Writes every sample as `root/<split>/<class>/<name>.pgm`.
    pub fn write_corpus(&self, root: &Path) -> Result<(), HarnessError> {
        let mut counters: BTreeMap<(Split, usize), usize> = BTreeMap::new();
        for s in &self.samples {
            let class = &self.class_names[s.label];
            let dir = root.join(s.split.dir_name()).join(class);
            fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            let n = counters.entry((s.split, s.label)).or_default();
            let path = dir.join(format!("{:04}.pgm", *n));
            *n += 1;
            save_pgm(&*s.image()?, &path)?;
        }
        Ok(())
    }
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::io(dir, e))?;
    entries.sort();
    Ok(entries)
}

fn is_pgm(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Reads a `root/{train,test}/<class>/*.pgm` tree. Labels follow the sorted
/// class-directory names; samples are ordered by path.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<Dataset, HarnessError> {
    let root = root.as_ref();
    let mut warnings = Vec::new();
    let mut files: BTreeMap<String, Vec<(Split, PathBuf)>> = BTreeMap::new();
    let mut seen_classes = BTreeSet::new();

    for split in [Split::Train, Split::Test] {
        let dir = root.join(split.dir_name());
        if !dir.is_dir() {
            warnings.push(format!("{} is missing; {} split is empty", dir.display(), split.dir_name()));
            continue;
        }
        for class_dir in list_dir(&dir)?.into_iter().filter(|p| p.is_dir()) {
            let name = class_dir.file_name().unwrap().to_string_lossy().into_owned();
            seen_classes.insert(name.clone());
            let pgms: Vec<PathBuf> = list_dir(&class_dir)?.into_iter().filter(|p| is_pgm(p)).collect();
            if pgms.is_empty() {
                warnings.push(format!("{} has no .pgm files; skipped", class_dir.display()));
                continue;
            }
            files.entry(name).or_default().extend(pgms.into_iter().map(|p| (split, p)));
        }
    }
    for name in seen_classes.iter().filter(|n| !files.contains_key(*n)) {
        warnings.push(format!("class '{name}' has no samples in any split; dropped"));
    }
    if files.is_empty() {
        return Err(HarnessError::Corpus(format!("no classes with samples under {}", root.display())));
    }

    let class_names: Vec<String> = files.keys().cloned().collect();
    let mut samples: Vec<Sample> = files
        .into_values()
        .enumerate()
        .flat_map(|(label, list)| {
            list.into_iter().map(move |(split, path)| Sample {
                id: path.display().to_string(),
                source: SampleSource::File(path),
                label,
                split,
            })
        })
        .collect();
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Dataset { class_names, samples, warnings })
}
