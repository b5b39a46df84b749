//! Corpus ingestion: speaker table, stratified train/test split, random
//! fixed-length segments and the manifest file. The synthetic toy corpus
//! lives in [`toy`].

pub mod toy;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

pub use toy::{make_toy_corpus, toy_speakers, ToyCorpusConfig, ToySpeaker};

/// Ordered speaker names; a speaker's id is its index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeakerTable {
    names: Vec<String>,
}

impl SpeakerTable {
    /// Sorts and validates the names (unique, at least two).
    pub fn new(mut names: Vec<String>) -> Result<Self> {
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidCorpus("duplicate speaker names".into()));
        }
        if names.len() < 2 {
            return Err(Error::InvalidCorpus(format!("need at least two speakers, found {}", names.len())));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Resolves a speaker given by name or by numeric id.
    pub fn resolve(&self, key: &str) -> Result<usize> {
        if let Some(id) = self.id(key) {
            return Ok(id);
        }
        match key.parse::<usize>() {
            Ok(id) if id < self.len() => Ok(id),
            _ => Err(Error::invalid(format!("unknown speaker {key}"))),
        }
    }
}

/// One speaker per subdirectory of `corpus_dir`, ids in lexicographic order.
pub fn build_speaker_table(corpus_dir: &Path) -> Result<SpeakerTable> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(corpus_dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    SpeakerTable::new(names)
}

/// A WAV file of the corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusFile {
    pub speaker: usize,
    pub utt_id: String,
    pub path: PathBuf,
}

/// Lists `<root>/<speaker>/<utt>.wav`, sorted by speaker then utterance.
/// Utterance ids are `<speaker>/<utt>`.
pub fn scan_corpus(corpus_dir: &Path) -> Result<(SpeakerTable, Vec<CorpusFile>)> {
    let table = build_speaker_table(corpus_dir)?;
    let mut files = Vec::new();
    for (id, name) in table.names().iter().enumerate() {
        let mut found = Vec::new();
        for entry in std::fs::read_dir(corpus_dir.join(name))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                found.push(CorpusFile { speaker: id, utt_id: format!("{name}/{stem}"), path });
            }
        }
        found.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        if found.is_empty() {
            return Err(Error::InvalidCorpus(format!("speaker {name} has no WAV files")));
        }
        files.extend(found);
    }
    Ok((table, files))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: usize,
    pub spec: Spectrogram,
}

/// Utterances sharing one analysis fingerprint.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub entries: Vec<Utterance>,
    pub n_speakers: usize,
}

impl Dataset {
    pub fn new(entries: Vec<Utterance>, n_speakers: usize) -> Result<Self> {
        if let Some(first) = entries.first() {
            let fp = &first.spec.config_fingerprint;
            let bins = first.spec.n_bins();
            for u in &entries {
                if &u.spec.config_fingerprint != fp || u.spec.n_bins() != bins {
                    return Err(Error::ConfigMismatch(format!("utterance {} has different analysis settings", u.id)));
                }
                if u.speaker >= n_speakers {
                    return Err(Error::InvalidCorpus(format!("utterance {} has unknown speaker {}", u.id, u.speaker)));
                }
            }
        }
        Ok(Self { entries, n_speakers })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprint(&self) -> Option<&str> {
        self.entries.first().map(|u| u.spec.config_fingerprint.as_str())
    }

    pub fn n_bins(&self) -> Option<usize> {
        self.entries.first().map(|u| u.spec.n_bins())
    }

    /// Entry indices grouped by speaker id.
    pub fn by_speaker(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_speakers];
        for (i, u) in self.entries.iter().enumerate() {
            groups[u.speaker].push(i);
        }
        groups
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self { entries: idx.iter().map(|&i| self.entries[i].clone()).collect(), n_speakers: self.n_speakers }
    }
}

/// Per-speaker seeded shuffle; each speaker contributes
/// `round(train_fraction · n)` utterances (at least one, at most `n − 1`) to
/// the training set. Entry order within each part follows the input order.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_train = vec![false; ds.len()];
    for (speaker, mut idx) in ds.by_speaker().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::InvalidCorpus(format!("speaker {speaker} has fewer than two utterances")));
        }
        idx.sort_by(|&a, &b| ds.entries[a].id.cmp(&ds.entries[b].id));
        idx.shuffle(&mut rng);
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_train] {
            is_train[i] = true;
        }
    }
    let train: Vec<usize> = (0..ds.len()).filter(|&i| is_train[i]).collect();
    let test: Vec<usize> = (0..ds.len()).filter(|&i| !is_train[i]).collect();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Fixed-length training excerpt.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub frames: Spectrogram,
    pub speaker: usize,
}

/// Uniformly placed window of `length` frames. Fails with
/// `segment-too-short` when the utterance has fewer frames.
pub fn sample_segment(spec: &Spectrogram, length: usize, rng: &mut impl Rng) -> Result<Spectrogram> {
    let t = spec.n_frames();
    if t < length {
        return Err(Error::SegmentTooShort { frames: t, needed: length });
    }
    let offset = rng.gen_range(0..=t - length);
    spec.slice(offset, length)
}

/// Like [`sample_segment`], but short utterances are extended by repeating
/// their last frame instead of failing.
pub fn sample_segment_padded(spec: &Spectrogram, length: usize, rng: &mut impl Rng) -> Result<Spectrogram> {
    if spec.n_frames() < length {
        return Ok(spec.pad_to(length));
    }
    sample_segment(spec, length, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker: String,
    pub split: Split,
}

/// One `utt_id<TAB>speaker<TAB>split` line per entry.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.utt_id, e.speaker, e.split));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                [utt, speaker, split] => {
                    Ok(ManifestEntry { utt_id: utt.to_string(), speaker: speaker.to_string(), split: split.parse()? })
                }
                _ => Err(Error::Format(format!("bad manifest line: {line}"))),
            }
        })
        .collect()
}

/// Manifest lines for a train/test split, sorted by utterance id.
pub fn manifest_for(table: &SpeakerTable, train: &Dataset, test: &Dataset) -> Vec<ManifestEntry> {
    let mut map = BTreeMap::new();
    for (ds, split) in [(train, Split::Train), (test, Split::Test)] {
        for u in &ds.entries {
            let speaker = table.name(u.speaker).unwrap_or_default().to_string();
            map.insert(u.id.clone(), ManifestEntry { utt_id: u.id.clone(), speaker, split });
        }
    }
    map.into_values().collect()
}
