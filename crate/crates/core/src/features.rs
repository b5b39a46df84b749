//! Binary feature cache: a header carrying the analysis fingerprint, then one
//! record per utterance (id, speaker id, `T`, `F`, row-major little-endian
//! `f32` frames).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::corpus::{scan_corpus, Dataset, SpeakerTable, Utterance};
use crate::dsp::{stft_logmag, DspConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::wav::read_wav;

const MAGIC: &[u8; 8] = b"VCADVFC\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub utt_id: String,
    pub speaker: u32,
    pub spec: Spectrogram,
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("non-UTF-8 string in feature cache".into()))
}

/// Writes `records`; every spectrogram must carry `fingerprint`.
pub fn write_cache(path: &Path, fingerprint: &str, records: &[FeatureRecord]) -> Result<()> {
    if let Some(bad) = records.iter().find(|r| r.spec.config_fingerprint != fingerprint) {
        return Err(Error::ConfigMismatch(format!("utterance {} was extracted with other settings", bad.utt_id)));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    write_str(&mut w, fingerprint)?;
    w.write_u64::<LittleEndian>(records.len() as u64)?;
    for r in records {
        write_str(&mut w, &r.utt_id)?;
        w.write_u32::<LittleEndian>(r.speaker)?;
        w.write_u32::<LittleEndian>(r.spec.n_frames() as u32)?;
        w.write_u32::<LittleEndian>(r.spec.n_bins() as u32)?;
        for &v in r.spec.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a cache, failing with `config-mismatch` when `expected` is given and
/// differs from the stored fingerprint.
pub fn read_cache(path: &Path, expected: Option<&str>) -> Result<(String, Vec<FeatureRecord>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_body(&mut r, expected).map_err(|e| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("{}: truncated feature cache", path.display()))
        }
        other => other,
    })
}

fn read_body(r: &mut impl Read, expected: Option<&str>) -> Result<(String, Vec<FeatureRecord>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a feature cache".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported feature cache version {version}")));
    }
    let fingerprint = read_str(r)?;
    if let Some(exp) = expected {
        if exp != fingerprint {
            return Err(Error::ConfigMismatch(format!("feature cache fingerprint {fingerprint}, expected {exp}")));
        }
    }
    let n = r.read_u64::<LittleEndian>()?;
    let mut records = Vec::new();
    for _ in 0..n {
        let utt_id = read_str(r)?;
        let speaker = r.read_u32::<LittleEndian>()?;
        let t = r.read_u32::<LittleEndian>()? as usize;
        let f = r.read_u32::<LittleEndian>()? as usize;
        let mut data = vec![0f32; t * f];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        let spec = Spectrogram::new(data.into_iter().map(f64::from).collect(), t, f, fingerprint.clone())
            .map_err(|_| Error::Format(format!("record {utt_id} has an empty spectrogram")))?;
        records.push(FeatureRecord { utt_id, speaker, spec });
    }
    Ok((fingerprint, records))
}

/// Analyzes every WAV file of a corpus directory. Files must already be at
/// the analysis sample rate.
pub fn extract_corpus(corpus_dir: &Path, dsp: &DspConfig) -> Result<(SpeakerTable, Vec<FeatureRecord>)> {
    dsp.validate()?;
    let (table, files) = scan_corpus(corpus_dir)?;
    let mut records = Vec::with_capacity(files.len());
    for file in files {
        let clip = read_wav(&file.path)?;
        if clip.sample_rate_hz != dsp.sample_rate_hz {
            return Err(Error::ConfigMismatch(format!(
                "{} is sampled at {} Hz, analysis expects {} Hz",
                file.path.display(),
                clip.sample_rate_hz,
                dsp.sample_rate_hz
            )));
        }
        let spec = stft_logmag(&clip, dsp)?;
        records.push(FeatureRecord { utt_id: file.utt_id, speaker: file.speaker as u32, spec });
    }
    Ok((table, records))
}

pub fn to_dataset(records: Vec<FeatureRecord>, n_speakers: usize) -> Result<Dataset> {
    let entries = records
        .into_iter()
        .map(|r| Utterance { id: r.utt_id, speaker: r.speaker as usize, spec: r.spec })
        .collect();
    Dataset::new(entries, n_speakers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, speaker: u32, t: usize) -> FeatureRecord {
        let data = (0..t * 3).map(|i| i as f64 * 0.5 - 1.0).collect();
        FeatureRecord { utt_id: id.into(), speaker, spec: Spectrogram::new(data, t, 3, "fp".into()).unwrap() }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let recs = vec![record("a", 0, 4), record("b", 1, 2)];
        write_cache(&path, "fp", &recs).unwrap();
        let (fp, back) = read_cache(&path, Some("fp")).unwrap();
        assert_eq!(fp, "fp");
        assert_eq!(back, recs);
        assert_eq!(read_cache(&path, Some("other")).unwrap_err().class(), "config-mismatch");
    }

    #[test]
    fn rejects_mixed_fingerprints_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        assert_eq!(write_cache(&path, "zz", &[record("a", 0, 2)]).unwrap_err().class(), "config-mismatch");
        std::fs::write(&path, b"VCADVFC\0\x01").unwrap();
        assert_eq!(read_cache(&path, None).unwrap_err().class(), "malformed-file");
    }

    #[test]
    fn extraction_checks_the_sample_rate() {
        use crate::corpus::toy::{make_toy_corpus, ToyCorpusConfig};
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyCorpusConfig { sample_rate_hz: 4_000, min_secs: 0.5, max_secs: 0.6, ..ToyCorpusConfig::new(2, 2, 1) };
        make_toy_corpus(&cfg, dir.path()).unwrap();
        let dsp = DspConfig::desk();
        let (table, recs) = extract_corpus(dir.path(), &dsp).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r.spec.n_bins() == dsp.bins() && r.spec.config_fingerprint == dsp.fingerprint()));
        let ds = to_dataset(recs, 2).unwrap();
        assert_eq!(ds.by_speaker(), vec![vec![0, 1], vec![2, 3]]);
        let err = extract_corpus(dir.path(), &DspConfig::paper()).unwrap_err();
        assert_eq!(err.class(), "config-mismatch");
    }
}
