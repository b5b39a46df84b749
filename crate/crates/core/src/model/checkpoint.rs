//! Checkpoint container: an 8-byte magic, a little-endian `u32` format
//! version, a `u64` header length, a JSON header, then every array as
//! row-major little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::tensor::Tensor;

use super::{FeatureNorm, ModelConfig, Net};

const MAGIC: &[u8; 8] = b"VCADVCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub model_fingerprint: String,
    pub dsp_fingerprint: String,
    pub schedule_fingerprint: String,
    /// Last completed stage (`init`, `pretrain-ae`, `pretrain-cls`, `stage1`, `stage2`).
    pub stage: String,
    pub counters: BTreeMap<String, u64>,
    pub speakers: Vec<String>,
    /// ChaCha8 seed (hex), stream and word position (decimal u128).
    pub rng_seed: String,
    pub rng_stream: u64,
    pub rng_word_pos: String,
    /// Input standardization of the networks, once fitted.
    #[serde(default)]
    pub feature_norm: Option<FeatureNorm>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub params: ParamSet<f32>,
    pub adam: Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub nets: BTreeMap<Net, NetworkState>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    net: Net,
    step: u64,
    cfg: AdamConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    adam: Vec<AdamEntry>,
    arrays: Vec<ArrayEntry>,
}

fn net_from_name(name: &str) -> Option<Net> {
    Net::ALL.into_iter().find(|n| n.name() == name)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut arrays = Vec::new();
        let mut blobs: Vec<&[f32]> = Vec::new();
        let mut adam = Vec::new();
        for (net, st) in &self.nets {
            for (name, t) in st.params.iter() {
                arrays.push(ArrayEntry { name: format!("{}/param/{name}", net.name()), shape: t.shape().to_vec() });
                blobs.push(t.data());
            }
            for (k, (name, t)) in st.params.iter().enumerate() {
                arrays.push(ArrayEntry { name: format!("{}/adam_m/{name}", net.name()), shape: t.shape().to_vec() });
                blobs.push(&st.adam.m[k]);
                arrays.push(ArrayEntry { name: format!("{}/adam_v/{name}", net.name()), shape: t.shape().to_vec() });
                blobs.push(&st.adam.v[k]);
            }
            adam.push(AdamEntry { net: *net, step: st.adam.step, cfg: st.adam.cfg });
        }
        let header = serde_json::to_vec(&Header { meta: self.meta.clone(), adam, arrays })?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("partial");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
            w.write_u64::<LittleEndian>(header.len() as u64)?;
            w.write_all(&header)?;
            for blob in blobs {
                for &v in blob {
                    w.write_f32::<LittleEndian>(v)?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        Self::read(r).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::Format(format!("{}: truncated checkpoint", path.display()))
            }
            other => other,
        })
    }

    fn read(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.read_u64::<LittleEndian>()? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;

        let mut params: BTreeMap<Net, (Vec<String>, Vec<Tensor<f32>>)> = BTreeMap::new();
        let mut moments: BTreeMap<(Net, bool), Vec<Vec<f32>>> = BTreeMap::new();
        for e in &header.arrays {
            let n: usize = e.shape.iter().product();
            let mut data = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            let mut parts = e.name.splitn(3, '/');
            let (Some(net), Some(kind), Some(pname)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Format(format!("bad array name {}", e.name)));
            };
            let net = net_from_name(net).ok_or_else(|| Error::Format(format!("unknown network {net}")))?;
            match kind {
                "param" => {
                    let entry = params.entry(net).or_default();
                    entry.0.push(pname.to_string());
                    entry.1.push(Tensor::new(&e.shape, data)?);
                }
                "adam_m" => moments.entry((net, false)).or_default().push(data),
                "adam_v" => moments.entry((net, true)).or_default().push(data),
                other => return Err(Error::Format(format!("unknown array kind {other}"))),
            }
        }
        let mut nets = BTreeMap::new();
        for a in header.adam {
            let (names, tensors) = params.remove(&a.net).unwrap_or_default();
            let m = moments.remove(&(a.net, false)).unwrap_or_default();
            let v = moments.remove(&(a.net, true)).unwrap_or_default();
            if m.len() != names.len() || v.len() != names.len() {
                return Err(Error::Format(format!("optimizer state incomplete for {}", a.net.name())));
            }
            let adam = Adam { cfg: a.cfg, step: a.step, m, v };
            nets.insert(a.net, NetworkState { params: ParamSet::from_parts(names, tensors), adam });
        }
        Ok(Self { meta: header.meta, nets })
    }
}
