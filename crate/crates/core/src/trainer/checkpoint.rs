use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Discriminator, Generator, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{AdamState, FidPoint, LossRecord, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AGFK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    iteration: u64,
    adam_g_step: u64,
    adam_d_step: u64,
    loss_history: Vec<LossRecord>,
    fid_history: Vec<FidPoint>,
}

fn put_tensor<T: Scalar>(buf: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> Result<()> {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(t.rank() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        let f = v
            .to_f32()
            .filter(|f| f.is_finite())
            .ok_or_else(|| Error::Numeric(format!("{name} holds a value not storable as f32")))?;
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

/// Training state as bytes: magic, version, JSON header, named f32 tensors,
/// RNG key and a CRC32 of everything before it.
pub fn encode_checkpoint<T: Scalar>(state: &TrainState<T>, config: &TrainConfig) -> Result<Vec<u8>> {
    let header = Header {
        config: config.clone(),
        iteration: state.iteration,
        adam_g_step: state.adam_g.step,
        adam_d_step: state.adam_d.step,
        loss_history: state.loss_history.clone(),
        fid_history: state.fid_history.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let groups: [(&str, &ParamSet<T>, &AdamState<T>); 2] = [
        ("g", &state.generator.params, &state.adam_g),
        ("d", &state.discriminator.params, &state.adam_d),
    ];
    for (prefix, params, _) in &groups {
        for (name, t) in params.iter() {
            put_tensor(&mut buf, &format!("{prefix}/{name}"), t)?;
        }
    }
    for (prefix, params, adam) in &groups {
        for (moment, tensors) in [("m", &adam.m), ("v", &adam.v)] {
            for (name, t) in params.names().iter().zip(tensors.iter()) {
                put_tensor(&mut buf, &format!("adam_{prefix}/{moment}/{name}"), t)?;
            }
        }
    }
    for k in state.rng_key {
        buf.extend_from_slice(&k.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corruption("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor<T: Scalar>(&mut self, expected_name: &str, expected_shape: &[usize]) -> Result<Tensor<T>> {
        let len = self.u32()? as usize;
        let name = self.take(len)?;
        if name != expected_name.as_bytes() {
            return Err(Error::Format(format!(
                "expected tensor {expected_name}, found {}",
                String::from_utf8_lossy(name)
            )));
        }
        let rank = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        if shape != expected_shape {
            return Err(Error::Format(format!(
                "tensor {expected_name} has shape {shape:?}, model expects {expected_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        Tensor::new(shape, data)
    }
}

fn read_params<T: Scalar>(r: &mut Reader<'_>, prefix: &str, layout: &ParamSet<T>) -> Result<ParamSet<T>> {
    let mut out = ParamSet::new();
    for (name, t) in layout.iter() {
        out.insert(name, r.tensor(&format!("{prefix}/{name}"), t.shape())?)?;
    }
    Ok(out)
}

fn read_moments<T: Scalar>(r: &mut Reader<'_>, prefix: &str, layout: &ParamSet<T>) -> Result<Vec<Tensor<T>>> {
    layout
        .iter()
        .map(|(name, t)| r.tensor(&format!("{prefix}/{name}"), t.shape()))
        .collect()
}

/// Inverse of [`encode_checkpoint`]. Checksum failures are reported as
/// [`Error::Corruption`], structural mismatches as [`Error::Format`].
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(TrainState<T>, TrainConfig)> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    if bytes.len() < 8 + 4 {
        return Err(Error::Corruption("checkpoint truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Corruption("checkpoint checksum mismatch".into()));
    }
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let json_len = usize::try_from(r.u64()?).map_err(|_| Error::Corruption("header length".into()))?;
    let header: Header = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let config = header.config;
    config.validate()?;
    let mcfg = config.model_config();
    let mut layout_rng = ChaCha8Rng::seed_from_u64(0);
    let g_layout = Generator::<T>::init(&mcfg, &mut layout_rng)?.params;
    let d_layout = Discriminator::<T>::init(&mcfg, &mut layout_rng)?.params;

    let g_params = read_params(&mut r, "g", &g_layout)?;
    let d_params = read_params(&mut r, "d", &d_layout)?;
    let adam_g = AdamState {
        m: read_moments(&mut r, "adam_g/m", &g_layout)?,
        v: read_moments(&mut r, "adam_g/v", &g_layout)?,
        step: header.adam_g_step,
    };
    let adam_d = AdamState {
        m: read_moments(&mut r, "adam_d/m", &d_layout)?,
        v: read_moments(&mut r, "adam_d/v", &d_layout)?,
        step: header.adam_d_step,
    };
    let mut rng_key = [0u64; 4];
    for k in &mut rng_key {
        *k = r.u64()?;
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    let state = TrainState {
        iteration: header.iteration,
        generator: Generator { config: mcfg.clone(), params: g_params },
        discriminator: Discriminator { config: mcfg, params: d_params },
        adam_g,
        adam_d,
        rng_key,
        loss_history: header.loss_history,
        fid_history: header.fid_history,
    };
    Ok((state, config))
}

/// Writes to a sibling temporary file and renames it over `path`, so a crash
/// never leaves a half-written checkpoint behind.
pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, config: &TrainConfig, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state, config)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn resume<T: Scalar>(path: &Path) -> Result<(TrainState<T>, TrainConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
