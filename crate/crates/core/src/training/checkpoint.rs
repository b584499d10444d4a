//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ATTNGAN1"                     magic
//! u32                            format version
//! u64 + bytes                    config echo (key=value lines)
//! u64                            step
//! rng x3                         state rng, buffer X rng, buffer Y rng
//! u64 x2, u64 x2                 buffer X, buffer Y (full queries, swaps)
//! u64 x2                         Adam steps: generators, discriminators
//! u64, blob*                     named f32 tensors
//! "END!"
//! rng  = 32-byte seed, u64 stream, u128 word position
//! blob = u64 + name bytes, u32 rank, u64 x rank dims, f32 data
//! ```
//!
//! Blob names: `params/{net}/{param}`, `adam_g.m/{i}`, `adam_g.v/{i}`,
//! `adam_d.m/{i}`, `adam_d.v/{i}` and `buffer_x/{i}`, `buffer_y/{i}`.
//! Loading parses and checks the whole file before building any state.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::buffer::ImageBuffer;
use super::config::TrainingConfig;
use super::state::{TrainState, DTYPE};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ATTNGAN1";
pub const VERSION: u32 = 1;
const END: &[u8; 4] = b"END!";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn rng(&mut self, rng: &ChaCha8Rng) {
        self.0.extend_from_slice(&rng.get_seed());
        self.u64(rng.get_stream());
        self.0.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    }
    fn blob(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.bytes(name.as_bytes());
        self.u32(t.rank() as u32);
        for &d in t.dims() {
            self.u64(d as u64);
        }
        let data: Vec<f32> = t.to_dtype(DTYPE)?.flatten_all()?.to_vec1()?;
        self.0.reserve(data.len() * 4);
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    }
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
            .ok_or_else(|| bad(format!("truncated checkpoint: needed {n} bytes at offset {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len() - self.pos)
            .ok_or_else(|| bad(format!("truncated checkpoint: length {n} at offset {}", self.pos)))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn rng(&mut self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self.take(32)?.try_into().expect("32 bytes");
        let stream = self.u64()?;
        let word_pos = u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
    fn blob(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let name = String::from_utf8(self.bytes()?.to_vec()).map_err(|_| bad("blob name is not UTF-8"))?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(bad(format!("blob {name}: implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.len()?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(format!("blob {name}: shape overflow")))?;
        let raw = self.take(count.checked_mul(4).ok_or_else(|| bad("blob size overflow"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, dims, data))
    }
}

/// Serializes the full training state.
pub fn checkpoint_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.bytes(state.config.echo().as_bytes());
    w.u64(state.step);
    w.rng(&state.rng);
    w.rng(state.buffer_x.rng());
    w.rng(state.buffer_y.rng());
    for buf in [&state.buffer_x, &state.buffer_y] {
        let (queries, swaps) = buf.swap_stats();
        w.u64(queries);
        w.u64(swaps);
    }
    w.u64(state.opt_g.t());
    w.u64(state.opt_d.t());

    let mut blobs: Vec<(String, Tensor)> = Vec::new();
    for (net, params) in state.networks() {
        for p in params {
            blobs.push((format!("params/{net}/{}", p.name), p.var.as_tensor().clone()));
        }
    }
    for (prefix, opt) in [("adam_g", &state.opt_g), ("adam_d", &state.opt_d)] {
        for (i, m) in opt.first_moments().iter().enumerate() {
            blobs.push((format!("{prefix}.m/{i}"), m.clone()));
        }
        for (i, v) in opt.second_moments().iter().enumerate() {
            blobs.push((format!("{prefix}.v/{i}"), v.clone()));
        }
    }
    for (prefix, buf) in [("buffer_x", &state.buffer_x), ("buffer_y", &state.buffer_y)] {
        for (i, t) in buf.storage().iter().enumerate() {
            blobs.push((format!("{prefix}/{i}"), t.clone()));
        }
    }
    w.u64(blobs.len() as u64);
    for (name, t) in &blobs {
        w.blob(name, t)?;
    }
    w.0.extend_from_slice(END);
    Ok(w.0)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(state)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    state_from_bytes(&bytes)
}

struct Parsed {
    config: TrainingConfig,
    step: u64,
    rngs: [ChaCha8Rng; 3],
    buffer_stats: [(u64, u64); 2],
    adam_t: [u64; 2],
    blobs: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(bad("not a checkpoint: wrong magic header"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let echo = std::str::from_utf8(r.bytes()?).map_err(|_| bad("config echo is not UTF-8"))?;
    let config = TrainingConfig::from_echo(echo)?;
    let step = r.u64()?;
    let rngs = [r.rng()?, r.rng()?, r.rng()?];
    let buffer_stats = [(r.u64()?, r.u64()?), (r.u64()?, r.u64()?)];
    let adam_t = [r.u64()?, r.u64()?];
    let count = r.u64()?;
    let mut blobs = HashMap::new();
    for _ in 0..count {
        let (name, dims, data) = r.blob()?;
        if blobs.insert(name.clone(), (dims, data)).is_some() {
            return Err(bad(format!("duplicate blob {name}")));
        }
    }
    if r.take(END.len())? != END {
        return Err(bad("missing end marker"));
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes after end marker", bytes.len() - r.pos)));
    }
    Ok(Parsed {
        config,
        step,
        rngs,
        buffer_stats,
        adam_t,
        blobs,
    })
}

fn take_tensor(blobs: &mut HashMap<String, (Vec<usize>, Vec<f32>)>, name: &str, expect: Option<&[usize]>) -> Result<Tensor> {
    let (dims, data) = blobs.remove(name).ok_or_else(|| bad(format!("missing blob {name}")))?;
    if let Some(expect) = expect {
        if dims != expect {
            return Err(bad(format!("blob {name} has shape {dims:?}, expected {expect:?}")));
        }
    }
    Ok(Tensor::from_vec(data, dims, &Device::Cpu)?.to_dtype(DTYPE)?)
}

/// Parses a checkpoint and rebuilds the state it describes. Nothing is
/// constructed unless the whole byte string is well-formed.
pub fn state_from_bytes(bytes: &[u8]) -> Result<TrainState> {
    let Parsed {
        config,
        step,
        rngs: [rng, rng_x, rng_y],
        buffer_stats,
        adam_t,
        mut blobs,
    } = parse(bytes)?;

    let mut state = TrainState::new(config)?;
    let mut assignments = Vec::new();
    for (net, params) in state.networks() {
        for p in params {
            let t = take_tensor(&mut blobs, &format!("params/{net}/{}", p.name), Some(p.var.dims()))?;
            assignments.push((p.var.clone(), t));
        }
    }
    let mut moments = Vec::new();
    for (prefix, params) in [("adam_g", state.generator_params()), ("adam_d", state.discriminator_params())] {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (i, p) in params.iter().enumerate() {
            m.push(take_tensor(&mut blobs, &format!("{prefix}.m/{i}"), Some(p.var.dims()))?);
            v.push(take_tensor(&mut blobs, &format!("{prefix}.v/{i}"), Some(p.var.dims()))?);
        }
        moments.push((m, v));
    }
    let mut storages = Vec::new();
    for prefix in ["buffer_x", "buffer_y"] {
        let mut storage = Vec::new();
        while let Some((dims, _)) = blobs.get(&format!("{prefix}/{}", storage.len())) {
            if dims.len() != 4 || dims[0] != 1 || dims[1] != 3 {
                return Err(bad(format!("buffer image with shape {dims:?}")));
            }
            let name = format!("{prefix}/{}", storage.len());
            storage.push(take_tensor(&mut blobs, &name, None)?);
        }
        if storage.len() > state.config.buffer_capacity {
            return Err(bad(format!("{prefix} holds {} images, capacity {}", storage.len(), state.config.buffer_capacity)));
        }
        storages.push(storage);
    }
    if let Some(extra) = blobs.keys().next() {
        return Err(bad(format!("unexpected blob {extra}")));
    }

    for (var, t) in assignments {
        var.set(&t)?;
    }
    let (mg, vg) = moments.remove(0);
    state.opt_g.restore(adam_t[0], mg, vg)?;
    let (md, vd) = moments.remove(0);
    state.opt_d.restore(adam_t[1], md, vd)?;
    let capacity = state.config.buffer_capacity;
    let storage_y = storages.pop().expect("two buffers");
    let storage_x = storages.pop().expect("two buffers");
    state.buffer_x = ImageBuffer::restore(capacity, storage_x, rng_x, buffer_stats[0]);
    state.buffer_y = ImageBuffer::restore(capacity, storage_y, rng_y, buffer_stats[1]);
    state.rng = rng;
    state.step = step;
    Ok(state)
}
