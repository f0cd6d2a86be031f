//! Single-file binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!   magic "MTAT" | version u16 | config digest [32] | iteration u64 |
//!   rng blob (u32 len + bytes) | entry count u32 | entries...
//! entry: name (u32 len + utf8) | dtype u8 | rank u8 | dims u64 x rank |
//!   raw payload (dtype-sized little-endian values)
//!
//! Floats are persisted as raw bit patterns, never text, so a load/save
//! round trip is the identity on every payload byte. Unknown versions
//! are refused outright.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MTAT";
pub const VERSION: u16 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;
const DTYPE_U64: u8 = 2;
const DTYPE_BYTES: u8 = 3;

/// One named payload.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_digest: [u8; 32],
    pub iteration: u64,
    pub rng_state: Vec<u8>,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new(config_digest: [u8; 32], iteration: u64, rng_state: Vec<u8>) -> Self {
        Checkpoint { config_digest, iteration, rng_state, entries: Vec::new() }
    }

    pub fn push_f32(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.entries.push(Entry { name: name.into(), payload: Payload::F32(t) });
    }

    pub fn push_f64(&mut self, name: impl Into<String>, t: Tensor<f64>) {
        self.entries.push(Entry { name: name.into(), payload: Payload::F64(t) });
    }

    pub fn push_u64(&mut self, name: impl Into<String>, v: Vec<u64>) {
        self.entries.push(Entry { name: name.into(), payload: Payload::U64(v) });
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, v: Vec<u8>) {
        self.entries.push(Entry { name: name.into(), payload: Payload::Bytes(v) });
    }

    pub fn find(&self, name: &str) -> Option<&Payload> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.payload)
    }

    pub fn f32_tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        match self.find(name) {
            Some(Payload::F32(t)) => Ok(t),
            Some(_) => Err(Error::invalid(format!("entry {name:?} has the wrong dtype"))),
            None => Err(Error::invalid(format!("checkpoint has no entry {name:?}"))),
        }
    }

    pub fn u64_scalar(&self, name: &str) -> Result<u64> {
        match self.find(name) {
            Some(Payload::U64(v)) if v.len() == 1 => Ok(v[0]),
            Some(_) => Err(Error::invalid(format!("entry {name:?} is not a u64 scalar"))),
            None => Err(Error::invalid(format!("checkpoint has no entry {name:?}"))),
        }
    }
}

struct CountingWriter<W: Write> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(bytes)?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

fn payload_dims(p: &Payload) -> Vec<u64> {
    match p {
        Payload::F32(t) => t.shape().iter().map(|&d| d as u64).collect(),
        Payload::F64(t) => t.shape().iter().map(|&d| d as u64).collect(),
        Payload::U64(v) => vec![v.len() as u64],
        Payload::Bytes(v) => vec![v.len() as u64],
    }
}

fn payload_dtype(p: &Payload) -> u8 {
    match p {
        Payload::F32(_) => DTYPE_F32,
        Payload::F64(_) => DTYPE_F64,
        Payload::U64(_) => DTYPE_U64,
        Payload::Bytes(_) => DTYPE_BYTES,
    }
}

/// Atomic write: temp file in the same directory, then rename.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    let tmp: PathBuf = path.with_extension(format!("tmp.{}", std::process::id()));
    let io = |e: std::io::Error| Error::Io { path: tmp.clone(), source: e };
    {
        let file = File::create(&tmp).map_err(io)?;
        let mut w = CountingWriter { inner: std::io::BufWriter::new(file), written: 0 };
        w.put(&MAGIC).map_err(io)?;
        w.put(&VERSION.to_le_bytes()).map_err(io)?;
        w.put(&ckpt.config_digest).map_err(io)?;
        w.put(&ckpt.iteration.to_le_bytes()).map_err(io)?;
        w.put(&(ckpt.rng_state.len() as u32).to_le_bytes()).map_err(io)?;
        w.put(&ckpt.rng_state).map_err(io)?;
        w.put(&(ckpt.entries.len() as u32).to_le_bytes()).map_err(io)?;
        for e in &ckpt.entries {
            let name = e.name.as_bytes();
            w.put(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.put(name).map_err(io)?;
            w.put(&[payload_dtype(&e.payload)]).map_err(io)?;
            let dims = payload_dims(&e.payload);
            w.put(&[dims.len() as u8]).map_err(io)?;
            for d in &dims {
                w.put(&d.to_le_bytes()).map_err(io)?;
            }
            match &e.payload {
                Payload::F32(t) => {
                    for v in t.data() {
                        w.put(&v.to_le_bytes()).map_err(io)?;
                    }
                }
                Payload::F64(t) => {
                    for v in t.data() {
                        w.put(&v.to_le_bytes()).map_err(io)?;
                    }
                }
                Payload::U64(v) => {
                    for x in v {
                        w.put(&x.to_le_bytes()).map_err(io)?;
                    }
                }
                Payload::Bytes(v) => w.put(v).map_err(io)?,
            }
        }
        w.inner.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

struct CountingReader<R: Read> {
    inner: R,
    offset: u64,
    path: PathBuf,
}

impl<R: Read> CountingReader<R> {
    fn take(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| Error::Format {
            path: self.path.clone(),
            offset: self.offset,
            detail: format!("truncated while reading {what}"),
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut r = CountingReader {
        inner: std::io::BufReader::new(file),
        offset: 0,
        path: path.to_path_buf(),
    };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 4,
            detail: format!("unsupported container version {version}, this build reads {VERSION}"),
        });
    }
    let digest: [u8; 32] = r.take(32, "config digest")?.try_into().unwrap();
    let iteration = r.u64("iteration")?;
    let rng_len = r.u32("rng length")? as usize;
    let rng_state = r.take(rng_len, "rng state")?;
    let n_entries = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(n_entries);
    for i in 0..n_entries {
        let name_len = r.u32("entry name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "entry name")?).map_err(|_| Error::Format {
            path: path.to_path_buf(),
            offset: r.offset,
            detail: format!("entry {i} name is not utf-8"),
        })?;
        let dtype = r.take(1, "dtype")?[0];
        let rank = r.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dimension")? as usize);
        }
        let numel: usize = dims.iter().product();
        let payload = match dtype {
            DTYPE_F32 => {
                let raw = r.take(numel * 4, &format!("f32 payload of {name}"))?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Payload::F32(Tensor::new(dims, data)?)
            }
            DTYPE_F64 => {
                let raw = r.take(numel * 8, &format!("f64 payload of {name}"))?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Payload::F64(Tensor::new(dims, data)?)
            }
            DTYPE_U64 => {
                let raw = r.take(numel * 8, &format!("u64 payload of {name}"))?;
                Payload::U64(
                    raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect(),
                )
            }
            DTYPE_BYTES => Payload::Bytes(r.take(numel, &format!("byte payload of {name}"))?),
            other => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: r.offset,
                    detail: format!("unknown dtype tag {other} in entry {name:?}"),
                })
            }
        };
        entries.push(Entry { name, payload });
    }
    Ok(Checkpoint { config_digest: digest, iteration, rng_state, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new([7u8; 32], 42, vec![1, 2, 3, 4, 5]);
        c.push_f32(
            "gen/w",
            Tensor::new(vec![2, 3], vec![1.5, -0.25, 3.0e-8, f32::MIN_POSITIVE, 1e30, 0.0]).unwrap(),
        );
        c.push_f64("oracle/x", Tensor::new(vec![2], vec![std::f64::consts::PI, -0.0]).unwrap());
        c.push_u64("adam/t", vec![9]);
        c.push_bytes("names", b"blond\nblack".to_vec());
        c
    }

    fn tmp(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("metamorph_ckpt_{tag}_{}.mtat", std::process::id()))
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let path = tmp("rt");
        let c = sample();
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(c, back);
        // and the file itself is byte-stable across rewrites
        let bytes1 = std::fs::read(&path).unwrap();
        save_checkpoint(&path, &c).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn truncation_reports_offset() {
        let path = tmp("trunc");
        save_checkpoint(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 7);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert!(offset > 0),
            other => panic!("expected Format error, got {other}"),
        }
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn future_version_refused() {
        let path = tmp("ver");
        save_checkpoint(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 0xFF; // version low byte
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(format!("{err}").contains("unsupported container version"));
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn bad_magic_refused() {
        let path = tmp("magic");
        std::fs::write(&path, b"NOPE whatever").unwrap();
        assert!(load_checkpoint(&path).is_err());
        let _ = std::fs::remove_file(&path);
    }
}
