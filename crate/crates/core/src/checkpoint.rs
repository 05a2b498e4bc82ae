//! Binary checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      8 bytes  "LMFXCKPT"
//! version    u32      FORMAT_VERSION
//! cfg_len    u32      byte length of the config text
//! cfg        utf-8    `key = value` lines: model keys then schedule keys
//! n_params   u32
//! per parameter, in model registration order:
//!   name_len u32, name utf-8, rank u32, dims u64 x rank, data f64 x prod(dims)
//! ```
//!
//! Prompt-scan parameters are shared by all four scan directions, which are
//! applied in `ScanDirection::ALL` order.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use lumafix_autograd::Tensor;

use crate::config::KvConfig;
use crate::diffusion::ScheduleConfig;
use crate::dit::{ModelConfig, RestorationNet};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"LMFXCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut kv = KvConfig::new();
        self.model.write_kv(&mut kv);
        self.schedule.write_kv(&mut kv);
        let cfg = kv.to_text();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LE>(FORMAT_VERSION).unwrap();
        out.write_u32::<LE>(cfg.len() as u32).unwrap();
        out.extend_from_slice(cfg.as_bytes());
        out.write_u32::<LE>(self.params.len() as u32).unwrap();
        for (name, t) in self.params.iter() {
            out.write_u32::<LE>(name.len() as u32).unwrap();
            out.extend_from_slice(name.as_bytes());
            out.write_u32::<LE>(t.rank() as u32).unwrap();
            for &d in t.shape() {
                out.write_u64::<LE>(d as u64).unwrap();
            }
            for &v in t.data() {
                out.write_f64::<LE>(v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        let trunc = |_: std::io::Error| bad("truncated file".into());
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = r.read_u32::<LE>().map_err(trunc)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let cfg_len = r.read_u32::<LE>().map_err(trunc)? as usize;
        let text = read_string(&mut r, cfg_len).map_err(|e| bad(e.to_string()))?;
        let kv = KvConfig::parse(&text, path)?;
        let model = ModelConfig::from_kv(&kv)?;
        let schedule = ScheduleConfig::from_kv(&kv)?;
        let n = r.read_u32::<LE>().map_err(trunc)? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let len = r.read_u32::<LE>().map_err(trunc)? as usize;
            let name = read_string(&mut r, len).map_err(|e| bad(e.to_string()))?;
            let rank = r.read_u32::<LE>().map_err(trunc)? as usize;
            let shape = (0..rank)
                .map(|_| r.read_u64::<LE>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(trunc)?;
            let count: usize = shape.iter().product();
            if count > (bytes.len() - r.position() as usize) / 8 {
                return Err(bad(format!("parameter `{name}` exceeds file size")));
            }
            let mut data = vec![0.0; count];
            r.read_f64_into::<LE>(&mut data).map_err(trunc)?;
            params.insert(name, Tensor::from_vec(&shape, data)?)?;
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        Ok(Self {
            model,
            schedule,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Builds the network and checks that the stored table matches its
    /// parameter names, order and shapes exactly.
    pub fn network(&self, path: &Path) -> Result<RestorationNet> {
        let net = RestorationNet::new(self.model.clone())?;
        let fresh = net.init_params(0)?;
        let mismatch = |msg: String| Error::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        if fresh.len() != self.params.len() {
            return Err(mismatch(format!(
                "{} parameters stored, configuration needs {}",
                self.params.len(),
                fresh.len()
            )));
        }
        for ((a, ta), (b, tb)) in fresh.iter().zip(self.params.iter()) {
            if a != b || ta.shape() != tb.shape() {
                return Err(mismatch(format!(
                    "expected `{a}` {:?}, found `{b}` {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(net)
    }
}

fn read_string(r: &mut Cursor<&[u8]>, len: usize) -> std::io::Result<String> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated file"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "invalid utf-8"))
}
