//! Training snapshots:
//! `"DLGC" | version u32 | header length u32 | header text | iteration u64 |
//! rng seed [u8; 32] | rng stream u64 | rng word position u128 |
//! tensor count u32 | (name length u32 | name | tensor)*`, little-endian,
//! tensors in the flat binary tensor format with names sorted. The header is
//! the training configuration fingerprint. Optimizer moments are stored as
//! `adam.m.<param>` / `adam.v.<param>`; the update count equals the iteration.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::io::{read_tensor_at, Cursor};
use crate::tensor::{write_tensor, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"DLGC";
const VERSION: u32 = 1;
const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub params: ParamStore<T>,
    pub adam: Adam<T>,
}

fn read_header<R: Read>(cur: &mut Cursor<'_, R>) -> Result<TrainConfig> {
    if cur.bytes(4)? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return cur.fail(format!("unsupported checkpoint version {version}"));
    }
    let hlen = cur.u32()? as usize;
    let at = cur.offset;
    let header = String::from_utf8(cur.bytes(hlen)?).map_err(|_| Error::Parse {
        offset: at,
        msg: "header is not UTF-8".into(),
    })?;
    TrainConfig::parse(&header)
}

/// The training configuration stored in a checkpoint, read without the
/// tensors. Its `precision` tells which scalar type to load with.
pub fn checkpoint_config(path: &Path) -> Result<TrainConfig> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_header(&mut Cursor::new(&mut f, 0))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = self.config.fingerprint();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        let mut all: BTreeMap<String, &Tensor<T>> = BTreeMap::new();
        for (k, t) in self.params.iter() {
            if k.starts_with("adam.") {
                return Err(Error::Usage(format!("parameter name {k:?} collides with optimizer state")));
            }
            all.insert(k.clone(), t);
        }
        for (k, t) in &self.adam.m {
            all.insert(format!("{M_PREFIX}{k}"), t);
        }
        for (k, t) in &self.adam.v {
            all.insert(format!("{V_PREFIX}{k}"), t);
        }
        out.extend_from_slice(&(all.len() as u32).to_le_bytes());
        for (name, t) in all {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write_tensor(&mut out, t)?;
        }
        Ok(out)
    }

    pub fn from_reader<R: Read>(input: &mut R) -> Result<Self> {
        let mut cur = Cursor::new(input, 0);
        let config = read_header(&mut cur)?;
        let iteration = cur.u64()?;
        let seed: [u8; 32] = cur.bytes(32)?.try_into().unwrap();
        let stream = cur.u64()?;
        let word_pos = u128::from_le_bytes(cur.bytes(16)?.try_into().unwrap());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        let count = cur.u32()? as usize;
        let mut params = ParamStore::new();
        let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let at = cur.offset;
            let name = String::from_utf8(cur.bytes(len)?).map_err(|_| Error::Parse {
                offset: at,
                msg: "tensor name is not UTF-8".into(),
            })?;
            let t = read_tensor_at::<T, _>(&mut cur)?;
            if let Some(k) = name.strip_prefix(M_PREFIX) {
                m.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(V_PREFIX) {
                v.insert(k.to_string(), t);
            } else {
                params.insert(name, t);
            }
        }
        for (k, p) in params.iter() {
            for (which, map) in [("m", &m), ("v", &v)] {
                match map.get(k) {
                    Some(t) if t.shape() == p.shape() => {}
                    _ => return cur.fail(format!("missing or misshapen adam.{which} entry for {k:?}")),
                }
            }
        }
        if m.len() != params.len() || v.len() != params.len() {
            return cur.fail("optimizer state names do not match the parameters");
        }
        Ok(Checkpoint {
            config,
            iteration,
            rng,
            params,
            adam: Adam { m, v, t: iteration },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_reader(&mut bytes.as_slice())
    }
}
