//! Checkpoint format: named parameter arrays plus a config echo and schema
//! version; reloads are bit-stable. A checkpoint may optionally carry
//! optimizer state so training can resume exactly.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::layers::ParamStore;
use super::tape::Arr;
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"PMCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct OptState {
    pub step: u64,
    pub m: Vec<Arr>,
    pub v: Vec<Arr>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// "pretrain" or "finetune"; consumers check what they are loading.
    pub stage: String,
    /// JSON echo of the experiment config that produced the parameters.
    pub config_json: String,
    pub params: Vec<(String, Arr)>,
    pub opt: Option<OptState>,
}

fn write_arr(out: &mut Vec<u8>, a: &Arr) {
    out.extend_from_slice(&(a.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(a.ncols() as u32).to_le_bytes());
    for v in a.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn arr(&mut self) -> Result<Arr> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let raw = self.take(8 * rows * cols)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(format!("bad array shape: {e}")))
    }
}

/// Write a checkpoint for the given store.
pub fn save(
    path: &Path,
    stage: &str,
    config_json: &str,
    store: &ParamStore,
    opt: Option<(&super::optim::AdamW, ())>,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(stage.len() as u16).to_le_bytes());
    out.extend_from_slice(stage.as_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_arr(&mut out, value);
    }
    match opt {
        Some((adam, ())) => {
            out.push(1);
            let (step, m, v) = adam.state();
            out.extend_from_slice(&step.to_le_bytes());
            for a in m {
                write_arr(&mut out, a);
            }
            for a in v {
                write_arr(&mut out, a);
            }
        }
        None => out.push(0),
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::SchemaVersion {
            expected: VERSION,
            found: version,
        });
    }
    let stage_len = r.u16()? as usize;
    let stage = String::from_utf8(r.take(stage_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("bad stage string".into()))?;
    let config_len = r.u32()? as usize;
    let config_json = String::from_utf8(r.take(config_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("bad config echo".into()))?;
    let n = r.u32()? as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("bad param name".into()))?;
        params.push((name, r.arr()?));
    }
    let has_opt = r.take(1)?[0];
    let opt = if has_opt == 1 {
        let step = r.u64()?;
        let mut m = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(r.arr()?);
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(r.arr()?);
        }
        Some(OptState { step, m, v })
    } else {
        None
    };
    Ok(Checkpoint {
        stage,
        config_json,
        params,
        opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_bit_stable() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let _ = super::super::layers::Linear::new(&mut store, &mut rng, "m.lin", 7, 5);
        store.add("m.query", super::super::layers::normal_init(&mut rng, 12, 5, 0.02));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, "pretrain", r#"{"d_model":5}"#, &store, None).unwrap();
        let ck = load(&path).unwrap();
        assert_eq!(ck.stage, "pretrain");
        assert_eq!(ck.config_json, r#"{"d_model":5}"#);
        assert_eq!(ck.params.len(), store.len());
        for ((n1, v1), (n2, v2)) in ck.params.iter().zip(store.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(v1, v2.as_ref());
        }
        // A second save of the loaded params is byte-identical.
        let mut store2 = ParamStore::new();
        for (n, v) in &ck.params {
            store2.add(n, v.clone());
        }
        let path2 = dir.path().join("model2.ckpt");
        save(&path2, "pretrain", r#"{"d_model":5}"#, &store2, None).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = ParamStore::new();
        save(&path, "finetune", "{}", &store, None).unwrap();
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() - 1]).unwrap();
        assert!(load(&path).is_err());
    }
}
