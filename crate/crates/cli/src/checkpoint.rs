//! Binary checkpoint container: magic `MEMN`, a version word, then
//! length-prefixed named f64 arrays. All integers are little-endian u32;
//! payloads are little-endian f64. Arrays are stored in name order, so
//! save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use memnet_core::memory::MemoryConfig;
use memnet_core::network::{NetConfig, Param, StageNetwork};
use memnet_core::optim::AdamState;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"MEMN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Array {
    pub fn scalar(v: f64) -> Array {
        Array {
            shape: vec![1],
            values: vec![v],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub arrays: BTreeMap<String, Array>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, array) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(array.shape.len() as u32).to_le_bytes());
            for &e in &array.shape {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in &array.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| CliError::Checkpoint("truncated".into()))?;
            let slice = &bytes[*pos..end];
            *pos = end;
            Ok(slice)
        }
        fn take_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
            Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().unwrap()))
        }
        let fail = |msg: &str| CliError::Checkpoint(msg.to_string());
        let mut pos = 0usize;

        if take(bytes, &mut pos, 4)? != MAGIC {
            return Err(fail("bad magic, expected MEMN"));
        }
        let version = take_u32(bytes, &mut pos)?;
        if version != VERSION {
            return Err(CliError::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let mut arrays = BTreeMap::new();
        while pos < bytes.len() {
            let name_len = take_u32(bytes, &mut pos)? as usize;
            let name = String::from_utf8(take(bytes, &mut pos, name_len)?.to_vec())
                .map_err(|_| fail("array name is not UTF-8"))?;
            let rank = take_u32(bytes, &mut pos)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(take_u32(bytes, &mut pos)? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = take(bytes, &mut pos, numel * 8)?;
            let values = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if arrays.insert(name.clone(), Array { shape, values }).is_some() {
                return Err(CliError::Checkpoint(format!("duplicate array {name:?}")));
            }
        }
        Ok(Checkpoint { arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let array = self
            .arrays
            .get(name)
            .ok_or_else(|| CliError::Checkpoint(format!("missing array {name:?}")))?;
        if array.values.len() != 1 {
            return Err(CliError::Checkpoint(format!("{name:?} is not a scalar")));
        }
        Ok(array.values[0])
    }
}

/// Everything needed to resume or evaluate: parameters, optimizer moments,
/// the iteration counter, the training seed and the network configuration.
pub struct TrainerState {
    pub net: StageNetwork,
    pub opt: BTreeMap<String, AdamState>,
    pub iteration: u64,
    pub seed: u64,
}

pub fn snapshot(state: &TrainerState) -> Checkpoint {
    let mut ck = Checkpoint::default();
    for (name, param) in &state.net.params {
        ck.arrays.insert(
            format!("param.{name}"),
            Array {
                shape: param.shape.clone(),
                values: param.values.clone(),
            },
        );
    }
    for (name, adam) in &state.opt {
        let shape = vec![adam.m.len()];
        ck.arrays.insert(
            format!("opt.m.{name}"),
            Array {
                shape: shape.clone(),
                values: adam.m.clone(),
            },
        );
        ck.arrays.insert(
            format!("opt.v.{name}"),
            Array {
                shape,
                values: adam.v.clone(),
            },
        );
        ck.arrays
            .insert(format!("opt.t.{name}"), Array::scalar(adam.t as f64));
    }
    ck.arrays
        .insert("meta.iteration".into(), Array::scalar(state.iteration as f64));
    ck.arrays
        .insert("meta.seed".into(), Array::scalar(state.seed as f64));
    let cfg = &state.net.config;
    let scalars = [
        ("cfg.base_channels", cfg.base_channels as f64),
        ("cfg.depth", cfg.depth as f64),
        ("cfg.memory_enabled", cfg.memory_enabled as u8 as f64),
        ("cfg.parts", cfg.memory.parts as f64),
        ("cfg.instances", cfg.memory.instances as f64),
        ("cfg.semantics", cfg.memory.semantics as f64),
        ("cfg.classes", cfg.memory.classes as f64),
        ("cfg.channels", cfg.memory.channels as f64),
        ("cfg.banks", cfg.memory.banks as f64),
        ("cfg.alpha", cfg.memory.alpha),
    ];
    for (name, v) in scalars {
        ck.arrays.insert(name.into(), Array::scalar(v));
    }
    ck
}

pub fn restore(ck: &Checkpoint) -> Result<TrainerState> {
    let n = |name: &str| -> Result<usize> { Ok(ck.scalar(name)? as usize) };
    let config = NetConfig {
        base_channels: n("cfg.base_channels")?,
        depth: n("cfg.depth")?,
        memory_enabled: ck.scalar("cfg.memory_enabled")? != 0.0,
        memory: MemoryConfig {
            parts: n("cfg.parts")?,
            instances: n("cfg.instances")?,
            semantics: n("cfg.semantics")?,
            classes: n("cfg.classes")?,
            channels: n("cfg.channels")?,
            banks: n("cfg.banks")?,
            alpha: ck.scalar("cfg.alpha")?,
        },
    };
    let seed = ck.scalar("meta.seed")? as u64;
    let iteration = ck.scalar("meta.iteration")? as u64;
    let mut net = StageNetwork::new(config, seed).map_err(CliError::Core)?;

    for (name, param) in net.params.iter_mut() {
        let key = format!("param.{name}");
        let stored = ck
            .arrays
            .get(&key)
            .ok_or_else(|| CliError::Checkpoint(format!("missing parameter {name:?}")))?;
        if stored.shape != param.shape {
            return Err(CliError::Checkpoint(format!(
                "parameter {name:?} has shape {:?}, expected {:?}",
                stored.shape, param.shape
            )));
        }
        *param = Param {
            shape: stored.shape.clone(),
            values: stored.values.clone(),
        };
    }

    let mut opt = BTreeMap::new();
    for name in net.params.keys() {
        let (m_key, v_key, t_key) = (
            format!("opt.m.{name}"),
            format!("opt.v.{name}"),
            format!("opt.t.{name}"),
        );
        if let (Some(m), Some(v)) = (ck.arrays.get(&m_key), ck.arrays.get(&v_key)) {
            opt.insert(
                name.clone(),
                AdamState {
                    m: m.values.clone(),
                    v: v.values.clone(),
                    t: ck.scalar(&t_key)? as u64,
                },
            );
        }
    }
    Ok(TrainerState {
        net,
        opt,
        iteration,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use memnet_core::Graph;
    use tempfile::tempdir;

    fn tiny_state() -> TrainerState {
        let net = StageNetwork::new(
            NetConfig {
                base_channels: 4,
                depth: 1,
                memory: MemoryConfig {
                    channels: 4,
                    ..MemoryConfig::default()
                },
                memory_enabled: true,
            },
            11,
        )
        .unwrap();
        let mut opt = BTreeMap::new();
        for (name, p) in &net.params {
            let mut st = AdamState::new(p.values.len());
            st.t = 3;
            for (i, m) in st.m.iter_mut().enumerate() {
                *m = i as f64 * 0.25;
            }
            opt.insert(name.clone(), st);
        }
        TrainerState {
            net,
            opt,
            iteration: 42,
            seed: 11,
        }
    }

    #[test]
    fn byte_identical_roundtrip() {
        let ck = snapshot(&tiny_state());
        let bytes = ck.to_bytes();
        let reloaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(bytes, reloaded.to_bytes());
        assert_eq!(ck, reloaded);
    }

    #[test]
    fn restore_reproduces_forward_outputs_bit_exactly() {
        let dir = tempdir().unwrap();
        let state = tiny_state();
        let path = dir.path().join("net.ckpt");
        snapshot(&state).save(&path).unwrap();
        let restored = restore(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(restored.iteration, 42);
        assert_eq!(restored.opt.get("recon.head.w").unwrap().t, 3);

        let img = memnet_core::Tensor::from_vec(
            &[3, 8, 8],
            (0..192).map(|i| (i % 7) as f64 / 7.0).collect(),
        );
        let run = |net: &StageNetwork| {
            let g = Graph::new();
            let bound = net.bind(&g);
            let out = net.forward(&bound, &img).unwrap();
            out.estimates[2].values().to_vec()
        };
        assert_eq!(run(&state.net), run(&restored.net));
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(Checkpoint::from_bytes(b"NOPE\x01\x00\x00\x00").is_err());
        let mut bytes = Checkpoint::default().to_bytes();
        bytes[4] = 9;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn rejects_truncation() {
        let bytes = snapshot(&tiny_state()).to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn restore_rejects_shape_mismatch() {
        let mut ck = snapshot(&tiny_state());
        ck.arrays.insert(
            "param.recon.head.w".into(),
            Array {
                shape: vec![2, 2],
                values: vec![0.0; 4],
            },
        );
        let Err(err) = restore(&ck).map(|_| ()) else {
            panic!("restore accepted a mismatched shape");
        };
        assert!(err.to_string().contains("shape"), "{err}");
    }
}
