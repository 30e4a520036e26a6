//! Binary model checkpoints: `ACCAP` magic, version byte, model kind,
//! dimension header, named scalars, training metadata and little-endian f64
//! parameter tensors. Round-trips are bit-exact and dimension mismatches are
//! rejected before any computation.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::policy::{PolicyDims, PolicyNet};
use crate::reward::{RewardDims, RewardModel};
use crate::tensor::Tensor;
use crate::value::{ValueDims, ValueNet};

pub const MAGIC: &[u8; 5] = b"ACCAP";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Policy,
    Value,
    Reward,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Policy => 1,
            ModelKind::Value => 2,
            ModelKind::Reward => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(ModelKind::Policy),
            2 => Ok(ModelKind::Value),
            3 => Ok(ModelKind::Reward),
            other => Err(Error::Checkpoint(format!("unknown model kind tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Policy => "policy",
            ModelKind::Value => "value",
            ModelKind::Reward => "reward",
        }
    }
}

/// Dimension header; fields a given kind does not use are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DimHeader {
    pub vocab: u32,
    pub d_h: u32,
    pub d_e: u32,
    pub d_emb: u32,
    pub feat_dim: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub stage: String,
    pub epoch: u32,
    pub seed: u64,
    pub vocab_fingerprint: u64,
}

/// In-memory form of one serialized model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub dims: DimHeader,
    /// Model scalars that are not tensors (margin, mix weight, head depth).
    pub scalars: Vec<(String, f64)>,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        let bytes = s.as_bytes();
        assert!(bytes.len() <= u8::MAX as usize, "name too long");
        self.u8(bytes.len() as u8);
        self.buf.extend_from_slice(bytes);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u8()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 name".into()))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u8(VERSION);
        w.u8(self.kind.tag());
        w.u32(self.dims.vocab);
        w.u32(self.dims.d_h);
        w.u32(self.dims.d_e);
        w.u32(self.dims.d_emb);
        w.u32(self.dims.feat_dim);
        w.u8(self.scalars.len() as u8);
        for (name, v) in &self.scalars {
            w.str(name);
            w.f64(*v);
        }
        w.str(&self.meta.stage);
        w.u32(self.meta.epoch);
        w.u64(self.meta.seed);
        w.u64(self.meta.vocab_fingerprint);
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.u8(t.shape().len() as u8);
            for d in t.shape() {
                w.u32(*d as u32);
            }
            for v in t.data() {
                w.f64(*v);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(5)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not an ACCAP checkpoint".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let kind = ModelKind::from_tag(r.u8()?)?;
        let dims = DimHeader {
            vocab: r.u32()?,
            d_h: r.u32()?,
            d_e: r.u32()?,
            d_emb: r.u32()?,
            feat_dim: r.u32()?,
        };
        let n_scalars = r.u8()? as usize;
        let mut scalars = Vec::with_capacity(n_scalars);
        for _ in 0..n_scalars {
            let name = r.str()?;
            let v = r.f64()?;
            scalars.push((name, v));
        }
        let meta = CheckpointMeta {
            stage: r.str()?,
            epoch: r.u32()?,
            seed: r.u64()?,
            vocab_fingerprint: r.u64()?,
        };
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = r.str()?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64()?);
            }
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if !r.done() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            kind,
            dims,
            scalars,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Checkpoint(format!("missing scalar {name:?}")))
    }

    fn store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            store.insert(name, t.clone());
        }
        store
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {} checkpoint, found {}",
                kind.name(),
                self.kind.name()
            )));
        }
        Ok(())
    }
}

fn tensors_of(store: &ParamStore) -> Vec<(String, Tensor)> {
    store
        .iter()
        .map(|(name, t)| (name.to_string(), t.clone()))
        .collect()
}

pub fn from_policy(net: &PolicyNet, meta: CheckpointMeta) -> Checkpoint {
    let d = net.dims();
    Checkpoint {
        kind: ModelKind::Policy,
        dims: DimHeader {
            vocab: d.vocab as u32,
            d_h: d.d_h as u32,
            d_e: d.d_e as u32,
            d_emb: 0,
            feat_dim: d.feat_dim as u32,
        },
        scalars: Vec::new(),
        meta,
        tensors: tensors_of(net.store()),
    }
}

pub fn to_policy(ckpt: &Checkpoint) -> Result<PolicyNet> {
    ckpt.expect_kind(ModelKind::Policy)?;
    let dims = PolicyDims {
        vocab: ckpt.dims.vocab as usize,
        d_h: ckpt.dims.d_h as usize,
        d_e: ckpt.dims.d_e as usize,
        feat_dim: ckpt.dims.feat_dim as usize,
    };
    PolicyNet::from_store(dims, ckpt.store())
}

pub fn from_value(net: &ValueNet, meta: CheckpointMeta) -> Checkpoint {
    let d = net.dims();
    Checkpoint {
        kind: ModelKind::Value,
        dims: DimHeader {
            vocab: d.vocab as u32,
            d_h: d.d_h as u32,
            d_e: d.d_e as u32,
            d_emb: 0,
            feat_dim: d.feat_dim as u32,
        },
        scalars: vec![("hidden_layers".into(), d.hidden_layers as f64)],
        meta,
        tensors: tensors_of(net.store()),
    }
}

pub fn to_value(ckpt: &Checkpoint) -> Result<ValueNet> {
    ckpt.expect_kind(ModelKind::Value)?;
    let dims = ValueDims {
        vocab: ckpt.dims.vocab as usize,
        d_h: ckpt.dims.d_h as usize,
        d_e: ckpt.dims.d_e as usize,
        feat_dim: ckpt.dims.feat_dim as usize,
        hidden_layers: ckpt.scalar("hidden_layers")? as usize,
    };
    ValueNet::from_store(dims, ckpt.store())
}

pub fn from_reward(model: &RewardModel, meta: CheckpointMeta) -> Checkpoint {
    let d = model.dims();
    Checkpoint {
        kind: ModelKind::Reward,
        dims: DimHeader {
            vocab: d.vocab as u32,
            d_h: 0,
            d_e: d.d_e as u32,
            d_emb: d.d_emb as u32,
            feat_dim: d.feat_dim as u32,
        },
        scalars: vec![
            ("gamma".into(), model.gamma()),
            ("alpha".into(), model.alpha()),
        ],
        meta,
        tensors: tensors_of(model.store()),
    }
}

pub fn to_reward(ckpt: &Checkpoint) -> Result<RewardModel> {
    ckpt.expect_kind(ModelKind::Reward)?;
    let dims = RewardDims {
        vocab: ckpt.dims.vocab as usize,
        d_emb: ckpt.dims.d_emb as usize,
        d_e: ckpt.dims.d_e as usize,
        feat_dim: ckpt.dims.feat_dim as usize,
    };
    RewardModel::from_store(dims, ckpt.scalar("gamma")?, ckpt.scalar("alpha")?, ckpt.store())
}

/// Human-readable header dump for the `inspect` flag.
pub fn describe(ckpt: &Checkpoint) -> String {
    let mut out = format!(
        "kind={} version={VERSION} vocab={} d_h={} d_e={} d_emb={} feat_dim={}\n",
        ckpt.kind.name(),
        ckpt.dims.vocab,
        ckpt.dims.d_h,
        ckpt.dims.d_e,
        ckpt.dims.d_emb,
        ckpt.dims.feat_dim
    );
    out.push_str(&format!(
        "stage={} epoch={} seed={} vocab_fingerprint={:016x}\n",
        ckpt.meta.stage, ckpt.meta.epoch, ckpt.meta.seed, ckpt.meta.vocab_fingerprint
    ));
    for (name, v) in &ckpt.scalars {
        out.push_str(&format!("scalar {name}={v}\n"));
    }
    for (name, t) in &ckpt.tensors {
        out.push_str(&format!("tensor {name} shape={:?}\n", t.shape()));
    }
    out
}
