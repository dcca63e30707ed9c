//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "PKDC" | version u32 | kind u8 | n_users u64 | n_items u64 | d u32 | L u32
//! user_emb f32[n_users*d] | item_emb f32[n_items*d] | seed u64 | digest [u8; 32]
//! { tag u8 | payload_len u64 | payload }* | 0xFF
//! ```
//!
//! The closing `0xFF` lets a reader tell a file cut at a block boundary from
//! a complete one.
//!
//! A block payload is `n_mlps u32` followed by, per MLP, `n_layers u32` and
//! per layer `in u32 | out u32 | activation u8 | W f32[in*out] | b f32[out]`.

use std::path::Path;
use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{Matrix, Real};
use crate::projector::{Activation, Dense, ExpertBank, Mlp, ProjectorPair, TemperatureSchedule};

use super::{Backbone, MfModel, ModelKind, NormalizedGraph};

const MAGIC: &[u8; 4] = b"PKDC";
const VERSION: u32 = 1;
const END: u8 = 0xFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BlockTag {
    UserProjector,
    ItemProjector,
    UserSelection,
    ItemSelection,
}

impl BlockTag {
    pub fn tag(self) -> u8 {
        match self {
            BlockTag::UserProjector => 10,
            BlockTag::ItemProjector => 11,
            BlockTag::UserSelection => 12,
            BlockTag::ItemSelection => 13,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            10 => Ok(BlockTag::UserProjector),
            11 => Ok(BlockTag::ItemProjector),
            12 => Ok(BlockTag::UserSelection),
            13 => Ok(BlockTag::ItemSelection),
            t => Err(Error::format(format!("unknown parameter block tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub tag: BlockTag,
    pub mlps: Vec<Mlp<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub layers: usize,
    pub user_emb: Matrix<f32>,
    pub item_emb: Matrix<f32>,
    pub seed: u64,
    pub digest: [u8; 32],
    pub blocks: Vec<ParamBlock>,
}

impl Checkpoint {
    pub fn from_backbone<T: Real>(model: &Backbone<T>, seed: u64, digest: [u8; 32]) -> Self {
        Self {
            kind: model.kind(),
            layers: model.layers(),
            user_emb: model.base().user_emb.cast(),
            item_emb: model.base().item_emb.cast(),
            seed,
            digest,
            blocks: Vec::new(),
        }
    }

    /// Replaces any stored projector blocks with `pair`.
    pub fn with_projectors<T: Real>(mut self, pair: &ProjectorPair<T>) -> Self {
        let cast = |v: &[Mlp<T>]| v.iter().map(Mlp::cast).collect::<Vec<_>>();
        self.blocks = vec![
            ParamBlock {
                tag: BlockTag::UserProjector,
                mlps: cast(&pair.user.experts),
            },
            ParamBlock {
                tag: BlockTag::ItemProjector,
                mlps: cast(&pair.item.experts),
            },
            ParamBlock {
                tag: BlockTag::UserSelection,
                mlps: vec![pair.user.selection.cast()],
            },
            ParamBlock {
                tag: BlockTag::ItemSelection,
                mlps: vec![pair.item.selection.cast()],
            },
        ];
        self
    }

    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn n_users(&self) -> usize {
        self.user_emb.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_emb.rows()
    }

    fn block(&self, tag: BlockTag) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.tag == tag)
    }

    /// Rebuilds the projector banks, if the checkpoint carries them.
    pub fn projectors(&self, schedule: TemperatureSchedule) -> Result<Option<ProjectorPair<f32>>> {
        let bank = |p: BlockTag, s: BlockTag| -> Result<Option<ExpertBank<f32>>> {
            match (self.block(p), self.block(s)) {
                (None, None) => Ok(None),
                (Some(p), Some(s)) if s.mlps.len() == 1 => {
                    ExpertBank::new(p.mlps.clone(), s.mlps[0].clone(), schedule)
                        .map(Some)
                        .map_err(|e| Error::format(format!("projector blocks: {e}")))
                }
                _ => Err(Error::format("incomplete projector blocks")),
            }
        };
        match (
            bank(BlockTag::UserProjector, BlockTag::UserSelection)?,
            bank(BlockTag::ItemProjector, BlockTag::ItemSelection)?,
        ) {
            (Some(user), Some(item)) => Ok(Some(ProjectorPair { user, item })),
            (None, None) => Ok(None),
            _ => Err(Error::format("projector blocks present for only one side")),
        }
    }

    /// Restores the model, checking it against the expected kind and dataset.
    pub fn to_backbone(&self, expected: ModelKind, dataset: &Dataset) -> Result<Backbone<f32>> {
        if self.kind != expected {
            return Err(Error::format(format!(
                "checkpoint holds a {} model, expected {}",
                self.kind.name(),
                expected.name()
            )));
        }
        if self.n_users() != dataset.n_users || self.n_items() != dataset.n_items {
            return Err(Error::format(format!(
                "checkpoint is {}x{} users x items, dataset is {}x{}",
                self.n_users(),
                self.n_items(),
                dataset.n_users,
                dataset.n_items
            )));
        }
        let base = MfModel::new(self.user_emb.clone(), self.item_emb.clone())?;
        match self.kind {
            ModelKind::Mf => Ok(Backbone::mf(base)),
            ModelKind::Gcn => Backbone::gcn(base, self.layers, Arc::new(NormalizedGraph::from_dataset(dataset))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(64 + 4 * (self.user_emb.as_slice().len() + self.item_emb.as_slice().len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.n_users() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_items() as u64).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.layers as u32).to_le_bytes());
        put_f32s(&mut out, self.user_emb.as_slice());
        put_f32s(&mut out, self.item_emb.as_slice());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.digest);
        for block in &self.blocks {
            let mut payload = Vec::new();
            payload.extend_from_slice(&(block.mlps.len() as u32).to_le_bytes());
            for mlp in &block.mlps {
                payload.extend_from_slice(&(mlp.layers.len() as u32).to_le_bytes());
                for layer in &mlp.layers {
                    payload.extend_from_slice(&(layer.input_dim() as u32).to_le_bytes());
                    payload.extend_from_slice(&(layer.output_dim() as u32).to_le_bytes());
                    payload.push(layer.activation.tag());
                    put_f32s(&mut payload, layer.weight.as_slice());
                    put_f32s(&mut payload, layer.bias.as_slice());
                }
            }
            out.push(block.tag.tag());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out.push(END);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("bad magic, not a checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let kind = ModelKind::from_tag(r.u8()?)?;
        let n_users = r.len_u64()?;
        let n_items = r.len_u64()?;
        let d = r.u32()? as usize;
        let layers = r.u32()? as usize;
        if d == 0 {
            return Err(Error::format("embedding dimension is zero"));
        }
        if kind == ModelKind::Mf && layers != 0 {
            return Err(Error::format("MF checkpoint with nonzero layer count"));
        }
        let user_emb = r.matrix(n_users, d)?;
        let item_emb = r.matrix(n_items, d)?;
        let seed = r.u64()?;
        let mut digest = [0u8; 32];
        digest.copy_from_slice(r.take(32)?);

        let mut blocks: Vec<ParamBlock> = Vec::new();
        loop {
            let raw = r.u8()?;
            if raw == END {
                break;
            }
            let tag = BlockTag::from_tag(raw)?;
            if blocks.iter().any(|b| b.tag == tag) {
                return Err(Error::format(format!("duplicate parameter block {tag:?}")));
            }
            let len = r.len_u64()?;
            let mut p = Reader { buf: r.take(len)?, pos: 0 };
            let n_mlps = p.u32()? as usize;
            let mut mlps = Vec::new();
            for _ in 0..n_mlps {
                let n_layers = p.u32()? as usize;
                let mut dense = Vec::new();
                for _ in 0..n_layers {
                    let input = p.u32()? as usize;
                    let output = p.u32()? as usize;
                    let activation = Activation::from_tag(p.u8()?)?;
                    let weight = p.matrix(input, output)?;
                    let bias = p.matrix(1, output)?;
                    dense.push(Dense {
                        weight,
                        bias,
                        activation,
                    });
                }
                mlps.push(Mlp::new(dense).map_err(|e| Error::format(format!("block {tag:?}: {e}")))?);
            }
            if p.pos != p.buf.len() {
                return Err(Error::format(format!("block {tag:?} has trailing bytes")));
            }
            blocks.push(ParamBlock { tag, mlps });
        }

        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after checkpoint end marker"));
        }
        Ok(Self {
            kind,
            layers,
            user_emb,
            item_emb,
            seed,
            digest,
            blocks,
        })
    }
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
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
            .ok_or_else(|| Error::format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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

    fn len_u64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format("length overflows usize"))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix<f32>> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format("matrix size overflows"))?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RngStream, StreamTag};

    fn sample(kind: ModelKind) -> Checkpoint {
        let mut rng = RngStream::new(3, StreamTag::Init);
        let user_emb = Matrix::from_fn(3, 4, |_, _| rng.normal() as f32);
        let item_emb = Matrix::from_fn(5, 4, |_, _| rng.normal() as f32);
        Checkpoint {
            kind,
            layers: if kind == ModelKind::Gcn { 2 } else { 0 },
            user_emb,
            item_emb,
            seed: 42,
            digest: [7; 32],
            blocks: Vec::new(),
        }
    }

    fn with_banks(c: Checkpoint) -> Checkpoint {
        let mut rng = RngStream::new(4, StreamTag::Init);
        let s = TemperatureSchedule::default();
        let pair = ProjectorPair::<f32> {
            user: ExpertBank::init(3, 2, 4, s, &mut rng).unwrap(),
            item: ExpertBank::init(3, 2, 4, s, &mut rng).unwrap(),
        };
        c.with_projectors(&pair)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [ModelKind::Mf, ModelKind::Gcn] {
            let c = with_banks(sample(kind));
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let b = sample(ModelKind::Gcn).to_bytes();
        assert_eq!(&b[..4], b"PKDC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), VERSION);
        assert_eq!(b[8], 1);
        assert_eq!(u64::from_le_bytes(b[9..17].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(b[17..25].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(b[25..29].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(b[29..33].try_into().unwrap()), 2);
        assert_eq!(b.len(), 33 + 4 * (12 + 20) + 8 + 32 + 1);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = with_banks(sample(ModelKind::Mf)).to_bytes();
        for cut in 1..bytes.len() {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - cut]), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn magic_and_version_checked() {
        let mut bytes = sample(ModelKind::Mf).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = sample(ModelKind::Mf).to_bytes();
        bytes[4] = 99;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip_and_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = with_banks(sample(ModelKind::Gcn));
        save_checkpoint(&c, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn projectors_restore() {
        let c = with_banks(sample(ModelKind::Mf));
        let pair = c.projectors(TemperatureSchedule::default()).unwrap().unwrap();
        assert_eq!(pair.user.k(), 3);
        assert_eq!(pair.item.output_dim(), 4);
        assert!(sample(ModelKind::Mf).projectors(TemperatureSchedule::default()).unwrap().is_none());
    }
}
