//! Binary run-state files: a fixed header followed by named tensor
//! sections. Saving the same state twice produces identical bytes, and a
//! load/save round trip is bit-exact; resumed runs depend on it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::STREAM_COUNT;
use crate::simulators::{CaseId, ParamDef, ParamSpace};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"MAGAN001";
pub const FORMAT_VERSION: u32 = 1;

// Hard ceilings while parsing; anything larger is a corrupt file, not a
// bigger model.
const MAX_NAME: usize = 1 << 12;
const MAX_RANK: usize = 8;
const MAX_NUMEL: usize = 1 << 28;
const MAX_COUNT: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub case: CaseId,
    pub master_seed: u64,
    pub noise_dim: usize,
    pub field_seed: u64,
    pub pretrain_done: u64,
    pub train_done: u64,
    pub space: ParamSpace,
    /// Word positions of the consumer RNG streams, so a resumed run draws
    /// exactly what an uninterrupted one would have.
    pub rng_positions: [u128; STREAM_COUNT],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub tensors: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader { inner: BufReader::new(file) };
        Self::read_from(&mut r)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let h = &self.header;
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&h.case.number().to_le_bytes())?;
        w.write_all(&h.master_seed.to_le_bytes())?;
        w.write_all(&(h.noise_dim as u32).to_le_bytes())?;
        w.write_all(&h.field_seed.to_le_bytes())?;
        w.write_all(&h.pretrain_done.to_le_bytes())?;
        w.write_all(&h.train_done.to_le_bytes())?;
        w.write_all(&(h.space.len() as u32).to_le_bytes())?;
        for def in h.space.defs() {
            write_str(w, &def.name)?;
            w.write_all(&def.lo.to_le_bytes())?;
            w.write_all(&def.hi.to_le_bytes())?;
        }
        for pos in &h.rng_positions {
            w.write_all(&pos.to_le_bytes())?;
        }
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for section in &self.sections {
            write_str(w, &section.name)?;
            w.write_all(&(section.tensors.len() as u32).to_le_bytes())?;
            for t in &section.tensors {
                w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
                for &e in t.shape() {
                    w.write_all(&(e as u64).to_le_bytes())?;
                }
                let mut buf = Vec::with_capacity(t.numel() * 4);
                for &v in t.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut Reader<impl Read>) -> Result<Checkpoint> {
        let mut magic = [0u8; 8];
        r.bytes(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:02x?}")));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let case = CaseId::from_number(r.u32()?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let master_seed = r.u64()?;
        let noise_dim = r.u32()? as usize;
        let field_seed = r.u64()?;
        let pretrain_done = r.u64()?;
        let train_done = r.u64()?;
        let n_params = r.count("parameter")?;
        let mut defs = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = r.string()?;
            let lo = r.f32()?;
            let hi = r.f32()?;
            defs.push(ParamDef { name, lo, hi });
        }
        let space = ParamSpace::new(defs)
            .map_err(|e| Error::Checkpoint(format!("header parameter space: {e}")))?;
        let mut rng_positions = [0u128; STREAM_COUNT];
        for pos in &mut rng_positions {
            *pos = r.u128()?;
        }
        let n_sections = r.count("section")?;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let name = r.string()?;
            let n_tensors = r.count("tensor")?;
            let mut tensors = Vec::with_capacity(n_tensors);
            for _ in 0..n_tensors {
                let rank = r.u32()? as usize;
                if rank > MAX_RANK {
                    return Err(Error::Checkpoint(format!("tensor rank {rank} too large")));
                }
                let mut shape = Vec::with_capacity(rank);
                let mut numel = 1usize;
                for _ in 0..rank {
                    let e = r.u64()? as usize;
                    numel = numel.saturating_mul(e);
                    shape.push(e);
                }
                if numel > MAX_NUMEL {
                    return Err(Error::Checkpoint(format!("tensor with {numel} values")));
                }
                let mut raw = vec![0u8; numel * 4];
                r.bytes(&mut raw)?;
                let data: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                tensors.push(
                    Tensor::from_vec(&shape, data)
                        .map_err(|e| Error::Checkpoint(format!("tensor: {e}")))?,
                );
            }
            sections.push(Section { name, tensors });
        }
        let mut tail = [0u8; 1];
        if r.inner.read(&mut tail).map_err(|e| Error::Checkpoint(format!("read: {e}")))? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last section".into()));
        }
        Ok(Checkpoint {
            header: CheckpointHeader {
                case,
                master_seed,
                noise_dim,
                field_seed,
                pretrain_done,
                train_done,
                space,
                rng_positions,
            },
            sections,
        })
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Reader { inner }
    }

    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn u128(&mut self) -> Result<u128> {
        let mut b = [0u8; 16];
        self.bytes(&mut b)?;
        Ok(u128::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > MAX_COUNT {
            return Err(Error::Checkpoint(format!("{what} count {n} too large")));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > MAX_NAME {
            return Err(Error::Checkpoint(format!("name of {len} bytes")));
        }
        let mut buf = vec![0u8; len];
        self.bytes(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("name not UTF-8: {e}")))
    }
}
