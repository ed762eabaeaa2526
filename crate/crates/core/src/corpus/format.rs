//! Binary embedding corpus.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! header
//!   magic          8 bytes  "DDRCORP\0"
//!   version        u32      1
//!   endian marker  u32      0x01020304
//!   model_tag      u32 length + UTF-8
//!   tokenizer_tag  u32 length + UTF-8
//!   pre_dim (m)    u32
//!   post_dim (n)   u32
//!   normalized     u8       0 or 1
//!   record count   u64
//! record (repeated)
//!   block length   u64      bytes that follow in this record
//!   text_id        u32 length + UTF-8
//!   text sha256    32 bytes
//!   has variant    u8       0 or 1
//!     depth        u8       (only if has variant)
//!     kind         u8       0 synonym, 1 random
//!     positions    u32 count + u32 each
//!   token_count    u32
//!   pre            f32 × token_count × m
//!   post           f32 × token_count × n
//!   eos            f32 × n
//! ```
//!
//! Every record in a file shares the header's model, tokenizer, dimensions
//! and normalization flag. Floats are stored bit-for-bit.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::ddr::{EmbeddingPair, ScoreError};
use crate::metric::{EmbeddingVector, TokenEmbeddingSequence};
use crate::perturbation::Kind;

pub const MAGIC: &[u8; 8] = b"DDRCORP\0";
pub const FORMAT_VERSION: u32 = 1;
pub const ENDIAN_MARKER: u32 = 0x0102_0304;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("not a corpus file (bad magic)")]
    BadMagic,
    #[error("unsupported corpus version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("endianness marker {0:#010x} does not match")]
    BadEndianMarker(u32),
    #[error("corrupt corpus: {0}")]
    Corrupt(String),
    #[error("invalid record {text_id:?}: {reason}")]
    InvalidRecord { text_id: String, reason: String },
    #[error("records disagree on {field}: {first:?} vs {other:?}")]
    Heterogeneous {
        field: &'static str,
        first: String,
        other: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantMeta {
    pub depth: u8,
    pub kind: Kind,
    pub replaced_positions: Vec<usize>,
}

/// Embeddings of one text as exported by a provider.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub text_id: String,
    pub text_sha256: [u8; 32],
    pub variant: Option<VariantMeta>,
    pub token_count: usize,
    pub pre_dim: usize,
    pub post_dim: usize,
    /// Row-major `token_count × pre_dim`.
    pub pre: Vec<f32>,
    /// Row-major `token_count × post_dim`.
    pub post: Vec<f32>,
    pub eos: Vec<f32>,
    pub model_tag: String,
    pub tokenizer_tag: String,
    pub normalized: bool,
}

impl CorpusRecord {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: String| CorpusError::InvalidRecord {
            text_id: self.text_id.clone(),
            reason,
        };
        if self.model_tag.is_empty() || self.tokenizer_tag.is_empty() {
            return Err(fail("model_tag and tokenizer_tag must be non-empty".into()));
        }
        if self.token_count == 0 || self.pre_dim == 0 || self.post_dim == 0 {
            return Err(fail(format!(
                "token_count {}, pre_dim {}, post_dim {} must all be positive",
                self.token_count, self.pre_dim, self.post_dim
            )));
        }
        if self.pre.len() != self.token_count * self.pre_dim {
            return Err(fail(format!(
                "pre holds {} values, expected {} × {}",
                self.pre.len(),
                self.token_count,
                self.pre_dim
            )));
        }
        if self.post.len() != self.token_count * self.post_dim {
            return Err(fail(format!(
                "post holds {} values, expected {} × {}",
                self.post.len(),
                self.token_count,
                self.post_dim
            )));
        }
        if self.eos.len() != self.post_dim {
            return Err(fail(format!(
                "eos holds {} values, expected {}",
                self.eos.len(),
                self.post_dim
            )));
        }
        if !self
            .pre
            .iter()
            .chain(&self.post)
            .chain(&self.eos)
            .all(|x| x.is_finite())
        {
            return Err(fail("non-finite embedding value".into()));
        }
        if let Some(v) = &self.variant {
            if !(1..=3).contains(&v.depth) || v.replaced_positions.len() != usize::from(v.depth) {
                return Err(fail(format!(
                    "variant depth {} with {} replaced positions",
                    v.depth,
                    v.replaced_positions.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_pair(&self) -> Result<EmbeddingPair<f32>, ScoreError> {
        let pre = TokenEmbeddingSequence::from_rows(&self.pre, self.pre_dim)?;
        let post = TokenEmbeddingSequence::from_rows(&self.post, self.post_dim)?;
        let eos = EmbeddingVector::new(self.eos.clone())?;
        EmbeddingPair::new(self.text_id.clone(), pre, post, eos, self.model_tag.clone())
    }
}

/// Header fields shared by every record of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusHeader {
    pub model_tag: String,
    pub tokenizer_tag: String,
    pub pre_dim: usize,
    pub post_dim: usize,
    pub normalized: bool,
    pub record_count: u64,
}

fn header_for(records: &[CorpusRecord]) -> Result<CorpusHeader, CorpusError> {
    let Some(first) = records.first() else {
        return Ok(CorpusHeader::default());
    };
    for r in records {
        r.validate()?;
        let mismatch = |field, a: String, b: String| CorpusError::Heterogeneous {
            field,
            first: a,
            other: b,
        };
        if r.model_tag != first.model_tag {
            return Err(mismatch(
                "model_tag",
                first.model_tag.clone(),
                r.model_tag.clone(),
            ));
        }
        if r.tokenizer_tag != first.tokenizer_tag {
            return Err(mismatch(
                "tokenizer_tag",
                first.tokenizer_tag.clone(),
                r.tokenizer_tag.clone(),
            ));
        }
        if (r.pre_dim, r.post_dim) != (first.pre_dim, first.post_dim) {
            return Err(mismatch(
                "dimensions",
                format!("{}x{}", first.pre_dim, first.post_dim),
                format!("{}x{}", r.pre_dim, r.post_dim),
            ));
        }
        if r.normalized != first.normalized {
            return Err(mismatch(
                "normalized",
                first.normalized.to_string(),
                r.normalized.to_string(),
            ));
        }
    }
    Ok(CorpusHeader {
        model_tag: first.model_tag.clone(),
        tokenizer_tag: first.tokenizer_tag.clone(),
        pre_dim: first.pre_dim,
        post_dim: first.post_dim,
        normalized: first.normalized,
        record_count: records.len() as u64,
    })
}

fn to_u32(value: usize, what: &str) -> Result<u32, CorpusError> {
    u32::try_from(value).map_err(|_| CorpusError::Corrupt(format!("{what} {value} exceeds u32")))
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<(), CorpusError> {
    buf.extend_from_slice(&to_u32(s.len(), "string length")?.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

/// Serializes `records` into `out`. Fails without writing anything if the
/// records violate their invariants or disagree on header fields.
pub fn write_corpus_to<W: Write>(out: W, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    let header = header_for(records)?;
    let mut out = BufWriter::new(out);
    let mut head = Vec::new();
    head.extend_from_slice(MAGIC);
    head.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    head.extend_from_slice(&ENDIAN_MARKER.to_le_bytes());
    put_str(&mut head, &header.model_tag)?;
    put_str(&mut head, &header.tokenizer_tag)?;
    head.extend_from_slice(&to_u32(header.pre_dim, "pre_dim")?.to_le_bytes());
    head.extend_from_slice(&to_u32(header.post_dim, "post_dim")?.to_le_bytes());
    head.push(u8::from(header.normalized));
    head.extend_from_slice(&header.record_count.to_le_bytes());
    out.write_all(&head)?;

    let mut block = Vec::new();
    for r in records {
        block.clear();
        put_str(&mut block, &r.text_id)?;
        block.extend_from_slice(&r.text_sha256);
        match &r.variant {
            None => block.push(0),
            Some(v) => {
                block.push(1);
                block.push(v.depth);
                block.push(match v.kind {
                    Kind::Synonym => 0,
                    Kind::Random => 1,
                });
                block.extend_from_slice(
                    &to_u32(v.replaced_positions.len(), "position count")?.to_le_bytes(),
                );
                for &p in &v.replaced_positions {
                    block.extend_from_slice(&to_u32(p, "position")?.to_le_bytes());
                }
            }
        }
        block.extend_from_slice(&to_u32(r.token_count, "token_count")?.to_le_bytes());
        put_f32s(&mut block, &r.pre);
        put_f32s(&mut block, &r.post);
        put_f32s(&mut block, &r.eos);
        out.write_all(&(block.len() as u64).to_le_bytes())?;
        out.write_all(&block)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    // Validate before truncating an existing file.
    header_for(records)?;
    write_corpus_to(std::fs::File::create(path)?, records)
}

/// Cursor over one record block; every read is bounds-checked.
struct Block<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Block<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CorpusError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                CorpusError::Corrupt(format!("record block truncated at byte {}", self.at))
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CorpusError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CorpusError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CorpusError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CorpusError::Corrupt("string is not UTF-8".into()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, CorpusError> {
        let bytes = self.take(
            count
                .checked_mul(4)
                .ok_or_else(|| CorpusError::Corrupt("array size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

fn read_exact_or_corrupt<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    what: &str,
) -> Result<(), CorpusError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => {
            CorpusError::Corrupt(format!("unexpected end of file in {what}"))
        }
        _ => CorpusError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, CorpusError> {
    let mut b = [0u8; 4];
    read_exact_or_corrupt(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String, CorpusError> {
    let len = read_u32(r, what)? as usize;
    if len > 1 << 20 {
        return Err(CorpusError::Corrupt(format!(
            "{what} length {len} is implausible"
        )));
    }
    let mut b = vec![0u8; len];
    read_exact_or_corrupt(r, &mut b, what)?;
    String::from_utf8(b).map_err(|_| CorpusError::Corrupt(format!("{what} is not UTF-8")))
}

pub fn read_corpus_from<R: Read>(
    input: R,
) -> Result<(CorpusHeader, Vec<CorpusRecord>), CorpusError> {
    let mut r = BufReader::new(input);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CorpusError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CorpusError::BadMagic);
    }
    let version = read_u32(&mut r, "version")?;
    if version != FORMAT_VERSION {
        return Err(CorpusError::VersionMismatch { found: version });
    }
    let marker = read_u32(&mut r, "endian marker")?;
    if marker != ENDIAN_MARKER {
        return Err(CorpusError::BadEndianMarker(marker));
    }
    let model_tag = read_string(&mut r, "model_tag")?;
    let tokenizer_tag = read_string(&mut r, "tokenizer_tag")?;
    let pre_dim = read_u32(&mut r, "pre_dim")? as usize;
    let post_dim = read_u32(&mut r, "post_dim")? as usize;
    let mut flag = [0u8; 1];
    read_exact_or_corrupt(&mut r, &mut flag, "normalized flag")?;
    let normalized = match flag[0] {
        0 => false,
        1 => true,
        other => return Err(CorpusError::Corrupt(format!("normalized flag {other}"))),
    };
    let mut count = [0u8; 8];
    read_exact_or_corrupt(&mut r, &mut count, "record count")?;
    let record_count = u64::from_le_bytes(count);
    let header = CorpusHeader {
        model_tag,
        tokenizer_tag,
        pre_dim,
        post_dim,
        normalized,
        record_count,
    };

    let mut records = Vec::new();
    let mut len_buf = [0u8; 8];
    let mut block = Vec::new();
    loop {
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = usize::try_from(u64::from_le_bytes(len_buf))
            .map_err(|_| CorpusError::Corrupt("record block too large".into()))?;
        block.resize(len, 0);
        read_exact_or_corrupt(&mut r, &mut block, "record block")?;
        records.push(parse_record(&header, &block)?);
    }
    if records.len() as u64 != header.record_count {
        return Err(CorpusError::Corrupt(format!(
            "header declares {} records, file holds {}",
            header.record_count,
            records.len()
        )));
    }
    Ok((header, records))
}

fn parse_record(header: &CorpusHeader, bytes: &[u8]) -> Result<CorpusRecord, CorpusError> {
    let mut b = Block { bytes, at: 0 };
    let text_id = b.string()?;
    let text_sha256: [u8; 32] = b.take(32)?.try_into().unwrap();
    let variant = match b.u8()? {
        0 => None,
        1 => {
            let depth = b.u8()?;
            let kind = match b.u8()? {
                0 => Kind::Synonym,
                1 => Kind::Random,
                other => return Err(CorpusError::Corrupt(format!("variant kind {other}"))),
            };
            let n = b.u32()? as usize;
            let replaced_positions = (0..n)
                .map(|_| b.u32().map(|p| p as usize))
                .collect::<Result<_, _>>()?;
            Some(VariantMeta {
                depth,
                kind,
                replaced_positions,
            })
        }
        other => return Err(CorpusError::Corrupt(format!("variant flag {other}"))),
    };
    let token_count = b.u32()? as usize;
    let pre = b.f32s(token_count * header.pre_dim)?;
    let post = b.f32s(token_count * header.post_dim)?;
    let eos = b.f32s(header.post_dim)?;
    if b.at != bytes.len() {
        return Err(CorpusError::Corrupt(format!(
            "record {text_id:?} has {} trailing bytes; shapes do not match the header",
            bytes.len() - b.at
        )));
    }
    let record = CorpusRecord {
        text_id,
        text_sha256,
        variant,
        token_count,
        pre_dim: header.pre_dim,
        post_dim: header.post_dim,
        pre,
        post,
        eos,
        model_tag: header.model_tag.clone(),
        tokenizer_tag: header.tokenizer_tag.clone(),
        normalized: header.normalized,
    };
    record.validate()?;
    Ok(record)
}

pub fn read_corpus(path: &Path) -> Result<(CorpusHeader, Vec<CorpusRecord>), CorpusError> {
    read_corpus_from(std::fs::File::open(path)?)
}
