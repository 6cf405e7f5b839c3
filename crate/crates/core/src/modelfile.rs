//! Binary model files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "KJT1"
//! version
//! input_dim hidden_dim num_classes stacks
//! n_classes, then per class: u8 name length, ASCII name
//! n_chars, then one u32 code point per vocabulary entry
//! payload: every tensor as f32 LE, canonical tensor order
//! CRC-32 of the payload bytes
//! ```
//!
//! The vocabulary and class table travel with the weights so tagging needs no
//! access to the training corpus.

use crate::corpus::{CharVocab, LabelClass};
use crate::network::{tensor_shapes, ModelDims, ModelParams};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"KJT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model file version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("model file truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("payload checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("class table does not match this build: {0:?}")]
    ClassTable(Vec<String>),
    #[error("invalid code point {0:#x} in vocabulary")]
    InvalidCodePoint(u32),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A model plus everything needed to run it on raw text.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams,
    pub vocab: CharVocab,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn dim_u32(v: usize, what: &str) -> u32 {
    u32::try_from(v).unwrap_or_else(|_| panic!("{what} {v} does not fit the file format"))
}

pub fn to_bytes(params: &ModelParams, vocab: &CharVocab) -> Vec<u8> {
    let d = &params.dims;
    assert_eq!(vocab.one_hot_dim(), d.input_dim, "vocabulary does not match the model input dimension");
    let mut out = Vec::with_capacity(64 + 4 * params.num_params());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    for (v, what) in [(d.input_dim, "input_dim"), (d.hidden_dim, "hidden_dim"), (d.num_classes, "num_classes"), (d.stacks, "stacks")] {
        put_u32(&mut out, dim_u32(v, what));
    }
    let names = LabelClass::names();
    put_u32(&mut out, dim_u32(names.len(), "class count"));
    for name in names {
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
    }
    put_u32(&mut out, dim_u32(vocab.len(), "vocabulary size"));
    for &c in vocab.chars() {
        put_u32(&mut out, c as u32);
    }
    let payload_start = out.len();
    for t in params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ModelFileError> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelFileError::Truncated { what });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ModelFileError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SavedModel, ModelFileError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| ModelFileError::BadMagic)? != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(ModelFileError::UnsupportedVersion { found: version });
    }
    let input_dim = r.u32("header")? as usize;
    let hidden_dim = r.u32("header")? as usize;
    let num_classes = r.u32("header")? as usize;
    let stacks = r.u32("header")? as usize;
    if input_dim == 0 || hidden_dim == 0 || stacks == 0 {
        return Err(ModelFileError::Dimension(format!(
            "header has zero dimension (input {input_dim}, hidden {hidden_dim}, stacks {stacks})"
        )));
    }

    let n_names = r.u32("class table")? as usize;
    let mut names = Vec::with_capacity(n_names.min(256));
    for _ in 0..n_names {
        let len = r.take(1, "class table")?[0] as usize;
        names.push(String::from_utf8_lossy(r.take(len, "class table")?).into_owned());
    }
    let expected: Vec<String> = LabelClass::names().into_iter().map(String::from).collect();
    if names != expected {
        return Err(ModelFileError::ClassTable(names));
    }
    if num_classes != expected.len() {
        return Err(ModelFileError::Dimension(format!(
            "header declares {num_classes} classes, class table has {}",
            expected.len()
        )));
    }

    let n_chars = r.u32("vocabulary")? as usize;
    if n_chars + 1 != input_dim {
        return Err(ModelFileError::Dimension(format!(
            "vocabulary of {n_chars} characters needs input_dim {}, header says {input_dim}",
            n_chars + 1
        )));
    }
    let mut chars = Vec::with_capacity(n_chars);
    for _ in 0..n_chars {
        let cp = r.u32("vocabulary")?;
        chars.push(char::from_u32(cp).ok_or(ModelFileError::InvalidCodePoint(cp))?);
    }
    let vocab = CharVocab::from_chars(chars);
    if vocab.len() != n_chars {
        return Err(ModelFileError::Dimension("vocabulary has duplicate characters".to_string()));
    }

    let rest = &bytes[r.pos..];
    if rest.len() < 4 {
        return Err(ModelFileError::Truncated { what: "checksum" });
    }
    let (payload, tail) = rest.split_at(rest.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(ModelFileError::ChecksumMismatch { stored, computed });
    }

    let dims = ModelDims { input_dim, hidden_dim, num_classes, stacks };
    let floats: usize = tensor_shapes(&dims).iter().map(|(_, r, c)| r * c).sum();
    if payload.len() != 4 * floats {
        return Err(ModelFileError::Dimension(format!(
            "header implies {floats} parameters ({} bytes), payload has {} bytes",
            4 * floats,
            payload.len()
        )));
    }
    let mut params = ModelParams::zeros(dims);
    let mut chunks = payload.chunks_exact(4);
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = f32::from_le_bytes(chunks.next().expect("sized above").try_into().expect("four bytes"));
        }
    }
    Ok(SavedModel { params, vocab })
}

pub fn save_model(path: &Path, params: &ModelParams, vocab: &CharVocab) -> Result<(), ModelFileError> {
    std::fs::write(path, to_bytes(params, vocab))
        .map_err(|source| ModelFileError::Io { path: path.display().to_string(), source })
}

pub fn load_model(path: &Path) -> Result<SavedModel, ModelFileError> {
    let bytes =
        std::fs::read(path).map_err(|source| ModelFileError::Io { path: path.display().to_string(), source })?;
    from_bytes(&bytes)
}
