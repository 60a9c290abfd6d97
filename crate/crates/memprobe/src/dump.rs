//! `.memv` activation dumps.
//!
//! Layout:
//!
//! ```text
//! magic      6 bytes   "MEMV1\0"
//! header_len u32 LE
//! header     header_len bytes of UTF-8 JSON (meta + tensor directory)
//! payload    raw little-endian f32 tensors at the directory's byte offsets
//! ```
//!
//! Byte offsets are absolute file positions. Tensor names follow
//! `img/<image_id>/layer<k>/(cls|patches|attn_cls)`, plus an optional
//! `img/<image_id>/pooled` for encoders with a pooling head.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use memprobe_core::features::{TensorKind, TensorSource};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"MEMV1\0";
pub const DTYPE_F32LE: &str = "f32le";
/// How attention rows were reduced before storage.
pub const ATTENTION_HEAD_MEAN: &str = "head_mean_cls_row";

const PREAMBLE: usize = MAGIC.len() + 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub model_name: String,
    /// Transformer blocks; hidden states exist for layers `0..=num_layers`.
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_patch_tokens: usize,
    /// False when the `cls` slot holds the first patch token instead.
    pub has_cls: bool,
    #[serde(default = "default_attention")]
    pub attention: String,
}

fn default_attention() -> String {
    ATTENTION_HEAD_MEAN.into()
}

impl DumpMeta {
    pub fn new(model_name: impl Into<String>, num_layers: usize, hidden_dim: usize, num_patch_tokens: usize) -> Self {
        Self {
            model_name: model_name.into(),
            num_layers,
            hidden_dim,
            num_patch_tokens,
            has_cls: true,
            attention: default_attention(),
        }
    }

    fn expected_shape(&self, name: &TensorName) -> Vec<usize> {
        match name.slot {
            Slot::Layer(_, TensorKind::Cls) | Slot::Pooled => vec![self.hidden_dim],
            Slot::Layer(_, TensorKind::Patches) => vec![self.num_patch_tokens, self.hidden_dim],
            Slot::Layer(_, TensorKind::AttnCls) => vec![self.num_patch_tokens],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub dtype: String,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        4 * self.numel() as u64
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: DumpMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Layer(usize, TensorKind),
    Pooled,
}

/// Parsed tensor name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorName {
    pub image_id: String,
    slot: Slot,
}

pub fn valid_image_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

impl TensorName {
    pub fn layer(image_id: &str, layer: usize, kind: TensorKind) -> String {
        format!("img/{image_id}/layer{layer}/{}", kind.name())
    }

    pub fn pooled(image_id: &str) -> String {
        format!("img/{image_id}/pooled")
    }

    /// Parses and checks the grammar, including `layer <= num_layers`.
    pub fn parse(name: &str, num_layers: usize) -> Result<Self> {
        let bad = || Error::BadTensorName(name.into());
        let rest = name.strip_prefix("img/").ok_or_else(bad)?;
        let mut parts = rest.split('/');
        let image_id = parts.next().filter(|id| valid_image_id(id)).ok_or_else(bad)?;
        let slot = match (parts.next(), parts.next(), parts.next()) {
            (Some("pooled"), None, None) => Slot::Pooled,
            (Some(layer), Some(kind), None) => {
                let digits = layer.strip_prefix("layer").ok_or_else(bad)?;
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad());
                }
                let k: usize = digits.parse().map_err(|_| bad())?;
                if k > num_layers {
                    return Err(bad());
                }
                let kind = match kind {
                    "cls" => TensorKind::Cls,
                    "patches" => TensorKind::Patches,
                    "attn_cls" => TensorKind::AttnCls,
                    _ => return Err(bad()),
                };
                Slot::Layer(k, kind)
            }
            _ => return Err(bad()),
        };
        Ok(Self {
            image_id: image_id.into(),
            slot,
        })
    }
}

/// Per-layer tensors of one image; index = layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors {
    pub cls: Vec<f32>,
    /// Row-major `[num_patch_tokens, hidden_dim]`.
    pub patches: Vec<f32>,
    /// Absent at layer 0.
    pub attn_cls: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensors {
    pub image_id: String,
    pub layers: Vec<LayerTensors>,
    pub pooled: Option<Vec<f32>>,
}

/// A named tensor ready to be written.
#[derive(Debug, Clone, Copy)]
pub struct RawTensor<'a> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub data: &'a [f32],
}

fn serialize_header(meta: &DumpMeta, tensors: &[RawTensor<'_>], payload_start: u64) -> Result<(Vec<u8>, Vec<TensorEntry>)> {
    let mut offset = payload_start;
    let entries: Vec<TensorEntry> = tensors
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.into(),
                shape: t.shape.to_vec(),
                byte_offset: offset,
                dtype: DTYPE_F32LE.into(),
            };
            offset += e.byte_len();
            e
        })
        .collect();
    let header = Header {
        meta: meta.clone(),
        tensors: entries.clone(),
    };
    let bytes = serde_json::to_vec(&header).map_err(|e| Error::BadHeader(e.to_string()))?;
    Ok((bytes, entries))
}

/// Writes arbitrary named tensors, validating names, shapes and uniqueness.
pub fn write_tensors(path: &Path, meta: &DumpMeta, tensors: &[RawTensor<'_>]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for t in tensors {
        let name = TensorName::parse(t.name, meta.num_layers)?;
        if !seen.insert(t.name) {
            return Err(Error::DuplicateTensor(t.name.into()));
        }
        let expected = meta.expected_shape(&name);
        if t.shape != expected.as_slice() || t.data.len() != expected.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                name: t.name.into(),
                expected,
                actual: if t.shape.iter().product::<usize>() == t.data.len() {
                    t.shape.to_vec()
                } else {
                    vec![t.data.len()]
                },
            });
        }
    }

    // offsets depend on the header length, so grow a padded length until the
    // serialised header fits
    let (first, _) = serialize_header(meta, tensors, PREAMBLE as u64)?;
    let mut reserved = first.len().next_multiple_of(8);
    let (mut header, _) = loop {
        let (bytes, entries) = serialize_header(meta, tensors, (PREAMBLE + reserved) as u64)?;
        if bytes.len() <= reserved {
            break (bytes, entries);
        }
        reserved = bytes.len().next_multiple_of(8);
    };
    header.resize(reserved, b' ');
    let header_len = u32::try_from(header.len()).map_err(|_| Error::BadHeader("header exceeds 4 GiB".into()))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&header_len.to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for t in tensors {
        for v in t.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Writes a dump of complete per-image layer stacks.
pub fn write_dump(path: &Path, meta: &DumpMeta, records: &[ImageTensors]) -> Result<()> {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut data: Vec<&[f32]> = Vec::new();
    let patch_shape = vec![meta.num_patch_tokens, meta.hidden_dim];
    for rec in records {
        if rec.layers.len() != meta.num_layers + 1 {
            return Err(Error::ShapeMismatch {
                name: format!("img/{}", rec.image_id),
                expected: vec![meta.num_layers + 1],
                actual: vec![rec.layers.len()],
            });
        }
        for (k, layer) in rec.layers.iter().enumerate() {
            names.push(TensorName::layer(&rec.image_id, k, TensorKind::Cls));
            shapes.push(vec![layer.cls.len()]);
            data.push(&layer.cls);
            names.push(TensorName::layer(&rec.image_id, k, TensorKind::Patches));
            shapes.push(if layer.patches.len() == meta.num_patch_tokens * meta.hidden_dim {
                patch_shape.clone()
            } else {
                vec![layer.patches.len()]
            });
            data.push(&layer.patches);
            match (k, &layer.attn_cls) {
                (0, None) => {}
                (0, Some(_)) => {
                    return Err(Error::ShapeMismatch {
                        name: TensorName::layer(&rec.image_id, 0, TensorKind::AttnCls),
                        expected: vec![],
                        actual: vec![meta.num_patch_tokens],
                    })
                }
                (_, Some(a)) => {
                    names.push(TensorName::layer(&rec.image_id, k, TensorKind::AttnCls));
                    shapes.push(vec![a.len()]);
                    data.push(a);
                }
                (_, None) => return Err(Error::NoSuchTensor(TensorName::layer(&rec.image_id, k, TensorKind::AttnCls))),
            }
        }
        if let Some(p) = &rec.pooled {
            names.push(TensorName::pooled(&rec.image_id));
            shapes.push(vec![p.len()]);
            data.push(p);
        }
    }
    let tensors: Vec<RawTensor<'_>> = names
        .iter()
        .zip(&shapes)
        .zip(&data)
        .map(|((name, shape), data)| RawTensor { name, shape, data })
        .collect();
    write_tensors(path, meta, &tensors)
}

/// A tensor read back from a dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorView {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Read access to a dump. Only the header is read on open; tensors are read
/// on demand with positioned reads, so one reader can serve many threads.
#[derive(Debug)]
pub struct DumpReader {
    path: PathBuf,
    file: File,
    meta: DumpMeta,
    entries: Vec<TensorEntry>,
    index: HashMap<String, usize>,
    image_ids: Vec<String>,
}

impl DumpReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();

        let mut preamble = [0u8; PREAMBLE];
        read_prefix(&mut file, &mut preamble).map_err(|e| Error::io(path, e))?;
        let got = preamble.len().min(file_len as usize);
        if got < MAGIC.len() || &preamble[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic {
                found: preamble[..got.min(MAGIC.len())].to_vec(),
                expected: MAGIC,
            });
        }
        if file_len < PREAMBLE as u64 {
            return Err(Error::Truncated("file ends inside the preamble".into()));
        }
        let header_len = u32::from_le_bytes(preamble[MAGIC.len()..].try_into().unwrap()) as u64;
        let payload_start = PREAMBLE as u64 + header_len;
        if payload_start > file_len {
            return Err(Error::Truncated(format!(
                "header needs {header_len} bytes, only {} available",
                file_len - PREAMBLE as u64
            )));
        }
        let mut header = vec![0u8; header_len as usize];
        file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| Error::BadHeader(e.to_string()))?;
        let Header { meta, tensors: entries } = header;

        let mut index = HashMap::with_capacity(entries.len());
        let mut image_ids = Vec::new();
        let mut seen_ids = std::collections::HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.dtype != DTYPE_F32LE {
                return Err(Error::UnknownDtype {
                    name: e.name.clone(),
                    dtype: e.dtype.clone(),
                });
            }
            let name = TensorName::parse(&e.name, meta.num_layers)?;
            let expected = meta.expected_shape(&name);
            if e.shape != expected {
                return Err(Error::ShapeMismatch {
                    name: e.name.clone(),
                    expected,
                    actual: e.shape.clone(),
                });
            }
            if index.insert(e.name.clone(), i).is_some() {
                return Err(Error::DuplicateTensor(e.name.clone()));
            }
            let end = e.byte_offset.checked_add(e.byte_len());
            if end.map_or(true, |end| end > file_len) {
                return Err(Error::Truncated(format!(
                    "tensor `{}` at offset {} (+{} bytes) runs past end of file ({file_len} bytes)",
                    e.name,
                    e.byte_offset,
                    e.byte_len()
                )));
            }
            if e.byte_offset < payload_start && e.byte_len() > 0 {
                return Err(Error::Overlap(e.name.clone(), "<header>".into()));
            }
            if seen_ids.insert(name.image_id.clone()) {
                image_ids.push(name.image_id);
            }
        }

        let mut by_offset: Vec<&TensorEntry> = entries.iter().filter(|e| e.byte_len() > 0).collect();
        by_offset.sort_by_key(|e| e.byte_offset);
        for w in by_offset.windows(2) {
            if w[0].byte_offset + w[0].byte_len() > w[1].byte_offset {
                return Err(Error::Overlap(w[0].name.clone(), w[1].name.clone()));
            }
        }

        Ok(Self {
            path: path.to_path_buf(),
            file,
            meta,
            entries,
            index,
            image_ids,
        })
    }

    pub fn meta(&self) -> &DumpMeta {
        &self.meta
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    /// Image ids in order of first appearance in the directory.
    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    /// Reads one tensor's byte range.
    pub fn tensor(&self, name: &str) -> Result<TensorView> {
        let e = self.entry(name).ok_or_else(|| Error::NoSuchTensor(name.into()))?;
        let mut bytes = vec![0u8; e.byte_len() as usize];
        read_at(&self.file, &mut bytes, e.byte_offset).map_err(|err| Error::io(&self.path, err))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.into()));
        }
        Ok(TensorView {
            shape: e.shape.clone(),
            data,
        })
    }

    pub fn layer_tensor(&self, image_id: &str, layer: usize, kind: TensorKind) -> Result<Option<TensorView>> {
        let name = TensorName::layer(image_id, layer, kind);
        if !self.contains(&name) {
            return Ok(None);
        }
        self.tensor(&name).map(Some)
    }

    pub fn pooled(&self, image_id: &str) -> Result<Option<TensorView>> {
        let name = TensorName::pooled(image_id);
        if !self.contains(&name) {
            return Ok(None);
        }
        self.tensor(&name).map(Some)
    }
}

impl TensorSource for DumpReader {
    type Error = Error;

    fn tensor(&self, image_id: &str, layer: usize, kind: TensorKind) -> Result<Option<Vec<f32>>> {
        Ok(self.layer_tensor(image_id, layer, kind)?.map(|t| t.data))
    }
}

/// Fills as much of `buf` as the file allows; zero-fills the rest.
fn read_prefix(file: &mut File, buf: &mut [u8]) -> std::io::Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match file.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    buf[filled..].fill(0);
    Ok(())
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}
