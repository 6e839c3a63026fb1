//! The model container: a single binary file holding named float64 arrays
//! and text entries, protected by a SHA-256 checksum.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "PRBMCTR\0" | version u32 | entry count u32
//! per entry, sorted by name:
//!   name length u32 | name bytes | tag u8
//!   tag 0 (array): ndim u32 | dims u64 * ndim | f64 * product(dims)
//!   tag 1 (text):  length u64 | UTF-8 bytes
//! sha256 of everything above (32 bytes)
//! ```
//!
//! Entries are kept in a sorted map, so encoding is canonical and
//! save, load, save reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PRBMCTR\0";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;
const MAX_NDIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Array { shape: Vec<usize>, data: Vec<f64> },
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: BTreeMap<String, Entry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &BTreeMap<String, Entry> {
        &self.entries
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Entry> {
        self.entries.remove(name)
    }

    pub fn put_array(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if shape.len() > MAX_NDIM {
            return Err(bad(format!("{name}: more than {MAX_NDIM} dimensions")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(bad(format!(
                "{name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        self.entries
            .insert(name.to_string(), Entry::Array { shape, data });
        Ok(())
    }

    pub fn put_matrix(&mut self, name: &str, m: ArrayView2<f64>) {
        let shape = vec![m.nrows(), m.ncols()];
        let data = m.iter().copied().collect();
        self.entries
            .insert(name.to_string(), Entry::Array { shape, data });
    }

    pub fn put_vector(&mut self, name: &str, v: ArrayView1<f64>) {
        let shape = vec![v.len()];
        self.entries.insert(
            name.to_string(),
            Entry::Array {
                shape,
                data: v.to_vec(),
            },
        );
    }

    pub fn put_scalar(&mut self, name: &str, x: f64) {
        self.entries.insert(
            name.to_string(),
            Entry::Array {
                shape: vec![],
                data: vec![x],
            },
        );
    }

    pub fn put_text(&mut self, name: &str, text: impl Into<String>) {
        self.entries
            .insert(name.to_string(), Entry::Text(text.into()));
    }

    fn array(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.entries.get(name) {
            Some(Entry::Array { shape, data }) => Ok((shape, data)),
            Some(Entry::Text(_)) => Err(bad(format!("{name} is text, expected an array"))),
            None => Err(bad(format!("missing entry {name}"))),
        }
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        match self.array(name)? {
            (&[r, c], data) => {
                Ok(Array2::from_shape_vec((r, c), data.to_vec()).expect("checked shape"))
            }
            (s, _) => Err(bad(format!("{name} has shape {s:?}, expected a matrix"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        match self.array(name)? {
            (&[_], data) => Ok(Array1::from(data.to_vec())),
            (s, _) => Err(bad(format!("{name} has shape {s:?}, expected a vector"))),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        match self.array(name)? {
            (&[], &[x]) => Ok(x),
            (s, _) => Err(bad(format!("{name} has shape {s:?}, expected a scalar"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.entries.get(name) {
            Some(Entry::Text(t)) => Ok(t),
            Some(Entry::Array { .. }) => Err(bad(format!("{name} is an array, expected text"))),
            None => Err(bad(format!("missing entry {name}"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Array { shape, data } => {
                    out.push(0);
                    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
                    for &d in shape {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    for x in data {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Entry::Text(t) => {
                    out.push(1);
                    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
                    out.extend_from_slice(t.as_bytes());
                }
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Container> {
        if bytes.len() < MAGIC.len() + 8 + CHECKSUM_LEN {
            return Err(bad("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("bad magic; not a model container"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != sum {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        let mut last: Option<String> = None;
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| bad("entry name is not UTF-8"))?
                .to_string();
            if last.as_ref().is_some_and(|l| *l >= name) {
                return Err(bad(format!("entry {name:?} out of order or duplicated")));
            }
            let entry = match r.u8()? {
                0 => {
                    let ndim = r.u32()? as usize;
                    if ndim > MAX_NDIM {
                        return Err(bad(format!("{name}: {ndim} dimensions")));
                    }
                    let mut shape = Vec::with_capacity(ndim);
                    let mut count: usize = 1;
                    for _ in 0..ndim {
                        let d = usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?;
                        count = count
                            .checked_mul(d)
                            .ok_or_else(|| bad("dimension overflow"))?;
                        shape.push(d);
                    }
                    let raw = r.take(
                        count
                            .checked_mul(8)
                            .ok_or_else(|| bad("dimension overflow"))?,
                    )?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Entry::Array { shape, data }
                }
                1 => {
                    let len = usize::try_from(r.u64()?).map_err(|_| bad("text length overflow"))?;
                    let t = std::str::from_utf8(r.take(len)?)
                        .map_err(|_| bad(format!("{name}: text is not UTF-8")))?;
                    Entry::Text(t.to_string())
                }
                t => return Err(bad(format!("{name}: unknown entry tag {t}"))),
            };
            last = Some(name.clone());
            entries.insert(name, entry);
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after the last entry"));
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Container> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::decode(&bytes)
    }

    /// Hex SHA-256 of the canonical encoding.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.encode()))
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
            .ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
