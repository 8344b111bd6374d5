use std::fs;
use std::path::Path;

use super::bank::{BankMetadata, CoresetBank};
use super::euclidean;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SQCS";
pub const CORESET_FILE_VERSION: u16 = 1;

/// Serializes a bank in the `SQCS` layout: header, members, the strict
/// lower triangle of the distance matrix (full banks only), then
/// length-prefixed JSON metadata.
pub fn encode_bank(bank: &CoresetBank) -> Vec<u8> {
    let meta = serde_json::to_vec(&bank.metadata).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CORESET_FILE_VERSION.to_le_bytes());
    for v in [bank.capacity(), bank.dim(), bank.fill()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in bank.members() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if bank.is_full() {
        for i in 1..bank.capacity() {
            for j in 0..i {
                out.extend_from_slice(&bank.distance(i, j).to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("coreset file truncated in {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{what} size overflows")))?;
        let v: Vec<f32> = self
            .take(len, what)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format(format!("{what} contains non-finite values")));
        }
        Ok(v)
    }
}

/// Parses an `SQCS` blob. The stored distances must match a recomputation
/// from the members bit for bit.
pub fn decode_bank(bytes: &[u8]) -> Result<CoresetBank> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad coreset file magic".into()));
    }
    let v = r.take(2, "version")?;
    let version = u16::from_le_bytes([v[0], v[1]]);
    if version != CORESET_FILE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CORESET_FILE_VERSION,
        });
    }
    let capacity = r.u32("header")?;
    let dim = r.u32("header")?;
    let fill = r.u32("header")?;
    if capacity == 0 || dim == 0 || fill > capacity {
        return Err(Error::Format(format!(
            "invalid coreset shape: capacity {capacity}, dim {dim}, fill {fill}"
        )));
    }
    let members = r.f32s(
        fill.checked_mul(dim)
            .ok_or_else(|| Error::Format("member block overflows".into()))?,
        "members",
    )?;
    let mut dist = Vec::new();
    if fill == capacity {
        let tri = r.f32s(capacity * (capacity - 1) / 2, "distance matrix")?;
        dist = vec![0.0f32; capacity * capacity];
        let mut k = 0;
        for i in 1..capacity {
            for j in 0..i {
                let expect = euclidean(
                    &members[i * dim..(i + 1) * dim],
                    &members[j * dim..(j + 1) * dim],
                );
                if tri[k].to_bits() != expect.to_bits() {
                    return Err(Error::Format(format!(
                        "stored distance ({i}, {j}) does not match members"
                    )));
                }
                dist[i * capacity + j] = tri[k];
                dist[j * capacity + i] = tri[k];
                k += 1;
            }
        }
    }
    let meta_len = r.u32("metadata length")?;
    let metadata: BankMetadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::Format(format!("coreset metadata: {e}")))?;
    if r.pos != bytes.len() {
        return Err(Error::Format(
            "trailing bytes after coreset metadata".into(),
        ));
    }
    Ok(CoresetBank::from_parts(
        capacity, dim, members, dist, metadata,
    ))
}

pub fn save(bank: &CoresetBank, path: &Path) -> Result<()> {
    fs::write(path, encode_bank(bank)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<CoresetBank> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&bytes)
}
