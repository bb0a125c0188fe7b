//! Binary and JSON forms of a [`SpinChain`], and framed sample dumps.
//!
//! Binary layout: `ONCH`, version u16, N u16, L u32, bc u8, then L·N f64,
//! all little-endian.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundaryCondition, SpinChain};

pub const MAGIC: &[u8; 4] = b"ONCH";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 1;

pub fn encode(chain: &SpinChain) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * chain.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(chain.dim() as u16).to_le_bytes());
    out.extend_from_slice(&(chain.len() as u32).to_le_bytes());
    out.push(match chain.bc() {
        BoundaryCondition::Free => 0,
        BoundaryCondition::Periodic => 1,
    });
    for x in chain.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<SpinChain> {
    let bad = |m: &str| Error::BadRecord(m.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing ONCH header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let l = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let bc = match bytes[12] {
        0 => BoundaryCondition::Free,
        1 => BoundaryCondition::Periodic,
        t => return Err(bad(&format!("unknown boundary tag {t}"))),
    };
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * n * l {
        return Err(bad("payload length does not match N·L"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SpinChain::from_flat(n, bc, data).map_err(|e| Error::BadRecord(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct ChainJson {
    n: usize,
    l: usize,
    bc: BoundaryCondition,
    spins: Vec<Vec<f64>>,
}

pub fn to_json(chain: &SpinChain) -> String {
    let j = ChainJson {
        n: chain.dim(),
        l: chain.len(),
        bc: chain.bc(),
        spins: (0..chain.len()).map(|i| chain.spin(i).to_vec()).collect(),
    };
    serde_json::to_string(&j).expect("chain serializes")
}

pub fn from_json(s: &str) -> Result<SpinChain> {
    let j: ChainJson = serde_json::from_str(s).map_err(|e| Error::BadRecord(e.to_string()))?;
    if j.spins.len() != j.l || j.spins.iter().any(|s| s.len() != j.n) {
        return Err(Error::BadRecord("spins do not match n and l".into()));
    }
    SpinChain::from_flat(j.n, j.bc, j.spins.concat()).map_err(|e| Error::BadRecord(e.to_string()))
}

/// Writes one record preceded by its u32 little-endian length.
pub fn write_framed<W: Write>(w: &mut W, chain: &SpinChain) -> Result<()> {
    let rec = encode(chain);
    w.write_all(&(rec.len() as u32).to_le_bytes())?;
    w.write_all(&rec)?;
    Ok(())
}

/// Reads the next framed record; `None` at a clean end of stream.
pub fn read_framed<R: Read>(r: &mut R) -> Result<Option<SpinChain>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    decode(&buf).map(Some)
}

/// Sidecar metadata of a sample dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub seed: u64,
    pub beta: f64,
    pub n: usize,
    pub l: usize,
    pub method: String,
}
