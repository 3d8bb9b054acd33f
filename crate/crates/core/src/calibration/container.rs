//! Binary calibration container.
//!
//! All integers and floats are little-endian:
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 8            | magic `PCTOFCAL`                                     |
//! | 4            | format version (`u32`)                               |
//! | 4            | header length `H` (`u32`)                            |
//! | H            | UTF-8 JSON header (coding, resolution, provenance)   |
//! | per pixel    | `u8` valid flag, then for valid pixels: six `f64`    |
//! |              | (plateau_hi, plateau_lo, zero_equiv, zero_phase,     |
//! |              | interval lo, interval hi), `u32` knot count `m`,     |
//! |              | `m` knots and `4·(m−1)` coefficients as `f64`        |
//! | 8·pixels     | mask plane, row-major `f64`                          |
//! | 32           | SHA-256 of every preceding byte                      |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CalibrationTable, PixelCalibration};
use crate::error::{Error, Result};
use crate::numerics::MonotoneResponse;
use crate::scene::Resolution;
use crate::signal_model::CodingConfig;

pub const MAGIC: &[u8; 8] = b"PCTOFCAL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    coding: CodingConfig,
    width: usize,
    height: usize,
    reference_depth: f64,
    reference_phase: f64,
    config_hash: String,
    seed: u64,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }
}

impl CalibrationTable {
    /// Serializes the table; floats are stored bit-exactly.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            coding: self.coding,
            width: self.resolution.width,
            height: self.resolution.height,
            reference_depth: self.reference_depth,
            reference_phase: self.reference_phase,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        };
        let json =
            serde_json::to_vec(&header).map_err(|e| Error::Domain(format!("header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let put = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
        for pixel in &self.pixels {
            match pixel {
                None => out.push(0),
                Some(c) => {
                    out.push(1);
                    for v in [
                        c.plateau_hi,
                        c.plateau_lo,
                        c.zero_equiv,
                        c.zero_phase,
                        c.sensitive_interval.0,
                        c.sensitive_interval.1,
                    ] {
                        put(&mut out, v);
                    }
                    let knots = c.response.knots();
                    out.extend_from_slice(&(knots.len() as u32).to_le_bytes());
                    for &k in knots {
                        put(&mut out, k);
                    }
                    for row in c.response.coeffs() {
                        for &v in row {
                            put(&mut out, v);
                        }
                    }
                }
            }
        }
        for &m in &self.mask {
            put(&mut out, m);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8, "magic")? != MAGIC {
            cur.pos = 0;
            return Err(cur.fail("not a calibration container (bad magic)"));
        }
        let version = cur.u32("version")?;
        if version != FORMAT_VERSION {
            cur.pos -= 4;
            return Err(cur.fail(format!("unsupported format version {version}")));
        }
        if bytes.len() < 32 + cur.pos {
            return Err(cur.fail("truncated before checksum"));
        }
        let body = bytes.len() - 32;
        if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
            return Err(Error::Format {
                offset: body as u64,
                message: "checksum mismatch".into(),
            });
        }
        let mut cur = Cursor {
            bytes: &bytes[..body],
            pos: cur.pos,
        };
        let len = cur.u32("header length")? as usize;
        let start = cur.pos;
        let header: Header =
            serde_json::from_slice(cur.take(len, "header")?).map_err(|e| Error::Format {
                offset: start as u64,
                message: format!("bad header: {e}"),
            })?;
        let resolution =
            Resolution::new(header.width, header.height).map_err(|e| Error::Format {
                offset: start as u64,
                message: e.to_string(),
            })?;
        let n = resolution.pixels();
        let mut pixels = Vec::with_capacity(n);
        for p in 0..n {
            let flag_at = cur.pos;
            match cur.u8("pixel flag")? {
                0 => pixels.push(None),
                1 => {
                    let v = cur.f64s(6, "pixel record")?;
                    let m = cur.u32("knot count")? as usize;
                    if m < 2 {
                        return Err(cur.fail(format!("pixel {p}: {m} knots")));
                    }
                    let knots = cur.f64s(m, "knots")?;
                    let flat = cur.f64s(4 * (m - 1), "coefficients")?;
                    let coeffs = flat.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
                    let response =
                        MonotoneResponse::from_parts(knots, coeffs).map_err(|e| Error::Format {
                            offset: flag_at as u64,
                            message: format!("pixel {p}: {e}"),
                        })?;
                    pixels.push(Some(PixelCalibration {
                        plateau_hi: v[0],
                        plateau_lo: v[1],
                        zero_equiv: v[2],
                        zero_phase: v[3],
                        sensitive_interval: (v[4], v[5]),
                        response,
                    }));
                }
                f => {
                    cur.pos = flag_at;
                    return Err(cur.fail(format!("pixel {p}: bad validity flag {f}")));
                }
            }
        }
        let mask = cur.f64s(n, "mask")?;
        if cur.pos != body {
            return Err(cur.fail(format!("{} trailing bytes before checksum", body - cur.pos)));
        }
        Ok(Self {
            coding: header.coding,
            resolution,
            reference_depth: header.reference_depth,
            reference_phase: header.reference_phase,
            pixels,
            mask,
            config_hash: header.config_hash,
            seed: header.seed,
        })
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
