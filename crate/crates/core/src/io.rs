//! File formats for maps and tap frames.
//!
//! * CSV: one line per pixel row, comma separated, shortest round-trip
//!   float formatting (`NaN` for invalid pixels). Lossless.
//! * PFM: `Pf` header, little-endian `f32`, rows stored bottom to top.
//! * PGM: binary 16-bit `P5`, big-endian samples. Count 0 marks invalid
//!   pixels; valid depths map linearly onto `1..=65535`, with offset and
//!   scale written to a text sidecar.
//! * Tap frames: `taps.json` (resolution and acquisition settings) next to
//!   `tap_<i>.csv` and `tap_<i>.pfm` for every tap.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionConfig, TapFrame};
use crate::error::{Error, Result};
use crate::reconstruction::DepthMap;
use crate::scene::Resolution;

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn check_len(values: &[f64], res: Resolution) -> Result<()> {
    if values.len() != res.pixels() {
        return Err(Error::Domain(format!(
            "{} values for a {}x{} plane",
            values.len(),
            res.width,
            res.height
        )));
    }
    Ok(())
}

pub fn plane_to_csv(values: &[f64], res: Resolution) -> Result<String> {
    check_len(values, res)?;
    let mut s = String::with_capacity(values.len() * 20);
    for row in values.chunks(res.width) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Parses a CSV plane; offsets in errors are byte positions.
pub fn plane_from_csv(mut r: impl BufRead) -> Result<(Resolution, Vec<f64>)> {
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = r.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let text = line.trim_end_matches(['\n', '\r']);
        if !text.is_empty() {
            let mut count = 0;
            let mut col = offset;
            for field in text.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| format_err(col, format!("not a number: {field:?}")))?;
                values.push(v);
                count += 1;
                col += field.len() as u64 + 1;
            }
            match width {
                None => width = Some(count),
                Some(w) if w != count => {
                    return Err(format_err(
                        offset,
                        format!("row has {count} values, expected {w}"),
                    ));
                }
                _ => {}
            }
            height += 1;
        }
        offset += n as u64;
    }
    let width = width.ok_or_else(|| format_err(0, "empty CSV plane"))?;
    Ok((Resolution::new(width, height)?, values))
}

pub fn write_pfm(mut w: impl Write, values: &[f64], res: Resolution) -> Result<()> {
    check_len(values, res)?;
    write!(w, "Pf\n{} {}\n-1.0\n", res.width, res.height)?;
    let mut buf = Vec::with_capacity(values.len() * 4);
    for row in values.chunks(res.width).rev() {
        for v in row {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a grayscale PFM into row-major, top-to-bottom order.
pub fn read_pfm(mut r: impl Read) -> Result<(Resolution, Vec<f32>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = |what: &str| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(start as u64, format!("missing {what}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token("magic")? != "Pf" {
        return Err(format_err(0, "not a grayscale PFM (expected Pf)"));
    }
    let width: usize = token("width")?
        .parse()
        .map_err(|_| format_err(3, "bad width"))?;
    let height: usize = token("height")?
        .parse()
        .map_err(|_| format_err(3, "bad height"))?;
    let scale: f64 = token("scale")?
        .parse()
        .map_err(|_| format_err(3, "bad scale"))?;
    let data_start = pos + 1;
    let res = Resolution::new(width, height)?;
    let need = res.pixels() * 4;
    if bytes.len() < data_start + need {
        return Err(format_err(
            bytes.len() as u64,
            format!("expected {need} data bytes"),
        ));
    }
    let decode = |b: &[u8]| {
        let a = [b[0], b[1], b[2], b[3]];
        if scale < 0.0 {
            f32::from_le_bytes(a)
        } else {
            f32::from_be_bytes(a)
        }
    };
    let rows: Vec<Vec<f32>> = bytes[data_start..data_start + need]
        .chunks(width * 4)
        .map(|row| row.chunks(4).map(decode).collect())
        .collect();
    Ok((res, rows.into_iter().rev().flatten().collect()))
}

/// Linear depth-to-count mapping of a 16-bit PGM export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmScale {
    /// Depth of count 1, meters.
    pub offset: f64,
    /// Meters per count.
    pub scale: f64,
}

impl PgmScale {
    pub fn depth(&self, count: u16) -> Option<f64> {
        (count > 0).then(|| self.offset + (count - 1) as f64 * self.scale)
    }

    pub fn sidecar(&self) -> String {
        format!(
            "# depth_m = offset_m + (count - 1) * scale_m_per_count; count 0 = invalid\noffset_m={}\nscale_m_per_count={}\n",
            self.offset, self.scale
        )
    }
}

pub fn write_pgm16(
    mut w: impl Write,
    values: &[f64],
    valid: &[bool],
    res: Resolution,
) -> Result<PgmScale> {
    check_len(values, res)?;
    let (lo, hi) = values
        .iter()
        .zip(valid)
        .filter(|(_, v)| **v)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (d, _)| {
            (lo.min(*d), hi.max(*d))
        });
    let scale = if hi > lo { (hi - lo) / 65534.0 } else { 1.0 };
    let offset = if lo.is_finite() { lo } else { 0.0 };
    write!(w, "P5\n{} {}\n65535\n", res.width, res.height)?;
    let mut buf = Vec::with_capacity(values.len() * 2);
    for (d, v) in values.iter().zip(valid) {
        let count: u16 = if *v {
            1 + ((d - offset) / scale).round().clamp(0.0, 65534.0) as u16
        } else {
            0
        };
        buf.extend_from_slice(&count.to_be_bytes());
    }
    w.write_all(&buf)?;
    Ok(PgmScale { offset, scale })
}

/// Writes `<stem>.csv`, `<stem>.pfm`, `<stem>.pgm` and `<stem>.pgm.txt`.
pub fn write_depth_map(map: &DepthMap, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let res = map.resolution();
    fs::write(
        dir.join(format!("{stem}.csv")),
        plane_to_csv(map.depth(), res)?,
    )?;
    write_pfm(
        fs::File::create(dir.join(format!("{stem}.pfm")))?,
        map.depth(),
        res,
    )?;
    let scale = write_pgm16(
        fs::File::create(dir.join(format!("{stem}.pgm")))?,
        map.depth(),
        map.valid(),
        res,
    )?;
    fs::write(dir.join(format!("{stem}.pgm.txt")), scale.sidecar())?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TapSidecar {
    width: usize,
    height: usize,
    taps: usize,
    acquisition: AcquisitionConfig,
}

pub fn export_taps(frame: &TapFrame, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let res = frame.resolution();
    let sidecar = TapSidecar {
        width: res.width,
        height: res.height,
        taps: frame.k(),
        acquisition: frame.acquisition().clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Domain(e.to_string()))?;
    fs::write(dir.join("taps.json"), json + "\n")?;
    for (i, tap) in frame.taps().iter().enumerate() {
        fs::write(dir.join(format!("tap_{i}.csv")), plane_to_csv(tap, res)?)?;
        write_pfm(
            fs::File::create(dir.join(format!("tap_{i}.pfm")))?,
            tap,
            res,
        )?;
    }
    Ok(())
}

/// Loads a frame written by [`export_taps`] from its lossless CSV planes.
pub fn import_taps(dir: &Path) -> Result<TapFrame> {
    let text = fs::read_to_string(dir.join("taps.json"))?;
    let side: TapSidecar =
        serde_json::from_str(&text).map_err(|e| format_err(0, format!("taps.json: {e}")))?;
    let res = Resolution::new(side.width, side.height)?;
    let taps = (0..side.taps)
        .map(|i| {
            let f = fs::File::open(dir.join(format!("tap_{i}.csv")))?;
            let (r, v) = plane_from_csv(std::io::BufReader::new(f))?;
            if r != res {
                return Err(format_err(
                    0,
                    format!(
                        "tap_{i}.csv is {}x{}, expected {}x{}",
                        r.width, r.height, res.width, res.height
                    ),
                ));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    side.acquisition.validate()?;
    TapFrame::new(res, taps, side.acquisition)
}
