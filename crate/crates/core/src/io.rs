//! File formats: PFM float rasters, PGM masks, DF32 density fields, scene
//! JSON, rank-pair CSV and optimization trace CSV.
//!
//! DF32 layout:
//!
//! ```text
//! DF32\n
//! nx ny nz vx vy vz ox oy oz\n
//! nx*ny*nz little-endian f32, x fastest
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DensityField, GridSpec};
use crate::loss::{RankPair, RankPairs};
use crate::optim::TraceRow;
use crate::raster::{Mask, Raster};
use crate::scene::SceneSpec;

/// Cursor over an ASCII header followed by a binary payload.
struct HeaderReader<'a> {
    format: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(format: &'static str, buf: &'a [u8]) -> Self {
        Self { format, buf, pos: 0 }
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            format: self.format,
            offset,
            message: message.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next whitespace-delimited token; PGM-style `#` comments are skipped.
    fn token(&mut self) -> Result<(usize, &'a str)> {
        loop {
            self.skip_space();
            if self.pos < self.buf.len() && self.buf[self.pos] == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(start, "unexpected end of header"));
        }
        let s = std::str::from_utf8(&self.buf[start..self.pos]).map_err(|_| self.err(start, "non-ASCII header"))?;
        Ok((start, s))
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (at, tok) = self.token()?;
        tok.parse()
            .map_err(|_| self.err(at, format!("cannot parse {what} from {tok:?}")))
    }

    /// Consumes the single whitespace byte that ends the header.
    fn end_header(&mut self) -> Result<usize> {
        match self.buf.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(self.pos)
            }
            _ => Err(self.err(self.pos, "header must end with a newline")),
        }
    }

    fn payload(&self, start: usize, expected: usize) -> Result<&'a [u8]> {
        let actual = self.buf.len().saturating_sub(start);
        if actual != expected {
            return Err(self.err(
                start,
                format!("payload should be {expected} bytes, found {actual}"),
            ));
        }
        Ok(&self.buf[start..])
    }
}

/// Encodes a 1- or 3-channel raster as PFM (little-endian, rows bottom to top).
pub fn encode_pfm(r: &Raster<f32>) -> Result<Vec<u8>> {
    let magic = match r.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidArgument(format!("PFM holds 1 or 3 channels, not {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", r.width(), r.height()).into_bytes();
    let row = r.width() * r.channels();
    for v in (0..r.height()).rev() {
        for x in &r.data()[v * row..(v + 1) * row] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(buf: &[u8]) -> Result<Raster<f32>> {
    let mut h = HeaderReader::new("PFM", buf);
    let (at, magic) = h.token()?;
    let channels = match magic {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(h.err(at, format!("bad magic {m:?}, expected Pf or PF"))),
    };
    let w: usize = h.parse("width")?;
    let hh: usize = h.parse("height")?;
    let (scale_at, tok) = h.token()?;
    let scale: f64 = tok
        .parse()
        .map_err(|_| h.err(scale_at, format!("cannot parse scale from {tok:?}")))?;
    if !(scale < 0.0) {
        return Err(h.err(
            scale_at,
            format!("scale {scale} is not negative; only little-endian PFM is supported"),
        ));
    }
    if w == 0 || hh == 0 {
        return Err(h.err(0, format!("empty {w}x{hh} raster")));
    }
    let start = h.end_header()?;
    let payload = h.payload(start, w * hh * channels * 4)?;
    let row = w * channels;
    let mut data = vec![0f32; w * hh * channels];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let file_row = k / row;
        let v = hh - 1 - file_row;
        data[v * row + k % row] = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
    }
    Raster::with_channels(w, hh, channels, data)
}

pub fn write_pfm(path: impl AsRef<Path>, r: &Raster<f32>) -> Result<()> {
    fs::write(path, encode_pfm(r)?)?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Raster<f32>> {
    decode_pfm(&fs::read(path)?)
}

/// Binary PGM; `true` pixels are written as 255.
pub fn encode_pgm(m: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width(), m.height()).into_bytes();
    out.extend(m.data().iter().map(|b| if *b { 255u8 } else { 0 }));
    out
}

/// Reads a binary PGM with maxval <= 255; nonzero pixels become `true`.
pub fn decode_pgm(buf: &[u8]) -> Result<Mask> {
    let mut h = HeaderReader::new("PGM", buf);
    let (at, magic) = h.token()?;
    if magic != "P5" {
        return Err(h.err(at, format!("bad magic {magic:?}, expected P5")));
    }
    let w: usize = h.parse("width")?;
    let hh: usize = h.parse("height")?;
    let (max_at, tok) = h.token()?;
    let maxval: u32 = tok
        .parse()
        .map_err(|_| h.err(max_at, format!("cannot parse maxval from {tok:?}")))?;
    if maxval == 0 || maxval > 255 {
        return Err(h.err(max_at, format!("maxval {maxval} unsupported (1..=255)")));
    }
    if w == 0 || hh == 0 {
        return Err(h.err(0, format!("empty {w}x{hh} mask")));
    }
    let start = h.end_header()?;
    let payload = h.payload(start, w * hh)?;
    Mask::new(w, hh, payload.iter().map(|b| *b != 0).collect())
}

pub fn write_pgm(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    fs::write(path, encode_pgm(m))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Mask> {
    decode_pgm(&fs::read(path)?)
}

pub fn encode_df32(field: &DensityField<f32>) -> Vec<u8> {
    let s = field.spec();
    let mut out = format!(
        "DF32\n{} {} {} {} {} {} {} {} {}\n",
        s.nx, s.ny, s.nz, s.voxel_size[0], s.voxel_size[1], s.voxel_size[2], s.origin[0], s.origin[1], s.origin[2]
    )
    .into_bytes();
    out.reserve(field.sigma().len() * 4);
    for v in field.sigma() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_df32(buf: &[u8]) -> Result<DensityField<f32>> {
    let mut h = HeaderReader::new("DF32", buf);
    let (at, magic) = h.token()?;
    if magic != "DF32" {
        return Err(h.err(at, format!("bad magic {magic:?}, expected DF32")));
    }
    let nx: usize = h.parse("nx")?;
    let ny: usize = h.parse("ny")?;
    let nz: usize = h.parse("nz")?;
    let mut rest = [0f32; 6];
    for (k, slot) in rest.iter_mut().enumerate() {
        *slot = h.parse(["vx", "vy", "vz", "ox", "oy", "oz"][k])?;
    }
    let start = h.end_header()?;
    let spec = GridSpec::new([nx, ny, nz], [rest[0], rest[1], rest[2]], [rest[3], rest[4], rest[5]])
        .map_err(|e| h.err(0, e.to_string()))?;
    let expected = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| h.err(0, "grid dimensions overflow"))?;
    let payload = h.payload(start, expected)?;
    let sigma = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    DensityField::new(spec, sigma).map_err(|e| h.err(start, e.to_string()))
}

pub fn write_df32(path: impl AsRef<Path>, field: &DensityField<f32>) -> Result<()> {
    fs::write(path, encode_df32(field))?;
    Ok(())
}

pub fn read_df32(path: impl AsRef<Path>) -> Result<DensityField<f32>> {
    decode_df32(&fs::read(path)?)
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let scene: SceneSpec = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
    scene.validate()?;
    Ok(scene)
}

pub fn write_scene(path: impl AsRef<Path>, scene: &SceneSpec) -> Result<()> {
    let mut s = serde_json::to_string_pretty(scene)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub const RANK_PAIRS_HEADER: &str = "i_u,i_v,j_u,j_v,r";

pub fn write_rank_pairs(mut w: impl Write, pairs: &RankPairs) -> Result<()> {
    writeln!(w, "{RANK_PAIRS_HEADER}")?;
    for p in &pairs.pairs {
        writeln!(w, "{},{},{},{},{}", p.i.0, p.i.1, p.j.0, p.j.1, p.r)?;
    }
    Ok(())
}

/// Reads rank pairs for a `width x height` raster. The header line is optional.
pub fn read_rank_pairs(r: impl Read, width: usize, height: usize) -> Result<RankPairs> {
    let mut pairs = Vec::new();
    let mut offset = 0usize;
    for line in BufReader::new(r).lines() {
        let line = line?;
        let here = offset;
        offset += line.len() + 1;
        let t = line.trim();
        if t.is_empty() || t == RANK_PAIRS_HEADER {
            continue;
        }
        let bad = |m: String| Error::Format {
            format: "rank-pair CSV",
            offset: here,
            message: m,
        };
        let f: Vec<&str> = t.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", f.len())));
        }
        let n = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad index {s:?}")));
        let (iu, iv, ju, jv) = (n(f[0])?, n(f[1])?, n(f[2])?, n(f[3])?);
        let r: i8 = f[4].parse().map_err(|_| bad(format!("bad label {:?}", f[4])))?;
        if !matches!(r, -1..=1) {
            return Err(bad(format!("label {r} not in {{-1, 0, 1}}")));
        }
        if iu >= width || ju >= width || iv >= height || jv >= height {
            return Err(bad(format!("pair outside {width}x{height} raster")));
        }
        pairs.push(RankPair {
            i: (iu, iv),
            j: (ju, jv),
            r,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Format {
            format: "rank-pair CSV",
            offset,
            message: "no pairs".into(),
        });
    }
    Ok(RankPairs {
        pairs,
        width,
        height,
        seed: 0,
    })
}

pub const TRACE_HEADER: &str = "epoch,l_h,l_rank,l_sky,l_total,lr";

pub fn write_trace(mut w: impl Write, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, r.loss.l_h, r.loss.l_rank, r.loss.l_sky, r.loss.l_total, r.lr
        )?;
    }
    Ok(())
}

/// Reads a trace CSV; `alpha` is not stored in the file and is left at 0.
pub fn read_trace(r: impl Read) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    let mut offset = 0usize;
    for line in BufReader::new(r).lines() {
        let line = line?;
        let here = offset;
        offset += line.len() + 1;
        let t = line.trim();
        if t.is_empty() || t == TRACE_HEADER {
            continue;
        }
        let bad = |m: String| Error::Format {
            format: "trace CSV",
            offset: here,
            message: m,
        };
        let f: Vec<&str> = t.split(',').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", f.len())));
        }
        let x = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        rows.push(TraceRow {
            epoch: f[0].parse().map_err(|_| bad(format!("bad epoch {:?}", f[0])))?,
            loss: crate::loss::LossBreakdown {
                l_h: x(f[1])?,
                l_rank: x(f[2])?,
                l_sky: x(f[3])?,
                l_total: x(f[4])?,
                alpha: 0.0,
            },
            lr: x(f[5])?,
        });
    }
    Ok(rows)
}
