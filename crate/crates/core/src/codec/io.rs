//! On-disk formats owned by the codec.
//!
//! * WAV: 16-bit PCM, mono, little-endian only.
//! * `UAG1` token grid: magic, u32 n_q, u32 T, then T·n_q u32 codes frame-major.
//! * `UAC1` codebooks: magic, u32 n_q, u32 V, u32 L, then n_q·V·L f64.
//!
//! All integers and floats are little-endian.

use std::io::{Read, Seek, Write};

use super::rvq::{CodebookSet, TokenGrid};
use super::transform::AudioSignal;
use crate::error::{bail, Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"UAG1";
pub const CODEBOOK_MAGIC: &[u8; 4] = b"UAC1";

pub fn read_wav<R: Read>(reader: R) -> Result<AudioSignal> {
    let wav = hound::WavReader::new(reader).map_err(|e| Error::Format(format!("WAV: {e}")))?;
    let spec = wav.spec();
    if spec.channels != 1 {
        bail!(Format, "WAV has {} channels; only mono is supported", spec.channels);
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        bail!(Format, "WAV is {:?} {}-bit; only 16-bit PCM is supported", spec.sample_format, spec.bits_per_sample);
    }
    let samples = wav
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(format!("WAV data: {e}")))?;
    AudioSignal::new(samples, spec.sample_rate)
}

pub fn write_wav<W: Write + Seek>(signal: &AudioSignal, writer: W) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let fmt = |e: hound::Error| Error::Format(format!("WAV: {e}"));
    let mut w = hound::WavWriter::new(writer, spec).map_err(fmt)?;
    for &s in signal.samples() {
        w.write_sample((s * 32767.0).round().clamp(-32768.0, 32767.0) as i16).map_err(fmt)?;
    }
    w.finalize().map_err(fmt)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(|e| Error::Format(format!("missing magic: {e}")))?;
    if &m != magic {
        bail!(Format, "bad magic {:?}, expected {:?}", String::from_utf8_lossy(&m), String::from_utf8_lossy(magic));
    }
    Ok(())
}

pub fn write_grid<W: Write>(grid: &TokenGrid, mut w: W) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&(grid.levels() as u32).to_le_bytes())?;
    w.write_all(&(grid.frames() as u32).to_le_bytes())?;
    for &c in grid.codes() {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid<R: Read>(mut r: R) -> Result<TokenGrid> {
    check_magic(&mut r, GRID_MAGIC)?;
    let levels = read_u32(&mut r)? as usize;
    let frames = read_u32(&mut r)? as usize;
    let mut buf = vec![0u8; levels * frames * 4];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("grid payload: {e}")))?;
    let codes = buf.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    TokenGrid::new(levels, codes)
}

pub fn write_codebooks<W: Write>(books: &CodebookSet, mut w: W) -> Result<()> {
    w.write_all(CODEBOOK_MAGIC)?;
    for v in [books.levels(), books.size(), books.dim()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for k in 0..books.levels() {
        for &v in books.level_data(k) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_codebooks<R: Read>(mut r: R) -> Result<CodebookSet> {
    check_magic(&mut r, CODEBOOK_MAGIC)?;
    let levels = read_u32(&mut r)? as usize;
    let size = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let mut books = Vec::with_capacity(levels);
    for _ in 0..levels {
        let mut buf = vec![0u8; size * dim * 8];
        r.read_exact(&mut buf).map_err(|e| Error::Format(format!("codebook payload: {e}")))?;
        books.push(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    CodebookSet::new(size, dim, books)
}
