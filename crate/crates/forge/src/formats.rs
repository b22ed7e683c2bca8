//! RTM1 and CVD1 little-endian sample files.
//!
//! RTM1: `"RTM1"`, u32 version, u32 antennas, u32 frames, u32 range bins,
//! f32 frame rate, i32 label (−1 unlabeled), then f32 values antenna-major,
//! frame-major.
//!
//! CVD1: `"CVD1"`, u32 version, u32 antennas, u32 range bins, u32 frequency
//! bins, u32 index of the first kept bin, f32 frame rate, i32 label, f32 bin
//! width in Hz, then f32 values antenna-major, range-major.

use std::fs;
use std::path::Path;

use cadence_core::spectral::CadenceVelocityDiagram;
use cadence_core::RangeTimeMap;

use crate::error::{invalid, ForgeError, Result};

pub const RTM_MAGIC: &[u8; 4] = b"RTM1";
pub const CVD_MAGIC: &[u8; 4] = b"CVD1";
pub const VERSION: u32 = 1;

/// Cursor over a byte buffer that reports truncation by field name.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => invalid!("truncated file: missing {what} at byte {} (file has {})", self.pos, self.buf.len()),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| ForgeError::Validation(format!("{what} too large")))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            invalid!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(want));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            invalid!("{} trailing bytes after payload", self.buf.len() - self.pos);
        }
        Ok(())
    }
}

fn version(r: &mut Reader) -> Result<()> {
    let v = r.u32("version")?;
    if v != VERSION {
        invalid!("unsupported version {v}");
    }
    Ok(())
}

fn label_out(label: Option<usize>) -> Result<i32> {
    label.map_or(Ok(-1), |l| i32::try_from(l).map_err(|_| ForgeError::Validation(format!("label {l} too large"))))
}

fn label_in(raw: i32) -> Result<Option<usize>> {
    match raw {
        -1 => Ok(None),
        l if l >= 0 => Ok(Some(l as usize)),
        l => invalid!("label {l} is negative"),
    }
}

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| ForgeError::Validation(format!("{what} {v} does not fit in u32")))
}

fn push_f32s(out: &mut Vec<u8>, data: &[f64]) {
    out.reserve(data.len() * 4);
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_rtm(rtm: &RangeTimeMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(28 + rtm.data().len() * 4);
    out.extend_from_slice(RTM_MAGIC);
    for v in [VERSION, dim(rtm.antennas(), "antennas")?, dim(rtm.frames(), "frames")?, dim(rtm.range_bins(), "range bins")?] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(rtm.frame_rate_hz as f32).to_le_bytes());
    out.extend_from_slice(&label_out(rtm.label)?.to_le_bytes());
    push_f32s(&mut out, rtm.data());
    Ok(out)
}

pub fn decode_rtm(bytes: &[u8]) -> Result<RangeTimeMap> {
    let mut r = Reader::new(bytes);
    r.magic(RTM_MAGIC)?;
    version(&mut r)?;
    let antennas = r.u32("antennas")? as usize;
    let frames = r.u32("frames")? as usize;
    let bins = r.u32("range bins")? as usize;
    let frame_rate = r.f32("frame rate")? as f64;
    let label = label_in(r.i32("label")?)?;
    let n = antennas.checked_mul(frames).and_then(|v| v.checked_mul(bins));
    let Some(n) = n else { invalid!("dimensions overflow") };
    let data = r.f32s(n, "sample values")?.into_iter().map(f64::from).collect();
    r.finish()?;
    Ok(RangeTimeMap::new(antennas, frames, bins, data, frame_rate, label)?)
}

pub fn encode_cvd(cvd: &CadenceVelocityDiagram, frame_rate: f64) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(40 + cvd.data.len() * 4);
    out.extend_from_slice(CVD_MAGIC);
    let dims = [
        VERSION,
        dim(cvd.antennas, "antennas")?,
        dim(cvd.range_bins, "range bins")?,
        dim(cvd.freq_bins, "frequency bins")?,
        dim(cvd.first_bin, "first bin")?,
    ];
    for v in dims {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(frame_rate as f32).to_le_bytes());
    out.extend_from_slice(&label_out(cvd.label)?.to_le_bytes());
    out.extend_from_slice(&(cvd.bin_hz as f32).to_le_bytes());
    push_f32s(&mut out, &cvd.data);
    Ok(out)
}

/// Decoded CVD1 file: the diagram plus the frame rate it was computed at.
pub fn decode_cvd(bytes: &[u8]) -> Result<(CadenceVelocityDiagram, f64)> {
    let mut r = Reader::new(bytes);
    r.magic(CVD_MAGIC)?;
    version(&mut r)?;
    let antennas = r.u32("antennas")? as usize;
    let range_bins = r.u32("range bins")? as usize;
    let freq_bins = r.u32("frequency bins")? as usize;
    let first_bin = r.u32("first bin")? as usize;
    let frame_rate = r.f32("frame rate")? as f64;
    let label = label_in(r.i32("label")?)?;
    let bin_hz = r.f32("bin width")? as f64;
    let n = antennas.checked_mul(range_bins).and_then(|v| v.checked_mul(freq_bins));
    let Some(n) = n else { invalid!("dimensions overflow") };
    let data = r.f32s(n, "diagram values")?.into_iter().map(f64::from).collect();
    r.finish()?;
    Ok((CadenceVelocityDiagram { antennas, range_bins, freq_bins, bin_hz, first_bin, data, label }, frame_rate))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ForgeError::io(path, e))
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ForgeError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| ForgeError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ForgeError::io(path, e))
}

pub fn read_rtm(path: &Path) -> Result<RangeTimeMap> {
    decode_rtm(&read_file(path)?).map_err(|e| with_path(path, e))
}

pub fn write_rtm(path: &Path, rtm: &RangeTimeMap) -> Result<()> {
    write_atomic(path, &encode_rtm(rtm)?)
}

pub fn read_cvd(path: &Path) -> Result<(CadenceVelocityDiagram, f64)> {
    decode_cvd(&read_file(path)?).map_err(|e| with_path(path, e))
}

pub fn write_cvd(path: &Path, cvd: &CadenceVelocityDiagram, frame_rate: f64) -> Result<()> {
    write_atomic(path, &encode_cvd(cvd, frame_rate)?)
}

fn with_path(path: &Path, e: ForgeError) -> ForgeError {
    match e {
        ForgeError::Validation(m) => ForgeError::Validation(format!("{}: {m}", path.display())),
        other => other,
    }
}
