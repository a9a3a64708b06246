//! Binary file formats.
//!
//! `IFGSTACK1`: 9-byte ASCII magic `IFGSTACK1`, newline, one-line UTF-8
//! JSON header `{width, height, n_ifgs, acquisition_days, pad_policy}`,
//! newline, then little-endian float32 payload: all phase planes
//! (interferogram-major, row-major), all amplitude planes, all
//! perpendicular-baseline planes, one k-factor plane.
//!
//! `PSMASK1`: 7-byte ASCII magic `PSMASK1`, newline, JSON header
//! `{width, height, source}`, newline, one byte per pixel (0/1).
//!
//! Probability maps are exported as binary PGM (P5, maxval 65535,
//! probability × 65535 rounded, most-significant byte first).
//!
//! Payloads are NaN-free by contract: writers reject non-finite values and
//! readers treat them as corruption.

use crate::error::{Error, Result};
use crate::stack::{InterferogramStack, MaskSource, PadPolicy, PixelMask, Plane};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const STACK_MAGIC: &[u8] = b"IFGSTACK1\n";
const MASK_MAGIC: &[u8] = b"PSMASK1\n";

/// Upper bound on total payload elements; anything larger is treated as a
/// corrupt header rather than an allocation request.
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Serialize, Deserialize)]
struct StackHeader {
    width: usize,
    height: usize,
    n_ifgs: usize,
    acquisition_days: Vec<f64>,
    pad_policy: PadPolicy,
}

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    width: usize,
    height: usize,
    source: MaskSource,
}

fn write_f32_plane(w: &mut impl Write, values: &[f64], what: &str) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        if !v.is_finite() {
            return Err(Error::format(format!("{what}: non-finite value {v}")));
        }
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32_plane(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("{what}: truncated payload")))?;
    let mut out = Vec::with_capacity(n);
    for chunk in buf.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::format(format!("{what}: non-finite value in payload")));
        }
        out.push(v as f64);
    }
    Ok(out)
}

fn read_magic_and_header<H: serde::de::DeserializeOwned>(
    r: &mut impl BufRead,
    magic: &[u8],
    what: &str,
) -> Result<H> {
    let mut got = vec![0u8; magic.len()];
    r.read_exact(&mut got)
        .map_err(|_| Error::format(format!("{what}: file too short for magic")))?;
    if got != magic {
        return Err(Error::format(format!("{what}: magic mismatch")));
    }
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|_| Error::format(format!("{what}: missing header")))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::format(format!("{what}: unterminated header")));
    }
    serde_json::from_slice(&line)
        .map_err(|e| Error::format(format!("{what}: bad header: {e}")))
}

pub fn write_stack(stack: &InterferogramStack, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STACK_MAGIC)?;
    let header = StackHeader {
        width: stack.width(),
        height: stack.height(),
        n_ifgs: stack.n_ifgs(),
        acquisition_days: stack.acquisition_days().to_vec(),
        pad_policy: stack.pad_policy(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for i in 0..stack.n_ifgs() {
        write_f32_plane(&mut w, stack.phase_plane(i), "stack phase")?;
    }
    for i in 0..stack.n_ifgs() {
        write_f32_plane(&mut w, stack.amplitude_plane(i), "stack amplitude")?;
    }
    for i in 0..stack.n_ifgs() {
        write_f32_plane(&mut w, stack.perp_baseline_plane(i), "stack baseline")?;
    }
    write_f32_plane(&mut w, stack.k_factor_plane(), "stack k_factor")?;
    w.flush()?;
    Ok(())
}

pub fn read_stack(path: &Path) -> Result<InterferogramStack> {
    let mut r = BufReader::new(File::open(path)?);
    let header: StackHeader = read_magic_and_header(&mut r, STACK_MAGIC, "stack")?;
    if header.n_ifgs == 0 {
        return Err(Error::format("stack: header n_ifgs is 0"));
    }
    if header.n_ifgs < 2 {
        return Err(Error::format("stack: header n_ifgs < 2"));
    }
    if header.width == 0 || header.height == 0 {
        return Err(Error::format("stack: zero extent in header"));
    }
    let plane = (header.width as u64)
        .checked_mul(header.height as u64)
        .filter(|&p| p <= MAX_ELEMENTS)
        .ok_or_else(|| Error::format("stack: header dimensions overflow"))?;
    plane
        .checked_mul(header.n_ifgs as u64)
        .and_then(|v| v.checked_mul(3))
        .and_then(|v| v.checked_add(plane))
        .filter(|&total| total <= MAX_ELEMENTS)
        .ok_or_else(|| Error::format("stack: header dimensions overflow"))?;
    let plane = plane as usize;
    let n = header.n_ifgs;
    let mut phase = Vec::with_capacity(plane * n);
    for _ in 0..n {
        phase.extend(read_f32_plane(&mut r, plane, "stack phase")?);
    }
    let mut amplitude = Vec::with_capacity(plane * n);
    for _ in 0..n {
        amplitude.extend(read_f32_plane(&mut r, plane, "stack amplitude")?);
    }
    let mut baseline = Vec::with_capacity(plane * n);
    for _ in 0..n {
        baseline.extend(read_f32_plane(&mut r, plane, "stack baseline")?);
    }
    let k_factor = read_f32_plane(&mut r, plane, "stack k_factor")?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::format("stack: trailing bytes after payload"));
    }
    InterferogramStack::new(
        header.width,
        header.height,
        header.n_ifgs,
        header.acquisition_days,
        header.pad_policy,
        phase,
        amplitude,
        baseline,
        k_factor,
    )
    .map_err(|e| Error::format(format!("stack: invalid payload: {e}")))
}

pub fn write_mask(mask: &PixelMask, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MASK_MAGIC)?;
    let header =
        MaskHeader { width: mask.width(), height: mask.height(), source: mask.source() };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let bytes: Vec<u8> = mask.labels().iter().map(|&b| b as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<PixelMask> {
    let mut r = BufReader::new(File::open(path)?);
    let header: MaskHeader = read_magic_and_header(&mut r, MASK_MAGIC, "mask")?;
    if header.width == 0 || header.height == 0 {
        return Err(Error::format("mask: zero extent in header"));
    }
    let n = header.width as u64 * header.height as u64;
    if n > MAX_ELEMENTS {
        return Err(Error::format("mask: header dimensions overflow"));
    }
    let mut bytes = vec![0u8; n as usize];
    r.read_exact(&mut bytes).map_err(|_| Error::format("mask: truncated payload"))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::format("mask: trailing bytes after payload"));
    }
    let labels: Result<Vec<bool>> = bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(format!("mask: byte {other} is not 0/1"))),
        })
        .collect();
    PixelMask::new(header.width, header.height, header.source, labels?)
}

/// Write a probability image as 16-bit binary PGM. Values must be in [0, 1].
pub fn write_probability_pgm(plane: &Plane, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n65535\n", plane.width(), plane.height())?;
    let mut buf = Vec::with_capacity(plane.data().len() * 2);
    for &p in plane.data() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("pgm: probability {p} outside [0, 1]")));
        }
        let v = (p * 65535.0).round() as u16;
        buf.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::{quantize_phase, wrap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(seed: u64, w: usize, h: usize, n: usize) -> InterferogramStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plane = w * h;
        let phase: Vec<f64> =
            (0..plane * n).map(|_| quantize_phase(wrap(rng.gen_range(-4.0..4.0)))).collect();
        let amp: Vec<f64> = (0..plane * n).map(|_| rng.gen_range(0.0f32..3.0) as f64).collect();
        let bperp: Vec<f64> =
            (0..plane * n).map(|_| rng.gen_range(100.0f32..400.0) as f64).collect();
        let k: Vec<f64> = (0..plane).map(|_| rng.gen_range(0.0005f32..0.002) as f64).collect();
        InterferogramStack::new(
            w,
            h,
            n,
            (0..n).map(|i| 12.0 * (i + 1) as f64).collect(),
            PadPolicy::Reflect,
            phase,
            amp,
            bperp,
            k,
        )
        .unwrap()
    }

    #[test]
    fn stack_roundtrip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ifgstack");
        let stack = random_stack(7, 33, 21, 4);
        write_stack(&stack, &path).unwrap();
        let back = read_stack(&path).unwrap();
        assert_eq!(back, stack);
        // second cycle is also exact
        let path2 = dir.path().join("s2.ifgstack");
        write_stack(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn stack_corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ifgstack");
        write_stack(&random_stack(1, 10, 10, 2), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = read_stack(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn stack_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ifgstack");
        write_stack(&random_stack(2, 10, 10, 2), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = read_stack(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn stack_zero_ifgs_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ifgstack");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(STACK_MAGIC);
        bytes.extend_from_slice(
            br#"{"width":4,"height":4,"n_ifgs":0,"acquisition_days":[],"pad_policy":"reflect"}"#,
        );
        bytes.push(b'\n');
        std::fs::write(&path, &bytes).unwrap();
        let err = read_stack(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn stack_dimension_overflow() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ifgstack");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(STACK_MAGIC);
        bytes.extend_from_slice(
            br#"{"width":4000000000,"height":4000000000,"n_ifgs":10,"acquisition_days":[1,2,3,4,5,6,7,8,9,10],"pad_policy":"reflect"}"#,
        );
        bytes.push(b'\n');
        std::fs::write(&path, &bytes).unwrap();
        let err = read_stack(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn mask_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.psmask");
        let labels = (0..12 * 9).map(|i| i % 3 == 0).collect();
        let mask = PixelMask::new(12, 9, MaskSource::Classical, labels).unwrap();
        write_mask(&mask, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);

        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] = 7;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_mask(&path).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn pgm_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pgm");
        let plane = Plane::new(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.5]).unwrap();
        write_probability_pgm(&plane, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let payload = &bytes[header.len()..];
        assert_eq!(payload.len(), 12);
        let v1 = u16::from_be_bytes([payload[2], payload[3]]);
        assert_eq!(v1, (0.25f64 * 65535.0).round() as u16);
        let v4 = u16::from_be_bytes([payload[8], payload[9]]);
        assert_eq!(v4, 65535);

        let bad = Plane::new(1, 1, vec![1.5]).unwrap();
        assert!(write_probability_pgm(&bad, &path).is_err());
    }
}
