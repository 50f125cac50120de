//! Feature grids and their file formats.
//!
//! A [`FeatureGrid`] is an `H x W x d` block of reals stored row-major with
//! the channels of one cell adjacent. Images enter as binary PPM (P6) and
//! arbitrary feature maps (for example externally extracted network
//! activations) as BFM:
//!
//! ```text
//! "BFM1" | height: u32 LE | width: u32 LE | channels: u32 LE | f32 LE * (h*w*c)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{BbsError, Result};

pub const BFM_MAGIC: [u8; 4] = *b"BFM1";
const BFM_HEADER_LEN: usize = 16;

/// Variance below which a channel is treated as constant by
/// [`normalize_per_window`].
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(BbsError::Dimension(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(BbsError::Dimension(format!(
                "grid {height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(BbsError::Format(format!("non-finite value at index {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Grid filled with a single value.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds a grid by evaluating `f(y, x, c)` for every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// All channels of cell `(y, x)`.
    #[inline]
    pub fn cell(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Copies the `width x height` region whose top-left cell is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<FeatureGrid> {
        if width == 0 || height == 0 || x + width > self.width || y + height > self.height {
            return Err(BbsError::Dimension(format!(
                "crop ({x},{y},{width},{height}) outside {}x{} grid",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for row in y..y + height {
            let start = (row * self.width + x) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(FeatureGrid {
            height,
            width,
            channels: self.channels,
            data,
        })
    }

    /// Overwrites the region starting at `(x, y)` with `patch`.
    pub fn paste(&mut self, patch: &FeatureGrid, x: usize, y: usize) -> Result<()> {
        if patch.channels != self.channels
            || x + patch.width > self.width
            || y + patch.height > self.height
        {
            return Err(BbsError::Dimension(format!(
                "cannot paste {}x{}x{} at ({x},{y}) into {}x{}x{}",
                patch.width, patch.height, patch.channels, self.width, self.height, self.channels
            )));
        }
        let row_len = patch.width * self.channels;
        for row in 0..patch.height {
            let dst = ((y + row) * self.width + x) * self.channels;
            let src = row * row_len;
            self.data[dst..dst + row_len].copy_from_slice(&patch.data[src..src + row_len]);
        }
        Ok(())
    }
}

/// Loads an 8-bit binary PPM (P6) as a 3-channel grid scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| BbsError::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<FeatureGrid> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(BbsError::Format(format!(
            "expected PPM magic P6, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_header_int(next_token(bytes, &mut pos)?, "width")?;
    let height = parse_header_int(next_token(bytes, &mut pos)?, "height")?;
    let maxval = parse_header_int(next_token(bytes, &mut pos)?, "maxval")?;
    if width == 0 || height == 0 {
        return Err(BbsError::Format("PPM with zero width or height".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(BbsError::Format(format!(
            "only 8-bit PPM supported, maxval {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(BbsError::Format("missing whitespace after PPM header".into())),
    }
    let needed = width * height * 3;
    let raster = &bytes[pos..];
    if raster.len() < needed {
        return Err(BbsError::Format(format!(
            "truncated PPM payload: expected {needed} bytes, found {}",
            raster.len()
        )));
    }
    let scale = maxval as f64;
    let data = raster[..needed].iter().map(|&b| b as f64 / scale).collect();
    FeatureGrid::new(height, width, 3, data)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            None => return Err(BbsError::Format("truncated PPM header".into())),
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while let Some(b) = bytes.get(*pos) {
        if b.is_ascii_whitespace() {
            break;
        }
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_int(token: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| {
            BbsError::Format(format!(
                "bad PPM {what}: {:?}",
                String::from_utf8_lossy(token)
            ))
        })
}

/// Encodes a 3-channel grid as P6, rounding `v * 255` and clamping to `[0, 255]`.
pub fn encode_ppm(grid: &FeatureGrid) -> Result<Vec<u8>> {
    if grid.channels != 3 {
        return Err(BbsError::Dimension(format!(
            "PPM needs 3 channels, grid has {}",
            grid.channels
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    out.extend(grid.data.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn save_image(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ppm(grid)?)
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// 8-bit binary PGM of `values` (row-major, `width x height`), min-max scaled.
/// A constant input maps to all zeros.
pub fn encode_pgm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height || values.is_empty() {
        return Err(BbsError::Dimension(format!(
            "PGM {width}x{height} needs {} values, got {}",
            width * height,
            values.len()
        )));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if range > 0.0 {
            quantize((v - lo) / range)
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn encode_feature_grid(grid: &FeatureGrid) -> Result<Vec<u8>> {
    let dims = [grid.height, grid.width, grid.channels];
    let mut out = Vec::with_capacity(BFM_HEADER_LEN + grid.data.len() * 4);
    out.extend_from_slice(&BFM_MAGIC);
    for d in dims {
        let d = u32::try_from(d)
            .map_err(|_| BbsError::Dimension(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in &grid.data {
        let f = v as f32;
        if !f.is_finite() {
            return Err(BbsError::Format(format!(
                "value {v} is not representable as a finite binary32"
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feature_grid(bytes: &[u8]) -> Result<FeatureGrid> {
    if bytes.len() < BFM_HEADER_LEN {
        return Err(BbsError::Format(format!(
            "BFM header needs {BFM_HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    if bytes[..4] != BFM_MAGIC {
        return Err(BbsError::Format(format!(
            "bad BFM magic {:02x?}",
            &bytes[..4]
        )));
    }
    let read_u32 = |at: usize| {
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as usize
    };
    let (height, width, channels) = (read_u32(4), read_u32(8), read_u32(12));
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| BbsError::Format("BFM dimensions overflow".into()))?;
    let payload = &bytes[BFM_HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(BbsError::Format(format!(
            "BFM header {height}x{width}x{channels} declares {count} floats, payload holds {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    FeatureGrid::new(height, width, channels, data)
}

pub fn load_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| BbsError::io(path, e))?;
    decode_feature_grid(&bytes)
}

/// Writes a grid as BFM. Values are rounded to binary32.
pub fn save_feature_grid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_feature_grid(grid)?)
}

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| BbsError::io(path, std::io::ErrorKind::InvalidInput.into()))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(BbsError::io(path, e));
    }
    Ok(())
}

/// Hexcone RGB to HSV. All three output channels lie in `[0, 1]`; hue is
/// divided by 360 degrees and is 0 for achromatic pixels.
pub fn rgb_to_hsv(grid: &FeatureGrid) -> Result<FeatureGrid> {
    if grid.channels != 3 {
        return Err(BbsError::Dimension(format!(
            "HSV conversion needs 3 channels, grid has {}",
            grid.channels
        )));
    }
    let mut data = Vec::with_capacity(grid.data.len());
    for px in grid.data.chunks_exact(3) {
        let [h, s, v] = hsv_pixel(px[0], px[1], px[2]);
        data.extend_from_slice(&[h, s, v]);
    }
    FeatureGrid::new(grid.height, grid.width, 3, data)
}

fn hsv_pixel(r: f64, g: f64, b: f64) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, v];
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let h = sector / 6.0;
    // rem_euclid can land exactly on 6.0 for tiny negative inputs
    [if h >= 1.0 { 0.0 } else { h }, s, v]
}

/// Shifts and scales each channel to zero mean and unit population variance
/// over the grid. Channels with variance below [`DEGENERATE_VARIANCE`] become
/// all zeros.
pub fn normalize_per_window(window: &FeatureGrid) -> FeatureGrid {
    let d = window.channels;
    let n = (window.height * window.width) as f64;
    let mut mean = vec![0.0; d];
    for px in window.data.chunks_exact(d) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for px in window.data.chunks_exact(d) {
        for c in 0..d {
            let dv = px[c] - mean[c];
            var[c] += dv * dv;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|&s| {
            let v = s / n;
            if v < DEGENERATE_VARIANCE {
                0.0
            } else {
                1.0 / v.sqrt()
            }
        })
        .collect();
    let mut data = Vec::with_capacity(window.data.len());
    for px in window.data.chunks_exact(d) {
        for c in 0..d {
            data.push((px[c] - mean[c]) * scale[c]);
        }
    }
    FeatureGrid {
        height: window.height,
        width: window.width,
        channels: d,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn white_pixel_ppm() {
        let g = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_pixel_ppm_with_comment() {
        let g = decode_ppm(b"P6 # comment\n2 1\n255\n\xff\x00\x00\x00\x00\xff").unwrap();
        assert_eq!((g.height(), g.width(), g.channels()), (1, 2, 3));
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn malformed_ppm() {
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\x00"), Err(BbsError::Format(_))));
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\x00\x00"), Err(BbsError::Format(_))));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\x00"), Err(BbsError::Format(_))));
        assert!(matches!(decode_ppm(b"P6\n1"), Err(BbsError::Format(_))));
    }

    #[test]
    fn hsv_reference_colors() {
        let g = FeatureGrid::new(
            1,
            4,
            3,
            vec![1.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let h = rgb_to_hsv(&g).unwrap();
        assert_eq!(h.cell(0, 0), &[0.0, 1.0, 1.0]);
        assert_eq!(h.cell(0, 1), &[0.0, 0.0, 0.5]);
        let green = h.cell(0, 2);
        assert!(approx(green[0], 1.0 / 3.0) && green[1] == 1.0 && green[2] == 1.0);
        assert!(approx(h.cell(0, 3)[0], 2.0 / 3.0));
    }

    #[test]
    fn hsv_rejects_wrong_channels() {
        let g = FeatureGrid::filled(2, 2, 1, 0.5).unwrap();
        assert!(matches!(rgb_to_hsv(&g), Err(BbsError::Dimension(_))));
    }

    #[test]
    fn bfm_hand_written_fixture() {
        let mut bytes = b"BFM1".to_vec();
        for d in [1u32, 1, 2] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&[0x00, 0x00, 0xc0, 0x3f]); // 1.5
        bytes.extend_from_slice(&[0x00, 0x00, 0x00, 0xc0]); // -2.0
        let g = decode_feature_grid(&bytes).unwrap();
        assert_eq!((g.height(), g.width(), g.channels()), (1, 1, 2));
        assert_eq!(g.data(), &[1.5, -2.0]);
        assert_eq!(encode_feature_grid(&g).unwrap(), bytes);
    }

    #[test]
    fn bfm_truncated_payload() {
        let mut bytes = b"BFM1".to_vec();
        for d in [2u32, 3, 4] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend(std::iter::repeat_n(0u8, 23 * 4));
        assert!(matches!(decode_feature_grid(&bytes), Err(BbsError::Format(_))));
    }

    #[test]
    fn bfm_bad_magic_and_non_finite() {
        let mut bytes = b"BFM2".to_vec();
        bytes.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(decode_feature_grid(&bytes).is_err());
        bytes[3] = b'1';
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_feature_grid(&bytes), Err(BbsError::Format(_))));
    }

    #[test]
    fn normalize_degenerate_and_symmetric() {
        let g = FeatureGrid::new(1, 2, 2, vec![3.0, -1.0, 3.0, 1.0]).unwrap();
        let n = normalize_per_window(&g);
        assert_eq!(n.data(), &[0.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn crop_and_paste() {
        let g = FeatureGrid::from_fn(4, 5, 2, |y, x, c| (y * 100 + x * 10 + c) as f64).unwrap();
        let c = g.crop(1, 2, 3, 2).unwrap();
        assert_eq!(c.cell(0, 0), g.cell(2, 1));
        assert_eq!(c.cell(1, 2), g.cell(3, 3));
        let mut z = FeatureGrid::filled(4, 5, 2, 0.0).unwrap();
        z.paste(&c, 1, 2).unwrap();
        assert_eq!(z.cell(3, 3), g.cell(3, 3));
        assert_eq!(z.cell(0, 0), &[0.0, 0.0]);
        assert!(g.crop(3, 0, 3, 1).is_err());
    }

    #[test]
    fn pgm_scaling() {
        let p = encode_pgm(&[0.0, 0.5, 1.0, 2.0], 2, 2).unwrap();
        assert!(p.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&p[p.len() - 4..], &[0, 64, 128, 255]);
    }
}
