//! Frames, boxes, patch resampling and frame-directory ingestion.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MIN_FRAME_SIDE: usize = 16;

/// An 8-bit grayscale raster with its position in the sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
    index: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>, index: usize) -> Result<Self> {
        if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
            return Err(Error::FrameTooSmall(width, height));
        }
        if data.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "buffer holds {} values, expected {}x{} = {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            index,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8, index: usize) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], index)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Intensities scaled to [0, 1].
    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v) / 255.0).collect()
    }
}

/// Frames in temporal order; all share one size.
#[derive(Debug, Clone, Default)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let (w, h) = first.dims();
            for f in &frames {
                if f.dims() != (w, h) {
                    return Err(Error::DimensionMismatch {
                        file: format!("frame {}", f.index()),
                        got_w: f.width(),
                        got_h: f.height(),
                        want_w: w,
                        want_h: h,
                    });
                }
            }
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    /// Writes every frame as `frame_00000.pgm`, ... into `dir`.
    pub fn write_pgm_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for f in &self.frames {
            write_pgm(&dir.join(format!("frame_{:05}.pgm", f.index())), f.width(), f.height(), f.data())?;
        }
        Ok(())
    }
}

/// Axis-aligned pixel box. Covers columns `x..x + w` and rows `y..y + h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn aspect(&self) -> f64 {
        self.w as f64 / self.h as f64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= width && self.bottom() <= height
    }

    /// Number of pixels shared by both boxes.
    pub fn overlap_area(&self, other: &BoundingBox) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.overlap_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Places a `w`×`h` box centered on `(cx, cy)`. The box is shifted to
    /// lie inside the frame; it is only cut when it is larger than the frame.
    /// Returns `None` when less than 4×4 remains.
    pub fn centered_clamped(cx: f64, cy: f64, w: usize, h: usize, width: usize, height: usize) -> Option<Self> {
        let place = |c: f64, len: usize, limit: usize| -> (usize, usize) {
            if len >= limit {
                return (0, limit);
            }
            let start = (c - len as f64 / 2.0).round().max(0.0) as usize;
            (start.min(limit - len), len)
        };
        let (x, w) = place(cx, w, width);
        let (y, h) = place(cy, h, height);
        (w >= 4 && h >= 4).then_some(Self::new(x, y, w, h))
    }
}

/// A small 8-bit raster cut out of a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Patch {
    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v) / 255.0).collect()
    }
}

/// Bilinear resample of `bbox` within `frame` to `target_w`×`target_h`.
///
/// Sample centers are aligned (half-pixel convention) and clamped to the box,
/// so a box already of the target size is copied unchanged.
pub fn crop_resize(frame: &Frame, bbox: &BoundingBox, target_w: usize, target_h: usize) -> Result<Patch> {
    if !bbox.fits_in(frame.width(), frame.height()) {
        return Err(Error::Geometry(format!(
            "box {:?} outside {}x{} frame",
            bbox,
            frame.width(),
            frame.height()
        )));
    }
    if target_w < 4 || target_h < 4 {
        return Err(Error::Geometry(format!(
            "target {target_w}x{target_h} smaller than 4x4"
        )));
    }
    let sx = bbox.w as f64 / target_w as f64;
    let sy = bbox.h as f64 / target_h as f64;
    let max_x = (bbox.w - 1) as f64;
    let max_y = (bbox.h - 1) as f64;
    let mut data = Vec::with_capacity(target_w * target_h);
    for j in 0..target_h {
        let fy = ((j as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(bbox.h - 1);
        let ty = fy - y0 as f64;
        for i in 0..target_w {
            let fx = ((i as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(bbox.w - 1);
            let tx = fx - x0 as f64;
            let p = |x: usize, y: usize| f64::from(frame.get(bbox.x + x, bbox.y + y));
            let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
            let bot = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
            let v = top * (1.0 - ty) + bot * ty;
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(Patch {
        width: target_w,
        height: target_h,
        data,
    })
}

const EXTENSIONS: &[&str] = &["pgm", "ppm", "pnm", "pbm", "png"];

/// Loads every raster in `dir`, ordered lexicographically by file name.
pub fn load_sequence(dir: &Path) -> Result<FrameSequence> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    if paths.is_empty() {
        return Err(Error::EmptyInput(dir.to_path_buf()));
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut frames = Vec::with_capacity(paths.len());
    let mut dims: Option<(usize, usize)> = None;
    for (index, path) in paths.iter().enumerate() {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let img = image::open(path)
            .map_err(|e| Error::Unreadable {
                file: name.clone(),
                message: e.to_string(),
            })?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        match dims {
            None => dims = Some((w, h)),
            Some((want_w, want_h)) if (want_w, want_h) != (w, h) => {
                return Err(Error::DimensionMismatch {
                    file: name,
                    got_w: w,
                    got_h: h,
                    want_w,
                    want_h,
                })
            }
            Some(_) => {}
        }
        let frame = Frame::new(w, h, img.into_raw(), index).map_err(|e| Error::Unreadable {
            file: name,
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    if frames.len() < 2 {
        return Err(Error::InvalidFrame(format!(
            "{} holds a single frame; at least 2 are required",
            dir.display()
        )));
    }
    Ok(FrameSequence { frames })
}

/// Binary portable graymap (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(data)?;
    f.flush()?;
    Ok(())
}

/// Binary portable bitmap (P4); `true` is written as a set (black) bit.
pub fn write_pbm(path: &Path, width: usize, height: usize, bits: &[bool]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "P4\n{width} {height}\n")?;
    let row_bytes = width.div_ceil(8);
    for row in bits.chunks(width) {
        let mut packed = vec![0u8; row_bytes];
        for (x, &b) in row.iter().enumerate() {
            if b {
                packed[x / 8] |= 0x80 >> (x % 8);
            }
        }
        f.write_all(&packed)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Frame {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(f(x, y));
            }
        }
        Frame::new(w, h, data, 0).unwrap()
    }

    #[test]
    fn frame_invariants() {
        assert!(matches!(Frame::new(8, 32, vec![0; 256], 0), Err(Error::FrameTooSmall(8, 32))));
        assert!(Frame::new(16, 16, vec![0; 10], 0).is_err());
        assert!(Frame::new(16, 16, vec![0; 256], 3).is_ok());
    }

    #[test]
    fn constant_frame_resamples_to_constant() {
        let f = Frame::filled(40, 30, 128, 0).unwrap();
        for (b, tw, th) in [
            (BoundingBox::new(3, 4, 10, 20), 24, 56),
            (BoundingBox::new(0, 0, 40, 30), 7, 5),
            (BoundingBox::new(20, 10, 5, 5), 4, 4),
        ] {
            let p = crop_resize(&f, &b, tw, th).unwrap();
            assert_eq!((p.width, p.height), (tw, th));
            assert!(p.data.iter().all(|&v| v == 128));
        }
    }

    #[test]
    fn same_size_resample_is_identity() {
        let f = frame_from_fn(32, 24, |x, y| ((x * 7 + y * 13) % 256) as u8);
        let b = BoundingBox::new(5, 3, 9, 14);
        let p = crop_resize(&f, &b, 9, 14).unwrap();
        for j in 0..14 {
            for i in 0..9 {
                assert_eq!(p.data[j * 9 + i], f.get(5 + i, 3 + j));
            }
        }
    }

    #[test]
    fn checkerboard_upscale_matches_hand_bilinear() {
        // 2x2 checkerboard [[0,255],[255,0]] placed at (4,4). Sample positions
        // along each axis are 0, 0.25, 0.75, 1 and f(x,y) = 255(x + y - 2xy).
        let f = frame_from_fn(16, 16, |x, y| match (x, y) {
            (4, 4) | (5, 5) => 0,
            (5, 4) | (4, 5) => 255,
            _ => 7,
        });
        let p = crop_resize(&f, &BoundingBox::new(4, 4, 2, 2), 4, 4).unwrap();
        let expected: [u8; 16] = [
            0, 64, 191, 255, //
            64, 96, 159, 191, //
            191, 159, 96, 64, //
            255, 191, 64, 0,
        ];
        assert_eq!(p.data, expected);
    }

    #[test]
    fn box_outside_frame_is_rejected() {
        let f = Frame::filled(16, 16, 0, 0).unwrap();
        assert!(matches!(
            crop_resize(&f, &BoundingBox::new(10, 10, 8, 4), 4, 4),
            Err(Error::Geometry(_))
        ));
        assert!(crop_resize(&f, &BoundingBox::new(0, 0, 8, 8), 3, 4).is_err());
    }

    #[test]
    fn overlap_and_iou() {
        let a = BoundingBox::new(0, 0, 10, 10);
        assert_eq!(a.overlap_area(&a), 100);
        assert_eq!(a.iou(&a), 1.0);
        let b = BoundingBox::new(9, 0, 10, 10);
        assert_eq!(a.overlap_area(&b), 10);
        let c = BoundingBox::new(10, 0, 10, 10);
        assert_eq!(a.overlap_area(&c), 0);
        assert_eq!(a.iou(&c), 0.0);
    }

    #[test]
    fn centered_clamped_clips_to_frame() {
        let b = BoundingBox::centered_clamped(2.0, 2.0, 10, 20, 64, 48).unwrap();
        assert_eq!(b, BoundingBox::new(0, 0, 10, 20));
        let b = BoundingBox::centered_clamped(62.0, 30.0, 10, 20, 64, 48).unwrap();
        assert_eq!(b, BoundingBox::new(54, 20, 10, 20));
        let b = BoundingBox::centered_clamped(30.0, 24.0, 10, 60, 64, 48).unwrap();
        assert_eq!(b, BoundingBox::new(25, 0, 10, 48));
        assert!(BoundingBox::centered_clamped(5.0, 5.0, 3, 10, 64, 48).is_none());
    }
}
