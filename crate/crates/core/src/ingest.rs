//! Frame ingestion: frame-rate reduction and letterboxed square resizing of
//! an image-directory or raw RGB24 stream.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::resize_rgb_bilinear;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid ingest configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed media: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// One normalized frame of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Ordinal within the downsampled stream.
    pub index: usize,
    /// Ordinal within the original footage.
    pub source_index: usize,
    pub image: RgbImage,
}

impl Frame {
    pub fn new(index: usize, source_index: usize, image: RgbImage) -> Result<Self, IngestError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(IngestError::Malformed("zero-area frame".into()));
        }
        Ok(Self {
            index,
            source_index,
            image,
        })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub target_fps: f64,
    pub target_size: u32,
    /// Frame rate of the input. `None` means the input is already at the target rate.
    pub source_fps: Option<f64>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            target_fps: 3.0,
            target_size: 640,
            source_fps: None,
        }
    }
}

impl IngestConfig {
    pub fn effective_source_fps(&self) -> f64 {
        self.source_fps.unwrap_or(self.target_fps)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        check_rates(self.effective_source_fps(), self.target_fps)?;
        if self.target_size == 0 {
            return Err(IngestError::InvalidConfig(
                "target size must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn check_rates(source_fps: f64, target_fps: f64) -> Result<(), IngestError> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(IngestError::InvalidConfig(format!(
            "target fps must be positive, got {target_fps}"
        )));
    }
    if !source_fps.is_finite() || target_fps > source_fps {
        return Err(IngestError::InvalidConfig(format!(
            "target fps {target_fps} exceeds source fps {source_fps}"
        )));
    }
    Ok(())
}

#[inline]
fn kept_ordinal(k: usize, source_fps: f64, target_fps: f64) -> usize {
    (k as f64 * source_fps / target_fps).floor() as usize
}

/// Source ordinals kept when reducing `source_fps` to `target_fps`:
/// `floor(k * source_fps / target_fps)` for `k = 0, 1, ...` below `frame_count`.
pub fn downsample_indices(
    source_fps: f64,
    target_fps: f64,
    frame_count: usize,
) -> Result<Vec<usize>, IngestError> {
    check_rates(source_fps, target_fps)?;
    Ok((0..)
        .map(|k| kept_ordinal(k, source_fps, target_fps))
        .take_while(|&i| i < frame_count)
        .collect())
}

/// Placement of the scaled content inside the square canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Letterbox {
    pub content_width: u32,
    pub content_height: u32,
    pub offset_x: u32,
    pub offset_y: u32,
}

impl Letterbox {
    pub fn for_size(width: u32, height: u32, target: u32) -> Self {
        let scale = target as f64 / width.max(height) as f64;
        let cw = ((width as f64 * scale).round() as u32).clamp(1, target);
        let ch = ((height as f64 * scale).round() as u32).clamp(1, target);
        Self {
            content_width: cw,
            content_height: ch,
            offset_x: (target - cw) / 2,
            offset_y: (target - ch) / 2,
        }
    }
}

/// Bilinear resize into a `target_size` square with black letterbox bars.
pub fn resize_frame(frame: &Frame, target_size: u32) -> Result<Frame, IngestError> {
    let (w, h) = (frame.width(), frame.height());
    if w == 0 || h == 0 {
        return Err(IngestError::Malformed("zero-area frame".into()));
    }
    if target_size == 0 {
        return Err(IngestError::InvalidConfig(
            "target size must be positive".into(),
        ));
    }
    if w == target_size && h == target_size {
        return Ok(frame.clone());
    }
    let lb = Letterbox::for_size(w, h, target_size);
    let content = resize_rgb_bilinear(&frame.image, lb.content_width, lb.content_height);
    let mut out = RgbImage::from_pixel(target_size, target_size, Rgb([0, 0, 0]));
    image::imageops::replace(&mut out, &content, lb.offset_x as i64, lb.offset_y as i64);
    Ok(Frame {
        index: frame.index,
        source_index: frame.source_index,
        image: out,
    })
}

/// Sequential producer of raw source frames.
pub trait FrameSource {
    /// Advances one source frame. When `decode` is false the frame may be
    /// skipped without decoding and `Ok(None)` returned.
    fn advance(&mut self, decode: bool) -> Option<Result<Option<RgbImage>, IngestError>>;
}

/// Numbered image files in a directory, visited in lexicographic order.
pub struct ImageDirSource {
    files: std::vec::IntoIter<PathBuf>,
}

impl ImageDirSource {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, IngestError> {
        let dir = dir.as_ref();
        let io_err = |source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            if is_frame_file(&path) {
                files.push(path);
            }
        }
        files.sort();
        Ok(Self {
            files: files.into_iter(),
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.len() == 0
    }
}

pub(crate) fn is_frame_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            .unwrap_or(false)
}

impl FrameSource for ImageDirSource {
    fn advance(&mut self, decode: bool) -> Option<Result<Option<RgbImage>, IngestError>> {
        let path = self.files.next()?;
        if !decode {
            return Some(Ok(None));
        }
        Some(
            image::open(&path)
                .map(|img| Some(img.to_rgb8()))
                .map_err(|source| IngestError::Decode { path, source }),
        )
    }
}

/// Headerless RGB24 frames of fixed geometry read back to back.
pub struct RawRgbSource<R> {
    reader: R,
    width: u32,
    height: u32,
    buf: Vec<u8>,
}

impl<R: Read> RawRgbSource<R> {
    pub fn new(reader: R, width: u32, height: u32) -> Result<Self, IngestError> {
        if width == 0 || height == 0 {
            return Err(IngestError::InvalidConfig(
                "raw geometry must be non-zero".into(),
            ));
        }
        Ok(Self {
            reader,
            width,
            height,
            buf: vec![0; width as usize * height as usize * 3],
        })
    }
}

impl<R: Read> FrameSource for RawRgbSource<R> {
    fn advance(&mut self, decode: bool) -> Option<Result<Option<RgbImage>, IngestError>> {
        let mut filled = 0;
        while filled < self.buf.len() {
            match self.reader.read(&mut self.buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Some(Err(IngestError::Io {
                        path: PathBuf::from("-"),
                        source,
                    }))
                }
            }
        }
        if filled == 0 {
            return None;
        }
        if filled < self.buf.len() {
            return Some(Err(IngestError::Malformed(format!(
                "truncated raw frame: {filled} of {} bytes",
                self.buf.len()
            ))));
        }
        if !decode {
            return Some(Ok(None));
        }
        Some(Ok(RgbImage::from_raw(
            self.width,
            self.height,
            self.buf.clone(),
        )))
    }
}

/// In-memory frames, mainly for synthetic scenes and tests.
pub struct MemorySource {
    frames: std::vec::IntoIter<RgbImage>,
}

impl MemorySource {
    pub fn new(frames: Vec<RgbImage>) -> Self {
        Self {
            frames: frames.into_iter(),
        }
    }
}

impl FrameSource for MemorySource {
    fn advance(&mut self, _decode: bool) -> Option<Result<Option<RgbImage>, IngestError>> {
        self.frames.next().map(|f| Ok(Some(f)))
    }
}

/// Normalized frame stream: downsampled then letterboxed to the target size.
pub struct Ingest<S> {
    source: S,
    source_fps: f64,
    target_fps: f64,
    target_size: u32,
    source_pos: usize,
    kept: usize,
    failed: bool,
}

impl<S: FrameSource> Ingest<S> {
    pub fn new(source: S, config: &IngestConfig) -> Result<Self, IngestError> {
        config.validate()?;
        Ok(Self {
            source,
            source_fps: config.effective_source_fps(),
            target_fps: config.target_fps,
            target_size: config.target_size,
            source_pos: 0,
            kept: 0,
            failed: false,
        })
    }
}

impl<S: FrameSource> Iterator for Ingest<S> {
    type Item = Result<Frame, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let wanted = kept_ordinal(self.kept, self.source_fps, self.target_fps);
        loop {
            let pos = self.source_pos;
            let keep = pos == wanted;
            let item = self.source.advance(keep)?;
            self.source_pos += 1;
            let image = match item {
                Ok(Some(img)) if keep => img,
                Ok(_) => continue,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            };
            let result =
                Frame::new(self.kept, pos, image).and_then(|f| resize_frame(&f, self.target_size));
            self.kept += 1;
            if result.is_err() {
                self.failed = true;
            }
            return Some(result);
        }
    }
}
