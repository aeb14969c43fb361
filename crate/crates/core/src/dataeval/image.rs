use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::diffcore::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 8-bit RGB image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("image must be at least 1x1, got {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Image(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Self::new(w, h, data)
    }

    /// Removes `s` pixels from every border.
    pub fn shave(&self, s: usize) -> Result<Self> {
        if 2 * s >= self.width || 2 * s >= self.height {
            return Err(Error::Image(format!("cannot shave {s} px from {}x{}", self.width, self.height)));
        }
        self.crop(s, s, self.width - 2 * s, self.height - 2 * s)
    }

    /// Channel planes scaled to `[0, 1]`.
    pub fn planes(&self) -> [Vec<f64>; 3] {
        std::array::from_fn(|c| self.data.iter().skip(c).step_by(3).map(|&v| v as f64 / 255.0).collect())
    }

    /// Rounds and clips `[0, 1]` planes back to 8 bits.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>; 3]) -> Result<Self> {
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::Image("plane sizes disagree with image size".into()));
        }
        let data = (0..n)
            .flat_map(|i| planes.iter().map(move |p| quantize(p[i])))
            .collect();
        Self::new(width, height, data)
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Stacks images of equal size into a `(B, 3, H, W)` tensor in `[0, 1]`.
pub fn images_to_tensor<T: Scalar>(images: &[&ImageRGB]) -> Result<Tensor4<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to stack".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width != w || img.height != h {
            return Err(Error::Image(format!(
                "cannot stack {}x{} with {w}x{h}",
                img.width, img.height
            )));
        }
        for p in img.planes() {
            data.extend(p.into_iter().map(T::of));
        }
    }
    Tensor4::from_vec([images.len(), 3, h, w], data)
}

/// Image `b` of a `(B, 3, H, W)` tensor, rounded and clipped to 8 bits.
pub fn tensor_to_image<T: Scalar>(t: &Tensor4<T>, b: usize) -> Result<ImageRGB> {
    let [n, c, h, w] = t.shape();
    if c != 3 || b >= n {
        return Err(Error::shape("tensor_to_image", format!("{:?}, index {b}", t.shape())));
    }
    let plane = h * w;
    let planes = std::array::from_fn(|ch| {
        let off = (b * 3 + ch) * plane;
        t.data()[off..off + plane].iter().map(|v| v.to_f64_lossy()).collect()
    });
    ImageRGB::from_planes(w, h, &planes)
}

pub fn load_png(path: &Path) -> Result<ImageRGB> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |e: png::DecodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    let data: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => px.to_vec(),
        png::ColorType::Rgba => px.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => px.iter().flat_map(|&v| [v; 3]).collect(),
        png::ColorType::GrayscaleAlpha => px.chunks_exact(2).flat_map(|p| [p[0]; 3]).collect(),
        other => return Err(Error::Image(format!("{}: unsupported color type {other:?}", path.display()))),
    };
    ImageRGB::new(w, h, data)
}

pub fn save_png(img: &ImageRGB, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bad = |e: png::EncodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut w = enc.write_header().map_err(bad)?;
    w.write_image_data(&img.data).map_err(bad)?;
    w.finish().map_err(bad)
}

/// Every `.png` in `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}
