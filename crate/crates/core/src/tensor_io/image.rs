//! Binary PGM (`P5`) and PPM (`P6`) images with maxval 255.

use std::fs;
use std::path::Path;

use super::TensorError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        samples: Vec<u8>,
    ) -> Result<Self, TensorError> {
        if channels != 1 && channels != 3 {
            return Err(TensorError::Image(format!(
                "unsupported channel count {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(TensorError::Image("image has a zero dimension".into()));
        }
        if samples.len() != width * height * channels {
            return Err(TensorError::Image(format!(
                "expected {} samples, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn gray(width: usize, height: usize, samples: Vec<u8>) -> Result<Self, TensorError> {
        Self::new(width, height, 1, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Grows the image to `(width, height)` by replicating the last row and column.
    pub fn pad_edge(&self, width: usize, height: usize) -> Image {
        assert!(width >= self.width && height >= self.height);
        let ch = self.channels;
        let mut samples = Vec::with_capacity(width * height * ch);
        for y in 0..height {
            let sy = y.min(self.height - 1);
            for x in 0..width {
                let sx = x.min(self.width - 1);
                let at = (sy * self.width + sx) * ch;
                samples.extend_from_slice(&self.samples[at..at + ch]);
            }
        }
        Image {
            width,
            height,
            channels: ch,
            samples,
        }
    }

    pub fn crop(&self, width: usize, height: usize) -> Image {
        assert!(width <= self.width && height <= self.height && width > 0 && height > 0);
        let ch = self.channels;
        let mut samples = Vec::with_capacity(width * height * ch);
        for y in 0..height {
            let at = y * self.width * ch;
            samples.extend_from_slice(&self.samples[at..at + width * ch]);
        }
        Image {
            width,
            height,
            channels: ch,
            samples,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut pos = 0usize;
        let magic = next_token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => {
                return Err(TensorError::Image(format!(
                    "unsupported format magic {other:?} (only P5/P6)"
                )))
            }
        };
        let width = parse_dim(&next_token(bytes, &mut pos)?, "width")?;
        let height = parse_dim(&next_token(bytes, &mut pos)?, "height")?;
        let maxval = next_token(bytes, &mut pos)?;
        if maxval != "255" {
            return Err(TensorError::Image(format!(
                "maxval must be 255, got {maxval}"
            )));
        }
        // Exactly one whitespace byte separates maxval from the raster.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(TensorError::Image("missing raster separator".into()));
        }
        pos += 1;
        let need = width * height * channels;
        if bytes.len() - pos < need {
            return Err(TensorError::Image(format!(
                "truncated raster: need {need} bytes, have {}",
                bytes.len() - pos
            )));
        }
        Self::new(width, height, channels, bytes[pos..pos + need].to_vec())
    }
}

fn parse_dim(tok: &str, what: &str) -> Result<usize, TensorError> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(TensorError::Image(format!("invalid {what} {tok:?}"))),
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String, TensorError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(TensorError::Image("truncated header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TensorError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Image::from_bytes(&bytes)
}

pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<(), TensorError> {
    let path = path.as_ref();
    fs::write(path, img.to_bytes()).map_err(|e| TensorError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_gray() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 64, 128, 255]);
        let img = Image::from_bytes(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.samples(), &[0, 64, 128, 255]);
    }

    #[test]
    fn comments_before_maxval() {
        let mut bytes = b"P6\n# made by hand\n1 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        let img = Image::from_bytes(&bytes).unwrap();
        assert_eq!(img.channels(), 3);
    }

    #[test]
    fn rejects_bitmap_magic() {
        let err = Image::from_bytes(b"P4 1 1\n\x80").unwrap_err();
        assert!(err.to_string().contains("unsupported"));
    }

    #[test]
    fn rejects_16bit_maxval() {
        assert!(Image::from_bytes(b"P5 1 1 65535\n\0\0").is_err());
    }

    #[test]
    fn rejects_truncated_raster() {
        assert!(Image::from_bytes(b"P5 2 2 255\n\0\0\0").is_err());
    }

    #[test]
    fn pad_then_crop() {
        let img = Image::gray(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let padded = img.pad_edge(4, 4);
        assert_eq!(
            padded.samples(),
            &[1, 2, 3, 3, 4, 5, 6, 6, 4, 5, 6, 6, 4, 5, 6, 6]
        );
        assert_eq!(padded.crop(3, 2), img);
    }

    proptest! {
        #[test]
        fn roundtrip_identity(w in 1usize..24, h in 1usize..24, rgb in any::<bool>(), seed in any::<u64>()) {
            let ch = if rgb { 3 } else { 1 };
            let mut state = seed | 1;
            let samples: Vec<u8> = (0..w * h * ch)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 24) as u8
                })
                .collect();
            let img = Image::new(w, h, ch, samples).unwrap();
            prop_assert_eq!(Image::from_bytes(&img.to_bytes()).unwrap(), img);
        }
    }
}
