//! Content-addressed frame storage: `frames/<first-2-hex>/<hash>.jpg`.

use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::RgbImage;
use sha2::{Digest, Sha256};

/// Longest side of a stored frame, in pixels.
pub const MAX_FRAME_SIDE: u32 = 768;
pub const JPEG_QUALITY: u8 = 90;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn is_valid_hash(hash: &str) -> bool {
    hash.len() == 64 && hash.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// Downscale to [`MAX_FRAME_SIDE`] if needed and encode as JPEG.
pub fn encode_frame(img: &RgbImage) -> Vec<u8> {
    let (w, h) = img.dimensions();
    let longest = w.max(h);
    let scaled;
    let img = if longest > MAX_FRAME_SIDE {
        let nw = ((w as u64 * MAX_FRAME_SIDE as u64) / longest as u64).max(1) as u32;
        let nh = ((h as u64 * MAX_FRAME_SIDE as u64) / longest as u64).max(1) as u32;
        scaled = image::imageops::resize(img, nw, nh, FilterType::Triangle);
        &scaled
    } else {
        img
    };
    let mut out = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY)
        .encode_image(img)
        .expect("in-memory JPEG encoding cannot fail for RGB8");
    out.into_inner()
}

#[derive(Debug, Clone)]
pub struct FrameStore {
    root: PathBuf,
}

impl FrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Store-relative location of a frame.
    pub fn relative_location(hash: &str) -> String {
        format!("frames/{}/{}.jpg", &hash[..2], hash)
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.root.join(Self::relative_location(hash))
    }

    pub fn contains(&self, hash: &str) -> bool {
        is_valid_hash(hash) && self.path_for(hash).is_file()
    }

    pub fn get(&self, hash: &str) -> std::io::Result<Vec<u8>> {
        if !is_valid_hash(hash) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "not a sha256 hex digest",
            ));
        }
        fs::read(self.path_for(hash))
    }

    /// Write bytes under their digest. A second write of the same content is a no-op.
    pub fn put(&self, bytes: &[u8]) -> std::io::Result<String> {
        let hash = sha256_hex(bytes);
        let dest = self.path_for(&hash);
        if dest.is_file() {
            return Ok(hash);
        }
        let dir = dest.parent().expect("frame path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        match tmp.persist_noclobber(&dest) {
            Ok(_) => Ok(hash),
            // another writer won the race with identical bytes
            Err(_) if dest.is_file() => Ok(hash),
            Err(e) => Err(e.error),
        }
    }
}
