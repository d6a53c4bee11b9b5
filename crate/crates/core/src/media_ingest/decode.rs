//! Clip decoding.
//!
//! Two sources are supported: the native `VRCLIP1` container (a header line
//! followed by length-prefixed PNG frames, written by the synthetic corpus
//! generator) and any format `ffmpeg` understands, decoded by spawning the
//! external `ffmpeg`/`ffprobe` binaries.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::IngestError;

pub const VRCLIP_MAGIC: &[u8; 8] = b"VRCLIP1\n";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipProbe {
    pub duration: f64,
    pub fps: f64,
    pub frame_count: usize,
}

pub trait ClipDecoder: Send + Sync {
    fn probe(&self, path: &Path) -> Result<ClipProbe, IngestError>;

    /// Decode the frames at the given absolute frame indices, in order.
    fn frames(&self, path: &Path, indices: &[usize]) -> Result<Vec<RgbImage>, IngestError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VrClipHeader {
    fps: f64,
    width: u32,
    height: u32,
    frame_count: usize,
}

/// Streaming writer for the native container.
pub struct VrClipWriter<W: Write> {
    out: W,
    remaining: usize,
}

impl<W: Write> VrClipWriter<W> {
    pub fn new(mut out: W, fps: f64, width: u32, height: u32, frame_count: usize) -> std::io::Result<Self> {
        out.write_all(VRCLIP_MAGIC)?;
        let header = VrClipHeader { fps, width, height, frame_count };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        Ok(Self { out, remaining: frame_count })
    }

    /// Append one frame as PNG bytes.
    pub fn push_png(&mut self, png: &[u8]) -> std::io::Result<()> {
        if self.remaining == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "more frames than declared in header",
            ));
        }
        self.remaining -= 1;
        self.out.write_all(&(png.len() as u32).to_le_bytes())?;
        self.out.write_all(png)
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if self.remaining != 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("{} declared frames missing", self.remaining),
            ));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn is_vrclip(path: &Path) -> bool {
    let mut magic = [0u8; 8];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map(|_| &magic == VRCLIP_MAGIC)
        .unwrap_or(false)
}

pub fn is_vrclip_bytes(bytes: &[u8]) -> bool {
    bytes.starts_with(VRCLIP_MAGIC)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct VrClipDecoder;

impl VrClipDecoder {
    fn open(path: &Path) -> Result<(BufReader<File>, VrClipHeader), IngestError> {
        let file = File::open(path).map_err(|e| IngestError::unreadable(path, e))?;
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 8];
        reader
            .read_exact(&mut magic)
            .map_err(|e| IngestError::unreadable(path, e))?;
        if &magic != VRCLIP_MAGIC {
            return Err(IngestError::unreadable(path, "not a VRCLIP1 container"));
        }
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| IngestError::unreadable(path, e))?;
        let header: VrClipHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| IngestError::unreadable(path, e))?;
        if !(header.fps > 0.0) || header.frame_count == 0 {
            return Err(IngestError::unreadable(path, "invalid container header"));
        }
        Ok((reader, header))
    }
}

impl ClipDecoder for VrClipDecoder {
    fn probe(&self, path: &Path) -> Result<ClipProbe, IngestError> {
        let (_, header) = Self::open(path)?;
        Ok(ClipProbe {
            duration: header.frame_count as f64 / header.fps,
            fps: header.fps,
            frame_count: header.frame_count,
        })
    }

    fn frames(&self, path: &Path, indices: &[usize]) -> Result<Vec<RgbImage>, IngestError> {
        let (mut reader, header) = Self::open(path)?;
        let decode_err = |reason: String| IngestError::DecodeFailure {
            path: path.to_path_buf(),
            reason,
        };
        let mut wanted: Vec<usize> = indices.to_vec();
        wanted.sort_unstable();
        wanted.dedup();
        if let Some(&last) = wanted.last() {
            if last >= header.frame_count {
                return Err(decode_err(format!(
                    "frame {last} out of range ({} frames)",
                    header.frame_count
                )));
            }
        }

        let mut decoded = std::collections::HashMap::with_capacity(wanted.len());
        let mut next = wanted.iter().peekable();
        for frame in 0..header.frame_count {
            let Some(&&target) = next.peek() else { break };
            let mut len = [0u8; 4];
            reader
                .read_exact(&mut len)
                .map_err(|e| decode_err(format!("truncated at frame {frame}: {e}")))?;
            let len = u32::from_le_bytes(len) as usize;
            if frame == target {
                let mut buf = vec![0u8; len];
                reader
                    .read_exact(&mut buf)
                    .map_err(|e| decode_err(format!("truncated at frame {frame}: {e}")))?;
                let img = image::load_from_memory_with_format(&buf, image::ImageFormat::Png)
                    .map_err(|e| decode_err(format!("frame {frame}: {e}")))?
                    .to_rgb8();
                decoded.insert(frame, img);
                next.next();
            } else {
                reader
                    .seek(SeekFrom::Current(len as i64))
                    .map_err(|e| decode_err(format!("seek at frame {frame}: {e}")))?;
            }
        }
        indices
            .iter()
            .map(|i| {
                decoded
                    .get(i)
                    .cloned()
                    .ok_or_else(|| decode_err(format!("frame {i} missing")))
            })
            .collect()
    }
}

/// Decoder backed by external `ffmpeg` and `ffprobe` processes.
#[derive(Debug, Clone)]
pub struct FfmpegDecoder {
    ffmpeg: PathBuf,
    ffprobe: PathBuf,
}

impl FfmpegDecoder {
    /// Find both binaries on `PATH`; fails if either does not run.
    pub fn locate() -> Result<Self, IngestError> {
        let this = Self {
            ffmpeg: PathBuf::from("ffmpeg"),
            ffprobe: PathBuf::from("ffprobe"),
        };
        for bin in [&this.ffmpeg, &this.ffprobe] {
            let ok = Command::new(bin)
                .arg("-version")
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status()
                .map(|s| s.success())
                .unwrap_or(false);
            if !ok {
                return Err(IngestError::DecoderUnavailable(format!(
                    "{} not found or not runnable",
                    bin.display()
                )));
            }
        }
        Ok(this)
    }
}

fn parse_rate(rate: &str) -> Option<f64> {
    match rate.split_once('/') {
        Some((n, d)) => {
            let (n, d): (f64, f64) = (n.parse().ok()?, d.parse().ok()?);
            (d > 0.0).then(|| n / d)
        }
        None => rate.parse().ok(),
    }
}

impl ClipDecoder for FfmpegDecoder {
    fn probe(&self, path: &Path) -> Result<ClipProbe, IngestError> {
        if !path.is_file() {
            return Err(IngestError::unreadable(path, "file not found"));
        }
        let out = Command::new(&self.ffprobe)
            .args(["-v", "error", "-select_streams", "v:0"])
            .args(["-show_entries", "stream=avg_frame_rate,nb_frames:format=duration"])
            .args(["-of", "json"])
            .arg(path)
            .output()
            .map_err(|e| IngestError::unreadable(path, e))?;
        if !out.status.success() {
            return Err(IngestError::unreadable(
                path,
                String::from_utf8_lossy(&out.stderr).trim().to_string(),
            ));
        }
        let v: serde_json::Value =
            serde_json::from_slice(&out.stdout).map_err(|e| IngestError::unreadable(path, e))?;
        let fps = v["streams"][0]["avg_frame_rate"]
            .as_str()
            .and_then(parse_rate)
            .filter(|f| *f > 0.0)
            .ok_or_else(|| IngestError::unreadable(path, "no video stream"))?;
        let duration: f64 = v["format"]["duration"]
            .as_str()
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| IngestError::unreadable(path, "unknown duration"))?;
        let frame_count = v["streams"][0]["nb_frames"]
            .as_str()
            .and_then(|n| n.parse().ok())
            .unwrap_or_else(|| (duration * fps).floor() as usize);
        Ok(ClipProbe { duration, fps, frame_count })
    }

    fn frames(&self, path: &Path, indices: &[usize]) -> Result<Vec<RgbImage>, IngestError> {
        let probe = self.probe(path)?;
        indices
            .iter()
            .map(|&i| {
                let ts = i as f64 / probe.fps;
                let out = Command::new(&self.ffmpeg)
                    .args(["-v", "error", "-ss", &format!("{ts:.6}"), "-i"])
                    .arg(path)
                    .args(["-frames:v", "1", "-f", "image2pipe", "-vcodec", "png", "-"])
                    .output()
                    .map_err(|e| IngestError::DecodeFailure {
                        path: path.to_path_buf(),
                        reason: e.to_string(),
                    })?;
                if !out.status.success() || out.stdout.is_empty() {
                    return Err(IngestError::DecodeFailure {
                        path: path.to_path_buf(),
                        reason: format!("ffmpeg produced no frame at {ts:.3}s"),
                    });
                }
                image::load_from_memory_with_format(&out.stdout, image::ImageFormat::Png)
                    .map(|img| img.to_rgb8())
                    .map_err(|e| IngestError::DecodeFailure {
                        path: path.to_path_buf(),
                        reason: e.to_string(),
                    })
            })
            .collect()
    }
}

/// Picks the native decoder for `VRCLIP1` files and ffmpeg for everything else.
#[derive(Debug, Clone, Default)]
pub struct MediaDecoder {
    ffmpeg: Option<FfmpegDecoder>,
}

impl MediaDecoder {
    pub fn new() -> Self {
        Self {
            ffmpeg: FfmpegDecoder::locate().ok(),
        }
    }

    /// Native container only.
    pub fn native_only() -> Self {
        Self { ffmpeg: None }
    }

    pub fn has_ffmpeg(&self) -> bool {
        self.ffmpeg.is_some()
    }

    /// Fails up front when some input needs ffmpeg and it is not installed.
    pub fn check_inputs<'a>(
        &self,
        paths: impl IntoIterator<Item = &'a Path>,
    ) -> Result<(), IngestError> {
        if self.ffmpeg.is_some() {
            return Ok(());
        }
        for p in paths {
            if p.is_file() && !is_vrclip(p) {
                return Err(IngestError::DecoderUnavailable(format!(
                    "{} needs ffmpeg, which is not installed",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn pick(&self, path: &Path) -> Result<&dyn ClipDecoder, IngestError> {
        if !path.is_file() {
            return Err(IngestError::unreadable(path, "file not found"));
        }
        if is_vrclip(path) {
            return Ok(&VrClipDecoder);
        }
        match &self.ffmpeg {
            Some(f) => Ok(f),
            None => Err(IngestError::unreadable(
                path,
                "unrecognized container and ffmpeg is unavailable",
            )),
        }
    }
}

impl ClipDecoder for MediaDecoder {
    fn probe(&self, path: &Path) -> Result<ClipProbe, IngestError> {
        self.pick(path)?.probe(path)
    }

    fn frames(&self, path: &Path, indices: &[usize]) -> Result<Vec<RgbImage>, IngestError> {
        self.pick(path)?.frames(path, indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn solid_png(v: u8) -> Vec<u8> {
        let img = RgbImage::from_pixel(4, 4, image::Rgb([v, v, v]));
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png).unwrap();
        out.into_inner()
    }

    fn write_clip(dir: &Path, frames: usize) -> PathBuf {
        let path = dir.join("c.vrclip");
        let file = File::create(&path).unwrap();
        let mut w = VrClipWriter::new(file, 10.0, 4, 4, frames).unwrap();
        for i in 0..frames {
            w.push_png(&solid_png(i as u8)).unwrap();
        }
        w.finish().unwrap();
        path
    }

    #[test]
    fn native_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_clip(dir.path(), 25);
        assert!(is_vrclip(&path));
        let probe = VrClipDecoder.probe(&path).unwrap();
        assert_eq!(probe.frame_count, 25);
        assert!((probe.duration - 2.5).abs() < 1e-12);
        let frames = VrClipDecoder.frames(&path, &[3, 0, 24]).unwrap();
        assert_eq!(frames[0].get_pixel(0, 0).0, [3, 3, 3]);
        assert_eq!(frames[1].get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(frames[2].get_pixel(0, 0).0, [24, 24, 24]);
    }

    #[test]
    fn out_of_range_frame_is_decode_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_clip(dir.path(), 5);
        let err = VrClipDecoder.frames(&path, &[5]).unwrap_err();
        assert!(matches!(err, IngestError::DecodeFailure { .. }));
    }

    #[test]
    fn truncated_container_is_decode_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_clip(dir.path(), 5);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let err = VrClipDecoder.frames(&path, &[4]).unwrap_err();
        assert!(matches!(err, IngestError::DecodeFailure { .. }));
    }

    #[test]
    fn writer_rejects_frame_count_mismatch() {
        let mut w = VrClipWriter::new(Vec::new(), 10.0, 4, 4, 2).unwrap();
        w.push_png(&solid_png(0)).unwrap();
        assert!(w.finish().is_err());
    }

    #[test]
    fn garbage_is_unreadable_without_ffmpeg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mp4");
        std::fs::write(&path, b"definitely not a video").unwrap();
        let dec = MediaDecoder::native_only();
        assert!(matches!(dec.probe(&path), Err(IngestError::UnreadableMedia { .. })));
        assert!(matches!(
            dec.check_inputs([path.as_path()]),
            Err(IngestError::DecoderUnavailable(_))
        ));
        let missing = dir.path().join("nope.vrclip");
        assert!(matches!(dec.probe(&missing), Err(IngestError::UnreadableMedia { .. })));
    }

    #[test]
    fn rate_parsing() {
        assert_eq!(parse_rate("30/1"), Some(30.0));
        assert_eq!(parse_rate("30000/1001").map(|r| (r * 1000.0).round()), Some(29970.0));
        assert_eq!(parse_rate("0/0"), None);
        assert_eq!(parse_rate("25"), Some(25.0));
    }
}
