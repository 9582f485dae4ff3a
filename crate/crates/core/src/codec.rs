//! Streaming compression for inputs, intermediates and final artifacts.
//!
//! Readers pick the codec from the file extension; writers use whatever the
//! pipeline is configured with. All writers produce byte-identical output for
//! identical input, which the rerun checks depend on.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

const ZSTD_LEVEL: i32 = 3;
const IO_BUF: usize = 256 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    None,
    #[default]
    Zstd,
    Gzip,
}

impl Codec {
    pub fn extension(self) -> &'static str {
        match self {
            Codec::None => "",
            Codec::Zstd => ".zst",
            Codec::Gzip => ".gz",
        }
    }

    pub fn from_path(path: &Path) -> Codec {
        match path.extension().and_then(|e| e.to_str()) {
            Some("zst") | Some("zstd") => Codec::Zstd,
            Some("gz") => Codec::Gzip,
            _ => Codec::None,
        }
    }

    /// Appends this codec's extension to `path`.
    pub fn decorate(self, path: impl Into<PathBuf>) -> PathBuf {
        let mut s = path.into().into_os_string();
        s.push(self.extension());
        PathBuf::from(s)
    }

    pub fn reader<R: Read + Send + 'static>(self, inner: R) -> io::Result<Box<dyn BufRead + Send>> {
        Ok(match self {
            Codec::None => Box::new(BufReader::with_capacity(IO_BUF, inner)),
            Codec::Zstd => Box::new(BufReader::with_capacity(
                IO_BUF,
                zstd::stream::read::Decoder::new(inner)?,
            )),
            Codec::Gzip => Box::new(BufReader::with_capacity(
                IO_BUF,
                flate2::read::MultiGzDecoder::new(BufReader::new(inner)),
            )),
        })
    }

    pub fn writer<W: Write + Send + 'static>(self, inner: W) -> io::Result<Encoder> {
        let inner: Box<dyn Write + Send> = Box::new(inner);
        let inner = BufWriter::with_capacity(IO_BUF, inner);
        Ok(match self {
            Codec::None => Encoder::Plain(inner),
            Codec::Zstd => {
                let mut enc = zstd::stream::write::Encoder::new(inner, ZSTD_LEVEL)?;
                // Checksums make truncated intermediates fail loudly on read.
                enc.include_checksum(true)?;
                Encoder::Zstd(enc)
            }
            Codec::Gzip => Encoder::Gzip(flate2::write::GzEncoder::new(
                inner,
                flate2::Compression::default(),
            )),
        })
    }
}

impl FromStr for Codec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "plain" | "" => Ok(Codec::None),
            "zstd" | "zst" => Ok(Codec::Zstd),
            "gzip" | "gz" => Ok(Codec::Gzip),
            other => Err(Error::UnknownCodec(other.to_string())),
        }
    }
}

impl std::fmt::Display for Codec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Codec::None => "none",
            Codec::Zstd => "zstd",
            Codec::Gzip => "gzip",
        })
    }
}

/// A compressing writer that must be explicitly finished.
pub enum Encoder {
    Plain(BufWriter<Box<dyn Write + Send>>),
    Zstd(zstd::stream::write::Encoder<'static, BufWriter<Box<dyn Write + Send>>>),
    Gzip(flate2::write::GzEncoder<BufWriter<Box<dyn Write + Send>>>),
}

impl Encoder {
    pub fn finish(self) -> io::Result<()> {
        let mut inner = match self {
            Encoder::Plain(w) => w,
            Encoder::Zstd(w) => w.finish()?,
            Encoder::Gzip(w) => w.finish()?,
        };
        inner.flush()
    }
}

impl Write for Encoder {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Encoder::Plain(w) => w.write(buf),
            Encoder::Zstd(w) => w.write(buf),
            Encoder::Gzip(w) => w.write(buf),
        }
    }

    fn write_all(&mut self, buf: &[u8]) -> io::Result<()> {
        match self {
            Encoder::Plain(w) => w.write_all(buf),
            Encoder::Zstd(w) => w.write_all(buf),
            Encoder::Gzip(w) => w.write_all(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Encoder::Plain(w) => w.flush(),
            Encoder::Zstd(w) => w.flush(),
            Encoder::Gzip(w) => w.flush(),
        }
    }
}

/// Opens a file for reading, decompressing according to its extension.
pub fn open(path: &Path) -> io::Result<Box<dyn BufRead + Send>> {
    let file = File::open(path)?;
    Codec::from_path(path).reader(file)
}

/// Creates a file, compressing with `codec` regardless of its extension.
pub fn create(path: &Path, codec: Codec) -> io::Result<Encoder> {
    codec.writer(File::create(path)?)
}

/// Iterates raw lines (without the trailing newline) of a reader.
///
/// Unlike `BufRead::lines` this never fails on invalid UTF-8; callers decide
/// what to do with undecodable bytes.
pub struct ByteLines<R> {
    inner: R,
}

impl<R: BufRead> ByteLines<R> {
    pub fn new(inner: R) -> Self {
        ByteLines { inner }
    }
}

impl<R: BufRead> Iterator for ByteLines<R> {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut buf = Vec::new();
        match self.inner.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) => {
                if buf.last() == Some(&b'\n') {
                    buf.pop();
                    if buf.last() == Some(&b'\r') {
                        buf.pop();
                    }
                }
                Some(Ok(buf))
            }
            Err(e) => Some(Err(e)),
        }
    }
}

pub fn byte_lines(path: &Path) -> io::Result<ByteLines<Box<dyn BufRead + Send>>> {
    Ok(ByteLines::new(open(path)?))
}
