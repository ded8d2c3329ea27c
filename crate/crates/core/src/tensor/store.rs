//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"CTXF"
//! version u32 (= 1)
//! step    u64
//! count   u32
//! count × { name_len u32, name utf-8, rank u32, dims u32 × rank, values f32 × numel }
//! ```
//!
//! A sidecar `<stem>.manifest` lists one `name<TAB>shape` line per record.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::value::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CTXF";
pub const VERSION: u32 = 1;

/// Contents of one container file.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub step: u64,
    pub records: Vec<(String, Tensor)>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest")
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(ToString::to_string).collect::<Vec<_>>().join("x")
}

/// Writes the container and its manifest. Values are narrowed to `f32`.
pub fn write_tensor_file(path: &Path, file: &TensorFile) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&file.step.to_le_bytes())?;
        w.write_all(&(file.records.len() as u32).to_le_bytes())?;
        for (name, t) in &file.records {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;

    let mut manifest = format!("# ctxformer tensors v{VERSION} step={}\n", file.step);
    for (name, t) in &file.records {
        manifest.push_str(&format!("{name}\t{}\n", shape_text(t.shape())));
    }
    let mpath = manifest_path(path);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn err(&self, msg: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg: format!("{msg} at byte {}", self.pos),
        }
    }
}

pub fn read_tensor_file(path: &Path) -> Result<TensorFile> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(&format!("unsupported version {version}")));
    }
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = match std::str::from_utf8(r.take(len)?) {
            Ok(s) => s.to_string(),
            Err(_) => return Err(r.err("name is not utf-8")),
        };
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| r.err(&e.to_string()))?;
        records.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(r.err("trailing bytes"));
    }
    Ok(TensorFile { step, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values() {
        let dir = std::env::temp_dir().join(format!("ctxf-store-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.bin");
        let file = TensorFile {
            step: 42,
            records: vec![
                (
                    "w".into(),
                    Tensor::new(&[2, 2], vec![0.5, -1.25, 3.0, 1e-3f32 as f64]).unwrap(),
                ),
                ("s".into(), Tensor::scalar(7.0)),
            ],
        };
        write_tensor_file(&path, &file).unwrap();
        assert_eq!(read_tensor_file(&path).unwrap(), file);
        let manifest = fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(manifest.contains("w\t2x2\n"));
        assert!(manifest.contains("s\tscalar\n"));

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_tensor_file(&path), Err(Error::Format { .. })));
        fs::remove_dir_all(&dir).ok();
    }
}
