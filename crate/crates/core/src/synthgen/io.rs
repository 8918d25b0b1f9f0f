//! Split container format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"GBD1"
//! version  u32 (currently 1)
//! role     u8
//! name     u16 length + utf8 bytes
//! scenes   u32 count
//! canvas   u32
//! classes  u32
//! then per scene:
//!   class_label u32, dataset_id u32, color_id u32, background_id u32,
//!   bbox 4 x f32, image 3*canvas*canvas x f32
//! ```
//!
//! Round trips are bit-exact: images are stored in the same f32 precision
//! the generator produces.

use super::{DatasetSplit, Scene, SplitRole};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"GBD1";
const VERSION: u32 = 1;

// Sanity bounds so a corrupt header cannot ask for absurd allocations.
const MAX_SCENES: u32 = 1 << 24;
const MAX_CANVAS: u32 = 4096;

pub fn save_split(split: &DatasetSplit, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = write_split(split, &mut w);
    res.map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_split(split: &DatasetSplit, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[split.role.as_u8()])?;
    let name = split.name.as_bytes();
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&(split.scenes.len() as u32).to_le_bytes())?;
    w.write_all(&split.canvas.to_le_bytes())?;
    w.write_all(&split.num_classes.to_le_bytes())?;
    for scene in &split.scenes {
        w.write_all(&scene.class_label.to_le_bytes())?;
        w.write_all(&scene.dataset_id.to_le_bytes())?;
        w.write_all(&scene.color_id.to_le_bytes())?;
        w.write_all(&scene.background_id.to_le_bytes())?;
        for v in scene.bbox {
            w.write_all(&v.to_le_bytes())?;
        }
        for &px in &scene.image {
            w.write_all(&px.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_split(path: &Path) -> Result<DatasetSplit> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_split(&mut r, path)
}

struct Reader<'a, R: Read> {
    inner: &'a mut R,
    path: &'a Path,
}

impl<'a, R: Read> Reader<'a, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, "file truncated")
            } else {
                Error::io(self.path, e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes::<2>()?))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes::<4>()?))
    }
}

fn read_split(r: &mut impl Read, path: &Path) -> Result<DatasetSplit> {
    let mut r = Reader { inner: r, path };
    let magic: [u8; 4] = r.bytes()?;
    if magic != MAGIC {
        return Err(Error::format(path, "bad magic (not a split container)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported container version {version}"),
        ));
    }
    let role = SplitRole::from_u8(r.u8()?)
        .ok_or_else(|| Error::format(path, "invalid split role byte"))?;
    let name_len = r.u16()? as usize;
    let mut name_buf = vec![0u8; name_len];
    r.inner.read_exact(&mut name_buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "file truncated")
        } else {
            Error::io(path, e)
        }
    })?;
    let name = String::from_utf8(name_buf)
        .map_err(|_| Error::format(path, "split name is not valid utf8"))?;
    let num_scenes = r.u32()?;
    let canvas = r.u32()?;
    let num_classes = r.u32()?;
    if num_scenes > MAX_SCENES || canvas == 0 || canvas > MAX_CANVAS {
        return Err(Error::format(path, "header counts out of range"));
    }
    let pixels = 3 * canvas as usize * canvas as usize;
    let mut scenes = Vec::with_capacity(num_scenes as usize);
    for _ in 0..num_scenes {
        let class_label = r.u32()?;
        let dataset_id = r.u32()?;
        let color_id = r.u32()?;
        let background_id = r.u32()?;
        let mut bbox = [0f32; 4];
        for b in &mut bbox {
            *b = r.f32()?;
        }
        let mut image = Vec::with_capacity(pixels);
        for _ in 0..pixels {
            image.push(r.f32()?);
        }
        scenes.push(Scene {
            image,
            class_label,
            bbox,
            dataset_id,
            color_id,
            background_id,
        });
    }
    Ok(DatasetSplit {
        scenes,
        name,
        role,
        canvas,
        num_classes,
    })
}
