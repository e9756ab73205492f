//! Binary file formats: point clouds, depth rasters, weight checkpoints.
//!
//! All formats are little-endian with a four-byte magic:
//!
//! * `OCPC` point cloud — u32 count, u8 has_labels, count × (f32 x, y, z),
//!   then count × u8 labels when has_labels is 1.
//! * `OCDR` depth raster — u32 nx, u32 ny, f32 dx, dy, x0, y0, nx·ny f32 z
//!   row-major, nx·ny u8 valid.
//! * `OCWT` weight checkpoint — u32 version, u32 config text length + UTF-8
//!   text, u32 parameter count, then per parameter: u32 name length + name,
//!   u8 ndim, ndim × u32 dims, f32 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{DepthImage, GridSpec, Point3, PointCloud, Raster};

const MAGIC_CLOUD: &[u8; 4] = b"OCPC";
const MAGIC_RASTER: &[u8; 4] = b"OCDR";
const MAGIC_WEIGHTS: &[u8; 4] = b"OCWT";
const WEIGHTS_VERSION: u32 = 1;

/// One named parameter tensor in a checkpoint. Data is stored as f32 on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn check_magic<R: Read>(r: &mut R, expect: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != expect {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(expect)
        )));
    }
    Ok(())
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_CLOUD)?;
    write_u32(&mut w, cloud.len() as u32)?;
    w.write_all(&[u8::from(cloud.has_labels())])?;
    for p in &cloud.points {
        write_f32(&mut w, p.x as f32)?;
        write_f32(&mut w, p.y as f32)?;
        write_f32(&mut w, p.z as f32)?;
    }
    if let Some(labels) = cloud.labels() {
        w.write_all(labels)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, MAGIC_CLOUD)?;
    let count = read_u32(&mut r)? as usize;
    let has_labels = read_u8(&mut r)?;
    if has_labels > 1 {
        return Err(Error::Format(format!("invalid has_labels flag {has_labels}")));
    }
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let x = f64::from(read_f32(&mut r)?);
        let y = f64::from(read_f32(&mut r)?);
        let z = f64::from(read_f32(&mut r)?);
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::Format("non-finite coordinate in point cloud".into()));
        }
        points.push(Point3 { x, y, z });
    }
    if has_labels == 1 {
        let mut labels = vec![0u8; count];
        r.read_exact(&mut labels)?;
        PointCloud::labeled(points, labels)
    } else {
        Ok(PointCloud::unlabeled(points))
    }
}

pub fn write_depth_image(path: &Path, img: &DepthImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_RASTER)?;
    let s = &img.spec;
    write_u32(&mut w, s.nx as u32)?;
    write_u32(&mut w, s.ny as u32)?;
    write_f32(&mut w, s.dx as f32)?;
    write_f32(&mut w, s.dy as f32)?;
    write_f32(&mut w, s.x0 as f32)?;
    write_f32(&mut w, s.y0 as f32)?;
    for &z in img.z_data() {
        write_f32(&mut w, z as f32)?;
    }
    let bytes: Vec<u8> = img.valid_data().iter().map(|&v| u8::from(v)).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_depth_image(path: &Path) -> Result<DepthImage> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, MAGIC_RASTER)?;
    let nx = read_u32(&mut r)? as usize;
    let ny = read_u32(&mut r)? as usize;
    let dx = f64::from(read_f32(&mut r)?);
    let dy = f64::from(read_f32(&mut r)?);
    let x0 = f64::from(read_f32(&mut r)?);
    let y0 = f64::from(read_f32(&mut r)?);
    let spec = GridSpec::new(nx, ny, dx, dy, x0, y0)?;
    let n = spec.ncells();
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        z.push(f64::from(read_f32(&mut r)?));
    }
    let mut vbytes = vec![0u8; n];
    r.read_exact(&mut vbytes)?;
    let valid: Vec<bool> = vbytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("invalid valid byte {other}"))),
        })
        .collect::<Result<_>>()?;
    DepthImage::new(spec, z, valid)
}

pub fn write_checkpoint(path: &Path, config_text: &str, params: &[NamedParam]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_WEIGHTS)?;
    write_u32(&mut w, WEIGHTS_VERSION)?;
    write_u32(&mut w, config_text.len() as u32)?;
    w.write_all(config_text.as_bytes())?;
    write_u32(&mut w, params.len() as u32)?;
    for p in params {
        write_u32(&mut w, p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        let expected: usize = p.shape.iter().product();
        if expected != p.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {}: shape {:?} vs {} values",
                p.name,
                p.shape,
                p.data.len()
            )));
        }
        w.write_all(&[p.shape.len() as u8])?;
        for &d in &p.shape {
            write_u32(&mut w, d as u32)?;
        }
        for &v in &p.data {
            write_f32(&mut w, v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(String, Vec<NamedParam>)> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, MAGIC_WEIGHTS)?;
    let version = read_u32(&mut r)?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg)?;
    let config_text = String::from_utf8(cfg)
        .map_err(|_| Error::Format("checkpoint config header is not UTF-8".into()))?;
    let count = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let ndim = read_u8(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from(read_f32(&mut r)?));
        }
        params.push(NamedParam { name, shape, data });
    }
    Ok((config_text, params))
}

/// 8-bit PGM preview of a unit-interval raster, for quick visual inspection.
pub fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    // The raster's x axis (rows of the stored layout) maps to image rows.
    writeln!(w, "P5\n{} {}\n255", raster.ny, raster.nx)?;
    let bytes: Vec<u8> = raster
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridSpec, LABEL_LOWER, LABEL_TOP};

    #[test]
    fn point_cloud_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ocpc");
        let cloud = PointCloud::labeled(
            vec![Point3::new(1.5, -2.25, 3.0), Point3::new(0.0, 0.5, 7.5)],
            vec![LABEL_LOWER, LABEL_TOP],
        )
        .unwrap();
        write_point_cloud(&path, &cloud).unwrap();
        let back = read_point_cloud(&path).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn unlabeled_round_trip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ocpc");
        let cloud = PointCloud::unlabeled(vec![Point3::new(1.0, 2.0, 3.0)]);
        write_point_cloud(&path, &cloud).unwrap();
        assert_eq!(read_point_cloud(&path).unwrap(), cloud);

        std::fs::write(&path, b"XXXX\0\0\0\0\0").unwrap();
        assert!(matches!(read_point_cloud(&path), Err(Error::Format(_))));
    }

    #[test]
    fn depth_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ocdr");
        let spec = GridSpec::new(4, 2, 0.5, 1.0, 1.0, -2.0).unwrap();
        let z = vec![0.0, 1.5, 2.5, 0.0, 3.5, 0.0, 4.5, 5.5];
        let valid = vec![false, true, true, false, true, false, true, true];
        let img = DepthImage::new(spec, z, valid).unwrap();
        write_depth_image(&path, &img).unwrap();
        let back = read_depth_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ocwt");
        let params = vec![
            NamedParam { name: "enc0.w".into(), shape: vec![2, 1, 3, 3], data: (0..18).map(|i| i as f64 / 4.0).collect() },
            NamedParam { name: "enc0.b".into(), shape: vec![2], data: vec![0.5, -0.25] },
        ];
        write_checkpoint(&path, "depth=4\n", &params).unwrap();
        let (cfg, back) = read_checkpoint(&path).unwrap();
        assert_eq!(cfg, "depth=4\n");
        assert_eq!(back, params);
    }
}
