//! Minimal NIfTI-1 container support.
//!
//! Reads and writes single-file (`.nii`) little-endian NIfTI-1 volumes with
//! FLOAT32 data, which is the one datatype this pipeline produces and
//! consumes. Spacing is carried in `pixdim`, origin in an axis-aligned
//! sform. The writer is deterministic byte-for-byte so corpora regenerated
//! from the same seed compare bit-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_FLOAT32: i16 = 16;

/// In-memory form of the on-disk container: up to 4 dims (x, y, z, channel),
/// x fastest-varying in the data slice, spacing/origin in mm.
pub(crate) struct NiftiData {
    pub dims: [usize; 4],
    pub spacing: [f32; 3],
    pub origin: [f32; 3],
    pub data: Vec<f32>,
}

pub(crate) fn read(path: &Path) -> Result<NiftiData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < VOX_OFFSET {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!(
                    "file too short for a NIfTI-1 header ({} bytes)",
                    bytes.len()
                ),
            ),
        ));
    }

    let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::Format(format!(
            "{}: not a little-endian NIfTI-1 file (sizeof_hdr = {sizeof_hdr})",
            path.display()
        )));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(Error::Format(format!(
            "{}: unsupported magic {magic:?}; only single-file n+1 is supported",
            path.display()
        )));
    }

    let dim_at = |i: usize| i16::from_le_bytes(bytes[40 + 2 * i..42 + 2 * i].try_into().unwrap());
    let ndim = dim_at(0);
    if !(3..=4).contains(&ndim) {
        return Err(Error::Format(format!(
            "{}: expected a 3D or 4D volume, got ndim = {ndim}",
            path.display()
        )));
    }
    let mut dims = [1usize; 4];
    for (a, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = dim_at(a + 1);
        if v <= 0 {
            return Err(Error::Format(format!(
                "{}: non-positive dim[{}] = {v}",
                path.display(),
                a + 1
            )));
        }
        *d = v as usize;
    }

    let datatype = i16::from_le_bytes(bytes[70..72].try_into().unwrap());
    if datatype != DT_FLOAT32 {
        return Err(Error::Format(format!(
            "{}: unsupported datatype {datatype}; only FLOAT32 (16) is supported",
            path.display()
        )));
    }

    let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let mut spacing = [0f32; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = f32_at(76 + 4 * (a + 1)); // pixdim[1..=3]
        if !s.is_finite() || *s <= 0.0 {
            return Err(Error::Format(format!(
                "{}: missing or non-positive voxel spacing (pixdim[{}] = {s})",
                path.display(),
                a + 1
            )));
        }
    }

    let sform_code = i16::from_le_bytes(bytes[254..256].try_into().unwrap());
    let origin = if sform_code > 0 {
        [f32_at(280 + 12), f32_at(296 + 12), f32_at(312 + 12)]
    } else {
        [f32_at(268), f32_at(272), f32_at(276)] // qoffset_{x,y,z}
    };

    let vox_offset = f32_at(108) as usize;
    let n_values: usize = dims.iter().product();
    let need = vox_offset + 4 * n_values;
    if bytes.len() < need {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!(
                    "truncated data section: have {} bytes, need {need}",
                    bytes.len()
                ),
            ),
        ));
    }

    let mut data = vec![0f32; n_values];
    for (i, v) in data.iter_mut().enumerate() {
        let off = vox_offset + 4 * i;
        *v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    }

    Ok(NiftiData {
        dims,
        spacing,
        origin,
        data,
    })
}

pub(crate) fn write(path: &Path, v: &NiftiData) -> Result<()> {
    let n_values: usize = v.dims.iter().product();
    assert_eq!(v.data.len(), n_values, "data length does not match dims");

    let mut header = vec![0u8; VOX_OFFSET];
    header[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());

    let ndim: i16 = if v.dims[3] > 1 { 4 } else { 3 };
    let dim_vals: [i16; 8] = [
        ndim,
        v.dims[0] as i16,
        v.dims[1] as i16,
        v.dims[2] as i16,
        v.dims[3] as i16,
        1,
        1,
        1,
    ];
    for (i, d) in dim_vals.iter().enumerate() {
        header[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }

    header[70..72].copy_from_slice(&DT_FLOAT32.to_le_bytes());
    header[72..74].copy_from_slice(&32i16.to_le_bytes()); // bitpix

    let pixdim: [f32; 8] = [
        1.0,
        v.spacing[0],
        v.spacing[1],
        v.spacing[2],
        1.0,
        0.0,
        0.0,
        0.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        header[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }

    header[108..112].copy_from_slice(&(VOX_OFFSET as f32).to_le_bytes());
    header[112..116].copy_from_slice(&1f32.to_le_bytes()); // scl_slope
    header[123] = 2; // xyzt_units: mm

    header[252..254].copy_from_slice(&0i16.to_le_bytes()); // qform_code
    header[254..256].copy_from_slice(&1i16.to_le_bytes()); // sform_code
    header[268..272].copy_from_slice(&v.origin[0].to_le_bytes());
    header[272..276].copy_from_slice(&v.origin[1].to_le_bytes());
    header[276..280].copy_from_slice(&v.origin[2].to_le_bytes());

    // Axis-aligned sform: srow_a = spacing[a] * e_a with the origin in col 3.
    for a in 0..3 {
        let base = 280 + 16 * a;
        let mut row = [0f32; 4];
        row[a] = v.spacing[a];
        row[3] = v.origin[a];
        for (i, r) in row.iter().enumerate() {
            header[base + 4 * i..base + 4 * (i + 1)].copy_from_slice(&r.to_le_bytes());
        }
    }

    header[344..348].copy_from_slice(b"n+1\0");
    // bytes 348..352 stay zero: no extensions

    let mut body = Vec::with_capacity(VOX_OFFSET + 4 * n_values);
    body.extend_from_slice(&header);
    for x in &v.data {
        body.extend_from_slice(&x.to_le_bytes());
    }

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&body).map_err(|e| Error::io(path, e))?;
    Ok(())
}
