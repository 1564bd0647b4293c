//! NIfTI-1 single-file (`.nii` / `.nii.gz`) reading and writing.
//!
//! Files are reoriented on load into the canonical grid described in the
//! parent module. Label dictionaries and the exact `f64` geometry are kept in
//! a JSON comment extension (ecode 6) so a write/read cycle is lossless.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::{
    AnatomicalAxis, AxisRoles, ConfidenceVolume, ImageVolume, LabelDictionary, LabelVolume, Volume,
    VolumeGeometry, VolumeKind,
};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const MAGIC: &[u8; 4] = b"n+1\0";
const ECODE_COMMENT: i32 = 6;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    kind: VolumeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<BTreeMap<u32, String>>,
    spacing: [f64; 3],
    origin: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct Extension {
    nfseg: Sidecar,
}

/// Parsed subset of the NIfTI-1 header.
#[derive(Debug, Clone)]
struct Header {
    dim: [i16; 8],
    datatype: i16,
    pixdim: [f32; 8],
    vox_offset: f32,
    scl_slope: f32,
    scl_inter: f32,
    qform_code: i16,
    sform_code: i16,
    quatern: [f32; 3],
    qoffset: [f32; 3],
    srow: [[f32; 4]; 3],
}

impl Header {
    fn parse<E: ByteOrder>(b: &[u8]) -> Result<Self> {
        let i16_at = |o: usize| E::read_i16(&b[o..o + 2]);
        let f32_at = |o: usize| E::read_f32(&b[o..o + 4]);
        let mut dim = [0i16; 8];
        let mut pixdim = [0f32; 8];
        for i in 0..8 {
            dim[i] = i16_at(40 + 2 * i);
            pixdim[i] = f32_at(76 + 4 * i);
        }
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f32_at(280 + 16 * r + 4 * c);
            }
        }
        Ok(Header {
            dim,
            datatype: i16_at(70),
            pixdim,
            vox_offset: f32_at(108),
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            qform_code: i16_at(252),
            sform_code: i16_at(254),
            quatern: [f32_at(256), f32_at(260), f32_at(264)],
            qoffset: [f32_at(268), f32_at(272), f32_at(276)],
            srow,
        })
    }

    /// Voxel-to-world (RAS+) affine as a 3x4 matrix.
    fn affine(&self) -> [[f64; 4]; 3] {
        if self.sform_code > 0 {
            let mut a = [[0.0; 4]; 3];
            for r in 0..3 {
                for c in 0..4 {
                    a[r][c] = self.srow[r][c] as f64;
                }
            }
            return a;
        }
        let px = [
            self.pixdim[1] as f64,
            self.pixdim[2] as f64,
            self.pixdim[3] as f64,
        ];
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(|v| v as f64);
            let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
            let rot = [
                [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
                [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
                [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
            ];
            let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
            let scale = [px[0], px[1], px[2] * qfac];
            let mut out = [[0.0; 4]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    out[r][c] = rot[r][c] * scale[c];
                }
                out[r][3] = self.qoffset[r] as f64;
            }
            return out;
        }
        [
            [px[0], 0.0, 0.0, 0.0],
            [0.0, px[1], 0.0, 0.0],
            [0.0, 0.0, px[2], 0.0],
        ]
    }
}

/// Read a NIfTI-1 file and reorient it into the canonical grid.
pub fn read_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<Volume> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    decode(&bytes, kind)
}

fn decode(bytes: &[u8], kind: VolumeKind) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file has {} bytes, header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let little = LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32;
    let big = BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32;
    if !little && !big {
        return Err(Error::MalformedHeader("sizeof_hdr is not 348".into()));
    }
    if &bytes[344..348] != MAGIC {
        return Err(Error::MalformedHeader(
            "magic is not \"n+1\" (only single-file NIfTI-1 is supported)".into(),
        ));
    }
    if little {
        decode_with::<LittleEndian>(bytes, kind)
    } else {
        decode_with::<BigEndian>(bytes, kind)
    }
}

fn decode_with<E: ByteOrder>(bytes: &[u8], kind: VolumeKind) -> Result<Volume> {
    let hdr = Header::parse::<E>(bytes)?;
    let ndim = hdr.dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let mut file_dims = [1usize; 3];
    for a in 0..ndim as usize {
        let d = hdr.dim[a + 1];
        if d < 1 {
            return Err(Error::MalformedHeader(format!("dim[{}] = {d}", a + 1)));
        }
        if a < 3 {
            file_dims[a] = d as usize;
        } else if d != 1 {
            return Err(Error::MalformedHeader(format!(
                "only 3D volumes are supported (dim[{}] = {d})",
                a + 1
            )));
        }
    }
    let n: usize = file_dims.iter().product();
    let bytes_per = match hdr.datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let offset = hdr.vox_offset as usize;
    if offset < HEADER_SIZE || offset + n * bytes_per > bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "voxel data ({} bytes at offset {offset}) exceeds file size {}",
            n * bytes_per,
            bytes.len()
        )));
    }
    let payload = &bytes[offset..offset + n * bytes_per];
    let mut values: Vec<f64> = match hdr.datatype {
        DT_UINT8 => payload.iter().map(|&v| v as f64).collect(),
        DT_INT16 => payload.chunks_exact(2).map(|c| E::read_i16(c) as f64).collect(),
        DT_UINT16 => payload.chunks_exact(2).map(|c| E::read_u16(c) as f64).collect(),
        DT_INT32 => payload.chunks_exact(4).map(|c| E::read_i32(c) as f64).collect(),
        DT_FLOAT32 => payload.chunks_exact(4).map(|c| E::read_f32(c) as f64).collect(),
        DT_FLOAT64 => payload.chunks_exact(8).map(|c| E::read_f64(c)).collect(),
        _ => unreachable!(),
    };
    let slope = hdr.scl_slope as f64;
    let inter = hdr.scl_inter as f64;
    if slope != 0.0 && (slope != 1.0 || inter != 0.0) {
        for v in &mut values {
            *v = *v * slope + inter;
        }
    }

    let sidecar = read_sidecar::<E>(bytes, offset);
    let (geometry, file_index) = reorient(&hdr, file_dims, sidecar.as_ref())?;
    let canonical: Vec<f64> = file_index.iter().map(|&f| values[f]).collect();

    match kind {
        VolumeKind::Image => {
            let data = canonical.into_iter().map(|v| v as f32).collect();
            Ok(Volume::Image(ImageVolume::new(geometry, data)?))
        }
        VolumeKind::Confidence => {
            if let Some(v) = canonical.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::ConfidenceOutOfRange(*v));
            }
            let data = canonical.into_iter().map(|v| v as f32).collect();
            Ok(Volume::Confidence(ConfidenceVolume::new(geometry, data)?))
        }
        VolumeKind::Label => {
            let mut data = Vec::with_capacity(canonical.len());
            for v in canonical {
                if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                    return Err(Error::NonIntegralLabel(v));
                }
                data.push(v as u32);
            }
            let mut dictionary: LabelDictionary =
                sidecar.and_then(|s| s.labels).unwrap_or_default();
            dictionary.insert(0, "background".into());
            for &v in &data {
                dictionary.entry(v).or_insert_with(|| format!("label_{v}"));
            }
            Ok(Volume::Label(LabelVolume::new(geometry, data, dictionary)?))
        }
    }
}

fn read_sidecar<E: ByteOrder>(bytes: &[u8], vox_offset: usize) -> Option<Sidecar> {
    if bytes.len() <= HEADER_SIZE + 4 || bytes[HEADER_SIZE] == 0 {
        return None;
    }
    let mut pos = HEADER_SIZE + 4;
    while pos + 8 <= vox_offset {
        let esize = E::read_i32(&bytes[pos..pos + 4]);
        let ecode = E::read_i32(&bytes[pos + 4..pos + 8]);
        if esize < 8 || pos + esize as usize > vox_offset {
            return None;
        }
        if ecode == ECODE_COMMENT {
            let content = &bytes[pos + 8..pos + esize as usize];
            let end = content.iter().position(|&b| b == 0).unwrap_or(content.len());
            if let Ok(ext) = serde_json::from_slice::<Extension>(&content[..end]) {
                return Some(ext.nfseg);
            }
        }
        pos += esize as usize;
    }
    None
}

/// Computes canonical geometry and, for every canonical voxel, the linear
/// index of the file voxel that lands there.
fn reorient(
    hdr: &Header,
    file_dims: [usize; 3],
    sidecar: Option<&Sidecar>,
) -> Result<(VolumeGeometry, Vec<usize>)> {
    let affine = hdr.affine();
    // For canonical axis c: (file axis, flipped, spacing).
    let mut assignment: [Option<(usize, bool, f64)>; 3] = [None; 3];
    for j in 0..3 {
        let col = [affine[0][j], affine[1][j], affine[2][j]];
        let norm = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
        if !(norm > 0.0) {
            return Err(Error::MalformedHeader(format!("affine column {j} is zero")));
        }
        let w = (0..3)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
            .unwrap();
        let (role, canonical_sign) = match w {
            0 => (AnatomicalAxis::Lateral, -1.0),
            1 => (AnatomicalAxis::AnteriorPosterior, 1.0),
            _ => (AnatomicalAxis::CranioCaudal, 1.0),
        };
        let c = AxisRoles::CANONICAL.axis_of(role);
        if assignment[c].is_some() {
            return Err(Error::MalformedHeader(
                "affine maps two grid axes onto the same world axis".into(),
            ));
        }
        let flipped = col[w].signum() != canonical_sign;
        assignment[c] = Some((j, flipped, norm));
    }
    let assignment = assignment.map(|a| a.expect("three distinct axes"));

    let dims = assignment.map(|(j, _, _)| file_dims[j]);
    let mut spacing = assignment.map(|(_, _, s)| s);
    let mut start = [0.0f64; 3];
    for &(j, flipped, _) in &assignment {
        if flipped {
            start[j] = (file_dims[j] - 1) as f64;
        }
    }
    let mut origin = [0.0; 3];
    for (r, o) in origin.iter_mut().enumerate() {
        *o = affine[r][3] + (0..3).map(|j| affine[r][j] * start[j]).sum::<f64>();
    }
    if let Some(s) = sidecar {
        let same = |a: [f64; 3], b: [f64; 3]| (0..3).all(|i| a[i] as f32 == b[i] as f32);
        if same(s.spacing, spacing) && same(s.origin, origin) {
            spacing = s.spacing;
            origin = s.origin;
        }
    }
    let geometry = VolumeGeometry::new(dims, spacing, origin, AxisRoles::CANONICAL)?;

    let mut index = Vec::with_capacity(geometry.len());
    let mut f = [0usize; 3];
    for c0 in 0..dims[0] {
        for c1 in 0..dims[1] {
            for c2 in 0..dims[2] {
                for (c, &ci) in [c0, c1, c2].iter().enumerate() {
                    let (j, flipped, _) = assignment[c];
                    f[j] = if flipped { file_dims[j] - 1 - ci } else { ci };
                }
                index.push(f[0] + file_dims[0] * (f[1] + file_dims[1] * f[2]));
            }
        }
    }
    Ok((geometry, index))
}

/// Anything that can be written as a NIfTI-1 volume.
pub trait NiftiPayload {
    fn geometry(&self) -> &VolumeGeometry;
    fn kind(&self) -> VolumeKind;
    fn datatype(&self) -> i16;
    fn labels(&self) -> Option<&LabelDictionary> {
        None
    }
    /// Appends the little-endian value of canonical voxel `idx`.
    fn push_value(&self, idx: usize, out: &mut Vec<u8>);
}

impl NiftiPayload for ImageVolume {
    fn geometry(&self) -> &VolumeGeometry {
        self.geometry()
    }
    fn kind(&self) -> VolumeKind {
        VolumeKind::Image
    }
    fn datatype(&self) -> i16 {
        DT_FLOAT32
    }
    fn push_value(&self, idx: usize, out: &mut Vec<u8>) {
        out.write_f32::<LittleEndian>(self.data()[idx]).unwrap();
    }
}

impl NiftiPayload for ConfidenceVolume {
    fn geometry(&self) -> &VolumeGeometry {
        self.geometry()
    }
    fn kind(&self) -> VolumeKind {
        VolumeKind::Confidence
    }
    fn datatype(&self) -> i16 {
        DT_FLOAT32
    }
    fn push_value(&self, idx: usize, out: &mut Vec<u8>) {
        out.write_f32::<LittleEndian>(self.data()[idx]).unwrap();
    }
}

impl NiftiPayload for LabelVolume {
    fn geometry(&self) -> &VolumeGeometry {
        self.geometry()
    }
    fn kind(&self) -> VolumeKind {
        VolumeKind::Label
    }
    fn datatype(&self) -> i16 {
        let max = self.dictionary().keys().next_back().copied().unwrap_or(0);
        if max <= u8::MAX as u32 {
            DT_UINT8
        } else if max <= i16::MAX as u32 {
            DT_INT16
        } else {
            DT_INT32
        }
    }
    fn labels(&self) -> Option<&LabelDictionary> {
        Some(self.dictionary())
    }
    fn push_value(&self, idx: usize, out: &mut Vec<u8>) {
        let v = self.data()[idx];
        match self.datatype() {
            DT_UINT8 => out.push(v as u8),
            DT_INT16 => out.write_i16::<LittleEndian>(v as i16).unwrap(),
            _ => out.write_i32::<LittleEndian>(v as i32).unwrap(),
        }
    }
}

impl NiftiPayload for Volume {
    fn geometry(&self) -> &VolumeGeometry {
        Volume::geometry(self)
    }
    fn kind(&self) -> VolumeKind {
        match self {
            Volume::Image(_) => VolumeKind::Image,
            Volume::Label(_) => VolumeKind::Label,
            Volume::Confidence(_) => VolumeKind::Confidence,
        }
    }
    fn datatype(&self) -> i16 {
        match self {
            Volume::Image(v) => v.datatype(),
            Volume::Label(v) => v.datatype(),
            Volume::Confidence(v) => v.datatype(),
        }
    }
    fn labels(&self) -> Option<&LabelDictionary> {
        match self {
            Volume::Label(v) => Some(v.dictionary()),
            _ => None,
        }
    }
    fn push_value(&self, idx: usize, out: &mut Vec<u8>) {
        match self {
            Volume::Image(v) => v.push_value(idx, out),
            Volume::Label(v) => v.push_value(idx, out),
            Volume::Confidence(v) => v.push_value(idx, out),
        }
    }
}

/// Encodes a volume as NIfTI-1 bytes (uncompressed).
pub fn encode<V: NiftiPayload + ?Sized>(volume: &V) -> Vec<u8> {
    let g = volume.geometry();
    let dims = g.dims();
    let spacing = g.spacing();
    let datatype = volume.datatype();
    let bitpix: i16 = match datatype {
        DT_UINT8 => 8,
        DT_INT16 => 16,
        _ => 32,
    };

    let sidecar = Extension {
        nfseg: Sidecar {
            kind: volume.kind(),
            labels: volume.labels().cloned(),
            spacing,
            origin: g.origin(),
        },
    };
    let mut ext = serde_json::to_vec(&sidecar).expect("sidecar serializes");
    let padded = (ext.len() + 8).div_ceil(16) * 16;
    ext.resize(padded - 8, 0);
    let vox_offset = HEADER_SIZE + 4 + padded;

    let mut h = vec![0u8; HEADER_SIZE];
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r';
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..42 + 2 * i], *d);
    }
    LittleEndian::write_i16(&mut h[70..72], datatype);
    LittleEndian::write_i16(&mut h[72..74], bitpix);
    let pixdim: [f32; 8] = [
        1.0,
        spacing[0] as f32,
        spacing[1] as f32,
        spacing[2] as f32,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..80 + 4 * i], *p);
    }
    LittleEndian::write_f32(&mut h[108..112], vox_offset as f32);
    LittleEndian::write_f32(&mut h[112..116], 1.0);
    h[123] = 2; // mm
    let descrip = format!("nfseg {:?}", volume.kind()).to_lowercase();
    h[148..148 + descrip.len()].copy_from_slice(descrip.as_bytes());
    LittleEndian::write_i16(&mut h[254..256], 2); // sform: aligned anatomical
    let origin = g.origin();
    let roles = g.axis_roles().roles();
    for r in 0..3 {
        for (j, role) in roles.iter().enumerate() {
            let v = role.world_direction()[r] * spacing[j];
            LittleEndian::write_f32(&mut h[280 + 16 * r + 4 * j..284 + 16 * r + 4 * j], v as f32);
        }
        LittleEndian::write_f32(&mut h[292 + 16 * r..296 + 16 * r], origin[r] as f32);
    }
    h[344..348].copy_from_slice(MAGIC);

    let mut out = h;
    out.extend_from_slice(&[1, 0, 0, 0]);
    out.write_i32::<LittleEndian>(padded as i32).unwrap();
    out.write_i32::<LittleEndian>(ECODE_COMMENT).unwrap();
    out.extend_from_slice(&ext);
    debug_assert_eq!(out.len(), vox_offset);

    // File order has axis 0 fastest.
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                volume.push_value(g.index([i, j, k]), &mut out);
            }
        }
    }
    out
}

/// Writes a volume; a `.gz` suffix selects gzip compression.
pub fn write_volume<V: NiftiPayload + ?Sized>(volume: &V, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(volume);
    let gz = path.extension().is_some_and(|e| e == "gz");
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    if gz {
        let mut enc = GzEncoder::new(w, Compression::fast());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        w = enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl Volume {
    pub fn read(path: impl AsRef<Path>, kind: VolumeKind) -> Result<Self> {
        read_volume(path, kind)
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageVolume> {
    read_volume(path, VolumeKind::Image)?.into_image()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    read_volume(path, VolumeKind::Label)?.into_labels()
}

pub fn read_confidence(path: impl AsRef<Path>) -> Result<ConfidenceVolume> {
    read_volume(path, VolumeKind::Confidence)?.into_confidence()
}
