//! Binary checkpoint container: magic, JSON header, raw little-endian arrays.
//!
//! Layout:
//!
//! ```text
//! b"VOXFIELD"  u32 version (LE)  u64 header length (LE)  header JSON
//! array 0 as f64 LE, array 1 ...
//! ```
//!
//! The header lists every array by name and length in storage order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Aabb, ColorActivation, VoxelField};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VOXFIELD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    resolution: [usize; 3],
    bbox: Aabb,
    dtype: String,
    color_activation: ColorActivation,
    arrays: Vec<ArrayEntry>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    extra: Value,
}

/// A field plus any number of extra named arrays and a free-form JSON section.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub field: VoxelField,
    pub extra: Value,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn new(field: VoxelField) -> Self {
        Container {
            field,
            extra: Value::Null,
            arrays: Vec::new(),
        }
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let f = &self.field;
        let n = f.len();
        let mut arrays = vec![
            ArrayEntry {
                name: "density_raw".into(),
                len: n,
            },
            ArrayEntry {
                name: "color_raw".into(),
                len: 3 * n,
            },
        ];
        arrays.extend(self.arrays.iter().map(|(name, v)| ArrayEntry {
            name: name.clone(),
            len: v.len(),
        }));
        let header = Header {
            version: VERSION,
            resolution: f.resolution,
            bbox: f.bbox,
            dtype: "f64-le".into(),
            color_activation: f.color_activation,
            arrays,
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header)?;

        let total: usize = header.arrays.iter().map(|a| a.len).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &f.params {
            out.extend_from_slice(&p[0].to_le_bytes());
        }
        for p in &f.params {
            for v in &p[1..] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (_, values) in &self.arrays {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a voxel field checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body_start = 20 + hlen;
        if bytes.len() < body_start {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[20..body_start])
            .map_err(|e| Error::format(origin, e.to_string()))?;
        if header.dtype != "f64-le" {
            return Err(bad(&format!("unsupported dtype {}", header.dtype)));
        }

        let mut cursor = &bytes[body_start..];
        let mut read_array = |len: usize| -> Result<Vec<f64>> {
            if cursor.len() < 8 * len {
                return Err(bad("truncated array data"));
            }
            let (head, rest) = cursor.split_at(8 * len);
            cursor = rest;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };

        let n: usize = header.resolution.iter().product();
        let mut field = VoxelField::with_activation(
            header.resolution,
            header.bbox,
            1.0,
            [0.5; 3],
            header.color_activation,
        )?;
        let mut arrays = Vec::new();
        for entry in &header.arrays {
            let values = read_array(entry.len)?;
            match entry.name.as_str() {
                "density_raw" if entry.len == n => {
                    for (p, v) in field.params.iter_mut().zip(values) {
                        p[0] = v;
                    }
                }
                "color_raw" if entry.len == 3 * n => {
                    for (p, c) in field.params.iter_mut().zip(values.chunks_exact(3)) {
                        p[1..].copy_from_slice(c);
                    }
                }
                "density_raw" | "color_raw" => return Err(bad("field array has wrong length")),
                _ => arrays.push((entry.name.clone(), values)),
            }
        }
        if !cursor.is_empty() {
            return Err(bad("trailing bytes after arrays"));
        }
        Ok(Container {
            field,
            extra: header.extra,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

impl VoxelField {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Container::new(self.clone()).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Container::load(path)?.field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn container_round_trip() {
        let mut f = VoxelField::new([3, 2, 4], Aabb::cube(1.5), 0.3, [0.1, 0.2, 0.3]).unwrap();
        for (i, p) in f.params.iter_mut().enumerate() {
            p[0] = i as f64;
            p[3] = -(i as f64) / 7.0;
        }
        let mut c = Container::new(f);
        c.extra = serde_json::json!({"step": 12});
        c.arrays.push(("adam_m".into(), vec![1.5, -2.5]));
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Container::from_bytes(&bytes, &PathBuf::from("mem")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.array("adam_m"), Some(&[1.5, -2.5][..]));
    }

    #[test]
    fn rejects_corrupt_data() {
        let f = VoxelField::new([2, 2, 2], Aabb::cube(1.0), 0.3, [0.5; 3]).unwrap();
        let bytes = Container::new(f).to_bytes().unwrap();
        let p = PathBuf::from("mem");
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3], &p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad, &p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra, &p).is_err());
    }
}
