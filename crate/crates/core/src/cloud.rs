//! Point clouds and the ASCII cloud file format.
//!
//! The file has one header line `x,y,z,intensity,ring` followed by one
//! comma-separated row per point, in acquisition order.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::LidarPoint;

pub const CLOUD_HEADER: [&str; 5] = ["x", "y", "z", "intensity", "ring"];

/// One LiDAR frame. Points of each ring keep their acquisition order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        self.points[i].position()
    }

    pub fn positions(&self, indices: &[usize]) -> Vec<Vector3<f64>> {
        indices.iter().map(|&i| self.position(i)).collect()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_reader(file, id).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::parse(path, msg),
            other => other,
        })
    }

    pub fn from_reader(reader: impl Read, frame_id: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .clone();
        if headers.iter().ne(CLOUD_HEADER.iter().copied()) {
            return Err(Error::InvalidInput(format!(
                "expected header `{}`, got `{}`",
                CLOUD_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut points = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::InvalidInput(e.to_string()))?;
            let line = row + 2;
            let num = |k: usize| -> Result<f64> {
                record[k].parse::<f64>().map_err(|e| {
                    Error::InvalidInput(format!("line {line}: column {}: {e}", CLOUD_HEADER[k]))
                })
            };
            let ring = record[4].parse::<u16>().map_err(|e| {
                Error::InvalidInput(format!("line {line}: column ring: {e}"))
            })?;
            let p = LidarPoint::new(num(0)?, num(1)?, num(2)?, num(3)?, ring);
            if !p.is_valid() {
                return Err(Error::InvalidInput(format!(
                    "line {line}: non-finite coordinate or negative intensity"
                )));
            }
            points.push(p);
        }
        Ok(Self::new(points, frame_id))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn to_writer(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", CLOUD_HEADER.join(","))?;
        for p in &self.points {
            writeln!(w, "{},{},{},{},{}", p.x, p.y, p.z, p.intensity, p.ring)?;
        }
        w.flush()
    }
}
