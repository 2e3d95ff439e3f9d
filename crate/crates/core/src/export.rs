//! Map snapshots on disk: binary PGM (P5) with a JSON sidecar carrying the
//! grid geometry, plus a plain CSV dump of raw cell values.
//!
//! PGM rows are written top-down in world +y, so the first image row is the
//! highest map row. Costs are quantized as `round(cost * 255)`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::costmap::GaussianCostMap;
use crate::error::MapError;
use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub spec: GridSpec,
    pub image: String,
    /// Pixel value corresponding to cost 1.0.
    pub max_value: u8,
    pub row_order: String,
}

pub fn quantize(cost: f64) -> u8 {
    (cost.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode a cost map as a P5 PGM byte buffer.
pub fn encode_pgm(map: &GaussianCostMap) -> Vec<u8> {
    let spec = map.spec();
    let mut out = format!("P5\n{} {}\n255\n", spec.cols, spec.rows).into_bytes();
    out.reserve(spec.len());
    for row in (0..spec.rows).rev() {
        let start = row * spec.cols;
        out.extend(map.values()[start..start + spec.cols].iter().map(|&v| quantize(v)));
    }
    out
}

/// Decode a P5 PGM produced by [`encode_pgm`] back into a (quantized) cost map.
pub fn decode_pgm(bytes: &[u8], spec: GridSpec) -> Result<GaussianCostMap, MapError> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(MapError::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // single whitespace byte separates header from raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(MapError::Format(format!("expected P5 magic, found {}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| MapError::Format(format!("bad PGM header field {s:?}")))
    };
    let (cols, rows, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if (rows, cols) != (spec.rows, spec.cols) {
        return Err(MapError::Dimension {
            expected: (spec.rows, spec.cols),
            found: (rows, cols),
        });
    }
    if maxval == 0 || maxval > 255 {
        return Err(MapError::Format(format!("unsupported maxval {maxval}")));
    }
    let raster = bytes
        .get(pos..pos + rows * cols)
        .ok_or_else(|| MapError::Format("truncated PGM raster".into()))?;
    let mut values = vec![0.0; rows * cols];
    for (img_row, chunk) in raster.chunks(cols).enumerate() {
        let row = rows - 1 - img_row;
        for (col, &p) in chunk.iter().enumerate() {
            values[row * cols + col] = p as f64 / maxval as f64;
        }
    }
    GaussianCostMap::from_values(spec, values)
}

/// Write `<stem>.pgm` and `<stem>.json`; returns both paths.
pub fn write_pgm(map: &GaussianCostMap, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, MapError> {
    fs::create_dir_all(dir)?;
    let image = dir.join(format!("{stem}.pgm"));
    let sidecar = dir.join(format!("{stem}.json"));
    fs::write(&image, encode_pgm(map))?;
    let meta = MapMetadata {
        spec: *map.spec(),
        image: format!("{stem}.pgm"),
        max_value: 255,
        row_order: "top_is_max_y".into(),
    };
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(vec![image, sidecar])
}

/// Load a map written by [`write_pgm`] from its sidecar path.
pub fn read_pgm(sidecar: &Path) -> Result<GaussianCostMap, MapError> {
    let meta: MapMetadata = serde_json::from_str(&fs::read_to_string(sidecar)?)?;
    meta.spec.validate()?;
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&meta.image))?;
    decode_pgm(&bytes, meta.spec)
}

/// Raw float dump: one line per map row (row 0 first), comma-separated.
pub fn write_csv(map: &GaussianCostMap, path: &Path) -> Result<(), MapError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    let cols = map.spec().cols;
    for row in map.values().chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cell;

    fn sample() -> GaussianCostMap {
        let spec = GridSpec::new(3, 4, 0.1, [1.0, 2.0]).unwrap();
        let values = (0..12).map(|i| i as f64 / 11.0).collect();
        GaussianCostMap::from_values(spec, values).unwrap()
    }

    #[test]
    fn pgm_header_and_orientation() {
        let m = sample();
        let bytes = encode_pgm(&m);
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        let raster = &bytes[b"P5\n4 3\n255\n".len()..];
        // first image row is the top (last) map row
        assert_eq!(raster[0], quantize(m.get(Cell::new(2, 0))));
        assert_eq!(raster[11], quantize(m.get(Cell::new(0, 3))));
    }

    #[test]
    fn pgm_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample();
        let paths = write_pgm(&m, dir.path(), "snap").unwrap();
        let back = read_pgm(&paths[1]).unwrap();
        assert_eq!(back.spec(), m.spec());
        for (a, b) in back.values().iter().zip(m.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn decode_rejects_wrong_magic_and_size() {
        let spec = GridSpec::new(3, 4, 0.1, [0.0, 0.0]).unwrap();
        assert!(decode_pgm(b"P2\n4 3\n255\n", spec).is_err());
        let mut bytes = encode_pgm(&sample());
        bytes.truncate(bytes.len() - 1);
        assert!(decode_pgm(&bytes, spec).is_err());
        let other = GridSpec::new(4, 3, 0.1, [0.0, 0.0]).unwrap();
        assert!(decode_pgm(&encode_pgm(&sample()), other).is_err());
    }

    #[test]
    fn csv_dump() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_csv(&sample(), &p).unwrap();
        let text = fs::read_to_string(p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "0.000000,0.090909,0.181818,0.272727");
    }
}
