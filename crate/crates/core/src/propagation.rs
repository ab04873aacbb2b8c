//! Analytic coverage model: log-distance path loss with an additive
//! blockage penalty, best-server combining across stations.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envmodel::{BaseStation, Environment, Point};

/// RSS stored for cells whose center lies inside a building.
pub const BLOCKED_SENTINEL_DBM: f32 = -200.0;
/// Pedestrian receiver height.
pub const RECEIVER_HEIGHT_M: f64 = 1.5;
/// Free-space reference constant for d in meters and f in GHz.
pub const FSPL_CONST_DB: f64 = 32.45;

pub const FILE_MAGIC: &[u8; 4] = b"CTMP";
pub const FILE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4 + 2;

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("at least one base station is required")]
    NoStation,
    #[error("invalid propagation parameter: {0}")]
    InvalidParams(String),
    #[error("cell ({col}, {row}) outside {cols}x{rows} grid")]
    OutOfBounds {
        col: usize,
        row: usize,
        cols: usize,
        rows: usize,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub nlos_penalty_db: f64,
    pub path_loss_exponent: f64,
    pub min_distance_m: f64,
    pub shadowing_sigma_db: f64,
    pub shadowing_seed: u64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            nlos_penalty_db: 25.0,
            path_loss_exponent: 2.0,
            min_distance_m: 1.0,
            shadowing_sigma_db: 0.0,
            shadowing_seed: 0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<(), CoverageError> {
        let bad = |m: &str| Err(CoverageError::InvalidParams(m.into()));
        if !(self.nlos_penalty_db.is_finite() && self.nlos_penalty_db >= 0.0) {
            return bad("nlos_penalty_db must be >= 0");
        }
        if !(self.path_loss_exponent.is_finite() && self.path_loss_exponent >= 1.0) {
            return bad("path_loss_exponent must be >= 1");
        }
        if !(self.min_distance_m.is_finite() && self.min_distance_m > 0.0) {
            return bad("min_distance_m must be > 0");
        }
        if !(self.shadowing_sigma_db.is_finite() && self.shadowing_sigma_db >= 0.0) {
            return bad("shadowing_sigma_db must be >= 0");
        }
        Ok(())
    }
}

/// Model settings a map was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub params: PropagationParams,
    pub receiver_height_m: f64,
    pub stations: Vec<BaseStation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMap {
    pub cols: usize,
    pub rows: usize,
    pub resolution_m: f32,
    /// Row-major best-server RSS.
    pub rss_dbm: Vec<f32>,
    /// Row-major; true where the cell center is inside a building.
    pub blocked: Vec<bool>,
    pub station_count: u16,
    pub provenance: Option<Provenance>,
}

impl CoverageMap {
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    pub fn in_grid(&self, col: usize, row: usize) -> bool {
        col < self.cols && row < self.rows
    }

    pub fn rss_at(&self, col: usize, row: usize) -> Result<f64, CoverageError> {
        if !self.in_grid(col, row) {
            return Err(CoverageError::OutOfBounds {
                col,
                row,
                cols: self.cols,
                rows: self.rows,
            });
        }
        Ok(f64::from(self.rss_dbm[self.index(col, row)]))
    }

    pub fn is_blocked_cell(&self, col: usize, row: usize) -> bool {
        !self.in_grid(col, row) || self.blocked[self.index(col, row)]
    }

    /// Cell center in scene meters.
    pub fn cell_center(&self, col: usize, row: usize) -> Point {
        let res = f64::from(self.resolution_m);
        Point::new((col as f64 + 0.5) * res, (row as f64 + 0.5) * res)
    }

    /// A map with the given RSS grid and no blocked cells; handy for
    /// synthetic routing scenarios.
    pub fn from_grid(cols: usize, rows: usize, rss_dbm: Vec<f32>, blocked: Vec<bool>) -> Self {
        assert_eq!(rss_dbm.len(), cols * rows);
        assert_eq!(blocked.len(), cols * rows);
        let rss_dbm = rss_dbm
            .into_iter()
            .zip(&blocked)
            .map(|(v, &b)| if b { BLOCKED_SENTINEL_DBM } else { v })
            .collect();
        Self {
            cols,
            rows,
            resolution_m: 1.0,
            rss_dbm,
            blocked,
            station_count: 0,
            provenance: None,
        }
    }
}

/// Link distance between a station antenna and a receiver at a cell center.
pub fn link_distance_m(station: &BaseStation, cell: Point, min_distance_m: f64) -> f64 {
    let dx = station.x_m - cell.x;
    let dy = station.y_m - cell.y;
    let dz = station.height_m - RECEIVER_HEIGHT_M;
    (dx * dx + dy * dy + dz * dz).sqrt().max(min_distance_m)
}

pub fn path_loss_db(distance_m: f64, frequency_ghz: f64, exponent: f64) -> f64 {
    FSPL_CONST_DB + 10.0 * exponent * distance_m.log10() + 20.0 * frequency_ghz.log10()
}

fn shadowing_db(params: &PropagationParams, cell_index: usize, station_index: usize) -> f64 {
    if params.shadowing_sigma_db == 0.0 {
        return 0.0;
    }
    // Keyed by (cell, station) so parallel evaluation matches sequential.
    let key = params
        .shadowing_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (cell_index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (station_index as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    Normal::new(0.0, params.shadowing_sigma_db)
        .expect("sigma validated")
        .sample(&mut rng)
}

/// RSS from one station at a free cell center.
pub fn link_rss_dbm(
    env: &Environment,
    station: &BaseStation,
    cell: Point,
    params: &PropagationParams,
) -> f64 {
    let d = link_distance_m(station, cell, params.min_distance_m);
    let mut pl = path_loss_db(d, station.frequency_ghz, params.path_loss_exponent);
    if env.segment_blocked(station.position(), cell) {
        pl += params.nlos_penalty_db;
    }
    station.tx_power_dbm - pl
}

pub fn compute_coverage(
    env: &Environment,
    stations: &[BaseStation],
    params: &PropagationParams,
) -> Result<CoverageMap, CoverageError> {
    if stations.is_empty() {
        return Err(CoverageError::NoStation);
    }
    params.validate()?;
    if stations.len() > usize::from(u16::MAX) {
        return Err(CoverageError::InvalidParams("too many stations".into()));
    }
    let res = env.resolution_m;
    let cols = (env.width_m / res).ceil() as usize;
    let rows = (env.height_m / res).ceil() as usize;

    let cells: Vec<(f32, bool)> = (0..cols * rows)
        .into_par_iter()
        .map(|idx| {
            let (col, row) = (idx % cols, idx / cols);
            let c = Point::new((col as f64 + 0.5) * res, (row as f64 + 0.5) * res);
            if env.is_blocked(c.x, c.y) {
                return (BLOCKED_SENTINEL_DBM, true);
            }
            let best = stations
                .iter()
                .enumerate()
                .map(|(si, s)| {
                    let v = link_rss_dbm(env, s, c, params) + shadowing_db(params, idx, si);
                    v.min(s.tx_power_dbm)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            (best as f32, false)
        })
        .collect();

    let (rss_dbm, blocked) = cells.into_iter().unzip();
    Ok(CoverageMap {
        cols,
        rows,
        resolution_m: res as f32,
        rss_dbm,
        blocked,
        station_count: stations.len() as u16,
        provenance: Some(Provenance {
            model: "log-distance+nlos-penalty".into(),
            params: *params,
            receiver_height_m: RECEIVER_HEIGHT_M,
            stations: stations.to_vec(),
        }),
    })
}

pub fn provenance_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

pub fn encode_coverage(map: &CoverageMap) -> Vec<u8> {
    let n = map.cols * map.rows;
    let mut out = Vec::with_capacity(HEADER_LEN + 5 * n);
    out.extend_from_slice(FILE_MAGIC);
    out.extend_from_slice(&FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.cols as u32).to_le_bytes());
    out.extend_from_slice(&(map.rows as u32).to_le_bytes());
    out.extend_from_slice(&map.resolution_m.to_le_bytes());
    out.extend_from_slice(&map.station_count.to_le_bytes());
    for v in &map.rss_dbm {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(map.blocked.iter().map(|&b| u8::from(b)));
    out
}

pub fn decode_coverage(bytes: &[u8]) -> Result<CoverageMap, CoverageError> {
    let fmt = |m: &str| CoverageError::Format(m.into());
    if bytes.len() < HEADER_LEN {
        return Err(fmt("truncated header"));
    }
    if &bytes[..4] != FILE_MAGIC {
        return Err(fmt("bad magic"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != FILE_VERSION {
        return Err(CoverageError::Format(format!("unsupported version {version}")));
    }
    let cols = u32_at(6) as usize;
    let rows = u32_at(10) as usize;
    let resolution_m = f32::from_bits(u32_at(14));
    let station_count = u16_at(18);
    if !(resolution_m.is_finite() && resolution_m > 0.0) {
        return Err(fmt("dimension mismatch: resolution must be positive"));
    }
    let n = cols
        .checked_mul(rows)
        .ok_or_else(|| fmt("dimension mismatch: grid too large"))?;
    let expected = n
        .checked_mul(5)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| fmt("dimension mismatch: grid too large"))?;
    if bytes.len() < expected {
        return Err(fmt("truncated grid"));
    }
    if bytes.len() > expected {
        return Err(fmt("dimension mismatch: trailing bytes after mask"));
    }
    let body = &bytes[HEADER_LEN..];
    let rss_dbm = body[..4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let blocked = body[4 * n..]
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(fmt("mask byte must be 0 or 1")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CoverageMap {
        cols,
        rows,
        resolution_m,
        rss_dbm,
        blocked,
        station_count,
        provenance: None,
    })
}

/// Writes the binary grid, plus a JSON sidecar when the map carries provenance.
pub fn save_coverage(map: &CoverageMap, path: &Path) -> Result<(), CoverageError> {
    fs::write(path, encode_coverage(map))?;
    if let Some(p) = &map.provenance {
        let json = serde_json::to_string_pretty(p).expect("provenance serializes");
        fs::write(provenance_path(path), json)?;
    }
    Ok(())
}

pub fn load_coverage(path: &Path) -> Result<CoverageMap, CoverageError> {
    let mut map = decode_coverage(&fs::read(path)?)?;
    let side = provenance_path(path);
    if side.exists() {
        let text = fs::read_to_string(side)?;
        map.provenance = Some(
            serde_json::from_str(&text)
                .map_err(|e| CoverageError::Format(format!("provenance: {e}")))?,
        );
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmodel::Rect;

    fn ground_station(x: f64, y: f64) -> BaseStation {
        // height chosen so a co-located receiver is within the distance clamp
        BaseStation {
            height_m: RECEIVER_HEIGHT_M,
            ..BaseStation::new("s", x, y)
        }
    }

    #[test]
    fn closed_form_at_100m() {
        let env = Environment::open_field(300.0, 20.0);
        let s = ground_station(0.5, 10.5);
        let rss = link_rss_dbm(&env, &s, Point::new(100.5, 10.5), &PropagationParams::default());
        let expected = 30.0 - (32.45 + 40.0 + 20.0 * 3.9_f64.log10());
        assert!((rss - expected).abs() < 1e-12);
        assert!((rss - -54.27).abs() < 0.01);
    }

    #[test]
    fn colocated_cell_is_grid_maximum() {
        let env = Environment::open_field(50.0, 40.0);
        let s = ground_station(20.5, 20.5);
        let map = compute_coverage(&env, &[s], &PropagationParams::default()).unwrap();
        let at = map.rss_at(20, 20).unwrap();
        assert!((at - (30.0 - (32.45 + 20.0 * 3.9_f64.log10()))).abs() < 1e-4);
        assert!((at - -14.27).abs() < 0.01);
        let max = map.rss_dbm.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(f64::from(max), at);
    }

    #[test]
    fn nlos_penalty_is_additive() {
        let mut env = Environment::open_field(100.0, 100.0);
        let s = BaseStation::new("s", 10.0, 50.0);
        let cell = Point::new(80.5, 50.5);
        let p = PropagationParams::default();
        let los = link_rss_dbm(&env, &s, cell, &p);
        env.buildings.push(Rect::new(40.0, 40.0, 50.0, 60.0));
        let nlos = link_rss_dbm(&env, &s, cell, &p);
        assert!((los - nlos - p.nlos_penalty_db).abs() < 1e-9);
    }

    #[test]
    fn rss_at_errors_and_sentinel() {
        let mut env = Environment::open_field(20.0, 20.0);
        env.buildings.push(Rect::new(5.0, 5.0, 10.0, 10.0));
        let map = compute_coverage(&env, &[BaseStation::new("s", 1.0, 1.0)], &PropagationParams::default())
            .unwrap();
        assert!(map.rss_at(0, 0).unwrap().is_finite());
        assert_eq!(map.rss_at(7, 7).unwrap(), f64::from(BLOCKED_SENTINEL_DBM));
        assert!(map.blocked[map.index(7, 7)]);
        assert!(matches!(map.rss_at(20, 0), Err(CoverageError::OutOfBounds { .. })));
    }

    #[test]
    fn parameter_errors() {
        let env = Environment::open_field(10.0, 10.0);
        let p = PropagationParams::default();
        assert!(matches!(compute_coverage(&env, &[], &p), Err(CoverageError::NoStation)));
        let bad = PropagationParams {
            min_distance_m: 0.0,
            ..p
        };
        let s = [BaseStation::new("s", 1.0, 1.0)];
        assert!(matches!(compute_coverage(&env, &s, &bad), Err(CoverageError::InvalidParams(_))));
    }

    #[test]
    fn shadowing_is_deterministic_and_bounded() {
        let env = Environment::open_field(40.0, 30.0);
        let s = [BaseStation::new("s", 5.0, 5.0)];
        let p = PropagationParams {
            shadowing_sigma_db: 8.0,
            shadowing_seed: 11,
            ..Default::default()
        };
        let a = compute_coverage(&env, &s, &p).unwrap();
        let b = compute_coverage(&env, &s, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.rss_dbm.iter().all(|&v| f64::from(v) <= 30.0));
        let plain = compute_coverage(&env, &s, &PropagationParams::default()).unwrap();
        assert_ne!(a.rss_dbm, plain.rss_dbm);
    }

    #[test]
    fn format_errors() {
        let env = Environment::open_field(10.0, 10.0);
        let map = compute_coverage(&env, &[BaseStation::new("s", 1.0, 1.0)], &PropagationParams::default())
            .unwrap();
        let mut bytes = encode_coverage(&map);
        assert_eq!(decode_coverage(&bytes).unwrap().rss_dbm, map.rss_dbm);

        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"XXXX");
        assert!(decode_coverage(&wrong).unwrap_err().to_string().contains("bad magic"));

        // header says 10x10, carry 99 cells of RSS and no mask
        bytes.truncate(HEADER_LEN + 99 * 4);
        let err = decode_coverage(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated grid"), "{err}");
    }
}
