//! Urban scene geometry: building footprints, base stations and the
//! line-of-sight predicates used by the propagation model.
//!
//! Buildings are axis-aligned rectangles. Obstacles are open sets: a point
//! on a building edge is free, and a segment that only grazes an edge or a
//! corner is not blocked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attempts allowed per block before random placement gives up.
pub const PLACEMENT_RETRY_BUDGET: usize = 1000;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error in {element}: {reason}")]
    Validation { element: String, reason: String },
    #[error("placement failed for {element} after {attempts} attempts")]
    Placement { element: String, attempts: usize },
}

fn invalid(element: impl Into<String>, reason: impl Into<String>) -> EnvError {
    EnvError::Validation {
        element: element.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    fn check(&self) -> Result<(), String> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if self.x_min >= self.x_max {
            return Err("x_min < x_max violated".into());
        }
        if self.y_min >= self.y_max {
            return Err("y_min < y_max violated".into());
        }
        Ok(())
    }

    /// Strict interior test.
    pub fn contains_interior(&self, p: Point) -> bool {
        p.x > self.x_min && p.x < self.x_max && p.y > self.y_min && p.y < self.y_max
    }

    /// True when the interiors share positive area.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }

    /// Whether the segment `a`–`b` passes through the open interior.
    ///
    /// Clips the segment against the closed rectangle (Liang–Barsky slabs);
    /// the open interior is hit iff the clipped piece has positive length and
    /// its midpoint is strictly inside.
    pub fn segment_hits_interior(&self, a: Point, b: Point) -> bool {
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for (p, q) in [
            (-dx, a.x - self.x_min),
            (dx, self.x_max - a.x),
            (-dy, a.y - self.y_min),
            (dy, self.y_max - a.y),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        if t0 > t1 {
            return false;
        }
        if t0 == t1 && (dx != 0.0 || dy != 0.0) {
            return false;
        }
        let tm = 0.5 * (t0 + t1);
        self.contains_interior(Point::new(a.x + tm * dx, a.y + tm * dy))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: String,
    pub x_m: f64,
    pub y_m: f64,
    #[serde(default = "default_station_height")]
    pub height_m: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "default_frequency")]
    pub frequency_ghz: f64,
}

fn default_station_height() -> f64 {
    10.0
}
fn default_tx_power() -> f64 {
    30.0
}
fn default_frequency() -> f64 {
    3.9
}
fn default_resolution() -> f64 {
    1.0
}

impl BaseStation {
    /// Station with the default height, power and carrier.
    pub fn new(id: impl Into<String>, x_m: f64, y_m: f64) -> Self {
        Self {
            id: id.into(),
            x_m,
            y_m,
            height_m: default_station_height(),
            tx_power_dbm: default_tx_power(),
            frequency_ghz: default_frequency(),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x_m, self.y_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub width_m: f64,
    pub height_m: f64,
    #[serde(default = "default_resolution")]
    pub resolution_m: f64,
    pub buildings: Vec<Rect>,
}

impl Environment {
    /// Building-free scene.
    pub fn open_field(width_m: f64, height_m: f64) -> Self {
        Self {
            width_m,
            height_m,
            resolution_m: 1.0,
            buildings: Vec::new(),
        }
    }

    pub fn in_bounds(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.width_m && p.y >= 0.0 && p.y <= self.height_m
    }

    /// Outside the scene, or strictly inside a building.
    pub fn is_blocked(&self, x_m: f64, y_m: f64) -> bool {
        let p = Point::new(x_m, y_m);
        !self.in_bounds(p) || self.buildings.iter().any(|b| b.contains_interior(p))
    }

    /// Line-of-sight test between two in-bounds points.
    pub fn segment_blocked(&self, a: Point, b: Point) -> bool {
        self.buildings.iter().any(|r| r.segment_hits_interior(a, b))
    }

    /// Checks every environment invariant, naming the first offending element.
    pub fn validate(&self) -> Result<(), EnvError> {
        for (name, v) in [
            ("width_m", self.width_m),
            ("height_m", self.height_m),
            ("resolution_m", self.resolution_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be a positive finite number"));
            }
        }
        for (i, b) in self.buildings.iter().enumerate() {
            b.check().map_err(|r| invalid(format!("buildings[{i}]"), r))?;
            if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > self.width_m || b.y_max > self.height_m {
                return Err(invalid(format!("buildings[{i}]"), "outside scene bounds"));
            }
        }
        for i in 0..self.buildings.len() {
            for j in i + 1..self.buildings.len() {
                if self.buildings[i].overlaps(&self.buildings[j]) {
                    return Err(invalid(
                        format!("buildings[{i}]"),
                        format!("overlaps buildings[{j}]"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn validate_station(&self, s: &BaseStation) -> Result<(), EnvError> {
        let element = format!("station {}", s.id);
        if !(s.x_m.is_finite() && s.y_m.is_finite() && s.height_m.is_finite()) {
            return Err(invalid(element, "non-finite position"));
        }
        if !self.in_bounds(s.position()) {
            return Err(invalid(element, "outside scene bounds"));
        }
        if self.is_blocked(s.x_m, s.y_m) {
            return Err(invalid(element, "inside a building"));
        }
        if !(s.frequency_ghz.is_finite() && s.frequency_ghz > 0.0) {
            return Err(invalid(element, "frequency_ghz must be positive"));
        }
        if !s.tx_power_dbm.is_finite() {
            return Err(invalid(element, "tx_power_dbm must be finite"));
        }
        Ok(())
    }
}

/// A scene document: environment geometry plus the stations placed in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width_m: f64,
    pub height_m: f64,
    #[serde(default = "default_resolution")]
    pub resolution_m: f64,
    pub buildings: Vec<Rect>,
    pub stations: Vec<BaseStation>,
}

impl Scene {
    pub fn new(env: Environment, stations: Vec<BaseStation>) -> Self {
        Self {
            width_m: env.width_m,
            height_m: env.height_m,
            resolution_m: env.resolution_m,
            buildings: env.buildings,
            stations,
        }
    }

    pub fn environment(&self) -> Environment {
        Environment {
            width_m: self.width_m,
            height_m: self.height_m,
            resolution_m: self.resolution_m,
            buildings: self.buildings.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let env = self.environment();
        env.validate()?;
        for s in &self.stations {
            env.validate_station(s)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }
}

/// Parses and validates a scene document.
pub fn load_environment(doc: &str) -> Result<(Environment, Vec<BaseStation>), EnvError> {
    let scene: Scene = serde_json::from_str(doc).map_err(|e| EnvError::Schema(e.to_string()))?;
    scene.validate()?;
    let env = scene.environment();
    Ok((env, scene.stations))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub width_m: f64,
    pub height_m: f64,
    pub blocks: usize,
    pub block_min_m: f64,
    pub block_max_m: f64,
    pub stations: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            width_m: 700.0,
            height_m: 600.0,
            blocks: 25,
            block_min_m: 20.0,
            block_max_m: 60.0,
            stations: 4,
        }
    }
}

/// Seeded random city: non-overlapping blocks with integer-meter corners,
/// then stations on free ground.
pub fn generate_random_environment(
    seed: u64,
    params: &GenParams,
) -> Result<(Environment, Vec<BaseStation>), EnvError> {
    let bad = |r: &str| invalid("params", r);
    if !(params.width_m > 0.0 && params.height_m > 0.0) {
        return Err(bad("scene extent must be positive"));
    }
    if params.stations == 0 {
        return Err(bad("at least one station is required"));
    }
    if params.blocks > 0 && !(params.block_min_m > 0.0 && params.block_min_m <= params.block_max_m) {
        return Err(bad("block size range must satisfy 0 < min <= max"));
    }
    if params.blocks > 0
        && (params.block_min_m >= params.width_m || params.block_min_m >= params.height_m)
    {
        return Err(bad("blocks do not fit inside the scene"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Environment::open_field(params.width_m, params.height_m);
    let lo = params.block_min_m.round().max(1.0) as i64;
    let hi = (params.block_max_m.round() as i64).max(lo);

    for i in 0..params.blocks {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRY_BUDGET {
            let w = rng.random_range(lo..=hi) as f64;
            let h = rng.random_range(lo..=hi) as f64;
            if w >= params.width_m || h >= params.height_m {
                continue;
            }
            let x = rng.random_range(0..=(params.width_m - w).floor() as i64) as f64;
            let y = rng.random_range(0..=(params.height_m - h).floor() as i64) as f64;
            let r = Rect::new(x, y, x + w, y + h);
            if env.buildings.iter().all(|b| !b.overlaps(&r)) {
                env.buildings.push(r);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(EnvError::Placement {
                element: format!("block {i}"),
                attempts: PLACEMENT_RETRY_BUDGET,
            });
        }
    }

    let mut stations = Vec::with_capacity(params.stations);
    for i in 0..params.stations {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRY_BUDGET {
            let x = rng.random_range(0..=params.width_m.floor() as i64) as f64;
            let y = rng.random_range(0..=params.height_m.floor() as i64) as f64;
            if !env.is_blocked(x, y) {
                stations.push(BaseStation::new(format!("bs{i}"), x, y));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(EnvError::Placement {
                element: format!("station {i}"),
                attempts: PLACEMENT_RETRY_BUDGET,
            });
        }
    }
    Ok((env, stations))
}
