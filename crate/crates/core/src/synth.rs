//! Synthetic street scenes, map density perturbation and VLP-16-like scans.
//!
//! A scene is a set of vertical facades, optionally carrying box-shaped
//! protrusions such as balconies or bay windows. Maps sample every surface
//! on a regular grid with exact normals. Scans ray-cast a rotating
//! multi-layer sensor against the same surfaces. The ground plane blocks
//! rays but never returns points, and parked-car boxes appear only in scans.
//!
//! Scan points are expressed in the vehicle frame: x and y relative to the
//! sensor pose, z as height above the ground, matching the map's z.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MapCloud, Point3, Pose2, ScanCloud, UnitNormal3};
use crate::index::{orient_toward, pca_normal, Aabb};

/// Vertical wall from `start` to `end` (xy, meters) rising from the ground to
/// `height`. Its normal points to the left of the start-to-end direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Facade {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub height: f64,
}

impl Facade {
    /// Facade between `a` and `b` whose normal faces along `facing`.
    pub fn facing(a: [f64; 2], b: [f64; 2], height: f64, facing: [f64; 2]) -> Self {
        let f = Self { start: a, end: b, height };
        let n = f.normal();
        if n[0] * facing[0] + n[1] * facing[1] < 0.0 {
            Self { start: b, end: a, height }
        } else {
            f
        }
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    fn direction(&self) -> [f64; 2] {
        let len = self.length();
        [(self.end[0] - self.start[0]) / len, (self.end[1] - self.start[1]) / len]
    }

    pub fn normal(&self) -> [f64; 2] {
        let [dx, dy] = self.direction();
        [-dy, dx]
    }

    fn quad(&self) -> Quad {
        let [nx, ny] = self.normal();
        Quad {
            origin: Point3::new(self.start[0], self.start[1], 0.0),
            u: [self.end[0] - self.start[0], self.end[1] - self.start[1], 0.0],
            v: [0.0, 0.0, self.height],
            normal: UnitNormal3::new(nx, ny, 0.0).expect("facade has nonzero length"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Two parallel facades along the x-axis, `street_width` apart.
    Corridor,
    /// Two perpendicular streets meeting at the origin, with one pair of
    /// facades at each of the four block corners.
    Crossing,
    Custom(Vec<Facade>),
}

/// Resamples the map points inside `region` to `factor` times their density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBias {
    pub region: Aabb,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub layout: Layout,
    pub facade_height: f64,
    pub street_width: f64,
    /// Length of each street (meters).
    pub street_length: f64,
    pub map_spacing: f64,
    /// Protrusions per 10 m of facade.
    pub protrusion_density: f64,
    /// Parked-car boxes per facade. They appear in scans, never in the map.
    pub clutter_per_facade: usize,
    pub density_biases: Vec<DensityBias>,
    /// Half-width (meters) of the square that sensor positions are drawn from.
    pub pose_jitter: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            layout: Layout::Corridor,
            facade_height: 12.0,
            street_width: 12.0,
            street_length: 100.0,
            map_spacing: 0.05,
            protrusion_density: 0.5,
            clutter_per_facade: 0,
            density_biases: Vec::new(),
            pose_jitter: 0.5,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.into()));
        if !positive(self.map_spacing) {
            return bad("map_spacing must be positive");
        }
        if !positive(self.street_width) || !positive(self.street_length) || !positive(self.facade_height) {
            return bad("street_width, street_length and facade_height must be positive");
        }
        if !(self.protrusion_density.is_finite() && self.protrusion_density >= 0.0) {
            return bad("protrusion_density must be non-negative");
        }
        if !(self.pose_jitter.is_finite() && self.pose_jitter >= 0.0) {
            return bad("pose_jitter must be non-negative");
        }
        if self.density_biases.iter().any(|b| !positive(b.factor)) {
            return bad("density bias factors must be positive");
        }
        if let Layout::Custom(facades) = &self.layout {
            if facades.iter().any(|f| !(f.length() > 0.0 && positive(f.height))) {
                return bad("custom facades need positive length and height");
            }
        }
        Ok(())
    }
}

/// Planar rectangle `origin + a·u + b·v` for `a, b ∈ [0, 1]`, with `u ⟂ v`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Quad {
    origin: Point3,
    u: [f64; 3],
    v: [f64; 3],
    normal: UnitNormal3,
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

impl Quad {
    fn point(&self, a: f64, b: f64) -> Point3 {
        let o = &self.origin;
        Point3::new(
            o.x + a * self.u[0] + b * self.v[0],
            o.y + a * self.u[1] + b * self.v[1],
            o.z + a * self.u[2] + b * self.v[2],
        )
    }

    /// Grid samples at (about) `spacing`, edges included.
    fn sample(&self, spacing: f64) -> impl Iterator<Item = Point3> + '_ {
        let na = ((norm3(self.u) / spacing).round() as usize).max(1);
        let nb = ((norm3(self.v) / spacing).round() as usize).max(1);
        (0..=nb).flat_map(move |kb| (0..=na).map(move |ka| self.point(ka as f64 / na as f64, kb as f64 / nb as f64)))
    }

    /// Ray parameter of the hit with `origin + t·dir`, if any.
    fn intersect(&self, origin: &Point3, dir: [f64; 3]) -> Option<f64> {
        let n = [self.normal.nx(), self.normal.ny(), self.normal.nz()];
        let denom = dot3(n, dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = dot3(n, self.origin.sub(origin)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let hit = Point3::new(origin.x + t * dir[0], origin.y + t * dir[1], origin.z + t * dir[2]);
        let rel = hit.sub(&self.origin);
        let a = dot3(rel, self.u) / dot3(self.u, self.u);
        let b = dot3(rel, self.v) / dot3(self.v, self.v);
        ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then_some(t)
    }
}

/// Box with a vertical footprint spanned by `length · u` and `depth · n`
/// from `corner`, between heights `z0` and `z1`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    corner: [f64; 2],
    u: [f64; 2],
    n: [f64; 2],
    length: f64,
    depth: f64,
    z0: f64,
    z1: f64,
}

impl Block {
    /// Closed containment test, grown by `margin` on every side.
    fn contains(&self, p: &Point3, margin: f64) -> bool {
        let (rx, ry) = (p.x - self.corner[0], p.y - self.corner[1]);
        let a = rx * self.u[0] + ry * self.u[1];
        let b = rx * self.n[0] + ry * self.n[1];
        a >= -margin
            && a <= self.length + margin
            && b >= -margin
            && b <= self.depth + margin
            && p.z >= self.z0 - margin
            && p.z <= self.z1 + margin
    }

    fn faces(&self, with_back: bool) -> Vec<Quad> {
        let [ux, uy] = self.u;
        let [nx, ny] = self.n;
        let lu = [ux * self.length, uy * self.length, 0.0];
        let dn = [nx * self.depth, ny * self.depth, 0.0];
        let h = [0.0, 0.0, self.z1 - self.z0];
        let at = |a: f64, b: f64, z: f64| {
            Point3::new(
                self.corner[0] + a * ux + b * nx,
                self.corner[1] + a * uy + b * ny,
                z,
            )
        };
        let unit = |x: f64, y: f64, z: f64| UnitNormal3::new(x, y, z).expect("block axes are unit");
        let mut faces = vec![
            Quad { origin: at(0.0, self.depth, self.z0), u: lu, v: h, normal: unit(nx, ny, 0.0) },
            Quad { origin: at(0.0, 0.0, self.z0), u: dn, v: h, normal: unit(-ux, -uy, 0.0) },
            Quad { origin: at(self.length, 0.0, self.z0), u: dn, v: h, normal: unit(ux, uy, 0.0) },
            Quad { origin: at(0.0, 0.0, self.z1), u: lu, v: dn, normal: UnitNormal3::PLUS_Z },
        ];
        if self.z0 > 0.0 {
            faces.push(Quad { origin: at(0.0, 0.0, self.z0), u: lu, v: dn, normal: UnitNormal3::MINUS_Z });
        }
        if with_back {
            faces.push(Quad { origin: at(0.0, 0.0, self.z0), u: lu, v: h, normal: unit(-nx, -ny, 0.0) });
        }
        faces
    }
}

const PROTRUSION_LENGTH: (f64, f64) = (1.0, 2.5);
const PROTRUSION_DEPTH: (f64, f64) = (0.3, 1.0);
const PROTRUSION_BOTTOM: (f64, f64) = (0.3, 2.5);
const PROTRUSION_HEIGHT: (f64, f64) = (0.5, 2.5);
/// Parked car: length, width, height and gap to the facade (meters).
const CAR: [f64; 4] = [4.5, 1.8, 1.5, 2.0];

/// Concrete geometry of a [`SceneSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    spec: SceneSpec,
    facades: Vec<Facade>,
    protrusions: Vec<Block>,
    clutter: Vec<Block>,
}

impl Scene {
    pub fn build(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let (hw, hl, h) = (spec.street_width / 2.0, spec.street_length / 2.0, spec.facade_height);
        let facades = match &spec.layout {
            Layout::Corridor => vec![
                Facade::facing([-hl, hw], [hl, hw], h, [0.0, -1.0]),
                Facade::facing([-hl, -hw], [hl, -hw], h, [0.0, 1.0]),
            ],
            Layout::Crossing => {
                let mut f = Vec::new();
                for sx in [1.0, -1.0] {
                    for sy in [1.0, -1.0] {
                        f.push(Facade::facing([sx * hw, sy * hw], [sx * hl, sy * hw], h, [0.0, -sy]));
                        f.push(Facade::facing([sx * hw, sy * hw], [sx * hw, sy * hl], h, [-sx, 0.0]));
                    }
                }
                f
            }
            Layout::Custom(f) => f.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut protrusions = Vec::new();
        let mut clutter = Vec::new();
        for f in &facades {
            let (len, u, n) = (f.length(), f.direction(), f.normal());
            let count = (spec.protrusion_density * len / 10.0).round() as usize;
            for _ in 0..count {
                let length = rng.random_range(PROTRUSION_LENGTH.0..PROTRUSION_LENGTH.1).min(len);
                let a = rng.random_range(0.0..=len - length);
                let depth = rng.random_range(PROTRUSION_DEPTH.0..PROTRUSION_DEPTH.1);
                let z0 = rng.random_range(PROTRUSION_BOTTOM.0..PROTRUSION_BOTTOM.1).min(f.height);
                let z1 = (z0 + rng.random_range(PROTRUSION_HEIGHT.0..PROTRUSION_HEIGHT.1)).min(f.height);
                if z1 <= z0 {
                    continue;
                }
                protrusions.push(Block {
                    corner: [f.start[0] + a * u[0], f.start[1] + a * u[1]],
                    u,
                    n,
                    length,
                    depth,
                    z0,
                    z1,
                });
            }
            let [car_len, car_width, car_height, gap] = CAR;
            for _ in 0..spec.clutter_per_facade {
                if len < car_len {
                    break;
                }
                let a = rng.random_range(0.0..=len - car_len);
                clutter.push(Block {
                    corner: [f.start[0] + a * u[0] + gap * n[0], f.start[1] + a * u[1] + gap * n[1]],
                    u,
                    n,
                    length: car_len,
                    depth: car_width,
                    z0: 0.0,
                    z1: car_height,
                });
            }
        }
        Ok(Self {
            spec: spec.clone(),
            facades,
            protrusions,
            clutter,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn facades(&self) -> &[Facade] {
        &self.facades
    }

    pub fn protrusion_count(&self) -> usize {
        self.protrusions.len()
    }

    pub fn clutter_count(&self) -> usize {
        self.clutter.len()
    }

    /// Whether a sensor at `p` would sit in open street space.
    pub fn is_free(&self, p: &Point3) -> bool {
        let (hw, hl) = (self.spec.street_width / 2.0, self.spec.street_length / 2.0);
        let in_street = match self.spec.layout {
            Layout::Corridor => p.y.abs() < hw && p.x.abs() < hl,
            Layout::Crossing => (p.x.abs() < hw || p.y.abs() < hw) && p.x.abs() < hl && p.y.abs() < hl,
            Layout::Custom(_) => true,
        };
        in_street && !self.protrusions.iter().chain(&self.clutter).any(|b| b.contains(p, 0.0))
    }

    fn map_quads(&self) -> Vec<Quad> {
        self.facades
            .iter()
            .map(Facade::quad)
            .chain(self.protrusions.iter().flat_map(|b| b.faces(false)))
            .collect()
    }

    fn scan_quads(&self) -> Vec<Quad> {
        let mut quads = self.map_quads();
        quads.extend(self.clutter.iter().flat_map(|b| b.faces(true)));
        quads
    }

    /// Reference map: every facade and protrusion face sampled at the map
    /// spacing, minus facade area hidden behind protrusions, followed by the
    /// configured density biases.
    pub fn map(&self) -> MapCloud {
        let spacing = self.spec.map_spacing;
        let mut map = MapCloud::default();
        for f in &self.facades {
            let q = f.quad();
            for p in q.sample(spacing) {
                if !self.protrusions.iter().any(|b| b.contains(&p, 1e-9)) {
                    map.push(p, q.normal);
                }
            }
        }
        for (k, b) in self.protrusions.iter().enumerate() {
            for q in b.faces(false) {
                for p in q.sample(spacing) {
                    let hidden = self
                        .protrusions
                        .iter()
                        .enumerate()
                        .any(|(m, other)| m != k && other.contains(&p, -1e-9));
                    if !hidden {
                        map.push(p, q.normal);
                    }
                }
            }
        }
        for (k, bias) in self.spec.density_biases.iter().enumerate() {
            map = apply_density_bias(&map, bias, mix_seed(self.spec.seed ^ BIAS_STREAM, k as u64));
        }
        map
    }
}

const BIAS_STREAM: u64 = 0x6269_6173;

/// Map of `spec`; shorthand for building the scene and sampling it.
pub fn generate_map(spec: &SceneSpec) -> Result<MapCloud> {
    Ok(Scene::build(spec)?.map())
}

/// Maximum per-axis jitter of duplicated points (meters).
pub const BIAS_JITTER: f64 = 0.01;

/// Resamples the points inside `bias.region`.
///
/// Factors above 1 add jittered duplicates right after each original (the
/// integer part deterministically, the fraction with matching probability);
/// factors below 1 keep each point with probability `factor`. Duplicates
/// stay inside the region and carry the original's normal.
pub fn apply_density_bias(map: &MapCloud, bias: &DensityBias, seed: u64) -> MapCloud {
    if bias.factor == 1.0 {
        return map.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &bias.region;
    let mut out = MapCloud::default();
    for (p, n) in map.points.iter().zip(&map.normals) {
        if !r.contains(p) {
            out.push(*p, *n);
            continue;
        }
        if bias.factor < 1.0 {
            if rng.random::<f64>() < bias.factor {
                out.push(*p, *n);
            }
            continue;
        }
        out.push(*p, *n);
        let extra = bias.factor - 1.0;
        let copies = extra.floor() as usize + usize::from(rng.random::<f64>() < extra.fract());
        for _ in 0..copies {
            let mut jitter = || rng.random_range(-BIAS_JITTER..=BIAS_JITTER);
            let q = Point3::new(
                (p.x + jitter()).clamp(r.min.x, r.max.x),
                (p.y + jitter()).clamp(r.min.y, r.max.y),
                (p.z + jitter()).clamp(r.min.z, r.max.z),
            );
            out.push(q, *n);
        }
    }
    out
}

/// Multi-layer spinning LiDAR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub layers: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub azimuth_step_deg: f64,
    /// Mounting height above ground (meters).
    pub height: f64,
    pub max_range: f64,
    /// Standard deviation of isotropic Gaussian range noise (meters).
    pub noise_sigma: f64,
    /// Azimuth steps on either side used for scan normal estimation.
    pub normal_window: usize,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            layers: 16,
            min_elevation_deg: -15.0,
            max_elevation_deg: 15.0,
            azimuth_step_deg: 0.2,
            height: 1.8,
            max_range: 100.0,
            noise_sigma: 0.01,
            normal_window: 4,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.layers >= 1
            && self.min_elevation_deg <= self.max_elevation_deg
            && self.min_elevation_deg > -90.0
            && self.max_elevation_deg < 90.0
            && self.azimuth_step_deg > 0.0
            && self.azimuth_step_deg <= 360.0
            && self.height.is_finite()
            && self.max_range > 0.0
            && self.noise_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid sensor spec {self:?}")))
        }
    }

    pub fn azimuth_count(&self) -> usize {
        (360.0 / self.azimuth_step_deg).round() as usize
    }

    pub fn ray_count(&self) -> usize {
        self.layers * self.azimuth_count()
    }

    /// Elevation of `layer` in radians; layers are evenly spaced, both
    /// limits included.
    pub fn elevation(&self, layer: usize) -> f64 {
        let deg = if self.layers == 1 {
            self.min_elevation_deg
        } else {
            let step = (self.max_elevation_deg - self.min_elevation_deg) / (self.layers - 1) as f64;
            self.min_elevation_deg + layer as f64 * step
        };
        deg.to_radians()
    }

    /// Unit ray direction in the world for `layer`, azimuth index `az` and
    /// sensor heading `theta`.
    pub fn ray_direction(&self, layer: usize, az: usize, theta: f64) -> [f64; 3] {
        let e = self.elevation(layer);
        let a = theta + (az as f64 * self.azimuth_step_deg).to_radians();
        [e.cos() * a.cos(), e.cos() * a.sin(), e.sin()]
    }
}

/// Ray-casts one sweep of `sensor` at `pose` against `scene`.
///
/// Returns points in the vehicle frame with normals estimated by PCA over
/// the organized neighborhood (adjacent layers, nearby azimuths) and
/// oriented toward the sensor. Rays that hit the ground first, or nothing
/// within range, produce no point.
pub fn simulate_scan(scene: &Scene, pose: &Pose2, sensor: &SensorSpec, seed: u64) -> Result<ScanCloud> {
    sensor.validate()?;
    let origin = Point3::new(pose.tx, pose.ty, sensor.height);
    if !scene.is_free(&origin) {
        return Err(Error::SensorInsideGeometry);
    }
    let quads = scene.scan_quads();
    let noise = Normal::new(0.0, sensor.noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_az = sensor.azimuth_count();
    let mut slots: Vec<Option<u32>> = vec![None; sensor.layers * n_az];
    let mut world = Vec::new();
    let mut ranges = Vec::new();
    let mut rings = Vec::new();
    for layer in 0..sensor.layers {
        for az in 0..n_az {
            let dir = sensor.ray_direction(layer, az, pose.theta);
            let mut t_hit = quads
                .iter()
                .filter_map(|q| q.intersect(&origin, dir))
                .fold(f64::INFINITY, f64::min);
            if dir[2] < 0.0 && sensor.height / -dir[2] < t_hit {
                t_hit = f64::INFINITY;
            }
            if t_hit > sensor.max_range {
                continue;
            }
            let p = Point3::new(
                origin.x + t_hit * dir[0] + noise.sample(&mut rng),
                origin.y + t_hit * dir[1] + noise.sample(&mut rng),
                origin.z + t_hit * dir[2] + noise.sample(&mut rng),
            );
            slots[layer * n_az + az] = Some(world.len() as u32);
            world.push(p);
            ranges.push(t_hit);
            rings.push((layer, az));
        }
    }
    let inv = pose.inverse();
    let points: Vec<Point3> = world.iter().map(|p| inv.apply(p)).collect();
    let mut normals: Vec<Option<UnitNormal3>> = (0..points.len())
        .map(|k| {
            let (layer, az) = rings[k];
            let radius = 0.05 * ranges[k] + 0.1;
            let r2 = radius * radius;
            let w = sensor.normal_window as isize;
            let mut nbrs = Vec::new();
            for l in layer.saturating_sub(1)..=(layer + 1).min(sensor.layers - 1) {
                for da in -w..=w {
                    let a = (az as isize + da).rem_euclid(n_az as isize) as usize;
                    if let Some(m) = slots[l * n_az + a] {
                        let q = points[m as usize];
                        if q.dist_sq(&points[k]) <= r2 {
                            nbrs.push(q);
                        }
                    }
                }
            }
            pca_normal(nbrs)
        })
        .collect();
    orient_toward(&points, &mut normals, &Point3::new(0.0, 0.0, sensor.height));
    ScanCloud::new(points, Some(normals))
}

/// SplitMix64 finalizer over `seed + stream`; decorrelates nearby seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One localization instance with known ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticEpoch {
    pub scene: Scene,
    pub map: MapCloud,
    pub scan: ScanCloud,
    pub truth: Pose2,
}

/// Builds epoch `epoch` of a seeded batch: its own protrusion layout, a
/// sensor pose drawn within `pose_jitter` of the origin with uniform heading,
/// and a noisy scan from that pose.
pub fn synthesize_epoch(spec: &SceneSpec, sensor: &SensorSpec, epoch: u64) -> Result<SyntheticEpoch> {
    let scene_spec = SceneSpec {
        seed: mix_seed(spec.seed, 3 * epoch),
        ..spec.clone()
    };
    let scene = Scene::build(&scene_spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 3 * epoch + 1));
    let j = spec.pose_jitter;
    let mut truth = None;
    for _ in 0..100 {
        let pose = Pose2::new(
            if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 },
            if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 },
            rng.random_range(-PI..PI),
        );
        if scene.is_free(&Point3::new(pose.tx, pose.ty, sensor.height)) {
            truth = Some(pose);
            break;
        }
    }
    let truth = truth.ok_or(Error::SensorInsideGeometry)?;
    let scan = simulate_scan(&scene, &truth, sensor, mix_seed(spec.seed, 3 * epoch + 2))?;
    let map = scene.map();
    Ok(SyntheticEpoch { scene, map, scan, truth })
}
