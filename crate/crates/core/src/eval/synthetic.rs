//! Procedural desk-scale scenes with known instance labels, cameras on a
//! ring around the table, and text queries resolved by the generator.

use std::collections::BTreeMap;

use nalgebra::{Vector3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::QueryCase;
use crate::error::{Error, Result};
use crate::field::SupervisionSet;
use crate::render::{label_map_from, Raster};
use crate::lmseg::{BBox, GroundingBackend, GroundingResponse, OracleBackend, ViewContext};
use crate::scene::{Camera, Gaussian, IdentityMap, Mask2D, Scene, DEFAULT_FEATURE_DIM};

pub const PALETTE: [(&str, [f64; 3]); 8] = [
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.8, 0.2]),
    ("blue", [0.1, 0.2, 0.9]),
    ("yellow", [0.95, 0.9, 0.1]),
    ("purple", [0.6, 0.2, 0.8]),
    ("orange", [1.0, 0.55, 0.0]),
    ("cyan", [0.1, 0.85, 0.9]),
    ("pink", [1.0, 0.5, 0.7]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Objects scattered over the table.
    Scattered,
    /// Object 1 is a wall through the table center and object 2 hides
    /// behind it (+y side); the rest are scattered.
    Occluded,
}

#[derive(Clone, Debug)]
pub struct SyntheticSceneSpec {
    pub num_objects: usize,
    pub gaussians_per_object: usize,
    pub seed: u64,
    pub layout: Layout,
    /// Explicit object centers on the table (x, y); random when `None`.
    pub centers: Option<Vec<[f64; 2]>>,
    pub num_cameras: usize,
    pub ring_radius: f64,
    pub camera_height: f64,
    pub width: u32,
    pub height: u32,
    /// Every `holdout_every`-th camera is held out for evaluation (0 = none).
    pub holdout_every: usize,
    pub feature_dim: usize,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            num_objects: 5,
            gaussians_per_object: 200,
            seed: 17,
            layout: Layout::Scattered,
            centers: None,
            num_cameras: 48,
            ring_radius: 4.0,
            camera_height: 2.0,
            width: 64,
            height: 64,
            holdout_every: 6,
            feature_dim: DEFAULT_FEATURE_DIM,
        }
    }
}

/// One generated object.
#[derive(Clone, Debug)]
pub struct ObjectInfo {
    pub id: u16,
    pub color_name: &'static str,
    pub center: Vector3<f64>,
    /// Ellipsoid semi-axes.
    pub extent: Vector3<f64>,
}

impl ObjectInfo {
    /// Blob spread such that the ellipsoid reaches three of them.
    pub fn sigma(&self) -> f64 {
        self.extent.max() / 3.0
    }

    pub fn top(&self) -> f64 {
        self.center.z + self.extent.z
    }

    pub fn volume(&self) -> f64 {
        self.extent.x * self.extent.y * self.extent.z
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub scene: Scene,
    /// Generator instance id per Gaussian.
    pub labels: Vec<u16>,
    pub objects: Vec<ObjectInfo>,
    /// Ground-truth id maps for every camera.
    pub supervision: SupervisionSet,
    pub cases: Vec<QueryCase>,
    pub eval_cameras: Vec<u32>,
}

impl SyntheticScene {
    /// Supervision restricted to cameras not held out for evaluation.
    pub fn training_supervision(&self) -> SupervisionSet {
        SupervisionSet {
            maps: self
                .supervision
                .maps
                .iter()
                .filter(|(id, _)| !self.eval_cameras.contains(id))
                .map(|(id, m)| (*id, m.clone()))
                .collect(),
        }
    }

    /// Hard per-Gaussian selection of one generator object.
    pub fn object_selection(&self, id: u16) -> Vec<bool> {
        self.labels.iter().map(|&l| l == id).collect()
    }

    /// Query text → target id table for an oracle backend.
    pub fn query_table(&self) -> BTreeMap<String, Option<u16>> {
        self.cases
            .iter()
            .map(|c| (c.query.clone(), c.oracle_id))
            .collect()
    }
}

fn overlaps(a: &ObjectInfo, b: &ObjectInfo) -> bool {
    (a.center - b.center).norm() <= 3.0 * (a.sigma() + b.sigma())
}

fn place_objects(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<ObjectInfo>> {
    let k = spec.num_objects;
    let mut objects: Vec<ObjectInfo> = Vec::with_capacity(k);
    let mut extents = Vec::with_capacity(k);
    for i in 0..k {
        let e = match (spec.layout, i) {
            (Layout::Occluded, 0) => Vector3::new(0.55, 0.08, 0.5),
            (Layout::Occluded, 1) => Vector3::new(0.16, 0.16, 0.2),
            _ => Vector3::new(
                rng.random_range(0.16..0.26),
                rng.random_range(0.16..0.26),
                rng.random_range(0.15..0.45),
            ),
        };
        extents.push(e);
    }
    for (i, e) in extents.into_iter().enumerate() {
        let id = i as u16 + 1;
        let color_name = PALETTE[i].0;
        let make = |x: f64, y: f64| ObjectInfo {
            id,
            color_name,
            center: Vector3::new(x, y, e.z),
            extent: e,
        };
        let obj = if let Some(centers) = &spec.centers {
            let [x, y] = centers[i];
            make(x, y)
        } else {
            match (spec.layout, i) {
                (Layout::Occluded, 0) => make(0.0, 0.0),
                (Layout::Occluded, 1) => make(0.0, 0.8),
                _ => {
                    let mut placed = None;
                    for _ in 0..2000 {
                        let r = 1.3 * rng.random::<f64>().sqrt();
                        let t = rng.random_range(0.0..std::f64::consts::TAU);
                        let cand = make(r * t.cos(), r * t.sin());
                        if objects.iter().all(|o| !overlaps(o, &cand)) {
                            placed = Some(cand);
                            break;
                        }
                    }
                    placed.ok_or_else(|| {
                        Error::input(format!("could not place {k} non-overlapping objects"))
                    })?
                }
            }
        };
        if let Some(o) = objects.iter().find(|o| overlaps(o, &obj)) {
            return Err(Error::input(format!(
                "objects {} and {} overlap",
                o.id, obj.id
            )));
        }
        objects.push(obj);
    }
    Ok(objects)
}

const BOTTOM_CAP: f64 = -0.7;
const SHELL_DEPTH: f64 = 0.9;

fn blob(obj: &ObjectInfo, count: usize, color: [f64; 3], dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Gaussian>> {
    let mut out = Vec::with_capacity(count);
    let base = obj.extent.min() * 0.35;
    while out.len() < count {
        let u = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = u.norm();
        if !(0.1..=1.0).contains(&n) || u.z / n < BOTTOM_CAP {
            continue;
        }
        // Surface samples only; the bottom cap rests on the table and is never seen.
        let p: Vector3<f64> = obj.center + obj.extent.component_mul(&(u * (SHELL_DEPTH / n)));
        let scale = [
            base * rng.random_range(0.7..1.3),
            base * rng.random_range(0.7..1.3),
            base * rng.random_range(0.7..1.3),
        ];
        let q = UnitQuaternion::from_euler_angles(
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
        );
        let jitter = |c: f64, rng: &mut ChaCha8Rng| (c + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        let c = [jitter(color[0], rng), jitter(color[1], rng), jitter(color[2], rng)];
        out.push(Gaussian::new(
            [p.x, p.y, p.z],
            scale,
            [q.w, q.i, q.j, q.k],
            rng.random_range(0.45..0.75),
            c,
            vec![0.0; dim],
        )?);
    }
    Ok(out)
}

fn ring_cameras(spec: &SyntheticSceneSpec, look_z: f64) -> Result<Vec<Camera>> {
    let focal = 1.25 * spec.width as f64;
    (0..spec.num_cameras)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / spec.num_cameras as f64;
            let eye = Vector3::new(spec.ring_radius * t.cos(), spec.ring_radius * t.sin(), spec.camera_height);
            Camera::look_at(
                i as u32,
                spec.width,
                spec.height,
                focal,
                eye,
                Vector3::new(0.0, 0.0, look_z),
                Vector3::z(),
            )
        })
        .collect()
}

/// Query forms the generator emits, each resolvable over any subset of
/// objects.
#[derive(Clone, Debug, PartialEq)]
pub enum QueryKind {
    Color(&'static str),
    Tallest,
    Shortest,
    Biggest,
    Smallest,
    ClosestToMiddle,
    FarthestFromMiddle,
    LeftOfTallest,
    RightOfTallest,
}

const RELATIONAL: [(QueryKind, &str); 8] = [
    (QueryKind::Tallest, "the tallest object on the table"),
    (QueryKind::Shortest, "the shortest object on the table"),
    (QueryKind::Biggest, "the biggest thing here"),
    (QueryKind::Smallest, "the smallest thing here"),
    (QueryKind::ClosestToMiddle, "the object closest to the middle of the table"),
    (QueryKind::FarthestFromMiddle, "the object farthest from the middle of the table"),
    (QueryKind::LeftOfTallest, "the object left of the tallest one"),
    (QueryKind::RightOfTallest, "the object right of the tallest one"),
];

impl QueryKind {
    pub fn text(&self) -> String {
        match self {
            QueryKind::Color(c) => format!("the {c} object"),
            other => RELATIONAL
                .iter()
                .find(|(k, _)| k == other)
                .map(|(_, t)| t.to_string())
                .unwrap_or_default(),
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        if let Some((k, _)) = RELATIONAL.iter().find(|(_, t)| *t == text) {
            return Some(k.clone());
        }
        let color = text.strip_prefix("the ")?.strip_suffix(" object")?;
        PALETTE
            .iter()
            .find(|(name, _)| *name == color)
            .map(|(name, _)| QueryKind::Color(name))
    }

    /// Answer among `objects` only; ties go to the smaller id.
    pub fn resolve(&self, objects: &[&ObjectInfo]) -> Option<u16> {
        let by = |f: &dyn Fn(&ObjectInfo) -> f64| {
            objects
                .iter()
                .min_by(|a, b| f(a).total_cmp(&f(b)).then(a.id.cmp(&b.id)))
                .copied()
        };
        let neighbour = |sign: f64| {
            let tallest = by(&|o| -o.top())?;
            objects
                .iter()
                .filter(|o| sign * (o.center.x - tallest.center.x) > 0.0)
                .min_by(|a, b| {
                    (a.center - tallest.center)
                        .norm()
                        .total_cmp(&(b.center - tallest.center).norm())
                        .then(a.id.cmp(&b.id))
                })
                .copied()
        };
        let hit = match self {
            QueryKind::Color(c) => objects.iter().find(|o| o.color_name == *c).copied(),
            QueryKind::Tallest => by(&|o| -o.top()),
            QueryKind::Shortest => by(&|o| o.top()),
            QueryKind::Biggest => by(&|o| -o.volume()),
            QueryKind::Smallest => by(&|o| o.volume()),
            QueryKind::ClosestToMiddle => by(&|o| o.center.xy().norm()),
            QueryKind::FarthestFromMiddle => by(&|o| -o.center.xy().norm()),
            QueryKind::LeftOfTallest => neighbour(-1.0),
            QueryKind::RightOfTallest => neighbour(1.0),
        };
        hit.map(|o| o.id)
    }
}

fn queries(objects: &[ObjectInfo]) -> Vec<(String, u16)> {
    let all: Vec<&ObjectInfo> = objects.iter().collect();
    objects
        .iter()
        .map(|o| QueryKind::Color(o.color_name))
        .chain(RELATIONAL.iter().map(|(k, _)| k.clone()))
        .filter_map(|k| k.resolve(&all).map(|id| (k.text(), id)))
        .collect()
}

/// Simulated image-level reasoner: resolves each query among the objects
/// visible in the view it is shown, so relational queries can go wrong in
/// views that miss part of the scene.
#[derive(Clone, Debug)]
pub struct ViewLimitedBackend {
    oracle: OracleBackend,
    objects: Vec<ObjectInfo>,
    min_pixels: usize,
}

impl ViewLimitedBackend {
    pub fn new(gt_maps: BTreeMap<u32, IdentityMap>, objects: Vec<ObjectInfo>, min_pixels: usize) -> Self {
        Self {
            oracle: OracleBackend::new(gt_maps, BTreeMap::new()),
            objects,
            min_pixels,
        }
    }

    /// The answer this backend gives in one camera.
    pub fn answer(&self, camera_id: u32, query: &str) -> Option<u16> {
        let kind = QueryKind::parse(query)?;
        let map = self.oracle.gt_map(camera_id)?;
        let visible = map.visible_ids(self.min_pixels);
        let seen: Vec<&ObjectInfo> = self
            .objects
            .iter()
            .filter(|o| visible.contains(&o.id))
            .collect();
        kind.resolve(&seen)
    }
}

impl GroundingBackend for ViewLimitedBackend {
    fn ground(&self, view: &ViewContext<'_>, query: &str) -> Result<GroundingResponse> {
        let id = self.answer(view.camera_id, query).ok_or_else(|| {
            Error::GroundingFailed(format!("nothing in camera {} matches '{query}'", view.camera_id))
        })?;
        self.oracle.respond(view, id, "reasoned over visible objects")
    }

    fn mask(&self, view: &ViewContext<'_>, bbox: &BBox) -> Result<Mask2D> {
        self.oracle.mask(view, bbox)
    }

    fn max_in_flight(&self) -> usize {
        4
    }
}

pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    if spec.num_objects == 0 || spec.num_objects > PALETTE.len() {
        return Err(Error::input(format!(
            "num_objects must be in 1..={}",
            PALETTE.len()
        )));
    }
    if spec.gaussians_per_object == 0 || spec.num_cameras == 0 {
        return Err(Error::input("need at least one gaussian per object and one camera"));
    }
    if spec.centers.as_ref().is_some_and(|c| c.len() != spec.num_objects) {
        return Err(Error::input("one center per object required"));
    }
    if spec.layout == Layout::Occluded && spec.num_objects < 2 {
        return Err(Error::input("occluded layout needs at least two objects"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects = place_objects(spec, &mut rng)?;

    let mut gaussians = Vec::new();
    let mut labels = Vec::new();
    for (i, obj) in objects.iter().enumerate() {
        let g = blob(obj, spec.gaussians_per_object, PALETTE[i].1, spec.feature_dim, &mut rng)?;
        labels.extend(std::iter::repeat_n(obj.id, g.len()));
        gaussians.extend(g);
    }
    let look_z = objects.iter().map(|o| o.center.z).sum::<f64>() / objects.len() as f64;
    let cameras = ring_cameras(spec, look_z)?;
    let scene = Scene::new(gaussians, cameras)?;

    let mut maps = BTreeMap::new();
    for cam in &scene.cameras {
        let raster = Raster::new(&scene, cam)?;
        maps.insert(cam.id, label_map_from(&raster, &labels));
    }
    let eval_cameras: Vec<u32> = if spec.holdout_every == 0 {
        scene.cameras.iter().map(|c| c.id).collect()
    } else {
        scene
            .cameras
            .iter()
            .map(|c| c.id)
            .filter(|id| *id as usize % spec.holdout_every == spec.holdout_every / 2)
            .collect()
    };

    let cases = queries(&objects)
        .into_iter()
        .map(|(query, id)| QueryCase {
            query,
            oracle_id: Some(id),
            gt_masks: eval_cameras.iter().map(|c| (*c, maps[c].mask_of(id))).collect(),
        })
        .collect();

    Ok(SyntheticScene {
        scene,
        labels,
        objects,
        supervision: SupervisionSet { maps },
        cases,
        eval_cameras,
    })
}
