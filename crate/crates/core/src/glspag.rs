//! Global-to-local spatial grounding.
//!
//! Training cameras are clustered by pose; the representatives that see the
//! most distinct instances are grounded independently and vote on the target
//! id. Gaussians classified as that id form the coarse 3D mask, which is then
//! refined by descending the L1 gap between its rendering and per-view 2D
//! masks on every representative that shows the target.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{classify_gaussians, Classifier};
use crate::lmseg::{segment_view, GroundingBackend, GroundingOutcome, ViewContext, DEFAULT_TAU};
use crate::render::{backprop_mask_l1, identity_map_from, rgb_from, soft_mask_from, Raster, RgbImage};
use crate::scene::{sigmoid, IdentityMap, Mask2D, Mask3D, Scene};

/// How views are sampled for the global stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewSampling {
    /// K-means representatives ranked by distinct visible instances.
    #[default]
    KMeansTopK,
    /// K-means representatives, global views drawn at random.
    KMeansRandom,
    /// Random cameras for both the representative and global sets.
    Random,
}

#[derive(Clone, Debug)]
pub struct GroundingConfig {
    pub seed: u64,
    pub n_cluster: usize,
    pub n_global: usize,
    pub refine_steps: usize,
    /// Step size on the membership logits, applied to the pixel-summed L1 gradient.
    pub refine_lr: f64,
    pub tau: f64,
    /// Pixels an id needs before it counts as visible in a view.
    pub min_visible_pixels: usize,
    pub kmeans_iterations: usize,
    pub skip_refine: bool,
    pub sampling: ViewSampling,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            n_cluster: 24,
            n_global: 8,
            refine_steps: 50,
            refine_lr: 20.0,
            tau: DEFAULT_TAU,
            min_visible_pixels: 50,
            kmeans_iterations: 50,
            skip_refine: false,
            sampling: ViewSampling::KMeansTopK,
        }
    }
}

/// Initial membership logit magnitude for refinement.
pub const INIT_LOGIT: f64 = 3.0;

/// Pose feature: camera center followed by the viewing direction scaled by
/// the scene radius.
fn pose_features(scene: &Scene) -> Vec<[f64; 6]> {
    let (_, radius) = scene.bounds();
    scene
        .cameras
        .iter()
        .map(|c| {
            let p = c.center();
            let f = c.forward() * radius;
            [p.x, p.y, p.z, f.x, f.y, f.z]
        })
        .collect()
}

fn dist2(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding. Returns the cluster index of each point.
pub fn kmeans(points: &[[f64; 6]], k: usize, iterations: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    let mut centroids: Vec<[f64; 6]> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    centroids.push(points[first]);
    chosen[first] = true;
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick]);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(p, &points[pick]));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(p, &centroids[a]).total_cmp(&dist2(p, &centroids[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // an empty cluster takes the point farthest from its own centroid
        for c in 0..k {
            if !assign.contains(&c) {
                let far = (0..n)
                    .filter(|&i| assign.iter().filter(|&&a| a == assign[i]).count() > 1)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centroids[assign[a]])
                            .total_cmp(&dist2(&points[b], &centroids[assign[b]]))
                    });
                if let Some(i) = far {
                    assign[i] = c;
                    changed = true;
                }
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64; 6]> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = [0.0; 6];
            for m in &members {
                for (acc, v) in mean.iter_mut().zip(m.iter()) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= members.len() as f64);
            *centroid = mean;
        }
        if !changed {
            break;
        }
    }
    assign
}

/// Clusters camera poses and returns one representative per cluster (the
/// member nearest its centroid), sorted by camera id.
pub fn cluster_cameras(scene: &Scene, n_cluster: usize, seed: u64, iterations: usize) -> Result<Vec<u32>> {
    let n = scene.cameras.len();
    if n_cluster == 0 || n_cluster > n {
        return Err(Error::Config(format!(
            "n_cluster = {n_cluster} but the scene has {n} cameras"
        )));
    }
    let points = pose_features(scene);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assign = kmeans(&points, n_cluster, iterations, &mut rng);
    let mut reps = Vec::with_capacity(n_cluster);
    for c in 0..n_cluster {
        let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
        let mut centroid = [0.0; 6];
        for &i in &members {
            for (acc, v) in centroid.iter_mut().zip(&points[i]) {
                *acc += v / members.len() as f64;
            }
        }
        let rep = members
            .iter()
            .copied()
            .min_by(|&a, &b| {
                dist2(&points[a], &centroid)
                    .total_cmp(&dist2(&points[b], &centroid))
                    .then(scene.cameras[a].id.cmp(&scene.cameras[b].id))
            })
            .expect("k-means leaves no cluster empty");
        reps.push(scene.cameras[rep].id);
    }
    reps.sort_unstable();
    Ok(reps)
}

/// Everything the grounding stages need from one camera, rendered once.
#[derive(Clone, Debug)]
pub struct ViewData {
    pub raster: Arc<Raster>,
    pub map: IdentityMap,
    pub image: RgbImage,
}

pub fn render_views(scene: &Scene, classifier: &Classifier, cameras: &[u32]) -> Result<BTreeMap<u32, ViewData>> {
    check_classifier(scene, classifier)?;
    cameras
        .iter()
        .map(|&id| {
            let raster = Raster::new(scene, scene.camera(id)?)?;
            let data = ViewData {
                map: identity_map_from(&raster, scene, classifier),
                image: rgb_from(&raster, scene),
                raster: Arc::new(raster),
            };
            Ok((id, data))
        })
        .collect()
}

fn check_classifier(scene: &Scene, classifier: &Classifier) -> Result<()> {
    if scene.num_instances != classifier.num_instances() || scene.feature_dim() != classifier.feature_dim() {
        return Err(Error::dim("classifier does not match the scene's feature field"));
    }
    Ok(())
}

/// Identity maps of the given cameras.
pub fn identity_maps(
    scene: &Scene,
    classifier: &Classifier,
    cameras: &[u32],
) -> Result<BTreeMap<u32, IdentityMap>> {
    check_classifier(scene, classifier)?;
    cameras
        .iter()
        .map(|&id| {
            let raster = Raster::new(scene, scene.camera(id)?)?;
            Ok((id, identity_map_from(&raster, scene, classifier)))
        })
        .collect()
}

/// Top `n_global` views by number of distinct visible instances, ties to the
/// smaller camera id. Returned in rank order.
pub fn select_global_from_maps(
    maps: &BTreeMap<u32, IdentityMap>,
    n_global: usize,
    min_pixels: usize,
) -> (Vec<u32>, BTreeMap<u32, usize>) {
    let counts: BTreeMap<u32, usize> = maps
        .iter()
        .map(|(&id, m)| (id, m.visible_ids(min_pixels).len()))
        .collect();
    let mut ranked: Vec<(u32, usize)> = counts.iter().map(|(&id, &n)| (id, n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    (
        ranked.into_iter().take(n_global).map(|(id, _)| id).collect(),
        counts,
    )
}

pub fn select_global_views(
    scene: &Scene,
    classifier: &Classifier,
    cluster_reps: &[u32],
    n_global: usize,
) -> Result<Vec<u32>> {
    let maps = identity_maps(scene, classifier, cluster_reps)?;
    Ok(select_global_from_maps(&maps, n_global, GroundingConfig::default().min_visible_pixels).0)
}

/// Representatives whose identity map shows `winner` on at least `min_pixels` pixels.
pub fn select_local_from_maps(maps: &BTreeMap<u32, IdentityMap>, winner: u16, min_pixels: usize) -> Vec<u32> {
    maps.iter()
        .filter(|(_, m)| m.ids.iter().filter(|&&v| v == winner).count() >= min_pixels)
        .map(|(&id, _)| id)
        .collect()
}

pub fn select_local_views(
    scene: &Scene,
    classifier: &Classifier,
    cluster_reps: &[u32],
    winner: u16,
) -> Result<Vec<u32>> {
    let maps = identity_maps(scene, classifier, cluster_reps)?;
    Ok(select_local_from_maps(&maps, winner, GroundingConfig::default().min_visible_pixels))
}

/// Runs `f` on every item with at most `limit` calls in flight; results keep
/// the input order.
fn run_bounded<T: Send>(items: &[u32], limit: usize, f: impl Fn(u32) -> Result<T> + Sync) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let workers = limit.clamp(1, items.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

/// Runs the segmenter on each view with the backend's concurrency limit.
pub fn segment_views(
    views: &[u32],
    data: &BTreeMap<u32, ViewData>,
    query: &str,
    backend: &dyn GroundingBackend,
    tau: f64,
) -> Result<Vec<GroundingOutcome>> {
    run_bounded(views, backend.max_in_flight(), |id| {
        let d = data
            .get(&id)
            .ok_or_else(|| Error::Internal(format!("camera {id} was not rendered")))?;
        let view = ViewContext {
            camera_id: id,
            image: &d.image,
        };
        segment_view(backend, &view, query, &d.map, tau)
    })
}

/// Majority vote over non-abstaining views; ties go to the larger summed
/// overlap fraction, then to the smaller id.
pub fn aggregate_votes(outcomes: &[GroundingOutcome]) -> Option<u16> {
    let mut tally: BTreeMap<u16, (usize, f64)> = BTreeMap::new();
    for o in outcomes {
        if let Some(id) = o.instance_id {
            let e = tally.entry(id).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += o.overlap_fraction;
        }
    }
    let mut best: Option<(u16, usize, f64)> = None;
    for (&id, &(count, overlap)) in &tally {
        let better = match best {
            None => true,
            Some((_, c, o)) => count > c || (count == c && overlap > o),
        };
        if better {
            best = Some((id, count, overlap));
        }
    }
    best.map(|(id, _, _)| id)
}

#[derive(Clone, Debug)]
pub struct GlobalOutcome {
    pub winner_id: u16,
    pub outcomes: Vec<GroundingOutcome>,
    pub coarse_mask: Mask3D,
}

/// Coarse 3D mask: Gaussians whose own feature classifies as `winner`.
pub fn coarse_mask(scene: &Scene, classifier: &Classifier, winner: u16) -> Result<Mask3D> {
    let ids = classify_gaussians(scene, classifier)?;
    let hard: Vec<bool> = ids.iter().map(|&id| id == winner).collect();
    Ok(Mask3D::from_hard(&hard))
}

pub fn global_ground(
    scene: &Scene,
    classifier: &Classifier,
    query: &str,
    global_views: &[u32],
    data: &BTreeMap<u32, ViewData>,
    backend: &dyn GroundingBackend,
    tau: f64,
) -> Result<GlobalOutcome> {
    if global_views.is_empty() {
        return Err(Error::input("no global views to ground"));
    }
    let outcomes = segment_views(global_views, data, query, backend, tau)?;
    let winner_id = aggregate_votes(&outcomes).ok_or_else(|| {
        Error::GroundingFailed(format!("every sampled view abstained for '{query}'"))
    })?;
    Ok(GlobalOutcome {
        winner_id,
        outcomes,
        coarse_mask: coarse_mask(scene, classifier, winner_id)?,
    })
}

#[derive(Clone, Debug, Default)]
pub struct RefineOutcome {
    pub mask: Option<Mask3D>,
    /// Local views whose 2D masks served as targets.
    pub used_views: Vec<u32>,
    /// Local views dropped for abstaining or disagreeing with the winner.
    pub dropped_views: Vec<u32>,
    pub losses: Vec<f64>,
}

/// Descends the pixel-summed L1 gap between rendered membership and each
/// target mask, one view per step in round-robin order. Returns the coarse
/// mask unchanged when `steps` is zero.
pub fn refine_with_targets(
    scene: &Scene,
    coarse: &Mask3D,
    targets: &[(u32, Mask2D)],
    steps: usize,
    lr: f64,
) -> Result<(Mask3D, Vec<f64>)> {
    if coarse.len() != scene.len() {
        return Err(Error::dim("coarse mask length does not match the scene"));
    }
    if steps == 0 || targets.is_empty() {
        return Ok((coarse.clone(), Vec::new()));
    }
    let mut rasters = Vec::with_capacity(targets.len());
    for (id, target) in targets {
        let cam = scene.camera(*id)?;
        if target.width != cam.width as usize || target.height != cam.height as usize {
            return Err(Error::dim(format!("target mask for camera {id} has the wrong size")));
        }
        rasters.push(Arc::new(Raster::new(scene, cam)?));
    }
    let pairs: Vec<(Arc<Raster>, &Mask2D)> = rasters.into_iter().zip(targets.iter().map(|(_, m)| m)).collect();
    refine_rasters(coarse, &pairs, steps, lr)
}

fn refine_rasters(coarse: &Mask3D, targets: &[(Arc<Raster>, &Mask2D)], steps: usize, lr: f64) -> Result<(Mask3D, Vec<f64>)> {
    if steps == 0 || targets.is_empty() {
        return Ok((coarse.clone(), Vec::new()));
    }
    let mut logits: Vec<f64> = coarse
        .hard()
        .iter()
        .map(|&on| if on { INIT_LOGIT } else { -INIT_LOGIT })
        .collect();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (raster, target) = &targets[step % targets.len()];
        let membership: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
        let rendered = soft_mask_from(Arc::clone(raster), &membership);
        let (loss, grad) = backprop_mask_l1(&rendered, target)?;
        let pixels = raster.pixel_count() as f64;
        for (l, g) in logits.iter_mut().zip(&grad) {
            *l -= lr * pixels * g;
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric {
                step,
                message: "membership logits became non-finite".into(),
            });
        }
        losses.push(loss);
    }
    Ok((
        Mask3D {
            soft: logits.iter().map(|&l| sigmoid(l)).collect(),
            threshold: Mask3D::DEFAULT_THRESHOLD,
        },
        losses,
    ))
}

/// Turns off a spatially coherent `fraction` of the selected Gaussians: the
/// ones nearest a randomly chosen selected Gaussian.
pub fn corrupt_mask(scene: &Scene, mask: &Mask3D, fraction: f64, rng: &mut impl Rng) -> Result<Mask3D> {
    if mask.len() != scene.len() {
        return Err(Error::dim("mask length does not match the scene"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::input(format!("corruption fraction {fraction} outside [0, 1]")));
    }
    let hard = mask.hard();
    let selected: Vec<usize> = (0..hard.len()).filter(|&i| hard[i]).collect();
    let mut out = Mask3D::from_hard(&hard);
    let n = (fraction * selected.len() as f64).round() as usize;
    if n == 0 {
        return Ok(out);
    }
    let seed = scene.gaussians[selected[rng.random_range(0..selected.len())]].position;
    let mut by_distance = selected;
    by_distance.sort_by(|&a, &b| {
        let da = (scene.gaussians[a].position - seed).norm_squared();
        let db = (scene.gaussians[b].position - seed).norm_squared();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    for &i in &by_distance[..n] {
        out.soft[i] = 0.0;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn local_refine(
    scene: &Scene,
    coarse: &Mask3D,
    local_views: &[u32],
    data: &BTreeMap<u32, ViewData>,
    query: &str,
    winner: u16,
    backend: &dyn GroundingBackend,
    config: &GroundingConfig,
) -> Result<RefineOutcome> {
    if local_views.is_empty() {
        log::warn!("target {winner} is not visible in any representative view; keeping the coarse mask");
        return Ok(RefineOutcome::default());
    }
    if coarse.len() != scene.len() {
        return Err(Error::dim("coarse mask length does not match the scene"));
    }
    let outcomes = segment_views(local_views, data, query, backend, config.tau)?;
    let mut out = RefineOutcome::default();
    let mut targets = Vec::new();
    for o in outcomes {
        match (o.instance_id, o.mask2d) {
            (Some(id), Some(mask)) if id == winner => {
                out.used_views.push(o.camera_id);
                targets.push((Arc::clone(&data[&o.camera_id].raster), mask));
            }
            _ => out.dropped_views.push(o.camera_id),
        }
    }
    if targets.is_empty() {
        log::warn!("every local view was dropped; keeping the coarse mask");
        return Ok(out);
    }
    let pairs: Vec<(Arc<Raster>, &Mask2D)> = targets.iter().map(|(r, m)| (Arc::clone(r), m)).collect();
    let (mask, losses) = refine_rasters(coarse, &pairs, config.refine_steps, config.refine_lr)?;
    out.mask = Some(mask);
    out.losses = losses;
    Ok(out)
}

/// Global and local view sets chosen before any grounding call.
#[derive(Clone, Debug, Serialize)]
pub struct ViewPlan {
    pub cluster_reps: Vec<u32>,
    pub global_views: Vec<u32>,
    pub instance_counts: BTreeMap<u32, usize>,
    /// Rendered data of every representative and global view.
    #[serde(skip)]
    pub views: BTreeMap<u32, ViewData>,
}

impl ViewPlan {
    /// Identity maps of the given planned cameras.
    pub fn maps_of(&self, ids: &[u32]) -> BTreeMap<u32, IdentityMap> {
        ids.iter()
            .filter_map(|id| self.views.get(id).map(|v| (*id, v.map.clone())))
            .collect()
    }
}

pub fn plan_views(scene: &Scene, classifier: &Classifier, config: &GroundingConfig) -> Result<ViewPlan> {
    if config.n_global == 0 || config.n_global > config.n_cluster {
        return Err(Error::Config(format!(
            "n_global = {} must be in 1..=n_cluster ({})",
            config.n_global, config.n_cluster
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_71E5);
    let cluster_reps = match config.sampling {
        ViewSampling::Random => {
            if config.n_cluster > scene.cameras.len() {
                return Err(Error::Config("n_cluster exceeds the camera count".into()));
            }
            let mut ids: Vec<u32> = scene.cameras.iter().map(|c| c.id).collect();
            ids.shuffle(&mut rng);
            ids.truncate(config.n_cluster);
            ids.sort_unstable();
            ids
        }
        _ => cluster_cameras(scene, config.n_cluster, config.seed, config.kmeans_iterations)?,
    };
    let mut views = render_views(scene, classifier, &cluster_reps)?;
    let maps: BTreeMap<u32, IdentityMap> = views.iter().map(|(id, v)| (*id, v.map.clone())).collect();
    let (ranked, instance_counts) = select_global_from_maps(&maps, config.n_global, config.min_visible_pixels);
    let global_views = match config.sampling {
        ViewSampling::KMeansTopK => ranked,
        ViewSampling::KMeansRandom => {
            let mut reps = cluster_reps.clone();
            reps.shuffle(&mut rng);
            reps.truncate(config.n_global);
            reps
        }
        ViewSampling::Random => {
            let mut ids: Vec<u32> = scene.cameras.iter().map(|c| c.id).collect();
            ids.shuffle(&mut rng);
            ids.truncate(config.n_global);
            ids
        }
    };
    // global views outside the representative set are rendered separately
    let missing: Vec<u32> = global_views.iter().copied().filter(|id| !views.contains_key(id)).collect();
    views.extend(render_views(scene, classifier, &missing)?);
    Ok(ViewPlan {
        cluster_reps,
        global_views,
        instance_counts,
        views,
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StageTimings {
    pub plan_ms: f64,
    pub global_ms: f64,
    pub local_ms: f64,
    pub total_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Clone, Debug)]
pub struct GroundingResult {
    pub query: String,
    pub plan: ViewPlan,
    pub outcomes: Vec<GroundingOutcome>,
    pub winner_id: u16,
    pub coarse_mask: Mask3D,
    pub local_views: Vec<u32>,
    pub refine: RefineOutcome,
    pub timings: StageTimings,
}

impl GroundingResult {
    /// Refined mask when refinement ran, otherwise the coarse mask.
    pub fn final_mask(&self) -> &Mask3D {
        self.refine.mask.as_ref().unwrap_or(&self.coarse_mask)
    }

    pub fn votes(&self) -> BTreeMap<u32, Option<u16>> {
        self.outcomes.iter().map(|o| (o.camera_id, o.instance_id)).collect()
    }
}

/// Full pipeline: plan views, vote globally, refine locally.
pub fn ground(
    scene: &Scene,
    classifier: &Classifier,
    query: &str,
    config: &GroundingConfig,
    backend: &dyn GroundingBackend,
) -> Result<GroundingResult> {
    let start = Instant::now();
    let plan = plan_views(scene, classifier, config)?;
    let plan_ms = ms(start.elapsed());
    let mut result = ground_with_plan(scene, classifier, query, config, backend, plan)?;
    result.timings.plan_ms = plan_ms;
    result.timings.total_ms += plan_ms;
    Ok(result)
}

pub fn ground_with_plan(
    scene: &Scene,
    classifier: &Classifier,
    query: &str,
    config: &GroundingConfig,
    backend: &dyn GroundingBackend,
    plan: ViewPlan,
) -> Result<GroundingResult> {
    let start = Instant::now();
    let global = global_ground(scene, classifier, query, &plan.global_views, &plan.views, backend, config.tau)?;
    let t_global = start.elapsed();

    let rep_maps = plan.maps_of(&plan.cluster_reps);
    let local_views = select_local_from_maps(&rep_maps, global.winner_id, config.min_visible_pixels);
    let refine = if config.skip_refine {
        RefineOutcome::default()
    } else {
        local_refine(
            scene,
            &global.coarse_mask,
            &local_views,
            &plan.views,
            query,
            global.winner_id,
            backend,
            config,
        )?
    };
    let total = start.elapsed();
    Ok(GroundingResult {
        query: query.to_string(),
        plan,
        outcomes: global.outcomes,
        winner_id: global.winner_id,
        coarse_mask: global.coarse_mask,
        local_views,
        refine,
        timings: StageTimings {
            plan_ms: 0.0,
            global_ms: ms(t_global),
            local_ms: ms(total - t_global),
            total_ms: ms(total),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(camera_id: u32, id: Option<u16>, overlap: f64) -> GroundingOutcome {
        GroundingOutcome {
            camera_id,
            response: None,
            mask2d: None,
            instance_id: id,
            overlap_fraction: overlap,
        }
    }

    #[test]
    fn majority_wins() {
        let o = [outcome(1, Some(3), 0.5), outcome(2, Some(3), 0.5), outcome(3, Some(7), 1.0)];
        assert_eq!(aggregate_votes(&o), Some(3));
    }

    #[test]
    fn tie_goes_to_larger_overlap_then_smaller_id() {
        let o = [outcome(1, Some(3), 0.9), outcome(2, Some(7), 0.6)];
        assert_eq!(aggregate_votes(&o), Some(3));
        let o = [outcome(1, Some(7), 0.9), outcome(2, Some(3), 0.6)];
        assert_eq!(aggregate_votes(&o), Some(7));
        let o = [outcome(1, Some(7), 0.5), outcome(2, Some(3), 0.5)];
        assert_eq!(aggregate_votes(&o), Some(3));
    }

    #[test]
    fn all_abstain_has_no_winner() {
        assert_eq!(aggregate_votes(&[outcome(1, None, 0.1), outcome(2, None, 0.0)]), None);
    }

    #[test]
    fn top_k_prefers_more_instances_then_smaller_id() {
        let mut a = IdentityMap::new(20, 20);
        let mut b = IdentityMap::new(20, 20);
        for (i, v) in a.ids.iter_mut().enumerate() {
            *v = (i / 60) as u16 % 6; // ids 0..=5, 60 px each at least
        }
        for (i, v) in b.ids.iter_mut().enumerate() {
            *v = if i < 200 { 1 } else { 2 };
        }
        let maps = BTreeMap::from([(4, b.clone()), (9, a), (2, b)]);
        let (top, counts) = select_global_from_maps(&maps, 1, 50);
        assert_eq!(top, vec![9]);
        assert_eq!(counts[&9], 5);
        let (two, _) = select_global_from_maps(&maps, 2, 50);
        assert_eq!(two, vec![9, 2]);
    }

    #[test]
    fn bounded_runner_keeps_order() {
        let items: Vec<u32> = (0..17).collect();
        let out = run_bounded(&items, 4, |i| Ok(i * 2)).unwrap();
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
        assert!(run_bounded(&items, 3, |i| if i == 5 { Err(Error::input("x")) } else { Ok(i) }).is_err());
    }
}
