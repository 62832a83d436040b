mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::trained;
use splatground_core::eval::{generate_synthetic, SyntheticSceneSpec};
use splatground_core::field::{
    associate_masks, classify_gaussians, MIN_MASK_PIXELS, train_field, Classifier, SupervisionSet, TrainParams,
};
use splatground_core::render::{render_identity_map, render_label_map};
use splatground_core::scene::{IdentityMap, Mask2D};
use splatground_core::Error;

fn heldout_accuracy(syn: &splatground_core::eval::SyntheticScene, scene: &splatground_core::scene::Scene, cls: &Classifier) -> f64 {
    let (mut hit, mut total) = (0, 0);
    for id in &syn.eval_cameras {
        let pred = render_identity_map(scene, scene.camera(*id).unwrap(), cls).unwrap();
        let truth = &syn.supervision.maps[id];
        hit += pred.ids.iter().zip(&truth.ids).filter(|(a, b)| a == b).count();
        total += truth.ids.len();
    }
    hit as f64 / total as f64
}

#[test]
fn five_instance_scene_trains_to_heldout_accuracy() {
    let spec = SyntheticSceneSpec::default();
    let syn = generate_synthetic(&spec).unwrap();
    let mut scene = syn.scene.clone();
    let report = train_field(&mut scene, &syn.training_supervision(), &TrainParams::default()).unwrap();
    assert_eq!(report.losses.len(), 300);
    let acc = heldout_accuracy(&syn, &scene, &report.classifier);
    assert!(acc >= 0.99, "held-out accuracy {acc}");

    let windows: Vec<f64> = report.losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0], "window means {windows:?}");
    }

    // per-Gaussian ids against generator labels, weighted by opacity
    let ids = classify_gaussians(&scene, &report.classifier).unwrap();
    let (mut agree, mut total) = (0.0, 0.0);
    for ((g, id), label) in scene.gaussians.iter().zip(&ids).zip(&syn.labels) {
        total += g.opacity();
        if id == label {
            agree += g.opacity();
        }
    }
    assert!(agree / total >= 0.95, "opacity-weighted agreement {}", agree / total);

    // per-Gaussian ids rendered back agree with the rendered field
    let (mut same, mut covered) = (0, 0);
    for cam in &scene.cameras {
        let field = render_identity_map(&scene, cam, &report.classifier).unwrap();
        let lifted = render_label_map(&scene, cam, &ids).unwrap();
        for (a, b) in field.ids.iter().zip(&lifted.ids) {
            if *a != 0 || *b != 0 {
                covered += 1;
                same += usize::from(a == b);
            }
        }
    }
    assert!(same as f64 >= 0.95 * covered as f64, "{same}/{covered}");
}

#[test]
fn single_instance_separates_quickly() {
    let spec = SyntheticSceneSpec {
        num_objects: 1,
        seed: 5,
        ..SyntheticSceneSpec::default()
    };
    let (syn, scene, cls) = trained(&spec, 99);
    assert!(syn.supervision.maps.values().all(|m| m.max_id() <= 1));
    let acc = heldout_accuracy(&syn, &scene, &cls);
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn zero_steps_leave_features_bitwise_unchanged() {
    let syn = generate_synthetic(&SyntheticSceneSpec::default()).unwrap();
    let mut scene = syn.scene.clone();
    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        g.feature[0] = i as f64 * 0.125;
    }
    let before: Vec<Vec<f64>> = scene.gaussians.iter().map(|g| g.feature.clone()).collect();
    let params = TrainParams {
        steps: 0,
        ..TrainParams::default()
    };
    train_field(&mut scene, &syn.training_supervision(), &params).unwrap();
    for (g, f) in scene.gaussians.iter().zip(&before) {
        assert_eq!(g.feature.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), f.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn all_background_supervision_is_rejected() {
    let syn = generate_synthetic(&SyntheticSceneSpec::default()).unwrap();
    let mut scene = syn.scene.clone();
    let sup = SupervisionSet {
        maps: syn.supervision.maps.keys().map(|id| (*id, IdentityMap::new(64, 64))).collect(),
    };
    assert!(matches!(train_field(&mut scene, &sup, &TrainParams::default()), Err(Error::Input(_))));
}

#[test]
fn divergence_reports_the_step() {
    let syn = generate_synthetic(&SyntheticSceneSpec::default()).unwrap();
    let mut scene = syn.scene.clone();
    let params = TrainParams {
        lr: 1e300,
        clip_norm: f64::INFINITY,
        ..TrainParams::default()
    };
    match train_field(&mut scene, &syn.training_supervision(), &params) {
        Err(Error::Numeric { step, .. }) => assert!(step < 300),
        other => panic!("expected numeric error, got {:?}", other.map(|r| r.accuracy)),
    }
}

#[test]
fn relabelled_supervision_gives_the_same_partition() {
    let spec = SyntheticSceneSpec::default();
    let syn = generate_synthetic(&spec).unwrap();
    let perm = [0u16, 3, 5, 1, 4, 2];
    let permuted = SupervisionSet {
        maps: syn
            .training_supervision()
            .maps
            .into_iter()
            .map(|(id, mut m)| {
                m.ids.iter_mut().for_each(|v| *v = perm[*v as usize]);
                (id, m)
            })
            .collect(),
    };
    let mut a = syn.scene.clone();
    let ra = train_field(&mut a, &syn.training_supervision(), &TrainParams::default()).unwrap();
    let mut b = syn.scene.clone();
    let rb = train_field(&mut b, &permuted, &TrainParams::default()).unwrap();
    let ia = classify_gaussians(&a, &ra.classifier).unwrap();
    let ib = classify_gaussians(&b, &rb.classifier).unwrap();
    let same = ia.iter().zip(&ib).filter(|(x, y)| perm[**x as usize] == **y).count();
    assert!(same as f64 >= 0.99 * ia.len() as f64, "{same}/{}", ia.len());
}

#[test]
fn classifier_json_round_trips() {
    let (_, _, cls) = trained(&SyntheticSceneSpec::default(), 20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("classifier.json");
    cls.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["K"], 5);
    assert_eq!(json["D"], 16);
    assert_eq!(json["weights"].as_array().unwrap().len(), 6 * 16);
    let back = Classifier::load(&path).unwrap();
    assert_eq!(back, cls);
}

#[test]
fn classifier_dimension_mismatch_is_reported() {
    let syn = generate_synthetic(&SyntheticSceneSpec::default()).unwrap();
    assert!(matches!(classify_gaussians(&syn.scene, &Classifier::zeros(5, 8)), Err(Error::Dimension(_))));
    let ids = classify_gaussians(&syn.scene, &Classifier::zeros(5, 16)).unwrap();
    assert!(ids.iter().all(|&i| i == 0));
}

fn masks_of(map: &IdentityMap) -> Vec<Mask2D> {
    map.visible_ids(1).into_iter().map(|id| map.mask_of(id)).collect()
}

#[test]
fn association_recovers_ids_up_to_relabeling() {
    let syn = generate_synthetic(&SyntheticSceneSpec::default()).unwrap();
    let per_view: Vec<(u32, Vec<Mask2D>)> = syn.supervision.maps.iter().map(|(id, m)| (*id, masks_of(m))).collect();
    let out = associate_masks(&syn.scene, &per_view).unwrap();
    assert_eq!(out.num_instances(), 5);
    // a consistent labelling maps each generator id to exactly one track
    let mut pairs: BTreeSet<(u16, u16)> = BTreeSet::new();
    for (id, truth) in &syn.supervision.maps {
        let sizes = truth.histogram();
        for (t, a) in truth.ids.iter().zip(&out.maps[id].ids) {
            if *t != 0 && sizes[*t as usize] < MIN_MASK_PIXELS {
                assert_eq!(*a, 0, "tiny masks stay unlabelled");
                continue;
            }
            pairs.insert((*t, *a));
        }
    }
    let forward: BTreeMap<u16, BTreeSet<u16>> = pairs.iter().fold(BTreeMap::new(), |mut m, (t, a)| {
        m.entry(*t).or_default().insert(*a);
        m
    });
    assert!(forward.values().all(|s| s.len() == 1), "{forward:?}");
    let images: BTreeSet<u16> = forward.values().flatten().copied().collect();
    assert_eq!(images.len(), forward.len());
}

#[test]
fn one_view_three_masks_get_ids_one_to_three() {
    let syn = generate_synthetic(&SyntheticSceneSpec::default()).unwrap();
    let map = &syn.supervision.maps[&0];
    let masks: Vec<Mask2D> = masks_of(map).into_iter().take(3).collect();
    let out = associate_masks(&syn.scene, &[(0, masks)]).unwrap();
    let mut seen: Vec<u16> = out.maps[&0].visible_ids(1);
    seen.sort_unstable();
    assert_eq!(seen, vec![1, 2, 3]);
}

#[test]
fn identical_mask_sets_share_ids() {
    let syn = generate_synthetic(&SyntheticSceneSpec::default()).unwrap();
    let masks = masks_of(&syn.supervision.maps[&0]);
    let out = associate_masks(&syn.scene, &[(0, masks.clone()), (0, masks)]).unwrap();
    assert_eq!(out.num_instances(), syn.supervision.maps[&0].visible_ids(1).len());
}

#[test]
fn overlapping_masks_are_an_input_error() {
    let syn = generate_synthetic(&SyntheticSceneSpec::default()).unwrap();
    let a = Mask2D::from_fn(64, 64, |x, _| x < 40);
    let b = Mask2D::from_fn(64, 64, |x, _| x > 30);
    assert!(matches!(associate_masks(&syn.scene, &[(0, vec![a, b])]), Err(Error::Input(_))));
}
