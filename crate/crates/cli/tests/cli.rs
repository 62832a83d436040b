mod support;

use std::fs;

use splatground_core::imageio::read_identity_map;
use support::{ground_args, prepared, run_ok, s, splatground};

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let (gen, field) = prepared(out, &["--objects", "3", "--gaussians-per-object", "80"]);
    for f in ["scene.ply", "cameras.json", "benchmark.json", "labels.json", "supervision/manifest.json", "idmaps/manifest.json"] {
        assert!(gen.join(f).exists(), "{f}");
    }
    for f in ["classifier.json", "scene.ply", "training.json"] {
        assert!(field.join(f).exists(), "{f}");
    }

    let g = run_ok(out, &args(&ground_args(&field, &gen, "the red object")));
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(g.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["winner_id"], 1);
    assert!(result["timings"]["total_ms"].is_number());
    assert!(result["final_selected"].as_u64().unwrap() > 0);
    for f in ["coarse.mask3d", "mask.mask3d", "selected.ply"] {
        assert!(g.join(f).exists(), "{f}");
    }
    let pngs = fs::read_dir(g.join("views")).unwrap().count();
    assert!(pngs >= 8, "{pngs}");

    let (ply, mask) = (field.join("scene.ply"), g.join("mask.mask3d"));
    let removed = run_ok(out, &["edit", "--scene", s(&ply), "--mask", s(&mask), "remove"]);
    assert!(removed.join("edited.ply").exists());
    let mut recolor = vec!["edit", "--scene", s(&ply), "--mask", s(&mask), "recolor", "--recolor"];
    recolor.extend(["0", "0", "0", "0", "0", "0", "0", "0", "0", "0.5", "-0.1", "1"]);
    assert!(run_ok(out, &recolor).join("edited.ply").exists());

    let e = run_ok(
        out,
        &[
            "eval",
            "--manifest",
            s(&gen.join("benchmark.json")),
            "--scene",
            s(&field.join("scene.ply")),
            "--classifier",
            s(&field.join("classifier.json")),
        ],
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(e.join("report.json")).unwrap()).unwrap();
    assert!(report["mean_miou"].as_f64().unwrap() > 0.9);
}

#[test]
fn render_outputs_match_the_camera() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let (gen, field) = prepared(out, &["--objects", "3", "--gaussians-per-object", "60", "--width", "40", "--height", "32"]);
    let scene = field.join("scene.ply");
    let cameras = field.join("cameras.json");
    let r = run_ok(
        out,
        &["render", "--scene", s(&scene), "--cameras", s(&cameras), "--camera", "5", "--what", "idmap", "--classifier", s(&field.join("classifier.json"))],
    );
    let map = read_identity_map(&r.join("idmap_0005.png")).unwrap();
    assert_eq!((map.width, map.height), (40, 32));
    assert!(map.ids.iter().all(|&id| id <= 3));
    assert!(map.ids.iter().any(|&id| id > 0));

    let r = run_ok(out, &["render", "--scene", s(&gen.join("scene.ply")), "--cameras", s(&cameras), "--camera", "0"]);
    assert!(r.join("rgb_0000.png").exists());

    let o = splatground(out, &["render", "--scene", s(&scene), "--cameras", s(&cameras), "--camera", "0", "--what", "softmask"]);
    assert_eq!(o.status.code(), Some(2));
    let o = splatground(out, &["render", "--scene", s(&scene), "--cameras", s(&cameras), "--camera", "999"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let (gen, field) = prepared(out, &["--objects", "2", "--gaussians-per-object", "60"]);

    let missing = gen.join("nowhere/manifest.json");
    let o = splatground(
        out,
        &["build-field", "--scene", s(&gen.join("scene.ply")), "--cameras", s(&gen.join("cameras.json")), "--supervision", s(&missing)],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(s(&missing)));

    let huge = out.join("huge.toml");
    fs::write(&huge, "[field]\nlr = 1e308\n").unwrap();
    let o = splatground(
        out,
        &[
            "--config",
            s(&huge),
            "build-field",
            "--scene",
            s(&gen.join("scene.ply")),
            "--cameras",
            s(&gen.join("cameras.json")),
            "--supervision",
            s(&gen.join("supervision/manifest.json")),
        ],
    );
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(3), "{stderr}");
    assert!(stderr.contains("step 0"), "{stderr}");

    let o = splatground(out, &args(&ground_args(&field, &gen, "a purple unicorn")));
    assert_eq!(o.status.code(), Some(4));

    let dead = out.join("dead.toml");
    fs::write(&dead, "[backend]\nkind = \"remote\"\nground_url = \"http://127.0.0.1:9\"\ntimeout_secs = 2\n").unwrap();
    let mut remote = ground_args(&field, &gen, "the red object");
    remote.truncate(remote.len() - 4);
    let mut a = vec!["--config", s(&dead)];
    a.extend(args(&remote));
    let o = splatground(out, &a);
    assert_eq!(o.status.code(), Some(5));

    let bad = out.join("bad.toml");
    fs::write(&bad, "[grounding]\nn_global = 99\n").unwrap();
    let o = splatground(out, &["--config", s(&bad), "gen-synthetic"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_directories_never_collide() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_ok(tmp.path(), &["gen-synthetic", "--objects", "1", "--gaussians-per-object", "20", "--cameras", "24"]);
    let b = run_ok(tmp.path(), &["gen-synthetic", "--objects", "1", "--gaussians-per-object", "20", "--cameras", "24"]);
    assert_ne!(a, b);
    assert!(a.file_name().unwrap().to_str().unwrap().contains("-seed17"));
}
