use cone_mosaic::maskops::{load_label_map, save_label_map, InstanceLabelMap};
use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cone-mosaic")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn record(id: &str, w: usize, h: usize, extra: Value) -> Value {
    let mut r = json!({
        "id": id,
        "participant": "P1",
        "modality": "confocal",
        "eccentricity_deg": 1.0,
        "microns_per_pixel": 1.0,
        "width": w,
        "height": h,
    });
    r.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    r
}

fn write_manifest(dir: &Path, records: Vec<Value>) -> std::path::PathBuf {
    let path = dir.join("in.json");
    std::fs::write(&path, serde_json::to_string(&json!({ "records": records })).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn convert_two_centres_split_window() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.csv"), "x_px,y_px\n10,20\n30,20\n").unwrap();
    let m = write_manifest(dir.path(), vec![record("a", 40, 40, json!({ "centers": "c.csv" }))]);
    let out = dir.path().join("out");
    ok(&["convert", "--manifest", s(&m), "--out-dir", s(&out)]);
    let map = load_label_map(out.join("a.png")).unwrap();
    assert_eq!(map.distinct_labels(), vec![1, 2]);
    assert_eq!(map.get(19, 5), 1);
    assert_eq!(map.get(21, 5), 2);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["records"][0]["label_map"], "a.png");
}

#[test]
fn convert_closest_vertex_gives_disjoint_discs() {
    let dir = tempfile::tempdir().unwrap();
    let pts = cone_mosaic::synth::hex_lattice(80.0, 80.0, 10.0);
    let body: String = pts.iter().map(|p| format!("{},{}\n", p.x, p.y)).collect();
    std::fs::write(dir.path().join("c.csv"), format!("x_px,y_px\n{body}")).unwrap();
    let m = write_manifest(dir.path(), vec![record("hex", 80, 80, json!({ "centers": "c.csv" }))]);
    let out = dir.path().join("out");
    ok(&["convert", "--method", "closest-vertex", "--manifest", s(&m), "--out-dir", s(&out)]);
    let discs = load_label_map(out.join("hex.png")).unwrap();
    let out2 = dir.path().join("out2");
    ok(&["convert", "--manifest", s(&m), "--out-dir", s(&out2)]);
    let cells = load_label_map(out2.join("hex.png")).unwrap();
    // each disc lies inside its own Voronoi cell
    for (&d, &c) in discs.labels().iter().zip(cells.labels()) {
        assert!(d == 0 || d == c);
    }
    assert!(discs.foreground_count() < cells.foreground_count());
}

#[test]
fn convert_missing_centres_fails_naming_record() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.csv"), "x_px,y_px\n10,20\n30,20\n").unwrap();
    let m = write_manifest(
        dir.path(),
        vec![
            record("good", 40, 40, json!({ "centers": "c.csv" })),
            record("bad", 40, 40, json!({ "centers": "missing.csv" })),
        ],
    );
    let out = dir.path().join("out");
    let res = run(&["convert", "--manifest", s(&m), "--out-dir", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("record bad"), "{}", stderr(&res));
    assert!(!out.join("manifest.json").exists());
    assert!(!out.join("good.png").exists());
}

#[test]
fn convert_refuses_to_overwrite_input_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.csv"), "x_px,y_px\n10,20\n30,20\n").unwrap();
    let records = json!({ "records": [record("a", 40, 40, json!({ "centers": "c.csv" }))] });
    let m = dir.path().join("manifest.json");
    std::fs::write(&m, records.to_string()).unwrap();
    let res = run(&["convert", "--manifest", s(&m), "--out-dir", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(read_json(&m), records);
}

fn blocks(w: usize, h: usize, size: usize) -> InstanceLabelMap {
    let mut m = InstanceLabelMap::new(w, h).unwrap();
    for y in 0..h {
        for x in 0..w {
            let (bx, by) = (x / size, y / size);
            if x % size < size - 1 && y % size < size - 1 {
                m.set(x, y, (by * (w / size) + bx + 1) as u32);
            }
        }
    }
    m
}

#[test]
fn evaluate_identical_pairs_score_one() {
    let dir = tempfile::tempdir().unwrap();
    save_label_map(&blocks(40, 40, 8), dir.path().join("m.png")).unwrap();
    let m = write_manifest(
        dir.path(),
        vec![
            record("a", 40, 40, json!({ "label_map": "m.png", "ground_truth": "m.png" })),
            record("b", 40, 40, json!({ "label_map": "m.png", "ground_truth": "m.png", "eccentricity_deg": 8.0 })),
        ],
    );
    let out = dir.path().join("out");
    ok(&["evaluate", "--manifest", s(&m), "--out-dir", s(&out)]);
    let rep = read_json(&out.join("a.eval.json"));
    let seg = &rep["segmentation"];
    for k in ["aggregate_iou", "aggregate_dice", "mean_matched_iou", "detection_f1"] {
        assert_eq!(seg[k], 1.0, "{k}");
    }
    assert_eq!(seg["tp"], 25);
    assert_eq!(rep["group"], "central_fovea");
    assert_eq!(read_json(&out.join("b.eval.json"))["group"], "parafovea");

    let summary = csv_rows(&out.join("evaluation_summary.csv"));
    assert_eq!(summary.len(), 2);
    let grouped = csv_rows(&out.join("evaluation_grouped.csv"));
    let keys: Vec<(&str, &str)> = grouped.iter().map(|r| (&r[0], &r[1])).collect();
    assert!(keys.contains(&("confocal", "central_fovea")));
    assert!(keys.contains(&("confocal", "parafovea")));
    assert!(keys.contains(&("confocal", "all")));
    assert!(out.join("correlations.json").exists());
}

#[test]
fn evaluate_dimension_mismatch_names_pair() {
    let dir = tempfile::tempdir().unwrap();
    save_label_map(&blocks(40, 40, 8), dir.path().join("p.png")).unwrap();
    save_label_map(&blocks(32, 40, 8), dir.path().join("g.png")).unwrap();
    let m = write_manifest(dir.path(), vec![record("a", 40, 40, json!({ "label_map": "p.png", "ground_truth": "g.png" }))]);
    let out = dir.path().join("out");
    let res = run(&["evaluate", "--manifest", s(&m), "--out-dir", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    let err = stderr(&res);
    assert!(err.contains("record a") && err.contains("p.png") && err.contains("g.png"), "{err}");
    assert!(!out.join("evaluation_summary.csv").exists());
}

#[test]
fn density_of_single_instance() {
    let dir = tempfile::tempdir().unwrap();
    let mut one = InstanceLabelMap::new(100, 100).unwrap();
    for y in 10..15 {
        for x in 10..15 {
            one.set(x, y, 7);
        }
    }
    save_label_map(&one, dir.path().join("one.png")).unwrap();
    save_label_map(&InstanceLabelMap::new(100, 100).unwrap(), dir.path().join("empty.png")).unwrap();
    let m = write_manifest(
        dir.path(),
        vec![
            record("one", 100, 100, json!({ "label_map": "one.png" })),
            record("empty", 100, 100, json!({ "label_map": "empty.png", "participant": "P0" })),
        ],
    );
    let out = dir.path().join("out");
    ok(&["density", "--manifest", s(&m), "--out-dir", s(&out)]);
    let text = std::fs::read_to_string(out.join("density.csv")).unwrap();
    assert_eq!(
        text,
        "participant,modality,eccentricity_deg,n_cones,density_per_mm2,mean_area_um2\n\
         P0,confocal,1,0,0,\n\
         P1,confocal,1,1,100,25\n"
    );
}

#[test]
fn density_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    save_label_map(&blocks(40, 40, 8), dir.path().join("m.png")).unwrap();
    let m = write_manifest(dir.path(), vec![record("a", 50, 40, json!({ "label_map": "m.png" }))]);
    let res = run(&["density", "--manifest", s(&m), "--out-dir", s(&dir.path().join("out"))]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("record a"));
}

fn power_law(k: f64, pn: f64, pt: f64, rho: f64, r: f64) -> f64 {
    let l = (r.abs() + rho).ln();
    if r >= 0.0 {
        (k + pn * l).exp()
    } else {
        // the two branches meet at r = 0
        (k + (pn - pt) * rho.ln() + pt * l).exp()
    }
}

fn write_table(path: &Path, rows: &[(String, f64, f64)]) {
    let mut text = String::from("participant,modality,eccentricity_deg,n_cones,density_per_mm2,mean_area_um2\n");
    for (p, r, d) in rows {
        text.push_str(&format!("{p},confocal,{r},100,{d},\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn fit_noiseless_table_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = (-10..=10).map(|r| ("A".to_string(), r as f64, power_law(9.0, -0.5, -0.9, 1.3, r as f64))).collect();
    let table = dir.path().join("d.csv");
    write_table(&table, &rows);
    let out = dir.path().join("out");
    ok(&["fit", s(&table), "--out-dir", s(&out)]);
    let rep = read_json(&out.join("fit_report.json"));
    assert_eq!(rep["model"], "fixed");
    assert_eq!(rep["n_samples"], 21);
    for (k, v) in [("kappa", 9.0), ("pi_n", -0.5), ("pi_t", -0.9), ("rho", 1.3)] {
        let got = rep["params"][k].as_f64().unwrap();
        assert!((got - v).abs() <= 1e-6 * v.abs(), "{k}: {got}");
    }
    let curve = csv_rows(&out.join("fit_curve.csv"));
    assert_eq!(curve.len(), 201);
    assert!(curve.iter().all(|r| &r[0] == "population"));
}

#[test]
fn fit_log_base_rescales_intercept() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = (-10..=10).map(|r| ("A".to_string(), r as f64, power_law(9.0, -0.5, -0.9, 1.3, r as f64))).collect();
    let table = dir.path().join("d.csv");
    write_table(&table, &rows);
    ok(&["fit", s(&table), "--log-base", "10", "--out-dir", s(&dir.path().join("b10"))]);
    ok(&["fit", s(&table), "--out-dir", s(&dir.path().join("be"))]);
    let k10 = read_json(&dir.path().join("b10/fit_report.json"))["params"]["kappa"].as_f64().unwrap();
    let ke = read_json(&dir.path().join("be/fit_report.json"))["params"]["kappa"].as_f64().unwrap();
    assert!((k10 - ke / std::f64::consts::LN_10).abs() < 1e-9);
    // the predicted curve does not depend on the reporting base
    let a = std::fs::read_to_string(dir.path().join("b10/fit_curve.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("be/fit_curve.csv")).unwrap();
    let parse = |t: &str| t.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).collect::<Vec<_>>();
    for (x, y) in parse(&a).iter().zip(parse(&b)) {
        assert!((x - y).abs() <= 1e-9 * y);
    }
}

#[test]
fn fit_three_rows_is_underdetermined() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = [-2.0, 0.0, 2.0].iter().map(|&r| ("A".to_string(), r, 5000.0)).collect();
    let table = dir.path().join("d.csv");
    write_table(&table, &rows);
    let out = dir.path().join("out");
    let res = run(&["fit", s(&table), "--out-dir", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("3 samples cannot determine 4 parameters"), "{}", stderr(&res));
    assert!(!out.join("fit_report.json").exists());
}

#[test]
fn fit_two_stage_reports_effects() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for (p, dk, drho) in [("A", 0.1, 0.2), ("B", -0.05, -0.1), ("C", 0.0, 0.05)] {
        for r in -10..=10 {
            rows.push((p.to_string(), r as f64, power_law(9.0 + dk, -0.6, -0.8, 0.9 + drho, r as f64)));
        }
    }
    let table = dir.path().join("d.csv");
    write_table(&table, &rows);
    let out = dir.path().join("out");
    ok(&["fit", s(&table), "--two-stage", "--out-dir", s(&out)]);
    let rep = read_json(&out.join("fit_report.json"));
    assert_eq!(rep["model"], "two_stage");
    assert_eq!(rep["n_participants"], 3);
    let effects = rep["effects"].as_object().unwrap();
    assert_eq!(effects.keys().collect::<Vec<_>>(), ["A", "B", "C"]);
    let sum: f64 = effects.values().map(|e| e["k_s"].as_f64().unwrap()).sum();
    assert!(sum.abs() < 1e-9);
    let curve = csv_rows(&out.join("fit_curve.csv"));
    assert_eq!(curve.len(), 4 * 201);
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |d: &Path| {
        vec!["synth", "--layout", "poisson-disc", "--count", "2", "--width", "128", "--height", "96", "--seed", "5", "--out-dir"]
            .into_iter()
            .map(String::from)
            .chain([s(d).to_string()])
            .collect::<Vec<_>>()
    };
    for d in ["a", "b"] {
        let a = args(&dir.path().join(d));
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    for f in ["synthetic_000.png", "synthetic_001_centers.csv", "synthetic_001.truth.json", "manifest.json"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(dir.path().join("a/synthetic_000.png")).unwrap(),
        std::fs::read(dir.path().join("a/synthetic_001.png")).unwrap()
    );
}

#[test]
fn synth_feeds_density() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    ok(&["synth", "--layout", "jittered-hex", "--count", "3", "--density", "30000", "--microns-per-pixel", "0.5", "--out-dir", s(&syn)]);
    let out = dir.path().join("den");
    ok(&["density", "--manifest", s(&syn.join("manifest.json")), "--out-dir", s(&out)]);
    let rows = csv_rows(&out.join("density.csv"));
    assert_eq!(rows.len(), 3);
    for r in rows {
        let d: f64 = r[4].parse().unwrap();
        assert!((d - 30000.0).abs() <= 0.05 * 30000.0, "{d}");
    }
}

#[test]
fn synth_too_dense_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = run(&["synth", "--density", "200000", "--microns-per-pixel", "1", "--out-dir", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("minimum spacing is 3 px"), "{}", stderr(&res));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn manifest_is_required() {
    let res = run(&["density"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("--manifest"));
}

#[test]
fn unknown_manifest_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), vec![record("a", 10, 10, json!({ "colour": "red" }))]);
    let res = run(&["density", "--manifest", s(&m), "--out-dir", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("colour"), "{}", stderr(&res));
}
