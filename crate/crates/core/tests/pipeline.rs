use std::fs;
use std::path::Path;
use std::process::Command;

use edm_atlas::cli_pipeline::{self as pipe, MethodChoice, Outcome, RunConfig};
use edm_atlas::clustering::Method;
use edm_atlas::feature_table;
use edm_atlas::metrics::EvaluationReport;

fn config(dir: &Path) -> RunConfig {
    RunConfig {
        out_dir: dir.to_path_buf(),
        seed: 7,
        k_fixed: 4,
        k_min: 2,
        k_max: 6,
        restarts: 10,
        bootstrap: 10,
        ..RunConfig::default()
    }
}

fn with_fixtures(dir: &Path) -> RunConfig {
    let c = config(dir);
    pipe::cmd_fixtures(&c, &pipe::default_fixture_genres()).unwrap();
    c
}

#[test]
fn unreadable_track_gives_partial_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let c = with_fixtures(dir.path());
    fs::write(dir.path().join("audio/techno_03.wav"), b"not a wav file").unwrap();
    let (m, outcome) = pipe::cmd_extract(&c).unwrap();
    assert_eq!(outcome, Outcome::Partial);
    assert_eq!(outcome.exit_code(), 1);
    assert_eq!(m.n_rows(), 39);
    assert!(!m.rows.iter().any(|r| r == "techno_03"));
    let saved = feature_table::load_matrix(dir.path().join(pipe::FEATURES_FILE)).unwrap();
    assert_eq!(saved.n_rows(), 39);
}

#[test]
fn both_methods_profiles_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = with_fixtures(dir.path());
    c.method = MethodChoice::Both;
    pipe::cmd_extract(&c).unwrap();
    let results = pipe::cmd_cluster(&c).unwrap();
    assert_eq!(results.len(), 2);
    for (model, report) in &results {
        assert_eq!(model.k, 4);
        assert_eq!(report.context.selection, "applied");
        assert_eq!(report.external.ari, 1.0, "{}", model.method.as_str());
        let text = fs::read_to_string(dir.path().join(pipe::report_file(model.method))).unwrap();
        assert_eq!(&EvaluationReport::from_json(&text).unwrap(), report);
    }
    assert!(results[1].0.split_tree.is_some());
    assert!(results[1].1.internal.cophenetic_dendrogram.is_some());

    let profiles = pipe::cmd_profile(&c).unwrap();
    assert_eq!(profiles.len(), 4);
    for p in &profiles {
        let svg = fs::read_to_string(dir.path().join(pipe::profile_svg_file(p.cluster))).unwrap();
        roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(p.purity, 1.0);
    }
    // the fastest genre tops the tempo axis
    let tempo = edm_atlas::metrics::Dimension::Tempo as usize;
    let dnb = profiles.iter().find(|p| p.majority_genre == "drum_and_bass").unwrap();
    assert_eq!(dnb.percentiles[tempo], Some(100.0));

    let plot = pipe::cmd_plot(&c).unwrap();
    let svg = fs::read_to_string(plot).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    assert!(circles >= 40, "{circles} points");
}

#[test]
fn embeddings_skip_selection() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = with_fixtures(dir.path());
    let records = feature_table::load_manifest(c.manifest_path()).unwrap();
    let mut csv = String::from("track_id,e0,e1,e2\n");
    for (i, r) in records.iter().enumerate() {
        let g = (i / 10) as f64 * 10.0;
        csv.push_str(&format!("{},{},{},{}\n", r.track_id, g + (i % 3) as f64 * 0.1, -g, (i % 5) as f64 * 0.05));
    }
    csv.push_str("extra_track,1,2,3\n");
    let emb = dir.path().join("emb.csv");
    fs::write(&emb, csv).unwrap();
    c.embeddings = Some(emb);
    let results = pipe::cmd_cluster(&c).unwrap();
    let (model, report) = &results[0];
    assert_eq!(model.method, Method::Kmeans);
    assert_eq!(report.context.selection, "skipped");
    assert_eq!(report.external.ari, 1.0);
    assert!(!dir.path().join(pipe::SELECTION_FILE).exists());
}

#[test]
fn missing_manifest_is_a_config_or_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path());
    let err = pipe::cmd_extract(&c).unwrap_err();
    assert!(pipe::error_exit_code(&err) >= 2);
}

#[test]
fn binary_reports_usage_errors_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_edm-atlas"))
        .args(["sweep", "--k-min", "9", "--k-max", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k range"));
}

#[test]
fn binary_runs_fixture_pipeline_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.conf"),
        "out = work\nseed = 3\nk = 4\nk_min = 2\nk_max = 6\nrestarts = 5\nbootstrap = 5\nper_genre = 3\n",
    )
    .unwrap();
    let conf = dir.path().join("run.conf");
    for cmd in ["fixtures", "extract", "cluster", "sweep"] {
        let out = Command::new(env!("CARGO_BIN_EXE_edm-atlas"))
            .arg(cmd)
            .arg("--config")
            .arg(&conf)
            .output()
            .unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        if cmd == "sweep" {
            assert!(String::from_utf8_lossy(&out.stdout).contains("chosen_k="));
        }
    }
    let work = dir.path().join("work");
    for f in [pipe::FEATURES_FILE, "labels_kmeans.csv", "report_kmeans.json", pipe::SWEEP_FILE] {
        assert!(work.join(f).exists(), "{f}");
    }
}
