//! The `hemoflow` binary against the library calls each verb composes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hemoflow::cardiac::{reference_configs, write_waveform};
use hemoflow::ensemble::{
    desk_domain, generate_waveforms, prepare_runs, run_instance, write_run_input, SolverParams, RUNS_DIR,
};
use hemoflow::geometry::write_domain;

fn hemoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hemoflow")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = hemoflow(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(hemoflow(&["--version"]).status.code(), Some(0));
    assert_eq!(hemoflow(&["--help"]).status.code(), Some(0));
    let unknown = hemoflow(&["fly"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("gen-waveforms"));
    let bad = hemoflow(&["voxelize", "--shape", "desk"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("--voxel-size"));
    assert_eq!(hemoflow(&["run", "--dir", "/nonexistent/r", "--geometry", "/nonexistent/g"]).status.code(), Some(2));
}

#[test]
fn gen_waveforms_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let cli = tmp.path().join("cli");
    let lib = tmp.path().join("lib");
    ok(&["gen-waveforms", "--out", s(&cli)]);
    fs::create_dir_all(&lib).unwrap();
    let configs = reference_configs();
    for (c, (w, _)) in configs.iter().zip(generate_waveforms(&configs).unwrap()) {
        write_waveform(&w, &lib.join(format!("{}.csv", c.label))).unwrap();
    }
    let got = files(&cli);
    assert_eq!(got.len(), configs.len());
    assert_eq!(got, files(&lib));
}

#[test]
fn voxelize_gen_lb_and_run_match_library() {
    let tmp = tempfile::tempdir().unwrap();
    let geometry = tmp.path().join("desk.dom");
    ok(&["voxelize", "--shape", "desk", "--out", s(&geometry)]);
    let domain = desk_domain().unwrap();
    let lib_geometry = tmp.path().join("lib.dom");
    write_domain(&domain, &lib_geometry).unwrap();
    assert_eq!(fs::read(&geometry).unwrap(), fs::read(&lib_geometry).unwrap());

    let cli = tmp.path().join("cli");
    ok(&["gen-lb", "--geometry", s(&geometry), "--out", s(&cli), "--set", "cycles=1"]);
    let configs = reference_configs();
    let waves: Vec<_> = generate_waveforms(&configs).unwrap().into_iter().map(|(w, _)| w).collect();
    let params = SolverParams { cycles: 1, ..SolverParams::default() };
    let metas = prepare_runs(&configs, &waves, domain.voxel_size, &params).unwrap();
    let lib = tmp.path().join("lib");
    for (meta, w) in metas.iter().zip(&waves) {
        let dir = lib.join(&meta.label);
        write_run_input(&dir, meta, w).unwrap();
        assert_eq!(files(&cli.join(RUNS_DIR).join(&meta.label)), files(&dir), "{}", meta.label);
    }

    // Shortest instance through both routes.
    let label = &metas.iter().min_by_key(|m| m.steps).unwrap().label;
    let cli_run = cli.join(RUNS_DIR).join(label);
    ok(&["run", "--dir", s(&cli_run), "--geometry", s(&geometry)]);
    run_instance(&lib.join(label), &domain, 1).unwrap();
    let got = files(&cli_run);
    assert!(got.len() > 2);
    assert_eq!(got, files(&lib.join(label)));
}
