use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pbir_cli::io::{read_raw, RawImage};
use pbir_core::metrics::{rmsd, Roi};
use pbir_core::simulate::rasterize;
use pbir_core::{EllipsePhantom, ImageGrid};

const SMALL: &str = r#"
output_dir = "out"
[geometry]
nx = 32
ny = 32
dx = 8.0
dy = 8.0
n_views = 90
[solver]
iterations = 30
[path]
n_frames = 5
[metrics]
n_references = 2
[nps]
n_seeds = 3
frames = [0, 2]
"#;

fn pbir(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbir"))
        .arg(args[0])
        .arg("--config")
        .arg(config)
        .args(&args[1..])
        .output()
        .expect("spawn pbir")
}

fn ok(config: &Path, args: &[&str]) {
    let out = pbir(config, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn setup(text: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.toml");
    fs::write(&config, text).unwrap();
    (dir, config)
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unregularized_noiseless_recon_matches_phantom() {
    let (dir, config) = setup(
        r#"
[geometry]
nx = 64
ny = 64
dx = 4.0
dy = 4.0
n_views = 180
[simulation]
noiseless = true
[solver]
algorithm = "sqs"
beta = 0.0
iterations = 200
subsets = 10
"#,
    );
    ok(&config, &["recon"]);
    let image = read_raw(&dir.path().join("out/recon_sqs.pbir"), None).unwrap().to_image().unwrap();
    let grid = ImageGrid::square(64, 4.0).unwrap();
    let phantom = EllipsePhantom::water_cylinder_for_grid(&grid);
    let radius = phantom.ellipses[0].semi_axis_a;
    let truth = rasterize(&phantom, grid);
    let support = Roi::Disk { cx: 0.0, cy: 0.0, radius: radius - 2.0 * grid.dx };
    let r = rmsd(&image, &truth, support).unwrap();
    assert!(r < 20.0, "rmsd inside support {r} HU");
    let log = fs::read_to_string(dir.path().join("out/recon_sqs_iterations.csv")).unwrap();
    // header, the initial image, then one row per iteration
    assert_eq!(log.lines().count(), 202);
    assert!(log.lines().nth(1).unwrap().starts_with("0,"));
}

#[test]
fn rog_with_equal_betas_gives_single_frame() {
    let (dir, config) = setup(SMALL);
    ok(&config, &["path", "--override", "path.engine=rog", "--override", "path.beta2=0.001"]);
    let manifest = fs::read_to_string(dir.path().join("out/path/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 2, "{manifest}");
    let frames = fs::read_dir(dir.path().join("out/path"))
        .unwrap()
        .flatten()
        .filter(|e| e.file_name().to_string_lossy().starts_with("frame_"))
        .count();
    assert_eq!(frames, 1);
}

#[test]
fn manifest_rows_match_frame_files_after_force() {
    let (dir, config) = setup(SMALL);
    ok(&config, &["path", "--override", "path.n_frames=6"]);
    ok(&config, &["path", "--override", "path.n_frames=3", "--force"]);
    let manifest = fs::read_to_string(dir.path().join("out/path/manifest.csv")).unwrap();
    let frames = fs::read_dir(dir.path().join("out/path"))
        .unwrap()
        .flatten()
        .filter(|e| e.file_name().to_string_lossy().ends_with(".pbir"))
        .count();
    assert_eq!(manifest.lines().count() - 1, frames);
    assert_eq!(frames, 3);
}

#[test]
fn identical_runs_are_byte_identical() {
    let runs: Vec<(tempfile::TempDir, PathBuf)> = (0..2).map(|_| setup(SMALL)).collect();
    for (_, config) in &runs {
        for cmd in ["phantom", "simulate", "recon", "path", "metrics", "nps"] {
            ok(config, &[cmd, "--override", "export.pgm=true"]);
        }
    }
    let a = runs[0].0.path().join("out");
    let b = runs[1].0.path().join("out");
    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    assert!(files.len() > 20);
    for f in files {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn written_headers_round_trip_and_record_the_config() {
    let (dir, config) = setup(SMALL);
    ok(&config, &["phantom"]);
    let path = dir.path().join("out/phantom.pbir");
    let bytes = fs::read(&path).unwrap();
    let raw = RawImage::decode(&bytes).unwrap();
    assert_eq!(raw.encode(), bytes);
    assert_eq!((raw.header.nx, raw.header.ny), (32, 32));
    assert_eq!(raw.header.dx, 8.0);
    assert_eq!(raw.header.seed, 7);
    assert_eq!(raw.header.command, "pbir phantom");
    assert_eq!(bytes.len() - raw.data.len() * 4, raw.header.encode().len());

    let loaded = pbir_cli::config::LoadedConfig::load(&config, &[]).unwrap();
    assert_eq!(raw.header.config_hash, loaded.hash);
    assert!(read_raw(&path, Some(&loaded.hash)).is_ok());
    let other = pbir_cli::config::LoadedConfig::load(&config, &["solver.beta=0.5".into()]).unwrap();
    assert!(matches!(
        read_raw(&path, Some(&other.hash)),
        Err(pbir_cli::CliError::HashMismatch { .. })
    ));
}

#[test]
fn strict_mode_rejects_foreign_inputs() {
    let (_dir, config) = setup(SMALL);
    ok(&config, &["simulate"]);
    let out = pbir(&config, &["recon", "--strict", "--override", "solver.iterations=2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config hash"));
    ok(&config, &["recon", "--strict"]);
}

#[test]
fn refuses_to_overwrite_without_force() {
    let (dir, config) = setup(SMALL);
    ok(&config, &["phantom"]);
    let path = dir.path().join("out/phantom.pbir");
    let before = fs::read(&path).unwrap();
    fs::write(&path, b"sentinel").unwrap();
    let out = pbir(&config, &["phantom"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("already exists"));
    assert_eq!(fs::read(&path).unwrap(), b"sentinel");
    ok(&config, &["phantom", "--force"]);
    assert_eq!(fs::read(&path).unwrap(), before);
}

#[test]
fn invalid_config_fails_with_one_line() {
    let (_dir, config) = setup("[geometry]\nnx = 0\n");
    let out = pbir(&config, &["phantom"]);
    assert!(!out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim_end().lines().count(), 1);
    let (_dir, config) = setup("[solver]\nbeta = \"high\"\n");
    let out = pbir(&config, &["recon"]);
    assert!(!out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim_end().lines().count(), 1);
}

#[test]
fn phantom_file_is_read_relative_to_config() {
    let (dir, config) = setup(&format!("phantom = \"body.toml\"\n{SMALL}"));
    fs::write(
        dir.path().join("body.toml"),
        "[[ellipse]]\ncenter_x = 0.0\ncenter_y = 0.0\nsemi_axis_a = 80.0\nsemi_axis_b = 50.0\nrotation_deg = 30.0\nvalue_hu = 1000.0\n",
    )
    .unwrap();
    ok(&config, &["phantom"]);
    let img = read_raw(&dir.path().join("out/phantom.pbir"), None).unwrap().to_image().unwrap();
    assert_eq!(img.get(16, 16), 0.0);
    assert_eq!(img.get(0, 0), -1000.0);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(&dir).unwrap().flatten() {
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".toml") && !name.ends_with("_phantom.toml") {
            pbir_cli::config::LoadedConfig::load(&e.path(), &[]).unwrap_or_else(|err| panic!("{name}: {err}"));
            n += 1;
        }
    }
    assert!(n >= 2);
}
