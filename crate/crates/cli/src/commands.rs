//! The `pbir` subcommands. Every command is a pure function of the
//! configuration, the seeds and the files already in the output directory.

use std::path::{Path, PathBuf};

use pbir_core::metrics::{mad, nps, nps_difference, nps_peak_path, rmsd, NpsResult, Roi};
use pbir_core::pathseek::{ps_dog, ps_rog, ReconPath};
use pbir_core::simulate::{rasterize, simulate_counts, weighted_data};
use pbir_core::solvers::{admm_solve, admm_solve_continuation, fbp_reconstruct, sqs_solve, SolveOutput};
use pbir_core::{ImageVolume, PwlsProblem, Sinogram, Unit};
use rayon::prelude::*;

use crate::config::{Algorithm, Engine, InitKind, LoadedConfig, NpsEstimator};
use crate::error::{CliError, Result};
use crate::io::{
    create_dir, ensure_fresh, pgm_bytes, read_csv, read_raw, write_bytes, write_csv, FileUnit, ImageFileHeader,
    RawImage,
};

/// Everything a command needs besides its own name.
#[derive(Debug, Clone)]
pub struct Context {
    pub loaded: LoadedConfig,
    pub force: bool,
    /// Reject input files whose config hash differs from the current one.
    pub strict: bool,
    /// Recorded in every output header.
    pub command_line: String,
}

impl Context {
    fn out(&self, rel: &str) -> PathBuf {
        self.loaded.output_dir().join(rel)
    }

    fn header(&self, unit: FileUnit, nx: usize, ny: usize, dx: f64, dy: f64, metadata: String) -> ImageFileHeader {
        ImageFileHeader {
            unit,
            nx: nx as u32,
            ny: ny as u32,
            dx,
            dy,
            seed: self.loaded.config.simulation.seed,
            config_hash: self.loaded.hash,
            command: self.command_line.clone(),
            metadata,
        }
    }

    fn read(&self, path: &Path) -> Result<RawImage> {
        read_raw(path, self.strict.then_some(&self.loaded.hash))
    }

    /// Write an image in HU, plus a PGM preview when enabled.
    fn write_image(&self, path: &Path, image: &ImageVolume, metadata: String) -> Result<()> {
        let hu = image.to_hu();
        let g = hu.grid;
        let raw = RawImage {
            header: self.header(FileUnit::Hu, g.nx, g.ny, g.dx, g.dy, metadata),
            data: hu.data.iter().map(|&v| v as f32).collect(),
        };
        write_bytes(path, &raw.encode())?;
        let export = &self.loaded.config.export;
        if export.pgm {
            write_bytes(&path.with_extension("pgm"), &pgm_bytes(&hu, export.window, export.level))?;
        }
        Ok(())
    }

    fn image_outputs(&self, path: PathBuf) -> Vec<PathBuf> {
        let mut v = vec![path.clone()];
        if self.loaded.config.export.pgm {
            v.push(path.with_extension("pgm"));
        }
        v
    }
}

pub fn cmd_phantom(ctx: &Context) -> Result<Vec<PathBuf>> {
    let path = ctx.out("phantom.pbir");
    ensure_fresh(&ctx.image_outputs(path.clone()), ctx.force)?;
    let image = rasterize(&ctx.loaded.phantom()?, ctx.loaded.grid()?);
    ctx.write_image(&path, &image, format!("phantom={}", ctx.loaded.config.phantom))?;
    Ok(vec![path])
}

const SINO_FILES: [(&str, FileUnit); 3] = [
    ("counts.pbir", FileUnit::Counts),
    ("l.pbir", FileUnit::LineIntegral),
    ("w.pbir", FileUnit::Weight),
];

pub fn cmd_simulate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = SINO_FILES.iter().map(|(n, _)| ctx.out(n)).collect();
    ensure_fresh(&paths, ctx.force)?;
    let seed = ctx.loaded.config.simulation.seed;
    let sino = simulate(&ctx.loaded, seed)?;
    let geom = &sino.geom;
    let view_step = if geom.n_views() > 1 {
        geom.angles[1] - geom.angles[0]
    } else {
        0.0
    };
    let metadata = format!(
        "i0={}\nnoiseless={}\nn_clamped={}\nview_step_rad={view_step}",
        sino.i0, sino.noiseless, sino.n_clamped
    );
    for ((_, unit), (path, values)) in SINO_FILES.iter().zip(paths.iter().zip([&sino.counts, &sino.l, &sino.w])) {
        let raw = RawImage {
            header: ctx.header(*unit, geom.n_dets, geom.n_views(), geom.det_spacing, view_step, metadata.clone()),
            data: values.iter().map(|&v| v as f32).collect(),
        };
        write_bytes(path, &raw.encode())?;
    }
    Ok(paths)
}

pub fn cmd_recon(ctx: &Context) -> Result<Vec<PathBuf>> {
    let solver = &ctx.loaded.config.solver;
    let name = match solver.algorithm {
        Algorithm::Fbp => "fbp",
        Algorithm::Sqs => "sqs",
        Algorithm::Admm => "admm",
    };
    let image_path = ctx.out(&format!("recon_{name}.pbir"));
    let csv_path = ctx.out(&format!("recon_{name}_iterations.csv"));
    let mut outputs = ctx.image_outputs(image_path.clone());
    outputs.push(csv_path.clone());
    ensure_fresh(&outputs, ctx.force)?;

    let sino = load_sinogram(ctx)?;
    let truth = rasterize(&ctx.loaded.phantom()?, ctx.loaded.grid()?);
    let mut rows = vec![vec!["iteration".into(), "objective".into(), "rmsd_to_phantom_hu".into()]];
    let image = if solver.algorithm == Algorithm::Fbp {
        fbp_reconstruct(&sino, ctx.loaded.grid()?, solver.filter.into())?
    } else {
        let data = weighted_data(&sino)?;
        let problem = PwlsProblem::new(&sino.geom, ctx.loaded.grid()?, &data, ctx.loaded.penalty()?, solver.beta)?;
        let init = initial_image(&ctx.loaded, &sino)?;
        let out = iterative_solve(&ctx.loaded, &problem, &init, Some(&truth))?;
        for r in &out.log {
            rows.push(vec![
                r.iteration.to_string(),
                r.objective.to_string(),
                r.rmsd.map(|v| v.to_string()).unwrap_or_default(),
            ]);
        }
        out.image
    };
    let metadata = format!("algorithm={name}\nbeta={}", solver.beta);
    ctx.write_image(&image_path, &image, metadata)?;
    write_csv(&csv_path, &rows)?;
    Ok(vec![image_path, csv_path])
}

pub fn cmd_path(ctx: &Context) -> Result<Vec<PathBuf>> {
    let dir = ctx.out("path");
    let manifest = dir.join("manifest.csv");
    ensure_fresh(&[manifest.clone()], ctx.force)?;
    if ctx.force {
        remove_frames(&dir)?;
    }
    let sino = load_sinogram(ctx)?;
    let path = run_path(&ctx.loaded, &sino)?;
    create_dir(&dir)?;
    let mut rows = vec![vec![
        "index".into(),
        "file".into(),
        "beta".into(),
        "distance_hu".into(),
        "pixels_updated".into(),
    ]];
    let mut written = Vec::new();
    for f in &path.frames {
        let file = frame_file(f.index);
        let p = dir.join(&file);
        let metadata = format!("engine={}\nframe={}\nbeta={}", path.engine, f.index, f.beta_assigned);
        ctx.write_image(&p, &f.image, metadata)?;
        written.push(p);
        rows.push(vec![
            f.index.to_string(),
            file,
            f.beta_assigned.to_string(),
            f.distance.to_string(),
            f.pixels_updated.to_string(),
        ]);
    }
    write_csv(&manifest, &rows)?;
    println!("{}: {} frames ({})", path.engine, path.len(), path.termination);
    written.push(manifest);
    Ok(written)
}

pub fn cmd_metrics(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.loaded.config;
    let dir = ctx.out("metrics");
    let frames_csv = dir.join("frames.csv");
    let closest_csv = dir.join("closest.csv");
    let computed = cfg.metrics.references.is_empty();
    let mut outputs = vec![frames_csv.clone(), closest_csv.clone()];
    if computed {
        for k in 0..cfg.metrics.n_references {
            outputs.extend(ctx.image_outputs(dir.join(format!("reference_{k:02}.pbir"))));
        }
    }
    ensure_fresh(&outputs, ctx.force)?;

    let (frame_betas, frames) = load_path_frames(ctx)?;
    let references: Vec<(String, ImageVolume)> = if computed {
        let sino = load_sinogram(ctx)?;
        let betas = log_spaced(cfg.path.beta1, cfg.path.beta2, cfg.metrics.n_references);
        let images = direct_chain(&ctx.loaded, &sino, &betas)?;
        let mut refs = Vec::new();
        for (k, (beta, image)) in betas.iter().zip(images).enumerate() {
            ctx.write_image(&dir.join(format!("reference_{k:02}.pbir")), &image, format!("beta={beta}"))?;
            refs.push((beta.to_string(), image));
        }
        refs
    } else {
        cfg.metrics
            .references
            .iter()
            .map(|p| {
                let raw = ctx.read(&ctx.loaded.resolve(p))?;
                let beta = raw.header.meta("beta").unwrap_or_default().to_string();
                Ok((beta, raw.to_image()?))
            })
            .collect::<Result<_>>()?
    };
    let grid = ctx.loaded.grid()?;
    let roi = if cfg.metrics.roi_fraction >= 1.0 {
        Roi::Full
    } else {
        Roi::central_square(&grid, cfg.metrics.roi_fraction)?
    };

    let mut rows = vec![["frame", "frame_beta", "reference", "reference_beta", "rmsd_hu", "mad_hu"]
        .map(String::from)
        .to_vec()];
    let mut closest = vec![["reference", "reference_beta", "closest_frame", "frame_beta", "rmsd_hu"]
        .map(String::from)
        .to_vec()];
    for (k, (ref_beta, reference)) in references.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, frame) in frames.iter().enumerate() {
            let r = rmsd(frame, reference, roi)?;
            let m = mad(frame, reference, roi)?;
            rows.push(vec![
                i.to_string(),
                frame_betas[i].clone(),
                k.to_string(),
                ref_beta.clone(),
                r.to_string(),
                m.to_string(),
            ]);
            if best.is_none_or(|(_, b)| r < b) {
                best = Some((i, r));
            }
        }
        let (i, r) = best.ok_or(pbir_core::Error::EmptyPath)?;
        println!("reference {k} (beta {ref_beta}): closest frame {i}, rmsd {r:.3} HU");
        closest.push(vec![k.to_string(), ref_beta.clone(), i.to_string(), frame_betas[i].clone(), r.to_string()]);
    }
    write_csv(&frames_csv, &rows)?;
    write_csv(&closest_csv, &closest)?;
    Ok(outputs)
}

pub fn cmd_nps(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.loaded.config;
    let dir = ctx.out("nps");
    let mut outputs: Vec<PathBuf> = cfg.nps.frames.iter().map(|i| dir.join(format!("spectrum_{i:03}.pbir"))).collect();
    let radial_csv = dir.join("radial.csv");
    let peaks_csv = dir.join("peaks.csv");
    outputs.extend([radial_csv.clone(), peaks_csv.clone()]);
    ensure_fresh(&outputs, ctx.force)?;

    let study = nps_study(&ctx.loaded)?;
    let mut radial = vec![["frame", "mean_beta", "frequency", "nps", "normalized"].map(String::from).to_vec()];
    let mut peaks = vec![["frame", "mean_beta", "peak_frequency", "total_power", "pixel_variance"]
        .map(String::from)
        .to_vec()];
    for (k, entry) in study.iter().enumerate() {
        let r = &entry.nps;
        let df_x = r.freq_x.get(1).map_or(0.0, |f| f - r.freq_x[0]);
        let df_y = r.freq_y.get(1).map_or(0.0, |f| f - r.freq_y[0]);
        let raw = RawImage {
            header: ctx.header(
                FileUnit::NpsHu2Mm2,
                r.nx,
                r.ny,
                df_x,
                df_y,
                format!("frame={}\nmean_beta={}\nrealizations={}", entry.frame, entry.mean_beta, r.n_realizations),
            ),
            data: r.spectrum.iter().map(|&v| v as f32).collect(),
        };
        write_bytes(&outputs[k], &raw.encode())?;
        for ((f, v), n) in r.radial_freq.iter().zip(&r.radial).zip(r.normalized_profile()) {
            radial.push(vec![
                entry.frame.to_string(),
                entry.mean_beta.to_string(),
                f.to_string(),
                v.to_string(),
                n.to_string(),
            ]);
        }
        peaks.push(vec![
            entry.frame.to_string(),
            entry.mean_beta.to_string(),
            r.peak_frequency.to_string(),
            r.total_power().to_string(),
            entry.pixel_variance.to_string(),
        ]);
    }
    write_csv(&radial_csv, &radial)?;
    write_csv(&peaks_csv, &peaks)?;
    let results: Vec<NpsResult> = study.into_iter().map(|e| e.nps).collect();
    let pp = nps_peak_path(&results);
    println!("nps peak frequencies {:?} (increases: {})", pp.peaks, pp.violations);
    Ok(outputs)
}

/// NPS of one path frame across seeds.
#[derive(Debug, Clone)]
pub struct NpsEntry {
    pub frame: usize,
    pub mean_beta: f64,
    pub nps: NpsResult,
    /// Residual pixel variance in the ROI computed in the image domain (HU²),
    /// for checking the spectrum's total power.
    pub pixel_variance: f64,
}

/// Reconstruct the path for every seed (in parallel) and estimate the NPS at
/// each configured frame index.
pub fn nps_study(loaded: &LoadedConfig) -> Result<Vec<NpsEntry>> {
    let cfg = &loaded.config;
    let base = cfg.simulation.seed;
    let paths: Vec<ReconPath> = (0..cfg.nps.n_seeds as u64)
        .into_par_iter()
        .map(|k| {
            let sino = simulate(loaded, base.wrapping_add(k))?;
            run_path(loaded, &sino)
        })
        .collect::<Result<_>>()?;
    let grid = loaded.grid()?;
    let roi = Roi::central_square(&grid, cfg.nps.roi_fraction)?;
    let mut entries = Vec::new();
    for &frame in &cfg.nps.frames {
        let mut images = Vec::new();
        let mut beta_sum = 0.0;
        for (k, p) in paths.iter().enumerate() {
            let f = p.frames.get(frame).ok_or_else(|| {
                CliError::Config(format!("nps frame {frame} not reached for seed offset {k} ({} frames)", p.len()))
            })?;
            beta_sum += f.beta_assigned;
            images.push(f.image.clone());
        }
        let result = match cfg.nps.estimator {
            NpsEstimator::Ensemble => nps(&images, roi)?,
            NpsEstimator::Difference => mean_difference_nps(&images, roi)?,
        };
        entries.push(NpsEntry {
            frame,
            mean_beta: beta_sum / paths.len() as f64,
            pixel_variance: residual_variance(&images, roi, cfg.nps.estimator)?,
            nps: result,
        });
    }
    Ok(entries)
}

fn mean_difference_nps(images: &[ImageVolume], roi: Roi) -> Result<NpsResult> {
    let pairs: Vec<NpsResult> = images
        .chunks_exact(2)
        .map(|p| nps_difference(&p[0], &p[1], roi))
        .collect::<pbir_core::Result<_>>()?;
    let mut out = pairs[0].clone();
    let n = pairs.len() as f64;
    out.spectrum = (0..out.spectrum.len()).map(|i| pairs.iter().map(|p| p.spectrum[i]).sum::<f64>() / n).collect();
    out.radial = (0..out.radial.len()).map(|i| pairs.iter().map(|p| p.radial[i]).sum::<f64>() / n).collect();
    let peak = out.radial.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
    out.peak_frequency = out.radial_freq[peak];
    out.n_realizations = 2 * pairs.len();
    Ok(out)
}

fn residual_variance(images: &[ImageVolume], roi: Roi, estimator: NpsEstimator) -> Result<f64> {
    let grid = images[0].grid;
    let idx = roi.indices(&grid)?;
    let hu: Vec<Vec<f64>> = images
        .iter()
        .map(|i| {
            let h = i.to_hu();
            idx.iter().map(|&j| h.data[j]).collect()
        })
        .collect();
    let m = idx.len() as f64;
    Ok(match estimator {
        NpsEstimator::Ensemble => {
            let n = hu.len() as f64;
            let mean: Vec<f64> = (0..idx.len()).map(|j| hu.iter().map(|h| h[j]).sum::<f64>() / n).collect();
            hu.iter()
                .map(|h| h.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
                .sum::<f64>()
                / (m * (n - 1.0))
        }
        NpsEstimator::Difference => {
            let pairs = hu.chunks_exact(2);
            let n = pairs.len() as f64;
            pairs
                .map(|p| 0.5 * p[0].iter().zip(&p[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m)
                .sum::<f64>()
                / n
        }
    })
}

/// Simulated sinogram for `seed`.
pub fn simulate(loaded: &LoadedConfig, seed: u64) -> Result<Sinogram> {
    let truth = rasterize(&loaded.phantom()?, loaded.grid()?);
    let sim = &loaded.config.simulation;
    Ok(simulate_counts(&truth, &loaded.geometry()?, sim.i0, seed, sim.noiseless)?)
}

/// The simulated data in the output directory if present, otherwise a fresh
/// simulation with the configured seed.
fn load_sinogram(ctx: &Context) -> Result<Sinogram> {
    let paths: Vec<PathBuf> = SINO_FILES.iter().map(|(n, _)| ctx.out(n)).collect();
    if !paths.iter().all(|p| p.is_file()) {
        return simulate(&ctx.loaded, ctx.loaded.config.simulation.seed);
    }
    let geom = ctx.loaded.geometry()?;
    let mut arrays = Vec::new();
    for ((_, unit), path) in SINO_FILES.iter().zip(&paths) {
        let raw = ctx.read(path)?;
        if raw.header.unit != *unit || raw.header.nx as usize != geom.n_dets || raw.header.ny as usize != geom.n_views() {
            return Err(CliError::Format {
                path: path.clone(),
                message: format!(
                    "expected {unit:?} data of {}x{}, found {:?} {}x{}",
                    geom.n_dets,
                    geom.n_views(),
                    raw.header.unit,
                    raw.header.nx,
                    raw.header.ny
                ),
            });
        }
        arrays.push((raw.header.clone(), raw.data.iter().map(|&v| v as f64).collect::<Vec<f64>>()));
    }
    let header = arrays[0].0.clone();
    let meta = |k: &str| header.meta(k).unwrap_or_default().to_string();
    let i0 = meta("i0").parse().map_err(|_| CliError::Format {
        path: paths[0].clone(),
        message: "missing i0 metadata".into(),
    })?;
    let w = arrays.pop().map(|a| a.1).unwrap_or_default();
    let l = arrays.pop().map(|a| a.1).unwrap_or_default();
    let counts = arrays.pop().map(|a| a.1).unwrap_or_default();
    Ok(Sinogram {
        geom,
        n_clamped: counts.iter().filter(|&&c| c < 1.0).count(),
        l,
        w,
        counts,
        i0,
        noiseless: meta("noiseless") == "true",
    })
}

/// FBP clamped at zero attenuation, or zeros.
pub fn initial_image(loaded: &LoadedConfig, sino: &Sinogram) -> Result<ImageVolume> {
    let grid = loaded.grid()?;
    Ok(match loaded.config.solver.init {
        InitKind::Zero => ImageVolume::zeros(grid, Unit::PerMm),
        InitKind::Fbp => {
            let fbp = fbp_reconstruct(sino, grid, loaded.config.solver.filter.into())?.to_mu();
            ImageVolume::from_vec(grid, Unit::PerMm, fbp.data.iter().map(|v| v.max(0.0)).collect())?
        }
    })
}

/// The configured iterative solver at `problem.beta`.
pub fn iterative_solve(
    loaded: &LoadedConfig,
    problem: &PwlsProblem,
    init: &ImageVolume,
    reference: Option<&ImageVolume>,
) -> Result<SolveOutput> {
    let s = &loaded.config.solver;
    Ok(match s.algorithm {
        Algorithm::Sqs => sqs_solve(problem, init, s.iterations, s.subsets, reference)?,
        Algorithm::Admm if s.continuation => {
            admm_solve_continuation(problem, init, s.iterations, s.subsets, s.rho, s.n_inner, reference)?
        }
        Algorithm::Admm => admm_solve(problem, init, s.iterations, s.subsets, s.rho, s.n_inner, reference)?,
        Algorithm::Fbp => {
            return Err(CliError::Config("solver.algorithm must be sqs or admm for PWLS solves".into()));
        }
    })
}

/// Direct solves at increasing `betas`, each warm-started from the previous
/// one (the first from [`initial_image`]).
pub fn direct_chain(loaded: &LoadedConfig, sino: &Sinogram, betas: &[f64]) -> Result<Vec<ImageVolume>> {
    let data = weighted_data(sino)?;
    let problem = PwlsProblem::new(&sino.geom, loaded.grid()?, &data, loaded.penalty()?, 0.0)?;
    let mut current = initial_image(loaded, sino)?;
    let mut out: Vec<ImageVolume> = Vec::with_capacity(betas.len());
    for (k, &beta) in betas.iter().enumerate() {
        if k > 0 && beta == betas[k - 1] {
            out.push(current.clone());
            continue;
        }
        current = iterative_solve(loaded, &problem.with_beta(beta), &current, None)?.image;
        out.push(current.clone());
    }
    Ok(out)
}

/// Endpoint solves followed by the configured path engine.
pub fn run_path(loaded: &LoadedConfig, sino: &Sinogram) -> Result<ReconPath> {
    let cfg = loaded.config.path.to_path_config();
    let data = weighted_data(sino)?;
    let problem = PwlsProblem::new(&sino.geom, loaded.grid()?, &data, loaded.penalty()?, cfg.beta1)?;
    Ok(match loaded.config.path.engine {
        Engine::Dog => {
            let start = direct_chain(loaded, sino, &[cfg.beta1])?;
            ps_dog(&problem, &start[0], &cfg)?
        }
        Engine::Rog => {
            let ends = direct_chain(loaded, sino, &[cfg.beta1, cfg.beta2])?;
            ps_rog(&problem, &ends[0], &ends[1], &cfg)?
        }
    })
}

/// `n` log-spaced values from `a` to `b` inclusive.
pub fn log_spaced(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else if a > 0.0 {
                    a * (b / a).powf(i as f64 / (n - 1) as f64)
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

fn frame_file(index: usize) -> String {
    format!("frame_{index:03}.pbir")
}

fn remove_frames(dir: &Path) -> Result<()> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(());
    };
    for e in entries.flatten() {
        let name = e.file_name().to_string_lossy().into_owned();
        if name.starts_with("frame_") && (name.ends_with(".pbir") || name.ends_with(".pgm")) {
            std::fs::remove_file(e.path()).map_err(|err| CliError::io(e.path(), err))?;
        }
    }
    Ok(())
}

fn load_path_frames(ctx: &Context) -> Result<(Vec<String>, Vec<ImageVolume>)> {
    let dir = ctx.out("path");
    let manifest = dir.join("manifest.csv");
    if !manifest.is_file() {
        return Err(CliError::Config(format!("{} not found; run `pbir path` first", manifest.display())));
    }
    let mut betas = Vec::new();
    let mut images = Vec::new();
    for rec in read_csv(&manifest)? {
        let file = rec.get(1).ok_or_else(|| CliError::Format {
            path: manifest.clone(),
            message: "row without file column".into(),
        })?;
        betas.push(rec.get(2).unwrap_or_default().to_string());
        images.push(ctx.read(&dir.join(file))?.to_image()?);
    }
    Ok((betas, images))
}
