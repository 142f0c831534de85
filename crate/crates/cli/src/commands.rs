//! The five subcommands. Each returns the manifest it wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use mrpd_core::multicoil::{reconstruct_ssos, ssos};
use mrpd_core::phantom::{prior_seeds, shepp_logan, test_seeds};
use mrpd_core::quality::{psnr, ssim};
use mrpd_core::sampler::{pareto_sweep, SweepCase};
use mrpd_core::{
    adapt_boundary, guidance_mode_ablation, ifft2c, reconstruct, Codec, CoilSet, GuidanceMode, Measurement,
    RealField, SamplingMask, Validate,
};

use crate::config::{resolve, Config, Overrides};
use crate::error::CliError;
use crate::experiment;
use crate::fld::FldArray;
use crate::formats;
use crate::manifest::{OutputDir, RunManifest};

fn load(config_path: &Path, ov: &Overrides) -> Result<Config, CliError> {
    let mut cfg = Config::load(config_path)?;
    cfg.apply(ov);
    Ok(cfg)
}

fn open(command: &str, cfg: &Config, out: &Path) -> Result<OutputDir, CliError> {
    let mut m = RunManifest::new(command, cfg.hash());
    m.seeds.insert("seed".into(), cfg.seed);
    m.seeds.insert("phantom_variant".into(), cfg.phantom.variant);
    OutputDir::create(out, m)
}

fn zero_filled(meas: &[Measurement]) -> Result<RealField, CliError> {
    let mags: Vec<RealField> = meas.iter().map(|m| ifft2c(&m.kdata).magnitude()).collect();
    Ok(ssos(&mags)?)
}

fn quality(out: &mut OutputDir, prefix: &str, img: &RealField, reference: &RealField) -> Result<(), CliError> {
    out.manifest.metric(&format!("{prefix}psnr"), psnr(img, reference)?);
    out.manifest.metric(&format!("{prefix}ssim"), ssim(img, reference)?);
    Ok(())
}

/// Phantom, mask and measurement files with previews.
pub fn simulate(config_path: &Path, out: &Path, ov: &Overrides) -> Result<RunManifest, CliError> {
    let cfg = load(config_path, ov)?;
    let mut dir = open("simulate", &cfg, out)?;
    let start = Instant::now();
    let scene = experiment::scene(&cfg)?;
    let zf = zero_filled(&scene.measurements)?;
    dir.manifest.wall_seconds.insert("simulate".into(), start.elapsed().as_secs_f64());

    dir.fld("phantom.fld", &formats::real_to_fld(&scene.truth))?;
    dir.fld("image.fld", &formats::complex_to_fld(&scene.image))?;
    dir.fld("mask.fld", &formats::mask_to_fld(&scene.mask))?;
    dir.fld("measurement.fld", &formats::measurements_to_fld(&scene.measurements)?)?;
    dir.fld("zero_filled.fld", &formats::real_to_fld(&zf))?;
    if let Some(maps) = &scene.sensitivities {
        dir.fld("sensitivities.fld", &formats::sensitivities_to_fld(maps)?)?;
    }
    if cfg.output.previews {
        let (h, w) = scene.truth.shape();
        dir.preview("phantom.pgm", h, w, scene.truth.data())?;
        dir.preview("zero_filled.pgm", h, w, zf.data())?;
        let keep: Vec<f64> = scene.mask.keep().iter().map(|&k| k as u8 as f64).collect();
        dir.preview("mask.pgm", h, w, &keep)?;
    }
    let m = &mut dir.manifest;
    m.metric("accel_nominal", scene.mask.accel_nominal());
    m.metric("accel_achieved", scene.mask.achieved_acceleration());
    m.metric("kept_samples", scene.mask.kept_count());
    m.metric("coils", scene.measurements.len());
    quality(&mut dir, "zero_filled_", &zf, &scene.truth)?;
    dir.finish()
}

struct Inputs {
    measurements: Vec<Measurement>,
    reference: Option<RealField>,
}

fn inputs(cfg: &Config, config_path: &Path) -> Result<Inputs, CliError> {
    match &cfg.input {
        Some(inp) => {
            let mask = formats::mask_from_fld(&FldArray::read(&resolve(config_path, &inp.mask))?)?;
            let measurements =
                formats::measurements_from_fld(&FldArray::read(&resolve(config_path, &inp.measurement))?, &mask)?;
            let reference = match &inp.reference {
                Some(p) => Some(formats::real_from_fld(&FldArray::read(&resolve(config_path, p))?)?),
                None => None,
            };
            Ok(Inputs { measurements, reference })
        }
        None => {
            let s = experiment::scene(cfg)?;
            Ok(Inputs { measurements: s.measurements, reference: Some(s.truth) })
        }
    }
}

/// Magnitude reconstruction, trajectory table and quality metrics.
pub fn reconstruct_cmd(config_path: &Path, out: &Path, ov: &Overrides) -> Result<RunManifest, CliError> {
    let cfg = load(config_path, ov)?;
    let mode = cfg.mode()?;
    let mut dir = open("reconstruct", &cfg, out)?;
    let sampler = experiment::sampler(&cfg, cfg.seed)?;
    let schedule = experiment::schedule(&cfg)?;

    let start = Instant::now();
    let codec = experiment::codec(&cfg, config_path)?;
    let prior = experiment::prior(&cfg, config_path, &codec)?;
    let inp = inputs(&cfg, config_path)?;
    dir.manifest.wall_seconds.insert("setup".into(), start.elapsed().as_secs_f64());
    dir.manifest.seeds.insert("noise_seed".into(), sampler.noise_seed);
    dir.manifest.seeds.insert("phase_seed".into(), sampler.phase_seed);

    let start = Instant::now();
    let reference = inp.reference.as_ref();
    let image = if inp.measurements.len() > 1 {
        if mode != GuidanceMode::HardToSoft {
            return Err(CliError::Config(format!("sampler.mode `{}` needs a single coil", mode.name())));
        }
        reconstruct_ssos(&inp.measurements, prior.as_ref(), &codec, &schedule, &sampler)?
    } else {
        let meas = &inp.measurements[0];
        let (image, traj) = if mode == GuidanceMode::HardToSoft {
            reconstruct(meas, prior.as_ref(), &codec, &schedule, &sampler, reference)?
        } else {
            guidance_mode_ablation(meas, prior.as_ref(), &codec, &schedule, &sampler, mode, true, reference)?
        };
        dir.text("trajectory.csv", &traj.to_table())?;
        dir.manifest.metric("iterations", traj.iterations());
        dir.manifest.metric("hard_dc_count", traj.hard_dc_count);
        if let Some(last) = traj.steps.last() {
            dir.manifest.metric("final_l2_residual", last.l2_residual);
        }
        let every = cfg.sampler.dump_every;
        if every > 0 {
            for (i, step) in traj.steps.iter().enumerate().filter(|(i, _)| i % every == 0) {
                if let Some(est) = &step.clean_estimate {
                    dir.fld(&format!("estimates/step_{i:04}_t{:04}.fld", step.t), &formats::real_to_fld(est))?;
                }
            }
        }
        image
    };
    dir.manifest.wall_seconds.insert("reconstruct".into(), start.elapsed().as_secs_f64());

    dir.fld("recon.fld", &formats::real_to_fld(&image))?;
    if cfg.output.previews {
        dir.preview("recon.pgm", image.height(), image.width(), image.data())?;
    }
    dir.manifest.metric("coils", inp.measurements.len());
    dir.manifest.metric("mode", mode.name());
    if let Some(r) = reference {
        quality(&mut dir, "", &image, r)?;
    }
    dir.finish()
}

fn core_hash(codec: &Codec) -> String {
    match codec {
        Codec::PatchLinear(p) => {
            let bytes: Vec<u8> = p.core().matrix.iter().flat_map(|v| v.to_le_bytes()).collect();
            hex::encode(Sha256::digest(&bytes))
        }
        Codec::Orthonormal(_) => String::new(),
    }
}

/// Refits the boundary layers of a patch codec on prior-seed phantoms.
pub fn finetune_adapter(config_path: &Path, out: &Path, ov: &Overrides) -> Result<RunManifest, CliError> {
    let cfg = load(config_path, ov)?;
    let mut dir = open("finetune-adapter", &cfg, out)?;
    let codec = experiment::codec(&cfg, config_path)?;
    if !matches!(codec, Codec::PatchLinear(_)) {
        return Err(CliError::Config("codec.kind must be `patch` to fine-tune an adapter".into()));
    }
    let n = cfg.phantom.size;
    let phantoms = |seeds: Vec<u64>| -> Result<Vec<RealField>, CliError> {
        seeds.into_iter().map(|s| Ok(shepp_logan(n, n, s)?)).collect()
    };
    let train = phantoms(prior_seeds(cfg.adapter.train))?;
    let holdout = phantoms(test_seeds(cfg.adapter.holdout))?;

    let start = Instant::now();
    let adapted = adapt_boundary(&codec, &train, cfg.adapter.ridge)?;
    dir.manifest.wall_seconds.insert("adapt".into(), start.elapsed().as_secs_f64());
    adapted.validate().map_err(|v| CliError::Numeric(format!("adapted codec invalid: {v}")))?;

    let m = &mut dir.manifest;
    m.metric("train_error_before", codec.reconstruction_error(&train)?);
    m.metric("train_error_after", adapted.reconstruction_error(&train)?);
    if !holdout.is_empty() {
        m.metric("holdout_error_before", codec.reconstruction_error(&holdout)?);
        m.metric("holdout_error_after", adapted.reconstruction_error(&holdout)?);
    }
    m.metric("core_sha256_before", core_hash(&codec));
    m.metric("core_sha256_after", core_hash(&adapted));
    m.metric("boundary_parameters", adapted.boundary_parameters());
    m.metric("total_parameters", adapted.total_parameters());
    m.metric("train_images", train.len());
    dir.fld("codec.fld", &formats::codec_to_fld(&adapted))?;
    dir.finish()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// λ sweep, guidance-mode comparison and `(t0, t_ws)` Pareto sweep.
pub fn ablate(config_path: &Path, out: &Path, ov: &Overrides) -> Result<RunManifest, CliError> {
    let cfg = load(config_path, ov)?;
    if cfg.measure.coils != 1 {
        return Err(CliError::Config("ablations run on a single coil; set measure.coils = 1".into()));
    }
    if cfg.ablate.runs == 0 {
        return Err(CliError::Config("ablate.runs must be at least 1".into()));
    }
    let mut dir = open("ablate", &cfg, out)?;
    let codec = experiment::codec(&cfg, config_path)?;
    let prior = experiment::prior(&cfg, config_path, &codec)?;
    let schedule = experiment::schedule(&cfg)?;
    let image = experiment::ground_truth(&cfg)?;
    let truth = image.magnitude();
    let mask: SamplingMask = experiment::mask(&cfg)?;
    let seeds: Vec<u64> = (0..cfg.ablate.runs as u64).map(|r| cfg.seed.wrapping_add(r)).collect();
    let cases = seeds
        .iter()
        .map(|&s| {
            let (_, meas) = experiment::acquire(&cfg, &image, &mask, s)?;
            Ok(SweepCase { measurement: meas.into_iter().next().expect("one coil"), reference: truth.clone() })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    dir.manifest.metric("runs", seeds.len());

    let run = |case: &SweepCase, seed: u64, lambda: f64, mode: GuidanceMode| -> Result<(f64, f64), CliError> {
        let sc = mrpd_core::SamplerConfig { lambda, ..experiment::sampler(&cfg, seed)? };
        let (img, _) =
            guidance_mode_ablation(&case.measurement, prior.as_ref(), &codec, &schedule, &sc, mode, true, None)?;
        Ok((psnr(&img, &case.reference)?, ssim(&img, &case.reference)?))
    };

    let start = Instant::now();
    let mut table = String::from("lambda,mean_psnr,mean_ssim\n");
    for &lambda in &cfg.ablate.lambdas {
        let res = cases
            .par_iter()
            .zip(&seeds)
            .map(|(c, &s)| run(c, s, lambda, GuidanceMode::HardToSoft))
            .collect::<Result<Vec<_>, _>>()?;
        let p: Vec<f64> = res.iter().map(|r| r.0).collect();
        let q: Vec<f64> = res.iter().map(|r| r.1).collect();
        table.push_str(&format!("{lambda},{},{}\n", mean(&p), mean(&q)));
    }
    dir.text("lambda.csv", &table)?;
    dir.manifest.wall_seconds.insert("lambda".into(), start.elapsed().as_secs_f64());

    let start = Instant::now();
    let modes = [GuidanceMode::HardOnly, GuidanceMode::SoftOnly, GuidanceMode::HardToSoft];
    let rows = cases
        .par_iter()
        .zip(&seeds)
        .map(|(c, &s)| {
            modes.iter().map(|&m| run(c, s, cfg.sampler.lambda, m).map(|r| r.0)).collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = String::from("seed,hard_only,soft_only,hard_to_soft\n");
    for (s, r) in seeds.iter().zip(&rows) {
        table.push_str(&format!("{s},{},{},{}\n", r[0], r[1], r[2]));
    }
    let wins = rows.iter().filter(|r| r[2] >= r[0] && r[2] >= r[1]).count();
    dir.text("modes.csv", &table)?;
    dir.manifest.metric("hard_to_soft_wins", wins);
    dir.manifest.wall_seconds.insert("modes".into(), start.elapsed().as_secs_f64());

    let grid: Vec<(f64, f64)> =
        cfg.ablate.t0_grid.iter().flat_map(|&t0| cfg.ablate.t_ws_grid.iter().map(move |&tw| (t0, tw))).collect();
    let base = experiment::sampler(&cfg, cfg.seed)?;
    let start = Instant::now();
    let pareto = pareto_sweep(&cases, prior.as_ref(), &codec, &schedule, &base, &grid, cfg.ablate.repeats)?;
    dir.manifest.wall_seconds.insert("pareto".into(), start.elapsed().as_secs_f64());
    let mut table = String::from("t0,t_ws,steps,hard_dc,mean_psnr,wall_seconds,efficient\n");
    for r in &pareto {
        table.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.t0, r.t_ws, r.steps, r.hard_dc, r.mean_psnr, r.wall_seconds, r.efficient
        ));
    }
    dir.timed_text("pareto.csv", &table)?;
    dir.manifest.metric(
        "pareto_steps",
        json!(pareto.iter().map(|r| json!({"t0": r.t0, "t_ws": r.t_ws, "steps": r.steps, "hard_dc": r.hard_dc, "mean_psnr": r.mean_psnr})).collect::<Vec<_>>()),
    );
    dir.finish()
}

/// Outcome of checking one file.
#[derive(Debug)]
pub struct FileReport {
    pub path: PathBuf,
    /// `kind` metadata, when the header parsed.
    pub kind: Option<String>,
    pub result: Result<(), CliError>,
}

fn check(arr: &FldArray) -> Result<(), CliError> {
    let invalid = |v: mrpd_core::Violation| CliError::Invalid(v.to_string());
    match arr.meta("kind")? {
        "real" => formats::real_from_fld(arr)?.validate().map_err(invalid),
        "complex" => formats::complex_from_fld(arr)?.validate().map_err(invalid),
        "phase" => formats::phase_from_fld(arr)?.validate().map_err(invalid),
        "mask" => formats::mask_from_fld(arr)?.validate().map_err(invalid),
        "latent" => formats::latent_from_fld(arr)?.validate().map_err(invalid),
        "codec" => formats::codec_from_fld(arr)?.validate().map_err(invalid),
        "mixture_prior" => formats::prior_from_fld(arr).map(|_| ()),
        "sensitivities" => {
            let set = CoilSet::from_sensitivities(formats::sensitivities_from_fld(arr)?)
                .map_err(|e| CliError::Format(e.to_string()))?;
            set.validate().map_err(invalid)
        }
        "measurement" => {
            let (h, w) = match arr.dims[..] {
                [_, h, w] => (h, w),
                _ => return Err(CliError::Format(format!("measurement dims {:?}", arr.dims))),
            };
            let meas = formats::measurements_from_fld(arr, &SamplingMask::full(h, w))?;
            meas.iter().try_for_each(|m| m.kdata.validate().map_err(invalid))
        }
        other => Err(CliError::Format(format!("unknown kind `{other}`"))),
    }
}

/// Parses and validates each file; never stops at the first failure.
pub fn validate(paths: &[PathBuf]) -> Vec<FileReport> {
    paths
        .iter()
        .map(|p| match FldArray::read(p) {
            Ok(arr) => FileReport { path: p.clone(), kind: arr.meta("kind").ok().map(str::to_string), result: check(&arr) },
            Err(e) => FileReport { path: p.clone(), kind: None, result: Err(e) },
        })
        .collect()
}
