use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use mpi_lgd::compositor::render;
use mpi_lgd::engine::Ablation;
use mpi_lgd::gradcheck;
use mpi_lgd::io::{self, BitDepth};
use mpi_lgd::lgd::{solve, SolverConfig, UpdateMode};
use mpi_lgd::metrics::{psnr, ssim};
use mpi_lgd::mpi::depth_visualization;
use mpi_lgd::network::UpdateNetwork;
use mpi_lgd::scene::{generate_scene, render_scene_view, render_views, RigSpec, SceneSpec};
use mpi_lgd::tiling::{tiled_render, MemoryMeter, MemoryReport};
use mpi_lgd::training::{sample_target_center, train, TrainConfig};
use mpi_lgd::{Error, Result};

#[derive(Parser)]
#[command(name = "mpi-lgd", version, about = "Multiplane image reconstruction by learned gradient descent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct an MPI from posed views.
    Solve {
        #[arg(long)]
        views: PathBuf,
        /// Camera list; defaults to `<views>/cameras.json`.
        #[arg(long)]
        cameras: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        planes: usize,
        #[arg(long, default_value_t = 1.0)]
        near: f64,
        #[arg(long, default_value_t = 100.0)]
        far: f64,
        #[arg(long, default_value = "learned")]
        mode: UpdateMode,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Step size of classic mode.
        #[arg(long, default_value_t = 0.05)]
        step_size: f64,
        /// Gradient components fed to the network, e.g. RTA or R-A.
        #[arg(long, default_value = "RTA")]
        ablation: String,
        #[arg(long)]
        tile_size: Option<usize>,
        #[arg(long)]
        memory_report: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        bit_depth: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an MPI into a camera.
    Render {
        #[arg(long)]
        mpi: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace plane colors by a false-color depth ramp.
        #[arg(long)]
        depth_viz: bool,
        #[arg(long)]
        tile_size: Option<usize>,
        #[arg(long)]
        memory_report: Option<PathBuf>,
    },
    /// Train update networks on synthetic scenes.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Line-delimited JSON log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Overrides the seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// SSIM and PSNR of an MPI's renders against posed views.
    Eval {
        #[arg(long)]
        mpi: PathBuf,
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        cameras: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic scene: input views, held-out targets and cameras.
    MakeScene {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        rows: usize,
        #[arg(long, default_value_t = 2)]
        cols: usize,
        /// Held-out target poses.
        #[arg(long, default_value_t = 2)]
        targets: usize,
    },
    /// Copy an MPI into a viewer bundle.
    ExportViewer {
        #[arg(long)]
        mpi: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn cameras_path(views: &Path, cameras: Option<PathBuf>) -> PathBuf {
    cameras.unwrap_or_else(|| views.join("cameras.json"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct ViewScore {
    index: usize,
    ssim: f64,
    psnr: f64,
}

#[derive(Serialize)]
struct EvalReport {
    views: Vec<ViewScore>,
    mean_ssim: f64,
    mean_psnr: f64,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve {
            views,
            cameras,
            planes,
            near,
            far,
            mode,
            weights,
            iterations,
            step_size,
            ablation,
            tile_size,
            memory_report,
            bit_depth,
            out,
        } => {
            let bit_depth = BitDepth::from_bits(bit_depth)?;
            let input = io::load_views(&views, &cameras_path(&views, cameras))?;
            let net = match (mode, &weights) {
                (UpdateMode::Learned, Some(p)) => Some(UpdateNetwork::load(p)?),
                (UpdateMode::Learned, None) => {
                    return Err(Error::InvalidParameter("learned mode needs --weights".into()))
                }
                (UpdateMode::ClassicGd, _) => None,
            };
            let iterations = match (&net, iterations) {
                (Some(n), Some(i)) if i != n.len() => {
                    return Err(Error::InvalidParameter(format!(
                        "--iterations {i} but the weights hold {} iterations",
                        n.len()
                    )))
                }
                (Some(n), _) => n.len(),
                (None, i) => i.unwrap_or(SolverConfig::default().iterations),
            };
            let config = SolverConfig {
                iterations,
                step_size,
                mode,
                planes,
                near,
                far,
                extra_channels: net.as_ref().map_or(0, |n| n.extra_channels),
                ablation: Ablation::parse(&ablation)?,
            };
            let geometry = config.geometry_for(&input)?;
            let meter = MemoryMeter::new();
            let mpi = solve(&input, &geometry, &config, net.as_ref(), tile_size, &meter)?;
            io::save_mpi(&out, &mpi, bit_depth)?;
            if let Some(path) = memory_report {
                let untiled = match tile_size {
                    Some(_) => {
                        let m = MemoryMeter::new();
                        solve(&input, &geometry, &config, net.as_ref(), None, &m)?;
                        Some(m.peak())
                    }
                    None => None,
                };
                let report = MemoryReport {
                    tile_size,
                    tiles: tile_size.map_or(1, |t| mpi_lgd::image::Rect::tiles(mpi.width(), mpi.height(), t).len()),
                    peak_bytes: meter.peak(),
                    untiled_peak_bytes: untiled,
                    ratio: untiled.map(|u| meter.peak() as f64 / u as f64),
                };
                write_json(&path, &report)?;
            }
        }
        Command::Render {
            mpi,
            camera,
            out,
            depth_viz,
            tile_size,
            memory_report,
        } => {
            let mut mpi = io::load_mpi(&mpi)?;
            if depth_viz {
                mpi = depth_visualization(&mpi);
            }
            let camera = io::load_camera(&camera)?;
            let meter = MemoryMeter::new();
            let image = match tile_size {
                Some(t) => tiled_render(&mpi, &camera, t, &meter)?,
                None => render(&mpi, &camera)?,
            };
            io::write_png(&out, &image, BitDepth::Eight)?;
            if let Some(path) = memory_report {
                let report = MemoryReport {
                    tile_size,
                    tiles: tile_size.map_or(1, |t| mpi_lgd::image::Rect::tiles(camera.width(), camera.height(), t).len()),
                    peak_bytes: meter.peak(),
                    untiled_peak_bytes: None,
                    ratio: None,
                };
                write_json(&path, &report)?;
            }
        }
        Command::Train {
            config,
            out,
            log,
            checkpoints,
            seed,
        } => {
            let mut cfg: TrainConfig = serde_json::from_str(&fs::read_to_string(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log.jsonl");
                PathBuf::from(p)
            });
            let mut log_file = std::io::BufWriter::new(fs::File::create(&log_path)?);
            if let Some(dir) = &checkpoints {
                fs::create_dir_all(dir)?;
            }
            let trained = train(&cfg, Some(&mut log_file), checkpoints.as_deref())?;
            trained.weights.save(&out)?;
        }
        Command::Eval {
            mpi,
            views,
            cameras,
            report,
        } => {
            let mpi = io::load_mpi(&mpi)?;
            let input = io::load_views(&views, &cameras_path(&views, cameras))?;
            let mut scores = Vec::new();
            for (index, v) in input.iter().enumerate() {
                let r = render(&mpi, &v.camera)?;
                scores.push(ViewScore {
                    index,
                    ssim: ssim(&r, &v.image)?,
                    psnr: psnr(&r, &v.image)?,
                });
            }
            let n = scores.len() as f64;
            let rep = EvalReport {
                mean_ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
                mean_psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
                views: scores,
            };
            println!("mean SSIM {:.4}  mean PSNR {:.2} dB", rep.mean_ssim, rep.mean_psnr);
            write_json(&report, &rep)?;
        }
        Command::Gradcheck { seed } => {
            let mut failed = false;
            for r in gradcheck::run_all(seed)? {
                println!(
                    "{} {}: worst rel err {:.3e} (tolerance {:.0e}, {} parameters)",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.worst_rel_err,
                    r.tolerance,
                    r.parameters
                );
                failed |= !r.passed;
            }
            if failed {
                return Err(Error::NonFinite("gradient check failed".into()));
            }
        }
        Command::MakeScene {
            seed,
            out,
            size,
            rows,
            cols,
            targets,
        } => {
            let spec = SceneSpec {
                rig: RigSpec {
                    rows,
                    cols,
                    width: size,
                    height: size,
                    focal: size as f64 * 0.8,
                    ..RigSpec::default()
                },
                ..SceneSpec::default()
            };
            let scene = generate_scene(seed, &spec)?;
            let cams = spec.rig.cameras()?;
            let views = render_views(&scene, &cams)?;
            let view_dir = out.join("views");
            io::save_views(&view_dir, &views, &view_dir.join("cameras.json"))?;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let target_dir = out.join("targets");
            let target_views = (0..targets)
                .map(|_| {
                    let c = spec.rig.camera_at(sample_target_center(&cams, 0.06, 0.07, &mut rng))?;
                    let image = render_scene_view(&scene, &c);
                    mpi_lgd::geometry::View::new(c, image)
                })
                .collect::<Result<Vec<_>>>()?;
            io::save_views(&target_dir, &target_views, &target_dir.join("cameras.json"))?;
            write_json(&out.join("scene.json"), &scene)?;
        }
        Command::ExportViewer { mpi, out } => io::export_viewer(&mpi, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
