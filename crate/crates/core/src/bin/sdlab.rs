use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spectral_decoupling::experiment::{
    self, bench_report, emit_report, evaluate_predictions, predictions_table, read_predictions, CsvTable,
    Equation, ExperimentConfig, ExperimentKind, Report, SearchSpace,
};
use spectral_decoupling::perturb::{run_sweep, PerturbationSweep, SweepKind};
use spectral_decoupling::specnet::{checkpoint, Split};
use spectral_decoupling::stain::{self, StainReference};
use spectral_decoupling::synthgen::{export_splits, load_manifest, make_cutout_dataset};
use spectral_decoupling::tiler::{plan_grid, save_tiles, BackgroundFilter};
use spectral_decoupling::{Error, Image, Result};

#[derive(Parser)]
#[command(name = "sdlab", version, about = "Spectral decoupling experiments and histology robustness tools")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; an experiment's seed list becomes `seed, seed + 1, …`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory or file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed; writes checkpoints, loss traces and test predictions.
    Train,
    /// Grid search over the penalty coefficients on the validation split.
    Gridsearch {
        #[arg(long, value_parser = parse_equation)]
        equation: Option<Equation>,
        /// Evaluate at most this many grid points.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Weight decay vs spectral decoupling vs control on the cutout benchmark.
    Cutout,
    /// Blur, sharpening and stain-intensity sweeps for three training arms.
    Robustness,
    /// Accuracy with and without stain normalization on stain-shifted tiles.
    StainCompare,
    /// Metrics, bootstrap intervals and DeLong tests from a predictions CSV.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Also write the ROC curve as CSV and SVG.
        #[arg(long)]
        roc: bool,
        #[arg(long, default_value_t = 1000)]
        n_boot: usize,
    },
    /// Cut an image into overlapping tiles, dropping background.
    Tile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1024)]
        size: usize,
        #[arg(long, default_value_t = 0.2)]
        overlap: f64,
        #[arg(long, default_value_t = 0.1)]
        min_tissue: f64,
        #[arg(long, default_value_t = 0.05)]
        saturation: f64,
    },
    /// Macenko stain separation, intensity modification and normalization.
    Stain {
        #[command(subcommand)]
        action: StainAction,
    },
    /// Perturbation sweeps and single perturbations.
    Perturb {
        #[command(subcommand)]
        action: PerturbAction,
    },
    /// Logit-penalty vs Macenko throughput.
    Bench,
    /// Export the configured synthetic dataset as PNGs plus a manifest.
    Synth,
}

#[derive(Subcommand)]
enum StainAction {
    /// Write haematoxylin-only and eosin-only renderings.
    Separate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Scale haematoxylin and eosin concentrations.
    Modify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        m_h: f64,
        #[arg(long, default_value_t = 1.0)]
        m_e: f64,
    },
    /// Map an image onto a reference stain appearance.
    Normalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Estimate a reference from one or more images.
    Reference {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
    },
    /// Logit-penalty vs Macenko throughput.
    Bench,
}

#[derive(Subcommand)]
enum PerturbAction {
    /// Balanced accuracy of saved models over severity levels.
    Sweep {
        #[arg(long, value_parser = parse_kind)]
        kind: SweepKind,
        /// Comma-separated levels (default: the standard sweep).
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        /// Checkpoints, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<PathBuf>,
        /// Dataset manifest (`path,label,...`).
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write a line chart here.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Apply one perturbation to one image.
    Apply {
        #[arg(long, value_parser = parse_kind)]
        kind: SweepKind,
        #[arg(long)]
        level: f64,
        #[arg(long)]
        input: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<SweepKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_equation(s: &str) -> std::result::Result<Equation, String> {
    match s {
        "eq1" => Ok(Equation::Eq1),
        "eq2" => Ok(Equation::Eq2),
        other => Err(format!("unknown equation `{other}` (eq1 or eq2)")),
    }
}

impl Global {
    fn experiment(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::for_kind(kind),
        };
        cfg.kind = kind;
        if let Some(seed) = self.seed {
            cfg.rebase_seeds(seed);
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_file(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn finish(report: &Report, dir: &Path) -> Result<()> {
    let files = emit_report(report, dir)?;
    print!("{}", report.summary);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn write_image(img: &Image, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    img.save_png(path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(jobs) = g.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Train => {
            let cfg = g.experiment(ExperimentKind::Gridsearch)?;
            let runs = experiment::run_training(&cfg)?;
            std::fs::create_dir_all(&cfg.out)?;
            let mut report = Report {
                tables: vec![predictions_table(&runs)],
                ..Report::default()
            };
            for r in &runs {
                checkpoint::save(&r.model, cfg.out.join(format!("model_seed{}.ckpt", r.seed)))?;
                let mut t = CsvTable::new(&format!("trace_seed{}", r.seed), &["epoch", "lr", "train_loss", "val_metric"]);
                for e in &r.trace.records {
                    t.push(vec![
                        e.epoch.to_string(),
                        e.lr.to_string(),
                        e.train_loss.to_string(),
                        e.val_metric.map(|v| v.to_string()).unwrap_or_default(),
                    ]);
                }
                report.tables.push(t);
                let last = r.trace.records.last().and_then(|e| e.val_metric).unwrap_or(f64::NAN);
                report.summary.push_str(&format!("seed {}: final validation balanced accuracy {last:.4}\n", r.seed));
            }
            finish(&report, &cfg.out)
        }
        Command::Gridsearch { equation, budget } => {
            let mut cfg = g.experiment(ExperimentKind::Gridsearch)?;
            if let Some(eq) = equation {
                cfg.search = SearchSpace {
                    equation: eq,
                    ..cfg.search
                };
            }
            if budget.is_some() {
                cfg.search.budget = budget;
            }
            cfg.validate()?;
            finish(&experiment::run_gridsearch(&cfg)?.report()?, &cfg.out)
        }
        Command::Cutout => {
            let cfg = g.experiment(ExperimentKind::Cutout)?;
            finish(&experiment::run_cutout_experiment(&cfg)?.report()?, &cfg.out)
        }
        Command::Robustness => {
            let cfg = g.experiment(ExperimentKind::Robustness)?;
            finish(&experiment::run_robustness_experiment(&cfg)?.report()?, &cfg.out)
        }
        Command::StainCompare => {
            let cfg = g.experiment(ExperimentKind::StainNormComparison)?;
            let r = experiment::run_stain_norm_comparison(&cfg)?;
            finish(&r.report()?, &cfg.out)?;
            r.reference.save(cfg.out.join("reference.txt"))
        }
        Command::Bench | Command::Stain { action: StainAction::Bench } => {
            let cfg = g.experiment(ExperimentKind::Bench)?;
            finish(&bench_report(&experiment::run_bench(&cfg)?), &cfg.out)
        }
        Command::Evaluate { predictions, roc, n_boot } => {
            let sets = read_predictions(std::fs::File::open(&predictions).map_err(Error::file(&predictions))?)?;
            let seed = g.seed.unwrap_or(0);
            finish(&evaluate_predictions(&sets, n_boot, seed, roc)?, &g.out_file("evaluation"))
        }
        Command::Tile {
            input,
            size,
            overlap,
            min_tissue,
            saturation,
        } => {
            let img = Image::load(&input)?;
            let grid = plan_grid(img.width(), img.height(), size, overlap)?;
            let filter = BackgroundFilter {
                saturation_threshold: saturation,
                min_tissue,
            };
            let out = g.out_file("tiles");
            let records = save_tiles(&img, &grid, &filter, &out)?;
            let kept = records.iter().filter(|r| r.kept).count();
            println!("{kept} of {} tiles kept in {}", records.len(), out.display());
            Ok(())
        }
        Command::Stain { action } => match action {
            StainAction::Separate { input } => {
                let img = Image::load(&input)?;
                let stains = stain::estimate_stain_matrix(&stain::rgb_to_od(&img)?, stain::DEFAULT_BETA, stain::DEFAULT_ALPHA)?;
                let conc = stain::separate(&img, &stains)?;
                let dir = g.out_file("stains");
                write_image(&stain::recombine(&stains, &conc.scaled([1.0, 0.0])), &dir.join("haematoxylin.png"))?;
                write_image(&stain::recombine(&stains, &conc.scaled([0.0, 1.0])), &dir.join("eosin.png"))
            }
            StainAction::Modify { input, m_h, m_e } => {
                let img = stain::modify_intensity(&Image::load(&input)?, m_h, m_e)?;
                write_image(&img, &g.out_file("modified.png"))
            }
            StainAction::Normalize { input, reference } => {
                let reference = StainReference::load(reference)?;
                let img = stain::normalize_to_reference(&Image::load(&input)?, &reference)?;
                write_image(&img, &g.out_file("normalized.png"))
            }
            StainAction::Reference { input } => {
                let images: Vec<Image> = input.iter().map(Image::load).collect::<Result<_>>()?;
                let out = g.out_file("reference.txt");
                StainReference::from_images(&images)?.save(&out)?;
                println!("wrote {}", out.display());
                Ok(())
            }
            StainAction::Bench => unreachable!("handled above"),
        },
        Command::Perturb { action } => match action {
            PerturbAction::Sweep {
                kind,
                levels,
                models,
                manifest,
                split,
                svg,
            } => {
                let sweep = match levels {
                    Some(l) => PerturbationSweep::new(kind, l)?,
                    None => PerturbationSweep::standard(kind),
                };
                let models = models.iter().map(checkpoint::load).collect::<Result<Vec<_>>>()?;
                let data = load_manifest(&manifest, Some(split.parse::<Split>()?))?;
                let table = run_sweep(&models, &data, &sweep)?;
                let out = g.out_file("sweep.csv");
                if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)?;
                }
                table.write_csv(std::fs::File::create(&out)?)?;
                println!("wrote {}", out.display());
                if let Some(svg_path) = svg {
                    let t = CsvTable::read(&out)?;
                    let chart = experiment::Chart::line("sweep", &format!("Balanced accuracy under {}", kind.as_str()), &t, "level", "mean_balanced_accuracy", "kind")?;
                    std::fs::write(&svg_path, chart.svg)?;
                    println!("wrote {}", svg_path.display());
                }
                Ok(())
            }
            PerturbAction::Apply { kind, level, input } => {
                let sweep = PerturbationSweep::new(kind, vec![level])?;
                let img = sweep.apply(&Image::load(&input)?, level)?;
                write_image(&img, &g.out_file("perturbed.png"))
            }
        },
        Command::Synth => {
            let cfg = g.experiment(ExperimentKind::Gridsearch)?;
            let d = &cfg.data;
            let seed = cfg.seeds[0];
            match d.kind {
                experiment::DatasetKind::Cutout => make_cutout_dataset(&d.image, &d.cutout, d.n_train, d.n_test, seed)?.export(&cfg.out)?,
                experiment::DatasetKind::He => {
                    let (train, val, test) = experiment::build_splits(&cfg, seed)?;
                    export_splits(&cfg.out, &[(&train, None), (&val, None), (&test, None)])?;
                }
            }
            println!("wrote {}", cfg.out.join("manifest.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("sdlab: error code=usage message={first:?}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdlab: error code={} message={:?}", e.code(), e.to_string());
            ExitCode::from(1)
        }
    }
}
