use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chainfit::basis_io::BasisSet;
use chainfit::dataset::{generate_dataset, generate_morph_stack};
use chainfit::error::{Error, Result};
use chainfit::fitting::{build_model, fit_stack, FitReport};
use chainfit::manifest::RunManifest;
use chainfit::outputs::{
    pca_export, report_error_map, rmsd_rows, write_error_map, write_pca, write_rmsd, AnalysisSummary,
    ErrorMapSummary, PcaSummary,
};
use chainfit::stack::ImageStack;
use chainfit::{ensure_dir, pdb, read_json, with_threads, write_json};
use chainfit_core::analysis::LatentBlock;
use chainfit_core::datagen::HeterogeneityRecipe;
use chainfit_core::{AtomicStructure, EnmConfig, FitConfig, FitMode, ImagingConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "chainfit", version, about = "Per-chain normal-mode and rigid-body fitting of simulated cryo-EM images")]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute elastic-network normal modes per chain (or for the whole structure).
    Nma(NmaArgs),
    /// Simulate train/val/test image stacks from a ground-truth structure.
    Simulate(SimulateArgs),
    /// Simulate a stack along a linear morph between two conformations.
    Morph(MorphArgs),
    /// Fit latents to every image of a stack.
    Fit(FitArgs),
    /// RMSD tables, latent PCA and error maps from fit reports.
    Analyze(AnalyzeArgs),
    /// Write fitted structures of a report as a multi-model PDB file.
    ExportPdb(ExportArgs),
}

#[derive(Args, Debug)]
struct StructureArgs {
    /// Input PDB file.
    #[arg(long)]
    pdb: PathBuf,
    /// Keep only atoms named CA.
    #[arg(long)]
    ca_only: bool,
}

impl StructureArgs {
    fn load(&self) -> Result<AtomicStructure> {
        load_structure(&self.pdb, self.ca_only)
    }
}

fn load_structure(path: &Path, ca_only: bool) -> Result<AtomicStructure> {
    let s = pdb::read_structure(path)?;
    Ok(if ca_only { s.ca_only()? } else { s })
}

#[derive(Args, Debug)]
struct NmaArgs {
    #[command(flatten)]
    structure: StructureArgs,
    /// Modes per chain (or in total with --whole).
    #[arg(long, default_value_t = 15)]
    k: usize,
    /// Spring cutoff in Å.
    #[arg(long, default_value_t = 15.0)]
    cutoff: f64,
    #[arg(long, default_value_t = 1.0)]
    spring_constant: f64,
    /// One basis for the whole structure instead of one per chain.
    #[arg(long)]
    whole: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ImagingArgs {
    /// Imaging configuration JSON; the flags below override its fields.
    #[arg(long)]
    imaging: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Å per pixel.
    #[arg(long)]
    pixel_size: Option<f64>,
    /// Atom blob standard deviation in Å.
    #[arg(long)]
    blob_sigma: Option<f64>,
    /// Gaussian PSF standard deviation in pixels.
    #[arg(long)]
    psf_sigma: Option<f64>,
}

impl ImagingArgs {
    fn resolve(&self) -> Result<ImagingConfig> {
        let mut cfg = match &self.imaging {
            Some(p) => read_json(p).map_err(config_error)?,
            None => ImagingConfig::default(),
        };
        if let Some(v) = self.image_size {
            cfg.image_size = v;
        }
        if let Some(v) = self.pixel_size {
            cfg.pixel_size = v;
        }
        if let Some(v) = self.blob_sigma {
            cfg.blob_sigma = v;
        }
        if self.psf_sigma.is_some() {
            cfg.psf_sigma = self.psf_sigma;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    structure: StructureArgs,
    /// Heterogeneity recipe JSON; defaults to the built-in recipe.
    #[arg(long)]
    recipe: Option<PathBuf>,
    #[command(flatten)]
    imaging: ImagingArgs,
    /// SNR in dB, overriding the recipe.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
    /// Disable noise regardless of the recipe.
    #[arg(long, conflicts_with = "snr")]
    no_noise: bool,
    /// Image counts as TRAIN,VAL,TEST, overriding the recipe.
    #[arg(long, value_parser = parse_counts)]
    counts: Option<[usize; 3]>,
    #[arg(long, env = "CHAINFIT_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_counts(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected TRAIN,VAL,TEST".into());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("bad count {p:?}"))?;
    }
    Ok(out)
}

#[derive(Args, Debug)]
struct MorphArgs {
    /// Endpoint at morph parameter 0.
    #[arg(long)]
    a: PathBuf,
    /// Endpoint at morph parameter 1.
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    ca_only: bool,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Number of images; image i shows step i mod steps.
    #[arg(long)]
    n: Option<u64>,
    #[command(flatten)]
    imaging: ImagingArgs,
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
    #[arg(long, env = "CHAINFIT_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Stack directory.
    #[arg(long)]
    stack: PathBuf,
    /// Source reference the fit deforms.
    #[command(flatten)]
    structure: StructureArgs,
    /// Fit configuration JSON; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of N_whole, cN, cR, cRT, full.
    #[arg(long)]
    mode: Option<FitMode>,
    /// Modes per chain (or in total for N_whole).
    #[arg(long)]
    k: Option<usize>,
    /// Spring cutoff in Å for the source modes.
    #[arg(long, default_value_t = 15.0)]
    cutoff: f64,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, env = "CHAINFIT_SEED")]
    seed: Option<u64>,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Fit report(s); each becomes one RMSD row.
    #[arg(long, required = true, num_args = 1..)]
    report: Vec<PathBuf>,
    /// Latent block for PCA of the first report, e.g. rigid:1 or alpha:2.
    #[arg(long)]
    pca: Option<LatentBlock>,
    /// Source reference used for the fit, to re-compose structures.
    #[arg(long)]
    pdb: Option<PathBuf>,
    #[arg(long)]
    ca_only: bool,
    /// Stack the first report was fitted on, for error maps and morph correlation.
    #[arg(long)]
    stack: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    structure: StructureArgs,
    /// Export at most this many structures.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Json { path, source } => Error::Config(format!("{}: {source}", path.display())),
        other => other,
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn finish(mut manifest: RunManifest, start: Instant, path: &Path) -> Result<()> {
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_json(path, &manifest)
}

fn manifest_beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}

fn cmd_nma(args: &NmaArgs, threads: usize) -> Result<()> {
    let start = Instant::now();
    let enm = EnmConfig {
        cutoff: args.cutoff,
        spring_constant: args.spring_constant,
        num_modes: args.k,
    };
    enm.validate()?;
    let structure = args.structure.load()?;
    let set = BasisSet::compute(&structure, &enm, args.whole)?;
    set.save(&args.out)?;
    let mut manifest = RunManifest::new(
        "nma",
        None,
        threads,
        serde_json::json!({ "enm": to_value(&enm), "whole": args.whole, "ca_only": args.structure.ca_only }),
    );
    manifest.add_input(&args.structure.pdb)?;
    finish(manifest, start, &args.out.join("manifest.json"))
}

fn cmd_simulate(args: &SimulateArgs, threads: usize) -> Result<()> {
    let start = Instant::now();
    let mut recipe: HeterogeneityRecipe = match &args.recipe {
        Some(p) => read_json(p).map_err(config_error)?,
        None => HeterogeneityRecipe::default(),
    };
    if let Some(s) = args.snr {
        recipe.snr_db = Some(s);
    }
    if args.no_noise {
        recipe.snr_db = None;
    }
    if let Some([train, val, test]) = args.counts {
        recipe.counts.train = train;
        recipe.counts.val = val;
        recipe.counts.test = test;
    }
    if let Some(seed) = args.seed {
        recipe.seed = seed;
    }
    recipe.validate()?;
    let imaging = args.imaging.resolve()?;
    let structure = args.structure.load()?;
    ensure_dir(&args.out)?;
    with_threads(threads, || generate_dataset(&structure, &recipe, &imaging, &args.out))??;
    let mut manifest = RunManifest::new(
        "simulate",
        Some(recipe.seed),
        threads,
        serde_json::json!({ "recipe": to_value(&recipe), "imaging": to_value(&imaging), "ca_only": args.structure.ca_only }),
    );
    manifest.add_input(&args.structure.pdb)?;
    if let Some(p) = &args.recipe {
        manifest.add_input(p)?;
    }
    finish(manifest, start, &args.out.join("manifest.json"))
}

fn cmd_morph(args: &MorphArgs, threads: usize) -> Result<()> {
    let start = Instant::now();
    if args.steps == 0 {
        return Err(Error::Config("--steps must be at least 1".into()));
    }
    let imaging = args.imaging.resolve()?;
    let seed = args.seed.unwrap_or(0);
    let n = args.n.unwrap_or(args.steps as u64);
    let a = load_structure(&args.a, args.ca_only)?;
    let b = load_structure(&args.b, args.ca_only)?;
    if !a.same_layout(&b) {
        return Err(Error::Data("morph endpoints differ in atoms or chains".into()));
    }
    with_threads(threads, || {
        generate_morph_stack(&a, &b, args.steps, n, &imaging, args.snr, seed, &args.out)
    })??;
    let mut manifest = RunManifest::new(
        "morph",
        Some(seed),
        threads,
        serde_json::json!({ "steps": args.steps, "n": n, "snr_db": args.snr, "imaging": to_value(&imaging), "ca_only": args.ca_only }),
    );
    manifest.add_input(&args.a)?;
    manifest.add_input(&args.b)?;
    finish(manifest, start, &args.out.join("manifest.json"))
}

fn cmd_fit(args: &FitArgs, threads: usize) -> Result<()> {
    let start = Instant::now();
    let mut config: FitConfig = match &args.config {
        Some(p) => read_json(p).map_err(config_error)?,
        None => FitConfig::default(),
    };
    if let Some(m) = args.mode {
        config.mode = m;
    }
    if let Some(k) = args.k {
        config.num_modes = k;
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.step_size {
        config.step_size = v;
    }
    if let Some(v) = args.restarts {
        config.restarts = v;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    let enm = EnmConfig {
        cutoff: args.cutoff,
        num_modes: config.num_modes,
        ..EnmConfig::default()
    };
    enm.validate()?;
    let source = args.structure.load()?;
    let stack = ImageStack::load(&args.stack)?;
    let model = build_model(&source, &enm, config.mode)?;
    let report = with_threads(threads, || fit_stack(&stack, &model, &enm, &config))??;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_json(&args.out, &report)?;
    let mut manifest = RunManifest::new(
        "fit",
        Some(config.seed),
        threads,
        serde_json::json!({ "fit": to_value(&config), "enm": to_value(&enm), "ca_only": args.structure.ca_only }),
    );
    manifest.add_input(&args.structure.pdb)?;
    manifest.add_input(&args.stack)?;
    if let Some(p) = &args.config {
        manifest.add_input(p)?;
    }
    finish(manifest, start, &manifest_beside(&args.out))
}

fn report_label(path: &Path, report: &FitReport) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem.is_empty() {
        report.mode.to_string()
    } else {
        stem
    }
}

fn cmd_analyze(args: &AnalyzeArgs, threads: usize) -> Result<()> {
    let start = Instant::now();
    let reports = args
        .report
        .iter()
        .map(|p| Ok((p.clone(), read_json::<FitReport>(p)?)))
        .collect::<Result<Vec<_>>>()?;
    if reports.iter().all(|(_, r)| r.entries.is_empty()) {
        return Err(Error::Data("fit reports contain no images".into()));
    }
    let source = args.pdb.as_ref().map(|p| load_structure(p, args.ca_only)).transpose()?;
    let stack = args.stack.as_ref().map(|p| ImageStack::load(p)).transpose()?;
    let (_, first) = &reports[0];
    let model = source
        .as_ref()
        .map(|s| build_model(s, &first.enm, first.mode))
        .transpose()?;
    let truth = stack.as_ref().and_then(|s| s.truth.as_ref());
    let pca = args.pca.map(|block| pca_export(first, block, truth)).transpose()?;
    let map = match (&model, truth) {
        (Some(m), Some(t)) => Some(report_error_map(first, m, t)?),
        _ => None,
    };

    ensure_dir(&args.out)?;
    let labelled: Vec<(String, FitReport)> = reports
        .iter()
        .map(|(p, r)| (report_label(p, r), r.clone()))
        .collect();
    let rows = rmsd_rows(&labelled);
    write_rmsd(&args.out, &rows)?;
    if let Some(export) = &pca {
        write_pca(&args.out, export, model.as_ref())?;
    }
    if let (Some(map), Some(model)) = (&map, &model) {
        write_error_map(&args.out, map, model.reference())?;
    }
    let summary = AnalysisSummary {
        rmsd: rows,
        pca: pca.as_ref().map(PcaSummary::of),
        error_map: map.as_ref().map(ErrorMapSummary::of),
    };
    write_json(&args.out.join("analysis.json"), &summary)?;
    let mut manifest = RunManifest::new(
        "analyze",
        None,
        threads,
        serde_json::json!({ "pca": args.pca.map(|b| b.to_string()), "ca_only": args.ca_only }),
    );
    for (p, _) in &reports {
        manifest.add_input(p)?;
    }
    if let Some(p) = &args.pdb {
        manifest.add_input(p)?;
    }
    finish(manifest, start, &args.out.join("manifest.json"))
}

fn cmd_export(args: &ExportArgs, threads: usize) -> Result<()> {
    let start = Instant::now();
    let report: FitReport = read_json(&args.report)?;
    let source = args.structure.load()?;
    let model = build_model(&source, &report.enm, report.mode)?;
    let limit = args.limit.unwrap_or(usize::MAX);
    let structures = report
        .successful()
        .filter_map(|e| e.latents.as_ref())
        .take(limit)
        .map(|l| Ok(model.compose(l)?))
        .collect::<Result<Vec<_>>>()?;
    if structures.is_empty() {
        return Err(Error::Data("report has no successful fits".into()));
    }
    pdb::save_models(&args.out, &structures)?;
    let mut manifest = RunManifest::new("export-pdb", None, threads, serde_json::json!({ "limit": args.limit }));
    manifest.add_input(&args.report)?;
    manifest.add_input(&args.structure.pdb)?;
    finish(manifest, start, &manifest_beside(&args.out))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Nma(a) => cmd_nma(a, cli.threads),
        Command::Simulate(a) => cmd_simulate(a, cli.threads),
        Command::Morph(a) => cmd_morph(a, cli.threads),
        Command::Fit(a) => cmd_fit(a, cli.threads),
        Command::Analyze(a) => cmd_analyze(a, cli.threads),
        Command::ExportPdb(a) => cmd_export(a, cli.threads),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
