//! `masim`: scenario generation, estimation, selection, beamforming and
//! sweeps from a single JSON config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use masim_core::beamforming::{sum_rate, BeamformerConfig};
use masim_core::estimation::{
    build_ce_pattern, build_dictionary, estimate_channel, nmse, synthesize_pilots, PatternKind, PilotConfig,
};
use masim_core::experiments::{
    design_beams, parse_trial_csv, run_sweep, select_positions_traced, summarize, summary_csv, BeamformerKind,
    ExperimentConfig, ExperimentKind, ScenarioParams, SelectorKind, SweepAxis,
};
use masim_core::io::{read_tensor, unique_path, write_solution, write_tensor, SolutionSidecar};
use masim_core::scenario::{ChannelTensor, Scenario};
use masim_core::seed::{stream_rng, Stream};
use masim_core::selection::{apply_assignment, CeoParams, PositionAssignment};

#[derive(Parser, Debug)]
#[command(name = "masim", version, about = "Movable-antenna multiuser OFDM simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config (ExperimentConfig field names)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, env = "MASIM_OUT", default_value = ".")]
    out: PathBuf,
    /// Overrides `base_seed` from the config
    #[arg(long, global = true, env = "MASIM_SEED")]
    seed: Option<u64>,
    /// Worker threads for sweeps (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a scenario and write it as JSON
    Gen,
    /// Estimate CSI for a scenario; prints the NMSE
    Estimate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Choose antenna positions
    Select {
        #[arg(long)]
        scenario: PathBuf,
        /// Channel tensor to select on; the true channel when omitted
        #[arg(long)]
        csi: Option<PathBuf>,
    },
    /// Design beamformers for an assignment; prints the sum rate
    Beamform {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        /// Channel tensor the transmitter knows; the true channel when omitted
        #[arg(long)]
        csi: Option<PathBuf>,
    },
    /// Run an experiment sweep
    Sweep,
    /// Summarize a per-trial CSV
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn default_snr() -> Option<f64> {
    Some(10.0)
}

fn default_data_snr() -> f64 {
    10.0
}

fn default_selection_subcarriers() -> usize {
    4
}

fn default_refine_budget() -> usize {
    200
}

fn default_limit() -> u64 {
    100_000
}

fn default_wmmse_iterations() -> usize {
    100
}

fn default_wmmse_tolerance() -> f64 {
    1e-4
}

/// Config for the single-run subcommands. Same field names as
/// `ExperimentConfig`; sweep-only fields are ignored and the first entry of
/// each scheme list is used.
#[derive(Debug, Deserialize)]
struct PipelineConfig {
    scenario: ScenarioParams,
    #[serde(default)]
    base_seed: u64,
    #[serde(default = "default_snr")]
    pilot_snr_db: Option<f64>,
    #[serde(default = "default_data_snr")]
    data_snr_db: f64,
    #[serde(default)]
    patterns: Vec<PatternKind>,
    #[serde(default)]
    selectors: Vec<SelectorKind>,
    #[serde(default)]
    beamformers: Vec<BeamformerKind>,
    #[serde(default = "default_wmmse_iterations")]
    wmmse_max_iterations: usize,
    #[serde(default = "default_wmmse_tolerance")]
    wmmse_tolerance: f64,
    #[serde(default = "default_selection_subcarriers")]
    selection_subcarriers: usize,
    #[serde(default = "default_refine_budget")]
    refine_budget: usize,
    #[serde(default)]
    ceo: CeoParams,
    #[serde(default = "default_limit")]
    exhaustive_limit: u64,
}

impl PipelineConfig {
    fn validate(&self) -> CliResult<()> {
        // J > N is an estimation failure, reported at run time
        let relaxed = ScenarioParams { j: 1, ..self.scenario.clone() };
        relaxed.validate().map_err(config_err)?;
        if let Some(p) = self.pilot_snr_db {
            if !p.is_finite() {
                return Err(config_err("pilot_snr_db must be finite"));
            }
        }
        if !self.data_snr_db.is_finite() {
            return Err(config_err("data_snr_db must be finite"));
        }
        if !(self.wmmse_tolerance > 0.0) {
            return Err(config_err("wmmse_tolerance must be positive"));
        }
        self.ceo.validate().map_err(config_err)
    }

    fn pattern(&self) -> PatternKind {
        self.patterns.first().copied().unwrap_or(PatternKind::UpaSubgrid)
    }

    fn selector(&self) -> SelectorKind {
        self.selectors.first().copied().unwrap_or(SelectorKind::Greedy)
    }

    fn beamformer(&self) -> BeamformerKind {
        self.beamformers.first().copied().unwrap_or(BeamformerKind::Wmmse)
    }

    fn beam_config(&self) -> BeamformerConfig {
        let mut bf = BeamformerConfig::from_snr_db(self.data_snr_db);
        bf.max_iterations = self.wmmse_max_iterations;
        bf.rate_tolerance = self.wmmse_tolerance;
        bf
    }

    /// The experiment-level view used by the shared selection code.
    fn as_experiment(&self) -> ExperimentConfig {
        let mut cfg =
            ExperimentConfig::new(ExperimentKind::Rate, self.scenario.clone(), SweepAxis::DataSnrDb, vec![self.data_snr_db]);
        cfg.selection_subcarriers = self.selection_subcarriers;
        cfg.ceo = self.ceo.clone();
        cfg.exhaustive_limit = self.exhaustive_limit;
        cfg
    }
}

struct Ctx {
    out: PathBuf,
    seed: Option<u64>,
    workers: usize,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Free path for `name` under the output directory.
    fn target(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| runtime(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(unique_path(&self.out.join(name)))
    }

    /// Free data path whose `.json` sidecar is free too.
    fn target_pair(&self, stem: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| runtime(format!("cannot create {}: {e}", self.out.display())))?;
        let mut i = 0usize;
        loop {
            let name = if i == 0 { stem.to_string() } else { format!("{stem}-{i}") };
            let data = self.out.join(format!("{name}.bin"));
            if !data.exists() && !self.out.join(format!("{name}.json")).exists() {
                return Ok(data);
            }
            i += 1;
        }
    }

    fn write_new(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.target(name)?;
        fs::write(&path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))
}

fn load_pipeline(path: Option<&Path>) -> CliResult<PipelineConfig> {
    let path = path.ok_or_else(|| config_err("--config is required"))?;
    let cfg: PipelineConfig =
        serde_json::from_str(&read_text(path)?).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    Scenario::from_json(&read_text(path)?).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn load_csi(path: Option<&Path>, scenario: &ChannelTensor) -> CliResult<ChannelTensor> {
    let Some(path) = path else {
        return Ok(scenario.clone());
    };
    let (tensor, _) = read_tensor(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if tensor.shape() != scenario.shape() {
        return Err(config_err(format!(
            "CSI shape {:?} does not match the scenario {:?}",
            tensor.shape(),
            scenario.shape()
        )));
    }
    Ok(tensor)
}

fn gen(ctx: &Ctx, cfg: &PipelineConfig) -> CliResult<()> {
    let seed = ctx.seed.unwrap_or(cfg.base_seed);
    let scenario = cfg
        .scenario
        .sample_scenario(&mut stream_rng(seed, Stream::Scenario), cfg.scenario.k)
        .map_err(runtime)?;
    let text = scenario.to_json().map_err(runtime)?;
    let path = ctx.write_new("scenario.json", &text)?;
    println!("{}", path.display());
    Ok(())
}

fn estimate(ctx: &Ctx, cfg: &PipelineConfig, scenario_path: &Path) -> CliResult<()> {
    let seed = ctx.seed.unwrap_or(cfg.base_seed);
    let scenario = load_scenario(scenario_path)?;
    let truth = scenario.tensor().map_err(runtime)?;
    let n = scenario.grid.len();
    if cfg.scenario.j > n {
        return Err(runtime(format!("J = {} exceeds N = {n}", cfg.scenario.j)));
    }
    let pattern =
        build_ce_pattern(&scenario.grid, cfg.scenario.j, cfg.pattern(), &mut stream_rng(seed, Stream::Pattern))
            .map_err(runtime)?;
    let pilots = match cfg.pilot_snr_db {
        Some(db) => PilotConfig::from_snr_db(db),
        None => PilotConfig::new(1.0, 0.0),
    }
    .map_err(config_err)?;
    let obs = synthesize_pilots(&truth, &pattern, &pilots, &mut stream_rng(seed, Stream::PilotNoise)).map_err(runtime)?;
    let dict = build_dictionary(&scenario.grid, cfg.scenario.g, scenario.ofdm.wavelength()).map_err(runtime)?;
    let paths = cfg.scenario.estimator_paths.unwrap_or(cfg.scenario.l);
    let est = estimate_channel(&obs, &dict, &pattern, paths, pilots.pilot_power()).map_err(runtime)?;
    let err = nmse(&est, &truth).map_err(runtime)?;

    let csi = ctx.target_pair("csi")?;
    write_tensor(&csi, &est, Some(seed)).map_err(runtime)?;
    let pat = ctx.write_new("pattern.json", &pattern.to_json().map_err(runtime)?)?;
    ctx.note(format!("wrote {} and {}", csi.display(), pat.display()));
    println!("{err}");
    Ok(())
}

fn select(ctx: &Ctx, cfg: &PipelineConfig, scenario_path: &Path, csi: Option<&Path>) -> CliResult<()> {
    let seed = ctx.seed.unwrap_or(cfg.base_seed);
    let scenario = load_scenario(scenario_path)?;
    let truth = scenario.tensor().map_err(runtime)?;
    let tensor = load_csi(csi, &truth)?;
    if cfg.scenario.m > tensor.num_positions() {
        return Err(config_err(format!("M = {} exceeds N = {}", cfg.scenario.m, tensor.num_positions())));
    }
    let pt = cfg.beam_config().transmit_power;
    let (assignment, trace) =
        select_positions_traced(&cfg.as_experiment(), &tensor, cfg.selector(), pt, seed).map_err(runtime)?;
    let path = ctx.write_new("assignment.json", &assignment.to_json().map_err(runtime)?)?;
    if let Some(trace) = trace {
        let t = ctx.write_new("ceo_trace.csv", &trace.to_csv())?;
        ctx.note(format!("wrote {}", t.display()));
    }
    ctx.note(format!("wrote {}", path.display()));
    let one_based: Vec<String> = assignment.positions().iter().map(|p| (p + 1).to_string()).collect();
    println!("{}", one_based.join(" "));
    Ok(())
}

fn beamform(ctx: &Ctx, cfg: &PipelineConfig, scenario_path: &Path, assignment: &Path, csi: Option<&Path>) -> CliResult<()> {
    let scenario = load_scenario(scenario_path)?;
    let truth = scenario.tensor().map_err(runtime)?;
    let known = load_csi(csi, &truth)?;
    let assignment = PositionAssignment::from_json(&read_text(assignment)?, truth.num_positions())
        .map_err(|e| config_err(format!("{}: {e}", assignment.display())))?;
    let bf = cfg.beam_config();
    let kind = cfg.beamformer();
    let known_eq = apply_assignment(&known, &assignment).map_err(runtime)?;
    let true_eq = apply_assignment(&truth, &assignment).map_err(runtime)?;
    let w = design_beams(&known_eq, kind, &bf, cfg.refine_budget).map_err(runtime)?;
    let rate = sum_rate(&true_eq, &w, bf.noise_power).map_err(runtime)?;

    let meta = SolutionSidecar {
        m: known_eq.num_antennas(),
        k: known_eq.num_users(),
        nc: known_eq.num_subcarriers(),
        pt: bf.transmit_power,
        sigma2: bf.noise_power,
        scheme: kind.to_string(),
        iterations: match kind {
            BeamformerKind::Parametric(t) => Some(t),
            BeamformerKind::ParametricRefined => Some(2),
            _ => None,
        },
    };
    let path = ctx.target_pair("beams")?;
    write_solution(&path, &w, &meta).map_err(runtime)?;
    ctx.note(format!("wrote {}", path.display()));
    println!("{rate}");
    Ok(())
}

fn sweep(ctx: &Ctx, path: Option<&Path>) -> CliResult<()> {
    let path = path.ok_or_else(|| config_err("--config is required"))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&read_text(path)?).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if let Some(seed) = ctx.seed {
        cfg.base_seed = seed;
    }
    cfg.validate().map_err(config_err)?;

    let trials_path = ctx.target("trials.csv")?;
    let file = File::create(&trials_path).map_err(|e| runtime(format!("cannot create {}: {e}", trials_path.display())))?;
    let mut w = BufWriter::new(file);
    ctx.note(format!("writing {}", trials_path.display()));
    let records = run_sweep(&cfg, ctx.workers, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    let summary = ctx.write_new("summary.csv", &summary_csv(&summarize(&records)))?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        ctx.note(format!("{failed} of {} rows errored", records.len()));
    }
    println!("{}", trials_path.display());
    println!("{}", summary.display());
    Ok(())
}

fn report(ctx: &Ctx, input: &Path) -> CliResult<()> {
    let records = parse_trial_csv(&read_text(input)?).map_err(|e| config_err(format!("{}: {e}", input.display())))?;
    let path = ctx.write_new("summary.csv", &summary_csv(&summarize(&records)))?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let ctx = Ctx { out: cli.common.out, seed: cli.common.seed, workers: cli.common.workers, quiet: cli.common.quiet };
    let config = cli.common.config.as_deref();
    match &cli.command {
        Command::Gen => gen(&ctx, &load_pipeline(config)?),
        Command::Estimate { scenario } => estimate(&ctx, &load_pipeline(config)?, scenario),
        Command::Select { scenario, csi } => select(&ctx, &load_pipeline(config)?, scenario, csi.as_deref()),
        Command::Beamform { scenario, assignment, csi } => {
            beamform(&ctx, &load_pipeline(config)?, scenario, assignment, csi.as_deref())
        }
        Command::Sweep => sweep(&ctx, config),
        Command::Report { input } => report(&ctx, input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = if f.code() == 2 { "config error" } else { "error" };
            let msg = match &f {
                Failure::Config(m) | Failure::Runtime(m) => m,
            };
            eprintln!("masim: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
