mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nvmdtd::analytic::{ber_variable_offset, optimal_threshold_empirical, reference_curves};
use nvmdtd::channel::{ChannelParams, NoiseModel};
use nvmdtd::dataset::write_dataset;
use nvmdtd::detectors::{calibrate, Detector, GenieDetector, NnDetector};
use nvmdtd::harness::{
    evaluate_point, run_sweep, simulate_recalibration_session, write_curve_csv, write_session_csv, write_sweep_csv,
    ModelSource, SweepSpec,
};
use nvmdtd::nn::{load_weights, save_weights, train, Model, ModelKind, Network};
use nvmdtd::rng::Purpose;

use config::{ConfigError, Reference, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "nvmdtd", version, about = "Read-channel detection lab for resistive memories")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; defaults are used for anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Use the full training budgets and 10^6 test blocks per point.
    #[arg(long, global = true)]
    paper_scale: bool,

    /// MLP weight file (or template), overriding the configuration.
    #[arg(long, global = true)]
    mlp_weights: Option<String>,

    /// RNN weight file (or template), overriding the configuration.
    #[arg(long, global = true)]
    rnn_weights: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a dataset of channel blocks.
    Generate,
    /// Train the configured network and save its weights and training curve.
    Train {
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Print the analytic thresholds and BERs of a channel.
    Analytic(AnalyticArgs),
    /// Monte-Carlo BER of the configured detectors on the configured channel.
    Eval,
    /// Run one DTD calibration on the configured channel.
    Dtd,
    /// Run the configured sweep.
    Sweep,
    /// Simulate a recalibration session on a drifting channel.
    Session,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct AnalyticArgs {
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    mu1: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    mu_b: Option<f64>,
    #[arg(long)]
    sigma_b_over_mu1: Option<f64>,
    #[arg(long, value_parser = parse_noise)]
    noise_model: Option<NoiseModel>,
}

fn parse_noise(s: &str) -> std::result::Result<NoiseModel, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown noise model `{s}` (expected gaussian or centered_beta)"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use nvmdtd::Error as E;
    for cause in e.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::InvalidParameter(_) | E::UnsupportedModel(_) | E::Config(_) | E::Shape { .. } | E::Empty(_) => 2,
                E::NoRoot(_) | E::Divergence { .. } => 3,
                E::MissingAsset(_) | E::WeightFormat(_) | E::DatasetFormat(_) => 4,
                _ => 1,
            };
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    let model = match cli.command {
        Command::Train { model } => model,
        _ => None,
    };
    let mut cfg = RunConfig::load(common.config.as_deref(), common.paper_scale, model)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if common.threads == 0 {
        return Err(ConfigError::new("--threads must be at least 1").into());
    }
    cfg.train.threads = common.threads;
    if let Some(w) = common.mlp_weights {
        cfg.weights.mlp = Some(w);
    }
    if let Some(w) = common.rnn_weights {
        cfg.weights.rnn = Some(w);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build_global()
        .context("starting worker threads")?;

    if let Command::Analytic(args) = &cli.command {
        return cmd_analytic(&mut cfg, args, common.out.as_deref());
    }
    let out = common
        .out
        .ok_or_else(|| ConfigError::new("--out is required for this command"))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.json"), cfg.to_json())?;
    match cli.command {
        Command::Generate => cmd_generate(&cfg, &out),
        Command::Train { .. } => cmd_train(&cfg, &out),
        Command::Eval => cmd_eval(&cfg, &out),
        Command::Dtd => cmd_dtd(&cfg, &out),
        Command::Sweep => cmd_sweep(&cfg, &out),
        Command::Session => cmd_session(&cfg, &out),
        Command::Analytic(_) => unreachable!(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = cfg.channel.params()?;
    let g = &cfg.generate;
    let blocks = params
        .sampler()?
        .generate(g.block_len, g.blocks, cfg.seed, Purpose::Test, 0);
    let path = out.join("dataset.txt");
    write_dataset(create(&path)?, &params, &blocks)?;
    println!("wrote {} blocks of {} bits to {}", g.blocks, g.block_len, path.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = cfg.channel.params()?;
    let outcome = train(cfg.model, &params, &cfg.train)?;
    let weights = out.join(format!("{}.weights", cfg.model));
    save_weights(&outcome.model, cfg.train.seed, &weights)?;
    let curve = out.join(format!("{}_curve.csv", cfg.model));
    write_curve_csv(create(&curve)?, &outcome.curve)?;
    println!("initial validation BER {:.6}", outcome.initial_val_ber);
    for s in &outcome.curve {
        println!("epoch {:>3}  loss {:.6}  val_ber {:.6}", s.epoch, s.train_loss, s.val_ber);
    }
    println!("wrote {} and {}", weights.display(), curve.display());
    Ok(())
}

fn cmd_analytic(cfg: &mut RunConfig, args: &AnalyticArgs, out: Option<&Path>) -> Result<()> {
    let c = &mut cfg.channel;
    if let Some(r) = args.ratio {
        c.ratio = r;
    }
    c.mu0 = args.mu0.unwrap_or(c.mu0);
    c.mu1 = args.mu1.unwrap_or(c.mu1);
    c.sigma0 = args.sigma0.or(c.sigma0);
    c.sigma1 = args.sigma1.or(c.sigma1);
    c.offset_mu_b = args.mu_b.unwrap_or(c.offset_mu_b);
    c.sigma_b_over_mu1 = args.sigma_b_over_mu1.unwrap_or(c.sigma_b_over_mu1);
    c.noise_model = args.noise_model.unwrap_or(c.noise_model);
    let params = c.params()?;
    let empirical = match params.noise_model {
        NoiseModel::Gaussian => None,
        _ => Some(optimal_threshold_empirical(
            &params,
            cfg.eval.block_len,
            cfg.eval.empirical_blocks,
            cfg.seed,
        )?),
    };
    let curves = reference_curves(&params, empirical)?;
    let mut text = String::from("curve,r_th,ber,method\n");
    for (name, r) in [("curve1", &curves.curve1), ("curve2", &curves.curve2), ("curve3", &curves.curve3)] {
        let ber = if r.ber.is_finite() { r.ber.to_string() } else { String::new() };
        text.push_str(&format!("{name},{},{ber},{}\n", r.r_th, r.method));
        for w in &r.warnings {
            eprintln!("warning: {name}: {w}");
        }
    }
    print!("{text}");
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join("config.json"), cfg.to_json())?;
        fs::write(out.join("analytic.csv"), text)?;
    }
    Ok(())
}

/// Loads weights named by the configuration.
struct WeightSource<'a> {
    cfg: &'a RunConfig,
}

impl ModelSource for WeightSource<'_> {
    fn model(&self, kind: ModelKind, params: &ChannelParams) -> nvmdtd::Result<Model> {
        let path = self
            .cfg
            .weights
            .path_for(kind, params)
            .ok_or_else(|| nvmdtd::Error::MissingAsset(format!("no {kind} weight path configured")))?;
        let loaded = load_weights(&path)?;
        if loaded.model.kind() != kind {
            return Err(nvmdtd::Error::WeightFormat(format!(
                "{} holds a {} network, expected {kind}",
                path.display(),
                loaded.model.kind()
            )));
        }
        Ok(loaded.model)
    }
}

fn eval_spec(cfg: &RunConfig) -> SweepSpec {
    let e = &cfg.eval;
    SweepSpec {
        detectors: e.detectors.clone(),
        blocks_per_point: e.blocks,
        block_len: e.block_len,
        dtd_blocks: e.dtd_blocks,
        empirical_blocks: e.empirical_blocks,
        quantizer: e.quantizer,
        seed: cfg.seed,
        noise_model: cfg.channel.noise_model,
        ..SweepSpec::default()
    }
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = cfg.channel.params()?;
    let spec = eval_spec(cfg);
    let source = WeightSource { cfg };
    // Unlike sweeps, a single evaluation fails outright on missing weights.
    for det in &spec.detectors {
        if let Some(kind) = nn_kind(det.as_str()) {
            source.model(kind, &params)?;
        }
    }
    let rows = evaluate_point(&spec, &params, &source, cfg.seed)?;
    let path = out.join("eval.csv");
    write_sweep_csv(create(&path)?, &rows)?;
    for r in &rows {
        println!("{:<16} r_th {:<22} ber {}", r.detector, opt(r.r_th), opt(r.ber()));
    }
    Ok(())
}

fn nn_kind(detector: &str) -> Option<ModelKind> {
    match detector {
        "mlp" | "dtd_mlp" => Some(ModelKind::Mlp),
        "rnn" | "dtd_rnn" => Some(ModelKind::Rnn),
        _ => None,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn reference_detector(cfg: &RunConfig, reference: Reference, params: &ChannelParams) -> Result<Box<dyn Detector>> {
    let kind = match reference {
        Reference::Genie => return Ok(Box::new(GenieDetector)),
        Reference::Mlp => ModelKind::Mlp,
        Reference::Rnn => ModelKind::Rnn,
    };
    let model = WeightSource { cfg }.model(kind, params)?;
    let mut d = NnDetector::new(kind.as_str(), model);
    d.quantizer = cfg.eval.quantizer;
    Ok(Box::new(d))
}

fn cmd_dtd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = cfg.channel.params()?;
    let reference = reference_detector(cfg, cfg.eval.reference, &params)?;
    let blocks = params
        .sampler()?
        .generate(cfg.eval.block_len, cfg.eval.dtd_blocks, cfg.seed, Purpose::Calibration, 0);
    let res = calibrate(reference.as_ref(), &blocks)?;
    let (opt_r, opt_ber, ber_adj) = match params.noise_model {
        NoiseModel::Gaussian => {
            let o = nvmdtd::analytic::optimal_threshold_bisection(&params)?;
            (
                o.r_th.to_string(),
                o.ber.to_string(),
                ber_variable_offset(res.r_adj, &params)?.to_string(),
            )
        }
        _ => Default::default(),
    };
    let text = format!(
        "reference,blocks,r_adj,objective,interval_lo,interval_hi,optimum_r_th,optimum_ber,ber_at_r_adj\n\
         {},{},{},{},{},{},{opt_r},{opt_ber},{ber_adj}\n",
        reference.name(),
        cfg.eval.dtd_blocks,
        res.r_adj,
        res.objective,
        res.interval.0,
        res.interval.1,
    );
    fs::write(out.join("dtd.csv"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = run_sweep(&cfg.sweep, &WeightSource { cfg })?;
    let path = out.join("sweep.csv");
    write_sweep_csv(create(&path)?, &rows)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("wrote {} rows to {}", rows.len(), path.display());
    if failed > 0 {
        eprintln!("warning: {failed} rows could not be evaluated");
    }
    Ok(())
}

fn cmd_session(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sched = &cfg.session.schedule;
    let first = sched
        .segments
        .first()
        .ok_or_else(|| ConfigError::new("session.schedule.segments must not be empty"))?;
    let reference = reference_detector(cfg, cfg.session.reference, &first.params)?;
    let log = simulate_recalibration_session(sched, reference.as_ref())?;
    write_session_csv(create(&out.join("session.csv"))?, &log)?;
    let mut json = create(&out.join("session.json"))?;
    serde_json::to_writer_pretty(&mut json, &log)?;
    writeln!(json)?;
    json.flush()?;
    for s in &log.segments {
        println!(
            "segment {} (epoch {}): triggers {}, r_th {:.6} -> {:.6}, ber before {:.3e}, after {:.3e}",
            s.segment, s.start_epoch, s.triggers, s.r_th_start, s.r_th_end, s.before.ber, s.after.ber
        );
    }
    println!("{} of {} blocks decoded by the reference detector", log.nn_blocks, log.total_blocks);
    Ok(())
}
