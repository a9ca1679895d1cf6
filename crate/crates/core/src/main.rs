use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use lsr_mcts::evaluator::{ShimRequest, ShimResponse};
use lsr_mcts::generator::HttpConfig;
use lsr_mcts::harness::{
    render_report, run_experiment, write_dataset, EvaluatorSettings, GeneratorSettings, HarnessError, RunManifest,
    Strategy, TemplatePaths,
};
use lsr_mcts::model::TestCase;
use lsr_mcts::synthetic::{run_synthetic, synthetic_problem, SyntheticOptions};

#[derive(Parser)]
#[command(name = "lsr-mcts", version, about = "Line-level MCTS code generation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and print its pass@k table.
    Run(Box<RunArgs>),
    /// Write a dataset of synthetic grammar problems.
    Synth {
        #[arg(long, default_value_t = 20)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Answer one sandbox shim request on stdin with the synthetic
    /// interpreter. Lets the subprocess protocol run without Python.
    SyntheticShim,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    LsrMcts,
    DirectSampling,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Http,
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluatorArg {
    Synthetic,
    Shim,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON manifest; when given, the other run flags are ignored.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lsr-mcts")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 5)]
    samples_per_problem: usize,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 3, 5])]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value = "mock")]
    generator: GeneratorArg,
    #[arg(long, default_value = "http://localhost:8000/v1")]
    endpoint: String,
    #[arg(long, default_value = "default")]
    model: String,
    /// Expansion sampling temperature.
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-evaluation wall-clock limit.
    #[arg(long, default_value_t = 10.0)]
    timeout_secs: f64,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    rollouts: usize,
    #[arg(long, default_value_t = 4.0)]
    uct_c: f64,
    #[arg(long, default_value_t = 3)]
    max_children: usize,
    #[arg(long, default_value_t = 0.5)]
    refine_threshold: f64,
    /// Exploration weight of the final answer descent (defaults to --uct-c).
    #[arg(long)]
    final_descent_c: Option<f64>,
    /// Keep searching after a program passes every public test.
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long, value_enum, default_value = "synthetic")]
    evaluator: EvaluatorArg,
    /// Command launching the sandbox shim, whitespace separated.
    #[arg(long, default_value = "python3 -I sandbox_shim.py")]
    shim_command: String,
    #[arg(long)]
    workers: Option<usize>,
    /// Skip malformed dataset lines instead of failing.
    #[arg(long)]
    permissive: bool,
    /// Generation and refine prompt template files.
    #[arg(long, num_args = 2, value_names = ["GENERATION", "REFINE"])]
    templates: Option<Vec<PathBuf>>,
}

impl RunArgs {
    fn manifest(&self) -> Result<RunManifest, HarnessError> {
        if let Some(path) = &self.manifest {
            return RunManifest::from_file(path);
        }
        let dataset = self
            .dataset
            .clone()
            .expect("clap requires --dataset without --manifest");
        let mut m = RunManifest::new(dataset, self.samples_per_problem, self.k.clone());
        m.strategy = match self.strategy {
            StrategyArg::LsrMcts => Strategy::LsrMcts,
            StrategyArg::DirectSampling => Strategy::DirectSampling,
        };
        m.config.max_rollouts = self.rollouts;
        m.config.uct_c = self.uct_c;
        m.config.max_children = self.max_children;
        m.config.refine_threshold = self.refine_threshold;
        m.config.final_descent_c = self.final_descent_c;
        m.config.early_stop = !self.no_early_stop;
        m.config.expansion_temperature = self.temperature;
        m.config.rng_seed = self.seed;
        m.config.eval_timeout_seconds = self.timeout_secs;
        m.generator_settings = match self.generator {
            GeneratorArg::Mock => GeneratorSettings::Mock,
            GeneratorArg::Http => GeneratorSettings::Http(HttpConfig {
                base_url: self.endpoint.clone(),
                model: self.model.clone(),
                request_timeout: Duration::from_secs(120),
                ..HttpConfig::default()
            }),
        };
        m.evaluator = match self.evaluator {
            EvaluatorArg::Synthetic => EvaluatorSettings::Synthetic,
            EvaluatorArg::Shim => EvaluatorSettings::Shim {
                command: self.shim_command.split_whitespace().map(str::to_string).collect(),
                memory_limit_mb: 512,
            },
        };
        m.cache_dir = self.cache_dir.clone();
        m.output_path = self.output.clone();
        m.workers = self.workers;
        m.permissive = self.permissive;
        m.templates = self.templates.as_ref().map(|t| TemplatePaths {
            generation: t[0].clone(),
            refine: t[1].clone(),
        });
        Ok(m)
    }
}

fn run(args: &RunArgs) -> Result<bool, HarnessError> {
    let manifest = args.manifest()?;
    let report = run_experiment(&manifest)?;
    let rendered = render_report(report.label(), &report.pass_at_k_report()?)?;
    print!("{}", rendered.table);
    if let Some(path) = &manifest.output_path {
        eprintln!("report written to {}", path.display());
    }
    if !report.complete {
        eprintln!("report incomplete: rerun with the same --cache-dir to resume");
    }
    Ok(report.complete)
}

fn synthetic_shim() -> Result<bool, HarnessError> {
    let mut input = String::new();
    std::io::stdin()
        .read_line(&mut input)
        .map_err(|e| HarnessError::Serialize(e.to_string()))?;
    let request: ShimRequest = serde_json::from_str(&input).map_err(|e| HarnessError::Serialize(e.to_string()))?;
    if request.assertions.is_empty() {
        return Err(HarnessError::Serialize("request carries no assertions".into()));
    }
    let tests: Vec<TestCase> = request.assertions.into_iter().map(TestCase::new).collect();
    let run = run_synthetic(&request.program, &tests);
    let response = ShimResponse {
        passed: run.reward.passed(),
        total: run.reward.total(),
        failure_kind: run.reward.failure_kind(),
        stderr_excerpt: run.messages.join("\n"),
    };
    println!(
        "{}",
        serde_json::to_string(&response).map_err(|e| HarnessError::Serialize(e.to_string()))?
    );
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(&args),
        Command::Synth { count, seed, output } => {
            let problems: Vec<_> = (0..count)
                .map(|i| synthetic_problem(seed.wrapping_add(i), SyntheticOptions::default()))
                .collect();
            write_dataset(&output, &problems).map(|()| true)
        }
        Command::SyntheticShim => synthetic_shim(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
