use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fuzzyfuse::baseline::{train_logistic, LogisticConfig};
use fuzzyfuse::document::{deserialize_tree, serialize_tree};
use fuzzyfuse::eval::{
    evaluate, export_heatmap, format_table, read_prompt_grid, select_prompt, EvalReport,
    MajorityVote, SingleDetector,
};
use fuzzyfuse::oracle::{certify_tree, enumerate_all};
use fuzzyfuse::rules::{extract_rules, predicate_text};
use fuzzyfuse::score::{
    load_scores, registry_document, sample_balanced, write_csv, Registry, ScoreFormat,
};
use fuzzyfuse::simulate::complementary_suite;
use fuzzyfuse::tree::{Branch, PathStep};
use fuzzyfuse::{FuseError, FuzzyTree, Hyperparams, ScoreMatrix, SplitLabeling};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CERTIFY: u8 = 3;

/// Fuzzy decision tree fusion of AI-generated image detector scores.
#[derive(Parser, Debug)]
#[command(name = "fuzzyfuse", version)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a score file and print a summary, optionally writing a
    /// class-balanced sample of it.
    Ingest(IngestArgs),
    /// Grow a fuzzy decision tree and write its document.
    Train(TrainArgs),
    /// Check every node of a tree against the brute-force oracle.
    Certify(CertifyArgs),
    /// Label samples with a trained tree.
    Predict(PredictArgs),
    /// Print the tree as IF/THEN fuzzy rules.
    Explain(ExplainArgs),
    /// Accuracy report over one or more benchmark files.
    Evaluate(EvaluateArgs),
    /// Write a canned synthetic benchmark suite.
    Simulate(SimulateArgs),
    /// Pick the best prompt configuration and export the heatmap CSV.
    PromptGrid(PromptGridArgs),
}

#[derive(Args, Debug)]
struct ScoreInput {
    /// Score file (CSV or JSONL).
    #[arg(long)]
    scores: PathBuf,
    /// JSON sidecar declaring detector kinds; without it every detector is continuous.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Input format; inferred from the extension when omitted (.jsonl, else CSV).
    #[arg(long)]
    format: Option<ScoreFormat>,
}

impl ScoreInput {
    fn load(&self) -> Result<ScoreMatrix, FuseError> {
        load_matrix(&self.scores, self.registry.as_deref(), self.format)
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    input: ScoreInput,
    /// Draw this many real and this many fake records from every subset.
    #[arg(long)]
    balanced: Option<usize>,
    /// Where to write the balanced sample (CSV); requires --balanced.
    #[arg(long, requires = "balanced")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    input: ScoreInput,
    /// Largest detector subset fused at one node (s).
    #[arg(long, default_value_t = 3)]
    max_split_models: usize,
    /// Each child of a split must hold more than this many samples (m).
    #[arg(long, default_value_t = 0)]
    min_samples: usize,
    /// Maximum number of internal nodes on any root-to-leaf path (d).
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    /// Number of thresholds searched per subset and operator (g).
    #[arg(long, default_value_t = 10)]
    thr_grid_size: usize,
    /// How children are labeled when scoring a split: majority or fixed.
    #[arg(long, default_value_t = SplitLabeling::Majority)]
    split_labeling: SplitLabeling,
    /// Output tree document (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    /// Tree document to check.
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    input: ScoreInput,
    /// Also dump the oracle's ranked candidates at the root (CSV).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Tree document.
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    input: ScoreInput,
    /// Output CSV: sample_id,label,predicted,path.
    #[arg(long)]
    out: PathBuf,
    /// Fill the path column with the decisions taken at each node.
    #[arg(long, default_value_t = false)]
    explain: bool,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    /// Tree document.
    #[arg(long)]
    tree: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Tree document.
    #[arg(long)]
    tree: PathBuf,
    /// Comma-separated benchmark score files.
    #[arg(long, value_delimiter = ',', required = true)]
    scores: Vec<PathBuf>,
    /// Comma-separated perturbed score files for the robustness column.
    #[arg(long, value_delimiter = ',')]
    perturbed: Vec<PathBuf>,
    /// Registry sidecar applied to every score file.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Output report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also report majority voting and every single detector.
    #[arg(long, default_value_t = false)]
    compare: bool,
    /// Train a logistic-regression baseline on this score file and include it.
    #[arg(long)]
    logistic_train: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Canned suite to generate; only `complementary` exists.
    #[arg(long, default_value = "complementary")]
    suite: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write blur/jpeg/resize perturbed copies of every benchmark.
    #[arg(long, default_value_t = false)]
    perturbed: bool,
}

#[derive(Args, Debug)]
struct PromptGridArgs {
    /// CSV with system_idx,question_idx,output_idx,accuracy.
    #[arg(long)]
    accuracies: PathBuf,
    /// Heatmap CSV, sorted by prompt indices.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Data(String),
    Certification(String),
}

impl From<FuseError> for Failure {
    fn from(e: FuseError) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Certification(msg)) => {
            eprintln!("certification failed: {msg}");
            ExitCode::from(EXIT_CERTIFY)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest(args) => ingest(args, cli.seed),
        Command::Train(args) => train(args),
        Command::Certify(args) => certify(args),
        Command::Predict(args) => predict(args),
        Command::Explain(args) => explain(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Simulate(args) => simulate(args, cli.seed),
        Command::PromptGrid(args) => prompt_grid(args),
    }
}

fn load_matrix(
    path: &Path,
    registry: Option<&Path>,
    format: Option<ScoreFormat>,
) -> Result<ScoreMatrix, FuseError> {
    let sidecar = registry.map(Registry::load).transpose()?;
    let format = format.unwrap_or_else(|| ScoreFormat::from_path(path));
    load_scores(path, format, sidecar.as_ref())
}

fn load_tree(path: &Path) -> Result<FuzzyTree, FuseError> {
    let text = fs::read_to_string(path).map_err(|e| FuseError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    deserialize_tree(&text)
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FuseError> {
    let io_err = |e: std::io::Error| FuseError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn matrix_csv(matrix: &ScoreMatrix) -> Result<Vec<u8>, FuseError> {
    let mut buf = Vec::new();
    write_csv(matrix, &mut buf)?;
    Ok(buf)
}

fn ingest(args: IngestArgs, seed: u64) -> CliResult {
    let matrix = args.input.load()?;
    let (real, fake) = matrix.class_counts();
    println!(
        "{} samples ({real} real, {fake} fake), {} detectors",
        matrix.n_samples(),
        matrix.n_detectors()
    );
    for det in matrix.registry() {
        println!("  {} ({:?})", det.name, det.kind);
    }
    if let Some(per) = args.balanced {
        let sample = sample_balanced(&matrix, per, seed)?;
        println!("balanced sample: {} samples", sample.n_samples());
        if let Some(out) = args.out {
            write_atomic(&out, &matrix_csv(&sample)?)?;
        }
    }
    Ok(())
}

fn train(args: TrainArgs) -> CliResult {
    let matrix = args.input.load()?;
    let hp = Hyperparams {
        max_split_models: args.max_split_models,
        min_samples: args.min_samples,
        max_depth: args.max_depth,
        thr_grid_size: args.thr_grid_size,
        split_labeling: args.split_labeling,
    };
    let (tree, stats) = FuzzyTree::grow_with_stats(&matrix, &hp)?;
    write_atomic(&args.out, serialize_tree(&tree).as_bytes())?;
    println!("depth: {}", tree.depth());
    println!("nodes: {}", tree.n_nodes());
    println!("leaves: {}", tree.root.n_leaves());
    if let Some(&per_node) = stats.candidates_per_node.first() {
        println!("candidates per node: {per_node}");
    }
    println!("training accuracy: {:.4}", tree.accuracy(&matrix)?);
    Ok(())
}

fn certify(args: CertifyArgs) -> CliResult {
    let tree = load_tree(&args.tree)?;
    let matrix = args.input.load()?;
    let hp = tree.hyperparams;
    if let Some(report_path) = &args.report {
        let all: Vec<usize> = (0..matrix.n_samples()).collect();
        let report = enumerate_all(&matrix, &all, &hp)?;
        let mut buf = Vec::new();
        report.write_csv(&matrix.detector_names(), &mut buf)?;
        write_atomic(report_path, &buf)?;
    }
    let verdict = certify_tree(&tree, &matrix, &hp)?;
    if verdict.passed() {
        println!("pass: {} nodes checked", verdict.nodes_checked);
        Ok(())
    } else {
        for m in &verdict.mismatches {
            println!("FAIL {}: {}", m.path, m.detail);
        }
        let first = &verdict.mismatches[0];
        Err(Failure::Certification(format!(
            "{} mismatch(es), first at {}: {}",
            verdict.mismatches.len(),
            first.path,
            first.detail
        )))
    }
}

fn path_descriptor(path: &[PathStep], names: &[String]) -> String {
    path.iter()
        .map(|step| {
            let dets: Vec<&str> = step
                .config
                .detectors()
                .iter()
                .map(|&i| names[i].as_str())
                .collect();
            let side = match step.branch {
                Branch::Left => "L",
                Branch::Right => "R",
            };
            format!(
                "{}({})>{}:{side}",
                step.config.operator(),
                dets.join("+"),
                step.config.threshold()
            )
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn predict(args: PredictArgs) -> CliResult {
    let tree = load_tree(&args.tree)?;
    let matrix = args.input.load()?;
    let predictions = tree.predict_matrix(&matrix)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::from(FuseError::from(e));
    wtr.write_record(["sample_id", "label", "predicted", "path"])
        .map_err(io)?;
    for (record, pred) in matrix.records().iter().zip(&predictions) {
        let path = if args.explain {
            path_descriptor(&pred.path, &tree.detectors)
        } else {
            String::new()
        };
        wtr.write_record([
            record.sample_id.as_str(),
            record.label.as_str(),
            pred.label.as_str(),
            path.as_str(),
        ])
        .map_err(io)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Failure::Data(e.to_string()))?;
    write_atomic(&args.out, &bytes)?;
    let correct = matrix
        .records()
        .iter()
        .zip(&predictions)
        .filter(|(r, p)| r.label == p.label)
        .count();
    println!(
        "{} samples, accuracy {:.4}",
        predictions.len(),
        correct as f64 / predictions.len().max(1) as f64
    );
    Ok(())
}

fn explain(args: ExplainArgs) -> CliResult {
    let tree = load_tree(&args.tree)?;
    println!(
        "tree over {} detectors, depth {}, {} rules",
        tree.detectors.len(),
        tree.depth(),
        tree.root.n_leaves()
    );
    for (i, rule) in extract_rules(&tree).iter().enumerate() {
        println!("R{}: {rule}", i + 1);
    }
    if let fuzzyfuse::TreeNode::Internal { config, gain, .. } = &tree.root {
        println!(
            "root predicate: {} (gain {gain:.4})",
            predicate_text(config, &tree.detectors)
        );
    }
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> CliResult {
    let tree = load_tree(&args.tree)?;
    let registry = args.registry.as_deref();
    let matrices = args
        .scores
        .iter()
        .map(|p| load_matrix(p, registry, None))
        .collect::<Result<Vec<_>, _>>()?;
    let perturbed = args
        .perturbed
        .iter()
        .map(|p| load_matrix(p, registry, None))
        .collect::<Result<Vec<_>, _>>()?;
    let perturbed = (!perturbed.is_empty()).then_some(perturbed.as_slice());

    let report = evaluate(&tree, &matrices, perturbed)?;
    let mut rows: Vec<(String, EvalReport)> = vec![("fuzzy tree".into(), report.clone())];
    let mut compared = serde_json::Map::new();
    if args.compare {
        let mv = evaluate(&MajorityVote, &matrices, perturbed)?;
        compared.insert(
            "majority_vote".into(),
            serde_json::to_value(&mv).map_err(FuseError::from)?,
        );
        rows.push(("majority vote".into(), mv));
        for (i, name) in tree.detectors.iter().enumerate() {
            let single = evaluate(&SingleDetector { index: i }, &matrices, perturbed)?;
            compared.insert(
                name.clone(),
                serde_json::to_value(&single).map_err(FuseError::from)?,
            );
            rows.push((name.clone(), single));
        }
    }
    if let Some(path) = &args.logistic_train {
        let train = load_matrix(path, registry, None)?;
        tree.check_matrix(&train)?;
        let (model, _) = train_logistic(&train, &LogisticConfig::default())?;
        let lr = evaluate(&model, &matrices, perturbed)?;
        compared.insert(
            "logistic_regression".into(),
            serde_json::to_value(&lr).map_err(FuseError::from)?,
        );
        rows.push(("logistic regression".into(), lr));
    }

    let document = if compared.is_empty() {
        report.to_json()
    } else {
        let mut doc = serde_json::Map::new();
        doc.insert(
            "fuzzy_tree".into(),
            serde_json::to_value(&report).map_err(FuseError::from)?,
        );
        doc.insert("baselines".into(), serde_json::Value::Object(compared));
        let mut text = serde_json::to_string_pretty(&doc).map_err(FuseError::from)?;
        text.push('\n');
        text
    };
    write_atomic(&args.out, document.as_bytes())?;
    print!("{}", format_table(&rows));
    Ok(())
}

fn simulate(args: SimulateArgs, seed: u64) -> CliResult {
    if args.suite != "complementary" {
        return Err(Failure::Data(format!("unknown suite `{}`", args.suite)));
    }
    let suite = complementary_suite(seed)?;
    fs::create_dir_all(&args.out).map_err(|e| FuseError::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let json = |v: serde_json::Value| -> Result<Vec<u8>, FuseError> {
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        Ok(text.into_bytes())
    };
    let out = &args.out;
    write_atomic(
        &out.join("registry.json"),
        &json(serde_json::to_value(registry_document(&suite.dev)).map_err(FuseError::from)?)?,
    )?;
    write_atomic(
        &out.join("profiles.json"),
        &json(serde_json::to_value(&suite.profiles).map_err(FuseError::from)?)?,
    )?;
    write_atomic(
        &out.join("benchmarks.json"),
        &json(serde_json::to_value(&suite.bench_specs).map_err(FuseError::from)?)?,
    )?;
    write_atomic(&out.join("dev.csv"), &matrix_csv(&suite.dev)?)?;
    for (spec, bench) in suite.bench_specs.iter().zip(&suite.benches) {
        write_atomic(&out.join(format!("{}.csv", spec.name)), &matrix_csv(bench)?)?;
    }
    let mut written = 1 + suite.benches.len();
    if args.perturbed {
        let dir = out.join("perturbed");
        fs::create_dir_all(&dir).map_err(|e| FuseError::Io {
            path: dir.clone(),
            source: e,
        })?;
        for (pspec, matrix) in suite.perturbed()? {
            let bench = &matrix.records()[0].benchmark;
            let name = format!("{bench}_{}_{}.csv", pspec.channel, pspec.severity);
            write_atomic(&dir.join(name), &matrix_csv(&matrix)?)?;
            written += 1;
        }
    }
    println!("wrote {written} score files to {}", out.display());
    Ok(())
}

fn prompt_grid(args: PromptGridArgs) -> CliResult {
    let file = fs::File::open(&args.accuracies).map_err(|e| FuseError::Io {
        path: args.accuracies.clone(),
        source: e,
    })?;
    let grid = read_prompt_grid(file)?;
    let best = select_prompt(&grid)?;
    write_atomic(&args.out, export_heatmap(&grid).as_bytes())?;
    println!(
        "best prompt: system {} question {} output {} (accuracy {:.4}) out of {} configurations",
        best.system_idx,
        best.question_idx,
        best.output_idx,
        best.accuracy,
        grid.len()
    );
    Ok(())
}
