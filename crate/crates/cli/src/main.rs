use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use knee_scout::baconwatts::identify_dbw;
use knee_scout::earlypredict::{
    self, extract_features, gbrt_predict, gbrt_train, read_features_csv, write_features_csv,
    FeatureVector, GbrtModel, LabeledCell, SweepConfig,
};
use knee_scout::ingest::{self, CapacityFadeSeries, CellMetadata};
use knee_scout::report::{batch_report, write_batch_csv, write_scatter_csv};
use knee_scout::synthgen::{self, SyntheticCurve};
use knee_scout::{identify_knees, Cycle, Error, KneeReport, Method, PipelineParams};

const CYCLES_SUFFIX: &str = ".cycles.csv";
const LABELS_FILE: &str = "labels.csv";

#[derive(Parser, Debug)]
#[command(
    name = "knee-scout",
    version,
    about = "Knee and knee-onset identification for capacity-fade curves"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// key=value parameter file; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw (default 42)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch work
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Report failures on stderr as one line of JSON
    #[arg(long, global = true)]
    json_errors: bool,
    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Short windows
    Default,
    /// Wider smoothing and subsequence for noisy data
    Noisy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Knee,
    Convex,
    Fleet,
}

#[derive(Args, Debug, Default)]
struct Tuning {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    sg_window: Option<usize>,
    #[arg(long)]
    sg_order: Option<usize>,
    #[arg(long)]
    curv_window: Option<usize>,
    #[arg(long)]
    mp_window: Option<usize>,
    #[arg(long)]
    cac_window: Option<usize>,
    #[arg(long)]
    exclusion_radius: Option<usize>,
    #[arg(long)]
    eol_threshold: Option<f64>,
    /// Any parameter as key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Debug, Default)]
struct CellArgs {
    /// Nominal capacity in Ah, overriding the sidecar
    #[arg(long)]
    q_nom: Option<f64>,
    /// Cell id, overriding the sidecar and file name
    #[arg(long)]
    cell_id: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Locate knee-onset and knee in one capacity CSV
    Identify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "curvature")]
        method: String,
        /// Report path; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cell: CellArgs,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Run methods on every capacity CSV in a directory
    Batch {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "curvature,baconwatts", value_delimiter = ',')]
        methods: Vec<String>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        q_nom: Option<f64>,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Fit the double Bacon-Watts baseline to one capacity CSV
    Baconwatts {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cell: CellArgs,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Write synthetic curves with their ground truth
    Synth {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "knee")]
        family: Family,
        /// Also write early-cycle discharge records and onset labels
        #[arg(long)]
        with_records: bool,
        #[arg(long, default_value_t = 35)]
        record_cycles: Cycle,
    },
    /// Extract early-cycle features from discharge records
    Features {
        /// Cycle-record CSV (repeatable)
        #[arg(long, required = true)]
        cycles: Vec<PathBuf>,
        #[arg(long, default_value_t = 30)]
        budget: Cycle,
        #[arg(long, default_value_t = earlypredict::DEFAULT_GRID_POINTS)]
        grid_points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the onset regressor
    Train {
        #[arg(long)]
        features: PathBuf,
        /// CSV with cell_id,onset_cycle
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Predict knee-onset cycles from features
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test error as a function of the cycle budget
    Sensitivity {
        /// Directory of `<id>.cycles.csv` files and a labels.csv
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "15:35")]
        budgets: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = earlypredict::DEFAULT_GRID_POINTS)]
        grid_points: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
}

/// A failure with its exit code: 1 for bad input, 2 for numerical trouble.
#[derive(Debug)]
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            kind: "InvalidInput".into(),
            message: message.into(),
        }
    }
}

fn is_numerical(e: &Error) -> bool {
    matches!(
        e,
        Error::TooShort { .. }
            | Error::SeriesTooShort { .. }
            | Error::WindowTooLarge { .. }
            | Error::DegenerateWindow { .. }
            | Error::IndexOutOfRange { .. }
            | Error::LengthMismatch { .. }
            | Error::InsufficientUnmaskedRegion { .. }
            | Error::NonFiniteResidual
            | Error::MaxIterationsReached { .. }
            | Error::SingularNormalEquations
            | Error::FitDiverged { .. }
            | Error::DegenerateSpec
            | Error::NoVoltageOverlap { .. }
            | Error::EmptyTrainingSet
            | Error::NonFiniteFeature { .. }
            | Error::ZeroTrueValue { .. }
            | Error::ConstantInput
    )
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if is_numerical(&e) { 2 } else { 1 },
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn report_failure(f: &Failure, json: bool) {
    if json {
        let line =
            serde_json::json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
        eprintln!("{line}");
    } else {
        eprintln!("error: {}", f.message);
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::from(Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| io_failure(path, e);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Failure::input(format!("cannot write to stdout: {e}"))),
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

/// Sorted files in `dir` accepted by `keep`.
fn list_dir(dir: &Path, keep: impl Fn(&str) -> bool) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_failure(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().and_then(|n| n.to_str()).is_some_and(&keep))
        .collect();
    paths.sort();
    Ok(paths)
}

fn base_params(global: &Global) -> CliResult<PipelineParams> {
    let mut p = PipelineParams::default();
    if let Some(path) = &global.config {
        p.apply_config(&read_text(path)?)?;
    }
    if let Some(seed) = global.seed {
        p.seed = seed;
    }
    Ok(p)
}

fn tuned_params(global: &Global, t: &Tuning) -> CliResult<PipelineParams> {
    let mut p = match t.preset {
        Some(Preset::Noisy) => PipelineParams::noisy(),
        _ => PipelineParams::default(),
    };
    if let Some(path) = &global.config {
        p.apply_config(&read_text(path)?)?;
    }
    if let Some(seed) = global.seed {
        p.seed = seed;
    }
    let fields: [(&str, Option<String>); 7] = [
        ("sg_window", t.sg_window.map(|v| v.to_string())),
        ("sg_order", t.sg_order.map(|v| v.to_string())),
        ("curv_window", t.curv_window.map(|v| v.to_string())),
        ("mp_window", t.mp_window.map(|v| v.to_string())),
        ("cac_window", t.cac_window.map(|v| v.to_string())),
        (
            "exclusion_radius",
            t.exclusion_radius.map(|v| v.to_string()),
        ),
        ("eol_threshold", t.eol_threshold.map(|v| v.to_string())),
    ];
    for (k, v) in fields {
        if let Some(v) = v {
            p.set(k, &v)?;
        }
    }
    for kv in &t.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        p.set(k, v)?;
    }
    p.validate()?;
    Ok(p)
}

fn load_cell(input: &Path, cell: &CellArgs) -> CliResult<CapacityFadeSeries<f64>> {
    let overrides = CellMetadata {
        cell_id: cell.cell_id.clone(),
        q_nom_ah: cell.q_nom,
    };
    Ok(ingest::load_capacity_csv(input, &overrides)?)
}

fn report_bytes(r: &KneeReport) -> CliResult<Vec<u8>> {
    let mut text = r.to_json()?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn parse_method(s: &str) -> CliResult<Method> {
    Ok(s.trim().parse::<Method>()?)
}

fn identify(
    global: &Global,
    input: &Path,
    method: &str,
    out: Option<&Path>,
    cell: &CellArgs,
    t: &Tuning,
) -> CliResult {
    let params = tuned_params(global, t)?;
    let series = load_cell(input, cell)?;
    let report = match parse_method(method)? {
        Method::CurvatureRea => identify_knees(&series, &params)?,
        Method::DoubleBaconWatts => identify_dbw(&series, &params)?,
    };
    emit(out, &report_bytes(&report)?)
}

fn batch(
    global: &Global,
    dir: &Path,
    methods: &[String],
    out: &Path,
    q_nom: Option<f64>,
    t: &Tuning,
) -> CliResult {
    let params = tuned_params(global, t)?;
    let methods: Vec<Method> = methods
        .iter()
        .map(|m| parse_method(m))
        .collect::<CliResult<_>>()?;
    let paths = list_dir(dir, |name| {
        name.ends_with(".csv") && !name.ends_with(CYCLES_SUFFIX) && name != LABELS_FILE
    })?;
    if paths.is_empty() {
        return Err(Failure::input(format!(
            "no capacity CSV files in {}",
            dir.display()
        )));
    }
    let overrides = CellMetadata {
        cell_id: None,
        q_nom_ah: q_nom,
    };
    let series: Vec<CapacityFadeSeries<f64>> = paths
        .iter()
        .map(|p| ingest::load_capacity_csv(p, &overrides).map_err(Failure::from))
        .collect::<CliResult<_>>()?;
    log::info!("running {} cells", series.len());
    let report = batch_report(&series, &methods, &params)?;
    create_dir(out)?;
    let mut buf = Vec::new();
    write_batch_csv(&report, &mut buf)?;
    write_atomic(&out.join("batch.csv"), &buf)?;
    for c in &report.correlations {
        let mut buf = Vec::new();
        write_scatter_csv(&report.rows, c.method, &mut buf)?;
        write_atomic(
            &out.join(format!("scatter_{}.csv", c.method.as_str())),
            &buf,
        )?;
    }
    Ok(())
}

fn baconwatts(
    global: &Global,
    input: &Path,
    out: Option<&Path>,
    cell: &CellArgs,
    t: &Tuning,
) -> CliResult {
    let params = tuned_params(global, t)?;
    let series = load_cell(input, cell)?;
    let report = identify_dbw(&series, &params)?;
    emit(out, &report_bytes(&report)?)
}

fn write_curve_files(dir: &Path, curve: &SyntheticCurve) -> CliResult {
    let id = curve.series.cell_id();
    let mut csv = Vec::new();
    ingest::write_capacity_csv(&curve.series, &mut csv)?;
    write_atomic(&dir.join(format!("{id}.csv")), &csv)?;
    let meta = CellMetadata {
        cell_id: Some(id.to_string()),
        q_nom_ah: Some(curve.series.q_nom_ah()),
    };
    let meta_json = serde_json::to_string_pretty(&meta).map_err(Error::from)? + "\n";
    write_atomic(&dir.join(format!("{id}.meta.json")), meta_json.as_bytes())?;
    let truth_json =
        serde_json::to_string_pretty(&curve.truth_record()).map_err(Error::from)? + "\n";
    write_atomic(&dir.join(format!("{id}.truth.json")), truth_json.as_bytes())
}

fn synth(
    global: &Global,
    count: usize,
    out_dir: &Path,
    family: Family,
    with_records: bool,
    record_cycles: Cycle,
) -> CliResult {
    let seed = base_params(global)?.seed;
    create_dir(out_dir)?;
    if with_records {
        let cells = synthgen::generate_cycle_fleet(count, record_cycles, seed)?;
        let mut labels = String::from("cell_id,onset_cycle\n");
        for cell in &cells {
            write_curve_files(out_dir, &cell.curve)?;
            let id = cell.curve.series.cell_id();
            let mut buf = Vec::new();
            earlypredict::write_cycle_records(&cell.records, &mut buf)?;
            write_atomic(&out_dir.join(format!("{id}{CYCLES_SUFFIX}")), &buf)?;
            if let Some(onset) = cell.onset_label() {
                labels.push_str(&format!("{id},{onset}\n"));
            }
        }
        return write_atomic(&out_dir.join(LABELS_FILE), labels.as_bytes());
    }
    let curves = match family {
        Family::Knee => synthgen::generate_knee_family(count, seed)?,
        Family::Convex => synthgen::generate_convex_family(count, seed)?,
        Family::Fleet => synthgen::generate_eol_fleet(count, seed)?,
    };
    for c in &curves {
        write_curve_files(out_dir, c)?;
    }
    Ok(())
}

fn cell_id_of(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    match name.strip_suffix(CYCLES_SUFFIX) {
        Some(stem) => stem.to_string(),
        None => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or(name),
    }
}

fn features(cycles: &[PathBuf], budget: Cycle, grid_points: usize, out: &Path) -> CliResult {
    let mut rows: Vec<(String, FeatureVector<f64>)> = Vec::with_capacity(cycles.len());
    for path in cycles {
        let records = earlypredict::load_cycle_records::<f64>(path)?;
        rows.push((
            cell_id_of(path),
            extract_features(&records, budget, grid_points)?,
        ));
    }
    let mut buf = Vec::new();
    write_features_csv(&rows, &mut buf)?;
    write_atomic(out, &buf)
}

fn read_labels(path: &Path) -> CliResult<BTreeMap<String, Cycle>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_failure(path, e))?;
    let mut out = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let bad = |m: String| {
            Failure::from(Error::Parse {
                line: n + 2,
                message: m,
            })
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let id = rec.get(0).unwrap_or("").to_string();
        let onset = rec
            .get(1)
            .unwrap_or("")
            .parse::<Cycle>()
            .map_err(|_| bad(format!("bad onset cycle for `{id}`")))?;
        out.insert(id, onset);
    }
    Ok(out)
}

fn read_feature_file(path: &Path) -> CliResult<Vec<(String, FeatureVector<f64>)>> {
    let file = std::fs::File::open(path).map_err(|e| io_failure(path, e))?;
    Ok(read_features_csv(file)?)
}

fn train(global: &Global, features: &Path, labels: &Path, out: &Path, t: &Tuning) -> CliResult {
    let params = tuned_params(global, t)?;
    let rows = read_feature_file(features)?;
    let labels = read_labels(labels)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (id, f) in &rows {
        match labels.get(id) {
            Some(&onset) => {
                x.push(f.to_array().to_vec());
                y.push(onset as f64);
            }
            None => log::warn!("{id}: no label, skipped"),
        }
    }
    let fit = gbrt_train(&x, &y, &params.gbrt)?;
    log::info!(
        "training rmse {:.3}",
        fit.train_rmse.last().copied().unwrap_or(f64::NAN)
    );
    let mut text = fit.model.to_json()?;
    text.push('\n');
    write_atomic(out, text.as_bytes())
}

fn predict(model: &Path, features: &Path, out: Option<&Path>) -> CliResult {
    let model: GbrtModel<f64> = GbrtModel::from_json(&read_text(model)?)?;
    let rows = read_feature_file(features)?;
    let x: Vec<Vec<f64>> = rows.iter().map(|(_, f)| f.to_array().to_vec()).collect();
    let pred = gbrt_predict(&model, &x)?;
    let mut text = String::from("cell_id,predicted_onset_cycle\n");
    for ((id, _), p) in rows.iter().zip(pred) {
        text.push_str(&format!("{id},{p}\n"));
    }
    emit(out, text.as_bytes())
}

fn parse_budgets(spec: &str) -> CliResult<Vec<Cycle>> {
    let num = |s: &str| {
        s.trim()
            .parse::<Cycle>()
            .map_err(|_| Failure::input(format!("bad budget `{s}`")))
    };
    let budgets: Vec<Cycle> = match spec.split_once(':') {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(Failure::input(format!("empty budget range `{spec}`")));
            }
            (a..=b).collect()
        }
        None => spec.split(',').map(num).collect::<CliResult<_>>()?,
    };
    Ok(budgets)
}

#[allow(clippy::too_many_arguments)]
fn sensitivity(
    global: &Global,
    dir: &Path,
    budgets: &str,
    repeats: usize,
    labels: Option<&Path>,
    grid_points: usize,
    out: &Path,
    t: &Tuning,
) -> CliResult {
    let params = tuned_params(global, t)?;
    let budgets = parse_budgets(budgets)?;
    let label_path = labels
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join(LABELS_FILE));
    let labels = read_labels(&label_path)?;
    let paths = list_dir(dir, |name| name.ends_with(CYCLES_SUFFIX))?;
    let mut cells = Vec::new();
    for path in &paths {
        let id = cell_id_of(path);
        let Some(&onset) = labels.get(&id) else {
            log::warn!("{id}: no label, skipped");
            continue;
        };
        cells.push(LabeledCell {
            cell_id: id,
            records: earlypredict::load_cycle_records::<f64>(path)?,
            onset,
        });
    }
    let config = SweepConfig {
        budgets,
        repeats,
        seed: params.seed,
        grid_points,
        gbrt: params.gbrt,
        ..SweepConfig::default()
    };
    let rows = earlypredict::sensitivity_sweep(&cells, &config)?;
    let mut text = String::from("budget,mean_rmse,mean_mape,training_monotone\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.budget, r.mean_rmse, r.mean_mape, r.training_monotone
        ));
    }
    write_atomic(out, text.as_bytes())
}

fn run(cli: Cli) -> CliResult {
    let g = &cli.global;
    if let Some(jobs) = g.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Failure::input(format!("cannot size worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Identify {
            input,
            method,
            out,
            cell,
            tuning,
        } => identify(g, input, method, out.as_deref(), cell, tuning),
        Command::Batch {
            dir,
            methods,
            out,
            q_nom,
            tuning,
        } => batch(g, dir, methods, out, *q_nom, tuning),
        Command::Baconwatts {
            input,
            out,
            cell,
            tuning,
        } => baconwatts(g, input, out.as_deref(), cell, tuning),
        Command::Synth {
            count,
            out_dir,
            family,
            with_records,
            record_cycles,
        } => synth(g, *count, out_dir, *family, *with_records, *record_cycles),
        Command::Features {
            cycles,
            budget,
            grid_points,
            out,
        } => features(cycles, *budget, *grid_points, out),
        Command::Train {
            features,
            labels,
            out,
            tuning,
        } => train(g, features, labels, out, tuning),
        Command::Predict {
            model,
            features,
            out,
        } => predict(model, features, out.as_deref()),
        Command::Sensitivity {
            dir,
            budgets,
            repeats,
            labels,
            grid_points,
            out,
            tuning,
        } => sensitivity(
            g,
            dir,
            budgets,
            *repeats,
            labels.as_deref(),
            *grid_points,
            out,
            tuning,
        ),
    }
}

fn main() -> ExitCode {
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json_errors {
                let line = serde_json::json!({ "error": "Usage", "message": e.to_string().trim(), "exit_code": 1 });
                eprintln!("{line}");
            } else {
                let _ = e.print();
            }
            return ExitCode::from(1);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report_failure(&f, json_errors);
            ExitCode::from(f.code)
        }
    }
}
