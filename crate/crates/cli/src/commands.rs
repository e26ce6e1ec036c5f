use crate::config::{Override, RunConfig, MNIST_ENV};
use crate::svg::{Chart, Series};
use agifl_core::data::Dataset;
use agifl_core::scenario::{
    best_accuracy_within_budget, run_scenario_on, write_metrics_csv, write_summary_csv, ExperimentResult,
    PlacementScheme, Scenario,
};
use agifl_core::Error as CoreError;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// A failed command: message for stderr plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;

impl Failure {
    pub fn config(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Failure {
        Failure {
            code: EXIT_CONFIG,
            message: format!("writing {}: {e}", path.display()),
        }
    }

    fn from_core(e: CoreError) -> Failure {
        match e {
            CoreError::Io { .. }
            | CoreError::BadMagic { .. }
            | CoreError::CountMismatch { .. }
            | CoreError::Truncated { .. } => Failure::data(e.to_string()),
            other => Failure::config(other.to_string()),
        }
    }
}

/// Flags shared by `run` and `compare-placement`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub max_rounds: Option<usize>,
    pub jobs: Option<usize>,
    pub overrides: Vec<Override>,
}

struct Prepared {
    config: RunConfig,
    scenario: Scenario,
    train: Arc<Dataset>,
    test: Arc<Dataset>,
}

fn prepare(opts: &RunOptions) -> Result<Prepared, Failure> {
    let mut config = RunConfig::load(&opts.config, &opts.overrides).map_err(Failure::config)?;
    if let Some(seed) = opts.seed {
        config.scenario.seed = seed;
    }
    if let Some(r) = opts.repeats {
        config.scenario.repeats = r;
    }
    if let Some(r) = opts.max_rounds {
        config.fl.max_rounds = r;
    }
    let env_dir = std::env::var_os(MNIST_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    let (source, warning) = config.data_source(env_dir);
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    let scenario = config.to_scenario(source);
    scenario.validate().map_err(Failure::from_core)?;
    let (train, test) = scenario.data.load().map_err(Failure::from_core)?;
    Ok(Prepared {
        config,
        scenario,
        train,
        test,
    })
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Failure::config("--jobs must be at least 1"));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| Failure::config(e.to_string()))
}

fn tag(placement: &PlacementScheme) -> &'static str {
    match placement {
        PlacementScheme::MinSumDist => "min_sum_dist",
        PlacementScheme::Random => "random",
        PlacementScheme::Fixed { .. } => "fixed",
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn write_experiment(out: &Path, name: &str, result: &ExperimentResult) -> Result<(), Failure> {
    for r in &result.repeats {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &r.metrics).map_err(|e| Failure::io(out, e))?;
        write_file(&out.join(format!("{name}_r{:03}.csv", r.repeat)), &buf)?;
    }
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &result.summary).map_err(|e| Failure::io(out, e))?;
    write_file(&out.join(format!("{name}_mean.csv")), &buf)
}

fn summary_line(name: &str, result: &ExperimentResult) -> String {
    let energy: Vec<f64> = result
        .repeats
        .iter()
        .map(|r| r.metrics.last().map_or(0.0, |m| m.cumulative_uav_energy_j))
        .collect();
    let rounds: Vec<usize> = result.repeats.iter().map(|r| r.metrics.len()).collect();
    let mut line = format!(
        "{name}: repeats={} rounds={}..{} mean_final_uav_energy_j={:.6}",
        result.repeats.len(),
        rounds.iter().min().copied().unwrap_or(0),
        rounds.iter().max().copied().unwrap_or(0),
        energy.iter().sum::<f64>() / energy.len().max(1) as f64
    );
    if let Some(acc) = result.mean_best_accuracy() {
        let _ = write!(line, " mean_best_acc={acc:.6}");
    }
    line
}

fn create_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))
}

pub fn run(opts: &RunOptions) -> Result<(), Failure> {
    let p = prepare(opts)?;
    let result = pool(opts.jobs)?
        .install(|| run_scenario_on(&p.scenario, &p.train, &p.test))
        .map_err(Failure::from_core)?;
    create_out(&opts.out)?;
    let name = tag(&p.scenario.placement);
    write_experiment(&opts.out, name, &result)?;
    println!("{}", summary_line(name, &result));
    Ok(())
}

/// Mean over repeats of the best accuracy reachable within each budget.
/// A repeat that cannot afford a single round contributes zero.
pub fn accuracy_by_budget(result: &ExperimentResult, budgets: &[f64]) -> Vec<f64> {
    budgets
        .iter()
        .map(|&b| {
            let n = result.repeats.len().max(1) as f64;
            result
                .repeats
                .iter()
                .map(|r| best_accuracy_within_budget(&r.metrics, b).unwrap_or(0.0))
                .sum::<f64>()
                / n
        })
        .collect()
}

fn arm_names(schemes: &[PlacementScheme]) -> Vec<String> {
    let base: Vec<&str> = schemes.iter().map(tag).collect();
    base.iter()
        .enumerate()
        .map(|(i, t)| {
            if base.iter().filter(|&o| o == t).count() > 1 {
                format!("{t}_{i}")
            } else {
                t.to_string()
            }
        })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn compare_placement(opts: &RunOptions) -> Result<(), Failure> {
    let p = prepare(opts)?;
    let schemes: Vec<PlacementScheme> = p
        .config
        .compare
        .placements
        .iter()
        .map(|&n| p.config.scheme(n))
        .collect();
    if schemes.is_empty() {
        return Err(Failure::config("compare.placements must name at least one scheme"));
    }
    let budgets = &p.config.compare.budgets_j;
    if budgets.iter().any(|b| !(*b > 0.0)) {
        return Err(Failure::config("compare.budgets_j must be positive"));
    }
    let names = arm_names(&schemes);

    let pool = pool(opts.jobs)?;
    let mut results = Vec::new();
    for scheme in &schemes {
        let scenario = Scenario {
            placement: *scheme,
            ..p.scenario.clone()
        };
        let r = pool
            .install(|| run_scenario_on(&scenario, &p.train, &p.test))
            .map_err(Failure::from_core)?;
        results.push(r);
    }

    create_out(&opts.out)?;
    for (name, r) in names.iter().zip(&results) {
        write_experiment(&opts.out, name, r)?;
    }

    let rounds = results.iter().map(|r| r.summary.len()).min().unwrap_or(0);
    let mut csv = String::from("round");
    for n in &names {
        let _ = write!(csv, ",{n}_cum_uav_energy_j");
    }
    csv.push('\n');
    for i in 0..rounds {
        csv.push_str(&results[0].summary[i].round.to_string());
        for r in &results {
            let _ = write!(csv, ",{}", fmt(r.summary[i].cumulative_uav_energy_j.mean));
        }
        csv.push('\n');
    }
    write_file(&opts.out.join("comparison_energy.csv"), csv.as_bytes())?;

    let energy_chart = Chart {
        title: "Cumulative UAV energy".into(),
        x_label: "round".into(),
        y_label: "mean cumulative UAV energy (J)".into(),
        log_x: false,
        series: names
            .iter()
            .zip(&results)
            .map(|(n, r)| Series {
                name: n.clone(),
                points: r.summary[..rounds]
                    .iter()
                    .map(|s| (s.round as f64, s.cumulative_uav_energy_j.mean))
                    .collect(),
            })
            .collect(),
    };
    write_file(&opts.out.join("energy_by_round.svg"), energy_chart.render().as_bytes())?;

    if !p.scenario.timing_only && !budgets.is_empty() {
        let curves: Vec<Vec<f64>> = results.iter().map(|r| accuracy_by_budget(r, budgets)).collect();
        let mut csv = String::from("budget_j");
        for n in &names {
            let _ = write!(csv, ",{n}_best_acc");
        }
        csv.push('\n');
        for (i, b) in budgets.iter().enumerate() {
            csv.push_str(&fmt(*b));
            for c in &curves {
                let _ = write!(csv, ",{}", fmt(c[i]));
            }
            csv.push('\n');
        }
        write_file(&opts.out.join("comparison_budget.csv"), csv.as_bytes())?;
        let chart = Chart {
            title: "Best accuracy within UAV energy budget".into(),
            x_label: "UAV energy budget (J)".into(),
            y_label: "mean best test accuracy".into(),
            log_x: true,
            series: names
                .iter()
                .zip(&curves)
                .map(|(n, c)| Series {
                    name: n.clone(),
                    points: budgets.iter().copied().zip(c.iter().copied()).collect(),
                })
                .collect(),
        };
        write_file(&opts.out.join("accuracy_by_budget.svg"), chart.render().as_bytes())?;
    }

    for (n, r) in names.iter().zip(&results) {
        println!("{}", summary_line(n, r));
    }
    Ok(())
}
