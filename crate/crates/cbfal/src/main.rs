//! Command-line front end: run scenarios, verify the numerics, and study
//! convergence.
//!
//! Exit codes: `0` success, `1` configuration or I/O error, `2` a scenario
//! check failed, `3` a verification suite failed.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use cbfal::config::Overrides;
use cbfal::integrator::write_records_csv;
use cbfal::report::ReportFormat;
use cbfal::scenarios::{self, Scenario};
use cbfal::verify::{self, VerifyConfig};

#[derive(Parser)]
#[command(
    name = "cbfal",
    version,
    about = "Safety filters for time-delay systems via control barrier functionals"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario, write its records, and evaluate its checks.
    Run(RunArgs),
    /// Run the numerical self-verification suites.
    Verify(VerifyArgs),
    /// Measure self-convergence of the terminal state over a step ladder.
    Convergence(ConvergenceArgs),
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario name; see `cbfal scenarios`.
    #[arg(long)]
    scenario: String,
    /// Parameter override, repeatable: `--set tau=2.0 --set filter.enabled=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// TOML file of overrides; `--set` and explicit flags layer on top.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Step size; shorthand for `--set dt=...` with higher precedence.
    #[arg(long)]
    dt: Option<f64>,
    /// Final time; shorthand for `--set t_end=...` with higher precedence.
    #[arg(long)]
    t_end: Option<f64>,
    /// Output directory for the CSV, report, and parameter echo.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Report rendering: `text` or `structured` (JSON).
    #[arg(long, default_value = "text", value_parser = ReportFormat::from_str)]
    report: ReportFormat,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    gnuplot_script: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Seed of the randomized suites.
    #[arg(long, default_value_t = VerifyConfig::default().seed)]
    seed: u64,
    /// Number of random filter cases.
    #[arg(long, default_value_t = VerifyConfig::default().cases)]
    cases: usize,
    /// Report rendering: `text` or `structured` (JSON).
    #[arg(long, default_value = "text", value_parser = ReportFormat::from_str)]
    report: ReportFormat,
}

#[derive(Args)]
struct ConvergenceArgs {
    /// Scenario name; see `cbfal scenarios`.
    #[arg(long)]
    scenario: String,
    /// Comma-separated step-size ladder, e.g. `--dt 4e-3,2e-3,1e-3`.
    #[arg(long, value_delimiter = ',', required = true)]
    dt: Vec<f64>,
    /// Final time of every run (default 10 unless overridden).
    #[arg(long)]
    t_end: Option<f64>,
    /// Parameter override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Report rendering: `text` or `structured` (JSON).
    #[arg(long, default_value = "text", value_parser = ReportFormat::from_str)]
    report: ReportFormat,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Run(a) => run_cmd(a),
        Cmd::Verify(a) => verify_cmd(a),
        Cmd::Convergence(a) => convergence_cmd(a),
        Cmd::Scenarios => scenarios_cmd(),
    };
    let code = match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn gather_overrides(
    config: Option<&PathBuf>,
    set: &[String],
    dt: Option<f64>,
    t_end: Option<f64>,
) -> cbfal::Result<Overrides> {
    let mut ov = match config {
        Some(path) => Overrides::from_toml_str(&fs::read_to_string(path)?)?,
        None => Overrides::new(),
    };
    ov = ov.merged(&Overrides::from_set_args(set)?);
    if let Some(dt) = dt {
        ov.set_number("dt", dt);
    }
    if let Some(t_end) = t_end {
        ov.set_number("t_end", t_end);
    }
    Ok(ov)
}

fn run_cmd(a: RunArgs) -> cbfal::Result<i32> {
    let ov = gather_overrides(a.config.as_ref(), &a.set, a.dt, a.t_end)?;
    let sc = scenarios::build(&a.scenario, &ov)?;
    fs::create_dir_all(&a.out)?;

    let report = if sc.is_demonstration() {
        sc.demonstrate()?
    } else {
        let outcome = sc.run()?;
        let csv_path = a.out.join(format!("{}.csv", sc.name()));
        let mut w = BufWriter::new(fs::File::create(&csv_path)?);
        write_records_csv(
            &outcome.records,
            sc.plant().state_dim(),
            sc.plant().input_dim(),
            &mut w,
        )?;
        w.flush()?;
        if a.gnuplot_script {
            fs::write(a.out.join(format!("{}.gp", sc.name())), gnuplot_script(&sc))?;
        }
        sc.run_checks(&outcome)
    };

    fs::write(
        a.out.join(format!("{}.params.toml", sc.name())),
        sc.params().to_toml_string(),
    )?;
    let (rendered, ext) = match a.report {
        ReportFormat::Text => (report.to_text(), "txt"),
        ReportFormat::Structured => (report.to_json(), "json"),
    };
    fs::write(a.out.join(format!("{}.report.{ext}", sc.name())), &rendered)?;
    println!("{}", rendered.trim_end());
    Ok(if report.pass { 0 } else { 2 })
}

fn verify_cmd(a: VerifyArgs) -> cbfal::Result<i32> {
    let report = verify::run(&VerifyConfig {
        seed: a.seed,
        cases: a.cases,
    })?;
    let rendered = match a.report {
        ReportFormat::Text => report.to_text(),
        ReportFormat::Structured => report.to_json(),
    };
    println!("{}", rendered.trim_end());
    Ok(if report.pass { 0 } else { 3 })
}

fn convergence_cmd(a: ConvergenceArgs) -> cbfal::Result<i32> {
    let mut ov = Overrides::from_set_args(&a.set)?;
    if let Some(t_end) = a.t_end {
        ov.set_number("t_end", t_end);
    }
    let study = scenarios::convergence_study(&a.scenario, &ov, &a.dt)?;
    let rendered = match a.report {
        ReportFormat::Text => study.to_text(),
        ReportFormat::Structured => study.to_json(),
    };
    println!("{}", rendered.trim_end());
    Ok(0)
}

fn scenarios_cmd() -> cbfal::Result<i32> {
    for name in scenarios::SCENARIOS {
        let sc = scenarios::build(name, &Overrides::new())?;
        println!("{name:<15} {}", sc.description());
    }
    Ok(0)
}

/// Gnuplot script plotting the state components and the diagnostics of the
/// scenario's CSV.
fn gnuplot_script(sc: &Scenario) -> String {
    let name = sc.name();
    let n = sc.plant().state_dim();
    let m = sc.plant().input_dim();
    // CSV layout: t, x_0.., u_0.., H, He, phi, active (1-based columns).
    let h_col = 2 + n + m;
    let states = (0..n)
        .map(|i| format!("'{name}.csv' using 1:{} with lines title 'x_{i}'", 2 + i))
        .collect::<Vec<_>>()
        .join(", \\\n     ");
    let controls = (0..m)
        .map(|j| {
            format!(
                "'{name}.csv' using 1:{} with lines title 'u_{j}'",
                2 + n + j
            )
        })
        .collect::<Vec<_>>()
        .join(", \\\n     ");
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 1100,900\n\
         set output '{name}.png'\n\
         set multiplot layout 3,1\n\
         set xlabel 't'\n\
         set key outside\n\
         plot {states}\n\
         plot '{name}.csv' using 1:{h_col} with lines title 'H', \\\n     \
         0 with lines dashtype 2 lc 'gray' notitle\n\
         plot {controls}, \\\n     \
         '{name}.csv' using 1:{phi_col} with lines title 'phi'\n\
         unset multiplot\n",
        phi_col = h_col + 2,
    )
}
