use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Args;

use synproxy_netsim::{run_scenario, ScenarioConfig};

use crate::Failure;

#[derive(Args)]
pub struct SimArgs {
    /// Scenario file (TOML).
    config: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Simulated seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Directory for metrics.csv, latency_hist.csv and summary.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

pub fn run(a: SimArgs) -> Result<u8, Failure> {
    let cfg = ScenarioConfig::from_file(&a.config).map_err(Failure::invalid)?;
    let report = run_scenario(&cfg, a.seed, a.duration).map_err(Failure::invalid)?;

    fs::create_dir_all(&a.out).map_err(|e| Failure::io(format!("{}: {e}", a.out.display())))?;
    let create = |name: &str| {
        let p = a.out.join(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| Failure::io(format!("{}: {e}", p.display())))
    };
    report
        .write_metrics_csv(create("metrics.csv")?)
        .map_err(|e| Failure::io(format!("metrics.csv: {e}")))?;
    report
        .write_histogram_csv(create("latency_hist.csv")?)
        .map_err(|e| Failure::io(format!("latency_hist.csv: {e}")))?;
    let summary = report.summary();
    fs::write(a.out.join("summary.txt"), &summary)
        .map_err(|e| Failure::io(format!("summary.txt: {e}")))?;
    print!("{summary}");
    Ok(0)
}
