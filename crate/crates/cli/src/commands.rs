//! The four subcommands: `enumerate`, `run`, `oracle`, `report`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use eprsim_core::harness::{run_experiment_with_workers, RunResult};
use eprsim_core::model::TrialRecord;
use eprsim_core::oracle::{
    adversarial_min, enumerate_instruction_sets, exact_same_color, min_same_color_classic,
    AdversarialSchedule, ExactPairWeights,
};
use eprsim_core::stats::wilson_interval;
use eprsim_core::strategies::{AuditEntry, AuditTrace};

use crate::config::{parse_config, ConfigFile};
use crate::error::{CliError, Result};
use crate::report::{build_report, ReportDocument};

/// Environment variable that re-roots relative output paths.
pub const OUTPUT_DIR_ENV: &str = "EPRSIM_OUTPUT_DIR";

/// List all eight instruction sets with their same-color probability
/// under uniform independent settings, then the classic minimum.
pub fn cmd_enumerate(out: &mut impl Write) -> Result<()> {
    let weights = ExactPairWeights::uniform();
    for set in enumerate_instruction_sets() {
        let p = exact_same_color(set, &weights);
        writeln!(out, "{set} {p}")?;
    }
    let (min, _) = min_same_color_classic(&weights);
    writeln!(out, "min {min}")?;
    Ok(())
}

fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Resolve an output path: relative paths go under the override
/// directory when the environment variable is set.
fn resolve_output(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

/// Write atomically: temp file in the target directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn records_jsonl(records: &[TrialRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| CliError::Io(format!("record serialization: {e}")))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn report_json(report: &ReportDocument) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report)
        .map_err(|e| CliError::Io(format!("report serialization: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_per_pair(report: &ReportDocument) -> String {
    let mut out = String::from("pair,same,diff,total,frequency,wilson_low,wilson_high\n");
    for (pair, f) in &report.stats.per_pair {
        out.push_str(&format!(
            "{pair},{},{},{},{},{},{}\n",
            f.same, f.diff, f.total, f.frequency, f.wilson_low, f.wilson_high
        ));
    }
    out
}

/// Run the configured experiment and write records, report and
/// (optionally) the per-pair CSV.
pub fn cmd_run(config_path: &Path, workers: usize, out: &mut impl Write) -> Result<()> {
    let config = load_config(config_path)?;
    let Some(outputs) = config.outputs.clone() else {
        return Err(CliError::single(
            "outputs",
            None,
            "run requires an [outputs] section",
        ));
    };
    let result = run_experiment_with_workers(&config.run, workers)?;
    let report = build_report(&config, &result)?;

    let records_path = resolve_output(&outputs.records);
    let report_path = resolve_output(&outputs.report);
    write_atomic(&records_path, &records_jsonl(&result.records)?)?;
    write_atomic(&report_path, &report_json(&report)?)?;
    if let Some(csv) = &outputs.csv {
        let csv_path = resolve_output(csv);
        write_atomic(&csv_path, csv_per_pair(&report).as_bytes())?;
    }
    writeln!(
        out,
        "{} trials, overall same-color {:.6} ({}/{})",
        report.stats.total_trials,
        report.stats.overall_same_color.value,
        report.stats.overall_same_color.same,
        report.stats.overall_same_color.total,
    )?;
    writeln!(out, "records: {}", records_path.display())?;
    writeln!(out, "report: {}", report_path.display())?;
    Ok(())
}

/// Evaluate the configured adversarial search and print the exact
/// fraction with a decimal rendering.
pub fn cmd_oracle(config_path: &Path, out: &mut impl Write) -> Result<()> {
    let config = load_config(config_path)?;
    let Some(oracle) = &config.oracle else {
        return Err(CliError::single(
            "oracle",
            None,
            "oracle requires an [oracle] section",
        ));
    };
    let value = adversarial_min(oracle)?;
    let schedule = match &oracle.schedule {
        AdversarialSchedule::UniformRandom => "uniform_random".to_string(),
        AdversarialSchedule::PerTick(pairs) => pairs
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(","),
    };
    writeln!(
        out,
        "adversarial_min T={} schedule={} pc_mode={:?} choice_mode={:?}",
        oracle.num_ticks, schedule, oracle.pc_mode, oracle.choice_mode
    )?;
    writeln!(out, "min {} ({:.8})", value, value.to_f64())?;
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Io(format!("{}:{}: bad record: {e}", path.display(), i + 1))
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(CliError::Core(eprsim_core::CoreError::Empty(format!(
            "{} holds no records",
            path.display()
        ))));
    }
    Ok(records)
}

/// Recompute a report from a records file. With `--config` the full
/// report (including strategy probes and the oracle comparison) is
/// reproduced byte-identically; without it, a counts-and-frequencies
/// summary is printed instead of a full document.
pub fn cmd_report(
    records_path: &Path,
    config_path: Option<&Path>,
    out: &mut impl Write,
) -> Result<()> {
    let records = read_records(records_path)?;
    match config_path {
        Some(config_path) => {
            let config = load_config(config_path)?;
            let trace = AuditTrace {
                entries: records
                    .iter()
                    .map(|r| AuditEntry {
                        tick: r.tick,
                        lambda: r.lambda,
                        iparam1: r.iparam1.id,
                        iparam2: r.iparam2.id,
                    })
                    .collect(),
            };
            let result = RunResult {
                records,
                trace,
                config_echo: config.run.clone(),
            };
            let report = build_report(&config, &result)?;
            out.write_all(&report_json(&report)?)?;
        }
        None => {
            let counts = eprsim_core::stats::tally(&records);
            writeln!(out, "pair same diff total frequency wilson95")?;
            for pair in eprsim_core::model::SettingPair::all() {
                let cell = counts.get(pair);
                if cell.total() == 0 {
                    continue;
                }
                let (lo, hi) = wilson_interval(cell.same, cell.total(), 0.95)?;
                writeln!(
                    out,
                    "{pair} {} {} {} {:.6} [{:.6}, {:.6}]",
                    cell.same,
                    cell.diff,
                    cell.total(),
                    cell.same as f64 / cell.total() as f64,
                    lo,
                    hi
                )?;
            }
            writeln!(
                out,
                "overall {}/{} = {:.6}",
                counts.total_same(),
                counts.total(),
                counts.total_same() as f64 / counts.total() as f64
            )?;
        }
    }
    Ok(())
}
