//! Output-side plumbing: manifests, stamped CSV writers, report files.

use anyhow::{Context, Result};
use evopf_core::strategies::{ComparisonTable, HostingReport, StrategyReport};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const TOOL: &str = "evopf";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Reproducibility record written next to every command's outputs and
/// stamped as a comment line onto each CSV.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    /// SHA-256 of the parameter set in canonical JSON.
    pub params_hash: String,
    /// SHA-256 per input file or bundle member.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 per produced file, filled as they are written.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, params: &impl Serialize) -> Self {
        let params_json = serde_json::to_vec(params).expect("serializable params");
        Manifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            seed,
            params_hash: hex_digest(&params_json),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// One-line stamp placed at the top of CSV outputs.
    pub fn stamp(&self) -> String {
        format!(
            "{} {} {} seed={} params={}",
            self.tool,
            self.version,
            self.command,
            self.seed.map_or("-".into(), |s| s.to_string()),
            &self.params_hash[..16],
        )
    }

    pub fn add_input_file(&mut self, label: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading input {}", path.display()))?;
        self.inputs.insert(label.into(), hex_digest(&bytes));
        Ok(())
    }

    /// Hash a directory bundle: every regular file, sorted by name.
    pub fn add_input_dir(&mut self, label: &str, dir: &Path) -> Result<()> {
        let mut names: Vec<_> = std::fs::read_dir(dir)
            .with_context(|| format!("reading bundle {}", dir.display()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.path())
            .collect();
        names.sort();
        let mut hasher = Sha256::new();
        for p in names {
            hasher.update(std::fs::read(&p)?);
        }
        self.inputs
            .insert(label.into(), format!("{:x}", hasher.finalize()));
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.outputs.insert(name, hex_digest(&bytes));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Write a CSV file: manifest stamp comment, header, rows.
pub fn write_csv(
    path: &Path,
    stamp: &str,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str("# ");
    out.push_str(stamp);
    out.push('\n');
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

/// Per-period series of one strategy run.
pub fn write_period_series(path: &Path, stamp: &str, report: &StrategyReport) -> Result<()> {
    write_csv(
        path,
        stamp,
        &[
            "period",
            "price_nok_mwh",
            "gen_mw",
            "load_mw",
            "ev_charge_mw",
            "ev_discharge_mw",
            "loss_mw",
            "v_min_pu",
            "v_max_pu",
            "max_load_ratio_percent",
            "solved",
        ],
        report.periods.iter().enumerate().map(|(t, p)| {
            vec![
                t.to_string(),
                fmt(p.price_nok_mwh),
                fmt(p.gen_mw),
                fmt(p.load_mw),
                fmt(p.ev_charge_mw),
                fmt(p.ev_discharge_mw),
                fmt(p.loss_mw),
                fmt(p.v_min_pu),
                fmt(p.v_max_pu),
                p.max_load_ratio.map_or("-".into(), fmt),
                (p.solved as u8).to_string(),
            ]
        }),
    )
}

pub fn write_violations(path: &Path, stamp: &str, report: &StrategyReport) -> Result<()> {
    use evopf_core::strategies::Element;
    write_csv(
        path,
        stamp,
        &["period", "kind", "element", "magnitude"],
        report.violations.iter().map(|v| {
            let (kind, element) = match v.element {
                Element::BranchOverload { branch, from_side } => (
                    "overload",
                    format!("branch:{branch}:{}", if from_side { "from" } else { "to" }),
                ),
                Element::UnderVoltage { bus } => ("undervoltage", format!("bus:{bus}")),
                Element::OverVoltage { bus } => ("overvoltage", format!("bus:{bus}")),
            };
            vec![
                v.period.to_string(),
                kind.to_string(),
                element,
                fmt(v.magnitude),
            ]
        }),
    )
}

/// Summary of one run, mirrored as CSV and JSON.
#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    pub strategy: &'a str,
    pub status: String,
    pub energy_mwh: f64,
    pub loss_mwh: f64,
    pub cost_nok: f64,
    pub violations: usize,
    pub unserved_ev_energy_mwh: f64,
    pub scenario_id: String,
}

impl<'a> RunSummary<'a> {
    pub fn from_report(r: &'a StrategyReport) -> Self {
        RunSummary {
            strategy: r.strategy.label(),
            status: format!("{:?}", r.status),
            energy_mwh: r.energy_mwh,
            loss_mwh: r.loss_mwh,
            cost_nok: r.cost_nok,
            violations: r.violations.len(),
            unserved_ev_energy_mwh: r.unserved_ev_energy_mwh,
            scenario_id: format!("{:016x}", r.scenario_id),
        }
    }
}

pub fn write_summary(dir: &Path, stamp: &str, report: &StrategyReport) -> Result<()> {
    let s = RunSummary::from_report(report);
    write_csv(
        &dir.join("summary.csv"),
        stamp,
        &[
            "strategy",
            "status",
            "energy_mwh",
            "loss_mwh",
            "cost_nok",
            "violations",
            "unserved_ev_energy_mwh",
            "scenario_id",
        ],
        std::iter::once(vec![
            s.strategy.to_string(),
            s.status.clone(),
            fmt(s.energy_mwh),
            fmt(s.loss_mwh),
            fmt(s.cost_nok),
            s.violations.to_string(),
            fmt(s.unserved_ev_energy_mwh),
            s.scenario_id.clone(),
        ]),
    )?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&s)?,
    )?;
    Ok(())
}

/// Long-format plot data: period, series, value.
pub fn write_plot_series(path: &Path, stamp: &str, report: &StrategyReport) -> Result<()> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (t, p) in report.periods.iter().enumerate() {
        let mut push = |series: &str, value: f64| {
            rows.push(vec![t.to_string(), series.to_string(), fmt(value)]);
        };
        push("gen_mw", p.gen_mw);
        push("load_mw", p.load_mw);
        push("ev_charge_mw", p.ev_charge_mw);
        push("loss_mw", p.loss_mw);
        push("v_min_pu", p.v_min_pu);
        push("v_max_pu", p.v_max_pu);
        push("price_nok_mwh", p.price_nok_mwh);
        if let Some(r) = p.max_load_ratio {
            push("max_load_ratio_percent", r);
        }
    }
    // SOC trajectories for the fleet-average view
    let n_y = report.soc.nrows();
    if n_y > 0 {
        for t in 0..report.soc.ncols() {
            let avg: f64 = (0..n_y).map(|i| report.soc.get(i, t)).sum::<f64>() / n_y as f64;
            rows.push(vec![t.to_string(), "soc_avg".into(), fmt(avg)]);
        }
    }
    write_csv(path, stamp, &["period", "series", "value"], rows.into_iter())
}

pub fn write_trace(path: &Path, stamp: &str, report: &StrategyReport) -> Result<()> {
    let log = report.solver_log.as_deref().unwrap_or(&[]);
    write_csv(
        path,
        stamp,
        &[
            "iter",
            "barrier",
            "primal_inf",
            "dual_inf",
            "complementarity",
            "step_primal",
            "step_dual",
            "objective",
        ],
        log.iter().map(|r| {
            vec![
                r.iter.to_string(),
                format!("{:.3e}", r.barrier),
                format!("{:.3e}", r.primal_inf),
                format!("{:.3e}", r.dual_inf),
                format!("{:.3e}", r.complementarity),
                fmt(r.step_primal),
                fmt(r.step_dual),
                fmt(r.objective),
            ]
        }),
    )
}

pub fn write_comparison(dir: &Path, stamp: &str, table: &ComparisonTable) -> Result<()> {
    write_csv(
        &dir.join("comparison.csv"),
        stamp,
        &[
            "strategy",
            "status",
            "energy_mwh",
            "loss_mwh",
            "cost_nok",
            "daily_saving_nok",
            "daily_saving_percent",
            "yearly_saving_extrapolated_nok",
            "hosting_capacity_evs",
        ],
        table.rows.iter().map(|r| {
            vec![
                r.strategy.label().to_string(),
                format!("{:?}", r.status),
                fmt(r.energy_mwh),
                fmt(r.loss_mwh),
                fmt(r.cost_nok),
                fmt(r.daily_saving_nok),
                fmt(r.daily_saving_percent),
                fmt(r.yearly_saving_extrapolated_nok),
                r.hosting_capacity_evs
                    .map_or("-".into(), |c| c.to_string()),
            ]
        }),
    )?;
    std::fs::write(
        dir.join("comparison.json"),
        serde_json::to_string_pretty(table)?,
    )?;
    Ok(())
}

pub fn write_hosting(dir: &Path, stamp: &str, report: &HostingReport) -> Result<()> {
    let name = format!("hosting_{}.csv", report.strategy.label());
    write_csv(
        &dir.join(&name),
        stamp,
        &[
            "n_evs",
            "max_load_ratio_percent",
            "min_voltage_pu",
            "violated",
        ],
        report.rows.iter().map(|r| {
            vec![
                r.n_evs.to_string(),
                r.max_load_ratio.map_or("-".into(), fmt),
                fmt(r.min_voltage_pu),
                (r.violated as u8).to_string(),
            ]
        }),
    )?;
    let json = format!("hosting_{}.json", report.strategy.label());
    std::fs::write(dir.join(json), serde_json::to_string_pretty(report)?)?;
    Ok(())
}
