//! Case bundle reader/writer.
//!
//! A case lives in a directory holding `case.json` (name + MVA base) and
//! three CSV tables mirroring the bus/branch/generator data column for
//! column:
//!
//!   bus.csv:    bus_id,type,gs_pu,bs_pu,v_min,v_max,theta_min,theta_max
//!   branch.csv: from_bus,to_bus,r_pu,x_pu,b_pu,tap,shift_rad,s_max_mva,in_service
//!   gen.csv:    bus_id,p_min_mw,p_max_mw,q_min_mvar,q_max_mvar,cost_coeff
//!
//! Unknown columns produce a warning and are ignored; missing mandatory
//! columns are an error.

use super::{Branch, Bus, BusKind, CaseError, Generator, NetworkCase};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: missing mandatory column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path} row {row}: bad value in `{column}`: {detail}")]
    BadValue {
        path: String,
        row: usize,
        column: String,
        detail: String,
    },
    #[error("case.json: {0}")]
    Meta(String),
    #[error(transparent)]
    Case(#[from] CaseError),
}

#[derive(Debug, Serialize, Deserialize)]
struct CaseMeta {
    name: String,
    base_mva: f64,
}

pub const BUS_COLUMNS: &[&str] = &[
    "bus_id", "type", "gs_pu", "bs_pu", "v_min", "v_max", "theta_min", "theta_max",
];
pub const BRANCH_COLUMNS: &[&str] = &[
    "from_bus", "to_bus", "r_pu", "x_pu", "b_pu", "tap", "shift_rad", "s_max_mva", "in_service",
];
pub const GEN_COLUMNS: &[&str] = &[
    "bus_id", "p_min_mw", "p_max_mw", "q_min_mvar", "q_max_mvar", "cost_coeff",
];

/// Column-indexed view over one CSV table.
struct Table {
    path: String,
    col: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn open(path: &Path, mandatory: &[&str], warnings: &mut Vec<String>) -> Result<Self, CaseIoError> {
        let pstr = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| CaseIoError::Csv {
                path: pstr.clone(),
                source: e,
            })?;
        let headers = rdr
            .headers()
            .map_err(|e| CaseIoError::Csv {
                path: pstr.clone(),
                source: e,
            })?
            .clone();
        let mut col = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            let h = h.trim();
            if !mandatory.contains(&h) {
                warnings.push(format!("{pstr}: ignoring unknown column `{h}`"));
            }
            col.insert(h.to_string(), i);
        }
        for &m in mandatory {
            if !col.contains_key(m) {
                return Err(CaseIoError::MissingColumn {
                    path: pstr,
                    column: m.to_string(),
                });
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec.map_err(|e| CaseIoError::Csv {
                path: pstr.clone(),
                source: e,
            })?);
        }
        Ok(Table { path: pstr, col, rows })
    }

    fn f64(&self, row: usize, column: &str) -> Result<f64, CaseIoError> {
        let raw = &self.rows[row][self.col[column]];
        raw.trim().parse().map_err(|_| CaseIoError::BadValue {
            path: self.path.clone(),
            row: row + 2, // 1-based, plus header
            column: column.to_string(),
            detail: format!("`{raw}` is not a number"),
        })
    }

    fn u32(&self, row: usize, column: &str) -> Result<u32, CaseIoError> {
        let raw = &self.rows[row][self.col[column]];
        raw.trim().parse().map_err(|_| CaseIoError::BadValue {
            path: self.path.clone(),
            row: row + 2,
            column: column.to_string(),
            detail: format!("`{raw}` is not an integer"),
        })
    }

    fn str(&self, row: usize, column: &str) -> &str {
        self.rows[row][self.col[column]].trim()
    }
}

/// Read a case bundle; returns the case plus any unknown-column warnings.
pub fn read_case(dir: &Path) -> Result<(NetworkCase, Vec<String>), CaseIoError> {
    let meta_path = dir.join("case.json");
    let meta: CaseMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(|e| CaseIoError::Io {
            path: meta_path.display().to_string(),
            source: e,
        })?,
    )
    .map_err(|e| CaseIoError::Meta(e.to_string()))?;

    let mut warnings = Vec::new();
    let bus_t = Table::open(&dir.join("bus.csv"), BUS_COLUMNS, &mut warnings)?;
    let br_t = Table::open(&dir.join("branch.csv"), BRANCH_COLUMNS, &mut warnings)?;
    let gen_t = Table::open(&dir.join("gen.csv"), GEN_COLUMNS, &mut warnings)?;

    let mut buses = Vec::with_capacity(bus_t.rows.len());
    for r in 0..bus_t.rows.len() {
        let kind = match bus_t.str(r, "type").to_ascii_lowercase().as_str() {
            "slack" | "ref" | "3" => BusKind::Slack,
            "pv" | "2" => BusKind::Pv,
            "pq" | "1" => BusKind::Pq,
            other => {
                return Err(CaseIoError::BadValue {
                    path: bus_t.path.clone(),
                    row: r + 2,
                    column: "type".into(),
                    detail: format!("`{other}` is not one of slack/pv/pq"),
                })
            }
        };
        buses.push(Bus {
            id: bus_t.u32(r, "bus_id")?,
            kind,
            gs_pu: bus_t.f64(r, "gs_pu")?,
            bs_pu: bus_t.f64(r, "bs_pu")?,
            v_min: bus_t.f64(r, "v_min")?,
            v_max: bus_t.f64(r, "v_max")?,
            theta_min: bus_t.f64(r, "theta_min")?,
            theta_max: bus_t.f64(r, "theta_max")?,
        });
    }

    let mut branches = Vec::with_capacity(br_t.rows.len());
    for r in 0..br_t.rows.len() {
        branches.push(Branch {
            from_bus: br_t.u32(r, "from_bus")?,
            to_bus: br_t.u32(r, "to_bus")?,
            r_pu: br_t.f64(r, "r_pu")?,
            x_pu: br_t.f64(r, "x_pu")?,
            b_pu: br_t.f64(r, "b_pu")?,
            tap: br_t.f64(r, "tap")?,
            shift_rad: br_t.f64(r, "shift_rad")?,
            s_max_mva: br_t.f64(r, "s_max_mva")?,
            in_service: br_t.f64(r, "in_service")? != 0.0,
        });
    }

    let mut gens = Vec::with_capacity(gen_t.rows.len());
    for r in 0..gen_t.rows.len() {
        gens.push(Generator {
            bus: gen_t.u32(r, "bus_id")?,
            p_min_mw: gen_t.f64(r, "p_min_mw")?,
            p_max_mw: gen_t.f64(r, "p_max_mw")?,
            q_min_mvar: gen_t.f64(r, "q_min_mvar")?,
            q_max_mvar: gen_t.f64(r, "q_max_mvar")?,
            cost_coeff: gen_t.f64(r, "cost_coeff")?,
        });
    }

    let case = NetworkCase::new(meta.name, meta.base_mva, buses, branches, gens)?;
    Ok((case, warnings))
}

/// Write a case bundle into `dir` (created if absent).
pub fn write_case(dir: &Path, case: &NetworkCase) -> Result<(), CaseIoError> {
    std::fs::create_dir_all(dir).map_err(|e| CaseIoError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let meta = CaseMeta {
        name: case.name().to_string(),
        base_mva: case.base_mva(),
    };
    let meta_path = dir.join("case.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap()).map_err(|e| {
        CaseIoError::Io {
            path: meta_path.display().to_string(),
            source: e,
        }
    })?;

    let io_err = |path: &Path, e: csv::Error| CaseIoError::Csv {
        path: path.display().to_string(),
        source: e,
    };

    let bus_path = dir.join("bus.csv");
    let mut w = csv::Writer::from_path(&bus_path).map_err(|e| io_err(&bus_path, e))?;
    w.write_record(BUS_COLUMNS).map_err(|e| io_err(&bus_path, e))?;
    for b in case.buses() {
        let kind = match b.kind {
            BusKind::Slack => "slack",
            BusKind::Pv => "pv",
            BusKind::Pq => "pq",
        };
        w.write_record(&[
            b.id.to_string(),
            kind.to_string(),
            b.gs_pu.to_string(),
            b.bs_pu.to_string(),
            b.v_min.to_string(),
            b.v_max.to_string(),
            b.theta_min.to_string(),
            b.theta_max.to_string(),
        ])
        .map_err(|e| io_err(&bus_path, e))?;
    }
    w.flush().map_err(|e| CaseIoError::Io {
        path: bus_path.display().to_string(),
        source: e,
    })?;

    let br_path = dir.join("branch.csv");
    let mut w = csv::Writer::from_path(&br_path).map_err(|e| io_err(&br_path, e))?;
    w.write_record(BRANCH_COLUMNS).map_err(|e| io_err(&br_path, e))?;
    for br in case.branches() {
        w.write_record(&[
            br.from_bus.to_string(),
            br.to_bus.to_string(),
            br.r_pu.to_string(),
            br.x_pu.to_string(),
            br.b_pu.to_string(),
            br.tap.to_string(),
            br.shift_rad.to_string(),
            br.s_max_mva.to_string(),
            if br.in_service { "1" } else { "0" }.to_string(),
        ])
        .map_err(|e| io_err(&br_path, e))?;
    }
    w.flush().map_err(|e| CaseIoError::Io {
        path: br_path.display().to_string(),
        source: e,
    })?;

    let gen_path = dir.join("gen.csv");
    let mut w = csv::Writer::from_path(&gen_path).map_err(|e| io_err(&gen_path, e))?;
    w.write_record(GEN_COLUMNS).map_err(|e| io_err(&gen_path, e))?;
    for g in case.generators() {
        w.write_record(&[
            g.bus.to_string(),
            g.p_min_mw.to_string(),
            g.p_max_mw.to_string(),
            g.q_min_mvar.to_string(),
            g.q_max_mvar.to_string(),
            g.cost_coeff.to_string(),
        ])
        .map_err(|e| io_err(&gen_path, e))?;
    }
    w.flush().map_err(|e| CaseIoError::Io {
        path: gen_path.display().to_string(),
        source: e,
    })?;
    Ok(())
}
