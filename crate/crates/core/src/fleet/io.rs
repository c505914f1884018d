//! Fleet bundle reader/writer.
//!
//! A fleet lives in a directory holding one record table plus the seven
//! condition matrices under fixed names:
//!
//!   batt.csv  — one row per device:
//!     bus,soc_opt,pch_opt_mw,pdich_opt_mw,qinj_opt_mvar,soc_max,soc_min,
//!     qs_max_mvar,qs_min_mvar,mbase,pch_max_mw,pdch_max_mw,eff_ch,eff_dich,
//!     e_max_mwh,pch_min_mw,pdch_min_mw
//!   avbp.csv conch.csv condi.csv avbq.csv soci.csv socmi.csv — n_y x T,
//!   avg.csv — n_g x T; all matrix files are headerless numeric CSV.

use super::{FleetSpec, StorageDevice};
use crate::mat::Mat;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FleetIoError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: missing mandatory column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path} row {row}: bad numeric value `{value}`")]
    BadValue { path: String, row: usize, value: String },
    #[error("{path}: ragged matrix rows")]
    Ragged { path: String },
    #[error("matrix {path} is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    Shape { path: String, rows: usize, cols: usize, got_rows: usize, got_cols: usize },
}

pub const BATT_COLUMNS: &[&str] = &[
    "bus", "soc_opt", "pch_opt_mw", "pdich_opt_mw", "qinj_opt_mvar", "soc_max", "soc_min",
    "qs_max_mvar", "qs_min_mvar", "mbase", "pch_max_mw", "pdch_max_mw", "eff_ch", "eff_dich",
    "e_max_mwh", "pch_min_mw", "pdch_min_mw",
];

pub const MATRIX_FILES: &[&str] = &[
    "avbp.csv", "conch.csv", "condi.csv", "avbq.csv", "avg.csv", "soci.csv", "socmi.csv",
];

/// Write a headerless numeric CSV matrix, optionally preceded by `#`
/// comment lines (manifest stamps).
pub fn write_matrix(path: &Path, m: &Mat, comments: &[String]) -> Result<(), FleetIoError> {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 8);
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| FleetIoError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Read a headerless numeric CSV matrix; `#` comment lines are skipped.
pub fn read_matrix(path: &Path) -> Result<Mat, FleetIoError> {
    let pstr = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| FleetIoError::Io {
        path: pstr.clone(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| FleetIoError::BadValue {
                path: pstr.clone(),
                row: i + 1,
                value: field.to_string(),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Mat::from_rows(rows).ok_or(FleetIoError::Ragged { path: pstr })
}

pub fn write_fleet(dir: &Path, fleet: &FleetSpec) -> Result<(), FleetIoError> {
    std::fs::create_dir_all(dir).map_err(|e| FleetIoError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let batt_path = dir.join("batt.csv");
    let mut w = csv::Writer::from_path(&batt_path).map_err(|e| FleetIoError::Csv {
        path: batt_path.display().to_string(),
        source: e,
    })?;
    w.write_record(BATT_COLUMNS).map_err(|e| FleetIoError::Csv {
        path: batt_path.display().to_string(),
        source: e,
    })?;
    for d in &fleet.devices {
        w.write_record(&[
            d.bus.to_string(),
            d.soc_opt.to_string(),
            d.pch_opt_mw.to_string(),
            d.pdch_opt_mw.to_string(),
            d.qinj_opt_mvar.to_string(),
            d.soc_max.to_string(),
            d.soc_min.to_string(),
            d.q_s_max_mvar.to_string(),
            d.q_s_min_mvar.to_string(),
            d.mbase.to_string(),
            d.p_ch_max_mw.to_string(),
            d.p_dch_max_mw.to_string(),
            d.eff_ch.to_string(),
            d.eff_dch.to_string(),
            d.e_max_mwh.to_string(),
            d.p_ch_min_mw.to_string(),
            d.p_dch_min_mw.to_string(),
        ])
        .map_err(|e| FleetIoError::Csv {
            path: batt_path.display().to_string(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| FleetIoError::Io {
        path: batt_path.display().to_string(),
        source: e,
    })?;

    for (name, m) in [
        ("avbp.csv", &fleet.avbp),
        ("conch.csv", &fleet.conch),
        ("condi.csv", &fleet.condi),
        ("avbq.csv", &fleet.avbq),
        ("avg.csv", &fleet.avg),
        ("soci.csv", &fleet.soci),
        ("socmi.csv", &fleet.socmi),
    ] {
        write_matrix(&dir.join(name), m, &[])?;
    }
    Ok(())
}

pub fn read_fleet(dir: &Path) -> Result<FleetSpec, FleetIoError> {
    let batt_path = dir.join("batt.csv");
    let pstr = batt_path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&batt_path)
        .map_err(|e| FleetIoError::Csv {
            path: pstr.clone(),
            source: e,
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| FleetIoError::Csv {
            path: pstr.clone(),
            source: e,
        })?
        .clone();
    let mut col = std::collections::HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        col.insert(h.trim().to_string(), i);
    }
    for &c in BATT_COLUMNS {
        if !col.contains_key(c) {
            return Err(FleetIoError::MissingColumn {
                path: pstr,
                column: c.to_string(),
            });
        }
    }
    let mut devices = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FleetIoError::Csv {
            path: pstr.clone(),
            source: e,
        })?;
        let f = |name: &str| -> Result<f64, FleetIoError> {
            let raw = &rec[col[name]];
            raw.trim().parse().map_err(|_| FleetIoError::BadValue {
                path: pstr.clone(),
                row: r + 2,
                value: raw.to_string(),
            })
        };
        devices.push(StorageDevice {
            bus: f("bus")? as u32,
            soc_opt: f("soc_opt")?,
            pch_opt_mw: f("pch_opt_mw")?,
            pdch_opt_mw: f("pdich_opt_mw")?,
            qinj_opt_mvar: f("qinj_opt_mvar")?,
            soc_max: f("soc_max")?,
            soc_min: f("soc_min")?,
            q_s_max_mvar: f("qs_max_mvar")?,
            q_s_min_mvar: f("qs_min_mvar")?,
            mbase: f("mbase")?,
            p_ch_max_mw: f("pch_max_mw")?,
            p_dch_max_mw: f("pdch_max_mw")?,
            eff_ch: f("eff_ch")?,
            eff_dch: f("eff_dich")?,
            e_max_mwh: f("e_max_mwh")?,
            p_ch_min_mw: f("pch_min_mw")?,
            p_dch_min_mw: f("pdch_min_mw")?,
        });
    }

    let n_y = devices.len();
    let avbp = read_matrix(&dir.join("avbp.csv"))?;
    let t = avbp.ncols();
    let expect = |name: &str, m: Mat, rows: usize| -> Result<Mat, FleetIoError> {
        if m.nrows() != rows || m.ncols() != t {
            return Err(FleetIoError::Shape {
                path: dir.join(name).display().to_string(),
                rows,
                cols: t,
                got_rows: m.nrows(),
                got_cols: m.ncols(),
            });
        }
        Ok(m)
    };
    let avbp = expect("avbp.csv", avbp, n_y)?;
    let conch = expect("conch.csv", read_matrix(&dir.join("conch.csv"))?, n_y)?;
    let condi = expect("condi.csv", read_matrix(&dir.join("condi.csv"))?, n_y)?;
    let avbq = expect("avbq.csv", read_matrix(&dir.join("avbq.csv"))?, n_y)?;
    let soci = expect("soci.csv", read_matrix(&dir.join("soci.csv"))?, n_y)?;
    let socmi = expect("socmi.csv", read_matrix(&dir.join("socmi.csv"))?, n_y)?;
    let avg = read_matrix(&dir.join("avg.csv"))?;
    if avg.ncols() != t {
        return Err(FleetIoError::Shape {
            path: dir.join("avg.csv").display().to_string(),
            rows: avg.nrows(),
            cols: t,
            got_rows: avg.nrows(),
            got_cols: avg.ncols(),
        });
    }

    Ok(FleetSpec {
        devices,
        avbp,
        conch,
        condi,
        avbq,
        avg,
        soci,
        socmi,
    })
}
