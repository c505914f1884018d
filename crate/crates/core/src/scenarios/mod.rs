//! Scenario generation: EV fleet sampling from driving statistics,
//! consumer base-load disaggregation from feeder history, and day-ahead
//! price ingestion. All generators are pure functions of an explicit seed.

pub mod synth;

use crate::fleet::{extract_plug_events, FleetSpec, PlugEvent, StorageDevice};
use crate::grid::NetworkCase;
use crate::mat::Mat;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("horizon of {t} periods at {dt_h} h cannot contain any plug window")]
    HorizonTooShort { t: usize, dt_h: f64 },
    #[error("price file covers {got} hourly rows, horizon needs {needed}; missing hours {missing:?}")]
    MissingHours {
        needed: usize,
        got: usize,
        missing: Vec<usize>,
    },
    #[error("price file row {row}: {detail}")]
    BadPriceRow { row: usize, detail: String },
    #[error("transformer snapshot sums to zero active power")]
    ZeroSnapshot,
    #[error("transformer {0} has zero total consumer energy")]
    ZeroEnergy(usize),
    #[error("consumer {consumer} of transformer {transformer} maps to unknown bus {bus}")]
    UnknownBus {
        transformer: usize,
        consumer: usize,
        bus: u32,
    },
    #[error("history shape mismatch: {0}")]
    Shape(String),
    #[error("history covers {got} hours, horizon needs {needed}")]
    ShortHistory { needed: usize, got: usize },
}

/// Population statistics driving the EV sampler; defaults follow the
/// Norwegian driving/charging statistics used throughout the study.
#[derive(Debug, Clone)]
pub struct EvPopulationParams {
    pub mean_distance_km: f64,
    pub sd_distance_km: f64,
    /// Day-to-day variation: sd as a fraction of the owner's fixed distance.
    pub daily_sd_fraction: f64,
    /// Share of the population in the efficient consumption group.
    pub group_a_share: f64,
    pub consumption_a_kwh_per_100km: f64,
    pub consumption_b_kwh_per_100km: f64,
    pub battery_a_kwh: f64,
    pub battery_b_kwh: f64,
    /// Arrival time in minutes after the horizon start (noon-to-noon
    /// window: 300 min = 17:00).
    pub arrival_mean_min: f64,
    pub arrival_population_sd_min: f64,
    pub arrival_daily_sd_min: f64,
    /// Plug-in duration in hours (overnight stay).
    pub plug_duration_h: f64,
    /// (rated kW, population share) of the charger classes.
    pub charger_classes: [(f64, f64); 3],
    pub evs_per_household: f64,
    pub charger_efficiency: f64,
    pub required_departure_soc: f64,
}

impl Default for EvPopulationParams {
    fn default() -> Self {
        EvPopulationParams {
            mean_distance_km: 52.0,
            sd_distance_km: 22.0,
            daily_sd_fraction: 0.10,
            group_a_share: 0.80,
            consumption_a_kwh_per_100km: 17.0,
            consumption_b_kwh_per_100km: 21.0,
            battery_a_kwh: 30.0,
            battery_b_kwh: 60.0,
            arrival_mean_min: 300.0,
            arrival_population_sd_min: 90.0,
            arrival_daily_sd_min: 15.0,
            plug_duration_h: 14.5,
            charger_classes: [(2.3, 0.70), (3.7, 0.20), (11.0, 0.10)],
            evs_per_household: 1.3,
            charger_efficiency: 1.0,
            required_departure_soc: 1.0,
        }
    }
}

/// Per-EV sample drawn by [`generate_fleet`]; exposed for statistics tests
/// and reporting.
#[derive(Debug, Clone)]
pub struct EvSample {
    pub household: usize,
    pub bus: u32,
    pub fixed_distance_km: f64,
    pub day_distance_km: f64,
    pub consumption_kwh_per_100km: f64,
    pub charger_kw: f64,
    pub battery_kwh: f64,
    pub demand_kwh: f64,
    pub arrival_min: f64,
    pub departure_min: f64,
}

fn sample_positive(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("valid normal");
    loop {
        let v = dist.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Sample one EV. Charger class is drawn from the stated population
/// shares; the efficient consumption group takes every small charger plus
/// a third of the larger ones, which reproduces both the 80/20 group
/// split and the 70/20/10 charger split in expectation.
fn sample_ev(params: &EvPopulationParams, rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64, f64) {
    let fixed = sample_positive(rng, params.mean_distance_km, params.sd_distance_km);
    let day = sample_positive(rng, fixed, params.daily_sd_fraction * fixed);

    let u: f64 = rng.gen();
    let [(kw0, s0), (kw1, s1), (kw2, _)] = params.charger_classes;
    let charger = if u < s0 {
        kw0
    } else if u < s0 + s1 {
        kw1
    } else {
        kw2
    };
    let group_a = if charger == kw0 {
        true
    } else {
        let residual_a = (params.group_a_share - s0) / (1.0 - s0);
        rng.gen::<f64>() < residual_a
    };
    let consumption = if group_a {
        params.consumption_a_kwh_per_100km
    } else {
        params.consumption_b_kwh_per_100km
    };
    let battery = if group_a {
        params.battery_a_kwh
    } else {
        params.battery_b_kwh
    };
    (fixed, day, consumption, charger, battery)
}

/// Generate a fleet over `household_buses` (one entry per household,
/// giving its connection bus). EV count is the rounded household count
/// times the ownership rate; EVs are assigned to households round-robin.
pub fn generate_fleet(
    params: &EvPopulationParams,
    household_buses: &[u32],
    seed: u64,
    t_count: usize,
    dt_h: f64,
    n_generators: usize,
) -> Result<(FleetSpec, Vec<PlugEvent>, Vec<EvSample>), ScenarioError> {
    let horizon_min = t_count as f64 * dt_h * 60.0;
    if horizon_min <= params.arrival_mean_min {
        return Err(ScenarioError::HorizonTooShort { t: t_count, dt_h });
    }
    let n_h = household_buses.len();
    let n_ev = (params.evs_per_household * n_h as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut fleet = FleetSpec::idle(n_ev, n_generators, t_count);
    let mut samples = Vec::with_capacity(n_ev);

    for j in 0..n_ev {
        let household = j % n_h;
        let bus = household_buses[household];
        let (fixed_km, day_km, consumption, charger_kw, battery_kwh) =
            sample_ev(params, &mut rng);
        let demand_kwh = day_km * consumption / 100.0;

        let person_mean = sample_positive(
            &mut rng,
            params.arrival_mean_min,
            params.arrival_population_sd_min,
        );
        let arrival_min =
            sample_positive(&mut rng, person_mean, params.arrival_daily_sd_min.max(1e-9));
        let departure_min = arrival_min + params.plug_duration_h * 60.0;

        let dt_min = dt_h * 60.0;
        let arrive_t = ((arrival_min / dt_min).floor() as usize).min(t_count - 1);
        let depart_t = ((departure_min / dt_min).floor() as usize).clamp(arrive_t, t_count - 1);

        let soc_init = (1.0 - demand_kwh / battery_kwh).max(0.0);
        let mut dev = StorageDevice::charger(
            bus,
            battery_kwh / 1000.0,
            charger_kw / 1000.0,
            params.charger_efficiency,
        );
        dev.soc_opt = soc_init;
        fleet.devices.push(dev);
        for t in arrive_t..=depart_t {
            fleet.avbp.set(j, t, 1.0);
            fleet.conch.set(j, t, 1.0);
        }
        fleet.soci.set(j, arrive_t, soc_init);
        fleet.socmi.set(j, depart_t, params.required_departure_soc);

        samples.push(EvSample {
            household,
            bus,
            fixed_distance_km: fixed_km,
            day_distance_km: day_km,
            consumption_kwh_per_100km: consumption,
            charger_kw,
            battery_kwh,
            demand_kwh,
            arrival_min,
            departure_min,
        });
    }

    let events = extract_plug_events(&fleet);
    Ok((fleet, events, samples))
}

/// Measured feeder history feeding the base-load disaggregation: hourly
/// feeder production, one reference per-transformer snapshot, and the
/// yearly consumer energies grouped under their transformer.
#[derive(Debug, Clone)]
pub struct FeederHistory {
    pub p_pcc_mw: Vec<f64>,
    pub p_gen_mw: Vec<f64>,
    /// Reference snapshot: active/reactive load per transformer.
    pub snapshot_p_mw: Vec<f64>,
    pub snapshot_q_mvar: Vec<f64>,
    /// Annual energy per consumer, grouped per transformer.
    pub consumer_energy_kwh: Vec<Vec<f64>>,
    /// Connection bus per consumer, same grouping.
    pub consumer_bus: Vec<Vec<u32>>,
}

/// Split feeder-level history into bus-level PD/QD series.
///
/// Shares: each transformer takes a fixed fraction of the feeder total
/// (its snapshot share of active power); its reactive load follows its
/// snapshot reactive-to-active ratio; each consumer takes its share of
/// yearly energy within the transformer. Hourly values are repeated
/// across the sub-hour periods.
pub fn disaggregate_baseload(
    history: &FeederHistory,
    case: &NetworkCase,
    t_count: usize,
    dt_h: f64,
) -> Result<(Mat, Mat), ScenarioError> {
    let n_tr = history.snapshot_p_mw.len();
    if history.snapshot_q_mvar.len() != n_tr
        || history.consumer_energy_kwh.len() != n_tr
        || history.consumer_bus.len() != n_tr
    {
        return Err(ScenarioError::Shape(format!(
            "expected {n_tr} transformers in every grouped field"
        )));
    }
    if history.p_gen_mw.len() != history.p_pcc_mw.len() {
        return Err(ScenarioError::Shape(
            "PCC and generator series differ in length".into(),
        ));
    }
    let hours_needed = ((t_count as f64) * dt_h).ceil() as usize;
    if history.p_pcc_mw.len() < hours_needed {
        return Err(ScenarioError::ShortHistory {
            needed: hours_needed,
            got: history.p_pcc_mw.len(),
        });
    }

    let p_total_snap: f64 = history.snapshot_p_mw.iter().sum();
    if p_total_snap <= 0.0 {
        return Err(ScenarioError::ZeroSnapshot);
    }
    let q_total_snap: f64 = history.snapshot_q_mvar.iter().sum();
    // share of each transformer, reactive ratio per transformer, and the
    // feeder-wide reactive-to-active ratio
    let kappa: Vec<f64> = history.snapshot_p_mw.iter().map(|p| p / p_total_snap).collect();
    let phi: Vec<f64> = history
        .snapshot_p_mw
        .iter()
        .zip(&history.snapshot_q_mvar)
        .map(|(&p, &q)| if p > 0.0 { q / p } else { 0.0 })
        .collect();
    let phi_total = q_total_snap / p_total_snap;

    let mut psi: Vec<Vec<f64>> = Vec::with_capacity(n_tr);
    for (i, energies) in history.consumer_energy_kwh.iter().enumerate() {
        let sum: f64 = energies.iter().sum();
        if sum <= 0.0 {
            return Err(ScenarioError::ZeroEnergy(i));
        }
        if history.consumer_bus[i].len() != energies.len() {
            return Err(ScenarioError::Shape(format!(
                "transformer {i}: {} consumers but {} buses",
                energies.len(),
                history.consumer_bus[i].len()
            )));
        }
        psi.push(energies.iter().map(|e| e / sum).collect());
    }

    // feeder-wide reactive ratio is implied by the per-transformer split:
    // sum_i kappa_i phi_i equals Q_snap / P_snap when shares are consistent
    debug_assert!(
        (kappa.iter().zip(&phi).map(|(k, f)| k * f).sum::<f64>() - phi_total).abs() < 1e-9
    );

    let mut pd = Mat::zeros(case.n_buses(), t_count);
    let mut qd = Mat::zeros(case.n_buses(), t_count);
    for t in 0..t_count {
        let hour = ((t as f64) * dt_h).floor() as usize;
        let p_tot = history.p_pcc_mw[hour] + history.p_gen_mw[hour];
        for i in 0..n_tr {
            let p_trans = kappa[i] * p_tot;
            let q_trans = phi[i] * p_trans;
            for (j, &share) in psi[i].iter().enumerate() {
                let bus = history.consumer_bus[i][j];
                let b = case.bus_index(bus).ok_or(ScenarioError::UnknownBus {
                    transformer: i,
                    consumer: j,
                    bus,
                })?;
                pd.set(b, t, pd.get(b, t) + share * p_trans);
                qd.set(b, t, qd.get(b, t) + share * q_trans);
            }
        }
    }
    Ok((pd, qd))
}

/// Reference coefficient of variation of a flat Nordic price year; series
/// above this ratio are flagged volatile.
pub const VOLATILE_CV_THRESHOLD: f64 = 81.2 / 386.8;

#[derive(Debug, Clone)]
pub struct PriceSeries {
    /// Price per optimization period, NOK/MWh.
    pub per_period_nok_mwh: Vec<f64>,
    /// The hourly values the file provided (full file, not truncated).
    pub hourly_nok_mwh: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub volatile: bool,
}

impl PriceSeries {
    pub fn from_hourly(
        hourly: &[f64],
        t_count: usize,
        dt_h: f64,
    ) -> Result<PriceSeries, ScenarioError> {
        let hours_needed = ((t_count as f64) * dt_h).ceil() as usize;
        if hourly.len() < hours_needed {
            let missing = (hourly.len()..hours_needed).collect();
            return Err(ScenarioError::MissingHours {
                needed: hours_needed,
                got: hourly.len(),
                missing,
            });
        }
        let per_period = (0..t_count)
            .map(|t| hourly[((t as f64) * dt_h).floor() as usize])
            .collect();
        let n = hourly.len() as f64;
        let mean = hourly.iter().sum::<f64>() / n;
        let var = hourly.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        Ok(PriceSeries {
            per_period_nok_mwh: per_period,
            hourly_nok_mwh: hourly.to_vec(),
            mean,
            sd,
            volatile: mean > 0.0 && sd / mean > VOLATILE_CV_THRESHOLD,
        })
    }
}

/// Parse a `timestamp,price_nok_mwh` CSV; rows are matched to hours by
/// order, timestamps are not interpreted.
pub fn load_price_series(
    reader: impl std::io::Read,
    t_count: usize,
    dt_h: f64,
) -> Result<PriceSeries, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut hourly = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ScenarioError::BadPriceRow {
            row: i + 2,
            detail: e.to_string(),
        })?;
        if rec.len() < 2 {
            return Err(ScenarioError::BadPriceRow {
                row: i + 2,
                detail: "expected two columns: timestamp,price_nok_mwh".into(),
            });
        }
        let price: f64 = rec[1].trim().parse().map_err(|_| ScenarioError::BadPriceRow {
            row: i + 2,
            detail: format!("`{}` is not a number", &rec[1]),
        })?;
        hourly.push(price);
    }
    PriceSeries::from_hourly(&hourly, t_count, dt_h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, NetworkCase};

    #[test]
    fn household_count_gives_paper_fleet_size() {
        // 856 households at 1.3 EVs per household round to 1113 EVs
        let params = EvPopulationParams::default();
        let buses: Vec<u32> = (0..856).map(|i| 2 + (i % 5) as u32).collect();
        let (fleet, events, _) = generate_fleet(&params, &buses, 7, 96, 0.25, 1).unwrap();
        assert_eq!(fleet.n_devices(), 1113);
        assert_eq!(events.len(), 1113);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let params = EvPopulationParams::default();
        let buses: Vec<u32> = (0..40).map(|i| 2 + i as u32).collect();
        let (f1, _, _) = generate_fleet(&params, &buses, 42, 96, 0.25, 1).unwrap();
        let (f2, _, _) = generate_fleet(&params, &buses, 42, 96, 0.25, 1).unwrap();
        assert_eq!(f1, f2);
        let (f3, _, _) = generate_fleet(&params, &buses, 43, 96, 0.25, 1).unwrap();
        assert_ne!(f1, f3);
    }

    #[test]
    fn generated_soci_respects_arrival_rule() {
        let params = EvPopulationParams::default();
        let buses: Vec<u32> = (0..30).map(|i| 2 + i as u32).collect();
        let (fleet, _, _) = generate_fleet(&params, &buses, 5, 96, 0.25, 1).unwrap();
        for i in 0..fleet.n_devices() {
            for t in 0..96 {
                if fleet.soci.get(i, t) > 0.0 {
                    assert!(fleet.is_arrival(i, t), "device {i} period {t}");
                }
            }
        }
    }

    #[test]
    fn horizon_too_short_rejected() {
        let params = EvPopulationParams::default();
        let err = generate_fleet(&params, &[2, 3], 1, 4, 0.25, 1).unwrap_err();
        assert!(matches!(err, ScenarioError::HorizonTooShort { .. }));
    }

    fn tiny_case() -> NetworkCase {
        NetworkCase::new(
            "t",
            1.0,
            vec![Bus::slack(1), Bus::pq(2), Bus::pq(3)],
            vec![Branch::line(1, 2, 0.01, 0.05), Branch::line(2, 3, 0.01, 0.05)],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn two_transformer_shares() {
        let case = tiny_case();
        let history = FeederHistory {
            p_pcc_mw: vec![10.0, 8.0],
            p_gen_mw: vec![0.0, 0.0],
            snapshot_p_mw: vec![60.0, 40.0],
            snapshot_q_mvar: vec![12.0, 8.0],
            consumer_energy_kwh: vec![vec![1000.0], vec![500.0, 500.0]],
            consumer_bus: vec![vec![2], vec![3, 3]],
        };
        let (pd, _) = disaggregate_baseload(&history, &case, 2, 1.0).unwrap();
        // kappa = [0.6, 0.4]: bus 2 takes 6 MW of the first hour
        assert!((pd.get(1, 0) - 6.0).abs() < 1e-12);
        assert!((pd.get(2, 0) - 4.0).abs() < 1e-12);
        assert!((pd.get(1, 1) - 4.8).abs() < 1e-12);
    }

    #[test]
    fn disaggregation_conserves_mass() {
        let case = tiny_case();
        let history = FeederHistory {
            p_pcc_mw: vec![7.5, 9.25, 11.0],
            p_gen_mw: vec![1.5, 0.75, 0.0],
            snapshot_p_mw: vec![30.0, 70.0],
            snapshot_q_mvar: vec![9.0, 14.0],
            consumer_energy_kwh: vec![vec![800.0, 300.0], vec![400.0, 600.0, 200.0]],
            consumer_bus: vec![vec![2, 2], vec![3, 3, 2]],
        };
        let t_count = 12; // 3 hours at 15 min
        let (pd, qd) = disaggregate_baseload(&history, &case, t_count, 0.25).unwrap();
        for t in 0..t_count {
            let hour = t / 4;
            let p_tot = history.p_pcc_mw[hour] + history.p_gen_mw[hour];
            let sum_p: f64 = (0..3).map(|b| pd.get(b, t)).sum();
            assert!((sum_p - p_tot).abs() < 1e-9 * p_tot.abs().max(1.0));
            // reactive: kappa_1 phi_1 + kappa_2 phi_2 = 0.3*(9/30) + 0.7*(14/70)
            let q_expected = p_tot * (0.3 * (9.0 / 30.0) + 0.7 * (14.0 / 70.0));
            let sum_q: f64 = (0..3).map(|b| qd.get(b, t)).sum();
            assert!((sum_q - q_expected).abs() < 1e-9);
        }
    }

    #[test]
    fn single_consumer_transformer_equals_share_times_total() {
        let case = tiny_case();
        let history = FeederHistory {
            p_pcc_mw: vec![4.0, 6.0, 5.0],
            p_gen_mw: vec![1.0, 0.0, 0.5],
            snapshot_p_mw: vec![25.0, 75.0],
            snapshot_q_mvar: vec![5.0, 15.0],
            consumer_energy_kwh: vec![vec![1200.0], vec![900.0]],
            consumer_bus: vec![vec![2], vec![3]],
        };
        let (pd, _) = disaggregate_baseload(&history, &case, 3, 1.0).unwrap();
        for (hour, (&pcc, &gen)) in history.p_pcc_mw.iter().zip(&history.p_gen_mw).enumerate() {
            assert!((pd.get(1, hour) - 0.25 * (pcc + gen)).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_consumer_bus_mapping_is_an_error() {
        let case = tiny_case();
        let history = FeederHistory {
            p_pcc_mw: vec![4.0],
            p_gen_mw: vec![0.0],
            snapshot_p_mw: vec![100.0],
            snapshot_q_mvar: vec![10.0],
            consumer_energy_kwh: vec![vec![100.0]],
            consumer_bus: vec![vec![99]],
        };
        let err = disaggregate_baseload(&history, &case, 1, 1.0).unwrap_err();
        assert!(matches!(err, ScenarioError::UnknownBus { bus: 99, .. }));
    }

    #[test]
    fn flat_price_expands_constant() {
        let p = PriceSeries::from_hourly(&[300.0; 24], 96, 0.25).unwrap();
        assert_eq!(p.per_period_nok_mwh.len(), 96);
        assert!(p.per_period_nok_mwh.iter().all(|&v| v == 300.0));
        assert!(!p.volatile);
        assert_eq!(p.sd, 0.0);
    }

    #[test]
    fn price_stats_reference_values() {
        // construct a two-level series whose mean and sd equal the flat
        // Nordic reference year: mean 386.8, sd 81.2
        let hourly: Vec<f64> = (0..8760)
            .map(|i| if i % 2 == 0 { 386.8 + 81.2 } else { 386.8 - 81.2 })
            .collect();
        let p = PriceSeries::from_hourly(&hourly, 96, 0.25).unwrap();
        assert!((p.mean - 386.8).abs() < 1e-9);
        assert!((p.sd - 81.2).abs() < 1e-9);
        // exactly at the reference ratio: not flagged volatile
        assert!(!p.volatile);
    }

    #[test]
    fn volatile_series_flagged() {
        let hourly: Vec<f64> = (0..24)
            .map(|i| if i % 2 == 0 { 700.0 } else { 100.0 })
            .collect();
        let p = PriceSeries::from_hourly(&hourly, 96, 0.25).unwrap();
        // sd/mean = 300/400 = 0.75 > the reference ratio
        assert!(p.volatile);
    }

    #[test]
    fn csv_parse_and_gap_detection() {
        let csv = "timestamp,price_nok_mwh\n2012-02-01T12:00,2000\n2012-02-01T13:00,450\n";
        let p = load_price_series(csv.as_bytes(), 8, 0.25).unwrap();
        assert_eq!(p.per_period_nok_mwh[0], 2000.0);
        assert_eq!(p.per_period_nok_mwh[4], 450.0);

        let err = load_price_series(csv.as_bytes(), 96, 0.25).unwrap_err();
        match err {
            ScenarioError::MissingHours { needed, got, missing } => {
                assert_eq!(needed, 24);
                assert_eq!(got, 2);
                assert_eq!(missing.len(), 22);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
