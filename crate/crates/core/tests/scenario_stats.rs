//! Statistical acceptance of the EV sampler over a large population.

use evopf_core::scenarios::{generate_fleet, EvPopulationParams};

#[test]
fn ten_thousand_evs_reproduce_population_statistics() {
    let params = EvPopulationParams::default();
    // 7693 households * 1.3 rounds to 10001 EVs
    let households: Vec<u32> = (0..7693).map(|i| 2 + (i % 50) as u32).collect();
    let (_, _, samples) = generate_fleet(&params, &households, 2024, 96, 0.25, 1).unwrap();
    assert!(samples.len() >= 10_000, "population {}", samples.len());
    let n = samples.len() as f64;

    let mean_dist = samples.iter().map(|s| s.day_distance_km).sum::<f64>() / n;
    let sd_dist = (samples
        .iter()
        .map(|s| (s.day_distance_km - mean_dist).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    assert!((mean_dist - 52.0).abs() < 1.0, "mean distance {mean_dist}");
    assert!((sd_dist - 22.0).abs() < 1.0, "sd distance {sd_dist}");

    for (kw, share) in [(2.3, 0.70), (3.7, 0.20), (11.0, 0.10)] {
        let got = samples.iter().filter(|s| s.charger_kw == kw).count() as f64 / n;
        assert!(
            (got - share).abs() < 0.02,
            "{kw} kW charger share {got}, want {share}"
        );
    }

    // consumption groups: 80% efficient / 20% heavy
    let group_a = samples
        .iter()
        .filter(|s| s.consumption_kwh_per_100km == 17.0)
        .count() as f64
        / n;
    assert!((group_a - 0.80).abs() < 0.02, "group A share {group_a}");

    let mean_arr = samples.iter().map(|s| s.arrival_min).sum::<f64>() / n;
    let sd_arr = (samples
        .iter()
        .map(|s| (s.arrival_min - mean_arr).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    // 300 min after noon = 17:00; population sd 90 plus daily 15 in quadrature
    assert!((mean_arr - 300.0).abs() < 5.0, "mean arrival {mean_arr}");
    assert!((sd_arr - 90.0).abs() < 5.0, "sd arrival {sd_arr}");

    // plug windows last 14.5 h
    for s in samples.iter().take(50) {
        assert!((s.departure_min - s.arrival_min - 14.5 * 60.0).abs() < 1e-9);
    }
}
