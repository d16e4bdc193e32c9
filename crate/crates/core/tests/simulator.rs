use std::collections::HashMap;

use chrono::NaiveDate;
use heatrisk::ingest::{build_analysis_table, build_graph, StudyInputs};
use heatrisk::metrics::{bin_deaths_weighted, find_mmt, heat_burden, rescale_to_mmt, CurveGrid, ExposureWindow};
use heatrisk::simulator::{simulate, synth_truth, SimConfig};
use heatrisk::spline::SplineBasis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> SimConfig {
    SimConfig {
        nx: 4,
        ny: 3,
        canton_blocks: [2, 1],
        years: 2,
        seed,
        ..SimConfig::default()
    }
}

#[test]
fn same_seed_same_dataset() {
    let a = simulate(&small(7)).unwrap();
    let b = simulate(&small(7)).unwrap();
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.files.deaths, b.files.deaths);
    assert_eq!(a.files.modifiers, b.files.modifiers);
    let c = simulate(&small(8)).unwrap();
    assert_ne!(a.truth.beta_prime, c.truth.beta_prime);
}

#[test]
fn zero_variances_leave_common_curve() {
    let cfg = SimConfig {
        sigma_beta: 0.0,
        ..small(3)
    };
    let truth = simulate(&cfg).unwrap().truth;
    for m in 0..truth.area_ids.len() {
        assert_eq!(truth.area_coefficients(m), truth.beta);
    }
}

fn moran(values: &[f64], edges: &[(usize, usize)]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let cross: f64 = edges.iter().map(|&(a, b)| 2.0 * dev[a] * dev[b]).sum();
    let w = 2.0 * edges.len() as f64;
    n / w * cross / dev.iter().map(|d| d * d).sum::<f64>()
}

#[test]
fn structured_fields_are_spatially_correlated() {
    let reps = 20;
    let mut stats = Vec::new();
    for r in 0..reps {
        let cfg = SimConfig {
            nx: 6,
            ny: 6,
            years: 1,
            sigma_beta: 1.0,
            phi_beta: 1.0,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(100 + r);
        let truth = synth_truth(&cfg, &mut rng).unwrap();
        let edges = heatrisk::graph::queen_lattice(6, 6);
        stats.push(moran(&truth.beta_prime[0], &edges));
    }
    let null = -1.0 / 35.0;
    let mean = stats.iter().sum::<f64>() / reps as f64;
    let sd = (stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    let t = (mean - null) / (sd / (reps as f64).sqrt());
    // One-sided 1% critical value of t with 19 degrees of freedom.
    assert!(mean > 0.0 && t > 2.54, "mean I {mean}, t {t}");
}

#[test]
fn simulated_counts_match_expected_totals() {
    let cfg = SimConfig {
        population_range: [2.0e5, 4.0e5],
        ..small(11)
    };
    let sim = simulate(&cfg).unwrap();
    let expected: f64 = sim.truth.days.iter().flatten().map(|d| d.expected).sum();
    let observed: f64 = sim.files.deaths.iter().map(|d| f64::from(d.deaths)).sum();
    assert!(expected > 1e4);
    assert!((observed / expected - 1.0).abs() < 0.02, "{observed} vs {expected}");
}

#[test]
fn doubling_population_doubles_expected_counts() {
    let base = small(5);
    let doubled = SimConfig {
        population_range: [2.0 * base.population_range[0], 2.0 * base.population_range[1]],
        ..base.clone()
    };
    let a = simulate(&base).unwrap().truth;
    let b = simulate(&doubled).unwrap().truth;
    for (da, db) in a.days.iter().flatten().zip(b.days.iter().flatten()) {
        let pop_ratio = db.population / da.population;
        assert!((pop_ratio - 2.0).abs() < 1e-3);
        assert!((db.expected / da.expected - pop_ratio).abs() < 1e-12);
    }
}

#[test]
fn written_files_round_trip_through_ingest() {
    let sim = simulate(&small(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sim.write(dir.path()).unwrap();
    for f in ["truth.json", "sim_config.toml", "modifiers.csv", "graph.csv", "cantons.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let inputs = StudyInputs::load(dir.path()).unwrap();
    let (table, report) = build_analysis_table(&inputs).unwrap();
    assert_eq!(report.dropped_zero_population, 0);
    assert_eq!(table.area_ids, sim.truth.area_ids);
    assert_eq!(table.len(), sim.truth.days.iter().map(Vec::len).sum::<usize>());
    let by_key: HashMap<(u32, NaiveDate), (f64, f64)> = sim
        .truth
        .days
        .iter()
        .zip(&sim.truth.area_ids)
        .flat_map(|(days, &id)| days.iter().map(move |d| ((id, d.date), (d.exposure, d.population))))
        .collect();
    for r in &table.rows {
        let (x, p) = by_key[&(r.area_id, r.date)];
        assert!((r.exposure - x).abs() < 1e-12);
        assert!((r.population - p).abs() < 1e-9);
    }
    let (graph, canton_ids) = build_graph(&sim.files.edges, &sim.files.cantons, &table.area_ids).unwrap();
    assert_eq!(graph.n_areas(), 12);
    assert_eq!(canton_ids.len(), 2);

    let cfg = SimConfig::load(&dir.path().join("sim_config.toml")).unwrap();
    assert_eq!(cfg, sim.truth.config);
}

#[test]
fn true_burden_matches_metrics_on_expected_counts() {
    let sim = simulate(&small(4)).unwrap();
    let (table, _) = build_analysis_table(&sim.files.study_inputs()).unwrap();
    let basis = SplineBasis::from_exposures(&table.exposures(), sim.truth.reference_temp).unwrap();
    let grid = CurveGrid::new(&basis).unwrap();
    let expected: HashMap<(u32, NaiveDate), f64> = sim
        .truth
        .days
        .iter()
        .zip(&sim.truth.area_ids)
        .flat_map(|(days, &id)| days.iter().map(move |d| ((id, d.date), d.expected)))
        .collect();
    for (a, &id) in table.area_ids.iter().enumerate() {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.area_id == id).collect();
        let window = ExposureWindow::new(&table.area_exposures(a)).unwrap();
        let mut curve = grid.curve(&sim.truth.area_coefficients(a));
        let mmt = find_mmt(&curve, &grid.temps, &window);
        rescale_to_mmt(&mut curve, mmt.index);
        let hist = bin_deaths_weighted(
            id,
            rows.iter().map(|r| (r.exposure, expected[&(id, r.date)], r.population)),
            &grid,
        );
        let burden = heat_burden(&curve, mmt.index, &hist);
        assert!((burden.erh - sim.truth.erh[a]).abs() < 1e-6, "area {id}");
        assert!((mmt.temperature - sim.truth.mmt[a]).abs() < 1e-12);
    }
}
