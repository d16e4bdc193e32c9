use std::sync::Arc;

use heatrisk::graph::{AreaGraph, ScaledStructure};
use heatrisk::inference::{conditional_mode, ModeOptions};
use heatrisk::modifiers::{
    fit_median, fit_modifiers, modifier_model, propagate, standardize, ModifierConfig, ModifierDesign, ModifierRecord,
};
use heatrisk::simulator::{simulate, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Setup {
    records: Vec<ModifierRecord>,
    design: ModifierDesign,
    graph: Arc<AreaGraph>,
    structure: Arc<ScaledStructure>,
    canton_of: Vec<usize>,
    n_cantons: usize,
}

fn setup() -> Setup {
    let cfg = SimConfig {
        nx: 8,
        ny: 6,
        years: 1,
        seed: 17,
        ..SimConfig::default()
    };
    let sim = simulate(&cfg).unwrap();
    let records = sim.files.modifiers.clone();
    let design = standardize(&records).unwrap();
    let graph = simulate_graph(&cfg);
    let canton_of = graph.canton_of().to_vec();
    Setup {
        records,
        design,
        structure: Arc::new(ScaledStructure::new(graph.clone()).unwrap()),
        n_cantons: graph.n_cantons(),
        canton_of,
        graph,
    }
}

fn simulate_graph(cfg: &SimConfig) -> Arc<AreaGraph> {
    heatrisk::simulator::synth_geography(cfg.nx, cfg.ny, cfg.canton_blocks).unwrap().graph
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn config(draws: usize) -> ModifierConfig {
    ModifierConfig {
        draws,
        ..ModifierConfig::default()
    }
}

fn fit_once(s: &Setup, outcome: &[f64], cfg: &ModifierConfig) -> heatrisk::modifiers::ModifierPosterior {
    fit_median(
        &[outcome.to_vec()],
        &s.design,
        s.structure.clone(),
        &s.canton_of,
        s.n_cantons,
        cfg,
    )
    .unwrap()
    .0
}

#[test]
fn constant_outcome_has_no_effects() {
    let s = setup();
    let post = fit_once(&s, &vec![2.5; s.records.len()], &config(500));
    let icpt = post.summary("intercept").unwrap();
    // The intercept shares its level with the canton effects, so only its
    // center is pinned.
    assert!((icpt.median - 2.5).abs() < 0.05 && icpt.contains(2.5), "{icpt:?}");
    for col in &s.design.columns {
        let a = post.summary(col).unwrap();
        // Language dummies are constant within cantons and trade off with ζ.
        assert!(a.median.abs() < 0.01_f64.max(0.05 * a.width()), "{col}: {a:?}");
    }
}

#[test]
fn linear_effect_is_recovered() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let outcome: Vec<f64> = s.design.rows.iter().map(|r| 1.0 + 0.5 * r[0] + 0.2 * normal(&mut rng)).collect();
    let post = fit_once(&s, &outcome, &config(1000));
    let a = post.summary("pct_over_85").unwrap();
    assert!(a.contains(0.5), "{a:?}");
    let e = post.effects();
    assert_eq!(e.len(), 1 + s.design.n_columns());
    assert_eq!(e[1].sd, s.design.scales[0]);
}

#[test]
fn canton_effect_absorbs_canton_level_variation() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let levels: Vec<f64> = (0..s.n_cantons).map(|_| 2.0 * normal(&mut rng)).collect();
    let outcome: Vec<f64> = s.canton_of.iter().map(|&c| levels[c] + 0.05 * normal(&mut rng)).collect();
    let sigma_xi = |include_canton: bool| {
        let cfg = ModifierConfig {
            include_canton,
            ..config(100)
        };
        let post = fit_once(&s, &outcome, &cfg);
        let k = post.hyper_names.iter().position(|n| n == "sigma_xi").unwrap();
        post.hyper[0][k]
    };
    let with = sigma_xi(true);
    let without = sigma_xi(false);
    assert!(without > with, "with canton {with}, without {without}");
}

#[test]
fn identical_samples_reproduce_single_fit() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let outcome: Vec<f64> = s.design.rows.iter().map(|r| 1.0 + 0.3 * r[1] + 0.2 * normal(&mut rng)).collect();
    let cfg = ModifierConfig {
        samples: 4,
        ..config(4000)
    };
    let single = fit_once(&s, &outcome, &cfg);
    let draws = vec![outcome.clone(); 10];
    let pooled = propagate(&draws, &s.design, s.structure.clone(), &s.canton_of, s.n_cantons, &cfg, None).unwrap();
    assert_eq!(pooled.fits, 4);
    assert_eq!(pooled.failures, 0);
    assert_eq!(pooled.coefficients.len(), 4000);
    for col in ["intercept", "ndvi", "no2"] {
        let a = single.summary(col).unwrap();
        let b = pooled.summary(col).unwrap();
        let w = a.width();
        assert!((a.lower - b.lower).abs() < 0.08 * w && (a.upper - b.upper).abs() < 0.08 * w, "{col}: {a:?} {b:?}");
    }
}

#[test]
fn propagation_widens_intervals_and_pools_equally() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = s.records.len();
    let center: Vec<f64> = s.design.rows.iter().map(|r| 1.0 + 0.4 * r[0] + 0.2 * normal(&mut rng)).collect();
    let spread: Vec<f64> = (0..n).map(|m| 0.3 + 0.2 * (m % 3) as f64).collect();
    let draws: Vec<Vec<f64>> = (0..100)
        .map(|_| center.iter().zip(&spread).map(|(c, s)| c + s * normal(&mut rng)).collect())
        .collect();
    let cfg = ModifierConfig {
        samples: 20,
        ..config(2000)
    };
    let (single, fit) = fit_median(&draws, &s.design, s.structure.clone(), &s.canton_of, s.n_cantons, &cfg).unwrap();
    let pooled = propagate(&draws, &s.design, s.structure.clone(), &s.canton_of, s.n_cantons, &cfg, Some(&fit.theta)).unwrap();
    assert_eq!(pooled.fits + pooled.failures, 20);
    for col in ["pct_over_85", "ndvi", "mean_temp", "no2"] {
        let a = single.summary(col).unwrap();
        let b = pooled.summary(col).unwrap();
        assert!(b.width() >= a.width(), "{col}: single {a:?} pooled {b:?}");
    }
    // Equal allocation: pooled mean is the mean of per-fit means.
    let per = pooled.coefficients.len() / pooled.fits;
    let j = 1;
    let fit_means: Vec<f64> = pooled
        .coefficients
        .chunks(per)
        .map(|c| c.iter().map(|r| r[j]).sum::<f64>() / c.len() as f64)
        .collect();
    let pooled_mean = pooled.coefficients.iter().map(|r| r[j]).sum::<f64>() / pooled.coefficients.len() as f64;
    let mean_of_means = fit_means.iter().sum::<f64>() / fit_means.len() as f64;
    assert!((pooled_mean - mean_of_means).abs() < 1e-12);
    let row = pooled.effects().into_iter().find(|e| e.variable == "pct_over_85").unwrap();
    assert!((row.mean - pooled_mean).abs() < 1e-12);
}

#[test]
fn standardized_effects_are_per_sd_effects() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let outcome: Vec<f64> = s.design.rows.iter().map(|r| 1.0 + 0.4 * r[2] - 0.2 * r[3] + 0.3 * normal(&mut rng)).collect();
    let raw = ModifierDesign {
        rows: s
            .design
            .rows
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, v)| v * s.design.scales[j] + s.design.means[j]).collect())
            .collect(),
        scales: vec![1.0; s.design.n_columns()],
        means: vec![0.0; s.design.n_columns()],
        ..s.design.clone()
    };
    let cfg = ModifierConfig {
        coefficient_precision: 1e-12,
        ..config(10)
    };
    let (ms, lay) = modifier_model(&outcome, &s.design, s.structure.clone(), &s.canton_of, s.n_cantons, &cfg).unwrap();
    let (mr, _) = modifier_model(&outcome, &raw, s.structure.clone(), &s.canton_of, s.n_cantons, &cfg).unwrap();
    let theta = vec![0.3f64.ln(), 0.2f64.ln(), 0.4f64.ln(), 0.0];
    let opts = ModeOptions::default();
    let a = conditional_mode(&ms, &theta, None, &opts).unwrap().mode;
    let b = conditional_mode(&mr, &theta, None, &opts).unwrap().mode;
    for j in 0..4 {
        let std = a[lay.alpha + j];
        let unstd = b[lay.alpha + j] * s.design.scales[j];
        assert!((std - unstd).abs() < 1e-8, "column {j}: {std} vs {unstd}");
    }
}

#[test]
fn area_order_does_not_matter() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = s.records.len();
    let outcome: Vec<f64> = s.design.rows.iter().map(|r| 1.0 + 0.3 * r[0] + 0.2 * normal(&mut rng)).collect();
    let cfg = config(2000);
    let base = fit_modifiers(&outcome, &s.design, s.structure.clone(), &s.canton_of, s.n_cantons, &cfg, None, 1).unwrap();

    // Reverse the area order everywhere.
    let perm: Vec<usize> = (0..n).rev().collect();
    let pos: Vec<usize> = {
        let mut p = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            p[old] = new;
        }
        p
    };
    let edges: Vec<(usize, usize)> = s.graph.edges().into_iter().map(|(a, b)| (pos[a], pos[b])).collect();
    let canton_of: Vec<usize> = perm.iter().map(|&m| s.canton_of[m]).collect();
    let graph = Arc::new(AreaGraph::build(n, &edges, canton_of.clone()).unwrap());
    let ids: Vec<u32> = perm.iter().map(|&m| s.design.area_ids[m]).collect();
    let design = s.design.reorder(&ids).unwrap();
    let outcome_p: Vec<f64> = perm.iter().map(|&m| outcome[m]).collect();
    let permuted = fit_modifiers(
        &outcome_p,
        &design,
        Arc::new(ScaledStructure::new(graph).unwrap()),
        &canton_of,
        s.n_cantons,
        &cfg,
        None,
        1,
    )
    .unwrap();
    for (x, y) in base.hyper.iter().zip(&permuted.hyper) {
        assert!((x - y).abs() < 1e-3 * x.abs().max(1e-2), "{:?} vs {:?}", base.hyper, permuted.hyper);
    }
    let mean = |f: &heatrisk::modifiers::ModifierFit, j: usize| {
        f.coefficients.iter().map(|c| c[j]).sum::<f64>() / f.coefficients.len() as f64
    };
    for j in 0..5 {
        let sd = {
            let m = mean(&base, j);
            (base.coefficients.iter().map(|c| (c[j] - m).powi(2)).sum::<f64>() / 2000.0).sqrt()
        };
        // Two independent Monte Carlo means of 2000 draws.
        assert!((mean(&base, j) - mean(&permuted, j)).abs() < 4.0 * sd * (2.0f64 / 2000.0).sqrt());
    }
}
