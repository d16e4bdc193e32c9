mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use common::{date, lattice_structure, structure_from, toy_table};
use heatrisk::graph::{AreaGraph, ScaledStructure};
use heatrisk::ingest::{AnalysisRow, AnalysisTable, SUMMER_DAYS};
use heatrisk::model::heat::{assemble, ModelConfig, N_CALENDAR};
use heatrisk::model::hyper::{pc_sd_logdensity, HyperKind};
use heatrisk::model::likelihood::ln_factorial;
use heatrisk::model::PriorBlock;
use heatrisk::spline::{Knots, SplineBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn basis() -> SplineBasis {
    SplineBasis::new(
        Knots {
            interior: vec![12.0, 22.0, 26.0],
            boundary: [5.0, 32.0],
        },
        12.0,
    )
    .unwrap()
}

#[test]
fn reference_temperature_row_has_no_spline_term() {
    // 2015-06-07 is a Sunday.
    let d = date(2015, 6, 7);
    let table = AnalysisTable::from_rows(vec![AnalysisRow {
        area_id: 1,
        date: d,
        deaths: 2,
        population: 1500.0,
        exposure: 12.0,
        dow: 0,
        holiday: 0,
    }])
    .unwrap();
    let s = structure_from(1, &[]);
    let hm = assemble(&table, &basis(), s, &ModelConfig::default()).unwrap();
    let m = &hm.model;
    let (cols, vals) = m.design().row(0);
    let l = &hm.layout;
    let nonzero: Vec<usize> = cols
        .iter()
        .zip(vals)
        .filter(|(_, &v)| v != 0.0)
        .map(|(&c, _)| c as usize)
        .collect();
    assert_eq!(nonzero, vec![l.intercept, l.residual.0, l.omega + 6, l.delta]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eta = m.linear_predictor(&x)[0] + m.offsets()[0];
    let expect = 1500f64.ln() + x[l.intercept] + x[l.delta] + x[l.omega + 6] + x[l.residual.0];
    assert!((eta - expect).abs() < 1e-14);
    for c in 0..N_CALENDAR {
        assert!(!nonzero.contains(&(l.gamma + c)));
    }
}

#[test]
fn layout_dimension() {
    let table = toy_table(9, 2, 5, 1);
    let hm = assemble(&table, &basis(), lattice_structure(3, 3), &ModelConfig::default()).unwrap();
    assert_eq!(hm.model.dim(), 196);
    assert_eq!(12 + 8 * 9 + 2 * 9 + 92 + 2, 196);
    assert_eq!(hm.model.n_hypers(), 12);
    let cfg = ModelConfig {
        interactions: true,
        ..ModelConfig::default()
    };
    let hm = assemble(&table, &basis(), lattice_structure(3, 3), &cfg).unwrap();
    assert_eq!(hm.model.dim(), 196 + 2 * 9 + SUMMER_DAYS * 9);
    assert_eq!(hm.model.n_hypers(), 14);
}

#[test]
fn assembly_errors() {
    let table = toy_table(4, 1, 5, 2);
    let narrow = SplineBasis::new(
        Knots {
            interior: vec![12.0, 15.0, 18.0],
            boundary: [10.0, 20.0],
        },
        12.0,
    )
    .unwrap();
    let err = assemble(&table, &narrow, lattice_structure(2, 2), &ModelConfig::default()).unwrap_err();
    assert!(err.to_string().contains("outside the basis domain"), "{err}");
    assert!(assemble(&table, &basis(), lattice_structure(3, 3), &ModelConfig::default()).is_err());
}

/// Dense precision of a whole heat model built directly from the block
/// definitions, plus the dense constraint matrix.
fn dense_prior(hm: &heatrisk::model::heat::HeatModel, nat: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = &hm.model;
    let d = m.dim();
    let mut q = DMatrix::zeros(d, d);
    let mut cons: Vec<DVector<f64>> = Vec::new();
    for p in m.priors() {
        match p {
            PriorBlock::Fixed { offset, len, precision } => {
                for i in *offset..offset + len {
                    q[(i, i)] = *precision;
                }
            }
            PriorBlock::Iid { offset, len, sigma } => {
                for i in *offset..offset + len {
                    q[(i, i)] = 1.0 / nat[*sigma].powi(2);
                }
            }
            PriorBlock::Rw2 { offset, len, sigma } => {
                let mut dm = DMatrix::zeros(len - 2, *len);
                for r in 0..len - 2 {
                    dm[(r, r)] = 1.0;
                    dm[(r, r + 1)] = -2.0;
                    dm[(r, r + 2)] = 1.0;
                }
                let r = dm.transpose() * dm / nat[*sigma].powi(2);
                q.view_mut((*offset, *offset), (*len, *len)).copy_from(&r);
                cons.push(DVector::from_fn(d, |i, _| f64::from(u8::from((*offset..offset + len).contains(&i)))));
                let mid = (*len as f64 - 1.0) / 2.0;
                cons.push(DVector::from_fn(d, |i, _| {
                    if (*offset..offset + len).contains(&i) {
                        (i - offset) as f64 - mid
                    } else {
                        0.0
                    }
                }));
            }
            PriorBlock::Bym2 { field, u, structure, sigma, phi } => {
                let (s, ph) = (nat[*sigma], nat[*phi]);
                let g = structure.graph();
                let n = g.n_areas();
                let mut base = DMatrix::zeros(2 * n, 2 * n);
                let mut mm = DMatrix::zeros(2 * n, 2 * n);
                for a in 0..n {
                    base[(a, a)] = 1.0;
                    if structure.is_singleton(a) {
                        base[(n + a, n + a)] = 1.0;
                        mm[(a, a)] = s;
                    } else {
                        let k = structure.kappa_of(a);
                        base[(n + a, n + a)] = k * g.degree(a) as f64;
                        for &b in g.neighbors(a) {
                            base[(n + a, n + b)] = -k;
                        }
                        mm[(a, a)] = s * (1.0 - ph).sqrt();
                        mm[(a, n + a)] = s * ph.sqrt();
                    }
                    mm[(n + a, n + a)] = 1.0;
                }
                let minv = mm.try_inverse().unwrap();
                let blk = minv.transpose() * base * minv;
                for i in 0..2 * n {
                    for j in 0..2 * n {
                        let gi = if i < n { field + i } else { u + i - n };
                        let gj = if j < n { field + j } else { u + j - n };
                        q[(gi, gj)] = blk[(i, j)];
                    }
                }
                for members in g.components() {
                    cons.push(DVector::from_fn(d, |i, _| {
                        f64::from(u8::from(i >= *u && i < u + n && members.contains(&(i - u))))
                    }));
                }
            }
        }
    }
    let a = DMatrix::from_columns(&cons).transpose();
    (q, a)
}

fn null_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    let cols: Vec<DVector<f64>> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] < 1e-9)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

#[test]
fn log_joint_matches_dense_brute_force() {
    // Path 0-1-2 plus an isolated area 3.
    let g = AreaGraph::build(4, &[(0, 1), (1, 2)], vec![0, 0, 1, 1]).unwrap();
    let s = Arc::new(ScaledStructure::new(Arc::new(g)).unwrap());
    let table = toy_table(4, 2, SUMMER_DAYS, 11);
    let b = basis();
    let hm = assemble(&table, &b, s, &ModelConfig::default()).unwrap();
    let m = &hm.model;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..3 {
        let nat: Vec<f64> = m
            .hypers()
            .iter()
            .map(|h| match h.kind {
                HyperKind::Sigma(_) => rng.random_range(0.3..1.5),
                HyperKind::Mixing(_) => rng.random_range(0.05..0.95),
            })
            .collect();
        let theta = m.to_internal(&nat).unwrap();
        let (q, a) = dense_prior(&hm, &nat);
        let raw: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-0.05..0.05)).collect();
        let x = m.constraints().project(&raw);

        // sparse prior precision equals the dense construction
        let qs = m.prior_precision(&nat, false).unwrap().to_dense();
        assert!((&qs - &q).abs().max() < 1e-9, "trial {trial}");

        let v = null_basis(&a);
        let free = v.ncols();
        assert_eq!(free, m.dim() - m.constraints().len());
        let qv = v.transpose() * &q * &v;
        let logdet: f64 = qv.symmetric_eigenvalues().iter().map(|e| e.ln()).sum();
        let xv = DVector::from_column_slice(&x);
        let quad = (xv.transpose() * &q * &xv)[(0, 0)];
        let log_prior = -0.5 * free as f64 * (2.0 * PI).ln() + 0.5 * logdet - 0.5 * quad;

        let l = &hm.layout;
        let mut loglik = 0.0;
        for (r, row) in table.rows.iter().enumerate() {
            let area = table.area_index[r];
            let bx = b.evaluate(row.exposure, true).unwrap();
            let mut eta = row.population.ln() + x[l.intercept];
            for j in 0..bx.len() {
                eta += bx[j] * (x[l.beta + j] + x[l.svc[j].0 + area]);
            }
            for (c, v) in row.calendar().as_row().iter().enumerate() {
                eta += v * x[l.gamma + c];
            }
            eta += x[l.residual.0 + area] + x[l.omega + table.day_index[r]] + x[l.delta + table.year_index[r]];
            let y = f64::from(row.deaths);
            loglik += y * eta - eta.exp() - ln_factorial(y);
        }
        let mut hyper = 0.0;
        for (h, (&v, &t)) in m.hypers().iter().zip(nat.iter().zip(&theta)) {
            hyper += match &h.kind {
                HyperKind::Sigma(p) => pc_sd_logdensity(v, p.upper, p.alpha) + t,
                HyperKind::Mixing(pc) => pc.logdensity(v) + v.ln() + (1.0 - v).ln(),
            };
        }
        let brute = loglik + log_prior + hyper;
        let got = m.log_joint(&x, &theta);
        assert!((got - brute).abs() < 1e-8, "trial {trial}: {got} vs {brute}");
    }
}

#[test]
fn unidentified_directions_leave_fit_unchanged() {
    let table = toy_table(4, 2, 10, 3);
    let hm = assemble(&table, &basis(), lattice_structure(2, 2), &ModelConfig::default()).unwrap();
    let m = &hm.model;
    let l = &hm.layout;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let nat = m.to_natural(&hm.default_init());
    let base = m.loglik(&x, &nat);
    // A constant moved from the seasonal curve into the intercept.
    let mut y = x.clone();
    for d in 0..SUMMER_DAYS {
        y[l.omega + d] -= 0.7;
    }
    y[l.intercept] += 0.7;
    assert!((m.loglik(&y, &nat) - base).abs() < 1e-9);
    // The ICAR components do not enter the linear predictor directly.
    let mut z = x.clone();
    for a in 0..4 {
        z[l.svc[0].1 + a] += 1.3;
        z[l.residual.1 + a] -= 0.4;
    }
    assert!((m.loglik(&z, &nat) - base).abs() < 1e-12);
    let p = m.constraints().project(&z);
    assert!(m.constraints().max_residual(&p) < 1e-12);
}

#[test]
fn precision_is_factorizable_for_admissible_hyperparameters() {
    let table = toy_table(9, 2, 20, 4);
    let hm = assemble(&table, &basis(), lattice_structure(3, 3), &ModelConfig::default()).unwrap();
    let m = &hm.model;
    for &(s, p) in &[(1e-3, 1e-6), (0.5, 0.5), (3.0, 0.999)] {
        let nat: Vec<f64> = m
            .hypers()
            .iter()
            .map(|h| if h.is_sigma() { s } else { p })
            .collect();
        let q = m.prior_precision(&nat, true).unwrap();
        assert!(q.diag().iter().all(|&v| v > 0.0));
        heatrisk::sparse::cholesky(&q).unwrap();
    }
}
