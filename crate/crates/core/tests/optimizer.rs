use bondwire_core::model::{Material, ModelConfig, MIL};
use bondwire_core::optimizer::*;
use nalgebra::DMatrix;

fn au() -> ModelConfig {
    ModelConfig::reference(Material::Au, 2.0 * MIL, 2.5e-3)
}

fn au_wire() -> WireId {
    WireId {
        material: Material::Au,
        diameter: 2.0 * MIL,
        position: None,
    }
}

fn events(list: &[(f64, f64)]) -> FusingDataset {
    let ev = list.iter().map(|&(current, duration)| FusingEvent { current, duration }).collect();
    FusingDataset::new(au_wire(), ev).unwrap()
}

fn subset(base: &ModelConfig, keep: &[&str]) -> ParameterVector {
    let full = ParameterVector::from_config(base);
    ParameterVector::new(full.entries.into_iter().filter(|e| keep.contains(&e.name.as_str())).collect()).unwrap()
}

fn scaled(jb: &DMatrix<f64>, p: &ParameterVector) -> DMatrix<f64> {
    DMatrix::from_fn(jb.nrows(), jb.ncols(), |i, j| jb[(i, j)] * p.entries[j].scale())
}

#[test]
fn resistivity_heats_the_wire() {
    let model = CoupledModel::reduced(au());
    let p = ParameterVector::from_config(&model.base);
    let data = events(&[(3.7, 0.5)]);
    let base = residual(&p, &data, &model);
    let jb = model_jacobian(&p, &data, &model, &base, &JacobianOptions::default()).unwrap();
    assert!(jb[(0, p.index_of("rho_e0").unwrap())] > 0.0);
    assert!(jb[(0, p.index_of("kappa0").unwrap())] < 0.0);
}

#[test]
fn halving_the_difference_step_barely_moves_the_jacobian() {
    let model = CoupledModel::reduced(au());
    let p = ParameterVector::from_config(&model.base);
    let data = events(&[(3.7, 0.5)]);
    let base = residual(&p, &data, &model);
    let opts = JacobianOptions::default();
    let j1 = model_jacobian(&p, &data, &model, &base, &opts).unwrap();
    let half = JacobianOptions { rel_step: 0.5 * opts.rel_step, ..opts };
    let j2 = model_jacobian(&p, &data, &model, &base, &half).unwrap();
    let (s1, s2) = (scaled(&j1, &p), scaled(&j2, &p));
    for j in 0..p.len() {
        // entries with no influence on a quasi-steady event sit at the noise floor
        if s1[(0, j)].abs() < 1e-6 * s1.amax() {
            continue;
        }
        let rel = (s1[(0, j)] - s2[(0, j)]).abs() / s1[(0, j)].abs();
        assert!(rel < 0.01, "{}: {rel}", p.entries[j].name);
    }
}

#[test]
fn heat_capacity_pair_is_split_by_the_subset_selection() {
    // density and specific heat only enter as a product
    let model = CoupledModel::reduced(au());
    let p = subset(&model.base, &["rho_e0", "rho_w", "c_w"]);
    let data = events(&[(20.0, 0.0005), (12.0, 0.001), (30.0, 0.002), (8.0, 0.0003)]);
    let base = residual(&p, &data, &model);
    assert_eq!(base.masked, 0);
    let jb = scaled(&model_jacobian(&p, &data, &model, &base, &JacobianOptions::default()).unwrap(), &p);
    let (rho, c) = (p.index_of("rho_w").unwrap(), p.index_of("c_w").unwrap());
    let col = |k: usize| jb.column(k).into_owned();
    assert!((col(rho) - col(c)).norm() < 1e-3 * col(rho).norm());
    let (_, h) = residual_derivatives(&base.predictions(), data.fusing_temperature, &jb, None);
    let svd = svd_truncate(&h, 1e-6).unwrap();
    assert_eq!(svd.rank, 2);
    let split = qr_subset_select(&svd.v_1u().transpose(), 1e-6);
    let picked = split.selected().iter().filter(|&&i| i == rho || i == c).count();
    assert_eq!(picked, 1, "selected {:?}", split.selected());
}

#[test]
fn synthetic_data_is_self_consistent() {
    let model = CoupledModel::reduced(au());
    let p = ParameterVector::from_config(&model.base);
    let data = synthesize_dataset(&model, &p, au_wire(), &[0.5, 2.0, 8.0], (4.0, 40.0), 0.0, 11).unwrap();
    let r = residual(&p, &data, &model);
    assert_eq!(r.masked, 0);
    // bisection to 1e-10 in current on a slope of a few hundred K per A
    assert!(r.total < 1e-10, "{}", r.total);
}

#[test]
fn geometry_is_recovered_from_noisy_events() {
    let model = CoupledModel::reduced(au());
    let p0 = subset(&model.base, &["D_w", "L_w"]);
    let mut truth = p0.clone();
    truth.set(0, p0.entries[0].value * 0.98);
    truth.set(1, p0.entries[1].value * 1.03);
    let durations = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
    let data = synthesize_dataset(&model, &truth, au_wire(), &durations, (4.0, 40.0), 0.01, 2024).unwrap();
    let out = optimize(&p0, &data, &model, &OptimizeOptions::default()).unwrap();
    assert!(out.report.converged, "{}", out.report.stop_reason);
    assert!(out.report.final_residual < 1e-2 * out.report.initial_residual);
    for (fit, t) in out.params.entries.iter().zip(&truth.entries) {
        assert!((fit.value - t.value).abs() < 0.05 * t.value.abs(), "{}: {} vs {}", fit.name, fit.value, t.value);
    }
    let json = out.report.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["parameters"].as_array().unwrap().len(), 2);
    assert!(v["iterations"][0]["singular_values"].is_array());
}
