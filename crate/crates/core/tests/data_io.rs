use bondwire_core::coupling::CouplingOptions;
use bondwire_core::data_io::*;
use bondwire_core::model::{Material, ModelConfig, MIL};
use bondwire_core::spectral::Truncation;
use bondwire_core::Error;
use std::io::Write;

fn coarse(material: Material) -> ModelConfig {
    let mut c = ModelConfig::reference(material, 2.0 * MIL, 2.5e-3);
    c.truncation = Truncation {
        nx: 4,
        ny: 6,
        nz: 4,
        nk: 20,
        steady: 40,
    };
    c.quadrature_points = 64;
    c
}

#[test]
fn events_load_from_disk() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "wire_id,material,position,I0_amps,t_fuse_seconds").unwrap();
    writeln!(f, "au10,Au,1,4.2,0.3").unwrap();
    writeln!(f, "au10,Au,1,4.4,0.2").unwrap();
    writeln!(f, "au10,Au,2,0,0.2").unwrap();
    match load_events(f.path()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_events("/nonexistent/events.csv"), Err(Error::Io(_))));
}

#[test]
fn capacity_curve_rises_and_crosses_melting() {
    let c = coarse(Material::Au);
    let melt = Material::Au.melting_temperature();
    let grid: Vec<f64> = (0..=8).map(|k| 2.0 * k as f64).collect();
    let curve = capacity_curve(&c, &CouplingOptions::default(), melt, 0.05, &grid).unwrap();
    assert!(curve.is_strictly_increasing());
    // no current: the midpoint sits between ambient and the hotter end
    let t0 = curve.points[0].midpoint.unwrap();
    assert!(t0 > c.bc.t_ambient && t0 < c.bc.t_chip, "{t0}");
    let x = curve.crossing.expect("melting crossing");
    assert!(x > 1.0 && x < 16.0);
    let k = grid.iter().position(|&i| i > x).unwrap();
    assert!(curve.points[k - 1].midpoint.unwrap() < melt);

    let mut buf = Vec::new();
    curve.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "I0_A,T_mid_K,status");
    assert_eq!(lines.len(), grid.len() + 1);
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(",ok"));
}

#[test]
fn capacity_grid_must_increase() {
    let c = coarse(Material::Cu);
    assert!(capacity_curve(&c, &CouplingOptions::default(), 1358.0, 0.05, &[]).is_err());
    assert!(capacity_curve(&c, &CouplingOptions::default(), 1358.0, 0.05, &[2.0, 1.0]).is_err());
}

#[test]
fn filtered_synthetic_cloud_keeps_the_trend() {
    // scattered events around t = 40 / I^2
    let mut events = Vec::new();
    for k in 0..120 {
        let i = 3.0 + 0.05 * k as f64;
        let wobble = 1.0 + 0.2 * ((k * 37 % 11) as f64 / 10.0 - 0.5);
        events.push(bondwire_core::optimizer::FusingEvent {
            current: i,
            duration: 40.0 / (i * i) * wobble,
        });
    }
    let s = histogram_filter(&events, None).unwrap();
    assert!(s.events.len() >= 2 && s.events.len() <= s.bins);
    assert_eq!(s.monotonicity_violations, 0);
}
