use arraycal::cli::simulate_dataset;
use arraycal::dataset::Dataset;
use arraycal::Error;
use arraycal_core::measurement::{az_el_to_unit, unit_to_az_el};
use arraycal_core::simkit::{ScenarioKind, ScenarioSpec};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = ScenarioKind> {
    prop_oneof![
        Just(ScenarioKind::Observable),
        Just(ScenarioKind::ObservablePlanar),
        Just(ScenarioKind::CollinearReference),
        Just(ScenarioKind::CoplanarReference),
        Just(ScenarioKind::Preset),
        Just(ScenarioKind::Random),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dataset_json_round_trip(kind in kind(), seed in any::<u64>(), n in 2usize..6, k in 5usize..12, noise_free in any::<bool>()) {
        let spec = ScenarioSpec::new(kind, seed).with_size(n, k);
        let ds = simulate_dataset(&spec, noise_free).unwrap();
        let text = ds.to_json();
        let back = Dataset::from_json(&text).unwrap();
        prop_assert_eq!(&back, &ds);
        // writing again gives the same bytes
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn angle_doas_match_unit_vectors() {
    let ds = simulate_dataset(&ScenarioSpec::new(ScenarioKind::Preset, 3), true).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&ds.to_json()).unwrap();
    for step in value["steps"].as_array_mut().unwrap() {
        for doa in step["doas"].as_array_mut().unwrap() {
            let u: Vec<f64> = serde_json::from_value(doa.clone()).unwrap();
            let (az, el) = unit_to_az_el(&nalgebra::Vector3::new(u[0], u[1], u[2]));
            *doa = serde_json::json!({"azimuth_deg": az.to_degrees(), "elevation_deg": el.to_degrees()});
        }
    }
    let back = Dataset::from_json(&value.to_string()).unwrap();
    for (a, b) in back.measurements.steps.iter().zip(&ds.measurements.steps) {
        for (x, y) in a.doas.iter().zip(&b.doas) {
            assert!((x - y).norm() < 1e-12);
            assert!((x.norm() - 1.0).abs() < 1e-15);
        }
    }
    let (az, el) = unit_to_az_el(&az_el_to_unit(0.3, -0.2));
    assert!((az - 0.3).abs() < 1e-15 && (el + 0.2).abs() < 1e-15);
}

#[test]
fn truncated_displacements_rejected() {
    let ds = simulate_dataset(&ScenarioSpec::new(ScenarioKind::Random, 0).with_size(3, 3), false).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&ds.to_json()).unwrap();
    value["rel_displacements"].as_array_mut().unwrap().pop();
    assert!(matches!(
        Dataset::from_json(&value.to_string()),
        Err(Error::SchemaMismatch(_))
    ));
}
