use hubtext_web::{beam_demo_json, contamination_demo_json, hub_demo_json};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn hub_of_two_points_bisects_them() {
    let v = parse(hub_demo_json(r#"{"points": [[1, 0], [0, 2]]}"#));
    let h = v["hub"].as_array().unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((h[0].as_f64().unwrap() - s).abs() < 1e-12);
    assert!((h[1].as_f64().unwrap() - s).abs() < 1e-12);
    assert!((v["objective"].as_f64().unwrap() - s).abs() < 1e-12);
}

#[test]
fn hub_demo_measures_and_errors() {
    let v = parse(hub_demo_json(
        r#"{"points": [[1, 0], [3, 0]], "measure": "neg_squared_euclidean"}"#,
    ));
    assert_eq!(v["hub"][0].as_f64().unwrap(), 2.0);
    assert!(hub_demo_json(r#"{"points": []}"#).is_err());
    assert!(hub_demo_json(r#"{"points": [[0, 0]]}"#).is_err());
    assert!(hub_demo_json(r#"{"points": [[1, 0]], "measure": "jaccard"}"#).is_err());
}

#[test]
fn beam_demo_improves_on_its_start() {
    let v = parse(beam_demo_json("{}"));
    let traj = v["trajectory"].as_array().unwrap();
    let first = traj[0]["best_score"].as_f64().unwrap();
    let best = v["best_score"].as_f64().unwrap();
    assert!(best >= first);
    assert_eq!(traj.last().unwrap()["best_score"].as_f64().unwrap(), best);
    assert!(beam_demo_json(r#"{"k": 0}"#).is_err());
}

#[test]
fn contamination_demo_hurts_precision() {
    let v = parse(contamination_demo_json(r#"{"counts": [1, 0]}"#));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows[0]["count"], 0);
    assert!(
        rows[1]["precision_at_1"].as_f64().unwrap() < rows[0]["precision_at_1"].as_f64().unwrap()
    );
}
