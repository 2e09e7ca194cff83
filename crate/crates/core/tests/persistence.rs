use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;

use abc_core::arm::JOINT_COUNT;
use abc_core::memory::{ActionClip, ActionLibrary, MemoryError, Sample};

fn timestamp() -> impl Strategy<Value = DateTime<Utc>> {
    (0i64..4_000_000_000, 0u32..1_000_000_000).prop_map(|(s, ns)| Utc.timestamp_opt(s, ns).unwrap())
}

fn clip() -> impl Strategy<Value = ActionClip> {
    let positions = prop::array::uniform8(-std::f64::consts::PI..std::f64::consts::PI);
    let steps = prop::collection::vec((1e-3..0.5f64, positions), 2..40);
    (steps, 1.0..120.0f64, timestamp(), prop::option::of(timestamp())).prop_map(|(steps, rate, created, used)| {
        let mut t = 0.0;
        let samples = steps
            .into_iter()
            .enumerate()
            .map(|(i, (dt, positions))| {
                if i > 0 {
                    t += dt;
                }
                Sample { t, positions }
            })
            .collect();
        let mut c = ActionClip::new("", rate, samples);
        c.created_at = created;
        c.last_used_at = used;
        c
    })
}

fn library() -> impl Strategy<Value = ActionLibrary> {
    let name = "[a-zA-Z][a-zA-Z0-9 _'\\-\u{e9}\u{4e2d}]{0,20}";
    prop::collection::vec((name, clip()), 0..8).prop_map(|entries| {
        let mut lib = ActionLibrary::new();
        for (name, clip) in entries {
            if !lib.contains(&name) && !name.trim().is_empty() {
                lib.save_action(clip, &name, false).unwrap();
            }
        }
        lib
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn save_load_round_trip(lib in library()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("actions.json");
        lib.save_library(&path).unwrap();
        let loaded = ActionLibrary::load(&path).unwrap();
        prop_assert_eq!(loaded.clips(), lib.clips());
        // no temp file left behind
        prop_assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn truncation_is_reported_as_corruption(lib in library(), cut in 0.0..1.0f64) {
        let text = lib.to_json().unwrap();
        let at = ((text.len() as f64) * cut) as usize;
        let at = (0..=at).rev().find(|&i| text.is_char_boundary(i)).unwrap_or(0);
        let result = ActionLibrary::from_json(&text[..at]);
        prop_assert!(matches!(result, Err(MemoryError::CorruptFile(_))), "{:?}", result.map(|l| l.len()));
    }
}

#[test]
fn documented_errors_for_bad_files() {
    assert!(matches!(ActionLibrary::from_json("not json"), Err(MemoryError::CorruptFile(_))));
    assert!(matches!(ActionLibrary::from_json("{}"), Err(MemoryError::CorruptFile(_))));
    assert!(matches!(
        ActionLibrary::from_json(r#"{"version": 2, "actions": []}"#),
        Err(MemoryError::SchemaVersionMismatch { found: 2 })
    ));
    assert!(matches!(ActionLibrary::from_json(r#"{"version": 1, "actions": [1]}"#), Err(MemoryError::CorruptFile(_))));

    let mut lib = ActionLibrary::new();
    let samples = (0..3).map(|i| Sample { t: i as f64 * 0.1, positions: [0.0; JOINT_COUNT] }).collect();
    lib.save_action(ActionClip::new("", 10.0, samples), "a", false).unwrap();
    let text = lib.to_json().unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let first = value["actions"][0].clone();
    value["actions"].as_array_mut().unwrap().push(first);
    assert!(matches!(ActionLibrary::from_json(&value.to_string()), Err(MemoryError::CorruptFile(_))));

    let mut backwards = serde_json::from_str::<serde_json::Value>(&text).unwrap();
    backwards["actions"][0]["samples"][1][0] = serde_json::json!(5.0);
    assert!(matches!(ActionLibrary::from_json(&backwards.to_string()), Err(MemoryError::CorruptFile(_))));

    let missing = tempfile::tempdir().unwrap().path().join("none.json");
    assert!(matches!(ActionLibrary::load(&missing), Err(MemoryError::Io(_))));
    assert!(ActionLibrary::open(&missing).unwrap().is_empty());
}

#[test]
fn sample_is_a_flat_array_on_disk() {
    let mut lib = ActionLibrary::new();
    let samples = vec![
        Sample { t: 0.0, positions: [0.1; JOINT_COUNT] },
        Sample { t: 1.0 / 30.0, positions: [0.2; JOINT_COUNT] },
    ];
    lib.save_action(ActionClip::new("", 30.0, samples), "wave", false).unwrap();
    let value: serde_json::Value = serde_json::from_str(&lib.to_json().unwrap()).unwrap();
    assert_eq!(value["version"], 1);
    let row = value["actions"][0]["samples"][1].as_array().unwrap();
    assert_eq!(row.len(), 1 + JOINT_COUNT);
    assert_eq!(row[0].as_f64().unwrap(), 1.0 / 30.0);
    assert_eq!(value["actions"][0]["sample_rate_hz"], 30.0);
}
