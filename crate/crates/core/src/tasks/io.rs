use std::fs;
use std::path::{Path, PathBuf};

use super::Scenario;
use crate::error::{Error, Result};

/// Writes a scenario as UTF-8 JSON.
pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    let json = serde_json::to_string(scenario).expect("scenario serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads and validates a scenario file. Parse errors carry serde's line and
/// column plus the offending or missing field.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Loads every `*.json` scenario in `dir`, ordered by the numeric suffix of
/// `scenario_<k>.json` (then by name).
pub fn load_dir(dir: &Path) -> Result<Vec<Scenario>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("scenario_"))
        })
        .collect();
    paths.sort_by_key(|p| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let num = stem
            .strip_prefix("scenario_")
            .and_then(|n| n.parse::<u64>().ok());
        (num.unwrap_or(u64::MAX), stem.to_string())
    });
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no scenario_*.json files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_scenario(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{generate_scenario, ChannelConfig};

    #[test]
    fn save_load_round_trip() {
        let s = generate_scenario(3, &ChannelConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scenario_0.json");
        save_scenario(&s, &p).unwrap();
        let back = load_scenario(&p).unwrap();
        assert_eq!(back, s);
        for (a, b) in s.samples.iter().zip(&back.samples) {
            for (x, y) in a.amp.iter().zip(&b.amp) {
                assert!((x - y).abs() <= 1e-15 * x.abs());
            }
        }
    }

    #[test]
    fn truncated_file_names_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scenario_0.json");
        fs::write(&p, r#"{"id":"x","samples":[]}"#).unwrap();
        match load_scenario(&p) {
            Err(Error::Parse { detail, .. }) => assert!(detail.contains("grid"), "{detail}"),
            other => panic!("{other:?}"),
        }
        fs::write(&p, r#"{"id":"x","grid":{"rows":3,"cols":4,"spacing_cm":60.0},"samples":[{"rp":0,"pos_cm":[0.0,0.0]}]}"#).unwrap();
        match load_scenario(&p) {
            Err(Error::Parse { detail, .. }) => {
                assert!(detail.contains("amp") && detail.contains("line"), "{detail}")
            }
            other => panic!("{other:?}"),
        }
        let full = serde_json::to_string(&generate_scenario(1, &ChannelConfig::default()).unwrap()).unwrap();
        fs::write(&p, &full[..full.len() / 2]).unwrap();
        assert!(matches!(load_scenario(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn wrong_label_is_rejected() {
        let mut s = generate_scenario(2, &ChannelConfig::default()).unwrap();
        s.samples[0].pos_cm = [1.0, 2.0];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scenario_0.json");
        save_scenario(&s, &p).unwrap();
        assert!(matches!(load_scenario(&p), Err(Error::Data(_))));
    }

    #[test]
    fn load_dir_orders_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ChannelConfig {
            samples_per_rp: 2,
            ..ChannelConfig::default()
        };
        for k in [10, 2, 1] {
            let mut s = generate_scenario(k, &cfg).unwrap();
            s.id = format!("s{k}");
            save_scenario(&s, &dir.path().join(format!("scenario_{k}.json"))).unwrap();
        }
        let ids: Vec<String> = load_dir(dir.path()).unwrap().into_iter().map(|s| s.id).collect();
        assert_eq!(ids, ["s1", "s2", "s10"]);
        assert!(load_dir(&dir.path().join("missing")).is_err());
    }
}
