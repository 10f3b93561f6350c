//! Loading experiment configurations from JSON or TOML files.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{CatError, Result};

/// Parses `path` as TOML when it ends in `.toml`, as JSON otherwise.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let is_toml = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| CatError::Config(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text)
            .map_err(|e| CatError::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::SimConfig;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("sim.toml");
        let j = dir.path().join("sim.json");
        std::fs::write(
            &t,
            "n_reps = 3\nseed = 9\n[[rules]]\nrule = \"min-epv\"\nestimator = \"median\"\n\n[theta_source]\nkind = \"explicit\"\nvalues = [0.0, 1.0]\n",
        )
        .unwrap();
        std::fs::write(
            &j,
            r#"{"n_reps": 3, "seed": 9, "rules": [{"rule": "min-epv", "estimator": "median"}],
                "theta_source": {"kind": "explicit", "values": [0.0, 1.0]}}"#,
        )
        .unwrap();
        let a: SimConfig = read_config(&t).unwrap();
        let b: SimConfig = read_config(&j).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_trials, 30);
        std::fs::write(&j, "{\"n_reps\": \"many\"}").unwrap();
        assert!(matches!(
            read_config::<SimConfig>(&j),
            Err(CatError::Config(_))
        ));
    }
}
