//! Scene file ingestion and emission.
//!
//! One scene per file, human-readable JSON, schema documented in
//! `docs/scene-format.md`. Serialization is canonical: saving a loaded scene
//! always produces the same bytes, so golden files diff cleanly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::Scene;

/// Canonical serialization of a scene: pretty JSON, fixed field order,
/// shortest round-trip float formatting, trailing newline.
pub fn scene_to_canonical_json(scene: &Scene) -> String {
    let mut s = serde_json::to_string_pretty(scene).expect("scene serialization cannot fail");
    s.push('\n');
    s
}

/// Write a scene in canonical form.
pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    fs::write(path, scene_to_canonical_json(scene)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load and fully validate a scene file.
///
/// Unknown fields, type mismatches, and invariant violations are all
/// rejected with field-level diagnostics; nothing is repaired.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let scene: Scene = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    scene.validate().map_err(|detail| Error::Schema {
        path: path.to_path_buf(),
        detail,
    })?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synthesize_scene, SynthSpec};
    use std::path::PathBuf;

    fn golden_path() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny_straight.scene.json")
    }

    #[test]
    fn golden_file_loads() {
        let scene = load_scene(&golden_path()).unwrap();
        assert_eq!(scene.agents.len(), 2);
        assert_eq!(scene.polygons.len(), 3);
        assert_eq!(scene.scenario_id, "tiny-straight");
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut text = fs::read_to_string(golden_path()).unwrap();
        // Drop one validity flag from the first agent.
        let needle = "\"valid\": [\n        true,";
        assert!(text.contains(needle));
        text = text.replacen(needle, "\"valid\": [", 1);
        let dir = std::env::temp_dir().join("lanet-format-test");
        fs::create_dir_all(&dir).unwrap();
        let bad = dir.join("bad.scene.json");
        fs::write(&bad, text).unwrap();
        let err = load_scene(&bad).unwrap_err();
        assert!(
            matches!(err, Error::Schema { .. }),
            "expected schema violation, got {err:?}"
        );
    }

    #[test]
    fn unknown_field_rejected() {
        let text = fs::read_to_string(golden_path()).unwrap();
        let text = text.replacen(
            "\"scenario_id\"",
            "\"extra_field\": 1,\n  \"scenario_id\"",
            1,
        );
        let dir = std::env::temp_dir().join("lanet-format-test");
        fs::create_dir_all(&dir).unwrap();
        let bad = dir.join("unknown.scene.json");
        fs::write(&bad, text).unwrap();
        assert!(matches!(load_scene(&bad).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn round_trip_is_canonical() {
        let dir = std::env::temp_dir().join("lanet-format-test");
        fs::create_dir_all(&dir).unwrap();

        for (name, scene) in [
            ("golden", load_scene(&golden_path()).unwrap()),
            ("synth", synthesize_scene(42, &SynthSpec::default()).unwrap()),
        ] {
            let p1 = dir.join(format!("{name}-1.scene.json"));
            let p2 = dir.join(format!("{name}-2.scene.json"));
            save_scene(&scene, &p1).unwrap();
            let reloaded = load_scene(&p1).unwrap();
            assert_eq!(reloaded, scene);
            save_scene(&reloaded, &p2).unwrap();
            assert_eq!(
                fs::read(&p1).unwrap(),
                fs::read(&p2).unwrap(),
                "canonical serialization must be byte-stable for {name}"
            );
        }
    }
}
