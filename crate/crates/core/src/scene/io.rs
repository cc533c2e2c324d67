//! Scene and dataset persistence as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Scene;
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_json};

pub const SCHEMA_VERSION: &str = "trajex-scene/1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Index of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub files: Vec<String>,
}

/// Parses JSON text into `T`, reporting the failing field path.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "<root>".into(),
        msg: format!("malformed JSON: {e}"),
    })?;
    from_value(value)
}

pub(crate) fn from_value<T: serde::de::DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })
}

/// Removes and checks the `schema_version` key of a top-level object.
pub(crate) fn take_schema_version(value: &mut Value, expected: &str) -> Result<()> {
    let found = value
        .as_object_mut()
        .ok_or_else(|| Error::Parse {
            path: "<root>".into(),
            msg: "expected a JSON object".into(),
        })?
        .remove("schema_version");
    match found {
        Some(Value::String(v)) if v == expected => Ok(()),
        Some(v) => Err(Error::Schema(format!(
            "schema_version {v} does not match expected \"{expected}\""
        ))),
        None => Err(Error::Parse {
            path: "schema_version".into(),
            msg: "missing field".into(),
        }),
    }
}

pub fn scene_to_json(scene: &Scene) -> Result<Value> {
    let mut v = serde_json::to_value(scene).map_err(|e| Error::Input(e.to_string()))?;
    if let Value::Object(m) = &mut v {
        m.insert("schema_version".into(), Value::String(SCHEMA_VERSION.into()));
    }
    Ok(v)
}

pub fn scene_from_json(text: &str) -> Result<Scene> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "<root>".into(),
        msg: format!("malformed JSON: {e}"),
    })?;
    take_schema_version(&mut value, SCHEMA_VERSION)?;
    let scene: Scene = from_value(value)?;
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    write_json(path, &scene_to_json(scene)?)
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    scene_from_json(&read_to_string(path)?)
}

/// Writes one file per scene plus `manifest.json` into `dir`.
pub fn save_dataset(scenes: &[Scene], dir: &Path) -> Result<DatasetManifest> {
    let mut files = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let name = format!("{i:05}_{}.json", s.scene_id);
        save_scene(s, &dir.join(&name))?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION.into(),
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let manifest: DatasetManifest = parse_json(&read_to_string(&dir.join(MANIFEST_FILE))?)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "dataset schema_version \"{}\" does not match expected \"{SCHEMA_VERSION}\"",
            manifest.schema_version
        )));
    }
    manifest
        .files
        .iter()
        .map(|f| load_scene(&dir.join(f)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, GeneratorConfig, ScenarioFamily};

    fn sample() -> Scene {
        generate_scene(ScenarioFamily::StopStart, 3, &GeneratorConfig::default()).unwrap()
    }

    #[test]
    fn roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        for family in ScenarioFamily::ALL {
            let s = generate_scene(family, 11, &GeneratorConfig::default()).unwrap();
            let p = dir.path().join("s.json");
            save_scene(&s, &p).unwrap();
            assert_eq!(load_scene(&p).unwrap(), s);
        }
    }

    #[test]
    fn short_track_names_the_track() {
        let mut s = sample();
        s.tracks[1].states.remove(0);
        let text = serde_json::to_string(&scene_to_json(&s).unwrap()).unwrap();
        match scene_from_json(&text) {
            Err(Error::Parse { path, msg }) => {
                assert_eq!(path, "tracks[1].states");
                assert!(msg.contains("track 2"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_predict_ids_rejected() {
        let mut s = sample();
        s.predict_ids.clear();
        let text = serde_json::to_string(&scene_to_json(&s).unwrap()).unwrap();
        assert!(matches!(scene_from_json(&text), Err(Error::Parse { path, .. }) if path == "predict_ids"));
    }

    #[test]
    fn schema_mismatch_and_bad_fields() {
        let s = sample();
        let mut v = scene_to_json(&s).unwrap();
        v["schema_version"] = Value::String("other/9".into());
        assert!(matches!(
            scene_from_json(&v.to_string()),
            Err(Error::Schema(_))
        ));
        let mut v = scene_to_json(&s).unwrap();
        v["tracks"][0]["states"][3]["x"] = Value::String("oops".into());
        match scene_from_json(&v.to_string()) {
            Err(Error::Parse { path, .. }) => assert_eq!(path, "tracks[0].states[3].x"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(scene_from_json("{"), Err(Error::Parse { .. })));
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let scenes: Vec<_> = (0..3)
            .map(|i| generate_scene(ScenarioFamily::Turn, i, &GeneratorConfig::default()).unwrap())
            .collect();
        let m = save_dataset(&scenes, dir.path()).unwrap();
        assert_eq!(m.files.len(), 3);
        assert_eq!(load_dataset(dir.path()).unwrap(), scenes);
    }
}
