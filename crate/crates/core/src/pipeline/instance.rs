//! Benchmark instances and their on-disk manifest.
//!
//! Layout of one instance directory:
//! `instance.json`, `impl.src`, `tests/<files>`, `mutants/<id>.diff`,
//! `postconds/<set_id>.json`. JSON is written with sorted keys and a
//! trailing LF so that manifests diff cleanly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{io_err, PipelineError};
use crate::frontend::{classify_dependency, default_allowlist, loc_bucket, parse_unit, DependencyClass, LocBucket};
use crate::frontend::{MethodRecord, SourceUnit};
use crate::harness::{PostconditionSet, RunnerSpec};
use crate::mutgen::{apply_unified_diff, Mutant, MutantStatus};
use crate::validate::TaskSubject;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestManifest {
    pub runner: RunnerSpec,
    /// Relative `/`-separated path → file contents.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkInstance {
    pub task_id: String,
    pub sig: String,
    pub nl: String,
    pub impl_src: String,
    pub unit_path: String,
    pub method_name: String,
    pub tests: TestManifest,
    pub mutants: Vec<Mutant>,
    pub postconditions: Vec<PostconditionSet>,
    pub language_tag: String,
    pub dependency_class: DependencyClass,
    pub loc_bucket: LocBucket,
}

impl BenchmarkInstance {
    /// Re-parses the implementation and locates the method under test.
    pub fn subject(&self) -> Result<TaskSubject, PipelineError> {
        let unit = parse_unit(&self.unit_path, &self.unit_path, self.impl_src.clone(), &self.language_tag)
            .map_err(|e| PipelineError::Manifest(format!("impl.src: {e}")))?;
        let method = crate::frontend::find_method(&unit, &self.method_name)
            .ok_or_else(|| PipelineError::Manifest(format!("method {} not found in impl.src", self.method_name)))?;
        Ok(TaskSubject {
            task_id: self.task_id.clone(),
            unit,
            method,
        })
    }
}

pub fn assemble_instance(
    task_id: &str,
    unit: &SourceUnit,
    method: &MethodRecord,
    mutants: &[Mutant],
    psets: &[PostconditionSet],
    tests: TestManifest,
    min_mutants: usize,
) -> Result<BenchmarkInstance, PipelineError> {
    let defective: Vec<Mutant> = mutants
        .iter()
        .filter(|m| m.status == MutantStatus::Defective)
        .cloned()
        .collect();
    if defective.len() < min_mutants {
        return Err(PipelineError::TooFewMutants {
            have: defective.len(),
            need: min_mutants,
        });
    }
    if tests.files.is_empty() {
        return Err(PipelineError::MissingTests);
    }
    if unit.text.trim().is_empty() {
        return Err(PipelineError::Manifest("empty implementation".into()));
    }
    Ok(BenchmarkInstance {
        task_id: task_id.to_string(),
        sig: method.signature.clone(),
        nl: method.doc_comment.clone(),
        impl_src: unit.text.clone(),
        unit_path: unit.path.clone(),
        method_name: method.name.clone(),
        tests,
        mutants: defective,
        postconditions: psets.to_vec(),
        language_tag: unit.adapter_id.clone(),
        dependency_class: classify_dependency(method, &default_allowlist()),
        loc_bucket: loc_bucket(method),
    })
}

fn safe_name(name: &str) -> Result<&str, PipelineError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c));
    if ok {
        Ok(name)
    } else {
        Err(PipelineError::Manifest(format!("`{name}` is not usable as a file name")))
    }
}

fn safe_rel_path(path: &str) -> Result<&str, PipelineError> {
    for part in path.split('/') {
        safe_name(part)?;
    }
    Ok(path)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<String, PipelineError> {
    // Going through Value sorts object keys.
    let v = serde_json::to_value(value).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Writes the instance under `dir`, replacing any previous manifest there.
pub fn write_instance(inst: &BenchmarkInstance, dir: &Path) -> Result<(), PipelineError> {
    for sub in ["tests", "mutants", "postconds"] {
        let p = dir.join(sub);
        if p.exists() {
            std::fs::remove_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
    }
    let mut mutant_meta = Vec::new();
    for m in &inst.mutants {
        let id = safe_name(&m.mutant_id)?;
        let diff = crate::mutgen::unified_diff(&inst.unit_path, &inst.impl_src, &m.rendered_text);
        write(&dir.join("mutants").join(format!("{id}.diff")), &diff)?;
        let mut v = serde_json::to_value(m).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        v.as_object_mut().expect("mutant is an object").remove("rendered_text");
        mutant_meta.push(v);
    }
    let mut set_ids = Vec::new();
    for s in &inst.postconditions {
        let id = safe_name(&s.set_id)?;
        write(&dir.join("postconds").join(format!("{id}.json")), &json_bytes(s)?)?;
        set_ids.push(id.to_string());
    }
    for (rel, text) in &inst.tests.files {
        write(&dir.join("tests").join(safe_rel_path(rel)?), text)?;
    }
    write(&dir.join("impl.src"), &inst.impl_src)?;
    let manifest = serde_json::json!({
        "task_id": inst.task_id,
        "sig": inst.sig,
        "nl": inst.nl,
        "unit_path": inst.unit_path,
        "method_name": inst.method_name,
        "language_tag": inst.language_tag,
        "dependency_class": inst.dependency_class,
        "loc_bucket": inst.loc_bucket,
        "runner": inst.tests.runner,
        "test_files": inst.tests.files.keys().collect::<Vec<_>>(),
        "mutants": mutant_meta,
        "postconditions": set_ids,
    });
    write(&dir.join("instance.json"), &json_bytes(&manifest)?)
}

fn field<T: serde::de::DeserializeOwned>(v: &Value, key: &str) -> Result<T, PipelineError> {
    serde_json::from_value(v.get(key).cloned().unwrap_or(Value::Null))
        .map_err(|e| PipelineError::Manifest(format!("instance.json `{key}`: {e}")))
}

pub fn load_instance(dir: &Path) -> Result<BenchmarkInstance, PipelineError> {
    let manifest: Value = serde_json::from_str(&read(&dir.join("instance.json"))?)
        .map_err(|e| PipelineError::Manifest(format!("instance.json: {e}")))?;
    let impl_src = read(&dir.join("impl.src"))?;
    let mut files = BTreeMap::new();
    for rel in field::<Vec<String>>(&manifest, "test_files")? {
        let text = read(&dir.join("tests").join(safe_rel_path(&rel)?))?;
        files.insert(rel, text);
    }
    let mut mutants = Vec::new();
    for mut meta in field::<Vec<Value>>(&manifest, "mutants")? {
        let id: String = field(&meta, "mutant_id")?;
        let diff = read(&dir.join("mutants").join(format!("{}.diff", safe_name(&id)?)))?;
        let rendered = apply_unified_diff(&impl_src, &diff)
            .ok_or_else(|| PipelineError::Manifest(format!("diff for {id} does not apply")))?;
        meta.as_object_mut()
            .ok_or_else(|| PipelineError::Manifest(format!("mutant {id} is not an object")))?
            .insert("rendered_text".into(), Value::String(rendered));
        mutants.push(serde_json::from_value(meta).map_err(|e| PipelineError::Manifest(format!("mutant {id}: {e}")))?);
    }
    let mut postconditions = Vec::new();
    for id in field::<Vec<String>>(&manifest, "postconditions")? {
        let text = read(&dir.join("postconds").join(format!("{}.json", safe_name(&id)?)))?;
        postconditions
            .push(serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(format!("postconds/{id}.json: {e}")))?);
    }
    Ok(BenchmarkInstance {
        task_id: field(&manifest, "task_id")?,
        sig: field(&manifest, "sig")?,
        nl: field(&manifest, "nl")?,
        impl_src,
        unit_path: field(&manifest, "unit_path")?,
        method_name: field(&manifest, "method_name")?,
        tests: TestManifest {
            runner: field(&manifest, "runner")?,
            files,
        },
        mutants,
        postconditions,
        language_tag: field(&manifest, "language_tag")?,
        dependency_class: field(&manifest, "dependency_class")?,
        loc_bucket: field(&manifest, "loc_bucket")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{find_method, FIXTURE_ADAPTER};
    use crate::harness::Condition;
    use crate::mutgen::{generate_operator_mutants, Catalog};

    const SRC: &str = "/// Clamp a value into the closed range.\nfn clamp(x, lo, hi) {\n  if (x < lo) {\n    return lo;\n  }\n  if (x > hi) {\n    return hi;\n  }\n  return x;\n}\n";

    fn parts() -> (SourceUnit, MethodRecord, Vec<Mutant>, TestManifest) {
        let unit = parse_unit("src.fx", "src.fx", SRC, FIXTURE_ADAPTER).unwrap();
        let method = find_method(&unit, "clamp").unwrap();
        let mut mutants = generate_operator_mutants(&unit, &method, &Catalog::bundled("fixture").unwrap());
        for m in &mut mutants {
            if m.status == MutantStatus::Candidate {
                m.status = MutantStatus::Defective;
            }
        }
        let tests = TestManifest {
            runner: RunnerSpec::builtin("tests", 2000),
            files: BTreeMap::from([("tests.fx".to_string(), "test t { assert(clamp(5, 0, 3) == 3); }\n".to_string())]),
        };
        (unit, method, mutants, tests)
    }

    fn pset() -> PostconditionSet {
        PostconditionSet {
            set_id: "complete".into(),
            conditions: vec![Condition {
                cond_id: "in_range".into(),
                source_text: "result >= lo && result <= hi".into(),
                old_exprs: vec![],
            }],
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let (unit, method, mutants, tests) = parts();
        assert!(mutants.len() >= 5);
        let inst = assemble_instance("clamp", &unit, &method, &mutants, &[pset()], tests, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_instance(&inst, dir.path()).unwrap();
        let loaded = load_instance(dir.path()).unwrap();
        assert_eq!(loaded, inst);
        let before = read(&dir.path().join("instance.json")).unwrap();
        let again = tempfile::tempdir().unwrap();
        write_instance(&loaded, again.path()).unwrap();
        assert_eq!(read(&again.path().join("instance.json")).unwrap(), before);
        assert!(before.find("\"dependency_class\"").unwrap() < before.find("\"language_tag\"").unwrap());
        assert!(!before.contains('\r'));
        assert_eq!(loaded.subject().unwrap().method.name, "clamp");
    }

    #[test]
    fn too_few_mutants_and_missing_tests() {
        let (unit, method, mutants, tests) = parts();
        let four: Vec<Mutant> = mutants.iter().filter(|m| m.status == MutantStatus::Defective).take(4).cloned().collect();
        assert_eq!(
            assemble_instance("c", &unit, &method, &four, &[], tests.clone(), 5),
            Err(PipelineError::TooFewMutants { have: 4, need: 5 })
        );
        let empty = TestManifest { files: BTreeMap::new(), ..tests };
        assert_eq!(
            assemble_instance("c", &unit, &method, &mutants, &[], empty, 5),
            Err(PipelineError::MissingTests)
        );
    }

    #[test]
    fn unsafe_names_are_rejected() {
        assert!(safe_rel_path("a/../b").is_err());
        assert!(safe_rel_path("/abs").is_err());
        assert!(safe_rel_path("sub/tests.fx").is_ok());
    }
}
