//! On-disk checkpoints: a directory holding `manifest.txt` (`key=value`
//! lines) and one little-endian `f64` array file `<name>.bin` per parameter.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::config::ModelConfig;
use super::params::ParamStore;
use super::student::StudentModel;
use crate::error::{Error, Result};
use crate::kv::{self, KvFields};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PARAM_EXT: &str = "bin";

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Inverse of [`encode_f64s`]; rejects lengths that are not a multiple of 8.
pub fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Data(format!(
            "parameter blob of {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Ordered `key=value` entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        Ok(Manifest {
            entries: kv::parse(text)?,
        })
    }

    pub fn render(&self) -> String {
        kv::render(self.entries.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }

    /// Sets `key`, replacing an earlier value.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Data(format!("manifest lacks {key:?}")))?;
        kv::parse_value(key, v).map_err(Error::Data)
    }

    pub fn set_fields(&mut self, fields: &impl KvFields) {
        for (k, v) in fields.fields() {
            self.set(k, v);
        }
    }

    /// Fills every field of `target` from the manifest; all must be present.
    pub fn read_fields(&self, target: &mut impl KvFields) -> Result<()> {
        let keys: Vec<&str> = target.fields().into_iter().map(|(k, _)| k).collect();
        for k in keys {
            let v = self
                .get(k)
                .ok_or_else(|| Error::Data(format!("manifest lacks {k:?}")))?;
            target.set_field(k, v).map_err(Error::Data)?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text).map_err(|msg| Error::Parse { path, msg })
    }
}

fn param_path(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.{PARAM_EXT}"))
}

pub fn save_params(dir: &Path, params: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, t) in params.iter() {
        let path = param_path(dir, name);
        fs::write(&path, encode_f64s(t.data())).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Overwrites every parameter of `params` from `dir`, keeping shapes.
pub fn load_params(dir: &Path, params: &mut ParamStore) -> Result<()> {
    for (name, t) in params.iter_mut() {
        let path = param_path(dir, name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let data = decode_f64s(&bytes)?;
        if data.len() != t.numel() {
            return Err(Error::Data(format!(
                "{}: {} values for parameter of shape {:?}",
                path.display(),
                data.len(),
                t.shape()
            )));
        }
        *t = Tensor::new(t.shape().to_vec(), data)?;
    }
    Ok(())
}

/// Writes a manifest plus parameters.
pub fn save_checkpoint(dir: &Path, manifest: &Manifest, params: &ParamStore) -> Result<()> {
    save_params(dir, params)?;
    manifest.save(dir)
}

fn expect_kind(m: &Manifest, kind: &str) -> Result<()> {
    match m.get("kind") {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::Data(format!("expected a {kind} checkpoint, found kind {other:?}"))),
    }
}

impl StudentModel {
    pub fn manifest(&self, step: u64) -> Manifest {
        let mut m = Manifest::new();
        m.set("kind", "student");
        m.set_fields(&self.config);
        m.set("seed", self.seed);
        m.set("step", step);
        m
    }

    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        save_checkpoint(dir, &self.manifest(step), &self.params)
    }

    /// Loads a checkpoint written by [`save`](Self::save); returns the step.
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let m = Manifest::load(dir)?;
        expect_kind(&m, "student")?;
        let mut config = ModelConfig::full_size(1);
        m.read_fields(&mut config)?;
        let seed = m.require("seed")?;
        let step = m.require("step")?;
        let mut model = StudentModel::build(config, seed)?;
        load_params(dir, &mut model.params)?;
        Ok((model, step))
    }
}

pub(crate) fn check_kind(m: &Manifest, kind: &str) -> Result<()> {
    expect_kind(m, kind)
}
