//! Plain-text parameter checkpoints.
//!
//! ```text
//! format-version 1
//! meta <key> <value...>
//! param <name> <rows> <cols>
//! <rows*cols whitespace-separated values>
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::params::ParamStore;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor2)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: BTreeMap<String, String>) -> Checkpoint {
        let params = store
            .ids()
            .map(|id| (store.name(id).to_string(), store.value(id).clone()))
            .collect();
        Checkpoint { meta, params }
    }

    /// Copies every stored tensor into `store`. Names and shapes must match exactly.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if store.value(id).shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} does not match model {:?}",
                    value.shape(),
                    store.value(id).shape()
                )));
            }
            *store.value_mut(id) = value.clone();
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("format-version {FORMAT_VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.params {
            let _ = writeln!(out, "param {name} {} {}", t.rows(), t.cols());
            let line: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Checkpoint> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == format!("format-version {FORMAT_VERSION}") => {}
            Some((_, l)) => return Err(Error::Checkpoint(format!("unsupported header {l:?}"))),
            None => return Err(Error::Checkpoint("empty checkpoint".into())),
        }
        let mut ck = Checkpoint::default();
        while let Some((n, line)) = lines.next() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("param ") {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                let bad = || Error::Checkpoint(format!("line {line_no}: malformed param header"));
                if fields.len() != 3 {
                    return Err(bad());
                }
                let rows: usize = fields[1].parse().map_err(|_| bad())?;
                let cols: usize = fields[2].parse().map_err(|_| bad())?;
                let data_line = lines
                    .next()
                    .map(|(_, l)| l)
                    .ok_or_else(|| Error::Checkpoint(format!("line {line_no}: missing values")))?;
                let data = data_line
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Checkpoint(format!("line {}: {e}", line_no + 1)))?;
                let t = Tensor2::from_vec(rows, cols, data).map_err(|_| {
                    Error::Checkpoint(format!(
                        "line {}: expected {} values",
                        line_no + 1,
                        rows * cols
                    ))
                })?;
                ck.params.push((fields[0].to_string(), t));
            } else {
                return Err(Error::Checkpoint(format!(
                    "line {line_no}: unrecognised record"
                )));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        Checkpoint::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_store(seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.add(
            "a.weight",
            Tensor2::from_fn(3, 4, |_, _| rng.random::<f64>() * 1e3 - 5e2),
        );
        s.add(
            "a.bias",
            Tensor2::from_fn(1, 3, |_, _| rng.random::<f64>() * 1e-9),
        );
        s.add("empty", Tensor2::zeros(0, 2));
        s
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let store = random_store(9);
        let mut meta = BTreeMap::new();
        meta.insert("mode".to_string(), "ewald".to_string());
        meta.insert("note".to_string(), "two words".to_string());
        let ck = Checkpoint::from_store(&store, meta);
        let back = Checkpoint::parse(&ck.to_text()).unwrap();
        assert_eq!(back, ck);

        let mut other = random_store(10);
        back.restore_into(&mut other).unwrap();
        for id in store.ids() {
            assert_eq!(store.value(id), other.value(id));
        }
    }

    #[test]
    fn rejects_mismatches() {
        assert!(Checkpoint::parse("format-version 2\n").is_err());
        assert!(Checkpoint::parse("format-version 1\nparam x 2 2\n1 2 3\n").is_err());
        let ck = Checkpoint::parse("format-version 1\nparam a.weight 2 2\n1 2 3 4\n").unwrap();
        assert!(ck.restore_into(&mut random_store(1)).is_err());
    }
}
