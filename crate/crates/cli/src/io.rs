//! Multi-frame structure files.
//!
//! Each frame is an atom-count line, a metadata line of `key=value` pairs
//! (values with spaces are double-quoted) and one line per atom:
//! `token x y z [charge]`. `Lattice="v1x v1y v1z v2x v2y v2z v3x v3y v3z"`
//! makes the frame periodic and `Energy=<float>` attaches a target. A numeric
//! token doubles as the atom's charge when no charge column is given.

use std::collections::BTreeMap;
use std::path::Path;

use ewald_core::geometry::{Cell, Structure};
use ewald_core::{Error, Result};
use nalgebra::Vector3;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub structure: Structure,
    pub energy: Option<f64>,
    /// Metadata other than `Lattice` and `Energy`.
    pub info: BTreeMap<String, String>,
}

impl Record {
    pub fn new(structure: Structure) -> Record {
        Record {
            structure,
            energy: None,
            info: BTreeMap::new(),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Splits a metadata line into `(key, value)` pairs.
fn metadata(text: &str, line: usize) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut rest = text.trim_start();
    while !rest.is_empty() {
        let eq = rest
            .find('=')
            .ok_or_else(|| parse_err(line, format!("expected key=value near {rest:?}")))?;
        let key = &rest[..eq];
        if key.is_empty() || key.contains(char::is_whitespace) || key.contains('"') {
            return Err(parse_err(line, format!("bad metadata key {key:?}")));
        }
        rest = &rest[eq + 1..];
        let value;
        if let Some(quoted) = rest.strip_prefix('"') {
            let end = quoted
                .find('"')
                .ok_or_else(|| parse_err(line, format!("unterminated quote for {key}")))?;
            value = &quoted[..end];
            rest = &quoted[end + 1..];
            if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
                return Err(parse_err(
                    line,
                    format!("text after closing quote of {key}"),
                ));
            }
        } else {
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            value = &rest[..end];
            rest = &rest[end..];
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(parse_err(line, format!("duplicate metadata key {key}")));
        }
        out.push((key.to_string(), value.to_string()));
        rest = rest.trim_start();
    }
    Ok(out)
}

fn float(token: &str, line: usize, what: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            parse_err(
                line,
                format!("{what}: expected a finite number, got {token:?}"),
            )
        })
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::new();
    let mut at = 0;
    loop {
        while at < lines.len() && lines[at].trim().is_empty() {
            at += 1;
        }
        if at == lines.len() {
            return Ok(records);
        }
        let count_line = at + 1;
        let count: usize = lines[at].trim().parse().map_err(|_| {
            parse_err(
                count_line,
                format!("expected an atom count, got {:?}", lines[at].trim()),
            )
        })?;
        let meta_line = lines
            .get(at + 1)
            .ok_or_else(|| parse_err(count_line + 1, "missing metadata line"))?;
        let mut cell = None;
        let mut energy = None;
        let mut info = BTreeMap::new();
        for (key, value) in metadata(meta_line, count_line + 1)? {
            match key.as_str() {
                "Lattice" => {
                    let v: Vec<f64> = value
                        .split_whitespace()
                        .map(|t| float(t, count_line + 1, "Lattice"))
                        .collect::<Result<_>>()?;
                    let flat: [f64; 9] = v
                        .try_into()
                        .map_err(|_| parse_err(count_line + 1, "Lattice needs 9 numbers"))?;
                    cell = Some(
                        Cell::from_flat(&flat)
                            .map_err(|e| parse_err(count_line + 1, e.to_string()))?,
                    );
                }
                "Energy" => energy = Some(float(&value, count_line + 1, "Energy")?),
                _ => {
                    info.insert(key, value);
                }
            }
        }

        let mut positions = Vec::with_capacity(count);
        let mut species = Vec::with_capacity(count);
        let mut charges: Vec<Option<f64>> = Vec::with_capacity(count);
        for a in 0..count {
            let line = at + 3 + a;
            let text = lines.get(line - 1).ok_or_else(|| {
                parse_err(
                    line,
                    format!("declared {count} atoms but the file ends after {a}"),
                )
            })?;
            let tokens: Vec<&str> = text.split_whitespace().collect();
            if tokens.len() != 4 && tokens.len() != 5 {
                return Err(parse_err(
                    line,
                    format!(
                        "expected `token x y z [charge]`, got {} fields",
                        tokens.len()
                    ),
                ));
            }
            let x = Vector3::new(
                float(tokens[1], line, "x")?,
                float(tokens[2], line, "y")?,
                float(tokens[3], line, "z")?,
            );
            let q = match tokens.get(4) {
                Some(t) => Some(float(t, line, "charge")?),
                None => tokens[0].parse::<f64>().ok().filter(|v| v.is_finite()),
            };
            if a > 0 && q.is_some() != charges[0].is_some() {
                return Err(parse_err(
                    line,
                    "charges must be given for all atoms of a frame or for none",
                ));
            }
            positions.push(x);
            species.push(tokens[0].to_string());
            charges.push(q);
        }
        let mut structure = Structure::new(positions, species, cell);
        if count > 0 && charges[0].is_some() {
            structure = structure.with_charges(charges.into_iter().flatten().collect());
        }
        records.push(Record {
            structure,
            energy,
            info,
        });
        at += 2 + count;
        if let Some(next) = lines.get(at) {
            if !next.trim().is_empty() && next.trim().parse::<usize>().is_err() {
                return Err(parse_err(
                    at + 1,
                    format!("more atom lines than the declared count {count}"),
                ));
            }
        }
    }
}

fn quote(value: &str) -> String {
    if value.is_empty() || value.contains(char::is_whitespace) {
        format!("\"{value}\"")
    } else {
        value.to_string()
    }
}

pub fn write_records(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        let s = &r.structure;
        out.push_str(&format!("{}\n", s.len()));
        let mut meta = Vec::new();
        if let Some(cell) = &s.cell {
            let flat: Vec<String> = cell.to_flat().iter().map(|v| format!("{v:?}")).collect();
            meta.push(format!("Lattice=\"{}\"", flat.join(" ")));
        }
        if let Some(e) = r.energy {
            meta.push(format!("Energy={e:?}"));
        }
        for (k, v) in &r.info {
            meta.push(format!("{k}={}", quote(v)));
        }
        out.push_str(&meta.join(" "));
        out.push('\n');
        for (a, x) in s.positions.iter().enumerate() {
            out.push_str(&format!(
                "{} {:?} {:?} {:?}",
                s.species[a], x[0], x[1], x[2]
            ));
            if let Some(q) = &s.charges {
                out.push_str(&format!(" {:?}", q[a]));
            }
            out.push('\n');
        }
    }
    out
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    parse_records(&std::fs::read_to_string(path)?)
}

pub fn write_records_to(path: &Path, records: &[Record]) -> Result<()> {
    std::fs::write(path, write_records(records))?;
    Ok(())
}
