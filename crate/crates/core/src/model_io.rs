//! Reading PDB coordinate files into alpha-carbon traces.
//!
//! Only `ATOM` records whose atom name is exactly `" CA "` are kept. Columns
//! follow the PDB v3.3 fixed layout; everything outside the first `MODEL`
//! block is ignored.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Coord = Vector3<f64>;

/// Residue identity used for matching: chain, sequence number and insertion code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResidueKey {
    pub chain_id: char,
    pub seq_num: i32,
    pub insertion_code: char,
}

impl ResidueKey {
    pub fn new(chain_id: char, seq_num: i32, insertion_code: char) -> Self {
        Self {
            chain_id,
            seq_num,
            insertion_code,
        }
    }
}

impl Ord for ResidueKey {
    fn cmp(&self, other: &Self) -> Ordering {
        // blank insertion code (0x20) sorts before any letter
        self.seq_num
            .cmp(&other.seq_num)
            .then(self.insertion_code.cmp(&other.insertion_code))
            .then(self.chain_id.cmp(&other.chain_id))
    }
}

impl PartialOrd for ResidueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ResidueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.chain_id, self.seq_num)?;
        if self.insertion_code != ' ' {
            write!(f, "{}", self.insertion_code)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaAtom {
    pub key: ResidueKey,
    pub residue_name: String,
    pub pos: Coord,
}

/// One model's CA trace, strictly ordered by [`ResidueKey`], single chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureModel {
    pub name: String,
    atoms: Vec<CaAtom>,
}

impl StructureModel {
    /// Builds a model from atoms in any order. Enforces the same invariants
    /// as [`parse_pdb`].
    pub fn new(name: impl Into<String>, mut atoms: Vec<CaAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Format("no CA atoms found".into()));
        }
        if let Some(a) = atoms.iter().find(|a| !a.pos.iter().all(|c| c.is_finite())) {
            return Err(Error::Format(format!("non-finite coordinate at {}", a.key)));
        }
        let chain = atoms[0].key.chain_id;
        if let Some(other) = atoms.iter().find(|a| a.key.chain_id != chain) {
            return Err(Error::MultiChain(format!(
                "chains '{}' and '{}'",
                chain, other.key.chain_id
            )));
        }
        atoms.sort_by_key(|a| a.key);
        if let Some(w) = atoms.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(Error::Format(format!("duplicate residue {}", w[0].key)));
        }
        Ok(Self {
            name: name.into(),
            atoms,
        })
    }

    pub fn atoms(&self) -> &[CaAtom] {
        &self.atoms
    }

    /// Number of CA atoms, i.e. the model's declared length.
    pub fn declared_length(&self) -> usize {
        self.atoms.len()
    }

    pub fn chain_id(&self) -> char {
        self.atoms[0].key.chain_id
    }

    pub fn coords(&self) -> impl Iterator<Item = &Coord> {
        self.atoms.iter().map(|a| &a.pos)
    }
}

/// Slice fixed PDB columns (1-based, inclusive); short lines yield "".
fn columns(line: &str, start: usize, end: usize) -> &str {
    let len = line.len();
    if start > len {
        return "";
    }
    line.get(start - 1..end.min(len)).unwrap_or("")
}

fn column_char(line: &str, col: usize) -> char {
    columns(line, col, col).chars().next().unwrap_or(' ')
}

fn parse_coord(line: &str, start: usize, end: usize, lineno: usize) -> Result<f64> {
    let field = columns(line, start, end).trim();
    let value: f64 = field.parse().map_err(|_| {
        Error::Format(format!(
            "line {lineno}: bad coordinate field {:?} in columns {start}-{end}",
            field
        ))
    })?;
    if !value.is_finite() {
        return Err(Error::Format(format!("line {lineno}: non-finite coordinate")));
    }
    Ok(value)
}

/// Parses the CA trace of the first model in a PDB file.
pub fn parse_pdb(raw: &[u8], name: &str) -> Result<StructureModel> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| Error::Format(format!("file is not ASCII/UTF-8 text: {e}")))?;

    let mut atoms: BTreeMap<ResidueKey, CaAtom> = BTreeMap::new();
    let mut first_chain: Option<char> = None;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let record = columns(line, 1, 6);
        if record.starts_with("ENDMDL") {
            break;
        }
        if record != "ATOM  " && record.trim_end() != "ATOM" {
            continue;
        }
        if columns(line, 13, 16) != " CA " {
            continue;
        }
        let alt_loc = column_char(line, 17);
        if alt_loc != ' ' && alt_loc != 'A' {
            continue;
        }
        let seq_field = columns(line, 23, 26).trim();
        let seq_num: i32 = seq_field.parse().map_err(|_| {
            Error::Format(format!("line {lineno}: bad residue number {:?}", seq_field))
        })?;
        let key = ResidueKey::new(column_char(line, 22), seq_num, column_char(line, 27));
        let pos = Coord::new(
            parse_coord(line, 31, 38, lineno)?,
            parse_coord(line, 39, 46, lineno)?,
            parse_coord(line, 47, 54, lineno)?,
        );

        match first_chain {
            None => first_chain = Some(key.chain_id),
            Some(c) if c != key.chain_id => {
                return Err(Error::MultiChain(format!(
                    "line {lineno}: chain '{}' after chain '{c}'",
                    key.chain_id
                )))
            }
            Some(_) => {}
        }

        let atom = CaAtom {
            key,
            residue_name: columns(line, 18, 20).trim().to_string(),
            pos,
        };
        if atoms.insert(key, atom).is_some() {
            return Err(Error::Format(format!(
                "line {lineno}: duplicate residue {key}"
            )));
        }
    }

    if atoms.is_empty() {
        return Err(Error::Format("no CA atoms found".into()));
    }
    Ok(StructureModel {
        name: name.to_string(),
        atoms: atoms.into_values().collect(),
    })
}

/// Content digest of a model (name, residue identities and exact coordinates).
pub fn model_digest(model: &StructureModel) -> String {
    let mut h = Sha256::new();
    h.update((model.name.len() as u64).to_le_bytes());
    h.update(model.name.as_bytes());
    for atom in &model.atoms {
        let mut buf = [0u8; 4];
        h.update(atom.key.chain_id.encode_utf8(&mut buf).as_bytes());
        h.update(atom.key.seq_num.to_le_bytes());
        h.update(atom.key.insertion_code.encode_utf8(&mut buf).as_bytes());
        h.update((atom.residue_name.len() as u64).to_le_bytes());
        h.update(atom.residue_name.as_bytes());
        for c in atom.pos.iter() {
            h.update(c.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Renders a CA-only PDB file that [`parse_pdb`] reads back.
pub fn write_pdb(model: &StructureModel) -> String {
    let mut out = String::new();
    for (serial, atom) in model.atoms.iter().enumerate() {
        let _ = writeln!(
            out,
            "ATOM  {:>5}  CA  {:>3} {}{:>4}{}   {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           C",
            serial + 1,
            atom.residue_name,
            atom.key.chain_id,
            atom.key.seq_num,
            atom.key.insertion_code,
            atom.pos.x,
            atom.pos.y,
            atom.pos.z,
        );
    }
    out.push_str("TER\nEND\n");
    out
}

/// File name without directory or extension.
pub fn name_from_path(path: &str) -> String {
    let base = path.rsplit(['/', '\\']).next().unwrap_or(path);
    match base.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem.to_string(),
        _ => base.to_string(),
    }
}
