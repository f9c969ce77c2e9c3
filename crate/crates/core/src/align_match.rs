//! Common-residue matching between two models of the same protein.
//!
//! Residues are paired by [`ResidueKey`] identity, not by alignment: the
//! correspondence between models of one protein is fixed up front, so the
//! only work is intersecting the two key sets.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::{Coord, ResidueKey, StructureModel};

/// Fraction of matched residues whose names may disagree before the pair is
/// rejected as two different proteins.
pub const MIXED_PROTEIN_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueMatch {
    pub keys: Vec<ResidueKey>,
    pub coords_a: Vec<Coord>,
    pub coords_b: Vec<Coord>,
    pub len_a: usize,
    pub len_b: usize,
    /// Keys where both models have a CA but different residue names.
    pub name_mismatches: Vec<ResidueKey>,
}

impl ResidueMatch {
    pub fn matched_len(&self) -> usize {
        self.keys.len()
    }

    /// Human-readable note about residue-name disagreements, if any.
    pub fn warning(&self) -> Option<String> {
        if self.name_mismatches.is_empty() {
            return None;
        }
        let shown: Vec<String> = self
            .name_mismatches
            .iter()
            .take(5)
            .map(ToString::to_string)
            .collect();
        let more = self.name_mismatches.len().saturating_sub(shown.len());
        let mut msg = format!(
            "residue names differ at {} of {} matched positions ({}",
            self.name_mismatches.len(),
            self.matched_len(),
            shown.join(", ")
        );
        if more > 0 {
            msg.push_str(&format!(", +{more} more"));
        }
        msg.push(')');
        Some(msg)
    }
}

/// Intersects the residue keys of two models.
pub fn match_residues(a: &StructureModel, b: &StructureModel) -> Result<ResidueMatch> {
    if a.chain_id() != b.chain_id() {
        return Err(Error::ChainMismatch(a.chain_id(), b.chain_id()));
    }

    let (aa, ba) = (a.atoms(), b.atoms());
    let cap = aa.len().min(ba.len());
    let mut keys = Vec::with_capacity(cap);
    let mut coords_a = Vec::with_capacity(cap);
    let mut coords_b = Vec::with_capacity(cap);
    let mut name_mismatches = Vec::new();

    // both atom lists are sorted by key; merge-walk them
    let (mut i, mut j) = (0, 0);
    while i < aa.len() && j < ba.len() {
        match aa[i].key.cmp(&ba[j].key) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                keys.push(aa[i].key);
                coords_a.push(aa[i].pos);
                coords_b.push(ba[j].pos);
                if aa[i].residue_name != ba[j].residue_name {
                    name_mismatches.push(aa[i].key);
                }
                i += 1;
                j += 1;
            }
        }
    }

    if keys.is_empty() {
        return Err(Error::NoCommonResidues);
    }
    if name_mismatches.len() as f64 > MIXED_PROTEIN_FRACTION * keys.len() as f64 {
        return Err(Error::MixedProtein {
            mismatched: name_mismatches.len(),
            matched: keys.len(),
        });
    }

    Ok(ResidueMatch {
        keys,
        coords_a,
        coords_b,
        len_a: a.declared_length(),
        len_b: b.declared_length(),
        name_mismatches,
    })
}
