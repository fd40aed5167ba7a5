//! Fixed-column structure-file parsing and binding-pocket extraction.
//!
//! Only ATOM/HETATM/MODEL/ENDMDL records are interpreted, first model only.
//! Hydrogens and alternate locations other than blank or 'A' are dropped.
//! Pockets are the protein atoms strictly within a cutoff radius of any
//! ligand atom, labeled with partial charges from a user-supplied table.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::geometry::{Atom, AtomCloud, AtomMeta, Vec3};

/// Identifies one het group: residue code, chain, residue sequence number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct HetKey {
    pub code: String,
    pub chain: char,
    pub res_seq: i32,
}

impl std::fmt::Display for HetKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.code, self.chain, self.res_seq)
    }
}

/// Parsed structure: protein atoms in file order plus het groups.
#[derive(Debug, Clone, Default)]
pub struct Structure {
    pub protein_atoms: Vec<Atom>,
    pub het_groups: BTreeMap<HetKey, Vec<Atom>>,
}

/// Charge lookup keyed by (residue name, atom name).
pub type ChargeTable = std::collections::HashMap<(String, String), f64>;

/// What to do when an atom has no entry in the charge table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingChargePolicy {
    /// Label the atom 0.0.
    Zero,
    /// Drop the atom from the pocket.
    Skip,
    /// Fail, naming the unresolved (residue, atom) pairs.
    Error,
}

#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    /// Pocket cutoff in angstroms; atoms strictly closer than this to any
    /// ligand atom are selected.
    pub cutoff_radius: f64,
    /// Ligand spec: `CODE`, `CODE:CHAIN`, or `CODE:CHAIN:SEQ`.
    pub ligand_code: String,
    pub charge_table: ChargeTable,
    pub missing_charge_policy: MissingChargePolicy,
    /// Also include non-ligand het atoms (waters, ions, cofactors) within
    /// the cutoff. Off by default: pockets are protein atoms only.
    pub include_other_het: bool,
}

impl ExtractionConfig {
    pub fn new(ligand_code: impl Into<String>) -> Self {
        ExtractionConfig {
            cutoff_radius: 5.3,
            ligand_code: ligand_code.into(),
            charge_table: ChargeTable::new(),
            missing_charge_policy: MissingChargePolicy::Zero,
            include_other_het: false,
        }
    }
}

fn field(line: &str, lineno: usize, range: std::ops::Range<usize>) -> Result<&str> {
    line.get(range.clone()).ok_or_else(|| Error::Parse {
        line: lineno,
        msg: format!("record too short for columns {}-{}", range.start + 1, range.end),
    })
}

fn parse_coord(line: &str, lineno: usize, range: std::ops::Range<usize>) -> Result<f64> {
    let raw = field(line, lineno, range.clone())?.trim();
    let value: f64 = raw.parse().map_err(|_| Error::Parse {
        line: lineno,
        msg: format!(
            "malformed coordinate `{raw}` in columns {}-{}",
            range.start + 1,
            range.end
        ),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("non-finite coordinate `{raw}`"),
        });
    }
    Ok(value)
}

fn element_is_hydrogen(element: &str) -> bool {
    matches!(element.to_ascii_uppercase().as_str(), "H" | "D")
}

/// Element from the atom-name field when columns 77-78 are blank: the first
/// alphabetic character (PDB names like `1HB1` lead with a digit).
fn element_from_name(name: &str) -> String {
    name.chars()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_default()
}

struct Record {
    is_het: bool,
    atom: Atom,
}

fn parse_record(line: &str, lineno: usize) -> Result<Option<Record>> {
    let is_het = line.starts_with("HETATM");
    let alt_loc = field(line, lineno, 16..17)?;
    if !matches!(alt_loc, " " | "A") {
        return Ok(None);
    }
    let atom_name = field(line, lineno, 12..16)?.trim().to_string();
    let res_name = field(line, lineno, 17..20)?.trim().to_string();
    let chain = field(line, lineno, 21..22)?.to_string();
    let res_seq_raw = field(line, lineno, 22..26)?.trim();
    let res_seq: i32 = res_seq_raw.parse().map_err(|_| Error::Parse {
        line: lineno,
        msg: format!("malformed residue number `{res_seq_raw}`"),
    })?;
    let x = parse_coord(line, lineno, 30..38)?;
    let y = parse_coord(line, lineno, 38..46)?;
    let z = parse_coord(line, lineno, 46..54)?;
    let element = line
        .get(76..78)
        .map(|e| e.trim().to_string())
        .filter(|e| !e.is_empty())
        .unwrap_or_else(|| element_from_name(&atom_name));
    if element_is_hydrogen(&element) {
        return Ok(None);
    }
    let atom = Atom::new(Vec3::new(x, y, z), 0.0)
        .map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?
        .with_element(element)
        .with_meta(AtomMeta {
            res_name,
            res_seq,
            atom_name,
            chain,
        });
    Ok(Some(Record { is_het, atom }))
}

/// Parse a fixed-column structure file. First model only; hydrogens and
/// non-'A' alternate locations are dropped.
pub fn parse_structure(text: &str) -> Result<Structure> {
    let mut structure = Structure::default();
    let mut models_seen = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with("MODEL") {
            models_seen += 1;
            if models_seen > 1 {
                break;
            }
        } else if line.starts_with("ENDMDL") {
            break;
        } else if line.starts_with("ATOM") || line.starts_with("HETATM") {
            let Some(record) = parse_record(line, lineno)? else {
                continue;
            };
            if record.is_het {
                let meta = &record.atom.meta;
                let key = HetKey {
                    code: meta.res_name.clone(),
                    chain: meta.chain.chars().next().unwrap_or(' '),
                    res_seq: meta.res_seq,
                };
                structure.het_groups.entry(key).or_default().push(record.atom);
            } else {
                structure.protein_atoms.push(record.atom);
            }
        }
    }
    if structure.protein_atoms.is_empty() && structure.het_groups.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no ATOM or HETATM records found".into(),
        });
    }
    Ok(structure)
}

impl Structure {
    /// Distinct het codes present, for diagnostics.
    pub fn het_codes(&self) -> Vec<String> {
        let codes: BTreeSet<&str> = self.het_groups.keys().map(|k| k.code.as_str()).collect();
        codes.into_iter().map(String::from).collect()
    }

    /// Resolve `CODE[:CHAIN[:SEQ]]` to exactly one het group.
    pub fn resolve_het(&self, spec: &str) -> Result<(&HetKey, &Vec<Atom>)> {
        let mut parts = spec.split(':');
        let code = parts.next().unwrap_or("").trim().to_uppercase();
        let chain: Option<char> = parts.next().and_then(|c| c.trim().chars().next());
        let res_seq: Option<i32> = match parts.next() {
            Some(raw) => Some(raw.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("malformed residue number in ligand spec `{spec}`"))
            })?),
            None => None,
        };

        let matches: Vec<(&HetKey, &Vec<Atom>)> = self
            .het_groups
            .iter()
            .filter(|(k, _)| {
                k.code.to_uppercase() == code
                    && chain.is_none_or(|c| k.chain == c)
                    && res_seq.is_none_or(|s| k.res_seq == s)
            })
            .collect();
        match matches.len() {
            0 => Err(Error::UnknownLigand {
                code: spec.to_string(),
                available: self.het_codes().join(", "),
            }),
            1 => Ok(matches[0]),
            _ => Err(Error::AmbiguousLigand {
                code: spec.to_string(),
                candidates: matches
                    .iter()
                    .map(|(k, _)| k.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
            }),
        }
    }
}

fn within_cutoff(position: &Vec3, ligand: &[Atom], cutoff: f64) -> bool {
    let cutoff_sq = cutoff * cutoff;
    ligand
        .iter()
        .any(|l| (position - l.position).norm_squared() < cutoff_sq)
}

/// Extract the binding pocket around the resolved ligand: every candidate
/// atom strictly within `cutoff_radius` of any ligand atom, labeled from the
/// charge table. The cloud's `ligand_class` is the het code.
pub fn extract_pocket(structure: &Structure, cfg: &ExtractionConfig) -> Result<AtomCloud> {
    if !(cfg.cutoff_radius.is_finite() && cfg.cutoff_radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff_radius must be finite and positive, got {}",
            cfg.cutoff_radius
        )));
    }
    let (key, ligand_atoms) = structure.resolve_het(&cfg.ligand_code)?;

    let mut selected: Vec<Atom> = structure
        .protein_atoms
        .iter()
        .filter(|a| within_cutoff(&a.position, ligand_atoms, cfg.cutoff_radius))
        .cloned()
        .collect();
    if cfg.include_other_het {
        for (other, atoms) in &structure.het_groups {
            if other == key {
                continue;
            }
            selected.extend(
                atoms
                    .iter()
                    .filter(|a| within_cutoff(&a.position, ligand_atoms, cfg.cutoff_radius))
                    .cloned(),
            );
        }
    }
    if selected.is_empty() {
        return Err(Error::EmptyPocket {
            code: key.to_string(),
            radius: cfg.cutoff_radius,
        });
    }

    let mut labeled = Vec::with_capacity(selected.len());
    let mut missing: BTreeSet<(String, String)> = BTreeSet::new();
    for mut atom in selected {
        let lookup = cfg
            .charge_table
            .get(&(atom.meta.res_name.clone(), atom.meta.atom_name.clone()));
        match (lookup, cfg.missing_charge_policy) {
            (Some(&charge), _) => {
                atom.label = charge;
                labeled.push(atom);
            }
            (None, MissingChargePolicy::Zero) => {
                atom.label = 0.0;
                labeled.push(atom);
            }
            (None, MissingChargePolicy::Skip) => {}
            (None, MissingChargePolicy::Error) => {
                missing.insert((atom.meta.res_name.clone(), atom.meta.atom_name.clone()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnresolvedCharges {
            pairs: missing
                .iter()
                .map(|(r, a)| format!("({r}, {a})"))
                .collect::<Vec<_>>()
                .join(", "),
        });
    }
    if labeled.is_empty() {
        return Err(Error::EmptyPocket {
            code: key.to_string(),
            radius: cfg.cutoff_radius,
        });
    }

    Ok(AtomCloud::new(format!("pocket_{key}"), labeled)?.with_ligand_class(key.code.clone()))
}

/// Extract a ligand's own atom cloud (labels 0; comparison is geometric).
pub fn extract_ligand(structure: &Structure, spec: &str) -> Result<AtomCloud> {
    let (key, atoms) = structure.resolve_het(spec)?;
    let mut cloud_atoms = atoms.clone();
    for a in &mut cloud_atoms {
        a.label = 0.0;
    }
    Ok(AtomCloud::new(format!("ligand_{key}"), cloud_atoms)?
        .with_ligand_class(key.code.clone()))
}
