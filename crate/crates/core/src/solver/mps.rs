//! Free-form MPS export and a reader for the same dialect.
//!
//! Dialect: free-form fields separated by whitespace; objective row `OBJ`
//! (minimisation); integer columns wrapped in `MARKER INTORG/INTEND` blocks
//! and always given an explicit `UP` bound; zero coefficients are omitted,
//! except that a column with no nonzero entry at all is declared through an
//! explicit `OBJ 0` entry so it survives a round trip. Numbers use the
//! shortest representation that parses back to the same `f64`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::milp::{MilpInstance, RowKey, Sense, VarKey, VarKind};

const OBJ: &str = "OBJ";

#[derive(Debug, thiserror::Error)]
pub enum MpsError {
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Renders `instance` as MPS text; names come from the typed keys.
pub fn write_standard_form(instance: &MilpInstance, name: &str) -> String {
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); instance.num_cols()];
    for (ri, r) in instance.rows.iter().enumerate() {
        for &(c, a) in &r.terms {
            if a != 0.0 {
                by_col[c].push((ri, a));
            }
        }
    }
    let row_names: Vec<String> = instance.rows.iter().map(|r| r.key.to_string()).collect();

    let mut s = String::new();
    let _ = writeln!(s, "NAME {name}");
    s.push_str("ROWS\n");
    let _ = writeln!(s, " N {OBJ}");
    for (r, rn) in instance.rows.iter().zip(&row_names) {
        let t = match r.sense {
            Sense::Le => 'L',
            Sense::Ge => 'G',
            Sense::Eq => 'E',
        };
        let _ = writeln!(s, " {t} {rn}");
    }
    s.push_str("COLUMNS\n");
    let mut in_int = false;
    let mut marker = 0;
    for (ci, c) in instance.columns.iter().enumerate() {
        let is_int = c.kind == VarKind::Binary;
        if is_int != in_int {
            let tag = if is_int { "INTORG" } else { "INTEND" };
            let _ = writeln!(s, " MARKER{marker} 'MARKER' '{tag}'");
            marker += 1;
            in_int = is_int;
        }
        let cn = c.key.to_string();
        if c.cost != 0.0 || by_col[ci].is_empty() {
            let _ = writeln!(s, " {cn} {OBJ} {}", num(c.cost));
        }
        for &(ri, a) in &by_col[ci] {
            let _ = writeln!(s, " {cn} {} {}", row_names[ri], num(a));
        }
    }
    if in_int {
        let _ = writeln!(s, " MARKER{marker} 'MARKER' 'INTEND'");
    }
    s.push_str("RHS\n");
    for (r, rn) in instance.rows.iter().zip(&row_names) {
        if r.rhs != 0.0 {
            let _ = writeln!(s, " RHS {rn} {}", num(r.rhs));
        }
    }
    s.push_str("BOUNDS\n");
    for c in &instance.columns {
        let cn = c.key.to_string();
        if c.lower == c.upper {
            let _ = writeln!(s, " FX BND {cn} {}", num(c.lower));
            continue;
        }
        if c.lower == f64::NEG_INFINITY {
            let _ = writeln!(s, " MI BND {cn}");
        } else if c.lower != 0.0 {
            let _ = writeln!(s, " LO BND {cn} {}", num(c.lower));
        }
        if c.upper.is_finite() || c.kind == VarKind::Binary {
            let _ = writeln!(s, " UP BND {cn} {}", num(c.upper));
        }
    }
    s.push_str("ENDATA\n");
    s
}

/// Writes `instance` to `path` in the dialect above.
pub fn export_standard_form(instance: &MilpInstance, path: impl AsRef<Path>) -> Result<(), MpsError> {
    let path = path.as_ref();
    fs::write(path, write_standard_form(instance, "saev")).map_err(|source| MpsError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Parsed MPS model with named rows and columns and a sorted coefficient list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MpsModel {
    pub name: String,
    pub row_names: Vec<String>,
    pub senses: Vec<Sense>,
    pub rhs: Vec<f64>,
    pub col_names: Vec<String>,
    pub integer: Vec<bool>,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `(row, column, value)` sorted by row then column.
    pub entries: Vec<(usize, usize, f64)>,
}

impl MpsModel {
    /// The model an exact round trip of `instance` must reproduce.
    pub fn from_instance(instance: &MilpInstance) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = instance
            .rows
            .iter()
            .enumerate()
            .flat_map(|(ri, r)| r.terms.iter().filter(|(_, a)| *a != 0.0).map(move |&(c, a)| (ri, c, a)))
            .collect();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Self {
            name: "saev".into(),
            row_names: instance.rows.iter().map(|r| r.key.to_string()).collect(),
            senses: instance.rows.iter().map(|r| r.sense).collect(),
            rhs: instance.rows.iter().map(|r| r.rhs).collect(),
            col_names: instance.columns.iter().map(|c| c.key.to_string()).collect(),
            integer: instance.columns.iter().map(|c| c.kind == VarKind::Binary).collect(),
            cost: instance.columns.iter().map(|c| c.cost).collect(),
            lower: instance.columns.iter().map(|c| c.lower).collect(),
            upper: instance.columns.iter().map(|c| c.upper).collect(),
            entries,
        }
    }

    /// Rebuilds an instance with generic keys in file order.
    pub fn to_instance(&self) -> MilpInstance {
        let mut m = MilpInstance::new();
        for c in 0..self.col_names.len() {
            let kind = if self.integer[c] { VarKind::Binary } else { VarKind::Continuous };
            m.add_column(VarKey::Generic(c as u32), kind, self.lower[c], self.upper[c], self.cost[c])
                .expect("generic keys are unique");
        }
        let mut terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.row_names.len()];
        for &(r, c, a) in &self.entries {
            terms[r].push((c, a));
        }
        for (r, t) in terms.into_iter().enumerate() {
            m.add_row(RowKey::Generic(r as u32), t, self.senses[r], self.rhs[r])
                .expect("entries reference parsed columns");
        }
        m
    }
}

pub fn read_standard_form(path: impl AsRef<Path>) -> Result<MpsModel, MpsError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| MpsError::Read { path: path.display().to_string(), source })?;
    parse_standard_form(&text)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Rows,
    Columns,
    Rhs,
    Bounds,
}

pub fn parse_standard_form(text: &str) -> Result<MpsModel, MpsError> {
    let mut m = MpsModel::default();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut obj_name: Option<String> = None;
    let mut section = Section::None;
    let mut in_int = false;

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |msg: String| MpsError::Parse { line, msg };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        let f: Vec<&str> = trimmed.split_whitespace().collect();
        if !raw.starts_with(' ') && !raw.starts_with('\t') {
            section = match f[0] {
                "NAME" => {
                    m.name = f.get(1).unwrap_or(&"").to_string();
                    Section::None
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "ENDATA" => break,
                other => return Err(err(format!("unsupported section {other}"))),
            };
            continue;
        }
        let value = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s}")));
        match section {
            Section::Rows => {
                let [kind, name] = f[..] else { return Err(err("expected `<type> <name>`".into())) };
                let sense = match kind {
                    "N" => {
                        if obj_name.is_none() {
                            obj_name = Some(name.to_string());
                        }
                        continue;
                    }
                    "L" => Sense::Le,
                    "G" => Sense::Ge,
                    "E" => Sense::Eq,
                    other => return Err(err(format!("unknown row type {other}"))),
                };
                row_index.insert(name.to_string(), m.row_names.len());
                m.row_names.push(name.to_string());
                m.senses.push(sense);
                m.rhs.push(0.0);
            }
            Section::Columns => {
                if f.len() == 3 && f[1] == "'MARKER'" {
                    in_int = match f[2] {
                        "'INTORG'" => true,
                        "'INTEND'" => false,
                        other => return Err(err(format!("unknown marker {other}"))),
                    };
                    continue;
                }
                if f.len() != 3 && f.len() != 5 {
                    return Err(err("expected `<col> <row> <value> [<row> <value>]`".into()));
                }
                let col = *col_index.entry(f[0].to_string()).or_insert_with(|| {
                    m.col_names.push(f[0].to_string());
                    m.integer.push(in_int);
                    m.cost.push(0.0);
                    m.lower.push(0.0);
                    m.upper.push(f64::INFINITY);
                    m.col_names.len() - 1
                });
                for pair in f[1..].chunks(2) {
                    let v = value(pair[1])?;
                    if Some(pair[0]) == obj_name.as_deref() {
                        m.cost[col] = v;
                    } else {
                        let r = *row_index.get(pair[0]).ok_or_else(|| err(format!("unknown row {}", pair[0])))?;
                        if v != 0.0 {
                            m.entries.push((r, col, v));
                        }
                    }
                }
            }
            Section::Rhs => {
                if f.len() != 3 && f.len() != 5 {
                    return Err(err("expected `<set> <row> <value> [<row> <value>]`".into()));
                }
                for pair in f[1..].chunks(2) {
                    if Some(pair[0]) == obj_name.as_deref() {
                        continue;
                    }
                    let r = *row_index.get(pair[0]).ok_or_else(|| err(format!("unknown row {}", pair[0])))?;
                    m.rhs[r] = value(pair[1])?;
                }
            }
            Section::Bounds => {
                if f.len() < 3 {
                    return Err(err("expected `<type> <set> <col> [<value>]`".into()));
                }
                let c = *col_index.get(f[2]).ok_or_else(|| err(format!("unknown column {}", f[2])))?;
                let v = || f.get(3).ok_or_else(|| err("missing bound value".into())).and_then(|s| value(s));
                match f[0] {
                    "UP" => {
                        m.upper[c] = v()?;
                    }
                    "LO" => m.lower[c] = v()?,
                    "FX" => {
                        let x = v()?;
                        m.lower[c] = x;
                        m.upper[c] = x;
                    }
                    "MI" => m.lower[c] = f64::NEG_INFINITY,
                    "PL" => m.upper[c] = f64::INFINITY,
                    "BV" => {
                        m.lower[c] = 0.0;
                        m.upper[c] = 1.0;
                        m.integer[c] = true;
                    }
                    other => return Err(err(format!("unsupported bound type {other}"))),
                }
            }
            Section::None => return Err(err("data line outside a section".into())),
        }
    }
    m.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> MilpInstance {
        let mut m = MilpInstance::new();
        let x = m.add_column(VarKey::Generic(0), VarKind::Binary, 0.0, 1.0, -1.0).unwrap();
        let y = m.add_column(VarKey::Generic(1), VarKind::Continuous, 0.0, f64::INFINITY, 0.5).unwrap();
        let z = m.add_column(VarKey::Generic(2), VarKind::Continuous, -2.0, 2.0, 0.0).unwrap();
        m.add_row(RowKey::Generic(0), [(x, 1.0), (y, 1.0)], Sense::Le, 1.5).unwrap();
        m.add_row(RowKey::Generic(1), [(x, 0.0), (y, 1e-7)], Sense::Ge, 0.0).unwrap();
        m.add_row(RowKey::Generic(2), [(x, 0.1), (z, -3.0)], Sense::Eq, 0.3).unwrap();
        m
    }

    #[test]
    fn export_is_deterministic_and_sparse() {
        let a = write_standard_form(&toy(), "t");
        let b = write_standard_form(&toy(), "t");
        assert_eq!(a, b);
        assert!(!a.contains(" x0 c1 "), "zero coefficient written:\n{a}");
        assert!(a.contains(" x1 c1 1e-7"));
    }

    #[test]
    fn round_trip_reproduces_the_matrix() {
        let inst = toy();
        let parsed = parse_standard_form(&write_standard_form(&inst, "saev")).unwrap();
        assert_eq!(parsed, MpsModel::from_instance(&inst));
        let back = parsed.to_instance();
        assert_eq!(MpsModel::from_instance(&back), parsed);
    }

    #[test]
    fn column_without_entries_survives() {
        let mut m = MilpInstance::new();
        m.add_column(VarKey::Generic(0), VarKind::Continuous, 0.0, 1.0, 0.0).unwrap();
        let parsed = parse_standard_form(&write_standard_form(&m, "e")).unwrap();
        assert_eq!(parsed.col_names.len(), 1);
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let err = export_standard_form(&toy(), "/nonexistent-dir/x.mps").unwrap_err();
        assert!(matches!(err, MpsError::Write { .. }));
    }
}
