//! Schema description files.
//!
//! ```text
//! # students, courses and professors
//! entity student 5
//! entity course 4
//! entity prof 3
//! relation takes student course
//! relation prereq course course
//! relation teaches prof course one course
//! ```

use std::fmt::Write as _;

use eerl_core::schema::{EntityDecl, EntityId, Relation};
use eerl_core::Schema;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn name(word: &str, line: usize) -> Result<String> {
    if is_name(word) {
        Ok(word.to_string())
    } else {
        Err(Error::parse(line, format!("invalid name `{word}`")))
    }
}

pub fn parse_schema(text: &str) -> Result<Schema> {
    let mut entities: Vec<EntityDecl> = Vec::new();
    let mut relations: Vec<Relation> = Vec::new();
    let lookup = |entities: &[EntityDecl], word: &str, line: usize| -> Result<EntityId> {
        entities
            .iter()
            .find(|e| e.name == word)
            .map(|e| e.id)
            .ok_or_else(|| Error::parse(line, format!("undeclared entity `{word}`")))
    };
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("");
        let words: Vec<&str> = content.split_whitespace().collect();
        match words.as_slice() {
            [] => {}
            ["entity", n, count] => {
                let n = name(n, line)?;
                if entities.iter().any(|e| e.name == n) {
                    return Err(Error::parse(line, format!("duplicate entity `{n}`")));
                }
                let count: usize =
                    count.parse().map_err(|_| Error::parse(line, format!("invalid count `{count}`")))?;
                if count < 1 {
                    return Err(Error::parse(line, format!("entity `{n}` has count 0; counts must be at least 1")));
                }
                entities.push(EntityDecl { id: EntityId::from_index(entities.len()), name: n, count });
            }
            ["entity", ..] => return Err(Error::parse(line, "expected `entity <name> <count>`")),
            ["relation", n, rest @ ..] => {
                let n = name(n, line)?;
                let (members, one) = match rest {
                    [m @ .., "one", d] => (m, Some(lookup(&entities, d, line)?)),
                    m => (m, None),
                };
                if members.is_empty() {
                    return Err(Error::parse(line, format!("relation `{n}` has no members")));
                }
                let members = members.iter().map(|m| lookup(&entities, m, line)).collect::<Result<Vec<_>>>()?;
                if one.is_some_and(|d| !members.contains(&d)) {
                    return Err(Error::parse(line, "`one` marker names an entity outside the relation"));
                }
                relations.push(Relation { name: n, members, one });
            }
            [word, ..] => return Err(Error::parse(line, format!("unknown statement `{word}`"))),
        }
    }
    Ok(Schema::new(entities, relations)?)
}

pub fn render_schema(schema: &Schema) -> String {
    render(schema, true)
}

fn render(schema: &Schema, counts: bool) -> String {
    let mut out = String::new();
    for e in schema.entities() {
        if counts {
            writeln!(out, "entity {} {}", e.name, e.count).unwrap();
        } else {
            writeln!(out, "entity {}", e.name).unwrap();
        }
    }
    for r in schema.relations() {
        write!(out, "relation {}", r.name).unwrap();
        for m in &r.members {
            write!(out, " {}", schema.entity(*m).name).unwrap();
        }
        if let Some(d) = r.one {
            write!(out, " one {}", schema.entity(d).name).unwrap();
        }
        out.push('\n');
    }
    out
}

/// SHA-256 of the schema's entities and relations, ignoring instance counts,
/// so that weights trained on one instantiation load on another.
pub fn structure_hash(schema: &Schema) -> String {
    let digest = Sha256::digest(render(schema, false).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
