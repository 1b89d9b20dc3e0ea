//! Parameter-tying pattern dumps as plain PGM images.

use std::fmt::Write as _;

use eerl_core::oracle::{class_pattern, ClassPattern};
use eerl_core::Schema;

use crate::error::{Error, Result};

/// Grey levels of a plain (`P2`) PGM image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: usize,
    pub pixels: Vec<usize>,
}

/// Plain PGM with one grey level per class ordinal; lines stay within 70 characters.
pub fn render_pgm(p: &ClassPattern) -> String {
    let maxval = p.total_classes().max(1);
    let mut out = format!("P2\n# class ordinals\n{} {}\n{maxval}\n", p.size, p.size);
    for row in p.ids.chunks(p.size.max(1)) {
        let mut line = String::new();
        for v in row {
            let word = v.to_string();
            if !line.is_empty() && line.len() + 1 + word.len() > 70 {
                out.push_str(&line);
                out.push('\n');
                line.clear();
            }
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(&word);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn parse_pgm(text: &str) -> Result<Pgm> {
    let mut tokens = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(|t| (k + 1, t)));
    }
    let mut it = tokens.into_iter();
    match it.next() {
        Some((_, "P2")) => {}
        other => return Err(Error::parse(other.map_or(1, |t| t.0), "expected `P2`")),
    }
    let mut num = |what: &str| -> Result<usize> {
        let (line, t) = it.next().ok_or_else(|| Error::Format(format!("missing {what}")))?;
        t.parse().map_err(|_| Error::parse(line, format!("invalid {what} `{t}`")))
    };
    let (width, height, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("maxval {maxval} outside 1..=65535")));
    }
    let pixels = (0..width * height)
        .map(|_| {
            let v = num("pixel")?;
            if v > maxval {
                return Err(Error::Format(format!("pixel {v} exceeds maxval {maxval}")));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    if num("pixel").is_ok() {
        return Err(Error::Format("more pixels than width x height".into()));
    }
    Ok(Pgm { width, height, maxval, pixels })
}

/// Distinct grey levels inside every block `(i, j)` of the image, row-major.
pub fn block_distinct_counts(pgm: &Pgm, schema: &Schema) -> Result<Vec<usize>> {
    let n = schema.total_size();
    if pgm.width != n || pgm.height != n {
        return Err(Error::Format(format!("image is {}x{}, schema needs {n}x{n}", pgm.width, pgm.height)));
    }
    let offsets = schema.offsets();
    let r = schema.num_relations();
    let mut counts = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            let mut seen = std::collections::BTreeSet::new();
            for row in offsets[i]..offsets[i] + schema.relation_size(i)? {
                for col in offsets[j]..offsets[j] + schema.relation_size(j)? {
                    seen.insert(pgm.pixels[row * n + col]);
                }
            }
            counts.push(seen.len());
        }
    }
    Ok(counts)
}

/// Text report with one line per block.
pub fn report(schema: &Schema, counts: &[usize]) -> String {
    let r = schema.num_relations();
    let mut out = String::new();
    for i in 0..r {
        for j in 0..r {
            let (a, b) = (&schema.relations()[i].name, &schema.relations()[j].name);
            writeln!(out, "block {} {} ({a}, {b}): {} distinct values", i + 1, j + 1, counts[i * r + j]).unwrap();
        }
    }
    writeln!(out, "total: {}", counts.iter().sum::<usize>()).unwrap();
    out
}

/// PGM text and per-block distinct counts of `schema`'s tying pattern.
pub fn pattern(schema: &Schema) -> Result<(String, Vec<usize>)> {
    let p = class_pattern(schema)?;
    let pgm = render_pgm(&p);
    let counts = block_distinct_counts(&parse_pgm(&pgm)?, schema)?;
    Ok((pgm, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_schema;

    #[test]
    fn single_set_has_two_values() {
        let s = parse_schema("entity a 4\nrelation r a\n").unwrap();
        let (pgm, counts) = pattern(&s).unwrap();
        let img = parse_pgm(&pgm).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (4, 4, 2));
        assert_eq!(counts, vec![2]);
        // diagonal and off-diagonal differ
        assert_ne!(img.pixels[0], img.pixels[1]);
        assert_eq!(img.pixels[0], img.pixels[5]);
    }

    #[test]
    fn lines_are_short() {
        let s = parse_schema("entity a 10\nrelation r a a\n").unwrap();
        let (pgm, _) = pattern(&s).unwrap();
        assert!(pgm.lines().all(|l| l.len() <= 70));
        assert_eq!(parse_pgm(&pgm).unwrap().pixels.len(), 100 * 100);
    }

    #[test]
    fn malformed_images() {
        assert!(parse_pgm("P5\n1 1\n1\n0\n").is_err());
        assert!(parse_pgm("P2\n2 1\n1\n0\n").is_err());
        assert!(parse_pgm("P2\n1 1\n1\n2\n").is_err());
        assert!(parse_pgm("P2\n1 1\n1\n0 0\n").is_err());
        assert_eq!(parse_pgm("P2 # c\n1 1\n3\n3\n").unwrap().pixels, vec![3]);
    }
}
