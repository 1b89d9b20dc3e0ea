//! CSV tables and flat vector dumps. Indices are 1-based in every file.

use std::io::{BufRead, Read, Write};

use eerl_core::model::EntityCodes;
use eerl_core::relstore::{ravel, unravel, DenseVec, Segment};
use eerl_core::{DenseTensor, Mask, Schema, SparseRelTensor};

use crate::error::{Error, Result};

fn channel_names(k: usize) -> Vec<String> {
    if k == 1 {
        vec!["value".into()]
    } else {
        (1..=k).map(|c| format!("c{c}")).collect()
    }
}

fn member_names(schema: &Schema, i: usize) -> Result<Vec<String>> {
    Ok(schema.relation(i)?.members.iter().map(|d| schema.entity(*d).name.clone()).collect())
}

fn parse_index(field: &str, size: usize, row: usize) -> Result<usize> {
    match field.trim().parse::<usize>() {
        Ok(n) if (1..=size).contains(&n) => Ok(n - 1),
        _ => Err(Error::parse(row, format!("index `{field}` outside 1..={size}"))),
    }
}

fn parse_value(field: &str, row: usize) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::parse(row, format!("invalid number `{field}`")))
}

/// Writes the entries of relation `i` selected by `mask`, in offset order.
pub fn write_relation<W: Write>(out: W, schema: &Schema, i: usize, t: &DenseTensor, mask: &Mask) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = member_names(schema, i)?;
    header.extend(channel_names(t.channels));
    w.write_record(&header)?;
    for p in mask.offsets() {
        let mut rec: Vec<String> = unravel(&t.shape, p).iter().map(|n| (n + 1).to_string()).collect();
        rec.extend(t.data[p * t.channels..(p + 1) * t.channels].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(Error::io("<csv>"))?;
    Ok(())
}

/// Reads a relation table; the header must name the relation's members in order.
pub fn read_relation<R: Read>(input: R, schema: &Schema, i: usize) -> Result<SparseRelTensor> {
    let shape = schema.shape(i)?;
    let arity = shape.len();
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let members = member_names(schema, i)?;
    if header.len() <= arity || header[..arity] != members[..] {
        return Err(Error::parse(1, format!("header must start with {} and name at least one channel", members.join(","))));
    }
    let channels = header.len() - arity;
    let mut entries = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let index = (0..arity).map(|a| parse_index(&rec[a], shape[a], row)).collect::<Result<Vec<_>>>()?;
        let values = (arity..header.len()).map(|c| parse_value(&rec[c], row)).collect::<Result<Vec<_>>>()?;
        entries.push((index, values));
    }
    Ok(SparseRelTensor::from_entries(i, shape, channels, entries)?)
}

/// Writes the positions of `mask` as index tuples of relation `i`.
pub fn write_mask<W: Write>(out: W, schema: &Schema, i: usize, mask: &Mask) -> Result<()> {
    let shape = schema.shape(i)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(member_names(schema, i)?)?;
    for p in mask.offsets() {
        w.write_record(unravel(&shape, p).iter().map(|n| (n + 1).to_string()))?;
    }
    w.flush().map_err(Error::io("<csv>"))?;
    Ok(())
}

pub fn read_mask<R: Read>(input: R, schema: &Schema, i: usize) -> Result<Mask> {
    let shape = schema.shape(i)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    if r.headers()?.iter().ne(member_names(schema, i)?.iter().map(String::as_str)) {
        return Err(Error::parse(1, "mask header must list the relation's members"));
    }
    let mut mask = Mask::empty(shape.iter().product());
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let index = (0..shape.len()).map(|a| parse_index(&rec[a], shape[a], k + 2)).collect::<Result<Vec<_>>>()?;
        mask.set(ravel(&shape, &index), true);
    }
    Ok(mask)
}

/// Flat dump, one value per line, every relation preceded by
/// `# relation <name> offset <o> len <l>`.
pub fn write_dense_vec<W: Write>(mut out: W, schema: &Schema, v: &DenseVec) -> Result<()> {
    let err = Error::io("<dense vector>");
    let mut text = String::new();
    for seg in &v.segments {
        text.push_str(&format!("# relation {} offset {} len {}\n", schema.relation(seg.relation)?.name, seg.offset, seg.len));
        for x in &v.values[seg.offset..seg.offset + seg.len] {
            text.push_str(&format!("{x}\n"));
        }
    }
    out.write_all(text.as_bytes()).map_err(err)
}

pub fn read_dense_vec<R: BufRead>(input: R, schema: &Schema) -> Result<DenseVec> {
    let mut values = Vec::new();
    let mut segments: Vec<Segment> = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line.map_err(Error::io("<dense vector>"))?;
        let row = k + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let words: Vec<&str> = rest.split_whitespace().collect();
            let ["relation", name, "offset", o, "len", l] = words.as_slice() else {
                return Err(Error::parse(row, "expected `# relation <name> offset <o> len <l>`"));
            };
            let relation = schema
                .relation_index(name)
                .ok_or_else(|| Error::parse(row, format!("unknown relation `{name}`")))?;
            let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(row, format!("invalid number `{s}`")));
            let (offset, len) = (num(o)?, num(l)?);
            if offset != values.len() {
                return Err(Error::parse(row, format!("segment offset {offset} does not follow {} values", values.len())));
            }
            segments.push(Segment { relation, offset, len });
        } else if !line.trim().is_empty() {
            values.push(parse_value(&line, row)?);
        }
    }
    let positions = schema.total_size();
    if positions == 0 || values.len() % positions != 0 {
        return Err(Error::Format(format!("{} values do not fill {positions} positions", values.len())));
    }
    let channels = values.len() / positions;
    for (seg, rel) in segments.iter().zip(0..) {
        if seg.relation != rel || seg.len != schema.relation_size(rel)? * channels {
            return Err(Error::Format(format!("segment for relation {} does not match the schema", rel + 1)));
        }
    }
    if segments.len() != schema.num_relations() {
        return Err(Error::Format("one segment per relation is required".into()));
    }
    Ok(DenseVec { values, channels, segments })
}

/// Codes table `entity,instance,c1..ch`.
pub fn write_codes<W: Write>(out: W, schema: &Schema, codes: &EntityCodes) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["entity".to_string(), "instance".to_string()];
    header.extend((1..=codes.h).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for (d, e) in schema.entities().iter().enumerate() {
        for n in 0..codes.rows(d) {
            let mut rec = vec![e.name.clone(), (n + 1).to_string()];
            rec.extend(codes.row(d, n).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(Error::io("<csv>"))?;
    Ok(())
}

pub fn read_codes<R: Read>(input: R, schema: &Schema) -> Result<EntityCodes> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let h = r.headers()?.len().saturating_sub(2);
    if h == 0 {
        return Err(Error::parse(1, "codes header must be `entity,instance,c1..ch`"));
    }
    let mut codes: Vec<Vec<f64>> = schema.entities().iter().map(|e| vec![0.0; e.count * h]).collect();
    let mut seen: Vec<Vec<bool>> = schema.entities().iter().map(|e| vec![false; e.count]).collect();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let e = schema.entity_by_name(&rec[0]).ok_or_else(|| Error::parse(row, format!("unknown entity `{}`", &rec[0])))?;
        let (d, n) = (e.id.index(), parse_index(&rec[1], e.count, row)?);
        for c in 0..h {
            codes[d][n * h + c] = parse_value(&rec[2 + c], row)?;
        }
        seen[d][n] = true;
    }
    if seen.iter().flatten().any(|s| !s) {
        return Err(Error::Format("codes table misses some entity instances".into()));
    }
    Ok(EntityCodes { h, codes })
}

/// Row-major matrix as `row,c1..c<cols>`.
pub fn write_matrix<W: Write>(out: W, cols: usize, data: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row".to_string()];
    header.extend((1..=cols).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for (r, chunk) in data.chunks(cols).enumerate() {
        let mut rec = vec![(r + 1).to_string()];
        rec.extend(chunk.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(Error::io("<csv>"))?;
    Ok(())
}

/// Inverse of [`write_matrix`]; returns `(rows, cols, data)`.
pub fn read_matrix<R: Read>(input: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let cols = r.headers()?.len().saturating_sub(1);
    let mut data = Vec::new();
    let mut rows = 0;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if parse_index(&rec[0], usize::MAX, k + 2)? != k {
            return Err(Error::parse(k + 2, "rows must be numbered 1, 2, ..."));
        }
        for c in 0..cols {
            data.push(parse_value(&rec[c + 1], k + 2)?);
        }
        rows += 1;
    }
    Ok((rows, cols, data))
}
