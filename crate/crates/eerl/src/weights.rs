//! Text weight files and model checkpoints.
//!
//! ```text
//! eerl-weights 1
//! schema <sha256 of the schema structure>
//! channels <k_in> <k_out>
//! merge <i> <j> <keep> <alias>
//! block <i> <j> <class_count>
//! <k_in·k_out values per class, one class per line>
//! bias <i> <class_count>
//! <k_out values per class>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use eerl_core::layer::{Activation, PoolMode};
use eerl_core::model::{AutoEncoder, AutoEncoderConfig};
use eerl_core::tying::Merge;
use eerl_core::{Schema, TiedWeights};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::structure_hash;

const MAGIC: &str = "eerl-weights 1";

fn write_rows(out: &mut String, values: &[f64], width: usize) {
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

pub fn write_weights(w: &TiedWeights, schema: &Schema) -> String {
    let r = w.num_relations();
    let mut out = format!("{MAGIC}\nschema {}\nchannels {} {}\n", structure_hash(schema), w.k_in(), w.k_out());
    for m in w.merges() {
        writeln!(out, "merge {} {} {} {}", m.block / r + 1, m.block % r + 1, m.keep + 1, m.alias + 1).unwrap();
    }
    for i in 0..r {
        for j in 0..r {
            writeln!(out, "block {} {} {}", i + 1, j + 1, w.block_classes(i, j)).unwrap();
            write_rows(&mut out, w.block(i, j), w.k_in() * w.k_out());
        }
    }
    for i in 0..r {
        writeln!(out, "bias {} {}", i + 1, w.bias_classes(i)).unwrap();
        write_rows(&mut out, w.bias(i), w.k_out());
    }
    out
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_words(&mut self) -> Result<Option<Vec<&'a str>>> {
        for (k, l) in self.iter.by_ref() {
            self.line = k + 1;
            let words: Vec<&str> = l.split_whitespace().collect();
            if !words.is_empty() {
                return Ok(Some(words));
            }
        }
        Ok(None)
    }

    fn expect(&mut self) -> Result<Vec<&'a str>> {
        self.next_words()?.ok_or_else(|| Error::parse(self.line + 1, "unexpected end of file"))
    }

    fn numbers<T: std::str::FromStr>(&self, words: &[&str]) -> Result<Vec<T>> {
        words.iter().map(|w| w.parse().map_err(|_| Error::parse(self.line, format!("invalid number `{w}`")))).collect()
    }

    fn values(&mut self, rows: usize, width: usize, dst: &mut [f64]) -> Result<()> {
        for row in 0..rows {
            let words = self.expect()?;
            if words.len() != width {
                return Err(Error::parse(self.line, format!("expected {width} values, found {}", words.len())));
            }
            let v: Vec<f64> = self.numbers(&words)?;
            dst[row * width..(row + 1) * width].copy_from_slice(&v);
        }
        Ok(())
    }
}

/// Parses a weight file written for `schema`'s structure.
pub fn parse_weights(text: &str, schema: &Schema) -> Result<TiedWeights> {
    let mut lines = Lines { iter: text.lines().enumerate(), line: 0 };
    if lines.expect()?.join(" ") != MAGIC {
        return Err(Error::parse(lines.line, format!("expected `{MAGIC}`")));
    }
    match lines.expect()?.as_slice() {
        ["schema", h] if *h == structure_hash(schema) => {}
        ["schema", _] => return Err(Error::parse(lines.line, "weights were written for a different schema")),
        _ => return Err(Error::parse(lines.line, "expected `schema <hash>`")),
    }
    let words = lines.expect()?;
    let [k_in, k_out] = match words.as_slice() {
        ["channels", rest @ ..] if rest.len() == 2 => <[usize; 2]>::try_from(lines.numbers(rest)?).unwrap(),
        _ => return Err(Error::parse(lines.line, "expected `channels <k_in> <k_out>`")),
    };
    let mut w = TiedWeights::zeros(schema, k_in, k_out)?;
    let r = schema.num_relations();
    let mut merges = Vec::new();
    let mut words = lines.expect()?;
    while words[0] == "merge" {
        let n: Vec<usize> = lines.numbers(&words[1..])?;
        if n.len() != 4 || n.contains(&0) || n[0] > r || n[1] > r {
            return Err(Error::parse(lines.line, "expected `merge <i> <j> <keep> <alias>`"));
        }
        merges.push(Merge { block: (n[0] - 1) * r + n[1] - 1, keep: n[2] - 1, alias: n[3] - 1 });
        words = lines.expect()?;
    }
    if !merges.is_empty() {
        w.apply_one_to_many(schema)?;
        if w.merges() != merges.as_slice() {
            return Err(Error::Format("merges do not match the schema's one-to-many annotations".into()));
        }
    }
    for i in 0..r {
        for j in 0..r {
            if i + j > 0 {
                words = lines.expect()?;
            }
            let want = w.block_classes(i, j);
            let ok = words.len() == 4 && words[0] == "block" && lines.numbers::<usize>(&words[1..])? == [i + 1, j + 1, want];
            if !ok {
                return Err(Error::parse(lines.line, format!("expected `block {} {} {want}`", i + 1, j + 1)));
            }
            lines.values(want, k_in * k_out, w.block_mut(i, j))?;
        }
    }
    for i in 0..r {
        words = lines.expect()?;
        let want = w.bias_classes(i);
        let ok = words.len() == 3 && words[0] == "bias" && lines.numbers::<usize>(&words[1..])? == [i + 1, want];
        if !ok {
            return Err(Error::parse(lines.line, format!("expected `bias {} {want}`", i + 1)));
        }
        lines.values(want, k_out, w.bias_mut(i))?;
    }
    if lines.next_words()?.is_some() {
        return Err(Error::parse(lines.line, "trailing content"));
    }
    Ok(w)
}

/// Serializable mirror of [`AutoEncoderConfig`] plus model metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_hash: String,
    pub target: usize,
    pub max_arity: usize,
    pub encoder_widths: Vec<usize>,
    pub h_code: usize,
    pub decoder_widths: Vec<usize>,
    /// Leaky ReLU slope; 0 selects the identity.
    pub leak: f64,
    pub pool: String,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hide: f64,
}

pub fn pool_name(mode: PoolMode) -> &'static str {
    match mode {
        PoolMode::Sum => "sum",
        PoolMode::Mean => "mean",
    }
}

pub fn parse_pool(name: &str) -> Result<PoolMode> {
    match name {
        "sum" => Ok(PoolMode::Sum),
        "mean" => Ok(PoolMode::Mean),
        _ => Err(Error::Format(format!("unknown pooling mode `{name}`"))),
    }
}

impl CheckpointHeader {
    pub fn new(model: &AutoEncoder, schema: &Schema) -> Self {
        let c = &model.config;
        CheckpointHeader {
            schema_hash: structure_hash(schema),
            target: model.target,
            max_arity: model.max_arity,
            encoder_widths: c.encoder_widths.clone(),
            h_code: c.h_code,
            decoder_widths: c.decoder_widths.clone(),
            leak: match c.activation {
                Activation::Identity => 0.0,
                Activation::LeakyRelu(a) => a,
            },
            pool: pool_name(c.pool).into(),
            lr: c.lr,
            epochs: c.epochs,
            seed: c.seed,
            hide: c.hide,
        }
    }

    pub fn config(&self) -> Result<AutoEncoderConfig> {
        Ok(AutoEncoderConfig {
            encoder_widths: self.encoder_widths.clone(),
            h_code: self.h_code,
            decoder_widths: self.decoder_widths.clone(),
            activation: if self.leak == 0.0 { Activation::Identity } else { Activation::LeakyRelu(self.leak) },
            pool: parse_pool(&self.pool)?,
            lr: self.lr,
            epochs: self.epochs,
            seed: self.seed,
            hide: self.hide,
        })
    }
}

/// Writes `config.json` and one weight file per layer into `dir`.
pub fn save_model(dir: &Path, model: &AutoEncoder, schema: &Schema) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let header = serde_json::to_string_pretty(&CheckpointHeader::new(model, schema))?;
    let path = dir.join("config.json");
    fs::write(&path, header).map_err(Error::io(&path))?;
    for (prefix, layers) in [("enc", &model.encoder), ("dec", &model.decoder)] {
        for (l, w) in layers.iter().enumerate() {
            let path = dir.join(format!("{prefix}-{l}.weights"));
            fs::write(&path, write_weights(w, schema)).map_err(Error::io(&path))?;
        }
    }
    Ok(())
}

/// Loads a checkpoint for any instantiation of the schema it was trained on.
pub fn load_model(dir: &Path, schema: &Schema) -> Result<AutoEncoder> {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let header: CheckpointHeader = serde_json::from_str(&text)?;
    if header.schema_hash != structure_hash(schema) {
        return Err(Error::Format("checkpoint was trained on a different schema".into()));
    }
    let config = header.config()?;
    let load = |prefix: &str, count: usize| -> Result<Vec<TiedWeights>> {
        (0..count)
            .map(|l| {
                let path = dir.join(format!("{prefix}-{l}.weights"));
                parse_weights(&fs::read_to_string(&path).map_err(Error::io(&path))?, schema)
            })
            .collect()
    };
    let encoder = load("enc", config.encoder_widths.len() + 1)?;
    let decoder = load("dec", config.decoder_widths.len() + 1)?;
    Ok(AutoEncoder { config, target: header.target, max_arity: header.max_arity, encoder, decoder })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_schema;

    fn schema() -> Schema {
        parse_schema("entity s 3\nentity c 2\nentity p 2\nrelation takes s c\nrelation pre c c\nrelation t p c one c\n")
            .unwrap()
    }

    fn filled(schema: &Schema, k_in: usize, k_out: usize) -> TiedWeights {
        let mut w = TiedWeights::zeros(schema, k_in, k_out).unwrap();
        w.apply_one_to_many(schema).unwrap();
        for (k, v) in w.values_mut().iter_mut().enumerate() {
            *v = (k as f64 * 0.37).sin();
        }
        w
    }

    #[test]
    fn weights_round_trip() {
        let s = schema();
        let w = filled(&s, 2, 3);
        let text = write_weights(&w, &s);
        assert!(text.contains("block 1 2 5\n"), "{text}");
        assert!(text.contains("merge 3 3 "));
        assert_eq!(parse_weights(&text, &s).unwrap(), w);
        let other = s.with_counts(&[9, 9, 9]).unwrap();
        assert_eq!(parse_weights(&text, &other).unwrap().values(), w.values());
    }

    #[test]
    fn weights_reject_mismatch() {
        let s = schema();
        let text = write_weights(&filled(&s, 1, 1), &s);
        let other = parse_schema("entity s 3\nentity c 2\nrelation takes s c\n").unwrap();
        assert!(parse_weights(&text, &other).unwrap_err().to_string().contains("different schema"));
        assert!(parse_weights(&text.replace("block 1 2 5", "block 1 2 4"), &s).is_err());
        assert!(parse_weights(&format!("{text}1\n"), &s).is_err());
        let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(parse_weights(&cut, &s).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = parse_schema("entity a 4\nentity b 3\nrelation r a b\nrelation q b\n").unwrap();
        let config = AutoEncoderConfig { encoder_widths: vec![3], decoder_widths: vec![2], h_code: 2, ..Default::default() };
        let model = AutoEncoder::new(&s, config, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model, &s).unwrap();
        assert_eq!(load_model(dir.path(), &s).unwrap(), model);
    }
}
