//! Dataset directories.
//!
//! ```text
//! schema.txt           schema description
//! meta.json            target relation
//! observed/<rel>.csv   observed entries of every relation
//! truth/<rel>.csv      complete ground truth (optional)
//! test-<rel>.csv       positions of the target scored at test time (optional)
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use eerl_core::{DenseInstance, DenseTensor, Mask, Schema};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tables::{read_mask, read_relation, write_mask, write_relation};
use crate::text::{parse_schema, render_schema};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub target: usize,
    /// Observed data; unobserved entries are zero.
    pub observed: DenseInstance,
    pub truth: Option<DenseInstance>,
    pub test: Option<Mask>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    target: String,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::io(path))?))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(Error::io(path))
}

pub fn read_schema_file(path: &Path) -> Result<Schema> {
    parse_schema(&fs::read_to_string(path).map_err(Error::io(path))?)
}

fn read_instance(dir: &Path, schema: &Schema) -> Result<DenseInstance> {
    let mut x = DenseInstance::zeros(schema, 1);
    for (i, rel) in schema.relations().iter().enumerate() {
        let t = read_relation(open(&dir.join(format!("{}.csv", rel.name)))?, schema, i)?;
        if t.channels != 1 {
            return Err(Error::Format(format!("relation `{}` must have one channel", rel.name)));
        }
        x.masks[i] = t.mask();
        x.tensors[i] = t.to_dense();
    }
    Ok(x)
}

fn write_instance(dir: &Path, schema: &Schema, x: &DenseInstance) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (i, rel) in schema.relations().iter().enumerate() {
        write_relation(create(&dir.join(format!("{}.csv", rel.name)))?, schema, i, &x.tensors[i], &x.masks[i])?;
    }
    Ok(())
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join("schema.txt");
        fs::write(&path, render_schema(&self.schema)).map_err(Error::io(&path))?;
        let meta = Meta { target: self.schema.relation(self.target)?.name.clone() };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(Error::io(&path))?;
        write_instance(&dir.join("observed"), &self.schema, &self.observed)?;
        if let Some(truth) = &self.truth {
            write_instance(&dir.join("truth"), &self.schema, truth)?;
        }
        if let Some(test) = &self.test {
            let name = &self.schema.relation(self.target)?.name;
            write_mask(create(&dir.join(format!("test-{name}.csv")))?, &self.schema, self.target, test)?;
        }
        Ok(())
    }

    /// Loads `dir`; `target` overrides the relation named in `meta.json`.
    pub fn load(dir: &Path, target: Option<&str>) -> Result<Self> {
        let schema = read_schema_file(&dir.join("schema.txt"))?;
        let meta_path = dir.join("meta.json");
        let name = match target {
            Some(t) => t.to_string(),
            None if meta_path.exists() => {
                serde_json::from_str::<Meta>(&fs::read_to_string(&meta_path).map_err(Error::io(&meta_path))?)?.target
            }
            None => schema.relations()[0].name.clone(),
        };
        let target = schema
            .relation_index(&name)
            .ok_or_else(|| Error::Format(format!("unknown target relation `{name}`")))?;
        let observed = read_instance(&dir.join("observed"), &schema)?;
        let truth = if dir.join("truth").is_dir() { Some(read_instance(&dir.join("truth"), &schema)?) } else { None };
        let test_path = dir.join(format!("test-{name}.csv"));
        let test = if test_path.exists() {
            Some(read_mask(open(&test_path)?, &schema, target)?)
        } else {
            None
        };
        Ok(Dataset { schema, target, observed, truth, test })
    }

    /// Ground truth of the target, falling back to the observed values.
    pub fn target_truth(&self) -> &DenseTensor {
        &self.truth.as_ref().unwrap_or(&self.observed).tensors[self.target]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use eerl_core::synth::{generate, observe, sparsify, SynthConfig};

    #[test]
    fn dataset_round_trip() {
        let cfg = SynthConfig { counts: [6, 5, 4], sparsity: [0.5; 3], min_per_line: 1, ..Default::default() };
        let (schema, truth, _) = generate(&cfg).unwrap();
        let split = sparsify(&schema, &cfg).unwrap();
        let data = Dataset {
            observed: observe(&truth, &split.train),
            schema,
            target: 0,
            truth: Some(truth),
            test: Some(split.test),
        };
        let dir = tempfile::tempdir().unwrap();
        data.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path(), None).unwrap();
        assert_eq!(back, data);
        let other = Dataset::load(dir.path(), Some("r13")).unwrap();
        assert_eq!((other.target, other.test), (1, None));
        assert!(Dataset::load(dir.path(), Some("nope")).is_err());
    }
}
