//! Entities, (multiset) relations and their instance counts.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// 1-based entity label, assigned in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn from_index(index: usize) -> Self {
        EntityId(index as u32 + 1)
    }

    /// 0-based position in [`Schema::entities`].
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityDecl {
    pub id: EntityId,
    pub name: String,
    pub count: usize,
}

/// Entity multiplicities of a relation: the map κ from entity to count.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Multiset(pub BTreeMap<EntityId, usize>);

impl Multiset {
    pub fn from_members(members: &[EntityId]) -> Self {
        let mut counts = BTreeMap::new();
        for &d in members {
            *counts.entry(d).or_insert(0) += 1;
        }
        Multiset(counts)
    }

    pub fn count(&self, d: EntityId) -> usize {
        self.0.get(&d).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total size, counting multiplicities.
    pub fn len(&self) -> usize {
        self.0.values().sum()
    }

    pub fn union(&self, other: &Multiset) -> Multiset {
        let mut out = self.0.clone();
        for (&d, &c) in &other.0 {
            *out.entry(d).or_insert(0) += c;
        }
        Multiset(out)
    }

    pub fn intersection(&self, other: &Multiset) -> Multiset {
        Multiset(
            self.0
                .iter()
                .filter_map(|(&d, &c)| {
                    let m = c.min(other.count(d));
                    (m > 0).then_some((d, m))
                })
                .collect(),
        )
    }
}

/// A relation: an ordered tuple of entity ids, repeats allowed.
///
/// Member order fixes the axis order of the relation's tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub name: String,
    pub members: Vec<EntityId>,
    /// Entity marked as the "one" side of a one-to-many relation.
    pub one: Option<EntityId>,
}

impl Relation {
    pub fn counts(&self) -> Multiset {
        Multiset::from_members(&self.members)
    }

    pub fn arity(&self) -> usize {
        self.members.len()
    }

    pub fn is_repeat_free(&self) -> bool {
        self.counts().0.values().all(|&c| c == 1)
    }

    /// Distinct member entities in ascending id order.
    pub fn distinct(&self) -> Vec<EntityId> {
        self.counts().0.keys().copied().collect()
    }

    /// Axis position of entity `d` in a repeat-free relation.
    pub fn axis_of(&self, d: EntityId) -> Option<usize> {
        self.members.iter().position(|&m| m == d)
    }
}

pub fn multiset_union(a: &Relation, b: &Relation) -> Multiset {
    a.counts().union(&b.counts())
}

pub fn multiset_intersection(a: &Relation, b: &Relation) -> Multiset {
    a.counts().intersection(&b.counts())
}

/// The static type of a relational database.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    entities: Vec<EntityDecl>,
    relations: Vec<Relation>,
}

impl Schema {
    /// Validates and builds a schema. Entity ids must be `1..=D` in order.
    pub fn new(entities: Vec<EntityDecl>, relations: Vec<Relation>) -> Result<Self> {
        for (k, e) in entities.iter().enumerate() {
            if e.id != EntityId::from_index(k) {
                return Err(Error::Schema(alloc::format!(
                    "entity `{}` has id {} but is declared at position {}",
                    e.name,
                    e.id,
                    k + 1
                )));
            }
            if e.count < 1 {
                return Err(Error::InvalidCount { name: e.name.clone(), count: e.count });
            }
            if entities[..k].iter().any(|o| o.name == e.name) {
                return Err(Error::DuplicateEntity(e.name.clone()));
            }
        }
        for r in &relations {
            if r.members.is_empty() {
                return Err(Error::EmptyRelation(r.name.clone()));
            }
            for &d in r.members.iter().chain(r.one.iter()) {
                if d.0 == 0 || d.index() >= entities.len() {
                    return Err(Error::UndeclaredEntity(d.to_string()));
                }
            }
            if let Some(d) = r.one {
                if !r.members.contains(&d) {
                    return Err(Error::Schema(alloc::format!(
                        "relation `{}` marks entity {} as one-sided but does not contain it",
                        r.name,
                        d
                    )));
                }
            }
        }
        Ok(Schema { entities, relations })
    }

    pub fn builder() -> SchemaBuilder {
        SchemaBuilder::default()
    }

    pub fn entities(&self) -> &[EntityDecl] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity(&self, d: EntityId) -> &EntityDecl {
        &self.entities[d.index()]
    }

    pub fn entity_by_name(&self, name: &str) -> Option<&EntityDecl> {
        self.entities.iter().find(|e| e.name == name)
    }

    pub fn relation(&self, i: usize) -> Result<&Relation> {
        self.relations.get(i).ok_or(Error::RelationIndex(i))
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn count(&self, d: EntityId) -> usize {
        self.entities[d.index()].count
    }

    /// Tensor shape of relation `i`: one axis per member, in member order.
    pub fn shape(&self, i: usize) -> Result<Vec<usize>> {
        Ok(self.relation(i)?.members.iter().map(|&d| self.count(d)).collect())
    }

    /// Number of tensor elements of relation `i`, counting repeated members.
    pub fn relation_size(&self, i: usize) -> Result<usize> {
        Ok(self.relation(i)?.members.iter().map(|&d| self.count(d)).product())
    }

    /// Length of the vectorized database.
    pub fn total_size(&self) -> usize {
        (0..self.relations.len()).map(|i| self.relation_size(i).unwrap()).sum()
    }

    /// Start offset of every relation segment in the vectorized database.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        (0..self.relations.len())
            .map(|i| {
                let o = acc;
                acc += self.relation_size(i).unwrap();
                o
            })
            .collect()
    }

    pub fn is_repeat_free(&self) -> bool {
        self.relations.iter().all(Relation::is_repeat_free)
    }

    /// Same structure with different instance counts.
    pub fn with_counts(&self, counts: &[usize]) -> Result<Schema> {
        if counts.len() != self.entities.len() {
            return Err(Error::Shape(alloc::format!(
                "expected {} entity counts, got {}",
                self.entities.len(),
                counts.len()
            )));
        }
        let entities = self
            .entities
            .iter()
            .zip(counts)
            .map(|(e, &count)| EntityDecl { count, ..e.clone() })
            .collect();
        Schema::new(entities, self.relations.clone())
    }

    /// Whether two schemas share entities and relations, ignoring instance counts.
    pub fn same_structure(&self, other: &Schema) -> bool {
        self.relations == other.relations
            && self.entities.len() == other.entities.len()
            && self.entities.iter().zip(&other.entities).all(|(a, b)| a.name == b.name)
    }
}

/// Builds a [`Schema`] by entity name.
#[derive(Debug, Default, Clone)]
pub struct SchemaBuilder {
    entities: Vec<(String, usize)>,
    relations: Vec<(String, Vec<String>, Option<String>)>,
}

impl SchemaBuilder {
    pub fn entity(mut self, name: &str, count: usize) -> Self {
        self.entities.push((name.to_string(), count));
        self
    }

    pub fn relation(mut self, name: &str, members: &[&str]) -> Self {
        self.relations
            .push((name.to_string(), members.iter().map(|m| m.to_string()).collect(), None));
        self
    }

    /// Relation with a one-to-many annotation on `one`.
    pub fn relation_one(mut self, name: &str, members: &[&str], one: &str) -> Self {
        self.relations.push((
            name.to_string(),
            members.iter().map(|m| m.to_string()).collect(),
            Some(one.to_string()),
        ));
        self
    }

    pub fn build(self) -> Result<Schema> {
        let entities: Vec<EntityDecl> = self
            .entities
            .iter()
            .enumerate()
            .map(|(k, (name, count))| EntityDecl {
                id: EntityId::from_index(k),
                name: name.clone(),
                count: *count,
            })
            .collect();
        let lookup = |name: &str| -> Result<EntityId> {
            entities
                .iter()
                .find(|e| e.name == name)
                .map(|e| e.id)
                .ok_or_else(|| Error::UndeclaredEntity(name.to_string()))
        };
        let mut relations = Vec::with_capacity(self.relations.len());
        for (name, members, one) in &self.relations {
            let members = members.iter().map(|m| lookup(m)).collect::<Result<Vec<_>>>()?;
            let one = one.as_deref().map(lookup).transpose()?;
            relations.push(Relation { name: name.clone(), members, one });
        }
        Schema::new(entities, relations)
    }
}
